//! Legacy ASCII VTK (version 3.0) unstructured grids.
//!
//! Floats are written in Rust's shortest round-trip form, so writing the
//! same data twice gives identical bytes and reading it back is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

pub const VTK_TRIANGLE: u8 = 5;
pub const VTK_TETRA: u8 = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Attribute {
    Scalars(Vec<f64>),
    Ints(Vec<i32>),
    Vectors(Vec<Vec3>),
}

impl Attribute {
    pub fn len(&self) -> usize {
        match self {
            Attribute::Scalars(v) => v.len(),
            Attribute::Ints(v) => v.len(),
            Attribute::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnstructuredGrid {
    pub title: String,
    pub points: Vec<Vec3>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u8>,
    pub point_data: Vec<(String, Attribute)>,
    pub cell_data: Vec<(String, Attribute)>,
}

impl UnstructuredGrid {
    pub fn tetrahedra(title: &str, points: &[Vec3], tets: &[[usize; 4]]) -> Self {
        UnstructuredGrid {
            title: title.to_string(),
            points: points.to_vec(),
            cells: tets.iter().map(|t| t.to_vec()).collect(),
            cell_types: vec![VTK_TETRA; tets.len()],
            point_data: Vec::new(),
            cell_data: Vec::new(),
        }
    }

    pub fn point_attribute(&self, name: &str) -> Option<&Attribute> {
        self.point_data.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn cell_attribute(&self, name: &str) -> Option<&Attribute> {
        self.cell_data.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn to_vtk_string(&self) -> String {
        let mut s = String::new();
        let title = if self.title.is_empty() {
            "strainforge"
        } else {
            self.title.lines().next().unwrap_or("")
        };
        let _ = writeln!(s, "# vtk DataFile Version 3.0");
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "ASCII");
        let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", num(p.x), num(p.y), num(p.z));
        }
        let size: usize = self.cells.iter().map(|c| c.len() + 1).sum();
        let _ = writeln!(s, "CELLS {} {}", self.cells.len(), size);
        for c in &self.cells {
            s.push_str(&c.len().to_string());
            for i in c {
                let _ = write!(s, " {i}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.cell_types.len());
        for t in &self.cell_types {
            let _ = writeln!(s, "{t}");
        }
        write_attributes(&mut s, "POINT_DATA", self.points.len(), &self.point_data);
        write_attributes(&mut s, "CELL_DATA", self.cells.len(), &self.cell_data);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        for (name, a) in &self.point_data {
            if a.len() != self.points.len() {
                return Err(Error::validation(format!(
                    "point attribute `{name}` has {} values",
                    a.len()
                )));
            }
        }
        for (name, a) in &self.cell_data {
            if a.len() != self.cells.len() {
                return Err(Error::validation(format!(
                    "cell attribute `{name}` has {} values",
                    a.len()
                )));
            }
        }
        std::fs::write(path, self.to_vtk_string()).map_err(|e| Error::io(path, e))
    }
}

fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_attributes(s: &mut String, section: &str, count: usize, data: &[(String, Attribute)]) {
    if data.is_empty() {
        return;
    }
    let _ = writeln!(s, "{section} {count}");
    for (name, attr) in data {
        match attr {
            Attribute::Scalars(v) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(s, "{}", num(*x));
                }
            }
            Attribute::Ints(v) => {
                let _ = writeln!(s, "SCALARS {name} int 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(s, "{x}");
                }
            }
            Attribute::Vectors(v) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for p in v {
                    let _ = writeln!(s, "{} {} {}", num(p.x), num(p.y), num(p.z));
                }
            }
        }
    }
}

struct Tokens<'a> {
    iter: std::iter::Peekable<std::str::SplitAsciiWhitespace<'a>>,
    path: &'a Path,
}

impl<'a> Tokens<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::validation(format!("{}: {msg}", self.path.display()))
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| self.err(format!("unexpected end of file reading {what}")))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let t = self.next(kw)?;
        if t.eq_ignore_ascii_case(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`, found `{t}`")))
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.next(what)?;
        t.parse().map_err(|_| self.err(format!("invalid {what} `{t}`")))
    }
}

/// Parses a legacy ASCII unstructured grid, including `SCALARS` and
/// `VECTORS` point/cell attributes.
pub fn parse_unstructured_grid(text: &str, path: &Path) -> Result<UnstructuredGrid> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("# vtk DataFile") {
        return Err(Error::validation(format!("{}: not a legacy VTK file", path.display())));
    }
    let title = lines.next().unwrap_or("").to_string();
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let mut tk = Tokens {
        iter: rest.split_ascii_whitespace().peekable(),
        path,
    };
    let format = tk.next("format")?;
    if !format.eq_ignore_ascii_case("ASCII") {
        return Err(tk.err(format!("unsupported format `{format}` (only ASCII)")));
    }
    tk.keyword("DATASET")?;
    let ds = tk.next("dataset type")?;
    if !ds.eq_ignore_ascii_case("UNSTRUCTURED_GRID") {
        return Err(tk.err(format!("unsupported dataset `{ds}`")));
    }
    let mut grid = UnstructuredGrid {
        title,
        ..Default::default()
    };
    let mut section: Option<(&str, usize)> = None;
    while let Some(kw) = tk.iter.next() {
        match kw.to_ascii_uppercase().as_str() {
            "POINTS" => {
                let n: usize = tk.parse("point count")?;
                tk.next("point type")?;
                grid.points.reserve(n);
                for _ in 0..n {
                    grid.points.push(Vec3::new(
                        tk.parse("coordinate")?,
                        tk.parse("coordinate")?,
                        tk.parse("coordinate")?,
                    ));
                }
            }
            "CELLS" => {
                let n: usize = tk.parse("cell count")?;
                let _size: usize = tk.parse("cell list size")?;
                for _ in 0..n {
                    let k: usize = tk.parse("cell size")?;
                    let mut c = Vec::with_capacity(k);
                    for _ in 0..k {
                        let i: usize = tk.parse("cell index")?;
                        if i >= grid.points.len() {
                            return Err(tk.err(format!("cell references point {i}")));
                        }
                        c.push(i);
                    }
                    grid.cells.push(c);
                }
            }
            "CELL_TYPES" => {
                let n: usize = tk.parse("cell type count")?;
                for _ in 0..n {
                    grid.cell_types.push(tk.parse("cell type")?);
                }
            }
            "POINT_DATA" => section = Some(("point", tk.parse("point data count")?)),
            "CELL_DATA" => section = Some(("cell", tk.parse("cell data count")?)),
            "SCALARS" | "VECTORS" => {
                let Some((where_, count)) = section else {
                    return Err(tk.err("attribute outside POINT_DATA/CELL_DATA"));
                };
                let vectors = kw.eq_ignore_ascii_case("VECTORS");
                let name = tk.next("attribute name")?.to_string();
                let ty = tk.next("attribute type")?.to_ascii_lowercase();
                let attr = if vectors {
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        v.push(Vec3::new(tk.parse("vector")?, tk.parse("vector")?, tk.parse("vector")?));
                    }
                    Attribute::Vectors(v)
                } else {
                    if tk.iter.peek().is_some_and(|t| t.parse::<u32>().is_ok()) {
                        let comps: u32 = tk.parse("component count")?;
                        if comps != 1 {
                            return Err(tk.err(format!("attribute `{name}` has {comps} components")));
                        }
                    }
                    if tk.iter.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                        tk.next("lookup table")?;
                        tk.next("lookup table name")?;
                    }
                    if ty == "int" || ty == "long" || ty == "short" || ty == "unsigned_char" {
                        let mut v = Vec::with_capacity(count);
                        for _ in 0..count {
                            v.push(tk.parse("integer scalar")?);
                        }
                        Attribute::Ints(v)
                    } else {
                        let mut v = Vec::with_capacity(count);
                        for _ in 0..count {
                            v.push(tk.parse("scalar")?);
                        }
                        Attribute::Scalars(v)
                    }
                };
                if where_ == "point" {
                    grid.point_data.push((name, attr));
                } else {
                    grid.cell_data.push((name, attr));
                }
            }
            other => return Err(tk.err(format!("unsupported section `{other}`"))),
        }
    }
    if grid.cells.len() != grid.cell_types.len() {
        return Err(Error::validation(format!(
            "{}: {} cells but {} cell types",
            path.display(),
            grid.cells.len(),
            grid.cell_types.len()
        )));
    }
    Ok(grid)
}

pub fn read_unstructured_grid(path: &Path) -> Result<UnstructuredGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_unstructured_grid(&text, path)
}
