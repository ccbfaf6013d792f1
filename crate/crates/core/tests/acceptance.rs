//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness and reports every criterion. Exits
//! nonzero if any criterion fails; skipped criteria do not count as failures.
//!
//! Criterion 9 needs processed clinical study bundles: point
//! `STRAINFORGE_DATASET` at a directory whose subdirectories each hold a
//! `study.json`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Rotation3, Unit};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use strainforge::fusion::{compute_weights, fuse_inplane};
use strainforge::interp::{Extrapolation, ScatterGeometry};
use strainforge::mesh::vtk::{read_unstructured_grid, Attribute};
use strainforge::mesh::{tetrahedralize, ApexCap};
use strainforge::phantom::{presets, PhantomOverrides, Preset, ViewLayout};
use strainforge::pipeline::{self, run_pipeline, PipelineConfig, RunReport};
use strainforge::registration::ffd::{cost, cost_with_gradient, evaluate_ffd, BSplineGrid};
use strainforge::registration::{register_pair, Image2D, RegistrationParams};
use strainforge::strain::green_lagrange;
use strainforge::{Mat3, Vec3};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn(&Path) -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn phantom_run(work: &Path, preset: Preset, name: &str) -> Result<(PathBuf, RunReport, f64), String> {
    let bundle = work.join(format!("{name}-bundle"));
    let out = work.join(format!("{name}-out"));
    pipeline::phantom_stage(
        preset,
        &PhantomOverrides::default(),
        &ViewLayout::default(),
        &bundle,
        false,
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::resolve(None, Some(&bundle)).map_err(|e| e.to_string())?;
    cfg.bundle = Some(bundle.clone());
    cfg.out = Some(out.clone());
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    Ok((out, report, start.elapsed().as_secs_f64()))
}

/// `[frame][segment] -> [Err, Ecc, Ell]` from a `frame,segment,Err,Ecc,Ell` file.
fn read_curves(path: &Path) -> Result<BTreeMap<(usize, u8), [f64; 3]>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(format!("{}: malformed line `{line}`", path.display()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{}: {e}", path.display()));
        let key = (
            f[0].parse().map_err(|_| "bad frame".to_string())?,
            f[1].parse().map_err(|_| "bad segment".to_string())?,
        );
        out.insert(key, [num(f[2])?, num(f[3])?, num(f[4])?]);
    }
    Ok(out)
}

fn rigid_nullity(work: &Path) -> Outcome {
    let (out, report, secs) = match phantom_run(work, Preset::Rigid, "rigid") {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let curves = match read_curves(&out.join(pipeline::CURVES_FILE)) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e),
    };
    let worst = curves.values().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let segments = curves
        .keys()
        .map(|k| k.1)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    verdict(
        worst < 1e-6 && secs < 60.0 && report.frames == presets::RIGID_FRAMES && segments == 16,
        format!(
            "rigid phantom: max |E| = {worst:.2e} over {} frames x {segments} segments, {secs:.1} s",
            report.frames
        ),
    )
}

fn strain_identities(_: &Path) -> Outcome {
    let f = Mat3::from_diagonal(&Vec3::new(1.2, 1.0, 1.0));
    let e11 = green_lagrange(&f)[(0, 0)];
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let axis = Unit::new_normalize(Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let r = Rotation3::from_axis_angle(&axis, rng.gen_range(-PI..PI));
        worst = worst.max(green_lagrange(r.matrix()).norm());
    }
    verdict(
        (e11 - 0.22).abs() <= 1e-15 && worst < 1e-12,
        format!("E11(diag 1.2,1,1) = {e11}, max |E| over 1000 rotations = {worst:.2e}"),
    )
}

fn within(got: f64, expected: f64, rel: f64) -> bool {
    (got - expected).abs() <= (rel * expected.abs()).max(0.01)
}

fn oracle_agreement(work: &Path) -> Outcome {
    let (out, _, secs) = match phantom_run(work, Preset::Contractile, "contractile") {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let bundle = work.join("contractile-bundle");
    let (got, oracle) = match (
        read_curves(&out.join(pipeline::CURVES_FILE)),
        read_curves(&bundle.join(pipeline::ORACLE_FILE)),
    ) {
        (Ok(g), Ok(o)) => (g, o),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let peak = presets::CYCLE_FRAMES / 2;
    let mean = |src: &BTreeMap<(usize, u8), [f64; 3]>, ids: &[u8]| -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        for id in ids {
            let v = src.get(&(peak, *id))?;
            for k in 0..3 {
                acc[k] += v[k] / ids.len() as f64;
            }
        }
        Some(acc)
    };
    let groups: [(&str, Vec<u8>, f64); 3] = [
        ("mid", (7..=12).collect(), 0.10),
        ("basal", (1..=6).collect(), 0.25),
        ("apical", (13..=16).collect(), 0.25),
    ];
    let mut ok = secs < 120.0;
    let mut parts = Vec::new();
    for (name, ids, rel) in &groups {
        let (Some(g), Some(o)) = (mean(&got, ids), mean(&oracle, ids)) else {
            return Outcome::Fail(format!("{name} segments missing from the curves"));
        };
        let pass = (0..3).all(|k| within(g[k], o[k], *rel));
        ok &= pass;
        parts.push(format!(
            "{name} Err/Ecc/Ell {:.4}/{:.4}/{:.4} vs {:.4}/{:.4}/{:.4}{}",
            g[0],
            g[1],
            g[2],
            o[0],
            o[1],
            o[2],
            if pass { "" } else { " (out of tolerance)" }
        ));
    }
    verdict(
        ok,
        format!("contractile peak frame {peak}: {}; {secs:.1} s", parts.join("; ")),
    )
}

fn longitudinal_exactness(work: &Path) -> Outcome {
    let (out, _, _) = match phantom_run(work, Preset::Incompressible, "incompressible") {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let peak = presets::CYCLE_FRAMES / 2;
    let grid = match read_unstructured_grid(&out.join(pipeline::frame_file(peak))) {
        Ok(g) => g,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (Some(Attribute::Scalars(ell)), Some(Attribute::Ints(extrap))) =
        (grid.cell_attribute("Ell"), grid.point_attribute("extrapolated"))
    else {
        return Outcome::Fail("frame mesh lacks Ell or extrapolated fields".into());
    };
    let expected = (0.85f64.powi(2) - 1.0) / 2.0;
    let mut worst_interior: f64 = 0.0;
    let mut worst_all: f64 = 0.0;
    let mut interior = 0;
    for (cell, v) in grid.cells.iter().zip(ell) {
        let d = (v - expected).abs();
        worst_all = worst_all.max(d);
        if cell.iter().all(|&n| extrap[n] == 0) {
            worst_interior = worst_interior.max(d);
            interior += 1;
        }
    }
    verdict(
        interior > 0 && worst_interior < 1e-3,
        format!(
            "Ell vs {expected}: max error {worst_interior:.2e} over {interior} interior elements \
             ({worst_all:.2e} over all {})",
            grid.cells.len()
        ),
    )
}

fn interpolant_precision(_: &Path) -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut worst_hull, mut worst_sample) = (0.0f64, 0.0f64);
    let mut queries_inside = 0;
    for _ in 0..100 {
        let n = rng.gen_range(20..=200);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        let (a, b) = (
            Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
            rng.gen_range(-5.0..5.0),
        );
        let f = |p: &Vec3| a.dot(p) + b;
        let values: Vec<f64> = pts.iter().map(f).collect();
        let geom = match ScatterGeometry::new(&pts, Extrapolation::Nearest) {
            Ok(g) => g,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        for (p, v) in pts.iter().zip(&values) {
            worst_sample = worst_sample.max((geom.stencil(p).apply(&values) - v).abs());
        }
        let qs: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        for (q, s) in qs.iter().zip(geom.stencils(&qs)) {
            if !s.extrapolated {
                worst_hull = worst_hull.max((s.apply(&values) - f(q)).abs());
                queries_inside += 1;
            }
        }
    }
    verdict(
        worst_hull < 1e-9 && worst_sample < 1e-9 && queries_inside > 0,
        format!(
            "100 affine fields: in-hull error {worst_hull:.2e} ({queries_inside} queries), sample error {worst_sample:.2e}"
        ),
    )
}

fn texture(r: f64, c: f64) -> f64 {
    0.5 + 0.2 * (0.31 * r).sin() * (0.23 * c).cos()
        + 0.15 * (0.13 * r + 0.19 * c).sin()
        + 0.25 * (-((r - 30.0).powi(2) + (c - 26.0).powi(2)) / 60.0).exp()
        + 0.2 * (-((r - 20.0).powi(2) + (c - 40.0).powi(2)) / 40.0).exp()
}

fn registration_recovery(_: &Path) -> Outcome {
    let (dr, dc) = (2.5, -1.0);
    let fixed = Image2D::from_fn(64, 64, |r, c| texture(r as f64, c as f64));
    let moving = Image2D::from_fn(64, 64, |r, c| texture(r as f64 - dr, c as f64 - dc));
    let (fixed, moving) = match (fixed, moving) {
        (Ok(f), Ok(m)) => (f, m),
        _ => return Outcome::Fail("could not build test images".into()),
    };
    let reg = match register_pair(&fixed, &moving, &RegistrationParams::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (mut err, mut n) = (0.0, 0.0);
    for r in (16..48).step_by(2) {
        for c in (16..48).step_by(2) {
            let Ok(y) = evaluate_ffd(&reg.grid, [r as f64, c as f64]) else {
                return Outcome::Fail("landmark outside the lattice".into());
            };
            err += (y[0] - r as f64 - dr).hypot(y[1] - c as f64 - dc);
            n += 1.0;
        }
    }
    let landmark = err / n;

    let mut grid = match BSplineGrid::covering(64, 64, [8.0, 8.0]) {
        Ok(g) => g,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    for (k, d) in grid.displacements.iter_mut().enumerate() {
        *d = [
            0.4 * (k as f64 * 0.37).sin() + 0.02,
            0.3 * (k as f64 * 0.91).cos() - 0.01,
        ];
    }
    let alpha = 1e-3;
    let Ok((_, grad)) = cost_with_gradient(&fixed, &moving, &grid, alpha) else {
        return Outcome::Fail("gradient evaluation failed".into());
    };
    let h = 1e-6;
    let mut worst_rel: f64 = 0.0;
    for k in 0..grid.displacements.len() {
        for comp in 0..2 {
            let (mut p, mut m) = (grid.clone(), grid.clone());
            p.displacements[k][comp] += h;
            m.displacements[k][comp] -= h;
            let (Ok(cp), Ok(cm)) = (cost(&fixed, &moving, &p, alpha), cost(&fixed, &moving, &m, alpha)) else {
                return Outcome::Fail("cost evaluation failed".into());
            };
            let fd = (cp - cm) / (2.0 * h);
            let scale = fd.abs().max(grad[k][comp].abs());
            if scale > 1e-6 {
                worst_rel = worst_rel.max((fd - grad[k][comp]).abs() / scale);
            }
        }
    }
    verdict(
        landmark < 0.3 && worst_rel < 1e-4,
        format!("translation (2.5, -1.0) px: mean landmark error {landmark:.3} px; gradient relative error {worst_rel:.2e} (step {h:e} px)"),
    )
}

fn mesh_volume_convergence(_: &Path) -> Outcome {
    let (ri, ro, h) = (presets::RI, presets::RO, presets::HEIGHT);
    let exact = PI * (ro * ro - ri * ri) * h;
    let error = |n: usize| -> Result<f64, String> {
        let levels = 9;
        let ring = |r: f64, z: f64| -> Vec<Vec3> {
            (0..n)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / n as f64;
                    Vec3::new(r * t.cos(), r * t.sin(), z)
                })
                .collect()
        };
        let zs: Vec<f64> = (0..levels)
            .map(|k| h * (levels - 1 - k) as f64 / (levels - 1) as f64)
            .collect();
        let endo: Vec<_> = zs.iter().map(|&z| ring(ri, z)).collect();
        let epi: Vec<_> = zs.iter().map(|&z| ring(ro, z)).collect();
        let mesh = tetrahedralize(&endo, &epi, 3, ApexCap::Flat).map_err(|e| e.to_string())?;
        Ok((mesh.total_volume() - exact).abs() / exact)
    };
    match (error(64), error(128)) {
        (Ok(e64), Ok(e128)) => verdict(
            e64 < 0.02 && e128 < e64,
            format!(
                "relative volume error {:.4}% at n=64, {:.4}% at n=128",
                100.0 * e64,
                100.0 * e128
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn weighting_scheme(_: &Path) -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let endpoints = match (compute_weights(&[0.0], -3.0, 0.0), compute_weights(&[-3.0], -3.0, 0.0)) {
        (Ok((a, _)), Ok((b, _))) => (a[0], b[0]),
        _ => return Outcome::Fail("weight evaluation failed".into()),
    };
    let n = 1_000_000;
    let w_l: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
    let (w, _) = match compute_weights(&w_l, -12.0, 7.0) {
        Ok(w) => w,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let in_range = w.iter().all(|x| (0.0..=1.0).contains(x));
    let cs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let (u, _) = match fuse_inplane(&cs, &cs, &l, &l, &w) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let convex = (0..n).all(|i| u[i] >= cs[i].min(l[i]) && u[i] <= cs[i].max(l[i]));
    verdict(
        endpoints == (0.0, 1.0) && in_range && convex,
        format!(
            "W(0) = {}, W(w_min) = {}, {n} triples: W in [0,1] {in_range}, convex {convex}",
            endpoints.0, endpoints.1
        ),
    )
}

fn dataset_check(work: &Path) -> Outcome {
    let Some(root) = std::env::var_os("STRAINFORGE_DATASET").map(PathBuf::from) else {
        return Outcome::Skip("STRAINFORGE_DATASET not set".into());
    };
    let mut bundles: Vec<PathBuf> = match std::fs::read_dir(&root) {
        Ok(rd) => rd
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.join("study.json").is_file())
            .collect(),
        Err(_) => return Outcome::Skip(format!("{} not readable", root.display())),
    };
    if bundles.is_empty() {
        return Outcome::Skip(format!("no study bundles under {}", root.display()));
    }
    bundles.sort();
    let bands = [(0.27, 0.13), (-0.12, 0.04), (-0.05, 0.06)];
    let mut failures = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        let mut cfg = match PipelineConfig::resolve(None, Some(b)) {
            Ok(c) => c,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        cfg.bundle = Some(b.clone());
        cfg.out = Some(work.join(format!("dataset-{i}")));
        match run_pipeline(&cfg) {
            Ok(r) => {
                let g = [r.global_peaks.err, r.global_peaks.ecc, r.global_peaks.ell];
                if g.iter().zip(&bands).any(|(v, (m, sd))| (v - m).abs() > 2.0 * sd) {
                    failures.push(format!("{}: {g:?}", b.display()));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", b.display())),
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} studies, {} outside mean +/- 2 SD {}",
            bundles.len(),
            failures.len(),
            failures.join("; ")
        ),
    )
}

fn determinism(work: &Path) -> Outcome {
    let bundle = work.join("determinism-bundle");
    if let Err(e) = pipeline::phantom_stage(
        Preset::Contractile,
        &PhantomOverrides::default(),
        &ViewLayout::default(),
        &bundle,
        false,
    ) {
        return Outcome::Fail(e.to_string());
    }
    let outs = [work.join("determinism-a"), work.join("determinism-b")];
    for out in &outs {
        let mut cfg = match PipelineConfig::resolve(None, Some(&bundle)) {
            Ok(c) => c,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        cfg.bundle = Some(bundle.clone());
        cfg.out = Some(out.clone());
        if let Err(e) = run_pipeline(&cfg) {
            return Outcome::Fail(e.to_string());
        }
    }
    let mut names: Vec<String> = match std::fs::read_dir(&outs[0]) {
        Ok(rd) => rd
            .flatten()
            .filter_map(|e| e.file_name().to_str().map(String::from))
            .filter(|n| n.ends_with(".vtk") || n.ends_with(".csv"))
            .collect(),
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(outs[0].join(n)).ok() != std::fs::read(outs[1].join(n)).ok())
        .collect();
    verdict(
        differing.is_empty() && names.len() > 2,
        format!("{} VTK/CSV files compared, {} differ", names.len(), differing.len()),
    )
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("rigid-motion nullity", rigid_nullity),
        ("strain unit identities", strain_identities),
        ("phantom oracle agreement", oracle_agreement),
        ("longitudinal exactness", longitudinal_exactness),
        ("interpolant linear precision", interpolant_precision),
        ("registration recovery", registration_recovery),
        ("mesh volume convergence", mesh_volume_convergence),
        ("weighting scheme", weighting_scheme),
        ("clinical cohort range", dataset_check),
        ("determinism", determinism),
    ];
    let work = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (tag, detail) = match check(work.path()) {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
