use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use strainforge::registration::image::write_f32grid;
use strainforge::registration::Image2D;

fn strainforge(args: &[&str]) -> Output {
    strainforge_env(args, &[])
}

fn strainforge_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_strainforge"));
    cmd.args(args).env_remove("STRAINFORGE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not error JSON ({e}): {text}"))
}

fn phantom(dir: &Path, preset: &str, extra: &[&str]) -> PathBuf {
    let bundle = dir.join(format!("{preset}-bundle"));
    let mut args = vec!["phantom", "--preset", preset, "--out", p(&bundle)];
    args.extend_from_slice(extra);
    let out = strainforge(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    bundle
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn rigid_phantom_run_reports_null_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = phantom(dir.path(), "rigid", &[]);
    for f in ["study.json", "phantom.json", "oracle.csv", "pipeline.json"] {
        assert!(bundle.join(f).is_file(), "{f} missing");
    }
    let out = dir.path().join("run");
    let r = strainforge(&["run", "--bundle", p(&bundle), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_slice(&read(&out.join("report.json"))).unwrap();
    for k in ["err", "ecc", "ell"] {
        assert!(report["global_peaks"][k].as_f64().unwrap().abs() < 1e-6);
    }
    for a in report["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).is_file(), "artifact {a} missing");
    }
    assert!(out.join("frame_009.vtk").is_file());
}

#[test]
fn exit_codes_and_error_json_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = strainforge(&[
        "run",
        "--bundle",
        p(&dir.path().join("absent")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(missing.status.code(), Some(4));
    let e = error_json(&missing);
    assert_eq!(e["error"]["stage"], "track");
    assert_eq!(e["error"]["kind"], "io");

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"layers": 3, "smoothing": 2}"#).unwrap();
    let bad = strainforge(&["run", "--bundle", "x", "--out", "y", "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    let e = error_json(&bad);
    assert_eq!(e["error"]["stage"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("smoothing"));

    let range = strainforge(&["run", "--bundle", "x", "--out", "y", "--ring-samples", "2"]);
    assert_eq!(range.status.code(), Some(2));

    let threads = strainforge_env(&["cohort", "x.json"], &[("STRAINFORGE_THREADS", "zero")]);
    assert_eq!(threads.status.code(), Some(2));
    assert!(error_json(&threads)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("STRAINFORGE_THREADS"));
}

#[test]
fn thread_count_does_not_change_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = phantom(dir.path(), "contractile", &["--frames", "6"]);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let r = strainforge_env(
            &["run", "--bundle", p(&bundle), "--out", p(&out)],
            &[("STRAINFORGE_THREADS", threads)],
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        out
    };
    let (a, b) = (run("one", "1"), run("four", "4"));
    for f in ["curves.csv", "peaks.csv", "motion.json", "frame_003.vtk", "report.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = phantom(dir.path(), "contractile", &["--frames", "4"]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"apex_cap": "flat", "layers": 3, "ring_samples": 32}"#).unwrap();
    let tets = |extra: &[&str]| {
        let out = dir.path().join(format!("r{}", extra.len()));
        let mut args = vec![
            "reconstruct",
            "--bundle",
            p(&bundle),
            "--out",
            p(&out),
            "--config",
            p(&cfg),
        ];
        args.extend_from_slice(extra);
        let r = strainforge(&args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let v: Value = serde_json::from_slice(&read(&out.join("reconstruct.json"))).unwrap();
        v["quality"]["tets"].as_u64().unwrap()
    };
    let from_file = tets(&[]);
    let overridden = tets(&["--layers", "2"]);
    assert_eq!(from_file % (32 * 3 * 3), 0);
    assert_eq!(overridden * 3, from_file * 2);
}

#[test]
fn standalone_stages_chain_to_the_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = phantom(dir.path(), "contractile", &["--frames", "6"]);
    let run = dir.path().join("run");
    assert!(strainforge(&["run", "--bundle", p(&bundle), "--out", p(&run)])
        .status
        .success());

    let ch = dir.path().join("chain");
    let mesh = ch.join("mesh.vtk");
    let motion = ch.join("motion.json");
    let steps: [Vec<&str>; 5] = [
        vec!["track", "--bundle", p(&bundle), "--out", p(&ch)],
        vec!["reconstruct", "--bundle", p(&ch), "--out", p(&ch)],
        vec!["fuse", "--bundle", p(&ch), "--mesh", p(&mesh), "--out", p(&ch)],
        vec!["strain", "--mesh", p(&mesh), "--motion", p(&motion), "--out", p(&ch)],
        vec!["report", "--dir", p(&ch)],
    ];
    for s in &steps {
        let r = strainforge(s);
        assert!(r.status.success(), "{s:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .flatten()
        .map(|e| e.file_name())
        .collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(read(&run.join(&n)), read(&ch.join(&n)), "{n:?} differs");
    }
}

#[test]
fn cohort_summarizes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |name: &str, err: f64| {
        let path = dir.path().join(name);
        let mut v: Value = serde_json::from_str(include_str!("data/report_template.json")).unwrap();
        v["global_peaks"]["err"] = err.into();
        std::fs::write(&path, v.to_string()).unwrap();
        path
    };
    let (a, b) = (mk("a.json", 0.2), mk("b.json", 0.4));
    let summary = dir.path().join("cohort.json");
    let r = strainforge(&["cohort", p(&a), p(&b), "--out", p(&summary)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: Value = serde_json::from_slice(&read(&summary)).unwrap();
    assert_eq!(v["count"], 2);
    assert!((v["mean"]["err"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!((v["sd"]["err"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(v["sd"]["ecc"].as_f64().unwrap(), 0.0);

    assert_eq!(strainforge(&["cohort"]).status.code(), Some(2));
}

fn textured(r: f64, c: f64) -> f64 {
    0.5 + 0.3 * (0.29 * r).sin() * (0.21 * c).cos() + 0.2 * (-((r - 22.0).powi(2) + (c - 26.0).powi(2)) / 50.0).exp()
}

#[test]
fn track_follows_seeds_through_a_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("frames");
    std::fs::create_dir(&images).unwrap();
    for t in 0..3 {
        let img = Image2D::from_fn(48, 48, |r, c| textured(r as f64 - t as f64, c as f64)).unwrap();
        write_f32grid(&img, &images.join(format!("f{t}.f32grid"))).unwrap();
    }
    let seeds = dir.path().join("seeds.json");
    std::fs::write(&seeds, "[[20, 20], [24, 30], [28, 18]]").unwrap();
    let out = dir.path().join("tracked.json");
    let r = strainforge(&[
        "track",
        "--images",
        p(&images),
        "--seeds",
        p(&seeds),
        "--alpha",
        "0.001",
        "--levels",
        "2",
        "--no-smooth",
        "--out",
        p(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: Value = serde_json::from_slice(&read(&out)).unwrap();
    let d = &v["displacements"][2];
    for k in 0..3 {
        let (dr, dc) = (d[k][0].as_f64().unwrap(), d[k][1].as_f64().unwrap());
        assert!((dr - 2.0).abs() < 0.3 && dc.abs() < 0.3, "seed {k}: ({dr}, {dc})");
    }
}

#[test]
fn track_updates_a_view_from_phantom_images() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = phantom(dir.path(), "translate", &["--frames", "3", "--images"]);
    let study: Value = serde_json::from_slice(&read(&bundle.join("study.json"))).unwrap();
    let view = &study["views"][0];
    let seeds = dir.path().join("view.json");
    std::fs::write(&seeds, view.to_string()).unwrap();
    let out = dir.path().join("view_tracked.json");
    let r = strainforge(&[
        "track",
        "--images",
        p(&bundle.join("images/view_0")),
        "--seeds",
        p(&seeds),
        "--out",
        p(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let tracked: Value = serde_json::from_slice(&read(&out)).unwrap();
    assert_eq!(tracked["frames"], 3);
    assert_eq!(tracked["contours"], view["contours"]);
    let (got, truth) = (&tracked["displacements"][1], &view["displacements"][1]);
    let n = truth.as_array().unwrap().len();
    let (mut err, mut motion) = (0.0, 0.0);
    for k in 0..n {
        let at = |v: &Value, c: usize| v[k][c].as_f64().unwrap();
        err += (at(got, 0) - at(truth, 0)).hypot(at(got, 1) - at(truth, 1));
        motion += at(truth, 0).hypot(at(truth, 1));
    }
    assert!(
        err < 0.5 * motion,
        "mean tracking error {} px for {} px of motion",
        err / n as f64,
        motion / n as f64
    );
}
