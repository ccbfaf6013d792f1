use std::path::{Path, PathBuf};

use strainforge::mesh::vtk::{read_unstructured_grid, Attribute, UnstructuredGrid};
use strainforge::phantom::{sample_views, AnnulusPhantom, PhantomOverrides, Preset, ViewLayout};
use strainforge::pipeline::{
    cohort_from_reports, phantom_stage, run_pipeline, strain_stage, PipelineConfig, RunReport, Stage,
};
use strainforge::registration::circular_shift_view;
use strainforge::study::{build_lv_frame, load_study, save_study, ViewKind, XAxisConvention};

fn bundle(dir: &Path, name: &str, preset: Preset, overrides: PhantomOverrides) -> PathBuf {
    let b = dir.join(name);
    phantom_stage(preset, &overrides, &ViewLayout::default(), &b, false).unwrap();
    b
}

fn frames(n: usize) -> PhantomOverrides {
    PhantomOverrides {
        frames: Some(n),
        ..Default::default()
    }
}

fn run(b: &Path, out: &Path, edit: impl FnOnce(&mut PipelineConfig)) -> RunReport {
    let mut cfg = PipelineConfig::resolve(None, Some(b)).unwrap();
    cfg.bundle = Some(b.to_path_buf());
    cfg.out = Some(out.to_path_buf());
    edit(&mut cfg);
    run_pipeline(&cfg).unwrap_or_else(|e| panic!("{}", e.to_json()))
}

fn cell_scalars<'a>(g: &'a UnstructuredGrid, name: &str) -> &'a [f64] {
    match g.cell_data.iter().find(|(n, _)| n == name) {
        Some((_, Attribute::Scalars(v))) => v,
        _ => panic!("no cell scalars `{name}`"),
    }
}

#[test]
fn phantom_bundle_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let o = PhantomOverrides {
        frames: Some(7),
        torsion: Some(0.004),
        ..Default::default()
    };
    let b = bundle(dir.path(), "b", Preset::Contractile, o.clone());
    let ph = AnnulusPhantom::with_overrides(Preset::Contractile, &o).unwrap();
    assert_eq!(
        load_study(&b).unwrap(),
        sample_views(&ph, &ViewLayout::default()).unwrap()
    );
    let stored: AnnulusPhantom =
        serde_json::from_str(&std::fs::read_to_string(b.join("phantom.json")).unwrap()).unwrap();
    assert_eq!(stored, ph);
    let cfg = PipelineConfig::load(&b.join("pipeline.json")).unwrap();
    assert!(!cfg.track);
}

#[test]
fn override_cohort_matches_an_independent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    let mut ell_by_lambda = Vec::new();
    for (i, lambda) in [0.86, 0.88, 0.90, 0.92].into_iter().enumerate() {
        for (j, ratio) in [0.78, 0.80, 0.82, 0.84].into_iter().enumerate() {
            let o = PhantomOverrides {
                frames: Some(6),
                lambda_peak: Some(lambda),
                ri_ratio: Some(ratio),
                ..Default::default()
            };
            let b = bundle(dir.path(), &format!("b{i}{j}"), Preset::Contractile, o);
            let out = dir.path().join(format!("o{i}{j}"));
            let r = run(&b, &out, |_| {});
            if j == 0 {
                ell_by_lambda.push(r.global_peaks.ell);
            }
            reports.push((out.join("report.json"), r.global_peaks));
        }
    }
    assert!(
        ell_by_lambda.windows(2).all(|w| w[0] < w[1]),
        "Ell peaks should weaken as the stretch approaches 1: {ell_by_lambda:?}"
    );

    let paths: Vec<PathBuf> = reports.iter().map(|r| r.0.clone()).collect();
    let summary = cohort_from_reports(&paths).unwrap();
    assert_eq!(summary.count, 16);
    let comps: [fn(&strainforge::strain::GlobalPeaks) -> f64; 3] = [|p| p.err, |p| p.ecc, |p| p.ell];
    let got_mean = [summary.mean.err, summary.mean.ecc, summary.mean.ell];
    let got_sd = [summary.sd.err, summary.sd.ecc, summary.sd.ell];
    for (k, f) in comps.iter().enumerate() {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for (_, p) in &reports {
            n += 1.0;
            let d = f(p) - mean;
            mean += d / n;
            m2 += d * (f(p) - mean);
        }
        let sd = (m2 / n).sqrt();
        assert!(
            (got_mean[k] - mean).abs() < 1e-12,
            "mean {k}: {} vs {mean}",
            got_mean[k]
        );
        assert!((got_sd[k] - sd).abs() < 1e-12, "sd {k}: {} vs {sd}", got_sd[k]);
        assert!(sd > 0.0);
    }
}

#[test]
fn external_mesh_in_patient_space_gives_the_lofted_strains() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path(), "b", Preset::Contractile, frames(6));
    let lofted = dir.path().join("lofted");
    run(&b, &lofted, |_| {});

    let frame = build_lv_frame(&load_study(&b).unwrap(), XAxisConvention::default()).unwrap();
    let mut mesh = read_unstructured_grid(&lofted.join("mesh.vtk")).unwrap();
    for p in &mut mesh.points {
        *p = frame.from_lv(p);
    }
    mesh.point_data.clear();
    let external = dir.path().join("patient.vtk");
    mesh.write(&external).unwrap();

    let ext = dir.path().join("external");
    let r = run(&b, &ext, |c| c.mesh = Some(external.clone()));
    assert_eq!(r.mesh_source, "external");
    for t in [2, 5] {
        let name = format!("frame_{t:03}.vtk");
        let (a, e) = (
            read_unstructured_grid(&lofted.join(&name)).unwrap(),
            read_unstructured_grid(&ext.join(&name)).unwrap(),
        );
        for field in ["Err", "Ecc", "Ell", "detF"] {
            let worst = cell_scalars(&a, field)
                .iter()
                .zip(cell_scalars(&e, field))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "{name} {field}: {worst}");
        }
    }
}

#[test]
fn peak_alignment_undoes_a_circular_shift() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path(), "b", Preset::Contractile, PhantomOverrides::default());
    let reference = run(&b, &dir.path().join("ref"), |_| {});

    let mut study = load_study(&b).unwrap();
    let lax = study
        .views
        .iter()
        .position(|v| v.kind == ViewKind::FourChamber)
        .unwrap();
    study.views[lax] = circular_shift_view(&study.views[lax], 2);
    let shifted = dir.path().join("shifted");
    std::fs::create_dir(&shifted).unwrap();
    save_study(&study, &shifted).unwrap();
    std::fs::copy(b.join("pipeline.json"), shifted.join("pipeline.json")).unwrap();

    let out = dir.path().join("aligned");
    let aligned = run(&shifted, &out, |c| c.align_peaks = true);
    let track = aligned.track.as_ref().expect("track summary");
    assert_eq!(track.shifts[lax], -2);
    assert!(track.shifts.iter().enumerate().all(|(i, &s)| i == lax || s == 0));

    let (restored, original) = (
        &load_study(&out).unwrap().views[lax],
        &load_study(&b).unwrap().views[lax],
    );
    let flat = |v: &strainforge::study::TrackedView| -> Vec<f64> {
        v.points()
            .chain(v.displacements.iter().flatten())
            .flatten()
            .copied()
            .collect()
    };
    let worst = flat(restored)
        .iter()
        .zip(flat(original))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "restored view differs by {worst}");

    for (a, r) in [
        (aligned.global_peaks.err, reference.global_peaks.err),
        (aligned.global_peaks.ecc, reference.global_peaks.ecc),
        (aligned.global_peaks.ell, reference.global_peaks.ell),
    ] {
        assert!((a - r).abs() < 1e-4, "{a} vs {r}");
    }
}

#[test]
fn strain_rejects_motion_from_another_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path(), "b", Preset::Rigid, frames(3));
    let (coarse, fine) = (dir.path().join("coarse"), dir.path().join("fine"));
    run(&b, &coarse, |c| c.layers = 1);
    run(&b, &fine, |_| {});
    let cfg = PipelineConfig::default();
    let err = strain_stage(
        &cfg,
        &fine.join("mesh.vtk"),
        &coarse.join("motion.json"),
        &dir.path().join("x"),
    )
    .unwrap_err();
    assert_eq!(err.stage, Stage::Strain);
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn rerun_with_fewer_frames_leaves_no_stale_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run(&bundle(dir.path(), "long", Preset::Rigid, frames(6)), &out, |_| {});
    assert!(out.join("frame_005.vtk").is_file());
    let r = run(&bundle(dir.path(), "short", Preset::Rigid, frames(3)), &out, |_| {});
    assert_eq!(r.frames, 3);
    assert!(out.join("frame_002.vtk").is_file());
    assert!(!out.join("frame_003.vtk").exists());
    assert!(!out.join("frame_005.vtk").exists());
}
