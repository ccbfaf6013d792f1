use std::ffi::{CStr, CString};
use std::ptr;

use strainforge_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sf_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn green_lagrange_matches_the_stretch_example() {
    let f = [1.2, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut e = [f64::NAN; 9];
    assert_eq!(unsafe { sf_green_lagrange(f.as_ptr(), e.as_mut_ptr()) }, SfStatus::Ok);
    assert!((e[0] - 0.22).abs() < 1e-15);
    assert!(e[1..].iter().all(|&v| v == 0.0));
    assert_eq!(
        unsafe { sf_green_lagrange(ptr::null(), e.as_mut_ptr()) },
        SfStatus::InvalidArgument
    );
}

#[test]
fn cohort_summary_uses_population_sd() {
    let peaks = [0.2, -0.1, -0.05, 0.4, -0.3, -0.05];
    let (mut mean, mut sd) = ([0.0; 3], [0.0; 3]);
    let s = unsafe { sf_cohort_summary(peaks.as_ptr(), 2, mean.as_mut_ptr(), sd.as_mut_ptr()) };
    assert_eq!(s, SfStatus::Ok);
    assert!((mean[0] - 0.3).abs() < 1e-15 && (sd[0] - 0.1).abs() < 1e-15);
    assert!((sd[2]).abs() < 1e-15);

    let s = unsafe { sf_cohort_summary(ptr::null(), 0, mean.as_mut_ptr(), sd.as_mut_ptr()) };
    assert_eq!(s, SfStatus::Validation);
    assert!(last_error().contains("at least one"));
}

#[test]
fn config_parsing_reports_unknown_keys() {
    let mut cfg = ptr::null_mut();
    let bad = cstr(r#"{"layers": 3, "bogus": true}"#);
    assert_eq!(
        unsafe { sf_config_from_json(bad.as_ptr(), &mut cfg) },
        SfStatus::Validation
    );
    assert!(cfg.is_null());
    assert!(last_error().contains("bogus"));

    let good = cstr(r#"{"apex_cap": "flat", "theta0": 30}"#);
    assert_eq!(unsafe { sf_config_from_json(good.as_ptr(), &mut cfg) }, SfStatus::Ok);
    let json = unsafe { sf_config_to_json(cfg) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    assert!(text.contains("\"apex_cap\": \"flat\""));
    unsafe {
        sf_string_free(json);
        sf_config_free(cfg);
    }

    let def = sf_config_new();
    assert!(!def.is_null());
    unsafe { sf_config_free(def) };
}

#[test]
fn missing_bundle_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(dir.path().join("absent").to_str().unwrap());
    let mut study = ptr::null_mut();
    assert_eq!(unsafe { sf_study_load(missing.as_ptr(), &mut study) }, SfStatus::Io);
    assert!(study.is_null());
    assert_eq!(
        unsafe { sf_study_load(ptr::null(), &mut study) },
        SfStatus::InvalidArgument
    );
    assert_eq!(unsafe { sf_study_view_count(ptr::null()) }, 0);
}

#[test]
fn phantom_run_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let out = dir.path().join("out");
    let (b, o) = (cstr(bundle.to_str().unwrap()), cstr(out.to_str().unwrap()));

    assert_eq!(
        unsafe { sf_phantom_write(cstr("rigid").as_ptr(), b.as_ptr()) },
        SfStatus::Ok
    );
    assert_eq!(
        unsafe { sf_phantom_write(cstr("wobbly").as_ptr(), b.as_ptr()) },
        SfStatus::Validation
    );

    let mut study = ptr::null_mut();
    assert_eq!(unsafe { sf_study_load(b.as_ptr(), &mut study) }, SfStatus::Ok);
    assert_eq!(unsafe { sf_study_view_count(study) }, 11);
    assert_eq!(unsafe { sf_study_frame_count(study) }, 10);
    unsafe { sf_study_free(study) };

    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { sf_run(ptr::null(), b.as_ptr(), o.as_ptr(), &mut report) },
        SfStatus::Ok
    );
    let mut peaks = [f64::NAN; 3];
    assert_eq!(
        unsafe { sf_report_global_peaks(report, peaks.as_mut_ptr()) },
        SfStatus::Ok
    );
    assert!(peaks.iter().all(|p| p.abs() < 1e-6), "rigid peaks {peaks:?}");
    let frac = unsafe { sf_report_extrapolated_fraction(report) };
    assert!((0.0..=1.0).contains(&frac));
    assert!(matches!(unsafe { sf_report_is_degraded(report) }, 0 | 1));
    let json = unsafe { sf_report_to_json(report) };
    assert!(unsafe { CStr::from_ptr(json) }
        .to_str()
        .unwrap()
        .contains("global_peaks"));
    unsafe {
        sf_string_free(json);
        sf_report_free(report);
    }
    assert!(out.join("report.json").is_file());
}

#[test]
fn failed_run_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (b, o) = (
        cstr(dir.path().join("nothing").to_str().unwrap()),
        cstr(dir.path().join("out").to_str().unwrap()),
    );
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { sf_run(ptr::null(), b.as_ptr(), o.as_ptr(), &mut report) },
        SfStatus::Io
    );
    assert!(report.is_null());
    let v: serde_json::Value = serde_json::from_str(&last_error()).unwrap();
    assert_eq!(v["error"]["stage"], "track");
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/strainforge.h")).unwrap();
    for name in [
        "typedef struct SfStudy SfStudy",
        "typedef struct SfReport SfReport",
        "SF_STATUS_OK = 0",
        "SF_STATUS_IO = 4",
        "sf_run(",
        "sf_last_error(",
        "sf_green_lagrange(",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
    assert_eq!(
        unsafe { CStr::from_ptr(sf_version()) }.to_str().unwrap(),
        env!("CARGO_PKG_VERSION")
    );
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("skipped: no C compiler found");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"strainforge.h\"\n\
         int main(void) {\n\
           double f[9] = {1.2, 0, 0, 0, 1, 0, 0, 0, 1}, e[9];\n\
           SfStatus s = sf_green_lagrange(f, e);\n\
           SfReport *r = NULL;\n\
           (void)sf_run(NULL, \"in\", \"out\", &r);\n\
           sf_report_free(r);\n\
           return s == SF_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
