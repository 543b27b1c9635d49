use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use covsteer::document::SolutionDocument;
use covsteer_ffi::*;

fn load(name: &str) -> CString {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    CString::new(std::fs::read_to_string(path).unwrap()).unwrap()
}

fn scenario(name: &str) -> *mut CsScenario {
    let json = load(name);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { cs_scenario_from_json(json.as_ptr(), &mut s) }, CsStatus::Ok);
    s
}

fn last_error() -> String {
    let p = cs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(cs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn steer_and_export_document() {
    let s = scenario("two_state");
    unsafe {
        assert_eq!(cs_scenario_state_dim(s), 2);
        assert_eq!(cs_scenario_is_stationary(s), 0);
        let mut h = ptr::null_mut();
        assert_eq!(cs_steer(s, CsMethod::Shooting, &mut h), CsStatus::Ok);
        assert_eq!(cs_incentive_dim(h), 2);
        assert!(cs_incentive_terminal_residual(h) < 1e-6);
        let mut f = [0.0; 4];
        assert_eq!(cs_incentive_terminal_cost(h, f.as_mut_ptr(), 4), CsStatus::Ok);
        assert_eq!(f[1], f[2]);

        let json = cs_incentive_to_json(h);
        assert!(!json.is_null());
        let doc = SolutionDocument::from_json(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        let back = doc.incentive().unwrap().f().unwrap();
        assert_eq!(back[(0, 1)], f[1]);
        assert_eq!(back[(1, 1)], f[3]);
        cs_string_free(json);
        cs_incentive_free(h);
        cs_scenario_free(s);
    }
}

#[test]
fn stationary_scalar_oracle() {
    let s = scenario("stationary_scalar");
    unsafe {
        assert_eq!(cs_scenario_is_stationary(s), 1);
        let mut h = ptr::null_mut();
        assert_eq!(cs_stationary_solve(s, &mut h), CsStatus::Ok);
        let (mut q, mut k1, mut k2) = ([0.0], [0.0], [0.0]);
        assert_eq!(cs_stationary_state_cost(h, q.as_mut_ptr(), 1), CsStatus::Ok);
        assert_eq!(cs_stationary_gain1(h, k1.as_mut_ptr(), 1), CsStatus::Ok);
        assert_eq!(cs_stationary_gain2(h, k2.as_mut_ptr(), 1), CsStatus::Ok);
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert!((k1[0] + 2f64.sqrt()).abs() < 1e-12);
        assert!((k2[0] - 1.0).abs() < 1e-12);
        assert!((cs_stationary_hurwitz_margin(h) - 1.0).abs() < 1e-12);
        assert_eq!(cs_stationary_epsilon_used(h), 0.0);
        let json = cs_stationary_to_json(h);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("\"kind\": \"stationary\""));
        cs_string_free(json);
        cs_stationary_free(h);
        cs_scenario_free(s);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(cs_scenario_from_json(ptr::null(), &mut s), CsStatus::NullPointer);

        let bad = load("bad_sigma0");
        assert_eq!(cs_scenario_from_json(bad.as_ptr(), &mut s), CsStatus::Validation);
        assert!(s.is_null());
        assert!(last_error().contains("Sigma0"));

        let junk = CString::new("{\"plant\": 3}").unwrap();
        assert_eq!(cs_scenario_from_json(junk.as_ptr(), &mut s), CsStatus::Validation);

        let inf = scenario("stationary_infeasible");
        let mut h = ptr::null_mut();
        assert_eq!(cs_stationary_solve(inf, &mut h), CsStatus::Infeasible);
        assert!(h.is_null());
        assert!(last_error().contains("3 vs 2"));

        let mut ih = ptr::null_mut();
        assert_eq!(cs_steer(inf, CsMethod::Shooting, &mut ih), CsStatus::WrongKind);
        cs_scenario_free(inf);

        let eq = scenario("stationary_equal_channels");
        assert_eq!(cs_stationary_solve(eq, &mut h), CsStatus::NoConvergence);
        cs_scenario_free(eq);

        let g = scenario("golden");
        assert_eq!(cs_stationary_solve(g, &mut h), CsStatus::WrongKind);
        cs_scenario_free(g);
    }
}

#[test]
fn success_clears_last_error() {
    unsafe {
        let mut s = ptr::null_mut();
        cs_scenario_from_json(ptr::null(), &mut s);
        assert!(!cs_last_error_message().is_null());
        let s = scenario("stationary_scalar");
        assert!(cs_last_error_message().is_null());
        cs_scenario_free(s);
    }
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut s = ptr::null_mut();
        cs_scenario_from_json(ptr::null(), &mut s);
    }
    std::thread::spawn(|| assert!(cs_last_error_message().is_null()))
        .join()
        .unwrap();
    assert!(last_error().contains("NULL"));
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        cs_scenario_free(ptr::null_mut());
        cs_incentive_free(ptr::null_mut());
        cs_stationary_free(ptr::null_mut());
        cs_string_free(ptr::null_mut());
        assert_eq!(cs_scenario_state_dim(ptr::null()), 0);
        assert!(cs_incentive_terminal_residual(ptr::null()).is_nan());
        assert!(cs_incentive_to_json(ptr::null()).is_null());
        let mut x = [0.0];
        assert_eq!(
            cs_stationary_state_cost(ptr::null(), x.as_mut_ptr(), 1),
            CsStatus::NullPointer
        );
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/covsteer.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20, "{exports:?}");
    for name in exports {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(text.contains("typedef struct CsScenario CsScenario;"));
    assert!(text.contains("CS_STATUS_BUFFER_TOO_SMALL = 8"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("cc not found, skipping");
        return;
    };
    assert!(probe.status.success());
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
