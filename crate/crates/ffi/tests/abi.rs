use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fluidq_ffi::*;

fn last_error() -> String {
    let p = fluidq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn two_state(q: [f64; 4]) -> *mut FluidqModel {
    let mut model = ptr::null_mut();
    let st = unsafe { fluidq_model_new(q.as_ptr(), [1.0, -1.0].as_ptr(), 2, &mut model) };
    assert_eq!(st, FluidqStatus::Ok);
    model
}

fn solve(model: *const FluidqModel) -> *mut FluidqSolution {
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { fluidq_solve(model, FluidqAlgorithm::Newton, 0.0, 0, &mut sol) }, FluidqStatus::Ok);
    sol
}

#[test]
fn recurrent_model_round_trip() {
    let model = two_state([-2.0, 2.0, 1.0, -1.0]);
    let (mut m, mut up, mut down, mut zero) = (0, 0, 0, 0);
    assert_eq!(unsafe { fluidq_model_dims(model, &mut m, &mut up, &mut down, &mut zero) }, FluidqStatus::Ok);
    assert_eq!((m, up, down, zero), (2, 1, 1, 0));
    let mut drift = 0.0;
    let mut regime = FluidqRegime::Transient;
    assert_eq!(unsafe { fluidq_model_drift(model, &mut drift, &mut regime) }, FluidqStatus::Ok);
    assert!((drift + 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(regime, FluidqRegime::PositiveRecurrent);

    let sol = solve(model);
    let mut psi = [0.0];
    assert_eq!(unsafe { fluidq_solution_psi(sol, psi.as_mut_ptr(), 1) }, FluidqStatus::Ok);
    assert!((psi[0] - 1.0).abs() < 1e-12);

    let mut cdf = [0.0; 2];
    assert_eq!(unsafe { fluidq_stationary_cdf(sol, 2f64.ln(), cdf.as_mut_ptr(), 2) }, FluidqStatus::Ok);
    assert!((cdf[0] - 1.0 / 6.0).abs() < 1e-10 && (cdf[1] - 0.5).abs() < 1e-10);

    let mut esc = [0.0; 4];
    let l = 2f64.ln();
    assert_eq!(unsafe { fluidq_escape(sol, l, l, esc.as_mut_ptr(), 4) }, FluidqStatus::Ok);
    let want = [3.0 / 7.0, 4.0 / 7.0, 1.0 / 7.0, 6.0 / 7.0];
    for (x, y) in esc.iter().zip(want) {
        assert!((x - y).abs() < 1e-10);
    }

    let before = esc;
    assert_eq!(unsafe { fluidq_escape(sol, 1.0, 1.0, esc.as_mut_ptr(), 3) }, FluidqStatus::BufferTooSmall);
    assert_eq!(esc, before);
    assert!(last_error().contains("4 needed"));

    unsafe {
        fluidq_solution_free(sol);
        fluidq_model_free(model);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    let bad = [-1.0, 2.0, 1.0, -1.0];
    assert_eq!(
        unsafe { fluidq_model_new(bad.as_ptr(), [1.0, -1.0].as_ptr(), 2, &mut model) },
        FluidqStatus::InvalidInput
    );
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    let json = CString::new("{\"generator\": [[-1, 1], [2, -2]], \"rates\": [1, -1]}").unwrap();
    assert_eq!(unsafe { fluidq_model_from_json(json.as_ptr(), &mut model) }, FluidqStatus::Ok);
    let sol = solve(model);
    let mut cdf = [0.0; 2];
    assert_eq!(unsafe { fluidq_stationary_cdf(sol, 1.0, cdf.as_mut_ptr(), 2) }, FluidqStatus::Regime);
    assert!(last_error().contains("Transient"));

    let garbage = CString::new("{not json").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { fluidq_model_from_json(garbage.as_ptr(), &mut other) }, FluidqStatus::InvalidInput);
    assert_eq!(unsafe { fluidq_solution_psi(ptr::null(), cdf.as_mut_ptr(), 2) }, FluidqStatus::NullPointer);

    unsafe {
        fluidq_solution_free(sol);
        fluidq_model_free(model);
        fluidq_model_free(ptr::null_mut());
    }
}

#[test]
fn functional_and_newton_agree() {
    let model = two_state([-1.0, 1.0, 2.0, -2.0]);
    let mut sols = [ptr::null_mut(); 2];
    for (k, alg) in [FluidqAlgorithm::Newton, FluidqAlgorithm::Functional].into_iter().enumerate() {
        assert_eq!(unsafe { fluidq_solve(model, alg, 1e-12, 0, &mut sols[k]) }, FluidqStatus::Ok);
    }
    let mut psi = [[0.0]; 2];
    let mut iters = [0usize; 2];
    for k in 0..2 {
        unsafe {
            fluidq_solution_psi(sols[k], psi[k].as_mut_ptr(), 1);
            fluidq_solution_stats(sols[k], &mut iters[k], ptr::null_mut(), ptr::null_mut());
        }
    }
    assert!((psi[0][0] - 0.5).abs() < 1e-12 && (psi[1][0] - 0.5).abs() < 1e-12);
    assert!(iters[0] < iters[1]);
    unsafe {
        sols.iter().for_each(|&s| fluidq_solution_free(s));
        fluidq_model_free(model);
    }
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/fluidq.h");
    assert!(header.exists(), "header not generated");
    let exe_dir = std::env::current_exe().unwrap();
    let profile_dir = exe_dir.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libfluidq_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let Ok(cc) = which_cc() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let values: Vec<f64> =
        String::from_utf8(run.stdout).unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    let want = [1.0, 1.0 / 6.0, 0.5, 3.0 / 7.0];
    for (x, y) in values.iter().zip(want) {
        assert!((x - y).abs() < 1e-10, "{values:?}");
    }
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
