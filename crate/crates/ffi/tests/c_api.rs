use std::ffi::{CStr, CString};
use std::ptr;

use dsqp_ffi::*;

fn last_error() -> String {
    let p = dsqp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut DsqpProblem {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { dsqp_problem_load(name.as_ptr(), 0, &mut p) }, DsqpStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn solve_p1_both_methods_and_compare() {
    let problem = load("P1");
    let mut n = 0usize;
    unsafe {
        assert_eq!(dsqp_problem_num_vars(problem, &mut n), DsqpStatus::Ok);
        assert_eq!(n, 4);
        let mut s = 0usize;
        assert_eq!(dsqp_problem_num_subsystems(problem, &mut s), DsqpStatus::Ok);
        assert_eq!(s, 2);
        let mut nc = 0usize;
        assert_eq!(dsqp_problem_num_coupling(problem, &mut nc), DsqpStatus::Ok);
        assert_eq!(nc, 1);

        let mut cfg = ptr::null_mut();
        assert_eq!(dsqp_config_new(&mut cfg), DsqpStatus::Ok);
        assert_eq!(dsqp_config_set_schedule(cfg, DsqpSchedule::Residual, 1.0), DsqpStatus::Ok);

        let mut xs = Vec::new();
        for method in [DsqpMethod::Decentralized, DsqpMethod::Baseline] {
            let mut r = ptr::null_mut();
            assert_eq!(dsqp_solve(problem, cfg, method, &mut r), DsqpStatus::Ok);
            let mut st = DsqpSolveStatus::OuterLimit;
            assert_eq!(dsqp_result_status(r, &mut st), DsqpStatus::Ok);
            assert_eq!(st, DsqpSolveStatus::Converged);
            let mut res = 1.0;
            assert_eq!(dsqp_result_residual(r, &mut res), DsqpStatus::Ok);
            assert!(res <= 1e-8);
            let (mut outer, mut inner) = (0usize, 0usize);
            assert_eq!(dsqp_result_iterations(r, &mut outer, &mut inner), DsqpStatus::Ok);
            assert!(outer > 0);
            let mut floats = 0usize;
            assert_eq!(dsqp_result_floats_sent(r, &mut floats), DsqpStatus::Ok);
            if method == DsqpMethod::Decentralized {
                // One coupling row, two floats per inner iteration.
                assert_eq!(floats, 2 * inner);
            } else {
                assert_eq!((inner, floats), (0, 0));
            }
            let mut x = vec![0.0; 4];
            let mut needed = 0usize;
            assert_eq!(dsqp_result_primal(r, x.as_mut_ptr(), x.len(), &mut needed), DsqpStatus::Ok);
            assert_eq!(needed, 4);
            xs.push(x);
            dsqp_result_free(r);
        }
        let d = xs[0].iter().zip(&xs[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-6, "methods disagree by {d}");
        dsqp_config_free(cfg);
        dsqp_problem_free(problem);
    }
}

#[test]
fn null_config_uses_defaults() {
    let problem = load("net3");
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(dsqp_solve(problem, ptr::null(), DsqpMethod::Decentralized, &mut r), DsqpStatus::Ok);
        let mut st = DsqpSolveStatus::OuterLimit;
        assert_eq!(dsqp_result_status(r, &mut st), DsqpStatus::Ok);
        assert_eq!(st, DsqpSolveStatus::Converged);
        dsqp_result_free(r);
        dsqp_problem_free(problem);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut p = ptr::null_mut();
        let bad = CString::new("p9").unwrap();
        assert_eq!(dsqp_problem_load(bad.as_ptr(), 0, &mut p), DsqpStatus::UnknownProblem);
        assert!(p.is_null());
        assert!(last_error().contains("p9"));

        assert_eq!(dsqp_problem_load(ptr::null(), 0, &mut p), DsqpStatus::NullPointer);
        let mut n = 0usize;
        assert_eq!(dsqp_problem_num_vars(ptr::null(), &mut n), DsqpStatus::NullPointer);

        let problem = load("P1");
        let mut cfg = ptr::null_mut();
        assert_eq!(dsqp_config_new(&mut cfg), DsqpStatus::Ok);
        assert_eq!(dsqp_config_set_eta0(cfg, 1.5), DsqpStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(dsqp_solve(problem, cfg, DsqpMethod::Decentralized, &mut r), DsqpStatus::ConfigError);
        assert!(r.is_null());
        assert!(last_error().contains("eta0 out of (0,1)"));
        assert_eq!(dsqp_config_set_iteration_limits(cfg, 0, 10), DsqpStatus::InvalidArgument);

        assert_eq!(dsqp_config_set_eta0(cfg, 0.5), DsqpStatus::Ok);
        assert_eq!(dsqp_solve(problem, cfg, DsqpMethod::Baseline, &mut r), DsqpStatus::Ok);
        let mut needed = 0usize;
        let mut small = [0.0; 2];
        assert_eq!(dsqp_result_primal(r, small.as_mut_ptr(), 2, &mut needed), DsqpStatus::BufferTooSmall);
        assert_eq!(needed, 4);
        assert_eq!(small, [0.0; 2]);
        dsqp_result_free(r);
        dsqp_config_free(cfg);
        dsqp_problem_free(problem);
        // Freeing NULL is a no-op.
        dsqp_problem_free(ptr::null_mut());
        dsqp_config_free(ptr::null_mut());
        dsqp_result_free(ptr::null_mut());
    }
}

#[test]
fn outer_limit_is_a_result_not_an_error() {
    let problem = load("P1");
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(dsqp_config_new(&mut cfg), DsqpStatus::Ok);
        assert_eq!(dsqp_config_set_iteration_limits(cfg, 2, 10_000), DsqpStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(dsqp_solve(problem, cfg, DsqpMethod::Decentralized, &mut r), DsqpStatus::Ok);
        let mut st = DsqpSolveStatus::Converged;
        assert_eq!(dsqp_result_status(r, &mut st), DsqpStatus::Ok);
        assert_eq!(st, DsqpSolveStatus::OuterLimit);
        dsqp_result_free(r);
        dsqp_config_free(cfg);
        dsqp_problem_free(problem);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dsqp.h")).unwrap();
    for sym in [
        "DSQP_H",
        "typedef struct DsqpProblem DsqpProblem",
        "DSQP_STATUS_OK",
        "DSQP_SOLVE_STATUS_INNER_STALL",
        "dsqp_last_error_message",
        "dsqp_problem_load",
        "dsqp_solve",
        "dsqp_result_primal",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let Ok(exe) = std::env::current_exe() else { return };
    // target/<profile>/deps/<test> -> target/<profile>/libdsqp_ffi.a
    let lib_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = lib_dir.join("libdsqp_ffi.a");
    if std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    // `cargo test` only builds the rlib; refresh the static library.
    let mut cmd = std::process::Command::new(env!("CARGO"));
    cmd.args(["build", "-q", "-p", "dsqp-ffi", "--lib"]);
    if lib_dir.ends_with("release") {
        cmd.arg("--release");
    }
    let built = cmd
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .unwrap();
    assert!(built.success() && lib.exists(), "static library build failed");
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = std::env::temp_dir().join(format!("dsqp_smoke_{}", std::process::id()));
    let status = std::process::Command::new("cc")
        .arg(format!("{dir}/tests/c/smoke.c"))
        .arg(format!("-I{dir}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = std::process::Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("status=0"));
}
