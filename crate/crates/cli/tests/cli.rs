use std::path::Path;
use std::process::{Command, Output};

fn bdris(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdris"))
        .args(args)
        .env("BDRIS_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn scenario_summary_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = bdris(dir.path(), &["scenario", "--m", "1", "--quadrature-order", "8"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.contains("1 (1x1 grid)"), "{s}");
    assert!(s.contains("wavelength"));
    let cached: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(cached.len(), 1);

    let json = bdris(dir.path(), &["scenario", "--m", "1", "--quadrature-order", "8", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["m"], 1);
    assert_eq!(v["max_offdiag_abs"], 0.0);
}

#[test]
fn config_file_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "frequency_ghz = 28.0\ntx_xyz = [5.0, -5.0, 3.0]\nrx_xyz = [5.0, 5.0, 1.0]\nm = 4\ngroup_size = 4\nquadrature_order = 8\n").unwrap();
    let out = bdris(dir.path(), &["scenario", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(64));
    assert!(text(&out.stderr).contains("spacing_over_lambda"), "{}", text(&out.stderr));
}

#[test]
fn indivisible_groups_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bdris(dir.path(), &["optimize", "--m", "16", "--g", "3", "--no-cache"]);
    assert_eq!(out.status.code(), Some(64));
    let out = bdris(dir.path(), &["optimize", "--delta", "nope"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn optimize_writes_trace_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = bdris(
        dir.path(),
        &["optimize", "--m", "2", "--g", "1", "--d", "0.25", "--quadrature-order", "8", "--max-iter", "5", "--out", out_dir.to_str().unwrap()],
    );
    // Five iterations are not enough to meet the stopping rule.
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,c_linearized,gain_exact\n"));
    assert_eq!(trace.lines().count(), 7);
    let result: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["record"]["arch"], "FC");
    assert_eq!(result["result"]["termination"], "max_iter");
    assert_eq!(result["result"]["z_i"]["G"], 1);

    let sc = bdris(dir.path(), &["optimize", "--m", "1", "--quadrature-order", "8", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(sc.status.code(), Some(0), "{}", text(&sc.stderr));
}

#[test]
fn gain_sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = bdris(
            dir.path(),
            &["sweep-gain", "--m", "2", "--m", "4", "--d", "0.5", "--d", "0.25", "--group-size", "2", "--quadrature-order", "8", "--max-iter", "30", "--out", out_dir.to_str().unwrap()],
        );
        assert!(out.status.success(), "{}", text(&out.stderr));
        std::fs::read_to_string(out_dir.join("gain.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert!(a.starts_with("M,d_over_lambda,arch,mode,gain\n"));
    // 2 sizes x 2 spacings x 3 architectures x 2 modes.
    assert_eq!(a.lines().count(), 1 + 24);
    assert!(a.contains(",without_mc,"));
}

#[test]
fn convergence_sweep_has_one_trace_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c");
    let out = bdris(
        dir.path(),
        &["sweep-convergence", "--m", "4", "--d", "0.5", "--group-size", "2", "--quadrature-order", "8", "--max-iter", "10", "--out", out_dir.to_str().unwrap(), "--format", "json"],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(out_dir.join("convergence.json")).unwrap()).unwrap();
    let starts: Vec<_> = rows.iter().filter(|r| r["iteration"] == 0).map(|r| r["arch"].as_str().unwrap().to_string()).collect();
    assert_eq!(starts, ["SC", "GC", "FC"]);
}
