//! End-to-end runs of the `levy-fp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levy_fp::table::Table;

fn levy_fp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levy-fp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn run_mode(mode: &str, out: &Path, overrides: &[&str]) -> Output {
    let out_flag = out.to_str().unwrap();
    let mut args = vec![mode, "--out", out_flag];
    args.extend_from_slice(overrides);
    levy_fp(&args)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(files_under(&path));
        } else {
            found.push(path);
        }
    }
    found.sort();
    found
}

/// Runs `mode`, checks exit status 0, and parses every file it wrote.
fn run_and_read(mode: &str, overrides: &[&str], expected: &[&str]) -> Vec<(PathBuf, Table)> {
    let dir = tempfile::tempdir().unwrap();
    let out = run_mode(mode, dir.path(), overrides);
    assert!(
        out.status.success(),
        "{mode} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let files = files_under(dir.path());
    for name in expected {
        assert!(
            files.iter().any(|f| f.ends_with(name)),
            "{mode} did not write {name}; got {files:?}"
        );
    }
    files
        .into_iter()
        .map(|f| {
            let table =
                Table::read(&f).unwrap_or_else(|e| panic!("{} does not parse: {e}", f.display()));
            assert!(!table.rows.is_empty(), "{} has no rows", f.display());
            assert_eq!(
                table.meta_value("levy_fp_version"),
                Some(env!("CARGO_PKG_VERSION"))
            );
            assert_eq!(table.meta_value("config.mode"), Some(mode));
            (f, table)
        })
        .collect()
}

#[test]
fn operator_test_mode() {
    let tables = run_and_read(
        "operator_test",
        &["s=0.3", "n_v_list=16,32"],
        &["operator_errors.csv"],
    );
    let t = &tables[0].1;
    assert_eq!(t.column("n_v").unwrap(), vec![16.0, 32.0]);
    let err = t.column("err_exp").unwrap();
    assert!(err[1] < err[0], "errors do not decrease: {err:?}");
}

/// Final relative mass error of a homogeneous relaxation at resolution `n_v`.
fn homogeneous_final_mass_error(n_v: usize) -> f64 {
    let n_v = format!("n_v={n_v}");
    let tables = run_and_read(
        "homogeneous",
        &["s=0.6", &n_v],
        &["relaxation.csv", "equilibrium.csv"],
    );
    let relax = &tables
        .iter()
        .find(|(p, _)| p.ends_with("relaxation.csv"))
        .unwrap()
        .1;
    let h = relax.column("H").unwrap();
    assert!(h.last().unwrap() < &h[0]);
    *relax.column("mass_error").unwrap().last().unwrap()
}

#[test]
fn homogeneous_mode() {
    // The discrete collision operator conserves mass only up to the
    // truncation of the algebraic tail, so the drift must shrink with N_v.
    let coarse = homogeneous_final_mass_error(32);
    let fine = homogeneous_final_mass_error(64);
    assert!(coarse < 0.1, "mass drift {coarse}");
    assert!(fine < 0.6 * coarse, "mass drift {coarse} -> {fine}");
}

#[test]
fn ap_mode_writes_snapshots() {
    let tables = run_and_read(
        "ap",
        &[
            "s=0.8",
            "eps=1e-3",
            "n_v=32",
            "n_x=16",
            "dt=0.01",
            "t=0.05",
            "snapshot_every=2",
        ],
        &[
            "diagnostics.csv",
            "f_000002.txt",
            "f_000005.txt",
            "rho_000005.txt",
        ],
    );
    let diag = &tables
        .iter()
        .find(|(p, _)| p.ends_with("diagnostics.csv"))
        .unwrap()
        .1;
    assert_eq!(diag.rows.len(), 6);
    let mass = diag.column("mass").unwrap();
    assert!((mass[5] - mass[0]).abs() < 1e-10 * mass[0]);
}

#[test]
fn imex_and_limit_modes() {
    let imex = run_and_read(
        "imex_reference",
        &["s=0.6", "n_v=32", "n_x=16", "dt=0.01", "t=0.03"],
        &["imex.csv", "f_000003.txt", "rho_000003.txt"],
    );
    let series = &imex
        .iter()
        .find(|(p, _)| p.ends_with("imex.csv"))
        .unwrap()
        .1;
    // Transport conserves mass exactly; the collision step drifts at the
    // truncation level.
    let mass = series.column("mass").unwrap();
    assert!((mass[3] - mass[0]).abs() < 1e-4 * mass[0]);

    let limit = run_and_read(
        "limit",
        &["s=0.6", "n_x=16", "dt=0.01", "t=0.03"],
        &["limit.csv"],
    );
    let series = &limit
        .iter()
        .find(|(p, _)| p.ends_with("limit.csv"))
        .unwrap()
        .1;
    assert_eq!(series.rows.len(), 4);
}

#[test]
fn sweep_modes() {
    let sweep = run_and_read(
        "eps_sweep",
        &[
            "s=0.8",
            "n_v=32",
            "n_x=16",
            "dt=0.01",
            "t=0.02",
            "eps_list=1e-2,1e-3",
        ],
        &[
            "eps_sweep.csv",
            "eps_00/diagnostics.csv",
            "eps_01/diagnostics.csv",
        ],
    );
    let summary = &sweep
        .iter()
        .find(|(p, _)| p.ends_with("eps_sweep.csv"))
        .unwrap()
        .1;
    assert!(summary.meta_value("ap_error_order").is_some());

    let refine = run_and_read(
        "dt_refinement",
        &[
            "s=0.8",
            "eps=1e-3",
            "n_v=32",
            "n_x=16",
            "dt=0.02",
            "t=0.04",
            "dt_levels=3",
        ],
        &["dt_refinement.csv", "dt_02/diagnostics.csv"],
    );
    let table = &refine
        .iter()
        .find(|(p, _)| p.ends_with("dt_refinement.csv"))
        .unwrap()
        .1;
    assert_eq!(table.rows.len(), 2);
    assert!(table.meta_value("slope").is_some());
}

#[test]
fn config_file_with_cli_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# limit run\nmode = limit\ns = 0.4\nn_x = 8\ndt = 0.1\nt = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = levy_fp(&[
        "limit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "s=0.7",
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let t = Table::read(&out.join("limit.csv")).unwrap();
    assert_eq!(t.meta_value("config.s"), Some("0.7"));
    assert_eq!(t.rows.len(), 6);
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["s=0.6", "eps=1e-2", "n_v=32", "n_x=16", "dt=0.01", "t=0.03"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        assert!(run_mode("ap", dir.path(), &args).status.success());
        let contents: Vec<(PathBuf, Vec<u8>)> = files_under(dir.path())
            .into_iter()
            .map(|p| {
                let bytes = fs::read(&p).unwrap();
                (p, bytes)
            })
            .collect();
        snapshots.push(contents);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn snapshot_feeds_back_as_initial_condition() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let grid = ["s=0.6", "n_v=32", "n_x=16", "dt=0.01"];
    let mut args = grid.to_vec();
    args.push("t=0.02");
    assert!(run_mode("imex_reference", &first, &args).status.success());
    let snap = first.join("f_000002.txt");
    let ic_file = format!("ic_file={}", snap.display());
    let mut args = grid.to_vec();
    args.extend(["t=0.01", "ic=custom_file", ic_file.as_str()]);
    let out = run_mode("imex_reference", &dir.path().join("second"), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        &["s=0.5", "bogus=1"][..],
        &["s=1.5"][..],
        &["s=0.5", "n_x=7"][..],
        &["s=0.5", "gamma=-1"][..],
    ] {
        let out = run_mode("limit", dir.path(), bad);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{bad:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = run_mode("ap", dir.path(), &["s=0.5"]);
    assert_eq!(out.status.code(), Some(2), "missing eps");
    let out = levy_fp(&["limit", "--config", "/nonexistent/levy.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_mode(
        "imex_reference",
        dir.path(),
        &[
            "s=0.5",
            "n_v=16",
            "n_x=8",
            "ic=custom_file",
            "ic_file=/nonexistent/f.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_mode(
        "imex_reference",
        dir.path(),
        &[
            "s=0.6",
            "n_v=32",
            "n_x=16",
            "dt=0.5",
            "t=0.5",
            "imex_transport=euler",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
