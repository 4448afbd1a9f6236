use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sav_nls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sav-nls"))
        .args(args)
        .env("SAV_NLS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL: &[&str] = &["--problem", "soliton", "--M", "80", "--p", "2", "--k", "2", "--T", "0.4"];

#[test]
fn run_writes_timeseries_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "--tau", "0.1", "--check", "--out-dir", out];
    args.extend_from_slice(SMALL);
    let o = sav_nls(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let ts = rows(&dir.path().join("timeseries.csv"));
    assert_eq!(
        ts[0].join(","),
        "t,mass,mass_drift,sav_energy,sav_energy_drift,original_energy,h1_error,newton_iters"
    );
    assert_eq!(ts.len(), 1 + 5);
    for row in &ts[1..] {
        let drift: f64 = row[2].parse().unwrap();
        assert!(drift.abs() <= 1e-10);
        let iters: usize = row[7].parse().unwrap();
        assert!(iters <= 10);
        assert!(row[0].contains('e'));
    }
    let summary = rows(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 2);
    let status = summary[0].iter().position(|h| h == "status").unwrap();
    assert_eq!(summary[1][status], "ok");
}

#[test]
fn output_is_byte_for_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut args = vec!["run", "--tau", "0.2", "--out-dir", dir.path().to_str().unwrap()];
        args.extend_from_slice(SMALL);
        assert_eq!(sav_nls(&args).status.code(), Some(0));
    }
    for name in ["timeseries.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn zero_initial_condition_has_no_drift() {
    let dir = tempfile::tempdir().unwrap();
    let o = sav_nls(&[
        "run", "--problem", "custom", "--amplitude", "0", "--M", "20", "--p", "2", "--k", "2", "--tau", "0.1", "--T",
        "0.5", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let ts = rows(&dir.path().join("timeseries.csv"));
    for row in &ts[1..] {
        for col in [2, 4] {
            assert!(row[col].parse::<f64>().unwrap().abs() <= 1e-14);
        }
        assert_eq!(row[6], "");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# small soliton\nproblem = soliton\nM = 40\np = 2\nk = 1\ntau = 0.3\nT = 0.6\n",
    )
    .unwrap();
    // tau = 0.3 with T = 0.6 is fine; overriding T to 1 is not
    let out = dir.path().to_str().unwrap();
    let ok = sav_nls(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = sav_nls(&["run", "--config", cfg.to_str().unwrap(), "--T", "1", "--out-dir", out]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains('T'));
    let fixed = sav_nls(&["run", "--config", cfg.to_str().unwrap(), "--T", "1", "--tau", "0.25", "--out-dir", out]);
    assert_eq!(fixed.status.code(), Some(0));
    assert_eq!(rows(&dir.path().join("timeseries.csv")).len(), 1 + 5);
}

#[test]
fn usage_errors() {
    assert_eq!(sav_nls(&[]).status.code(), Some(2));
    assert_eq!(sav_nls(&["run", "--nonsense", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "problem = soliton\ncolour = blue\n").unwrap();
    let o = sav_nls(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    // sweeps need a closed-form solution
    let o = sav_nls(&[
        "sweep-time", "--problem", "custom", "--M", "10", "--p", "1", "--k", "1", "--T", "1", "--tau_list", "0.5,0.25",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn newton_failure_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--tau", "0.1", "--max_newton_iters", "1", "--out-dir", dir.path().to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = sav_nls(&args);
    assert_eq!(o.status.code(), Some(3));
    let ts = rows(&dir.path().join("timeseries.csv"));
    assert_eq!(ts.len(), 3);
    assert_eq!(ts[2][7], "-1");
    let summary = rows(&dir.path().join("summary.csv"));
    assert_eq!(summary[1].last().unwrap(), "failed");
}

#[test]
fn time_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sav_nls(&[
        "sweep-time", "--problem", "plane_wave", "--a", "0", "--b", "6.283185307179586", "--wavenumber", "1",
        "--kappa", "1", "--amplitude", "0.5", "--M", "64", "--p", "3", "--k", "1", "--T", "1", "--tau_list",
        "1/4, 1/8, 1/16", "--out-dir", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = rows(&dir.path().join("time_convergence.csv"));
    assert_eq!(t[0].join(","), "k,tau,linf_h1_error,eoc");
    assert_eq!(t.len(), 4);
    assert_eq!(t[1][3], "");
    for row in &t[2..] {
        let order: f64 = row[3].parse().unwrap();
        assert!((1.8..2.3).contains(&order), "{order}");
    }

    let single = sav_nls(&[
        "sweep-time", "--problem", "soliton", "--M", "40", "--p", "1", "--k", "1", "--T", "0.5", "--tau_list", "0.25",
        "--out-dir", out,
    ]);
    assert_eq!(single.status.code(), Some(0));
    let t = rows(&dir.path().join("time_convergence.csv"));
    assert_eq!(t.len(), 2);
    assert_eq!(t[1][3], "");
}

#[test]
fn space_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = sav_nls(&[
        "sweep-space", "--problem", "plane_wave", "--a", "0", "--b", "6.283185307179586", "--wavenumber", "2",
        "--kappa", "0", "--M_list", "8,16,32", "--p", "1", "--k", "2", "--tau", "0.05", "--T", "0.5",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = rows(&dir.path().join("space_convergence.csv"));
    assert_eq!(t[0].join(","), "p,M,linf_h1_error,eoc");
    assert_eq!(t[1][1], "8");
    let order: f64 = t[3][3].parse().unwrap();
    assert!((0.9..1.2).contains(&order), "{order}");
}

#[test]
fn shipped_presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let pairs = sav_nls::cli::config::read_pairs(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(!pairs.is_empty());
        sav_nls::cli::parse_config(Some(&path), &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4);
}
