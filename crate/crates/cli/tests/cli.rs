mod common;

use std::path::Path;

use common::{assert_same_tree, bundled_config, data_dir, mrp, stderr};
use mrp_core::poststrat::REPORT_HEADER;

fn run_ok(args: &[&str]) {
    let out = mrp(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn bundled_run_is_complete_and_repeatable() {
    let cfg = bundled_config();
    let cfg = cfg.to_str().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = d.path().to_str().unwrap();
        for cmd in ["fit", "report", "scores"] {
            run_ok(&[cmd, "-c", cfg, "-o", out, "--draws", "300"]);
        }
    }
    let a = dirs[0].path();
    assert_same_tree(a, dirs[1].path());

    let posteriors: Vec<_> = common::tree(&a.join("fit"))
        .into_iter()
        .filter(|p| p.to_str().unwrap().ends_with("_I.csv"))
        .collect();
    assert_eq!(posteriors.len(), 7, "{posteriors:?}");

    let table = lines(&a.join("report/table_I.csv"));
    assert_eq!(table[0], REPORT_HEADER.join(","));
    assert_eq!(table.len(), 8);
    // Every bundled official figure is far from the synthetic truth.
    assert!(table[1].starts_with("Lukashenka,0.8010***,"), "{}", table[1]);
    for row in &table[1..] {
        let official = row.split(',').nth(1).unwrap();
        assert!(official.ends_with('*') || official.ends_with('.'), "{row}");
    }
    let panels = lines(&a.join("report/panels/Lukashenka_I.csv"));
    assert_eq!(panels.len(), 1 + 21);
    let scores = lines(&a.join("report/scores.csv"));
    assert_eq!(scores[0], "Event,MLIK_(I),WAIC_(I),MBRIER^.975_(I)");
    assert_eq!(scores.len(), 8);
    assert_eq!(lines(&a.join("scores/scores.csv")), scores);
    for dir in ["fit", "report", "scores"] {
        let m = std::fs::read_to_string(a.join(dir).join("manifest.txt")).unwrap();
        assert!(m.contains(&format!("command = {dir}")));
        assert!(m.contains("seed = 2020"));
        assert!(m.lines().any(|l| l.starts_with("config_sha256 = ") && l.len() == 16 + 64));
    }

    // Officials placed on each posterior median are inside every interval.
    let officials = a.join("medians.csv");
    let mut text = String::from("event,official\n");
    for row in &table[1..] {
        let f: Vec<&str> = row.split(',').collect();
        text += &format!("{},{}\n", f[0], f[4]);
    }
    std::fs::write(&officials, text).unwrap();
    run_ok(&[
        "report",
        "-c",
        cfg,
        "-o",
        a.to_str().unwrap(),
        "--draws",
        "300",
        "--official",
        officials.to_str().unwrap(),
    ]);
    let table = lines(&a.join("report/table_I.csv"));
    for row in &table[1..] {
        assert!(row.ends_with(",inside"), "{row}");
        assert!(!row.split(',').nth(1).unwrap().contains('*'), "{row}");
    }
}

#[test]
fn unknown_event_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrp(&[
        "fit",
        "-c",
        bundled_config().to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
        "--events",
        "Lukashenka,Pazniak",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Pazniak"), "{}", stderr(&out));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[paths]\nviber = \"{0}/viber.csv\"\nstreet = \"nowhere.csv\"\ncensus = \"{0}/census.csv\"\noutput = \"out\"\n",
            data_dir().display()
        ),
    )
    .unwrap();
    let out = mrp(&["fit", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("paths.street"), "{}", stderr(&out));
}

#[test]
fn report_before_fit_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrp(&[
        "report",
        "-c",
        bundled_config().to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
        "--events",
        "Cherachen",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing artifact"), "{}", stderr(&out));
}

#[test]
fn thread_count_must_be_positive() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mrp"))
        .args(["simulate", "-o", "/nonexistent"])
        .env("MRP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("MRP_THREADS"));
}

#[test]
fn unknown_subcommand_flag_exits_2() {
    let out = mrp(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cluster_report_is_repeatable_and_k_max_one_is_single_cluster() {
    let cfg = bundled_config();
    let cfg = cfg.to_str().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_ok(&["cluster", "-c", cfg, "-o", d.path().to_str().unwrap(), "--k-max", "3"]);
    }
    assert_same_tree(dirs[0].path(), dirs[1].path());
    let bic = lines(&dirs[0].path().join("cluster/bic.csv"));
    assert_eq!(bic.len(), 4);
    assert!(bic[3].ends_with(",true"), "{bic:?}");

    let one = tempfile::tempdir().unwrap();
    run_ok(&["cluster", "-c", cfg, "-o", one.path().to_str().unwrap(), "--k-max", "1"]);
    let bic = lines(&one.path().join("cluster/bic.csv"));
    assert_eq!(bic.len(), 2);
    assert!(bic[1].starts_with("1,") && bic[1].ends_with(",true"));
    let sizes: Vec<String> = lines(&one.path().join("cluster/profiles.csv"))
        .into_iter()
        .filter(|l| l.contains(",size,"))
        .collect();
    assert_eq!(sizes.len(), 1, "{sizes:?}");
    let size: f64 = sizes[0].rsplit(',').next().unwrap().parse().unwrap();
    assert!((size - 1.0).abs() < 1e-12, "{size}");
}

#[test]
fn simulate_is_deterministic_and_readable() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_ok(&[
            "simulate",
            "-o",
            d.path().to_str().unwrap(),
            "--viber-rows",
            "400",
            "--street-rows",
            "50",
            "--seed",
            "9",
        ]);
    }
    assert_same_tree(dirs[0].path(), dirs[1].path());
    let p = dirs[0].path();
    assert_eq!(lines(&p.join("viber.csv")).len(), 401);
    assert_eq!(lines(&p.join("street.csv")).len(), 51);
    assert_eq!(lines(&p.join("census.csv")).len(), 701);
    assert_eq!(lines(&p.join("truth.csv")).len(), 8);
}
