use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hategraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hategraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = hategraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_arg(p: &Path) -> String {
    p.display().to_string()
}

fn small_synth(dir: &Path) {
    let d = dir_arg(dir);
    ok(&["synth", "--dir", &d, "--nodes", "600", "--minority-fraction", "0.1", "--labeled", "300", "--seed", "5"]);
}

const FAST: &[&str] = &["--epochs", "2", "--hidden", "8", "--gbt-trees", "10", "--adaboost-rounds", "10"];

#[test]
fn evaluate_without_features_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let out = hategraph(&["evaluate", "--dir", &dir_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("features.csv"), "{err}");
}

#[test]
fn same_seed_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir_arg(dir.path());
    ok(&["features", "--dir", &d]);
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let mut args = vec!["evaluate", "--dir", &d, "--seed", "7", "--task", "hateful"];
        let o = dir_arg(&out);
        args.extend(["--out", &o]);
        args.extend(FAST);
        ok(&args);
        reports.push(fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let text = String::from_utf8(reports.swap_remove(0)).unwrap();
    assert!(text.starts_with("# hategraph"));
    assert!(text.contains("seed=7"));
    assert_eq!(text.lines().filter(|l| l.starts_with("hateful,")).count(), 6);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "seed = 1\nnode = 100\n").unwrap();
    let out = hategraph(&["synth", "--config", &dir_arg(&conf), "--dir", &dir_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("node"));
    assert!(!dir.path().join("edges.tsv").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir_arg(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "steps = 5\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["diffuse", "--dir", &d, "--config", &dir_arg(&conf), "--steps", "1", "--out", &dir_arg(&a)]);
    ok(&["diffuse", "--dir", &d, "--steps", "1", "--out", &dir_arg(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(&["diffuse", "--dir", &d, "--config", &dir_arg(&conf), "--out", &dir_arg(&b)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bad_flag_value_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hategraph(&["synth", "--dir", &dir_arg(dir.path()), "--nodes", "many"]);
    assert_eq!(out.status.code(), Some(1));
    let out = hategraph(&["synth", "--dir", &dir_arg(dir.path()), "--homophily", "0.0001", "--nodes", "100"]);
    assert_eq!(out.status.code(), Some(1));
    let out = hategraph(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_stage() {
    let out = hategraph(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for stage in [
        "ingest", "crawl", "diffuse", "stratify", "annotate-export", "annotate-import", "features", "stats",
        "train", "evaluate", "synth",
    ] {
        assert!(text.contains(stage), "{stage} missing from help");
    }
    let out = hategraph(&["crawl", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for f in ["--graph", "--budget", "--jump-weight", "--seed", "--out", "--threads", "--config"] {
        assert!(text.contains(f), "{f} missing from crawl help");
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn annotation_round_trip_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir_arg(dir.path());
    ok(&["diffuse", "--dir", &d]);
    ok(&["stratify", "--dir", &d, "--strata-cap", "5", "--seed", "2"]);
    ok(&["annotate-export", "--dir", &d]);

    let sheet = fs::read_to_string(dir.path().join("annotation.csv")).unwrap();
    let mut filled = String::new();
    let mut users = 0;
    for line in sheet.lines() {
        if line.starts_with('#') || line.starts_with("user_id") {
            filled.push_str(line);
        } else {
            let cut = line.strip_suffix(",,,,").expect("empty vote columns");
            filled.push_str(cut);
            filled.push_str(",hateful,hateful,normal,");
            users += 1;
        }
        filled.push('\n');
    }
    assert!(users > 0);
    fs::write(dir.path().join("annotation.csv"), filled).unwrap();
    let labels = dir.path().join("annotated.csv");
    ok(&["annotate-import", "--dir", &d, "--out", &dir_arg(&labels)]);
    let text = fs::read_to_string(&labels).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",hateful")).count(), users);

    ok(&["ingest", "--dir", &d]);
    ok(&["crawl", "--dir", &d, "--budget", "60", "--seed", "3"]);
    ok(&["features", "--dir", &d]);
    ok(&["stats", "--dir", &d]);
    let mut train = vec!["train", "--dir", &d, "--model-type", "sage"];
    train.extend(FAST);
    ok(&train);

    for f in files_under(dir.path()) {
        let text = fs::read_to_string(&f).unwrap();
        let headed = text.starts_with("# hategraph ")
            || (text.starts_with('{') && text.contains("\"provenance\""));
        assert!(headed, "{} has no provenance header", f.display());
    }
}
