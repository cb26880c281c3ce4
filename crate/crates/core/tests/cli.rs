use std::path::Path;
use std::process::{Command, Output};

fn picsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_picsim")).args(args).output().expect("binary runs")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn every_subcommand_writes_trace_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, config, table) in [
        ("rtt-dist", "rtt_day.toml", "hist_3g_network.csv"),
        ("compare-protocols", "compare_hour.toml", "retrievals.csv"),
        ("duty-cycle", "duty_small.toml", "duty.csv"),
        ("local-sched", "local_small.toml", "messages.csv"),
    ] {
        let out = dir.path().join(cmd);
        let o = picsim(&[cmd, "--config", &data(config), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for f in ["trace.jsonl", "summary.json", table] {
            assert!(out.join(f).is_file(), "{cmd} did not write {f}");
        }
    }
}

#[test]
fn svg_format_renders_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let o = picsim(&["rtt-dist", "--config", &data("rtt_day.toml"), "--out", dir.path().to_str().unwrap(), "--format", "svg"]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("hist_3g_network.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn seed_flag_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |seed: &str| {
        let out = dir.path().join(seed);
        let o = picsim(&["duty-cycle", "--config", &data("duty_small.toml"), "--seed", seed, "--out", out.to_str().unwrap()]);
        let text = String::from_utf8(o.stdout).unwrap();
        text.lines().find(|l| l.starts_with("trace digest")).unwrap().to_string()
    };
    assert_eq!(digest("5"), digest("5"));
    assert_ne!(digest("5"), digest("6"));
}

#[test]
fn bad_config_exits_with_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\n[fleet]\nmeters = 4\n").unwrap();
    let o = picsim(&["duty-cycle", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fleet"));

    let o = picsim(&["duty-cycle", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_and_preset_conflict() {
    let o = picsim(&["duty-cycle", "--config", "a.toml", "--preset", "default"]);
    assert!(!o.status.success());
}

#[test]
fn replay_accepts_reference_and_rejects_tampered_trace() {
    let o = picsim(&["replay", &data("duty_small.jsonl")]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("identical"));

    let dir = tempfile::tempdir().unwrap();
    let tampered = dir.path().join("t.jsonl");
    let text = std::fs::read_to_string(data("duty_small.jsonl")).unwrap();
    std::fs::write(&tampered, text.replacen("\"confirmed\"", "\"failed\"", 1)).unwrap();
    let o = picsim(&["replay", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("diverged"));
}

#[test]
fn failing_check_exits_with_3_only_under_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("strict.toml");
    // expected speedups the default links cannot reach
    std::fs::write(
        &path,
        "version = 1\nduration = 3600.0\n[compare]\nretrievals = 20\npush_duration = 3600.0\n\
         [compare.expect_speedups]\npower_only = 4.4\nwith_status = 8.4\ntolerance = 0.05\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let args = ["compare-protocols", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert!(picsim(&args).status.success());
    let mut strict = args.to_vec();
    strict.push("--check");
    let o = picsim(&strict);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL speedup_power_only"));
}
