use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use herding_market::cli::{main_with_args, parse_config, ModelConfig};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["herding-market"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

fn run_in(out: &Path, args: &[&str]) -> i32 {
    let out = out.to_string_lossy().into_owned();
    let mut argv: Vec<&str> = args.to_vec();
    argv.extend(["--out", out.as_str()]);
    run(&argv)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["bogus"]), 2);
    assert_eq!(run(&["figure"]), 2);
    assert_eq!(run(&["simulate", "--format", "png"]), 2);
}

#[test]
fn commands_without_preset_need_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["simulate"]), 2);
    assert_eq!(run_in(dir.path(), &["figure", "9"]), 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let odd = write_config(dir.path(), "[model]\nkind = \"pure\"\nn = 101\nbeta = 0.3\ngamma = 0.8\n");
    assert_eq!(run_in(dir.path(), &["simulate", "--config", &odd]), 2);
    let unknown = write_config(dir.path(), "[model]\nkind = \"pure\"\nn = 100\nbeta = 0.3\ngamma = 0.8\nspeed = 1\n");
    assert_eq!(run_in(dir.path(), &["stationary", "--config", &unknown]), 2);
    let pure = configs().join("pure.toml");
    assert_eq!(run_in(dir.path(), &["simulate", "--config", pure.to_str().unwrap(), "--workers", "0"]), 2);
}

#[test]
fn event_budget_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nkind = \"pure\"\nn = 100\nbeta = 0.3\ngamma = 0.8\n[run]\nhorizon = 100.0\nevent_cap = 50\n",
    );
    assert_eq!(run_in(&dir.path().join("out"), &["simulate", "--config", &cfg]), 4);
}

#[test]
fn runaway_price_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"[model]
kind = "custom"
states = ["buyer"]
n = 10
alpha = 1e13
trading_intensity = [1.0]
transition_rate = [0.0]
transition_matrix = [[1.0]]
demand = [1.0]
signal_std = 0.0
initial_price = 1.0

[run]
horizon = 10.0
"#,
    );
    assert_eq!(run_in(&dir.path().join("out"), &["simulate", "--config", &cfg]), 3);
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let pure = configs().join("pure.toml");
    assert_eq!(run_in(&first, &["simulate", "--config", pure.to_str().unwrap(), "--seed", "5"]), 0);
    let original = tree(&first);
    let manifest: serde_json::Value = serde_json::from_slice(&original["manifest.json"]).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "simulate");
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len() + 1, original.len());
    for f in files {
        let name = f["name"].as_str().unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), herding_market::cli::sha256_hex(&original[name]));
    }

    // Rerun from nothing but the manifest.
    let cfg = write_config(dir.path(), manifest["config"].as_str().unwrap());
    let second = dir.path().join("second");
    let formats: Vec<&str> = manifest["formats"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    let formats = formats.join(",");
    let seed = manifest["seed"].to_string();
    let mut args: Vec<&str> = manifest["arguments"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    args.extend(["--config", &cfg, "--seed", &seed, "--format", &formats]);
    assert_eq!(run_in(&second, &args), 0);
    assert_eq!(tree(&second), original);
}

#[test]
fn seeds_change_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let pure = configs().join("pure.toml");
    let pure = pure.to_str().unwrap();
    assert_eq!(run_in(&dir.path().join("a"), &["simulate", "--config", pure, "--seed", "1"]), 0);
    assert_eq!(run_in(&dir.path().join("b"), &["simulate", "--config", pure, "--seed", "2"]), 0);
    assert_ne!(tree(&dir.path().join("a"))["trajectory_0.csv"], tree(&dir.path().join("b"))["trajectory_0.csv"]);
}

#[test]
fn format_selection() {
    let dir = tempfile::tempdir().unwrap();
    let pure = configs().join("pure.toml");
    assert_eq!(run_in(dir.path(), &["simulate", "--config", pure.to_str().unwrap(), "--format", "svg"]), 0);
    let names: Vec<String> = tree(dir.path()).into_keys().collect();
    assert!(names.iter().any(|n| n.ends_with(".svg")));
    assert!(!names.iter().any(|n| n.starts_with("trajectory_") && n.ends_with(".csv")));
}

#[test]
fn trajectory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let pure = configs().join("pure.toml");
    assert_eq!(run_in(dir.path(), &["simulate", "--config", pure.to_str().unwrap()]), 0);
    let text = String::from_utf8(tree(dir.path())["trajectory_0.csv"].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,price,v1,v2,kind");
    assert!(lines.next().unwrap().ends_with(",initial"));
    let mut last_t = 0.0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let t: f64 = fields[0].parse().unwrap();
        assert!(t > last_t);
        last_t = t;
        let (v1, v2): (f64, f64) = (fields[2].parse().unwrap(), fields[3].parse().unwrap());
        // Characters stay on the lattice k/n.
        assert!(((v1 * 100.0).round() - v1 * 100.0).abs() < 1e-9);
        assert!((v1 + v2 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stationary_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("stationary.toml");
    assert_eq!(run_in(dir.path(), &["stationary", "--config", cfg.to_str().unwrap()]), 0);
    let files = tree(dir.path());
    let report: serde_json::Value = serde_json::from_slice(&files["stationary.json"]).unwrap();
    assert_eq!(report["mode"], "bimodal");
    let text = String::from_utf8(files["stationary.csv"].clone()).unwrap();
    let total: f64 = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn figure_one_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["figure", "1", "--format", "csv"]), 0);
    let names: Vec<String> = tree(dir.path()).into_keys().collect();
    assert!(names.contains(&"figure1_gamma_0.8.csv".to_string()), "{names:?}");
    assert!(names.contains(&"figure1_gamma_1.2.csv".to_string()), "{names:?}");
}

#[test]
fn shipped_presets_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
    let fig2 = parse_config(&configs().join("fig2.toml")).unwrap();
    match fig2.model {
        ModelConfig::Extended(m) => {
            assert_eq!((m.n, m.phi, m.beta, m.gamma1, m.gamma2), (100, 0.2, 0.12, 0.2, 1.2));
            assert_eq!((m.w1, m.fundamental, m.signal_std, m.initial_price), (1.0, 50.0, 0.2, 48.0));
        }
        other => panic!("unexpected model {other:?}"),
    }
    assert_eq!(fig2.run.horizon, 1000.0);
}
