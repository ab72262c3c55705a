use std::fs;
use std::path::Path;
use std::process::Command;

use phi4_cli::config::parse_config_str;
use phi4_cli::run::{exit_code, run, EXIT_CONFIG, EXIT_PASS};

fn free_dyson(out: &Path) -> String {
    format!(
        r#"
experiment = "verify-dyson"
output_dir = "{}"
n_list = [2]

[grid]
d = 2
N = 8
L = 1.0

[schedule]
g = 0.0
m = 0.0
a = 0.0

[sampler]
steps = 6000
burn_in = 500
seed = 11

[[test_functions]]
shape = "gaussian-bump"
center = [0.5, 0.5]
width = 0.2
"#,
        out.display()
    )
}

fn phi4lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_phi4lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn free_dyson_run_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, free_dyson(&out)).unwrap();
    let o = phi4lab(&["run", cfg_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&o.stderr));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["experiment", "config_hash", "seed", "versions", "wall_time_s", "passed", "outputs"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(manifest["experiment"], "verify-dyson");
    assert_eq!(manifest["seed"], 11);
    let csv = fs::read_to_string(out.join("dyson.csv")).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with(&format!("{hash},11,"))));
    assert!(csv.lines().count() > 2);
}

#[test]
fn reruns_write_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let texts: Vec<String> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("out{k}"));
            run(&parse_config_str(&free_dyson(&out)).unwrap()).unwrap();
            fs::read_to_string(out.join("dyson.csv")).unwrap()
        })
        .collect();
    // The hash column differs because output_dir is part of the config.
    let strip = |s: &str| s.lines().map(|l| l.split_once(',').unwrap().1.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&texts[0]), strip(&texts[1]));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    let text = free_dyson(&dir.path().join("out")).replace("N = 8", "N = 0").replace("burn_in = 500", "burn_in = 9000");
    fs::write(&cfg_path, text).unwrap();
    for cmd in ["run", "validate"] {
        let o = phi4lab(&[cmd, cfg_path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(EXIT_CONFIG));
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("grid") && err.contains("sampler.burn_in"), "{err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_file_is_a_config_error() {
    let o = phi4lab(&["validate", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn library_exit_codes_match_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&free_dyson(&dir.path().join("out"))).unwrap();
    assert_eq!(exit_code(&run(&cfg)), EXIT_PASS);
}

#[test]
fn acceptance_subcommand_prints_one_line_per_criterion() {
    let o = phi4lab(&["acceptance", "--criteria", "7,8"]);
    assert_eq!(o.status.code(), Some(EXIT_PASS));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.starts_with("PASS criterion")));
}

fn small(experiment: &str, out: &Path, schedule: &str, extra: &str) -> String {
    format!(
        r#"
experiment = "{experiment}"
output_dir = "{}"
n_list = [2, 4]

[grid]
d = 2
N = 8
L = 1.0

[schedule]
{schedule}

[sampler]
steps = 1500
burn_in = 300
seed = 3
chains = 2

[[test_functions]]
shape = "gaussian-bump"
center = [0.5, 0.5]
width = 0.2

[[test_functions]]
shape = "gaussian-bump"
center = [0.3, 0.6]
width = 0.2

[[test_functions]]
shape = "indicator"
lo = [0.0, 0.0]
hi = [0.5, 0.5]

[[test_functions]]
shape = "constant"
value = 1.0

{extra}
"#,
        out.display()
    )
}

#[test]
fn every_experiment_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let interacting = "g = 0.5\nm = 0.0\na = 0.0";
    let cases = [
        ("sample", interacting, "", "chains.csv"),
        ("verify-inequalities", "g = 0.1\nm = 0.05\na = 0.05", "", "inequalities.csv"),
        ("scan-renorm", "g = 0.1\nm = { base = 2.0, exponent = 3.0 }\na = 0.05", "", "scan.csv"),
        ("rate-function", interacting, "", "rate_function.csv"),
        ("concentration", interacting, "", "concentration.csv"),
        ("acceptance-suite", interacting, "[options]\ncriteria = [8]", "acceptance.csv"),
    ];
    for (exp, sched, extra, table) in cases {
        let out = dir.path().join(exp);
        let cfg = parse_config_str(&small(exp, &out, sched, extra)).unwrap_or_else(|e| panic!("{exp}: {e}"));
        let m = run(&cfg).unwrap_or_else(|e| panic!("{exp}: {e}"));
        assert!(m.outputs.iter().any(|o| o == table), "{exp}: {:?}", m.outputs);
        assert!(out.join(table).exists() && out.join("manifest.json").exists());
    }
    let (header, samples) = phi4_core::io::read_stream(dir.path().join("sample/stream_n2.bin")).unwrap();
    assert_eq!(header.records, samples.len());
    assert_eq!(samples.len(), 2 * 1200);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            phi4_cli::config::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
