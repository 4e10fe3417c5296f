//! End-to-end tests against the built binary: exit codes, output
//! determinism across thread counts, and error routing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_comorbscan");

const SPEC: &str = r#"
population_size = 2000
seed = 5
index_code = "E10"
sex_ratio = 0.5
index_atc = "A10A"

[window]
start = 2006
end = 2007

[[age_band]]
group = "20-25"
weight = 1.0
index_prevalence = 0.3

[[age_band]]
group = "60-65"
weight = 1.0
index_prevalence = 0.2

[[planted]]
code = "E11"
baseline_prevalence = 0.15

[[planted]]
code = "I10"
baseline_prevalence = 0.1
rr = { "20-25" = 3.0, "60-65" = 3.0 }

[null_diagnoses]
count = 8
prevalence_min = 0.05
prevalence_max = 0.1
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

/// Generate a population under `root/data` and return a config that scans it.
fn fixture(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = root.join("fixture.spec");
    fs::write(&spec, SPEC).unwrap();
    let data = root.join("data");
    let out = run(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "generate failed: {}", stderr(&out));

    let config = root.join("run.toml");
    fs::write(
        &config,
        r#"
[input]
patients = "data/patients.csv"
diagnoses = "data/diagnoses.csv"
prescriptions = "data/prescriptions.csv"
window = { start = 2006, end = 2007 }

[analysis]
alpha = 0.05
seed = 9

[leadlag]
t1 = 2006
t2 = 2007
n_surrogates = 10
"#,
    )
    .unwrap();
    (config, data)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

#[test]
fn generate_and_scan_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = fixture(dir.path());
    assert!(data.join("patients.csv").is_file());
    assert!(data.join("manifest.tsv").is_file());

    let out_dir = dir.path().join("out");
    let out = run(&[
        "scan",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "scan failed: {}", stderr(&out));
    assert!(out_dir.join("dm1_summary.tsv").is_file());
    assert!(out_dir.join("metadata.txt").is_file());
}

#[test]
fn thread_count_does_not_change_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixture(dir.path());
    let mut snaps = vec![];
    for threads in ["1", "2"] {
        let out_dir = dir.path().join(format!("out{threads}"));
        let out = run(&[
            "all",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(code(&out), 0, "all failed: {}", stderr(&out));
        assert!(out_dir.join("leadlag.tsv").is_file());
        snaps.push(snapshot(&out_dir));
    }
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = fixture(dir.path());
    fs::remove_file(data.join("diagnoses.csv")).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "scan",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("diagnoses.csv"),
        "path not named: {}",
        stderr(&out)
    );
}

#[test]
fn config_parse_error_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[input]\nno_such_key = 1\n").unwrap();
    let out = run(&["scan", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "stderr: {}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&[]);
    assert_eq!(code(&out), 2);
    let out = run(&["scan", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    fs::write(&spec, SPEC.replace("sex_ratio = 0.5", "sex_ratio = 1.5")).unwrap();
    let out = run(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("data").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sex_ratio"), "stderr: {}", stderr(&out));
}

#[test]
fn locked_output_directory_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixture(dir.path());
    let out_dir = dir.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".comorbscan.lock"), "").unwrap();
    let out = run(&[
        "scan",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("in use"), "stderr: {}", stderr(&out));
}

#[test]
fn seed_flag_enables_leadlag_and_its_absence_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixture(dir.path());
    let text = fs::read_to_string(&config).unwrap().replace("seed = 9\n", "");
    fs::write(&config, text).unwrap();

    let out_dir = dir.path().join("no_seed");
    let out = run(&[
        "leadlag",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("seed"), "stderr: {}", stderr(&out));

    let out_dir = dir.path().join("with_seed");
    let out = run(&[
        "leadlag",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "33",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let meta = fs::read_to_string(out_dir.join("metadata.txt")).unwrap();
    assert!(meta.contains("seed=33"));
}

#[test]
fn missing_out_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixture(dir.path());
    let out = run(&["scan", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--out"), "stderr: {}", stderr(&out));
}
