use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[seeds]
game = 5
sampler = 6

[catalog]
videos = 15

[sampler]
samples = 20000

[topology.synthetic]
count = 5

[run]
capacity = \"2 GB\"
";

fn coopcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopcache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn robr_writes_traces_that_verify() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = coopcache(&[
        "robr",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--trend",
        "linear",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 2);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);

    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("trace_mdc_linear.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["mechanism"], "mdc");
    assert_eq!(meta["config_hash"], summary["config_hash"]);

    for mechanism in ["lc", "mdc"] {
        let trace = out.join(format!("trace_{mechanism}_linear.csv"));
        let header = fs::read_to_string(&trace).unwrap();
        assert!(header.starts_with(
            "iteration,cache,f_global_before,f_global_after,f_local_before,f_local_after,capacity_used"
        ));
        let check = coopcache(&["verify-trace", trace.to_str().unwrap()]);
        assert!(check.status.success(), "{}", stderr(&check));
    }
}

#[test]
fn tampered_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = coopcache(&[
        "robr",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--mechanism",
        "lc",
        "--trend",
        "uniform",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let trace = out.join("trace_lc_uniform.csv");
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines
        .iter()
        .position(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f.len() == 7 && f[2] != f[3] && f[0] != "iteration"
        })
        .expect("an installed update");
    let mut fields: Vec<String> = lines[row].split(',').map(String::from).collect();
    let before: f64 = fields[2].parse().unwrap();
    fields[3] = (before * 2.0).to_string();
    lines[row] = fields.join(",");
    fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let check = coopcache(&["verify-trace", trace.to_str().unwrap()]);
    assert!(!check.status.success());
    assert!(stderr(&check).contains("error"));
}

#[test]
fn seeds_on_the_command_line_match_seeds_in_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let from_file = dir.path().join("a");
    let config = write_config(dir.path(), SMALL);
    let a = coopcache(&[
        "baseline",
        "--config",
        &config,
        "--out",
        from_file.to_str().unwrap(),
    ]);
    assert!(a.status.success(), "{}", stderr(&a));

    let bare = SMALL.replace("game = 5\nsampler = 6\n", "");
    let bare_path = dir.path().join("bare.toml");
    fs::write(&bare_path, &bare).unwrap();
    let from_flags = dir.path().join("b");
    let b = coopcache(&[
        "baseline",
        "--config",
        bare_path.to_str().unwrap(),
        "--seed-game",
        "5",
        "--seed-sampler",
        "6",
        "--out",
        from_flags.to_str().unwrap(),
    ]);
    assert!(b.status.success(), "{}", stderr(&b));
    let rows = |dir: &Path| {
        let v: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
        (
            v["config_hash"].clone(),
            v["rows"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r["baseline_f"].clone())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(rows(&from_file), rows(&from_flags));
}

#[test]
fn missing_seed_fails_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[seeds]\ngame = 1\n");
    let run = coopcache(&["baseline", "--config", &config]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("seeds.sampler"), "{}", stderr(&run));
}

#[test]
fn bad_config_values_fail() {
    let dir = tempfile::tempdir().unwrap();
    for (text, needle) in [
        (
            "[seeds]\ngame = 1\nsampler = 2\n[run]\ncapacty = 1\n",
            "capacty",
        ),
        (
            "[seeds]\ngame = 1\nsampler = 2\n[run]\ncapacity = \"3 km\"\n",
            "run.capacity",
        ),
        (
            "[seeds]\ngame = 1\nsampler = 2\n[catalog]\nzipf = 0.0\n",
            "Zipf",
        ),
    ] {
        let config = write_config(dir.path(), text);
        let run = coopcache(&["validate-config", "--config", &config]);
        assert!(!run.status.success(), "{text}");
        assert!(stderr(&run).contains(needle), "{}", stderr(&run));
    }
}

#[test]
fn validate_config_prints_defaults_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[seeds]\ngame = 1\nsampler = 2\n");
    let run = coopcache(&["validate-config", "--config", &config]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("6540000000"));
    assert!(text.contains("\"count\": 12"));
    assert!(text
        .lines()
        .any(|l| l.starts_with("hash ") && l.len() == 5 + 64));
}

#[test]
fn coverage_writes_region_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = coopcache(&[
        "coverage",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let table = fs::read_to_string(out.join("coverage.csv")).unwrap();
    assert!(table.starts_with("members,p\n"));
    let total: f64 = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn oracle_subcommand_passes() {
    let run = coopcache(&["oracle", "--instances", "100", "--seed", "3"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(String::from_utf8_lossy(&run.stdout).contains("0 mismatches"));
}
