use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use mixscale::cli::{cmd_divergence, cmd_fit, cmd_sample, ingest, ingest_bytes, sha256_hex, Metric, RunConfig};
use mixscale::lab::canonical_truth;
use mixscale::schema::MixedSchema;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data")
}

fn mixscale(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mixscale"))
        .args(args)
        .env_remove("MIXSCALE_SEED")
        .output()
        .unwrap()
}

fn schema3() -> MixedSchema {
    MixedSchema::from_toml_str(
        r#"
[[column]]
name = "x"
kind = "continuous"
map = "identity"

[[column]]
name = "c"
kind = "categorical"
levels = 3
cuts = [0.0, 1.0]
"#,
    )
    .unwrap()
}

#[test]
fn ingest_examples() {
    let schema = schema3();
    let ok = b"x,c\n0.5,0\n-1.25,2\n3,1\n";
    let d = ingest_bytes(ok, &schema).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.digest, sha256_hex(ok));
    assert_eq!(d.digest, ingest_bytes(ok, &schema).unwrap().digest);

    let d = ingest_bytes(b"c,x\n3,0.1\n1,0.2\n0,0.3\n", &schema).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.rejected.len(), 1);
    assert!(d.rejected[0].1.contains("level out of range"), "{:?}", d.rejected);
    assert_eq!(d.rows[0].y1, vec![0.2]);

    let d = ingest_bytes(b"x,c\n,1\n0.1,1\n0.2,0\n", &schema).unwrap();
    assert!(d.rejected[0].1.contains("missing value"));

    let err = ingest_bytes(b"x\n1\n", &schema).unwrap_err().to_string();
    assert!(err.contains("missing columns: c"), "{err}");
    assert!(ingest_bytes(b"x,c\n", &schema).is_err());
    assert!(ingest_bytes(b"", &schema).is_err());
    assert!(ingest_bytes(b"x,c\n1,7\n2,8\n3,1\n", &schema).is_err());
}

#[test]
fn ingest_reads_files() {
    let schema = MixedSchema::from_toml_str(&std::fs::read_to_string(data_dir().join("tiny.schema.toml")).unwrap()).unwrap();
    let d = ingest(&data_dir().join("tiny.csv"), &schema).unwrap();
    assert_eq!(d.len(), 50);
    assert!(d.rejected.is_empty());
}

fn fit_config(out: &Path, iterations: usize) -> RunConfig {
    RunConfig {
        schema: Some(data_dir().join("tiny.schema.toml")),
        data: Some(data_dir().join("tiny.csv")),
        out: Some(out.to_path_buf()),
        seed: Some(3),
        iterations: Some(iterations),
        ..RunConfig::default()
    }
}

#[test]
fn fit_writes_all_artifacts_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let art = cmd_fit(&fit_config(tmp.path(), 200)).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    for p in [
        &art.draws,
        &art.metadata,
        art.predictive.as_ref().unwrap(),
        art.marginals.as_ref().unwrap(),
        &art.rejected,
    ] {
        assert!(p.exists(), "{}", p.display());
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&art.metadata).unwrap()).unwrap();
    assert_eq!(meta["rows_used"], 50);
    assert_eq!(meta["sampler"]["draws"], 10);
    let marginals = std::fs::read_to_string(art.marginals.unwrap()).unwrap();
    assert!(marginals.starts_with("b,empirical,predictive\n"));
}

#[test]
fn zero_iterations_write_an_empty_draws_file() {
    let tmp = tempfile::tempdir().unwrap();
    let art = cmd_fit(&fit_config(tmp.path(), 0)).unwrap();
    assert_eq!(std::fs::read(&art.draws).unwrap(), b"");
    assert!(art.predictive.is_none());
}

#[test]
fn sample_round_trip_matches_marginals() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = canonical_truth();
    let path = tmp.path().join("truth.toml");
    std::fs::write(&path, truth.to_toml_string()).unwrap();

    let text = cmd_sample(&path, 1000, 5).unwrap();
    let sample_path = tmp.path().join("s.csv");
    std::fs::write(&sample_path, &text).unwrap();
    let d = ingest(&sample_path, truth.schema()).unwrap();
    assert_eq!(d.len(), 1000);
    assert!(d.rejected.is_empty());
    assert_eq!(text, cmd_sample(&path, 1000, 5).unwrap());

    let n = 20_000;
    std::fs::write(&sample_path, cmd_sample(&path, n, 6).unwrap()).unwrap();
    let d = ingest(&sample_path, truth.schema()).unwrap();
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for y in &d.rows {
        *counts.entry(y.y2.clone()).or_default() += 1;
    }
    for y2 in truth.discrete_support_enumeration(1e-6).unwrap() {
        let p = truth.discrete_marginal(&y2).unwrap();
        if p > 0.01 {
            let f = counts.get(&y2).copied().unwrap_or(0) as f64 / n as f64;
            assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{y2:?}: {f} vs {p}");
        }
    }
}

#[test]
fn divergence_of_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("truth.toml");
    std::fs::write(&path, canonical_truth().to_toml_string()).unwrap();
    let text = cmd_divergence(&path, &path, Metric::Both, &RunConfig::default()).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let value: f64 = line
            .split_whitespace()
            .find_map(|f| f.strip_prefix("value="))
            .unwrap()
            .parse()
            .unwrap();
        assert!(value.abs() < 1e-9, "{line}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(mixscale(&["--version"]).status.code(), Some(0));
    assert_eq!(mixscale(&["bogus"]).status.code(), Some(2));
    assert_eq!(mixscale(&["sample", "--nope"]).status.code(), Some(2));
    assert_eq!(mixscale(&["fit", "--data", "x.csv"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let density = tmp.path().join("d.toml");
    std::fs::write(&density, canonical_truth().to_toml_string()).unwrap();
    let d = density.to_str().unwrap();
    assert_eq!(mixscale(&["density", "--density", d, "--grid", "1:0:3"]).status.code(), Some(2));
    assert_eq!(mixscale(&["density", "--density", d]).status.code(), Some(2));
    assert_eq!(mixscale(&["sample", "--density", "missing.toml"]).status.code(), Some(1));
    let out = mixscale(&["density", "--density", d, "--grid", "-1:1:3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("x,b,n,log_density,density\n"));
}

#[test]
fn seed_comes_from_flag_or_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let density = tmp.path().join("d.toml");
    std::fs::write(&density, canonical_truth().to_toml_string()).unwrap();
    let d = density.to_str().unwrap();
    let flag = mixscale(&["--seed", "77", "sample", "--density", d, "-n", "20"]).stdout;
    let env = Command::new(env!("CARGO_BIN_EXE_mixscale"))
        .args(["sample", "--density", d, "-n", "20"])
        .env("MIXSCALE_SEED", "77")
        .output()
        .unwrap()
        .stdout;
    assert_eq!(flag, env);
    assert_ne!(flag, mixscale(&["--seed", "78", "sample", "--density", d, "-n", "20"]).stdout);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "schema = {:?}\ndata = {:?}\nout = {:?}\niterations = 50\nseed = 4\n",
            data_dir().join("tiny.schema.toml"),
            data_dir().join("tiny.csv"),
            tmp.path().join("fit"),
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let out = mixscale(&["--config", c, "fit", "--iterations", "40", "--burn-in", "20", "--thin", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let draws = std::fs::read_to_string(tmp.path().join("fit/draws.txt")).unwrap();
    assert_eq!(draws.lines().count(), 4);
    std::fs::write(&cfg, "iterations = 50\nunknown = 1\n").unwrap();
    assert_ne!(mixscale(&["--config", c, "fit"]).status.code(), Some(0));
}

#[test]
fn lab_lemma_command_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lab");
    let o = mixscale(&["lab", "lemma1", "--random", "6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("holds=true")).count(), 6);
    assert!(out.join("report.csv").exists());
    assert_eq!(mixscale(&["lab", "lemma2", "--p-max", "0"]).status.code(), Some(2));
}
