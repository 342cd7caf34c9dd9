mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use rumsim::manifest::{Manifest, Status};

fn rumsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rumsim"))
        .args(args)
        .env_remove("RUMSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_data_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::shipped_config("exp1.toml");
    let out = rumsim(&["generate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("exp1_data.csv");
    let cells = common::read_csv_cells(&csv);
    assert_eq!(cells.len(), 1001);
    assert_eq!(cells[0].len(), 1 + 2 * 4 + 1);
    assert!(dir.path().join("exp1_data_schema.toml").is_file());
    let m = Manifest::load(dir.path().join("exp1_generate_manifest.json")).unwrap();
    assert_eq!(m.status, Status::Ok);
    assert_eq!(m.subcommand, "generate");
    assert_eq!(m.seed, 1001);
    assert!(m.outputs.iter().any(|o| o.ends_with("exp1_data.csv")));
}

#[test]
fn generated_schema_reads_the_data_back() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rumsim::cli::run(["rumsim", "generate", "--seed", "5", "--out", path(dir.path())]), 0);
    let schema: rumsim::dataio::SchemaConfig =
        toml::from_str(&fs::read_to_string(dir.path().join("exp1_data_schema.toml")).unwrap()).unwrap();
    let loaded = rumsim::dataio::load_dataset(dir.path().join("exp1_data.csv"), &schema).unwrap();
    let mut cfg = rumsim::config::RunConfig::builtin();
    cfg.synth.as_mut().unwrap().seed = 5;
    let direct = rumsim_core::synthdata::generate_dataset(cfg.synth.as_ref().unwrap()).unwrap();
    assert_eq!(loaded.data, direct);
}

#[test]
fn gradcheck_passes_and_reports_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rumsim(&["gradcheck", "--lambda", "0.1", "--q", "200", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().find(|l| l.starts_with("max relative error: ")).expect("summary line");
    let err: f64 = line["max relative error: ".len()..].split_whitespace().next().unwrap().parse().unwrap();
    assert!(err <= 1e-4, "{line}");
}

#[test]
fn failing_gradcheck_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let text = rumsim::config::DEFAULT_CONFIG.replace("tolerance = 1e-4", "tolerance = 1e-300");
    let cfg = dir.path().join("strict.toml");
    fs::write(&cfg, text).unwrap();
    let out = rumsim(&["gradcheck", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let m = Manifest::load(dir.path().join("exp1_gradcheck_manifest.json")).unwrap();
    assert_eq!(m.status, Status::Failed);
}

#[test]
fn invalid_config_exits_nonzero_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let text = rumsim::config::DEFAULT_CONFIG.replace("reps = 20", "reps = 1");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let out = rumsim(&["montecarlo", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replications"));
    assert!(!dir.path().join("exp1_montecarlo_results.json").exists());
    let out = rumsim(&["fit", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let out = rumsim(&["frobnicate"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn report_without_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rumsim::cli::run(["rumsim", "report", "--out", path(dir.path())]), 1);
}

fn table_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "md")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn manifest_rerun_reproduces_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["rumsim", "montecarlo", "--reps", "2", "--q", "50", "--seed", "9", "--out", path(a.path())];
    assert_eq!(rumsim::cli::run(args), 0);
    let manifest = a.path().join("exp1_montecarlo_manifest.json");
    let m = Manifest::load(&manifest).unwrap();
    assert_eq!(m.status, Status::Ok);
    assert_eq!(m.seed, 9);
    assert_eq!(
        rumsim::cli::run(["rumsim", "montecarlo", "--config", path(&manifest), "--out", path(b.path())]),
        0
    );
    let (ta, tb) = (table_files(a.path()), table_files(b.path()));
    assert_eq!(ta.len(), 4);
    assert_eq!(ta, tb);

    fs::remove_file(a.path().join("exp1_montecarlo_recovery_table.csv")).unwrap();
    assert_eq!(rumsim::cli::run(["rumsim", "report", "--out", path(a.path())]), 0);
    assert_eq!(table_files(a.path()), tb);
}

#[test]
fn fit_then_eval_on_an_ingested_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("survey.csv");
    common::write_mock_swissmetro(&data, 600, 11);
    let mut cfg = common::swissmetro_config(&data, dir.path());
    cfg.estimators.retain(|e| e.label() == "MNL");
    cfg.fit.epochs = 50;
    let cfg_path = dir.path().join("sm.toml");
    fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let out = rumsim(&["fit", "--config", path(&cfg_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = rumsim(&["eval", "--config", path(&cfg_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = common::read_csv_cells(&dir.path().join("swissmetro_eval_fit_table.csv"));
    let fit_rows = common::read_csv_cells(&dir.path().join("swissmetro_fit_fit_table.csv"));
    assert_eq!(rows[1][2..5], fit_rows[1][2..5]);
    let m = Manifest::load(dir.path().join("swissmetro_fit_manifest.json")).unwrap();
    let ingestion = m.ingestion.expect("ingestion recorded");
    assert_eq!(ingestion.rows_read, 600);
    assert!(ingestion.rows_kept < 600);
}

#[test]
fn threads_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = rumsim(&["gradcheck", "--threads", "1", "--out", path(dir.path())]);
    assert!(out.status.success());
    let m = Manifest::load(dir.path().join("exp1_gradcheck_manifest.json")).unwrap();
    assert_eq!(m.threads, 1);
}
