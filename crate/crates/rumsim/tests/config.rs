mod common;

use std::path::Path;

use rumsim::config::{ModelKind, Overrides, RunConfig};
use rumsim::Error;
use rumsim_core::simulator::DrawMode;

fn with_dataset(name: &str, file: &str, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(common::shipped_config(name)).unwrap();
    let data = dir.join(file);
    std::fs::write(&data, "").unwrap();
    cfg.dataset.as_mut().unwrap().path = data;
    cfg
}

#[test]
fn every_shipped_config_validates() {
    for name in ["exp1.toml", "exp2.toml", "exp3.toml"] {
        let cfg = RunConfig::load(common::shipped_config(name)).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(cfg.synth.is_some());
    }
    let dir = tempfile::tempdir().unwrap();
    for (name, file) in [("swissmetro.toml", "swissmetro.csv"), ("lpmc.toml", "lpmc.csv")] {
        let cfg = with_dataset(name, file, dir.path());
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn builtin_is_experiment_one() {
    let b = RunConfig::builtin();
    assert_eq!(b, RunConfig::load(common::shipped_config("exp1.toml")).unwrap());
    let s = b.synth.as_ref().unwrap();
    assert_eq!((s.alternatives, s.n), (2, 1000));
    assert_eq!((s.seed, b.fit.seed, b.fit.simulator.seed), (1001, 1001, 1001));
    assert_eq!(b.estimators.len(), 2);
}

#[test]
fn relative_dataset_path_resolves_against_the_config() {
    let cfg = RunConfig::load(common::shipped_config("swissmetro.toml")).unwrap();
    assert_eq!(cfg.dataset.unwrap().path, Path::new(common::CONFIG_DIR).join("swissmetro.csv"));
}

#[test]
fn missing_dataset_file_is_a_config_error() {
    let cfg = RunConfig::load(common::shipped_config("lpmc.toml")).unwrap();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn toml_round_trip_is_lossless() {
    for name in ["exp1.toml", "exp2.toml", "exp3.toml", "swissmetro.toml", "lpmc.toml"] {
        let cfg = RunConfig::load(common::shipped_config(name)).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new(name)).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let text = format!("{}\nbogus = 1\n", rumsim::config::DEFAULT_CONFIG);
    assert!(matches!(RunConfig::from_toml(&text, Path::new("x")), Err(Error::Toml { .. })));
}

#[test]
fn overrides_replace_fields_and_propagate_the_seed() {
    let mut cfg = RunConfig::builtin();
    cfg.apply(&Overrides {
        seed: Some(77),
        q: Some(42),
        lambda: Some(0.2),
        draw_mode: Some(DrawMode::ResampleEachEpoch),
        model: Some("mnl".into()),
        reps: Some(3),
        folds: Some(4),
        out: Some("elsewhere".into()),
    })
    .unwrap();
    assert_eq!(cfg.seed, 77);
    assert_eq!(cfg.synth.as_ref().unwrap().seed, 77);
    assert_eq!((cfg.fit.seed, cfg.fit.simulator.seed), (77, 77));
    assert_eq!(cfg.fit.simulator.q, 42);
    assert_eq!(cfg.fit.simulator.lambda, 0.2);
    assert_eq!(cfg.fit.simulator.draw_mode, DrawMode::ResampleEachEpoch);
    assert_eq!(cfg.estimators.len(), 1);
    assert_eq!(cfg.estimators[0].model, ModelKind::Mnl);
    assert_eq!((cfg.montecarlo.reps, cfg.qsweep.reps, cfg.lambdasweep.reps), (3, 3, 3));
    assert_eq!(cfg.cv.folds, 4);
    assert_eq!(cfg.output.dir, Path::new("elsewhere"));
    cfg.validate().unwrap();

    let mut cfg = RunConfig::builtin();
    let err = cfg.apply(&Overrides {
        model: Some("nothing".into()),
        ..Overrides::default()
    });
    assert!(err.is_err());
}

#[test]
fn invalid_values_are_rejected() {
    let base = RunConfig::builtin();
    let mut bad: Vec<RunConfig> = Vec::new();
    let mut c = base.clone();
    c.montecarlo.reps = 1;
    bad.push(c);
    let mut c = base.clone();
    c.lambdasweep.reps = 1;
    bad.push(c);
    let mut c = base.clone();
    c.cv.folds = 1;
    bad.push(c);
    let mut c = base.clone();
    c.fit.simulator.lambda = 0.0;
    bad.push(c);
    let mut c = base.clone();
    c.fit.simulator.q = 0;
    bad.push(c);
    let mut c = base.clone();
    c.estimators.clear();
    bad.push(c);
    let mut c = base.clone();
    c.estimators.push(c.estimators[1].clone());
    bad.push(c);
    let mut c = base.clone();
    c.experiment = "a/b".into();
    bad.push(c);
    let mut c = base.clone();
    c.synth.as_mut().unwrap().n = 0;
    bad.push(c);
    let mut c = base;
    c.qsweep.timing_q_values = vec![100];
    bad.push(c);
    for (k, c) in bad.iter().enumerate() {
        assert!(c.validate().is_err(), "case {k} validated");
    }
}

#[test]
fn estimator_labels_default_from_the_model() {
    let text = r#"
experiment = "x"
[synth]
alternatives = 2
n = 10
[[estimators]]
model = "mnl"
[[estimators]]
model = "rum_nn"
error = "normal"
[[estimators]]
model = "binary_probit"
"#;
    let cfg = RunConfig::from_toml(text, Path::new("x")).unwrap();
    cfg.validate().unwrap();
    let labels: Vec<String> = cfg.estimators.iter().map(|e| e.label()).collect();
    assert_eq!(labels[0], "MNL");
    assert!(labels[1].starts_with("RUM-NN"), "{}", labels[1]);
    assert_eq!(cfg.estimator_list().unwrap().len(), 3);
}
