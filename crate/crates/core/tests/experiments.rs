use std::path::Path;
use std::process::Command;

use driftsens::experiments::{
    discontinuity_demo, indicator_function, run_experiment, ExperimentConfig, ExperimentKind, ModelSpec,
};
use driftsens::sde::Domain;
use driftsens::ulam::{build_grid, KernelParams};
use driftsens::Error;

const SMALL: &str = r#"
kind = "derivative_check"
seed = 7
x0 = [1.0]

[model]
name = "constant_drift"
params = { drift = 0.5, sigma = 1.0 }

[time]
t_end = 1.0
n_steps = 20

[gamma]
kind = "constant"
values = [0.5]

[observable]
kind = "power"
power = 1
bound = 100.0

[mc]
n_paths = 4000

[derivative]
expected = 0.5
fd_step = 0.25
"#;

const SMALL_KERNEL: &str = r#"
kind = "coherent_sets"
seed = 8

[model]
name = "brownian"
params = { sigma = 1.0 }

[domain]
lower = [0.0]
upper = [1.0]

[grid]
boxes_per_axis = 8

[time]
t_end = 0.5
n_steps = 20

[mc]
n_paths_per_cell = 200

[coherent]
n_triplets = 2
"#;

fn config_error_field(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn bundled_configs_parse_and_validate() {
    for kind in ExperimentKind::ALL {
        let c = ExperimentConfig::from_toml_str(kind.default_config()).unwrap();
        assert_eq!(c.kind, kind);
        c.validate().unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again.seed, c.seed);
    }
}

#[test]
fn increasing_epsilons_are_rejected() {
    let text = ExperimentKind::RemainderScaling
        .default_config()
        .replace("[0.4, 0.2, 0.1, 0.05]", "[0.05, 0.1, 0.2, 0.4]");
    let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
    assert_eq!(config_error_field(err), "epsilons");
}

#[test]
fn unknown_model_is_rejected() {
    let err = ExperimentConfig::from_toml_str(&SMALL.replace("constant_drift", "lorenz")).unwrap_err();
    assert!(config_error_field(err).starts_with("model"));
}

#[test]
fn unknown_model_parameter_is_named() {
    let err = ExperimentConfig::from_toml_str(&SMALL.replace("drift = 0.5", "dirft = 0.5")).unwrap_err();
    assert_eq!(config_error_field(err), "model.params.dirft");
}

#[test]
fn missing_seed_is_rejected() {
    let err = ExperimentConfig::from_toml_str(&SMALL.replace("seed = 7", "")).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn run_writes_summary_and_is_reproducible() {
    let config = ExperimentConfig::from_toml_str(SMALL_KERNEL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_experiment(&config, a.path()).unwrap();
    let sb = run_experiment(&config, b.path()).unwrap();
    assert!(sa.error.is_none(), "{:?}", sa.error);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "coherent_sets");
    assert!(summary["values"]["sigma_1"].as_f64().unwrap() > 0.9);
    assert_eq!(sa.files, sb.files);
    for f in &sa.files {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_driftsens")).args(args).output().unwrap()
}

#[test]
fn cli_output_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL_KERNEL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    for (threads, out) in [("1", &one), ("2", &two)] {
        let o = cli(&["coherent-sets", "--config", cfg, "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["singular.csv", "singular_vectors.csv", "summary.json"] {
        assert_eq!(read(&one, f), read(&two, f), "{f}");
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, SMALL).unwrap();
    let o = cli(&["derivative-check", "--config", good.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[pass] derivative_check"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("n_steps = 20", "n_steps = -3")).unwrap();
    let o = cli(&["derivative-check", "--config", bad.to_str().unwrap(), "--out", dir.path().join("bad").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = cli(&["coherent-sets", "--config", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "kind mismatch");

    let o = cli(&["print-config", "eigen-response"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout), ExperimentKind::EigenResponse.default_config());
}

#[test]
fn zero_offset_gives_zero_distance() {
    let spec = ModelSpec { name: "ornstein_uhlenbeck".into(), params: [("theta".to_string(), 1.0)].into_iter().collect() };
    let rows = discontinuity_demo(
        &spec,
        &Domain::interval(-1.0, 1.0).unwrap(),
        20,
        &KernelParams::new(0.5, 20, 100, 9),
        &[0.5, 0.05],
        &[0.2],
        0.0,
        &[0.05],
    )
    .unwrap();
    for r in rows {
        assert_eq!(r.distance, 0.0);
    }
}

#[test]
fn indicator_narrower_than_a_cell_is_rejected() {
    let grid = build_grid(&Domain::interval(-1.0, 1.0).unwrap(), 10).unwrap();
    assert!(matches!(indicator_function(&grid, &[0.1], 0.05), Err(Error::Resolution(_))));
    let f = indicator_function(&grid, &[0.1], 0.2).unwrap();
    assert!((grid.l2_norm(&f) - 1.0).abs() < 1e-12);
}
