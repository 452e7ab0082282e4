#![allow(dead_code)]

use etkf_lab::RunConfig;

/// Growing scalar dynamics in three dimensions, fully observed.
pub fn growing(extra: &str) -> RunConfig {
    let text = format!(
        r#"{{
        "model": {{"kind": "scaled_identity", "a": 0.5, "dim": 3}},
        "h": 0.1, "n_members": 5, "observation": {{"gamma": 0.3}},
        "cycles": 10, "run_seed": 11,
        "initial_truth": {{"state": [1.0, -0.5, 0.25]}},
        "initial_ensemble": {{"spread": 0.5}},
        "rho": 10.0, "beta": 0.5
        {extra}
    }}"#
    );
    RunConfig::from_json(&text).unwrap()
}

/// Contracting dynamics with an exact initial covariance and inflation above the threshold.
pub fn contracting(extra: &str) -> RunConfig {
    let text = format!(
        r#"{{
        "model": {{"kind": "scaled_identity", "a": -1.0, "dim": 3}},
        "h": 0.1, "n_members": 6, "observation": {{"gamma": 0.2}},
        "alpha": {{"times_alpha0": 1.1}},
        "cycles": 60, "run_seed": 5,
        "initial_truth": {{"state": [0.3, 0.3, 0.3]}},
        "initial_ensemble": {{"spread": 0.1, "exact_covariance": true}},
        "rho": 1.0, "beta": -1.0, "beta_lipschitz": 1.0, "epsilon": 0.1
        {extra}
    }}"#
    );
    RunConfig::from_json(&text).unwrap()
}

pub fn write_config(dir: &std::path::Path, name: &str, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}
