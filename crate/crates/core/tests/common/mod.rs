//! Recorded environment traces shared by the golden and acceptance targets.

#![allow(dead_code)]

use std::path::PathBuf;

use rbf_pearl::env::{EnvConfig, EnvKind};
use rbf_pearl::tasks::TaskSpec;
use serde::{Deserialize, Serialize};

pub const TOL: f64 = 1e-10;

#[derive(Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub components: Vec<f64>,
    pub obs_sum: f64,
    pub obs_sq: f64,
    pub obs_head: Vec<f64>,
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

pub fn close_all(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y))
}

/// Steps task 3 of `kind` from reset seed 7 with a fixed sinusoidal action
/// sequence.
pub fn trace(kind: EnvKind, steps: usize) -> Vec<StepRecord> {
    let mut env = EnvConfig::default().build(kind).unwrap();
    env.set_task(&TaskSpec::sample(kind, 3).unwrap()).unwrap();
    env.reset(7);
    let mut out = Vec::new();
    for t in 0..steps {
        let a: Vec<f64> = (0..env.act_dim()).map(|i| (0.7 * t as f64 + i as f64).sin()).collect();
        let s = env.step(&a).unwrap();
        out.push(StepRecord {
            components: s.components,
            obs_sum: s.obs.iter().sum(),
            obs_sq: s.obs.iter().map(|v| v * v).sum(),
            obs_head: s.obs.iter().take(8).copied().collect(),
        });
    }
    out
}

/// First step at which two traces disagree, if any.
pub fn first_mismatch(a: &[StepRecord], b: &[StepRecord]) -> Option<usize> {
    if a.len() != b.len() {
        return Some(a.len().min(b.len()));
    }
    a.iter().zip(b).position(|(x, y)| {
        !(close_all(&x.components, &y.components)
            && close(x.obs_sum, y.obs_sum)
            && close(x.obs_sq, y.obs_sq)
            && close_all(&x.obs_head, &y.obs_head))
    })
}

pub fn load_trace(name: &str) -> Option<Vec<StepRecord>> {
    let text = std::fs::read_to_string(golden_path(name)).ok()?;
    serde_json::from_str(&text).ok()
}
