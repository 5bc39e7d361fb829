//! Posterior-collapse instrumentation and latent/RBF exports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{kl_to_prior, TaskEncoder, Transition};
use crate::error::{Error, Result};
use crate::pearl::TaskBuffer;
use crate::rbf::RbfParams;
use crate::tasks::TaskSpec;

/// Seed that fixes which training tasks are probed for collapse metrics.
pub const PROBE_SEED: u64 = 0x5EED_0005;
pub const N_PROBE_TASKS: usize = 5;
pub const DEFAULT_COLLAPSE_EPS: f64 = 0.01;
pub const DEFAULT_COLLAPSE_WINDOW: u64 = 10;
/// Context length used for the latent scatter export.
pub const SCATTER_CONTEXT: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRecord {
    pub iteration: u64,
    pub env_steps: u64,
    pub per_dim_kl: Vec<f64>,
    pub per_dim_posterior_var: Vec<f64>,
}

/// Indices of the probed training tasks, fixed by [`PROBE_SEED`].
pub fn probe_task_indices(n_train: usize) -> Vec<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut idx = rand::seq::index::sample(&mut rng, n_train, N_PROBE_TASKS.min(n_train)).into_vec();
    idx.sort_unstable();
    idx
}

/// Per-dimension KL and posterior variance averaged over the probe tasks,
/// each computed from a fresh context of up to `context_size` transitions.
pub fn record_collapse_metrics<R: Rng + ?Sized>(
    encoder: &TaskEncoder,
    probes: &[&TaskBuffer],
    context_size: usize,
    iteration: u64,
    env_steps: u64,
    rng: &mut R,
) -> Result<CollapseRecord> {
    if probes.is_empty() {
        return Err(Error::Usage("collapse metrics need at least one probe task".into()));
    }
    let d = encoder.latent_dim();
    let mut kl = vec![0.0; d];
    let mut var = vec![0.0; d];
    for buf in probes {
        let sample = buf.sample_context(context_size, rng);
        if sample.transitions.is_empty() {
            return Err(Error::NotReady(format!("probe task {} has no transitions", buf.task_id())));
        }
        let context: Vec<Transition> = sample.transitions.into_iter().cloned().collect();
        let post = encoder.posterior(&context)?;
        let (per_dim, _) = kl_to_prior(&post);
        for i in 0..d {
            kl[i] += per_dim[i];
            var[i] += post.var[i];
        }
    }
    let n = probes.len() as f64;
    Ok(CollapseRecord {
        iteration,
        env_steps,
        per_dim_kl: kl.into_iter().map(|v| v / n).collect(),
        per_dim_posterior_var: var.into_iter().map(|v| v / n).collect(),
    })
}

/// Dimensions whose KL stays below `eps` over a trailing stretch of records
/// spanning at least `window` iterations: a dimension first below `eps` at
/// iteration 40 is flagged once a record at iteration 50 or later is still
/// below (with `window = 10`).
pub fn detect_collapsed_dims(history: &[CollapseRecord], eps: f64, window: u64) -> BTreeSet<usize> {
    let Some(last) = history.last() else {
        return BTreeSet::new();
    };
    let d = last.per_dim_kl.len();
    let mut flagged = BTreeSet::new();
    for dim in 0..d {
        let mut start = None;
        for rec in history.iter().rev() {
            match rec.per_dim_kl.get(dim) {
                Some(&v) if v < eps => start = Some(rec.iteration),
                _ => break,
            }
        }
        if let Some(s) = start {
            if last.iteration >= s + window {
                flagged.insert(dim);
            }
        }
    }
    flagged
}

/// Iteration from which a dimension counts as collapsed, if it does.
pub fn collapse_onset(history: &[CollapseRecord], dim: usize, eps: f64, window: u64) -> Option<u64> {
    (1..=history.len())
        .find(|&n| detect_collapsed_dims(&history[..n], eps, window).contains(&dim))
        .map(|n| history[n - 1].iteration)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub task_id: u64,
    pub label: usize,
    pub z: Vec<f64>,
}

/// One posterior-mean row per task from its latest [`SCATTER_CONTEXT`]
/// transitions, plus the task's dominant-component label.
pub fn export_latent_scatter(encoder: &TaskEncoder, tasks: &[(&TaskSpec, &TaskBuffer)]) -> Result<Vec<ScatterRow>> {
    tasks
        .iter()
        .map(|(task, buf)| {
            let skip = buf.len().saturating_sub(SCATTER_CONTEXT);
            let context: Vec<Transition> = buf.all().skip(skip).cloned().collect();
            if context.is_empty() {
                return Err(Error::NotReady(format!("task {} has no transitions", task.seed)));
            }
            Ok(ScatterRow {
                task_id: task.seed,
                label: task.label(),
                z: encoder.posterior(&context)?.mean,
            })
        })
        .collect()
}

/// Mean and sample standard deviation of each latent coordinate.
pub fn scatter_summary(rows: &[ScatterRow]) -> Vec<(f64, f64)> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    (0..first.z.len())
        .map(|i| {
            let mean = rows.iter().map(|r| r.z[i]).sum::<f64>() / n;
            let ss: f64 = rows.iter().map(|r| (r.z[i] - mean).powi(2)).sum();
            let std = if rows.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            (mean, std)
        })
        .collect()
}

/// `z1: 0.041 ± 3.676` style lines, one per coordinate.
pub fn format_scatter_summary(summary: &[(f64, f64)]) -> String {
    summary
        .iter()
        .enumerate()
        .map(|(i, (m, s))| format!("z{}: {m:.3} ± {s:.3}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let d = rows.first().map_or(0, |r| r.z.len());
    let mut out = String::from("task_id,label");
    for i in 0..d {
        let _ = write!(out, ",z{}", i + 1);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.task_id, r.label);
        for v in &r.z {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Activations of the `k` neurons of input coordinate `dim` over a grid,
/// other coordinates held at their first center. Rows are `(z, a_1..a_k)`.
pub fn export_rbf_activation_map(params: &RbfParams, dim: usize, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = params.input_dim();
    if dim >= d {
        return Err(Error::shape("rbf activation map dimension", format!("< {d}"), dim));
    }
    let k = params.neurons_per_dim();
    let mut z: Vec<f64> = (0..d).map(|i| params.center(i, 0)).collect();
    grid.iter()
        .map(|&x| {
            z[dim] = x;
            let out = params.forward(&z)?;
            let mut row = Vec::with_capacity(k + 1);
            row.push(x);
            row.extend_from_slice(&out[dim * k..(dim + 1) * k]);
            Ok(row)
        })
        .collect()
}

pub fn rbf_activation_csv(rows: &[Vec<f64>]) -> String {
    let k = rows.first().map_or(0, |r| r.len() - 1);
    let mut out = String::from("z");
    for j in 0..k {
        let _ = write!(out, ",a{}", j + 1);
    }
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn collapse_csv(history: &[CollapseRecord]) -> String {
    let d = history.first().map_or(0, |r| r.per_dim_kl.len());
    let mut out = String::from("iteration,env_steps");
    for i in 0..d {
        let _ = write!(out, ",kl_{}", i + 1);
    }
    for i in 0..d {
        let _ = write!(out, ",var_{}", i + 1);
    }
    out.push('\n');
    for r in history {
        let _ = write!(out, "{},{}", r.iteration, r.env_steps);
        for v in r.per_dim_kl.iter().chain(&r.per_dim_posterior_var) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{fingerprint, Parameters};
    use crate::encoder::product_of_gaussians;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(iteration: u64, kl: Vec<f64>) -> CollapseRecord {
        let d = kl.len();
        CollapseRecord {
            iteration,
            env_steps: iteration * 100,
            per_dim_kl: kl,
            per_dim_posterior_var: vec![1.0; d],
        }
    }

    fn decaying_fixture(upto: u64) -> Vec<CollapseRecord> {
        (0..=upto)
            .map(|t| {
                let kl2 = if t < 40 { 1.0 - t as f64 / 50.0 } else { 0.001 };
                rec(t, vec![2.0, 1.5, kl2])
            })
            .collect()
    }

    fn filled_buffer(id: u64, n: usize, rng: &mut ChaCha8Rng) -> TaskBuffer {
        let mut b = TaskBuffer::new(id, 1000, 1000).unwrap();
        for _ in 0..n {
            b.push(Transition {
                s: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                a: vec![rng.random_range(-1.0..1.0)],
                r: rng.random_range(-1.0..1.0),
                s_next: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            });
        }
        b
    }

    #[test]
    fn all_zero_history_flags_everything() {
        let h: Vec<_> = (0..20).map(|t| rec(t, vec![0.0; 3])).collect();
        assert_eq!(detect_collapsed_dims(&h, 0.01, 10), BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn large_kl_flags_nothing() {
        let h: Vec<_> = (0..20).map(|t| rec(t, vec![5.0; 3])).collect();
        assert!(detect_collapsed_dims(&h, 0.01, 10).is_empty());
    }

    #[test]
    fn decaying_dimension_flagged_at_window_boundary() {
        assert!(detect_collapsed_dims(&decaying_fixture(49), 0.01, 10).is_empty());
        assert_eq!(detect_collapsed_dims(&decaying_fixture(50), 0.01, 10), BTreeSet::from([2]));
        assert_eq!(collapse_onset(&decaying_fixture(80), 2, 0.01, 10), Some(50));
        assert_eq!(collapse_onset(&decaying_fixture(80), 0, 0.01, 10), None);
    }

    #[test]
    fn recovery_clears_flag() {
        let mut h = decaying_fixture(60);
        h.push(rec(61, vec![2.0, 1.5, 0.5]));
        assert!(detect_collapsed_dims(&h, 0.01, 10).is_empty());
    }

    proptest! {
        #[test]
        fn smaller_eps_flags_subset(
            kls in proptest::collection::vec(proptest::collection::vec(0.0f64..0.05, 3), 1..40),
            eps in 0.0f64..0.05,
            shrink in 0.0f64..1.0,
            window in 0u64..15,
        ) {
            let h: Vec<_> = kls.into_iter().enumerate().map(|(t, kl)| rec(t as u64, kl)).collect();
            let big = detect_collapsed_dims(&h, eps, window);
            let small = detect_collapsed_dims(&h, eps * shrink, window);
            prop_assert!(small.is_subset(&big));
        }
    }

    #[test]
    fn single_probe_matches_manual_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TaskEncoder::new(2, 1, 3, 16, 2, &mut rng).unwrap();
        let buf = filled_buffer(7, 100, &mut rng);
        let r = record_collapse_metrics(&enc, &[&buf], 32, 4, 400, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

        let ctx: Vec<Transition> = buf.sample_context(32, &mut ChaCha8Rng::seed_from_u64(9)).transitions.into_iter().cloned().collect();
        let factors: Vec<_> = ctx.iter().map(|t| enc.encode_transition(t).unwrap()).collect();
        let post = product_of_gaussians(&factors).unwrap();
        for i in 0..3 {
            let (m, v) = (post.mean[i], post.var[i]);
            let kl = 0.5 * (m * m + v - 1.0 - v.ln());
            assert!((r.per_dim_kl[i] - kl).abs() < 1e-12);
            assert!((r.per_dim_posterior_var[i] - v).abs() < 1e-15);
            assert!(r.per_dim_kl[i] >= 0.0 && r.per_dim_posterior_var[i] > 0.0);
        }
        assert_eq!((r.iteration, r.env_steps), (4, 400));
    }

    #[test]
    fn prior_matching_encoder_has_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = TaskEncoder::new(2, 1, 2, 8, 2, &mut rng).unwrap();
        // Zero weights with softplus(raw) = 1 for every factor; a single-transition
        // context then reproduces N(0, 1).
        let raw = ((1.0 - crate::encoder::VAR_FLOOR).exp() - 1.0).ln();
        let n = enc.tensors().len();
        for (i, t) in enc.tensors_mut().into_iter().enumerate() {
            let last_bias = i == n - 1;
            for (j, x) in t.data_mut().iter_mut().enumerate() {
                *x = if last_bias && j >= 2 { raw } else { 0.0 };
            }
        }
        let buf = filled_buffer(1, 10, &mut rng);
        let r = record_collapse_metrics(&enc, &[&buf], 1, 0, 0, &mut rng).unwrap();
        for v in r.per_dim_kl {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn diagnostics_leave_encoder_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = TaskEncoder::new(2, 1, 3, 16, 2, &mut rng).unwrap();
        let before = fingerprint(&enc);
        let task = TaskSpec::sample(crate::env::EnvKind::GazeLinear, 3).unwrap();
        let buf = filled_buffer(3, 300, &mut rng);
        record_collapse_metrics(&enc, &[&buf], 64, 0, 0, &mut rng).unwrap();
        export_latent_scatter(&enc, &[(&task, &buf)]).unwrap();
        assert_eq!(fingerprint(&enc), before);
    }

    #[test]
    fn scatter_rows_per_task_and_identical_tasks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = TaskEncoder::new(2, 1, 3, 16, 2, &mut rng).unwrap();
        let t1 = TaskSpec::sample(crate::env::EnvKind::GazeLinear, 1).unwrap();
        let t2 = TaskSpec::sample(crate::env::EnvKind::GazeLinear, 2).unwrap();
        let b1 = filled_buffer(1, 250, &mut rng);
        let b2 = filled_buffer(2, 50, &mut rng);
        let rows = export_latent_scatter(&enc, &[(&t1, &b1), (&t2, &b2), (&t1, &b1)]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[2]);
        assert_eq!(rows[0].label, t1.label());
        assert_eq!(scatter_csv(&rows).lines().count(), 4);
    }

    #[test]
    fn summary_format_and_values() {
        let rows: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| ScatterRow {
                task_id: 0,
                label: 0,
                z: vec![v, -v],
            })
            .collect();
        let s = scatter_summary(&rows);
        assert_eq!(s, vec![(2.0, 1.0), (-2.0, 1.0)]);
        assert_eq!(format_scatter_summary(&s), "z1: 2.000 ± 1.000\nz2: -2.000 ± 1.000");
    }

    #[test]
    fn activation_map_matches_forward() {
        let p = RbfParams::fixed(2, 5, (-5.0, 5.0)).unwrap();
        let grid: Vec<f64> = (0..41).map(|i| -6.0 + 0.3 * i as f64).collect();
        let map = export_rbf_activation_map(&p, 1, &grid).unwrap();
        assert_eq!(map.len() * 5, grid.len() * 5);
        for row in &map {
            let out = p.forward(&[p.center(0, 0), row[0]]).unwrap();
            assert_eq!(&row[1..], &out[5..10]);
        }
        let centers: Vec<f64> = (0..5).map(|j| p.center(1, j)).collect();
        let at = export_rbf_activation_map(&p, 1, &centers).unwrap();
        for (j, row) in at.iter().enumerate() {
            assert_eq!(row[1 + j], 1.0);
        }
        assert!(export_rbf_activation_map(&p, 2, &grid).is_err());
    }

    #[test]
    fn probe_indices_are_fixed() {
        let a = probe_task_indices(100);
        assert_eq!(a, probe_task_indices(100));
        assert_eq!(a.len(), 5);
        assert_eq!(probe_task_indices(3), vec![0, 1, 2]);
    }
}
