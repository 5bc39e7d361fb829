//! Per-coordinate radial-basis uplift of the task code.
//!
//! Every latent coordinate `z[i]` feeds `k` Gaussian neurons
//! `exp(-delta[i][j] * (z[i] - c[i][j])^2)`, giving a `d * k` output laid out
//! as `out[i * k + j]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Parameters, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    d: usize,
    k: usize,
    /// `[1, d*k]`
    centers: Tensor,
    /// `[1, d*k]`, natural log of the positive scale factors.
    log_scales: Tensor,
    trainable: bool,
}

/// Default interval covered by evenly spaced centers.
pub const DEFAULT_INTERVAL: (f64, f64) = (-5.0, 5.0);

impl RbfParams {
    /// Centers evenly spaced over `[lo, hi]` for every input dimension, with
    /// scales chosen so that two neighbors both output 0.5 halfway between
    /// their centers: `delta = 4 ln 2 / spacing^2`.
    pub fn fixed(d: usize, k: usize, interval: (f64, f64)) -> Result<Self> {
        Self::evenly_spaced(d, k, interval, false)
    }

    /// Same initialization as [`RbfParams::fixed`], but centers and log-scales
    /// receive gradients.
    pub fn trainable(d: usize, k: usize, interval: (f64, f64)) -> Result<Self> {
        Self::evenly_spaced(d, k, interval, true)
    }

    fn evenly_spaced(d: usize, k: usize, (lo, hi): (f64, f64), trainable: bool) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("RBF layer needs at least 2 neurons per dimension, got {k}")));
        }
        if d == 0 {
            return Err(Error::Config("RBF layer needs at least one input dimension".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("RBF interval must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        let spacing = (hi - lo) / (k - 1) as f64;
        let scale = 4.0 * std::f64::consts::LN_2 / (spacing * spacing);
        let row: Vec<f64> = (0..k).map(|j| lo + spacing * j as f64).collect();
        let centers = row.iter().copied().cycle().take(d * k).collect();
        Ok(RbfParams {
            d,
            k,
            centers: Tensor::row_vector(centers),
            log_scales: Tensor::filled(1, d * k, scale.ln()),
            trainable,
        })
    }

    pub fn from_parts(d: usize, k: usize, centers: Vec<f64>, scales: Vec<f64>, trainable: bool) -> Result<Self> {
        if centers.len() != d * k || scales.len() != d * k {
            return Err(Error::shape("RbfParams::from_parts", d * k, format!("{}/{}", centers.len(), scales.len())));
        }
        if let Some(bad) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("RBF scale factors must be positive, got {bad}")));
        }
        Ok(RbfParams {
            d,
            k,
            centers: Tensor::row_vector(centers),
            log_scales: Tensor::row_vector(scales.iter().map(|s| s.ln()).collect()),
            trainable,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn neurons_per_dim(&self) -> usize {
        self.k
    }

    pub fn output_dim(&self) -> usize {
        self.d * self.k
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn center(&self, i: usize, j: usize) -> f64 {
        self.centers.data()[i * self.k + j]
    }

    pub fn scale(&self, i: usize, j: usize) -> f64 {
        self.log_scales.data()[i * self.k + j].exp()
    }

    /// Evaluates the layer on one latent vector.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d {
            return Err(Error::shape("rbf_forward input", self.d, z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rbf_forward input".into()));
        }
        let mut out = Vec::with_capacity(self.d * self.k);
        for (i, &zi) in z.iter().enumerate() {
            for j in 0..self.k {
                let diff = zi - self.center(i, j);
                out.push((-self.scale(i, j) * diff * diff).exp());
            }
        }
        Ok(out)
    }

    /// Records the layer on a batch `z: [n, d] -> [n, d*k]`. `params` are the
    /// bound `[centers, log_scales]`.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], z: Var) -> Result<Var> {
        let cols = g.value(z).cols();
        if cols != self.d {
            return Err(Error::shape("rbf layer input", self.d, cols));
        }
        if !g.value(z).is_finite() {
            return Err(Error::NonFinite("rbf layer input".into()));
        }
        let (centers, log_scales) = (params[0], params[1]);
        let expanded = g.repeat_cols(z, self.k);
        let diff = g.sub(expanded, centers)?;
        let sq = g.square(diff);
        let scales = g.exp(log_scales);
        let scaled = g.mul(sq, scales)?;
        let neg = g.neg(scaled);
        Ok(g.exp(neg))
    }
}

impl Parameters for RbfParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.centers, &self.log_scales]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.centers, &mut self.log_scales]
    }

    fn names(&self) -> Vec<String> {
        vec!["rbf.centers".into(), "rbf.log_scales".into()]
    }
}
