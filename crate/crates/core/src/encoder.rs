//! Variational task inference.
//!
//! Each transition of a context is mapped to an independent diagonal Gaussian
//! factor; the posterior over the task code is their normalized product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bind, mlp_forward, Graph, Mlp, MlpSpec, Parameters, Tensor, Var};
use crate::error::{Error, Result};

/// Lower bound added to every factor variance.
pub const VAR_FLOOR: f64 = 1e-7;

/// One `(s, a, r, s')` step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

impl Transition {
    /// Encoder input layout: `[s | a | r | s']`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.s.len() + self.a.len() + 1);
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.a);
        v.push(self.r);
        v.extend_from_slice(&self.s_next);
        v
    }
}

/// Diagonal Gaussian over the task code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl PosteriorGaussian {
    pub fn prior(dim: usize) -> Self {
        PosteriorGaussian {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Precision-weighted product of diagonal Gaussian factors.
pub fn product_of_gaussians(factors: &[(Vec<f64>, Vec<f64>)]) -> Result<PosteriorGaussian> {
    let Some((first, _)) = factors.first() else {
        return Err(Error::Usage("product of an empty set of Gaussian factors".into()));
    };
    let d = first.len();
    let mut precision = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for (n, (mean, var)) in factors.iter().enumerate() {
        if mean.len() != d || var.len() != d {
            return Err(Error::shape(format!("Gaussian factor {n}"), d, format!("{}/{}", mean.len(), var.len())));
        }
        for i in 0..d {
            if !(var[i] > 0.0) {
                return Err(Error::Usage(format!("factor {n} has non-positive variance {}", var[i])));
            }
            precision[i] += 1.0 / var[i];
            weighted[i] += mean[i] / var[i];
        }
    }
    let var: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
    let mean = weighted.iter().zip(&var).map(|(w, v)| w * v).collect();
    Ok(PosteriorGaussian { mean, var })
}

/// `z = mean + sqrt(var) * noise`.
pub fn sample_latent(post: &PosteriorGaussian, noise: &[f64]) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.var)
        .zip(noise)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect()
}

/// KL divergence to the standard normal prior, per dimension and summed.
pub fn kl_to_prior(post: &PosteriorGaussian) -> (Vec<f64>, f64) {
    let per_dim: Vec<f64> = post
        .mean
        .iter()
        .zip(&post.var)
        .map(|(m, v)| 0.5 * (m * m + v - 1.0 - v.ln()))
        .collect();
    let total = per_dim.iter().sum();
    (per_dim, total)
}

/// Factor network `(s, a, r, s') -> (mean, var)` in `R^d x R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEncoder {
    net: Mlp,
    latent_dim: usize,
}

impl TaskEncoder {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        latent_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::relu_net(2 * obs_dim + act_dim + 1, hidden, depth, 2 * latent_dim)?;
        Ok(TaskEncoder {
            net: Mlp::new(spec, rng),
            latent_dim,
        })
    }

    pub fn from_net(net: Mlp, latent_dim: usize) -> Result<Self> {
        if net.spec().output_dim() != 2 * latent_dim {
            return Err(Error::shape("encoder output", 2 * latent_dim, net.spec().output_dim()));
        }
        Ok(TaskEncoder { net, latent_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.spec().input_dim()
    }

    /// Records the factor heads for a batch of encoder inputs `[n, in]`,
    /// returning `(means, vars)`, both `[n, d]`.
    pub fn factors_graph(&self, g: &mut Graph, params: &[Var], inputs: Var) -> Result<(Var, Var)> {
        let out = mlp_forward(g, params, self.net.spec(), inputs)?;
        let mean = g.slice_cols(out, 0, self.latent_dim)?;
        let raw = g.slice_cols(out, self.latent_dim, self.latent_dim)?;
        let sp = g.softplus(raw);
        let var = g.offset(sp, VAR_FLOOR);
        Ok((mean, var))
    }

    /// Factor means and variances for a batch of encoder inputs.
    pub fn encode_batch(&self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("encoder input", self.input_dim(), inputs.cols()));
        }
        let mut g = Graph::new();
        let params = bind(&mut g, &self.net, false);
        let x = g.constant(inputs.clone());
        let (m, v) = self.factors_graph(&mut g, &params, x)?;
        Ok((g.value(m).clone(), g.value(v).clone()))
    }

    pub fn encode_transition(&self, t: &Transition) -> Result<(Vec<f64>, Vec<f64>)> {
        let (m, v) = self.encode_batch(&Tensor::row_vector(t.to_input()))?;
        Ok((m.into_vec(), v.into_vec()))
    }

    fn factors(&self, inputs: &Tensor) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let (m, v) = self.encode_batch(inputs)?;
        Ok((0..m.rows()).map(|r| (m.row(r).to_vec(), v.row(r).to_vec())).collect())
    }

    /// Posterior `q(z | c)` from encoder inputs `[N, in]`.
    pub fn posterior_from_inputs(&self, inputs: &Tensor) -> Result<PosteriorGaussian> {
        product_of_gaussians(&self.factors(inputs)?)
    }

    pub fn posterior(&self, context: &[Transition]) -> Result<PosteriorGaussian> {
        self.posterior_from_inputs(&inputs_of(context)?)
    }

    /// Mean of the per-transition factor means (not the product mean).
    pub fn posterior_mean_estimate_from_inputs(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        if inputs.rows() == 0 {
            return Err(Error::Usage("posterior mean estimate of an empty context".into()));
        }
        let (m, _) = self.encode_batch(inputs)?;
        let n = m.rows() as f64;
        Ok((0..self.latent_dim)
            .map(|i| (0..m.rows()).map(|r| m.get(r, i)).sum::<f64>() / n)
            .collect())
    }

    pub fn posterior_mean_estimate(&self, context: &[Transition]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::Usage("posterior mean estimate of an empty context".into()));
        }
        self.posterior_mean_estimate_from_inputs(&inputs_of(context)?)
    }
}

impl Parameters for TaskEncoder {
    fn tensors(&self) -> Vec<&Tensor> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.tensors_mut()
    }

    fn names(&self) -> Vec<String> {
        self.net.names().into_iter().map(|n| format!("encoder.{n}")).collect()
    }
}

fn inputs_of(context: &[Transition]) -> Result<Tensor> {
    Tensor::from_rows(&context.iter().map(Transition::to_input).collect::<Vec<_>>())
}

/// Product of Gaussians over consecutive groups of `group` factor rows:
/// `[T*group, d] -> ([T, d], [T, d])`.
pub fn product_of_gaussians_graph(g: &mut Graph, means: Var, vars: Var, group: usize) -> Result<(Var, Var)> {
    let one = g.constant(Tensor::scalar(1.0));
    let precision = g.div(one, vars)?;
    let weighted = g.div(means, vars)?;
    let total_precision = g.sum_row_groups(precision, group)?;
    let total_weighted = g.sum_row_groups(weighted, group)?;
    let post_var = g.div(one, total_precision)?;
    let post_mean = g.mul(total_weighted, post_var)?;
    Ok((post_mean, post_var))
}

/// Reparameterized latent sample `mean + sqrt(var) * noise`.
pub fn sample_latent_graph(g: &mut Graph, mean: Var, var: Var, noise: &Tensor) -> Result<Var> {
    let std = g.sqrt(var);
    let eps = g.constant(noise.clone());
    let spread = g.mul(std, eps)?;
    g.add(mean, spread)
}

/// Per-dimension KL to `N(0, I)`, shape of `mean`.
pub fn kl_to_prior_graph(g: &mut Graph, mean: Var, var: Var) -> Result<Var> {
    let m2 = g.square(mean);
    let lv = g.log(var);
    let a = g.add(m2, var)?;
    let b = g.sub(a, lv)?;
    let c = g.offset(b, -1.0);
    Ok(g.scale(c, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transition(seed: u64) -> Transition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Transition {
            s: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            a: vec![rng.random_range(-1.0..1.0)],
            r: rng.random_range(0.0..1.0),
            s_next: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_encoder_outputs_floor_softplus() {
        let spec = MlpSpec::relu_net(10, 8, 2, 6).unwrap();
        let enc = TaskEncoder::from_net(Mlp::zeros(spec), 3).unwrap();
        let (m, v) = enc.encode_transition(&transition(1)).unwrap();
        assert_eq!(m, vec![0.0; 3]);
        let expect = std::f64::consts::LN_2 + VAR_FLOOR;
        assert!(v.iter().all(|&x| (x - expect).abs() < 1e-15));
    }

    #[test]
    fn identical_transitions_identical_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = TaskEncoder::new(4, 1, 3, 16, 2, &mut rng).unwrap();
        let t = transition(9);
        assert_eq!(enc.encode_transition(&t).unwrap(), enc.encode_transition(&t.clone()).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = TaskEncoder::new(5, 1, 3, 16, 2, &mut rng).unwrap();
        assert!(matches!(enc.encode_transition(&transition(1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn product_equal_factors() {
        let p = product_of_gaussians(&[(vec![0.0], vec![1.0]), (vec![0.0], vec![1.0])]).unwrap();
        assert_eq!(p, PosteriorGaussian { mean: vec![0.0], var: vec![0.5] });
        let p = product_of_gaussians(&[(vec![1.0], vec![1.0]), (vec![3.0], vec![1.0])]).unwrap();
        assert_eq!(p, PosteriorGaussian { mean: vec![2.0], var: vec![0.5] });
    }

    #[test]
    fn product_empty_is_error() {
        assert!(product_of_gaussians(&[]).is_err());
    }

    #[test]
    fn sample_zero_noise_is_mean() {
        let p = PosteriorGaussian { mean: vec![1.5, -2.0], var: vec![0.3, 4.0] };
        assert_eq!(sample_latent(&p, &[0.0, 0.0]), p.mean);
        let tiny = PosteriorGaussian { mean: vec![1.5], var: vec![VAR_FLOOR * 1e-10] };
        assert!((sample_latent(&tiny, &[3.0])[0] - 1.5).abs() < 1e-7);
    }

    #[test]
    fn kl_values() {
        let (d, t) = kl_to_prior(&PosteriorGaussian::prior(3));
        assert_eq!((d, t), (vec![0.0; 3], 0.0));
        let (d, _) = kl_to_prior(&PosteriorGaussian { mean: vec![1.0], var: vec![1.0] });
        assert_eq!(d[0], 0.5);
        let (d, _) = kl_to_prior(&PosteriorGaussian { mean: vec![0.0], var: vec![2.0] });
        assert!((d[0] - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((d[0] - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn mean_estimate_is_average_of_factor_means() {
        // Encoder whose mean head copies the reward: means {0, 2} -> 1.
        let spec = MlpSpec::new(vec![3, 2], crate::autodiff::Activation::Relu, crate::autodiff::Activation::None).unwrap();
        let w = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let enc = TaskEncoder::from_net(Mlp::from_parts(spec, vec![w], vec![Tensor::zeros(1, 2)]).unwrap(), 1).unwrap();
        let mk = |r| Transition { s: vec![0.5], a: vec![0.1], r, s_next: vec![] };
        let z = enc.posterior_mean_estimate(&[mk(0.0), mk(2.0)]).unwrap();
        assert_eq!(z, vec![1.0]);
        let z = enc.posterior_mean_estimate(&[mk(0.7), mk(0.7), mk(0.7)]).unwrap();
        assert!((z[0] - 0.7).abs() < 1e-15);
        assert!(enc.posterior_mean_estimate(&[]).is_err());
    }

    #[test]
    fn graph_posterior_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = TaskEncoder::new(4, 1, 3, 16, 2, &mut rng).unwrap();
        let ctx: Vec<Transition> = (0..6).map(transition).collect();
        let inputs = inputs_of(&ctx).unwrap();
        let mut g = Graph::new();
        let params = bind(&mut g, &enc, true);
        let x = g.constant(inputs);
        let (m, v) = enc.factors_graph(&mut g, &params, x).unwrap();
        let (pm, pv) = product_of_gaussians_graph(&mut g, m, v, 3).unwrap();
        for (t, chunk) in ctx.chunks(3).enumerate() {
            let p = enc.posterior(chunk).unwrap();
            for i in 0..3 {
                assert!((g.value(pm).get(t, i) - p.mean[i]).abs() < 1e-12);
                assert!((g.value(pv).get(t, i) - p.var[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_and_kl_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let means = Tensor::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let vars = Tensor::from_vec(4, 2, (0..8).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
            let noise = Tensor::from_vec(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let report = check_gradients(&[means, vars], 1e-5, |g, v| {
                let (pm, pv) = product_of_gaussians_graph(g, v[0], v[1], 2)?;
                let z = sample_latent_graph(g, pm, pv, &noise)?;
                let kl = kl_to_prior_graph(g, pm, pv)?;
                let zs = g.square(z);
                let a = g.sum(zs);
                let b = g.sum(kl);
                g.add(a, b)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    proptest! {
        #[test]
        fn product_variance_below_min_factor(
            raw in proptest::collection::vec((-3.0f64..3.0, 0.01f64..5.0), 1..8)
        ) {
            let factors: Vec<_> = raw.iter().map(|&(m, v)| (vec![m], vec![v])).collect();
            let p = product_of_gaussians(&factors).unwrap();
            let min_var = raw.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            prop_assert!(p.var[0] <= min_var * (1.0 + 1e-12));
            let mut dup = factors.clone();
            dup.push(factors[0].clone());
            let q = product_of_gaussians(&dup).unwrap();
            prop_assert!(q.var[0] < p.var[0]);
        }

        #[test]
        fn kl_nonnegative(m in -5.0f64..5.0, v in 1e-3f64..10.0) {
            let (d, _) = kl_to_prior(&PosteriorGaussian { mean: vec![m], var: vec![v] });
            prop_assert!(d[0] >= 0.0);
        }
    }
}
