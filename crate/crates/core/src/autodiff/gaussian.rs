use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Reparameterized sample from a tanh-squashed diagonal Gaussian.
///
/// Returns the action `tanh(mean + exp(log_std) * noise)` and the per-row log
/// density `[n, 1]`, including the change-of-variables term. `log_std` is
/// clamped to `[LOG_STD_MIN, LOG_STD_MAX]` first. Gradients flow to both
/// `mean` and `log_std`; `noise` is a constant.
pub fn tanh_gaussian_sample(g: &mut Graph, mean: Var, log_std: Var, noise: &Tensor) -> Result<(Var, Var)> {
    let shape = g.value(mean).shape();
    if g.value(log_std).shape() != shape || noise.shape() != shape {
        return Err(Error::shape(
            "tanh_gaussian_sample",
            format!("mean, log_std and noise of shape {shape:?}"),
            format!("{:?} / {:?}", g.value(log_std).shape(), noise.shape()),
        ));
    }
    let log_std = g.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = g.exp(log_std);
    let eps = g.constant(noise.clone());
    let spread = g.mul(std, eps)?;
    let pre = g.add(mean, spread)?;
    let action = g.tanh(pre);

    // log N(pre; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2
    let gauss_const = noise.map(|e| -0.5 * e * e - HALF_LN_2PI);
    let gauss_const = g.constant(gauss_const);
    let gauss = g.sub(gauss_const, log_std)?;
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)), stable for large |u|
    let neg2u = g.scale(pre, -2.0);
    let sp = g.softplus(neg2u);
    let u_plus_sp = g.add(pre, sp)?;
    let inner = g.scale(u_plus_sp, -2.0);
    let log_jac = g.offset(inner, 2.0 * std::f64::consts::LN_2);
    let per_dim = g.sub(gauss, log_jac)?;
    let log_prob = g.sum_cols(per_dim);
    Ok((action, log_prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(mean: f64, log_std: f64, noise: f64) -> (f64, f64) {
        let mut g = Graph::new();
        let m = g.constant(Tensor::scalar(mean));
        let s = g.constant(Tensor::scalar(log_std));
        let (a, lp) = tanh_gaussian_sample(&mut g, m, s, &Tensor::scalar(noise)).unwrap();
        (g.value(a).item(), g.value(lp).item())
    }

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let (a, _) = sample(0.8, -0.3, 0.0);
        assert_eq!(a, 0.8f64.tanh());
    }

    #[test]
    fn symmetric_case_is_standard_normal_mode() {
        let (a, lp) = sample(0.0, 0.0, 0.0);
        assert_eq!(a, 0.0);
        // tanh'(0) = 1, so the squashed density at 0 equals the normal mode.
        assert!((lp + HALF_LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn actions_stay_inside_open_interval() {
        for noise in [-1e3, -40.0, 40.0, 1e3] {
            let (a, lp) = sample(5.0, 2.0, noise);
            assert!(a.abs() < 1.0);
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let (_, lp_hi) = sample(0.1, 50.0, 0.3);
        let (_, lp_max) = sample(0.1, LOG_STD_MAX, 0.3);
        assert_eq!(lp_hi, lp_max);
    }

    /// The squashed density integrated over an interval must equal the
    /// Gaussian mass of the pre-image interval, both by midpoint quadrature.
    #[test]
    fn log_prob_matches_quadrature() {
        let (mean, log_std) = (0.4, -0.2);
        let std = f64::exp(log_std);
        let density = |a: f64| {
            let u: f64 = a.atanh();
            let (_, lp) = sample(mean, log_std, (u - mean) / std);
            lp.exp()
        };
        let normal = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
        let integrate = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| {
            let h = (hi - lo) / n as f64;
            (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
        };
        for (a1, a2) in [(-0.9, -0.5), (-0.2, 0.3), (0.5, 0.95), (-0.999, 0.999)] {
            let squashed = integrate(&density, a1, a2, 20_000);
            let gaussian = integrate(&normal, f64::atanh(a1), f64::atanh(a2), 20_000);
            assert!((squashed - gaussian).abs() < 1e-3, "[{a1}, {a2}]: {squashed} vs {gaussian}");
        }
    }

    #[test]
    fn gradients_reach_mean_and_log_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mean = Tensor::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let log_std = Tensor::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.5..0.5)).collect()).unwrap();
            let noise = Tensor::from_vec(3, 2, (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let report = check_gradients(&[mean, log_std], 1e-5, |g, v| {
                let (a, lp) = tanh_gaussian_sample(g, v[0], v[1], &noise)?;
                let sa = g.sum(a);
                let slp = g.sum(lp);
                g.add(sa, slp)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
