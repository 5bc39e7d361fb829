//! Soft actor-critic with an optional task-code input.
//!
//! The actor and critics read `[obs | code]` and `[obs | action | code]`,
//! where `code` is the output of a [`TaskCodeHead`] applied to a latent task
//! sample. Plain SAC has no head and no code.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    bind, collect_grads, mlp_forward, soft_update, tanh_gaussian_sample, Adam, AdamConfig, Graph, Mlp, MlpSpec,
    Parameters, Tensor, Var,
};
use crate::encoder::Transition;
use crate::error::{Error, Result};
use crate::rbf::RbfParams;

/// Algorithm variants compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Latent passes through an extra linear layer of width `d * k` with relu.
    PearlParity,
    /// Latent feeds the actor and critic directly.
    VanillaPearl,
    /// Latent passes through a trainable RBF layer.
    RbfPearl,
    /// Latent passes through an RBF layer with frozen centers and widths.
    RbfPearlFixed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::PearlParity,
        Variant::VanillaPearl,
        Variant::RbfPearl,
        Variant::RbfPearlFixed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::PearlParity => "PEARL",
            Variant::VanillaPearl => "Vanilla-PEARL",
            Variant::RbfPearl => "RBF-PEARL",
            Variant::RbfPearlFixed => "RBF-PEARL-fp",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::PearlParity => "pearl_parity",
            Variant::VanillaPearl => "vanilla_pearl",
            Variant::RbfPearl => "rbf_pearl",
            Variant::RbfPearlFixed => "rbf_pearl_fixed",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm variant `{s}`")))
    }
}

/// Maps a latent sample `[n, d]` to the code consumed by actor and critics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskCodeHead {
    Identity { dim: usize },
    Linear { weight: Tensor, bias: Tensor },
    Rbf(RbfParams),
}

impl TaskCodeHead {
    pub fn for_variant<R: Rng + ?Sized>(
        variant: Variant,
        d: usize,
        k: usize,
        interval: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        Ok(match variant {
            Variant::VanillaPearl => TaskCodeHead::Identity { dim: d },
            Variant::PearlParity => {
                if k == 0 {
                    return Err(Error::Config("neurons per dimension must be positive".into()));
                }
                let bound = 1.0 / (d as f64).sqrt();
                let w = (0..d * d * k).map(|_| rng.random_range(-bound..bound)).collect();
                TaskCodeHead::Linear {
                    weight: Tensor::from_vec(d, d * k, w)?,
                    bias: Tensor::zeros(1, d * k),
                }
            }
            Variant::RbfPearl => TaskCodeHead::Rbf(RbfParams::trainable(d, k, interval)?),
            Variant::RbfPearlFixed => TaskCodeHead::Rbf(RbfParams::fixed(d, k, interval)?),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskCodeHead::Identity { dim } => *dim,
            TaskCodeHead::Linear { weight, .. } => weight.rows(),
            TaskCodeHead::Rbf(p) => p.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskCodeHead::Identity { dim } => *dim,
            TaskCodeHead::Linear { weight, .. } => weight.cols(),
            TaskCodeHead::Rbf(p) => p.output_dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        match self {
            TaskCodeHead::Identity { .. } => false,
            TaskCodeHead::Linear { .. } => true,
            TaskCodeHead::Rbf(p) => p.is_trainable(),
        }
    }

    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], z: Var) -> Result<Var> {
        match self {
            TaskCodeHead::Identity { dim } => {
                let cols = g.value(z).cols();
                if cols != *dim {
                    return Err(Error::shape("task code input", dim, cols));
                }
                Ok(z)
            }
            TaskCodeHead::Linear { .. } => {
                let h = g.matmul(z, params[0])?;
                let h = g.add(h, params[1])?;
                Ok(g.relu(h))
            }
            TaskCodeHead::Rbf(p) => p.forward_graph(g, params, z),
        }
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            TaskCodeHead::Rbf(p) => p.forward(z),
            _ => {
                let mut g = Graph::new();
                let params = bind(&mut g, self, false);
                let zv = g.constant(Tensor::row_vector(z.to_vec()));
                let out = self.forward_graph(&mut g, &params, zv)?;
                Ok(g.value(out).data().to_vec())
            }
        }
    }
}

impl Parameters for TaskCodeHead {
    fn tensors(&self) -> Vec<&Tensor> {
        match self {
            TaskCodeHead::Identity { .. } => Vec::new(),
            TaskCodeHead::Linear { weight, bias } => vec![weight, bias],
            TaskCodeHead::Rbf(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            TaskCodeHead::Identity { .. } => Vec::new(),
            TaskCodeHead::Linear { weight, bias } => vec![weight, bias],
            TaskCodeHead::Rbf(p) => p.tensors_mut(),
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            TaskCodeHead::Identity { .. } => Vec::new(),
            TaskCodeHead::Linear { .. } => vec!["head.weight".into(), "head.bias".into()],
            TaskCodeHead::Rbf(p) => p.names(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub twin_critics: bool,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub batch_size: usize,
    pub reward_scale: f64,
    pub optimizer: AdamConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.2,
            twin_critics: true,
            hidden_width: 300,
            hidden_depth: 3,
            batch_size: 256,
            reward_scale: 1.0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.hidden_width == 0 || self.hidden_depth == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden width, hidden depth and batch size must be positive".into()));
        }
        if !self.reward_scale.is_finite() {
            return Err(Error::Config("reward scale must be finite".into()));
        }
        Ok(())
    }

    fn n_critics(&self) -> usize {
        if self.twin_critics {
            2
        } else {
            1
        }
    }
}

/// Actor, critics, target critics and the optional task-code head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacNetworks {
    obs_dim: usize,
    act_dim: usize,
    pub actor: Mlp,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    pub head: Option<TaskCodeHead>,
    pub target_head: Option<TaskCodeHead>,
}

impl SacNetworks {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        head: Option<TaskCodeHead>,
        config: &SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Config("observation and action sizes must be positive".into()));
        }
        let code = head.as_ref().map_or(0, TaskCodeHead::output_dim);
        let (w, depth) = (config.hidden_width, config.hidden_depth);
        let actor = Mlp::new(MlpSpec::relu_net(obs_dim + code, w, depth, 2 * act_dim)?, rng);
        let critic_spec = MlpSpec::relu_net(obs_dim + act_dim + code, w, depth, 1)?;
        let critics: Vec<Mlp> = (0..config.n_critics())
            .map(|_| Mlp::new(critic_spec.clone(), rng))
            .collect();
        Ok(SacNetworks {
            obs_dim,
            act_dim,
            actor,
            target_critics: critics.clone(),
            critics,
            target_head: head.clone(),
            head,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.head.as_ref().map(TaskCodeHead::input_dim)
    }

    /// Task code for one latent sample. Empty without a head.
    pub fn task_code(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.head {
            Some(h) => h.forward(z),
            None => Ok(Vec::new()),
        }
    }

    /// Action for a single observation. With `noise` the policy samples
    /// `tanh(mean + std * noise)`; without it the action is `tanh(mean)`.
    pub fn act(&self, obs: &[f64], code: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(obs.len() + code.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(code);
        let out = self.actor.forward(&Tensor::row_vector(input))?;
        let out = out.data();
        let a = self.act_dim;
        Ok((0..a)
            .map(|i| {
                let mean = out[i];
                let u = match noise {
                    Some(n) => {
                        let log_std = out[a + i].clamp(crate::autodiff::LOG_STD_MIN, crate::autodiff::LOG_STD_MAX);
                        mean + log_std.exp() * n[i]
                    }
                    None => mean,
                };
                u.tanh().clamp(-crate::autodiff::TANH_BOUND, crate::autodiff::TANH_BOUND)
            })
            .collect())
    }

    /// Polyak update of the target critics and target head.
    pub fn soft_update_targets(&mut self, tau: f64) {
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, o, tau);
        }
        if let (Some(t), Some(o)) = (self.target_head.as_mut(), self.head.as_ref()) {
            soft_update(t, o, tau);
        }
    }

    /// Binds every network into `g`. Trainable copies feed the losses that
    /// update them; frozen copies carry values only.
    pub fn bind(&self, g: &mut Graph) -> BoundSac {
        let head_trainable = self.head.as_ref().is_some_and(TaskCodeHead::is_trainable);
        let bind_head = |g: &mut Graph, h: &Option<TaskCodeHead>, rg: bool| h.as_ref().map_or_else(Vec::new, |h| bind(g, h, rg));
        BoundSac {
            actor: bind(g, &self.actor, true),
            actor_frozen: bind(g, &self.actor, false),
            critics: self.critics.iter().map(|c| bind(g, c, true)).collect(),
            critics_frozen: self.critics.iter().map(|c| bind(g, c, false)).collect(),
            target_critics: self.target_critics.iter().map(|c| bind(g, c, false)).collect(),
            head: bind_head(g, &self.head, head_trainable),
            head_frozen: bind_head(g, &self.head, false),
            target_head: bind_head(g, &self.target_head, false),
        }
    }

    fn code(&self, g: &mut Graph, head: &Option<TaskCodeHead>, params: &[Var], latent: Option<Var>) -> Result<Option<Var>> {
        match (head, latent) {
            (Some(h), Some(z)) => Ok(Some(h.forward_graph(g, params, z)?)),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::Usage("task-conditioned networks need a latent input".into())),
            (None, Some(_)) => Err(Error::Usage("networks without a task-code head take no latent input".into())),
        }
    }

    fn policy(&self, g: &mut Graph, params: &[Var], obs: Var, code: Option<Var>, noise: &Tensor) -> Result<(Var, Var)> {
        let input = match code {
            Some(c) => g.concat_cols(&[obs, c])?,
            None => obs,
        };
        let out = mlp_forward(g, params, self.actor.spec(), input)?;
        let mean = g.slice_cols(out, 0, self.act_dim)?;
        let log_std = g.slice_cols(out, self.act_dim, self.act_dim)?;
        tanh_gaussian_sample(g, mean, log_std, noise)
    }

    fn min_q(&self, g: &mut Graph, critics: &[Vec<Var>], obs: Var, act: Var, code: Option<Var>) -> Result<Var> {
        let qs = self.q_values(g, critics, obs, act, code)?;
        let mut q = qs[0];
        for &other in &qs[1..] {
            q = g.minimum(q, other)?;
        }
        Ok(q)
    }

    fn q_values(&self, g: &mut Graph, critics: &[Vec<Var>], obs: Var, act: Var, code: Option<Var>) -> Result<Vec<Var>> {
        let input = match code {
            Some(c) => g.concat_cols(&[obs, act, c])?,
            None => g.concat_cols(&[obs, act])?,
        };
        critics
            .iter()
            .zip(&self.critics)
            .map(|(p, c)| mlp_forward(g, p, c.spec(), input))
            .collect()
    }
}

/// Graph handles for every network of a [`SacNetworks`].
#[derive(Clone, Debug)]
pub struct BoundSac {
    pub actor: Vec<Var>,
    pub actor_frozen: Vec<Var>,
    pub critics: Vec<Vec<Var>>,
    pub critics_frozen: Vec<Vec<Var>>,
    pub target_critics: Vec<Vec<Var>>,
    pub head: Vec<Var>,
    pub head_frozen: Vec<Var>,
    pub target_head: Vec<Var>,
}

/// Transitions stacked row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_obs: Tensor,
}

impl SacBatch {
    pub fn from_transitions<'a, I>(transitions: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let (mut s, mut a, mut r, mut s2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in transitions {
            s.push(t.s.clone());
            a.push(t.a.clone());
            r.push(vec![t.r]);
            s2.push(t.s_next.clone());
        }
        if s.is_empty() {
            return Err(Error::Usage("a SAC batch needs at least one transition".into()));
        }
        Ok(SacBatch {
            obs: Tensor::from_rows(&s)?,
            actions: Tensor::from_rows(&a)?,
            rewards: Tensor::from_rows(&r)?,
            next_obs: Tensor::from_rows(&s2)?,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.rows() == 0
    }

    pub fn bind(&self, g: &mut Graph) -> BatchVars {
        BatchVars {
            obs: g.constant(self.obs.clone()),
            actions: g.constant(self.actions.clone()),
            rewards: g.constant(self.rewards.clone()),
            next_obs: g.constant(self.next_obs.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchVars {
    pub obs: Var,
    pub actions: Var,
    pub rewards: Var,
    pub next_obs: Var,
}

/// Standard normal draws for the two reparameterized action samples of an
/// update: `next` for the bootstrap target, `current` for the actor loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNoise {
    pub next: Tensor,
    pub current: Tensor,
}

impl PolicyNoise {
    pub fn sample<R: Rng + ?Sized>(rows: usize, act_dim: usize, rng: &mut R) -> Self {
        let mut draw = || {
            let v = (0..rows * act_dim).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::from_vec(rows, act_dim, v).expect("noise shape")
        };
        let next = draw();
        let current = draw();
        PolicyNoise { next, current }
    }
}

/// Bootstrap target `r + gamma * (min target Q(s', a') - alpha * log pi(a'|s'))`
/// with `a'` sampled from the current actor. Carries no gradient.
pub fn td_target(
    g: &mut Graph,
    nets: &SacNetworks,
    bound: &BoundSac,
    batch: &BatchVars,
    latent: Option<Var>,
    next_noise: &Tensor,
    config: &SacConfig,
) -> Result<Var> {
    let z = latent.map(|z| g.detach(z));
    let code_target = nets.code(g, &nets.target_head, &bound.target_head, z)?;
    let code_actor = nets.code(g, &nets.head, &bound.head_frozen, z)?;
    let (a_next, logp_next) = nets.policy(g, &bound.actor_frozen, batch.next_obs, code_actor, next_noise)?;
    let q_next = nets.min_q(g, &bound.target_critics, batch.next_obs, a_next, code_target)?;
    let ent = g.scale(logp_next, config.alpha);
    let v = g.sub(q_next, ent)?;
    let disc = g.scale(v, config.gamma);
    let r = g.scale(batch.rewards, config.reward_scale);
    let y = g.add(r, disc)?;
    Ok(g.detach(y))
}

/// Sum over critics of the mean squared TD error. Gradients reach the online
/// critics, the task-code head and, through `latent`, whatever produced it.
pub fn critic_loss(
    g: &mut Graph,
    nets: &SacNetworks,
    bound: &BoundSac,
    batch: &BatchVars,
    latent: Option<Var>,
    next_noise: &Tensor,
    config: &SacConfig,
) -> Result<Var> {
    let y = td_target(g, nets, bound, batch, latent, next_noise, config)?;
    let code = nets.code(g, &nets.head, &bound.head, latent)?;
    let qs = nets.q_values(g, &bound.critics, batch.obs, batch.actions, code)?;
    let mut total: Option<Var> = None;
    for q in qs {
        let err = g.sub(q, y)?;
        let sq = g.square(err);
        let m = g.mean(sq);
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("at least one critic"))
}

/// Mean of `alpha * log pi(a|s) - min Q(s, a)` with `a` reparameterized from
/// the actor. The latent is detached; critics are read through frozen copies.
pub fn actor_loss(
    g: &mut Graph,
    nets: &SacNetworks,
    bound: &BoundSac,
    obs: Var,
    latent: Option<Var>,
    noise: &Tensor,
    config: &SacConfig,
) -> Result<Var> {
    let z = latent.map(|z| g.detach(z));
    let code = nets.code(g, &nets.head, &bound.head, z)?;
    let (a, logp) = nets.policy(g, &bound.actor, obs, code, noise)?;
    let q = nets.min_q(g, &bound.critics_frozen, obs, a, code)?;
    let ent = g.scale(logp, config.alpha);
    let diff = g.sub(ent, q)?;
    Ok(g.mean(diff))
}

/// Critic loss with an attached latent plus `beta` times the KL term.
pub fn encoder_loss(g: &mut Graph, critic_attached: Var, kl: Var, beta: f64) -> Result<Var> {
    let weighted = g.scale(kl, beta);
    g.add(critic_attached, weighted)
}

/// `target <- (1 - tau) * target + tau * online` for every target network.
pub fn soft_update_target(nets: &mut SacNetworks, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    nets.soft_update_targets(tau);
    Ok(())
}

/// One Adam state per trainable network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacOptimizers {
    pub actor: Adam,
    pub critics: Vec<Adam>,
    pub head: Option<Adam>,
}

impl SacOptimizers {
    pub fn new(nets: &SacNetworks, config: AdamConfig) -> Self {
        SacOptimizers {
            actor: Adam::new(config, &nets.actor),
            critics: nets.critics.iter().map(|c| Adam::new(config, c)).collect(),
            head: nets.head.as_ref().filter(|h| h.is_trainable()).map(|h| Adam::new(config, h)),
        }
    }

    /// Applies the gradients accumulated in `g` for the trainable bindings.
    /// All gradients are checked before any parameter moves.
    pub fn step(&mut self, nets: &mut SacNetworks, g: &Graph, bound: &BoundSac) -> Result<()> {
        let actor_grads = collect_grads(g, &bound.actor);
        let critic_grads: Vec<Vec<Tensor>> = bound.critics.iter().map(|b| collect_grads(g, b)).collect();
        let head_grads = collect_grads(g, &bound.head);
        self.actor.check(&nets.actor, &actor_grads)?;
        for ((opt, c), gr) in self.critics.iter().zip(&nets.critics).zip(&critic_grads) {
            opt.check(c, gr)?;
        }
        if let (Some(opt), Some(h)) = (self.head.as_ref(), nets.head.as_ref()) {
            opt.check(h, &head_grads)?;
        }
        self.actor.step(&mut nets.actor, &actor_grads)?;
        for ((opt, c), gr) in self.critics.iter_mut().zip(nets.critics.iter_mut()).zip(&critic_grads) {
            opt.step(c, gr)?;
        }
        if let (Some(opt), Some(h)) = (self.head.as_mut(), nets.head.as_mut()) {
            opt.step(h, &head_grads)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
}

/// One plain SAC update (no task code) followed by the target update.
pub fn sac_update<R: Rng + ?Sized>(
    nets: &mut SacNetworks,
    opts: &mut SacOptimizers,
    batch: &SacBatch,
    config: &SacConfig,
    rng: &mut R,
) -> Result<SacLosses> {
    let noise = PolicyNoise::sample(batch.len(), nets.act_dim(), rng);
    let mut g = Graph::new();
    let bound = nets.bind(&mut g);
    let vars = batch.bind(&mut g);
    let critic = critic_loss(&mut g, nets, &bound, &vars, None, &noise.next, config)?;
    let actor = actor_loss(&mut g, nets, &bound, vars.obs, None, &noise.current, config)?;
    let total = g.add(critic, actor)?;
    g.backward(total)?;
    let losses = SacLosses {
        critic: g.value(critic).item(),
        actor: g.value(actor).item(),
    };
    opts.step(nets, &g, &bound)?;
    nets.soft_update_targets(config.tau);
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::autodiff::{Activation, LOG_STD_MAX};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(twin: bool) -> SacConfig {
        SacConfig {
            twin_critics: twin,
            hidden_width: 8,
            hidden_depth: 2,
            batch_size: 4,
            ..SacConfig::default()
        }
    }

    fn linear(input: usize, output: usize, w: Vec<f64>, b: Vec<f64>) -> Mlp {
        let spec = MlpSpec::new(vec![input, output], Activation::Relu, Activation::None).unwrap();
        Mlp::from_parts(spec, vec![Tensor::from_vec(input, output, w).unwrap()], vec![Tensor::row_vector(b)]).unwrap()
    }

    /// One-dimensional state and action, linear critic, state-independent actor.
    fn scalar_nets(critic: [f64; 3], target: [f64; 3], mean: f64, log_std: f64) -> SacNetworks {
        let critic_net = linear(2, 1, vec![critic[0], critic[1]], vec![critic[2]]);
        let target_net = linear(2, 1, vec![target[0], target[1]], vec![target[2]]);
        SacNetworks {
            obs_dim: 1,
            act_dim: 1,
            actor: linear(1, 2, vec![0.0, 0.0], vec![mean, log_std]),
            critics: vec![critic_net],
            target_critics: vec![target_net],
            head: None,
            target_head: None,
        }
    }

    fn scalar_batch() -> SacBatch {
        SacBatch {
            obs: Tensor::column_vector(vec![0.5, -1.0]),
            actions: Tensor::column_vector(vec![0.2, -0.7]),
            rewards: Tensor::column_vector(vec![1.0, -0.5]),
            next_obs: Tensor::column_vector(vec![0.3, 2.0]),
        }
    }

    fn tanh_log_prob(u: f64, noise: f64, log_std: f64) -> f64 {
        let normal = -0.5 * noise * noise - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
        normal - (1.0 - u.tanh().powi(2)).ln()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, obs: usize, act: usize) -> SacBatch {
        let mut t = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        SacBatch {
            obs: t(n, obs),
            actions: t(n, act),
            rewards: t(n, 1),
            next_obs: t(n, obs),
        }
    }

    #[test]
    fn soft_update_recurrence() {
        let mut nets = scalar_nets([0.0; 3], [0.0; 3], 0.0, 0.0);
        nets.critics[0] = linear(2, 1, vec![1.0, 1.0], vec![1.0]);
        soft_update_target(&mut nets, 0.5).unwrap();
        assert_eq!(nets.target_critics[0].weights()[0].data(), &[0.5, 0.5]);
        soft_update_target(&mut nets, 0.5).unwrap();
        assert_eq!(nets.target_critics[0].biases()[0].data(), &[0.75]);
        soft_update_target(&mut nets, 1.0).unwrap();
        assert_eq!(nets.target_critics, nets.critics);
        assert!(soft_update_target(&mut nets, 0.0).is_err());
    }

    #[test]
    fn soft_update_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nets = SacNetworks::new(3, 2, None, &small_config(true), &mut rng).unwrap();
        let before = nets.target_critics.clone();
        soft_update_target(&mut nets, 0.005).unwrap();
        soft_update_target(&mut nets, 0.005).unwrap();
        assert_eq!(nets.target_critics, before);
    }

    #[test]
    fn critic_loss_matches_hand_evaluation() {
        let cfg = SacConfig {
            twin_critics: false,
            gamma: 0.9,
            alpha: 0.3,
            ..SacConfig::default()
        };
        let (mean, log_std) = (0.1, -0.4);
        let critic = [0.7, -1.2, 0.05];
        let target = [0.4, 0.9, -0.2];
        let nets = scalar_nets(critic, target, mean, log_std);
        let batch = scalar_batch();
        let next_noise = Tensor::column_vector(vec![0.3, -1.1]);

        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = critic_loss(&mut g, &nets, &bound, &vars, None, &next_noise, &cfg).unwrap();

        let mut expected = 0.0;
        for i in 0..2 {
            let (s, a, r, s2) = (batch.obs.data()[i], batch.actions.data()[i], batch.rewards.data()[i], batch.next_obs.data()[i]);
            let n = next_noise.data()[i];
            let u = mean + log_std.exp() * n;
            let a2 = u.tanh();
            let v = target[0] * s2 + target[1] * a2 + target[2] - cfg.alpha * tanh_log_prob(u, n, log_std);
            let y = r + cfg.gamma * v;
            let q = critic[0] * s + critic[1] * a + critic[2];
            expected += (q - y).powi(2) / 2.0;
        }
        approx::assert_relative_eq!(g.value(loss).item(), expected, max_relative = 1e-12);
    }

    #[test]
    fn actor_loss_matches_hand_evaluation() {
        let cfg = SacConfig {
            twin_critics: false,
            alpha: 0.25,
            ..SacConfig::default()
        };
        let (mean, log_std) = (-0.3, 0.2);
        let critic = [0.5, 1.5, -0.1];
        let nets = scalar_nets(critic, [0.0; 3], mean, log_std);
        let batch = scalar_batch();
        let noise = Tensor::column_vector(vec![-0.4, 0.8]);

        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = actor_loss(&mut g, &nets, &bound, vars.obs, None, &noise, &cfg).unwrap();

        let mut expected = 0.0;
        for i in 0..2 {
            let n = noise.data()[i];
            let u = mean + log_std.exp() * n;
            let q = critic[0] * batch.obs.data()[i] + critic[1] * u.tanh() + critic[2];
            expected += (cfg.alpha * tanh_log_prob(u, n, log_std) - q) / 2.0;
        }
        approx::assert_relative_eq!(g.value(loss).item(), expected, max_relative = 1e-12);
    }

    #[test]
    fn zero_critics_zero_rewards_zero_discount_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SacConfig {
            gamma: 0.0,
            ..small_config(true)
        };
        let mut nets = SacNetworks::new(3, 2, None, &cfg, &mut rng).unwrap();
        for c in nets.critics.iter_mut().chain(nets.target_critics.iter_mut()) {
            *c = Mlp::zeros(c.spec().clone());
        }
        let mut batch = random_batch(&mut rng, 5, 3, 2);
        batch.rewards = Tensor::zeros(5, 1);
        let noise = PolicyNoise::sample(5, 2, &mut rng);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = critic_loss(&mut g, &nets, &bound, &vars, None, &noise.next, &cfg).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn zero_discount_reduces_to_reward_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SacConfig {
            gamma: 0.0,
            ..small_config(false)
        };
        let nets = SacNetworks::new(3, 2, None, &cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 6, 3, 2);
        let noise = PolicyNoise::sample(6, 2, &mut rng);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = critic_loss(&mut g, &nets, &bound, &vars, None, &noise.next, &cfg).unwrap();
        let mut expected = 0.0;
        for i in 0..6 {
            let mut x = batch.obs.row(i).to_vec();
            x.extend_from_slice(batch.actions.row(i));
            let q = nets.critics[0].forward(&Tensor::row_vector(x)).unwrap().item();
            expected += (q - batch.rewards.data()[i]).powi(2) / 6.0;
        }
        approx::assert_relative_eq!(g.value(loss).item(), expected, max_relative = 1e-12);
    }

    #[test]
    fn zero_entropy_actor_loss_is_negative_mean_q() {
        let cfg = SacConfig {
            alpha: 0.0,
            twin_critics: false,
            ..SacConfig::default()
        };
        let critic = [0.5, 1.5, -0.1];
        let nets = scalar_nets(critic, [0.0; 3], 0.4, -20.0);
        let batch = scalar_batch();
        let noise = Tensor::column_vector(vec![1.0, -1.0]);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = actor_loss(&mut g, &nets, &bound, vars.obs, None, &noise, &cfg).unwrap();
        let a = 0.4f64.tanh();
        let expected = -(0..2).map(|i| critic[0] * batch.obs.data()[i] + critic[1] * a + critic[2]).sum::<f64>() / 2.0;
        approx::assert_relative_eq!(g.value(loss).item(), expected, max_relative = 1e-8);
    }

    #[test]
    fn constant_critic_leaves_only_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small_config(true);
        let mut nets = SacNetworks::new(3, 2, None, &cfg, &mut rng).unwrap();
        for c in nets.critics.iter_mut() {
            let mut z = Mlp::zeros(c.spec().clone());
            z.tensors_mut().last_mut().unwrap().data_mut()[0] = 2.5;
            *c = z;
        }
        let batch = random_batch(&mut rng, 5, 3, 2);
        let noise = PolicyNoise::sample(5, 2, &mut rng);

        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let loss = actor_loss(&mut g, &nets, &bound, vars.obs, None, &noise.current, &cfg).unwrap();
        g.backward(loss).unwrap();
        let full = collect_grads(&g, &bound.actor);

        let mut h = Graph::new();
        let actor = bind(&mut h, &nets.actor, true);
        let obs = h.constant(batch.obs.clone());
        let (_, logp) = nets.policy(&mut h, &actor, obs, None, &noise.current).unwrap();
        let ent = h.scale(logp, cfg.alpha);
        let m = h.mean(ent);
        h.backward(m).unwrap();
        let entropy_only = collect_grads(&h, &actor);
        for (a, b) in full.iter().zip(&entropy_only) {
            for (x, y) in a.data().iter().zip(b.data()) {
                approx::assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn targets_and_frozen_copies_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_config(true);
        let head = TaskCodeHead::for_variant(Variant::RbfPearl, 2, 3, (-5.0, 5.0), &mut rng).unwrap();
        let nets = SacNetworks::new(3, 2, Some(head), &cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, 3, 2);
        let noise = PolicyNoise::sample(4, 2, &mut rng);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let z = g.param(Tensor::from_vec(4, 2, vec![0.1, -0.3, 0.5, 1.0, -2.0, 0.0, 0.7, 0.2]).unwrap());
        let c = critic_loss(&mut g, &nets, &bound, &vars, Some(z), &noise.next, &cfg).unwrap();
        let a = actor_loss(&mut g, &nets, &bound, vars.obs, Some(z), &noise.current, &cfg).unwrap();
        let total = g.add(c, a).unwrap();
        g.backward(total).unwrap();
        let frozen = bound
            .target_critics
            .iter()
            .chain(&bound.critics_frozen)
            .flatten()
            .chain(&bound.actor_frozen)
            .chain(&bound.head_frozen)
            .chain(&bound.target_head);
        for &v in frozen {
            assert!(g.grad(v).is_none());
        }
        assert!(g.grad(z).is_some_and(|t| t.data().iter().any(|&x| x != 0.0)));
        assert!(bound.head.iter().all(|&v| g.grad(v).is_some()));
    }

    #[test]
    fn detached_latent_in_actor_loss_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_config(true);
        let head = TaskCodeHead::for_variant(Variant::VanillaPearl, 2, 3, (-5.0, 5.0), &mut rng).unwrap();
        let nets = SacNetworks::new(3, 2, Some(head), &cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, 3, 2);
        let noise = PolicyNoise::sample(4, 2, &mut rng);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let z = g.param(Tensor::filled(4, 2, 0.3));
        let a = actor_loss(&mut g, &nets, &bound, vars.obs, Some(z), &noise.current, &cfg).unwrap();
        g.backward(a).unwrap();
        assert!(g.grad(z).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn encoder_loss_decomposes() {
        let mut g = Graph::new();
        let c = g.param(Tensor::scalar(1.25));
        let kl = g.param(Tensor::scalar(0.4));
        let zero = encoder_loss(&mut g, c, kl, 0.0).unwrap();
        assert_eq!(g.value(zero).item(), 1.25);
        let total = encoder_loss(&mut g, c, kl, 0.1).unwrap();
        approx::assert_abs_diff_eq!(g.value(total).item(), 1.25 + 0.1 * 0.4, epsilon = 1e-10);
    }

    #[test]
    fn missing_latent_is_a_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_config(true);
        let head = TaskCodeHead::for_variant(Variant::PearlParity, 2, 3, (-5.0, 5.0), &mut rng).unwrap();
        let nets = SacNetworks::new(3, 2, Some(head), &cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, 3, 2);
        let noise = PolicyNoise::sample(4, 2, &mut rng);
        let mut g = Graph::new();
        let bound = nets.bind(&mut g);
        let vars = batch.bind(&mut g);
        let err = critic_loss(&mut g, &nets, &bound, &vars, None, &noise.next, &cfg).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn head_shapes_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (v, out, trainable) in [
            (Variant::VanillaPearl, 3, false),
            (Variant::PearlParity, 27, true),
            (Variant::RbfPearl, 27, true),
            (Variant::RbfPearlFixed, 27, false),
        ] {
            let h = TaskCodeHead::for_variant(v, 3, 9, (-5.0, 5.0), &mut rng).unwrap();
            assert_eq!(h.output_dim(), out);
            assert_eq!(h.is_trainable(), trainable);
            assert_eq!(h.forward(&[0.1, 0.2, 0.3]).unwrap().len(), out);
            assert_eq!(v.key().parse::<Variant>().unwrap(), v);
        }
        assert!("pearl".parse::<Variant>().is_err());
    }

    #[test]
    fn deterministic_action_matches_graph_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = small_config(true);
        let nets = SacNetworks::new(3, 2, None, &cfg, &mut rng).unwrap();
        let obs = vec![0.3, -0.2, 0.9];
        let a = nets.act(&obs, &[], None).unwrap();
        let mut g = Graph::new();
        let actor = bind(&mut g, &nets.actor, false);
        let o = g.constant(Tensor::row_vector(obs.clone()));
        let (ga, _) = nets.policy(&mut g, &actor, o, None, &Tensor::zeros(1, 2)).unwrap();
        assert_eq!(a, g.value(ga).data());
        let noisy = nets.act(&obs, &[], Some(&[0.5, -0.5])).unwrap();
        assert!(noisy.iter().all(|x| x.abs() < 1.0));
        assert!(LOG_STD_MAX > 0.0);
    }

    #[test]
    fn critic_and_actor_losses_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = SacConfig {
            hidden_width: 5,
            hidden_depth: 1,
            ..small_config(true)
        };
        let head = TaskCodeHead::for_variant(Variant::RbfPearl, 2, 3, (-2.0, 2.0), &mut rng).unwrap();
        let nets = SacNetworks::new(2, 1, Some(head), &cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 3, 2, 1);
        let noise = PolicyNoise::sample(3, 1, &mut rng);
        let z = Tensor::from_vec(3, 2, vec![0.3, -0.4, 1.1, 0.2, -0.8, 0.6]).unwrap();

        let mut params: Vec<Tensor> = nets.critics[0].tensors().into_iter().cloned().collect();
        params.extend(nets.head.as_ref().unwrap().tensors().into_iter().cloned());
        params.push(z.clone());
        let n_critic = nets.critics[0].tensors().len();
        // The bootstrap target is a constant by construction but still reads
        // the latent's value, so finite differences only agree without it.
        let cfg0 = SacConfig { gamma: 0.0, ..cfg.clone() };
        let report = check_gradients(&params, 1e-6, |g, vars| {
            let local = nets.clone();
            let mut bound = local.bind(g);
            bound.critics[0] = vars[..n_critic].to_vec();
            bound.head = vars[n_critic..n_critic + 2].to_vec();
            let b = batch.bind(g);
            critic_loss(g, &local, &bound, &b, Some(vars[n_critic + 2]), &noise.next, &cfg0)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let params: Vec<Tensor> = nets.actor.tensors().into_iter().cloned().collect();
        let report = check_gradients(&params, 1e-6, |g, vars| {
            let mut bound = nets.bind(g);
            bound.actor = vars.to_vec();
            let b = batch.bind(g);
            let zc = g.constant(z.clone());
            actor_loss(g, &nets, &bound, b.obs, Some(zc), &noise.current, &cfg)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn bandit_actor_loss(nets: &SacNetworks, critics_from: &SacNetworks, obs: &Tensor, noise: &Tensor, cfg: &SacConfig) -> f64 {
        let mut hybrid = critics_from.clone();
        hybrid.actor = nets.actor.clone();
        let mut g = Graph::new();
        let bound = hybrid.bind(&mut g);
        let o = g.constant(obs.clone());
        let l = actor_loss(&mut g, &hybrid, &bound, o, None, noise, cfg).unwrap();
        g.value(l).item()
    }

    #[test]
    fn one_update_decreases_bandit_actor_loss() {
        let cfg = SacConfig {
            hidden_width: 16,
            hidden_depth: 2,
            batch_size: 32,
            ..SacConfig::default()
        };
        let mut decreases = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let mut nets = SacNetworks::new(1, 1, None, &cfg, &mut rng).unwrap();
            let mut opts = SacOptimizers::new(&nets, cfg.optimizer);
            let actions: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let batch = SacBatch {
                obs: Tensor::filled(32, 1, 1.0),
                rewards: Tensor::column_vector(actions.iter().map(|a| -(a - 0.5) * (a - 0.5)).collect()),
                actions: Tensor::column_vector(actions),
                next_obs: Tensor::filled(32, 1, 1.0),
            };
            let eval_noise = PolicyNoise::sample(512, 1, &mut rng).current;
            let eval_obs = Tensor::filled(512, 1, 1.0);
            let before_nets = nets.clone();
            let before = bandit_actor_loss(&nets, &before_nets, &eval_obs, &eval_noise, &cfg);
            sac_update(&mut nets, &mut opts, &batch, &cfg, &mut rng).unwrap();
            let after = bandit_actor_loss(&nets, &before_nets, &eval_obs, &eval_noise, &cfg);
            if after < before {
                decreases += 1;
            }
        }
        // One-sided sign test at p < 0.01 over 100 trials needs at least 63 successes.
        assert!(decreases >= 63, "decreased in {decreases}/100 trials");
    }

    #[test]
    fn non_finite_gradient_leaves_networks_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = small_config(true);
        let mut nets = SacNetworks::new(3, 2, None, &cfg, &mut rng).unwrap();
        let mut opts = SacOptimizers::new(&nets, cfg.optimizer);
        let mut batch = random_batch(&mut rng, 4, 3, 2);
        batch.rewards.data_mut()[0] = f64::NAN;
        let before = nets.clone();
        let err = sac_update(&mut nets, &mut opts, &batch, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }), "{err}");
        assert_eq!(nets, before);
    }

    proptest! {
        #[test]
        fn critic_loss_is_non_negative(seed in 0u64..10_000, gamma in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = SacConfig { gamma, ..small_config(seed % 2 == 0) };
            let nets = SacNetworks::new(2, 1, None, &cfg, &mut rng).unwrap();
            let batch = random_batch(&mut rng, 3, 2, 1);
            let noise = PolicyNoise::sample(3, 1, &mut rng);
            let mut g = Graph::new();
            let bound = nets.bind(&mut g);
            let vars = batch.bind(&mut g);
            let loss = critic_loss(&mut g, &nets, &bound, &vars, None, &noise.next, &cfg).unwrap();
            prop_assert!(g.value(loss).item() >= 0.0);
        }
    }
}
