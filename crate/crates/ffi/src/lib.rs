//! C ABI over `rbf_pearl`.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `rp_*_new`/`rp_*_load` function and released by the matching `rp_*_free`.
//! Fallible calls return an `RpStatus`; the message of the last failure on
//! the calling thread is available from [`rp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbf_pearl::config::RunConfig;
use rbf_pearl::encoder::TaskEncoder;
use rbf_pearl::env::{EnvConfig, EnvKind, Environment};
use rbf_pearl::pearl::trainer::Trainer;
use rbf_pearl::rbf::RbfParams;
use rbf_pearl::tasks::{evaluate_task_reward, TaskSpec};
use rbf_pearl::Error;

/// Result codes of fallible calls.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Usage = 3,
    NonFinite = 4,
    Config = 5,
    NotReady = 6,
    Environment = 7,
    Checkpoint = 8,
    Io = 9,
    Panic = 10,
}

/// Environment selectors for [`rp_env_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpEnvKind {
    GazeLinear = 0,
    GazeNonlinear = 1,
    Socialnav = 2,
    Racer = 3,
    Constant = 4,
}

impl From<RpEnvKind> for EnvKind {
    fn from(k: RpEnvKind) -> Self {
        match k {
            RpEnvKind::GazeLinear => EnvKind::GazeLinear,
            RpEnvKind::GazeNonlinear => EnvKind::GazeNonlinear,
            RpEnvKind::Socialnav => EnvKind::Socialnav,
            RpEnvKind::Racer => EnvKind::Racer,
            RpEnvKind::Constant => EnvKind::Constant,
        }
    }
}

pub struct RpRbf(RbfParams);

pub struct RpEncoder(TaskEncoder);

pub struct RpEnv {
    kind: EnvKind,
    env: Box<dyn Environment>,
    task: Option<TaskSpec>,
}

pub struct RpTrainer(Trainer);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RpStatus {
    match e {
        Error::Shape { .. } => RpStatus::Shape,
        Error::Usage(_) => RpStatus::Usage,
        Error::NonFiniteGradient { .. } | Error::NonFinite(_) => RpStatus::NonFinite,
        Error::Config(_) => RpStatus::Config,
        Error::NotReady(_) => RpStatus::NotReady,
        Error::Environment(_) => RpStatus::Environment,
        Error::Checkpoint(_) => RpStatus::Checkpoint,
        Error::Io(_) => RpStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            RpStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::Usage("path is not valid UTF-8".into())))?;
    Ok(Path::new(s))
}

fn copy_out(src: &[f64], dst: &mut [f64], what: &str) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(Fail::Lib(Error::Shape {
            context: what.into(),
            expected: src.len().to_string(),
            actual: dst.len().to_string(),
        }));
    }
    dst.copy_from_slice(src);
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `len` bytes, into `buf`. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Layer with centers evenly spread over `[lo, hi]`; `trainable` selects the
/// learnable-width parameterization (same initial output).
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rp_rbf_new(d: usize, k: usize, lo: f64, hi: f64, trainable: bool, out: *mut *mut RpRbf) -> RpStatus {
    guard(|| {
        let p = if trainable { RbfParams::trainable(d, k, (lo, hi))? } else { RbfParams::fixed(d, k, (lo, hi))? };
        put(out, RpRbf(p))
    })
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_rbf_output_dim(h: *const RpRbf) -> usize {
    h.as_ref().map_or(0, |r| r.0.output_dim())
}

/// Evaluates the layer on `z` (`z_len = d`) into `out` (`out_len = d * k`).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rp_rbf_forward(h: *const RpRbf, z: *const f64, z_len: usize, out: *mut f64, out_len: usize) -> RpStatus {
    guard(|| {
        let r = handle(h, "rbf")?;
        let y = r.0.forward(slice(z, z_len, "z")?)?;
        copy_out(&y, slice_mut(out, out_len, "out")?, "rbf output")
    })
}

/// # Safety
/// `h` must be null or a handle from [`rp_rbf_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_rbf_free(h: *mut RpRbf) {
    free(h)
}

/// Encoder with randomly initialized weights drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rp_encoder_new(
    obs_dim: usize,
    act_dim: usize,
    latent_dim: usize,
    hidden: usize,
    depth: usize,
    seed: u64,
    out: *mut *mut RpEncoder,
) -> RpStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        put(out, RpEncoder(TaskEncoder::new(obs_dim, act_dim, latent_dim, hidden, depth, &mut rng)?))
    })
}

/// Input width of one context row: `2 * obs_dim + act_dim + 1`.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_encoder_input_dim(h: *const RpEncoder) -> usize {
    h.as_ref().map_or(0, |e| e.0.input_dim())
}

/// Posterior over the latent from `rows` context rows laid out row-major
/// as `[s | a | r | s']`. `mean` and `var` receive `latent_dim` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rp_encoder_posterior(
    h: *const RpEncoder,
    context: *const f64,
    rows: usize,
    mean: *mut f64,
    var: *mut f64,
    latent_dim: usize,
) -> RpStatus {
    guard(|| {
        let e = &handle(h, "encoder")?.0;
        if rows == 0 {
            return Err(Fail::Lib(Error::Usage("posterior of an empty context".into())));
        }
        let data = slice(context, rows * e.input_dim(), "context")?.to_vec();
        let inputs = rbf_pearl::autodiff::Tensor::from_vec(rows, e.input_dim(), data)?;
        let post = e.posterior_from_inputs(&inputs)?;
        copy_out(&post.mean, slice_mut(mean, latent_dim, "mean")?, "posterior mean")?;
        copy_out(&post.var, slice_mut(var, latent_dim, "var")?, "posterior variance")
    })
}

/// # Safety
/// `h` must be null or a handle from [`rp_encoder_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_encoder_free(h: *mut RpEncoder) {
    free(h)
}

/// Environment with default settings.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rp_env_new(kind: RpEnvKind, out: *mut *mut RpEnv) -> RpStatus {
    guard(|| {
        let kind = EnvKind::from(kind);
        let env = EnvConfig::default().build(kind)?;
        put(out, RpEnv { kind, env, task: None })
    })
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_env_obs_dim(h: *const RpEnv) -> usize {
    h.as_ref().map_or(0, |e| e.env.obs_dim())
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_env_act_dim(h: *const RpEnv) -> usize {
    h.as_ref().map_or(0, |e| e.env.act_dim())
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_env_n_components(h: *const RpEnv) -> usize {
    h.as_ref().map_or(0, |e| e.env.n_components())
}

/// Installs the task sampled from `seed` for this environment family.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_env_set_task(h: *mut RpEnv, seed: u64) -> RpStatus {
    guard(|| {
        let e = handle_mut(h, "env")?;
        let task = TaskSpec::sample(e.kind, seed)?;
        e.env.set_task(&task)?;
        e.task = Some(task);
        Ok(())
    })
}

/// # Safety
/// `obs` must reference `obs_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn rp_env_reset(h: *mut RpEnv, seed: u64, obs: *mut f64, obs_len: usize) -> RpStatus {
    guard(|| {
        let e = handle_mut(h, "env")?;
        let o = e.env.reset(seed);
        copy_out(&o, slice_mut(obs, obs_len, "obs")?, "observation")
    })
}

/// Advances one step. `reward` (may be null) receives the task reward,
/// which needs a task installed with [`rp_env_set_task`].
///
/// # Safety
/// Array pointers must reference the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rp_env_step(
    h: *mut RpEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    components: *mut f64,
    components_len: usize,
    reward: *mut f64,
) -> RpStatus {
    guard(|| {
        let e = handle_mut(h, "env")?;
        let step = e.env.step(slice(action, action_len, "action")?)?;
        copy_out(&step.obs, slice_mut(obs, obs_len, "obs")?, "observation")?;
        copy_out(&step.components, slice_mut(components, components_len, "components")?, "reward components")?;
        if let Some(r) = reward.as_mut() {
            let task = e
                .task
                .as_ref()
                .ok_or_else(|| Fail::Lib(Error::NotReady("no task installed".into())))?;
            *r = evaluate_task_reward(task, &step.components)?;
        }
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`rp_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_env_free(h: *mut RpEnv) {
    free(h)
}

/// Fresh trainer from a TOML run configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_new(config_path: *const c_char, out: *mut *mut RpTrainer) -> RpStatus {
    guard(|| {
        let cfg = RunConfig::load(path(config_path)?)?;
        put(out, RpTrainer(Trainer::new(cfg.setup())?))
    })
}

/// # Safety
/// `checkpoint` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_load(checkpoint: *const c_char, out: *mut *mut RpTrainer) -> RpStatus {
    guard(|| put(out, RpTrainer(Trainer::load(path(checkpoint)?)?)))
}

/// # Safety
/// `h` must be a live handle; `checkpoint` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_save(h: *const RpTrainer, checkpoint: *const c_char) -> RpStatus {
    guard(|| Ok(handle(h, "trainer")?.0.save(path(checkpoint)?)?))
}

/// One collection/update iteration.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_step(h: *mut RpTrainer) -> RpStatus {
    guard(|| Ok(handle_mut(h, "trainer")?.0.run_iteration()?))
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_env_steps(h: *const RpTrainer) -> u64 {
    h.as_ref().map_or(0, |t| t.0.env_steps)
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_n_test_tasks(h: *const RpTrainer) -> usize {
    h.as_ref().map_or(0, |t| t.0.tasks.test.len())
}

/// Meta-test on the first `n` test tasks; adapted returns go to `returns`.
///
/// # Safety
/// `returns` must reference `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_evaluate(h: *const RpTrainer, seed: u64, returns: *mut f64, n: usize) -> RpStatus {
    guard(|| {
        let t = &handle(h, "trainer")?.0;
        if n > t.tasks.test.len() {
            return Err(Fail::Lib(Error::shape("test tasks", format!("<= {}", t.tasks.test.len()), n)));
        }
        let res = t.evaluate(&t.tasks.test[..n], seed)?;
        let r: Vec<f64> = res.iter().map(|r| r.adapted_return).collect();
        copy_out(&r, slice_mut(returns, n, "returns")?, "returns")
    })
}

/// # Safety
/// `h` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_trainer_free(h: *mut RpTrainer) {
    free(h)
}
