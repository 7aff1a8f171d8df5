//! Wake-sleep training.
//!
//! One training step rolls each batch item forward from its initial condition
//! (wake), compares the rollout against the target trajectory, evolves
//! replay-buffer states freely (sleep), and descends on a weighted sum of the
//! backpropagated wake MSE and the contrastive energy signal
//! `∇_θH(z_wake) − ∇_θH(z_hallucination)`.

use std::collections::VecDeque;

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ChluError, Result};
use crate::hamiltonian::{ChluModel, ParamGradient, PhaseState};
use crate::integrator::{integrate, verlet_step_traced, IntegratorConfig, StepTrace, Trajectory};
use crate::potential::Potential;
use crate::rng::{self, normal_vec, StreamRng};
use crate::scalar::{axpy, Real};

/// Bounded FIFO store of hallucinated states for persistent sleep chains.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: VecDeque<PhaseState<T>>,
    rng: StreamRng,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self { capacity, entries: VecDeque::with_capacity(capacity), rng: rng::stream(seed, "replay") }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &PhaseState<T>> {
        self.entries.iter()
    }

    /// Appends `z`, evicting the oldest entry when full. Non-finite states are
    /// dropped. Returns whether the state was stored.
    pub fn add(&mut self, z: PhaseState<T>) -> bool {
        if !z.is_finite() {
            warn!("replay buffer rejected a non-finite state");
            return false;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(z);
        true
    }

    /// Draws `n` states: fresh `N(0, I)` noise with probability `reinit_prob`
    /// (always, if the buffer is empty), otherwise a uniform buffer entry.
    pub fn sample(&mut self, n: usize, dim: usize, reinit_prob: f64) -> Vec<PhaseState<T>> {
        (0..n)
            .map(|_| {
                let fresh = self.entries.is_empty() || self.rng.gen::<f64>() < reinit_prob;
                if fresh {
                    PhaseState { q: normal_vec(&mut self.rng, dim), p: normal_vec(&mut self.rng, dim) }
                } else {
                    let i = self.rng.gen_range(0..self.entries.len());
                    self.entries[i].clone()
                }
            })
            .collect()
    }
}

pub fn replay_sample<T: Real>(buf: &mut ReplayBuffer<T>, n: usize, dim: usize, reinit_prob: f64) -> Vec<PhaseState<T>> {
    buf.sample(n, dim, reinit_prob)
}

pub fn replay_add<T: Real>(buf: &mut ReplayBuffer<T>, z: PhaseState<T>) {
    buf.add(z);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate.
    pub eta: f64,
    /// Weight of the Lyapunov penalty inside the wake loss.
    pub lambda: f64,
    pub beta_mse: f64,
    pub beta_cd: f64,
    /// Integrator step used for wake and sleep rollouts.
    pub epsilon: f64,
    pub wake_steps: usize,
    pub sleep_steps: usize,
    pub buffer_capacity: usize,
    pub buffer_reinit_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient norm ceiling applied before each descent step.
    pub clip_norm: f64,
    /// Initial separation of the twin rollout behind the Lyapunov estimate.
    pub lyapunov_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            lambda: 0.0,
            beta_mse: 1.0,
            beta_cd: 1.0,
            epsilon: 0.05,
            wake_steps: 16,
            sleep_steps: 16,
            buffer_capacity: 1024,
            buffer_reinit_prob: 0.05,
            epochs: 1,
            batch_size: 16,
            seed: 0,
            clip_norm: 10.0,
            lyapunov_delta: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ChluError::InvalidConfig(msg.to_string()));
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.lambda >= 0.0 && self.beta_mse >= 0.0 && self.beta_cd >= 0.0) {
            return bad("lambda, beta_mse and beta_cd must be nonnegative");
        }
        if self.beta_mse == 0.0 && self.beta_cd == 0.0 {
            return bad("at least one of beta_mse, beta_cd must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.wake_steps == 0 || self.sleep_steps == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("wake_steps, sleep_steps, batch_size and buffer_capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.buffer_reinit_prob) {
            return bad("buffer_reinit_prob must lie in [0, 1]");
        }
        if !(self.clip_norm > 0.0 && self.lyapunov_delta > 0.0) {
            return bad("clip_norm and lyapunov_delta must be positive");
        }
        Ok(())
    }

    /// The algorithm-box reading: contrastive update only.
    pub fn alg1_literal(mut self) -> Self {
        self.beta_mse = 0.0;
        if self.beta_cd == 0.0 {
            self.beta_cd = 1.0;
        }
        self
    }
}

/// Diagnostics of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub wake_mse: f64,
    pub lyapunov: f64,
    pub h_wake: f64,
    pub h_sleep: f64,
    /// `mean H(z_wake) − mean H(z_hallucination)`
    pub contrastive_gap: f64,
    pub grad_norm_mse: f64,
    pub grad_norm_cd: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    pub diverged: bool,
}

/// Mean squared error over every `(q, p)` component of every state pair.
/// Callers pass exactly the compared steps (rollouts typically drop the
/// shared initial state), and `lambda · lyap` is added on top.
pub fn wake_loss<T: Real>(traj: &Trajectory<T>, target: &Trajectory<T>, lyap: T, lambda: T) -> Result<T> {
    Ok(mse(&traj.states, &target.states)? + lambda * lyap)
}

pub(crate) fn mse<T: Real>(a: &[PhaseState<T>], b: &[PhaseState<T>]) -> Result<T> {
    if a.len() != b.len() {
        return Err(ChluError::LengthMismatch(a.len(), b.len()));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() {
            return Err(ChluError::DimensionMismatch { expected: x.dim(), found: y.dim() });
        }
        for (u, v) in x.q.iter().zip(&y.q).chain(x.p.iter().zip(&y.p)) {
            let d = *u - *v;
            sum += d * d;
        }
        count += 2 * x.dim();
    }
    if count == 0 {
        return Ok(T::zero());
    }
    Ok(sum / T::lit(count as f64))
}

fn check_finite_grad<T: Real>(g: &ParamGradient<T>) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(ChluError::GradientDiverged)
    }
}

/// `∇_θH(z_wake) − ∇_θH(z_sleep)`; descending along it lowers the energy of
/// the wake state and raises that of the sleep state.
pub fn contrastive_grad<T: Real, P: Potential<T>>(
    m: &ChluModel<T, P>,
    z_wake: &PhaseState<T>,
    z_sleep: &PhaseState<T>,
) -> Result<ParamGradient<T>> {
    let mut g = m.energy_param_grad(z_wake)?;
    g.add_scaled(-T::one(), &m.energy_param_grad(z_sleep)?);
    Ok(g)
}

/// `θ ← θ − η·g`
pub fn sgd_step<T: Real, P: Potential<T>>(m: &mut ChluModel<T, P>, g: &ParamGradient<T>, eta: T) -> Result<()> {
    check_finite_grad(g)?;
    if g.potential.len() != m.potential.num_params() || g.log_mass.len() != m.dim() {
        return Err(ChluError::ShapeInconsistency("gradient does not match model parameters".into()));
    }
    m.apply_update(-eta, g);
    Ok(())
}

/// Forward rollout that keeps the per-step intermediates.
struct Tape<T> {
    states: Vec<PhaseState<T>>,
    traces: Vec<StepTrace<T>>,
}

fn forward_tape<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    gamma: T,
    steps: usize,
) -> Result<Tape<T>> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut traces = Vec::with_capacity(steps);
    states.push(z0.clone());
    for k in 0..steps {
        let (next, trace) = verlet_step_traced(&states[k], m, epsilon, gamma).map_err(|e| match e {
            ChluError::Diverged { energy, .. } => ChluError::Diverged { step: k + 1, energy },
            other => other,
        })?;
        states.push(next);
        traces.push(trace);
    }
    Ok(Tape { states, traces })
}

/// Reverse sweep through a recorded rollout. `seed(k)` returns the loss
/// adjoint `∂L/∂z_k` injected at state `k` (flat `(q, p)` layout); parameter
/// adjoints accumulate into `grad`.
fn backward_tape<T: Real, P: Potential<T>>(
    m: &ChluModel<T, P>,
    tape: &Tape<T>,
    epsilon: T,
    gamma: T,
    seed: impl Fn(usize) -> Option<Vec<T>>,
    grad: &mut ParamGradient<T>,
) {
    let d = m.dim();
    let steps = tape.traces.len();
    let mut aq = vec![T::zero(); d];
    let mut ap = vec![T::zero(); d];
    let inject = |k: usize, aq: &mut Vec<T>, ap: &mut Vec<T>| {
        if let Some(s) = seed(k) {
            axpy(T::one(), &s[..d], aq);
            axpy(T::one(), &s[d..], ap);
        }
    };
    inject(steps, &mut aq, &mut ap);
    let half = T::lit(0.5) * epsilon;
    let two_alpha = m.alpha + m.alpha;
    for k in (0..steps).rev() {
        let tr = &tape.traces[k];
        // p' = (1 − γ) p*
        let keep = T::one() - gamma;
        let ap_star: Vec<T> = ap.iter().map(|&x| keep * x).collect();
        // p* = p½ − (ε/2) g(q')
        let mut aq_next = aq;
        let hv = m.potential.hessian_vector_product(&tr.q_next, &ap_star);
        for ((a, &h), &s) in aq_next.iter_mut().zip(&hv).zip(&ap_star) {
            *a -= half * (h + two_alpha * s);
        }
        axpy(-half, &m.potential.mixed_grad_params(&tr.q_next, &ap_star), &mut grad.potential);
        // q' = q + ε v(p½)
        let jv = m.governor.velocity_jacobian_apply(&tr.p_half, &tr.v_half, &aq_next);
        let mut ap_half = ap_star;
        axpy(epsilon, &jv, &mut ap_half);
        let lm = m.governor.velocity_log_mass_vjp(&tr.p_half, &tr.v_half, &aq_next);
        axpy(epsilon, &lm, &mut grad.log_mass);
        // p½ = p − (ε/2) g(q)
        let mut aq_prev = aq_next;
        let hv = m.potential.hessian_vector_product(&tr.q, &ap_half);
        for ((a, &h), &s) in aq_prev.iter_mut().zip(&hv).zip(&ap_half) {
            *a -= half * (h + two_alpha * s);
        }
        axpy(-half, &m.potential.mixed_grad_params(&tr.q, &ap_half), &mut grad.potential);
        aq = aq_prev;
        ap = ap_half;
        inject(k, &mut aq, &mut ap);
    }
}

/// Wake MSE and its exact reverse-mode gradient.
#[derive(Debug, Clone)]
pub struct WakeGradient<T> {
    pub mse: T,
    pub grad: ParamGradient<T>,
    pub final_state: PhaseState<T>,
}

fn check_target<T: Real>(z0: &PhaseState<T>, target: &Trajectory<T>, steps: usize) -> Result<()> {
    if target.len() != steps + 1 {
        return Err(ChluError::LengthMismatch(target.len(), steps + 1));
    }
    if target.dim() != z0.dim() {
        return Err(ChluError::DimensionMismatch { expected: z0.dim(), found: target.dim() });
    }
    Ok(())
}

/// Rolls `z0` forward `cfg.steps` steps and backpropagates the MSE against
/// `target.states[1..=K]` (`target.states[0]` is not compared) through every
/// Verlet step.
pub fn bptt_loss_and_grad<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    target: &Trajectory<T>,
    m: &ChluModel<T, P>,
    cfg: &IntegratorConfig<T>,
) -> Result<WakeGradient<T>> {
    cfg.validate()?;
    check_target(z0, target, cfg.steps)?;
    let tape = forward_tape(z0, m, cfg.epsilon, cfg.gamma, cfg.steps)?;
    let mse_value = mse(&tape.states[1..], &target.states[1..])?;
    let n = T::lit((cfg.steps * 2 * z0.dim()).max(1) as f64);
    let scale = T::lit(2.0) / n;
    let mut grad = m.zero_grad();
    backward_tape(
        m,
        &tape,
        cfg.epsilon,
        cfg.gamma,
        |k| {
            if k == 0 {
                return None;
            }
            let z = tape.states[k].flat();
            let y = target.states[k].flat();
            Some(z.iter().zip(&y).map(|(&a, &b)| scale * (a - b)).collect())
        },
        &mut grad,
    );
    let final_state = tape.states.last().unwrap().clone();
    Ok(WakeGradient { mse: mse_value, grad, final_state })
}

/// Gradient of the wake MSE alone. The Lyapunov penalty is differentiated
/// separately by [`lyapunov_loss_and_grad`], so `lambda` is not used here.
pub fn bptt_grad<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    target: &Trajectory<T>,
    m: &ChluModel<T, P>,
    cfg: &IntegratorConfig<T>,
    _lambda: T,
) -> Result<ParamGradient<T>> {
    bptt_loss_and_grad(z0, target, m, cfg).map(|w| w.grad)
}

fn unit_direction<T: Real>(dim: usize, seed: u64) -> Vec<T> {
    let mut r = rng::stream(seed, "lyapunov-direction");
    loop {
        let u: Vec<f64> = normal_vec(&mut r, dim);
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return u.into_iter().map(|x| T::lit(x / n)).collect();
        }
    }
}

fn perturbed<T: Real>(z0: &PhaseState<T>, delta: T, seed: u64) -> (PhaseState<T>, T) {
    let mut flat = z0.flat();
    let u = unit_direction::<T>(flat.len(), seed);
    axpy(delta, &u, &mut flat);
    let z1 = PhaseState::from_flat(&flat);
    // initial separation as represented after rounding
    let d0 = z1
        .flat()
        .iter()
        .zip(z0.flat())
        .map(|(&a, b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt();
    (z1, d0)
}

/// Finite-time largest Lyapunov exponent
/// `λ̂ = ln(‖Δz_K‖ / ‖Δz_0‖) / (K·ε)` from a twin rollout started `delta`
/// away along a seeded random unit direction.
pub fn lyapunov_estimate<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    cfg: &IntegratorConfig<T>,
    delta: T,
    seed: u64,
) -> Result<T> {
    cfg.validate()?;
    if !(delta > T::zero()) {
        return Err(ChluError::InvalidConfig("lyapunov delta must be positive".into()));
    }
    if cfg.steps == 0 {
        return Ok(T::zero());
    }
    let (z1, d0) = perturbed(z0, delta, seed);
    let a = integrate(z0, m, cfg.epsilon, cfg.gamma, cfg.steps)?;
    let b = integrate(&z1, m, cfg.epsilon, cfg.gamma, cfg.steps)?;
    let dk = separation(&a, &b);
    Ok((dk / d0).ln() / (T::lit(cfg.steps as f64) * cfg.epsilon))
}

fn separation<T: Real>(a: &PhaseState<T>, b: &PhaseState<T>) -> T {
    a.flat().iter().zip(b.flat()).map(|(&x, y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Penalty `max(λ̂, 0)` and its parameter gradient, backpropagated through
/// both rollouts.
pub fn lyapunov_loss_and_grad<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    cfg: &IntegratorConfig<T>,
    delta: T,
    seed: u64,
) -> Result<(T, ParamGradient<T>)> {
    let mut grad = m.zero_grad();
    if cfg.steps == 0 {
        return Ok((T::zero(), grad));
    }
    let (z1, d0) = perturbed(z0, delta, seed);
    let ta = forward_tape(z0, m, cfg.epsilon, cfg.gamma, cfg.steps)?;
    let tb = forward_tape(&z1, m, cfg.epsilon, cfg.gamma, cfg.steps)?;
    let a = ta.states.last().unwrap();
    let b = tb.states.last().unwrap();
    let dk = separation(a, b);
    let horizon = T::lit(cfg.steps as f64) * cfg.epsilon;
    let lambda_hat = (dk / d0).ln() / horizon;
    if lambda_hat <= T::zero() || dk.is_zero() {
        return Ok((T::zero(), grad));
    }
    let diff: Vec<T> = a.flat().iter().zip(b.flat()).map(|(&x, y)| x - y).collect();
    let coef = T::one() / (dk * dk * horizon);
    let seed_a: Vec<T> = diff.iter().map(|&x| coef * x).collect();
    let seed_b: Vec<T> = seed_a.iter().map(|&x| -x).collect();
    let k_final = cfg.steps;
    backward_tape(m, &ta, cfg.epsilon, cfg.gamma, |k| (k == k_final).then(|| seed_a.clone()), &mut grad);
    backward_tape(m, &tb, cfg.epsilon, cfg.gamma, |k| (k == k_final).then(|| seed_b.clone()), &mut grad);
    Ok((lambda_hat, grad))
}

/// One item of a training batch: initial condition and the trajectory it
/// should follow (`target.states[0]` is the clean reference for `z0`).
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub z0: PhaseState<T>,
    pub target: Trajectory<T>,
}

struct WakeResult<T> {
    mse: T,
    lyap: T,
    grad_mse: ParamGradient<T>,
    grad_lyap: Option<ParamGradient<T>>,
    h_wake: T,
    grad_h_wake: ParamGradient<T>,
}

fn wake_item<T: Real, P: Potential<T>>(
    item: &TrainItem<T>,
    m: &ChluModel<T, P>,
    cfg: &TrainConfig,
    lyap_seed: u64,
) -> Result<WakeResult<T>> {
    let icfg = IntegratorConfig::new(T::lit(cfg.epsilon), T::zero(), cfg.wake_steps);
    let wake = bptt_loss_and_grad(&item.z0, &item.target, m, &icfg)?;
    let (lyap, grad_lyap) = if cfg.lambda > 0.0 {
        let (l, g) = lyapunov_loss_and_grad(&item.z0, m, &icfg, T::lit(cfg.lyapunov_delta), lyap_seed)?;
        (l, Some(g))
    } else {
        (T::zero(), None)
    };
    let h_wake = m.total_energy(&wake.final_state)?.total;
    let grad_h_wake = m.energy_param_grad(&wake.final_state)?;
    Ok(WakeResult { mse: wake.mse, lyap, grad_mse: wake.grad, grad_lyap, h_wake, grad_h_wake })
}

/// One wake-sleep update over `batch`. Divergence anywhere in the batch
/// leaves the model and buffer untouched and is reported through
/// `TrainMetrics::diverged`.
pub fn train_step<T: Real, P: Potential<T>>(
    batch: &[TrainItem<T>],
    m: &mut ChluModel<T, P>,
    buf: &mut ReplayBuffer<T>,
    cfg: &TrainConfig,
    step: usize,
) -> Result<TrainMetrics> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(ChluError::EmptyDataset);
    }
    let d = m.dim();
    for item in batch {
        check_target(&item.z0, &item.target, cfg.wake_steps)?;
        if item.z0.dim() != d {
            return Err(ChluError::DimensionMismatch { expected: d, found: item.z0.dim() });
        }
    }
    let mut metrics = TrainMetrics { step, ..Default::default() };
    let lyap_base = cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let model: &ChluModel<T, P> = m;

    let wake: Vec<Result<WakeResult<T>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| wake_item(item, model, cfg, lyap_base.wrapping_add(i as u64)))
        .collect();

    let sleep_init = buf.sample(batch.len(), d, cfg.buffer_reinit_prob);
    let eps = T::lit(cfg.epsilon);
    let sleep: Vec<Result<PhaseState<T>>> = sleep_init
        .par_iter()
        .map(|z| integrate(z, model, eps, T::zero(), cfg.sleep_steps))
        .collect();

    let mut wake_ok = Vec::with_capacity(batch.len());
    for w in wake {
        match w {
            Ok(w) => wake_ok.push(w),
            Err(e) if e.is_divergence() => {
                warn!("step {step}: wake rollout diverged: {e}");
                metrics.diverged = true;
                return Ok(metrics);
            }
            Err(e) => return Err(e),
        }
    }
    let mut hallucinations = Vec::with_capacity(batch.len());
    for s in sleep {
        match s {
            Ok(z) => hallucinations.push(z),
            Err(e) if e.is_divergence() => {
                warn!("step {step}: sleep rollout diverged: {e}");
                metrics.diverged = true;
                return Ok(metrics);
            }
            Err(e) => return Err(e),
        }
    }

    let inv_n = T::one() / T::lit(batch.len() as f64);
    let mut g_mse = m.zero_grad();
    let mut g_cd = m.zero_grad();
    let mut mse_sum = T::zero();
    let mut lyap_sum = T::zero();
    let mut h_wake_sum = T::zero();
    let mut h_sleep_sum = T::zero();
    for (w, z_sleep) in wake_ok.iter().zip(&hallucinations) {
        mse_sum += w.mse;
        lyap_sum += w.lyap;
        h_wake_sum += w.h_wake;
        g_mse.add_scaled(inv_n, &w.grad_mse);
        if let Some(gl) = &w.grad_lyap {
            g_mse.add_scaled(inv_n * T::lit(cfg.lambda), gl);
        }
        h_sleep_sum += m.total_energy(z_sleep)?.total;
        g_cd.add_scaled(inv_n, &w.grad_h_wake);
        g_cd.add_scaled(-inv_n, &m.energy_param_grad(z_sleep)?);
    }
    check_finite_grad(&g_mse)?;
    check_finite_grad(&g_cd)?;

    let mut total = m.zero_grad();
    total.add_scaled(T::lit(cfg.beta_mse), &g_mse);
    total.add_scaled(T::lit(cfg.beta_cd), &g_cd);
    let norm = total.norm();
    metrics.grad_norm = norm.as_f64();
    if norm > T::lit(cfg.clip_norm) {
        total.scale(T::lit(cfg.clip_norm) / norm);
        metrics.clipped = true;
        debug!("step {step}: clipped gradient norm {norm} to {}", cfg.clip_norm);
    }
    sgd_step(m, &total, T::lit(cfg.eta))?;

    for z in hallucinations {
        buf.add(z);
    }

    metrics.wake_mse = (mse_sum * inv_n).as_f64();
    metrics.lyapunov = (lyap_sum * inv_n).as_f64();
    metrics.h_wake = (h_wake_sum * inv_n).as_f64();
    metrics.h_sleep = (h_sleep_sum * inv_n).as_f64();
    metrics.contrastive_gap = metrics.h_wake - metrics.h_sleep;
    metrics.grad_norm_mse = g_mse.norm().as_f64();
    metrics.grad_norm_cd = g_cd.norm().as_f64();
    Ok(metrics)
}

/// Mean wake MSE of `items` under the current model, without updating it.
pub fn evaluate_wake_mse<T: Real, P: Potential<T>>(
    items: &[TrainItem<T>],
    m: &ChluModel<T, P>,
    cfg: &TrainConfig,
) -> Result<T> {
    let eps = T::lit(cfg.epsilon);
    let losses: Vec<Result<T>> = items
        .par_iter()
        .map(|item| {
            let k = item.target.len() - 1;
            let end = integrate_states(&item.z0, m, eps, k)?;
            mse(&end[1..], &item.target.states[1..])
        })
        .collect();
    let mut sum = T::zero();
    for l in losses {
        sum += l?;
    }
    Ok(sum / T::lit(items.len().max(1) as f64))
}

fn integrate_states<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    eps: T,
    steps: usize,
) -> Result<Vec<PhaseState<T>>> {
    forward_tape(z0, m, eps, T::zero(), steps).map(|t| t.states)
}
