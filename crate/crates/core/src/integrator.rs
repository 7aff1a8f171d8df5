//! Time stepping: dissipative velocity Verlet, Langevin dynamics and the
//! annealing schedules that drive friction and temperature.
//!
//! Friction enters the two schemes differently. [`verlet_step`] contracts the
//! momentum once per step, `p ← (1−γ)p`. [`langevin_step`] treats `γ` as a
//! continuous rate and applies `−γ·p·ε` alongside the thermal kick.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChluError, Result};
use crate::hamiltonian::{ChluModel, Energy, PhaseState};
use crate::potential::Potential;
use crate::rng::normal_vec;
use crate::scalar::{axpy, Real};

/// States with any component beyond this magnitude are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig<T> {
    pub epsilon: T,
    pub gamma: T,
    pub steps: usize,
    /// Keep every n-th state in the returned trajectory (the final state is
    /// always kept).
    pub record_every: usize,
}

impl<T: Real> IntegratorConfig<T> {
    pub fn new(epsilon: T, gamma: T, steps: usize) -> Self {
        Self { epsilon, gamma, steps, record_every: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(ChluError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return Err(ChluError::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.record_every == 0 {
            return Err(ChluError::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule<T> {
    pub kind: ScheduleKind,
    pub start_value: T,
    pub end_value: T,
    pub total_steps: usize,
}

impl<T: Real> AnnealSchedule<T> {
    pub fn constant(value: T) -> Self {
        Self { kind: ScheduleKind::Constant, start_value: value, end_value: value, total_steps: 1 }
    }

    pub fn linear(start: T, end: T, total_steps: usize) -> Self {
        Self { kind: ScheduleKind::Linear, start_value: start, end_value: end, total_steps }
    }

    pub fn geometric(start: T, end: T, total_steps: usize) -> Result<Self> {
        let s = Self { kind: ScheduleKind::Geometric, start_value: start, end_value: end, total_steps };
        s.validate()?;
        Ok(s)
    }

    /// Parses `kind:start:end` (or `constant:value`) with the given horizon.
    pub fn parse(spec: &str, total_steps: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| -> Result<T> {
            s.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| ChluError::InvalidConfig(format!("bad schedule value {s:?} in {spec:?}")))
        };
        let s = match parts.as_slice() {
            ["constant", v] => Self::constant(num(v)?),
            ["linear", a, b] => Self::linear(num(a)?, num(b)?, total_steps),
            ["geometric", a, b] => Self::geometric(num(a)?, num(b)?, total_steps)?,
            _ => {
                return Err(ChluError::InvalidConfig(format!(
                    "schedule {spec:?} is not constant:V, linear:A:B or geometric:A:B"
                )))
            }
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(ChluError::InvalidConfig("schedule total_steps must be positive".into()));
        }
        if !self.start_value.is_finite() || !self.end_value.is_finite() {
            return Err(ChluError::InvalidConfig("schedule endpoints must be finite".into()));
        }
        if self.kind == ScheduleKind::Geometric && !(self.start_value > T::zero() && self.end_value > T::zero()) {
            return Err(ChluError::InvalidConfig(format!(
                "geometric schedule needs positive endpoints, got {} and {}",
                self.start_value, self.end_value
            )));
        }
        Ok(())
    }

    pub fn value_at(&self, k: usize) -> Result<T> {
        self.validate()?;
        let frac = T::lit((k as f64 / self.total_steps as f64).min(1.0));
        Ok(match self.kind {
            ScheduleKind::Constant => self.start_value,
            ScheduleKind::Linear => self.start_value + (self.end_value - self.start_value) * frac,
            ScheduleKind::Geometric => self.start_value * (self.end_value / self.start_value).powf(frac),
        })
    }
}

pub fn anneal_value<T: Real>(s: &AnnealSchedule<T>, k: usize) -> Result<T> {
    s.value_at(k)
}

/// Thermal sampler settings. Temperature and friction at step `k` are read
/// from the schedules; `kb` is the Boltzmann constant (1 by convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig<T> {
    pub kb: T,
    pub seed: u64,
    pub temp_schedule: AnnealSchedule<T>,
    pub gamma_schedule: AnnealSchedule<T>,
}

impl<T: Real> LangevinConfig<T> {
    pub fn constant(temperature: T, gamma: T, seed: u64) -> Self {
        Self {
            kb: T::one(),
            seed,
            temp_schedule: AnnealSchedule::constant(temperature),
            gamma_schedule: AnnealSchedule::constant(gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kb > T::zero()) {
            return Err(ChluError::InvalidConfig("kb must be positive".into()));
        }
        self.temp_schedule.validate()?;
        self.gamma_schedule.validate()?;
        let temps = [self.temp_schedule.start_value, self.temp_schedule.end_value];
        if temps.iter().any(|t| *t < T::zero()) {
            return Err(ChluError::InvalidConfig("temperature must be nonnegative".into()));
        }
        let gammas = [self.gamma_schedule.start_value, self.gamma_schedule.end_value];
        if gammas.iter().any(|g| *g < T::zero() || *g > T::one()) {
            return Err(ChluError::InvalidConfig("langevin gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `(γ_k, 𝒯_k)`
    pub fn at(&self, k: usize) -> Result<(T, T)> {
        Ok((self.gamma_schedule.value_at(k)?, self.temp_schedule.value_at(k)?))
    }
}

/// Ordered record of an integration. `steps[i]` is the integration step at
/// which `states[i]` was taken; `energies` is empty for data trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<PhaseState<T>>,
    pub energies: Vec<Energy<T>>,
    pub steps: Vec<usize>,
    pub epsilon: T,
}

impl<T: Real> Trajectory<T> {
    pub fn from_states(states: Vec<PhaseState<T>>, epsilon: T) -> Self {
        let steps = (0..states.len()).collect();
        Self { states, energies: Vec::new(), steps, epsilon }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, PhaseState::dim)
    }

    pub fn times(&self) -> Vec<T> {
        self.steps.iter().map(|&k| T::lit(k as f64) * self.epsilon).collect()
    }

    pub fn last(&self) -> &PhaseState<T> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Sub-trajectory `states[start..start+len]`, re-indexed from zero.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let states = self.states[start..start + len].to_vec();
        let energies = if self.energies.is_empty() {
            Vec::new()
        } else {
            self.energies[start..start + len].to_vec()
        };
        let base = self.steps[start];
        let steps = self.steps[start..start + len].iter().map(|k| k - base).collect();
        Self { states, energies, steps, epsilon: self.epsilon }
    }
}

fn diverged<T: Real>(z: &PhaseState<T>) -> bool {
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    z.q.iter().chain(&z.p).any(|x| !x.is_finite() || x.abs() > limit)
}

fn divergence_error<T: Real, P: Potential<T>>(m: &ChluModel<T, P>, z: &PhaseState<T>, step: usize) -> ChluError {
    let energy = if z.q.iter().chain(&z.p).all(|x| x.is_finite()) {
        Some(m.energy_unchecked(z).snapshot())
    } else {
        None
    };
    ChluError::Diverged { step, energy }
}

/// Intermediate quantities of one Verlet step, kept for reverse-mode sweeps.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace<T> {
    pub q: Vec<T>,
    pub p_half: Vec<T>,
    pub v_half: Vec<T>,
    pub q_next: Vec<T>,
}

pub(crate) fn verlet_step_traced<T: Real, P: Potential<T>>(
    z: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    gamma: T,
) -> Result<(PhaseState<T>, StepTrace<T>)> {
    let half = T::lit(0.5) * epsilon;
    let mut p_half = z.p.clone();
    axpy(-half, &m.potential_gradient(&z.q), &mut p_half);
    let v_half = m.governor.kinetic_gradient(&p_half).map_err(|e| match e {
        ChluError::NonFiniteState => divergence_error(m, z, 0),
        other => other,
    })?;
    let mut q_next = z.q.clone();
    axpy(epsilon, &v_half, &mut q_next);
    let mut p_next = p_half.clone();
    axpy(-half, &m.potential_gradient(&q_next), &mut p_next);
    if !gamma.is_zero() {
        let keep = T::one() - gamma;
        p_next.iter_mut().for_each(|x| *x *= keep);
    }
    let next = PhaseState { q: q_next.clone(), p: p_next };
    if diverged(&next) {
        return Err(divergence_error(m, &next, 0));
    }
    Ok((next, StepTrace { q: z.q.clone(), p_half, v_half, q_next }))
}

/// One dissipative velocity Verlet step:
///
/// ```text
/// p½  = p  − (ε/2)·∇(V + α‖q‖²)(q)
/// q'  = q  + ε·∇T(p½)
/// p*  = p½ − (ε/2)·∇(V + α‖q‖²)(q')
/// p'  = (1 − γ)·p*
/// ```
///
/// With `γ = 0` the map is symplectic and time-reversible.
pub fn verlet_step<T: Real, P: Potential<T>>(
    z: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    gamma: T,
) -> Result<PhaseState<T>> {
    verlet_step_traced(z, m, epsilon, gamma).map(|(next, _)| next)
}

fn with_step(e: ChluError, step: usize) -> ChluError {
    match e {
        ChluError::Diverged { energy, .. } => ChluError::Diverged { step, energy },
        other => other,
    }
}

pub fn rollout<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    let e0 = m.total_energy(z0)?;
    let mut traj = Trajectory {
        states: vec![z0.clone()],
        energies: vec![e0],
        steps: vec![0],
        epsilon: cfg.epsilon,
    };
    let mut z = z0.clone();
    for k in 1..=cfg.steps {
        z = verlet_step(&z, m, cfg.epsilon, cfg.gamma).map_err(|e| with_step(e, k))?;
        if k % cfg.record_every == 0 || k == cfg.steps {
            let e = m.energy_unchecked(&z);
            if !e.is_finite() || e.total.abs() > T::lit(DIVERGENCE_THRESHOLD) {
                return Err(ChluError::Diverged { step: k, energy: Some(e.snapshot()) });
            }
            traj.states.push(z.clone());
            traj.energies.push(e);
            traj.steps.push(k);
        }
    }
    Ok(traj)
}

/// Final state of a `γ`-friction rollout without recording.
pub fn integrate<T: Real, P: Potential<T>>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    gamma: T,
    steps: usize,
) -> Result<PhaseState<T>> {
    let mut z = z0.clone();
    for k in 1..=steps {
        z = verlet_step(&z, m, epsilon, gamma).map_err(|e| with_step(e, k))?;
    }
    Ok(z)
}

/// One Euler–Maruyama momentum update followed by a relativistic drift:
///
/// ```text
/// p' = p − ε·∇(V + α‖q‖²)(q) − γ_k·ε·p + sqrt(2·γ_k·kB·𝒯_k·ε)·ξ
/// q' = q + ε·∇T(p')
/// ```
pub fn langevin_step<T: Real, P: Potential<T>, R: Rng + ?Sized>(
    z: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    lcfg: &LangevinConfig<T>,
    step_index: usize,
    rng: &mut R,
) -> Result<PhaseState<T>> {
    let (gamma, temp) = lcfg.at(step_index)?;
    let grad = m.potential_gradient(&z.q);
    let damp = T::one() - gamma * epsilon;
    let mut p: Vec<T> = z.p.iter().map(|&x| x * damp).collect();
    axpy(-epsilon, &grad, &mut p);
    let sigma = (T::lit(2.0) * gamma * lcfg.kb * temp * epsilon).sqrt();
    if sigma > T::zero() {
        let xi: Vec<T> = normal_vec(rng, p.len());
        axpy(sigma, &xi, &mut p);
    }
    let v = m.governor.kinetic_gradient(&p).map_err(|e| match e {
        ChluError::NonFiniteState => divergence_error(m, z, step_index),
        other => other,
    })?;
    let mut q = z.q.clone();
    axpy(epsilon, &v, &mut q);
    let next = PhaseState { q, p };
    if diverged(&next) {
        return Err(divergence_error(m, &next, step_index));
    }
    Ok(next)
}

/// Runs `steps` Langevin updates, calling `observe(k, z_k)` after each one.
pub fn langevin_run<T: Real, P: Potential<T>, R: Rng + ?Sized>(
    z0: &PhaseState<T>,
    m: &ChluModel<T, P>,
    epsilon: T,
    lcfg: &LangevinConfig<T>,
    steps: usize,
    rng: &mut R,
    mut observe: impl FnMut(usize, &PhaseState<T>),
) -> Result<PhaseState<T>> {
    lcfg.validate()?;
    let mut z = z0.clone();
    for k in 0..steps {
        z = langevin_step(&z, m, epsilon, lcfg, k, rng)?;
        observe(k + 1, &z);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::KineticGovernor;
    use crate::potential::{PotentialNet, Quadratic};
    use crate::rng;

    fn harmonic(dim: usize, c: f64) -> ChluModel<f64, Quadratic<f64>> {
        ChluModel::new(KineticGovernor::new(dim, c, 1.0).unwrap(), Quadratic::new(dim, 1.0), 0.0).unwrap()
    }

    fn flat(dim: usize) -> ChluModel<f64> {
        ChluModel::new(
            KineticGovernor::new(dim, 1.0, 1.0).unwrap(),
            PotentialNet::init(&[dim, 8, 1], 1).unwrap(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn free_drift_with_flat_potential() {
        let m = flat(2);
        let z = PhaseState::new(vec![0.1, 0.2], vec![0.5, -1.0]).unwrap();
        let next = verlet_step(&z, &m, 0.1, 0.0).unwrap();
        let v = m.governor.kinetic_gradient(&z.p).unwrap();
        assert_eq!(next.p, z.p);
        assert_eq!(next.q, vec![0.1 + 0.1 * v[0], 0.2 + 0.1 * v[1]]);
    }

    #[test]
    fn full_friction_zeroes_momentum() {
        let m = harmonic(2, 1.0);
        let z = PhaseState::new(vec![0.3, -0.8], vec![2.0, 1.0]).unwrap();
        let next = verlet_step(&z, &m, 0.05, 1.0).unwrap();
        assert!(next.p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_matches_substepped_reference() {
        // Newtonian regime: m0c² = 1e4 dwarfs the kinetic excess.
        let m = ChluModel::new(KineticGovernor::new(1, 100.0, 1.0).unwrap(), Quadratic::new(1, 1.0), 0.0).unwrap();
        let z = PhaseState::<f64>::new(vec![0.7], vec![-0.2]).unwrap();
        let coarse = verlet_step(&z, &m, 0.001, 0.0).unwrap();
        let fine = integrate(&z, &m, 0.0001, 0.0, 10).unwrap();
        assert!((coarse.q[0] - fine.q[0]).abs() < 1e-6);
        assert!((coarse.p[0] - fine.p[0]).abs() < 1e-6);
    }

    #[test]
    fn rollout_edge_cases() {
        let m = flat(2);
        let z = PhaseState::new(vec![0.0, 0.0], vec![0.3, 0.1]).unwrap();
        let t = rollout(&z, &m, &IntegratorConfig::new(0.1, 0.0, 0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.states[0], z);
        let t = rollout(&z, &m, &IntegratorConfig::new(0.1, 0.0, 50)).unwrap();
        assert_eq!(t.len(), 51);
        assert!(t.states.iter().all(|s| s.p == z.p));
    }

    #[test]
    fn rollout_records_every_nth_state() {
        let m = harmonic(1, 1.0);
        let z = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let mut cfg = IntegratorConfig::new(0.01, 0.0, 25);
        cfg.record_every = 10;
        let t = rollout(&z, &m, &cfg).unwrap();
        assert_eq!(t.steps, vec![0, 10, 20, 25]);
        assert_eq!(t.energies.len(), 4);
    }

    #[test]
    fn divergence_reports_step() {
        // Inverted well with a large step blows up.
        let m = ChluModel::new(KineticGovernor::new(1, 1e9, 1.0).unwrap(), Quadratic::new(1, -1e6), 0.0).unwrap();
        let z = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let err = rollout(&z, &m, &IntegratorConfig::new(1.0, 0.0, 1000)).unwrap_err();
        match err {
            ChluError::Diverged { step, .. } => assert!(step > 0 && step < 1000),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(IntegratorConfig::new(0.0, 0.0, 1).validate().is_err());
        assert!(IntegratorConfig::new(0.1, 1.5, 1).validate().is_err());
        assert!(AnnealSchedule::geometric(0.0, 1.0, 10).is_err());
        assert!(AnnealSchedule::<f64>::parse("cubic:1:2", 10).is_err());
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_value(&AnnealSchedule::constant(1.0), 999).unwrap(), 1.0);
        assert_eq!(anneal_value(&AnnealSchedule::linear(1.0, 0.0, 100), 50).unwrap(), 0.5);
        let g = AnnealSchedule::<f64>::geometric(1.0, 0.01, 1000).unwrap();
        assert!((anneal_value(&g, 500).unwrap() - 0.1).abs() < 1e-15);
        assert!((anneal_value(&g, 5000).unwrap() - 0.01).abs() < 1e-15);
        let parsed = AnnealSchedule::<f64>::parse("linear:0.01:0.2", 1000).unwrap();
        assert_eq!(parsed, AnnealSchedule::linear(0.01, 0.2, 1000));
    }

    #[test]
    fn zero_temperature_langevin_is_deterministic_kick_drift() {
        let m = harmonic(2, 3.0);
        let z = PhaseState::new(vec![0.5, -0.1], vec![0.2, 0.4]).unwrap();
        for (temp, gamma) in [(0.0, 0.0), (2.0, 0.0)] {
            let cfg = LangevinConfig::constant(temp, gamma, 1);
            let a = langevin_step(&z, &m, 0.1, &cfg, 0, &mut rng::stream(1, "a")).unwrap();
            let b = langevin_step(&z, &m, 0.1, &cfg, 0, &mut rng::stream(2, "b")).unwrap();
            assert_eq!(a, b);
            let p: Vec<f64> = z.p.iter().zip(&z.q).map(|(p, q)| p - 0.1 * q).collect();
            let v = m.governor.kinetic_gradient(&p).unwrap();
            assert_eq!(a.p, p);
            assert_eq!(a.q, vec![0.5 + 0.1 * v[0], -0.1 + 0.1 * v[1]]);
        }
    }

    #[test]
    fn friction_relaxes_energy() {
        let m = harmonic(1, 10.0);
        let z = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let t = rollout(&z, &m, &IntegratorConfig::new(0.01, 0.05, 1000)).unwrap();
        assert!(t.energies.last().unwrap().total < t.energies[0].total);
    }
}
