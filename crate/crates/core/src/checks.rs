//! Self-check suites behind `chlu check` and checkpoint verification.
//!
//! Every check compares a measured quantity against a fixed tolerance and
//! reports both, so failures can be read off the summary line.

use std::fmt;

use rand::Rng;

use crate::error::Result;
use crate::hamiltonian::{ChluModel, KineticGovernor, PhaseState};
use crate::integrator::{integrate, langevin_step, rollout, verlet_step, IntegratorConfig, LangevinConfig, Trajectory};
use crate::potential::{Potential, PotentialNet, Quadratic};
use crate::rng::{self, normal_vec, StreamRng};
use crate::training::{bptt_loss_and_grad, mse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Symplectic,
    Reversibility,
    VelocityBound,
    Boltzmann,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Gradients, Suite::Symplectic, Suite::Reversibility, Suite::VelocityBound, Suite::Boltzmann];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Symplectic => "symplectic",
            Suite::Reversibility => "reversibility",
            Suite::VelocityBound => "velocity-bound",
            Suite::Boltzmann => "boltzmann",
        }
    }

    pub fn parse(s: &str) -> Option<Vec<Suite>> {
        if s == "all" {
            return Some(Self::ALL.to_vec());
        }
        Self::ALL.iter().copied().find(|x| x.name() == s).map(|x| vec![x])
    }

    pub fn run(self, seed: u64) -> Result<Vec<CheckReport>> {
        match self {
            Suite::Gradients => gradient_suite(seed, 100),
            Suite::Symplectic => symplectic_suite(seed),
            Suite::Reversibility => reversibility_suite(seed),
            Suite::VelocityBound => velocity_bound_suite(seed),
            Suite::Boltzmann => boltzmann_suite(seed),
        }
    }
}

/// One measured quantity against its tolerance. `value <= tolerance` passes,
/// except for lower-bound checks where `value >= tolerance` passes.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub lower_bound: bool,
    pub instances: usize,
}

impl CheckReport {
    fn at_most(suite: Suite, name: &str, value: f64, tolerance: f64, instances: usize) -> Self {
        Self { suite: suite.name(), name: name.into(), value, tolerance, lower_bound: false, instances }
    }

    fn at_least(suite: Suite, name: &str, value: f64, tolerance: f64, instances: usize) -> Self {
        Self { lower_bound: true, ..Self::at_most(suite, name, value, tolerance, instances) }
    }

    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.value >= self.tolerance
        } else {
            self.value <= self.tolerance
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={} name={} status={} value={:.6e} {}={:.6e} instances={}",
            self.suite,
            self.name,
            if self.passed() { "pass" } else { "fail" },
            self.value,
            if self.lower_bound { "min" } else { "max" },
            self.tolerance,
            self.instances
        )
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Random tanh network with non-degenerate weights and a random mass.
pub fn random_model(r: &mut StreamRng, dims: &[usize], c: f64) -> Result<ChluModel<f64>> {
    let mut net = PotentialNet::init(dims, r.gen())?;
    let theta: Vec<f64> = normal_vec(r, net.num_params());
    net.add_scaled_params(0.5, &theta);
    let mut gov = KineticGovernor::new(dims[0], c, r.gen_range(0.5..2.0))?;
    gov.log_mass = (0..dims[0]).map(|_| r.gen_range(-0.5..0.5)).collect();
    ChluModel::new(gov, net, r.gen_range(0.0..0.2))
}

fn random_state(r: &mut StreamRng, d: usize) -> PhaseState<f64> {
    PhaseState { q: normal_vec(r, d), p: normal_vec(r, d) }
}

fn random_dims(r: &mut StreamRng, d: usize, max_hidden: usize) -> Vec<usize> {
    let mut dims = vec![d];
    for _ in 0..r.gen_range(1..=max_hidden) {
        dims.push(r.gen_range(2..=8));
    }
    dims.push(1);
    dims
}

fn param_fd(m: &ChluModel<f64>, f: impl Fn(&ChluModel<f64>) -> f64) -> Vec<f64> {
    let np = m.potential.num_params();
    let total = np + m.dim();
    (0..total)
        .map(|i| {
            let h = 1e-6;
            let mut e = m.zero_grad();
            if i < np {
                e.potential[i] = h;
            } else {
                e.log_mass[i - np] = h;
            }
            let mut plus = m.clone();
            plus.apply_update(1.0, &e);
            let mut minus = m.clone();
            minus.apply_update(-1.0, &e);
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn rollout_mse(m: &ChluModel<f64>, z0: &PhaseState<f64>, target: &Trajectory<f64>, cfg: &IntegratorConfig<f64>) -> f64 {
    let traj = rollout(z0, m, cfg).expect("finite rollout");
    mse(&traj.states[1..], &target.states[1..]).expect("matching shapes")
}

/// Exact derivatives against central differences over `instances` random
/// models each.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<CheckReport>> {
    let s = Suite::Gradients;
    let mut r = rng::stream(seed, "check-gradients");
    let (mut gq, mut gp, mut gh, mut gb1, mut gb2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut n1, mut n2) = (0, 0);
    for _ in 0..instances {
        let d = r.gen_range(1..=4);
        let dims = random_dims(&mut r, d, 2);
        let c = r.gen_range(0.5..5.0);
        let m = random_model(&mut r, &dims, c)?;
        let z = random_state(&mut r, d);

        let exact = m.potential.grad_input(&z.q);
        gq = gq.max(rel_err(&exact, &central_diff(&z.q, |q| m.potential.value(q))));

        let exact = m.governor.kinetic_gradient(&z.p)?;
        gp = gp.max(rel_err(&exact, &central_diff(&z.p, |p| m.governor.kinetic_energy(p).unwrap())));

        let g = m.energy_param_grad(&z)?;
        let exact: Vec<f64> = g.iter().copied().collect();
        gh = gh.max(rel_err(&exact, &param_fd(&m, |mm| mm.total_energy(&z).unwrap().total)));

        // backpropagation through a short planar rollout
        let hidden = if n1 <= n2 { 1 } else { 2 };
        let mut dims = vec![2];
        dims.extend((0..hidden).map(|_| r.gen_range(2..=6)));
        dims.push(1);
        let c = r.gen_range(1.0..3.0);
        let m = random_model(&mut r, &dims, c)?;
        let steps = r.gen_range(1..=10);
        let cfg = IntegratorConfig::new(0.1, 0.0, steps);
        let z0 = random_state(&mut r, 2);
        let target = Trajectory::from_states((0..=steps).map(|_| random_state(&mut r, 2)).collect(), 0.1);
        let w = bptt_loss_and_grad(&z0, &target, &m, &cfg)?;
        let exact: Vec<f64> = w.grad.iter().copied().collect();
        let err = rel_err(&exact, &param_fd(&m, |mm| rollout_mse(mm, &z0, &target, &cfg)));
        if hidden == 1 {
            gb1 = gb1.max(err);
            n1 += 1;
        } else {
            gb2 = gb2.max(err);
            n2 += 1;
        }
    }
    Ok(vec![
        CheckReport::at_most(s, "potential-input-gradient", gq, 1e-6, instances),
        CheckReport::at_most(s, "kinetic-gradient", gp, 1e-6, instances),
        CheckReport::at_most(s, "energy-parameter-gradient", gh, 1e-5, instances),
        CheckReport::at_most(s, "bptt-one-hidden-layer", gb1, 1e-4, n1),
        CheckReport::at_most(s, "bptt-two-hidden-layers", gb2, 1e-3, n2),
    ])
}

fn step_jacobian_det(m: &ChluModel<f64>, z: &PhaseState<f64>, eps: f64, gamma: f64) -> Result<f64> {
    let x = z.flat();
    let mut cols = Vec::new();
    for i in 0..2 {
        let h = 1e-6;
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        let fa = verlet_step(&PhaseState::from_flat(&a), m, eps, gamma)?.flat();
        let fb = verlet_step(&PhaseState::from_flat(&b), m, eps, gamma)?.flat();
        cols.push([(fa[0] - fb[0]) / (2.0 * h), (fa[1] - fb[1]) / (2.0 * h)]);
    }
    Ok(cols[0][0] * cols[1][1] - cols[1][0] * cols[0][1])
}

/// Harmonic fixture `V = ½q²`, `α = 0`, `c = 10`.
pub fn harmonic_model(dim: usize) -> Result<ChluModel<f64, Quadratic<f64>>> {
    ChluModel::new(KineticGovernor::new(dim, 10.0, 1.0)?, Quadratic::new(dim, 1.0), 0.0)
}

/// Largest `|H_k − H_0| / |H_0 − m0c²|` along a γ = 0 rollout, measured
/// relative to the energy above rest.
pub fn harmonic_energy_drift(steps: usize, epsilon: f64) -> Result<f64> {
    let m = harmonic_model(1)?;
    let mut z = PhaseState { q: vec![1.0], p: vec![0.0] };
    let rest = m.governor.rest_energy();
    let h0 = m.total_energy(&z)?.total;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        z = verlet_step(&z, &m, epsilon, 0.0)?;
        worst = worst.max((m.total_energy(&z)?.total - h0).abs());
    }
    Ok(worst / (h0 - rest).abs())
}

pub fn symplectic_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let s = Suite::Symplectic;
    let mut r = rng::stream(seed, "check-symplectic");
    let trials = 100;
    let (mut d0, mut d1) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let dims = random_dims(&mut r, 1, 2);
        let c = r.gen_range(0.5..5.0);
        let m = random_model(&mut r, &dims, c)?;
        let z = random_state(&mut r, 1);
        d0 = d0.max((step_jacobian_det(&m, &z, 0.05, 0.0)? - 1.0).abs());
        d1 = d1.max((step_jacobian_det(&m, &z, 0.05, 0.1)? - 0.9).abs());
    }
    Ok(vec![
        CheckReport::at_most(s, "det-jacobian-conservative", d0, 1e-6, trials),
        CheckReport::at_most(s, "det-jacobian-dissipative", d1, 1e-6, trials),
        CheckReport::at_most(s, "harmonic-energy-drift", harmonic_energy_drift(100_000, 0.01)?, 1e-3, 1),
    ])
}

/// Relative distance from `z0` after `steps` steps forward, a momentum flip,
/// `steps` steps forward and a second flip.
pub fn reversal_error<P: Potential<f64>>(m: &ChluModel<f64, P>, z0: &PhaseState<f64>, steps: usize, epsilon: f64) -> Result<f64> {
    let mut z = integrate(z0, m, epsilon, 0.0, steps)?;
    z.negate_momentum();
    let mut back = integrate(&z, m, epsilon, 0.0, steps)?;
    back.negate_momentum();
    let diff: Vec<f64> = back.flat().iter().zip(z0.flat()).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&z0.flat()).max(1.0))
}

pub fn reversibility_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut r = rng::stream(seed, "check-reversibility");
    let trials = 50;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d = r.gen_range(1..=4);
        let dims = random_dims(&mut r, d, 2);
        let c = r.gen_range(0.5..5.0);
        let m = random_model(&mut r, &dims, c)?;
        worst = worst.max(reversal_error(&m, &random_state(&mut r, d), 200, 0.05)?);
    }
    Ok(vec![CheckReport::at_most(Suite::Reversibility, "time-reversal", worst, 1e-10, trials)])
}

/// Largest `‖v‖_M / c` over random momenta with norms log-uniform in
/// `[1e-6, 1e6]`, and the smallest ratio among momenta with
/// `‖p‖ ≥ 1e4·m0·c`.
pub fn velocity_ratios(r: &mut StreamRng, samples: usize) -> Result<(f64, f64, usize)> {
    let mut top = 0.0f64;
    let mut sat = f64::INFINITY;
    let mut n_sat = 0;
    for _ in 0..samples {
        let d = r.gen_range(1..=8);
        let mut gov = KineticGovernor::new(d, r.gen_range(0.5..10.0), r.gen_range(0.5..2.0))?;
        gov.log_mass = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let dir: Vec<f64> = normal_vec(r, d);
        let scale = 10f64.powf(r.gen_range(-6.0..=6.0)) / norm(&dir).max(1e-300);
        let p: Vec<f64> = dir.iter().map(|x| x * scale).collect();
        let ratio = gov.mass_norm(&gov.kinetic_gradient(&p)?) / gov.c;
        top = top.max(ratio);
        if norm(&p) >= 1e4 * gov.m0 * gov.c {
            sat = sat.min(ratio);
            n_sat += 1;
        }
    }
    Ok((top, sat, n_sat))
}

/// Largest `‖q_{k+1} − q_k‖_M / (ε·c)` along rollouts of stiff random models
/// started with large momenta.
pub fn displacement_ratio(r: &mut StreamRng, trials: usize, steps: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d = r.gen_range(1..=4);
        let dims = random_dims(r, d, 2);
        let c = r.gen_range(0.5..5.0);
        let mut m = random_model(r, &dims, c)?;
        let boost: Vec<f64> = m.potential.params().iter().map(|x| 20.0 * x).collect();
        m.potential.add_scaled_params(1.0, &boost);
        let eps = 0.05;
        let mut z = random_state(r, d);
        z.p.iter_mut().for_each(|x| *x *= 1e3);
        for _ in 0..steps {
            let next = verlet_step(&z, &m, eps, 0.0)?;
            let dq: Vec<f64> = next.q.iter().zip(&z.q).map(|(a, b)| a - b).collect();
            // rounding of q itself is the only slack allowed
            let slack = 4.0 * f64::EPSILON * norm(&z.q).max(1.0);
            worst = worst.max((m.governor.mass_norm(&dq) - slack).max(0.0) / (eps * m.governor.c));
            z = next;
        }
    }
    Ok(worst)
}

pub fn velocity_bound_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let s = Suite::VelocityBound;
    let mut r = rng::stream(seed, "check-velocity");
    let samples = 10_000;
    let (top, sat, n_sat) = velocity_ratios(&mut r, samples)?;
    let strict = CheckReport {
        // strict inequality: anything equal to c fails
        tolerance: 1.0 - f64::EPSILON,
        ..CheckReport::at_most(s, "speed-below-c", top, 1.0, samples)
    };
    Ok(vec![
        strict,
        CheckReport::at_least(s, "saturation-speed", sat, 0.999, n_sat),
        CheckReport::at_most(s, "step-displacement", displacement_ratio(&mut r, 20, 200)?, 1.0, 20),
    ])
}

/// Empirical `Var(q)` of a 1-D quadratic Langevin chain (`k = 1`, `kB = 1`).
pub fn boltzmann_variance(seed: u64, temperature: f64, gamma: f64, epsilon: f64, burn_in: usize, samples: usize) -> Result<f64> {
    let m = harmonic_model(1)?;
    let lcfg = LangevinConfig::constant(temperature, gamma, seed);
    let mut r = rng::stream(seed, "check-boltzmann");
    let mut z = PhaseState { q: vec![0.0], p: vec![0.0] };
    for k in 0..burn_in {
        z = langevin_step(&z, &m, epsilon, &lcfg, k, &mut r)?;
    }
    let (mut sum, mut sum2) = (0.0, 0.0);
    for k in 0..samples {
        z = langevin_step(&z, &m, epsilon, &lcfg, burn_in + k, &mut r)?;
        sum += z.q[0];
        sum2 += z.q[0] * z.q[0];
    }
    let n = samples as f64;
    let mean = sum / n;
    Ok(sum2 / n - mean * mean)
}

pub fn boltzmann_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let temperature = 0.5;
    let var = boltzmann_variance(seed, temperature, 0.5, 0.05, 100_000, 1_000_000)?;
    Ok(vec![CheckReport::at_most(
        Suite::Boltzmann,
        "variance-relative-error",
        (var - temperature).abs() / temperature,
        0.05,
        1,
    )])
}

/// Invariants every loaded model must satisfy: valid parameters, finite
/// energies, exact input gradients, the speed limit and time reversibility.
pub fn verify_model(m: &ChluModel<f64>, seed: u64) -> Result<Vec<CheckReport>> {
    let s = Suite::Gradients;
    m.validate()?;
    let d = m.dim();
    let mut r = rng::stream(seed, "verify");
    let trials = 10;
    let (mut gq, mut rev, mut speed) = (0.0f64, 0.0f64, 0.0f64);
    let mut finite = true;
    let probes: Vec<PhaseState<f64>> = (0..trials).map(|_| random_state(&mut r, d)).collect();
    for z in &probes {
        finite &= m.energy_unchecked(z).is_finite() && m.potential.grad_input(&z.q).iter().all(|g| g.is_finite());
    }
    if !finite {
        return Ok(vec![CheckReport::at_most(s, "finite-energy", 1.0, 0.0, trials)]);
    }
    for z in &probes {
        let z = z.clone();
        let exact = m.potential.grad_input(&z.q);
        gq = gq.max(rel_err(&exact, &central_diff(&z.q, |q| m.potential.value(q))));
        let big: Vec<f64> = z.p.iter().map(|x| x * 1e6).collect();
        speed = speed.max(m.governor.mass_norm(&m.governor.kinetic_gradient(&big)?) / m.governor.c);
        rev = rev.max(reversal_error(m, &z, 50, 0.01)?);
    }
    Ok(vec![
        CheckReport::at_most(s, "finite-energy", if finite { 0.0 } else { 1.0 }, 0.0, trials),
        CheckReport::at_most(s, "potential-input-gradient", gq, 1e-6, trials),
        CheckReport { tolerance: 1.0 - f64::EPSILON, ..CheckReport::at_most(Suite::VelocityBound, "speed-below-c", speed, 1.0, trials) },
        CheckReport::at_most(Suite::Reversibility, "time-reversal", rev, 1e-10, trials),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!(Suite::parse("all").unwrap().len(), 5);
        assert_eq!(Suite::parse("velocity-bound").unwrap(), vec![Suite::VelocityBound]);
        assert!(Suite::parse("nope").is_none());
    }

    #[test]
    fn report_line_format() {
        let r = CheckReport::at_most(Suite::Boltzmann, "x", 0.01, 0.05, 1);
        assert!(r.passed());
        assert_eq!(r.to_string(), "check=boltzmann name=x status=pass value=1.000000e-2 max=5.000000e-2 instances=1");
        assert!(!CheckReport::at_least(Suite::Boltzmann, "y", 0.5, 0.999, 3).passed());
    }

    #[test]
    fn small_gradient_suite_passes() {
        for rep in gradient_suite(1, 10).unwrap() {
            assert!(rep.passed(), "{rep}");
        }
    }

    #[test]
    fn verify_accepts_fresh_model() {
        let m = crate::experiments::ModelConfig::default().build::<f64>().unwrap();
        for rep in verify_model(&m, 0).unwrap() {
            assert!(rep.passed(), "{rep}");
        }
    }
}
