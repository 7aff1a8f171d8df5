//! Phase-space state and the separable relativistic Hamiltonian
//! `H(q, p) = T(p) + V(q) + α‖q‖²`.

use serde::{Deserialize, Serialize};

use crate::error::{ChluError, EnergySnapshot, Result};
use crate::potential::{Potential, PotentialNet};
use crate::scalar::{all_finite, Real};

/// Latent state `z = (q, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Real> PhaseState<T> {
    pub fn new(q: Vec<T>, p: Vec<T>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(ChluError::DimensionMismatch { expected: q.len(), found: p.len() });
        }
        let z = Self { q, p };
        if !z.is_finite() {
            return Err(ChluError::NonFiniteState);
        }
        Ok(z)
    }

    pub fn at_rest(q: Vec<T>) -> Self {
        let p = vec![T::zero(); q.len()];
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.q) && all_finite(&self.p)
    }

    /// `(q, p)` concatenated.
    pub fn flat(&self) -> Vec<T> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn from_flat(z: &[T]) -> Self {
        let d = z.len() / 2;
        Self { q: z[..d].to_vec(), p: z[d..].to_vec() }
    }

    pub fn negate_momentum(&mut self) {
        self.p.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Relativistic kinetic energy `T(p) = sqrt(c²·pᵀM⁻¹p + m0²c⁴)` with a learnable
/// diagonal mass `M = diag(exp(log_mass))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticGovernor<T> {
    pub c: T,
    pub m0: T,
    pub log_mass: Vec<T>,
}

impl<T: Real> KineticGovernor<T> {
    pub fn new(dim: usize, c: T, m0: T) -> Result<Self> {
        let g = Self { c, m0, log_mass: vec![T::zero(); dim] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero()) || !self.c.is_finite() {
            return Err(ChluError::InvalidConfig(format!("speed limit c must be positive, got {}", self.c)));
        }
        if !(self.m0 >= T::zero()) || !self.m0.is_finite() {
            return Err(ChluError::InvalidConfig(format!("rest mass m0 must be nonnegative, got {}", self.m0)));
        }
        if self.log_mass.is_empty() || !all_finite(&self.log_mass) {
            return Err(ChluError::InvalidConfig("log_mass must be non-empty and finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.log_mass.len()
    }

    pub fn mass(&self) -> Vec<T> {
        self.log_mass.iter().map(|l| l.exp()).collect()
    }

    pub fn inverse_mass(&self) -> Vec<T> {
        self.log_mass.iter().map(|l| (-*l).exp()).collect()
    }

    /// `sqrt(vᵀMv)`
    pub fn mass_norm(&self, v: &[T]) -> T {
        v.iter()
            .zip(&self.log_mass)
            .map(|(&x, l)| l.exp() * x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn rest_energy(&self) -> T {
        self.m0 * self.c * self.c
    }

    fn check(&self, p: &[T]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(ChluError::DimensionMismatch { expected: self.dim(), found: p.len() });
        }
        if !all_finite(p) {
            return Err(ChluError::NonFiniteState);
        }
        Ok(())
    }

    pub(crate) fn energy_unchecked(&self, p: &[T]) -> T {
        let c2 = self.c * self.c;
        let quad: T = p
            .iter()
            .zip(&self.log_mass)
            .map(|(&x, l)| (-*l).exp() * x * x)
            .sum();
        let rest = self.rest_energy();
        (c2 * quad + rest * rest).sqrt()
    }

    pub fn kinetic_energy(&self, p: &[T]) -> Result<T> {
        self.check(p)?;
        Ok(self.energy_unchecked(p))
    }

    /// Velocity `∇_p T = c²M⁻¹p / T(p)`.
    pub fn kinetic_gradient(&self, p: &[T]) -> Result<Vec<T>> {
        self.check(p)?;
        let t = self.energy_unchecked(p);
        if t.is_zero() {
            return Err(ChluError::MasslessOrigin);
        }
        let c2 = self.c * self.c;
        Ok(p
            .iter()
            .zip(&self.log_mass)
            .map(|(&x, l)| c2 * (-*l).exp() * x / t)
            .collect())
    }

    /// `J·a` where `J = ∂v/∂p = (c²M⁻¹ − v vᵀ)/T` (symmetric).
    pub(crate) fn velocity_jacobian_apply(&self, p: &[T], v: &[T], a: &[T]) -> Vec<T> {
        let t = self.energy_unchecked(p);
        let c2 = self.c * self.c;
        let va: T = v.iter().zip(a).map(|(&x, &y)| x * y).sum();
        a.iter()
            .zip(v)
            .zip(&self.log_mass)
            .map(|((&ai, &vi), l)| (c2 * (-*l).exp() * ai - vi * va) / t)
            .collect()
    }

    /// `(∂v/∂log_mass)ᵀ a`, with
    /// `∂v_i/∂l_j = −v_i δ_ij + v_i v_j p_j / (2T)`.
    pub(crate) fn velocity_log_mass_vjp(&self, p: &[T], v: &[T], a: &[T]) -> Vec<T> {
        let t = self.energy_unchecked(p);
        let va: T = v.iter().zip(a).map(|(&x, &y)| x * y).sum();
        let half = T::lit(0.5);
        a.iter()
            .zip(v)
            .zip(p)
            .map(|((&aj, &vj), &pj)| -aj * vj + half * vj * pj * va / t)
            .collect()
    }

    /// `∂T/∂log_mass = −v ⊙ p / 2`.
    pub(crate) fn energy_log_mass_grad(&self, p: &[T]) -> Vec<T> {
        let t = self.energy_unchecked(p);
        if t.is_zero() {
            return vec![T::zero(); p.len()];
        }
        let c2 = self.c * self.c;
        let half = T::lit(0.5);
        p.iter()
            .zip(&self.log_mass)
            .map(|(&x, l)| -half * c2 * (-*l).exp() * x * x / t)
            .collect()
    }
}

pub fn kinetic_energy<T: Real>(p: &[T], g: &KineticGovernor<T>) -> Result<T> {
    g.kinetic_energy(p)
}

pub fn kinetic_gradient<T: Real>(p: &[T], g: &KineticGovernor<T>) -> Result<Vec<T>> {
    g.kinetic_gradient(p)
}

pub fn confinement_energy<T: Real>(q: &[T], alpha: T) -> T {
    alpha * q.iter().map(|&x| x * x).sum::<T>()
}

pub fn confinement_gradient<T: Real>(q: &[T], alpha: T) -> Vec<T> {
    let two_alpha = alpha + alpha;
    q.iter().map(|&x| two_alpha * x).collect()
}

/// Energy components at one phase state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Energy<T> {
    pub total: T,
    pub kinetic: T,
    pub potential: T,
    pub confinement: T,
}

impl<T: Real> Energy<T> {
    pub fn snapshot(&self) -> EnergySnapshot {
        EnergySnapshot {
            total: self.total.as_f64(),
            kinetic: self.kinetic.as_f64(),
            potential: self.potential.as_f64(),
            confinement: self.confinement.as_f64(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.kinetic.is_finite() && self.potential.is_finite() && self.confinement.is_finite()
    }
}

/// Gradient of a scalar with respect to every learnable quantity of a model:
/// the potential's flat parameter vector and the governor's `log_mass`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient<T> {
    pub potential: Vec<T>,
    pub log_mass: Vec<T>,
}

impl<T: Real> ParamGradient<T> {
    pub fn zeros(num_params: usize, dim: usize) -> Self {
        Self { potential: vec![T::zero(); num_params], log_mass: vec![T::zero(); dim] }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.potential.iter().chain(&self.log_mass)
    }

    pub fn norm(&self) -> T {
        self.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.iter().zip(other.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        self.potential.iter_mut().chain(self.log_mass.iter_mut()).for_each(|x| *x *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, &b) in self.potential.iter_mut().zip(&other.potential) {
            *a += s * b;
        }
        for (a, &b) in self.log_mass.iter_mut().zip(&other.log_mass) {
            *a += s * b;
        }
    }
}

/// Full unit: kinetic governor, learnable potential and confinement strength.
#[derive(Debug, Clone, PartialEq)]
pub struct ChluModel<T, P = PotentialNet<T>> {
    pub governor: KineticGovernor<T>,
    pub potential: P,
    pub alpha: T,
}

impl<T: Real, P: Potential<T>> ChluModel<T, P> {
    pub fn new(governor: KineticGovernor<T>, potential: P, alpha: T) -> Result<Self> {
        let m = Self { governor, potential, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.governor.validate()?;
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(ChluError::InvalidConfig(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.governor.dim() != self.potential.dim() {
            return Err(ChluError::DimensionMismatch {
                expected: self.governor.dim(),
                found: self.potential.dim(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.governor.dim()
    }

    fn check_state(&self, z: &PhaseState<T>) -> Result<()> {
        if z.q.len() != self.dim() || z.p.len() != self.dim() {
            return Err(ChluError::DimensionMismatch { expected: self.dim(), found: z.q.len().max(z.p.len()) });
        }
        if !z.is_finite() {
            return Err(ChluError::NonFiniteState);
        }
        Ok(())
    }

    pub(crate) fn energy_unchecked(&self, z: &PhaseState<T>) -> Energy<T> {
        let kinetic = self.governor.energy_unchecked(&z.p);
        let potential = self.potential.value(&z.q);
        let confinement = confinement_energy(&z.q, self.alpha);
        Energy { total: kinetic + potential + confinement, kinetic, potential, confinement }
    }

    pub fn total_energy(&self, z: &PhaseState<T>) -> Result<Energy<T>> {
        self.check_state(z)?;
        Ok(self.energy_unchecked(z))
    }

    /// `∇_q (V + α‖q‖²)`
    pub(crate) fn potential_gradient(&self, q: &[T]) -> Vec<T> {
        let mut g = self.potential.grad_input(q);
        let two_alpha = self.alpha + self.alpha;
        for (gi, &x) in g.iter_mut().zip(q) {
            *gi += two_alpha * x;
        }
        g
    }

    /// `−∂H/∂q = −(∇V(q) + 2αq)`
    pub fn force(&self, q: &[T]) -> Result<Vec<T>> {
        if q.len() != self.dim() {
            return Err(ChluError::DimensionMismatch { expected: self.dim(), found: q.len() });
        }
        if !all_finite(q) {
            return Err(ChluError::NonFiniteState);
        }
        Ok(self.potential_gradient(q).into_iter().map(|x| -x).collect())
    }

    /// `∇_θ H(z)` over potential parameters and `log_mass`.
    pub fn energy_param_grad(&self, z: &PhaseState<T>) -> Result<ParamGradient<T>> {
        self.check_state(z)?;
        Ok(ParamGradient {
            potential: self.potential.grad_params(&z.q),
            log_mass: self.governor.energy_log_mass_grad(&z.p),
        })
    }

    pub fn zero_grad(&self) -> ParamGradient<T> {
        ParamGradient::zeros(self.potential.num_params(), self.dim())
    }

    /// `θ += s · g`
    pub fn apply_update(&mut self, s: T, g: &ParamGradient<T>) {
        self.potential.add_scaled_params(s, &g.potential);
        for (l, &d) in self.governor.log_mass.iter_mut().zip(&g.log_mass) {
            *l += s * d;
        }
    }
}

pub fn total_energy<T: Real, P: Potential<T>>(z: &PhaseState<T>, m: &ChluModel<T, P>) -> Result<Energy<T>> {
    m.total_energy(z)
}

pub fn force<T: Real, P: Potential<T>>(q: &[T], m: &ChluModel<T, P>) -> Result<Vec<T>> {
    m.force(q)
}
