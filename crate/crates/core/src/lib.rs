//! Causal Hamiltonian learning unit.
//!
//! A latent state `z = (q, p)` evolves under the separable Hamiltonian
//! `H = T(p) + V_θ(q) + α‖q‖²`, where `T(p) = sqrt(c²·pᵀM⁻¹p + m0²c⁴)` caps
//! every velocity at the speed limit `c` and `V_θ` is a small learnable
//! network. States advance by a (optionally dissipative) velocity Verlet step
//! or by Langevin dynamics, and the potential is fit by wake-sleep training.
//!
//! All numerics are generic over [`Real`] (`f32`/`f64`); the aliases below fix
//! the scalar to `f64`, which the long-horizon checks require.

pub mod checks;
pub mod data;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod integrator;
pub mod io;
pub mod potential;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{ChluError, EnergySnapshot, Result};
pub use hamiltonian::{ChluModel, Energy, KineticGovernor, ParamGradient, PhaseState};
pub use integrator::{AnnealSchedule, IntegratorConfig, LangevinConfig, ScheduleKind, Trajectory};
pub use potential::{Potential, PotentialNet, Quadratic};
pub use scalar::Real;
pub use training::{ReplayBuffer, TrainConfig, TrainItem, TrainMetrics};

pub type State = PhaseState<f64>;
pub type Governor = KineticGovernor<f64>;
pub type Net = PotentialNet<f64>;
pub type Model = ChluModel<f64>;
pub type Traj = Trajectory<f64>;
pub type Gradient = ParamGradient<f64>;

pub type State32 = PhaseState<f32>;
pub type Model32 = ChluModel<f32>;
