//! Experiment presets and drivers shared by the command-line tool and the
//! acceptance tests: trajectory tracing (lemniscate), perturbed oscillators
//! (sine family) and image generation.

use std::f64::consts::PI;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImageDataset, TrajectoryDataset};
use crate::error::{ChluError, Result};
use crate::hamiltonian::{ChluModel, Energy, KineticGovernor, PhaseState};
use crate::integrator::{langevin_step, AnnealSchedule, LangevinConfig, Trajectory};
use crate::potential::{Potential, PotentialNet};
use crate::rng::{self, normal_vec};
use crate::scalar::Real;
use crate::training::{train_step, ReplayBuffer, TrainConfig, TrainItem, TrainMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Lemniscate,
    Sine,
    Images,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Lemniscate => "lemniscate",
            Experiment::Sine => "sine",
            Experiment::Images => "images",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_dims: Vec<usize>,
    pub c: f64,
    pub m0: f64,
    pub alpha: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layer_dims: vec![2, 64, 64, 1], c: 10.0, m0: 1.0, alpha: 0.01, init_seed: 0 }
    }
}

impl ModelConfig {
    pub fn build<T: Real>(&self) -> Result<ChluModel<T>> {
        let net = PotentialNet::init(&self.layer_dims, self.init_seed)?;
        let gov = KineticGovernor::new(self.layer_dims[0], T::lit(self.c), T::lit(self.m0))?;
        ChluModel::new(gov, net, T::lit(self.alpha))
    }
}

/// Everything needed to train one experiment. Config files override any
/// subset of these keys on top of [`ExperimentConfig::preset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Spacing between window starts when cutting trajectories into
    /// training items.
    pub window_stride: usize,
    /// Std of the noise added to static data points to form wake initial
    /// conditions.
    pub wake_noise: f64,
    /// Number of training images read from the IDX file.
    pub image_count: usize,
    /// Apply 2×2 mean pooling to images before training.
    pub downsample: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Experiment::Lemniscate)
    }
}

impl ExperimentConfig {
    pub fn preset(kind: Experiment) -> Self {
        match kind {
            Experiment::Lemniscate => Self {
                model: ModelConfig { layer_dims: vec![2, 64, 64, 1], c: 10.0, m0: 1.0, alpha: 0.01, init_seed: 0 },
                train: TrainConfig {
                    eta: 0.2,
                    beta_mse: 1.0,
                    beta_cd: 0.01,
                    epsilon: 2.0 * PI / 200.0,
                    wake_steps: 16,
                    sleep_steps: 16,
                    batch_size: 16,
                    epochs: 100,
                    ..TrainConfig::default()
                },
                window_stride: 4,
                wake_noise: 0.0,
                image_count: 0,
                downsample: false,
            },
            Experiment::Sine => Self {
                model: ModelConfig { layer_dims: vec![1, 64, 64, 1], c: 3.0, m0: 1.0, alpha: 0.5, init_seed: 0 },
                train: TrainConfig {
                    eta: 0.02,
                    beta_mse: 1.0,
                    beta_cd: 0.01,
                    epsilon: 0.05,
                    wake_steps: 16,
                    sleep_steps: 16,
                    batch_size: 32,
                    epochs: 2,
                    ..TrainConfig::default()
                },
                window_stride: 25,
                wake_noise: 0.0,
                image_count: 0,
                downsample: false,
            },
            Experiment::Images => Self {
                model: ModelConfig { layer_dims: vec![196, 256, 1], c: 1.0, m0: 1.0, alpha: 0.5, init_seed: 0 },
                train: TrainConfig {
                    eta: 0.002,
                    beta_mse: 1.0,
                    beta_cd: 1.0,
                    epsilon: 0.1,
                    wake_steps: 8,
                    sleep_steps: 16,
                    batch_size: 32,
                    epochs: 30,
                    ..TrainConfig::default()
                },
                window_stride: 1,
                wake_noise: 0.1,
                image_count: 1000,
                downsample: true,
            },
        }
    }

    /// Preset for `kind` with the keys present in `overrides` (TOML) replaced.
    pub fn with_overrides(kind: Experiment, overrides: &str) -> Result<Self> {
        let base = toml::Value::try_from(Self::preset(kind))
            .map_err(|e| ChluError::InvalidConfig(format!("cannot encode preset: {e}")))?;
        let user: toml::Value = overrides
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| ChluError::InvalidConfig(format!("config: {e}")))?;
        merge(base, user)
            .try_into()
            .map_err(|e| ChluError::InvalidConfig(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config is representable as TOML")
    }
}

fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, o) => o,
    }
}

/// Windows of `wake_steps + 1` consecutive states starting every `stride`
/// samples; each window's first state is its initial condition.
pub fn trajectory_items<T: Real>(trajs: &[Trajectory<T>], wake_steps: usize, stride: usize) -> Vec<TrainItem<T>> {
    let mut items = Vec::new();
    for t in trajs {
        let mut start = 0;
        while start + wake_steps < t.len() {
            let target = t.window(start, wake_steps + 1);
            items.push(TrainItem { z0: target.states[0].clone(), target });
            start += stride.max(1);
        }
    }
    items
}

/// Static data: target `(x, 0)` held for every compared step, started from
/// `(x + σ·noise, 0)`.
pub fn static_items<T: Real>(images: &[Vec<T>], wake_steps: usize, noise: f64, epsilon: f64, seed: u64) -> Vec<TrainItem<T>> {
    images
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let rest = PhaseState::at_rest(x.clone());
            let e: Vec<f64> = normal_vec(&mut rng::substream(seed, "wake-noise", i as u64), x.len());
            let q0 = x.iter().zip(e).map(|(&v, n)| v + T::lit(noise * n)).collect();
            TrainItem {
                z0: PhaseState::at_rest(q0),
                target: Trajectory::from_states(vec![rest; wake_steps + 1], T::lit(epsilon)),
            }
        })
        .collect()
}

/// Training items for one epoch.
pub trait ItemSource<T> {
    fn epoch_items(&self, epoch: usize) -> Vec<TrainItem<T>>;
}

pub struct WindowSource<T> {
    pub items: Vec<TrainItem<T>>,
}

impl<T: Real> ItemSource<T> for WindowSource<T> {
    fn epoch_items(&self, _epoch: usize) -> Vec<TrainItem<T>> {
        self.items.clone()
    }
}

pub struct StaticSource<'a, T> {
    pub images: &'a [Vec<T>],
    pub wake_steps: usize,
    pub noise: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl<T: Real> ItemSource<T> for StaticSource<'_, T> {
    fn epoch_items(&self, epoch: usize) -> Vec<TrainItem<T>> {
        let seed = self.seed.wrapping_add(epoch as u64);
        static_items(self.images, self.wake_steps, self.noise, self.epsilon, seed)
    }
}

/// Shuffled minibatch wake-sleep training for `cfg.epochs` epochs.
/// `on_step` sees every step's metrics; divergent batches are skipped.
pub fn fit<T: Real, P: Potential<T>>(
    m: &mut ChluModel<T, P>,
    source: &dyn ItemSource<T>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TrainMetrics),
) -> Result<Vec<TrainMetrics>> {
    cfg.validate()?;
    let mut buf = ReplayBuffer::new(cfg.buffer_capacity, cfg.seed);
    let mut shuffle = rng::stream(cfg.seed, "batch-order");
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut items = source.epoch_items(epoch);
        if items.is_empty() {
            return Err(ChluError::EmptyDataset);
        }
        items.shuffle(&mut shuffle);
        for batch in items.chunks(cfg.batch_size) {
            let metrics = train_step(batch, m, &mut buf, cfg, step)?;
            on_step(&metrics);
            history.push(metrics);
            step += 1;
        }
        if let Some(last) = history.last() {
            info!(
                "epoch {epoch}: wake mse {:.3e}, H wake {:.4}, H sleep {:.4}, |g| {:.3e}",
                last.wake_mse, last.h_wake, last.h_sleep, last.grad_norm
            );
        }
    }
    Ok(history)
}

pub fn train_trajectories<T: Real>(
    ds: &TrajectoryDataset<T>,
    cfg: &ExperimentConfig,
    on_step: impl FnMut(&TrainMetrics),
) -> Result<(ChluModel<T>, Vec<TrainMetrics>)> {
    let mut m = cfg.model.build::<T>()?;
    if m.dim() != ds.dim() {
        return Err(ChluError::DimensionMismatch { expected: m.dim(), found: ds.dim() });
    }
    let items = trajectory_items(&ds.trajectories, cfg.train.wake_steps, cfg.window_stride);
    let history = fit(&mut m, &WindowSource { items }, &cfg.train, on_step)?;
    Ok((m, history))
}

pub fn train_images<T: Real>(
    ds: &ImageDataset<T>,
    cfg: &ExperimentConfig,
    on_step: impl FnMut(&TrainMetrics),
) -> Result<(ChluModel<T>, Vec<TrainMetrics>)> {
    let mut m = cfg.model.build::<T>()?;
    if m.dim() != ds.pixels() {
        return Err(ChluError::DimensionMismatch { expected: m.dim(), found: ds.pixels() });
    }
    let source = StaticSource {
        images: &ds.images,
        wake_steps: cfg.train.wake_steps,
        noise: cfg.wake_noise,
        epsilon: cfg.train.epsilon,
        seed: cfg.train.seed,
    };
    let history = fit(&mut m, &source, &cfg.train, on_step)?;
    Ok((m, history))
}

/// Prepares an image file for training: keeps the first `count` images and
/// optionally pools them 2×2.
pub fn prepare_images<T: Real>(ds: &ImageDataset<T>, count: usize, downsample: bool) -> ImageDataset<T> {
    let kept = ds.take(0..count.min(ds.count()));
    if downsample {
        kept.downsample_2x2()
    } else {
        kept
    }
}

/// Rollout diagnostics from one perturbed initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedRollout<T> {
    pub start: PhaseState<T>,
    pub trajectory: Trajectory<T>,
    /// Largest `‖Δq/ε‖_M` over consecutive states.
    pub max_speed_proxy: T,
    pub max_norm: T,
}

/// Finite-difference speed `‖(q_{k+1} − q_k)/ε‖_M` for every step.
pub fn speed_proxy<T: Real, P: Potential<T>>(m: &ChluModel<T, P>, traj: &Trajectory<T>) -> Vec<T> {
    traj.states
        .windows(2)
        .map(|w| {
            let dq: Vec<T> = w[1].q.iter().zip(&w[0].q).map(|(&a, &b)| (a - b) / traj.epsilon).collect();
            m.governor.mass_norm(&dq)
        })
        .collect()
}

/// Picks `count` states from held-out trajectories (one per trajectory,
/// at a seeded random index), perturbs each by `sigma` in q and p, and
/// rolls them out with γ = 0.
pub fn perturbed_rollouts<T: Real, P: Potential<T>>(
    m: &ChluModel<T, P>,
    held_out: &TrajectoryDataset<T>,
    count: usize,
    sigma: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<PerturbedRollout<T>>> {
    let mut pick = rng::stream(seed, "held-out-index");
    held_out
        .trajectories
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, t)| {
            let k = rand::Rng::gen_range(&mut pick, 0..t.len());
            let start = crate::data::perturb_state(&t.states[k], sigma, seed.wrapping_add(i as u64));
            let cfg = crate::integrator::IntegratorConfig::new(held_out.epsilon, T::zero(), steps);
            let trajectory = crate::integrator::rollout(&start, m, &cfg)?;
            let max_speed_proxy = speed_proxy(m, &trajectory).into_iter().fold(T::zero(), T::max);
            let max_norm = trajectory.states.iter().map(|s| crate::scalar::norm(&s.q)).fold(T::zero(), T::max);
            Ok(PerturbedRollout { start, trajectory, max_speed_proxy, max_norm })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Langevin dynamics with annealed temperature and friction.
    Thermal,
    /// Temperature and friction forced to zero.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig<T> {
    pub mode: GenerationMode,
    pub steps: usize,
    pub epsilon: T,
    pub temp_schedule: AnnealSchedule<T>,
    pub gamma_schedule: AnnealSchedule<T>,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl<T: Real> GenerationConfig<T> {
    pub fn thermal_default(seed: u64) -> Self {
        let steps = 1000;
        Self {
            mode: GenerationMode::Thermal,
            steps,
            epsilon: T::lit(0.05),
            temp_schedule: AnnealSchedule::geometric(T::one(), T::lit(0.01), steps).expect("valid default schedule"),
            gamma_schedule: AnnealSchedule::linear(T::lit(0.01), T::lit(0.2), steps),
            snapshot_every: 200,
            seed,
        }
    }

    pub fn langevin(&self) -> LangevinConfig<T> {
        match self.mode {
            GenerationMode::Thermal => LangevinConfig {
                kb: T::one(),
                seed: self.seed,
                temp_schedule: self.temp_schedule,
                gamma_schedule: self.gamma_schedule,
            },
            GenerationMode::Deterministic => LangevinConfig::constant(T::zero(), T::zero(), self.seed),
        }
    }
}

/// Per-step mean energy across all chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTracePoint<T> {
    pub step: usize,
    pub mean: Energy<T>,
}

#[derive(Debug, Clone)]
pub struct GenerationRun<T> {
    pub initial: Vec<PhaseState<T>>,
    pub finals: Vec<PhaseState<T>>,
    /// `(step, positions of every chain)` at each snapshot step.
    pub snapshots: Vec<(usize, Vec<Vec<T>>)>,
    pub energy_trace: Vec<EnergyTracePoint<T>>,
}

/// Runs one Langevin chain per start position (starting at rest), each with
/// its own random stream.
pub fn generate<T: Real, P: Potential<T>>(
    m: &ChluModel<T, P>,
    starts: &[Vec<T>],
    cfg: &GenerationConfig<T>,
) -> Result<GenerationRun<T>> {
    let lcfg = cfg.langevin();
    lcfg.validate()?;
    let every = cfg.snapshot_every.max(1);
    struct Chain<T> {
        final_state: PhaseState<T>,
        energies: Vec<Energy<T>>,
        snapshots: Vec<Vec<T>>,
    }
    let chains: Vec<Result<Chain<T>>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, q0)| {
            let mut r = rng::substream(cfg.seed, "langevin-chain", i as u64);
            let mut z = PhaseState::at_rest(q0.clone());
            let mut energies = Vec::with_capacity(cfg.steps + 1);
            let mut snapshots = Vec::new();
            energies.push(m.total_energy(&z)?);
            for k in 0..cfg.steps {
                z = langevin_step(&z, m, cfg.epsilon, &lcfg, k, &mut r)?;
                energies.push(m.total_energy(&z)?);
                if (k + 1) % every == 0 {
                    snapshots.push(z.q.clone());
                }
            }
            Ok(Chain { final_state: z, energies, snapshots })
        })
        .collect();
    let chains: Vec<Chain<T>> = chains.into_iter().collect::<Result<_>>()?;
    let n = T::lit(starts.len().max(1) as f64);
    let energy_trace = (0..=cfg.steps)
        .map(|k| {
            let mut mean = Energy::default();
            for c in &chains {
                let e = c.energies[k];
                mean.total += e.total / n;
                mean.kinetic += e.kinetic / n;
                mean.potential += e.potential / n;
                mean.confinement += e.confinement / n;
            }
            EnergyTracePoint { step: k, mean }
        })
        .collect();
    let snapshot_steps: Vec<usize> = (1..=cfg.steps).filter(|k| k % every == 0).collect();
    let snapshots = snapshot_steps
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, chains.iter().map(|c| c.snapshots[j].clone()).collect()))
        .collect();
    Ok(GenerationRun {
        initial: starts.iter().map(|q| PhaseState::at_rest(q.clone())).collect(),
        finals: chains.into_iter().map(|c| c.final_state).collect(),
        snapshots,
        energy_trace,
    })
}

/// Root-mean-square per-pixel distance from `x` to the closest image.
pub fn nearest_distance<T: Real>(x: &[T], images: &[Vec<T>]) -> T {
    let n = T::lit(x.len().max(1) as f64);
    images
        .iter()
        .map(|img| (img.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n).sqrt())
        .fold(T::infinity(), T::min)
}

/// Start positions: held-out centroid plus independent noise per chain.
pub fn centroid_starts<T: Real>(held_out: &ImageDataset<T>, count: usize, sigma: f64, seed: u64) -> Result<Vec<Vec<T>>> {
    (0..count)
        .map(|i| crate::data::centroid_with_noise(held_out, sigma, seed.wrapping_add(i as u64)))
        .collect()
}

/// Energy trace as CSV `step,H,T,V,C` (chain means).
pub fn energy_trace_csv<T: Real>(trace: &[EnergyTracePoint<T>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "H", "T", "V", "C"])?;
    for p in trace {
        let e = p.mean;
        w.write_record([
            p.step.to_string(),
            e.total.to_string(),
            e.kinetic.to_string(),
            e.potential.to_string(),
            e.confinement.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| ChluError::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::lemniscate_series;

    #[test]
    fn overrides_merge_onto_preset() {
        let cfg = ExperimentConfig::with_overrides(Experiment::Sine, "[train]\neta = 0.5\n[model]\nc = 2.0\n").unwrap();
        assert_eq!(cfg.train.eta, 0.5);
        assert_eq!(cfg.model.c, 2.0);
        assert_eq!(cfg.model.layer_dims, vec![1, 64, 64, 1]);
        assert!(ExperimentConfig::with_overrides(Experiment::Sine, "[train]\nbogus = 1\n").is_err());
        let round = ExperimentConfig::with_overrides(Experiment::Images, &ExperimentConfig::preset(Experiment::Images).to_toml()).unwrap();
        assert_eq!(round, ExperimentConfig::preset(Experiment::Images));
    }

    #[test]
    fn windows_cover_trajectory() {
        let t = lemniscate_series::<f64>(1.0, 40, 2.0 * PI / 40.0).unwrap();
        let items = trajectory_items(&[t.clone()], 8, 4);
        assert_eq!(items.len(), 9);
        assert_eq!(items[1].z0, t.states[4]);
        assert_eq!(items[1].target.len(), 9);
    }

    #[test]
    fn static_items_hold_target() {
        let imgs = vec![vec![0.5, -0.5], vec![0.0, 1.0]];
        let items = static_items(&imgs, 3, 0.1, 0.1, 7);
        assert_eq!(items.len(), 2);
        assert!(items[0].target.states.iter().all(|s| s.q == imgs[0] && s.p == vec![0.0, 0.0]));
        assert_ne!(items[0].z0.q, imgs[0]);
        assert_eq!(items[0].z0.p, vec![0.0, 0.0]);
    }

    #[test]
    fn nearest_distance_picks_closest() {
        let imgs = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        assert_eq!(nearest_distance(&[0.0, 0.0], &imgs), 0.0);
        assert!((nearest_distance(&[1.0, 0.0], &imgs) - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
