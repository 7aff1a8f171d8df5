use std::fmt;
use std::fs;
use std::path::Path;

use log::{info, warn};

use chlu::checks::{verify_model, CheckReport, Suite};
use chlu::data::{lemniscate_series, parse_idx, sine_dataset, synth_glyph_idx, ImageDataset};
use chlu::experiments::{
    centroid_starts, energy_trace_csv, generate, nearest_distance, prepare_images, train_images, train_trajectories,
    Experiment, ExperimentConfig, GenerationConfig, GenerationMode,
};
use chlu::io::{
    load_checkpoint, pgm_grid_bytes, read_state_row, save_checkpoint, write_atomic, write_dataset_csv,
    write_trajectory_csv, Provenance,
};
use chlu::probe::{probe_csv_bytes, probe_potential, GridAxis};
use chlu::rng::{self, normal_vec};
use chlu::{AnnealSchedule, ChluError, IntegratorConfig, Model, State, TrainMetrics};

use crate::{
    CheckArgs, Command, GenData, GenerateArgs, ModeArg, ProbeArgs, RolloutArgs, SuiteArg, TrainArgs, EXIT_CHECK_FAILED,
    EXIT_DIVERGED, EXIT_USAGE,
};

#[derive(Debug)]
pub enum CliError {
    Core(ChluError),
    Usage(String),
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_divergence() => EXIT_DIVERGED,
            CliError::ChecksFailed(_) => EXIT_CHECK_FAILED,
            _ => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(s) => write!(f, "{s}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

impl From<ChluError> for CliError {
    fn from(e: ChluError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::GenData(g) => gen_data(g),
        Command::Train(a) => train(a),
        Command::Rollout(a) => rollout(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Probe(a) => probe(a),
        Command::Check(a) => check(a),
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| ChluError::Unreadable(format!("{}: {e}", path.display())).into())
}

fn parse_range(spec: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("expected lo:hi, got {spec:?}"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn gen_data(g: GenData) -> CliResult {
    match g {
        GenData::Lemniscate { cycles, samples_per_cycle, epsilon, seed, out } => {
            let eps = epsilon.unwrap_or(2.0 * std::f64::consts::PI / samples_per_cycle.max(1) as f64);
            let traj = lemniscate_series::<f64>(cycles, samples_per_cycle, eps)?;
            let ds = chlu::data::TrajectoryDataset {
                trajectories: vec![traj],
                epsilon: eps,
                generator: "lemniscate".into(),
                seed,
                item_params: vec![cycles],
            };
            write_dataset_csv(&ds, &out)?;
            info!("wrote {} lemniscate samples to {}", ds.trajectories[0].len(), out.display());
        }
        GenData::Sine { count, length, omega, epsilon, seed, out } => {
            let (lo, hi) = parse_range(&omega)?;
            let ds = sine_dataset::<f64>(count, length, lo, hi, epsilon, seed)?;
            write_dataset_csv(&ds, &out)?;
            info!("wrote {count} sine trajectories to {}", out.display());
        }
        GenData::Glyphs { count, seed, out } => {
            write_atomic(&out, &synth_glyph_idx(count, seed))?;
            info!("wrote {count} glyph images to {}", out.display());
        }
    }
    Ok(())
}

fn experiment_config(a: &TrainArgs) -> CliResult<ExperimentConfig> {
    let kind = Experiment::from(a.experiment);
    let mut cfg = match &a.config {
        Some(path) => {
            let text = String::from_utf8(read_file(path)?)
                .map_err(|_| CliError::Usage(format!("{}: config is not UTF-8", path.display())))?;
            ExperimentConfig::with_overrides(kind, &text)?
        }
        None => ExperimentConfig::preset(kind),
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
    }
    if a.alg1_literal {
        cfg.train = cfg.train.clone().alg1_literal();
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn metrics_csv(history: &[TrainMetrics]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in history {
        w.serialize(m).map_err(ChluError::from)?;
    }
    w.into_inner().map_err(|e| CliError::Core(ChluError::Io(e.into_error())))
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = experiment_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let (data, out) = match (&a.data, &a.out) {
        (Some(d), Some(o)) => (d, o),
        _ => return Err(CliError::Usage("train needs --data and --out".into())),
    };
    let kind = Experiment::from(a.experiment);
    let mut log_step = |m: &TrainMetrics| {
        if m.diverged {
            warn!("step {}: batch diverged, update skipped", m.step);
        } else if m.clipped {
            log::debug!("step {}: gradient clipped from norm {:.3e}", m.step, m.grad_norm);
        }
    };
    let (model, history) = match kind {
        Experiment::Lemniscate | Experiment::Sine => {
            let ds = chlu::io::read_dataset_csv::<f64>(data)?;
            if (ds.epsilon - cfg.train.epsilon).abs() > 1e-12 * ds.epsilon {
                info!("using the dataset sample spacing epsilon = {} (config had {})", ds.epsilon, cfg.train.epsilon);
                cfg.train.epsilon = ds.epsilon;
            }
            train_trajectories(&ds, &cfg, &mut log_step)?
        }
        Experiment::Images => {
            let raw = parse_idx::<f64>(&read_file(data)?)?;
            let ds = prepare_images(&raw, cfg.image_count, cfg.downsample);
            info!("training on {} images of {}x{}", ds.count(), ds.width, ds.height);
            train_images(&ds, &cfg, &mut log_step)?
        }
    };
    let diverged = history.iter().filter(|m| m.diverged).count();
    if diverged == history.len() {
        return Err(ChluError::Diverged { step: history.len(), energy: None }.into());
    }
    if diverged > 0 {
        warn!("{diverged} of {} batches diverged and were skipped", history.len());
    }
    model.validate().map_err(|_| ChluError::GradientDiverged)?;
    let provenance = Provenance {
        experiment: kind.name().into(),
        epoch: cfg.train.epochs,
        steps: history.len(),
        seed: cfg.train.seed,
        train: Some(cfg.train.clone()),
    };
    save_checkpoint(&model, &provenance, out)?;
    if let Some(path) = &a.metrics {
        write_atomic(path, &metrics_csv(&history)?)?;
    }
    if let Some(last) = history.last() {
        info!("trained {} steps, final wake mse {:.4e}; checkpoint {}", history.len(), last.wake_mse, out.display());
    }
    Ok(())
}

fn load_model(path: &Path, verify: bool) -> CliResult<Model> {
    let ckpt = load_checkpoint::<f64>(path)?;
    if verify {
        let reports = verify_model(&ckpt.model, 0)?;
        report(&reports)?;
    }
    Ok(ckpt.model)
}

fn report(reports: &[CheckReport]) -> CliResult {
    let mut failed = 0;
    for r in reports {
        println!("{r}");
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::ChecksFailed(failed))
    } else {
        Ok(())
    }
}

fn initial_state(spec: &str, epsilon: f64) -> CliResult<State> {
    if spec == "lemniscate-start" {
        let t = lemniscate_series::<f64>(1.0, 200, epsilon)?;
        return Ok(t.states[0].clone());
    }
    let (path, row) = match spec.rsplit_once('#') {
        Some((p, r)) => (p, r.parse().map_err(|_| CliError::Usage(format!("bad row in {spec:?}")))?),
        None => (spec, 0),
    };
    Ok(read_state_row(Path::new(path), row)?)
}

fn rollout(a: RolloutArgs) -> CliResult {
    let m = load_model(&a.ckpt, a.verify)?;
    let z0 = initial_state(&a.init, a.epsilon)?;
    if z0.dim() != m.dim() {
        return Err(ChluError::DimensionMismatch { expected: m.dim(), found: z0.dim() }.into());
    }
    let cfg = IntegratorConfig { record_every: a.record_every, ..IntegratorConfig::new(a.epsilon, a.gamma, a.steps) };
    let traj = chlu::integrator::rollout(&z0, &m, &cfg)?;
    write_trajectory_csv(&traj, &a.out)?;
    info!("wrote {} states to {}", traj.len(), a.out.display());
    Ok(())
}

fn fit_to_model(ds: ImageDataset<f64>, dim: usize) -> CliResult<ImageDataset<f64>> {
    if ds.pixels() == dim {
        Ok(ds)
    } else if ds.pixels() == 4 * dim {
        Ok(ds.downsample_2x2())
    } else {
        Err(ChluError::DimensionMismatch { expected: dim, found: ds.pixels() }.into())
    }
}

fn generate_cmd(a: GenerateArgs) -> CliResult {
    let m = load_model(&a.ckpt, a.verify)?;
    let d = m.dim();
    let cfg = GenerationConfig {
        mode: match a.mode {
            ModeArg::Thermal => GenerationMode::Thermal,
            ModeArg::Deterministic => GenerationMode::Deterministic,
        },
        steps: a.steps,
        epsilon: a.epsilon,
        temp_schedule: AnnealSchedule::parse(&a.temp_schedule, a.steps)?,
        gamma_schedule: AnnealSchedule::parse(&a.gamma_schedule, a.steps)?,
        snapshot_every: a.snapshot_every,
        seed: a.seed,
    };
    let (starts, reference) = match &a.data {
        Some(path) => {
            let all = fit_to_model(parse_idx::<f64>(&read_file(path)?)?, d)?;
            if a.held_out_from >= all.count() {
                return Err(CliError::Usage(format!(
                    "--held-out-from {} leaves no held-out images ({} in file)",
                    a.held_out_from,
                    all.count()
                )));
            }
            let held = all.take(a.held_out_from..all.count());
            (centroid_starts(&held, a.count, a.sigma, a.seed)?, all.take(0..a.held_out_from))
        }
        None => {
            let starts = (0..a.count)
                .map(|i| {
                    let e: Vec<f64> = normal_vec(&mut rng::substream(a.seed, "start-noise", i as u64), d);
                    e.into_iter().map(|x| a.sigma * x).collect()
                })
                .collect();
            (starts, ImageDataset { images: vec![], width: 0, height: 0 })
        }
    };
    let run = generate(&m, &starts, &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(ChluError::from)?;
    write_atomic(&a.out_dir.join("energy.csv"), &energy_trace_csv(&run.energy_trace)?)?;

    let side = (d as f64).sqrt().round() as usize;
    if side * side == d {
        let tanh = !a.no_tanh;
        let initial: Vec<Vec<f64>> = run.initial.iter().map(|z| z.q.clone()).collect();
        write_atomic(&a.out_dir.join("step_0000.pgm"), &pgm_grid_bytes(&initial, side, side, a.cols, tanh)?)?;
        for (k, qs) in &run.snapshots {
            let name = format!("step_{k:04}.pgm");
            write_atomic(&a.out_dir.join(name), &pgm_grid_bytes(qs, side, side, a.cols, tanh)?)?;
        }
    } else {
        warn!("latent dimension {d} is not a square image; skipping PGM output");
    }

    let first = run.energy_trace.first().map(|p| p.mean.total).unwrap_or(0.0);
    let last = run.energy_trace.last().map(|p| p.mean.total).unwrap_or(0.0);
    let mut summary = format!("mode = \"{}\"\nmean_h_initial = {first:e}\nmean_h_final = {last:e}\n", match cfg.mode {
        GenerationMode::Thermal => "thermal",
        GenerationMode::Deterministic => "deterministic",
    });
    if !reference.images.is_empty() {
        let mean_dist = |qs: &mut dyn Iterator<Item = &Vec<f64>>| {
            let v: Vec<f64> = qs.map(|q| nearest_distance(q, &reference.images)).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let d0 = mean_dist(&mut run.initial.iter().map(|z| &z.q));
        let d1 = mean_dist(&mut run.finals.iter().map(|z| &z.q));
        summary.push_str(&format!("nearest_distance_initial = {d0:e}\nnearest_distance_final = {d1:e}\n"));
    }
    write_atomic(&a.out_dir.join("summary.toml"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn probe(a: ProbeArgs) -> CliResult {
    let m = load_model(&a.ckpt, a.verify)?;
    let x = GridAxis::parse(&a.grid)?;
    let y = match &a.grid_y {
        Some(s) => GridAxis::parse(s)?,
        None => x,
    };
    let samples = probe_potential(&m, &x, &y)?;
    write_atomic(&a.out, &probe_csv_bytes(&samples)?)?;
    info!("wrote {} grid nodes to {}", samples.len(), a.out.display());
    Ok(())
}

fn check(a: CheckArgs) -> CliResult {
    let name = match a.suite {
        SuiteArg::Gradients => "gradients",
        SuiteArg::Symplectic => "symplectic",
        SuiteArg::Reversibility => "reversibility",
        SuiteArg::VelocityBound => "velocity-bound",
        SuiteArg::Boltzmann => "boltzmann",
        SuiteArg::All => "all",
    };
    let suites = Suite::parse(name).expect("every suite argument names a suite");
    let mut reports = Vec::new();
    for s in suites {
        reports.extend(s.run(a.seed)?);
    }
    report(&reports)
}
