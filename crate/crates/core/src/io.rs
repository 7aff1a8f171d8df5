//! On-disk artifacts: checkpoints, trajectory and dataset CSV, PGM image
//! grids. Every writer goes through a temporary file in the destination
//! directory and renames it into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TrajectoryDataset;
use crate::error::{ChluError, Result};
use crate::hamiltonian::{ChluModel, KineticGovernor, PhaseState};
use crate::integrator::Trajectory;
use crate::potential::{Dense, PotentialNet};
use crate::scalar::Real;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: i64 = 1;

/// Writes `bytes` to `path` atomically (temporary sibling + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| ChluError::Io(e.error))?;
    Ok(())
}

/// 17 significant digits; parses back to the identical `f64`.
fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_array<T: Real>(xs: &[T]) -> String {
    let body: Vec<String> = xs.iter().map(|x| fmt_float(x.as_f64())).collect();
    format!("[{}]", body.join(", "))
}

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub experiment: String,
    pub epoch: usize,
    pub steps: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ChluModel<T>,
    pub provenance: Provenance,
    pub created: String,
}

#[derive(Serialize)]
struct ProvenanceSection<'a> {
    provenance: &'a Provenance,
}

/// Creation time; honours `SOURCE_DATE_EPOCH` for reproducible output.
pub fn creation_timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse::<i64>().ok());
    let when = match secs.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    when.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn checkpoint_to_string<T: Real>(m: &ChluModel<T>, provenance: &Provenance, created: &str) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "format_version = {CHECKPOINT_VERSION}");
    let _ = writeln!(s, "created = {:?}", created);
    let _ = writeln!(s, "scalar = {:?}", T::type_name());
    let _ = writeln!(s);
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "dim = {}", m.dim());
    let dims: Vec<String> = m.potential.layer_dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "layer_dims = [{}]", dims.join(", "));
    let _ = writeln!(s, "c = {}", fmt_float(m.governor.c.as_f64()));
    let _ = writeln!(s, "m0 = {}", fmt_float(m.governor.m0.as_f64()));
    let _ = writeln!(s, "alpha = {}", fmt_float(m.alpha.as_f64()));
    let _ = writeln!(s, "log_mass = {}", fmt_array(&m.governor.log_mass));
    for layer in &m.potential.layers {
        let _ = writeln!(s);
        let _ = writeln!(s, "[[model.layers]]");
        let _ = writeln!(s, "inputs = {}", layer.inputs);
        let _ = writeln!(s, "outputs = {}", layer.outputs);
        let _ = writeln!(s, "weights = {}", fmt_array(&layer.weights));
        let _ = writeln!(s, "bias = {}", fmt_array(&layer.bias));
    }
    let _ = writeln!(s);
    let prov = toml::to_string(&ProvenanceSection { provenance })
        .map_err(|e| ChluError::InvalidConfig(format!("cannot serialize provenance: {e}")))?;
    s.push_str(&prov);
    Ok(s)
}

#[derive(Deserialize)]
struct LayerSection {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Deserialize)]
struct ModelSection {
    dim: usize,
    layer_dims: Vec<usize>,
    c: f64,
    m0: f64,
    alpha: f64,
    log_mass: Vec<f64>,
    layers: Vec<LayerSection>,
}

#[derive(Deserialize)]
struct CheckpointDoc {
    created: String,
    model: ModelSection,
    #[serde(default)]
    provenance: Provenance,
}

pub fn checkpoint_from_str<T: Real>(text: &str) -> Result<Checkpoint<T>> {
    let value: toml::Table = text.parse().map_err(|e| ChluError::Unreadable(format!("{e}")))?;
    match value.get("format_version").and_then(toml::Value::as_integer) {
        Some(CHECKPOINT_VERSION) => {}
        Some(v) => return Err(ChluError::CheckpointVersion(v)),
        None => return Err(ChluError::Unreadable("missing format_version".into())),
    }
    let doc: CheckpointDoc = value.try_into().map_err(|e| ChluError::Unreadable(format!("{e}")))?;
    let ms = doc.model;
    let layers: Vec<Dense<T>> = ms
        .layers
        .into_iter()
        .map(|l| Dense {
            inputs: l.inputs,
            outputs: l.outputs,
            weights: l.weights.into_iter().map(T::lit).collect(),
            bias: l.bias.into_iter().map(T::lit).collect(),
        })
        .collect();
    let net = PotentialNet { layers };
    net.validate()?;
    if net.layer_dims() != ms.layer_dims {
        return Err(ChluError::ShapeInconsistency(format!(
            "layer_dims {:?} but layers describe {:?}",
            ms.layer_dims,
            net.layer_dims()
        )));
    }
    if ms.dim != ms.log_mass.len() || ms.dim != ms.layer_dims[0] {
        return Err(ChluError::ShapeInconsistency(format!(
            "dim {} with {} log_mass entries and input width {}",
            ms.dim,
            ms.log_mass.len(),
            ms.layer_dims[0]
        )));
    }
    let governor = KineticGovernor { c: T::lit(ms.c), m0: T::lit(ms.m0), log_mass: ms.log_mass.into_iter().map(T::lit).collect() };
    let model = ChluModel::new(governor, net, T::lit(ms.alpha))?;
    Ok(Checkpoint { model, provenance: doc.provenance, created: doc.created })
}

pub fn save_checkpoint<T: Real>(m: &ChluModel<T>, provenance: &Provenance, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(m, provenance, &creation_timestamp())?;
    write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(|e| ChluError::Unreadable(format!("{}: {e}", path.display())))?;
    checkpoint_from_str(&text)
}

fn state_columns(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("q{i}")).chain((0..d).map(|i| format!("p{i}"))).collect()
}

/// Rows `step,t,q0..q{d−1},p0..p{d−1},H,T,V,C`, one per recorded state.
pub fn trajectory_csv_bytes<T: Real>(traj: &Trajectory<T>) -> Result<Vec<u8>> {
    let d = traj.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend(state_columns(d));
    header.extend(["H", "T", "V", "C"].map(String::from));
    w.write_record(&header)?;
    let times = traj.times();
    for (i, z) in traj.states.iter().enumerate() {
        let mut row = vec![traj.steps[i].to_string(), times[i].to_string()];
        row.extend(z.q.iter().chain(&z.p).map(|x| x.to_string()));
        match traj.energies.get(i) {
            Some(e) => row.extend([e.total, e.kinetic, e.potential, e.confinement].map(|x| x.to_string())),
            None => row.extend(std::iter::repeat(String::new()).take(4)),
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| ChluError::Io(e.into_error()))
}

pub fn write_trajectory_csv<T: Real>(traj: &Trajectory<T>, path: &Path) -> Result<()> {
    write_atomic(path, &trajectory_csv_bytes(traj)?)
}

/// Reads the phase state stored in data row `row` (0-based) of a trajectory
/// or dataset CSV.
pub fn read_state_row<T: Real>(path: &Path, row: usize) -> Result<PhaseState<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let qs: Vec<usize> = column_indices(&headers, 'q');
    let ps: Vec<usize> = column_indices(&headers, 'p');
    if qs.is_empty() || qs.len() != ps.len() {
        return Err(ChluError::SizeMismatch(format!("{}: no matching q/p columns", path.display())));
    }
    let rec = rdr
        .records()
        .nth(row)
        .ok_or_else(|| ChluError::SizeMismatch(format!("{} has no data row {row}", path.display())))??;
    let parse = |idx: &[usize]| -> Result<Vec<T>> {
        idx.iter()
            .map(|&i| {
                rec[i]
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| ChluError::SizeMismatch(format!("bad number {:?}", &rec[i])))
            })
            .collect()
    };
    PhaseState::new(parse(&qs)?, parse(&ps)?)
}

fn column_indices(headers: &csv::StringRecord, prefix: char) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let rest = h.strip_prefix(prefix)?;
            rest.parse::<usize>().ok().map(|k| (k, i))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

/// Dataset cache: `# generator=<name> seed=<s> epsilon=<e>` then rows
/// `item,param,step,t,q…,p…`.
pub fn dataset_csv_bytes<T: Real>(ds: &TrajectoryDataset<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "# generator={} seed={} epsilon={}", ds.generator, ds.seed, ds.epsilon)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["item".to_string(), "param".into(), "step".into(), "t".into()];
    header.extend(state_columns(ds.dim()));
    w.write_record(&header)?;
    for (i, traj) in ds.trajectories.iter().enumerate() {
        let param = ds.item_params.get(i).copied().unwrap_or(0.0);
        let times = traj.times();
        for (k, z) in traj.states.iter().enumerate() {
            let mut row = vec![i.to_string(), param.to_string(), traj.steps[k].to_string(), times[k].to_string()];
            row.extend(z.q.iter().chain(&z.p).map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| ChluError::Io(e.into_error()))
}

pub fn write_dataset_csv<T: Real>(ds: &TrajectoryDataset<T>, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_csv_bytes(ds)?)
}

pub fn read_dataset_csv<T: Real>(path: &Path) -> Result<TrajectoryDataset<T>> {
    let text = fs::read_to_string(path)?;
    let meta = text.lines().next().and_then(|l| l.strip_prefix('#')).unwrap_or("");
    let field = |key: &str| {
        meta.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
    };
    let generator = field("generator").unwrap_or_else(|| "unknown".into());
    let seed = field("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let epsilon: f64 = field("epsilon")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ChluError::SizeMismatch(format!("{}: missing epsilon metadata", path.display())))?;

    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let qs = column_indices(&headers, 'q');
    let ps = column_indices(&headers, 'p');
    let mut trajectories: Vec<Vec<PhaseState<T>>> = Vec::new();
    let mut params = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| ChluError::SizeMismatch(format!("bad number {:?}", &rec[i])))
        };
        let item: usize = rec[0].parse().map_err(|_| ChluError::SizeMismatch("bad item index".into()))?;
        if item == trajectories.len() {
            trajectories.push(Vec::new());
            params.push(num(1)?);
        } else if item + 1 != trajectories.len() {
            return Err(ChluError::SizeMismatch(format!("item {item} out of order")));
        }
        let q = qs.iter().map(|&i| num(i).map(T::lit)).collect::<Result<Vec<T>>>()?;
        let p = ps.iter().map(|&i| num(i).map(T::lit)).collect::<Result<Vec<T>>>()?;
        trajectories.last_mut().unwrap().push(PhaseState::new(q, p)?);
    }
    if trajectories.is_empty() {
        return Err(ChluError::EmptyDataset);
    }
    Ok(TrajectoryDataset {
        trajectories: trajectories.into_iter().map(|s| Trajectory::from_states(s, T::lit(epsilon))).collect(),
        epsilon: T::lit(epsilon),
        generator,
        seed,
        item_params: params,
    })
}

/// Binary PGM (P5, maxval 255) tiling `images` left to right, `cols` per row.
/// Pixels map through `round(255·(x+1)/2)` with `x = tanh(v)` or
/// `x = clamp(v, −1, 1)`.
pub fn pgm_grid_bytes<T: Real>(images: &[Vec<T>], w: usize, h: usize, cols: usize, display_tanh: bool) -> Result<Vec<u8>> {
    if images.is_empty() || cols == 0 || w == 0 || h == 0 {
        return Err(ChluError::SizeMismatch("empty image grid".into()));
    }
    if let Some(bad) = images.iter().position(|img| img.len() != w * h) {
        return Err(ChluError::SizeMismatch(format!(
            "image {bad} has {} pixels, expected {w}x{h}",
            images[bad].len()
        )));
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut px = vec![0u8; gw * gh];
    for (n, img) in images.iter().enumerate() {
        let (ox, oy) = ((n % cols) * w, (n / cols) * h);
        for y in 0..h {
            for x in 0..w {
                let v = img[y * w + x].as_f64();
                let v = if v.is_nan() { -1.0 } else if display_tanh { v.tanh() } else { v.clamp(-1.0, 1.0) };
                px[(oy + y) * gw + ox + x] = (255.0 * (v + 1.0) / 2.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

pub fn write_pgm_grid<T: Real>(
    images: &[Vec<T>],
    w: usize,
    h: usize,
    cols: usize,
    path: &Path,
    display_tanh: bool,
) -> Result<()> {
    write_atomic(path, &pgm_grid_bytes(images, w, h, cols, display_tanh)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{rollout, IntegratorConfig};

    fn model() -> ChluModel<f64> {
        let mut net = PotentialNet::init(&[2, 5, 1], 4).unwrap();
        net.layers[1].weights.iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * i as f64 - 0.23);
        let mut gov = KineticGovernor::new(2, 1.5, 0.7).unwrap();
        gov.log_mass = vec![0.1, -1.0 / 3.0];
        ChluModel::new(gov, net, 0.05).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = model();
        let prov = Provenance { experiment: "unit".into(), epoch: 2, steps: 10, seed: 3, train: Some(TrainConfig::default()) };
        let text = checkpoint_to_string(&m, &prov, "2026-01-01T00:00:00Z").unwrap();
        let back = checkpoint_from_str::<f64>(&text).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.provenance, prov);
        let a: Vec<u64> = m.potential.layers.iter().flat_map(|l| l.weights.iter().map(|x| x.to_bits())).collect();
        let b: Vec<u64> = back.model.potential.layers.iter().flat_map(|l| l.weights.iter().map(|x| x.to_bits())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_bad_shape_and_version() {
        let m = model();
        let text = checkpoint_to_string(&m, &Provenance::default(), "t").unwrap();
        let bad_shape = text.replacen("layer_dims = [2, 5, 1]", "layer_dims = [2, 6, 1]", 1);
        let err = checkpoint_from_str::<f64>(&bad_shape).unwrap_err();
        assert!(err.to_string().contains("shape inconsistency"), "{err}");
        let bad_version = text.replacen("format_version = 1", "format_version = 7", 1);
        let err = checkpoint_from_str::<f64>(&bad_version).unwrap_err();
        assert!(err.to_string().contains('7'), "{err}");
        assert!(matches!(checkpoint_from_str::<f64>("not toml ["), Err(ChluError::Unreadable(_))));
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = model();
        let z = PhaseState::new(vec![0.2, 0.1], vec![0.0, 0.5]).unwrap();
        let t = rollout(&z, &m, &IntegratorConfig::new(0.1, 0.0, 0)).unwrap();
        let text = String::from_utf8(trajectory_csv_bytes(&t).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "step,t,q0,q1,p0,p1,H,T,V,C");
        let t = rollout(&z, &m, &IntegratorConfig::new(0.1, 0.0, 3)).unwrap();
        let bytes = trajectory_csv_bytes(&t).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 10));
        assert_eq!(bytes, trajectory_csv_bytes(&t).unwrap());
    }

    #[test]
    fn pgm_fixtures() {
        let gray = pgm_grid_bytes(&[vec![0.0f64; 4]], 2, 2, 1, true).unwrap();
        assert_eq!(gray, b"P5\n2 2\n255\n\x80\x80\x80\x80".to_vec());
        let sat = pgm_grid_bytes(&[vec![10.0f64]], 1, 1, 1, true).unwrap();
        assert_eq!(*sat.last().unwrap(), 255);
        let img = vec![-1.0, 1.0, 0.5, -0.5];
        let bytes = pgm_grid_bytes(&[img], 2, 2, 1, false).unwrap();
        // 255·(x+1)/2 = 0, 255, 191.25, 63.75
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xff\xbf\x40".to_vec());
        assert!(pgm_grid_bytes(&[vec![0.0f64; 3]], 2, 2, 1, true).is_err());
    }

    #[test]
    fn pgm_tiles_images() {
        let imgs = vec![vec![-1.0f64], vec![1.0], vec![1.0]];
        let bytes = pgm_grid_bytes(&imgs, 1, 1, 2, false).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xff\xff\x00".to_vec());
    }
}
