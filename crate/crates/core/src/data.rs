//! Experiment datasets: analytic trajectories, IDX image files and the
//! noisy initial conditions used at inference.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{ChluError, Result};
use crate::hamiltonian::PhaseState;
use crate::integrator::Trajectory;
use crate::rng::{self, normal_vec};
use crate::scalar::Real;

/// Collection of same-dimension trajectories plus how they were generated.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset<T> {
    pub trajectories: Vec<Trajectory<T>>,
    pub epsilon: T,
    pub generator: String,
    pub seed: u64,
    /// Per-item generator parameter (the angular frequency for sine items).
    pub item_params: Vec<f64>,
}

impl<T: Real> TrajectoryDataset<T> {
    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::dim)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// `(initial state, target)` pairs.
    pub fn items(&self) -> impl Iterator<Item = (&PhaseState<T>, &Trajectory<T>)> {
        self.trajectories.iter().map(|t| (&t.states[0], t))
    }
}

/// Gerono lemniscate `q(t) = (cos t, sin t·cos t)` sampled at phases
/// `t_k = 2πk / samples_per_cycle`, including the closing sample.
///
/// Time is rescaled so consecutive samples are `epsilon` apart; momenta are
/// the derivative with respect to that time. With
/// `epsilon = 2π / samples_per_cycle` this is `p = dq/dt = (−sin t, cos 2t)`.
pub fn lemniscate_series<T: Real>(cycles: f64, samples_per_cycle: usize, epsilon: f64) -> Result<Trajectory<T>> {
    if !(cycles > 0.0) || samples_per_cycle < 8 || !(epsilon > 0.0) {
        return Err(ChluError::InvalidConfig(format!(
            "lemniscate needs cycles > 0, samples_per_cycle >= 8 and epsilon > 0 (got {cycles}, {samples_per_cycle}, {epsilon})"
        )));
    }
    let dphase = 2.0 * PI / samples_per_cycle as f64;
    let rate = dphase / epsilon;
    let n = (cycles * samples_per_cycle as f64).round() as usize;
    let states = (0..=n)
        .map(|k| {
            let t = k as f64 * dphase;
            let (s, c) = t.sin_cos();
            PhaseState {
                q: vec![T::lit(c), T::lit(s * c)],
                p: vec![T::lit(-s * rate), T::lit((2.0 * t).cos() * rate)],
            }
        })
        .collect();
    Ok(Trajectory::from_states(states, T::lit(epsilon)))
}

/// `q(t) = sin(ωt)`, `p(t) = ω·cos(ωt)` at `t_k = k·ε`, `k < length`.
pub fn sine_trajectory<T: Real>(omega: f64, length: usize, epsilon: f64) -> Trajectory<T> {
    let states = (0..length)
        .map(|k| {
            let t = k as f64 * epsilon;
            let (s, c) = (omega * t).sin_cos();
            PhaseState { q: vec![T::lit(s)], p: vec![T::lit(omega * c)] }
        })
        .collect();
    Trajectory::from_states(states, T::lit(epsilon))
}

pub fn sine_dataset<T: Real>(
    count: usize,
    length: usize,
    omega_lo: f64,
    omega_hi: f64,
    epsilon: f64,
    seed: u64,
) -> Result<TrajectoryDataset<T>> {
    if count == 0 || length == 0 || !(omega_lo < omega_hi) || !(epsilon > 0.0) {
        return Err(ChluError::InvalidConfig(format!(
            "sine dataset needs count, length >= 1, omega_lo < omega_hi and epsilon > 0 (got {count}, {length}, {omega_lo}, {omega_hi}, {epsilon})"
        )));
    }
    let mut r = rng::stream(seed, "sine-omega");
    let omegas: Vec<f64> = (0..count).map(|_| r.gen_range(omega_lo..omega_hi)).collect();
    Ok(TrajectoryDataset {
        trajectories: omegas.iter().map(|&w| sine_trajectory(w, length, epsilon)).collect(),
        epsilon: T::lit(epsilon),
        generator: "sine".into(),
        seed,
        item_params: omegas,
    })
}

/// Grayscale images with pixels scaled to `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset<T> {
    pub images: Vec<Vec<T>>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> ImageDataset<T> {
    pub fn count(&self) -> usize {
        self.images.len()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn take(&self, range: std::ops::Range<usize>) -> Self {
        Self { images: self.images[range].to_vec(), width: self.width, height: self.height }
    }

    /// 2×2 mean pooling (odd trailing rows/columns are dropped).
    pub fn downsample_2x2(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let quarter = T::lit(0.25);
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut out = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let at = |yy: usize, xx: usize| img[yy * self.width + xx];
                        out.push(
                            (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1))
                                * quarter,
                        );
                    }
                }
                out
            })
            .collect();
        Self { images, width: w, height: h }
    }
}

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ChluError::UnexpectedEof { offset: bytes.len(), needed: offset + 4 - bytes.len() })
}

pub fn pixel_to_real<T: Real>(u: u8) -> T {
    T::lit(f64::from(u) / 127.5 - 1.0)
}

pub fn real_to_pixel<T: Real>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Parses an IDX3 unsigned-byte image file (big-endian header
/// `0x00000803, count, rows, cols`, then row-major pixels).
pub fn parse_idx<T: Real>(bytes: &[u8]) -> Result<ImageDataset<T>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(ChluError::BadMagic { found: magic, offset: 0 });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(ChluError::BadHeader(format!("zero image size {rows}x{cols}")));
    }
    let pixels = rows * cols;
    let start = 16;
    let needed = count
        .checked_mul(pixels)
        .ok_or_else(|| ChluError::BadHeader(format!("{count} images of {rows}x{cols} overflows")))?;
    if bytes.len() - start < needed {
        let complete = (bytes.len() - start) / pixels;
        return Err(ChluError::UnexpectedEof {
            offset: start + complete * pixels,
            needed: start + needed - bytes.len(),
        });
    }
    let images = bytes[start..start + needed]
        .chunks_exact(pixels)
        .map(|img| img.iter().map(|&u| pixel_to_real(u)).collect())
        .collect();
    Ok(ImageDataset { images, width: cols, height: rows })
}

/// Serializes to IDX3, quantizing each pixel back to `u8`.
pub fn write_idx<T: Real>(ds: &ImageDataset<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.count() * ds.pixels());
    for v in [IDX_IMAGE_MAGIC, ds.count() as u32, ds.height as u32, ds.width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in &ds.images {
        out.extend(img.iter().map(|&v| real_to_pixel(v)));
    }
    out
}

/// Component-wise mean of every image plus `sigma·N(0, I)`.
pub fn centroid_with_noise<T: Real>(ds: &ImageDataset<T>, sigma: f64, seed: u64) -> Result<Vec<T>> {
    if ds.images.is_empty() {
        return Err(ChluError::EmptyDataset);
    }
    let n = T::lit(ds.count() as f64);
    let mut c = vec![T::zero(); ds.pixels()];
    for img in &ds.images {
        for (ci, &x) in c.iter_mut().zip(img) {
            *ci += x;
        }
    }
    let noise: Vec<f64> = normal_vec(&mut rng::stream(seed, "centroid-noise"), c.len());
    Ok(c.into_iter().zip(noise).map(|(ci, e)| ci / n + T::lit(sigma * e)).collect())
}

/// Adds independent `N(0, σ²)` noise to every component of `z`.
pub fn perturb_state<T: Real>(z: &PhaseState<T>, sigma: f64, seed: u64) -> PhaseState<T> {
    let mut r = rng::stream(seed, "perturb");
    let dq: Vec<f64> = normal_vec(&mut r, z.dim());
    let dp: Vec<f64> = normal_vec(&mut r, z.dim());
    PhaseState {
        q: z.q.iter().zip(dq).map(|(&x, e)| x + T::lit(sigma * e)).collect(),
        p: z.p.iter().zip(dp).map(|(&x, e)| x + T::lit(sigma * e)).collect(),
    }
}

// Seven-segment layout: a top, b top-right, c bottom-right, d bottom,
// e bottom-left, f top-left, g middle. Endpoints on a 1×2 box, y down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 1.0)),
    ((1.0, 1.0), (1.0, 2.0)),
    ((0.0, 2.0), (1.0, 2.0)),
    ((0.0, 1.0), (0.0, 2.0)),
    ((0.0, 0.0), (0.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
];

const DIGITS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn segment_distance(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Procedural 28×28 seven-segment digit glyphs with random placement, size,
/// slant and stroke width, as raw `u8` pixels (0 background, 255 ink).
/// Stand-in for handwritten digits when no IDX file is available.
pub fn synth_glyph_pixels(count: usize, seed: u64) -> Vec<Vec<u8>> {
    const SIDE: usize = 28;
    let mut r = rng::stream(seed, "glyphs");
    (0..count)
        .map(|_| {
            let digit = r.gen_range(0..10);
            let scale = r.gen_range(0.8..1.1);
            let w = 10.0 * scale;
            let h = 9.0 * scale;
            let x0 = 14.0 - w / 2.0 + r.gen_range(-2.0..2.0);
            let y0 = 14.0 - h + r.gen_range(-2.0..2.0);
            let slant = r.gen_range(-0.25..0.25);
            let thick = r.gen_range(1.2..2.2);
            let map = |(sx, sy): (f64, f64)| {
                let y = y0 + sy * h;
                (x0 + sx * w - slant * (y - 14.0), y)
            };
            let segs: Vec<_> = SEGMENTS
                .iter()
                .zip(DIGITS[digit])
                .filter(|(_, on)| *on)
                .map(|(&(a, b), _)| (map(a), map(b)))
                .collect();
            let mut img = Vec::with_capacity(SIDE * SIDE);
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let dist = segs
                        .iter()
                        .map(|&(a, b)| segment_distance(px, py, a, b))
                        .fold(f64::INFINITY, f64::min);
                    let ink = (thick - dist + 0.5).clamp(0.0, 1.0);
                    img.push((255.0 * ink).round() as u8);
                }
            }
            img
        })
        .collect()
}

/// IDX3 bytes for [`synth_glyph_pixels`].
pub fn synth_glyph_idx(count: usize, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IDX_IMAGE_MAGIC, count as u32, 28, 28] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in synth_glyph_pixels(count, seed) {
        out.extend(img);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(magic: u32, count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [magic, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn lemniscate_examples() {
        let eps = 2.0 * PI / 200.0;
        let t = lemniscate_series::<f64>(1.0, 200, eps).unwrap();
        assert_eq!(t.len(), 201);
        let z0 = &t.states[0];
        assert_eq!(z0.q, vec![1.0, 0.0]);
        assert!((z0.p[0] - 0.0).abs() < 1e-15 && (z0.p[1] - 1.0).abs() < 1e-15);
        let quarter = &t.states[50];
        assert!(quarter.q[0].abs() < 1e-15 && quarter.q[1].abs() < 1e-15);
        let last = t.last();
        for (a, b) in last.flat().iter().zip(z0.flat()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lemniscate_rejects_coarse_sampling() {
        assert!(lemniscate_series::<f64>(1.0, 4, 0.1).is_err());
    }

    #[test]
    fn sine_examples() {
        let t = sine_trajectory::<f64>(1.0, 10, 0.05);
        assert_eq!(t.states[0].q, vec![0.0]);
        assert_eq!(t.states[0].p, vec![1.0]);
        let ds = sine_dataset::<f64>(100, 1000, 0.5, 2.0, 0.05, 9).unwrap();
        for (t, &w) in ds.trajectories.iter().zip(&ds.item_params) {
            assert!((0.5..2.0).contains(&w));
            for s in &t.states {
                assert!((s.q[0].powi(2) + (s.p[0] / w).powi(2) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(ds, sine_dataset::<f64>(100, 1000, 0.5, 2.0, 0.05, 9).unwrap());
        assert!(sine_dataset::<f64>(1, 1, 2.0, 0.5, 0.05, 0).is_err());
    }

    #[test]
    fn parse_idx_fixture() {
        let b = idx(0x803, 2, 2, 2, &[0, 255, 0, 255, 255, 0, 255, 0]);
        let ds = parse_idx::<f64>(&b).unwrap();
        assert_eq!(ds.images, vec![vec![-1.0, 1.0, -1.0, 1.0], vec![1.0, -1.0, 1.0, -1.0]]);
        assert_eq!(write_idx(&ds), b);
    }

    #[test]
    fn parse_idx_errors() {
        let err = parse_idx::<f64>(&idx(0x801, 1, 2, 2, &[0; 4])).unwrap_err();
        assert!(err.to_string().starts_with("bad magic"), "{err}");
        let err = parse_idx::<f64>(&idx(0x803, 3, 2, 2, &[0; 8])).unwrap_err();
        assert!(matches!(err, ChluError::UnexpectedEof { offset: 24, needed: 4 }), "{err}");
        assert!(matches!(parse_idx::<f64>(&[0, 0]), Err(ChluError::UnexpectedEof { .. })));
    }

    #[test]
    fn centroid_examples() {
        let one = ImageDataset { images: vec![vec![0.5, -0.25]], width: 2, height: 1 };
        assert_eq!(centroid_with_noise(&one, 0.0, 1).unwrap(), vec![0.5, -0.25]);
        let sym = ImageDataset { images: vec![vec![0.5, -0.25], vec![-0.5, 0.25]], width: 2, height: 1 };
        assert_eq!(centroid_with_noise(&sym, 0.0, 1).unwrap(), vec![0.0, 0.0]);
        let empty = ImageDataset::<f64> { images: vec![], width: 2, height: 1 };
        assert!(centroid_with_noise(&empty, 0.1, 0).is_err());
    }

    #[test]
    fn perturbation_is_reproducible() {
        let z = PhaseState::new(vec![1.0, 2.0], vec![0.0, -1.0]).unwrap();
        assert_eq!(perturb_state(&z, 0.0, 3), z);
        assert_eq!(perturb_state(&z, 0.5, 3), perturb_state(&z, 0.5, 3));
        assert_ne!(perturb_state(&z, 0.5, 3), perturb_state(&z, 0.5, 4));
    }

    #[test]
    fn downsample_means_blocks() {
        let ds = ImageDataset { images: vec![vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.5, -0.5]], width: 4, height: 2 };
        let small = ds.downsample_2x2();
        assert_eq!((small.width, small.height), (2, 1));
        assert_eq!(small.images[0], vec![0.5, 0.25]);
    }

    #[test]
    fn glyphs_parse_and_have_ink() {
        let bytes = synth_glyph_idx(20, 5);
        let ds = parse_idx::<f64>(&bytes).unwrap();
        assert_eq!((ds.count(), ds.width, ds.height), (20, 28, 28));
        for img in &ds.images {
            let ink = img.iter().filter(|&&v| v > 0.0).count();
            assert!(ink > 20 && ink < 400, "{ink}");
        }
        assert_eq!(bytes, synth_glyph_idx(20, 5));
    }
}
