//! Sampling the learned energy surface of planar models on a regular grid.

use crate::error::{ChluError, Result};
use crate::hamiltonian::{confinement_energy, ChluModel};
use crate::potential::Potential;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub resolution: usize,
}

impl GridAxis {
    /// Parses `min:max:resolution`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || ChluError::InvalidConfig(format!("grid {spec:?} is not min:max:resolution"));
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let min: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let max: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let resolution: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if resolution == 0 || !(min <= max) {
            return Err(bad());
        }
        Ok(Self { min, max, resolution })
    }

    pub fn nodes(&self) -> Vec<f64> {
        if self.resolution == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.resolution - 1) as f64;
        (0..self.resolution).map(|i| self.min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSample<T> {
    pub x: T,
    pub y: T,
    /// `V(q) + α‖q‖²`
    pub potential: T,
    pub fx: T,
    pub fy: T,
}

/// Potential plus confinement and the force `−∇(V + α‖q‖²)` at every grid
/// node, `y` outer and `x` inner.
pub fn probe_potential<T: Real, P: Potential<T>>(
    m: &ChluModel<T, P>,
    x_axis: &GridAxis,
    y_axis: &GridAxis,
) -> Result<Vec<ProbeSample<T>>> {
    if m.dim() != 2 {
        return Err(ChluError::ProbeDimension(m.dim()));
    }
    let xs = x_axis.nodes();
    let mut out = Vec::with_capacity(x_axis.resolution * y_axis.resolution);
    for y in y_axis.nodes() {
        for &x in &xs {
            let q = [T::lit(x), T::lit(y)];
            let f = m.force(&q)?;
            out.push(ProbeSample {
                x: q[0],
                y: q[1],
                potential: m.potential.value(&q) + confinement_energy(&q, m.alpha),
                fx: f[0],
                fy: f[1],
            });
        }
    }
    Ok(out)
}

/// CSV `x,y,V,fx,fy`.
pub fn probe_csv_bytes<T: Real>(samples: &[ProbeSample<T>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "V", "fx", "fy"])?;
    for s in samples {
        w.write_record([s.x, s.y, s.potential, s.fx, s.fy].map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| ChluError::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::KineticGovernor;
    use crate::potential::PotentialNet;

    fn model(alpha: f64) -> ChluModel<f64> {
        ChluModel::new(
            KineticGovernor::new(2, 1.0, 1.0).unwrap(),
            PotentialNet::init(&[2, 4, 1], 0).unwrap(),
            alpha,
        )
        .unwrap()
    }

    #[test]
    fn flat_surface_is_zero() {
        let axis = GridAxis::parse("-2:2:5").unwrap();
        let s = probe_potential(&model(0.0), &axis, &axis).unwrap();
        assert_eq!(s.len(), 25);
        assert!(s.iter().all(|p| p.potential == 0.0 && p.fx == 0.0 && p.fy == 0.0));
    }

    #[test]
    fn confinement_surface_is_analytic() {
        let axis = GridAxis::parse("-1:1:7").unwrap();
        for p in probe_potential(&model(0.1), &axis, &axis).unwrap() {
            let expected = 0.1 * (p.x * p.x + p.y * p.y);
            assert!((p.potential - expected).abs() < 1e-15);
            assert!((p.fx + 0.2 * p.x).abs() < 1e-15);
        }
    }

    #[test]
    fn probe_rejects_non_planar_models() {
        let m = ChluModel::new(
            KineticGovernor::new(3, 1.0, 1.0).unwrap(),
            PotentialNet::init(&[3, 4, 1], 0).unwrap(),
            0.0,
        )
        .unwrap();
        let axis = GridAxis::parse("0:1:2").unwrap();
        let err = probe_potential(&m, &axis, &axis).unwrap_err();
        assert!(err.to_string().starts_with("probe requires 2-dimensional latent"));
    }

    #[test]
    fn csv_row_count() {
        let axis = GridAxis::parse("-2:2:3").unwrap();
        let s = probe_potential(&model(0.0), &axis, &axis).unwrap();
        let text = String::from_utf8(probe_csv_bytes(&s).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert_eq!(text.lines().next().unwrap(), "x,y,V,fx,fy");
    }
}
