//! Learnable potential energy surfaces.
//!
//! [`PotentialNet`] is a tanh multilayer perceptron with a scalar linear
//! output. Input gradients and parameter gradients are exact reverse-mode
//! derivatives; second-order actions (Hessian-vector products and the mixed
//! input/parameter term needed to backpropagate through the integrator) are
//! symmetric differences of those exact gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChluError, Result};
use crate::rng;
use crate::scalar::{norm, Real};

/// Scalar potential `V(q)` with a flat parameter vector.
///
/// Parameter-indexed methods (`params`, `grad_params`, `add_scaled_params`)
/// must agree on ordering. Methods here do not validate input length; use the
/// checked free functions ([`potential_value`] and friends) at API boundaries.
pub trait Potential<T: Real>: Clone + Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[T]) -> T;

    fn grad_input(&self, q: &[T]) -> Vec<T>;

    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<T>;

    /// `theta += scale * delta`
    fn add_scaled_params(&mut self, scale: T, delta: &[T]);

    fn grad_params(&self, q: &[T]) -> Vec<T>;

    /// `∇²V(q) · v` by a symmetric difference of the exact input gradient with
    /// step `h = 1e-4 · max(1, ‖q‖) / max(1, ‖v‖)`.
    fn hessian_vector_product(&self, q: &[T], v: &[T]) -> Vec<T> {
        symmetric_difference(q, v, |x| self.grad_input(x))
    }

    /// `∇_θ (aᵀ ∇_q V(q))`, the parameter adjoint of a force evaluation.
    fn mixed_grad_params(&self, q: &[T], a: &[T]) -> Vec<T> {
        symmetric_difference(q, a, |x| self.grad_params(x))
    }
}

fn fd_step<T: Real>(q: &[T], v: &[T]) -> T {
    T::lit(1e-4) * norm(q).max(T::one()) / norm(v).max(T::one())
}

fn symmetric_difference<T: Real>(q: &[T], v: &[T], f: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
    if v.iter().all(|x| x.is_zero()) {
        return vec![T::zero(); f(q).len()];
    }
    let h = fd_step(q, v);
    let plus: Vec<T> = q.iter().zip(v).map(|(&x, &d)| x + h * d).collect();
    let minus: Vec<T> = q.iter().zip(v).map(|(&x, &d)| x - h * d).collect();
    let two_h = h + h;
    f(&plus)
        .into_iter()
        .zip(f(&minus))
        .map(|(a, b)| (a - b) / two_h)
        .collect()
}

/// Dense layer, weights row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let mut acc = b;
            for (&w, &xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    /// `Wᵀ delta`
    fn transpose_apply(&self, delta: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.inputs];
        for (row, &d) in self.weights.chunks_exact(self.inputs).zip(delta) {
            if d.is_zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
        out
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Feed-forward potential `V_θ : R^d → R` with tanh hidden layers and a linear
/// scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialNet<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> PotentialNet<T> {
    /// Hidden weights and biases are uniform in `±1/sqrt(fan_in)`; the output
    /// layer starts at exactly zero so the initial surface is flat.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims)?;
        let mut rng = rng::stream(seed, "potential-init");
        let last = net.layers.len() - 1;
        for layer in &mut net.layers[..last] {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layers: layer_dims
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Single affine layer `V(q) = wᵀq + b`.
    pub fn linear(w: Vec<T>, b: T) -> Self {
        Self {
            layers: vec![Dense {
                inputs: w.len(),
                outputs: 1,
                weights: w,
                bias: vec![b],
            }],
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    /// Checks shape consistency and finiteness of a deserialized network.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ChluError::ShapeInconsistency("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ChluError::ShapeInconsistency(format!(
                    "layer {i}: {}x{} with {} weights and {} biases",
                    l.outputs,
                    l.inputs,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(ChluError::ShapeInconsistency(format!(
                    "layer {i} expects {} inputs, previous layer has {} outputs",
                    l.inputs,
                    self.layers[i - 1].outputs
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(ChluError::ShapeInconsistency(format!("layer {i} has non-finite parameters")));
            }
        }
        let out = self.layers.last().map(|l| l.outputs).unwrap_or(0);
        if out != 1 {
            return Err(ChluError::OutputDimension(out));
        }
        Ok(())
    }

    /// Forward pass keeping every layer's activation (`acts[0]` is the input,
    /// the last entry holds the scalar output).
    fn forward(&self, q: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(q.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Backward sweep from `dV/d(output) = 1`. Calls `visit(layer, delta)` with
    /// the pre-activation adjoint of each layer, last layer first, and returns
    /// the input gradient.
    fn backward(&self, acts: &[Vec<T>], mut visit: impl FnMut(usize, &[T])) -> Vec<T> {
        let mut delta = vec![T::one()];
        for l in (0..self.layers.len()).rev() {
            visit(l, &delta);
            let mut g = self.layers[l].transpose_apply(&delta);
            if l > 0 {
                for (gi, &a) in g.iter_mut().zip(&acts[l]) {
                    *gi *= T::one() - a * a;
                }
            }
            delta = g;
        }
        delta
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
        return Err(ChluError::InvalidLayers(format!("{layer_dims:?}")));
    }
    let out = *layer_dims.last().unwrap();
    if out != 1 {
        return Err(ChluError::OutputDimension(out));
    }
    Ok(())
}

impl<T: Real> Potential<T> for PotentialNet<T> {
    fn dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn value(&self, q: &[T]) -> T {
        self.forward(q).last().unwrap()[0]
    }

    fn grad_input(&self, q: &[T]) -> Vec<T> {
        let acts = self.forward(q);
        self.backward(&acts, |_, _| {})
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn add_scaled_params(&mut self, scale: T, delta: &[T]) {
        let mut it = delta.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w += scale * *it.next().expect("parameter delta too short");
            }
        }
    }

    fn grad_params(&self, q: &[T]) -> Vec<T> {
        let acts = self.forward(q);
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.len();
        }
        let mut grad = vec![T::zero(); off];
        self.backward(&acts, |l, delta| {
            let layer = &self.layers[l];
            let input = &acts[l];
            let base = offsets[l];
            let (gw, gb) = grad[base..base + layer.len()].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                gb[o] = d;
                if d.is_zero() {
                    continue;
                }
                for (g, &x) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g = d * x;
                }
            }
        });
        grad
    }
}

/// Builds a network with the given layer sizes; see [`PotentialNet::init`].
pub fn init_potential<T: Real>(layer_dims: &[usize], seed: u64) -> Result<PotentialNet<T>> {
    PotentialNet::init(layer_dims, seed)
}

fn check_dim<T: Real, P: Potential<T>>(net: &P, v: &[T]) -> Result<()> {
    if v.len() != net.dim() {
        return Err(ChluError::DimensionMismatch { expected: net.dim(), found: v.len() });
    }
    Ok(())
}

pub fn potential_value<T: Real, P: Potential<T>>(net: &P, q: &[T]) -> Result<T> {
    check_dim(net, q)?;
    Ok(net.value(q))
}

pub fn potential_grad_input<T: Real, P: Potential<T>>(net: &P, q: &[T]) -> Result<Vec<T>> {
    check_dim(net, q)?;
    Ok(net.grad_input(q))
}

pub fn potential_grad_params<T: Real, P: Potential<T>>(net: &P, q: &[T]) -> Result<Vec<T>> {
    check_dim(net, q)?;
    Ok(net.grad_params(q))
}

pub fn hessian_vector_product<T: Real, P: Potential<T>>(net: &P, q: &[T], v: &[T]) -> Result<Vec<T>> {
    check_dim(net, q)?;
    check_dim(net, v)?;
    Ok(net.hessian_vector_product(q, v))
}

/// Isotropic quadratic `V(q) = ½·k·‖q‖² + shift` with learnable `(k, shift)`.
///
/// Analytic reference surface for conservation, stability and sampling
/// checks. `k < 0` gives the inverted (unstable) well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic<T> {
    pub dim: usize,
    pub stiffness: T,
    pub shift: T,
}

impl<T: Real> Quadratic<T> {
    pub fn new(dim: usize, stiffness: T) -> Self {
        Self { dim, stiffness, shift: T::zero() }
    }
}

impl<T: Real> Potential<T> for Quadratic<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[T]) -> T {
        T::lit(0.5) * self.stiffness * q.iter().map(|&x| x * x).sum::<T>() + self.shift
    }

    fn grad_input(&self, q: &[T]) -> Vec<T> {
        q.iter().map(|&x| self.stiffness * x).collect()
    }

    fn num_params(&self) -> usize {
        2
    }

    fn params(&self) -> Vec<T> {
        vec![self.stiffness, self.shift]
    }

    fn add_scaled_params(&mut self, scale: T, delta: &[T]) {
        self.stiffness += scale * delta[0];
        self.shift += scale * delta[1];
    }

    fn grad_params(&self, q: &[T]) -> Vec<T> {
        vec![T::lit(0.5) * q.iter().map(|&x| x * x).sum::<T>(), T::one()]
    }

    fn hessian_vector_product(&self, _q: &[T], v: &[T]) -> Vec<T> {
        v.iter().map(|&x| self.stiffness * x).collect()
    }

    fn mixed_grad_params(&self, q: &[T], a: &[T]) -> Vec<T> {
        vec![q.iter().zip(a).map(|(&x, &y)| x * y).sum(), T::zero()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize(net: &mut PotentialNet<f64>, seed: u64) {
        let mut r = rng::stream(seed, "test-randomize");
        for l in &mut net.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = r.gen_range(-1.0..1.0);
            }
        }
    }

    /// Straightforward re-implementation of the forward pass.
    fn reference_value(net: &PotentialNet<f64>, q: &[f64]) -> f64 {
        let mut x = q.to_vec();
        for (i, l) in net.layers.iter().enumerate() {
            let mut y = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for j in 0..l.inputs {
                    s += l.weights[o * l.inputs + j] * x[j];
                }
                y[o] = if i + 1 < net.layers.len() { s.tanh() } else { s };
            }
            x = y;
        }
        x[0]
    }

    #[test]
    fn init_is_deterministic_and_flat() {
        let a = init_potential::<f64>(&[2, 16, 1], 7).unwrap();
        let b = init_potential::<f64>(&[2, 16, 1], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value(&[0.3, -2.0]), 0.0);
        assert_eq!(a.grad_input(&[0.3, -2.0]), vec![0.0, 0.0]);
        assert!(a.layers[0].weights.iter().all(|&w| w.abs() <= 1.0 / 2f64.sqrt()));
    }

    #[test]
    fn init_rejects_non_scalar_output() {
        let err = init_potential::<f64>(&[2, 16, 16], 1).unwrap_err();
        assert!(err.to_string().contains("output dimension must be 1"));
        assert!(init_potential::<f64>(&[2], 1).is_err());
    }

    #[test]
    fn linear_net_values_and_gradients() {
        let net = PotentialNet::linear(vec![1.0, 2.0], 0.5);
        assert_eq!(net.value(&[1.0, 1.0]), 3.5);
        assert_eq!(net.grad_input(&[-4.0, 9.0]), vec![1.0, 2.0]);
        assert_eq!(net.grad_params(&[1.0, 1.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(net.hessian_vector_product(&[0.2, 0.1], &[1.0, -3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_net_is_identically_zero() {
        let net = PotentialNet::<f64>::zeros(&[3, 5, 4, 1]).unwrap();
        assert_eq!(net.value(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(net.grad_input(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut net = PotentialNet::zeros(&[3, 7, 5, 1]).unwrap();
        randomize(&mut net, 3);
        for q in [[0.1, -0.4, 2.0], [3.0, 1.0, -1.0], [0.0, 0.0, 0.0]] {
            let a = net.value(&q);
            let b = reference_value(&net, &q);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut net = PotentialNet::zeros(&[2, 8, 8, 1]).unwrap();
        randomize(&mut net, 11);
        let q = [0.3, -0.7];
        let g = net.grad_input(&q);
        let h = 1e-5;
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (reference_value(&net, &qp) - reference_value(&net, &qm)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let mut net = PotentialNet::zeros(&[2, 6, 4, 1]).unwrap();
        randomize(&mut net, 5);
        let q = [0.9, 0.2];
        let g = net.grad_params(&q);
        let theta = net.params();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut e = vec![0.0; theta.len()];
            e[i] = h;
            let mut plus = net.clone();
            plus.add_scaled_params(1.0, &e);
            let mut minus = net.clone();
            minus.add_scaled_params(-1.0, &e);
            let fd = (plus.value(&q) - minus.value(&q)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "slot {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn quadratic_hvp_is_identity() {
        let v = Quadratic::new(3, 1.0f64);
        assert_eq!(v.hessian_vector_product(&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0]), vec![0.5, -1.0, 2.0]);
        // generic difference rule agrees on a quadratic
        let fd = symmetric_difference(&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0], |x| v.grad_input(x));
        for (a, b) in fd.iter().zip([0.5, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_gradient_matches_directional_parameter_difference() {
        let mut net = PotentialNet::zeros(&[2, 5, 1]).unwrap();
        randomize(&mut net, 9);
        let q = [0.4, -0.3];
        let a = [0.7, 1.1];
        let mixed = net.mixed_grad_params(&q, &a);
        // d/dθ (aᵀ∇V) by differencing aᵀ∇V over each parameter
        let theta = net.params();
        let h = 1e-6;
        for i in (0..theta.len()).step_by(3) {
            let mut e = vec![0.0; theta.len()];
            e[i] = h;
            let mut plus = net.clone();
            plus.add_scaled_params(1.0, &e);
            let mut minus = net.clone();
            minus.add_scaled_params(-1.0, &e);
            let f = |n: &PotentialNet<f64>| crate::scalar::dot(&n.grad_input(&q), &a);
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - mixed[i]).abs() < 1e-6 * fd.abs().max(1.0), "slot {i}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = init_potential::<f64>(&[2, 4, 1], 0).unwrap();
        assert!(matches!(
            potential_value(&net, &[1.0]),
            Err(ChluError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn f32_network_evaluates() {
        let net = init_potential::<f32>(&[2, 4, 1], 0).unwrap();
        assert_eq!(net.value(&[1.0, 1.0]), 0.0f32);
    }
}
