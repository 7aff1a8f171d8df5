//! Reference implementations used as test oracles. They read model fields
//! directly and share no numerical code with the library.

#![allow(dead_code)]

use chlu::{Model, PhaseState, Potential, State};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gauss_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(r)).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-12)
}

/// Tanh MLP forward pass: returns per-layer pre-activations and outputs.
fn forward(m: &Model, q: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let layers = &m.potential.layers;
    let mut acts = vec![q.to_vec()];
    let mut x = q.to_vec();
    for (i, l) in layers.iter().enumerate() {
        let mut y = Vec::with_capacity(l.outputs);
        for o in 0..l.outputs {
            let mut s = l.bias[o];
            for j in 0..l.inputs {
                s += l.weights[o * l.inputs + j] * x[j];
            }
            y.push(s);
        }
        if i + 1 < layers.len() {
            y = y.iter().map(|v| v.tanh()).collect();
        }
        acts.push(y.clone());
        x = y;
    }
    (acts, x[0])
}

pub fn potential(m: &Model, q: &[f64]) -> f64 {
    forward(m, q).1
}

/// Input gradient of the potential by hand-written backpropagation.
pub fn potential_grad(m: &Model, q: &[f64]) -> Vec<f64> {
    let (acts, _) = forward(m, q);
    let layers = &m.potential.layers;
    let mut delta = vec![1.0];
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        let mut back = vec![0.0; l.inputs];
        for o in 0..l.outputs {
            for j in 0..l.inputs {
                back[j] += l.weights[o * l.inputs + j] * delta[o];
            }
        }
        if i > 0 {
            // acts[i] is the tanh output feeding layer i
            back = back.iter().zip(&acts[i]).map(|(b, a)| b * (1.0 - a * a)).collect();
        }
        delta = back;
    }
    delta
}

pub fn kinetic(m: &Model, p: &[f64]) -> f64 {
    let g = &m.governor;
    let quad: f64 = p.iter().zip(&g.log_mass).map(|(x, l)| x * x / l.exp()).sum();
    (g.c * g.c * quad + g.m0 * g.m0 * g.c.powi(4)).sqrt()
}

pub fn velocity(m: &Model, p: &[f64]) -> Vec<f64> {
    let g = &m.governor;
    let t = kinetic(m, p);
    p.iter().zip(&g.log_mass).map(|(x, l)| g.c * g.c * x / l.exp() / t).collect()
}

pub fn mass_norm(log_mass: &[f64], v: &[f64]) -> f64 {
    v.iter().zip(log_mass).map(|(x, l)| l.exp() * x * x).sum::<f64>().sqrt()
}

pub fn energy(m: &Model, z: &State) -> f64 {
    kinetic(m, &z.p) + potential(m, &z.q) + m.alpha * z.q.iter().map(|x| x * x).sum::<f64>()
}

/// Dissipative velocity Verlet step written out from its definition.
pub fn verlet(m: &Model, z: &State, eps: f64, gamma: f64) -> State {
    let force = |q: &[f64]| -> Vec<f64> {
        potential_grad(m, q).iter().zip(q).map(|(g, x)| g + 2.0 * m.alpha * x).collect()
    };
    let g0 = force(&z.q);
    let ph: Vec<f64> = z.p.iter().zip(&g0).map(|(p, g)| p - 0.5 * eps * g).collect();
    let v = velocity(m, &ph);
    let q1: Vec<f64> = z.q.iter().zip(&v).map(|(q, v)| q + eps * v).collect();
    let g1 = force(&q1);
    let p1: Vec<f64> = ph.iter().zip(&g1).map(|(p, g)| (1.0 - gamma) * (p - 0.5 * eps * g)).collect();
    PhaseState { q: q1, p: p1 }
}

pub fn rollout(m: &Model, z0: &State, eps: f64, steps: usize) -> Vec<State> {
    let mut out = vec![z0.clone()];
    for _ in 0..steps {
        let next = verlet(m, out.last().unwrap(), eps, 0.0);
        out.push(next);
    }
    out
}

pub fn mse(a: &[State], b: &[State]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.q.iter().chain(&x.p).zip(y.q.iter().chain(&y.p)) {
            s += (u - v) * (u - v);
            n += 1;
        }
    }
    s / n as f64
}

/// Central differences of `f` over every parameter (potential first, then
/// log-mass), applied through the model's own update path.
pub fn param_fd(m: &Model, h: f64, f: impl Fn(&Model) -> f64) -> Vec<f64> {
    let np = m.potential.num_params();
    (0..np + m.dim())
        .map(|i| {
            let mut e = m.zero_grad();
            if i < np {
                e.potential[i] = h;
            } else {
                e.log_mass[i - np] = h;
            }
            let mut a = m.clone();
            a.apply_update(1.0, &e);
            let mut b = m.clone();
            b.apply_update(-1.0, &e);
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

pub fn input_fd(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let s = h * x[i].abs().max(1.0);
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += s;
            b[i] -= s;
            (f(&a) - f(&b)) / (2.0 * s)
        })
        .collect()
}

/// Random model with perturbed (non-flat) weights and a random diagonal mass.
pub fn random_model(r: &mut ChaCha8Rng, dims: &[usize], c: f64) -> Model {
    let mut net = chlu::PotentialNet::init(dims, r.gen()).unwrap();
    let theta = gauss_vec(r, net.num_params());
    net.add_scaled_params(0.5, &theta);
    let mut gov = chlu::KineticGovernor::new(dims[0], c, r.gen_range(0.5..2.0)).unwrap();
    gov.log_mass = (0..dims[0]).map(|_| r.gen_range(-0.5..0.5)).collect();
    chlu::ChluModel::new(gov, net, r.gen_range(0.0..0.2)).unwrap()
}

pub fn random_state(r: &mut ChaCha8Rng, d: usize) -> State {
    PhaseState { q: gauss_vec(r, d), p: gauss_vec(r, d) }
}
