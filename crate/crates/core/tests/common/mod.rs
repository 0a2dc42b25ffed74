//! Shared fixtures: finite-difference gradient checks and random inputs.
#![allow(dead_code)]

pub mod cases;
pub mod oracle;
pub mod sbm;

use std::rc::Rc;

use cmp_core::tensor::{symmetric_eig, EdgeIndex};
use cmp_core::{Result, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Normal entries pushed at least `gap` away from zero (keeps kinks out of FD stencils).
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    normal(rng, shape).map(|x| if x.abs() < gap { x.signum() * gap + x } else { x })
}

/// Random orthogonal matrix (eigenvectors of a random symmetric matrix).
pub fn orthogonal(rng: &mut impl Rng, d: usize) -> Tensor {
    let a = normal(rng, &[d, d]);
    let s = Tensor::matrix(d, d, (0..d * d).map(|k| 0.5 * (a.data()[k] + a.data()[(k % d) * d + k / d])).collect()).unwrap();
    symmetric_eig(&s).unwrap().vectors
}

/// Raw (non-symmetric) matrix whose symmetric part has the given spectrum.
pub fn raw_with_spectrum(rng: &mut impl Rng, values: &[f64]) -> Tensor {
    let d = values.len();
    let q = orthogonal(rng, d);
    let sym = q.matmul(&Tensor::diag(values)).unwrap().matmul(&q.transpose()).unwrap();
    let a = normal(rng, &[d, d]);
    let data = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            sym.data()[k] + 0.3 * (a.data()[i * d + j] - a.data()[j * d + i])
        })
        .collect();
    Tensor::matrix(d, d, data).unwrap()
}

/// Spectrum with pairwise gaps ≥ `gap`, mixed signs, no eigenvalue within `gap/2` of zero.
pub fn spaced_spectrum(rng: &mut impl Rng, d: usize, gap: f64) -> Vec<f64> {
    let mut slots: Vec<i64> = (-(d as i64)..=d as i64).filter(|&k| k != 0).collect();
    slots.shuffle(rng);
    let mut v: Vec<f64> = slots[..d].iter().map(|&k| k as f64 * gap * 2.0 + rng.random_range(-0.2..0.2) * gap).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Random directed edge set on `n` nodes, stored in both directions, no self-loops.
pub fn random_edges(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                out.push((i, j));
                out.push((j, i));
            }
        }
    }
    out
}

pub fn edge_index(n: usize, pairs: &[(usize, usize)]) -> Rc<EdgeIndex> {
    Rc::new(EdgeIndex::new(n, pairs).unwrap())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&diff) / l2(a).max(l2(b)).max(floor)
}

pub struct GradCheck {
    /// Worst relative error over all inputs.
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
}

/// Compares reverse-mode gradients of `⟨f(inputs), R⟩` (R a fixed random
/// projection) with central differences of step [`FD_STEP`].
pub fn grad_check<F>(inputs: &[Tensor], seed: u64, f: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], proj: Option<&Tensor>| -> (f64, Option<Vec<Tensor>>, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        let shape = tape.value(out).shape().to_vec();
        let r = match proj {
            Some(r) => r.clone(),
            None => normal(&mut rng(seed ^ 0x5eed), &shape),
        };
        let rv = tape.constant(r.clone());
        let prod = tape.mul(out, rv).expect("projection");
        let loss = tape.sum(prod).expect("sum");
        let value = tape.value(loss).item();
        let grads = proj.is_none().then(|| {
            let g = tape.backward(loss).expect("backward");
            vars.iter().map(|&v| g.wrt(v)).collect()
        });
        (value, grads, r)
    };
    let (_, analytic, proj) = eval(inputs, None);
    let analytic = analytic.unwrap();
    let mut per_input = Vec::new();
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.numel()];
        for (idx, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= FD_STEP;
            *slot = (eval(&plus, Some(&proj)).0 - eval(&minus, Some(&proj)).0) / (2.0 * FD_STEP);
        }
        per_input.push(rel_err(analytic[k].data(), &numeric, 1e-6));
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    GradCheck { max_rel_err, per_input }
}

/// Central-difference check of the full model loss on `coords` randomly
/// chosen parameter entries; returns the norm-wise relative error.
pub fn model_grad_check(model: &cmp_core::nn::Model, graph: &cmp_core::graph::Graph, rows: &[usize], coords: usize, seed: u64) -> f64 {
    use cmp_core::nn::GraphIndex;
    let index = GraphIndex::new(graph).unwrap();
    let loss_of = |m: &cmp_core::nn::Model| -> (f64, Option<Vec<Tensor>>) {
        let mut tape = Tape::new();
        let fwd = m.forward(&mut tape, &graph.features, &index).unwrap();
        let loss = m.loss(&mut tape, &fwd, &graph.labels, rows, &index).unwrap();
        (tape.value(loss).item(), None)
    };
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &graph.features, &index).unwrap();
    let loss = model.loss(&mut tape, &fwd, &graph.labels, rows, &index).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = fwd.params.iter().map(|&v| grads.wrt(v)).collect();
    let r = &mut rng(seed);
    let mut a = Vec::new();
    let mut num = Vec::new();
    for _ in 0..coords {
        let p = r.random_range(0..model.params.len());
        let k = r.random_range(0..model.params.tensors[p].numel());
        let mut plus = model.clone();
        plus.params.tensors[p].data_mut()[k] += FD_STEP;
        let mut minus = model.clone();
        minus.params.tensors[p].data_mut()[k] -= FD_STEP;
        num.push((loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * FD_STEP));
        a.push(analytic[p].data()[k]);
    }
    rel_err(&a, &num, 1e-6)
}

/// Relative path → bytes for every file under `root`.
pub fn snapshot(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
