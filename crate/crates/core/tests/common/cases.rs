//! Random fixtures for every differentiable op and layer.

use std::rc::Rc;

use cmp_core::nn::layers::{self, Aggregation, SoftPsd, TauMode};
use cmp_core::tensor::{EdgeIndex, EdgeWeighting};
use cmp_core::{Result, Tape, Tensor, Var};
use rand::Rng;

use super::*;

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name, inputs, build: Box::new(build) }
}

/// Small graph with every node receiving at least one edge.
fn small_graph(rng: &mut impl Rng, n: usize) -> Rc<EdgeIndex> {
    let mut pairs = random_edges(rng, n, 0.45);
    for i in 0..n {
        if !pairs.iter().any(|&(_, d)| d == i) {
            let j = (i + 1) % n;
            pairs.push((j, i));
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    edge_index(n, &pairs)
}

/// One fixture per primitive op.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let n = 6;
    let d = 4;
    let g = small_graph(r, n);
    let e = g.len();
    let mut cases = vec![
        case("matmul", vec![normal(r, &[3, 4]), normal(r, &[4, 2])], |t, v| t.matmul(v[0], v[1])),
        case("matmul_nt", vec![normal(r, &[3, 4]), normal(r, &[5, 4])], |t, v| t.matmul_nt(v[0], v[1])),
        case("symmetrize", vec![normal(r, &[4, 4])], |t, v| t.symmetrize(v[0])),
        case("add", vec![normal(r, &[3, 2]), normal(r, &[3, 2])], |t, v| t.add(v[0], v[1])),
        case("sub", vec![normal(r, &[3, 2]), normal(r, &[3, 2])], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![normal(r, &[3, 2]), normal(r, &[3, 2])], |t, v| t.mul(v[0], v[1])),
        case("mul_scalar_broadcast", vec![normal(r, &[3, 2]), normal(r, &[])], |t, v| t.mul(v[0], v[1])),
        case("add_scalar_broadcast", vec![normal(r, &[]), normal(r, &[2, 3])], |t, v| t.add(v[0], v[1])),
        case("add_row", vec![normal(r, &[3, 4]), normal(r, &[4])], |t, v| t.add_row(v[0], v[1])),
        case("scale", vec![normal(r, &[5])], |t, v| t.scale(v[0], -1.7)),
        case("add_scalar", vec![normal(r, &[5])], |t, v| t.add_scalar(v[0], 0.3)),
        case("leaky_relu", vec![away_from_zero(r, &[3, 4], 1e-3)], |t, v| t.leaky_relu(v[0], 0.2)),
        case("sigmoid", vec![normal(r, &[3, 4]).map(|x| 3.0 * x)], |t, v| t.sigmoid(v[0])),
        case("softplus", vec![normal(r, &[3, 4]).map(|x| 3.0 * x)], |t, v| t.softplus(v[0])),
        case("sum", vec![normal(r, &[3, 4])], |t, v| t.sum(v[0])),
        case("mean", vec![normal(r, &[3, 4])], |t, v| t.mean(v[0])),
        case("layer_norm", vec![normal(r, &[n, d]), normal(r, &[d]), normal(r, &[d])], |t, v| t.layer_norm(v[0], v[1], v[2])),
        case("cosine_similarity", vec![normal(r, &[d]), normal(r, &[d])], |t, v| t.cosine_similarity(v[0], v[1])),
    ];
    let g1 = Rc::clone(&g);
    cases.push(case("edge_cosine", vec![normal(r, &[n, d])], move |t, v| t.edge_cosine(v[0], &g1)));
    let g1 = Rc::clone(&g);
    cases.push(case("edge_dot", vec![normal(r, &[n, d])], move |t, v| t.edge_dot(v[0], &g1)));
    let seg: Vec<usize> = g.dst().to_vec();
    let s1 = seg.clone();
    cases.push(case("segment_mean", vec![normal(r, &[e, 3])], move |t, v| t.segment_mean(v[0], &s1, n)));
    let s1 = seg.clone();
    cases.push(case("segment_softmax", vec![normal(r, &[e])], move |t, v| t.segment_softmax(v[0], &s1, n)));
    let spec = spaced_spectrum(r, d, 0.1);
    cases.push(case("neg_eig_part", vec![raw_with_spectrum(r, &spec)], |t, v| {
        let s = t.symmetrize(v[0])?;
        Ok(t.neg_eig_part(s)?.0)
    }));
    let spec = spaced_spectrum(r, 6, 0.1);
    cases.push(case(
        "eig_rescaled_apply",
        vec![raw_with_spectrum(r, &spec), normal(r, &[6]), uniform(r, &[], 0.05, 0.95)],
        |t, v| t.eig_rescaled_apply(v[0], v[1], v[2]),
    ));
    for (name, weighting) in [("edge_aggregate_mean", 0), ("edge_aggregate_sum", 1), ("edge_aggregate_attention", 2)] {
        let g1 = Rc::clone(&g);
        let inputs = vec![normal(r, &[n, d]), normal(r, &[n, d]), uniform(r, &[e], 0.05, 0.95), uniform(r, &[e], 0.0, 1.0)];
        cases.push(case(name, inputs, move |t, v| {
            let w = match weighting {
                0 => EdgeWeighting::Mean,
                1 => EdgeWeighting::Sum,
                _ => EdgeWeighting::Attention(v[3]),
            };
            let plain = t.edge_aggregate(&g1, v[0], None, w)?;
            let corrected = t.edge_aggregate(&g1, v[0], Some((v[1], v[2])), w)?;
            t.add(plain, corrected)
        }));
    }
    let g1 = Rc::clone(&g);
    cases.push(case(
        "edge_scores",
        vec![normal(r, &[n, 2]), normal(r, &[n, 2]), uniform(r, &[e], 0.05, 0.95)],
        move |t, v| {
            let a = t.edge_scores(&g1, v[0], None)?;
            let b = t.edge_scores(&g1, v[0], Some((v[1], v[2])))?;
            t.add(a, b)
        },
    ));
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    cases.push(case("cross_entropy", vec![normal(r, &[n, 3])], move |t, v| t.cross_entropy(v[0], &labels, &[0, 2, 3, 5])));
    let targets: Vec<f64> = (0..8).map(|_| r.random::<f64>()).collect();
    cases.push(case("binary_ce", vec![normal(r, &[8])], move |t, v| t.binary_ce(v[0], &targets, &[0, 1, 2, 4, 7])));
    cases
}

/// One fixture per message-passing layer, the τ map and the contrastive loss.
pub fn layer_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let n = 6;
    let d = 4;
    let pos = small_graph(r, n);
    let loops = Rc::new(pos.with_self_loops());
    let neg = small_graph(r, n);
    let raw = |r: &mut _| {
        let spec = spaced_spectrum(r, d, 0.1);
        raw_with_spectrum(r, &spec)
    };
    let beta = |r: &mut _| uniform(r, &[], -0.5, 1.0);
    let mut cases = Vec::new();
    cases.push(case("tau", vec![uniform(r, &[5], -1.0, 1.0), beta(r)], |t, v| layers::tau(t, v[0], v[1], -1.0)));
    let inputs = vec![raw(r), beta(r), normal(r, &[d]), normal(r, &[d])];
    cases.push(case("soft_psd_message", inputs, |t, v| {
        layers::soft_psd_message(t, SoftPsd::new(v[0], v[1], 1.0), v[2], v[3], TauMode::Adaptive)
    }));
    let (p1, n1) = (Rc::clone(&pos), Rc::clone(&neg));
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), raw(r), beta(r), raw(r), beta(r)];
    cases.push(case("sage_cmp", inputs, move |t, v| {
        layers::sage_cmp(t, v[0], &p1, &n1, v[1], SoftPsd::new(v[2], v[3], 1.0), SoftPsd::new(v[4], v[5], -1.0), Aggregation::Mean, TauMode::Adaptive)
    }));
    let (p1, n1) = (Rc::clone(&pos), Rc::clone(&neg));
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), raw(r), beta(r), raw(r), beta(r)];
    cases.push(case("sage_cmp_sum", inputs, move |t, v| {
        layers::sage_cmp(t, v[0], &p1, &n1, v[1], SoftPsd::new(v[2], v[3], 1.0), SoftPsd::new(v[4], v[5], -1.0), Aggregation::Sum, TauMode::Adaptive)
    }));
    let (l1, n1) = (Rc::clone(&loops), Rc::clone(&neg));
    let inputs = vec![normal(r, &[n, d]), raw(r), beta(r), raw(r), beta(r), normal(r, &[d, 2]), normal(r, &[d, 2])];
    cases.push(case("gat_cmp", inputs, move |t, v| {
        layers::gat_cmp(t, v[0], &l1, &n1, SoftPsd::new(v[1], v[2], 1.0), SoftPsd::new(v[3], v[4], -1.0), v[5], v[6], TauMode::Adaptive)
    }));
    let (p1, n1) = (Rc::clone(&pos), Rc::clone(&neg));
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), normal(r, &[d, d]), normal(r, &[d, d])];
    cases.push(case("sage_unconstrained", inputs, move |t, v| {
        layers::sage_unconstrained(t, v[0], &p1, &n1, v[1], v[2], v[3], Aggregation::Mean)
    }));
    let (l1, n1) = (Rc::clone(&loops), Rc::clone(&neg));
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), normal(r, &[d, d]), normal(r, &[d, 2]), normal(r, &[d, 2])];
    cases.push(case("gat_unconstrained", inputs, move |t, v| {
        layers::gat_unconstrained(t, v[0], &l1, &n1, v[1], v[2], v[3], v[4])
    }));
    let p1 = Rc::clone(&pos);
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), normal(r, &[d, d])];
    cases.push(case("sage_standard", inputs, move |t, v| layers::sage_standard(t, v[0], &p1, v[1], v[2], Aggregation::Mean)));
    let l1 = Rc::clone(&loops);
    let inputs = vec![normal(r, &[n, d]), normal(r, &[d, d]), normal(r, &[d, 2])];
    cases.push(case("gat_standard", inputs, move |t, v| layers::gat_standard(t, v[0], &l1, v[1], v[2])));
    let (p1, n1) = (Rc::clone(&pos), Rc::clone(&neg));
    cases.push(case("contrastive_loss", vec![normal(r, &[n, d])], move |t, v| layers::contrastive_loss(t, v[0], &p1, &n1)));
    cases
}
