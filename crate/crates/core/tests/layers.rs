mod common;

use std::rc::Rc;

use cmp_core::nn::layers::{self, Aggregation, SoftPsd, TauMode};
use cmp_core::nn::{initial_beta_raw, tau_value};
use cmp_core::tensor::EdgeIndex;
use cmp_core::{Tape, Tensor, Var};
use common::{edge_index, normal, random_edges, rng};
use proptest::prelude::*;

fn psd(seed: u64, d: usize) -> Tensor {
    let a = normal(&mut rng(seed), &[d, d]);
    a.matmul(&a.transpose()).unwrap()
}

struct Fixture {
    h: Tensor,
    w_self: Tensor,
    w_pos: Tensor,
    w_neg: Tensor,
    att_pos: Tensor,
    att_neg: Tensor,
    pos: Rc<EdgeIndex>,
    loops: Rc<EdgeIndex>,
    neg: Rc<EdgeIndex>,
}

fn fixture(seed: u64) -> Fixture {
    let r = &mut rng(seed);
    let n = 7;
    let pos = edge_index(n, &random_edges(r, n, 0.4));
    let loops = Rc::new(pos.with_self_loops());
    Fixture {
        h: normal(r, &[n, 5]),
        w_self: normal(r, &[5, 5]),
        w_pos: normal(r, &[5, 5]),
        w_neg: normal(r, &[5, 5]),
        att_pos: normal(r, &[5, 2]),
        att_neg: normal(r, &[5, 2]),
        pos,
        loops,
        neg: edge_index(n, &random_edges(r, n, 0.4)),
    }
}

fn beta(t: &mut Tape) -> Var {
    t.param(Tensor::scalar(initial_beta_raw()))
}

#[test]
fn tau_at_zero_similarity_is_one_half() {
    assert_eq!(tau_value(0.0, 1.0, 1.0), 0.5);
    assert_eq!(tau_value(0.0, 7.3, -1.0), 0.5);
    let mut t = Tape::new();
    let c = t.constant(Tensor::vector(vec![0.0, 0.0]));
    let b = beta(&mut t);
    let tau = layers::tau(&mut t, c, b, -1.0).unwrap();
    assert_eq!(t.value(tau).data(), &[0.5, 0.5]);
}

#[test]
fn tau_orientation_follows_edge_sign() {
    // Similar nodes: relaxed on positive edges, tightened on negative edges.
    assert!(tau_value(0.9, 1.0, 1.0) > 0.5);
    assert!(tau_value(0.9, 1.0, -1.0) < 0.5);
    assert!(tau_value(0.9, 3.0, 1.0) > tau_value(0.9, 1.0, 1.0));
}

proptest! {
    #[test]
    fn tau_strictly_inside_unit_interval(c in -1.0f64..=1.0, beta in 0.0f64..30.0, positive in any::<bool>()) {
        let t = tau_value(c, beta, if positive { 1.0 } else { -1.0 });
        prop_assert!(t > 0.0 && t < 1.0);
    }
}

#[test]
fn cmp_with_tau_one_equals_unconstrained_bit_for_bit() {
    for seed in 0..5 {
        let f = fixture(seed);
        for agg in [Aggregation::Mean, Aggregation::Sum] {
            let mut t = Tape::new();
            let h = t.param(f.h.clone());
            let (ws, wp, wn) = (t.param(f.w_self.clone()), t.param(f.w_pos.clone()), t.param(f.w_neg.clone()));
            let (bp, bn) = (beta(&mut t), beta(&mut t));
            let cmp = layers::sage_cmp(&mut t, h, &f.pos, &f.neg, ws, SoftPsd::new(wp, bp, 1.0), SoftPsd::new(wn, bn, -1.0), agg, TauMode::Fixed(1.0)).unwrap();
            let unc = layers::sage_unconstrained(&mut t, h, &f.pos, &f.neg, ws, wp, wn, agg).unwrap();
            assert_eq!(t.value(cmp).data(), t.value(unc).data(), "sage seed {seed}");
        }
        let mut t = Tape::new();
        let h = t.param(f.h.clone());
        let (wp, wn) = (t.param(f.w_pos.clone()), t.param(f.w_neg.clone()));
        let (ap, an) = (t.param(f.att_pos.clone()), t.param(f.att_neg.clone()));
        let (bp, bn) = (beta(&mut t), beta(&mut t));
        let cmp = layers::gat_cmp(&mut t, h, &f.loops, &f.neg, SoftPsd::new(wp, bp, 1.0), SoftPsd::new(wn, bn, -1.0), ap, an, TauMode::Fixed(1.0)).unwrap();
        let unc = layers::gat_unconstrained(&mut t, h, &f.loops, &f.neg, wp, wn, ap, an).unwrap();
        assert_eq!(t.value(cmp).data(), t.value(unc).data(), "gat seed {seed}");
    }
}

#[test]
fn cmp_without_negative_edges_reduces_to_standard() {
    let empty = Rc::new(EdgeIndex::new(7, &[]).unwrap());
    for seed in 0..5 {
        let f = fixture(seed);
        // A PSD positive weight has no negative eigenvalues, so τ has no effect.
        let w_pos = psd(seed + 50, 5);
        let mut t = Tape::new();
        let h = t.param(f.h.clone());
        let ws = t.param(f.w_self.clone());
        let wp = t.param(w_pos.clone());
        let wn = t.param(Tensor::zeros(&[5, 5]));
        let (bp, bn) = (beta(&mut t), beta(&mut t));
        let cmp = layers::sage_cmp(&mut t, h, &f.pos, &empty, ws, SoftPsd::new(wp, bp, 1.0), SoftPsd::new(wn, bn, -1.0), Aggregation::Mean, TauMode::Adaptive).unwrap();
        let std = layers::sage_standard(&mut t, h, &f.pos, ws, wp, Aggregation::Mean).unwrap();
        assert!(t.value(cmp).max_abs_diff(t.value(std)) < 1e-12, "sage seed {seed}");

        let ap = t.param(f.att_pos.clone());
        let an = t.param(f.att_neg.clone());
        let cmp = layers::gat_cmp(&mut t, h, &f.loops, &empty, SoftPsd::new(wp, bp, 1.0), SoftPsd::new(wn, bn, -1.0), ap, an, TauMode::Adaptive).unwrap();
        let std = layers::gat_standard(&mut t, h, &f.loops, wp, ap).unwrap();
        assert!(t.value(cmp).max_abs_diff(t.value(std)) < 1e-12, "gat seed {seed}");
    }
}

#[test]
fn strict_constraint_keeps_messages_in_the_neighbor_halfspace() {
    let r = &mut rng(77);
    for trial in 0..50 {
        let h = normal(r, &[2, 6]);
        let w = normal(r, &[6, 6]);
        let hj = h.row(1).to_vec();
        for (sign, pos_pairs, neg_pairs) in [(1.0, vec![(1, 0)], vec![]), (-1.0, vec![], vec![(1, 0)])] {
            let pos = edge_index(2, &pos_pairs);
            let neg = edge_index(2, &neg_pairs);
            let mut t = Tape::new();
            let hv = t.param(h.clone());
            let zero = t.param(Tensor::zeros(&[6, 6]));
            let wv = t.param(w.clone());
            let b = beta(&mut t);
            let out = layers::sage_cmp(&mut t, hv, &pos, &neg, zero, SoftPsd::new(wv, b, 1.0), SoftPsd::new(wv, b, -1.0), Aggregation::Mean, TauMode::Fixed(0.0)).unwrap();
            let moved: f64 = t.value(out).row(0).iter().zip(&hj).map(|(a, b)| a * b).sum();
            assert!(sign * moved >= -1e-10, "trial {trial} sign {sign}: {moved}");
        }
    }
}

#[test]
fn nodes_without_neighbors_get_zero_messages() {
    let f = fixture(3);
    let isolated = edge_index(7, &[(0, 1), (1, 0)]);
    let mut t = Tape::new();
    let h = t.param(f.h.clone());
    let w = t.param(f.w_pos.clone());
    let zero = t.param(Tensor::zeros(&[5, 5]));
    let out = layers::sage_standard(&mut t, h, &isolated, zero, w, Aggregation::Mean).unwrap();
    for i in 2..7 {
        assert!(t.value(out).row(i).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn contrastive_loss_example() {
    // h0·h1 = 0 and h0·h2 = 0 → both terms are softplus(0) = ln 2.
    let h = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
    let pos = edge_index(3, &[(0, 1), (1, 0)]);
    let neg = edge_index(3, &[(0, 2), (2, 0)]);
    let mut t = Tape::new();
    let hv = t.param(h);
    let l = layers::contrastive_loss(&mut t, hv, &pos, &neg).unwrap();
    assert!((t.value(l).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    let empty = edge_index(3, &[]);
    assert!(layers::contrastive_loss(&mut t, hv, &pos, &empty).is_err());
}

#[test]
fn attention_weights_sum_to_one_per_node() {
    let f = fixture(8);
    let mut t = Tape::new();
    let scores = t.param(normal(&mut rng(1), &[f.loops.len()]));
    let a = t.segment_softmax(scores, f.loops.dst(), 7).unwrap();
    for i in 0..7 {
        let s: f64 = f.loops.incoming(i).map(|e| t.value(a).data()[e]).sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let f = fixture(4);
    let run = || {
        let mut t = Tape::new();
        let h = t.param(f.h.clone());
        let (wp, wn) = (t.param(f.w_pos.clone()), t.param(f.w_neg.clone()));
        let (ap, an) = (t.param(f.att_pos.clone()), t.param(f.att_neg.clone()));
        let (bp, bn) = (beta(&mut t), beta(&mut t));
        let out = layers::gat_cmp(&mut t, h, &f.loops, &f.neg, SoftPsd::new(wp, bp, 1.0), SoftPsd::new(wn, bn, -1.0), ap, an, TauMode::Adaptive).unwrap();
        t.value(out).clone()
    };
    assert_eq!(run().data(), run().data());
}
