//! Brute-force Bayes oracle for the information-gain formulas.
//!
//! A node's community is uniform over `C`; one labeled node sits in community 0.
//! Observing an edge (or a non-edge) to it yields the posterior `∝ likelihood(class)`,
//! and the gain is `ln C − H(post)`. Evaluated in 128-bit arithmetic: near
//! `s = 1/C` the gain is tiny and a double-precision `ln C − H` would lose every
//! significant digit.

use astro_float::{BigFloat, Consts, RoundingMode};
use cmp_core::theory::{InfoGainResult, TheoryParams};
use rand::Rng;

pub const TOL: f64 = 1e-12;

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Oracle {
    pub dh_pos: f64,
    pub dh_neg: f64,
    pub h_plus: f64,
    pub h_minus: f64,
}

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().unwrap()
}

/// Returns `(posterior mass on class 0, ln C − H(posterior))`.
fn posterior_gain(likelihood: &[BigFloat], cc: &mut Consts) -> (BigFloat, BigFloat) {
    let z = likelihood.iter().fold(big(0.0), |acc, l| acc.add(l, PREC, RM));
    let c = big(likelihood.len() as f64);
    let mut gain = c.ln(PREC, RM, cc);
    for l in likelihood {
        let p = l.div(&z, PREC, RM);
        if !p.is_zero() {
            gain = gain.add(&p.mul(&p.ln(PREC, RM, cc), PREC, RM), PREC, RM);
        }
    }
    (likelihood[0].div(&z, PREC, RM), gain)
}

pub fn oracle(s: f64, d: f64, c: usize) -> Oracle {
    let cc = &mut Consts::new().unwrap();
    let (s, d, cf) = (big(s), big(d), big(c as f64));
    let one = big(1.0);
    let p_in = s.mul(&cf, PREC, RM).mul(&d, PREC, RM);
    let p_out = one.sub(&s, PREC, RM).mul(&cf, PREC, RM).mul(&d, PREC, RM).div(&cf.sub(&one, PREC, RM), PREC, RM);
    let edge: Vec<BigFloat> = (0..c).map(|k| if k == 0 { p_in.clone() } else { p_out.clone() }).collect();
    let non_edge: Vec<BigFloat> = edge.iter().map(|p| one.sub(p, PREC, RM)).collect();
    let (hp, gp) = posterior_gain(&edge, cc);
    let (hn, gn) = posterior_gain(&non_edge, cc);
    Oracle { dh_pos: to_f64(&gp), dh_neg: to_f64(&gn), h_plus: to_f64(&hp), h_minus: to_f64(&hn) }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

pub fn random_valid(r: &mut impl Rng) -> TheoryParams {
    loop {
        let c = r.random_range(2..=20);
        let p = TheoryParams::new(r.random_range(10..5000), c, r.random::<f64>(), r.random::<f64>(), r.random_range(1e-4..0.999), r.random_range(0.5..50.0));
        if p.validate().is_ok() {
            return p;
        }
    }
}

/// Describes the first quantity where `g` disagrees with the oracle, if any.
pub fn mismatch(p: &TheoryParams, g: &InfoGainResult) -> Option<String> {
    let o = oracle(p.s, p.d, p.c);
    let nr = p.n as f64 * p.r;
    let f_pos = 1.0 / (1.0 + p.alpha * p.d * p.s * p.r);
    let f_neg = 1.0 / (1.0 + p.alpha * (1.0 - p.d) * (1.0 - p.s) * p.r);
    let ig_pos = nr * p.d * o.dh_pos * f_pos;
    let ig_neg = nr * (1.0 - p.d) * o.dh_neg * f_neg;
    let mut checks = vec![
        ("h+", g.h_plus, o.h_plus),
        ("h-", g.h_minus, o.h_minus),
        ("dh+", g.dh_pos, o.dh_pos),
        ("dh-", g.dh_neg, o.dh_neg),
        ("ig+", g.ig_pos, ig_pos),
        ("ig-", g.ig_neg, ig_neg),
    ];
    // The ratio of two vanishing gains is ill-conditioned; compare only where it is defined away from 0/0.
    if ig_pos + ig_neg > 1e-9 {
        checks.push(("r_neg", g.r_neg, ig_neg / (ig_pos + ig_neg)));
    }
    checks.into_iter().find(|c| !close(c.1, c.2)).map(|(name, got, want)| format!("{p:?}: {name} {got:e} vs {want:e}"))
}
