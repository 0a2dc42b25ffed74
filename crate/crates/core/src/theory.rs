//! Closed-form information gain from positive and negative edges on a planted-partition graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking that implied edge probabilities lie in `[0, 1]`.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub n: usize,
    pub c: usize,
    /// Homophily ratio.
    pub s: f64,
    /// Label rate.
    pub r: f64,
    /// Edge density.
    pub d: f64,
    /// Redundancy saturation rate.
    pub alpha: f64,
}

impl TheoryParams {
    pub fn new(n: usize, c: usize, s: f64, r: f64, d: f64, alpha: f64) -> Self {
        Self { n, c, s, r, d, alpha }
    }

    pub fn validate(&self) -> Result<()> {
        check_classes(self.c)?;
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Domain(format!("homophily s = {} outside [0, 1]", self.s)));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Domain(format!("label rate r = {} outside [0, 1]", self.r)));
        }
        if !(self.d > 0.0 && self.d < 1.0) {
            return Err(Error::Domain(format!("edge density d = {} outside (0, 1)", self.d)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Domain(format!("alpha = {} must be positive", self.alpha)));
        }
        let (p_in, p_out) = implied_probabilities(self.s, self.d, self.c);
        if p_in > 1.0 + DOMAIN_SLACK || p_out > 1.0 + DOMAIN_SLACK {
            return Err(Error::Domain(format!(
                "(s = {}, d = {}, C = {}) implies p_in = {p_in}, p_out = {p_out}",
                self.s, self.d, self.c
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoGainResult {
    pub h_plus: f64,
    pub h_minus: f64,
    pub dh_pos: f64,
    pub dh_neg: f64,
    pub f_pos: f64,
    pub f_neg: f64,
    pub ig_pos: f64,
    pub ig_neg: f64,
    pub r_neg: f64,
}

fn check_classes(c: usize) -> Result<()> {
    if c < 2 {
        return Err(Error::Domain(format!("need at least 2 communities, got {c}")));
    }
    Ok(())
}

/// `(p_in, p_out)` of the planted partition with homophily `s` and density `d`.
pub fn implied_probabilities(s: f64, d: f64, c: usize) -> (f64, f64) {
    let c = c as f64;
    (s * c * d, (1.0 - s) * c * d / (c - 1.0))
}

/// `φ(x) = (1 + x)·ln(1 + x) − x` for `x ≥ −1`; non-negative, `≈ x²/2` near 0.
fn phi(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // Σ_{n≥2} (−x)ⁿ / (n(n−1)); 20 terms reach full precision for |x| < 0.1.
        let mut term = x * x;
        let mut sum = 0.0;
        for n in 2..22 {
            let nf = n as f64;
            sum += term / (nf * (nf - 1.0));
            term *= -x;
        }
        sum
    } else if x == -1.0 {
        1.0
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

/// `ln C − H(posterior)` where the posterior puts mass `h = (1 + u)/C` on one
/// class and spreads the rest evenly. Written as `(φ(u) + k·φ(−u/k))/C` with
/// `k = C − 1`: both terms are non-negative, so gains near `h = 1/C` (where
/// the entropy form cancels to second order) keep full relative precision.
fn entropy_drop(u: f64, c: usize) -> f64 {
    let k = (c - 1) as f64;
    ((phi(u) + k * phi(-u / k)) / c as f64).max(0.0)
}

/// Entropy reduction (nats) about a node's community after seeing one positive edge to a labeled node.
pub fn delta_h_pos(s: f64, c: usize) -> Result<f64> {
    check_classes(c)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("homophily s = {s} outside [0, 1]")));
    }
    Ok(entropy_drop(s * c as f64 - 1.0, c))
}

/// Posterior same-community probability after seeing a non-edge to a labeled node.
pub fn h_minus(s: f64, d: f64, c: usize) -> Result<f64> {
    check_classes(c)?;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Domain(format!("edge density d = {d} outside (0, 1)")));
    }
    let cf = c as f64;
    let h = (1.0 - s * cf * d) / (cf * (1.0 - d));
    if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&h) {
        return Err(Error::Domain(format!("posterior h- = {h} outside [0, 1]")));
    }
    Ok(h.clamp(0.0, 1.0))
}

/// Entropy reduction (nats) after seeing one negative edge (non-connection) to a labeled node.
pub fn delta_h_neg(s: f64, d: f64, c: usize) -> Result<f64> {
    h_minus(s, d, c)?;
    // h⁻C − 1 = d(1 − sC)/(1 − d), exact at s = 1/C.
    let u = d * (1.0 - s * c as f64) / (1.0 - d);
    Ok(entropy_drop(u, c))
}

/// Diminishing-returns factors `(f_pos, f_neg)`.
pub fn redundancy(r: f64, s: f64, d: f64, alpha: f64) -> (f64, f64) {
    (1.0 / (1.0 + alpha * d * s * r), 1.0 / (1.0 + alpha * (1.0 - d) * (1.0 - s) * r))
}

/// Expected per-node information gain from positive and negative edges, and their ratio.
pub fn info_gains(p: &TheoryParams) -> Result<InfoGainResult> {
    p.validate()?;
    let h_plus = p.s;
    let h_minus = h_minus(p.s, p.d, p.c)?;
    let dh_pos = delta_h_pos(p.s, p.c)?;
    let dh_neg = delta_h_neg(p.s, p.d, p.c)?;
    let (f_pos, f_neg) = redundancy(p.r, p.s, p.d, p.alpha);
    let nr = p.n as f64 * p.r;
    let ig_pos = nr * p.d * dh_pos * f_pos;
    let ig_neg = nr * (1.0 - p.d) * dh_neg * f_neg;
    let total = ig_pos + ig_neg;
    let r_neg = if total == 0.0 { 0.0 } else { ig_neg / total };
    Ok(InfoGainResult { h_plus, h_minus, dh_pos, dh_neg, f_pos, f_neg, ig_pos, ig_neg, r_neg })
}

/// Inclusive arithmetic range `start, start + step, …` up to `stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    /// Grid values, computed as `start + i·step` to avoid drift; rounded to 12 decimals.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.stop < self.start || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::Config(format!("bad range {self:?}")));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| round12(self.start + i as f64 * self.step)).collect())
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub s: Range,
    pub r: Range,
    pub d: Range,
    pub n: usize,
    pub c: usize,
    pub alpha: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            s: Range::new(0.1, 0.9, 0.05),
            r: Range::new(0.01, 0.5, 0.01),
            d: Range::new(0.01, 0.09, 0.01),
            n: 1000,
            c: 10,
            alpha: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub s: f64,
    pub r: f64,
    pub d: f64,
    pub result: InfoGainResult,
}

impl GridRow {
    pub const CSV_HEADER: &'static str = "s,r,d,h_plus,h_minus,dh_pos,dh_neg,f_pos,f_neg,ig_pos,ig_neg,r_neg";

    /// Summed gain over all unlabeled nodes, `(1 − r)·n·(IG_pos + IG_neg)`.
    pub fn total_gain(&self, n: usize) -> f64 {
        (1.0 - self.r) * n as f64 * (self.result.ig_pos + self.result.ig_neg)
    }

    pub fn csv_line(&self) -> String {
        let x = &self.result;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.s, self.r, self.d, x.h_plus, x.h_minus, x.dh_pos, x.dh_neg, x.f_pos, x.f_neg, x.ig_pos, x.ig_neg, x.r_neg
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    /// Rows ordered s-major, then r, then d.
    pub rows: Vec<GridRow>,
    /// `(s, r, d)` points rejected by the domain check.
    pub skipped: Vec<(f64, f64, f64)>,
    pub s_values: Vec<f64>,
    pub r_values: Vec<f64>,
    pub d_values: Vec<f64>,
}

pub fn sweep_grid(spec: &GridSpec) -> Result<Sweep> {
    let (sv, rv, dv) = (spec.s.values()?, spec.r.values()?, spec.d.values()?);
    let mut out = Sweep { s_values: sv.clone(), r_values: rv.clone(), d_values: dv.clone(), ..Default::default() };
    for &s in &sv {
        for &r in &rv {
            for &d in &dv {
                match info_gains(&TheoryParams::new(spec.n, spec.c, s, r, d, spec.alpha)) {
                    Ok(result) => out.rows.push(GridRow { s, r, d, result }),
                    Err(Error::Domain(_)) => out.skipped.push((s, r, d)),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if out.rows.is_empty() {
        return Err(Error::Empty("no valid grid points".into()));
    }
    Ok(out)
}

/// A grid cell where a monotone trend is broken.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendViolation {
    pub trend: &'static str,
    pub at: (f64, f64, f64),
    pub next: (f64, f64, f64),
    pub before: f64,
    pub after: f64,
}

/// Scans a full sweep for the expected monotone trends:
/// `r_neg` non-decreasing in `s` and `d`, non-increasing in `r`;
/// `ig_pos` and `ig_neg` non-decreasing in `r`.
///
/// Differences below `tol` (relative to magnitude) are ignored as rounding.
pub fn check_trends(sweep: &Sweep, tol: f64) -> Vec<TrendViolation> {
    use std::collections::HashMap;
    let key = |s: f64, r: f64, d: f64| (s.to_bits(), r.to_bits(), d.to_bits());
    let index: HashMap<_, &InfoGainResult> = sweep.rows.iter().map(|row| (key(row.s, row.r, row.d), &row.result)).collect();
    let mut out = Vec::new();
    let mut scan = |trend: &'static str, axis: usize, rising: bool, get: fn(&InfoGainResult) -> f64| {
        let vals = [&sweep.s_values, &sweep.r_values, &sweep.d_values];
        for &s in &sweep.s_values {
            for &r in &sweep.r_values {
                for &d in &sweep.d_values {
                    let here = [s, r, d];
                    let pos = vals[axis].iter().position(|&v| v == here[axis]).unwrap();
                    let Some(&nv) = vals[axis].get(pos + 1) else { continue };
                    let mut there = here;
                    there[axis] = nv;
                    let (Some(a), Some(b)) =
                        (index.get(&key(here[0], here[1], here[2])), index.get(&key(there[0], there[1], there[2])))
                    else {
                        continue;
                    };
                    let (x, y) = (get(a), get(b));
                    let slack = tol * x.abs().max(y.abs()).max(1e-300);
                    let broken = if rising { y < x - slack } else { y > x + slack };
                    if broken {
                        out.push(TrendViolation {
                            trend,
                            at: (here[0], here[1], here[2]),
                            next: (there[0], there[1], there[2]),
                            before: x,
                            after: y,
                        });
                    }
                }
            }
        }
    };
    scan("r_neg non-decreasing in s", 0, true, |x| x.r_neg);
    scan("r_neg non-increasing in r", 1, false, |x| x.r_neg);
    scan("r_neg non-decreasing in d", 2, true, |x| x.r_neg);
    scan("ig_pos non-decreasing in r", 1, true, |x| x.ig_pos);
    scan("ig_neg non-decreasing in r", 1, true, |x| x.ig_neg);
    out
}
