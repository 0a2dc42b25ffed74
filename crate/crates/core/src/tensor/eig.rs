//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use serde::{Deserialize, Serialize};

use super::{gemm, Layout, Tensor};
use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which iteration stops, relative to `max(1, ‖W‖_F)`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues in ascending order and the matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigPair {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl EigPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `Q · diag(f(λ)) · Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let d = self.dim();
        let q = self.vectors.data();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += q[i * d + k] * fl[k] * q[j * d + k];
                }
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        Tensor { shape: vec![d, d], data: out }
    }

    pub fn reconstruct(&self) -> Tensor {
        self.reconstruct_with(|l| l)
    }

    /// `‖QᵀQ − I‖_∞` (max absolute entry).
    pub fn orthonormality_residual(&self) -> f64 {
        let d = self.dim();
        let q = self.vectors.data();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += q[k * d + a] * q[k * d + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Decomposes a symmetric matrix as `W = Q diag(λ) Qᵀ`.
///
/// Eigenvalues come back sorted ascending with eigenvector columns permuted
/// to match, and each eigenvector is signed so that its largest-magnitude
/// entry is positive (first such entry on ties).
pub fn symmetric_eig(w: &Tensor) -> Result<EigPair> {
    let d = validate(w)?;
    let vt = Tensor::eye(d).into_data();
    let (a, vt) = jacobi(w.data().to_vec(), vt, d, tolerance(w))?;
    Ok(finish(&a, &vt, d))
}

/// Like [`symmetric_eig`], but starts the rotations from the basis `guess`
/// (columns = approximate eigenvectors, e.g. from a previous optimizer step).
///
/// The result obeys the same ordering and sign conventions; it agrees with the
/// cold start up to the convergence tolerance.
pub fn symmetric_eig_from(w: &Tensor, guess: &Tensor) -> Result<EigPair> {
    let d = validate(w)?;
    if guess.shape() != [d, d] {
        return Err(Error::shape("symmetric_eig_from", format!("guess {:?} for {d}x{d}", guess.shape())));
    }
    // B = Gᵀ W G, symmetrized to remove rounding asymmetry.
    let g = guess.data();
    let mut tmp = vec![0.0; d * d];
    gemm(d, d, d, 1.0, g, Layout::T, w.data(), Layout::N, 0.0, &mut tmp);
    let mut b = vec![0.0; d * d];
    gemm(d, d, d, 1.0, &tmp, Layout::N, g, Layout::N, 0.0, &mut b);
    for i in 0..d {
        for j in i + 1..d {
            let m = 0.5 * (b[i * d + j] + b[j * d + i]);
            b[i * d + j] = m;
            b[j * d + i] = m;
        }
    }
    // Rows of Gᵀ are the starting eigenvector estimates.
    let vt = guess.transpose().into_data();
    let (a, vt) = jacobi(b, vt, d, tolerance(w))?;
    Ok(finish(&a, &vt, d))
}

fn validate(w: &Tensor) -> Result<usize> {
    let shape = w.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("symmetric_eig", format!("expected square matrix, got {shape:?}")));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite { op: "symmetric_eig" });
    }
    let d = shape[0];
    let src = w.data();
    let scale = src.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut asymmetry: f64 = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            asymmetry = asymmetry.max((src[i * d + j] - src[j * d + i]).abs());
        }
    }
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(d)
}

fn tolerance(w: &Tensor) -> f64 {
    let frob = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    JACOBI_TOL * frob.max(1.0)
}

/// Cyclic Jacobi sweeps on `a`, applying every rotation to the rows of `vt` as well.
fn jacobi(mut a: Vec<f64>, mut vt: Vec<f64>, d: usize, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut row_p = vec![0.0; d];
    let mut row_q = vec![0.0; d];
    let mut residual = off_diagonal_norm(&a, d);
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if residual <= tol {
            return Ok((a, vt));
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * d + q] = 0.0;
                    a[q * d + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                {
                    let (lo, hi) = a.split_at(q * d);
                    let (ap, aq) = (&lo[p * d..(p + 1) * d], &hi[..d]);
                    for (((rp, rq), &akp), &akq) in row_p.iter_mut().zip(row_q.iter_mut()).zip(ap).zip(aq) {
                        *rp = c * akp - s * akq;
                        *rq = s * akp + c * akq;
                    }
                }
                row_p[p] = app - t * apq;
                row_q[q] = aqq + t * apq;
                row_p[q] = 0.0;
                row_q[p] = 0.0;
                a[p * d..(p + 1) * d].copy_from_slice(&row_p);
                a[q * d..(q + 1) * d].copy_from_slice(&row_q);
                for (k, (&rp, &rq)) in row_p.iter().zip(&row_q).enumerate() {
                    a[k * d + p] = rp;
                    a[k * d + q] = rq;
                }

                let (lo, hi) = vt.split_at_mut(q * d);
                let vp = &mut lo[p * d..(p + 1) * d];
                let vq = &mut hi[..d];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        residual = off_diagonal_norm(&a, d);
    }
    if residual > tol {
        return Err(Error::EigNoConvergence { sweeps: JACOBI_MAX_SWEEPS, residual });
    }
    Ok((a, vt))
}

/// Sorts eigenpairs ascending and fixes eigenvector signs.
fn finish(a: &[f64], vt: &[f64], d: usize) -> EigPair {
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[i * d + i].total_cmp(&a[j * d + j]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut q = vec![0.0; d * d];
    for (col, &src_row) in order.iter().enumerate() {
        let v = &vt[src_row * d..(src_row + 1) * d];
        let mut pivot = 0;
        for k in 1..d {
            if v[k].abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            q[k * d + col] = sign * v[k];
        }
    }
    EigPair { values, vectors: Tensor { shape: vec![d, d], data: q } }
}

fn off_diagonal_norm(a: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += a[i * d + j] * a[i * d + j];
            }
        }
    }
    s.sqrt()
}
