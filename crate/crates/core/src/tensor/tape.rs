//! Reverse-mode differentiation over an append-only operation list.

use std::rc::Rc;

use super::eig::{symmetric_eig, symmetric_eig_from, EigPair};
use super::{axpy, dot, gemm, sigmoid, softplus, EdgeIndex, Layout, Tensor};
use crate::error::{Error, Result};

/// Stabilizer in the cosine-similarity denominator.
pub const COSINE_EPS: f64 = 1e-12;
/// Variance stabilizer in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Eigenvalue gaps below this use the averaged-derivative limit in spectral backward passes.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-edge coefficient used by [`Tape::edge_aggregate`].
#[derive(Clone, Copy, Debug)]
pub enum EdgeWeighting {
    /// `1 / in_degree(dst)`.
    Mean,
    /// Unit weight.
    Sum,
    /// A differentiable weight per edge (e.g. attention coefficients).
    Attention(Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    RightScalar,
    LeftScalar,
}

struct CosineSaved {
    dot: f64,
    norm_u: f64,
    norm_v: f64,
    live: bool,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var, mode: Broadcast },
    Sub { a: Var, b: Var, mode: Broadcast },
    Mul { a: Var, b: Var, mode: Broadcast },
    AddRow { a: Var, row: Var },
    Scale { a: Var, k: f64 },
    AddScalar { a: Var },
    LeakyRelu { a: Var, slope: f64 },
    Sigmoid { a: Var },
    Softplus { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Cosine { u: Var, v: Var, saved: CosineSaved },
    EdgeCosine { h: Var, edges: Rc<EdgeIndex>, norms: Vec<f64>, dots: Vec<f64>, live: Vec<bool> },
    EdgeDot { h: Var, edges: Rc<EdgeIndex> },
    SegmentMean { x: Var, segments: Rc<[usize]>, counts: Vec<usize> },
    SegmentSoftmax { x: Var, segments: Rc<[usize]>, num_segments: usize },
    Symmetrize { a: Var },
    NegEigPart { w: Var, eig: Rc<EigPair> },
    EigRescaledApply { w: Var, z: Var, tau: Var, wsym: Vec<f64>, eig: Rc<EigPair>, rotated: Vec<f64> },
    EdgeAggregate { edges: Rc<EdgeIndex>, wh: Var, neg: Option<(Var, Var)>, weighting: EdgeWeighting },
    EdgeScores { edges: Rc<EdgeIndex>, s: Var, neg: Option<(Var, Var)> },
    CrossEntropy { logits: Var, labels: Rc<[usize]>, rows: Rc<[usize]>, probs: Vec<f64> },
    BinaryCe { logits: Var, targets: Rc<[f64]>, rows: Rc<[usize]> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
///
/// A tape is single-threaded; build a fresh tape per forward/backward step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Moves the gradient out, leaving zeros semantics for later calls.
    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records a value treated as constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, name: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::shape(name, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ----------------------------------------------------------------- linear algebra

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), Layout::N, self.value(b).data(), Layout::N, 0.0, &mut out);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul { a, b }, &[a, b])
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k` (row-vector linear layer).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), Layout::N, self.value(b).data(), Layout::T, 0.0, &mut out);
        self.push("matmul_nt", Tensor::matrix(m, n, out)?, Op::MatMulNT { a, b }, &[a, b])
    }

    /// `(a + aᵀ) / 2`.
    pub fn symmetrize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("symmetrize", a)?;
        if m != n {
            return Err(Error::shape("symmetrize", format!("{m}x{n} is not square")));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = 0.5 * (src[i * n + j] + src[j * n + i]);
            }
        }
        self.push("symmetrize", Tensor::matrix(n, n, out)?, Op::Symmetrize { a }, &[a])
    }

    // ----------------------------------------------------------------- elementwise

    fn broadcast_mode(&self, name: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(Broadcast::Same)
        } else if sb.is_scalar() {
            Ok(Broadcast::RightScalar)
        } else if sa.is_scalar() {
            Ok(Broadcast::LeftScalar)
        } else {
            Err(Error::shape(name, format!("{:?} vs {:?}", sa.shape(), sb.shape())))
        }
    }

    fn binary(&self, mode: Broadcast, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        match mode {
            Broadcast::Same => Tensor {
                shape: ta.shape.clone(),
                data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
            },
            Broadcast::RightScalar => {
                let y = tb.item();
                Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| f(x, y)).collect() }
            }
            Broadcast::LeftScalar => {
                let x = ta.item();
                Tensor { shape: tb.shape.clone(), data: tb.data.iter().map(|&y| f(x, y)).collect() }
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_mode("add", a, b)?;
        let out = self.binary(mode, a, b, |x, y| x + y);
        self.push("add", out, Op::Add { a, b, mode }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_mode("sub", a, b)?;
        let out = self.binary(mode, a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub { a, b, mode }, &[a, b])
    }

    /// Elementwise product (with scalar broadcast).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_mode("mul", a, b)?;
        let out = self.binary(mode, a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul { a, b, mode }, &[a, b])
    }

    /// Adds a length-`d` row to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims("add_row", a)?;
        if self.value(row).numel() != d {
            return Err(Error::shape("add_row", format!("row of {} for {n}x{d}", self.value(row).numel())));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..n {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push("add_row", out, Op::AddRow { a, row }, &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| k * x);
        self.push("scale", out, Op::Scale { a, k }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar { a }, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu { a, slope }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid { a }, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.push("softplus", out, Op::Softplus { a }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean { a }, &[a])
    }

    // ----------------------------------------------------------------- normalization

    /// Per-row standardization followed by the affine map `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims("layer_norm", x)?;
        if d == 0 {
            return Err(Error::shape("layer_norm", "zero-width rows"));
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::shape("layer_norm", format!("affine parameters must have length {d}")));
        }
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = src.row(i);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mu) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        self.push("layer_norm", out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    // ----------------------------------------------------------------- similarity

    /// `uᵀv / (‖u‖‖v‖ + ε)` clamped to `[-1, 1]`.
    ///
    /// Zero vectors give similarity 0 with zero gradient.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.numel() != tv.numel() || tu.numel() == 0 {
            return Err(Error::shape("cosine_similarity", format!("{:?} vs {:?}", tu.shape(), tv.shape())));
        }
        let p = dot(tu.data(), tv.data());
        let nu = dot(tu.data(), tu.data()).sqrt();
        let nv = dot(tv.data(), tv.data()).sqrt();
        let (c, live) = clamp_cosine(p, nu, nv);
        let saved = CosineSaved { dot: p, norm_u: nu, norm_v: nv, live };
        self.push("cosine_similarity", Tensor::scalar(c), Op::Cosine { u, v, saved }, &[u, v])
    }

    /// Cosine similarity `c(h_dst, h_src)` for every edge.
    pub fn edge_cosine(&mut self, h: Var, edges: &Rc<EdgeIndex>) -> Result<Var> {
        let (n, _) = self.matrix_dims("edge_cosine", h)?;
        if edges.num_nodes() != n {
            return Err(Error::shape("edge_cosine", format!("{} nodes in index, {n} rows", edges.num_nodes())));
        }
        let th = self.value(h);
        let norms: Vec<f64> = (0..n).map(|i| dot(th.row(i), th.row(i)).sqrt()).collect();
        let e = edges.len();
        let mut out = vec![0.0; e];
        let mut dots = vec![0.0; e];
        let mut live = vec![false; e];
        for (k, (s, d)) in edges.pairs().enumerate() {
            let p = dot(th.row(d), th.row(s));
            let (c, l) = clamp_cosine(p, norms[d], norms[s]);
            out[k] = c;
            dots[k] = p;
            live[k] = l;
        }
        let op = Op::EdgeCosine { h, edges: Rc::clone(edges), norms, dots, live };
        self.push("edge_cosine", Tensor::vector(out), op, &[h])
    }

    /// `h_dstᵀ h_src` for every edge.
    pub fn edge_dot(&mut self, h: Var, edges: &Rc<EdgeIndex>) -> Result<Var> {
        let (n, _) = self.matrix_dims("edge_dot", h)?;
        if edges.num_nodes() != n {
            return Err(Error::shape("edge_dot", format!("{} nodes in index, {n} rows", edges.num_nodes())));
        }
        let th = self.value(h);
        let out: Vec<f64> = edges.pairs().map(|(s, d)| dot(th.row(d), th.row(s))).collect();
        self.push("edge_dot", Tensor::vector(out), Op::EdgeDot { h, edges: Rc::clone(edges) }, &[h])
    }

    // ----------------------------------------------------------------- segments

    /// Mean of the rows of `x` sharing a segment id; empty segments give zero rows.
    pub fn segment_mean(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rows() != segments.len() {
            return Err(Error::shape("segment_mean", format!("{} rows, {} ids", tx.rows(), segments.len())));
        }
        let d = tx.cols();
        let mut counts = vec![0usize; num_segments];
        for &s in segments {
            if s >= num_segments {
                return Err(Error::IndexOutOfRange { what: "segment id", index: s, len: num_segments });
            }
            counts[s] += 1;
        }
        let mut out = vec![0.0; num_segments * d];
        for (r, &s) in segments.iter().enumerate() {
            axpy(1.0 / counts[s] as f64, tx.row(r), &mut out[s * d..(s + 1) * d]);
        }
        let segments: Rc<[usize]> = segments.into();
        let out = Tensor::matrix(num_segments, d, out)?;
        self.push("segment_mean", out, Op::SegmentMean { x, segments, counts }, &[x])
    }

    /// Softmax of `x` within each segment, with per-segment max subtraction.
    pub fn segment_softmax(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() != segments.len() {
            return Err(Error::shape("segment_softmax", format!("{} scores, {} ids", tx.numel(), segments.len())));
        }
        let mut maxes = vec![f64::NEG_INFINITY; num_segments];
        for (&v, &s) in tx.data().iter().zip(segments) {
            if s >= num_segments {
                return Err(Error::IndexOutOfRange { what: "segment id", index: s, len: num_segments });
            }
            maxes[s] = maxes[s].max(v);
        }
        let mut out: Vec<f64> = tx.data().iter().zip(segments).map(|(&v, &s)| (v - maxes[s]).exp()).collect();
        let mut sums = vec![0.0; num_segments];
        for (&v, &s) in out.iter().zip(segments) {
            sums[s] += v;
        }
        for (v, &s) in out.iter_mut().zip(segments) {
            *v /= sums[s];
        }
        let shape = tx.shape().to_vec();
        let segments: Rc<[usize]> = segments.into();
        let out = Tensor::new(shape, out)?;
        self.push("segment_softmax", out, Op::SegmentSoftmax { x, segments, num_segments }, &[x])
    }

    // ----------------------------------------------------------------- spectral

    /// `Q · diag(min(λ, 0)) · Qᵀ` for a symmetric input, i.e. its negative spectral part.
    ///
    /// Returns the handle and the decomposition used, so callers can reuse it.
    pub fn neg_eig_part(&mut self, w: Var) -> Result<(Var, Rc<EigPair>)> {
        self.neg_eig_part_from(w, None)
    }

    /// [`Tape::neg_eig_part`] with the Jacobi iteration started from the basis `guess`.
    pub fn neg_eig_part_from(&mut self, w: Var, guess: Option<&Tensor>) -> Result<(Var, Rc<EigPair>)> {
        let eig = match guess {
            Some(g) => symmetric_eig_from(self.value(w), g)?,
            None => symmetric_eig(self.value(w))?,
        };
        let eig = Rc::new(eig);
        let out = eig.reconstruct_with(|l| l.min(0.0));
        let v = self.push("neg_eig_part", out, Op::NegEigPart { w, eig: Rc::clone(&eig) }, &[w])?;
        Ok((v, eig))
    }

    /// `Q · diag(λ̂) · Qᵀ · z` where `(Q, λ)` decomposes `(w + wᵀ)/2` and
    /// `λ̂ᵢ = λᵢ` for `λᵢ ≥ 0`, `τ·λᵢ` otherwise.
    ///
    /// Evaluated as `W_sym z + Q · diag((τ−1)·min(λ,0)) · Qᵀ z`, which is exact
    /// at `τ = 1` and keeps the eigen-coordinate part factored.
    pub fn eig_rescaled_apply(&mut self, w: Var, z: Var, tau: Var) -> Result<Var> {
        let (d, d2) = self.matrix_dims("eig_rescaled_apply", w)?;
        if d != d2 || self.value(z).numel() != d || !self.value(tau).is_scalar() {
            return Err(Error::shape(
                "eig_rescaled_apply",
                format!("w {:?}, z {:?}, tau {:?}", self.value(w).shape(), self.value(z).shape(), self.value(tau).shape()),
            ));
        }
        let raw = self.value(w).data();
        let mut wsym = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                wsym[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
            }
        }
        let eig = Rc::new(symmetric_eig(&Tensor::matrix(d, d, wsym.clone())?)?);
        let zt = self.value(z).data();
        let t = self.value(tau).item();
        let q = eig.vectors.data();
        // rotated = Qᵀ z
        let mut rotated = vec![0.0; d];
        gemm(d, d, 1, 1.0, q, Layout::T, zt, Layout::N, 0.0, &mut rotated);
        let scaled: Vec<f64> = rotated
            .iter()
            .zip(&eig.values)
            .map(|(y, &l)| (t - 1.0) * l.min(0.0) * y)
            .collect();
        let mut out = vec![0.0; d];
        gemm(d, d, 1, 1.0, &wsym, Layout::N, zt, Layout::N, 0.0, &mut out);
        gemm(d, d, 1, 1.0, q, Layout::N, &scaled, Layout::N, 1.0, &mut out);
        let out = Tensor::new(self.value(z).shape().to_vec(), out)?;
        let op = Op::EigRescaledApply { w, z, tau, wsym, eig, rotated };
        self.push("eig_rescaled_apply", out, op, &[w, z, tau])
    }

    // ----------------------------------------------------------------- message passing

    /// For every node `i`: `Σ_{e: src→i} w_e · (wh[src] + (τ_e − 1) · nh[src])`.
    ///
    /// Without `neg` this is the plain weighted aggregate of `wh`. Edges with
    /// `τ_e = 1` skip the correction term entirely.
    pub fn edge_aggregate(
        &mut self,
        edges: &Rc<EdgeIndex>,
        wh: Var,
        neg: Option<(Var, Var)>,
        weighting: EdgeWeighting,
    ) -> Result<Var> {
        let (n, d) = self.matrix_dims("edge_aggregate", wh)?;
        if edges.num_nodes() != n {
            return Err(Error::shape("edge_aggregate", format!("{} nodes in index, {n} rows", edges.num_nodes())));
        }
        let mut inputs = vec![wh];
        if let Some((nh, tau)) = neg {
            if self.value(nh).shape() != self.value(wh).shape() || self.value(tau).numel() != edges.len() {
                return Err(Error::shape("edge_aggregate", "correction term shape"));
            }
            inputs.extend([nh, tau]);
        }
        if let EdgeWeighting::Attention(alpha) = weighting {
            if self.value(alpha).numel() != edges.len() {
                return Err(Error::shape("edge_aggregate", "one attention weight per edge"));
            }
            inputs.push(alpha);
        }
        let twh = self.value(wh);
        let tn = neg.map(|(nh, tau)| (self.value(nh), self.value(tau).data()));
        let alpha = match weighting {
            EdgeWeighting::Attention(a) => Some(self.value(a).data()),
            _ => None,
        };
        let src = edges.src();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let range = edges.incoming(i);
            if range.is_empty() {
                continue;
            }
            let deg = range.len() as f64;
            let acc = &mut out[i * d..(i + 1) * d];
            for e in range {
                let w = match weighting {
                    EdgeWeighting::Mean => 1.0 / deg,
                    EdgeWeighting::Sum => 1.0,
                    EdgeWeighting::Attention(_) => alpha.unwrap()[e],
                };
                let j = src[e];
                axpy(w, twh.row(j), acc);
                if let Some((nh, tau)) = tn {
                    let k = tau[e] - 1.0;
                    if k != 0.0 {
                        axpy(w * k, nh.row(j), acc);
                    }
                }
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        let op = Op::EdgeAggregate { edges: Rc::clone(edges), wh, neg, weighting };
        self.push("edge_aggregate", out, op, &inputs)
    }

    /// Attention logits `s[dst,0] + s[src,1] + (τ_e − 1)(t[dst,0] + t[src,1])` per edge.
    ///
    /// `s` and `t` are `n×2`: column 0 scores the target side, column 1 the source side.
    pub fn edge_scores(&mut self, edges: &Rc<EdgeIndex>, s: Var, neg: Option<(Var, Var)>) -> Result<Var> {
        let (n, two) = self.matrix_dims("edge_scores", s)?;
        if two != 2 || edges.num_nodes() != n {
            return Err(Error::shape("edge_scores", format!("expected {}x2 scores", edges.num_nodes())));
        }
        let mut inputs = vec![s];
        if let Some((t, tau)) = neg {
            if self.value(t).shape() != [n, 2] || self.value(tau).numel() != edges.len() {
                return Err(Error::shape("edge_scores", "correction term shape"));
            }
            inputs.extend([t, tau]);
        }
        let ts = self.value(s).data();
        let tn = neg.map(|(t, tau)| (self.value(t).data(), self.value(tau).data()));
        let mut out = Vec::with_capacity(edges.len());
        for (e, (j, i)) in edges.pairs().enumerate() {
            let mut v = ts[2 * i] + ts[2 * j + 1];
            if let Some((t, tau)) = tn {
                let k = tau[e] - 1.0;
                if k != 0.0 {
                    v += k * (t[2 * i] + t[2 * j + 1]);
                }
            }
            out.push(v);
        }
        let op = Op::EdgeScores { edges: Rc::clone(edges), s, neg };
        self.push("edge_scores", Tensor::vector(out), op, &inputs)
    }

    // ----------------------------------------------------------------- losses

    /// Mean softmax cross-entropy over the rows listed in `rows`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims("cross_entropy", logits)?;
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        let tl = self.value(logits);
        let mut probs = Vec::with_capacity(rows.len() * c);
        let mut total = 0.0;
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange { what: "mask row", index: r, len: n });
            }
            let y = labels[r];
            if y >= c {
                return Err(Error::IndexOutOfRange { what: "class label", index: y, len: c });
            }
            let row = tl.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let loss = total / rows.len() as f64;
        let op = Op::CrossEntropy { logits, labels: labels.into(), rows: rows.into(), probs };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Mean binary cross-entropy with logits over the entries listed in `rows`.
    pub fn binary_ce(&mut self, logits: Var, targets: &[f64], rows: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        if targets.len() != tl.numel() {
            return Err(Error::shape("binary_ce", format!("{} targets for {} logits", targets.len(), tl.numel())));
        }
        let mut total = 0.0;
        for &r in rows {
            if r >= tl.numel() {
                return Err(Error::IndexOutOfRange { what: "mask row", index: r, len: tl.numel() });
            }
            let x = tl.data()[r];
            total += softplus(x) - targets[r] * x;
        }
        let loss = total / rows.len() as f64;
        let op = Op::BinaryCe { logits, targets: targets.into(), rows: rows.into() };
        self.push("binary_ce", Tensor::scalar(loss), op, &[logits])
    }

    // ----------------------------------------------------------------- backward

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if let Some(da) = self.buf(grads, *a) {
                    gemm(m, n, k, 1.0, g, Layout::N, self.value(*b).data(), Layout::T, 1.0, da);
                }
                if let Some(db) = self.buf(grads, *b) {
                    gemm(k, m, n, 1.0, self.value(*a).data(), Layout::T, g, Layout::N, 1.0, db);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                if let Some(da) = self.buf(grads, *a) {
                    gemm(m, n, k, 1.0, g, Layout::N, self.value(*b).data(), Layout::N, 1.0, da);
                }
                if let Some(db) = self.buf(grads, *b) {
                    gemm(n, m, k, 1.0, g, Layout::T, self.value(*a).data(), Layout::N, 1.0, db);
                }
            }
            Op::Add { a, b, mode } | Op::Sub { a, b, mode } => {
                let sign = if matches!(self.nodes[idx].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                self.broadcast_back(grads, *a, g, *mode, true, |_| 1.0);
                self.broadcast_back(grads, *b, g, *mode, false, |_| sign);
            }
            Op::Mul { a, b, mode } => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                match mode {
                    Broadcast::Same => {
                        if let Some(da) = self.buf(grads, *a) {
                            for ((d, gi), y) in da.iter_mut().zip(g).zip(tb) {
                                *d += gi * y;
                            }
                        }
                        if let Some(db) = self.buf(grads, *b) {
                            for ((d, gi), x) in db.iter_mut().zip(g).zip(ta) {
                                *d += gi * x;
                            }
                        }
                    }
                    Broadcast::RightScalar => {
                        let y = tb[0];
                        if let Some(da) = self.buf(grads, *a) {
                            axpy(y, g, da);
                        }
                        if let Some(db) = self.buf(grads, *b) {
                            db[0] += dot(g, ta);
                        }
                    }
                    Broadcast::LeftScalar => {
                        let x = ta[0];
                        if let Some(da) = self.buf(grads, *a) {
                            da[0] += dot(g, tb);
                        }
                        if let Some(db) = self.buf(grads, *b) {
                            axpy(x, g, db);
                        }
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(1.0, g, da);
                }
                let d = out.cols();
                if let Some(dr) = self.buf(grads, *row) {
                    for chunk in g.chunks(d) {
                        axpy(1.0, chunk, dr);
                    }
                }
            }
            Op::Scale { a, k } => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(*k, g, da);
                }
            }
            Op::AddScalar { a } => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(1.0, g, da);
                }
            }
            Op::LeakyRelu { a, slope } => {
                let x = self.value(*a).data();
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), xi) in da.iter_mut().zip(g).zip(x) {
                        *d += if *xi >= 0.0 { *gi } else { slope * gi };
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softplus { a } => {
                let x = self.value(*a).data();
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gi * sigmoid(*xi);
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(da) = self.buf(grads, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean { a } => {
                if let Some(da) = self.buf(grads, *a) {
                    let k = g[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += k);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = out.cols();
                let n = out.rows();
                let gv = self.value(*gain).data();
                if let Some(dg) = self.buf(grads, *gain) {
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if let Some(db) = self.buf(grads, *bias) {
                    for chunk in g.chunks(d) {
                        axpy(1.0, chunk, db);
                    }
                }
                if let Some(dx) = self.buf(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for i in 0..n {
                        let gi = &g[i * d..(i + 1) * d];
                        let hi = &xhat[i * d..(i + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gi[j] * gv[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dot(&dxhat, hi) / d as f64;
                        let row = &mut dx[i * d..(i + 1) * d];
                        for j in 0..d {
                            row[j] += rstd[i] * (dxhat[j] - m1 - hi[j] * m2);
                        }
                    }
                }
            }
            Op::Cosine { u, v, saved } => {
                if !saved.live {
                    return;
                }
                let (tu, tv) = (self.value(*u).data(), self.value(*v).data());
                let denom = saved.norm_u * saved.norm_v + COSINE_EPS;
                let k = saved.dot / (denom * denom);
                if let Some(du) = self.buf(grads, *u) {
                    let cu = k * saved.norm_v / saved.norm_u;
                    for ((d, a), b) in du.iter_mut().zip(tu).zip(tv) {
                        *d += g[0] * (b / denom - cu * a);
                    }
                }
                if let Some(dv) = self.buf(grads, *v) {
                    let cv = k * saved.norm_u / saved.norm_v;
                    for ((d, a), b) in dv.iter_mut().zip(tu).zip(tv) {
                        *d += g[0] * (a / denom - cv * b);
                    }
                }
            }
            Op::EdgeCosine { h, edges, norms, dots, live } => {
                let th = self.value(*h);
                let dcols = th.cols();
                if let Some(dh) = self.buf(grads, *h) {
                    // ∂c/∂h_i = h_j/D − c'·h_i with c' = dot·(n_j/n_i)/D²; the cross terms are
                    // gathered per node, the self terms collapse into one coefficient per node.
                    let mut cross = vec![0.0; edges.len()];
                    let mut own = vec![0.0; th.rows()];
                    for (e, (s, d)) in edges.pairs().enumerate() {
                        if !live[e] || g[e] == 0.0 {
                            continue;
                        }
                        let (ni, nj) = (norms[d], norms[s]);
                        let denom = ni * nj + COSINE_EPS;
                        let k = g[e] * dots[e] / (denom * denom);
                        cross[e] = g[e] / denom;
                        own[d] -= k * nj / ni;
                        own[s] -= k * ni / nj;
                    }
                    gather_both(edges, &cross, th, dh, dcols);
                    for (i, &c) in own.iter().enumerate() {
                        if c != 0.0 {
                            axpy(c, th.row(i), &mut dh[i * dcols..(i + 1) * dcols]);
                        }
                    }
                }
            }
            Op::EdgeDot { h, edges } => {
                let th = self.value(*h);
                let dcols = th.cols();
                if let Some(dh) = self.buf(grads, *h) {
                    gather_both(edges, g, th, dh, dcols);
                }
            }
            Op::SegmentMean { x, segments, counts } => {
                let d = out.cols();
                if let Some(dx) = self.buf(grads, *x) {
                    for (r, &s) in segments.iter().enumerate() {
                        axpy(1.0 / counts[s] as f64, &g[s * d..(s + 1) * d], &mut dx[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::SegmentSoftmax { x, segments, num_segments } => {
                let y = out.data();
                let mut dots = vec![0.0; *num_segments];
                for ((&yi, &gi), &s) in y.iter().zip(g).zip(segments.iter()) {
                    dots[s] += yi * gi;
                }
                if let Some(dx) = self.buf(grads, *x) {
                    for (e, &s) in segments.iter().enumerate() {
                        dx[e] += y[e] * (g[e] - dots[s]);
                    }
                }
            }
            Op::Symmetrize { a } => {
                let n = out.rows();
                if let Some(da) = self.buf(grads, *a) {
                    for i in 0..n {
                        for j in 0..n {
                            da[i * n + j] += 0.5 * (g[i * n + j] + g[j * n + i]);
                        }
                    }
                }
            }
            Op::NegEigPart { w, eig } => {
                if let Some(dw) = self.buf(grads, *w) {
                    let coef = spectral_coefficients(&eig.values, 0.0, 1.0);
                    let dsym = spectral_backward(eig, g, &coef);
                    axpy(1.0, &dsym, dw);
                }
            }
            Op::EigRescaledApply { w, z, tau, wsym, eig, rotated } => {
                let d = eig.dim();
                let q = eig.vectors.data();
                let t = self.value(*tau).item();
                let zt = self.value(*z).data();
                let mut gq = vec![0.0; d];
                gemm(d, d, 1, 1.0, q, Layout::T, g, Layout::N, 0.0, &mut gq);
                if let Some(dz) = self.buf(grads, *z) {
                    let scaled: Vec<f64> =
                        gq.iter().zip(&eig.values).map(|(a, &l)| (t - 1.0) * l.min(0.0) * a).collect();
                    gemm(d, d, 1, 1.0, wsym, Layout::N, g, Layout::N, 1.0, dz);
                    gemm(d, d, 1, 1.0, q, Layout::N, &scaled, Layout::N, 1.0, dz);
                }
                if let Some(dt) = self.buf(grads, *tau) {
                    dt[0] += eig.values.iter().zip(rotated).zip(&gq).map(|((&l, y), a)| l.min(0.0) * y * a).sum::<f64>();
                }
                if let Some(dw) = self.buf(grads, *w) {
                    // d/dW_sym of W_sym z is g zᵀ; the spectral part sees Ḡ = g zᵀ scaled by (τ − 1).
                    let mut outer = vec![0.0; d * d];
                    for i in 0..d {
                        for j in 0..d {
                            outer[i * d + j] = g[i] * zt[j];
                        }
                    }
                    let coef = spectral_coefficients(&eig.values, 0.0, 1.0);
                    let mut dsym = spectral_backward(eig, &outer, &coef);
                    dsym.iter_mut().for_each(|v| *v *= t - 1.0);
                    axpy(1.0, &outer, &mut dsym);
                    for i in 0..d {
                        for j in 0..d {
                            dw[i * d + j] += 0.5 * (dsym[i * d + j] + dsym[j * d + i]);
                        }
                    }
                }
            }
            Op::EdgeAggregate { edges, wh, neg, weighting } => {
                let twh = self.value(*wh);
                let d = twh.cols();
                let n = twh.rows();
                let dst = edges.dst();
                let tau = neg.map(|(_, t)| self.value(t).data());
                let nh = neg.map(|(nh, _)| self.value(nh));
                let alpha_var = match weighting {
                    EdgeWeighting::Attention(a) => Some(*a),
                    _ => None,
                };
                let alpha = alpha_var.map(|a| self.value(a).data());
                let weight = |e: usize| match weighting {
                    EdgeWeighting::Mean => 1.0 / edges.in_degree(dst[e]) as f64,
                    EdgeWeighting::Sum => 1.0,
                    EdgeWeighting::Attention(_) => alpha.unwrap()[e],
                };
                let mut dwh = self.take_buf(grads, *wh);
                let mut dnh = neg.and_then(|(v, _)| self.take_buf(grads, v));
                let mut dtau = neg.and_then(|(_, v)| self.take_buf(grads, v));
                let mut dalpha = alpha_var.and_then(|v| self.take_buf(grads, v));
                // Grouped by sender: each source row of the input gradients is written once.
                for j in 0..n {
                    let out_edges = edges.outgoing(j);
                    if out_edges.is_empty() {
                        continue;
                    }
                    let whj = twh.row(j);
                    let nhj = nh.map(|t| t.row(j));
                    for &e in out_edges {
                        let gi = &g[dst[e] * d..(dst[e] + 1) * d];
                        let w = weight(e);
                        let k = tau.map_or(0.0, |t| t[e] - 1.0);
                        if let Some(buf) = dwh.as_mut() {
                            axpy(w, gi, &mut buf[j * d..(j + 1) * d]);
                        }
                        if k != 0.0 {
                            if let Some(buf) = dnh.as_mut() {
                                axpy(w * k, gi, &mut buf[j * d..(j + 1) * d]);
                            }
                        }
                        let gn = match (nhj, dtau.is_some() || (dalpha.is_some() && k != 0.0)) {
                            (Some(row), true) => dot(gi, row),
                            _ => 0.0,
                        };
                        if let Some(buf) = dtau.as_mut() {
                            buf[e] += w * gn;
                        }
                        if let Some(buf) = dalpha.as_mut() {
                            buf[e] += dot(gi, whj) + k * gn;
                        }
                    }
                }
                self.put_buf(grads, *wh, dwh);
                if let Some((nv, tv)) = neg {
                    self.put_buf(grads, *nv, dnh);
                    self.put_buf(grads, *tv, dtau);
                }
                if let Some(a) = alpha_var {
                    self.put_buf(grads, a, dalpha);
                }
            }
            Op::EdgeScores { edges, s, neg } => {
                let tau = neg.map(|(_, t)| self.value(t).data());
                if let Some(ds) = self.buf(grads, *s) {
                    for (e, (j, i)) in edges.pairs().enumerate() {
                        ds[2 * i] += g[e];
                        ds[2 * j + 1] += g[e];
                    }
                }
                if let Some((t_var, tau_var)) = neg {
                    let tau = tau.unwrap();
                    let t = self.value(*t_var).data();
                    if let Some(dt) = self.buf(grads, *t_var) {
                        for (e, (j, i)) in edges.pairs().enumerate() {
                            let k = tau[e] - 1.0;
                            dt[2 * i] += g[e] * k;
                            dt[2 * j + 1] += g[e] * k;
                        }
                    }
                    if let Some(dtau) = self.buf(grads, *tau_var) {
                        for (e, (j, i)) in edges.pairs().enumerate() {
                            dtau[e] += g[e] * (t[2 * i] + t[2 * j + 1]);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, rows, probs } => {
                let c = self.value(*logits).cols();
                if let Some(dl) = self.buf(grads, *logits) {
                    let k = g[0] / rows.len() as f64;
                    for (m, &r) in rows.iter().enumerate() {
                        let p = &probs[m * c..(m + 1) * c];
                        let row = &mut dl[r * c..(r + 1) * c];
                        axpy(k, p, row);
                        row[labels[r]] -= k;
                    }
                }
            }
            Op::BinaryCe { logits, targets, rows } => {
                let x = self.value(*logits).data();
                if let Some(dl) = self.buf(grads, *logits) {
                    let k = g[0] / rows.len() as f64;
                    for &r in rows.iter() {
                        dl[r] += k * (sigmoid(x[r]) - targets[r]);
                    }
                }
            }
        }
    }

    /// Moves a gradient buffer out (zeros if absent) so several can be written at once.
    fn take_buf(&self, grads: &mut [Option<Vec<f64>>], v: Var) -> Option<Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]))
    }

    /// Returns a buffer from [`Tape::take_buf`], summing if the slot was refilled meanwhile.
    fn put_buf(&self, grads: &mut [Option<Vec<f64>>], v: Var, buf: Option<Vec<f64>>) {
        let Some(buf) = buf else { return };
        match grads[v.0].as_mut() {
            Some(existing) => axpy(1.0, &buf, existing),
            None => grads[v.0] = Some(buf),
        }
    }

    fn broadcast_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        mode: Broadcast,
        left: bool,
        sign: impl Fn(()) -> f64,
    ) {
        let s = sign(());
        let scalar_side = matches!((mode, left), (Broadcast::RightScalar, false) | (Broadcast::LeftScalar, true));
        if let Some(dv) = self.buf(grads, v) {
            if scalar_side {
                dv[0] += s * g.iter().sum::<f64>();
            } else {
                axpy(s, g, dv);
            }
        }
    }
}

/// For per-edge weights `c`: `out[dst] += c·h[src]` and `out[src] += c·h[dst]`, gathered per row.
fn gather_both(edges: &EdgeIndex, c: &[f64], h: &Tensor, out: &mut [f64], d: usize) {
    let (src, dst) = (edges.src(), edges.dst());
    for i in 0..edges.num_nodes() {
        let row = &mut out[i * d..(i + 1) * d];
        for e in edges.incoming(i) {
            if c[e] != 0.0 {
                axpy(c[e], h.row(src[e]), row);
            }
        }
        for &e in edges.outgoing(i) {
            if c[e] != 0.0 {
                axpy(c[e], h.row(dst[e]), row);
            }
        }
    }
}

fn clamp_cosine(p: f64, nu: f64, nv: f64) -> (f64, bool) {
    if nu == 0.0 || nv == 0.0 {
        return (0.0, false);
    }
    let c = p / (nu * nv + COSINE_EPS);
    if c > 1.0 {
        (1.0, false)
    } else if c < -1.0 {
        (-1.0, false)
    } else {
        (c, true)
    }
}

/// Divided-difference matrix `Γᵢⱼ = (f(λᵢ) − f(λⱼ)) / (λᵢ − λⱼ)` for the
/// piecewise-linear spectral function `f(λ) = pos_slope·max(λ,0) + neg_slope·min(λ,0)`.
///
/// The diagonal, and any pair closer than [`DEGENERATE_GAP`], uses the mean of
/// the two one-sided derivatives.
pub(crate) fn spectral_coefficients(values: &[f64], pos_slope: f64, neg_slope: f64) -> Vec<f64> {
    let d = values.len();
    let f = |l: f64| if l >= 0.0 { pos_slope * l } else { neg_slope * l };
    let df = |l: f64| if l >= 0.0 { pos_slope } else { neg_slope };
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let (li, lj) = (values[i], values[j]);
            out[i * d + j] = if i == j {
                df(li)
            } else if (li - lj).abs() < DEGENERATE_GAP {
                0.5 * (df(li) + df(lj))
            } else {
                (f(li) - f(lj)) / (li - lj)
            };
        }
    }
    out
}

/// Gradient with respect to a symmetric `W` of a loss depending on
/// `F(W) = Q f(Λ) Qᵀ`, given `Ḡ = ∂L/∂F` and the divided differences of `f`.
pub(crate) fn spectral_backward(eig: &EigPair, gbar: &[f64], coef: &[f64]) -> Vec<f64> {
    let d = eig.dim();
    let q = eig.vectors.data();
    let mut sym = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (gbar[i * d + j] + gbar[j * d + i]);
        }
    }
    let mut tmp = vec![0.0; d * d];
    gemm(d, d, d, 1.0, q, Layout::T, &sym, Layout::N, 0.0, &mut tmp);
    let mut inner = vec![0.0; d * d];
    gemm(d, d, d, 1.0, &tmp, Layout::N, q, Layout::N, 0.0, &mut inner);
    for (m, c) in inner.iter_mut().zip(coef) {
        *m *= c;
    }
    gemm(d, d, d, 1.0, q, Layout::N, &inner, Layout::N, 0.0, &mut tmp);
    let mut out = vec![0.0; d * d];
    gemm(d, d, d, 1.0, &tmp, Layout::N, q, Layout::T, 0.0, &mut out);
    out
}
