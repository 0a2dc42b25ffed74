//! Message-passing layers over a tape.
//!
//! All layers take node features `h: n×d` and return `n×d`. Neighbor sums are
//! evaluated edge-wise on node-level products (`H·Wᵀ`), so per-edge work is O(d).

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::Result;
use crate::tensor::{EdgeIndex, EdgeWeighting, Tape, Tensor, Var};

/// Slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Neighbor aggregation for the SAGE family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

impl Aggregation {
    fn weighting(self) -> EdgeWeighting {
        match self {
            Aggregation::Mean => EdgeWeighting::Mean,
            Aggregation::Sum => EdgeWeighting::Sum,
        }
    }
}

/// How the negative-eigenvalue factor τ is obtained on each edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// `σ(sign · c(h_i, h_j) · (1 + β))`.
    #[default]
    Adaptive,
    /// The same constant on every edge.
    Fixed(f64),
}

/// Plain-number `τ = σ(sign · c · (1 + β))`.
pub fn tau_value(c: f64, beta: f64, sign: f64) -> f64 {
    crate::tensor::sigmoid(sign * c * (1.0 + beta))
}

/// `τ = σ(sign · c · (1 + softplus(beta_raw)))`, elementwise over `c`.
pub fn tau(tape: &mut Tape, c: Var, beta_raw: Var, sign: f64) -> Result<Var> {
    let beta = tape.softplus(beta_raw)?;
    let one_plus = tape.add_scalar(beta, 1.0)?;
    let x = tape.mul(c, one_plus)?;
    let x = tape.scale(x, sign)?;
    tape.sigmoid(x)
}

/// Eigenvectors from the previous forward pass, used to warm-start the next decomposition.
pub type WarmStart = RefCell<Option<Tensor>>;

/// Handles for one soft-PSD weight: raw square matrix, its sensitivity, and orientation.
#[derive(Clone, Copy, Debug)]
pub struct SoftPsd<'a> {
    pub raw: Var,
    pub beta_raw: Var,
    /// `+1` on positive edges, `−1` on negative edges.
    pub sign: f64,
    pub warm: Option<&'a WarmStart>,
}

impl SoftPsd<'_> {
    pub fn new(raw: Var, beta_raw: Var, sign: f64) -> Self {
        Self { raw, beta_raw, sign, warm: None }
    }
}

/// Single-edge message `Soft-PSD_τ(W) · h_j` with `τ` from `c(h_i, h_j)`.
pub fn soft_psd_message(tape: &mut Tape, w: SoftPsd<'_>, h_i: Var, h_j: Var, mode: TauMode) -> Result<Var> {
    let t = match mode {
        TauMode::Adaptive => {
            let c = tape.cosine_similarity(h_i, h_j)?;
            tau(tape, c, w.beta_raw, w.sign)
        }
        TauMode::Fixed(v) => Ok(tape.constant(Tensor::scalar(v))),
    }?;
    tape.eig_rescaled_apply(w.raw, h_j, t)
}

/// Node-level transforms for one edge set: `WH = H·W_sym` plus, for the soft-PSD form,
/// the negative spectral part `NH = H·N` and per-edge `τ`.
struct Transformed {
    wh: Var,
    neg: Option<(Var, Var)>,
}

fn soft_psd_transform(tape: &mut Tape, h: Var, edges: &Rc<EdgeIndex>, w: SoftPsd<'_>, mode: TauMode) -> Result<Transformed> {
    let wsym = tape.symmetrize(w.raw)?;
    let guess = w.warm.and_then(|c| c.borrow().clone());
    let (nmat, eig) = tape.neg_eig_part_from(wsym, guess.as_ref())?;
    if let Some(cell) = w.warm {
        *cell.borrow_mut() = Some(eig.vectors.clone());
    }
    let wh = tape.matmul_nt(h, wsym)?;
    let nh = tape.matmul_nt(h, nmat)?;
    let t = match mode {
        TauMode::Adaptive => {
            let c = tape.edge_cosine(h, edges)?;
            tau(tape, c, w.beta_raw, w.sign)?
        }
        TauMode::Fixed(v) => tape.constant(Tensor::full(&[edges.len()], v)),
    };
    Ok(Transformed { wh, neg: Some((nh, t)) })
}

fn symmetric_transform(tape: &mut Tape, h: Var, raw: Var) -> Result<Transformed> {
    let wsym = tape.symmetrize(raw)?;
    Ok(Transformed { wh: tape.matmul_nt(h, wsym)?, neg: None })
}

fn attend(tape: &mut Tape, edges: &Rc<EdgeIndex>, x: &Transformed, att: Var) -> Result<Var> {
    let s = tape.matmul(x.wh, att)?;
    let neg = match x.neg {
        Some((nh, t)) => Some((tape.matmul(nh, att)?, t)),
        None => None,
    };
    let scores = tape.edge_scores(edges, s, neg)?;
    let scores = tape.leaky_relu(scores, ATTENTION_SLOPE)?;
    let alpha = tape.segment_softmax(scores, edges.dst(), edges.num_nodes())?;
    tape.edge_aggregate(edges, x.wh, x.neg, EdgeWeighting::Attention(alpha))
}

/// `W h_i + agg_{j∈N⁺(i)} Ŵ₊ h_j − agg_{k∈N⁻(i)} Ŵ₋ h_k` with soft-PSD `Ŵ±`.
#[allow(clippy::too_many_arguments)]
pub fn sage_cmp(
    tape: &mut Tape,
    h: Var,
    pos: &Rc<EdgeIndex>,
    neg: &Rc<EdgeIndex>,
    w_self: Var,
    w_pos: SoftPsd<'_>,
    w_neg: SoftPsd<'_>,
    agg: Aggregation,
    mode: TauMode,
) -> Result<Var> {
    let own = tape.matmul_nt(h, w_self)?;
    let p = soft_psd_transform(tape, h, pos, w_pos, mode)?;
    let p = tape.edge_aggregate(pos, p.wh, p.neg, agg.weighting())?;
    let n = soft_psd_transform(tape, h, neg, w_neg, mode)?;
    let n = tape.edge_aggregate(neg, n.wh, n.neg, agg.weighting())?;
    let out = tape.add(own, p)?;
    tape.sub(out, n)
}

/// The SAGE-CMP combination with plain symmetrized weights (no spectral constraint).
#[allow(clippy::too_many_arguments)]
pub fn sage_unconstrained(
    tape: &mut Tape,
    h: Var,
    pos: &Rc<EdgeIndex>,
    neg: &Rc<EdgeIndex>,
    w_self: Var,
    w_pos: Var,
    w_neg: Var,
    agg: Aggregation,
) -> Result<Var> {
    let own = tape.matmul_nt(h, w_self)?;
    let p = symmetric_transform(tape, h, w_pos)?;
    let p = tape.edge_aggregate(pos, p.wh, None, agg.weighting())?;
    let n = symmetric_transform(tape, h, w_neg)?;
    let n = tape.edge_aggregate(neg, n.wh, None, agg.weighting())?;
    let out = tape.add(own, p)?;
    tape.sub(out, n)
}

/// `W₁ h_i + W₂ · agg_{j∈N⁺(i)} h_j`.
pub fn sage_standard(tape: &mut Tape, h: Var, pos: &Rc<EdgeIndex>, w_self: Var, w_neigh: Var, agg: Aggregation) -> Result<Var> {
    let own = tape.matmul_nt(h, w_self)?;
    let m = tape.edge_aggregate(pos, h, None, agg.weighting())?;
    let m = tape.matmul_nt(m, w_neigh)?;
    tape.add(own, m)
}

/// `Σ_{j∈N⁺(i)∪{i}} α⁺ Ŵ₊ h_j − Σ_{k∈N⁻(i)} α⁻ Ŵ₋ h_k`.
///
/// `pos_loops` must contain a self-loop on every node. Attention parameters are
/// `d×2` (column 0 scores the receiving node, column 1 the sender) and see the
/// soft-PSD-transformed features of each edge.
#[allow(clippy::too_many_arguments)]
pub fn gat_cmp(
    tape: &mut Tape,
    h: Var,
    pos_loops: &Rc<EdgeIndex>,
    neg: &Rc<EdgeIndex>,
    w_pos: SoftPsd<'_>,
    w_neg: SoftPsd<'_>,
    att_pos: Var,
    att_neg: Var,
    mode: TauMode,
) -> Result<Var> {
    let p = soft_psd_transform(tape, h, pos_loops, w_pos, mode)?;
    let p = attend(tape, pos_loops, &p, att_pos)?;
    let n = soft_psd_transform(tape, h, neg, w_neg, mode)?;
    let n = attend(tape, neg, &n, att_neg)?;
    tape.sub(p, n)
}

#[allow(clippy::too_many_arguments)]
pub fn gat_unconstrained(
    tape: &mut Tape,
    h: Var,
    pos_loops: &Rc<EdgeIndex>,
    neg: &Rc<EdgeIndex>,
    w_pos: Var,
    w_neg: Var,
    att_pos: Var,
    att_neg: Var,
) -> Result<Var> {
    let p = symmetric_transform(tape, h, w_pos)?;
    let p = attend(tape, pos_loops, &p, att_pos)?;
    let n = symmetric_transform(tape, h, w_neg)?;
    let n = attend(tape, neg, &n, att_neg)?;
    tape.sub(p, n)
}

/// Single-head graph attention over `N⁺(i) ∪ {i}`.
pub fn gat_standard(tape: &mut Tape, h: Var, pos_loops: &Rc<EdgeIndex>, w: Var, att: Var) -> Result<Var> {
    let wh = tape.matmul_nt(h, w)?;
    attend(tape, pos_loops, &Transformed { wh, neg: None }, att)
}

/// `mean_{E⁺} softplus(−h_iᵀh_j) + mean_{E⁻} softplus(h_iᵀh_k)`.
pub fn contrastive_loss(tape: &mut Tape, h: Var, pos: &Rc<EdgeIndex>, neg: &Rc<EdgeIndex>) -> Result<Var> {
    if pos.is_empty() {
        return Err(crate::Error::NoEdges("positive"));
    }
    if neg.is_empty() {
        return Err(crate::Error::NoEdges("negative"));
    }
    let dp = tape.edge_dot(h, pos)?;
    let dp = tape.scale(dp, -1.0)?;
    let lp = tape.softplus(dp)?;
    let lp = tape.mean(lp)?;
    let dn = tape.edge_dot(h, neg)?;
    let ln = tape.softplus(dn)?;
    let ln = tape.mean(ln)?;
    tape.add(lp, ln)
}
