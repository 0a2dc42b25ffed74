//! Graphs with positive and sampled negative edges, planted-partition generation, and label splits.

mod io;
mod stats;

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{load_graph, read_edge_list, write_edge_list, write_features, write_labels, write_text};
pub use stats::{compute_stats, GraphStats};

/// Node-classification graph.
///
/// Edge lists hold both directions of every undirected edge, sorted, without
/// self-loops or duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub pos_edges: Vec<(usize, usize)>,
    pub neg_edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from undirected pairs, symmetrizing and deduplicating them.
    pub fn new(features: Tensor, labels: Vec<usize>, pos: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        if features.shape().len() != 2 || features.rows() != n {
            return Err(Error::shape("graph", format!("features {:?} for {n} labels", features.shape())));
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let pos_edges = symmetrize(n, pos)?;
        Ok(Self { num_nodes: n, num_classes, features, labels, pos_edges, neg_edges: Vec::new() })
    }

    /// Replaces the negative edge set; pairs must not overlap the positive set.
    pub fn with_negative_edges(mut self, neg: &[(usize, usize)]) -> Result<Self> {
        let neg = symmetrize(self.num_nodes, neg)?;
        let pos: HashSet<_> = self.pos_edges.iter().copied().collect();
        if let Some(e) = neg.iter().find(|e| pos.contains(e)) {
            return Err(Error::Domain(format!("pair {e:?} is both a positive and a negative edge")));
        }
        self.neg_edges = neg;
        Ok(self)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Each undirected positive edge once, as `(i, j)` with `i < j`.
    pub fn undirected_pos(&self) -> Vec<(usize, usize)> {
        self.pos_edges.iter().copied().filter(|&(i, j)| i < j).collect()
    }

    pub fn undirected_neg(&self) -> Vec<(usize, usize)> {
        self.neg_edges.iter().copied().filter(|&(i, j)| i < j).collect()
    }

    /// Sorted neighbor lists of the positive edge set.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.pos_edges {
            adj[i].push(j);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

fn symmetrize(n: usize, pairs: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for &(i, j) in pairs {
        for x in [i, j] {
            if x >= n {
                return Err(Error::IndexOutOfRange { what: "node", index: x, len: n });
            }
        }
        if i != j {
            out.push((i, j));
            out.push((j, i));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmConfig {
    pub n: usize,
    #[serde(rename = "num_classes")]
    pub c: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { n: 1000, c: 10, p_in: 0.25, p_out: 0.05, feat_dim: 32, seed: 42 }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::Domain(format!("need at least 2 communities, got {}", self.c)));
        }
        if self.n == 0 || self.n % self.c != 0 {
            return Err(Error::Domain(format!("n = {} is not a positive multiple of C = {}", self.n, self.c)));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.feat_dim == 0 {
            return Err(Error::Domain("feat_dim must be positive".into()));
        }
        Ok(())
    }

    /// Community of node `i` (contiguous equal blocks).
    pub fn community(&self, i: usize) -> usize {
        i / (self.n / self.c)
    }
}

/// Independent seeded streams for the parts of an experiment.
pub(crate) fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

const STREAM_EDGES: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_NEGATIVES: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// Samples a planted-partition graph (no negative edges yet).
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n;
    let labels: Vec<usize> = (0..n).map(|i| cfg.community(i)).collect();
    let mut rng = stream(cfg.seed, STREAM_EDGES);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    let mut frng = stream(cfg.seed, STREAM_FEATURES);
    let feats: Vec<f64> = (0..n * cfg.feat_dim).map(|_| frng.sample(StandardNormal)).collect();
    Graph::new(Tensor::matrix(n, cfg.feat_dim, feats)?, labels, &pairs)
}

/// Planted-partition probabilities matching homophily `s` and density `d` in expectation.
pub fn sbm_from_theory(s: f64, d: f64, c: usize, n: usize, feat_dim: usize, seed: u64) -> Result<SbmConfig> {
    if c < 2 {
        return Err(Error::Domain(format!("need at least 2 communities, got {c}")));
    }
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("s = {s}, d = {d} must lie in [0, 1]")));
    }
    let (p_in, p_out) = crate::theory::implied_probabilities(s, d, c);
    if p_in > 1.0 || p_out > 1.0 {
        return Err(Error::Domain(format!("(s = {s}, d = {d}) implies p_in = {p_in}, p_out = {p_out}")));
    }
    let cfg = SbmConfig { n, c, p_in, p_out, feat_dim, seed };
    cfg.validate()?;
    Ok(cfg)
}

/// Adds uniformly sampled non-adjacent pairs as negative edges.
///
/// Sampling is without replacement over unordered pairs; `count` defaults to
/// the number of undirected positive edges, capped at the complement size.
/// A non-empty graph with no non-adjacent pairs is an error.
pub fn sample_negative_edges(g: Graph, count: Option<usize>, seed: u64) -> Result<Graph> {
    let n = g.num_nodes;
    let m = g.pos_edges.len() / 2;
    let total = n * n.saturating_sub(1) / 2;
    let available = total - m;
    let requested = count.unwrap_or(m.min(available));
    if requested > available || (m > 0 && available == 0) {
        return Err(Error::InsufficientComplement { requested, available });
    }
    let adj = g.adjacency();
    let connected = |i: usize, j: usize| adj[i].binary_search(&j).is_ok();
    let mut rng = stream(seed, STREAM_NEGATIVES);
    let chosen: Vec<(usize, usize)> = if requested.saturating_mul(4) <= available {
        // Rejection sampling is cheap when the complement dominates.
        let mut seen = HashSet::with_capacity(requested);
        let mut out = Vec::with_capacity(requested);
        while out.len() < requested {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || connected(i, j) {
                continue;
            }
            let e = (i.min(j), i.max(j));
            if seen.insert(e) {
                out.push(e);
            }
        }
        out
    } else {
        let mut complement = Vec::with_capacity(available);
        for i in 0..n {
            for j in i + 1..n {
                if !connected(i, j) {
                    complement.push((i, j));
                }
            }
        }
        index::sample(&mut rng, complement.len(), requested).into_iter().map(|k| complement[k]).collect()
    };
    g.with_negative_edges(&chosen)
}

/// Disjoint train / validation / test node sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub label_rate: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fraction of non-training nodes held out for validation.
pub const VAL_FRACTION: f64 = 0.25;

impl Split {
    pub fn mask(n: usize, idx: &[usize]) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in idx {
            m[i] = true;
        }
        m
    }
}

/// Class-stratified split with `round(r·n)` training nodes; the rest is
/// divided 1:3 into validation and test.
pub fn make_split(g: &Graph, label_rate: f64, seed: u64) -> Result<Split> {
    if !(label_rate > 0.0 && label_rate < 1.0) {
        return Err(Error::Domain(format!("label rate {label_rate} outside (0, 1)")));
    }
    let n = g.num_nodes;
    let c = g.num_classes;
    let m = (label_rate * n as f64).round() as usize;
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in g.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    // Even quota per class; leftover slots go to randomly ordered classes with spare members.
    let mut quota = vec![0usize; c];
    let mut left = m;
    loop {
        let open: Vec<usize> = (0..c).filter(|&k| quota[k] < by_class[k].len()).collect();
        if left == 0 || open.is_empty() {
            break;
        }
        if left >= open.len() {
            let share = left / open.len();
            for &k in &open {
                let add = share.min(by_class[k].len() - quota[k]);
                quota[k] += add;
                left -= add;
            }
        } else {
            let mut order = open;
            order.shuffle(&mut rng);
            for &k in order.iter().take(left) {
                quota[k] += 1;
            }
            left = 0;
        }
    }
    let mut train = Vec::with_capacity(m);
    let mut rest = Vec::with_capacity(n - m);
    for (k, members) in by_class.iter().enumerate() {
        if quota[k] == 0 && !members.is_empty() {
            log::warn!("class {k} has no training nodes at label rate {label_rate}");
        }
        train.extend_from_slice(&members[..quota[k]]);
        rest.extend_from_slice(&members[quota[k]..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let nval = (VAL_FRACTION * rest.len() as f64).round() as usize;
    let mut val = rest[..nval].to_vec();
    let mut test = rest[nval..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { label_rate, train, val, test })
}
