//! Node-classification models: lift → (message passing + residual → LayerNorm → LeakyReLU)ᴸ → projection.

mod checkpoint;
pub mod layers;

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{EdgeIndex, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_embeddings};
pub use layers::{contrastive_loss, soft_psd_message, tau, tau_value, Aggregation, SoftPsd, TauMode, WarmStart};

/// Initial `beta_raw`, chosen so that `softplus(beta_raw) = 1`.
pub fn initial_beta_raw() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// Training objective / message-passing variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Positive and negative edges through soft-PSD weights.
    Cmp,
    /// Positive edges only.
    Standard,
    /// Positive and negative edges with plain weights.
    Unconstrained,
    /// Positive edges only, plus an auxiliary contrastive loss.
    Cl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cmp, Method::Standard, Method::Unconstrained, Method::Cl];

    pub fn uses_negative_edges(self) -> bool {
        !matches!(self, Method::Standard)
    }
}

/// Layer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Sage,
    Gat,
}

/// The six concrete layer kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    SageCmp,
    GatCmp,
    SageStandard,
    GatStandard,
    SageUnconstrained,
    GatUnconstrained,
}

impl LayerKind {
    pub fn of(form: Form, method: Method) -> Self {
        match (form, method) {
            (Form::Sage, Method::Cmp) => LayerKind::SageCmp,
            (Form::Gat, Method::Cmp) => LayerKind::GatCmp,
            (Form::Sage, Method::Standard | Method::Cl) => LayerKind::SageStandard,
            (Form::Gat, Method::Standard | Method::Cl) => LayerKind::GatStandard,
            (Form::Sage, Method::Unconstrained) => LayerKind::SageUnconstrained,
            (Form::Gat, Method::Unconstrained) => LayerKind::GatUnconstrained,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::SageCmp => "sage_cmp",
            LayerKind::GatCmp => "gat_cmp",
            LayerKind::SageStandard => "sage_standard",
            LayerKind::GatStandard => "gat_standard",
            LayerKind::SageUnconstrained => "sage_unconstrained",
            LayerKind::GatUnconstrained => "gat_unconstrained",
        }
    }
}

/// A model variant as written in configs and result files, e.g. `sage_cmp` or `gat_cl`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub form: Form,
    pub method: Method,
}

impl Variant {
    pub fn new(form: Form, method: Method) -> Self {
        Self { form, method }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match self.form {
            Form::Sage => "sage",
            Form::Gat => "gat",
        };
        let method = match self.method {
            Method::Cmp => "cmp",
            Method::Standard => "standard",
            Method::Unconstrained => "unconstrained",
            Method::Cl => "cl",
        };
        write!(f, "{form}_{method}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (form, method) = s.split_once('_').ok_or_else(|| Error::Config(format!("unknown model {s:?}")))?;
        let form = match form {
            "sage" => Form::Sage,
            "gat" => Form::Gat,
            _ => return Err(Error::Config(format!("unknown model form in {s:?}"))),
        };
        let method = match method {
            "cmp" => Method::Cmp,
            "standard" => Method::Standard,
            "unconstrained" => Method::Unconstrained,
            "cl" => Method::Cl,
            _ => return Err(Error::Config(format!("unknown model method in {s:?}"))),
        };
        Ok(Variant { form, method })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub num_mp_layers: usize,
    pub leaky_slope: f64,
    pub variant: Variant,
    pub cl_loss_weight: f64,
    pub aggregation: Aggregation,
    pub tau_mode: TauMode,
}

impl ModelSpec {
    pub fn new(in_dim: usize, out_dim: usize, variant: Variant) -> Self {
        Self {
            in_dim,
            hidden_dim: 64,
            out_dim,
            num_mp_layers: 2,
            leaky_slope: 0.2,
            variant,
            cl_loss_weight: 1.0,
            aggregation: Aggregation::Mean,
            tau_mode: TauMode::Adaptive,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::of(self.variant.form, self.variant.method)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.cl_loss_weight < 0.0 || !self.cl_loss_weight.is_finite() {
            return Err(Error::Config("cl_loss_weight must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let b = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-b..=b)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Edge indices prepared once per graph.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    pub num_nodes: usize,
    pub pos: Rc<EdgeIndex>,
    pub pos_loops: Rc<EdgeIndex>,
    pub neg: Rc<EdgeIndex>,
}

impl GraphIndex {
    pub fn new(g: &Graph) -> Result<Self> {
        let pos = EdgeIndex::new(g.num_nodes, &g.pos_edges)?;
        let pos_loops = pos.with_self_loops();
        let neg = EdgeIndex::new(g.num_nodes, &g.neg_edges)?;
        Ok(Self { num_nodes: g.num_nodes, pos: Rc::new(pos), pos_loops: Rc::new(pos_loops), neg: Rc::new(neg) })
    }
}

/// Eigenvector caches for every soft-PSD weight of a model, carried across
/// optimizer steps so each decomposition starts from the previous basis.
#[derive(Debug, Default)]
pub struct EigWarmStart {
    slots: HashMap<String, WarmStart>,
}

impl EigWarmStart {
    pub fn for_model(model: &Model) -> Self {
        let slots = model
            .params
            .names
            .iter()
            .filter_map(|n| n.strip_suffix(".beta_raw"))
            .map(|prefix| (prefix.to_string(), WarmStart::default()))
            .collect();
        Self { slots }
    }

    fn slot(&self, prefix: &str) -> Option<&WarmStart> {
        self.slots.get(prefix)
    }
}

/// Tape handles produced by a forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    pub logits: Var,
    /// Output of the last message-passing block.
    pub embeddings: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters: uniform `±1/√fan_in` weights, zero biases, unit LayerNorm gains, `β = 1`.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.hidden_dim;
        let mut p = ParamStore::default();
        p.push("lift.weight", uniform(rng, d, spec.in_dim, spec.in_dim));
        p.push("lift.bias", Tensor::zeros(&[d]));
        for l in 0..spec.num_mp_layers {
            let mp = format!("mp{l}");
            match spec.kind() {
                LayerKind::SageCmp => {
                    p.push(format!("{mp}.self"), uniform(rng, d, d, d));
                    for side in ["pos", "neg"] {
                        p.push(format!("{mp}.{side}.raw"), uniform(rng, d, d, d));
                        p.push(format!("{mp}.{side}.beta_raw"), Tensor::scalar(initial_beta_raw()));
                    }
                }
                LayerKind::SageUnconstrained => {
                    p.push(format!("{mp}.self"), uniform(rng, d, d, d));
                    p.push(format!("{mp}.pos.raw"), uniform(rng, d, d, d));
                    p.push(format!("{mp}.neg.raw"), uniform(rng, d, d, d));
                }
                LayerKind::SageStandard => {
                    p.push(format!("{mp}.self"), uniform(rng, d, d, d));
                    p.push(format!("{mp}.neigh"), uniform(rng, d, d, d));
                }
                LayerKind::GatCmp => {
                    for side in ["pos", "neg"] {
                        p.push(format!("{mp}.{side}.raw"), uniform(rng, d, d, d));
                        p.push(format!("{mp}.{side}.beta_raw"), Tensor::scalar(initial_beta_raw()));
                        p.push(format!("{mp}.{side}.att"), uniform(rng, d, 2, d));
                    }
                }
                LayerKind::GatUnconstrained => {
                    for side in ["pos", "neg"] {
                        p.push(format!("{mp}.{side}.raw"), uniform(rng, d, d, d));
                        p.push(format!("{mp}.{side}.att"), uniform(rng, d, 2, d));
                    }
                }
                LayerKind::GatStandard => {
                    p.push(format!("{mp}.weight"), uniform(rng, d, d, d));
                    p.push(format!("{mp}.att"), uniform(rng, d, 2, d));
                }
            }
            p.push(format!("norm{l}.gain"), Tensor::full(&[d], 1.0));
            p.push(format!("norm{l}.bias"), Tensor::zeros(&[d]));
        }
        p.push("proj.weight", uniform(rng, spec.out_dim, d, d));
        p.push("proj.bias", Tensor::zeros(&[spec.out_dim]));
        Ok(Self { spec, params: p })
    }

    /// Records the forward pass; every parameter is registered on the tape in store order.
    pub fn forward(&self, tape: &mut Tape, features: &Tensor, index: &GraphIndex) -> Result<Forward> {
        self.forward_with(tape, features, index, None)
    }

    /// [`Model::forward`] with warm-started eigendecompositions.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        index: &GraphIndex,
        warm: Option<&EigWarmStart>,
    ) -> Result<Forward> {
        let spec = &self.spec;
        if features.shape() != [index.num_nodes, spec.in_dim] {
            return Err(Error::shape(
                "model_forward",
                format!("features {:?}, expected [{}, {}]", features.shape(), index.num_nodes, spec.in_dim),
            ));
        }
        let params: Vec<Var> = self.params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let var = |name: String| -> Result<Var> {
            self.params.index(&name).map(|i| params[i]).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let x = tape.constant(features.clone());
        let h = tape.matmul_nt(x, var("lift.weight".into())?)?;
        let mut h = tape.add_row(h, var("lift.bias".into())?)?;
        for l in 0..spec.num_mp_layers {
            let mp = format!("mp{l}");
            let side = |s: &str, sign: f64| -> Result<SoftPsd<'_>> {
                Ok(SoftPsd {
                    raw: var(format!("{mp}.{s}.raw"))?,
                    beta_raw: var(format!("{mp}.{s}.beta_raw"))?,
                    sign,
                    warm: warm.and_then(|w| w.slot(&format!("{mp}.{s}"))),
                })
            };
            let m = match spec.kind() {
                LayerKind::SageCmp => layers::sage_cmp(
                    tape,
                    h,
                    &index.pos,
                    &index.neg,
                    var(format!("{mp}.self"))?,
                    side("pos", 1.0)?,
                    side("neg", -1.0)?,
                    spec.aggregation,
                    spec.tau_mode,
                )?,
                LayerKind::SageUnconstrained => layers::sage_unconstrained(
                    tape,
                    h,
                    &index.pos,
                    &index.neg,
                    var(format!("{mp}.self"))?,
                    var(format!("{mp}.pos.raw"))?,
                    var(format!("{mp}.neg.raw"))?,
                    spec.aggregation,
                )?,
                LayerKind::SageStandard => layers::sage_standard(
                    tape,
                    h,
                    &index.pos,
                    var(format!("{mp}.self"))?,
                    var(format!("{mp}.neigh"))?,
                    spec.aggregation,
                )?,
                LayerKind::GatCmp => layers::gat_cmp(
                    tape,
                    h,
                    &index.pos_loops,
                    &index.neg,
                    side("pos", 1.0)?,
                    side("neg", -1.0)?,
                    var(format!("{mp}.pos.att"))?,
                    var(format!("{mp}.neg.att"))?,
                    spec.tau_mode,
                )?,
                LayerKind::GatUnconstrained => layers::gat_unconstrained(
                    tape,
                    h,
                    &index.pos_loops,
                    &index.neg,
                    var(format!("{mp}.pos.raw"))?,
                    var(format!("{mp}.neg.raw"))?,
                    var(format!("{mp}.pos.att"))?,
                    var(format!("{mp}.neg.att"))?,
                )?,
                LayerKind::GatStandard => layers::gat_standard(
                    tape,
                    h,
                    &index.pos_loops,
                    var(format!("{mp}.weight"))?,
                    var(format!("{mp}.att"))?,
                )?,
            };
            let r = tape.add(h, m)?;
            let r = tape.layer_norm(r, var(format!("norm{l}.gain"))?, var(format!("norm{l}.bias"))?)?;
            h = tape.leaky_relu(r, spec.leaky_slope)?;
        }
        let logits = tape.matmul_nt(h, var("proj.weight".into())?)?;
        let logits = tape.add_row(logits, var("proj.bias".into())?)?;
        Ok(Forward { params, logits, embeddings: h })
    }

    /// Cross-entropy on `rows`, plus the weighted contrastive term for the CL variant.
    pub fn loss(&self, tape: &mut Tape, fwd: &Forward, labels: &[usize], rows: &[usize], index: &GraphIndex) -> Result<Var> {
        let task = tape.cross_entropy(fwd.logits, labels, rows)?;
        if self.spec.variant.method == Method::Cl && self.spec.cl_loss_weight > 0.0 {
            let cl = contrastive_loss(tape, fwd.embeddings, &index.pos, &index.neg)?;
            let cl = tape.scale(cl, self.spec.cl_loss_weight)?;
            return tape.add(task, cl);
        }
        Ok(task)
    }

    /// Checks that the graph carries what this variant needs.
    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if self.spec.variant.method.uses_negative_edges() && g.neg_edges.is_empty() {
            return Err(Error::MissingNegativeEdges(self.spec.kind().name()));
        }
        Ok(())
    }
}

/// Row-wise argmax.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `rows` whose prediction matches the label; 0 for an empty set.
pub fn accuracy(pred: &[usize], labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / rows.len() as f64
}
