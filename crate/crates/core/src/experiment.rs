//! Experiment configs and the multi-seed harness behind the command-line verbs.
//!
//! Every output row is sorted into a fixed order before it is written, so the
//! size of the worker pool never changes file contents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    compute_stats, generate_sbm, load_graph, make_split, read_edge_list, sample_negative_edges, write_edge_list,
    write_features, write_labels, write_text, Graph, GraphStats, SbmConfig, Split,
};
use crate::nn::{save_checkpoint, write_embeddings, Aggregation, Form, Method, Model, ModelSpec, TauMode, Variant};
use crate::tensor::{Tape, Tensor};
use crate::theory::{check_trends, sweep_grid, GridRow, GridSpec, Sweep, TrendViolation};
use crate::train::{summarize, train, RunMetrics, Summary, TrainConfig};

pub const DEFAULT_LABEL_RATES: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
pub const DEFAULT_P_OUT_VALUES: [f64; 9] = [0.01, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2];
pub const AGGREGATE_HEADER: &str = "experiment,label_rate,model,seed,test_acc,best_val_epoch,wall_time_s";
pub const SUMMARY_HEADER: &str = "experiment,label_rate,model,count,median,q25,q75";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub models: Vec<Variant>,
    pub hidden_dim: usize,
    pub num_mp_layers: usize,
    pub leaky_slope: f64,
    pub cl_loss_weight: f64,
    pub aggregation: Aggregation,
    pub tau_mode: TauMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            models: Method::ALL.iter().map(|&m| Variant::new(Form::Sage, m)).collect(),
            hidden_dim: 64,
            num_mp_layers: 2,
            leaky_slope: 0.2,
            cl_loss_weight: 1.0,
            aggregation: Aggregation::Mean,
            tau_mode: TauMode::Adaptive,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, in_dim: usize, out_dim: usize, variant: Variant) -> ModelSpec {
        ModelSpec {
            in_dim,
            hidden_dim: self.hidden_dim,
            out_dim,
            num_mp_layers: self.num_mp_layers,
            leaky_slope: self.leaky_slope,
            variant,
            cl_loss_weight: self.cl_loss_weight,
            aggregation: self.aggregation,
            tau_mode: self.tau_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Label rate for single `train` runs.
    pub label_rate: f64,
    pub label_rates: Vec<f64>,
    pub p_out_values: Vec<f64>,
    pub heterophily_label_rate: f64,
    /// Draw a fresh graph (edges and features) for every seed instead of reusing `sbm.seed`.
    pub regenerate_per_seed: bool,
    /// Negative edges per graph; defaults to the positive edge count.
    pub negative_count: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            label_rate: 0.01,
            label_rates: DEFAULT_LABEL_RATES.to_vec(),
            p_out_values: DEFAULT_P_OUT_VALUES.to_vec(),
            heterophily_label_rate: 0.2,
            regenerate_per_seed: true,
            negative_count: None,
        }
    }
}

/// Graph files used instead of a generated SBM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    /// Fixed negative edges; sampled per seed when absent.
    #[serde(default)]
    pub negative_edges: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sbm: SbmConfig,
    pub theory: GridSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub data: Option<DataFiles>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Desk-scale: 300 nodes, 5 communities, hidden width 32, three seeds.
    Small,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Small => {
                self.sbm.n = 300;
                self.sbm.c = 5;
                self.model.hidden_dim = 32;
                self.train.seeds = vec![42, 43, 44];
            }
        }
    }

    /// Runs a single seed everywhere.
    pub fn override_seed(&mut self, seed: u64) {
        self.sbm.seed = seed;
        self.train.seeds = vec![seed];
    }

    pub fn validate(&self) -> Result<()> {
        self.sbm.validate().map_err(|e| Error::Config(format!("sbm: {e}")))?;
        self.train.validate()?;
        if self.model.models.is_empty() {
            return Err(Error::Config("model.models is empty".into()));
        }
        if self.model.hidden_dim == 0 {
            return Err(Error::Config("model.hidden_dim must be positive".into()));
        }
        let rates = self.sweep.label_rates.iter().chain([&self.sweep.label_rate, &self.sweep.heterophily_label_rate]);
        for &r in rates {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("label rate {r} outside (0, 1)")));
            }
        }
        for &p in &self.sweep.p_out_values {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("p_out {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Writes `config.json` into `out`, creating the directory.
pub fn echo_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    write_text(&out.join("config.json"), cfg.to_json())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, serde_json::to_string_pretty(value)? + "\n")
}

// ---------------------------------------------------------------- theory

pub struct TheoryOutcome {
    pub sweep: Sweep,
    pub violations: Vec<TrendViolation>,
}

/// Trend checks allow this much floating-point slack.
pub const TREND_TOLERANCE: f64 = 1e-12;

pub fn run_theory(cfg: &ExperimentConfig, out: &Path) -> Result<TheoryOutcome> {
    let sweep = sweep_grid(&cfg.theory)?;
    echo_config(cfg, out)?;
    let mut csv = String::with_capacity(sweep.rows.len() * 160);
    csv.push_str(GridRow::CSV_HEADER);
    csv.push('\n');
    for row in &sweep.rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    write_text(&out.join("theory.csv"), csv)?;
    let violations = check_trends(&sweep, TREND_TOLERANCE);
    Ok(TheoryOutcome { sweep, violations })
}

// ---------------------------------------------------------------- graphs

/// The graph a run sees: generated from `sbm` (with `seed` if regenerating) or loaded.
pub fn build_graph(cfg: &ExperimentConfig, sbm: &SbmConfig, seed: u64) -> Result<Graph> {
    let graph_seed = if cfg.sweep.regenerate_per_seed { seed } else { sbm.seed };
    match &cfg.data {
        Some(files) => {
            let g = load_graph(&files.edges, &files.features, &files.labels)?;
            match &files.negative_edges {
                Some(path) => g.with_negative_edges(&read_edge_list(path)?),
                None => sample_negative_edges(g, cfg.sweep.negative_count, graph_seed),
            }
        }
        None => {
            let g = generate_sbm(&SbmConfig { seed: graph_seed, ..sbm.clone() })?;
            sample_negative_edges(g, cfg.sweep.negative_count, graph_seed)
        }
    }
}

/// Writes a generated SBM (with negatives) and its statistics.
pub fn run_sbm(cfg: &ExperimentConfig, out: &Path) -> Result<GraphStats> {
    let g = generate_sbm(&cfg.sbm)?;
    let g = sample_negative_edges(g, cfg.sweep.negative_count, cfg.sbm.seed)?;
    echo_config(cfg, out)?;
    write_edge_list(&out.join("edges.txt"), &g.undirected_pos())?;
    write_edge_list(&out.join("neg_edges.txt"), &g.undirected_neg())?;
    write_features(&out.join("features.csv"), &g.features)?;
    write_labels(&out.join("labels.csv"), &g.labels)?;
    let stats = compute_stats(&g)?;
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

/// Statistics of the configured graph (the data files if given, else the SBM).
pub fn run_stats(cfg: &ExperimentConfig, out: &Path) -> Result<GraphStats> {
    let g = match &cfg.data {
        Some(files) => load_graph(&files.edges, &files.features, &files.labels)?,
        None => generate_sbm(&cfg.sbm)?,
    };
    let stats = compute_stats(&g)?;
    echo_config(cfg, out)?;
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

// ---------------------------------------------------------------- runs

/// One (graph setting, label rate, model, seed) training job.
#[derive(Clone, Debug)]
pub struct Cell {
    pub experiment: String,
    /// Index into the group of graph settings the cell belongs to.
    pub group: usize,
    pub label_rate: f64,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub experiment: String,
    pub label_rate: f64,
    pub model: Variant,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub label_rate: f64,
    pub model: Variant,
    pub summary: Summary,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl Outcome {
    /// Median/quartiles per (experiment, label rate, model) in first-seen order.
    pub fn summaries(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, u64, Variant)> = Vec::new();
        let mut groups: BTreeMap<(String, u64, Variant), Vec<f64>> = BTreeMap::new();
        for r in &self.runs {
            let key = (r.experiment.clone(), r.metrics.label_rate.to_bits(), r.metrics.model);
            let accs = groups.entry(key.clone()).or_default();
            if accs.is_empty() {
                order.push(key);
            }
            accs.push(r.metrics.test_accuracy);
        }
        order
            .into_iter()
            .map(|key| {
                let summary = summarize(&groups[&key]).expect("non-empty group");
                SummaryRow { experiment: key.0, label_rate: f64::from_bits(key.1), model: key.2, summary }
            })
            .collect()
    }

    /// Median test accuracy of one group, if any run completed.
    pub fn median(&self, experiment: &str, label_rate: f64, model: Variant) -> Option<f64> {
        let accs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.experiment == experiment && r.metrics.label_rate == label_rate && r.metrics.model == model)
            .map(|r| r.metrics.test_accuracy)
            .collect();
        summarize(&accs).ok().map(|s| s.median)
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from(AGGREGATE_HEADER);
        s.push('\n');
        for r in &self.runs {
            let m = &r.metrics;
            let wall = m.wall_time_s.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.experiment, m.label_rate, m.model, m.seed, m.test_accuracy, m.best_val_epoch, wall);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for row in self.summaries() {
            let t = &row.summary;
            let _ = writeln!(s, "{},{},{},{},{},{},{}", row.experiment, row.label_rate, row.model, t.count, t.median, t.q25, t.q75);
        }
        s
    }
}

/// Options for where run artifacts go.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for per-run JSON, aggregate and summary CSVs.
    pub out: Option<PathBuf>,
    /// Write last-block embeddings and a checkpoint per run.
    pub dump_embeddings: bool,
}

fn run_slug(experiment: &str, variant: Variant, label_rate: f64, seed: u64) -> String {
    let exp: String = experiment.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    format!("{exp}__{variant}__r{label_rate}__s{seed}")
}

/// Embeddings of the last message-passing block for `model` on `graph`.
pub fn embed(model: &Model, graph: &Graph) -> Result<Tensor> {
    let index = crate::nn::GraphIndex::new(graph)?;
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &graph.features, &index)?;
    Ok(tape.value(fwd.embeddings).clone())
}

/// Trains every cell; `settings[cell.group]` gives the SBM for that cell.
///
/// Graphs and splits are materialized before the pool starts. Failed runs are
/// collected rather than aborting the batch.
pub fn run_cells(cfg: &ExperimentConfig, settings: &[SbmConfig], cells: &[Cell], opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let mut graphs: BTreeMap<(usize, u64), Graph> = BTreeMap::new();
    let mut splits: BTreeMap<(usize, u64, u64), Split> = BTreeMap::new();
    for c in cells {
        let gkey = (c.group, c.seed);
        if !graphs.contains_key(&gkey) {
            graphs.insert(gkey, build_graph(cfg, &settings[c.group], c.seed)?);
        }
        let skey = (c.group, c.label_rate.to_bits(), c.seed);
        if !splits.contains_key(&skey) {
            splits.insert(skey, make_split(&graphs[&gkey], c.label_rate, c.seed)?);
        }
    }
    if let Some(out) = &opts.out {
        for sub in ["runs", "embeddings", "checkpoints"] {
            if sub == "runs" || opts.dump_embeddings {
                let dir = out.join(sub);
                fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            }
        }
    }
    let results: Vec<std::result::Result<RunRecord, RunFailure>> = cells
        .par_iter()
        .map(|c| {
            let graph = &graphs[&(c.group, c.seed)];
            let split = &splits[&(c.group, c.label_rate.to_bits(), c.seed)];
            let spec = cfg.model.spec(graph.feature_dim(), graph.num_classes, c.variant);
            let fail = |e: Error| RunFailure {
                experiment: c.experiment.clone(),
                label_rate: c.label_rate,
                model: c.variant,
                seed: c.seed,
                error: e.to_string(),
            };
            let (metrics, model) = train(&spec, graph, split, &cfg.train, c.seed).map_err(fail)?;
            log::debug!("{} {} r={} seed={} test={:.4}", c.experiment, c.variant, c.label_rate, c.seed, metrics.test_accuracy);
            let record = RunRecord { experiment: c.experiment.clone(), metrics };
            if let Some(out) = &opts.out {
                let slug = run_slug(&c.experiment, c.variant, c.label_rate, c.seed);
                write_json(&out.join("runs").join(format!("{slug}.json")), &record).map_err(fail)?;
                if opts.dump_embeddings {
                    let emb = embed(&model, graph).map_err(fail)?;
                    write_embeddings(&out.join("embeddings").join(format!("{slug}.csv")), &emb, &graph.labels).map_err(fail)?;
                    save_checkpoint(&out.join("checkpoints").join(&slug), &model.params).map_err(fail)?;
                }
            }
            Ok(record)
        })
        .collect();
    let mut outcome = Outcome::default();
    for r in results {
        match r {
            Ok(rec) => outcome.runs.push(rec),
            Err(f) => {
                log::warn!("run {} {} r={} seed={} failed: {}", f.experiment, f.model, f.label_rate, f.seed, f.error);
                outcome.failures.push(f);
            }
        }
    }
    if let Some(out) = &opts.out {
        write_text(&out.join("aggregate.csv"), outcome.aggregate_csv())?;
        write_text(&out.join("summary.csv"), outcome.summary_csv())?;
        write_json(&out.join("failures.json"), &outcome.failures)?;
    }
    Ok(outcome)
}

fn grid(experiment: impl Fn(usize) -> String, groups: usize, rates: &[f64], cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for group in 0..groups {
        for &label_rate in rates {
            for &variant in &cfg.model.models {
                for &seed in &cfg.train.seeds {
                    cells.push(Cell { experiment: experiment(group), group, label_rate, variant, seed });
                }
            }
        }
    }
    cells
}

/// Every model × seed at `sweep.label_rate`.
pub fn train_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    grid(|_| "train".into(), 1, &[cfg.sweep.label_rate], cfg)
}

/// Label rates × models × seeds.
pub fn label_sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    grid(|_| "label_sweep".into(), 1, &cfg.sweep.label_rates, cfg)
}

/// The experiment tag of a heterophily cell.
pub fn heterophily_tag(p_out: f64) -> String {
    format!("heterophily:p_out={p_out}")
}

/// One SBM per `p_out` value, with `p_in` from `sbm`.
pub fn heterophily_settings(cfg: &ExperimentConfig) -> Vec<SbmConfig> {
    cfg.sweep.p_out_values.iter().map(|&p_out| SbmConfig { p_out, ..cfg.sbm.clone() }).collect()
}

/// `p_out` values × models × seeds at the heterophily label rate.
pub fn heterophily_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let p = &cfg.sweep.p_out_values;
    grid(|g| heterophily_tag(p[g]), p.len(), &[cfg.sweep.heterophily_label_rate], cfg)
}

pub fn run_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    start(cfg, opts)?;
    run_cells(cfg, std::slice::from_ref(&cfg.sbm), &train_cells(cfg), opts)
}

pub fn run_label_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    start(cfg, opts)?;
    run_cells(cfg, std::slice::from_ref(&cfg.sbm), &label_sweep_cells(cfg), opts)
}

pub fn run_heterophily_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    if cfg.data.is_some() {
        return Err(Error::Config("the heterophily sweep generates its own graphs; remove the data section".into()));
    }
    start(cfg, opts)?;
    let settings = heterophily_settings(cfg);
    for s in &settings {
        s.validate().map_err(|e| Error::Config(format!("sweep.p_out_values: {e}")))?;
    }
    run_cells(cfg, &settings, &heterophily_cells(cfg), opts)
}

/// Embeddings and checkpoints for every model on the first seed.
pub fn run_dump_embeddings(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut single = cfg.clone();
    single.train.seeds.truncate(1);
    let opts = RunOptions { out: Some(out.to_path_buf()), dump_embeddings: true };
    run_train(&single, &opts)
}

fn start(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    if let Some(out) = &opts.out {
        echo_config(cfg, out)?;
    }
    Ok(())
}
