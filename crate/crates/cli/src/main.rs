use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmp_core::experiment::{self, ExperimentConfig, Outcome, Preset, RunOptions};
use cmp_core::Error;

/// Contrastive message passing experiments.
#[derive(Parser, Debug)]
#[command(name = "cmp", version, about)]
struct Cli {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Named preset applied on top of the config (`small`).
    #[arg(long, global = true)]
    preset: Option<Preset>,

    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Run only this seed (also used for the graph).
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Information-gain grid over homophily, label rate and density.
    Theory {
        /// Fail if any expected monotone trend is violated.
        #[arg(long)]
        check_trends: bool,
    },
    /// Generate an SBM with negative edges and its statistics.
    Sbm,
    /// Graph statistics for the data files (or the configured SBM).
    Stats,
    /// Train every configured model over every seed.
    Train {
        /// Also write last-block embeddings and checkpoints.
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Label rates × models × seeds.
    SweepLabels,
    /// Inter-community edge probabilities × models × seeds.
    SweepHeterophily,
    /// Train on the first seed and write embeddings plus checkpoints.
    DumpEmbeddings,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_EMPTY: u8 = 3;
const EXIT_RUN: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Empty(_) => EXIT_EMPTY,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::NonFinite { .. } | Error::EigNoConvergence { .. } => EXIT_RUN,
        _ => EXIT_CONFIG,
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = cli.preset {
        cfg.apply_preset(p);
    }
    if let Some(seed) = cli.seed_override {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(outcome: &Outcome) -> u8 {
    for row in outcome.summaries() {
        let s = row.summary;
        println!(
            "{:<28} r={:<5} {:<20} median {:.4} [{:.4}, {:.4}] n={}",
            row.experiment, row.label_rate, row.model.to_string(), s.median, s.q25, s.q75, s.count
        );
    }
    if outcome.failures.is_empty() {
        0
    } else {
        for f in &outcome.failures {
            eprintln!("run failed: {} {} r={} seed={}: {}", f.experiment, f.model, f.label_rate, f.seed, f.error);
        }
        EXIT_RUN
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let cfg = resolve(cli)?;
    let out = &cli.out;
    let opts = RunOptions { out: Some(out.clone()), dump_embeddings: false };
    Ok(match cli.command {
        Command::Theory { check_trends } => {
            let t = experiment::run_theory(&cfg, out)?;
            println!("{} grid points ({} skipped) -> {}", t.sweep.rows.len(), t.sweep.skipped.len(), out.join("theory.csv").display());
            if check_trends && !t.violations.is_empty() {
                for v in &t.violations {
                    eprintln!("trend violated: {v:?}");
                }
                1
            } else {
                0
            }
        }
        Command::Sbm => {
            let stats = experiment::run_sbm(&cfg, out)?;
            println!("{stats:?}");
            0
        }
        Command::Stats => {
            let stats = experiment::run_stats(&cfg, out)?;
            println!("{stats:?}");
            0
        }
        Command::Train { dump_embeddings } => report(&experiment::run_train(&cfg, &RunOptions { dump_embeddings, ..opts })?),
        Command::SweepLabels => report(&experiment::run_label_sweep(&cfg, &opts)?),
        Command::SweepHeterophily => report(&experiment::run_heterophily_sweep(&cfg, &opts)?),
        Command::DumpEmbeddings => report(&experiment::run_dump_embeddings(&cfg, out)?),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
