//! Command-line entry point for the detection system: dataset generation,
//! pretraining, detection, evaluation, gradient checking and the closed-form
//! parameter count.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 check
//! failure.

mod config;
mod gradcheck;

use clap::{Parser, Subcommand};
use config::RunConfig;
use sgrl_core::error::Error;
use sgrl_core::graph;
use sgrl_core::metrics::{self, ScoredLabels};
use sgrl_core::pipeline;
use sgrl_core::{checkpoint, synth};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sgrl",
    about = "Black-market account detection: graph pretraining and scoring",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted black-market motifs.
    Generate {
        /// Output directory for edges.tsv / attrs.csv / labels.csv /
        /// ground_truth.csv.
        #[arg(long)]
        out: PathBuf,
        /// key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed overriding the configured seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the four encoders on a dataset directory.
    Pretrain {
        /// Directory holding edges.tsv, attrs.csv, labels.csv.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path (probe_history.tsv is written alongside).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score every node of a dataset with a pretrained checkpoint.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output scores.tsv path.
        #[arg(long)]
        out: PathBuf,
        /// Flagging threshold; defaults to the checkpoint's.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Metric report for a score file against labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Finite-difference verification of every training gradient.
    Gradcheck,
    /// Closed-form trainable parameter count of an encoder.
    Paramcount {
        #[arg(long)]
        l: usize,
        #[arg(long)]
        f1: usize,
        #[arg(long)]
        f2: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version as "errors" with success status
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Shape(_) | Error::Data(_) | Error::Io(_) | Error::Checkpoint(_) => 2,
        Error::Check(_) => 3,
    }
}

fn load_run_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.override_seed(s);
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { out, config, seed } => {
            let run_config = load_run_config(&config, seed)?;
            let data = synth::generate(&run_config.synth)?;
            synth::write_dataset(&out, &data)?;
            std::fs::write(out.join("config_used.txt"), run_config.render())?;
            println!(
                "wrote {} nodes / {} edges to {}",
                data.graph.node_count(),
                data.graph.edge_count(),
                out.display()
            );
            Ok(())
        }
        Command::Pretrain {
            data,
            out,
            config,
            seed,
        } => {
            let run_config = load_run_config(&config, seed)?;
            let graph = graph::load_dataset(&data)?;
            let result = pipeline::pretrain(&graph, &run_config.pipeline)?;
            checkpoint::save_checkpoint(&result.bundle, &out)?;
            let history_path = out
                .parent()
                .map(|d| d.join("probe_history.tsv"))
                .unwrap_or_else(|| PathBuf::from("probe_history.tsv"));
            let mut history = String::new();
            for (encoder, rows) in &result.probe_history {
                for (epoch, auc) in rows {
                    history.push_str(&format!("{encoder}\t{epoch}\t{auc:.6}\n"));
                }
            }
            std::fs::write(&history_path, history)?;
            print!("{}", run_config.render());
            println!("checkpoint={}", out.display());
            println!("probe_history={}", history_path.display());
            Ok(())
        }
        Command::Detect {
            model,
            data,
            out,
            threshold,
        } => {
            let mut bundle = checkpoint::load_checkpoint(&model)?;
            if let Some(t) = threshold {
                if !(0.0 < t && t < 1.0) {
                    return Err(Error::config(format!(
                        "threshold must lie in (0,1), got {t}"
                    )));
                }
                bundle.config.rho = t;
            }
            let graph = graph::load_dataset_optional_labels(&data)?;
            let report = pipeline::detect(&bundle, &graph)?;
            graph::write_scores_tsv(&out, &report.scores, &report.flags)?;
            println!("threshold={}", report.threshold);
            println!(
                "flagged={} of {} nodes",
                report.flags.iter().filter(|&&f| f).count(),
                report.scores.len()
            );
            Ok(())
        }
        Command::Eval {
            scores,
            labels,
            threshold,
        } => {
            let rows = graph::read_scores_tsv(&scores)?;
            let labels = graph::read_labels_csv(&labels)?;
            let by_node: std::collections::HashMap<u32, f64> =
                rows.iter().map(|&(n, s, _)| (n, s)).collect();
            let mut paired_scores = Vec::new();
            let mut paired_labels = Vec::new();
            for &(node, y) in &labels {
                if let Some(&s) = by_node.get(&node) {
                    paired_scores.push(s);
                    paired_labels.push(y);
                }
            }
            let scored = ScoredLabels::new(paired_scores, paired_labels)?;
            let auc = metrics::auc(&scored)?;
            let ks = metrics::ks(&scored)?;
            let cm = metrics::confusion_metrics(&scored, threshold)?;
            print!("{}", metrics::format_report(Some(auc), Some(ks), &cm));
            Ok(())
        }
        Command::Gradcheck => gradcheck::run_all(),
        Command::Paramcount { l, f1, f2 } => {
            if l < 2 || f1 == 0 || f2 == 0 {
                return Err(Error::config(
                    "paramcount needs l >= 2 and positive widths".to_string(),
                ));
            }
            println!("{}", sgrl_core::encoder::param_count(l, f1, f2));
            Ok(())
        }
    }
}
