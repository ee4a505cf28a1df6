use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use compgen::experiments::{self, probe_report, ExperimentConfig, ExperimentKind};
use compgen::factorization::{recover_from_table, ClassifyRule, Classifier};
use compgen::io::{export_embeddings, ingest_embeddings};
use compgen::metrics::pair_accuracy;
use compgen::probes::ProbeArch;
use compgen::synth_data::{generate, LabeledImageSet, SplitTag};
use compgen::trainer::{embed, train, TrainedModel};
use compgen::{build_nk_split, EmbeddingTable, Execution};

/// Exit code for command-line usage errors.
const USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "compgen", version, about = "Compositional generalization experiments in the (n, k) setting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    single_thread: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tag {
    Train,
    Test,
    Probe,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Nearest,
    Subspace,
}

impl From<Rule> for ClassifyRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Nearest => ClassifyRule::NearestReconstruction,
            Rule::Subspace => ClassifyRule::SubspaceProjection,
        }
    }
}

#[derive(Args)]
struct EmbeddingArgs {
    /// Matrix file: `CEMB` binary, or headerless CSV when it ends in `.csv`.
    #[arg(long)]
    matrix: PathBuf,
    /// Labels CSV (`index,c1,c2[,...]`).
    #[arg(long)]
    labels: PathBuf,
    /// Values per concept; inferred from the labels when omitted.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the (n, k) split as JSON.
    Split {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
    },
    /// Render one split of the synthetic dataset into a directory.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "train")]
        tag: Tag,
        /// Override the configured samples per cell.
        #[arg(long)]
        n_cell: Option<usize>,
    },
    /// Train an extractor on the (n, k) split and save it.
    Train {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Also export probe-set embeddings (`embeddings.cemb`, `labels.csv`).
        #[arg(long)]
        export: bool,
    },
    /// Recover factored concept vectors from the training cells of an
    /// embedding table and classify the held-out cells.
    Factorize {
        #[command(flatten)]
        emb: EmbeddingArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, value_enum, default_value = "nearest")]
        rule: Rule,
    },
    /// Full metric report for an embedding table.
    Metrics {
        #[command(flatten)]
        emb: EmbeddingArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Fit probes on the training cells, score on the held-out cells.
    Probe {
        #[command(flatten)]
        emb: EmbeddingArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Comma-separated architectures (linear, mlp_512, mlp_512_512).
        #[arg(long, value_delimiter = ',', default_value = "linear,mlp_512,mlp_512_512")]
        archs: Vec<String>,
    },
    /// Run an experiment suite and write results, summary and manifest.
    ///
    /// Without --config the built-in desk-scale configuration is used.
    Sweep { experiment: String },
    /// Run the minimal-compositional-learning check on synthetic embeddings.
    Prop1 {
        /// Values of n (default 3..=10).
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Noise levels (default 0).
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
    },
    /// Validate an exported embedding table; with --out, re-export it.
    Ingest {
        #[command(flatten)]
        emb: EmbeddingArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<compgen::Error>()
                .map_or(1, |c| c.code());
            ExitCode::from(code as u8)
        }
    }
}

fn exec(c: &Common) -> Execution {
    Execution::from_single_thread(c.single_thread)
}

/// Configuration from `--config`, else the desk-scale defaults for `kind`,
/// with `--seed` and `--out` applied.
fn config(c: &Common, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk_scale(kind),
    };
    if let Some(s) = c.seed {
        cfg.grid.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_table(e: &EmbeddingArgs) -> Result<EmbeddingTable> {
    Ok(ingest_embeddings(&e.matrix, &e.labels, e.n)?)
}

fn dispatch(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.cmd {
        Cmd::Split { n, k } => {
            let split = build_nk_split(n, k)?;
            emit(c.out.as_deref(), &split.to_json()?)
        }
        Cmd::Gen { n, k, tag, n_cell } => {
            let cfg = config(c, ExperimentKind::ThreePhase)?;
            let mut spec = cfg.dataset.clone();
            if let Some(nc) = n_cell {
                spec.n_cell = nc;
            }
            spec.seed = spec.seed.wrapping_add(cfg.grid.seeds[0]);
            let split = build_nk_split(n, k)?;
            let (combos, tag) = match tag {
                Tag::Train => (split.train_combos.clone(), SplitTag::Train),
                Tag::Test => (split.test_combos.clone(), SplitTag::Test),
                Tag::Probe => (split.full_grid(), SplitTag::Probe),
            };
            let set = generate(&spec, n, &combos, tag, exec(c))?;
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("data_{tag}")));
            set.save(&dir)?;
            println!("wrote {} images to {}", set.len(), dir.display());
            Ok(())
        }
        Cmd::Train { n, k, export } => {
            let cfg = config(c, ExperimentKind::ThreePhase)?;
            let seed = cfg.grid.seeds[0];
            let split = build_nk_split(n, k)?;
            if split.test_combos.is_empty() {
                bail!(compgen::Error::InvalidParameter(format!(
                    "k = n = {n} leaves no held-out combinations"
                )));
            }
            let mut spec = cfg.dataset.clone();
            spec.seed = spec.seed.wrapping_add(seed);
            let e = exec(c);
            let tr = generate(&spec, n, &split.train_combos, SplitTag::Train, e)?;
            let te = generate(&spec, n, &split.test_combos, SplitTag::Test, e)?;
            let mut ec = cfg.extractor.clone();
            ec.init_seed = ec.init_seed.wrapping_add(seed);
            let mut tc = cfg.train.clone();
            tc.shuffle_seed = tc.shuffle_seed.wrapping_add(seed);
            let model = train(&tr, &te, &ec, &tc)?;
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("model"));
            model.save(&dir)?;
            fs::write(dir.join("split.json"), split.to_json()?)?;
            if export {
                let mut ps = spec.clone();
                ps.n_cell = cfg.probe_n_cell;
                let probe = generate(&ps, n, &split.full_grid(), SplitTag::Probe, e)?;
                export_probe(&model, &probe, &dir)?;
            }
            let sel = model.selected().copied();
            println!(
                "{}",
                serde_json::json!({
                    "best_epoch": model.best_epoch,
                    "selected": sel,
                    "model_dir": dir,
                })
            );
            Ok(())
        }
        Cmd::Factorize { emb, k, rule } => {
            let table = load_table(&emb)?;
            let split = build_nk_split(table.n, k)?;
            let train = table.filter(|x| split.is_train(x));
            let test = table.filter(|x| !split.is_train(x));
            let model = recover_from_table(&train, &split.train_combos, k)?;
            let zs = if test.rows() > 0 {
                let pred = Classifier::new(&model, rule.into())?.classify_rows(&test.matrix, exec(c))?;
                Some(pair_accuracy(&test, &pred)?)
            } else {
                None
            };
            if let Some(out) = &c.out {
                fs::write(out, model.to_json()?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "n": table.n,
                    "k": k,
                    "design_rank": model.design_rank,
                    "residual": model.residual,
                    "zero_shot": zs,
                })
            );
            Ok(())
        }
        Cmd::Metrics { emb, k } => {
            let cfg = config(c, ExperimentKind::IngestProbe)?;
            let table = load_table(&emb)?;
            let split = build_nk_split(table.n, k)?;
            let dataset = emb.matrix.display().to_string();
            let out = probe_report(
                &table,
                &split,
                &[ProbeArch::Linear],
                &cfg.probe,
                cfg.grid.seeds[0],
                &dataset,
            )?;
            emit(c.out.as_deref(), &serde_json::to_string_pretty(&out.report)?)
        }
        Cmd::Probe { emb, k, archs } => {
            let cfg = config(c, ExperimentKind::IngestProbe)?;
            let archs = archs
                .iter()
                .map(|a| a.parse::<ProbeArch>())
                .collect::<compgen::Result<Vec<_>>>()?;
            let table = load_table(&emb)?;
            let split = build_nk_split(table.n, k)?;
            let dataset = emb.matrix.display().to_string();
            let out = probe_report(&table, &split, &archs, &cfg.probe, cfg.grid.seeds[0], &dataset)?;
            let per_arch: serde_json::Map<String, serde_json::Value> = out
                .per_arch
                .iter()
                .map(|(a, v)| (a.name().to_string(), serde_json::json!(v)))
                .collect();
            let json = serde_json::json!({
                "report": out.report,
                "best_arch": out.best_arch.name(),
                "heldout_acc": per_arch,
            });
            emit(c.out.as_deref(), &serde_json::to_string_pretty(&json)?)
        }
        Cmd::Sweep { experiment } => {
            let kind: ExperimentKind = experiment.parse()?;
            let cfg = config(c, kind)?;
            if cfg.experiment != kind {
                bail!(compgen::Error::Config(format!(
                    "config is for `{}`, not `{kind}`",
                    cfg.experiment
                )));
            }
            run_suite(&cfg, exec(c))
        }
        Cmd::Prop1 { n, noise } => {
            let mut cfg = config(c, ExperimentKind::Prop1)?;
            if !n.is_empty() {
                cfg.grid.n = n;
            }
            if !noise.is_empty() {
                cfg.grid.noise = noise;
            }
            run_suite(&cfg, exec(c))
        }
        Cmd::Ingest { emb } => {
            let table = load_table(&emb)?;
            let cells = table.rows_by_combo().len();
            let balanced = table.check_balanced_complete().ok();
            if let Some(dir) = &c.out {
                fs::create_dir_all(dir)?;
                export_embeddings(&table, dir.join("embeddings.cemb"), dir.join("labels.csv"))?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "rows": table.rows(),
                    "dim": table.dim(),
                    "n": table.n,
                    "cells": cells,
                    "per_cell": balanced,
                })
            );
            Ok(())
        }
    }
}

fn export_probe(model: &TrainedModel, probe: &LabeledImageSet, dir: &Path) -> Result<()> {
    let table = embed(model, probe)?;
    export_embeddings(&table, dir.join("embeddings.cemb"), dir.join("labels.csv"))?;
    Ok(())
}

fn run_suite(cfg: &ExperimentConfig, exec: Execution) -> Result<()> {
    let result = experiments::run(cfg, exec)?;
    let files = experiments::write_outputs(&cfg.output_dir, cfg, exec, &result)?;
    println!(
        "{} rows -> {}",
        result.rows.len(),
        files.results.display()
    );
    Ok(())
}
