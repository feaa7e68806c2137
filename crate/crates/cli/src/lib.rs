//! Command-line front end: synthetic cohort generation, training, evaluation,
//! explanation and grid search over JSONL cohorts.
//!
//! Usage errors exit with status 2. Runtime failures exit with status 1 and
//! print `{"error": {"kind": ..., "message": ...}}` on stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use trans_core::ehr::synth::{generate_synthetic_cohort, GeneratorConfig};
use trans_core::ehr::{
    build_vocabulary, build_vocabulary_with_grouping, load_cohort, load_label_grouping, samples_for_cohort,
    split_cohort, write_cohort, CodeVocabulary, PatientRecord, Sample,
};
use trans_core::explain::{aggregate_importance, ExplainOptions};
use trans_core::io_util::{write_atomic, write_json_atomic};
use trans_core::metrics::{aggregate_runs, evaluate_run, FrequencyPrior};
use trans_core::model::{
    grid_search, load_trained, prepare_samples, save_trained, score_prepared, train, ModelConfig, TrainOptions,
    TrainedModel,
};
use trans_core::par::Exec;
use trans_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "trans", version, about = "Temporal heterogeneous graph transformer for next-visit diagnosis prediction")]
struct Cli {
    /// Run every batch loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic cohort as JSONL.
    Generate {
        #[arg(long)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Probability of replacing a planted diagnosis with a random one.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Generator settings (JSON); flags above override it.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Also write the generator's ground truth here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train on the train split and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Two-column CSV mapping diagnosis codes to label groups.
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Independent runs with seeds `seed, seed+1, ...`, written to `run-00`, `run-01`, ...
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=100))]
        repeats: u32,
    },
    /// Score a split and write the metric report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30", value_parser = clap::value_parser!(u64).range(1..))]
        k: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Score the train-split frequency prior instead of the model.
        #[arg(long)]
        baseline: bool,
    },
    /// Rank codes by mean mask importance for one label group.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label: usize,
        #[arg(long, default_value_t = 10)]
        max_nodes: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, default_value_t = 0.005)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every point of a search space and keep the best by validation precision@10.
    Grid {
        /// Search space: JSON object of field name to list of values.
        #[arg(long)]
        space: PathBuf,
        /// Base configuration the points override.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Receives `grid.json` and the best checkpoint in `best/`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match run(cli.command, exec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            1
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::from_json(&read_text(p)?),
        None => Ok(ModelConfig::default()),
    }
}

struct Prepared {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn split_samples(records: &[PatientRecord], cfg: &ModelConfig, vocab: &CodeVocabulary) -> Result<Prepared> {
    let parts = split_cohort(records, cfg.split_ratios(), cfg.seed)?;
    Ok(Prepared {
        train: samples_for_cohort(&parts.train, vocab).samples,
        val: samples_for_cohort(&parts.val, vocab).samples,
        test: samples_for_cohort(&parts.test, vocab).samples,
    })
}

/// Vocabulary from the train split of `cfg`'s seeded partition.
fn train_vocabulary(records: &[PatientRecord], cfg: &ModelConfig, label_map: Option<&Path>) -> Result<CodeVocabulary> {
    let parts = split_cohort(records, cfg.split_ratios(), cfg.seed)?;
    match label_map {
        Some(p) => build_vocabulary_with_grouping(&parts.train, load_label_grouping(p)?),
        None => build_vocabulary(&parts.train, cfg.label_groups),
    }
}

fn pick(p: &Prepared, split: SplitName) -> &[Sample] {
    match split {
        SplitName::Train => &p.train,
        SplitName::Val => &p.val,
        SplitName::Test => &p.test,
    }
}

/// Checkpoint directories under `ckpt`: its `run-*` children, or itself.
fn checkpoint_dirs(ckpt: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(ckpt).map_err(|source| Error::Io {
        path: ckpt.to_path_buf(),
        source,
    })?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("run-")))
        .collect();
    runs.sort();
    if runs.is_empty() {
        runs.push(ckpt.to_path_buf());
    }
    Ok(runs)
}

fn run(command: Command, exec: Exec) -> Result<()> {
    let opts = |log_path: Option<PathBuf>| TrainOptions { exec, log_path };
    match command {
        Command::Generate {
            patients,
            seed,
            out,
            noise,
            generator,
            truth,
        } => {
            let mut gen = match generator {
                Some(p) => serde_json::from_str(&read_text(&p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => GeneratorConfig::default(),
            };
            gen.n_patients = patients;
            gen.noise = noise;
            let (records, ground_truth) = generate_synthetic_cohort(&gen, seed)?;
            write_cohort(&out, &records)?;
            if let Some(p) = truth {
                write_json_atomic(&p, &ground_truth)?;
            }
            info!("wrote {} patients to {}", records.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            label_map,
            repeats,
        } => {
            let base = read_config(config.as_deref())?;
            let records = load_cohort(&data, None)?.records;
            for r in 0..repeats {
                let mut cfg = base.clone();
                cfg.seed = base.seed + u64::from(r);
                let dir = if repeats == 1 { out.clone() } else { out.join(format!("run-{r:02}")) };
                let vocab = train_vocabulary(&records, &cfg, label_map.as_deref())?;
                let p = split_samples(&records, &cfg, &vocab)?;
                let trained = train(&p.train, &p.val, &vocab, &cfg, &opts(Some(dir.join("train_log.jsonl"))))?;
                save_trained(&dir, &trained)?;
                info!(
                    "run {r}: best epoch {}, validation precision@10 {:.4}",
                    trained.best_epoch, trained.best_val_metric
                );
            }
        }
        Command::Eval {
            ckpt,
            data,
            split,
            k,
            out,
            baseline,
        } => {
            let ks: Vec<usize> = k.into_iter().map(|x| x as usize).collect();
            let mut runs = Vec::new();
            for dir in checkpoint_dirs(&ckpt)? {
                let trained = load_trained(&dir)?;
                let cfg = &trained.model.config;
                let records = load_cohort(&data, Some(&trained.vocab))?.records;
                let p = split_samples(&records, cfg, &trained.vocab)?;
                let scored = if baseline {
                    FrequencyPrior::fit(&p.train)?.score(pick(&p, split))
                } else {
                    let prepared = prepare_samples(exec, pick(&p, split), &trained.vocab, cfg)?;
                    score_prepared(&trained.model, &prepared, exec)?
                };
                runs.push(evaluate_run(&scored, &ks)?);
            }
            write_json_atomic(&out, &aggregate_runs(&runs)?)?;
        }
        Command::Explain {
            ckpt,
            data,
            label,
            max_nodes,
            split,
            lambda,
            steps,
            lr,
            out,
        } => {
            let dir = checkpoint_dirs(&ckpt)?.remove(0);
            let TrainedModel { model, vocab, .. } = load_trained(&dir)?;
            let records = load_cohort(&data, Some(&vocab))?.records;
            let p = split_samples(&records, &model.config, &vocab)?;
            let prepared = prepare_samples(exec, pick(&p, split), &vocab, &model.config)?;
            let xopts = ExplainOptions {
                lambda,
                max_nodes,
                steps,
                lr,
                ..ExplainOptions::default()
            };
            let ranked = aggregate_importance(&model, &prepared, label, &xopts, exec)?;
            let mut csv = String::from("code,kind,mean_importance,count\n");
            for c in &ranked {
                csv.push_str(&format!("{},{},{},{}\n", quote(&c.code), c.kind.as_str(), c.mean_importance, c.count));
            }
            write_atomic(&out, csv.as_bytes())?;
        }
        Command::Grid {
            space,
            config,
            data,
            label_map,
            out,
        } => {
            let base = read_config(config.as_deref())?;
            let space: serde_json::Value = serde_json::from_str(&read_text(&space)?)?;
            let space = space
                .as_object()
                .ok_or_else(|| Error::Config("search space must be a JSON object".into()))?;
            let records = load_cohort(&data, None)?.records;
            let vocab = train_vocabulary(&records, &base, label_map.as_deref())?;
            let p = split_samples(&records, &base, &vocab)?;
            let (best, report) = grid_search(&p.train, &p.val, &vocab, &base, space, &opts(None))?;
            save_trained(&out.join("best"), &best)?;
            write_json_atomic(&out.join("grid.json"), &report)?;
        }
    }
    Ok(())
}

/// CSV field quoting for codes that contain separators or quotes.
fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
