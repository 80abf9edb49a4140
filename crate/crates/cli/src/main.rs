//! Pipeline driver: corpus generation, training, synthesis, evaluation,
//! the experiment matrix and the gradient/oracle self-check suite.
//!
//! Machine-readable summaries go to stdout; human progress goes to stderr.
//! Exit codes: 0 ok, 1 check failure, 2 config error, 3 I/O, 4 checkpoint
//! integrity.

mod selfcheck;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use foundtts::config::ConfigFile;
use foundtts::corpus::{build_corpus, CorpusManifest};
use foundtts::error::Error;
use foundtts::eval::matrix::run_experiment_matrix;
use foundtts::eval::{compute_report, evaluate};
use foundtts::model::ConditionVector;
use foundtts::train::{checkpoint, train};

const EXIT_CHECK_FAILURE: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_IO: i32 = 3;
const EXIT_CHECKPOINT: i32 = 4;

#[derive(Parser)]
#[command(
    name = "foundtts",
    about = "Seq2seq speech synthesis on noisy found data, at desk scale",
    version
)]
struct Cli {
    /// Worker threads for corpus generation and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file (TOML with [corpus]/[model]/[train]/[eval]/[matrix]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Relative paths resolve under $FOUNDTTS_OUT_ROOT
    /// when that variable is set.
    #[arg(long)]
    out: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic found-data corpus.
    GenCorpus {
        #[command(flatten)]
        common: CommonArgs,
        /// Overwrite an existing corpus directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one system on a corpus manifest.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Path to manifest.jsonl (or its directory).
        #[arg(long)]
        manifest: PathBuf,
        /// Enable the clustering branch.
        #[arg(long)]
        vq: bool,
        /// Enable the adversarial branch.
        #[arg(long)]
        adversarial: bool,
        /// Attention mechanism: gmm or lsa.
        #[arg(long)]
        attention: Option<String>,
        /// Override training steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Synthesize mel frames from a symbol sequence.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Space-separated symbol ids, e.g. "3 1 24 9".
        #[arg(long)]
        text: String,
        /// Condition flag: clean or noisy.
        #[arg(long, default_value = "clean")]
        condition: String,
        /// Hard length cap in frames.
        #[arg(long, default_value_t = 600)]
        max_frames: usize,
    },
    /// Evaluate a checkpoint on the reserved split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// System label stamped into the report.
        #[arg(long, default_value = "system")]
        system: String,
        /// Recompute the report from existing artifacts instead of
        /// synthesizing again.
        #[arg(long)]
        recompute: bool,
    },
    /// Train and evaluate a grid of systems.
    Matrix {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated cells (A,B,C,D,E,F,G,H,VQVAE_A,VQVAE_D,ADV_SEN,ADV_FRAME).
        #[arg(long)]
        cells: Option<String>,
    },
    /// Run the gradient-contract and metric-oracle self checks.
    Selfcheck {
        /// Deliberately break a contract to prove the checks can fail
        /// (supported: grl-sign).
        #[arg(long, hide = true)]
        sabotage: Option<String>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument { .. } | Error::UnknownSymbol(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Audio(_) | Error::Json(_) => EXIT_IO,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_CHECK_FAILURE,
    }
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("FOUNDTTS_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn load_config(common: &CommonArgs) -> Result<ConfigFile, Error> {
    let mut cfg = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn echo_config(cfg: &ConfigFile, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.echo.toml");
    std::fs::write(&path, cfg.echo()?).map_err(|e| Error::io(path, e))
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.jsonl")
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenCorpus { common, force } => {
            let cfg = load_config(&common)?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            let out = resolve_out(&common.out);
            if out.join("manifest.jsonl").exists() && !force {
                return Err(Error::config(format!(
                    "{} already holds a corpus; pass --force to overwrite",
                    out.display()
                )));
            }
            echo_config(&cfg, &out)?;
            eprintln!("generating corpus into {} (seed {seed})", out.display());
            let manifest = build_corpus(&cfg.corpus, seed, &out)?;
            let (clean, noisy) = manifest.label_counts();
            println!(
                "{}",
                serde_json::json!({
                    "manifest": out.join("manifest.jsonl"),
                    "records": manifest.records.len(),
                    "clean": clean,
                    "noisy": noisy,
                    "seed": seed,
                })
            );
            Ok(())
        }
        Command::Train {
            common,
            manifest,
            vq,
            adversarial,
            attention,
            max_steps,
        } => {
            let cfg = load_config(&common)?;
            let mut tc = cfg.to_train_config();
            if vq {
                tc.mode.vq = true;
            }
            if adversarial {
                tc.mode.adversarial = true;
            }
            if let Some(att) = attention {
                tc.model.attention = match att.as_str() {
                    "gmm" => foundtts::model::AttentionKind::Gmm,
                    "lsa" => foundtts::model::AttentionKind::Lsa,
                    other => {
                        return Err(Error::config(format!(
                            "unknown attention {other:?}; expected gmm or lsa"
                        )))
                    }
                };
            }
            if let Some(steps) = max_steps {
                tc.max_steps = steps;
            }
            if let Some(seed) = common.seed {
                tc.seed = seed;
            }
            let out = resolve_out(&common.out);
            echo_config(&cfg, &out)?;
            let manifest = CorpusManifest::load(&manifest_path(&manifest))?;
            eprintln!(
                "training {} system for {} steps into {}",
                tc.mode.label(),
                tc.max_steps,
                out.display()
            );
            let outcome = train(&manifest, &tc, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": outcome.checkpoint,
                    "steps": outcome.steps,
                    "final_loss": outcome.final_loss,
                    "log": outcome.log_path,
                    "codebook_health": outcome.codebook_health,
                })
            );
            Ok(())
        }
        Command::Synth {
            common,
            checkpoint: ckpt_path,
            text,
            condition,
            max_frames,
        } => {
            let cfg = load_config(&common)?;
            let out = resolve_out(&common.out);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (model, header) = checkpoint::load(&ckpt_path)?;
            let symbols: Result<Vec<u16>, Error> = text
                .split_whitespace()
                .map(|t| {
                    t.parse::<u16>()
                        .map_err(|_| Error::config(format!("bad symbol id {t:?} in --text")))
                })
                .collect();
            let symbols = symbols?;
            let noise_flag = match condition.as_str() {
                "clean" => 0,
                "noisy" => 1,
                other => {
                    return Err(Error::config(format!(
                        "unknown condition {other:?}; expected clean or noisy"
                    )))
                }
            };
            let seed = common.seed.unwrap_or(0);
            let synth = model.synthesize(
                &symbols,
                ConditionVector {
                    speaker: 0,
                    noise_flag,
                },
                max_frames,
                seed,
            )?;
            let mel = foundtts::dsp::MelSpectrogram {
                frames: synth.mel.clone(),
                hop_ms: cfg.corpus.mel.hop_ms,
                window_ms: cfg.corpus.mel.window_ms,
                sample_rate: cfg.corpus.sample_rate,
            };
            let mel_path = out.join("synth.mel");
            foundtts::corpus::files::write_mel(&mel_path, &mel)?;
            // Decode the output back to symbols with the template matcher.
            let inventory = foundtts::corpus::SymbolInventory::build(
                cfg.corpus.inventory.clone(),
                cfg.corpus.mel.clone(),
                cfg.corpus.sample_rate,
            )?;
            let decoded = foundtts::eval::decode_symbols(&mel, &inventory, cfg.eval.min_run);
            println!(
                "{}",
                serde_json::json!({
                    "mel": mel_path,
                    "frames": synth.mel.nrows(),
                    "truncated": synth.truncated,
                    "decoded_symbols": decoded,
                    "checkpoint_step": header.step,
                })
            );
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint: ckpt_path,
            manifest,
            system,
            recompute,
        } => {
            let cfg = load_config(&common)?;
            let out = resolve_out(&common.out);
            let manifest = CorpusManifest::load(&manifest_path(&manifest))?;
            let mut eval_cfg = cfg.eval.clone();
            if let Some(seed) = common.seed {
                eval_cfg.seed = seed;
            }
            let report = if recompute {
                compute_report(&system, &manifest, &eval_cfg, &out)?
            } else {
                echo_config(&cfg, &out)?;
                let (model, _) = checkpoint::load(&ckpt_path)?;
                eprintln!("evaluating {} into {}", system, out.display());
                evaluate(&system, &model, &manifest, &eval_cfg, &out)?
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Matrix { common, cells } => {
            let cfg = load_config(&common)?;
            let out = resolve_out(&common.out);
            echo_config(&cfg, &out)?;
            let cells: Vec<String> = cells
                .map(|c| c.split(',').map(|s| s.trim().to_string()).collect())
                .unwrap_or_else(|| cfg.matrix.cells.clone());
            let seed = common.seed.unwrap_or(cfg.train.seed);
            eprintln!("running matrix cells {:?} into {}", cells, out.display());
            let results = run_experiment_matrix(
                &cells,
                &cfg.corpus,
                &cfg.to_train_config(),
                &cfg.eval,
                seed,
                &out,
            )?;
            eprint!("{}", foundtts::eval::matrix::format_table(&results));
            println!("{}", serde_json::to_string_pretty(&results)?);
            if results.iter().any(|r| r.error.is_some()) {
                std::process::exit(EXIT_CHECK_FAILURE);
            }
            Ok(())
        }
        Command::Selfcheck { sabotage } => {
            let report = selfcheck::run(sabotage.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.iter().any(|c| !c.passed) {
                std::process::exit(EXIT_CHECK_FAILURE);
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .ok();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
