//! Evaluation battery: free-running synthesis over the reserved split,
//! DTW-aligned mel-cepstral distortion against clean references, the
//! template-matching generation-error oracle, the noise-detectability probe
//! and attention diagnostics. Every artifact lands on disk first and the
//! report is then computed from the files alone.

pub mod matrix;
pub mod probe;
pub mod template;

pub use probe::{noise_probe, ProbeConfig, ProbeReport};
pub use template::{cger_oracle, classify_frame, decode_symbols};

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{files, CorpusManifest, Split, SymbolInventory};
use crate::dsp::{mcd, MelSpectrogram};
use crate::error::{Error, Result};
use crate::model::{ConditionVector, Graph, Seq2SeqModel, TrainUtterance};
use crate::vq::CodebookHealth;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Synthesis length cap as a multiple of the reference length.
    pub max_frames_factor: f64,
    /// Minimum run length in the template decoder.
    pub min_run: usize,
    /// Labeled utterances fed to the noise probe.
    pub probe_utterances: usize,
    pub probe_train_fraction: f64,
    pub probe_steps: u64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_frames_factor: 3.0,
            min_run: 2,
            probe_utterances: 40,
            probe_train_fraction: 0.7,
            probe_steps: 300,
            seed: 0,
        }
    }
}

/// Aggregated generation-error counts over an eval set.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct CgerCounts {
    pub substituted: usize,
    pub deleted: usize,
    pub inserted: usize,
    pub total_reference_symbols: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub system: String,
    /// Transcript CER of the target speaker's training records, recomputed
    /// by edit distance from the manifest.
    pub corpus_cer: f64,
    /// Mean MCD of synthesized mels against clean references.
    pub mcd_mean: f64,
    /// Mean MCD against the noisy (conditioned) references, when they exist.
    pub mcd_vs_noisy_mean: Option<f64>,
    pub cger: CgerCounts,
    pub noise_probe: Option<ProbeReport>,
    /// Fraction of decoding steps whose expected attention position did not
    /// move backward.
    pub attention_monotonicity: f64,
    /// All GMM means non-decreasing at every step (GMM attention only).
    pub gmm_means_monotone: Option<bool>,
    /// Fraction of eval utterances that hit the length cap.
    pub truncation_rate: f64,
    pub codebook_health: Option<CodebookHealth>,
    /// Majority-vote purity of codebook indices against aligned reference
    /// symbols (VQ systems only).
    pub codebook_purity: Option<f64>,
    pub n_eval_utterances: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct SynthInfo {
    truncated: bool,
    mu_monotone: Option<bool>,
    frames: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ProbeIndexEntry {
    id: String,
    label: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct VqAssignLog {
    indices: Vec<usize>,
    symbols: Vec<u16>,
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mel = MelSpectrogram {
        frames: m.clone(),
        hop_ms: 0.0,
        window_ms: 0.0,
        sample_rate: 0,
    };
    files::write_mel(path, &mel)
}

/// Synthesize the eval split and write every scoring artifact under
/// `out_dir`: generated mels, attention matrices, per-utterance info,
/// probe features and codebook assignment logs.
pub fn emit_artifacts(
    model: &Seq2SeqModel,
    manifest: &CorpusManifest,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<()> {
    for sub in ["synth", "probe", "vq"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    let eval_records: Vec<_> = manifest.records_in(Split::Eval).collect();
    if eval_records.is_empty() {
        return Err(Error::config("manifest has no eval split"));
    }

    // Free-running synthesis from golden text, clean condition.
    eval_records
        .par_iter()
        .map(|r| -> Result<()> {
            let ref_frames: usize = r.durations.iter().sum();
            let max_frames = ((ref_frames as f64 * cfg.max_frames_factor).ceil() as usize).max(8);
            let out = model.synthesize(
                &r.ref_symbols,
                ConditionVector {
                    speaker: 0,
                    noise_flag: 0,
                },
                max_frames,
                cfg.seed ^ fnv(&r.id),
            )?;
            let mel = MelSpectrogram {
                frames: out.mel.clone(),
                hop_ms: manifest.header.config.mel.hop_ms,
                window_ms: manifest.header.config.mel.window_ms,
                sample_rate: manifest.header.config.sample_rate,
            };
            files::write_mel(&out_dir.join(format!("synth/{}.mel", r.id)), &mel)?;
            write_matrix(&out_dir.join(format!("synth/{}.align", r.id)), &out.alignments)?;
            let mu_monotone = out.mu_trace.as_ref().map(|trace| {
                trace.windows(2).all(|w| {
                    w[0].iter().zip(w[1].iter()).all(|(a, b)| b >= a)
                })
            });
            let info = SynthInfo {
                truncated: out.truncated,
                mu_monotone,
                frames: out.mel.nrows(),
            };
            let path = out_dir.join(format!("synth/{}.info.json", r.id));
            std::fs::write(&path, serde_json::to_vec_pretty(&info)?)
                .map_err(|e| Error::io(path, e))?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;

    // Probe features: teacher-forced latents for a stratified labeled
    // subset of the training split.
    if model.mode.adversarial {
        let mut clean: Vec<_> = manifest
            .records_in(Split::Train)
            .filter(|r| !r.noise.is_noisy())
            .collect();
        let mut noisy: Vec<_> = manifest
            .records_in(Split::Train)
            .filter(|r| r.noise.is_noisy())
            .collect();
        clean.sort_by(|a, b| a.id.cmp(&b.id));
        noisy.sort_by(|a, b| a.id.cmp(&b.id));
        let half = cfg.probe_utterances / 2;
        let subset: Vec<_> = clean
            .into_iter()
            .take(half)
            .chain(noisy.into_iter().take(half))
            .collect();
        if subset.iter().any(|r| !r.noise.is_noisy()) && subset.iter().any(|r| r.noise.is_noisy())
        {
            let index: Vec<ProbeIndexEntry> = subset
                .iter()
                .map(|r| ProbeIndexEntry {
                    id: r.id.clone(),
                    label: r.noise.label(),
                })
                .collect();
            subset
                .par_iter()
                .map(|r| -> Result<()> {
                    let mel = files::read_mel(&manifest.path_of(&r.mel))?;
                    let speaker_idx = manifest
                        .header
                        .config
                        .speakers
                        .iter()
                        .position(|s| s.name == r.speaker)
                        .unwrap_or(0);
                    let mut g = Graph::new(&model.store);
                    let frames = mel.frames.nrows();
                    let utt = TrainUtterance {
                        symbols: &r.transcript,
                        mel_target: &mel.frames,
                        frames,
                        padded_frames: frames,
                        condition: ConditionVector {
                            speaker: speaker_idx,
                            noise_flag: r.noise.label(),
                        },
                        noise_label: r.noise.label(),
                        dropout_seed: cfg.seed ^ fnv(&r.id),
                    };
                    let out = model.forward_training(&mut g, &utt)?;
                    let z = out
                        .z_s
                        .ok_or_else(|| Error::invalid("emit_artifacts", "no adversarial latents"))?;
                    write_matrix(&out_dir.join(format!("probe/{}.zs", r.id)), &z)
                })
                .collect::<Result<Vec<()>>>()?;
            let path = out_dir.join("probe/index.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&index)?)
                .map_err(|e| Error::io(path, e))?;
        }
    }

    // Codebook assignment logs: teacher-forced on clean references with
    // golden symbols, labeled per frame by the owning symbol.
    if model.mode.vq {
        eval_records
            .par_iter()
            .map(|r| -> Result<()> {
                let mel = files::read_mel(&manifest.path_of(&r.clean_mel))?;
                let mut g = Graph::new(&model.store);
                let frames = mel.frames.nrows();
                let utt = TrainUtterance {
                    symbols: &r.ref_symbols,
                    mel_target: &mel.frames,
                    frames,
                    padded_frames: frames,
                    condition: ConditionVector {
                        speaker: 0,
                        noise_flag: 0,
                    },
                    noise_label: 0,
                    dropout_seed: cfg.seed ^ fnv(&r.id),
                };
                let out = model.forward_training(&mut g, &utt)?;
                let mut frame_symbols = Vec::with_capacity(frames);
                for (sym, dur) in r.ref_symbols.iter().zip(r.durations.iter()) {
                    frame_symbols.extend(std::iter::repeat(*sym).take(*dur));
                }
                frame_symbols.truncate(frames);
                while frame_symbols.len() < frames {
                    frame_symbols.push(*r.ref_symbols.last().unwrap());
                }
                let log = VqAssignLog {
                    indices: out.vq_indices,
                    symbols: frame_symbols,
                };
                let path = out_dir.join(format!("vq/{}.assign.json", r.id));
                std::fs::write(&path, serde_json::to_vec_pretty(&log)?)
                    .map_err(|e| Error::io(path, e))
            })
            .collect::<Result<Vec<()>>>()?;
    }
    Ok(())
}

/// Expected attention position per step, and whether each step moved
/// backward by more than half a position.
fn monotonicity_score(align: &Array2<f64>) -> f64 {
    if align.nrows() < 2 {
        return 1.0;
    }
    let expected: Vec<f64> = align
        .rows()
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(i, &w)| i as f64 * w).sum())
        .collect();
    let forward_steps = expected
        .windows(2)
        .filter(|w| w[1] >= w[0] - 0.5)
        .count();
    forward_steps as f64 / (expected.len() - 1) as f64
}

/// Compute the report purely from emitted artifacts plus the manifest; the
/// model itself is not consulted.
pub fn compute_report(
    system: &str,
    manifest: &CorpusManifest,
    cfg: &EvalConfig,
    artifacts_dir: &Path,
) -> Result<EvalReport> {
    let inventory = SymbolInventory::build(
        manifest.header.config.inventory.clone(),
        manifest.header.config.mel.clone(),
        manifest.header.config.sample_rate,
    )?;
    let mut eval_records: Vec<_> = manifest.records_in(Split::Eval).collect();
    eval_records.sort_by(|a, b| a.id.cmp(&b.id));
    if eval_records.is_empty() {
        return Err(Error::config("manifest has no eval split"));
    }

    // Corpus CER over the target speaker's training records, recomputed.
    let target = &manifest.header.config.speakers[0].name;
    let (mut edits, mut total) = (0usize, 0usize);
    for r in manifest
        .records_in(Split::Train)
        .filter(|r| &r.speaker == target)
    {
        edits += crate::dsp::levenshtein(&r.ref_symbols, &r.transcript).total_edits();
        total += r.ref_symbols.len();
    }
    let corpus_cer = if total > 0 { edits as f64 / total as f64 } else { 0.0 };

    struct PerUtt {
        mcd_clean: f64,
        mcd_noisy: Option<f64>,
        edit: crate::dsp::EditSummary,
        monotonicity: f64,
        info: SynthInfo,
    }
    let per_utt: Result<Vec<PerUtt>> = eval_records
        .par_iter()
        .map(|r| {
            let synth = files::read_mel(&artifacts_dir.join(format!("synth/{}.mel", r.id)))?;
            let clean_ref = files::read_mel(&manifest.path_of(&r.clean_mel))?;
            let mcd_clean = mcd(&clean_ref, &synth)?;
            let mcd_noisy = if r.noise.is_noisy() {
                let noisy_ref = files::read_mel(&manifest.path_of(&r.mel))?;
                Some(mcd(&noisy_ref, &synth)?)
            } else {
                None
            };
            let edit = cger_oracle(&synth, &r.ref_symbols, &inventory, cfg.min_run)?;
            let align = files::read_mel(&artifacts_dir.join(format!("synth/{}.align", r.id)))?;
            let info_path = artifacts_dir.join(format!("synth/{}.info.json", r.id));
            let info: SynthInfo = serde_json::from_slice(
                &std::fs::read(&info_path).map_err(|e| Error::io(&info_path, e))?,
            )?;
            Ok(PerUtt {
                mcd_clean,
                mcd_noisy,
                edit,
                monotonicity: monotonicity_score(&align.frames),
                info,
            })
        })
        .collect();
    let per_utt = per_utt?;

    let n = per_utt.len();
    let mcd_mean = per_utt.iter().map(|u| u.mcd_clean).sum::<f64>() / n as f64;
    let noisy_mcds: Vec<f64> = per_utt.iter().filter_map(|u| u.mcd_noisy).collect();
    let mcd_vs_noisy_mean = if noisy_mcds.is_empty() {
        None
    } else {
        Some(noisy_mcds.iter().sum::<f64>() / noisy_mcds.len() as f64)
    };
    let mut cger = CgerCounts::default();
    for u in &per_utt {
        cger.substituted += u.edit.substitutions;
        cger.deleted += u.edit.deletions;
        cger.inserted += u.edit.insertions;
        cger.total_reference_symbols += u.edit.reference_length;
    }
    cger.rate = (cger.substituted + cger.deleted + cger.inserted) as f64
        / cger.total_reference_symbols as f64;
    let attention_monotonicity =
        per_utt.iter().map(|u| u.monotonicity).sum::<f64>() / n as f64;
    let gmm_means_monotone = {
        let flags: Vec<bool> = per_utt.iter().filter_map(|u| u.info.mu_monotone).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().all(|&b| b))
        }
    };
    let truncation_rate =
        per_utt.iter().filter(|u| u.info.truncated).count() as f64 / n as f64;

    // Probe from emitted features.
    let probe_index_path = artifacts_dir.join("probe/index.json");
    let noise_probe = if probe_index_path.exists() {
        let index: Vec<ProbeIndexEntry> = serde_json::from_slice(
            &std::fs::read(&probe_index_path).map_err(|e| Error::io(&probe_index_path, e))?,
        )?;
        let mut items = Vec::with_capacity(index.len());
        for e in &index {
            let z = files::read_mel(&artifacts_dir.join(format!("probe/{}.zs", e.id)))?;
            items.push((z.frames, e.label));
        }
        Some(probe::noise_probe(
            &items,
            &ProbeConfig {
                train_fraction: cfg.probe_train_fraction,
                steps: cfg.probe_steps,
                seed: cfg.seed ^ 0x50524f42,
                ..ProbeConfig::default()
            },
        )?)
    } else {
        None
    };

    // Codebook purity and usage from assignment logs.
    let (codebook_health, codebook_purity) = {
        let mut pairs: Vec<(usize, u16)> = Vec::new();
        for r in &eval_records {
            let p = artifacts_dir.join(format!("vq/{}.assign.json", r.id));
            if !p.exists() {
                continue;
            }
            let log: VqAssignLog =
                serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
            pairs.extend(log.indices.iter().cloned().zip(log.symbols.iter().cloned()));
        }
        if pairs.is_empty() {
            (None, None)
        } else {
            let k = pairs.iter().map(|(i, _)| *i).max().unwrap() + 1;
            let mut counts = vec![0u64; k];
            let mut votes: Vec<std::collections::BTreeMap<u16, usize>> = vec![Default::default(); k];
            for (i, s) in &pairs {
                counts[*i] += 1;
                *votes[*i].entry(*s).or_default() += 1;
            }
            let total: u64 = counts.iter().sum();
            let mut entropy = 0.0;
            for &c in counts.iter().filter(|&&c| c > 0) {
                let p = c as f64 / total as f64;
                entropy -= p * p.ln();
            }
            let majority: usize = votes
                .iter()
                .map(|v| v.values().max().cloned().unwrap_or(0))
                .sum();
            (
                Some(CodebookHealth {
                    perplexity: entropy.exp(),
                    dead_entry_count: counts.iter().filter(|&&c| c == 0).count(),
                }),
                Some(majority as f64 / pairs.len() as f64),
            )
        }
    };

    Ok(EvalReport {
        system: system.to_string(),
        corpus_cer,
        mcd_mean,
        mcd_vs_noisy_mean,
        cger,
        noise_probe,
        attention_monotonicity,
        gmm_means_monotone,
        truncation_rate,
        codebook_health,
        codebook_purity,
        n_eval_utterances: n,
    })
}

/// Full evaluation: emit artifacts, compute the report from them, and write
/// `report.json` alongside.
pub fn evaluate(
    system: &str,
    model: &Seq2SeqModel,
    manifest: &CorpusManifest,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalReport> {
    emit_artifacts(model, manifest, cfg, out_dir)?;
    let report = compute_report(system, manifest, cfg, out_dir)?;
    let path = out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(path, e))?;
    Ok(report)
}
