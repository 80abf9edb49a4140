//! Training orchestration: dataset assembly from a corpus manifest, batched
//! teacher-forced passes with data-parallel gradient computation and a
//! deterministic reduction, Adam updates with global-norm clipping, loss
//! logging and periodic checkpoints.

mod adam;
pub mod checkpoint;

pub use adam::{clip_global_norm, Adam};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{files, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::model::{
    ConditionVector, Graph, LossValues, ModelConfig, Seq2SeqModel, TrainUtterance, TrainingMode,
};
use crate::vq::VqUsage;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Multiplicative decay applied every step.
    pub lr_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Train on auxiliary speakers too. Unset: only with the adversarial
    /// branch, which needs the clean-speaker augmentation.
    pub include_aux: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainingMode::baseline(),
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            lr_decay: 0.9995,
            grad_clip_norm: 1.0,
            batch_size: 8,
            max_steps: 2000,
            seed: 1,
            checkpoint_every: 500,
            log_every: 25,
            include_aux: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::config("batch_size and max_steps must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::config("bad learning rate or decay"));
        }
        Ok(())
    }

    fn uses_aux(&self) -> bool {
        self.include_aux.unwrap_or(self.mode.adversarial)
    }
}

/// One loaded training utterance.
pub struct TrainItem {
    pub id: String,
    pub symbols: Vec<u16>,
    pub mel: Array2<f64>,
    pub speaker_idx: usize,
    pub noise_label: usize,
}

/// Materialized training set plus speaker table.
pub struct Dataset {
    pub items: Vec<TrainItem>,
    pub speakers: Vec<String>,
    pub vocab: usize,
}

/// Load the training split. Training always reads the (possibly corrupted)
/// transcript and the conditioned mel; golden references stay untouched
/// until evaluation.
pub fn load_dataset(manifest: &CorpusManifest, config: &TrainConfig) -> Result<Dataset> {
    let speakers: Vec<String> = manifest
        .header
        .config
        .speakers
        .iter()
        .map(|s| s.name.clone())
        .collect();
    let target = speakers[0].clone();
    let vocab = manifest.header.config.inventory.n_phonemes + 2;

    let records: Vec<_> = manifest
        .records_in(Split::Train)
        .filter(|r| config.uses_aux() || r.speaker == target)
        .collect();
    if records.is_empty() {
        return Err(Error::config("no training records selected"));
    }
    if config.mode.adversarial {
        let has_clean = records.iter().any(|r| !r.noise.is_noisy());
        let has_noisy = records.iter().any(|r| r.noise.is_noisy());
        if !has_clean || !has_noisy {
            return Err(Error::config(
                "adversarial training needs both clean and noisy records (enable the auxiliary clean speaker)",
            ));
        }
    }

    let items: Result<Vec<TrainItem>> = records
        .par_iter()
        .map(|r| {
            let mel = files::read_mel(&manifest.path_of(&r.mel))?;
            let speaker_idx = speakers
                .iter()
                .position(|s| *s == r.speaker)
                .ok_or_else(|| Error::config(format!("record speaker {:?} not in config", r.speaker)))?;
            Ok(TrainItem {
                id: r.id.clone(),
                symbols: r.transcript.clone(),
                mel: mel.frames,
                speaker_idx,
                noise_label: r.noise.label(),
            })
        })
        .collect();
    Ok(Dataset {
        items: items?,
        speakers,
        vocab,
    })
}

/// Gradients and loss of one teacher-forced pass over a batch, averaged
/// over its utterances. Per-utterance passes run in parallel; the reduction
/// happens in index order so results do not depend on scheduling.
pub struct BatchPass {
    pub grads: BTreeMap<String, Array2<f64>>,
    pub loss: LossValues,
    /// (codebook index, flattened z_e) per quantized frame.
    pub vq_assignments: Vec<(usize, Vec<f64>)>,
}

pub fn training_pass(
    model: &Seq2SeqModel,
    items: &[&TrainItem],
    step_seed: u64,
) -> Result<BatchPass> {
    if items.is_empty() {
        return Err(Error::invalid("training_pass", "empty batch"));
    }
    let padded = items.iter().map(|i| i.mel.nrows()).max().unwrap();
    let beta = model.config.adv.beta;

    let per_utt: Result<Vec<_>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut g = Graph::new(&model.store);
            let utt = TrainUtterance {
                symbols: &item.symbols,
                mel_target: &item.mel,
                frames: item.mel.nrows(),
                padded_frames: padded,
                condition: ConditionVector {
                    speaker: item.speaker_idx,
                    noise_flag: item.noise_label,
                },
                noise_label: item.noise_label,
                dropout_seed: step_seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add(i as u64),
            };
            let out = model.forward_training(&mut g, &utt)?;
            let total = out.losses.compose(&mut g, beta)?;
            g.tape.backward(total)?;
            let values = out.losses.values(&g, beta);
            let grads = g.param_grads();
            let vq: Vec<(usize, Vec<f64>)> = out
                .vq_indices
                .iter()
                .cloned()
                .zip(out.vq_latents.iter().cloned())
                .collect();
            Ok((grads, values, vq))
        })
        .collect();
    let per_utt = per_utt?;

    let scale = 1.0 / items.len() as f64;
    let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut loss = LossValues::default();
    let mut vq_assignments = Vec::new();
    for (g, v, vq) in per_utt {
        for (name, grad) in g {
            match grads.get_mut(&name) {
                Some(acc) => *acc += &grad,
                None => {
                    grads.insert(name, grad);
                }
            }
        }
        loss.total += v.total * scale;
        loss.mel_l1 += v.mel_l1 * scale;
        loss.mel_l2 += v.mel_l2 * scale;
        loss.stop_ce += v.stop_ce * scale;
        loss.vq_codebook += v.vq_codebook * scale;
        loss.vq_commitment += v.vq_commitment * scale;
        loss.vq_recon += v.vq_recon * scale;
        loss.adv_ce += v.adv_ce * scale;
        vq_assignments.extend(vq);
    }
    for g in grads.values_mut() {
        g.mapv_inplace(|v| v * scale);
    }
    Ok(BatchPass {
        grads,
        loss,
        vq_assignments,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
struct LogLine {
    step: u64,
    lr: f64,
    grad_norm: f64,
    #[serde(flatten)]
    loss: LossValues,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub final_loss: LossValues,
    pub steps: u64,
    pub log_path: PathBuf,
    pub codebook_health: Option<crate::vq::CodebookHealth>,
}

/// Train a model on the manifest's training split. Deterministic given
/// `config.seed`; loss curves go to `<out>/train_log.jsonl`, checkpoints to
/// `<out>/step_<n>.ckpt` and `<out>/final.ckpt`. A non-finite loss aborts
/// with the last good checkpoint left on disk.
pub fn train(manifest: &CorpusManifest, config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = load_dataset(manifest, config)?;
    let mut model = Seq2SeqModel::new(
        config.model.clone(),
        config.mode,
        dataset.vocab,
        dataset.speakers.len(),
        config.seed,
    )?;

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    );

    let mut adam = Adam::new();
    let mut usage = config.mode.vq.then(|| VqUsage::new(config.model.vq.codebook_size));
    let mut order: Vec<usize> = (0..dataset.items.len()).collect();
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x45504f43);
    let mut cursor = usize::MAX; // force a shuffle on the first step
    let mut lr = config.learning_rate;
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut final_loss = LossValues::default();

    for step in 0..config.max_steps {
        if cursor >= dataset.items.len() {
            order.shuffle(&mut epoch_rng);
            cursor = 0;
            if config.mode.adversarial {
                // The classifier must see both labels every epoch.
                let labels: std::collections::HashSet<usize> =
                    dataset.items.iter().map(|i| i.noise_label).collect();
                if labels.len() < 2 {
                    return Err(Error::config("epoch lacks both clean and noisy labels"));
                }
            }
        }
        let end = (cursor + config.batch_size).min(dataset.items.len());
        let batch: Vec<&TrainItem> = order[cursor..end].iter().map(|&i| &dataset.items[i]).collect();
        cursor = end;

        let step_seed = config.seed ^ (step.wrapping_mul(0x2545f4914f6cdd1d));
        let mut pass = training_pass(&model, &batch, step_seed)?;

        if !pass.loss.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "loss became non-finite; last good checkpoint: {}",
                    last_checkpoint
                        .as_deref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_else(|| "none".into())
                ),
            });
        }

        let grad_norm = clip_global_norm(&mut pass.grads, config.grad_clip_norm);
        adam.step(&mut model.store, &pass.grads, lr)?;
        lr *= config.lr_decay;

        if let Some(u) = usage.as_mut() {
            for (idx, z_e) in &pass.vq_assignments {
                let arr = Array2::from_shape_vec((1, z_e.len()), z_e.clone())
                    .expect("latent row shape");
                u.record(*idx, &arr, step);
            }
            u.restart_dead(&mut model.store, &config.model.vq, step, config.seed)?;
        }

        final_loss = pass.loss;
        if step % config.log_every == 0 || step + 1 == config.max_steps {
            let line = LogLine {
                step,
                lr,
                grad_norm,
                loss: pass.loss,
            };
            writeln!(log, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&log_path, e))?;
        }
        if config.checkpoint_every > 0 && step > 0 && step % config.checkpoint_every == 0 {
            let p = out_dir.join(format!("step_{step}.ckpt"));
            checkpoint::save(&p, &model, &dataset.speakers, step, config.seed)?;
            last_checkpoint = Some(p);
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let final_path = out_dir.join("final.ckpt");
    checkpoint::save(&final_path, &model, &dataset.speakers, config.max_steps, config.seed)?;

    Ok(TrainOutcome {
        checkpoint: final_path,
        final_loss,
        steps: config.max_steps,
        log_path,
        codebook_health: usage.as_ref().and_then(|u| u.health().ok()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig, InventoryConfig, NoiseKind, NoiseSpec, SpeakerConfig};

    fn small_corpus(dir: &Path) -> CorpusManifest {
        let cfg = CorpusConfig {
            inventory: InventoryConfig {
                n_phonemes: 6,
                min_duration_frames: 3,
                max_duration_frames: 5,
            },
            min_utterance_symbols: 3,
            max_utterance_symbols: 5,
            speakers: vec![
                SpeakerConfig {
                    name: "target".into(),
                    n_utterances: 6,
                    noise: None,
                    target_cer: 0.0,
                    emit_noisy_copy: false,
                    copy_noise: None,
                },
                SpeakerConfig {
                    name: "aux".into(),
                    n_utterances: 3,
                    noise: None,
                    target_cer: 0.0,
                    emit_noisy_copy: true,
                    copy_noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White],
                        snr_db: 6.0,
                    }),
                },
            ],
            eval_size: 2,
            dev_size: 1,
            ..CorpusConfig::default()
        };
        build_corpus(&cfg, 3, dir).unwrap()
    }

    fn tiny_train_config(mode: TrainingMode, steps: u64) -> TrainConfig {
        TrainConfig {
            mode,
            model: ModelConfig::tiny(),
            max_steps: steps,
            batch_size: 3,
            checkpoint_every: 0,
            log_every: 5,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_small_baseline_run() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_corpus(dir.path());
        let out = dir.path().join("run");
        let cfg = tiny_train_config(TrainingMode::baseline(), 30);
        let outcome = train(&manifest, &cfg, &out).unwrap();
        // Compare against the first logged loss.
        let log = std::fs::read_to_string(&outcome.log_path).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(log.lines().next().unwrap()).unwrap();
        let first_total = first["total"].as_f64().unwrap();
        assert!(
            outcome.final_loss.total < first_total,
            "loss did not decrease: {first_total} -> {}",
            outcome.final_loss.total
        );
        assert!(out.join("final.ckpt").exists());
    }

    #[test]
    fn mode_controls_logged_terms() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_corpus(dir.path());

        let base = train(
            &manifest,
            &tiny_train_config(TrainingMode::baseline(), 3),
            &dir.path().join("base"),
        )
        .unwrap();
        assert_eq!(base.final_loss.vq_codebook, 0.0);
        assert_eq!(base.final_loss.adv_ce, 0.0);
        assert!(base.codebook_health.is_none());

        let vq = train(
            &manifest,
            &tiny_train_config(
                TrainingMode {
                    vq: true,
                    adversarial: false,
                },
                3,
            ),
            &dir.path().join("vq"),
        )
        .unwrap();
        assert!(vq.final_loss.vq_commitment > 0.0 || vq.final_loss.vq_codebook > 0.0);
        assert!(vq.codebook_health.is_some());

        let adv = train(
            &manifest,
            &tiny_train_config(
                TrainingMode {
                    vq: false,
                    adversarial: true,
                },
                3,
            ),
            &dir.path().join("adv"),
        )
        .unwrap();
        assert!(adv.final_loss.adv_ce > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_corpus(dir.path());
        let cfg = tiny_train_config(TrainingMode::baseline(), 8);
        let a = train(&manifest, &cfg, &dir.path().join("a")).unwrap();
        let b = train(&manifest, &cfg, &dir.path().join("b")).unwrap();
        assert_eq!(a.final_loss.total, b.final_loss.total);
        let la = std::fs::read_to_string(a.log_path).unwrap();
        let lb = std::fs::read_to_string(b.log_path).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn adversarial_without_clean_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            inventory: InventoryConfig {
                n_phonemes: 6,
                min_duration_frames: 3,
                max_duration_frames: 5,
            },
            min_utterance_symbols: 3,
            max_utterance_symbols: 5,
            speakers: vec![
                SpeakerConfig {
                    name: "target".into(),
                    n_utterances: 5,
                    noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White],
                        snr_db: 4.0,
                    }),
                    target_cer: 0.0,
                    emit_noisy_copy: false,
                    copy_noise: None,
                },
                SpeakerConfig {
                    name: "aux".into(),
                    n_utterances: 2,
                    noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White],
                        snr_db: 4.0,
                    }),
                    target_cer: 0.0,
                    emit_noisy_copy: false,
                    copy_noise: None,
                },
            ],
            eval_size: 1,
            dev_size: 1,
            ..CorpusConfig::default()
        };
        let manifest = build_corpus(&cfg, 4, dir.path()).unwrap();
        let tc = tiny_train_config(
            TrainingMode {
                vq: false,
                adversarial: true,
            },
            2,
        );
        assert!(train(&manifest, &tc, &dir.path().join("x")).is_err());
    }
}
