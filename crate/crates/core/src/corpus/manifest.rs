use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::{MelConfig, Waveform};
use crate::error::{Error, Result};

use super::corrupt::{corrupt_with_edit_count, CorruptOptions, EditMix};
use super::files;
use super::inventory::{InventoryConfig, SymbolId, SymbolInventory};
use super::noise::{mix_noise, NoiseKind};
use super::render::{render_utterance, sample_symbols};
use super::NoiseCondition;

const SEED_SALT_SYMBOLS: u64 = 0x53594d42;
const SEED_SALT_CORRUPT: u64 = 0x434f5252;
const SEED_SALT_NOISE: u64 = 0x4e4f4953;

/// Acoustic degradation applied to one speaker's emitted audio.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Kinds sampled uniformly per utterance.
    pub kinds: Vec<NoiseKind>,
    pub snr_db: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerConfig {
    pub name: String,
    pub n_utterances: usize,
    /// `None` keeps the emitted audio clean.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Corpus-level transcript CER for this speaker.
    #[serde(default)]
    pub target_cer: f64,
    /// Also emit a noisy copy of every (clean) utterance, the augmentation
    /// used for adversarial training.
    #[serde(default)]
    pub emit_noisy_copy: bool,
    /// Noise settings for the copy when `emit_noisy_copy` is set.
    #[serde(default)]
    pub copy_noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub mel: MelConfig,
    pub inventory: InventoryConfig,
    /// Symbols per utterance, inclusive range.
    pub min_utterance_symbols: usize,
    pub max_utterance_symbols: usize,
    pub edit_mix: EditMix,
    pub prefer_boundary_deletion: bool,
    /// First speaker is the synthesis target and provides the eval split.
    pub speakers: Vec<SpeakerConfig>,
    pub eval_size: usize,
    pub dev_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            sample_rate: 16000,
            mel: MelConfig::default(),
            inventory: InventoryConfig::default(),
            min_utterance_symbols: 8,
            max_utterance_symbols: 40,
            edit_mix: EditMix::default(),
            prefer_boundary_deletion: false,
            speakers: vec![
                SpeakerConfig {
                    name: "target".into(),
                    n_utterances: 2000,
                    noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum],
                        snr_db: 4.0,
                    }),
                    target_cer: 0.233,
                    emit_noisy_copy: false,
                    copy_noise: None,
                },
                SpeakerConfig {
                    name: "aux".into(),
                    n_utterances: 2000,
                    noise: None,
                    target_cer: 0.0,
                    emit_noisy_copy: true,
                    copy_noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum],
                        snr_db: 4.0,
                    }),
                },
            ],
            eval_size: 400,
            dev_size: 50,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.edit_mix.validate()?;
        if self.speakers.len() < 2 {
            return Err(Error::config("corpus needs a target and an auxiliary speaker"));
        }
        let mut names = HashSet::new();
        for s in &self.speakers {
            if !names.insert(s.name.as_str()) {
                return Err(Error::config(format!("duplicate speaker id {:?}", s.name)));
            }
            if s.n_utterances == 0 {
                return Err(Error::config(format!("speaker {:?} has no utterances", s.name)));
            }
            if !(0.0..1.0).contains(&s.target_cer) {
                return Err(Error::config(format!(
                    "speaker {:?} target_cer {} outside [0, 1)",
                    s.name, s.target_cer
                )));
            }
            for spec in [&s.noise, &s.copy_noise].into_iter().flatten() {
                if spec.kinds.is_empty() {
                    return Err(Error::config(format!("speaker {:?}: empty noise kind list", s.name)));
                }
                if !spec.snr_db.is_finite() && spec.snr_db < 0.0 {
                    return Err(Error::config(format!("speaker {:?}: bad snr", s.name)));
                }
            }
            if s.emit_noisy_copy && s.copy_noise.is_none() {
                return Err(Error::config(format!(
                    "speaker {:?}: emit_noisy_copy requires copy_noise",
                    s.name
                )));
            }
        }
        if self.min_utterance_symbols < 1 || self.min_utterance_symbols > self.max_utterance_symbols {
            return Err(Error::config("invalid utterance length range"));
        }
        let target = &self.speakers[0];
        if self.eval_size + self.dev_size >= target.n_utterances {
            return Err(Error::config(format!(
                "eval {} + dev {} splits exceed target speaker size {}",
                self.eval_size, self.dev_size, target.n_utterances
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub noise: NoiseCondition,
    /// Achieved transcript CER, recomputed by edit distance.
    pub cer: f64,
    /// Conditioned audio (what training hears), relative to the corpus root.
    pub audio: String,
    /// Clean reference audio; equals `audio` for clean records.
    pub clean_audio: String,
    pub mel: String,
    pub clean_mel: String,
    pub transcript_file: String,
    pub reference_file: String,
    /// Possibly corrupted training transcript.
    pub transcript: Vec<SymbolId>,
    /// Golden symbol sequence.
    pub ref_symbols: Vec<SymbolId>,
    pub durations: Vec<usize>,
    pub render_seed: u64,
    pub noise_seed: u64,
    /// Peak-normalization gain recorded by the noise mixer.
    pub noise_gain: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub seed: u64,
    pub n_records: usize,
    pub config: CorpusConfig,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub records: Vec<UtteranceRecord>,
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let noisy = self.records.iter().filter(|r| r.noise.is_noisy()).count();
        (self.records.len() - noisy, noisy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let header = serde_json::to_string(&self.header)?;
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(f).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::config(format!("{}: empty manifest", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.n_records);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let manifest = CorpusManifest {
            header,
            records,
            root: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        };
        manifest.check_invariants()?;
        Ok(manifest)
    }

    /// Unique ids, disjoint splits, eval drawn from the target speaker.
    pub fn check_invariants(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::config(format!("duplicate utterance id {:?}", r.id)));
            }
        }
        if self.header.n_records != self.records.len() {
            return Err(Error::config(format!(
                "header says {} records, found {}",
                self.header.n_records,
                self.records.len()
            )));
        }
        let target = &self.header.config.speakers[0].name;
        let eval_count = self.records_in(Split::Eval).count();
        if eval_count != self.header.config.eval_size {
            return Err(Error::config(format!(
                "eval split has {eval_count} utterances, config says {}",
                self.header.config.eval_size
            )));
        }
        if self.records_in(Split::Eval).any(|r| &r.speaker != target) {
            return Err(Error::config("eval split contains non-target speakers"));
        }
        Ok(())
    }
}

/// Re-render one record's audio from its recorded seeds: returns the
/// (conditioned, clean) pair byte-identical to the emitted files.
pub fn regenerate_audio(
    record: &UtteranceRecord,
    inventory: &SymbolInventory,
) -> Result<(Waveform, Waveform)> {
    let clean = render_utterance(
        &record.id,
        &record.speaker,
        &record.ref_symbols,
        &record.durations,
        inventory,
        record.render_seed,
    )?;
    let noisy = match &record.noise {
        NoiseCondition::Clean => clean.waveform.clone(),
        NoiseCondition::Noisy { kind, snr_db } => {
            let mixed = mix_noise(&clean.waveform, kind, *snr_db, record.noise_seed, inventory)?;
            Waveform::new(
                super::render::quantize_i16(&mixed.noisy.samples),
                mixed.noisy.sample_rate,
            )
        }
    };
    Ok((noisy, clean.waveform))
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 over the combined words.
    let mut z = a ^ b.rotate_left(17) ^ c.rotate_left(43);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct UtterancePlan {
    id: String,
    speaker_idx: usize,
    noise: Option<NoiseSpec>,
    symbols: Vec<SymbolId>,
    durations: Vec<usize>,
    transcript: Vec<SymbolId>,
    cer: f64,
    render_seed: u64,
    noise_seed: u64,
    split: Split,
}

/// Generate the corpus onto disk: renders every utterance, applies noise
/// and corruption per speaker config, writes audio/mel/transcript files and
/// the JSON-lines manifest at `<out_dir>/manifest.jsonl`.
pub fn build_corpus(config: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    config.validate()?;
    let inventory = SymbolInventory::build(config.inventory.clone(), config.mel.clone(), config.sample_rate)?;

    for sub in ["audio", "mel", "text"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
    }

    // Plan sequentially (the CER controller is stateful per speaker), then
    // render and write in parallel.
    let mut plans: Vec<UtterancePlan> = Vec::new();
    for (spk_idx, spk) in config.speakers.iter().enumerate() {
        let mut cum_symbols = 0usize;
        let mut cum_edits = 0usize;
        for i in 0..spk.n_utterances {
            let utt_seed = mix_seed(seed, spk_idx as u64, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(utt_seed, SEED_SALT_SYMBOLS, 0));
            let (symbols, durations) = sample_symbols(
                &inventory,
                (config.min_utterance_symbols, config.max_utterance_symbols),
                &mut rng,
            );
            // Corpus-level CER targeting: choose this utterance's edit count
            // so the running ratio tracks the target.
            let desired_total =
                (spk.target_cer * (cum_symbols + symbols.len()) as f64).round() as usize;
            let desired = desired_total.saturating_sub(cum_edits);
            let (transcript, cer) = if desired > 0 {
                let out = corrupt_with_edit_count(
                    &symbols,
                    desired,
                    config.edit_mix,
                    &inventory,
                    mix_seed(utt_seed, SEED_SALT_CORRUPT, 0),
                    CorruptOptions {
                        prefer_boundary_deletion: config.prefer_boundary_deletion,
                    },
                )?;
                (out.transcript, out.achieved_cer)
            } else {
                (symbols.clone(), 0.0)
            };
            cum_symbols += symbols.len();
            cum_edits += (cer * symbols.len() as f64).round() as usize;

            let base_id = format!("{}_{i:05}", spk.name);
            plans.push(UtterancePlan {
                id: base_id.clone(),
                speaker_idx: spk_idx,
                noise: spk.noise.clone(),
                symbols: symbols.clone(),
                durations: durations.clone(),
                transcript: transcript.clone(),
                cer,
                render_seed: utt_seed,
                noise_seed: mix_seed(utt_seed, SEED_SALT_NOISE, 0),
                split: Split::Train,
            });
            if spk.emit_noisy_copy {
                plans.push(UtterancePlan {
                    id: format!("{base_id}n"),
                    speaker_idx: spk_idx,
                    noise: spk.copy_noise.clone(),
                    symbols,
                    durations,
                    transcript,
                    cer,
                    render_seed: utt_seed,
                    noise_seed: mix_seed(utt_seed, SEED_SALT_NOISE, 1),
                    split: Split::Train,
                });
            }
        }
    }

    // Assign eval/dev splits on the target speaker's primary records.
    {
        let target_name_idx = 0usize;
        let mut candidates: Vec<usize> = plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.speaker_idx == target_name_idx && !p.id.ends_with('n'))
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x53504c54, 0));
        candidates.shuffle(&mut rng);
        for (n, &pi) in candidates.iter().enumerate() {
            plans[pi].split = if n < config.eval_size {
                Split::Eval
            } else if n < config.eval_size + config.dev_size {
                Split::Dev
            } else {
                Split::Train
            };
        }
    }

    let records: Result<Vec<UtteranceRecord>> = plans
        .par_iter()
        .map(|plan| write_utterance(plan, config, &inventory, out_dir))
        .collect();
    let records = records?;

    let manifest = CorpusManifest {
        header: ManifestHeader {
            version: 1,
            seed,
            n_records: records.len(),
            config: config.clone(),
        },
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.check_invariants()?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn write_utterance(
    plan: &UtterancePlan,
    config: &CorpusConfig,
    inventory: &SymbolInventory,
    out_dir: &Path,
) -> Result<UtteranceRecord> {
    let spk = &config.speakers[plan.speaker_idx];
    let clean = render_utterance(
        &plan.id,
        &spk.name,
        &plan.symbols,
        &plan.durations,
        inventory,
        plan.render_seed,
    )?;

    let base_id_clean = if plan.id.ends_with('n') {
        // The noisy copy shares its clean reference files with the primary.
        plan.id.trim_end_matches('n').to_string()
    } else {
        plan.id.clone()
    };
    let clean_audio_rel = format!("audio/{base_id_clean}.wav");
    let clean_mel_rel = format!("mel/{base_id_clean}.mel");
    if !plan.id.ends_with('n') {
        files::write_wav(&out_dir.join(&clean_audio_rel), &clean.waveform)?;
        files::write_mel(&out_dir.join(&clean_mel_rel), &clean.mel)?;
    }

    let (noise_condition, audio_rel, mel_rel, gain) = match &plan.noise {
        None => (NoiseCondition::Clean, clean_audio_rel.clone(), clean_mel_rel.clone(), 1.0),
        Some(spec) => {
            let mut kind_rng = ChaCha8Rng::seed_from_u64(plan.noise_seed);
            let kind = spec.kinds[kind_rng.gen_range(0..spec.kinds.len())].clone();
            let mixed = mix_noise(&clean.waveform, &kind, spec.snr_db, plan.noise_seed, inventory)?;
            let noisy = Waveform::new(
                super::render::quantize_i16(&mixed.noisy.samples),
                mixed.noisy.sample_rate,
            );
            let noisy_mel = crate::dsp::mel_spectrogram(&noisy, &config.mel)?;
            let audio_rel = format!("audio/{}.noisy.wav", plan.id);
            let mel_rel = format!("mel/{}.noisy.mel", plan.id);
            files::write_wav(&out_dir.join(&audio_rel), &noisy)?;
            files::write_mel(&out_dir.join(&mel_rel), &noisy_mel)?;
            (
                NoiseCondition::Noisy {
                    kind,
                    snr_db: spec.snr_db,
                },
                audio_rel,
                mel_rel,
                mixed.gain,
            )
        }
    };

    let transcript_rel = format!("text/{}.transcript.txt", plan.id);
    let reference_rel = format!("text/{}.ref.txt", plan.id);
    files::write_transcript(&out_dir.join(&transcript_rel), &plan.transcript)?;
    files::write_transcript(&out_dir.join(&reference_rel), &plan.symbols)?;

    Ok(UtteranceRecord {
        id: plan.id.clone(),
        speaker: spk.name.clone(),
        split: plan.split,
        noise: noise_condition,
        cer: plan.cer,
        audio: audio_rel,
        clean_audio: clean_audio_rel,
        mel: mel_rel,
        clean_mel: clean_mel_rel,
        transcript_file: transcript_rel,
        reference_file: reference_rel,
        transcript: plan.transcript.clone(),
        ref_symbols: plan.symbols.clone(),
        durations: plan.durations.clone(),
        render_seed: plan.render_seed,
        noise_seed: plan.noise_seed,
        noise_gain: gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::measure_snr;

    fn tiny_config() -> CorpusConfig {
        CorpusConfig {
            inventory: InventoryConfig {
                n_phonemes: 8,
                min_duration_frames: 4,
                max_duration_frames: 8,
            },
            min_utterance_symbols: 5,
            max_utterance_symbols: 10,
            speakers: vec![
                SpeakerConfig {
                    name: "target".into(),
                    n_utterances: 12,
                    noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::White, NoiseKind::Hum],
                        snr_db: 4.0,
                    }),
                    target_cer: 0.2,
                    emit_noisy_copy: false,
                    copy_noise: None,
                },
                SpeakerConfig {
                    name: "aux".into(),
                    n_utterances: 6,
                    noise: None,
                    target_cer: 0.0,
                    emit_noisy_copy: true,
                    copy_noise: Some(NoiseSpec {
                        kinds: vec![NoiseKind::Pink],
                        snr_db: 8.0,
                    }),
                },
            ],
            eval_size: 4,
            dev_size: 2,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn builds_and_reloads_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_corpus(&tiny_config(), 77, dir.path()).unwrap();
        // 12 target noisy + 6 aux clean + 6 aux noisy copies.
        assert_eq!(manifest.records.len(), 24);
        let (clean, noisy) = manifest.label_counts();
        assert_eq!(clean, 6);
        assert_eq!(noisy, 18);
        assert_eq!(manifest.records_in(Split::Eval).count(), 4);
        assert_eq!(manifest.records_in(Split::Dev).count(), 2);

        let loaded = CorpusManifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.records.len(), 24);
        loaded.check_invariants().unwrap();
    }

    #[test]
    fn deterministic_given_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        build_corpus(&tiny_config(), 5, d1.path()).unwrap();
        build_corpus(&tiny_config(), 5, d2.path()).unwrap();
        let m1 = std::fs::read_to_string(d1.path().join("manifest.jsonl")).unwrap();
        let m2 = std::fs::read_to_string(d2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m1, m2);
        // Spot-check an audio file byte for byte.
        let f1 = std::fs::read(d1.path().join("audio/target_00003.noisy.wav")).unwrap();
        let f2 = std::fs::read(d2.path().join("audio/target_00003.noisy.wav")).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn snr_remeasured_from_emitted_files() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_corpus(&tiny_config(), 11, dir.path()).unwrap();
        for r in manifest.records.iter().filter(|r| r.noise.is_noisy()).take(5) {
            let NoiseCondition::Noisy { snr_db, .. } = &r.noise else {
                unreachable!()
            };
            let noisy = files::read_wav(&manifest.path_of(&r.audio)).unwrap();
            let clean = files::read_wav(&manifest.path_of(&r.clean_audio)).unwrap();
            let scaled_clean = Waveform::new(
                clean.samples.iter().map(|s| s * r.noise_gain).collect(),
                clean.sample_rate,
            );
            let noise = Waveform::new(
                noisy
                    .samples
                    .iter()
                    .zip(&scaled_clean.samples)
                    .map(|(n, c)| n - c)
                    .collect(),
                clean.sample_rate,
            );
            let measured = measure_snr(&scaled_clean, &noise).unwrap();
            assert!((measured - snr_db).abs() < 0.1, "measured {measured} vs {snr_db}");
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_corpus(&tiny_config(), 42, dir.path()).unwrap();
        let inv = SymbolInventory::build(
            manifest.header.config.inventory.clone(),
            manifest.header.config.mel.clone(),
            manifest.header.config.sample_rate,
        )
        .unwrap();
        for r in manifest.records.iter().take(4) {
            let (noisy, clean) = regenerate_audio(r, &inv).unwrap();
            let emitted_noisy = files::read_wav(&manifest.path_of(&r.audio)).unwrap();
            let emitted_clean = files::read_wav(&manifest.path_of(&r.clean_audio)).unwrap();
            assert_eq!(noisy.samples, emitted_noisy.samples, "{}", r.id);
            assert_eq!(clean.samples, emitted_clean.samples, "{}", r.id);
        }
    }

    #[test]
    fn corpus_cer_tracks_target() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.speakers[0].n_utterances = 60;
        cfg.speakers[0].target_cer = 0.233;
        cfg.eval_size = 5;
        cfg.dev_size = 2;
        let manifest = build_corpus(&cfg, 9, dir.path()).unwrap();
        let mut edits = 0.0;
        let mut total = 0usize;
        for r in manifest.records.iter().filter(|r| r.speaker == "target") {
            let s = crate::dsp::levenshtein(&r.ref_symbols, &r.transcript);
            edits += s.total_edits() as f64;
            total += r.ref_symbols.len();
        }
        let cer = edits / total as f64;
        assert!((cer - 0.233).abs() < 0.01, "corpus CER {cer}");
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.speakers.truncate(1);
        assert!(build_corpus(&cfg, 1, dir.path()).is_err());

        let mut cfg = tiny_config();
        cfg.speakers[1].name = "target".into();
        assert!(build_corpus(&cfg, 1, dir.path()).is_err());

        let mut cfg = tiny_config();
        cfg.eval_size = 100;
        assert!(build_corpus(&cfg, 1, dir.path()).is_err());
    }
}
