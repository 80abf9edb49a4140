use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::levenshtein;
use crate::error::{Error, Result};

use super::inventory::{SymbolId, SymbolInventory};

/// Relative frequency of substitution, deletion and insertion errors.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EditMix {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
}

impl Default for EditMix {
    fn default() -> Self {
        // Substitutions and deletions dominate recognizer output.
        EditMix {
            p_sub: 0.5,
            p_del: 0.3,
            p_ins: 0.2,
        }
    }
}

impl EditMix {
    pub fn validate(&self) -> Result<()> {
        let s = self.p_sub + self.p_del + self.p_ins;
        if (s - 1.0).abs() > 1e-9 || self.p_sub < 0.0 || self.p_del < 0.0 || self.p_ins < 0.0 {
            return Err(Error::config(format!("edit mix must be non-negative and sum to 1, got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CorruptOutcome {
    pub transcript: Vec<SymbolId>,
    /// Levenshtein-recomputed CER against the input.
    pub achieved_cer: f64,
    /// Set when the input is too short to hit the requested rate; the
    /// corpus builder compensates across utterances.
    pub short_input: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CorruptOptions {
    /// Bias deletions toward word-boundary symbols, mimicking transcripts
    /// that drop punctuation-like structure.
    pub prefer_boundary_deletion: bool,
}

/// Corrupt a transcript to a target CER. Edits are applied one at a time at
/// uniform positions until an independent edit-distance recomputation
/// reaches the requested count, so the achieved rate is exact whenever the
/// sequence is long enough to express it.
pub fn corrupt_transcript(
    symbols: &[SymbolId],
    target_cer: f64,
    mix: EditMix,
    inventory: &SymbolInventory,
    seed: u64,
    options: CorruptOptions,
) -> Result<CorruptOutcome> {
    if !(0.0..1.0).contains(&target_cer) {
        return Err(Error::invalid(
            "corrupt_transcript",
            format!("target_cer {target_cer} outside [0, 1)"),
        ));
    }
    mix.validate()?;
    let desired = (target_cer * symbols.len() as f64).round() as usize;
    let short_input = symbols.len() < 5 && target_cer > 0.0;
    corrupt_with_edit_count(symbols, desired, mix, inventory, seed, options).map(|mut o| {
        o.short_input = short_input;
        o
    })
}

/// Corrupt until the Levenshtein distance to the input equals `desired`
/// edits (or no further progress is possible). Long sequences are chunked
/// so the per-edit distance recomputation stays cheap; the reported CER is
/// always one final whole-sequence recount.
pub fn corrupt_with_edit_count(
    symbols: &[SymbolId],
    desired: usize,
    mix: EditMix,
    inventory: &SymbolInventory,
    seed: u64,
    options: CorruptOptions,
) -> Result<CorruptOutcome> {
    mix.validate()?;
    const CHUNK: usize = 64;
    let mut out: Vec<SymbolId> = Vec::with_capacity(symbols.len());
    if symbols.len() > CHUNK {
        let n_chunks = symbols.len().div_ceil(CHUNK);
        let mut applied = 0usize;
        let mut consumed = 0usize;
        for (ci, chunk) in symbols.chunks(CHUNK).enumerate() {
            consumed += chunk.len();
            // Proportional share, keeping the running total on track.
            let share = ((desired * consumed) as f64 / symbols.len() as f64).round() as usize;
            let want = share.saturating_sub(applied).min(chunk.len());
            let piece = corrupt_chunk(chunk, want, mix, inventory, seed ^ (ci as u64) << 1, options);
            applied += levenshtein(chunk, &piece).total_edits();
            out.extend(piece);
        }
        let _ = n_chunks;
    } else {
        out = corrupt_chunk(symbols, desired, mix, inventory, seed, options);
    }
    let summary = levenshtein(symbols, &out);
    Ok(CorruptOutcome {
        transcript: out,
        achieved_cer: summary.cer,
        short_input: false,
    })
}

fn corrupt_chunk(
    symbols: &[SymbolId],
    desired: usize,
    mix: EditMix,
    inventory: &SymbolInventory,
    seed: u64,
    options: CorruptOptions,
) -> Vec<SymbolId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<SymbolId> = symbols.to_vec();
    let mut achieved = 0usize;
    let mut stalls = 0usize;
    while achieved < desired && stalls < 20 + 10 * desired {
        apply_one_edit(&mut out, mix, inventory, &mut rng, options);
        let d = levenshtein(symbols, &out).total_edits();
        if d > achieved {
            achieved = d;
            stalls = 0;
        } else {
            stalls += 1;
        }
    }
    out
}

fn apply_one_edit(
    seq: &mut Vec<SymbolId>,
    mix: EditMix,
    inventory: &SymbolInventory,
    rng: &mut ChaCha8Rng,
    options: CorruptOptions,
) {
    let n_vocab = inventory.n_transcript_symbols() as SymbolId;
    let r: f64 = rng.gen();
    if r < mix.p_sub && !seq.is_empty() {
        let pos = rng.gen_range(0..seq.len());
        let cur = seq[pos];
        // Confusion-biased: the nearest-template symbol half the time.
        let replacement = if rng.gen_bool(0.5) && (cur as usize) < inventory.nearest.len() {
            inventory.nearest[cur as usize]
        } else {
            let mut s = rng.gen_range(0..n_vocab);
            while s == cur {
                s = rng.gen_range(0..n_vocab);
            }
            s
        };
        seq[pos] = replacement;
    } else if r < mix.p_sub + mix.p_del && seq.len() > 1 {
        let pos = if options.prefer_boundary_deletion && rng.gen_bool(0.7) {
            let boundaries: Vec<usize> = seq
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == inventory.boundary())
                .map(|(i, _)| i)
                .collect();
            if boundaries.is_empty() {
                rng.gen_range(0..seq.len())
            } else {
                boundaries[rng.gen_range(0..boundaries.len())]
            }
        } else {
            rng.gen_range(0..seq.len())
        };
        seq.remove(pos);
    } else {
        let pos = rng.gen_range(0..=seq.len());
        seq.insert(pos, rng.gen_range(0..n_vocab));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::inventory::InventoryConfig;
    use crate::dsp::MelConfig;

    fn inventory() -> SymbolInventory {
        SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000).unwrap()
    }

    #[test]
    fn zero_target_is_identity() {
        let inv = inventory();
        let sym: Vec<SymbolId> = vec![1, 2, 3, 4, 5, 6];
        let out =
            corrupt_transcript(&sym, 0.0, EditMix::default(), &inv, 9, CorruptOptions::default())
                .unwrap();
        assert_eq!(out.transcript, sym);
        assert_eq!(out.achieved_cer, 0.0);
        assert!(!out.short_input);
    }

    #[test]
    fn long_corpus_hits_paper_rate() {
        // 10k symbols at 23.3% must land in [22.3%, 24.3%].
        let inv = inventory();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sym: Vec<SymbolId> = (0..10_000)
            .map(|_| rng.gen_range(0..inv.n_phonemes()) as SymbolId)
            .collect();
        let out =
            corrupt_transcript(&sym, 0.233, EditMix::default(), &inv, 17, CorruptOptions::default())
                .unwrap();
        assert!(
            (out.achieved_cer - 0.233).abs() <= 0.010,
            "achieved {}",
            out.achieved_cer
        );
    }

    #[test]
    fn achieved_cer_matches_independent_recount() {
        let inv = inventory();
        let sym: Vec<SymbolId> = (0..60).map(|i| (i % 20) as SymbolId).collect();
        let out =
            corrupt_transcript(&sym, 0.25, EditMix::default(), &inv, 5, CorruptOptions::default())
                .unwrap();
        let recount = levenshtein(&sym, &out.transcript).cer;
        assert_eq!(out.achieved_cer, recount);
        assert!((out.achieved_cer - 0.25).abs() < 0.017); // one edit of 60
    }

    #[test]
    fn short_inputs_are_flagged() {
        let inv = inventory();
        let out =
            corrupt_transcript(&[1, 2, 3], 0.3, EditMix::default(), &inv, 1, CorruptOptions::default())
                .unwrap();
        assert!(out.short_input);
    }

    #[test]
    fn invalid_mix_rejected() {
        let inv = inventory();
        let bad = EditMix {
            p_sub: 0.5,
            p_del: 0.5,
            p_ins: 0.5,
        };
        assert!(corrupt_transcript(&[1, 2, 3, 4, 5], 0.1, bad, &inv, 1, CorruptOptions::default())
            .is_err());
    }

    #[test]
    fn boundary_preference_deletes_boundaries_more_often() {
        let inv = inventory();
        let sym: Vec<SymbolId> = (0..40)
            .map(|i| if i % 4 == 3 { inv.boundary() } else { (i % 10) as SymbolId })
            .collect();
        let n_boundaries_before = sym.iter().filter(|&&s| s == inv.boundary()).count();
        let mut with_pref = 0usize;
        let mut without_pref = 0usize;
        for seed in 0..20 {
            let opts = CorruptOptions {
                prefer_boundary_deletion: true,
            };
            let mix = EditMix {
                p_sub: 0.0,
                p_del: 1.0,
                p_ins: 0.0,
            };
            let a = corrupt_transcript(&sym, 0.2, mix, &inv, seed, opts).unwrap();
            with_pref +=
                n_boundaries_before - a.transcript.iter().filter(|&&s| s == inv.boundary()).count();
            let b =
                corrupt_transcript(&sym, 0.2, mix, &inv, seed, CorruptOptions::default()).unwrap();
            without_pref +=
                n_boundaries_before - b.transcript.iter().filter(|&&s| s == inv.boundary()).count();
        }
        assert!(with_pref > without_pref, "{with_pref} vs {without_pref}");
    }
}
