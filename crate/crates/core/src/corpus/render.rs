use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{mel_spectrogram, Waveform};
use crate::error::{Error, Result};

use super::inventory::{render_template, SymbolId, SymbolInventory};
use super::{NoiseCondition, ToyUtterance};

/// Quantize to 16-bit PCM and back, so in-memory samples match what a WAV
/// round trip will reproduce bit for bit.
pub fn quantize_i16(samples: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .map(|&s| {
            let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            q as f64 / 32767.0
        })
        .collect()
}

/// Render a clean utterance: each symbol contributes `duration × hop`
/// samples synthesized from its template with small seeded phase/frequency
/// jitter, followed by a silent tail of one window minus one hop so the
/// frame count equals the total symbol duration exactly.
pub fn render_utterance(
    id: &str,
    speaker: &str,
    symbols: &[SymbolId],
    durations: &[usize],
    inventory: &SymbolInventory,
    seed: u64,
) -> Result<ToyUtterance> {
    if symbols.is_empty() {
        return Err(Error::invalid("render_utterance", "empty symbol sequence"));
    }
    if symbols.len() != durations.len() {
        return Err(Error::shape(
            "render_utterance",
            format!("{} symbols vs {} durations", symbols.len(), durations.len()),
        ));
    }
    let (dmin, dmax) = inventory.duration_range();
    for (&sym, &dur) in symbols.iter().zip(durations.iter()) {
        if !inventory.is_renderable(sym) {
            return Err(Error::UnknownSymbol(sym));
        }
        if dur == 0 {
            return Err(Error::invalid("render_utterance", "zero duration"));
        }
        if dur < dmin || dur > dmax {
            return Err(Error::invalid(
                "render_utterance",
                format!("duration {dur} outside inventory range {dmin}..={dmax}"),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hop = inventory.mel.hop_samples(inventory.sample_rate);
    let window = inventory.mel.window_samples(inventory.sample_rate);
    let total: usize = durations.iter().sum();
    let mut samples = Vec::with_capacity(total * hop + window);
    for (&sym, &dur) in symbols.iter().zip(durations.iter()) {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let freq_scale = rng.gen_range(0.998..1.002);
        let amp_scale = rng.gen_range(0.95..1.05);
        let seg = render_template(
            &inventory.templates[sym as usize],
            dur * hop,
            inventory.sample_rate,
            phase,
            freq_scale,
        );
        samples.extend(seg.into_iter().map(|s| s * amp_scale));
    }
    samples.extend(std::iter::repeat(0.0).take(window.saturating_sub(hop)));

    let samples = quantize_i16(&samples);
    let waveform = Waveform::new(samples, inventory.sample_rate);
    let mel = mel_spectrogram(&waveform, &inventory.mel)?;

    Ok(ToyUtterance {
        id: id.to_string(),
        speaker: speaker.to_string(),
        symbols: symbols.to_vec(),
        durations: durations.to_vec(),
        waveform,
        mel,
        noise_condition: NoiseCondition::Clean,
        transcript: symbols.to_vec(),
        transcript_cer: 0.0,
    })
}

/// Draw a random symbol sequence with word-like structure: runs of 2..=5
/// phonemes separated by boundary symbols, total length in `len_range`.
/// Adjacent symbols are always distinct; repeated segments would be
/// indistinguishable from one long segment in the rendered audio.
pub fn sample_symbols(
    inventory: &SymbolInventory,
    len_range: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> (Vec<SymbolId>, Vec<usize>) {
    let target = rng.gen_range(len_range.0..=len_range.1);
    let mut symbols: Vec<SymbolId> = Vec::with_capacity(target);
    let mut until_boundary: usize = rng.gen_range(2..=5);
    while symbols.len() < target {
        if until_boundary == 0 && symbols.len() + 1 < target {
            symbols.push(inventory.boundary());
            until_boundary = rng.gen_range(2..=5);
        } else {
            let mut s = rng.gen_range(0..inventory.n_phonemes()) as SymbolId;
            while symbols.last() == Some(&s) {
                s = rng.gen_range(0..inventory.n_phonemes()) as SymbolId;
            }
            symbols.push(s);
            until_boundary = until_boundary.saturating_sub(1);
        }
    }
    let (dmin, dmax) = inventory.duration_range();
    let durations = symbols.iter().map(|_| rng.gen_range(dmin..=dmax)).collect();
    (symbols, durations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::inventory::{cosine, InventoryConfig};
    use crate::dsp::MelConfig;

    fn inventory() -> SymbolInventory {
        SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000).unwrap()
    }

    #[test]
    fn single_symbol_matches_its_template() {
        let inv = inventory();
        let utt = render_utterance("u0", "spk", &[5], &[10], &inv, 99).unwrap();
        assert_eq!(utt.mel.n_frames(), 10);
        // Mean interior peak profile vs the calibrated prototype.
        let mut mean = vec![0.0; inv.mel.bands];
        for fi in 2..8 {
            let profile = crate::corpus::inventory::peak_profile(
                utt.mel.frames.row(fi),
                crate::corpus::inventory::PEAK_MARGIN,
            );
            for b in 0..inv.mel.bands {
                mean[b] += profile[b];
            }
        }
        let mean = ndarray::Array1::from_vec(mean);
        let conf = cosine(mean.view(), inv.prototypes.row(5));
        assert!(conf > 0.99, "template confidence {conf}");
    }

    #[test]
    fn empty_sequence_rejected() {
        let inv = inventory();
        assert!(render_utterance("u0", "spk", &[], &[], &inv, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let inv = inventory();
        let a = render_utterance("u0", "spk", &[1, 2, 3], &[6, 7, 8], &inv, 42).unwrap();
        let b = render_utterance("u0", "spk", &[1, 2, 3], &[6, 7, 8], &inv, 42).unwrap();
        assert_eq!(a.waveform.samples, b.waveform.samples);
        assert_eq!(a.mel.frames, b.mel.frames);
        let c = render_utterance("u0", "spk", &[1, 2, 3], &[6, 7, 8], &inv, 43).unwrap();
        assert_ne!(a.waveform.samples, c.waveform.samples);
    }

    #[test]
    fn frame_count_equals_total_duration() {
        let inv = inventory();
        let utt = render_utterance("u0", "spk", &[0, 24, 7], &[5, 5, 12], &inv, 7).unwrap();
        assert_eq!(utt.mel.n_frames(), 22);
    }

    #[test]
    fn rejects_unknown_symbol_and_bad_duration() {
        let inv = inventory();
        assert!(render_utterance("u", "s", &[99], &[6], &inv, 1).is_err());
        assert!(render_utterance("u", "s", &[1], &[0], &inv, 1).is_err());
        assert!(render_utterance("u", "s", &[inv.eos()], &[6], &inv, 1).is_err());
    }

    #[test]
    fn sampled_sequences_stay_in_range() {
        let inv = inventory();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (symbols, durations) = sample_symbols(&inv, (8, 40), &mut rng);
            assert!(symbols.len() >= 8 && symbols.len() <= 40);
            assert!(symbols.iter().all(|&s| inv.is_renderable(s)));
            assert_eq!(symbols.len(), durations.len());
            assert_ne!(symbols[0], inv.boundary());
        }
    }
}
