use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

use super::inventory::{render_template, SymbolInventory, SymbolTemplate};

/// Background interference classes. The synthetic kinds are deterministic
/// generators; `UserFile` injects real noise from disk.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
    Hum,
    UserFile(std::path::PathBuf),
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseKind::White => write!(f, "white"),
            NoiseKind::Pink => write!(f, "pink"),
            NoiseKind::Babble => write!(f, "babble"),
            NoiseKind::Hum => write!(f, "hum"),
            NoiseKind::UserFile(p) => write!(f, "user:{}", p.display()),
        }
    }
}

pub struct MixResult {
    pub noisy: Waveform,
    /// Peak-normalization gain applied to the mixture (1.0 when no
    /// normalization was needed). `noisy = gain * (clean + scaled noise)`.
    pub gain: f64,
}

/// Mix synthetic or file noise into a clean waveform at an exact SNR.
/// `snr_db = +∞` is the clean condition and returns the input unchanged.
/// The mixture is peak-normalized to 0.99 when it would clip; since the
/// gain scales signal and noise alike, the measured SNR is unaffected.
pub fn mix_noise(
    clean: &Waveform,
    kind: &NoiseKind,
    snr_db: f64,
    seed: u64,
    inventory: &SymbolInventory,
) -> Result<MixResult> {
    if clean.rms() <= 0.0 {
        return Err(Error::invalid("mix_noise", "clean input is silent"));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(MixResult {
            noisy: clean.clone(),
            gain: 1.0,
        });
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("mix_noise", format!("bad snr {snr_db}")));
    }

    let noise = generate_noise(kind, clean.len(), clean.sample_rate, seed, inventory)?;
    let clean_power: f64 = clean.samples.iter().map(|s| s * s).sum();
    let noise_power: f64 = noise.iter().map(|s| s * s).sum();
    if noise_power <= 0.0 {
        return Err(Error::Audio(format!("noise generator {kind} produced silence")));
    }
    let scale = (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();

    let mut mixture: Vec<f64> = clean
        .samples
        .iter()
        .zip(noise.iter())
        .map(|(c, n)| c + scale * n)
        .collect();
    let peak = mixture.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    let gain = if peak > 0.99 { 0.99 / peak } else { 1.0 };
    if gain != 1.0 {
        for s in &mut mixture {
            *s *= gain;
        }
    }
    Ok(MixResult {
        noisy: Waveform::new(mixture, clean.sample_rate),
        gain,
    })
}

/// Deterministic noise of the requested kind and length.
pub fn generate_noise(
    kind: &NoiseKind,
    len: usize,
    sample_rate: u32,
    seed: u64,
    inventory: &SymbolInventory,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        NoiseKind::White => (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        NoiseKind::Pink => pink(len, &mut rng),
        NoiseKind::Hum => hum(len, sample_rate, &mut rng),
        NoiseKind::Babble => babble(len, sample_rate, &mut rng, inventory),
        NoiseKind::UserFile(path) => {
            let wave = super::files::read_wav(path)?;
            loop_to_length(&wave.samples, len, sample_rate)
        }
    })
}

/// Three-pole lowpass cascade over white noise, approximating a 1/f slope.
fn pink(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..len)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Mains-style hum: 50 Hz plus two harmonics with seeded phases and a slow
/// amplitude wobble.
fn hum(len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    let comps = [(50.0, 1.0), (100.0, 0.4), (150.0, 0.2)];
    let phases: Vec<f64> = comps.iter().map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let wobble_rate = rng.gen_range(0.3..1.2);
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let wobble = 1.0 + 0.2 * (std::f64::consts::TAU * wobble_rate * t).sin();
            wobble
                * comps
                    .iter()
                    .zip(&phases)
                    .map(|((f, a), p)| a * (std::f64::consts::TAU * f * t + p).sin())
                    .sum::<f64>()
        })
        .collect()
}

/// Babble-like interference: overlap-added fragments of random symbol
/// templates on several simultaneous streams.
fn babble(
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
    inventory: &SymbolInventory,
) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let n_streams = 4;
    let phoneme_templates: Vec<&SymbolTemplate> =
        inventory.templates[..inventory.n_phonemes()].iter().collect();
    for _ in 0..n_streams {
        let mut at = 0usize;
        while at < len {
            let frag_len = rng.gen_range(sample_rate as usize / 20..sample_rate as usize / 4);
            let template = phoneme_templates[rng.gen_range(0..phoneme_templates.len())];
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let fscale = rng.gen_range(0.9..1.1);
            let frag = render_template(template, frag_len.min(len - at), sample_rate, phase, fscale);
            for (i, v) in frag.iter().enumerate() {
                out[at + i] += v;
            }
            at += frag_len;
        }
    }
    out
}

/// Tile a short noise file out to `len` samples with a short crossfade at
/// each seam instead of failing.
fn loop_to_length(source: &[f64], len: usize, sample_rate: u32) -> Vec<f64> {
    assert!(!source.is_empty(), "checked by the wav reader");
    if source.len() >= len {
        return source[..len].to_vec();
    }
    let fade = (sample_rate as usize / 10).min(source.len() / 4).max(1);
    let mut out = Vec::with_capacity(len + source.len());
    out.extend_from_slice(source);
    while out.len() < len {
        let start = out.len() - fade;
        for i in 0..fade {
            let t = (i + 1) as f64 / (fade + 1) as f64;
            out[start + i] = out[start + i] * (1.0 - t) + source[i] * t;
        }
        out.extend_from_slice(&source[fade..]);
    }
    out.truncate(len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::inventory::InventoryConfig;
    use crate::dsp::{measure_snr, MelConfig};

    fn inventory() -> SymbolInventory {
        SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000).unwrap()
    }

    fn tone(len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn measured_snr_matches_target() {
        let inv = inventory();
        let clean = tone(16000);
        for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum] {
            for target in [4.0, 8.0] {
                let mixed = mix_noise(&clean, &kind, target, 11, &inv).unwrap();
                // Recover the noise component and re-measure.
                let noise = Waveform::new(
                    mixed
                        .noisy
                        .samples
                        .iter()
                        .zip(&clean.samples)
                        .map(|(m, c)| m - mixed.gain * c)
                        .collect(),
                    16000,
                );
                let scaled_clean = Waveform::new(
                    clean.samples.iter().map(|c| c * mixed.gain).collect(),
                    16000,
                );
                let snr = measure_snr(&scaled_clean, &noise).unwrap();
                assert!(
                    (snr - target).abs() < 0.1,
                    "{kind} at {target} dB measured {snr}"
                );
            }
        }
    }

    #[test]
    fn infinite_snr_is_identity() {
        let inv = inventory();
        let clean = tone(4000);
        let mixed = mix_noise(&clean, &NoiseKind::White, f64::INFINITY, 3, &inv).unwrap();
        assert_eq!(mixed.noisy.samples, clean.samples);
        assert_eq!(mixed.gain, 1.0);
    }

    #[test]
    fn silent_input_rejected() {
        let inv = inventory();
        let silent = Waveform::new(vec![0.0; 1000], 16000);
        assert!(mix_noise(&silent, &NoiseKind::White, 4.0, 1, &inv).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let inv = inventory();
        for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum] {
            let a = generate_noise(&kind, 5000, 16000, 77, &inv).unwrap();
            let b = generate_noise(&kind, 5000, 16000, 77, &inv).unwrap();
            assert_eq!(a, b, "{kind}");
            let c = generate_noise(&kind, 5000, 16000, 78, &inv).unwrap();
            assert_ne!(a, c, "{kind}");
        }
    }

    #[test]
    fn short_file_loops_with_crossfade() {
        let src: Vec<f64> = (0..1600).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        let out = loop_to_length(&src, 8000, 16000);
        assert_eq!(out.len(), 8000);
        // Energy should persist through the seams.
        let tail_rms: f64 =
            (out[6400..].iter().map(|s| s * s).sum::<f64>() / 1600.0).sqrt();
        assert!(tail_rms > 0.1);
    }
}
