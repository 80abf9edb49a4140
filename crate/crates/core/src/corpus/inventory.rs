use ndarray::Array2;

use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};

pub type SymbolId = u16;

/// Spectral recipe for one pseudo-phoneme: a fundamental plus formant-like
/// partials, rendered additively.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SymbolTemplate {
    pub f0_hz: f64,
    /// (center frequency, relative amplitude) of each partial.
    pub partials: Vec<(f64, f64)>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InventoryConfig {
    pub n_phonemes: usize,
    pub min_duration_frames: usize,
    pub max_duration_frames: usize,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        InventoryConfig {
            n_phonemes: 24,
            min_duration_frames: 5,
            max_duration_frames: 20,
        }
    }
}

/// The symbol set: `n_phonemes` pseudo-phonemes, one word-boundary symbol
/// and one end-of-sequence symbol, each with a rendering template and a
/// calibrated mel-domain prototype for template matching.
#[derive(Debug, Clone)]
pub struct SymbolInventory {
    pub config: InventoryConfig,
    pub templates: Vec<SymbolTemplate>,
    /// Mean interior excitation (log-mel minus floor) of a solo rendering,
    /// one row per renderable symbol (phonemes + boundary).
    pub prototypes: Array2<f64>,
    /// Most confusable other symbol, by prototype cosine similarity.
    pub nearest: Vec<SymbolId>,
    pub log_floor_ln: f64,
    pub sample_rate: u32,
    pub mel: MelConfig,
}

impl SymbolInventory {
    pub fn n_phonemes(&self) -> usize {
        self.config.n_phonemes
    }

    pub fn boundary(&self) -> SymbolId {
        self.config.n_phonemes as SymbolId
    }

    pub fn eos(&self) -> SymbolId {
        self.config.n_phonemes as SymbolId + 1
    }

    /// Symbols that may appear in a transcript (phonemes + boundary).
    pub fn n_transcript_symbols(&self) -> usize {
        self.config.n_phonemes + 1
    }

    /// Total vocabulary including the end-of-sequence marker.
    pub fn vocab_size(&self) -> usize {
        self.config.n_phonemes + 2
    }

    pub fn contains(&self, id: SymbolId) -> bool {
        (id as usize) < self.vocab_size()
    }

    pub fn is_renderable(&self, id: SymbolId) -> bool {
        (id as usize) < self.n_transcript_symbols()
    }

    pub fn duration_range(&self) -> (usize, usize) {
        (self.config.min_duration_frames, self.config.max_duration_frames)
    }

    /// Build the inventory and calibrate mel prototypes by rendering each
    /// renderable symbol solo and averaging its interior frames.
    pub fn build(config: InventoryConfig, mel: MelConfig, sample_rate: u32) -> Result<Self> {
        if config.n_phonemes < 2 {
            return Err(Error::config("inventory needs at least 2 phonemes"));
        }
        if config.min_duration_frames == 0 || config.min_duration_frames > config.max_duration_frames {
            return Err(Error::config("invalid symbol duration range"));
        }
        let templates = default_templates(config.n_phonemes);
        let log_floor_ln = mel.log_floor.ln();

        // Calibration renders: 12 frames per symbol, averaged over a fixed
        // phase grid so per-utterance phase jitter stays centered on the
        // prototype.
        let hop = mel.hop_samples(sample_rate);
        let window = mel.window_samples(sample_rate);
        let n_symbols = config.n_phonemes + 1;
        let mut prototypes = Array2::zeros((n_symbols, mel.bands));
        for (sym, template) in templates.iter().enumerate() {
            let frames = 12usize;
            let mut proto = vec![0.0; mel.bands];
            for pi in 0..4 {
                let phase = std::f64::consts::FRAC_PI_2 * pi as f64;
                let mut samples = render_template(template, frames * hop, sample_rate, phase, 1.0);
                samples.extend(std::iter::repeat(0.0).take(window.saturating_sub(hop)));
                let m = mel_spectrogram(&Waveform::new(samples, sample_rate), &mel)?;
                let lo = 3.min(m.n_frames() - 1);
                let hi = (m.n_frames() - 3).max(lo + 1);
                for fi in lo..hi {
                    let profile = peak_profile(m.frames.row(fi), PEAK_MARGIN);
                    for b in 0..mel.bands {
                        proto[b] += profile[b];
                    }
                }
            }
            let norm = (proto.iter().map(|v| v * v).sum::<f64>()).sqrt().max(1e-12);
            for b in 0..mel.bands {
                prototypes[(sym, b)] = proto[b] / norm;
            }
        }

        let mut nearest = Vec::with_capacity(n_symbols);
        for a in 0..n_symbols {
            let mut best = (0usize, -1.0f64);
            for b in 0..n_symbols {
                if a == b {
                    continue;
                }
                let cs = cosine(prototypes.row(a), prototypes.row(b));
                if cs > best.1 {
                    best = (b, cs);
                }
            }
            nearest.push(best.0 as SymbolId);
        }

        let inv = SymbolInventory {
            config,
            templates,
            prototypes,
            nearest,
            log_floor_ln,
            sample_rate,
            mel,
        };
        inv.check_distinguishable()?;
        Ok(inv)
    }

    /// Pairwise prototype cosine similarity must stay below 0.9 so the
    /// template matcher can separate every symbol pair.
    pub fn check_distinguishable(&self) -> Result<()> {
        let n = self.prototypes.nrows();
        for a in 0..n {
            for b in a + 1..n {
                let cs = cosine(self.prototypes.row(a), self.prototypes.row(b));
                if cs >= 0.9 {
                    return Err(Error::config(format!(
                        "symbol templates {a} and {b} are too similar (cosine {cs:.3})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn max_pairwise_cosine(&self) -> f64 {
        let n = self.prototypes.nrows();
        let mut worst = -1.0;
        for a in 0..n {
            for b in a + 1..n {
                worst = f64::max(worst, cosine(self.prototypes.row(a), self.prototypes.row(b)));
            }
        }
        worst
    }
}

/// Bands more than this many nats below a frame's peak are treated as
/// spectral floor when matching; it keeps formant peaks and discards
/// window-sidelobe pedestal.
pub(crate) const PEAK_MARGIN: f64 = 6.0;

/// Peak profile of one log-mel frame: energies relative to `peak - margin`,
/// clamped at zero.
pub(crate) fn peak_profile(frame: ndarray::ArrayView1<f64>, margin: f64) -> Vec<f64> {
    let peak = frame.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = peak - margin;
    frame.iter().map(|&v| (v - base).max(0.0)).collect()
}

pub(crate) fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Phoneme templates on an F1×F2 grid with per-symbol fundamentals, plus
/// the low-frequency boundary marker as the final entry.
fn default_templates(n_phonemes: usize) -> Vec<SymbolTemplate> {
    let f1_grid = [500.0, 900.0, 1300.0, 1700.0, 2100.0, 2500.0];
    let f2_grid = [3100.0, 4000.0, 4900.0, 5800.0];
    let mut out = Vec::with_capacity(n_phonemes + 1);
    for i in 0..n_phonemes {
        let f1 = f1_grid[i % f1_grid.len()];
        let f2 = f2_grid[(i / f1_grid.len()) % f2_grid.len()];
        // Wrap-around collisions on the grid are pushed apart in frequency.
        let bump = 200.0 * (i / (f1_grid.len() * f2_grid.len())) as f64;
        out.push(SymbolTemplate {
            f0_hz: 110.0 + 6.0 * i as f64,
            partials: vec![(f1 + bump, 0.7), (f2 + bump, 0.5)],
            amplitude: 0.30,
        });
    }
    // Word boundary: a low hum, spectrally unlike any phoneme. Matches the
    // phoneme amplitude so window overlap with neighbors cannot mask it.
    out.push(SymbolTemplate {
        f0_hz: 62.0,
        partials: vec![(180.0, 0.4)],
        amplitude: 0.30,
    });
    out
}

/// Additive rendering of one template: fundamental plus partials under a
/// raised-cosine attack/decay envelope. `phase` and `freq_scale` carry the
/// per-utterance seeded jitter.
pub(crate) fn render_template(
    template: &SymbolTemplate,
    n_samples: usize,
    sample_rate: u32,
    phase: f64,
    freq_scale: f64,
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let attack = (n_samples / 10).max(1);
    let mut out = vec![0.0; n_samples];
    let mut components = vec![(template.f0_hz, 1.0)];
    components.extend(template.partials.iter().cloned());
    for (freq, rel) in components {
        let w = 2.0 * std::f64::consts::PI * freq * freq_scale / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += rel * (w * i as f64 + phase).sin();
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        let env = if i < attack {
            0.5 - 0.5 * (std::f64::consts::PI * i as f64 / attack as f64).cos()
        } else if i >= n_samples - attack {
            let t = (n_samples - 1 - i) as f64 / attack as f64;
            0.5 - 0.5 * (std::f64::consts::PI * t).cos()
        } else {
            1.0
        };
        *o *= template.amplitude * env;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inventory_is_distinguishable() {
        let inv =
            SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000).unwrap();
        assert_eq!(inv.vocab_size(), 26);
        assert_eq!(inv.boundary(), 24);
        assert_eq!(inv.eos(), 25);
        let worst = inv.max_pairwise_cosine();
        assert!(worst < 0.9, "worst pairwise cosine {worst}");
    }

    #[test]
    fn nearest_map_is_not_self() {
        let inv =
            SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000).unwrap();
        for (i, &n) in inv.nearest.iter().enumerate() {
            assert_ne!(i as SymbolId, n);
        }
    }

    #[test]
    fn small_inventories_work() {
        let cfg = InventoryConfig {
            n_phonemes: 8,
            ..InventoryConfig::default()
        };
        let inv = SymbolInventory::build(cfg, MelConfig::default(), 16000).unwrap();
        assert_eq!(inv.vocab_size(), 10);
        assert!(inv.max_pairwise_cosine() < 0.9);
    }
}
