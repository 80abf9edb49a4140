use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

use super::Waveform;

/// Framing and filterbank settings for [`mel_spectrogram`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub bands: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            window_ms: 50.0,
            hop_ms: 12.5,
            fft_size: 1024,
            bands: 80,
            fmin_hz: 40.0,
            fmax_hz: 7600.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.fft_size == 0 {
            return Err(Error::config("mel bands and fft_size must be positive"));
        }
        if !(self.fmin_hz >= 0.0 && self.fmax_hz > self.fmin_hz) {
            return Err(Error::config("mel frequency range must satisfy 0 <= fmin < fmax"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("mel log_floor must be > 0"));
        }
        Ok(())
    }
}

/// Log-amplitude mel spectrogram: `frames` is M×B with B mel bands per row.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub hop_ms: f64,
    pub window_ms: f64,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.frames.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank: `bands × (fft_size/2 + 1)`.
fn filterbank(cfg: &MelConfig, sample_rate: u32) -> Array2<f64> {
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz.min(sample_rate as f64 / 2.0));
    let edges: Vec<f64> = (0..cfg.bands + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.bands + 1) as f64))
        .collect();
    let hz_per_bin = sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = Array2::zeros((cfg.bands, n_bins));
    for b in 0..cfg.bands {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * hz_per_bin;
            let w = if f >= lo && f <= center && center > lo {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi && hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[(b, bin)] = w;
        }
    }
    fb
}

/// Center frequency in Hz of each mel band, for test oracles.
pub fn mel_filterbank_centers_hz(cfg: &MelConfig, sample_rate: u32) -> Vec<f64> {
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz.min(sample_rate as f64 / 2.0));
    (1..=cfg.bands)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.bands + 1) as f64))
        .collect()
}

/// Log-power mel spectrogram with Hann-windowed frames.
/// `M = floor((samples - window) / hop) + 1` frames; amplitudes are
/// `ln(max(power, log_floor))`.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    let window = cfg.window_samples(wave.sample_rate);
    let hop = cfg.hop_samples(wave.sample_rate);
    if hop == 0 || window == 0 {
        return Err(Error::config("mel window/hop too small for sample rate"));
    }
    if window > cfg.fft_size {
        return Err(Error::config(format!(
            "mel window {window} samples exceeds fft_size {}",
            cfg.fft_size
        )));
    }
    if wave.len() < window {
        return Err(Error::invalid(
            "mel_spectrogram",
            format!("input of {} samples shorter than one window ({window})", wave.len()),
        ));
    }

    let n_frames = (wave.len() - window) / hop + 1;
    let fb = filterbank(cfg, wave.sample_rate);
    let n_bins = cfg.fft_size / 2 + 1;

    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / window as f64).cos())
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut frames = Array2::zeros((n_frames, cfg.bands));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];

    for fi in 0..n_frames {
        let start = fi * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < window {
                Complex::new(wave.samples[start + i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for b in 0..cfg.bands {
            let mut e = 0.0;
            for (bin, &p) in power.iter().enumerate() {
                e += fb[(b, bin)] * p;
            }
            frames[(fi, b)] = e.max(cfg.log_floor).ln();
        }
    }

    Ok(MelSpectrogram {
        frames,
        hop_ms: cfg.hop_ms,
        window_ms: cfg.window_ms,
        sample_rate: wave.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let wave = Waveform::new(vec![0.01; 16000], 16000);
        let mel = mel_spectrogram(&wave, &MelConfig::default()).unwrap();
        assert_eq!(mel.n_frames(), 77); // (16000 - 800)/200 + 1
        assert_eq!(mel.n_bands(), 80);
    }

    #[test]
    fn silence_hits_log_floor() {
        let cfg = MelConfig::default();
        let wave = Waveform::new(vec![0.0; 4000], 16000);
        let mel = mel_spectrogram(&wave, &cfg).unwrap();
        let expect = cfg.log_floor.ln();
        assert!(mel.frames.iter().all(|&v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn pure_tone_peaks_at_matching_band() {
        let cfg = MelConfig::default();
        let centers = mel_filterbank_centers_hz(&cfg, 16000);
        for &band in &[10usize, 40, 70] {
            let f = centers[band];
            let samples: Vec<f64> = (0..8000)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
                .collect();
            let mel = mel_spectrogram(&Waveform::new(samples, 16000), &cfg).unwrap();
            // Use the middle frame; edge frames see window truncation.
            let mid = mel.frames.row(mel.n_frames() / 2);
            let argmax = (0..mel.n_bands())
                .max_by(|&a, &b| mid[a].partial_cmp(&mid[b]).unwrap())
                .unwrap();
            assert!(
                (argmax as i64 - band as i64).abs() <= 1,
                "tone at band {band} ({f:.0} Hz) peaked at {argmax}"
            );
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let wave = Waveform::new(vec![0.0; 100], 16000);
        assert!(mel_spectrogram(&wave, &MelConfig::default()).is_err());
    }

    #[test]
    fn hop_shift_covariance() {
        let cfg = MelConfig::default();
        let mut samples: Vec<f64> = (0..6000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin() * 0.3)
            .collect();
        let a = mel_spectrogram(&Waveform::new(samples.clone(), 16000), &cfg).unwrap();
        // Prepend exactly one hop of silence: frames shift by one index.
        let hop = cfg.hop_samples(16000);
        let mut shifted = vec![0.0; hop];
        shifted.append(&mut samples);
        let b = mel_spectrogram(&Waveform::new(shifted, 16000), &cfg).unwrap();
        for fi in 1..a.n_frames() - 1 {
            for band in 0..a.n_bands() {
                assert!(
                    (a.frames[(fi, band)] - b.frames[(fi + 1, band)]).abs() < 1e-9,
                    "frame {fi} band {band}"
                );
            }
        }
    }
}
