//! Signal-processing and metric kernels: mel-spectrogram extraction, SNR
//! measurement, edit-distance CER, DTW alignment and mel-cepstral
//! distortion. Everything here is pure and reentrant.

mod dtw;
mod levenshtein;
mod mcd;
mod mel;
mod snr;

pub use dtw::{dtw_align, AlignmentPath};
pub use levenshtein::{levenshtein, EditSummary};
pub use mcd::mcd;
pub use mel::{mel_filterbank_centers_hz, mel_spectrogram, MelConfig, MelSpectrogram};
pub use snr::measure_snr;

/// Mono PCM audio held as `f64` samples in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
