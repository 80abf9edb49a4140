//! Deterministic synthetic "found data": pseudo-phoneme utterances rendered
//! to audio, mixed with noise at controlled SNR and paired with transcripts
//! corrupted to a controlled corpus-level CER.

pub mod corrupt;
pub mod files;
pub mod inventory;
mod manifest;
pub mod noise;
pub mod render;

pub use corrupt::{corrupt_transcript, corrupt_with_edit_count, CorruptOptions, CorruptOutcome, EditMix};
pub use inventory::{InventoryConfig, SymbolId, SymbolInventory, SymbolTemplate};
pub use manifest::{
    build_corpus, regenerate_audio, CorpusConfig, CorpusManifest, ManifestHeader, NoiseSpec,
    SpeakerConfig, Split, UtteranceRecord,
};
pub use noise::{generate_noise, mix_noise, MixResult, NoiseKind};
pub use render::{render_utterance, sample_symbols};

use crate::dsp::{MelSpectrogram, Waveform};

/// Acoustic condition of one utterance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum NoiseCondition {
    Clean,
    Noisy { kind: NoiseKind, snr_db: f64 },
}

impl NoiseCondition {
    pub fn is_noisy(&self) -> bool {
        matches!(self, NoiseCondition::Noisy { .. })
    }

    /// Class index for the clean/noisy classifier: clean 0, noisy 1.
    pub fn label(&self) -> usize {
        usize::from(self.is_noisy())
    }
}

/// One synthetic utterance held in memory.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub id: String,
    pub speaker: String,
    /// Golden symbol sequence.
    pub symbols: Vec<SymbolId>,
    /// Frames per symbol; the mel frame count equals their sum.
    pub durations: Vec<usize>,
    pub waveform: Waveform,
    pub mel: MelSpectrogram,
    pub noise_condition: NoiseCondition,
    /// Possibly corrupted transcript (what training reads).
    pub transcript: Vec<SymbolId>,
    pub transcript_cer: f64,
}
