//! Adversarial noise-independent feature learning: a unidirectional GRU
//! over decoder pre-net frames produces the latent `z_s`; a clean/noisy
//! classifier sits behind a gradient-reversal node so that minimizing its
//! cross-entropy pushes the features toward carrying no noise information.

use crate::autodiff::TensorId;
use crate::error::{Error, Result};
use crate::model::layers::{Dense, GruCell};
use crate::model::params::{Graph, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvGranularity {
    /// Classify every frame against the utterance label.
    Frame,
    /// Classify mean/variance pooling of the frame latents.
    Sentence,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvConfig {
    pub gru_hidden: usize,
    pub cls_hidden: usize,
    /// Weight of the classification loss in the total objective.
    pub beta: f64,
    /// Gradient-reversal scale.
    pub lambda: f64,
    pub granularity: AdvGranularity,
    /// When false the reversal is replaced by identity, turning the branch
    /// into a cooperative classifier (the probe-control configuration).
    pub grl_enabled: bool,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            gru_hidden: 256,
            cls_hidden: 128,
            beta: 0.25,
            lambda: 1.0,
            granularity: AdvGranularity::Frame,
            grl_enabled: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdvBranch {
    pub gru: GruCell,
    cls_in: Dense,
    cls_out: Dense,
    pub cfg: AdvConfig,
}

impl AdvBranch {
    pub fn new(cfg: &AdvConfig, prenet_dim: usize) -> Self {
        let cls_in_dim = match cfg.granularity {
            AdvGranularity::Frame => cfg.gru_hidden,
            AdvGranularity::Sentence => 2 * cfg.gru_hidden,
        };
        AdvBranch {
            gru: GruCell::new("adv.gru", prenet_dim, cfg.gru_hidden),
            cls_in: Dense::new("adv.cls.fc0", cls_in_dim, cfg.cls_hidden),
            cls_out: Dense::new("adv.cls.out", cfg.cls_hidden, 2),
            cfg: cfg.clone(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.gru.init(store, seed);
        self.cls_in.init(store, seed);
        self.cls_out.init(store, seed);
    }

    pub fn init_state(&self, g: &mut Graph) -> Result<TensorId> {
        self.gru.init_state(g)
    }

    /// One causal step: `z_s` at this frame depends only on frames seen so
    /// far.
    pub fn step(&self, g: &mut Graph, prenet_frame: TensorId, state: TensorId) -> Result<TensorId> {
        self.gru.step(g, prenet_frame, state)
    }

    /// Whole-sequence latent, frame by frame.
    pub fn forward(&self, g: &mut Graph, prenet_frames: &[TensorId]) -> Result<Vec<TensorId>> {
        if prenet_frames.is_empty() {
            return Err(Error::invalid("adv_forward", "empty sequence"));
        }
        let mut state = self.init_state(g)?;
        let mut out = Vec::with_capacity(prenet_frames.len());
        for &f in prenet_frames {
            state = self.step(g, f, state)?;
            out.push(state);
        }
        Ok(out)
    }

    fn head(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        let x = if self.cfg.grl_enabled {
            g.tape.gradient_reversal(x, self.cfg.lambda)?
        } else {
            x
        };
        let h = self.cls_in.forward(g, x)?;
        let h = g.tape.relu(h)?;
        self.cls_out.forward(g, h)
    }

    /// Per-frame clean/noisy logits (reversal applied to `z_s` first).
    pub fn classify_frame(&self, g: &mut Graph, z_s: TensorId) -> Result<TensorId> {
        self.head(g, z_s)
    }

    /// Utterance-level logits from `[mean ; variance]` pooling over frames.
    /// A single frame pools with exactly zero variance.
    pub fn classify_sentence(&self, g: &mut Graph, z_s_frames: &[TensorId]) -> Result<TensorId> {
        if z_s_frames.is_empty() {
            return Err(Error::invalid("classify_sentence", "empty sequence"));
        }
        let stacked = g.tape.concat_rows(z_s_frames)?;
        let mean = g.tape.mean_rows(stacked)?;
        let var = g.tape.var_rows(stacked)?;
        let pooled = g.tape.concat_cols(&[mean, var])?;
        self.head(g, pooled)
    }
}

/// Total objective with the adversarial term: `mel + β·ce`.
pub fn adv_loss(g: &mut Graph, mel_loss: TensorId, classifier_ce: TensorId, beta: f64) -> Result<TensorId> {
    if beta < 0.0 {
        return Err(Error::invalid("adv_loss", format!("beta {beta} < 0")));
    }
    let weighted = g.tape.scale(classifier_ce, beta)?;
    g.tape.add(mel_loss, weighted)
}
