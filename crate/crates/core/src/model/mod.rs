//! The attention-based acoustic model: text encoder, GMM or
//! location-sensitive attention, autoregressive mel decoder with speaker
//! and noise conditioning, and the optional clustering / adversarial
//! branches wired into the decoder loop.

pub mod attention;
pub mod encoder;
pub mod layers;
pub mod params;

pub use attention::AttentionKind;
pub use params::{Graph, ParamStore};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adv::{AdvBranch, AdvConfig, AdvGranularity};
use crate::autodiff::TensorId;
use crate::error::{Error, Result};
use crate::vq::{VqBranch, VqConfig};

use attention::{GmmAttention, GmmState, LsaAttention, LsaState};
use encoder::Encoder;
use layers::{Dense, Embedding, LstmCell, PreNet};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_mel: usize,
    pub embed_dim: usize,
    pub enc_prenet: Vec<usize>,
    pub conv_bank_k: usize,
    pub conv_channels: usize,
    pub highway_layers: usize,
    /// Per-direction encoder GRU size; memory width is twice this.
    pub enc_rnn: usize,
    pub dec_prenet: Vec<usize>,
    /// Dropout stays active at inference as well as training.
    pub prenet_dropout: f64,
    pub dec_lstm: usize,
    pub attention: AttentionKind,
    pub attn_hidden: usize,
    pub gmm_mixtures: usize,
    /// Initial bias of the mean-increment head; softplus of this is the
    /// advance per decoder step at initialization.
    pub gmm_delta_bias: f64,
    pub lsa_filters: usize,
    pub lsa_kernel: usize,
    /// Width of each condition embedding (speaker, noise flag).
    pub cond_emb: usize,
    pub stop_threshold: f64,
    pub vq: VqConfig,
    pub adv: AdvConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mel: 80,
            embed_dim: 256,
            enc_prenet: vec![256, 128, 128],
            conv_bank_k: 8,
            conv_channels: 64,
            highway_layers: 2,
            enc_rnn: 128,
            dec_prenet: vec![256, 256],
            prenet_dropout: 0.5,
            dec_lstm: 256,
            attention: AttentionKind::Gmm,
            attn_hidden: 128,
            gmm_mixtures: 5,
            gmm_delta_bias: -2.0,
            lsa_filters: 8,
            lsa_kernel: 15,
            cond_emb: 16,
            stop_threshold: 0.5,
            vq: VqConfig::default(),
            adv: AdvConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            n_mel: 80,
            embed_dim: 16,
            enc_prenet: vec![16, 12, 12],
            conv_bank_k: 3,
            conv_channels: 8,
            highway_layers: 1,
            enc_rnn: 3,
            dec_prenet: vec![24, 24],
            dec_lstm: 20,
            attn_hidden: 12,
            gmm_mixtures: 2,
            lsa_filters: 4,
            lsa_kernel: 7,
            cond_emb: 4,
            vq: VqConfig {
                codebook_size: 16,
                codebook_dim: 8,
                hidden: 16,
                ..VqConfig::default()
            },
            adv: AdvConfig {
                gru_hidden: 16,
                cls_hidden: 8,
                ..AdvConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mel == 0 || self.embed_dim == 0 || self.dec_lstm == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.enc_prenet.is_empty() || self.dec_prenet.is_empty() {
            return Err(Error::config("pre-nets need at least one layer"));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::config("prenet_dropout must be in [0, 1)"));
        }
        if self.gmm_mixtures == 0 || self.lsa_kernel % 2 == 0 {
            return Err(Error::config("gmm_mixtures must be > 0 and lsa_kernel odd"));
        }
        if !(self.adv.lambda > 0.0) || self.adv.beta < 0.0 {
            return Err(Error::config("adversarial lambda must be > 0 and beta >= 0"));
        }
        Ok(())
    }

    fn prenet_out(&self) -> usize {
        *self.dec_prenet.last().unwrap()
    }
}

/// Which optional branches a training run activates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TrainingMode {
    pub vq: bool,
    pub adversarial: bool,
}

impl TrainingMode {
    pub fn baseline() -> Self {
        TrainingMode::default()
    }

    pub fn label(&self) -> &'static str {
        match (self.vq, self.adversarial) {
            (false, false) => "baseline",
            (true, false) => "vq",
            (false, true) => "adversarial",
            (true, true) => "vq+adversarial",
        }
    }
}

/// Speaker id plus clean/noisy flag, settable independently of the training
/// condition at synthesis time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConditionVector {
    pub speaker: usize,
    /// 0 = clean, 1 = noisy.
    pub noise_flag: usize,
}

/// Teacher-forced input for one utterance in a padded batch.
pub struct TrainUtterance<'a> {
    pub symbols: &'a [u16],
    pub mel_target: &'a Array2<f64>,
    /// Real frame count; padded positions beyond it carry zero loss.
    pub frames: usize,
    pub padded_frames: usize,
    pub condition: ConditionVector,
    /// Clean/noisy classifier label for the adversarial branch.
    pub noise_label: usize,
    pub dropout_seed: u64,
}

/// Per-utterance loss terms on the tape.
pub struct LossNodes {
    pub mel_l1: TensorId,
    pub mel_l2: TensorId,
    pub stop_ce: TensorId,
    pub vq_codebook: Option<TensorId>,
    pub vq_commitment: Option<TensorId>,
    pub vq_recon: Option<TensorId>,
    pub adv_ce: Option<TensorId>,
}

/// Loss component values for logging.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub mel_l1: f64,
    pub mel_l2: f64,
    pub stop_ce: f64,
    pub vq_codebook: f64,
    pub vq_commitment: f64,
    pub vq_recon: f64,
    pub adv_ce: f64,
}

impl LossNodes {
    /// Additive composition: mel terms plus stop cross-entropy, then each
    /// enabled branch term, then `β`-weighted classifier cross-entropy.
    pub fn compose(&self, g: &mut Graph, beta: f64) -> Result<TensorId> {
        let mut terms = vec![self.mel_l1, self.mel_l2, self.stop_ce];
        for t in [self.vq_codebook, self.vq_commitment, self.vq_recon].into_iter().flatten() {
            terms.push(t);
        }
        let mut total = g.tape.add_n(&terms)?;
        if let Some(ce) = self.adv_ce {
            total = crate::adv::adv_loss(g, total, ce, beta)?;
        }
        Ok(total)
    }

    pub fn values(&self, g: &Graph, beta: f64) -> LossValues {
        let v = |id: Option<TensorId>| id.map(|i| g.tape.scalar_value(i)).unwrap_or(0.0);
        let mel_l1 = g.tape.scalar_value(self.mel_l1);
        let mel_l2 = g.tape.scalar_value(self.mel_l2);
        let stop_ce = g.tape.scalar_value(self.stop_ce);
        let vq_codebook = v(self.vq_codebook);
        let vq_commitment = v(self.vq_commitment);
        let vq_recon = v(self.vq_recon);
        let adv_ce = v(self.adv_ce);
        LossValues {
            total: mel_l1 + mel_l2 + stop_ce + vq_codebook + vq_commitment + vq_recon
                + beta * adv_ce,
            mel_l1,
            mel_l2,
            stop_ce,
            vq_codebook,
            vq_commitment,
            vq_recon,
            adv_ce,
        }
    }
}

/// Result of one teacher-forced pass.
pub struct UttForward {
    /// Predicted frames (padded length in training).
    pub pred: Array2<f64>,
    /// Attention weights per step (steps × input positions).
    pub alignments: Array2<f64>,
    /// GMM mean trajectories when that attention is active.
    pub mu_trace: Option<Vec<Vec<f64>>>,
    /// Adversarial latents for the real frames.
    pub z_s: Option<Array2<f64>>,
    /// Codebook assignment per real frame.
    pub vq_indices: Vec<usize>,
    /// Continuous codebook-space latents per real frame.
    pub vq_latents: Vec<Vec<f64>>,
    pub losses: LossNodes,
}

/// Result of free-running synthesis.
pub struct SynthOutput {
    pub mel: Array2<f64>,
    pub alignments: Array2<f64>,
    pub mu_trace: Option<Vec<Vec<f64>>>,
    /// Generation hit the hard length cap before the stop token fired.
    pub truncated: bool,
}

enum AttentionLayer {
    Gmm(GmmAttention),
    Lsa(LsaAttention),
}

enum AttentionState {
    Gmm(GmmState),
    Lsa(LsaState),
}

pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub mode: TrainingMode,
    pub vocab: usize,
    pub n_speakers: usize,
    pub store: ParamStore,
    encoder: Encoder,
    dec_prenet: PreNet,
    attention: AttentionLayer,
    lstm: LstmCell,
    mel_out: Dense,
    stop_out: Dense,
    spk_emb: Embedding,
    noise_emb: Embedding,
    vq: Option<VqBranch>,
    adv: Option<AdvBranch>,
}

impl Seq2SeqModel {
    pub fn new(
        config: ModelConfig,
        mode: TrainingMode,
        vocab: usize,
        n_speakers: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&config, vocab);
        let dec_prenet = PreNet::new(
            "dec.pre",
            config.n_mel,
            &config.dec_prenet,
            config.prenet_dropout,
        );
        let prenet_out = config.prenet_out();
        let g_dim = if mode.adversarial {
            config.adv.gru_hidden
        } else {
            prenet_out
        };
        let memory_dim = encoder.memory_dim;
        let query_dim = g_dim + config.dec_lstm;
        let attention = match config.attention {
            AttentionKind::Gmm => AttentionLayer::Gmm(GmmAttention::new(&config, query_dim)),
            AttentionKind::Lsa => {
                AttentionLayer::Lsa(LsaAttention::new(&config, query_dim, memory_dim))
            }
        };
        let lstm_in = g_dim
            + memory_dim
            + if mode.vq { config.vq.codebook_dim } else { 0 }
            + 2 * config.cond_emb;
        let lstm = LstmCell::new("dec.lstm", lstm_in, config.dec_lstm);
        let out_in = config.dec_lstm + memory_dim;
        let mel_out = Dense::new("dec.mel", out_in, config.n_mel);
        let stop_out = Dense::new("dec.stop", out_in, 1);
        let spk_emb = Embedding::new("cond.spk", n_speakers, config.cond_emb);
        let noise_emb = Embedding::new("cond.noise", 2, config.cond_emb);
        let vq = mode.vq.then(|| VqBranch::new(&config.vq, prenet_out));
        let adv = mode
            .adversarial
            .then(|| AdvBranch::new(&config.adv, prenet_out));

        let mut store = ParamStore::new();
        encoder.init(&mut store, seed);
        dec_prenet.init(&mut store, seed);
        match &attention {
            AttentionLayer::Gmm(a) => a.init(&mut store, seed, config.gmm_delta_bias),
            AttentionLayer::Lsa(a) => a.init(&mut store, seed),
        }
        lstm.init(&mut store, seed);
        mel_out.init(&mut store, seed);
        stop_out.init(&mut store, seed);
        spk_emb.init(&mut store, seed);
        noise_emb.init(&mut store, seed);
        if let Some(v) = &vq {
            v.init(&mut store, seed);
        }
        if let Some(a) = &adv {
            a.init(&mut store, seed);
        }

        Ok(Seq2SeqModel {
            config,
            mode,
            vocab,
            n_speakers,
            store,
            encoder,
            dec_prenet,
            attention,
            lstm,
            mel_out,
            stop_out,
            spk_emb,
            noise_emb,
            vq,
            adv,
        })
    }

    /// Encoder memory for a symbol sequence with the end marker appended.
    /// Symbol ids must be below the vocabulary size.
    pub fn encode_text(&self, g: &mut Graph, symbols: &[u16]) -> Result<TensorId> {
        if symbols.is_empty() {
            return Err(Error::invalid("encode_text", "empty symbol sequence"));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= self.vocab) {
            return Err(Error::UnknownSymbol(bad));
        }
        let mut with_eos = symbols.to_vec();
        with_eos.push(self.vocab as u16 - 1);
        self.encoder.forward(g, &with_eos)
    }

    fn init_attention_state(&self, g: &mut Graph, n: usize) -> Result<AttentionState> {
        Ok(match &self.attention {
            AttentionLayer::Gmm(a) => AttentionState::Gmm(a.init_state(g)?),
            AttentionLayer::Lsa(a) => AttentionState::Lsa(a.init_state(g, n)?),
        })
    }

    fn attention_step(
        &self,
        g: &mut Graph,
        state: &mut AttentionState,
        query: TensorId,
        memory: TensorId,
    ) -> Result<attention::AttentionStep> {
        match (&self.attention, state) {
            (AttentionLayer::Gmm(a), AttentionState::Gmm(s)) => a.step(g, s, query, memory),
            (AttentionLayer::Lsa(a), AttentionState::Lsa(s)) => a.step(g, s, query, memory),
            _ => unreachable!("attention state kind matches the layer kind"),
        }
    }

    fn condition_vector(&self, g: &mut Graph, condition: ConditionVector) -> Result<TensorId> {
        if condition.speaker >= self.n_speakers {
            return Err(Error::invalid(
                "condition",
                format!("speaker {} of {}", condition.speaker, self.n_speakers),
            ));
        }
        if condition.noise_flag > 1 {
            return Err(Error::invalid("condition", "noise flag must be 0 or 1"));
        }
        let s = self.spk_emb.forward_one(g, condition.speaker)?;
        let n = self.noise_emb.forward_one(g, condition.noise_flag)?;
        g.tape.concat_cols(&[s, n])
    }

    /// Teacher-forced pass over one padded utterance. Positions at and past
    /// `frames` are still computed (the batch is padded) but contribute
    /// exactly zero loss: their terms are never added.
    pub fn forward_training(&self, g: &mut Graph, utt: &TrainUtterance) -> Result<UttForward> {
        if utt.mel_target.ncols() != self.config.n_mel {
            return Err(Error::shape(
                "forward_training",
                format!("{} mel bands, model wants {}", utt.mel_target.ncols(), self.config.n_mel),
            ));
        }
        if utt.frames == 0 || utt.frames > utt.mel_target.nrows() {
            return Err(Error::invalid("forward_training", "bad frame count"));
        }
        if utt.padded_frames < utt.frames {
            return Err(Error::invalid("forward_training", "padded length below real length"));
        }

        let memory = self.encode_text(g, utt.symbols)?;
        let n_positions = g.tape.value(memory).nrows();
        let mut attn_state = self.init_attention_state(g, n_positions)?;
        let mut lstm_state = self.lstm.init_state(g)?;
        let mut adv_state = match &self.adv {
            Some(a) => Some(a.init_state(g)?),
            None => None,
        };
        let cond = self.condition_vector(g, utt.condition)?;
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(utt.dropout_seed);

        let zeros_frame = Array2::zeros((1, self.config.n_mel));
        let mut pred = Array2::zeros((utt.padded_frames, self.config.n_mel));
        let mut alignments = Array2::zeros((utt.padded_frames, n_positions));
        let mut z_s_rows: Vec<TensorId> = Vec::new();
        let mut vq_indices = Vec::new();
        let mut vq_latents = Vec::new();

        let mut mel_l1_steps = Vec::with_capacity(utt.frames);
        let mut mel_l2_steps = Vec::with_capacity(utt.frames);
        let mut stop_steps = Vec::with_capacity(utt.frames);
        let mut vq_cb_steps = Vec::new();
        let mut vq_cm_steps = Vec::new();
        let mut vq_rec_steps = Vec::new();
        let mut adv_ce_steps = Vec::new();

        for t in 0..utt.padded_frames {
            let y_prev = if t == 0 {
                g.tape.constant(zeros_frame.clone())?
            } else {
                let row = utt
                    .mel_target
                    .row((t - 1).min(utt.mel_target.nrows() - 1))
                    .insert_axis(ndarray::Axis(0))
                    .to_owned();
                g.tape.constant(row)?
            };
            let step = self.decoder_step(
                g,
                y_prev,
                memory,
                &mut attn_state,
                &mut lstm_state,
                &mut adv_state,
                cond,
                &mut dropout_rng,
            )?;

            pred.row_mut(t).assign(&g.tape.value(step.mel).row(0));
            alignments
                .row_mut(t)
                .assign(&g.tape.value(step.weights).row(0));

            let real = t < utt.frames;
            if real {
                if let Some(z) = step.z_s {
                    z_s_rows.push(z);
                }
                if let Some(vq) = &step.vq {
                    vq_indices.push(vq.index);
                    vq_latents.push(g.tape.value(vq.z_e).iter().cloned().collect());
                    vq_cb_steps.push(vq.codebook_loss);
                    vq_cm_steps.push(vq.commitment_loss);
                    vq_rec_steps.push(step.vq_recon.expect("recon accompanies vq"));
                }
                let target_row = utt.mel_target.row(t).insert_axis(ndarray::Axis(0)).to_owned();
                let target = g.tape.constant(target_row)?;
                let diff = g.tape.sub(step.mel, target)?;
                let adiff = g.tape.abs(diff)?;
                mel_l1_steps.push(g.tape.mean(adiff)?);
                let sq = g.tape.mul(diff, diff)?;
                mel_l2_steps.push(g.tape.mean(sq)?);
                let stop_target = if t + 1 == utt.frames { 1.0 } else { 0.0 };
                let bce = g
                    .tape
                    .bce_logits(step.stop, Array2::from_elem((1, 1), stop_target))?;
                stop_steps.push(g.tape.sum(bce)?);
                if let (Some(adv), Some(z)) = (&self.adv, step.z_s) {
                    if adv.cfg.granularity == AdvGranularity::Frame {
                        let logits = adv.classify_frame(g, z)?;
                        let ce = g.tape.ce_logits_rows(logits, &[utt.noise_label])?;
                        adv_ce_steps.push(g.tape.sum(ce)?);
                    }
                }
            }
        }

        let inv_t = 1.0 / utt.frames as f64;
        let mel_l1 = {
            let s = g.tape.add_n(&mel_l1_steps)?;
            g.tape.scale(s, inv_t)?
        };
        let mel_l2 = {
            let s = g.tape.add_n(&mel_l2_steps)?;
            g.tape.scale(s, inv_t)?
        };
        let stop_ce = {
            let s = g.tape.add_n(&stop_steps)?;
            g.tape.scale(s, inv_t)?
        };
        let (vq_codebook, vq_commitment, vq_recon) = if self.vq.is_some() {
            let cb = g.tape.add_n(&vq_cb_steps)?;
            let cm = g.tape.add_n(&vq_cm_steps)?;
            let rec = g.tape.add_n(&vq_rec_steps)?;
            (
                Some(g.tape.scale(cb, inv_t)?),
                Some(g.tape.scale(cm, inv_t)?),
                Some(g.tape.scale(rec, inv_t)?),
            )
        } else {
            (None, None, None)
        };
        let adv_ce = match &self.adv {
            Some(adv) => match adv.cfg.granularity {
                AdvGranularity::Frame => {
                    let s = g.tape.add_n(&adv_ce_steps)?;
                    Some(g.tape.scale(s, inv_t)?)
                }
                AdvGranularity::Sentence => {
                    let logits = adv.classify_sentence(g, &z_s_rows)?;
                    let ce = g.tape.ce_logits_rows(logits, &[utt.noise_label])?;
                    Some(g.tape.sum(ce)?)
                }
            },
            None => None,
        };

        let z_s = if z_s_rows.is_empty() {
            None
        } else {
            let mut m = Array2::zeros((z_s_rows.len(), self.config.adv.gru_hidden));
            for (i, id) in z_s_rows.iter().enumerate() {
                m.row_mut(i).assign(&g.tape.value(*id).row(0));
            }
            Some(m)
        };
        let mu_trace = match &attn_state {
            AttentionState::Gmm(s) => Some(s.mu_trace.clone()),
            AttentionState::Lsa(_) => None,
        };

        Ok(UttForward {
            pred,
            alignments,
            mu_trace,
            z_s,
            vq_indices,
            vq_latents,
            losses: LossNodes {
                mel_l1,
                mel_l2,
                stop_ce,
                vq_codebook,
                vq_commitment,
                vq_recon,
                adv_ce,
            },
        })
    }

    /// Free-running generation until the stop head fires or `max_frames` is
    /// reached. The condition flag defaults to clean in callers.
    pub fn synthesize(
        &self,
        symbols: &[u16],
        condition: ConditionVector,
        max_frames: usize,
        dropout_seed: u64,
    ) -> Result<SynthOutput> {
        if symbols.is_empty() {
            return Err(Error::invalid("synthesize", "empty symbol sequence"));
        }
        if max_frames == 0 {
            return Err(Error::invalid("synthesize", "max_frames must be > 0"));
        }
        let mut g = Graph::new(&self.store);
        let memory = self.encode_text(&mut g, symbols)?;
        let n_positions = g.tape.value(memory).nrows();
        let mut attn_state = self.init_attention_state(&mut g, n_positions)?;
        let mut lstm_state = self.lstm.init_state(&mut g)?;
        let mut adv_state = match &self.adv {
            Some(a) => Some(a.init_state(&mut g)?),
            None => None,
        };
        let cond = self.condition_vector(&mut g, condition)?;
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);

        let mut rows: Vec<Array2<f64>> = Vec::new();
        let mut weight_rows: Vec<Array2<f64>> = Vec::new();
        let mut prev = Array2::zeros((1, self.config.n_mel));
        let mut truncated = true;
        for _ in 0..max_frames {
            let y_prev = g.tape.constant(prev.clone())?;
            let step = self.decoder_step(
                &mut g,
                y_prev,
                memory,
                &mut attn_state,
                &mut lstm_state,
                &mut adv_state,
                cond,
                &mut dropout_rng,
            )?;
            let frame = g.tape.value(step.mel).clone();
            weight_rows.push(g.tape.value(step.weights).clone());
            let stop_p = sigmoid(g.tape.scalar_value(step.stop));
            prev = frame.clone();
            rows.push(frame);
            if stop_p > self.config.stop_threshold {
                truncated = false;
                break;
            }
        }

        let m = rows.len();
        let mut mel = Array2::zeros((m, self.config.n_mel));
        let mut alignments = Array2::zeros((m, n_positions));
        for (i, r) in rows.iter().enumerate() {
            mel.row_mut(i).assign(&r.row(0));
            alignments.row_mut(i).assign(&weight_rows[i].row(0));
        }
        let mu_trace = match &attn_state {
            AttentionState::Gmm(s) => Some(s.mu_trace.clone()),
            AttentionState::Lsa(_) => None,
        };
        Ok(SynthOutput {
            mel,
            alignments,
            mu_trace,
            truncated,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_step(
        &self,
        g: &mut Graph,
        y_prev: TensorId,
        memory: TensorId,
        attn_state: &mut AttentionState,
        lstm_state: &mut (TensorId, TensorId),
        adv_state: &mut Option<TensorId>,
        cond: TensorId,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<DecoderStep> {
        let p = self.dec_prenet.forward(g, y_prev, dropout_rng)?;
        // The adversarial module replaces the raw pre-net frame as the
        // autoregressive feature: its output feeds both attention and the
        // decoder recurrence.
        let (g_t, z_s) = match (&self.adv, adv_state) {
            (Some(adv), Some(state)) => {
                let z = adv.step(g, p, *state)?;
                *state = z;
                (z, Some(z))
            }
            _ => (p, None),
        };
        let query = g.tape.concat_cols(&[g_t, lstm_state.0])?;
        let att = self.attention_step(g, attn_state, query, memory)?;

        let (vq, vq_recon) = match &self.vq {
            Some(branch) => {
                let step = branch.apply(g, p)?;
                let recon = branch.decode(g, step.straight_through)?;
                let target = g.tape.stop_gradient(p)?;
                let diff = g.tape.sub(recon, target)?;
                let sq = g.tape.mul(diff, diff)?;
                let loss = g.tape.mean(sq)?;
                (Some(step), Some(loss))
            }
            None => (None, None),
        };

        let mut parts = vec![g_t, att.context];
        if let Some(v) = &vq {
            parts.push(v.straight_through);
        }
        parts.push(cond);
        let lstm_in = g.tape.concat_cols(&parts)?;
        let (h, c) = self.lstm.step(g, lstm_in, *lstm_state)?;
        *lstm_state = (h, c);

        let out_in = g.tape.concat_cols(&[h, att.context])?;
        let mel = self.mel_out.forward(g, out_in)?;
        let stop = self.stop_out.forward(g, out_in)?;
        Ok(DecoderStep {
            mel,
            stop,
            weights: att.weights,
            z_s,
            vq,
            vq_recon,
        })
    }
}

struct DecoderStep {
    mel: TensorId,
    stop: TensorId,
    weights: TensorId,
    z_s: Option<TensorId>,
    vq: Option<crate::vq::VqStep>,
    vq_recon: Option<TensorId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
