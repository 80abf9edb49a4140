use ndarray::Array2;

use crate::autodiff::TensorId;
use crate::error::{Error, Result};

use super::layers::{Conv1d, Dense};
use super::params::{Graph, ParamStore};
use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Gmm,
    Lsa,
}

/// Per-step attention output.
pub struct AttentionStep {
    pub context: TensorId,
    /// `1×N` weights over input positions; always a simplex.
    pub weights: TensorId,
}

/// Mixture-of-Gaussians attention. Mean increments go through a softplus so
/// means never move backward; the weights read only positions, never memory
/// content, which is what makes it robust to noisy text.
#[derive(Debug, Clone)]
pub struct GmmAttention {
    hidden: Dense,
    out: Dense,
    pub mixtures: usize,
    sigma_floor: f64,
}

/// Mutable per-utterance state: the per-mixture means.
pub struct GmmState {
    pub mu: TensorId,
    /// Snapshot of means after every step, for monotonicity checks.
    pub mu_trace: Vec<Vec<f64>>,
}

impl GmmAttention {
    pub fn new(cfg: &ModelConfig, query_dim: usize) -> Self {
        GmmAttention {
            hidden: Dense::new("att.gmm.hidden", query_dim, cfg.attn_hidden),
            out: Dense::new("att.gmm.out", cfg.attn_hidden, 3 * cfg.gmm_mixtures),
            mixtures: cfg.gmm_mixtures,
            sigma_floor: 0.05,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64, delta_bias: f64) {
        self.hidden.init(store, seed);
        self.out.init(store, seed);
        // Bias layout [w | delta | sigma]: slow initial advance, moderate width.
        let mut b = Array2::zeros((1, 3 * self.mixtures));
        for k in 0..self.mixtures {
            b[(0, self.mixtures + k)] = delta_bias;
        }
        store.insert(&format!("{}.b", self.out.name), b);
    }

    pub fn init_state(&self, g: &mut Graph) -> Result<GmmState> {
        let mu = g.tape.constant(Array2::zeros((1, self.mixtures)))?;
        Ok(GmmState {
            mu,
            mu_trace: Vec::new(),
        })
    }

    pub fn step(
        &self,
        g: &mut Graph,
        state: &mut GmmState,
        query: TensorId,
        memory: TensorId,
    ) -> Result<AttentionStep> {
        let n = g.tape.value(memory).nrows();
        let k = self.mixtures;
        let h = self.hidden.forward(g, query)?;
        let h = g.tape.tanh(h)?;
        let p = self.out.forward(g, h)?;
        let w_hat = g.tape.slice_cols(p, 0, k)?;
        let delta_hat = g.tape.slice_cols(p, k, 2 * k)?;
        let sigma_hat = g.tape.slice_cols(p, 2 * k, 3 * k)?;

        let w = g.tape.softmax_rows(w_hat)?;
        let delta = g.tape.softplus(delta_hat)?;
        let mu = g.tape.add(state.mu, delta)?;
        let sigma_sp = g.tape.softplus(sigma_hat)?;
        let floor = g.tape.constant(Array2::from_elem((1, k), self.sigma_floor))?;
        let sigma = g.tape.add(sigma_sp, floor)?;

        let weights = g.tape.gmm_weights(mu, sigma, w, n)?;
        let context = g.tape.matmul(weights, memory)?;

        state.mu = mu;
        state
            .mu_trace
            .push(g.tape.value(mu).iter().cloned().collect());
        Ok(AttentionStep { context, weights })
    }
}

/// Content-based location-sensitive attention: scores combine the query,
/// each memory row and convolutional features of the previous and
/// cumulative alignments.
#[derive(Debug, Clone)]
pub struct LsaAttention {
    query_proj: Dense,
    memory_proj: Dense,
    location_proj: Dense,
    location_conv: Conv1d,
    score: Dense,
}

pub struct LsaState {
    pub prev: TensorId,
    pub cumulative: TensorId,
}

impl LsaAttention {
    pub fn new(cfg: &ModelConfig, query_dim: usize, memory_dim: usize) -> Self {
        LsaAttention {
            query_proj: Dense::new("att.lsa.q", query_dim, cfg.attn_hidden),
            memory_proj: Dense::new("att.lsa.m", memory_dim, cfg.attn_hidden),
            location_proj: Dense::new("att.lsa.f", cfg.lsa_filters, cfg.attn_hidden),
            location_conv: Conv1d::new("att.lsa.conv", cfg.lsa_kernel, 2, cfg.lsa_filters),
            score: Dense::new("att.lsa.v", cfg.attn_hidden, 1),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.query_proj.init(store, seed);
        self.memory_proj.init(store, seed);
        self.location_proj.init(store, seed);
        self.location_conv.init(store, seed);
        self.score.init(store, seed);
    }

    pub fn init_state(&self, g: &mut Graph, n: usize) -> Result<LsaState> {
        Ok(LsaState {
            prev: g.tape.constant(Array2::zeros((1, n)))?,
            cumulative: g.tape.constant(Array2::zeros((1, n)))?,
        })
    }

    pub fn step(
        &self,
        g: &mut Graph,
        state: &mut LsaState,
        query: TensorId,
        memory: TensorId,
    ) -> Result<AttentionStep> {
        let n = g.tape.value(memory).nrows();
        if g.tape.value(state.prev).ncols() != n {
            return Err(Error::shape("lsa_attention", "state length vs memory rows"));
        }
        // N×2 location input from the two alignment rows.
        let prev_col = g.tape.transpose(state.prev)?;
        let cum_col = g.tape.transpose(state.cumulative)?;
        let loc_in = g.tape.concat_cols(&[prev_col, cum_col])?;
        let loc = self.location_conv.forward(g, loc_in)?;
        let loc = self.location_proj.forward(g, loc)?;

        let mem_term = self.memory_proj.forward(g, memory)?;
        let q_term = self.query_proj.forward(g, query)?;
        let sum = g.tape.add(mem_term, loc)?;
        let sum = g.tape.add_row(sum, q_term)?;
        let act = g.tape.tanh(sum)?;
        let energies = self.score.forward(g, act)?; // N×1
        let energies = g.tape.transpose(energies)?; // 1×N
        let weights = g.tape.softmax_rows(energies)?;
        let context = g.tape.matmul(weights, memory)?;

        let cumulative = g.tape.add(state.cumulative, weights)?;
        state.prev = weights;
        state.cumulative = cumulative;
        Ok(AttentionStep { context, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn gmm_weights_are_a_simplex_and_means_monotone() {
        let cfg = ModelConfig::tiny();
        let att = GmmAttention::new(&cfg, 8);
        let mut store = ParamStore::new();
        att.init(&mut store, 3, cfg.gmm_delta_bias);
        let mut g = Graph::new(&store);
        let memory = g
            .tape
            .constant(Array2::from_shape_fn((10, 6), |(i, j)| {
                ((i * 7 + j) as f64 * 0.13).sin()
            }))
            .unwrap();
        let mut state = att.init_state(&mut g).unwrap();
        let mut prev_mu = vec![0.0; att.mixtures];
        for step in 0..8 {
            let q = g
                .tape
                .constant(Array2::from_shape_fn((1, 8), |(_, j)| {
                    (step as f64 - j as f64) * 0.21
                }))
                .unwrap();
            let out = att.step(&mut g, &mut state, q, memory).unwrap();
            let w = g.tape.value(out.weights);
            assert!((w.sum() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| v >= 0.0));
            let mu = state.mu_trace.last().unwrap();
            for (a, b) in prev_mu.iter().zip(mu.iter()) {
                assert!(b >= a, "means moved backward: {a} -> {b}");
            }
            prev_mu = mu.clone();
        }
    }

    #[test]
    fn gmm_context_is_convex_combination() {
        // With identical memory rows, any simplex weighting returns that row.
        let cfg = ModelConfig::tiny();
        let att = GmmAttention::new(&cfg, 4);
        let mut store = ParamStore::new();
        att.init(&mut store, 5, cfg.gmm_delta_bias);
        let mut g = Graph::new(&store);
        let row: Vec<f64> = vec![0.4, -0.2, 1.0, 0.0, 0.3, -0.8];
        let memory = g
            .tape
            .constant(Array2::from_shape_fn((7, 6), |(_, j)| row[j]))
            .unwrap();
        let mut state = att.init_state(&mut g).unwrap();
        let q = g.tape.constant(Array2::zeros((1, 4))).unwrap();
        let out = att.step(&mut g, &mut state, q, memory).unwrap();
        let ctx = g.tape.value(out.context);
        for (a, b) in ctx.iter().zip(row.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lsa_uniform_over_identical_memory_at_first_step() {
        let cfg = ModelConfig::tiny();
        let att = LsaAttention::new(&cfg, 4, 6);
        let mut store = ParamStore::new();
        att.init(&mut store, 6);
        let mut g = Graph::new(&store);
        let memory = g
            .tape
            .constant(Array2::from_shape_fn((5, 6), |(_, j)| 0.1 * j as f64))
            .unwrap();
        let mut state = att.init_state(&mut g, 5).unwrap();
        let q = g.tape.constant(Array2::from_elem((1, 4), 0.3)).unwrap();
        let out = att.step(&mut g, &mut state, q, memory).unwrap();
        let w = g.tape.value(out.weights);
        assert!((w.sum() - 1.0).abs() < 1e-9);
        for &v in w.iter() {
            assert!((v - 0.2).abs() < 1e-9, "weights not uniform: {v}");
        }
        // Cumulative alignment accumulates the step's weights.
        let cum = g.tape.value(state.cumulative);
        assert!((cum.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lsa_weights_always_simplex() {
        let cfg = ModelConfig::tiny();
        let att = LsaAttention::new(&cfg, 4, 6);
        let mut store = ParamStore::new();
        att.init(&mut store, 11);
        let mut g = Graph::new(&store);
        let memory = g
            .tape
            .constant(Array2::from_shape_fn((9, 6), |(i, j)| {
                ((i * 3 + j) as f64).sin()
            }))
            .unwrap();
        let mut state = att.init_state(&mut g, 9).unwrap();
        for step in 0..6 {
            let q = g
                .tape
                .constant(Array2::from_shape_fn((1, 4), |(_, j)| {
                    (step + j) as f64 * 0.37
                }))
                .unwrap();
            let out = att.step(&mut g, &mut state, q, memory).unwrap();
            let w = g.tape.value(out.weights);
            assert!((w.sum() - 1.0).abs() < 1e-6);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }
}
