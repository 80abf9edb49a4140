//! Unsupervised-clustering branch: a small encoder maps decoder pre-net
//! frames into a learned codebook space, the nearest code vector is
//! selected and passed forward through a straight-through node, and a
//! mirror decoder reconstructs the pre-net latent. The codebook is trained
//! by the stop-gradient pair of losses; the encoder additionally commits to
//! its chosen entry.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::TensorId;
use crate::error::{Error, Result};
use crate::model::layers::Dense;
use crate::model::params::{Graph, ParamStore};

pub const CODEBOOK_PARAM: &str = "vq.codebook";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub hidden: usize,
    /// Commitment loss weight.
    pub alpha: f64,
    /// Reseed an entry after this many optimizer steps without use.
    pub dead_restart_steps: u64,
    pub enable_dead_restart: bool,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            codebook_size: 256,
            codebook_dim: 128,
            hidden: 256,
            alpha: 0.25,
            dead_restart_steps: 2000,
            enable_dead_restart: true,
        }
    }
}

/// Nearest codebook entry by Euclidean distance; ties break to the lowest
/// index. Returns `(index, squared distance)`.
pub fn quantize(z_e: &Array2<f64>, codebook: &Array2<f64>) -> Result<(usize, f64)> {
    let (k, d) = codebook.dim();
    if k == 0 {
        return Err(Error::invalid("quantize", "empty codebook"));
    }
    if z_e.dim() != (1, d) {
        return Err(Error::shape(
            "quantize",
            format!("z_e {:?} vs codebook dim {d}", z_e.dim()),
        ));
    }
    let mut best = (0usize, f64::INFINITY);
    for i in 0..k {
        let mut dist = 0.0;
        for j in 0..d {
            let diff = z_e[(0, j)] - codebook[(i, j)];
            dist += diff * diff;
        }
        if dist < best.1 {
            best = (i, dist);
        }
    }
    Ok(best)
}

/// One quantized frame on the tape.
pub struct VqStep {
    pub z_e: TensorId,
    pub index: usize,
    /// The selected codebook row (gradients reach the codebook through it).
    pub z_q: TensorId,
    /// Straight-through latent: forwards `z_q`, backprops to `z_e`.
    pub straight_through: TensorId,
    pub codebook_loss: TensorId,
    pub commitment_loss: TensorId,
}

#[derive(Debug, Clone)]
pub struct VqBranch {
    enc: Vec<Dense>,
    dec: Vec<Dense>,
    pub cfg: VqConfig,
}

impl VqBranch {
    pub fn new(cfg: &VqConfig, prenet_dim: usize) -> Self {
        let enc = vec![
            Dense::new("vq.enc.fc0", prenet_dim, cfg.hidden),
            Dense::new("vq.enc.fc1", cfg.hidden, cfg.hidden),
            Dense::new("vq.enc.out", cfg.hidden, cfg.codebook_dim),
        ];
        let dec = vec![
            Dense::new("vq.dec.fc0", cfg.codebook_dim, cfg.hidden),
            Dense::new("vq.dec.fc1", cfg.hidden, cfg.hidden),
            Dense::new("vq.dec.out", cfg.hidden, prenet_dim),
        ];
        VqBranch {
            enc,
            dec,
            cfg: cfg.clone(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for l in self.enc.iter().chain(self.dec.iter()) {
            l.init(store, seed);
        }
        let k = self.cfg.codebook_size;
        let lim = 1.0 / k as f64;
        store.init_uniform(CODEBOOK_PARAM, k, self.cfg.codebook_dim, -lim, lim, seed);
    }

    /// Continuous latent from a pre-net frame: two hidden layers with ReLU,
    /// then a linear projection into codebook space.
    pub fn encode(&self, g: &mut Graph, prenet_frame: TensorId) -> Result<TensorId> {
        let mut h = prenet_frame;
        for (i, l) in self.enc.iter().enumerate() {
            h = l.forward(g, h)?;
            if i + 1 < self.enc.len() {
                h = g.tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Reconstruct the pre-net latent from a (quantized) latent.
    pub fn decode(&self, g: &mut Graph, z: TensorId) -> Result<TensorId> {
        let mut h = z;
        for (i, l) in self.dec.iter().enumerate() {
            h = l.forward(g, h)?;
            if i + 1 < self.dec.len() {
                h = g.tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Encode, quantize against the current codebook and build the two
    /// stop-gradient loss terms:
    /// codebook `‖sg(z_e) − e_k‖₂²`, commitment `α·‖z_e − sg(e_k)‖₂²`.
    pub fn apply(&self, g: &mut Graph, prenet_frame: TensorId) -> Result<VqStep> {
        let z_e = self.encode(g, prenet_frame)?;
        let codebook_values = g.param_value(CODEBOOK_PARAM)?.clone();
        let (index, _) = quantize(g.tape.value(z_e), &codebook_values)?;
        let codebook = g.param(CODEBOOK_PARAM)?;
        let z_q = g.tape.row(codebook, index)?;
        let straight_through = g.tape.straight_through(z_e, z_q)?;

        let sg_ze = g.tape.stop_gradient(z_e)?;
        let cb_diff = g.tape.sub(sg_ze, z_q)?;
        let cb_sq = g.tape.mul(cb_diff, cb_diff)?;
        let codebook_loss = g.tape.sum(cb_sq)?;

        let sg_zq = g.tape.stop_gradient(z_q)?;
        let cm_diff = g.tape.sub(z_e, sg_zq)?;
        let cm_sq = g.tape.mul(cm_diff, cm_diff)?;
        let cm_sum = g.tape.sum(cm_sq)?;
        let commitment_loss = g.tape.scale(cm_sum, self.cfg.alpha)?;

        Ok(VqStep {
            z_e,
            index,
            z_q,
            straight_through,
            codebook_loss,
            commitment_loss,
        })
    }
}

/// Codebook usage over a training window.
#[derive(Debug, Clone)]
pub struct VqUsage {
    pub counts: Vec<u64>,
    pub last_used_step: Vec<u64>,
    /// Ring buffer of recently seen encoder latents, for dead restarts.
    recent: Vec<Vec<f64>>,
    recent_at: usize,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CodebookHealth {
    pub perplexity: f64,
    pub dead_entry_count: usize,
}

impl VqUsage {
    pub fn new(codebook_size: usize) -> Self {
        VqUsage {
            counts: vec![0; codebook_size],
            last_used_step: vec![0; codebook_size],
            recent: Vec::new(),
            recent_at: 0,
        }
    }

    pub fn record(&mut self, index: usize, z_e: &Array2<f64>, step: u64) {
        self.counts[index] += 1;
        self.last_used_step[index] = step;
        let v: Vec<f64> = z_e.iter().cloned().collect();
        if self.recent.len() < 256 {
            self.recent.push(v);
        } else {
            self.recent[self.recent_at] = v;
            self.recent_at = (self.recent_at + 1) % 256;
        }
    }

    /// Perplexity of the empirical assignment distribution and the number
    /// of never-used entries in the window.
    pub fn health(&self) -> Result<CodebookHealth> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("codebook_health", "no recorded assignments"));
        }
        let mut entropy = 0.0;
        let mut dead = 0usize;
        for &c in &self.counts {
            if c == 0 {
                dead += 1;
                continue;
            }
            let p = c as f64 / total as f64;
            entropy -= p * p.ln();
        }
        Ok(CodebookHealth {
            perplexity: entropy.exp(),
            dead_entry_count: dead,
        })
    }

    pub fn reset_window(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Reseed entries unused for `cfg.dead_restart_steps` to a random recent
    /// encoder latent. Returns how many entries were restarted.
    pub fn restart_dead(
        &mut self,
        store: &mut ParamStore,
        cfg: &VqConfig,
        step: u64,
        seed: u64,
    ) -> Result<usize> {
        if !cfg.enable_dead_restart || self.recent.is_empty() || step < cfg.dead_restart_steps {
            return Ok(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step);
        let mut restarted = 0;
        let codebook = store.get_mut(CODEBOOK_PARAM)?;
        for i in 0..cfg.codebook_size {
            if step.saturating_sub(self.last_used_step[i]) >= cfg.dead_restart_steps {
                let pick = &self.recent[rng.gen_range(0..self.recent.len())];
                for (j, v) in pick.iter().enumerate() {
                    codebook[(i, j)] = *v;
                }
                self.last_used_step[i] = step;
                restarted += 1;
            }
        }
        Ok(restarted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quantize_exact_match_has_zero_distance() {
        let codebook = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let z = array![[3.0, 4.0]];
        let (k, d) = quantize(&z, &codebook).unwrap();
        assert_eq!(k, 1);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn quantize_ties_break_to_lowest_index() {
        let codebook = array![[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]];
        let z = array![[0.0, 0.0]];
        let (k, _) = quantize(&z, &codebook).unwrap();
        assert_eq!(k, 0);
    }

    #[test]
    fn quantize_matches_independent_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let codebook = Array2::from_shape_fn((64, 16), |_| rng.gen_range(-1.0..1.0));
        for _ in 0..500 {
            let z = Array2::from_shape_fn((1, 16), |_| rng.gen_range(-1.0..1.0));
            let (k, _) = quantize(&z, &codebook).unwrap();
            // Independent route: reversed scan order, ties kept from the
            // lower index by <=.
            let mut best = (usize::MAX, f64::INFINITY);
            for i in (0..64).rev() {
                let dist: f64 = (0..16)
                    .map(|j| (z[(0, j)] - codebook[(i, j)]).powi(2))
                    .sum();
                if dist <= best.1 {
                    best = (i, dist);
                }
            }
            assert_eq!(k, best.0);
        }
    }

    #[test]
    fn loss_terms_hand_case_and_gradient_routing() {
        // z_e = [1, 0], e_k = [0, 0], alpha 0.25 -> codebook 1.0, commitment 0.25.
        let mut store = ParamStore::new();
        store.insert(CODEBOOK_PARAM, array![[0.0, 0.0], [9.0, 9.0]]);
        let mut g = Graph::new(&store);
        let z_e = g.tape.leaf(array![[1.0, 0.0]]).unwrap();
        let codebook = g.param(CODEBOOK_PARAM).unwrap();
        let z_q = g.tape.row(codebook, 0).unwrap();
        let sg_ze = g.tape.stop_gradient(z_e).unwrap();
        let cb_diff = g.tape.sub(sg_ze, z_q).unwrap();
        let cb_sq = g.tape.mul(cb_diff, cb_diff).unwrap();
        let codebook_loss = g.tape.sum(cb_sq).unwrap();
        let sg_zq = g.tape.stop_gradient(z_q).unwrap();
        let cm_diff = g.tape.sub(z_e, sg_zq).unwrap();
        let cm_sq = g.tape.mul(cm_diff, cm_diff).unwrap();
        let cm_sum = g.tape.sum(cm_sq).unwrap();
        let commitment_loss = g.tape.scale(cm_sum, 0.25).unwrap();
        assert_eq!(g.tape.scalar_value(codebook_loss), 1.0);
        assert_eq!(g.tape.scalar_value(commitment_loss), 0.25);

        let total = g.tape.add(codebook_loss, commitment_loss).unwrap();
        g.tape.backward(total).unwrap();
        let g_cb = g.tape.grad_or_zeros(codebook);
        let g_ze = g.tape.grad_or_zeros(z_e);
        // d(codebook_loss)/d(e_0) = -2(z_e - e_0) = [-2, 0]; commitment
        // contributes nothing to the codebook.
        assert_eq!(g_cb[(0, 0)], -2.0);
        assert_eq!(g_cb[(0, 1)], 0.0);
        assert_eq!(g_cb[(1, 0)], 0.0);
        // d(commitment)/d(z_e) = 2·α·(z_e - e_0) = [0.5, 0]; codebook term
        // contributes nothing to the encoder side.
        assert_eq!(g_ze[(0, 0)], 0.5);
        assert_eq!(g_ze[(0, 1)], 0.0);
    }

    #[test]
    fn encoder_shapes_and_zero_input() {
        let cfg = VqConfig {
            codebook_size: 8,
            codebook_dim: 6,
            hidden: 10,
            ..VqConfig::default()
        };
        let branch = VqBranch::new(&cfg, 12);
        let mut store = ParamStore::new();
        branch.init(&mut store, 3);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Array2::zeros((1, 12))).unwrap();
        let z_e = branch.encode(&mut g, x).unwrap();
        assert_eq!(g.tape.value(z_e).dim(), (1, 6));
        assert!(g.tape.value(z_e).iter().all(|v| v.is_finite()));
        let recon = branch.decode(&mut g, z_e).unwrap();
        assert_eq!(g.tape.value(recon).dim(), (1, 12));
    }

    #[test]
    fn straight_through_leaves_codebook_untouched() {
        let cfg = VqConfig {
            codebook_size: 4,
            codebook_dim: 3,
            hidden: 6,
            ..VqConfig::default()
        };
        let branch = VqBranch::new(&cfg, 5);
        let mut store = ParamStore::new();
        branch.init(&mut store, 1);
        let mut g = Graph::new(&store);
        let frame = g.tape.leaf(array![[0.2, -0.4, 0.8, 0.0, 0.5]]).unwrap();
        let step = branch.apply(&mut g, frame).unwrap();
        assert_eq!(
            g.tape.value(step.z_q).row(0),
            store.get(CODEBOOK_PARAM).unwrap().row(step.index)
        );
        // A loss through the straight-through path only.
        let s = g.tape.sum(step.straight_through).unwrap();
        g.tape.backward(s).unwrap();
        let gz = g.tape.grad_or_zeros(step.z_e);
        assert!(gz.iter().any(|&v| v != 0.0));
        let code_id = g.param(CODEBOOK_PARAM).unwrap();
        let gc = g.tape.grad_or_zeros(code_id);
        assert!(gc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn health_perplexity_bounds() {
        let mut usage = VqUsage::new(256);
        let z = Array2::zeros((1, 4));
        for _ in 0..100 {
            usage.record(3, &z, 1);
        }
        let h = usage.health().unwrap();
        assert!((h.perplexity - 1.0).abs() < 1e-12);
        assert_eq!(h.dead_entry_count, 255);

        let mut usage = VqUsage::new(256);
        for i in 0..256 {
            usage.record(i, &z, 1);
        }
        let h = usage.health().unwrap();
        assert!((h.perplexity - 256.0).abs() < 1e-9);
        assert_eq!(h.dead_entry_count, 0);
    }

    #[test]
    fn dead_entries_get_restarted() {
        let cfg = VqConfig {
            codebook_size: 4,
            codebook_dim: 2,
            hidden: 4,
            dead_restart_steps: 10,
            enable_dead_restart: true,
            ..VqConfig::default()
        };
        let mut store = ParamStore::new();
        store.insert(CODEBOOK_PARAM, Array2::zeros((4, 2)));
        let mut usage = VqUsage::new(4);
        let z = array![[5.0, -5.0]];
        for step in 0..12 {
            usage.record(0, &z, step);
        }
        let restarted = usage.restart_dead(&mut store, &cfg, 12, 99).unwrap();
        assert_eq!(restarted, 3);
        let cb = store.get(CODEBOOK_PARAM).unwrap();
        assert_eq!(cb[(1, 0)], 5.0); // reseeded to the recent latent
        assert_eq!(cb[(0, 0)], 0.0); // live entry untouched
    }
}
