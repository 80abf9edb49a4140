use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::train::{clip_global_norm, Adam};

/// Result of training a fresh classifier on frozen latents.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeReport {
    /// Frame-level accuracy on held-out utterances.
    pub accuracy: f64,
    /// confusion[truth][predicted], clean = 0 / noisy = 1.
    pub confusion: [[usize; 2]; 2],
    pub n_train_utterances: usize,
    pub n_test_utterances: usize,
    pub n_train_frames: usize,
    pub n_test_frames: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub steps: u64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.7,
            steps: 300,
            hidden: 64,
            learning_rate: 1e-2,
            seed: 7,
        }
    }
}

/// Train a fresh two-layer classifier on frozen per-frame latents and score
/// it on held-out utterances. The split is by utterance (stratified by
/// label) so frames of one utterance never straddle the split.
pub fn noise_probe(utterances: &[(Array2<f64>, usize)], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if utterances.len() < 4 {
        return Err(Error::invalid("noise_probe", "need at least 4 labeled utterances"));
    }
    if utterances.iter().any(|(_, l)| *l > 1) {
        return Err(Error::invalid("noise_probe", "labels must be 0 or 1"));
    }
    let dim = utterances[0].0.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Stratified utterance-level split.
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [0usize, 1] {
        let mut idx: Vec<usize> = utterances
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| *l == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::invalid("noise_probe", "both labels must be present"));
        }
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * cfg.train_fraction).round() as usize)
            .clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }

    let stack = |ids: &[usize]| {
        let frames: usize = ids.iter().map(|&i| utterances[i].0.nrows()).sum();
        let mut x = Array2::zeros((frames, dim));
        let mut labels = Vec::with_capacity(frames);
        let mut at = 0;
        for &i in ids {
            let (m, l) = &utterances[i];
            x.slice_mut(ndarray::s![at..at + m.nrows(), ..]).assign(m);
            labels.extend(std::iter::repeat(*l).take(m.nrows()));
            at += m.nrows();
        }
        (x, labels)
    };
    let (x_train, y_train) = stack(&train_idx);
    let (x_test, y_test) = stack(&test_idx);

    // Fresh head: dim -> hidden -> 2.
    let mut store = crate::model::ParamStore::new();
    store.init_glorot("probe.w1", dim, cfg.hidden, cfg.seed);
    store.init_const("probe.b1", 1, cfg.hidden, 0.0);
    store.init_glorot("probe.w2", cfg.hidden, 2, cfg.seed);
    store.init_const("probe.b2", 1, 2, 0.0);
    let mut adam = Adam::new();

    let forward = |tape: &mut Tape,
                   store: &crate::model::ParamStore,
                   x: &Array2<f64>|
     -> Result<(crate::autodiff::TensorId, BTreeMap<String, crate::autodiff::TensorId>)> {
        let mut ids = BTreeMap::new();
        let xid = tape.constant(x.clone())?;
        let w1 = tape.leaf(store.get("probe.w1")?.clone())?;
        let b1 = tape.leaf(store.get("probe.b1")?.clone())?;
        let w2 = tape.leaf(store.get("probe.w2")?.clone())?;
        let b2 = tape.leaf(store.get("probe.b2")?.clone())?;
        ids.insert("probe.w1".into(), w1);
        ids.insert("probe.b1".into(), b1);
        ids.insert("probe.w2".into(), w2);
        ids.insert("probe.b2".into(), b2);
        let h = tape.matmul(xid, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h)?;
        let logits = tape.matmul(h, w2)?;
        let logits = tape.add_row(logits, b2)?;
        Ok((logits, ids))
    };

    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let (logits, ids) = forward(&mut tape, &store, &x_train)?;
        let ce = tape.ce_logits_rows(logits, &y_train)?;
        let loss = tape.mean(ce)?;
        tape.backward(loss)?;
        let mut grads: BTreeMap<String, Array2<f64>> = ids
            .iter()
            .map(|(name, id)| (name.clone(), tape.grad_or_zeros(*id)))
            .collect();
        clip_global_norm(&mut grads, 5.0);
        adam.step(&mut store, &grads, cfg.learning_rate)?;
    }

    let mut tape = Tape::new();
    let (logits, _) = forward(&mut tape, &store, &x_test)?;
    let lv = tape.value(logits);
    let mut confusion = [[0usize; 2]; 2];
    for (i, &truth) in y_test.iter().enumerate() {
        let predicted = usize::from(lv[(i, 1)] > lv[(i, 0)]);
        confusion[truth][predicted] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(ProbeReport {
        accuracy: correct as f64 / y_test.len() as f64,
        confusion,
        n_train_utterances: train_idx.len(),
        n_test_utterances: test_idx.len(),
        n_train_frames: y_train.len(),
        n_test_frames: y_test.len(),
    })
}
