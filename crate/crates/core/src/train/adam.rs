use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::Result;
use crate::model::ParamStore;

/// Adaptive-moment optimizer with bias correction.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Apply one update with the given learning rate. Gradient entries for
    /// parameters the pass never touched are absent and left unchanged.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.dim()));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let theta = store.get_mut(name)?;
            ndarray::Zip::from(theta).and(&*m).and(&*v).for_each(|t, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *t -= lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Global-norm gradient clipping; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Array2<f64>>, max_norm: f64) -> f64 {
    let norm: f64 = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x - 3)^2 elementwise
        let mut store = ParamStore::new();
        store.insert("x", array![[0.0, 10.0]]);
        let mut opt = Adam::new();
        for _ in 0..2000 {
            let x = store.get("x").unwrap().clone();
            let grad = x.mapv(|v| 2.0 * (v - 3.0));
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), grad);
            opt.step(&mut store, &grads, 0.05).unwrap();
        }
        let x = store.get("x").unwrap();
        assert!((x[(0, 0)] - 3.0).abs() < 1e-3, "{}", x[(0, 0)]);
        assert!((x[(0, 1)] - 3.0).abs() < 1e-3, "{}", x[(0, 1)]);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), array![[3.0, 0.0]]);
        grads.insert("b".to_string(), array![[0.0, 4.0]]);
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads["a"][(0, 0)] - 0.6).abs() < 1e-12);
        assert!((grads["b"][(0, 1)] - 0.8).abs() < 1e-12);
        // Below the threshold nothing changes.
        let norm2 = clip_global_norm(&mut grads, 10.0);
        assert!((norm2 - 1.0).abs() < 1e-12);
        assert!((grads["a"][(0, 0)] - 0.6).abs() < 1e-12);
    }
}
