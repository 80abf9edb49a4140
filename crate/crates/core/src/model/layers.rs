use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::TensorId;
use crate::error::Result;

use super::params::{Graph, ParamStore};

/// Fully connected `in_dim -> out_dim` with bias.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Dense {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        store.init_glorot(&format!("{}.w", self.name), self.in_dim, self.out_dim, seed);
        store.init_const(&format!("{}.b", self.name), 1, self.out_dim, 0.0);
    }

    pub fn forward(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        let w = g.param(&format!("{}.w", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }
}

/// Feed-forward stack with ReLU after every layer and inverted dropout that
/// stays active at inference (masks come from the caller's seeded RNG).
#[derive(Debug, Clone)]
pub struct PreNet {
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

impl PreNet {
    pub fn new(name: &str, in_dim: usize, sizes: &[usize], dropout: f64) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &s) in sizes.iter().enumerate() {
            layers.push(Dense::new(format!("{name}.fc{i}"), d, s));
            d = s;
        }
        PreNet { layers, dropout }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for l in &self.layers {
            l.init(store, seed);
        }
    }

    pub fn forward(&self, g: &mut Graph, x: TensorId, rng: &mut ChaCha8Rng) -> Result<TensorId> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward(g, h)?;
            h = g.tape.relu(h)?;
            if self.dropout > 0.0 {
                let dim = g.tape.value(h).dim();
                let keep = 1.0 - self.dropout;
                let mask = Array2::from_shape_fn(dim, |_| {
                    if rng.gen_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                h = g.tape.mul_const(h, mask)?;
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit cell; state is a `1×hidden` row.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        GruCell {
            name: name.into(),
            in_dim,
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        store.init_glorot(&format!("{}.w", self.name), self.in_dim, 3 * self.hidden, seed);
        store.init_glorot(&format!("{}.u", self.name), self.hidden, 3 * self.hidden, seed);
        store.init_const(&format!("{}.b", self.name), 1, 3 * self.hidden, 0.0);
    }

    pub fn init_state(&self, g: &mut Graph) -> Result<TensorId> {
        g.tape.constant(Array2::zeros((1, self.hidden)))
    }

    pub fn step(&self, g: &mut Graph, x: TensorId, h: TensorId) -> Result<TensorId> {
        let w = g.param(&format!("{}.w", self.name))?;
        let u = g.param(&format!("{}.u", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let xw = g.tape.matmul(x, w)?;
        let hu = g.tape.matmul(h, u)?;
        let n = self.hidden;

        let xw_zr = g.tape.slice_cols(xw, 0, 2 * n)?;
        let hu_zr = g.tape.slice_cols(hu, 0, 2 * n)?;
        let b_zr = g.tape.slice_cols(b, 0, 2 * n)?;
        let zr_pre = g.tape.add(xw_zr, hu_zr)?;
        let zr_pre = g.tape.add_row(zr_pre, b_zr)?;
        let zr = g.tape.sigmoid(zr_pre)?;
        let z = g.tape.slice_cols(zr, 0, n)?;
        let r = g.tape.slice_cols(zr, n, 2 * n)?;

        let xw_n = g.tape.slice_cols(xw, 2 * n, 3 * n)?;
        let hu_n = g.tape.slice_cols(hu, 2 * n, 3 * n)?;
        let b_n = g.tape.slice_cols(b, 2 * n, 3 * n)?;
        let rh = g.tape.mul(r, hu_n)?;
        let n_pre = g.tape.add(xw_n, rh)?;
        let n_pre = g.tape.add_row(n_pre, b_n)?;
        let cand = g.tape.tanh(n_pre)?;

        // h' = h + z ⊙ (cand - h)
        let delta = g.tape.sub(cand, h)?;
        let gated = g.tape.mul(z, delta)?;
        g.tape.add(h, gated)
    }
}

/// LSTM cell; state is a `(1×hidden, 1×hidden)` pair of (hidden, cell).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        LstmCell {
            name: name.into(),
            in_dim,
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        store.init_glorot(&format!("{}.w", self.name), self.in_dim, 4 * self.hidden, seed);
        store.init_glorot(&format!("{}.u", self.name), self.hidden, 4 * self.hidden, seed);
        // Forget-gate bias starts at 1 so memory persists early in training.
        let mut b = Array2::zeros((1, 4 * self.hidden));
        for j in self.hidden..2 * self.hidden {
            b[(0, j)] = 1.0;
        }
        store.insert(&format!("{}.b", self.name), b);
    }

    pub fn init_state(&self, g: &mut Graph) -> Result<(TensorId, TensorId)> {
        let h = g.tape.constant(Array2::zeros((1, self.hidden)))?;
        let c = g.tape.constant(Array2::zeros((1, self.hidden)))?;
        Ok((h, c))
    }

    pub fn step(
        &self,
        g: &mut Graph,
        x: TensorId,
        state: (TensorId, TensorId),
    ) -> Result<(TensorId, TensorId)> {
        let (h, c) = state;
        let w = g.param(&format!("{}.w", self.name))?;
        let u = g.param(&format!("{}.u", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let xw = g.tape.matmul(x, w)?;
        let hu = g.tape.matmul(h, u)?;
        let pre = g.tape.add(xw, hu)?;
        let pre = g.tape.add_row(pre, b)?;
        let n = self.hidden;

        let i_pre = g.tape.slice_cols(pre, 0, n)?;
        let f_pre = g.tape.slice_cols(pre, n, 2 * n)?;
        let g_pre = g.tape.slice_cols(pre, 2 * n, 3 * n)?;
        let o_pre = g.tape.slice_cols(pre, 3 * n, 4 * n)?;
        let i = g.tape.sigmoid(i_pre)?;
        let f = g.tape.sigmoid(f_pre)?;
        let cand = g.tape.tanh(g_pre)?;
        let o = g.tape.sigmoid(o_pre)?;

        let fc = g.tape.mul(f, c)?;
        let ig = g.tape.mul(i, cand)?;
        let c_new = g.tape.add(fc, ig)?;
        let c_act = g.tape.tanh(c_new)?;
        let h_new = g.tape.mul(o, c_act)?;
        Ok((h_new, c_new))
    }
}

/// Highway layer: `t ⊙ relu(W_h x) + (1 - t) ⊙ x` with `t = σ(W_t x)`.
#[derive(Debug, Clone)]
pub struct Highway {
    pub transform: Dense,
    pub gate: Dense,
}

impl Highway {
    pub fn new(name: &str, dim: usize) -> Self {
        Highway {
            transform: Dense::new(format!("{name}.h"), dim, dim),
            gate: Dense::new(format!("{name}.t"), dim, dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.transform.init(store, seed);
        self.gate.init(store, seed);
        // Negative gate bias keeps the carry path open initially.
        store.init_const(&format!("{}.b", self.gate.name), 1, self.gate.out_dim, -1.0);
    }

    pub fn forward(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        let h = self.transform.forward(g, x)?;
        let h = g.tape.relu(h)?;
        let t = self.gate.forward(g, x)?;
        let t = g.tape.sigmoid(t)?;
        // x + t ⊙ (h - x)
        let delta = g.tape.sub(h, x)?;
        let gated = g.tape.mul(t, delta)?;
        g.tape.add(x, gated)
    }
}

/// Symbol embedding table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: name.into(),
            vocab,
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        store.init_uniform(&format!("{}.e", self.name), self.vocab, self.dim, -0.1, 0.1, seed);
    }

    /// Look up a sequence of ids as an `N×dim` matrix.
    pub fn forward(&self, g: &mut Graph, ids: &[u16]) -> Result<TensorId> {
        let table = g.param(&format!("{}.e", self.name))?;
        let rows: Result<Vec<TensorId>> =
            ids.iter().map(|&s| g.tape.row(table, s as usize)).collect();
        g.tape.concat_rows(&rows?)
    }

    pub fn forward_one(&self, g: &mut Graph, id: usize) -> Result<TensorId> {
        let table = g.param(&format!("{}.e", self.name))?;
        g.tape.row(table, id)
    }
}

/// 1-D convolution layer over a sequence (rows = positions) with bias.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, kernel: usize, in_ch: usize, out_ch: usize) -> Self {
        Conv1d {
            name: name.into(),
            kernel,
            in_ch,
            out_ch,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        store.init_glorot(
            &format!("{}.w", self.name),
            self.kernel * self.in_ch,
            self.out_ch,
            seed,
        );
        store.init_const(&format!("{}.b", self.name), 1, self.out_ch, 0.0);
    }

    pub fn forward(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        let w = g.param(&format!("{}.w", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let y = g.tape.conv1d_same(x, w, self.kernel)?;
        g.tape.add_row(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn dense_forward_shape_and_gradcheck() {
        let mut store = ParamStore::new();
        let d = Dense::new("t.fc", 3, 2);
        d.init(&mut store, 1);
        let x = array![[0.3, -0.7, 1.1]];
        let store2 = store.clone();
        let res = finite_diff_check(
            move |t, id| {
                let mut g = Graph::new(&store2);
                // Rebuild the dense math on the probe tape by hand.
                let w = t.leaf(store2.get("t.fc.w").unwrap().clone())?;
                let b = t.leaf(store2.get("t.fc.b").unwrap().clone())?;
                let _ = &mut g;
                let y = t.matmul(id, w)?;
                let y = t.add_row(y, b)?;
                let y = t.tanh(y)?;
                t.sum(y)
            },
            &x,
            1e-4,
            3,
            9,
        )
        .unwrap();
        assert!(res.max_rel_err < 1e-6, "{}", res.max_rel_err);
    }

    #[test]
    fn gru_step_is_causal_shape_preserving() {
        let mut store = ParamStore::new();
        let cell = GruCell::new("t.gru", 4, 6);
        cell.init(&mut store, 3);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(array![[0.1, 0.2, -0.3, 0.4]]).unwrap();
        let h0 = cell.init_state(&mut g).unwrap();
        let h1 = cell.step(&mut g, x, h0).unwrap();
        assert_eq!(g.tape.value(h1).dim(), (1, 6));
    }

    #[test]
    fn lstm_state_shapes() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new("t.lstm", 3, 5);
        cell.init(&mut store, 3);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(array![[1.0, 0.0, -1.0]]).unwrap();
        let s0 = cell.init_state(&mut g).unwrap();
        let (h, c) = cell.step(&mut g, x, s0).unwrap();
        assert_eq!(g.tape.value(h).dim(), (1, 5));
        assert_eq!(g.tape.value(c).dim(), (1, 5));
        // Forget bias of 1 is in place.
        let b = store.get("t.lstm.b").unwrap();
        assert_eq!(b[(0, 5)], 1.0);
        assert_eq!(b[(0, 0)], 0.0);
    }

    #[test]
    fn prenet_dropout_active_and_seeded() {
        let mut store = ParamStore::new();
        let p = PreNet::new("t.pre", 4, &[8, 8], 0.5);
        p.init(&mut store, 5);
        let x = array![[0.5, -0.5, 0.25, 1.0]];
        let run = |seed: u64, store: &ParamStore| {
            let mut g = Graph::new(store);
            let xid = g.tape.constant(x.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = p.forward(&mut g, xid, &mut rng).unwrap();
            g.tape.value(y).clone()
        };
        let a = run(10, &store);
        let b = run(10, &store);
        let c = run(11, &store);
        assert_eq!(a, b);
        assert_ne!(a, c); // different masks
    }

    #[test]
    fn embedding_rows_match_table() {
        let mut store = ParamStore::new();
        let e = Embedding::new("t.emb", 10, 4);
        e.init(&mut store, 2);
        let mut g = Graph::new(&store);
        let m = e.forward(&mut g, &[3, 7, 3]).unwrap();
        let v = g.tape.value(m).clone();
        let table = store.get("t.emb.e").unwrap();
        assert_eq!(v.dim(), (3, 4));
        assert_eq!(v.row(0), table.row(3));
        assert_eq!(v.row(1), table.row(7));
        assert_eq!(v.row(2), table.row(3));
    }
}
