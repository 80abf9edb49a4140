use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

use super::DiffTensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    fn idx(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    AddN(Vec<TensorId>),
    Scale(TensorId, f64),
    MulConst(TensorId, Array2<f64>),
    MatMul(TensorId, TensorId),
    AddRow(TensorId, TensorId),
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    SliceCols(TensorId, usize, usize),
    Row(TensorId, usize),
    Transpose(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Relu(TensorId),
    Softplus(TensorId),
    Exp(TensorId),
    Abs(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    MeanRows(TensorId),
    VarRows(TensorId),
    SoftmaxRows(TensorId),
    BceLogits(TensorId, Array2<f64>),
    CeLogitsRows(TensorId, Vec<usize>),
    GmmWeights {
        means: TensorId,
        sigmas: TensorId,
        mixw: TensorId,
        positions: usize,
    },
    Conv1dSame {
        x: TensorId,
        w: TensorId,
        kernel: usize,
    },
    StopGradient,
    GradientReversal(TensorId, f64),
    StraightThrough { z_e: TensorId },
}

/// Growable computation record. Forward ops append nodes; [`Tape::backward`]
/// walks the record in reverse and accumulates gradients into every node
/// that can reach a leaf created with `leaf` (as opposed to `constant`).
///
/// All tensors are dense row-major `f64` matrices; vectors are `1×n` rows.
/// Every forward op rejects non-finite outputs.
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Differentiable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Array2<f64>) -> Result<TensorId> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (targets, masks): backward skips it.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<TensorId> {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<TensorId> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.values[id.idx()]
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.values[id.idx()][(0, 0)]
    }

    /// Gradient accumulated by the last `backward`, if any reached this node.
    pub fn grad(&self, id: TensorId) -> Option<&Array2<f64>> {
        self.grads.get(id.idx()).and_then(|g| g.as_ref())
    }

    /// Gradient with missing treated as exactly zero.
    pub fn grad_or_zeros(&self, id: TensorId) -> Array2<f64> {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.values[id.idx()].dim()),
        }
    }

    pub fn snapshot(&self, id: TensorId) -> DiffTensor {
        DiffTensor {
            values: self.values[id.idx()].clone(),
            gradient: self.grad_or_zeros(id),
        }
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Array2<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<TensorId> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Ok(TensorId(self.values.len() - 1))
    }

    fn any_needs(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.needs_grad[id.idx()])
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let (da, db) = (self.values[a.idx()].dim(), self.values[b.idx()].dim());
        if da != db {
            return Err(Error::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    // ----- arithmetic -----

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let v = &self.values[a.idx()] + &self.values[b.idx()];
        let ng = self.any_needs(&[a, b]);
        self.push("add", v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let v = &self.values[a.idx()] - &self.values[b.idx()];
        let ng = self.any_needs(&[a, b]);
        self.push("sub", v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let v = &self.values[a.idx()] * &self.values[b.idx()];
        let ng = self.any_needs(&[a, b]);
        self.push("mul", v, Op::Mul(a, b), ng)
    }

    pub fn add_n(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::invalid("add_n", "empty operand list"))?;
        let mut v = self.values[first.idx()].clone();
        for id in &ids[1..] {
            self.same_shape("add_n", first, *id)?;
            v += &self.values[id.idx()];
        }
        let ng = self.any_needs(ids);
        self.push("add_n", v, Op::AddN(ids.to_vec()), ng)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let v = &self.values[a.idx()] * c;
        let ng = self.needs_grad[a.idx()];
        self.push("scale", v, Op::Scale(a, c), ng)
    }

    /// Elementwise product with a fixed array (dropout masks).
    pub fn mul_const(&mut self, a: TensorId, m: Array2<f64>) -> Result<TensorId> {
        if self.values[a.idx()].dim() != m.dim() {
            return Err(Error::shape("mul_const", "mask shape mismatch"));
        }
        let v = &self.values[a.idx()] * &m;
        let ng = self.needs_grad[a.idx()];
        self.push("mul_const", v, Op::MulConst(a, m), ng)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (_, ka) = self.values[a.idx()].dim();
        let (kb, _) = self.values[b.idx()].dim();
        if ka != kb {
            return Err(Error::shape("matmul", format!("inner dims {ka} vs {kb}")));
        }
        let v = self.values[a.idx()].dot(&self.values[b.idx()]);
        let ng = self.any_needs(&[a, b]);
        self.push("matmul", v, Op::MatMul(a, b), ng)
    }

    /// Broadcast-add a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (_, n) = self.values[x.idx()].dim();
        let (rm, rn) = self.values[row.idx()].dim();
        if rm != 1 || rn != n {
            return Err(Error::shape("add_row", format!("row {rm}x{rn} vs cols {n}")));
        }
        let v = &self.values[x.idx()] + &self.values[row.idx()].row(0);
        let ng = self.any_needs(&[x, row]);
        self.push("add_row", v, Op::AddRow(x, row), ng)
    }

    // ----- structure -----

    pub fn concat_cols(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "empty operand list"))?;
        let rows = self.values[first.idx()].nrows();
        let total: usize = ids.iter().map(|id| self.values[id.idx()].ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for id in ids {
            let part = &self.values[id.idx()];
            if part.nrows() != rows {
                return Err(Error::shape("concat_cols", "row count mismatch"));
            }
            v.slice_mut(ndarray::s![.., at..at + part.ncols()])
                .assign(part);
            at += part.ncols();
        }
        let ng = self.any_needs(ids);
        self.push("concat_cols", v, Op::ConcatCols(ids.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "empty operand list"))?;
        let cols = self.values[first.idx()].ncols();
        let total: usize = ids.iter().map(|id| self.values[id.idx()].nrows()).sum();
        let mut v = Array2::zeros((total, cols));
        let mut at = 0;
        for id in ids {
            let part = &self.values[id.idx()];
            if part.ncols() != cols {
                return Err(Error::shape("concat_rows", "column count mismatch"));
            }
            v.slice_mut(ndarray::s![at..at + part.nrows(), ..])
                .assign(part);
            at += part.nrows();
        }
        let ng = self.any_needs(ids);
        self.push("concat_rows", v, Op::ConcatRows(ids.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: TensorId, lo: usize, hi: usize) -> Result<TensorId> {
        let (_, n) = self.values[x.idx()].dim();
        if lo >= hi || hi > n {
            return Err(Error::shape("slice_cols", format!("{lo}..{hi} of {n}")));
        }
        let v = self.values[x.idx()].slice(ndarray::s![.., lo..hi]).to_owned();
        let ng = self.needs_grad[x.idx()];
        self.push("slice_cols", v, Op::SliceCols(x, lo, hi), ng)
    }

    pub fn row(&mut self, x: TensorId, i: usize) -> Result<TensorId> {
        let (m, _) = self.values[x.idx()].dim();
        if i >= m {
            return Err(Error::shape("row", format!("row {i} of {m}")));
        }
        let v = self.values[x.idx()].row(i).insert_axis(Axis(0)).to_owned();
        let ng = self.needs_grad[x.idx()];
        self.push("row", v, Op::Row(x, i), ng)
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].t().to_owned();
        let ng = self.needs_grad[x.idx()];
        self.push("transpose", v, Op::Transpose(x), ng)
    }

    // ----- pointwise -----

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(f64::tanh);
        let ng = self.needs_grad[x.idx()];
        self.push("tanh", v, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(sigmoid);
        let ng = self.needs_grad[x.idx()];
        self.push("sigmoid", v, Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(|t| t.max(0.0));
        let ng = self.needs_grad[x.idx()];
        self.push("relu", v, Op::Relu(x), ng)
    }

    pub fn softplus(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(softplus);
        let ng = self.needs_grad[x.idx()];
        self.push("softplus", v, Op::Softplus(x), ng)
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(f64::exp);
        let ng = self.needs_grad[x.idx()];
        self.push("exp", v, Op::Exp(x), ng)
    }

    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].mapv(f64::abs);
        let ng = self.needs_grad[x.idx()];
        self.push("abs", v, Op::Abs(x), ng)
    }

    // ----- reductions -----

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Array2::from_elem((1, 1), self.values[x.idx()].sum());
        let ng = self.needs_grad[x.idx()];
        self.push("sum", v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let len = self.values[x.idx()].len();
        if len == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let v = Array2::from_elem((1, 1), self.values[x.idx()].sum() / len as f64);
        let ng = self.needs_grad[x.idx()];
        self.push("mean", v, Op::Mean(x), ng)
    }

    /// Column means over rows: `m×n -> 1×n`.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, _) = self.values[x.idx()].dim();
        if m == 0 {
            return Err(Error::invalid("mean_rows", "empty tensor"));
        }
        let v = (self.values[x.idx()].sum_axis(Axis(0)) / m as f64).insert_axis(Axis(0));
        let ng = self.needs_grad[x.idx()];
        self.push("mean_rows", v, Op::MeanRows(x), ng)
    }

    /// Column population variance over rows: `m×n -> 1×n`. A single row
    /// yields exactly zero.
    pub fn var_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.values[x.idx()].dim();
        if m == 0 {
            return Err(Error::invalid("var_rows", "empty tensor"));
        }
        let xv = &self.values[x.idx()];
        let mean = xv.sum_axis(Axis(0)) / m as f64;
        let mut v = Array2::zeros((1, n));
        for j in 0..n {
            let s: f64 = (0..m).map(|i| (xv[(i, j)] - mean[j]).powi(2)).sum();
            v[(0, j)] = s / m as f64;
        }
        let ng = self.needs_grad[x.idx()];
        self.push("var_rows", v, Op::VarRows(x), ng)
    }

    // ----- normalization / losses -----

    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = &self.values[x.idx()];
        let mut v = xv.clone();
        for mut r in v.rows_mut() {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            r.mapv_inplace(|t| (t - m).exp());
            let s = r.sum();
            r.mapv_inplace(|t| t / s);
        }
        let ng = self.needs_grad[x.idx()];
        self.push("softmax_rows", v, Op::SoftmaxRows(x), ng)
    }

    /// Elementwise binary cross-entropy on logits against fixed targets.
    pub fn bce_logits(&mut self, logits: TensorId, targets: Array2<f64>) -> Result<TensorId> {
        if self.values[logits.idx()].dim() != targets.dim() {
            return Err(Error::shape("bce_logits", "target shape mismatch"));
        }
        let x = &self.values[logits.idx()];
        let mut v = Array2::zeros(x.dim());
        ndarray::Zip::from(&mut v).and(x).and(&targets).for_each(|o, &xi, &ti| {
            *o = xi.max(0.0) - xi * ti + (-xi.abs()).exp().ln_1p();
        });
        let ng = self.needs_grad[logits.idx()];
        self.push("bce_logits", v, Op::BceLogits(logits, targets), ng)
    }

    /// Per-row cross-entropy on logits against fixed class labels:
    /// `m×C -> m×1`.
    pub fn ce_logits_rows(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (m, c) = self.values[logits.idx()].dim();
        if labels.len() != m {
            return Err(Error::shape("ce_logits_rows", "label count mismatch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid("ce_logits_rows", format!("label {bad} >= {c}")));
        }
        let z = &self.values[logits.idx()];
        let mut v = Array2::zeros((m, 1));
        for i in 0..m {
            let r = z.row(i);
            let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + r.iter().map(|&t| (t - mx).exp()).sum::<f64>().ln();
            v[(i, 0)] = lse - r[labels[i]];
        }
        let ng = self.needs_grad[logits.idx()];
        self.push("ce_logits_rows", v, Op::CeLogitsRows(logits, labels.to_vec()), ng)
    }

    /// Attention weights over `positions` input slots from a mixture of
    /// Gaussians: weight at slot `i` is the normalized
    /// `sum_k w_k * exp(-(i - mu_k)^2 / (2 sigma_k^2))`. All three parameter
    /// tensors are `1×K`; sigmas must be strictly positive.
    pub fn gmm_weights(
        &mut self,
        means: TensorId,
        sigmas: TensorId,
        mixw: TensorId,
        positions: usize,
    ) -> Result<TensorId> {
        let k = self.values[means.idx()].ncols();
        for (name, id) in [("means", means), ("sigmas", sigmas), ("mixw", mixw)] {
            let d = self.values[id.idx()].dim();
            if d != (1, k) {
                return Err(Error::shape("gmm_weights", format!("{name} is {d:?}, want (1,{k})")));
            }
        }
        if positions == 0 {
            return Err(Error::invalid("gmm_weights", "zero positions"));
        }
        if self.values[sigmas.idx()].iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("gmm_weights", "non-positive sigma"));
        }
        let (mu, sg, w) = (
            &self.values[means.idx()],
            &self.values[sigmas.idx()],
            &self.values[mixw.idx()],
        );
        let mut raw = Array2::zeros((1, positions));
        for i in 0..positions {
            let mut a = 0.0;
            for kk in 0..k {
                let d = i as f64 - mu[(0, kk)];
                a += w[(0, kk)] * (-d * d / (2.0 * sg[(0, kk)] * sg[(0, kk)])).exp();
            }
            raw[(0, i)] = a;
        }
        let z = raw.sum();
        if z <= 0.0 || !z.is_finite() {
            return Err(Error::NonFinite { op: "gmm_weights" });
        }
        let v = raw / z;
        let ng = self.any_needs(&[means, sigmas, mixw]);
        self.push(
            "gmm_weights",
            v,
            Op::GmmWeights {
                means,
                sigmas,
                mixw,
                positions,
            },
            ng,
        )
    }

    /// 1-D convolution along rows with zero 'same' padding.
    /// `x: S×Cin`, `w: (kernel*Cin)×Cout`, output `S×Cout`. Weight row
    /// `t*Cin + c` is tap `t` of input channel `c`.
    pub fn conv1d_same(&mut self, x: TensorId, w: TensorId, kernel: usize) -> Result<TensorId> {
        let (s, cin) = self.values[x.idx()].dim();
        let (wr, _) = self.values[w.idx()].dim();
        if kernel == 0 || wr != kernel * cin {
            return Err(Error::shape(
                "conv1d_same",
                format!("weight rows {wr} vs kernel {kernel} * cin {cin}"),
            ));
        }
        let col = im2col(&self.values[x.idx()], kernel);
        let v = col.dot(&self.values[w.idx()]);
        let _ = s;
        let ng = self.any_needs(&[x, w]);
        self.push("conv1d_same", v, Op::Conv1dSame { x, w, kernel }, ng)
    }

    // ----- gradient-manipulation primitives -----

    /// Identity forward; exactly zero partial derivatives in backward.
    pub fn stop_gradient(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.values[x.idx()].clone();
        let _ = x;
        self.push("stop_gradient", v, Op::StopGradient, false)
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// `-lambda`. Rejects `lambda <= 0`.
    pub fn gradient_reversal(&mut self, x: TensorId, lambda: f64) -> Result<TensorId> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(
                "gradient_reversal",
                format!("lambda must be > 0, got {lambda}"),
            ));
        }
        let v = self.values[x.idx()].clone();
        let ng = self.needs_grad[x.idx()];
        self.push("gradient_reversal", v, Op::GradientReversal(x, lambda), ng)
    }

    /// Quantization pass-through: forward value is `z_q` bit for bit, the
    /// whole incoming gradient is routed to `z_e`, and `z_q` receives zero
    /// through this node. Algebraically `z_e + sg(z_q - z_e)`.
    pub fn straight_through(&mut self, z_e: TensorId, z_q: TensorId) -> Result<TensorId> {
        self.same_shape("straight_through", z_e, z_q)?;
        let v = self.values[z_q.idx()].clone();
        let ng = self.needs_grad[z_e.idx()];
        self.push("straight_through", v, Op::StraightThrough { z_e }, ng)
    }

    // ----- backward -----

    /// Accumulate gradients of a `1×1` loss into every reachable node.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.values[loss.idx()].dim() != (1, 1) {
            return Err(Error::shape("backward", "loss must be 1x1"));
        }
        self.grads = vec![None; self.values.len()];
        self.grads[loss.idx()] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.idx()).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let values = &self.values;
            let needs = &self.needs_grad;
            let grads = &mut self.grads;
            let mut acc = |id: TensorId, contrib: Array2<f64>| {
                if !needs[id.idx()] {
                    return;
                }
                match &mut grads[id.idx()] {
                    Some(a) => *a += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &values[b.idx()]);
                    acc(*b, &g * &values[a.idx()]);
                }
                Op::AddN(ids) => {
                    for id in ids {
                        acc(*id, g.clone());
                    }
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::MulConst(a, m) => acc(*a, &g * m),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&values[b.idx()].t()));
                    acc(*b, values[a.idx()].t().dot(&g));
                }
                Op::AddRow(x, row) => {
                    acc(*x, g.clone());
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::ConcatCols(ids) => {
                    let mut at = 0;
                    for id in ids {
                        let w = values[id.idx()].ncols();
                        acc(*id, g.slice(ndarray::s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let mut at = 0;
                    for id in ids {
                        let h = values[id.idx()].nrows();
                        acc(*id, g.slice(ndarray::s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::SliceCols(x, lo, hi) => {
                    let mut dx = Array2::zeros(values[x.idx()].dim());
                    dx.slice_mut(ndarray::s![.., *lo..*hi]).assign(&g);
                    acc(*x, dx);
                }
                Op::Row(x, r) => {
                    let mut dx = Array2::zeros(values[x.idx()].dim());
                    dx.row_mut(*r).assign(&g.row(0));
                    acc(*x, dx);
                }
                Op::Transpose(x) => acc(*x, g.t().to_owned()),
                Op::Tanh(x) => {
                    let y = &values[i];
                    acc(*x, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(x) => {
                    let y = &values[i];
                    acc(*x, &g * &y.mapv(|t| t * (1.0 - t)));
                }
                Op::Relu(x) => {
                    let m = values[x.idx()].mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                    acc(*x, &g * &m);
                }
                Op::Softplus(x) => {
                    let m = values[x.idx()].mapv(sigmoid);
                    acc(*x, &g * &m);
                }
                Op::Exp(x) => {
                    let y = &values[i];
                    acc(*x, &g * y);
                }
                Op::Abs(x) => {
                    let m = values[x.idx()].mapv(|t| {
                        if t > 0.0 {
                            1.0
                        } else if t < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*x, &g * &m);
                }
                Op::Sum(x) => {
                    let dx = Array2::from_elem(values[x.idx()].dim(), g[(0, 0)]);
                    acc(*x, dx);
                }
                Op::Mean(x) => {
                    let len = values[x.idx()].len() as f64;
                    let dx = Array2::from_elem(values[x.idx()].dim(), g[(0, 0)] / len);
                    acc(*x, dx);
                }
                Op::MeanRows(x) => {
                    let (m, n) = values[x.idx()].dim();
                    let mut dx = Array2::zeros((m, n));
                    for mut r in dx.rows_mut() {
                        r.assign(&(&g.row(0) / m as f64));
                    }
                    acc(*x, dx);
                }
                Op::VarRows(x) => {
                    let xv = &values[x.idx()];
                    let (m, n) = xv.dim();
                    let mean = xv.sum_axis(Axis(0)) / m as f64;
                    let mut dx = Array2::zeros((m, n));
                    for r in 0..m {
                        for c in 0..n {
                            dx[(r, c)] = 2.0 * (xv[(r, c)] - mean[c]) * g[(0, c)] / m as f64;
                        }
                    }
                    acc(*x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &values[i];
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum();
                        for c in 0..y.ncols() {
                            dx[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    acc(*x, dx);
                }
                Op::BceLogits(x, targets) => {
                    let xv = &values[x.idx()];
                    let mut dx = Array2::zeros(xv.dim());
                    ndarray::Zip::from(&mut dx)
                        .and(xv)
                        .and(targets)
                        .and(&g)
                        .for_each(|o, &xi, &ti, &gi| *o = (sigmoid(xi) - ti) * gi);
                    acc(*x, dx);
                }
                Op::CeLogitsRows(x, labels) => {
                    let z = &values[x.idx()];
                    let (m, c) = z.dim();
                    let mut dx = Array2::zeros((m, c));
                    for r in 0..m {
                        let row = z.row(r);
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let den: f64 = row.iter().map(|&t| (t - mx).exp()).sum();
                        for cc in 0..c {
                            let p = (row[cc] - mx).exp() / den;
                            let onehot = if cc == labels[r] { 1.0 } else { 0.0 };
                            dx[(r, cc)] = (p - onehot) * g[(r, 0)];
                        }
                    }
                    acc(*x, dx);
                }
                Op::GmmWeights {
                    means,
                    sigmas,
                    mixw,
                    positions,
                } => {
                    let (mu, sg, w) = (
                        &values[means.idx()],
                        &values[sigmas.idx()],
                        &values[mixw.idx()],
                    );
                    let k = mu.ncols();
                    let n = *positions;
                    // Recompute the unnormalized mixture and normalizer.
                    let mut phi = Array2::zeros((n, k));
                    let mut raw = vec![0.0; n];
                    for ii in 0..n {
                        for kk in 0..k {
                            let d = ii as f64 - mu[(0, kk)];
                            let p = (-d * d / (2.0 * sg[(0, kk)] * sg[(0, kk)])).exp();
                            phi[(ii, kk)] = p;
                            raw[ii] += w[(0, kk)] * p;
                        }
                    }
                    let z: f64 = raw.iter().sum();
                    let alpha = &values[i];
                    // d(loss)/d(raw_i) for normalized weights alpha = raw / z.
                    let gdot: f64 = (0..n).map(|ii| g[(0, ii)] * alpha[(0, ii)]).sum();
                    let draw: Vec<f64> = (0..n).map(|ii| (g[(0, ii)] - gdot) / z).collect();
                    let mut dmu = Array2::zeros((1, k));
                    let mut dsg = Array2::zeros((1, k));
                    let mut dw = Array2::zeros((1, k));
                    for kk in 0..k {
                        let (m_k, s_k, w_k) = (mu[(0, kk)], sg[(0, kk)], w[(0, kk)]);
                        for ii in 0..n {
                            let d = ii as f64 - m_k;
                            let p = phi[(ii, kk)];
                            dw[(0, kk)] += draw[ii] * p;
                            dmu[(0, kk)] += draw[ii] * w_k * p * d / (s_k * s_k);
                            dsg[(0, kk)] += draw[ii] * w_k * p * d * d / (s_k * s_k * s_k);
                        }
                    }
                    acc(*means, dmu);
                    acc(*sigmas, dsg);
                    acc(*mixw, dw);
                }
                Op::Conv1dSame { x, w, kernel } => {
                    let xv = &values[x.idx()];
                    let (s, cin) = xv.dim();
                    let col = im2col(xv, *kernel);
                    let dw = col.t().dot(&g);
                    let dcol = g.dot(&values[w.idx()].t());
                    // Scatter column gradients back onto the input rows.
                    let left = (*kernel - 1) / 2;
                    let mut dx = Array2::zeros((s, cin));
                    for out_row in 0..s {
                        for tap in 0..*kernel {
                            let in_row = out_row as isize + tap as isize - left as isize;
                            if in_row < 0 || in_row >= s as isize {
                                continue;
                            }
                            for c in 0..cin {
                                dx[(in_row as usize, c)] += dcol[(out_row, tap * cin + c)];
                            }
                        }
                    }
                    acc(*x, dx);
                    acc(*w, dw);
                }
                Op::StopGradient => {}
                Op::GradientReversal(x, lambda) => acc(*x, &g * -*lambda),
                Op::StraightThrough { z_e } => acc(*z_e, g),
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn im2col(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (s, cin) = x.dim();
    let left = (kernel - 1) / 2;
    let mut col = Array2::zeros((s, kernel * cin));
    for out_row in 0..s {
        for tap in 0..kernel {
            let in_row = out_row as isize + tap as isize - left as isize;
            if in_row < 0 || in_row >= s as isize {
                continue;
            }
            for c in 0..cin {
                col[(out_row, tap * cin + c)] = x[(in_row as usize, c)];
            }
        }
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn row(vals: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn stop_gradient_is_identity_with_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[1.0, -2.0])).unwrap();
        let y = t.stop_gradient(x).unwrap();
        assert_eq!(t.value(y), t.value(x));
        // loss = 5 * sum(y): upstream grad into the stop node is 5 everywhere.
        let s = t.sum(y).unwrap();
        let loss = t.scale(s, 5.0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(x), row(&[0.0, 0.0]));
    }

    #[test]
    fn stop_gradient_only_blocks_its_branch() {
        // loss = sum(sg(x) * x) at x=[3.0] has gradient sg(x) = [3.0].
        let mut t = Tape::new();
        let x = t.leaf(row(&[3.0])).unwrap();
        let sg = t.stop_gradient(x).unwrap();
        let p = t.mul(sg, x).unwrap();
        let loss = t.sum(p).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(x), row(&[3.0]));
    }

    #[test]
    fn stop_gradient_idempotent() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[0.3, -1.7, 4.2])).unwrap();
        let a = t.stop_gradient(x).unwrap();
        let b = t.stop_gradient(a).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn gradient_reversal_scales_and_flips() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[2.0])).unwrap();
        let y = t.gradient_reversal(x, 1.0).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let loss = t.sum(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(x), row(&[-1.0]));

        let mut t = Tape::new();
        let x = t.leaf(row(&[2.0])).unwrap();
        let y = t.gradient_reversal(x, 0.5).unwrap();
        let s = t.sum(y).unwrap();
        let loss = t.scale(s, 3.0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(x), row(&[-1.5]));
    }

    #[test]
    fn gradient_reversal_rejects_nonpositive_lambda() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[1.0])).unwrap();
        assert!(t.gradient_reversal(x, 0.0).is_err());
        assert!(t.gradient_reversal(x, -1.0).is_err());
    }

    #[test]
    fn straight_through_routes_gradient_to_continuous_input() {
        let mut t = Tape::new();
        let z_e = t.leaf(row(&[0.1])).unwrap();
        let z_q = t.leaf(row(&[0.9])).unwrap();
        let st = t.straight_through(z_e, z_q).unwrap();
        assert_eq!(t.value(st), &row(&[0.9]));
        let s = t.sum(st).unwrap();
        let loss = t.scale(s, 2.0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(z_e), row(&[2.0]));
        assert_eq!(t.grad_or_zeros(z_q), row(&[0.0]));
    }

    #[test]
    fn straight_through_identity_when_equal() {
        let mut t = Tape::new();
        let v = row(&[0.25, -0.5]);
        let z_e = t.leaf(v.clone()).unwrap();
        let z_q = t.constant(v.clone()).unwrap();
        let st = t.straight_through(z_e, z_q).unwrap();
        assert_eq!(t.value(st), &v);
        let loss = t.sum(st).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(z_e), row(&[1.0, 1.0]));
    }

    #[test]
    fn straight_through_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(row(&[1.0])).unwrap();
        let b = t.leaf(row(&[1.0, 2.0])).unwrap();
        assert!(t.straight_through(a, b).is_err());
    }

    #[test]
    fn matmul_gradients() {
        // loss = sum(A·B); dA = 1·Bᵀ, dB = Aᵀ·1.
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = t.leaf(array![[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = t.matmul(a, b).unwrap();
        let loss = t.sum(c).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad_or_zeros(a), array![[11.0, 15.0], [11.0, 15.0]]);
        assert_eq!(t.grad_or_zeros(b), array![[4.0, 4.0], [6.0, 6.0]]);
    }

    #[test]
    fn softmax_rows_sums_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0]]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for r in t.value(y).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonfinite_forward() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[710.0])).unwrap(); // exp overflows f64
        assert!(t.exp(x).is_err());
    }

    #[test]
    fn gmm_weights_peak_at_mean() {
        let mut t = Tape::new();
        let mu = t.leaf(row(&[3.0])).unwrap();
        let sg = t.leaf(row(&[0.4])).unwrap();
        let w = t.leaf(row(&[1.0])).unwrap();
        let a = t.gmm_weights(mu, sg, w, 10).unwrap();
        let v = t.value(a);
        let argmax = (0..10).max_by(|&i, &j| v[(0, i)].partial_cmp(&v[(0, j)]).unwrap()).unwrap();
        assert_eq!(argmax, 3);
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn var_rows_single_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(row(&[1.0, 2.0, 3.0])).unwrap();
        let v = t.var_rows(x).unwrap();
        assert_eq!(t.value(v), &row(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn conv1d_same_matches_direct_computation() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0], [2.0], [3.0], [4.0]]).unwrap();
        // kernel 3, cin 1, cout 1, taps [a, b, c] applied as y[s] = a·x[s-1] + b·x[s] + c·x[s+1]
        let w = t.leaf(array![[10.0], [1.0], [0.1]]).unwrap();
        let y = t.conv1d_same(x, w, 3).unwrap();
        let v = t.value(y);
        assert!((v[(0, 0)] - (0.0 + 1.0 + 0.2)).abs() < 1e-12);
        assert!((v[(1, 0)] - (10.0 + 2.0 + 0.3)).abs() < 1e-12);
        assert!((v[(3, 0)] - (30.0 + 4.0 + 0.0)).abs() < 1e-12);
    }
}
