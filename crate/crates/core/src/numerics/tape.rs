use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    /// Repeat a [1, d] row to [n, d].
    BroadcastRows(Var),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    /// Column-wise max over rows, [n, d] -> [1, d]; per-column argmax row
    /// recorded for the backward pass (first maximum on ties).
    MaxPoolRows(Var, Vec<usize>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    /// out[i, :] = a[idx[i], :]
    GatherRows(Var, Vec<usize>),
    /// out[idx[i], :] += a[i, :], zeros elsewhere.
    ScatterRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Wengert tape: records one forward computation, then replays it in
/// reverse to accumulate gradients. Consumed by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the loss with respect to requires-grad leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    /// (id, shape) of every requires-grad leaf, for the zero-grad contract.
    leaves: Vec<(usize, Vec<usize>)>,
}

impl Gradients {
    /// dLoss/dLeaf. Leaves not reachable from the loss get a zero tensor.
    pub fn wrt(&self, v: Var) -> Tensor {
        if let Some(Some(g)) = self.grads.get(v.0) {
            return g.clone();
        }
        let shape = self
            .leaves
            .iter()
            .find(|(id, _)| *id == v.0)
            .map(|(_, s)| s.clone())
            .expect("wrt() on a var that is not a requires-grad leaf");
        Tensor::zeros(shape)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradient tracking follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(Op::Leaf, shape, data, false)
    }

    /// Constant tensor filled with one value.
    pub fn constf(&mut self, shape: Vec<usize>, value: f64) -> Var {
        let n: usize = shape.iter().product();
        self.push(Op::Leaf, shape, vec![value; n], false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        Tensor::from_parts(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, shape, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), shape, v, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), shape, v, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), shape, v, ng))
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("{what}: expected 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul: inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_kernel(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul(a, b), vec![m, n], out, ng))
    }

    /// Repeat a [1, d] row vector to [rows, d].
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, d) = self.dims2(a, "broadcast_rows")?;
        if r != 1 {
            return Err(Error::ShapeMismatch(format!(
                "broadcast_rows: expected [1, d], got [{r}, {d}]"
            )));
        }
        let src = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        let ng = self.needs(a);
        Ok(self.push(Op::BroadcastRows(a), vec![rows, d], out, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].value.len() {
            return Err(Error::ShapeMismatch(format!(
                "reshape: {:?} -> {:?}",
                self.nodes[a.0].shape, shape
            )));
        }
        let v = self.nodes[a.0].value.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Reshape(a), shape, v, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::Transpose(a), vec![n, m], out, ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let ng = self.needs(a);
        Ok(self.push(Op::Sum(a), vec![1], vec![s], ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(Error::EmptyInput("mean of empty tensor".into()));
        }
        let s: f64 = self.nodes[a.0].value.iter().sum::<f64>() / n as f64;
        let ng = self.needs(a);
        Ok(self.push(Op::Mean(a), vec![1], vec![s], ng))
    }

    /// Column-wise max over rows: [n, d] -> [1, d]. The symmetric pooling
    /// used by every point network in this crate.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.dims2(a, "max_pool_rows")?;
        if n == 0 {
            return Err(Error::EmptyInput("max_pool_rows of zero rows".into()));
        }
        let src = &self.nodes[a.0].value;
        let mut out = src[..d].to_vec();
        let mut arg = vec![0usize; d];
        for i in 1..n {
            for j in 0..d {
                let v = src[i * d + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::MaxPoolRows(a, arg), vec![1, d], out, ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Relu(a), shape, v, ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Sigmoid(a), shape, v, ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Tanh(a), shape, v, ng))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("exp overflow".into()));
        }
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Exp(a), shape, v, ng))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite("log of non-positive value".into()));
        }
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Log(a), shape, v, ng))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| softplus(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        Ok(self.push(Op::Softplus(a), shape, v, ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, d) = self.dims2(a, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("gather_rows: index {bad} >= {n} rows")));
        }
        let src = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let shape = vec![idx.len(), d];
        let ng = self.needs(a);
        Ok(self.push(Op::GatherRows(a, idx), shape, out, ng))
    }

    /// Scatter-add rows of `a` into a zero [out_rows, d] tensor:
    /// out[idx[i], :] += a[i, :].
    pub fn scatter_rows(&mut self, a: Var, idx: Vec<usize>, out_rows: usize) -> Result<Var> {
        let (n, d) = self.dims2(a, "scatter_rows")?;
        if idx.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "scatter_rows: {} indices for {} rows",
                idx.len(),
                n
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::InvalidArgument(format!(
                "scatter_rows: index {bad} >= {out_rows} output rows"
            )));
        }
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; out_rows * d];
        for (i, &dst) in idx.iter().enumerate() {
            for j in 0..d {
                out[dst * d + j] += src[i * d + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::ScatterRows(a, idx), vec![out_rows, d], out, ng))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols of nothing".into()));
        }
        let (rows, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch(format!(
                    "concat_cols: row counts {rows} vs {r}"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.nodes[p.0].value;
                out.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![rows, total], out, ng))
    }

    // Convenience compositions (each expands to primitives above).

    /// a * c elementwise, c a compile-time scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let k = self.constf(shape, c);
        self.mul(a, k)
    }

    /// a + c elementwise.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let k = self.constf(shape, c);
        self.add(a, k)
    }

    /// Smooth clamp to (-bound, bound): bound * tanh(x / bound). Keeps the
    /// gradient alive everywhere, unlike a hard clamp.
    pub fn soft_clamp(&mut self, a: Var, bound: f64) -> Result<Var> {
        let x = self.scale(a, 1.0 / bound)?;
        let t = self.tanh(x)?;
        self.scale(t, bound)
    }

    /// x @ w + b for row-major batches: [n, in] x [in, out] + [1, out].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let rows = self.nodes[y.0].shape[0];
        let bb = self.broadcast_rows(b, rows)?;
        self.add(y, bb)
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse sweep. The loss must be a one-element tensor; returns
    /// gradients for every requires-grad leaf (zeros if unreachable).
    /// Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let leaves: Vec<(usize, Vec<usize>)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.needs_grad)
            .map(|(i, n)| (i, n.shape.clone()))
            .collect();

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            // Keep leaf grads; they are the output.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|v| Tensor::from_parts(self.nodes[i].shape.clone(), v)))
            .collect();
        Ok(Gradients { grads, leaves })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut accum = |v: Var, upd: Vec<f64>, tape: &Tape| {
            if !tape.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, u) in acc.iter_mut().zip(&upd) {
                        *a += u;
                    }
                }
                slot @ None => *slot = Some(upd),
            }
        };
        match &node.op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            Op::Add(a, b) => {
                accum(*a, g.to_vec(), self);
                accum(*b, g.to_vec(), self);
            }
            Op::Sub(a, b) => {
                accum(*a, g.to_vec(), self);
                accum(*b, g.iter().map(|x| -x).collect(), self);
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                accum(*a, g.iter().zip(vb).map(|(x, y)| x * y).collect(), self);
                accum(*b, g.iter().zip(va).map(|(x, y)| x * y).collect(), self);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_kernel(g, &self.nodes[b.0].value, m, n, k, &mut da);
                    accum(*a, da, self);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_at_kernel(&self.nodes[a.0].value, g, m, k, n, &mut db);
                    accum(*b, db, self);
                }
            }
            Op::BroadcastRows(a) => {
                let d = self.nodes[a.0].shape[1];
                let rows = node.shape[0];
                let mut da = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        da[j] += g[r * d + j];
                    }
                }
                accum(*a, da, self);
            }
            Op::Reshape(a) => accum(*a, g.to_vec(), self),
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                // node value is [n, m]; gradient transposes back
                let mut da = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                accum(*a, da, self);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                accum(*a, vec![g[0]; n], self);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                accum(*a, vec![g[0] / n as f64; n], self);
            }
            Op::MaxPoolRows(a, arg) => {
                let d = node.shape[1];
                let n = self.nodes[a.0].value.len();
                let mut da = vec![0.0; n];
                for j in 0..d {
                    da[arg[j] * d + j] = g[j];
                }
                accum(*a, da, self);
            }
            Op::Relu(a) => {
                let va = &self.nodes[a.0].value;
                accum(*a, g.iter().zip(va).map(|(x, v)| if *v > 0.0 { *x } else { 0.0 }).collect(), self);
            }
            Op::Sigmoid(a) => {
                let s = &node.value;
                accum(*a, g.iter().zip(s).map(|(x, s)| x * s * (1.0 - s)).collect(), self);
            }
            Op::Tanh(a) => {
                let t = &node.value;
                accum(*a, g.iter().zip(t).map(|(x, t)| x * (1.0 - t * t)).collect(), self);
            }
            Op::Exp(a) => {
                let e = &node.value;
                accum(*a, g.iter().zip(e).map(|(x, e)| x * e).collect(), self);
            }
            Op::Log(a) => {
                let va = &self.nodes[a.0].value;
                accum(*a, g.iter().zip(va).map(|(x, v)| x / v).collect(), self);
            }
            Op::Softplus(a) => {
                let va = &self.nodes[a.0].value;
                accum(*a, g.iter().zip(va).map(|(x, v)| x * sigmoid(*v)).collect(), self);
            }
            Op::GatherRows(a, idx) => {
                let d = node.shape[1];
                let n = self.nodes[a.0].value.len();
                let mut da = vec![0.0; n];
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..d {
                        da[src * d + j] += g[i * d + j];
                    }
                }
                accum(*a, da, self);
            }
            Op::ScatterRows(a, idx) => {
                let d = node.shape[1];
                let mut da = vec![0.0; idx.len() * d];
                for (i, &dst) in idx.iter().enumerate() {
                    for j in 0..d {
                        da[i * d + j] = g[dst * d + j];
                    }
                }
                accum(*a, da, self);
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut col0 = 0usize;
                for &p in parts {
                    let w = self.nodes[p.0].shape[1];
                    if self.nodes[p.0].needs_grad {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + col0..r * total + col0 + w]);
                        }
                        accum(p, dp, self);
                    }
                    col0 += w;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// out += a[m,k] * b[k,n], row-major. i-k-j order so the inner loop runs
/// over contiguous rows of b and out.
fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out += g[m,n] * b^T where b is [k,n]: out[i,p] = dot(g row i, b row p).
fn matmul_bt_kernel(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let o_row = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            o_row[p] += acc;
        }
    }
}

/// out += a^T * g where a is [m,k], g is [m,n]: out[p,j] += a[i,p] * g[i,j].
fn matmul_at_kernel(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in o_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}
