//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order, which is already a
//! topological order, so [`Graph::backward`] is a single reverse sweep. Nodes
//! that do not depend on any parameter are never visited on the way back.
//!
//! ```
//! use protopop::autodiff::Graph;
//! use protopop::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(&g, x).data(), &[6.0]);
//! ```

use crate::tensor::{self, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Exp(Var),
    NormalizeRows(Var, Vec<f64>),
    SoftmaxRows(Var, f64),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ColMeans(Var),
    RowSums(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>, Tensor),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Values are immutable once recorded.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` was not
    /// reached from the loss.
    pub fn wrt(&self, graph: &Graph, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = graph.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulScalar(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::NormalizeRows(a, _)
            | Op::SoftmaxRows(a, _)
            | Op::Transpose(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::ColMeans(a)
            | Op::RowSums(a)
            | Op::Sum(a)
            | Op::CrossEntropy(a, _, _) => self.requires_grad(*a),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(|v| self.requires_grad(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_nt(self.value(a), self.value(b))?;
        self.push(out, Op::MatMulNt(a, b), "matmul_nt")
    }

    fn zip_with(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_raw(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + tb.get(0, c);
                out.set(r, c, v);
            }
        }
        self.push(out, Op::AddRow(a, bias), "add_row")
    }

    /// Multiplies `a` by the `1 × 1` tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.shape() != [1, 1] {
            return Err(mismatch("mul_scalar", ta, ts));
        }
        let k = ts.get(0, 0);
        let out = ta.map(|x| k * x);
        self.push(out, Op::MulScalar(a, s), "mul_scalar")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    /// Scales every row to unit L2 norm. Zero rows are an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut norms = Vec::with_capacity(ta.rows());
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            let n = tensor::l2_norm(ta.row_slice(r));
            if n == 0.0 {
                return Err(TensorError::ZeroNorm("normalize_rows"));
            }
            norms.push(n);
            for c in 0..ta.cols() {
                out.set(r, c, ta.get(r, c) / n);
            }
        }
        self.push(out, Op::NormalizeRows(a, norms), "normalize_rows")
    }

    /// Row-wise `softmax(row / temperature)`.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(TensorError::BadTemperature(temperature));
        }
        let ta = self.value(a);
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.row_iter() {
            tensor::softmax_into(row, temperature, &mut data);
        }
        let out = Tensor::from_raw(ta.rows(), ta.cols(), data);
        self.push(out, Op::SoftmaxRows(a, temperature), "softmax_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_raw(rows, cols, data);
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, len)?;
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::from_raw(rows, cols, data);
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(TensorError::Invalid(format!(
                "column slice {start}..{} out of bounds for {} columns",
                start + len,
                ta.cols()
            )));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let out = Tensor::from_raw(ta.rows(), len, data);
        self.push(out, Op::SliceCols(a, start), "slice_cols")
    }

    /// Mean over rows, giving a `1 × cols` row.
    pub fn col_means(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() == 0 {
            return Err(TensorError::Invalid("col_means of zero rows".into()));
        }
        let mut out = vec![0.0; ta.cols()];
        for row in ta.row_iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let m = ta.rows() as f64;
        let out = Tensor::from_raw(1, ta.cols(), out.into_iter().map(|v| v / m).collect());
        self.push(out, Op::ColMeans(a), "col_means")
    }

    /// Sum of each row, giving a `rows × 1` column.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let sums: Vec<f64> = (0..ta.rows()).map(|r| ta.row_slice(r).iter().sum()).collect();
        let out = Tensor::from_raw(ta.rows(), 1, sums);
        self.push(out, Op::RowSums(a), "row_sums")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    /// Mean cross-entropy of row-wise `softmax(logits)` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if labels.len() != t.rows() || t.rows() == 0 {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                t.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= t.cols()) {
            return Err(TensorError::Invalid(format!(
                "label {bad} out of range for {} classes",
                t.cols()
            )));
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut loss = 0.0;
        for (row, &y) in t.row_iter().zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[y];
            tensor::softmax_into(row, 1.0, &mut probs);
        }
        let probs = Tensor::from_raw(t.rows(), t.cols(), probs);
        let out = Tensor::scalar(loss / labels.len() as f64);
        self.push(out, Op::CrossEntropy(logits, labels.to_vec(), probs), "cross_entropy")
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1, 1] {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let g = tensor::matmul_nt(up, self.value(*b))?;
                    self.accumulate(grads, *a, g);
                }
                if self.requires_grad(*b) {
                    let g = tensor::matmul_tn(self.value(*a), up)?;
                    self.accumulate(grads, *b, g);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.requires_grad(*a) {
                    let g = tensor::matmul(up, self.value(*b))?;
                    self.accumulate(grads, *a, g);
                }
                if self.requires_grad(*b) {
                    let g = tensor::matmul_tn(up, self.value(*a))?;
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = zip(up, tb, |u, y| u * y);
                let gb = zip(up, ta, |u, x| u * x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, up.map(|u| c * u)),
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, up.clone());
                if self.requires_grad(*bias) {
                    let mut g = vec![0.0; up.cols()];
                    for row in up.row_iter() {
                        for (o, v) in g.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_raw(1, up.cols(), g));
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).get(0, 0);
                self.accumulate(grads, *a, up.map(|u| k * u));
                if self.requires_grad(*s) {
                    let g = tensor::dot(up.data(), self.value(*a).data());
                    self.accumulate(grads, *s, Tensor::scalar(g));
                }
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip(up, out, |u, y| u * y)),
            Op::NormalizeRows(a, norms) => {
                let mut g = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let dy = up.row_slice(r);
                    let proj = tensor::dot(y, dy);
                    for c in 0..out.cols() {
                        g.set(r, c, (dy[c] - y[c] * proj) / norms[r]);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::SoftmaxRows(a, temperature) => {
                let mut g = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let dy = up.row_slice(r);
                    let proj = tensor::dot(y, dy);
                    for c in 0..out.cols() {
                        g.set(r, c, y[c] * (dy[c] - proj) / temperature);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, up.transpose()),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, up.slice_rows(start, rows)?);
                    }
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let ta = self.value(*a);
                let mut g = Tensor::zeros(ta.rows(), ta.cols());
                let offset = start * ta.cols();
                g.data_mut()[offset..offset + up.len()].copy_from_slice(up.data());
                self.accumulate(grads, *a, g);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(up.rows() * cols);
                        for r in 0..up.rows() {
                            data.extend_from_slice(&up.row_slice(r)[start..start + cols]);
                        }
                        self.accumulate(grads, p, Tensor::from_raw(up.rows(), cols, data));
                    }
                    start += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let mut g = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..up.rows() {
                    for c in 0..up.cols() {
                        g.set(r, start + c, up.get(r, c));
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::ColMeans(a) => {
                let ta = self.value(*a);
                let m = ta.rows() as f64;
                let mut g = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    for c in 0..ta.cols() {
                        g.set(r, c, up.get(0, c) / m);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::RowSums(a) => {
                let ta = self.value(*a);
                let mut g = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    for c in 0..ta.cols() {
                        g.set(r, c, up.get(r, 0));
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, up.get(0, 0)));
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let scale = up.get(0, 0) / labels.len() as f64;
                let mut g = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let v = g.get(r, y) - 1.0;
                    g.set(r, y, v);
                }
                for v in g.data_mut() {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, g);
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_raw(a.rows(), a.cols(), data)
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Number of scalar inputs compared.
    pub entries: usize,
}

/// Compares [`Graph::backward`] against central differences with step `h`.
///
/// `f` maps parameter leaves (one per entry of `inputs`) to an output of any
/// shape; the checked loss is its elementwise product with fixed weights
/// drawn from `seed`, so constant-sum outputs such as softmax rows still get
/// non-trivial gradients. Differences below `floor` in magnitude count as
/// absolute errors.
pub fn gradient_check<E: From<TensorError>>(
    inputs: &[Tensor],
    h: f64,
    floor: f64,
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> std::result::Result<Var, E>,
) -> std::result::Result<GradientCheck, E> {
    use rand::{Rng, SeedableRng};
    let eval = |values: &[Tensor]| -> std::result::Result<(Graph, Vec<Var>, Var), E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let [r, c] = g.value(out).shape();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_raw(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = g.constant(w);
        let weighted = g.mul(out, w)?;
        let loss = g.sum(weighted)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&g, v);
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let (gp, _, lp) = eval(&probe)?;
            probe[i].data_mut()[k] = x - h;
            let (gm, _, lm) = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            entries += 1;
        }
    }
    Ok(GradientCheck {
        max_rel_error: worst,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[6.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let mut g = Graph::new();
        let z = g.param(Tensor::row(&[0.3, -1.2, 2.0, 0.0]).unwrap());
        let loss = g.cross_entropy(z, &[1]).unwrap();
        let grads = g.backward(loss).unwrap();
        let p = tensor::softmax(&[0.3, -1.2, 2.0, 0.0], 1.0).unwrap();
        let gz = grads.wrt(&g, z);
        for (i, (&gi, &pi)) in gz.data().iter().zip(&p).enumerate() {
            let expected = pi - if i == 1 { 1.0 } else { 0.0 };
            assert!((gi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unreached_params_get_zero() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(&[1.0, 2.0]).unwrap());
        let b = g.param(Tensor::row(&[5.0, 5.0]).unwrap());
        let s = g.sum(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(b).is_none());
        assert_eq!(grads.wrt(&g, b).data(), &[0.0, 0.0]);
        assert_eq!(grads.wrt(&g, a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(&[1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(a), Err(TensorError::Invalid(_))));
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.exp(a).unwrap();
        assert!(!g.requires_grad(b));
    }

    #[test]
    fn overflow_is_an_error() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1000.0));
        assert_eq!(g.exp(a).unwrap_err(), TensorError::NonFinite("exp"));
    }

    #[test]
    fn shared_input_accumulates() {
        // f = sum(x * x + x) -> df/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.add(sq, x).unwrap();
        let f = g.sum(s).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[3.0, -3.0, 2.0]);
    }
}
