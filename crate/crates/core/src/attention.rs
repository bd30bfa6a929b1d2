//! Single-block multi-head self-attention with a residual connection.
//!
//! `Y = X + concat_h(softmax(Q_h K_hᵀ / √d_h) V_h) · W_O`, where `Q`, `K`, `V`
//! are affine maps of `X` split column-wise into heads. There is no
//! feed-forward sublayer and no normalization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Attention weights for model width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
}

impl AttentionParams {
    /// Seeded normal weights with standard deviation `1/√d`, zero biases.
    pub fn init(d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_heads(d, heads)?;
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut draw = || {
            let data = (0..d * d).map(|_| normal.sample(rng)).collect();
            Tensor::from_raw(d, d, data)
        };
        let (w_q, w_k, w_v, w_o) = (draw(), draw(), draw(), draw());
        Ok(Self {
            heads,
            w_q,
            b_q: Tensor::zeros(1, d),
            w_k,
            b_k: Tensor::zeros(1, d),
            w_v,
            b_v: Tensor::zeros(1, d),
            w_o,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 7] {
        [
            &self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v, &self.w_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
        ]
    }

    /// Records the weights on `g`, as parameters when `trainable`.
    pub fn record(&self, g: &mut Graph, trainable: bool) -> AttentionVars {
        let mut put = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        AttentionVars {
            heads: self.heads,
            w_q: put(&self.w_q),
            b_q: put(&self.b_q),
            w_k: put(&self.w_k),
            b_k: put(&self.b_k),
            w_v: put(&self.w_v),
            b_v: put(&self.b_v),
            w_o: put(&self.w_o),
        }
    }
}

/// [`AttentionParams`] recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub heads: usize,
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
}

impl AttentionVars {
    pub fn vars(&self) -> [Var; 7] {
        [self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v, self.w_o]
    }
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(TensorError::Invalid(format!(
            "model width {d} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Output of [`self_attention`]: the block output and one `L × L` attention
/// matrix per head.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Records the attention block applied to the `L × d` sequence `x`.
pub fn self_attention(g: &mut Graph, x: Var, p: &AttentionVars) -> Result<AttentionOutput> {
    let d = g.value(x).cols();
    if g.value(p.w_q).shape() != [d, d] {
        return Err(TensorError::ShapeMismatch {
            op: "self_attention",
            left: g.value(x).shape(),
            right: g.value(p.w_q).shape(),
        });
    }
    check_heads(d, p.heads)?;
    let dh = d / p.heads;

    let q = g.matmul(x, p.w_q)?;
    let q = g.add_row(q, p.b_q)?;
    let k = g.matmul(x, p.w_k)?;
    let k = g.add_row(k, p.b_k)?;
    let v = g.matmul(x, p.w_v)?;
    let v = g.add_row(v, p.b_v)?;

    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let attn = g.softmax_rows(scores, (dh as f64).sqrt())?;
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let mixed = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let projected = g.matmul(mixed, p.w_o)?;
    let output = g.add(x, projected)?;
    Ok(AttentionOutput { output, weights })
}

/// Forward pass outside any training graph.
pub fn multi_head_self_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = params.record(&mut g, false);
    let out = self_attention(&mut g, xv, &vars)?;
    Ok(g.value(out.output).clone())
}
