//! Dual-grained learnable prompts and text-side class scoring.
//!
//! Each class `i` owns two token sequences, `[θᴳ; eᵢ]` and `[θᴸ; eᵢ]`, where
//! the contexts `θ` are shared across classes and `eᵢ` is the frozen
//! class-name token. A sequence is composed into the text space by mean
//! pooling followed by the encoder's fixed projection, giving the global and
//! local class embeddings `Gᵢ` and `Lᵢ`.
//!
//! Scores:
//!
//! * global `pᵢ = cos(h, Gᵢ)` against the pooled text embedding `h`;
//! * local `p′ᵢ = Σⱼ softmaxⱼ(Pᵢⱼ / τ_s) · Pᵢⱼ` with `Pᵢⱼ = cos(Hⱼ, Lᵢ)` over the
//!   token embeddings `H`, a soft maximum over token positions.
//!
//! ```
//! use protopop::prompt::local_score_row;
//!
//! let p = local_score_row(&[0.2, 0.4], 0.1).unwrap();
//! assert!((p - 0.37616).abs() < 1e-5);
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::data::ClassTable;
use crate::encoder::EncoderProvider;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, TensorError};

/// Shared prompt contexts plus frozen class-name tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    /// `s × d_tok`.
    pub global_ctx: Tensor,
    /// `s × d_tok`.
    pub local_ctx: Tensor,
    /// `K × d_tok`, never trained.
    pub class_tokens: Tensor,
}

/// Graph handles for a recorded [`PromptBank`].
#[derive(Debug, Clone, Copy)]
pub struct PromptVars {
    pub global_ctx: Var,
    pub local_ctx: Var,
    pub class_tokens: Var,
}

/// `G` and `L`, both `K × d_enc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeds {
    pub global: Tensor,
    pub local: Tensor,
}

impl PromptBank {
    pub fn new(global_ctx: Tensor, local_ctx: Tensor, class_tokens: Tensor) -> Result<Self> {
        if global_ctx.shape() != local_ctx.shape()
            || global_ctx.cols() != class_tokens.cols()
            || global_ctx.rows() == 0
            || class_tokens.rows() == 0
        {
            return Err(Error::invalid(format!(
                "prompt bank shapes disagree: global {:?}, local {:?}, class tokens {:?}",
                global_ctx.shape(),
                local_ctx.shape(),
                class_tokens.shape()
            )));
        }
        Ok(Self {
            global_ctx,
            local_ctx,
            class_tokens,
        })
    }

    /// Contexts drawn from `N(0, std²)`; class tokens from the encoder.
    pub fn init(
        encoder: &dyn EncoderProvider,
        classes: &ClassTable,
        prompt_len: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if prompt_len == 0 {
            return Err(Error::invalid("prompt length must be at least 1"));
        }
        let d = encoder.token_dim();
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(format!("context std: {e}")))?;
        let draw = |rng: &mut dyn rand::RngCore| {
            Tensor::new(prompt_len, d, (0..prompt_len * d).map(|_| normal.sample(rng)).collect())
        };
        let global_ctx = draw(rng)?;
        let local_ctx = draw(rng)?;
        let mut tokens = Vec::with_capacity(classes.len() * d);
        for entry in classes.entries() {
            let t = encoder.embed_class_token(&entry.name)?;
            if t.len() != d {
                return Err(Error::invalid(format!(
                    "class token {:?} has width {}, expected {d}",
                    entry.name,
                    t.len()
                )));
            }
            tokens.extend(t);
        }
        Self::new(global_ctx, local_ctx, Tensor::new(classes.len(), d, tokens)?)
    }

    pub fn prompt_len(&self) -> usize {
        self.global_ctx.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_tokens.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.class_tokens.cols()
    }

    pub fn record(&self, g: &mut Graph, trainable: bool) -> PromptVars {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        PromptVars {
            global_ctx: leaf(g, &self.global_ctx),
            local_ctx: leaf(g, &self.local_ctx),
            class_tokens: g.constant(self.class_tokens.clone()),
        }
    }
}

/// Mean of `[ctx; eᵢ]` for every class, mapped through `projection`.
fn compose(g: &mut Graph, ctx: Var, class_tokens: Var, projection: Var) -> Result<Var> {
    let s = g.value(ctx).rows() as f64;
    let ctx_mean = g.col_means(ctx)?;
    let ctx_part = g.scale(ctx_mean, s / (s + 1.0))?;
    let tok_part = g.scale(class_tokens, 1.0 / (s + 1.0))?;
    let pooled = g.add_row(tok_part, ctx_part)?;
    Ok(g.matmul(pooled, projection)?)
}

/// Records `(G, L)`.
pub fn record_class_embeddings(g: &mut Graph, vars: PromptVars, projection: Var) -> Result<(Var, Var)> {
    Ok((
        compose(g, vars.global_ctx, vars.class_tokens, projection)?,
        compose(g, vars.local_ctx, vars.class_tokens, projection)?,
    ))
}

pub fn class_embeddings(bank: &PromptBank, encoder: &dyn EncoderProvider) -> Result<ClassEmbeds> {
    let proj = encoder.prompt_projection();
    if proj.rows() != bank.token_dim() {
        return Err(Error::invalid(format!(
            "prompt tokens have width {}, projection expects {}",
            bank.token_dim(),
            proj.rows()
        )));
    }
    let mut g = Graph::new();
    let vars = bank.record(&mut g, false);
    let p = g.constant(proj.clone());
    let (gv, lv) = record_class_embeddings(&mut g, vars, p)?;
    let out = ClassEmbeds {
        global: g.value(gv).clone(),
        local: g.value(lv).clone(),
    };
    for t in [&out.global, &out.local] {
        if t.row_iter().any(|r| tensor::l2_norm(r) == 0.0) {
            return Err(TensorError::ZeroNorm("class_embeddings").into());
        }
    }
    Ok(out)
}

/// Cosine matrix between the rows of `a` (`m × d`) and `b` (`n × d`): `m × n`.
pub fn record_cosine(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let an = g.normalize_rows(a)?;
    let bn = g.normalize_rows(b)?;
    Ok(g.matmul_nt(an, bn)?)
}

/// Records `p` as a `1 × K` row; `h` is `1 × d_enc`.
pub fn record_global_score(g: &mut Graph, h: Var, class_global: Var) -> Result<Var> {
    record_cosine(g, h, class_global)
}

/// Records `p′` as a `1 × K` row; `tokens` is `l × d_enc`.
pub fn record_local_score(g: &mut Graph, tokens: Var, class_local: Var, tau_s: f64) -> Result<Var> {
    let p = record_cosine(g, class_local, tokens)?;
    let w = g.softmax_rows(p, tau_s)?;
    let weighted = g.mul(w, p)?;
    let col = g.row_sums(weighted)?;
    Ok(g.transpose(col)?)
}

/// Records `(L_G, L_O)` as scalars.
pub fn record_prompt_losses(g: &mut Graph, p: Var, p_local: Var, label: usize, tau_g: f64) -> Result<(Var, Var)> {
    check_temperature(tau_g)?;
    let zg = g.scale(p, 1.0 / tau_g)?;
    let zo = g.scale(p_local, 1.0 / tau_g)?;
    Ok((g.cross_entropy(zg, &[label])?, g.cross_entropy(zo, &[label])?))
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(TensorError::BadTemperature(tau).into())
    }
}

/// `pᵢ = cos(h, Gᵢ)`.
pub fn global_score(h: &[f64], embeds: &ClassEmbeds) -> Result<Vec<f64>> {
    embeds
        .global
        .row_iter()
        .map(|gi| Ok(tensor::cosine_sim(h, gi)?))
        .collect()
}

/// Softmax-weighted aggregation of one row of token similarities.
pub fn local_score_row(sims: &[f64], tau_s: f64) -> Result<f64> {
    let w = tensor::softmax(sims, tau_s)?;
    Ok(w.iter().zip(sims).map(|(w, p)| w * p).sum())
}

/// `p′ᵢ` for every class; `tokens` is `l × d_enc` with `l ≥ 1`.
pub fn local_score(tokens: &Tensor, embeds: &ClassEmbeds, tau_s: f64) -> Result<Vec<f64>> {
    if tokens.rows() == 0 {
        return Err(Error::invalid("local score needs at least one token"));
    }
    embeds
        .local
        .row_iter()
        .map(|li| {
            let sims = tokens
                .row_iter()
                .map(|hj| tensor::cosine_sim(hj, li))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            local_score_row(&sims, tau_s)
        })
        .collect()
}

fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}

/// `(L_G, L_O)`: cross-entropy of `softmax(p / τ_g)` and `softmax(p′ / τ_g)`.
pub fn prompt_losses(p: &[f64], p_local: &[f64], label: usize, tau_g: f64) -> Result<(f64, f64)> {
    check_temperature(tau_g)?;
    if p.len() != p_local.len() || label >= p.len() {
        return Err(Error::invalid(format!(
            "label {label} for score vectors of length {} and {}",
            p.len(),
            p_local.len()
        )));
    }
    let scaled = |v: &[f64]| v.iter().map(|x| x / tau_g).collect::<Vec<_>>();
    Ok((cross_entropy(&scaled(p), label), cross_entropy(&scaled(p_local), label)))
}
