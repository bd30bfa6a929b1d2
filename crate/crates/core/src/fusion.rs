//! Cross-modal projection, attention over sample and prototypes, and
//! prototype classification.
//!
//! The image vector `x` and the prototype rows are projected to width `d`
//! (`P_I` for the image and visual prototypes, `P_T` for textual ones) and
//! stacked into a `1 + 2K` sequence. One attention block updates the whole
//! sequence, which is then sliced back into `(x̃, Ṽ, T̃)`. Class
//! probabilities come from cosine similarity of `x̃` against each prototype
//! set at its own temperature.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{self_attention, AttentionParams, AttentionVars};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::prompt::{check_temperature, record_cosine};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `d_enc × d`.
    pub w_img: Tensor,
    /// `1 × d`.
    pub b_img: Tensor,
    pub w_txt: Tensor,
    pub b_txt: Tensor,
    pub attention: AttentionParams,
    /// `1 × 1`, `ln τ_v`.
    pub log_tau_v: Tensor,
    /// `1 × 1`, `ln τ_t`.
    pub log_tau_t: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w_img: Var,
    pub b_img: Var,
    pub w_txt: Var,
    pub b_txt: Var,
    pub attention: AttentionVars,
    pub log_tau_v: Var,
    pub log_tau_t: Var,
}

/// `(x̃, Ṽ, T̃)` with shapes `1 × d`, `K × d`, `K × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTriple {
    pub sample: Vec<f64>,
    pub visual: Tensor,
    pub textual: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct FusedVars {
    pub sample: Var,
    pub visual: Var,
    pub textual: Var,
}

fn log_temperature(tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    Ok(Tensor::scalar(tau.ln()))
}

impl FusionParams {
    /// Projection weights from `N(0, 1/d_enc)`, zero biases.
    pub fn init(d_enc: usize, d: usize, heads: usize, tau_v: f64, tau_t: f64, rng: &mut impl Rng) -> Result<Self> {
        if d_enc == 0 || d == 0 {
            return Err(Error::invalid("projection widths must be positive"));
        }
        let normal = Normal::new(0.0, 1.0 / (d_enc as f64).sqrt()).expect("valid std");
        let mut draw = || Tensor::new(d_enc, d, (0..d_enc * d).map(|_| normal.sample(rng)).collect());
        let w_img = draw()?;
        let w_txt = draw()?;
        Ok(Self {
            w_img,
            b_img: Tensor::zeros(1, d),
            w_txt,
            b_txt: Tensor::zeros(1, d),
            attention: AttentionParams::init(d, heads, rng)?,
            log_tau_v: log_temperature(tau_v)?,
            log_tau_t: log_temperature(tau_t)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_img.rows()
    }

    pub fn dim(&self) -> usize {
        self.w_img.cols()
    }

    pub fn tau_v(&self) -> f64 {
        self.log_tau_v.get(0, 0).exp()
    }

    pub fn tau_t(&self) -> f64 {
        self.log_tau_t.get(0, 0).exp()
    }

    /// Projections, attention weights, then the two log-temperatures.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_img, &self.b_img, &self.w_txt, &self.b_txt];
        out.extend(self.attention.tensors());
        out.push(&self.log_tau_v);
        out.push(&self.log_tau_t);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_img, &mut self.b_img, &mut self.w_txt, &mut self.b_txt];
        out.extend(self.attention.tensors_mut());
        out.push(&mut self.log_tau_v);
        out.push(&mut self.log_tau_t);
        out
    }

    pub fn record(&self, g: &mut Graph, trainable: bool, learn_temperatures: bool) -> FusionVars {
        let leaf = |g: &mut Graph, t: &Tensor, train: bool| {
            if train {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        FusionVars {
            w_img: leaf(g, &self.w_img, trainable),
            b_img: leaf(g, &self.b_img, trainable),
            w_txt: leaf(g, &self.w_txt, trainable),
            b_txt: leaf(g, &self.b_txt, trainable),
            attention: self.attention.record(g, trainable),
            log_tau_v: leaf(g, &self.log_tau_v, trainable && learn_temperatures),
            log_tau_t: leaf(g, &self.log_tau_t, trainable && learn_temperatures),
        }
    }
}

impl FusionVars {
    /// Same order as [`FusionParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.w_img, self.b_img, self.w_txt, self.b_txt];
        out.extend(self.attention.vars());
        out.push(self.log_tau_v);
        out.push(self.log_tau_t);
        out
    }
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

/// Records the fused triple for `x` (`1 × d_enc`) and prototypes `V`, `T`.
pub fn record_fuse(g: &mut Graph, x: Var, visual: Var, textual: Var, p: &FusionVars) -> Result<FusedVars> {
    let k = g.value(visual).rows();
    if g.value(textual).rows() != k || g.value(x).rows() != 1 {
        return Err(Error::invalid(format!(
            "fuse expects one sample row and matching prototype counts, got {:?}, {:?}, {:?}",
            g.value(x).shape(),
            g.value(visual).shape(),
            g.value(textual).shape()
        )));
    }
    let xs = affine(g, x, p.w_img, p.b_img)?;
    let vs = affine(g, visual, p.w_img, p.b_img)?;
    let ts = affine(g, textual, p.w_txt, p.b_txt)?;
    let seq = g.concat_rows(&[xs, vs, ts])?;
    let y = self_attention(g, seq, &p.attention)?.output;
    Ok(FusedVars {
        sample: g.slice_rows(y, 0, 1)?,
        visual: g.slice_rows(y, 1, k)?,
        textual: g.slice_rows(y, 1 + k, k)?,
    })
}

fn inverse_temperature(g: &mut Graph, log_tau: Var) -> Result<Var> {
    let neg = g.scale(log_tau, -1.0)?;
    Ok(g.exp(neg)?)
}

/// Records the `1 × K` logit rows `cos(x̃, Ṽ)/τ_v` and `cos(x̃, T̃)/τ_t`.
pub fn record_modality_logits(g: &mut Graph, fused: FusedVars, p: &FusionVars) -> Result<(Var, Var)> {
    let cv = record_cosine(g, fused.sample, fused.visual)?;
    let ct = record_cosine(g, fused.sample, fused.textual)?;
    let iv = inverse_temperature(g, p.log_tau_v)?;
    let it = inverse_temperature(g, p.log_tau_t)?;
    Ok((g.mul_scalar(cv, iv)?, g.mul_scalar(ct, it)?))
}

/// Records `L_c`, the cross-entropy of the averaged modality logits.
pub fn record_cross_loss(g: &mut Graph, logits_v: Var, logits_t: Var, label: usize) -> Result<Var> {
    let sum = g.add(logits_v, logits_t)?;
    let avg = g.scale(sum, 0.5)?;
    Ok(g.cross_entropy(avg, &[label])?)
}

pub fn fuse(x: &[f64], visual: &Tensor, textual: &Tensor, params: &FusionParams) -> Result<FusedTriple> {
    let mut g = Graph::new();
    let vars = params.record(&mut g, false, false);
    let xv = g.constant(Tensor::row(x)?);
    let vv = g.constant(visual.clone());
    let tv = g.constant(textual.clone());
    let f = record_fuse(&mut g, xv, vv, tv, &vars)?;
    Ok(FusedTriple {
        sample: g.value(f.sample).data().to_vec(),
        visual: g.value(f.visual).clone(),
        textual: g.value(f.textual).clone(),
    })
}

fn cosines(x: &[f64], rows: &Tensor) -> Result<Vec<f64>> {
    rows.row_iter().map(|r| Ok(tensor::cosine_sim(x, r)?)).collect()
}

/// `(p_V, p_T)`.
pub fn modality_probs(t: &FusedTriple, tau_v: f64, tau_t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        tensor::softmax(&cosines(&t.sample, &t.visual)?, tau_v)?,
        tensor::softmax(&cosines(&t.sample, &t.textual)?, tau_t)?,
    ))
}

pub fn cross_loss(t: &FusedTriple, label: usize, tau_v: f64, tau_t: f64) -> Result<f64> {
    check_temperature(tau_v)?;
    check_temperature(tau_t)?;
    if label >= t.visual.rows() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            t.visual.rows()
        )));
    }
    let logits: Vec<f64> = cosines(&t.sample, &t.visual)?
        .iter()
        .zip(cosines(&t.sample, &t.textual)?)
        .map(|(v, w)| 0.5 * (v / tau_v + w / tau_t))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[label])
}

/// `½(p_V + p_T)`.
pub fn combined_prediction(t: &FusedTriple, tau_v: f64, tau_t: f64) -> Result<Vec<f64>> {
    let (pv, pt) = modality_probs(t, tau_v, tau_t)?;
    Ok(average(&pv, &pt))
}

pub fn average(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn setup(seed: u64, k: usize) -> (Vec<f64>, Tensor, Tensor, FusionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(1, 6, &mut rng).into_data();
        let v = random(k, 6, &mut rng);
        let t = random(k, 6, &mut rng);
        let p = FusionParams::init(6, 8, 2, 0.07, 0.07, &mut rng).unwrap();
        (x, v, t, p)
    }

    fn zero_value_path(p: &mut FusionParams) {
        p.attention.w_v = Tensor::zeros(8, 8);
        p.attention.b_v = Tensor::zeros(1, 8);
    }

    #[test]
    fn equal_inputs_give_equal_outputs() {
        let (x, _, _, mut p) = setup(1, 1);
        p.w_txt = p.w_img.clone();
        let v = Tensor::row(&x).unwrap();
        let f = fuse(&x, &v, &v, &p).unwrap();
        assert_eq!(f.sample, f.visual.row_slice(0));
        assert_eq!(f.sample, f.textual.row_slice(0));
    }

    #[test]
    fn zero_value_path_is_projection() {
        let (x, v, t, mut p) = setup(2, 3);
        zero_value_path(&mut p);
        let f = fuse(&x, &v, &t, &p).unwrap();
        let proj = |a: &Tensor, w: &Tensor| tensor::matmul(a, w).unwrap();
        assert_eq!(f.sample, proj(&Tensor::row(&x).unwrap(), &p.w_img).into_data());
        assert_eq!(f.visual, proj(&v, &p.w_img));
        assert_eq!(f.textual, proj(&t, &p.w_txt));
    }

    #[test]
    fn class_permutation_equivariance() {
        let (x, v, t, p) = setup(3, 4);
        let perm = [2usize, 0, 3, 1];
        let permute = |m: &Tensor| {
            let rows: Vec<&[f64]> = perm.iter().map(|&i| m.row_slice(i)).collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let a = fuse(&x, &v, &t, &p).unwrap();
        let b = fuse(&x, &permute(&v), &permute(&t), &p).unwrap();
        for (u, w) in a.sample.iter().zip(&b.sample) {
            assert!((u - w).abs() < 1e-12);
        }
        for (u, w) in permute(&a.visual).data().iter().zip(b.visual.data()) {
            assert!((u - w).abs() < 1e-12);
        }
        for (u, w) in permute(&a.textual).data().iter().zip(b.textual.data()) {
            assert!((u - w).abs() < 1e-12);
        }
        let la = cross_loss(&a, 2, 0.07, 0.07).unwrap();
        let lb = cross_loss(&b, 0, 0.07, 0.07).unwrap();
        assert!((la - lb).abs() < 1e-10);
    }

    #[test]
    fn modality_probability_examples() {
        let t = FusedTriple {
            sample: vec![0.0, 1.0, 0.0],
            visual: Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 2.0, 0.0]]).unwrap(),
            textual: Tensor::from_rows(&[[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 1.0, 5.0]]).unwrap(),
        };
        let (pv, _) = modality_probs(&t, 0.01, 0.07).unwrap();
        assert!(pv[2] > 1.0 - 1e-12);
        let (_, pt) = modality_probs(&t, 0.07, 1e9).unwrap();
        for q in &pt {
            assert!((q - 1.0 / 3.0).abs() < 1e-9);
        }
        let c = combined_prediction(&t, 0.07, 0.07).unwrap();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let t = FusedTriple {
            sample: vec![1.0, 0.0],
            visual: Tensor::from_rows(&[[0.0, 1.0]; 5]).unwrap(),
            textual: Tensor::from_rows(&[[0.0, -1.0]; 5]).unwrap(),
        };
        assert!((cross_loss(&t, 4, 0.07, 0.07).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(cross_loss(&t, 5, 0.07, 0.07).is_err());
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let (x, v, t, p) = setup(5, 3);
        let mut g = Graph::new();
        let vars = p.record(&mut g, true, true);
        let xv = g.constant(Tensor::row(&x).unwrap());
        let vv = g.constant(v.clone());
        let tv = g.constant(t.clone());
        let f = record_fuse(&mut g, xv, vv, tv, &vars).unwrap();
        let (lv, lt) = record_modality_logits(&mut g, f, &vars).unwrap();
        let loss = record_cross_loss(&mut g, lv, lt, 1).unwrap();
        let triple = fuse(&x, &v, &t, &p).unwrap();
        let want = cross_loss(&triple, 1, p.tau_v(), p.tau_t()).unwrap();
        assert!((g.value(loss).get(0, 0) - want).abs() < 1e-10);
    }

    #[test]
    fn combined_prediction_of_equal_modalities() {
        let t = FusedTriple {
            sample: vec![1.0, 0.5],
            visual: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            textual: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
        };
        let (pv, _) = modality_probs(&t, 0.1, 0.1).unwrap();
        assert_eq!(combined_prediction(&t, 0.1, 0.1).unwrap(), pv);
    }
}
