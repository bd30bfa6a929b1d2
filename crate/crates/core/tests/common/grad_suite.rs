//! Backward pass against central finite differences, per operation and for
//! the full alignment loss.

use protopop::attention::{self_attention, AttentionVars};
use protopop::autodiff::{gradient_check, Graph, Var};
use protopop::data::{generate_synthetic, SynthConfig};
use protopop::encoder::{TableEncoder, TextSource};
use protopop::fusion::{record_cross_loss, record_fuse, record_modality_logits, FusionVars};
use protopop::prompt::{record_cosine, record_global_score, record_local_score, record_prompt_losses};
use protopop::prototypes::{build_prototypes, SamplingPlan};
use protopop::tensor::{Tensor, TensorError};
use protopop::trainer::{load_samples, AlignmentModel, Sample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var, TensorError>;

/// Worst relative error of `build` over every seed with freshly drawn inputs
/// of `shapes`.
fn check_op(name: &str, shapes: &[(usize, usize)], scale: f64, build: Build) -> (String, f64) {
    let worst = (0..SEEDS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c, scale)).collect();
            gradient_check(&inputs, H, FLOOR, seed, build).unwrap().max_rel_error
        })
        .fold(0.0, f64::max);
    (name.to_string(), worst)
}

pub fn elementwise_and_linear_ops() -> Vec<(String, f64)> {
    vec![
        check_op("matmul", &[(3, 4), (4, 2)], 1.0, |g, v| g.matmul(v[0], v[1])),
        check_op("matmul_nt", &[(3, 4), (5, 4)], 1.0, |g, v| g.matmul_nt(v[0], v[1])),
        check_op("add", &[(2, 3), (2, 3)], 1.0, |g, v| g.add(v[0], v[1])),
        check_op("sub", &[(2, 3), (2, 3)], 1.0, |g, v| g.sub(v[0], v[1])),
        check_op("mul", &[(2, 3), (2, 3)], 1.0, |g, v| g.mul(v[0], v[1])),
        check_op("scale", &[(2, 3)], 1.0, |g, v| g.scale(v[0], -2.5)),
        check_op("add_row", &[(3, 4), (1, 4)], 1.0, |g, v| g.add_row(v[0], v[1])),
        check_op("mul_scalar", &[(3, 2), (1, 1)], 1.0, |g, v| g.mul_scalar(v[0], v[1])),
        check_op("exp", &[(2, 3)], 2.0, |g, v| g.exp(v[0])),
        check_op("self product", &[(2, 2)], 1.0, |g, v| g.mul(v[0], v[0])),
    ]
}

pub fn reductions_and_reshapes() -> Vec<(String, f64)> {
    vec![
        check_op("transpose", &[(2, 3)], 1.0, |g, v| g.transpose(v[0])),
        check_op("concat_rows", &[(2, 3), (1, 3)], 1.0, |g, v| {
            g.concat_rows(&[v[0], v[1], v[0]])
        }),
        check_op("slice_rows", &[(4, 3)], 1.0, |g, v| g.slice_rows(v[0], 1, 2)),
        check_op("concat_cols", &[(2, 3), (2, 1)], 1.0, |g, v| {
            g.concat_cols(&[v[0], v[1]])
        }),
        check_op("slice_cols", &[(2, 5)], 1.0, |g, v| g.slice_cols(v[0], 2, 2)),
        check_op("col_means", &[(4, 3)], 1.0, |g, v| g.col_means(v[0])),
        check_op("row_sums", &[(4, 3)], 1.0, |g, v| g.row_sums(v[0])),
        check_op("sum", &[(4, 3)], 1.0, |g, v| g.sum(v[0])),
    ]
}

pub fn normalizing_ops() -> Vec<(String, f64)> {
    vec![
        check_op("normalize_rows", &[(3, 4)], 1.0, |g, v| g.normalize_rows(v[0])),
        check_op("softmax_rows", &[(3, 5)], 2.0, |g, v| g.softmax_rows(v[0], 0.7)),
        check_op("sharp softmax_rows", &[(2, 4)], 1.0, |g, v| g.softmax_rows(v[0], 0.1)),
        check_op("cross_entropy", &[(3, 4)], 2.0, |g, v| {
            g.cross_entropy(v[0], &[0, 3, 1])
        }),
    ]
}

fn lift<T>(r: protopop::Result<T>) -> Result<T, TensorError> {
    r.map_err(|e| TensorError::Invalid(e.to_string()))
}

pub fn score_and_loss_terms() -> Vec<(String, f64)> {
    vec![
        check_op("cosine", &[(2, 5), (3, 5)], 1.0, |g, v| {
            lift(record_cosine(g, v[0], v[1]))
        }),
        check_op("global score", &[(1, 6), (4, 6)], 1.0, |g, v| {
            lift(record_global_score(g, v[0], v[1]))
        }),
        check_op("local score", &[(5, 6), (4, 6)], 1.0, |g, v| {
            lift(record_local_score(g, v[0], v[1], 0.1))
        }),
        check_op("prompt losses", &[(1, 4), (1, 4)], 1.0, |g, v| {
            let (a, b) = lift(record_prompt_losses(g, v[0], v[1], 2, 0.07))?;
            g.add(a, b)
        }),
    ]
}

fn attention_vars(v: &[Var], heads: usize) -> AttentionVars {
    AttentionVars {
        heads,
        w_q: v[0],
        b_q: v[1],
        w_k: v[2],
        b_k: v[3],
        w_v: v[4],
        b_v: v[5],
        w_o: v[6],
    }
}

const ATTN_SHAPES: [(usize, usize); 7] = [(4, 4), (1, 4), (4, 4), (1, 4), (4, 4), (1, 4), (4, 4)];

pub fn multi_head_attention() -> Vec<(String, f64)> {
    let mut shapes = vec![(5, 4)];
    shapes.extend(ATTN_SHAPES);
    vec![
        check_op("attention, 2 heads", &shapes, 1.0, |g, v| {
            Ok(self_attention(g, v[0], &attention_vars(&v[1..], 2))?.output)
        }),
        check_op("attention, 1 head", &shapes, 1.0, |g, v| {
            Ok(self_attention(g, v[0], &attention_vars(&v[1..], 1))?.output)
        }),
    ]
}

pub fn fusion_and_cross_loss() -> Vec<(String, f64)> {
    // x, V, T, W_img, b_img, W_txt, b_txt, attention, ln τ_v, ln τ_t
    let mut shapes = vec![(1, 3), (3, 3), (3, 3), (3, 4), (1, 4), (3, 4), (1, 4)];
    shapes.extend(ATTN_SHAPES);
    shapes.extend([(1, 1), (1, 1)]);
    let build: Build = |g, v| {
        let p = FusionVars {
            w_img: v[3],
            b_img: v[4],
            w_txt: v[5],
            b_txt: v[6],
            attention: attention_vars(&v[7..14], 2),
            log_tau_v: v[14],
            log_tau_t: v[15],
        };
        let fused = lift(record_fuse(g, v[0], v[1], v[2], &p))?;
        let (zv, zt) = lift(record_modality_logits(g, fused, &p))?;
        lift(record_cross_loss(g, zv, zt, 1))
    };
    vec![check_op("fusion cross loss", &shapes, 1.0, build)]
}

/// Every per-operation check.
pub fn all_ops() -> Vec<(String, f64)> {
    let mut out = elementwise_and_linear_ops();
    out.extend(reductions_and_reshapes());
    out.extend(normalizing_ops());
    out.extend(score_and_loss_terms());
    out.extend(multi_head_attention());
    out.extend(fusion_and_cross_loss());
    out
}

struct Setup {
    encoder: TableEncoder,
    model: AlignmentModel,
    samples: Vec<Sample>,
}

fn setup(seed: u64) -> Setup {
    let corpus = generate_synthetic(&SynthConfig {
        classes: 3,
        posts_per_class: 12,
        dim: 6,
        seed,
        ..Default::default()
    })
    .unwrap();
    let encoder = TableEncoder::from_synthetic(&corpus).unwrap();
    let protos = build_prototypes(&corpus.dataset, &encoder, &SamplingPlan::default(), seed).unwrap();
    let config = TrainConfig {
        dim: 4,
        heads: 2,
        prompt_len: 2,
        seed,
        learn_temperatures: true,
        // broad temperatures keep the loss surface smooth at the probe step
        tau_g: 0.5,
        tau_v: 0.5,
        tau_t: 0.5,
        ..Default::default()
    };
    let model = AlignmentModel::init(&config, &encoder, &corpus.dataset.classes, &protos).unwrap();
    let ids: Vec<String> = corpus
        .dataset
        .posts
        .iter()
        .step_by(7)
        .map(|p| p.post_id.clone())
        .collect();
    let samples = load_samples(&corpus.dataset, &ids, &encoder, TextSource::Title).unwrap();
    Setup {
        encoder,
        model,
        samples,
    }
}

fn plain_loss(model: &AlignmentModel, samples: &[Sample], encoder: &TableEncoder) -> f64 {
    let embeds = model.class_embeds(encoder).unwrap();
    samples
        .iter()
        .map(|s| model.evaluate(s, &embeds).unwrap().losses.total())
        .sum()
}

/// Worst relative error of the model's batched gradients against finite
/// differences of the plain forward loss for one seed. Also returns the gap
/// between the batched and plain loss values.
pub fn alignment_model(seed: u64) -> (f64, f64) {
    let Setup {
        encoder,
        mut model,
        samples,
    } = setup(seed);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (total, grads) = model.loss_gradients(&refs, &encoder).unwrap();
    let gap = (total - plain_loss(&model, &samples, &encoder)).abs();
    let mut worst: f64 = 0.0;
    for (t, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let x = model.trainable()[t].data()[k];
            model.trainable_mut()[t].data_mut()[k] = x + H;
            let up = plain_loss(&model, &samples, &encoder);
            model.trainable_mut()[t].data_mut()[k] = x - H;
            let down = plain_loss(&model, &samples, &encoder);
            model.trainable_mut()[t].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * H);
            let a = grad.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    (worst, gap)
}
