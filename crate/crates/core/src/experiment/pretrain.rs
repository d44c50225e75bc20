//! QA pretraining of the context encoder: regress a fixed-size answer
//! embedding from `(observation features, question)`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flow::autodiff::{Mat, Tape};
use crate::flow::{AdamW, ContextEncoder, EncoderConfig, FlowError, TrainConfig};
use crate::grounding::{find_markup, Geometry};
use crate::io::seed::{fnv1a64, SeedScheme};

pub const ANSWER_DIM: usize = 8;
pub const QUESTION_DIM: usize = 32;
const NUMERIC_SLOTS: usize = 4;

/// One pretraining example, whatever corpus it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub features: Vec<f64>,
    pub question: String,
    pub answer: String,
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()).map(|w| w.to_ascii_lowercase())
}

/// Signed feature hashing of lowercase words into `dim` slots, scaled to
/// unit norm per word count.
fn hash_words(s: &str, dim: usize, out: &mut [f64]) {
    let mut n = 0usize;
    for w in words(s) {
        let h = fnv1a64(w.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[(h % dim as u64) as usize] += sign;
        n += 1;
    }
    if n > 0 {
        let k = 1.0 / (n as f64).sqrt();
        out.iter_mut().for_each(|v| *v *= k);
    }
}

pub fn question_embedding(q: &str) -> Vec<f64> {
    let mut e = vec![0.0; QUESTION_DIM];
    hash_words(q, QUESTION_DIM, &mut e);
    e
}

/// Answer target: markup coordinates divided by 1000 (or other numbers
/// squashed by `x/(1+|x|)`) in the first four slots, hashed answer words in
/// the rest.
pub fn answer_embedding(a: &str) -> Vec<f64> {
    let mut e = vec![0.0; ANSWER_DIM];
    let nums: Vec<f64> = match find_markup(a) {
        Ok(Geometry::Point(p)) => vec![p.x as f64 / 1000.0, p.y as f64 / 1000.0],
        Ok(Geometry::Box(b)) => [b.x1, b.y1, b.x2, b.y2].iter().map(|v| *v as f64 / 1000.0).collect(),
        Err(_) => a
            .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
            .filter_map(|t| t.trim_end_matches('.').parse::<f64>().ok())
            .map(|x| x / (1.0 + x.abs()))
            .collect(),
    };
    for (slot, v) in e.iter_mut().zip(nums.iter().take(NUMERIC_SLOTS)) {
        *slot = *v;
    }
    hash_words(a, ANSWER_DIM - NUMERIC_SLOTS, &mut e[NUMERIC_SLOTS..]);
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, lr: 1e-3, hidden: 32, seed: 0 }
    }
}

pub struct PretrainOutput {
    pub encoder: ContextEncoder,
    pub losses: Vec<f64>,
}

/// Train the encoder jointly with a throwaway answer head. Zero steps
/// returns the random init unchanged.
pub fn pretrain_context_encoder(
    corpus: &[PretrainRecord],
    enc_cfg: EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput, FlowError> {
    if corpus.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let encoder = ContextEncoder::random(enc_cfg.clone());
    if cfg.steps == 0 {
        return Ok(PretrainOutput { encoder, losses: Vec::new() });
    }
    for r in corpus {
        if r.features.len() != enc_cfg.input_dim {
            return Err(FlowError::ShapeMismatch { expected: (1, enc_cfg.input_dim), got: (1, r.features.len()) });
        }
    }
    let out_dim = enc_cfg.tokens * enc_cfg.token_dim;
    let mut rng = SeedScheme::new(cfg.seed).rng("pretrain-head-init", 0);
    let mut w = |r: usize, c: usize| {
        let std = 1.0 / (r as f64).sqrt();
        Array2::from_shape_simple_fn((r, c), || std * rng.sample::<f64, _>(StandardNormal))
    };
    let mut params = encoder.params.clone();
    params.extend([
        w(out_dim, cfg.hidden),
        w(QUESTION_DIM, cfg.hidden),
        Mat::zeros((1, cfg.hidden)),
        w(cfg.hidden, ANSWER_DIM),
        Mat::zeros((1, ANSWER_DIM)),
    ]);
    let targets: Vec<(Mat, Mat, Mat)> = corpus
        .iter()
        .map(|r| {
            let row = |v: Vec<f64>| Array2::from_shape_vec((1, v.len()), v).expect("row");
            (row(r.features.clone()), row(question_embedding(&r.question)), row(answer_embedding(&r.answer)))
        })
        .collect();
    let tcfg = TrainConfig { lr: cfg.lr, ..TrainConfig::default() };
    let mut opt = AdamW::new(&tcfg, &params);
    let mut rng = SeedScheme::new(cfg.seed).rng("pretrain-batches", 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut acc: Option<Vec<Mat>> = None;
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let (f, q, a) = &targets[rng.random_range(0..targets.len())];
            let mut t = Tape::new(&params);
            let x = t.constant(f.clone());
            let z = ContextEncoder::forward_on(&mut t, 0, x);
            let h1 = t.matmul(z, t.param(4));
            let qv = t.constant(q.clone());
            let h2 = t.matmul(qv, t.param(5));
            let h = t.add(h1, h2);
            let h = t.add_row(h, t.param(6));
            let h = t.tanh(h);
            let y = t.matmul(h, t.param(7));
            let y = t.add_row(y, t.param(8));
            let target = t.constant(a.clone());
            let d = t.sub(y, target);
            let loss = t.mean_square(d);
            total += t.scalar(loss);
            let g = t.backward(loss);
            match acc.as_mut() {
                None => acc = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
            }
        }
        let inv = 1.0 / cfg.batch_size as f64;
        let mut g = acc.expect("batch_size > 0");
        g.iter_mut().for_each(|g| *g *= inv);
        opt.update(&mut params, &g);
        losses.push(total * inv);
    }
    params.truncate(4);
    let encoder = ContextEncoder::from_params(enc_cfg, params)?;
    Ok(PretrainOutput { encoder, losses })
}
