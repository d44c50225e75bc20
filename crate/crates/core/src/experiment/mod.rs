//! Context-encoder initialization study: train the same policy on the same
//! demos starting from an encoder that is either random, pretrained on
//! out-of-domain QA, or pretrained on in-domain QA, and track how fast
//! closed-loop success climbs. The encoder keeps training with the policy.

pub mod corpus;
pub mod pretrain;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    policy_net_config, train_policy_with, ContextEncoder, ContextSource, EncoderConfig, FlowError, NetInit,
    TrainConfig,
};
use crate::io::seed::content_hash;
use crate::par;
use crate::sim::{collect_demos, eval_policy, ExpertPolicy, TaskConfig, TaskKind};
use crate::sim::eval::CHUNK_LEN;

pub use corpus::{in_domain_corpus, out_domain_corpus};
pub use pretrain::{pretrain_context_encoder, PretrainConfig, PretrainRecord};
pub use report::{compare, Comparison, ComparisonRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("unknown variant {0:?} (expected random, out_domain, in_domain)")]
    UnknownVariant(String),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Random,
    OutDomain,
    InDomain,
    /// Scripted expert, reported as an upper-bound reference row.
    Expert,
}

impl VariantName {
    pub const TRAINED: [VariantName; 3] = [VariantName::Random, VariantName::OutDomain, VariantName::InDomain];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::Random => "random",
            VariantName::OutDomain => "out_domain",
            VariantName::InDomain => "in_domain",
            VariantName::Expert => "expert",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(VariantName::Random),
            "out_domain" => Ok(VariantName::OutDomain),
            "in_domain" => Ok(VariantName::InDomain),
            "expert" => Ok(VariantName::Expert),
            other => Err(ExperimentError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub task_cfg: TaskConfig,
    pub demos: usize,
    pub train: TrainConfig,
    pub net_init: NetInit,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    /// Sizes of the pretraining corpora.
    pub in_domain_episodes: usize,
    pub out_domain_records: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub theta: f64,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Reach,
            task_cfg: TaskConfig::default(),
            demos: 200,
            train: TrainConfig { lr: 1e-3, steps: 4000, batch_size: 32, ..Default::default() },
            net_init: NetInit::ZeroHead,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            in_domain_episodes: 100,
            out_domain_records: 6000,
            eval_every: 250,
            eval_episodes: 50,
            final_eval_episodes: 200,
            theta: 0.8,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.into()));
        if self.eval_every == 0 || self.eval_episodes == 0 || self.demos == 0 {
            return bad("eval_every, eval_episodes and demos must be positive");
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]");
        }
        self.train.validate()?;
        self.task_cfg.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    /// Hash of everything that affects results (`jobs` does not).
    pub fn hash(&self) -> String {
        let c = Self { jobs: 1, ..self.clone() };
        content_hash(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: VariantName,
    pub task: TaskKind,
    pub seed: u64,
    pub config_hash: String,
    pub theta: f64,
    /// First evaluated step with success at or above `theta`; `None` when
    /// the run never gets there (censored).
    pub steps_to_threshold: Option<usize>,
    pub final_success_rate: f64,
    pub eval_curve: Vec<EvalPoint>,
    pub final_loss: Option<f64>,
    /// Per-step training loss; written to a CSV file next to the report.
    #[serde(skip)]
    pub losses: Vec<f64>,
}

impl RunReport {
    pub fn censored(&self) -> bool {
        self.steps_to_threshold.is_none()
    }
}

/// First evaluated step whose success reaches `theta`.
pub fn steps_to_threshold(curve: &[EvalPoint], theta: f64) -> Option<usize> {
    curve.iter().find(|p| p.success_rate >= theta).map(|p| p.step)
}

/// Encoders for each variant at one seed. Random shares the seed of the
/// pretrained ones' starting point.
pub fn build_encoder(
    variant: VariantName,
    cfg: &ExperimentConfig,
    seed: u64,
    in_corpus: &[PretrainRecord],
    out_corpus: &[PretrainRecord],
) -> Result<ContextEncoder, ExperimentError> {
    let enc_cfg = EncoderConfig { seed, ..cfg.encoder.clone() };
    let pcfg = PretrainConfig { seed, ..cfg.pretrain.clone() };
    Ok(match variant {
        VariantName::Random | VariantName::Expert => ContextEncoder::random(enc_cfg),
        VariantName::OutDomain => pretrain_context_encoder(out_corpus, enc_cfg, &pcfg)?.encoder,
        VariantName::InDomain => pretrain_context_encoder(in_corpus, enc_cfg, &pcfg)?.encoder,
    })
}

/// Train and evaluate one `(variant, seed)` cell.
pub fn run_cell(
    variant: VariantName,
    seed: u64,
    cfg: &ExperimentConfig,
    encoder: ContextEncoder,
) -> Result<RunReport, ExperimentError> {
    let config_hash = cfg.hash();
    let eval_seed = seed.wrapping_add(0x5EED);
    if variant == VariantName::Expert {
        let expert = ExpertPolicy { cfg: cfg.task_cfg.clone() };
        let r = eval_policy(&expert, cfg.task, &cfg.task_cfg, cfg.final_eval_episodes, eval_seed, 1);
        let curve = vec![EvalPoint { step: 0, success_rate: r.success_rate }];
        return Ok(RunReport {
            variant,
            task: cfg.task,
            seed,
            config_hash,
            theta: cfg.theta,
            steps_to_threshold: steps_to_threshold(&curve, cfg.theta),
            final_success_rate: r.success_rate,
            eval_curve: curve,
            final_loss: None,
            losses: Vec::new(),
        });
    }
    let demos = collect_demos(cfg.task, &cfg.task_cfg, cfg.demos, seed, 1);
    let context = ContextSource::Encoder(encoder);
    let mut net_cfg = policy_net_config(&context, CHUNK_LEN);
    net_cfg.init = cfg.net_init;
    net_cfg.seed = seed;
    let train = TrainConfig { seed, ..cfg.train.clone() };
    let mut curve = Vec::new();
    let (policy, losses) = train_policy_with(&demos, context, net_cfg, &train, |step, p| {
        if step % cfg.eval_every == 0 {
            let r = eval_policy(p, cfg.task, &cfg.task_cfg, cfg.eval_episodes, eval_seed, 1);
            log::info!("{variant} seed {seed} step {step}: success {:.2}", r.success_rate);
            curve.push(EvalPoint { step, success_rate: r.success_rate });
        }
    })?;
    let fin = eval_policy(&policy, cfg.task, &cfg.task_cfg, cfg.final_eval_episodes, eval_seed, 1);
    let tail = losses.len().min(100);
    let final_loss = (tail > 0).then(|| losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64);
    Ok(RunReport {
        variant,
        task: cfg.task,
        seed,
        config_hash,
        theta: cfg.theta,
        steps_to_threshold: steps_to_threshold(&curve, cfg.theta),
        final_success_rate: fin.success_rate,
        eval_curve: curve,
        final_loss,
        losses,
    })
}

/// Every `(variant, seed)` cell, in variant-major order. Cells run in
/// parallel over `cfg.jobs` workers; results do not depend on it.
pub fn run_matrix(
    variants: &[VariantName],
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<Vec<RunReport>, ExperimentError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(ExperimentError::InvalidConfig("at least one seed is required".into()));
    }
    for (i, v) in variants.iter().enumerate() {
        if variants[..i].contains(v) {
            return Err(ExperimentError::InvalidConfig(format!("variant {v} listed twice")));
        }
    }
    let needs = |v: VariantName| variants.contains(&v);
    let in_corpus = if needs(VariantName::InDomain) {
        in_domain_corpus(0, cfg.in_domain_episodes, &cfg.task_cfg)
    } else {
        Vec::new()
    };
    let out_corpus = if needs(VariantName::OutDomain) { out_domain_corpus(0, cfg.out_domain_records) } else { Vec::new() };
    let cells: Vec<(VariantName, u64)> = variants.iter().flat_map(|v| seeds.iter().map(move |s| (*v, *s))).collect();
    par::map_ordered(&cells, cfg.jobs, |_, &(v, s)| {
        let enc = build_encoder(v, cfg, s, &in_corpus, &out_corpus)?;
        run_cell(v, s, cfg, enc)
    })
    .into_iter()
    .collect()
}
