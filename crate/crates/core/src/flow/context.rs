//! Context tokens for the vector-field network.
//!
//! [`ContextEncoder`] stands in for the vision-language backbone: a small
//! frozen MLP from a rendered top-down image to a set of tokens. Its
//! weights come either from a random init or from QA pretraining.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::autodiff::{Mat, Tape, Var};
use super::FlowError;
use crate::io::seed::SeedScheme;
use crate::sim::{entity_tokens, observation_image, SimState, ENTITY_TOKENS, ENTITY_TOKEN_DIM, IMAGE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub tokens: usize,
    pub token_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: IMAGE_DIM, hidden: 32, tokens: 4, token_dim: 8, seed: 0 }
    }
}

/// `image → tanh(W1·x + b1) → W2·h + b2`, reshaped to `tokens × token_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub cfg: EncoderConfig,
    /// `[W1, b1, W2, b2]`.
    #[serde(skip)]
    pub params: Vec<Mat>,
}

pub const ENCODER_PARAM_NAMES: [&str; 4] = ["enc.l1.w", "enc.l1.b", "enc.l2.w", "enc.l2.b"];

impl ContextEncoder {
    pub fn random(cfg: EncoderConfig) -> Self {
        let mut rng = SeedScheme::new(cfg.seed).rng("context-encoder-init", 0);
        let mut w = |r: usize, c: usize| {
            let std = 1.0 / (r as f64).sqrt();
            Array2::from_shape_simple_fn((r, c), || std * rng.sample::<f64, _>(StandardNormal))
        };
        let out = cfg.tokens * cfg.token_dim;
        let params = vec![w(cfg.input_dim, cfg.hidden), Mat::zeros((1, cfg.hidden)), w(cfg.hidden, out), Mat::zeros((1, out))];
        Self { cfg, params }
    }

    pub fn from_params(cfg: EncoderConfig, params: Vec<Mat>) -> Result<Self, FlowError> {
        let expect = Self::random(cfg.clone());
        if params.len() != 4 {
            return Err(FlowError::InvalidConfig("encoder needs 4 tensors".into()));
        }
        for (a, b) in expect.params.iter().zip(&params) {
            super::check_shape(a.dim(), b.dim())?;
        }
        Ok(Self { cfg, params })
    }

    /// Record the encoder on a tape whose parameters start at `offset`.
    /// Input is `n × input_dim`; output is `n × (tokens·token_dim)`.
    pub fn forward_on(t: &mut Tape, offset: usize, x: Var) -> Var {
        let h = t.matmul(x, t.param(offset));
        let h = t.add_row(h, t.param(offset + 1));
        let h = t.tanh(h);
        let y = t.matmul(h, t.param(offset + 2));
        t.add_row(y, t.param(offset + 3))
    }

    pub fn encode_input(&self, f: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, f.len()), f.to_vec()).expect("row vector");
        let h = (x.dot(&self.params[0]) + &self.params[1]).mapv(f64::tanh);
        let y = h.dot(&self.params[2]) + &self.params[3];
        y.into_raw_vec_and_offset().0
    }
}

/// Where the policy's context tokens come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSource {
    /// Hand-built per-entity tokens straight from the simulator.
    Entities,
    /// Rendered observation image, encoded inside the policy network. The
    /// encoder given here is the starting point; it is trained along with
    /// the rest of the network.
    Encoder(ContextEncoder),
}

impl ContextSource {
    pub fn tokens(&self) -> usize {
        match self {
            ContextSource::Entities => ENTITY_TOKENS,
            ContextSource::Encoder(e) => e.cfg.tokens,
        }
    }

    pub fn token_dim(&self) -> usize {
        match self {
            ContextSource::Entities => ENTITY_TOKEN_DIM,
            ContextSource::Encoder(e) => e.cfg.token_dim,
        }
    }

    pub fn encode(&self, state: &SimState) -> Vec<f64> {
        match self {
            ContextSource::Entities => entity_tokens(state),
            ContextSource::Encoder(_) => observation_image(state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_and_plain_paths_agree() {
        let enc = ContextEncoder::random(EncoderConfig::default());
        let f: Vec<f64> = (0..IMAGE_DIM).map(|i| (i as f64 * 0.3).sin()).collect();
        let plain = enc.encode_input(&f);
        let mut t = Tape::new(&enc.params);
        let x = t.constant(Array2::from_shape_vec((1, IMAGE_DIM), f).unwrap());
        let y = ContextEncoder::forward_on(&mut t, 0, x);
        assert_eq!(t.value(y).as_slice().unwrap(), plain.as_slice());
        assert_eq!(plain.len(), 32);
    }

    #[test]
    fn init_is_seeded() {
        let a = ContextEncoder::random(EncoderConfig::default());
        let b = ContextEncoder::random(EncoderConfig::default());
        let c = ContextEncoder::random(EncoderConfig { seed: 1, ..Default::default() });
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(ContextEncoder::from_params(a.cfg.clone(), a.params[..3].to_vec()).is_err());
    }
}
