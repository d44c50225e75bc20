//! Vector-field network over `[context…, state, action_1..H]` tokens.
//!
//! Context tokens carry no positional embedding, so the action outputs do
//! not depend on context-token order. Action tokens get a learned position
//! per chunk row. Every block uses non-causal attention.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::autodiff::{Mat, Tape, Var};
use super::context::{ContextEncoder, EncoderConfig, ENCODER_PARAM_NAMES};
use super::matching::{FlowSample, Observation, VelocityField};
use super::{check_shape, FlowError};
use crate::io::seed::SeedScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInit {
    /// Output head starts at zero, so the initial field is `v ≡ 0`.
    #[default]
    ZeroHead,
    RandomHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub horizon: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub ctx_tokens: usize,
    pub ctx_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Sinusoidal frequencies `π·2^k`, `k < tau_freqs`.
    pub tau_freqs: usize,
    pub init: NetInit,
    pub seed: u64,
    /// When set, the context input is a raw image and this encoder, trained
    /// with the rest of the network, turns it into the context tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
}

impl NetConfig {
    pub fn new(horizon: usize, action_dim: usize, state_dim: usize, ctx_tokens: usize, ctx_dim: usize) -> Self {
        Self {
            horizon,
            action_dim,
            state_dim,
            ctx_tokens,
            ctx_dim,
            d_model: 32,
            heads: 2,
            layers: 2,
            mlp_hidden: 64,
            tau_freqs: 6,
            init: NetInit::ZeroHead,
            seed: 0,
            encoder: None,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("horizon", self.horizon),
            ("action_dim", self.action_dim),
            ("state_dim", self.state_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FlowError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(FlowError::InvalidConfig("d_model must be divisible by heads".into()));
        }
        if self.ctx_tokens > 0 && self.ctx_dim == 0 {
            return Err(FlowError::InvalidConfig("ctx_dim must be positive".into()));
        }
        if let Some(e) = &self.encoder {
            if (e.tokens, e.token_dim) != (self.ctx_tokens, self.ctx_dim) || e.input_dim == 0 || e.hidden == 0 {
                return Err(FlowError::InvalidConfig("encoder output must match the context token shape".into()));
            }
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    fn action_in(&self) -> usize {
        self.action_dim + 2 * self.tau_freqs
    }

    /// Length of `Observation::context` this network expects.
    pub fn context_len(&self) -> usize {
        match &self.encoder {
            Some(e) => e.input_dim,
            None => self.ctx_tokens * self.ctx_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: (usize, usize),
    heads: Vec<Head>,
    ln2: (usize, usize),
    mlp1: (usize, usize),
    mlp2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// Index of the first encoder tensor.
    enc: Option<usize>,
    ctx: (usize, usize),
    state: (usize, usize),
    act1: (usize, usize),
    act2: (usize, usize),
    act_pos: usize,
    blocks: Vec<Block>,
    ln_f: (usize, usize),
    out: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldNet {
    cfg: NetConfig,
    params: Vec<Mat>,
    names: Vec<String>,
    layout: Layout,
}

struct Builder<'a, R: Rng> {
    params: Vec<Mat>,
    names: Vec<String>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, name: String, m: Mat) -> usize {
        self.params.push(m);
        self.names.push(name);
        self.params.len() - 1
    }

    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> usize {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let m = Array2::from_shape_simple_fn((fan_in, fan_out), || std * rng.sample::<f64, _>(StandardNormal));
        self.push(name.to_string(), m)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.weight(&format!("{name}.w"), fan_in, fan_out);
        let b = self.push(format!("{name}.b"), Mat::zeros((1, fan_out)));
        (w, b)
    }

    fn layer_norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        let g = self.push(format!("{name}.gain"), Mat::ones((1, d)));
        let b = self.push(format!("{name}.bias"), Mat::zeros((1, d)));
        (g, b)
    }
}

impl VectorFieldNet {
    pub fn new(cfg: NetConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        let mut rng = SeedScheme::new(cfg.seed).rng("net-init", 0);
        let mut b = Builder { params: Vec::new(), names: Vec::new(), rng: &mut rng };
        let d = cfg.d_model;
        let enc = cfg.encoder.as_ref().map(|e| {
            let init = ContextEncoder::random(e.clone());
            let first = b.params.len();
            for (name, m) in ENCODER_PARAM_NAMES.iter().zip(init.params) {
                b.push(name.to_string(), m);
            }
            first
        });
        let ctx = b.linear("ctx_proj", cfg.ctx_dim.max(1), d);
        let state = b.linear("state_proj", cfg.state_dim, d);
        let act1 = b.linear("action_enc.l1", cfg.action_in(), cfg.mlp_hidden);
        let act2 = b.linear("action_enc.l2", cfg.mlp_hidden, d);
        let act_pos = b.weight("action_pos", cfg.horizon, d);
        // Keep positions small next to the content projection.
        b.params[act_pos] *= 0.1 * (cfg.horizon as f64).sqrt();
        let mut blocks = Vec::new();
        for l in 0..cfg.layers {
            let ln1 = b.layer_norm(&format!("blocks.{l}.ln1"), d);
            let heads = (0..cfg.heads)
                .map(|h| Head {
                    q: b.weight(&format!("blocks.{l}.attn.h{h}.q"), d, cfg.head_dim()),
                    k: b.weight(&format!("blocks.{l}.attn.h{h}.k"), d, cfg.head_dim()),
                    v: b.weight(&format!("blocks.{l}.attn.h{h}.v"), d, cfg.head_dim()),
                    o: b.weight(&format!("blocks.{l}.attn.h{h}.o"), cfg.head_dim(), d),
                })
                .collect();
            let ln2 = b.layer_norm(&format!("blocks.{l}.ln2"), d);
            let mlp1 = b.linear(&format!("blocks.{l}.mlp.l1"), d, cfg.mlp_hidden);
            let mlp2 = b.linear(&format!("blocks.{l}.mlp.l2"), cfg.mlp_hidden, d);
            blocks.push(Block { ln1, heads, ln2, mlp1, mlp2 });
        }
        let ln_f = b.layer_norm("ln_f", d);
        let out = b.linear("out_head", d, cfg.action_dim);
        if cfg.init == NetInit::ZeroHead {
            b.params[out.0].fill(0.0);
        }
        let layout = Layout { enc, ctx, state, act1, act2, act_pos, blocks, ln_f, out };
        let (params, names) = (b.params, b.names);
        Ok(Self { cfg, params, names, layout })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Replace all tensors; shapes must match the current layout.
    pub fn set_params(&mut self, params: Vec<Mat>) -> Result<(), FlowError> {
        if params.len() != self.params.len() {
            return Err(FlowError::ShapeMismatch { expected: (self.params.len(), 0), got: (params.len(), 0) });
        }
        for (a, b) in self.params.iter().zip(&params) {
            check_shape(a.dim(), b.dim())?;
        }
        self.params = params;
        Ok(())
    }

    /// The embedded context encoder with its current weights.
    pub fn encoder(&self) -> Option<ContextEncoder> {
        let (cfg, first) = (self.cfg.encoder.clone()?, self.layout.enc?);
        Some(ContextEncoder { cfg, params: self.params[first..first + 4].to_vec() })
    }

    /// Overwrite the embedded encoder's weights, e.g. with pretrained ones.
    pub fn set_encoder(&mut self, e: &ContextEncoder) -> Result<(), FlowError> {
        let (Some(cfg), Some(first)) = (&self.cfg.encoder, self.layout.enc) else {
            return Err(FlowError::InvalidConfig("network has no context encoder".into()));
        };
        if cfg.input_dim != e.cfg.input_dim || cfg.hidden != e.cfg.hidden {
            return Err(FlowError::InvalidConfig("encoder shape differs from the network's".into()));
        }
        for (dst, src) in self.params[first..first + 4].iter_mut().zip(&e.params) {
            check_shape(dst.dim(), src.dim())?;
            dst.assign(src);
        }
        Ok(())
    }

    /// `[sin(ω_k τ), cos(ω_k τ)]` with `ω_k = π·2^k`.
    pub fn tau_embedding(&self, tau: f64) -> Vec<f64> {
        let mut e = Vec::with_capacity(2 * self.cfg.tau_freqs);
        for k in 0..self.cfg.tau_freqs {
            let w = PI * f64::from(1u32 << k);
            e.push((w * tau).sin());
            e.push((w * tau).cos());
        }
        e
    }

    fn check_obs(&self, obs: &Observation) -> Result<(), FlowError> {
        check_shape((self.cfg.context_len(), self.cfg.state_dim), (obs.context.len(), obs.state.len()))
    }

    fn linear(&self, t: &mut Tape, x: Var, (w, b): (usize, usize)) -> Var {
        let y = t.matmul(x, t.param(w));
        t.add_row(y, t.param(b))
    }

    fn layer_norm(&self, t: &mut Tape, x: Var, (g, b): (usize, usize)) -> Var {
        let (g, b) = (t.param(g), t.param(b));
        t.layer_norm(x, g, b)
    }

    /// Record the forward pass on `tape`; returns the `H × D` velocity.
    pub fn forward_on(&self, t: &mut Tape, a_tau: &Mat, tau: f64, obs: &Observation) -> Result<Var, FlowError> {
        let cfg = &self.cfg;
        check_shape((cfg.horizon, cfg.action_dim), a_tau.dim())?;
        self.check_obs(obs)?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(FlowError::InvalidTau(tau));
        }
        let l = &self.layout;
        let mut parts = Vec::with_capacity(3);
        if cfg.ctx_tokens > 0 {
            let c = match l.enc {
                Some(first) => {
                    let x = t.constant(Array2::from_shape_vec((1, obs.context.len()), obs.context.clone()).expect("row"));
                    let y = ContextEncoder::forward_on(t, first, x);
                    t.reshape(y, cfg.ctx_tokens, cfg.ctx_dim)
                }
                None => {
                    let c = Array2::from_shape_vec((cfg.ctx_tokens, cfg.ctx_dim), obs.context.clone())
                        .expect("length checked");
                    t.constant(c)
                }
            };
            parts.push(self.linear(t, c, l.ctx));
        }
        let st = t.constant(Array2::from_shape_vec((1, cfg.state_dim), obs.state.clone()).expect("length checked"));
        parts.push(self.linear(t, st, l.state));

        let temb = self.tau_embedding(tau);
        let mut ain = Mat::zeros((cfg.horizon, cfg.action_in()));
        ain.slice_mut(s![.., ..cfg.action_dim]).assign(a_tau);
        for mut row in ain.rows_mut() {
            for (j, e) in temb.iter().enumerate() {
                row[cfg.action_dim + j] = *e;
            }
        }
        let ain = t.constant(ain);
        let h = self.linear(t, ain, l.act1);
        let h = t.silu(h);
        let h = self.linear(t, h, l.act2);
        let act = t.add(h, t.param(l.act_pos));
        parts.push(act);

        let mut x = t.concat_rows(&parts);
        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        for blk in &l.blocks {
            let h = self.layer_norm(t, x, blk.ln1);
            let mut attn: Option<Var> = None;
            for hd in &blk.heads {
                let q = t.matmul(h, t.param(hd.q));
                let k = t.matmul(h, t.param(hd.k));
                let v = t.matmul(h, t.param(hd.v));
                let sc = t.matmul_t(q, k);
                let sc = t.scale(sc, scale);
                let p = t.softmax_rows(sc);
                let o = t.matmul(p, v);
                let o = t.matmul(o, t.param(hd.o));
                attn = Some(match attn {
                    Some(a) => t.add(a, o),
                    None => o,
                });
            }
            x = t.add(x, attn.expect("at least one head"));
            let h = self.layer_norm(t, x, blk.ln2);
            let h = self.linear(t, h, blk.mlp1);
            let h = t.silu(h);
            let h = self.linear(t, h, blk.mlp2);
            x = t.add(x, h);
        }
        let x = self.layer_norm(t, x, l.ln_f);
        let n = t.value(x).nrows();
        let x = t.slice_rows(x, n - cfg.horizon, n);
        let v = self.linear(t, x, l.out);
        if t.value(v).iter().any(|e| !e.is_finite()) {
            return Err(FlowError::NonFiniteActivation("vector field output"));
        }
        Ok(v)
    }

    pub fn forward(&self, a_tau: &Mat, tau: f64, obs: &Observation) -> Result<Mat, FlowError> {
        let mut t = Tape::new(&self.params);
        let v = self.forward_on(&mut t, a_tau, tau, obs)?;
        Ok(t.value(v).clone())
    }

    /// Flow-matching loss of one sample and its gradient for every tensor.
    pub fn loss_and_grad(&self, sample: &FlowSample, obs: &Observation) -> Result<(f64, Vec<Mat>), FlowError> {
        let mut t = Tape::new(&self.params);
        let v = self.forward_on(&mut t, &sample.a_tau, sample.tau, obs)?;
        let u = t.constant(sample.u.clone());
        let diff = t.sub(v, u);
        let loss = t.mean_square(diff);
        let value = t.scalar(loss);
        let grads = t.backward(loss);
        if grads.iter().any(|g| g.iter().any(|e| !e.is_finite())) {
            return Err(FlowError::NonFiniteActivation("gradient"));
        }
        Ok((value, grads))
    }

    pub fn loss(&self, sample: &FlowSample, obs: &Observation) -> Result<f64, FlowError> {
        let v = self.forward(&sample.a_tau, sample.tau, obs)?;
        super::fm_loss(&v, &sample.u)
    }
}

impl VelocityField for VectorFieldNet {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    fn velocity(&self, a_tau: &Mat, tau: f64, obs: &Observation) -> Result<Mat, FlowError> {
        self.forward(a_tau, tau, obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::matching::{standard_normal, SignConvention};

    fn cfg(init: NetInit) -> NetConfig {
        let mut c = NetConfig::new(4, 3, 3, 4, 7);
        c.init = init;
        c.seed = 11;
        c
    }

    fn obs(rng: &mut impl Rng) -> Observation {
        Observation {
            context: (0..28).map(|_| rng.random_range(-1.0..1.0)).collect(),
            state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_head_gives_zero_field() {
        let net = VectorFieldNet::new(cfg(NetInit::ZeroHead)).unwrap();
        let mut rng = SeedScheme::new(0).rng("t", 0);
        let a = standard_normal(4, 3, &mut rng);
        assert_eq!(net.forward(&a, 0.3, &obs(&mut rng)).unwrap(), Mat::zeros((4, 3)));
    }

    #[test]
    fn shape_errors() {
        let net = VectorFieldNet::new(cfg(NetInit::RandomHead)).unwrap();
        let mut rng = SeedScheme::new(0).rng("t", 0);
        let o = obs(&mut rng);
        assert!(matches!(net.forward(&Mat::zeros((3, 3)), 0.5, &o), Err(FlowError::ShapeMismatch { .. })));
        let bad = Observation { context: vec![0.0; 5], state: o.state.clone() };
        assert!(matches!(net.forward(&Mat::zeros((4, 3)), 0.5, &bad), Err(FlowError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let net = VectorFieldNet::new(cfg(NetInit::RandomHead)).unwrap();
        let mut rng = SeedScheme::new(0).rng("t", 0);
        let mut o = obs(&mut rng);
        o.state[0] = f64::NAN;
        assert!(matches!(net.forward(&Mat::zeros((4, 3)), 0.5, &o), Err(FlowError::NonFiniteActivation(_))));
    }

    #[test]
    fn forward_is_deterministic_and_seeded() {
        let a = VectorFieldNet::new(cfg(NetInit::RandomHead)).unwrap();
        let b = VectorFieldNet::new(cfg(NetInit::RandomHead)).unwrap();
        assert_eq!(a, b);
        let mut c2 = cfg(NetInit::RandomHead);
        c2.seed = 12;
        assert_ne!(a.params(), VectorFieldNet::new(c2).unwrap().params());
        let mut rng = SeedScheme::new(1).rng("t", 0);
        let x = standard_normal(4, 3, &mut rng);
        let o = obs(&mut rng);
        assert_eq!(a.forward(&x, 0.7, &o).unwrap(), b.forward(&x, 0.7, &o).unwrap());
    }

    #[test]
    fn context_permutation_leaves_field_unchanged() {
        let net = VectorFieldNet::new(cfg(NetInit::RandomHead)).unwrap();
        let mut rng = SeedScheme::new(2).rng("t", 0);
        for _ in 0..20 {
            let o = obs(&mut rng);
            let x = standard_normal(4, 3, &mut rng);
            let tau = rng.random_range(0.0..=1.0);
            let mut p = o.clone();
            for (dst, src) in [3usize, 0, 2, 1].iter().enumerate() {
                p.context[dst * 7..dst * 7 + 7].copy_from_slice(&o.context[src * 7..src * 7 + 7]);
            }
            let v1 = net.forward(&x, tau, &o).unwrap();
            let v2 = net.forward(&x, tau, &p).unwrap();
            let err = (&v1 - &v2).iter().fold(0.0f64, |m, e| m.max(e.abs()));
            assert!(err <= 1e-12, "{err}");
        }
    }

    fn image_cfg() -> NetConfig {
        let mut c = cfg(NetInit::RandomHead);
        c.encoder = Some(EncoderConfig { input_dim: 10, hidden: 6, tokens: 4, token_dim: 7, seed: 5 });
        c
    }

    #[test]
    fn every_tensor_receives_gradient() {
        for (c, ctx) in [(cfg(NetInit::RandomHead), 28), (image_cfg(), 10)] {
            let net = VectorFieldNet::new(c).unwrap();
            let mut rng = SeedScheme::new(3).rng("t", 0);
            let a = standard_normal(4, 3, &mut rng);
            let s = FlowSample::draw(&a, SignConvention::default(), &mut rng);
            let mut o = obs(&mut rng);
            o.context.truncate(ctx);
            let (_, g) = net.loss_and_grad(&s, &o).unwrap();
            for (name, g) in net.names().iter().zip(&g) {
                assert!(g.iter().any(|e| *e != 0.0), "{name}");
            }
        }
    }

    #[test]
    fn embedded_encoder_matches_standalone() {
        let mut net = VectorFieldNet::new(image_cfg()).unwrap();
        let enc = ContextEncoder::random(EncoderConfig { seed: 9, ..image_cfg().encoder.unwrap() });
        assert_ne!(net.encoder().unwrap(), enc);
        net.set_encoder(&enc).unwrap();
        assert_eq!(net.encoder().unwrap().params, enc.params);
        assert_eq!(&net.names()[..4], &ENCODER_PARAM_NAMES);
        let wrong = ContextEncoder::random(EncoderConfig { input_dim: 11, ..enc.cfg.clone() });
        assert!(net.set_encoder(&wrong).is_err());
        assert!(VectorFieldNet::new(cfg(NetInit::ZeroHead)).unwrap().set_encoder(&enc).is_err());
        let mut bad = image_cfg();
        bad.ctx_dim = 3;
        assert!(bad.validate().is_err());
    }
}
