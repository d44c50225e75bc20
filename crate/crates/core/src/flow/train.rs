use serde::{Deserialize, Serialize};

use super::autodiff::Mat;
use super::matching::{FlowSample, Observation, SignConvention, DEFAULT_INTEGRATION_STEPS};
use super::net::VectorFieldNet;
use super::{check_shape, FlowError};
use crate::io::seed::{SeedScheme, StreamRng};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub integration_steps: usize,
    pub sign: SignConvention,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            integration_steps: DEFAULT_INTEGRATION_STEPS,
            sign: SignConvention::DataMinusNoise,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.integration_steps == 0 {
            return bad("batch_size and integration_steps must be positive");
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &[Mat]) -> Self {
        let zeros = || params.iter().map(|p| Mat::zeros(p.raw_dim())).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let step = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (step + wd * *p);
            });
        }
    }
}

/// One `(observation, normalized chunk)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub obs: Observation,
    pub chunk: Mat,
}

/// Stateful trainer; each call to [`Trainer::step`] draws a batch, fresh
/// `ε ~ N(0, I)` and `τ ~ U[0, 1]` per element, and takes one optimizer step.
pub struct Trainer<'d> {
    pub net: VectorFieldNet,
    pub opt: AdamW,
    pub cfg: TrainConfig,
    data: &'d [TrainExample],
    rng: StreamRng,
    pub losses: Vec<f64>,
}

impl<'d> Trainer<'d> {
    pub fn new(net: VectorFieldNet, data: &'d [TrainExample], cfg: TrainConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(FlowError::EmptyDataset);
        }
        let nc = net.config();
        for ex in data {
            check_shape((nc.horizon, nc.action_dim), ex.chunk.dim())?;
        }
        let opt = AdamW::new(&cfg, net.params());
        let rng = SeedScheme::new(cfg.seed).rng("flow-train", 0);
        Ok(Self { net, opt, cfg, data, rng, losses: Vec::new() })
    }

    pub fn steps_done(&self) -> usize {
        self.losses.len()
    }

    /// Mean batch loss before the update.
    pub fn step(&mut self) -> Result<f64, FlowError> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let i = self.rng.random_range(0..self.data.len());
            batch.push((i, FlowSample::draw(&self.data[i].chunk, self.cfg.sign, &mut self.rng)));
        }
        let data = self.data;
        let pairs: Vec<(&Observation, &FlowSample)> = batch.iter().map(|(i, s)| (&data[*i].obs, s)).collect();
        self.step_on(&pairs)
    }

    /// One optimizer step on caller-supplied samples.
    pub fn step_on(&mut self, batch: &[(&Observation, &FlowSample)]) -> Result<f64, FlowError> {
        if batch.is_empty() {
            return Err(FlowError::EmptyDataset);
        }
        let mut grads: Option<Vec<Mat>> = None;
        let mut total = 0.0;
        for (obs, sample) in batch {
            let (loss, g) = self.net.loss_and_grad(sample, obs)?;
            total += loss;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&g) {
                        *a += g;
                    }
                }
            }
        }
        let mut grads = grads.expect("non-empty batch");
        let inv = 1.0 / batch.len() as f64;
        for g in &mut grads {
            *g *= inv;
        }
        self.opt.update(self.net.params_mut(), &grads);
        let loss = total * inv;
        self.losses.push(loss);
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: VectorFieldNet,
    pub losses: Vec<f64>,
}

pub fn train(net: VectorFieldNet, data: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutput, FlowError> {
    let mut t = Trainer::new(net, data, cfg.clone())?;
    for _ in 0..cfg.steps {
        t.step()?;
    }
    Ok(TrainOutput { net: t.net, losses: t.losses })
}

/// `step,loss` CSV, one row per optimizer step (1-based).
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l:e}\n", i + 1));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::matching::standard_normal;
    use crate::flow::net::{NetConfig, NetInit};

    fn setup(init: NetInit) -> (VectorFieldNet, Vec<TrainExample>) {
        let mut c = NetConfig::new(4, 3, 3, 2, 5);
        c.init = init;
        c.d_model = 16;
        c.mlp_hidden = 16;
        c.layers = 1;
        let mut rng = SeedScheme::new(4).rng("d", 0);
        let data = (0..4)
            .map(|_| TrainExample {
                obs: Observation {
                    context: standard_normal(1, 10, &mut rng).into_raw_vec_and_offset().0,
                    state: vec![0.1, 0.2, 0.3],
                },
                chunk: standard_normal(4, 3, &mut rng).mapv(|x| x.clamp(-1.0, 1.0)),
            })
            .collect();
        (VectorFieldNet::new(c).unwrap(), data)
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (net, data) = setup(NetInit::RandomHead);
        let cfg = TrainConfig { lr: 0.0, steps: 5, batch_size: 4, ..Default::default() };
        let out = train(net.clone(), &data, &cfg).unwrap();
        assert_eq!(out.net.params(), net.params());
    }

    #[test]
    fn same_seed_same_curve() {
        let (net, data) = setup(NetInit::ZeroHead);
        let cfg = TrainConfig { lr: 1e-3, steps: 20, batch_size: 4, seed: 3, ..Default::default() };
        let a = train(net.clone(), &data, &cfg).unwrap();
        let b = train(net.clone(), &data, &cfg).unwrap();
        assert_eq!(a.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(), b.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.net, b.net);
        let c = train(net, &data, &TrainConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.losses, c.losses);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (net, _) = setup(NetInit::ZeroHead);
        assert!(matches!(train(net, &[], &TrainConfig::default()), Err(FlowError::EmptyDataset)));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig { lr: 0.01, ..Default::default() };
        let mut p = vec![Mat::from_elem((1, 2), 1.0)];
        let mut opt = AdamW::new(&cfg, &p);
        opt.update(&mut p, &[ndarray::array![[3.0, -0.5]]]);
        assert!((p[0][[0, 0]] - 0.99).abs() < 1e-9);
        assert!((p[0][[0, 1]] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let s = loss_curve_csv(&[0.5, 0.25]);
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("step,loss\n1,"));
    }
}
