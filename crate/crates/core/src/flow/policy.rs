//! Closed-loop policy wrapper and demo-to-dataset plumbing.

use ndarray::Array2;

use super::context::ContextSource;
use super::matching::{integrate, Observation, SignConvention};
use super::net::{NetConfig, VectorFieldNet};
use super::scaler::ActionScaler;
use super::train::{TrainConfig, TrainExample, Trainer};
use super::FlowError;
use crate::io::seed::StreamRng;
use crate::sim::{robot_state, EpisodeRecord, Policy, SimAction, SimState, Task, ACTION_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    pub net: VectorFieldNet,
    pub scaler: ActionScaler,
    pub context: ContextSource,
    pub sign: SignConvention,
    pub integration_steps: usize,
}

pub fn observe(context: &ContextSource, state: &SimState) -> Observation {
    Observation { context: context.encode(state), state: robot_state(state) }
}

impl FlowPolicy {
    pub fn observe(&self, state: &SimState) -> Observation {
        observe(&self.context, state)
    }

    /// Sample one chunk and map it back to simulator units.
    pub fn sample_chunk(&self, state: &SimState, rng: &mut StreamRng) -> Result<Vec<SimAction>, FlowError> {
        let obs = self.observe(state);
        let a = integrate(&self.net, &obs, self.integration_steps, self.sign, rng)?;
        Ok(a.rows()
            .into_iter()
            .map(|r| {
                let r: Vec<f64> = r.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                SimAction::from_slice(&self.scaler.denormalize(&r))
            })
            .collect())
    }
}

impl Policy for FlowPolicy {
    fn act(&self, state: &SimState, _task: &Task, rng: &mut StreamRng) -> Vec<SimAction> {
        match self.sample_chunk(state, rng) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("flow policy failed ({e}); holding still");
                vec![SimAction::ZERO; self.net.config().horizon]
            }
        }
    }
}

/// Fit the action scaler on every demo action.
pub fn fit_scaler(demos: &[EpisodeRecord]) -> Result<ActionScaler, FlowError> {
    let rows: Vec<Vec<f64>> = demos.iter().flat_map(|d| d.actions.iter().map(|a| a.to_array().to_vec())).collect();
    ActionScaler::fit(&rows)
}

/// One example per demo step: the observation at step `t` and the next
/// `horizon` normalized actions. Past the end of an episode the last
/// action is repeated.
pub fn demo_examples(
    demos: &[EpisodeRecord],
    context: &ContextSource,
    scaler: &ActionScaler,
    horizon: usize,
) -> Vec<TrainExample> {
    let mut out = Vec::new();
    for d in demos {
        let n = d.actions.len();
        for t in 0..n {
            let mut chunk = Array2::zeros((horizon, ACTION_DIM));
            for h in 0..horizon {
                let a = d.actions[(t + h).min(n - 1)].to_array();
                let row = chunk.row_mut(h).into_slice().expect("standard layout");
                scaler.normalize_into(&a, row);
            }
            out.push(TrainExample { obs: observe(context, &d.states[t]), chunk });
        }
    }
    out
}

/// Network shape matching a context source.
pub fn policy_net_config(context: &ContextSource, horizon: usize) -> NetConfig {
    let mut cfg = NetConfig::new(horizon, ACTION_DIM, 3, context.tokens(), context.token_dim());
    if let ContextSource::Encoder(e) = context {
        cfg.encoder = Some(e.cfg.clone());
    }
    cfg
}

/// Train a policy on demos, calling `on_step(step, trainer)` after every
/// optimizer step (used for rolling evaluation).
pub fn train_policy_with(
    demos: &[EpisodeRecord],
    context: ContextSource,
    net_cfg: NetConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &FlowPolicy),
) -> Result<(FlowPolicy, Vec<f64>), FlowError> {
    let scaler = fit_scaler(demos)?;
    let data = demo_examples(demos, &context, &scaler, net_cfg.horizon);
    let mut net = VectorFieldNet::new(net_cfg)?;
    if let ContextSource::Encoder(e) = &context {
        net.set_encoder(e)?;
    }
    let mut trainer = Trainer::new(net, &data, cfg.clone())?;
    let mut policy = FlowPolicy {
        net: trainer.net.clone(),
        scaler,
        context,
        sign: cfg.sign,
        integration_steps: cfg.integration_steps,
    };
    for s in 1..=cfg.steps {
        trainer.step()?;
        policy.net.params_mut().clone_from_slice(trainer.net.params());
        on_step(s, &policy);
    }
    if let Some(e) = policy.net.encoder() {
        policy.context = ContextSource::Encoder(e);
    }
    let losses = std::mem::take(&mut trainer.losses);
    Ok((policy, losses))
}

pub fn train_policy(
    demos: &[EpisodeRecord],
    context: ContextSource,
    net_cfg: NetConfig,
    cfg: &TrainConfig,
) -> Result<(FlowPolicy, Vec<f64>), FlowError> {
    train_policy_with(demos, context, net_cfg, cfg, |_, _| {})
}
