//! Demonstration collection and closed-loop policy evaluation.
//!
//! Protocol: observe, query the policy for an action chunk, execute its
//! first [`EXECUTE_ACTIONS`] actions, re-observe. Success is checked at each
//! re-observation and the episode ends on success or when the step budget
//! is spent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::expert::scripted_expert;
use super::task::{Task, TaskConfig, TaskKind};
use super::{step, SimAction, SimState, MAX_DELTA};
use crate::io::seed::{SeedScheme, StreamRng};
use crate::par;

pub const EPISODE_SCHEMA: &str = "episode/1";
pub const CHUNK_LEN: usize = 4;
pub const EXECUTE_ACTIONS: usize = 2;

/// A closed-loop controller that returns an action chunk per query.
pub trait Policy: Sync {
    fn act(&self, state: &SimState, task: &Task, rng: &mut StreamRng) -> Vec<SimAction>;
}

/// The scripted expert, chunked by rolling it forward on a copy of the state.
#[derive(Debug, Clone, Default)]
pub struct ExpertPolicy {
    pub cfg: TaskConfig,
}

impl Policy for ExpertPolicy {
    fn act(&self, state: &SimState, task: &Task, _rng: &mut StreamRng) -> Vec<SimAction> {
        let mut s = state.clone();
        (0..CHUNK_LEN)
            .map(|_| {
                let a = scripted_expert(&s, task, &self.cfg);
                s = step(&s, &a);
                a
            })
            .collect()
    }
}

/// Uniform random actions over the full action box.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _state: &SimState, _task: &Task, rng: &mut StreamRng) -> Vec<SimAction> {
        (0..CHUNK_LEN)
            .map(|_| {
                SimAction::new(
                    rng.random_range(-MAX_DELTA..=MAX_DELTA),
                    rng.random_range(-MAX_DELTA..=MAX_DELTA),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema: String,
    pub task: Task,
    pub episode_index: usize,
    pub states: Vec<SimState>,
    pub actions: Vec<SimAction>,
    pub success: bool,
    pub steps_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub queries: usize,
    pub actions_executed: usize,
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn success_indices(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.success).map(|r| r.episode_index).collect()
    }
}

/// Initial condition of evaluation episode `index`; independent of the
/// policy under test.
pub fn eval_episode_start(kind: TaskKind, cfg: &TaskConfig, seed: u64, index: usize) -> (Task, SimState) {
    let mut rng = SeedScheme::new(seed).rng(&format!("eval-reset/{kind}"), index as u64);
    Task::sample(kind, cfg, &mut rng)
}

fn run_closed_loop(
    policy: &dyn Policy,
    kind: TaskKind,
    cfg: &TaskConfig,
    seed: u64,
    index: usize,
) -> (EpisodeRecord, usize) {
    let (task, mut state) = eval_episode_start(kind, cfg, seed, index);
    let mut rng = SeedScheme::new(seed).rng(&format!("eval-policy/{kind}"), index as u64);
    let mut states = vec![state.clone()];
    let mut actions = Vec::new();
    let mut queries = 0;
    while actions.len() < cfg.max_steps && !task.success(&state) {
        let chunk = policy.act(&state, &task, &mut rng);
        assert!(chunk.len() >= EXECUTE_ACTIONS, "policy returned a chunk shorter than {EXECUTE_ACTIONS}");
        queries += 1;
        for a in &chunk[..EXECUTE_ACTIONS] {
            let a = a.clipped();
            state = step(&state, &a);
            states.push(state.clone());
            actions.push(a);
        }
    }
    let success = task.success(&state);
    let steps_used = actions.len();
    let record = EpisodeRecord {
        schema: EPISODE_SCHEMA.to_string(),
        task,
        episode_index: index,
        states,
        actions,
        success,
        steps_used,
    };
    (record, queries)
}

/// Run `episodes` closed-loop episodes of `kind`.
pub fn eval_policy(
    policy: &dyn Policy,
    kind: TaskKind,
    cfg: &TaskConfig,
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> EvalReport {
    let idx: Vec<usize> = (0..episodes).collect();
    let runs = par::map_ordered(&idx, jobs, |_, &i| run_closed_loop(policy, kind, cfg, seed, i));
    let queries = runs.iter().map(|(_, q)| q).sum();
    let records: Vec<EpisodeRecord> = runs.into_iter().map(|(r, _)| r).collect();
    let successes = records.iter().filter(|r| r.success).count();
    EvalReport {
        task: kind,
        episodes,
        successes,
        success_rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
        queries,
        actions_executed: records.iter().map(|r| r.actions.len()).sum(),
        records,
    }
}

/// Expert demonstrations, one action per step, ending at success or budget.
pub fn collect_demos(kind: TaskKind, cfg: &TaskConfig, episodes: usize, seed: u64, jobs: usize) -> Vec<EpisodeRecord> {
    let idx: Vec<usize> = (0..episodes).collect();
    par::map_ordered(&idx, jobs, |_, &i| {
        let mut rng = SeedScheme::new(seed).rng(&format!("demo-reset/{kind}"), i as u64);
        let (task, mut state) = Task::sample(kind, cfg, &mut rng);
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        while actions.len() < cfg.max_steps && !task.success(&state) {
            let a = scripted_expert(&state, &task, cfg);
            state = step(&state, &a);
            states.push(state.clone());
            actions.push(a);
        }
        EpisodeRecord {
            schema: EPISODE_SCHEMA.to_string(),
            success: task.success(&state),
            steps_used: actions.len(),
            task,
            episode_index: i,
            states,
            actions,
        }
    })
}
