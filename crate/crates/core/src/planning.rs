//! Planning trajectories over a macro-action version of the simulator.
//!
//! An agent picks `move_to(entity)`, `grasp()` or `release()`; the
//! environment executes each with low-level simulator steps and reports a
//! templated observation. Only successful trajectories become
//! `Reasoning-step-k: … Action: …` samples.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{render_markup, Geometry};
use crate::io::seed::{SeedScheme, StreamRng};
use crate::par;
use crate::sim::annotate::workspace_point;
use crate::sim::expert::{display_name, subgoal};
use crate::sim::{dist, step, Goal, SimAction, SimState, Subgoal, Task, TaskConfig, TaskKind, MAX_DELTA};

pub const TRAJECTORY_SCHEMA: &str = "trajectory/1";
pub const PLANNING_SCHEMA: &str = "planning/1";
pub const DEFAULT_MAX_STEPS: usize = 8;
/// Low-level step budget of one `move_to`.
const MOVE_BUDGET: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("action {0:?} is not allowed for this task")]
    UnsupportedAction(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("refusing to convert a failed trajectory into samples")]
    RejectedFailedTrajectory,
    #[error("cannot parse planning text at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown agent {0:?} (expected expert or random)")]
    UnknownAgent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCall {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
}

impl ActionCall {
    pub fn move_to(entity: &str) -> Self {
        Self { name: "move_to".into(), arg: Some(entity.to_string()) }
    }

    pub fn grasp() -> Self {
        Self { name: "grasp".into(), arg: None }
    }

    pub fn release() -> Self {
        Self { name: "release".into(), arg: None }
    }
}

impl fmt::Display for ActionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.arg.as_deref().unwrap_or(""))
    }
}

impl FromStr for ActionCall {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let open = s.find('(').ok_or_else(|| format!("missing '(' in {s:?}"))?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| format!("missing ')' in {s:?}"))?;
        let name = &s[..open];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("bad action name {name:?}"));
        }
        Ok(Self { name: name.to_string(), arg: (!inner.is_empty()).then(|| inner.to_string()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub instruction: String,
    pub allowed_actions: Vec<String>,
    pub goal: Goal,
    pub max_steps: usize,
}

impl TaskSpec {
    pub fn from_task(task: &Task, max_steps: usize) -> Self {
        let allowed: &[&str] = match task.kind {
            TaskKind::Reach => &["move_to"],
            _ => &["move_to", "grasp", "release"],
        };
        Self {
            kind: task.kind,
            instruction: task.instruction.clone(),
            allowed_actions: allowed.iter().map(|s| s.to_string()).collect(),
            goal: task.goal,
            max_steps: max_steps.max(1),
        }
    }

    pub fn task(&self) -> Task {
        Task { kind: self.kind, instruction: self.instruction.clone(), goal: self.goal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: ActionCall,
    pub observation_summary: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema: String,
    pub episode_index: usize,
    pub task: TaskSpec,
    pub steps: Vec<Step>,
    pub final_success: bool,
}

/// Macro-action wrapper around one simulator episode.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub state: SimState,
    pub cfg: TaskConfig,
}

impl ToyEnv {
    pub fn entity_names(&self) -> Vec<String> {
        self.state
            .objects
            .iter()
            .map(|o| display_name(&o.id))
            .chain(self.state.targets.iter().map(|t| display_name(&t.id)))
            .collect()
    }

    fn entity_pos(&self, name: &str) -> Option<[f64; 2]> {
        self.state
            .objects
            .iter()
            .map(|o| (&o.id, o.pos))
            .chain(self.state.targets.iter().map(|t| (&t.id, t.pos)))
            .find(|(id, _)| display_name(id) == name)
            .map(|(_, p)| p)
    }

    pub fn summary(&self) -> String {
        let s = &self.state;
        let holding = match s.held_object() {
            Some(i) => format!("holding the {}", display_name(&s.objects[i].id)),
            None => "holding nothing".to_string(),
        };
        format!(
            "gripper at {}, {}, {holding}",
            render_markup(&Geometry::Point(workspace_point(s.gripper))),
            if s.grip_closed { "closed" } else { "open" }
        )
    }

    /// Execute one macro action; returns whether it had its intended effect.
    pub fn execute(&mut self, spec: &TaskSpec, a: &ActionCall) -> Result<bool, PlanningError> {
        if !spec.allowed_actions.contains(&a.name) {
            return Err(PlanningError::UnsupportedAction(a.to_string()));
        }
        match (a.name.as_str(), a.arg.as_deref()) {
            ("move_to", Some(name)) => {
                let goal = self.entity_pos(name).ok_or_else(|| PlanningError::UnknownEntity(name.to_string()))?;
                for _ in 0..MOVE_BUDGET {
                    let (ex, ey) = (goal[0] - self.state.gripper[0], goal[1] - self.state.gripper[1]);
                    if ex == 0.0 && ey == 0.0 {
                        break;
                    }
                    let k = (ex.abs().max(ey.abs()) / MAX_DELTA).max(1.0);
                    self.state = step(&self.state, &SimAction::new(ex / k, ey / k, 0.0));
                }
                Ok(dist(self.state.gripper, goal) <= self.cfg.grasp_tolerance)
            }
            ("grasp", None) => {
                self.state = step(&self.state, &SimAction::new(0.0, 0.0, 1.0));
                Ok(self.state.held_object().is_some())
            }
            ("release", None) => {
                let had = self.state.held_object().is_some();
                self.state = step(&self.state, &SimAction::new(0.0, 0.0, -1.0));
                Ok(had && !self.state.grip_closed)
            }
            _ => Err(PlanningError::UnsupportedAction(a.to_string())),
        }
    }
}

pub trait Agent: Sync {
    fn next_action(&self, env: &ToyEnv, spec: &TaskSpec, rng: &mut StreamRng) -> ActionCall;
}

/// Follows the scripted subgoal sequence.
pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn next_action(&self, env: &ToyEnv, spec: &TaskSpec, _rng: &mut StreamRng) -> ActionCall {
        match subgoal(&env.state, &spec.task(), &env.cfg) {
            Subgoal::MoveTo { name, .. } => ActionCall::move_to(&name),
            Subgoal::Grasp { .. } => ActionCall::grasp(),
            Subgoal::Release { .. } | Subgoal::OpenGripper | Subgoal::Done => ActionCall::release(),
        }
    }
}

/// With probability `epsilon` a uniformly random allowed action (and
/// random entity), otherwise the expert's choice.
pub struct EpsilonRandomAgent {
    pub epsilon: f64,
}

impl Agent for EpsilonRandomAgent {
    fn next_action(&self, env: &ToyEnv, spec: &TaskSpec, rng: &mut StreamRng) -> ActionCall {
        if !rng.random_bool(self.epsilon.clamp(0.0, 1.0)) {
            return ExpertAgent.next_action(env, spec, rng);
        }
        let name = spec.allowed_actions.choose(rng).expect("allowed_actions is non-empty");
        match name.as_str() {
            "move_to" => {
                let names = env.entity_names();
                ActionCall::move_to(names.choose(rng).map(String::as_str).unwrap_or("gripper"))
            }
            other => ActionCall { name: other.to_string(), arg: None },
        }
    }
}

/// Roll out until the goal holds or `max_steps` actions have run.
pub fn rollout(
    env: &mut ToyEnv,
    agent: &dyn Agent,
    spec: &TaskSpec,
    episode_index: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory, PlanningError> {
    let task = spec.task();
    let mut steps = Vec::new();
    while steps.len() < spec.max_steps && !task.success(&env.state) {
        let action = agent.next_action(env, spec, rng);
        let success = env.execute(spec, &action)?;
        steps.push(Step { action, observation_summary: env.summary(), success });
    }
    Ok(Trajectory {
        schema: TRAJECTORY_SCHEMA.to_string(),
        episode_index,
        task: spec.clone(),
        steps,
        final_success: task.success(&env.state),
    })
}

/// Exactly the successful trajectories, in order.
pub fn filter_successful(trajectories: Vec<Trajectory>) -> Vec<Trajectory> {
    trajectories.into_iter().filter(|t| t.final_success).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSample {
    pub schema: String,
    pub episode_index: usize,
    pub step_index: usize,
    pub prompt: String,
    pub response: String,
}

fn reason(a: &ActionCall) -> String {
    match (a.name.as_str(), a.arg.as_deref()) {
        ("move_to", Some(e)) => format!("the gripper should go to the {e} next"),
        ("grasp", _) => "the gripper is over the object and should close on it".to_string(),
        ("release", _) => "the gripper should open to let go".to_string(),
        _ => format!("the next action is {}", a.name),
    }
}

const ACTION_TAG: &str = " Action: ";
const OBS_TAG: &str = " Observation: ";
const RESULT_TAG: &str = " Result: ";

/// `Reasoning-step-k: <reason>. Action: <call>. Observation: <summary>.
/// Result: success|failure.` with `k` starting at 1.
pub fn render_step(k: usize, s: &Step) -> String {
    format!(
        "Reasoning-step-{k}: {}.{ACTION_TAG}{}.{OBS_TAG}{}.{RESULT_TAG}{}.",
        reason(&s.action),
        s.action,
        s.observation_summary,
        if s.success { "success" } else { "failure" }
    )
}

pub fn parse_step(line: &str, expected_k: usize) -> Result<Step, String> {
    let prefix = format!("Reasoning-step-{expected_k}: ");
    let rest = line.strip_prefix(&prefix).ok_or_else(|| format!("expected {prefix:?}"))?;
    let a = rest.find(ACTION_TAG).ok_or("missing Action")?;
    let after_a = &rest[a + ACTION_TAG.len()..];
    let o = after_a.find(OBS_TAG).ok_or("missing Observation")?;
    let action = after_a[..o].strip_suffix('.').ok_or("action must end with '.'")?.parse::<ActionCall>()?;
    let after_o = &after_a[o + OBS_TAG.len()..];
    let r = after_o.rfind(RESULT_TAG).ok_or("missing Result")?;
    let observation_summary = after_o[..r].strip_suffix('.').ok_or("observation must end with '.'")?.to_string();
    let success = match &after_o[r + RESULT_TAG.len()..] {
        "success." => true,
        "failure." => false,
        other => return Err(format!("bad result {other:?}")),
    };
    Ok(Step { action, observation_summary, success })
}

pub fn prompt(spec: &TaskSpec) -> String {
    format!(
        "Task: {}. Allowed actions: {}. You need to output the reasoning process and an action.",
        spec.instruction,
        spec.allowed_actions.join(", ")
    )
}

/// One sample per step of a successful trajectory.
pub fn to_planning_samples(t: &Trajectory) -> Result<Vec<PlanningSample>, PlanningError> {
    if !t.final_success {
        return Err(PlanningError::RejectedFailedTrajectory);
    }
    let p = prompt(&t.task);
    Ok(t.steps
        .iter()
        .enumerate()
        .map(|(i, s)| PlanningSample {
            schema: PLANNING_SCHEMA.to_string(),
            episode_index: t.episode_index,
            step_index: i,
            prompt: p.clone(),
            response: render_step(i + 1, s),
        })
        .collect())
}

/// Recover the step list from the newline-joined responses of one
/// trajectory.
pub fn parse_steps(text: &str) -> Result<Vec<Step>, PlanningError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_step(l, i + 1).map_err(|message| PlanningError::Parse { line: i + 1, message }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Expert,
    Random,
}

impl FromStr for AgentKind {
    type Err = PlanningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expert" => Ok(AgentKind::Expert),
            "random" => Ok(AgentKind::Random),
            other => Err(PlanningError::UnknownAgent(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanningConfig {
    pub kind: TaskKind,
    pub agent: AgentKind,
    /// Exploration rate of the random agent.
    pub epsilon: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub task_cfg: TaskConfig,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::PickPlace,
            agent: AgentKind::Expert,
            epsilon: 0.5,
            episodes: 100,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            jobs: 1,
            task_cfg: TaskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningOutput {
    /// Every rollout, failures included.
    pub trajectories: Vec<Trajectory>,
    pub samples: Vec<PlanningSample>,
}

impl PlanningOutput {
    pub fn successful(&self) -> Vec<Trajectory> {
        filter_successful(self.trajectories.clone())
    }
}

pub fn generate_planning(cfg: &PlanningConfig) -> Result<PlanningOutput, PlanningError> {
    let idx: Vec<usize> = (0..cfg.episodes).collect();
    let agent: Box<dyn Agent> = match cfg.agent {
        AgentKind::Expert => Box::new(ExpertAgent),
        AgentKind::Random => Box::new(EpsilonRandomAgent { epsilon: cfg.epsilon }),
    };
    let scheme = SeedScheme::new(cfg.seed);
    let trajectories = par::map_ordered(&idx, cfg.jobs, |_, &i| {
        let mut rng = scheme.rng(&format!("planning/{}", cfg.kind), i as u64);
        let (task, state) = Task::sample(cfg.kind, &cfg.task_cfg, &mut rng);
        let spec = TaskSpec::from_task(&task, cfg.max_steps);
        let mut env = ToyEnv { state, cfg: cfg.task_cfg.clone() };
        rollout(&mut env, agent.as_ref(), &spec, i, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mut samples = Vec::new();
    for t in trajectories.iter().filter(|t| t.final_success) {
        samples.extend(to_planning_samples(t)?);
    }
    Ok(PlanningOutput { trajectories, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Task;

    fn env(kind: TaskKind, i: u64) -> (ToyEnv, TaskSpec, StreamRng) {
        let cfg = TaskConfig::default();
        let mut rng = SeedScheme::new(3).rng("planning-test", i);
        let (task, state) = Task::sample(kind, &cfg, &mut rng);
        (ToyEnv { state, cfg }, TaskSpec::from_task(&task, DEFAULT_MAX_STEPS), rng)
    }

    #[test]
    fn goal_at_start_gives_empty_success() {
        let (mut e, spec, mut rng) = env(TaskKind::Reach, 0);
        e.state.gripper = e.state.targets[0].pos;
        let t = rollout(&mut e, &ExpertAgent, &spec, 0, &mut rng).unwrap();
        assert!(t.steps.is_empty() && t.final_success);
    }

    #[test]
    fn expert_succeeds_on_every_kind() {
        for kind in TaskKind::ALL {
            for i in 0..50 {
                let (mut e, spec, mut rng) = env(kind, i);
                let t = rollout(&mut e, &ExpertAgent, &spec, 0, &mut rng).unwrap();
                assert!(t.final_success, "{kind} {i}");
                assert_eq!(spec.task().success(&e.state), t.final_success);
                assert!(t.steps.len() <= spec.max_steps);
                assert!(t.steps.iter().all(|s| s.success));
            }
        }
    }

    struct Rogue;
    impl Agent for Rogue {
        fn next_action(&self, _: &ToyEnv, _: &TaskSpec, _: &mut StreamRng) -> ActionCall {
            ActionCall::grasp()
        }
    }

    #[test]
    fn disallowed_action_is_rejected() {
        let (mut e, spec, mut rng) = env(TaskKind::Reach, 1);
        assert_eq!(
            rollout(&mut e, &Rogue, &spec, 0, &mut rng),
            Err(PlanningError::UnsupportedAction("grasp()".into()))
        );
        let (mut e, spec, _) = env(TaskKind::PickPlace, 1);
        assert_eq!(e.execute(&spec, &ActionCall::move_to("moon")), Err(PlanningError::UnknownEntity("moon".into())));
    }

    #[test]
    fn filter_keeps_exactly_successes() {
        let cfg = PlanningConfig { agent: AgentKind::Random, epsilon: 0.8, episodes: 120, ..Default::default() };
        let out = generate_planning(&cfg).unwrap();
        let kept = out.successful();
        let oracle: Vec<&Trajectory> = out.trajectories.iter().filter(|t| t.final_success).collect();
        assert_eq!(kept.iter().collect::<Vec<_>>(), oracle);
        assert!(kept.len() < out.trajectories.len() && !kept.is_empty());
        let ok_eps: Vec<usize> = kept.iter().map(|t| t.episode_index).collect();
        assert!(out.samples.iter().all(|s| ok_eps.contains(&s.episode_index)));
        let all_fail: Vec<Trajectory> = out.trajectories.iter().filter(|t| !t.final_success).cloned().collect();
        assert!(filter_successful(all_fail).is_empty());
    }

    #[test]
    fn samples_round_trip_to_steps() {
        let out = generate_planning(&PlanningConfig { kind: TaskKind::Stack, episodes: 20, ..Default::default() }).unwrap();
        for t in &out.trajectories {
            let samples = to_planning_samples(t).unwrap();
            assert_eq!(samples.len(), t.steps.len());
            for (s, st) in samples.iter().zip(&t.steps) {
                assert!(s.response.contains(&format!("Action: {}.", st.action)));
            }
            let text: Vec<&str> = samples.iter().map(|s| s.response.as_str()).collect();
            assert_eq!(parse_steps(&text.join("\n")).unwrap(), t.steps);
        }
    }

    #[test]
    fn failed_trajectory_is_refused() {
        let (mut e, mut spec, mut rng) = env(TaskKind::PickPlace, 2);
        spec.max_steps = 1;
        let t = rollout(&mut e, &ExpertAgent, &spec, 0, &mut rng).unwrap();
        assert!(!t.final_success);
        assert_eq!(to_planning_samples(&t), Err(PlanningError::RejectedFailedTrajectory));
    }

    #[test]
    fn two_step_trajectory_gives_two_samples() {
        let steps = vec![
            Step { action: ActionCall::move_to("red block"), observation_summary: "a".into(), success: true },
            Step { action: ActionCall::grasp(), observation_summary: "b".into(), success: false },
        ];
        let (_, spec, _) = env(TaskKind::PickPlace, 0);
        let t = Trajectory { schema: TRAJECTORY_SCHEMA.into(), episode_index: 0, task: spec, steps, final_success: true };
        let s = to_planning_samples(&t).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].response, "Reasoning-step-1: the gripper should go to the red block next. Action: move_to(red block). Observation: a. Result: success.");
        assert_eq!(s[1].response.rsplit(" Action: ").next().unwrap(), "grasp(). Observation: b. Result: failure.");
    }

    #[test]
    fn generation_is_deterministic_across_jobs() {
        let cfg = PlanningConfig { agent: AgentKind::Random, episodes: 40, seed: 9, ..Default::default() };
        let a = generate_planning(&cfg).unwrap();
        let b = generate_planning(&PlanningConfig { jobs: 3, ..cfg }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn action_call_parsing() {
        assert_eq!("move_to(red block)".parse::<ActionCall>().unwrap(), ActionCall::move_to("red block"));
        assert_eq!("release()".parse::<ActionCall>().unwrap(), ActionCall::release());
        assert!("release".parse::<ActionCall>().is_err());
        assert!("Move(x)".parse::<ActionCall>().is_err());
    }
}
