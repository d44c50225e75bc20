//! In-domain QA annotation of simulator states: general (state + next
//! step), grounding (point/box markup on the `[0, 1000]` workspace grid), and
//! spatial (left/right from the gripper's viewpoint, or distances).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expert::{display_name, subgoal};
use super::task::{Task, TaskConfig, TaskKind};
use super::{dist, observation_features, SimState};
use crate::geometry::{NormBox, NormCoord};
use crate::grounding::{render_markup, Geometry};
use crate::io::seed::{SeedScheme, StreamRng};

pub const INDOMAIN_SCHEMA: &str = "indomain/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("unknown annotation kind {0:?} (expected general, grounding, spatial)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotateKind {
    General,
    Grounding,
    Spatial,
}

impl AnnotateKind {
    pub const ALL: [AnnotateKind; 3] = [AnnotateKind::General, AnnotateKind::Grounding, AnnotateKind::Spatial];
}

impl fmt::Display for AnnotateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotateKind::General => "general",
            AnnotateKind::Grounding => "grounding",
            AnnotateKind::Spatial => "spatial",
        })
    }
}

impl FromStr for AnnotateKind {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "general" => Ok(AnnotateKind::General),
            "grounding" => Ok(AnnotateKind::Grounding),
            "spatial" => Ok(AnnotateKind::Spatial),
            other => Err(AnnotateError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InDomainQA {
    pub schema: String,
    pub kind: AnnotateKind,
    pub task: TaskKind,
    pub question: String,
    pub answer: String,
    /// Entity names the question refers to.
    pub refs: Vec<String>,
    /// Policy feature vector of the annotated state.
    pub features: Vec<f64>,
}

/// Workspace coordinate to the `[0, 1000]` grid.
pub fn workspace_norm(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * 1000.0).round() as u32
}

pub fn workspace_point(p: [f64; 2]) -> NormCoord {
    NormCoord { x: workspace_norm(p[0]), y: workspace_norm(p[1]) }
}

struct Entity {
    name: String,
    pos: [f64; 2],
    radius: f64,
}

fn entities(state: &SimState) -> Vec<Entity> {
    state
        .objects
        .iter()
        .map(|o| Entity { name: display_name(&o.id), pos: o.pos, radius: o.radius })
        .chain(state.targets.iter().map(|t| Entity { name: display_name(&t.id), pos: t.pos, radius: t.radius }))
        .collect()
}

/// Annotate one state with a QA pair of the requested kind.
pub fn annotate(
    state: &SimState,
    task: &Task,
    cfg: &TaskConfig,
    kind: AnnotateKind,
    rng: &mut StreamRng,
) -> InDomainQA {
    let (question, answer, refs) = match kind {
        AnnotateKind::General => general(state, task, cfg),
        AnnotateKind::Grounding => grounding(state, rng),
        AnnotateKind::Spatial => spatial(state, rng),
    };
    InDomainQA {
        schema: INDOMAIN_SCHEMA.to_string(),
        kind,
        task: task.kind,
        question,
        answer,
        refs,
        features: observation_features(state),
    }
}

fn general(state: &SimState, task: &Task, cfg: &TaskConfig) -> (String, String, Vec<String>) {
    let grip = if state.grip_closed { "closed" } else { "open" };
    let holding = match state.held_object() {
        Some(i) => format!(", holding the {}", display_name(&state.objects[i].id)),
        None => String::new(),
    };
    let next = subgoal(state, task, cfg);
    (
        format!(
            "The robot is asked to {}. What is the robot's current state, and what should it do next?",
            task.instruction
        ),
        format!(
            "The gripper is at {} and is {grip}{holding}. Next: {next}.",
            render_markup(&Geometry::Point(workspace_point(state.gripper)))
        ),
        vec!["gripper".to_string()],
    )
}

fn grounding(state: &SimState, rng: &mut StreamRng) -> (String, String, Vec<String>) {
    let ents = entities(state);
    let Some(e) = ents.get(rng.random_range(0..ents.len().max(1))) else {
        let g = Geometry::Point(workspace_point(state.gripper));
        return ("Point to the gripper.".into(), render_markup(&g), vec!["gripper".into()]);
    };
    if rng.random_bool(0.5) {
        let g = Geometry::Point(workspace_point(e.pos));
        (format!("Point to the {}.", e.name), render_markup(&g), vec![e.name.clone()])
    } else {
        let g = Geometry::Box(NormBox {
            x1: workspace_norm(e.pos[0] - e.radius),
            y1: workspace_norm(e.pos[1] - e.radius),
            x2: workspace_norm(e.pos[0] + e.radius),
            y2: workspace_norm(e.pos[1] + e.radius),
        });
        (format!("Give the bounding box of the {}.", e.name), render_markup(&g), vec![e.name.clone()])
    }
}

fn spatial(state: &SimState, rng: &mut StreamRng) -> (String, String, Vec<String>) {
    let ents = entities(state);
    if ents.len() >= 2 && rng.random_bool(0.5) {
        let i = rng.random_range(0..ents.len());
        let j = (i + rng.random_range(1..ents.len())) % ents.len();
        let (q, f) = (&ents[i], &ents[j]);
        let fv = [f.pos[0] - state.gripper[0], f.pos[1] - state.gripper[1]];
        let qv = [q.pos[0] - state.gripper[0], q.pos[1] - state.gripper[1]];
        let cross = fv[0] * qv[1] - fv[1] * qv[0];
        if cross != 0.0 {
            let side = if cross > 0.0 { "left" } else { "right" };
            return (
                format!(
                    "Looking from the gripper toward the {}, is the {} on the left or on the right?",
                    f.name, q.name
                ),
                side.to_string(),
                vec![f.name.clone(), q.name.clone()],
            );
        }
    }
    // Distance between two entities, the gripper included.
    let mut named: Vec<(String, [f64; 2])> = vec![("gripper".into(), state.gripper)];
    named.extend(ents.into_iter().map(|e| (e.name, e.pos)));
    let i = rng.random_range(0..named.len());
    let j = (i + rng.random_range(1..named.len())) % named.len();
    let (a, b) = (&named[i], &named[j]);
    (
        format!("How far is the {} from the {}, in workspace units?", a.0, b.0),
        format!("{:.2}", dist(a.1, b.1)),
        vec![a.0.clone(), b.0.clone()],
    )
}

/// Annotate a state with one QA of each kind.
pub fn annotate_all(state: &SimState, task: &Task, cfg: &TaskConfig, rng: &mut StreamRng) -> Vec<InDomainQA> {
    AnnotateKind::ALL.iter().map(|k| annotate(state, task, cfg, *k, rng)).collect()
}

/// Annotate every `stride`-th state of `episodes` expert demonstrations of
/// `kind`. Each state gets its own stream, keyed by episode and step.
pub fn generate_indomain(
    kind: TaskKind,
    cfg: &TaskConfig,
    episodes: usize,
    stride: usize,
    seed: u64,
    jobs: usize,
) -> Vec<InDomainQA> {
    let scheme = SeedScheme::new(seed);
    let demos = super::collect_demos(kind, cfg, episodes, scheme.derive("indomain/demos", 0), jobs);
    let ns = format!("indomain/{kind}");
    crate::par::map_ordered(&demos, jobs, |_, d| {
        d.states
            .iter()
            .enumerate()
            .step_by(stride.max(1))
            .flat_map(|(t, state)| {
                let mut rng = scheme.rng(&ns, (d.episode_index * 1000 + t) as u64);
                annotate_all(state, &d.task, cfg, &mut rng)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}
