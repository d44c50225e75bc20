//! Spatial-reasoning QA over 3D scene graphs.
//!
//! Answers are computed from object box centers and extents in meters.
//! Relative directions are judged on the floor plane (x, y); with `forward`
//! the unit vector from the standing object to the facing object, the query
//! is `front` within ±45°, `back` beyond ±135°, otherwise `left` (counter
//! clockwise) or `right`. Boundary angles go to front/back.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::seed::{SeedScheme, StreamRng};
use crate::par;

pub const SPATIAL_SCHEMA: &str = "spatial/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("object {0} lies outside the room")]
    ObjectOutsideRoom(String),
    #[error("unknown object id {0}")]
    UnknownId(String),
    #[error("duplicate object id {0}")]
    DuplicateId(String),
    #[error("object {0} has a non-positive or non-finite extent")]
    InvalidObject(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("need at least {need} objects, scene has {have}")]
    NotEnoughObjects { need: usize, have: usize },
    #[error("question needs distinct objects")]
    RepeatedId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub category: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: [f64; 3],
    pub center: [f64; 3],
}

impl Room {
    fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.dims[i] / 2.0)
    }
}

/// On-disk scene annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub room: Room,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub scene_id: String,
    pub room: Room,
    pub objects: Vec<SceneObject>,
    pub category_counts: BTreeMap<String, usize>,
}

impl SceneGraph {
    pub fn object(&self, id: &str) -> Result<&SceneObject, SpatialError> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| SpatialError::UnknownId(id.to_string()))
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord { scene_id: self.scene_id.clone(), room: self.room, objects: self.objects.clone() }
    }
}

pub fn build_scene_graph(
    scene_id: &str,
    room: Room,
    objects: Vec<SceneObject>,
) -> Result<SceneGraph, SpatialError> {
    if room.dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
        return Err(SpatialError::InvalidObject("room".into()));
    }
    let mut ids = HashSet::new();
    let mut category_counts = BTreeMap::new();
    for o in &objects {
        if o.size.iter().chain(&o.center).any(|v| !v.is_finite()) || o.size.iter().any(|s| *s <= 0.0) {
            return Err(SpatialError::InvalidObject(o.id.clone()));
        }
        if !ids.insert(o.id.as_str()) {
            return Err(SpatialError::DuplicateId(o.id.clone()));
        }
        if !room.contains(&o.center) {
            return Err(SpatialError::ObjectOutsideRoom(o.id.clone()));
        }
        *category_counts.entry(o.category.clone()).or_insert(0) += 1;
    }
    Ok(SceneGraph { scene_id: scene_id.to_string(), room, objects, category_counts })
}

impl TryFrom<SceneRecord> for SceneGraph {
    type Error = SpatialError;

    fn try_from(r: SceneRecord) -> Result<Self, Self::Error> {
        build_scene_graph(&r.scene_id, r.room, r.objects)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    Count,
    AbsDistance,
    RelDistance,
    ObjSize,
    RoomSize,
    RelDirection,
}

impl SpatialKind {
    pub const ALL: [SpatialKind; 6] = [
        SpatialKind::Count,
        SpatialKind::AbsDistance,
        SpatialKind::RelDistance,
        SpatialKind::ObjSize,
        SpatialKind::RoomSize,
        SpatialKind::RelDirection,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Front,
    Back,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Front, Direction::Back, Direction::Left, Direction::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::Back => "back",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialQA {
    pub schema: String,
    pub scene_id: String,
    pub kind: SpatialKind,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    /// Unrounded numeric answer (meters, m², or a count).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Object ids (or the category for counts) the question refers to.
    pub refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SpatialQA {
    fn new(graph: &SceneGraph, kind: SpatialKind, question: String, answer: String, refs: Vec<String>) -> Self {
        SpatialQA {
            schema: SPATIAL_SCHEMA.to_string(),
            scene_id: graph.scene_id.clone(),
            kind,
            question,
            answer,
            choices: None,
            answer_index: None,
            value: None,
            refs,
            note: None,
        }
    }
}

/// One decimal place, half away from zero.
pub fn format_1dp(v: f64) -> String {
    format!("{:.1}", (v * 10.0).round() / 10.0)
}

fn center_distance(a: &SceneObject, b: &SceneObject) -> f64 {
    let d: f64 = (0..3).map(|i| (a.center[i] - b.center[i]).powi(2)).sum();
    d.sqrt()
}

fn plural(category: &str) -> String {
    if category.ends_with('s') || category.ends_with("sh") || category.ends_with("ch") {
        format!("{category}es")
    } else {
        format!("{category}s")
    }
}

pub fn gen_count(graph: &SceneGraph, category: &str) -> SpatialQA {
    let n = graph.category_counts.get(category).copied().unwrap_or(0);
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::Count,
        format!("How many {} are in this room?", plural(category)),
        n.to_string(),
        vec![category.to_string()],
    );
    qa.value = Some(n as f64);
    qa
}

pub fn gen_abs_distance(graph: &SceneGraph, id_a: &str, id_b: &str) -> Result<SpatialQA, SpatialError> {
    if id_a == id_b {
        return Err(SpatialError::RepeatedId);
    }
    let (a, b) = (graph.object(id_a)?, graph.object(id_b)?);
    let d = center_distance(a, b);
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::AbsDistance,
        format!(
            "Measuring between their centers, what is the distance between the {id_a} and the {id_b} (in meters)?"
        ),
        format_1dp(d),
        vec![id_a.to_string(), id_b.to_string()],
    );
    qa.value = Some(d);
    Ok(qa)
}

/// Multiple choice: which candidate center is closest to the target center.
/// Exact ties go to the lexicographically smallest id.
pub fn gen_rel_distance(
    graph: &SceneGraph,
    target_id: &str,
    candidate_ids: &[&str],
) -> Result<SpatialQA, SpatialError> {
    if candidate_ids.len() < 2 {
        return Err(SpatialError::NotEnoughObjects { need: 2, have: candidate_ids.len() });
    }
    let target = graph.object(target_id)?;
    let mut seen = HashSet::new();
    let mut dists = Vec::with_capacity(candidate_ids.len());
    for &c in candidate_ids {
        if c == target_id || !seen.insert(c) {
            return Err(SpatialError::RepeatedId);
        }
        dists.push(center_distance(target, graph.object(c)?));
    }
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..dists.len()).filter(|&i| dists[i] == min).collect();
    let best = *tied.iter().min_by_key(|&&i| candidate_ids[i]).expect("non-empty");
    let listed = candidate_ids.join(", ");
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::RelDistance,
        format!(
            "Measuring from the center of each object, which of these objects ({listed}) is the closest to the {target_id}?"
        ),
        candidate_ids[best].to_string(),
        std::iter::once(target_id).chain(candidate_ids.iter().copied()).map(String::from).collect(),
    );
    qa.choices = Some(candidate_ids.iter().map(|s| s.to_string()).collect());
    qa.answer_index = Some(best);
    qa.value = Some(min);
    if tied.len() > 1 {
        let names: Vec<&str> = tied.iter().map(|&i| candidate_ids[i]).collect();
        qa.note = Some(format!("tie between {} broken lexicographically", names.join(", ")));
    }
    Ok(qa)
}

/// Longest box edge, answered in whole centimeters.
pub fn gen_obj_size(graph: &SceneGraph, id: &str) -> Result<SpatialQA, SpatialError> {
    let o = graph.object(id)?;
    let edge = o.size.iter().copied().fold(0.0, f64::max);
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::ObjSize,
        format!(
            "What is the length of the longest dimension (length, width, or height) of the {id}, measured in centimeters?"
        ),
        format!("{}", (edge * 100.0).round() as i64),
        vec![id.to_string()],
    );
    qa.value = Some(edge);
    Ok(qa)
}

/// Floor area `dx * dy` in square meters.
pub fn gen_room_size(graph: &SceneGraph) -> SpatialQA {
    let area = graph.room.dims[0] * graph.room.dims[1];
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::RoomSize,
        "What is the floor area of this room, in square meters?".to_string(),
        format_1dp(area),
        Vec::new(),
    );
    qa.value = Some(area);
    qa
}

pub fn relative_direction(
    standing: [f64; 2],
    facing: [f64; 2],
    query: [f64; 2],
) -> Result<Direction, SpatialError> {
    let f = [facing[0] - standing[0], facing[1] - standing[1]];
    let q = [query[0] - standing[0], query[1] - standing[1]];
    if f == [0.0, 0.0] {
        return Err(SpatialError::DegenerateGeometry("standing and facing coincide in plan".into()));
    }
    if q == [0.0, 0.0] {
        return Err(SpatialError::DegenerateGeometry("query coincides with standing point in plan".into()));
    }
    // Compare cross against dot directly; going through atan2 can put an
    // exact 45 degree case a rounding step on either side.
    let cross = f[0] * q[1] - f[1] * q[0];
    let dot = f[0] * q[0] + f[1] * q[1];
    Ok(if cross.abs() <= dot {
        Direction::Front
    } else if cross.abs() <= -dot {
        Direction::Back
    } else if cross > 0.0 {
        Direction::Left
    } else {
        Direction::Right
    })
}

pub fn gen_rel_direction(
    graph: &SceneGraph,
    standing_id: &str,
    facing_id: &str,
    query_id: &str,
) -> Result<SpatialQA, SpatialError> {
    if standing_id == facing_id || standing_id == query_id || facing_id == query_id {
        return Err(SpatialError::RepeatedId);
    }
    let plan = |o: &SceneObject| [o.center[0], o.center[1]];
    let (s, f, q) = (graph.object(standing_id)?, graph.object(facing_id)?, graph.object(query_id)?);
    let dir = relative_direction(plan(s), plan(f), plan(q))?;
    let mut qa = SpatialQA::new(
        graph,
        SpatialKind::RelDirection,
        format!(
            "If I am standing by the {standing_id} and facing the {facing_id}, is the {query_id} to my front, back, left, or right?"
        ),
        dir.to_string(),
        vec![standing_id.to_string(), facing_id.to_string(), query_id.to_string()],
    );
    qa.choices = Some(Direction::ALL.iter().map(|d| d.to_string()).collect());
    qa.answer_index = Direction::ALL.iter().position(|d| *d == dir);
    Ok(qa)
}

fn pick_ids<'a>(graph: &'a SceneGraph, n: usize, rng: &mut StreamRng) -> Vec<&'a str> {
    let ids: Vec<&str> = graph.objects.iter().map(|o| o.id.as_str()).collect();
    ids.choose_multiple(rng, n).copied().collect()
}

fn gen_kind(graph: &SceneGraph, kind: SpatialKind, rng: &mut StreamRng) -> Option<SpatialQA> {
    let n = graph.objects.len();
    match kind {
        SpatialKind::Count => {
            let cats: Vec<&String> = graph.category_counts.keys().collect();
            // Occasionally ask about an absent category.
            let cat = if cats.is_empty() || rng.random_bool(0.1) {
                ABSENT_CATEGORIES
                    .iter()
                    .find(|c| !graph.category_counts.contains_key(**c))
                    .map(|c| c.to_string())?
            } else {
                (*cats.choose(rng)?).clone()
            };
            Some(gen_count(graph, &cat))
        }
        SpatialKind::RoomSize => Some(gen_room_size(graph)),
        SpatialKind::ObjSize if n >= 1 => gen_obj_size(graph, pick_ids(graph, 1, rng)[0]).ok(),
        SpatialKind::AbsDistance if n >= 2 => {
            let ids = pick_ids(graph, 2, rng);
            gen_abs_distance(graph, ids[0], ids[1]).ok()
        }
        SpatialKind::RelDistance if n >= 3 => {
            let k = rng.random_range(2..=(n - 1).min(4));
            let mut ids = pick_ids(graph, k + 1, rng);
            ids.shuffle(rng);
            gen_rel_distance(graph, ids[0], &ids[1..]).ok()
        }
        SpatialKind::RelDirection if n >= 3 => (0..8).find_map(|_| {
            let ids = pick_ids(graph, 3, rng);
            gen_rel_direction(graph, ids[0], ids[1], ids[2]).ok()
        }),
        _ => None,
    }
}

const ABSENT_CATEGORIES: [&str; 4] = ["piano", "bathtub", "fireplace", "treadmill"];

/// `per_scene` questions cycling through the six kinds from a random offset;
/// kinds that need more objects than the scene has fall back to counts.
pub fn generate_for_scene(graph: &SceneGraph, per_scene: usize, seed: u64) -> Vec<SpatialQA> {
    let mut rng = SeedScheme::new(seed).rng(&format!("spatial/{}", graph.scene_id), 0);
    let offset = rng.random_range(0..SpatialKind::ALL.len());
    (0..per_scene)
        .filter_map(|q| {
            let kind = SpatialKind::ALL[(offset + q) % SpatialKind::ALL.len()];
            gen_kind(graph, kind, &mut rng).or_else(|| Some(gen_room_size(graph)))
        })
        .collect()
}

pub fn generate_spatial(graphs: &[SceneGraph], per_scene: usize, seed: u64, jobs: usize) -> Vec<SpatialQA> {
    par::map_ordered(graphs, jobs, |_, g| generate_for_scene(g, per_scene, seed))
        .into_iter()
        .flatten()
        .collect()
}

const SCENE_CATEGORIES: [&str; 10] =
    ["chair", "table", "sofa", "bed", "lamp", "tv", "desk", "stool", "cabinet", "plant"];

/// Random scene on a dyadic grid (room in 1/8 m steps, object centers in
/// 1/256 m steps, sizes in 1/64 m steps) so that power-of-two rescaling and
/// grid-aligned translation are exact in floating point.
pub fn random_scene(seed: u64, index: u64) -> SceneRecord {
    let mut rng = SeedScheme::new(seed).rng("random-scene", index);
    let dims = [
        rng.random_range(24..=80) as f64 / 8.0,
        rng.random_range(24..=80) as f64 / 8.0,
        rng.random_range(19..=26) as f64 / 8.0,
    ];
    let center = [
        rng.random_range(-40..=40) as f64 / 8.0,
        rng.random_range(-40..=40) as f64 / 8.0,
        dims[2] / 2.0,
    ];
    let n = rng.random_range(3..=14);
    let mut per_cat: BTreeMap<&str, usize> = BTreeMap::new();
    let objects = (0..n)
        .map(|_| {
            let cat = *SCENE_CATEGORIES.choose(&mut rng).expect("non-empty");
            let k = per_cat.entry(cat).or_insert(0);
            let id = format!("{cat}_{k}");
            *k += 1;
            let mut c = [0.0; 3];
            for i in 0..3 {
                let half = (dims[i] * 128.0) as i64;
                c[i] = center[i] + rng.random_range(-half..=half) as f64 / 256.0;
            }
            let size = [
                rng.random_range(6..=128) as f64 / 64.0,
                rng.random_range(6..=128) as f64 / 64.0,
                rng.random_range(6..=128) as f64 / 64.0,
            ];
            SceneObject { id, category: cat.to_string(), center: c, size }
        })
        .collect();
    SceneRecord { scene_id: format!("scene_{index:05}"), room: Room { dims, center }, objects }
}
