//! Planar manipulation simulator.
//!
//! The workspace is the unit square. A point gripper moves by clipped
//! per-step deltas; closing the gripper grabs the nearest free object whose
//! radius covers the gripper, opening releases it. Everything here is a
//! pure function of `(state, action)`.

pub mod annotate;
pub mod eval;
pub mod expert;
pub mod task;

use serde::{Deserialize, Serialize};

pub use annotate::{annotate, generate_indomain, AnnotateKind, InDomainQA};
pub use eval::{collect_demos, eval_policy, EpisodeRecord, EvalReport, ExpertPolicy, Policy, RandomPolicy};
pub use expert::{scripted_expert, Subgoal};
pub use task::{Goal, Task, TaskConfig, TaskKind};

pub const MAX_DELTA: f64 = 0.05;
pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: String,
    pub category: String,
    pub pos: [f64; 2],
    pub radius: f64,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTarget {
    pub id: String,
    pub pos: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub gripper: [f64; 2],
    pub grip_closed: bool,
    pub objects: Vec<SimObject>,
    pub targets: Vec<SimTarget>,
}

impl SimState {
    pub fn held_object(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.held)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimAction {
    pub dx: f64,
    pub dy: f64,
    pub grip: f64,
}

impl SimAction {
    pub const ZERO: SimAction = SimAction { dx: 0.0, dy: 0.0, grip: 0.0 };

    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        Self { dx, dy, grip }
    }

    /// Motion clipped to `±MAX_DELTA` per axis, grip to `[-1, 1]`.
    /// Non-finite components become zero.
    pub fn clipped(&self) -> Self {
        let c = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        Self { dx: c(self.dx, MAX_DELTA), dy: c(self.dy, MAX_DELTA), grip: c(self.grip, 1.0) }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        [self.dx, self.dy, self.grip]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { dx: v[0], dy: v[1], grip: v[2] }
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Advance the simulator by one action.
pub fn step(state: &SimState, action: &SimAction) -> SimState {
    let a = action.clipped();
    let mut next = state.clone();
    next.gripper = [
        (state.gripper[0] + a.dx).clamp(0.0, 1.0),
        (state.gripper[1] + a.dy).clamp(0.0, 1.0),
    ];
    if a.grip > 0.0 && !state.grip_closed {
        next.grip_closed = true;
        let g = next.gripper;
        let nearest = next
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| dist(o.pos, g) <= o.radius)
            .min_by(|(_, a), (_, b)| dist(a.pos, g).total_cmp(&dist(b.pos, g)))
            .map(|(i, _)| i);
        if let Some(i) = nearest {
            next.objects[i].held = true;
        }
    } else if a.grip < 0.0 && state.grip_closed {
        next.grip_closed = false;
        for o in &mut next.objects {
            o.held = false;
        }
    }
    if let Some(i) = next.held_object() {
        next.objects[i].pos = next.gripper;
    }
    next
}

/// Fixed-length feature vector for the policy: gripper `(x, y, closed)`,
/// two object slots `(x, y, held, present)`, one target slot
/// `(x, y, present)`.
pub const FEATURE_DIM: usize = 14;

pub fn observation_features(state: &SimState) -> Vec<f64> {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    let mut f = vec![state.gripper[0], state.gripper[1], b(state.grip_closed)];
    for slot in 0..2 {
        match state.objects.get(slot) {
            Some(o) => f.extend([o.pos[0], o.pos[1], b(o.held), 1.0]),
            None => f.extend([0.0; 4]),
        }
    }
    match state.targets.first() {
        Some(t) => f.extend([t.pos[0], t.pos[1], 1.0]),
        None => f.extend([0.0; 3]),
    }
    debug_assert_eq!(f.len(), FEATURE_DIM);
    f
}

/// Robot proprioception: gripper position and closure.
pub fn robot_state(state: &SimState) -> Vec<f64> {
    vec![state.gripper[0], state.gripper[1], if state.grip_closed { 1.0 } else { 0.0 }]
}

/// Side of the rendered top-down image, in pixels.
pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
const BLOB_SIGMA: f64 = 0.05;

/// Add a Gaussian blob centered at `p` (workspace units) to one channel of
/// a channel-major image.
pub fn splat(img: &mut [f64], channel: usize, p: [f64; 2], amplitude: f64) {
    let k = 1.0 / (2.0 * BLOB_SIGMA * BLOB_SIGMA);
    for y in 0..IMAGE_SIDE {
        let cy = (y as f64 + 0.5) / IMAGE_SIDE as f64;
        for x in 0..IMAGE_SIDE {
            let cx = (x as f64 + 0.5) / IMAGE_SIDE as f64;
            let d2 = (cx - p[0]).powi(2) + (cy - p[1]).powi(2);
            img[(channel * IMAGE_SIDE + y) * IMAGE_SIDE + x] += amplitude * (-d2 * k).exp();
        }
    }
}

/// Render a feature vector (see [`observation_features`]) as a
/// `3 × 16 × 16` image: the first object in red, the second in blue, the
/// target in green and the gripper in gray (brighter when closed).
pub fn render_features(f: &[f64]) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_DIM];
    for (slot, channel) in [(3usize, 0usize), (7, 2)] {
        if f[slot + 3] > 0.0 {
            splat(&mut img, channel, [f[slot], f[slot + 1]], 1.0);
        }
    }
    if f[13] > 0.0 {
        splat(&mut img, 1, [f[11], f[12]], 1.0);
    }
    let g = if f[2] > 0.0 { 0.6 } else { 0.3 };
    for c in 0..IMAGE_CHANNELS {
        splat(&mut img, c, [f[0], f[1]], g);
    }
    img
}

pub fn observation_image(state: &SimState) -> Vec<f64> {
    render_features(&observation_features(state))
}

/// Per-entity context tokens `(x, y, flag, present, is_gripper, is_object,
/// is_target)`: gripper, two object slots, one target slot.
pub const ENTITY_TOKENS: usize = 4;
pub const ENTITY_TOKEN_DIM: usize = 7;

pub fn entity_tokens(state: &SimState) -> Vec<f64> {
    let f = observation_features(state);
    let mut t = Vec::with_capacity(ENTITY_TOKENS * ENTITY_TOKEN_DIM);
    t.extend([f[0], f[1], f[2], 1.0, 1.0, 0.0, 0.0]);
    t.extend([f[3], f[4], f[5], f[6], 0.0, 1.0, 0.0]);
    t.extend([f[7], f[8], f[9], f[10], 0.0, 1.0, 0.0]);
    t.extend([f[11], f[12], 0.0, f[13], 0.0, 0.0, 1.0]);
    t
}
