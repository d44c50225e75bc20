use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dist, SimObject, SimState, SimTarget};
use crate::io::config::Config;
use crate::io::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Reach,
    PickPlace,
    Stack,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Reach, TaskKind::PickPlace, TaskKind::Stack];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::PickPlace => "pick-place",
            TaskKind::Stack => "stack",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reach" => Ok(TaskKind::Reach),
            "pick-place" | "pick_place" | "pickplace" => Ok(TaskKind::PickPlace),
            "stack" => Ok(TaskKind::Stack),
            other => Err(format!("unknown task {other:?} (expected reach, pick-place, stack)")),
        }
    }
}

/// Success predicates, by index into the state's object/target lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Goal {
    /// Gripper within the target radius.
    Reach { target: usize },
    /// Object released within the target radius.
    Place { object: usize, target: usize },
    /// Top object released within the base object's radius.
    Stack { top: usize, base: usize },
}

impl Goal {
    pub fn check(&self, s: &SimState) -> bool {
        match *self {
            Goal::Reach { target } => dist(s.gripper, s.targets[target].pos) <= s.targets[target].radius,
            Goal::Place { object, target } => {
                let o = &s.objects[object];
                !o.held && dist(o.pos, s.targets[target].pos) <= s.targets[target].radius
            }
            Goal::Stack { top, base } => {
                let (t, b) = (&s.objects[top], &s.objects[base]);
                !t.held && dist(t.pos, b.pos) <= b.radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub instruction: String,
    pub goal: Goal,
}

/// Geometry and budget shared by all tasks. Loadable from a `key = value`
/// file; unknown keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub object_radius: f64,
    pub target_radius: f64,
    /// Minimum pairwise distance between entities at reset.
    pub min_separation: f64,
    /// Entities spawn in `[margin, 1 - margin]^2`.
    pub margin: f64,
    /// Distance at which the expert grasps or releases.
    pub grasp_tolerance: f64,
    pub max_steps: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            object_radius: 0.04,
            target_radius: 0.06,
            min_separation: 0.2,
            margin: 0.1,
            grasp_tolerance: 0.01,
            max_steps: 80,
        }
    }
}

impl TaskConfig {
    pub fn from_config(c: &Config) -> Result<Self, IoError> {
        let d = Self::default();
        let cfg = Self {
            object_radius: c.get_or("object_radius", d.object_radius)?,
            target_radius: c.get_or("target_radius", d.target_radius)?,
            min_separation: c.get_or("min_separation", d.min_separation)?,
            margin: c.get_or("margin", d.margin)?,
            grasp_tolerance: c.get_or("grasp_tolerance", d.grasp_tolerance)?,
            max_steps: c.get_or("max_steps", d.max_steps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let positive = [self.object_radius, self.target_radius, self.grasp_tolerance];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(IoError::Config("radii and tolerances must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.margin) || self.min_separation < 0.0 {
            return Err(IoError::Config("margin must be in [0, 0.5), separation >= 0".into()));
        }
        if self.max_steps < 2 || !self.max_steps.is_multiple_of(2) {
            return Err(IoError::Config("max_steps must be even and >= 2".into()));
        }
        if self.grasp_tolerance >= self.object_radius.min(self.target_radius) {
            return Err(IoError::Config("grasp_tolerance must be below every radius".into()));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "object_radius = {}\ntarget_radius = {}\nmin_separation = {}\nmargin = {}\ngrasp_tolerance = {}\nmax_steps = {}\n",
            self.object_radius, self.target_radius, self.min_separation, self.margin, self.grasp_tolerance, self.max_steps
        )
    }

    fn spawn<R: Rng + ?Sized>(&self, rng: &mut R, taken: &[[f64; 2]]) -> [f64; 2] {
        let lo = self.margin;
        let hi = 1.0 - self.margin;
        let mut best = [0.5, 0.5];
        let mut best_gap = f64::NEG_INFINITY;
        for _ in 0..64 {
            let p = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            let gap = taken.iter().map(|q| dist(p, *q)).fold(f64::INFINITY, f64::min);
            if gap >= self.min_separation {
                return p;
            }
            if gap > best_gap {
                best_gap = gap;
                best = p;
            }
        }
        best
    }
}

impl Task {
    /// Draw a task instance and its initial state.
    pub fn sample<R: Rng + ?Sized>(kind: TaskKind, cfg: &TaskConfig, rng: &mut R) -> (Task, SimState) {
        let gripper = cfg.spawn(rng, &[]);
        let mut taken = vec![gripper];
        let mut place = |rng: &mut R| {
            let p = cfg.spawn(rng, &taken);
            taken.push(p);
            p
        };
        let object = |id: &str, cat: &str, pos| SimObject {
            id: id.into(),
            category: cat.into(),
            pos,
            radius: cfg.object_radius,
            held: false,
        };
        let target = |pos| SimTarget { id: "green_pad".into(), pos, radius: cfg.target_radius };
        let (instruction, goal, objects, targets) = match kind {
            TaskKind::Reach => (
                "move the gripper to the green pad".to_string(),
                Goal::Reach { target: 0 },
                vec![],
                vec![target(place(rng))],
            ),
            TaskKind::PickPlace => {
                let o = object("red_block", "red block", place(rng));
                let t = target(place(rng));
                ("put the red block on the green pad".to_string(), Goal::Place { object: 0, target: 0 }, vec![o], vec![t])
            }
            TaskKind::Stack => {
                let top = object("red_block", "red block", place(rng));
                let base = object("blue_block", "blue block", place(rng));
                (
                    "stack the red block on the blue block".to_string(),
                    Goal::Stack { top: 0, base: 1 },
                    vec![top, base],
                    vec![],
                )
            }
        };
        let state = SimState { gripper, grip_closed: false, objects, targets };
        (Task { kind, instruction, goal }, state)
    }

    pub fn success(&self, state: &SimState) -> bool {
        self.goal.check(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::seed::SeedScheme;

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TaskConfig::default();
        let parsed = TaskConfig::from_config(&Config::parse(&cfg.to_config_text()).unwrap()).unwrap();
        assert_eq!(parsed, cfg);
        let bad = Config::parse("max_steps = 7\n").unwrap();
        assert!(TaskConfig::from_config(&bad).is_err());
        let bad = Config::parse("grasp_tolerance = 0.5\n").unwrap();
        assert!(TaskConfig::from_config(&bad).is_err());
    }

    #[test]
    fn task_names_parse() {
        for k in TaskKind::ALL {
            assert_eq!(k.as_str().parse::<TaskKind>().unwrap(), k);
        }
        assert!("juggle".parse::<TaskKind>().is_err());
    }

    #[test]
    fn resets_respect_workspace_and_separation() {
        let cfg = TaskConfig::default();
        for i in 0..200 {
            for kind in TaskKind::ALL {
                let (task, s) = Task::sample(kind, &cfg, &mut SeedScheme::new(4).rng("reset", i));
                let mut pts = vec![s.gripper];
                pts.extend(s.objects.iter().map(|o| o.pos));
                pts.extend(s.targets.iter().map(|t| t.pos));
                for p in &pts {
                    assert!(p.iter().all(|v| (0.1..=0.9).contains(v)));
                }
                for a in 0..pts.len() {
                    for b in a + 1..pts.len() {
                        assert!(dist(pts[a], pts[b]) >= cfg.min_separation);
                    }
                }
                assert!(!task.success(&s));
            }
        }
    }
}
