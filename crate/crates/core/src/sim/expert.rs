//! Scripted proportional controller used as the demonstration source.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::task::{Goal, Task, TaskConfig, TaskKind};
use super::{dist, SimAction, SimState, MAX_DELTA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Subgoal {
    MoveTo { name: String, pos: [f64; 2], carrying: bool },
    Grasp { name: String, pos: [f64; 2] },
    Release { name: String },
    OpenGripper,
    Done,
}

impl fmt::Display for Subgoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subgoal::MoveTo { name, .. } => write!(f, "move to the {name}"),
            Subgoal::Grasp { name, .. } => write!(f, "grasp the {name}"),
            Subgoal::Release { name } => write!(f, "release the {name}"),
            Subgoal::OpenGripper => f.write_str("open the gripper"),
            Subgoal::Done => f.write_str("done"),
        }
    }
}

/// Human-readable entity name, e.g. `red_block` -> `red block`.
pub fn display_name(id: &str) -> String {
    id.replace('_', " ")
}

/// The expert's current subgoal for `task` in `state`.
pub fn subgoal(state: &SimState, task: &Task, cfg: &TaskConfig) -> Subgoal {
    if task.success(state) {
        return Subgoal::Done;
    }
    let (obj, dest, dest_name) = match task.goal {
        Goal::Reach { target } => {
            let t = &state.targets[target];
            return Subgoal::MoveTo { name: display_name(&t.id), pos: t.pos, carrying: false };
        }
        Goal::Place { object, target } => {
            let t = &state.targets[target];
            (object, t.pos, display_name(&t.id))
        }
        Goal::Stack { top, base } => {
            let b = &state.objects[base];
            (top, b.pos, display_name(&b.id))
        }
    };
    let o = &state.objects[obj];
    let oname = display_name(&o.id);
    match state.held_object() {
        Some(h) if h == obj => {
            if dist(state.gripper, dest) <= cfg.grasp_tolerance {
                Subgoal::Release { name: oname }
            } else {
                Subgoal::MoveTo { name: dest_name, pos: dest, carrying: true }
            }
        }
        Some(h) => Subgoal::Release { name: display_name(&state.objects[h].id) },
        None if state.grip_closed => Subgoal::OpenGripper,
        None if dist(state.gripper, o.pos) <= cfg.grasp_tolerance => Subgoal::Grasp { name: oname, pos: o.pos },
        None => Subgoal::MoveTo { name: oname, pos: o.pos, carrying: false },
    }
}

fn move_toward(from: [f64; 2], to: [f64; 2]) -> (f64, f64) {
    let (ex, ey) = (to[0] - from[0], to[1] - from[1]);
    let scale = ex.abs().max(ey.abs()) / MAX_DELTA;
    if scale > 1.0 {
        // Division can land one ulp past the limit.
        ((ex / scale).clamp(-MAX_DELTA, MAX_DELTA), (ey / scale).clamp(-MAX_DELTA, MAX_DELTA))
    } else {
        (ex, ey)
    }
}

/// Expert action: straight-line motion toward the subgoal, at most
/// `MAX_DELTA` per axis, with the grip channel encoding the desired gripper
/// state (`+1` closed, `-1` open; always `0` for reaching).
pub fn scripted_expert(state: &SimState, task: &Task, cfg: &TaskConfig) -> SimAction {
    let manipulation = task.kind != TaskKind::Reach;
    let open = if manipulation { -1.0 } else { 0.0 };
    match subgoal(state, task, cfg) {
        Subgoal::MoveTo { pos, carrying, .. } => {
            let (dx, dy) = move_toward(state.gripper, pos);
            SimAction::new(dx, dy, if carrying { 1.0 } else { open })
        }
        Subgoal::Grasp { pos, .. } => {
            let (dx, dy) = move_toward(state.gripper, pos);
            SimAction::new(dx, dy, 1.0)
        }
        Subgoal::Release { .. } | Subgoal::OpenGripper => SimAction::new(0.0, 0.0, -1.0),
        Subgoal::Done => SimAction::new(0.0, 0.0, open),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::seed::SeedScheme;
    use crate::sim::{step, Task};

    fn run(kind: TaskKind, seed: u64, i: u64) -> (bool, usize, f64) {
        let cfg = TaskConfig::default();
        let (task, mut s) = Task::sample(kind, &cfg, &mut SeedScheme::new(seed).rng("expert", i));
        let mut max_mag: f64 = 0.0;
        for t in 0..cfg.max_steps {
            if task.success(&s) {
                return (true, t, max_mag);
            }
            let a = scripted_expert(&s, &task, &cfg);
            max_mag = max_mag.max(a.dx.abs()).max(a.dy.abs());
            s = step(&s, &a);
        }
        (task.success(&s), cfg.max_steps, max_mag)
    }

    #[test]
    fn near_zero_at_goal() {
        let cfg = TaskConfig::default();
        let (task, mut s) = Task::sample(TaskKind::Reach, &cfg, &mut SeedScheme::new(0).rng("x", 0));
        s.gripper = s.targets[0].pos;
        let a = scripted_expert(&s, &task, &cfg);
        assert_eq!(a, SimAction::ZERO);
    }

    #[test]
    fn expert_solves_every_task_within_budget() {
        for kind in TaskKind::ALL {
            for i in 0..200 {
                let (ok, steps, mag) = run(kind, 17, i);
                assert!(ok, "{kind} episode {i} failed");
                assert!(steps <= TaskConfig::default().max_steps);
                assert!(mag <= MAX_DELTA);
            }
        }
    }

    #[test]
    fn subgoal_sequence_for_pick_place() {
        let cfg = TaskConfig::default();
        let (task, mut s) = Task::sample(TaskKind::PickPlace, &cfg, &mut SeedScheme::new(1).rng("x", 0));
        let mut labels: Vec<String> = Vec::new();
        for _ in 0..cfg.max_steps {
            let g = subgoal(&s, &task, &cfg).to_string();
            if labels.last() != Some(&g) {
                labels.push(g);
            }
            s = step(&s, &scripted_expert(&s, &task, &cfg));
        }
        assert_eq!(
            labels,
            ["move to the red block", "grasp the red block", "move to the green pad", "release the red block", "done"]
        );
    }

    #[test]
    fn recovers_from_premature_close() {
        let cfg = TaskConfig::default();
        let (task, mut s) = Task::sample(TaskKind::PickPlace, &cfg, &mut SeedScheme::new(2).rng("x", 0));
        s.grip_closed = true;
        assert_eq!(subgoal(&s, &task, &cfg), Subgoal::OpenGripper);
    }
}
