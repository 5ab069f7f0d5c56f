//! Tabletop dynamics, scripted experts, and episode machinery.

use serde::{Deserialize, Serialize};

use super::factors::{FactorRanges, FactorVector};
use crate::numcore::Rng;

pub const EPISODE_LEN: u32 = 100;
pub const ACTION_CLIP: f32 = 0.05;
pub const GRASP_RADIUS: f32 = 0.06;
pub const PUSH_CONTACT_RADIUS: f32 = 0.08;
pub const TABLE_Z: f32 = 0.02;
pub const HOVER_Z: f32 = 0.15;
pub const REACHGRASP_SUCCESS_RADIUS: f32 = 0.05;
pub const PUSH_SUCCESS_RADIUS: f32 = 0.075;
pub const PROPRIO_DIM: usize = 7;
pub const ACTION_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    ReachGrasp,
    Push,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "reachgrasp" => Some(Task::ReachGrasp),
            "push" => Some(Task::Push),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::ReachGrasp => "reachgrasp",
            Task::Push => "push",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub gripper_pos: [f32; 3],
    pub gripper_open: bool,
    pub obj_pos: [f32; 3],
    pub grasped: bool,
    pub goal_pos: [f32; 3],
    pub t: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f32; 3],
    /// 1 = close, 0 = open.
    pub gripper_cmd: bool,
}

impl Action {
    pub const ZERO: Action = Action {
        delta: [0.0; 3],
        gripper_cmd: false,
    };

    pub fn clipped(&self) -> Action {
        Action {
            delta: [
                self.delta[0].clamp(-ACTION_CLIP, ACTION_CLIP),
                self.delta[1].clamp(-ACTION_CLIP, ACTION_CLIP),
                self.delta[2].clamp(-ACTION_CLIP, ACTION_CLIP),
            ],
            gripper_cmd: self.gripper_cmd,
        }
    }

    /// Raw 4-vector as stored in demo datasets: delta xyz + gripper bit.
    pub fn as_vec(&self) -> [f32; 4] {
        [
            self.delta[0],
            self.delta[1],
            self.delta[2],
            if self.gripper_cmd { 1.0 } else { 0.0 },
        ]
    }

    pub fn from_vec(v: &[f32]) -> Action {
        Action {
            delta: [v[0], v[1], v[2]],
            gripper_cmd: v[3] > 0.5,
        }
    }
}

fn dist3(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl EnvState {
    /// Proprioceptive vector: gripper xyz + open bit + goal xyz.
    pub fn proprio(&self) -> [f32; PROPRIO_DIM] {
        [
            self.gripper_pos[0],
            self.gripper_pos[1],
            self.gripper_pos[2],
            if self.gripper_open { 1.0 } else { 0.0 },
            self.goal_pos[0],
            self.goal_pos[1],
            self.goal_pos[2],
        ]
    }

    pub fn is_success(&self, task: Task) -> bool {
        match task {
            Task::ReachGrasp => {
                self.grasped && dist3(&self.obj_pos, &self.goal_pos) <= REACHGRASP_SUCCESS_RADIUS
            }
            Task::Push => dist2(&self.obj_pos, &self.goal_pos) <= PUSH_SUCCESS_RADIUS,
        }
    }
}

/// Samples the initial episode configuration (object and goal geometry).
pub fn reset(task: Task, rng: &mut Rng) -> EnvState {
    let spread = 0.6;
    let obj = [
        rng.uniform(-spread, spread),
        rng.uniform(-spread, spread),
        TABLE_Z,
    ];
    let goal = loop {
        let g = match task {
            Task::ReachGrasp => [
                rng.uniform(-spread, spread),
                rng.uniform(-spread, spread),
                rng.uniform(0.2, 0.5),
            ],
            Task::Push => [
                rng.uniform(-spread, spread),
                rng.uniform(-spread, spread),
                TABLE_Z,
            ],
        };
        if ((g[0] - obj[0]).powi(2) + (g[1] - obj[1]).powi(2)).sqrt() > 0.25 {
            break g;
        }
    };
    EnvState {
        gripper_pos: [0.0, 0.0, 0.5],
        gripper_open: true,
        obj_pos: obj,
        grasped: false,
        goal_pos: goal,
        t: 0,
    }
}

/// One dynamics step. Deltas clip to +/-0.05 per component; grasping
/// requires a close command within the grasp radius; in Push the gripper
/// displaces the object by the contact-overlap amount.
pub fn step(state: &EnvState, action: &Action, task: Task) -> Result<EnvState, String> {
    if state.t >= EPISODE_LEN {
        return Err(format!("episode exhausted at t={}", state.t));
    }
    let a = action.clipped();
    let mut next = *state;
    for i in 0..3 {
        next.gripper_pos[i] += a.delta[i];
    }
    next.gripper_pos[0] = next.gripper_pos[0].clamp(-1.0, 1.0);
    next.gripper_pos[1] = next.gripper_pos[1].clamp(-1.0, 1.0);
    next.gripper_pos[2] = next.gripper_pos[2].clamp(0.0, 1.0);
    next.gripper_open = !a.gripper_cmd;

    match task {
        Task::ReachGrasp => {
            if a.gripper_cmd {
                if !next.grasped && dist3(&next.gripper_pos, &next.obj_pos) <= GRASP_RADIUS {
                    next.grasped = true;
                }
            } else if next.grasped {
                next.grasped = false;
                next.obj_pos[2] = TABLE_Z; // released object drops
            }
            if next.grasped {
                next.obj_pos = next.gripper_pos;
            }
        }
        Task::Push => {
            next.grasped = false;
            if next.gripper_pos[2] <= 0.1 {
                let dx = next.obj_pos[0] - next.gripper_pos[0];
                let dy = next.obj_pos[1] - next.gripper_pos[1];
                let d = (dx * dx + dy * dy).sqrt();
                if d < PUSH_CONTACT_RADIUS && d > 1e-6 {
                    let overlap = PUSH_CONTACT_RADIUS - d;
                    next.obj_pos[0] = (next.obj_pos[0] + overlap * dx / d).clamp(-1.0, 1.0);
                    next.obj_pos[1] = (next.obj_pos[1] + overlap * dy / d).clamp(-1.0, 1.0);
                }
            }
            next.obj_pos[2] = TABLE_Z;
        }
    }
    next.t += 1;
    Ok(next)
}

fn p_control(from: &[f32; 3], to: &[f32; 3]) -> [f32; 3] {
    [to[0] - from[0], to[1] - from[1], to[2] - from[2]]
}

/// Scripted expert: proportional controller (gain 1.0, then clip).
pub fn expert_action(state: &EnvState, task: Task) -> Action {
    match task {
        Task::ReachGrasp => {
            if state.grasped {
                // phase 3: carry to goal
                Action {
                    delta: p_control(&state.gripper_pos, &state.goal_pos),
                    gripper_cmd: true,
                }
            } else if dist2(&state.gripper_pos, &state.obj_pos) > 0.02 {
                // phase 1: move above the object at hover height
                let target = [state.obj_pos[0], state.obj_pos[1], HOVER_Z];
                Action {
                    delta: p_control(&state.gripper_pos, &target),
                    gripper_cmd: false,
                }
            } else {
                // phase 2: descend and close within reach
                let close = dist3(&state.gripper_pos, &state.obj_pos) <= GRASP_RADIUS - 0.01;
                Action {
                    delta: p_control(&state.gripper_pos, &state.obj_pos),
                    gripper_cmd: close,
                }
            }
        }
        Task::Push => {
            let dx = state.goal_pos[0] - state.obj_pos[0];
            let dy = state.goal_pos[1] - state.obj_pos[1];
            let d = (dx * dx + dy * dy).sqrt();
            if d <= PUSH_SUCCESS_RADIUS * 0.8 {
                return Action::ZERO;
            }
            let (ux, uy) = (dx / d, dy / d);
            // stand-off point behind the object, opposite the goal
            let standoff = 0.10;
            let behind = [
                state.obj_pos[0] - ux * standoff,
                state.obj_pos[1] - uy * standoff,
                0.05,
            ];
            let at_behind = dist2(&state.gripper_pos, &behind) < 0.03 && state.gripper_pos[2] < 0.08;
            if at_behind || pushing_alignment(state, ux, uy) {
                // track a point behind the object on the goal line: staying on
                // that line corrects lateral error while the contact overlap
                // carries the object forward
                let target = [
                    state.obj_pos[0] - ux * 0.03,
                    state.obj_pos[1] - uy * 0.03,
                    0.05,
                ];
                Action {
                    delta: p_control(&state.gripper_pos, &target),
                    gripper_cmd: false,
                }
            } else {
                let via = approach_via(state, &behind);
                Action {
                    delta: p_control(&state.gripper_pos, &via),
                    gripper_cmd: false,
                }
            }
        }
    }
}

/// True when the gripper already sits behind the object relative to the
/// goal direction and close enough to keep pushing.
fn pushing_alignment(state: &EnvState, ux: f32, uy: f32) -> bool {
    let rx = state.gripper_pos[0] - state.obj_pos[0];
    let ry = state.gripper_pos[1] - state.obj_pos[1];
    let along = rx * ux + ry * uy;
    let ortho = (rx * -uy + ry * ux).abs();
    along < 0.0 && along > -0.15 && ortho < 0.05 && state.gripper_pos[2] < 0.08
}

/// Detours over the object when the straight line to the stand-off point
/// would plow through it.
fn approach_via(state: &EnvState, behind: &[f32; 3]) -> [f32; 3] {
    let d_obj = dist2(&state.gripper_pos, &state.obj_pos);
    let d_behind = dist2(&state.gripper_pos, behind);
    if state.gripper_pos[2] < 0.12 && d_obj < PUSH_CONTACT_RADIUS && d_behind > 0.04 {
        // low and about to collide en route: rise above the scene first
        [state.gripper_pos[0], state.gripper_pos[1], 0.2]
    } else if state.gripper_pos[2] > 0.12 && d_behind > 0.03 {
        [behind[0], behind[1], 0.2]
    } else {
        *behind
    }
}

/// Runs the scripted expert on a fresh episode; returns the trajectory and
/// whether it reached success.
pub fn run_expert_episode(
    task: Task,
    rng: &mut Rng,
) -> (Vec<(EnvState, Action)>, EnvState, bool) {
    let mut state = reset(task, rng);
    let mut traj = Vec::new();
    for _ in 0..EPISODE_LEN {
        if state.is_success(task) {
            break;
        }
        let action = expert_action(&state, task).clipped();
        let next = step(&state, &action, task).expect("episode length respected");
        traj.push((state, action));
        state = next;
    }
    let ok = state.is_success(task);
    (traj, state, ok)
}

/// Visual factors synchronized with the live environment state: the object
/// square tracks the physical object position.
pub fn factors_for_state(visual: &FactorVector, state: &EnvState) -> FactorVector {
    let mut f = *visual;
    f.obj_x = state.obj_pos[0].clamp(-1.0, 1.0);
    f.obj_y = state.obj_pos[1].clamp(-1.0, 1.0);
    f
}

/// Default factor ranges used when generating datasets and metric samples.
pub fn default_ranges() -> FactorRanges {
    FactorRanges::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_state() -> EnvState {
        EnvState {
            gripper_pos: [0.1, -0.2, 0.3],
            gripper_open: true,
            obj_pos: [0.4, 0.4, TABLE_Z],
            grasped: false,
            goal_pos: [-0.5, 0.1, 0.3],
            t: 5,
        }
    }

    #[test]
    fn zero_action_only_advances_time() {
        let s = base_state();
        let n = step(&s, &Action::ZERO, Task::ReachGrasp).unwrap();
        assert_eq!(n.gripper_pos, s.gripper_pos);
        assert_eq!(n.obj_pos, s.obj_pos);
        assert_eq!(n.t, s.t + 1);
    }

    #[test]
    fn grasp_toggles_at_threshold_interior() {
        let mut s = base_state();
        s.gripper_pos = s.obj_pos;
        let a = Action {
            delta: [0.0; 3],
            gripper_cmd: true,
        };
        let n = step(&s, &a, Task::ReachGrasp).unwrap();
        assert!(n.grasped);
        assert_eq!(n.obj_pos, n.gripper_pos);
    }

    #[test]
    fn push_displacement_matches_interval_overlap_oracle() {
        // Gripper approaches from -x; 1-D overlap oracle:
        // displacement = contact_radius - |dx| along +x.
        let mut s = base_state();
        s.obj_pos = [0.2, 0.0, TABLE_Z];
        s.gripper_pos = [0.2 - 0.05, 0.0, 0.05];
        let n = step(&s, &Action::ZERO, Task::Push).unwrap();
        let expected_dx = PUSH_CONTACT_RADIUS - 0.05;
        assert!((n.obj_pos[0] - (0.2 + expected_dx)).abs() < 1e-6);
        assert!((n.obj_pos[1] - 0.0).abs() < 1e-6);
    }

    #[test]
    fn exhausted_episode_rejected() {
        let mut s = base_state();
        s.t = EPISODE_LEN;
        assert!(step(&s, &Action::ZERO, Task::ReachGrasp).is_err());
    }

    #[test]
    fn expert_is_quiet_when_object_at_goal() {
        let mut s = base_state();
        s.grasped = true;
        s.gripper_pos = s.goal_pos;
        s.obj_pos = s.goal_pos;
        let a = expert_action(&s, Task::ReachGrasp);
        let norm = (a.delta[0].powi(2) + a.delta[1].powi(2) + a.delta[2].powi(2)).sqrt();
        assert!(norm <= 1e-6);
    }

    #[test]
    fn expert_phase1_matches_controller_replay_oracle() {
        let mut s = base_state();
        s.gripper_pos = [0.0, 0.0, 0.5];
        s.obj_pos = [0.2, 0.0, TABLE_Z];
        s.grasped = false;
        let a = expert_action(&s, Task::ReachGrasp).clipped();
        // oracle: clip(1.0 * (0.2-0, 0-0, hover-0.5))
        let want = [
            (0.2f32).clamp(-ACTION_CLIP, ACTION_CLIP),
            0.0,
            (HOVER_Z - 0.5f32).clamp(-ACTION_CLIP, ACTION_CLIP),
        ];
        assert_eq!(a.delta, want);
        assert!(!a.gripper_cmd);
    }

    #[test]
    fn expert_succeeds_on_500_seeded_episodes_both_tasks() {
        for task in [Task::ReachGrasp, Task::Push] {
            let root = Rng::new(12345);
            let mut failures = 0;
            for ep in 0..500u64 {
                let mut rng = root.derive(ep);
                let (_, _, ok) = run_expert_episode(task, &mut rng);
                if !ok {
                    failures += 1;
                }
            }
            assert_eq!(failures, 0, "expert failed {failures}/500 on {task:?}");
        }
    }
}
