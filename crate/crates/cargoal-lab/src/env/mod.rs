//! The CarGoal environment: drive a planar car to a hidden goal region.
//!
//! Tasks share the dynamics and differ only by their goal point. The goal is
//! deliberately absent from the observation; only the reward knows it.
//!
//! Dynamics are a kinematic car, Euler-integrated:
//!
//! ```text
//! speed'    = clamp(speed + accel_gain * throttle * dt - drag * speed * dt, 0, v_max)
//! heading'  = heading + (speed' / wheelbase) * tan(steer_gain * steer) * dt
//! position' = position + speed' * [cos heading', sin heading'] * dt
//! ```
//!
//! Reward shaping: `w_align * cos(heading error to goal bearing)` plus
//! `w_prog * (distance shrink)` plus a `w_goal` bonus on entering the goal
//! region. Reaching the region within `max_steps` steps is a success and
//! terminates the episode.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::rng::{rng_from_seed, uniform};
use crate::{Error, Result};

/// Observation layout: `[x, y, cos(heading), sin(heading), speed / v_max]`.
pub const OBS_DIM: usize = 5;
/// Action layout: `[steer, throttle]`, each clamped to [-1, 1].
pub const ACTION_DIM: usize = 2;

/// Arena/dynamics/reward parameters. Shared by every task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub dt: f64,
    pub v_max: f64,
    pub wheelbase: f64,
    pub steer_gain: f64,
    pub accel_gain: f64,
    pub drag: f64,
    /// The arena is the square [-half, half]^2; positions are clamped to it.
    pub arena_half_extent: f64,
    pub max_steps: u32,
    pub w_align: f64,
    pub w_prog: f64,
    pub w_goal: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_max: 3.0,
            wheelbase: 0.5,
            steer_gain: 0.6,
            accel_gain: 2.0,
            drag: 0.1,
            arena_half_extent: 10.0,
            max_steps: 1000,
            w_align: 0.05,
            w_prog: 1.0,
            w_goal: 100.0,
        }
    }
}

/// A goal specification: tasks differ only by this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub goal: [f64; 2],
    pub goal_radius: f64,
}

impl Task {
    pub fn new(task_id: impl Into<String>, goal: [f64; 2], goal_radius: f64) -> Self {
        Self {
            task_id: task_id.into(),
            goal,
            goal_radius,
        }
    }

    pub fn validate(&self, params: &EnvParams) -> Result<()> {
        let h = params.arena_half_extent;
        if !(self.goal_radius > 0.0) {
            return Err(Error::Config(format!(
                "task {}: goal_radius must be > 0",
                self.task_id
            )));
        }
        if self.goal.iter().any(|&g| !g.is_finite() || g.abs() > h) {
            return Err(Error::Config(format!(
                "task {}: goal must lie within the arena [-{h}, {h}]^2",
                self.task_id
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Full simulator state of the car.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: [f64; 2],
    /// Wrapped to (-pi, pi].
    pub heading: f64,
    pub speed: f64,
    pub step_count: u32,
}

/// What the policy sees. The goal is not part of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `[steer, throttle]`, clamped to the unit box before dynamics apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub throttle: f64,
}

impl Action {
    pub fn new(steer: f64, throttle: f64) -> Self {
        Self { steer, throttle }
    }

    pub fn clamped(&self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(-1.0, 1.0),
        }
    }

    pub fn from_vec(v: &[f64]) -> Self {
        debug_assert_eq!(v.len(), ACTION_DIM);
        Self {
            steer: v[0],
            throttle: v[1],
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.steer, self.throttle]
    }
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// The environment itself: parameters only, no mutable state. Step and reset
/// are pure functions of (state, action, task), so instances are freely
/// shared across threads.
#[derive(Clone, Debug, Default)]
pub struct CarGoal {
    pub params: EnvParams,
}

impl CarGoal {
    pub fn new(params: EnvParams) -> Self {
        Self { params }
    }

    pub fn observe(&self, state: &CarState) -> Observation {
        Observation([
            state.position[0],
            state.position[1],
            state.heading.cos(),
            state.heading.sin(),
            state.speed / self.params.v_max,
        ])
    }

    /// Places the car at the arena center with a seed-sampled heading,
    /// zero speed, zero step count. Identical seeds give identical states.
    pub fn reset(&self, _task: &Task, seed: u64) -> (CarState, Observation) {
        let mut rng = rng_from_seed(seed);
        let heading = wrap_angle(uniform(&mut rng, -PI, PI));
        let state = CarState {
            position: [0.0, 0.0],
            heading,
            speed: 0.0,
            step_count: 0,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    /// One Euler step of the kinematic car plus reward/termination logic.
    pub fn step(&self, state: &CarState, action: &Action, task: &Task) -> (CarState, StepResult) {
        let p = &self.params;
        let a = action.clamped();

        let speed = (state.speed + p.accel_gain * a.throttle * p.dt - p.drag * state.speed * p.dt)
            .clamp(0.0, p.v_max);
        let heading = wrap_angle(
            state.heading + (speed / p.wheelbase) * (p.steer_gain * a.steer).tan() * p.dt,
        );
        let h = p.arena_half_extent;
        let position = [
            (state.position[0] + speed * heading.cos() * p.dt).clamp(-h, h),
            (state.position[1] + speed * heading.sin() * p.dt).clamp(-h, h),
        ];

        let next = CarState {
            position,
            heading,
            speed,
            step_count: state.step_count + 1,
        };

        let reward = self.reward(state, &next, task);
        let success = distance(&next.position, &task.goal) < task.goal_radius;
        let done = success || next.step_count >= p.max_steps;
        let result = StepResult {
            obs: self.observe(&next),
            reward,
            done,
            success,
        };
        (next, result)
    }

    /// Shaped reward between two consecutive states:
    /// alignment + progress + terminal goal bonus.
    pub fn reward(&self, prev: &CarState, next: &CarState, task: &Task) -> f64 {
        let p = &self.params;
        let d_prev = distance(&prev.position, &task.goal);
        let d_next = distance(&next.position, &task.goal);
        let bearing = (task.goal[1] - next.position[1]).atan2(task.goal[0] - next.position[0]);
        let heading_error = wrap_angle(bearing - next.heading);
        let mut r = p.w_align * heading_error.cos() + p.w_prog * (d_prev - d_next);
        if d_next < task.goal_radius {
            r += p.w_goal;
        }
        r
    }
}

pub fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One row of a trajectory log CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    pub throttle: f64,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Writes rows as CSV with the header
/// `step,x,y,heading,speed,steer,throttle,reward,done,success`.
pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
