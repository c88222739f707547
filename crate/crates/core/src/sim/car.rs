use super::track::{Point, Track};
use crate::error::{invalid, Error, Result};
use std::f64::consts::PI;

pub const NUM_ACTIONS: usize = 9;
pub const V_MAX: f64 = 20.0;
pub const STEER_RATE: f64 = 0.25;
pub const ACCEL: f64 = 4.0;
pub const BRAKE: f64 = 6.0;
pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_MAX_STEPS: u32 = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Steer {
    Straight,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Longitudinal {
    Accelerate,
    Brake,
    Coast,
}

/// One of the nine discrete driving actions, indexed in the order
/// straight/left/right × accelerate/brake/coast:
///
/// | index | action |
/// |---|---|
/// | 0 | straight + accelerate |
/// | 1 | left + accelerate |
/// | 2 | right + accelerate |
/// | 3 | straight + brake |
/// | 4 | left + brake |
/// | 5 | right + brake |
/// | 6 | straight |
/// | 7 | left |
/// | 8 | right |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action(u8);

impl Action {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_ACTIONS {
            return invalid(format!("action {index} out of range 0..{NUM_ACTIONS}"));
        }
        Ok(Action(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS as u8).map(Action)
    }

    pub fn steer(self) -> Steer {
        match self.0 % 3 {
            0 => Steer::Straight,
            1 => Steer::Left,
            _ => Steer::Right,
        }
    }

    pub fn longitudinal(self) -> Longitudinal {
        match self.0 / 3 {
            0 => Longitudinal::Accelerate,
            1 => Longitudinal::Brake,
            _ => Longitudinal::Coast,
        }
    }

    /// Heading rate in rad/s; left is counter-clockwise.
    pub fn steer_rate(self) -> f64 {
        match self.steer() {
            Steer::Straight => 0.0,
            Steer::Left => STEER_RATE,
            Steer::Right => -STEER_RATE,
        }
    }

    /// Signed speed change rate in m/s².
    pub fn accel(self) -> f64 {
        match self.longitudinal() {
            Longitudinal::Accelerate => ACCEL,
            Longitudinal::Brake => -BRAKE,
            Longitudinal::Coast => 0.0,
        }
    }
}

/// Reward constants: `(v·cos α − dist)·beta` on the road, `gamma` on collision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: 0.006,
            gamma: -0.025,
        }
    }
}

impl RewardConfig {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0) || !(gamma < 0.0) {
            return invalid(format!("reward needs beta > 0 and gamma < 0, got {beta}, {gamma}"));
        }
        Ok(Self { beta, gamma })
    }

    pub fn reward(&self, speed: f64, alpha: f64, dist_center: f64, collided: bool) -> f64 {
        if collided {
            self.gamma
        } else {
            (speed * alpha.cos() - dist_center) * self.beta
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarState {
    pub position: Point,
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    /// Heading relative to the track tangent, wrapped to (−π, π].
    pub alpha: f64,
    /// Unsigned distance to the centerline.
    pub dist_center: f64,
    pub collided: bool,
    /// Arc length of the nearest centerline point.
    pub arc: f64,
    pub steps: u32,
}

impl CarState {
    /// Builds a state at `position`/`heading`, deriving the track-relative
    /// quantities.
    pub fn at(track: &Track, position: Point, heading: f64, speed: f64, steps: u32) -> Self {
        let proj = track.project(position);
        Self {
            position,
            heading,
            speed,
            alpha: wrap_angle(heading - proj.tangent),
            dist_center: proj.dist,
            collided: proj.dist > track.half_width,
            arc: proj.arc,
            steps,
        }
    }
}

/// Wraps into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Simulation constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub max_steps: u32,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            max_steps: DEFAULT_MAX_STEPS,
            reward: RewardConfig::default(),
        }
    }
}

/// Spawns at the start of the centerline heading along it, at rest.
///
/// The seed only feeds style noise elsewhere; the spawn itself is fixed.
pub fn reset(track: &Track, _rng_seed: u64) -> CarState {
    reset_at(track, 0.0)
}

/// Spawns on the centerline at arc length `arc`, at rest.
pub fn reset_at(track: &Track, arc: f64) -> CarState {
    let (position, heading) = track.at_arc(arc);
    CarState::at(track, position, heading, 0.0, 0)
}

/// Advances one control period.
pub fn step(track: &Track, state: &CarState, action: usize, cfg: &SimConfig) -> Result<(CarState, f64, bool)> {
    let action = Action::new(action)?;
    if !(cfg.dt > 0.0) {
        return invalid(format!("dt must be positive, got {}", cfg.dt));
    }
    let heading = state.heading + action.steer_rate() * cfg.dt;
    let position = [
        state.position[0] + state.speed * heading.cos() * cfg.dt,
        state.position[1] + state.speed * heading.sin() * cfg.dt,
    ];
    let speed = (state.speed + action.accel() * cfg.dt).clamp(0.0, V_MAX);
    let next = CarState::at(track, position, heading, speed, state.steps + 1);
    if !next.position[0].is_finite() || !next.position[1].is_finite() {
        return Err(Error::NonFinite("car position".into()));
    }
    let reward = cfg
        .reward
        .reward(next.speed, next.alpha, next.dist_center, next.collided);
    let done = next.collided || next.steps >= cfg.max_steps;
    Ok((next, reward, done))
}
