//! Scripted pure-pursuit driver.

use super::car::{wrap_angle, CarState, STEER_RATE};
use super::track::Track;

/// Chases a centerline point `lookahead` meters ahead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pursuit {
    pub lookahead: f64,
    pub target_speed: f64,
    /// Heading errors below this many radians are driven straight.
    pub deadband: f64,
}

impl Default for Pursuit {
    fn default() -> Self {
        Self {
            lookahead: 12.0,
            target_speed: 12.0,
            deadband: 0.02,
        }
    }
}

impl Pursuit {
    /// Angle from the car heading to the pursuit point; positive is to the
    /// left (counter-clockwise).
    pub fn bearing(&self, track: &Track, state: &CarState) -> f64 {
        let (target, _) = track.at_arc(state.arc + self.lookahead);
        let dx = target[0] - state.position[0];
        let dy = target[1] - state.position[1];
        wrap_angle(dy.atan2(dx) - state.heading)
    }

    /// Discrete action steering toward the pursuit point and holding the
    /// target speed.
    pub fn action(&self, track: &Track, state: &CarState, dt: f64) -> usize {
        let b = self.bearing(track, state);
        let steer = if b > self.deadband.max(STEER_RATE * dt * 0.5) {
            1
        } else if b < -self.deadband.max(STEER_RATE * dt * 0.5) {
            2
        } else {
            0
        };
        let long = if state.speed < self.target_speed - 0.5 {
            0
        } else if state.speed > self.target_speed + 2.0 {
            1
        } else {
            2
        };
        long * 3 + steer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::car::{reset, step, SimConfig};
    use crate::sim::track::{make_track, TrackSpec};

    #[test]
    fn pursuit_completes_a_lap() {
        for spec in [TrackSpec::A, TrackSpec::B] {
            let t = make_track(spec);
            let cfg = SimConfig::default();
            let ctl = Pursuit::default();
            let mut s = reset(&t, 0);
            let mut travelled = 0.0;
            for _ in 0..cfg.max_steps - 1 {
                let (n, _, done) = step(&t, &s, ctl.action(&t, &s, cfg.dt), &cfg).unwrap();
                assert!(!n.collided, "{spec:?} left the road at arc {}", n.arc);
                travelled += n.speed * cfg.dt;
                s = n;
                if done {
                    break;
                }
            }
            assert!(travelled > t.length(), "{spec:?}: {travelled}");
        }
    }

    #[test]
    fn bearing_sign_is_left_positive() {
        let t = Track::stadium(400.0, 80.0, 6.0).unwrap();
        let mut s = reset(&t, 0);
        // Below the centerline of the +x straight, the target is to the left.
        s = CarState::at(&t, [s.position[0], s.position[1] - 3.0], 0.0, 5.0, 0);
        assert!(Pursuit::default().bearing(&t, &s) > 0.0);
        assert_eq!(Pursuit::default().action(&t, &s, 0.1) % 3, 1);
    }
}
