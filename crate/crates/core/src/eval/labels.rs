//! Three-way steering labels.

use crate::error::{invalid, Error, Result};
use crate::sim::car::{Action, Steer};
use std::fmt;

/// Angles at or beyond this many degrees count as turns.
pub const TURN_THRESHOLD_DEG: f64 = 10.0;

pub type Label = Steer;

pub const LABELS: [Label; 3] = [Steer::Straight, Steer::Left, Steer::Right];

pub fn label_index(l: Label) -> usize {
    match l {
        Steer::Straight => 0,
        Steer::Left => 1,
        Steer::Right => 2,
    }
}

pub fn label_name(l: Label) -> &'static str {
    match l {
        Steer::Straight => "straight",
        Steer::Left => "left",
        Steer::Right => "right",
    }
}

pub fn parse_label(s: &str) -> Result<Label> {
    LABELS
        .into_iter()
        .find(|&l| label_name(l) == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown label {s:?}")))
}

/// Negative angles steer left: `(−10, 10)` is straight, `≤ −10` left, `≥ 10` right.
pub fn map_steering_to_action(angle_deg: f64) -> Result<Label> {
    if !angle_deg.is_finite() {
        return Err(Error::NonFinite(format!("steering angle {angle_deg}")));
    }
    Ok(if angle_deg <= -TURN_THRESHOLD_DEG {
        Steer::Left
    } else if angle_deg >= TURN_THRESHOLD_DEG {
        Steer::Right
    } else {
        Steer::Straight
    })
}

/// Drops the longitudinal part of a nine-way action.
pub fn collapse_9_to_3(action: usize) -> Result<Label> {
    Ok(Action::new(action)?.steer())
}

/// Nine-way action that steers like `label` while coasting.
pub fn coast_action(label: Label) -> usize {
    6 + label_index(label)
}

/// Rows are ground truth, columns predictions, both in [`LABELS`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub counts: [[u64; 3]; 3],
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[label_index(truth)][label_index(predicted)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: Label) -> u64 {
        self.counts[label_index(truth)].iter().sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => invalid("accuracy of an empty confusion matrix"),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }
}

impl fmt::Display for Confusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>9} {:>9} {:>9}", "truth\\pred", "straight", "left", "right")?;
        for l in LABELS {
            let r = self.counts[label_index(l)];
            writeln!(f, "{:>10} {:>9} {:>9} {:>9}", label_name(l), r[0], r[1], r[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::car::{step, CarState, SimConfig};
    use crate::sim::track::Track;
    use proptest::prelude::*;

    #[test]
    fn reference_angles() {
        assert_eq!(map_steering_to_action(5.0).unwrap(), Steer::Straight);
        assert_eq!(map_steering_to_action(-15.0).unwrap(), Steer::Left);
        assert_eq!(map_steering_to_action(12.0).unwrap(), Steer::Right);
        assert_eq!(map_steering_to_action(10.0).unwrap(), Steer::Right);
        assert_eq!(map_steering_to_action(-10.0).unwrap(), Steer::Left);
        assert_eq!(map_steering_to_action(9.999).unwrap(), Steer::Straight);
        assert!(map_steering_to_action(f64::NAN).is_err());
        assert!(map_steering_to_action(f64::INFINITY).is_err());
    }

    #[test]
    fn collapse_is_total() {
        let expect = [
            Steer::Straight,
            Steer::Left,
            Steer::Right,
            Steer::Straight,
            Steer::Left,
            Steer::Right,
            Steer::Straight,
            Steer::Left,
            Steer::Right,
        ];
        for (a, e) in expect.into_iter().enumerate() {
            assert_eq!(collapse_9_to_3(a).unwrap(), e);
        }
        assert!(collapse_9_to_3(9).is_err());
        for l in LABELS {
            assert_eq!(collapse_9_to_3(coast_action(l)).unwrap(), l);
            assert_eq!(parse_label(label_name(l)).unwrap(), l);
        }
    }

    #[test]
    fn left_actions_turn_counter_clockwise() {
        let t = Track::stadium(400.0, 80.0, 6.0).unwrap();
        let s = CarState::at(&t, t.centerline[0], 0.0, 10.0, 0);
        let cfg = SimConfig::default();
        for a in 0..9 {
            let n = step(&t, &s, a, &cfg).unwrap().0;
            let turn = n.heading - s.heading;
            match collapse_9_to_3(a).unwrap() {
                Steer::Left => assert!(turn > 0.0),
                Steer::Right => assert!(turn < 0.0),
                Steer::Straight => assert_eq!(turn, 0.0),
            }
        }
    }

    #[test]
    fn confusion_accuracy_is_trace_ratio() {
        let mut c = Confusion::default();
        c.add(Steer::Left, Steer::Left);
        c.add(Steer::Left, Steer::Right);
        c.add(Steer::Straight, Steer::Straight);
        assert_eq!(c.total(), 3);
        assert_eq!(c.row_total(Steer::Left), 2);
        assert_eq!(c.accuracy().unwrap(), 2.0 / 3.0);
        assert!(Confusion::default().accuracy().is_err());
        assert!(c.to_string().contains("truth\\pred"));
    }

    proptest! {
        #[test]
        fn mapping_is_monotone(a in -720.0f64..720.0, d in 0.0f64..50.0) {
            let rank = |l: Label| match l { Steer::Left => 0, Steer::Straight => 1, Steer::Right => 2 };
            let (x, y) = (map_steering_to_action(a).unwrap(), map_steering_to_action(a + d).unwrap());
            prop_assert!(rank(x) <= rank(y));
            if x == Steer::Left && y == Steer::Right {
                prop_assert_eq!(map_steering_to_action(0.0).unwrap(), Steer::Straight);
                prop_assert!(d >= 2.0 * TURN_THRESHOLD_DEG);
            }
        }
    }
}
