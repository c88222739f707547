//! Annotated driving logs.

use super::labels::{label_name, map_steering_to_action, parse_label, Label};
use crate::a3c::stack_frames;
use crate::error::{file_err, invalid, Result};
use crate::nets::STACK;
use crate::rng::{derive_seed, seeded};
use crate::sim::controller::Pursuit;
use crate::sim::render::{render_with, Camera, RenderStyle};
use crate::sim::{reset_at, step, Frame, SimConfig, Track, NUM_ACTIONS};
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;
use vrdrive_tensor::Tensor;

pub const ANGLES_FILE: &str = "angles.csv";
const ANGLES_HEADER: &str = "frame,angle_deg,label,episode_start";

/// Frames with per-frame steering angles and the labels derived from them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDriveLog {
    pub frames: Vec<Frame>,
    pub angles: Vec<f64>,
    pub labels: Vec<Label>,
    /// True where a new drive begins; frame stacks do not reach back past it.
    pub episode_start: Vec<bool>,
}

/// Scripted drive used to record a log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveLogConfig {
    pub frames: usize,
    pub size: usize,
    pub style: RenderStyle,
    /// Per-step chance of starting a random swerve.
    pub swerve_prob: f64,
    /// Longest swerve in steps.
    pub swerve_max: usize,
}

impl Default for DriveLogConfig {
    fn default() -> Self {
        Self {
            frames: 600,
            size: 64,
            style: RenderStyle::Real,
            swerve_prob: 0.1,
            swerve_max: 20,
        }
    }
}

impl LabeledDriveLog {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Builds a log whose labels follow from `angles`.
    pub fn new(frames: Vec<Frame>, angles: Vec<f64>, episode_start: Vec<bool>) -> Result<Self> {
        if frames.len() != angles.len() || frames.len() != episode_start.len() {
            return invalid("frames, angles, and episode flags differ in length");
        }
        let labels = angles.iter().map(|&a| map_steering_to_action(a)).collect::<Result<_>>()?;
        Ok(Self {
            frames,
            angles,
            labels,
            episode_start,
        })
    }

    /// Stacked observation ending at frame `i`.
    pub fn obs(&self, i: usize) -> Result<Tensor<f32>> {
        let mut start = i;
        while start > 0 && !self.episode_start[start] && i - start < STACK - 1 {
            start -= 1;
        }
        let mut idx: Vec<usize> = (start..=i).collect();
        while idx.len() < STACK {
            idx.insert(0, start);
        }
        let v: Vec<&Frame> = idx.iter().map(|&k| &self.frames[k]).collect();
        stack_frames(&v)
    }

    pub fn obs_batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let items = idx.iter().map(|&i| self.obs(i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = items.iter().collect();
        Ok(Tensor::stack_batch(&refs)?)
    }

    /// Fraction of frames carrying the most common label.
    pub fn majority_fraction(&self) -> f64 {
        let mut c = [0usize; 3];
        for &l in &self.labels {
            c[super::labels::label_index(l)] += 1;
        }
        *c.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }

    /// Frames as VRT1 files plus `angles.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let fd = dir.join("frames");
        std::fs::create_dir_all(&fd).map_err(|e| file_err(&fd, e))?;
        let mut csv = format!("{ANGLES_HEADER}\n");
        for (i, f) in self.frames.iter().enumerate() {
            f.save(&fd.join(format!("{i:06}.vrt")))?;
            writeln!(
                csv,
                "{i},{},{},{}",
                self.angles[i],
                label_name(self.labels[i]),
                self.episode_start[i] as u8
            )
            .expect("string write");
        }
        let p = dir.join(ANGLES_FILE);
        std::fs::write(&p, csv).map_err(|e| file_err(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(ANGLES_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| file_err(&p, e))?;
        let (mut frames, mut angles, mut starts) = (Vec::new(), Vec::new(), Vec::new());
        let mut stored = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let bad = || file_err(&p, format!("line {}: malformed", ln + 1));
            let f: Vec<&str> = line.split(',').collect();
            let [i, a, l, s] = f[..] else {
                return Err(bad());
            };
            let i: usize = i.parse().map_err(|_| bad())?;
            angles.push(a.parse::<f64>().map_err(|_| bad())?);
            stored.push(parse_label(l)?);
            starts.push(s == "1");
            frames.push(Frame::load(&dir.join("frames").join(format!("{i:06}.vrt")))?);
        }
        let log = Self::new(frames, angles, starts)?;
        if log.labels != stored {
            return Err(file_err(&p, "stored labels disagree with the steering angles"));
        }
        Ok(log)
    }
}

/// Drives the pursuit controller with random swerves and records frames with
/// the controller's steering angle (degrees, positive to the right).
pub fn generate_drive_log(track: &Track, cfg: &DriveLogConfig, seed: u64) -> Result<LabeledDriveLog> {
    if cfg.frames == 0 {
        return invalid("drive log needs at least one frame");
    }
    let mut rng = seeded(derive_seed(seed, "drive-log"));
    let sim = SimConfig::default();
    let ctl = Pursuit::default();
    let cam = Camera::square(cfg.size);
    let (mut frames, mut angles, mut starts) = (Vec::new(), Vec::new(), Vec::new());
    let mut state = reset_at(track, rng.gen_range(0.0..track.length()));
    let mut fresh = true;
    let mut swerve: Option<(usize, usize)> = None;
    while frames.len() < cfg.frames {
        frames.push(render_with(&state, track, cfg.style, cam));
        angles.push(-ctl.bearing(track, &state).to_degrees());
        starts.push(fresh);
        fresh = false;
        let action = match swerve {
            Some((a, left)) => {
                swerve = (left > 1).then_some((a, left - 1));
                a
            }
            None if rng.gen_bool(cfg.swerve_prob) => {
                let steer = rng.gen_range(1..3);
                let a = 6 + steer;
                swerve = Some((a, rng.gen_range(1..=cfg.swerve_max)));
                a
            }
            None => ctl.action(track, &state, sim.dt),
        };
        debug_assert!(action < NUM_ACTIONS);
        let (next, _, done) = step(track, &state, action, &sim)?;
        state = next;
        if done {
            state = reset_at(track, rng.gen_range(0.0..track.length()));
            fresh = true;
            swerve = None;
        }
    }
    LabeledDriveLog::new(frames, angles, starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::labels::LABELS;
    use crate::sim::{make_track, TrackSpec};

    fn small() -> LabeledDriveLog {
        let t = make_track(TrackSpec::B);
        let cfg = DriveLogConfig {
            frames: 300,
            size: 16,
            ..DriveLogConfig::default()
        };
        generate_drive_log(&t, &cfg, 1).unwrap()
    }

    #[test]
    fn labels_follow_angles_and_cover_all_classes() {
        let log = small();
        assert_eq!(log.len(), 300);
        for (a, l) in log.angles.iter().zip(&log.labels) {
            assert_eq!(map_steering_to_action(*a).unwrap(), *l);
        }
        for l in LABELS {
            let n = log.labels.iter().filter(|&&x| x == l).count();
            assert!(n >= 15, "{l:?}: {n}");
        }
        assert!(log.episode_start[0]);
    }

    #[test]
    fn stacks_stop_at_episode_starts() {
        let mut log = small();
        log.episode_start[10] = true;
        let o = log.obs(11).unwrap();
        let plane = 3 * 16 * 16;
        let f10 = log.frames[10].to_tensor::<f32>();
        for k in 0..3 {
            assert_eq!(&o.data()[k * plane..(k + 1) * plane], f10.data());
        }
        assert_eq!(&o.data()[3 * plane..], log.frames[11].to_tensor::<f32>().data());
        let o = log.obs(20).unwrap();
        assert_eq!(&o.data()[..plane], log.frames[17].to_tensor::<f32>().data());
    }

    #[test]
    fn disk_roundtrip() {
        let log = small();
        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        assert_eq!(LabeledDriveLog::load(dir.path()).unwrap(), log);
    }
}
