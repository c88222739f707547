//! Paired frame datasets.

use crate::error::{file_err, invalid, Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::sim::car::{step, CarState, SimConfig, NUM_ACTIONS};
use crate::sim::controller::Pursuit;
use crate::sim::image::Frame;
use crate::sim::render::{render_with, Camera, RenderStyle};
use crate::sim::track::Track;
use rand::Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use vrdrive_tensor::{Real, Tensor};

pub const MIN_PAIRS: usize = 64;
/// Every `HOLDOUT_EVERY`-th pair is held out.
pub const HOLDOUT_EVERY: usize = 8;
pub const INDEX_FILE: &str = "index.txt";
pub const POSES_FILE: &str = "poses.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::HeldOut),
            _ => invalid(format!("unknown split {s:?}")),
        }
    }
}

/// Driving behavior used to choose captured states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrivePolicy {
    /// Perturbed spawns followed by a few random actions.
    RandomDrive,
    /// Small perturbations followed by the pursuit controller.
    CenterFollow,
}

impl FromStr for DrivePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-drive" => Ok(DrivePolicy::RandomDrive),
            "center" | "center-follow" => Ok(DrivePolicy::CenterFollow),
            _ => invalid(format!("unknown drive policy {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: usize,
    pub condition: Frame,
    pub target: Frame,
    pub split: Split,
    /// Car pose the pair was rendered from, when known.
    pub pose: Option<Pose>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub arc: f64,
}

impl From<&CarState> for Pose {
    fn from(s: &CarState) -> Self {
        Self {
            position: s.position,
            heading: s.heading,
            speed: s.speed,
            arc: s.arc,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairedSet {
    pub pairs: Vec<Pair>,
}

impl PairedSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Pair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn held_out_fraction(&self) -> f64 {
        self.split(Split::HeldOut).len() as f64 / self.len().max(1) as f64
    }

    /// Fraction of the lap spanned by the recorded poses: one minus the
    /// largest arc gap between consecutive samples.
    pub fn coverage(&self, lap: f64) -> f64 {
        let mut arcs: Vec<f64> = self.pairs.iter().filter_map(|p| p.pose.map(|q| q.arc)).collect();
        if arcs.is_empty() {
            return 0.0;
        }
        arcs.sort_by(|a, b| a.partial_cmp(b).expect("finite arcs"));
        let mut gap = arcs[0] + lap - arcs[arcs.len() - 1];
        for w in arcs.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        1.0 - gap / lap
    }

    /// Condition and target batches `[n, 3, H, W]` for `pairs`.
    pub fn batch<T: Real>(pairs: &[&Pair]) -> Result<(Tensor<T>, Tensor<T>)> {
        let cond: Vec<&Frame> = pairs.iter().map(|p| &p.condition).collect();
        let tgt: Vec<&Frame> = pairs.iter().map(|p| &p.target).collect();
        Ok((Frame::batch(&cond)?, Frame::batch(&tgt)?))
    }

    /// Writes frames, the index, and poses under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames = dir.join("frames");
        std::fs::create_dir_all(&frames).map_err(|e| file_err(&frames, e))?;
        let mut index = String::new();
        let mut poses = String::from("pair_id,x,y,heading,speed,arc\n");
        for p in &self.pairs {
            let c = format!("frames/{:06}_cond.vrt", p.id);
            let t = format!("frames/{:06}_target.vrt", p.id);
            p.condition.save(&dir.join(&c))?;
            p.target.save(&dir.join(&t))?;
            writeln!(index, "{} {c} {t} {}", p.id, p.split.as_str()).expect("string write");
            if let Some(q) = p.pose {
                writeln!(
                    poses,
                    "{},{},{},{},{},{}",
                    p.id, q.position[0], q.position[1], q.heading, q.speed, q.arc
                )
                .expect("string write");
            }
        }
        let ip = dir.join(INDEX_FILE);
        std::fs::write(&ip, index).map_err(|e| file_err(&ip, e))?;
        let pp = dir.join(POSES_FILE);
        std::fs::write(&pp, poses).map_err(|e| file_err(&pp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ip = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&ip).map_err(|e| file_err(&ip, e))?;
        let poses = load_poses(&dir.join(POSES_FILE))?;
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| file_err(&ip, format!("line {}: {m}", ln + 1));
            let [id, c, t, split] = f[..] else {
                return Err(bad("expected <pair_id> <condition_path> <target_path> <split>"));
            };
            let id: usize = id.parse().map_err(|_| bad("bad pair id"))?;
            let split: Split = split.parse().map_err(|e: Error| bad(&e.to_string()))?;
            pairs.push(Pair {
                id,
                condition: Frame::load(&resolve(dir, c))?,
                target: Frame::load(&resolve(dir, t))?,
                split,
                pose: poses.iter().find(|(i, _)| *i == id).map(|(_, p)| *p),
            });
        }
        Ok(Self { pairs })
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn load_poses(path: &Path) -> Result<Vec<(usize, Pose)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| file_err(path, format!("line {}: not numeric", ln + 1)))?;
        let [id, x, y, h, s, a] = v[..] else {
            return Err(file_err(path, format!("line {}: expected 6 fields", ln + 1)));
        };
        out.push((
            id as usize,
            Pose {
                position: [x, y],
                heading: h,
                speed: s,
                arc: a,
            },
        ));
    }
    Ok(out)
}

/// Captured states spread over one lap.
pub fn sample_states(track: &Track, n: usize, policy: DrivePolicy, seed: u64) -> Result<Vec<CarState>> {
    let mut rng = seeded(derive_seed(seed, "paired-states"));
    let cfg = SimConfig::default();
    let ctl = Pursuit::default();
    let lap = track.length();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let arc = (i as f64 + rng.gen::<f64>()) * lap / n as f64;
        let mut shrink = 1.0;
        let state = loop {
            let (lat, yaw, rolls) = match policy {
                DrivePolicy::RandomDrive => (0.7, 0.3, 8),
                DrivePolicy::CenterFollow => (0.15, 0.05, 8),
            };
            let (p, th) = track.at_arc(arc);
            let off = rng.gen_range(-lat..lat) * track.half_width * shrink;
            let heading = th + rng.gen_range(-yaw..yaw) * shrink;
            let pos = [p[0] - th.sin() * off, p[1] + th.cos() * off];
            let mut s = CarState::at(track, pos, heading, rng.gen_range(0.0..20.0), 0);
            for _ in 0..rng.gen_range(0..=rolls) {
                let a = match policy {
                    DrivePolicy::RandomDrive => rng.gen_range(0..NUM_ACTIONS),
                    DrivePolicy::CenterFollow => ctl.action(track, &s, cfg.dt),
                };
                s = step(track, &s, a, &cfg)?.0;
                if s.collided {
                    break;
                }
            }
            if !s.collided {
                break s;
            }
            shrink *= 0.5;
            if shrink < 1e-3 {
                return Err(Error::InvalidTrack(format!("no drivable state near arc {arc:.1}")));
            }
        };
        out.push(state);
    }
    Ok(out)
}

/// Renders paired (Virtual, Parsing) and (Parsing, Real) sets from the same
/// `n` states.
pub fn generate_paired_data(
    track: &Track,
    n: usize,
    policy: DrivePolicy,
    seed: u64,
    camera: Camera,
) -> Result<(PairedSet, PairedSet)> {
    if n < MIN_PAIRS {
        return invalid(format!("need at least {MIN_PAIRS} pairs, asked for {n}"));
    }
    let states = sample_states(track, n, policy, seed)?;
    let mut s1 = PairedSet::default();
    let mut s2 = PairedSet::default();
    for (id, st) in states.iter().enumerate() {
        let virt = render_with(st, track, RenderStyle::Virtual, camera);
        let pars = render_with(st, track, RenderStyle::Parsing, camera);
        let real = render_with(st, track, RenderStyle::Real, camera);
        let split = if id % HOLDOUT_EVERY == HOLDOUT_EVERY - 1 {
            Split::HeldOut
        } else {
            Split::Train
        };
        let pose = Some(Pose::from(st));
        s1.pairs.push(Pair {
            id,
            condition: virt,
            target: pars.clone(),
            split,
            pose,
        });
        s2.pairs.push(Pair {
            id,
            condition: pars,
            target: real,
            split,
            pose,
        });
    }
    Ok((s1, s2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::render::{classes_from_parsing, render_segmentation_with};
    use crate::sim::track::{make_track, TrackSpec};

    #[test]
    fn pairs_are_aligned_and_cover_the_lap() {
        let t = make_track(TrackSpec::A);
        let cam = Camera::square(32);
        let (s1, s2) = generate_paired_data(&t, 96, DrivePolicy::RandomDrive, 3, cam).unwrap();
        assert_eq!(s1.len(), 96);
        assert!(s1.held_out_fraction() >= 0.10);
        assert!(s1.coverage(t.length()) >= 0.95);
        for (a, b) in s1.pairs.iter().zip(&s2.pairs) {
            assert_eq!(a.target, b.condition);
            let q = a.pose.unwrap();
            let st = CarState::at(&t, q.position, q.heading, q.speed, 0);
            assert_eq!(classes_from_parsing(&a.target), render_segmentation_with(&st, &t, cam));
            assert!(!st.collided);
        }
    }

    #[test]
    fn too_few_pairs_refused() {
        let t = make_track(TrackSpec::A);
        assert!(generate_paired_data(&t, 10, DrivePolicy::CenterFollow, 0, Camera::square(16)).is_err());
    }

    #[test]
    fn disk_roundtrip() {
        let t = make_track(TrackSpec::B);
        let (s1, _) = generate_paired_data(&t, 64, DrivePolicy::CenterFollow, 1, Camera::square(16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s1.save(dir.path()).unwrap();
        let back = PairedSet::load(dir.path()).unwrap();
        assert_eq!(back, s1);
        let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(
            index.lines().nth(7).unwrap(),
            "7 frames/000007_cond.vrt frames/000007_target.vrt heldout"
        );
    }

    #[test]
    fn deterministic_in_seed() {
        let t = make_track(TrackSpec::A);
        let a = sample_states(&t, 70, DrivePolicy::RandomDrive, 9).unwrap();
        let b = sample_states(&t, 70, DrivePolicy::RandomDrive, 9).unwrap();
        assert_eq!(a, b);
    }
}
