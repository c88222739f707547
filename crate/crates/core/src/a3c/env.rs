//! Worker environments: simulator, renderer, optional translation, and the
//! frame stack.

use crate::error::{invalid, Error, Result};
use crate::gan::TranslationPipeline;
use crate::nets::STACK;
use crate::rng::Rng;
use crate::sim::render::{render_with, Camera, RenderStyle};
use crate::sim::{reset_at, step, CarState, Frame, SimConfig, Track};
use rand::Rng as _;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use vrdrive_tensor::Tensor;

/// Channel-concatenates exactly [`STACK`] frames, oldest first, into
/// `[1, 3·STACK, H, W]`.
pub fn stack_frames(frames: &[&Frame]) -> Result<Tensor<f32>> {
    if frames.len() != STACK {
        return invalid(format!("need {STACK} frames to stack, got {}", frames.len()));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return invalid("stacked frames differ in size");
    }
    let plane = 3 * h * w;
    let mut data = vec![0.0f32; STACK * plane];
    for (f, out) in frames.iter().zip(data.chunks_mut(plane)) {
        f.write_chw(out);
    }
    Ok(Tensor::new(&[1, 3 * STACK, h, w], data)?)
}

/// The last [`STACK`] frames; a fresh episode repeats its first frame.
#[derive(Clone, Debug, Default)]
pub struct FrameStack {
    frames: VecDeque<Frame>,
}

impl FrameStack {
    pub fn new(first: Frame) -> Self {
        let mut s = Self::default();
        s.reset(first);
        s
    }

    pub fn reset(&mut self, first: Frame) {
        self.frames.clear();
        for _ in 1..STACK {
            self.frames.push_back(first.clone());
        }
        self.frames.push_back(first);
    }

    pub fn push(&mut self, f: Frame) {
        if self.frames.is_empty() {
            return self.reset(f);
        }
        self.frames.pop_front();
        self.frames.push_back(f);
    }

    pub fn obs(&self) -> Result<Tensor<f32>> {
        let v: Vec<&Frame> = self.frames.iter().collect();
        stack_frames(&v)
    }
}

/// What the agent sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObsMode {
    RawVirtual,
    /// Virtual frames passed through the translation pipeline.
    Translated,
    /// One of `n` randomized styles per episode.
    Randomized(usize),
    /// The target domain's realistic style, rendered directly.
    Real,
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsMode::RawVirtual => f.write_str("raw"),
            ObsMode::Translated => f.write_str("translated"),
            ObsMode::Randomized(n) => write!(f, "randomized:{n}"),
            ObsMode::Real => f.write_str("real"),
        }
    }
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ObsMode::RawVirtual),
            "translated" => Ok(ObsMode::Translated),
            "real" => Ok(ObsMode::Real),
            "randomized" => Ok(ObsMode::Randomized(10)),
            _ => match s.strip_prefix("randomized:").map(str::parse) {
                Some(Ok(n)) if n > 0 => Ok(ObsMode::Randomized(n)),
                _ => invalid(format!("unknown observation mode {s:?}")),
            },
        }
    }
}

/// How frames are produced for one environment.
#[derive(Clone)]
pub enum Renderer {
    Style(RenderStyle),
    /// Cycles through the styles, advancing once per episode.
    Cycle { styles: Vec<RenderStyle>, next: usize },
    Translate { pipeline: Arc<TranslationPipeline>, rng: Rng },
}

impl Renderer {
    fn begin_episode(&mut self) {
        if let Renderer::Cycle { styles, next } = self {
            *next = (*next + 1) % styles.len();
        }
    }

    pub fn current_style(&self) -> Option<RenderStyle> {
        match self {
            Renderer::Style(s) => Some(*s),
            Renderer::Cycle { styles, next } => Some(styles[*next]),
            Renderer::Translate { .. } => None,
        }
    }

    fn render(&mut self, state: &CarState, track: &Track, cam: Camera) -> Result<Frame> {
        Ok(match self {
            Renderer::Style(s) => render_with(state, track, *s, cam),
            Renderer::Cycle { styles, next } => render_with(state, track, styles[*next], cam),
            Renderer::Translate { pipeline, rng } => {
                let v = render_with(state, track, RenderStyle::Virtual, cam);
                pipeline.translate(&v, rng)?.1
            }
        })
    }
}

/// Simulator plus observation plumbing for a single worker.
pub struct Env {
    pub track: Arc<Track>,
    pub sim: SimConfig,
    pub camera: Camera,
    pub renderer: Renderer,
    pub state: CarState,
    stack: FrameStack,
    rng: Rng,
}

impl Env {
    /// `rng` drives spawn positions; the first episode starts immediately.
    pub fn new(track: Arc<Track>, sim: SimConfig, camera: Camera, renderer: Renderer, rng: Rng) -> Result<Self> {
        if let Renderer::Translate { pipeline, .. } = &renderer {
            if pipeline.size() != camera.width || camera.width != camera.height {
                return invalid("camera does not match the translation pipeline");
            }
        }
        if let Renderer::Cycle { styles, .. } = &renderer {
            if styles.is_empty() {
                return invalid("no styles to cycle");
            }
        }
        let state = reset_at(&track, 0.0);
        let mut env = Self {
            track,
            sim,
            camera,
            renderer,
            state,
            stack: FrameStack::default(),
            rng,
        };
        env.start_episode(false)?;
        Ok(env)
    }

    /// Respawns at a uniformly random arc position.
    pub fn start_episode(&mut self, advance_style: bool) -> Result<()> {
        if advance_style {
            self.renderer.begin_episode();
        }
        let arc = self.rng.gen_range(0.0..self.track.length());
        self.state = reset_at(&self.track, arc);
        let f = self.renderer.render(&self.state, &self.track, self.camera)?;
        self.stack.reset(f);
        Ok(())
    }

    pub fn obs(&self) -> Result<Tensor<f32>> {
        self.stack.obs()
    }

    /// Applies `action`; returns `(reward, done)`. A finished episode is not
    /// restarted automatically.
    pub fn step(&mut self, action: usize) -> Result<(f64, bool)> {
        let (next, reward, done) = step(&self.track, &self.state, action, &self.sim)?;
        self.state = next;
        let f = self.renderer.render(&self.state, &self.track, self.camera)?;
        self.stack.push(f);
        Ok((reward, done))
    }
}
