//! Two-stage frame filter: virtual → parsing → realistic.

use crate::error::{invalid, Result};
use crate::nets::{Checkpointable, Generator};
use crate::sim::Frame;
use rand::Rng;
use std::path::{Path, PathBuf};
use vrdrive_tensor::Tensor;

pub const G1_FILE: &str = "g1.ckpt";
pub const G2_FILE: &str = "g2.ckpt";

#[derive(Clone, Debug)]
pub struct TranslationPipeline {
    pub g1: Generator<f32>,
    pub g2: Generator<f32>,
    /// Keep decoder dropout on at inference.
    pub noise_mode: bool,
}

impl TranslationPipeline {
    pub fn new(g1: Generator<f32>, g2: Generator<f32>, noise_mode: bool) -> Result<Self> {
        let (a, b) = (&g1.cfg, &g2.cfg);
        if a.size != b.size || a.out_channels != b.in_channels || a.in_channels != 3 || b.out_channels != 3 {
            return invalid("generators do not chain into a 3-channel frame filter");
        }
        Ok(Self { g1, g2, noise_mode })
    }

    pub fn size(&self) -> usize {
        self.g1.cfg.size
    }

    fn paths(dir: &Path) -> (PathBuf, PathBuf) {
        (dir.join(G1_FILE), dir.join(G2_FILE))
    }

    /// Writes both generators into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::file_err(dir, e))?;
        let (a, b) = Self::paths(dir);
        self.g1.save(&a)?;
        self.g2.save(&b)
    }

    pub fn load(dir: &Path, noise_mode: bool) -> Result<Self> {
        let (a, b) = Self::paths(dir);
        Self::new(Generator::load(&a)?, Generator::load(&b)?, noise_mode)
    }

    /// Translates a batch `[n, 3, S, S]`, returning `(parsing, realistic)`.
    pub fn translate_batch<R: Rng + ?Sized>(&self, x: &Tensor<f32>, rng: &mut R) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = self.g1.generate(x, self.noise_mode, rng)?;
        let y = self.g2.generate(&s, self.noise_mode, rng)?;
        Ok((s, y))
    }

    /// `(parsing_est, realistic)` for one virtual frame.
    pub fn translate<R: Rng + ?Sized>(&self, virtual_frame: &Frame, rng: &mut R) -> Result<(Frame, Frame)> {
        let sz = self.size();
        if virtual_frame.height != sz || virtual_frame.width != sz {
            return invalid(format!(
                "pipeline expects {sz}x{sz} frames, got {}x{}",
                virtual_frame.height, virtual_frame.width
            ));
        }
        let (s, y) = self.translate_batch(&virtual_frame.to_tensor(), rng)?;
        Ok((Frame::from_tensor(&s, 0)?, Frame::from_tensor(&y, 0)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::GeneratorConfig;
    use crate::rng::seeded;
    use crate::sim::render::{render_with, Camera, RenderStyle};
    use crate::sim::track::{make_track, TrackSpec};
    use crate::sim::reset;

    fn pipeline(noise: bool) -> TranslationPipeline {
        let g1 = Generator::new(GeneratorConfig::reduced(), 1).unwrap();
        let g2 = Generator::new(GeneratorConfig::reduced(), 2).unwrap();
        TranslationPipeline::new(g1, g2, noise).unwrap()
    }

    fn frame() -> Frame {
        let t = make_track(TrackSpec::A);
        render_with(&reset(&t, 0), &t, RenderStyle::Virtual, Camera::square(16))
    }

    #[test]
    fn untrained_outputs_in_range_and_idempotent() {
        let p = pipeline(false);
        let f = frame();
        let (s, y) = p.translate(&f, &mut seeded(0)).unwrap();
        assert!(s.in_range() && y.in_range());
        assert_eq!(p.translate(&f, &mut seeded(99)).unwrap(), (s, y));
    }

    #[test]
    fn noise_mode_varies_with_rng() {
        let p = pipeline(true);
        let f = frame();
        let a = p.translate(&f, &mut seeded(0)).unwrap();
        let b = p.translate(&f, &mut seeded(1)).unwrap();
        assert!(a.1.in_range());
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_size_and_roundtrip() {
        let p = pipeline(false);
        let t = make_track(TrackSpec::A);
        let big = render_with(&reset(&t, 0), &t, RenderStyle::Virtual, Camera::square(32));
        assert!(p.translate(&big, &mut seeded(0)).is_err());
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let q = TranslationPipeline::load(dir.path(), false).unwrap();
        let f = frame();
        assert_eq!(p.translate(&f, &mut seeded(0)).unwrap(), q.translate(&f, &mut seeded(0)).unwrap());
    }
}
