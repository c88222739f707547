//! Frames, segmentation maps, and their file encodings.

use crate::error::{file_err, invalid, Error, Result};
use std::io::Write;
use std::path::Path;
use vrdrive_tensor::{io as vrt, Real, Tensor};

pub const CHANNELS: usize = 3;

/// RGB image with values in [−1, 1], stored row-major as H×W×3.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return invalid(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Writes this frame into sample slot `index` of an NCHW buffer.
    pub fn write_chw<T: Real>(&self, out: &mut [T]) {
        let p = self.height * self.width;
        debug_assert_eq!(out.len(), CHANNELS * p);
        for i in 0..p {
            for c in 0..CHANNELS {
                out[c * p + i] = T::from_f64(self.data[i * CHANNELS + c] as f64);
            }
        }
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); CHANNELS * self.height * self.width];
        self.write_chw(&mut data);
        Tensor::new(&[1, CHANNELS, self.height, self.width], data).expect("frame shape")
    }

    /// Stacks frames into one `[n, 3, H, W]` batch.
    pub fn batch<T: Real>(frames: &[&Frame]) -> Result<Tensor<T>> {
        let Some(first) = frames.first() else {
            return invalid("empty frame batch");
        };
        let (h, w) = (first.height, first.width);
        let per = CHANNELS * h * w;
        let mut data = vec![T::zero(); frames.len() * per];
        for (f, slot) in frames.iter().zip(data.chunks_mut(per)) {
            if f.height != h || f.width != w {
                return invalid(format!("frame {}x{} in a {h}x{w} batch", f.height, f.width));
            }
            f.write_chw(slot);
        }
        Ok(Tensor::new(&[frames.len(), CHANNELS, h, w], data)?)
    }

    /// Reads sample `index` of an `[n, 3, H, W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.shape() else {
            return invalid(format!("expected NCHW tensor, got {:?}", t.shape()));
        };
        if *c != CHANNELS || index >= *n {
            return invalid(format!("cannot take frame {index} of {:?}", t.shape()));
        }
        let p = h * w;
        let src = &t.data()[index * CHANNELS * p..(index + 1) * CHANNELS * p];
        let mut data = vec![0f32; CHANNELS * p];
        for i in 0..p {
            for ch in 0..CHANNELS {
                data[i * CHANNELS + ch] = src[ch * p + i].as_f64() as f32;
            }
        }
        Frame::new(*h, *w, data)
    }

    /// Mean absolute difference over all values.
    pub fn l1(&self, other: &Frame) -> Result<f64> {
        self.check_same("l1", other)?;
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(total / self.data.len() as f64)
    }

    /// Fraction of pixels whose RGB triples differ at all.
    pub fn differing_pixel_fraction(&self, other: &Frame) -> Result<f64> {
        self.check_same("pixel diff", other)?;
        let differ = self
            .data
            .chunks(CHANNELS)
            .zip(other.data.chunks(CHANNELS))
            .filter(|(a, b)| a != b)
            .count();
        Ok(differ as f64 / (self.height * self.width) as f64)
    }

    fn check_same(&self, what: &str, other: &Frame) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return invalid(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }

    /// 8-bit quantization used by the PPM export.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round()) as u8)
            .collect()
    }

    /// Binary P6, maxval 255, [−1, 1] mapped linearly onto [0, 255].
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm()).map_err(|e| file_err(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = Tensor::new(&[self.height, self.width, CHANNELS], self.data.clone())?;
        vrt::save(path, &t).map_err(|e| file_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Tensor<f32> = vrt::load(path).map_err(|e| file_err(path, e))?;
        match *t.shape() {
            [h, w, CHANNELS] => Frame::new(h, w, t.into_data()),
            _ => Err(file_err(path, format!("not a frame tensor: {:?}", t.shape()))),
        }
    }
}

/// Per-pixel class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl SegMap {
    /// Fraction of pixels with identical labels.
    pub fn agreement(&self, other: &SegMap) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return invalid("segmentation maps differ in size");
        }
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.labels.len() as f64)
    }

    /// Per-class pixel counts.
    pub fn histogram(&self) -> [usize; super::render::NUM_CLASSES] {
        let mut h = [0; super::render::NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Binary P5 with class indices as gray levels.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| file_err(path, e))?;
        f.write_all(&self.encode_pgm()).map_err(Error::Io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_maps_range_linearly() {
        let f = Frame::new(1, 2, vec![-1.0, 0.0, 1.0, 0.5, -0.5, 1.0]).unwrap();
        let b = f.encode_ppm();
        assert!(b.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&b[b.len() - 6..], &[0, 128, 255, 191, 64, 255]);
    }

    #[test]
    fn pgm_stores_labels() {
        let m = SegMap {
            height: 1,
            width: 3,
            labels: vec![0, 5, 2],
        };
        assert_eq!(m.encode_pgm(), b"P5\n3 1\n255\n\x00\x05\x02".to_vec());
    }

    #[test]
    fn tensor_roundtrip() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 / 20.0 - 0.4).collect();
        let f = Frame::new(2, 3, data).unwrap();
        let t = f.to_tensor::<f32>();
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        assert_eq!(Frame::from_tensor(&t, 0).unwrap(), f);
    }

    #[test]
    fn l1_is_a_metric() {
        let a = Frame::filled(2, 2, [1.0, 1.0, 1.0]);
        let b = Frame::filled(2, 2, [-1.0, -1.0, -1.0]);
        assert_eq!(a.l1(&b).unwrap(), 2.0);
        assert_eq!(a.l1(&a).unwrap(), 0.0);
        assert_eq!(a.l1(&b).unwrap(), b.l1(&a).unwrap());
    }

    #[test]
    fn vrt_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::new(2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let p = dir.path().join("f.vrt");
        f.save(&p).unwrap();
        assert_eq!(Frame::load(&p).unwrap(), f);
    }
}
