//! U-Net generator.

use super::layers::{normal, BnIds, BnUpdate, ForwardMode};
use crate::error::{invalid, Result};
use crate::rng::seeded;
use rand::Rng;
use vrdrive_tensor::{ConvGeom, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const DOWN: ConvGeom = ConvGeom {
    kernel: 4,
    stride: 2,
    pad: 1,
};
pub const OUT_CONV: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 1,
    pad: 1,
};
pub const LEAKY_SLOPE: f64 = 0.2;

/// Trainable parameter count of [`GeneratorConfig::default`].
pub const GENERATOR_PARAMS: usize = 7_345_955;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Square input side; must equal `2^depth`.
    pub size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Output channels of each encoder level, outermost first.
    pub encoder: Vec<usize>,
    /// Output channels of each decoder level, innermost first.
    pub decoder: Vec<usize>,
    /// Dropout is applied on this many innermost decoder levels.
    pub dropout_levels: usize,
    pub dropout_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 64,
            in_channels: 3,
            out_channels: 3,
            encoder: vec![32, 64, 128, 256, 256, 256],
            decoder: vec![256, 256, 128, 64, 32, 32],
            dropout_levels: 3,
            dropout_rate: 0.5,
        }
    }
}

impl GeneratorConfig {
    /// Small 16×16 variant used for gradient checks.
    pub fn reduced() -> Self {
        Self {
            size: 16,
            in_channels: 3,
            out_channels: 3,
            encoder: vec![4, 6, 8, 8],
            decoder: vec![8, 6, 4, 4],
            dropout_levels: 3,
            dropout_rate: 0.5,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d == 0 || self.decoder.len() != d {
            return invalid(format!(
                "generator needs matching encoder/decoder depths, got {} and {}",
                d,
                self.decoder.len()
            ));
        }
        if self.size != 1 << d {
            return invalid(format!("generator of depth {d} needs input side {}, got {}", 1 << d, self.size));
        }
        if self.dropout_levels > d || !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("generator dropout settings out of range");
        }
        if self.encoder.iter().chain(&self.decoder).any(|&c| c == 0) || self.in_channels == 0 || self.out_channels == 0 {
            return invalid("generator channel counts must be positive");
        }
        Ok(())
    }

    /// Input channels of decoder level `j`.
    fn decoder_input(&self, j: usize) -> usize {
        let d = self.depth();
        if j == 0 {
            self.encoder[d - 1]
        } else {
            self.decoder[j - 1] + self.encoder[d - 1 - j]
        }
    }
}

/// Intermediate nodes of one forward pass.
#[cfg_attr(not(test), allow(dead_code))]
struct Trace {
    skips: Vec<Var>,
    dec_inputs: Vec<Var>,
}

#[derive(Clone, Debug)]
struct Level {
    w: ParamId,
    bn: BnIds,
}

/// Encoder-decoder with skip connections: encoder level `i` (1-based, outermost
/// first) is concatenated onto the output of decoder level `depth − i`.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<T>,
    enc: Vec<Level>,
    dec: Vec<Level>,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let k = DOWN.kernel;
        let mut enc = Vec::new();
        let mut prev = cfg.in_channels;
        for (i, &c) in cfg.encoder.iter().enumerate() {
            let w = store.add(&format!("enc{i}.w"), normal(&[c, prev, k, k], 0.02, &mut rng));
            let bn = BnIds::new(&mut store, &format!("enc{i}.bn"), c);
            enc.push(Level { w, bn });
            prev = c;
        }
        let mut dec = Vec::new();
        for (j, &c) in cfg.decoder.iter().enumerate() {
            let cin = cfg.decoder_input(j);
            let w = store.add(&format!("dec{j}.w"), normal(&[cin, c, k, k], 0.02, &mut rng));
            let bn = BnIds::new(&mut store, &format!("dec{j}.bn"), c);
            dec.push(Level { w, bn });
        }
        let last = *cfg.decoder.last().expect("validated depth");
        let ok = OUT_CONV.kernel;
        let out_w = store.add("out.w", normal(&[cfg.out_channels, last, ok, ok], 0.02, &mut rng));
        let out_b = store.add("out.b", Tensor::zeros(&[cfg.out_channels]));
        Ok(Self {
            cfg,
            store,
            enc,
            dec,
            out_w,
            out_b,
        })
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            out_w: self.out_w,
            out_b: self.out_b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.cfg;
        match shape {
            [n, ch, h, w] if *n > 0 && *ch == c.in_channels && *h == c.size && *w == c.size => Ok(()),
            _ => invalid(format!(
                "generator expects [n, {}, {}, {}], got {shape:?}",
                c.in_channels, c.size, c.size
            )),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<(Var, Vec<BnUpdate<T>>)> {
        self.forward_with(&self.store, g, x, mode, rng)
    }

    /// Forward pass reading parameters from `store`, which must share this
    /// generator's layout.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        x: Var,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<(Var, Vec<BnUpdate<T>>)> {
        let (y, updates, _) = self.forward_traced(store, g, x, mode, rng)?;
        Ok((y, updates))
    }

    fn forward_traced<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        x: Var,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<(Var, Vec<BnUpdate<T>>, Trace)> {
        self.check_input(g.shape(x))?;
        let mut updates = Vec::new();
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x;
        for level in &self.enc {
            let w = g.param(store, level.w);
            let c = g.conv2d(h, w, DOWN)?;
            let c = level.bn.apply(g, store, c, mode.bn, &mut updates)?;
            h = g.leaky_relu(c, slope);
            skips.push(h);
        }
        let d = self.dec.len();
        let mut dec_inputs = Vec::with_capacity(d);
        for (j, level) in self.dec.iter().enumerate() {
            if j > 0 {
                h = g.concat_channels(h, skips[d - 1 - j])?;
            }
            dec_inputs.push(h);
            let w = g.param(store, level.w);
            let c = g.deconv2d(h, w, DOWN)?;
            let mut c = level.bn.apply(g, store, c, mode.bn, &mut updates)?;
            if mode.noise && j < self.cfg.dropout_levels {
                c = g.dropout(c, self.cfg.dropout_rate, rng)?;
            }
            h = g.relu(c);
        }
        let (w, b) = (g.param(store, self.out_w), g.param(store, self.out_b));
        let o = g.conv2d(h, w, OUT_CONV)?;
        let o = g.channel_bias(o, b)?;
        Ok((g.tanh(o), updates, Trace { skips, dec_inputs }))
    }

    /// Inference on an NCHW batch with running batchnorm statistics.
    pub fn generate<R: Rng + ?Sized>(&self, x: &Tensor<T>, noise: bool, rng: &mut R) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (y, _) = self.forward(&mut g, xv, ForwardMode::eval_with_noise(noise), rng)?;
        g.check_finite()?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::layers::BnMode;

    /// Independent count from the architecture description.
    fn expected_count(cfg: &GeneratorConfig) -> usize {
        let mut n = 0;
        let mut prev = cfg.in_channels;
        for &c in &cfg.encoder {
            n += c * prev * 16 + 2 * c;
            prev = c;
        }
        let d = cfg.depth();
        for j in 0..d {
            let cin = if j == 0 {
                cfg.encoder[d - 1]
            } else {
                cfg.decoder[j - 1] + cfg.encoder[d - 1 - j]
            };
            n += cin * cfg.decoder[j] * 16 + 2 * cfg.decoder[j];
        }
        n + cfg.out_channels * cfg.decoder[d - 1] * 9 + cfg.out_channels
    }

    #[test]
    fn parameter_count_is_fixed() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 0).unwrap();
        assert_eq!(g.param_count(), expected_count(&g.cfg));
        assert_eq!(g.param_count(), GENERATOR_PARAMS);
        let r = Generator::<f32>::new(GeneratorConfig::reduced(), 0).unwrap();
        assert_eq!(r.param_count(), expected_count(&r.cfg));
    }

    #[test]
    fn output_shape_and_range() {
        let gen = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        let x = Tensor::uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut seeded(2));
        let y = gen.generate(&x, true, &mut seeded(3)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn noise_mode_controls_determinism() {
        let gen = Generator::<f32>::new(GeneratorConfig::reduced(), 4).unwrap();
        let x = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut seeded(5));
        let a = gen.generate(&x, false, &mut seeded(6)).unwrap();
        let b = gen.generate(&x, false, &mut seeded(7)).unwrap();
        assert_eq!(a, b);
        let c = gen.generate(&x, true, &mut seeded(6)).unwrap();
        let d = gen.generate(&x, true, &mut seeded(7)).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn rejects_wrong_input() {
        let gen = Generator::<f32>::new(GeneratorConfig::reduced(), 0).unwrap();
        let x = Tensor::zeros(&[1, 3, 32, 32]);
        let err = gen.generate(&x, false, &mut seeded(0)).unwrap_err();
        assert!(err.to_string().contains("[1, 3, 32, 32]"));
        let bad = GeneratorConfig {
            size: 32,
            ..GeneratorConfig::reduced()
        };
        assert!(Generator::<f32>::new(bad, 0).is_err());
    }

    #[test]
    fn skip_edges_reach_paired_decoder_level() {
        let gen = Generator::<f64>::new(GeneratorConfig::reduced(), 8).unwrap();
        let d = gen.cfg.depth();
        let x = Tensor::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut seeded(9));
        let mut g = Graph::new();
        let xv = g.input(x);
        let mode = ForwardMode {
            bn: BnMode::Batch,
            noise: false,
        };
        let (_, _, trace) = gen.forward_traced(&gen.store, &mut g, xv, mode, &mut seeded(0)).unwrap();
        // Encoder level i (1-based) occupies the trailing channels of the
        // input to decoder level d − i.
        for i in 1..d {
            let skip = g.value(trace.skips[i - 1]);
            let input = g.value(trace.dec_inputs[d - i]);
            let [n, c, h, w] = *skip.shape() else { unreachable!() };
            let ci = input.shape()[1];
            assert_eq!(&input.shape()[2..], &[h, w]);
            for b in 0..n {
                let tail = &input.data()[(b * ci + ci - c) * h * w..(b + 1) * ci * h * w];
                assert_eq!(tail, &skip.data()[b * c * h * w..(b + 1) * c * h * w]);
            }
        }
        // The bottleneck feeds the innermost decoder level directly.
        assert_eq!(g.value(trace.dec_inputs[0]), g.value(trace.skips[d - 1]));
    }
}
