//! Conditional patch discriminator.

use super::generator::{DOWN, LEAKY_SLOPE};
use super::layers::{normal, BnIds, BnMode, BnUpdate};
use crate::error::{invalid, Result};
use crate::rng::seeded;
use vrdrive_tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Trainable parameter count of [`DiscriminatorConfig::default`].
pub const DISCRIMINATOR_PARAMS: usize = 169_377;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub size: usize,
    /// Channels of the condition and of the candidate image.
    pub image_channels: usize,
    /// Output channels of every conv block; the last must be 1.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            size: 64,
            image_channels: 3,
            channels: vec![32, 64, 128, 1],
        }
    }
}

impl DiscriminatorConfig {
    pub fn reduced() -> Self {
        Self {
            size: 16,
            image_channels: 3,
            channels: vec![4, 8, 1],
        }
    }

    pub fn grid(&self) -> usize {
        self.size >> self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.last() != Some(&1) || self.channels.contains(&0) {
            return invalid("discriminator must end in one channel");
        }
        if self.grid() == 0 || self.grid() << self.channels.len() != self.size {
            return invalid(format!(
                "{} stride-2 blocks do not tile a {} input",
                self.channels.len(),
                self.size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    w: ParamId,
    bias: Option<ParamId>,
    bn: Option<BnIds>,
}

/// Scores (condition, candidate) pairs with a grid of patch probabilities.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub store: ParamStore<T>,
    blocks: Vec<Block>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut prev = 2 * cfg.image_channels;
        let n = cfg.channels.len();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let w = store.add(&format!("d{i}.w"), normal(&[c, prev, 4, 4], 0.02, &mut rng));
            // Batchnorm on every block but the first and the output.
            let bn = (i > 0 && i + 1 < n).then(|| BnIds::new(&mut store, &format!("d{i}.bn"), c));
            let bias = bn
                .is_none()
                .then(|| store.add(&format!("d{i}.b"), Tensor::zeros(&[c])));
            blocks.push(Block { w, bias, bn });
            prev = c;
        }
        Ok(Self { cfg, store, blocks })
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            blocks: self.blocks.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn forward(&self, g: &mut Graph<T>, condition: Var, candidate: Var, bn: BnMode) -> Result<(Var, Vec<BnUpdate<T>>)> {
        self.forward_with(&self.store, g, condition, candidate, bn)
    }

    /// Patch probabilities `[n, 1, grid, grid]` for the channel concatenation
    /// of `condition` and `candidate`.
    pub fn forward_with(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        condition: Var,
        candidate: Var,
        bn: BnMode,
    ) -> Result<(Var, Vec<BnUpdate<T>>)> {
        let (cs, ks) = (g.shape(condition), g.shape(candidate));
        let s = self.cfg.size;
        let ok = |sh: &[usize]| sh.len() == 4 && sh[1] == self.cfg.image_channels && sh[2] == s && sh[3] == s;
        if cs != ks || !ok(cs) {
            return invalid(format!(
                "discriminator needs two [n, {}, {s}, {s}] inputs, got {cs:?} and {ks:?}",
                self.cfg.image_channels
            ));
        }
        let mut updates = Vec::new();
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut h = g.concat_channels(condition, candidate)?;
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            let w = g.param(store, b.w);
            h = g.conv2d(h, w, DOWN)?;
            if let Some(bias) = b.bias {
                let bv = g.param(store, bias);
                h = g.channel_bias(h, bv)?;
            }
            if let Some(ids) = &b.bn {
                h = ids.apply(g, store, h, bn, &mut updates)?;
            }
            if i < last {
                h = g.leaky_relu(h, slope);
            }
        }
        Ok((g.sigmoid(h), updates))
    }

    /// Probabilities with running batchnorm statistics.
    pub fn score(&self, condition: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (c, k) = (g.input(condition.clone()), g.input(candidate.clone()));
        let (p, _) = self.forward(&mut g, c, k, BnMode::Running)?;
        Ok(g.value(p).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_fixed() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 0).unwrap();
        // 6→32 (+bias), 32→64 (+bn), 64→128 (+bn), 128→1 (+bias), all 4×4.
        let expect = (6 * 32 * 16 + 32) + (32 * 64 * 16 + 128) + (64 * 128 * 16 + 256) + (128 * 16 + 1);
        assert_eq!(d.param_count(), expect);
        assert_eq!(d.param_count(), DISCRIMINATOR_PARAMS);
    }

    #[test]
    fn patch_grid_of_probabilities() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 1).unwrap();
        let mut rng = seeded(2);
        let c = Tensor::uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut rng);
        let k = Tensor::uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut rng);
        let p = d.score(&c, &k).unwrap();
        assert_eq!(p.shape(), &[2, 1, 4, 4]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn sensitive_to_both_inputs() {
        let mut d = Discriminator::<f64>::new(DiscriminatorConfig::default(), 3).unwrap();
        // Larger weights than the training init make the probe decisive.
        for id in d.store.trainable_ids().collect::<Vec<_>>() {
            d.store.value_mut(id).scale_inplace(10.0);
        }
        let mut rng = seeded(4);
        let c = Tensor::uniform(&[1, 3, 64, 64], -1.0, 1.0, &mut rng);
        let k = Tensor::uniform(&[1, 3, 64, 64], -1.0, 1.0, &mut rng);
        let other = Tensor::uniform(&[1, 3, 64, 64], -1.0, 1.0, &mut rng);
        let base = d.score(&c, &k).unwrap();
        assert!(d.score(&c, &other).unwrap().max_abs_diff(&base).unwrap() > 1e-6);
        assert!(d.score(&other, &k).unwrap().max_abs_diff(&base).unwrap() > 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 0).unwrap();
        let a = Tensor::zeros(&[1, 3, 64, 64]);
        let b = Tensor::zeros(&[1, 3, 32, 32]);
        let err = d.score(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 64, 64]") && err.contains("[1, 3, 32, 32]"));
    }
}
