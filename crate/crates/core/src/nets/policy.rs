//! Policy-value network over stacked frames.

use super::layers::fan_in;
use crate::error::{invalid, Error, Result};
use crate::rng::seeded;
use crate::sim::NUM_ACTIONS;
use vrdrive_tensor::graph::softmax_in_place;
use vrdrive_tensor::{ConvGeom, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const STACK: usize = 4;
pub const OBS_CHANNELS: usize = 3 * STACK;

/// Trainable parameter count of [`PolicyConfig::default`].
pub const POLICY_PARAMS: usize = 302_170;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub size: usize,
    pub in_channels: usize,
    /// `(out_channels, kernel)` per conv layer; every layer has stride 2 and
    /// padding `kernel / 2`.
    pub convs: Vec<(usize, usize)>,
    pub hidden: usize,
    pub actions: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            size: 64,
            in_channels: OBS_CHANNELS,
            convs: vec![(16, 5), (32, 3), (32, 3), (64, 3)],
            hidden: 256,
            actions: NUM_ACTIONS,
        }
    }
}

impl PolicyConfig {
    pub fn reduced() -> Self {
        Self {
            size: 16,
            in_channels: OBS_CHANNELS,
            convs: vec![(3, 5), (4, 3), (4, 3), (5, 3)],
            hidden: 6,
            actions: NUM_ACTIONS,
        }
    }

    fn geom(kernel: usize) -> ConvGeom {
        ConvGeom::new(kernel, 2, kernel / 2)
    }

    /// Flattened trunk width.
    pub fn flat(&self) -> Result<usize> {
        let mut s = self.size;
        for &(_, k) in &self.convs {
            s = Self::geom(k)
                .conv_out(s)
                .filter(|&o| o > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("policy trunk collapses a {}px input", self.size)))?;
        }
        let c = self.convs.last().map_or(self.in_channels, |l| l.0);
        Ok(c * s * s)
    }
}

/// Shared conv trunk with policy-logit and value heads.
#[derive(Clone, Debug)]
pub struct PolicyNet<T> {
    pub cfg: PolicyConfig,
    pub store: ParamStore<T>,
    convs: Vec<(ParamId, ParamId)>,
    fc: (ParamId, ParamId),
    pi: (ParamId, ParamId),
    value: (ParamId, ParamId),
}

impl<T: Real> PolicyNet<T> {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        let flat = cfg.flat()?;
        if cfg.actions == 0 || cfg.hidden == 0 {
            return invalid("policy needs at least one action and hidden unit");
        }
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut prev = cfg.in_channels;
        for (i, &(c, k)) in cfg.convs.iter().enumerate() {
            let w = store.add(&format!("conv{i}.w"), fan_in(&[c, prev, k, k], prev * k * k, &mut rng));
            let b = store.add(&format!("conv{i}.b"), Tensor::zeros(&[c]));
            convs.push((w, b));
            prev = c;
        }
        let fc = (
            store.add("fc.w", fan_in(&[cfg.hidden, flat], flat, &mut rng)),
            store.add("fc.b", Tensor::zeros(&[cfg.hidden])),
        );
        let small = |shape: &[usize], rng: &mut crate::rng::Rng| Tensor::randn(shape, 0.01, rng);
        let pi = (
            store.add("pi.w", small(&[cfg.actions, cfg.hidden], &mut rng)),
            store.add("pi.b", Tensor::zeros(&[cfg.actions])),
        );
        let value = (
            store.add("v.w", small(&[1, cfg.hidden], &mut rng)),
            store.add("v.b", Tensor::zeros(&[1])),
        );
        Ok(Self {
            cfg,
            store,
            convs,
            fc,
            pi,
            value,
        })
    }

    pub fn cast<U: Real>(&self) -> PolicyNet<U> {
        PolicyNet {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            convs: self.convs.clone(),
            fc: self.fc,
            pi: self.pi,
            value: self.value,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Zeroes both heads' weights and biases.
    pub fn zero_heads(&mut self) {
        for id in [self.pi.0, self.pi.1, self.value.0, self.value.1] {
            self.store.value_mut(id).fill(T::zero());
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.cfg;
        match shape {
            [n, ch, h, w] if *n > 0 && *ch == c.in_channels && *h == c.size && *w == c.size => Ok(()),
            _ => invalid(format!(
                "policy expects [n, {}, {}, {}], got {shape:?}",
                c.in_channels, c.size, c.size
            )),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, obs: Var) -> Result<(Var, Var)> {
        self.forward_with(&self.store, g, obs)
    }

    /// `(logits [n, actions], value [n, 1])`.
    pub fn forward_with(&self, store: &ParamStore<T>, g: &mut Graph<T>, obs: Var) -> Result<(Var, Var)> {
        self.check_input(g.shape(obs))?;
        let n = g.shape(obs)[0];
        let mut h = obs;
        for (&(w, b), &(_, k)) in self.convs.iter().zip(&self.cfg.convs) {
            let (wv, bv) = (g.param(store, w), g.param(store, b));
            let c = g.conv2d(h, wv, PolicyConfig::geom(k))?;
            let c = g.channel_bias(c, bv)?;
            h = g.relu(c);
        }
        let flat = self.cfg.flat()?;
        let h = g.reshape(h, &[n, flat])?;
        let (w, b) = (g.param(store, self.fc.0), g.param(store, self.fc.1));
        let h = g.dense(h, w, b)?;
        let h = g.relu(h);
        let (w, b) = (g.param(store, self.pi.0), g.param(store, self.pi.1));
        let logits = g.dense(h, w, b)?;
        let (w, b) = (g.param(store, self.value.0), g.param(store, self.value.1));
        let value = g.dense(h, w, b)?;
        Ok((logits, value))
    }

    /// Action probabilities and values for a batch of observations.
    pub fn evaluate(&self, obs: &Tensor<T>) -> Result<(Vec<Vec<T>>, Vec<T>)> {
        let mut g = Graph::new();
        let o = g.input(obs.clone());
        let (logits, value) = self.forward(&mut g, o)?;
        let k = self.cfg.actions;
        let probs: Vec<Vec<T>> = g
            .value(logits)
            .data()
            .chunks(k)
            .map(|row| {
                let mut p = row.to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect();
        let values = g.value(value).data().to_vec();
        if probs.iter().flatten().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy outputs".into()));
        }
        Ok((probs, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_fixed() {
        let p = PolicyNet::<f32>::new(PolicyConfig::default(), 0).unwrap();
        let convs = (16 * 12 * 25 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32) + (64 * 32 * 9 + 64);
        let dense = (256 * 1024 + 256) + (9 * 256 + 9) + (256 + 1);
        assert_eq!(p.param_count(), convs + dense);
        assert_eq!(p.param_count(), POLICY_PARAMS);
        assert_eq!(p.cfg.flat().unwrap(), 1024);
    }

    #[test]
    fn outputs_simplex_and_finite_value() {
        let p = PolicyNet::<f32>::new(PolicyConfig::default(), 1).unwrap();
        let obs = Tensor::uniform(&[3, 12, 64, 64], -1.0, 1.0, &mut seeded(2));
        let (probs, values) = p.evaluate(&obs).unwrap();
        assert_eq!(probs.len(), 3);
        for row in &probs {
            assert_eq!(row.len(), 9);
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        assert!(values.iter().all(|v| v.is_finite()));
        assert_eq!(p.evaluate(&obs).unwrap(), (probs, values));
    }

    #[test]
    fn zero_heads_give_uniform_policy() {
        let mut p = PolicyNet::<f64>::new(PolicyConfig::default(), 3).unwrap();
        p.zero_heads();
        let obs = Tensor::uniform(&[1, 12, 64, 64], -1.0, 1.0, &mut seeded(4));
        let (probs, values) = p.evaluate(&obs).unwrap();
        assert!(probs[0].iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(values[0], 0.0);
    }

    #[test]
    fn wrong_observation_rejected() {
        let p = PolicyNet::<f32>::new(PolicyConfig::default(), 0).unwrap();
        assert!(p.evaluate(&Tensor::zeros(&[1, 9, 64, 64])).is_err());
    }
}
