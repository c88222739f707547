use crate::error::Result;
use rand::Rng;
use vrdrive_tensor::{BatchStats, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by running statistics on each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Which statistics batchnorm layers normalize with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch; running averages are reported back.
    Batch,
    /// Stored running averages.
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub bn: BnMode,
    /// Dropout noise in the generator decoder.
    pub noise: bool,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode {
        bn: BnMode::Batch,
        noise: true,
    };
    pub const EVAL: ForwardMode = ForwardMode {
        bn: BnMode::Running,
        noise: false,
    };

    pub fn eval_with_noise(noise: bool) -> Self {
        ForwardMode {
            bn: BnMode::Running,
            noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BnIds {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{prefix}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(&format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            mean: store.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels])),
            var: store.add_buffer(&format!("{prefix}.running_var"), Tensor::full(&[channels], T::one())),
        }
    }

    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: BnMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Var> {
        let (gamma, beta) = (g.param(store, self.gamma), g.param(store, self.beta));
        let eps = T::from_f64(BN_EPS);
        Ok(match mode {
            BnMode::Batch => {
                let (y, stats) = g.batchnorm2d_train(x, gamma, beta, eps)?;
                updates.push(BnUpdate {
                    mean: self.mean,
                    var: self.var,
                    stats,
                });
                y
            }
            BnMode::Running => g.batchnorm2d_eval(
                x,
                gamma,
                beta,
                store.value(self.mean).data(),
                store.value(self.var).data(),
                eps,
            )?,
        })
    }
}

/// Batch statistics to fold into a layer's running averages.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

/// `running = momentum·running + (1 − momentum)·batch` for every update.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let m = T::from_f64(BN_MOMENTUM);
    let one_m = T::one() - m;
    for u in updates {
        for (r, &b) in store.value_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in store.value_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = m * *r + one_m * b;
        }
    }
}

pub(crate) fn normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, std, rng)
}

/// Uniform fan-in scaled initialization for ReLU layers.
pub(crate) fn fan_in<T: Real, R: Rng + ?Sized>(shape: &[usize], fan: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BnIds::new(&mut store, "bn", 2);
        let up = BnUpdate {
            mean: bn.mean,
            var: bn.var,
            stats: BatchStats {
                mean: vec![1.0, -2.0],
                var: vec![3.0, 0.0],
            },
        };
        apply_bn_updates(&mut store, &[up]);
        let m = store.value(bn.mean).data();
        assert!((m[0] - 0.1).abs() < 1e-12 && (m[1] + 0.2).abs() < 1e-12);
        assert!((store.value(bn.var).data()[0] - 1.2).abs() < 1e-12);
        assert!((store.value(bn.var).data()[1] - 0.9).abs() < 1e-12);
        assert!(!store.is_trainable(bn.mean));
    }

    #[test]
    fn constant_batch_normalizes_to_shift() {
        let mut store = ParamStore::<f64>::new();
        let bn = BnIds::new(&mut store, "bn", 1);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[4, 1, 2, 2], 3.5));
        let mut ups = Vec::new();
        let y = bn.apply(&mut g, &store, x, BnMode::Batch, &mut ups).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(ups.len(), 1);
    }
}
