//! Supervised steering baseline on the policy architecture.

use super::labels::{coast_action, label_index};
use super::log::LabeledDriveLog;
use super::report::{predict_log, score_predictions};
use crate::error::{invalid, Result};
use crate::nets::{PolicyConfig, PolicyNet};
use crate::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use vrdrive_tensor::optim::step_store;
use vrdrive_tensor::{Graph, OptimizerKind, OptimizerState};

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub policy: PolicyConfig,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            optimizer: OptimizerKind::Adam {
                lr: 5e-4,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            policy: PolicyConfig::default(),
        }
    }
}

pub struct SupervisedOutcome {
    pub policy: PolicyNet<f32>,
    /// Mean cross-entropy per epoch.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    /// Set when the log holds a single class.
    pub warning: Option<String>,
}

/// Cross-entropy training of the nine-way head toward the coasting action
/// with the labeled steering direction.
pub fn train_supervised_baseline(log: &LabeledDriveLog, cfg: &SupervisedConfig, seed: u64) -> Result<SupervisedOutcome> {
    if log.is_empty() {
        return invalid("empty training log");
    }
    if cfg.batch == 0 {
        return invalid("batch size must be positive");
    }
    let mut present = [false; 3];
    for &l in &log.labels {
        present[label_index(l)] = true;
    }
    let warning = (present.iter().filter(|&&p| p).count() == 1)
        .then(|| "training log contains a single steering class".to_string());
    let mut net = PolicyNet::<f32>::new(cfg.policy.clone(), derive_seed(seed, "sv-init"))?;
    let mut opt = OptimizerState::for_store(cfg.optimizer, &net.store);
    let mut shuffle = seeded(derive_seed(seed, "sv-shuffle"));
    let mut order: Vec<usize> = (0..log.len()).collect();
    let targets: Vec<usize> = log.labels.iter().map(|&l| coast_action(l)).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let o = g.input(log.obs_batch(chunk)?);
            let (logits, _) = net.forward(&mut g, o)?;
            let lp = g.log_softmax(logits)?;
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let picked = g.pick(lp, &t)?;
            let m = g.mean(picked);
            let loss = g.scale(m, -1.0);
            total += g.value(loss).data()[0] as f64 * chunk.len() as f64;
            n += chunk.len();
            let grads = g.backward(loss)?;
            net.store.zero_grads();
            g.accumulate_param_grads(&grads, &mut net.store)?;
            step_store(&mut net.store, &mut opt)?;
        }
        losses.push(total / n as f64);
    }
    let train_accuracy = score_predictions(&predict_log(&net, log)?, log)?.accuracy()?;
    Ok(SupervisedOutcome {
        policy: net,
        losses,
        train_accuracy,
        warning,
    })
}
