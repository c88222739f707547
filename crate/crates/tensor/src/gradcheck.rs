//! Finite-difference verification of analytic gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use rand::seq::index::sample;
use rand::SeedableRng;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Entries probed per tensor; tensors at or below this size are probed
    /// exhaustively.
    pub samples_per_tensor: usize,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_tensor: 12,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Probes discarded because the two evaluations straddled a kink
    /// (ReLU / abs / clamp switched branch).
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance && self.tensors.iter().any(|t| t.checked > 0)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn scalar_loss(g: &Graph<f64>, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            msg: format!("loss must be scalar, got {:?}", v.shape()),
        });
    }
    let l = v.data()[0];
    if !l.is_finite() {
        return Err(TensorError::NonFinite("grad_check loss".into()));
    }
    Ok(l)
}

/// Compares the tape's gradients against central differences for every
/// trainable tensor in `store`.
///
/// `build` must construct the loss deterministically from the store (seed any
/// dropout inside it) and must not mutate anything else.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<(Graph<f64>, Var)>,
{
    let (graph, loss) = build(store)?;
    scalar_loss(&graph, loss)?;
    store.zero_grads();
    let grads = graph.backward(loss)?;
    graph.accumulate_param_grads(&grads, store)?;
    drop(graph);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).numel();
        let picks: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_tensor).into_vec()
        };
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for i in picks {
            let analytic = store.grad(id).data()[i];
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + cfg.step;
            let (gp, lp) = build(store)?;
            let plus = scalar_loss(&gp, lp)?;
            let sig_plus = gp.kink_signature();
            drop(gp);
            store.value_mut(id).data_mut()[i] = orig - cfg.step;
            let (gm, lm) = build(store)?;
            let minus = scalar_loss(&gm, lm)?;
            let sig_minus = gm.kink_signature();
            drop(gm);
            store.value_mut(id).data_mut()[i] = orig;
            if sig_plus != sig_minus {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(analytic, numeric, cfg.denominator_floor);
            check.max_rel_err = check.max_rel_err.max(err);
            check.checked += 1;
        }
        tensors.push(check);
    }
    Ok(GradCheckReport {
        tensors,
        tolerance: cfg.tolerance,
    })
}
