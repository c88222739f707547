//! Adam and RMSProp.

use crate::error::{arg_err, Result};
use crate::params::ParamStore;
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// `eps` is added to the mean square inside the square root.
    RmsProp { lr: f64, decay: f64, eps: f64 },
}

impl OptimizerKind {
    /// Image translation defaults: lr 2e-4, momentum 0.5.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Actor-critic defaults: lr 0.01, decay 0.9, eps 0.1.
    pub fn rmsprop_default() -> Self {
        OptimizerKind::RmsProp {
            lr: 0.01,
            decay: 0.9,
            eps: 0.1,
        }
    }
}

/// Moment buffers for one parameter list.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    /// First moment (Adam) or unused (RMSProp).
    pub m: Vec<Tensor<T>>,
    /// Second moment.
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, shapes: &[&[usize]]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        let m = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::RmsProp { .. } => Vec::new(),
        };
        Self {
            kind,
            step: 0,
            m,
            v: zeros(),
        }
    }

    /// State sized for the trainable entries of `store`.
    pub fn for_store(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        let shapes: Vec<&[usize]> = store.trainable_ids().map(|id| store.value(id).shape()).collect();
        Self::new(kind, &shapes)
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match &mut self.kind {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::RmsProp { lr, .. } => *lr = new_lr,
        }
    }
}

/// Applies one update in place. A pure function of `(params, grads, state)`.
pub fn step_optimizer<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.v.len() {
        return arg_err(
            "step_optimizer",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.v.len()
            ),
        );
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.v) {
        p.check_same_shape("step_optimizer", g)?;
        p.check_same_shape("step_optimizer", v)?;
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let t = state.step as i32;
            let bc1 = T::from_f64(1.0 - beta1.powi(t));
            let bc2 = T::from_f64(1.0 - beta2.powi(t));
            let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
            let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let m = state.m[i].data_mut();
                let v = state.v[i].data_mut();
                for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let mhat = *mv / bc1;
                    let vhat = *vv / bc2;
                    *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        OptimizerKind::RmsProp { lr, decay, eps } => {
            let (lr, d, eps) = (T::from_f64(lr), T::from_f64(decay), T::from_f64(eps));
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let v = state.v[i].data_mut();
                for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v) {
                    *vv = d * *vv + (T::one() - d) * gv * gv;
                    *pv = *pv - lr * gv / (*vv + eps).sqrt();
                }
            }
        }
    }
    Ok(())
}

/// Applies the accumulated gradients of `store` to its trainable values.
pub fn step_store<T: Real>(store: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<()> {
    let ids: Vec<_> = store.trainable_ids().collect();
    let grads: Vec<Tensor<T>> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    apply_grads(store, &grads, state)
}

/// Applies externally computed gradients (in trainable order) to `store`.
pub fn apply_grads<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let ids: Vec<_> = store.trainable_ids().collect();
    let mut values: Vec<Tensor<T>> = ids.iter().map(|&id| std::mem::replace(store.value_mut(id), Tensor::zeros(&[0]))).collect();
    let res = {
        let mut refs: Vec<&mut Tensor<T>> = values.iter_mut().collect();
        let grefs: Vec<&Tensor<T>> = grads.iter().collect();
        step_optimizer(&mut refs, &grefs, state)
    };
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
    res
}
