//! Actor-critic objective.

use crate::error::{invalid, Result};
use vrdrive_tensor::graph::softmax_in_place;
use vrdrive_tensor::{Graph, Real, Tensor, Var};

/// Scalar parts of one segment's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    /// Summed policy entropy over the segment.
    pub entropy: f64,
}

/// `Σ −log π(a|s)·A + value_coeff·Σ (R − v)² − entropy_coeff·Σ H(π)`.
///
/// `logits` is `[n, k]`, `values` is `[n, 1]`; advantages enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn actor_critic_loss<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    values: Var,
    actions: &[usize],
    returns: &[f64],
    advantages: &[f64],
    value_coeff: f64,
    entropy_coeff: f64,
) -> Result<(Var, LossParts)> {
    let n = actions.len();
    if n == 0 || returns.len() != n || advantages.len() != n {
        return invalid("actions, returns, and advantages must be equally long and nonempty");
    }
    let ls = g.shape(logits).to_vec();
    if ls.len() != 2 || ls[0] != n || g.shape(values) != [n, 1] {
        return invalid(format!("logits {ls:?} / values {:?} do not match {n} steps", g.shape(values)));
    }
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, actions)?;
    let adv = Tensor::new(g.shape(picked), advantages.iter().map(|&a| T::from_f64(-a)).collect())?;
    let pg = g.mul_const(picked, adv)?;
    let policy = g.sum(pg);

    let v = g.reshape(values, &[n])?;
    let r = g.input(Tensor::new(&[n], returns.iter().map(|&x| T::from_f64(x)).collect())?);
    let d = g.sub(r, v)?;
    let sq = g.square(d);
    let value = g.sum(sq);

    let p = g.softmax(logits)?;
    let plp = g.mul(p, lp)?;
    let neg_h = g.sum(plp);

    let wv = g.scale(value, T::from_f64(value_coeff));
    let we = g.scale(neg_h, T::from_f64(entropy_coeff));
    let t = g.add(policy, wv)?;
    let total = g.add(t, we)?;
    let s = |g: &Graph<T>, x: Var| g.value(x).data()[0].as_f64();
    let parts = LossParts {
        policy: s(g, policy),
        value: s(g, value),
        entropy: -s(g, neg_h),
    };
    Ok((total, parts))
}

/// Shannon entropy of the softmax of `logits`, in nats.
pub fn entropy(logits: &[f64]) -> f64 {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use vrdrive_tensor::gradcheck::{grad_check, GradCheckConfig};
    use vrdrive_tensor::ParamStore;

    #[test]
    fn uniform_entropy_is_ln9() {
        let h = entropy(&[0.0; 9]);
        assert!((h - 9f64.ln()).abs() < 1e-12);
        assert!((h - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn linear_bandit_gradient_matches_finite_differences() {
        // Two-action linear policy with a linear critic on fixed contexts.
        let mut rng = seeded(4);
        let mut st = ParamStore::<f64>::new();
        let w = st.add("w", Tensor::randn(&[2, 3], 0.7, &mut rng));
        let b = st.add("b", Tensor::randn(&[2], 0.3, &mut rng));
        let vw = st.add("vw", Tensor::randn(&[1, 3], 0.5, &mut rng));
        let vb = st.add("vb", Tensor::zeros(&[1]));
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let actions = [0, 1, 1, 0];
        let returns = [0.3, -0.2, 0.5, 0.1];
        let adv = [0.2, -0.4, 0.7, 0.05];
        let report = grad_check(
            &mut st,
            Box::new(|p: &ParamStore<f64>| {
                let mut g = Graph::new();
                let xv = g.input(x.clone());
                let (wv, bv, vwv, vbv) = (g.param(p, w), g.param(p, b), g.param(p, vw), g.param(p, vb));
                let logits = g.dense(xv, wv, bv)?;
                let values = g.dense(xv, vwv, vbv)?;
                let (l, _) = actor_critic_loss(&mut g, logits, values, &actions, &returns, &adv, 0.5, 0.01)
                    .map_err(|e| vrdrive_tensor::TensorError::InvalidArgument {
                        op: "loss",
                        msg: e.to_string(),
                    })?;
                Ok((g, l))
            }),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-5, "{:?}", report.tensors);
    }

    #[test]
    fn closed_form_policy_gradient() {
        // d/dz_j [−A·log softmax(z)_a] = A·(p_j − [j = a]).
        let z = [0.3, -0.1];
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::new(&[1, 2], z.to_vec()).unwrap());
        let v = g.input(Tensor::zeros(&[1, 1]));
        let (loss, parts) = actor_critic_loss(&mut g, l, v, &[1], &[0.0], &[2.0], 0.0, 0.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let gz = grads.wrt(l).unwrap().data();
        let mut p = z.to_vec();
        softmax_in_place(&mut p);
        assert!((gz[0] - 2.0 * p[0]).abs() < 1e-12);
        assert!((gz[1] - 2.0 * (p[1] - 1.0)).abs() < 1e-12);
        assert!((parts.policy + 2.0 * p[1].ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn entropy_bounded(logits in proptest::collection::vec(-20.0f64..20.0, 9)) {
            let h = entropy(&logits);
            prop_assert!(h >= 0.0 && h <= 9f64.ln() + 1e-12);
        }

        #[test]
        fn loss_parts_consistent(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = seeded(seed);
            let mut g = Graph::<f64>::new();
            let l = g.input(Tensor::randn(&[n, 9], 1.0, &mut rng));
            let v = g.input(Tensor::randn(&[n, 1], 1.0, &mut rng));
            let acts: Vec<usize> = (0..n).map(|i| (seed as usize + i) % 9).collect();
            let ret: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
            let adv: Vec<f64> = (0..n).map(|i| 0.5 - i as f64 * 0.2).collect();
            let (loss, p) = actor_critic_loss(&mut g, l, v, &acts, &ret, &adv, 0.5, 0.01).unwrap();
            let total = g.value(loss).data()[0];
            prop_assert!((total - (p.policy + 0.5 * p.value - 0.01 * p.entropy)).abs() < 1e-9);
            prop_assert!(p.entropy >= 0.0 && p.entropy <= n as f64 * 9f64.ln() + 1e-9);
        }
    }
}
