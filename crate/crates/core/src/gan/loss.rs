//! Conditional adversarial and L1 objectives.

use crate::error::{Error, Result};
use crate::nets::{BnMode, Discriminator};
use vrdrive_tensor::{Graph, Real, Tensor, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossReport {
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    /// Always `g_adv + lambda·g_l1`.
    pub combined: f64,
    pub lambda: f64,
}

impl GanLossReport {
    pub fn new(d_loss: f64, g_adv: f64, g_l1: f64, lambda: f64) -> Self {
        Self {
            d_loss,
            g_adv,
            g_l1,
            combined: g_adv + lambda * g_l1,
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_adv, self.g_l1, self.combined].iter().all(|v| v.is_finite())
    }
}

fn clamp_prob<T: Real>(g: &mut Graph<T>, p: Var) -> Var {
    g.clamp(p, T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS))
}

/// `−[mean log p_real + mean log(1 − p_fake)]`.
pub fn d_loss_graph<T: Real>(g: &mut Graph<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    let pr = clamp_prob(g, p_real);
    let lr = g.log(pr);
    let real_term = g.mean(lr);
    let pf = clamp_prob(g, p_fake);
    let ones = g.input(Tensor::full(g.shape(pf), T::one()));
    let neg = g.scale(pf, -T::one());
    let q = g.add(ones, neg)?;
    let lq = g.log(q);
    let fake_term = g.mean(lq);
    let s = g.add(real_term, fake_term)?;
    Ok(g.scale(s, -T::one()))
}

/// Non-saturating generator term `−mean log p_fake`.
pub fn g_adv_graph<T: Real>(g: &mut Graph<T>, p_fake: Var) -> Var {
    let p = clamp_prob(g, p_fake);
    let l = g.log(p);
    let m = g.mean(l);
    g.scale(m, -T::one())
}

/// `mean |target − fake|`.
pub fn l1_graph<T: Real>(g: &mut Graph<T>, fake: Var, target: Var) -> Result<Var> {
    let d = g.sub(target, fake)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

fn scalar<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<f64> {
    let x = g.value(v).data()[0].as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Discriminator loss from patch probabilities.
pub fn d_loss_from_probs<T: Real>(p_real: &Tensor<T>, p_fake: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let (r, f) = (g.input(p_real.clone()), g.input(p_fake.clone()));
    let l = d_loss_graph(&mut g, r, f)?;
    scalar(&g, l, "discriminator loss")
}

/// Mean absolute difference of two equally shaped tensors.
pub fn l1<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.check_same_shape("l1", b)?;
    let n = a.numel().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / n)
}

/// Discriminator objective on one batch.
pub fn d_loss<T: Real>(
    disc: &Discriminator<T>,
    condition: &Tensor<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    bn: BnMode,
) -> Result<f64> {
    let mut g = Graph::new();
    let (c, r, f) = (g.input(condition.clone()), g.input(real.clone()), g.input(fake.clone()));
    let (pr, _) = disc.forward(&mut g, c, r, bn)?;
    let (pf, _) = disc.forward(&mut g, c, f, bn)?;
    let l = d_loss_graph(&mut g, pr, pf)?;
    scalar(&g, l, "discriminator loss")
}

/// Full loss report for a generated batch.
pub fn g_loss<T: Real>(
    disc: &Discriminator<T>,
    condition: &Tensor<T>,
    fake: &Tensor<T>,
    real: &Tensor<T>,
    lambda: f64,
    bn: BnMode,
) -> Result<GanLossReport> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut g = Graph::new();
    let (c, r, f) = (g.input(condition.clone()), g.input(real.clone()), g.input(fake.clone()));
    let (pr, _) = disc.forward(&mut g, c, r, bn)?;
    let (pf, _) = disc.forward(&mut g, c, f, bn)?;
    let dl = d_loss_graph(&mut g, pr, pf)?;
    let adv = g_adv_graph(&mut g, pf);
    let l = l1_graph(&mut g, f, r)?;
    Ok(GanLossReport::new(
        scalar(&g, dl, "discriminator loss")?,
        scalar(&g, adv, "adversarial loss")?,
        scalar(&g, l, "l1 loss")?,
        lambda,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::DiscriminatorConfig;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn zeroed_disc() -> Discriminator<f64> {
        let mut d = Discriminator::<f64>::new(DiscriminatorConfig::reduced(), 0).unwrap();
        let ids: Vec<_> = d.store.trainable_ids().collect();
        for id in ids {
            d.store.value_mut(id).fill(0.0);
        }
        d
    }

    #[test]
    fn half_probabilities_give_two_ln2() {
        let p = Tensor::full(&[2, 1, 4, 4], 0.5f64);
        let l = d_loss_from_probs(&p, &p).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // A zeroed discriminator outputs 0.5 on every patch.
        let d = zeroed_disc();
        let x = Tensor::uniform(&[3, 3, 16, 16], -1.0, 1.0, &mut seeded(1));
        let y = Tensor::uniform(&[3, 3, 16, 16], -1.0, 1.0, &mut seeded(2));
        let l = d_loss(&d, &x, &y, &x, BnMode::Batch).unwrap();
        assert!((l - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_vanishes() {
        let real = Tensor::full(&[1, 1, 4, 4], 1.0f64);
        let fake = Tensor::zeros(&[1, 1, 4, 4]);
        let l = d_loss_from_probs(&real, &fake).unwrap();
        let expect = -2.0 * (1.0 - PROB_EPS).ln();
        assert!((l - expect).abs() < 1e-15 && l < 1e-6);
        // The wrong way round is large but finite thanks to the clamp.
        let l = d_loss_from_probs(&fake, &real).unwrap();
        assert!((l + 2.0 * PROB_EPS.ln()).abs() < 1e-6);
    }

    #[test]
    fn l1_examples() {
        let a = Tensor::full(&[1, 3, 8, 8], 1.0f32);
        let b = Tensor::full(&[1, 3, 8, 8], -1.0f32);
        assert_eq!(l1(&a, &b).unwrap(), 2.0);
        let d = zeroed_disc().cast::<f32>();
        let c = Tensor::zeros(&[1, 3, 16, 16]);
        let (a, b) = (Tensor::full(&[1, 3, 16, 16], 1.0f32), Tensor::full(&[1, 3, 16, 16], -1.0f32));
        let r = g_loss(&d, &c, &a, &b, DEFAULT_LAMBDA, BnMode::Batch).unwrap();
        assert_eq!(r.g_l1, 2.0);
        let r = g_loss(&d, &c, &a, &a, DEFAULT_LAMBDA, BnMode::Batch).unwrap();
        assert_eq!(r.g_l1, 0.0);
        let r = g_loss(&d, &c, &a, &b, 0.0, BnMode::Batch).unwrap();
        assert_eq!(r.combined, r.g_adv);
        assert!(g_loss(&d, &c, &a, &b, -1.0, BnMode::Batch).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn random_discriminators_give_finite_positive_loss(seed in any::<u64>(), lambda in 0.0f64..200.0) {
            let d = Discriminator::<f64>::new(DiscriminatorConfig::reduced(), seed).unwrap();
            let mut rng = seeded(seed ^ 0x5555);
            let c = Tensor::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
            let r = Tensor::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
            let f = Tensor::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
            let dl = d_loss(&d, &c, &r, &f, BnMode::Batch).unwrap();
            prop_assert!(dl.is_finite() && dl > 0.0);
            let rep = g_loss(&d, &c, &f, &r, lambda, BnMode::Batch).unwrap();
            prop_assert_eq!(rep.combined, rep.g_adv + lambda * rep.g_l1);
            prop_assert_eq!(rep.d_loss, dl);
        }

        #[test]
        fn l1_is_a_metric(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let a = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
            let c = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
            prop_assert!(l1(&a, &b).unwrap() > 0.0);
            prop_assert_eq!(l1(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(l1(&a, &b).unwrap(), l1(&b, &a).unwrap());
            prop_assert!(l1(&a, &c).unwrap() <= l1(&a, &b).unwrap() + l1(&b, &c).unwrap() + 1e-12);
        }
    }
}
