//! Finite-difference checks for every layer type and the reduced networks.

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::layers::{BnMode, ForwardMode};
use super::policy::{PolicyConfig, PolicyNet};
use crate::error::Result;
use crate::rng::{derive_seed, seeded};
use rand::Rng;
use vrdrive_tensor::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use vrdrive_tensor::{ConvGeom, Graph, ParamStore, Tensor, Var};

/// One named check.
#[derive(Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

type Build<'a> = Box<dyn FnMut(&ParamStore<f64>) -> vrdrive_tensor::Result<(Graph<f64>, Var)> + 'a>;

/// Loss = Σ P ⊙ out with a fixed random projection P.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> vrdrive_tensor::Result<Var> {
    let p = Tensor::randn(g.shape(out), 1.0, &mut seeded(seed));
    let m = g.mul_const(out, p)?;
    Ok(g.sum(m))
}

fn to_tensor_err(e: crate::Error) -> vrdrive_tensor::TensorError {
    vrdrive_tensor::TensorError::InvalidArgument {
        op: "network",
        msg: e.to_string(),
    }
}

fn run(name: &str, store: &mut ParamStore<f64>, build: Build, cfg: &GradCheckConfig) -> Result<CheckResult> {
    let report = grad_check(store, build, cfg)?;
    Ok(CheckResult {
        name: name.to_string(),
        report,
    })
}

/// Checks each differentiable op on shapes drawn from `seed`.
pub fn layer_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = seeded(derive_seed(seed, "layer-shapes"));
    let mut out = Vec::new();
    let n = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=3);
    let oc = rng.gen_range(1..=3);
    let s = 2 * rng.gen_range(2..=4);
    let geom = ConvGeom::new(4, 2, 1);
    let x_shape = [n, c, s, s];

    {
        let mut st = ParamStore::new();
        let x = st.add("x", Tensor::randn(&x_shape, 1.0, &mut rng));
        let w = st.add("w", Tensor::randn(&[oc, c, 4, 4], 0.5, &mut rng));
        let b = st.add("b", Tensor::randn(&[oc], 0.5, &mut rng));
        out.push(run(
            "conv2d+bias",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let (xv, wv, bv) = (g.param(p, x), g.param(p, w), g.param(p, b));
                let y = g.conv2d(xv, wv, geom)?;
                let y = g.channel_bias(y, bv)?;
                let l = project(&mut g, y, 1)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let mut st = ParamStore::new();
        let x = st.add("x", Tensor::randn(&x_shape, 1.0, &mut rng));
        let w = st.add("w", Tensor::randn(&[c, oc, 4, 4], 0.5, &mut rng));
        out.push(run(
            "deconv2d",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let (xv, wv) = (g.param(p, x), g.param(p, w));
                let y = g.deconv2d(xv, wv, geom)?;
                let l = project(&mut g, y, 2)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let mut st = ParamStore::new();
        let (fi, fo) = (rng.gen_range(2..=7), rng.gen_range(1..=5));
        let x = st.add("x", Tensor::randn(&[n, fi], 1.0, &mut rng));
        let w = st.add("w", Tensor::randn(&[fo, fi], 0.5, &mut rng));
        let b = st.add("b", Tensor::randn(&[fo], 0.5, &mut rng));
        out.push(run(
            "dense",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let (xv, wv, bv) = (g.param(p, x), g.param(p, w), g.param(p, b));
                let y = g.dense(xv, wv, bv)?;
                let l = project(&mut g, y, 3)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    for (name, mode) in [("batchnorm2d-train", BnMode::Batch), ("batchnorm2d-eval", BnMode::Running)] {
        let mut st = ParamStore::new();
        let bn_n = n.max(2);
        let x = st.add("x", Tensor::randn(&[bn_n, c, 3, 3], 1.0, &mut rng));
        let gamma = st.add("gamma", Tensor::uniform(&[c], 0.5, 1.5, &mut rng));
        let beta = st.add("beta", Tensor::randn(&[c], 0.3, &mut rng));
        let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        out.push(run(
            name,
            &mut st,
            Box::new(move |p| {
                let mut g = Graph::new();
                let (xv, gv, bv) = (g.param(p, x), g.param(p, gamma), g.param(p, beta));
                let y = match mode {
                    BnMode::Batch => g.batchnorm2d_train(xv, gv, bv, 1e-5)?.0,
                    BnMode::Running => g.batchnorm2d_eval(xv, gv, bv, &mean, &var, 1e-5)?,
                };
                let l = project(&mut g, y, 4)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    type Act = fn(&mut Graph<f64>, Var) -> vrdrive_tensor::Result<Var>;
    let acts: [(&str, Act); 6] = [
        ("leaky_relu", |g, x| Ok(g.leaky_relu(x, 0.2))),
        ("relu", |g, x| Ok(g.relu(x))),
        ("tanh", |g, x| Ok(g.tanh(x))),
        ("sigmoid", |g, x| Ok(g.sigmoid(x))),
        ("softmax", |g, x| g.softmax(x)),
        ("log_softmax", |g, x| g.log_softmax(x)),
    ];
    for (name, f) in acts {
        let mut st = ParamStore::new();
        let rows = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=9);
        let x = st.add("x", Tensor::randn(&[rows, k], 1.5, &mut rng));
        out.push(run(
            name,
            &mut st,
            Box::new(move |p| {
                let mut g = Graph::new();
                let xv = g.param(p, x);
                let y = f(&mut g, xv)?;
                let l = project(&mut g, y, 5)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let mut st = ParamStore::new();
        let x = st.add("x", Tensor::randn(&x_shape, 1.0, &mut rng));
        let mask_seed = rng.gen();
        out.push(run(
            "dropout",
            &mut st,
            Box::new(move |p| {
                let mut g = Graph::new();
                let xv = g.param(p, x);
                let y = g.dropout(xv, 0.5, &mut seeded(mask_seed))?;
                let l = project(&mut g, y, 6)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let mut st = ParamStore::new();
        let a = st.add("a", Tensor::randn(&x_shape, 1.0, &mut rng));
        let b = st.add("b", Tensor::randn(&[n, oc, s, s], 1.0, &mut rng));
        out.push(run(
            "concat_channels",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let (av, bv) = (g.param(p, a), g.param(p, b));
                let y = g.concat_channels(av, bv)?;
                let l = project(&mut g, y, 7)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let mut st = ParamStore::new();
        let k = rng.gen_range(2..=9);
        let a = st.add("a", Tensor::randn(&[n, k], 1.0, &mut rng));
        let b = st.add("b", Tensor::uniform(&[n, k], 0.05, 0.95, &mut rng));
        let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        out.push(run(
            "elementwise+reductions",
            &mut st,
            Box::new(move |p| {
                let mut g = Graph::new();
                let (av, bv) = (g.param(p, a), g.param(p, b));
                let d = g.sub(av, bv)?;
                let d = g.abs(d);
                let sq = g.square(av);
                let m = g.mul(sq, bv)?;
                let cl = g.clamp(bv, 0.1, 0.9);
                let lg = g.log(cl);
                let e = g.add(d, m)?;
                let e = g.add(e, lg)?;
                let e = g.scale(e, 0.7);
                let rows = g.sum_rows(e)?;
                let pk = g.pick(av, &picks)?;
                let r = g.add(rows, pk)?;
                let r = g.reshape(r, &[n, 1])?;
                let s = g.sum(r);
                let mn = g.mean(e);
                let l = g.add(s, mn)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    Ok(out)
}

/// Checks the reduced 16×16 generator, discriminator, and policy networks
/// end to end in double precision.
pub fn network_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = seeded(derive_seed(seed, "network-inputs"));
    {
        let gen = Generator::<f64>::new(GeneratorConfig::reduced(), derive_seed(seed, "gen"))?;
        let mut st = gen.store.clone();
        let x = Tensor::uniform(&[3, 3, 16, 16], -1.0, 1.0, &mut rng);
        let noise_seed = derive_seed(seed, "gen-noise");
        out.push(run(
            "generator-16x16",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let xv = g.input(x.clone());
                let (y, _) = gen
                    .forward_with(p, &mut g, xv, ForwardMode::TRAIN, &mut seeded(noise_seed))
                    .map_err(to_tensor_err)?;
                let l = project(&mut g, y, 8)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let disc = Discriminator::<f64>::new(DiscriminatorConfig::reduced(), derive_seed(seed, "disc"))?;
        let mut st = disc.store.clone();
        let a = Tensor::uniform(&[3, 3, 16, 16], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 3, 16, 16], -1.0, 1.0, &mut rng);
        out.push(run(
            "discriminator-16x16",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
                let (y, _) = disc
                    .forward_with(p, &mut g, av, bv, BnMode::Batch)
                    .map_err(to_tensor_err)?;
                let l = project(&mut g, y, 9)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    {
        let pol = PolicyNet::<f64>::new(PolicyConfig::reduced(), derive_seed(seed, "policy"))?;
        let mut st = pol.store.clone();
        let obs = Tensor::uniform(&[2, 12, 16, 16], -1.0, 1.0, &mut rng);
        out.push(run(
            "policy-16x16",
            &mut st,
            Box::new(|p| {
                let mut g = Graph::new();
                let o = g.input(obs.clone());
                let (logits, value) = pol.forward_with(p, &mut g, o).map_err(to_tensor_err)?;
                let lp = g.log_softmax(logits)?;
                let a = project(&mut g, lp, 10)?;
                let b = project(&mut g, value, 11)?;
                let l = g.add(a, b)?;
                Ok((g, l))
            }),
            cfg,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for seed in 0..3 {
            for r in layer_suite(seed, &GradCheckConfig::default()).unwrap() {
                assert!(r.passed(), "{} (seed {seed}): {:e}", r.name, r.report.max_rel_err());
            }
        }
    }

    #[test]
    fn reduced_networks_pass() {
        for r in network_suite(0, &GradCheckConfig::default()).unwrap() {
            assert!(r.passed(), "{}: {:?}", r.name, r.report.tensors);
        }
    }
}
