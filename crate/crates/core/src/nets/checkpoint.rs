//! Checkpoint archives.
//!
//! Layout: a UTF-8 text manifest
//!
//! ```text
//! VRCKPT 1
//! meta <key> <value>
//! tensor <name> <dtype> <d0>x<d1>x...
//! end
//! ```
//!
//! followed by one VRT1 blob per `tensor` line, in manifest order. Scalars
//! use `-` as their shape.

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::policy::{PolicyConfig, PolicyNet};
use crate::error::{file_err, Error, Result};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use vrdrive_tensor::{io as vrt, OptimizerKind, OptimizerState, ParamStore, Real, Tensor};

pub const HEADER: &str = "VRCKPT 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("checkpoint {what} {s:?} must be a non-empty word")));
    }
    Ok(())
}

impl Archive {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks meta key {key}")))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint meta {key} = {raw:?} does not parse")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut head = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            check_token("meta key", k)?;
            if v.contains('\n') {
                return Err(Error::InvalidArgument(format!("meta {k} spans lines")));
            }
            head += &format!("meta {k} {v}\n");
        }
        for (name, t) in &self.tensors {
            check_token("tensor name", name)?;
            head += &format!("tensor {name} f32 {}\n", shape_text(t.shape()));
        }
        head += "end\n";
        w.write_all(head.as_bytes())?;
        for (_, t) in &self.tensors {
            vrt::write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next = |r: &mut BufReader<R>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::InvalidArgument("checkpoint manifest ends early".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next(&mut r)? != HEADER {
            return Err(Error::InvalidArgument("not a checkpoint (bad header)".into()));
        }
        let mut out = Archive::default();
        let mut wanted = Vec::new();
        loop {
            let l = next(&mut r)?;
            if l == "end" {
                break;
            }
            let mut parts = l.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), Some(v)) => {
                    out.meta.insert(k.into(), v.into());
                }
                (Some("meta"), Some(k), None) => {
                    out.meta.insert(k.into(), String::new());
                }
                (Some("tensor"), Some(name), Some(rest)) => {
                    let (dtype, shape) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::InvalidArgument(format!("bad tensor line {l:?}")))?;
                    if dtype != "f32" {
                        return Err(Error::InvalidArgument(format!("tensor {name} has dtype {dtype}, expected f32")));
                    }
                    let shape =
                        parse_shape(shape).ok_or_else(|| Error::InvalidArgument(format!("bad shape in {l:?}")))?;
                    wanted.push((name.to_string(), shape));
                }
                _ => return Err(Error::InvalidArgument(format!("bad manifest line {l:?}"))),
            }
        }
        for (name, shape) in wanted {
            let t: Tensor<f32> = vrt::read_tensor(&mut r)
                .map_err(|e| Error::InvalidArgument(format!("tensor {name}: {e}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {name} stored as {:?} but manifest says {shape:?}",
                    t.shape()
                )));
            }
            out.tensors.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::InvalidArgument("trailing bytes after last tensor".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| file_err(path, e))?;
        std::fs::write(path, buf).map_err(|e| file_err(path, e))
    }

    /// Errors name the offending file.
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| file_err(path, e))?;
        Archive::read_from(f).map_err(|e| file_err(path, e))
    }

    /// Appends every entry of `store` under `prefix`.
    pub fn put_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for id in store.ids() {
            self.tensors
                .push((format!("{prefix}{}", store.name(id)), store.value(id).clone()));
        }
    }

    /// Fills `store` from entries under `prefix`, rejecting any missing,
    /// extra, or misshapen tensor.
    pub fn take_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let present = self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)).count();
        if present != store.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {present} tensors under {prefix:?}, network has {}",
                store.len()
            )));
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", store.name(id));
            let t = self
                .tensor(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks tensor {name}")))?;
            let v = store.value_mut(id);
            if t.shape() != v.shape() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    t.shape(),
                    v.shape()
                )));
            }
            v.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn put_optimizer(&mut self, prefix: &str, state: &OptimizerState<f32>) {
        match state.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                self.set(&format!("{prefix}kind"), "adam");
                self.set(&format!("{prefix}lr"), lr);
                self.set(&format!("{prefix}beta1"), beta1);
                self.set(&format!("{prefix}beta2"), beta2);
                self.set(&format!("{prefix}eps"), eps);
            }
            OptimizerKind::RmsProp { lr, decay, eps } => {
                self.set(&format!("{prefix}kind"), "rmsprop");
                self.set(&format!("{prefix}lr"), lr);
                self.set(&format!("{prefix}decay"), decay);
                self.set(&format!("{prefix}eps"), eps);
            }
        }
        self.set(&format!("{prefix}step"), state.step);
        for (i, m) in state.m.iter().enumerate() {
            self.tensors.push((format!("{prefix}m{i}"), m.clone()));
        }
        for (i, v) in state.v.iter().enumerate() {
            self.tensors.push((format!("{prefix}v{i}"), v.clone()));
        }
    }

    /// Restores an optimizer saved by [`Archive::put_optimizer`] for the
    /// trainable entries of `store`.
    pub fn take_optimizer(&self, prefix: &str, store: &ParamStore<f32>) -> Result<OptimizerState<f32>> {
        let p = |k: &str| format!("{prefix}{k}");
        let kind = match self.require(&p("kind"))? {
            "adam" => OptimizerKind::Adam {
                lr: self.parse(&p("lr"))?,
                beta1: self.parse(&p("beta1"))?,
                beta2: self.parse(&p("beta2"))?,
                eps: self.parse(&p("eps"))?,
            },
            "rmsprop" => OptimizerKind::RmsProp {
                lr: self.parse(&p("lr"))?,
                decay: self.parse(&p("decay"))?,
                eps: self.parse(&p("eps"))?,
            },
            other => return Err(Error::InvalidArgument(format!("unknown optimizer {other}"))),
        };
        let mut state = OptimizerState::for_store(kind, store);
        state.step = self.parse(&p("step"))?;
        for (label, bufs) in [("m", &mut state.m), ("v", &mut state.v)] {
            for (i, b) in bufs.iter_mut().enumerate() {
                let name = p(&format!("{label}{i}"));
                let t = self
                    .tensor(&name)
                    .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {name}")))?;
                if t.shape() != b.shape() {
                    return Err(Error::InvalidArgument(format!(
                        "{name} has shape {:?}, expected {:?}",
                        t.shape(),
                        b.shape()
                    )));
                }
                *b = t.clone();
            }
        }
        Ok(state)
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(a: &Archive, key: &str) -> Result<Vec<usize>> {
    a.require(key)?
        .split(',')
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad list entry {s:?} in {key}")))
        })
        .collect()
}

/// Networks that round-trip through an [`Archive`].
pub trait Checkpointable: Sized {
    const KIND: &'static str;
    /// Expected trainable parameter count for the default configuration.
    const DEFAULT_PARAMS: usize;
    fn write_config(&self, a: &mut Archive);
    fn from_config(a: &Archive) -> Result<Self>;
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
    fn is_default_config(&self) -> bool;

    fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        a.set("net", Self::KIND);
        a.set("params", self.store().trainable_count());
        self.write_config(&mut a);
        a.put_store("net.", self.store());
        a
    }

    fn from_archive(a: &Archive) -> Result<Self> {
        let kind = a.require("net")?;
        if kind != Self::KIND {
            return Err(Error::InvalidArgument(format!("checkpoint holds a {kind}, expected a {}", Self::KIND)));
        }
        let mut net = Self::from_config(a)?;
        let count = net.store().trainable_count();
        let stated: usize = a.parse("params")?;
        if stated != count || (net.is_default_config() && count != Self::DEFAULT_PARAMS) {
            return Err(Error::InvalidArgument(format!(
                "checkpoint declares {stated} parameters, architecture has {count}"
            )));
        }
        a.take_store("net.", net.store_mut())?;
        Ok(net)
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    fn load(path: &Path) -> Result<Self> {
        let a = Archive::load(path)?;
        Self::from_archive(&a).map_err(|e| file_err(path, e))
    }
}

impl Checkpointable for Generator<f32> {
    const KIND: &'static str = "generator";
    const DEFAULT_PARAMS: usize = super::generator::GENERATOR_PARAMS;

    fn write_config(&self, a: &mut Archive) {
        let c = &self.cfg;
        a.set("size", c.size);
        a.set("in_channels", c.in_channels);
        a.set("out_channels", c.out_channels);
        a.set("encoder", list(&c.encoder));
        a.set("decoder", list(&c.decoder));
        a.set("dropout_levels", c.dropout_levels);
        a.set("dropout_rate", c.dropout_rate);
    }

    fn from_config(a: &Archive) -> Result<Self> {
        let cfg = GeneratorConfig {
            size: a.parse("size")?,
            in_channels: a.parse("in_channels")?,
            out_channels: a.parse("out_channels")?,
            encoder: parse_list(a, "encoder")?,
            decoder: parse_list(a, "decoder")?,
            dropout_levels: a.parse("dropout_levels")?,
            dropout_rate: a.parse("dropout_rate")?,
        };
        Generator::new(cfg, 0)
    }

    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn is_default_config(&self) -> bool {
        self.cfg == GeneratorConfig::default()
    }
}

impl Checkpointable for Discriminator<f32> {
    const KIND: &'static str = "discriminator";
    const DEFAULT_PARAMS: usize = super::discriminator::DISCRIMINATOR_PARAMS;

    fn write_config(&self, a: &mut Archive) {
        a.set("size", self.cfg.size);
        a.set("image_channels", self.cfg.image_channels);
        a.set("channels", list(&self.cfg.channels));
    }

    fn from_config(a: &Archive) -> Result<Self> {
        let cfg = DiscriminatorConfig {
            size: a.parse("size")?,
            image_channels: a.parse("image_channels")?,
            channels: parse_list(a, "channels")?,
        };
        Discriminator::new(cfg, 0)
    }

    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn is_default_config(&self) -> bool {
        self.cfg == DiscriminatorConfig::default()
    }
}

impl Checkpointable for PolicyNet<f32> {
    const KIND: &'static str = "policy";
    const DEFAULT_PARAMS: usize = super::policy::POLICY_PARAMS;

    fn write_config(&self, a: &mut Archive) {
        let c = &self.cfg;
        a.set("size", c.size);
        a.set("in_channels", c.in_channels);
        a.set("conv_channels", list(&c.convs.iter().map(|l| l.0).collect::<Vec<_>>()));
        a.set("conv_kernels", list(&c.convs.iter().map(|l| l.1).collect::<Vec<_>>()));
        a.set("hidden", c.hidden);
        a.set("actions", c.actions);
    }

    fn from_config(a: &Archive) -> Result<Self> {
        let ch = parse_list(a, "conv_channels")?;
        let ks = parse_list(a, "conv_kernels")?;
        if ch.len() != ks.len() {
            return Err(Error::InvalidArgument("conv_channels and conv_kernels differ in length".into()));
        }
        let cfg = PolicyConfig {
            size: a.parse("size")?,
            in_channels: a.parse("in_channels")?,
            convs: ch.into_iter().zip(ks).collect(),
            hidden: a.parse("hidden")?,
            actions: a.parse("actions")?,
        };
        PolicyNet::new(cfg, 0)
    }

    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn is_default_config(&self) -> bool {
        self.cfg == PolicyConfig::default()
    }
}

/// Generic helper for tests and tools working in either precision.
pub fn store_matches<T: Real>(a: &ParamStore<T>, b: &ParamStore<T>) -> bool {
    a.check_layout(b).is_ok() && a.ids().all(|id| a.value(id).data() == b.value(id).data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn policy_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyNet::<f32>::new(PolicyConfig::default(), 5).unwrap();
        let path = dir.path().join("p.ckpt");
        p.save(&path).unwrap();
        let q = PolicyNet::<f32>::load(&path).unwrap();
        assert!(store_matches(&p.store, &q.store));
        let obs = Tensor::uniform(&[2, 12, 64, 64], -1.0, 1.0, &mut seeded(1));
        assert_eq!(p.evaluate(&obs).unwrap(), q.evaluate(&obs).unwrap());
    }

    #[test]
    fn generator_roundtrip_keeps_running_stats() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Generator::<f32>::new(GeneratorConfig::reduced(), 2).unwrap();
        let ids: Vec<_> = g.store.ids().collect();
        for id in ids {
            if !g.store.is_trainable(id) {
                g.store.value_mut(id).fill(0.5);
            }
        }
        let path = dir.path().join("g.ckpt");
        g.save(&path).unwrap();
        let h = Generator::<f32>::load(&path).unwrap();
        assert!(store_matches(&g.store, &h.store));
        let x = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut seeded(3));
        let mut r = seeded(0);
        let a = g.generate(&x, false, &mut r).unwrap();
        let b = h.generate(&x, false, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_kind_and_corruption_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        Discriminator::<f32>::new(DiscriminatorConfig::reduced(), 0)
            .unwrap()
            .save(&path)
            .unwrap();
        let err = PolicyNet::<f32>::load(&path).unwrap_err().to_string();
        assert!(err.contains("d.ckpt") && err.contains("discriminator"), "{err}");

        let mut bytes = std::fs::read(&path).unwrap();
        let at = bytes.windows(4).position(|w| w == b"VRT1").unwrap();
        bytes[at] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = Discriminator::<f32>::load(&path).unwrap_err().to_string();
        assert!(err.contains("d.ckpt") && err.contains("magic"), "{err}");

        let ok = dir.path().join("ok.ckpt");
        Discriminator::<f32>::new(DiscriminatorConfig::reduced(), 0)
            .unwrap()
            .save(&ok)
            .unwrap();
        let bytes = std::fs::read(&ok).unwrap();
        std::fs::write(&ok, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Discriminator::<f32>::load(&ok).unwrap_err().to_string().contains("ok.ckpt"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = PolicyNet::<f32>::new(PolicyConfig::default(), 0).unwrap();
        let mut a = p.to_archive();
        let (_, t) = a.tensors.iter_mut().find(|(n, _)| n == "net.fc.b").unwrap();
        *t = Tensor::zeros(&[255]);
        let err = PolicyNet::<f32>::from_archive(&a).unwrap_err().to_string();
        assert!(err.contains("fc.b"), "{err}");
        let mut b = p.to_archive();
        b.set("params", 7);
        assert!(PolicyNet::<f32>::from_archive(&b).is_err());
    }

    #[test]
    fn optimizer_state_roundtrip() {
        let p = PolicyNet::<f32>::new(PolicyConfig::reduced(), 0).unwrap();
        let mut st = OptimizerState::for_store(OptimizerKind::rmsprop_default(), &p.store);
        st.step = 17;
        st.v[0].fill(0.25);
        let mut a = p.to_archive();
        a.put_optimizer("opt.", &st);
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let back = Archive::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, a);
        let st2 = back.take_optimizer("opt.", &p.store).unwrap();
        assert_eq!(st2.step, 17);
        assert_eq!(st2.kind, st.kind);
        assert_eq!(st2.v, st.v);
    }

    #[test]
    fn manifest_is_line_oriented_text() {
        let p = PolicyNet::<f32>::new(PolicyConfig::reduced(), 0).unwrap();
        let mut buf = Vec::new();
        p.to_archive().write_to(&mut buf).unwrap();
        let end = buf.windows(4).position(|w| w == b"end\n").unwrap();
        let text = std::str::from_utf8(&buf[..end]).unwrap();
        assert!(text.starts_with("VRCKPT 1\n"));
        assert!(text.lines().any(|l| l == "tensor net.conv0.w f32 3x12x5x5"));
        assert!(text.lines().any(|l| l == "meta net policy"));
    }
}
