//! Alternating discriminator / generator training for one translation stage.

use super::data::{PairedSet, Split};
use super::loss::{d_loss_graph, g_adv_graph, l1, l1_graph, GanLossReport, DEFAULT_LAMBDA};
use crate::error::{invalid, Error, Result};
use crate::nets::{
    apply_bn_updates, BnMode, Checkpointable, Discriminator, DiscriminatorConfig, ForwardMode, Generator,
    GeneratorConfig,
};
use crate::rng::{derive_seed, seeded};
use crate::sim::render::classes_from_parsing;
use crate::sim::Frame;
use rand::seq::SliceRandom;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use vrdrive_tensor::optim::step_store;
use vrdrive_tensor::{Graph, OptimizerKind, OptimizerState, Tensor};

pub const MIN_TRAIN_PAIRS: usize = 64;
pub const CURVE_HEADER: &str = "epoch,d_loss,g_adv,g_l1,holdout_l1";
/// Held-out frames pushed through the generator at once.
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// G1: virtual frame to scene parsing.
    VirtualToParsing,
    /// G2: scene parsing to realistic frame.
    ParsingToReal,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::VirtualToParsing => "g1",
            Stage::ParsingToReal => "g2",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g1" | "virtual-to-parsing" => Ok(Stage::VirtualToParsing),
            "g2" | "parsing-to-real" => Ok(Stage::ParsingToReal),
            _ => invalid(format!("unknown stage {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Generator and discriminator are saved here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 16,
            lambda: DEFAULT_LAMBDA,
            optimizer: OptimizerKind::adam_default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            checkpoint_dir: None,
        }
    }
}

/// Mean minibatch losses of one epoch plus the held-out L1 after it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub report: GanLossReport,
    pub holdout_l1: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.report.d_loss, self.report.g_adv, self.report.g_l1, self.holdout_l1
        )
    }
}

pub struct StageResult {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub curve: Vec<EpochRecord>,
    /// Held-out L1 of the freshly initialized generator.
    pub initial_holdout_l1: f64,
}

/// Writes `curve` with a header, replacing any existing file.
pub fn write_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in curve {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| crate::error::file_err(path, e))
}

/// Appends one row, writing the header first if the file is new.
pub fn append_curve_row(path: &Path, record: &EpochRecord) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| crate::error::file_err(path, e))?;
    if fresh {
        writeln!(f, "{CURVE_HEADER}")?;
    }
    writeln!(f, "{}", record.csv_row())?;
    Ok(())
}

/// Eval-mode outputs for every pair of `split`, in order.
pub fn translate_split(gen: &Generator<f32>, data: &PairedSet, split: Split) -> Result<Vec<Frame>> {
    let pairs = data.split(split);
    let mut out = Vec::with_capacity(pairs.len());
    let mut rng = seeded(0);
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let (x, _) = PairedSet::batch::<f32>(chunk)?;
        let y = gen.generate(&x, false, &mut rng)?;
        for i in 0..chunk.len() {
            out.push(Frame::from_tensor(&y, i)?);
        }
    }
    Ok(out)
}

/// Mean absolute error of eval-mode outputs against held-out targets.
pub fn holdout_l1(gen: &Generator<f32>, data: &PairedSet) -> Result<f64> {
    let pairs = data.split(Split::HeldOut);
    if pairs.is_empty() {
        return invalid("no held-out pairs");
    }
    let mut total = 0.0;
    let mut rng = seeded(0);
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let (x, t) = PairedSet::batch::<f32>(chunk)?;
        let y = gen.generate(&x, false, &mut rng)?;
        total += l1(&y, &t)? * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Per-frame pixel-class agreement between eval-mode G1 outputs and the
/// targets' class maps on the held-out split.
pub fn holdout_class_agreement(gen: &Generator<f32>, data: &PairedSet) -> Result<Vec<f64>> {
    let outs = translate_split(gen, data, Split::HeldOut)?;
    data.split(Split::HeldOut)
        .iter()
        .zip(&outs)
        .map(|(p, y)| classes_from_parsing(y).agreement(&classes_from_parsing(&p.target)))
        .collect()
}

fn check_data(data: &PairedSet, cfg: &GanConfig) -> Result<()> {
    let n = data.split(Split::Train).len();
    if n < MIN_TRAIN_PAIRS {
        return invalid(format!("need at least {MIN_TRAIN_PAIRS} training pairs, have {n}"));
    }
    if data.split(Split::HeldOut).is_empty() {
        return invalid("paired set has no held-out pairs");
    }
    if cfg.batch == 0 {
        return invalid("batch size must be positive");
    }
    let s = cfg.generator.size;
    if let Some(p) = data.pairs.iter().find(|p| p.condition.height != s || p.condition.width != s || p.target.height != s || p.target.width != s) {
        return invalid(format!("pair {} is not {s}x{s}", p.id));
    }
    if cfg.discriminator.size != s {
        return invalid("generator and discriminator sizes differ");
    }
    Ok(())
}

fn ckpt_paths(dir: &Path, stage: Stage) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stage}.ckpt")), dir.join(format!("{stage}_disc.ckpt")))
}

/// One alternating update on a minibatch. Returns `(d_loss, g_adv, g_l1)`.
fn train_step(
    gen: &mut Generator<f32>,
    disc: &mut Discriminator<f32>,
    g_opt: &mut OptimizerState<f32>,
    d_opt: &mut OptimizerState<f32>,
    cond: Tensor<f32>,
    target: Tensor<f32>,
    lambda: f64,
    rng: &mut crate::rng::Rng,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let x = g.input(cond.clone());
    let y = g.input(target.clone());
    let (fake, g_updates) = gen.forward(&mut g, x, ForwardMode::TRAIN, rng)?;

    let d_value = {
        let mut gd = Graph::new();
        let c = gd.input(cond);
        let r = gd.input(target);
        let f = gd.input(g.value(fake).clone());
        let (pr, ur) = disc.forward(&mut gd, c, r, BnMode::Batch)?;
        let (pf, uf) = disc.forward(&mut gd, c, f, BnMode::Batch)?;
        let loss = d_loss_graph(&mut gd, pr, pf)?;
        let v = gd.value(loss).data()[0] as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {v}")));
        }
        let grads = gd.backward(loss)?;
        disc.store.zero_grads();
        gd.accumulate_param_grads(&grads, &mut disc.store)?;
        step_store(&mut disc.store, d_opt)?;
        apply_bn_updates(&mut disc.store, &ur);
        apply_bn_updates(&mut disc.store, &uf);
        v
    };

    g.set_params_frozen(true);
    let (pf, _) = disc.forward(&mut g, x, fake, BnMode::Batch)?;
    g.set_params_frozen(false);
    let adv = g_adv_graph(&mut g, pf);
    let l = l1_graph(&mut g, fake, y)?;
    let weighted = g.scale(l, lambda as f32);
    let total = g.add(adv, weighted)?;
    let (a, lv) = (g.value(adv).data()[0] as f64, g.value(l).data()[0] as f64);
    if !(a.is_finite() && lv.is_finite()) {
        return Err(Error::NonFinite(format!("generator loss adv={a} l1={lv}")));
    }
    let grads = g.backward(total)?;
    gen.store.zero_grads();
    g.accumulate_param_grads(&grads, &mut gen.store)?;
    step_store(&mut gen.store, g_opt)?;
    apply_bn_updates(&mut gen.store, &g_updates);
    if !gen.store.all_finite() || !disc.store.all_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok((d_value, a, lv))
}

/// Trains one stage. `on_epoch` sees every record as soon as it exists.
pub fn train_stage(
    stage: Stage,
    data: &PairedSet,
    cfg: &GanConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<StageResult> {
    check_data(data, cfg)?;
    let root = derive_seed(seed, stage.tag());
    let mut gen = Generator::<f32>::new(cfg.generator.clone(), derive_seed(root, "generator"))?;
    let mut disc = Discriminator::<f32>::new(cfg.discriminator.clone(), derive_seed(root, "discriminator"))?;
    let mut g_opt = OptimizerState::for_store(cfg.optimizer, &gen.store);
    let mut d_opt = OptimizerState::for_store(cfg.optimizer, &disc.store);
    let mut shuffle = seeded(derive_seed(root, "shuffle"));
    let mut noise = seeded(derive_seed(root, "noise"));

    let initial_holdout_l1 = holdout_l1(&gen, data)?;
    let mut train = data.split(Split::Train);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut last_good: Option<usize> = None;
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut shuffle);
        let (mut sd, mut sa, mut sl, mut k) = (0.0, 0.0, 0.0, 0usize);
        for chunk in train.chunks(cfg.batch) {
            let (cond, target) = PairedSet::batch::<f32>(chunk)?;
            let (d, a, l) = train_step(&mut gen, &mut disc, &mut g_opt, &mut d_opt, cond, target, cfg.lambda, &mut noise)
                .map_err(|e| match (&e, &cfg.checkpoint_dir, last_good) {
                    (Error::NonFinite(m), Some(dir), Some(ep)) => Error::NonFinite(format!(
                        "{m} during {stage} epoch {epoch}; last good checkpoint {} (epoch {ep})",
                        ckpt_paths(dir, stage).0.display()
                    )),
                    (Error::NonFinite(m), _, _) => Error::NonFinite(format!("{m} during {stage} epoch {epoch}")),
                    _ => e,
                })?;
            sd += d;
            sa += a;
            sl += l;
            k += 1;
        }
        let k = k as f64;
        let rec = EpochRecord {
            epoch,
            report: GanLossReport::new(sd / k, sa / k, sl / k, cfg.lambda),
            holdout_l1: holdout_l1(&gen, data)?,
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| crate::error::file_err(dir, e))?;
            let (gp, dp) = ckpt_paths(dir, stage);
            gen.save(&gp)?;
            disc.save(&dp)?;
            last_good = Some(epoch);
        }
        on_epoch(&rec);
        curve.push(rec);
    }
    Ok(StageResult {
        generator: gen,
        discriminator: disc,
        curve,
        initial_holdout_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::data::{generate_paired_data, DrivePolicy};
    use crate::sim::render::Camera;
    use crate::sim::track::{make_track, TrackSpec};

    fn tiny() -> (PairedSet, PairedSet, GanConfig) {
        let t = make_track(TrackSpec::A);
        let (s1, s2) = generate_paired_data(&t, 80, DrivePolicy::RandomDrive, 5, Camera::square(16)).unwrap();
        let cfg = GanConfig {
            epochs: 2,
            batch: 8,
            generator: GeneratorConfig::reduced(),
            discriminator: DiscriminatorConfig::reduced(),
            ..GanConfig::default()
        };
        (s1, s2, cfg)
    }

    #[test]
    fn curves_are_reproducible() {
        let (s1, _, cfg) = tiny();
        let mut seen = Vec::new();
        let a = train_stage(Stage::VirtualToParsing, &s1, &cfg, 11, |r| seen.push(r.epoch)).unwrap();
        let b = train_stage(Stage::VirtualToParsing, &s1, &cfg, 11, |_| {}).unwrap();
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(a.curve, b.curve);
        for r in &a.curve {
            assert!(r.report.is_finite());
            assert_eq!(r.report.combined, r.report.g_adv + cfg.lambda * r.report.g_l1);
        }
        let c = train_stage(Stage::VirtualToParsing, &s1, &cfg, 12, |_| {}).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn l1_only_training_reduces_holdout_error() {
        let (_, s2, mut cfg) = tiny();
        cfg.epochs = 4;
        cfg.optimizer = OptimizerKind::Adam {
            lr: 2e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        };
        let r = train_stage(Stage::ParsingToReal, &s2, &cfg, 3, |_| {}).unwrap();
        assert!(r.curve.last().unwrap().holdout_l1 < r.initial_holdout_l1);
    }

    #[test]
    fn bad_inputs_rejected() {
        let (s1, _, cfg) = tiny();
        let small = PairedSet {
            pairs: s1.pairs[..40].to_vec(),
        };
        assert!(train_stage(Stage::VirtualToParsing, &small, &cfg, 0, |_| {}).is_err());
        assert!(train_stage(Stage::VirtualToParsing, &s1, &GanConfig { batch: 0, ..cfg.clone() }, 0, |_| {}).is_err());
        assert!(train_stage(Stage::VirtualToParsing, &s1, &GanConfig::default(), 0, |_| {}).is_err());
    }

    #[test]
    fn checkpoints_and_curve_files() {
        let (s1, _, mut cfg) = tiny();
        let dir = tempfile::tempdir().unwrap();
        cfg.epochs = 1;
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let r = train_stage(Stage::VirtualToParsing, &s1, &cfg, 1, |_| {}).unwrap();
        let g = Generator::<f32>::load(&dir.path().join("g1.ckpt")).unwrap();
        assert!(crate::nets::checkpoint::store_matches(&g.store, &r.generator.store));
        let csv = dir.path().join("curve.csv");
        append_curve_row(&csv, &r.curve[0]).unwrap();
        append_curve_row(&csv, &r.curve[0]).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CURVE_HEADER);
        assert!(lines[1].starts_with("1,"));
    }
}
