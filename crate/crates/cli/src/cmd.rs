use crate::{Common, TrainGan};
use anyhow::{bail, ensure, Context, Result};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use vrdrive::a3c::train::{act_greedy, train, train_from, write_curve};
use vrdrive::a3c::{FrameStack, GlobalParams, ObsMode};
use vrdrive::config::{RunConfig, RESOLVED_FILE};
use vrdrive::eval::report::{describe_recalls, reports_csv, reports_table};
use vrdrive::eval::transfer::ordering_verdicts;
use vrdrive::eval::{
    evaluate_on_log, generate_drive_log, train_supervised_baseline, transfer_experiment, LabeledDriveLog, Method,
};
use vrdrive::gan::data::MIN_PAIRS;
use vrdrive::gan::{generate_paired_data, train_stage, PairedSet, Stage, TranslationPipeline};
use vrdrive::nets::gradcheck::{layer_suite, network_suite};
use vrdrive::nets::{Checkpointable, PolicyNet};
use vrdrive::rng::{derive_seed, seeded};
use vrdrive::sim::render::render_with;
use vrdrive::sim::{make_track, reset_at, step, Camera, Frame, RenderStyle, Track, TrackSpec};
use vrdrive_tensor::gradcheck::GradCheckConfig;

/// Ratio `Ours / B-RL` reported by the transfer comparison.
const TRANSFER_RATIO: f64 = 1.2;

/// Defaults, then `--config`, then `--set`, then command flags.
fn resolve(common: &Common, flags: &[(&str, String)]) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(p) = &common.config {
        c.merge_file(p)?;
    }
    c.merge_overrides(&common.overrides)?;
    for (k, v) in flags {
        c.set(k, v).with_context(|| format!("flag for {k}"))?;
    }
    Ok(c)
}

fn echo_config(c: &RunConfig, common: &Common, out: &Path) -> Result<()> {
    c.write_resolved(out)?;
    let p = out.join(RESOLVED_FILE);
    let text = std::fs::read_to_string(&p)?;
    std::fs::write(&p, format!("# seed {}\n{text}", common.seed)).with_context(|| p.display().to_string())
}

fn parse_track(s: &str) -> Result<Track> {
    let spec = match s {
        "A" | "a" => TrackSpec::A,
        "B" | "b" => TrackSpec::B,
        _ => match s.strip_prefix("seed:").map(str::parse) {
            Some(Ok(n)) => TrackSpec::Seeded(n),
            _ => bail!("unknown track {s:?} (A, B, or seed:<n>)"),
        },
    };
    Ok(make_track(spec))
}

fn parse_style(s: &str) -> Result<RenderStyle> {
    Ok(match s {
        "virtual" => RenderStyle::Virtual,
        "parsing" => RenderStyle::Parsing,
        "real" => RenderStyle::Real,
        _ => match s.strip_prefix("randomized:").map(str::parse) {
            Some(Ok(n)) => RenderStyle::RandomizedVirtual(n),
            _ => bail!("unknown style {s:?} (virtual, parsing, real, or randomized:<seed>)"),
        },
    })
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))
}

pub fn gen_data(common: &Common, track: &str, n: Option<usize>, policy: Option<String>, out: &Path) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(n) = n {
        flags.push(("gan.pairs", n.to_string()));
    }
    if let Some(p) = policy {
        flags.push(("gan.drive_policy", p));
    }
    let cfg = resolve(common, &flags)?;
    let n: usize = cfg.get("gan.pairs")?;
    ensure!(n >= MIN_PAIRS, "refusing to generate {n} pairs; at least {MIN_PAIRS} are needed");
    let track = parse_track(track)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let cam = Camera::square(cfg.image_size()?);
    let (s1, s2) = generate_paired_data(&track, n, cfg.drive_policy()?, common.seed, cam)?;
    s1.save(&out.join("stage1"))?;
    s2.save(&out.join("stage2"))?;
    println!(
        "{} pairs per stage on {} (held out {:.1}%) -> {}",
        n,
        track.id,
        100.0 * s1.held_out_fraction(),
        out.display()
    );
    Ok(())
}

pub fn train_gan(stage: Stage, a: &TrainGan) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(e) = a.epochs {
        flags.push(("gan.epochs", e.to_string()));
    }
    let cfg = resolve(&a.common, &flags)?;
    let data = PairedSet::load(&a.data)?;
    mkdir(&a.out)?;
    echo_config(&cfg, &a.common, &a.out)?;
    let mut gan = cfg.gan()?;
    gan.checkpoint_dir = Some(a.out.clone());
    let curve_path = a.out.join(format!("{}_curve.csv", stage.tag()));
    let res = train_stage(stage, &data, &gan, a.common.seed, |r| {
        println!(
            "{stage} epoch {:>3}  d {:.4}  g_adv {:.4}  g_l1 {:.4}  holdout_l1 {:.4}",
            r.epoch, r.report.d_loss, r.report.g_adv, r.report.g_l1, r.holdout_l1
        );
    })?;
    vrdrive::gan::train::write_curve(&curve_path, &res.curve)?;
    let last = res.curve.last().map_or(res.initial_holdout_l1, |r| r.holdout_l1);
    println!(
        "{stage}: held-out L1 {:.4} -> {:.4}; checkpoints in {}",
        res.initial_holdout_l1,
        last,
        a.out.display()
    );
    Ok(())
}

pub struct AgentArgs {
    pub mode: String,
    pub styles: Option<usize>,
    pub pipeline: Option<PathBuf>,
    pub budget: Option<u64>,
    pub workers: Option<usize>,
    pub track: String,
    pub resume: Option<PathBuf>,
}

fn load_pipeline(dir: &Path, cfg: &RunConfig) -> Result<Arc<TranslationPipeline>> {
    let p = TranslationPipeline::load(dir, cfg.noise_mode()?)
        .with_context(|| format!("loading translation pipeline from {}", dir.display()))?;
    Ok(Arc::new(p))
}

pub fn train_agent(common: &Common, a: AgentArgs, out: &Path) -> Result<()> {
    let mut flags = vec![("a3c.obs_mode", a.mode.clone())];
    if let Some(s) = a.styles {
        flags.push(("a3c.styles", s.to_string()));
    }
    if let Some(b) = a.budget {
        flags.push(("a3c.budget", b.to_string()));
    }
    if let Some(w) = a.workers {
        flags.push(("a3c.workers", w.to_string()));
    }
    let cfg = resolve(common, &flags)?;
    let mut a3c = cfg.a3c()?;
    let pipeline = match (&a3c.obs_mode, &a.pipeline) {
        (ObsMode::Translated, None) => bail!("--mode translated needs --pipeline <dir with g1.ckpt and g2.ckpt>"),
        (ObsMode::Translated, Some(d)) => Some(load_pipeline(d, &cfg)?),
        _ => None,
    };
    let track = parse_track(&a.track)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    a3c.checkpoint_dir = Some(out.to_path_buf());
    let budget = cfg.a3c_budget()?;
    let outcome = match &a.resume {
        Some(p) => {
            let arch = vrdrive::nets::Archive::load(p)?;
            let g = GlobalParams::from_archive(&arch).with_context(|| format!("resuming from {}", p.display()))?;
            train_from(&a3c, &track, pipeline, budget, common.seed, g)?
        }
        None => train(&a3c, &track, pipeline, budget, common.seed)?,
    };
    write_curve(&out.join("curve.csv"), &outcome.curve)?;
    let ckpt = out.join("policy.ckpt");
    outcome.global.to_archive().save(&ckpt)?;
    let tail = &outcome.curve[outcome.curve.len().saturating_sub(10)..];
    let mean = tail.iter().map(|r| r.episode_reward).sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "{} mode on {}: {} steps, {} episodes, last-10 mean reward {:.3}, dropped segments {}, non-finite updates {}",
        a3c.obs_mode,
        track.id,
        outcome.global.step,
        outcome.curve.len(),
        mean,
        outcome.dropped_segments,
        outcome.nonfinite_updates
    );
    println!("policy -> {}", ckpt.display());
    Ok(())
}

pub fn gen_log(common: &Common, track: &str, frames: Option<usize>, out: &Path) -> Result<()> {
    let flags: Vec<_> = frames.map(|f| ("eval.log_frames", f.to_string())).into_iter().collect();
    let cfg = resolve(common, &flags)?;
    let track = parse_track(track)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let log = generate_drive_log(&track, &cfg.drive_log()?, common.seed)?;
    log.save(out)?;
    println!(
        "{} frames on {}; majority label {:.1}%",
        log.len(),
        track.id,
        100.0 * log.majority_fraction()
    );
    Ok(())
}

fn load_log(dir: &Path) -> Result<LabeledDriveLog> {
    LabeledDriveLog::load(dir).with_context(|| format!("loading drive log {}", dir.display()))
}

pub fn train_supervised(common: &Common, log: &Path, out: &Path) -> Result<()> {
    let cfg = resolve(common, &[])?;
    let log = load_log(log)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let res = train_supervised_baseline(&log, &cfg.supervised()?, common.seed)?;
    if let Some(w) = &res.warning {
        eprintln!("warning: {w}");
    }
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in res.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(out.join("losses.csv"), csv)?;
    let ckpt = out.join("policy.ckpt");
    res.policy.save(&ckpt)?;
    println!(
        "supervised baseline: train accuracy {:.2}% -> {}",
        100.0 * res.train_accuracy,
        ckpt.display()
    );
    Ok(())
}

pub fn evaluate_log(common: &Common, policy: &Path, log: &Path, method: &str, out: &Path) -> Result<()> {
    let cfg = resolve(common, &[])?;
    let method: Method = method.parse()?;
    let net = PolicyNet::<f32>::load(policy)?;
    let log = load_log(log)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let rep = evaluate_on_log(method, &net, &log)?;
    std::fs::write(out.join("eval.csv"), reports_csv(std::slice::from_ref(&rep)))?;
    print!("{}", reports_table(std::slice::from_ref(&rep)));
    if let Some(c) = &rep.confusion {
        println!("recall: {}", describe_recalls(c));
    }
    println!("majority-class rate of the log: {:.2}%", 100.0 * log.majority_fraction());
    Ok(())
}

pub fn evaluate_transfer(common: &Common, pipeline: &Path, out: &Path) -> Result<()> {
    let cfg = resolve(common, &[])?;
    let tc = cfg.transfer()?;
    let pipe = load_pipeline(pipeline, &cfg)?;
    let (source, target) = (make_track(TrackSpec::A), make_track(TrackSpec::B));
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let reports = transfer_experiment(&tc, &source, &target, pipe, |run| {
        let stem = format!("{}_seed{}", run.method.tag(), run.seed);
        write_curve(&out.join(format!("{stem}_curve.csv")), &run.curve)?;
        run.policy.save(&out.join(format!("{stem}.ckpt")))?;
        println!("{stem}: mean greedy reward {:.4}", run.mean_reward());
        Ok(())
    })?;
    std::fs::write(out.join("transfer.csv"), reports_csv(&reports))?;
    print!("{}", reports_table(&reports));
    let v = ordering_verdicts(&reports, TRANSFER_RATIO)?;
    let labels = ["Oracle >= Ours", "Ours >= DR", "Ours >= 1.2 x B-RL"];
    for (l, ok) in labels.iter().zip(v) {
        println!("{l}: {}", if ok { "holds" } else { "does not hold" });
    }
    Ok(())
}

fn frame_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| input.display().to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vrt"))
            .collect();
        v.sort();
        ensure!(!v.is_empty(), "no .vrt frames in {}", input.display());
        Ok(v)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

pub fn translate(common: &Common, pipeline: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = resolve(common, &[])?;
    let pipe = load_pipeline(pipeline, &cfg)?;
    let inputs = frame_inputs(input)?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let mut rng = seeded(derive_seed(common.seed, "translate"));
    for p in &inputs {
        let f = Frame::load(p)?;
        let (parsing, real) = pipe.translate(&f, &mut rng).with_context(|| p.display().to_string())?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        parsing.write_ppm(&out.join(format!("{stem}_parsing.ppm")))?;
        real.write_ppm(&out.join(format!("{stem}_real.ppm")))?;
        real.save(&out.join(format!("{stem}_real.vrt")))?;
    }
    println!("translated {} frames -> {}", inputs.len(), out.display());
    Ok(())
}

pub fn gradcheck(common: &Common, tolerance: f64) -> Result<()> {
    resolve(common, &[])?;
    let gc = GradCheckConfig {
        tolerance,
        seed: common.seed,
        ..GradCheckConfig::default()
    };
    let mut results = layer_suite(common.seed, &gc)?;
    results.extend(network_suite(common.seed, &gc)?);
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.passed();
        println!(
            "{:<28} max rel err {:.3e}  {}",
            r.name,
            r.report.max_rel_err(),
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    ensure!(failed.is_empty(), "gradient check failed for {}", failed.join(", "));
    Ok(())
}

pub fn render_rollout(common: &Common, policy: &Path, style: &str, track: &str, steps: u32, out: &Path) -> Result<()> {
    let cfg = resolve(common, &[])?;
    let net = PolicyNet::<f32>::load(policy)?;
    let style = parse_style(style)?;
    let track = parse_track(track)?;
    let sim = cfg.sim()?;
    mkdir(out)?;
    echo_config(&cfg, common, out)?;
    let cam = Camera::square(net.cfg.size);
    let mut state = reset_at(&track, 0.0);
    let first = render_with(&state, &track, style, cam);
    first.write_ppm(&out.join("frame_0000.ppm"))?;
    let mut stack = FrameStack::new(first);
    let mut total = 0.0;
    let mut n = 0;
    for t in 1..=steps {
        let a = act_greedy(&net, &stack.obs()?)?;
        let (next, r, done) = step(&track, &state, a, &sim)?;
        state = next;
        total += r;
        n = t;
        let f = render_with(&state, &track, style, cam);
        f.write_ppm(&out.join(format!("frame_{t:04}.ppm")))?;
        stack.push(f);
        if done {
            break;
        }
    }
    println!("{n} steps, total reward {total:.4}; frames in {}", out.display());
    Ok(())
}
