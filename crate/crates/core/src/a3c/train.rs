//! Asynchronous workers sharing one set of policy-value parameters.

use super::env::{Env, ObsMode, Renderer};
use super::loss::actor_critic_loss;
use super::returns::{n_step_returns, RolloutSegment, Transition};
use crate::error::{invalid, Error, Result};
use crate::gan::TranslationPipeline;
use crate::nets::{Archive, Checkpointable, PolicyConfig, PolicyNet};
use crate::rng::{derive_indexed, derive_seed, seeded, Rng};
use crate::sim::render::{randomized_styles, Camera, RenderStyle};
use crate::sim::{SimConfig, Track};
use rand::Rng as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::time::Instant;
use vrdrive_tensor::optim::apply_grads;
use vrdrive_tensor::{Graph, OptimizerKind, OptimizerState, Tensor};

pub const CURVE_HEADER: &str = "wall_clock_s,global_step,worker_id,episode_reward,episode_len";

#[derive(Clone, Debug, PartialEq)]
pub struct A3CConfig {
    pub workers: usize,
    pub optimizer: OptimizerKind,
    pub discount: f64,
    pub t_max: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub grad_clip_norm: f64,
    pub obs_mode: ObsMode,
    pub policy: PolicyConfig,
    pub sim: SimConfig,
    /// Save `policy_step<K·i>.ckpt` whenever the global step crosses a
    /// multiple `K·i` of this; 0 disables.
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for A3CConfig {
    fn default() -> Self {
        Self {
            workers: 12,
            optimizer: OptimizerKind::rmsprop_default(),
            discount: 0.99,
            t_max: 5,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            grad_clip_norm: 40.0,
            obs_mode: ObsMode::RawVirtual,
            policy: PolicyConfig::default(),
            sim: SimConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl A3CConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return invalid("need at least one worker");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return invalid(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if self.t_max == 0 {
            return invalid("t_max must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return invalid("grad_clip_norm must be positive");
        }
        if !(self.entropy_coeff >= 0.0 && self.value_coeff >= 0.0) {
            return invalid("loss coefficients must be non-negative");
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return invalid("checkpoint_every set without a checkpoint directory");
        }
        Ok(())
    }
}

/// Shared parameters, optimizer statistics, and step counter.
#[derive(Clone, Debug)]
pub struct GlobalParams {
    pub net: PolicyNet<f32>,
    pub opt: OptimizerState<f32>,
    /// Environment steps consumed by applied segments.
    pub step: u64,
}

impl GlobalParams {
    pub fn new(net: PolicyNet<f32>, kind: OptimizerKind) -> Self {
        let opt = OptimizerState::for_store(kind, &net.store);
        Self { net, opt, step: 0 }
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = self.net.to_archive();
        a.put_optimizer("opt.", &self.opt);
        a.set("global_step", self.step);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let net = PolicyNet::from_archive(a)?;
        let opt = a.take_optimizer("opt.", &net.store)?;
        Ok(Self {
            net,
            opt,
            step: a.parse("global_step")?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub wall_clock_s: f64,
    pub global_step: u64,
    pub worker_id: usize,
    pub episode_reward: f64,
    pub episode_len: u32,
}

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.3},{},{},{},{}",
            self.wall_clock_s, self.global_step, self.worker_id, self.episode_reward, self.episode_len
        )
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.global_step == other.global_step
            && self.worker_id == other.worker_id
            && self.episode_reward.to_bits() == other.episode_reward.to_bits()
            && self.episode_len == other.episode_len
    }
}

pub fn write_curve(path: &Path, curve: &[EpisodeRecord]) -> Result<()> {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in curve {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| crate::error::file_err(path, e))
}

pub struct TrainOutcome {
    pub global: GlobalParams,
    /// Completed episodes in the order they finished.
    pub curve: Vec<EpisodeRecord>,
    pub updates_per_worker: Vec<u64>,
    pub dropped_segments: u64,
    /// Updates after which some global parameter was non-finite.
    pub nonfinite_updates: u64,
}

impl TrainOutcome {
    pub fn policy(&self) -> &PolicyNet<f32> {
        &self.global.net
    }
}

struct Shared {
    global: Mutex<GlobalParams>,
    curve: Mutex<Vec<EpisodeRecord>>,
    stats: Mutex<(Vec<u64>, u64, u64)>,
    abort: AtomicBool,
    start: Instant,
    budget: u64,
}

/// Samples an index from a probability vector.
pub fn sample_action(probs: &[f32], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p as f64;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Most probable action; ties go to the lowest index.
pub fn argmax_lowest(probs: &[f32]) -> Result<usize> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("action probabilities".into()));
    }
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Greedy action for one stacked observation.
pub fn act_greedy(net: &PolicyNet<f32>, obs: &Tensor<f32>) -> Result<usize> {
    let (probs, _) = net.evaluate(obs)?;
    argmax_lowest(&probs[0])
}

/// Segment gradients in trainable order, clipped to `cfg.grad_clip_norm`.
fn segment_grads(net: &mut PolicyNet<f32>, seg: &RolloutSegment, cfg: &A3CConfig) -> Result<Option<Vec<Tensor<f32>>>> {
    let (returns, adv) = n_step_returns(seg, cfg.discount)?;
    let obs: Vec<&Tensor<f32>> = seg.transitions.iter().map(|t| &t.obs).collect();
    let actions: Vec<usize> = seg.transitions.iter().map(|t| t.action).collect();
    let mut g = Graph::new();
    let o = g.input(Tensor::stack_batch(&obs)?);
    let (logits, values) = net.forward(&mut g, o)?;
    let (loss, _) = actor_critic_loss(&mut g, logits, values, &actions, &returns, &adv, cfg.value_coeff, cfg.entropy_coeff)?;
    let grads = g.backward(loss)?;
    net.store.zero_grads();
    g.accumulate_param_grads(&grads, &mut net.store)?;
    if !net.store.grads_finite() {
        return Ok(None);
    }
    net.store.clip_grad_norm(cfg.grad_clip_norm as f32);
    Ok(Some(net.store.grads()))
}

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("policy_step{step}.ckpt"))
}

fn worker_loop(id: usize, mut env: Env, shared: &Shared, cfg: &A3CConfig, mut rng: Rng, mut local: PolicyNet<f32>) -> Result<()> {
    let (mut ep_reward, mut ep_len) = (0.0, 0u32);
    loop {
        if shared.abort.load(Ordering::Relaxed) {
            return Ok(());
        }
        {
            let g = shared.global.lock().expect("global lock");
            if g.step >= shared.budget {
                return Ok(());
            }
            local.store.copy_values_from(&g.net.store)?;
        }
        let mut seg = RolloutSegment::default();
        let mut done = false;
        while seg.len() < cfg.t_max && !done {
            let obs = env.obs()?;
            let (probs, values) = local.evaluate(&obs)?;
            let action = sample_action(&probs[0], &mut rng);
            let (reward, d) = env.step(action)?;
            done = d;
            ep_reward += reward;
            ep_len += 1;
            seg.transitions.push(Transition {
                obs,
                action,
                reward,
                done,
                value_est: values[0] as f64,
            });
        }
        if !done {
            seg.bootstrap = local.evaluate(&env.obs()?)?.1[0] as f64;
        }
        let grads = segment_grads(&mut local, &seg, cfg)?;
        let step_now = {
            let mut g = shared.global.lock().expect("global lock");
            match &grads {
                Some(gr) => {
                    let GlobalParams { net, opt, step } = &mut *g;
                    apply_grads(&mut net.store, gr, opt)?;
                    let before = *step;
                    *step += seg.len() as u64;
                    let finite = net.store.all_finite();
                    let mut st = shared.stats.lock().expect("stats lock");
                    st.0[id] += 1;
                    if !finite {
                        st.2 += 1;
                    }
                    if let (k @ 1.., Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
                        let now = *step;
                        if before / k != now / k {
                            g.to_archive().save(&checkpoint_path(dir, now / k * k))?;
                        }
                    }
                }
                None => shared.stats.lock().expect("stats lock").1 += 1,
            }
            g.step
        };
        if done {
            shared.curve.lock().expect("curve lock").push(EpisodeRecord {
                wall_clock_s: shared.start.elapsed().as_secs_f64(),
                global_step: step_now,
                worker_id: id,
                episode_reward: ep_reward,
                episode_len: ep_len,
            });
            ep_reward = 0.0;
            ep_len = 0;
            env.start_episode(true)?;
        }
    }
}

/// Frame source for worker `id`.
fn renderer_for(
    id: usize,
    cfg: &A3CConfig,
    pipeline: Option<&Arc<TranslationPipeline>>,
    styles: &[RenderStyle],
    seed: u64,
) -> Result<Renderer> {
    Ok(match &cfg.obs_mode {
        ObsMode::RawVirtual => Renderer::Style(RenderStyle::Virtual),
        ObsMode::Real => Renderer::Style(RenderStyle::Real),
        ObsMode::Randomized(_) => Renderer::Cycle {
            styles: styles.to_vec(),
            next: id % styles.len(),
        },
        ObsMode::Translated => Renderer::Translate {
            pipeline: Arc::clone(pipeline.ok_or_else(|| Error::InvalidArgument("translated mode needs a pipeline".into()))?),
            rng: seeded(derive_indexed(seed, "translate-noise", id as u64)),
        },
    })
}

/// Trains from a fresh policy until `budget_steps` environment steps have
/// been applied.
pub fn train(
    cfg: &A3CConfig,
    track: &Track,
    pipeline: Option<Arc<TranslationPipeline>>,
    budget_steps: u64,
    seed: u64,
) -> Result<TrainOutcome> {
    let net = PolicyNet::new(cfg.policy.clone(), derive_seed(seed, "policy-init"))?;
    train_from(cfg, track, pipeline, budget_steps, seed, GlobalParams::new(net, cfg.optimizer))
}

/// Continues training `global` until its step counter reaches `budget_steps`.
pub fn train_from(
    cfg: &A3CConfig,
    track: &Track,
    pipeline: Option<Arc<TranslationPipeline>>,
    budget_steps: u64,
    seed: u64,
    global: GlobalParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if budget_steps == 0 {
        return invalid("step budget must be positive");
    }
    if cfg.obs_mode == ObsMode::Translated && pipeline.is_none() {
        return invalid("translated observations need a translation pipeline");
    }
    if global.net.cfg != cfg.policy {
        return invalid("policy checkpoint does not match the configured architecture");
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::file_err(dir, e))?;
    }
    let styles = match cfg.obs_mode {
        ObsMode::Randomized(n) => randomized_styles(n, derive_seed(seed, "styles"))?,
        _ => Vec::new(),
    };
    let camera = Camera::square(cfg.policy.size);
    let track = Arc::new(track.clone());
    let mut envs = Vec::with_capacity(cfg.workers);
    for id in 0..cfg.workers {
        let r = renderer_for(id, cfg, pipeline.as_ref(), &styles, seed)?;
        let spawn = seeded(derive_indexed(seed, "spawn", id as u64));
        envs.push(Env::new(Arc::clone(&track), cfg.sim, camera, r, spawn)?);
    }
    let local = global.net.clone();
    let shared = Shared {
        global: Mutex::new(global),
        curve: Mutex::new(Vec::new()),
        stats: Mutex::new((vec![0; cfg.workers], 0, 0)),
        abort: AtomicBool::new(false),
        start: Instant::now(),
        budget: budget_steps,
    };
    let barrier = Barrier::new(cfg.workers);
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = envs
            .into_iter()
            .enumerate()
            .map(|(id, env)| {
                let (shared, barrier, local) = (&shared, &barrier, local.clone());
                let rng = seeded(derive_indexed(seed, "worker", id as u64));
                s.spawn(move || {
                    barrier.wait();
                    let r = worker_loop(id, env, shared, cfg, rng, local);
                    if r.is_err() {
                        shared.abort.store(true, Ordering::Relaxed);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let (updates_per_worker, dropped_segments, nonfinite_updates) = shared.stats.into_inner().expect("stats lock");
    Ok(TrainOutcome {
        global: shared.global.into_inner().expect("global lock"),
        curve: shared.curve.into_inner().expect("curve lock"),
        updates_per_worker,
        dropped_segments,
        nonfinite_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{make_track, TrackSpec};

    fn small_cfg(workers: usize) -> A3CConfig {
        A3CConfig {
            workers,
            policy: PolicyConfig::reduced(),
            ..A3CConfig::default()
        }
    }

    #[test]
    fn greedy_tie_break_and_one_hot() {
        assert_eq!(argmax_lowest(&[1.0 / 9.0; 9]).unwrap(), 0);
        let mut p = [0.0f32; 9];
        p[6] = 1.0;
        assert_eq!(argmax_lowest(&p).unwrap(), 6);
        assert!(argmax_lowest(&[f32::NAN; 9]).is_err());
        let mut net = PolicyNet::<f32>::new(PolicyConfig::reduced(), 0).unwrap();
        net.zero_heads();
        assert_eq!(act_greedy(&net, &Tensor::zeros(&[1, 12, 16, 16])).unwrap(), 0);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = seeded(3);
        let p = [0.1f32, 0.0, 0.6, 0.3];
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[sample_action(&p, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[2] as f64 / 20_000.0 - 0.6).abs() < 0.02);
    }

    #[test]
    fn single_worker_is_bit_deterministic() {
        let t = make_track(TrackSpec::A);
        let cfg = small_cfg(1);
        let a = train(&cfg, &t, None, 3000, 5).unwrap();
        let b = train(&cfg, &t, None, 3000, 5).unwrap();
        assert!(!a.curve.is_empty());
        assert_eq!(a.curve.len(), b.curve.len());
        assert!(a.curve.iter().zip(&b.curve).all(|(x, y)| x.same_outcome(y)));
        assert!(crate::nets::checkpoint::store_matches(&a.global.net.store, &b.global.net.store));
        assert!(a.global.step >= 3000);
    }

    #[test]
    fn many_workers_all_contribute() {
        let t = make_track(TrackSpec::B);
        let mut cfg = small_cfg(4);
        cfg.obs_mode = ObsMode::Randomized(3);
        let out = train(&cfg, &t, None, 400, 1).unwrap();
        assert!(out.global.step >= 400);
        assert!(out.updates_per_worker.iter().all(|&u| u >= 1), "{:?}", out.updates_per_worker);
        assert_eq!(out.nonfinite_updates, 0);
        assert!(out.global.net.store.all_finite());
    }

    #[test]
    fn preconditions() {
        let t = make_track(TrackSpec::A);
        let cfg = small_cfg(1);
        assert!(train(&cfg, &t, None, 0, 0).is_err());
        let tr = A3CConfig {
            obs_mode: ObsMode::Translated,
            ..cfg.clone()
        };
        assert!(train(&tr, &t, None, 10, 0).is_err());
        assert!(train(&A3CConfig { workers: 0, ..cfg.clone() }, &t, None, 10, 0).is_err());
        assert!(train(&A3CConfig { discount: 1.0, ..cfg }, &t, None, 10, 0).is_err());
    }

    #[test]
    fn checkpoints_resume_state() {
        let t = make_track(TrackSpec::A);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(1);
        cfg.checkpoint_every = 100;
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let out = train(&cfg, &t, None, 205, 2).unwrap();
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 2);
        let a = Archive::load(&checkpoint_path(dir.path(), 100)).unwrap();
        let g = GlobalParams::from_archive(&a).unwrap();
        assert!((100..100 + cfg.t_max as u64).contains(&g.step));
        assert!(g.opt.step > 0);
        let back = GlobalParams::from_archive(&out.global.to_archive()).unwrap();
        assert!(crate::nets::checkpoint::store_matches(&back.net.store, &out.global.net.store));
        assert_eq!(back.opt.v, out.global.opt.v);
    }
}
