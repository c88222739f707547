//! Four-way transfer comparison on the target track's realistic style.

use super::report::{EvalReport, Method, RewardSummary};
use crate::a3c::train::{act_greedy, train, A3CConfig, EpisodeRecord};
use crate::a3c::{Env, ObsMode, Renderer};
use crate::error::{invalid, Result};
use crate::gan::TranslationPipeline;
use crate::nets::PolicyNet;
use crate::rng::{derive_seed, seeded};
use crate::sim::render::{Camera, RenderStyle};
use crate::sim::Track;
use std::sync::Arc;

/// Smallest per-agent step budget a comparison is reported for.
pub const MIN_TRANSFER_BUDGET: u64 = 1_000;
pub const MIN_EVAL_EPISODES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct TransferConfig {
    /// Global steps per trained agent.
    pub budget: u64,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Randomized styles for the domain-randomization agent.
    pub styles: usize,
    /// Step cap of each greedy evaluation episode.
    pub eval_max_steps: u32,
    pub a3c: A3CConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            budget: 200_000,
            seeds: vec![0, 1, 2],
            episodes: MIN_EVAL_EPISODES,
            styles: 10,
            eval_max_steps: 500,
            a3c: A3CConfig::default(),
        }
    }
}

/// One trained and evaluated agent.
#[derive(Clone, Debug)]
pub struct TransferRun {
    pub method: Method,
    pub seed: u64,
    pub curve: Vec<EpisodeRecord>,
    pub eval_rewards: Vec<f64>,
    pub policy: PolicyNet<f32>,
}

impl TransferRun {
    pub fn mean_reward(&self) -> f64 {
        self.eval_rewards.iter().sum::<f64>() / self.eval_rewards.len().max(1) as f64
    }
}

/// Total rewards of greedy episodes from spawn points drawn with `seed`.
pub fn greedy_episode_rewards(
    policy: &PolicyNet<f32>,
    track: &Track,
    style: RenderStyle,
    episodes: usize,
    max_steps: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if max_steps == 0 {
        return invalid("evaluation episodes need a positive step cap");
    }
    let sim = crate::sim::SimConfig {
        max_steps,
        ..Default::default()
    };
    let cam = Camera::square(policy.cfg.size);
    let mut env = Env::new(
        Arc::new(track.clone()),
        sim,
        cam,
        Renderer::Style(style),
        seeded(derive_seed(seed, "eval-spawn")),
    )?;
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        if e > 0 {
            env.start_episode(false)?;
        }
        let mut total = 0.0;
        loop {
            let a = act_greedy(policy, &env.obs()?)?;
            let (r, done) = env.step(a)?;
            total += r;
            if done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

/// Method order of the comparison.
pub const TRANSFER_METHODS: [Method; 4] = [Method::Oracle, Method::Ours, Method::Dr, Method::BRl];

/// Trains Oracle (target track, realistic frames), Ours (source track,
/// translated frames), DR (source track, randomized styles), and B-RL
/// (source track, raw virtual frames) for every seed, then scores each with
/// greedy episodes on the target track's realistic style.
pub fn transfer_experiment(
    cfg: &TransferConfig,
    source: &Track,
    target: &Track,
    pipeline: Arc<TranslationPipeline>,
    mut on_run: impl FnMut(&TransferRun) -> Result<()>,
) -> Result<Vec<EvalReport>> {
    if cfg.budget < MIN_TRANSFER_BUDGET {
        return invalid(format!(
            "budget {} is below the minimum of {MIN_TRANSFER_BUDGET} steps; refusing to report",
            cfg.budget
        ));
    }
    if cfg.episodes < MIN_EVAL_EPISODES {
        return invalid(format!("need at least {MIN_EVAL_EPISODES} evaluation episodes"));
    }
    if cfg.seeds.is_empty() {
        return invalid("no training seeds");
    }
    if source.id == target.id {
        return invalid("source and target tracks must differ");
    }
    let mut per_method: Vec<Vec<f64>> = vec![Vec::new(); TRANSFER_METHODS.len()];
    for &seed in &cfg.seeds {
        for (k, &method) in TRANSFER_METHODS.iter().enumerate() {
            let (mode, track) = match method {
                Method::Oracle => (ObsMode::Real, target),
                Method::Ours => (ObsMode::Translated, source),
                Method::Dr => (ObsMode::Randomized(cfg.styles), source),
                _ => (ObsMode::RawVirtual, source),
            };
            let a3c = A3CConfig {
                obs_mode: mode,
                ..cfg.a3c.clone()
            };
            let pipe = (method == Method::Ours).then(|| Arc::clone(&pipeline));
            let out = train(&a3c, track, pipe, cfg.budget, derive_seed(seed, method.tag()))?;
            let eval_rewards = greedy_episode_rewards(
                &out.global.net,
                target,
                RenderStyle::Real,
                cfg.episodes,
                cfg.eval_max_steps,
                derive_seed(seed, "transfer-eval"),
            )?;
            let run = TransferRun {
                method,
                seed,
                curve: out.curve,
                eval_rewards,
                policy: out.global.net,
            };
            per_method[k].push(run.mean_reward());
            on_run(&run)?;
        }
    }
    TRANSFER_METHODS
        .iter()
        .zip(per_method)
        .map(|(&method, v)| {
            Ok(EvalReport {
                method,
                confusion: None,
                reward: Some(RewardSummary::new(v)?),
            })
        })
        .collect()
}

/// Checks `Oracle ≥ Ours`, `Ours ≥ DR`, and `Ours ≥ ratio·B-RL` on the seed
/// means; returns the three verdicts in that order.
pub fn ordering_verdicts(reports: &[EvalReport], ratio: f64) -> Result<[bool; 3]> {
    let mean = |m: Method| {
        reports
            .iter()
            .find(|r| r.method == m)
            .and_then(|r| r.reward.as_ref())
            .map(|r| r.mean)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("no reward summary for {m}")))
    };
    let (o, u, d, b) = (mean(Method::Oracle)?, mean(Method::Ours)?, mean(Method::Dr)?, mean(Method::BRl)?);
    Ok([o >= u, u >= d, u >= ratio * b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Generator, GeneratorConfig, PolicyConfig};
    use crate::sim::{make_track, TrackSpec};

    fn pipeline() -> Arc<TranslationPipeline> {
        let g1 = Generator::new(GeneratorConfig::reduced(), 1).unwrap();
        let g2 = Generator::new(GeneratorConfig::reduced(), 2).unwrap();
        Arc::new(TranslationPipeline::new(g1, g2, false).unwrap())
    }

    fn small() -> TransferConfig {
        TransferConfig {
            budget: MIN_TRANSFER_BUDGET,
            seeds: vec![0],
            episodes: MIN_EVAL_EPISODES,
            styles: 3,
            eval_max_steps: 20,
            a3c: A3CConfig {
                workers: 2,
                policy: PolicyConfig::reduced(),
                ..A3CConfig::default()
            },
        }
    }

    #[test]
    fn refuses_small_budgets_and_same_tracks() {
        let (a, b) = (make_track(TrackSpec::A), make_track(TrackSpec::B));
        let cfg = TransferConfig {
            budget: MIN_TRANSFER_BUDGET - 1,
            ..small()
        };
        assert!(transfer_experiment(&cfg, &a, &b, pipeline(), |_| Ok(())).is_err());
        assert!(transfer_experiment(&small(), &a, &a, pipeline(), |_| Ok(())).is_err());
        let few = TransferConfig { episodes: 10, ..small() };
        assert!(transfer_experiment(&few, &a, &b, pipeline(), |_| Ok(())).is_err());
    }

    #[test]
    fn runs_all_four_methods_in_order() {
        let (a, b) = (make_track(TrackSpec::A), make_track(TrackSpec::B));
        let mut seen = Vec::new();
        let reps = transfer_experiment(&small(), &a, &b, pipeline(), |r| {
            assert_eq!(r.eval_rewards.len(), MIN_EVAL_EPISODES);
            seen.push(r.method);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, TRANSFER_METHODS);
        let methods: Vec<Method> = reps.iter().map(|r| r.method).collect();
        assert_eq!(methods, TRANSFER_METHODS);
        assert!(reps.iter().all(|r| r.reward.as_ref().unwrap().mean.is_finite()));
    }

    #[test]
    fn greedy_evaluation_is_reproducible() {
        let t = make_track(TrackSpec::B);
        let p = PolicyNet::<f32>::new(PolicyConfig::reduced(), 0).unwrap();
        let a = greedy_episode_rewards(&p, &t, RenderStyle::Real, 3, 30, 7).unwrap();
        assert_eq!(a, greedy_episode_rewards(&p, &t, RenderStyle::Real, 3, 30, 7).unwrap());
        assert!(greedy_episode_rewards(&p, &t, RenderStyle::Real, 3, 0, 7).is_err());
    }

    #[test]
    fn ordering_verdicts_use_seed_means() {
        let rep = |m, v: f64| EvalReport {
            method: m,
            confusion: None,
            reward: Some(RewardSummary::new(vec![v]).unwrap()),
        };
        let r = [rep(Method::Oracle, 3.0), rep(Method::Ours, 2.4), rep(Method::Dr, 2.0), rep(Method::BRl, 2.0)];
        assert_eq!(ordering_verdicts(&r, 1.2).unwrap(), [true, true, true]);
        let r = [rep(Method::Oracle, 3.0), rep(Method::Ours, 2.3), rep(Method::Dr, 2.0), rep(Method::BRl, 2.0)];
        assert_eq!(ordering_verdicts(&r, 1.2).unwrap(), [true, true, false]);
    }
}
