//! Line-oriented `key = value` run configuration.
//!
//! Keys are grouped by prefix (`sim.`, `gan.`, `a3c.`, `eval.`). Unknown keys
//! are rejected, `#` starts a comment, and later sources override earlier
//! ones: defaults, then a config file, then command-line overrides.

use crate::a3c::{A3CConfig, ObsMode};
use crate::error::{file_err, Error, Result};
use crate::eval::{DriveLogConfig, SupervisedConfig, TransferConfig};
use crate::gan::{DrivePolicy, GanConfig};
use crate::nets::{DiscriminatorConfig, GeneratorConfig, PolicyConfig};
use crate::sim::{RewardConfig, SimConfig};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use vrdrive_tensor::OptimizerKind;

pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
    IntList,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
    doc: &'static str,
}

macro_rules! keys {
    ($($name:literal $kind:ident $default:literal $doc:literal;)*) => {
        &[$(Key { name: $name, kind: Kind::$kind, default: $default, doc: $doc }),*]
    };
}

const KEYS: &[Key] = keys! {
    "sim.dt" Float "0.1" "control period in seconds";
    "sim.max_steps" Int "2000" "training episode step cap";
    "sim.reward_beta" Float "0.006" "on-road reward scale";
    "sim.reward_gamma" Float "-0.025" "collision reward";
    "sim.image_size" Int "64" "square frame side: 64 for the full networks, 16 for reduced ones";
    "gan.pairs" Int "1673" "paired frames generated per stage";
    "gan.drive_policy" Text "random" "states captured by random-drive or center-follow";
    "gan.epochs" Int "200" "passes over the training pairs";
    "gan.batch" Int "16" "minibatch size";
    "gan.lambda" Float "100" "L1 weight in the generator objective";
    "gan.lr" Float "0.0002" "Adam learning rate";
    "gan.beta1" Float "0.5" "Adam first-moment decay";
    "gan.beta2" Float "0.999" "Adam second-moment decay";
    "gan.eps" Float "1e-8" "Adam epsilon";
    "gan.dropout_rate" Float "0.5" "decoder dropout rate";
    "gan.noise_mode" Bool "false" "keep decoder dropout on when translating";
    "a3c.workers" Int "12" "asynchronous worker threads";
    "a3c.lr" Float "0.01" "RMSProp learning rate";
    "a3c.rmsprop_decay" Float "0.9" "RMSProp squared-gradient decay";
    "a3c.rmsprop_eps" Float "0.1" "RMSProp epsilon, added inside the square root";
    "a3c.discount" Float "0.99" "reward discount";
    "a3c.t_max" Int "5" "rollout length per update";
    "a3c.entropy_coeff" Float "0.01" "entropy bonus weight";
    "a3c.value_coeff" Float "0.5" "critic loss weight";
    "a3c.grad_clip_norm" Float "40" "global gradient norm limit";
    "a3c.obs_mode" Text "raw" "raw, translated, real, randomized, or randomized:<n>";
    "a3c.styles" Int "10" "randomized styles when obs_mode is randomized";
    "a3c.budget" Int "200000" "global environment steps";
    "a3c.checkpoint_every" Int "0" "checkpoint period in global steps, 0 disables";
    "eval.budget" Int "200000" "global steps per transfer agent";
    "eval.seeds" IntList "0,1,2" "training seeds of the transfer comparison";
    "eval.episodes" Int "50" "greedy evaluation episodes per agent";
    "eval.max_steps" Int "500" "step cap of an evaluation episode";
    "eval.log_frames" Int "600" "frames in a generated drive log";
    "eval.swerve_prob" Float "0.1" "per-step chance of a swerve in drive logs";
    "eval.swerve_max" Int "20" "longest swerve in steps";
    "eval.sv_epochs" Int "10" "supervised baseline epochs";
    "eval.sv_batch" Int "16" "supervised baseline minibatch";
    "eval.sv_lr" Float "0.0005" "supervised baseline Adam learning rate";
};

fn key(name: &str) -> Result<&'static Key> {
    KEYS.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::Config(format!("unknown key {name:?}")))
}

fn check_value(k: &Key, v: &str) -> Result<()> {
    let ok = match k.kind {
        Kind::Int => v.parse::<u64>().is_ok(),
        Kind::Float => v.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => matches!(v, "true" | "false"),
        Kind::Text => !v.is_empty(),
        Kind::IntList => !v.is_empty() && v.split(',').all(|s| s.trim().parse::<u64>().is_ok()),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{}: bad value {v:?} ({:?} expected)", k.name, k.kind)))
    }
}

/// Every hyperparameter as text, with provenance-free precedence merging.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Sets one key, validating name and value.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let k = key(name)?;
        let v = value.trim();
        check_value(k, v)?;
        self.values.insert(k.name, v.to_string());
        Ok(())
    }

    /// Applies `key = value` lines over the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        self.merge_text(&text).map_err(|e| file_err(path, e))
    }

    /// Applies `key=value` overrides.
    pub fn merge_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn get_str(&self, name: &str) -> Result<&str> {
        key(name)?;
        Ok(&self.values[name])
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T> {
        let v = self.get_str(name)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{name}: cannot interpret {v:?}")))
    }

    pub fn get_list(&self, name: &str) -> Result<Vec<u64>> {
        self.get_str(name)?.split(',').map(|s| self.parse_item(name, s)).collect()
    }

    fn parse_item(&self, name: &str, s: &str) -> Result<u64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("{name}: bad list item {s:?}")))
    }

    /// Every key with its value and description, one per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(&format!("# {}\n{} = {}\n", k.doc, k.name, self.values[k.name]));
        }
        s
    }

    /// Writes `<dir>/config.resolved`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
        let p = dir.join(RESOLVED_FILE);
        std::fs::write(&p, self.render()).map_err(|e| file_err(&p, e))
    }

    pub fn image_size(&self) -> Result<usize> {
        match self.get("sim.image_size")? {
            s @ (16 | 64) => Ok(s),
            s => Err(Error::Config(format!("sim.image_size must be 16 or 64, got {s}"))),
        }
    }

    fn reduced(&self) -> Result<bool> {
        Ok(self.image_size()? == 16)
    }

    pub fn policy(&self) -> Result<PolicyConfig> {
        Ok(if self.reduced()? { PolicyConfig::reduced() } else { PolicyConfig::default() })
    }

    pub fn sim(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            dt: self.get("sim.dt")?,
            max_steps: self.get("sim.max_steps")?,
            reward: RewardConfig::new(self.get("sim.reward_beta")?, self.get("sim.reward_gamma")?)?,
        })
    }

    pub fn drive_policy(&self) -> Result<DrivePolicy> {
        self.get_str("gan.drive_policy")?.parse()
    }

    pub fn gan(&self) -> Result<GanConfig> {
        let (mut generator, discriminator) = if self.reduced()? {
            (GeneratorConfig::reduced(), DiscriminatorConfig::reduced())
        } else {
            (GeneratorConfig::default(), DiscriminatorConfig::default())
        };
        generator.dropout_rate = self.get("gan.dropout_rate")?;
        generator.validate()?;
        Ok(GanConfig {
            epochs: self.get("gan.epochs")?,
            batch: self.get("gan.batch")?,
            lambda: self.get("gan.lambda")?,
            optimizer: OptimizerKind::Adam {
                lr: self.get("gan.lr")?,
                beta1: self.get("gan.beta1")?,
                beta2: self.get("gan.beta2")?,
                eps: self.get("gan.eps")?,
            },
            generator,
            discriminator,
            checkpoint_dir: None,
        })
    }

    pub fn noise_mode(&self) -> Result<bool> {
        self.get("gan.noise_mode")
    }

    pub fn obs_mode(&self) -> Result<ObsMode> {
        match self.get_str("a3c.obs_mode")?.parse()? {
            ObsMode::Randomized(_) if self.get_str("a3c.obs_mode")? == "randomized" => {
                let n: usize = self.get("a3c.styles")?;
                if n == 0 {
                    return Err(Error::Config("a3c.styles must be positive".into()));
                }
                Ok(ObsMode::Randomized(n))
            }
            m => Ok(m),
        }
    }

    pub fn a3c(&self) -> Result<A3CConfig> {
        let cfg = A3CConfig {
            workers: self.get("a3c.workers")?,
            optimizer: OptimizerKind::RmsProp {
                lr: self.get("a3c.lr")?,
                decay: self.get("a3c.rmsprop_decay")?,
                eps: self.get("a3c.rmsprop_eps")?,
            },
            discount: self.get("a3c.discount")?,
            t_max: self.get("a3c.t_max")?,
            entropy_coeff: self.get("a3c.entropy_coeff")?,
            value_coeff: self.get("a3c.value_coeff")?,
            grad_clip_norm: self.get("a3c.grad_clip_norm")?,
            obs_mode: self.obs_mode()?,
            policy: self.policy()?,
            sim: self.sim()?,
            checkpoint_every: self.get("a3c.checkpoint_every")?,
            checkpoint_dir: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn a3c_budget(&self) -> Result<u64> {
        self.get("a3c.budget")
    }

    pub fn transfer(&self) -> Result<TransferConfig> {
        Ok(TransferConfig {
            budget: self.get("eval.budget")?,
            seeds: self.get_list("eval.seeds")?,
            episodes: self.get("eval.episodes")?,
            styles: self.get("a3c.styles")?,
            eval_max_steps: self.get("eval.max_steps")?,
            a3c: A3CConfig {
                obs_mode: ObsMode::RawVirtual,
                ..self.a3c()?
            },
        })
    }

    pub fn drive_log(&self) -> Result<DriveLogConfig> {
        Ok(DriveLogConfig {
            frames: self.get("eval.log_frames")?,
            size: self.image_size()?,
            swerve_prob: self.get("eval.swerve_prob")?,
            swerve_max: self.get("eval.swerve_max")?,
            ..DriveLogConfig::default()
        })
    }

    pub fn supervised(&self) -> Result<SupervisedConfig> {
        let d = SupervisedConfig::default();
        let OptimizerKind::Adam { beta1, beta2, eps, .. } = d.optimizer else {
            unreachable!("supervised default is Adam")
        };
        Ok(SupervisedConfig {
            epochs: self.get("eval.sv_epochs")?,
            batch: self.get("eval.sv_batch")?,
            optimizer: OptimizerKind::Adam {
                lr: self.get("eval.sv_lr")?,
                beta1,
                beta2,
                eps,
            },
            policy: self.policy()?,
        })
    }

    /// Names of every accepted key.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.sim().unwrap(), SimConfig::default());
        assert_eq!(c.gan().unwrap(), GanConfig::default());
        assert_eq!(c.a3c().unwrap(), A3CConfig::default());
        assert_eq!(c.transfer().unwrap(), TransferConfig::default());
        assert_eq!(c.drive_log().unwrap(), DriveLogConfig::default());
        assert_eq!(c.supervised().unwrap(), SupervisedConfig::default());
        assert!(!c.noise_mode().unwrap());
        assert_eq!(c.get::<usize>("gan.pairs").unwrap(), 1673);
        assert_eq!(c.drive_policy().unwrap(), DrivePolicy::RandomDrive);
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\n a3c.workers = 4  # trailing\n\na3c.lr=0.001\n").unwrap();
        let mut c = RunConfig::default();
        c.merge_file(&p).unwrap();
        c.merge_overrides(&["a3c.workers=2"]).unwrap();
        let a = c.a3c().unwrap();
        assert_eq!(a.workers, 2);
        assert_eq!(a.optimizer, OptimizerKind::RmsProp { lr: 0.001, decay: 0.9, eps: 0.1 });
        assert_eq!(a.t_max, 5);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(c.merge_text("a3c.wokers = 3").is_err());
        assert!(c.merge_text("a3c.workers = three").is_err());
        assert!(c.merge_text("gan.noise_mode = yes").is_err());
        assert!(c.merge_text("just words").is_err());
        assert!(c.merge_overrides(&["eval.seeds=1,x"]).is_err());
        let e = c.merge_text("\n\nfoo.bar = 1").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("foo.bar"), "{e}");
        c.set("a3c.discount", "1.5").unwrap();
        assert!(c.a3c().is_err());
    }

    #[test]
    fn reduced_preset_switches_every_network() {
        let mut c = RunConfig::default();
        c.set("sim.image_size", "16").unwrap();
        assert_eq!(c.gan().unwrap().generator, GeneratorConfig::reduced());
        assert_eq!(c.gan().unwrap().discriminator, DiscriminatorConfig::reduced());
        assert_eq!(c.a3c().unwrap().policy, PolicyConfig::reduced());
        assert_eq!(c.drive_log().unwrap().size, 16);
        c.set("sim.image_size", "32").unwrap();
        assert!(c.gan().is_err());
    }

    #[test]
    fn resolved_file_reparses_to_same_config() {
        let mut c = RunConfig::default();
        c.set("a3c.obs_mode", "randomized").unwrap();
        c.set("a3c.styles", "4").unwrap();
        c.set("eval.seeds", "5, 6").unwrap();
        assert_eq!(c.a3c().unwrap().obs_mode, ObsMode::Randomized(4));
        assert_eq!(c.get_list("eval.seeds").unwrap(), vec![5, 6]);
        let dir = tempfile::tempdir().unwrap();
        c.write_resolved(dir.path()).unwrap();
        let mut d = RunConfig::default();
        d.merge_file(&dir.path().join(RESOLVED_FILE)).unwrap();
        assert_eq!(c, d);
        assert_eq!(RunConfig::keys().count(), KEYS.len());
    }
}
