//! Evaluation reports and action-prediction accuracy on drive logs.

use super::labels::{collapse_9_to_3, label_index, label_name, Confusion, LABELS};
use super::log::LabeledDriveLog;
use crate::a3c::train::argmax_lowest;
use crate::error::{invalid, Error, Result};
use crate::nets::PolicyNet;
use std::fmt;
use std::str::FromStr;

/// Frames scored per forward pass.
const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ours,
    BRl,
    Dr,
    Sv,
    Oracle,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Ours => "Ours",
            Method::BRl => "B-RL",
            Method::Dr => "DR",
            Method::Sv => "SV",
            Method::Oracle => "Oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Ours, Method::BRl, Method::Dr, Method::Sv, Method::Oracle]
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Per-seed mean episode rewards and their spread.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RewardSummary {
    pub fn new(per_seed: Vec<f64>) -> Result<Self> {
        if per_seed.is_empty() {
            return invalid("no seeds to summarize");
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let min = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { per_seed, mean, min, max })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub confusion: Option<Confusion>,
    pub reward: Option<RewardSummary>,
}

impl EvalReport {
    /// `trace / total` of the confusion matrix.
    pub fn accuracy(&self) -> Option<f64> {
        self.confusion.and_then(|c| c.accuracy().ok())
    }

    pub const CSV_HEADER: &'static str = "method,accuracy,mean_reward,min_reward,max_reward,confusion";

    /// One CSV row; the confusion matrix is flattened row-major with `;`.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let r = self.reward.as_ref();
        let conf = self
            .confusion
            .map(|c| c.counts.iter().flatten().map(|n| n.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.method,
            opt(self.accuracy()),
            opt(r.map(|r| r.mean)),
            opt(r.map(|r| r.min)),
            opt(r.map(|r| r.max)),
            conf
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{}\n", EvalReport::CSV_HEADER);
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Aligned plain-text table of the reports.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<8} {:>9} {:>12} {:>12} {:>12}\n",
        "method", "accuracy", "mean_reward", "min", "max"
    );
    let f = |v: Option<f64>, pct: bool| match v {
        Some(x) if pct => format!("{:.2}%", 100.0 * x),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    };
    for r in reports {
        let rw = r.reward.as_ref();
        s.push_str(&format!(
            "{:<8} {:>9} {:>12} {:>12} {:>12}\n",
            r.method.tag(),
            f(r.accuracy(), true),
            f(rw.map(|x| x.mean), false),
            f(rw.map(|x| x.min), false),
            f(rw.map(|x| x.max), false),
        ));
    }
    for r in reports {
        if let Some(c) = r.confusion {
            s.push_str(&format!("\n{}\n{c}", r.method.tag()));
        }
    }
    s
}

/// Greedy nine-way actions for every frame of `log`.
pub fn predict_log(policy: &PolicyNet<f32>, log: &LabeledDriveLog) -> Result<Vec<usize>> {
    if log.is_empty() {
        return invalid("empty drive log");
    }
    let f = &log.frames[0];
    policy.check_input(&[1, policy.cfg.in_channels, f.height, f.width])?;
    let idx: Vec<usize> = (0..log.len()).collect();
    let mut out = Vec::with_capacity(log.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (probs, _) = policy.evaluate(&log.obs_batch(chunk)?)?;
        for p in &probs {
            out.push(argmax_lowest(p)?);
        }
    }
    Ok(out)
}

/// Confusion of collapsed predictions against log labels.
pub fn score_predictions(actions: &[usize], log: &LabeledDriveLog) -> Result<Confusion> {
    if actions.len() != log.len() || log.is_empty() {
        return invalid("prediction count does not match the log");
    }
    let mut c = Confusion::default();
    for (&a, &l) in actions.iter().zip(&log.labels) {
        c.add(l, collapse_9_to_3(a)?);
    }
    Ok(c)
}

/// Action-prediction accuracy of a greedy policy on a labeled log.
pub fn evaluate_on_log(method: Method, policy: &PolicyNet<f32>, log: &LabeledDriveLog) -> Result<EvalReport> {
    let confusion = score_predictions(&predict_log(policy, log)?, log)?;
    Ok(EvalReport {
        method,
        confusion: Some(confusion),
        reward: None,
    })
}

/// Per-class recall, in label order.
pub fn recalls(c: &Confusion) -> [Option<f64>; 3] {
    LABELS.map(|l| {
        let n = c.row_total(l);
        (n > 0).then(|| c.counts[label_index(l)][label_index(l)] as f64 / n as f64)
    })
}

pub fn describe_recalls(c: &Confusion) -> String {
    LABELS
        .iter()
        .zip(recalls(c))
        .map(|(&l, r)| format!("{}={}", label_name(l), r.map_or("-".into(), |x| format!("{x:.3}"))))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::labels::coast_action;
    use crate::eval::log::{generate_drive_log, DriveLogConfig};
    use crate::nets::PolicyConfig;
    use crate::sim::{make_track, TrackSpec};

    fn log() -> LabeledDriveLog {
        let cfg = DriveLogConfig {
            frames: 120,
            size: 16,
            ..DriveLogConfig::default()
        };
        generate_drive_log(&make_track(TrackSpec::B), &cfg, 2).unwrap()
    }

    #[test]
    fn perfect_and_majority_predictions() {
        let log = log();
        let perfect: Vec<usize> = log.labels.iter().map(|&l| coast_action(l)).collect();
        assert_eq!(score_predictions(&perfect, &log).unwrap().accuracy().unwrap(), 1.0);
        let mut counts = [0; 3];
        for &l in &log.labels {
            counts[label_index(l)] += 1;
        }
        let maj = (0..3).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        let c = score_predictions(&vec![maj; log.len()], &log).unwrap();
        assert!((c.accuracy().unwrap() - log.majority_fraction()).abs() < 1e-12);
        for l in LABELS {
            assert_eq!(c.row_total(l), counts[label_index(l)] as u64);
        }
    }

    #[test]
    fn policy_evaluation_is_deterministic() {
        let log = log();
        let p = PolicyNet::<f32>::new(PolicyConfig::reduced(), 3).unwrap();
        let a = evaluate_on_log(Method::BRl, &p, &log).unwrap();
        assert_eq!(a, evaluate_on_log(Method::BRl, &p, &log).unwrap());
        let c = a.confusion.unwrap();
        assert_eq!(a.accuracy().unwrap(), c.trace() as f64 / c.total() as f64);
        let big = PolicyNet::<f32>::new(PolicyConfig::default(), 3).unwrap();
        assert!(evaluate_on_log(Method::BRl, &big, &log).is_err());
    }

    #[test]
    fn table_and_csv() {
        let r = EvalReport {
            method: Method::Dr,
            confusion: None,
            reward: Some(RewardSummary::new(vec![1.0, 3.0, 2.0]).unwrap()),
        };
        assert_eq!(r.reward.as_ref().unwrap().mean, 2.0);
        assert_eq!(r.csv_row(), "DR,,2,1,3,");
        let t = reports_table(&[r]);
        assert!(t.lines().nth(1).unwrap().starts_with("DR"));
        assert_eq!("b-rl".parse::<Method>().unwrap(), Method::BRl);
    }
}
