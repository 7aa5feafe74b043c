//! Progress-based evaluation: demo MSE and rollout classification.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeling::ProgressLabel;
use crate::predictor::{progress_at, ProgressPredictor};
use crate::sampler::Geometry;
use crate::trajectory::Trajectory;

/// Final-frame progress a success must exceed.
pub const SUCCESS_FINAL: f64 = 0.8;
/// Mean progress over the last third a success must exceed.
pub const SUCCESS_LAST_THIRD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RolloutClass {
    #[serde(rename = "SE")]
    Success,
    #[serde(rename = "PSE")]
    PartialSuccess,
    #[serde(rename = "FE")]
    Failure,
}

impl RolloutClass {
    pub const ALL: [RolloutClass; 3] = [Self::Success, Self::PartialSuccess, Self::Failure];

    pub fn code(self) -> &'static str {
        match self {
            Self::Success => "SE",
            Self::PartialSuccess => "PSE",
            Self::Failure => "FE",
        }
    }
}

impl fmt::Display for RolloutClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RolloutClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::validation(format!("unknown rollout class `{s}`")))
    }
}

/// First frame of the trailing third, `ceil(2T/3)`.
pub fn last_third_start(len: usize) -> usize {
    (2 * len).div_ceil(3)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median; the mean of the two middle values for even counts.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// The success rule applied to one progress trace.
pub fn is_success(progress: &[f64]) -> bool {
    let n = progress.len();
    n > 0 && progress[n - 1] > SUCCESS_FINAL && mean(&progress[last_third_start(n)..]) > SUCCESS_LAST_THIRD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLabel {
    pub rollout_id: String,
    pub class: RolloutClass,
    pub mean_progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub labels: Vec<RolloutLabel>,
    /// Median mean-progress of the non-successes; absent when every rollout
    /// is a success.
    pub xi: Option<f64>,
}

/// Labels each trace SE by the success rule, then splits the rest at the
/// median of their mean progress (ties go to PSE).
pub fn classify_rollouts(traces: &[(String, Vec<f64>)]) -> Result<Classification> {
    if let Some((id, _)) = traces.iter().find(|(_, p)| p.is_empty()) {
        return Err(Error::validation(format!("rollout `{id}` has an empty trace")));
    }
    let means: Vec<f64> = traces.iter().map(|(_, p)| mean(p)).collect();
    let success: Vec<bool> = traces.iter().map(|(_, p)| is_success(p)).collect();
    let rest: Vec<f64> = means
        .iter()
        .zip(&success)
        .filter(|(_, &s)| !s)
        .map(|(m, _)| *m)
        .collect();
    let xi = median(&rest);
    let labels = traces
        .iter()
        .zip(means.iter().zip(&success))
        .map(|((id, _), (&m, &s))| RolloutLabel {
            rollout_id: id.clone(),
            class: if s {
                RolloutClass::Success
            } else if m >= xi.expect("a non-success exists") {
                RolloutClass::PartialSuccess
            } else {
                RolloutClass::Failure
            },
            mean_progress: m,
        })
        .collect();
    Ok(Classification { labels, xi })
}

/// Correct and total counts for one ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTally {
    pub correct: usize,
    pub total: usize,
}

impl fmt::Display for ClassTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.correct, self.total)
    }
}

impl Serialize for ClassTally {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassTally {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let parse = || {
            let (a, b) = s.split_once('/')?;
            Some(ClassTally {
                correct: a.trim().parse().ok()?,
                total: b.trim().parse().ok()?,
            })
        };
        parse().ok_or_else(|| serde::de::Error::custom(format!("expected `a/b`, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub xi: Option<f64>,
    pub rho: Option<f64>,
    pub per_class: BTreeMap<RolloutClass, ClassTally>,
    pub labels: Vec<RolloutLabel>,
}

/// `(#correct - #wrong) / total` over rollouts with a ground-truth class.
pub fn score_rho(
    labels: &[RolloutLabel],
    truth: &BTreeMap<String, RolloutClass>,
) -> Result<(f64, BTreeMap<RolloutClass, ClassTally>)> {
    if labels.is_empty() {
        return Err(Error::validation("no rollouts to score"));
    }
    let mut tallies: BTreeMap<RolloutClass, ClassTally> =
        RolloutClass::ALL.iter().map(|&c| (c, ClassTally::default())).collect();
    let mut correct = 0usize;
    for l in labels {
        let t = truth
            .get(&l.rollout_id)
            .ok_or_else(|| Error::validation(format!("no ground-truth class for `{}`", l.rollout_id)))?;
        let tally = tallies.get_mut(t).expect("all classes present");
        tally.total += 1;
        if l.class == *t {
            tally.correct += 1;
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    let wrong = labels.len() - correct;
    Ok(((correct as f64 - wrong as f64) / n, tallies))
}

/// Classification plus scoring when truth is available.
pub fn evaluate_rollouts(
    traces: &[(String, Vec<f64>)],
    truth: Option<&BTreeMap<String, RolloutClass>>,
) -> Result<EvalReport> {
    let c = classify_rollouts(traces)?;
    let (rho, per_class) = match truth {
        Some(t) => {
            let (rho, tallies) = score_rho(&c.labels, t)?;
            (Some(rho), tallies)
        }
        None => (None, BTreeMap::new()),
    };
    Ok(EvalReport {
        xi: c.xi,
        rho,
        per_class,
        labels: c.labels,
    })
}

/// Mean squared error of predicted progress against labels, evaluated at
/// the last position of every admissible window of each trajectory.
pub fn demo_mse(
    predictor: &dyn ProgressPredictor,
    items: &[(&Trajectory, &[ProgressLabel])],
    geometry: &Geometry,
    exec: Exec,
) -> Result<f64> {
    let per = exec.try_map(items, |(traj, labels)| {
        if labels.len() != traj.len() {
            return Err(Error::validation(format!(
                "`{}`: {} labels for {} frames",
                traj.id,
                labels.len(),
                traj.len()
            )));
        }
        let mut sse = 0.0;
        let mut n = 0usize;
        for t in geometry.admissible_ends(traj.len()) {
            let e = progress_at(predictor, traj, t, geometry)? - labels[t].y;
            sse += e * e;
            n += 1;
        }
        Ok((sse, n))
    })?;
    let (sse, n) = per
        .into_iter()
        .fold((0.0, 0usize), |(a, b), (s, n)| (a + s, b + n));
    if n == 0 {
        return Err(Error::validation("no admissible evaluation windows"));
    }
    Ok(sse / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ConstantPredictor, OraclePredictor};
    use crate::trajectory::Frame;
    use proptest::prelude::*;

    fn trace(id: &str, p: &[f64]) -> (String, Vec<f64>) {
        (id.to_string(), p.to_vec())
    }

    #[test]
    fn success_rule() {
        assert!(is_success(&[0.1, 0.5, 0.7, 0.85, 0.9, 0.95]));
        assert!(!is_success(&[0.1, 0.5, 0.7, 0.85, 0.9, 0.75]));
        assert_eq!(last_third_start(6), 4);
        assert_eq!(last_third_start(7), 5);
        assert_eq!(last_third_start(1), 1);
    }

    #[test]
    fn median_split_examples() {
        let c = classify_rollouts(&[trace("a", &[0.2]), trace("b", &[0.4]), trace("c", &[0.6])]).unwrap();
        assert_eq!(c.xi, Some(0.4));
        let classes: Vec<_> = c.labels.iter().map(|l| l.class).collect();
        use RolloutClass::*;
        assert_eq!(classes, vec![Failure, PartialSuccess, PartialSuccess]);

        let c = classify_rollouts(&[trace("a", &[0.1]), trace("b", &[0.3])]).unwrap();
        assert!((c.xi.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(c.labels[0].class, Failure);
        assert_eq!(c.labels[1].class, PartialSuccess);
    }

    #[test]
    fn rho_examples() {
        use RolloutClass::*;
        let labels: Vec<RolloutLabel> = [Success, Success, Failure, Success]
            .iter()
            .enumerate()
            .map(|(i, &c)| RolloutLabel {
                rollout_id: i.to_string(),
                class: c,
                mean_progress: 0.0,
            })
            .collect();
        let truth: BTreeMap<_, _> = (0..4).map(|i| (i.to_string(), Success)).collect();
        let (rho, tallies) = score_rho(&labels, &truth).unwrap();
        assert_eq!(rho, 0.5);
        assert_eq!(tallies[&Success].to_string(), "3/4");
        assert_eq!(tallies[&Failure].to_string(), "0/0");

        let correct: BTreeMap<_, _> = labels.iter().map(|l| (l.rollout_id.clone(), l.class)).collect();
        assert_eq!(score_rho(&labels, &correct).unwrap().0, 1.0);
    }

    #[test]
    fn report_serializes_fractions() {
        let r = evaluate_rollouts(&[trace("a", &[0.1]), trace("b", &[0.3])], Some(&BTreeMap::from([
            ("a".to_string(), RolloutClass::Failure),
            ("b".to_string(), RolloutClass::Failure),
        ])))
        .unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_class"]["FE"], "1/2");
        assert_eq!(json["rho"], 0.0);
        let back: EvalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn demo_mse_oracle_and_constant() {
        let len = 40;
        let frames = (0..len).map(|i| Frame::new(i, 30, vec![0.0])).collect();
        let traj = Trajectory::new("d", "task", 30, frames).unwrap();
        let labels: Vec<ProgressLabel> = (0..len)
            .map(|t| ProgressLabel {
                t,
                stage: 1,
                tau: t as f64 / (len - 1) as f64,
                y: t as f64 / (len - 1) as f64,
            })
            .collect();
        let geo = Geometry { seq_len: 3, gap: 5 };
        let mut o = OraclePredictor::default();
        o.insert("d", labels.iter().map(|l| l.y).collect());
        let items = [(&traj, labels.as_slice())];
        assert_eq!(demo_mse(&o, &items, &geo, Exec::default()).unwrap(), 0.0);
        let c = demo_mse(&ConstantPredictor(0.0), &items, &geo, Exec::default()).unwrap();
        let ends = geo.admissible_ends(len);
        let expect = ends.clone().map(|t| labels[t].y.powi(2)).sum::<f64>() / ends.len() as f64;
        assert!((c - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn labels_are_a_partition(ps in proptest::collection::vec(
            proptest::collection::vec(0.0f64..=1.0, 1..20), 1..15,
        )) {
            let traces: Vec<_> = ps.iter().enumerate().map(|(i, p)| (i.to_string(), p.clone())).collect();
            let c = classify_rollouts(&traces).unwrap();
            prop_assert_eq!(c.labels.len(), traces.len());
            let truth: BTreeMap<_, _> = c.labels.iter().map(|l| (l.rollout_id.clone(), l.class)).collect();
            prop_assert_eq!(score_rho(&c.labels, &truth).unwrap().0, 1.0);
            for l in &c.labels {
                let p = &traces[l.rollout_id.parse::<usize>().unwrap()].1;
                prop_assert_eq!(l.class == RolloutClass::Success, is_success(p));
            }
        }
    }
}
