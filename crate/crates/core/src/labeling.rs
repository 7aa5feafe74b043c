//! Subtask priors and frame-wise progress targets.
//!
//! The prior for subtask `k` is the dataset mean of `L_k / T` over valid
//! trajectories. A frame at within-segment position `tau` of stage `k`
//! receives `y = P[k-1] + alpha[k] * tau`, so every stage boundary lands on
//! the same global progress value in every trajectory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::trajectory::{index_unique, Trajectory, TrajectoryAnnotation};

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorProfile {
    pub scheme_id: String,
    /// Mean temporal proportion per stage.
    pub alpha: Vec<f64>,
    /// `P[0] = 0`, `P[k] = P[k-1] + alpha[k]`, `P[K] = 1`.
    pub cumulative: Vec<f64>,
    /// Trajectories that contributed.
    #[serde(rename = "M")]
    pub m: usize,
}

impl PriorProfile {
    /// Builds a profile from explicit proportions.
    pub fn from_alpha(scheme_id: impl Into<String>, alpha: Vec<f64>, m: usize) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::validation("prior profile needs at least one stage"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::validation(format!("prior proportions must be >= 0: {alpha:?}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("prior proportions sum to {sum}, not 1")));
        }
        let mut cumulative = Vec::with_capacity(alpha.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for a in &alpha {
            acc += a;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(PriorProfile {
            scheme_id: scheme_id.into(),
            alpha,
            cumulative,
            m,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.alpha.len()
    }

    /// Global progress for a 1-based `stage` and within-stage `tau`.
    pub fn compose(&self, stage: usize, tau: f64) -> f64 {
        (self.cumulative[stage - 1] + self.alpha[stage - 1] * tau).clamp(0.0, 1.0)
    }

    /// Inverse of [`compose`](Self::compose): the stage whose interval
    /// `[P[k-1], P[k])` holds `y` (the last stage for `y = 1`) and its `tau`.
    pub fn locate(&self, y: f64) -> (usize, f64) {
        let y = y.clamp(0.0, 1.0);
        let k = self.num_stages();
        let stage = (1..=k)
            .find(|&s| y < self.cumulative[s] && self.alpha[s - 1] > 0.0)
            .unwrap_or(k);
        let a = self.alpha[stage - 1];
        let tau = if a > 0.0 {
            ((y - self.cumulative[stage - 1]) / a).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (stage, tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressLabel {
    pub t: usize,
    /// 1-based stage index.
    #[serde(rename = "stage_k")]
    pub stage: usize,
    pub tau: f64,
    pub y: f64,
}

/// Dataset-level subtask proportions from valid annotations.
///
/// Per-stage ratios are sorted before averaging, which makes the result
/// bit-for-bit independent of trajectory order.
pub fn compute_priors(
    annotations: &[TrajectoryAnnotation],
    trajectories: &[Trajectory],
) -> Result<PriorProfile> {
    let first = annotations
        .first()
        .ok_or_else(|| Error::validation("cannot compute priors from an empty annotation set"))?;
    let k = first.segments.len();
    if k == 0 {
        return Err(Error::validation(format!(
            "annotation `{}` has no segments",
            first.trajectory_id
        )));
    }
    let by_id = index_unique(trajectories)?;

    let mut ratios = vec![Vec::with_capacity(annotations.len()); k];
    for a in annotations {
        if a.scheme_id != first.scheme_id {
            return Err(Error::validation(format!(
                "mixed annotation schemes: `{}` and `{}`",
                first.scheme_id, a.scheme_id
            )));
        }
        if a.segments.len() != k {
            return Err(Error::validation(format!(
                "`{}` has {} segments, expected {k}",
                a.trajectory_id,
                a.segments.len()
            )));
        }
        let traj = by_id.get(a.trajectory_id.as_str()).ok_or_else(|| {
            Error::validation(format!("annotation `{}` has no trajectory", a.trajectory_id))
        })?;
        let t_len = traj.len() as f64;
        for (r, seg) in ratios.iter_mut().zip(&a.segments) {
            r.push(seg.len() as f64 / t_len);
        }
    }

    let alpha: Vec<f64> = ratios
        .into_iter()
        .map(|mut r| {
            r.sort_by(f64::total_cmp);
            running_mean(&r)
        })
        .collect();
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::validation(format!(
            "subtask proportions sum to {sum}; annotations do not tile their trajectories"
        )));
    }
    PriorProfile::from_alpha(first.scheme_id.clone(), alpha, annotations.len())
}

/// Incremental mean; exact when every value is identical.
fn running_mean(xs: &[f64]) -> f64 {
    xs.iter()
        .enumerate()
        .fold(0.0, |m, (i, x)| m + (x - m) / (i + 1) as f64)
}

/// Progress labels for every frame of one annotated trajectory.
pub fn label_trajectory(
    annotation: &TrajectoryAnnotation,
    trajectory: &Trajectory,
    priors: &PriorProfile,
) -> Result<Vec<ProgressLabel>> {
    let id = &trajectory.id;
    if annotation.trajectory_id != *id {
        return Err(Error::validation(format!(
            "annotation `{}` paired with trajectory `{id}`",
            annotation.trajectory_id
        )));
    }
    if annotation.scheme_id != priors.scheme_id {
        return Err(Error::validation(format!(
            "`{id}`: annotation scheme `{}` does not match priors `{}`",
            annotation.scheme_id, priors.scheme_id
        )));
    }
    if annotation.segments.len() != priors.num_stages() {
        return Err(Error::validation(format!(
            "`{id}`: {} segments for {} prior stages",
            annotation.segments.len(),
            priors.num_stages()
        )));
    }

    let mut labels = Vec::with_capacity(trajectory.len());
    for (k, seg) in annotation.segments.iter().enumerate() {
        if seg.end <= seg.start {
            return Err(Error::validation(format!(
                "`{id}`: zero-length segment `{}` at frame {}",
                seg.label, seg.start
            )));
        }
        if seg.start != labels.len() {
            return Err(Error::validation(format!(
                "`{id}`: segment `{}` starts at {} but the previous one ended at {}",
                seg.label,
                seg.start,
                labels.len() as isize - 1
            )));
        }
        let span = (seg.end - seg.start) as f64;
        for t in seg.start..=seg.end {
            let tau = (t - seg.start) as f64 / span;
            labels.push(ProgressLabel {
                t,
                stage: k + 1,
                tau,
                y: priors.compose(k + 1, tau),
            });
        }
    }
    if labels.len() != trajectory.len() {
        return Err(Error::validation(format!(
            "`{id}`: segments cover {} of {} frames",
            labels.len(),
            trajectory.len()
        )));
    }
    Ok(labels)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub trajectories: usize,
    pub frames: usize,
    /// Frame count per stage, index 0 is stage 1.
    pub frames_per_stage: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub labels: BTreeMap<String, Vec<ProgressLabel>>,
    pub summary: LabelSummary,
}

pub fn label_dataset(
    annotations: &[TrajectoryAnnotation],
    trajectories: &[Trajectory],
    priors: &PriorProfile,
    exec: Exec,
) -> Result<LabeledDataset> {
    let by_id = index_unique(trajectories)?;
    let labeled = exec.try_map(annotations, |a| {
        let traj = by_id.get(a.trajectory_id.as_str()).ok_or_else(|| {
            Error::validation(format!("annotation `{}` has no trajectory", a.trajectory_id))
        })?;
        label_trajectory(a, traj, priors).map(|l| (a.trajectory_id.clone(), l))
    })?;

    let mut out = LabeledDataset {
        summary: LabelSummary {
            frames_per_stage: vec![0; priors.num_stages()],
            ..Default::default()
        },
        ..Default::default()
    };
    for (id, labels) in labeled {
        out.summary.trajectories += 1;
        out.summary.frames += labels.len();
        for l in &labels {
            out.summary.frames_per_stage[l.stage - 1] += 1;
        }
        if out.labels.insert(id.clone(), labels).is_some() {
            return Err(Error::validation(format!("duplicate annotation id `{id}`")));
        }
    }
    Ok(out)
}
