//! Trajectories, annotation protocols and the dataset filter/split steps.
//!
//! Segment bounds are inclusive on both ends. A valid annotation names every
//! protocol subtask exactly once, in protocol order, and tiles `[0, T-1]`
//! without gaps or overlaps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub time_s: f64,
    pub features: Vec<f64>,
    #[serde(default)]
    pub joint_state: Vec<f64>,
    #[serde(default)]
    pub action: Vec<f64>,
}

impl Frame {
    pub fn new(index: usize, fps: u32, features: Vec<f64>) -> Self {
        Frame {
            index,
            time_s: index as f64 / fps as f64,
            features,
            joint_state: Vec::new(),
            action: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub task_id: String,
    pub fps: u32,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    /// Builds a trajectory, checking frame contiguity and shared dimensions.
    pub fn new(
        id: impl Into<String>,
        task_id: impl Into<String>,
        fps: u32,
        frames: Vec<Frame>,
    ) -> Result<Self> {
        let traj = Trajectory {
            id: id.into(),
            task_id: task_id.into(),
            fps,
            frames,
        };
        traj.check()?;
        Ok(traj)
    }

    pub fn check(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::validation(format!("{}: fps must be positive", self.id)));
        }
        if self.frames.len() < 2 {
            return Err(Error::validation(format!(
                "{}: need at least 2 frames, got {}",
                self.id,
                self.frames.len()
            )));
        }
        let first = &self.frames[0];
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::validation(format!(
                    "{}: frame {} carries index {}",
                    self.id, i, f.index
                )));
            }
            if f.features.len() != first.features.len()
                || f.joint_state.len() != first.joint_state.len()
                || f.action.len() != first.action.len()
            {
                return Err(Error::validation(format!(
                    "{}: frame {} dimensions differ from frame 0",
                    self.id, i
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.features.len())
    }

    pub fn action_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.action.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationProtocol {
    pub scheme_id: String,
    pub subtasks: Vec<String>,
}

impl AnnotationProtocol {
    pub fn new(scheme_id: impl Into<String>, subtasks: Vec<String>) -> Result<Self> {
        let p = AnnotationProtocol {
            scheme_id: scheme_id.into(),
            subtasks,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.subtasks.is_empty() {
            return Err(Error::validation(format!(
                "protocol `{}` has no subtasks",
                self.scheme_id
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.subtasks {
            if !seen.insert(s) {
                return Err(Error::validation(format!(
                    "protocol `{}` repeats subtask `{s}`",
                    self.scheme_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.subtasks.len()
    }

    /// The five-stage T-shirt folding protocol used for sparse annotation.
    pub fn sparse_tshirt() -> Self {
        AnnotationProtocol {
            scheme_id: "sparse".into(),
            subtasks: [
                "grab the t-shirt from the pile",
                "move the t-shirt to the center",
                "flatten the t-shirt out",
                "fold the t-shirt",
                "put folded t-shirt into corner",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    /// Generic `stage_1..stage_k` protocol.
    pub fn numbered(scheme_id: &str, k: usize) -> Self {
        AnnotationProtocol {
            scheme_id: scheme_id.into(),
            subtasks: (1..=k).map(|i| format!("stage_{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    /// Inclusive length `end - start + 1`.
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryAnnotation {
    pub trajectory_id: String,
    pub scheme_id: String,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub mistakes: Vec<MistakeSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    IncompleteSequence { missing: Vec<String> },
    OutOfOrder,
    UnknownLabel { label: String },
    Coverage { detail: String },
    DegenerateSegment { label: String },
    ContainsMistake { count: usize },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::IncompleteSequence { missing } => {
                write!(f, "incomplete sequence (missing: {})", missing.join(", "))
            }
            RejectReason::OutOfOrder => write!(f, "segments out of protocol order"),
            RejectReason::UnknownLabel { label } => write!(f, "unknown subtask `{label}`"),
            RejectReason::Coverage { detail } => write!(f, "coverage: {detail}"),
            RejectReason::DegenerateSegment { label } => {
                write!(f, "segment `{label}` has end <= start")
            }
            RejectReason::ContainsMistake { .. } => write!(f, "contains mistake"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(Vec<RejectReason>),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// Checks one annotation against its protocol and trajectory.
///
/// Mismatched trajectory or scheme ids are caller errors and come back as
/// `Err`; everything else is reported through the verdict.
pub fn validate_annotation(
    annotation: &TrajectoryAnnotation,
    protocol: &AnnotationProtocol,
    trajectory: &Trajectory,
) -> Result<Verdict> {
    if annotation.trajectory_id != trajectory.id {
        return Err(Error::validation(format!(
            "annotation for `{}` paired with trajectory `{}`",
            annotation.trajectory_id, trajectory.id
        )));
    }
    if annotation.scheme_id != protocol.scheme_id {
        return Err(Error::validation(format!(
            "annotation `{}` uses scheme `{}`, protocol is `{}`",
            annotation.trajectory_id, annotation.scheme_id, protocol.scheme_id
        )));
    }

    let mut reasons = Vec::new();
    let labels: Vec<&str> = annotation.segments.iter().map(|s| s.label.as_str()).collect();
    let expected: Vec<&str> = protocol.subtasks.iter().map(String::as_str).collect();

    if labels != expected {
        if let Some(bad) = labels.iter().find(|l| !expected.contains(l)) {
            reasons.push(RejectReason::UnknownLabel {
                label: bad.to_string(),
            });
        } else if is_subsequence(&labels, &expected) {
            let missing = expected
                .iter()
                .filter(|e| !labels.contains(e))
                .map(|s| s.to_string())
                .collect();
            reasons.push(RejectReason::IncompleteSequence { missing });
        } else {
            reasons.push(RejectReason::OutOfOrder);
        }
    }

    let t_last = trajectory.len() - 1;
    if let (Some(first), Some(last)) = (annotation.segments.first(), annotation.segments.last()) {
        if first.start != 0 {
            reasons.push(RejectReason::Coverage {
                detail: format!("first segment starts at {}", first.start),
            });
        }
        if last.end != t_last {
            reasons.push(RejectReason::Coverage {
                detail: format!("last segment ends at {}, trajectory ends at {t_last}", last.end),
            });
        }
        for pair in annotation.segments.windows(2) {
            if pair[0].end + 1 != pair[1].start {
                reasons.push(RejectReason::Coverage {
                    detail: format!(
                        "`{}` ends at {} but `{}` starts at {}",
                        pair[0].label, pair[0].end, pair[1].label, pair[1].start
                    ),
                });
            }
        }
    } else {
        reasons.push(RejectReason::Coverage {
            detail: "no segments".into(),
        });
    }
    for seg in &annotation.segments {
        if seg.end <= seg.start {
            reasons.push(RejectReason::DegenerateSegment {
                label: seg.label.clone(),
            });
        }
    }

    if !annotation.mistakes.is_empty() {
        reasons.push(RejectReason::ContainsMistake {
            count: annotation.mistakes.len(),
        });
    }

    Ok(if reasons.is_empty() {
        Verdict::Valid
    } else {
        Verdict::Invalid(reasons)
    })
}

fn is_subsequence(needle: &[&str], hay: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Accepted trajectory ids, in input order.
    pub kept: Vec<String>,
    pub rejected: BTreeMap<String, Vec<RejectReason>>,
}

/// Validates a batch of annotations and splits ids into kept and rejected.
pub fn filter_dataset(
    annotations: &[TrajectoryAnnotation],
    protocol: &AnnotationProtocol,
    trajectories: &[Trajectory],
    exec: Exec,
) -> Result<FilterReport> {
    let by_id = index_unique(trajectories)?;
    let mut seen = HashSet::new();
    for a in annotations {
        if !seen.insert(a.trajectory_id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate annotation id `{}`",
                a.trajectory_id
            )));
        }
        if !by_id.contains_key(a.trajectory_id.as_str()) {
            return Err(Error::validation(format!(
                "annotation `{}` has no trajectory",
                a.trajectory_id
            )));
        }
    }

    let verdicts = exec.try_map(annotations, |a| {
        validate_annotation(a, protocol, by_id[a.trajectory_id.as_str()])
    })?;

    let mut report = FilterReport::default();
    for (a, v) in annotations.iter().zip(verdicts) {
        match v {
            Verdict::Valid => report.kept.push(a.trajectory_id.clone()),
            Verdict::Invalid(reasons) => {
                report.rejected.insert(a.trajectory_id.clone(), reasons);
            }
        }
    }
    Ok(report)
}

pub(crate) fn index_unique(trajectories: &[Trajectory]) -> Result<HashMap<&str, &Trajectory>> {
    let mut by_id = HashMap::with_capacity(trajectories.len());
    for t in trajectories {
        if by_id.insert(t.id.as_str(), t).is_some() {
            return Err(Error::validation(format!("duplicate trajectory id `{}`", t.id)));
        }
    }
    Ok(by_id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded hold-out split. Both halves keep the input order.
pub fn split_dataset(ids: &[String], holdout_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::config(format!(
            "holdout fraction {holdout_fraction} outside [0, 1)"
        )));
    }
    let n_test = (holdout_fraction * ids.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut is_test = vec![false; ids.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = ids
        .iter()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok(Split {
        train: train.into_iter().map(|(id, _)| id.clone()).collect(),
        test: test.into_iter().map(|(id, _)| id.clone()).collect(),
    })
}
