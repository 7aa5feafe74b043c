//! Fixed-length training windows.
//!
//! Position 0 always holds the episode's first frame. Positions `1..N` hold
//! `a, a+G, ..., a+(N-2)G` for an anchor `a` drawn uniformly from
//! `[G, T-1-(N-2)G]`, so the shortest usable trajectory has `(N-1)G + 1`
//! frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeling::ProgressLabel;
use crate::rng;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Frames per window.
    pub seq_len: usize,
    /// Frames between consecutive tail positions.
    pub gap: usize,
    pub max_rewind: usize,
    pub p_rewind: f64,
    pub p_perturb: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seq_len: 9,
            gap: 30,
            max_rewind: 4,
            p_rewind: 0.5,
            p_perturb: 0.1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::config("sequence length must be >= 2"));
        }
        if self.gap < 1 {
            return Err(Error::config("gap must be >= 1"));
        }
        if self.max_rewind >= self.seq_len {
            return Err(Error::config("max rewind must be < sequence length"));
        }
        for (name, p) in [("p_rewind", self.p_rewind), ("p_perturb", self.p_perturb)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            seq_len: self.seq_len,
            gap: self.gap,
        }
    }
}

/// Window shape shared by training, inference and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub seq_len: usize,
    pub gap: usize,
}

impl Geometry {
    pub fn min_len(&self) -> usize {
        (self.seq_len - 1) * self.gap + 1
    }

    /// Span covered by the tail, `(N-2)G`.
    fn tail_span(&self) -> usize {
        (self.seq_len - 2) * self.gap
    }

    /// Inclusive bounds of admissible anchors for a trajectory of `len` frames.
    pub fn anchor_bounds(&self, len: usize) -> Option<(usize, usize)> {
        (len >= self.min_len()).then(|| (self.gap, len - 1 - self.tail_span()))
    }

    pub fn indices(&self, anchor: usize) -> Vec<usize> {
        std::iter::once(0)
            .chain((0..self.seq_len - 1).map(|j| anchor + j * self.gap))
            .collect()
    }

    /// The window whose last position is frame `t`. Tail positions that
    /// would fall before the episode start are clamped to frame 0.
    pub fn window_ending_at(&self, t: usize) -> Vec<usize> {
        std::iter::once(0)
            .chain(
                (0..self.seq_len - 1)
                    .rev()
                    .map(|back| t.saturating_sub(back * self.gap)),
            )
            .collect()
    }

    /// Frames that end some full-geometry window, i.e. `[(N-1)G, T-1]`.
    pub fn admissible_ends(&self, len: usize) -> std::ops::Range<usize> {
        match self.anchor_bounds(len) {
            Some((lo, hi)) => lo + self.tail_span()..hi + self.tail_span() + 1,
            None => 0..0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinLengthPolicy {
    #[default]
    Error,
    ShrinkGap,
}

/// Gap to use for a trajectory of `len` frames under `policy`.
pub fn effective_gap(config: &SamplerConfig, id: &str, len: usize, policy: MinLengthPolicy) -> Result<usize> {
    let geo = config.geometry();
    if len >= geo.min_len() {
        return Ok(config.gap);
    }
    let too_short = || Error::TooShort {
        id: id.to_string(),
        len,
        needed: geo.min_len(),
    };
    match policy {
        MinLengthPolicy::Error => Err(too_short()),
        MinLengthPolicy::ShrinkGap => {
            let g = (len - 1) / (config.seq_len - 1);
            if g == 0 {
                Err(too_short())
            } else {
                Ok(g)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub trajectory_id: String,
    pub frame_indices: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_states: Option<Vec<Vec<f64>>>,
    /// 1-based stage per position.
    pub stage_targets: Vec<usize>,
    pub tau_targets: Vec<f64>,
    pub progress_targets: Vec<f64>,
    pub rewind_mask: Vec<bool>,
    pub instruction_match: bool,
    pub task_id_presented: String,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    fn set_position(&mut self, pos: usize, frame: usize, trajectory: &Trajectory, labels: &[ProgressLabel]) {
        let f = &trajectory.frames[frame];
        let l = &labels[frame];
        self.frame_indices[pos] = frame;
        self.features[pos] = f.features.clone();
        if let Some(js) = &mut self.joint_states {
            js[pos] = f.joint_state.clone();
        }
        self.stage_targets[pos] = l.stage;
        self.tau_targets[pos] = l.tau;
        self.progress_targets[pos] = l.y;
    }
}

/// Gathers a window at arbitrary frame indices, targets copied from labels.
pub fn gather_window(
    trajectory: &Trajectory,
    labels: &[ProgressLabel],
    indices: &[usize],
) -> Result<SequenceSample> {
    if labels.len() != trajectory.len() {
        return Err(Error::validation(format!(
            "`{}`: {} labels for {} frames",
            trajectory.id,
            labels.len(),
            trajectory.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= trajectory.len()) {
        return Err(Error::validation(format!(
            "`{}`: frame {bad} out of bounds ({} frames)",
            trajectory.id,
            trajectory.len()
        )));
    }
    let n = indices.len();
    let has_joints = !trajectory.frames[0].joint_state.is_empty();
    let mut s = SequenceSample {
        trajectory_id: trajectory.id.clone(),
        frame_indices: vec![0; n],
        features: vec![Vec::new(); n],
        joint_states: has_joints.then(|| vec![Vec::new(); n]),
        stage_targets: vec![0; n],
        tau_targets: vec![0.0; n],
        progress_targets: vec![0.0; n],
        rewind_mask: vec![false; n],
        instruction_match: true,
        task_id_presented: trajectory.task_id.clone(),
    };
    for (pos, &frame) in indices.iter().enumerate() {
        s.set_position(pos, frame, trajectory, labels);
    }
    Ok(s)
}

/// Draws one unaugmented window.
pub fn sample_sequence<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    labels: &[ProgressLabel],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<SequenceSample> {
    config.check()?;
    let geo = config.geometry();
    let (lo, hi) = geo.anchor_bounds(trajectory.len()).ok_or_else(|| Error::TooShort {
        id: trajectory.id.clone(),
        len: trajectory.len(),
        needed: geo.min_len(),
    })?;
    let anchor = rng.random_range(lo..=hi);
    gather_window(trajectory, labels, &geo.indices(anchor))
}

/// Replaces the last `r` positions with earlier frames in reverse order.
///
/// Sources step back from the last kept frame by the window gap and never
/// go before frame 0, so `r` shrinks when the history is too short.
pub fn rewind_augment<R: Rng + ?Sized>(
    mut sample: SequenceSample,
    trajectory: &Trajectory,
    labels: &[ProgressLabel],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<SequenceSample> {
    if sample.rewind_mask.iter().any(|&m| m) {
        return Err(Error::validation(format!(
            "`{}`: sample already rewound",
            sample.trajectory_id
        )));
    }
    if config.max_rewind == 0 || !rng.random_bool(config.p_rewind) {
        return Ok(sample);
    }
    let r = rng.random_range(1..=config.max_rewind);
    apply_rewind(&mut sample, trajectory, labels, r, config.gap);
    Ok(sample)
}

/// Deterministic core of [`rewind_augment`]; returns the number of
/// positions actually replaced.
pub fn apply_rewind(
    sample: &mut SequenceSample,
    trajectory: &Trajectory,
    labels: &[ProgressLabel],
    r: usize,
    gap: usize,
) -> usize {
    let n = sample.len();
    let r = r.min(n - 1);
    let kept = sample.frame_indices[n - r - 1];
    let available = kept / gap;
    let r = r.min(available);
    for j in 0..r {
        let pos = n - r + j;
        sample.set_position(pos, kept - (j + 1) * gap, trajectory, labels);
        sample.rewind_mask[pos] = true;
    }
    r
}

/// With probability `p_perturb`, presents a different task id and zeroes
/// every progress target.
pub fn perturb_instruction<R: Rng + ?Sized>(
    mut sample: SequenceSample,
    vocabulary: &[String],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<SequenceSample> {
    if config.p_perturb == 0.0 {
        return Ok(sample);
    }
    let others: Vec<&String> = vocabulary
        .iter()
        .filter(|v| **v != sample.task_id_presented)
        .collect();
    if others.is_empty() {
        return Err(Error::config(
            "instruction perturbation needs a vocabulary with another task id",
        ));
    }
    if rng.random_bool(config.p_perturb) {
        sample.task_id_presented = others[rng.random_range(0..others.len())].clone();
        sample.instruction_match = false;
        sample.progress_targets.iter_mut().for_each(|y| *y = 0.0);
        sample.stage_targets.iter_mut().for_each(|s| *s = 1);
        sample.tau_targets.iter_mut().for_each(|t| *t = 0.0);
    }
    Ok(sample)
}

/// Sample, rewind, then perturb, all from one stream.
pub fn draw_sample<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    labels: &[ProgressLabel],
    config: &SamplerConfig,
    vocabulary: &[String],
    rng: &mut R,
) -> Result<SequenceSample> {
    let s = sample_sequence(trajectory, labels, config, rng)?;
    let s = rewind_augment(s, trajectory, labels, config, rng)?;
    perturb_instruction(s, vocabulary, config, rng)
}

/// `per_trajectory` augmented draws from each trajectory. Draw `j` of
/// trajectory `id` uses stream `(config.seed, id, j)`, so the output does not
/// depend on the execution mode.
pub fn build_training_set(
    items: &[(&Trajectory, &[ProgressLabel])],
    config: &SamplerConfig,
    vocabulary: &[String],
    per_trajectory: usize,
    exec: Exec,
) -> Result<Vec<SequenceSample>> {
    config.check()?;
    let nested = exec.try_map(items, |(traj, labels)| {
        (0..per_trajectory)
            .map(|j| {
                let mut r = rng::stream(config.seed, &traj.id, j as u64);
                draw_sample(traj, labels, config, vocabulary, &mut r)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Line format for debugging dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub trajectory_id: String,
    pub frame_indices: Vec<usize>,
    pub targets: Vec<f64>,
    pub rewind_mask: Vec<bool>,
    pub instruction_match: bool,
}

impl From<&SequenceSample> for SampleRecord {
    fn from(s: &SequenceSample) -> Self {
        SampleRecord {
            trajectory_id: s.trajectory_id.clone(),
            frame_indices: s.frame_indices.clone(),
            targets: s.progress_targets.clone(),
            rewind_mask: s.rewind_mask.clone(),
            instruction_match: s.instruction_match,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Frame;

    fn ramp(len: usize) -> (Trajectory, Vec<ProgressLabel>) {
        let frames = (0..len).map(|i| Frame::new(i, 30, vec![i as f64])).collect();
        let traj = Trajectory::new("r", "fold", 30, frames).unwrap();
        let labels = (0..len)
            .map(|t| {
                let y = t as f64 / (len - 1) as f64;
                ProgressLabel { t, stage: 1, tau: y, y }
            })
            .collect();
        (traj, labels)
    }

    #[test]
    fn geometry_arithmetic() {
        let geo = Geometry { seq_len: 9, gap: 30 };
        assert_eq!(geo.indices(100), vec![0, 100, 130, 160, 190, 220, 250, 280, 310]);
        assert_eq!(geo.min_len(), 241);
        assert_eq!(geo.anchor_bounds(1000), Some((30, 789)));
        assert_eq!(geo.anchor_bounds(240), None);
        assert_eq!(geo.window_ending_at(310), geo.indices(100));
        assert_eq!(geo.window_ending_at(40), vec![0, 0, 0, 0, 0, 0, 0, 10, 40]);
        assert_eq!(geo.admissible_ends(1000), 240..1000);
    }

    #[test]
    fn minimal_window_is_fixed() {
        let (t, l) = ramp(2);
        let cfg = SamplerConfig { seq_len: 2, gap: 1, max_rewind: 0, ..Default::default() };
        for seed in 0..10 {
            let s = sample_sequence(&t, &l, &cfg, &mut rng::seeded(seed)).unwrap();
            assert_eq!(s.frame_indices, vec![0, 1]);
        }
    }

    #[test]
    fn too_short_and_shrink_policy() {
        let (t, l) = ramp(200);
        let cfg = SamplerConfig::default();
        let err = sample_sequence(&t, &l, &cfg, &mut rng::seeded(0)).unwrap_err();
        assert!(matches!(err, Error::TooShort { needed: 241, .. }));
        assert!(effective_gap(&cfg, "r", 200, MinLengthPolicy::Error).is_err());
        assert_eq!(effective_gap(&cfg, "r", 200, MinLengthPolicy::ShrinkGap).unwrap(), 24);
        assert!(effective_gap(&cfg, "r", 5, MinLengthPolicy::ShrinkGap).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let (t, l) = ramp(1000);
        let cfg = SamplerConfig::default();
        let voc = vec!["fold".to_string(), "other".to_string()];
        let a = draw_sample(&t, &l, &cfg, &voc, &mut rng::seeded(5)).unwrap();
        let b = draw_sample(&t, &l, &cfg, &voc, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rewind_replaces_suffix_with_earlier_frames() {
        let (t, l) = ramp(1000);
        let mut s = gather_window(&t, &l, &Geometry { seq_len: 9, gap: 30 }.indices(100)).unwrap();
        let replaced = apply_rewind(&mut s, &t, &l, 4, 30);
        assert_eq!(replaced, 4);
        assert_eq!(s.frame_indices, vec![0, 100, 130, 160, 190, 160, 130, 100, 70]);
        assert_eq!(s.rewind_mask.iter().filter(|&&m| m).count(), 4);
        for pos in 5..9 {
            assert_eq!(s.progress_targets[pos], l[s.frame_indices[pos]].y);
            assert!(s.progress_targets[pos] < s.progress_targets[pos - 1]);
        }
    }

    #[test]
    fn rewind_never_precedes_episode_start() {
        let (t, l) = ramp(20);
        let geo = Geometry { seq_len: 3, gap: 5 };
        let mut s = gather_window(&t, &l, &geo.indices(5)).unwrap();
        assert_eq!(s.frame_indices, vec![0, 5, 10]);
        let mut whole = s.clone();
        assert_eq!(apply_rewind(&mut whole, &t, &l, 2, 5), 0);
        assert_eq!(whole.frame_indices, vec![0, 5, 10]);
        assert_eq!(apply_rewind(&mut s, &t, &l, 1, 5), 1);
        assert_eq!(s.frame_indices, vec![0, 5, 0]);
    }

    #[test]
    fn disabled_augmentations_are_identity() {
        let (t, l) = ramp(1000);
        let cfg = SamplerConfig { p_rewind: 0.0, p_perturb: 0.0, ..Default::default() };
        let s = sample_sequence(&t, &l, &cfg, &mut rng::seeded(1)).unwrap();
        let r = rewind_augment(s.clone(), &t, &l, &cfg, &mut rng::seeded(2)).unwrap();
        assert_eq!(r, s);
        let p = perturb_instruction(r, &["fold".into()], &cfg, &mut rng::seeded(3)).unwrap();
        assert!(p.instruction_match);
        assert_eq!(p, s);
    }

    #[test]
    fn perturbation_zeroes_targets_and_needs_vocabulary() {
        let (t, l) = ramp(1000);
        let cfg = SamplerConfig { p_perturb: 1.0, ..Default::default() };
        let s = sample_sequence(&t, &l, &cfg, &mut rng::seeded(1)).unwrap();
        assert!(perturb_instruction(s.clone(), &["fold".into()], &cfg, &mut rng::seeded(0)).is_err());
        let voc: Vec<String> = ["fold", "unfold", "stack"].iter().map(|s| s.to_string()).collect();
        let p = perturb_instruction(s, &voc, &cfg, &mut rng::seeded(0)).unwrap();
        assert!(!p.instruction_match);
        assert_ne!(p.task_id_presented, "fold");
        assert!(p.progress_targets.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn perturbation_rate_concentrates() {
        let (t, l) = ramp(300);
        let cfg = SamplerConfig { p_perturb: 0.1, p_rewind: 0.0, ..Default::default() };
        let voc = vec!["fold".to_string(), "other".to_string()];
        let base = sample_sequence(&t, &l, &cfg, &mut rng::seeded(0)).unwrap();
        let mut r = rng::seeded(99);
        let mismatched = (0..10_000)
            .filter(|_| !perturb_instruction(base.clone(), &voc, &cfg, &mut r).unwrap().instruction_match)
            .count();
        let frac = mismatched as f64 / 10_000.0;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
    }
}
