//! Uniform access to progress estimates.
//!
//! RA-BC weighting and rollout evaluation only need "progress at these
//! frames of this trajectory", so they run unchanged against the learned
//! estimator, the simulator's ground truth, or a constant baseline.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorModel, Window};
use crate::exec::Exec;
use crate::labeling::PriorProfile;
use crate::sampler::Geometry;
use crate::trajectory::Trajectory;

pub trait ProgressPredictor: Send + Sync {
    /// Short identifier recorded in output headers.
    fn id(&self) -> String;

    /// Progress for each entry of `frames` (indices into `trajectory`).
    fn predict_window(&self, trajectory: &Trajectory, frames: &[usize]) -> Result<Vec<f64>>;
}

/// Delegates to `predictor` and clamps every output into `[0, 1]`.
pub fn predict_progress(
    predictor: &dyn ProgressPredictor,
    trajectory: &Trajectory,
    frames: &[usize],
) -> Result<Vec<f64>> {
    if let Some(&bad) = frames.iter().find(|&&f| f >= trajectory.len()) {
        return Err(Error::validation(format!(
            "`{}`: frame {bad} out of bounds ({} frames)",
            trajectory.id,
            trajectory.len()
        )));
    }
    let mut out = predictor.predict_window(trajectory, frames)?;
    if out.len() != frames.len() {
        return Err(Error::validation(format!(
            "predictor `{}` returned {} values for {} frames",
            predictor.id(),
            out.len(),
            frames.len()
        )));
    }
    for y in &mut out {
        if y.is_nan() {
            return Err(Error::Numerical(format!("predictor `{}` returned NaN", predictor.id())));
        }
        *y = y.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Progress of the window whose last position is frame `t`.
pub fn progress_at(
    predictor: &dyn ProgressPredictor,
    trajectory: &Trajectory,
    t: usize,
    geometry: &Geometry,
) -> Result<f64> {
    let frames = geometry.window_ending_at(t);
    Ok(*predict_progress(predictor, trajectory, &frames)?
        .last()
        .expect("window has at least two positions"))
}

/// Progress at every frame of a trajectory.
pub fn progress_curve(
    predictor: &dyn ProgressPredictor,
    trajectory: &Trajectory,
    geometry: &Geometry,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec.map_range(trajectory.len(), |t| progress_at(predictor, trajectory, t, geometry))
        .into_iter()
        .collect()
}

/// Ground-truth progress keyed by trajectory id.
#[derive(Debug, Clone, Default)]
pub struct OraclePredictor {
    truth: HashMap<String, Vec<f64>>,
}

impl OraclePredictor {
    pub fn new(truth: HashMap<String, Vec<f64>>) -> Self {
        OraclePredictor { truth }
    }

    pub fn insert(&mut self, id: impl Into<String>, progress: Vec<f64>) {
        self.truth.insert(id.into(), progress);
    }
}

impl ProgressPredictor for OraclePredictor {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn predict_window(&self, trajectory: &Trajectory, frames: &[usize]) -> Result<Vec<f64>> {
        let truth = self
            .truth
            .get(&trajectory.id)
            .ok_or_else(|| Error::validation(format!("no ground truth for `{}`", trajectory.id)))?;
        if truth.len() != trajectory.len() {
            return Err(Error::validation(format!(
                "ground truth for `{}` has {} frames, trajectory {}",
                trajectory.id,
                truth.len(),
                trajectory.len()
            )));
        }
        Ok(frames.iter().map(|&f| truth[f]).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl ProgressPredictor for ConstantPredictor {
    fn id(&self) -> String {
        format!("constant:{}", self.0)
    }

    fn predict_window(&self, _: &Trajectory, frames: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![self.0; frames.len()])
    }
}

/// The trained estimator, presented with each trajectory's own task id.
#[derive(Debug, Clone)]
pub struct LearnedPredictor {
    pub model: EstimatorModel,
    pub priors: PriorProfile,
}

impl ProgressPredictor for LearnedPredictor {
    fn id(&self) -> String {
        format!("estimator:{}", self.priors.scheme_id)
    }

    fn predict_window(&self, trajectory: &Trajectory, frames: &[usize]) -> Result<Vec<f64>> {
        let features: Vec<Vec<f64>> = frames
            .iter()
            .map(|&f| trajectory.frames[f].features.clone())
            .collect();
        let joints: Option<Vec<Vec<f64>>> = self.model.config.use_joint_state.then(|| {
            frames
                .iter()
                .map(|&f| trajectory.frames[f].joint_state.clone())
                .collect()
        });
        let window = Window {
            features: &features,
            joint_states: joints.as_deref(),
            task_id: &trajectory.task_id,
        };
        Ok(self.model.forward(&window, &self.priors)?.progress)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Frame;

    fn traj(len: usize) -> Trajectory {
        let frames = (0..len).map(|i| Frame::new(i, 30, vec![0.0])).collect();
        Trajectory::new("t", "task", 30, frames).unwrap()
    }

    #[test]
    fn oracle_returns_truth() {
        let t = traj(50);
        let truth: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let mut o = OraclePredictor::default();
        o.insert("t", truth.clone());
        let geo = Geometry { seq_len: 3, gap: 5 };
        let curve = progress_curve(&o, &t, &geo, Exec::default()).unwrap();
        assert_eq!(curve, truth);
    }

    #[test]
    fn constant_zero_and_clamping() {
        let t = traj(10);
        let zero = predict_progress(&ConstantPredictor(0.0), &t, &[0, 3, 9]).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
        let high = predict_progress(&ConstantPredictor(1.7), &t, &[1]).unwrap();
        assert_eq!(high, vec![1.0]);
        assert!(predict_progress(&ConstantPredictor(0.0), &t, &[10]).is_err());
    }
}
