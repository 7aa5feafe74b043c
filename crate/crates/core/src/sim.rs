//! Synthetic multi-stage task with known ground-truth progress.
//!
//! A trajectory is a walk through `K` stages. Each frame has a latent state
//! `(stage, tau)` whose ground-truth progress is the stage-prior
//! composition under the simulator's nominal proportions (the midpoints of
//! the per-stage duration ranges). Observations encode the state as a
//! scaled one-hot stage code plus a `(cos, sin)` progress phase, padded to
//! `feature_dim` and corrupted by Gaussian noise. Expert actions are a
//! fixed linear map of the clean observation; regressions emit the negated
//! action and stalls emit zero.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Manifest, ManifestEntry, Quality};
use crate::error::{Error, Result};
use crate::eval::{classify_rollouts, is_success, last_third_start, mean, RolloutClass};
use crate::exec::Exec;
use crate::labeling::PriorProfile;
use crate::rng::{self, StreamRng};
use crate::trajectory::{AnnotationProtocol, Frame, MistakeSpan, Segment, Trajectory, TrajectoryAnnotation};

/// Attempts per rollout (and per rollout set) before giving up.
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureMix {
    pub none: f64,
    pub stall: f64,
    pub regression: f64,
    pub misgrasp_retry: f64,
    pub premature_finish: f64,
}

impl Default for FailureMix {
    fn default() -> Self {
        FailureMix {
            none: 0.2,
            stall: 0.2,
            regression: 0.2,
            misgrasp_retry: 0.2,
            premature_finish: 0.2,
        }
    }
}

impl FailureMix {
    fn weights(&self) -> [(Option<FailureKind>, f64); 5] {
        [
            (None, self.none),
            (Some(FailureKind::Stall), self.stall),
            (Some(FailureKind::Regression), self.regression),
            (Some(FailureKind::MisgraspRetry), self.misgrasp_retry),
            (Some(FailureKind::PrematureFinish), self.premature_finish),
        ]
    }

    pub fn check(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("failure mix probabilities must be >= 0"));
        }
        let sum: f64 = w.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("failure mix sums to {sum}, not 1")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut StreamRng) -> Option<FailureKind> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let w = self.weights();
        for (kind, p) in w {
            acc += p;
            if u < acc {
                return kind;
            }
        }
        w.iter().rev().find(|(_, p)| *p > 0.0).and_then(|(k, _)| *k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Inclusive `[min, max]` frame count per stage; its length is `K`.
    pub stage_frames: Vec<[usize; 2]>,
    pub fps: u32,
    pub feature_dim: usize,
    pub action_dim: usize,
    /// Joint-state width; zero omits joint states.
    pub joint_dim: usize,
    pub obs_noise: f64,
    /// Duration inflation range for suboptimal demonstrations.
    pub slowdown: [f64; 2],
    pub failure_mix: FailureMix,
    /// Upper bound on failure events per suboptimal demonstration.
    pub max_failures: usize,
    pub task_id: String,
    pub scheme_id: String,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            stage_frames: vec![[12, 24], [12, 24], [60, 120], [140, 260], [25, 50]],
            fps: 30,
            feature_dim: 16,
            action_dim: 4,
            joint_dim: 0,
            obs_noise: 0.05,
            slowdown: [1.0, 1.5],
            failure_mix: FailureMix::default(),
            max_failures: 1,
            task_id: "fold_tshirt".into(),
            scheme_id: "sparse".into(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_frames.len()
    }

    pub fn check(&self) -> Result<()> {
        let k = self.num_stages();
        if k == 0 {
            return Err(Error::config("simulator needs at least one stage"));
        }
        if let Some(r) = self.stage_frames.iter().find(|[lo, hi]| *lo < 2 || lo > hi) {
            return Err(Error::config(format!("stage frame range {r:?} must satisfy 2 <= min <= max")));
        }
        if self.feature_dim < k + 2 {
            return Err(Error::config(format!(
                "feature_dim {} cannot hold {k} stage codes plus the phase pair",
                self.feature_dim
            )));
        }
        if self.action_dim == 0 || self.fps == 0 {
            return Err(Error::config("action_dim and fps must be >= 1"));
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::config("obs_noise must be finite and >= 0"));
        }
        if !(1.0 <= self.slowdown[0] && self.slowdown[0] <= self.slowdown[1]) {
            return Err(Error::config("slowdown range must satisfy 1 <= min <= max"));
        }
        self.failure_mix.check()
    }

    /// Stage proportions used for ground truth: normalised range midpoints.
    pub fn nominal_priors(&self) -> PriorProfile {
        let mids: Vec<f64> = self
            .stage_frames
            .iter()
            .map(|[lo, hi]| (lo + hi) as f64 / 2.0)
            .collect();
        let total: f64 = mids.iter().sum();
        let mut alpha: Vec<f64> = mids.iter().map(|m| m / total).collect();
        let head: f64 = alpha[..alpha.len() - 1].iter().sum();
        *alpha.last_mut().unwrap() = 1.0 - head;
        PriorProfile::from_alpha(self.scheme_id.clone(), alpha, 0).expect("normalised proportions")
    }

    pub fn protocol(&self) -> AnnotationProtocol {
        let mut p = if self.num_stages() == 5 {
            AnnotationProtocol::sparse_tshirt()
        } else {
            AnnotationProtocol::numbered(&self.scheme_id, self.num_stages())
        };
        p.scheme_id = self.scheme_id.clone();
        p
    }

    /// Minimum expert length, useful for choosing a window geometry.
    pub fn min_expert_len(&self) -> usize {
        self.stage_frames.iter().map(|[lo, _]| lo).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Stall,
    Regression,
    MisgraspRetry,
    PrematureFinish,
}

/// Frames `[start, end]` affected by a failure. For regressions this is
/// the backward phase only, where ground truth strictly decreases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSegment {
    pub kind: FailureKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub trajectory: Trajectory,
    pub annotation: Option<TrajectoryAnnotation>,
    /// Ground-truth progress per frame.
    pub truth: Vec<f64>,
    pub quality: Quality,
    pub failures: Vec<FailureSegment>,
}

impl SimTrajectory {
    pub fn rollout_class(&self) -> Option<RolloutClass> {
        match self.quality {
            Quality::RolloutSe => Some(RolloutClass::Success),
            Quality::RolloutPse => Some(RolloutClass::PartialSuccess),
            Quality::RolloutFe => Some(RolloutClass::Failure),
            _ => None,
        }
    }
}

/// Fixed linear observation-to-action map of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMap {
    pub matrix: Vec<Vec<f64>>,
}

impl ActionMap {
    /// Depends only on the task id and dimensions, never on the data seed.
    pub fn for_task(task_id: &str, stages: usize, feature_dim: usize, action_dim: usize) -> Self {
        let mut r = rng::stream(0, &format!("action-map/{task_id}"), 0);
        let scale = 1.0 / ((stages + 2) as f64).sqrt();
        let matrix = (0..action_dim)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| { let z: f64 = StandardNormal.sample(&mut r); scale * z })
                    .collect()
            })
            .collect();
        ActionMap { matrix }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Expert,
    Reverse,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Step {
    stage: usize,
    tau: f64,
    act: Act,
}

/// Latent path under construction.
#[derive(Debug, Default)]
struct Plan {
    steps: Vec<Step>,
    /// Inclusive frame range per completed stage.
    bounds: Vec<(usize, usize)>,
    mistakes: Vec<MistakeSpan>,
    failures: Vec<FailureSegment>,
}

impl Plan {
    fn push(&mut self, stage: usize, tau: f64, act: Act) {
        self.steps.push(Step { stage, tau, act });
    }

    fn stall(&mut self, stage: usize, tau: f64, frames: usize) {
        let start = self.steps.len();
        for _ in 0..frames {
            self.push(stage, tau, Act::Idle);
        }
        self.failures.push(FailureSegment {
            kind: FailureKind::Stall,
            start,
            end: self.steps.len() - 1,
        });
    }

    /// Moves `tau` back by `drop` over `frames` reversed steps, then
    /// recovers to just below the starting point.
    fn regress(&mut self, stage: usize, tau: f64, drop: f64, frames: usize) -> (usize, usize) {
        let start = self.steps.len();
        for j in 1..=frames {
            self.push(stage, tau - drop * j as f64 / frames as f64, Act::Reverse);
        }
        let back_end = self.steps.len() - 1;
        for j in 1..frames {
            self.push(stage, tau - drop + drop * j as f64 / frames as f64, Act::Expert);
        }
        (start, back_end)
    }

    fn failure_in_stage(&mut self, kind: FailureKind, stage: usize, tau: f64, r: &mut StreamRng) {
        let mistake_start = self.steps.len();
        match kind {
            FailureKind::Stall => {
                self.stall(stage, tau, r.random_range(30..=90));
                return;
            }
            FailureKind::Regression => {
                let drop = tau * r.random_range(0.5..0.9);
                let (start, end) = self.regress(stage, tau, drop, r.random_range(20..=50));
                self.failures.push(FailureSegment { kind, start, end });
            }
            FailureKind::MisgraspRetry => {
                for _ in 0..r.random_range(2..=3) {
                    let drop = tau.min(r.random_range(0.03..0.08));
                    self.regress(stage, tau, drop, r.random_range(4..=8));
                }
                self.failures.push(FailureSegment {
                    kind,
                    start: mistake_start,
                    end: self.steps.len() - 1,
                });
            }
            FailureKind::PrematureFinish => unreachable!("handled by truncation"),
        }
        self.mistakes.push(MistakeSpan {
            start: mistake_start,
            end: self.steps.len() - 1,
        });
    }

    /// Walks every stage with the given durations, injecting at most one
    /// in-stage failure per listed stage.
    fn walk(durations: &[usize], events: &BTreeMap<usize, FailureKind>, r: &mut StreamRng) -> Plan {
        let mut plan = Plan::default();
        for (k0, &len) in durations.iter().enumerate() {
            let stage = k0 + 1;
            let start = plan.steps.len();
            let event = events.get(&stage).map(|&kind| (kind, r.random_range(len / 3..=len - 2)));
            for i in 0..len {
                let tau = i as f64 / (len - 1) as f64;
                plan.push(stage, tau, Act::Expert);
                if let Some((kind, at)) = event {
                    if i == at {
                        plan.failure_in_stage(kind, stage, tau, r);
                    }
                }
            }
            plan.bounds.push((start, plan.steps.len() - 1));
        }
        plan
    }

    /// Cuts the plan after frame `last`, dropping unreached stages.
    fn truncate(&mut self, last: usize) {
        self.steps.truncate(last + 1);
        self.bounds.retain(|&(s, _)| s <= last);
        if let Some(b) = self.bounds.last_mut() {
            b.1 = b.1.min(last);
        }
        self.mistakes.retain(|m| m.start <= last);
        self.mistakes.iter_mut().for_each(|m| m.end = m.end.min(last));
        self.failures.retain(|f| f.start <= last);
        self.failures.iter_mut().for_each(|f| f.end = f.end.min(last));
    }
}

/// Builds observable trajectories from latent plans.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub priors: PriorProfile,
    pub actions: ActionMap,
    noise: Normal<f64>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.check()?;
        let priors = config.nominal_priors();
        let actions = ActionMap::for_task(&config.task_id, config.num_stages(), config.feature_dim, config.action_dim);
        let noise = Normal::new(0.0, config.obs_noise).map_err(|e| Error::config(e.to_string()))?;
        Ok(Simulator {
            config,
            priors,
            actions,
            noise,
        })
    }

    /// Noise-free observation of a latent state.
    pub fn clean_features(&self, stage: usize, tau: f64) -> Vec<f64> {
        let k = self.config.num_stages();
        let y = self.priors.compose(stage, tau);
        let mut v = vec![0.0; self.config.feature_dim];
        v[stage - 1] = 1.0 + tau;
        v[k] = (TAU * y).cos();
        v[k + 1] = (TAU * y).sin();
        v
    }

    fn durations(&self, r: &mut StreamRng, slowdown: bool) -> Vec<usize> {
        let [lo_s, hi_s] = self.config.slowdown;
        self.config
            .stage_frames
            .iter()
            .map(|&[lo, hi]| {
                let base = r.random_range(lo..=hi);
                if slowdown && hi_s > lo_s {
                    (base as f64 * r.random_range(lo_s..=hi_s)).round() as usize
                } else if slowdown {
                    (base as f64 * lo_s).round() as usize
                } else {
                    base
                }
            })
            .collect()
    }

    fn materialize(&self, id: String, plan: Plan, quality: Quality, annotate: bool, r: &mut StreamRng) -> SimTrajectory {
        let fps = self.config.fps;
        let mut truth = Vec::with_capacity(plan.steps.len());
        let frames = plan
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let y = self.priors.compose(s.stage, s.tau);
                truth.push(y);
                let clean = self.clean_features(s.stage, s.tau);
                let action = match s.act {
                    Act::Expert => self.actions.apply(&clean),
                    Act::Reverse => self.actions.apply(&clean).iter().map(|a| -a).collect(),
                    Act::Idle => vec![0.0; self.config.action_dim],
                };
                let features = clean.iter().map(|c| c + self.noise.sample(r)).collect();
                let joint_state = (1..=self.config.joint_dim)
                    .map(|j| (std::f64::consts::PI * j as f64 * y).sin())
                    .collect();
                Frame {
                    joint_state,
                    action,
                    ..Frame::new(t, fps, features)
                }
            })
            .collect();
        let trajectory = Trajectory::new(id, self.config.task_id.clone(), fps, frames).expect("simulated frames are well formed");
        let annotation = annotate.then(|| {
            let labels = &self.config.protocol().subtasks;
            TrajectoryAnnotation {
                trajectory_id: trajectory.id.clone(),
                scheme_id: self.config.scheme_id.clone(),
                segments: plan
                    .bounds
                    .iter()
                    .enumerate()
                    .map(|(k, &(start, end))| Segment {
                        label: labels[k].clone(),
                        start,
                        end,
                    })
                    .collect(),
                mistakes: plan.mistakes.clone(),
            }
        });
        SimTrajectory {
            trajectory,
            annotation,
            truth,
            quality,
            failures: plan.failures,
        }
    }

    /// One expert demonstration: every stage in order at nominal speed.
    pub fn expert(&self, id: impl Into<String>, r: &mut StreamRng) -> SimTrajectory {
        let durations = self.durations(r, false);
        let plan = Plan::walk(&durations, &BTreeMap::new(), r);
        self.materialize(id.into(), plan, Quality::Expert, true, r)
    }

    /// A slowed demonstration with failures drawn from the configured mix.
    pub fn suboptimal(&self, id: impl Into<String>, r: &mut StreamRng) -> SimTrajectory {
        let n_events = r.random_range(1..=self.config.max_failures.max(1));
        let kinds: Vec<FailureKind> = (0..n_events).filter_map(|_| self.config.failure_mix.draw(r)).collect();
        self.suboptimal_with(id, &kinds, r)
    }

    /// A slowed demonstration with exactly the listed failure kinds.
    pub fn suboptimal_with(&self, id: impl Into<String>, kinds: &[FailureKind], r: &mut StreamRng) -> SimTrajectory {
        let durations = self.durations(r, true);
        let premature = kinds.contains(&FailureKind::PrematureFinish);
        let mut free: Vec<usize> = (1..=durations.len()).filter(|&k| durations[k - 1] >= 6).collect();
        let mut events = BTreeMap::new();
        for &kind in kinds.iter().filter(|&&k| k != FailureKind::PrematureFinish) {
            if free.is_empty() {
                break;
            }
            // longer stages are proportionally more likely to host a failure
            let total: usize = free.iter().map(|&k| durations[k - 1]).sum();
            let mut u = r.random_range(0..total);
            let pos = free
                .iter()
                .position(|&k| {
                    let d = durations[k - 1];
                    if u < d {
                        true
                    } else {
                        u -= d;
                        false
                    }
                })
                .expect("u < total");
            events.insert(free.remove(pos), kind);
        }
        let mut plan = Plan::walk(&durations, &events, r);
        if premature {
            let candidates: Vec<usize> = plan
                .steps
                .iter()
                .enumerate()
                .filter(|&(t, s)| {
                    let y = self.priors.compose(s.stage, s.tau);
                    let (start, _) = plan.bounds[s.stage - 1];
                    (0.2..=0.8).contains(&y) && t > start && s.stage < durations.len()
                })
                .map(|(t, _)| t)
                .collect();
            if let Some(&cut) = candidates.get(r.random_range(0..candidates.len().max(1))) {
                plan.truncate(cut);
                plan.failures.push(FailureSegment {
                    kind: FailureKind::PrematureFinish,
                    start: cut,
                    end: cut,
                });
            }
        }
        self.materialize(id.into(), plan, Quality::Suboptimal, true, r)
    }

    /// Struggles around the current state until `frames` have elapsed:
    /// alternating stalls and small regress-and-recover cycles.
    fn struggle(&self, plan: &mut Plan, frames: usize, r: &mut StreamRng) {
        let Step { stage, tau, .. } = *plan.steps.last().expect("non-empty plan");
        let target = plan.steps.len() + frames;
        while plan.steps.len() < target {
            if r.random_bool(0.5) {
                plan.stall(stage, tau, r.random_range(10..=30));
            } else {
                let drop = tau.min(r.random_range(0.02..0.1));
                plan.regress(stage, tau, drop, r.random_range(5..=15));
                plan.push(stage, tau, Act::Expert);
            }
        }
        plan.steps.truncate(target);
        plan.failures.retain(|f| f.start < target);
        plan.failures.iter_mut().for_each(|f| f.end = f.end.min(target - 1));
    }

    /// One policy rollout of the requested class, verified against the
    /// success rule with a margin.
    pub fn rollout(&self, id: impl Into<String>, class: RolloutClass, r: &mut StreamRng) -> Result<SimTrajectory> {
        let id = id.into();
        for _ in 0..MAX_ATTEMPTS {
            let durations = self.durations(r, false);
            let mut plan = Plan::walk(&durations, &BTreeMap::new(), r);
            let quality = match class {
                RolloutClass::Success => {
                    let tail = r.random_range(0..=30);
                    let last = *plan.steps.last().expect("non-empty");
                    for _ in 0..tail {
                        plan.push(last.stage, last.tau, Act::Idle);
                    }
                    Quality::RolloutSe
                }
                RolloutClass::PartialSuccess | RolloutClass::Failure => {
                    let (lo, hi, q) = if class == RolloutClass::PartialSuccess {
                        (0.45, 0.75, Quality::RolloutPse)
                    } else {
                        (0.02, 0.15, Quality::RolloutFe)
                    };
                    let peak = r.random_range(lo..hi);
                    let cut = plan
                        .steps
                        .iter()
                        .position(|s| self.priors.compose(s.stage, s.tau) >= peak)
                        .expect("progress reaches 1");
                    let cut = cut.max(1);
                    plan.truncate(cut);
                    let extra = (cut as f64 * r.random_range(0.5..1.0)).round() as usize + 30;
                    self.struggle(&mut plan, extra, r);
                    q
                }
            };
            let sim = self.materialize(id.clone(), plan, quality, false, r);
            let p = &sim.truth;
            let verified = match class {
                RolloutClass::Success => {
                    is_success(p) && p[p.len() - 1] >= 0.95 && mean(&p[last_third_start(p.len())..]) >= 0.65
                }
                RolloutClass::PartialSuccess => p[p.len() - 1] <= 0.75 && mean(p) >= 0.22,
                RolloutClass::Failure => mean(p) <= 0.15,
            };
            if verified {
                return Ok(sim);
            }
        }
        Err(Error::validation(format!(
            "could not generate a verified {class} rollout `{id}` (seed {})",
            self.config.seed
        )))
    }
}

/// Seeded expert demonstrations `expert-0000, ...`.
pub fn gen_experts(config: &SimConfig, n: usize, exec: Exec) -> Result<Vec<SimTrajectory>> {
    let sim = Simulator::new(config.clone())?;
    Ok(exec.map_range(n, |i| {
        let mut r = rng::stream(config.seed, "expert", i as u64);
        sim.expert(format!("expert-{i:04}"), &mut r)
    }))
}

/// Seeded suboptimal demonstrations `subopt-0000, ...`.
pub fn gen_suboptimal(config: &SimConfig, n: usize, exec: Exec) -> Result<Vec<SimTrajectory>> {
    let sim = Simulator::new(config.clone())?;
    Ok(exec.map_range(n, |i| {
        let mut r = rng::stream(config.seed, "suboptimal", i as u64);
        sim.suboptimal(format!("subopt-{i:04}"), &mut r)
    }))
}

/// `n_se + n_pse + n_fe` rollouts with known classes.
///
/// Each trace satisfies (or fails) the success rule with a margin. When the
/// PSE and FE counts match, the whole set is also checked to classify
/// perfectly from ground truth, regenerating from a fresh stream if not.
pub fn gen_rollout_set(config: &SimConfig, n_se: usize, n_pse: usize, n_fe: usize, exec: Exec) -> Result<Vec<SimTrajectory>> {
    let sim = Simulator::new(config.clone())?;
    let classes: Vec<RolloutClass> = std::iter::repeat_n(RolloutClass::Success, n_se)
        .chain(std::iter::repeat_n(RolloutClass::PartialSuccess, n_pse))
        .chain(std::iter::repeat_n(RolloutClass::Failure, n_fe))
        .collect();
    for attempt in 0..MAX_ATTEMPTS {
        let set = exec.try_map(&classes.iter().enumerate().collect::<Vec<_>>(), |&(i, &class)| {
            let key = format!("rollout/{attempt}");
            let mut r = rng::stream(config.seed, &key, i as u64);
            sim.rollout(format!("rollout-{i:04}"), class, &mut r)
        })?;
        if n_pse != n_fe || n_pse == 0 {
            return Ok(set);
        }
        let traces: Vec<(String, Vec<f64>)> = set.iter().map(|s| (s.trajectory.id.clone(), s.truth.clone())).collect();
        let c = classify_rollouts(&traces)?;
        if c.labels.iter().zip(&classes).all(|(l, &t)| l.class == t) {
            return Ok(set);
        }
        log::debug!("rollout set attempt {attempt} misclassified from ground truth; regenerating");
    }
    Err(Error::validation(format!(
        "could not generate a consistent rollout set (seed {})",
        config.seed
    )))
}

/// Writes trajectories, annotations and ground truth under `dir` and
/// returns the manifest (also written to `dir/manifest.json`).
pub fn write_dataset(dir: impl AsRef<Path>, name: &str, config: &SimConfig, items: &[SimTrajectory]) -> Result<Manifest> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(items.len());
    for s in items {
        let id = &s.trajectory.id;
        let trajectory_file = Path::new("trajectories").join(format!("{id}.jsonl"));
        dataset::write_trajectory(dir.join(&trajectory_file), &s.trajectory)?;
        let truth_file = Path::new("truth").join(format!("{id}.jsonl"));
        dataset::write_truth(dir.join(&truth_file), &s.truth)?;
        let annotation_file = match &s.annotation {
            Some(a) => {
                let p = Path::new("annotations").join(format!("{id}.json"));
                dataset::write_json(dir.join(&p), a)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: id.clone(),
            task_id: s.trajectory.task_id.clone(),
            trajectory_file,
            annotation_file,
            truth_file: Some(truth_file),
            quality: Some(s.quality),
        });
    }
    let manifest = Manifest {
        name: name.to_string(),
        fps: config.fps,
        feature_dim: config.feature_dim,
        protocol: config.protocol(),
        seed: config.seed,
        trajectories: entries,
    };
    dataset::write_json(dir.join(dataset::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
