//! Behavior cloning with uniform or reward-aligned chunk weights.
//!
//! Training items are chunks of `delta` consecutive frames. Both modes
//! minimise `sum(w * l) / (sum(w) + eps_div)` where `l` is the chunk's mean
//! squared action error; uniform cloning fixes `w = 1`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, Metadata};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{self, Dense, GradCheckReport, Params};
use crate::predictor::ProgressPredictor;
use crate::rabc::{chunk_starts, item_weight, progress_delta, weight_dataset, RunningStats, WeightConfig};
use crate::rng;
use crate::sampler::Geometry;
use crate::trajectory::Trajectory;

pub const POLICY_VERSION: &str = "stagewise-policy/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcMode {
    Uniform,
    RaBc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Statistics updated per batch, weights from the current statistics.
    Online,
    /// One pass over the dataset first, then fixed weights.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            obs_dim: 16,
            action_dim: 4,
            hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub mode: BcMode,
    pub weight_mode: WeightMode,
    pub weights: WeightConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Chunks per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    /// Forces every weight to 1 while keeping the RA-BC code path.
    pub pin_weights: bool,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            mode: BcMode::Uniform,
            weight_mode: WeightMode::Online,
            weights: WeightConfig::default(),
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            epochs: 40,
            grad_clip: 10.0,
            pin_weights: false,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn check(&self) -> Result<()> {
        self.weights.check()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.grad_clip <= 0.0 {
            return Err(Error::config("momentum must lie in [0, 1) and grad_clip be > 0"));
        }
        Ok(())
    }
}

/// Two-layer tanh perceptron from observation features to actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub params: Params,
    hidden: Dense,
    out: Dense,
}

impl PolicyModel {
    fn layout(config: &PolicyConfig) -> (Params, Dense, Dense) {
        let mut params = Params::default();
        let hidden = Dense::new(&mut params, "policy.0", config.obs_dim, config.hidden, true);
        let out = Dense::new(&mut params, "policy.1", config.hidden, config.action_dim, true);
        (params, hidden, out)
    }

    pub fn new(config: PolicyConfig) -> Result<Self> {
        if config.obs_dim == 0 || config.action_dim == 0 || config.hidden == 0 {
            return Err(Error::config("policy dimensions must be >= 1"));
        }
        let (mut params, hidden, out) = Self::layout(&config);
        let mut r = rng::stream(config.seed, "policy-init", 0);
        hidden.init(&mut params.values, &mut r);
        out.init(&mut params.values, &mut r);
        Ok(PolicyModel {
            config,
            params,
            hidden,
            out,
        })
    }

    pub fn from_named(config: PolicyConfig, named: &[nn::NamedTensor]) -> Result<Self> {
        let (mut params, hidden, out) = Self::layout(&config);
        params.load_named(named)?;
        Ok(PolicyModel {
            config,
            params,
            hidden,
            out,
        })
    }

    fn forward_at(&self, p: &[f64], obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; self.config.hidden];
        self.hidden.forward(p, obs, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mut a = vec![0.0; self.config.action_dim];
        self.out.forward(p, &h, &mut a);
        (h, a)
    }

    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.forward_at(&self.params.values, obs).1
    }

    fn check_dims(&self, traj: &Trajectory) -> Result<()> {
        if traj.feature_dim() != self.config.obs_dim || traj.action_dim() != self.config.action_dim {
            return Err(Error::validation(format!(
                "`{}`: observation/action dimensions {}/{} do not match policy {}/{}",
                traj.id,
                traj.feature_dim(),
                traj.action_dim(),
                self.config.obs_dim,
                self.config.action_dim
            )));
        }
        Ok(())
    }

    /// Mean squared action error over frames `[t, t + len)`.
    fn chunk_loss_at(&self, p: &[f64], traj: &Trajectory, t: usize, len: usize) -> f64 {
        traj.frames[t..t + len]
            .iter()
            .map(|f| {
                let (_, a) = self.forward_at(p, &f.features);
                a.iter().zip(&f.action).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .sum::<f64>()
            / len as f64
    }

    /// Adds `scale * d(chunk loss)` to `grads` and returns the chunk loss.
    fn chunk_grad(&self, traj: &Trajectory, t: usize, len: usize, scale: f64, grads: &mut [f64]) -> f64 {
        let p = &self.params.values;
        let mut loss = 0.0;
        for f in &traj.frames[t..t + len] {
            let (h, a) = self.forward_at(p, &f.features);
            let d_a: Vec<f64> = a
                .iter()
                .zip(&f.action)
                .map(|(x, y)| {
                    loss += (x - y) * (x - y);
                    scale * 2.0 * (x - y) / len as f64
                })
                .collect();
            let mut d_h = vec![0.0; self.config.hidden];
            self.out.backward(p, grads, &h, &d_a, Some(&mut d_h));
            let d_pre: Vec<f64> = d_h.iter().zip(&h).map(|(g, v)| g * (1.0 - v * v)).collect();
            self.hidden.backward(p, grads, &f.features, &d_pre, None);
        }
        loss / len as f64
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, metadata: Metadata) -> Result<()> {
        checkpoint::save(
            path,
            &Checkpoint {
                version: POLICY_VERSION.into(),
                config: self.config.clone(),
                priors: Vec::new(),
                params: self.params.to_named(),
                metadata,
            },
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(Self, Metadata)> {
        let ck: Checkpoint<PolicyConfig> = checkpoint::load(path, POLICY_VERSION)?;
        Ok((Self::from_named(ck.config, &ck.params)?, ck.metadata))
    }
}

/// One training item: `delta` frames of trajectory `traj` from frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chunk {
    pub traj: usize,
    pub t: usize,
}

pub fn chunks(trajectories: &[Trajectory], delta: usize) -> Vec<Chunk> {
    trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, tr)| chunk_starts(tr.len(), delta).map(move |t| Chunk { traj: i, t }))
        .collect()
}

/// Weighted objective and its gradient over `items` with fixed weights.
fn weighted_step(
    policy: &PolicyModel,
    trajectories: &[Trajectory],
    items: &[(Chunk, f64)],
    delta: usize,
    eps_div: f64,
    exec: Exec,
) -> (f64, Vec<f64>) {
    let denom = items.iter().map(|(_, w)| w).sum::<f64>() + eps_div;
    let per = exec.map(items, |&(c, w)| {
        let mut g = vec![0.0; policy.params.len()];
        let l = if w == 0.0 {
            0.0
        } else {
            w * policy.chunk_grad(&trajectories[c.traj], c.t, delta, w / denom, &mut g)
        };
        (l, g)
    });
    let mut grads = vec![0.0; policy.params.len()];
    let mut num = 0.0;
    for (l, g) in per {
        num += l;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (num / denom, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcEpoch {
    pub epoch: usize,
    /// Mean of the per-batch weighted objective.
    pub loss: f64,
    pub mean_weight: f64,
    /// Counts of weights in ten equal bins over `[0, 1]`.
    pub weight_hist: [usize; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub mode: BcMode,
    pub chunks: usize,
    pub skipped_chunks: usize,
    pub steps: usize,
    pub epochs: Vec<BcEpoch>,
    pub stats: Option<RunningStats>,
}

fn hist_bin(w: f64) -> usize {
    ((w * 10.0).floor() as usize).min(9)
}

/// Trains `policy` in place on the chunks of `trajectories`.
///
/// RA-BC needs a predictor; deltas are computed once per chunk (the
/// predictor is frozen) and chunks whose delta cannot be computed are
/// dropped.
pub fn train_bc(
    policy: &mut PolicyModel,
    trajectories: &[Trajectory],
    predictor: Option<&dyn ProgressPredictor>,
    geometry: &Geometry,
    cfg: &BcConfig,
    exec: Exec,
) -> Result<BcReport> {
    cfg.check()?;
    for t in trajectories {
        policy.check_dims(t)?;
    }
    let delta = cfg.weights.delta;
    let all = chunks(trajectories, delta);

    // per-chunk raw deltas (RA-BC) and fixed weights (offline)
    let mut items: Vec<(Chunk, f64)> = Vec::with_capacity(all.len());
    let mut fixed: Option<HashMap<Chunk, f64>> = None;
    let mut skipped = 0;
    match cfg.mode {
        BcMode::Uniform => items.extend(all.iter().map(|&c| (c, 0.0))),
        BcMode::RaBc => {
            let predictor = predictor.ok_or_else(|| Error::config("RA-BC needs a progress predictor"))?;
            match cfg.weight_mode {
                WeightMode::Online => {
                    let deltas = exec.map(&all, |c| {
                        progress_delta(predictor, &trajectories[c.traj], c.t, delta, geometry)
                    });
                    for (c, d) in all.iter().zip(deltas) {
                        match d {
                            Ok(d) => items.push((*c, d)),
                            Err(e) => {
                                log::warn!("dropping chunk {}@{}: {e}", trajectories[c.traj].id, c.t);
                                skipped += 1;
                            }
                        }
                    }
                }
                WeightMode::Offline => {
                    let (table, _) = weight_dataset(predictor, trajectories, &cfg.weights, geometry, exec)?;
                    let index: HashMap<&str, usize> =
                        trajectories.iter().enumerate().map(|(i, t)| (t.id.as_str(), i)).collect();
                    skipped = table.skipped.len();
                    let map: HashMap<Chunk, f64> = table
                        .rows
                        .iter()
                        .map(|r| {
                            let c = Chunk {
                                traj: index[r.trajectory_id.as_str()],
                                t: r.t,
                            };
                            items.push((c, r.r_hat));
                            (c, r.w)
                        })
                        .collect();
                    fixed = Some(map);
                }
            }
        }
    }
    if items.is_empty() {
        return Err(Error::validation("no training chunks"));
    }

    let mut stats = RunningStats::new();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, "bc-shuffle", 0);
    let mut velocity = vec![0.0; policy.params.len()];
    let mut report = BcReport {
        mode: cfg.mode,
        chunks: items.len(),
        skipped_chunks: skipped,
        steps: 0,
        epochs: Vec::with_capacity(cfg.epochs),
        stats: None,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut weight_sum = 0.0;
        let mut hist = [0usize; 10];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Chunk, f64)> = match cfg.mode {
                BcMode::Uniform => idx.iter().map(|&i| (items[i].0, 1.0)).collect(),
                BcMode::RaBc => {
                    if fixed.is_none() {
                        stats.extend(idx.iter().map(|&i| items[i].1));
                    }
                    idx.iter()
                        .map(|&i| {
                            let (c, r) = items[i];
                            let w = if cfg.pin_weights {
                                1.0
                            } else if let Some(m) = &fixed {
                                m[&c]
                            } else {
                                item_weight(r, &stats, &cfg.weights)
                            };
                            (c, w)
                        })
                        .collect()
                }
            };
            for (_, w) in &batch {
                weight_sum += w;
                hist[hist_bin(*w)] += 1;
            }
            let (loss, mut grads) = weighted_step(policy, trajectories, &batch, delta, cfg.weights.eps_div, exec);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite BC loss {loss} at epoch {epoch}, batch {b}; parameter norm {:.6e}",
                    policy.params.norm()
                )));
            }
            nn::clip_norm(&mut grads, cfg.grad_clip);
            for ((v, g), p) in velocity.iter_mut().zip(&grads).zip(policy.params.values.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            loss_sum += loss;
            batches += 1;
            report.steps += 1;
        }
        log::debug!("bc epoch {epoch}: loss {:.5}", loss_sum / batches as f64);
        report.epochs.push(BcEpoch {
            epoch,
            loss: loss_sum / batches as f64,
            mean_weight: weight_sum / items.len() as f64,
            weight_hist: hist,
        });
    }
    if cfg.mode == BcMode::RaBc {
        report.stats = Some(if fixed.is_some() {
            items.iter().map(|(_, r)| *r).collect()
        } else {
            stats
        });
    }
    Ok(report)
}

/// Mean per-frame squared action error over every frame of `trajectories`.
pub fn eval_policy(policy: &PolicyModel, trajectories: &[Trajectory], exec: Exec) -> Result<f64> {
    for t in trajectories {
        policy.check_dims(t)?;
    }
    let per = exec.map(trajectories, |t| policy.chunk_loss_at(&policy.params.values, t, 0, t.len()) * t.len() as f64);
    let frames: usize = trajectories.iter().map(Trajectory::len).sum();
    if frames == 0 {
        return Err(Error::validation("no evaluation frames"));
    }
    Ok(per.iter().sum::<f64>() / frames as f64)
}

/// Finite-difference check of the weighted objective's gradient.
pub fn policy_gradient_check(
    policy: &PolicyModel,
    trajectories: &[Trajectory],
    items: &[(Chunk, f64)],
    delta: usize,
    eps_div: f64,
    h: f64,
    tolerance: f64,
) -> GradCheckReport {
    let (_, grads) = weighted_step(policy, trajectories, items, delta, eps_div, Exec::Sequential);
    let denom = items.iter().map(|(_, w)| w).sum::<f64>() + eps_div;
    nn::check_gradient(
        &policy.params.values,
        &grads,
        |theta| {
            items
                .iter()
                .map(|&(c, w)| w * policy.chunk_loss_at(theta, &trajectories[c.traj], c.t, delta))
                .sum::<f64>()
                / denom
        },
        h,
        tolerance,
        256,
        policy.config.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::OraclePredictor;
    use crate::sim::{gen_experts, gen_suboptimal, SimConfig};

    fn small_policy() -> PolicyModel {
        PolicyModel::new(PolicyConfig {
            hidden: 8,
            ..Default::default()
        })
        .unwrap()
    }

    fn data() -> (Vec<Trajectory>, OraclePredictor) {
        let cfg = SimConfig::default();
        let mut sims = gen_experts(&cfg, 2, Exec::default()).unwrap();
        sims.extend(gen_suboptimal(&cfg, 2, Exec::default()).unwrap());
        let oracle = OraclePredictor::new(sims.iter().map(|s| (s.trajectory.id.clone(), s.truth.clone())).collect());
        (sims.into_iter().map(|s| s.trajectory).collect(), oracle)
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let (trajs, _) = data();
        let p = small_policy();
        let items: Vec<(Chunk, f64)> = chunks(&trajs, 25)
            .into_iter()
            .take(6)
            .zip([1.0, 0.5, 0.0, 0.25, 1.0, 0.75])
            .collect();
        let r = policy_gradient_check(&p, &trajs, &items, 25, 1e-6, 1e-5, 1e-4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn pinned_weights_reproduce_uniform_training() {
        let (trajs, oracle) = data();
        let geo = Geometry { seq_len: 9, gap: 30 };
        let run = |mode, pin| {
            let mut p = small_policy();
            let cfg = BcConfig {
                mode,
                pin_weights: pin,
                epochs: 2,
                ..Default::default()
            };
            train_bc(&mut p, &trajs, Some(&oracle), &geo, &cfg, Exec::default()).unwrap();
            p.params.values
        };
        assert_eq!(run(BcMode::Uniform, false), run(BcMode::RaBc, true));
    }

    #[test]
    fn zero_learning_rate_and_determinism() {
        let (trajs, oracle) = data();
        let geo = Geometry { seq_len: 9, gap: 30 };
        let base = small_policy();
        let mut p = base.clone();
        let cfg = BcConfig {
            mode: BcMode::RaBc,
            learning_rate: 0.0,
            epochs: 1,
            ..Default::default()
        };
        train_bc(&mut p, &trajs, Some(&oracle), &geo, &cfg, Exec::default()).unwrap();
        assert_eq!(p.params.values, base.params.values);

        let cfg = BcConfig {
            mode: BcMode::RaBc,
            weight_mode: WeightMode::Offline,
            epochs: 2,
            ..Default::default()
        };
        let mut a = base.clone();
        let mut b = base.clone();
        let ra = train_bc(&mut a, &trajs, Some(&oracle), &geo, &cfg, Exec::Sequential).unwrap();
        let rb = train_bc(&mut b, &trajs, Some(&oracle), &geo, &cfg, Exec::default()).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(ra, rb);
    }

    #[test]
    fn ra_bc_requires_predictor_and_matching_dims() {
        let (trajs, _) = data();
        let geo = Geometry { seq_len: 9, gap: 30 };
        let mut p = small_policy();
        let cfg = BcConfig {
            mode: BcMode::RaBc,
            ..Default::default()
        };
        assert!(matches!(train_bc(&mut p, &trajs, None, &geo, &cfg, Exec::default()), Err(Error::Config(_))));
        let mut wrong = PolicyModel::new(PolicyConfig {
            action_dim: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(eval_policy(&wrong, &trajs, Exec::default()).is_err());
        assert!(train_bc(&mut wrong, &trajs, None, &geo, &BcConfig::default(), Exec::default()).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let p = small_policy();
        p.save(&path, Metadata::new()).unwrap();
        let (back, _) = PolicyModel::load(&path).unwrap();
        assert_eq!(back, p);
    }
}
