//! Reward-aligned weighting of behavior-cloning data.
//!
//! Each training item is a chunk of `delta` frames. Its raw signal is the
//! progress change across the chunk. Raw deltas feed running statistics; a
//! delta maps to a linear-ramp weight between `mu - 2 sigma` and
//! `mu + 2 sigma` (with `mu` clamped to be nonnegative), and the threshold
//! `kappa` overrides the ramp for clearly good or bad items.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::predictor::{progress_at, ProgressPredictor};
use crate::sampler::Geometry;
use crate::trajectory::Trajectory;

/// Streaming count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Pairwise combination of two partial statistics.
    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let n = self.count + other.count;
        let (na, nb, nf) = (self.count as f64, other.count as f64, n as f64);
        let d = other.mean - self.mean;
        RunningStats {
            count: n,
            mean: self.mean + d * nb / nf,
            m2: self.m2 + other.m2 + d * d * na * nb / nf,
        }
    }

    /// Sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        iter.into_iter().for_each(|x| s.update(x));
        s
    }
}

impl Extend<f64> for RunningStats {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        iter.into_iter().for_each(|x| self.update(x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub kappa: f64,
    /// Guard in the weighted objective's denominator.
    pub eps_div: f64,
    /// Guard in the ramp width.
    pub eps_var: f64,
    /// Chunk stride in frames.
    pub delta: usize,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            kappa: 0.01,
            eps_div: 1e-6,
            eps_var: 1e-6,
            delta: 25,
        }
    }
}

impl WeightConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.eps_div > 0.0 && self.eps_var > 0.0) {
            return Err(Error::config("kappa and both epsilon guards must be > 0"));
        }
        if self.delta == 0 {
            return Err(Error::config("chunk stride must be >= 1"));
        }
        Ok(())
    }
}

pub fn soft_weight(r_hat: f64, mu: f64, sigma: f64, eps_var: f64) -> f64 {
    let mu = mu.max(0.0);
    ((r_hat - (mu - 2.0 * sigma)) / (4.0 * sigma + eps_var)).clamp(0.0, 1.0)
}

pub fn apply_prior(r_hat: f64, soft: f64, kappa: f64) -> f64 {
    if r_hat > kappa {
        1.0
    } else if r_hat >= 0.0 {
        soft
    } else {
        0.0
    }
}

/// Final item weight from the current statistics.
pub fn item_weight(r_hat: f64, stats: &RunningStats, cfg: &WeightConfig) -> f64 {
    apply_prior(r_hat, soft_weight(r_hat, stats.mean, stats.std(), cfg.eps_var), cfg.kappa)
}

/// `sum(w * l) / (sum(w) + eps_div)`.
pub fn weighted_loss(losses: &[f64], weights: &[f64], eps_div: f64) -> f64 {
    let num: f64 = losses.iter().zip(weights).map(|(l, w)| l * w).sum();
    let den: f64 = weights.iter().sum();
    num / (den + eps_div)
}

/// Progress change across one chunk starting at `t`.
pub fn progress_delta(
    predictor: &dyn ProgressPredictor,
    trajectory: &Trajectory,
    t: usize,
    delta: usize,
    geometry: &Geometry,
) -> Result<f64> {
    if t + delta >= trajectory.len() {
        return Err(Error::validation(format!(
            "`{}`: chunk {t}+{delta} runs past the last frame {}",
            trajectory.id,
            trajectory.len() - 1
        )));
    }
    let now = progress_at(predictor, trajectory, t, geometry)?;
    let next = progress_at(predictor, trajectory, t + delta, geometry)?;
    Ok(next - now)
}

/// Chunk start frames: `0, delta, 2 delta, ...` while the next window fits.
pub fn chunk_starts(len: usize, delta: usize) -> impl Iterator<Item = usize> {
    (0..len).step_by(delta.max(1)).take_while(move |t| t + delta < len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub trajectory_id: String,
    pub t: usize,
    pub r_hat: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub kappa: f64,
    pub delta: usize,
    pub eps_div: f64,
    pub eps_var: f64,
    pub predictor: String,
    pub stats: RunningStats,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedChunk {
    pub trajectory_id: String,
    pub t: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub header: WeightHeader,
    pub rows: Vec<WeightRow>,
    pub skipped: Vec<SkippedChunk>,
}

/// Offline weighting pass.
///
/// Deltas are computed per trajectory (in parallel), folded into the
/// statistics in trajectory-then-frame order, and every chunk is then
/// weighted against the final statistics.
pub fn weight_dataset(
    predictor: &dyn ProgressPredictor,
    trajectories: &[Trajectory],
    cfg: &WeightConfig,
    geometry: &Geometry,
    exec: Exec,
) -> Result<(WeightTable, RunningStats)> {
    cfg.check()?;
    let per_traj = exec.map(trajectories, |traj| {
        chunk_starts(traj.len(), cfg.delta)
            .map(|t| (t, progress_delta(predictor, traj, t, cfg.delta, geometry)))
            .collect::<Vec<_>>()
    });

    let mut stats = RunningStats::new();
    let mut deltas = Vec::new();
    let mut skipped = Vec::new();
    for (traj, chunks) in trajectories.iter().zip(per_traj) {
        for (t, r) in chunks {
            match r {
                Ok(r) => {
                    stats.update(r);
                    deltas.push((traj.id.clone(), t, r));
                }
                Err(e) => {
                    log::warn!("skipping chunk {}@{t}: {e}", traj.id);
                    skipped.push(SkippedChunk {
                        trajectory_id: traj.id.clone(),
                        t,
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    let rows = deltas
        .into_iter()
        .map(|(trajectory_id, t, r_hat)| WeightRow {
            w: item_weight(r_hat, &stats, cfg),
            trajectory_id,
            t,
            r_hat,
        })
        .collect();
    let header = WeightHeader {
        kappa: cfg.kappa,
        delta: cfg.delta,
        eps_div: cfg.eps_div,
        eps_var: cfg.eps_var,
        predictor: predictor.id(),
        stats,
        mu: stats.mean.max(0.0),
        sigma: stats.std(),
    };
    Ok((
        WeightTable {
            header,
            rows,
            skipped,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ConstantPredictor, OraclePredictor};
    use crate::trajectory::Frame;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let sd = if xs.len() < 2 { 0.0 } else { (ss / (n - 1.0)).sqrt() };
        (mean, sd)
    }

    #[test]
    fn welford_small_examples() {
        let s: RunningStats = [0.1, 0.2, 0.3].into_iter().collect();
        let (m, sd) = two_pass(&[0.1, 0.2, 0.3]);
        assert_abs_diff_eq!(s.mean, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean, m, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std(), sd, epsilon = 1e-15);

        let one: RunningStats = [0.7].into_iter().collect();
        assert_eq!(one.std(), 0.0);
        assert_eq!(RunningStats::new().std(), 0.0);

        let a: RunningStats = [0.1, 0.2].into_iter().collect();
        let b: RunningStats = [0.3].into_iter().collect();
        let m = a.merge(&b);
        assert_eq!(m.count, 3);
        assert_abs_diff_eq!(m.mean, s.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m2, s.m2, epsilon = 1e-12);
        assert_eq!(a.merge(&RunningStats::new()), a);
    }

    #[test]
    fn ramp_closed_forms() {
        assert_abs_diff_eq!(soft_weight(0.03, 0.02, 0.01, 1e-6), 0.75, epsilon = 1e-4);
        assert_abs_diff_eq!(soft_weight(0.03, 0.02, 0.01, 0.0), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(soft_weight(0.02, 0.02, 0.01, 1e-6), 0.5, epsilon = 1e-4);
        assert_eq!(soft_weight(0.05, 0.02, 0.01, 1e-6), 1.0);
        assert_eq!(soft_weight(0.0, 0.02, 0.01, 1e-6), 0.0);
        assert_eq!(soft_weight(0.01, -0.5, 0.02, 1e-6), soft_weight(0.01, 0.0, 0.02, 1e-6));
    }

    #[test]
    fn override_branches() {
        assert_eq!(apply_prior(0.02, 0.1, 0.01), 1.0);
        assert_eq!(apply_prior(-0.05, 0.9, 0.01), 0.0);
        assert_eq!(apply_prior(0.005, 0.3, 0.01), 0.3);
        assert_eq!(apply_prior(0.0, 0.3, 0.01), 0.3);
        assert_eq!(apply_prior(0.01, 0.3, 0.01), 0.3);
    }

    #[test]
    fn weighted_objective() {
        assert!((weighted_loss(&[1.0, 3.0], &[1.0, 1.0], 1e-6) - 2.0).abs() / 2.0 < 1e-5);
        assert_eq!(weighted_loss(&[5.0, 7.0], &[0.0, 0.0], 1e-6), 0.0);
        assert!((weighted_loss(&[1.0, 3.0], &[1.0, 0.0], 1e-6) - 1.0).abs() < 1e-5);
    }

    fn ramp_traj(id: &str, truth: &[f64]) -> Trajectory {
        let frames = (0..truth.len()).map(|i| Frame::new(i, 30, vec![0.0])).collect();
        Trajectory::new(id, "task", 30, frames).unwrap()
    }

    #[test]
    fn oracle_deltas() {
        let truth: Vec<f64> = (0..100)
            .map(|t| match t {
                0..=49 => 0.40,
                50..=74 => 0.45,
                _ => 0.42,
            })
            .collect();
        let traj = ramp_traj("x", &truth);
        let mut o = OraclePredictor::default();
        o.insert("x", truth);
        let geo = Geometry { seq_len: 2, gap: 1 };
        assert_abs_diff_eq!(progress_delta(&o, &traj, 25, 25, &geo).unwrap(), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(progress_delta(&o, &traj, 60, 25, &geo).unwrap(), -0.03, epsilon = 1e-12);
        assert_eq!(progress_delta(&o, &traj, 0, 10, &geo).unwrap(), 0.0);
        assert!(progress_delta(&o, &traj, 80, 20, &geo).is_err());
    }

    #[test]
    fn weight_table_shape_and_empty() {
        let geo = Geometry { seq_len: 2, gap: 1 };
        let (t, s) = weight_dataset(&ConstantPredictor(0.3), &[], &WeightConfig::default(), &geo, Exec::default()).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(s.count, 0);

        let traj = ramp_traj("x", &[0.0; 101]);
        let (t, s) = weight_dataset(&ConstantPredictor(0.3), &[traj], &WeightConfig::default(), &geo, Exec::default()).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 25, 50, 75]);
        assert_eq!(s.count, 4);
        assert_eq!(t.header.kappa, 0.01);
        assert_eq!(t.header.delta, 25);
    }

    #[test]
    fn failing_predictor_chunks_are_skipped() {
        let geo = Geometry { seq_len: 2, gap: 1 };
        let traj = ramp_traj("missing", &[0.0; 60]);
        let (t, s) = weight_dataset(&OraclePredictor::default(), &[traj], &WeightConfig::default(), &geo, Exec::default()).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.skipped.len(), 2);
        assert_eq!(s.count, 0);
    }

    proptest! {
        #[test]
        fn weight_bounded_and_monotone(
            mu in -0.1f64..0.1, sigma in 0.0f64..0.05, a in -0.2f64..0.2, b in -0.2f64..0.2,
        ) {
            let stats = RunningStats { count: 10, mean: mu, m2: sigma * sigma * 9.0 };
            let cfg = WeightConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let wl = item_weight(lo, &stats, &cfg);
            let wh = item_weight(hi, &stats, &cfg);
            prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
            prop_assert!(wl <= wh);
        }

        #[test]
        fn merge_matches_stream_and_associates(
            xs in proptest::collection::vec(-1.0f64..1.0, 0..60),
            cut1 in 0usize..60, cut2 in 0usize..60,
        ) {
            let (c1, c2) = { let a = cut1.min(xs.len()); let b = cut2.min(xs.len()); (a.min(b), a.max(b)) };
            let a: RunningStats = xs[..c1].iter().copied().collect();
            let b: RunningStats = xs[c1..c2].iter().copied().collect();
            let c: RunningStats = xs[c2..].iter().copied().collect();
            let whole: RunningStats = xs.iter().copied().collect();
            let left = a.merge(&b).merge(&c);
            let right = a.merge(&b.merge(&c));
            for m in [left, right] {
                prop_assert_eq!(m.count, whole.count);
                prop_assert!((m.mean - whole.mean).abs() <= 1e-12);
                prop_assert!((m.m2 - whole.m2).abs() <= 1e-12);
            }
        }
    }
}
