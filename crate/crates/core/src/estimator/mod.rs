//! Stage-aware progress estimator.
//!
//! A shared trunk projects every frame to `d_model`, adds a learned bias to
//! position 0 only, and mean-pools the window (plus a task embedding) into a
//! context vector. Each position then feeds `[own ‖ context ‖ position 0]`
//! to a per-scheme head pair:
//!
//! * the stage head, a two-layer perceptron producing `K` logits;
//! * the subtask head, a two-layer perceptron over the same input plus the
//!   stage probabilities, squashed by a logistic into `tau` in `[0, 1]`.
//!
//! Progress is composed from the hard stage prediction:
//! `y = P[S-1] + alpha[S] * tau`, which keeps every estimate inside the
//! predicted stage's prior interval.

mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeling::PriorProfile;
use crate::nn::{self, Dense, GradCheckReport, Params, TensorSpec};
use crate::rng;
use crate::sampler::SequenceSample;

pub use train::{progress_mse, train, EpochRecord, TrainReport};

pub const ESTIMATOR_VERSION: &str = "stagewise-estimator/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub scheme_id: String,
    pub stages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub feature_dim: usize,
    pub use_joint_state: bool,
    pub joint_dim: usize,
    pub d_model: usize,
    pub stage_hidden: usize,
    pub subtask_hidden: usize,
    /// One head pair per annotation scheme.
    pub heads: Vec<HeadSpec>,
    /// Head trained by [`train`].
    pub scheme_id: String,
    pub task_vocab: Vec<String>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the subtask MSE against the stage cross-entropy.
    pub loss_mix: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            feature_dim: 16,
            use_joint_state: false,
            joint_dim: 0,
            d_model: 32,
            stage_hidden: 64,
            subtask_hidden: 64,
            heads: vec![HeadSpec {
                scheme_id: "sparse".into(),
                stages: 5,
            }],
            scheme_id: "sparse".into(),
            task_vocab: vec!["fold_tshirt".into(), "unrelated_task".into()],
            learning_rate: 1e-2,
            momentum: 0.0,
            batch_size: 32,
            epochs: 20,
            loss_mix: 1.0,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn check(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("d_model", self.d_model),
            ("stage_hidden", self.stage_hidden),
            ("subtask_hidden", self.subtask_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::config(format!("{name} must be >= 1")));
        }
        if self.use_joint_state && self.joint_dim == 0 {
            return Err(Error::config("joint state enabled with joint_dim = 0"));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.stages == 0) {
            return Err(Error::config("every head needs at least one stage"));
        }
        if !self.heads.iter().any(|h| h.scheme_id == self.scheme_id) {
            return Err(Error::config(format!("no head for scheme `{}`", self.scheme_id)));
        }
        if self.task_vocab.is_empty() {
            return Err(Error::config("task vocabulary is empty"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.loss_mix < 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::config("loss_mix must be >= 0 and grad_clip > 0"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.feature_dim + if self.use_joint_state { self.joint_dim } else { 0 }
    }

    pub fn stages(&self, scheme_id: &str) -> Option<usize> {
        self.heads.iter().find(|h| h.scheme_id == scheme_id).map(|h| h.stages)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct HeadLayout {
    stages: usize,
    stage_hidden: Dense,
    stage_out: Dense,
    subtask_hidden: Dense,
    subtask_out: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    proj: Dense,
    pos0: TensorSpec,
    task_embed: TensorSpec,
    heads: BTreeMap<String, HeadLayout>,
}

impl Layout {
    fn build(config: &EstimatorConfig, params: &mut Params) -> Self {
        let d = config.d_model;
        let proj = Dense::new(params, "trunk.proj", config.input_dim(), d, true);
        let pos0 = params.push("trunk.pos0", 1, d);
        let task_embed = params.push("trunk.task_embed", config.task_vocab.len(), d);
        let heads = config
            .heads
            .iter()
            .map(|h| {
                let name = |part: &str| format!("head.{}.{part}", h.scheme_id);
                let layout = HeadLayout {
                    stages: h.stages,
                    stage_hidden: Dense::new(params, &name("stage.0"), 3 * d, config.stage_hidden, true),
                    stage_out: Dense::new(params, &name("stage.1"), config.stage_hidden, h.stages, true),
                    subtask_hidden: Dense::new(
                        params,
                        &name("subtask.0"),
                        3 * d + h.stages,
                        config.subtask_hidden,
                        true,
                    ),
                    subtask_out: Dense::new(params, &name("subtask.1"), config.subtask_hidden, 1, true),
                };
                (h.scheme_id.clone(), layout)
            })
            .collect();
        Layout {
            proj,
            pos0,
            task_embed,
            heads,
        }
    }
}

/// Borrowed model input: one feature row (and optional joint row) per
/// position, plus the presented task id.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub features: &'a [Vec<f64>],
    pub joint_states: Option<&'a [Vec<f64>]>,
    pub task_id: &'a str,
}

impl SequenceSample {
    pub fn window(&self) -> Window<'_> {
        Window {
            features: &self.features,
            joint_states: self.joint_states.as_deref(),
            task_id: &self.task_id_presented,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// 1-based argmax stage.
    pub stage: Vec<usize>,
    pub tau: Vec<f64>,
    pub progress: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub stage_ce: f64,
    pub subtask_mse: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.stage_ce += o.stage_ce;
        self.subtask_mse += o.subtask_mse;
    }
}

impl LossParts {
    pub fn scaled(self, s: f64) -> Self {
        LossParts {
            total: self.total * s,
            stage_ce: self.stage_ce * s,
            subtask_mse: self.subtask_mse * s,
        }
    }
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    inputs: Vec<Vec<f64>>,
    /// Per-position `[h_j ‖ c ‖ h_0]`.
    head_in: Vec<Vec<f64>>,
    stage_act: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    sub_in: Vec<Vec<f64>>,
    sub_act: Vec<Vec<f64>>,
    tau: Vec<f64>,
    task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    pub config: EstimatorConfig,
    pub params: Params,
    layout: Layout,
}

impl EstimatorModel {
    /// Freshly initialised model; deterministic in `config.seed`.
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.check()?;
        let mut params = Params::default();
        let layout = Layout::build(&config, &mut params);
        let mut r = rng::stream(config.seed, "estimator-init", 0);
        layout.proj.init(&mut params.values, &mut r);
        nn::init_normal(&mut params.values[layout.pos0.range()], 0.1, &mut r);
        nn::init_normal(&mut params.values[layout.task_embed.range()], 0.1, &mut r);
        for head in layout.heads.values() {
            for l in [&head.stage_hidden, &head.stage_out, &head.subtask_hidden, &head.subtask_out] {
                l.init(&mut params.values, &mut r);
            }
        }
        Ok(EstimatorModel {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model from a config and serialized tensors.
    pub fn from_named(config: EstimatorConfig, named: &[nn::NamedTensor]) -> Result<Self> {
        config.check()?;
        let mut params = Params::default();
        let layout = Layout::build(&config, &mut params);
        params.load_named(named)?;
        Ok(EstimatorModel {
            config,
            params,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn head(&self, scheme_id: &str) -> Result<&HeadLayout> {
        self.layout
            .heads
            .get(scheme_id)
            .ok_or_else(|| Error::validation(format!("model has no head for scheme `{scheme_id}`")))
    }

    fn task_index(&self, task_id: &str) -> Result<usize> {
        self.config
            .task_vocab
            .iter()
            .position(|t| t == task_id)
            .ok_or_else(|| Error::validation(format!("task `{task_id}` not in model vocabulary")))
    }

    fn inputs(&self, w: &Window<'_>) -> Result<Vec<Vec<f64>>> {
        if w.features.is_empty() {
            return Err(Error::validation("empty window"));
        }
        let fd = self.config.feature_dim;
        if let Some(bad) = w.features.iter().find(|f| f.len() != fd) {
            return Err(Error::validation(format!(
                "feature dimension {} does not match model ({fd})",
                bad.len()
            )));
        }
        if !self.config.use_joint_state {
            return Ok(w.features.to_vec());
        }
        let joints = w
            .joint_states
            .ok_or_else(|| Error::validation("model expects joint states"))?;
        if joints.len() != w.features.len() || joints.iter().any(|j| j.len() != self.config.joint_dim) {
            return Err(Error::validation(format!(
                "joint state dimension does not match model ({})",
                self.config.joint_dim
            )));
        }
        Ok(w
            .features
            .iter()
            .zip(joints)
            .map(|(f, j)| f.iter().chain(j).copied().collect())
            .collect())
    }

    fn run(&self, p: &[f64], w: &Window<'_>, head: &HeadLayout) -> Result<Cache> {
        let inputs = self.inputs(w)?;
        let task = self.task_index(w.task_id)?;
        let n = inputs.len();
        let d = self.config.d_model;
        let k = head.stages;
        let l = &self.layout;

        let mut proj = vec![vec![0.0; d]; n];
        for (x, h) in inputs.iter().zip(proj.iter_mut()) {
            l.proj.forward(p, x, h);
        }
        for (h, b) in proj[0].iter_mut().zip(&p[l.pos0.range()]) {
            *h += b;
        }
        let embed = &p[l.task_embed.offset + task * d..l.task_embed.offset + (task + 1) * d];
        let context: Vec<f64> = (0..d)
            .map(|i| proj.iter().map(|h| h[i]).sum::<f64>() / n as f64 + embed[i])
            .collect();

        let mut cache = Cache {
            inputs,
            head_in: Vec::with_capacity(n),
            stage_act: Vec::with_capacity(n),
            logits: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            sub_in: Vec::with_capacity(n),
            sub_act: Vec::with_capacity(n),
            tau: Vec::with_capacity(n),
            task,
        };
        for h in &proj {
            let z: Vec<f64> = h.iter().chain(&context).chain(&proj[0]).copied().collect();

            let mut a1 = vec![0.0; self.config.stage_hidden];
            head.stage_hidden.forward(p, &z, &mut a1);
            a1.iter_mut().for_each(|v| *v = v.tanh());
            let mut logits = vec![0.0; k];
            head.stage_out.forward(p, &a1, &mut logits);
            let mut probs = vec![0.0; k];
            nn::softmax(&logits, &mut probs);

            let u: Vec<f64> = z.iter().chain(&probs).copied().collect();
            let mut a2 = vec![0.0; self.config.subtask_hidden];
            head.subtask_hidden.forward(p, &u, &mut a2);
            a2.iter_mut().for_each(|v| *v = v.tanh());
            let mut s = [0.0];
            head.subtask_out.forward(p, &a2, &mut s);

            cache.head_in.push(z);
            cache.stage_act.push(a1);
            cache.logits.push(logits);
            cache.probs.push(probs);
            cache.sub_in.push(u);
            cache.sub_act.push(a2);
            cache.tau.push(nn::sigmoid(s[0]));
        }
        Ok(cache)
    }

    /// Per-position stage logits, probabilities, argmax stage, `tau` and
    /// composed progress.
    pub fn forward(&self, window: &Window<'_>, priors: &PriorProfile) -> Result<ForwardOutput> {
        let head = self.head(&priors.scheme_id)?;
        if head.stages != priors.num_stages() {
            return Err(Error::validation(format!(
                "priors have {} stages, head `{}` has {}",
                priors.num_stages(),
                priors.scheme_id,
                head.stages
            )));
        }
        let c = self.run(&self.params.values, window, head)?;
        let stage: Vec<usize> = c.probs.iter().map(|p| nn::argmax(p) + 1).collect();
        let progress = stage
            .iter()
            .zip(&c.tau)
            .map(|(&s, &t)| priors.compose(s, t))
            .collect();
        Ok(ForwardOutput {
            logits: c.logits,
            probs: c.probs,
            stage,
            tau: c.tau,
            progress,
        })
    }

    /// Loss of one sample under `scheme_id`'s head.
    pub fn sample_loss(&self, sample: &SequenceSample, scheme_id: &str) -> Result<LossParts> {
        self.sample_loss_at(&self.params.values, sample, scheme_id)
    }

    fn sample_loss_at(&self, p: &[f64], sample: &SequenceSample, scheme_id: &str) -> Result<LossParts> {
        let head = self.head(scheme_id)?;
        let c = self.run(p, &sample.window(), head)?;
        check_targets(sample, head.stages)?;
        Ok(loss_from(&c.logits, &c.tau, sample, self.config.loss_mix))
    }

    /// Mean loss over `batch` evaluated at an arbitrary parameter vector.
    pub fn batch_loss_at(&self, p: &[f64], batch: &[SequenceSample], scheme_id: &str) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss_at(p, s, scheme_id)?.total;
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and gradient of one sample; the gradient is added to `grads`.
    pub fn sample_grad(&self, sample: &SequenceSample, scheme_id: &str, grads: &mut [f64]) -> Result<LossParts> {
        let p = &self.params.values;
        let head = self.head(scheme_id)?;
        let c = self.run(p, &sample.window(), head)?;
        check_targets(sample, head.stages)?;
        let parts = loss_from(&c.logits, &c.tau, sample, self.config.loss_mix);

        let n = c.inputs.len();
        let nf = n as f64;
        let d = self.config.d_model;
        let k = head.stages;
        let l = &self.layout;

        let mut d_proj = vec![vec![0.0; d]; n];
        let mut d_context = vec![0.0; d];
        for j in 0..n {
            // subtask head
            let tau = c.tau[j];
            let d_tau = self.config.loss_mix * 2.0 * (tau - sample.tau_targets[j]) / nf;
            let d_s = [d_tau * tau * (1.0 - tau)];
            let mut d_a2 = vec![0.0; self.config.subtask_hidden];
            head.subtask_out.backward(p, grads, &c.sub_act[j], &d_s, Some(&mut d_a2));
            let d_pre2: Vec<f64> = d_a2
                .iter()
                .zip(&c.sub_act[j])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            let mut d_u = vec![0.0; 3 * d + k];
            head.subtask_hidden.backward(p, grads, &c.sub_in[j], &d_pre2, Some(&mut d_u));

            // stage head: cross-entropy plus the path through the probabilities
            let probs = &c.probs[j];
            let d_probs = &d_u[3 * d..];
            let dot: f64 = d_probs.iter().zip(probs).map(|(a, b)| a * b).sum();
            let target = sample.stage_targets[j] - 1;
            let d_logits: Vec<f64> = (0..k)
                .map(|i| {
                    let ce = (probs[i] - if i == target { 1.0 } else { 0.0 }) / nf;
                    ce + probs[i] * (d_probs[i] - dot)
                })
                .collect();
            let mut d_a1 = vec![0.0; self.config.stage_hidden];
            head.stage_out.backward(p, grads, &c.stage_act[j], &d_logits, Some(&mut d_a1));
            let d_pre1: Vec<f64> = d_a1
                .iter()
                .zip(&c.stage_act[j])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            let mut d_z = d_u;
            d_z.truncate(3 * d);
            head.stage_hidden.backward(p, grads, &c.head_in[j], &d_pre1, Some(&mut d_z));

            for i in 0..d {
                d_proj[j][i] += d_z[i];
                d_context[i] += d_z[d + i];
                d_proj[0][i] += d_z[2 * d + i];
            }
        }

        let embed = l.task_embed.offset + c.task * d;
        for i in 0..d {
            grads[embed + i] += d_context[i];
            for dp in d_proj.iter_mut() {
                dp[i] += d_context[i] / nf;
            }
        }
        for (g, dp) in grads[l.pos0.range()].iter_mut().zip(&d_proj[0]) {
            *g += dp;
        }
        for (x, dp) in c.inputs.iter().zip(&d_proj) {
            l.proj.backward(p, grads, x, dp, None);
        }
        Ok(parts)
    }

    /// Mean gradient over a batch, reduced in input order.
    pub fn batch_grad(&self, batch: &[SequenceSample], scheme_id: &str, exec: Exec) -> Result<(LossParts, Vec<f64>)> {
        let per_sample = exec.try_map(batch, |s| {
            let mut g = vec![0.0; self.num_params()];
            self.sample_grad(s, scheme_id, &mut g).map(|parts| (parts, g))
        })?;
        let mut grads = vec![0.0; self.num_params()];
        let mut parts = LossParts::default();
        for (lp, g) in per_sample {
            parts += lp;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        Ok((parts.scaled(scale), grads))
    }
}

fn check_targets(sample: &SequenceSample, stages: usize) -> Result<()> {
    let n = sample.len();
    if sample.stage_targets.len() != n || sample.tau_targets.len() != n {
        return Err(Error::validation(format!(
            "`{}`: targets misaligned with {n} positions",
            sample.trajectory_id
        )));
    }
    if let Some(s) = sample.stage_targets.iter().find(|&&s| s == 0 || s > stages) {
        return Err(Error::validation(format!(
            "`{}`: stage target {s} outside 1..={stages}",
            sample.trajectory_id
        )));
    }
    Ok(())
}

fn loss_from(logits: &[Vec<f64>], tau: &[f64], sample: &SequenceSample, mix: f64) -> LossParts {
    let n = logits.len() as f64;
    let stage_ce = logits
        .iter()
        .zip(&sample.stage_targets)
        .map(|(l, &k)| nn::log_sum_exp(l) - l[k - 1])
        .sum::<f64>()
        / n;
    let subtask_mse = tau
        .iter()
        .zip(&sample.tau_targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    LossParts {
        total: stage_ce + mix * subtask_mse,
        stage_ce,
        subtask_mse,
    }
}

/// Combined loss for externally supplied head outputs.
pub fn loss(outputs: &ForwardOutput, sample: &SequenceSample, loss_mix: f64) -> LossParts {
    loss_from(&outputs.logits, &outputs.tau, sample, loss_mix)
}

/// Analytic batch gradient against central differences on at least 200
/// sampled parameters (all of them for smaller models).
pub fn gradient_check(
    model: &EstimatorModel,
    batch: &[SequenceSample],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let scheme = model.config.scheme_id.clone();
    let (_, grads) = model.batch_grad(batch, &scheme, Exec::default())?;
    batch_loss_check(model, batch, &scheme, &grads, h, tolerance)
}

/// Finite-difference comparison against a caller-supplied gradient.
pub fn batch_loss_check(
    model: &EstimatorModel,
    batch: &[SequenceSample],
    scheme: &str,
    grads: &[f64],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    model.batch_loss_at(&model.params.values, batch, scheme)?;
    Ok(nn::check_gradient(
        &model.params.values,
        grads,
        |theta| model.batch_loss_at(theta, batch, scheme).expect("validated batch"),
        h,
        tolerance,
        256,
        model.config.seed,
    ))
}
