use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EstimatorModel, LossParts};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeling::PriorProfile;
use crate::nn;
use crate::rng;
use crate::sampler::SequenceSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage_ce: f64,
    pub subtask_mse: f64,
    /// Mean squared progress error on the validation samples, if any.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scheme_id: String,
    pub samples: usize,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Tab-separated `epoch, stage_ce, subtask_mse, val_mse`.
    pub fn to_tsv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Mean squared error between composed progress and progress targets over
/// every position of `samples`.
pub fn progress_mse(model: &EstimatorModel, samples: &[SequenceSample], priors: &PriorProfile, exec: Exec) -> Result<f64> {
    let per = exec.try_map(samples, |s| {
        model.forward(&s.window(), priors).map(|out| {
            out.progress
                .iter()
                .zip(&s.progress_targets)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
    })?;
    let positions: usize = samples.iter().map(SequenceSample::len).sum();
    Ok(per.iter().sum::<f64>() / positions as f64)
}

/// Minibatch SGD (optional momentum, global-norm clipping) on the head
/// selected by `model.config.scheme_id` and the shared trunk.
///
/// Shuffling uses a stream derived from the config seed and gradients are
/// reduced in batch order, so the run is reproducible in either execution
/// mode.
pub fn train(
    model: &mut EstimatorModel,
    samples: &[SequenceSample],
    validation: &[SequenceSample],
    priors: &PriorProfile,
    exec: Exec,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let cfg = model.config.clone();
    cfg.check()?;
    if priors.scheme_id != cfg.scheme_id {
        return Err(Error::validation(format!(
            "priors for `{}` but training head `{}`",
            priors.scheme_id, cfg.scheme_id
        )));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "estimator-shuffle", 0);
    let mut velocity = vec![0.0; model.num_params()];
    let mut report = TrainReport {
        scheme_id: cfg.scheme_id.clone(),
        samples: samples.len(),
        steps: 0,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossParts::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<SequenceSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let (parts, mut grads) = model.batch_grad(&batch, &cfg.scheme_id, exec)?;
            if !parts.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss {} at epoch {epoch}, batch {b}; parameter norm {:.6e}",
                    parts.total,
                    model.params.norm()
                )));
            }
            nn::clip_norm(&mut grads, cfg.grad_clip);
            for ((v, g), p) in velocity.iter_mut().zip(&grads).zip(model.params.values.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            sum += parts.scaled(batch.len() as f64);
            report.steps += 1;
        }
        let mean = sum.scaled(1.0 / samples.len() as f64);
        let val_mse = if validation.is_empty() {
            None
        } else {
            Some(progress_mse(model, validation, priors, exec)?)
        };
        log::debug!(
            "epoch {epoch}: ce {:.5} mse {:.5} val {:?}",
            mean.stage_ce,
            mean.subtask_mse,
            val_mse
        );
        report.epochs.push(EpochRecord {
            epoch,
            stage_ce: mean.stage_ce,
            subtask_mse: mean.subtask_mse,
            val_mse,
        });
    }
    if !model.params.all_finite() {
        return Err(Error::Numerical("training produced non-finite parameters".into()));
    }
    Ok(report)
}
