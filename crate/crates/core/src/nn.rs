//! Flat parameter storage, dense layers and finite-difference checking.
//!
//! Models keep every parameter in one `Vec<f64>` and address tensors by
//! offset. Gradients use the same layout, so optimizers, norms and the
//! gradient checker work on plain slices.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    pub values: Vec<f64>,
    pub specs: Vec<TensorSpec>,
}

impl Params {
    /// Appends a zero-initialised `rows x cols` tensor and returns its spec.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorSpec {
        let spec = TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset: self.values.len(),
        };
        self.values.resize(self.values.len() + rows * cols, 0.0);
        self.specs.push(spec.clone());
        spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.spec(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    /// Serializable form, one nested row list per tensor.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.specs
            .iter()
            .map(|s| NamedTensor {
                name: s.name.clone(),
                data: self.values[s.range()]
                    .chunks(s.cols.max(1))
                    .map(<[f64]>::to_vec)
                    .collect(),
            })
            .collect()
    }

    /// Overwrites values from named tensors; names and shapes must match
    /// this layout exactly.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.specs.len() {
            return Err(Error::validation(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.specs.len()
            )));
        }
        for (spec, t) in self.specs.iter().zip(named) {
            let shape_ok = t.name == spec.name
                && t.data.len() == spec.rows
                && t.data.iter().all(|r| r.len() == spec.cols);
            if !shape_ok {
                return Err(Error::validation(format!(
                    "tensor `{}` does not match expected `{}` ({}x{})",
                    t.name, spec.name, spec.rows, spec.cols
                )));
            }
            let dst = &mut self.values[spec.range()];
            for (d, s) in dst.iter_mut().zip(t.data.iter().flatten()) {
                *d = *s;
            }
        }
        if !self.all_finite() {
            return Err(Error::Numerical("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub data: Vec<Vec<f64>>,
}

pub fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fills a tensor with `N(0, scale^2)` draws.
/// Rescales `grads` in place so its L2 norm is at most `max_norm`.
pub fn clip_norm(grads: &mut [f64], max_norm: f64) {
    let norm = l2(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

pub fn init_normal<R: Rng + ?Sized>(values: &mut [f64], scale: f64, rng: &mut R) {
    let normal = Normal::new(0.0, scale).expect("finite scale");
    for v in values {
        *v = normal.sample(rng);
    }
}

/// `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: TensorSpec,
    pub bias: Option<TensorSpec>,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(params: &mut Params, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = params.push(format!("{name}.weight"), output, input);
        let bias = bias.then(|| params.push(format!("{name}.bias"), 1, output));
        Dense {
            weight,
            bias,
            input,
            output,
        }
    }

    /// Scaled-normal weights (`1/sqrt(fan_in)`), zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let scale = 1.0 / (self.input as f64).sqrt();
        init_normal(&mut params[self.weight.range()], scale, rng);
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(y.len(), self.output);
        let w = &params[self.weight.range()];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.input..(o + 1) * self.input];
            *yo = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        if let Some(b) = &self.bias {
            for (yo, bo) in y.iter_mut().zip(&params[b.range()]) {
                *yo += bo;
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and, when given, the
    /// input gradient into `dx`.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
    ) {
        let wr = self.weight.range();
        {
            let gw = &mut grads[wr.clone()];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.input..(o + 1) * self.input];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        if let Some(b) = &self.bias {
            for (g, d) in grads[b.range()].iter_mut().zip(dy) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            let w = &params[wr];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * self.input..(o + 1) * self.input];
                for (g, wi) in dx.iter_mut().zip(row) {
                    *g += d * wi;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Smallest denominator used for relative error, so parameters with
/// vanishing gradients compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Compares `analytic` against central differences of `loss` on up to
/// `samples` parameters drawn without replacement (all of them if fewer).
pub fn check_gradient<F>(
    params: &[f64],
    analytic: &[f64],
    loss: F,
    h: f64,
    tolerance: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let n = params.len();
    let chosen: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut idx = index::sample(&mut rng::seeded(seed), n, samples).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut theta = params.to_vec();
    let mut worst = (0.0, 0);
    for &i in &chosen {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = loss(&theta);
        theta[i] = orig - h;
        let down = loss(&theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    GradCheckReport {
        checked: chosen.len(),
        max_rel_error: worst.0,
        worst_index: worst.1,
        tolerance,
        passed: worst.0 <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_gradient_matches_differences() {
        let mut p = Params::default();
        let layer = Dense::new(&mut p, "l", 3, 2, true);
        layer.init(&mut p.values, &mut rng::seeded(1));
        p.tensor_mut("l.bias").unwrap().copy_from_slice(&[0.1, -0.2]);
        let x = [0.5, -1.0, 2.0];
        let loss = |theta: &[f64]| {
            let mut y = [0.0; 2];
            layer.forward(theta, &x, &mut y);
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut y = [0.0; 2];
        layer.forward(&p.values, &x, &mut y);
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut g = vec![0.0; p.len()];
        layer.backward(&p.values, &mut g, &x, &dy, None);
        let r = check_gradient(&p.values, &g, loss, 1e-5, 1e-6, 100, 0);
        assert_eq!(r.checked, 8);
        assert!(r.passed, "{r:?}");

        g[2] *= 2.0;
        assert!(!check_gradient(&p.values, &g, loss, 1e-5, 1e-4, 100, 0).passed);
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient() {
        let mut p = Params::default();
        let layer = Dense::new(&mut p, "l", 4, 3, false);
        layer.init(&mut p.values, &mut rng::seeded(2));
        let mut g = vec![0.0; p.len()];
        layer.backward(&p.values, &mut g, &[0.0; 4], &[1.0, -2.0, 0.5], None);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_and_shift_invariance() {
        let l = [1.0, 3.0, -2.0, 0.5];
        let mut a = [0.0; 4];
        softmax(&l, &mut a);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = l.iter().map(|v| v + 100.0).collect();
        let mut b = [0.0; 4];
        softmax(&shifted, &mut b);
        assert_eq!(argmax(&a), argmax(&b));
        assert!((log_sum_exp(&shifted) - log_sum_exp(&l) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn named_round_trip() {
        let mut p = Params::default();
        Dense::new(&mut p, "a", 3, 2, true).init(&mut p.values, &mut rng::seeded(3));
        let named = p.to_named();
        let mut q = p.clone();
        q.values.iter_mut().for_each(|v| *v = 0.0);
        q.load_named(&named).unwrap();
        assert_eq!(p, q);
        let mut bad = named.clone();
        bad[0].data.pop();
        assert!(q.load_named(&bad).is_err());
    }
}
