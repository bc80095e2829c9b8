//! Per-round weak learner: a tanh MLP with a sigmoid head trained to tell
//! target samples (label 1) from model samples (label 0).
//!
//! The network output `σ(z) ∈ (0,1)` is mapped affinely onto the bounded
//! sufficient statistic `c(x) = log 2 · (2σ(z) - 1) ∈ (-log 2, log 2)`.

use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::targets::Dataset;

/// Hidden layer widths used by every round's classifier.
pub const HIDDEN: [usize; 3] = [25, 25, 25];

const MAX_WIDTH: usize = 64;

// Largest |tanh| kept after the affine map so that |c| < log 2 strictly.
const MAX_UNIT: f64 = 1.0 - 1e-15;

/// `log 2 · (2s - 1)` for a sigmoid output `s`.
pub fn output_from_sigmoid(s: f64) -> f64 {
    LN_2 * (2.0 * s - 1.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 750,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// The round's sufficient statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassifierRecord", into = "ClassifierRecord")]
pub struct Classifier {
    widths: Vec<usize>,
    // Flat parameters: per layer, row-major weights (out x in) then biases.
    params: Vec<f64>,
    offsets: Vec<usize>,
    pub c_star: f64,
}

#[derive(Serialize, Deserialize)]
struct ClassifierRecord {
    widths: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    c_star: f64,
}

impl From<Classifier> for ClassifierRecord {
    fn from(c: Classifier) -> Self {
        let layers = c.widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (w, b) = c.layer(l);
            weights.push(w.to_vec());
            biases.push(b.to_vec());
        }
        ClassifierRecord {
            widths: c.widths,
            weights,
            biases,
            c_star: c.c_star,
        }
    }
}

impl TryFrom<ClassifierRecord> for Classifier {
    type Error = Error;

    fn try_from(r: ClassifierRecord) -> Result<Self> {
        let mut c = Classifier::zeros(&r.widths)?;
        if r.weights.len() != r.widths.len() - 1 || r.biases.len() != r.widths.len() - 1 {
            return Err(Error::invalid("layer count does not match widths"));
        }
        for l in 0..r.widths.len() - 1 {
            let (n_in, n_out) = (r.widths[l], r.widths[l + 1]);
            if r.weights[l].len() != n_in * n_out || r.biases[l].len() != n_out {
                return Err(Error::invalid(format!("layer {l} has the wrong parameter count")));
            }
            let start = c.offsets[l];
            c.params[start..start + n_in * n_out].copy_from_slice(&r.weights[l]);
            c.params[start + n_in * n_out..start + n_in * n_out + n_out].copy_from_slice(&r.biases[l]);
        }
        if c.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("classifier parameters must be finite"));
        }
        c.c_star = r.c_star;
        Ok(c)
    }
}

impl Classifier {
    /// All-zero network with the given layer widths (input first, 1 last).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0 || w > MAX_WIDTH) {
            return Err(Error::invalid(format!("unsupported layer widths {widths:?}")));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::invalid("classifier must have a single output"));
        }
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for l in 0..widths.len() - 1 {
            offsets.push(total);
            total += widths[l] * widths[l + 1] + widths[l + 1];
        }
        offsets.push(total);
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; total],
            offsets,
            c_star: LN_2,
        })
    }

    /// Network `[dim, 25, 25, 25, 1]` with seeded uniform Glorot initialization.
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![dim];
        widths.extend_from_slice(&HIDDEN);
        widths.push(1);
        let mut c = Self::zeros(&widths)?;
        let mut rng = rng::rng_from(seed);
        for l in 0..widths.len() - 1 {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let start = c.offsets[l];
            for w in &mut c.params[start..start + n_in * n_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(c)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat parameter index range of layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let s = self.offsets[l];
        (
            &self.params[s..s + n_in * n_out],
            &self.params[s + n_in * n_out..s + n_in * n_out + n_out],
        )
    }

    /// Pre-sigmoid output `z`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut a = [0.0f64; MAX_WIDTH];
        let mut next = [0.0f64; MAX_WIDTH];
        a[..x.len()].copy_from_slice(x);
        let layers = self.num_layers();
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = self.layer(l);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for i in 0..n_in {
                    z += row[i] * a[i];
                }
                next[o] = if l + 1 < layers { z.tanh() } else { z };
            }
            a[..n_out].copy_from_slice(&next[..n_out]);
        }
        a[0]
    }

    /// Sigmoid output in (0,1).
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Bounded statistic `c(x) ∈ (-log 2, log 2)`.
    pub fn classify(&self, x: &[f64]) -> f64 {
        // log 2 (2σ(z) - 1) = log 2 · tanh(z/2)
        LN_2 * (0.5 * self.logit(x)).tanh().clamp(-MAX_UNIT, MAX_UNIT)
    }

    pub fn classify_checked(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.classify(x))
    }

    pub fn classify_all(&self, data: &Dataset) -> Vec<f64> {
        data.iter().map(|x| self.classify(x)).collect()
    }

    /// Mean binary cross-entropy and its gradient w.r.t. the flat parameters.
    pub fn loss_and_grad(&self, xs: &Dataset, labels: &[u8], grad: &mut [f64]) -> f64 {
        let idx: Vec<usize> = (0..xs.len()).collect();
        self.batch_loss_grad(&self.params, xs, labels, &idx, grad)
    }

    pub fn loss(&self, xs: &Dataset, labels: &[u8]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let z = self.logit(x);
            total += softplus(z) - f64::from(y) * z;
        }
        total / xs.len() as f64
    }

    // Backprop over the samples `idx` with parameters `params` (which may be a
    // look-ahead point rather than `self.params`).
    fn batch_loss_grad(&self, params: &[f64], xs: &Dataset, labels: &[u8], idx: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let layers = self.num_layers();
        let widths = &self.widths;
        let offsets = &self.offsets;
        // acts[l] holds the input to layer l; acts[layers] the logit.
        let mut acts = vec![[0.0f64; MAX_WIDTH]; layers + 1];
        let mut delta = [0.0f64; MAX_WIDTH];
        let mut prev = [0.0f64; MAX_WIDTH];
        let mut loss = 0.0;
        let scale = 1.0 / idx.len() as f64;

        for &s in idx {
            let x = xs.point(s);
            acts[0][..x.len()].copy_from_slice(x);
            for l in 0..layers {
                let (n_in, n_out) = (widths[l], widths[l + 1]);
                let off = offsets[l];
                let w = &params[off..off + n_in * n_out];
                let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
                let (head, tail) = acts.split_at_mut(l + 1);
                let input = &head[l];
                let out = &mut tail[0];
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let mut z = b[o];
                    for i in 0..n_in {
                        z += row[i] * input[i];
                    }
                    out[o] = if l + 1 < layers { z.tanh() } else { z };
                }
            }
            let z = acts[layers][0];
            let y = f64::from(labels[s]);
            loss += softplus(z) - y * z;

            delta[0] = (sigmoid(z) - y) * scale;
            for l in (0..layers).rev() {
                let (n_in, n_out) = (widths[l], widths[l + 1]);
                let off = offsets[l];
                let input = &acts[l];
                {
                    let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                    for o in 0..n_out {
                        let d = delta[o];
                        gb[o] += d;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            row[i] += d * input[i];
                        }
                    }
                }
                if l > 0 {
                    let w = &params[off..off + n_in * n_out];
                    prev[..n_in].iter_mut().for_each(|v| *v = 0.0);
                    for o in 0..n_out {
                        let d = delta[o];
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            prev[i] += row[i] * d;
                        }
                    }
                    for i in 0..n_in {
                        let a = input[i];
                        delta[i] = prev[i] * (1.0 - a * a);
                    }
                }
            }
        }
        loss * scale
    }
}

/// Train on `p_samples` (label 1) against `q_samples` (label 0).
pub fn train_classifier(p_samples: &Dataset, q_samples: &Dataset, cfg: &TrainConfig) -> Result<Classifier> {
    train_classifier_with_history(p_samples, q_samples, cfg).map(|(c, _)| c)
}

/// As [`train_classifier`], also returning the mean minibatch loss of every epoch.
pub fn train_classifier_with_history(
    p_samples: &Dataset,
    q_samples: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    cfg.validate()?;
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(Error::invalid("training needs samples from both classes"));
    }
    if p_samples.dim() != q_samples.dim() {
        return Err(Error::DimensionMismatch {
            expected: p_samples.dim(),
            got: q_samples.dim(),
        });
    }
    let mut xs = p_samples.clone();
    xs.extend(q_samples)?;
    let labels: Vec<u8> = std::iter::repeat_n(1u8, p_samples.len())
        .chain(std::iter::repeat_n(0u8, q_samples.len()))
        .collect();

    let mut model = Classifier::init(xs.dim(), rng::derive_seed(cfg.seed, 0))?;
    let mut shuffle_rng = rng::stream(cfg.seed, 1);
    let n_params = model.params.len();
    let mut velocity = vec![0.0; n_params];
    let mut lookahead = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = cfg.batch_size.min(xs.len());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            // Nesterov: gradient at the look-ahead point w + μv.
            for ((la, p), v) in lookahead.iter_mut().zip(&model.params).zip(&velocity) {
                *la = p + cfg.momentum * v;
            }
            let loss = model.batch_loss_grad(&lookahead, &xs, &labels, chunk, &mut grad);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
        }
        let mean = epoch_loss / seen as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(mean);
    }

    model.c_star = xs
        .iter()
        .map(|x| model.classify(x).abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    High,
    Low,
    Failed,
}

impl Regime {
    pub fn classify(gamma_p: f64, gamma_q: f64) -> Self {
        if gamma_p <= 0.0 || gamma_q <= 0.0 {
            Regime::Failed
        } else if gamma_q >= 1.0 / 3.0 {
            Regime::High
        } else {
            Regime::Low
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::High => "high",
            Regime::Low => "low",
            Regime::Failed => "failed",
        }
    }
}

/// Measured weak-learning advantages of one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlaReport {
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub c_star: f64,
    pub regime: Regime,
}

impl WlaReport {
    pub fn from_outputs(cp: &[f64], cq: &[f64]) -> Result<Self> {
        if cp.is_empty() || cq.is_empty() {
            return Err(Error::invalid("advantages need samples from both classes"));
        }
        let max = cp.iter().chain(cq).map(|v| v.abs()).fold(0.0, f64::max);
        if max == 0.0 {
            return Err(Error::DegenerateClassifier);
        }
        let c_star = max.max(1e-12);
        let mean_p = cp.iter().sum::<f64>() / cp.len() as f64;
        let mean_q = cq.iter().sum::<f64>() / cq.len() as f64;
        let gamma_p = (mean_p / c_star).clamp(-1.0, 1.0);
        let gamma_q = (-mean_q / c_star).clamp(-1.0, 1.0);
        Ok(Self {
            gamma_p,
            gamma_q,
            c_star,
            regime: Regime::classify(gamma_p, gamma_q),
        })
    }
}

/// `γ_P = E_P[c]/c*`, `γ_Q = E_Q[-c]/c*` with `c*` the largest |c| seen on either set.
pub fn wla_advantages(c: &Classifier, p_samples: &Dataset, q_samples: &Dataset) -> Result<WlaReport> {
    for d in [p_samples, q_samples] {
        if d.dim() != c.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: c.input_dim(),
                got: d.dim(),
            });
        }
    }
    WlaReport::from_outputs(&c.classify_all(p_samples), &c.classify_all(q_samples))
}

/// Max relative error between analytic and central-difference gradients.
pub fn gradient_check(c: &Classifier, batch: &Dataset, labels: &[u8], seed: u64) -> Result<f64> {
    gradient_check_with(c, batch, labels, seed, |c, xs, ys| {
        let mut g = vec![0.0; c.params().len()];
        c.loss_and_grad(xs, ys, &mut g);
        g
    })
}

/// Gradient check against an arbitrary analytic gradient routine.
///
/// Samples 16 parameters from each layer (all of them when the layer is
/// smaller), so every layer is covered.
pub fn gradient_check_with(
    c: &Classifier,
    batch: &Dataset,
    labels: &[u8],
    seed: u64,
    analytic: impl Fn(&Classifier, &Dataset, &[u8]) -> Vec<f64>,
) -> Result<f64> {
    if batch.is_empty() || labels.len() != batch.len() {
        return Err(Error::invalid("gradient check needs a labelled, non-empty batch"));
    }
    let grad = analytic(c, batch, labels);
    let mut rng = rng::rng_from(seed);
    let mut picks = Vec::new();
    for l in 0..c.num_layers() {
        let mut range: Vec<usize> = c.layer_range(l).collect();
        range.shuffle(&mut rng);
        picks.extend(range.into_iter().take(16));
    }
    let h = 1e-5;
    let mut probe = c.clone();
    let mut worst = 0.0f64;
    for &i in &picks {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(batch, labels);
        probe.params[i] = orig - h;
        let down = probe.loss(batch, labels);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{BaseDensity, ExactSampler};

    fn shifted(n: usize, offset: f64, seed: u64) -> Dataset {
        let base = BaseDensity::new(1).sample(n, seed);
        Dataset::from_flat(1, base.as_flat().iter().map(|v| v + offset).collect()).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn output_map_values() {
        assert_eq!(output_from_sigmoid(0.5), 0.0);
        assert!((output_from_sigmoid(1.0) - 0.693_147).abs() < 1e-6);
        assert!((output_from_sigmoid(0.75) - 0.346_574).abs() < 1e-6);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let c = Classifier::zeros(&[1, 25, 25, 25, 1]).unwrap();
        assert_eq!(c.classify(&[3.0]), 0.0);
        assert_eq!(c.probability(&[3.0]), 0.5);
    }

    #[test]
    fn saturated_output_stays_strictly_inside() {
        let mut c = Classifier::zeros(&[1, 1]).unwrap();
        c.params_mut()[0] = 1e6;
        let v = c.classify(&[1.0]);
        assert!(v < LN_2 && v > 0.693);
        assert!(c.classify(&[-1.0]) > -LN_2);
    }

    #[test]
    fn perfect_and_anti_classifiers() {
        let r = WlaReport::from_outputs(&[LN_2; 4], &[-LN_2; 4]).unwrap();
        assert_eq!(
            (r.gamma_p, r.gamma_q, r.c_star, r.regime),
            (1.0, 1.0, LN_2, Regime::High)
        );
        let anti = WlaReport::from_outputs(&[-LN_2; 4], &[-LN_2; 4]).unwrap();
        assert_eq!(anti.gamma_p, -1.0);
        assert_eq!(anti.regime, Regime::Failed);
        let constant = WlaReport::from_outputs(&[0.1; 3], &[0.1; 5]).unwrap();
        assert!((constant.gamma_p - 1.0).abs() < 1e-15);
        assert!((constant.gamma_q + 1.0).abs() < 1e-15);
        assert_eq!(constant.regime, Regime::Failed);
        assert!(matches!(
            WlaReport::from_outputs(&[0.0; 3], &[0.0; 3]),
            Err(Error::DegenerateClassifier)
        ));
    }

    #[test]
    fn regime_boundaries() {
        assert_eq!(Regime::classify(0.5, 1.0 / 3.0), Regime::High);
        assert_eq!(Regime::classify(0.5, 0.3), Regime::Low);
        assert_eq!(Regime::classify(0.0, 0.9), Regime::Failed);
        assert_eq!(Regime::classify(0.5, -0.1), Regime::Failed);
    }

    #[test]
    fn separable_classes_are_learned() {
        let p = shifted(300, 5.0, 1);
        let q = shifted(300, -5.0, 2);
        let cfg = TrainConfig {
            epochs: 40,
            seed: 3,
            ..TrainConfig::default()
        };
        let (c, hist) = train_classifier_with_history(&p, &q, &cfg).unwrap();
        assert!(hist.last().unwrap() < hist.first().unwrap());
        let r = wla_advantages(&c, &p, &q).unwrap();
        assert!(r.gamma_p > 0.9 && r.gamma_q > 0.9, "{r:?}");
        assert!(c.c_star > 0.0 && c.c_star < LN_2);
    }

    #[test]
    fn identical_classes_give_no_advantage() {
        let p = shifted(400, 0.0, 5);
        let cfg = TrainConfig {
            epochs: 20,
            seed: 1,
            ..TrainConfig::default()
        };
        let c = train_classifier(&p, &p, &cfg).unwrap();
        let r = wla_advantages(&c, &p, &p).unwrap();
        // The output collapses to a near-constant, so the normalized
        // advantages cancel exactly and the learner never qualifies.
        assert!(r.c_star < 0.05, "{r:?}");
        assert!((r.gamma_p + r.gamma_q).abs() < 1e-12, "{r:?}");
        assert_ne!(r.regime, Regime::High);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let p = shifted(100, 1.0, 1);
        let q = shifted(100, -1.0, 2);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_classifier(&p, &q, &cfg).unwrap();
        let b = train_classifier(&p, &q, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.c_star.to_bits(), b.c_star.to_bits());
    }

    #[test]
    fn dimension_mismatch_and_divergence() {
        let p = shifted(10, 0.0, 1);
        let q = BaseDensity::new(2).sample(10, 1);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_classifier(&p, &q, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let wild = TrainConfig {
            learning_rate: f64::MAX,
            epochs: 3,
            ..TrainConfig::default()
        };
        let far = shifted(50, 1e3, 2);
        assert!(matches!(
            train_classifier(&p, &far, &wild),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = Classifier::init(2, 4).unwrap();
        let xs = BaseDensity::new(2).sample(32, 8);
        let labels: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let err = gradient_check(&c, &xs, &labels, 1).unwrap();
        assert!(err < 1e-4, "max relative error {err}");

        let zero = Classifier::zeros(&[1, 25, 25, 25, 1]).unwrap();
        let sym = Dataset::from_flat(1, vec![-1.0, 1.0]).unwrap();
        let err0 = gradient_check(&zero, &sym, &[0, 1], 2).unwrap();
        assert!(err0.is_finite() && err0 < 1e-4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let c = Classifier::init(1, 4).unwrap();
        let xs = BaseDensity::new(1).sample(32, 8);
        let labels: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let err = gradient_check_with(&c, &xs, &labels, 1, |c, xs, ys| {
            let mut g = vec![0.0; c.params().len()];
            c.loss_and_grad(xs, ys, &mut g);
            g.iter_mut().for_each(|v| *v *= 1.5);
            g
        })
        .unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn json_round_trip_preserves_outputs() {
        let c = Classifier::init(2, 7).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"widths\"") && s.contains("\"biases\""));
        let back: Classifier = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.classify(&[0.3, -0.2]), c.classify(&[0.3, -0.2]));
    }
}
