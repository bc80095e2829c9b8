//! Mollified boosting: the geometric θ-schedule, the multiplicative
//! exponential-family update `Q_t ∝ Q_{t-1} exp(θ_t c_t)` and its
//! log-normalizer.

use std::f64::consts::LN_2;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::{mh_sample, McmcConfig, MhDiagnostics, MIN_ACCEPTANCE};
use crate::targets::{BaseDensity, Certificate, Dataset, ExactSampler, LogDensity, TargetDensity};
use crate::weak_learner::{train_classifier, wla_advantages, Classifier, TrainConfig, WlaReport};

/// `θ_t = (ε / (ε + 4 log 2))^t` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSchedule {
    pub eps: f64,
    pub values: Vec<f64>,
}

/// Common ratio of the schedule.
pub fn theta_ratio(eps: f64) -> f64 {
    eps / (eps + 4.0 * LN_2)
}

/// `ε / (4 log 2)`, the limit of the schedule's partial sums.
pub fn theta_sum_limit(eps: f64) -> f64 {
    eps / (4.0 * LN_2)
}

pub fn theta_schedule(eps: f64, rounds: usize) -> Result<ThetaSchedule> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let r = theta_ratio(eps);
    let values = (1..=rounds).map(|t| r.powi(t as i32)).collect();
    Ok(ThetaSchedule { eps, values })
}

impl ThetaSchedule {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Compensated sum, accurate to a couple of ulps for any `T`.
    pub fn sum(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        self.values.iter().for_each(|v| acc.add(*v));
        acc.value()
    }

    /// Natural log of `ε/(4 log 2) - Σ_{t≤T} θ_t = r^{T+1}/(1-r)`.
    ///
    /// Computed without cancellation, so a finite value certifies the strict
    /// inequality even when the gap is far below double precision.
    pub fn log_gap(&self) -> f64 {
        let r = theta_ratio(self.eps);
        (self.values.len() as f64 + 1.0) * r.ln() - (-r).ln_1p()
    }

    /// Strict partial-sum bound at every prefix.
    ///
    /// For each prefix the residual is certified positive in log space, and
    /// the floating-point running sum must not exceed the limit by more than
    /// [`float_slack`]; wherever the residual exceeds that allowance the
    /// running sum must be strictly below the limit.
    pub fn partial_sums_below_limit(&self) -> bool {
        let limit = theta_sum_limit(self.eps);
        let r = theta_ratio(self.eps);
        let log_tail = -(-r).ln_1p();
        let mut acc = NeumaierSum::default();
        for (t, v) in self.values.iter().enumerate() {
            acc.add(*v);
            let sum = acc.value();
            let log_gap = (t as f64 + 2.0) * r.ln() + log_tail;
            if !log_gap.is_finite() {
                return false;
            }
            let gap = log_gap.exp();
            let slack = float_slack(self.eps);
            if gap > slack {
                if !(sum < limit) {
                    return false;
                }
            } else if sum > limit + slack {
                return false;
            }
        }
        true
    }
}

/// Rounding allowance for a float sum of the schedule.
///
/// `θ_t = r^t` inherits about `t` ulps of relative error from the rounding
/// of `r`; weighted by `θ_t` that totals about `limit / (1 - r)` ulps.
pub fn float_slack(eps: f64) -> f64 {
    8.0 * f64::EPSILON * theta_sum_limit(eps) / (1.0 - theta_ratio(eps))
}

#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `Q_T = Q_0 exp(<θ, c> - φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct MollifiedDensity {
    pub base: BaseDensity,
    pub eps: f64,
    pub thetas: ThetaSchedule,
    pub classifiers: Vec<Classifier>,
    pub phi_hat: f64,
    pub phi_stderr: f64,
    pub wla_history: Vec<WlaReport>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    eps: f64,
    dim: usize,
    #[serde(rename = "T")]
    rounds: usize,
    thetas: Vec<f64>,
    phi_hat: f64,
    phi_stderr: f64,
    classifiers: Vec<Classifier>,
    wla_history: Vec<WlaReport>,
    seed: u64,
}

impl From<MollifiedDensity> for ModelRecord {
    fn from(m: MollifiedDensity) -> Self {
        ModelRecord {
            eps: m.eps,
            dim: m.base.dim,
            rounds: m.classifiers.len(),
            thetas: m.thetas.values,
            phi_hat: m.phi_hat,
            phi_stderr: m.phi_stderr,
            classifiers: m.classifiers,
            wla_history: m.wla_history,
            seed: m.seed,
        }
    }
}

impl TryFrom<ModelRecord> for MollifiedDensity {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        if r.dim == 0 || r.thetas.len() != r.rounds || r.classifiers.len() != r.rounds {
            return Err(Error::invalid("model record has inconsistent round counts"));
        }
        if r.classifiers.iter().any(|c| c.input_dim() != r.dim) {
            return Err(Error::invalid(
                "classifier input dimension differs from model dimension",
            ));
        }
        Ok(MollifiedDensity {
            base: BaseDensity::new(r.dim),
            eps: r.eps,
            thetas: ThetaSchedule {
                eps: r.eps,
                values: r.thetas,
            },
            classifiers: r.classifiers,
            phi_hat: r.phi_hat,
            phi_stderr: r.phi_stderr,
            wla_history: r.wla_history,
            seed: r.seed,
        })
    }
}

impl MollifiedDensity {
    /// The untouched base measure `Q_0`.
    pub fn base_only(dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            base: BaseDensity::new(dim),
            eps,
            thetas: theta_schedule(eps, 0)?,
            classifiers: Vec::new(),
            phi_hat: 0.0,
            phi_stderr: 0.0,
            wla_history: Vec::new(),
            seed: 0,
        })
    }

    pub fn rounds(&self) -> usize {
        self.classifiers.len()
    }

    /// `<θ, c(x)>`.
    pub fn statistic(&self, x: &[f64]) -> f64 {
        self.thetas
            .values
            .iter()
            .zip(&self.classifiers)
            .map(|(th, c)| th * c.classify(x))
            .sum()
    }

    /// `log q_0(x) + <θ, c(x)>`; φ cancels in MH ratios.
    pub fn unnormalized_log_density(&self, x: &[f64]) -> f64 {
        self.base.ln_pdf(x) + self.statistic(x)
    }

    /// The model after its first `t` rounds, with φ reset and not yet re-estimated.
    pub fn truncated(&self, t: usize) -> Self {
        let t = t.min(self.rounds());
        let mut m = self.clone();
        m.thetas.values.truncate(t);
        m.classifiers.truncate(t);
        m.wla_history.truncate(t);
        m.phi_hat = 0.0;
        m.phi_stderr = 0.0;
        m
    }

    /// Monte Carlo `φ = log E_{Q_0}[exp(<θ, c>)]` with a delta-method standard error.
    pub fn estimate_log_partition(&self, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
        if n_mc < 100 {
            return Err(Error::invalid("log-partition estimate needs at least 100 samples"));
        }
        if self.classifiers.is_empty() {
            return Ok((0.0, 0.0));
        }
        let draws = self.base.sample(n_mc, seed);
        let w: Vec<f64> = draws.iter().map(|x| self.statistic(x).exp()).collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean.ln(), (var / n).sqrt() / mean))
    }

    /// Estimate and store φ.
    pub fn normalize(&mut self, n_mc: usize, seed: u64) -> Result<()> {
        let (phi, se) = self.estimate_log_partition(n_mc, seed)?;
        self.phi_hat = phi;
        self.phi_stderr = se;
        Ok(())
    }

    /// `max |<θ, c(x)> - φ̂|` over `eval` against `ε/2 + 3·stderr(φ̂)`.
    pub fn privacy_certificate(&self, eval: &Dataset) -> Result<Certificate> {
        if eval.is_empty() {
            return Err(Error::invalid("certificate needs at least one evaluation point"));
        }
        if eval.dim() != self.base.dim {
            return Err(Error::DimensionMismatch {
                expected: self.base.dim,
                got: eval.dim(),
            });
        }
        let max_abs = eval
            .iter()
            .map(|x| (self.statistic(x) - self.phi_hat).abs())
            .fold(0.0, f64::max);
        let bound = 0.5 * self.eps + 3.0 * self.phi_stderr + 1e-9;
        Ok(Certificate {
            max_abs,
            bound,
            pass: max_abs <= bound,
        })
    }

    /// Draw from the model with random-walk MH.
    pub fn sample_mh(&self, n: usize, cfg: &McmcConfig) -> Result<(Dataset, MhDiagnostics)> {
        mh_sample(
            &|x: &[f64]| self.unnormalized_log_density(x),
            self.base.dim,
            n,
            cfg,
            None,
        )
    }

    /// `n` draws: exact when no rounds have been applied, MH otherwise.
    pub fn draw(&self, n: usize, cfg: &McmcConfig) -> Result<Dataset> {
        if self.classifiers.is_empty() {
            Ok(self.base.sample(n, cfg.seed))
        } else {
            self.sample_mh(n, cfg).map(|(d, _)| d)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl LogDensity for MollifiedDensity {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.unnormalized_log_density(x) - self.phi_hat
    }
}

/// Evaluation set for certificates: `n` base-measure draws plus a regular grid
/// on `[-extent, extent]^dim`.
pub fn certificate_eval_set(dim: usize, n: usize, grid_per_axis: usize, extent: f64, seed: u64) -> Dataset {
    let mut eval = BaseDensity::new(dim).sample(n, seed);
    let total = grid_per_axis.pow(dim as u32);
    let mut x = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for v in x.iter_mut() {
            let i = rem % grid_per_axis;
            rem /= grid_per_axis;
            *v = -extent + 2.0 * extent * i as f64 / (grid_per_axis.max(2) - 1) as f64;
        }
        eval.push(&x).expect("grid point has the eval dimension");
    }
    eval
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    pub eps: f64,
    pub n_train: usize,
    pub n_phi: usize,
    pub mcmc: McmcConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            eps: 1.0,
            n_train: 2000,
            n_phi: 100_000,
            mcmc: McmcConfig::default(),
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// Where each round's target samples come from.
#[derive(Debug, Clone, Copy)]
pub enum TargetSource<'a> {
    /// Fresh exact draws from the analytic target every round.
    Fresh(&'a TargetDensity),
    /// Random subsets (without replacement) of one fixed dataset.
    Fixed(&'a Dataset),
}

impl TargetSource<'_> {
    fn dim(&self) -> usize {
        match self {
            TargetSource::Fresh(p) => p.dim(),
            TargetSource::Fixed(d) => d.dim(),
        }
    }

    fn draw(&self, n: usize, seed: u64) -> Dataset {
        match self {
            TargetSource::Fresh(p) => p.sample(n, seed),
            TargetSource::Fixed(d) => {
                let mut r = rng::rng_from(seed);
                let k = n.min(d.len());
                let mut picked: Vec<usize> = index::sample(&mut r, d.len(), k).into_vec();
                picked.sort_unstable();
                let mut out = Dataset::with_capacity(d.dim(), k);
                for i in picked {
                    out.push(d.point(i)).expect("same dimension");
                }
                out
            }
        }
    }
}

// Seed stream tags.
const TAG_Q: u64 = 1;
const TAG_P: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_MCMC: u64 = 4;
const TAG_PHI: u64 = 5;

/// Per-round trace kept alongside the returned model.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    pub wla: WlaReport,
    pub mh: Option<MhDiagnostics>,
}

/// Run boosting with fresh target draws every round.
pub fn boost(p: &TargetDensity, cfg: &BoostConfig) -> Result<MollifiedDensity> {
    boost_traced(TargetSource::Fresh(p), cfg).map(|(m, _)| m)
}

pub fn boost_traced(source: TargetSource<'_>, cfg: &BoostConfig) -> Result<(MollifiedDensity, Vec<RoundTrace>)> {
    if cfg.n_train == 0 {
        return Err(Error::invalid("n_train must be positive"));
    }
    cfg.mcmc.validate()?;
    cfg.train.validate()?;
    let dim = source.dim();
    let thetas = theta_schedule(cfg.eps, cfg.rounds)?;
    let mut model = MollifiedDensity::base_only(dim, cfg.eps)?;
    model.seed = cfg.seed;
    let mut traces = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let round = t + 1;
        let tag = |base: u64| rng::derive_seed(cfg.seed, base * 1_000_003 + t as u64);
        let (q_samples, mh) = if t == 0 {
            (model.base.sample(cfg.n_train, tag(TAG_Q)), None)
        } else {
            let mcmc = cfg.mcmc.with_seed(tag(TAG_MCMC));
            let (ds, diag) = model.sample_mh(cfg.n_train, &mcmc).map_err(|e| Error::Round {
                round,
                source: Box::new(e),
            })?;
            if diag.acceptance_rate < MIN_ACCEPTANCE {
                return Err(Error::Round {
                    round,
                    source: Box::new(Error::Diagnostics(format!(
                        "MH acceptance rate {:.4} below {MIN_ACCEPTANCE}",
                        diag.acceptance_rate
                    ))),
                });
            }
            (ds, Some(diag))
        };
        let p_samples = source.draw(cfg.n_train, tag(TAG_P));
        let train = TrainConfig {
            seed: tag(TAG_TRAIN),
            ..cfg.train
        };
        let classifier = train_classifier(&p_samples, &q_samples, &train).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        let wla = wla_advantages(&classifier, &p_samples, &q_samples).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        model.thetas.values.push(thetas.values[t]);
        model.classifiers.push(classifier);
        model.wla_history.push(wla);
        traces.push(RoundTrace { round, wla, mh });
    }
    model.normalize(cfg.n_phi.max(100), rng::derive_seed(cfg.seed, TAG_PHI))?;
    Ok((model, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::make_1d_mixture;

    #[test]
    fn schedule_examples() {
        let s = theta_schedule(4.0 * LN_2, 2).unwrap();
        assert!((s.values[0] - 0.5).abs() < 1e-15);
        assert!((s.values[1] - 0.25).abs() < 1e-15);
        let one = theta_schedule(1.0, 1).unwrap();
        assert!((one.values[0] - 0.265_070).abs() < 1e-6);
        assert!(theta_schedule(0.0, 3).is_err());
        assert!(theta_schedule(-1.0, 3).is_err());
    }

    #[test]
    fn schedule_strictly_decreasing_and_bounded() {
        for eps in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let s = theta_schedule(eps, 100).unwrap();
            assert!(s.values.windows(2).all(|w| w[1] < w[0]));
            assert!(s.values.iter().all(|v| *v > 0.0 && *v < 1.0));
            // The float sum can round onto the limit once the residual is
            // below an ulp; the log-domain gap is the exact check.
            assert!(s.sum() <= theta_sum_limit(eps) + float_slack(eps));
            assert!(s.partial_sums_below_limit());
            assert!(s.log_gap().is_finite());
        }
    }

    fn constant_classifier(kappa: f64) -> Classifier {
        // A single-layer net with zero weight has logit = bias.
        let mut c = Classifier::zeros(&[1, 1]).unwrap();
        let z = 2.0 * (kappa / LN_2).atanh();
        c.params_mut()[1] = z;
        c
    }

    fn hand_built(eps: f64, kappas: &[f64], thetas: Vec<f64>) -> MollifiedDensity {
        let mut m = MollifiedDensity::base_only(1, eps).unwrap();
        m.thetas.values = thetas;
        m.classifiers = kappas.iter().map(|&k| constant_classifier(k)).collect();
        m
    }

    #[test]
    fn base_only_model() {
        let m = MollifiedDensity::base_only(1, 1.0).unwrap();
        assert_eq!(m.estimate_log_partition(1000, 1).unwrap(), (0.0, 0.0));
        let x = [0.7];
        assert_eq!(m.unnormalized_log_density(&x), m.base.ln_pdf(&x));
        let eval = certificate_eval_set(1, 100, 11, 5.0, 3);
        let cert = m.privacy_certificate(&eval).unwrap();
        assert_eq!(cert.max_abs, 0.0);
        assert!(cert.pass);
        assert!(m.estimate_log_partition(10, 1).is_err());
    }

    #[test]
    fn constant_statistic_log_partition_is_exact() {
        let s = theta_schedule(1.0, 1).unwrap();
        let m = hand_built(1.0, &[0.4], s.values.clone());
        let (phi, se) = m.estimate_log_partition(1000, 2).unwrap();
        assert!((phi - s.values[0] * 0.4).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn log_density_is_shifted_by_phi() {
        let s = theta_schedule(2.0, 2).unwrap();
        let mut m = hand_built(2.0, &[0.3, -0.5], s.values);
        m.normalize(1000, 1).unwrap();
        for x in [-2.0, 0.0, 1.5] {
            let d = m.unnormalized_log_density(&[x]) - m.ln_pdf(&[x]);
            assert!((d - m.phi_hat).abs() < 1e-12);
            assert!((m.unnormalized_log_density(&[x]) - m.base.ln_pdf(&[x])).abs() < 0.5);
        }
    }

    #[test]
    fn inflated_theta_fails_the_certificate() {
        let eps = 1.0;
        let mut s = theta_schedule(eps, 3).unwrap().values;
        s[0] *= 10.0;
        let mut m = hand_built(eps, &[0.69, -0.69, 0.69], s);
        // A mix of signs so φ cannot absorb the statistic.
        m.classifiers[0] = Classifier::init(1, 3).unwrap();
        m.classifiers[0].params_mut().iter_mut().for_each(|p| *p *= 40.0);
        m.normalize(10_000, 1).unwrap();
        let eval = certificate_eval_set(1, 10_000, 101, 6.0, 2);
        assert!(!m.privacy_certificate(&eval).unwrap().pass);
    }

    #[test]
    fn small_boost_round_trips_and_certifies() {
        let p = make_1d_mixture();
        let cfg = BoostConfig {
            rounds: 2,
            eps: 1.0,
            n_train: 200,
            n_phi: 2000,
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            mcmc: McmcConfig {
                burn_in: 100,
                thinning: 2,
                ..McmcConfig::default()
            },
            seed: 5,
        };
        let m = boost(&p, &cfg).unwrap();
        assert_eq!(m.rounds(), 2);
        assert_eq!(m.wla_history.len(), 2);
        let eval = certificate_eval_set(1, 2000, 101, 6.0, 1);
        assert!(m.privacy_certificate(&eval).unwrap().pass);
        let json = m.to_json().unwrap();
        assert!(json.contains("\"T\": 2"));
        let back = MollifiedDensity::from_json(&json).unwrap();
        for x in [-3.0, 0.1, 0.5, 2.2] {
            assert!((back.ln_pdf(&[x]) - m.ln_pdf(&[x])).abs() <= 1e-12);
        }
        assert_eq!(boost(&p, &cfg).unwrap(), m);
    }

    #[test]
    fn zero_rounds_is_base() {
        let p = make_1d_mixture();
        let cfg = BoostConfig {
            rounds: 0,
            ..BoostConfig::default()
        };
        let m = boost(&p, &cfg).unwrap();
        assert!(m.classifiers.is_empty());
        assert_eq!(m.phi_hat, 0.0);
    }

    #[test]
    fn fixed_dataset_mode_subsamples() {
        let p = make_1d_mixture();
        let data = p.sample(150, 1);
        let cfg = BoostConfig {
            rounds: 1,
            n_train: 100,
            n_phi: 500,
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            ..BoostConfig::default()
        };
        let (m, trace) = boost_traced(TargetSource::Fixed(&data), &cfg).unwrap();
        assert_eq!(m.rounds(), 1);
        assert_eq!(trace.len(), 1);
    }
}
