//! Monte Carlo evaluation metrics: NLL, KL, mode coverage and the
//! region-restricted mass and KL.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{fmt17, Dataset, ExactSampler, LogDensity, TargetDensity};

pub use crate::targets::Region;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                value: 0.0,
                stderr: 0.0,
                n: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Sample-size weighted mean of independent estimates.
    pub fn pooled(parts: &[Estimate]) -> Self {
        let n: usize = parts.iter().map(|e| e.n).sum();
        if n == 0 {
            return Self {
                value: 0.0,
                stderr: 0.0,
                n: 0,
            };
        }
        let value = parts.iter().map(|e| e.value * e.n as f64).sum::<f64>() / n as f64;
        let var = parts
            .iter()
            .map(|e| (e.n as f64 / n as f64).powi(2) * e.stderr * e.stderr)
            .sum::<f64>();
        Self {
            value,
            stderr: var.sqrt(),
            n,
        }
    }
}

/// `-E_P[log q]` over held-out target samples.
pub fn nll(p_samples: &Dataset, q: &impl LogDensity) -> Result<Estimate> {
    if p_samples.is_empty() {
        return Err(Error::invalid("nll needs at least one sample"));
    }
    check_dim(p_samples.dim(), q.dim())?;
    let values: Vec<f64> = p_samples.iter().map(|x| -q.ln_pdf(x)).collect();
    Ok(Estimate::from_values(&values))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `E_P[log p - log q]` over the given target samples.
pub fn kl_on(p: &impl LogDensity, q: &impl LogDensity, p_samples: &Dataset) -> Result<Estimate> {
    check_dim(p.dim(), q.dim())?;
    check_dim(p.dim(), p_samples.dim())?;
    let values: Vec<f64> = p_samples.iter().map(|x| p.ln_pdf(x) - q.ln_pdf(x)).collect();
    Ok(Estimate::from_values(&values))
}

/// Monte Carlo `KL(P, Q)` from `n` exact target draws.
pub fn kl_mc(p: &TargetDensity, q: &impl LogDensity, n: usize, seed: u64) -> Result<Estimate> {
    if n < 1000 {
        return Err(Error::invalid("kl_mc needs at least 1000 samples"));
    }
    kl_on(p, q, &p.sample(n, seed))
}

/// Type-7 empirical quantile of unsorted values.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub value: f64,
    pub stderr: f64,
    /// Log-density threshold of the high-density region.
    pub log_threshold: f64,
}

/// Target mass of the model's `level` high-density region.
///
/// The threshold is the `(1 - level)`-quantile of `log q` over the model
/// samples; the value is the fraction of target samples with `log q` at or
/// above it. Any constant offset in `q_log` cancels.
pub fn mode_coverage(
    q_log: impl Fn(&[f64]) -> f64,
    q_samples: &Dataset,
    p_samples: &Dataset,
    level: f64,
) -> Result<Coverage> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("coverage level must lie in (0, 1)"));
    }
    if q_samples.is_empty() || p_samples.is_empty() {
        return Err(Error::invalid("mode coverage needs model and target samples"));
    }
    let q_vals: Vec<f64> = q_samples.iter().map(&q_log).collect();
    let log_threshold = quantile(&q_vals, 1.0 - level);
    let hits = p_samples.iter().filter(|x| q_log(x) >= log_threshold).count();
    let n = p_samples.len() as f64;
    let value = hits as f64 / n;
    Ok(Coverage {
        value,
        stderr: (value * (1.0 - value) / n).sqrt(),
        log_threshold,
    })
}

/// Fraction of samples inside `region`, binomial standard error.
pub fn region_mass(samples: &Dataset, region: &Region) -> Result<Estimate> {
    check_dim(region.dim(), samples.dim())?;
    let values: Vec<f64> = samples
        .iter()
        .map(|x| if region.contains(x) { 1.0 } else { 0.0 })
        .collect();
    Ok(Estimate::from_values(&values))
}

/// Convenience: exact-sample mass of a region under the target.
pub fn region_mass_target(p: &TargetDensity, region: &Region, n: usize, seed: u64) -> Result<Estimate> {
    region_mass(&p.sample(n, seed), region)
}

/// `E_P[1_B (log p - log q)]` over the given target samples.
pub fn restricted_kl_on(
    p: &impl LogDensity,
    q: &impl LogDensity,
    region: &Region,
    p_samples: &Dataset,
) -> Result<Estimate> {
    check_dim(p.dim(), q.dim())?;
    check_dim(region.dim(), p_samples.dim())?;
    let values: Vec<f64> = p_samples
        .iter()
        .map(|x| {
            if region.contains(x) {
                p.ln_pdf(x) - q.ln_pdf(x)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Estimate::from_values(&values))
}

pub fn restricted_kl(p: &TargetDensity, q: &impl LogDensity, region: &Region, n: usize, seed: u64) -> Result<Estimate> {
    restricted_kl_on(p, q, region, &p.sample(n, seed))
}

/// One metric in a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    pub params: serde_json::Value,
}

/// One row of a sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub rounds: usize,
    pub seed: u64,
    pub nll: f64,
    pub nll_stderr: f64,
    pub coverage: f64,
    pub kl: f64,
    pub kl_stderr: f64,
}

pub const SWEEP_HEADER: [&str; 8] = ["eps", "T", "seed", "nll", "nll_stderr", "coverage", "kl", "kl_stderr"];

impl SweepRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            fmt17(self.eps),
            self.rounds.to_string(),
            self.seed.to_string(),
            fmt17(self.nll),
            fmt17(self.nll_stderr),
            fmt17(self.coverage),
            fmt17(self.kl),
            fmt17(self.kl_stderr),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{BaseDensity, Component};

    fn gaussian(mu: f64) -> TargetDensity {
        TargetDensity::new(
            1,
            vec![Component {
                weight: 1.0,
                mean: vec![mu],
                variance: vec![1.0],
            }],
        )
        .unwrap()
    }

    #[test]
    fn nll_of_standard_gaussian_is_its_entropy() {
        let q0 = BaseDensity::new(1);
        let samples = q0.sample(100_000, 3);
        let e = nll(&samples, &q0).unwrap();
        let entropy = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((entropy - 1.418_939).abs() < 1e-6);
        assert!((e.value - entropy).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn kl_of_identical_and_shifted_gaussians() {
        let q0 = BaseDensity::new(1);
        let same = kl_mc(&gaussian(0.0), &q0, 10_000, 1).unwrap();
        assert!(same.value.abs() < 1e-12);
        for mu in [0.5, 1.0, 2.0] {
            let e = kl_mc(&gaussian(mu), &q0, 50_000, 2).unwrap();
            assert!((e.value - mu * mu / 2.0).abs() < 3.0 * e.stderr, "mu={mu} {e:?}");
        }
        assert!(kl_mc(&gaussian(0.0), &q0, 10, 1).is_err());
    }

    #[test]
    fn self_coverage_equals_level() {
        let q0 = BaseDensity::new(2);
        let qs = q0.sample(20_000, 1);
        let ps = q0.sample(20_000, 2);
        let c = mode_coverage(|x| q0.ln_pdf(x), &qs, &ps, 0.95).unwrap();
        assert!((c.value - 0.95).abs() < 3.0 * c.stderr + 3.0 * (0.95f64 * 0.05 / 20_000.0).sqrt());
        let shifted = mode_coverage(|x| q0.ln_pdf(x) + 17.0, &qs, &ps, 0.95).unwrap();
        assert_eq!(shifted.value, c.value);
    }

    #[test]
    fn coverage_far_target_is_zero() {
        let q0 = BaseDensity::new(1);
        let narrow = TargetDensity::new(
            1,
            vec![Component {
                weight: 1.0,
                mean: vec![8.0],
                variance: vec![1e-4],
            }],
        )
        .unwrap();
        let c = mode_coverage(|x| q0.ln_pdf(x), &q0.sample(10_000, 1), &narrow.sample(10_000, 2), 0.95).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn region_mass_cases() {
        let q0 = BaseDensity::new(1);
        let s = q0.sample(40_000, 4);
        let half = region_mass(&s, &Region::new(vec![0.0], vec![f64::INFINITY]).unwrap()).unwrap();
        assert!((half.value - 0.5).abs() < 3.0 * half.stderr);
        let far = region_mass(&s, &Region::new(vec![50.0], vec![60.0]).unwrap()).unwrap();
        assert_eq!(far.value, 0.0);
        let all = region_mass(&s, &Region::new(vec![-8.0], vec![8.0]).unwrap()).unwrap();
        assert_eq!(all.value, 1.0);
    }

    #[test]
    fn restricted_kl_partition_identity() {
        let p = gaussian(1.0);
        let q0 = BaseDensity::new(1);
        let s = p.sample(20_000, 7);
        let full = kl_on(&p, &q0, &s).unwrap();
        let left = restricted_kl_on(&p, &q0, &Region::new(vec![f64::NEG_INFINITY], vec![0.5]).unwrap(), &s).unwrap();
        let right = restricted_kl_on(&p, &q0, &Region::new(vec![0.5], vec![f64::INFINITY]).unwrap(), &s).unwrap();
        assert!((left.value + right.value - full.value).abs() < 1e-12);
        let wide = restricted_kl_on(&p, &q0, &Region::new(vec![-7.0], vec![9.0]).unwrap(), &s).unwrap();
        assert!((wide.value - full.value).abs() < 1e-12);
        let none = restricted_kl_on(&p, &q0, &Region::new(vec![40.0], vec![41.0]).unwrap(), &s).unwrap();
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn pooling_matches_concatenation() {
        let q0 = BaseDensity::new(1);
        let a = q0.sample(300, 1);
        let b = q0.sample(700, 2);
        let mut ab = a.clone();
        ab.extend(&b).unwrap();
        let pa = nll(&a, &q0).unwrap();
        let pb = nll(&b, &q0).unwrap();
        let pooled = Estimate::pooled(&[pa, pb]);
        let direct = nll(&ab, &q0).unwrap();
        assert!((pooled.value - direct.value).abs() < 1e-12);
        assert_eq!(pooled.n, 1000);
    }

    #[test]
    fn quantile_type7() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.05) - 1.15).abs() < 1e-12);
    }
}
