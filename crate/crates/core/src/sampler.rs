//! Random-walk Metropolis–Hastings and the per-sample privacy budget ledger.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::targets::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub proposal_sigma: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            proposal_sigma: 1.5,
            burn_in: 1000,
            thinning: 10,
            n_chains: 4,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_sigma > 0.0 && self.proposal_sigma.is_finite()) {
            return Err(Error::invalid("proposal_sigma must be positive"));
        }
        if self.thinning == 0 || self.n_chains == 0 {
            return Err(Error::invalid("thinning and n_chains must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhDiagnostics {
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub chain_count: usize,
    pub steps_total: u64,
    pub warning: Option<String>,
}

/// Chains whose acceptance rate falls below this get a warning attached.
pub const MIN_ACCEPTANCE: f64 = 0.01;

const INIT_ATTEMPTS: usize = 1000;

struct ChainOutput {
    points: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

fn run_chain<F>(log_q: &F, dim: usize, keep: usize, cfg: &McmcConfig, chain: usize) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = rng::stream(cfg.seed, chain as u64);
    let mut x = vec![0.0; dim];
    let mut lx = f64::NEG_INFINITY;
    for _ in 0..INIT_ATTEMPTS {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        lx = log_q(&x);
        if lx.is_finite() {
            break;
        }
    }
    if !lx.is_finite() {
        return Err(Error::Diagnostics(format!(
            "log-density is not finite at any of {INIT_ATTEMPTS} initial states of chain {chain}"
        )));
    }

    let mut points = Vec::with_capacity(keep * dim);
    let mut y = vec![0.0; dim];
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let total_steps = cfg.burn_in + keep * cfg.thinning;
    for step in 0..total_steps {
        for (yi, xi) in y.iter_mut().zip(&x) {
            let z: f64 = rng.sample(StandardNormal);
            *yi = xi + cfg.proposal_sigma * z;
        }
        let ly = log_q(&y);
        let u: f64 = rng.random();
        proposed += 1;
        // NaN and -inf proposals are rejected.
        if u.ln() < ly - lx {
            std::mem::swap(&mut x, &mut y);
            lx = ly;
            accepted += 1;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in + 1).is_multiple_of(cfg.thinning) {
            points.extend_from_slice(&x);
        }
    }
    Ok(ChainOutput {
        points,
        accepted,
        proposed,
    })
}

/// Draw `n` points pooled round-robin from `cfg.n_chains` independent chains.
///
/// `log_q` may be unnormalized. Output point `i` is the `i / n_chains`-th kept
/// state of chain `i % n_chains`, so results do not depend on thread count.
pub fn mh_sample<F>(
    log_q: &F,
    dim: usize,
    n: usize,
    cfg: &McmcConfig,
    ledger: Option<&mut PrivacyLedger>,
) -> Result<(Dataset, MhDiagnostics)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if n == 0 {
        return Ok((
            Dataset::new(dim),
            MhDiagnostics {
                acceptance_rate: 0.0,
                accepted: 0,
                proposed: 0,
                chain_count: cfg.n_chains,
                steps_total: 0,
                warning: None,
            },
        ));
    }
    let chains = cfg.n_chains;
    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|j| {
            let keep = n / chains + usize::from(j < n % chains);
            run_chain(log_q, dim, keep, cfg, j)
        })
        .collect::<Result<_>>()?;

    let mut flat = Vec::with_capacity(n * dim);
    for i in 0..n {
        let (j, k) = (i % chains, i / chains);
        flat.extend_from_slice(&outputs[j].points[k * dim..(k + 1) * dim]);
    }
    let accepted: u64 = outputs.iter().map(|o| o.accepted).sum();
    let proposed: u64 = outputs.iter().map(|o| o.proposed).sum();
    let acceptance_rate = if proposed == 0 {
        0.0
    } else {
        accepted as f64 / proposed as f64
    };
    let warning = (acceptance_rate < MIN_ACCEPTANCE)
        .then(|| format!("acceptance rate {acceptance_rate:.4} is below {MIN_ACCEPTANCE}"));
    if let Some(l) = ledger {
        l.record(n as u64);
    }
    let data = Dataset::from_flat(dim, flat)?;
    Ok((
        data,
        MhDiagnostics {
            acceptance_rate,
            accepted,
            proposed,
            chain_count: chains,
            steps_total: proposed,
            warning,
        },
    ))
}

/// Linear budget accounting: every released sample costs `eps_per_sample`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub eps_per_sample: f64,
    pub released: u64,
    pub spent: f64,
}

impl PrivacyLedger {
    pub fn new(eps_per_sample: f64) -> Result<Self> {
        if !(eps_per_sample > 0.0 && eps_per_sample.is_finite()) {
            return Err(Error::invalid("eps_per_sample must be positive"));
        }
        Ok(Self {
            eps_per_sample,
            released: 0,
            spent: 0.0,
        })
    }

    /// Budget needed after releasing `k` more samples.
    pub fn required_for(&self, k: u64) -> f64 {
        self.eps_per_sample * (self.released + k) as f64
    }

    /// Fails without recording anything when `eps_total` would be exceeded.
    pub fn check(&self, k: u64, eps_total: f64) -> Result<()> {
        let required = self.required_for(k);
        // Tolerate rounding in eps_total / k style budgets.
        if required > eps_total * (1.0 + 1e-12) {
            return Err(Error::BudgetExceeded {
                required,
                available: eps_total,
            });
        }
        Ok(())
    }

    pub fn record(&mut self, k: u64) {
        self.released += k;
        // Recomputed from the count so chunked releases give identical totals.
        self.spent = self.eps_per_sample * self.released as f64;
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Per-sample budget when `eps_total` must cover `k` released samples.
pub fn budget_split(eps_total: f64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(eps_total > 0.0) {
        return Err(Error::invalid("eps_total must be positive"));
    }
    Ok(eps_total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub log_ratio: f64,
    pub stderr: f64,
    pub pass: bool,
}

fn smoothed(hits: usize, n: usize) -> f64 {
    (hits as f64 + 1.0) / (n as f64 + 2.0)
}

fn log_ratio_stderr(p1: f64, n1: usize, p2: f64, n2: usize) -> f64 {
    ((1.0 - p1) / (n1 as f64 * p1) + (1.0 - p2) / (n2 as f64 * p2)).sqrt()
}

/// Frequency-ratio test of a deterministic decision applied to two sample sets.
pub fn postprocessing_ratio_check(
    samples_d: &Dataset,
    samples_dprime: &Dataset,
    decision: impl Fn(&[f64]) -> bool,
    eps: f64,
) -> Result<RatioCheck> {
    if samples_d.is_empty() || samples_dprime.is_empty() {
        return Err(Error::invalid("both sample sets must be non-empty"));
    }
    let (n1, n2) = (samples_d.len(), samples_dprime.len());
    let k1 = samples_d.iter().filter(|x| decision(x)).count();
    let k2 = samples_dprime.iter().filter(|x| decision(x)).count();
    let (p1, p2) = (smoothed(k1, n1), smoothed(k2, n2));
    let log_ratio = p1.ln() - p2.ln();
    let stderr = log_ratio_stderr(p1, n1, p2, n2);
    Ok(RatioCheck {
        log_ratio,
        stderr,
        pass: log_ratio.abs() <= eps + 3.0 * stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRatio {
    pub lower: f64,
    pub upper: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub log_ratio: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCheck {
    pub bins: Vec<BinRatio>,
    pub checked: usize,
    pub max_abs_log_ratio: f64,
    pub pass: bool,
}

/// Per-bin log frequency ratios over a fixed partition of the first axis.
///
/// The `n_bins` equal bins cover `[lower, upper]`; the two outer bins extend
/// to infinity so the partition covers the line. Only bins where both sample
/// sets expect at least `min_expected` points under the pooled frequency are
/// checked against `eps + 3 stderr`.
pub fn histogram_ratio_check(
    a: &Dataset,
    b: &Dataset,
    lower: f64,
    upper: f64,
    n_bins: usize,
    eps: f64,
    min_expected: f64,
) -> Result<HistogramCheck> {
    if a.is_empty() || b.is_empty() || n_bins == 0 || !(lower < upper) {
        return Err(Error::invalid("histogram check needs data and a valid partition"));
    }
    let width = (upper - lower) / n_bins as f64;
    let bin_of = |x: &[f64]| (((x[0] - lower) / width).floor().max(0.0) as usize).min(n_bins - 1);
    let mut ca = vec![0usize; n_bins];
    let mut cb = vec![0usize; n_bins];
    a.iter().for_each(|x| ca[bin_of(x)] += 1);
    b.iter().for_each(|x| cb[bin_of(x)] += 1);
    let (na, nb) = (a.len(), b.len());
    let mut bins = Vec::with_capacity(n_bins);
    let mut checked = 0;
    let mut max_abs = 0.0f64;
    let mut all = true;
    for k in 0..n_bins {
        let pooled = (ca[k] + cb[k]) as f64 / (na + nb) as f64;
        let populated = pooled * na.min(nb) as f64 >= min_expected;
        let (pa, pb) = (smoothed(ca[k], na), smoothed(cb[k], nb));
        let log_ratio = pa.ln() - pb.ln();
        let stderr = log_ratio_stderr(pa, na, pb, nb);
        let pass = !populated || log_ratio.abs() <= eps + 3.0 * stderr;
        if populated {
            checked += 1;
            max_abs = max_abs.max(log_ratio.abs());
        }
        all &= pass;
        bins.push(BinRatio {
            lower: lower + k as f64 * width,
            upper: lower + (k + 1) as f64 * width,
            count_a: ca[k],
            count_b: cb[k],
            log_ratio,
            stderr,
            pass,
        });
    }
    Ok(HistogramCheck {
        bins,
        checked,
        max_abs_log_ratio: max_abs,
        pass: all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{BaseDensity, ExactSampler, LogDensity};

    #[test]
    fn zero_samples_leave_ledger_untouched() {
        let mut ledger = PrivacyLedger::new(0.1).unwrap();
        let q0 = BaseDensity::new(1);
        let (ds, diag) = mh_sample(&|x| q0.ln_pdf(x), 1, 0, &McmcConfig::default(), Some(&mut ledger)).unwrap();
        assert!(ds.is_empty());
        assert_eq!(diag.steps_total, 0);
        assert_eq!(ledger.released, 0);
        assert_eq!(ledger.spent, 0.0);
    }

    #[test]
    fn constant_shift_gives_identical_trajectory() {
        let cfg = McmcConfig {
            burn_in: 50,
            n_chains: 3,
            seed: 4,
            ..McmcConfig::default()
        };
        let f = |x: &[f64]| -0.5 * x[0] * x[0];
        let g = |x: &[f64]| -0.5 * x[0] * x[0] - 0.5;
        let (a, _) = mh_sample(&f, 1, 301, &cfg, None).unwrap();
        let (b, _) = mh_sample(&g, 1, 301, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 301);
    }

    #[test]
    fn ledger_tracks_released_samples() {
        let mut ledger = PrivacyLedger::new(0.25).unwrap();
        let f = |x: &[f64]| -0.5 * x[0] * x[0];
        let cfg = McmcConfig {
            burn_in: 10,
            ..McmcConfig::default()
        };
        mh_sample(&f, 1, 8, &cfg, Some(&mut ledger)).unwrap();
        assert_eq!(ledger.released, 8);
        assert_eq!(ledger.spent, 2.0);
    }

    #[test]
    fn ledger_accumulation_is_exact() {
        let eps = budget_split(1.0, 10_000).unwrap();
        assert_eq!(eps, 1e-4);
        let mut chunked = PrivacyLedger::new(eps).unwrap();
        for _ in 0..100 {
            chunked.record(100);
        }
        let mut once = PrivacyLedger::new(eps).unwrap();
        once.record(10_000);
        assert_eq!(chunked, once);
        assert_eq!(once.spent, eps * 10_000.0);
        assert!(once.check(0, 1.0).is_ok());
        assert!(matches!(once.check(1, 1.0), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn budget_split_inverse() {
        for k in [1u64, 3, 7, 1000] {
            let eps = 0.3;
            assert!((budget_split(k as f64 * eps, k).unwrap() - eps).abs() < 1e-15);
        }
        assert!(budget_split(1.0, 0).is_err());
    }

    #[test]
    fn non_finite_everywhere_is_an_error() {
        let f = |_: &[f64]| f64::NEG_INFINITY;
        let err = mh_sample(&f, 1, 5, &McmcConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::Diagnostics(_)));
    }

    #[test]
    fn tiny_acceptance_warns() {
        let cfg = McmcConfig {
            proposal_sigma: 1e4,
            burn_in: 100,
            ..McmcConfig::default()
        };
        let f = |x: &[f64]| -0.5 * x[0] * x[0];
        let (_, diag) = mh_sample(&f, 1, 100, &cfg, None).unwrap();
        assert!(diag.warning.is_some(), "{diag:?}");
    }

    #[test]
    fn ratio_check_identical_and_negative_control() {
        let a = BaseDensity::new(1).sample(2000, 1);
        let same = postprocessing_ratio_check(&a, &a, |x| x[0] > 0.3, 0.1).unwrap();
        assert_eq!(same.log_ratio, 0.0);
        assert!(same.pass);
        let far = Dataset::from_flat(
            1,
            BaseDensity::new(1)
                .sample(2000, 2)
                .as_flat()
                .iter()
                .map(|v| v + 10.0)
                .collect(),
        )
        .unwrap();
        let ctl = postprocessing_ratio_check(&a, &far, |x| x[0] > 5.0, 0.1).unwrap();
        assert!(!ctl.pass, "{ctl:?}");
    }

    #[test]
    fn histogram_check_flags_shift() {
        let a = BaseDensity::new(1).sample(20_000, 1);
        let b = BaseDensity::new(1).sample(20_000, 2);
        let ok = histogram_ratio_check(&a, &b, -4.0, 4.0, 50, 0.5, 50.0).unwrap();
        assert!(ok.pass && ok.checked > 20);
        let shifted = Dataset::from_flat(1, b.as_flat().iter().map(|v| v + 2.0).collect()).unwrap();
        let bad = histogram_ratio_check(&a, &shifted, -4.0, 4.0, 50, 0.5, 50.0).unwrap();
        assert!(!bad.pass);
    }
}
