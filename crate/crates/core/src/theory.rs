//! Closed-form guarantees of mollified boosting and Monte Carlo checks that
//! hold a trained model to them.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::booster::{theta_ratio, MollifiedDensity};
use crate::error::{Error, Result};
use crate::metrics::{kl_on, region_mass, restricted_kl_on, Estimate, Region};
use crate::targets::{Dataset, ExactSampler, LogDensity, TargetDensity};
use crate::weak_learner::{Regime, WlaReport};

/// `Γ(z) = log(4 / (5 - 3z))`.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !(z < 5.0 / 3.0) {
        return Err(Error::Domain(format!("Γ(z) is undefined for z = {z} >= 5/3")));
    }
    Ok((4.0 / (5.0 - 3.0 * z)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropBound {
    pub lambda_t: f64,
    /// The low-regime form the Hoeffding argument actually yields,
    /// `c* (γ_P + γ_Q - c* θ/2)`; equal to `lambda_t` in the high regime.
    pub lambda_derived: f64,
    pub regime: Regime,
    pub theta_t: f64,
    pub c_star: f64,
}

impl DropBound {
    /// Guaranteed KL decrease `θ_t Λ_t` for the round.
    pub fn guaranteed_drop(&self) -> f64 {
        self.theta_t * self.lambda_t
    }

    pub fn guaranteed_drop_derived(&self) -> f64 {
        self.theta_t * self.lambda_derived
    }
}

/// `Λ_t` from measured advantages; `γ_Q = 1/3` belongs to the high regime.
pub fn kl_drop_bound(report: &WlaReport, theta_t: f64) -> Result<DropBound> {
    let (gp, gq, cs) = (report.gamma_p, report.gamma_q, report.c_star);
    let regime = Regime::classify(gp, gq);
    let (lambda_t, lambda_derived) = match regime {
        Regime::High => {
            let l = cs * gp + gamma_fn(gq)?;
            (l, l)
        }
        Regime::Low => {
            let l = gp + gq - cs * theta_t / 2.0;
            (l, cs * l)
        }
        Regime::Failed => return Err(Error::NoGuarantee),
    };
    Ok(DropBound {
        lambda_t,
        lambda_derived,
        regime,
        theta_t,
        c_star: cs,
    })
}

/// `(ε/2, (ε/2)·((γ_P + γ_Q)/2)·(1 - θ_T))` bracketing `Δ(Q_T)`.
pub fn barrier_bounds(eps: f64, gamma_p: f64, gamma_q: f64, rounds: usize) -> (f64, f64) {
    let upper = eps / 2.0;
    let theta_last = theta_ratio(eps).powi(rounds as i32);
    let lower = upper * ((gamma_p + gamma_q) / 2.0) * (1.0 - theta_last);
    (upper, lower)
}

/// Both forms of the target-mass premise for mode capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureThreshold {
    /// `ε · h((2 - γ_P - γ_Q) T) / (h(α) h(T))` with `h(x) = ε + 2x`.
    pub stated: f64,
    /// `ε (ε + (1 - γ̄) T K) / ((ε + 2α)(ε + T K))`, `K = 4 log 2`.
    pub derived: f64,
}

impl CaptureThreshold {
    /// The larger of the two, used as the premise.
    pub fn required(&self) -> f64 {
        self.stated.max(self.derived)
    }
}

pub fn mode_capture_threshold(eps: f64, gamma_p: f64, gamma_q: f64, rounds: usize, alpha: f64) -> Result<f64> {
    Ok(mode_capture_thresholds(eps, gamma_p, gamma_q, rounds, alpha)?.stated)
}

pub fn mode_capture_thresholds(
    eps: f64,
    gamma_p: f64,
    gamma_q: f64,
    rounds: usize,
    alpha: f64,
) -> Result<CaptureThreshold> {
    if rounds == 0 {
        return Err(Error::invalid("mode capture needs at least one round"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let t = rounds as f64;
    let h = |x: f64| eps + 2.0 * x;
    let stated = eps * h((2.0 - gamma_p - gamma_q) * t) / (h(alpha) * h(t));
    let k = 4.0 * LN_2;
    let gbar = (gamma_p + gamma_q) / 2.0;
    let derived = eps * (eps + (1.0 - gbar) * t * k) / ((eps + 2.0 * alpha) * (eps + t * k));
    Ok(CaptureThreshold { stated, derived })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCaptureReport {
    pub region: Region,
    pub alpha: f64,
    pub threshold: Option<CaptureThreshold>,
    pub target_mass: Estimate,
    pub model_mass: Estimate,
    pub restricted_kl_base: Estimate,
    pub applicable: bool,
    /// `(1 - α) m(B,P) - KL(P, Q_0; B)`.
    pub rhs: f64,
    pub stderr: f64,
    /// `None` when the premise does not hold.
    pub pass: Option<bool>,
    /// Whether the conclusion holds regardless of the premise.
    pub conclusion_holds: bool,
}

/// Mode-capture check on precomputed target and model samples.
///
/// Advantages are the per-round minima of the model's WLA history; the
/// premise needs every round in the high regime.
pub fn mode_capture_check_on(
    p: &TargetDensity,
    q: &MollifiedDensity,
    region: &Region,
    alpha: f64,
    p_samples: &Dataset,
    q_samples: &Dataset,
) -> Result<ModeCaptureReport> {
    let target_mass = region_mass(p_samples, region)?;
    let model_mass = region_mass(q_samples, region)?;
    let restricted_kl_base = restricted_kl_on(p, &q.base, region, p_samples)?;
    let high = !q.wla_history.is_empty() && q.wla_history.iter().all(|w| w.regime == Regime::High);
    let threshold = if high {
        let gp = q.wla_history.iter().map(|w| w.gamma_p).fold(f64::INFINITY, f64::min);
        let gq = q.wla_history.iter().map(|w| w.gamma_q).fold(f64::INFINITY, f64::min);
        Some(mode_capture_thresholds(q.eps, gp, gq, q.rounds(), alpha)?)
    } else {
        None
    };
    let applicable = threshold.is_some_and(|t| target_mass.value >= t.required());
    let rhs = (1.0 - alpha) * target_mass.value - restricted_kl_base.value;
    let stderr =
        (model_mass.stderr.powi(2) + ((1.0 - alpha) * target_mass.stderr).powi(2) + restricted_kl_base.stderr.powi(2))
            .sqrt();
    let conclusion_holds = model_mass.value >= rhs - 3.0 * stderr;
    Ok(ModeCaptureReport {
        region: region.clone(),
        alpha,
        threshold,
        target_mass,
        model_mass,
        restricted_kl_base,
        applicable,
        rhs,
        stderr,
        pass: applicable.then_some(conclusion_holds),
        conclusion_holds,
    })
}

pub fn mode_capture_check(
    p: &TargetDensity,
    q: &MollifiedDensity,
    region: &Region,
    alpha: f64,
    n: usize,
    mcmc: &crate::sampler::McmcConfig,
    seed: u64,
) -> Result<ModeCaptureReport> {
    let p_samples = p.sample(n, seed);
    let q_samples = q.draw(n, &mcmc.with_seed(crate::rng::derive_seed(seed, 1)))?;
    mode_capture_check_on(p, q, region, alpha, &p_samples, &q_samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub kl_a: Estimate,
    pub kl_b: Estimate,
    pub difference: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `|KL(P,Q_a) - KL(P,Q_b)| <= ε` for two models sharing `ε` and `Q_0`.
pub fn kl_transfer_check(
    p: &TargetDensity,
    qa: &MollifiedDensity,
    qb: &MollifiedDensity,
    n: usize,
    seed: u64,
) -> Result<TransferReport> {
    if qa.eps != qb.eps {
        return Err(Error::invalid(format!(
            "models have different eps ({} vs {})",
            qa.eps, qb.eps
        )));
    }
    if qa.base != qb.base {
        return Err(Error::invalid("models have different base measures"));
    }
    let samples = p.sample(n, seed);
    let kl_a = kl_on(p, qa, &samples)?;
    let kl_b = kl_on(p, qb, &samples)?;
    let diffs: Vec<f64> = samples.iter().map(|x| qb.ln_pdf(x) - qa.ln_pdf(x)).collect();
    let paired = Estimate::from_values(&diffs);
    let stderr = (paired.stderr.powi(2) + qa.phi_stderr.powi(2) + qb.phi_stderr.powi(2)).sqrt();
    let difference = kl_a.value - kl_b.value;
    Ok(TransferReport {
        kl_a,
        kl_b,
        difference,
        stderr,
        bound: qa.eps,
        pass: difference.abs() <= qa.eps + 3.0 * stderr,
    })
}

/// `φ_next - φ_prev` on shared base draws, with a delta-method standard error.
pub fn log_partition_difference(
    prev: &MollifiedDensity,
    next: &MollifiedDensity,
    n_mc: usize,
    seed: u64,
) -> (f64, f64) {
    let draws = prev.base.sample(n_mc, seed);
    let n = draws.len() as f64;
    let wp: Vec<f64> = draws.iter().map(|x| prev.statistic(x).exp()).collect();
    let wn: Vec<f64> = draws.iter().map(|x| next.statistic(x).exp()).collect();
    let mp = wp.iter().sum::<f64>() / n;
    let mn = wn.iter().sum::<f64>() / n;
    let d: Vec<f64> = wn.iter().zip(&wp).map(|(a, b)| a / mn - b / mp).collect();
    let se = Estimate::from_values(&d).stderr;
    (mn.ln() - mp.ln(), se)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropCheck {
    pub round: usize,
    pub regime: Regime,
    pub kl_prev: f64,
    pub kl_next: f64,
    pub observed_drop: f64,
    pub guaranteed_drop: Option<f64>,
    pub guaranteed_drop_derived: Option<f64>,
    pub stderr: f64,
    /// `None` when the round failed the weak learning assumption.
    pub pass: Option<bool>,
    /// The same test against [`DropBound::lambda_derived`].
    pub pass_derived: Option<bool>,
}

/// Per-round KL drop `KL(P,Q_{t-1}) - KL(P,Q_t)` against `θ_t Λ_t`.
///
/// Both KLs share the target samples and the partition estimates share
/// base draws, so the drop is estimated from paired differences.
pub fn kl_drop_check(
    p: &TargetDensity,
    model: &MollifiedDensity,
    round: usize,
    p_samples: &Dataset,
    n_mc: usize,
    seed: u64,
) -> Result<DropCheck> {
    if round == 0 || round > model.rounds() {
        return Err(Error::invalid(format!(
            "round {round} is outside 1..={}",
            model.rounds()
        )));
    }
    let mut prev = model.truncated(round - 1);
    let mut next = model.truncated(round);
    let phi_seed = crate::rng::derive_seed(seed, round as u64);
    prev.normalize(n_mc, phi_seed)?;
    next.normalize(n_mc, phi_seed)?;
    let (dphi, se_phi) = log_partition_difference(&prev, &next, n_mc, phi_seed);
    let kl_prev = kl_on(p, &prev, p_samples)?.value;
    let kl_next = kl_on(p, &next, p_samples)?.value;
    let theta = model.thetas.values[round - 1];
    let c = &model.classifiers[round - 1];
    // KL_{t-1} - KL_t = E_P[θ_t c_t] - (φ_t - φ_{t-1})
    let gains: Vec<f64> = p_samples.iter().map(|x| theta * c.classify(x)).collect();
    let gain = Estimate::from_values(&gains);
    let observed_drop = gain.value - dphi;
    let stderr = (gain.stderr.powi(2) + se_phi.powi(2)).sqrt();
    let wla = model.wla_history[round - 1];
    let bound = match kl_drop_bound(&wla, theta) {
        Ok(b) => Some(b),
        Err(Error::NoGuarantee) => None,
        Err(e) => return Err(e),
    };
    let guaranteed_drop = bound.map(|b| b.guaranteed_drop());
    let guaranteed_drop_derived = bound.map(|b| b.guaranteed_drop_derived());
    let holds = |g: f64| observed_drop + 3.0 * stderr >= g;
    Ok(DropCheck {
        round,
        regime: wla.regime,
        kl_prev,
        kl_next,
        observed_drop,
        guaranteed_drop,
        guaranteed_drop_derived,
        stderr,
        pass: guaranteed_drop.map(holds),
        pass_derived: guaranteed_drop_derived.map(holds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub delta_observed: f64,
    pub upper: f64,
    pub lower: Option<f64>,
    pub stderr: f64,
    pub pass: bool,
}

/// `Δ(Q_T) = KL(P,Q_0) - KL(P,Q_T) = E_P[<θ,c>] - φ` against `ε/2`.
pub fn barrier_check(model: &MollifiedDensity, p_samples: &Dataset) -> Result<BarrierReport> {
    if p_samples.is_empty() {
        return Err(Error::invalid("barrier check needs target samples"));
    }
    let stats: Vec<f64> = p_samples.iter().map(|x| model.statistic(x)).collect();
    let e = Estimate::from_values(&stats);
    let delta_observed = e.value - model.phi_hat;
    let stderr = (e.stderr.powi(2) + model.phi_stderr.powi(2)).sqrt();
    let high = !model.wla_history.is_empty() && model.wla_history.iter().all(|w| w.regime == Regime::High);
    let lower = high.then(|| {
        let gp = model
            .wla_history
            .iter()
            .map(|w| w.gamma_p)
            .fold(f64::INFINITY, f64::min);
        let gq = model
            .wla_history
            .iter()
            .map(|w| w.gamma_q)
            .fold(f64::INFINITY, f64::min);
        barrier_bounds(model.eps, gp, gq, model.rounds()).1
    });
    let upper = model.eps / 2.0;
    Ok(BarrierReport {
        delta_observed,
        upper,
        lower,
        stderr,
        pass: delta_observed <= upper + 3.0 * stderr,
    })
}

/// One entry of the JSON theory report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRecord {
    pub check: String,
    pub inputs: serde_json::Value,
    pub bound: f64,
    pub observed: f64,
    pub stderr: f64,
    pub pass: bool,
    /// Exact checks fail the run; statistical ones are reported.
    pub exact: bool,
}
