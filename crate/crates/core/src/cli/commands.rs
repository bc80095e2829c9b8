use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{ExperimentConfig, SourceMode};
use crate::booster::{boost_traced, certificate_eval_set, theta_schedule, MollifiedDensity, RoundTrace, TargetSource};
use crate::error::{Error, Result};
use crate::metrics::{kl_on, mode_coverage, nll, Coverage, Estimate, MetricReport, SweepRow, SWEEP_HEADER};
use crate::rng::derive_seed;
use crate::sampler::{McmcConfig, PrivacyLedger};
use crate::targets::{fmt17, Certificate, Dataset, ExactSampler, LogDensity, Region, TargetDensity};
use crate::theory::{barrier_bounds, barrier_check, kl_drop_check, mode_capture_check_on, TheoryRecord};

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn load_model(path: &Path) -> Result<MollifiedDensity> {
    MollifiedDensity::from_json(&fs::read_to_string(path)?)
}

/// Boost one model under `cfg` at the given ε and seed.
pub fn train_model(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<(MollifiedDensity, Vec<RoundTrace>)> {
    let p = cfg.target_density()?;
    let boost = cfg.boost_config(eps, seed);
    match cfg.source {
        SourceMode::Fresh => boost_traced(TargetSource::Fresh(&p), &boost),
        SourceMode::Fixed => {
            let data = cfg.fixed_dataset(&p, seed);
            boost_traced(TargetSource::Fixed(&data), &boost)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PathBuf,
    pub manifest: PathBuf,
    pub wla: PathBuf,
}

/// Train at `cfg.eps` with `cfg.seed` and write the model, its manifest and
/// the per-round WLA history under `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    let (model, traces) = train_model(cfg, cfg.eps, cfg.seed)?;
    let out = TrainOutput {
        model: cfg.out.join("model.json"),
        manifest: cfg.out.join("manifest.ini"),
        wla: cfg.out.join("wla.csv"),
    };
    write_atomic(&out.model, (model.to_json()? + "\n").as_bytes())?;
    write_atomic(&out.manifest, cfg.to_manifest().as_bytes())?;
    let rows = traces.iter().map(|t| {
        vec![
            t.round.to_string(),
            fmt17(model.thetas.values[t.round - 1]),
            fmt17(t.wla.gamma_p),
            fmt17(t.wla.gamma_q),
            fmt17(t.wla.c_star),
            t.wla.regime.as_str().to_string(),
            t.mh.as_ref().map(|d| fmt17(d.acceptance_rate)).unwrap_or_default(),
        ]
    });
    let header = [
        "round",
        "theta",
        "gamma_p",
        "gamma_q",
        "c_star",
        "regime",
        "mh_acceptance",
    ];
    write_atomic(&out.wla, &csv_bytes(&header, rows)?)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub samples: PathBuf,
    pub ledger_path: PathBuf,
    pub ledger: PrivacyLedger,
}

/// Release `k` model samples into `out`, charging the ledger kept there.
///
/// With `eps_total` set, a release that would push the ledger past it is
/// refused before anything is sampled or written.
pub fn cmd_sample(
    model_path: &Path,
    k: u64,
    eps_total: Option<f64>,
    out: &Path,
    mcmc: &McmcConfig,
) -> Result<SampleOutput> {
    let model = load_model(model_path)?;
    let ledger_path = out.join("ledger.json");
    let mut ledger = if ledger_path.exists() {
        let l = PrivacyLedger::load(&ledger_path)?;
        if l.eps_per_sample != model.eps {
            return Err(Error::invalid(format!(
                "ledger at {} charges {} per sample but the model has ε = {}",
                ledger_path.display(),
                l.eps_per_sample,
                model.eps
            )));
        }
        l
    } else {
        PrivacyLedger::new(model.eps)?
    };
    if let Some(total) = eps_total {
        ledger.check(k, total)?;
    }
    let samples = if k == 0 {
        Dataset::new(model.base.dim)
    } else {
        // Successive releases continue on fresh chains.
        let seed = derive_seed(mcmc.seed, ledger.released);
        model.draw(k as usize, &mcmc.with_seed(seed))?
    };
    let samples_path = out.join("samples.csv");
    let mut buf = Vec::new();
    samples.write_csv(&mut buf)?;
    write_atomic(&samples_path, &buf)?;
    ledger.record(k);
    write_json(&ledger_path, &ledger)?;
    Ok(SampleOutput {
        samples: samples_path,
        ledger_path,
        ledger,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelMetrics {
    pub nll: Estimate,
    pub coverage: Coverage,
    pub kl: Estimate,
}

/// NLL, mode coverage and KL of `model` on fresh target draws.
pub fn evaluate(
    p: &TargetDensity,
    model: &MollifiedDensity,
    n_eval: usize,
    level: f64,
    mcmc: &McmcConfig,
    seed: u64,
) -> Result<ModelMetrics> {
    let p_samples = p.sample(n_eval, derive_seed(seed, 11));
    let q_samples = model.draw(n_eval, &mcmc.with_seed(derive_seed(seed, 12)))?;
    Ok(ModelMetrics {
        nll: nll(&p_samples, model)?,
        coverage: mode_coverage(|x| model.ln_pdf(x), &q_samples, &p_samples, level)?,
        kl: kl_on(p, model, &p_samples)?,
    })
}

/// Grid for contour plots: 1024 points in 1D, 256 × 256 in 2D, over the
/// target's ±4σ extent.
pub fn density_grid(p: &TargetDensity, model: &MollifiedDensity) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = p.bounding_box(4.0);
    let axis = |a: usize, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo[a] + (hi[a] - lo[a]) * i as f64 / (n - 1) as f64)
            .collect()
    };
    match p.dim() {
        1 => Ok(axis(0, 1024).into_iter().map(|x| vec![x, model.ln_pdf(&[x])]).collect()),
        2 => {
            let (xs, ys) = (axis(0, 256), axis(1, 256));
            let mut rows = Vec::with_capacity(256 * 256);
            for &y in &ys {
                for &x in &xs {
                    rows.push(vec![x, y, model.ln_pdf(&[x, y])]);
                }
            }
            Ok(rows)
        }
        d => Err(Error::invalid(format!(
            "density grids are 1D or 2D, target has dimension {d}"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub grid: PathBuf,
    pub metrics: ModelMetrics,
}

pub fn cmd_eval(model_path: &Path, cfg: &ExperimentConfig) -> Result<EvalOutput> {
    let model = load_model(model_path)?;
    let p = cfg.target_density()?;
    if p.dim() != model.base.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: model.base.dim,
        });
    }
    let metrics = evaluate(&p, &model, cfg.n_eval, cfg.level, &cfg.mcmc, cfg.seed)?;
    let reports = vec![
        MetricReport {
            metric: "nll".into(),
            value: metrics.nll.value,
            stderr: metrics.nll.stderr,
            n: metrics.nll.n,
            seed: cfg.seed,
            params: json!({ "domain": cfg.domain.as_str() }),
        },
        MetricReport {
            metric: "mode_coverage".into(),
            value: metrics.coverage.value,
            stderr: metrics.coverage.stderr,
            n: cfg.n_eval,
            seed: cfg.seed,
            params: json!({ "level": cfg.level, "log_threshold": metrics.coverage.log_threshold }),
        },
        MetricReport {
            metric: "kl".into(),
            value: metrics.kl.value,
            stderr: metrics.kl.stderr,
            n: metrics.kl.n,
            seed: cfg.seed,
            params: json!({ "domain": cfg.domain.as_str() }),
        },
    ];
    let out = EvalOutput {
        metrics_json: cfg.out.join("metrics.json"),
        metrics_csv: cfg.out.join("metrics.csv"),
        grid: cfg.out.join("grid.csv"),
        metrics,
    };
    write_json(&out.metrics_json, &reports)?;
    let rows = reports.iter().map(|r| {
        vec![
            r.metric.clone(),
            fmt17(r.value),
            fmt17(r.stderr),
            r.n.to_string(),
            r.seed.to_string(),
        ]
    });
    write_atomic(
        &out.metrics_csv,
        &csv_bytes(&["metric", "value", "stderr", "n", "seed"], rows)?,
    )?;
    let grid = density_grid(&p, &model)?;
    let header: &[&str] = if p.dim() == 1 {
        &["x", "logq"]
    } else {
        &["x", "y", "logq"]
    };
    write_atomic(
        &out.grid,
        &csv_bytes(header, grid.iter().map(|r| r.iter().map(|v| fmt17(*v)).collect()))?,
    )?;
    Ok(out)
}

/// Base-measure draws plus a grid on ±6 per axis (64 points per axis in 1D,
/// 32 in 2D).
pub fn certificate_points(dim: usize, n: usize, seed: u64) -> Dataset {
    let per_axis = match dim {
        1 => 64,
        2 => 32,
        _ => 0,
    };
    certificate_eval_set(dim, n, per_axis, 6.0, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub eps: f64,
    pub rounds: usize,
    pub n_points: usize,
    pub certificate: Certificate,
}

pub fn cmd_certify(model_path: &Path, cfg: &ExperimentConfig) -> Result<CertifyReport> {
    let model = load_model(model_path)?;
    let eval = certificate_points(model.base.dim, cfg.n_eval, derive_seed(cfg.seed, 21));
    let report = CertifyReport {
        eps: model.eps,
        rounds: model.rounds(),
        n_points: eval.len(),
        certificate: model.privacy_certificate(&eval)?,
    };
    write_json(&cfg.out.join("certificate.json"), &report)?;
    Ok(report)
}

/// Per-component boxes `mean ± k σ`.
pub fn mode_boxes(p: &TargetDensity, k: f64) -> Vec<Region> {
    p.components()
        .iter()
        .map(|c| {
            let (lo, hi) = c
                .mean
                .iter()
                .zip(&c.variance)
                .map(|(m, v)| (m - k * v.sqrt(), m + k * v.sqrt()))
                .unzip();
            Region { lower: lo, upper: hi }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TheorySummary {
    pub exact_checks: usize,
    pub exact_failures: usize,
    pub statistical_checks: usize,
    pub statistical_failures: usize,
    /// Rounds or regions where the premise of a bound did not hold.
    pub premise_not_met: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub records: Vec<TheoryRecord>,
    pub summary: TheorySummary,
}

impl TheoryReport {
    fn new(records: Vec<TheoryRecord>, premise_not_met: usize) -> Self {
        let count = |exact: bool, failed: bool| {
            records
                .iter()
                .filter(|r| r.exact == exact && (!failed || !r.pass))
                .count()
        };
        let summary = TheorySummary {
            exact_checks: count(true, false),
            exact_failures: count(true, true),
            statistical_checks: count(false, false),
            statistical_failures: count(false, true),
            premise_not_met,
        };
        Self { records, summary }
    }

    pub fn exact_ok(&self) -> bool {
        self.summary.exact_failures == 0
    }
}

fn schedule_records(eps: f64, rounds: usize) -> Result<Vec<TheoryRecord>> {
    let mut out = Vec::new();
    for t in [rounds.max(1), 10_000] {
        let s = theta_schedule(eps, t)?;
        out.push(TheoryRecord {
            check: "theta_sum".into(),
            inputs: json!({ "eps": eps, "T": t, "log_gap": s.log_gap() }),
            bound: crate::booster::theta_sum_limit(eps),
            observed: s.sum(),
            stderr: 0.0,
            pass: s.partial_sums_below_limit() && s.log_gap().is_finite(),
            exact: true,
        });
    }
    Ok(out)
}

fn certificate_record(model: &MollifiedDensity, eval: &Dataset, label: &str) -> Result<TheoryRecord> {
    let c = model.privacy_certificate(eval)?;
    Ok(TheoryRecord {
        check: "privacy_certificate".into(),
        inputs: json!({ "model": label, "eps": model.eps, "T": model.rounds(), "n_points": eval.len() }),
        bound: c.bound,
        observed: c.max_abs,
        stderr: model.phi_stderr,
        pass: c.pass,
        exact: true,
    })
}

/// Every check for one trained model; returns the records and the number
/// of checks whose premise failed.
pub fn model_theory_records(
    cfg: &ExperimentConfig,
    p: &TargetDensity,
    model: &MollifiedDensity,
    seed: u64,
) -> Result<(Vec<TheoryRecord>, usize)> {
    let eps = model.eps;
    let mut records = Vec::new();
    let mut skipped = 0;
    let eval = certificate_points(model.base.dim, cfg.n_eval, derive_seed(seed, 21));
    records.push(certificate_record(model, &eval, "trained")?);

    let p_samples = p.sample(cfg.n_eval, derive_seed(seed, 22));
    for round in 1..=model.rounds() {
        let d = kl_drop_check(p, model, round, &p_samples, cfg.n_phi, derive_seed(seed, 23))?;
        match (d.guaranteed_drop, d.pass) {
            (Some(g), Some(pass)) => records.push(TheoryRecord {
                check: "kl_drop".into(),
                inputs: json!({ "eps": eps, "round": round, "regime": d.regime.as_str(),
                                "kl_prev": d.kl_prev, "kl_next": d.kl_next,
                                "guaranteed_drop_derived": d.guaranteed_drop_derived,
                                "pass_derived": d.pass_derived }),
                bound: g,
                observed: d.observed_drop,
                stderr: d.stderr,
                pass,
                exact: false,
            }),
            _ => skipped += 1,
        }
    }

    let b = barrier_check(model, &p_samples)?;
    records.push(TheoryRecord {
        check: "barrier_upper".into(),
        inputs: json!({ "eps": eps, "T": model.rounds(), "lower": b.lower }),
        bound: b.upper,
        observed: b.delta_observed,
        stderr: b.stderr,
        pass: b.pass,
        exact: false,
    });
    if let Some(lower) = b.lower {
        // The bracketing itself is closed form.
        records.push(TheoryRecord {
            check: "barrier_order".into(),
            inputs: json!({ "eps": eps, "T": model.rounds() }),
            bound: b.upper,
            observed: lower,
            stderr: 0.0,
            pass: lower <= b.upper,
            exact: true,
        });
    }

    if model.rounds() > 0 && model.base.dim == 2 {
        let q_samples = model.draw(cfg.n_eval, &cfg.mcmc.with_seed(derive_seed(seed, 24)))?;
        for (i, region) in mode_boxes(p, 3.0).iter().enumerate() {
            let r = mode_capture_check_on(p, model, region, cfg.alpha, &p_samples, &q_samples)?;
            match r.pass {
                Some(pass) => records.push(TheoryRecord {
                    check: "mode_capture".into(),
                    inputs: json!({ "eps": eps, "mode": i, "alpha": cfg.alpha,
                                    "target_mass": r.target_mass.value,
                                    "required_mass": r.threshold.map(|t| t.required()) }),
                    bound: r.rhs,
                    observed: r.model_mass.value,
                    stderr: r.stderr,
                    pass,
                    exact: false,
                }),
                None => skipped += 1,
            }
        }
    }
    Ok((records, skipped))
}

/// Theory checks across the ε sweep, or on the given model files when any
/// are passed. Writes `theory.json` under `cfg.out`.
pub fn cmd_theory(cfg: &ExperimentConfig, models: &[PathBuf]) -> Result<TheoryReport> {
    let mut records = Vec::new();
    let mut skipped = 0;
    if models.is_empty() {
        let p = cfg.target_density()?;
        for &eps in &cfg.eps_sweep {
            records.extend(schedule_records(eps, cfg.rounds)?);
            let (lo_u, lo_l) = barrier_bounds(eps, 1.0, 1.0, cfg.rounds);
            records.push(TheoryRecord {
                check: "barrier_bounds".into(),
                inputs: json!({ "eps": eps, "T": cfg.rounds, "gamma_p": 1.0, "gamma_q": 1.0 }),
                bound: lo_u,
                observed: lo_l,
                stderr: 0.0,
                pass: lo_l <= lo_u,
                exact: true,
            });
            let (model, _) = train_model(cfg, eps, cfg.seed)?;
            let (r, s) = model_theory_records(cfg, &p, &model, cfg.seed)?;
            records.extend(r);
            skipped += s;
        }
    } else {
        for path in models {
            let model = load_model(path)?;
            records.extend(schedule_records(model.eps, model.rounds())?);
            let eval = certificate_points(model.base.dim, cfg.n_eval, derive_seed(cfg.seed, 21));
            records.push(certificate_record(&model, &eval, &path.display().to_string())?);
        }
    }
    let report = TheoryReport::new(records, skipped);
    write_json(&cfg.out.join("theory.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub eps: f64,
    pub rounds: usize,
    pub n: usize,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub kl_mean: f64,
    pub kl_std: f64,
}

pub const CELL_HEADER: [&str; 9] = [
    "eps",
    "T",
    "n",
    "nll_mean",
    "nll_std",
    "coverage_mean",
    "coverage_std",
    "kl_mean",
    "kl_std",
];

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

impl SweepCell {
    fn from_rows(rows: &[SweepRow]) -> Self {
        let col = |f: fn(&SweepRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
        let (nll_mean, nll_std) = col(|r| r.nll);
        let (coverage_mean, coverage_std) = col(|r| r.coverage);
        let (kl_mean, kl_std) = col(|r| r.kl);
        Self {
            eps: rows[0].eps,
            rounds: rows[0].rounds,
            n: rows.len(),
            nll_mean,
            nll_std,
            coverage_mean,
            coverage_std,
            kl_mean,
            kl_std,
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt17(self.eps),
            self.rounds.to_string(),
            self.n.to_string(),
            fmt17(self.nll_mean),
            fmt17(self.nll_std),
            fmt17(self.coverage_mean),
            fmt17(self.coverage_std),
            fmt17(self.kl_mean),
            fmt17(self.kl_std),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: PathBuf,
    pub table: PathBuf,
    pub rows: Vec<SweepRow>,
    /// The `T = 0` baseline first (ε reported as 0), then one cell per ε.
    pub cells: Vec<SweepCell>,
}

fn sweep_row(eps: f64, rounds: usize, seed: u64, m: &ModelMetrics) -> SweepRow {
    SweepRow {
        eps,
        rounds,
        seed,
        nll: m.nll.value,
        nll_stderr: m.nll.stderr,
        coverage: m.coverage.value,
        kl: m.kl.value,
        kl_stderr: m.kl.stderr,
    }
}

/// Full ε × repeat sweep plus the `Q_0` baseline for each repeat seed.
///
/// Cells run concurrently; each writes its own file under `cells/`, and the
/// tables are aggregated afterwards in a fixed order, so output does not
/// depend on the thread count.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let p = cfg.target_density()?;
    let seeds = cfg.repeat_seeds();
    // ε = 0 marks the baseline.
    let mut jobs: Vec<(f64, u64)> = seeds.iter().map(|&s| (0.0, s)).collect();
    for &eps in &cfg.eps_sweep {
        jobs.extend(seeds.iter().map(|&s| (eps, s)));
    }
    let cell_dir = cfg.out.join("cells");
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(eps, seed))| -> Result<SweepRow> {
            let (model, rounds) = if eps == 0.0 {
                (MollifiedDensity::base_only(p.dim(), 1.0)?, 0)
            } else {
                (train_model(cfg, eps, seed)?.0, cfg.rounds)
            };
            let m = evaluate(&p, &model, cfg.n_eval, cfg.level, &cfg.mcmc, seed)?;
            let row = sweep_row(eps, rounds, seed, &m);
            write_atomic(
                &cell_dir.join(format!("{i:04}.csv")),
                &csv_bytes(&SWEEP_HEADER, [row.record()])?,
            )?;
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let n_seeds = seeds.len();
    let cells: Vec<SweepCell> = rows.chunks(n_seeds).map(SweepCell::from_rows).collect();
    let out = ExperimentOutput {
        runs: cfg.out.join("sweep_runs.csv"),
        table: cfg.out.join("sweep.csv"),
        rows,
        cells,
    };
    write_atomic(
        &out.runs,
        &csv_bytes(&SWEEP_HEADER, out.rows.iter().map(SweepRow::record))?,
    )?;
    write_atomic(
        &out.table,
        &csv_bytes(&CELL_HEADER, out.cells.iter().map(SweepCell::record))?,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn mode_boxes_cover_each_component() {
        let p = crate::targets::make_ring(8, 2.5, 0.0025).unwrap();
        let boxes = mode_boxes(&p, 3.0);
        assert_eq!(boxes.len(), 8);
        for (b, c) in boxes.iter().zip(p.components()) {
            assert!(b.contains(&c.mean));
            assert!((b.upper[0] - b.lower[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"x").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"x");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
