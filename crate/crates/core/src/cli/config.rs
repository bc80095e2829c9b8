//! Flat key-value experiment configuration.
//!
//! ```text
//! # comments start with '#' or ';'
//! domain = ring
//! eps_sweep = 0.5, 1, 2
//!
//! [train]
//! epochs = 200
//! ```
//!
//! A `[section]` header prefixes the keys below it, so `epochs` under
//! `[train]` is the key `train.epochs`. The manifest written by `train` uses
//! the same format and parses back to an identical config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::booster::BoostConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sampler::McmcConfig;
use crate::targets::{
    make_1d_mixture, make_random_gaussians, make_ring, Component, Dataset, ExactSampler, TargetDensity,
};
use crate::weak_learner::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Ring,
    Mix1d,
    Random1d,
    /// Standard Gaussian in `target.dim` dimensions; P equals Q_0.
    Gaussian,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Ring => "ring",
            Domain::Mix1d => "mix1d",
            Domain::Random1d => "random1d",
            Domain::Gaussian => "gaussian",
        }
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ring" => Ok(Domain::Ring),
            "mix1d" => Ok(Domain::Mix1d),
            "random1d" => Ok(Domain::Random1d),
            "gaussian" => Ok(Domain::Gaussian),
            _ => Err(format!(
                "unknown domain '{s}' (expected ring, mix1d, random1d or gaussian)"
            )),
        }
    }
}

/// How each round's target samples are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    /// Fresh draws from the analytic target every round.
    Fresh,
    /// Subsets of one dataset of `data_size` points drawn once.
    Fixed,
}

impl FromStr for SourceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fresh" => Ok(SourceMode::Fresh),
            "fixed" => Ok(SourceMode::Fixed),
            _ => Err(format!("unknown source '{s}' (expected fresh or fixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    pub ring_components: usize,
    pub ring_radius: f64,
    pub ring_sigma2: f64,
    pub random_components: usize,
    /// Seed of the random 1D means.
    pub seed: u64,
    /// Dimension of the `gaussian` domain.
    pub dim: usize,
}

impl Default for TargetParams {
    fn default() -> Self {
        Self {
            ring_components: 8,
            ring_radius: 2.5,
            ring_sigma2: 0.0025,
            random_components: 5,
            seed: 7,
            dim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: Domain,
    /// ε of a single trained model.
    pub eps: f64,
    pub eps_sweep: Vec<f64>,
    pub rounds: usize,
    pub n_train: usize,
    pub n_phi: usize,
    pub n_eval: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Explicit per-repeat seeds; derived from `seed` when empty.
    pub seeds: Vec<u64>,
    /// Mode-coverage level.
    pub level: f64,
    /// Mode-capture α.
    pub alpha: f64,
    pub source: SourceMode,
    pub data_size: usize,
    pub target: TargetParams,
    pub train: TrainConfig,
    pub mcmc: McmcConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Mix1d,
            eps: 1.0,
            eps_sweep: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 5.0],
            rounds: 3,
            n_train: 2000,
            n_phi: 100_000,
            n_eval: 100_000,
            repeats: 4,
            seed: 0,
            seeds: Vec::new(),
            level: 0.95,
            alpha: 0.5,
            source: SourceMode::Fresh,
            data_size: 10_000,
            target: TargetParams::default(),
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            mcmc: McmcConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        line,
        message: format!("{key}: cannot parse '{value}': {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s, line))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                    line,
                    message: format!("unterminated section header '{s}'"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected 'key = value', got '{s}'"),
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one field; `line` is reported in diagnostics (0 for command-line
    /// overrides).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "domain" => self.domain = value.parse().map_err(|message| Error::Config { line, message })?,
            "eps" => self.eps = parse_value(key, value, line)?,
            "eps_sweep" => self.eps_sweep = parse_list(key, value, line)?,
            "rounds" | "T" => self.rounds = parse_value(key, value, line)?,
            "n_train" => self.n_train = parse_value(key, value, line)?,
            "n_phi" => self.n_phi = parse_value(key, value, line)?,
            "n_eval" => self.n_eval = parse_value(key, value, line)?,
            "repeats" => self.repeats = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "seeds" => self.seeds = parse_list(key, value, line)?,
            "level" => self.level = parse_value(key, value, line)?,
            "alpha" => self.alpha = parse_value(key, value, line)?,
            "source" => self.source = value.parse().map_err(|message| Error::Config { line, message })?,
            "data_size" => self.data_size = parse_value(key, value, line)?,
            "out" => self.out = PathBuf::from(value),
            "target.ring_components" => self.target.ring_components = parse_value(key, value, line)?,
            "target.ring_radius" => self.target.ring_radius = parse_value(key, value, line)?,
            "target.ring_sigma2" => self.target.ring_sigma2 = parse_value(key, value, line)?,
            "target.random_components" => self.target.random_components = parse_value(key, value, line)?,
            "target.seed" => self.target.seed = parse_value(key, value, line)?,
            "target.dim" => self.target.dim = parse_value(key, value, line)?,
            "train.epochs" => self.train.epochs = parse_value(key, value, line)?,
            "train.learning_rate" => self.train.learning_rate = parse_value(key, value, line)?,
            "train.momentum" => self.train.momentum = parse_value(key, value, line)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, value, line)?,
            "mcmc.proposal_sigma" => self.mcmc.proposal_sigma = parse_value(key, value, line)?,
            "mcmc.burn_in" => self.mcmc.burn_in = parse_value(key, value, line)?,
            "mcmc.thinning" => self.mcmc.thinning = parse_value(key, value, line)?,
            "mcmc.n_chains" => self.mcmc.n_chains = parse_value(key, value, line)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{key}'"),
                })
            }
        }
        Ok(())
    }

    /// Apply a `key=value` override from the command line.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            message: format!("override '{assignment}' is not key=value"),
        })?;
        self.set(k.trim(), v.trim(), 0)?;
        self.validate()
    }

    /// Training and evaluation sizes used in the original experiments.
    pub fn apply_paper_scale(&mut self) {
        self.n_train = 10_000;
        self.train.epochs = 750;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config { line: 0, message });
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.eps_sweep.is_empty() || self.eps_sweep.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps_sweep must be a non-empty list of positive values".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.repeats {
            return bad(format!(
                "seeds lists {} values but repeats = {}",
                self.seeds.len(),
                self.repeats
            ));
        }
        if self.n_train == 0 || self.n_eval == 0 || self.n_phi < 100 {
            return bad("n_train and n_eval must be positive and n_phi at least 100".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.target.dim == 0 {
            return bad("target.dim must be positive".into());
        }
        if self.source == SourceMode::Fixed && self.data_size == 0 {
            return bad("data_size must be positive".into());
        }
        self.train
            .validate()
            .and_then(|_| self.mcmc.validate())
            .map_err(|e| Error::Config {
                line: 0,
                message: e.to_string(),
            })
    }

    /// Per-repeat seeds.
    pub fn repeat_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.repeats as u64).map(|r| derive_seed(self.seed, r)).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn target_density(&self) -> Result<TargetDensity> {
        match self.domain {
            Domain::Ring => make_ring(
                self.target.ring_components,
                self.target.ring_radius,
                self.target.ring_sigma2,
            ),
            Domain::Mix1d => Ok(make_1d_mixture()),
            Domain::Random1d => make_random_gaussians(self.target.random_components, self.target.seed),
            Domain::Gaussian => TargetDensity::new(
                self.target.dim,
                vec![Component {
                    weight: 1.0,
                    mean: vec![0.0; self.target.dim],
                    variance: vec![1.0; self.target.dim],
                }],
            ),
        }
    }

    /// The fixed dataset for `source = fixed`.
    pub fn fixed_dataset(&self, p: &TargetDensity, seed: u64) -> Dataset {
        p.sample(self.data_size, derive_seed(seed, 0xDA7A))
    }

    pub fn boost_config(&self, eps: f64, seed: u64) -> BoostConfig {
        BoostConfig {
            rounds: self.rounds,
            eps,
            n_train: self.n_train,
            n_phi: self.n_phi,
            mcmc: self.mcmc,
            train: self.train,
            seed,
        }
    }

    /// Every resolved field, in the config format.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let source = match self.source {
            SourceMode::Fresh => "fresh",
            SourceMode::Fixed => "fixed",
        };
        // f64 Display is the shortest representation that parses back exactly.
        let _ = writeln!(s, "domain = {}", self.domain.as_str());
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "eps_sweep = {}", join(&self.eps_sweep));
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_phi = {}", self.n_phi);
        let _ = writeln!(s, "n_eval = {}", self.n_eval);
        let _ = writeln!(s, "repeats = {}", self.repeats);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "seeds = {}", join(&self.repeat_seeds()));
        let _ = writeln!(s, "level = {}", self.level);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "source = {source}");
        let _ = writeln!(s, "data_size = {}", self.data_size);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "\n[target]");
        let _ = writeln!(s, "ring_components = {}", self.target.ring_components);
        let _ = writeln!(s, "ring_radius = {}", self.target.ring_radius);
        let _ = writeln!(s, "ring_sigma2 = {}", self.target.ring_sigma2);
        let _ = writeln!(s, "random_components = {}", self.target.random_components);
        let _ = writeln!(s, "seed = {}", self.target.seed);
        let _ = writeln!(s, "dim = {}", self.target.dim);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.train.momentum);
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "\n[mcmc]");
        let _ = writeln!(s, "proposal_sigma = {}", self.mcmc.proposal_sigma);
        let _ = writeln!(s, "burn_in = {}", self.mcmc.burn_in);
        let _ = writeln!(s, "thinning = {}", self.mcmc.thinning);
        let _ = writeln!(s, "n_chains = {}", self.mcmc.n_chains);
        s
    }
}
