//! Experiment configuration: a flat, diff-friendly `key=value` text file
//! with the model itself (transition matrix, means, sigmas) in an adjacent
//! JSON params file.
//!
//! Recognized keys:
//!
//! ```text
//! chain.length=10000            # simulated chain length T
//! params=poincare3_params.json  # HmmParams JSON, relative to this file
//! minibatch=40,60,80,100,200    # minibatch sizes (each 2 <= delta <= T)
//! seeds=1,2,3,4,5               # one cell per (delta, seed)
//! kmeans.max_iter=100           # Lloyd iteration cap
//! kmeans.tol=1e-9               # inertia improvement stop
//! step.exponent=0.5             # delta-update step size is k^-exponent
//! trace_every=0                 # JSONL trace cadence for `fit` (0 = off)
//! kmeans_only=true              # include the delta = T row
//! workers=0                     # worker pool bound (0 = all cores)
//! output.metrics=metrics.csv    # default output paths
//! output.estimates=estimates.json
//! ```
//!
//! Lines starting with `#` and blank lines are ignored; unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::markov::HmmParams;
use crate::online::DEFAULT_STEP_EXPONENT;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub chain_length: usize,
    pub true_params: HmmParams,
    pub minibatch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub step_exponent: f64,
    pub trace_every: usize,
    pub include_kmeans_only: bool,
    pub workers: usize,
    pub metrics_path: Option<PathBuf>,
    pub estimates_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(chain_length: usize, true_params: HmmParams) -> Self {
        Self {
            chain_length,
            true_params,
            minibatch_sizes: vec![200],
            seeds: vec![1],
            kmeans_max_iter: 100,
            kmeans_tol: 1e-9,
            step_exponent: DEFAULT_STEP_EXPONENT,
            trace_every: 0,
            include_kmeans_only: true,
            workers: 0,
            metrics_path: None,
            estimates_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.minibatch_sizes.is_empty() {
            return Err(Error::Config("at least one minibatch size is required".into()));
        }
        for &d in &self.minibatch_sizes {
            if d < 2 || d > self.chain_length {
                return Err(Error::Config(format!(
                    "minibatch size {d} outside 2..={}",
                    self.chain_length
                )));
            }
        }
        if self.chain_length < 2 {
            return Err(Error::Config("chain.length must be >= 2".into()));
        }
        if !(self.step_exponent > 0.0) || !self.step_exponent.is_finite() {
            return Err(Error::Config(format!(
                "step.exponent must be positive, got {}",
                self.step_exponent
            )));
        }
        Ok(())
    }

    /// Loads a config file plus its adjacent params JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));

        let mut chain_length: Option<usize> = None;
        let mut params: Option<HmmParams> = None;
        let mut minibatch: Option<Vec<usize>> = None;
        let mut seeds: Option<Vec<u64>> = None;
        let mut kmeans_max_iter = 100usize;
        let mut kmeans_tol = 1e-9f64;
        let mut step_exponent = DEFAULT_STEP_EXPONENT;
        let mut trace_every = 0usize;
        let mut include_kmeans_only = true;
        let mut workers = 0usize;
        let mut metrics_path = None;
        let mut estimates_path = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str, e: String| {
                Error::Config(format!("line {}: bad {what} {value:?}: {e}", lineno + 1))
            };
            match key {
                "chain.length" => {
                    chain_length =
                        Some(value.parse().map_err(|e: std::num::ParseIntError| {
                            bad("chain.length", e.to_string())
                        })?)
                }
                "params" => {
                    let p = base.join(value);
                    let json = fs::read_to_string(&p)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                    params = Some(serde_json::from_str(&json).map_err(|e| {
                        Error::Config(format!("params file {}: {e}", p.display()))
                    })?);
                }
                "minibatch" => {
                    minibatch = Some(parse_list(value).map_err(|e| bad("minibatch", e))?)
                }
                "seeds" => seeds = Some(parse_list(value).map_err(|e| bad("seeds", e))?),
                "kmeans.max_iter" => {
                    kmeans_max_iter = value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad("kmeans.max_iter", e.to_string()))?
                }
                "kmeans.tol" => {
                    kmeans_tol = value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad("kmeans.tol", e.to_string()))?
                }
                "step.exponent" => {
                    step_exponent = value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad("step.exponent", e.to_string()))?
                }
                "trace_every" => {
                    trace_every = value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad("trace_every", e.to_string()))?
                }
                "kmeans_only" => {
                    include_kmeans_only = value
                        .parse()
                        .map_err(|e: std::str::ParseBoolError| bad("kmeans_only", e.to_string()))?
                }
                "workers" => {
                    workers = value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad("workers", e.to_string()))?
                }
                "output.metrics" => metrics_path = Some(base.join(value)),
                "output.estimates" => estimates_path = Some(base.join(value)),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }

        let chain_length =
            chain_length.ok_or_else(|| Error::Config("missing key chain.length".into()))?;
        let true_params = params.ok_or_else(|| Error::Config("missing key params".into()))?;
        let config = Self {
            chain_length,
            true_params,
            minibatch_sizes: minibatch
                .ok_or_else(|| Error::Config("missing key minibatch".into()))?,
            seeds: seeds.ok_or_else(|| Error::Config("missing key seeds".into()))?,
            kmeans_max_iter,
            kmeans_tol,
            step_exponent,
            trace_every,
            include_kmeans_only,
            workers,
            metrics_path,
            estimates_path,
        };
        config.validate()?;
        Ok(config)
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect()
}
