//! Declarative experiment configuration (TOML).
//!
//! A config file fully determines an experiment: the truth, the model family,
//! the grid, the penalty, fitting and evaluation parameters, the replicate
//! count and the master seed. Everything downstream is a pure function of
//! `(config, master seed)`.
//!
//! Seed discipline: replicate `r` simulates with the stream
//! `(master, [TAG_SIMULATE, r])`, fits with sub-master
//! `(master, [TAG_FIT, r])` (fit restarts branch again below that) and
//! evaluates with `(master, [TAG_EVALUATE, r])`. Rate experiments insert the
//! sample-size index as a middle tag.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::hmm::{stationary_distribution, HmmParams};
use crate::model::{
    model_grid, Constraints, EmissionMixture, GridCaps, ModelConfig, PenaltyConfig,
};
use crate::truth::{
    CompactKernelTruth, EvalOptions, FiniteTruth, IidTruth, SmoothEmissionFamily, TruthModel,
};

pub const TAG_SIMULATE: u64 = 1;
pub const TAG_FIT: u64 = 2;
pub const TAG_EVALUATE: u64 = 3;

/// Truth description as written in the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Finite-state HMM with exponential-power mixture emissions. The
    /// mixtures are validated inside the constraint snapshot of `n_ref`.
    Finite {
        transitions: Vec<Vec<f64>>,
        /// Per-state kernel weights, locations and scales.
        weights: Vec<Vec<f64>>,
        locations: Vec<Vec<f64>>,
        scales: Vec<Vec<f64>>,
        /// Sample size anchoring the truth's constraint snapshot (floor
        /// weight and boxes); the truth does not change across an n-grid.
        n_ref: usize,
        #[serde(default = "default_floor_exponent")]
        floor_exponent: f64,
        #[serde(default = "default_power")]
        power: u32,
    },
    CompactKernel {
        amplitude: f64,
        mean0: f64,
        mean1: f64,
        sd: f64,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
        #[serde(default = "default_truth_burn_in")]
        burn_in: usize,
    },
    IidMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        sds: Vec<f64>,
    },
}

fn default_floor_exponent() -> f64 {
    2.0
}
fn default_power() -> u32 {
    2
}
fn default_grid_size() -> usize {
    128
}
fn default_truth_burn_in() -> usize {
    100
}

impl TruthSpec {
    pub fn build(&self) -> Result<TruthModel> {
        let truth = match self {
            TruthSpec::Finite {
                transitions,
                weights,
                locations,
                scales,
                n_ref,
                floor_exponent,
                power,
            } => {
                let k = transitions.len();
                if k == 0 || weights.len() != k || locations.len() != k || scales.len() != k {
                    return Err(Error::config(
                        "finite truth needs one transition row and one mixture per state",
                    ));
                }
                let m = weights[0].len();
                if m == 0
                    || weights.iter().any(|w| w.len() != m)
                    || locations.iter().any(|l| l.len() != m)
                    || scales.iter().any(|s| s.len() != m)
                {
                    return Err(Error::config(
                        "finite truth mixtures must share one component count",
                    ));
                }
                let model_cfg = ModelConfig {
                    floor_exponent: *floor_exponent,
                    power: *power,
                    ..ModelConfig::default()
                };
                let constraints = Constraints::new(*n_ref, &model_cfg, m)?;
                let emissions: Vec<EmissionMixture> = (0..k)
                    .map(|x| {
                        EmissionMixture::new(
                            weights[x].clone(),
                            locations[x].clone(),
                            scales[x].clone(),
                            Arc::clone(&constraints),
                        )
                    })
                    .collect::<Result<_>>()?;
                if transitions.iter().any(|row| row.len() != k) {
                    return Err(Error::config("truth transition matrix must be square"));
                }
                let flat: Vec<f64> = transitions.iter().flatten().cloned().collect();
                let trans = DMatrix::from_row_slice(k, k, &flat);
                let pi = stationary_distribution(&trans)?;
                TruthModel::Finite(FiniteTruth {
                    params: HmmParams::new(pi, trans, emissions)?,
                })
            }
            TruthSpec::CompactKernel {
                amplitude,
                mean0,
                mean1,
                sd,
                grid_size,
                burn_in,
            } => TruthModel::CompactKernel(CompactKernelTruth {
                amplitude: *amplitude,
                emission: SmoothEmissionFamily::GaussianRamp {
                    mean0: *mean0,
                    mean1: *mean1,
                    sd: *sd,
                },
                grid_size: *grid_size,
                burn_in: *burn_in,
            }),
            TruthSpec::IidMixture { weights, means, sds } => TruthModel::IidMixture(IidTruth {
                weights: weights.clone(),
                means: means.clone(),
                sds: sds.clone(),
            }),
        };
        truth.validate()?;
        Ok(truth)
    }

    /// Initial distribution override for the finite truth's HMM parameters
    /// (simulation always starts stationary regardless).
    pub fn params_if_finite(&self) -> Result<Option<HmmParams<EmissionMixture>>> {
        match self.build()? {
            TruthModel::Finite(t) => Ok(Some(t.params)),
            _ => Ok(None),
        }
    }
}

/// Fit parameters as configured (the seed is derived per use).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_inner_iters")]
    pub inner_emission_iters: usize,
    /// Model coordinates for the single-model `fit` command.
    pub num_states: Option<usize>,
    pub mixture_size: Option<usize>,
}

fn default_max_iters() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-6
}
fn default_restarts() -> usize {
    3
}
fn default_inner_iters() -> usize {
    3
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            tol: default_tol(),
            restarts: default_restarts(),
            inner_emission_iters: default_inner_iters(),
            num_states: None,
            mixture_size: None,
        }
    }
}

impl FitSettings {
    pub fn to_fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            seed,
            inner_emission_iters: self.inner_emission_iters,
        }
    }
}

/// Evaluation parameters as configured (the seed is derived per use).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSettings {
    #[serde(default = "default_chain_length")]
    pub chain_length: usize,
    #[serde(default = "default_eval_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Also run the forgetting checker during `evaluate`.
    #[serde(default)]
    pub check_forgetting: bool,
}

fn default_chain_length() -> usize {
    200_000
}
fn default_eval_burn_in() -> usize {
    1000
}
fn default_batches() -> usize {
    30
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            chain_length: default_chain_length(),
            burn_in: default_eval_burn_in(),
            batches: default_batches(),
            check_forgetting: false,
        }
    }
}

impl EvalSettings {
    pub fn to_eval_options(&self, seed: u64) -> EvalOptions {
        EvalOptions {
            chain_length: self.chain_length,
            burn_in: self.burn_in,
            batches: self.batches,
            seed,
        }
    }
}

/// The whole experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Sample size for simulate/fit/select.
    pub n: Option<usize>,
    /// Sample-size grid for the rate experiment.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    pub output_dir: PathBuf,
    pub truth: TruthSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridCaps,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_replicates() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-validates every module-level invariant the config touches, so bad
    /// configs are rejected before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.truth.build()?;
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        let mut sizes = self.n_grid.clone();
        if let Some(n) = self.n {
            sizes.push(n);
        }
        if sizes.is_empty() {
            return Err(Error::config("either n or n_grid must be given"));
        }
        for n in sizes {
            model_grid(n, &self.model, &self.grid)?;
        }
        if let (Some(k), Some(_)) = (self.fit.num_states, self.fit.mixture_size) {
            if k == 0 {
                return Err(Error::config("fit.num_states must be at least 1"));
            }
        }
        self.fit.to_fit_config(0).validate_public()?;
        if self.eval.chain_length <= self.eval.burn_in {
            return Err(Error::config("eval.chain_length must exceed eval.burn_in"));
        }
        if self.eval.batches < 2 {
            return Err(Error::config("eval.batches must be at least 2"));
        }
        Ok(())
    }

    /// The single sample size, for commands that need one.
    pub fn require_n(&self) -> Result<usize> {
        self.n
            .ok_or_else(|| Error::config("this command needs the sample size n"))
    }
}

impl FitConfig {
    /// Validation entry point usable from config loading.
    pub fn validate_public(&self) -> Result<()> {
        if self.max_iters < 1 || self.restarts < 1 || self.inner_emission_iters < 1 {
            return Err(Error::config(
                "fit iterations, restarts and inner iterations must be at least 1",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("fit.tol must be positive"));
        }
        Ok(())
    }
}
