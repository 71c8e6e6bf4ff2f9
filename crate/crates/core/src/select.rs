//! Penalized model selection over the `(K, M)` grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig, FitResult};
use crate::model::{penalty, ModelIndex, PenaltyConfig};
use crate::seeds::derive_seed;

/// One row of the selection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub num_states: usize,
    pub mixture_size: usize,
    pub model_dimension: usize,
    pub penalty: f64,
    /// `(1/n) l_n` of the fitted model; absent when the fit failed.
    pub log_likelihood_per_obs: Option<f64>,
    /// `(1/n) l_n - pen`; absent when the fit failed.
    pub score: Option<f64>,
    pub converged: Option<bool>,
    pub restart_index: Option<usize>,
    pub error: Option<String>,
}

/// Result of a full grid selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: ModelIndex,
    pub chosen_fit: FitResult,
    /// One row per grid point, in grid order.
    pub table: Vec<SelectionRow>,
    pub fit_config: FitConfig,
    pub penalty_config: PenaltyConfig,
}

impl SelectionReport {
    /// Flat CSV rendering of the table, one row per grid point.
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "num_states,mixture_size,model_dimension,log_likelihood_per_obs,penalty,score,converged,restart_index,error\n",
        );
        for row in &self.table {
            let fmt_opt = |v: &Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.num_states,
                row.mixture_size,
                row.model_dimension,
                fmt_opt(&row.log_likelihood_per_obs),
                row.penalty,
                fmt_opt(&row.score),
                row.converged.map_or(String::new(), |c| c.to_string()),
                row.restart_index.map_or(String::new(), |r| r.to_string()),
                row.error.clone().unwrap_or_default().replace(',', ";"),
            ));
        }
        out
    }
}

/// Fits every grid point and returns the penalized maximizer.
///
/// Failed fits are recorded in the table and excluded from the arg max; the
/// call only errors when every grid point fails. Ties in the penalized score
/// break toward the smallest number of states, then the smallest mixture.
pub fn select_model(
    ys: &[f64],
    grid: &[ModelIndex],
    fit_config: &FitConfig,
    penalty_config: &PenaltyConfig,
) -> Result<SelectionReport> {
    if grid.is_empty() {
        return Err(Error::usage("selection needs a nonempty model grid"));
    }
    let fits: Vec<(ModelIndex, std::result::Result<FitResult, String>)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, index)| {
            let cfg = FitConfig {
                seed: derive_seed(fit_config.seed, &[i as u64]),
                ..fit_config.clone()
            };
            let outcome = fit_model(ys, index, &cfg).map_err(|e| e.to_string());
            (index.clone(), outcome)
        })
        .collect();

    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None; // (grid position, score)
    let mut kept: Vec<Option<FitResult>> = Vec::with_capacity(grid.len());
    for (i, (index, outcome)) in fits.iter().enumerate() {
        let pen = penalty(index, penalty_config);
        match outcome {
            Ok(fit) => {
                let score = fit.final_log_likelihood - pen;
                table.push(SelectionRow {
                    num_states: index.num_states,
                    mixture_size: index.mixture_size,
                    model_dimension: index.model_dimension(),
                    penalty: pen,
                    log_likelihood_per_obs: Some(fit.final_log_likelihood),
                    score: Some(score),
                    converged: Some(fit.converged),
                    restart_index: Some(fit.restart_index),
                    error: None,
                });
                // strict improvement keeps the earliest (smallest K, then M)
                // grid point on ties
                if best.map_or(true, |(_, s)| score > s) {
                    best = Some((i, score));
                }
                kept.push(Some(fit.clone()));
            }
            Err(msg) => {
                table.push(SelectionRow {
                    num_states: index.num_states,
                    mixture_size: index.mixture_size,
                    model_dimension: index.model_dimension(),
                    penalty: pen,
                    log_likelihood_per_obs: None,
                    score: None,
                    converged: None,
                    restart_index: None,
                    error: Some(msg.clone()),
                });
                kept.push(None);
            }
        }
    }

    let (pos, _) = best.ok_or_else(|| Error::SelectionFailure {
        diagnostics: table.iter().filter_map(|r| r.error.clone()).collect(),
    })?;
    Ok(SelectionReport {
        chosen: fits[pos].0.clone(),
        chosen_fit: kept[pos].take().expect("winning fit exists"),
        table,
        fit_config: fit_config.clone(),
        penalty_config: *penalty_config,
    })
}
