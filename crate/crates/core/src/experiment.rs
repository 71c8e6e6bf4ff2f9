//! File-emitting experiment drivers behind the CLI subcommands.
//!
//! Every output embeds the resolved config, so results are self-describing;
//! the only run-dependent field outside the data is `meta.timestamp_unix`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TAG_EVALUATE, TAG_FIT, TAG_SIMULATE};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitResult};
use crate::model::{model_grid, ModelIndex};
use crate::seeds::derive_seed;
use crate::select::{select_model, SelectionReport};
use crate::truth::{
    check_forgetting, estimate_prediction_error, ForgettingReport, PredictionErrorEstimate,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    /// Wall-clock seconds since the Unix epoch; the one non-reproducible
    /// field, kept here so everything else diffs byte-stable.
    pub timestamp_unix: u64,
    pub config: ExperimentConfig,
}

impl Meta {
    fn now(config: &ExperimentConfig) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            timestamp_unix,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReportFile {
    pub meta: Meta,
    pub index: ModelIndex,
    pub result: FitResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectReportFile {
    pub meta: Meta,
    pub report: SelectionReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluateReportFile {
    pub meta: Meta,
    pub prediction_error: PredictionErrorEstimate,
    pub forgetting: Option<ForgettingReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RateSummaryFile {
    pub meta: Meta,
    /// Least-squares slope of `ln(median k_hat)` against `ln n`.
    pub slope: f64,
    pub medians: Vec<RateMedian>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RateMedian {
    pub n: usize,
    pub median_k_hat: f64,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes one observation file per replicate (`sim_rep<r>.csv`, header `y`,
/// 17 significant digits so values round-trip exactly).
pub fn run_simulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let n = config.require_n()?;
    let truth = config.truth.build()?;
    ensure_dir(&config.output_dir)?;
    let mut paths = Vec::with_capacity(config.replicates);
    for rep in 0..config.replicates {
        let seed = derive_seed(config.master_seed, &[TAG_SIMULATE, rep as u64]);
        let ys = truth.simulate(n, seed)?;
        let path = config.output_dir.join(format!("sim_rep{rep}.csv"));
        let mut file = fs::File::create(&path)?;
        let mut buf = String::with_capacity(ys.len() * 26 + 2);
        buf.push_str("y\n");
        for y in &ys {
            buf.push_str(&format!("{y:.16e}\n"));
        }
        file.write_all(buf.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parses a single-column observation CSV (header `y`).
pub fn read_observations(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "y" => {}
        other => {
            return Err(Error::usage(format!(
                "expected header 'y' in {}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut ys = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|e| {
            Error::usage(format!("{}:{}: bad number ({e})", path.display(), i + 2))
        })?;
        ys.push(v);
    }
    if ys.is_empty() {
        return Err(Error::usage(format!("{} holds no data", path.display())));
    }
    Ok(ys)
}

/// Fits the single model named by `fit.num_states` / `fit.mixture_size`.
pub fn run_fit(config: &ExperimentConfig, data: &Path) -> Result<PathBuf> {
    let ys = read_observations(data)?;
    let k = config
        .fit
        .num_states
        .ok_or_else(|| Error::config("fit.num_states is required for the fit command"))?;
    let m = config
        .fit
        .mixture_size
        .ok_or_else(|| Error::config("fit.mixture_size is required for the fit command"))?;
    let grid = model_grid(ys.len(), &config.model, &config.grid)?;
    let index = grid
        .into_iter()
        .find(|ix| ix.num_states == k && ix.mixture_size == m)
        .ok_or_else(|| {
            Error::usage(format!("model (K={k}, M={m}) is outside the grid for n={}", ys.len()))
        })?;
    let fit_cfg = config
        .fit
        .to_fit_config(derive_seed(config.master_seed, &[TAG_FIT, 0]));
    let result = fit_model(&ys, &index, &fit_cfg)?;
    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("fit_report.json");
    write_json(
        &path,
        &FitReportFile {
            meta: Meta::now(config),
            index,
            result,
        },
    )?;
    Ok(path)
}

pub struct SelectOutput {
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
    pub report: SelectionReport,
}

/// Runs the full grid selection on one data file and writes the JSON report
/// plus the flat CSV table.
pub fn run_select(config: &ExperimentConfig, data: &Path) -> Result<SelectOutput> {
    let ys = read_observations(data)?;
    let grid = model_grid(ys.len(), &config.model, &config.grid)?;
    let fit_cfg = config
        .fit
        .to_fit_config(derive_seed(config.master_seed, &[TAG_FIT, 0]));
    let report = select_model(&ys, &grid, &fit_cfg, &config.penalty)?;
    ensure_dir(&config.output_dir)?;
    let json_path = config.output_dir.join("select_report.json");
    let csv_path = config.output_dir.join("select_table.csv");
    write_json(
        &json_path,
        &SelectReportFile {
            meta: Meta::now(config),
            report: report.clone(),
        },
    )?;
    fs::write(&csv_path, report.table_csv())?;
    Ok(SelectOutput {
        json_path,
        csv_path,
        report,
    })
}

/// Loads fitted parameters out of a fit or selection report.
pub fn load_fitted_params(path: &Path) -> Result<FitResult> {
    let text = fs::read_to_string(path)?;
    if let Ok(file) = serde_json::from_str::<SelectReportFile>(&text) {
        return Ok(file.report.chosen_fit);
    }
    if let Ok(file) = serde_json::from_str::<FitReportFile>(&text) {
        return Ok(file.result);
    }
    Err(Error::usage(format!(
        "{} is neither a selection nor a fit report",
        path.display()
    )))
}

/// Estimates the prediction error of previously fitted parameters against
/// the configured truth; optionally also runs the forgetting checker.
pub fn run_evaluate(config: &ExperimentConfig, params: &Path) -> Result<PathBuf> {
    let fit = load_fitted_params(params)?;
    let truth = config.truth.build()?;
    let opts = config
        .eval
        .to_eval_options(derive_seed(config.master_seed, &[TAG_EVALUATE, 0]));
    let prediction_error = estimate_prediction_error(&truth, &fit.params, &opts)?;
    let forgetting = if config.eval.check_forgetting {
        let ks: Vec<usize> = (1..=20).collect();
        Some(check_forgetting(
            &truth,
            3,
            &ks,
            derive_seed(config.master_seed, &[TAG_EVALUATE, 1]),
        )?)
    } else {
        None
    };
    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("evaluate_report.json");
    write_json(
        &path,
        &EvaluateReportFile {
            meta: Meta::now(config),
            prediction_error,
            forgetting,
        },
    )?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub n: usize,
    pub replicate: usize,
    pub k_hat: f64,
    pub std_error: f64,
    pub num_states: usize,
    pub mixture_size: usize,
}

pub struct RateOutput {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub slope: f64,
    pub rows: Vec<RateRow>,
}

/// The end-to-end rate experiment: for every `(n, replicate)` pair simulate,
/// select, and estimate the prediction error of the selected model; then
/// regress `ln(median k_hat)` on `ln n`.
pub fn run_rate(config: &ExperimentConfig) -> Result<RateOutput> {
    if config.n_grid.len() < 3 {
        return Err(Error::usage(
            "the rate experiment needs an n-grid with at least 3 points",
        ));
    }
    if config.replicates < 5 {
        return Err(Error::usage(
            "the rate experiment needs at least 5 replicates per sample size",
        ));
    }
    let truth = config.truth.build()?;
    let mut jobs = Vec::new();
    for (ni, &n) in config.n_grid.iter().enumerate() {
        for rep in 0..config.replicates {
            jobs.push((ni, n, rep));
        }
    }
    let rows: Vec<Result<RateRow>> = jobs
        .par_iter()
        .map(|&(ni, n, rep)| {
            let sim_seed =
                derive_seed(config.master_seed, &[TAG_SIMULATE, ni as u64, rep as u64]);
            let fit_seed = derive_seed(config.master_seed, &[TAG_FIT, ni as u64, rep as u64]);
            let eval_seed =
                derive_seed(config.master_seed, &[TAG_EVALUATE, ni as u64, rep as u64]);
            let ys = truth.simulate(n, sim_seed)?;
            let grid = model_grid(n, &config.model, &config.grid)?;
            let fit_cfg = config.fit.to_fit_config(fit_seed);
            let report = select_model(&ys, &grid, &fit_cfg, &config.penalty)?;
            let opts = config.eval.to_eval_options(eval_seed);
            let est = estimate_prediction_error(&truth, &report.chosen_fit.params, &opts)?;
            Ok(RateRow {
                n,
                replicate: rep,
                k_hat: est.k_hat,
                std_error: est.std_error,
                num_states: report.chosen.num_states,
                mixture_size: report.chosen.mixture_size,
            })
        })
        .collect();

    ensure_dir(&config.output_dir)?;
    let mut ok_rows = Vec::with_capacity(jobs.len());
    let mut csv = String::from("n,replicate,k_hat,std_error,num_states,mixture_size\n");
    for row in rows {
        let row = row?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.n, row.replicate, row.k_hat, row.std_error, row.num_states, row.mixture_size
        ));
        ok_rows.push(row);
    }
    let csv_path = config.output_dir.join("rate.csv");
    fs::write(&csv_path, &csv)?;

    let mut medians = Vec::new();
    for &n in &config.n_grid {
        let mut vals: Vec<f64> = ok_rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.k_hat)
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = vals.len() / 2;
        let median = if vals.len() % 2 == 1 {
            vals[mid]
        } else {
            0.5 * (vals[mid - 1] + vals[mid])
        };
        medians.push(RateMedian { n, median_k_hat: median });
    }
    // noise can push a median of a near-zero error below zero; clamp so the
    // log regression stays defined
    let pts: Vec<(f64, f64)> = medians
        .iter()
        .map(|m| ((m.n as f64).ln(), m.median_k_hat.max(1e-12).ln()))
        .collect();
    let slope = least_squares_slope(&pts);
    let summary_path = config.output_dir.join("rate_summary.json");
    write_json(
        &summary_path,
        &RateSummaryFile {
            meta: Meta::now(config),
            slope,
            medians,
        },
    )?;
    Ok(RateOutput {
        csv_path,
        summary_path,
        slope,
        rows: ok_rows,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
