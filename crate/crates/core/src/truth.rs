//! True-process generators (including misspecified ones), conditional
//! log-densities under the truth, Monte-Carlo estimation of the prediction
//! error, and numerical checks of the forgetting and tail assumptions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{
    stationary_distribution, EmissionDensity, Filter, HmmParams,
};
use crate::model::EmissionMixture;
use crate::numerics::{dominating_log_density, log_sum_exp};
use crate::seeds::derive_rng;

/// Generator of the observed process. The process need not be a finite-state
/// HMM: the compact-kernel variant has a continuous hidden state, and the
/// i.i.d. variant has no hidden state at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TruthModel {
    Finite(FiniteTruth),
    CompactKernel(CompactKernelTruth),
    IidMixture(IidTruth),
}

/// A finite-state HMM truth (initial distribution is ignored for simulation:
/// the chain starts from its stationary law).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteTruth {
    pub params: HmmParams<EmissionMixture>,
}

/// HMM on the hidden state space `[0, 1]` whose transition kernel density
/// w.r.t. the uniform measure is `q(x, x') = 1 + amplitude cos(2 pi (x - x'))`.
/// The kernel is doubly stochastic, so the uniform law is stationary, and its
/// density is bounded in `[1 - amplitude, 1 + amplitude]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompactKernelTruth {
    pub amplitude: f64,
    pub emission: SmoothEmissionFamily,
    /// Number of quadrature nodes of the grid filter.
    pub grid_size: usize,
    /// Hidden-chain burn-in before emitting (the start is already stationary;
    /// this is cheap extra insulation for modified kernels).
    pub burn_in: usize,
}

/// Continuously indexed emission family `gamma*_x`, `x` in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SmoothEmissionFamily {
    /// `Y | X = x ~ Normal(mean0 + (mean1 - mean0) x, sd^2)`
    GaussianRamp { mean0: f64, mean1: f64, sd: f64 },
}

impl SmoothEmissionFamily {
    /// Log-density w.r.t. the dominating measure.
    fn log_density(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::GaussianRamp { mean0, mean1, sd } => {
                let mean = mean0 + (mean1 - mean0) * x;
                let z = (y - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    - dominating_log_density(y)
            }
        }
    }

    fn sample(&self, x: f64, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        match self {
            Self::GaussianRamp { mean0, mean1, sd } => {
                let mean = mean0 + (mean1 - mean0) * x;
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

/// An i.i.d. Gaussian-mixture truth (densities stored w.r.t. Lebesgue,
/// evaluated w.r.t. the dominating measure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IidTruth {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl IidTruth {
    fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&w, (&m, &s))| {
                let z = (y - m) / s;
                w.ln() - 0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        log_sum_exp(&terms).expect("nonempty mixture") - dominating_log_density(y)
    }
}

impl TruthModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            TruthModel::Finite(t) => {
                if t.params.min_probability() <= 0.0 {
                    return Err(Error::InvalidTruth(
                        "finite truth needs an ergodic chain (all transition entries positive)"
                            .into(),
                    ));
                }
                Ok(())
            }
            TruthModel::CompactKernel(t) => {
                if !(t.amplitude >= 0.0 && t.amplitude < 1.0) {
                    return Err(Error::InvalidTruth(format!(
                        "kernel amplitude {} must lie in [0, 1)",
                        t.amplitude
                    )));
                }
                if t.grid_size < 8 {
                    return Err(Error::usage(format!(
                        "quadrature grid of {} nodes is too coarse (need >= 8)",
                        t.grid_size
                    )));
                }
                match t.emission {
                    SmoothEmissionFamily::GaussianRamp { sd, .. } => {
                        if !(sd > 0.0) {
                            return Err(Error::InvalidTruth(
                                "emission standard deviation must be positive".into(),
                            ));
                        }
                    }
                }
                // numerical bracketing of the kernel density bounds
                let (lo, hi) = t.kernel_bounds_on_grid(64);
                let (want_lo, want_hi) = (1.0 - t.amplitude, 1.0 + t.amplitude);
                if lo < want_lo - 1e-9 || hi > want_hi + 1e-9 || lo <= 0.0 {
                    return Err(Error::InvalidTruth(format!(
                        "kernel density scan [{lo}, {hi}] escapes [{want_lo}, {want_hi}]"
                    )));
                }
                Ok(())
            }
            TruthModel::IidMixture(t) => {
                let m = t.weights.len();
                if m == 0 || t.means.len() != m || t.sds.len() != m {
                    return Err(Error::InvalidTruth(
                        "iid mixture needs matching nonempty weights/means/sds".into(),
                    ));
                }
                let sum: f64 = t.weights.iter().sum();
                if t.weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidTruth("iid mixture weights are not a simplex".into()));
                }
                if t.sds.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::InvalidTruth("iid mixture needs positive sds".into()));
                }
                Ok(())
            }
        }
    }

    /// Simulates `n` observations from the stationary process.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::usage("cannot simulate an empty sequence"));
        }
        self.validate()?;
        let mut rng = derive_rng(seed, &[]);
        match self {
            TruthModel::Finite(t) => {
                let pi = stationary_distribution(t.params.transitions())?;
                let stationary = HmmParams::new(
                    pi,
                    t.params.transitions().clone(),
                    t.params.emissions().to_vec(),
                )?;
                Ok(stationary.sample_path(n, &mut rng)?.1)
            }
            TruthModel::CompactKernel(t) => {
                let mut x: f64 = rng.gen_range(0.0..1.0);
                for _ in 0..t.burn_in {
                    x = t.sample_transition(x, &mut rng);
                }
                let mut ys = Vec::with_capacity(n);
                for i in 0..n {
                    if i > 0 {
                        x = t.sample_transition(x, &mut rng);
                    }
                    ys.push(t.emission.sample(x, &mut rng));
                }
                Ok(ys)
            }
            TruthModel::IidMixture(t) => {
                let mut ys = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut u = rng.gen_range(0.0..1.0);
                    let mut comp = t.weights.len() - 1;
                    for (i, &w) in t.weights.iter().enumerate() {
                        if u < w {
                            comp = i;
                            break;
                        }
                        u -= w;
                    }
                    let z: f64 = StandardNormal.sample(&mut rng);
                    ys.push(t.means[comp] + t.sds[comp] * z);
                }
                Ok(ys)
            }
        }
    }

    /// Streaming filter producing `log p*(y_t | y_1^{t-1})` step by step.
    pub fn filter(&self) -> Result<TruthFilter<'_>> {
        self.validate()?;
        match self {
            TruthModel::Finite(t) => {
                let pi = stationary_distribution(t.params.transitions())?;
                Ok(TruthFilter::Finite(Filter::with_initial(&t.params, pi)))
            }
            TruthModel::CompactKernel(t) => Ok(TruthFilter::Compact(GridFilter::new(t))),
            TruthModel::IidMixture(t) => Ok(TruthFilter::Iid(t)),
        }
    }

    /// `log p*(y_i | y_1^{i-1})` where `i` is the last index of `history`.
    ///
    /// By stationarity this is also the conditional density given only the
    /// window: truncating the history re-anchors the filter at the stationary
    /// law.
    pub fn conditional_log_density(&self, history: &[f64]) -> Result<f64> {
        if history.is_empty() {
            return Err(Error::usage("history must contain the predicted observation"));
        }
        let mut filter = self.filter()?;
        let mut last = f64::NAN;
        for &y in history {
            last = filter.step(y);
        }
        Ok(last)
    }
}

impl CompactKernelTruth {
    fn kernel_density(&self, x: f64, x2: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * (x - x2)).cos()
    }

    fn kernel_bounds_on_grid(&self, g: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..g {
            for j in 0..g {
                let q = self.kernel_density(i as f64 / (g - 1) as f64, j as f64 / (g - 1) as f64);
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        (lo, hi)
    }

    /// Exact draw from `q(x, .)` by rejection under the constant envelope.
    fn sample_transition(&self, x: f64, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        let envelope = 1.0 + self.amplitude;
        loop {
            let cand: f64 = rng.gen_range(0.0..1.0);
            let accept: f64 = rng.gen_range(0.0..envelope);
            if accept <= self.kernel_density(x, cand) {
                return cand;
            }
        }
    }
}

/// Streaming conditional-density filter under the truth.
pub enum TruthFilter<'a> {
    Finite(Filter<'a, EmissionMixture>),
    Compact(GridFilter<'a>),
    Iid(&'a IidTruth),
}

impl TruthFilter<'_> {
    /// Incorporates one observation, returning its conditional log-density
    /// given everything before it.
    pub fn step(&mut self, y: f64) -> f64 {
        match self {
            TruthFilter::Finite(f) => f.step(y),
            TruthFilter::Compact(f) => f.step(y),
            TruthFilter::Iid(t) => t.log_density(y),
        }
    }
}

/// Grid-quadrature filter for the compact-kernel truth: the hidden-state
/// predictor density is tracked on equispaced nodes with trapezoid weights,
/// giving `O(G^-2)` accuracy for smooth kernels.
pub struct GridFilter<'a> {
    truth: &'a CompactKernelTruth,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// kernel matrix `q(x_j, x_m)`
    kernel: Vec<f64>,
    /// predictor density at the nodes (w.r.t. Lebesgue on [0, 1])
    predictor: Vec<f64>,
    posterior: Vec<f64>,
}

impl<'a> GridFilter<'a> {
    pub fn new(truth: &'a CompactKernelTruth) -> Self {
        let g = truth.grid_size;
        let h = 1.0 / (g - 1) as f64;
        let nodes: Vec<f64> = (0..g).map(|j| j as f64 * h).collect();
        let mut weights = vec![h; g];
        weights[0] = 0.5 * h;
        weights[g - 1] = 0.5 * h;
        let mut kernel = vec![0.0; g * g];
        for j in 0..g {
            for m in 0..g {
                kernel[j * g + m] = truth.kernel_density(nodes[j], nodes[m]);
            }
        }
        Self {
            truth,
            nodes,
            weights,
            kernel,
            predictor: vec![1.0; g],
            posterior: vec![0.0; g],
        }
    }

    pub fn step(&mut self, y: f64) -> f64 {
        let g = self.nodes.len();
        // emission log-densities at the nodes, shifted for stability
        let mut shift = f64::NEG_INFINITY;
        for j in 0..g {
            let ld = self.truth.emission.log_density(self.nodes[j], y);
            self.posterior[j] = ld;
            shift = shift.max(ld);
        }
        let mut mass = 0.0;
        for j in 0..g {
            let e = (self.posterior[j] - shift).exp();
            self.posterior[j] = self.predictor[j] * e;
            mass += self.weights[j] * self.posterior[j];
        }
        let log_cond = shift + mass.ln();
        for j in 0..g {
            self.posterior[j] /= mass;
        }
        // predictor <- integral of posterior against the kernel
        for m in 0..g {
            let mut acc = 0.0;
            for j in 0..g {
                acc += self.weights[j] * self.posterior[j] * self.kernel[j * g + m];
            }
            self.predictor[m] = acc;
        }
        // guard against drift: the predictor is a probability density
        let total: f64 = self
            .weights
            .iter()
            .zip(&self.predictor)
            .map(|(w, f)| w * f)
            .sum();
        for f in &mut self.predictor {
            *f /= total;
        }
        log_cond
    }
}

/// Monte-Carlo estimate of the prediction error of a candidate parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionErrorEstimate {
    pub k_hat: f64,
    pub std_error: f64,
    pub chain_length: usize,
    pub burn_in: usize,
}

/// Options for the ergodic-average estimator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalOptions {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Batch count of the batch-means standard error (the summands are
    /// dependent, so the i.i.d. formula would understate the error).
    pub batches: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            chain_length: 200_000,
            burn_in: 1000,
            batches: 30,
            seed: 0,
        }
    }
}

fn batch_means(summands: &[f64], batches: usize) -> (f64, f64) {
    let mean = summands.iter().sum::<f64>() / summands.len() as f64;
    let b = batches.max(2).min(summands.len());
    let width = summands.len() / b;
    let used = width * b;
    let mut means = Vec::with_capacity(b);
    for i in 0..b {
        let chunk = &summands[i * width..(i + 1) * width];
        means.push(chunk.iter().sum::<f64>() / width as f64);
    }
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (b - 1) as f64;
    let _ = used;
    (mean, (var / b as f64).sqrt())
}

/// Estimates the prediction error of `theta` against the truth by the
/// ergodic average of `log p*(y_i | past) - log p_theta(y_i | past)` over one
/// long simulated chain, with full-history filters on both sides.
pub fn estimate_prediction_error<E: EmissionDensity>(
    truth: &TruthModel,
    theta: &HmmParams<E>,
    opts: &EvalOptions,
) -> Result<PredictionErrorEstimate> {
    if opts.chain_length <= opts.burn_in {
        return Err(Error::usage("chain_length must exceed burn_in"));
    }
    if opts.batches < 2 {
        return Err(Error::usage("batch-means needs at least two batches"));
    }
    let ys = truth.simulate(opts.chain_length, opts.seed)?;
    let mut truth_filter = truth.filter()?;
    let mut model_filter = Filter::new(theta);
    let mut summands = Vec::with_capacity(opts.chain_length - opts.burn_in);
    for (i, &y) in ys.iter().enumerate() {
        let lt = truth_filter.step(y);
        let lm = model_filter.step(y);
        if i < opts.burn_in {
            continue;
        }
        let d = lt - lm;
        if !d.is_finite() {
            return Err(Error::Estimation { step: i });
        }
        summands.push(d);
    }
    let (k_hat, std_error) = batch_means(&summands, opts.batches);
    Ok(PredictionErrorEstimate {
        k_hat,
        std_error,
        chain_length: opts.chain_length,
        burn_in: opts.burn_in,
    })
}

/// Empirical check of the tail-moment route: the mean of
/// `p*(y_i | past)^delta` over a long chain, with its batch-means error and
/// the implied tail scale `(1 + ln mean) / delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailMomentReport {
    pub delta: f64,
    pub moment_mean: f64,
    pub std_error: f64,
    pub tail_scale: f64,
}

pub fn tail_moment(truth: &TruthModel, delta: f64, opts: &EvalOptions) -> Result<TailMomentReport> {
    if !(delta > 0.0) {
        return Err(Error::usage("delta must be positive"));
    }
    if opts.chain_length <= opts.burn_in {
        return Err(Error::usage("chain_length must exceed burn_in"));
    }
    let ys = truth.simulate(opts.chain_length, opts.seed)?;
    let mut filter = truth.filter()?;
    let mut summands = Vec::with_capacity(opts.chain_length - opts.burn_in);
    for (i, &y) in ys.iter().enumerate() {
        let l = filter.step(y);
        if i < opts.burn_in {
            continue;
        }
        let v = (delta * l).exp();
        if !v.is_finite() {
            return Err(Error::Estimation { step: i });
        }
        summands.push(v);
    }
    let (moment_mean, std_error) = batch_means(&summands, opts.batches);
    Ok(TailMomentReport {
        delta,
        moment_mean,
        std_error,
        tail_scale: (1.0 + moment_mean.ln()) / delta,
    })
}

/// Forgetting constants of the truth and, optionally, the measured gaps
/// between conditional log-densities computed from truncated histories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// Geometric contraction rate `1 - sigma_min / sigma_max` of the kernel.
    pub contraction_rate: f64,
    /// Multiplier of the gap bound, `1 / (1 - contraction_rate)`.
    pub gap_constant: f64,
    /// Exponential mixing rate `-ln(1 - sigma_min) / 2`.
    pub mixing_rate: f64,
    /// Horizon from which the mixing bound applies.
    pub mixing_horizon: usize,
    /// Measured max gaps per window pair; empty for a constants-only report.
    pub empirical_gaps: Vec<GapEntry>,
    /// Number of gap entries exceeding the bound beyond tolerance.
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapEntry {
    pub k: usize,
    pub k_prime: usize,
    pub max_gap: f64,
    pub bound: f64,
}

/// Tolerance absorbing grid-quadrature error in the gap checks.
pub const FORGETTING_TOLERANCE: f64 = 1e-4;

/// Kernel-density bounds of the truth relative to its stationary-uniform
/// base measure, `(sigma_min, sigma_max)`.
fn kernel_bounds(truth: &TruthModel) -> Result<(f64, f64)> {
    match truth {
        TruthModel::Finite(t) => {
            let k = t.params.num_states() as f64;
            let trans = t.params.transitions();
            let lo = trans.iter().cloned().fold(f64::INFINITY, f64::min) * k;
            let hi = trans.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * k;
            Ok((lo, hi))
        }
        TruthModel::CompactKernel(t) => Ok((1.0 - t.amplitude, 1.0 + t.amplitude)),
        TruthModel::IidMixture(_) => Ok((1.0, 1.0)),
    }
}

/// Forgetting constants implied by the kernel bounds.
pub fn forgetting_constants(truth: &TruthModel) -> Result<ForgettingReport> {
    truth.validate()?;
    let (lo, hi) = kernel_bounds(truth)?;
    if !(lo > 0.0) {
        return Err(Error::InvalidTruth(format!(
            "kernel density lower bound {lo} must be positive"
        )));
    }
    let contraction_rate = 1.0 - lo / hi;
    Ok(ForgettingReport {
        contraction_rate,
        gap_constant: 1.0 / (1.0 - contraction_rate),
        mixing_rate: -(1.0 - lo).ln() / 2.0,
        mixing_horizon: 1,
        empirical_gaps: Vec::new(),
        violations: 0,
    })
}

/// Samples sequences from the truth and measures, for every pair of window
/// lengths, the largest difference between the conditional log-densities of
/// the same observation computed from the two truncated histories. Each gap
/// is compared against the geometric bound of the forgetting constants.
pub fn check_forgetting(
    truth: &TruthModel,
    n_sequences: usize,
    k_values: &[usize],
    seed: u64,
) -> Result<ForgettingReport> {
    if n_sequences == 0 || k_values.is_empty() {
        return Err(Error::usage("need at least one sequence and one window length"));
    }
    if k_values.iter().any(|&k| k == 0) {
        return Err(Error::usage("window lengths must be at least 1"));
    }
    let mut report = forgetting_constants(truth)?;
    let k_max = *k_values.iter().max().unwrap();
    let positions_per_sequence = 3usize;
    let len = k_max + positions_per_sequence;

    // conditional log-densities per window length, at every scanned position
    let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); k_values.len()];
    for s in 0..n_sequences {
        let ys = truth.simulate(len, derive_rng_seed(seed, s as u64))?;
        for pos in k_max..len {
            for (ki, &k) in k_values.iter().enumerate() {
                let window = &ys[pos - k..=pos];
                per_k[ki].push(truth.conditional_log_density(window)?);
            }
        }
    }

    let mut gaps = Vec::with_capacity(k_values.len() * k_values.len());
    let mut violations = 0usize;
    for (i, &k) in k_values.iter().enumerate() {
        for (j, &k2) in k_values.iter().enumerate() {
            if j <= i {
                continue;
            }
            let max_gap = per_k[i]
                .iter()
                .zip(&per_k[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let min_k = k.min(k2);
            let bound = report.gap_constant * report.contraction_rate.powi(min_k as i32 - 1);
            if max_gap > bound + FORGETTING_TOLERANCE {
                violations += 1;
            }
            gaps.push(GapEntry {
                k,
                k_prime: k2,
                max_gap,
                bound,
            });
        }
    }
    report.empirical_gaps = gaps;
    report.violations = violations;
    Ok(report)
}

fn derive_rng_seed(master: u64, tag: u64) -> u64 {
    crate::seeds::derive_seed(master, &[tag])
}
