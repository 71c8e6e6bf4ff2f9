//! Constrained maximum-likelihood fitting within one model: EM with a
//! forward-backward E-step, floor-respecting M-steps and multiple restarts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{stationary_distribution, HmmParams};
use crate::model::{
    project_probability_floor, project_transition, EmissionMixture, ModelIndex,
};
use crate::seeds::derive_rng;

/// Ascent slack: a trace step may lose at most this much before the fit is
/// rolled back to the previous iterate.
pub const ASCENT_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Weighted-EM iterations inside each emission M-step.
    pub inner_emission_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            restarts: 3,
            seed: 0,
            inner_emission_iters: 3,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::usage("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::usage("tol must be positive"));
        }
        if self.restarts < 1 {
            return Err(Error::usage("restarts must be at least 1"));
        }
        if self.inner_emission_iters < 1 {
            return Err(Error::usage("inner_emission_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Output of one model fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HmmParams<EmissionMixture>,
    /// The attained per-observation log-likelihood, `(1/n) l_n`.
    pub final_log_likelihood: f64,
    /// Per-iteration values of `(1/n) l_n`; nondecreasing up to the ascent
    /// slack by construction.
    pub trace: Vec<f64>,
    pub restart_index: usize,
    pub converged: bool,
}

/// Posteriors from one forward-backward pass.
#[derive(Debug, Clone)]
pub struct EStep {
    /// `state[t][x] = p(X_t = x | Y_1^n)`
    pub state: Vec<DVector<f64>>,
    /// `pair[t][(x, x')] = p(X_t = x, X_{t+1} = x' | Y_1^n)`
    pub pair: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Forward-backward smoothing. The returned log-likelihood matches the
/// forward-only recursion to near machine precision.
pub fn e_step(params: &HmmParams<EmissionMixture>, ys: &[f64]) -> Result<EStep> {
    let k = params.num_states();
    let n = ys.len();
    if n < 2 {
        return Err(Error::usage("the E-step needs at least two observations"));
    }
    // per-step emission weights, shifted by the row max so linear space is safe
    let mut weights = vec![DVector::<f64>::zeros(k); n];
    let mut shifts = vec![0.0f64; n];
    for t in 0..n {
        let mut shift = f64::NEG_INFINITY;
        for x in 0..k {
            let g = params.emissions()[x].log_density(ys[t]);
            weights[t][x] = g;
            shift = shift.max(g);
        }
        if shift == f64::NEG_INFINITY {
            return Err(Error::DegenerateFit { step: t });
        }
        shifts[t] = shift;
        for x in 0..k {
            weights[t][x] = (weights[t][x] - shift).exp();
        }
    }

    let mut filtered = vec![DVector::<f64>::zeros(k); n];
    let mut norms = vec![0.0f64; n];
    let mut log_likelihood = 0.0;
    let mut predictor = params.initial().clone();
    for t in 0..n {
        let mut combined = predictor.component_mul(&weights[t]);
        let norm = combined.sum();
        if !(norm > 0.0) {
            return Err(Error::DegenerateFit { step: t });
        }
        combined /= norm;
        log_likelihood += norm.ln() + shifts[t];
        norms[t] = norm;
        predictor = params.transitions().tr_mul(&combined);
        filtered[t] = combined;
    }

    // backward pass in the same scaling
    let mut backward = vec![DVector::<f64>::zeros(k); n];
    backward[n - 1].fill(1.0);
    for t in (0..n - 1).rev() {
        let scaled = weights[t + 1].component_mul(&backward[t + 1]);
        backward[t] = params.transitions() * &scaled / norms[t + 1];
    }

    let mut state = Vec::with_capacity(n);
    for t in 0..n {
        state.push(filtered[t].component_mul(&backward[t]));
    }
    let mut pair = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        let mut m = DMatrix::<f64>::zeros(k, k);
        for x in 0..k {
            for x2 in 0..k {
                m[(x, x2)] = filtered[t][x]
                    * params.transitions()[(x, x2)]
                    * weights[t + 1][x2]
                    * backward[t + 1][x2]
                    / norms[t + 1];
            }
        }
        pair.push(m);
    }
    Ok(EStep { state, pair, log_likelihood })
}

/// Closed-form transition update (expected-count ratios) followed by the
/// floor projection; the initial distribution is re-estimated as the smoothed
/// posterior of the first state and floored the same way.
pub fn m_step_transitions(
    pair: &[DMatrix<f64>],
    state: &[DVector<f64>],
    transition_floor: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = state
        .first()
        .ok_or_else(|| Error::usage("empty posteriors"))?
        .len();
    let mut counts = DMatrix::<f64>::zeros(k, k);
    for m in pair {
        counts += m;
    }
    for x in 0..k {
        let row_sum: f64 = counts.row(x).iter().sum();
        if !(row_sum > 0.0) {
            // a state that is never visited keeps an uninformative row
            for x2 in 0..k {
                counts[(x, x2)] = 1.0 / k as f64;
            }
        }
    }
    let trans = project_transition(&counts, transition_floor)?;
    let pi = project_probability_floor(&state[0], transition_floor)?;
    Ok((pi, trans))
}

/// One weighted-EM pass over the mixture of a single state.
///
/// The floor component keeps its fixed weight; kernel weights are
/// renormalized on the simplex; locations and scales are clipped to their
/// boxes. If the weighted log-likelihood of the state's data would decrease,
/// the previous mixture is kept.
fn update_state_mixture(
    ys: &[f64],
    resp: &[f64],
    current: &EmissionMixture,
    inner_iters: usize,
) -> Result<EmissionMixture> {
    let total: f64 = resp.iter().sum();
    if !(total > 1e-12) {
        return Ok(current.clone());
    }
    let constraints = current.constraints().clone();
    let m = constraints.mixture_size;
    let p = constraints.power;
    let pf = f64::from(p);
    let ln_floor = constraints.floor_weight.ln();
    let ln_keep = (-constraints.floor_weight).ln_1p();

    let objective = |mix: &EmissionMixture| -> f64 {
        ys.iter()
            .zip(resp)
            .map(|(&y, &r)| r * mix.log_density(y))
            .sum()
    };
    let before = objective(current);

    let mut weights = current.weights().to_vec();
    let mut locations = current.locations().to_vec();
    let mut scales = current.scales().to_vec();
    let mut mix = current.clone();

    for _ in 0..inner_iters {
        // E: responsibilities over the floor and the m kernel components
        let mut comp_mass = vec![0.0f64; m];
        let mut comp_sum = vec![0.0f64; m];
        let mut tau = vec![0.0f64; m + 1];
        let mut assign: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(ys.len());
        let log_norm = crate::numerics::exp_power_log_norm(p);
        for (&y, &r) in ys.iter().zip(resp) {
            if r == 0.0 {
                continue;
            }
            let base = crate::numerics::LN_PI + (y * y).ln_1p(); // -ln G(y)
            tau[0] = ln_floor;
            let mut shift = tau[0];
            for i in 0..m {
                let z = (y - locations[i]) / scales[i];
                tau[i + 1] = ln_keep + weights[i].ln() - scales[i].ln() - log_norm
                    - z.powi(p as i32)
                    + base;
                shift = shift.max(tau[i + 1]);
            }
            let mut denom = 0.0;
            for v in tau.iter_mut() {
                *v = (*v - shift).exp();
                denom += *v;
            }
            let mut row = vec![0.0f64; m];
            for i in 0..m {
                let t = r * tau[i + 1] / denom;
                row[i] = t;
                comp_mass[i] += t;
                comp_sum[i] += t * y;
            }
            assign.push((y, r, row));
        }
        let kernel_mass: f64 = comp_mass.iter().sum();
        if kernel_mass > 0.0 {
            for i in 0..m {
                weights[i] = comp_mass[i] / kernel_mass;
            }
        }
        // locations: closed form at p = 2, otherwise a monotone score root
        for i in 0..m {
            if comp_mass[i] <= 0.0 {
                continue;
            }
            let new_loc = if p == 2 {
                comp_sum[i] / comp_mass[i]
            } else {
                location_root(&assign, i, pf)
            };
            locations[i] = constraints.clamp_location(new_loc);
        }
        // scales: fixed point s^p = p * weighted mean of (y - mu)^p,
        // damped for p > 2 where the location is only approximate
        for i in 0..m {
            if comp_mass[i] <= 0.0 {
                continue;
            }
            let moment: f64 = assign
                .iter()
                .map(|(y, _, row)| row[i] * (y - locations[i]).powi(p as i32))
                .sum::<f64>()
                / comp_mass[i];
            let target = (pf * moment).powf(1.0 / pf);
            let new_scale = if p == 2 {
                target
            } else {
                scales[i] + 0.5 * (target - scales[i])
            };
            scales[i] = constraints.clamp_scale(new_scale);
        }
        mix = EmissionMixture::new(
            weights.clone(),
            locations.clone(),
            scales.clone(),
            constraints.clone(),
        )?;
    }

    if objective(&mix) < before - ASCENT_SLACK {
        return Ok(current.clone());
    }
    Ok(mix)
}

/// Root of the weighted location score `sum_t w_t (y_t - mu)^{p-1} = 0`
/// (monotone in `mu` for even `p`), by bisection over the data range.
fn location_root(assign: &[(f64, f64, Vec<f64>)], comp: usize, pf: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (y, _, row) in assign {
        if row[comp] > 0.0 {
            lo = lo.min(*y);
            hi = hi.max(*y);
        }
    }
    if !lo.is_finite() || lo >= hi {
        return lo.min(hi);
    }
    let score = |mu: f64| -> f64 {
        assign
            .iter()
            .map(|(y, _, row)| row[comp] * (y - mu).powf(pf - 1.0))
            .sum()
    };
    let mut a = lo;
    let mut b = hi;
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if score(mid) >= 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Emission M-step for every state.
pub fn m_step_emissions(
    ys: &[f64],
    state: &[DVector<f64>],
    current: &[EmissionMixture],
    config: &FitConfig,
) -> Result<Vec<EmissionMixture>> {
    let mut resp = vec![0.0f64; ys.len()];
    current
        .iter()
        .enumerate()
        .map(|(x, mix)| {
            for (t, r) in resp.iter_mut().enumerate() {
                *r = state[t][x];
            }
            update_state_mixture(ys, &resp, mix, config.inner_emission_iters)
        })
        .collect()
}

/// Initial parameters for one restart: jittered empirical quantiles for the
/// locations, data spread for the scales, a randomly perturbed uniform
/// transition matrix projected to the floor, and its stationary law as the
/// initial distribution.
pub fn initialize(
    ys: &[f64],
    index: &ModelIndex,
    rng: &mut ChaCha8Rng,
) -> Result<HmmParams<EmissionMixture>> {
    let k = index.num_states;
    let m = index.mixture_size;
    if ys.len() < k * m {
        return Err(Error::usage(format!(
            "need at least K*M = {} observations, got {}",
            k * m,
            ys.len()
        )));
    }
    let constraints = &index.constraints;
    let mut sorted = ys.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite observations"));
    let quantile = |level: f64| -> f64 {
        let pos = level * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        } else {
            sorted[i]
        }
    };
    let spread = quantile(0.9) - quantile(0.1);
    let jitter_scale = 0.05 * spread + 1e-3;
    let scale = constraints.clamp_scale(spread / m as f64);

    let mut emissions = Vec::with_capacity(k);
    for x in 0..k {
        let weights = vec![1.0 / m as f64; m];
        let mut locations = Vec::with_capacity(m);
        let mut scales = Vec::with_capacity(m);
        for i in 0..m {
            let level = (x * m + i + 1) as f64 / (k * m + 1) as f64;
            let loc = quantile(level) + rng.gen_range(-jitter_scale..jitter_scale);
            locations.push(constraints.clamp_location(loc));
            scales.push(scale);
        }
        emissions.push(EmissionMixture::new(
            weights,
            locations,
            scales,
            constraints.clone(),
        )?);
    }

    let raw = DMatrix::from_fn(k, k, |_, _| 1.0 + rng.gen_range(0.0..0.5));
    let trans = project_transition(&raw, constraints.transition_floor)?;
    let pi = stationary_distribution(&trans)?;
    HmmParams::new(pi, trans, emissions)
}

/// Checks every model constraint on a fitted parameter set.
pub fn is_feasible(params: &HmmParams<EmissionMixture>, index: &ModelIndex) -> bool {
    let c = &index.constraints;
    if params.num_states() != index.num_states {
        return false;
    }
    if params.min_probability() < c.transition_floor - 1e-12 {
        return false;
    }
    params.emissions().iter().all(|e| {
        e.locations()
            .iter()
            .all(|&mu| (c.loc_min..=c.loc_max).contains(&mu))
            && e.scales()
                .iter()
                .all(|&s| (c.scale_min..=c.scale_max).contains(&s))
            && (e.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12
            && e.constraints().floor_weight == c.floor_weight
    })
}

fn run_single_restart(
    ys: &[f64],
    index: &ModelIndex,
    config: &FitConfig,
    restart: usize,
) -> Result<FitResult> {
    let n = ys.len() as f64;
    let mut rng = derive_rng(config.seed, &[restart as u64]);
    let mut params = initialize(ys, index, &mut rng)?;
    let mut trace: Vec<f64> = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    let mut previous: Option<HmmParams<EmissionMixture>> = None;

    for _ in 0..config.max_iters {
        let stats = e_step(&params, ys)?;
        let ll = stats.log_likelihood / n;
        if let Some(last) = trace.last().copied() {
            if ll < last - ASCENT_SLACK {
                // a projection or clipping step lost ground; keep the
                // previous iterate and stop
                params = previous.expect("previous params exist after an iteration");
                converged = true;
                break;
            }
            trace.push(ll);
            if ll - last <= config.tol * last.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        previous = Some(params.clone());
        let (pi, trans) = m_step_transitions(
            &stats.pair,
            &stats.state,
            index.constraints.transition_floor,
        )?;
        let emissions = m_step_emissions(ys, &stats.state, params.emissions(), config)?;
        params = HmmParams::new(pi, trans, emissions)?;
    }

    let final_log_likelihood = *trace
        .last()
        .ok_or_else(|| Error::numerical("empty fit trace"))?;
    Ok(FitResult {
        params,
        final_log_likelihood,
        trace,
        restart_index: restart,
        converged,
    })
}

/// Best-of-restarts constrained EM. Restarts run concurrently; the winner is
/// the highest final log-likelihood with ties broken toward the lowest
/// restart index, so the output is deterministic given the seed.
pub fn fit_model(ys: &[f64], index: &ModelIndex, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if ys.len() < 2 {
        return Err(Error::usage("fitting needs at least two observations"));
    }
    let outcomes: Vec<Result<FitResult>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_single_restart(ys, index, config, r))
        .collect();

    let mut best: Option<FitResult> = None;
    let mut diagnostics = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fit) if fit.final_log_likelihood.is_nan() => {
                diagnostics.push(format!("restart {r}: NaN log-likelihood"));
            }
            Ok(fit) => {
                let better = match &best {
                    None => true,
                    Some(b) => fit.final_log_likelihood > b.final_log_likelihood,
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => diagnostics.push(format!("restart {r}: {e}")),
        }
    }
    best.ok_or(Error::FitFailure { diagnostics })
}
