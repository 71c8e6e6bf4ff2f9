//! The constrained model family: per-model constraint snapshots, emission
//! mixtures with a dominating-measure floor component, the emission envelope,
//! constraint projections, the selection grid and the penalty.

use std::sync::Arc;

use rand::distributions::Distribution;
use rand::{Rng, RngCore};
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{EmissionDensity, EmissionSampler};
use crate::numerics::{
    exp_power_log_norm, log_add_exp, log_sum_exp, LN_PI,
};

/// Largest admissible transition floor (the ergodicity assumption caps it at
/// `exp(-1)`); the floor formula `C / ln n` is clamped here at small `n`.
pub const MAX_TRANSITION_FLOOR: f64 = 0.36787944117144233;

/// Experiment-wide knobs of the model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Constant `C` in the transition floor `C / ln n`.
    pub floor_const: f64,
    /// Exponent `a` of the dominating-measure floor weight `n^-a`.
    pub floor_exponent: f64,
    /// Even exponent of the emission kernel.
    pub power: u32,
    /// Use the wide scale range `[1/n, n]` instead of `[1/M, 1]`.
    pub wide_scales: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            floor_const: 1.0,
            floor_exponent: 2.0,
            power: 2,
            wide_scales: false,
        }
    }
}

/// Constraint snapshot of one model: everything about the parameter set that
/// depends on the sample size `n` and the mixture order `M`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Constraints {
    pub n: usize,
    /// Constant in the transition-floor formula.
    pub floor_const: f64,
    /// Uniform lower bound on transition and initial probabilities.
    pub transition_floor: f64,
    /// Number of kernel components per emission.
    pub mixture_size: usize,
    pub loc_min: f64,
    pub loc_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Weight of the dominating-measure component, `n^-floor_exponent`.
    pub floor_weight: f64,
    pub floor_exponent: f64,
    /// Even exponent of the emission kernel.
    pub power: u32,
    /// Bound on the emission envelope over the model (grows like `ln n`).
    pub envelope_bound: f64,
}

impl Constraints {
    pub fn new(n: usize, cfg: &ModelConfig, mixture_size: usize) -> Result<Arc<Self>> {
        if n < 3 {
            return Err(Error::usage(format!("need n >= 3, got {n}")));
        }
        if mixture_size < 1 {
            return Err(Error::usage("mixture size must be at least 1"));
        }
        if !(cfg.floor_const > 0.0) {
            return Err(Error::usage("transition-floor constant must be positive"));
        }
        if !(cfg.floor_exponent > 0.0) {
            return Err(Error::usage("floor exponent must be positive"));
        }
        if cfg.power < 2 || cfg.power % 2 != 0 {
            return Err(Error::usage("kernel power must be an even integer >= 2"));
        }
        let nf = n as f64;
        let transition_floor = (cfg.floor_const / nf.ln()).min(MAX_TRANSITION_FLOOR);
        let floor_weight = nf.powf(-cfg.floor_exponent);
        if !(floor_weight > 0.0 && floor_weight < 1.0) {
            return Err(Error::usage(format!(
                "floor weight n^-a = {floor_weight} is outside (0, 1)"
            )));
        }
        let (scale_min, scale_max, envelope_bound) = if cfg.wide_scales {
            (1.0 / nf, nf, 6.0 * nf.ln())
        } else {
            (1.0 / mixture_size as f64, 1.0, 5.0 * nf.ln())
        };
        Ok(Arc::new(Self {
            n,
            floor_const: cfg.floor_const,
            transition_floor,
            mixture_size,
            loc_min: -nf,
            loc_max: nf,
            scale_min,
            scale_max,
            floor_weight,
            floor_exponent: cfg.floor_exponent,
            power: cfg.power,
            envelope_bound,
        }))
    }

    pub fn clamp_location(&self, mu: f64) -> f64 {
        mu.clamp(self.loc_min, self.loc_max)
    }

    pub fn clamp_scale(&self, s: f64) -> f64 {
        s.clamp(self.scale_min, self.scale_max)
    }
}

/// One emission density: a convex combination of the dominating measure (with
/// the fixed floor weight) and `M` location-scale kernels, expressed as a
/// density with respect to the dominating measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct EmissionMixture {
    weights: Vec<f64>,
    locations: Vec<f64>,
    scales: Vec<f64>,
    constraints: Arc<Constraints>,
    // ln(w_i / s_i) - ln(2 Gamma(1 + 1/p)), merged per-component constant
    coefs: Vec<f64>,
    ln_floor: f64,
    ln_one_minus_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    locations: Vec<f64>,
    scales: Vec<f64>,
    constraints: Arc<Constraints>,
}

impl TryFrom<MixtureRepr> for EmissionMixture {
    type Error = Error;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        EmissionMixture::new(r.weights, r.locations, r.scales, r.constraints)
    }
}

impl From<EmissionMixture> for MixtureRepr {
    fn from(m: EmissionMixture) -> Self {
        Self {
            weights: m.weights,
            locations: m.locations,
            scales: m.scales,
            constraints: m.constraints,
        }
    }
}

impl EmissionMixture {
    pub fn new(
        weights: Vec<f64>,
        locations: Vec<f64>,
        scales: Vec<f64>,
        constraints: Arc<Constraints>,
    ) -> Result<Self> {
        let m = constraints.mixture_size;
        if weights.len() != m || locations.len() != m || scales.len() != m {
            return Err(Error::usage(format!(
                "mixture must have exactly {m} components"
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::usage("mixture weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::usage(format!(
                "mixture weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        for &mu in &locations {
            if !(constraints.loc_min..=constraints.loc_max).contains(&mu) {
                return Err(Error::usage(format!(
                    "location {mu} outside [{}, {}]",
                    constraints.loc_min, constraints.loc_max
                )));
            }
        }
        for &s in &scales {
            if !(constraints.scale_min..=constraints.scale_max).contains(&s) {
                return Err(Error::usage(format!(
                    "scale {s} outside [{}, {}]",
                    constraints.scale_min, constraints.scale_max
                )));
            }
        }
        let log_norm = exp_power_log_norm(constraints.power);
        let coefs = weights
            .iter()
            .zip(&scales)
            .map(|(&w, &s)| w.ln() - s.ln() - log_norm)
            .collect();
        let ln_floor = constraints.floor_weight.ln();
        let ln_one_minus_floor = (-constraints.floor_weight).ln_1p();
        Ok(Self {
            weights,
            locations,
            scales,
            constraints,
            coefs,
            ln_floor,
            ln_one_minus_floor,
        })
    }

    /// A mixture drawn uniformly from the constraint box, for tests and
    /// randomized scans.
    pub fn random(constraints: &Arc<Constraints>, rng: &mut dyn RngCore) -> Self {
        let m = constraints.mixture_size;
        let mut weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let locations = (0..m)
            .map(|_| rng.gen_range(constraints.loc_min..=constraints.loc_max))
            .collect();
        let scales = (0..m)
            .map(|_| {
                let lo = constraints.scale_min.ln();
                let hi = constraints.scale_max.ln();
                rng.gen_range(lo..=hi).exp().clamp(constraints.scale_min, constraints.scale_max)
            })
            .collect();
        Self::new(weights, locations, scales, Arc::clone(constraints))
            .expect("random mixture is feasible by construction")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn constraints(&self) -> &Arc<Constraints> {
        &self.constraints
    }

    /// Log-density w.r.t. the dominating measure. Always at least
    /// `ln(floor_weight)`.
    pub fn log_density(&self, y: f64) -> f64 {
        let p = self.constraints.power as i32;
        let mut shift = f64::NEG_INFINITY;
        let mut small = [0.0f64; 8];
        let mut heap;
        let kernel: &mut [f64] = if self.coefs.len() <= 8 {
            &mut small[..self.coefs.len()]
        } else {
            heap = vec![0.0; self.coefs.len()];
            &mut heap
        };
        for (i, (&coef, (&mu, &s))) in self
            .coefs
            .iter()
            .zip(self.locations.iter().zip(&self.scales))
            .enumerate()
        {
            let z = (y - mu) / s;
            let v = coef - z.powi(p);
            kernel[i] = v;
            if v > shift {
                shift = v;
            }
        }
        let kernel_lse = if shift == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let sum: f64 = kernel.iter().map(|&v| (v - shift).exp()).sum();
            shift + sum.ln()
        };
        // divide by the dominating density: -ln G(y) = ln(pi) + ln(1 + y^2)
        let scaled = self.ln_one_minus_floor + kernel_lse + LN_PI + (y * y).ln_1p();
        log_add_exp(self.ln_floor, scaled)
    }
}

impl EmissionDensity for EmissionMixture {
    fn log_density(&self, y: f64) -> f64 {
        EmissionMixture::log_density(self, y)
    }
}

impl EmissionSampler for EmissionMixture {
    /// Samples an observation on the real line: the floor component is the
    /// dominating measure itself (a standard Cauchy), the rest are
    /// exponential-power kernels drawn through a gamma transform.
    fn sample_observation(&self, rng: &mut dyn RngCore) -> f64 {
        if rng.gen_range(0.0..1.0) < self.constraints.floor_weight {
            let u: f64 = rng.gen_range(-0.5..0.5);
            return (std::f64::consts::PI * u).tan();
        }
        let mut u = rng.gen_range(0.0..1.0);
        let mut comp = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            if u < w {
                comp = i;
                break;
            }
            u -= w;
        }
        let p = f64::from(self.constraints.power);
        let gamma = Gamma::new(1.0 / p, 1.0).expect("valid gamma shape");
        let magnitude = gamma.sample(rng).powf(1.0 / p);
        let sign = if rng.gen_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
        self.locations[comp] + self.scales[comp] * sign * magnitude
    }
}

/// Envelope of a state-indexed family of emissions: the log of the summed
/// densities, `ln sum_x gamma_x(y)`.
pub fn emission_log_envelope(emissions: &[EmissionMixture], y: f64) -> Result<f64> {
    let per_state: Vec<f64> = emissions.iter().map(|e| e.log_density(y)).collect();
    log_sum_exp(&per_state)
}

/// Deterministic scan grid used to probe the envelope bound: 4096 evenly
/// spaced points over `[-2n, 2n]` plus every mixture location (the envelope
/// peaks near a location or the origin).
pub fn envelope_scan_points(n: usize, emissions: &[EmissionMixture]) -> Vec<f64> {
    let half = 2.0 * n as f64;
    let count = 4096;
    let mut pts: Vec<f64> = (0..count)
        .map(|i| -half + 2.0 * half * i as f64 / (count - 1) as f64)
        .collect();
    for e in emissions {
        pts.extend_from_slice(e.locations());
    }
    pts
}

fn project_row(row: &mut [f64], floor: f64) -> Result<()> {
    let k = row.len() as f64;
    let sum: f64 = row.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::usage("cannot project a row without positive mass"));
    }
    row.iter_mut().for_each(|q| *q /= sum);
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= floor {
        return Ok(());
    }
    let uniform = 1.0 / k;
    let beta = (floor - min) / (uniform - min);
    row.iter_mut()
        .for_each(|q| *q = (1.0 - beta) * *q + beta * uniform);
    Ok(())
}

/// Projects a nonnegative square matrix onto the row-stochastic matrices with
/// minimum entry at least `floor`: each row is normalized, then mixed with
/// the uniform row by the smallest coefficient that lifts its minimum to the
/// floor. Feasible rows pass through unchanged.
pub fn project_transition(
    raw: &nalgebra::DMatrix<f64>,
    floor: f64,
) -> Result<nalgebra::DMatrix<f64>> {
    let k = raw.nrows();
    if raw.ncols() != k || k == 0 {
        return Err(Error::usage("transition projection needs a square matrix"));
    }
    if floor * k as f64 > 1.0 + 1e-12 {
        return Err(Error::infeasible(format!(
            "floor {floor} with {k} states cannot fit a probability row"
        )));
    }
    if raw.iter().any(|&q| !(q >= 0.0)) {
        return Err(Error::usage(
            "transition projection needs nonnegative entries",
        ));
    }
    let mut out = raw.clone();
    for x in 0..k {
        let mut row: Vec<f64> = out.row(x).iter().cloned().collect();
        project_row(&mut row, floor)?;
        for (j, &v) in row.iter().enumerate() {
            out[(x, j)] = v;
        }
    }
    Ok(out)
}

/// Same projection for a single probability vector (used for the initial
/// distribution, which is floored exactly like the transition rows).
pub fn project_probability_floor(
    raw: &nalgebra::DVector<f64>,
    floor: f64,
) -> Result<nalgebra::DVector<f64>> {
    let k = raw.len();
    if k == 0 {
        return Err(Error::usage("cannot project an empty vector"));
    }
    if floor * k as f64 > 1.0 + 1e-12 {
        return Err(Error::infeasible(format!(
            "floor {floor} with {k} entries cannot fit a probability vector"
        )));
    }
    if raw.iter().any(|&q| !(q >= 0.0)) {
        return Err(Error::usage(
            "probability projection needs nonnegative entries",
        ));
    }
    let mut row: Vec<f64> = raw.iter().cloned().collect();
    project_row(&mut row, floor)?;
    Ok(nalgebra::DVector::from_vec(row))
}

/// One point of the selection grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelIndex {
    pub num_states: usize,
    pub mixture_size: usize,
    pub constraints: Arc<Constraints>,
}

impl ModelIndex {
    /// Parametric dimension of the model: two numbers per kernel component
    /// and state, plus the transition degrees of freedom.
    pub fn model_dimension(&self) -> usize {
        2 * self.mixture_size * self.num_states + self.num_states * self.num_states - 1
    }

    /// Penalty complexity term `K M + K^2`.
    pub fn complexity(&self) -> usize {
        self.num_states * self.mixture_size + self.num_states * self.num_states
    }
}

/// Penalty shape: `c_pen * (K M + K^2) * (ln n)^r / n`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub c_pen: f64,
    pub log_exponent: f64,
}

impl PenaltyConfig {
    /// The penalty exponent from the asymptotic theory. At practical sample
    /// sizes it dwarfs every likelihood difference, so it is exposed but not
    /// the default.
    pub fn paper_faithful() -> Self {
        Self {
            c_pen: 1.0,
            log_exponent: 15.0,
        }
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            c_pen: 0.15,
            log_exponent: 2.0,
        }
    }
}

/// Evaluates the penalty for one grid point. Strictly increasing in both `K`
/// and `M`.
pub fn penalty(index: &ModelIndex, cfg: &PenaltyConfig) -> f64 {
    let n = index.constraints.n as f64;
    cfg.c_pen * index.complexity() as f64 * n.ln().powf(cfg.log_exponent) / n
}

/// Optional user caps on the selection grid.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GridCaps {
    pub max_states: Option<usize>,
    pub max_mixture: Option<usize>,
}

/// Builds the selection grid: all `(K, M)` with `1 <= K <= ln n / (2 C)` and
/// `2 M <= n`, intersected with the caps, ordered by `K` then `M`.
pub fn model_grid(n: usize, cfg: &ModelConfig, caps: &GridCaps) -> Result<Vec<ModelIndex>> {
    if n < 3 {
        return Err(Error::usage(format!("need n >= 3, got {n}")));
    }
    let k_theory = ((n as f64).ln() / (2.0 * cfg.floor_const)).floor() as usize;
    let k_hi = caps.max_states.map_or(k_theory, |c| c.min(k_theory));
    let m_theory = n / 2;
    let m_hi = caps.max_mixture.map_or(m_theory, |c| c.min(m_theory));
    if k_hi < 1 || m_hi < 1 {
        return Err(Error::usage(format!(
            "empty model grid: state bound {k_hi}, mixture bound {m_hi} (n = {n})"
        )));
    }
    let mut grid = Vec::with_capacity(k_hi * m_hi);
    for m in 1..=m_hi {
        let constraints = Constraints::new(n, cfg, m)?;
        for k in 1..=k_hi {
            debug_assert!(k as f64 * constraints.transition_floor <= 1.0);
            grid.push(ModelIndex {
                num_states: k,
                mixture_size: m,
                constraints: Arc::clone(&constraints),
            });
        }
    }
    grid.sort_by_key(|ix| (ix.num_states, ix.mixture_size));
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dominating_log_density, quadrature};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constraints(n: usize, m: usize) -> Arc<Constraints> {
        Constraints::new(n, &ModelConfig::default(), m).unwrap()
    }

    #[test]
    fn constraint_snapshot_values() {
        let c = constraints(1000, 4);
        assert!((c.transition_floor - 1.0 / (1000f64).ln()).abs() < 1e-15);
        assert!((c.floor_weight - 1e-6).abs() < 1e-18);
        assert_eq!(c.loc_min, -1000.0);
        assert_eq!(c.loc_max, 1000.0);
        assert_eq!(c.scale_min, 0.25);
        assert_eq!(c.scale_max, 1.0);
        assert!((c.envelope_bound - 5.0 * (1000f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn transition_floor_is_clamped_at_small_n() {
        // 1/ln(10) = 0.434 exceeds the ergodicity cap exp(-1)
        let c = constraints(10, 1);
        assert_eq!(c.transition_floor, MAX_TRANSITION_FLOOR);
        let c = constraints(100, 1);
        assert!((c.transition_floor - 1.0 / (100f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn wide_scale_mode_changes_range_and_envelope_bound() {
        let cfg = ModelConfig {
            wide_scales: true,
            ..ModelConfig::default()
        };
        let c = Constraints::new(100, &cfg, 3).unwrap();
        assert_eq!(c.scale_min, 0.01);
        assert_eq!(c.scale_max, 100.0);
        assert!((c.envelope_bound - 6.0 * (100f64).ln()).abs() < 1e-12);
    }

    fn single_component(n: usize, mu: f64, s: f64) -> EmissionMixture {
        EmissionMixture::new(vec![1.0], vec![mu], vec![s], constraints(n, 1)).unwrap()
    }

    #[test]
    fn emission_density_hand_composed_value() {
        // w = (1), mu = 0, s = 1, p = 2, floor = 100^-2 = 1e-4, y = 0:
        // gamma(0) = 1e-4 + (1 - 1e-4) * pi * psi(0), psi(0) = 1/sqrt(pi).
        let mix = single_component(100, 0.0, 1.0);
        let pi = std::f64::consts::PI;
        let expect = (1e-4 + (1.0 - 1e-4) * pi * (1.0 / pi.sqrt())).ln();
        let got = mix.log_density(0.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn emission_density_tail_hits_the_floor() {
        let mix = single_component(100, 0.0, 1.0);
        let ln_floor = 1e-4f64.ln();
        let got = mix.log_density(90.0);
        assert!((got - ln_floor).abs() < 1e-6, "{got} vs {ln_floor}");
        assert!(got >= ln_floor);
    }

    #[test]
    fn emission_density_never_below_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = constraints(50, 3);
        let ln_floor = c.floor_weight.ln();
        for _ in 0..20 {
            let mix = EmissionMixture::random(&c, &mut rng);
            for _ in 0..50 {
                let y: f64 = rng.gen_range(-200.0..200.0);
                assert!(mix.log_density(y) >= ln_floor);
            }
        }
    }

    #[test]
    fn emission_density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = constraints(20, 2);
        for _ in 0..50 {
            let mix = EmissionMixture::random(&c, &mut rng);
            // density w.r.t. the dominating measure, integrated against it;
            // the floor's Cauchy tail needs a wide range
            let mass = quadrature::integrate(
                |y| (mix.log_density(y) + dominating_log_density(y)).exp(),
                -20_000.0,
                20_000.0,
                1e-8,
            )
            .unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        }
    }

    #[test]
    fn emission_mixture_rejects_constraint_violations() {
        let c = constraints(100, 2);
        // weights off the simplex
        assert!(EmissionMixture::new(
            vec![0.6, 0.6],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            c.clone()
        )
        .is_err());
        // location outside [-n, n]
        assert!(EmissionMixture::new(
            vec![0.5, 0.5],
            vec![0.0, 101.0],
            vec![1.0, 1.0],
            c.clone()
        )
        .is_err());
        // scale below 1/M
        assert!(EmissionMixture::new(
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            vec![0.4, 1.0],
            c.clone()
        )
        .is_err());
        // wrong component count
        assert!(EmissionMixture::new(vec![1.0], vec![0.0], vec![1.0], c).is_err());
    }

    #[test]
    fn emission_mixture_survives_a_serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mix = EmissionMixture::random(&constraints(50, 3), &mut rng);
        let json = serde_json::to_string(&mix).unwrap();
        let back: EmissionMixture = serde_json::from_str(&json).unwrap();
        for y in [-3.0, 0.0, 7.5] {
            assert_eq!(mix.log_density(y), back.log_density(y));
        }
    }

    #[test]
    fn envelope_single_state_equals_emission() {
        let mix = single_component(100, 1.0, 1.0);
        let e = [mix];
        for y in [-2.0, 0.0, 3.3] {
            let env = emission_log_envelope(&e, y).unwrap();
            assert!((env - e[0].log_density(y)).abs() < 1e-14);
        }
    }

    #[test]
    fn envelope_bounds_hold_on_scan_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [10usize, 100, 1000] {
            let m = 2.min(n / 2);
            let c = constraints(n, m);
            let lo = -2.0 * (n as f64).ln();
            let hi = 5.0 * (n as f64).ln();
            for _ in 0..10 {
                let emissions: Vec<EmissionMixture> = (0..2)
                    .map(|_| EmissionMixture::random(&c, &mut rng))
                    .collect();
                for y in envelope_scan_points(n, &emissions) {
                    let b = emission_log_envelope(&emissions, y).unwrap();
                    assert!(b >= lo, "n={n}: envelope {b} below {lo}");
                    assert!(b <= hi, "n={n}: envelope {b} above {hi}");
                }
            }
        }
    }

    #[test]
    fn projection_leaves_feasible_rows_unchanged() {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let out = project_transition(&q, 0.2).unwrap();
        assert_eq!(q, out);
    }

    #[test]
    fn projection_hand_applied_mixing_rule() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let out = project_transition(&q, 0.1).unwrap();
        assert!((out[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((out[(0, 1)] - 0.1).abs() < 1e-15);
        assert_eq!(out[(1, 0)], 0.5);
    }

    #[test]
    fn projection_uniform_row_is_fixed_point() {
        for floor in [0.0, 0.1, 0.25, 0.5] {
            let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
            let out = project_transition(&q, floor).unwrap();
            assert_eq!(q, out);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let k = rng.gen_range(1..=5usize);
            let raw = DMatrix::from_fn(k, k, |_, _| rng.gen_range(0.0..1.0f64));
            let floor = rng.gen_range(0.0..1.0 / k as f64);
            let once = match project_transition(&raw, floor) {
                Ok(m) => m,
                // a row of k zeros has no mass; skip
                Err(_) => continue,
            };
            let twice = project_transition(&once, floor).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
            let min = once.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= floor - 1e-14);
            for x in 0..k {
                let s: f64 = once.row(x).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_rejects_infeasible_floor() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            project_transition(&q, 0.6),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn probability_floor_projection_matches_row_rule() {
        let v = DVector::from_row_slice(&[1.0, 0.0]);
        let out = project_probability_floor(&v, 0.1).unwrap();
        assert!((out[0] - 0.9).abs() < 1e-15 && (out[1] - 0.1).abs() < 1e-15);
    }

    fn index(n: usize, k: usize, m: usize) -> ModelIndex {
        ModelIndex {
            num_states: k,
            mixture_size: m,
            constraints: constraints(n, m),
        }
    }

    #[test]
    fn penalty_formula_evaluation() {
        let cfg = PenaltyConfig::paper_faithful();
        let got = penalty(&index(1000, 2, 3), &cfg);
        let expect = 10.0 * (1000f64).ln().powi(15) / 1000.0;
        assert!(((got - expect) / expect).abs() < 1e-14);
        // smallest model
        let cfg = PenaltyConfig {
            c_pen: 0.3,
            log_exponent: 2.0,
        };
        let got = penalty(&index(1000, 1, 1), &cfg);
        let expect = 2.0 * 0.3 * (1000f64).ln().powi(2) / 1000.0;
        assert!(((got - expect) / expect).abs() < 1e-14);
    }

    #[test]
    fn penalty_is_increasing_in_each_coordinate() {
        let cfg = PenaltyConfig::default();
        for k in 1..5 {
            for m in 1..5 {
                let base = penalty(&index(500, k, m), &cfg);
                assert!(penalty(&index(500, k + 1, m), &cfg) > base);
                assert!(penalty(&index(500, k, m + 1), &cfg) > base);
            }
        }
    }

    #[test]
    fn grid_state_bound_follows_sample_size() {
        let cfg = ModelConfig::default();
        let caps = GridCaps {
            max_states: None,
            max_mixture: Some(2),
        };
        let grid = model_grid(5000, &cfg, &caps).unwrap();
        // ln(5000)/2 = 4.26, so states run 1..=4 with two mixture sizes each
        let max_k = grid.iter().map(|ix| ix.num_states).max().unwrap();
        assert_eq!(max_k, 4);
        assert_eq!(grid.len(), 8);
    }

    #[test]
    fn grid_is_empty_for_tiny_samples() {
        let cfg = ModelConfig::default();
        assert!(matches!(
            model_grid(3, &cfg, &GridCaps::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn grid_ordering_is_deterministic() {
        let cfg = ModelConfig::default();
        let caps = GridCaps {
            max_states: Some(3),
            max_mixture: Some(3),
        };
        let a = model_grid(2000, &cfg, &caps).unwrap();
        let b = model_grid(2000, &cfg, &caps).unwrap();
        let key = |g: &[ModelIndex]| -> Vec<(usize, usize)> {
            g.iter()
                .map(|ix| (ix.num_states, ix.mixture_size))
                .collect()
        };
        assert_eq!(key(&a), key(&b));
        let mut sorted = key(&a);
        sorted.sort();
        assert_eq!(key(&a), sorted);
    }

    #[test]
    fn model_dimension_formula() {
        assert_eq!(index(100, 2, 3).model_dimension(), 2 * 3 * 2 + 4 - 1);
        assert_eq!(index(100, 1, 1).model_dimension(), 2);
    }

    #[test]
    fn sampled_observations_match_component_moments() {
        // single kernel, p = 2: the kernel part has variance s^2/2
        let mix = single_component(1000, 2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 50_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut used = 0usize;
        for _ in 0..n {
            let y = mix.sample_observation(&mut rng);
            // floor draws are Cauchy; exclude the far tail so moments exist
            if (y - 2.0).abs() < 20.0 {
                sum += y;
                sum2 += y * y;
                used += 1;
            }
        }
        let mean = sum / used as f64;
        let var = sum2 / used as f64 - mean * mean;
        assert!((mean - 2.0).abs() < 3.0 * (0.5f64 / used as f64).sqrt() + 1e-3);
        assert!((var - 0.5).abs() < 0.02, "var {var}");
    }
}
