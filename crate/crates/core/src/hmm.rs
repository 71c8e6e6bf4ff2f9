//! Finite-state HMM parameter containers, log-domain forward filtering,
//! sampling, stationary distributions and windowed conditional log-densities.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-10;

/// Log-density evaluator of one emission distribution, taken with respect to
/// the dominating measure shared by the whole experiment.
pub trait EmissionDensity: Send + Sync {
    fn log_density(&self, y: f64) -> f64;
}

/// An emission that can also be sampled (observation on the real line).
pub trait EmissionSampler: EmissionDensity {
    fn sample_observation(&self, rng: &mut dyn RngCore) -> f64;
}

/// Parameters of a finite-state HMM: initial distribution, transition matrix
/// and one emission per state.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmParams<E> {
    pi: DVector<f64>,
    trans: DMatrix<f64>,
    emissions: Vec<E>,
}

fn check_prob_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::usage(format!("{what} has a negative or NaN entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::usage(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl<E> HmmParams<E> {
    pub fn new(pi: DVector<f64>, trans: DMatrix<f64>, emissions: Vec<E>) -> Result<Self> {
        let k = emissions.len();
        if k == 0 {
            return Err(Error::usage("an HMM needs at least one state"));
        }
        if pi.len() != k || trans.nrows() != k || trans.ncols() != k {
            return Err(Error::usage(format!(
                "inconsistent dimensions: pi {}, transitions {}x{}, {} emissions",
                pi.len(),
                trans.nrows(),
                trans.ncols(),
                k
            )));
        }
        check_prob_vector(&pi, "initial distribution")?;
        for x in 0..k {
            check_prob_vector(&trans.row(x).transpose(), &format!("transition row {x}"))?;
        }
        Ok(Self { pi, trans, emissions })
    }

    pub fn num_states(&self) -> usize {
        self.emissions.len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.trans
    }

    pub fn emissions(&self) -> &[E] {
        &self.emissions
    }

    /// Smallest entry across the transition matrix and initial distribution.
    pub fn min_probability(&self) -> f64 {
        let tmin = self.trans.iter().cloned().fold(f64::INFINITY, f64::min);
        let pmin = self.pi.iter().cloned().fold(f64::INFINITY, f64::min);
        tmin.min(pmin)
    }

    /// Relabels hidden states: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self>
    where
        E: Clone,
    {
        let k = self.num_states();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::usage("invalid state permutation"));
        }
        let pi = DVector::from_fn(k, |i, _| self.pi[perm[i]]);
        let trans = DMatrix::from_fn(k, k, |i, j| self.trans[(perm[i], perm[j])]);
        let emissions = perm.iter().map(|&p| self.emissions[p].clone()).collect();
        Ok(Self { pi, trans, emissions })
    }
}

impl<E: EmissionDensity> HmmParams<E> {
    /// Log-likelihood of the observation sequence under these parameters,
    /// computed by the normalized forward recursion.
    ///
    /// Returns `-inf` (not an error) when some step assigns zero likelihood
    /// to every state, so that an optimizer can still rank such parameters.
    pub fn log_likelihood(&self, ys: &[f64]) -> Result<f64> {
        self.log_likelihood_with_initial(&self.pi, ys)
    }

    /// Same as [`Self::log_likelihood`] but with the hidden chain initialized
    /// from `initial` instead of the stored initial distribution.
    pub fn log_likelihood_with_initial(&self, initial: &DVector<f64>, ys: &[f64]) -> Result<f64> {
        if ys.is_empty() {
            return Err(Error::usage("log-likelihood of an empty sequence"));
        }
        check_prob_vector(initial, "initial distribution")?;
        let mut filter = Filter::with_initial(self, initial.clone());
        let mut total = 0.0;
        for &y in ys {
            total += filter.step(y);
        }
        Ok(total)
    }

    /// Runs the forward filter over the whole sequence, returning the state
    /// of the filter *before* incorporating each observation.
    pub fn run_filter(&self, ys: &[f64]) -> Result<Vec<FilterState>> {
        if ys.is_empty() {
            return Err(Error::usage("cannot filter an empty sequence"));
        }
        let mut filter = Filter::new(self);
        let mut out = Vec::with_capacity(ys.len());
        for &y in ys {
            out.push(filter.state());
            filter.step(y);
        }
        Ok(out)
    }

    /// Log-density of the last window observation given the earlier ones,
    /// with the hidden chain initialized at `mu` at the window start:
    /// computed as the difference of two forward passes over the window.
    ///
    /// `window` holds `k + 1` observations (the conditioning block plus the
    /// predicted one), `k >= 1`.
    pub fn windowed_conditional_log_density(
        &self,
        window: &[f64],
        mu: &DVector<f64>,
    ) -> Result<f64> {
        if window.len() < 2 {
            return Err(Error::usage(
                "windowed conditional log-density needs at least two observations",
            ));
        }
        let full = self.log_likelihood_with_initial(mu, window)?;
        let prefix = self.log_likelihood_with_initial(mu, &window[..window.len() - 1])?;
        Ok(full - prefix)
    }
}

impl<E: EmissionSampler> HmmParams<E> {
    /// Samples a hidden path and observations of length `n`. Deterministic
    /// for a fixed RNG state.
    pub fn sample_path(&self, n: usize, rng: &mut dyn RngCore) -> Result<(Vec<usize>, Vec<f64>)> {
        if n == 0 {
            return Err(Error::usage("cannot sample an empty path"));
        }
        let init = CategoricalSampler::new(self.pi.iter().cloned())?;
        let rows: Vec<CategoricalSampler> = (0..self.num_states())
            .map(|x| CategoricalSampler::new(self.trans.row(x).iter().cloned()))
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        let mut x = init.sample_index(rng);
        for t in 0..n {
            if t > 0 {
                x = rows[x].sample_index(rng);
            }
            states.push(x);
            obs.push(self.emissions[x].sample_observation(rng));
        }
        Ok((states, obs))
    }
}

/// Inverse-CDF sampling from a fixed probability vector.
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(weights: impl Iterator<Item = f64>) -> Result<Self> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = weights
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if cdf.is_empty() || !(acc > 0.0) {
            return Err(Error::usage("categorical sampler needs positive total mass"));
        }
        Ok(Self { cdf })
    }

    pub fn sample_index(&self, rng: &mut dyn RngCore) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rand::distributions::Uniform::new(0.0, total).sample(rng);
        match self.cdf.iter().position(|&c| u < c) {
            Some(i) => i,
            None => self.cdf.len() - 1,
        }
    }
}

/// Snapshot of the forward filter before an observation is incorporated.
#[derive(Debug, Clone)]
pub struct FilterState {
    /// log p(X_t = . | Y_1^{t-1})
    pub log_predictor: Vec<f64>,
    /// running log p(Y_1^{t-1})
    pub log_likelihood_so_far: f64,
}

impl FilterState {
    pub fn predictor(&self) -> Vec<f64> {
        self.log_predictor.iter().map(|&v| v.exp()).collect()
    }
}

/// Streaming forward filter with per-step normalization.
///
/// The predictor is kept in linear space (it is a probability vector, so the
/// transition-floor envelope is directly visible) and only the running
/// likelihood lives in log space.
pub struct Filter<'a, E> {
    params: &'a HmmParams<E>,
    predictor: DVector<f64>,
    scratch: DVector<f64>,
    log_likelihood: f64,
}

impl<'a, E: EmissionDensity> Filter<'a, E> {
    pub fn new(params: &'a HmmParams<E>) -> Self {
        Self::with_initial(params, params.pi.clone())
    }

    pub fn with_initial(params: &'a HmmParams<E>, initial: DVector<f64>) -> Self {
        let k = params.num_states();
        Self {
            params,
            predictor: initial,
            scratch: DVector::zeros(k),
            log_likelihood: 0.0,
        }
    }

    /// Predictor p(X_t = . | Y_1^{t-1}) in linear space.
    pub fn predictor(&self) -> &DVector<f64> {
        &self.predictor
    }

    pub fn log_likelihood_so_far(&self) -> f64 {
        self.log_likelihood
    }

    pub fn state(&self) -> FilterState {
        FilterState {
            log_predictor: self.predictor.iter().map(|&p| p.ln()).collect(),
            log_likelihood_so_far: self.log_likelihood,
        }
    }

    /// Incorporates one observation; returns log p(y_t | Y_1^{t-1}).
    ///
    /// When every state with predictor mass assigns zero density to `y`, the
    /// step contributes `-inf` to the likelihood and the observation is
    /// otherwise ignored, so the filter can keep running.
    pub fn step(&mut self, y: f64) -> f64 {
        let k = self.params.num_states();
        // max emission log-density over states that carry predictor mass
        let mut shift = f64::NEG_INFINITY;
        for x in 0..k {
            if self.predictor[x] > 0.0 {
                let g = self.params.emissions[x].log_density(y);
                self.scratch[x] = g;
                shift = shift.max(g);
            } else {
                self.scratch[x] = f64::NEG_INFINITY;
            }
        }
        if shift == f64::NEG_INFINITY {
            self.log_likelihood = f64::NEG_INFINITY;
            self.advance_with_posterior_equal_predictor();
            return f64::NEG_INFINITY;
        }
        let mut norm = 0.0;
        for x in 0..k {
            let w = if self.predictor[x] > 0.0 {
                self.predictor[x] * (self.scratch[x] - shift).exp()
            } else {
                0.0
            };
            self.scratch[x] = w;
            norm += w;
        }
        if norm == 0.0 {
            self.log_likelihood = f64::NEG_INFINITY;
            self.advance_with_posterior_equal_predictor();
            return f64::NEG_INFINITY;
        }
        let log_cond = shift + norm.ln();
        self.log_likelihood += log_cond;
        // posterior in scratch, then predictor <- posterior^T Q
        self.scratch /= norm;
        self.params.trans.tr_mul_to(&self.scratch, &mut self.predictor);
        log_cond
    }

    fn advance_with_posterior_equal_predictor(&mut self) {
        self.scratch.copy_from(&self.predictor);
        self.params.trans.tr_mul_to(&self.scratch, &mut self.predictor);
    }
}

/// Stationary distribution of a row-stochastic matrix via a linear solve.
///
/// Requires irreducibility (guaranteed when the minimum entry is positive).
/// The residual `max |mu Q - mu|` is checked against 1e-10.
pub fn stationary_distribution(trans: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = trans.nrows();
    if k == 0 || trans.ncols() != k {
        return Err(Error::usage("stationary distribution needs a square matrix"));
    }
    // mu (Q - I) = 0 with the normalization sum(mu) = 1 replacing one equation
    let mut a = trans.transpose() - DMatrix::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::numerical("singular balance system (reducible chain?)"))?;
    let mut mu: DVector<f64> = mu.map(|x| x.max(0.0));
    let total: f64 = mu.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical("stationary solve produced no mass"));
    }
    mu /= total;
    let residual = (trans.tr_mul(&mu) - &mu)
        .iter()
        .fold(0.0f64, |m, &r| m.max(r.abs()));
    if residual > 1e-10 {
        return Err(Error::numerical(format!(
            "stationary residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok(mu)
}

/// Geometric filter-forgetting rate for a transition floor:
/// `rho = 1 - floor / (1 - floor)`.
pub fn forgetting_rate(transition_floor: f64) -> f64 {
    1.0 - transition_floor / (1.0 - transition_floor)
}

/// Uniform bound on the gap between windowed conditional log-densities with
/// windows of lengths at least `k_min`: `rho^(k_min - 1) / (1 - rho)`.
pub fn forgetting_gap_bound(transition_floor: f64, k_min: usize) -> f64 {
    let rho = forgetting_rate(transition_floor);
    rho.powi(k_min as i32 - 1) / (1.0 - rho)
}


#[cfg(test)]
mod tests {
    use super::test_emissions::Gaussian;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state(q: [[f64; 2]; 2], pi: [f64; 2]) -> HmmParams<Gaussian> {
        HmmParams::new(
            DVector::from_row_slice(&pi),
            DMatrix::from_row_slice(2, 2, &[q[0][0], q[0][1], q[1][0], q[1][1]]),
            vec![
                Gaussian { mean: -1.0, sd: 0.6 },
                Gaussian { mean: 2.0, sd: 1.1 },
            ],
        )
        .unwrap()
    }

    /// Brute-force path-sum log-likelihood, independent of the filter:
    /// log sum over x_1^n of pi(x_1) prod Q prod gamma, via shifted sums.
    pub fn path_sum_log_likelihood<E: EmissionDensity>(hmm: &HmmParams<E>, ys: &[f64]) -> f64 {
        let k = hmm.num_states();
        let n = ys.len();
        let mut log_terms = Vec::new();
        let mut path = vec![0usize; n];
        loop {
            let mut lp = hmm.initial()[path[0]].ln() + hmm.emissions()[path[0]].log_density(ys[0]);
            for t in 1..n {
                lp += hmm.transitions()[(path[t - 1], path[t])].ln()
                    + hmm.emissions()[path[t]].log_density(ys[t]);
            }
            log_terms.push(lp);
            // odometer increment over [K]^n
            let mut t = 0;
            loop {
                if t == n {
                    let shift = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if shift == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    let s: f64 = log_terms.iter().map(|&v| (v - shift).exp()).sum();
                    return shift + s.ln();
                }
                path[t] += 1;
                if path[t] < k {
                    break;
                }
                path[t] = 0;
                t += 1;
            }
        }
    }

    #[test]
    fn stationary_uniform_two_state() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let mu = stationary_distribution(&q).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-12 && (mu[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_hand_solved_two_state() {
        // balance equations for [[0.9, 0.1], [0.2, 0.8]] give (2/3, 1/3)
        let q = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let mu = stationary_distribution(&q).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mu[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_symmetric_perturbation_is_uniform() {
        for eps in [1e-6, 0.01, 0.3, 0.9, 0.999] {
            let q = DMatrix::from_row_slice(2, 2, &[1.0 - eps, eps, eps, 1.0 - eps]);
            let mu = stationary_distribution(&q).unwrap();
            assert!((mu[0] - 0.5).abs() < 1e-10, "eps={eps}");
        }
    }

    #[test]
    fn stationary_rejects_reducible_chain() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(stationary_distribution(&q).is_err());
    }

    #[test]
    fn sample_path_single_state_is_iid() {
        let hmm = HmmParams::new(
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec![Gaussian { mean: 0.0, sd: 1.0 }],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (states, obs) = hmm.sample_path(50, &mut rng).unwrap();
        assert!(states.iter().all(|&x| x == 0));
        assert_eq!(obs.len(), 50);
    }

    #[test]
    fn sample_path_is_deterministic_for_fixed_seed() {
        let hmm = two_state([[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5]);
        let mut rng1 = ChaCha8Rng::seed_from_u64(42);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let a = hmm.sample_path(200, &mut rng1).unwrap();
        let b = hmm.sample_path(200, &mut rng2).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn sample_path_transition_frequencies_match_law() {
        let q = [[0.7, 0.3], [0.4, 0.6]];
        let hmm = two_state(q, [0.5, 0.5]);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (states, _) = hmm.sample_path(n, &mut rng).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for w in states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for x in 0..2 {
            let total = (counts[x][0] + counts[x][1]) as f64;
            for x2 in 0..2 {
                let p = q[x][x2];
                let freq = counts[x][x2] as f64 / total;
                let se = (p * (1.0 - p) / total).sqrt();
                assert!(
                    (freq - p).abs() < 3.0 * se,
                    "empirical {freq} vs {p} (se {se})"
                );
            }
        }
    }

    #[test]
    fn log_likelihood_single_state_is_emission_sum() {
        let hmm = HmmParams::new(
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec![Gaussian { mean: 0.3, sd: 0.8 }],
        )
        .unwrap();
        let ys = [0.1, -0.4, 2.0, 0.3];
        let expect: f64 = ys.iter().map(|&y| hmm.emissions()[0].log_density(y)).sum();
        let got = hmm.log_likelihood(&ys).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let k = 1 + case % 3;
            let (hmm, ys) = random_instance(k, 2 + case % 7, &mut rng);
            let brute = path_sum_log_likelihood(&hmm, &ys);
            let fast = hmm.log_likelihood(&ys).unwrap();
            let denom = brute.abs().max(1.0);
            assert!(
                ((fast - brute) / denom).abs() < 1e-10,
                "k={k}: {fast} vs {brute}"
            );
        }
    }

    #[test]
    fn log_likelihood_is_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (hmm, ys) = random_instance(3, 8, &mut rng);
        let base = hmm.log_likelihood(&ys).unwrap();
        for perm in [[1usize, 2, 0], [2, 0, 1], [0, 2, 1]] {
            let relabeled = hmm.permuted(&perm).unwrap().log_likelihood(&ys).unwrap();
            assert!((relabeled - base).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_returns_neg_inf_when_all_states_are_impossible() {
        #[derive(Clone)]
        struct Hole;
        impl EmissionDensity for Hole {
            fn log_density(&self, y: f64) -> f64 {
                if y > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
        let hmm = HmmParams::new(
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec![Hole],
        )
        .unwrap();
        let got = hmm.log_likelihood(&[1.0, -1.0, 1.0]).unwrap();
        assert_eq!(got, f64::NEG_INFINITY);
    }

    #[test]
    fn filter_starts_at_initial_distribution() {
        let hmm = two_state([[0.7, 0.3], [0.4, 0.6]], [0.25, 0.75]);
        let states = hmm.run_filter(&[0.0, 1.0, -2.0]).unwrap();
        let first = states[0].predictor();
        assert_eq!(first[0], 0.25);
        assert_eq!(first[1], 0.75);
        assert_eq!(states[0].log_likelihood_so_far, 0.0);
    }

    #[test]
    fn filter_likelihood_matches_log_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (hmm, ys) = random_instance(3, 7, &mut rng);
        let states = hmm.run_filter(&ys).unwrap();
        let mut filter = Filter::new(&hmm);
        let mut last_step = 0.0;
        for &y in &ys {
            last_step = filter.step(y);
        }
        let total = states.last().unwrap().log_likelihood_so_far + last_step;
        let direct = hmm.log_likelihood(&ys).unwrap();
        assert!((total - direct).abs() < 1e-10);
    }

    #[test]
    fn filter_predictor_respects_transition_floor() {
        let floor = 0.1;
        let hmm = two_state([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (_, ys) = hmm.sample_path(500, &mut rng).unwrap();
        let states = hmm.run_filter(&ys).unwrap();
        for (t, st) in states.iter().enumerate().skip(1) {
            for p in st.predictor() {
                assert!(
                    p >= floor - 1e-12 && p <= 1.0 + 1e-12,
                    "t={t}: predictor {p} outside [{floor}, 1]"
                );
            }
        }
    }

    #[test]
    fn filter_predictor_matches_path_enumeration() {
        // p(X_t = x | Y_1^{t-1}) by brute force over paths.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (hmm, ys) = random_instance(3, 6, &mut rng);
        let k = hmm.num_states();
        let states = hmm.run_filter(&ys).unwrap();
        for t in 1..ys.len() {
            // joint weight of (path over 0..t, X_t = x): enumerate prefix paths
            let mut weights = vec![0.0f64; k];
            let mut path = vec![0usize; t];
            'outer: loop {
                let mut lp =
                    hmm.initial()[path[0]].ln() + hmm.emissions()[path[0]].log_density(ys[0]);
                for s in 1..t {
                    lp += hmm.transitions()[(path[s - 1], path[s])].ln()
                        + hmm.emissions()[path[s]].log_density(ys[s]);
                }
                for x in 0..k {
                    weights[x] += (lp + hmm.transitions()[(path[t - 1], x)].ln()).exp();
                }
                let mut s = 0;
                loop {
                    if s == t {
                        break 'outer;
                    }
                    path[s] += 1;
                    if path[s] < k {
                        break;
                    }
                    path[s] = 0;
                    s += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            let predictor = states[t].predictor();
            for x in 0..k {
                assert!(
                    (predictor[x] - weights[x] / total).abs() < 1e-10,
                    "t={t}, x={x}"
                );
            }
        }
    }

    #[test]
    fn windowed_log_density_is_a_likelihood_ratio() {
        let hmm = two_state([[0.8, 0.2], [0.3, 0.7]], [0.5, 0.5]);
        let window = [0.4, -1.0, 2.2, 0.0];
        let mu = DVector::from_row_slice(&[0.9, 0.1]);
        let got = hmm.windowed_conditional_log_density(&window, &mu).unwrap();
        let expect = hmm.log_likelihood_with_initial(&mu, &window).unwrap()
            - hmm
                .log_likelihood_with_initial(&mu, &window[..3])
                .unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn forgetting_rate_formula() {
        let rho = forgetting_rate(0.1);
        assert!((rho - (1.0 - 0.1 / 0.9)).abs() < 1e-15);
        assert!((forgetting_gap_bound(0.1, 1) - 1.0 / (1.0 - rho)).abs() < 1e-12);
    }

    pub fn random_instance(
        k: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (HmmParams<Gaussian>, Vec<f64>) {
        use rand::Rng;
        let mut pi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        let mut q = Vec::with_capacity(k * k);
        for _ in 0..k {
            let mut row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            q.extend(row);
        }
        let emissions: Vec<Gaussian> = (0..k)
            .map(|_| Gaussian {
                mean: rng.gen_range(-3.0..3.0),
                sd: rng.gen_range(0.3..2.0),
            })
            .collect();
        let hmm = HmmParams::new(
            DVector::from_vec(pi),
            DMatrix::from_row_slice(k, k, &q),
            emissions,
        )
        .unwrap();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        (hmm, ys)
    }
}
