//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)] // not every test target uses every helper

use std::sync::Arc;

use hmmsel::hmm::HmmParams;
use hmmsel::model::{project_transition, Constraints, EmissionMixture, ModelConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A random model drawn from the constraint set: floored transitions and
/// initial distribution, feasible mixtures.
pub fn random_floored_model(
    n: usize,
    num_states: usize,
    mixture_size: usize,
    rng: &mut ChaCha8Rng,
) -> HmmParams<EmissionMixture> {
    let constraints = Constraints::new(n, &ModelConfig::default(), mixture_size).unwrap();
    random_model_in(&constraints, num_states, rng)
}

pub fn random_model_in(
    constraints: &Arc<Constraints>,
    num_states: usize,
    rng: &mut ChaCha8Rng,
) -> HmmParams<EmissionMixture> {
    let k = num_states;
    let floor = constraints.transition_floor;
    let raw = DMatrix::from_fn(k, k, |_, _| rng.gen_range(0.02..1.0f64));
    let trans = project_transition(&raw, floor).unwrap();
    let raw_pi = DVector::from_fn(k, |_, _| rng.gen_range(0.02..1.0f64));
    let pi = hmmsel::model::project_probability_floor(&raw_pi, floor).unwrap();
    let emissions: Vec<EmissionMixture> = (0..k)
        .map(|_| EmissionMixture::random(constraints, rng))
        .collect();
    HmmParams::new(pi, trans, emissions).unwrap()
}

/// A two-state model with well-separated unit-scale emissions, feasible for
/// the constraint snapshot of `n`.
pub fn two_state_model(n: usize, sep: f64) -> HmmParams<EmissionMixture> {
    let constraints = Constraints::new(n, &ModelConfig::default(), 1).unwrap();
    let mix = |loc: f64| {
        EmissionMixture::new(vec![1.0], vec![loc], vec![1.0], Arc::clone(&constraints)).unwrap()
    };
    HmmParams::new(
        DVector::from_row_slice(&[0.5, 0.5]),
        DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]),
        vec![mix(-sep), mix(sep)],
    )
    .unwrap()
}

/// Max-norm distance between two transition matrices after the best hidden
/// state relabeling of the second one.
pub fn aligned_transition_distance(
    reference: &DMatrix<f64>,
    candidate: &HmmParams<EmissionMixture>,
) -> f64 {
    let k = reference.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    // k <= 4 here, so plain permutation enumeration is fine
    permute(&mut perm, 0, &mut |p: &[usize]| {
        let relabeled = candidate.permuted(p).unwrap();
        let d = (relabeled.transitions() - reference)
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        best = best.min(d);
    });
    best
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
