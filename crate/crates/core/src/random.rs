//! Seeded random instances for property checks.
//!
//! Kernel rows are Dirichlet(1, ..., 1), drawn as normalized Exp(1)
//! variables; rewards are uniform on `[-1, 1]`; the discount is 0.5 or 0.9
//! with equal probability.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::distributions::{
    AtomicCollection, AtomicDistribution, CategoricalDistribution, Grid, MERGE_TOL,
};
use crate::mdp::{Policy, TabularMdp};
use crate::operators::QFunction;

/// A probability vector drawn from the flat Dirichlet distribution.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularMdp {
    let gamma = if rng.random::<bool>() { 0.5 } else { 0.9 };
    let mut kernel = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        kernel.extend(dirichlet(rng, n_states));
    }
    let reward = (0..kernel.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    TabularMdp::new(n_states, n_actions, gamma, kernel, reward).expect("random mdp is valid")
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
    let probs = (0..n_states).flat_map(|_| dirichlet(rng, n_actions)).collect();
    Policy::new(n_states, n_actions, probs).expect("dirichlet rows")
}

/// Between 1 and `max_atoms` atoms uniform on `[lo, hi]`.
pub fn random_atomic<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize, lo: f64, hi: f64) -> AtomicDistribution {
    let n = rng.random_range(1..=max_atoms.max(1));
    let atoms = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    AtomicDistribution::new(atoms, dirichlet(rng, n)).expect("valid random distribution")
}

pub fn random_collection<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    max_atoms: usize,
    lo: f64,
    hi: f64,
) -> AtomicCollection {
    AtomicCollection::from_fn(n_states, n_actions, |_, _| random_atomic(rng, max_atoms, lo, hi))
}

pub fn random_categorical<R: Rng + ?Sized>(rng: &mut R, grid: &Grid) -> CategoricalDistribution {
    CategoricalDistribution::new(grid.clone(), dirichlet(rng, grid.len())).expect("dirichlet probabilities")
}

/// `k` sorted points in `[lo, hi]` with gaps well above the merge tolerance.
pub fn random_grid<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: f64, hi: f64) -> Grid {
    loop {
        let mut pts: Vec<f64> = (0..k).map(|_| rng.random_range(lo..=hi)).collect();
        pts.sort_by(f64::total_cmp);
        if pts.windows(2).all(|w| w[1] - w[0] > 1e3 * MERGE_TOL) {
            return Grid::new(pts).expect("strictly increasing");
        }
    }
}

pub fn random_q<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, scale: f64) -> QFunction {
    let values = (0..n_states * n_actions).map(|_| rng.random_range(-scale..=scale)).collect();
    QFunction::new(n_states, n_actions, values).expect("finite values")
}
