//! Finitely supported probability measures on the real line and the
//! operations the Bellman maps are built from: Diracs, mixtures, affine
//! pushforwards, Wasserstein distances, Cramér projection, stochastic
//! dominance and KL divergence.

mod atomic;
mod categorical;
mod metrics;

use std::borrow::Cow;
use std::fmt::Debug;

pub use atomic::{AtomicDistribution, MERGE_TOL, WEIGHT_TOL};
pub use categorical::{cramer_project, kl_divergence, CategoricalDistribution, DiracSplit, Grid};
pub use metrics::{stochastically_dominates, wasserstein, wasserstein_between, DOMINANCE_TOL};

pub(crate) use atomic::check_discount;

use crate::error::{Error, Result};

/// Anything with a finite atomic representation and a mean.
pub trait ReturnDistribution: Clone + Debug + Send + Sync {
    fn mean(&self) -> f64;

    fn as_atomic(&self) -> Cow<'_, AtomicDistribution>;

    /// Number of atoms carrying positive mass.
    fn atom_count(&self) -> usize;
}

/// One distribution per `(state, action)` pair, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionCollection<D> {
    n_states: usize,
    n_actions: usize,
    entries: Vec<D>,
}

pub type AtomicCollection = DistributionCollection<AtomicDistribution>;
pub type CategoricalCollection = DistributionCollection<CategoricalDistribution>;

impl<D> DistributionCollection<D> {
    pub fn new(n_states: usize, n_actions: usize, entries: Vec<D>) -> Result<Self> {
        if entries.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for {} states x {} actions",
                entries.len(),
                n_states,
                n_actions
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            entries,
        })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> D) -> Self {
        let mut entries = Vec::with_capacity(n_states * n_actions);
        for x in 0..n_states {
            for a in 0..n_actions {
                entries.push(f(x, a));
            }
        }
        Self {
            n_states,
            n_actions,
            entries,
        }
    }

    pub fn filled(n_states: usize, n_actions: usize, value: D) -> Self
    where
        D: Clone,
    {
        Self {
            n_states,
            n_actions,
            entries: vec![value; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> &D {
        &self.entries[state * self.n_actions + action]
    }

    pub fn get_mut(&mut self, state: usize, action: usize) -> &mut D {
        &mut self.entries[state * self.n_actions + action]
    }

    pub fn entries(&self) -> &[D] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<D> {
        self.entries
    }

    /// `((state, action), entry)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &D)> + '_ {
        let na = self.n_actions;
        self.entries.iter().enumerate().map(move |(i, d)| ((i / na, i % na), d))
    }

    pub fn map<E>(&self, f: impl FnMut(&D) -> E) -> DistributionCollection<E> {
        DistributionCollection {
            n_states: self.n_states,
            n_actions: self.n_actions,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub(crate) fn same_shape<E>(&self, other: &DistributionCollection<E>) -> Result<()> {
        if self.n_states == other.n_states && self.n_actions == other.n_actions {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "collections over {}x{} and {}x{}",
                self.n_states, self.n_actions, other.n_states, other.n_actions
            )))
        }
    }
}

impl<D: ReturnDistribution> DistributionCollection<D> {
    /// Entrywise means, row-major.
    pub fn means(&self) -> Vec<f64> {
        self.entries.iter().map(ReturnDistribution::mean).collect()
    }

    pub fn total_atoms(&self) -> usize {
        self.entries.iter().map(ReturnDistribution::atom_count).sum()
    }

    pub fn max_atoms(&self) -> usize {
        self.entries
            .iter()
            .map(ReturnDistribution::atom_count)
            .max()
            .unwrap_or(0)
    }

    pub fn to_atomic(&self) -> AtomicCollection {
        self.map(|d| d.as_atomic().into_owned())
    }
}

impl CategoricalCollection {
    pub fn grid(&self) -> &Grid {
        self.entries[0].grid()
    }
}

/// `max_{(x,a)} W_p(mu1(x,a), mu2(x,a))`.
pub fn sup_wasserstein<A, B>(
    mu1: &DistributionCollection<A>,
    mu2: &DistributionCollection<B>,
    p: f64,
) -> Result<f64>
where
    A: ReturnDistribution,
    B: ReturnDistribution,
{
    metrics::check_order(p)?;
    mu1.same_shape(mu2)?;
    Ok(mu1
        .entries
        .iter()
        .zip(&mu2.entries)
        .map(|(a, b)| metrics::wasserstein_unchecked(&a.as_atomic(), &b.as_atomic(), p))
        .fold(0.0, f64::max))
}

/// `W̄_1` between collections on a common grid, using the CDF-area formula.
pub fn sup_w1_categorical(mu1: &CategoricalCollection, mu2: &CategoricalCollection) -> Result<f64> {
    mu1.same_shape(mu2)?;
    let mut worst = 0.0_f64;
    for (a, b) in mu1.entries.iter().zip(&mu2.entries) {
        worst = worst.max(a.w1_same_grid(b)?);
    }
    Ok(worst)
}

/// Entrywise Cramér projection.
pub fn project_collection<D: ReturnDistribution>(
    mu: &DistributionCollection<D>,
    grid: &Grid,
) -> CategoricalCollection {
    mu.map(|d| cramer_project(&d.as_atomic(), grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac(z: f64) -> AtomicDistribution {
        AtomicDistribution::dirac(z).unwrap()
    }

    #[test]
    fn collection_shape_checks() {
        assert!(AtomicCollection::new(2, 2, vec![dirac(0.0); 3]).is_err());
        let c = AtomicCollection::new(2, 2, vec![dirac(0.0); 4]).unwrap();
        assert_eq!(c.get(1, 1), &dirac(0.0));
        let keys: Vec<_> = c.iter().map(|(k, _)| k).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn sup_wasserstein_examples() {
        let a = AtomicCollection::filled(2, 2, dirac(0.0));
        assert_eq!(sup_wasserstein(&a, &a, 1.0).unwrap(), 0.0);
        let mut b = a.clone();
        *b.get_mut(1, 0) = dirac(1.0);
        assert_eq!(sup_wasserstein(&a, &b, 1.0).unwrap(), 1.0);
        let c = AtomicCollection::filled(3, 2, dirac(0.0));
        assert!(sup_wasserstein(&a, &c, 1.0).is_err());
        assert!(sup_wasserstein(&a, &b, 0.0).is_err());
    }

    #[test]
    fn categorical_sup_w1_agrees_with_generic() {
        let g = Grid::new(vec![0.0, 1.9, 2.1, 10.0]).unwrap();
        let a = CategoricalCollection::from_fn(2, 2, |x, a| {
            CategoricalDistribution::projected_dirac(g.clone(), (x * 3 + a) as f64)
        });
        let b = CategoricalCollection::from_fn(2, 2, |x, a| {
            CategoricalDistribution::projected_dirac(g.clone(), 7.0 - (x + a) as f64 * 1.3)
        });
        let fast = sup_w1_categorical(&a, &b).unwrap();
        let slow = sup_wasserstein(&a, &b, 1.0).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}
