//! Bellman-type maps.
//!
//! Scalar operators act on [`QFunction`]s. The distributional ones act on
//! collections of return distributions:
//!
//! * full evaluation / greedy optimality: mix affine pushforwards of every
//!   successor's distribution, so atom counts multiply with each application;
//! * one-step evaluation / optimality: keep only the first transition's
//!   randomness, placing one atom per successor at `r + gamma * V(x')`;
//! * [`Projected`]: any of the above followed by the entrywise Cramér
//!   projection.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{
    cramer_project, AtomicCollection, AtomicDistribution, CategoricalCollection, DistributionCollection, Grid,
    ReturnDistribution,
};
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::par;

/// Actions whose value is within this of the maximum count as tied.
pub const TIE_TOL: f64 = 0.0;

/// Collections with at least this many entries are mapped in parallel.
const PAR_MIN_ENTRIES: usize = 32;

/// State-action values, row-major over `(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n_states} states x {n_actions} actions",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite Q value {v}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    /// Entrywise means of a distribution collection.
    pub fn from_means<D: ReturnDistribution>(mu: &DistributionCollection<D>) -> Self {
        Self {
            n_states: mu.n_states(),
            n_actions: mu.n_actions(),
            values: mu.means(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn max_value(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn policy_value(&self, x: usize, pi: &Policy) -> f64 {
        self.row(x).iter().zip(pi.row(x)).map(|(q, p)| q * p).sum()
    }

    /// `V(x) = max_a Q(x, a)` for every state.
    pub fn greedy_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|x| self.max_value(x)).collect()
    }

    /// `V(x) = sum_a pi(a|x) Q(x, a)` for every state.
    pub fn policy_values(&self, pi: &Policy) -> Vec<f64> {
        (0..self.n_states).map(|x| self.policy_value(x, pi)).collect()
    }

    pub fn sup_distance(&self, other: &QFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn squared_distance(&self, other: &QFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        check_shape(self.n_states, self.n_actions, mdp)
    }
}

fn check_shape(n_states: usize, n_actions: usize, mdp: &TabularMdp) -> Result<()> {
    if n_states != mdp.n_states() || n_actions != mdp.n_actions() {
        return Err(Error::ShapeMismatch(format!(
            "{n_states}x{n_actions} input for an mdp over {}x{}",
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `E[r + gamma V(X')]` for every pair, given state values `v`.
fn backup(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let gamma = mdp.discount();
    (0..mdp.n_pairs())
        .map(|i| {
            let (x, a) = (i / mdp.n_actions(), i % mdp.n_actions());
            mdp.successors(x, a)
                .iter()
                .map(|s| s.prob * (s.reward + gamma * v[s.state]))
                .sum()
        })
        .collect()
}

/// `(T^pi Q)(x,a) = sum_x' P(x'|x,a) [r(x,a,x') + gamma sum_a' pi(a'|x') Q(x',a')]`.
pub fn bellman_eval(q: &QFunction, mdp: &TabularMdp, pi: &Policy) -> Result<QFunction> {
    q.check_shape(mdp)?;
    pi.check_shape(mdp)?;
    let values = backup(mdp, &q.policy_values(pi));
    Ok(QFunction { values, ..*q })
}

/// `(T Q)(x,a) = sum_x' P(x'|x,a) [r(x,a,x') + gamma max_a' Q(x',a')]`.
pub fn bellman_opt(q: &QFunction, mdp: &TabularMdp) -> Result<QFunction> {
    q.check_shape(mdp)?;
    let values = backup(mdp, &q.greedy_values());
    Ok(QFunction { values, ..*q })
}

/// Evaluation of a fixed policy, or control.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Eval(Policy),
    Control,
}

impl Mode {
    /// Continuation value `V(x')` used by one-step targets.
    pub fn state_value(&self, q: &QFunction, x: usize) -> f64 {
        match self {
            Mode::Eval(pi) => q.policy_value(x, pi),
            Mode::Control => q.max_value(x),
        }
    }

    pub fn state_values(&self, q: &QFunction) -> Vec<f64> {
        (0..q.n_states()).map(|x| self.state_value(q, x)).collect()
    }
}

/// How a greedy policy splits probability among tied maximizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// All mass on the first maximizer.
    #[default]
    LowestIndex,
    /// Mass spread evenly over all maximizers.
    UniformMix,
    /// One maximizer per state drawn from a stream seeded with this value.
    Random(u64),
}

/// Actions within [`TIE_TOL`] of the best value in `row`.
pub fn maximizers(row: &[f64]) -> Vec<usize> {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter()
        .enumerate()
        .filter(|(_, &q)| q >= best - TIE_TOL)
        .map(|(a, _)| a)
        .collect()
}

/// Greedy policy with respect to `q`.
pub fn greedy_policy(q: &QFunction, tie_break: TieBreak) -> Policy {
    let na = q.n_actions;
    let mut probs = vec![0.0; q.n_states * na];
    let mut rng = match tie_break {
        TieBreak::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    for x in 0..q.n_states {
        let best = maximizers(q.row(x));
        let row = &mut probs[x * na..(x + 1) * na];
        match tie_break {
            TieBreak::LowestIndex => row[best[0]] = 1.0,
            TieBreak::UniformMix => {
                let share = 1.0 / best.len() as f64;
                for &a in &best {
                    row[a] = share;
                }
            }
            TieBreak::Random(_) => {
                let rng = rng.as_mut().expect("seeded above");
                row[*best.choose(rng).expect("at least one maximizer")] = 1.0;
            }
        }
    }
    Policy::new(q.n_states, na, probs).expect("greedy rows are distributions")
}

fn map_pairs<T, F>(mdp: &TabularMdp, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Send + Sync,
{
    let na = mdp.n_actions();
    let g = |i: usize| f(i / na, i % na);
    if mdp.n_pairs() >= PAR_MIN_ENTRIES {
        par::map_range(mdp.n_pairs(), g)
    } else {
        par::map_range_seq(mdp.n_pairs(), g)
    }
}

fn collection_from(mdp: &TabularMdp, entries: Vec<AtomicDistribution>) -> AtomicCollection {
    AtomicCollection::new(mdp.n_states(), mdp.n_actions(), entries).expect("one entry per pair")
}

/// Full distributional evaluation operator: the mixture over `(x', a')` of
/// `mu(x',a')` pushed through `z -> r(x,a,x') + gamma z`.
pub fn distr_bellman_eval<D: ReturnDistribution>(
    mu: &DistributionCollection<D>,
    mdp: &TabularMdp,
    pi: &Policy,
) -> Result<AtomicCollection> {
    check_shape(mu.n_states(), mu.n_actions(), mdp)?;
    pi.check_shape(mdp)?;
    let gamma = mdp.discount();
    let atomic: Vec<_> = mu.entries().iter().map(|d| d.as_atomic()).collect();
    let na = mdp.n_actions();
    let entries = map_pairs(mdp, |x, a| {
        let mut pairs = Vec::new();
        for s in mdp.successors(x, a) {
            for (b, &pb) in pi.row(s.state).iter().enumerate() {
                if pb > 0.0 {
                    let w = s.prob * pb;
                    pairs.extend(
                        atomic[s.state * na + b]
                            .iter()
                            .map(|(z, v)| (s.reward + gamma * z, w * v)),
                    );
                }
            }
        }
        AtomicDistribution::from_pairs_unchecked(pairs)
    });
    Ok(collection_from(mdp, entries))
}

/// Full distributional optimality operator: evaluation under the greedy
/// policy for the entrywise means of `mu`.
pub fn distr_bellman_opt<D: ReturnDistribution>(
    mu: &DistributionCollection<D>,
    mdp: &TabularMdp,
    tie_break: TieBreak,
) -> Result<AtomicCollection> {
    check_shape(mu.n_states(), mu.n_actions(), mdp)?;
    let pi = greedy_policy(&QFunction::from_means(mu), tie_break);
    distr_bellman_eval(mu, mdp, &pi)
}

/// `sum_x' P(x'|x,a) delta_{r(x,a,x') + gamma v(x')}` for every pair.
pub fn one_step_from_values(mdp: &TabularMdp, v: &[f64]) -> AtomicCollection {
    let gamma = mdp.discount();
    let entries = map_pairs(mdp, |x, a| {
        AtomicDistribution::from_pairs_unchecked(
            mdp.successors(x, a)
                .iter()
                .map(|s| (s.reward + gamma * v[s.state], s.prob))
                .collect(),
        )
    });
    collection_from(mdp, entries)
}

/// One-step evaluation operator: one atom per successor at
/// `r + gamma sum_a' pi(a'|x') mean(mu(x',a'))`.
pub fn os_distr_eval<D: ReturnDistribution>(
    mu: &DistributionCollection<D>,
    mdp: &TabularMdp,
    pi: &Policy,
) -> Result<AtomicCollection> {
    check_shape(mu.n_states(), mu.n_actions(), mdp)?;
    pi.check_shape(mdp)?;
    let v = QFunction::from_means(mu).policy_values(pi);
    Ok(one_step_from_values(mdp, &v))
}

/// One-step optimality operator: one atom per successor at
/// `r + gamma max_a' mean(mu(x',a'))`. No action is selected, so ties are
/// irrelevant.
pub fn os_distr_opt<D: ReturnDistribution>(
    mu: &DistributionCollection<D>,
    mdp: &TabularMdp,
) -> Result<AtomicCollection> {
    check_shape(mu.n_states(), mu.n_actions(), mdp)?;
    let v = QFunction::from_means(mu).greedy_values();
    Ok(one_step_from_values(mdp, &v))
}

/// A map from collections to collections of the same distribution type.
pub trait CollectionOperator: Sync {
    type Dist: ReturnDistribution;

    fn apply(&self, mu: &DistributionCollection<Self::Dist>) -> Result<DistributionCollection<Self::Dist>>;

    /// Known contraction modulus in `W̄_1`, if the operator is a contraction.
    fn contraction_modulus(&self) -> Option<f64>;

    fn name(&self) -> String;

    fn mdp(&self) -> &TabularMdp;
}

/// Operators whose output is atomic whatever the input representation.
pub trait AtomicOperator: Sync {
    fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<AtomicCollection>;

    fn contraction_modulus(&self) -> Option<f64>;

    fn name(&self) -> String;

    fn mdp(&self) -> &TabularMdp;
}

macro_rules! atomic_collection_operator {
    ($t:ident) => {
        impl CollectionOperator for $t<'_> {
            type Dist = AtomicDistribution;

            fn apply(&self, mu: &AtomicCollection) -> Result<AtomicCollection> {
                self.apply_to(mu)
            }

            fn contraction_modulus(&self) -> Option<f64> {
                AtomicOperator::contraction_modulus(self)
            }

            fn name(&self) -> String {
                AtomicOperator::name(self)
            }

            fn mdp(&self) -> &TabularMdp {
                AtomicOperator::mdp(self)
            }
        }
    };
}

#[derive(Debug, Clone, Copy)]
pub struct FullEval<'a> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a Policy,
}

#[derive(Debug, Clone, Copy)]
pub struct FullOpt<'a> {
    pub mdp: &'a TabularMdp,
    pub tie_break: TieBreak,
}

#[derive(Debug, Clone, Copy)]
pub struct OneStepEval<'a> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a Policy,
}

#[derive(Debug, Clone, Copy)]
pub struct OneStepOpt<'a> {
    pub mdp: &'a TabularMdp,
}

impl AtomicOperator for FullEval<'_> {
    fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<AtomicCollection> {
        distr_bellman_eval(mu, self.mdp, self.policy)
    }

    fn contraction_modulus(&self) -> Option<f64> {
        Some(self.mdp.discount())
    }

    fn name(&self) -> String {
        "full-eval".into()
    }

    fn mdp(&self) -> &TabularMdp {
        self.mdp
    }
}

impl AtomicOperator for FullOpt<'_> {
    fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<AtomicCollection> {
        distr_bellman_opt(mu, self.mdp, self.tie_break)
    }

    fn contraction_modulus(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> String {
        "full-opt".into()
    }

    fn mdp(&self) -> &TabularMdp {
        self.mdp
    }
}

impl AtomicOperator for OneStepEval<'_> {
    fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<AtomicCollection> {
        os_distr_eval(mu, self.mdp, self.policy)
    }

    fn contraction_modulus(&self) -> Option<f64> {
        Some(self.mdp.discount())
    }

    fn name(&self) -> String {
        "one-step-eval".into()
    }

    fn mdp(&self) -> &TabularMdp {
        self.mdp
    }
}

impl AtomicOperator for OneStepOpt<'_> {
    fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<AtomicCollection> {
        os_distr_opt(mu, self.mdp)
    }

    fn contraction_modulus(&self) -> Option<f64> {
        Some(self.mdp.discount())
    }

    fn name(&self) -> String {
        "one-step-opt".into()
    }

    fn mdp(&self) -> &TabularMdp {
        self.mdp
    }
}

atomic_collection_operator!(FullEval);
atomic_collection_operator!(FullOpt);
atomic_collection_operator!(OneStepEval);
atomic_collection_operator!(OneStepOpt);

/// `Π_C ∘ op`, producing categorical collections on `grid`.
#[derive(Debug, Clone)]
pub struct Projected<O> {
    pub inner: O,
    pub grid: Grid,
}

/// Composes `op` with the Cramér projection onto `grid`.
pub fn projected<O: AtomicOperator>(op: O, grid: Grid) -> Projected<O> {
    Projected { inner: op, grid }
}

impl<O: AtomicOperator> Projected<O> {
    /// Applies the projected operator to any input representation.
    pub fn apply_to<D: ReturnDistribution>(&self, mu: &DistributionCollection<D>) -> Result<CategoricalCollection> {
        let out = self.inner.apply_to(mu)?;
        let mdp = self.inner.mdp();
        let entries = if mdp.n_pairs() >= PAR_MIN_ENTRIES {
            par::map_range(out.entries().len(), |i| cramer_project(&out.entries()[i], &self.grid))
        } else {
            out.entries().iter().map(|d| cramer_project(d, &self.grid)).collect()
        };
        CategoricalCollection::new(out.n_states(), out.n_actions(), entries)
    }
}

impl<O: AtomicOperator> CollectionOperator for Projected<O> {
    type Dist = crate::distributions::CategoricalDistribution;

    fn apply(&self, mu: &CategoricalCollection) -> Result<CategoricalCollection> {
        self.apply_to(mu)
    }

    fn contraction_modulus(&self) -> Option<f64> {
        // Only the one-step maps keep their W̄_1 modulus after projection.
        match self.inner.name().as_str() {
            "one-step-eval" | "one-step-opt" => self.inner.contraction_modulus(),
            _ => None,
        }
    }

    fn name(&self) -> String {
        format!("projected-{}", self.inner.name())
    }

    fn mdp(&self) -> &TabularMdp {
        self.inner.mdp()
    }
}
