//! Exact dynamic programming: scalar fixed points, closed-form one-step
//! fixed points, operator iteration with traces, and an oscillation
//! detector for traces that fail to settle.

use std::io::Write;

use crate::distributions::{
    project_collection, sup_w1_categorical, sup_wasserstein, AtomicCollection, CategoricalCollection,
    CategoricalDistribution, DistributionCollection, Grid, ReturnDistribution,
};
use crate::error::{invalid_param, Error, RangeViolation, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::operators::{
    bellman_eval, bellman_opt, one_step_from_values, projected, CollectionOperator, Mode, OneStepEval, OneStepOpt,
    QFunction,
};

/// Default cap on the total atom count of an iterate.
pub const DEFAULT_ATOM_CAP: usize = 1_000_000;

/// Targets this far outside the grid still count as inside.
pub const RANGE_SLACK: f64 = 1e-9;

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(invalid_param("tol", format!("must be positive, got {tol}")))
    }
}

fn solve_scalar(mdp: &TabularMdp, tol: f64, step: impl Fn(&QFunction) -> Result<QFunction>) -> Result<QFunction> {
    check_tol(tol)?;
    let gamma = mdp.discount();
    let mut q = QFunction::zeros(mdp.n_states(), mdp.n_actions());
    if gamma == 0.0 {
        return step(&q);
    }
    // ||Q_{n+1} - Q^*|| <= gamma / (1 - gamma) ||Q_{n+1} - Q_n||
    let threshold = tol * (1.0 - gamma) / gamma;
    loop {
        let next = step(&q)?;
        let delta = next.sup_distance(&q);
        q = next;
        if delta < threshold {
            return Ok(q);
        }
    }
}

/// `Q^pi` to within `tol` in sup norm.
pub fn solve_q_pi(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<QFunction> {
    pi.check_shape(mdp)?;
    solve_scalar(mdp, tol, |q| bellman_eval(q, mdp, pi))
}

/// `Q^*` to within `tol` in sup norm.
pub fn solve_q_star(mdp: &TabularMdp, tol: f64) -> Result<QFunction> {
    solve_scalar(mdp, tol, |q| bellman_opt(q, mdp))
}

/// Scalar fixed point for `mode`.
pub fn solve_q(mdp: &TabularMdp, mode: &Mode, tol: f64) -> Result<QFunction> {
    match mode {
        Mode::Eval(pi) => solve_q_pi(mdp, pi, tol),
        Mode::Control => solve_q_star(mdp, tol),
    }
}

/// `nu_pi(x,a) = sum_x' P(x'|x,a) delta_{r + gamma V^pi(x')}`.
pub fn one_step_fixed_point_eval(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<AtomicCollection> {
    let q = solve_q_pi(mdp, pi, tol)?;
    Ok(one_step_from_values(mdp, &q.policy_values(pi)))
}

/// `nu_*(x,a) = sum_x' P(x'|x,a) delta_{r + gamma V^*(x')}`.
pub fn one_step_fixed_point_opt(mdp: &TabularMdp, tol: f64) -> Result<AtomicCollection> {
    let q = solve_q_star(mdp, tol)?;
    Ok(one_step_from_values(mdp, &q.greedy_values()))
}

/// Every `(x, a, x')` with `P > 0` whose target `r + gamma v(x')` leaves
/// `[z_1 - RANGE_SLACK, z_K + RANGE_SLACK]`.
pub fn range_violations(mdp: &TabularMdp, v: &[f64], grid: &Grid) -> Vec<RangeViolation> {
    let gamma = mdp.discount();
    let (lo, hi) = (grid.first() - RANGE_SLACK, grid.last() + RANGE_SLACK);
    let mut out = Vec::new();
    for x in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for s in mdp.successors(x, a) {
                let target = s.reward + gamma * v[s.state];
                if target < lo || target > hi {
                    out.push(RangeViolation {
                        state: x,
                        action: a,
                        next_state: s.state,
                        target,
                    });
                }
            }
        }
    }
    out
}

/// Closed-form projected fixed point plus the iteration that confirmed it.
#[derive(Debug, Clone)]
pub struct ProjectedFixedPoint {
    pub eta: CategoricalCollection,
    /// Iterations of the projected one-step operator from the all-`delta_{z_1}`
    /// collection until it came within `tol` of `eta`.
    pub iterations: usize,
    pub distance: f64,
    /// Upper bound on iterations implied by the contraction modulus.
    pub bound: usize,
}

/// `Pi_C(nu_pi)` or `Pi_C(nu_*)`, checked against iteration of the
/// projected one-step operator.
pub fn projected_fixed_points(mdp: &TabularMdp, grid: &Grid, tol: f64, mode: &Mode) -> Result<ProjectedFixedPoint> {
    check_tol(tol)?;
    let q = solve_q(mdp, mode, (tol * 1e-3).max(1e-14))?;
    let v = mode.state_values(&q);
    let violations = range_violations(mdp, &v, grid);
    if !violations.is_empty() {
        return Err(Error::RangeCondition(violations));
    }
    let eta = project_collection(&one_step_from_values(mdp, &v), grid);
    let start = CategoricalCollection::filled(
        mdp.n_states(),
        mdp.n_actions(),
        CategoricalDistribution::point_mass(grid.clone(), 0)?,
    );
    let d0 = sup_w1_categorical(&start, &eta)?;
    let bound = iteration_bound(d0, tol, mdp.discount());
    let step = |mu: &CategoricalCollection| -> Result<CategoricalCollection> {
        match mode {
            Mode::Eval(pi) => projected(OneStepEval { mdp, policy: pi }, grid.clone()).apply(mu),
            Mode::Control => projected(OneStepOpt { mdp }, grid.clone()).apply(mu),
        }
    };
    let mut mu = start;
    let mut distance = d0;
    let mut iterations = 0;
    while distance >= tol {
        if iterations == bound {
            return Err(Error::FixedPointMismatch {
                distance,
                iterations,
                tol,
            });
        }
        mu = step(&mu)?;
        iterations += 1;
        distance = sup_w1_categorical(&mu, &eta)?;
    }
    Ok(ProjectedFixedPoint {
        eta,
        iterations,
        distance,
        bound,
    })
}

/// `ceil(ln(tol / d0) / ln gamma)`, the number of steps a gamma-contraction
/// needs to shrink an initial distance `d0` below `tol`.
pub fn iteration_bound(d0: f64, tol: f64, gamma: f64) -> usize {
    if d0 < tol {
        0
    } else if gamma == 0.0 {
        1
    } else {
        ((tol / d0).ln() / gamma.ln()).ceil().max(1.0) as usize
    }
}

/// Iterates of an operator with `W̄_1` diagnostics.
#[derive(Debug, Clone)]
pub struct IterationTrace<D> {
    pub iterates: Vec<DistributionCollection<D>>,
    /// `W̄_1(mu_{n+1}, mu_n)`, one shorter than `iterates`.
    pub dist_to_next: Vec<f64>,
    /// `W̄_1(mu_n, reference)` when a reference was supplied.
    pub dist_to_reference: Option<Vec<f64>>,
}

impl<D: ReturnDistribution> IterationTrace<D> {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last(&self) -> &DistributionCollection<D> {
        self.iterates.last().expect("trace holds the initial collection")
    }

    /// Largest per-entry atom count of each iterate.
    pub fn max_atoms(&self) -> Vec<usize> {
        self.iterates.iter().map(|mu| mu.max_atoms()).collect()
    }

    pub fn total_atoms(&self) -> Vec<usize> {
        self.iterates.iter().map(|mu| mu.total_atoms()).collect()
    }

    /// Rows `(iteration, entry_id, atom_or_gridpoint, weight)`, with
    /// `entry_id = x * n_actions + a`. Zero-mass grid points are skipped.
    pub fn write_entries_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "entry_id", "atom_or_gridpoint", "weight"])?;
        for (n, mu) in self.iterates.iter().enumerate() {
            for (id, d) in mu.entries().iter().enumerate() {
                for (z, p) in d.as_atomic().iter() {
                    w.serialize((n, id, z, p))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rows `(iteration, dist_to_next, dist_to_reference)`; missing values
    /// are left empty.
    pub fn write_distances_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "dist_to_next", "dist_to_reference"])?;
        for n in 0..self.iterates.len() {
            let next = self.dist_to_next.get(n).copied();
            let reference = self.dist_to_reference.as_ref().map(|d| d[n]);
            w.serialize((n, next, reference))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies `op` `n_steps` times from `mu0`, aborting if an iterate holds more
/// than `atom_cap` atoms in total.
pub fn iterate<O: CollectionOperator>(
    op: &O,
    mu0: DistributionCollection<O::Dist>,
    n_steps: usize,
    reference: Option<&DistributionCollection<O::Dist>>,
    atom_cap: usize,
) -> Result<IterationTrace<O::Dist>> {
    let mut dist_to_reference = match reference {
        Some(r) => Some(vec![sup_wasserstein(&mu0, r, 1.0)?]),
        None => None,
    };
    let mut iterates = vec![mu0];
    let mut dist_to_next = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let prev = iterates.last().expect("non-empty");
        let next = op.apply(prev)?;
        let count = next.total_atoms();
        if count > atom_cap {
            return Err(Error::AtomCapExceeded { count, cap: atom_cap });
        }
        dist_to_next.push(sup_wasserstein(prev, &next, 1.0)?);
        if let (Some(d), Some(r)) = (dist_to_reference.as_mut(), reference) {
            d.push(sup_wasserstein(&next, r, 1.0)?);
        }
        iterates.push(next);
    }
    Ok(IterationTrace {
        iterates,
        dist_to_next,
        dist_to_reference,
    })
}

/// Longest cycle the detector looks for.
pub const MAX_PERIOD: usize = 4;

/// Default threshold on recurrence distances.
pub const OSCILLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Periodic { period: usize },
    /// Not converged and no cycle of length at most [`MAX_PERIOD`].
    Aperiodic,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OscillationReport {
    pub verdict: Verdict,
    /// `drift[q-1] = max_{n >= burn_in} W̄_1(mu_{n+q}, mu_n)` for `q = 1..=4`.
    pub drift: [f64; MAX_PERIOD],
}

impl OscillationReport {
    /// True for a settled cycle of period 2 to 4.
    pub fn is_oscillating(&self) -> bool {
        matches!(self.verdict, Verdict::Periodic { .. })
    }

    pub fn is_converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }
}

/// Classifies the tail of a trace after `burn_in` iterates.
///
/// The trace has converged if consecutive iterates agree within `tol`. If
/// not, it oscillates with period `q` for the smallest `q` in `2..=4` whose
/// recurrence distance stays within `tol`.
pub fn detect_oscillation<D: ReturnDistribution>(
    iterates: &[DistributionCollection<D>],
    burn_in: usize,
    tol: f64,
) -> Result<OscillationReport> {
    if iterates.len() < burn_in + MAX_PERIOD + 1 {
        return Err(invalid_param(
            "burn_in",
            format!(
                "need at least {} iterates after burn-in {burn_in}, trace has {}",
                MAX_PERIOD + 1,
                iterates.len()
            ),
        ));
    }
    let mut drift = [0.0; MAX_PERIOD];
    for (qi, d) in drift.iter_mut().enumerate() {
        let q = qi + 1;
        for n in burn_in..iterates.len() - q {
            *d = f64::max(*d, sup_wasserstein(&iterates[n + q], &iterates[n], 1.0)?);
        }
    }
    let verdict = if drift[0] < tol {
        Verdict::Converged
    } else {
        match (2..=MAX_PERIOD).find(|&q| drift[q - 1] < tol) {
            Some(period) => Verdict::Periodic { period },
            None => Verdict::Aperiodic,
        }
    };
    Ok(OscillationReport { verdict, drift })
}
