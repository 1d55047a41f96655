use super::atomic::AtomicDistribution;
use super::ReturnDistribution;
use crate::error::{invalid_param, Result};

/// Slack allowed when comparing CDF values for stochastic dominance.
pub const DOMINANCE_TOL: f64 = 1e-12;

/// Exact `W_p` between two atomic distributions.
///
/// Both quantile functions are step functions on `(0, 1]`. Merging the two
/// cumulative-weight partitions gives intervals on which both are constant,
/// so the integral is a finite sum.
pub fn wasserstein(nu1: &AtomicDistribution, nu2: &AtomicDistribution, p: f64) -> Result<f64> {
    check_order(p)?;
    Ok(wasserstein_unchecked(nu1, nu2, p))
}

pub(crate) fn wasserstein_unchecked(
    nu1: &AtomicDistribution,
    nu2: &AtomicDistribution,
    p: f64,
) -> f64 {
    let (a, wa) = (nu1.atoms(), nu1.weights());
    let (b, wb) = (nu2.atoms(), nu2.weights());
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut ca = wa[0];
    let mut cb = wb[0];
    let mut prev = 0.0;
    let mut acc = 0.0;
    loop {
        // The last breakpoint of each partition is 1 by definition; pin it
        // so rounding in the cumulative sums cannot leave a sliver behind.
        let end_a = if i + 1 == na { 1.0 } else { ca };
        let end_b = if j + 1 == nb { 1.0 } else { cb };
        let next = end_a.min(end_b);
        let len = next - prev;
        if len > 0.0 {
            acc += cost(a[i] - b[j], p) * len;
            prev = next;
        }
        if i + 1 == na && j + 1 == nb {
            break;
        }
        if end_a <= next && i + 1 < na {
            i += 1;
            ca += wa[i];
        }
        if end_b <= next && j + 1 < nb {
            j += 1;
            cb += wb[j];
        }
    }
    if p == 1.0 {
        acc
    } else {
        acc.powf(1.0 / p)
    }
}

fn cost(d: f64, p: f64) -> f64 {
    let d = d.abs();
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

pub(crate) fn check_order(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(invalid_param("p", format!("Wasserstein order must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Err(invalid_param("p", "W_inf is not supported"));
    }
    Ok(())
}

/// `W_p` between any two return distributions.
pub fn wasserstein_between<A, B>(nu1: &A, nu2: &B, p: f64) -> Result<f64>
where
    A: ReturnDistribution,
    B: ReturnDistribution,
{
    wasserstein(&nu1.as_atomic(), &nu2.as_atomic(), p)
}

/// True iff `nu1` stochastically dominates `nu2`, i.e. `F1(z) <= F2(z)` at
/// every breakpoint of either CDF (up to [`DOMINANCE_TOL`]).
pub fn stochastically_dominates<A, B>(nu1: &A, nu2: &B) -> bool
where
    A: ReturnDistribution,
    B: ReturnDistribution,
{
    let d1 = nu1.as_atomic();
    let d2 = nu2.as_atomic();
    let (a, wa) = (d1.atoms(), d1.weights());
    let (b, wb) = (d2.atoms(), d2.weights());
    let (mut i, mut j) = (0, 0);
    let (mut f1, mut f2) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        let z = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= z {
            f1 += wa[i];
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            f2 += wb[j];
            j += 1;
        }
        if f1 > f2 + DOMINANCE_TOL {
            return false;
        }
    }
    true
}
