use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::ReturnDistribution;
use crate::error::{invalid_param, Error, Result};

/// Atom locations closer than this are merged into one atom.
pub const MERGE_TOL: f64 = 1e-12;
/// Allowed deviation of a weight vector's sum from 1.
pub const WEIGHT_TOL: f64 = 1e-12;

/// A finitely supported probability measure on the real line.
///
/// Atoms are strictly increasing, every weight is positive and the weights
/// sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomicDoc", into = "AtomicDoc")]
pub struct AtomicDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomicDoc {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<AtomicDoc> for AtomicDistribution {
    type Error = Error;

    fn try_from(doc: AtomicDoc) -> Result<Self> {
        AtomicDistribution::new(doc.atoms, doc.weights)
    }
}

impl From<AtomicDistribution> for AtomicDoc {
    fn from(d: AtomicDistribution) -> Self {
        AtomicDoc {
            atoms: d.atoms,
            weights: d.weights,
        }
    }
}

impl AtomicDistribution {
    /// Builds a distribution from parallel atom/weight lists in any order.
    /// Coincident atoms are merged and zero-weight atoms dropped.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        if let Some(z) = atoms.iter().find(|z| !z.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite atom {z}")));
        }
        check_weights(&weights)?;
        Ok(Self::from_pairs_unchecked(
            atoms.into_iter().zip(weights).collect(),
        ))
    }

    pub fn dirac(z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::InvalidDistribution(format!("non-finite atom {z}")));
        }
        Ok(Self::dirac_unchecked(z))
    }

    pub(crate) fn dirac_unchecked(z: f64) -> Self {
        Self {
            atoms: vec![z],
            weights: vec![1.0],
        }
    }

    /// Sorts, merges atoms within [`MERGE_TOL`] and drops zero weights.
    /// Callers guarantee finite atoms and weights summing to one.
    pub(crate) fn from_pairs_unchecked(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.retain(|&(_, w)| w > 0.0);
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (z, w) in pairs {
            match atoms.last() {
                Some(&last) if z - last <= MERGE_TOL => {
                    *weights.last_mut().expect("parallel vectors") += w;
                }
                _ => {
                    atoms.push(z);
                    weights.push(w);
                }
            }
        }
        Self { atoms, weights }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of distinct atoms.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(z, w)| z * w).sum()
    }

    /// `F(z) = P(Z <= z)`.
    pub fn cdf(&self, z: f64) -> f64 {
        let n = self.atoms.partition_point(|&a| a <= z);
        if n == self.atoms.len() {
            1.0
        } else {
            self.weights[..n].iter().sum()
        }
    }

    /// Generalized inverse `inf { z : F(z) >= tau }` for `tau` in `(0, 1]`.
    pub fn quantile(&self, tau: f64) -> f64 {
        let mut cum = 0.0;
        for (i, (z, w)) in self.iter().enumerate() {
            cum += w;
            if cum >= tau || i + 1 == self.atoms.len() {
                return z;
            }
        }
        unreachable!("distribution has at least one atom")
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms[0]
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms[self.atoms.len() - 1]
    }

    /// Image of the measure under `z -> r0 + gamma * z`.
    pub fn pushforward_affine(&self, r0: f64, gamma: f64) -> Result<Self> {
        check_discount(gamma)?;
        if !r0.is_finite() {
            return Err(invalid_param("r0", format!("must be finite, got {r0}")));
        }
        Ok(self.pushforward_unchecked(r0, gamma))
    }

    pub(crate) fn pushforward_unchecked(&self, r0: f64, gamma: f64) -> Self {
        if gamma == 0.0 {
            return Self::dirac_unchecked(r0);
        }
        Self::from_pairs_unchecked(self.iter().map(|(z, w)| (r0 + gamma * z, w)).collect())
    }

    /// Convex combination of distributions. Zero-weight components are
    /// dropped and coincident atoms merged.
    pub fn mixture(components: &[(f64, &AtomicDistribution)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDistribution("empty mixture".into()));
        }
        let weights: Vec<f64> = components.iter().map(|c| c.0).collect();
        check_weights(&weights)?;
        Ok(Self::mixture_unchecked(components.iter().map(|&(w, d)| (w, d))))
    }

    pub(crate) fn mixture_unchecked<'a>(
        components: impl Iterator<Item = (f64, &'a AtomicDistribution)>,
    ) -> Self {
        let mut pairs = Vec::new();
        for (w, d) in components {
            if w > 0.0 {
                pairs.extend(d.iter().map(|(z, v)| (z, w * v)));
            }
        }
        Self::from_pairs_unchecked(pairs)
    }
}

impl ReturnDistribution for AtomicDistribution {
    fn mean(&self) -> f64 {
        AtomicDistribution::mean(self)
    }

    fn as_atomic(&self) -> Cow<'_, AtomicDistribution> {
        Cow::Borrowed(self)
    }

    fn atom_count(&self) -> usize {
        self.len()
    }
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidDistribution(format!(
            "weight {w} is not a finite nonnegative number"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidDistribution(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

pub(crate) fn check_discount(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid_param(
            "gamma",
            format!("discount must lie in [0, 1), got {gamma}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(a: f64, b: f64) -> AtomicDistribution {
        AtomicDistribution::new(vec![a, b], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn dirac_basics() {
        let d = AtomicDistribution::dirac(0.0).unwrap();
        assert_eq!(d.atoms(), &[0.0]);
        assert_eq!(d.weights(), &[1.0]);
        assert_eq!(AtomicDistribution::dirac(2.5).unwrap().mean(), 2.5);
        assert!(AtomicDistribution::dirac(f64::NAN).is_err());
        assert!(AtomicDistribution::dirac(f64::INFINITY).is_err());
    }

    #[test]
    fn constructor_sorts_merges_and_drops() {
        let d = AtomicDistribution::new(vec![3.0, 1.0, 3.0 + 1e-13, 7.0], vec![0.25, 0.25, 0.5, 0.0])
            .unwrap();
        assert_eq!(d.atoms(), &[1.0, 3.0]);
        assert_eq!(d.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn constructor_rejects_bad_weights() {
        assert!(AtomicDistribution::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(AtomicDistribution::new(vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(AtomicDistribution::new(vec![0.0], vec![0.5, 0.5]).is_err());
        assert!(AtomicDistribution::new(vec![], vec![]).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let d = AtomicDistribution::dirac(2.0).unwrap();
        assert_eq!(d.pushforward_affine(1.0, 0.5).unwrap(), AtomicDistribution::dirac(2.0).unwrap());

        let nu = two_point(0.0, 4.0);
        let out = nu.pushforward_affine(1.0, 0.5).unwrap();
        assert_eq!(out, two_point(1.0, 3.0));
        assert_eq!(out.mean(), 1.0 + 0.5 * nu.mean());

        assert_eq!(nu.pushforward_affine(-3.0, 0.0).unwrap(), AtomicDistribution::dirac(-3.0).unwrap());
        assert!(nu.pushforward_affine(0.0, 1.0).is_err());
        assert!(nu.pushforward_affine(0.0, -0.1).is_err());
    }

    #[test]
    fn mixture_examples() {
        let nu = two_point(-1.0, 5.0);
        assert_eq!(AtomicDistribution::mixture(&[(1.0, &nu)]).unwrap(), nu);

        let d0 = AtomicDistribution::dirac(0.0).unwrap();
        let d2 = AtomicDistribution::dirac(2.0).unwrap();
        assert_eq!(AtomicDistribution::mixture(&[(0.5, &d0), (0.5, &d0)]).unwrap(), d0);
        assert_eq!(AtomicDistribution::mixture(&[(0.5, &d0), (0.5, &d2)]).unwrap().mean(), 1.0);
        assert_eq!(AtomicDistribution::mixture(&[(1.0, &d0), (0.0, &d2)]).unwrap(), d0);

        assert!(AtomicDistribution::mixture(&[(0.4, &d0), (0.4, &d2)]).is_err());
        assert!(AtomicDistribution::mixture(&[]).is_err());
    }

    #[test]
    fn cdf_and_quantile() {
        let d = AtomicDistribution::new(vec![0.0, 1.0, 3.0], vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(d.cdf(-0.1), 0.0);
        assert_eq!(d.cdf(0.0), 0.2);
        assert_eq!(d.cdf(2.0), 0.5);
        assert_eq!(d.cdf(3.0), 1.0);
        assert_eq!(d.quantile(0.1), 0.0);
        assert_eq!(d.quantile(0.2), 0.0);
        assert_eq!(d.quantile(0.21), 1.0);
        assert_eq!(d.quantile(1.0), 3.0);
    }

    #[test]
    fn json_shape() {
        let d = two_point(0.0, 4.0);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"atoms":[0.0,4.0],"weights":[0.5,0.5]}"#);
        let back: AtomicDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<AtomicDistribution>(r#"{"atoms":[0],"weights":[0.3]}"#).is_err());
    }
}
