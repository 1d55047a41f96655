use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::atomic::AtomicDistribution;
use super::ReturnDistribution;
use crate::error::{Error, Result};

/// Fixed categorical support `z_1 < ... < z_K`, `K >= 2`. Cheap to clone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid(Arc<[f64]>);

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.0.to_vec()
    }
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 support points, got {}",
                points.len()
            )));
        }
        if let Some(z) = points.iter().find(|z| !z.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite support point {z}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(format!(
                "support must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self(points.into()))
    }

    /// `k` evenly spaced points from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 support points, got {k}")));
        }
        let step = (hi - lo) / (k - 1) as f64;
        let mut points: Vec<f64> = (0..k).map(|i| lo + step * i as f64).collect();
        points[k - 1] = hi;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, z: f64) -> bool {
        self.first() <= z && z <= self.last()
    }

    /// Cramér projection of a single Dirac at `z`.
    ///
    /// Values at or below `z_1` go to `z_1`, values above `z_K` go to `z_K`;
    /// otherwise the mass is split linearly between the bracketing points
    /// `z_j < z <= z_{j+1}`, located by binary search.
    pub fn project(&self, z: f64) -> DiracSplit {
        debug_assert!(z.is_finite(), "projecting non-finite value {z}");
        let pts = &self.0;
        let k = pts.len();
        if z <= pts[0] {
            return DiracSplit::single(0);
        }
        if z > pts[k - 1] {
            return DiracSplit::single(k - 1);
        }
        // First support point >= z; at least 1 because z > z_1.
        let hi = pts.partition_point(|&g| g < z).max(1);
        let lo = hi - 1;
        let width = pts[hi] - pts[lo];
        let upper = (z - pts[lo]) / width;
        let lower = (pts[hi] - z) / width;
        if lower == 0.0 {
            DiracSplit::single(hi)
        } else {
            DiracSplit {
                cells: [(lo, lower), (hi, upper)],
                len: 2,
            }
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

/// Sparse result of projecting one Dirac: one or two `(grid index, mass)`
/// cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiracSplit {
    cells: [(usize, f64); 2],
    len: u8,
}

impl DiracSplit {
    fn single(index: usize) -> Self {
        Self {
            cells: [(index, 1.0), (index, 0.0)],
            len: 1,
        }
    }

    pub fn cells(&self) -> &[(usize, f64)] {
        &self.cells[..self.len as usize]
    }

    /// Adds `scale` times this split into a dense probability vector.
    pub fn accumulate(&self, probs: &mut [f64], scale: f64) {
        for &(i, w) in self.cells() {
            probs[i] += scale * w;
        }
    }

    pub fn to_dense(&self, k: usize) -> Vec<f64> {
        let mut probs = vec![0.0; k];
        self.accumulate(&mut probs, 1.0);
        probs
    }
}

/// Probabilities over a fixed [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CategoricalDoc", into = "CategoricalDoc")]
pub struct CategoricalDistribution {
    grid: Grid,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoricalDoc {
    grid: Grid,
    probs: Vec<f64>,
}

impl TryFrom<CategoricalDoc> for CategoricalDistribution {
    type Error = Error;

    fn try_from(doc: CategoricalDoc) -> Result<Self> {
        CategoricalDistribution::new(doc.grid, doc.probs)
    }
}

impl From<CategoricalDistribution> for CategoricalDoc {
    fn from(d: CategoricalDistribution) -> Self {
        CategoricalDoc {
            grid: d.grid,
            probs: d.probs,
        }
    }
}

impl CategoricalDistribution {
    pub fn new(grid: Grid, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities for a grid of {} points",
                probs.len(),
                grid.len()
            )));
        }
        super::atomic::check_weights(&probs)?;
        Ok(Self { grid, probs })
    }

    pub(crate) fn from_raw(grid: Grid, probs: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), probs.len());
        Self { grid, probs }
    }

    /// Unit mass at `grid[index]`.
    pub fn point_mass(grid: Grid, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::IndexOutOfRange {
                what: "grid",
                index,
                size: grid.len(),
            });
        }
        let mut probs = vec![0.0; grid.len()];
        probs[index] = 1.0;
        Ok(Self { grid, probs })
    }

    /// `Π_C(δ_z)`.
    pub fn projected_dirac(grid: Grid, z: f64) -> Self {
        let probs = grid.project(z).to_dense(grid.len());
        Self { grid, probs }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .zip(self.grid.points())
            .map(|(p, z)| p * z)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Number of grid cells with positive mass.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    /// Drops empty cells.
    pub fn to_atomic(&self) -> AtomicDistribution {
        AtomicDistribution::from_pairs_unchecked(
            self.grid
                .points()
                .iter()
                .copied()
                .zip(self.probs.iter().copied())
                .collect(),
        )
    }

    /// Exact `W_1` against a distribution on the same grid, via the area
    /// between the two CDFs.
    pub fn w1_same_grid(&self, other: &CategoricalDistribution) -> Result<f64> {
        self.require_same_grid(other)?;
        let pts = self.grid.points();
        let mut f1 = 0.0;
        let mut f2 = 0.0;
        let mut total = 0.0;
        for k in 0..pts.len() - 1 {
            f1 += self.probs[k];
            f2 += other.probs[k];
            total += (f1 - f2).abs() * (pts[k + 1] - pts[k]);
        }
        Ok(total)
    }

    pub(crate) fn require_same_grid(&self, other: &CategoricalDistribution) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "categorical distributions live on different grids".into(),
            ))
        }
    }
}

impl ReturnDistribution for CategoricalDistribution {
    fn mean(&self) -> f64 {
        CategoricalDistribution::mean(self)
    }

    fn as_atomic(&self) -> Cow<'_, AtomicDistribution> {
        Cow::Owned(self.to_atomic())
    }

    fn atom_count(&self) -> usize {
        self.support_size()
    }
}

/// Cramér projection of an atomic distribution onto `grid`, extended
/// linearly over its atoms.
pub fn cramer_project(nu: &AtomicDistribution, grid: &Grid) -> CategoricalDistribution {
    let mut probs = vec![0.0; grid.len()];
    for (z, w) in nu.iter() {
        grid.project(z).accumulate(&mut probs, w);
    }
    CategoricalDistribution::from_raw(grid.clone(), probs)
}

/// `KL(target || model) = sum_k target_k ln(target_k / model_k)`, with
/// `0 ln 0 = 0`. Fails when the target puts mass where the model has none.
pub fn kl_divergence(
    target: &CategoricalDistribution,
    model: &CategoricalDistribution,
) -> Result<f64> {
    target.require_same_grid(model)?;
    let mut total = 0.0;
    for (index, (&t, &m)) in target.probs.iter().zip(&model.probs).enumerate() {
        if t > 0.0 {
            if m <= 0.0 {
                return Err(Error::AbsoluteContinuity { index });
            }
            total += t * (t / m).ln();
        }
    }
    // Rounding can leave a tiny negative sum for equal vectors.
    Ok(total.max(0.0))
}
