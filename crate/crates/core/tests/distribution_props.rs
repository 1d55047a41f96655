use osdrl_core::distributions::{
    cramer_project, kl_divergence, stochastically_dominates, wasserstein, AtomicDistribution, CategoricalDistribution,
    Grid,
};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (2usize..12, -5.0f64..5.0)
        .prop_flat_map(|(k, lo)| (Just(lo), prop::collection::vec(0.01f64..3.0, k - 1)))
        .prop_map(|(lo, gaps)| {
            let mut pts = vec![lo];
            for g in gaps {
                pts.push(pts.last().unwrap() + g);
            }
            Grid::new(pts).unwrap()
        })
}

fn atomic_strategy(lo: f64, hi: f64) -> impl Strategy<Value = AtomicDistribution> {
    prop::collection::vec((lo..=hi, 0.01f64..1.0), 1..8).prop_map(|pairs| {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (atoms, weights) = pairs.into_iter().map(|(z, w)| (z, w / total)).unzip();
        AtomicDistribution::new(atoms, weights).unwrap()
    })
}

fn dirac(z: f64) -> AtomicDistribution {
    AtomicDistribution::dirac(z).unwrap()
}

/// Atoms on the lattice `j / 64` inside `[-3, 3]`.
fn lattice_strategy() -> impl Strategy<Value = AtomicDistribution> {
    prop::collection::vec((-192i32..=192, 0.01f64..1.0), 1..8).prop_map(|pairs| {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (atoms, weights) = pairs.into_iter().map(|(j, w)| (j as f64 / 64.0, w / total)).unzip();
        AtomicDistribution::new(atoms, weights).unwrap()
    })
}

/// Area between two CDFs by a midpoint Riemann sum with cells of width
/// 1/1024 on `[-3, 3]`. Lattice atoms never fall inside a cell, so the sum
/// is exact up to rounding.
fn riemann_w1(a: &AtomicDistribution, b: &AtomicDistribution) -> f64 {
    let h = 1.0 / 1024.0;
    let n = (6.0 / h) as usize;
    let cdf = |d: &AtomicDistribution, z: f64| -> f64 { d.iter().filter(|(x, _)| *x <= z).map(|(_, w)| w).sum() };
    (0..n)
        .map(|i| {
            let z = -3.0 + (i as f64 + 0.5) * h;
            (cdf(a, z) - cdf(b, z)).abs() * h
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projected_diracs_are_closer(a in -10.0f64..10.0, b in -10.0f64..10.0, grid in grid_strategy()) {
        let pa = cramer_project(&dirac(a), &grid).to_atomic();
        let pb = cramer_project(&dirac(b), &grid).to_atomic();
        prop_assert!(wasserstein(&pa, &pb, 1.0).unwrap() <= (a - b).abs() + 1e-10);
    }

    #[test]
    fn projection_preserves_mean_in_range(grid in grid_strategy(), raw in atomic_strategy(0.0, 1.0)) {
        let (lo, hi) = (grid.first(), grid.last());
        let atoms: Vec<f64> = raw.atoms().iter().map(|u| lo + u * (hi - lo)).collect();
        let nu = AtomicDistribution::new(atoms, raw.weights().to_vec()).unwrap();
        let eta = cramer_project(&nu, &grid);
        prop_assert!((eta.mean() - nu.mean()).abs() <= 1e-12 * (1.0 + hi.abs().max(lo.abs())));
        prop_assert!((eta.total_mass() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_is_monotone(grid in grid_strategy(), nu in atomic_strategy(-8.0, 8.0), shift in 0.0f64..3.0) {
        // Shifting every atom up gives a dominating distribution.
        let up = shifted(&nu, shift);
        prop_assert!(stochastically_dominates(&up, &nu));
        let (p_up, p_nu) = (cramer_project(&up, &grid), cramer_project(&nu, &grid));
        prop_assert!(stochastically_dominates(&p_up, &p_nu));
    }

    #[test]
    fn wasserstein_axioms(
        a in atomic_strategy(-5.0, 5.0),
        b in atomic_strategy(-5.0, 5.0),
        c in atomic_strategy(-5.0, 5.0),
        p in prop::sample::select(vec![1.0, 1.5, 2.0, 4.0]),
    ) {
        let ab = wasserstein(&a, &b, p).unwrap();
        let ba = wasserstein(&b, &a, p).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(wasserstein(&a, &a, p).unwrap() <= 1e-12);
        let bc = wasserstein(&b, &c, p).unwrap();
        let ac = wasserstein(&a, &c, p).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10);
        if a != b {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn w1_matches_cdf_area(a in lattice_strategy(), b in lattice_strategy()) {
        let exact = wasserstein(&a, &b, 1.0).unwrap();
        let approx = riemann_w1(&a, &b);
        prop_assert!((exact - approx).abs() <= 1e-6 * exact + 1e-12, "{} vs {}", exact, approx);
    }

    #[test]
    fn pushforward_mean_is_affine(nu in atomic_strategy(-5.0, 5.0), r in -2.0f64..2.0, g in 0.0f64..0.99) {
        let out = nu.pushforward_affine(r, g).unwrap();
        prop_assert!((out.mean() - (r + g * nu.mean())).abs() <= 1e-12);
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

fn shifted(nu: &AtomicDistribution, shift: f64) -> AtomicDistribution {
    AtomicDistribution::new(nu.atoms().iter().map(|z| z + shift).collect(), nu.weights().to_vec()).unwrap()
}

#[test]
fn w1_riemann_example() {
    let a = AtomicDistribution::new(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
    assert!((riemann_w1(&a, &dirac(1.0)) - 1.0).abs() < 1e-9);
    assert!((wasserstein(&a, &dirac(1.0), 1.0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn kl_examples() {
    let g = Grid::new(vec![0.0, 1.0]).unwrap();
    let point = CategoricalDistribution::new(g.clone(), vec![1.0, 0.0]).unwrap();
    let half = CategoricalDistribution::new(g, vec![0.5, 0.5]).unwrap();
    assert_eq!(kl_divergence(&half, &half).unwrap(), 0.0);
    assert!((kl_divergence(&point, &half).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert!(kl_divergence(&half, &point).is_err());
}

#[test]
fn mixture_examples() {
    let nu = AtomicDistribution::new(vec![0.0, 4.0], vec![0.5, 0.5]).unwrap();
    assert_eq!(AtomicDistribution::mixture(&[(1.0, &nu)]).unwrap(), nu);
    let z = dirac(0.0);
    assert_eq!(AtomicDistribution::mixture(&[(0.5, &z), (0.5, &z)]).unwrap(), z);
    let two = dirac(2.0);
    assert_eq!(AtomicDistribution::mixture(&[(0.5, &z), (0.5, &two)]).unwrap().mean(), 1.0);
    assert!(AtomicDistribution::mixture(&[(0.5, &z), (0.4, &two)]).is_err());
    let pushed = nu.pushforward_affine(1.0, 0.5).unwrap();
    assert_eq!(pushed, AtomicDistribution::new(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap());
}
