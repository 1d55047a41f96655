//! Reference computations written against plain vectors, sharing no code
//! with the engine beyond the MDP accessors.

use osdrl_core::distributions::{AtomicDistribution, CategoricalDistribution, Grid};
use osdrl_core::mdp::{Policy, TabularMdp};

/// Finite distribution as parallel atom and weight vectors, unsorted.
#[derive(Debug, Clone)]
pub struct Dist {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Dist {
    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(z, w)| z * w).sum()
    }

    fn sorted(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|&(_, w)| w > 0.0)
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Number of distinct atoms carrying mass.
    pub fn distinct(&self) -> usize {
        let v = self.sorted();
        let mut n = 0;
        let mut last = f64::NAN;
        for (z, _) in v {
            if n == 0 || z - last > 1e-12 {
                n += 1;
            }
            last = z;
        }
        n
    }
}

impl From<&AtomicDistribution> for Dist {
    fn from(d: &AtomicDistribution) -> Self {
        Dist {
            atoms: d.atoms().to_vec(),
            weights: d.weights().to_vec(),
        }
    }
}

impl From<&CategoricalDistribution> for Dist {
    fn from(d: &CategoricalDistribution) -> Self {
        Dist {
            atoms: d.grid().points().to_vec(),
            weights: d.probs().to_vec(),
        }
    }
}

/// `W_p` through the monotone coupling: walk both sorted supports, moving
/// the smaller remaining mass at each step.
pub fn wp(a: &Dist, b: &Dist, p: f64) -> f64 {
    let (sa, sb) = (a.sorted(), b.sorted());
    let (ta, tb): (f64, f64) = (sa.iter().map(|x| x.1).sum(), sb.iter().map(|x| x.1).sum());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (sa[0].1 / ta, sb[0].1 / tb);
    let mut cost = 0.0;
    let mut moved = 0.0;
    while i < sa.len() && j < sb.len() && moved < 1.0 {
        let m = ra.min(rb);
        cost += m * (sa[i].0 - sb[j].0).abs().powf(p);
        moved += m;
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i < sa.len() {
                ra = sa[i].1 / ta;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < sb.len() {
                rb = sb[j].1 / tb;
            }
        }
    }
    cost.powf(1.0 / p)
}

/// `W_1` as the area between the two CDFs.
pub fn w1_cdf(a: &Dist, b: &Dist) -> f64 {
    let mut pts: Vec<f64> = a.atoms.iter().chain(&b.atoms).copied().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |d: &Dist, z: f64| -> f64 {
        d.atoms
            .iter()
            .zip(&d.weights)
            .filter(|(&x, _)| x <= z)
            .map(|(_, w)| w)
            .sum()
    };
    pts.windows(2)
        .map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

/// Largest per-entry distance over two equally shaped lists of entries.
pub fn sup<F: Fn(&Dist, &Dist) -> f64>(a: &[Dist], b: &[Dist], f: F) -> f64 {
    a.iter().zip(b).map(|(x, y)| f(x, y)).fold(0.0, f64::max)
}

/// Cramér projection of a Dirac onto `points`, as a dense vector.
pub fn project_dirac(z: f64, points: &[f64]) -> Vec<f64> {
    let k = points.len();
    let mut out = vec![0.0; k];
    if z <= points[0] {
        out[0] = 1.0;
    } else if z >= points[k - 1] {
        out[k - 1] = 1.0;
    } else {
        for i in 0..k - 1 {
            if points[i] <= z && z < points[i + 1] {
                let u = (z - points[i]) / (points[i + 1] - points[i]);
                out[i] = 1.0 - u;
                out[i + 1] = u;
                break;
            }
        }
    }
    out
}

pub fn project(d: &Dist, grid: &Grid) -> Dist {
    let points = grid.points();
    let mut weights = vec![0.0; points.len()];
    for (&z, &w) in d.atoms.iter().zip(&d.weights) {
        for (o, p) in weights.iter_mut().zip(project_dirac(z, points)) {
            *o += w * p;
        }
    }
    Dist {
        atoms: points.to_vec(),
        weights,
    }
}

fn backup(mdp: &TabularMdp, q: &[f64], v: impl Fn(&[f64], usize) -> f64) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut out = vec![0.0; ns * na];
    for x in 0..ns {
        for a in 0..na {
            out[x * na + a] = (0..ns)
                .map(|y| mdp.prob(x, a, y) * (mdp.reward(x, a, y) + g * v(q, y)))
                .sum();
        }
    }
    out
}

fn solve(mdp: &TabularMdp, v: impl Fn(&[f64], usize) -> f64) -> Vec<f64> {
    let mut q = vec![0.0; mdp.n_states() * mdp.n_actions()];
    for _ in 0..100_000 {
        let next = backup(mdp, &q, &v);
        let diff = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if diff < 1e-15 {
            break;
        }
    }
    q
}

/// `Q*` by value iteration, row-major.
pub fn q_star(mdp: &TabularMdp) -> Vec<f64> {
    let na = mdp.n_actions();
    solve(mdp, |q, y| q[y * na..(y + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `Q^π` by iterative evaluation, row-major.
pub fn q_pi(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let na = mdp.n_actions();
    solve(mdp, |q, y| (0..na).map(|b| pi.prob(y, b) * q[y * na + b]).sum())
}

pub fn greedy_values(mdp: &TabularMdp, q: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    (0..mdp.n_states())
        .map(|y| q[y * na..(y + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn policy_values(mdp: &TabularMdp, pi: &Policy, q: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    (0..mdp.n_states())
        .map(|y| (0..na).map(|b| pi.prob(y, b) * q[y * na + b]).sum())
        .collect()
}

/// `sum_y P(y | x, a) δ_{r(x, a, y) + γ v(y)}` for every pair, row-major.
pub fn one_step(mdp: &TabularMdp, v: &[f64]) -> Vec<Dist> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut out = Vec::with_capacity(ns * na);
    for x in 0..ns {
        for a in 0..na {
            let ys: Vec<usize> = (0..ns).filter(|&y| mdp.prob(x, a, y) > 0.0).collect();
            out.push(Dist {
                atoms: ys.iter().map(|&y| mdp.reward(x, a, y) + g * v[y]).collect(),
                weights: ys.iter().map(|&y| mdp.prob(x, a, y)).collect(),
            });
        }
    }
    out
}

/// `sum_y P(y | x, a) sum_b π(b | y) (r + γ Z(y, b))` for every pair.
pub fn full_eval(mdp: &TabularMdp, pi: &Policy, mu: &[Dist]) -> Vec<Dist> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut out = Vec::with_capacity(ns * na);
    for x in 0..ns {
        for a in 0..na {
            let mut d = Dist {
                atoms: Vec::new(),
                weights: Vec::new(),
            };
            for y in 0..ns {
                let p = mdp.prob(x, a, y);
                for b in 0..na {
                    let w = p * pi.prob(y, b);
                    if w == 0.0 {
                        continue;
                    }
                    let src = &mu[y * na + b];
                    for (&z, &q) in src.atoms.iter().zip(&src.weights) {
                        d.atoms.push(mdp.reward(x, a, y) + g * z);
                        d.weights.push(w * q);
                    }
                }
            }
            out.push(d);
        }
    }
    out
}
