//! Randomized property suites. Each case is generated from its own seed,
//! recorded in `failing_case` so a failure can be replayed.

use osdrl_core::distributions::{
    cramer_project, project_collection, stochastically_dominates, sup_w1_categorical, sup_wasserstein, wasserstein,
    AtomicCollection, AtomicDistribution, CategoricalCollection, CategoricalDistribution, Grid,
};
use osdrl_core::dp::{iteration_bound, one_step_fixed_point_eval, one_step_fixed_point_opt, solve_q_pi, solve_q_star};
use osdrl_core::learning::{Initialization, LearnerState, StepSizeSchedule, TargetTiming};
use osdrl_core::mdp::{make_toy_env, make_toy_mdp, EpisodicEnv, InitialState, Policy, TabularMdp, Transition};
use osdrl_core::operators::{
    bellman_eval, bellman_opt, distr_bellman_eval, distr_bellman_opt, os_distr_eval, os_distr_opt, projected,
    CollectionOperator, Mode, OneStepEval, OneStepOpt, QFunction, TieBreak,
};
use osdrl_core::random::{random_atomic, random_collection, random_grid, random_mdp, random_policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::Result;

pub const CONTRACTION_SLACK: f64 = 1e-10;
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const LEMMA_SLACK: f64 = 1e-10;
pub const MEAN_TOL: f64 = 1e-12;
pub const COMMUTATION_TOL: f64 = 1e-10;
pub const TRACKING_TOL: f64 = 1e-9;
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    /// Largest amount by which a case exceeded its bound, 0 if none did.
    pub max_violation: f64,
    pub passed: bool,
    /// First failing case.
    pub failing_case: Option<Value>,
}

struct Tally {
    name: String,
    cases: usize,
    worst: f64,
    failing: Option<Value>,
}

impl Tally {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            worst: 0.0,
            failing: None,
        }
    }

    /// `excess` is `lhs - bound`; the case passes when it is at most 0.
    fn record(&mut self, excess: f64, case: impl FnOnce() -> Value) {
        self.cases += 1;
        let failed = excess.is_nan() || excess > 0.0;
        if failed {
            self.worst = if excess.is_nan() { f64::INFINITY } else { self.worst.max(excess) };
            if self.failing.is_none() {
                self.failing = Some(case());
            }
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            passed: self.failing.is_none(),
            name: self.name,
            cases: self.cases,
            max_violation: self.worst,
            failing_case: self.failing,
        }
    }
}

/// Independent per-case seeds for suite number `suite`.
fn case_seeds(seed: u64, suite: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite);
    (0..n).map(|_| rng.random()).collect()
}

/// A random MDP, policy and two collections with atoms in `[-5, 5]`.
pub struct Triple {
    pub mdp: TabularMdp,
    pub pi: Policy,
    pub mu1: AtomicCollection,
    pub mu2: AtomicCollection,
}

pub fn triple(case_seed: u64, mdp: Option<&TabularMdp>) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let mdp = match mdp {
        Some(m) => m.clone(),
        None => {
            let ns = rng.random_range(1..=5);
            let na = rng.random_range(1..=3);
            random_mdp(&mut rng, ns, na)
        }
    };
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let pi = random_policy(&mut rng, ns, na);
    let mu1 = random_collection(&mut rng, ns, na, 5, -5.0, 5.0);
    let mu2 = random_collection(&mut rng, ns, na, 5, -5.0, 5.0);
    Triple { mdp, pi, mu1, mu2 }
}

/// `W̄_p` contraction of the one-step and full evaluation operators and
/// `W̄_1` contraction of the projected one-step operators.
pub fn contraction(seed: u64, cases: usize, extra: Option<&TabularMdp>) -> Result<Vec<SuiteResult>> {
    let ps = [1.0, 2.0, 4.0];
    let mut tallies: Vec<Tally> = Vec::new();
    for op in ["one_step_opt", "one_step_eval", "full_eval"] {
        for p in ps {
            tallies.push(Tally::new(format!("contraction.{op}.w{p}")));
        }
    }
    tallies.push(Tally::new("contraction.projected_one_step_opt.w1"));
    tallies.push(Tally::new("contraction.projected_one_step_eval.w1"));

    let mut seeds: Vec<(u64, Option<&TabularMdp>)> = case_seeds(seed, 1, cases).into_iter().map(|s| (s, None)).collect();
    if let Some(m) = extra {
        seeds.extend(case_seeds(seed, 101, cases.div_ceil(10)).into_iter().map(|s| (s, Some(m))));
    }
    for (s, m) in seeds {
        let t = triple(s, m);
        let g = t.mdp.discount();
        let outputs: [(AtomicCollection, AtomicCollection); 3] = [
            (os_distr_opt(&t.mu1, &t.mdp)?, os_distr_opt(&t.mu2, &t.mdp)?),
            (os_distr_eval(&t.mu1, &t.mdp, &t.pi)?, os_distr_eval(&t.mu2, &t.mdp, &t.pi)?),
            (distr_bellman_eval(&t.mu1, &t.mdp, &t.pi)?, distr_bellman_eval(&t.mu2, &t.mdp, &t.pi)?),
        ];
        for (oi, (o1, o2)) in outputs.iter().enumerate() {
            for (pi_, &p) in ps.iter().enumerate() {
                let d = sup_wasserstein(&t.mu1, &t.mu2, p)?;
                let out = sup_wasserstein(o1, o2, p)?;
                tallies[oi * 3 + pi_].record(out - g * d - CONTRACTION_SLACK, || {
                    json!({"case_seed": s, "p": p, "output_distance": out, "input_distance": d, "gamma": g})
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xa5a5);
        let k = rng.random_range(2..=10);
        let grid = random_grid(&mut rng, k, -6.0, 6.0);
        let d = sup_wasserstein(&t.mu1, &t.mu2, 1.0)?;
        let po = projected(OneStepOpt { mdp: &t.mdp }, grid.clone());
        let pe = projected(OneStepEval { mdp: &t.mdp, policy: &t.pi }, grid.clone());
        for (ti, (a, b)) in [
            (po.apply_to(&t.mu1)?, po.apply_to(&t.mu2)?),
            (pe.apply_to(&t.mu1)?, pe.apply_to(&t.mu2)?),
        ]
        .into_iter()
        .enumerate()
        {
            let out = sup_w1_categorical(&a, &b)?;
            tallies[9 + ti].record(out - g * d - CONTRACTION_SLACK, || {
                json!({"case_seed": s, "grid": grid.points(), "output_distance": out, "input_distance": d})
            });
        }
    }
    Ok(tallies.into_iter().map(Tally::finish).collect())
}

/// Grid on `[-R, R]` with `R = max |r| / (1 - gamma)`, wide enough for the
/// range condition.
pub fn covering_grid(mdp: &TabularMdp, k: usize) -> Grid {
    let mut r_max: f64 = 0.0;
    for x in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for s in mdp.successors(x, a) {
                r_max = r_max.max(s.reward.abs());
            }
        }
    }
    let r = (r_max / (1.0 - mdp.discount())).max(1e-3);
    Grid::uniform(-r, r, k).expect("k >= 2 and r > 0")
}

/// Iterates the projected one-step operator from all-`δ_{z_1}` and returns
/// the final distance to `eta` after reaching `tol` or exhausting the
/// contraction bound plus a margin.
fn iterate_to(
    op: &impl CollectionOperator<Dist = CategoricalDistribution>,
    grid: &Grid,
    eta: &CategoricalCollection,
    gamma: f64,
    tol: f64,
) -> Result<(f64, usize)> {
    let mut mu = CategoricalCollection::filled(
        eta.n_states(),
        eta.n_actions(),
        CategoricalDistribution::point_mass(grid.clone(), 0)?,
    );
    let mut d = sup_w1_categorical(&mu, eta)?;
    let limit = iteration_bound(d, tol, gamma) + 10;
    let mut n = 0;
    while d > tol && n < limit {
        mu = op.apply(&mu)?;
        d = sup_w1_categorical(&mu, eta)?;
        n += 1;
    }
    Ok((d, n))
}

/// Projected one-step iteration against `Π_C` of the closed-form fixed
/// point, for control and for random policies.
pub fn fixed_points(seed: u64, n_mdps: usize, n_policies: usize, extra: Option<&TabularMdp>) -> Result<Vec<SuiteResult>> {
    let mut control = Tally::new("fixed_point.control");
    let mut eval = Tally::new("fixed_point.eval");
    let mut instances: Vec<(String, TabularMdp, Grid)> =
        vec![("toy".into(), make_toy_mdp(), Grid::new(vec![0.0, 1.9, 2.1, 10.0])?)];
    for (i, s) in case_seeds(seed, 2, n_mdps).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ns = rng.random_range(2..=5);
        let na = rng.random_range(1..=3);
        let mdp = random_mdp(&mut rng, ns, na);
        let k = rng.random_range(5..=30);
        let grid = covering_grid(&mdp, k);
        instances.push((format!("random #{i} (case_seed {s})"), mdp, grid));
    }
    if let Some(m) = extra {
        instances.push(("config mdp".into(), m.clone(), covering_grid(m, 21)));
    }
    for (idx, (label, mdp, grid)) in instances.iter().enumerate() {
        let g = mdp.discount();
        let eta = project_collection(&one_step_fixed_point_opt(mdp, 1e-13)?, grid);
        let (d, n) = iterate_to(&projected(OneStepOpt { mdp }, grid.clone()), grid, &eta, g, FIXED_POINT_TOL)?;
        control.record(d - FIXED_POINT_TOL, || json!({"instance": label, "distance": d, "iterations": n}));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((idx as u64) << 8));
        for j in 0..n_policies {
            let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let eta = project_collection(&one_step_fixed_point_eval(mdp, &pi, 1e-13)?, grid);
            let op = projected(OneStepEval { mdp, policy: &pi }, grid.clone());
            let (d, n) = iterate_to(&op, grid, &eta, g, FIXED_POINT_TOL)?;
            eval.record(d - FIXED_POINT_TOL, || {
                json!({"instance": label, "policy": j, "distance": d, "iterations": n})
            });
        }
    }
    Ok(vec![control.finish(), eval.finish()])
}

/// `W_1(Π_C δ_a, Π_C δ_b) <= |a - b|` on random grids, with `a`, `b` also
/// outside the grid.
pub fn projection_lemma(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("projection.lemma_w1");
    for s in case_seeds(seed, 3, cases) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let k = rng.random_range(2..=12);
        let grid = random_grid(&mut rng, k, -5.0, 5.0);
        let (a, b): (f64, f64) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let pa = cramer_project(&AtomicDistribution::dirac(a)?, &grid).to_atomic();
        let pb = cramer_project(&AtomicDistribution::dirac(b)?, &grid).to_atomic();
        let w = wasserstein(&pa, &pb, 1.0)?;
        t.record(w - (a - b).abs() - LEMMA_SLACK, || {
            json!({"case_seed": s, "a": a, "b": b, "grid": grid.points(), "w1": w})
        });
    }
    Ok(t.finish())
}

/// `mean(Π_C ν) = mean(ν)` for `ν` supported inside the grid.
pub fn mean_preservation(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("projection.mean_preservation");
    for s in case_seeds(seed, 4, cases) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let k = rng.random_range(2..=12);
        let grid = random_grid(&mut rng, k, -5.0, 5.0);
        let nu = random_atomic(&mut rng, 8, grid.first(), grid.last());
        let err = (cramer_project(&nu, &grid).mean() - nu.mean()).abs();
        t.record(err - MEAN_TOL, || json!({"case_seed": s, "error": err}));
    }
    Ok(t.finish())
}

fn shift_up(rng: &mut ChaCha8Rng, mu: &AtomicCollection) -> AtomicCollection {
    mu.map(|d| {
        let atoms = d.atoms().iter().map(|z| z + rng.random_range(0.0..2.0)).collect();
        AtomicDistribution::new(atoms, d.weights().to_vec()).expect("same weights")
    })
}

/// Stochastic dominance is preserved by `Π_C` and by the one-step operators.
pub fn monotonicity(seed: u64, cases: usize) -> Result<Vec<SuiteResult>> {
    let mut proj = Tally::new("monotone.projection");
    let mut ops = Tally::new("monotone.one_step_operators");
    for s in case_seeds(seed, 5, cases) {
        let t = triple(s, None);
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
        let up = shift_up(&mut rng, &t.mu1);
        let k = rng.random_range(2..=10);
        let grid = random_grid(&mut rng, k, -6.0, 6.0);
        let all = |a: &[AtomicDistribution], b: &[AtomicDistribution]| {
            a.iter().zip(b).all(|(x, y)| stochastically_dominates(x, y))
        };
        let pu = project_collection(&up, &grid);
        let pl = project_collection(&t.mu1, &grid);
        let ok = pu.entries().iter().zip(pl.entries()).all(|(x, y)| stochastically_dominates(x, y));
        proj.record(if ok { 0.0 } else { 1.0 }, || json!({"case_seed": s}));
        let ok = all(os_distr_opt(&up, &t.mdp)?.entries(), os_distr_opt(&t.mu1, &t.mdp)?.entries())
            && all(
                os_distr_eval(&up, &t.mdp, &t.pi)?.entries(),
                os_distr_eval(&t.mu1, &t.mdp, &t.pi)?.entries(),
            );
        ops.record(if ok { 0.0 } else { 1.0 }, || json!({"case_seed": s}));
    }
    Ok(vec![proj.finish(), ops.finish()])
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Entrywise means of every distributional operator equal the scalar
/// Bellman operator applied to the means.
pub fn mean_commutation(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("operators.mean_commutation");
    for s in case_seeds(seed, 6, cases) {
        let c = triple(s, None);
        let q = QFunction::from_means(&c.mu1);
        let te = bellman_eval(&q, &c.mdp, &c.pi)?;
        let to = bellman_opt(&q, &c.mdp)?;
        let errs = [
            sup_diff(&distr_bellman_eval(&c.mu1, &c.mdp, &c.pi)?.means(), te.values()),
            sup_diff(&distr_bellman_opt(&c.mu1, &c.mdp, TieBreak::LowestIndex)?.means(), to.values()),
            sup_diff(&os_distr_eval(&c.mu1, &c.mdp, &c.pi)?.means(), te.values()),
            sup_diff(&os_distr_opt(&c.mu1, &c.mdp)?.means(), to.values()),
        ];
        let worst = errs.iter().copied().fold(0.0, f64::max);
        t.record(worst - COMMUTATION_TOL, || json!({"case_seed": s, "errors": errs}));
    }
    Ok(t.finish())
}

/// Scalar Q-learning (no policy) or expected TD(0) (with a policy).
struct ScalarLearner {
    q: Vec<f64>,
    n_actions: usize,
    gamma: f64,
    terminal: Vec<bool>,
}

impl ScalarLearner {
    fn update(&mut self, tr: &Transition, alpha: f64, pi: Option<&Policy>) {
        let y = tr.next_state;
        let row = &self.q[y * self.n_actions..(y + 1) * self.n_actions];
        let v = if self.terminal[y] {
            0.0
        } else if let Some(pi) = pi {
            row.iter().enumerate().map(|(b, q)| pi.prob(y, b) * q).sum()
        } else {
            row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let i = tr.state * self.n_actions + tr.action;
        self.q[i] += alpha * (tr.reward + self.gamma * v - self.q[i]);
    }
}

/// Means of the one-step categorical learner against scalar learners fed
/// the same transitions and step sizes.
pub fn mean_tracking(seed: u64, steps: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("learning.mean_tracking");
    let mut envs: Vec<(String, EpisodicEnv, Grid)> =
        vec![("toy".into(), make_toy_env(), Grid::uniform(0.0, 6.0, 13)?)];
    for s in case_seeds(seed, 7, 2) {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(s), 5, 3);
        let grid = covering_grid(&mdp, 21);
        envs.push((format!("random (case_seed {s})"), EpisodicEnv::new(&mdp, &[], InitialState::Fixed(0))?, grid));
    }
    for (label, env, grid) in &envs {
        let mdp = env.mdp();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        for pi in [None, Some(&pi)] {
            let mode = pi.map_or(Mode::Control, |p| Mode::Eval(p.clone()));
            let mut state = LearnerState::new(env, grid.clone(), Initialization::Uniform, seed);
            let mut scalar = ScalarLearner {
                q: state.q_function().values().to_vec(),
                n_actions: mdp.n_actions(),
                gamma: mdp.discount(),
                terminal: env.terminal_mask().to_vec(),
            };
            let schedule = StepSizeSchedule::default();
            let mut x = env.reset(&mut rng);
            let mut worst: f64 = 0.0;
            let mut out_of_range = 0;
            for _ in 0..steps {
                let a = rng.random_range(0..mdp.n_actions());
                let tr = env.sample_step(x, a, &mut rng)?;
                let alpha = schedule.alpha(state.visits(x, a));
                if !state.os_cdrl_step(&tr, &mode, &schedule).in_range {
                    out_of_range += 1;
                }
                scalar.update(&tr, alpha, pi);
                worst = worst.max(sup_diff(state.q_function().values(), &scalar.q));
                x = if env.is_terminal(tr.next_state) { env.reset(&mut rng) } else { tr.next_state };
            }
            let excess = if out_of_range > 0 { f64::INFINITY } else { worst - TRACKING_TOL };
            t.record(excess, || {
                json!({"instance": label, "eval": pi.is_some(), "max_error": worst, "out_of_range": out_of_range})
            });
        }
    }
    Ok(t.finish())
}

/// Every probability vector stays normalized under both learners, on
/// narrow grids that force clamping.
pub fn normalization(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("learning.normalization");
    for s in case_seeds(seed, 8, cases) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mdp = random_mdp(&mut rng, 3, 2);
        let env = EpisodicEnv::new(&mdp, &[], InitialState::Fixed(0))?;
        let k = rng.random_range(2..=8);
        let mut state = LearnerState::new(&env, Grid::uniform(-1.0, 1.0, k)?, Initialization::Uniform, s);
        let alg = if rng.random::<bool>() {
            osdrl_core::learning::Algorithm::OneStep
        } else {
            osdrl_core::learning::Algorithm::Cdrl(TieBreak::UniformMix)
        };
        let schedule = StepSizeSchedule::Constant {
            alpha: rng.random_range(0.01..=1.0),
        };
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let (x, a) = (rng.random_range(0..3), rng.random_range(0..2));
            let tr = mdp.sample_step(x, a, &mut rng)?;
            state.step(&tr, &Mode::Control, alg, &schedule);
            for y in 0..3 {
                for b in 0..2 {
                    let p = state.probs(y, b);
                    let neg = p.iter().copied().fold(0.0, f64::min).abs();
                    worst = worst.max((p.iter().sum::<f64>() - 1.0).abs()).max(neg);
                }
            }
        }
        t.record(worst - NORMALIZATION_TOL, || json!({"case_seed": s, "error": worst}));
    }
    Ok(t.finish())
}

/// Timing ratio growth between the smallest and largest support size and
/// the exact cell count of one-step targets.
pub fn benchmark_suites(timings: &[TargetTiming]) -> Vec<SuiteResult> {
    let mut growth = Tally::new("benchmark.ratio_growth");
    if let (Some(first), Some(last)) = (timings.first(), timings.last()) {
        growth.record(first.ratio - last.ratio, || {
            json!({"k_small": first.k, "ratio_small": first.ratio, "k_large": last.k, "ratio_large": last.ratio})
        });
    }
    let mut cells = Tally::new("benchmark.one_step_cells");
    for t in timings {
        cells.record(t.one_step_max_cells as f64 - 2.0, || json!({"k": t.k, "cells": t.one_step_max_cells}));
    }
    vec![growth.finish(), cells.finish()]
}

/// `Q*` and `Q^π` solvers against their own Bellman residuals.
pub fn scalar_solvers(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut t = Tally::new("dp.scalar_residual");
    for s in case_seeds(seed, 9, cases) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mdp = random_mdp(&mut rng, 4, 2);
        let pi = random_policy(&mut rng, 4, 2);
        let q = solve_q_star(&mdp, 1e-10)?;
        let qp = solve_q_pi(&mdp, &pi, 1e-10)?;
        // A fixed point within tol has residual at most (1 + gamma) tol.
        let r = bellman_opt(&q, &mdp)?
            .sup_distance(&q)
            .max(bellman_eval(&qp, &mdp, &pi)?.sup_distance(&qp));
        t.record(r - 2e-10, || json!({"case_seed": s, "residual": r}));
    }
    Ok(t.finish())
}
