//! Tabular categorical learners driven by sampled transitions.
//!
//! Both learners keep one probability vector on a fixed grid per
//! `(state, action)` and move it toward a projected target by a mixture
//! update. They differ only in the target:
//!
//! * one-step: `Π_C(δ_{r + γ V̂(x')})`, with `V̂` a max or policy average of
//!   the current means, so at most two cells change;
//! * CDRL: the whole next-state distribution at a greedy action, shifted by
//!   `z -> r + γ z` and projected atom by atom.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    sup_w1_categorical, CategoricalCollection, CategoricalDistribution, DiracSplit, Grid,
};
use crate::dp::RANGE_SLACK;
use crate::error::{invalid_param, Result};
use crate::mdp::{EpisodicEnv, Transition};
use crate::operators::{maximizers, Mode, QFunction, TieBreak};
use crate::par;

/// Step sizes `alpha_t(x, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSizeSchedule {
    Constant { alpha: f64 },
    /// `min(1, c / (1 + n)^omega)` where `n` counts earlier visits.
    Polynomial { c: f64, omega: f64 },
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        StepSizeSchedule::Polynomial { c: 1.0, omega: 0.7 }
    }
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSizeSchedule::Constant { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(invalid_param("alpha", format!("must lie in (0, 1], got {alpha}")));
                }
            }
            StepSizeSchedule::Polynomial { c, omega } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(invalid_param("c", format!("must be positive, got {c}")));
                }
                if !(omega > 0.5 && omega <= 1.0) {
                    return Err(invalid_param("omega", format!("must lie in (0.5, 1], got {omega}")));
                }
            }
        }
        Ok(())
    }

    pub fn alpha(&self, visits: u64) -> f64 {
        match *self {
            StepSizeSchedule::Constant { alpha } => alpha,
            StepSizeSchedule::Polynomial { c, omega } => (c / (1.0 + visits as f64).powf(omega)).min(1.0),
        }
    }
}

/// `epsilon(t) = end + (start - end) exp(-rate t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
}

impl Default for ExplorationSchedule {
    /// Decays from 1 to 0.25, passing 0.26 at step 50 000.
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.25,
            rate: 75f64.ln() / 5e4,
        }
    }
}

impl ExplorationSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            end: epsilon,
            rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon_start", self.start), ("epsilon_end", self.end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid_param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(invalid_param("rate", format!("must be finite and >= 0, got {}", self.rate)));
        }
        Ok(())
    }

    pub fn epsilon(&self, t: u64) -> f64 {
        self.end + (self.start - self.end) * (-self.rate * t as f64).exp()
    }
}

/// Which target the learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    OneStep,
    Cdrl(TieBreak),
}

/// Starting probabilities for non-terminal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    #[default]
    Uniform,
    FirstAtom,
}

/// What a single update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub alpha: f64,
    /// Whether every target atom fell inside the grid.
    pub in_range: bool,
}

/// Categorical estimates, visit counts and the random stream of one run.
#[derive(Debug, Clone)]
pub struct LearnerState {
    grid: Grid,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// Row-major over `(x, a, k)`.
    probs: Vec<f64>,
    visits: Vec<u64>,
    terminal: Vec<bool>,
    t: u64,
    range_violations: u64,
    rng: ChaCha8Rng,
}

impl LearnerState {
    /// Terminal entries hold `Π_C(δ_0)` and are never updated.
    pub fn new(env: &EpisodicEnv, grid: Grid, init: Initialization, seed: u64) -> Self {
        let mdp = env.mdp();
        let k = grid.len();
        let start = match init {
            Initialization::Uniform => vec![1.0 / k as f64; k],
            Initialization::FirstAtom => grid.project(grid.first()).to_dense(k),
        };
        let zero = grid.project(0.0).to_dense(k);
        let mut probs = Vec::with_capacity(mdp.n_pairs() * k);
        for x in 0..mdp.n_states() {
            let row = if env.is_terminal(x) { &zero } else { &start };
            for _ in 0..mdp.n_actions() {
                probs.extend_from_slice(row);
            }
        }
        Self {
            grid,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.discount(),
            probs,
            visits: vec![0; mdp.n_pairs()],
            terminal: env.terminal_mask().to_vec(),
            t: 0,
            range_violations: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step_index(&self) -> u64 {
        self.t
    }

    pub fn range_violations(&self) -> u64 {
        self.range_violations
    }

    pub fn visits(&self, x: usize, a: usize) -> u64 {
        self.visits[x * self.n_actions + a]
    }

    pub fn probs(&self, x: usize, a: usize) -> &[f64] {
        let k = self.grid.len();
        let i = (x * self.n_actions + a) * k;
        &self.probs[i..i + k]
    }

    fn probs_mut(&mut self, x: usize, a: usize) -> &mut [f64] {
        let k = self.grid.len();
        let i = (x * self.n_actions + a) * k;
        &mut self.probs[i..i + k]
    }

    /// `Q_t(x, a) = sum_k p_k(x, a) z_k`.
    pub fn mean(&self, x: usize, a: usize) -> f64 {
        self.probs(x, a).iter().zip(self.grid.points()).map(|(p, z)| p * z).sum()
    }

    pub fn q_function(&self) -> QFunction {
        let values = (0..self.n_states * self.n_actions)
            .map(|i| self.mean(i / self.n_actions, i % self.n_actions))
            .collect();
        QFunction::new(self.n_states, self.n_actions, values).expect("means are finite")
    }

    pub fn to_collection(&self) -> CategoricalCollection {
        CategoricalCollection::from_fn(self.n_states, self.n_actions, |x, a| {
            CategoricalDistribution::new(self.grid.clone(), self.probs(x, a).to_vec())
                .expect("mixture updates keep rows normalized")
        })
    }

    fn row_means(&self, x: usize) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.mean(x, a)).collect()
    }

    /// `V̂(x')`: zero at terminal states, otherwise a max or policy average
    /// of the current means.
    pub fn continuation_value(&self, x: usize, mode: &Mode) -> f64 {
        if self.terminal[x] {
            return 0.0;
        }
        let q = self.row_means(x);
        match mode {
            Mode::Control => q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Mode::Eval(pi) => q.iter().zip(pi.row(x)).map(|(q, p)| q * p).sum(),
        }
    }

    fn in_range(&self, z: f64) -> bool {
        z >= self.grid.first() - RANGE_SLACK && z <= self.grid.last() + RANGE_SLACK
    }

    /// One-step target value `r + γ V̂(x')` and its projection.
    pub fn os_target(&self, tr: &Transition, mode: &Mode) -> (f64, DiracSplit) {
        let z = tr.reward + self.gamma * self.continuation_value(tr.next_state, mode);
        (z, self.grid.project(z))
    }

    /// One-step target built from a chosen next action instead of the max.
    pub fn os_target_for_action(&self, tr: &Transition, action: usize) -> DiracSplit {
        let v = if self.terminal[tr.next_state] {
            0.0
        } else {
            self.mean(tr.next_state, action)
        };
        self.grid.project(tr.reward + self.gamma * v)
    }

    /// `Π_C(sum_k p_k(x', a) δ_{r + γ z_k})` as a dense vector, plus whether
    /// every shifted atom with mass landed inside the grid.
    pub fn cdrl_target_for_action(&self, tr: &Transition, action: usize) -> (Vec<f64>, bool) {
        let k = self.grid.len();
        let mut out = vec![0.0; k];
        if self.terminal[tr.next_state] {
            let z = tr.reward;
            self.grid.project(z).accumulate(&mut out, 1.0);
            return (out, self.in_range(z));
        }
        let in_range = self.accumulate_shifted(&mut out, tr, action, 1.0);
        (out, in_range)
    }

    fn accumulate_shifted(&self, out: &mut [f64], tr: &Transition, action: usize, scale: f64) -> bool {
        let mut in_range = true;
        let probs = self.probs(tr.next_state, action);
        for (&p, &z) in probs.iter().zip(self.grid.points()) {
            if p > 0.0 {
                let shifted = tr.reward + self.gamma * z;
                in_range &= self.in_range(shifted);
                self.grid.project(shifted).accumulate(out, scale * p);
            }
        }
        in_range
    }

    /// CDRL target: the next-state distribution at a greedy action (control)
    /// or mixed over `pi` (evaluation), shifted and projected.
    pub fn cdrl_target(&mut self, tr: &Transition, mode: &Mode, tie_break: TieBreak) -> (Vec<f64>, bool) {
        let x = tr.next_state;
        if self.terminal[x] {
            return self.cdrl_target_for_action(tr, 0);
        }
        match mode {
            Mode::Control => {
                let best = maximizers(&self.row_means(x));
                match tie_break {
                    TieBreak::LowestIndex => self.cdrl_target_for_action(tr, best[0]),
                    TieBreak::Random(_) => {
                        let a = *best.choose(&mut self.rng).expect("non-empty");
                        self.cdrl_target_for_action(tr, a)
                    }
                    TieBreak::UniformMix => {
                        let mut out = vec![0.0; self.grid.len()];
                        let share = 1.0 / best.len() as f64;
                        let mut in_range = true;
                        for &a in &best {
                            in_range &= self.accumulate_shifted(&mut out, tr, a, share);
                        }
                        (out, in_range)
                    }
                }
            }
            Mode::Eval(pi) => {
                let mut out = vec![0.0; self.grid.len()];
                let mut in_range = true;
                for (a, &w) in pi.row(x).iter().enumerate() {
                    if w > 0.0 {
                        in_range &= self.accumulate_shifted(&mut out, tr, a, w);
                    }
                }
                (out, in_range)
            }
        }
    }

    fn begin_update(&mut self, tr: &Transition, alpha: f64, in_range: bool) {
        let i = tr.state * self.n_actions + tr.action;
        self.visits[i] += 1;
        self.t += 1;
        if !in_range {
            self.range_violations += 1;
        }
        for p in self.probs_mut(tr.state, tr.action) {
            *p *= 1.0 - alpha;
        }
    }

    /// `η(x,a) <- (1 - α) η(x,a) + α Π_C(δ_z)` for an explicit `α` in `[0, 1]`.
    pub fn mix_split(&mut self, tr: &Transition, split: DiracSplit, alpha: f64, in_range: bool) {
        self.begin_update(tr, alpha, in_range);
        split.accumulate(self.probs_mut(tr.state, tr.action), alpha);
    }

    /// `η(x,a) <- (1 - α) η(x,a) + α target` for a dense target.
    pub fn mix_dense(&mut self, tr: &Transition, target: &[f64], alpha: f64, in_range: bool) {
        self.begin_update(tr, alpha, in_range);
        for (p, t) in self.probs_mut(tr.state, tr.action).iter_mut().zip(target) {
            *p += alpha * t;
        }
    }

    /// One-step categorical update with the scheduled step size.
    pub fn os_cdrl_step(&mut self, tr: &Transition, mode: &Mode, schedule: &StepSizeSchedule) -> StepReport {
        let alpha = schedule.alpha(self.visits(tr.state, tr.action));
        let (z, split) = self.os_target(tr, mode);
        let in_range = self.in_range(z);
        self.mix_split(tr, split, alpha, in_range);
        StepReport { alpha, in_range }
    }

    /// CDRL update with the scheduled step size.
    pub fn cdrl_step(
        &mut self,
        tr: &Transition,
        mode: &Mode,
        tie_break: TieBreak,
        schedule: &StepSizeSchedule,
    ) -> StepReport {
        let alpha = schedule.alpha(self.visits(tr.state, tr.action));
        let (target, in_range) = self.cdrl_target(tr, mode, tie_break);
        self.mix_dense(tr, &target, alpha, in_range);
        StepReport { alpha, in_range }
    }

    pub fn step(
        &mut self,
        tr: &Transition,
        mode: &Mode,
        algorithm: Algorithm,
        schedule: &StepSizeSchedule,
    ) -> StepReport {
        match algorithm {
            Algorithm::OneStep => self.os_cdrl_step(tr, mode, schedule),
            Algorithm::Cdrl(tb) => self.cdrl_step(tr, mode, tb, schedule),
        }
    }

    /// ε-greedy over the means with lowest-index ties (control), or a draw
    /// from `pi` (evaluation).
    pub fn behavior_action(&mut self, x: usize, mode: &Mode, epsilon: f64) -> usize {
        match mode {
            Mode::Eval(pi) => pi.sample(x, &mut self.rng),
            Mode::Control => {
                if self.rng.random::<f64>() < epsilon {
                    self.rng.random_range(0..self.n_actions)
                } else {
                    maximizers(&self.row_means(x))[0]
                }
            }
        }
    }
}

/// Settings shared by every seed of a learning run.
#[derive(Debug, Clone)]
pub struct LearningConfig {
    pub grid: Grid,
    pub mode: Mode,
    pub algorithm: Algorithm,
    pub schedule: StepSizeSchedule,
    pub exploration: ExplorationSchedule,
    pub init: Initialization,
    pub n_steps: u64,
    /// Records are taken at step 0, every `log_every` steps and at the end.
    pub log_every: u64,
    /// Pairs whose probability vectors are copied into every record.
    pub tracked: Vec<(usize, usize)>,
    /// Copy the full mean Q-function into every record.
    pub record_q: bool,
}

impl LearningConfig {
    pub fn new(grid: Grid, mode: Mode, n_steps: u64) -> Self {
        Self {
            grid,
            mode,
            algorithm: Algorithm::OneStep,
            schedule: StepSizeSchedule::default(),
            exploration: ExplorationSchedule::default(),
            init: Initialization::default(),
            n_steps,
            log_every: 1,
            tracked: Vec::new(),
            record_q: false,
        }
    }

    pub fn validate(&self, env: &EpisodicEnv) -> Result<()> {
        self.schedule.validate()?;
        self.exploration.validate()?;
        if self.n_steps == 0 {
            return Err(invalid_param("n_steps", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(invalid_param("log_every", "must be at least 1"));
        }
        if let Mode::Eval(pi) = &self.mode {
            pi.check_shape(env.mdp())?;
        }
        for &(x, a) in &self.tracked {
            env.mdp().check_pair(x, a)?;
        }
        Ok(())
    }
}

/// Fixed point and scalar values the records are measured against.
#[derive(Debug, Clone)]
pub struct Reference {
    pub eta: Option<CategoricalCollection>,
    pub q: Option<QFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningRecord {
    pub step: u64,
    pub seed: u64,
    pub w1_to_reference: Option<f64>,
    pub q_error_sup: Option<f64>,
    /// `||Q_t - Q_ref||_2^2`.
    pub q_error_sq: Option<f64>,
    /// Cumulative count of updates whose target left the grid.
    pub range_violations: u64,
    pub epsilon: f64,
    /// Average step size since the previous record.
    pub mean_alpha: f64,
    #[serde(skip)]
    pub tracked_probs: Vec<Vec<f64>>,
    /// Row-major `Q_t` when `record_q` is set, else empty.
    #[serde(skip)]
    pub q_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LearningRun {
    pub seed: u64,
    pub records: Vec<LearningRecord>,
    pub state: LearnerState,
}

fn record(
    state: &LearnerState,
    seed: u64,
    cfg: &LearningConfig,
    reference: Option<&Reference>,
    epsilon: f64,
    mean_alpha: f64,
) -> Result<LearningRecord> {
    let (mut w1, mut sup, mut sq) = (None, None, None);
    if let Some(r) = reference {
        if let Some(eta) = &r.eta {
            w1 = Some(sup_w1_categorical(&state.to_collection(), eta)?);
        }
        if let Some(q) = &r.q {
            let cur = state.q_function();
            sup = Some(cur.sup_distance(q));
            sq = Some(cur.squared_distance(q));
        }
    }
    Ok(LearningRecord {
        step: state.t,
        seed,
        w1_to_reference: w1,
        q_error_sup: sup,
        q_error_sq: sq,
        range_violations: state.range_violations,
        epsilon,
        mean_alpha,
        tracked_probs: cfg.tracked.iter().map(|&(x, a)| state.probs(x, a).to_vec()).collect(),
        q_values: if cfg.record_q {
            state.q_function().values().to_vec()
        } else {
            Vec::new()
        },
    })
}

/// Runs one learner for `cfg.n_steps` transitions. Episodes restart at the
/// initial state after a terminal state is reached. Bit-for-bit
/// reproducible for a given seed.
pub fn run_learning(
    env: &EpisodicEnv,
    cfg: &LearningConfig,
    seed: u64,
    reference: Option<&Reference>,
) -> Result<LearningRun> {
    cfg.validate(env)?;
    let mut state = LearnerState::new(env, cfg.grid.clone(), cfg.init, seed);
    let mut records = vec![record(&state, seed, cfg, reference, cfg.exploration.epsilon(0), 0.0)?];
    let mut x = env.reset(&mut state.rng);
    let (mut alpha_sum, mut alpha_n) = (0.0, 0u64);
    for t in 0..cfg.n_steps {
        let epsilon = match cfg.mode {
            Mode::Control => cfg.exploration.epsilon(t),
            Mode::Eval(_) => 0.0,
        };
        let a = state.behavior_action(x, &cfg.mode, epsilon);
        let tr = env.sample_step(x, a, &mut state.rng)?;
        let report = state.step(&tr, &cfg.mode, cfg.algorithm, &cfg.schedule);
        alpha_sum += report.alpha;
        alpha_n += 1;
        x = if env.is_terminal(tr.next_state) {
            env.reset(&mut state.rng)
        } else {
            tr.next_state
        };
        let step = t + 1;
        if step % cfg.log_every == 0 || step == cfg.n_steps {
            records.push(record(&state, seed, cfg, reference, epsilon, alpha_sum / alpha_n as f64)?);
            alpha_sum = 0.0;
            alpha_n = 0;
        }
    }
    Ok(LearningRun { seed, records, state })
}

/// Independent runs for each seed, returned in the order of `seeds`.
pub fn run_seeds(
    env: &EpisodicEnv,
    cfg: &LearningConfig,
    seeds: &[u64],
    reference: Option<&Reference>,
) -> Result<Vec<LearningRun>> {
    par::try_map_range(seeds.len(), |i| run_learning(env, cfg, seeds[i], reference))
}

/// Median timings of target construction at one support size.
#[derive(Debug, Clone, Serialize)]
pub struct TargetTiming {
    pub k: usize,
    pub cdrl_ns: f64,
    pub one_step_ns: f64,
    pub ratio: f64,
    /// Largest number of cells a one-step target touched.
    pub one_step_max_cells: usize,
}

/// Target inputs for one timed batch.
struct TargetCase {
    reward: f64,
    next_probs: Vec<f64>,
    next_mean: f64,
}

const BATCH: usize = 64;

/// Times CDRL and one-step target construction on random inputs.
///
/// Each repetition builds a batch of targets of each kind; the medians of
/// the per-target times over `n_reps` repetitions are reported.
pub fn target_microbenchmark(k_values: &[usize], n_reps: usize, seed: u64) -> Result<Vec<TargetTiming>> {
    if n_reps == 0 {
        return Err(invalid_param("n_reps", "must be at least 1"));
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_param("k_values", "must be strictly increasing"));
    }
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let grid = Grid::uniform(0.0, 10.0, k)?;
        let cases: Vec<TargetCase> = (0..BATCH)
            .map(|_| {
                let next = crate::random::random_categorical(&mut rng, &grid);
                TargetCase {
                    reward: rng.random_range(0.0..1.0),
                    next_mean: next.mean(),
                    next_probs: next.probs().to_vec(),
                }
            })
            .collect();
        let mut cdrl = Vec::with_capacity(n_reps);
        let mut os = Vec::with_capacity(n_reps);
        let mut max_cells = 0;
        for _ in 0..n_reps {
            let start = Instant::now();
            for c in &cases {
                let mut out = vec![0.0; k];
                for (&p, &z) in c.next_probs.iter().zip(grid.points()) {
                    grid.project(c.reward + gamma * z).accumulate(&mut out, p);
                }
                std::hint::black_box(&out);
            }
            cdrl.push(start.elapsed().as_nanos() as f64 / BATCH as f64);

            let start = Instant::now();
            for c in &cases {
                let split = grid.project(c.reward + gamma * c.next_mean);
                max_cells = max_cells.max(std::hint::black_box(split).cells().len());
            }
            os.push(start.elapsed().as_nanos() as f64 / BATCH as f64);
        }
        let (cdrl_ns, one_step_ns) = (median(&mut cdrl), median(&mut os));
        rows.push(TargetTiming {
            k,
            cdrl_ns,
            one_step_ns,
            ratio: cdrl_ns / one_step_ns.max(1e-3),
            one_step_max_cells: max_cells,
        });
    }
    Ok(rows)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Writes `(step, seed, w1_to_reference, q_error_sup, range_violations,
/// epsilon, mean_alpha)` rows for all runs in order.
pub fn write_records_csv<W: std::io::Write>(runs: &[LearningRun], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "seed",
        "w1_to_reference",
        "q_error_sup",
        "range_violations",
        "epsilon",
        "mean_alpha",
    ])?;
    for run in runs {
        for r in &run.records {
            w.serialize((
                r.step,
                r.seed,
                r.w1_to_reference,
                r.q_error_sup,
                r.range_violations,
                r.epsilon,
                r.mean_alpha,
            ))?;
        }
    }
    w.flush()?;
    Ok(())
}
