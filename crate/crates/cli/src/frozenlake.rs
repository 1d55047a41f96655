//! Categorical Q-learning with the one-step target on Frozen Lake.

use std::path::PathBuf;

use osdrl_core::dp::solve_q_star;
use osdrl_core::learning::{
    run_seeds, write_records_csv, ExplorationSchedule, Initialization, LearningConfig, LearningRun, Reference,
    StepSizeSchedule,
};
use osdrl_core::mdp::make_frozen_lake;
use osdrl_core::operators::{Mode, QFunction};
use serde::{Deserialize, Serialize};

use crate::config::{self, check, core_param, ExperimentConfig, Overrides};
use crate::output::ExperimentDir;
use crate::svg::LineChart;
use crate::{CliError, Outcome, Result, Status};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenLakeConfig {
    pub experiment: Option<String>,
    /// Seeds are `seed, seed + 1, ..., seed + seeds - 1`.
    pub seed: u64,
    pub out: PathBuf,
    pub seeds: u64,
    pub steps: u64,
    pub grid: Vec<f64>,
    pub goal_reward: f64,
    pub slippery: bool,
    pub schedule: StepSizeSchedule,
    pub exploration: ExplorationSchedule,
    pub init: Initialization,
    pub log_every: u64,
    /// `(state, action)` pairs whose probabilities are written out.
    pub tracked: Vec<(usize, usize)>,
    /// Trailing window, in steps, of the smoothed error curve.
    pub smoothing_window: u64,
    /// Step the final error is compared against.
    pub early_step: u64,
}

impl Default for FrozenLakeConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out: config::default_out(),
            seeds: 100,
            steps: 100_000,
            grid: vec![0.0, 10.0, 20.0],
            goal_reward: 20.0,
            slippery: true,
            schedule: StepSizeSchedule::Constant { alpha: 0.6 },
            exploration: ExplorationSchedule::default(),
            init: Initialization::Uniform,
            log_every: 100,
            tracked: vec![(6, 3), (4, 2), (10, 0)],
            smoothing_window: 1000,
            early_step: 1000,
        }
    }
}

impl ExperimentConfig for FrozenLakeConfig {
    const NAME: &'static str = "frozenlake";

    fn experiment(&self) -> Option<&str> {
        self.experiment.as_deref()
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.steps = n;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    fn validate(&self) -> Result<()> {
        config::grid("grid", &self.grid)?;
        check("seeds", self.seeds >= 1, "must be at least 1")?;
        check("steps", self.steps >= 1, "must be at least 1")?;
        check("log_every", self.log_every >= 1, "must be at least 1")?;
        check("smoothing_window", self.smoothing_window >= 1, "must be at least 1")?;
        check(
            "early_step",
            self.early_step <= self.steps && self.early_step.is_multiple_of(self.log_every),
            format!(
                "must be a multiple of log_every ({}) no larger than steps ({})",
                self.log_every, self.steps
            ),
        )?;
        core_param("schedule", self.schedule.validate())?;
        core_param("exploration", self.exploration.validate())?;
        let env = make_frozen_lake(self.slippery, self.goal_reward).map_err(|e| CliError::config("goal_reward", e))?;
        for &(x, a) in &self.tracked {
            core_param("tracked", env.mdp().check_pair(x, a))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    pub step: u64,
    /// Mean over seeds of `||Q_t - Q*||_2^2`.
    pub mean_sq_error: f64,
    /// `||mean_seeds(Q_t) - Q*||_2^2`.
    pub sq_error_of_mean_q: f64,
    pub smoothed_mean_sq_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrozenLakeReport {
    pub experiment: &'static str,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub v_star_start: f64,
    pub early_step: u64,
    pub mean_sq_error_early: f64,
    pub mean_sq_error_final: f64,
    /// `mean_sq_error_final / mean_sq_error_early`.
    pub ratio: f64,
    pub sq_error_of_mean_q_early: f64,
    pub sq_error_of_mean_q_final: f64,
    pub ratio_of_mean_q: f64,
    /// Smoothed curve over the last tenth of the run is non-increasing.
    pub trend_non_increasing: bool,
    /// Smoothed error at the end is no larger than at the start of the last tenth.
    pub trend_decreasing_overall: bool,
    pub max_normalization_error: f64,
    pub normalized: bool,
    pub range_violations: u64,
    pub status: Status,
}

pub struct FrozenLakeRun {
    pub report: FrozenLakeReport,
    pub errors: Vec<ErrorRow>,
    pub runs: Vec<LearningRun>,
}

fn mean_q(runs: &[LearningRun], i: usize, n_states: usize, n_actions: usize) -> QFunction {
    let mut acc = vec![0.0; n_states * n_actions];
    for run in runs {
        for (s, v) in acc.iter_mut().zip(&run.records[i].q_values) {
            *s += v;
        }
    }
    for s in &mut acc {
        *s /= runs.len() as f64;
    }
    QFunction::new(n_states, n_actions, acc).expect("finite means")
}

pub fn compute(cfg: &FrozenLakeConfig) -> Result<FrozenLakeRun> {
    let env = make_frozen_lake(cfg.slippery, cfg.goal_reward)?;
    let mdp = env.mdp();
    let q_star = solve_q_star(mdp, 1e-12)?;
    let grid = config::grid("grid", &cfg.grid)?;
    let mut lc = LearningConfig::new(grid, Mode::Control, cfg.steps);
    lc.schedule = cfg.schedule;
    lc.exploration = cfg.exploration;
    lc.init = cfg.init;
    lc.log_every = cfg.log_every;
    lc.tracked = cfg.tracked.clone();
    lc.record_q = true;
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| cfg.seed + i).collect();
    let reference = Reference {
        eta: None,
        q: Some(q_star.clone()),
    };
    let runs = run_seeds(&env, &lc, &seeds, Some(&reference))?;

    let n_records = runs[0].records.len();
    let window = (cfg.smoothing_window / cfg.log_every).max(1) as usize;
    let mut errors: Vec<ErrorRow> = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mean_sq = runs.iter().map(|r| r.records[i].q_error_sq.expect("reference q")).sum::<f64>() / runs.len() as f64;
        let of_mean = mean_q(&runs, i, mdp.n_states(), mdp.n_actions()).squared_distance(&q_star);
        errors.push(ErrorRow {
            step: runs[0].records[i].step,
            mean_sq_error: mean_sq,
            sq_error_of_mean_q: of_mean,
            smoothed_mean_sq_error: 0.0,
        });
    }
    for i in 0..n_records {
        let from = (i + 1).saturating_sub(window);
        let slice = &errors[from..=i];
        errors[i].smoothed_mean_sq_error = slice.iter().map(|e| e.mean_sq_error).sum::<f64>() / slice.len() as f64;
    }

    let early = errors.iter().position(|e| e.step == cfg.early_step).expect("early step is logged");
    let last = errors.last().expect("non-empty");
    let tail_start = errors
        .iter()
        .position(|e| e.step as f64 >= 0.9 * cfg.steps as f64)
        .unwrap_or(n_records - 1);
    let tail = &errors[tail_start..];
    let trend_non_increasing = tail
        .windows(2)
        .all(|w| w[1].smoothed_mean_sq_error <= w[0].smoothed_mean_sq_error);
    let trend_decreasing_overall = last.smoothed_mean_sq_error <= tail[0].smoothed_mean_sq_error;

    let mut max_norm: f64 = 0.0;
    for run in &runs {
        for rec in &run.records {
            for p in &rec.tracked_probs {
                let neg = p.iter().copied().fold(0.0, f64::min).abs();
                max_norm = max_norm.max((p.iter().sum::<f64>() - 1.0).abs()).max(neg);
            }
        }
    }
    let normalized = max_norm <= NORMALIZATION_TOL;
    let v_star = q_star.greedy_values();
    let report = FrozenLakeReport {
        experiment: FrozenLakeConfig::NAME,
        seeds,
        steps: cfg.steps,
        v_star_start: v_star[0],
        early_step: cfg.early_step,
        mean_sq_error_early: errors[early].mean_sq_error,
        mean_sq_error_final: last.mean_sq_error,
        ratio: last.mean_sq_error / errors[early].mean_sq_error,
        sq_error_of_mean_q_early: errors[early].sq_error_of_mean_q,
        sq_error_of_mean_q_final: last.sq_error_of_mean_q,
        ratio_of_mean_q: last.sq_error_of_mean_q / errors[early].sq_error_of_mean_q,
        trend_non_increasing,
        trend_decreasing_overall,
        max_normalization_error: max_norm,
        normalized,
        range_violations: runs.iter().map(|r| r.state.range_violations()).sum(),
        status: if normalized { Status::Success } else { Status::PropertyFailure },
    };
    Ok(FrozenLakeRun { report, errors, runs })
}

pub fn run(cfg: &FrozenLakeConfig) -> Result<Outcome> {
    let r = compute(cfg)?;
    let dir = ExperimentDir::create(&cfg.out, FrozenLakeConfig::NAME)?;
    let k = cfg.grid.len();
    let header: Vec<String> = ["seed", "step", "state", "action"]
        .into_iter()
        .map(String::from)
        .chain((1..=k).map(|i| format!("p{i}")))
        .collect();
    dir.csv("probabilities", &header, |w| {
        for run in &r.runs {
            for rec in &run.records {
                for (&(x, a), p) in cfg.tracked.iter().zip(&rec.tracked_probs) {
                    let mut row = vec![run.seed.to_string(), rec.step.to_string(), x.to_string(), a.to_string()];
                    row.extend(p.iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })?;
    dir.csv_rows("q_error", &r.errors)?;
    {
        let path = dir.path().join("records.csv");
        let f = std::fs::File::create(&path).map_err(|source| CliError::Io { path, source })?;
        write_records_csv(&r.runs, std::io::BufWriter::new(f))?;
    }

    let pts = |f: fn(&ErrorRow) -> f64| r.errors.iter().map(|e| (e.step as f64, f(e))).collect::<Vec<_>>();
    let chart = LineChart::new("Q-function error", "step", "squared error")
        .log_y()
        .add("mean over seeds", pts(|e| e.mean_sq_error))
        .add("smoothed", pts(|e| e.smoothed_mean_sq_error))
        .add("error of mean Q", pts(|e| e.sq_error_of_mean_q));
    dir.svg("q_error", &chart.render())?;
    for (i, &(x, a)) in cfg.tracked.iter().enumerate() {
        let mut chart = LineChart::new(format!("p_k({x}, {a}), mean over seeds"), "step", "probability");
        let n_records = r.runs[0].records.len();
        for (kk, z) in cfg.grid.iter().enumerate() {
            let series = (0..n_records)
                .map(|j| {
                    let m = r.runs.iter().map(|run| run.records[j].tracked_probs[i][kk]).sum::<f64>()
                        / r.runs.len() as f64;
                    (r.runs[0].records[j].step as f64, m)
                })
                .collect();
            chart = chart.add(format!("z = {z}"), series);
        }
        dir.svg(&format!("probs_x{x}_a{a}"), &chart.render())?;
    }
    dir.report(&r.report)?;
    let rep = &r.report;
    Ok(Outcome {
        status: rep.status,
        summary: format!(
            "mean squared Q error {:.3} at step {} -> {:.3} at step {} (ratio {:.3}; error of seed-mean Q ratio {:.3})",
            rep.mean_sq_error_early, rep.early_step, rep.mean_sq_error_final, rep.steps, rep.ratio, rep.ratio_of_mean_q
        ),
        dir: dir.path().to_path_buf(),
    })
}
