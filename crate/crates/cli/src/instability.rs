//! Projected full greedy operator against the projected one-step operator
//! on the tie-degenerate toy MDP.

use std::path::PathBuf;

use osdrl_core::distributions::{CategoricalCollection, CategoricalDistribution, Grid};
use osdrl_core::dp::{
    detect_oscillation, iterate, projected_fixed_points, solve_q_star, IterationTrace, OscillationReport, Verdict,
    DEFAULT_ATOM_CAP,
};
use osdrl_core::learning::Initialization;
use osdrl_core::mdp::{toy_mdp_with_rewards, TabularMdp};
use osdrl_core::operators::{projected, FullOpt, Mode, OneStepOpt, QFunction, TieBreak};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{self, check, ExperimentConfig, Overrides};
use crate::output::ExperimentDir;
use crate::svg::LineChart;
use crate::{CliError, Outcome, Result, Status};

/// Largest number of perturbed instances the search may try.
pub const MAX_SEARCH: usize = 1000;
const TIE_CHECK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstabilityConfig {
    pub experiment: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: Vec<f64>,
    /// Reward on the `(x1, a2) -> x2` transition.
    pub exit_reward: f64,
    /// Reward on the `(x1, a2) -> x1` self-loop.
    pub stay_reward: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub detector_tol: f64,
    /// One-step branch target distance to its fixed point.
    pub residual_tol: f64,
    pub tie_break: TieBreak,
    pub initial: Initialization,
    pub search_budget: usize,
    /// Exit rewards are drawn uniformly from this interval; the stay reward
    /// keeps `exit + stay` fixed.
    pub search_exit_range: [f64; 2],
}

impl Default for InstabilityConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out: config::default_out(),
            grid: vec![0.0, 1.9, 2.1, 10.0],
            exit_reward: 0.0,
            stay_reward: 3.0,
            iterations: 200,
            burn_in: 100,
            detector_tol: 1e-6,
            residual_tol: 1e-8,
            tie_break: TieBreak::LowestIndex,
            initial: Initialization::Uniform,
            search_budget: MAX_SEARCH,
            search_exit_range: [0.0, 3.0],
        }
    }
}

impl ExperimentConfig for InstabilityConfig {
    const NAME: &'static str = "instability";

    fn experiment(&self) -> Option<&str> {
        self.experiment.as_deref()
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.iterations = usize::try_from(n).unwrap_or(usize::MAX);
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    fn validate(&self) -> Result<()> {
        config::grid("grid", &self.grid)?;
        check(
            "iterations",
            self.iterations > self.burn_in + osdrl_core::dp::MAX_PERIOD,
            format!("must be at least burn_in + 5 = {}", self.burn_in + 5),
        )?;
        check("detector_tol", self.detector_tol > 0.0, "must be positive")?;
        check("residual_tol", self.residual_tol > 0.0, "must be positive")?;
        check(
            "search_budget",
            self.search_budget <= MAX_SEARCH,
            format!("at most {MAX_SEARCH}"),
        )?;
        let [lo, hi] = self.search_exit_range;
        check(
            "search_exit_range",
            lo.is_finite() && hi.is_finite() && lo < hi,
            "must be a finite interval [lo, hi] with lo < hi",
        )?;
        let mdp = toy_mdp_with_rewards(self.exit_reward, self.stay_reward)
            .map_err(|e| CliError::config("exit_reward", e))?;
        let q = solve_q_star(&mdp, 1e-12)?;
        check(
            "stay_reward",
            (q.get(0, 0) - q.get(0, 1)).abs() <= TIE_CHECK,
            format!(
                "optimal actions at x1 are not tied (Q = {:.6}, {:.6}); need exit_reward + stay_reward = 3",
                q.get(0, 0),
                q.get(0, 1)
            ),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OneStepBranch {
    pub exit_reward: f64,
    pub stay_reward: f64,
    pub converged: bool,
    /// Final `W̄_1` distance to the projected fixed point.
    pub residual: f64,
    /// First iteration whose residual fell below the tolerance.
    pub converged_at: Option<usize>,
    pub limit_x1_a1: Vec<f64>,
    pub limit_x1_a2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdrlBranch {
    pub exit_reward: f64,
    pub stay_reward: f64,
    pub verdict: Verdict,
    pub drift: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    Search,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchRow {
    pub index: usize,
    pub exit_reward: f64,
    pub stay_reward: f64,
    pub verdict: String,
    pub drift_1: f64,
    pub drift_2: f64,
    pub drift_3: f64,
    pub drift_4: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstabilityReport {
    pub experiment: &'static str,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub tie_break: TieBreak,
    pub one_step: OneStepBranch,
    /// The default instance's detector result.
    pub cdrl_default: CdrlBranch,
    /// The first triggering instance, if any.
    pub cdrl_trigger: Option<CdrlBranch>,
    pub trigger_source: Source,
    pub search_evaluated: usize,
    pub status: Status,
}

struct Branch {
    trace: IterationTrace<CategoricalDistribution>,
    detector: OscillationReport,
}

fn start(cfg: &InstabilityConfig, grid: &Grid) -> Result<CategoricalCollection> {
    let k = grid.len();
    let d = match cfg.initial {
        Initialization::Uniform => CategoricalDistribution::new(grid.clone(), vec![1.0 / k as f64; k])?,
        Initialization::FirstAtom => CategoricalDistribution::point_mass(grid.clone(), 0)?,
    };
    Ok(CategoricalCollection::filled(2, 2, d))
}

fn cdrl_branch(cfg: &InstabilityConfig, grid: &Grid, mdp: &TabularMdp) -> Result<Branch> {
    let op = projected(
        FullOpt {
            mdp,
            tie_break: cfg.tie_break,
        },
        grid.clone(),
    );
    let trace = iterate(&op, start(cfg, grid)?, cfg.iterations, None, DEFAULT_ATOM_CAP)?;
    let detector = detect_oscillation(&trace.iterates, cfg.burn_in, cfg.detector_tol)?;
    Ok(Branch { trace, detector })
}

fn summary(exit: f64, stay: f64, d: &OscillationReport) -> CdrlBranch {
    CdrlBranch {
        exit_reward: exit,
        stay_reward: stay,
        verdict: d.verdict,
        drift: d.drift,
    }
}

fn verdict_name(v: Verdict) -> String {
    match v {
        Verdict::Converged => "converged".into(),
        Verdict::Periodic { period } => format!("periodic_{period}"),
        Verdict::Aperiodic => "aperiodic".into(),
    }
}

/// Everything the command computes, before anything is written.
pub struct InstabilityRun {
    pub report: InstabilityReport,
    pub search: Vec<SearchRow>,
    one_step_trace: IterationTrace<CategoricalDistribution>,
    one_step_residuals: Vec<f64>,
    cdrl_trace: IterationTrace<CategoricalDistribution>,
}

pub fn compute(cfg: &InstabilityConfig) -> Result<InstabilityRun> {
    let grid = config::grid("grid", &cfg.grid)?;
    let mdp = toy_mdp_with_rewards(cfg.exit_reward, cfg.stay_reward)?;

    let fp = projected_fixed_points(&mdp, &grid, cfg.residual_tol, &Mode::Control)?;
    let os = iterate(
        &projected(OneStepOpt { mdp: &mdp }, grid.clone()),
        start(cfg, &grid)?,
        cfg.iterations,
        Some(&fp.eta),
        DEFAULT_ATOM_CAP,
    )?;
    let residuals = os.dist_to_reference.clone().expect("reference was given");
    let residual = *residuals.last().expect("non-empty");
    let last = os.last();
    let one_step = OneStepBranch {
        exit_reward: cfg.exit_reward,
        stay_reward: cfg.stay_reward,
        converged: residual < cfg.residual_tol,
        residual,
        converged_at: residuals.iter().position(|&r| r < cfg.residual_tol),
        limit_x1_a1: last.get(0, 0).probs().to_vec(),
        limit_x1_a2: last.get(0, 1).probs().to_vec(),
    };

    let default = cdrl_branch(cfg, &grid, &mdp)?;
    let cdrl_default = summary(cfg.exit_reward, cfg.stay_reward, &default.detector);
    let mut search = Vec::new();
    let (mut trigger, mut source, mut shown) = (None, Source::None, default.trace.clone());
    if default.detector.is_oscillating() {
        trigger = Some(cdrl_default.clone());
        source = Source::Default;
        shown = default.trace;
    } else {
        let total = cfg.exit_reward + cfg.stay_reward;
        let [lo, hi] = cfg.search_exit_range;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for index in 0..cfg.search_budget {
            let exit = rng.random_range(lo..hi);
            let stay = total - exit;
            let candidate = toy_mdp_with_rewards(exit, stay)?;
            let branch = match cdrl_branch(cfg, &grid, &candidate) {
                Ok(b) => b,
                Err(CliError::Core(osdrl_core::Error::RangeCondition(_))) => continue,
                Err(e) => return Err(e),
            };
            let d = &branch.detector;
            search.push(SearchRow {
                index,
                exit_reward: exit,
                stay_reward: stay,
                verdict: verdict_name(d.verdict),
                drift_1: d.drift[0],
                drift_2: d.drift[1],
                drift_3: d.drift[2],
                drift_4: d.drift[3],
            });
            if d.is_oscillating() {
                trigger = Some(summary(exit, stay, d));
                source = Source::Search;
                shown = branch.trace;
                break;
            }
        }
    }
    let status = if !one_step.converged {
        Status::PropertyFailure
    } else if trigger.is_some() {
        Status::Success
    } else {
        Status::Inconclusive
    };
    Ok(InstabilityRun {
        report: InstabilityReport {
            experiment: InstabilityConfig::NAME,
            seed: cfg.seed,
            grid: cfg.grid.clone(),
            tie_break: cfg.tie_break,
            one_step,
            cdrl_default,
            cdrl_trigger: trigger,
            trigger_source: source,
            search_evaluated: search.len(),
            status,
        },
        search,
        one_step_trace: os,
        one_step_residuals: residuals,
        cdrl_trace: shown,
    })
}

fn prob_rows(
    w: &mut csv::Writer<impl std::io::Write>,
    trace: &IterationTrace<CategoricalDistribution>,
) -> csv::Result<()> {
    for (n, mu) in trace.iterates.iter().enumerate() {
        for ((x, a), d) in mu.iter() {
            for (z, p) in d.grid().points().iter().zip(d.probs()) {
                w.serialize((n, x, a, z, p))?;
            }
        }
    }
    Ok(())
}

fn prob_chart(title: &str, trace: &IterationTrace<CategoricalDistribution>, x: usize, a: usize) -> String {
    let grid = trace.iterates[0].get(x, a).grid().clone();
    let mut chart = LineChart::new(title, "iteration", "probability");
    for (k, z) in grid.points().iter().enumerate() {
        let pts = trace
            .iterates
            .iter()
            .enumerate()
            .map(|(n, mu)| (n as f64, mu.get(x, a).probs()[k]))
            .collect();
        chart = chart.add(format!("z = {z}"), pts);
    }
    chart.render()
}

fn q_points(trace: &IterationTrace<CategoricalDistribution>, x: usize, a: usize) -> Vec<(f64, f64)> {
    trace
        .iterates
        .iter()
        .enumerate()
        .map(|(n, mu)| (n as f64, QFunction::from_means(mu).get(x, a)))
        .collect()
}

pub fn run(cfg: &InstabilityConfig) -> Result<Outcome> {
    let r = compute(cfg)?;
    let dir = ExperimentDir::create(&cfg.out, InstabilityConfig::NAME)?;
    let header = ["iteration", "state", "action", "z", "prob"];
    dir.csv("one_step_probs", header, |w| prob_rows(w, &r.one_step_trace))?;
    dir.csv("cdrl_probs", header, |w| prob_rows(w, &r.cdrl_trace))?;
    dir.csv(
        "q_values",
        ["branch", "iteration", "state", "action", "q"],
        |w| {
            for (name, trace) in [("one_step", &r.one_step_trace), ("cdrl", &r.cdrl_trace)] {
                for (n, mu) in trace.iterates.iter().enumerate() {
                    for ((x, a), d) in mu.iter() {
                        w.serialize((name, n, x, a, d.mean()))?;
                    }
                }
            }
            Ok(())
        },
    )?;
    dir.csv(
        "distances",
        ["branch", "iteration", "dist_to_next", "dist_to_fixed_point"],
        |w| {
            for (n, d) in r.one_step_trace.dist_to_next.iter().enumerate() {
                w.serialize(("one_step", n, d, r.one_step_residuals[n + 1]))?;
            }
            for (n, d) in r.cdrl_trace.dist_to_next.iter().enumerate() {
                w.serialize(("cdrl", n, d, None::<f64>))?;
            }
            Ok(())
        },
    )?;
    dir.csv_rows("search", &r.search)?;

    for (a, label) in [(0, "a1"), (1, "a2")] {
        dir.svg(
            &format!("one_step_x1_{label}"),
            &prob_chart(&format!("one-step: p(x1, {label})"), &r.one_step_trace, 0, a),
        )?;
        dir.svg(
            &format!("cdrl_x1_{label}"),
            &prob_chart(&format!("categorical: p(x1, {label})"), &r.cdrl_trace, 0, a),
        )?;
    }
    for (name, trace) in [("one_step", &r.one_step_trace), ("cdrl", &r.cdrl_trace)] {
        let chart = LineChart::new(format!("{name}: Q(x1, .)"), "iteration", "Q")
            .add("Q(x1, a1)", q_points(trace, 0, 0))
            .add("Q(x1, a2)", q_points(trace, 0, 1));
        dir.svg(&format!("{name}_q"), &chart.render())?;
    }
    dir.report(&r.report)?;

    let rep = &r.report;
    let cdrl = match (&rep.cdrl_trigger, rep.trigger_source) {
        (Some(t), Source::Default) => format!("default instance triggers the detector ({:?})", t.verdict),
        (Some(t), _) => format!(
            "search instance {} of {} triggers ({:?}) with exit reward {:.6}",
            rep.search_evaluated, cfg.search_budget, t.verdict, t.exit_reward
        ),
        (None, _) => format!(
            "no trigger after {} perturbations: inconclusive",
            rep.search_evaluated
        ),
    };
    Ok(Outcome {
        status: rep.status,
        summary: format!(
            "one-step residual {:.3e} (converged: {}); categorical: {cdrl}",
            rep.one_step.residual, rep.one_step.converged
        ),
        dir: dir.path().to_path_buf(),
    })
}
