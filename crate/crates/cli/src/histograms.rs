//! Atom growth of the full operator against the one-step operator under the
//! uniform policy on the toy MDP.

use std::path::PathBuf;

use osdrl_core::distributions::{AtomicCollection, AtomicDistribution};
use osdrl_core::dp::{iterate, IterationTrace};
use osdrl_core::mdp::{toy_mdp_with_rewards, Policy};
use osdrl_core::operators::{FullEval, OneStepEval};
use serde::{Deserialize, Serialize};

use crate::config::{self, check, ExperimentConfig, Overrides};
use crate::output::ExperimentDir;
use crate::svg::LineChart;
use crate::{CliError, Outcome, Result, Status};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramsConfig {
    pub experiment: Option<String>,
    /// Unused; accepted so every command takes `--seed`.
    pub seed: u64,
    pub out: PathBuf,
    /// Number of operator applications.
    pub steps: usize,
    /// Iterations whose histograms are written.
    pub snapshots: Vec<usize>,
    pub bins: usize,
    pub exit_reward: f64,
    pub stay_reward: f64,
    pub atom_cap: usize,
}

impl Default for HistogramsConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out: config::default_out(),
            steps: 4,
            snapshots: vec![0, 2, 4],
            bins: 30,
            exit_reward: 0.0,
            stay_reward: 3.0,
            atom_cap: osdrl_core::dp::DEFAULT_ATOM_CAP,
        }
    }
}

impl ExperimentConfig for HistogramsConfig {
    const NAME: &'static str = "histograms";

    fn experiment(&self) -> Option<&str> {
        self.experiment.as_deref()
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.steps = usize::try_from(n).unwrap_or(usize::MAX);
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    fn validate(&self) -> Result<()> {
        check("bins", self.bins >= 1, "must be at least 1")?;
        check("atom_cap", self.atom_cap >= 1, "must be at least 1")?;
        check(
            "snapshots",
            self.snapshots.iter().all(|&j| j <= self.steps),
            format!("every snapshot must be at most steps = {}", self.steps),
        )?;
        toy_mdp_with_rewards(self.exit_reward, self.stay_reward).map_err(|e| CliError::config("exit_reward", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomCount {
    pub j: usize,
    pub operator: &'static str,
    pub max_atoms: usize,
    pub total_atoms: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramRow {
    pub operator: &'static str,
    pub j: usize,
    pub state: usize,
    pub action: usize,
    pub bin: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramsReport {
    pub experiment: &'static str,
    pub steps: usize,
    pub full_max_atoms: Vec<usize>,
    pub one_step_max_atoms: Vec<usize>,
    /// One-step entries never hold more atoms than there are states.
    pub one_step_bounded: bool,
    pub full_non_decreasing: bool,
    /// Full-operator entries exceed two atoms by the second iteration.
    pub full_exceeds_two_by_j2: bool,
    pub status: Status,
}

pub struct HistogramsRun {
    pub report: HistogramsReport,
    pub counts: Vec<AtomCount>,
    pub histograms: Vec<HistogramRow>,
    full: IterationTrace<AtomicDistribution>,
    one_step: IterationTrace<AtomicDistribution>,
}

/// Bins `d` into `bins` equal cells on `[lo, hi]`; the top edge belongs to
/// the last cell.
pub fn histogram(d: &AtomicDistribution, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for (z, w) in d.iter() {
        let i = (((z - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[i] += w;
    }
    out
}

fn range(ds: &[&AtomicDistribution]) -> (f64, f64) {
    let lo = ds.iter().map(|d| d.min_atom()).fold(f64::INFINITY, f64::min);
    let hi = ds.iter().map(|d| d.max_atom()).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn compute(cfg: &HistogramsConfig) -> Result<HistogramsRun> {
    let mdp = toy_mdp_with_rewards(cfg.exit_reward, cfg.stay_reward)?;
    let pi = Policy::uniform(2, 2);
    let mu0 = AtomicCollection::filled(2, 2, AtomicDistribution::dirac(0.0)?);
    let full = iterate(&FullEval { mdp: &mdp, policy: &pi }, mu0.clone(), cfg.steps, None, cfg.atom_cap)?;
    let one_step = iterate(&OneStepEval { mdp: &mdp, policy: &pi }, mu0, cfg.steps, None, cfg.atom_cap)?;

    let mut counts = Vec::new();
    for j in 0..=cfg.steps {
        for (name, t) in [("full", &full), ("one_step", &one_step)] {
            counts.push(AtomCount {
                j,
                operator: name,
                max_atoms: t.iterates[j].max_atoms(),
                total_atoms: t.iterates[j].total_atoms(),
            });
        }
    }

    let mut histograms = Vec::new();
    for &j in &cfg.snapshots {
        for x in 0..2 {
            for a in 0..2 {
                let (f, o) = (full.iterates[j].get(x, a), one_step.iterates[j].get(x, a));
                let (lo, hi) = range(&[f, o]);
                let width = (hi - lo) / cfg.bins as f64;
                for (name, d) in [("full", f), ("one_step", o)] {
                    for (bin, mass) in histogram(d, lo, hi, cfg.bins).into_iter().enumerate() {
                        histograms.push(HistogramRow {
                            operator: name,
                            j,
                            state: x,
                            action: a,
                            bin,
                            bin_lo: lo + bin as f64 * width,
                            bin_hi: lo + (bin + 1) as f64 * width,
                            mass,
                        });
                    }
                }
            }
        }
    }

    let full_max = full.max_atoms();
    let os_max = one_step.max_atoms();
    let one_step_bounded = os_max.iter().all(|&m| m <= mdp.n_states());
    let full_non_decreasing = full_max.windows(2).all(|w| w[1] >= w[0]);
    let full_exceeds_two_by_j2 = full_max.get(2).is_some_and(|&m| m > 2);
    let ok = one_step_bounded && full_non_decreasing && (cfg.steps < 2 || full_exceeds_two_by_j2);
    Ok(HistogramsRun {
        report: HistogramsReport {
            experiment: HistogramsConfig::NAME,
            steps: cfg.steps,
            full_max_atoms: full_max,
            one_step_max_atoms: os_max,
            one_step_bounded,
            full_non_decreasing,
            full_exceeds_two_by_j2,
            status: if ok { Status::Success } else { Status::PropertyFailure },
        },
        counts,
        histograms,
        full,
        one_step,
    })
}

pub fn run(cfg: &HistogramsConfig) -> Result<Outcome> {
    let r = compute(cfg)?;
    let dir = ExperimentDir::create(&cfg.out, HistogramsConfig::NAME)?;
    dir.csv(
        "atoms",
        ["operator", "j", "state", "action", "atom", "weight"],
        |w| {
            for (name, t) in [("full", &r.full), ("one_step", &r.one_step)] {
                for &j in &cfg.snapshots {
                    for ((x, a), d) in t.iterates[j].iter() {
                        for (z, p) in d.iter() {
                            w.serialize((name, j, x, a, z, p))?;
                        }
                    }
                }
            }
            Ok(())
        },
    )?;
    dir.csv_rows("histograms", &r.histograms)?;
    dir.csv_rows("atom_counts", &r.counts)?;

    let series = |name: &str| -> Vec<(f64, f64)> {
        r.counts
            .iter()
            .filter(|c| c.operator == name)
            .map(|c| (c.j as f64, c.max_atoms as f64))
            .collect()
    };
    let chart = LineChart::new("atoms per entry", "j", "max atoms")
        .add("full", series("full"))
        .add("one-step", series("one_step"));
    dir.svg("atom_counts", &chart.render())?;
    for &j in &cfg.snapshots {
        let mut chart = LineChart::new(format!("(x1, a2) after j = {j}"), "return", "mass");
        for name in ["full", "one_step"] {
            let pts = r
                .histograms
                .iter()
                .filter(|h| h.operator == name && h.j == j && h.state == 0 && h.action == 1)
                .flat_map(|h| [(h.bin_lo, h.mass), (h.bin_hi, h.mass)])
                .collect();
            chart = chart.add(name, pts);
        }
        dir.svg(&format!("histogram_j{j}"), &chart.render())?;
    }
    dir.report(&r.report)?;
    Ok(Outcome {
        status: r.report.status,
        summary: format!(
            "max atoms per entry: full {:?}, one-step {:?}",
            r.report.full_max_atoms, r.report.one_step_max_atoms
        ),
        dir: dir.path().to_path_buf(),
    })
}
