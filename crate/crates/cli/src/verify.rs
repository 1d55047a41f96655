//! Runs every property suite and the target microbenchmark.

use std::path::PathBuf;

use osdrl_core::learning::{target_microbenchmark, TargetTiming};
use osdrl_core::mdp::TabularMdp;
use serde::{Deserialize, Serialize};

use crate::config::{self, check, ExperimentConfig, Overrides};
use crate::output::ExperimentDir;
use crate::suites::{self, SuiteResult};
use crate::{Outcome, Result, Status};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub experiment: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    /// Random cases for the contraction, monotonicity and commutation suites.
    pub cases: usize,
    pub lemma_cases: usize,
    pub mean_cases: usize,
    pub fixed_point_mdps: usize,
    pub policies: usize,
    pub tracking_steps: u64,
    pub normalization_cases: usize,
    pub bench_k: Vec<usize>,
    pub bench_reps: usize,
    /// Added to the contraction and fixed-point suites.
    pub mdp: Option<TabularMdp>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out: config::default_out(),
            cases: 1000,
            lemma_cases: 10_000,
            mean_cases: 10_000,
            fixed_point_mdps: 10,
            policies: 5,
            tracking_steps: 10_000,
            normalization_cases: 100,
            bench_k: vec![8, 64, 512, 4096],
            bench_reps: 51,
            mdp: None,
        }
    }
}

impl ExperimentConfig for VerifyConfig {
    const NAME: &'static str = "verify";

    fn experiment(&self) -> Option<&str> {
        self.experiment.as_deref()
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.tracking_steps = n;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    fn validate(&self) -> Result<()> {
        check("cases", self.cases >= 1, "must be at least 1")?;
        check("bench_reps", self.bench_reps >= 1, "must be at least 1")?;
        check(
            "bench_k",
            self.bench_k.len() >= 2 && self.bench_k.windows(2).all(|w| w[0] < w[1]) && self.bench_k[0] >= 2,
            "need at least two strictly increasing sizes, each at least 2",
        )?;
        config::to_u64(self.tracking_steps, "tracking_steps")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub experiment: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
    pub benchmark: Vec<TargetTiming>,
}

pub fn compute(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let extra = cfg.mdp.as_ref();
    let mut results = suites::contraction(cfg.seed, cfg.cases, extra)?;
    results.extend(suites::fixed_points(cfg.seed, cfg.fixed_point_mdps, cfg.policies, extra)?);
    results.push(suites::scalar_solvers(cfg.seed, cfg.cases.min(200))?);
    results.push(suites::projection_lemma(cfg.seed, cfg.lemma_cases)?);
    results.push(suites::mean_preservation(cfg.seed, cfg.mean_cases)?);
    results.extend(suites::monotonicity(cfg.seed, cfg.cases)?);
    results.push(suites::mean_commutation(cfg.seed, cfg.cases)?);
    results.push(suites::mean_tracking(
        cfg.seed,
        config::to_u64(cfg.tracking_steps, "tracking_steps")?,
    )?);
    results.push(suites::normalization(cfg.seed, cfg.normalization_cases)?);
    let benchmark = target_microbenchmark(&cfg.bench_k, cfg.bench_reps, cfg.seed)?;
    results.extend(suites::benchmark_suites(&benchmark));
    Ok(VerifyReport {
        experiment: VerifyConfig::NAME,
        seed: cfg.seed,
        passed: results.iter().all(|r| r.passed),
        suites: results,
        benchmark,
    })
}

pub fn run(cfg: &VerifyConfig) -> Result<Outcome> {
    let report = compute(cfg)?;
    let dir = ExperimentDir::create(&cfg.out, VerifyConfig::NAME)?;
    dir.report(&report)?;
    let failed: Vec<&str> = report.suites.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let summary = if failed.is_empty() {
        format!("all {} properties passed", report.suites.len())
    } else {
        format!("{} of {} properties failed: {}", failed.len(), report.suites.len(), failed.join(", "))
    };
    Ok(Outcome {
        status: if report.passed { Status::Success } else { Status::PropertyFailure },
        summary,
        dir: dir.path().to_path_buf(),
    })
}
