//! End-to-end injection campaigns and paired architecture comparison.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus;
use crate::inject::{self, draw_fault, enumerate_candidates, CandidateSet, FaultModel, FaultSpec, InjectError, Selector};
use crate::ir::{InstrClass, IrError, Program, SiteId, Word};
use crate::outcome::{aggregate, classify, Outcome, OutcomeHistogram};
use crate::planner::{estimate_overhead, OverheadReport, PlanError, ReliabilityPlan};
use crate::profiler::profile_golden;
use crate::seed::{mix64, trial_seed};
use crate::vm::{self, GoldenRecord, Image, ReliabilityMap, RunLimits, VmError};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "SOFTFLIP_WORKERS";
pub const DEFAULT_TRIALS: u64 = 1000;
/// Redraws allowed when a drawn instance never commits a value.
const MAX_REDRAWS: u64 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("benchmark source: {0}")]
    Ir(#[from] IrError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("reports are not paired: {0}")]
    Unpaired(String),
    #[error("pairing violated at trial {trial}: {reason}")]
    PairingViolation { trial: u64, reason: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CampaignError {
    /// The fault-free run did not halt.
    pub fn is_benchmark_defect(&self) -> bool {
        matches!(self, CampaignError::Vm(VmError::BenchmarkDefect(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "plan", rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Protected(ReliabilityPlan),
}

impl Architecture {
    pub fn map(&self) -> ReliabilityMap {
        match self {
            Architecture::Baseline => ReliabilityMap::baseline(),
            Architecture::Protected(p) => p.map.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Baseline => "baseline",
            Architecture::Protected(_) => "protected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub benchmark: String,
    /// Entry-thread input; the corpus default when `None`.
    pub input: Option<Vec<Word>>,
    pub trials: u64,
    pub model: FaultModel,
    pub selector: Selector,
    pub master_seed: u64,
    pub architecture: Architecture,
}

impl CampaignConfig {
    pub fn new(benchmark: &str, master_seed: u64) -> Self {
        Self {
            benchmark: benchmark.to_owned(),
            input: None,
            trials: DEFAULT_TRIALS,
            model: FaultModel::seu(),
            selector: Selector::all(),
            master_seed,
            architecture: Architecture::Baseline,
        }
    }

    /// Scheduler seed of the golden run and every trial.
    pub fn sched_seed(&self) -> u64 {
        mix64(self.master_seed)
    }
}

/// A loaded benchmark and its fault-free run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub program: Program,
    pub image: Image,
    pub golden: GoldenRecord,
}

/// Parses, lowers and golden-runs a corpus benchmark.
pub fn prepare(benchmark: &str, input: Option<&[Word]>, sched_seed: u64) -> Result<Prepared, CampaignError> {
    let b = corpus::get(benchmark).ok_or_else(|| CampaignError::UnknownBenchmark(benchmark.to_owned()))?;
    let program = b.program()?;
    let image = vm::load(&program)?;
    let golden = vm::golden_run(&image, input.unwrap_or(b.input), sched_seed)?;
    Ok(Prepared { program, image, golden })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub benchmark: String,
    pub input: Vec<Word>,
    pub trials: u64,
    pub model: FaultModel,
    pub selector: Selector,
    pub master_seed: u64,
    pub sched_seed: u64,
    pub architecture: Architecture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenInfo {
    pub dynamic_count: u64,
    pub trace_digest: u64,
    pub output_bytes: usize,
    pub trial_budget: u64,
    pub candidate_sites: usize,
    pub candidate_instances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub site: SiteId,
    pub instance: u64,
    pub start_bit: u32,
    pub width: u32,
    pub class: InstrClass,
    #[serde(flatten)]
    pub outcome: Outcome,
    /// The fault hit a protected destination and was discarded.
    pub masked: bool,
}

impl TrialRecord {
    pub fn spec(&self) -> FaultSpec {
        FaultSpec {
            site: self.site,
            instance: self.instance,
            start_bit: self.start_bit,
            width: self.width,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: ConfigEcho,
    pub golden: GoldenInfo,
    pub histogram: OutcomeHistogram,
    /// Dynamic coverage of the candidate set by the plan (protected only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead: Option<OverheadReport>,
    pub trials: Vec<TrialRecord>,
    /// Excluded from determinism comparisons.
    pub wall_clock_ms: u64,
}

fn worker_pool() -> Result<rayon::ThreadPool, CampaignError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| CampaignError::Pool(e.to_string()))
}

/// Runs trial `index`: draws a fault from its derived seed, injects it and
/// classifies the result. An instance that never commits is redrawn from a
/// seed derived from the previous one.
pub fn run_trial(
    prep: &Prepared,
    cands: &CandidateSet,
    model: &FaultModel,
    rmap: &ReliabilityMap,
    master_seed: u64,
    index: u64,
) -> Result<TrialRecord, CampaignError> {
    let limits = RunLimits::for_trial(&prep.golden);
    let mut seed = trial_seed(master_seed, index);
    for _ in 0..MAX_REDRAWS {
        let spec = draw_fault(cands, model, seed);
        match inject::inject_run(&prep.image, &prep.golden.input, prep.golden.sched_seed, &spec, rmap, limits) {
            Ok(run) => {
                let class = prep.program.instruction(spec.site).expect("candidate site").class();
                return Ok(TrialRecord {
                    trial: index,
                    seed,
                    site: spec.site,
                    instance: spec.instance,
                    start_bit: spec.start_bit,
                    width: spec.width,
                    class,
                    outcome: classify(&run.result, &prep.golden),
                    masked: run.masked,
                });
            }
            Err(InjectError::NotReached { .. }) => seed = mix64(seed),
            Err(e) => return Err(e.into()),
        }
    }
    Err(InjectError::EmptyCandidates.into())
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let started = Instant::now();
    if cfg.trials == 0 {
        return Err(CampaignError::NoTrials);
    }
    cfg.model.validate()?;
    let prep = prepare(&cfg.benchmark, cfg.input.as_deref(), cfg.sched_seed())?;
    run_prepared(cfg, &prep, started)
}

/// [`run_campaign`] against an already prepared benchmark.
pub fn run_prepared(cfg: &CampaignConfig, prep: &Prepared, started: Instant) -> Result<CampaignReport, CampaignError> {
    let cands = enumerate_candidates(&prep.golden, &prep.program, &cfg.selector)?;
    let rmap = cfg.architecture.map();
    let pool = worker_pool()?;
    let trials: Vec<TrialRecord> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(prep, &cands, &cfg.model, &rmap, cfg.master_seed, i))
            .collect::<Result<_, _>>()
    })?;
    let specs: Vec<FaultSpec> = trials.iter().map(TrialRecord::spec).collect();
    let histogram = aggregate(specs.iter().zip(trials.iter().map(|t| &t.outcome)), &prep.program);

    let (coverage, overhead) = match &cfg.architecture {
        Architecture::Baseline => (None, None),
        Architecture::Protected(plan) => {
            let profile = profile_golden(&prep.image, &prep.program, &prep.golden);
            (
                Some(inject::coverage(&prep.image, &prep.golden, &cands, &plan.map)),
                Some(estimate_overhead(&profile, plan, &plan.tech)),
            )
        }
    };

    Ok(CampaignReport {
        config: ConfigEcho {
            benchmark: cfg.benchmark.clone(),
            input: prep.golden.input.clone(),
            trials: cfg.trials,
            model: cfg.model.clone(),
            selector: cfg.selector.clone(),
            master_seed: cfg.master_seed,
            sched_seed: prep.golden.sched_seed,
            architecture: cfg.architecture.clone(),
        },
        golden: GoldenInfo {
            dynamic_count: prep.golden.result.dynamic_count,
            trace_digest: prep.golden.result.trace_digest,
            output_bytes: prep.golden.result.output.len(),
            trial_budget: RunLimits::for_trial(&prep.golden).budget,
            candidate_sites: cands.sites().len(),
            candidate_instances: cands.total_instances(),
        },
        histogram,
        coverage,
        overhead,
        trials,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// Paired comparison of a baseline campaign and a protected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceDelta {
    pub benchmark: String,
    pub trials: u64,
    pub baseline_rate: f64,
    pub protected_rate: f64,
    /// `1 - protected_rate / baseline_rate`; 0 when the baseline never fails.
    pub reduction: f64,
    pub masked: u64,
    pub masked_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

/// Checks that the two reports ran identical faults and that protection only
/// turned masked trials benign, then computes the resilience gain.
pub fn compare_arch(base: &CampaignReport, prot: &CampaignReport) -> Result<ResilienceDelta, CampaignError> {
    let (b, p) = (&base.config, &prot.config);
    let unpaired = |what: &str| Err(CampaignError::Unpaired(what.to_owned()));
    if b.benchmark != p.benchmark || b.input != p.input {
        return unpaired("different benchmark or input");
    }
    if b.model != p.model || b.selector != p.selector {
        return unpaired("different fault model or selector");
    }
    if b.master_seed != p.master_seed || b.trials != p.trials || base.trials.len() != prot.trials.len() {
        return unpaired("different seeds or trial counts");
    }
    if b.architecture != Architecture::Baseline || !matches!(p.architecture, Architecture::Protected(_)) {
        return unpaired("expected a baseline report and a protected one");
    }
    let mut masked = 0;
    for (x, y) in base.trials.iter().zip(&prot.trials) {
        if x.spec() != y.spec() {
            return Err(CampaignError::Unpaired(format!("trial {} drew different faults", x.trial)));
        }
        if x.masked {
            return Err(CampaignError::PairingViolation {
                trial: x.trial,
                reason: "baseline trial reported as masked".into(),
            });
        }
        if y.masked {
            masked += 1;
            if !y.outcome.is_benign() {
                return Err(CampaignError::PairingViolation {
                    trial: y.trial,
                    reason: format!("protected destination yet outcome {}", y.outcome.tag()),
                });
            }
        } else if x.outcome != y.outcome {
            return Err(CampaignError::PairingViolation {
                trial: y.trial,
                reason: "unprotected trial changed outcome".into(),
            });
        }
    }
    let baseline_rate = base.histogram.non_benign_rate();
    let protected_rate = prot.histogram.non_benign_rate();
    let trials = base.trials.len() as u64;
    Ok(ResilienceDelta {
        benchmark: b.benchmark.clone(),
        trials,
        baseline_rate,
        protected_rate,
        reduction: if baseline_rate == 0.0 {
            0.0
        } else {
            1.0 - protected_rate / baseline_rate
        },
        masked,
        masked_fraction: masked as f64 / trials as f64,
        coverage: prot.coverage,
    })
}
