//! Python bindings. Reports cross the boundary as their JSON text, so
//! `json.loads` on any `to_json()` result gives the same document the CLI
//! writes.

use std::time::Instant;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use softflip_core::campaign::{self, Architecture, CampaignConfig, CampaignError, CampaignReport, ResilienceDelta};
use softflip_core::inject::{self, enumerate_candidates, FaultModel, Selector};
use softflip_core::ir::{self, Word};
use softflip_core::planner::{self, CoverageBasis, PlanBudget, ReliabilityPlan};
use softflip_core::profiler::{profile_golden, site_stats, time_shares, time_shares_csv};
use softflip_core::report;
use softflip_core::seed::mix64;
use softflip_core::vm::{self, ReliabilityMap, RunLimits, Termination};

create_exception!(softflip, SoftflipError, PyException);
create_exception!(softflip, BenchmarkDefect, SoftflipError);

fn err(e: impl std::fmt::Display) -> PyErr {
    SoftflipError::new_err(e.to_string())
}

fn campaign_err(e: CampaignError) -> PyErr {
    if e.is_benchmark_defect() {
        BenchmarkDefect::new_err(e.to_string())
    } else {
        err(e)
    }
}

fn termination_name(t: Termination) -> String {
    match t {
        Termination::Halted => "halted".into(),
        Termination::Hung => "hung".into(),
        Termination::Crashed(c) => format!("crashed:{c}"),
    }
}

/// A parsed and validated IR program.
#[pyclass(frozen, module = "softflip")]
struct Program {
    inner: ir::Program,
}

#[pymethods]
impl Program {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ir::parse_program(source).map_err(err)?,
        })
    }

    /// A corpus benchmark by name.
    #[staticmethod]
    fn benchmark(name: &str) -> PyResult<Self> {
        let b = softflip_core::corpus::get(name).ok_or_else(|| PyValueError::new_err(format!("unknown benchmark `{name}`")))?;
        Ok(Self {
            inner: b.program().map_err(err)?,
        })
    }

    #[getter]
    fn site_count(&self) -> usize {
        self.inner.site_count()
    }

    #[getter]
    fn functions(&self) -> Vec<String> {
        self.inner.functions.iter().map(|f| f.name.clone()).collect()
    }

    /// Canonical text form.
    fn to_text(&self) -> String {
        ir::print_program(&self.inner)
    }

    /// Runs without faults. Returns `(termination, output, dynamic_count)`.
    #[pyo3(signature = (input = Vec::new(), sched_seed = 0, budget = vm::GOLDEN_BUDGET))]
    fn run(&self, input: Vec<Word>, sched_seed: u64, budget: u64) -> PyResult<(String, String, u64)> {
        let image = vm::load(&self.inner).map_err(err)?;
        let r = vm::run(&image, &input, sched_seed, RunLimits::budget(budget), &ReliabilityMap::baseline(), vm::NoHook);
        Ok((termination_name(r.termination), r.output_text(), r.dynamic_count))
    }

    fn __repr__(&self) -> String {
        format!("Program(functions={}, sites={})", self.inner.functions.len(), self.inner.site_count())
    }
}

/// A reliability plan.
#[pyclass(frozen, from_py_object, module = "softflip")]
#[derive(Clone)]
struct Plan {
    inner: ReliabilityPlan,
}

#[pymethods]
impl Plan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(err)?;
        Ok(Self {
            inner: ReliabilityPlan::from_json(&v).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner.to_json()).expect("plan serializes")
    }

    #[getter]
    fn reliable_sites(&self) -> Vec<u32> {
        self.inner.map.reliable_sites.iter().map(|s| s.0).collect()
    }

    #[getter]
    fn reliable_registers(&self) -> Vec<u8> {
        self.inner.map.reliable_registers.iter().map(|r| r.0).collect()
    }

    #[getter]
    fn regions(&self) -> Vec<(u64, u64)> {
        self.inner.map.reliable_regions.iter().map(|r| (r.start, r.len)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan(sites={}, registers={}, regions={})",
            self.inner.map.reliable_sites.len(),
            self.inner.map.reliable_registers.len(),
            self.inner.map.reliable_regions.len()
        )
    }
}

/// Result of one campaign.
#[pyclass(frozen, module = "softflip")]
struct Report {
    inner: CampaignReport,
}

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: report::parse_campaign(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        report::campaign_json(&self.inner)
    }

    fn to_csv(&self) -> String {
        report::campaign_csv(&self.inner)
    }

    /// Tag counts: `{"total", "crash", "sdc", "hang", "benign"}`.
    fn histogram(&self) -> std::collections::BTreeMap<&'static str, u64> {
        let h = &self.inner.histogram;
        [("total", h.total), ("crash", h.crash), ("sdc", h.sdc), ("hang", h.hang), ("benign", h.benign)]
            .into_iter()
            .collect()
    }

    #[getter]
    fn non_benign_rate(&self) -> f64 {
        self.inner.histogram.non_benign_rate()
    }

    #[getter]
    fn coverage(&self) -> Option<f64> {
        self.inner.coverage
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials.len()
    }

    fn __repr__(&self) -> String {
        let h = &self.inner.histogram;
        format!(
            "Report({}, crash={}, sdc={}, hang={}, benign={})",
            self.inner.config.benchmark, h.crash, h.sdc, h.hang, h.benign
        )
    }
}

/// Paired baseline/protected comparison.
#[pyclass(frozen, get_all, module = "softflip")]
struct Delta {
    baseline_rate: f64,
    protected_rate: f64,
    reduction: f64,
    masked: u64,
    masked_fraction: f64,
    coverage: Option<f64>,
    json: String,
}

impl From<ResilienceDelta> for Delta {
    fn from(d: ResilienceDelta) -> Self {
        Self {
            json: report::delta_json(&d),
            baseline_rate: d.baseline_rate,
            protected_rate: d.protected_rate,
            reduction: d.reduction,
            masked: d.masked,
            masked_fraction: d.masked_fraction,
            coverage: d.coverage,
        }
    }
}

#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    softflip_core::corpus::names().collect()
}

#[pyfunction]
fn apply_flip(w: Word, start_bit: u32, width: u32) -> PyResult<Word> {
    if width == 0 || start_bit + width > 64 {
        return Err(PyValueError::new_err("need width >= 1 and start_bit + width <= 64"));
    }
    Ok(inject::apply_flip(w, start_bit, width))
}

/// Time-share table of a benchmark's fault-free run, as CSV.
#[pyfunction]
#[pyo3(signature = (benchmark, seed = 0, input = None))]
fn profile(benchmark: &str, seed: u64, input: Option<Vec<Word>>) -> PyResult<String> {
    let prep = campaign::prepare(benchmark, input.as_deref(), mix64(seed)).map_err(campaign_err)?;
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    Ok(time_shares_csv(&time_shares(&prof)))
}

#[pyfunction]
#[pyo3(signature = (benchmark, seed = 0, fraction = 0.3, registers = 4, memory_words = 256, target_coverage = None))]
fn plan(
    benchmark: &str,
    seed: u64,
    fraction: f64,
    registers: usize,
    memory_words: u64,
    target_coverage: Option<f64>,
) -> PyResult<Plan> {
    let prep = campaign::prepare(benchmark, None, mix64(seed)).map_err(campaign_err)?;
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    let scores = planner::score_sites(&site_stats(&prof, &prep.program));
    let budget = PlanBudget {
        site_fraction: fraction,
        register_count: registers,
        memory_words,
    };
    let inner = match target_coverage {
        Some(q) => {
            let cands = enumerate_candidates(&prep.golden, &prep.program, &Selector::all()).map_err(err)?;
            let basis = CoverageBasis {
                image: &prep.image,
                golden: &prep.golden,
                cands: &cands,
            };
            planner::plan_for_coverage(&scores, &prep.program, &prof, &budget, basis, q).map_err(err)?.0
        }
        None => planner::build_plan(&scores, &prep.program, &prof, &budget).map_err(err)?,
    };
    Ok(Plan { inner })
}

/// Runs a campaign. `model` is `"seu"`, `"mbu"` or a JSON fault model.
#[pyfunction]
#[pyo3(signature = (benchmark, seed = 0, trials = 1000, model = "seu", select = "all", plan = None, input = None))]
fn run_campaign(
    py: Python<'_>,
    benchmark: &str,
    seed: u64,
    trials: u64,
    model: &str,
    select: &str,
    plan: Option<Plan>,
    input: Option<Vec<Word>>,
) -> PyResult<Report> {
    let model = match model {
        "seu" => FaultModel::seu(),
        "mbu" => FaultModel::mbu(),
        json => FaultModel::from_json(json).map_err(err)?,
    };
    let cfg = CampaignConfig {
        benchmark: benchmark.to_owned(),
        input,
        trials,
        model,
        selector: select.parse().map_err(err)?,
        master_seed: seed,
        architecture: plan.map_or(Architecture::Baseline, |p| Architecture::Protected(p.inner)),
    };
    let started = Instant::now();
    let inner = py
        .detach(|| {
            let prep = campaign::prepare(&cfg.benchmark, cfg.input.as_deref(), cfg.sched_seed())?;
            if cfg.trials == 0 {
                return Err(CampaignError::NoTrials);
            }
            campaign::run_prepared(&cfg, &prep, started)
        })
        .map_err(campaign_err)?;
    Ok(Report { inner })
}

#[pyfunction]
fn compare(baseline: &Report, protected: &Report) -> PyResult<Delta> {
    Ok(campaign::compare_arch(&baseline.inner, &protected.inner).map_err(campaign_err)?.into())
}

#[pymodule]
fn softflip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SoftflipError", m.py().get_type::<SoftflipError>())?;
    m.add("BenchmarkDefect", m.py().get_type::<BenchmarkDefect>())?;
    m.add_class::<Program>()?;
    m.add_class::<Plan>()?;
    m.add_class::<Report>()?;
    m.add_class::<Delta>()?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(apply_flip, m)?)?;
    m.add_function(wrap_pyfunction!(profile, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
