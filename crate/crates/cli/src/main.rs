use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use softflip_core::campaign::{self, compare_arch, prepare, Architecture, CampaignConfig, CampaignError, Prepared};
use softflip_core::inject::{enumerate_candidates, FaultModel, Selector};
use softflip_core::ir::Word;
use softflip_core::planner::{build_plan, plan_for_coverage, score_sites, CoverageBasis, PlanBudget, ReliabilityPlan};
use softflip_core::profiler::{profile_golden, time_shares, time_shares_csv};
use softflip_core::report::{self, Format};
use softflip_core::seed::mix64;
use softflip_core::vm::VmError;

const EXIT_CONFIG: u8 = 2;
const EXIT_DEFECT: u8 = 3;

#[derive(Parser)]
#[command(name = "softflip", version, about = "Soft-error fault injection on a toy IR VM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fault-free reference run.
    Golden(Common),
    /// Per-function time shares (CSV by default).
    Profile(Common),
    /// Build a reliability plan.
    Plan(PlanArgs),
    /// Run an injection campaign.
    Campaign(CampaignArgs),
    /// Paired comparison of a baseline and a protected report.
    Compare(CompareArgs),
    /// Recompute and print the histogram of a saved report.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    benchmark: String,
    /// Master seed; the scheduler seed is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated input words placed in the entry registers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_word)]
    input: Option<Vec<Word>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Share of static sites to protect.
    #[arg(long, default_value_t = PlanBudget::default().site_fraction)]
    fraction: f64,
    #[arg(long, default_value_t = PlanBudget::default().register_count)]
    registers: usize,
    #[arg(long, default_value_t = PlanBudget::default().memory_words)]
    memory_words: u64,
    /// Choose the site count whose dynamic coverage is closest to this value
    /// instead of using --fraction.
    #[arg(long)]
    target_coverage: Option<f64>,
    /// Candidate selector the coverage target is measured against.
    #[arg(long, default_value = "all")]
    select: Selector,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Seu,
    Mbu,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ArchArg {
    Baseline,
    Protected,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = campaign::DEFAULT_TRIALS)]
    trials: u64,
    #[arg(long, value_enum, default_value = "seu")]
    model: ModelArg,
    /// JSON fault model, e.g. {"kind":"mbu","widths":{"2":0.5,"3":0.5}}.
    #[arg(long, value_name = "FILE")]
    fault_model: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    select: Selector,
    /// Defaults to protected when --plan is given.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_name = "FILE")]
    baseline: PathBuf,
    #[arg(long, value_name = "FILE")]
    protected: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct SummarizeArgs {
    report: PathBuf,
    #[arg(long)]
    format: Option<Format>,
}

fn parse_word(s: &str) -> Result<Word, String> {
    let s = s.trim();
    s.parse::<u64>()
        .or_else(|_| s.parse::<i64>().map(|v| v as u64))
        .map_err(|_| format!("`{s}` is not a 64-bit integer"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => report::write_file(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn prepared(c: &Common) -> Result<Prepared> {
    Ok(prepare(&c.benchmark, c.input.as_deref(), mix64(c.seed))?)
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn golden(c: &Common) -> Result<()> {
    let prep = prepared(c)?;
    let r = &prep.golden.result;
    let text = match c.format.unwrap_or(Format::Json) {
        Format::Json => pretty(&json!({
            "benchmark": c.benchmark,
            "input": prep.golden.input,
            "sched_seed": prep.golden.sched_seed,
            "termination": r.termination,
            "dynamic_count": r.dynamic_count,
            "trace_digest": r.trace_digest,
            "output": r.output_text(),
        })),
        Format::Csv => format!(
            "benchmark,sched_seed,dynamic_count,trace_digest,output_bytes\n{},{},{},{},{}\n",
            c.benchmark,
            prep.golden.sched_seed,
            r.dynamic_count,
            r.trace_digest,
            r.output.len()
        ),
    };
    emit(c.out.as_deref(), &text)
}

fn profile(c: &Common) -> Result<()> {
    let prep = prepared(c)?;
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    let rows = time_shares(&prof);
    let text = match c.format.unwrap_or(Format::Csv) {
        Format::Csv => time_shares_csv(&rows),
        Format::Json => pretty(&json!({ "profile": prof, "time_shares": rows })),
    };
    emit(c.out.as_deref(), &text)
}

fn plan(a: &PlanArgs) -> Result<()> {
    if a.common.format == Some(Format::Csv) {
        bail!("plans are written as JSON only");
    }
    let prep = prepared(&a.common)?;
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    let scores = score_sites(&softflip_core::profiler::site_stats(&prof, &prep.program));
    let budget = PlanBudget {
        site_fraction: a.fraction,
        register_count: a.registers,
        memory_words: a.memory_words,
    };
    let plan = match a.target_coverage {
        Some(q) => {
            if !(0.0..=1.0).contains(&q) {
                bail!("target coverage {q} outside [0, 1]");
            }
            let cands = enumerate_candidates(&prep.golden, &prep.program, &a.select)?;
            let basis = CoverageBasis {
                image: &prep.image,
                golden: &prep.golden,
                cands: &cands,
            };
            let (plan, got) = plan_for_coverage(&scores, &prep.program, &prof, &budget, basis, q)?;
            eprintln!("coverage {got:.4} with {} sites", plan.map.reliable_sites.len());
            plan
        }
        None => build_plan(&scores, &prep.program, &prof, &budget)?,
    };
    emit(a.common.out.as_deref(), &pretty(&plan.to_json()))
}

fn load_plan(path: &Path) -> Result<ReliabilityPlan> {
    let text = report::read_file(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?;
    ReliabilityPlan::from_json(&v).with_context(|| format!("{}: not a reliability plan", path.display()))
}

fn run_campaign(a: &CampaignArgs) -> Result<()> {
    let c = &a.common;
    let model = match &a.fault_model {
        Some(p) => FaultModel::from_json(&report::read_file(p)?)?,
        None => match a.model {
            ModelArg::Seu => FaultModel::seu(),
            ModelArg::Mbu => FaultModel::mbu(),
        },
    };
    let architecture = match (a.arch, &a.plan) {
        (Some(ArchArg::Baseline) | None, None) => Architecture::Baseline,
        (Some(ArchArg::Protected) | None, Some(p)) => Architecture::Protected(load_plan(p)?),
        (Some(ArchArg::Protected), None) => bail!("--arch protected needs --plan FILE"),
        (Some(ArchArg::Baseline), Some(_)) => bail!("--plan conflicts with --arch baseline"),
    };
    let cfg = CampaignConfig {
        benchmark: c.benchmark.clone(),
        input: c.input.clone(),
        trials: a.trials,
        model,
        selector: a.select.clone(),
        master_seed: c.seed,
        architecture,
    };
    let r = campaign::run_campaign(&cfg)?;
    let text = match c.format.unwrap_or(Format::Json) {
        Format::Json => report::campaign_json(&r),
        Format::Csv => report::campaign_csv(&r),
    };
    emit(c.out.as_deref(), &text)?;
    if c.out.is_some() {
        eprint!("{}", report::histogram_table(&r.histogram));
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let base = report::parse_campaign(&report::read_file(&a.baseline)?)
        .with_context(|| a.baseline.display().to_string())?;
    let prot = report::parse_campaign(&report::read_file(&a.protected)?)
        .with_context(|| a.protected.display().to_string())?;
    let d = compare_arch(&base, &prot)?;
    let text = match a.format.unwrap_or(Format::Json) {
        Format::Json => report::delta_json(&d),
        Format::Csv => report::delta_csv(&d),
    };
    emit(a.out.as_deref(), &text)
}

fn summarize(a: &SummarizeArgs) -> Result<()> {
    let h = report::summarize(&report::read_file(&a.report)?)?;
    let text = match a.format {
        Some(Format::Json) => pretty(&json!({ "histogram": h, "percentages": report::percentages(&h) })),
        Some(Format::Csv) => format!(
            "total,crash,sdc,hang,benign\n{},{},{},{},{}\n",
            h.total, h.crash, h.sdc, h.hang, h.benign
        ),
        None => report::histogram_table(&h),
    };
    emit(None, &text)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let defect = e.chain().any(|c| {
        c.downcast_ref::<CampaignError>().is_some_and(CampaignError::is_benchmark_defect)
            || matches!(c.downcast_ref::<VmError>(), Some(VmError::BenchmarkDefect(_)))
    });
    if defect {
        EXIT_DEFECT
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Golden(c) => golden(c),
        Cmd::Profile(c) => profile(c),
        Cmd::Plan(a) => plan(a),
        Cmd::Campaign(a) => run_campaign(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Summarize(a) => summarize(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
