//! Deterministic interpreter for the toy IR.
//!
//! Threads are simulated: one sequential state machine interleaves them with a
//! seeded round-robin [`Scheduler`]. Given the same program, input, seed and
//! hook, [`run`] produces a bit-identical [`ExecutionResult`].
//!
//! Fault hooks see every destination value (register writes, and the word a
//! `store` writes) right after it is computed; a replacement is applied only
//! when the destination is not protected by the [`ReliabilityMap`].

mod machine;
mod reliability;
mod sched;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{Opcode, Program, Reg, SiteId, Word};

pub use machine::Image;
pub use reliability::{Region, RegionEntry, Reliability, ReliabilityMap};
pub use sched::{quantum, schedule_next, Scheduler, MAX_QUANTUM};

pub(crate) use reliability::Protection;

pub const DEFAULT_MEMORY_WORDS: usize = 65_536;
/// Budget used for fault-free reference runs.
pub const GOLDEN_BUDGET: u64 = 50_000_000;
/// Lower bound of the per-trial instruction budget.
pub const MIN_TRIAL_BUDGET: u64 = 100_000;
pub const HANG_MULTIPLIER: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmConfig {
    pub memory_words: usize,
    pub max_threads: usize,
    pub max_call_depth: usize,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self {
            memory_words: DEFAULT_MEMORY_WORDS,
            max_threads: 64,
            max_call_depth: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    /// Maximum number of instructions executed before the run is `hung`.
    pub budget: u64,
    /// Record the trace digest after this many instructions.
    pub checkpoint: Option<u64>,
}

impl RunLimits {
    pub fn budget(budget: u64) -> Self {
        Self { budget, checkpoint: None }
    }

    /// Hang threshold for trials against `golden`: ten times the fault-free
    /// length, never below [`MIN_TRIAL_BUDGET`].
    pub fn for_trial(golden: &GoldenRecord) -> Self {
        Self::budget((HANG_MULTIPLIER * golden.result.dynamic_count).max(MIN_TRIAL_BUDGET))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashCause {
    OobMemory,
    DivByZero,
    /// Reserved: branch targets are resolved statically, so the interpreter
    /// never raises it.
    BadJump,
    JoinInvalidTid,
    Deadlock,
    StackOverflow,
    ThreadLimit,
    /// Reserved.
    BudgetNever,
}

impl CrashCause {
    pub fn name(self) -> &'static str {
        match self {
            CrashCause::OobMemory => "oob_memory",
            CrashCause::DivByZero => "div_by_zero",
            CrashCause::BadJump => "bad_jump",
            CrashCause::JoinInvalidTid => "join_invalid_tid",
            CrashCause::Deadlock => "deadlock",
            CrashCause::StackOverflow => "stack_overflow",
            CrashCause::ThreadLimit => "thread_limit",
            CrashCause::BudgetNever => "budget_never",
        }
    }
}

impl fmt::Display for CrashCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Halted,
    Crashed(CrashCause),
    Hung,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub termination: Termination,
    pub output: Vec<u8>,
    pub dynamic_count: u64,
    /// FNV-1a over `(site_id as u32 LE, tid as u32 LE)` of every executed
    /// instruction.
    pub trace_digest: u64,
    /// Executions per site, indexed by site id.
    pub per_site_dynamic_counts: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint_digest: Option<u64>,
}

impl ExecutionResult {
    pub fn output_text(&self) -> String {
        String::from_utf8_lossy(&self.output).into_owned()
    }

    pub fn site_count(&self, site: SiteId) -> u64 {
        self.per_site_dynamic_counts.get(site.index()).copied().unwrap_or(0)
    }
}

/// Fault-free reference execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub result: ExecutionResult,
    pub sched_seed: u64,
    pub input: Vec<Word>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dest {
    Reg(Reg),
    Mem(u64),
}

/// A destination value about to be committed.
#[derive(Debug, Clone, Copy)]
pub struct DestWrite {
    /// Global dynamic index of the instruction that commits the value.
    pub step: u64,
    pub site: SiteId,
    /// Ordinal of this execution among all executions of `site`.
    pub instance: u64,
    pub tid: u32,
    pub dest: Dest,
    pub value: Word,
    /// True if the VM will ignore any replacement.
    pub protected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    None,
    Call { callee: u32 },
    Spawn { tid: u32, callee: u32 },
    Return,
}

/// One completed instruction.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent {
    pub step: u64,
    pub tid: u32,
    pub func: u32,
    pub site: SiteId,
    pub opcode: Opcode,
    pub mem_read: Option<u64>,
    pub mem_write: Option<u64>,
    pub transfer: Transfer,
}

/// Observation and fault-injection callbacks.
pub trait ExecHook {
    /// Sees each destination value before it is written. Returning a value
    /// replaces it unless `w.protected`.
    #[inline]
    fn on_write(&mut self, _w: &DestWrite) -> Option<Word> {
        None
    }

    #[inline]
    fn on_step(&mut self, _s: &StepEvent) {}
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl ExecHook for NoHook {}

impl<H: ExecHook + ?Sized> ExecHook for &mut H {
    #[inline]
    fn on_write(&mut self, w: &DestWrite) -> Option<Word> {
        (**self).on_write(w)
    }

    #[inline]
    fn on_step(&mut self, s: &StepEvent) {
        (**self).on_step(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VmError {
    #[error("globals need {needed} words but memory holds {available}")]
    MemoryTooSmall { needed: u64, available: usize },
    #[error("input has {0} words; at most 64 fit in the entry registers")]
    InputTooLong(usize),
    #[error("fault-free run did not halt: {0:?}")]
    BenchmarkDefect(Termination),
}

/// Executes `image` to completion, crash or budget exhaustion.
pub fn run<H: ExecHook>(
    image: &Image,
    input: &[Word],
    sched_seed: u64,
    limits: RunLimits,
    rmap: &ReliabilityMap,
    hook: H,
) -> ExecutionResult {
    machine::Machine::new(image, input, sched_seed, limits, rmap, hook).run()
}

/// Fault-free run with the baseline architecture.
pub fn golden_run(image: &Image, input: &[Word], sched_seed: u64) -> Result<GoldenRecord, VmError> {
    let result = run(
        image,
        input,
        sched_seed,
        RunLimits::budget(GOLDEN_BUDGET),
        &ReliabilityMap::baseline(),
        NoHook,
    );
    if result.termination != Termination::Halted {
        return Err(VmError::BenchmarkDefect(result.termination));
    }
    Ok(GoldenRecord {
        result,
        sched_seed,
        input: input.to_vec(),
    })
}

/// Convenience: lowers `program` with the default configuration.
pub fn load(program: &Program) -> Result<Image, VmError> {
    Image::new(program, &VmConfig::default())
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub(crate) const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Folds one executed `(site, tid)` pair into an FNV-1a digest.
#[inline]
pub fn digest_step(mut h: u64, site: u32, tid: u32) -> u64 {
    for b in site.to_le_bytes().into_iter().chain(tid.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Digest of an explicit `(site, tid)` sequence.
pub fn trace_digest(trace: impl IntoIterator<Item = (u32, u32)>) -> u64 {
    trace.into_iter().fold(FNV_OFFSET, |h, (s, t)| digest_step(h, s, t))
}
