//! Fault-free dynamic profile: call counts, inclusive/exclusive instruction
//! counts per function, and per-site reference statistics.
//!
//! Dynamic instruction count is the time unit. Each simulated thread keeps
//! its own call stack. A spawned thread's stack is rooted at the program
//! entry (in the way a C runtime start routine sits below every thread), so
//! the entry function's inclusive count is the whole run while the thread
//! function's own inclusive count covers just that thread.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{InstrClass, Opcode, Program, SiteId, Word};
use crate::vm::{self, Dest, DestWrite, ExecHook, GoldenRecord, Image, ReliabilityMap, RunLimits, StepEvent, Transfer, VmError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionProfile {
    pub calls: u64,
    pub inclusive: u64,
    pub exclusive: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub exec_count: u64,
    /// Register destination writes.
    pub dest_write_count: u64,
    pub mem_read_count: u64,
    pub mem_write_count: u64,
    /// Globals this site loaded from or stored to.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub globals: BTreeSet<String>,
}

/// Placement of one global in memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalRegion {
    pub name: String,
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub per_function: BTreeMap<String, FunctionProfile>,
    pub per_site: BTreeMap<SiteId, SiteProfile>,
    pub total_dynamic: u64,
    /// Executions of each thread primitive.
    pub thread_primitives: BTreeMap<Opcode, u64>,
    pub globals: Vec<GlobalRegion>,
}

impl ProfileReport {
    pub fn function(&self, name: &str) -> Option<&FunctionProfile> {
        self.per_function.get(name)
    }

    pub fn site(&self, site: SiteId) -> Option<&SiteProfile> {
        self.per_site.get(&site)
    }

    pub fn primitive_calls(&self, op: Opcode) -> u64 {
        self.thread_primitives.get(&op).copied().unwrap_or(0)
    }
}

struct Active {
    func: u32,
    start: u64,
}

struct Profiler {
    entry: u32,
    stacks: Vec<Vec<Active>>,
    thread_steps: Vec<u64>,
    calls: Vec<u64>,
    inclusive: Vec<u64>,
    exclusive: Vec<u64>,
    dest_writes: Vec<u64>,
    mem_reads: Vec<u64>,
    mem_writes: Vec<u64>,
    touched: Vec<BTreeSet<u64>>,
}

impl Profiler {
    fn new(funcs: usize, sites: usize, entry: u32) -> Self {
        let mut calls = vec![0; funcs];
        calls[entry as usize] = 1;
        Self {
            entry,
            stacks: vec![vec![Active { func: entry, start: 0 }]],
            thread_steps: vec![0],
            calls,
            inclusive: vec![0; funcs],
            exclusive: vec![0; funcs],
            dest_writes: vec![0; sites],
            mem_reads: vec![0; sites],
            mem_writes: vec![0; sites],
            touched: vec![BTreeSet::new(); sites],
        }
    }

    /// Closes the top frame of thread `t`. Only the outermost activation of a
    /// function in a stack adds to its inclusive count, so recursion is not
    /// counted twice.
    fn pop(&mut self, t: usize) {
        let Some(a) = self.stacks[t].pop() else { return };
        if !self.stacks[t].iter().any(|o| o.func == a.func) {
            self.inclusive[a.func as usize] += self.thread_steps[t] - a.start;
        }
    }

    fn finish(&mut self) {
        for t in 0..self.stacks.len() {
            while !self.stacks[t].is_empty() {
                self.pop(t);
            }
        }
    }
}

impl ExecHook for Profiler {
    fn on_write(&mut self, w: &DestWrite) -> Option<Word> {
        if let Dest::Reg(_) = w.dest {
            self.dest_writes[w.site.index()] += 1;
        }
        None
    }

    fn on_step(&mut self, s: &StepEvent) {
        let t = s.tid as usize;
        let site = s.site.index();
        self.thread_steps[t] += 1;
        self.exclusive[s.func as usize] += 1;
        if let Some(a) = s.mem_read {
            self.mem_reads[site] += 1;
            self.touched[site].insert(a);
        }
        if let Some(a) = s.mem_write {
            self.mem_writes[site] += 1;
            self.touched[site].insert(a);
        }
        match s.transfer {
            Transfer::None => {}
            Transfer::Call { callee } => {
                self.calls[callee as usize] += 1;
                self.stacks[t].push(Active {
                    func: callee,
                    start: self.thread_steps[t],
                });
            }
            Transfer::Spawn { tid, callee } => {
                self.calls[callee as usize] += 1;
                debug_assert_eq!(tid as usize, self.stacks.len());
                self.stacks.push(vec![
                    Active {
                        func: self.entry,
                        start: 0,
                    },
                    Active { func: callee, start: 0 },
                ]);
                self.thread_steps.push(0);
            }
            Transfer::Return => self.pop(t),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error(transparent)]
    Vm(#[from] VmError),
}

/// Profiles `program` with the default VM configuration.
pub fn profile(program: &Program, input: &[Word], sched_seed: u64) -> Result<ProfileReport, ProfileError> {
    let image = vm::load(program)?;
    let golden = vm::golden_run(&image, input, sched_seed)?;
    Ok(profile_golden(&image, program, &golden))
}

/// Profiles the run recorded in `golden` by replaying it.
pub fn profile_golden(image: &Image, program: &Program, golden: &GoldenRecord) -> ProfileReport {
    let funcs = program.functions.len();
    let sites = program.site_count();
    let mut prof = Profiler::new(funcs, sites, image.entry());
    let result = vm::run(
        image,
        &golden.input,
        golden.sched_seed,
        RunLimits::budget(golden.result.dynamic_count),
        &ReliabilityMap::baseline(),
        &mut prof,
    );
    debug_assert_eq!(result, golden.result);
    prof.finish();

    let layout: Vec<GlobalRegion> = program
        .global_layout(image.memory_words() as u64)
        .into_iter()
        .map(|(name, start, words)| GlobalRegion {
            name,
            start,
            len: u64::from(words),
        })
        .collect();
    let global_of = |addr: u64| {
        layout
            .iter()
            .find(|g| addr >= g.start && addr < g.start + g.len)
            .map(|g| g.name.clone())
    };

    let per_function = program
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| {
            (
                f.name.clone(),
                FunctionProfile {
                    calls: prof.calls[i],
                    inclusive: prof.inclusive[i],
                    exclusive: prof.exclusive[i],
                },
            )
        })
        .collect();
    let mut thread_primitives = BTreeMap::new();
    let per_site = program
        .instructions()
        .map(|ins| {
            let i = ins.site_id.index();
            let exec_count = result.per_site_dynamic_counts[i];
            if ins.class() == InstrClass::ThreadPrimitive {
                *thread_primitives.entry(ins.opcode).or_insert(0) += exec_count;
            }
            let site = SiteProfile {
                exec_count,
                dest_write_count: prof.dest_writes[i],
                mem_read_count: prof.mem_reads[i],
                mem_write_count: prof.mem_writes[i],
                globals: prof.touched[i].iter().filter_map(|&a| global_of(a)).collect(),
            };
            (ins.site_id, site)
        })
        .collect();
    ProfileReport {
        per_function,
        per_site,
        total_dynamic: result.dynamic_count,
        thread_primitives,
        globals: layout,
    }
}

/// One row of the time-share table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeShare {
    pub function: String,
    pub calls: u64,
    pub inclusive_pct: f64,
    pub exclusive_pct: f64,
    pub avg_inclusive: f64,
    pub avg_exclusive: f64,
}

/// Functions that were called at least once, by inclusive share descending,
/// then exclusive count descending, then name.
pub fn time_shares(r: &ProfileReport) -> Vec<TimeShare> {
    let total = r.total_dynamic.max(1) as f64;
    let mut rows: Vec<(&String, &FunctionProfile)> = r.per_function.iter().filter(|(_, f)| f.calls > 0).collect();
    rows.sort_by(|a, b| {
        b.1.inclusive
            .cmp(&a.1.inclusive)
            .then(b.1.exclusive.cmp(&a.1.exclusive))
            .then(a.0.cmp(b.0))
    });
    rows.into_iter()
        .map(|(name, f)| TimeShare {
            function: name.clone(),
            calls: f.calls,
            inclusive_pct: 100.0 * f.inclusive as f64 / total,
            exclusive_pct: 100.0 * f.exclusive as f64 / total,
            avg_inclusive: f.inclusive as f64 / f.calls as f64,
            avg_exclusive: f.exclusive as f64 / f.calls as f64,
        })
        .collect()
}

/// CSV with header `function,calls,incl_pct,excl_pct,avg_incl,avg_excl`.
pub fn time_shares_csv(rows: &[TimeShare]) -> String {
    let mut out = String::from("function,calls,incl_pct,excl_pct,avg_incl,avg_excl\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4}\n",
            r.function, r.calls, r.inclusive_pct, r.exclusive_pct, r.avg_inclusive, r.avg_exclusive
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteStat {
    pub site: SiteId,
    pub class: InstrClass,
    pub exec_count: u64,
    /// Operand consumption plus memory loads.
    pub read_refs: u64,
    /// Register destination writes plus memory stores.
    pub write_mods: u64,
}

pub fn site_stats(r: &ProfileReport, p: &Program) -> Vec<SiteStat> {
    p.instructions()
        .map(|ins| {
            let s = r.per_site.get(&ins.site_id).cloned().unwrap_or_default();
            SiteStat {
                site: ins.site_id,
                class: ins.class(),
                exec_count: s.exec_count,
                read_refs: s.exec_count + s.mem_read_count,
                write_mods: s.dest_write_count + s.mem_write_count,
            }
        })
        .collect()
}
