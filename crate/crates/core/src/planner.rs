//! Chooses what to build from fault-immune (STT-RAM) cells and estimates the
//! latency and energy cost of that choice.
//!
//! Sites are ranked by `read_refs / (write_mods + 1)`, favouring values that
//! are read often and rewritten rarely. Thread primitives are always
//! protected. Registers and memory regions follow from the selected sites:
//! the most frequently written destination registers, and the globals the
//! selected loads and stores touch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::inject::{self, CandidateSet};
use crate::ir::{InstrClass, Program, Reg, SiteId};
use crate::profiler::{ProfileReport, SiteStat};
use crate::vm::{GoldenRecord, Image, Region, ReliabilityMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("budget below mandatory protection: {forced} thread-primitive sites but only {allowed} allowed")]
    BelowMandatory { forced: usize, allowed: usize },
    #[error("site fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("invalid technology parameters: {0}")]
    Tech(&'static str),
}

/// Per-access cost of SRAM and STT-RAM cells. Units are cycles and pJ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    pub sram_write_latency: f64,
    pub stt_write_latency: f64,
    pub sram_write_energy: f64,
    pub stt_write_energy: f64,
    pub sram_read_latency: f64,
    pub stt_read_latency: f64,
    pub sram_read_energy: f64,
    pub stt_read_energy: f64,
}

impl Default for TechParams {
    /// STT-RAM writes 5x slower and 10x costlier than SRAM; reads equal.
    fn default() -> Self {
        Self {
            sram_write_latency: 1.0,
            stt_write_latency: 5.0,
            sram_write_energy: 1.0,
            stt_write_energy: 10.0,
            sram_read_latency: 1.0,
            stt_read_latency: 1.0,
            sram_read_energy: 1.0,
            stt_read_energy: 1.0,
        }
    }
}

impl TechParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let all = [
            self.sram_write_latency,
            self.stt_write_latency,
            self.sram_write_energy,
            self.stt_write_energy,
            self.sram_read_latency,
            self.stt_read_latency,
            self.sram_read_energy,
            self.stt_read_energy,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(PlanError::Tech("all values must be positive"));
        }
        if self.stt_write_latency < self.sram_write_latency {
            return Err(PlanError::Tech("stt_write_latency below sram_write_latency"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteScore {
    pub site: SiteId,
    pub score: f64,
    pub forced: bool,
}

/// Scores every site, ordered forced first, then score descending, then site
/// id ascending.
pub fn score_sites(stats: &[SiteStat]) -> Vec<SiteScore> {
    let mut scores: Vec<SiteScore> = stats
        .iter()
        .map(|s| SiteScore {
            site: s.site,
            score: s.read_refs as f64 / (s.write_mods as f64 + 1.0),
            forced: s.class == InstrClass::ThreadPrimitive,
        })
        .collect();
    scores.sort_by(|a, b| {
        b.forced
            .cmp(&a.forced)
            .then(b.score.total_cmp(&a.score))
            .then(a.site.cmp(&b.site))
    });
    scores
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanBudget {
    /// Share of static sites that may be protected.
    pub site_fraction: f64,
    pub register_count: usize,
    pub memory_words: u64,
}

impl Default for PlanBudget {
    fn default() -> Self {
        Self {
            site_fraction: 0.3,
            register_count: 4,
            memory_words: 256,
        }
    }
}

impl PlanBudget {
    /// `⌈f·n⌉` for a program with `n` sites.
    pub fn site_count(&self, n: usize) -> usize {
        ((self.site_fraction * n as f64).ceil() as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPlan {
    pub map: ReliabilityMap,
    pub budget: PlanBudget,
    /// Scores of the selected sites, in selection order.
    pub selected: Vec<SiteScore>,
    pub tech: TechParams,
}

impl ReliabilityPlan {
    /// Serialized form accepted back by the campaign driver.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "reliable_sites": self.map.reliable_sites,
            "reliable_registers": self.map.reliable_registers.iter().map(|r| r.0).collect::<Vec<_>>(),
            "regions": self.map.reliable_regions,
            "tech": self.tech,
            "budget": self.budget,
            "scores": self.selected,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Wire {
            reliable_sites: BTreeSet<SiteId>,
            reliable_registers: BTreeSet<u8>,
            regions: Vec<Region>,
            #[serde(default)]
            tech: Option<TechParams>,
            #[serde(default)]
            budget: Option<PlanBudget>,
            #[serde(default)]
            scores: Vec<SiteScore>,
        }
        let w: Wire = Wire::deserialize(v)?;
        let mut map = ReliabilityMap {
            reliable_registers: w.reliable_registers.into_iter().map(Reg).collect(),
            reliable_regions: w.regions,
            reliable_sites: w.reliable_sites,
        };
        map.coalesce_regions();
        Ok(Self {
            map,
            budget: w.budget.unwrap_or_default(),
            selected: w.scores,
            tech: w.tech.unwrap_or_default(),
        })
    }
}

/// Builds a plan protecting `⌈f·N⌉` sites.
pub fn build_plan(
    scores: &[SiteScore],
    p: &Program,
    profile: &ProfileReport,
    budget: &PlanBudget,
) -> Result<ReliabilityPlan, PlanError> {
    if !(0.0..=1.0).contains(&budget.site_fraction) {
        return Err(PlanError::Fraction(budget.site_fraction));
    }
    plan_with_site_count(scores, p, profile, budget, budget.site_count(p.site_count()))
}

/// Builds a plan protecting exactly `k` sites (forced ones included).
pub fn plan_with_site_count(
    scores: &[SiteScore],
    p: &Program,
    profile: &ProfileReport,
    budget: &PlanBudget,
    k: usize,
) -> Result<ReliabilityPlan, PlanError> {
    let forced = scores.iter().filter(|s| s.forced).count();
    if forced > k {
        return Err(PlanError::BelowMandatory { forced, allowed: k });
    }
    let mut ordered: Vec<SiteScore> = scores.to_vec();
    ordered.sort_by(|a, b| {
        b.forced
            .cmp(&a.forced)
            .then(b.score.total_cmp(&a.score))
            .then(a.site.cmp(&b.site))
    });
    ordered.truncate(k);
    let sites: BTreeSet<SiteId> = ordered.iter().map(|s| s.site).collect();

    let mut reg_writes: BTreeMap<Reg, u64> = BTreeMap::new();
    let mut global_refs: BTreeMap<&str, u64> = BTreeMap::new();
    for &site in &sites {
        let (Some(ins), Some(stat)) = (p.instruction(site), profile.site(site)) else {
            continue;
        };
        if let Some(r) = ins.dest_reg() {
            *reg_writes.entry(r).or_default() += stat.dest_write_count;
        }
        if ins.class() == InstrClass::LoadStore {
            for g in &stat.globals {
                *global_refs.entry(g.as_str()).or_default() += stat.mem_read_count + stat.mem_write_count;
            }
        }
    }

    let mut regs: Vec<(Reg, u64)> = reg_writes.into_iter().collect();
    regs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let reliable_registers = regs
        .into_iter()
        .take(budget.register_count)
        .map(|(r, _)| r)
        .collect();

    let mut globals: Vec<(&str, u64)> = global_refs.into_iter().collect();
    globals.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut words = 0;
    let mut regions = Vec::new();
    for (name, _) in globals {
        let g = profile.globals.iter().find(|x| x.name == name).expect("known global");
        if words + g.len <= budget.memory_words {
            words += g.len;
            regions.push(Region {
                start: g.start,
                len: g.len,
            });
        }
    }

    let mut map = ReliabilityMap {
        reliable_registers,
        reliable_regions: regions,
        reliable_sites: sites,
    };
    map.coalesce_regions();
    let site_fraction = if p.site_count() == 0 {
        0.0
    } else {
        k as f64 / p.site_count() as f64
    };
    Ok(ReliabilityPlan {
        map,
        budget: PlanBudget { site_fraction, ..*budget },
        selected: ordered,
        tech: TechParams::default(),
    })
}

/// The fault-free run a coverage target is measured against.
#[derive(Debug, Clone, Copy)]
pub struct CoverageBasis<'a> {
    pub image: &'a Image,
    pub golden: &'a GoldenRecord,
    pub cands: &'a CandidateSet,
}

/// A plan whose dynamic coverage of the candidate set is closest to `target`,
/// over every admissible site count. Returns the plan and its coverage.
pub fn plan_for_coverage(
    scores: &[SiteScore],
    p: &Program,
    profile: &ProfileReport,
    budget: &PlanBudget,
    basis: CoverageBasis<'_>,
    target: f64,
) -> Result<(ReliabilityPlan, f64), PlanError> {
    let forced = scores.iter().filter(|s| s.forced).count();
    let mut best: Option<(ReliabilityPlan, f64)> = None;
    for k in forced..=p.site_count() {
        let plan = plan_with_site_count(scores, p, profile, budget, k)?;
        let q = inject::coverage(basis.image, basis.golden, basis.cands, &plan.map);
        let better = best.as_ref().is_none_or(|(_, bq)| (q - target).abs() < (bq - target).abs());
        if better {
            best = Some((plan, q));
        }
    }
    Ok(best.expect("at least one site count"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub delta_cycles: f64,
    pub delta_energy: f64,
    /// `delta_cycles / total_dynamic`, one baseline cycle per instruction.
    pub slowdown: f64,
}

/// Extra cycles and energy of running the protected sites on STT-RAM.
pub fn estimate_overhead(profile: &ProfileReport, plan: &ReliabilityPlan, params: &TechParams) -> OverheadReport {
    let dw_lat = params.stt_write_latency - params.sram_write_latency;
    let dr_lat = params.stt_read_latency - params.sram_read_latency;
    let dw_en = params.stt_write_energy - params.sram_write_energy;
    let dr_en = params.stt_read_energy - params.sram_read_energy;
    let (mut cycles, mut energy) = (0.0, 0.0);
    for site in &plan.map.reliable_sites {
        let Some(s) = profile.site(*site) else { continue };
        let writes = (s.dest_write_count + s.mem_write_count) as f64;
        let reads = (s.exec_count + s.mem_read_count) as f64;
        cycles += writes * dw_lat + reads * dr_lat;
        energy += writes * dw_en + reads * dr_en;
    }
    OverheadReport {
        delta_cycles: cycles,
        delta_energy: energy,
        slowdown: if profile.total_dynamic == 0 {
            0.0
        } else {
            cycles / profile.total_dynamic as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(site: u32, class: InstrClass, read_refs: u64, write_mods: u64) -> SiteStat {
        SiteStat {
            site: SiteId(site),
            class,
            exec_count: read_refs,
            read_refs,
            write_mods,
        }
    }

    #[test]
    fn score_formula() {
        let s = score_sites(&[stat(0, InstrClass::Arithmetic, 10, 1), stat(1, InstrClass::Control, 0, 0)]);
        assert_eq!(s[0].score, 5.0);
        assert_eq!(s[1].score, 0.0);
    }

    #[test]
    fn forced_sites_lead() {
        let s = score_sites(&[
            stat(0, InstrClass::Arithmetic, 1000, 0),
            stat(1, InstrClass::ThreadPrimitive, 0, 5),
            stat(2, InstrClass::Arithmetic, 1000, 0),
        ]);
        assert!(s[0].forced && s[0].site == SiteId(1));
        assert_eq!(s[1].site, SiteId(0));
        assert_eq!(s[2].site, SiteId(2));
    }

    #[test]
    fn default_tech_is_valid() {
        TechParams::default().validate().unwrap();
        let bad = TechParams {
            stt_write_latency: 0.5,
            ..TechParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn site_count_rounds_up() {
        let b = PlanBudget {
            site_fraction: 0.3,
            ..Default::default()
        };
        assert_eq!(b.site_count(10), 3);
        assert_eq!(b.site_count(11), 4);
        assert_eq!(PlanBudget { site_fraction: 0.0, ..b }.site_count(11), 0);
    }
}
