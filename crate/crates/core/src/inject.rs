//! Fault selection and bit-flip injection.
//!
//! A campaign first filters the static sites with a [`Selector`], weighting
//! each by its fault-free execution count ([`enumerate_candidates`]). Each
//! trial then picks one dynamic instance uniformly over all candidate
//! instances and a contiguous run of bits within the destination word
//! ([`draw_fault`]), and replays the program with that value flipped
//! ([`inject_run`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ir::{InstrClass, Program, SiteId, Word, WORD_BITS};
use crate::vm::{self, DestWrite, ExecHook, ExecutionResult, GoldenRecord, Image, ReliabilityMap, RunLimits};

/// Widths an MBU may take.
pub const MBU_WIDTHS: std::ops::RangeInclusive<u32> = 2..=8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InjectError {
    #[error("selector matches no executed instruction with a destination")]
    EmptyCandidates,
    #[error("selector has no instruction class")]
    EmptySelector,
    #[error("invalid fault model: {0}")]
    Model(String),
    #[error("unknown selector `{0}` (expected all, arith or loadstore)")]
    UnknownSelector(String),
    #[error("fault at site {site} instance {instance} was never reached")]
    NotReached { site: SiteId, instance: u64 },
}

/// Which static sites are eligible for injection. Class and site filters
/// compose by intersection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub classes: BTreeSet<InstrClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<BTreeSet<SiteId>>,
}

impl Selector {
    pub fn classes(classes: impl IntoIterator<Item = InstrClass>) -> Self {
        Self {
            classes: classes.into_iter().collect(),
            sites: None,
        }
    }

    pub fn all() -> Self {
        Self::classes(InstrClass::ALL.iter().copied())
    }

    pub fn arithmetic() -> Self {
        Self::classes([InstrClass::Arithmetic])
    }

    pub fn load_store() -> Self {
        Self::classes([InstrClass::LoadStore])
    }

    pub fn with_sites(mut self, sites: impl IntoIterator<Item = SiteId>) -> Self {
        self.sites = Some(sites.into_iter().collect());
        self
    }

    pub fn matches(&self, site: SiteId, class: InstrClass) -> bool {
        self.classes.contains(&class) && self.sites.as_ref().is_none_or(|s| s.contains(&site))
    }

    /// Short name used on the command line, if this is one of the presets.
    pub fn preset_name(&self) -> Option<&'static str> {
        if self.sites.is_some() {
            None
        } else if *self == Self::all() {
            Some("all")
        } else if *self == Self::arithmetic() {
            Some("arith")
        } else if *self == Self::load_store() {
            Some("loadstore")
        } else {
            None
        }
    }
}

impl FromStr for Selector {
    type Err = InjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::all()),
            "arith" | "arithmetic" => Ok(Self::arithmetic()),
            "loadstore" | "load_store" => Ok(Self::load_store()),
            other => Err(InjectError::UnknownSelector(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Seu,
    Mbu,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::Seu => "seu",
            FaultKind::Mbu => "mbu",
        })
    }
}

/// Single- or multi-bit upset. For `mbu`, `widths` maps a burst width to its
/// probability. JSON form: `{"kind":"mbu","widths":{"2":0.34,"3":0.33,"4":0.33}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    pub kind: FaultKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub widths: BTreeMap<u32, f64>,
}

impl FaultModel {
    pub fn seu() -> Self {
        Self {
            kind: FaultKind::Seu,
            widths: BTreeMap::new(),
        }
    }

    /// Uniform over 2, 3 and 4 adjacent bits.
    pub fn mbu() -> Self {
        Self {
            kind: FaultKind::Mbu,
            widths: [(2, 1.0 / 3.0), (3, 1.0 / 3.0), (4, 1.0 / 3.0)].into_iter().collect(),
        }
    }

    /// Every fault flips exactly `width` bits (`seu` when `width == 1`).
    pub fn fixed_width(width: u32) -> Self {
        if width == 1 {
            Self::seu()
        } else {
            Self {
                kind: FaultKind::Mbu,
                widths: [(width, 1.0)].into_iter().collect(),
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, InjectError> {
        let m: Self = serde_json::from_str(text).map_err(|e| InjectError::Model(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), InjectError> {
        match self.kind {
            FaultKind::Seu if !self.widths.is_empty() && self.widths.keys().any(|&w| w != 1) => {
                Err(InjectError::Model("seu flips exactly one bit".into()))
            }
            FaultKind::Seu => Ok(()),
            FaultKind::Mbu => {
                if self.widths.is_empty() {
                    return Err(InjectError::Model("mbu needs a width distribution".into()));
                }
                if let Some(w) = self.widths.keys().find(|w| !MBU_WIDTHS.contains(w)) {
                    return Err(InjectError::Model(format!("mbu width {w} outside 2..=8")));
                }
                if self.widths.values().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(InjectError::Model("negative or non-finite probability".into()));
                }
                let sum: f64 = self.widths.values().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(InjectError::Model(format!("probabilities sum to {sum}, not 1")));
                }
                Ok(())
            }
        }
    }

    fn sample_width(&self, rng: &mut ChaCha8Rng) -> u32 {
        if self.kind == FaultKind::Seu {
            return 1;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (&w, &p) in &self.widths {
            acc += p;
            if u < acc {
                return w;
            }
        }
        *self.widths.keys().next_back().expect("validated model")
    }
}

/// One fully determined perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub site: SiteId,
    /// Ordinal among the fault-free run's executions of `site`.
    pub instance: u64,
    pub start_bit: u32,
    pub width: u32,
    /// Seed the spec was drawn from.
    pub seed: u64,
}

/// Eligible sites with their fault-free execution counts, in site order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    sites: Vec<(SiteId, u64)>,
    /// Running total of instances up to and including each entry.
    ends: Vec<u64>,
}

impl CandidateSet {
    pub fn new(sites: impl IntoIterator<Item = (SiteId, u64)>) -> Result<Self, InjectError> {
        let mut sites: Vec<_> = sites.into_iter().filter(|(_, n)| *n > 0).collect();
        sites.sort();
        sites.dedup_by_key(|(s, _)| *s);
        if sites.is_empty() {
            return Err(InjectError::EmptyCandidates);
        }
        let ends = sites
            .iter()
            .scan(0u64, |acc, (_, n)| {
                *acc += n;
                Some(*acc)
            })
            .collect();
        Ok(Self { sites, ends })
    }

    pub fn sites(&self) -> &[(SiteId, u64)] {
        &self.sites
    }

    pub fn total_instances(&self) -> u64 {
        *self.ends.last().expect("non-empty")
    }

    pub fn contains(&self, site: SiteId) -> bool {
        self.count(site) > 0
    }

    pub fn count(&self, site: SiteId) -> u64 {
        self.sites
            .binary_search_by_key(&site, |(s, _)| *s)
            .map_or(0, |i| self.sites[i].1)
    }

    /// The `k`-th instance in site order, `k < total_instances()`.
    pub fn locate(&self, k: u64) -> (SiteId, u64) {
        let i = self.ends.partition_point(|&end| end <= k);
        let before = if i == 0 { 0 } else { self.ends[i - 1] };
        (self.sites[i].0, k - before)
    }

    /// Every candidate `(site, instance)` in site order.
    pub fn instances(&self) -> impl Iterator<Item = (SiteId, u64)> + '_ {
        self.sites.iter().flat_map(|&(s, n)| (0..n).map(move |i| (s, i)))
    }
}

/// Sites matching `sel` that have a destination and ran at least once in
/// `golden`.
pub fn enumerate_candidates(
    golden: &GoldenRecord,
    program: &Program,
    sel: &Selector,
) -> Result<CandidateSet, InjectError> {
    if sel.classes.is_empty() {
        return Err(InjectError::EmptySelector);
    }
    let counts = &golden.result.per_site_dynamic_counts;
    CandidateSet::new(
        program
            .instructions()
            .filter(|ins| ins.opcode.has_destination() && sel.matches(ins.site_id, ins.class()))
            .map(|ins| (ins.site_id, counts.get(ins.site_id.index()).copied().unwrap_or(0))),
    )
}

/// Draws one fault: instance uniform over all candidate instances, width from
/// the model, start bit uniform over `[0, 64 - width]`.
pub fn draw_fault(cands: &CandidateSet, model: &FaultModel, seed: u64) -> FaultSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(0..cands.total_instances());
    let (site, instance) = cands.locate(k);
    let width = model.sample_width(&mut rng);
    let start_bit = rng.gen_range(0..=WORD_BITS - width);
    FaultSpec {
        site,
        instance,
        start_bit,
        width,
        seed,
    }
}

/// `w` with `width` contiguous bits starting at `start_bit` inverted.
#[inline]
pub fn apply_flip(w: Word, start_bit: u32, width: u32) -> Word {
    debug_assert!(width >= 1 && start_bit + width <= WORD_BITS);
    let ones = if width >= WORD_BITS { !0 } else { (1u64 << width) - 1 };
    w ^ (ones << start_bit)
}

/// Hook that flips the destination of one `(site, instance)`.
#[derive(Debug, Clone)]
pub struct FlipHook {
    spec: FaultSpec,
    /// Dynamic step at which the target value was committed.
    pub fired_at: Option<u64>,
    /// The target destination was protected, so the flip was discarded.
    pub masked: bool,
}

impl FlipHook {
    pub fn new(spec: FaultSpec) -> Self {
        Self {
            spec,
            fired_at: None,
            masked: false,
        }
    }
}

impl ExecHook for FlipHook {
    #[inline]
    fn on_write(&mut self, w: &DestWrite) -> Option<Word> {
        if w.site != self.spec.site || w.instance != self.spec.instance || self.fired_at.is_some() {
            return None;
        }
        self.fired_at = Some(w.step);
        self.masked = w.protected;
        Some(apply_flip(w.value, self.spec.start_bit, self.spec.width))
    }
}

#[derive(Debug, Clone)]
pub struct InjectedRun {
    pub result: ExecutionResult,
    pub fired_at: u64,
    pub masked: bool,
}

/// Replays the program with `spec` applied. Errors if the targeted instance
/// never commits a value.
pub fn inject_run(
    image: &Image,
    input: &[Word],
    sched_seed: u64,
    spec: &FaultSpec,
    rmap: &ReliabilityMap,
    limits: RunLimits,
) -> Result<InjectedRun, InjectError> {
    let mut hook = FlipHook::new(*spec);
    let result = vm::run(image, input, sched_seed, limits, rmap, &mut hook);
    match hook.fired_at {
        Some(fired_at) => Ok(InjectedRun {
            result,
            fired_at,
            masked: hook.masked,
        }),
        None => Err(InjectError::NotReached {
            site: spec.site,
            instance: spec.instance,
        }),
    }
}

/// Share of candidate instances whose destination is protected under `rmap`,
/// measured exactly by replaying the fault-free run.
pub fn coverage(image: &Image, golden: &GoldenRecord, cands: &CandidateSet, rmap: &ReliabilityMap) -> f64 {
    struct Count<'a> {
        cands: &'a CandidateSet,
        protected: u64,
    }
    impl ExecHook for Count<'_> {
        fn on_write(&mut self, w: &DestWrite) -> Option<Word> {
            if w.protected && self.cands.contains(w.site) {
                self.protected += 1;
            }
            None
        }
    }
    let mut hook = Count { cands, protected: 0 };
    vm::run(
        image,
        &golden.input,
        golden.sched_seed,
        RunLimits::budget(golden.result.dynamic_count),
        rmap,
        &mut hook,
    );
    hook.protected as f64 / cands.total_instances() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_examples() {
        assert_eq!(apply_flip(0, 0, 1), 1);
        assert_eq!(apply_flip(0b0000, 1, 2), 0b0110);
        assert_eq!(apply_flip(0, 0, 64), !0);
        assert_eq!(apply_flip(0, 63, 1), 1 << 63);
    }

    #[test]
    fn locate_walks_sites_in_order() {
        let c = CandidateSet::new([(SiteId(4), 2), (SiteId(1), 3), (SiteId(2), 0)]).unwrap();
        let all: Vec<_> = (0..c.total_instances()).map(|k| c.locate(k)).collect();
        assert_eq!(all, c.instances().collect::<Vec<_>>());
        assert_eq!(all[0], (SiteId(1), 0));
        assert_eq!(all[3], (SiteId(4), 0));
        assert!(!c.contains(SiteId(2)));
    }

    #[test]
    fn degenerate_set_is_certain() {
        let c = CandidateSet::new([(SiteId(9), 1)]).unwrap();
        for seed in 0..50 {
            let f = draw_fault(&c, &FaultModel::seu(), seed);
            assert_eq!((f.site, f.instance, f.width), (SiteId(9), 0, 1));
        }
    }

    #[test]
    fn mbu_widths_follow_model() {
        let c = CandidateSet::new([(SiteId(0), 10)]).unwrap();
        let m = FaultModel::mbu();
        for seed in 0..500 {
            let f = draw_fault(&c, &m, seed);
            assert!((2..=4).contains(&f.width));
            assert!(f.start_bit + f.width <= 64);
        }
    }

    #[test]
    fn model_json() {
        let m = FaultModel::from_json(r#"{"kind":"mbu","widths":{"2":0.34,"3":0.33,"4":0.33}}"#).unwrap();
        assert_eq!(m.widths.len(), 3);
        assert!(FaultModel::from_json(r#"{"kind":"mbu","widths":{"9":1.0}}"#).is_err());
        assert!(FaultModel::from_json(r#"{"kind":"mbu","widths":{"2":0.5}}"#).is_err());
        assert_eq!(FaultModel::from_json(r#"{"kind":"seu"}"#).unwrap(), FaultModel::seu());
        let text = serde_json::to_string(&FaultModel::mbu()).unwrap();
        assert_eq!(FaultModel::from_json(&text).unwrap(), FaultModel::mbu());
    }

    #[test]
    fn empty_set_is_an_error() {
        assert_eq!(CandidateSet::new([(SiteId(0), 0)]), Err(InjectError::EmptyCandidates));
    }
}
