//! Trial outcome taxonomy and histograms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::inject::FaultSpec;
use crate::ir::{InstrClass, Program};
use crate::vm::{CrashCause, ExecutionResult, GoldenRecord, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Crash,
    Sdc,
    Hang,
    Benign,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::Crash, Tag::Sdc, Tag::Hang, Tag::Benign];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Crash => "crash",
            Tag::Sdc => "sdc",
            Tag::Hang => "hang",
            Tag::Benign => "benign",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "lowercase")]
pub enum Outcome {
    Crash(CrashCause),
    /// Byte offset of the first difference from the golden output.
    Sdc(usize),
    Hang,
    Benign,
}

impl Outcome {
    pub fn tag(self) -> Tag {
        match self {
            Outcome::Crash(_) => Tag::Crash,
            Outcome::Sdc(_) => Tag::Sdc,
            Outcome::Hang => Tag::Hang,
            Outcome::Benign => Tag::Benign,
        }
    }

    pub fn is_benign(self) -> bool {
        self == Outcome::Benign
    }

    /// Crash cause or divergence offset; empty otherwise.
    pub fn detail(self) -> String {
        match self {
            Outcome::Crash(c) => c.name().to_owned(),
            Outcome::Sdc(at) => at.to_string(),
            Outcome::Hang | Outcome::Benign => String::new(),
        }
    }
}

/// Index of the first byte where `a` and `b` differ; the shorter length if
/// one is a prefix of the other.
pub fn first_divergence(a: &[u8], b: &[u8]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

pub fn classify(trial: &ExecutionResult, golden: &GoldenRecord) -> Outcome {
    match trial.termination {
        Termination::Crashed(c) => Outcome::Crash(c),
        Termination::Hung => Outcome::Hang,
        Termination::Halted => match first_divergence(&trial.output, &golden.result.output) {
            Some(at) => Outcome::Sdc(at),
            None => Outcome::Benign,
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub crash: u64,
    pub sdc: u64,
    pub hang: u64,
    pub benign: u64,
}

impl TagCounts {
    pub fn add(&mut self, tag: Tag) {
        *self.get_mut(tag) += 1;
    }

    pub fn get(&self, tag: Tag) -> u64 {
        match tag {
            Tag::Crash => self.crash,
            Tag::Sdc => self.sdc,
            Tag::Hang => self.hang,
            Tag::Benign => self.benign,
        }
    }

    fn get_mut(&mut self, tag: Tag) -> &mut u64 {
        match tag {
            Tag::Crash => &mut self.crash,
            Tag::Sdc => &mut self.sdc,
            Tag::Hang => &mut self.hang,
            Tag::Benign => &mut self.benign,
        }
    }

    pub fn total(&self) -> u64 {
        self.crash + self.sdc + self.hang + self.benign
    }

    pub fn non_benign(&self) -> u64 {
        self.crash + self.sdc + self.hang
    }

    pub fn merge(&mut self, other: &TagCounts) {
        for t in Tag::ALL {
            *self.get_mut(t) += other.get(t);
        }
    }
}

/// Outcome counts with breakdowns by the faulted site's instruction class and
/// by fault width.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeHistogram {
    pub total: u64,
    pub crash: u64,
    pub sdc: u64,
    pub hang: u64,
    pub benign: u64,
    pub by_class: BTreeMap<InstrClass, TagCounts>,
    pub by_width: BTreeMap<u32, TagCounts>,
}

impl OutcomeHistogram {
    pub fn record(&mut self, class: InstrClass, width: u32, outcome: Outcome) {
        let tag = outcome.tag();
        self.total += 1;
        match tag {
            Tag::Crash => self.crash += 1,
            Tag::Sdc => self.sdc += 1,
            Tag::Hang => self.hang += 1,
            Tag::Benign => self.benign += 1,
        }
        self.by_class.entry(class).or_default().add(tag);
        self.by_width.entry(width).or_default().add(tag);
    }

    pub fn counts(&self) -> TagCounts {
        TagCounts {
            crash: self.crash,
            sdc: self.sdc,
            hang: self.hang,
            benign: self.benign,
        }
    }

    pub fn non_benign(&self) -> u64 {
        self.crash + self.sdc + self.hang
    }

    pub fn non_benign_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.non_benign() as f64 / self.total as f64
        }
    }

    /// Percentage of `tag` among all trials.
    pub fn percent(&self, tag: Tag) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.counts().get(tag) as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: &OutcomeHistogram) {
        self.total += other.total;
        self.crash += other.crash;
        self.sdc += other.sdc;
        self.hang += other.hang;
        self.benign += other.benign;
        for (k, v) in &other.by_class {
            self.by_class.entry(*k).or_default().merge(v);
        }
        for (k, v) in &other.by_width {
            self.by_width.entry(*k).or_default().merge(v);
        }
    }
}

/// Histogram of `outcomes`; each fault's class is that of its site in `p`.
pub fn aggregate<'a>(outcomes: impl IntoIterator<Item = (&'a FaultSpec, &'a Outcome)>, p: &Program) -> OutcomeHistogram {
    let mut h = OutcomeHistogram::default();
    for (spec, outcome) in outcomes {
        let class = p
            .instruction(spec.site)
            .map(|i| i.class())
            .expect("fault site exists in program");
        h.record(class, spec.width, *outcome);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(termination: Termination, out: &str) -> ExecutionResult {
        ExecutionResult {
            termination,
            output: out.as_bytes().to_vec(),
            dynamic_count: 0,
            trace_digest: 0,
            per_site_dynamic_counts: vec![],
            checkpoint_digest: None,
        }
    }

    fn golden(out: &str) -> GoldenRecord {
        GoldenRecord {
            result: result(Termination::Halted, out),
            sched_seed: 0,
            input: vec![],
        }
    }

    #[test]
    fn classification() {
        let g = golden("0123456789abcdefghij\n");
        assert_eq!(classify(&result(Termination::Halted, "0123456789abcdefghij\n"), &g), Outcome::Benign);
        assert_eq!(
            classify(&result(Termination::Crashed(CrashCause::DivByZero), ""), &g),
            Outcome::Crash(CrashCause::DivByZero)
        );
        assert_eq!(classify(&result(Termination::Halted, "0123456789abcdefgXij\n"), &g), Outcome::Sdc(17));
        assert_eq!(classify(&result(Termination::Halted, "0123"), &g), Outcome::Sdc(4));
        assert_eq!(classify(&result(Termination::Hung, "0123456789abcdefghij\n"), &g), Outcome::Hang);
    }

    #[test]
    fn outcome_json_shape() {
        let s = serde_json::to_string(&Outcome::Crash(CrashCause::OobMemory)).unwrap();
        assert_eq!(s, r#"{"outcome":"crash","detail":"oob_memory"}"#);
        assert_eq!(serde_json::to_string(&Outcome::Benign).unwrap(), r#"{"outcome":"benign"}"#);
        let back: Outcome = serde_json::from_str(r#"{"outcome":"sdc","detail":3}"#).unwrap();
        assert_eq!(back, Outcome::Sdc(3));
    }

    #[test]
    fn uniform_benign() {
        let mut h = OutcomeHistogram::default();
        for _ in 0..10 {
            h.record(InstrClass::Arithmetic, 1, Outcome::Benign);
        }
        assert_eq!(h.counts(), TagCounts { benign: 10, ..Default::default() });
        assert_eq!(h.total, 10);
    }

    #[test]
    fn histogram_json_keys() {
        let mut h = OutcomeHistogram::default();
        h.record(InstrClass::LoadStore, 2, Outcome::Hang);
        let v = serde_json::to_value(&h).unwrap();
        assert_eq!(v["by_class"]["load_store"]["hang"], 1);
        assert_eq!(v["by_width"]["2"]["hang"], 1);
        let back: OutcomeHistogram = serde_json::from_value(v).unwrap();
        assert_eq!(back, h);
    }
}
