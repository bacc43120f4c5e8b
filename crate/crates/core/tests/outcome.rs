use proptest::prelude::*;
use softflip_core::corpus;
use softflip_core::inject::FaultSpec;
use softflip_core::ir::{InstrClass, SiteId};
use softflip_core::outcome::{aggregate, classify, first_divergence, Outcome, OutcomeHistogram, Tag};
use softflip_core::vm::{self, golden_run, CrashCause, ExecutionResult, Termination};

fn golden() -> vm::GoldenRecord {
    let b = corpus::get("specrand").unwrap();
    golden_run(&vm::load(&b.program().unwrap()).unwrap(), b.input, 0).unwrap()
}

fn trial(g: &vm::GoldenRecord, termination: Termination, output: Vec<u8>) -> ExecutionResult {
    ExecutionResult {
        termination,
        output,
        ..g.result.clone()
    }
}

#[test]
fn classification_table() {
    let g = golden();
    let out = g.result.output.clone();
    assert_eq!(classify(&trial(&g, Termination::Halted, out.clone()), &g), Outcome::Benign);
    assert_eq!(
        classify(&trial(&g, Termination::Crashed(CrashCause::DivByZero), out.clone()), &g),
        Outcome::Crash(CrashCause::DivByZero)
    );
    assert_eq!(classify(&trial(&g, Termination::Hung, out.clone()), &g), Outcome::Hang);
    let mut bad = out.clone();
    bad[17] ^= 1;
    assert_eq!(classify(&trial(&g, Termination::Halted, bad), &g), Outcome::Sdc(17));
    let short = out[..out.len() - 1].to_vec();
    assert_eq!(classify(&trial(&g, Termination::Halted, short), &g), Outcome::Sdc(out.len() - 1));
}

#[test]
fn divergence_offsets() {
    assert_eq!(first_divergence(b"abc", b"abc"), None);
    assert_eq!(first_divergence(b"abc", b"abd"), Some(2));
    assert_eq!(first_divergence(b"ab", b"abc"), Some(2));
    assert_eq!(first_divergence(b"", b"x"), Some(0));
}

fn spec(site: u32, width: u32) -> FaultSpec {
    FaultSpec {
        site: SiteId(site),
        instance: 0,
        start_bit: 0,
        width,
        seed: 0,
    }
}

#[test]
fn aggregate_counts_by_tag_class_and_width() {
    let p = corpus::get("factorial").unwrap().program().unwrap();
    // site 0 is the load, 1 the multiply
    let rows = vec![
        (spec(0, 1), Outcome::Benign),
        (spec(1, 1), Outcome::Sdc(0)),
        (spec(1, 2), Outcome::Hang),
        (spec(0, 2), Outcome::Crash(CrashCause::OobMemory)),
        (spec(1, 2), Outcome::Sdc(3)),
    ];
    let h = aggregate(rows.iter().map(|(s, o)| (s, o)), &p);
    assert_eq!((h.total, h.crash, h.sdc, h.hang, h.benign), (5, 1, 2, 1, 1));
    let ls = h.by_class[&InstrClass::LoadStore];
    let ar = h.by_class[&InstrClass::Arithmetic];
    assert_eq!((ls.crash, ls.benign, ls.total()), (1, 1, 2));
    assert_eq!((ar.sdc, ar.hang, ar.total()), (2, 1, 3));
    assert_eq!(h.by_width[&1].total(), 2);
    assert_eq!(h.by_width[&2].non_benign(), 3);
    assert_eq!(h.non_benign(), 4);
    assert!((h.percent(Tag::Sdc) - 40.0).abs() < 1e-12);
}

#[test]
fn all_benign_histogram() {
    let p = corpus::get("factorial").unwrap().program().unwrap();
    let rows: Vec<_> = (0..10).map(|_| (spec(1, 1), Outcome::Benign)).collect();
    let h = aggregate(rows.iter().map(|(s, o)| (s, o)), &p);
    assert_eq!((h.total, h.benign, h.non_benign()), (10, 10, 0));
    assert_eq!(h.non_benign_rate(), 0.0);
}

#[test]
fn histogram_json_keys() {
    let mut h = OutcomeHistogram::default();
    h.record(InstrClass::Arithmetic, 1, Outcome::Hang);
    let v = serde_json::to_value(&h).unwrap();
    for k in ["total", "crash", "sdc", "hang", "benign", "by_class", "by_width"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(v["by_class"]["arithmetic"]["hang"], 1);
    assert_eq!(v["by_width"]["1"]["hang"], 1);
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(Outcome::Benign),
        Just(Outcome::Hang),
        (0usize..100).prop_map(Outcome::Sdc),
        Just(Outcome::Crash(CrashCause::OobMemory)),
        Just(Outcome::Crash(CrashCause::Deadlock)),
    ]
}

fn histogram() -> impl Strategy<Value = OutcomeHistogram> {
    let class = prop::sample::select(InstrClass::ALL.to_vec());
    prop::collection::vec((class, 1u32..=8, outcome()), 0..40).prop_map(|rows| {
        let mut h = OutcomeHistogram::default();
        for (c, w, o) in rows {
            h.record(c, w, o);
        }
        h
    })
}

fn merged(a: &OutcomeHistogram, b: &OutcomeHistogram) -> OutcomeHistogram {
    let mut x = a.clone();
    x.merge(b);
    x
}

proptest! {
    #[test]
    fn merge_is_associative_and_commutative(a in histogram(), b in histogram(), c in histogram()) {
        prop_assert_eq!(merged(&merged(&a, &b), &c), merged(&a, &merged(&b, &c)));
        prop_assert_eq!(merged(&a, &b), merged(&b, &a));
        prop_assert_eq!(merged(&a, &OutcomeHistogram::default()), a.clone());
    }

    #[test]
    fn breakdowns_sum_to_marginals(h in histogram()) {
        let counts = h.counts();
        prop_assert_eq!(counts.total(), h.total);
        for t in Tag::ALL {
            let by_class: u64 = h.by_class.values().map(|c| c.get(t)).sum();
            let by_width: u64 = h.by_width.values().map(|c| c.get(t)).sum();
            prop_assert_eq!(by_class, counts.get(t));
            prop_assert_eq!(by_width, counts.get(t));
        }
    }
}
