use softflip_core::campaign::{
    compare_arch, prepare, run_campaign, Architecture, CampaignConfig, CampaignError, CampaignReport, WORKERS_ENV,
};
use softflip_core::corpus;
use softflip_core::inject::{FaultModel, Selector};
use softflip_core::outcome::Outcome;
use softflip_core::planner::{build_plan, plan_with_site_count, score_sites, PlanBudget, ReliabilityPlan};
use softflip_core::profiler::{profile_golden, site_stats};
use softflip_core::report::{self, campaign_csv, campaign_json, parse_campaign, strip_wall_clock, summarize};
use softflip_core::seed::{mix64, trial_seed};

fn cfg(bench: &str, seed: u64, trials: u64) -> CampaignConfig {
    let mut c = CampaignConfig::new(bench, seed);
    c.trials = trials;
    c
}

fn plan(bench: &str, master: u64, f: f64) -> ReliabilityPlan {
    let c = CampaignConfig::new(bench, master);
    let prep = prepare(bench, None, c.sched_seed()).unwrap();
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    let scores = score_sites(&site_stats(&prof, &prep.program));
    let budget = PlanBudget {
        site_fraction: f,
        ..PlanBudget::default()
    };
    build_plan(&scores, &prep.program, &prof, &budget).unwrap()
}

fn protected(mut c: CampaignConfig, p: ReliabilityPlan) -> CampaignConfig {
    c.architecture = Architecture::Protected(p);
    c
}

#[test]
fn reports_are_deterministic() {
    let c = cfg("factorial", 3, 100);
    let a = strip_wall_clock(&campaign_json(&run_campaign(&c).unwrap()));
    let b = strip_wall_clock(&campaign_json(&run_campaign(&c).unwrap()));
    assert_eq!(a, b);
    assert!(!a.contains("wall_clock_ms"));
}

#[test]
fn trial_seeds_derive_from_master() {
    let c = cfg("qs", 77, 20);
    let r = run_campaign(&c).unwrap();
    assert_eq!(r.config.sched_seed, mix64(77));
    for t in &r.trials {
        // a redraw replaces the seed by its mix, so either form is valid
        let s0 = trial_seed(77, t.trial);
        assert!(t.seed == s0 || (0..64).scan(s0, |s, _| { *s = mix64(*s); Some(*s) }).any(|s| s == t.seed));
    }
    assert_eq!(r.trials.iter().map(|t| t.trial).collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
}

#[test]
fn worker_count_does_not_change_output() {
    let c = cfg("stack", 9, 60);
    std::env::set_var(WORKERS_ENV, "1");
    let one = strip_wall_clock(&campaign_json(&run_campaign(&c).unwrap()));
    std::env::set_var(WORKERS_ENV, "7");
    let seven = strip_wall_clock(&campaign_json(&run_campaign(&c).unwrap()));
    std::env::remove_var(WORKERS_ENV);
    assert_eq!(one, seven);
}

#[test]
fn specrand_is_sdc_dominant() {
    let r = run_campaign(&cfg("specrand", 1, 1000)).unwrap();
    assert!(r.histogram.sdc >= r.histogram.crash, "{:?}", r.histogram);
}

#[test]
fn mm_mbu_baseline_fails_sometimes() {
    let mut c = cfg("mm", 2, 300);
    c.model = FaultModel::mbu();
    let r = run_campaign(&c).unwrap();
    assert!(r.histogram.non_benign_rate() > 0.0);
    assert!(r.trials.iter().all(|t| (2..=4).contains(&t.width)));
}

#[test]
fn histogram_matches_trial_log() {
    let r = run_campaign(&cfg("circular_buffer", 4, 200)).unwrap();
    assert_eq!(r.trials.len(), 200);
    assert_eq!(r.histogram.total, 200);
    let sdc = r.trials.iter().filter(|t| matches!(t.outcome, Outcome::Sdc(_))).count() as u64;
    assert_eq!(sdc, r.histogram.sdc);
    assert!(r.coverage.is_none() && r.overhead.is_none());
}

#[test]
fn empty_plan_gives_no_reduction() {
    let c = cfg("qs", 5, 200);
    let base = run_campaign(&c).unwrap();
    let mut empty = plan("qs", 5, 1.0);
    empty.map = Default::default();
    let prot = run_campaign(&protected(c, empty)).unwrap();
    assert_eq!(prot.coverage, Some(0.0));
    let d = compare_arch(&base, &prot).unwrap();
    assert_eq!((d.reduction, d.masked), (0.0, 0));
    assert_eq!(d.baseline_rate, d.protected_rate);
}

#[test]
fn full_plan_masks_everything() {
    let c = cfg("blackscholes-lite", 6, 200);
    let base = run_campaign(&c).unwrap();
    let prot = run_campaign(&protected(c, plan("blackscholes-lite", 6, 1.0))).unwrap();
    assert_eq!(prot.coverage, Some(1.0));
    let d = compare_arch(&base, &prot).unwrap();
    assert_eq!((d.protected_rate, d.reduction, d.masked), (0.0, 1.0, 200));
}

#[test]
fn partial_plan_only_turns_masked_trials_benign() {
    let c = cfg("stack", 8, 300);
    let base = run_campaign(&c).unwrap();
    let prot = run_campaign(&protected(c, plan("stack", 8, 0.3))).unwrap();
    let d = compare_arch(&base, &prot).unwrap();
    for (b, p) in base.trials.iter().zip(&prot.trials) {
        if p.masked {
            assert_eq!(p.outcome, Outcome::Benign);
        } else {
            assert_eq!(p.outcome, b.outcome);
        }
    }
    assert!((0.0..=1.0).contains(&d.reduction));
    assert_eq!(d.masked, prot.trials.iter().filter(|t| t.masked).count() as u64);
    assert!(prot.overhead.unwrap().delta_cycles > 0.0);
}

#[test]
fn mismatched_pairs_are_refused() {
    let base = run_campaign(&cfg("factorial", 1, 50)).unwrap();
    let other_seed = run_campaign(&protected(cfg("factorial", 2, 50), plan("factorial", 2, 0.5))).unwrap();
    assert!(matches!(compare_arch(&base, &other_seed), Err(CampaignError::Unpaired(_))));
    let other_trials = run_campaign(&protected(cfg("factorial", 1, 40), plan("factorial", 1, 0.5))).unwrap();
    assert!(matches!(compare_arch(&base, &other_trials), Err(CampaignError::Unpaired(_))));
    assert!(matches!(compare_arch(&base, &base), Err(CampaignError::Unpaired(_))));

    let prot = run_campaign(&protected(cfg("factorial", 1, 50), plan("factorial", 1, 0.5))).unwrap();
    let mut forged: CampaignReport = prot.clone();
    forged.trials[0].start_bit ^= 1;
    assert!(compare_arch(&base, &forged).is_err());
    assert!(compare_arch(&base, &prot).is_ok());
}

#[test]
fn pairing_violation_detected() {
    let base = run_campaign(&cfg("mm", 3, 100)).unwrap();
    let mut prot = run_campaign(&protected(cfg("mm", 3, 100), plan("mm", 3, 1.0))).unwrap();
    let i = base.trials.iter().position(|t| !t.outcome.is_benign()).unwrap();
    prot.trials[i].outcome = base.trials[i].outcome;
    assert!(matches!(
        compare_arch(&base, &prot),
        Err(CampaignError::PairingViolation { .. })
    ));
}

#[test]
fn configuration_errors() {
    assert!(matches!(run_campaign(&cfg("nope", 1, 1)), Err(CampaignError::UnknownBenchmark(_))));
    assert!(matches!(run_campaign(&cfg("factorial", 1, 0)), Err(CampaignError::NoTrials)));
    let mut c = cfg("factorial", 1, 1);
    c.selector = Selector::classes([softflip_core::ir::InstrClass::ThreadPrimitive]);
    assert!(run_campaign(&c).is_err());
    let mut defect = cfg("factorial", 1, 1);
    defect.input = Some(vec![u64::MAX]);
    // a huge loop count exhausts the golden budget
    let e = run_campaign(&defect).unwrap_err();
    assert!(e.is_benchmark_defect(), "{e}");
}

#[test]
fn single_trial_csv() {
    let r = run_campaign(&cfg("factorial", 1, 1)).unwrap();
    let csv = campaign_csv(&r);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "trial,seed,site,instance,start_bit,width,outcome,detail");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn json_and_csv_agree() {
    let r = run_campaign(&cfg("stack", 12, 80)).unwrap();
    let back = parse_campaign(&campaign_json(&r)).unwrap();
    assert_eq!(back, r);
    let csv = campaign_csv(&r);
    assert_eq!(csv.lines().count() - 1, back.trials.len());
    for (line, t) in csv.lines().skip(1).zip(&back.trials) {
        let cols: Vec<_> = line.split(',').collect();
        assert_eq!(cols[0].parse::<u64>().unwrap(), t.trial);
        assert_eq!(cols[2].parse::<u32>().unwrap(), t.site.0);
        assert_eq!(cols[6], t.outcome.tag().name());
    }
}

#[test]
fn summarize_round_trip() {
    let r = run_campaign(&protected(cfg("qs", 13, 100), plan("qs", 13, 0.3))).unwrap();
    let text = campaign_json(&r);
    assert_eq!(summarize(&text).unwrap(), r.histogram);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["percentages"]["benign"].is_f64());
    assert!(text.trim_end().ends_with('}'));
    let mut tampered: serde_json::Value = v.clone();
    tampered["histogram"]["sdc"] = serde_json::Value::from(9999);
    assert!(matches!(
        summarize(&tampered.to_string()),
        Err(report::ReportError::Inconsistent)
    ));
}

#[test]
fn protected_report_round_trips_its_plan() {
    let p = plan("mm", 1, 0.4);
    let prep = prepare("mm", None, mix64(1)).unwrap();
    let prof = profile_golden(&prep.image, &prep.program, &prep.golden);
    let scores = score_sites(&site_stats(&prof, &prep.program));
    let again = plan_with_site_count(&scores, &prep.program, &prof, &p.budget, p.map.reliable_sites.len()).unwrap();
    assert_eq!(again.map, p.map);
    let r = run_campaign(&protected(cfg("mm", 1, 20), p.clone())).unwrap();
    let back = parse_campaign(&campaign_json(&r)).unwrap();
    assert_eq!(back.config.architecture, Architecture::Protected(p));
}

#[test]
fn every_benchmark_runs_a_small_campaign() {
    for name in corpus::names() {
        for model in [FaultModel::seu(), FaultModel::mbu()] {
            let mut c = cfg(name, 21, 25);
            c.model = model;
            let r = run_campaign(&c).unwrap();
            assert_eq!(r.histogram.total, 25, "{name}");
        }
    }
}
