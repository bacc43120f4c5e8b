use proptest::prelude::*;
use softflip_core::corpus;
use softflip_core::ir::{parse_program, InstrClass, Opcode, Program};
use softflip_core::profiler::{profile, site_stats, time_shares, time_shares_csv, ProfileReport};

fn prof(src: &str, input: &[u64]) -> (Program, ProfileReport) {
    let p = parse_program(src).unwrap();
    let r = profile(&p, input, 0).unwrap();
    (p, r)
}

fn bench(name: &str) -> (Program, ProfileReport) {
    let b = corpus::get(name).unwrap();
    let p = b.program().unwrap();
    let r = profile(&p, b.input, 0).unwrap();
    (p, r)
}

fn sites_with(p: &Program, op: Opcode) -> Vec<softflip_core::ir::SiteId> {
    p.instructions().filter(|i| i.opcode == op).map(|i| i.site_id).collect()
}

#[test]
fn specrand_calls_output_routine_1002_times() {
    let (_, r) = bench("specrand");
    assert_eq!(r.function("printf").unwrap().calls, 1002);
}

#[test]
fn inclusive_and_exclusive_of_leaf_call() {
    let src = "fn main\n movi r1, 1\n call r2, f\n movi r3, 3\n movi r4, 4\n halt\n\
               fn f\n movi r1, 1\n movi r1, 2\n movi r1, 3\n movi r1, 4\n movi r1, 5\n\
               movi r1, 6\n movi r1, 7\n movi r1, 8\n movi r1, 9\n ret r1\n";
    let (_, r) = prof(src, &[]);
    let f = r.function("f").unwrap();
    let main = r.function("main").unwrap();
    assert_eq!((f.calls, f.inclusive, f.exclusive), (1, 10, 10));
    assert_eq!((main.calls, main.inclusive, main.exclusive), (1, 15, 5));
}

#[test]
fn recursion_counts_outermost_activation_once() {
    let src = "fn main\n movi r0, 4\n call r1, f\n halt\n\
               fn f params=1\n brz r0, done\n sub r0, r0, 1\n call r1, f\ndone:\n ret r0\n";
    let (_, r) = prof(src, &[]);
    let f = r.function("f").unwrap();
    assert_eq!(f.calls, 5);
    // four recursive levels of 4 instructions plus the base case's 2
    assert_eq!(f.exclusive, 4 * 4 + 2);
    assert_eq!(f.inclusive, f.exclusive);
    assert_eq!(r.function("main").unwrap().inclusive, r.total_dynamic);
}

#[test]
fn thread_primitive_counts() {
    for name in ["mm", "qs"] {
        let (p, r) = bench(name);
        assert_eq!(r.primitive_calls(Opcode::Spawn), 2, "{name}");
        assert_eq!(r.primitive_calls(Opcode::Join), 2, "{name}");
        for s in sites_with(&p, Opcode::Spawn).into_iter().chain(sites_with(&p, Opcode::Join)) {
            assert!(r.site(s).unwrap().exec_count >= 1);
        }
    }
    let (p, r) = bench("mm");
    let spawn_execs: u64 = sites_with(&p, Opcode::Spawn).iter().map(|s| r.site(*s).unwrap().exec_count).sum();
    assert_eq!(spawn_execs, 2);
}

#[test]
fn entry_owns_the_whole_run() {
    for b in &corpus::CORPUS {
        let p = b.program().unwrap();
        let r = profile(&p, b.input, 1).unwrap();
        assert_eq!(r.function(&p.entry).unwrap().inclusive, r.total_dynamic, "{}", b.name);
        let rows = time_shares(&r);
        assert_eq!(rows[0].function, p.entry);
        assert_eq!(rows[0].inclusive_pct, 100.0);
    }
}

#[test]
fn conservation_and_exclusive_sum() {
    for b in &corpus::CORPUS {
        let p = b.program().unwrap();
        let r = profile(&p, b.input, 2).unwrap();
        let exec: u64 = r.per_site.values().map(|s| s.exec_count).sum();
        assert_eq!(exec, r.total_dynamic, "{}", b.name);
        let excl: u64 = r.per_function.values().map(|f| f.exclusive).sum();
        assert_eq!(excl, r.total_dynamic, "{}", b.name);
        for (name, f) in &r.per_function {
            assert!(f.exclusive <= f.inclusive, "{} {name}", b.name);
        }
        let pct: f64 = time_shares(&r).iter().map(|t| t.exclusive_pct).sum();
        assert!((pct - 100.0).abs() < 1e-9, "{} {pct}", b.name);
    }
}

#[test]
fn caller_inclusive_covers_callee_on_a_chain() {
    let src = "fn main\n call r1, a\n halt\nfn a\n movi r1, 1\n call r1, b\n ret r1\n\
               fn b\n movi r1, 1\n call r1, c\n ret r1\nfn c\n movi r1, 1\n ret r1\n";
    let (_, r) = prof(src, &[]);
    let incl = |n: &str| r.function(n).unwrap().inclusive;
    assert_eq!((incl("main"), incl("a"), incl("b"), incl("c")), (10, 8, 5, 2));
}

#[test]
fn uncalled_functions_are_absent_and_ties_break_by_name() {
    let src = "fn main\n call r1, zeta\n call r1, alpha\n halt\n\
               fn zeta\n movi r1, 1\n ret r1\nfn alpha\n movi r1, 2\n ret r1\nfn unused\n ret r0\n";
    let (_, r) = prof(src, &[]);
    let names: Vec<_> = time_shares(&r).into_iter().map(|t| t.function).collect();
    assert_eq!(names, vec!["main", "alpha", "zeta"]);
    let csv = time_shares_csv(&time_shares(&r));
    assert!(csv.starts_with("function,calls,incl_pct,excl_pct,avg_incl,avg_excl\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn averages_divide_by_calls() {
    let src = "fn main\n call r1, f\n call r1, f\n call r1, f\n halt\nfn f\n movi r1, 1\n movi r1, 1\n ret r1\n";
    let (_, r) = prof(src, &[]);
    let row = time_shares(&r).into_iter().find(|t| t.function == "f").unwrap();
    assert_eq!(row.calls, 3);
    assert_eq!(row.avg_inclusive, 3.0);
    assert!((row.inclusive_pct - 100.0 * 9.0 / 13.0).abs() < 1e-12);
}

#[test]
fn branch_and_store_statistics() {
    let src = "global g words=1\nfn main\n movi r1, 50\nl:\n store r1, r63, @g\n sub r1, r1, 1\n brnz r1, l\n halt\n";
    let (p, r) = prof(src, &[]);
    let stats = site_stats(&r, &p);
    let br = stats.iter().find(|s| p.instruction(s.site).unwrap().opcode == Opcode::Brnz).unwrap();
    assert_eq!((br.exec_count, br.read_refs, br.write_mods), (50, 50, 0));
    let st = stats.iter().find(|s| s.class == InstrClass::LoadStore).unwrap();
    assert_eq!(st.exec_count, 50);
    assert!(st.write_mods >= 50);
    assert_eq!(r.site(st.site).unwrap().globals.iter().collect::<Vec<_>>(), vec!["g"]);
}

#[test]
fn factorial_multiply_runs_n_times() {
    let p = corpus::get("factorial").unwrap().program().unwrap();
    let r = profile(&p, &[10], 0).unwrap();
    let mul = sites_with(&p, Opcode::Mul);
    assert_eq!(mul.len(), 1);
    assert_eq!(r.site(mul[0]).unwrap().exec_count, 10);
}

#[test]
fn read_refs_and_write_mods_follow_counts() {
    for b in &corpus::CORPUS {
        let p = b.program().unwrap();
        let r = profile(&p, b.input, 0).unwrap();
        for s in site_stats(&r, &p) {
            let sp = r.site(s.site).unwrap();
            assert_eq!(s.read_refs, sp.exec_count + sp.mem_read_count);
            assert_eq!(s.write_mods, sp.dest_write_count + sp.mem_write_count);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn profile_is_deterministic(idx in 0usize..7, seed in any::<u64>()) {
        let b = &corpus::CORPUS[idx];
        let p = b.program().unwrap();
        prop_assert_eq!(profile(&p, b.input, seed).unwrap(), profile(&p, b.input, seed).unwrap());
    }
}
