//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always visible. The
//! process fails when the set of failing criteria differs from
//! `KNOWN_FAILURES`, which lists results recorded as unmet in the
//! decisions ledger.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndpsim::engine::{self, run_with, EnergyLedger, RunOptions, StatsReport};
use ndpsim::interp::{interpret_trace, PageStore};
use ndpsim::kernel::{interpret_kernel, random_contents, random_kernel, vectorize_kernel};
use ndpsim::offloader::{ChoiceContext, OperandLoc, INF};
use ndpsim::workloads::{
    attach_random_contents, builtin_profile, builtin_profiles, generate, WorkloadProfile,
};
use ndpsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that do not hold with the shipped model.
const KNOWN_FAILURES: &[u32] = &[4];

type Outcome = Result<String, String>;

fn desk() -> SimConfig {
    default_config().desk_scale(4)
}

/// Conduit, BW, DM and Ideal reports per built-in profile at desk scale.
struct ProfileRuns {
    name: String,
    conduit: StatsReport,
    bw: StatsReport,
    dm: StatsReport,
    ideal: StatsReport,
    elapsed: Duration,
}

fn run_profiles() -> Vec<ProfileRuns> {
    let cfg = desk();
    std::thread::scope(|s| {
        let handles: Vec<_> = builtin_profiles()
            .into_iter()
            .map(|p| {
                let cfg = &cfg;
                s.spawn(move || {
                    let start = Instant::now();
                    let t = generate(&p).expect("profile generates");
                    let run = |pol| engine::run(&t, cfg, pol, 0).expect("run succeeds");
                    ProfileRuns {
                        name: p.name.clone(),
                        conduit: run(Policy::Conduit),
                        bw: run(Policy::BwOffloading),
                        dm: run(Policy::DmOffloading),
                        ideal: run(Policy::Ideal),
                        elapsed: start.elapsed(),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("profile thread")).collect()
    })
}

// 1. Random feature vectors against a brute-force argmin.

fn oracle_total(fv: &FeatureVector, i: usize) -> Option<u128> {
    if fv.latency_comp[i] == INF {
        return None;
    }
    let wait = fv.delay_dd.max(fv.delay_queue[i]);
    Some(fv.latency_comp[i] as u128 + fv.latency_dm[i] as u128 + wait as u128)
}

fn oracle_choice(fv: &FeatureVector) -> ResourceKind {
    // Ties: resident first, then PUD, IFP, ISP.
    let order = [ResourceKind::Pud, ResourceKind::Ifp, ResourceKind::Isp];
    let mut cands: Vec<(u128, bool, usize, ResourceKind)> = order
        .iter()
        .enumerate()
        .filter_map(|(pos, &r)| {
            let i = r.index();
            oracle_total(fv, i).map(|t| (t.min(INF as u128), !fv.resident[i], pos, r))
        })
        .collect();
    cands.sort();
    cands[0].3
}

fn random_fv(rng: &mut ChaCha8Rng) -> FeatureVector {
    let mut t = |zero_p: f64, hi: u64| if rng.gen_bool(zero_p) { 0 } else { rng.gen_range(1..hi) };
    let mut fv = FeatureVector {
        op_type: VecOpType::Add,
        operand_locations: vec![OperandLoc::Dram; 2],
        delay_dd: t(0.3, 100_000),
        delay_queue: [t(0.3, 100_000), t(0.3, 100_000), t(0.3, 100_000)],
        latency_dm: [t(0.3, 60_000), t(0.3, 60_000), t(0.3, 60_000)],
        latency_comp: [t(0.0, 50_000), t(0.0, 50_000), t(0.0, 50_000)],
        resident: [false; 3],
    };
    for i in 0..3 {
        fv.resident[i] = rng.gen_bool(0.3);
        // Coarse values make exact ties common.
        if rng.gen_bool(0.2) {
            fv.latency_comp[i] = 1_000;
            fv.latency_dm[i] = 0;
        }
    }
    for i in 1..3 {
        if rng.gen_bool(0.25) {
            fv.latency_comp[i] = INF;
        }
    }
    fv
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fvs: Vec<FeatureVector> = (0..10_000).map(|_| random_fv(&mut rng)).collect();
    let start = Instant::now();
    let ctx = ChoiceContext::default();
    let mismatches = fvs
        .iter()
        .filter(|fv| choose(fv, Policy::Conduit, &ctx).resource != oracle_choice(fv))
        .count();
    let took = start.elapsed();
    let msg = format!("{mismatches} mismatches over 10^4 vectors in {took:.2?}");
    if mismatches == 0 && took < Duration::from_secs(1) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 2. Zero-cost features reduce Conduit to Ideal.

fn criterion_2() -> Outcome {
    let mut cfg = desk();
    cfg.offloader.zero_cost_features = true;
    let mut notes = Vec::new();
    let mut ok = true;
    for p in builtin_profiles() {
        let t = generate(&p).map_err(|e| e.to_string())?;
        let c = engine::run(&t, &cfg, Policy::Conduit, 0).map_err(|e| e.to_string())?;
        let i = engine::run(&t, &cfg, Policy::Ideal, 0).map_err(|e| e.to_string())?;
        let diff = c.timeline.iter().zip(&i.timeline).filter(|(a, b)| a != b).count();
        ok &= diff == 0 && c.timeline.len() == t.instrs.len();
        notes.push(format!("{}:{diff}", p.name));
    }
    let msg = format!("differing decisions {}", notes.join(" "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 3. Ordering and speedup at desk scale.

fn criterion_3(runs: &[ProfileRuns]) -> Outcome {
    let compute = ["heat3d_like", "jacobi1d_like", "llama_infer_like", "llm_train_like"];
    let mut ok = true;
    let mut notes = Vec::new();
    for r in runs {
        let (c, bw, dm, ideal) =
            (r.conduit.total_time_ns, r.bw.total_time_ns, r.dm.total_time_ns, r.ideal.total_time_ns);
        let ordered = ideal <= c && c <= bw.min(dm);
        let speedup = dm as f64 / c as f64;
        let fast_enough = !compute.contains(&r.name.as_str()) || speedup >= 1.2;
        let in_time = r.elapsed <= Duration::from_secs(300);
        ok &= ordered && fast_enough && in_time;
        notes.push(format!(
            "{} {}x{:.2}{}",
            r.name,
            if ordered { "ordered " } else { "UNORDERED " },
            speedup,
            if in_time { "" } else { " SLOW" }
        ));
    }
    let msg = notes.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 4. ISP share on the bitwise-heavy profiles.

fn criterion_4(runs: &[ProfileRuns]) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for r in runs.iter().filter(|r| r.name == "aes_like" || r.name == "xor_filter_like") {
        let isp = r.conduit.decision_fractions.isp * 100.0;
        ok &= isp < 2.0;
        notes.push(format!("{} isp {:.2}%", r.name, isp));
    }
    let msg = notes.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 5. Energy totals against the event log.

fn criterion_5() -> Outcome {
    let cfg = desk();
    let mut runs = 0;
    for p in builtin_profiles() {
        let t = generate(&p.with_instructions(5_000)).map_err(|e| e.to_string())?;
        for pol in Policy::ALL {
            let out = run_with(&t, &cfg, pol, 0, RunOptions::default()).map_err(|e| e.to_string())?;
            let e = out.report.energy;
            let from_log = EnergyLedger::from_log(&out.log);
            let logged: u64 = out.log.iter().map(|l| l.pj).sum();
            if from_log != e || logged != e.total_pj() || e.compute_pj() + e.data_movement_pj != e.total_pj() {
                return Err(format!("{} {pol}: report {e:?} log {from_log:?}", t.header.profile));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs, ledger equals log sum in every category"))
}

// 6. Tail latency on llama_infer_like.

fn criterion_6(runs: &[ProfileRuns]) -> Outcome {
    let r = runs.iter().find(|r| r.name == "llama_infer_like").ok_or("profile missing")?;
    let (c, d) = (&r.conduit, &r.dm);
    let msg = format!(
        "p99 {} vs {} ns ({:.1}x), p99.99 {} vs {} ns ({:.1}x)",
        c.p99_ns,
        d.p99_ns,
        d.p99_ns as f64 / c.p99_ns as f64,
        c.p9999_ns,
        d.p9999_ns,
        d.p9999_ns as f64 / c.p9999_ns as f64
    );
    if c.p99_ns <= d.p99_ns && c.p9999_ns <= d.p9999_ns {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 7. Functional oracle.

fn random_trace(seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed.is_multiple_of(4) {
        let k = random_kernel(seed, 512, if rng.gen_bool(0.5) { 8 } else { 32 });
        let vw = k.elements_per_page() / rng.gen_range(1..=4);
        let mut t = vectorize_kernel(&k, vw.max(1)).expect("kernel vectorizes");
        t.instrs.truncate(rng.gen_range(1..=150));
        t.contents = Some(random_contents(&k, seed));
        return t;
    }
    let base = builtin_profiles().swap_remove(rng.gen_range(0..6));
    let mut p = WorkloadProfile {
        n_instructions: rng.gen_range(5..=80),
        working_set: rng.gen_range(40..=160),
        page_size: 512,
        seed,
        ..base
    };
    // Grow the working set until the reuse pattern fits.
    let mut t = loop {
        match generate(&p) {
            Ok(t) => break t,
            Err(Error::InfeasibleProfile { .. }) if p.working_set < 4096 => p.working_set *= 2,
            Err(e) => panic!("{p:?}: {e}"),
        }
    };
    attach_random_contents(&mut t, seed);
    t
}

fn criterion_7() -> Outcome {
    let mut cfg = desk();
    cfg.topology.page_size = 512;
    let cfg = &cfg;
    let failures: Vec<String> = std::thread::scope(|s| {
        let workers = 8u64;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut bad = Vec::new();
                    for seed in (w..1_000).step_by(workers as usize) {
                        let t = random_trace(seed);
                        for pol in Policy::ALL {
                            if let Err(e) = engine::run_and_verify(&t, cfg, pol) {
                                bad.push(format!("trace {seed} {pol}: {e}"));
                            }
                        }
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
    });
    if failures.is_empty() {
        Ok("1000 traces x 7 policies byte-identical to the reference interpreter".into())
    } else {
        Err(format!("{} mismatches, first: {}", failures.len(), failures[0]))
    }
}

// 8. Offloader overhead.

fn criterion_8(runs: &[ProfileRuns]) -> Outcome {
    let r = runs.iter().find(|r| r.name == "llama_infer_like").ok_or("profile missing")?;
    let mean = r.conduit.overhead.mean_ns / 1_000.0;
    let mut cfg = desk();
    cfg.offloader.l2p_dram_fraction = 0.5;
    let mut worst = 0;
    for p in builtin_profiles() {
        let t = generate(&p.with_instructions(5_000)).map_err(|e| e.to_string())?;
        for pol in [Policy::Conduit, Policy::BwOffloading, Policy::DmOffloading] {
            worst = worst.max(engine::run(&t, &cfg, pol, 0).map_err(|e| e.to_string())?.overhead.max_ns);
        }
    }
    let msg = format!(
        "mean {mean:.2} us on llama_infer_like (DRAM mapping), max {:.2} us with half the mapping in flash",
        worst as f64 / 1_000.0
    );
    if (2.5..=5.0).contains(&mean) && worst <= 33_000 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 9. Determinism.

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = desk();
    let p = builtin_profile("llm_train_like").map_err(|e| e.to_string())?.with_instructions(20_000);
    let t = generate(&p).map_err(|e| e.to_string())?;
    for pol in Policy::ALL {
        let mut files = Vec::new();
        for k in 0..2 {
            let path = dir.path().join(format!("{pol}-{k}.json"));
            let r = engine::run(&t, &cfg, pol, 7).map_err(|e| e.to_string())?;
            std::fs::write(&path, r.to_json()).map_err(|e| e.to_string())?;
            files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if files[0] != files[1] {
            return Err(format!("{pol}: report files differ"));
        }
    }
    let a = generate(&p.clone().with_seed(1)).map_err(|e| e.to_string())?;
    let b = generate(&p.clone().with_seed(2)).map_err(|e| e.to_string())?;
    let (sa, sb) = (trace_stats(&a), trace_stats(&b));
    if a.instrs == b.instrs || !p.matches(&sa) || !p.matches(&sb) {
        return Err("seeds 1 and 2 give identical or out-of-tolerance traces".into());
    }
    Ok(format!(
        "7 policies bit-identical; seeds 1/2 distinct, reuse {:.2}/{:.2}, vector {:.1}%/{:.1}%",
        sa.avg_reuse, sb.avg_reuse, sa.vectorizable_pct, sb.vectorizable_pct
    ))
}

// 10. Vectorizer.

fn criterion_10() -> Outcome {
    for seed in 0..100u64 {
        let width = if seed % 2 == 0 { 8 } else { 32 };
        let k = random_kernel(seed, 1024, width);
        let vw = (k.elements_per_page() >> (seed % 4)).max(1);
        let t = vectorize_kernel(&k, vw).map_err(|e| e.to_string())?;
        let mut want: BTreeMap<&str, u64> = BTreeMap::new();
        for lp in &k.loops {
            for st in &lp.body {
                *want.entry(st.op.name()).or_default() += lp.trip_count as u64;
            }
        }
        let mut got: BTreeMap<&str, u64> = BTreeMap::new();
        for i in &t.instrs {
            *got.entry(i.element_op().name()).or_default() += i.vector_length as u64;
        }
        if got != want {
            return Err(format!("kernel {seed}: elements {got:?}, iterations {want:?}"));
        }
        let contents = random_contents(&k, seed);
        let mut direct = PageStore::from_contents(k.page_size, &contents);
        interpret_kernel(&k, &mut direct).map_err(|e| e.to_string())?;
        let mut tt = t;
        tt.contents = Some(contents);
        if interpret_trace(&tt).into_sorted() != direct.into_sorted() {
            return Err(format!("kernel {seed}: contents differ from direct interpretation"));
        }
    }
    Ok("100 random kernels conserve iterations and match direct interpretation".into())
}

fn main() {
    // Honor `cargo test -- --list` and name filters from the harness.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }

    let start = Instant::now();
    let runs = run_profiles();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "cost-function oracle", criterion_1()),
        (2, "ideal reduction", criterion_2()),
        (3, "ordering", criterion_3(&runs)),
        (4, "decision fractions", criterion_4(&runs)),
        (5, "energy conservation", criterion_5()),
        (6, "tail latency", criterion_6(&runs)),
        (7, "functional oracle", criterion_7()),
        (8, "overhead model", criterion_8(&runs)),
        (9, "determinism", criterion_9()),
        (10, "vectorizer", criterion_10()),
    ];
    let mut failed = Vec::new();
    for (n, name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS criterion {n} ({name}): {msg}"),
            Err(msg) => {
                println!("FAIL criterion {n} ({name}): {msg}");
                failed.push(*n);
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed in {:.1?}",
        results.len() - failed.len(),
        failed.len(),
        start.elapsed()
    );
    if failed != KNOWN_FAILURES {
        println!("acceptance: failing set {failed:?} differs from known {KNOWN_FAILURES:?}");
        std::process::exit(1);
    }
}
