//! `ndpsim`: generate traces, run policies, sweep experiments and export
//! plot-ready CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndpsim::engine::{self, csv_header, RunOptions, StatsReport};
use ndpsim::trace_io::{read_trace_file, write_trace_file};
use ndpsim::workloads::{attach_random_contents, builtin_profile, generate, profile_names, WorkloadProfile};
use ndpsim::{load_config, trace_stats, Policy, ResourceKind, SimConfig, Trace};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "ndpsim", version, about = "SSD near-data-processing simulator")]
struct Cli {
    /// TOML configuration; unspecified fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Divide channels, dies and blocks by this factor.
    #[arg(long, global = true, value_name = "FACTOR")]
    desk_scale: Option<u32>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trace from a workload profile.
    Generate(GenerateArgs),
    /// Simulate one trace under one policy.
    Run(RunArgs),
    /// Run profiles x policies x seeds and write summary tables.
    Sweep(SweepArgs),
    /// Check simulated page contents against the reference interpreter.
    Verify(VerifyArgs),
    /// Rebuild CSV tables from report files.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct TraceSource {
    /// Trace file written by `generate`.
    #[arg(long, conflicts_with = "profile")]
    trace: Option<PathBuf>,
    /// Built-in profile name or a TOML profile file; generated on the fly.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the profile's instruction count.
    #[arg(long)]
    instructions: Option<u32>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    instructions: Option<u32>,
    /// Also write random initial page contents for `verify`.
    #[arg(long)]
    contents: bool,
    /// Trace file; defaults to `<profile>-s<seed>.jsonl` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    src: TraceSource,
    #[arg(long, value_parser = parse_policy, default_value = "conduit")]
    policy: Policy,
    /// Carry page bytes and check final contents.
    #[arg(long)]
    verify: bool,
    /// Write every energy charge as line-delimited JSON.
    #[arg(long)]
    event_log: Option<PathBuf>,
    #[arg(long, env = "NDPSIM_OUT_DIR", default_value = "ndpsim-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated profiles; all built-ins by default.
    #[arg(long, value_delimiter = ',')]
    profile: Vec<String>,
    /// Comma-separated policies; all seven by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policy: Vec<Policy>,
    /// First seed of the schedule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeds per profile: `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    repetitions: u64,
    #[arg(long)]
    instructions: Option<u32>,
    /// Policy every other is normalized to.
    #[arg(long, value_parser = parse_policy, default_value = "fixed-isp")]
    baseline: Policy,
    #[arg(long, env = "NDPSIM_OUT_DIR", default_value = "ndpsim-out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    src: TraceSource,
    /// Policies to check; all seven by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policy: Vec<Policy>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files or directories holding them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: ndpsim::Error| e.to_string())
}

fn load_cfg(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ndpsim::default_config(),
    };
    if let Some(f) = cli.desk_scale {
        cfg = cfg.desk_scale(f);
    }
    Ok(cfg)
}

fn resolve_profile(name: &str) -> Result<WorkloadProfile> {
    let path = Path::new(name);
    if path.extension().is_some_and(|e| e == "toml") && path.exists() {
        let text = fs::read_to_string(path)?;
        return toml::from_str(&text).with_context(|| format!("parsing profile {name}"));
    }
    Ok(builtin_profile(name)?)
}

fn make_profile(name: &str, seed: u64, instructions: Option<u32>, cfg: &SimConfig) -> Result<WorkloadProfile> {
    let mut p = resolve_profile(name)?.with_seed(seed);
    p.page_size = cfg.topology.page_size;
    if let Some(n) = instructions {
        p = p.with_instructions(n);
    }
    Ok(p)
}

fn load_trace(src: &TraceSource, cfg: &SimConfig, contents: bool) -> Result<Trace> {
    let mut t = match (&src.trace, &src.profile) {
        (Some(path), _) => read_trace_file(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(name)) => generate(&make_profile(name, src.seed, src.instructions, cfg)?)?,
        (None, None) => bail!("pass --trace or --profile"),
    };
    if contents && t.contents.is_none() {
        attach_random_contents(&mut t, src.seed);
    }
    Ok(t)
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_generate(cfg: &SimConfig, a: &GenerateArgs) -> Result<()> {
    let p = make_profile(&a.profile, a.seed, a.instructions, cfg)?;
    let mut t = generate(&p)?;
    if a.contents {
        attach_random_contents(&mut t, a.seed);
    }
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            let dir = std::env::var_os("NDPSIM_OUT_DIR").map(PathBuf::from).unwrap_or("ndpsim-out".into());
            out_dir(&dir)?.join(format!("{}-s{}.jsonl", p.name, a.seed))
        }
    };
    write_trace_file(&t, &path).with_context(|| format!("writing {}", path.display()))?;
    let s = trace_stats(&t);
    println!("wrote {} ({} instructions)", path.display(), t.instrs.len());
    println!(
        "vectorizable {:.1}%  avg_reuse {:.2}  mix low/med/high {:.1}/{:.1}/{:.1}%  {}",
        s.vectorizable_pct,
        s.avg_reuse,
        s.latency_mix.low,
        s.latency_mix.medium,
        s.latency_mix.high,
        if p.matches(&s) { "within tolerance" } else { "OUT OF TOLERANCE" }
    );
    Ok(())
}

fn cmd_run(cfg: &SimConfig, a: &RunArgs) -> Result<()> {
    let t = load_trace(&a.src, cfg, a.verify)?;
    let opts = RunOptions { functional: a.verify };
    let out = engine::run_with(&t, cfg, a.policy, a.src.seed, opts)?;
    if a.verify {
        engine::functional_verify(&t, out.final_contents.as_ref().expect("functional run"))?;
        println!("verify: final contents match the reference interpreter");
    }
    if let Some(path) = &a.event_log {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        for e in &out.log {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let dir = out_dir(&a.out)?;
    let r = &out.report;
    let stem = format!("{}-{}-s{}", r.profile, r.policy, r.seed);
    fs::write(dir.join(format!("{stem}.json")), r.to_json())?;
    let row = r.csv_row();
    fs::write(dir.join(format!("{stem}.csv")), format!("{}\n{row}\n", csv_header()))?;
    println!("{}\n{row}", csv_header());
    Ok(())
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(cfg: &SimConfig, a: &SweepArgs) -> Result<ExitCode> {
    let profiles = if a.profile.is_empty() { profile_names() } else { a.profile.clone() };
    let mut policies = if a.policy.is_empty() { Policy::ALL.to_vec() } else { a.policy.clone() };
    if !policies.contains(&a.baseline) {
        policies.push(a.baseline);
    }
    if a.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.repetitions).collect();
    let dir = out_dir(&a.out)?;
    let cells_dir = dir.join("cells");
    let timeline_dir = dir.join("timeline");
    fs::create_dir_all(&cells_dir)?;
    fs::create_dir_all(&timeline_dir)?;

    let traces: Vec<(String, u64, Result<Trace, String>)> = profiles
        .par_iter()
        .flat_map(|name| seeds.par_iter().map(move |&s| (name.clone(), s)))
        .map(|(name, s)| {
            let t = make_profile(&name, s, a.instructions, cfg)
                .and_then(|p| Ok(generate(&p)?))
                .map_err(|e| e.to_string());
            (name, s, t)
        })
        .collect();
    let cells: Vec<(&str, u64, Policy, &Result<Trace, String>)> = traces
        .iter()
        .flat_map(|(n, s, t)| policies.iter().map(move |&p| (n.as_str(), *s, p, t)))
        .collect();
    let results: Vec<(&str, u64, Policy, Result<StatsReport, String>)> = cells
        .par_iter()
        .map(|&(name, s, pol, t)| {
            let r = match t {
                Ok(t) => engine::run(t, cfg, pol, s).map_err(|e| e.to_string()),
                Err(e) => Err(format!("generate: {e}")),
            };
            (name, s, pol, r)
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok: BTreeMap<(&str, Policy), Vec<&StatsReport>> = BTreeMap::new();
    let mut rows = Vec::new();
    for (name, s, pol, r) in &results {
        match r {
            Ok(r) => {
                fs::write(cells_dir.join(format!("{name}-{pol}-s{s}.json")), r.to_json())?;
                if *s == a.seed {
                    // Offloaded instructions only; SCALAR always runs on a core.
                    let t = traces.iter().find(|x| x.0 == *name && x.1 == *s).and_then(|x| x.2.as_ref().ok());
                    let series = r
                        .timeline
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| t.is_some_and(|t| !t.instrs[*i].is_scalar()))
                        .map(|(i, res)| format!("{i},{res}"));
                    write_lines(&timeline_dir.join(format!("{name}-{pol}.csv")), "instr,resource", series)?;
                }
                rows.push(r.csv_row());
                ok.entry((name, *pol)).or_default().push(r);
            }
            Err(e) => failures.push(format!("{name},{pol},{s},{e}")),
        }
    }
    write_lines(&dir.join("runs.csv"), &csv_header(), rows)?;

    let mean = |rs: &[&StatsReport], f: &dyn Fn(&StatsReport) -> f64| {
        rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
    };
    let mut summary = Vec::new();
    let mut fractions = Vec::new();
    let mut tails = Vec::new();
    for name in &profiles {
        let base = ok.get(&(name.as_str(), a.baseline));
        let base_time = base.map(|b| mean(b, &|r| r.total_time_ns as f64));
        let base_energy = base.map(|b| mean(b, &|r| r.energy.total_pj() as f64));
        for pol in &policies {
            let Some(rs) = ok.get(&(name.as_str(), *pol)) else { continue };
            let time = mean(rs, &|r| r.total_time_ns as f64);
            let energy = mean(rs, &|r| r.energy.total_pj() as f64);
            let ratio = |x: f64, b: Option<f64>| b.filter(|&b| b > 0.0).map_or(f64::NAN, |b| x / b);
            let speedup = base_time.map_or(f64::NAN, |b| b / time);
            summary.push(format!(
                "{name},{pol},{},{time:.0},{:.6},{speedup:.6},{energy:.0},{:.6}",
                rs.len(),
                ratio(time, base_time),
                ratio(energy, base_energy)
            ));
            let f = |k: ResourceKind| mean(rs, &|r| r.decision_fractions.get(k));
            fractions.push(format!(
                "{name},{pol},{:.6},{:.6},{:.6}",
                f(ResourceKind::Isp),
                f(ResourceKind::Pud),
                f(ResourceKind::Ifp)
            ));
            tails.push(format!(
                "{name},{pol},{:.0},{:.0}",
                mean(rs, &|r| r.p99_ns as f64),
                mean(rs, &|r| r.p9999_ns as f64)
            ));
        }
    }
    write_lines(
        &dir.join("summary.csv"),
        "profile,policy,seeds,total_time_ns,norm_time,speedup,energy_pj,norm_energy",
        summary.iter().cloned(),
    )?;
    write_lines(&dir.join("fractions.csv"), "profile,policy,frac_isp,frac_pud,frac_ifp", fractions)?;
    write_lines(&dir.join("percentiles.csv"), "profile,policy,p99_ns,p9999_ns", tails)?;

    println!("profile,policy,seeds,total_time_ns,norm_time,speedup,energy_pj,norm_energy");
    for s in &summary {
        println!("{s}");
    }
    println!("{} runs written to {}", results.len() - failures.len(), dir.display());
    if failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    write_lines(&dir.join("failures.csv"), "profile,policy,seed,error", failures.iter().cloned())?;
    eprintln!("{} cells failed:", failures.len());
    for f in &failures {
        eprintln!("  {f}");
    }
    Ok(ExitCode::FAILURE)
}

fn cmd_verify(cfg: &SimConfig, a: &VerifyArgs) -> Result<ExitCode> {
    let t = load_trace(&a.src, cfg, true)?;
    let policies = if a.policy.is_empty() { Policy::ALL.to_vec() } else { a.policy.clone() };
    let mut failed = 0;
    for p in policies {
        match engine::run_and_verify(&t, cfg, p) {
            Ok(_) => println!("PASS {p}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {p}: {e}");
            }
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut out = vec![csv_header()];
    for f in collect_reports(&a.inputs)? {
        let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let r: StatsReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        out.push(r.csv_row());
    }
    let text = out.join("\n") + "\n";
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = (|| -> Result<ExitCode> {
        if let Cmd::Report(a) = &cli.cmd {
            cmd_report(a)?;
            return Ok(ExitCode::SUCCESS);
        }
        let cfg = load_cfg(&cli)?;
        match &cli.cmd {
            Cmd::Generate(a) => cmd_generate(&cfg, a).map(|_| ExitCode::SUCCESS),
            Cmd::Run(a) => cmd_run(&cfg, a).map(|_| ExitCode::SUCCESS),
            Cmd::Sweep(a) => cmd_sweep(&cfg, a),
            Cmd::Verify(a) => cmd_verify(&cfg, a),
            Cmd::Report(_) => unreachable!(),
        }
    })();
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
