use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndpsim::trace_io::{read_trace_file, write_trace_file};
use ndpsim::workloads::builtin_profile;
use ndpsim::{isa, trace_stats};
use tempfile::TempDir;

fn ndpsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndpsim"))
        .current_dir(dir)
        .env_remove("NDPSIM_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn ndpsim")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn generate_is_deterministic_and_in_tolerance() {
    let d = TempDir::new().unwrap();
    let args = ["generate", "--profile", "aes_like", "--seed", "3", "--instructions", "5000"];
    let a = ok(&ndpsim(d.path(), &[&args[..], &["--out", "a.jsonl"]].concat()));
    assert!(a.contains("within tolerance"), "{a}");
    ok(&ndpsim(d.path(), &[&args[..], &["--out", "b.jsonl"]].concat()));
    let (a, b) = (fs::read(d.path().join("a.jsonl")).unwrap(), fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(a, b);

    let t = read_trace_file(&d.path().join("a.jsonl")).unwrap();
    assert_eq!(t.instrs.len(), 5000);
    let p = builtin_profile("aes_like").unwrap();
    assert!(p.matches(&trace_stats(&t)));
}

#[test]
fn unknown_names_are_rejected() {
    let d = TempDir::new().unwrap();
    let out = ndpsim(d.path(), &["generate", "--profile", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown profile `nope`") && err.contains("llama_infer_like"), "{err}");

    let out = ndpsim(d.path(), &["run", "--profile", "aes_like", "--policy", "fastest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-ifp"));
}

#[test]
fn bad_config_names_the_field() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("bad.toml"), "[topology]\npage_size = 3000\n").unwrap();
    let out = ndpsim(d.path(), &["--config", "bad.toml", "run", "--profile", "aes_like"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("topology.page_size"), "{err}");
}

#[test]
fn run_writes_report_and_row() {
    let d = TempDir::new().unwrap();
    let stdout = ok(&ndpsim(
        d.path(),
        &["--desk-scale", "4", "run", "--profile", "heat3d_like", "--instructions", "1500", "--policy", "conduit", "--out", "o"],
    ));
    let lines: Vec<_> = stdout.lines().collect();
    assert!(lines[0].starts_with("policy,profile,total_time_ns"));
    assert_eq!(lines[1].split(',').count(), 10);
    let rows = csv(&d.path().join("o/heat3d_like-conduit-s0.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "conduit");
    assert!(d.path().join("o/heat3d_like-conduit-s0.json").exists());
}

#[test]
fn out_dir_env_is_honored() {
    let d = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ndpsim"))
        .current_dir(d.path())
        .env("NDPSIM_OUT_DIR", "from-env")
        .args(["generate", "--profile", "xor_filter_like", "--seed", "1", "--instructions", "500"])
        .output()
        .unwrap();
    ok(&out);
    assert!(d.path().join("from-env/xor_filter_like-s1.jsonl").exists());
}

#[test]
fn fixed_isp_on_scalar_trace_uses_cores_only() {
    let d = TempDir::new().unwrap();
    ok(&ndpsim(d.path(), &["generate", "--profile", "xor_filter_like", "--instructions", "800", "--out", "x.jsonl"]));
    let mut t = read_trace_file(&d.path().join("x.jsonl")).unwrap();
    t.instrs.retain(|i| i.is_scalar());
    for (n, i) in t.instrs.iter_mut().enumerate() {
        i.id = n as u32;
    }
    isa::build_deps(&mut t.instrs);
    write_trace_file(&t, &d.path().join("s.jsonl")).unwrap();

    let stdout = ok(&ndpsim(d.path(), &["--desk-scale", "4", "run", "--trace", "s.jsonl", "--policy", "fixed-isp", "--out", "o"]));
    let row: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[7].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn verify_passes_for_every_policy() {
    let d = TempDir::new().unwrap();
    ok(&ndpsim(d.path(), &["generate", "--profile", "jacobi1d_like", "--instructions", "600", "--contents", "--out", "j.jsonl"]));
    let stdout = ok(&ndpsim(d.path(), &["--desk-scale", "4", "verify", "--trace", "j.jsonl"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 7, "{stdout}");
}

#[test]
fn verify_seeds_missing_contents() {
    let d = TempDir::new().unwrap();
    ok(&ndpsim(d.path(), &["generate", "--profile", "aes_like", "--instructions", "300", "--out", "a.jsonl"]));
    let stdout = ok(&ndpsim(d.path(), &["--desk-scale", "4", "verify", "--trace", "a.jsonl", "--policy", "conduit,ideal"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 2, "{stdout}");
}

#[test]
fn sweep_covers_the_grid_and_is_reproducible() {
    let d = TempDir::new().unwrap();
    let sweep = |out: &str| ok(&ndpsim(d.path(), &["--desk-scale", "4", "sweep", "--instructions", "400", "--out", out]));
    sweep("a");
    sweep("b");
    for f in ["runs.csv", "summary.csv", "fractions.csv", "percentiles.csv"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert!(!d.path().join("a/failures.csv").exists());

    let runs = csv(&d.path().join("a/runs.csv"));
    assert_eq!(runs.len(), 1 + 6 * 7);

    let summary = csv(&d.path().join("a/summary.csv"));
    assert_eq!(summary.len(), 1 + 6 * 7);
    for row in &summary[1..] {
        let norm: f64 = row[4].parse().unwrap();
        if row[1] == "fixed-isp" {
            assert_eq!(norm, 1.0);
        }
        assert!(norm > 0.0);
    }
    for row in &csv(&d.path().join("a/fractions.csv"))[1..] {
        let s: f64 = row[2..5].iter().map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-5, "{row:?}");
    }

    // Every table row is re-derivable from the stored reports.
    let stdout = ok(&ndpsim(d.path(), &["report", "a/cells"]));
    let mut rebuilt: Vec<&str> = stdout.lines().skip(1).collect();
    let text = fs::read_to_string(d.path().join("a/runs.csv")).unwrap();
    let mut stored: Vec<&str> = text.lines().skip(1).collect();
    rebuilt.sort();
    stored.sort();
    assert_eq!(rebuilt, stored);
}

#[test]
fn timeline_shows_dm_runs_and_conduit_mixing() {
    let d = TempDir::new().unwrap();
    ok(&ndpsim(
        d.path(),
        &[
            "--desk-scale", "4", "sweep", "--profile", "llama_infer_like", "--policy", "conduit,dm-offloading",
            "--instructions", "3000", "--out", "t",
        ],
    ));
    let distinct = |pol: &str| {
        let rows = csv(&d.path().join(format!("t/timeline/llama_infer_like-{pol}.csv")));
        let mut r: Vec<String> = rows[1..].iter().map(|x| x[1].clone()).collect();
        let switches = r.windows(2).filter(|w| w[0] != w[1]).count();
        r.sort();
        r.dedup();
        (r.len(), switches)
    };
    let (dm_kinds, dm_switches) = distinct("dm-offloading");
    let (c_kinds, c_switches) = distinct("conduit");
    assert!(c_kinds > dm_kinds || c_switches > dm_switches, "dm {dm_kinds}/{dm_switches} conduit {c_kinds}/{c_switches}");
}

#[test]
fn profile_file_is_accepted() {
    let d = TempDir::new().unwrap();
    let p = builtin_profile("heat3d_like").unwrap();
    let text = toml::to_string(&ndpsim::workloads::WorkloadProfile { name: "mine".into(), ..p }).unwrap();
    fs::write(d.path().join("mine.toml"), text).unwrap();
    let stdout = ok(&ndpsim(d.path(), &["generate", "--profile", "mine.toml", "--instructions", "700", "--out", "m.jsonl"]));
    assert!(stdout.contains("within tolerance"), "{stdout}");
}
