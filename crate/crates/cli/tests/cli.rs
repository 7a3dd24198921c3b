use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grnn-lab")).args(args).current_dir(dir).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth(dir: &Path) {
    let o = bin(&["synth", "--n-genes", "500", "--background-edges", "500", "--seed", "2", "--out", "s"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn planted(dir: &Path, task: &str) -> Value {
    let m = json(&dir.join("s/manifest.json"));
    m["planted"].as_array().unwrap().iter().find(|p| p["task"] == task).unwrap().clone()
}

#[test]
fn search_calc_finds_planted_gene() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path());
    let o = bin(&["search", "calc", "--expression", "s/expression.csv", "--task", "fibonacci", "--out", "sc"], d.path());
    assert!(o.status.success());
    let ms = json(&d.path().join("sc/matchset.json"));
    let rec = planted(d.path(), "fibonacci");
    assert_eq!(ms["selection"]["outputs"][0], rec["genes"][0]);
    assert_eq!(ms["selection"]["timepoint"], rec["timepoint"]);
    let csv = std::fs::read_to_string(d.path().join("sc/matches.csv")).unwrap();
    assert!(csv.starts_with("gene,timepoint,score\n"));
    assert!(d.path().join("sc/run_manifest.json").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(&["search", "calc", "--bogus", "1"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--bogus") && err.contains("Usage"), "{err}");
    assert_eq!(bin(&["frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(bin(&["--help"], d.path()).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1_with_name() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(&["lyapunov", "--sigma0", "-0.5", "--out", "l"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NoPositiveRoot"));
    let o = bin(&["search", "calc", "--expression", "missing.csv", "--task", "fibonacci", "--out", "x"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("IoError"));
}

#[test]
fn bad_thread_cap_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_grnn-lab"))
        .args(["tasks", "show", "--out", "t"])
        .current_dir(d.path())
        .env("GRNN_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_collatz_writes_all_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(&["pipeline", "--task", "collatz", "--seed", "4", "--out", "p"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = d.path().join("p");
    for f in [
        "matchset.json",
        "matches.csv",
        "subgrnn.json",
        "reliability.json",
        "metrics.csv",
        "sweep.json",
        "sweep.csv",
        "stability.json",
        "trajectory.csv",
        "benchmark.json",
        "run_manifest.json",
    ] {
        assert!(p.join(f).exists(), "missing {f}");
    }
    let ms = json(&p.join("matchset.json"));
    assert_eq!(ms["decoded"], serde_json::json!([0, 1, 7, 2, 5, 8, 16]));
    let bench = json(&p.join("benchmark.json"));
    let rec = bench["planted"].as_array().unwrap().iter().find(|r| r["task"] == "collatz").unwrap();
    assert_eq!(ms["selection"]["outputs"], rec["genes"]);
    let traj = std::fs::read_to_string(p.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("s,alpha,sigma,V,dV_ds\n"));
    assert_eq!(traj.lines().count(), 102);
    let manifest = json(&p.join("run_manifest.json"));
    assert_eq!(manifest["command"], "pipeline");
    assert_eq!(manifest["seed"], 4);
    assert!(manifest["config"].get("out").is_none());
}

#[test]
fn staged_commands_chain() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path());
    let run = |args: &[&str]| {
        let o = bin(args, d.path());
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["search", "class", "--expression", "s/expression.csv", "--task", "prime", "--out", "sp"]);
    run(&["extract", "--network", "s/network.csv", "--matchset", "sp/matchset.json", "--benchmark", "s/manifest.json", "--out", "ex"]);
    let sub = json(&d.path().join("ex/subgrnn.json"));
    assert_eq!(sub["output_genes"][0], planted(d.path(), "prime")["genes"][0]);
    assert_eq!(sub["task"], "prime");
    run(&["perturb", "gene", "--expression", "s/expression.csv", "--subgrnn", "ex/subgrnn.json", "--out", "pg"]);
    run(&[
        "perturb",
        "collective",
        "--expression",
        "s/expression.csv",
        "--subgrnn",
        "ex/subgrnn.json",
        "--reliability",
        "pg/reliability.json",
        "--k-max",
        "2",
        "--out",
        "pc",
    ]);
    let sweep = std::fs::read_to_string(d.path().join("pc/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 5);
    let rel = json(&d.path().join("pg/reliability.json"));
    let top = rel["ranking"][0].as_str().unwrap().to_string();
    run(&["lyapunov", "--gene", &top, "--expression", "s/expression.csv", "--subgrnn", "ex/subgrnn.json", "--out", "ly"]);
    assert!(json(&d.path().join("ly/lyapunov.json"))["profile"]["gene"] == top.as_str());
}

#[test]
fn config_file_fills_unset_flags() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.json"), r#"{"n_genes": 300, "background_edges": 100, "seed": 9}"#).unwrap();
    let o = bin(&["synth", "--seed", "5", "--config", "c.json", "--out", "s"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&d.path().join("s/run_manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["synth"]["n_genes"], 300);
    assert_eq!(json(&d.path().join("s/manifest.json"))["n_genes"], 300);
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path());
    for out in ["a", "b"] {
        let o = bin(&["search", "binary", "--expression", "s/expression.csv", "--task", "collatz", "--out", out], d.path());
        assert!(o.status.success());
    }
    for f in ["matchset.json", "matches.csv"] {
        assert_eq!(std::fs::read(d.path().join("a").join(f)).unwrap(), std::fs::read(d.path().join("b").join(f)).unwrap());
    }
    let bytes = std::fs::read(d.path().join("a/matchset.json")).unwrap();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let sets: Vec<grnn_core::search::MatchSet> = serde_json::from_value(v["matches"].clone()).unwrap();
    assert_eq!(sets.len(), 5);
    assert_eq!(serde_json::to_value(&sets).unwrap(), v["matches"]);
    let spec: grnn_core::tasks::TaskSpec = serde_json::from_value(v["spec"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&spec).unwrap(), v["spec"]);
}

#[test]
fn normalize_and_stable_edges() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("counts.csv"), "gene,length_bp,c1_t6_r1,c2_t6_r1\na,1000,10,20\nb,2000,30,5\n").unwrap();
    let o = bin(&["normalize", "--counts", "counts.csv", "--out", "n"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tpm = std::fs::read_to_string(p.join("n/tpm.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(tpm.as_bytes());
    let mut sums = [0.0; 2];
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for s in 0..2 {
            sums[s] += rec[s + 1].parse::<f64>().unwrap();
        }
    }
    assert!(sums.iter().all(|s| (s - 1e6).abs() < 1e-6));
    let manifest = json(&p.join("n/run_manifest.json"));
    assert_eq!(manifest["inputs"]["counts.csv"].as_str().unwrap().len(), 64);

    let header = "gene,c1_t6_r1,c2_t6_r1,c3_t6_r1,c4_t6_r1\n";
    std::fs::write(p.join("e1.csv"), format!("{header}a,1,2,3,4\nb,2,4,6,8\nc,4,3,2,1\n")).unwrap();
    std::fs::write(p.join("e2.csv"), format!("{header}a,1,2,3,5\nb,1,3,4,6\nc,1,2,3,4\n")).unwrap();
    std::fs::write(p.join("net.csv"), "source,target,correlation\na,b,0.9\na,c,\n").unwrap();
    let o = bin(&["stable-edges", "--network", "net.csv", "--expression", "e1.csv,e2.csv", "--out", "se"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let edges = std::fs::read_to_string(p.join("se/edges.csv")).unwrap();
    let lines: Vec<&str> = edges.lines().collect();
    assert_eq!(lines[0], "source,target,score,stable");
    assert!(lines[1].starts_with("a,b,") && lines[1].ends_with(",true"));
    assert!(lines[2].ends_with(",false"));
}

#[test]
fn in_process_thread_caps_agree() {
    let d = tempfile::tempdir().unwrap();
    for (out, threads) in [("one", Some(1)), ("four", Some(4))] {
        let dir = d.path().join(out);
        let code = grnn_lab::run_with_threads(
            ["grnn-lab", "pipeline", "--task", "fibonacci", "--n-genes", "400", "--seed", "3", "--out", dir.to_str().unwrap()],
            threads,
        );
        assert_eq!(code, 0);
    }
    for f in ["metrics.csv", "sweep.csv", "stability.json", "trajectory.csv", "reliability.json"] {
        assert_eq!(std::fs::read(d.path().join("one").join(f)).unwrap(), std::fs::read(d.path().join("four").join(f)).unwrap(), "{f}");
    }
}
