use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .unwrap()
}

fn promptgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptgrad"))
        .args(args)
        .env_remove("PROMPTGRAD_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small mock config over the shared fixtures.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let f = fixtures();
    let body = format!(
        "[run]\niterations = 2\nseed = 3\n[data]\ntrain = {:?}\ndev = {:?}\n[prompt]\nfile = {:?}\n[provider]\nkind = \"mock\"\n{extra}",
        f.join("train.jsonl"),
        f.join("dev.jsonl"),
        f.join("prompt.txt"),
    );
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn optimize_mock_fixture_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    let o = promptgrad(&["optimize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["iterations"].as_array().unwrap().len(), 2);
    assert!(out.join("best_prompt.txt").exists());
    assert!(out.join("config.json").exists());
    assert!(stdout(&o).contains("best accuracy"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[run]\niterations = \"many\"\n").unwrap();
    let o = promptgrad(&["optimize", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml"));
    assert_eq!(
        code(&promptgrad(&[
            "optimize",
            "--config",
            s(&dir.path().join("missing.toml"))
        ])),
        2
    );
    assert_eq!(code(&promptgrad(&["optimize", "--no-such-flag"])), 2);
}

#[test]
fn unreadable_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let body = fs::read_to_string(&cfg).unwrap().replace("train.jsonl", "nope.jsonl");
    fs::write(&cfg, body).unwrap();
    assert_eq!(
        code(&promptgrad(&[
            "optimize",
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join("o"))
        ])),
        2
    );
}

#[test]
fn rerun_with_same_cache_makes_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = promptgrad(&[
            "optimize",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--cache-dir",
            s(&cache),
        ]);
        assert_eq!(code(&o), 0);
        (
            read_json(&out.join("gateway_stats.json")),
            fs::read(out.join("report.json")).unwrap(),
        )
    };
    let (first, report1) = run("a");
    let (second, report2) = run("b");
    assert!(first["provider_calls"].as_u64().unwrap() > 0);
    assert_eq!(second["provider_calls"], 0);
    let requested: u64 = second["requested"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(second["cache_hits"].as_u64().unwrap(), requested);
    assert_eq!(report1, report2);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert_eq!(
            code(&promptgrad(&[
                "optimize",
                "--config",
                s(&cfg),
                "--out",
                s(&out),
                "--seed",
                seed
            ])),
            0
        );
        read_json(&out.join("report.json"))
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_eq!(a["config"]["seed"], 11);
    assert_ne!(a["iterations"][0]["pool_hash"], c["iterations"][0]["pool_hash"]);
}

#[test]
fn run_abort_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "mock_fail_templates = [\"apply\"]\nmax_retries = 0\n");
    let out = dir.path().join("out");
    let o = promptgrad(&["optimize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("partial report"), "{stderr}");
    assert!(stderr.contains(s(&out.join("report.json"))));
    let report = read_json(&out.join("report.json"));
    assert!(report["aborted"].is_string());
}

fn ablation_rows(out: &Path, axis: &str) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(out.join(format!("ablation_{axis}.csv"))).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn ablate_bandit_has_three_rows_over_one_pool() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    let o = promptgrad(&["ablate", "--axis", "bandit", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let rows = ablation_rows(&out, "bandit");
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["ucb1", "thompson", "greedy"]);
    let md = fs::read_to_string(out.join("ablation_bandit.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with('|')).count(), 2 + 3);
    // The pool entering selection is built before any strategy acts.
    let pools: Vec<Value> = names
        .iter()
        .map(|n| read_json(&out.join(n).join("report.json"))["iterations"][0]["pool_hash"].clone())
        .collect();
    assert!(pools[0].is_string());
    assert!(pools.iter().all(|p| *p == pools[0]));
}

#[test]
fn ablate_search_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    assert_eq!(
        code(&promptgrad(&[
            "ablate",
            "--axis",
            "search",
            "--config",
            s(&cfg),
            "--out",
            s(&out)
        ])),
        0
    );
    let rows = ablation_rows(&out, "search");
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["beam", "monte_carlo"]);
    let beam = read_json(&out.join("beam/report.json"));
    let mc = read_json(&out.join("monte_carlo/report.json"));
    assert_eq!(beam["iterations"][0]["pool_hash"], mc["iterations"][0]["pool_hash"]);
    assert_eq!(
        code(&promptgrad(&["ablate", "--axis", "annealing", "--config", s(&cfg)])),
        2
    );
}

fn lab_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("lab.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn lab_creates_out_dir_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lab_config(dir.path(), "[lab]\nhorizons = [100, 1000, 10000]\nseeds = 10\n");
    let out = dir.path().join("not/yet/there");
    let o = promptgrad(&["lab", "--objective", "convex", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let study = read_json(&out.join("lab_convex.json"));
    let e = study["exponent"].as_f64().unwrap();
    assert!((-0.6..=-0.4).contains(&e), "{e}");
    assert!(stdout(&o).contains("PASS"));
    let mut trace = csv::Reader::from_path(out.join("trace_convex_T100.csv")).unwrap();
    let headers = trace.headers().unwrap().clone();
    assert_eq!((&headers[0], &headers[1]), ("step", "value"));
    assert_eq!(trace.records().count(), 100);
    assert!(!out.join("lab_nonconvex.json").exists());
}

#[test]
fn lab_exact_gradient_run_is_flagged_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lab_config(
        dir.path(),
        "[lab]\nhorizons = [100, 400, 1600]\nseeds = 2\n[lab.nonconvex]\nalignment = 1.0\nrho = 1.0\nsigma_sq = 0.0\n",
    );
    let out = dir.path().join("out");
    let o = promptgrad(&["lab", "--objective", "nonconvex", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("monotone runs 6/6 (monotone)"), "{}", stdout(&o));
    let study = read_json(&out.join("lab_nonconvex.json"));
    for h in study["horizons"].as_array().unwrap() {
        assert_eq!(h["monotone_runs"], 2);
    }
}

#[test]
fn lab_simulation_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lab_config(
        dir.path(),
        "[lab]\nhorizons = [10, 20, 40]\nseeds = 1\n[lab.nonconvex]\nstep_rule = \"fixed\"\nstep_scale = 1e200\n",
    );
    let o = promptgrad(&[
        "lab",
        "--objective",
        "nonconvex",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn lab_invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lab_config(dir.path(), "[lab.convex]\nalignment = 2.0\n");
    assert_eq!(code(&promptgrad(&["lab", "--config", s(&cfg)])), 2);
}

fn eval(dir: &Path, cfg: &Path, dataset: &Path, metric: &[&str]) -> Output {
    let prompt = fixtures().join("prompt.txt");
    let out = dir.join("eval");
    let mut args = vec![
        "eval",
        "--config",
        s(cfg),
        "--prompt",
        s(&prompt),
        "--dataset",
        s(dataset),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(metric);
    promptgrad(&args)
}

#[test]
fn eval_echo_backend_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "mock_task = \"echo\"\n");
    let o = eval(dir.path(), &cfg, &fixtures().join("dev.jsonl"), &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("accuracy: 1.0000"), "{}", stdout(&o));
    let mut r = csv::Reader::from_path(dir.path().join("eval/predictions.csv")).unwrap();
    assert_eq!(r.records().count(), 40);
}

#[test]
fn eval_known_confusion_f1_is_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("four.jsonl");
    fs::write(
        &data,
        "{\"text\":\"r1\",\"label\":\"pos\"}\n{\"text\":\"r2\",\"label\":\"pos\"}\n{\"text\":\"r3\",\"label\":\"neg\"}\n{\"text\":\"r4\",\"label\":\"neg\"}\n",
    )
    .unwrap();
    let answers = dir.path().join("answers.csv");
    fs::write(&answers, "text,label\nr1,pos\nr2,neg\nr3,pos\nr4,neg\n").unwrap();
    let cfg = config(
        dir.path(),
        &format!("mock_task = \"scripted\"\nmock_answers = {answers:?}\n"),
    );
    let o = eval(dir.path(), &cfg, &data, &["--metric", "f1", "--positive-label", "pos"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // tp 1, fp 1, fn 1
    let expected = 2.0 * 1.0 / (2.0 * 1.0 + 1.0 + 1.0);
    assert!(stdout(&o).contains(&format!("f1: {expected:.4}")), "{}", stdout(&o));
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let dev = fixtures().join("dev.jsonl");
    assert_eq!(code(&eval(dir.path(), &cfg, &dev, &["--metric", "bleu"])), 2);
    assert_eq!(code(&eval(dir.path(), &cfg, &dev, &["--metric", "f1"])), 2);
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"text\":\"a\",\"label\":\"x\"}\n{not json\n").unwrap();
    let o = eval(dir.path(), &cfg, &broken, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.jsonl:2:"));
    assert_eq!(code(&eval(dir.path(), &cfg, &dir.path().join("absent.jsonl"), &[])), 2);
}
