use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use mqm_core::corpus::{write_mqm_tsv, write_scalar_tsv};
use mqm_core::synth::{self, SynthConfig};
use mqm_core::Scale;

const SUBCOMMANDS: [&str; 17] = [
    "import",
    "validate",
    "score",
    "breakdown",
    "rater-report",
    "rank",
    "sweep",
    "correlate",
    "kendall-like",
    "doc-profile",
    "fit-gaussian",
    "simulate",
    "min-budget",
    "metrics-eval",
    "serve",
    "assign",
    "export",
];

fn mqm() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mqm"));
    cmd.env_remove("MQM_DATA_DIR").env_remove("MQM_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    mqm().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_mqm.tsv")
}

/// A synthetic corpus with a human reference, pSQM/cSQM ratings and a BLEU file.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth::corpus(&SynthConfig {
            systems: vec![
                ("Human-A".into(), 0.2),
                ("sys1".into(), 0.6),
                ("sys2".into(), 1.0),
                ("sys3".into(), 1.4),
                ("sys4".into(), 1.8),
            ],
            n_docs: 10,
            ..SynthConfig::default()
        });
        let quality = |s: &str| match s {
            "Human-A" => 5.5,
            s => 5.0 - s[3..].parse::<f64>().unwrap(),
        };
        std::fs::write(dir.path().join("corpus.tsv"), write_mqm_tsv(&corpus)).unwrap();
        let p = synth::scalar_ratings(&corpus, quality, 0.5, Scale::Sqm, 1);
        let c = synth::scalar_ratings(&corpus, quality, 2.0, Scale::Sqm, 2);
        std::fs::write(dir.path().join("psqm.tsv"), write_scalar_tsv(&p)).unwrap();
        std::fs::write(dir.path().join("csqm.tsv"), write_scalar_tsv(&c)).unwrap();
        let mut bleu = String::from("metric\tsystem\tscore\n");
        for (s, v) in [("Human-A", 30.0), ("sys1", 35.0), ("sys2", 31.0), ("sys3", 28.0), ("sys4", 20.0)] {
            bleu.push_str(&format!("BLEU\t{s}\t{v}\nTER\t{s}\t{}\n", 100.0 - v));
        }
        std::fs::write(dir.path().join("metrics.tsv"), bleu).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

#[test]
fn exit_codes() {
    let f = fixture();
    let f = f.to_str().unwrap();
    assert_eq!(run(&["score", "--corpus", f]).status.code(), Some(0));

    let missing = run(&["score", "--corpus", "missing.tsv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("missing.tsv"));

    assert_eq!(run(&["score", "--corpus", f, "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["score"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["score", "--corpus", f, "--level", "galaxy"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    // Six errors in one segment: lenient import keeps it, validation rejects it.
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("system\tdoc\tseg_id\trater\tsource\ttarget\tcategory\tseverity\n");
    for _ in 0..6 {
        text.push_str("S\td\t1\tr\tsrc\ttgt\tFluency/Grammar\tMinor\n");
    }
    let over = dir.path().join("over.tsv");
    std::fs::write(&over, text).unwrap();
    let over = over.to_str().unwrap();
    assert_eq!(run(&["validate", "--corpus", over]).status.code(), Some(1));
    let lenient = run(&["validate", "--corpus", over, "--lenient"]);
    assert_eq!(lenient.status.code(), Some(1), "{}", stderr(&lenient));
    assert!(stdout(&lenient).contains("error_cap_exceeded"));
    assert_eq!(run(&["validate", "--corpus", f]).status.code(), Some(0));
}

#[test]
fn fixture_reports() {
    let f = fixture();
    let f = f.to_str().unwrap();
    assert_eq!(ok(&["score", "--corpus", f]), "system\tscore\tn_items\nSysX\t7.1375\t4\nSysY\t0.7500\t4\n");
    let major = ok(&["score", "--corpus", f, "--filter", "major"]);
    assert!(major.contains("SysX\t6.8750"));
    let jsonl = ok(&["score", "--corpus", f, "--level", "document", "--format", "jsonl"]);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["system"], "SysX");
    assert_eq!(first["score"], 1.525);
    assert_eq!(ok(&["rank", "--corpus", f]).lines().nth(1), Some("1\tSysY\t0.7500"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let ws = Workspace::new();
    let corpus = ws.path("corpus.tsv");
    let cases: [&[&str]; 4] = [
        &["simulate", "--corpus", &corpus, "--iterations", "200", "--plot-data"],
        &["sweep", "--corpus", &corpus, "--resamples", "100"],
        &["min-budget", "--corpus", &corpus, "--iterations", "100", "--target-tau", "0.5"],
        &["score", "--corpus", &corpus, "--level", "segment", "--format", "jsonl"],
    ];
    for args in cases {
        assert_eq!(ok(args), ok(args), "{args:?}");
    }
}

#[test]
fn flags_take_precedence_over_environment() {
    let ws = Workspace::new();
    let args = ["simulate", "--corpus", "corpus.tsv", "--iterations", "50", "--plot-data"];

    let with_env = |seed: &str, extra: &[&str]| {
        let o = mqm()
            .args(args)
            .args(extra)
            .env("MQM_DATA_DIR", ws.dir.path())
            .env("MQM_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };
    let env7 = with_env("7", &[]);
    let env8 = with_env("8", &[]);
    assert_ne!(env7, env8);
    assert_eq!(with_env("8", &["--seed", "7"]), env7);

    // The data directory resolves relative paths; an explicit flag wins.
    let other = tempfile::tempdir().unwrap();
    let o = mqm()
        .args(args)
        .args(["--data-dir", other.path().to_str().unwrap()])
        .env("MQM_DATA_DIR", ws.dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corpus.tsv"));
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores.tsv");
    let f = fixture();
    let printed = ok(&["score", "--corpus", f.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(printed.is_empty());
    assert!(std::fs::read_to_string(out).unwrap().starts_with("system\tscore"));
}

fn http(port: u16, request: &str) -> String {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

fn wait_for(port: u16) {
    let start = Instant::now();
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Every module operation is reachable through some subcommand.
#[test]
fn coverage_audit() {
    let help = ok(&["--help"]);
    for sub in SUBCOMMANDS {
        assert!(help.contains(sub), "{sub} missing from --help");
    }

    let ws = Workspace::new();
    let corpus = ws.path("corpus.tsv");
    let c = corpus.as_str();
    let psqm = format!("pSQM={}", ws.path("psqm.tsv"));
    let csqm = format!("cSQM={}", ws.path("csqm.tsv"));
    let scheme = ws.path("scheme.tsv");
    std::fs::write(&scheme, "severity\tcategory\tweight\nMajor\t*\t10\nMinor\t*\t1\nNeutral\t*\t0\n").unwrap();
    let scores = ws.path("scores.tsv");
    std::fs::write(&scores, "system\tscore\nA\t0.31\nB\t0.52\n").unwrap();

    let metrics = ws.path("metrics.tsv");
    let audit: Vec<(&str, Vec<&str>, &str)> = vec![
        ("import_mqm_tsv", vec!["import", "--corpus", c], "system\tdoc_id"),
        ("import_scalar_tsv", vec!["import", "--corpus", c, "--scalar", &psqm, "--summary"], "pSQM_ratings"),
        ("parse_category", vec!["score", "--corpus", c, "--filter", "accuracy"], "system\tscore"),
        ("weight_of", vec!["score", "--corpus", c, "--scheme", &scheme], "system\tscore"),
        ("validate_corpus", vec!["validate", "--corpus", c], "rule\tlocation"),
        ("score_rating", vec!["score", "--corpus", c, "--level", "rating"], "rater\tscore"),
        ("score_segment", vec!["score", "--corpus", c, "--level", "segment"], "seg_id\tscore"),
        ("aggregate", vec!["score", "--corpus", c, "--level", "document"], "doc_id\tscore"),
        ("category_breakdown", vec!["breakdown", "--corpus", c, "--focus", "sys1"], "Accuracy"),
        ("rank_systems", vec!["rank", "--scores", &scores], "1\tB"),
        ("rater_report", vec!["rater-report", "--corpus", c], "all_vs_avg"),
        ("weight_sweep", vec!["sweep", "--corpus", c, "--weights", "1,5", "--resamples", "100"], "stability"),
        ("pearson", vec!["correlate", "--corpus", c, "--scalar", &psqm, "--scalar", &csqm], "pSQM"),
        ("kendall_tau", vec!["correlate", "--corpus", c, "--scalar", &psqm, "--include-human"], "kendall"),
        ("kendall_like", vec!["kendall-like", "--corpus", c, "--scalar", &psqm], "pSQM"),
        (
            "correlation_report",
            vec!["correlate", "--corpus", c, "--scalar", &psqm, "--gold", "pSQM", "--plot-data"],
            "source\tsystem",
        ),
        ("document_profile", vec!["doc-profile", "--corpus", c, "--plot-data"], "group"),
        ("fit_gaussian", vec!["fit-gaussian", "--corpus", c], "sigma_seg"),
        ("simulate_project", vec!["simulate", "--corpus", c, "--iterations", "50"], "mean_tau"),
        ("tau_distribution", vec!["simulate", "--corpus", c, "--iterations", "50", "--bootstrap"], "q50"),
        ("min_ratings_for_tau", vec!["budget", "--corpus", c, "--iterations", "50", "--target-tau", "0.5"], "min_ratings"),
        ("import_metric_scores", vec!["metrics-eval", "--corpus", c, "--metrics", &metrics], "BLEU"),
    ];
    for (op, args, expect) in &audit {
        let out = ok(args);
        assert!(out.contains(expect), "{op}: {args:?} gave {out}");
    }

    // Campaign operations: assign, submit through the served API, export.
    let projects = ws.path("projects");
    let project_dir = format!("{projects}/news");
    let plan = ok(&[
        "assign", "--corpus", c, "--project-dir", &project_dir, "--id", "news", "--raters", "a,b,c,d", "--mode", "sqm",
    ]);
    assert_eq!(plan.lines().count(), 11, "make_assignments: {plan}");
    assert_eq!(run(&["export", "--project-dir", &project_dir]).status.code(), Some(1));

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut server = mqm()
        .args(["serve", "--projects", &projects, "--addr", &format!("127.0.0.1:{port}"), "--token", "t"])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    wait_for(port);
    let task = http(port, "GET /projects/news/tasks?rater=a HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    let body = task.split("\r\n\r\n").nth(1).unwrap();
    let task: serde_json::Value = serde_json::from_str(body).unwrap();
    let submission = serde_json::json!({
        "rater_id": "a",
        "segment": {"alias": task["alias"], "doc_id": task["doc_id"], "seg_index": 0},
        "payload": {"kind": "sqm", "value": 4},
    })
    .to_string();
    let response = http(
        port,
        &format!(
            "POST /projects/news/annotations HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{submission}",
            submission.len()
        ),
    );
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "submit_annotation: {response}");

    let exported = ok(&["export", "--project-dir", &project_dir, "--close"]);
    assert_eq!(exported.lines().count(), 2, "export_corpus: {exported}");
    assert!(exported.lines().nth(1).unwrap().ends_with("\ta\t4"));
}
