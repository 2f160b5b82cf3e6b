mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gflin::data::write_dataset;
use gflin::kernel::load_model;
use serde_json::Value;

use common::small_sbm;

fn gflin(args: &[&str]) -> Output {
    gflin_env(args, &[])
}

fn gflin_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gflin"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

struct Files {
    dir: tempfile::TempDir,
    edges: String,
    features: String,
    labels: String,
}

impl Files {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn args<'a>(&'a self, cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![cmd, "--edges", &self.edges, "--features", &self.features, "--labels", &self.labels];
        v.extend_from_slice(extra);
        v
    }
}

fn sbm_files() -> Files {
    let (ds, _) = common::dataset(&small_sbm());
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let (edges, features, labels) = (p("sbm.edges"), p("sbm.features"), p("sbm.labels"));
    write_dataset(&ds, Path::new(&edges), Path::new(&features), Path::new(&labels)).unwrap();
    Files { dir, edges, features, labels }
}

#[test]
fn train_sgc_with_default_grid() {
    let f = sbm_files();
    let model = f.path("m.bin");
    let model = model.to_str().unwrap();
    let args = f.args("train", &["--filter", "sgc", "--k", "2", "--lambda-grid", "--out", model]);
    let first = stdout_json(&gflin(&args));
    assert!(first["metrics"]["accuracy"].as_f64().unwrap() >= 0.90, "{first}");
    assert_eq!(first["solver"], "gradient_free");
    assert_eq!(first["grid"].as_array().unwrap().len(), 9);

    let saved = load_model::<f64>(Path::new(model)).unwrap();
    assert_eq!(saved.model.lambda, first["lambda"].as_f64().unwrap());

    let second = stdout_json(&gflin(&args));
    assert_eq!(first["metrics"]["accuracy"], second["metrics"]["accuracy"]);
    assert_eq!(first["lambda"], second["lambda"]);
}

#[test]
fn train_gradient_descent_writes_trace() {
    let f = sbm_files();
    let trace = f.path("trace.csv");
    let record = f.path("record.json");
    let args = f.args(
        "train",
        &[
            "--filter",
            "ssgc",
            "--k",
            "4",
            "--tau",
            "0.1",
            "--mode",
            "gd",
            "--out",
            trace.to_str().unwrap(),
            "--record",
            record.to_str().unwrap(),
        ],
    );
    let rec = stdout_json(&gflin(&args));
    assert_eq!(rec["solver"], "gradient_descent");
    assert_eq!(rec["filter"]["tau"], 0.1);
    let text = std::fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,loss");
    assert_eq!(text.lines().count(), 201);
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(record).unwrap()).unwrap();
    assert_eq!(on_disk["metrics"]["accuracy"], rec["metrics"]["accuracy"]);
}

#[test]
fn usage_errors_exit_one() {
    let f = sbm_files();
    let out = f.path("m.bin");
    let out = out.to_str().unwrap();
    for extra in [
        vec!["--filter", "sgc", "--k", "2", "--tau", "0.1", "--out", out],
        vec!["--filter", "dgc", "--k", "2", "--tau", "0.1", "--out", out],
        vec!["--filter", "ssgc", "--k", "0", "--out", out],
        vec!["--filter", "sgc", "--k", "2", "--norm", "banana", "--out", out],
        vec!["--filter", "sgc", "--k", "2", "--lambda", "1", "--lambda-grid", "--out", out],
        vec!["--filter", "sgc", "--k", "2", "--ratios", "0.5,0.5", "--out", out],
    ] {
        let res = gflin(&f.args("train", &extra));
        assert_eq!(res.status.code(), Some(1), "{extra:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(gflin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gflin(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let f = sbm_files();
    let out = f.path("m.bin");
    let out = out.to_str().unwrap();
    let missing = gflin(&[
        "train",
        "--edges",
        "/nonexistent",
        "--features",
        &f.features,
        "--labels",
        &f.labels,
        "--filter",
        "sgc",
        "--k",
        "2",
        "--out",
        out,
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = f.path("bad.features");
    std::fs::write(&bad, "5 1\n1\n2\n").unwrap();
    let res = gflin(&[
        "train",
        "--edges",
        &f.edges,
        "--features",
        bad.to_str().unwrap(),
        "--labels",
        &f.labels,
        "--filter",
        "sgc",
        "--k",
        "2",
        "--out",
        out,
    ]);
    assert_eq!(res.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("N=5") && msg.contains('2'), "{msg}");
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (e, x, l) = (dir.path().join("g.edges"), dir.path().join("g.features"), dir.path().join("g.labels"));
    std::fs::write(&e, (0..19).map(|i| format!("{i}\t{}\n", i + 1)).collect::<String>()).unwrap();
    std::fs::write(&x, format!("20 1\n{}", "1e308\n".repeat(20))).unwrap();
    std::fs::write(&l, (0..20).map(|i| format!("{i}\t{}\n", i % 2)).collect::<String>()).unwrap();
    let out = dir.path().join("m.bin");
    let res = gflin(&[
        "train",
        "--edges",
        e.to_str().unwrap(),
        "--features",
        x.to_str().unwrap(),
        "--labels",
        l.to_str().unwrap(),
        "--filter",
        "ssgc",
        "--k",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn sweep_tables() {
    let f = sbm_files();
    let csv = f.path("sweep.csv");
    let args = f.args(
        "sweep",
        &["--filter", "sgc,ssgc", "--k", "2,8", "--seeds", "0,1,2", "--mode", "gf", "--out", csv.to_str().unwrap()],
    );
    let summary = stdout_json(&gflin_env(&args, &[("GFLIN_THREADS", "2")]));
    for s in summary.as_array().unwrap() {
        assert_eq!(s["std_error"], 0.0);
        assert_eq!(s["runs"], 3);
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "kind,K,seed,mode,lambda,accuracy,filter_time_s,fit_time_s");
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
    let acc = text.lines().nth(1).unwrap().split(',').nth(5).unwrap();
    assert_eq!(acc.split('.').nth(1).unwrap().len(), 4);
    let summary_csv = std::fs::read_to_string(f.path("sweep_summary.csv")).unwrap();
    assert!(summary_csv.starts_with("kind,K,mode,runs,mean_accuracy,std_error\n"));

    let one = f.path("one.csv");
    stdout_json(&gflin(&f.args("sweep", &["--k", "2", "--out", one.to_str().unwrap()])));
    assert_eq!(std::fs::read_to_string(one).unwrap().lines().count(), 2);
}

fn write_graph(dir: &Path, name: &str, edges: &str, features: &str) -> (String, String) {
    let e = dir.join(format!("{name}.edges"));
    let x = dir.join(format!("{name}.features"));
    std::fs::write(&e, edges).unwrap();
    std::fs::write(&x, features).unwrap();
    (e.to_string_lossy().into_owned(), x.to_string_lossy().into_owned())
}

#[test]
fn diagnose_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let (e, x) = write_graph(dir.path(), "tri", "0\t1\n1\t2\n0\t2\n", "3 2\n1 0\n0 2\n-1 0.5\n");
    let ks = "1,2,4,8,16,32,64,128,256";
    let run = |filter: &str, ks: &str, out: &str, e: &str, x: &str| {
        let out = dir.path().join(out);
        let v = stdout_json(&gflin(&[
            "diagnose",
            "--edges",
            e,
            "--features",
            x,
            "--filter",
            filter,
            "--k",
            ks,
            "--out",
            out.to_str().unwrap(),
        ]));
        (v, out)
    };
    let (sgc, out) = run("sgc", ks, "sgc", &e, &x);
    assert_eq!(sgc["vanishing"], true);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["k_values"].as_array().unwrap().len(), 9);
    assert!(std::fs::read_to_string(out.join("curve.csv")).unwrap().starts_with("K,norm,residual\n"));

    // Once the Euler step is stable the DGC curve plateaus at its limit.
    let (dgc, _) = run("dgc", "8,16,32,64,128,256", "dgc", &e, &x);
    assert_eq!(dgc["vanishing"], false);

    let (e0, x0) = write_graph(dir.path(), "empty", "", "3 2\n1 0\n0 2\n-1 0.5\n");
    let (edgeless, _) = run("sgc", ks, "edgeless", &e0, &x0);
    assert_eq!(edgeless["vanishing"], false);
    assert_eq!(edgeless["connected"], false);
}

#[test]
fn diagnose_with_labels_writes_gradients() {
    let f = sbm_files();
    let out = f.path("diag");
    let v = stdout_json(&gflin(&[
        "diagnose",
        "--edges",
        &f.edges,
        "--features",
        &f.features,
        "--labels",
        &f.labels,
        "--filter",
        "sgc",
        "--k",
        "2,32",
        "--norm",
        "sym",
        "--epochs",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["qualitative"], true);
    let grads = std::fs::read_to_string(out.join("gradients.csv")).unwrap();
    assert!(grads.starts_with("K,median_abs,p05,p95,max_abs\n"));
    assert_eq!(grads.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("trace_k32.csv")).unwrap().lines().count(), 6);
}

#[test]
fn time_table() {
    let f = sbm_files();
    let csv = f.path("time.csv");
    let rows =
        stdout_json(&gflin(&f.args("time", &["--filter", "sgc", "--k", "2,16", "--out", csv.to_str().unwrap()])));
    for r in rows.as_array().unwrap() {
        assert!(r["gf_fit_time_s"].as_f64().unwrap() < r["gd_fit_time_s"].as_f64().unwrap(), "{r}");
    }
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("kind,K,filter_time_s,gf_fit_time_s,gd_fit_time_s\n"));
}

#[test]
fn synth_and_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("g");
    let args = [
        "synth",
        "--n-per-block",
        "3",
        "--p-in",
        "1",
        "--p-out",
        "0",
        "--feature-dim",
        "2",
        "--out",
        prefix.to_str().unwrap(),
    ];
    let conn = stdout_json(&gflin(&args));
    assert_eq!(conn["connected"], false);
    assert_eq!(std::fs::read_to_string(dir.path().join("g.edges")).unwrap().lines().count(), 6);
    assert_eq!(gflin_env(&args, &[("GFLIN_THREADS", "0")]).status.code(), Some(1));
}
