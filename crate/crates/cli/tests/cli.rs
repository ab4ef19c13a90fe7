use std::path::Path;
use std::process::{Command, Output};

fn dualstore(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualstore"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const FAST: [&str; 6] = ["--set", "pretrain.epochs=10", "--set", "eval.episodes=2", "--set", "eval.seeds=[0]"];

#[test]
fn pipeline_verbs_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&dualstore(d, &["synth", "--set", "domains=3", "--set", "nodes_per_class=10", "--out", "g.json"]));

    let mut args = vec!["build-db", "--graphs", "g.json", "--holdout", "domain-0", "--out", "db"];
    args.extend(FAST);
    let out = ok(&dualstore(d, &args));
    assert!(out.contains("sources [\"synth-1\", \"synth-2\"]"), "{out}");
    assert!(d.join("db/db.sem.jsonl").exists() && d.join("db/db.str.jsonl").exists());

    let mut args = vec!["pretrain", "--graphs", "g.json", "--holdout", "domain-0", "--db", "db", "--out", "ck.json"];
    args.extend(FAST);
    ok(&dualstore(d, &args));
    let trace = std::fs::read_to_string(d.join("ck.json.trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,total,infonce,compression,token_reg"));
    assert_eq!(trace.lines().count(), 1 + 11);

    let ckpt = std::fs::read(d.join("ck.json")).unwrap();
    let mut args = vec!["finetune", "--graphs", "g.json", "--holdout", "domain-0", "--db", "db", "--checkpoint", "ck.json", "--out", "ft"];
    args.extend(FAST);
    ok(&dualstore(d, &args));
    assert_eq!(std::fs::read(d.join("ck.json")).unwrap(), ckpt);
    let episodes = std::fs::read_to_string(d.join("ft/episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 1 + 2);
    let attention: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ft/attention.json")).unwrap()).unwrap();
    assert!(attention[0]["queries"][0]["domain_gates"].as_array().unwrap().len() == 2);
    assert!(std::fs::read_to_string(d.join("ft/prompts.txt")).unwrap().contains("Retrieved knowledge:"));

    let out = ok(&dualstore(d, &["inspect", "--graphs", "g.json", "--db", "db", "--checkpoint", "ck.json", "--correlation", "corr.csv"]));
    assert!(out.contains("graph synth-0 domain domain-0 nodes 30"), "{out}");
    let corr = std::fs::read_to_string(d.join("corr.csv")).unwrap();
    assert_eq!(corr.lines().next().unwrap(), "dataset,synth-0,synth-1,synth-2");
}

#[test]
fn eval_writes_reports_and_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&dualstore(d, &["synth", "--set", "domains=2", "--set", "nodes_per_class=8", "--out", "g.json"]));
    std::fs::write(d.join("cfg.json"), r#"{"eval": {"split_mode": "dataset"}, "adapt": {"epochs": 5}}"#).unwrap();
    let mut args = vec!["eval", "--config", "cfg.json", "--graphs", "g.json", "--out", "ev", "--sweep", "adapt.k=1,3"];
    args.extend(FAST);
    let out = ok(&dualstore(d, &args));
    assert!(out.contains("== adapt.k=3"));
    for sub in ["sweep-00", "sweep-01"] {
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev").join(sub).join("report.json")).unwrap()).unwrap();
        assert_eq!(report["config"]["eval"]["split_mode"], "dataset");
        assert_eq!(report["input_hash"].as_str().unwrap().len(), 64);
        let agg = std::fs::read_to_string(d.join("ev").join(sub).join("aggregate.csv")).unwrap();
        assert!(agg.starts_with("split_mode,target,task,m,variant,mean,std,n"));
    }
    let r0: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/sweep-01/report.json")).unwrap()).unwrap();
    assert_eq!(r0["config"]["adapt"]["k"], 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = dualstore(d, &["synth", "--set", "nope=1", "--out", "g.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown spec key"));

    ok(&dualstore(d, &["synth", "--set", "domains=1", "--out", "g.json"]));
    let out = dualstore(d, &["build-db", "--graphs", "g.json", "--holdout", "domain-0", "--out", "db"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two datasets"));

    let out = dualstore(d, &["eval", "--graphs", "g.json", "--set", "eval.bogus=1", "--out", "ev"]);
    assert!(!out.status.success());
    assert!(!d.join("ev").exists());
}
