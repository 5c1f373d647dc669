//! End-to-end runs of the `rccl` binary on synthetic data.

use std::path::Path;
use std::process::{Command, Output};

use rccl::manifest::RunManifest;

const SMALL: &[&str] = &[
    "--set",
    "synth.samples_per_target=60",
    "--set",
    "synth.pretrain_size=300",
    "--set",
    "train.embedding_dim=8",
    "--set",
    "train.hidden_dim=8",
    "--set",
    "train.max_epochs=6",
    "--set",
    "train.pretrain_epochs=2",
];

fn rccl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rccl"))
        .args(args)
        .arg("--set")
        .arg(format!("output={}", out.display()))
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = rccl(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--seed", "7"], &a);
    ok(&["synth", "--seed", "7"], &b);
    ok(&["synth", "--seed", "8"], &c);
    for f in ["pretrain.jsonl", "train.jsonl", "dev.jsonl", "test.jsonl", "oracle.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("train.jsonl")).unwrap(), std::fs::read(c.join("train.jsonl")).unwrap());
    let m = RunManifest::load(a.join("manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 5);
}

#[test]
fn ablation_manifests_differ_only_in_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("rssg"), dir.path().join("aug"));
    ok(&with_small(&["ablate", "--strategy", "rssg", "--set", "synth.seed=1"]), &a);
    ok(&with_small(&["ablate", "--strategy", "aug-only", "--set", "synth.seed=1"]), &b);
    let mut ca = RunManifest::load(a.join("manifest.json")).unwrap().config;
    let mut cb = RunManifest::load(b.join("manifest.json")).unwrap().config;
    assert_eq!(ca["train"]["strategy"], "rssg");
    assert_eq!(cb["train"]["strategy"], "aug-only");
    for c in [&mut ca, &mut cb] {
        c["train"]["strategy"] = serde_json::Value::Null;
        c["output"] = serde_json::Value::Null;
    }
    assert_eq!(ca, cb);
    for f in ["model.json", "vocab.json", "counterfactuals.jsonl", "report.json", "report.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn train_then_eval_and_probe_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--seed", "2", "--set", "synth.samples_per_target=60", "--set", "synth.pretrain_size=300"], &data);
    let set = |k: &str, f: &str| format!("data.{k}={}", data.join(f).display());
    let (tr, dv, te) = (set("train", "train.jsonl"), set("dev", "dev.jsonl"), set("test", "test.jsonl"));
    let trained = dir.path().join("trained");
    ok(&["train", "--set", &tr, "--set", &dv, "--set", &te, "--set", "train.max_epochs=5"], &trained);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(trained.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "test");

    let model = format!("model={}", trained.join("model.json").display());
    let vocab = format!("vocab={}", trained.join("vocab.json").display());
    let evaluated = dir.path().join("eval");
    ok(&["eval", "--set", &te, "--set", &model, "--set", &vocab], &evaluated);
    assert_eq!(
        std::fs::read(trained.join("report.csv")).unwrap(),
        std::fs::read(evaluated.join("report.csv")).unwrap()
    );

    let probe = dir.path().join("probe");
    ok(&["bias-probe", "--plot", "--set", &te, "--set", &model, "--set", &vocab], &probe);
    let csv = std::fs::read_to_string(probe.join("bias_probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
    assert!(std::fs::read_to_string(probe.join("bias_probe.svg")).unwrap().starts_with("<svg"));

    let generated = dir.path().join("gen");
    ok(&["generate", "--set", &tr, "--set", &model, "--set", &vocab], &generated);
    let m = RunManifest::load(generated.join("manifest.json")).unwrap();
    let kept = m.details["kept"].as_u64().unwrap() as usize;
    let lines = std::fs::read_to_string(generated.join("counterfactuals.jsonl")).unwrap().lines().count();
    assert_eq!(kept, lines);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&with_small(&["sweep", "--param", "mask-ratio", "--values", "0.05,0.08,0.2", "--set", "synth.seed=4"]), &out);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("mask-ratio,0.08,test,"));

    let o = rccl(&with_small(&["sweep", "--param", "pos-count", "--values", "1.5", "--set", "synth.seed=4"]), &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(rccl(&["frobnicate"], &out).status.code(), Some(2));
    assert_eq!(rccl(&["train"], &out).status.code(), Some(2));
    assert_eq!(rccl(&["train", "--set", "train.margin=-1", "--set", "synth.seed=0"], &out).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(rccl(&["stats", "--config", missing.to_str().unwrap()], &out).status.code(), Some(2));

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "ID\tTarget\tTweet\tStance\n1\tX\thello\tYES\n").unwrap();
    let path = format!("data.train={}", bad.display());
    let o = rccl(&["stats", "--set", "data.format=semeval", "--set", &path], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"));

    let good = dir.path().join("good.tsv");
    std::fs::write(&good, "ID\tTarget\tTweet\tStance\n1\tX\thello\tFAVOR\n2\tX\tbye\tNONE\n").unwrap();
    let path = format!("data.train={}", good.display());
    ok(&["stats", "--set", "data.format=semeval", "--set", &path], &out);
    let csv = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    assert!(csv.contains("train,X,1,0,1,0,2"), "{csv}");
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"synth": {"seed": 5, "samples_per_target": 30}, "train": {"seed": 9}}"#).unwrap();
    let out = dir.path().join("o");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--set", "synth.samples_per_target=40"], &out);
    let m = RunManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.config["synth"]["seed"], 5);
    assert_eq!(m.config["synth"]["samples_per_target"], 40);
    assert_eq!(m.seed, 9);
    assert!(m.inputs.keys().any(|k| k.ends_with("run.json")));
}
