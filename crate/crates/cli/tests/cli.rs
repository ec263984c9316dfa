use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
lexicon = "LEXICON"

[synth]
users = 30
min_visits = 20
max_visits = 25

[model]
char_filters = [4, 8, 8]
char_dim = 8
token_dim = 16
hidden = 16
ffn_dim = 32
mlp = [32, 16, 8]

[model.candidate_encoder]
blocks = 1
heads = 2

[model.prefix_encoder]
blocks = 1
heads = 2

[model.history_encoder]
blocks = 1
heads = 2

[train]
max_steps = 30
eval_every = 10
batch_size = 32
valid_limit = 100

[train.schedule]
warmup_steps = 10

[ablate]
variants = ["SIN_b+H", "SIN_b+H+SE", "SIN_b+H+PI"]
seeds = 3

[bench]
requests = 40
"#;

fn qac(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qac"));
    cmd.env_remove("QAC_CONFIG").env("QAC_LOG", "warn").args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn status_json(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or("");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("no status line in {err}"))
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[synth]\nusers = 10\n").unwrap();
    let (a, b, c) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"), dir.path().join("c.tsv"));
    assert!(qac(&["synth", "--seed", "4", "--out", s(&a)], Some(&cfg)).status.success());
    assert!(qac(&["synth", "--seed", "4", "--out", s(&b)], Some(&cfg)).status.success());
    assert!(qac(&["synth", "--seed", "5", "--out", s(&c)], Some(&cfg)).status.success());
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatchsize = 3\n").unwrap();
    let out = qac(&["synth", "--out", s(&dir.path().join("x.tsv"))], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
    let v = status_json(&out);
    assert_eq!(v["kind"], "config");
    assert!(v["reason"].as_str().unwrap().contains("batchsize"));

    let missing = qac(&["eval", "--splits", "nowhere", "--baseline", "mpc", "--out-dir", "x"], None);
    assert_eq!(missing.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_qac"))
        .env("QAC_CONFIG", &cfg)
        .args(["synth", "--out", s(&dir.path().join("y.tsv"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let usage = qac(&["train"], None);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let lex = p("lexicon.txt");
    let cfg = p("tiny.toml");
    std::fs::write(&cfg, TINY.replace("LEXICON", s(&lex))).unwrap();
    let run = |args: &[&str]| {
        let out = qac(args, Some(&cfg));
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["synth", "--seed", "1", "--out", s(&p("log.tsv")), "--lexicon-out", s(&lex)]);
    run(&["ingest", "--input", s(&p("log.tsv")), "--out-dir", s(&p("splits"))]);
    for f in ["background.tsv", "train.tsv", "valid.tsv", "test.tsv", "split.json"] {
        assert!(p("splits").join(f).exists(), "{f}");
    }
    run(&["build-trie", "--splits", s(&p("splits")), "--out", s(&p("trie.bin"))]);
    run(&["train", "--splits", s(&p("splits")), "--out", s(&p("sin.ckpt"))]);
    assert!(p("sin.state.json").exists());

    let tsv = run(&[
        "eval", "--splits", s(&p("splits")), "--checkpoint", s(&p("sin.ckpt")), "--out-dir", s(&p("eval")),
    ]);
    assert!(tsv.contains("SIN"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("eval").join("SIN-test.json")).unwrap()).unwrap();
    assert!(report["slices"]["unseen"]["count"].as_u64().is_some());
    assert!(report["fingerprint"].as_str().unwrap().len() == 16);
    assert!(p("eval").join("ttest-vs-mpc-test.json").exists());

    run(&["eval", "--splits", s(&p("splits")), "--baseline", "mpc", "--split", "valid", "--out-dir", s(&p("eval"))]);
    let mpc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("eval").join("MPC-valid.json")).unwrap()).unwrap();
    assert_eq!(mpc["slices"]["unseen"]["mrr"].as_f64(), Some(0.0));

    let bench = run(&[
        "bench", "--splits", s(&p("splits")), "--trie", s(&p("trie.bin")), "--checkpoint", s(&p("sin.ckpt")),
    ]);
    let b: serde_json::Value = serde_json::from_str(&bench).unwrap();
    assert_eq!(b["runs"].as_array().unwrap().len(), 2);
    assert_eq!(b["runs"][0]["requests"], 40);

    // a lexicon-free config cannot slice IE/IT
    let plain = p("plain.toml");
    std::fs::write(&plain, "").unwrap();
    let out = qac(
        &["eval", "--splits", s(&p("splits")), "--baseline", "mcg", "--slices", "seen,it", "--out-dir", s(&p("e2"))],
        Some(&plain),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_without_comparable_pair_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let lex = p("lexicon.txt");
    let cfg = p("tiny.toml");
    let body = TINY.replace("LEXICON", s(&lex)).replace("max_steps = 30", "max_steps = 3");
    std::fs::write(&cfg, body).unwrap();
    let ok = |args: &[&str]| assert!(qac(args, Some(&cfg)).status.success());
    ok(&["synth", "--seed", "2", "--out", s(&p("log.tsv")), "--lexicon-out", s(&lex)]);
    ok(&["ingest", "--input", s(&p("log.tsv")), "--out-dir", s(&p("splits"))]);
    let out = qac(
        &["ablate", "--splits", s(&p("splits")), "--variants", "SIN_b+H", "--out-dir", s(&p("ab"))],
        Some(&cfg),
    );
    // one variant alone has no ordering to check
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p("ab").join("ablation.tsv").exists());
}
