use std::path::Path;
use std::process::{Command, Output};

use distillkit::harness::config_id;
use distillkit::losses::HyperParams;

const TINY: &str = "[hyper]\nepochs = 2\nlr = 0.003\nbatch_size = 16\n\
                    [model]\nfamily = micro:8:2:8\nblocks_removed = 1\n\
                    [data]\nn_per_class = 8\nn_test_per_class = 4\n\
                    [run]\nseed = 3\nruns = 2\n";

fn distillkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distillkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> Option<i32> {
    distillkit(args).status.code()
}

fn ok(args: &[&str]) {
    let out = distillkit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&[]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["distill", "--bogus"]), Some(2));
    assert_eq!(code(&["bench", "-c", "/no/such/config.cfg"]), Some(2));
    assert_eq!(
        code(&["distill", "--teacher", "/no/such/teacher.dfkg"]),
        Some(3)
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let teacher = dir.path().join("t.dfkg");
    assert_eq!(
        code(&[
            "train-teacher",
            "-c",
            s(&cfg),
            "--out",
            s(&teacher),
            "--alpha",
            "3"
        ]),
        Some(2)
    );

    std::fs::write(&cfg, format!("{TINY}\n[hyper]\nalhpa = 0.5\n")).unwrap();
    let out = distillkit(&["bench", "-c", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alhpa"));
}

#[test]
fn default_hyperparameters_are_the_tuned_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    std::fs::write(&cfg, "").unwrap();
    let parsed = distillkit::config::RunConfig::load(&cfg).unwrap();
    assert_eq!(config_id(&parsed.hyper), config_id(&HyperParams::tuned()));
    assert_eq!(config_id(&parsed.hyper), "a0.01_T2.5_p0.1_g0.8");
    assert_eq!(config_id(&HyperParams::untuned()), "a0.5_T2_p0.5_g0.5");
}

#[test]
fn end_to_end_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let c = s(&cfg);
    let teacher = d.join("t.dfkg");
    let outputs = d.join("t.dfto");
    let ig = d.join("t.dfig");
    ok(&["train-teacher", "-c", c, "--out", s(&teacher)]);
    ok(&[
        "precompute-logits",
        "-c",
        c,
        "--teacher",
        s(&teacher),
        "--out",
        s(&outputs),
        "--blocks-removed",
        "1",
    ]);
    ok(&[
        "precompute-ig",
        "-c",
        c,
        "--teacher",
        s(&teacher),
        "--out",
        s(&ig),
        "--steps",
        "8",
    ]);
    assert!(d.join("t.dfig.manifest").exists());

    for run in ["a", "b"] {
        let out = d.join(run);
        ok(&[
            "distill",
            "-c",
            c,
            "--teacher",
            s(&teacher),
            "--teacher-outputs",
            s(&outputs),
            "--ig-map",
            s(&ig),
            "--output-dir",
            s(&out),
            "--out",
            s(&out.join("student.dfkg")),
        ]);
    }
    let accuracies = |run: &str| -> Vec<String> {
        std::fs::read_to_string(d.join(run).join("runs.csv"))
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(accuracies("a"), accuracies("b"));
    assert_eq!(
        std::fs::read(d.join("a/student.dfkg")).unwrap(),
        std::fs::read(d.join("b/student.dfkg")).unwrap()
    );

    ok(&[
        "filtered-eval",
        "-c",
        c,
        "--model",
        s(&d.join("a/student.dfkg")),
        "--teacher",
        s(&teacher),
    ]);
    ok(&[
        "bench",
        "-c",
        c,
        "--teacher",
        s(&teacher),
        "--batch",
        "2",
        "--warmup",
        "1",
        "--iters",
        "5",
        "--output-dir",
        s(d),
    ]);
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert!(
        bench.starts_with("compression_factor,seconds_per_batch,speedup\n1.0,"),
        "{bench}"
    );
    assert!(bench.lines().count() >= 3);
}

#[test]
fn precomputed_outputs_must_match_the_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let c = s(&cfg);
    ok(&[
        "train-teacher",
        "-c",
        c,
        "--out",
        s(&d.join("t1.dfkg")),
        "--seed",
        "1",
    ]);
    ok(&[
        "train-teacher",
        "-c",
        c,
        "--out",
        s(&d.join("t2.dfkg")),
        "--seed",
        "2",
    ]);
    ok(&[
        "precompute-logits",
        "-c",
        c,
        "--teacher",
        s(&d.join("t1.dfkg")),
        "--out",
        s(&d.join("t1.dfto")),
    ]);
    let out = distillkit(&[
        "distill",
        "-c",
        c,
        "--teacher",
        s(&d.join("t2.dfkg")),
        "--teacher-outputs",
        s(&d.join("t1.dfto")),
        "--output-dir",
        s(d),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
