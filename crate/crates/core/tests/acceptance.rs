//! One line per acceptance criterion. Pass criterion numbers as arguments
//! to run a subset: `cargo test --release --test acceptance -- 3 7`.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use distillkit::augment::{augment_batch, augment_image, overlay, sample_scale, AugmentPolicy};
use distillkit::bench::{
    bench_reports, memory_estimate, memory_kb, time_inference, MonotonicClock,
};
use distillkit::config::{DataSource, Family, RunConfig};
use distillkit::data::{synthetic_splits, SyntheticConfig};
use distillkit::harness::{
    accuracy, lilliefors, mc_subset, mean, paired_t_test, precompute_teacher_outputs,
    relative_delta_acc, TrainOptions,
};
use distillkit::ig::{
    completeness_check, integrated_gradients, precompute_dataset, IGConfig, LinearScorer,
    PrecomputeOptions,
};
use distillkit::losses::{cross_entropy, kd_loss, HyperParams};
use distillkit::netblocks::{
    build_teacher, build_teacher_spec, compression_factor, derive_student, WidthConfig,
};
use distillkit::pipeline::{paired, train_teacher, Method, StudentSetup};
use distillkit::seed::rng_for;
use distillkit::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn all(parts: Vec<(bool, String)>) -> Verdict {
    let pass = parts.iter().all(|p| p.0);
    let detail = parts
        .into_iter()
        .map(|(ok, s)| if ok { s } else { format!("[x] {s}") })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

// 1. finite-difference checks
fn gradcheck() -> Verdict {
    let start = Instant::now();
    let checks = common::gradcheck_suite(7);
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel.total_cmp(&b.rel))
        .unwrap();
    let bad: Vec<&str> = checks
        .iter()
        .filter(|c| !(c.rel <= common::GRADCHECK_TOL))
        .map(|c| c.name.as_str())
        .collect();
    let covers_losses = ["network_kd", "network_kd_at"]
        .iter()
        .all(|n| checks.iter().any(|c| c.name.starts_with(n)));
    all(vec![
        (
            bad.is_empty(),
            format!(
                "{} checks, worst {:.2e} ({}), failing {:?}",
                checks.len(),
                worst.rel,
                worst.name,
                bad
            ),
        ),
        (covers_losses, "both composed losses checked".into()),
        (secs < 30.0, format!("{secs:.1}s < 30s")),
    ])
}

// 2. parameter counts, memory and compression factors
fn parameters() -> Verdict {
    let teacher = build_teacher_spec(10, &WidthConfig::mobilenet_v2_cifar()).unwrap();
    let params = teacher.param_count();
    let kb = memory_kb(memory_estimate(&teacher));
    let mut parts = vec![
        (params == 2_236_682, format!("teacher {params} params")),
        ((kb - 8737.0).abs() < 1.0, format!("{kb:.1} KB")),
    ];
    let expected = [2.19, 4.12, 7.29, 12.04, 28.97, 54.59, 139.43, 1121.71];
    for (i, want) in expected.iter().enumerate() {
        let removed = 2 * (i + 1);
        let student = derive_student(&teacher, removed).unwrap();
        let cf = compression_factor(params, student.param_count()).unwrap();
        let rel = (cf - want).abs() / want;
        parts.push((rel <= 0.01, format!("r{removed} {cf:.2}x")));
    }
    all(parts)
}

// 3. IG completeness on a trained network
fn ig_completeness() -> Verdict {
    let start = Instant::now();
    let family = Family::Micro {
        divisor: 8,
        blocks: 4,
        size: 16,
    };
    let [_, size, _] = family.width_config().input_shape;
    let cfg = SyntheticConfig {
        n_per_class: 100,
        classes: 10,
        size,
        seed: 3,
        noise: 0.15,
    };
    let (train, test) = synthetic_splits(&cfg, 20).unwrap();
    let hyper = HyperParams {
        epochs: 10,
        lr: 3e-3,
        batch_size: 32,
        ..HyperParams::default()
    };
    let (model, _) = train_teacher(
        &family,
        &train,
        &test,
        &hyper,
        0,
        &TrainOptions { eval_every: 100 },
    )
    .unwrap();
    let acc = accuracy(&model, &test).unwrap();

    let mut net = model.cast::<f64>();
    let mut residuals = Vec::new();
    for i in 0..50 {
        let x = Tensor::new(test.image_shape().to_vec(), test.image(i).to_vec())
            .unwrap()
            .cast::<f64>();
        let config = IGConfig::new(test.labels[i]).with_steps(512);
        if let Some(r) = completeness_check(&mut net, &x, &config)
            .unwrap()
            .residual()
        {
            residuals.push(r);
        }
    }
    let mean_residual = mean(&residuals);

    let mut rng = rng_for(31, &[]);
    let weight = Tensor::from_fn(vec![4, 3, 5, 5], |_| rng.gen_range(-1.0..1.0));
    let mut linear = LinearScorer::new(weight.clone(), vec![0.3, -0.1, 0.0, 2.0]).unwrap();
    let x = Tensor::from_fn(vec![3, 5, 5], |_| rng.gen_range(0.0..1.0));
    let map = integrated_gradients(&mut linear, &x, &IGConfig::new(2).with_steps(7)).unwrap();
    let exact = x
        .zip_map(
            &Tensor::new(vec![3, 5, 5], weight.outer(2).to_vec()).unwrap(),
            |a, b| a * b,
        )
        .unwrap();
    let linear_err = map.raw.sub(&exact).unwrap().max_abs();
    let secs = start.elapsed().as_secs_f64();
    all(vec![
        (acc >= 0.9, format!("network accuracy {:.1}%", 100.0 * acc)),
        (
            residuals.len() >= 50 && mean_residual <= 0.01,
            format!(
                "mean residual {:.2e} over {} images at 512 steps",
                mean_residual,
                residuals.len()
            ),
        ),
        (
            linear_err <= 1e-12,
            format!("linear-model error {linear_err:.1e}"),
        ),
        (secs < 120.0, format!("{secs:.1}s < 120s")),
    ])
}

// 4. augmentation pipeline
fn augmentation() -> Verdict {
    let mut rng = rng_for(41, &[]);
    let policy = AugmentPolicy::with_p(1.0, 0);
    let mut out_of_range = 0usize;
    for i in 0..100_000 {
        let x = Tensor::from_fn(vec![3, 4, 4], |_| rng.gen_range(0.0f32..=1.0));
        let ig = match i % 4 {
            0 => Tensor::zeros(vec![4, 4]),
            1 => Tensor::full(vec![4, 4], 0.7f32),
            2 => Tensor::from_fn(vec![4, 4], |_| rng.gen_range(0.0f32..1e-6)),
            _ => Tensor::from_fn(vec![4, 4], |_| rng.gen_range(0.0f32..50.0)),
        };
        let y = augment_image(&x, &ig, &mut rng, &policy).unwrap();
        out_of_range += y
            .data()
            .iter()
            .filter(|v| !(0.0..=1.0).contains(*v))
            .count();
    }

    let n = 10_000;
    let default = AugmentPolicy::default();
    let mut scales: Vec<f64> = (0..n).map(|_| sample_scale(&mut rng, &default)).collect();
    scales.sort_by(f64::total_cmp);
    let span = (default.scale_max / default.scale_min).ln();
    let ks = scales
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = (s / default.scale_min).ln() / span;
            ((i + 1) as f64 / n as f64 - f).max(f - i as f64 / n as f64)
        })
        .fold(0.0, f64::max);
    let critical = 1.358 / (n as f64).sqrt();

    let p01 = AugmentPolicy::with_p(0.1, 0);
    let x = Tensor::full(vec![3, 4, 4], 0.2f32);
    let map = Tensor::from_fn(vec![4, 4], |i| i as f32 / 15.0);
    let trials = 100_000;
    let applied = (0..trials)
        .filter(|_| overlay(&x, &map, &mut rng, &p01).unwrap() != x)
        .count();
    let rate = applied as f64 / trials as f64;

    let (train, _) = synthetic_splits(
        &SyntheticConfig {
            size: 8,
            ..SyntheticConfig::new(4, 5)
        },
        1,
    )
    .unwrap();
    let model = build_teacher::<f32>(10, &WidthConfig::micro(8, 2, 8), 1).unwrap();
    let store = precompute_dataset(&model, &train, &PrecomputeOptions::new(8)).unwrap();
    let idx: Vec<usize> = (0..train.len()).collect();
    let half = AugmentPolicy::with_p(0.5, 9);
    let a = augment_batch(&train.images, &idx, &store, &half, 3)
        .unwrap()
        .to_le_bytes();
    let b = augment_batch(&train.images, &idx, &store, &half, 3)
        .unwrap()
        .to_le_bytes();
    let other = augment_batch(
        &train.images,
        &idx,
        &store,
        &AugmentPolicy::with_p(0.5, 10),
        3,
    )
    .unwrap()
    .to_le_bytes();
    all(vec![
        (
            out_of_range == 0,
            format!("{out_of_range} pixels outside [0,1] over 1e5 images"),
        ),
        (
            ks < critical,
            format!("KS {ks:.4} < {critical:.4} at n=1e4"),
        ),
        ((rate - 0.1).abs() <= 0.01, format!("apply rate {rate:.4}")),
        (
            a == b && a != other,
            "byte-identical under a fixed seed".into(),
        ),
    ])
}

// 5. loss oracles
fn losses() -> Verdict {
    let student = Tensor::new(vec![2, 4], vec![1.5, -0.3, 0.2, 2.0, -1.0, 0.7, 3.1, 0.0]).unwrap();
    let teacher = Tensor::new(vec![2, 4], vec![0.4, 0.1, -0.8, 1.9, 0.0, 0.0, 2.5, -1.2]).unwrap();
    let labels = [3usize, 2];
    // 50-digit values of the same expressions
    const CE: f64 = 0.384_424_552_869_634_924_609_277_7;
    const KD: [(f64, f64); 3] = [
        (1.0, 0.086_705_560_253_812_555_098_083_38),
        (2.5, 0.189_414_057_064_688_485_693_864_3),
        (4.0, 0.220_885_608_473_716_698_669_319_4),
    ];

    // straightforward f64 restatement
    let naive_log_softmax = |row: &[f64], t: f64| -> Vec<f64> {
        let z: Vec<f64> = row.iter().map(|v| v / t).collect();
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    };
    let naive_kd = |t: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..2 {
            let ls = naive_log_softmax(student.outer(i), t);
            let lt = naive_log_softmax(teacher.outer(i), t);
            total += lt
                .iter()
                .zip(&ls)
                .map(|(a, b)| a.exp() * (a - b))
                .sum::<f64>();
        }
        t * t * total / 2.0
    };

    let ce = cross_entropy(&student, &labels).unwrap();
    let naive_ce = -(naive_log_softmax(student.outer(0), 1.0)[3]
        + naive_log_softmax(student.outer(1), 1.0)[2])
        / 2.0;
    let mut worst = (ce - CE).abs().max((ce - naive_ce).abs());
    for (t, want) in KD {
        let got = kd_loss(&student, &teacher, t).unwrap();
        worst = worst.max((got - want).abs()).max((got - naive_kd(t)).abs());
    }

    let mut rng = rng_for(51, &[]);
    let mut self_kd = 0.0f64;
    for t in [0.5, 1.0, 2.5, 10.0] {
        let z = Tensor::from_fn(vec![8, 10], |_| rng.gen_range(-20.0..20.0));
        self_kd = self_kd.max(kd_loss(&z, &z, t).unwrap().abs());
    }
    let uniform = Tensor::full(vec![5, 10], 3.7);
    let ce_gap = (cross_entropy(&uniform, &[0, 3, 5, 7, 9]).unwrap() - 10f64.ln()).abs();
    all(vec![
        (worst <= 1e-10, format!("max oracle error {worst:.1e}")),
        (self_kd == 0.0, format!("max |kd(z,z)| {self_kd:.1e}")),
        (
            ce_gap <= 1e-12,
            format!("|CE(uniform) - ln 10| {ce_gap:.1e}"),
        ),
    ])
}

// 6. statistics
fn statistics() -> Verdict {
    let hand = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    // two degrees of freedom: P(|T| > t) = 1 - t / sqrt(2 + t²)
    let p_ref = 1.0 - hand.t / (2.0 + hand.t * hand.t).sqrt();

    let trials = 10_000;
    let mut rejected = 0;
    for k in 0..trials {
        let mut rng = rng_for(61, &[k]);
        let a: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
        if paired_t_test(&a, &b).unwrap().p < 0.05 {
            rejected += 1;
        }
    }
    let null_rate = rejected as f64 / trials as f64;

    let reps = 500;
    let accepted = (0..reps)
        .filter(|&k| {
            let mut rng = rng_for(62, &[k]);
            let x: Vec<f64> = (0..100)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 + 2.0 * z
                })
                .collect();
            lilliefors(&x).unwrap().p_value >= 0.05
        })
        .count() as f64
        / reps as f64;
    let rejected_uniform = (0..reps)
        .filter(|&k| {
            let mut rng = rng_for(63, &[k]);
            let x: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
            lilliefors(&x).unwrap().p_value < 0.05
        })
        .count() as f64
        / reps as f64;

    let rel = relative_delta_acc(96.14, 94.48, 95.93).unwrap();
    all(vec![
        ((hand.t - 3.4641).abs() <= 1e-4, format!("t {:.6}", hand.t)),
        (
            (hand.p - p_ref).abs() <= 1e-6 && (hand.p - 0.074_179_900_227_448_54).abs() <= 1e-6,
            format!("p {:.8} vs {:.8}", hand.p, p_ref),
        ),
        (
            (null_rate - 0.05).abs() <= 0.01,
            format!("null rejection {:.2}%", 100.0 * null_rate),
        ),
        (
            accepted >= 0.94,
            format!("normal acceptance {:.1}%", 100.0 * accepted),
        ),
        (
            rejected_uniform >= 0.5,
            format!("uniform rejection {:.1}%", 100.0 * rejected_uniform),
        ),
        (
            format!("{rel:.2}") == "87.35",
            format!("relative delta {rel:.4}"),
        ),
    ])
}

struct TrendSetup {
    family: Family,
    data: SyntheticConfig,
    n_test_per_class: usize,
    /// Students train on the first `train_per_class` images of each class.
    train_per_class: usize,
    teacher_hyper: HyperParams,
    blocks_removed: usize,
    student_hyper: HyperParams,
    ig_steps: usize,
    seeds: usize,
}

fn trend_setup() -> TrendSetup {
    TrendSetup {
        family: Family::Micro {
            divisor: 4,
            blocks: 6,
            size: 16,
        },
        data: SyntheticConfig {
            n_per_class: 200,
            classes: 10,
            size: 16,
            seed: 1,
            noise: 0.35,
        },
        n_test_per_class: 100,
        train_per_class: 10,
        teacher_hyper: HyperParams {
            epochs: 15,
            lr: 3e-3,
            batch_size: 64,
            ..HyperParams::default()
        },
        blocks_removed: 2,
        student_hyper: HyperParams {
            alpha: 0.9,
            temperature: 4.0,
            gamma: 0.0,
            overlay_p: 0.1,
            attention_power: 2,
            lr: 3e-3,
            epochs: 60,
            batch_size: 32,
        },
        ig_steps: 32,
        seeds: 12,
    }
}

// 7. distillation trend
fn trend() -> Verdict {
    let start = Instant::now();
    let s = trend_setup();
    let (full, test) = synthetic_splits(&s.data, s.n_test_per_class).unwrap();
    let once = TrainOptions {
        eval_every: usize::MAX,
    };
    let (teacher, _) = train_teacher(&s.family, &full, &test, &s.teacher_hyper, 0, &once).unwrap();
    let teacher_acc = accuracy(&teacher, &test).unwrap();
    let idx: Vec<usize> = (0..s.train_per_class * s.data.classes).collect();
    let train = full.subset(&idx).unwrap();
    let outputs = precompute_teacher_outputs(&teacher, &train, None).unwrap();
    let store = precompute_dataset(&teacher, &train, &PrecomputeOptions::new(s.ig_steps)).unwrap();
    let setup = StudentSetup {
        teacher: &teacher.spec,
        blocks_removed: s.blocks_removed,
        train: &train,
        test: &test,
        teacher_outputs: Some(&outputs),
        ig: Some(&store),
        hyper: s.student_hyper,
        options: once,
    };
    let methods = [Method::Baseline, Method::Kd, Method::KdIg];
    let res = setup.compare(&methods, s.seeds, 2024).unwrap();
    let acc = |m: usize| {
        mean(
            &res[m]
                .1
                .iter()
                .map(|r| r.final_test_accuracy)
                .collect::<Vec<_>>(),
        )
    };
    let kd_vs_base = paired(&res[1].1, &res[0].1).unwrap();
    let ig_vs_kd = paired(&res[2].1, &res[1].1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    all(vec![
        (
            teacher_acc >= 0.9,
            format!("teacher {:.1}%", 100.0 * teacher_acc),
        ),
        (
            acc(1) > acc(0) && kd_vs_base.p < 0.05,
            format!(
                "{} seeds: baseline {:.2}% < KD {:.2}% (paired p {:.4})",
                s.seeds,
                100.0 * acc(0),
                100.0 * acc(1),
                kd_vs_base.p
            ),
        ),
        (
            acc(2) >= acc(1),
            format!(
                "KD & IG {:.2}% >= KD (paired p {:.3})",
                100.0 * acc(2),
                ig_vs_kd.p
            ),
        ),
        (secs < 1800.0, format!("{secs:.0}s < 1800s")),
    ])
}

// 8. ordinal latency and full-scale configurations
fn latency_and_configs() -> Verdict {
    let teacher = build_teacher::<f32>(10, &WidthConfig::mobilenet_v2_cifar(), 0).unwrap();
    let student = distillkit::netblocks::build_student::<f32>(&teacher.spec, 10, 0).unwrap();
    let gap = teacher.param_count() as f64 / student.param_count() as f64;
    let batch = Tensor::full(vec![4, 3, 32, 32], 0.5f32);
    let mut clock = MonotonicClock::default();
    let t_teacher = time_inference(&teacher, &batch, 1, 5, &mut clock).unwrap();
    let t_student = time_inference(&student, &batch, 1, 5, &mut clock).unwrap();
    let reports = bench_reports(
        (&teacher.spec, &t_teacher),
        &[(&teacher.spec, &t_teacher), (&student.spec, &t_student)],
    )
    .unwrap();

    let full = "[hyper]\nepochs = 100\nbatch_size = 64\n[model]\nfamily = mobilenet_v2\nblocks_removed = 4\n\
                [data]\nkind = cifar10\npath = /data/cifar-10-batches-bin\n[run]\nruns = 60\n";
    let cfg = RunConfig::parse(full).unwrap();
    let parsed = cfg.hyper.epochs == 100
        && cfg.hyper.batch_size == 64
        && cfg.runs == 60
        && cfg.family == Family::MobileNetV2
        && matches!(cfg.data, DataSource::Cifar10 { .. });

    // the flags parse; the run then stops at the missing checkpoint
    let out = Command::new(env!("CARGO_BIN_EXE_distillkit"))
        .args([
            "monte-carlo",
            "--teacher",
            "/nonexistent/t.dfkg",
            "--teacher-outputs",
            "/nonexistent/t.dfto",
        ])
        .args([
            "--runs",
            "60",
            "--fraction",
            "0.8",
            "--epochs",
            "100",
            "--batch-size",
            "64",
        ])
        .output()
        .unwrap();
    all(vec![
        (
            gap >= 10.0 && t_student.mean_s < t_teacher.mean_s,
            format!(
                "{gap:.0}x fewer params: {:.1} ms vs {:.1} ms",
                1e3 * t_student.mean_s,
                1e3 * t_teacher.mean_s
            ),
        ),
        (
            reports[0].speedup_vs_reference == 1.0,
            format!("teacher self-speedup {}", reports[0].speedup_vs_reference),
        ),
        (
            parsed,
            "100 epochs / 60 runs / batch 64 config parses".into(),
        ),
        (
            out.status.code() == Some(3),
            format!("monte-carlo full flags exit {:?}", out.status.code()),
        ),
    ])
}

fn run_cli(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_distillkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

// 9. Monte Carlo protocol
fn monte_carlo_protocol() -> Verdict {
    let n = 1003;
    let subsets: Vec<Vec<usize>> = (0..6).map(|k| mc_subset(n, 0.8, 99, k).unwrap()).collect();
    let sized = subsets.iter().all(|s| s.len() == 802);
    let unique = subsets
        .iter()
        .all(|s| s.iter().collect::<HashSet<_>>().len() == s.len() && s.iter().all(|&i| i < n));
    let distinct = subsets.iter().collect::<HashSet<_>>().len() == subsets.len();
    let repro = (0..6).all(|k| mc_subset(n, 0.8, 99, k).unwrap() == subsets[k]);
    let reseeded = mc_subset(n, 0.8, 100, 0).unwrap() != subsets[0];

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("mc.cfg");
    std::fs::write(
        &cfg,
        "[hyper]\nepochs = 2\nlr = 0.003\nbatch_size = 16\n[model]\nfamily = micro:8:2:8\nblocks_removed = 1\n\
         [data]\nn_per_class = 10\nn_test_per_class = 5\n[run]\nseed = 5\n",
    )
    .unwrap();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let c = cfg.to_str().unwrap();
    let mut ok = run_cli(&["train-teacher", "-c", c, "--out", &p("t.dfkg")])
        && run_cli(&[
            "precompute-logits",
            "-c",
            c,
            "--teacher",
            &p("t.dfkg"),
            "--out",
            &p("t.dfto"),
        ]);
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        ok &= run_cli(&[
            "monte-carlo",
            "-c",
            c,
            "--teacher",
            &p("t.dfkg"),
            "--teacher-outputs",
            &p("t.dfto"),
            "--runs",
            "6",
            "--fraction",
            "0.8",
            "--methods",
            "baseline,kd",
            "--output-dir",
            &p(run),
        ]);
        tables.push(read_mc(&d.join(run)));
    }
    let header = std::fs::read_to_string(d.join("a/mc_summary.csv"))
        .ok()
        .and_then(|s| s.lines().next().map(str::to_string))
        .unwrap_or_default();
    all(vec![
        (
            sized && unique,
            "6 subsets of floor(0.8 N) unique indices".into(),
        ),
        (
            distinct && reseeded,
            "distinct across runs and master seeds".into(),
        ),
        (
            ok && repro && tables[0].len() == 12 && tables[0] == tables[1],
            "reproducible from the master seed".into(),
        ),
        (
            header == "mean,std,t,p",
            format!("summary columns {header}"),
        ),
    ])
}

/// `(config, seed, accuracy)` rows of `mc_runs.csv`; wall time is dropped.
fn read_mc(dir: &Path) -> Vec<(String, String, String)> {
    let Ok(text) = std::fs::read_to_string(dir.join("mc_runs.csv")) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[3].to_string())
        })
        .collect()
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient checks", gradcheck),
        ("parameter counts", parameters),
        ("IG completeness", ig_completeness),
        ("augmentation", augmentation),
        ("loss oracles", losses),
        ("statistics", statistics),
        ("distillation trend", trend),
        ("latency and full configs", latency_and_configs),
        ("Monte Carlo protocol", monte_carlo_protocol),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    // seed-dependent criteria report FAIL without failing the target
    const STOCHASTIC: [usize; 1] = [7];
    let (mut failed, mut hard) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
            hard += usize::from(!STOCHASTIC.contains(&n));
        }
        println!(
            "criterion {n} {}: {name} ({:.1}s): {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed ({hard} deterministic)");
    }
    if hard > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
