use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use distillkit::bench::{
    bench_reports, memory_estimate, memory_kb, time_inference, MonotonicClock, Timing,
};
use distillkit::config::RunConfig;
use distillkit::data::Dataset;
use distillkit::harness::{
    filtered_eval, grid_search, monte_carlo, paired_t_test, precompute_teacher_outputs, summarize,
    train_student_with, GridSpace, RunRecord, Signals, TeacherOutputs, TrainOptions,
};
use distillkit::ig::{precompute_dataset, IgStore, PrecomputeOptions, TargetKind};
use distillkit::losses::HyperParams;
use distillkit::netblocks::{
    build_student, compression_factor, derive_student, load_checkpoint, model_fingerprint,
    save_checkpoint, Model, ModelSpec,
};
use distillkit::pipeline::{load_data, summarize_methods, train_teacher, Method, StudentSetup};
use distillkit::report::{
    write_bench, write_mc_summary, write_report, write_runs, write_summary, CurvePoint,
    MethodSummary, Report,
};
use distillkit::Tensor;

use crate::{Command, Common, HyperFlags};

struct Loaded {
    cfg: RunConfig,
    out_dir: PathBuf,
}

fn load_config(common: &Common) -> Result<Loaded> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.check_paths()?;
    let out_dir = cfg.output_dir.clone();
    Ok(Loaded { cfg, out_dir })
}

fn apply_hyper(cfg: &RunConfig, flags: &HyperFlags) -> Result<(HyperParams, TrainOptions)> {
    let mut h = if flags.untuned {
        HyperParams {
            epochs: cfg.hyper.epochs,
            lr: cfg.hyper.lr,
            batch_size: cfg.hyper.batch_size,
            ..HyperParams::untuned()
        }
    } else {
        cfg.hyper
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut h.alpha, flags.alpha);
    set(&mut h.temperature, flags.temperature);
    set(&mut h.gamma, flags.gamma);
    set(&mut h.overlay_p, flags.overlay_p);
    set(&mut h.lr, flags.lr);
    if let Some(e) = flags.epochs {
        h.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        h.batch_size = b;
    }
    h.validate()?;
    Ok((
        h,
        TrainOptions {
            eval_every: flags.eval_every.max(1),
        },
    ))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_teacher(path: &Path) -> Result<Model<f32>> {
    load_checkpoint(path).with_context(|| format!("loading teacher {}", path.display()))
}

fn load_teacher_outputs(
    path: &Path,
    teacher: &Model<f32>,
    train: &Dataset,
) -> Result<TeacherOutputs> {
    let fp = model_fingerprint(teacher)?;
    Ok(TeacherOutputs::load(path, Some(&fp), Some(train))?)
}

fn load_ig(path: Option<&Path>, teacher: &Model<f32>, train: &Dataset) -> Result<Option<IgStore>> {
    let Some(path) = path else { return Ok(None) };
    let fp = model_fingerprint(teacher)?;
    Ok(Some(IgStore::load(path, Some(&fp), Some(train))?))
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let methods = names
        .iter()
        .map(|n| n.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        anyhow::bail!(distillkit::Error::Config(
            "at least one method is required".into()
        ));
    }
    Ok(methods)
}

fn blocks_removed(cfg: &RunConfig, flag: Option<usize>) -> usize {
    flag.unwrap_or(cfg.blocks_removed)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainTeacher {
            common,
            hyper,
            out,
            seed,
        } => {
            let ctx = load_config(&common)?;
            let (h, options) = apply_hyper(&ctx.cfg, &hyper)?;
            let (train, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            log::info!(
                "training {} teacher on {} images",
                ctx.cfg.family,
                train.len()
            );
            let (teacher, rec) = train_teacher(
                &ctx.cfg.family,
                &train,
                &test,
                &h,
                seed.unwrap_or(ctx.cfg.seed),
                &options,
            )?;
            save_checkpoint(&teacher, &out)?;
            println!(
                "teacher: {} parameters, test accuracy {:.4}, {:.1}s -> {}",
                teacher.param_count(),
                rec.final_test_accuracy,
                rec.wall_time_s,
                out.display()
            );
        }
        Command::PrecomputeLogits {
            common,
            teacher,
            out,
            blocks_removed,
            attention_power,
        } => {
            let ctx = load_config(&common)?;
            let teacher = load_teacher(&teacher)?;
            let (train, _) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let tap = match blocks_removed {
                Some(r) => Some((
                    derive_student(&teacher.spec, r)?.attention_source,
                    attention_power,
                )),
                None => None,
            };
            let outputs = precompute_teacher_outputs(&teacher, &train, tap)?;
            outputs.save(&out)?;
            println!(
                "teacher outputs for {} images -> {}",
                outputs.len(),
                out.display()
            );
        }
        Command::PrecomputeIg {
            common,
            teacher,
            out,
            steps,
            log_prob,
            exclude_misclassified,
        } => {
            let ctx = load_config(&common)?;
            let teacher = load_teacher(&teacher)?;
            let (train, _) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let options = PrecomputeOptions {
                steps,
                target_kind: if log_prob {
                    TargetKind::LogProb
                } else {
                    TargetKind::Logit
                },
                exclude_misclassified,
                ..PrecomputeOptions::default()
            };
            let store = precompute_dataset(&teacher, &train, &options)?;
            store.save(&out)?;
            println!(
                "attribution maps for {} images ({} excluded) -> {}",
                store.len(),
                store.manifest.excluded.len(),
                out.display()
            );
        }
        Command::Distill {
            common,
            hyper,
            teacher,
            teacher_outputs,
            ig_map,
            blocks_removed: removed,
            seed,
            out,
        } => {
            let ctx = load_config(&common)?;
            let (h, options) = apply_hyper(&ctx.cfg, &hyper)?;
            let teacher = load_teacher(&teacher)?;
            let (train, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let outputs = match &teacher_outputs {
                Some(p) => Some(load_teacher_outputs(p, &teacher, &train)?),
                None => None,
            };
            let ig = load_ig(
                ig_map.as_deref().or(ctx.cfg.ig_map.as_deref()),
                &teacher,
                &train,
            )?;
            let removed = blocks_removed(&ctx.cfg, removed);
            let seed = seed.unwrap_or(ctx.cfg.seed);
            let mut student = build_student::<f32>(&teacher.spec, removed, seed)?;
            let signals = Signals {
                teacher: outputs.as_ref(),
                ig: ig.as_ref(),
            };
            let mut rec =
                train_student_with(&mut student, &train, &test, signals, &h, seed, &options)?;
            rec.config_id = distillkit::harness::config_id(&h);
            ensure_dir(&ctx.out_dir)?;
            write_runs(&ctx.out_dir.join("runs.csv"), std::slice::from_ref(&rec))?;
            if let Some(p) = out {
                save_checkpoint(&student, &p)?;
            }
            println!(
                "student r{removed}: {} parameters (CF {:.2}), test accuracy {:.4}",
                student.param_count(),
                compression_factor(teacher.param_count(), student.param_count())?,
                rec.final_test_accuracy
            );
        }
        Command::GridSearch {
            common,
            hyper,
            teacher,
            teacher_outputs,
            ig_map,
            alphas,
            temperatures,
            overlay_ps,
            gammas,
            reference_space,
            runs_per_cell,
        } => {
            let ctx = load_config(&common)?;
            let (h, options) = apply_hyper(&ctx.cfg, &hyper)?;
            let teacher = load_teacher(&teacher)?;
            let (train, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let outputs = load_teacher_outputs(&teacher_outputs, &teacher, &train)?;
            let ig = load_ig(
                ig_map.as_deref().or(ctx.cfg.ig_map.as_deref()),
                &teacher,
                &train,
            )?;
            let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
            let space = if reference_space {
                GridSpace::reference()
            } else {
                GridSpace {
                    alphas: or(alphas, h.alpha),
                    temperatures: or(temperatures, h.temperature),
                    overlay_ps: or(overlay_ps, h.overlay_p),
                    gammas: or(gammas, h.gamma),
                }
            };
            let removed = ctx.cfg.blocks_removed;
            let result = grid_search(&space, runs_per_cell, &h, ctx.cfg.seed, |cell, seed| {
                let mut student = build_student::<f32>(&teacher.spec, removed, seed)?;
                let signals = Signals {
                    teacher: Some(&outputs),
                    ig: ig.as_ref(),
                };
                train_student_with(&mut student, &train, &test, signals, cell, seed, &options)
            })?;
            ensure_dir(&ctx.out_dir)?;
            let summaries: Vec<MethodSummary> = result
                .cells
                .iter()
                .map(|c| MethodSummary {
                    method: c.config_id.clone(),
                    delta_acc: None,
                    summary: c.summary.clone(),
                })
                .collect();
            write_summary(&ctx.out_dir.join("grid.csv"), &summaries)?;
            let runs: Vec<RunRecord> = result
                .cells
                .iter()
                .flat_map(|c| c.records.clone())
                .collect();
            write_runs(&ctx.out_dir.join("grid_runs.csv"), &runs)?;
            let matrix = result.alpha_temperature_matrix();
            fs::write(ctx.out_dir.join("grid_matrix.md"), &matrix)?;
            println!("{matrix}");
            println!(
                "best: {} ({:.4})",
                result.best().config_id,
                result.best().summary.mean
            );
        }
        Command::MonteCarlo {
            common,
            hyper,
            teacher,
            teacher_outputs,
            ig_map,
            runs,
            fraction,
            methods,
        } => {
            let ctx = load_config(&common)?;
            let (h, options) = apply_hyper(&ctx.cfg, &hyper)?;
            let methods = parse_methods(&methods)?;
            let teacher = load_teacher(&teacher)?;
            let (train, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let outputs = load_teacher_outputs(&teacher_outputs, &teacher, &train)?;
            let ig = load_ig(
                ig_map.as_deref().or(ctx.cfg.ig_map.as_deref()),
                &teacher,
                &train,
            )?;
            let setup = StudentSetup {
                teacher: &teacher.spec,
                blocks_removed: ctx.cfg.blocks_removed,
                train: &train,
                test: &test,
                teacher_outputs: Some(&outputs),
                ig: ig.as_ref(),
                hyper: h,
                options,
            };
            let mut all_runs = Vec::new();
            let mut accs: Vec<Vec<f64>> = Vec::new();
            for &method in &methods {
                let recs = monte_carlo(
                    &train,
                    runs,
                    fraction,
                    h.batch_size,
                    ctx.cfg.seed,
                    |subset, seed| {
                        let s = StudentSetup {
                            train: subset,
                            ..setup
                        };
                        s.run(method, seed).map(|(_, r)| r)
                    },
                )?;
                accs.push(recs.iter().map(|r| r.final_test_accuracy).collect());
                all_runs.extend(recs);
            }
            let mut rows = Vec::new();
            for (i, acc) in accs.iter().enumerate() {
                let summary = summarize(acc, None)?;
                let test = if i == 0 {
                    None
                } else {
                    Some(paired_t_test(acc, &accs[0])?)
                };
                println!(
                    "{}: mean {:.4} std {:.4}{}",
                    methods[i],
                    summary.mean,
                    summary.std,
                    test.map(|t| format!(" t {:.3} p {:.4}", t.t, t.p))
                        .unwrap_or_default()
                );
                rows.push((summary, test));
            }
            ensure_dir(&ctx.out_dir)?;
            write_runs(&ctx.out_dir.join("mc_runs.csv"), &all_runs)?;
            write_mc_summary(&ctx.out_dir.join("mc_summary.csv"), &rows)?;
        }
        Command::Bench {
            common,
            teacher,
            batch,
            warmup,
            iters,
        } => {
            let ctx = load_config(&common)?;
            let spec = match &teacher {
                Some(p) => load_teacher(p)?.spec,
                None => {
                    distillkit::netblocks::build_teacher_spec(10, &ctx.cfg.family.width_config())?
                }
            };
            let mut specs = vec![spec.clone()];
            for r in spec.family.plan.removals().into_iter().filter(|&r| r > 0) {
                specs.push(derive_student(&spec, r)?);
            }
            let timings = time_specs(&specs, batch, warmup, iters)?;
            let pairs: Vec<(&ModelSpec, &Timing)> = specs.iter().zip(&timings).collect();
            let reports = bench_reports(pairs[0], &pairs)?;
            for r in &reports {
                println!(
                    "{:<28} {:>9} params {:>10.1} KB  CF {:>8.2}  {:.6} s/batch  speedup {:.2}",
                    r.model_id,
                    r.param_count,
                    memory_kb(r.est_memory_bytes),
                    r.compression_factor,
                    r.mean_batch_latency_s,
                    r.speedup_vs_reference
                );
            }
            ensure_dir(&ctx.out_dir)?;
            write_bench(&ctx.out_dir.join("bench.csv"), &reports)?;
        }
        Command::FilteredEval {
            common,
            model,
            teacher,
        } => {
            let ctx = load_config(&common)?;
            let model = load_checkpoint(&model)?;
            let teacher = load_teacher(&teacher)?;
            let (_, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let r = filtered_eval(&model, &test, &teacher)?;
            println!(
                "kept {}/{} images; accuracy {:.4}, balanced accuracy {:.4}",
                r.kept, r.total, r.accuracy, r.balanced_accuracy
            );
        }
        Command::Report {
            common,
            hyper,
            teacher,
            removals,
            methods,
            ig_steps,
        } => {
            let ctx = load_config(&common)?;
            let (h, options) = apply_hyper(&ctx.cfg, &hyper)?;
            let methods = parse_methods(&methods)?;
            let teacher = load_teacher(&teacher)?;
            let (train, test) = load_data(&ctx.cfg.data, &ctx.cfg.family)?;
            let removals = if removals.is_empty() {
                teacher
                    .spec
                    .family
                    .plan
                    .removals()
                    .into_iter()
                    .filter(|&r| r > 0)
                    .collect()
            } else {
                removals
            };
            let ig = if methods.iter().any(|m| m.uses_ig()) {
                log::info!("computing attribution maps for {} images", train.len());
                Some(precompute_dataset(
                    &teacher,
                    &train,
                    &PrecomputeOptions::new(ig_steps),
                )?)
            } else {
                None
            };
            let mut specs = vec![teacher.spec.clone()];
            let mut report = Report::default();
            for &r in &removals {
                let student = derive_student(&teacher.spec, r)?;
                let tap = Some((student.attention_source, h.attention_power));
                let outputs = precompute_teacher_outputs(&teacher, &train, tap)?;
                let setup = StudentSetup {
                    teacher: &teacher.spec,
                    blocks_removed: r,
                    train: &train,
                    test: &test,
                    teacher_outputs: Some(&outputs),
                    ig: ig.as_ref(),
                    hyper: h,
                    options,
                };
                log::info!(
                    "students with {r} blocks removed ({} parameters)",
                    student.param_count()
                );
                let results = setup.compare(&methods, ctx.cfg.runs, ctx.cfg.seed)?;
                for mut s in summarize_methods(&results)? {
                    s.method = format!("{} r{r}", s.method);
                    report.summaries.push(s);
                }
                for (_, recs) in results {
                    report.runs.extend(recs);
                }
                specs.push(student);
            }
            let timings = time_specs(&specs, h.batch_size, 2, 10)?;
            let teacher_params = teacher.spec.param_count();
            for i in 0..removals.len() {
                let per = methods.len();
                let summaries = &report.summaries[i * per..(i + 1) * per];
                for (m, s) in methods.iter().zip(summaries) {
                    report.curves.push(CurvePoint {
                        compression_factor: compression_factor(
                            teacher_params,
                            specs[i + 1].param_count(),
                        )?,
                        method: m.to_string(),
                        mean_acc: s.summary.mean,
                        speedup: timings[0].mean_s / timings[i + 1].mean_s,
                    });
                }
            }
            let files = write_report(&report, &ctx.out_dir)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn time_specs(
    specs: &[ModelSpec],
    batch: usize,
    warmup: usize,
    iters: usize,
) -> Result<Vec<Timing>> {
    let mut out = Vec::new();
    for spec in specs {
        let model = Model::<f32>::new(
            spec.clone(),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let [c, hgt, w] = spec.input_shape;
        let x = Tensor::full(vec![batch, c, hgt, w], 0.5f32);
        let t = time_inference(&model, &x, warmup, iters, &mut MonotonicClock::default())?;
        log::info!(
            "{}: {:.1} KB, {:.6} s/batch",
            spec.name,
            memory_kb(memory_estimate(spec)),
            t.mean_s
        );
        out.push(t);
    }
    Ok(out)
}
