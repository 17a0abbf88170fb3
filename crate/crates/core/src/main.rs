use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cli;

#[derive(Parser, Debug)]
#[command(
    name = "distillkit",
    version,
    about = "Teacher/student distillation experiments",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `[run] output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Flags that override the `[hyper]` section.
#[derive(Args, Debug, Clone, Default)]
struct HyperFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    overlay_p: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Start from the untuned defaults (α 0.5, T 2, γ 0.5, p 0.5) instead of the
    /// tuned ones.
    #[arg(long)]
    untuned: bool,
    /// Evaluate on the test split every N epochs (the last epoch always is).
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a full-depth teacher with cross-entropy and save a checkpoint.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Store teacher logits (and attention maps for a student depth) for the training split.
    PrecomputeLogits {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tap the attention source of this student; omit for logits only.
        #[arg(long)]
        blocks_removed: Option<usize>,
        #[arg(long, default_value_t = 2)]
        attention_power: u32,
    },
    /// Store aggregated integrated-gradients maps for the training split.
    PrecomputeIg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = distillkit::ig::DEFAULT_STEPS)]
        steps: usize,
        /// Attribute the log-probability instead of the raw logit.
        #[arg(long)]
        log_prob: bool,
        /// Zero the maps of images the teacher misclassifies.
        #[arg(long)]
        exclude_misclassified: bool,
    },
    /// Train one student.
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long)]
        teacher: PathBuf,
        /// Precomputed teacher outputs; without them the student trains on labels only.
        #[arg(long)]
        teacher_outputs: Option<PathBuf>,
        /// Attribution store; overrides `[run] ig_map`.
        #[arg(long)]
        ig_map: Option<PathBuf>,
        #[arg(long)]
        blocks_removed: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Save the trained student here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-product search over α, T, p and γ.
    GridSearch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        teacher_outputs: PathBuf,
        #[arg(long)]
        ig_map: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        temperatures: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        overlay_ps: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// Search the full reference grid instead of the listed values.
        #[arg(long)]
        reference_space: bool,
        #[arg(long, default_value_t = 1)]
        runs_per_cell: usize,
    },
    /// Repeated training on random subsets of the training split.
    MonteCarlo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        teacher_outputs: PathBuf,
        #[arg(long)]
        ig_map: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        runs: usize,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        /// Methods to run; the first is the reference for the paired tests.
        #[arg(long, value_delimiter = ',', default_value = "baseline,kd,kd&ig")]
        methods: Vec<String>,
    },
    /// Parameter, memory and latency of the teacher and every student depth.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Benchmark this checkpoint's architecture; otherwise the configured family.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = distillkit::bench::DEFAULT_BATCH)]
        batch: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Accuracy on the test images the teacher classifies correctly.
    FilteredEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Accuracy-vs-compression sweep: runs.csv, summary.csv and curves.tsv.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long)]
        teacher: PathBuf,
        /// Student depths to sweep; defaults to every depth of the family.
        #[arg(long, value_delimiter = ',')]
        removals: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "baseline,kd,kd&ig")]
        methods: Vec<String>,
        #[arg(long, default_value_t = distillkit::ig::DEFAULT_STEPS)]
        ig_steps: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<distillkit::Error>() {
            return match e {
                e if e.is_config_error() => 2,
                distillkit::Error::Data(_)
                | distillkit::Error::Format { .. }
                | distillkit::Error::Provenance { .. }
                | distillkit::Error::Io(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
