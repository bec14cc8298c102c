use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dgnc_core::checkpoint;
use dgnc_core::data::{load_dataset, synth_generate, write_dataset, MANIFEST_FILE};
use dgnc_core::gradcheck::DEFAULT_TOLERANCE;
use dgnc_core::report::RunReport;
use dgnc_core::verify::{run_suite, tiny_config, SuiteOptions};
use dgnc_core::{
    evaluate, train, Error, LabeledDataset, ModelConfig, OpKind, Split, SynthSpec, TrainConfig,
};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dgnc",
    version,
    about = "Dynamic-graph classifier for region-by-time signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted coupling.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and run report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Check tape gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the effective configuration: defaults merged with an optional file.
    Config(ConfigArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    regions: usize,
    #[arg(long, default_value_t = 100)]
    timepoints: usize,
    #[arg(long, default_value_t = 2.0)]
    coupling: f64,
    /// Window length defining the even/odd windows of the coupling.
    #[arg(long, default_value_t = 20)]
    window_size: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Manifest path, relative to the dataset directory unless absolute.
    #[arg(long, default_value = MANIFEST_FILE)]
    manifest: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// key=value config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Run report output path.
    #[arg(long)]
    report: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Record elapsed seconds in the report (makes reports differ between runs).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Optional config that must match the checkpoint architecture.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model config; the built-in tiny config when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    regions: usize,
    #[arg(long, default_value_t = 3)]
    windows: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = dgnc_core::gradcheck::DEFAULT_STEP)]
    step: f64,
    #[arg(long, hide = true, value_parser = parse_op)]
    inject_fault: Option<OpKind>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    OpKind::from_name(s).ok_or_else(|| format!("unknown op {s:?}"))
}

fn read_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    TrainConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
}

fn read_data(args: &DataArgs) -> anyhow::Result<LabeledDataset> {
    let ds = load_dataset(&args.data, &args.manifest)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    if ds.is_empty() {
        return Err(anyhow!("dataset {} has no subjects", args.data.display()));
    }
    Ok(ds)
}

fn synth(args: SynthArgs) -> anyhow::Result<u8> {
    let spec = SynthSpec {
        subjects: args.subjects,
        regions: args.regions,
        timepoints: args.timepoints,
        coupling: args.coupling,
        window_size: args.window_size,
        test_fraction: args.test_fraction,
        seed: args.seed,
    };
    let ds = synth_generate(&spec)?;
    let mut comments = vec![
        "dgnc synthetic dataset".to_string(),
        format!(
            "subjects={} regions={} timepoints={} coupling={:?} window_size={} test_fraction={:?} seed={}",
            spec.subjects, spec.regions, spec.timepoints, spec.coupling, spec.window_size, spec.test_fraction, spec.seed
        ),
    ];
    if spec.coupling == 0.0 {
        comments.push("degenerate mode: coupling=0, classes are identical in distribution".into());
    }
    write_dataset(&args.out, &ds, &comments)
        .with_context(|| format!("writing dataset to {}", args.out.display()))?;
    println!("subjects={}", ds.len());
    println!("regions={}", spec.regions);
    println!("timepoints={}", spec.timepoints);
    println!("out={}", args.out.display());
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<u8> {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let ds = read_data(&args.data)?;
    let start = Instant::now();
    let outcome = train(&ds, &cfg)?;
    checkpoint::save(&args.out, &outcome.model, &outcome.store)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;

    let mut metrics = Vec::new();
    for split in [Split::Train, Split::Test] {
        if !ds.indices(split).is_empty() {
            metrics.push((split, evaluate(&outcome.model, &outcome.store, &ds, split)?));
        }
    }
    let report = RunReport {
        seed: cfg.seed,
        config: cfg.to_pairs(),
        metrics,
        history: outcome.history,
        wall_clock_seconds: args.wall_clock.then(|| start.elapsed().as_secs_f64()),
    };
    fs::write(&args.report, report.to_text())
        .with_context(|| format!("writing report {}", args.report.display()))?;
    if let Some(last) = report.history.last() {
        println!("epochs={}", last.epoch);
        println!("final_train_loss={:?}", last.train_loss);
    }
    for (split, m) in &report.metrics {
        println!("{}.accuracy={:?}", split.as_str(), m.accuracy);
    }
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<u8> {
    let (model, store) = checkpoint::load(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    if let Some(p) = &args.config {
        let cfg = read_config(p)?;
        if cfg.model != model.config {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture differs from config {}",
                p.display()
            ))
            .into());
        }
    }
    let ds = read_data(&args.data)?;
    let v = ds.regions().unwrap_or(0);
    if v != model.regions {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {} regions but the dataset has {v}",
            model.regions
        ))
        .into());
    }
    let m = evaluate(&model, &store, &ds, args.split)?;
    println!("accuracy={:?}", m.accuracy);
    println!("auc={:?}", m.auc);
    println!("recall={:?}", m.recall);
    println!("precision={:?}", m.precision);
    if m.auc_undefined {
        println!("auc_undefined=true");
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<u8> {
    let cfg: ModelConfig = match &args.config {
        Some(p) => read_config(p)?.model,
        None => tiny_config(),
    };
    let opts = SuiteOptions {
        regions: args.regions,
        windows: args.windows,
        step: args.step,
        seed: args.seed,
        fault: args.inject_fault,
    };
    let start = Instant::now();
    let checks = run_suite(&cfg, &opts)?;
    let mut failed = false;
    for c in &checks {
        let worst = c.report.worst();
        println!(
            "{} max_rel_error={:e} worst={} skipped={}",
            c.module,
            c.report.max_rel_error(),
            worst.map_or("-", |w| w.name.as_str()),
            c.report.skipped()
        );
        for f in c.report.failures(DEFAULT_TOLERANCE) {
            failed = true;
            println!(
                "FAIL module={} param={} max_rel_error={:e}",
                c.module, f.name, f.max_rel_error
            );
        }
    }
    log::info!(
        "gradient check finished in {:.2}s",
        start.elapsed().as_secs_f64()
    );
    if failed {
        if let Some(op) = args.inject_fault {
            println!("injected_fault={op}");
        }
        println!("status=fail");
        return Ok(EXIT_VERIFY);
    }
    println!("status=ok");
    Ok(0)
}

fn cmd_config(args: ConfigArgs) -> anyhow::Result<u8> {
    let cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    print!("{}", cfg.to_text());
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence(_)) => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Config(a) => cmd_config(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
