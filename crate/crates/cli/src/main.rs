mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aev_core::data::Split;
use aev_core::explain::{ExplainerConfig, ExplainerKind};
use aev_core::harness::{
    load_checkpoint, replay, run_evaluate, run_explain, run_train, DatasetSource, EvaluateJob,
    ExplainJob, ModelSpec, Precision, RunManifest, RunSpec, TrainJob, CHECKPOINT_FILE, CURVES_FILE,
};
use aev_core::manipulate::Replacement;
use aev_core::nn::{GradientHead, TrainConfig};
use aev_core::schemes::{
    base_train_config, compare_report, curve_report, preset, read_curves_csv, EvalResult, Preset,
    Report, SchemeConfig, TargetRule,
};
use aev_core::theory::{grid, theorem1_sweep, wpc_fuzz, write_sweep_csv};
use aev_core::Scalar;

use crate::config::EvaluateFile;

#[derive(Parser)]
#[command(
    name = "aev",
    version,
    about = "Evaluate feature attributions by retraining and fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write a checkpoint and manifest.
    Train(TrainArgs),
    /// Explain a split with one explainer and write an attribution dump.
    Explain(ExplainArgs),
    /// Run evaluation schemes over a list of explainers.
    Evaluate(EvaluateArgs),
    /// Sweep the residual-information oracle over a parameter grid.
    TheorySweep(SweepArgs),
    /// Fuzz the softmax sign result on random weak positive contributors.
    WpcFuzz(FuzzArgs),
    /// Render comparison tables from evaluation runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Dataset: synthetic:planted (default), synthetic:blobs, synthetic:cancellation or mnist:<dir>.
    #[arg(long)]
    dataset: Option<String>,
    /// Seed for synthetic data generation.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replay this manifest instead of building a new run.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl Common {
    fn dataset_name<'a>(&'a self, fallback: Option<&'a str>) -> &'a str {
        self.dataset
            .as_deref()
            .or(fallback)
            .unwrap_or("synthetic:planted")
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// `mlp:<h1>,<h2>,...` or `cnn:<hidden>`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Logit,
    Probability,
}

#[derive(Args)]
struct ExplainerFlags {
    /// Samples or path steps per explanation.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    explainer_seed: Option<u64>,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
}

impl ExplainerFlags {
    fn apply(&self, mut cfg: ExplainerConfig, file: &EvaluateFile) -> ExplainerConfig {
        if let Some(k) = self.k.or(file.k) {
            cfg = cfg.with_k(k);
        }
        if let Some(s) = self.sigma.or(file.sigma) {
            cfg = cfg.with_sigma(s);
        }
        if let Some(s) = self.explainer_seed.or(file.explainer_seed) {
            cfg = cfg.with_seed(s);
        }
        if let Some(h) = self.head {
            cfg = cfg.with_head(match h {
                HeadArg::Logit => GradientHead::Logit,
                HeadArg::Probability => GradientHead::Probability,
            });
        }
        cfg
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "ig")]
    explainer: String,
    #[command(flatten)]
    flags: ExplainerFlags,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    limit: Option<usize>,
    /// Explain the true label instead of the model's prediction.
    #[arg(long)]
    label_target: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated presets: ROAR, KeAR, KAFT, KAFT-C, RAFT-C-abs, KAFT-C-abs.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated explainers: vg, sg, ig, gxi, eg, sig, random.
    #[arg(long)]
    explainers: Option<String>,
    /// Trained model; a default model is trained into `<out>/base` when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// TOML file with evaluation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Ratio grid as `start:stop:step` or a comma-separated list.
    #[arg(long)]
    ratios: Option<String>,
    /// `zero`, `mean`, `channel-mean` or a number; defaults to the explainer baseline.
    #[arg(long)]
    replacement: Option<String>,
    #[command(flatten)]
    flags: ExplainerFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// `start:stop:step`.
    #[arg(long, default_value = "0.05:0.45:0.05")]
    gamma: String,
    /// `start:stop:step`; ignored with --p-above-gamma.
    #[arg(long, default_value = "0.1:0.9:0.05")]
    p: String,
    /// Use p from gamma+0.05 to 0.9 in steps of 0.05.
    #[arg(long)]
    p_above_gamma: bool,
    #[arg(long, default_value = "0.1:0.9:0.1")]
    alpha: String,
    /// Comma-separated class counts.
    #[arg(long, default_value = "2,5,10")]
    classes: String,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 100_000)]
    instances: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation run directories.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Treat the two directories as keep and remove runs and compare their curves.
    #[arg(long)]
    delta_acc: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
    Json,
}

fn spec_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid `{s}`"))
        })
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a, b, step] => Ok(grid(*a, *b, *step)?),
        _ => bail!("grid `{s}` must be start:stop:step"),
    }
}

fn ratio_list(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        return spec_grid(s);
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad ratio `{p}`"))
        })
        .collect()
}

fn csv_items(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn parse_model(s: &str) -> Result<ModelSpec> {
    match s.split_once(':') {
        Some(("mlp", hidden)) => Ok(ModelSpec::Mlp {
            hidden: hidden
                .split(',')
                .filter(|h| !h.is_empty())
                .map(|h| h.parse().with_context(|| format!("bad layer width `{h}`")))
                .collect::<Result<_>>()?,
        }),
        Some(("cnn", hidden)) => Ok(ModelSpec::SmallCnn {
            hidden: hidden
                .parse()
                .with_context(|| format!("bad width `{hidden}`"))?,
        }),
        _ => bail!("model must be mlp:<widths> or cnn:<width>, got `{s}`"),
    }
}

fn default_model(dataset: &DatasetSource) -> ModelSpec {
    match dataset {
        DatasetSource::Mnist { .. } => ModelSpec::Mlp { hidden: vec![256] },
        DatasetSource::Synthetic { .. } => ModelSpec::Mlp { hidden: vec![64] },
    }
}

fn parse_replacement(s: &str) -> Result<Option<Replacement>> {
    Ok(Some(match s {
        "baseline" => return Ok(None),
        "zero" => Replacement::Constant(0.0),
        "mean" => Replacement::PerFeatureMean,
        "channel-mean" => Replacement::PerChannelMean,
        v => Replacement::Constant(
            v.parse()
                .with_context(|| format!("bad replacement `{v}`"))?,
        ),
    }))
}

fn replay_into(manifest: &Path, out: &Path, expected: &str) -> Result<()> {
    let m = RunManifest::load(manifest)?;
    let command = match m.run {
        RunSpec::Train(_) => "train",
        RunSpec::Explain(_) => "explain",
        RunSpec::Evaluate(_) => "evaluate",
    };
    if command != expected {
        bail!(aev_core::Error::InvalidConfig(format!(
            "manifest is for `{command}`, not `{expected}`"
        )));
    }
    let replayed = replay(manifest, out)?;
    println!(
        "replayed {} outputs into {}; all match",
        replayed.outputs.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let c = &args.common;
    if let Some(m) = &c.manifest {
        return replay_into(m, &c.out, "train");
    }
    let dataset = DatasetSource::parse(c.dataset_name(None), c.data_seed)?;
    let model = match &args.model {
        Some(m) => parse_model(m)?,
        None => default_model(&dataset),
    };
    let mut train = base_train_config();
    train.seed = args.seed;
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    if let Some(lr) = args.lr {
        train.optimizer = aev_core::nn::Optimizer::Sgd { lr, momentum: 0.9 };
    }
    if let Some(b) = args.batch_size {
        train.batch_size = b;
    }
    let job = TrainJob {
        dataset,
        model,
        init_seed: args.init_seed,
        train,
    };
    match Precision::from(c.precision) {
        Precision::F32 => train_typed::<f32>(&job, &c.out),
        Precision::F64 => train_typed::<f64>(&job, &c.out),
    }
}

fn train_typed<T: Scalar>(job: &TrainJob, out: &Path) -> Result<()> {
    let (_, report, _) = run_train::<T>(job, out)?;
    if let Some(last) = report.history.last() {
        println!(
            "trained {} epochs: loss {:.4}, train accuracy {:.4}",
            report.history.len(),
            last.loss,
            last.accuracy
        );
    }
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn explain_cmd(args: &ExplainArgs) -> Result<()> {
    let c = &args.common;
    if let Some(m) = &c.manifest {
        return replay_into(m, &c.out, "explain");
    }
    let checkpoint = args
        .checkpoint
        .as_ref()
        .context("--checkpoint is required")?;
    let kind: ExplainerKind = args.explainer.parse()?;
    let job = ExplainJob {
        dataset: DatasetSource::parse(c.dataset_name(None), c.data_seed)?,
        explainer: args
            .flags
            .apply(ExplainerConfig::new(kind), &EvaluateFile::default()),
        split: match args.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
        limit: args.limit,
        target: if args.label_target {
            TargetRule::Label
        } else {
            TargetRule::Predicted
        },
    };
    match Precision::from(c.precision) {
        Precision::F32 => explain_typed::<f32>(&job, checkpoint, &c.out),
        Precision::F64 => explain_typed::<f64>(&job, checkpoint, &c.out),
    }
}

fn explain_typed<T: Scalar>(job: &ExplainJob, checkpoint: &Path, out: &Path) -> Result<()> {
    let hash = job.dataset.load::<T>()?.content_hash();
    let net = load_checkpoint::<T>(checkpoint, &hash)?;
    let m = run_explain(job, &net, out)?;
    println!("wrote {} outputs to {}", m.outputs.len(), out.display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let c = &args.common;
    if let Some(m) = &c.manifest {
        return replay_into(m, &c.out, "evaluate");
    }
    let file = match &args.config {
        Some(p) => EvaluateFile::load(p)?,
        None => EvaluateFile::default(),
    };
    let dataset = DatasetSource::parse(c.dataset_name(file.dataset.as_deref()), c.data_seed)?;

    let preset_names = match &args.preset {
        Some(p) => csv_items(p),
        None => file.presets.clone(),
    };
    let mut schemes: Vec<SchemeConfig> = preset_names
        .iter()
        .map(|n| n.parse::<Preset>().map(preset))
        .collect::<aev_core::Result<_>>()?;
    schemes.extend(file.schemes.iter().cloned());
    if schemes.is_empty() {
        bail!(aev_core::Error::InvalidConfig(
            "no schemes: pass --preset or a config file".into()
        ));
    }
    let ratios = match (&args.ratios, &file.ratios) {
        (Some(r), _) => Some(ratio_list(r)?),
        (None, r) => r.clone(),
    };
    let replacement = match args.replacement.as_ref().or(file.replacement.as_ref()) {
        Some(r) => Some(parse_replacement(r)?),
        None => None,
    };
    for s in &mut schemes {
        if let Some(seed) = args.seed.or(file.seed) {
            s.seed = seed;
        }
        if let Some(r) = args.repetitions.or(file.repetitions) {
            s.repetitions = r;
        }
        if let Some(r) = &ratios {
            s.ratios = r.clone();
        }
        if let Some(r) = replacement {
            s.replacement = r;
        }
    }

    let explainer_names = match &args.explainers {
        Some(e) => csv_items(e),
        None if !file.explainers.is_empty() => file.explainers.clone(),
        None => vec!["ig".into()],
    };
    let explainers = explainer_names
        .iter()
        .map(|n| Ok(args.flags.apply(ExplainerConfig::new(n.parse()?), &file)))
        .collect::<Result<Vec<_>>>()?;

    let job = EvaluateJob {
        dataset,
        explainers,
        schemes,
    };
    let checkpoint = args.checkpoint.clone().or(file.checkpoint.clone());
    match Precision::from(c.precision) {
        Precision::F32 => evaluate_typed::<f32>(&job, checkpoint.as_deref(), &c.out),
        Precision::F64 => evaluate_typed::<f64>(&job, checkpoint.as_deref(), &c.out),
    }
}

fn evaluate_typed<T: Scalar>(
    job: &EvaluateJob,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let net = match checkpoint {
        Some(p) => {
            let hash = job.dataset.load::<T>()?.content_hash();
            load_checkpoint::<T>(p, &hash)?
        }
        None => {
            let train = TrainJob {
                dataset: job.dataset.clone(),
                model: default_model(&job.dataset),
                init_seed: 0,
                train: TrainConfig {
                    seed: 0,
                    ..base_train_config()
                },
            };
            let base = out.join("base");
            let (net, _, _) = run_train::<T>(&train, &base)?;
            println!("trained base model into {}", base.display());
            net
        }
    };
    let (results, manifest) = run_evaluate(job, &net, out)?;
    let report = compare_report(&results)?;
    print!("{}", report.to_markdown());
    println!(
        "wrote {} outputs to {}",
        manifest.outputs.len(),
        out.display()
    );
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let gammas = spec_grid(&args.gamma)?;
    let alphas = spec_grid(&args.alpha)?;
    let classes: Vec<usize> = csv_items(&args.classes)
        .iter()
        .map(|c| c.parse().with_context(|| format!("bad class count `{c}`")))
        .collect::<Result<_>>()?;
    let ps = if args.p_above_gamma {
        let lo = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
        grid(lo + 0.05, 0.9, 0.05)?
    } else {
        spec_grid(&args.p)?
    };
    let rows = theorem1_sweep(&gammas, &ps, &alphas, &classes);
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    match &args.out {
        Some(p) => fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    let failing = rows.iter().filter(|r| !r.report.holds).count();
    eprintln!("{} grid points, {} where I_tilde <= I", rows.len(), failing);
    Ok(())
}

fn fuzz_cmd(args: &FuzzArgs) -> Result<()> {
    let report = wpc_fuzz(args.instances, args.seed);
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &args.out {
        fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{json}");
    if report.violations > 0 {
        bail!(
            "{} of {} instances violate the sign result",
            report.violations,
            report.instances
        );
    }
    Ok(())
}

fn load_run_results(dir: &Path) -> Result<Vec<EvalResult>> {
    let runs = dir.join("runs");
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs)
        .with_context(|| format!("reading {}", runs.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(EvalResult::load(p)?)).collect()
}

fn render(report: &Report, format: FormatArg) -> Result<String> {
    Ok(match format {
        FormatArg::Csv => report.to_csv(),
        FormatArg::Markdown => report.to_markdown(),
        FormatArg::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let report = if args.delta_acc {
        let [keep, remove] = args.dirs.as_slice() else {
            bail!(aev_core::Error::InvalidConfig(
                "--delta-acc takes exactly two directories: keep and remove".into()
            ));
        };
        let read = |d: &Path| -> Result<_> {
            let p = d.join(CURVES_FILE);
            let text =
                fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(read_curves_csv(&p, &text)?)
        };
        curve_report(&read(keep)?, &read(remove)?)?
    } else {
        let mut results = Vec::new();
        for d in &args.dirs {
            results.extend(load_run_results(d)?);
        }
        compare_report(&results)?
    };
    let text = render(&report, args.format)?;
    match &args.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<aev_core::Error>())
        .map_or(1, |e| e.category().exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TheorySweep(a) => sweep_cmd(a),
        Command::WpcFuzz(a) => fuzz_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
