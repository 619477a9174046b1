//! `hyperweather` command-line tool: dataset synthesis, the three training
//! phases, the inference modes, evaluation and compute accounting.
//!
//! Exit status is 0 on success, 1 for user errors (bad arguments, missing
//! or malformed files, invalid configuration) and 2 for internal failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hyperweather::checkpoint::load_model;
use hyperweather::compute::count_compute;
use hyperweather::config::{KeyValues, ModelConfig};
use hyperweather::dataset::{make_dataset, Dataset, DatasetConfig, Split};
use hyperweather::eval::{evaluate, evaluate_degraded, run_ablation};
use hyperweather::feature::{embeddings_csv, ClassAverageBank};
use hyperweather::inference::{
    command_expert, infer_cascade, infer_fixed, infer_full, route_expert, scores_csv, weather_scores, ExpertRegistry,
    LaterStages,
};
use hyperweather::metrics::clamp_unit;
use hyperweather::model::Model;
use hyperweather::synth::{read_ppm, write_ppm, WeatherClass};
use hyperweather::tensor::Tensor;
use hyperweather::train::{Phase, TrainConfig, Trainer};
use hyperweather::Error;

#[derive(Parser)]
#[command(name = "hyperweather", version, about = "Weather-adaptive image restoration")]
struct Cli {
    /// `key = value` configuration file with `data.*`, `model.*` and `train.*` keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the dataset, model and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; reports go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset container.
    Synth {
        /// Write this many two-class (streak + flake) test samples instead.
        #[arg(long)]
        hybrids: Option<usize>,
    },
    /// Phase 1: contrastive pretraining of the feature network.
    PretrainFeat(TrainArgs),
    /// Phase 2: restoration training with the feature network frozen.
    Train(TrainArgs),
    /// Phase 3: joint fine-tuning at the reduced learning rate.
    Finetune(TrainArgs),
    /// Restore one PPM image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        /// Weather class whose stored average is used in fixed mode.
        #[arg(long)]
        class: Option<String>,
        /// Comma-separated classes, one per cascade stage.
        #[arg(long, value_delimiter = ',')]
        order: Vec<String>,
        /// Vector source for cascade stages after the first.
        #[arg(long, value_enum, default_value_t = Later::Recompute)]
        later: Later,
    },
    /// Weather scores of PPM images as CSV.
    Identify {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Identify the weather of a PPM image and restore it with that class's expert.
    Route {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// `class=program` external experts, called as `program <in.ppm> <out.ppm>`;
        /// classes without one use the model with their stored vector.
        #[arg(long)]
        expert: Vec<String>,
    },
    /// Per-class PSNR/SSIM on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "degraded_only")]
        model: Option<PathBuf>,
        /// Score the degraded inputs against the clean images.
        #[arg(long)]
        degraded_only: bool,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
    },
    /// Train and evaluate every adaptivity ablation row.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Weather vectors of every sample as CSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Analytic parameter and MAC counts for the configured model.
    Count {
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training state to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many steps; the saved state can be resumed later.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Also write the per-step log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Fixed,
    Cascade,
}

#[derive(Clone, Copy, ValueEnum)]
enum Later {
    Recompute,
    Average,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Contract(_)
            | Error::AbsentClass(_)
            | Error::Routing(_)
            | Error::Format { .. }
            | Error::Io { .. } => Failure::User(e.to_string()),
            Error::Tensor(_) | Error::DegenerateEmbedding(_) | Error::NonFiniteLoss { .. } => {
                Failure::Internal(e.to_string())
            }
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn user(msg: impl Into<String>) -> Failure {
    Failure::User(msg.into())
}

struct Settings {
    data: DatasetConfig,
    model: ModelConfig,
    train: TrainConfig,
}

fn settings(cli: &Cli) -> CliResult<Settings> {
    let kv = match &cli.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::default(),
    };
    for key in kv.keys() {
        if !["data.", "model.", "train."].iter().any(|p| key.starts_with(p)) {
            return Err(user(format!("unknown key {key}")));
        }
    }
    let mut s = Settings {
        data: DatasetConfig::default().apply(&kv)?,
        model: ModelConfig::default().apply(&kv)?,
        train: TrainConfig::default().apply(&kv)?,
    };
    if let Some(seed) = cli.seed {
        s.data.seed = seed;
        s.model.seed = seed;
        s.train.seed = seed;
    }
    Ok(s)
}

fn parse_class(name: &str) -> CliResult<WeatherClass> {
    Ok(WeatherClass::parse(name.trim())?)
}

fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out.as_deref().ok_or_else(|| user("this command needs --out <path>"))
}

/// Write `text` to `--out`, or print it.
fn emit(cli: &Cli, text: &str) -> CliResult<()> {
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| user(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> CliResult<(Model<f32>, ClassAverageBank<f32>)> {
    Ok(load_model(path)?)
}

fn run_training(cli: &Cli, args: &TrainArgs, phase: Phase) -> CliResult<()> {
    let out = require_out(cli)?;
    let s = settings(cli)?;
    let data = Dataset::load(&args.data)?;
    let mut trainer = match &args.resume {
        Some(path) => Trainer::load(path)?,
        None if phase == Phase::Pretrain => Trainer::new(Model::new(&s.model)?, s.train)?,
        None => return Err(user("continue from a pretrained state with --resume <state>")),
    };
    if trainer.phase != phase {
        return Err(user(format!(
            "the state is at phase {}, this command runs phase {}",
            trainer.phase.number(),
            phase.number()
        )));
    }
    let done = trainer.run_phase(&data, phase, args.max_steps)?;
    trainer.save(out)?;
    if let Some(log) = &args.log {
        fs::write(log, trainer.log_csv()).map_err(|e| user(format!("cannot write {}: {e}", log.display())))?;
    }
    let last = trainer.log.last();
    println!(
        "phase {} {} at step {}; last loss {}; last val psnr {}",
        phase.number(),
        if done { "finished" } else { "paused" },
        if done { trainer.config.phase_steps(phase) } else { trainer.step },
        last.map(|r| r.loss.to_string()).unwrap_or_else(|| "-".into()),
        trainer
            .log
            .iter()
            .rev()
            .find_map(|r| r.val_psnr)
            .map(|p| format!("{p:.3} dB"))
            .unwrap_or_else(|| "-".into()),
    );
    Ok(())
}

fn restore_with(
    model: &Model<f32>,
    bank: &ClassAverageBank<f32>,
    image: &Tensor<f32>,
    mode: Mode,
    class: Option<WeatherClass>,
    order: &[WeatherClass],
    later: LaterStages,
) -> CliResult<Tensor<f32>> {
    Ok(match mode {
        Mode::Full => infer_full(model, image)?,
        Mode::Fixed => {
            let class = class.ok_or_else(|| user("fixed mode needs --class"))?;
            infer_fixed(model, image, class, bank)?
        }
        Mode::Cascade => {
            if order.is_empty() {
                return Err(user("cascade mode needs --order, e.g. streak,flake"));
            }
            infer_cascade(model, image, order, bank, later)?
        }
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { hybrids } => {
            let out = require_out(cli)?;
            let s = settings(cli)?;
            let data = match hybrids {
                Some(n) => {
                    let d = Dataset::hybrid(*n, s.data.height, s.data.width, s.data.seed)?;
                    d.save(out)?;
                    d
                }
                None => make_dataset(&s.data, out)?,
            };
            println!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::PretrainFeat(args) => run_training(cli, args, Phase::Pretrain)?,
        Command::Train(args) => run_training(cli, args, Phase::Restore)?,
        Command::Finetune(args) => run_training(cli, args, Phase::Finetune)?,
        Command::Infer {
            model,
            input,
            mode,
            class,
            order,
            later,
        } => {
            let out = require_out(cli)?;
            let (model, bank) = load(model)?;
            let image = read_ppm(input)?;
            let class = class.as_deref().map(parse_class).transpose()?;
            let order = order.iter().map(|c| parse_class(c)).collect::<CliResult<Vec<_>>>()?;
            let later = match later {
                Later::Recompute => LaterStages::Recompute,
                Later::Average => LaterStages::ClassAverage,
            };
            let y = restore_with(&model, &bank, &image, *mode, class, &order, later)?;
            write_ppm(out, &clamp_unit(&y))?;
        }
        Command::Identify { model, inputs } => {
            let (model, bank) = load(model)?;
            let mut rows = Vec::with_capacity(inputs.len());
            for path in inputs {
                let scores = weather_scores(&model, &read_ppm(path)?, &bank)?;
                rows.push((path.display().to_string(), scores));
            }
            emit(cli, &scores_csv(&rows))?;
        }
        Command::Route { model, input, expert } => {
            let out = require_out(cli)?;
            let (model, bank) = load(model)?;
            let mut registry = ExpertRegistry::from_model(&model, &bank);
            let workdir = std::env::temp_dir();
            for spec in expert {
                let (class, program) = spec
                    .split_once('=')
                    .ok_or_else(|| user(format!("expert {spec:?} is not class=program")))?;
                registry.register(parse_class(class)?, command_expert(program, Vec::new(), workdir.clone()));
            }
            let routed = route_expert(&model, &read_ppm(input)?, &registry, &bank)?;
            write_ppm(out, &clamp_unit(&routed.output))?;
            println!("routed to {}", routed.class.name());
        }
        Command::Eval {
            data,
            model,
            degraded_only,
            split,
            mode,
        } => {
            let data = Dataset::load(data)?;
            let split = Split::from(*split);
            let report = if *degraded_only {
                evaluate_degraded(&data, split)?
            } else {
                let path = model.as_deref().ok_or_else(|| user("eval needs --model"))?;
                let (model, bank) = load(path)?;
                let mut report = evaluate(&data, split, |s| {
                    let label = s.label()?;
                    let y = match mode {
                        Mode::Full => infer_full(&model, &s.degraded)?,
                        Mode::Fixed => infer_fixed(&model, &s.degraded, label, &bank)?,
                        Mode::Cascade => infer_cascade(&model, &s.degraded, &[label], &bank, LaterStages::Recompute)?,
                    };
                    Ok(y)
                })?;
                let (h, w) = (data.samples[0].clean.shape()[1], data.samples[0].clean.shape()[2]);
                report.compute = Some(count_compute(&model.config, h, w)?);
                report
            };
            emit(cli, &report.to_csv())?;
        }
        Command::Ablate { data, seeds } => {
            let s = settings(cli)?;
            let data = Dataset::load(data)?;
            let report = run_ablation(&data, &s.model, &s.train, seeds)?;
            emit(cli, &report.to_csv())?;
        }
        Command::ExportEmbeddings { model, data } => {
            let (model, _) = load(model)?;
            let data = Dataset::load(data)?;
            let mut vectors = Vec::with_capacity(data.len());
            for s in &data.samples {
                let label = s.classes.classes().iter().map(|c| c.name()).collect::<Vec<_>>().join("+");
                vectors.push((model.extract_features(&s.degraded)?.values, label, s.split.name()));
            }
            let rows: Vec<(&Tensor<f32>, &str, &str)> =
                vectors.iter().map(|(v, l, s)| (v, l.as_str(), *s)).collect();
            emit(cli, &embeddings_csv(&rows)?)?;
        }
        Command::Count { height, width } => {
            let s = settings(cli)?;
            let c = count_compute(&s.model, *height, *width)?;
            let text = format!(
                "backbone_params,{}\ngenerator_params,{}\nfeature_params,{}\ntotal_params,{}\n\
                 generated_values,{}\nbackbone_macs,{}\ngenerator_macs,{}\nfeature_macs,{}\ntotal_macs,{}\n",
                c.backbone_params,
                c.generator_params,
                c.feature_params,
                c.total_params(),
                c.generated_values,
                c.backbone_macs,
                c.generator_macs,
                c.feature_macs,
                c.total_macs()
            );
            emit(cli, &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if informational { 0 } else { 1 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
