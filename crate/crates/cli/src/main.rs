use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spider_core::benchmark::{run_experiment, BenchmarkData};
use spider_core::checkpoint::{load_checkpoint, save_checkpoint};
use spider_core::config::ExperimentConfig;
use spider_core::importance::{
    generalization_importance, pid, pid_per_tensor, specialization_importance, GradAccumulator,
    DEFAULT_BETA,
};
use spider_core::masking::{binary_mask, dare_mask_and_rescale, merge, rescale_mask, weighted_mask};
use spider_core::report::{aggregate, grid, read_rows, rows_of, write_rows, MetricRow};
use spider_core::trainer::{finetune, Method, ToyModel};
use spider_core::{NormScope, TensorMap};

/// Importance-masked fine-tuning on a synthetic benchmark, plus offline
/// masking and merging of saved checkpoints.
#[derive(Parser)]
#[command(name = "spider", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a model on the source suite.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a pretrained model on the target task.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        pretrained: PathBuf,
        /// Defaults to the config's method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also save the final gradient-magnitude accumulator.
        #[arg(long)]
        grads_out: Option<PathBuf>,
    },
    /// Mask and merge saved checkpoints.
    Merge {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        finetuned: PathBuf,
        /// Accumulated gradient magnitudes; its tensors select what gets merged.
        #[arg(long)]
        grads: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Scope::PerTensor)]
        scope: Scope,
        /// Drop probability for `dare`.
        #[arg(long, default_value_t = 0.5)]
        drop_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a model on every source task and the target.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Method label for the output rows.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write metric rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter importance difference of a gradient dump.
    Pid {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        grads: PathBuf,
        #[arg(long)]
        per_tensor: bool,
    },
    /// Aggregate metric CSVs from a directory into one table.
    Report {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every method over every seed and report.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated methods; defaults to all.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Comma-separated seeds; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Binary,
    Weighted,
    Rescaled,
    Dare,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    PerTensor,
    Global,
}

impl From<Scope> for NormScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::PerTensor => NormScope::PerTensor,
            Scope::Global => NormScope::Global,
        }
    }
}

/// Bad command-line usage discovered after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<Usage>().is_some() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain { run, out } => cmd_pretrain(&run, &out),
        Command::Finetune {
            run,
            pretrained,
            method,
            out,
            log,
            grads_out,
        } => cmd_finetune(&run, &pretrained, method, &out, log.as_deref(), grads_out.as_deref()),
        Command::Merge {
            pretrained,
            finetuned,
            grads,
            strategy,
            out,
            scope,
            drop_p,
            seed,
        } => cmd_merge(&pretrained, &finetuned, grads.as_deref(), strategy, &out, scope.into(), drop_p, seed),
        Command::Eval {
            model,
            config,
            method,
            seed,
            out,
        } => cmd_eval(&model, config.as_deref(), method, seed, out.as_deref()),
        Command::Pid {
            pretrained,
            grads,
            per_tensor,
        } => cmd_pid(&pretrained, &grads, per_tensor),
        Command::Report { logs, out } => cmd_report(&logs, &out),
        Command::Experiment {
            config,
            methods,
            seeds,
            out,
        } => cmd_experiment(config.as_deref(), methods, seeds, &out),
        Command::DefaultConfig => {
            println!("{}", ExperimentConfig::default().to_json());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn resolve_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0)
}

fn load(path: &Path) -> Result<TensorMap> {
    load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn save(path: &Path, map: &TensorMap) -> Result<()> {
    save_checkpoint(path, map).with_context(|| format!("writing checkpoint {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn generate(cfg: &ExperimentConfig) -> Result<BenchmarkData> {
    Ok(cfg.benchmark().generate()?)
}

fn cmd_pretrain(run: &RunArgs, out: &Path) -> Result<()> {
    let cfg = load_config(run.config.as_deref())?;
    let seed = resolve_seed(&cfg, run.seed);
    let bench = cfg.benchmark();
    let data = bench.generate()?;
    let base = bench.pretrain(&data, seed)?;
    let report = bench.score(&base.model, &data, Method::ZeroShot, seed, None)?;
    log::info!("pretrained: source average {:.4}", report.source_avg);
    save(out, &base.model.tensors())
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<ToyModel> {
    let mut model = ToyModel::from_tensor_map(&load(path)?)
        .with_context(|| format!("{} is not a model checkpoint", path.display()))?;
    model.set_trainable_last(cfg.trainable_layers)?;
    Ok(model)
}

fn cmd_finetune(
    run: &RunArgs,
    pretrained: &Path,
    method: Option<Method>,
    out: &Path,
    log_path: Option<&Path>,
    grads_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(run.config.as_deref())?;
    let seed = resolve_seed(&cfg, run.seed);
    let model = load_model(pretrained, &cfg)?;
    let snapshot = model.trainables();
    let data = generate(&cfg)?;
    let mut train_cfg = cfg.train_config(seed);
    if let Some(m) = method {
        train_cfg.method = m;
    }
    let (tuned, log) = finetune(model, &snapshot, &data.target.train, &train_cfg)?;
    save(out, &tuned.tensors())?;
    if let Some(p) = log_path {
        log.write_csv(create(p)?)?;
    }
    if let Some(p) = grads_out {
        match &log.accumulator {
            Some(acc) => save(p, acc)?,
            None => bail!("method `{}` ran no gradient steps; nothing to save", train_cfg.method),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_merge(
    pretrained: &Path,
    finetuned: &Path,
    grads: Option<&Path>,
    strategy: Strategy,
    out: &Path,
    scope: NormScope,
    drop_p: f64,
    seed: u64,
) -> Result<()> {
    if !(0.0..1.0).contains(&drop_p) {
        return Err(usage(format!("--drop-p must lie in [0, 1), got {drop_p}")));
    }
    if grads.is_none() && !matches!(strategy, Strategy::Dare) {
        return Err(usage("--grads is required for the binary, weighted and rescaled strategies"));
    }
    let pre = load(pretrained)?;
    let ft = load(finetuned)?;
    pre.ensure_aligned(&ft)
        .context("pretrained and fine-tuned checkpoints differ in layout")?;
    let acc = grads.map(load).transpose()?;
    let names: Vec<String> = match &acc {
        Some(a) => a.names().map(str::to_owned).collect(),
        None => pre.names().map(str::to_owned).collect(),
    };
    let p_sub = pre.select(names.iter().map(String::as_str))?;
    let f_sub = ft.select(names.iter().map(String::as_str))?;

    let merged = match strategy {
        Strategy::Dare => {
            let delta = f_sub.zip_with(&p_sub, |f, p| f - p)?;
            let kept = dare_mask_and_rescale(&delta, drop_p, seed)?;
            p_sub.zip_with(&kept, |p, d| p + d)?
        }
        _ => {
            let acc = acc.expect("checked above");
            acc.ensure_aligned(&p_sub)
                .context("gradient dump does not match the checkpoint shapes")?;
            let g = specialization_importance(&GradAccumulator::from_state(acc, DEFAULT_BETA)?, scope)?;
            let i = generalization_importance(&p_sub, scope);
            let mask = match strategy {
                Strategy::Binary => binary_mask(&g, &i)?,
                Strategy::Weighted => weighted_mask(&g, &i)?,
                _ => rescale_mask(&weighted_mask(&g, &i)?, scope)?,
            };
            log::info!("mask density {:.4}", mask.density());
            merge(&f_sub, &p_sub, &mask)?
        }
    };
    let mut result = TensorMap::new();
    for t in &pre {
        result.push(merged.get(t.name()).unwrap_or(t).clone())?;
    }
    save(out, &result)
}

fn cmd_eval(model: &Path, config: Option<&Path>, method: Option<Method>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = resolve_seed(&cfg, seed);
    let model = load_model(model, &cfg)?;
    let bench = cfg.benchmark();
    let data = bench.generate()?;
    let report = bench.score(&model, &data, method.unwrap_or(cfg.method), seed, None)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for (task, acc) in &report.per_source_accuracy {
        writeln!(w, "{task}\t{acc:.4}")?;
    }
    writeln!(w, "{}\t{:.4}", report.target_id, report.target_accuracy)?;
    writeln!(
        w,
        "A^S {:.4}  A^T {:.4}  H {:.4}  O {:.4}",
        report.source_avg, report.target_accuracy, report.h_average, report.o_average
    )?;
    if let Some(p) = out {
        write_rows(create(p)?, &rows_of(&report))?;
    }
    Ok(())
}

fn cmd_pid(pretrained: &Path, grads: &Path, per_tensor: bool) -> Result<()> {
    let pre = load(pretrained)?;
    let g = load(grads)?;
    let p_sub = pre.select(g.names())?;
    if per_tensor {
        for (name, v) in pid_per_tensor(&p_sub, &g)? {
            println!("{name}\t{v:.6}");
        }
    } else {
        println!("{:.6}", pid(&p_sub, &g)?);
    }
    Ok(())
}

fn cmd_report(logs: &Path, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(logs)
        .with_context(|| format!("listing {}", logs.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "csv") && p != out);
    paths.sort();
    let mut rows: Vec<MetricRow> = Vec::new();
    for p in &paths {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        match read_rows(f) {
            Ok(r) => rows.extend(r),
            Err(spider_core::Error::Format(msg)) => log::warn!("skipping {}: {msg}", p.display()),
            Err(e) => return Err(e).with_context(|| format!("reading {}", p.display())),
        }
    }
    if rows.is_empty() {
        bail!("no metric CSVs found in {}", logs.display());
    }
    let rows = aggregate(&rows);
    write_rows(create(out)?, &rows)?;
    print!("{}", grid(&rows));
    Ok(())
}

fn cmd_experiment(config: Option<&Path>, methods: Vec<Method>, seeds: Vec<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods };
    let seeds = if seeds.is_empty() { cfg.seeds.clone() } else { seeds };
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    let reports = run_experiment(&cfg.benchmark(), &methods, &seeds)?;
    let rows: Vec<MetricRow> = reports.iter().flat_map(rows_of).collect();
    let rows = aggregate(&rows);
    write_rows(create(out)?, &rows)?;
    print!("{}", grid(&rows));
    Ok(())
}
