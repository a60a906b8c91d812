use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use adaabc::council::BiasCouncil;
use adaabc::metrics::{evaluate_groups, MetricBlock, Scorer};
use adaabc::nn::Mlp;
use adaabc::presets::Preset;
use adaabc::synth::{generate, Splits};
use adaabc::theorem::{
    minimize_posterior, sweep_bias_quality, sweep_csv, CellDistribution, PosteriorTable, CELLS,
    DEFAULT_GRID_STEP,
};
use adaabc::trainer::{export_decision_grid, train, Bounds, RunRecord, RunStatus};
use adaabc::Error as CoreError;

use crate::config::{keys_help, ExperimentConfig, Overrides};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "adaabc", version, about = "Debiasing with a bias-amplifying council", after_help = keys_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/val/test splits to a directory.
    Generate(GenerateArgs),
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Score a trained model on the validation and test splits.
    Evaluate(EvaluateArgs),
    /// Train over a grid of λ or council sizes and seeds.
    Sweep(SweepArgs),
    /// Minimize the population objective per cell and sweep bias-model quality.
    Theorem(TheoremArgs),
    /// Export the decision surface of a two-feature model on a grid.
    Boundary(BoundaryArgs),
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Preset name or a directory holding train.csv, val.csv and test.csv.
    #[arg(long)]
    pub data: Option<String>,
    /// Named preset; same as `--data <preset>`.
    #[arg(long, conflicts_with = "data")]
    pub preset: Option<String>,
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub heads: Option<String>,
    /// Sets both the data and the training seed.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> Result<Overrides> {
        let mut out = match &self.config {
            Some(path) => Overrides::load(path)?,
            None => Overrides::default(),
        };
        let mut flags = Overrides::default();
        if let Some(p) = &self.preset {
            flags.set("data.preset", p.as_str())?;
        }
        if let Some(data) = &self.data {
            let key = if data.parse::<Preset>().is_ok() { "data.preset" } else { "data.dir" };
            flags.set(key, data.as_str())?;
        }
        for (key, value) in [
            ("train.method", &self.method),
            ("train.lambda", &self.lambda),
            ("council.heads", &self.heads),
            ("train.seed", &self.seed),
            ("data.seed", &self.seed),
            ("train.max_epochs", &self.epochs),
            ("train.lr", &self.lr),
        ] {
            if let Some(v) = value {
                flags.set(key, v.as_str())?;
            }
        }
        for pair in &self.set {
            flags.set_pair(pair)?;
        }
        out.extend(&flags);
        Ok(out)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::resolve(&self.overrides()?)
    }
}

#[derive(Debug, Args)]
pub struct OutRoot {
    /// Root for outputs when --out is not given.
    #[arg(long, env = "ADAABC_OUT", default_value = "runs")]
    pub out_root: PathBuf,
    /// Output directory; overrides the root and the name.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory name under the output root.
    #[arg(long)]
    pub name: Option<String>,
}

impl OutRoot {
    fn dir(&self, default_name: impl FnOnce() -> String) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| self.out_root.join(self.name.clone().unwrap_or_else(default_name)))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub out: OutRoot,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub out: OutRoot,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long, conflicts_with = "model")]
    pub run: Option<PathBuf>,
    /// Model checkpoint; data comes from the experiment flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Lambda,
    Heads,
}

impl Axis {
    fn key(self) -> &'static str {
        match self {
            Axis::Lambda => "train.lambda",
            Axis::Heads => "council.heads",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::Heads => "heads",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub values: Vec<String>,
    /// Comma-separated seeds; each sets the data and the training seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub out: OutRoot,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Cell masses in the order 11,00,01,10 (target, bias).
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.25,0.25,0.25")]
    pub pi: Vec<f64>,
    /// Bias corruption levels as start:end:step.
    #[arg(long, default_value = "0:0.5:0.1")]
    pub corruption: String,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Write the corruption sweep CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    /// Debiasing model or council checkpoint with two input features.
    #[arg(long)]
    pub model: PathBuf,
    /// Grid box as x_min,x_max,y_min,y_max.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-6,6,-6,6")]
    pub bounds: Vec<f64>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    /// Write the grid CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Theorem(a) => cmd_theorem(&a),
        Command::Boundary(a) => cmd_boundary(&a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn with_path(path: &Path, e: CoreError) -> CliError {
    match e {
        CoreError::Io(source) => CliError::io(path, source),
        e => CliError::Core(e),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match &cfg.data_dir {
        Some(dir) => Splits::load_dir(dir).map_err(|e| with_path(dir, e)),
        None => Ok(generate(&cfg.synth)?),
    }
}

fn run_name(cfg: &ExperimentConfig) -> String {
    let data = cfg.preset.map(|p| p.to_string()).unwrap_or_else(|| "custom".into());
    format!("{data}-{}-seed{}", cfg.trainer.method, cfg.trainer.seed)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let splits = load_splits(&cfg)?;
    let dir = a.out.dir(|| format!("data-seed{}", cfg.synth.seed));
    splits.save_dir(&dir).map_err(|e| with_path(&dir, e))?;
    write(&dir.join("config.txt"), cfg.snapshot())?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

pub const RESULTS_HEADER: &str = "method,seed,split";

fn results_csv(record: &RunRecord) -> String {
    let mut out = format!("{RESULTS_HEADER},{}\n", MetricBlock::CSV_HEADER);
    for (split, block) in [("val", record.best_val), ("test", record.test)] {
        if let Some(b) = block {
            writeln!(out, "{},{},{split},{}", record.config.method, record.seed(), b.csv_row())
                .expect("write to string");
        }
    }
    out
}

/// Trains `cfg` into `dir`. On divergence the partial record is written before the error returns.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let splits = load_splits(cfg)?;
    create_dir(dir)?;
    write(&dir.join("config.txt"), cfg.snapshot())?;
    let mut out = match train(&splits.train, &splits.val, &cfg.trainer) {
        Ok(out) => out,
        Err(CoreError::Diverged {
            epoch,
            batch,
            what,
            mut record,
        }) => {
            record.note = Some(format!("diverged at epoch {epoch}, batch {batch}: {what}"));
            write(&dir.join("record.json"), record.to_json())?;
            write(&dir.join("metrics.csv"), record.epochs_csv())?;
            return Err(CliError::Core(CoreError::Diverged {
                epoch,
                batch,
                what,
                record,
            }));
        }
        Err(e) => return Err(e.into()),
    };
    out.evaluate_test(&splits.test)?;
    write(&dir.join("record.json"), out.record.to_json())?;
    write(&dir.join("metrics.csv"), out.record.epochs_csv())?;
    write(&dir.join("results.csv"), results_csv(&out.record))?;
    let ckpt = dir.join("model.ckpt");
    out.model.save(&ckpt).map_err(|e| with_path(&ckpt, e))?;
    if let Some(council) = &out.council {
        let ckpt = dir.join("council.ckpt");
        council.save(&ckpt).map_err(|e| with_path(&ckpt, e))?;
    }
    Ok(out.record)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let dir = a.out.dir(|| run_name(&cfg));
    let record = run_experiment(&cfg, &dir)?;
    eprintln!(
        "wrote {} ({:?}, best epoch {:?})",
        dir.display(),
        record.status,
        record.best_epoch
    );
    print!("{}", results_csv(&record));
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (cfg, ckpt) = match (&a.run, &a.model) {
        (Some(run), None) => {
            let mut o = Overrides::load(&run.join("config.txt"))?;
            o.extend(&a.exp.overrides()?);
            (ExperimentConfig::resolve(&o)?, run.join("model.ckpt"))
        }
        (None, Some(model)) => (a.exp.resolve()?, model.clone()),
        _ => return Err(CliError::config("evaluate needs --run or --model")),
    };
    let model = Mlp::load(&ckpt).map_err(|e| with_path(&ckpt, e))?;
    let splits = load_splits(&cfg)?;
    let mut out = format!("split,{}\n", MetricBlock::CSV_HEADER);
    for (name, data) in [("val", &splits.val), ("test", &splits.test)] {
        let block = evaluate_groups(&model, data)?;
        writeln!(out, "{name},{}", block.csv_row()).expect("write to string");
    }
    emit(a.out.as_deref(), &out)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    (Some(mean), std)
}

fn metric_values(b: &MetricBlock) -> [Option<f64>; 10] {
    [
        b.aligned_auc,
        b.conflicting_auc,
        b.balanced_auc,
        b.overall_auc,
        b.aligned_accuracy,
        b.conflicting_accuracy,
        b.cells.t1b1,
        b.cells.t1b0,
        b.cells.t0b1,
        b.cells.t0b0,
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Leading sweep.csv columns. Run rows leave the `_std` columns empty; each value
/// then gets one `mean` row holding means and sample standard deviations.
pub const SWEEP_HEADER: &str = "axis,value,seed,status";

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    if a.values.is_empty() {
        return Err(CliError::config("sweep needs at least one --values entry"));
    }
    if a.seeds.is_empty() {
        return Err(CliError::config("sweep needs at least one seed"));
    }
    let base = a.exp.overrides()?;
    // Resolve every child up front so a bad value fails before any training.
    let mut children = Vec::new();
    for value in &a.values {
        for &seed in &a.seeds {
            let mut o = base.clone();
            o.set(a.axis.key(), value.as_str())?;
            o.set("train.seed", seed.to_string())?;
            o.set("data.seed", seed.to_string())?;
            children.push((value, seed, ExperimentConfig::resolve(&o)?));
        }
    }

    let root = a.out.dir(|| format!("sweep-{}", a.axis.name()));
    create_dir(&root)?;
    let std_header: Vec<String> = MetricBlock::CSV_HEADER.split(',').map(|c| format!("{c}_std")).collect();
    let mut table = format!("{SWEEP_HEADER},{},{}\n", MetricBlock::CSV_HEADER, std_header.join(","));
    let no_std = ",".repeat(std_header.len());
    let (mut failed, mut numeric) = (0, false);
    let mut per_value: Vec<(&String, Vec<MetricBlock>)> = Vec::new();
    for (value, seed, cfg) in &children {
        let dir = root.join(format!("{}-{value}", a.axis.name())).join(format!("seed-{seed}"));
        eprintln!("{} = {value}, seed {seed}", a.axis.name());
        let (status, block) = match run_experiment(cfg, &dir) {
            Ok(record) => (status_name(record.status).to_string(), record.test),
            Err(e) => {
                eprintln!("  failed: {e}");
                failed += 1;
                numeric |= e.exit_code() == 3;
                ("failed".to_string(), None)
            }
        };
        let row = block.map(|b| b.csv_row()).unwrap_or_else(|| ",".repeat(9));
        writeln!(table, "{},{value},{seed},{status},{row}{no_std}", a.axis.name()).expect("write to string");
        match per_value.last_mut() {
            Some((v, blocks)) if *v == *value => blocks.extend(block),
            _ => per_value.push((value, block.into_iter().collect())),
        }
    }
    for (value, blocks) in &per_value {
        let columns: Vec<(Option<f64>, Option<f64>)> = (0..10)
            .map(|k| {
                let vals: Vec<f64> = blocks.iter().filter_map(|b| metric_values(b)[k]).collect();
                mean_std(&vals)
            })
            .collect();
        let means: Vec<String> = columns.iter().map(|c| fmt_opt(c.0)).collect();
        let stds: Vec<String> = columns.iter().map(|c| fmt_opt(c.1)).collect();
        let n = blocks.len();
        writeln!(
            table,
            "{},{value},mean,n={n},{},{}",
            a.axis.name(),
            means.join(","),
            stds.join(",")
        )
        .expect("write to string");
    }
    write(&root.join("sweep.csv"), &table)?;
    eprintln!("wrote {}", root.join("sweep.csv").display());
    if failed > 0 {
        return Err(CliError::SweepFailures {
            failed,
            total: children.len(),
            numeric,
        });
    }
    Ok(())
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Running => "running",
        RunStatus::Completed => "completed",
        RunStatus::EarlyStopped => "early_stopped",
        RunStatus::Diverged => "diverged",
    }
}

/// Parses `start:end:step` into inclusive levels.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::config(format!("expected start:end:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let &[start, end, step] = parts.as_slice() else {
        return Err(bad());
    };
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !end.is_finite() || end < start {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn cmd_theorem(a: &TheoremArgs) -> Result<()> {
    let pi: [f64; 4] = a
        .pi
        .as_slice()
        .try_into()
        .map_err(|_| CliError::config("--pi needs four masses"))?;
    let pi = CellDistribution::new(pi).map_err(|e| CliError::config(e.to_string()))?;
    let levels = parse_range(&a.corruption)?;
    let cfg_err = |e: CoreError| CliError::config(e.to_string());
    let m = minimize_posterior(&pi, &PosteriorTable::bias(), a.lambda, a.epsilon, a.grid_step).map_err(cfg_err)?;
    println!("cell,pi,biased,minimizer");
    let columns = pi.as_array().into_iter().zip(PosteriorTable::bias().as_array()).zip(m.table.as_array());
    for ((t, b), ((mass, biased), minimizer)) in CELLS.iter().zip(columns) {
        println!("{t}{b},{mass},{biased},{minimizer}");
    }
    println!("objective,{}", m.objective);
    let rows = sweep_bias_quality(&pi, a.lambda, a.epsilon, &levels, a.grid_step).map_err(cfg_err)?;
    if let Some(out) = &a.out {
        write(out, sweep_csv(&rows))?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn load_scorer(path: &Path) -> Result<Box<dyn Scorer>> {
    match Mlp::load(path) {
        Ok(m) => Ok(Box::new(m)),
        Err(CoreError::Checkpoint(_)) => Ok(Box::new(BiasCouncil::load(path).map_err(|e| with_path(path, e))?)),
        Err(e) => Err(with_path(path, e)),
    }
}

fn cmd_boundary(a: &BoundaryArgs) -> Result<()> {
    let &[x_min, x_max, y_min, y_max] = a.bounds.as_slice() else {
        return Err(CliError::config("--bounds needs x_min,x_max,y_min,y_max"));
    };
    let model = load_scorer(&a.model)?;
    let grid = export_decision_grid(
        model.as_ref(),
        Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        },
        a.resolution,
        a.resolution,
    )?;
    emit(a.out.as_deref(), &grid.to_csv())
}
