use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsgc::bench::{
    effective_precision, eval_saved, exit_code, format_grad_table, format_summary, gen_sim_dataset,
    gen_subsampled_grid, gen_synthetic_docs, gen_synthetic_sensor_series, gradcheck, gradcheck_all, load_reports,
    run_experiment, summarize, Boundary, DatasetFile, DocTask, ForecastSettings, GradSizes, GradTarget, GridTask,
    RunConfig, SensorTask, SimKind, SimTask, DEFAULT_DENSITY, DEFAULT_WINDOW,
};
use dsgc::tensor::Precision;
use dsgc::{Error, Result};

#[derive(Parser)]
#[command(name = "engine", version, about = "Graph convolution experiments on point clouds and sensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a shift / rotation / flip simulation dataset on a grid.
    GenSim(GenSim),
    /// Generate labelled patterns on a randomly subsampled pixel grid.
    GenGrid(GenGrid),
    /// Generate a synthetic sensor network time series with missing entries.
    GenSeries(GenSeries),
    /// Generate synthetic bag-of-words documents over a word graph.
    GenDocs(GenDocs),
    /// Train every model and seed of a run configuration.
    Train(Train),
    /// Evaluate a saved model on a dataset split.
    Eval(Eval),
    /// Finite-difference gradient checks of the layer kinds.
    Gradcheck(Gradcheck),
    /// Aggregate report files across seeds.
    Report(Report),
}

#[derive(Args)]
struct GenSim {
    #[arg(long)]
    task: SimKind,
    /// Grid size as HxW.
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value = "wrap")]
    boundary: Boundary,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenGrid {
    #[arg(long, default_value = "16x16", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 0.25)]
    keep: f64,
    #[arg(long, default_value_t = 9)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenSeries {
    #[arg(long, default_value_t = 50)]
    nodes: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    missing: f64,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenDocs {
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 400)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the configured seeds, e.g. 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for independent runs.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Args)]
struct Eval {
    /// Model stem: the path without the .json / .bin suffix.
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Forecast inputs carry no missing-data channel.
    #[arg(long)]
    no_mask: bool,
    #[arg(long, default_value_t = 0)]
    coarsen_seed: u64,
    #[arg(long, default_value = "f32")]
    precision: Precision,
}

#[derive(Args)]
struct Gradcheck {
    /// Layer kind (lp, gc, dsgc, mpnn, monet, monet-gat, cheby, dsc, full, linear) or "all".
    #[arg(long, default_value = "all")]
    layer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Report {
    /// Directory holding *.report.json files.
    #[arg(long)]
    dir: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    Ok((h, w))
}

fn write(data: &DatasetFile, path: &Path) -> Result<()> {
    data.write(path)?;
    println!("wrote {} ({} samples, {} nodes)", path.display(), data.count(), data.graph.n);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenSim(a) => {
            let mut task = SimTask::new(a.task, a.grid.0, a.grid.1, a.samples, a.seed);
            task.density = a.density;
            task.boundary = a.boundary;
            write(&gen_sim_dataset(&task)?, &a.output)?;
        }
        Command::GenGrid(a) => {
            let mut task = GridTask::new(a.grid.0, a.grid.1, a.samples, a.keep, a.seed);
            task.k = a.k;
            write(&gen_subsampled_grid(&task)?, &a.output)?;
        }
        Command::GenSeries(a) => {
            let mut task = SensorTask::new(a.nodes, a.steps, a.missing, a.seed);
            task.k = a.k;
            write(&gen_synthetic_sensor_series(&task)?, &a.output)?;
        }
        Command::GenDocs(a) => {
            write(&gen_synthetic_docs(&DocTask::new(a.vocab, a.classes, a.docs, a.seed))?, &a.output)?;
        }
        Command::Train(a) => {
            let mut cfg = RunConfig::read(&a.config)?;
            if let Some(seeds) = a.seeds {
                cfg.seeds = seeds;
            }
            if let Some(p) = a.parallel {
                cfg.parallel = p;
            }
            let outcome = run_experiment(&cfg)?;
            print!("{}", format_summary(&outcome.summary));
            if let Some(p) = outcome.persistence_rmse {
                println!("persistence baseline test RMSE {p:.6}");
            }
        }
        Command::Eval(a) => {
            let data = DatasetFile::read(&a.dataset)?;
            let forecast = ForecastSettings {
                window: a.window,
                mask: !a.no_mask,
            };
            let metric = match effective_precision(a.precision)? {
                Precision::F32 => eval_saved::<f32>(&a.model, &data, &a.split, &forecast, a.coarsen_seed)?,
                Precision::F64 => eval_saved::<f64>(&a.model, &data, &a.split, &forecast, a.coarsen_seed)?,
            };
            println!("{} metric {metric:.6}", a.split);
        }
        Command::Gradcheck(a) => {
            let reports = if a.layer == "all" {
                gradcheck_all(a.seed)?
            } else {
                let target: GradTarget = a.layer.parse()?;
                vec![gradcheck(target, GradSizes::default(), a.seed)?]
            };
            print!("{}", format_grad_table(&reports));
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.layer.as_str()).collect();
            if !failed.is_empty() {
                eprintln!("gradient check failed for: {}", failed.join(", "));
                return Ok(1);
            }
            println!("all gradient checks passed");
        }
        Command::Report(a) => {
            let reports = load_reports(&a.dir)?;
            if reports.is_empty() {
                return Err(Error::config(format!("no report files in {}", a.dir.display())));
            }
            print!("{}", format_summary(&summarize(&reports)));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
