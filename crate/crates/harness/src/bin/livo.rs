use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use livo_harness::config::SimNoise;
use livo_harness::dataset::{read_dataset, read_groundtruth, simulated, write_dataset, SensorSource};
use livo_harness::metrics::{associate, ate_rmse, TimedPosition};
use livo_harness::report::Summary;
use livo_harness::{run_pipeline, HarnessError, PipelineConfig, Result, RunReport};

#[derive(Parser)]
#[command(name = "livo", version, about = "LiDAR-inertial-visual odometry evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator on a simulated scenario or a recorded dataset.
    Run(RunArgs),
    /// Write a simulated scenario to a dataset directory.
    Simulate(SimulateArgs),
    /// Recompute ATE of a saved run against ground truth and print the
    /// report summary.
    Metrics {
        report: PathBuf,
        /// Ground-truth CSV; defaults to the built-in scenario named in the
        /// report header.
        #[arg(long)]
        groundtruth: Option<PathBuf>,
    },
    /// Compare two run reports: baseline first.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
    },
    /// Print every configuration key with its default value.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Default,
    Zero,
}

impl From<Noise> for SimNoise {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Default => SimNoise::Default,
            Noise::Zero => SimNoise::Zero,
        }
    }
}

#[derive(Args)]
#[group(id = "input", required = true, multiple = false)]
struct Input {
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    report_out: PathBuf,
    #[arg(long, value_enum)]
    selector: Option<Switch>,
    #[arg(long, value_enum)]
    longterm_map: Option<Switch>,
    /// Local map edge length, metres.
    #[arg(long)]
    local_edge: Option<f64>,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    noise: Noise,
    /// Write only the first N frames; 0 writes all.
    #[arg(long, default_value_t = 0)]
    max_frames: usize,
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.seed = args.seed;
    if let Some(s) = args.selector {
        cfg.selector = s.enabled();
    }
    if let Some(s) = args.longterm_map {
        cfg.longterm_map = s.enabled();
    }
    if let Some(e) = args.local_edge {
        cfg.local_edge = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let source: Box<dyn SensorSource> = match (&args.input.scenario, &args.input.dataset) {
        (Some(name), _) => Box::new(simulated(name, cfg.seed, cfg.sim_noise)?),
        (None, Some(dir)) => Box::new(read_dataset(dir)?),
        (None, None) => unreachable!("clap enforces one input"),
    };
    let report = run_pipeline(&cfg, source.as_ref())?;
    let path = &args.report_out;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    report.write_jsonl(&mut out).and_then(|_| out.flush()).map_err(|e| io_err(path, e))?;
    print_summary(&report.header.source, &report.summary);
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source }
}

fn load(path: &Path) -> Result<RunReport> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    RunReport::read_jsonl(BufReader::new(file), path)
}

fn print_summary(name: &str, s: &Summary) {
    println!("run            {name}");
    println!("frames         {}", s.frames);
    println!("selected       {} ({:.1} %)", s.selected_frames, s.selection_ratio);
    println!("degenerate     {}", s.degenerate_frames);
    match s.ate_rmse {
        Some(a) => println!("ATE RMSE       {a:.4} m over {} poses", s.ate_pairs),
        None => println!("ATE RMSE       undefined"),
    }
    println!("peak memory    local {} B, long-term {} B, total {} B", s.peak_memory.local_bytes, s.peak_memory.longterm_bytes, s.peak_memory.total_bytes);
    println!("stage          mean ms    std ms    sem ms");
    let r = &s.runtime;
    for (label, st) in [("lidar", r.lidar), ("visual", r.visual), ("map", r.map), ("total", r.total)] {
        println!("{label:<14} {:>7.3} {:>9.3} {:>9.4}", st.mean_ms, st.std_ms, st.sem_ms);
    }
}

fn metrics(report: &Path, groundtruth: Option<&Path>) -> Result<()> {
    let mut r = load(report)?;
    let truth = match groundtruth {
        Some(path) => read_groundtruth(path)?,
        None => simulated(&r.header.source, r.header.seed, SimNoise::Zero)
            .map_err(|_| {
                HarnessError::Config(format!("report source {:?} is not a built-in scenario; pass --groundtruth", r.header.source))
            })?
            .groundtruth()
            .to_vec(),
    };
    let truth: Vec<TimedPosition> = truth.iter().map(|g| TimedPosition { timestamp: g.timestamp, position: g.position }).collect();
    let estimated = r.positions();
    r.summary.ate_rmse = Some(ate_rmse(&estimated, &truth)?);
    r.summary.ate_pairs = associate(&estimated, &truth).len();
    print_summary(&r.header.source, &r.summary);
    Ok(())
}

fn compare(baseline: &Path, candidate: &Path) -> Result<()> {
    let (a, b) = (load(baseline)?, load(candidate)?);
    let (sa, sb) = (&a.summary, &b.summary);
    let ate = |s: &Summary| s.ate_rmse.ok_or_else(|| HarnessError::Metric("report has no ATE".into()));
    let (ea, eb) = (ate(sa)?, ate(sb)?);
    println!("{:<22} {:>14} {:>14}", "", "baseline", "candidate");
    println!("{:<22} {:>14.4} {:>14.4}", "ATE RMSE [m]", ea, eb);
    println!("{:<22} {:>14.1} {:>14.1}", "selection [%]", sa.selection_ratio, sb.selection_ratio);
    println!("{:<22} {:>14} {:>14}", "peak memory [B]", sa.peak_memory.total_bytes, sb.peak_memory.total_bytes);
    println!("{:<22} {:>14.3} {:>14.3}", "mean frame [ms]", sa.runtime.total.mean_ms, sb.runtime.total.mean_ms);
    if ea > 0.0 {
        println!("ATE change            {:+.1} %", 100.0 * (eb - ea) / ea);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Simulate(args) => {
            let source = simulated(&args.scenario, args.seed, args.noise.into())?;
            write_dataset(&args.out, &source, args.max_frames)
        }
        Command::Metrics { report, groundtruth } => metrics(&report, groundtruth.as_deref()),
        Command::Compare { baseline, candidate } => compare(&baseline, &candidate),
        Command::Config => {
            print!("{}", PipelineConfig::default().to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
