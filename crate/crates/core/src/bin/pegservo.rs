use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pegservo::bench::{self, BenchConfig, Method, ReportFormat};
use pegservo::config::load_config;
use pegservo::datagen;
use pegservo::estimator::{accuracy_curve, oracle_estimate, write_accuracy_csv, EstimatePair, NoisePreset};
use pegservo::heatmap::AugmentParams;
use pegservo::servo::write_trace_csv;
use pegservo::world::{make_world, stream_rng};

#[derive(Parser)]
#[command(name = "pegservo", version, about = "Peg-in-hole visual servoing simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo benchmark and write a report.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Number of trials per scenario and method.
        #[arg(long)]
        trials: Option<usize>,
        /// Scenario name, repeatable or comma separated.
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        /// Method name, repeatable or comma separated.
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        /// Estimator noise preset.
        #[arg(long)]
        estimator: Option<NoisePreset>,
        /// csv, json or markdown; defaults to the --out extension, else markdown.
        #[arg(long)]
        format: Option<ReportFormat>,
    },
    /// Run one servo trial and write its trace as CSV.
    ServoDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "plastic")]
        scenario: String,
        #[arg(long)]
        estimator: Option<NoisePreset>,
    },
    /// Sample estimator detections and write the accuracy curve as CSV.
    Accuracy {
        #[command(flatten)]
        common: Common,
        /// Number of simulated scenes; every camera of a scene gives one sample.
        #[arg(long, default_value_t = 5000)]
        trials: usize,
        #[arg(long, default_value = "plastic")]
        scenario: String,
        #[arg(long)]
        estimator: Option<NoisePreset>,
        /// Largest pixel threshold; thresholds run 1, 2, ... up to it.
        #[arg(long, default_value_t = 20)]
        max_threshold: u32,
    },
    /// Generate augmented training images and heatmap targets.
    Datagen {
        /// Directory of PNG source images with optional JSON keypoint sidecars.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of samples to generate.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Re-render a JSON bench report as CSV, JSON or a markdown table.
    Report {
        /// JSON report written by `bench`.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<ReportFormat>,
    },
}

fn base_config(path: Option<&Path>) -> Result<BenchConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => BenchConfig::default(),
    })
}

fn with_output<F>(out: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> pegservo::Result<()>,
{
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut buf = std::io::BufWriter::new(file);
            write(&mut buf).with_context(|| format!("writing {}", path.display()))?;
            buf.flush().with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn report_format(explicit: Option<ReportFormat>, out: Option<&Path>) -> ReportFormat {
    explicit
        .or_else(|| out.and_then(ReportFormat::from_path))
        .unwrap_or(ReportFormat::Markdown)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench {
            common,
            trials,
            scenario,
            method,
            estimator,
            format,
        } => {
            let mut config = base_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.bench.seed = s;
            }
            if let Some(t) = trials {
                config.bench.trials = t;
            }
            if !scenario.is_empty() {
                config.bench.scenarios = scenario;
            }
            if !method.is_empty() {
                config.bench.methods = method;
            }
            if let Some(p) = estimator {
                config.estimator.preset = p;
            }
            let report = bench::run_bench(&config)?;
            let format = report_format(format, common.out.as_deref());
            with_output(common.out.as_deref(), |w| bench::write_report(w, &report, format))?;
            if common.out.is_some() {
                eprint!("{}", bench::render_markdown(&report));
            }
        }
        Command::ServoDemo {
            common,
            scenario,
            estimator,
        } => {
            let mut config = base_config(common.config.as_deref())?;
            if let Some(p) = estimator {
                config.estimator.preset = p;
            }
            config.validate()?;
            let seed = common.seed.unwrap_or(config.bench.seed);
            let s = config.resolve_scenario(&scenario)?;
            let (_, outcome) = bench::run_servo_demo(&config, &s, seed)?;
            with_output(common.out.as_deref(), |w| write_trace_csv(w, &outcome.trace))?;
            eprintln!(
                "{:?} after {:.3} s ({} iterations), planar error {:.3} mm",
                outcome.status,
                outcome.elapsed,
                outcome.iterations,
                outcome.final_planar_error * 1e3
            );
        }
        Command::Accuracy {
            common,
            trials,
            scenario,
            estimator,
            max_threshold,
        } => {
            let mut config = base_config(common.config.as_deref())?;
            if let Some(p) = estimator {
                config.estimator.preset = p;
            }
            config.validate()?;
            if trials == 0 || max_threshold == 0 {
                bail!("--trials and --max-threshold must be positive");
            }
            let seed = common.seed.unwrap_or(config.bench.seed);
            let s = config.resolve_scenario(&scenario)?;
            let noise = config.estimator.model(config.roi());
            let mut rng = stream_rng(seed, bench::ESTIMATOR_STREAM);
            let mut estimates = Vec::new();
            let mut truths = Vec::new();
            for i in 0..trials {
                let world = make_world(&s, seed ^ i as u64, &config.world)?;
                let peg = world.peg_tip();
                let hole = s.hole_center();
                for cam in &world.true_cameras {
                    truths.push(EstimatePair::detected(cam.project(&peg)?, cam.project(&hole)?));
                    estimates.push(oracle_estimate(&peg, &hole, cam, &noise, &mut rng)?);
                }
            }
            let thresholds: Vec<f64> = (1..=max_threshold).map(f64::from).collect();
            let rates = accuracy_curve(&estimates, &truths, &thresholds)?;
            with_output(common.out.as_deref(), |w| write_accuracy_csv(w, &thresholds, &rates))?;
        }
        Command::Datagen {
            input,
            out,
            seed,
            trials,
        } => {
            let sources = datagen::load_sources(&input)?;
            if sources.is_empty() {
                bail!("no PNG images in {}", input.display());
            }
            let mut rng = pegservo::rng_from_seed(seed);
            let records = datagen::generate(&sources, &out, trials, &AugmentParams::default(), &mut rng)?;
            eprintln!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::Report { input, out, format } => {
            let report = bench::read_report_json(&input)?;
            let format = report_format(format, out.as_deref());
            with_output(out.as_deref(), |w| bench::write_report(w, &report, format))?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
