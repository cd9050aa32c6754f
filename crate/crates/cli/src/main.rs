use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use windcast::evaluation::{average_rank, nrmse_degradation};
use windcast::pipeline::{
    emit_report, load_frame, run_on_frame, write_frame_csv, write_importance_csv, DataSource, ExperimentConfig,
    ExperimentReport, ReportFormat, RunMode, TargetKind,
};

/// Hybrid wind speed and wind power forecasting experiments.
#[derive(Parser)]
#[command(name = "windcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic farm described by the config as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run variable selection on every split and write importance.csv.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune and refit every predictor; writes the fit records as fits.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full protocol and write score files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
        formats: Vec<Format>,
    },
    /// Summarise the report.json of one or more evaluate runs (one per farm).
    Report {
        /// Output directories of earlier evaluate runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config seed (takes precedence over WINDCAST_SEED).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_splits: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<Target>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    WindSpeed,
    WindPower,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::from_path(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(k) = self.max_splits {
            config.max_splits = Some(k);
        }
        if let Some(t) = self.target {
            config.target = match t {
                Target::WindSpeed => TargetKind::WindSpeed,
                Target::WindPower => TargetKind::WindPower,
            };
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(config: &ExperimentConfig, mode: RunMode) -> Result<ExperimentReport> {
    let frame = load_frame(config).context("loading data")?;
    Ok(run_on_frame::<f64>(config, &frame, mode)?)
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let config = common.load()?;
            if !matches!(config.data, DataSource::Synthetic(_)) {
                bail!("synth needs a synthetic data source");
            }
            let frame = load_frame(&config)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_frame_csv(&frame, BufWriter::new(file))?;
            println!("wrote {} rows to {}", frame.len(), out.display());
        }
        Command::Select { common, out } => {
            let report = run(&common.load()?, RunMode::SelectOnly)?;
            if report.hsic_selection.is_empty() && report.lasso_importance.is_empty() {
                bail!("selection method is none; nothing to select");
            }
            create_dir(&out)?;
            let path = out.join("importance.csv");
            write_importance_csv(&report, BufWriter::new(File::create(&path)?))?;
            for sel in &report.hsic_selection {
                println!("split {} {}: {}", sel.split, sel.target, sel.selected.join(", "));
            }
            println!("wrote {}", path.display());
        }
        Command::Train { common, out } => {
            let report = run(&common.load()?, RunMode::TrainOnly)?;
            create_dir(&out)?;
            let path = out.join("fits.json");
            write_json(&path, &report.fits)?;
            println!("{} fitted objects, wrote {}", report.fits.len(), path.display());
        }
        Command::Evaluate { common, out, formats } => {
            let report = run(&common.load()?, RunMode::Evaluate)?;
            let formats: Vec<ReportFormat> = formats
                .iter()
                .map(|f| match f {
                    Format::Csv => ReportFormat::Csv,
                    Format::Json => ReportFormat::Json,
                })
                .collect();
            for path in emit_report(&report, &out, &formats)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Report { runs } => {
            let mut reports = Vec::new();
            for dir in &runs {
                let path = dir.join("report.json");
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let report: ExperimentReport =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                reports.push(report.scores);
            }
            println!("{:<24} {}", "predictor", runs.iter().map(|r| format!("{:>12}", r.display().to_string())).collect::<String>());
            for p in reports[0].predictors() {
                let cells = reports
                    .iter()
                    .map(|r| nrmse_degradation(r, &p).map(|d| format!("{d:>12.5}")))
                    .collect::<windcast::Result<String>>()?;
                println!("{p:<24} {cells}");
            }
            println!();
            println!("average rank by degradation");
            for (p, rank) in average_rank(&reports)? {
                println!("{p:<24} {rank:>6.2}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let doc = serde_json::json!({ "error": causes[0], "causes": &causes[1..] });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
