//! Command-line front end: synthetic exports, export inspection,
//! experiment runs, sweeps and report rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use neurobit::data_io::{generate_synthetic_dataset, load_deap_export, participant_counts, write_export, Provenance};
use neurobit::harness::{
    load_dataset, read_reports, reports_json, run_experiment_with, run_sweep, summary_csv, worker_threads,
    write_report_files, CrrReport, ExperimentConfig, RunOptions, SweepConfig, TRIALS_PER_SUBJECT,
};

#[derive(Parser, Debug)]
#[command(name = "neurobit", version, about = "EEG person identification with mesh CNN + GRU/LSTM models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic export directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        #[arg(long, default_value_t = 5)]
        trials_per_state: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate an export and print a JSON summary.
    Inspect {
        /// Export directory or its manifest file.
        path: PathBuf,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.json, summary.csv and loss_curves.csv.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also save each fold's trained model under <out>/checkpoints.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Run every configuration of a sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Render saved reports to stdout, or rewrite all report files with --out.
    Report {
        /// A report JSON file or a directory of them.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug)]
enum CliError {
    Core(neurobit::Error),
    Usage(String),
}

impl From<neurobit::Error> for CliError {
    fn from(e: neurobit::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Core(e) => (e.kind(), e.to_string()),
            CliError::Usage(m) => ("usage", m.clone()),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            out,
            subjects,
            trials_per_state,
            seed,
        } => {
            let recordings = generate_synthetic_dataset(subjects, trials_per_state, seed)?;
            let manifest = write_export(&out, Provenance::Synthetic, &recordings)?;
            print_json(&json!({
                "out": out,
                "subjects": manifest.subjects.len(),
                "trials_per_subject": recordings.first().map_or(0, |r| r.n_trials()),
                "seed": seed,
            }));
        }
        Command::Inspect { path } => {
            let (manifest, recordings) = load_deap_export(&path)?;
            let subjects: Vec<_> = recordings
                .iter()
                .map(|r| json!({ "subject_id": r.subject_id, "shape": r.shape() }))
                .collect();
            print_json(&json!({
                "provenance": manifest.provenance,
                "sample_rate": manifest.sample_rate,
                "channels": manifest.channel_names.len(),
                "subjects": subjects,
                "participants_per_state": participant_counts(&recordings, TRIALS_PER_SUBJECT),
            }));
        }
        Command::Run {
            config,
            out,
            checkpoints,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = load_dataset(&cfg.data, cfg.seeds.data)?;
            let opts = RunOptions {
                checkpoint_dir: checkpoints.then(|| out.join("checkpoints")),
            };
            eprintln!("running {} on {} worker(s)", cfg.label(), worker_threads());
            let report = run_experiment_with(&cfg, &data, &opts)?;
            finish(&out, &[report])?;
        }
        Command::Sweep { config, out } => {
            let sweep = SweepConfig::load(&config)?;
            let configs = sweep.expand()?;
            let data = load_dataset(&sweep.base.data, sweep.base.seeds.data)?;
            eprintln!("sweeping {} configurations on {} worker(s)", configs.len(), worker_threads());
            let reports = run_sweep(&configs, &data)?;
            finish(&out, &reports)?;
        }
        Command::Report { input, format, out } => {
            let reports = read_reports(&input)?;
            if reports.is_empty() {
                return Err(CliError::Usage(format!("no reports found in {}", input.display())));
            }
            if let Some(dir) = out {
                let files = write_report_files(&dir, &reports)?;
                eprintln!("wrote {}", files.json.display());
            }
            match format {
                Format::Json => println!("{}", reports_json(&reports)?),
                Format::Csv => print!("{}", summary_csv(&reports)?),
            }
        }
    }
    Ok(())
}

fn finish(out: &Path, reports: &[CrrReport]) -> Result<(), CliError> {
    let files = write_report_files(out, reports)?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| json!({ "label": r.label, "mean_crr": r.mean_crr, "standard_error": r.standard_error }))
        .collect();
    print_json(&json!({ "report": files.json, "summary": files.summary, "loss_curves": files.loss_curves, "results": rows }));
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}
