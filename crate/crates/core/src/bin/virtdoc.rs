use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use virtdoc::calibration::CalibrationMethod;
use virtdoc::commands::{self, Body, CommandError};
use virtdoc::dataset::{FeatureSet, Sex};

#[derive(Parser)]
#[command(name = "virtdoc", version, about = "Virtual doctor for type 2 diabetes risk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort CSV.
    GenData {
        #[arg(long, default_value_t = 4814)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        with_hba1c: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, balance, normalize, train, calibrate and write a model artifact.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "basic")]
        features: FeatureSet,
        /// Number of hidden layers (1 to 3).
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Width for every layer, or a comma list with one width per layer.
        #[arg(long, default_value = "5")]
        widths: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "guess")]
        calibrate: CalibrationMethod,
        /// Fraction of the training partition reserved for calibration.
        #[arg(long)]
        calibration_holdout: Option<f64>,
        /// Override the class-1 prior of a GUESS calibrator.
        #[arg(long)]
        prior: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC curve, AUC distribution with t-test, and permutation test.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 999)]
        permutations: usize,
        #[arg(long)]
        out_prefix: String,
    },
    /// Mean test AUC over a grid of depths and widths.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "basic")]
        features: FeatureSet,
        #[arg(long, default_value = "1,2,3")]
        depths: String,
        #[arg(long, default_value = "1-20")]
        widths: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-shot risk estimate for a single patient.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sex: Sex,
        #[arg(long)]
        age: u32,
        #[arg(long, requires = "height", conflicts_with = "bmi")]
        weight: Option<f64>,
        #[arg(long, requires = "weight")]
        height: Option<f64>,
        #[arg(long, required_unless_present = "weight")]
        bmi: Option<f64>,
        #[arg(long)]
        hba1c: Option<f64>,
        /// Polyuria, polydipsia, alcohol and tobacco, e.g. `yes,no,3,1`.
        #[arg(long)]
        answers: Option<String>,
    },
    /// Replay a JSON script of inputs through an interview session.
    SimulateSession {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        script: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Defaults to 8080; VIRTDOC_PORT takes precedence.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "virtdoc-data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run(command: Command) -> Result<Option<String>, CommandError> {
    Ok(Some(match command {
        Command::GenData { n, seed, with_hba1c, out } => {
            commands::gen_data(&commands::GenDataArgs { n, seed, with_hba1c, out })?
        }
        Command::Train {
            data,
            features,
            layers,
            widths,
            epochs,
            learning_rate,
            batch_size,
            momentum,
            seed,
            calibrate,
            calibration_holdout,
            prior,
            out,
        } => commands::train(&commands::TrainArgs {
            data,
            features,
            layers,
            widths: commands::parse_int_list(&widths)?,
            epochs,
            learning_rate,
            batch_size,
            momentum,
            seed,
            calibrate,
            calibration_holdout,
            prior,
            out,
        })?,
        Command::Evaluate { model, data, repeats, permutations, out_prefix } => {
            commands::evaluate(&commands::EvaluateArgs { model, data, repeats, permutations, out_prefix })?
        }
        Command::Sweep { data, features, depths, widths, repeats, epochs, seed, out } => {
            commands::run_sweep(&commands::SweepArgs {
                data,
                features,
                depths: commands::parse_int_list(&depths)?,
                widths: commands::parse_int_list(&widths)?,
                repeats,
                epochs,
                seed,
                out,
            })?
        }
        Command::Predict { model, sex, age, weight, height, bmi, hba1c, answers } => {
            let body = match (weight, height, bmi) {
                (Some(weight_kg), Some(height_m), _) => Body::Measured { weight_kg, height_m },
                (_, _, Some(b)) => Body::Bmi(b),
                _ => return Err(CommandError::usage("give --weight and --height, or --bmi")),
            };
            let answers = answers.as_deref().map(commands::parse_answers).transpose()?;
            commands::predict(&commands::PredictArgs { model, sex, age, body, hba1c, answers })?
        }
        Command::SimulateSession { model, script } => commands::simulate_session(&model, &script)?,
        Command::Serve { model, port, data_dir, host } => {
            commands::serve(model, port, data_dir, host)?;
            return Ok(None);
        }
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect();
            eprintln!("{}", CommandError::usage(message.join(" ").trim_start_matches("error: ")).to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(Some(out)) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
