use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedclip::config::ExperimentConfig;
use fedclip::error::Result;
use fedclip::federation::TrainingMode;
use fedclip::harness;

#[derive(Parser)]
#[command(name = "fedclip", version, about = "Differentially private federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliMode {
    Adaptive,
    Fixed,
    Nonprivate,
}

impl From<CliMode> for TrainingMode {
    fn from(mode: CliMode) -> Self {
        match mode {
            CliMode::Adaptive => TrainingMode::Adaptive,
            CliMode::Fixed => TrainingMode::FixedClip,
            CliMode::Nonprivate => TrainingMode::NonPrivate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment end to end and write metrics.csv / summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Override the config's training mode.
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
        /// Client-level parallelism; results are identical for any value.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (default: $FEDCLIP_OUT, then the config, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs across a seed sweep at one privacy budget and
    /// rank them by mean final accuracy.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        configs: Vec<PathBuf>,
        /// Comma-separated seed list, e.g. 1,2,3,4,5.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reshape a metrics.csv into a gnuplot-ready whitespace table.
    Plotdata {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, mode, workers, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(mode) = mode {
                // Folding the override into the config keeps the summary's
                // echo an exact recipe for this run.
                cfg.federation.mode = mode.into();
                cfg.validate()?;
            }
            let out_dir = harness::resolve_out_dir(out.as_deref(), &cfg);
            let outcome = harness::run_experiment(&cfg, seed, workers, &out_dir)?;
            let last = outcome.rows.last().expect("at least one round");
            println!(
                "{} rounds done: test_accuracy {:.4}, epsilon {}",
                outcome.summary.rounds_completed,
                last.test_accuracy,
                outcome.summary.final_epsilon,
            );
            for path in [outcome.metrics_path, outcome.summary_path].into_iter().flatten() {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Compare { configs, seeds, workers, out } => {
            let first = ExperimentConfig::load(&configs[0])?;
            let out_dir = harness::resolve_out_dir(out.as_deref(), &first);
            let (report, path) = harness::compare_experiments(&configs, &seeds, workers, &out_dir)?;
            for entry in &report.entries {
                println!(
                    "{} [{}]: mean accuracy {:.4} +- {:.4}",
                    entry.config, entry.mode, entry.mean_accuracy, entry.std_accuracy
                );
            }
            println!("winner: {} by {:.4}", report.winner, report.margin);
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Plotdata { metrics } => {
            let dat = harness::plotdata(&metrics)?;
            println!("wrote {}", dat.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
