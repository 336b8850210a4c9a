use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedxgb_cli::bench::{run_sweep, sweep_csv, SweepConfig};
use fedxgb_cli::{
    cmd_compare, cmd_keygen, cmd_synth, cmd_train, group_params, CliError, ExperimentConfig, Overrides,
};

#[derive(Parser)]
#[command(name = "fedxgb", version, about = "Federated XGBoost over secure aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training; writes accuracy.csv, metrics.csv, model.txt, config.toml.
    Train(Overrides),
    /// Federated vs. centralized training on the same split and seed.
    Compare(Overrides),
    /// Communication and computation cost of one aggregation over a grid.
    SecaggBench {
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        users: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0.6)]
        threshold_fraction: f64,
        #[arg(long, default_value_t = 64)]
        sec_param: u32,
        #[arg(long)]
        params_file: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "out/sweep.csv")]
        output: PathBuf,
    },
    /// Generates group parameters.
    Keygen {
        #[arg(long, default_value_t = 128)]
        sec_param: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "params.bin")]
        output: PathBuf,
    },
    /// Writes a census-like synthetic dataset in libsvm format.
    Synth {
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "synthetic.libsvm")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(o) => {
            let r = cmd_train(&o.resolve()?)?;
            println!("test_accuracy={:.4} aborted_trees={}", r.test_accuracy, r.aborted_trees);
            for f in r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare(o) => {
            let r = cmd_compare(&o.resolve()?)?;
            println!(
                "federated={:.4} centralized={:.4} delta_pp={:.4} identical_models={}",
                r.federated_accuracy, r.centralized_accuracy, r.delta_pp, r.identical_models
            );
            for f in r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::SecaggBench {
            users,
            lengths,
            rates,
            trials,
            threshold_fraction,
            sec_param,
            params_file,
            timing,
            seed,
            output,
        } => {
            if rates.iter().any(|r| !(0.0..1.0).contains(r)) || !(0.0..=1.0).contains(&threshold_fraction) {
                return Err(CliError::Usage(
                    "rates must lie in [0, 1) and threshold_fraction in [0, 1]".into(),
                ));
            }
            let exp = ExperimentConfig { sec_param, params_file, seed, ..ExperimentConfig::default() };
            let params = group_params(&exp)?;
            let sweep = SweepConfig {
                users,
                lengths,
                rates,
                trials,
                threshold_fraction,
                timing,
                seed,
                ..SweepConfig::default()
            };
            let cells = run_sweep(&params, &sweep)?;
            let head = format!(
                "# fedxgb secagg-bench sec_param={} seed={seed} trials={trials} threshold_fraction={threshold_fraction}\n",
                params.sec_param
            );
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&output, sweep_csv(&head, &cells))?;
            println!(
                "{} cells, {} aborted; wrote {}",
                cells.len(),
                cells.iter().filter(|c| c.aborted).count(),
                output.display()
            );
        }
        Command::Keygen { sec_param, seed, output } => {
            let p = cmd_keygen(sec_param, seed, &output)?;
            println!("N has {} bits; wrote {}", p.n.bits(), output.display());
        }
        Command::Synth { rows, seed, output } => {
            cmd_synth(rows, seed, &output)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
