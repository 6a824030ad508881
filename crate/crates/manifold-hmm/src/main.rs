use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifold_hmm::config::ExperimentConfig;
use manifold_hmm::error::{Error, Result};
use manifold_hmm::experiment::{
    emit_plot_data, fit_chain, run_experiment, write_estimates_json, write_metrics_csv,
    EstimatesDoc, FitOptions,
};
use manifold_hmm::markov::{self, HmmParams};

#[derive(Parser)]
#[command(
    name = "manifold-hmm",
    about = "Online HMM estimation with manifold-valued observations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a hidden chain and its observations (params JSON -> chain CSV)
    Simulate {
        /// HmmParams JSON file
        #[arg(long)]
        params: PathBuf,
        /// Chain length T
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output chain CSV (header t,state,<point columns>)
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one chain CSV: K-means init on the first minibatch, online
    /// fine-tuning on the rest, scored against the config's params
    Fit {
        /// Chain CSV produced by `simulate` (or in the same format)
        #[arg(long)]
        chain: PathBuf,
        /// Experiment config; uses its first minibatch size and first seed
        #[arg(long)]
        config: PathBuf,
        /// JSONL trace output (one record every trace_every steps)
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics CSV output (single row)
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the full (minibatch x seed) grid and write the metrics table
    /// plus the estimates dump
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output.metrics from the config
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Overrides output.estimates from the config
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Turn an estimates dump into a scatter CSV of mean estimates
    PlotData {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_params(path: &Path) -> Result<HmmParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("params file {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            params,
            length,
            seed,
            out,
        } => {
            let params = load_params(&params)?;
            let chain = markov::simulate_chain(&params, length, seed)?;
            markov::write_chain_csv(&chain, create(&out)?)?;
            println!(
                "wrote {} observations on {} to {}",
                chain.len(),
                params.kind(),
                out.display()
            );
        }
        Command::Fit {
            chain,
            config,
            trace,
            metrics,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let chain = markov::read_chain_csv(File::open(&chain)?)?;
            let delta = config.minibatch_sizes[0];
            let seed = config.seeds[0];
            let options = FitOptions::from(&config);
            let (record, trace_records) =
                fit_chain(&chain, &config.true_params, delta, seed, &options)?;
            if let Some(path) = trace {
                let mut w = create(&path)?;
                for rec in &trace_records {
                    serde_json::to_writer(&mut w, rec)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            if let Some(path) = metrics {
                let output = manifold_hmm::experiment::ExperimentOutput {
                    chain_length: chain.len(),
                    true_params: config.true_params.clone(),
                    runs: vec![record.clone()],
                    failures: vec![],
                };
                write_metrics_csv(&output, create(&path)?)?;
            }
            println!(
                "delta={} seed={} accuracy={:.4} rmse={:.4} runtime={:.2}s (kmeans {:.2}s + fine-tune {:.2}s)",
                record.delta,
                record.seed,
                record.accuracy,
                record.transition_rmse,
                record.runtime_s,
                record.kmeans_s,
                record.finetune_s
            );
        }
        Command::Experiment {
            config,
            metrics,
            estimates,
        } => {
            let config_path = config;
            let config = ExperimentConfig::load(&config_path)?;
            let output = run_experiment(&config)?;
            for f in &output.failures {
                eprintln!(
                    "cell delta={} seed={} failed: {}",
                    f.delta, f.seed, f.error
                );
            }
            let metrics_path = metrics
                .or_else(|| config.metrics_path.clone())
                .unwrap_or_else(|| PathBuf::from("metrics.csv"));
            let estimates_path = estimates
                .or_else(|| config.estimates_path.clone())
                .unwrap_or_else(|| PathBuf::from("estimates.json"));
            write_metrics_csv(&output, create(&metrics_path)?)?;
            write_estimates_json(&output, create(&estimates_path)?)?;
            println!(
                "{} runs ({} failures) -> {} and {}",
                output.runs.len(),
                output.failures.len(),
                metrics_path.display(),
                estimates_path.display()
            );
        }
        Command::PlotData { estimates, out } => {
            let text = std::fs::read_to_string(&estimates)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", estimates.display())))?;
            let doc: EstimatesDoc = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("estimates dump {}: {e}", estimates.display())))?;
            emit_plot_data(&doc, create(&out)?)?;
            println!(
                "wrote scatter data for {} runs to {}",
                doc.runs.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output is not an error
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
