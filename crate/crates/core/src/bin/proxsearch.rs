use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxsearch::harness::{
    benchmark_timing, export_trajectory, read_trace_csv, resume, run, sweep_eta, write_sweep_csv,
    write_timing_table, RunConfig, RunReport,
};
use proxsearch::Error;

/// Proximal and relaxed cell-based architecture search.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the search seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured search and write report, trace, timing and checkpoint.
    Run { config: PathBuf },
    /// Run NASP for each regularizer weight over the configured seeds.
    SweepEta {
        config: PathBuf,
        /// Ascending, nonnegative; defaults to `experiment.etas`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        etas: Option<Vec<f64>>,
    },
    /// Median per-epoch phase times of the configured algorithms.
    Bench { config: PathBuf },
    /// Convert a trace CSV into the long-format trajectory plus switch counts.
    Export {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a search from a checkpoint.
    Resume { checkpoint: PathBuf },
}

fn load(cli: &Cli, path: &Path) -> Result<RunConfig, Error> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.algorithm.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.output.dir = dir.clone();
    }
    Ok(config)
}

fn print_summary(report: &RunReport, dir: &Path) {
    println!("{} after {} epochs", report.algorithm, report.epochs_completed);
    for c in &report.architecture {
        println!("  edge {} ({} -> {}): {} x {:.4}", c.edge, c.from, c.to, c.operation, c.coefficient);
    }
    if let Some(s) = &report.search {
        println!(
            "search: val loss {:.4}, val accuracy {:.4}, {} switches, {} cell parameters",
            s.val_loss, s.val_accuracy, s.total_switches, s.selected_param_count
        );
    }
    if let Some(r) = &report.retrain {
        println!("retrain: test loss {:.4}, test accuracy {:.4}", r.test_loss, r.test_accuracy);
    }
    println!("wrote {}", dir.join(&report.artifacts.report).display());
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Run { config } => {
            let config = load(cli, config)?;
            print_summary(&run(&config)?, &config.output.dir);
        }
        Command::SweepEta { config, etas } => {
            let config = load(cli, config)?;
            let etas = etas.clone().unwrap_or_else(|| config.experiment.etas.clone());
            let rows = sweep_eta(&config, &etas)?;
            create_dir(&config.output.dir)?;
            let path = config.output.dir.join("sweep_eta.csv");
            write_sweep_csv(&rows, &path)?;
            println!("eta\tmean_params\tmedian_params\tmean_test_acc");
            for r in &rows {
                println!(
                    "{}\t{:.1}\t{:.1}\t{:.4}",
                    r.eta, r.mean_param_count, r.median_param_count, r.mean_test_accuracy
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Bench { config } => {
            let config = load(cli, config)?;
            let rows = benchmark_timing(&config)?;
            create_dir(&config.output.dir)?;
            let path = config.output.dir.join("bench.csv");
            write_timing_table(&rows, &path)?;
            println!("algorithm\tupdate_A_s\tupdate_w_s\ttotal_s");
            for r in &rows {
                println!(
                    "{}\t{:.3e}\t{:.3e}\t{:.3e}",
                    r.algorithm, r.arch_update, r.weight_update, r.total
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Export { trace, out } => {
            let export = export_trajectory(&read_trace_csv(trace)?, out)?;
            println!(
                "wrote {} rows to {}; switches per edge {:?} (total {}) to {}",
                export.rows,
                out.display(),
                export.switch_counts,
                export.total_switches,
                export.switches_path.display()
            );
        }
        Command::Resume { checkpoint } => {
            if cli.seed.is_some() {
                return Err(Error::Config("--seed: a resumed run keeps its checkpointed seed".into()));
            }
            let report = resume(checkpoint, cli.out_dir.clone())?;
            print_summary(&report, &report.config.output.dir);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Config(_) => 2,
                Error::NumericalAbort { .. } => 3,
                _ => 1,
            })
        }
    }
}
