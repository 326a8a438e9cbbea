use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qpinn::experiment::{run_experiment, run_suite, ExperimentConfig, ResidualMode, SuiteName};
use qpinn::optim::OptimizerKind;
use qpinn::pinn::SourceKind;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Train a continuous-variable quantum network to solve a 1-D Poisson problem.
#[derive(Debug, Parser)]
#[command(name = "qpinn", version)]
struct Cli {
    #[arg(long, value_enum, default_value = "quadratic")]
    problem: SourceKind,
    #[arg(long, value_enum, default_value = "sgd")]
    optimizer: OptimizerKind,
    /// Learning rate [default: 0.01 quadratic, 0.0001 sinusoidal].
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum, default_value = "ad")]
    residual: ResidualMode,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Fock-space cutoff [default: 50 quadratic, 125 sinusoidal].
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Switch from SGD to L-BFGS after this many iterations.
    #[arg(long)]
    switch_at: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run a sweep instead of a single experiment.
    #[arg(long, value_enum)]
    suite: Option<SuiteName>,
}

impl Cli {
    fn config(&self) -> ExperimentConfig {
        let base = ExperimentConfig::baseline(self.problem);
        ExperimentConfig {
            optimizer: self.optimizer,
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            residual: self.residual,
            layers: self.layers,
            batch_size: self.batch,
            iterations: self.iters,
            cutoff: self.cutoff.unwrap_or(base.cutoff),
            seed: self.seed,
            switch_at: self.switch_at,
            ..base
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let config = cli.config();
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }

    if let Some(suite) = cli.suite {
        return match run_suite(suite, &config, &cli.out) {
            Ok(results) => {
                let failed = results.iter().filter(|r| r.failure.is_some()).count();
                for r in &results {
                    match (&r.summary, &r.failure) {
                        (Some(s), _) => println!("{}: error norm {:e}, relative {:.4}", r.label, s.final_error_norm, s.relative_error),
                        (None, Some(f)) => println!("{}: FAILED {f}", r.label),
                        (None, None) => {}
                    }
                }
                println!("summary: {}", cli.out.join(suite.name()).join("summary.csv").display());
                if failed > 0 {
                    ExitCode::from(EXIT_NUMERICAL)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_NUMERICAL)
            }
        };
    }

    match run_experiment(&config) {
        Ok(trace) => {
            let label = config.label();
            match trace.write(&cli.out, &label) {
                Ok((csv, json)) => {
                    let s = &trace.summary;
                    println!(
                        "{label}: {} iterations, final loss {:e}, error norm {:e} (relative {:.4}), {:.1} s",
                        s.iterations, s.final_loss, s.final_error_norm, s.relative_error, s.wall_seconds
                    );
                    println!("trace: {}\nsummary: {}", csv.display(), json.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: writing outputs: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Ok(echo) = serde_json::to_string(&e.config) {
                eprintln!("config: {echo}");
            }
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG })
        }
    }
}
