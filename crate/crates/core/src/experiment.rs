//! Training runs and parameter sweeps.
//!
//! Seeding: one master seed drives independent ChaCha8 streams. Stream
//! `(purpose << 40) | index` of `ChaCha8Rng::seed_from_u64(seed)` is used
//! for parameter initialization (purpose 1, index 0), the collocation batch
//! of iteration `k` (purpose 2, index `k`) and SPSA perturbations
//! (purpose 3, index 0). Changing the batch size therefore leaves the
//! initial parameters untouched.

use std::cell::RefCell;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{
    run_hybrid, GradientOptimizer, HybridSchedule, OptimizerConfig, OptimizerKind, Spsa, SpsaConfig,
    StochasticObjective,
};
use crate::pinn::{sample_collocation, solution_norm, Collocation, LossBreakdown, PinnObjective, PoissonProblem, SourceKind};
use crate::qnn::{init_params, PARAMS_PER_LAYER};

/// Header of every trace CSV.
pub const TRACE_HEADER: &str = "iter,loss,loss_ip,loss_bc_lo,loss_bc_hi,min_norm";

/// Default SGD-to-L-BFGS switch point of the hybrid schedule.
pub const DEFAULT_SWITCH: usize = 80;

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_SPSA: u64 = 3;

fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// Exact derivatives at random collocation points.
    Ad,
    /// Three-point stencil on a fixed uniform grid.
    Fd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problem: SourceKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub residual: ResidualMode,
    pub layers: usize,
    /// Collocation points per iteration; also the FD grid size.
    pub batch_size: usize,
    pub iterations: usize,
    pub cutoff: usize,
    pub seed: u64,
    /// Iteration after which SGD hands over to L-BFGS.
    pub switch_at: Option<usize>,
}

impl ExperimentConfig {
    pub fn baseline(problem: SourceKind) -> Self {
        let (learning_rate, cutoff) = match problem {
            SourceKind::Quadratic => (0.01, 50),
            SourceKind::Sinusoidal => (0.0001, 125),
        };
        Self {
            problem,
            optimizer: OptimizerKind::Sgd,
            learning_rate,
            residual: ResidualMode::Ad,
            layers: 4,
            batch_size: 32,
            iterations: 500,
            cutoff,
            seed: 0,
            switch_at: None,
        }
    }

    pub fn num_params(&self) -> usize {
        PARAMS_PER_LAYER * self.layers
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("batch size", self.batch_size),
            ("iterations", self.iterations),
            ("cutoff", self.cutoff),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.residual == ResidualMode::Fd && self.batch_size < 3 {
            return Err(Error::invalid("finite-difference residual needs a batch of at least 3"));
        }
        OptimizerConfig::with_defaults(self.optimizer, self.learning_rate).validate()?;
        if let Some(s) = self.switch_at {
            if self.optimizer != OptimizerKind::Sgd {
                return Err(Error::invalid("a switch iteration requires the sgd optimizer"));
            }
            if s == 0 || s > self.iterations {
                return Err(Error::invalid(format!(
                    "switch iteration must lie in 1..={}, got {s}",
                    self.iterations
                )));
            }
        }
        Ok(())
    }

    /// File stem used for this run's trace.
    pub fn label(&self) -> String {
        let mut label = format!(
            "{}_{}_{}_L{}_B{}_seed{}",
            self.problem.name(),
            self.optimizer.name(),
            match self.residual {
                ResidualMode::Ad => "ad",
                ResidualMode::Fd => "fd",
            },
            self.layers,
            self.batch_size,
            self.seed
        );
        if let Some(s) = self.switch_at {
            label.push_str(&format!("_lbfgs{s}"));
        }
        label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSummary {
    pub final_error_norm: f64,
    /// Error norm divided by the norm of the exact solution on the same grid.
    pub relative_error: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub num_params: usize,
    /// `completed`, or why L-BFGS stopped early.
    pub stop_reason: String,
    pub wall_seconds: f64,
    pub final_params: Vec<f64>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub summary: TraceSummary,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for row in &self.rows {
            let l = &row.loss;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                row.iteration, l.total, l.inner, l.bc_lo, l.bc_hi, l.min_norm
            ));
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&csv, self.to_csv())?;
        let mut f = fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &self.summary)?;
        f.write_all(b"\n")?;
        Ok((csv, json))
    }
}

/// A failed run, with the iteration it failed at (0 before training).
#[derive(Debug, thiserror::Error)]
#[error("run {label} failed at iteration {iteration}: {error}")]
pub struct RunError {
    pub iteration: usize,
    pub label: String,
    #[source]
    pub error: Error,
    pub config: ExperimentConfig,
}

impl RunError {
    pub fn is_numerical(&self) -> bool {
        self.error.is_numerical()
    }
}

// Parameter-range violations during training mean the optimizer walked the
// parameters somewhere the simulation cannot follow.
fn as_training_error(e: Error, iteration: usize) -> Error {
    match e {
        Error::InvalidArgument(reason) => Error::Divergence { iteration, reason },
        other => other,
    }
}

type LastEval = Rc<RefCell<Option<(Vec<f64>, LossBreakdown)>>>;

struct TrainingObjective {
    objective: PinnObjective,
    seed: u64,
    batch_size: usize,
    residual: ResidualMode,
    frozen: Option<usize>,
    last: LastEval,
}

impl TrainingObjective {
    fn collocation(&self, iteration: usize) -> Result<Collocation> {
        match self.residual {
            ResidualMode::Fd => Ok(Collocation::Grid(self.batch_size)),
            ResidualMode::Ad => {
                let k = self.frozen.unwrap_or(iteration);
                let mut rng = stream_rng(self.seed, STREAM_BATCH, k as u64);
                Ok(Collocation::Batch(sample_collocation(&mut rng, self.batch_size, &self.objective.problem)?))
            }
        }
    }

    fn breakdown_and_grad(&self, params: &[f64], iteration: usize) -> Result<(LossBreakdown, Vec<f64>)> {
        let coll = self.collocation(iteration)?;
        self.objective.loss_and_gradient(params, &coll)
    }

    fn breakdown(&self, params: &[f64], iteration: usize) -> Result<LossBreakdown> {
        let coll = self.collocation(iteration)?;
        self.objective.loss(params, &coll)
    }
}

impl StochasticObjective for TrainingObjective {
    fn loss_and_grad(&mut self, params: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)> {
        let (b, g) = self.breakdown_and_grad(params, iteration)?;
        *self.last.borrow_mut() = Some((params.to_vec(), b));
        Ok((b.total, g))
    }

    fn freeze(&mut self, iteration: usize) {
        self.frozen = Some(iteration);
    }
}

fn check_loss(b: &LossBreakdown, iteration: usize) -> Result<()> {
    if !b.total.is_finite() {
        return Err(Error::Divergence {
            iteration,
            reason: "non-finite loss".into(),
        });
    }
    Ok(())
}

/// Runs one training experiment.
pub fn run_experiment(config: &ExperimentConfig) -> std::result::Result<TrainTrace, RunError> {
    let started = Instant::now();
    let fail = |iteration: usize, error: Error| RunError {
        iteration,
        label: config.label(),
        error,
        config: *config,
    };
    config.validate().map_err(|e| fail(0, e))?;

    let problem = PoissonProblem::new(config.problem);
    let init = init_params(config.layers, config.cutoff, &mut stream_rng(config.seed, STREAM_INIT, 0))
        .map_err(|e| fail(0, e))?;
    let mut params = init.to_flat();
    let last: LastEval = Rc::new(RefCell::new(None));
    let mut objective = TrainingObjective {
        objective: PinnObjective::new(problem, config.cutoff),
        seed: config.seed,
        batch_size: config.batch_size,
        residual: config.residual,
        frozen: None,
        last: Rc::clone(&last),
    };
    let mut rows = Vec::with_capacity(config.iterations);
    let mut stop_reason = "completed".to_string();

    match config.optimizer {
        OptimizerKind::Spsa => {
            let mut spsa = Spsa::new(SpsaConfig::new(config.learning_rate), config.iterations).map_err(|e| fail(0, e))?;
            let mut rng = stream_rng(config.seed, STREAM_SPSA, 0);
            for k in 1..=config.iterations {
                let mut step = || -> Result<LossBreakdown> {
                    let breakdown = objective.breakdown(&params, k)?;
                    check_loss(&breakdown, k)?;
                    let coll = objective.collocation(k)?;
                    let pinn = &objective.objective;
                    spsa.step(&mut params, |p| Ok(pinn.loss(p, &coll)?.total), &mut rng)?;
                    Ok(breakdown)
                };
                let breakdown = step().map_err(|e| fail(k, as_training_error(e, k)))?;
                rows.push(TraceRow { iteration: k, loss: breakdown });
            }
        }
        OptimizerKind::Lbfgs | OptimizerKind::Sgd if config.optimizer == OptimizerKind::Lbfgs || config.switch_at.is_some() => {
            let switch = config.switch_at.unwrap_or(0);
            let schedule = HybridSchedule::new(switch, config.learning_rate);
            let mut failure_at = 0;
            let mut pending = Vec::with_capacity(config.iterations);
            let outcome = run_hybrid(&schedule, &mut objective, &params, config.iterations, |k, p, _| {
                failure_at = k;
                let cached = last.borrow().as_ref().filter(|(q, _)| q.as_slice() == p).map(|(_, b)| *b);
                pending.push((k, cached, p.to_vec()));
            });
            let outcome = outcome.map_err(|e| {
                let k = match &e {
                    Error::Divergence { iteration, .. } => *iteration,
                    _ => failure_at,
                };
                fail(k, as_training_error(e, k))
            })?;
            // Rows whose evaluation was not the most recent one are recomputed.
            let mut resolved = Vec::with_capacity(pending.len());
            for (k, cached, p) in pending {
                let loss = match cached {
                    Some(b) => b,
                    None => objective
                        .breakdown(&p, k)
                        .map_err(|e| fail(k, as_training_error(e, k)))?,
                };
                resolved.push(TraceRow { iteration: k, loss });
            }
            params = outcome.params;
            if let Some(status) = outcome.lbfgs_status {
                if resolved.len() < config.iterations {
                    stop_reason = serde_json::to_value(status)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_else(|| format!("{status:?}"));
                }
            }
            return finish(config, &problem, &objective.objective, params, resolved, stop_reason, started)
                .map_err(|e| fail(config.iterations, e));
        }
        kind => {
            let mut opt = GradientOptimizer::new(OptimizerConfig::with_defaults(kind, config.learning_rate))
                .map_err(|e| fail(0, e))?;
            for k in 1..=config.iterations {
                let mut step = || -> Result<LossBreakdown> {
                    let (breakdown, grad) = objective.breakdown_and_grad(&params, k)?;
                    check_loss(&breakdown, k)?;
                    opt.step(&mut params, &grad)?;
                    Ok(breakdown)
                };
                let breakdown = step().map_err(|e| fail(k, as_training_error(e, k)))?;
                rows.push(TraceRow { iteration: k, loss: breakdown });
            }
        }
    }
    finish(config, &problem, &objective.objective, params, rows, stop_reason, started)
        .map_err(|e| fail(config.iterations, e))
}

fn finish(
    config: &ExperimentConfig,
    problem: &PoissonProblem,
    objective: &PinnObjective,
    params: Vec<f64>,
    rows: Vec<TraceRow>,
    stop_reason: String,
    started: Instant,
) -> Result<TrainTrace> {
    let final_error_norm = objective.error_norm(&params)?;
    let final_loss = rows.last().map_or(f64::NAN, |r| r.loss.total);
    Ok(TrainTrace {
        summary: TraceSummary {
            final_error_norm,
            relative_error: final_error_norm / solution_norm(problem),
            final_loss,
            iterations: rows.len(),
            num_params: config.num_params(),
            stop_reason,
            wall_seconds: started.elapsed().as_secs_f64(),
            final_params: params,
            config: *config,
        },
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Optimizers,
    #[value(name = "ad_vs_fd")]
    AdVsFd,
    Depth,
    Batch,
}

impl SuiteName {
    pub fn name(self) -> &'static str {
        match self {
            SuiteName::Optimizers => "optimizers",
            SuiteName::AdVsFd => "ad_vs_fd",
            SuiteName::Depth => "depth",
            SuiteName::Batch => "batch",
        }
    }

    /// The cells of the sweep, everything else taken from `base`.
    pub fn cells(self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = *base;
            c.switch_at = None;
            f(&mut c);
            c
        };
        match self {
            SuiteName::Optimizers => {
                let mut cells: Vec<_> = [
                    OptimizerKind::Sgd,
                    OptimizerKind::Rmsprop,
                    OptimizerKind::Adam,
                    OptimizerKind::Nadam,
                    OptimizerKind::Adadelta,
                    OptimizerKind::Spsa,
                ]
                .into_iter()
                .map(|kind| with(&|c| c.optimizer = kind))
                .collect();
                cells.push(with(&|c| {
                    c.optimizer = OptimizerKind::Sgd;
                    c.switch_at = Some(base.switch_at.unwrap_or(DEFAULT_SWITCH).min(c.iterations));
                }));
                cells
            }
            // Finite differences are paired with Adam, since SGD on a fixed
            // grid hops between a few local minima.
            SuiteName::AdVsFd => vec![
                with(&|c| {
                    c.residual = ResidualMode::Ad;
                    c.optimizer = OptimizerKind::Sgd;
                }),
                with(&|c| {
                    c.residual = ResidualMode::Fd;
                    c.optimizer = OptimizerKind::Adam;
                }),
            ],
            SuiteName::Depth => [2, 4, 8].into_iter().map(|l| with(&|c| c.layers = l)).collect(),
            SuiteName::Batch => [32, 64, 128].into_iter().map(|b| with(&|c| c.batch_size = b)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub label: String,
    pub config: ExperimentConfig,
    /// `None` when the cell failed.
    pub summary: Option<TraceSummary>,
    pub failure: Option<String>,
}

/// Runs every cell, writing each trace plus `summary.csv` into `out`.
/// Failed cells are recorded and the sweep continues.
pub fn run_suite(suite: SuiteName, base: &ExperimentConfig, out: &Path) -> Result<Vec<CellResult>> {
    let dir = out.join(suite.name());
    fs::create_dir_all(&dir)?;
    let mut results = Vec::new();
    for config in suite.cells(base) {
        let label = config.label();
        let result = match run_experiment(&config) {
            Ok(trace) => {
                trace.write(&dir, &label)?;
                CellResult {
                    label,
                    config,
                    summary: Some(trace.summary),
                    failure: None,
                }
            }
            Err(e) => CellResult {
                label,
                config,
                summary: None,
                failure: Some(e.to_string()),
            },
        };
        results.push(result);
    }
    fs::write(dir.join("summary.csv"), summary_table(&results))?;
    Ok(results)
}

pub fn summary_table(results: &[CellResult]) -> String {
    let mut out = String::from("cell,optimizer,residual,layers,batch,num_params,iterations,final_loss,error_norm,relative_error,status\n");
    for r in results {
        let c = &r.config;
        let residual = match c.residual {
            ResidualMode::Ad => "ad",
            ResidualMode::Fd => "fd",
        };
        let optimizer = match c.switch_at {
            Some(s) => format!("sgd+lbfgs@{s}"),
            None => c.optimizer.name().to_string(),
        };
        let (iters, loss, err, rel, status) = match (&r.summary, &r.failure) {
            (Some(s), _) => (
                s.iterations.to_string(),
                format!("{:e}", s.final_loss),
                format!("{:e}", s.final_error_norm),
                format!("{:e}", s.relative_error),
                s.stop_reason.clone(),
            ),
            (None, failure) => (
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {}", failure.as_deref().unwrap_or("unknown").replace(',', ";")),
            ),
        };
        out.push_str(&format!(
            "{},{optimizer},{residual},{},{},{},{iters},{loss},{err},{rel},{status}\n",
            r.label,
            c.layers,
            c.batch_size,
            c.num_params()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(optimizer: OptimizerKind) -> ExperimentConfig {
        ExperimentConfig {
            optimizer,
            layers: 1,
            batch_size: 4,
            iterations: 3,
            cutoff: 20,
            ..ExperimentConfig::baseline(SourceKind::Quadratic)
        }
    }

    #[test]
    fn baselines() {
        let q = ExperimentConfig::baseline(SourceKind::Quadratic);
        assert_eq!((q.learning_rate, q.cutoff, q.batch_size, q.iterations, q.layers), (0.01, 50, 32, 500, 4));
        let s = ExperimentConfig::baseline(SourceKind::Sinusoidal);
        assert_eq!((s.learning_rate, s.cutoff), (0.0001, 125));
    }

    #[test]
    fn validation() {
        let mut c = tiny(OptimizerKind::Sgd);
        c.layers = 0;
        assert!(c.validate().is_err());
        let mut c = tiny(OptimizerKind::Adam);
        c.switch_at = Some(2);
        assert!(c.validate().is_err());
        let mut c = tiny(OptimizerKind::Sgd);
        c.learning_rate = -1.0;
        let err = run_experiment(&c).unwrap_err();
        assert_eq!(err.iteration, 0);
        assert!(!err.is_numerical());
    }

    #[test]
    fn init_stream_ignores_batch_size() {
        let mut a = tiny(OptimizerKind::Sgd);
        a.iterations = 1;
        let mut b = a;
        b.batch_size = 9;
        let pa = init_params(1, 20, &mut stream_rng(a.seed, STREAM_INIT, 0)).unwrap();
        let pb = init_params(1, 20, &mut stream_rng(b.seed, STREAM_INIT, 0)).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn every_optimizer_produces_a_full_trace() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Rmsprop,
            OptimizerKind::Adam,
            OptimizerKind::Nadam,
            OptimizerKind::Adadelta,
            OptimizerKind::Spsa,
        ] {
            let t = run_experiment(&tiny(kind)).unwrap();
            assert_eq!(t.rows.len(), 3, "{kind:?}");
            let iters: Vec<_> = t.rows.iter().map(|r| r.iteration).collect();
            assert_eq!(iters, vec![1, 2, 3]);
            for r in &t.rows {
                assert!(r.loss.total >= 0.0 && r.loss.min_norm > 0.99 && r.loss.min_norm <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn hybrid_rows_match_direct_evaluation() {
        let mut c = tiny(OptimizerKind::Sgd);
        c.iterations = 6;
        c.switch_at = Some(2);
        let t = run_experiment(&c).unwrap();
        assert!(!t.rows.is_empty() && t.rows.len() <= 6);
        assert_eq!(t.rows.len() == 6, t.summary.stop_reason == "completed");
        let sgd = run_experiment(&ExperimentConfig { iterations: 2, switch_at: None, ..c }).unwrap();
        assert_eq!(t.rows[..2], sgd.rows[..]);
    }

    #[test]
    fn fd_residual_runs() {
        let mut c = tiny(OptimizerKind::Adam);
        c.residual = ResidualMode::Fd;
        c.batch_size = 5;
        let t = run_experiment(&c).unwrap();
        assert_eq!(t.rows.len(), 3);
    }

    #[test]
    fn csv_format_and_determinism() {
        let c = tiny(OptimizerKind::Sgd);
        let a = run_experiment(&c).unwrap().to_csv();
        let b = run_experiment(&c).unwrap().to_csv();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[0], "1");
        assert!(first[1..].iter().all(|v| v.parse::<f64>().is_ok()));
    }

    #[test]
    fn suite_cells() {
        let base = ExperimentConfig::baseline(SourceKind::Quadratic);
        let opt = SuiteName::Optimizers.cells(&base);
        assert_eq!(opt.len(), 7);
        assert_eq!(opt[6].switch_at, Some(DEFAULT_SWITCH));
        let depth: Vec<_> = SuiteName::Depth.cells(&base).iter().map(|c| c.num_params()).collect();
        assert_eq!(depth, vec![14, 28, 56]);
        let batch: Vec<_> = SuiteName::Batch.cells(&base).iter().map(|c| c.batch_size).collect();
        assert_eq!(batch, vec![32, 64, 128]);
        let advfd = SuiteName::AdVsFd.cells(&base);
        assert_eq!(advfd[1].residual, ResidualMode::Fd);
        assert_eq!(advfd[1].optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn summary_table_rows_match_cells() {
        let ok = CellResult {
            label: "a".into(),
            config: tiny(OptimizerKind::Sgd),
            summary: None,
            failure: Some("boom, really".into()),
        };
        let table = summary_table(&[ok.clone(), ok]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().ends_with("failed: boom; really"));
    }
}
