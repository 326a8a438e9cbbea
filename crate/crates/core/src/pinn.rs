//! Physics-informed loss for `d²Φ/dx² = b(x)` with zero Dirichlet data.
//!
//! The residual network has no weights: it differentiates the surrogate,
//! subtracts the source term and averages absolute residuals over a batch of
//! collocation points. Boundary residuals are `|Φ̃(lo)|` and `|Φ̃(hi)|`; each
//! endpoint is evaluated once, since averaging the same point `B_s` times
//! gives the same value.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::SurrogateJet;
use crate::qnn::{CircuitParams, CircuitProbe, CompiledCircuit};

/// Number of uniform grid points (boundaries included) used for the final
/// error norm.
pub const ERROR_GRID_POINTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// `b(x) = x (x − 1)` on `[0, 1]`.
    Quadratic,
    /// `b(x) = sin(2x)` on `[0, 2π]`.
    Sinusoidal,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Quadratic => "quadratic",
            SourceKind::Sinusoidal => "sinusoidal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoissonProblem {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub source: SourceKind,
    pub bc_lo: f64,
    pub bc_hi: f64,
}

impl PoissonProblem {
    pub fn new(source: SourceKind) -> Self {
        let domain_hi = match source {
            SourceKind::Quadratic => 1.0,
            SourceKind::Sinusoidal => 2.0 * PI,
        };
        Self {
            domain_lo: 0.0,
            domain_hi,
            source,
            bc_lo: 0.0,
            bc_hi: 0.0,
        }
    }

    pub fn quadratic() -> Self {
        Self::new(SourceKind::Quadratic)
    }

    pub fn sinusoidal() -> Self {
        Self::new(SourceKind::Sinusoidal)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain_lo && x <= self.domain_hi
    }

    fn check(&self, x: f64) -> Result<()> {
        if !self.contains(x) {
            return Err(Error::invalid(format!(
                "x = {x} outside [{}, {}]",
                self.domain_lo, self.domain_hi
            )));
        }
        Ok(())
    }

    /// `b(x)`.
    pub fn source_term(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.source {
            SourceKind::Quadratic => x * (x - 1.0),
            SourceKind::Sinusoidal => (2.0 * x).sin(),
        })
    }

    /// Exact solution `Φ(x)`.
    pub fn analytic_solution(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.source {
            SourceKind::Quadratic => x.powi(4) / 12.0 - x.powi(3) / 6.0 + x / 12.0,
            SourceKind::Sinusoidal => -(2.0 * x).sin() / 4.0,
        })
    }

    pub fn analytic_derivative(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.source {
            SourceKind::Quadratic => x.powi(3) / 3.0 - x * x / 2.0 + 1.0 / 12.0,
            SourceKind::Sinusoidal => -(2.0 * x).cos() / 2.0,
        })
    }

    /// Uniform grid of `n` points including both endpoints.
    pub fn uniform_grid(&self, n: usize) -> Vec<f64> {
        let step = (self.domain_hi - self.domain_lo) / (n - 1) as f64;
        (0..n)
            .map(|j| {
                if j + 1 == n {
                    self.domain_hi
                } else {
                    self.domain_lo + j as f64 * step
                }
            })
            .collect()
    }
}

/// Anything that can stand in for `Φ̃`: the quantum circuit, or an exact
/// function when validating the residual machinery.
pub trait Surrogate {
    /// `(Φ̃(x), squared state norm)`.
    fn value(&self, x: f64) -> Result<(f64, f64)>;
    fn jet(&self, x: f64) -> Result<SurrogateJet>;
}

impl Surrogate for CompiledCircuit {
    fn value(&self, x: f64) -> Result<(f64, f64)> {
        let q = self.evaluate(x)?;
        Ok((q.mean, q.state_norm))
    }

    fn jet(&self, x: f64) -> Result<SurrogateJet> {
        self.evaluate_jet(x)
    }
}

/// The analytic solution used as a surrogate.
#[derive(Clone, Copy, Debug)]
pub struct ExactSolution(pub PoissonProblem);

impl Surrogate for ExactSolution {
    fn value(&self, x: f64) -> Result<(f64, f64)> {
        Ok((self.0.analytic_solution(x)?, 1.0))
    }

    fn jet(&self, x: f64) -> Result<SurrogateJet> {
        // Φ″ = b by construction.
        Ok(SurrogateJet {
            phi: self.0.analytic_solution(x)?,
            dphi: self.0.analytic_derivative(x)?,
            d2phi: self.0.source_term(x)?,
            norm_sqr: 1.0,
        })
    }
}

/// Interior collocation points for one optimizer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationBatch {
    inner_xs: Vec<f64>,
}

impl CollocationBatch {
    /// Points must lie strictly inside the domain; nothing is clamped.
    pub fn new(problem: &PoissonProblem, inner_xs: Vec<f64>) -> Result<Self> {
        if inner_xs.is_empty() {
            return Err(Error::invalid("collocation batch is empty"));
        }
        if let Some(x) = inner_xs
            .iter()
            .find(|&&x| !(x > problem.domain_lo && x < problem.domain_hi))
        {
            return Err(Error::invalid(format!(
                "collocation point {x} not inside ({}, {})",
                problem.domain_lo, problem.domain_hi
            )));
        }
        Ok(Self { inner_xs })
    }

    pub fn points(&self) -> &[f64] {
        &self.inner_xs
    }

    pub fn len(&self) -> usize {
        self.inner_xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner_xs.is_empty()
    }
}

/// `batch_size` i.i.d. uniform draws over the open domain.
pub fn sample_collocation<R: Rng + ?Sized>(
    rng: &mut R,
    batch_size: usize,
    problem: &PoissonProblem,
) -> Result<CollocationBatch> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let (lo, hi) = (problem.domain_lo, problem.domain_hi);
    let xs = (0..batch_size)
        .map(|_| loop {
            let x = rng.random_range(lo..hi);
            if x > lo {
                break x;
            }
        })
        .collect();
    CollocationBatch::new(problem, xs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub inner: f64,
    pub bc_lo: f64,
    pub bc_hi: f64,
    /// Smallest squared state norm seen while evaluating this loss.
    pub min_norm: f64,
}

impl LossBreakdown {
    fn assemble(inner: f64, bc_lo: f64, bc_hi: f64, min_norm: f64) -> Self {
        Self {
            total: inner + bc_lo + bc_hi,
            inner,
            bc_lo,
            bc_hi,
            min_norm,
        }
    }
}

fn boundary_terms<S: Surrogate + ?Sized>(surrogate: &S, problem: &PoissonProblem) -> Result<(f64, f64, f64)> {
    let (lo, n_lo) = surrogate.value(problem.domain_lo)?;
    let (hi, n_hi) = surrogate.value(problem.domain_hi)?;
    Ok(((lo - problem.bc_lo).abs(), (hi - problem.bc_hi).abs(), n_lo.min(n_hi)))
}

/// Batch loss with exact second derivatives:
/// `mean |Φ̃″(xᵢ) − b(xᵢ)| + |Φ̃(lo)| + |Φ̃(hi)|`.
pub fn loss<S: Surrogate + ?Sized>(
    surrogate: &S,
    problem: &PoissonProblem,
    batch: &CollocationBatch,
) -> Result<LossBreakdown> {
    let (bc_lo, bc_hi, mut min_norm) = boundary_terms(surrogate, problem)?;
    let mut sum = 0.0;
    for &x in batch.points() {
        let jet = surrogate.jet(x)?;
        sum += (jet.d2phi - problem.source_term(x)?).abs();
        min_norm = min_norm.min(jet.norm_sqr);
    }
    Ok(LossBreakdown::assemble(sum / batch.len() as f64, bc_lo, bc_hi, min_norm))
}

/// Loss with the second derivative replaced by the three-point stencil on a
/// fixed uniform grid of `grid_n` nodes.
pub fn fd_loss<S: Surrogate + ?Sized>(surrogate: &S, problem: &PoissonProblem, grid_n: usize) -> Result<LossBreakdown> {
    if grid_n < 3 {
        return Err(Error::invalid(format!("finite-difference grid needs >= 3 nodes, got {grid_n}")));
    }
    let grid = problem.uniform_grid(grid_n);
    let dx = (problem.domain_hi - problem.domain_lo) / (grid_n - 1) as f64;
    let mut values = Vec::with_capacity(grid_n);
    let mut min_norm = f64::INFINITY;
    for &x in &grid {
        let (v, n) = surrogate.value(x)?;
        values.push(v);
        min_norm = min_norm.min(n);
    }
    let mut sum = 0.0;
    for j in 1..grid_n - 1 {
        let stencil = (values[j + 1] - 2.0 * values[j] + values[j - 1]) / (dx * dx);
        sum += (stencil - problem.source_term(grid[j])?).abs();
    }
    let bc_lo = (values[0] - problem.bc_lo).abs();
    let bc_hi = (values[grid_n - 1] - problem.bc_hi).abs();
    Ok(LossBreakdown::assemble(sum / (grid_n - 2) as f64, bc_lo, bc_hi, min_norm))
}

/// `‖Φ̃ − Φ‖₂` over the 32-point uniform grid.
pub fn error_norm<S: Surrogate + ?Sized>(surrogate: &S, problem: &PoissonProblem) -> Result<f64> {
    let mut sum = 0.0;
    for x in problem.uniform_grid(ERROR_GRID_POINTS) {
        let diff = surrogate.value(x)?.0 - problem.analytic_solution(x)?;
        sum += diff * diff;
    }
    Ok(sum.sqrt())
}

/// `‖Φ‖₂` over the same grid as [`error_norm`].
pub fn solution_norm(problem: &PoissonProblem) -> f64 {
    problem
        .uniform_grid(ERROR_GRID_POINTS)
        .into_iter()
        .map(|x| problem.analytic_solution(x).expect("grid inside domain").powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Where the residual is evaluated during one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Collocation {
    /// Exact derivatives at random interior points.
    Batch(CollocationBatch),
    /// Finite-difference stencil on a fixed uniform grid with this many nodes.
    Grid(usize),
}

/// The training objective over a flat parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct PinnObjective {
    pub problem: PoissonProblem,
    pub cutoff: usize,
    /// Central-difference step for parameter gradients.
    pub param_step: f64,
}

impl PinnObjective {
    pub fn new(problem: PoissonProblem, cutoff: usize) -> Self {
        Self {
            problem,
            cutoff,
            param_step: crate::jets::DEFAULT_PARAM_STEP,
        }
    }

    pub fn params(&self, flat: &[f64]) -> Result<CircuitParams> {
        CircuitParams::from_flat(flat, self.cutoff)
    }

    pub fn evaluate<S: Surrogate + ?Sized>(&self, surrogate: &S, collocation: &Collocation) -> Result<LossBreakdown> {
        match collocation {
            Collocation::Batch(batch) => loss(surrogate, &self.problem, batch),
            Collocation::Grid(n) => fd_loss(surrogate, &self.problem, *n),
        }
    }

    pub fn loss(&self, flat: &[f64], collocation: &Collocation) -> Result<LossBreakdown> {
        let circuit = CompiledCircuit::compile(&self.params(flat)?)?;
        self.evaluate(&circuit, collocation)
    }

    /// Loss at `flat` and its central-difference gradient. Each probe reuses
    /// the cached products of the layers it does not touch.
    pub fn loss_and_gradient(&self, flat: &[f64], collocation: &Collocation) -> Result<(LossBreakdown, Vec<f64>)> {
        let h = self.param_step;
        let probe = CircuitProbe::new(&self.params(flat)?)?;
        let breakdown = self.evaluate(&probe.base(), collocation)?;
        let mut grad = Vec::with_capacity(flat.len());
        for (i, &theta) in flat.iter().enumerate() {
            let plus = self.evaluate(&probe.perturbed(i, theta + h)?, collocation)?.total;
            let minus = self.evaluate(&probe.perturbed(i, theta - h)?, collocation)?.total;
            grad.push((plus - minus) / (2.0 * h));
        }
        Ok((breakdown, grad))
    }

    pub fn error_norm(&self, flat: &[f64]) -> Result<f64> {
        error_norm(&CompiledCircuit::compile(&self.params(flat)?)?, &self.problem)
    }
}
