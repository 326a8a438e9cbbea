//! Optimizers over flat parameter vectors.
//!
//! The first-order methods follow the update rules of the Keras
//! implementations (no momentum for SGD, non-centered RMSprop, Nadam with the
//! momentum-cache schedule). SPSA uses Spall's gain sequences. L-BFGS is the
//! two-loop recursion with a strong-Wolfe line search; parameters are
//! unbounded, so this is also what L-BFGS-B reduces to here.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
    Nadam,
    Adadelta,
    Spsa,
    Lbfgs,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Nadam => "nadam",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Spsa => "spsa",
            OptimizerKind::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpsaConfig {
    /// Target magnitude of the first update.
    pub learning_rate: f64,
    /// Stability constant `A`; `None` means 10% of the run length.
    pub stability: Option<f64>,
    /// Perturbation size `c`.
    pub perturbation: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpsaConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            stability: None,
            perturbation: 0.05,
            alpha: 0.602,
            gamma: 0.101,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            max_line_search_evals: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Rmsprop {
        learning_rate: f64,
        rho: f64,
        epsilon: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Nadam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Adadelta {
        learning_rate: f64,
        rho: f64,
        epsilon: f64,
    },
    Spsa(SpsaConfig),
    Lbfgs(LbfgsConfig),
}

impl OptimizerConfig {
    /// Default hyperparameters for `kind` with the given learning rate.
    /// L-BFGS ignores the learning rate.
    pub fn with_defaults(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerConfig::Sgd { learning_rate },
            OptimizerKind::Rmsprop => OptimizerConfig::Rmsprop {
                learning_rate,
                rho: 0.9,
                epsilon: 1e-7,
            },
            OptimizerKind::Adam => OptimizerConfig::Adam {
                learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-7,
            },
            OptimizerKind::Nadam => OptimizerConfig::Nadam {
                learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-7,
            },
            OptimizerKind::Adadelta => OptimizerConfig::Adadelta {
                learning_rate,
                rho: 0.95,
                epsilon: 1e-7,
            },
            OptimizerKind::Spsa => OptimizerConfig::Spsa(SpsaConfig::new(learning_rate)),
            OptimizerKind::Lbfgs => OptimizerConfig::Lbfgs(LbfgsConfig::default()),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerConfig::Sgd { .. } => OptimizerKind::Sgd,
            OptimizerConfig::Rmsprop { .. } => OptimizerKind::Rmsprop,
            OptimizerConfig::Adam { .. } => OptimizerKind::Adam,
            OptimizerConfig::Nadam { .. } => OptimizerKind::Nadam,
            OptimizerConfig::Adadelta { .. } => OptimizerKind::Adadelta,
            OptimizerConfig::Spsa(_) => OptimizerKind::Spsa,
            OptimizerConfig::Lbfgs(_) => OptimizerKind::Lbfgs,
        }
    }

    pub fn learning_rate(&self) -> Option<f64> {
        match *self {
            OptimizerConfig::Sgd { learning_rate }
            | OptimizerConfig::Rmsprop { learning_rate, .. }
            | OptimizerConfig::Adam { learning_rate, .. }
            | OptimizerConfig::Nadam { learning_rate, .. }
            | OptimizerConfig::Adadelta { learning_rate, .. } => Some(learning_rate),
            OptimizerConfig::Spsa(c) => Some(c.learning_rate),
            OptimizerConfig::Lbfgs(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.learning_rate() {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
            }
        }
        let in_unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
            Ok(())
        };
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        match *self {
            OptimizerConfig::Sgd { .. } => Ok(()),
            OptimizerConfig::Rmsprop { rho, epsilon, .. } | OptimizerConfig::Adadelta { rho, epsilon, .. } => {
                in_unit("rho", rho)?;
                positive("epsilon", epsilon)
            }
            OptimizerConfig::Adam {
                beta1, beta2, epsilon, ..
            }
            | OptimizerConfig::Nadam {
                beta1, beta2, epsilon, ..
            } => {
                in_unit("beta1", beta1)?;
                in_unit("beta2", beta2)?;
                positive("epsilon", epsilon)
            }
            OptimizerConfig::Spsa(c) => {
                positive("perturbation", c.perturbation)?;
                if let Some(a) = c.stability {
                    if !(a >= 0.0) {
                        return Err(Error::invalid("SPSA stability constant must be >= 0"));
                    }
                }
                Ok(())
            }
            OptimizerConfig::Lbfgs(c) => {
                if c.memory == 0 {
                    return Err(Error::invalid("L-BFGS memory must be positive"));
                }
                if !(0.0 < c.c1 && c.c1 < c.c2 && c.c2 < 1.0) {
                    return Err(Error::invalid("L-BFGS needs 0 < c1 < c2 < 1"));
                }
                Ok(())
            }
        }
    }
}

/// Accumulators of a first-order method.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub iteration: usize,
    /// First moments (Adam, Nadam) or accumulated squared updates (Adadelta).
    pub first: Vec<f64>,
    /// Second moments / squared-gradient averages.
    pub second: Vec<f64>,
    /// Product of Nadam momentum-cache factors.
    pub momentum_schedule: f64,
}

/// SGD, RMSprop, Adam, Nadam or Adadelta.
#[derive(Clone, Debug)]
pub struct GradientOptimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl GradientOptimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        if matches!(config, OptimizerConfig::Spsa(_) | OptimizerConfig::Lbfgs(_)) {
            return Err(Error::invalid(format!(
                "{} is not a gradient-step optimizer",
                config.kind().name()
            )));
        }
        Ok(Self {
            config,
            state: OptimizerState {
                momentum_schedule: 1.0,
                ..Default::default()
            },
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let iteration = self.state.iteration + 1;
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                reason: format!("non-finite gradient component {i}"),
            });
        }
        let n = params.len();
        let state = &mut self.state;
        if state.first.is_empty() && state.second.is_empty() {
            state.first = vec![0.0; n];
            state.second = vec![0.0; n];
        } else if state.first.len() != n {
            return Err(Error::DimensionMismatch {
                expected: state.first.len(),
                found: n,
            });
        }
        state.iteration = iteration;
        let t = iteration as f64;

        match self.config {
            OptimizerConfig::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= learning_rate * g;
                }
            }
            OptimizerConfig::Rmsprop {
                learning_rate,
                rho,
                epsilon,
            } => {
                for i in 0..n {
                    let g = grad[i];
                    state.second[i] = rho * state.second[i] + (1.0 - rho) * g * g;
                    params[i] -= learning_rate * g / (state.second[i].sqrt() + epsilon);
                }
            }
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let lr_t = learning_rate * (1.0 - beta2.powf(t)).sqrt() / (1.0 - beta1.powf(t));
                for i in 0..n {
                    let g = grad[i];
                    state.first[i] = beta1 * state.first[i] + (1.0 - beta1) * g;
                    state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * g * g;
                    params[i] -= lr_t * state.first[i] / (state.second[i].sqrt() + epsilon);
                }
            }
            OptimizerConfig::Nadam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let cache = |step: f64| beta1 * (1.0 - 0.5 * 0.96f64.powf(0.004 * step));
                let mu_t = cache(t);
                let mu_next = cache(t + 1.0);
                let schedule = state.momentum_schedule * mu_t;
                let schedule_next = schedule * mu_next;
                state.momentum_schedule = schedule;
                for i in 0..n {
                    let g = grad[i];
                    state.first[i] = beta1 * state.first[i] + (1.0 - beta1) * g;
                    state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * g * g;
                    let g_hat = g / (1.0 - schedule);
                    let m_hat = state.first[i] / (1.0 - schedule_next);
                    let v_hat = state.second[i] / (1.0 - beta2.powf(t));
                    let m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
                    params[i] -= learning_rate * m_bar / (v_hat.sqrt() + epsilon);
                }
            }
            OptimizerConfig::Adadelta {
                learning_rate,
                rho,
                epsilon,
            } => {
                for i in 0..n {
                    let g = grad[i];
                    state.second[i] = rho * state.second[i] + (1.0 - rho) * g * g;
                    let update = (state.first[i] + epsilon).sqrt() / (state.second[i] + epsilon).sqrt() * g;
                    state.first[i] = rho * state.first[i] + (1.0 - rho) * update * update;
                    params[i] -= learning_rate * update;
                }
            }
            OptimizerConfig::Spsa(_) | OptimizerConfig::Lbfgs(_) => unreachable!("rejected in new()"),
        }
        Ok(())
    }
}

/// Simultaneous-perturbation stochastic approximation.
#[derive(Clone, Debug)]
pub struct Spsa {
    config: SpsaConfig,
    stability: f64,
    /// Numerator of `a_k`, fixed by the first gradient estimate.
    a: Option<f64>,
    iteration: usize,
}

/// Loss values seen by one SPSA step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpsaStep {
    pub loss_plus: f64,
    pub loss_minus: f64,
}

impl Spsa {
    pub fn new(config: SpsaConfig, total_iterations: usize) -> Result<Self> {
        OptimizerConfig::Spsa(config).validate()?;
        Ok(Self {
            stability: config.stability.unwrap_or(0.1 * total_iterations as f64),
            config,
            a: None,
            iteration: 0,
        })
    }

    /// `c_k = c / (k + 1)^γ` for zero-based step `k`.
    pub fn perturbation_gain(&self, k: usize) -> f64 {
        self.config.perturbation / ((k + 1) as f64).powf(self.config.gamma)
    }

    fn step_gain(&self, a: f64, k: usize) -> f64 {
        a / ((k + 1) as f64 + self.stability).powf(self.config.alpha)
    }

    /// Two-sided estimate `ĝᵢ = (f(θ + cΔ) − f(θ − cΔ)) / (2cΔᵢ)` with a
    /// Rademacher `Δ`.
    pub fn gradient_estimate<F, R>(params: &[f64], c: f64, mut loss: F, rng: &mut R) -> Result<(Vec<f64>, SpsaStep)>
    where
        F: FnMut(&[f64]) -> Result<f64>,
        R: Rng + ?Sized,
    {
        let delta: Vec<f64> = (0..params.len())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let shifted = |sign: f64| -> Vec<f64> { params.iter().zip(&delta).map(|(p, d)| p + sign * c * d).collect() };
        let loss_plus = loss(&shifted(1.0))?;
        let loss_minus = loss(&shifted(-1.0))?;
        let diff = loss_plus - loss_minus;
        let grad = delta.iter().map(|d| diff / (2.0 * c * d)).collect();
        Ok((grad, SpsaStep { loss_plus, loss_minus }))
    }

    /// One update using exactly two loss evaluations.
    pub fn step<F, R>(&mut self, params: &mut [f64], loss: F, rng: &mut R) -> Result<SpsaStep>
    where
        F: FnMut(&[f64]) -> Result<f64>,
        R: Rng + ?Sized,
    {
        let k = self.iteration;
        let (grad, evals) = Self::gradient_estimate(params, self.perturbation_gain(k), loss, rng)?;
        if !(evals.loss_plus.is_finite() && evals.loss_minus.is_finite()) {
            return Err(Error::Divergence {
                iteration: k + 1,
                reason: "non-finite loss in SPSA probe".into(),
            });
        }
        let a = *self.a.get_or_insert_with(|| {
            // The first update's largest component equals the learning rate.
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let base = self.config.learning_rate * ((1.0 + self.stability).powf(self.config.alpha));
            if scale > 0.0 {
                base / scale
            } else {
                base
            }
        });
        let gain = self.step_gain(a, k);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= gain * g;
        }
        self.iteration += 1;
        Ok(evals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    GradientConverged,
    StepConverged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub params: Vec<f64>,
    pub loss: f64,
    /// Number of iterations performed.
    pub iterations: usize,
    /// Loss at the start of each iteration.
    pub trace: Vec<f64>,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `H·g` for the inverse-Hessian approximation defined by the curvature
/// pairs `(s, y)` (oldest first), with `H₀ = γI` and
/// `γ = sᵀy / yᵀy` of the newest pair.
pub fn two_loop_direction(grad: &[f64], history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push((rho, alpha));
    }
    if let Some((s, y)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y), (rho, alpha)) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    q
}

struct Trial {
    alpha: f64,
    loss: f64,
    grad: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    direction: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    best: Option<Trial>,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Result<Option<Trial>> {
        if self.evals_left == 0 {
            return Ok(None);
        }
        self.evals_left -= 1;
        let point: Vec<f64> = self.x.iter().zip(self.direction).map(|(x, d)| x + alpha * d).collect();
        let (loss, grad) = (self.objective)(&point)?;
        let slope = dot(&grad, self.direction);
        let trial = Trial {
            alpha,
            loss,
            grad,
            slope,
        };
        if trial.loss.is_finite() && self.best.as_ref().is_none_or(|b| trial.loss < b.loss) {
            self.best = Some(Trial {
                alpha,
                loss,
                grad: trial.grad.clone(),
                slope,
            });
        }
        Ok(Some(trial))
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        !(t.loss <= self.f0 + self.c1 * t.alpha * self.slope0)
    }

    fn curvature_holds(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.c2 * self.slope0
    }

    /// Bracketing phase; returns a step satisfying the strong Wolfe
    /// conditions, or `None` when the evaluation budget runs out.
    fn search(&mut self, alpha0: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            loss: self.f0,
            grad: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        loop {
            let Some(t) = self.eval(alpha)? else {
                return Ok(None);
            };
            if !t.loss.is_finite() {
                // Overshot into a region where the loss is undefined.
                alpha = 0.5 * (prev.alpha + alpha);
                continue;
            }
            if self.armijo_fails(&t) || (!first && t.loss >= prev.loss) {
                return self.zoom(prev, t);
            }
            if self.curvature_holds(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            alpha = 2.0 * t.alpha;
            prev = t;
            first = false;
        }
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        loop {
            let width = (hi.alpha - lo.alpha).abs();
            if width <= 1e-14 * lo.alpha.abs().max(1.0) {
                return Ok(None);
            }
            let alpha = interpolate(&lo, &hi);
            let Some(t) = self.eval(alpha)? else {
                return Ok(None);
            };
            if !t.loss.is_finite() || self.armijo_fails(&t) || t.loss >= lo.loss {
                hi = t;
            } else {
                if self.curvature_holds(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
    }
}

// Safeguarded cubic minimizer between two bracketing trials.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    let bisect = 0.5 * (a + b);
    if !hi.loss.is_finite() || hi.grad.is_empty() {
        return bisect;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.loss - hi.loss) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let candidate = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if candidate.is_finite() && candidate >= left + margin && candidate <= right - margin {
        candidate
    } else {
        bisect
    }
}

/// Minimizes a smooth objective with limited-memory BFGS.
///
/// `on_iter(i, x, f)` is called once per iteration (1-based) with the
/// iterate the iteration starts from. A failed line search ends the run at
/// the best point evaluated so far with [`LbfgsStatus::LineSearchFailed`].
pub fn minimize_lbfgs<F, C>(
    mut objective: F,
    params0: &[f64],
    max_iters: usize,
    config: &LbfgsConfig,
    mut on_iter: C,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64),
{
    OptimizerConfig::Lbfgs(*config).validate()?;
    let mut x = params0.to_vec();
    let (mut fx, mut g) = objective(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite loss or gradient at the L-BFGS starting point".into(),
        });
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(config.memory);
    let mut trace = Vec::new();
    let mut status = LbfgsStatus::MaxIterations;

    for iter in 1..=max_iters {
        if inf_norm(&g) < config.gradient_tolerance {
            status = LbfgsStatus::GradientConverged;
            break;
        }
        on_iter(iter, &x, fx);
        trace.push(fx);

        let pairs: Vec<(Vec<f64>, Vec<f64>)> = history.iter().cloned().collect();
        let mut direction: Vec<f64> = two_loop_direction(&g, &pairs).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut search = LineSearch {
            objective: &mut objective,
            x: &x,
            direction: &direction,
            f0: fx,
            slope0: slope,
            c1: config.c1,
            c2: config.c2,
            evals_left: config.max_line_search_evals,
            best: None,
        };
        let accepted = search.search(alpha0)?;
        let best = search.best.take();

        let Some(trial) = accepted else {
            if let Some(b) = best.filter(|b| b.loss < fx) {
                x.iter_mut().zip(&direction).for_each(|(xi, d)| *xi += b.alpha * d);
                fx = b.loss;
            }
            status = LbfgsStatus::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = direction.iter().map(|d| trial.alpha * d).collect();
        let y: Vec<f64> = trial.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        fx = trial.loss;
        g = trial.grad;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y));
        }
        if inf_norm(&s) < config.step_tolerance {
            status = LbfgsStatus::StepConverged;
            break;
        }
    }
    Ok(LbfgsOutcome {
        iterations: trace.len(),
        params: x,
        loss: fx,
        trace,
        status,
    })
}

/// A loss whose collocation points change with the iteration until frozen.
pub trait StochasticObjective {
    /// Loss and gradient at `params` for 1-based optimizer `iteration`.
    fn loss_and_grad(&mut self, params: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)>;
    /// Fixes the collocation points to those of `iteration` from now on.
    fn freeze(&mut self, iteration: usize);
}

/// SGD for `switch_iteration` steps, then L-BFGS on a frozen batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HybridSchedule {
    pub switch_iteration: usize,
    pub first: OptimizerConfig,
    pub second: LbfgsConfig,
}

impl HybridSchedule {
    pub fn new(switch_iteration: usize, sgd_learning_rate: f64) -> Self {
        Self {
            switch_iteration,
            first: OptimizerConfig::Sgd {
                learning_rate: sgd_learning_rate,
            },
            second: LbfgsConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HybridOutcome {
    pub params: Vec<f64>,
    /// Loss at the start of every iteration performed.
    pub trace: Vec<f64>,
    /// Why the L-BFGS phase stopped, if it ran.
    pub lbfgs_status: Option<LbfgsStatus>,
}

pub fn run_hybrid<O, C>(
    schedule: &HybridSchedule,
    objective: &mut O,
    params0: &[f64],
    total_iters: usize,
    mut on_iter: C,
) -> Result<HybridOutcome>
where
    O: StochasticObjective + ?Sized,
    C: FnMut(usize, &[f64], f64),
{
    if schedule.switch_iteration > total_iters {
        return Err(Error::invalid(format!(
            "switch iteration {} exceeds total iterations {total_iters}",
            schedule.switch_iteration
        )));
    }
    let mut sgd = GradientOptimizer::new(schedule.first)?;
    let mut params = params0.to_vec();
    let mut trace = Vec::with_capacity(total_iters);
    for k in 1..=schedule.switch_iteration {
        let (loss, grad) = objective.loss_and_grad(&params, k)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: "non-finite loss".into(),
            });
        }
        on_iter(k, &params, loss);
        trace.push(loss);
        sgd.step(&mut params, &grad)?;
    }

    let mut lbfgs_status = None;
    if schedule.switch_iteration < total_iters {
        let frozen = schedule.switch_iteration + 1;
        objective.freeze(frozen);
        let outcome = minimize_lbfgs(
            |p| objective.loss_and_grad(p, frozen),
            &params,
            total_iters - schedule.switch_iteration,
            &schedule.second,
            |i, p, f| on_iter(schedule.switch_iteration + i, p, f),
        )
        .map_err(|e| match e {
            Error::Divergence { iteration, reason } => Error::Divergence {
                iteration: schedule.switch_iteration + iteration.max(1),
                reason,
            },
            other => other,
        })?;
        trace.extend_from_slice(&outcome.trace);
        params = outcome.params;
        lbfgs_status = Some(outcome.status);
    }
    Ok(HybridOutcome {
        params,
        trace,
        lbfgs_status,
    })
}
