//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use ndarray::Array1;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpinn::cv_sim::{
    apply, displacement_matrix, kerr_matrix, quad_expectation, rotation_matrix, squeezing_matrix, vacuum, FockState,
    GateMatrix,
};
use qpinn::experiment::{run_experiment, ExperimentConfig, TrainTrace};
use qpinn::optim::{minimize_lbfgs, GradientOptimizer, LbfgsConfig, OptimizerConfig, OptimizerKind, Spsa};
use qpinn::pinn::{fd_loss, loss, sample_collocation, solution_norm, ExactSolution, PoissonProblem, SourceKind};
use qpinn::qnn::{forward, init_params, CircuitParams, CompiledCircuit};

const CUTOFF: usize = 50;

const COHERENT_TOL: f64 = 1e-10;
const SQUEEZE_VAR_TOL: f64 = 1e-6;
const PHASE_GATE_NORM_TOL: f64 = 1e-12;
const GAUSSIAN_GATE_NORM_TOL: f64 = 1e-6;
const X_STEP: f64 = 1e-3;
const DERIVATIVE_REL_TOL: f64 = 1e-4;
const RESIDUAL_TOL: f64 = 1e-9;
const MIN_FD_ORDER: f64 = 1.9;
const ROSENBROCK_TOL: f64 = 1e-5;
const BOWL_REDUCTION: f64 = 10.0;
const SPSA_REL_TOL: f64 = 0.02;
const SPSA_SAMPLES: usize = 10_000;
const MAX_RELATIVE_L2: f64 = 0.5;
const MAX_LOSS_RATIO: f64 = 0.3;
const SMOOTH_WINDOW: usize = 20;
const CUTOFF_TOL: f64 = 1e-8;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

fn random_state(rng: &mut ChaCha8Rng, cutoff: usize) -> FockState {
    let amps: Array1<Complex64> = (0..cutoff)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    FockState::from_amplitudes(amps.mapv(|c| c / norm)).expect("normalized random state")
}

// e^{-|α|²/2} αⁿ / √n!, via log-factorials rather than a recurrence.
fn coherent_closed_form(alpha: Complex64, n: usize) -> Complex64 {
    let log_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    let magnitude = if alpha.norm() == 0.0 {
        if n == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (-0.5 * alpha.norm_sqr() + n as f64 * alpha.norm().ln() - 0.5 * log_fact).exp()
    };
    Complex64::from_polar(magnitude, n as f64 * alpha.arg())
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let vac = vacuum(CUTOFF).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let r = 2.0 * rng.random::<f64>().sqrt();
        let alpha = Complex64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU));
        let state = apply(&displacement_matrix(alpha, CUTOFF).unwrap(), &vac).unwrap();
        for (n, amp) in state.amplitudes().iter().enumerate() {
            worst = worst.max((amp - coherent_closed_form(alpha, n)).norm());
        }
    }
    outcome(worst <= COHERENT_TOL, format!("max amplitude error {worst:.3e} (tol {COHERENT_TOL:e})"))
}

fn squeeze_variance_error(r: f64, cutoff: usize) -> f64 {
    let state = apply(&squeezing_matrix(r, 0.0, cutoff).unwrap(), &vacuum(cutoff).unwrap()).unwrap();
    (quad_expectation(&state).unwrap().variance - (-2.0 * r).exp()).abs()
}

fn criterion_2() -> Outcome {
    let rs = [-1.0, -0.5, 0.25, 0.5, 1.0];
    let errors: Vec<String> = rs.iter().map(|&r| format!("r={r}: {:.1e}", squeeze_variance_error(r, CUTOFF))).collect();
    let worst = rs.iter().map(|&r| squeeze_variance_error(r, CUTOFF)).fold(0.0, f64::max);
    // Reported for context only; the verdict uses cutoff 50.
    let at_125 = rs.iter().map(|&r| squeeze_variance_error(r, 125)).fold(0.0, f64::max);
    outcome(
        worst <= SQUEEZE_VAR_TOL,
        format!(
            "max variance error {worst:.3e} (tol {SQUEEZE_VAR_TOL:e}) [{}]; at cutoff 125: {at_125:.1e}",
            errors.join(", ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut phase_worst, mut gauss_worst) = (0.0f64, 0.0f64);
    let drift = |g: &GateMatrix, s: &FockState| (apply(g, s).unwrap().norm_sqr() - s.norm_sqr()).abs();
    for _ in 0..100 {
        let s = random_state(&mut rng, CUTOFF);
        let rot = rotation_matrix(rng.random_range(-3.0..3.0), CUTOFF).unwrap();
        let kerr = kerr_matrix(rng.random_range(-1.0..1.0), CUTOFF).unwrap();
        phase_worst = phase_worst.max(drift(&rot, &s)).max(drift(&kerr, &s));
        let alpha = Complex64::from_polar(2.0 * rng.random::<f64>(), rng.random_range(0.0..6.3));
        let disp = displacement_matrix(alpha, CUTOFF).unwrap();
        let sq = squeezing_matrix(rng.random_range(-1.0..1.0), rng.random_range(0.0..6.3), CUTOFF).unwrap();
        gauss_worst = gauss_worst.max(drift(&disp, &s)).max(drift(&sq, &s));
    }
    outcome(
        phase_worst <= PHASE_GATE_NORM_TOL && gauss_worst <= GAUSSIAN_GATE_NORM_TOL,
        format!("rotation/Kerr drift {phase_worst:.3e}, displacement/squeezing drift {gauss_worst:.3e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for layers in [1, 2, 4, 8] {
        for _ in 0..20 {
            let flat: Vec<f64> = (0..7 * layers).map(|_| rng.random_range(-0.25..0.25)).collect();
            let circuit = CompiledCircuit::compile(&CircuitParams::from_flat(&flat, CUTOFF).unwrap()).unwrap();
            for _ in 0..5 {
                let x = rng.random_range(0.05..0.95);
                let jet = circuit.evaluate_jet(x).unwrap();
                let f = |x: f64| circuit.evaluate(x).unwrap().mean;
                let (fp, f0, fm) = (f(x + X_STEP), f(x), f(x - X_STEP));
                let d1 = (fp - fm) / (2.0 * X_STEP);
                let d2 = (fp - 2.0 * f0 + fm) / (X_STEP * X_STEP);
                worst = worst.max(rel_err(jet.dphi, d1)).max(rel_err(jet.d2phi, d2));
            }
        }
    }
    outcome(
        worst <= DERIVATIVE_REL_TOL,
        format!("max relative derivative mismatch {worst:.3e} (tol {DERIVATIVE_REL_TOL:e})"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    let mut orders = Vec::new();
    for problem in [PoissonProblem::quadratic(), PoissonProblem::sinusoidal()] {
        let exact = ExactSolution(problem);
        let batch = sample_collocation(&mut rng, 64, &problem).unwrap();
        let l = loss(&exact, &problem, &batch).unwrap();
        worst = worst.max(l.inner).max(l.bc_lo).max(l.bc_hi);
        let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| fd_loss(&exact, &problem, n).unwrap().inner).collect();
        orders.push((errs[0] / errs[1]).log2());
        orders.push((errs[1] / errs[2]).log2());
    }
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        worst < RESIDUAL_TOL && min_order >= MIN_FD_ORDER,
        format!("max exact residual {worst:.3e}, min FD order {min_order:.3}"),
    )
}

fn criterion_6() -> Outcome {
    let rosen = |t: &[f64]| {
        let (x, y) = (t[0], t[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        Ok((f, vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]))
    };
    let out = minimize_lbfgs(rosen, &[-1.2, 1.0], 200, &LbfgsConfig::default(), |_, _, _| {}).unwrap();
    let rosen_err = ((out.params[0] - 1.0).powi(2) + (out.params[1] - 1.0).powi(2)).sqrt();
    let mut details = vec![format!("rosenbrock error {rosen_err:.2e} in {} iterations", out.iterations)];
    let mut pass = rosen_err <= ROSENBROCK_TOL && out.iterations <= 200;

    // f(θ) = ‖θ − θ*‖² from θ₀ = θ* + (3, −2). The learning rates are the
    // baseline 0.01, except Adadelta: its first step has length
    // lr·√(ε/(1−ρ)) ≈ 1.4e-3·lr regardless of the gradient, so crossing a
    // bowl of radius ~3.6 in a few hundred steps takes lr ≈ 10.
    let target = [0.5, -0.25];
    let bowl = |t: &[f64]| t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    for (kind, lr) in [
        (OptimizerKind::Sgd, 0.01),
        (OptimizerKind::Rmsprop, 0.01),
        (OptimizerKind::Adam, 0.01),
        (OptimizerKind::Nadam, 0.01),
        (OptimizerKind::Adadelta, 10.0),
    ] {
        let mut opt = GradientOptimizer::new(OptimizerConfig::with_defaults(kind, lr)).unwrap();
        let mut p = vec![target[0] + 3.0, target[1] - 2.0];
        let start = bowl(&p);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            opt.step(&mut p, &g).unwrap();
        }
        let ratio = start / bowl(&p);
        pass &= ratio >= BOWL_REDUCTION;
        details.push(format!("{} x{ratio:.1e}", kind.name()));
    }

    let theta = [3.0, -2.0, 1.0];
    let weights = [1.0, 2.0, 0.5];
    let quad = |t: &[f64]| t.iter().zip(&weights).map(|(v, w)| w * v * v).sum::<f64>();
    let truth: Vec<f64> = theta.iter().zip(&weights).map(|(v, w)| 2.0 * w * v).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mean = [0.0; 3];
    for _ in 0..SPSA_SAMPLES {
        let (g, _) = Spsa::gradient_estimate(&theta, 0.05, |p| Ok(quad(p)), &mut rng).unwrap();
        for (m, gi) in mean.iter_mut().zip(&g) {
            *m += gi / SPSA_SAMPLES as f64;
        }
    }
    let num: f64 = mean.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    let spsa_rel = num / den;
    pass &= spsa_rel <= SPSA_REL_TOL;
    details.push(format!("spsa mean-gradient error {spsa_rel:.3e}"));
    outcome(pass, details.join(", "))
}

fn smoothed(trace: &TrainTrace, iteration: usize) -> f64 {
    let rows = &trace.rows[iteration - SMOOTH_WINDOW..iteration];
    rows.iter().map(|r| r.loss.total).sum::<f64>() / SMOOTH_WINDOW as f64
}

fn baseline(optimizer: OptimizerKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        optimizer,
        seed,
        ..ExperimentConfig::baseline(SourceKind::Quadratic)
    }
}

fn run_seeds(optimizer: OptimizerKind) -> Vec<Option<TrainTrace>> {
    SEEDS.iter().map(|&s| run_experiment(&baseline(optimizer, s)).ok()).collect()
}

fn best_error(traces: &[Option<TrainTrace>]) -> Option<(usize, f64)> {
    traces
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.as_ref().map(|t| (i, t.summary.final_error_norm)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn criterion_7(sgd: &[Option<TrainTrace>]) -> Outcome {
    let Some((best, err)) = best_error(sgd) else {
        return outcome(false, "every SGD run failed".into());
    };
    let trace = sgd[best].as_ref().unwrap();
    let relative = err / solution_norm(&PoissonProblem::quadratic());
    let ratio = smoothed(trace, trace.rows.len()) / smoothed(trace, SMOOTH_WINDOW);
    outcome(
        trace.rows.len() == 500 && relative < MAX_RELATIVE_L2 && ratio < MAX_LOSS_RATIO,
        format!("best seed {}: relative L2 {relative:.4}, smoothed loss ratio {ratio:.4}", SEEDS[best]),
    )
}

fn criterion_8(sgd: &[Option<TrainTrace>], adadelta: &[Option<TrainTrace>]) -> Outcome {
    match (best_error(sgd), best_error(adadelta)) {
        (Some((_, s)), Some((_, a))) => outcome(s < a, format!("best error norm: sgd {s:.4e}, adadelta {a:.4e}")),
        (Some((_, s)), None) => outcome(true, format!("best sgd {s:.4e}; every adadelta run diverged")),
        _ => outcome(false, "every SGD run failed".into()),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let small = init_params(4, 50, &mut rng).unwrap();
        let large = CircuitParams::from_flat(&small.to_flat(), 125).unwrap();
        let x = rng.random_range(0.0..=1.0);
        worst = worst.max((forward(&small, x).unwrap() - forward(&large, x).unwrap()).abs());
    }
    outcome(worst < CUTOFF_TOL, format!("max |Φ̃₅₀ − Φ̃₁₂₅| = {worst:.3e}"))
}

fn criterion_10(first: Option<&TrainTrace>) -> Outcome {
    let Some(first) = first else {
        return outcome(false, "baseline run failed".into());
    };
    match run_experiment(&baseline(OptimizerKind::Sgd, SEEDS[0])) {
        Ok(second) => outcome(
            first.to_csv() == second.to_csv(),
            format!("{} rows compared byte for byte", first.rows.len()),
        ),
        Err(e) => outcome(false, format!("rerun failed: {e}")),
    }
}

fn report(id: usize, name: &str, started: Instant, o: Outcome) -> bool {
    println!(
        "{} criterion {id:>2} {name}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() {
    let mut all = true;
    let simple: [(usize, &str, fn() -> Outcome); 6] = [
        (1, "coherent-state oracle", criterion_1),
        (2, "squeezed-vacuum variance", criterion_2),
        (3, "norm preservation", criterion_3),
        (4, "derivative oracle", criterion_4),
        (5, "residual-zero oracle", criterion_5),
        (6, "optimizer oracles", criterion_6),
    ];
    for (id, name, f) in simple {
        let t = Instant::now();
        all &= report(id, name, t, f());
    }

    let t = Instant::now();
    let sgd = run_seeds(OptimizerKind::Sgd);
    all &= report(7, "baseline training trend", t, criterion_7(&sgd));

    let t = Instant::now();
    let adadelta = run_seeds(OptimizerKind::Adadelta);
    all &= report(8, "sgd beats adadelta", t, criterion_8(&sgd, &adadelta));

    let t = Instant::now();
    all &= report(9, "cutoff insensitivity", t, criterion_9());

    let t = Instant::now();
    all &= report(10, "determinism", t, criterion_10(sgd[0].as_ref()));

    if !all {
        std::process::exit(1);
    }
}
