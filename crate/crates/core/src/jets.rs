//! Derivatives of the surrogate output.
//!
//! The collocation point only enters through the coherent-state encoding, so
//! its first and second derivatives are available in closed form and pass
//! unchanged through the (x-independent) circuit. Gradients with respect to
//! circuit parameters are central finite differences.

use ndarray::Array1;
use num_complex::Complex64;

use crate::cv_sim::{self, FockState, GateMatrix};
use crate::error::{Error, Result};

/// Default central-difference step for parameter gradients.
pub const DEFAULT_PARAM_STEP: f64 = 1e-4;

/// A state together with its first and second derivatives in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2State {
    pub value: FockState,
    pub d1: Array1<Complex64>,
    pub d2: Array1<Complex64>,
}

/// `(Φ̃, dΦ̃/dx, d²Φ̃/dx²)` plus the squared norm of the measured state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateJet {
    pub phi: f64,
    pub dphi: f64,
    pub d2phi: f64,
    pub norm_sqr: f64,
}

impl Jet2State {
    pub fn cutoff(&self) -> usize {
        self.value.cutoff()
    }
}

/// Encodes `x` as `coherent(x)` with `d1 = (a† − x)ψ` and
/// `d2 = (a† − x)d1 − ψ`.
pub fn coherent_jet(x: f64, cutoff: usize) -> Result<Jet2State> {
    let value = cv_sim::coherent(Complex64::new(x, 0.0), cutoff).map_err(|e| e.at_point(x))?;
    let d1 = raise_minus(value.amplitudes(), x);
    let mut d2 = raise_minus(&d1, x);
    d2 -= value.amplitudes();
    Ok(Jet2State { value, d1, d2 })
}

// (a† − x) v on the truncated space.
fn raise_minus(v: &Array1<Complex64>, x: f64) -> Array1<Complex64> {
    let mut out = v.mapv(|c| -c * x);
    for n in 1..v.len() {
        out[n] += v[n - 1] * (n as f64).sqrt();
    }
    out
}

/// Applies an x-independent operator to every component of the jet.
pub fn propagate(u: &GateMatrix, jet: &Jet2State) -> Result<Jet2State> {
    Ok(Jet2State {
        value: cv_sim::apply(u, &jet.value)?,
        d1: cv_sim::apply_vector(u, &jet.d1)?,
        d2: cv_sim::apply_vector(u, &jet.d2)?,
    })
}

/// Differentiates `⟨ψ|x̂|ψ⟩` twice through the jet.
pub fn quad_jet(jet: &Jet2State) -> Result<SurrogateJet> {
    let psi = jet.value.amplitudes();
    let norm_sqr = jet.value.norm_sqr();
    cv_sim::guard_norm(norm_sqr, jet.cutoff())?;
    let x_psi = cv_sim::quadrature_times(psi);
    let x_d1 = cv_sim::quadrature_times(&jet.d1);
    Ok(SurrogateJet {
        phi: cv_sim::inner_re(psi, &x_psi),
        dphi: 2.0 * cv_sim::inner_re(&jet.d1, &x_psi),
        d2phi: 2.0 * cv_sim::inner_re(&jet.d2, &x_psi) + 2.0 * cv_sim::inner_re(&jet.d1, &x_d1),
        norm_sqr,
    })
}

/// Central-difference gradient `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h`.
pub fn param_gradient<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let plus = loss(&probe)?;
        probe[i] = params[i] - h;
        let minus = loss(&probe)?;
        probe[i] = params[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv_sim::{coherent, vacuum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coh(x: f64) -> Array1<Complex64> {
        coherent(Complex64::new(x, 0.0), 50).unwrap().amplitudes().clone()
    }

    #[test]
    fn jet_at_origin_is_exact() {
        let jet = coherent_jet(0.0, 6).unwrap();
        let one = FockState::number(1, 6).unwrap();
        assert_eq!(&jet.d1, one.amplitudes());
        // d2 = a†a†|0⟩ − |0⟩ = √2|2⟩ − |0⟩
        assert_eq!(jet.d2[0], Complex64::new(-1.0, 0.0));
        assert_eq!(jet.d2[2], Complex64::new(2f64.sqrt(), 0.0));
    }

    #[test]
    fn jet_matches_central_differences() {
        let x = 0.5;
        let jet = coherent_jet(x, 50).unwrap();
        let h = 1e-4;
        let fd1 = (coh(x + h) - coh(x - h)) / Complex64::new(2.0 * h, 0.0);
        let h2 = 1e-3;
        let fd2 = (coh(x + h2) - coh(x) * Complex64::new(2.0, 0.0) + coh(x - h2)) / Complex64::new(h2 * h2, 0.0);
        for n in 0..50 {
            assert!((jet.d1[n] - fd1[n]).norm() < 1e-6);
            assert!((jet.d2[n] - fd2[n]).norm() < 1e-5);
        }
    }

    #[test]
    fn propagate_identity_and_linearity() {
        let jet = coherent_jet(0.3, 12).unwrap();
        assert_eq!(propagate(&GateMatrix::identity(12).unwrap(), &jet).unwrap(), jet);

        let u = cv_sim::displacement_matrix(Complex64::new(0.2, -0.1), 12).unwrap();
        let other = coherent_jet(-0.4, 12).unwrap();
        let lhs = cv_sim::apply_vector(&u, &(&jet.d1 + &other.d1)).unwrap();
        let rhs = propagate(&u, &jet).unwrap().d1 + propagate(&u, &other).unwrap().d1;
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn propagated_derivative_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut u = GateMatrix::identity(50).unwrap();
        for _ in 0..4 {
            let layer = cv_sim::rotation_matrix(rng.random_range(-1.0..1.0), 50)
                .and_then(|r| r.matmul(&cv_sim::squeezing_matrix(rng.random_range(-0.3..0.3), rng.random_range(0.0..6.0), 50)?))
                .and_then(|m| cv_sim::displacement_matrix(Complex64::new(rng.random_range(-0.3..0.3), 0.1), 50)?.matmul(&m))
                .and_then(|m| cv_sim::kerr_matrix(rng.random_range(-0.2..0.2), 50)?.matmul(&m))
                .unwrap();
            u = layer.matmul(&u).unwrap();
        }
        let x = 0.6;
        let h = 1e-4;
        let jet = propagate(&u, &coherent_jet(x, 50).unwrap()).unwrap();
        let plus = cv_sim::apply_vector(&u, &coh(x + h)).unwrap();
        let minus = cv_sim::apply_vector(&u, &coh(x - h)).unwrap();
        for n in 0..50 {
            let fd = (plus[n] - minus[n]) / (2.0 * h);
            assert!((jet.d1[n] - fd).norm() < 1e-6);
        }
    }

    #[test]
    fn encoding_only_surrogate_is_linear() {
        let x = 0.3;
        let s = quad_jet(&coherent_jet(x, 50).unwrap()).unwrap();
        assert!((s.phi - 0.6).abs() < 1e-12);
        assert!((s.dphi - 2.0).abs() < 1e-12);
        assert!(s.d2phi.abs() < 1e-12);
    }

    #[test]
    fn vacuum_jet_with_zero_derivatives() {
        let jet = Jet2State {
            value: vacuum(8).unwrap(),
            d1: Array1::zeros(8),
            d2: Array1::zeros(8),
        };
        let s = quad_jet(&jet).unwrap();
        assert_eq!((s.phi, s.dphi, s.d2phi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn quadratic_gradient_is_near_exact() {
        let g = param_gradient(|t| Ok(t.iter().map(|v| v * v).sum()), &[1.0, -2.0], DEFAULT_PARAM_STEP).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] + 4.0).abs() < 1e-8);
        let g = param_gradient(|_| Ok(3.5), &[0.1, 0.2, 0.3], 1e-3).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(param_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn gradient_propagates_loss_errors() {
        let r = param_gradient(|_| Err(Error::invalid("boom")), &[1.0], 1e-4);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
