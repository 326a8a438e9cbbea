//! Single-qumode simulator in a truncated Fock basis.
//!
//! States are complex amplitude vectors over photon numbers `0..cutoff`.
//! Gates are dense `cutoff × cutoff` matrices. The quadrature convention is
//! ħ = 2, so `x̂ = a + a†`, the vacuum has unit variance and a real
//! displacement `β` shifts `⟨x̂⟩` by `2β`.
//!
//! Displacement and squeezing are built by exponentiating their truncated
//! generators. Those generators are anti-Hermitian in the truncated space, so
//! the resulting matrices are unitary there; amplitude that would leave the
//! space is instead reflected. States are never renormalized: the encoding
//! step is where truncation shows up as lost norm, and every measurement
//! rejects squared norms below [`NORM_GUARD`].

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result, NORM_GUARD};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pure state of one qumode in the photon-number basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    amplitudes: Array1<Complex64>,
}

impl FockState {
    /// Wraps raw amplitudes. The squared norm must lie in `(0, 1 + 1e-9]`.
    pub fn from_amplitudes(amplitudes: Array1<Complex64>) -> Result<Self> {
        check_cutoff(amplitudes.len())?;
        if amplitudes.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("state amplitudes must be finite"));
        }
        let norm_sqr = norm_sqr(&amplitudes);
        if !(norm_sqr > 0.0 && norm_sqr <= 1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "state squared norm {norm_sqr} outside (0, 1]"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Number state `|n⟩`.
    pub fn number(n: usize, cutoff: usize) -> Result<Self> {
        check_cutoff(cutoff)?;
        if n >= cutoff {
            return Err(Error::invalid(format!(
                "photon number {n} not representable at cutoff {cutoff}"
            )));
        }
        let mut amplitudes = Array1::from_elem(cutoff, ZERO);
        amplitudes[n] = ONE;
        Ok(Self { amplitudes })
    }

    pub fn cutoff(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &Array1<Complex64> {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// Photon-number distribution `|ψ_n|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum()
    }

    /// Multiplies every amplitude by `e^{iθ}`.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        let phase = Complex64::from_polar(1.0, theta);
        Self {
            amplitudes: self.amplitudes.mapv(|c| c * phase),
        }
    }

    #[cfg(test)]
    pub(crate) fn from_raw(amplitudes: Array1<Complex64>) -> Self {
        Self { amplitudes }
    }
}

/// Dense operator on the truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    entries: Array2<Complex64>,
}

impl GateMatrix {
    pub fn from_entries(entries: Array2<Complex64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: cols,
            });
        }
        Ok(Self { entries })
    }

    pub fn identity(cutoff: usize) -> Result<Self> {
        check_cutoff(cutoff)?;
        Ok(Self {
            entries: Array2::eye(cutoff),
        })
    }

    /// Diagonal operator with the given entries.
    pub fn diagonal(diag: &[Complex64]) -> Result<Self> {
        check_cutoff(diag.len())?;
        Ok(Self {
            entries: Array2::from_diag(&Array1::from(diag.to_vec())),
        })
    }

    pub fn cutoff(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<Complex64> {
        &self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Matrix product `self · rhs` (apply `rhs` first).
    pub fn matmul(&self, rhs: &GateMatrix) -> Result<GateMatrix> {
        check_dims(self.cutoff(), rhs.cutoff())?;
        Ok(GateMatrix {
            entries: self.entries.dot(&rhs.entries),
        })
    }

    pub fn adjoint(&self) -> GateMatrix {
        GateMatrix {
            entries: self.entries.t().mapv(|c| c.conj()),
        }
    }

    pub fn scale(&self, factor: Complex64) -> GateMatrix {
        GateMatrix {
            entries: &self.entries * factor,
        }
    }

    /// `diag(left) · self · diag(right)`.
    pub(crate) fn sandwich(&self, left: &[Complex64], right: &[Complex64]) -> GateMatrix {
        let mut entries = self.entries.clone();
        for ((i, j), e) in entries.indexed_iter_mut() {
            *e = left[i] * *e * right[j];
        }
        GateMatrix { entries }
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &GateMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn one_norm(&self) -> f64 {
        self.entries
            .columns()
            .into_iter()
            .map(|col| col.iter().map(|c| c.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Add for &GateMatrix {
    type Output = GateMatrix;
    fn add(self, rhs: &GateMatrix) -> GateMatrix {
        GateMatrix {
            entries: &self.entries + &rhs.entries,
        }
    }
}

impl std::ops::Sub for &GateMatrix {
    type Output = GateMatrix;
    fn sub(self, rhs: &GateMatrix) -> GateMatrix {
        GateMatrix {
            entries: &self.entries - &rhs.entries,
        }
    }
}

/// Mean and variance of `x̂` for one measured state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureResult {
    pub mean: f64,
    pub variance: f64,
    /// Squared norm of the measured (non-renormalized) state.
    pub state_norm: f64,
}

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff < 2 {
        return Err(Error::invalid(format!("cutoff must be >= 2, got {cutoff}")));
    }
    Ok(())
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn norm_sqr(v: &Array1<Complex64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

pub(crate) fn guard_norm(norm_sqr: f64, cutoff: usize) -> Result<()> {
    // Also rejects NaN.
    if !(norm_sqr >= NORM_GUARD) {
        return Err(Error::Truncation {
            norm_sqr,
            cutoff,
            x: None,
        });
    }
    Ok(())
}

pub fn vacuum(cutoff: usize) -> Result<FockState> {
    FockState::number(0, cutoff)
}

/// Annihilation operator `a`: entry `(n-1, n) = √n`.
pub fn lowering_operator(cutoff: usize) -> Result<GateMatrix> {
    check_cutoff(cutoff)?;
    let mut entries = Array2::from_elem((cutoff, cutoff), ZERO);
    for n in 1..cutoff {
        entries[[n - 1, n]] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    Ok(GateMatrix { entries })
}

/// Creation operator `a†`.
pub fn raising_operator(cutoff: usize) -> Result<GateMatrix> {
    Ok(lowering_operator(cutoff)?.adjoint())
}

// Padé coefficients for degrees 3, 5, 7, 9, 13 and the 1-norm bounds under
// which each degree reaches unit roundoff (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

/// `exp(M)` by scaling and squaring with a diagonal Padé approximant.
pub fn matrix_exponential(m: &GateMatrix) -> Result<GateMatrix> {
    if !m.is_finite() {
        return Err(Error::invalid("matrix_exponential: non-finite entries"));
    }
    let norm = m.one_norm();
    let a = &m.entries;
    let low: [(&[f64], f64); 4] = [
        (&PADE3, THETA3),
        (&PADE5, THETA5),
        (&PADE7, THETA7),
        (&PADE9, THETA9),
    ];
    for (coeffs, theta) in low {
        if norm <= theta {
            return pade_low(a, coeffs).map(|entries| GateMatrix { entries });
        }
    }

    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * Complex64::new(2f64.powi(-squarings), 0.0);
    let mut result = pade13(&scaled)?;
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(GateMatrix { entries: result })
}

fn pade_low(a: &Array2<Complex64>, coeffs: &[f64]) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    let a2 = a.dot(a);
    let mut odd = Array2::<Complex64>::eye(n) * c(coeffs[1]);
    let mut even = Array2::<Complex64>::eye(n) * c(coeffs[0]);
    let mut power = a2.clone();
    for k in 1..coeffs.len() / 2 {
        odd = odd + &power * c(coeffs[2 * k + 1]);
        even = even + &power * c(coeffs[2 * k]);
        if k + 1 < coeffs.len() / 2 {
            power = power.dot(&a2);
        }
    }
    let u = a.dot(&odd);
    solve(&even - &u, &even + &u)
}

fn pade13(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let b = &PADE13;
    let n = a.nrows();
    let eye = Array2::<Complex64>::eye(n);
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let w1 = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    let w = a6.dot(&w1) + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + &eye * c(b[1]);
    let u = a.dot(&w);

    let z1 = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    let v = a6.dot(&z1) + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + &eye * c(b[0]);

    solve(&v - &u, &v + &u)
}

#[inline]
fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Solves `lhs · X = rhs` by LU with partial pivoting.
fn solve(mut lhs: Array2<Complex64>, mut rhs: Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = lhs.nrows();
    let m = rhs.ncols();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lhs[[i, col]].norm().total_cmp(&lhs[[j, col]].norm()))
            .unwrap_or(col);
        if lhs[[pivot_row, col]].norm() == 0.0 {
            return Err(Error::invalid("singular Padé denominator"));
        }
        if pivot_row != col {
            for j in 0..n {
                lhs.swap([col, j], [pivot_row, j]);
            }
            for j in 0..m {
                rhs.swap([col, j], [pivot_row, j]);
            }
        }
        let pivot = lhs[[col, col]];
        for row in col + 1..n {
            let factor = lhs[[row, col]] / pivot;
            if factor == ZERO {
                continue;
            }
            for j in col..n {
                let v = lhs[[col, j]];
                lhs[[row, j]] -= factor * v;
            }
            for j in 0..m {
                let v = rhs[[col, j]];
                rhs[[row, j]] -= factor * v;
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = lhs[[col, col]];
        for j in 0..m {
            let mut sum = rhs[[col, j]];
            for k in col + 1..n {
                sum -= lhs[[col, k]] * rhs[[k, j]];
            }
            rhs[[col, j]] = sum / pivot;
        }
    }
    Ok(rhs)
}

/// Coherent state `|α⟩` from the closed form `e^{-|α|²/2} αⁿ/√n!`.
pub fn coherent(alpha: Complex64, cutoff: usize) -> Result<FockState> {
    check_cutoff(cutoff)?;
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::invalid("coherent: non-finite alpha"));
    }
    let mut amplitudes = Array1::from_elem(cutoff, ZERO);
    amplitudes[0] = c((-0.5 * alpha.norm_sqr()).exp());
    for n in 1..cutoff {
        amplitudes[n] = amplitudes[n - 1] * alpha / (n as f64).sqrt();
    }
    guard_norm(norm_sqr(&amplitudes), cutoff)?;
    Ok(FockState { amplitudes })
}

/// `D(α) = exp(α a† − α* a)`.
pub fn displacement_matrix(alpha: Complex64, cutoff: usize) -> Result<GateMatrix> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::invalid("displacement: non-finite alpha"));
    }
    let a = lowering_operator(cutoff)?;
    let generator = &a.adjoint().scale(alpha) - &a.scale(alpha.conj());
    matrix_exponential(&generator)
}

/// `R(φ) = diag(e^{iφn})`.
pub fn rotation_matrix(phi: f64, cutoff: usize) -> Result<GateMatrix> {
    check_cutoff(cutoff)?;
    GateMatrix::diagonal(&rotation_phases(phi, cutoff))
}

pub(crate) fn rotation_phases(phi: f64, cutoff: usize) -> Vec<Complex64> {
    (0..cutoff)
        .map(|n| Complex64::from_polar(1.0, phi * n as f64))
        .collect()
}

/// Largest squeezing magnitude accepted before truncation becomes unreliable.
pub const MAX_SQUEEZE: f64 = 3.0;

/// `S(z) = exp((z* a² − z a†²)/2)` with `z = r e^{iφ}`. For `φ = 0, r > 0`
/// this maps `x → e^{-r} x`.
pub fn squeezing_matrix(r: f64, phi: f64, cutoff: usize) -> Result<GateMatrix> {
    check_squeeze(r)?;
    if !phi.is_finite() {
        return Err(Error::invalid("squeezing: non-finite phase"));
    }
    let z = Complex64::from_polar(r, phi);
    let a = lowering_operator(cutoff)?;
    let a2 = a.matmul(&a)?;
    let generator = (&a2.scale(z.conj()) - &a2.adjoint().scale(z)).scale(c(0.5));
    matrix_exponential(&generator)
}

pub(crate) fn check_squeeze(r: f64) -> Result<()> {
    if !r.is_finite() || r.abs() > MAX_SQUEEZE {
        return Err(Error::invalid(format!(
            "squeezing magnitude {r} exceeds {MAX_SQUEEZE}"
        )));
    }
    Ok(())
}

/// `K(κ) = diag(e^{iκn²})`.
pub fn kerr_matrix(kappa: f64, cutoff: usize) -> Result<GateMatrix> {
    check_cutoff(cutoff)?;
    GateMatrix::diagonal(&kerr_phases(kappa, cutoff))
}

pub(crate) fn kerr_phases(kappa: f64, cutoff: usize) -> Vec<Complex64> {
    (0..cutoff)
        .map(|n| Complex64::from_polar(1.0, kappa * (n * n) as f64))
        .collect()
}

/// Matrix-vector product. No renormalization.
pub fn apply(gate: &GateMatrix, state: &FockState) -> Result<FockState> {
    Ok(FockState {
        amplitudes: apply_vector(gate, &state.amplitudes)?,
    })
}

pub(crate) fn apply_vector(gate: &GateMatrix, v: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    check_dims(gate.cutoff(), v.len())?;
    Ok(gate.entries.dot(v))
}

/// `(a + a†) v` on the truncated space.
pub(crate) fn quadrature_times(v: &Array1<Complex64>) -> Array1<Complex64> {
    let n = v.len();
    let mut out = Array1::from_elem(n, ZERO);
    for k in 0..n {
        let mut acc = ZERO;
        if k > 0 {
            acc += v[k - 1] * (k as f64).sqrt();
        }
        if k + 1 < n {
            acc += v[k + 1] * ((k + 1) as f64).sqrt();
        }
        out[k] = acc;
    }
    out
}

/// `Re(u† w)`.
pub(crate) fn inner_re(u: &Array1<Complex64>, w: &Array1<Complex64>) -> f64 {
    u.iter()
        .zip(w.iter())
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum()
}

/// `⟨ψ|x̂|ψ⟩` and `Var(x̂)` on the raw amplitudes, guarded by the norm check.
pub fn quad_expectation(state: &FockState) -> Result<QuadratureResult> {
    let state_norm = state.norm_sqr();
    guard_norm(state_norm, state.cutoff())?;
    let x_psi = quadrature_times(&state.amplitudes);
    let mean = inner_re(&state.amplitudes, &x_psi);
    // X is Hermitian, so ψ†X²ψ = ‖Xψ‖².
    let second = norm_sqr(&x_psi);
    Ok(QuadratureResult {
        mean,
        variance: (second - mean * mean).max(0.0),
        state_norm,
    })
}
