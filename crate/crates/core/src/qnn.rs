//! The quantum surrogate network.
//!
//! One layer (quantum neural unit) applies, in order, a rotation, a squeezer,
//! a second rotation, a displacement and a Kerr gate. With a single qumode
//! the interferometers reduce to rotations, so each layer has seven real
//! parameters. The collocation point is encoded as the coherent state
//! `|x⟩` and the network output is `⟨x̂⟩` of the final state.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cv_sim::{self, FockState, GateMatrix, QuadratureResult};
use crate::error::{Error, Result};
use crate::jets::{self, SurrogateJet};

/// Number of real parameters per layer.
pub const PARAMS_PER_LAYER: usize = 7;

/// Standard deviation of the initial parameter draw.
pub const INIT_STD: f64 = 0.05;

/// Gate parameters of one layer, in circuit order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub theta1: f64,
    pub sq_r: f64,
    pub sq_phi: f64,
    pub theta2: f64,
    pub d_mag: f64,
    pub d_phi: f64,
    pub kappa: f64,
}

impl LayerParams {
    pub fn to_array(&self) -> [f64; PARAMS_PER_LAYER] {
        [
            self.theta1,
            self.sq_r,
            self.sq_phi,
            self.theta2,
            self.d_mag,
            self.d_phi,
            self.kappa,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != PARAMS_PER_LAYER {
            return Err(Error::DimensionMismatch {
                expected: PARAMS_PER_LAYER,
                found: v.len(),
            });
        }
        let lp = Self {
            theta1: v[0],
            sq_r: v[1],
            sq_phi: v[2],
            theta2: v[3],
            d_mag: v[4],
            d_phi: v[5],
            kappa: v[6],
        };
        lp.validate()?;
        Ok(lp)
    }

    fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        cv_sim::check_squeeze(self.sq_r)
    }
}

/// Parameters of a whole circuit plus the Fock cutoff it is simulated at.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitParams {
    pub layers: Vec<LayerParams>,
    pub cutoff: usize,
}

impl CircuitParams {
    pub fn new(layers: Vec<LayerParams>, cutoff: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a circuit needs at least one layer"));
        }
        if cutoff < 2 {
            return Err(Error::invalid(format!("cutoff must be >= 2, got {cutoff}")));
        }
        for lp in &layers {
            lp.validate()?;
        }
        Ok(Self { layers, cutoff })
    }

    /// All-zero parameters: the circuit is the identity.
    pub fn zeros(num_layers: usize, cutoff: usize) -> Result<Self> {
        Self::new(vec![LayerParams::default(); num_layers], cutoff)
    }

    /// Rebuilds parameters from the flat layout used by the optimizers.
    pub fn from_flat(flat: &[f64], cutoff: usize) -> Result<Self> {
        if flat.is_empty() || flat.len() % PARAMS_PER_LAYER != 0 {
            return Err(Error::invalid(format!(
                "parameter vector length {} is not a positive multiple of {PARAMS_PER_LAYER}",
                flat.len()
            )));
        }
        let layers = flat
            .chunks(PARAMS_PER_LAYER)
            .map(LayerParams::from_slice)
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, cutoff)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|lp| lp.to_array()).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        PARAMS_PER_LAYER * self.layers.len()
    }
}

/// Draws every parameter i.i.d. from `N(0, 0.05²)`.
pub fn init_params<R: Rng + ?Sized>(num_layers: usize, cutoff: usize, rng: &mut R) -> Result<CircuitParams> {
    if num_layers == 0 {
        return Err(Error::invalid("a circuit needs at least one layer"));
    }
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal distribution");
    let flat: Vec<f64> = (0..num_layers * PARAMS_PER_LAYER).map(|_| normal.sample(rng)).collect();
    CircuitParams::from_flat(&flat, cutoff)
}

// The displacement and squeezer of a layer with their phases stripped:
// D(m e^{iφ}) = R(φ) D(m) R(-φ) and S(r, φ) = R(φ/2) S(r, 0) R(-φ/2).
// Only these two cores need a matrix exponential.
#[derive(Clone, Debug)]
struct LayerFactors {
    displacement: GateMatrix,
    squeeze: GateMatrix,
}

impl LayerFactors {
    fn new(lp: &LayerParams, cutoff: usize) -> Result<Self> {
        Ok(Self {
            displacement: cv_sim::displacement_matrix(Complex64::new(lp.d_mag, 0.0), cutoff)?,
            squeeze: cv_sim::squeezing_matrix(lp.sq_r, 0.0, cutoff)?,
        })
    }

    // U = K · D · R(θ2) · S · R(θ1), with every diagonal factor folded into
    // three phase vectors around the two cores.
    fn assemble(&self, lp: &LayerParams) -> Result<GateMatrix> {
        let cutoff = self.displacement.cutoff();
        let phase = |f: &dyn Fn(f64) -> f64| -> Vec<Complex64> {
            (0..cutoff)
                .map(|n| Complex64::from_polar(1.0, f(n as f64)))
                .collect()
        };
        let left = phase(&|n| lp.kappa * n * n + lp.d_phi * n);
        let middle = phase(&|n| (lp.theta2 - lp.d_phi + 0.5 * lp.sq_phi) * n);
        let right = phase(&|n| (lp.theta1 - 0.5 * lp.sq_phi) * n);
        let ones = vec![Complex64::new(1.0, 0.0); cutoff];
        let inner = self.squeeze.sandwich(&middle, &right);
        Ok(self.displacement.matmul(&inner)?.sandwich(&left, &ones))
    }
}

/// `K(κ) · D(d_mag e^{i d_phi}) · R(θ2) · S(sq_r, sq_phi) · R(θ1)`.
pub fn layer_matrix(lp: &LayerParams, cutoff: usize) -> Result<GateMatrix> {
    lp.validate()?;
    LayerFactors::new(lp, cutoff)?.assemble(lp)
}

/// A circuit reduced to its overall operator, ready to evaluate at many
/// collocation points.
#[derive(Clone, Debug)]
pub struct CompiledCircuit {
    unitary: GateMatrix,
}

impl CompiledCircuit {
    pub fn compile(params: &CircuitParams) -> Result<Self> {
        let mut layers = params.layers.iter();
        let first = layers.next().ok_or_else(|| Error::invalid("empty circuit"))?;
        let mut unitary = layer_matrix(first, params.cutoff)?;
        for lp in layers {
            unitary = layer_matrix(lp, params.cutoff)?.matmul(&unitary)?;
        }
        Ok(Self { unitary })
    }

    pub fn from_unitary(unitary: GateMatrix) -> Self {
        Self { unitary }
    }

    pub fn unitary(&self) -> &GateMatrix {
        &self.unitary
    }

    pub fn cutoff(&self) -> usize {
        self.unitary.cutoff()
    }

    /// Final state for collocation point `x`.
    pub fn state(&self, x: f64) -> Result<FockState> {
        let encoded = cv_sim::coherent(Complex64::new(x, 0.0), self.cutoff()).map_err(|e| e.at_point(x))?;
        cv_sim::apply(&self.unitary, &encoded)
    }

    pub fn evaluate(&self, x: f64) -> Result<QuadratureResult> {
        cv_sim::quad_expectation(&self.state(x)?).map_err(|e| e.at_point(x))
    }

    pub fn evaluate_jet(&self, x: f64) -> Result<SurrogateJet> {
        let jet = jets::propagate(&self.unitary, &jets::coherent_jet(x, self.cutoff())?)?;
        jets::quad_jet(&jet).map_err(|e| e.at_point(x))
    }
}

/// `Φ̃(x)`.
pub fn forward(params: &CircuitParams, x: f64) -> Result<f64> {
    Ok(forward_batch(params, &[x])?[0])
}

/// `(Φ̃, Φ̃′, Φ̃″)` at `x`.
pub fn forward_jet(params: &CircuitParams, x: f64) -> Result<SurrogateJet> {
    Ok(forward_batch_jet(params, &[x])?[0])
}

/// Elementwise [`forward`] with the circuit operator built once.
pub fn forward_batch(params: &CircuitParams, xs: &[f64]) -> Result<Vec<f64>> {
    let circuit = CompiledCircuit::compile(params)?;
    xs.iter().map(|&x| circuit.evaluate(x).map(|q| q.mean)).collect()
}

pub fn forward_batch_jet(params: &CircuitParams, xs: &[f64]) -> Result<Vec<SurrogateJet>> {
    let circuit = CompiledCircuit::compile(params)?;
    xs.iter().map(|&x| circuit.evaluate_jet(x)).collect()
}

/// Cached layer products for evaluating the circuit with one parameter
/// changed at a time.
///
/// A perturbed circuit is `suffix · U'_k · prefix`, so each probe costs one
/// layer assembly and at most two matrix products. The matrix exponentials
/// are only redone when the probe touches a squeeze or displacement
/// magnitude.
#[derive(Clone, Debug)]
pub struct CircuitProbe {
    params: CircuitParams,
    factors: Vec<LayerFactors>,
    // prefix[k] = U_k ⋯ U_0, suffix[k] = U_{L-1} ⋯ U_k
    prefix: Vec<GateMatrix>,
    suffix: Vec<GateMatrix>,
}

impl CircuitProbe {
    pub fn new(params: &CircuitParams) -> Result<Self> {
        let cutoff = params.cutoff;
        let factors = params
            .layers
            .iter()
            .map(|lp| LayerFactors::new(lp, cutoff))
            .collect::<Result<Vec<_>>>()?;
        let layers = params
            .layers
            .iter()
            .zip(&factors)
            .map(|(lp, f)| f.assemble(lp))
            .collect::<Result<Vec<_>>>()?;

        let mut prefix: Vec<GateMatrix> = Vec::with_capacity(layers.len());
        for (k, layer) in layers.iter().enumerate() {
            let p = if k == 0 {
                layer.clone()
            } else {
                layer.matmul(&prefix[k - 1])?
            };
            prefix.push(p);
        }
        let mut suffix = layers.clone();
        for k in (0..layers.len().saturating_sub(1)).rev() {
            suffix[k] = suffix[k + 1].matmul(&layers[k])?;
        }
        Ok(Self {
            params: params.clone(),
            factors,
            prefix,
            suffix,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// The unperturbed circuit; identical to [`CompiledCircuit::compile`].
    pub fn base(&self) -> CompiledCircuit {
        CompiledCircuit {
            unitary: self.prefix.last().expect("non-empty circuit").clone(),
        }
    }

    /// The circuit with flat parameter `index` replaced by `value`.
    pub fn perturbed(&self, index: usize, value: f64) -> Result<CompiledCircuit> {
        let n = self.num_params();
        if index >= n {
            return Err(Error::invalid(format!("parameter index {index} out of range 0..{n}")));
        }
        let (k, slot) = (index / PARAMS_PER_LAYER, index % PARAMS_PER_LAYER);
        let mut values = self.params.layers[k].to_array();
        values[slot] = value;
        let lp = LayerParams::from_slice(&values)?;
        let cutoff = self.params.cutoff;

        let layer = match slot {
            1 => LayerFactors {
                displacement: self.factors[k].displacement.clone(),
                squeeze: cv_sim::squeezing_matrix(lp.sq_r, 0.0, cutoff)?,
            }
            .assemble(&lp)?,
            4 => LayerFactors {
                displacement: cv_sim::displacement_matrix(Complex64::new(lp.d_mag, 0.0), cutoff)?,
                squeeze: self.factors[k].squeeze.clone(),
            }
            .assemble(&lp)?,
            _ => self.factors[k].assemble(&lp)?,
        };

        let mut unitary = layer;
        if k > 0 {
            unitary = unitary.matmul(&self.prefix[k - 1])?;
        }
        if k + 1 < self.suffix.len() {
            unitary = self.suffix[k + 1].matmul(&unitary)?;
        }
        Ok(CompiledCircuit { unitary })
    }
}
