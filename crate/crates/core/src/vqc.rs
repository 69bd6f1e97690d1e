//! The 4-qubit variational classifier circuit.
//!
//! Layout, top to bottom on qubits 0..4:
//!
//! ```text
//! |0> RY(atan x_i) RZ(atan x_i^2) | CNOT 0->1, 1->2, 2->3, 3->0 | Rot(a_i, b_i, g_i) | <Z>
//! ```
//!
//! Only qubits 0 and 1 are read out. Gradients use the two-point
//! parameter-shift rule, which is exact here because every trainable angle
//! enters through a single `exp(-i theta P / 2)` factor.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::statevector::{rot_matrix, GateOp, Matrix2, QuantumState};

pub const N_QUBITS: usize = 4;
pub const N_PARAMS: usize = 3 * N_QUBITS;
pub const N_OUTPUTS: usize = 2;

/// CNOT ring of the entangling block, as `(control, target)`.
pub const CNOT_RING: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];

/// Trainable angles: row `i` is `(alpha_i, beta_i, gamma_i)` for qubit `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqcParameters {
    angles: [[f64; 3]; N_QUBITS],
}

impl VqcParameters {
    pub fn new(angles: [[f64; 3]; N_QUBITS]) -> Result<Self> {
        if angles.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::invalid("VQC angles must be finite"));
        }
        Ok(Self { angles })
    }

    pub fn zeros() -> Self {
        Self { angles: [[0.0; 3]; N_QUBITS] }
    }

    /// Builds parameters from a flat row-major slice of 12 angles.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != N_PARAMS {
            return Err(Error::invalid(format!(
                "expected {N_PARAMS} VQC angles, got {}",
                flat.len()
            )));
        }
        let mut angles = [[0.0; 3]; N_QUBITS];
        for (i, a) in flat.iter().enumerate() {
            angles[i / 3][i % 3] = *a;
        }
        Self::new(angles)
    }

    pub fn angles(&self) -> &[[f64; 3]; N_QUBITS] {
        &self.angles
    }

    /// Row-major flattening: `[a0, b0, g0, a1, ...]`.
    pub fn to_flat(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        for (i, v) in self.angles.iter().flatten().enumerate() {
            out[i] = *v;
        }
        out
    }
}

/// Four reduced features fed to the encoding block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedInput([f64; N_QUBITS]);

impl EncodedInput {
    pub fn new(features: [f64; N_QUBITS]) -> Result<Self> {
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("encoded features must be finite"));
        }
        Ok(Self(features))
    }

    pub fn from_slice(features: &[f64]) -> Result<Self> {
        let arr: [f64; N_QUBITS] = features.try_into().map_err(|_| {
            Error::invalid(format!("expected {N_QUBITS} features, got {}", features.len()))
        })?;
        Self::new(arr)
    }

    pub fn features(&self) -> &[f64; N_QUBITS] {
        &self.0
    }
}

/// Gates of the encoding block for `x`.
pub fn encoding_gates(x: &EncodedInput) -> Vec<GateOp> {
    x.0.iter()
        .enumerate()
        .flat_map(|(q, &v)| {
            [
                GateOp::Ry { target: q, theta: v.atan() },
                GateOp::Rz { target: q, theta: (v * v).atan() },
            ]
        })
        .collect()
}

/// The full gate list: encoding, CNOT ring, then one `Rot` per qubit.
pub fn circuit_gates(x: &EncodedInput, params: &VqcParameters) -> Vec<GateOp> {
    let mut gates = encoding_gates(x);
    gates.extend(CNOT_RING.iter().map(|&(control, target)| GateOp::Cnot { control, target }));
    gates.extend(params.angles.iter().enumerate().map(|(q, &[alpha, beta, gamma])| {
        GateOp::Rot { target: q, alpha, beta, gamma }
    }));
    gates
}

/// `E(x)|0000>`.
pub fn encode(x: &EncodedInput) -> Result<QuantumState> {
    let mut state = QuantumState::zero_state(N_QUBITS)?;
    for gate in encoding_gates(x) {
        state.apply_gate_mut(&gate)?;
    }
    Ok(state)
}

/// State after encoding and the parameter-free CNOT ring.
fn entangled(x: &EncodedInput) -> Result<QuantumState> {
    let mut state = encode(x)?;
    for &(control, target) in &CNOT_RING {
        state.apply_cnot(control, target);
    }
    Ok(state)
}

fn rot_matrices(params: &VqcParameters) -> [Matrix2; N_QUBITS] {
    params.angles.map(|[a, b, g]| rot_matrix(a, b, g))
}

fn readout(entangled: &QuantumState, rots: &[Matrix2; N_QUBITS]) -> [f64; N_OUTPUTS] {
    let mut state = entangled.clone();
    for (q, m) in rots.iter().enumerate() {
        state.apply_single(q, m);
    }
    [state.expectation_z_unchecked(0), state.expectation_z_unchecked(1)]
}

/// `(<Z_0>, <Z_1>)` at the circuit output.
pub fn vqc_forward(x: &EncodedInput, params: &VqcParameters) -> Result<[f64; N_OUTPUTS]> {
    Ok(readout(&entangled(x)?, &rot_matrices(params)))
}

/// Forward outputs together with the full parameter-shift Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct VqcJacobian {
    pub outputs: [f64; N_OUTPUTS],
    /// `grads[k][j] = d<Z_k>/d(angle j)`, angles in row-major order.
    pub grads: [[f64; N_PARAMS]; N_OUTPUTS],
}

pub fn vqc_jacobian(x: &EncodedInput, params: &VqcParameters) -> Result<VqcJacobian> {
    let base = entangled(x)?;
    let rots = rot_matrices(params);
    let outputs = readout(&base, &rots);
    let mut grads = [[0.0; N_PARAMS]; N_OUTPUTS];
    for j in 0..N_PARAMS {
        let shifted = |delta: f64| {
            let mut angles = params.angles[j / 3];
            angles[j % 3] += delta;
            let mut r = rots;
            r[j / 3] = rot_matrix(angles[0], angles[1], angles[2]);
            readout(&base, &r)
        };
        let f_plus = shifted(FRAC_PI_2);
        let f_minus = shifted(-FRAC_PI_2);
        for k in 0..N_OUTPUTS {
            grads[k][j] = 0.5 * (f_plus[k] - f_minus[k]);
        }
    }
    Ok(VqcJacobian { outputs, grads })
}

/// Parameter-shift gradient of one readout with respect to all 12 angles.
pub fn vqc_gradient(
    x: &EncodedInput,
    params: &VqcParameters,
    output_index: usize,
) -> Result<[f64; N_PARAMS]> {
    if output_index >= N_OUTPUTS {
        return Err(Error::invalid(format!("output index {output_index} must be 0 or 1")));
    }
    Ok(vqc_jacobian(x, params)?.grads[output_index])
}
