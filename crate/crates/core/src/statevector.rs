//! Dense statevector simulation for small registers.
//!
//! Qubit 0 is the most significant bit of the basis index, so the ket
//! `|q0 q1 ... q(n-1)>` reads top-to-bottom like a circuit diagram. For a
//! 2-qubit register, basis index 2 (`0b10`) is `|10>`: qubit 0 set.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2x2 complex matrix in row-major order.
pub type Matrix2 = [[Complex64; 2]; 2];

/// Complex amplitudes of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

/// One gate of the supported set.
///
/// `Rot { alpha, beta, gamma }` is the product `RZ(alpha) * RY(beta) * RZ(gamma)`:
/// `RZ(gamma)` acts first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateOp {
    Ry { target: usize, theta: f64 },
    Rz { target: usize, theta: f64 },
    Cnot { control: usize, target: usize },
    Rot { target: usize, alpha: f64, beta: f64, gamma: f64 },
}

impl GateOp {
    pub fn target(&self) -> usize {
        match *self {
            GateOp::Ry { target, .. }
            | GateOp::Rz { target, .. }
            | GateOp::Cnot { target, .. }
            | GateOp::Rot { target, .. } => target,
        }
    }

    /// The gate undoing `self`. Rotations negate their angles (for `Rot` the
    /// factor order also reverses); CNOT is its own inverse.
    pub fn inverse(&self) -> GateOp {
        match *self {
            GateOp::Ry { target, theta } => GateOp::Ry { target, theta: -theta },
            GateOp::Rz { target, theta } => GateOp::Rz { target, theta: -theta },
            GateOp::Cnot { .. } => *self,
            GateOp::Rot { target, alpha, beta, gamma } => GateOp::Rot {
                target,
                alpha: -gamma,
                beta: -beta,
                gamma: -alpha,
            },
        }
    }

    /// The single-qubit matrix of this gate, or `None` for CNOT.
    pub fn matrix(&self) -> Option<Matrix2> {
        match *self {
            GateOp::Ry { theta, .. } => Some(ry_matrix(theta)),
            GateOp::Rz { theta, .. } => Some(rz_matrix(theta)),
            GateOp::Rot { alpha, beta, gamma, .. } => Some(rot_matrix(alpha, beta, gamma)),
            GateOp::Cnot { .. } => None,
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let target = self.target();
        if target >= n_qubits {
            return Err(Error::invalid(format!(
                "gate target {target} out of range for {n_qubits} qubits"
            )));
        }
        match *self {
            GateOp::Cnot { control, target } => {
                if control >= n_qubits {
                    return Err(Error::invalid(format!(
                        "gate control {control} out of range for {n_qubits} qubits"
                    )));
                }
                if control == target {
                    return Err(Error::invalid("CNOT control equals target"));
                }
            }
            GateOp::Ry { theta, .. } | GateOp::Rz { theta, .. } if !theta.is_finite() => {
                return Err(Error::invalid("non-finite rotation angle"));
            }
            GateOp::Rot { alpha, beta, gamma, .. }
                if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) =>
            {
                return Err(Error::invalid("non-finite rotation angle"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// `RY(theta) = exp(-i theta Y / 2)`.
pub fn ry_matrix(theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

/// `RZ(theta) = exp(-i theta Z / 2) = diag(e^{-i theta/2}, e^{i theta/2})`.
pub fn rz_matrix(theta: f64) -> Matrix2 {
    [
        [Complex64::from_polar(1.0, -theta / 2.0), ZERO],
        [ZERO, Complex64::from_polar(1.0, theta / 2.0)],
    ]
}

/// `RZ(alpha) * RY(beta) * RZ(gamma)`.
pub fn rot_matrix(alpha: f64, beta: f64, gamma: f64) -> Matrix2 {
    matmul2(&rz_matrix(alpha), &matmul2(&ry_matrix(beta), &rz_matrix(gamma)))
}

pub fn matmul2(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut out = [[ZERO; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

impl QuantumState {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::invalid(format!(
                "n_qubits must be in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Ok(Self { n_qubits, amplitudes })
    }

    /// Builds a state from raw amplitudes. The vector length must be a power
    /// of two and the state must be normalized to within 1e-10.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("amplitude count {len} is not 2^n, n >= 1")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::invalid(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        let state = Self { n_qubits, amplitudes };
        let norm = state.norm_sqr();
        if !((1.0 - 1e-10)..=(1.0 + 1e-10)).contains(&norm) {
            return Err(Error::invalid(format!("state is not normalized (|psi|^2 = {norm})")));
        }
        Ok(state)
    }

    /// Computational basis state `|index>`.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        let mut state = Self::zero_state(n_qubits)?;
        if index >= state.amplitudes.len() {
            return Err(Error::invalid(format!("basis index {index} out of range")));
        }
        state.amplitudes[0] = ZERO;
        state.amplitudes[index] = ONE;
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Returns the image of `self` under `gate`.
    pub fn apply_gate(&self, gate: &GateOp) -> Result<Self> {
        let mut out = self.clone();
        out.apply_gate_mut(gate)?;
        Ok(out)
    }

    /// In-place variant of [`QuantumState::apply_gate`].
    pub fn apply_gate_mut(&mut self, gate: &GateOp) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match *gate {
            GateOp::Cnot { control, target } => self.apply_cnot(control, target),
            _ => {
                let m = gate.matrix().expect("single-qubit gate");
                self.apply_single(gate.target(), &m);
            }
        }
        Ok(())
    }

    /// Index stride of `qubit` under MSB-first ordering.
    #[inline]
    fn stride(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    /// Applies a 2x2 matrix to `qubit`. The caller guarantees `qubit` is valid.
    pub(crate) fn apply_single(&mut self, qubit: usize, m: &Matrix2) {
        let stride = self.stride(qubit);
        let dim = self.amplitudes.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + stride {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i + stride];
                self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amplitudes[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
            base += 2 * stride;
        }
    }

    pub(crate) fn apply_cnot(&mut self, control: usize, target: usize) {
        let cmask = self.stride(control);
        let tmask = self.stride(target);
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
    }

    /// Pauli-Z expectation of `qubit`: probability of bit 0 minus probability of bit 1.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.n_qubits {
            return Err(Error::invalid(format!(
                "qubit {qubit} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(self.expectation_z_unchecked(qubit))
    }

    pub(crate) fn expectation_z_unchecked(&self, qubit: usize) -> f64 {
        let mask = self.stride(qubit);
        let value: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum();
        value.clamp(-1.0, 1.0)
    }
}
