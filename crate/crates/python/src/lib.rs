//! Python bindings for `qfldp_core`.

use std::collections::HashMap;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qfldp_core::accountant;
use qfldp_core::dp_sgd;
use qfldp_core::harness::config::TrainingConfig;
use qfldp_core::harness::{run_experiment, run_in_memory};
use qfldp_core::model::{Example, HybridModel};
use qfldp_core::rng::{stream, Purpose};
use qfldp_core::statevector::{GateOp, QuantumState};
use qfldp_core::vqc::{self, EncodedInput, VqcParameters};
use qfldp_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Numerical(_) | Error::InvalidState(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for qfldp_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A gate of the simulator's gate set.
#[pyclass(name = "Gate", frozen)]
struct PyGate(GateOp);

#[pymethods]
impl PyGate {
    #[staticmethod]
    fn ry(target: usize, theta: f64) -> Self {
        Self(GateOp::Ry { target, theta })
    }

    #[staticmethod]
    fn rz(target: usize, theta: f64) -> Self {
        Self(GateOp::Rz { target, theta })
    }

    #[staticmethod]
    fn cnot(control: usize, target: usize) -> Self {
        Self(GateOp::Cnot { control, target })
    }

    #[staticmethod]
    fn rot(target: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self(GateOp::Rot { target, alpha, beta, gamma })
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Statevector of a small qubit register. Gates return new states.
#[pyclass(name = "QuantumState", frozen)]
struct PyQuantumState(QuantumState);

#[pymethods]
impl PyQuantumState {
    #[staticmethod]
    fn zero(n_qubits: usize) -> PyResult<Self> {
        QuantumState::zero_state(n_qubits).py().map(Self)
    }

    #[staticmethod]
    fn from_amplitudes(amplitudes: Vec<Complex64>) -> PyResult<Self> {
        QuantumState::from_amplitudes(amplitudes).py().map(Self)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    #[getter]
    fn amplitudes(&self) -> Vec<Complex64> {
        self.0.amplitudes().to_vec()
    }

    fn apply(&self, gate: PyRef<'_, PyGate>) -> PyResult<Self> {
        self.0.apply_gate(&gate.0).py().map(Self)
    }

    fn expectation_z(&self, qubit: usize) -> PyResult<f64> {
        self.0.expectation_z(qubit).py()
    }
}

/// `(<Z_0>, <Z_1>)` of the circuit for 4 encoded features and 12 angles.
#[pyfunction]
fn vqc_forward(x: Vec<f64>, angles: Vec<f64>) -> PyResult<(f64, f64)> {
    let x = EncodedInput::from_slice(&x).py()?;
    let p = VqcParameters::from_flat(&angles).py()?;
    let [z0, z1] = vqc::vqc_forward(&x, &p).py()?;
    Ok((z0, z1))
}

/// Parameter-shift gradient of readout `output` with respect to the 12 angles.
#[pyfunction]
fn vqc_gradient(x: Vec<f64>, angles: Vec<f64>, output: usize) -> PyResult<Vec<f64>> {
    let x = EncodedInput::from_slice(&x).py()?;
    let p = VqcParameters::from_flat(&angles).py()?;
    Ok(vqc::vqc_gradient(&x, &p, output).py()?.to_vec())
}

/// The hybrid classifier, as written to `model.txt`.
#[pyclass(name = "HybridModel", frozen)]
struct PyHybridModel(HybridModel);

#[pymethods]
impl PyHybridModel {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        HybridModel::from_text(text).py().map(Self)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn trainable(&self) -> Vec<f64> {
        self.0.trainable().to_vec()
    }

    fn with_trainable(&self, params: Vec<f64>) -> PyResult<Self> {
        self.0.with_trainable(&params).py().map(Self)
    }

    /// Class probabilities for raw features.
    fn forward(&self, features: Vec<f64>) -> PyResult<(f64, f64)> {
        let [p0, p1] = self.0.forward(&features).py()?;
        Ok((p0, p1))
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<u8> {
        self.0.predict(&features).py()
    }

    /// Cross-entropy loss and its gradient over the 18 trainable parameters.
    fn loss_and_gradient(&self, features: Vec<f64>, label: u8) -> PyResult<(f64, Vec<f64>)> {
        let e = Example::new(features, label).py()?;
        let (loss, g) = self.0.loss_and_gradient(&e).py()?;
        Ok((loss, g.to_vec()))
    }
}

#[pyfunction]
fn clip_gradient(gradient: Vec<f64>, clip_norm: f64) -> PyResult<Vec<f64>> {
    dp_sgd::clip_gradient(&gradient, clip_norm).py()
}

#[pyfunction]
fn rdp_step_cost(q: f64, sigma: f64, alpha: f64) -> PyResult<f64> {
    accountant::rdp_step_cost(q, sigma, alpha).py()
}

#[pyfunction]
fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> PyResult<f64> {
    accountant::epsilon_for(q, sigma, steps, delta).py()
}

#[pyfunction]
fn calibrate_sigma(target_epsilon: f64, q: f64, steps: u64, delta: f64) -> PyResult<f64> {
    accountant::calibrate_sigma(target_epsilon, q, steps, delta).py()
}

/// Rényi-DP ledger for repeated subsampled Gaussian steps.
#[pyclass(name = "PrivacyLedger")]
struct PyPrivacyLedger(accountant::PrivacyLedger);

#[pymethods]
impl PyPrivacyLedger {
    #[new]
    fn new(q: f64, sigma: f64, delta: f64) -> PyResult<Self> {
        accountant::PrivacyLedger::new(q, sigma, delta).py().map(Self)
    }

    fn accumulate(&mut self, steps: u64) {
        self.0.accumulate(steps);
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.0.steps()
    }

    #[getter]
    fn orders(&self) -> Vec<f64> {
        self.0.orders().to_vec()
    }

    #[getter]
    fn rdp_costs(&self) -> Vec<f64> {
        self.0.rdp_costs()
    }

    /// `(epsilon, best_order)`.
    fn epsilon(&self) -> PyResult<(f64, f64)> {
        let s = self.0.epsilon().py()?;
        Ok((s.epsilon, s.order))
    }
}

/// Synthetic two-cluster dataset as `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (n, d, separation, seed=0))]
fn generate_synthetic(n: usize, d: usize, separation: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let ex = qfldp_core::harness::data::generate_synthetic(
        n,
        d,
        separation,
        &mut stream(seed, Purpose::Synthetic, 0, 0),
    )
    .py()?;
    Ok(ex.into_iter().map(|e| (e.features().to_vec(), e.label())).unzip())
}

/// `(round, epsilon, train_loss, test_loss, test_accuracy, wall_seconds)`.
type Row = (usize, f64, f64, f64, f64, f64);

/// Runs a training configuration given as `key -> value` overrides of the
/// defaults. With `write=True` the output files are written as by the CLI.
/// Returns the final epsilon, the metrics rows and the model.
#[pyfunction]
#[pyo3(signature = (overrides=None, write=false))]
fn train(
    py: Python<'_>,
    overrides: Option<HashMap<String, String>>,
    write: bool,
) -> PyResult<(f64, Vec<Row>, PyHybridModel)> {
    let mut cfg = TrainingConfig::default();
    let mut keys: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
    keys.sort();
    for (k, v) in keys {
        cfg.set(&k, &v).py()?;
    }
    let report = py
        .detach(|| if write { run_experiment(&cfg) } else { run_in_memory(&cfg) })
        .py()?;
    let rows = report
        .rows
        .iter()
        .map(|r| (r.round, r.epsilon, r.train_loss, r.test_loss, r.test_accuracy, r.wall_seconds))
        .collect();
    Ok((report.final_epsilon, rows, PyHybridModel(report.model)))
}

#[pymodule]
fn qfldp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGate>()?;
    m.add_class::<PyQuantumState>()?;
    m.add_class::<PyHybridModel>()?;
    m.add_class::<PyPrivacyLedger>()?;
    m.add_function(wrap_pyfunction!(vqc_forward, m)?)?;
    m.add_function(wrap_pyfunction!(vqc_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(clip_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_step_cost, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_for, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
