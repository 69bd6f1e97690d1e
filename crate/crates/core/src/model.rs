//! Hybrid classifier: frozen linear reducer -> VQC -> affine head -> softmax.
//!
//! Trainable parameters are always handled as one flat 18-vector:
//!
//! | index  | meaning                                   |
//! |--------|-------------------------------------------|
//! | 0..12  | VQC angles, row-major `(a_i, b_i, g_i)`   |
//! | 12..16 | head weights, row-major `W[class][input]` |
//! | 16..18 | head bias per class                       |

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vqc::{self, EncodedInput, VqcParameters, N_OUTPUTS, N_PARAMS, N_QUBITS};

pub const N_TRAINABLE: usize = N_PARAMS + 4 + 2;
pub const N_CLASSES: usize = 2;

/// Width of the interval the reducer maps the training range of each output onto.
pub const FEATURE_SPAN: f64 = 2.0;

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    features: Vec<f64>,
    label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("example features must be finite"));
        }
        Ok(Self { features, label })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self) -> u8 {
        self.label
    }
}

/// How the reducer's projection is chosen when fitting on a training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducerKind {
    /// Top-4 principal directions of the training features.
    Pca,
    /// Seeded Gaussian random directions, rows normalized.
    Random,
}

impl std::str::FromStr for ReducerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ReducerKind::Pca),
            "random" => Ok(ReducerKind::Random),
            other => Err(Error::Config(format!("unknown reducer kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ReducerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReducerKind::Pca => "pca",
            ReducerKind::Random => "random",
        })
    }
}

/// Frozen `d -> 4` map: `out_k = (sum_j P[k][j] x_j - offset_k) / scale_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    n_features: usize,
    /// Row-major `4 x n_features`.
    projection: Vec<f64>,
    offset: [f64; N_QUBITS],
    scale: [f64; N_QUBITS],
}

impl Reducer {
    pub fn new(
        n_features: usize,
        projection: Vec<f64>,
        offset: [f64; N_QUBITS],
        scale: [f64; N_QUBITS],
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("reducer needs at least one input feature"));
        }
        if projection.len() != N_QUBITS * n_features {
            return Err(Error::invalid(format!(
                "projection has {} entries, expected {}",
                projection.len(),
                N_QUBITS * n_features
            )));
        }
        let all_finite = projection.iter().chain(&offset).chain(&scale).all(|v| v.is_finite());
        if !all_finite || scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid("reducer entries must be finite with positive scales"));
        }
        Ok(Self { n_features, projection, offset, scale })
    }

    /// Fits the projection on `train`, then sets offset and scale so each
    /// output spans `[0, FEATURE_SPAN]` over the training split.
    ///
    /// The offset matters: the circuit readout is invariant under flipping
    /// the sign of all four encoded features, so a zero-centred encoding of
    /// mirror-symmetric classes could not be separated.
    pub fn fit<R: Rng + ?Sized>(train: &[Example], kind: ReducerKind, rng: &mut R) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::invalid("cannot fit reducer on empty data"))?;
        let d = first.features.len();
        if train.iter().any(|e| e.features.len() != d) {
            return Err(Error::invalid("inconsistent feature dimension in training data"));
        }
        if d < N_QUBITS {
            return Err(Error::invalid(format!("need at least {N_QUBITS} features, got {d}")));
        }
        let projection = match kind {
            ReducerKind::Pca => pca_directions(train, d),
            ReducerKind::Random => random_directions(d, rng),
        };

        let mut lo = [f64::INFINITY; N_QUBITS];
        let mut hi = [f64::NEG_INFINITY; N_QUBITS];
        for e in train {
            for k in 0..N_QUBITS {
                let z = dot(&projection[k * d..(k + 1) * d], &e.features);
                lo[k] = lo[k].min(z);
                hi[k] = hi[k].max(z);
            }
        }
        let mut scale = [1.0; N_QUBITS];
        for k in 0..N_QUBITS {
            let width = hi[k] - lo[k];
            if width > 0.0 {
                scale[k] = width / FEATURE_SPAN;
            }
        }
        Self::new(d, projection, lo, scale)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn offset(&self) -> &[f64; N_QUBITS] {
        &self.offset
    }

    pub fn scale(&self) -> &[f64; N_QUBITS] {
        &self.scale
    }

    pub fn reduce(&self, features: &[f64]) -> Result<EncodedInput> {
        if features.len() != self.n_features {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match reducer input {}",
                features.len(),
                self.n_features
            )));
        }
        let mut out = [0.0; N_QUBITS];
        for (k, v) in out.iter_mut().enumerate() {
            let row = &self.projection[k * self.n_features..(k + 1) * self.n_features];
            *v = (dot(row, features) - self.offset[k]) / self.scale[k];
        }
        EncodedInput::new(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pca_directions(train: &[Example], d: usize) -> Vec<f64> {
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for e in train {
        for (m, f) in mean.iter_mut().zip(&e.features) {
            *m += f / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for e in train {
        for i in 0..d {
            let di = e.features[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (e.features[j] - mean[j]) / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut projection = Vec::with_capacity(N_QUBITS * d);
    for &col in order.iter().take(N_QUBITS) {
        let v = eig.eigenvectors.column(col);
        // Fix the eigenvector sign so the result does not depend on the solver.
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        projection.extend(v.iter().map(|x| sign * x));
    }
    projection
}

fn random_directions<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut projection = Vec::with_capacity(N_QUBITS * d);
    for _ in 0..N_QUBITS {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&row, &row).sqrt();
        projection.extend(row.iter().map(|x| x / norm));
    }
    projection
}

/// The full classifier. Only the VQC angles and the head are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    reducer: Reducer,
    vqc: VqcParameters,
    head_weights: [[f64; N_OUTPUTS]; N_CLASSES],
    head_bias: [f64; N_CLASSES],
}

/// Mean loss and accuracy of a model over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

impl HybridModel {
    pub fn new(
        reducer: Reducer,
        vqc: VqcParameters,
        head_weights: [[f64; N_OUTPUTS]; N_CLASSES],
        head_bias: [f64; N_CLASSES],
    ) -> Result<Self> {
        if head_weights.iter().flatten().chain(&head_bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("head parameters must be finite"));
        }
        Ok(Self { reducer, vqc, head_weights, head_bias })
    }

    /// Angles uniform on (-0.1, 0.1), head weights uniform on (-0.5, 0.5), zero bias.
    pub fn init<R: Rng + ?Sized>(reducer: Reducer, rng: &mut R) -> Self {
        let mut angles = [[0.0; 3]; N_QUBITS];
        for a in angles.iter_mut().flatten() {
            *a = rng.random_range(-0.1..0.1);
        }
        let mut head_weights = [[0.0; N_OUTPUTS]; N_CLASSES];
        for w in head_weights.iter_mut().flatten() {
            *w = rng.random_range(-0.5..0.5);
        }
        Self {
            reducer,
            vqc: VqcParameters::new(angles).expect("finite"),
            head_weights,
            head_bias: [0.0; N_CLASSES],
        }
    }

    pub fn reducer(&self) -> &Reducer {
        &self.reducer
    }

    pub fn vqc_params(&self) -> &VqcParameters {
        &self.vqc
    }

    pub fn head_weights(&self) -> &[[f64; N_OUTPUTS]; N_CLASSES] {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &[f64; N_CLASSES] {
        &self.head_bias
    }

    pub fn n_features(&self) -> usize {
        self.reducer.n_features
    }

    pub fn trainable(&self) -> [f64; N_TRAINABLE] {
        let mut out = [0.0; N_TRAINABLE];
        out[..N_PARAMS].copy_from_slice(&self.vqc.to_flat());
        out[N_PARAMS..N_PARAMS + 4].copy_from_slice(&[
            self.head_weights[0][0],
            self.head_weights[0][1],
            self.head_weights[1][0],
            self.head_weights[1][1],
        ]);
        out[N_PARAMS + 4..].copy_from_slice(&self.head_bias);
        out
    }

    pub fn set_trainable(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != N_TRAINABLE {
            return Err(Error::invalid(format!(
                "expected {N_TRAINABLE} trainable parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite trainable parameter".into()));
        }
        self.vqc = VqcParameters::from_flat(&params[..N_PARAMS])?;
        let w = &params[N_PARAMS..N_PARAMS + 4];
        self.head_weights = [[w[0], w[1]], [w[2], w[3]]];
        self.head_bias = [params[N_PARAMS + 4], params[N_PARAMS + 5]];
        Ok(())
    }

    /// Copy of `self` with the given trainable parameters.
    pub fn with_trainable(&self, params: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_trainable(params)?;
        Ok(out)
    }

    fn logits(&self, z: &[f64; N_OUTPUTS]) -> [f64; N_CLASSES] {
        let mut out = self.head_bias;
        for (c, logit) in out.iter_mut().enumerate() {
            *logit += self.head_weights[c][0] * z[0] + self.head_weights[c][1] * z[1];
        }
        out
    }

    /// Class probabilities for raw (unreduced) features.
    pub fn forward(&self, features: &[f64]) -> Result<[f64; N_CLASSES]> {
        Ok(self.log_probabilities(features)?.map(f64::exp))
    }

    pub fn log_probabilities(&self, features: &[f64]) -> Result<[f64; N_CLASSES]> {
        let x = self.reducer.reduce(features)?;
        let z = vqc::vqc_forward(&x, &self.vqc)?;
        Ok(log_softmax(&self.logits(&z)))
    }

    /// Cross-entropy `-ln p_label` and its gradient in the flat trainable layout.
    pub fn loss_and_gradient(&self, example: &Example) -> Result<(f64, [f64; N_TRAINABLE])> {
        let x = self.reducer.reduce(&example.features)?;
        let jac = vqc::vqc_jacobian(&x, &self.vqc)?;
        let logits = self.logits(&jac.outputs);
        let log_p = log_softmax(&logits);
        let label = example.label as usize;
        let loss = -log_p[label];

        // dL/dlogit_c = p_c - [c == label]
        let mut delta = [0.0; N_CLASSES];
        for c in 0..N_CLASSES {
            delta[c] = log_p[c].exp() - if c == label { 1.0 } else { 0.0 };
        }
        let mut grad = [0.0; N_TRAINABLE];
        for k in 0..N_OUTPUTS {
            let dz: f64 = (0..N_CLASSES).map(|c| delta[c] * self.head_weights[c][k]).sum();
            for j in 0..N_PARAMS {
                grad[j] += dz * jac.grads[k][j];
            }
        }
        for c in 0..N_CLASSES {
            for k in 0..N_OUTPUTS {
                grad[N_PARAMS + c * N_OUTPUTS + k] = delta[c] * jac.outputs[k];
            }
            grad[N_PARAMS + 4 + c] = delta[c];
        }
        Ok((loss, grad))
    }

    /// Predicted label; ties go to class 0.
    pub fn predict(&self, features: &[f64]) -> Result<u8> {
        let log_p = self.log_probabilities(features)?;
        Ok(u8::from(log_p[1] > log_p[0]))
    }

    pub fn evaluate(&self, dataset: &[Example]) -> Result<Evaluation> {
        if dataset.is_empty() {
            return Err(Error::invalid("cannot evaluate on an empty dataset"));
        }
        let per_example: Vec<(f64, bool)> = dataset
            .par_iter()
            .map(|e| {
                let log_p = self.log_probabilities(&e.features)?;
                let predicted = u8::from(log_p[1] > log_p[0]);
                Ok((-log_p[e.label as usize], predicted == e.label))
            })
            .collect::<Result<_>>()?;
        let n = dataset.len() as f64;
        let loss = per_example.iter().map(|(l, _)| l).sum::<f64>() / n;
        let correct = per_example.iter().filter(|(_, ok)| *ok).count();
        Ok(Evaluation { loss, accuracy: correct as f64 / n })
    }

    /// Flat `key=value` text; numbers carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let r = &self.reducer;
        let mut out = String::from("# qfldp hybrid model v1\n");
        out.push_str(&format!("n_features={}\n", r.n_features));
        out.push_str(&format!("reducer_projection={}\n", join_f64(&r.projection)));
        out.push_str(&format!("reducer_offset={}\n", join_f64(&r.offset)));
        out.push_str(&format!("reducer_scale={}\n", join_f64(&r.scale)));
        out.push_str(&format!("vqc_angles={}\n", join_f64(&self.vqc.to_flat())));
        let t = self.trainable();
        out.push_str(&format!("head_weights={}\n", join_f64(&t[N_PARAMS..N_PARAMS + 4])));
        out.push_str(&format!("head_bias={}\n", join_f64(&self.head_bias)));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |key: &str| -> Result<Vec<f64>> {
            let (line, value) = fields.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing field '{key}'"),
            })?;
            parse_f64_list(value).map_err(|msg| Error::Parse { line: *line, msg })
        };
        let n_features: usize = {
            let (line, value) = fields
                .get("n_features")
                .ok_or_else(|| Error::Parse { line: 0, msg: "missing field 'n_features'".into() })?;
            value.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad n_features '{value}'"),
            })?
        };
        let fixed4 = |key: &str| -> Result<[f64; 4]> {
            get(key)?.try_into().map_err(|_| Error::Parse {
                line: fields.get(key).map_or(0, |f| f.0),
                msg: format!("'{key}' needs 4 values"),
            })
        };
        let reducer = Reducer::new(
            n_features,
            get("reducer_projection")?,
            fixed4("reducer_offset")?,
            fixed4("reducer_scale")?,
        )?;
        let vqc = VqcParameters::from_flat(&get("vqc_angles")?)?;
        let w = fixed4("head_weights")?;
        let b = get("head_bias")?;
        if b.len() != N_CLASSES {
            return Err(Error::Parse { line: 0, msg: "'head_bias' needs 2 values".into() });
        }
        Self::new(reducer, vqc, [[w[0], w[1]], [w[2], w[3]]], [b[0], b[1]])
    }
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(",")
}

/// 17 significant digits; parses back to the identical bit pattern.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}'")))
        .collect()
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    log_softmax(logits).map(f64::exp)
}

fn log_softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}
