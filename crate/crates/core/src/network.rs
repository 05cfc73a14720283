//! A small fully connected network with softmax cross-entropy, weight decay,
//! and exact manual backpropagation. The forward pass records a tapped
//! feature layer; `backward` accepts an extra gradient for that feature so a
//! caller can compose additional feature-space losses without this module
//! knowing about them.
//!
//! Biases are folded into each weight matrix as a trailing column acting on a
//! constant-1 input augmentation, and are never decayed.

use crate::error::{Result, StmError};
use crate::tensor::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// Pass-through, mainly for linear-layer tests and probes.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn slope_at(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            other => Err(StmError::CheckpointFormat(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

/// All trainable parameters: per-layer weights (bias folded as the trailing
/// column) and the classifier matrix applied to the final activation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_weights: Vec<Matrix>,
    classifier: Matrix,
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl NetworkParams {
    /// Assemble from explicit parts, validating the dimension chain.
    pub fn from_parts(
        layer_weights: Vec<Matrix>,
        classifier: Matrix,
        layer_dims: Vec<usize>,
        activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(StmError::Contract(
                "layer_dims needs an input dim and at least one layer".into(),
            ));
        }
        if layer_weights.len() != layer_dims.len() - 1 {
            return Err(StmError::Contract(format!(
                "{} weight matrices for {} layer dims",
                layer_weights.len(),
                layer_dims.len()
            )));
        }
        for (l, w) in layer_weights.iter().enumerate() {
            if w.rows() != layer_dims[l + 1] || w.cols() != layer_dims[l] + 1 {
                return Err(StmError::DimensionMismatch {
                    op: "from_parts",
                    details: format!(
                        "layer {l} is {}x{}, expected {}x{}",
                        w.rows(),
                        w.cols(),
                        layer_dims[l + 1],
                        layer_dims[l] + 1
                    ),
                });
            }
        }
        let feature_dim = *layer_dims.last().expect("non-empty");
        if classifier.rows() != feature_dim {
            return Err(StmError::DimensionMismatch {
                op: "from_parts",
                details: format!(
                    "classifier has {} rows, feature dim is {feature_dim}",
                    classifier.rows()
                ),
            });
        }
        if classifier.cols() < 2 {
            return Err(StmError::Contract("need at least 2 classes".into()));
        }
        Ok(NetworkParams {
            layer_weights,
            classifier,
            layer_dims,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    pub fn class_count(&self) -> usize {
        self.classifier.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_weights(&self) -> &[Matrix] {
        &self.layer_weights
    }

    pub fn layer_weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.layer_weights[layer]
    }

    pub fn classifier(&self) -> &Matrix {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Matrix {
        &mut self.classifier
    }

    pub fn all_finite(&self) -> bool {
        self.classifier.all_finite() && self.layer_weights.iter().all(Matrix::all_finite)
    }

    /// `params += delta`, used by the optimizer with a velocity buffer.
    pub fn apply_update(&mut self, delta: &Gradients) -> Result<()> {
        for (w, d) in self.layer_weights.iter_mut().zip(&delta.d_layer_weights) {
            w.add_assign_scaled(d, 1.0)?;
        }
        self.classifier.add_assign_scaled(&delta.d_classifier, 1.0)
    }
}

/// Gaussian initialization with per-layer scale sqrt(2 / fan_in),
/// deterministic for a fixed seed.
pub fn init_params(
    layer_dims: &[usize],
    class_count: usize,
    activation: Activation,
    seed: u64,
) -> Result<NetworkParams> {
    if layer_dims.len() < 2 {
        return Err(StmError::Contract(
            "layer_dims needs an input dim and at least one layer".into(),
        ));
    }
    if class_count < 2 {
        return Err(StmError::Contract("need at least 2 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |rows: usize, cols: usize, std: f64| -> Matrix {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized")
    };

    let mut layer_weights = Vec::with_capacity(layer_dims.len() - 1);
    for l in 0..layer_dims.len() - 1 {
        let std = (2.0 / layer_dims[l] as f64).sqrt();
        layer_weights.push(gaussian(layer_dims[l + 1], layer_dims[l] + 1, std));
    }
    let feature_dim = *layer_dims.last().expect("non-empty");
    let classifier = gaussian(feature_dim, class_count, (2.0 / feature_dim as f64).sqrt());
    NetworkParams::from_parts(layer_weights, classifier, layer_dims.to_vec(), activation)
}

/// Every intermediate a backward pass needs, plus the tapped feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Pre-activations z_l, one per layer.
    pub pre_activations: Vec<Matrix>,
    /// Activations, `activations[0]` being the input; length num_layers + 1.
    pub activations: Vec<Matrix>,
    pub tapped_feature: Matrix,
    pub tap_layer: usize,
    pub logits: Matrix,
}

/// `z[r] = sum_c w[r,c] a[c] + w[r, cols-1]` (bias column).
fn affine_forward(w: &Matrix, a: &[f64]) -> Vec<f64> {
    let in_dim = w.cols() - 1;
    (0..w.rows())
        .map(|r| {
            let row = w.row(r);
            let mut s = row[in_dim];
            for (wv, av) in row[..in_dim].iter().zip(a) {
                s += wv * av;
            }
            s
        })
        .collect()
}

/// Forward pass recording all intermediates. `tap_layer` selects which
/// layer's activation is exposed as the regularized feature (1-based;
/// usually the last layer).
pub fn forward(params: &NetworkParams, input: &Matrix, tap_layer: usize) -> Result<ForwardTrace> {
    if input.rows() != params.input_dim() || input.cols() != 1 {
        return Err(StmError::DimensionMismatch {
            op: "forward",
            details: format!(
                "input is {}x{}, expected {}x1",
                input.rows(),
                input.cols(),
                params.input_dim()
            ),
        });
    }
    let layers = params.num_layers();
    if tap_layer == 0 || tap_layer > layers {
        return Err(StmError::Contract(format!(
            "tap layer {tap_layer} out of range 1..={layers}"
        )));
    }

    let mut pre_activations = Vec::with_capacity(layers);
    let mut activations = Vec::with_capacity(layers + 1);
    activations.push(input.clone());
    for w in &params.layer_weights {
        let z = affine_forward(w, activations.last().expect("non-empty").data());
        let a: Vec<f64> = z.iter().map(|&v| params.activation.apply(v)).collect();
        pre_activations.push(Matrix::column(&z));
        activations.push(Matrix::column(&a));
    }

    let feature = activations.last().expect("non-empty");
    let theta = &params.classifier;
    let mut logits = vec![0.0; theta.cols()];
    for (i, &f) in feature.data().iter().enumerate() {
        for (l, &t) in logits.iter_mut().zip(theta.row(i)) {
            *l += t * f;
        }
    }

    Ok(ForwardTrace {
        tapped_feature: activations[tap_layer].clone(),
        tap_layer,
        logits: Matrix::column(&logits),
        pre_activations,
        activations,
    })
}

/// Numerically stabilized softmax probabilities.
pub fn softmax(logits: &Matrix) -> Vec<f64> {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Negative log-likelihood of `label` under stabilized softmax; always >= 0.
pub fn softmax_ce_loss(logits: &Matrix, label: usize) -> Result<f64> {
    let m = logits.rows();
    if label >= m {
        return Err(StmError::Contract(format!(
            "label {label} out of range for {m} logits"
        )));
    }
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits
        .data()
        .iter()
        .map(|&l| (l - max).exp())
        .sum::<f64>()
        .ln();
    Ok(log_sum - (logits.data()[label] - max))
}

/// Which parameters the L2 penalty covers. The classifier is always decayed;
/// `All` extends it to the layer weights (bias columns excluded either way).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayScope {
    ClassifierOnly,
    All,
}

/// `(lambda/2) * sum of squared decayed parameters`.
pub fn weight_decay(params: &NetworkParams, lambda: f64, scope: DecayScope) -> f64 {
    let mut sq = params.classifier.frobenius_norm_sq();
    if scope == DecayScope::All {
        for w in &params.layer_weights {
            let in_dim = w.cols() - 1;
            for r in 0..w.rows() {
                sq += w.row(r)[..in_dim].iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    0.5 * lambda * sq
}

/// Gradient accumulator shaped exactly like `NetworkParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_layer_weights: Vec<Matrix>,
    pub d_classifier: Matrix,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            d_layer_weights: params
                .layer_weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            d_classifier: Matrix::zeros(params.classifier.rows(), params.classifier.cols()),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        for (a, b) in self.d_layer_weights.iter_mut().zip(&other.d_layer_weights) {
            a.add_assign_scaled(b, scale)?;
        }
        self.d_classifier
            .add_assign_scaled(&other.d_classifier, scale)
    }

    pub fn scale_assign(&mut self, scale: f64) {
        for w in &mut self.d_layer_weights {
            for v in w.data_mut() {
                *v *= scale;
            }
        }
        for v in self.d_classifier.data_mut() {
            *v *= scale;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.d_classifier.all_finite() && self.d_layer_weights.iter().all(Matrix::all_finite)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.d_classifier.frobenius_norm_sq()
            + self
                .d_layer_weights
                .iter()
                .map(Matrix::frobenius_norm_sq)
                .sum::<f64>()
    }
}

/// Accumulate into `grads` the exact gradient of
/// `softmax_ce_loss + weight_decay + <extra_feature_grad, tapped_feature>`
/// for one sample, where the linear term injects an externally supplied
/// feature-space gradient at the tap layer before backpropagation continues.
pub fn backward_into(
    params: &NetworkParams,
    trace: &ForwardTrace,
    label: usize,
    lambda: f64,
    scope: DecayScope,
    extra_feature_grad: Option<&Matrix>,
    grads: &mut Gradients,
) -> Result<()> {
    let layers = params.num_layers();
    if trace.activations.len() != layers + 1 || trace.pre_activations.len() != layers {
        return Err(StmError::Contract(
            "trace does not match the network shape".into(),
        ));
    }
    if label >= params.class_count() {
        return Err(StmError::Contract(format!(
            "label {label} out of range for {} classes",
            params.class_count()
        )));
    }
    if let Some(g) = extra_feature_grad {
        if !g.same_shape(&trace.tapped_feature) {
            return Err(StmError::DimensionMismatch {
                op: "backward",
                details: format!(
                    "extra feature grad is {}x{}, tapped feature is {}x{}",
                    g.rows(),
                    g.cols(),
                    trace.tapped_feature.rows(),
                    trace.tapped_feature.cols()
                ),
            });
        }
    }

    // Softmax cross-entropy error at the logits.
    let mut err = softmax(&trace.logits);
    err[label] -= 1.0;

    // d_theta = feature . err^T + lambda * theta.
    let feature = trace.activations[layers].data();
    let theta = &params.classifier;
    for (i, &f) in feature.iter().enumerate() {
        let drow = &mut grads.d_classifier.data_mut()[i * theta.cols()..(i + 1) * theta.cols()];
        for (d, &e) in drow.iter_mut().zip(&err) {
            *d += f * e;
        }
    }
    if lambda != 0.0 {
        grads.d_classifier.add_assign_scaled(theta, lambda)?;
    }

    // d_feature = theta . err.
    let mut da: Vec<f64> = vec![0.0; params.feature_dim()];
    for (i, d) in da.iter_mut().enumerate() {
        for (&t, &e) in theta.row(i).iter().zip(&err) {
            *d += t * e;
        }
    }

    for l in (0..layers).rev() {
        // Gradients reaching activation l+1; inject the external feature
        // gradient where the tap sits.
        if l + 1 == trace.tap_layer {
            if let Some(g) = extra_feature_grad {
                for (d, &e) in da.iter_mut().zip(g.data()) {
                    *d += e;
                }
            }
        }
        let z = trace.pre_activations[l].data();
        let dz: Vec<f64> = da
            .iter()
            .zip(z)
            .map(|(&d, &zv)| d * params.activation.slope_at(zv))
            .collect();

        let w = &params.layer_weights[l];
        let in_dim = w.cols() - 1;
        let a_prev = trace.activations[l].data();
        let dw = &mut grads.d_layer_weights[l];
        for (r, &dzv) in dz.iter().enumerate() {
            let drow = &mut dw.data_mut()[r * (in_dim + 1)..(r + 1) * (in_dim + 1)];
            for (d, &a) in drow[..in_dim].iter_mut().zip(a_prev) {
                *d += dzv * a;
            }
            drow[in_dim] += dzv;
        }
        if scope == DecayScope::All && lambda != 0.0 {
            for r in 0..w.rows() {
                let drow = &mut dw.data_mut()[r * (in_dim + 1)..(r + 1) * (in_dim + 1)];
                for (d, &wv) in drow[..in_dim].iter_mut().zip(&w.row(r)[..in_dim]) {
                    *d += lambda * wv;
                }
            }
        }

        if l > 0 {
            let mut da_prev = vec![0.0; in_dim];
            for (r, &dzv) in dz.iter().enumerate() {
                for (d, &wv) in da_prev.iter_mut().zip(&w.row(r)[..in_dim]) {
                    *d += wv * dzv;
                }
            }
            da = da_prev;
        }
    }
    Ok(())
}

/// Fresh-allocation wrapper over [`backward_into`].
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    label: usize,
    lambda: f64,
    scope: DecayScope,
    extra_feature_grad: Option<&Matrix>,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    backward_into(
        params,
        trace,
        label,
        lambda,
        scope,
        extra_feature_grad,
        &mut grads,
    )?;
    Ok(grads)
}

/// Argmax with ties broken toward the lowest class index.
pub fn predict(params: &NetworkParams, input: &Matrix) -> Result<usize> {
    let trace = forward(params, input, params.num_layers())?;
    let mut best = 0;
    for (j, &v) in trace.logits.data().iter().enumerate() {
        if v > trace.logits.data()[best] {
            best = j;
        }
    }
    Ok(best)
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

/// Serialize parameters: magic `STM1`, then a little-endian u32 header
/// (dim count, the dims, activation code, class count), then raw
/// little-endian f64 payloads for each layer in declaration order followed
/// by the classifier.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut out, params.layer_dims.len() as u32)?;
    for &d in &params.layer_dims {
        write_u32(&mut out, d as u32)?;
    }
    write_u32(&mut out, params.activation.code())?;
    write_u32(&mut out, params.class_count() as u32)?;
    for w in params
        .layer_weights
        .iter()
        .chain(std::iter::once(&params.classifier))
    {
        for v in w.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct CheckpointReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CheckpointReader<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            StmError::CheckpointFormat(format!("unexpected end of file at byte {}", self.offset))
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let file = std::fs::File::open(path)?;
    let mut r = CheckpointReader {
        inner: std::io::BufReader::new(file),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(StmError::CheckpointFormat(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let dim_count = r.read_u32()? as usize;
    if !(2..=64).contains(&dim_count) {
        return Err(StmError::CheckpointFormat(format!(
            "implausible dim count {dim_count}"
        )));
    }
    let mut layer_dims = Vec::with_capacity(dim_count);
    for _ in 0..dim_count {
        layer_dims.push(r.read_u32()? as usize);
    }
    let activation = Activation::from_code(r.read_u32()?)?;
    let class_count = r.read_u32()? as usize;
    let mut layer_weights = Vec::with_capacity(dim_count - 1);
    for l in 0..dim_count - 1 {
        let rows = layer_dims[l + 1];
        let cols = layer_dims[l] + 1;
        layer_weights.push(Matrix::from_vec(rows, cols, r.read_f64s(rows * cols)?)?);
    }
    let feature_dim = *layer_dims.last().expect("non-empty");
    let classifier = Matrix::from_vec(
        feature_dim,
        class_count,
        r.read_f64s(feature_dim * class_count)?,
    )?;
    NetworkParams::from_parts(layer_weights, classifier, layer_dims, activation)
}
