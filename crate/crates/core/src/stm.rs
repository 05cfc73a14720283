//! The structure-transfer trainer: softmax cross-entropy plus a manifold loss
//! whose neighborhood structure comes from the raw input space. Per-sample
//! feature-space gradients are injected into the network's backward pass at
//! the tapped layer; buffered features are treated as constants (no gradient
//! flows into the buffer).

use crate::data::{batch_iter, Dataset};
use crate::error::{Result, StmError};
use crate::manifold::{
    knn_in_buffer, laplacian_affinity, lle_weights, median_bandwidth, BufferEntry, FeatureBuffer,
    LaplacianAffinity, LleWeights,
};
use crate::network::{
    backward_into, forward, init_params, softmax_ce_loss, weight_decay, Activation, DecayScope,
    Gradients, NetworkParams,
};
use crate::seed::derive_seed;
use crate::tensor::Matrix;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    None,
    Lle,
    Laplacian,
}

/// How the injected feature gradient is scaled. `ObjectiveConsistent`
/// differentiates the stated objective exactly (finite-difference checks
/// pass); `Algorithm1Literal` reproduces the published update, which for the
/// Laplacian branch drops the factor 2 and uses 1/N in place of 1/N^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScaling {
    ObjectiveConsistent,
    Algorithm1Literal,
}

/// Whether buffered features are recomputed with the current parameters each
/// step (`Refresh`) or kept as they were at insertion time (`Stale`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferFeatureMode {
    Refresh,
    Stale,
}

#[derive(Debug, Clone)]
pub struct StmConfig {
    /// Manifold-loss weight.
    pub sigma: f64,
    /// Weight-decay coefficient.
    pub lambda: f64,
    pub manifold_kind: ManifoldKind,
    /// Feature-buffer capacity per class.
    pub k0: usize,
    /// Neighbor count for LLE reconstruction.
    pub k_lle: usize,
    /// Tikhonov scale for the local Gram system.
    pub lle_reg_eps: f64,
    /// (step, rate) milestones; the rate of the latest milestone at or before
    /// the current step applies.
    pub learning_rate_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub gradient_scaling: GradientScaling,
    pub buffer_feature_mode: BufferFeatureMode,
    pub decay_scope: DecayScope,
    /// Accuracy-evaluation cadence in steps; 0 records only the final step.
    pub eval_every: usize,
}

impl Default for StmConfig {
    fn default() -> Self {
        StmConfig {
            sigma: 0.01,
            lambda: 1e-4,
            manifold_kind: ManifoldKind::Laplacian,
            k0: 30,
            k_lle: 14,
            lle_reg_eps: 1e-3,
            learning_rate_schedule: vec![(0, 0.1)],
            momentum: 0.9,
            batch_size: 100,
            max_steps: 1000,
            seed: 0,
            gradient_scaling: GradientScaling::ObjectiveConsistent,
            buffer_feature_mode: BufferFeatureMode::Refresh,
            decay_scope: DecayScope::ClassifierOnly,
            eval_every: 100,
        }
    }
}

impl StmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || self.lambda < 0.0 {
            return Err(StmError::Config("sigma and lambda must be >= 0".into()));
        }
        if self.manifold_kind == ManifoldKind::Lle && (self.k_lle == 0 || self.k_lle > self.k0) {
            return Err(StmError::Config(format!(
                "k_lle must be in 1..=k0 (got k_lle {} with k0 {})",
                self.k_lle, self.k0
            )));
        }
        if self.manifold_kind != ManifoldKind::None && self.k0 == 0 {
            return Err(StmError::Config("k0 must be >= 1".into()));
        }
        if self.learning_rate_schedule.is_empty() {
            return Err(StmError::Config("learning rate schedule is empty".into()));
        }
        if self.learning_rate_schedule[0].0 != 0 {
            return Err(StmError::Config(
                "learning rate schedule must start at step 0".into(),
            ));
        }
        if self
            .learning_rate_schedule
            .windows(2)
            .any(|w| w[0].0 >= w[1].0)
        {
            return Err(StmError::Config(
                "learning rate schedule steps must be strictly increasing".into(),
            ));
        }
        if self.learning_rate_schedule.iter().any(|&(_, lr)| lr <= 0.0) {
            return Err(StmError::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(StmError::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(StmError::Config("batch_size must be >= 1".into()));
        }
        if self.lle_reg_eps < 0.0 {
            return Err(StmError::Config("lle_reg_eps must be >= 0".into()));
        }
        Ok(())
    }

    fn manifold_active(&self) -> bool {
        self.manifold_kind != ManifoldKind::None && self.sigma > 0.0
    }
}

/// Network architecture request, resolved against the dataset by [`train`].
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    /// Input dim followed by layer output dims.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// 1-based layer whose activation carries the manifold loss; `None` taps
    /// the last layer.
    pub tap_layer: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Matrix,
    pub label: usize,
}

impl Sample {
    pub fn from_dataset(dataset: &Dataset, index: usize) -> Self {
        Sample {
            input: dataset.sample_input(index),
            label: dataset.label(index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub manifold: f64,
    pub learning_rate: f64,
    /// Filled at the evaluation cadence; accuracy after this step's update.
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: NetworkParams,
    pub velocity: Gradients,
    pub buffer: FeatureBuffer,
    pub step: usize,
    pub loss_history: Vec<LossRecord>,
    /// Samples whose manifold term was skipped while their class buffer was
    /// still warming up (fewer than 2 entries).
    pub manifold_skipped: usize,
    pub tap_layer: usize,
}

impl TrainState {
    pub fn new(params: NetworkParams, tap_layer: usize, k0: usize) -> Result<Self> {
        let layers = params.num_layers();
        if tap_layer == 0 || tap_layer > layers {
            return Err(StmError::Config(format!(
                "tap layer {tap_layer} out of range 1..={layers}"
            )));
        }
        let feature_dim = params.layer_dims()[tap_layer];
        let buffer = FeatureBuffer::new(params.class_count(), k0, params.input_dim(), feature_dim);
        Ok(TrainState {
            velocity: Gradients::zeros_like(&params),
            buffer,
            step: 0,
            loss_history: Vec::new(),
            manifold_skipped: 0,
            tap_layer,
            params,
        })
    }
}

/// Per-sample LLE summand: `1/2 |feature - sum_j w_j buffer_j|^2`. The
/// sigma/N scaling is applied by the trainer.
pub fn manifold_loss_lle(
    feature: &Matrix,
    buffer_features: &[Matrix],
    weights: &LleWeights,
) -> Result<f64> {
    Ok(0.5 * lle_residual(feature, buffer_features, weights)?.frobenius_norm_sq())
}

/// Gradient of [`manifold_loss_lle`] with respect to `feature`:
/// `feature - sum_j w_j buffer_j`. Buffer features are constants.
pub fn manifold_grad_lle(
    feature: &Matrix,
    buffer_features: &[Matrix],
    weights: &LleWeights,
) -> Result<Matrix> {
    lle_residual(feature, buffer_features, weights)
}

fn lle_residual(
    feature: &Matrix,
    buffer_features: &[Matrix],
    weights: &LleWeights,
) -> Result<Matrix> {
    let mut residual = feature.clone();
    for (&idx, &w) in weights.neighbor_indices.iter().zip(&weights.coefficients) {
        let nbr = buffer_features.get(idx).ok_or_else(|| {
            StmError::Contract(format!(
                "neighbor index {idx} out of range for {} buffer features",
                buffer_features.len()
            ))
        })?;
        residual.add_assign_scaled(nbr, -w)?;
    }
    Ok(residual)
}

/// Per-sample Laplacian row: `sum_j B_j |feature - buffer_j|^2`. The
/// sigma/N^2 scaling is applied by the trainer.
pub fn manifold_loss_lap(
    feature: &Matrix,
    buffer_features: &[Matrix],
    affinity: &LaplacianAffinity,
) -> Result<f64> {
    if affinity.len() != buffer_features.len() {
        return Err(StmError::Contract(format!(
            "{} affinities for {} buffer features",
            affinity.len(),
            buffer_features.len()
        )));
    }
    let mut total = 0.0;
    for (nbr, &b) in buffer_features.iter().zip(affinity.values()) {
        total += b * crate::tensor::dist_sq(feature, nbr)?;
    }
    Ok(total)
}

/// Feature gradient of the Laplacian row. Under `ObjectiveConsistent` this is
/// the exact derivative `2 sum_j B_j (feature - buffer_j)`; under
/// `Algorithm1Literal` the published update's `sum_j B_j (feature - buffer_j)`.
pub fn manifold_grad_lap(
    feature: &Matrix,
    buffer_features: &[Matrix],
    affinity: &LaplacianAffinity,
    scaling: GradientScaling,
) -> Result<Matrix> {
    if affinity.len() != buffer_features.len() {
        return Err(StmError::Contract(format!(
            "{} affinities for {} buffer features",
            affinity.len(),
            buffer_features.len()
        )));
    }
    let mut grad = Matrix::zeros(feature.rows(), feature.cols());
    let mut total_b = 0.0;
    for (nbr, &b) in buffer_features.iter().zip(affinity.values()) {
        grad.add_assign_scaled(nbr, -b)?;
        total_b += b;
    }
    grad.add_assign_scaled(feature, total_b)?;
    let factor = match scaling {
        GradientScaling::ObjectiveConsistent => 2.0,
        GradientScaling::Algorithm1Literal => 1.0,
    };
    Ok(grad.scale(factor))
}

/// Scale applied to the per-sample feature gradient before injection; the
/// trainer later divides accumulated gradients by the batch size.
fn injection_scale(cfg: &StmConfig, batch_size: usize) -> f64 {
    match (cfg.manifold_kind, cfg.gradient_scaling) {
        (ManifoldKind::Lle, _) => cfg.sigma,
        (ManifoldKind::Laplacian, GradientScaling::ObjectiveConsistent) => {
            cfg.sigma / batch_size as f64
        }
        (ManifoldKind::Laplacian, GradientScaling::Algorithm1Literal) => cfg.sigma,
        (ManifoldKind::None, _) => 0.0,
    }
}

/// Per-class manifold context assembled once per batch: buffer features in
/// the configured mode and, for the Laplacian, the heat-kernel bandwidth.
struct ClassContext {
    features: Vec<Matrix>,
    bandwidth: f64,
}

fn class_context(state: &TrainState, cfg: &StmConfig, class: usize) -> Result<ClassContext> {
    let features = match cfg.buffer_feature_mode {
        BufferFeatureMode::Stale => state
            .buffer
            .cached_features(class)
            .into_iter()
            .cloned()
            .collect(),
        BufferFeatureMode::Refresh => {
            let mut feats = Vec::with_capacity(state.buffer.class_len(class));
            for entry in state.buffer.entries(class) {
                feats.push(
                    forward(&state.params, &entry.raw_input, state.tap_layer)?.tapped_feature,
                );
            }
            feats
        }
    };
    let bandwidth = if cfg.manifold_kind == ManifoldKind::Laplacian {
        median_bandwidth(&state.buffer.raw_inputs(class))?
    } else {
        1.0
    };
    Ok(ClassContext {
        features,
        bandwidth,
    })
}

struct BatchEval {
    total: f64,
    ce: f64,
    manifold: f64,
    skipped: usize,
    tapped: Vec<Matrix>,
}

/// Forward the batch, evaluate all objective components, and (optionally)
/// accumulate the exact gradient of the total objective into `grads`.
/// Buffered features never receive gradient.
fn eval_batch(
    state: &TrainState,
    batch: &[Sample],
    cfg: &StmConfig,
    mut grads: Option<&mut Gradients>,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(StmError::Contract("batch is empty".into()));
    }
    let n = batch.len();
    let mut contexts: HashMap<usize, ClassContext> = HashMap::new();
    let mut ce_sum = 0.0;
    let mut man_sum = 0.0;
    let mut skipped = 0;
    let mut tapped = Vec::with_capacity(n);
    let inject = injection_scale(cfg, n);

    for sample in batch {
        let trace = forward(&state.params, &sample.input, state.tap_layer)?;
        ce_sum += softmax_ce_loss(&trace.logits, sample.label)?;

        let mut extra: Option<Matrix> = None;
        if cfg.manifold_active() {
            if state.buffer.class_len(sample.label) < 2 {
                skipped += 1;
            } else {
                let ctx = match contexts.entry(sample.label) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(v) => {
                        v.insert(class_context(state, cfg, sample.label)?)
                    }
                };
                match cfg.manifold_kind {
                    ManifoldKind::Lle => {
                        let k = cfg.k_lle.min(state.buffer.class_len(sample.label));
                        let idx = knn_in_buffer(&state.buffer, sample.label, &sample.input, k)?;
                        let raw: Vec<&Matrix> = idx
                            .iter()
                            .map(|&i| &state.buffer.entry(sample.label, i).raw_input)
                            .collect();
                        let weights =
                            lle_weights(&sample.input, &raw, cfg.lle_reg_eps)?.with_indices(idx);
                        man_sum +=
                            manifold_loss_lle(&trace.tapped_feature, &ctx.features, &weights)?;
                        extra = Some(
                            manifold_grad_lle(&trace.tapped_feature, &ctx.features, &weights)?
                                .scale(inject),
                        );
                    }
                    ManifoldKind::Laplacian => {
                        let affinity = laplacian_affinity(
                            &sample.input,
                            &state.buffer.raw_inputs(sample.label),
                            ctx.bandwidth,
                        )?;
                        man_sum +=
                            manifold_loss_lap(&trace.tapped_feature, &ctx.features, &affinity)?;
                        extra = Some(
                            manifold_grad_lap(
                                &trace.tapped_feature,
                                &ctx.features,
                                &affinity,
                                cfg.gradient_scaling,
                            )?
                            .scale(inject),
                        );
                    }
                    ManifoldKind::None => unreachable!("guarded by manifold_active"),
                }
            }
        }

        if let Some(g) = grads.as_deref_mut() {
            backward_into(
                &state.params,
                &trace,
                sample.label,
                cfg.lambda,
                cfg.decay_scope,
                extra.as_ref(),
                g,
            )?;
        }
        tapped.push(trace.tapped_feature);
    }

    if let Some(g) = grads {
        g.scale_assign(1.0 / n as f64);
    }

    let ce = ce_sum / n as f64;
    let decay = weight_decay(&state.params, cfg.lambda, cfg.decay_scope);
    let manifold = match cfg.manifold_kind {
        ManifoldKind::Lle => cfg.sigma * man_sum / n as f64,
        ManifoldKind::Laplacian => cfg.sigma * man_sum / (n * n) as f64,
        ManifoldKind::None => 0.0,
    };
    Ok(BatchEval {
        total: ce + decay + manifold,
        ce,
        manifold,
        skipped,
        tapped,
    })
}

/// Total objective on a batch: mean cross-entropy + weight decay + the scaled
/// manifold term. Components are returned separately for logging.
pub fn total_objective(
    state: &TrainState,
    batch: &[Sample],
    cfg: &StmConfig,
) -> Result<(f64, f64, f64)> {
    let eval = eval_batch(state, batch, cfg, None)?;
    Ok((eval.total, eval.ce, eval.manifold))
}

/// Gradient of the total objective, averaged over the batch, alongside the
/// loss components it was evaluated at.
pub fn objective_gradients(
    state: &TrainState,
    batch: &[Sample],
    cfg: &StmConfig,
) -> Result<(Gradients, f64, f64, f64)> {
    let mut grads = Gradients::zeros_like(&state.params);
    let eval = eval_batch(state, batch, cfg, Some(&mut grads))?;
    Ok((grads, eval.total, eval.ce, eval.manifold))
}

fn lr_at(schedule: &[(usize, f64)], step: usize) -> f64 {
    let mut lr = schedule.first().map_or(0.0, |&(_, r)| r);
    for &(s, r) in schedule {
        if s <= step {
            lr = r;
        } else {
            break;
        }
    }
    lr
}

/// One SGD+momentum update: forward the batch, inject per-sample manifold
/// gradients, average, update parameters, then push the batch into the buffer
/// with its pre-update features.
pub fn train_step(state: &mut TrainState, batch: &[Sample], cfg: &StmConfig) -> Result<()> {
    let lr = lr_at(&cfg.learning_rate_schedule, state.step);
    let mut grads = Gradients::zeros_like(&state.params);
    let eval = eval_batch(state, batch, cfg, Some(&mut grads))?;

    if !eval.total.is_finite() {
        return Err(StmError::Divergence {
            step: state.step,
            what: format!("non-finite loss {}", eval.total),
        });
    }
    if !grads.all_finite() {
        return Err(StmError::Divergence {
            step: state.step,
            what: "non-finite gradient".into(),
        });
    }

    // Classical momentum: v <- momentum v - lr grad; params <- params + v.
    state.velocity.scale_assign(cfg.momentum);
    state.velocity.add_assign_scaled(&grads, -lr)?;
    state.params.apply_update(&state.velocity)?;

    for (sample, feature) in batch.iter().zip(eval.tapped) {
        state.buffer.push(
            sample.label,
            BufferEntry {
                raw_input: sample.input.clone(),
                cached_feature: feature,
                insertion_step: state.step,
            },
        )?;
    }

    state.manifold_skipped += eval.skipped;
    state.loss_history.push(LossRecord {
        step: state.step,
        total: eval.total,
        ce: eval.ce,
        manifold: eval.manifold,
        learning_rate: lr,
        train_acc: None,
        test_acc: None,
    });
    state.step += 1;
    Ok(())
}

/// Classification accuracy and per-class intra-class feature variance (mean
/// squared distance to the class feature centroid) in one pass.
pub fn evaluate_model(
    params: &NetworkParams,
    dataset: &Dataset,
    tap_layer: usize,
) -> Result<ModelEval> {
    if dataset.is_empty() {
        return Err(StmError::Contract(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let m = params.class_count();
    let feature_dim = params.layer_dims()[tap_layer];
    let mut correct = 0usize;
    let mut per_class_errors = vec![0usize; m];
    let mut per_class_counts = vec![0usize; m];
    let mut centroids = vec![Matrix::zeros(feature_dim, 1); m];
    let mut features: Vec<Matrix> = Vec::with_capacity(dataset.len());

    for i in 0..dataset.len() {
        let input = dataset.sample_input(i);
        let label = dataset.label(i);
        let trace = forward(params, &input, tap_layer)?;
        let mut best = 0;
        for (j, &v) in trace.logits.data().iter().enumerate() {
            if v > trace.logits.data()[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        } else {
            per_class_errors[label] += 1;
        }
        per_class_counts[label] += 1;
        centroids[label].add_assign_scaled(&trace.tapped_feature, 1.0)?;
        features.push(trace.tapped_feature);
    }

    for (centroid, &count) in centroids.iter_mut().zip(&per_class_counts) {
        if count > 0 {
            for v in centroid.data_mut() {
                *v /= count as f64;
            }
        }
    }
    let mut variance = vec![0.0; m];
    for (i, feature) in features.iter().enumerate() {
        let label = dataset.label(i);
        variance[label] += crate::tensor::dist_sq(feature, &centroids[label])?;
    }
    for (v, &count) in variance.iter_mut().zip(&per_class_counts) {
        if count > 0 {
            *v /= count as f64;
        }
    }

    let counted: Vec<f64> = variance
        .iter()
        .zip(&per_class_counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&v, _)| v)
        .collect();
    let mean_variance = counted.iter().sum::<f64>() / counted.len().max(1) as f64;

    Ok(ModelEval {
        accuracy: correct as f64 / dataset.len() as f64,
        per_class_error: per_class_errors
            .iter()
            .zip(&per_class_counts)
            .map(|(&e, &c)| if c > 0 { e as f64 / c as f64 } else { 0.0 })
            .collect(),
        intra_class_variance: variance,
        mean_intra_class_variance: mean_variance,
    })
}

#[derive(Debug, Clone)]
pub struct ModelEval {
    pub accuracy: f64,
    pub per_class_error: Vec<f64>,
    pub intra_class_variance: Vec<f64>,
    pub mean_intra_class_variance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
    pub intra_class_variance: Vec<f64>,
    pub mean_intra_class_variance: f64,
    pub manifold_skipped: usize,
    pub steps: usize,
}

/// Full training run: seeded initialization, buffer warm-up with the first
/// `k0` samples of each class, `max_steps` minibatch updates with the
/// scheduled learning rate, periodic and final evaluation.
pub fn train(
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    net: &NetworkSpec,
    cfg: &StmConfig,
) -> Result<(TrainState, TrainReport)> {
    cfg.validate()?;
    if net.layer_dims.first() != Some(&train_data.input_dim()) {
        return Err(StmError::Config(format!(
            "network input dim {:?} does not match dataset dim {}",
            net.layer_dims.first(),
            train_data.input_dim()
        )));
    }
    let m = train_data.class_count();
    if m < 2 {
        return Err(StmError::Config("need at least 2 classes".into()));
    }
    if let Some(test) = test_data {
        if test.input_dim() != train_data.input_dim() {
            return Err(StmError::Config(format!(
                "test dim {} does not match train dim {}",
                test.input_dim(),
                train_data.input_dim()
            )));
        }
    }

    let params = init_params(
        &net.layer_dims,
        m,
        net.activation,
        derive_seed(cfg.seed, "init"),
    )?;
    let layers = params.num_layers();
    let tap_layer = net.tap_layer.unwrap_or(layers);
    let mut state = TrainState::new(params, tap_layer, cfg.k0)?;

    if cfg.manifold_kind != ManifoldKind::None {
        // Warm-start the buffer with k0 samples per class before step 0.
        for class in 0..m {
            let idx: Vec<usize> = (0..train_data.len())
                .filter(|&i| train_data.label(i) == class)
                .take(cfg.k0)
                .collect();
            if idx.len() < cfg.k0 {
                return Err(StmError::Config(format!(
                    "class {class} has {} samples, warm-up needs k0 = {}",
                    idx.len(),
                    cfg.k0
                )));
            }
            for i in idx {
                let input = train_data.sample_input(i);
                let feature = forward(&state.params, &input, tap_layer)?.tapped_feature;
                state.buffer.push(
                    class,
                    BufferEntry {
                        raw_input: input,
                        cached_feature: feature,
                        insertion_step: 0,
                    },
                )?;
            }
        }
    }

    let batch_seed = derive_seed(cfg.seed, "batches");
    let mut epoch = 0u64;
    let mut batches = batch_iter(train_data, cfg.batch_size, batch_seed, epoch);
    while state.step < cfg.max_steps {
        let indices = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = batch_iter(train_data, cfg.batch_size, batch_seed, epoch);
                batches.next().expect("non-empty dataset yields batches")
            }
        };
        let batch: Vec<Sample> = indices
            .iter()
            .map(|&i| Sample::from_dataset(train_data, i))
            .collect();
        train_step(&mut state, &batch, cfg)?;

        let done = state.step == cfg.max_steps;
        let cadence_hit = cfg.eval_every > 0 && state.step % cfg.eval_every == 0;
        if done || cadence_hit {
            let train_eval = evaluate_model(&state.params, train_data, tap_layer)?;
            let test_acc = match test_data {
                Some(test) => Some(evaluate_model(&state.params, test, tap_layer)?.accuracy),
                None => None,
            };
            let record = state.loss_history.last_mut().expect("step just ran");
            record.train_acc = Some(train_eval.accuracy);
            record.test_acc = test_acc;
        }
    }

    let final_eval = evaluate_model(&state.params, train_data, tap_layer)?;
    let final_test_acc = match test_data {
        Some(test) => Some(evaluate_model(&state.params, test, tap_layer)?.accuracy),
        None => None,
    };
    let report = TrainReport {
        final_train_acc: final_eval.accuracy,
        final_test_acc,
        intra_class_variance: final_eval.intra_class_variance,
        mean_intra_class_variance: final_eval.mean_intra_class_variance,
        manifold_skipped: state.manifold_skipped,
        steps: state.step,
    };
    Ok((state, report))
}
