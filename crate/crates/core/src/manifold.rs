//! Input-space manifold structure: the per-class feature buffer that supplies
//! neighbor sets, LLE reconstruction weights, and Gaussian heat-kernel
//! affinities. Distances are always taken in the raw input space; features
//! only ride along in the buffer for the trainer's use.

use crate::error::{Result, StmError};
use crate::tensor::{dist, dist_sq, dot, Matrix};
use std::collections::VecDeque;

/// One buffered sample: the raw input that drives neighbor selection and the
/// feature it mapped to when it was pushed.
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub raw_input: Matrix,
    pub cached_feature: Matrix,
    pub insertion_step: usize,
}

/// Per-class FIFO of the `capacity` most recent samples.
#[derive(Debug, Clone)]
pub struct FeatureBuffer {
    capacity: usize,
    input_dim: usize,
    feature_dim: usize,
    classes: Vec<VecDeque<BufferEntry>>,
}

impl FeatureBuffer {
    pub fn new(class_count: usize, capacity: usize, input_dim: usize, feature_dim: usize) -> Self {
        FeatureBuffer {
            capacity,
            input_dim,
            feature_dim,
            classes: (0..class_count).map(|_| VecDeque::new()).collect(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_len(&self, class_id: usize) -> usize {
        self.classes.get(class_id).map_or(0, VecDeque::len)
    }

    pub fn entries(&self, class_id: usize) -> impl ExactSizeIterator<Item = &BufferEntry> {
        self.classes[class_id].iter()
    }

    pub fn entry(&self, class_id: usize, index: usize) -> &BufferEntry {
        &self.classes[class_id][index]
    }

    pub fn raw_inputs(&self, class_id: usize) -> Vec<&Matrix> {
        self.classes[class_id]
            .iter()
            .map(|e| &e.raw_input)
            .collect()
    }

    pub fn cached_features(&self, class_id: usize) -> Vec<&Matrix> {
        self.classes[class_id]
            .iter()
            .map(|e| &e.cached_feature)
            .collect()
    }

    /// Append an entry to the class queue, evicting the oldest entry once the
    /// queue would exceed capacity.
    pub fn push(&mut self, class_id: usize, entry: BufferEntry) -> Result<()> {
        if class_id >= self.classes.len() {
            return Err(StmError::Contract(format!(
                "class {class_id} out of range for {} classes",
                self.classes.len()
            )));
        }
        if entry.raw_input.rows() != self.input_dim || entry.raw_input.cols() != 1 {
            return Err(StmError::DimensionMismatch {
                op: "buffer_push",
                details: format!(
                    "raw input is {}x{}, expected {}x1",
                    entry.raw_input.rows(),
                    entry.raw_input.cols(),
                    self.input_dim
                ),
            });
        }
        if entry.cached_feature.rows() != self.feature_dim || entry.cached_feature.cols() != 1 {
            return Err(StmError::DimensionMismatch {
                op: "buffer_push",
                details: format!(
                    "feature is {}x{}, expected {}x1",
                    entry.cached_feature.rows(),
                    entry.cached_feature.cols(),
                    self.feature_dim
                ),
            });
        }
        let queue = &mut self.classes[class_id];
        queue.push_back(entry);
        while queue.len() > self.capacity {
            queue.pop_front();
        }
        Ok(())
    }
}

/// Indices of the `k` buffered same-class entries nearest to `query` in the
/// raw input space. Ties break toward the earlier insertion step, then the
/// lower queue index.
pub fn knn_in_buffer(
    buf: &FeatureBuffer,
    class_id: usize,
    query: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(StmError::Contract("knn_in_buffer needs k >= 1".into()));
    }
    let len = buf.class_len(class_id);
    if len == 0 {
        return Err(StmError::InsufficientNeighbors(format!(
            "class {class_id} buffer is empty"
        )));
    }
    let mut scored: Vec<(f64, usize, usize)> = buf
        .entries(class_id)
        .enumerate()
        .map(|(i, e)| Ok((dist_sq(query, &e.raw_input)?, e.insertion_step, i)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Ok(scored
        .into_iter()
        .take(k.min(len))
        .map(|(_, _, i)| i)
        .collect())
}

/// Sparse LLE reconstruction coefficients for one sample: the nonzero row of
/// the reconstruction-weight matrix, aligned with `neighbor_indices`.
#[derive(Debug, Clone)]
pub struct LleWeights {
    pub neighbor_indices: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// Squared reconstruction residual at the returned coefficients.
    pub objective: f64,
}

impl LleWeights {
    pub fn with_indices(mut self, indices: Vec<usize>) -> Self {
        assert_eq!(indices.len(), self.coefficients.len());
        self.neighbor_indices = indices;
        self
    }
}

/// Sum-to-one coefficients minimizing the reconstruction residual
/// `|query - sum_j w_j neighbor_j|^2`, via the local Gram system
/// `C w = 1` with `C_jk = (query - nbr_j) . (query - nbr_k)`, conditioned as
/// `C + reg_eps * tr(C) * I`, then normalized to unit sum.
///
/// When every neighbor coincides with the query, any feasible point
/// reconstructs exactly and the uniform coefficients are returned.
pub fn lle_weights(
    query_input: &Matrix,
    neighbor_inputs: &[&Matrix],
    reg_eps: f64,
) -> Result<LleWeights> {
    let k = neighbor_inputs.len();
    if k == 0 {
        return Err(StmError::InsufficientNeighbors(
            "lle_weights needs at least one neighbor".into(),
        ));
    }
    if reg_eps < 0.0 {
        return Err(StmError::Contract("reg_eps must be >= 0".into()));
    }
    for nbr in neighbor_inputs {
        if !query_input.same_shape(nbr) {
            return Err(StmError::DimensionMismatch {
                op: "lle_weights",
                details: format!(
                    "neighbor is {}x{}, query is {}x{}",
                    nbr.rows(),
                    nbr.cols(),
                    query_input.rows(),
                    query_input.cols()
                ),
            });
        }
    }

    let diffs: Vec<Matrix> = neighbor_inputs
        .iter()
        .map(|nbr| query_input.sub(nbr))
        .collect::<Result<_>>()?;

    let mut gram = Matrix::zeros(k, k);
    for j in 0..k {
        for l in j..k {
            let v = dot(&diffs[j], &diffs[l])?;
            gram[(j, l)] = v;
            gram[(l, j)] = v;
        }
    }
    let trace: f64 = (0..k).map(|j| gram[(j, j)]).sum();

    let coefficients = if trace == 0.0 {
        vec![1.0 / k as f64; k]
    } else {
        for j in 0..k {
            gram[(j, j)] += reg_eps * trace;
        }
        let ones = Matrix::from_vec(k, 1, vec![1.0; k])?;
        let raw = gram
            .solve_spd(&ones)
            .map_err(|e| StmError::DegenerateNeighborhood(format!("Gram solve failed: {e}")))?;
        let sum: f64 = raw.data().iter().sum();
        if sum == 0.0 || !sum.is_finite() {
            return Err(StmError::DegenerateNeighborhood(format!(
                "coefficient sum {sum} cannot be normalized"
            )));
        }
        raw.data().iter().map(|w| w / sum).collect()
    };

    let mut residual = query_input.clone();
    for (w, nbr) in coefficients.iter().zip(neighbor_inputs) {
        residual.add_assign_scaled(nbr, -w)?;
    }
    Ok(LleWeights {
        neighbor_indices: (0..k).collect(),
        coefficients,
        objective: residual.frobenius_norm_sq(),
    })
}

/// Heat-kernel affinities of one sample against a neighbor set.
#[derive(Debug, Clone)]
pub struct LaplacianAffinity {
    /// One affinity per neighbor (n x 1).
    pub weights: Matrix,
    pub bandwidth: f64,
}

impl LaplacianAffinity {
    pub fn values(&self) -> &[f64] {
        self.weights.data()
    }

    pub fn len(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.rows() == 0
    }
}

/// `B_j = exp(-|query - nbr_j|^2 / (2 bandwidth^2))` for each neighbor.
pub fn laplacian_affinity(
    query_input: &Matrix,
    neighbor_inputs: &[&Matrix],
    bandwidth: f64,
) -> Result<LaplacianAffinity> {
    if bandwidth <= 0.0 {
        return Err(StmError::Contract(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if neighbor_inputs.is_empty() {
        return Err(StmError::InsufficientNeighbors(
            "laplacian_affinity needs at least one neighbor".into(),
        ));
    }
    let denom = 2.0 * bandwidth * bandwidth;
    let mut values = Vec::with_capacity(neighbor_inputs.len());
    for nbr in neighbor_inputs {
        values.push((-dist_sq(query_input, nbr)? / denom).exp());
    }
    Ok(LaplacianAffinity {
        weights: Matrix::from_vec(values.len(), 1, values)?,
        bandwidth,
    })
}

/// Symmetric batch-mode affinity matrix over a sample set.
pub fn laplacian_affinity_matrix(inputs: &[&Matrix], bandwidth: f64) -> Result<Matrix> {
    if bandwidth <= 0.0 {
        return Err(StmError::Contract(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = inputs.len();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = (-dist_sq(inputs[i], inputs[j])? / denom).exp();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Median of all pairwise Euclidean distances; the default heat-kernel scale.
/// Falls back to 1.0 when every input coincides, and to the smallest positive
/// pairwise distance when duplicates drag the median to zero.
pub fn median_bandwidth(inputs: &[&Matrix]) -> Result<f64> {
    if inputs.len() < 2 {
        return Err(StmError::Contract(
            "median_bandwidth needs at least 2 inputs".into(),
        ));
    }
    let mut dists = Vec::with_capacity(inputs.len() * (inputs.len() - 1) / 2);
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            dists.push(dist(inputs[i], inputs[j])?);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        return Ok(median);
    }
    match dists.iter().find(|d| **d > 0.0) {
        Some(&d) => Ok(d),
        None => Ok(1.0),
    }
}
