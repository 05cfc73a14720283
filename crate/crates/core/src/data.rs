//! Deterministic datasets: seeded synthetic generators (blobs, two moons,
//! swiss roll) and the big-endian IDX image/label reader, so every experiment
//! is reproducible from config + seed.

use crate::error::{Result, StmError};
use crate::seed::derive_seed_indexed;
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Immutable labeled dataset; inputs are one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(StmError::Contract(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(StmError::Contract(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// The i-th input as a column vector.
    pub fn sample_input(&self, i: usize) -> Matrix {
        Matrix::column(self.inputs.row(i))
    }

    /// First `n` samples, preserving order.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let mut data = Vec::with_capacity(n * self.input_dim());
        for i in 0..n {
            data.extend_from_slice(self.inputs.row(i));
        }
        Dataset {
            inputs: Matrix::from_vec(n, self.input_dim(), data).expect("sized above"),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            split: self.split,
        }
    }
}

fn sample_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("positive std").sample(rng)
}

/// Gaussian blobs around well-separated class centers (norm-10 directions,
/// orthonormalized when `classes <= dim`).
pub fn gen_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class < 1 || dim == 0 {
        return Err(StmError::Contract(format!(
            "gen_blobs needs classes >= 2, per_class >= 1, dim >= 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random directions scaled to norm 10, Gram-Schmidt-orthogonalized while
    // possible so centers stay pairwise distance 10*sqrt(2) apart.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| sample_normal(&mut rng, 1.0)).collect();
            if centers.len() < dim {
                for c in &centers {
                    let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / 100.0;
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi -= proj * ci;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                centers.push(v.iter().map(|x| 10.0 * x / norm).collect());
                break;
            }
        }
    }

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                data.push(c + sample_normal(&mut rng, spread));
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dim, data)?,
        labels,
        classes,
        Split::Train,
    )
}

/// Two interleaved half-circles: class 0 on the upper unit arc at the origin,
/// class 1 on the lower unit arc centered at (1, 0.5).
pub fn gen_two_moons(per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if per_class < 1 {
        return Err(StmError::Contract(
            "gen_two_moons needs per_class >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_class;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for _ in 0..per_class {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            data.push(x + sample_normal(&mut rng, noise));
            data.push(y + sample_normal(&mut rng, noise));
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(n, 2, data)?, labels, 2, Split::Train)
}

/// Classic swiss roll in 3-D: (t cos t, h, t sin t) with t in [1.5pi, 4.5pi]
/// and height h in [0, 21]. Two classes split at the median roll angle.
pub fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(StmError::Contract("gen_swiss_roll needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_lo = 1.5 * std::f64::consts::PI;
    let t_hi = 4.5 * std::f64::consts::PI;
    let t_mid = 3.0 * std::f64::consts::PI;
    let mut data = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(t_lo..t_hi);
        let h = rng.random_range(0.0..21.0);
        data.push(t * t.cos() + sample_normal(&mut rng, noise));
        data.push(h + sample_normal(&mut rng, noise));
        data.push(t * t.sin() + sample_normal(&mut rng, noise));
        labels.push(usize::from(t >= t_mid));
    }
    Dataset::new(Matrix::from_vec(n, 3, data)?, labels, 2, Split::Train)
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(StmError::DataFormat {
            path: path.to_string(),
            offset: bytes.len() as u64,
            what: format!("file truncated: need {end} bytes to read a u32 at offset {offset}"),
        });
    }
    Ok(u32::from_be_bytes(
        bytes[offset..end].try_into().expect("4 bytes"),
    ))
}

/// Load an IDX image/label pair (the published MNIST binary layout): pixels
/// scaled to [0, 1], images flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let magic = read_be_u32(&images, 0, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(StmError::DataFormat {
            path: ipath,
            offset: 0,
            what: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(&images, 4, &ipath)? as usize;
    let rows = read_be_u32(&images, 8, &ipath)? as usize;
    let cols = read_be_u32(&images, 12, &ipath)? as usize;
    let expected = 16 + count * rows * cols;
    if images.len() != expected {
        return Err(StmError::DataFormat {
            path: ipath,
            offset: images.len().min(expected) as u64,
            what: format!(
                "image payload is {} bytes, header implies {expected}",
                images.len()
            ),
        });
    }

    let lmagic = read_be_u32(&labels, 0, &lpath)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(StmError::DataFormat {
            path: lpath,
            offset: 0,
            what: format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lcount = read_be_u32(&labels, 4, &lpath)? as usize;
    if labels.len() != 8 + lcount {
        return Err(StmError::DataFormat {
            path: lpath,
            offset: labels.len().min(8 + lcount) as u64,
            what: format!(
                "label payload is {} bytes, header implies {}",
                labels.len(),
                8 + lcount
            ),
        });
    }
    if lcount != count {
        return Err(StmError::DataFormat {
            path: lpath,
            offset: 4,
            what: format!("{count} images but {lcount} labels"),
        });
    }

    let dim = rows * cols;
    let data: Vec<f64> = images[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let label_vec: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let class_count = label_vec.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(
        Matrix::from_vec(count, dim, data)?,
        label_vec,
        class_count,
        Split::Train,
    )
}

/// Write a dataset as an IDX image/label pair. Inputs must lie in [0, 1];
/// they are quantized to bytes. Square image geometry is inferred when the
/// input dimension is a perfect square, else `dim x 1` is written.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let dim = dataset.input_dim();
    let side = (dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == dim {
        (side, side)
    } else {
        (dim, 1)
    };

    let mut images = Vec::with_capacity(16 + dataset.len() * dim);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for v in dataset.inputs().data() {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &l in dataset.labels() {
        labels.push(l as u8);
    }

    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}

/// Seeded minibatch index sequence for one epoch: a shuffled permutation
/// chunked into `batch_size` groups, short final batch kept.
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "batch_iter", epoch));
    // Fisher-Yates.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        batches.push(chunk.to_vec());
    }
    batches.into_iter()
}

/// Per-feature affine normalization fitted on a training split.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let n = dataset.len() as f64;
        let d = dataset.input_dim();
        let mut mean = vec![0.0; d];
        for i in 0..dataset.len() {
            for (m, v) in mean.iter_mut().zip(dataset.inputs().row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for i in 0..dataset.len() {
            for ((s, v), m) in var.iter_mut().zip(dataset.inputs().row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let d = dataset.input_dim();
        if d != self.mean.len() {
            return Err(StmError::Contract(format!(
                "standardizer fitted on dim {} applied to dim {d}",
                self.mean.len()
            )));
        }
        let mut data = Vec::with_capacity(dataset.len() * d);
        for i in 0..dataset.len() {
            for ((v, m), s) in dataset
                .inputs()
                .row(i)
                .iter()
                .zip(&self.mean)
                .zip(&self.std)
            {
                data.push((v - m) / s);
            }
        }
        Dataset::new(
            Matrix::from_vec(dataset.len(), d, data)?,
            dataset.labels().to_vec(),
            dataset.class_count(),
            dataset.split(),
        )
    }
}

/// CSV export: header `label,x0,..` then one row per sample.
pub fn export_csv<W: Write>(dataset: &Dataset, out: &mut W) -> Result<()> {
    write!(out, "label")?;
    for j in 0..dataset.input_dim() {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for i in 0..dataset.len() {
        write!(out, "{}", dataset.label(i))?;
        for v in dataset.inputs().row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
