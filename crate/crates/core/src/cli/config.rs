//! Run configuration: one TOML file per run, every key defaulted, individual
//! keys overridable from the command line with `--set section.key=value`.
//! All randomness fans out from the single root `seed`.

use crate::data::{self, Dataset, Split, Standardizer};
use crate::error::{Result, StmError};
use crate::network::{Activation, DecayScope};
use crate::seed::derive_seed;
use crate::stm::{BufferFeatureMode, GradientScaling, ManifoldKind, NetworkSpec, StmConfig};
use crate::theory::{ChainSpec, IncrementModel, VectorChainSpec};
use crate::Matrix;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; component streams are derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub weights: WeightsConfig,
    pub theory: TheoryConfig,
    pub embed: EmbedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/out"),
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            weights: WeightsConfig::default(),
            theory: TheoryConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Blobs,
    Moons,
    SwissRoll,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    /// Generated held-out samples per class; 0 disables the test split.
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Noise scale for moons / swiss-roll.
    pub noise: f64,
    /// Swiss-roll train sample count.
    pub n: usize,
    pub test_n: usize,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first k training samples (0 keeps all).
    pub train_subset: usize,
    pub standardize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Blobs,
            classes: 5,
            per_class: 200,
            test_per_class: 0,
            dim: 20,
            spread: 1.0,
            noise: 0.1,
            n: 1000,
            test_n: 0,
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            train_subset: 0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationName {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Input dim followed by layer output dims.
    pub layer_dims: Vec<usize>,
    pub activation: ActivationName,
    /// 1-based tap layer; 0 taps the last layer.
    pub tap_layer: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layer_dims: vec![20, 32, 16],
            activation: ActivationName::Relu,
            tap_layer: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldName {
    None,
    Lle,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingName {
    ObjectiveConsistent,
    Algorithm1Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferFeatureName {
    Refresh,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayScopeName {
    Classifier,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sigma: f64,
    pub lambda: f64,
    pub manifold: ManifoldName,
    pub k0: usize,
    pub k_lle: usize,
    pub lle_reg_eps: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// (step, rate) milestones.
    pub lr_schedule: Vec<(usize, f64)>,
    pub gradient_scaling: ScalingName,
    pub buffer_features: BufferFeatureName,
    pub decay_scope: DecayScopeName,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.01,
            lambda: 1e-4,
            manifold: ManifoldName::Laplacian,
            k0: 30,
            k_lle: 14,
            lle_reg_eps: 1e-3,
            momentum: 0.9,
            batch_size: 100,
            max_steps: 1000,
            lr_schedule: vec![(0, 0.1)],
            gradient_scaling: ScalingName::ObjectiveConsistent,
            buffer_features: BufferFeatureName::Refresh,
            decay_scope: DecayScopeName::Classifier,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// Index of the query sample within the training split.
    pub sample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementModelName {
    UniformBounded,
    TruncatedGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub trials: usize,
    /// Scalar-chain length and uniform increment bound.
    pub n: usize,
    pub c: f64,
    pub lambdas: Vec<f64>,
    pub increment_model: IncrementModelName,
    pub gamma: f64,
    /// Vector-chain geometry.
    pub dim: usize,
    pub chain_length: usize,
    pub c_vector: f64,
    pub lambda_vec: Vec<f64>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            trials: 100_000,
            n: 20,
            c: 1.0,
            lambdas: vec![2.0, 4.0, 6.0, 8.0],
            increment_model: IncrementModelName::UniformBounded,
            gamma: 1.0,
            dim: 3,
            chain_length: 10,
            c_vector: 0.1,
            lambda_vec: vec![0.5, 0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub split: SplitName,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            split: SplitName::Train,
        }
    }
}

impl RunConfig {
    /// Parse a TOML config file, then apply `--set path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StmError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| StmError::Config(format!("config parse error: {e}")))?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| StmError::Config(format!("config error: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| StmError::Config(format!("serialize: {e}")))
    }

    pub fn stm_config(&self) -> StmConfig {
        let t = &self.train;
        StmConfig {
            sigma: t.sigma,
            lambda: t.lambda,
            manifold_kind: match t.manifold {
                ManifoldName::None => ManifoldKind::None,
                ManifoldName::Lle => ManifoldKind::Lle,
                ManifoldName::Laplacian => ManifoldKind::Laplacian,
            },
            k0: t.k0,
            k_lle: t.k_lle,
            lle_reg_eps: t.lle_reg_eps,
            learning_rate_schedule: t.lr_schedule.clone(),
            momentum: t.momentum,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            seed: self.seed,
            gradient_scaling: match t.gradient_scaling {
                ScalingName::ObjectiveConsistent => GradientScaling::ObjectiveConsistent,
                ScalingName::Algorithm1Literal => GradientScaling::Algorithm1Literal,
            },
            buffer_feature_mode: match t.buffer_features {
                BufferFeatureName::Refresh => BufferFeatureMode::Refresh,
                BufferFeatureName::Stale => BufferFeatureMode::Stale,
            },
            decay_scope: match t.decay_scope {
                DecayScopeName::Classifier => DecayScope::ClassifierOnly,
                DecayScopeName::All => DecayScope::All,
            },
            eval_every: t.eval_every,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            layer_dims: self.network.layer_dims.clone(),
            activation: match self.network.activation {
                ActivationName::Relu => Activation::Relu,
                ActivationName::Tanh => Activation::Tanh,
                ActivationName::Identity => Activation::Identity,
            },
            tap_layer: match self.network.tap_layer {
                0 => None,
                t => Some(t),
            },
        }
    }

    pub fn chain_spec(&self) -> ChainSpec {
        let t = &self.theory;
        ChainSpec {
            n: t.n,
            c: vec![t.c; t.n],
            increment_model: match t.increment_model {
                IncrementModelName::UniformBounded => IncrementModel::UniformBounded,
                IncrementModelName::TruncatedGaussian => IncrementModel::TruncatedGaussian,
            },
            gamma: t.gamma,
            seed: derive_seed(self.seed, "theory-chain"),
        }
    }

    pub fn vector_chain_spec(&self) -> Result<VectorChainSpec> {
        let t = &self.theory;
        Ok(VectorChainSpec {
            dim: t.dim,
            chain_length: t.chain_length,
            c_table: Matrix::from_vec(
                t.dim,
                t.chain_length,
                vec![t.c_vector; t.dim * t.chain_length],
            )?,
            lambda_vec: t.lambda_vec.clone(),
            seed: derive_seed(self.seed, "theory-vector-chain"),
        })
    }

    /// Materialize the configured train and test datasets.
    pub fn build_datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let d = &self.dataset;
        let data_seed = derive_seed(self.seed, "dataset");
        let (mut train, mut test) = match d.kind {
            DatasetKind::Blobs => {
                let total = d.per_class + d.test_per_class;
                let all = data::gen_blobs(d.classes, total, d.dim, d.spread, data_seed)?;
                split_per_class(&all, d.per_class)
            }
            DatasetKind::Moons => {
                let total = d.per_class + d.test_per_class;
                let all = data::gen_two_moons(total, d.noise, data_seed)?;
                split_per_class(&all, d.per_class)
            }
            DatasetKind::SwissRoll => {
                let all = data::gen_swiss_roll(d.n + d.test_n, d.noise, data_seed)?;
                split_by_index(&all, d.n)
            }
            DatasetKind::Idx => {
                let train = data::load_idx(&d.train_images, &d.train_labels)?;
                let test = if d.test_images.as_os_str().is_empty() {
                    None
                } else {
                    Some(data::load_idx(&d.test_images, &d.test_labels)?.with_split(Split::Test))
                };
                (train, test)
            }
        };
        if d.train_subset > 0 {
            train = train.take(d.train_subset);
        }
        // Unify class counts so checkpoints trained on one split apply to the other.
        if let Some(t) = &test {
            if t.class_count() != train.class_count() {
                let m = train.class_count().max(t.class_count());
                train = Dataset::new(
                    train.inputs().clone(),
                    train.labels().to_vec(),
                    m,
                    Split::Train,
                )?;
                test = Some(Dataset::new(
                    t.inputs().clone(),
                    t.labels().to_vec(),
                    m,
                    Split::Test,
                )?);
            }
        }
        if d.standardize {
            let standardizer = Standardizer::fit(&train);
            train = standardizer.apply(&train)?;
            test = match test {
                Some(t) => Some(standardizer.apply(&t)?.with_split(Split::Test)),
                None => None,
            };
        }
        Ok((train, test))
    }
}

/// First `per_class` samples of each class into the train split, the rest
/// into the test split (None if nothing is left).
fn split_per_class(all: &Dataset, per_class: usize) -> (Dataset, Option<Dataset>) {
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut seen = vec![0usize; all.class_count()];
    for i in 0..all.len() {
        let class = all.label(i);
        if seen[class] < per_class {
            train_idx.push(i);
        } else {
            test_idx.push(i);
        }
        seen[class] += 1;
    }
    (
        subset(all, &train_idx, Split::Train),
        if test_idx.is_empty() {
            None
        } else {
            Some(subset(all, &test_idx, Split::Test))
        },
    )
}

fn split_by_index(all: &Dataset, n_train: usize) -> (Dataset, Option<Dataset>) {
    let train_idx: Vec<usize> = (0..n_train.min(all.len())).collect();
    let test_idx: Vec<usize> = (n_train.min(all.len())..all.len()).collect();
    (
        subset(all, &train_idx, Split::Train),
        if test_idx.is_empty() {
            None
        } else {
            Some(subset(all, &test_idx, Split::Test))
        },
    )
}

fn subset(all: &Dataset, indices: &[usize], split: Split) -> Dataset {
    let dim = all.input_dim();
    let mut data = Vec::with_capacity(indices.len() * dim);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(all.inputs().row(i));
        labels.push(all.label(i));
    }
    Dataset::new(
        Matrix::from_vec(indices.len(), dim, data).expect("sized"),
        labels,
        all.class_count(),
        split,
    )
    .expect("labels already validated")
}

/// Apply one `section.key=value` override onto the parsed TOML tree. The
/// value text is itself parsed as TOML (falling back to a bare string).
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        StmError::Config(format!("override '{spec}' is not of the form key=value"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(StmError::Config(format!(
            "override '{spec}' has an empty key"
        )));
    }
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    };

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            node.insert(segment.to_string(), parsed);
            return Ok(());
        }
        node = node
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| {
                StmError::Config(format!("override path '{path}' crosses a non-table value"))
            })?;
    }
    unreachable!("loop returns on the last segment")
}
