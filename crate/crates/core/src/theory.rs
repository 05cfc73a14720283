//! Bounded-increment chain simulation and the Azuma-type tail bounds, checked
//! against each other by Monte Carlo. The quantity under test is the averaged
//! martingale endpoint `x_n / n` (the mean increment), the variable the
//! bound's derivation actually controls; the tail event at threshold
//! `lambda / n` is compared with `2 exp(-lambda^2 / (2 sum c_i^2))`.
//!
//! Trials are partitioned into fixed-size chunks with per-chunk derived
//! seeds and merged in chunk order, so results do not depend on the degree
//! of parallelism.

use crate::error::{Result, StmError};
use crate::seed::derive_seed_indexed;
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use statrs::function::erf::erf;

const TRIAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementModel {
    /// Increments uniform on [-c_i, c_i]: zero conditional mean and almost
    /// surely bounded, the assumptions the proof actually uses.
    UniformBounded,
    /// Gaussian G(0, gamma) increments rejected until they satisfy the bound,
    /// the closest consistent reading of the stated model.
    TruncatedGaussian,
}

/// A scalar chain x_0 = 0, x_i = x_{i-1} + delta_i with |delta_i| <= c_{i-1}.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub n: usize,
    pub c: Vec<f64>,
    pub increment_model: IncrementModel,
    /// Gaussian scale, used by `TruncatedGaussian`.
    pub gamma: f64,
    pub seed: u64,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(StmError::Contract("chain length must be >= 1".into()));
        }
        if self.c.len() != self.n {
            return Err(StmError::Contract(format!(
                "{} increment bounds for a length-{} chain",
                self.c.len(),
                self.n
            )));
        }
        if self.c.iter().any(|&c| c <= 0.0 || !c.is_finite()) {
            return Err(StmError::Contract(
                "increment bounds must be positive".into(),
            ));
        }
        if self.increment_model == IncrementModel::TruncatedGaussian {
            if self.gamma <= 0.0 {
                return Err(StmError::Contract("gamma must be positive".into()));
            }
            // P(|G(0,gamma)| <= c) = erf(c / (gamma sqrt(2))).
            for &c in &self.c {
                let accept = erf(c / (self.gamma * std::f64::consts::SQRT_2));
                if accept < 1e-6 {
                    return Err(StmError::InfeasibleTruncation { prob: accept });
                }
            }
        }
        Ok(())
    }
}

fn draw_increment(rng: &mut ChaCha8Rng, model: IncrementModel, bound: f64, gamma: f64) -> f64 {
    match model {
        IncrementModel::UniformBounded => rng.random_range(-bound..=bound),
        IncrementModel::TruncatedGaussian => {
            let normal = Normal::new(0.0, gamma).expect("validated gamma");
            loop {
                let v = normal.sample(rng);
                if v.abs() <= bound {
                    return v;
                }
            }
        }
    }
}

fn chunked_trials<T: Send>(
    trials: usize,
    seed: u64,
    tag: &str,
    per_trial: impl Fn(&mut ChaCha8Rng) -> T + Sync,
) -> Vec<T> {
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|w| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, tag, w as u64));
            let count = TRIAL_CHUNK.min(trials - w * TRIAL_CHUNK);
            (0..count).map(|_| per_trial(&mut rng)).collect::<Vec<T>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// One averaged endpoint `x_n / n` per trial.
pub fn simulate_chain(spec: &ChainSpec, trials: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if trials == 0 {
        return Err(StmError::Contract("trials must be >= 1".into()));
    }
    let spec = spec.clone();
    Ok(chunked_trials(
        trials,
        spec.seed,
        "chain-trials",
        move |rng| {
            let mut x = 0.0;
            for &bound in &spec.c {
                x += draw_increment(rng, spec.increment_model, bound, spec.gamma);
            }
            x / spec.n as f64
        },
    ))
}

/// Full position paths x_1..x_n per trial, drawn from the same stream as
/// [`simulate_chain`]; mainly for diagnostics and bound-respect checks.
pub fn simulate_chain_paths(spec: &ChainSpec, trials: usize) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if trials == 0 {
        return Err(StmError::Contract("trials must be >= 1".into()));
    }
    let spec = spec.clone();
    Ok(chunked_trials(
        trials,
        spec.seed,
        "chain-trials",
        move |rng| {
            let mut x = 0.0;
            spec.c
                .iter()
                .map(|&bound| {
                    x += draw_increment(rng, spec.increment_model, bound, spec.gamma);
                    x
                })
                .collect()
        },
    ))
}

/// Unclamped tail bound `2 exp(-lambda^2 / (2 sum c_i^2))`.
pub fn azuma_bound_raw(c: &[f64], lambda: f64) -> f64 {
    let sum_sq: f64 = c.iter().map(|v| v * v).sum();
    2.0 * (-lambda * lambda / (2.0 * sum_sq)).exp()
}

/// Tail bound for `P(|mean increment| >= lambda / n)`, clamped to 1.
pub fn azuma_bound(c: &[f64], lambda: f64) -> f64 {
    azuma_bound_raw(c, lambda).min(1.0)
}

/// The looser exponent printed in some statements of the bound
/// (`-lambda^2 / sum c_i^2`), kept for comparison plots.
pub fn azuma_bound_main_text(c: &[f64], lambda: f64) -> f64 {
    let sum_sq: f64 = c.iter().map(|v| v * v).sum();
    (2.0 * (-lambda * lambda / sum_sq).exp()).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailCenter {
    /// Center at the analytic expectation 0 of the zero-mean construction.
    AnalyticZero,
    SampleMean,
}

/// Fraction of samples at absolute distance >= `threshold` from the center.
pub fn empirical_tail(samples: &[f64], threshold: f64, center: TailCenter) -> f64 {
    assert!(!samples.is_empty(), "empirical_tail needs samples");
    let mean = match center {
        TailCenter::AnalyticZero => 0.0,
        TailCenter::SampleMean => samples.iter().sum::<f64>() / samples.len() as f64,
    };
    let hits = samples
        .iter()
        .filter(|&&s| (s - mean).abs() >= threshold)
        .count();
    hits as f64 / samples.len() as f64
}

/// Per-coordinate chains for the vector-valued bound: coordinate i evolves
/// for `chain_length` steps with increment bounds `c_table[(i, j)]`.
#[derive(Debug, Clone)]
pub struct VectorChainSpec {
    pub dim: usize,
    pub chain_length: usize,
    /// dim x chain_length table of increment bounds c(i, j-1).
    pub c_table: Matrix,
    /// Per-coordinate thresholds, each in (0, 1].
    pub lambda_vec: Vec<f64>,
    pub seed: u64,
}

impl VectorChainSpec {
    /// Uniform bounds and thresholds across coordinates.
    pub fn uniform(dim: usize, chain_length: usize, c: f64, lambda: f64, seed: u64) -> Self {
        VectorChainSpec {
            dim,
            chain_length,
            c_table: Matrix::from_vec(dim, chain_length, vec![c; dim * chain_length])
                .expect("sized"),
            lambda_vec: vec![lambda; dim],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.chain_length == 0 {
            return Err(StmError::Contract(
                "dim and chain_length must be >= 1".into(),
            ));
        }
        if self.c_table.rows() != self.dim || self.c_table.cols() != self.chain_length {
            return Err(StmError::Contract(format!(
                "c_table is {}x{}, expected {}x{}",
                self.c_table.rows(),
                self.c_table.cols(),
                self.dim,
                self.chain_length
            )));
        }
        if self
            .c_table
            .data()
            .iter()
            .any(|&c| c <= 0.0 || !c.is_finite())
        {
            return Err(StmError::Contract(
                "increment bounds must be positive".into(),
            ));
        }
        if self.lambda_vec.len() != self.dim {
            return Err(StmError::Contract(format!(
                "{} thresholds for dim {}",
                self.lambda_vec.len(),
                self.dim
            )));
        }
        if self.lambda_vec.iter().any(|&l| l <= 0.0 || l > 1.0) {
            return Err(StmError::Contract(
                "per-coordinate thresholds must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn row_bound_raw(&self, i: usize) -> f64 {
        azuma_bound_raw(self.c_table.row(i), self.lambda_vec[i])
    }
}

/// Union-bound constant: `min(1, sum_i 2 exp(-lambda_i^2 / (2 sum_j c(i,j)^2)))`.
pub fn theorem2_bound(spec: &VectorChainSpec) -> f64 {
    theorem2_bound_raw(spec).min(1.0)
}

pub fn theorem2_bound_raw(spec: &VectorChainSpec) -> f64 {
    (0..spec.dim).map(|i| spec.row_bound_raw(i)).sum()
}

/// One bound-vs-empirical comparison; `holds` allows three binomial standard
/// errors of Monte Carlo slack.
#[derive(Debug, Clone)]
pub struct BoundCheckRow {
    pub lambda: f64,
    pub empirical: f64,
    pub bound: f64,
    pub std_error: f64,
    pub holds: bool,
}

fn check_row(lambda: f64, empirical: f64, bound: f64, trials: usize) -> BoundCheckRow {
    let std_error = (empirical * (1.0 - empirical) / trials as f64).sqrt();
    BoundCheckRow {
        lambda,
        empirical,
        bound,
        std_error,
        holds: empirical <= bound + 3.0 * std_error,
    }
}

/// Monte Carlo check of the scalar bound on a grid of thresholds: the event
/// is `|mean increment| >= lambda / n`.
pub fn verify_theorem1(
    spec: &ChainSpec,
    lambdas: &[f64],
    trials: usize,
) -> Result<Vec<BoundCheckRow>> {
    let samples = simulate_chain(spec, trials)?;
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let empirical =
                empirical_tail(&samples, lambda / spec.n as f64, TailCenter::AnalyticZero);
            check_row(lambda, empirical, azuma_bound(&spec.c, lambda), trials)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Theorem2Report {
    /// Per-coordinate checks of `P(|Z_i| >= lambda_i)`.
    pub coordinate_rows: Vec<BoundCheckRow>,
    /// The union event `sum_i |Z_i| >= sum_i lambda_i` against the summed
    /// constant.
    pub union_row: BoundCheckRow,
}

impl Theorem2Report {
    pub fn all_hold(&self) -> bool {
        self.union_row.holds && self.coordinate_rows.iter().all(|r| r.holds)
    }
}

/// Monte Carlo check of the vector bound: absolute averaged endpoints per
/// coordinate, compared per-coordinate and through the union event.
pub fn verify_theorem2(spec: &VectorChainSpec, trials: usize) -> Result<Theorem2Report> {
    spec.validate()?;
    if trials == 0 {
        return Err(StmError::Contract("trials must be >= 1".into()));
    }
    let spec_cl = spec.clone();
    let abs_z: Vec<Vec<f64>> =
        chunked_trials(trials, spec.seed, "vector-chain-trials", move |rng| {
            (0..spec_cl.dim)
                .map(|i| {
                    let mut x = 0.0;
                    for &bound in spec_cl.c_table.row(i) {
                        x += draw_increment(rng, IncrementModel::UniformBounded, bound, 1.0);
                    }
                    (x / spec_cl.chain_length as f64).abs()
                })
                .collect()
        });

    let coordinate_rows = (0..spec.dim)
        .map(|i| {
            let hits = abs_z.iter().filter(|z| z[i] >= spec.lambda_vec[i]).count();
            let empirical = hits as f64 / trials as f64;
            check_row(
                spec.lambda_vec[i],
                empirical,
                spec.row_bound_raw(i).min(1.0),
                trials,
            )
        })
        .collect();

    let lambda_sum: f64 = spec.lambda_vec.iter().sum();
    let union_hits = abs_z
        .iter()
        .filter(|z| z.iter().sum::<f64>() >= lambda_sum)
        .count();
    let union_row = check_row(
        lambda_sum,
        union_hits as f64 / trials as f64,
        theorem2_bound(spec),
        trials,
    );

    Ok(Theorem2Report {
        coordinate_rows,
        union_row,
    })
}
