//! Subcommand bodies: each validates its slice of the config, runs the
//! underlying module, and writes CSV/TOML artifacts into the output
//! directory. Outputs carry no timestamps, so identical configs reproduce
//! byte-identical files.

use super::config::{ManifoldName, RunConfig, SplitName};
use crate::data::{export_csv, Dataset};
use crate::error::{Result, StmError};
use crate::manifold::{
    knn_in_buffer, laplacian_affinity, lle_weights, median_bandwidth, BufferEntry, FeatureBuffer,
};
use crate::network::{forward, load_checkpoint, save_checkpoint, NetworkParams};
use crate::stm::{evaluate_model, train, TrainReport, TrainState};
use crate::tensor::dist;
use crate::theory::{verify_theorem1, verify_theorem2, BoundCheckRow, Theorem2Report};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Stable process exit codes, mapped from the error taxonomy.
pub fn exit_code(err: &StmError) -> i32 {
    match err {
        StmError::Config(_) | StmError::Contract(_) | StmError::DimensionMismatch { .. } => 2,
        StmError::DataFormat { .. } | StmError::Io(_) => 3,
        StmError::Divergence { .. } => 4,
        StmError::CheckpointFormat(_) => 5,
        _ => 1,
    }
}

/// Final-run facts, serialized as `summary.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_test_acc: Option<f64>,
    pub mean_intra_class_variance: f64,
    pub intra_class_variance: Vec<f64>,
    pub manifold_skipped: usize,
    pub final_total_loss: f64,
    pub final_ce_loss: f64,
    pub final_manifold_loss: f64,
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summary_path: PathBuf,
    pub summary: TrainSummary,
    pub report: TrainReport,
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

fn write_metrics_csv(state: &TrainState, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("step,total_loss,ce_loss,manifold_loss,learning_rate,train_acc,test_acc\n");
    for rec in &state.loss_history {
        write!(
            out,
            "{},{},{},{},{}",
            rec.step, rec.total, rec.ce, rec.manifold, rec.learning_rate
        )
        .expect("writing to string");
        match rec.train_acc {
            Some(acc) => write!(out, ",{acc}").expect("writing to string"),
            None => out.push(','),
        }
        match rec.test_acc {
            Some(acc) => write!(out, ",{acc}").expect("writing to string"),
            None => out.push(','),
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Train per config; writes `checkpoint.stm`, `metrics.csv`, `summary.toml`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs> {
    let (train_data, test_data) = cfg.build_datasets()?;
    let net = cfg.network_spec();
    let stm_cfg = cfg.stm_config();
    let (state, report) = train(&train_data, test_data.as_ref(), &net, &stm_cfg)?;

    ensure_output_dir(cfg)?;
    let checkpoint = cfg.output_dir.join("checkpoint.stm");
    save_checkpoint(&state.params, &checkpoint)?;
    let metrics = cfg.output_dir.join("metrics.csv");
    write_metrics_csv(&state, &metrics)?;

    let last = state.loss_history.last();
    let summary = TrainSummary {
        steps: report.steps,
        final_train_acc: report.final_train_acc,
        final_test_acc: report.final_test_acc,
        mean_intra_class_variance: report.mean_intra_class_variance,
        intra_class_variance: report.intra_class_variance.clone(),
        manifold_skipped: report.manifold_skipped,
        final_total_loss: last.map_or(0.0, |r| r.total),
        final_ce_loss: last.map_or(0.0, |r| r.ce),
        final_manifold_loss: last.map_or(0.0, |r| r.manifold),
    };
    let summary_path = cfg.output_dir.join("summary.toml");
    let text = toml::to_string_pretty(&summary)
        .map_err(|e| StmError::Config(format!("serialize summary: {e}")))?;
    std::fs::write(&summary_path, text)?;

    println!("steps = {}", summary.steps);
    println!("final_train_acc = {}", summary.final_train_acc);
    if let Some(acc) = summary.final_test_acc {
        println!("final_test_acc = {acc}");
    }
    println!(
        "mean_intra_class_variance = {}",
        summary.mean_intra_class_variance
    );

    Ok(TrainOutputs {
        checkpoint,
        metrics,
        summary_path,
        summary,
        report,
    })
}

fn resolve_tap(cfg: &RunConfig, params: &NetworkParams) -> Result<usize> {
    let layers = params.num_layers();
    match cfg.network.tap_layer {
        0 => Ok(layers),
        t if t <= layers => Ok(t),
        t => Err(StmError::Config(format!(
            "tap layer {t} out of range 1..={layers}"
        ))),
    }
}

fn pick_split(
    train_data: Dataset,
    test_data: Option<Dataset>,
    split: SplitName,
) -> Result<Dataset> {
    match split {
        SplitName::Train => Ok(train_data),
        SplitName::Test => test_data
            .ok_or_else(|| StmError::Config("no test split is configured for this dataset".into())),
    }
}

/// Evaluate a checkpoint on the configured dataset; prints accuracy and
/// per-class error. Logit ties resolve to the lowest class index.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: SplitName) -> Result<f64> {
    let params = load_checkpoint(checkpoint)?;
    let (train_data, test_data) = cfg.build_datasets()?;
    let data = pick_split(train_data, test_data, split)?;
    if data.input_dim() != params.input_dim() {
        return Err(StmError::DimensionMismatch {
            op: "eval",
            details: format!(
                "checkpoint expects input dim {}, dataset has {}",
                params.input_dim(),
                data.input_dim()
            ),
        });
    }
    let tap = resolve_tap(cfg, &params)?;
    let eval = evaluate_model(&params, &data, tap)?;
    println!("accuracy = {}", eval.accuracy);
    for (class, err) in eval.per_class_error.iter().enumerate() {
        println!("class_error[{class}] = {err}");
    }
    Ok(eval.accuracy)
}

/// Dump manifold weights for one query sample against its class buffer as
/// CSV rows `buffer_index,distance,value`.
pub fn cmd_weights(cfg: &RunConfig, sample_override: Option<usize>) -> Result<PathBuf> {
    let (train_data, _) = cfg.build_datasets()?;
    let stm_cfg = cfg.stm_config();
    let index = sample_override.unwrap_or(cfg.weights.sample);
    if index >= train_data.len() {
        return Err(StmError::Config(format!(
            "weights.sample {index} out of range for {} samples",
            train_data.len()
        )));
    }
    let class = train_data.label(index);
    let query = train_data.sample_input(index);

    // The buffer holds the first k0 same-class samples, query excluded;
    // manifold weights depend only on raw inputs, features ride as zeros.
    let mut buffer = FeatureBuffer::new(
        train_data.class_count(),
        stm_cfg.k0,
        train_data.input_dim(),
        1,
    );
    let mut pushed = 0;
    for i in 0..train_data.len() {
        if i == index || train_data.label(i) != class {
            continue;
        }
        buffer.push(
            class,
            BufferEntry {
                raw_input: train_data.sample_input(i),
                cached_feature: crate::Matrix::zeros(1, 1),
                insertion_step: i,
            },
        )?;
        pushed += 1;
        if pushed == stm_cfg.k0 {
            break;
        }
    }
    if buffer.class_len(class) == 0 {
        return Err(StmError::InsufficientNeighbors(format!(
            "class {class} has no other samples"
        )));
    }

    let mut out = String::from("buffer_index,distance,value\n");
    match cfg.train.manifold {
        ManifoldName::Lle => {
            let k = stm_cfg.k_lle.min(buffer.class_len(class));
            let idx = knn_in_buffer(&buffer, class, &query, k)?;
            let raw: Vec<&crate::Matrix> = idx
                .iter()
                .map(|&i| &buffer.entry(class, i).raw_input)
                .collect();
            let weights = lle_weights(&query, &raw, stm_cfg.lle_reg_eps)?.with_indices(idx);
            for (&i, &w) in weights.neighbor_indices.iter().zip(&weights.coefficients) {
                let d = dist(&query, &buffer.entry(class, i).raw_input)?;
                writeln!(out, "{i},{d},{w}").expect("writing to string");
            }
        }
        ManifoldName::Laplacian => {
            let raw = buffer.raw_inputs(class);
            let bandwidth = if raw.len() >= 2 {
                median_bandwidth(&raw)?
            } else {
                1.0
            };
            let affinity = laplacian_affinity(&query, &raw, bandwidth)?;
            for (i, &b) in affinity.values().iter().enumerate() {
                let d = dist(&query, &buffer.entry(class, i).raw_input)?;
                writeln!(out, "{i},{d},{b}").expect("writing to string");
            }
        }
        ManifoldName::None => {
            return Err(StmError::Config(
                "train.manifold is 'none'; nothing to dump".into(),
            ));
        }
    }

    ensure_output_dir(cfg)?;
    let path = cfg.output_dir.join("weights.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}

pub struct TheoryOutputs {
    pub theorem1_csv: PathBuf,
    pub theorem2_csv: PathBuf,
    pub theorem1_rows: Vec<BoundCheckRow>,
    pub theorem2_report: Theorem2Report,
}

impl TheoryOutputs {
    pub fn all_hold(&self) -> bool {
        self.theorem1_rows.iter().all(|r| r.holds) && self.theorem2_report.all_hold()
    }
}

fn format_row(out: &mut String, prefix: &str, row: &BoundCheckRow) {
    if !prefix.is_empty() {
        write!(out, "{prefix},").expect("writing to string");
    }
    writeln!(
        out,
        "{},{},{},{},{}",
        row.lambda, row.empirical, row.bound, row.std_error, row.holds
    )
    .expect("writing to string");
}

/// Monte Carlo verification of both tail bounds; emits
/// `theory_theorem1.csv` and `theory_theorem2.csv`.
pub fn cmd_theory(cfg: &RunConfig) -> Result<TheoryOutputs> {
    let spec = cfg.chain_spec();
    let rows = verify_theorem1(&spec, &cfg.theory.lambdas, cfg.theory.trials)?;
    let vspec = cfg.vector_chain_spec()?;
    let report = verify_theorem2(&vspec, cfg.theory.trials)?;

    ensure_output_dir(cfg)?;
    let mut t1 = String::from("lambda,empirical,bound,std_error,holds\n");
    for row in &rows {
        format_row(&mut t1, "", row);
    }
    let theorem1_csv = cfg.output_dir.join("theory_theorem1.csv");
    std::fs::write(&theorem1_csv, &t1)?;

    let mut t2 = String::from("event,lambda,empirical,bound,std_error,holds\n");
    for (i, row) in report.coordinate_rows.iter().enumerate() {
        format_row(&mut t2, &format!("coord_{i}"), row);
    }
    format_row(&mut t2, "union", &report.union_row);
    let theorem2_csv = cfg.output_dir.join("theory_theorem2.csv");
    std::fs::write(&theorem2_csv, &t2)?;

    for row in &rows {
        println!(
            "theorem1 lambda={} empirical={} bound={} holds={}",
            row.lambda, row.empirical, row.bound, row.holds
        );
    }
    println!(
        "theorem2 union lambda={} empirical={} bound={} holds={}",
        report.union_row.lambda,
        report.union_row.empirical,
        report.union_row.bound,
        report.union_row.holds
    );

    Ok(TheoryOutputs {
        theorem1_csv,
        theorem2_csv,
        theorem1_rows: rows,
        theorem2_report: report,
    })
}

/// Dump tapped features for every sample of the chosen split as CSV rows
/// `sample_id,class,f0..`.
pub fn cmd_embed(cfg: &RunConfig, checkpoint: &Path, split: SplitName) -> Result<PathBuf> {
    let params = load_checkpoint(checkpoint)?;
    let (train_data, test_data) = cfg.build_datasets()?;
    let data = pick_split(train_data, test_data, split)?;
    let tap = resolve_tap(cfg, &params)?;

    let feature_dim = params.layer_dims()[tap];
    let mut out = String::from("sample_id,class");
    for d in 0..feature_dim {
        write!(out, ",f{d}").expect("writing to string");
    }
    out.push('\n');
    for i in 0..data.len() {
        let trace = forward(&params, &data.sample_input(i), tap)?;
        write!(out, "{i},{}", data.label(i)).expect("writing to string");
        for v in trace.tapped_feature.data() {
            write!(out, ",{v}").expect("writing to string");
        }
        out.push('\n');
    }

    ensure_output_dir(cfg)?;
    let path = cfg.output_dir.join("embed.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}

/// Generate the configured dataset and export one split as CSV.
pub fn cmd_gen_data(cfg: &RunConfig, out_path: &Path, split: SplitName) -> Result<()> {
    let (train_data, test_data) = cfg.build_datasets()?;
    let data = pick_split(train_data, test_data, split)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    export_csv(&data, &mut file)?;
    Ok(())
}
