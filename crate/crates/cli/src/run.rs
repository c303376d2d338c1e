//! Training, evaluation, and sweep orchestration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use sqsnn_core::encoding::{encode_target, spikes_for_item, Dataset, EncoderConfig};
use sqsnn_core::error::{CoreError, Result};
use sqsnn_core::learning::{
    batch_indices, evaluate, local_item_gradient, surrogate_item_gradient, Counters, EvalReport,
    GradientAccumulator, TrainerConfig,
};
use sqsnn_core::network::{build_feedforward, GraphDoc, NetworkGraph, SpikeTrain};
use sqsnn_core::rng::{Purpose, RngFactory};
use sqsnn_core::Real;

use crate::config::{ExperimentConfig, TrainerKind};

pub const METRICS_SCHEMA: &str = "sqsnn-metrics-v1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Write a file atomically: temp sibling, then rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub iteration: u64,
    pub trainer: TrainerConfig,
    pub graph: GraphDoc,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub iterations: u64,
    pub final_loss: Real,
    pub best_test_accuracy: Real,
    pub final_test_accuracy: Real,
    pub final_train_accuracy: Real,
    pub spikes_per_step: Real,
    pub wall_time_s: Real,
}

struct MetricsRow {
    iteration: u64,
    loss: Real,
    train_acc: Real,
    test_acc: Real,
    spikes_per_step: Real,
}

fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {METRICS_SCHEMA}\n"));
    out.push_str("iteration,loss,train_acc,test_acc,mean_spikes_per_step\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.loss, r.train_acc, r.test_acc, r.spikes_per_step
        ));
    }
    out
}

/// One labeled example encoded for training.
fn training_pair(
    item_idx: usize,
    dataset: &Dataset,
    enc: &EncoderConfig,
    channels: usize,
    factory: &RngFactory,
    iteration: u64,
) -> Result<(SpikeTrain, SpikeTrain)> {
    let item = &dataset.items[item_idx];
    let mut rng = factory.stream(Purpose::Encode, &[iteration, item_idx as u64]);
    let input = spikes_for_item(item, enc, &mut rng)?;
    let target = encode_target(item.label, dataset.num_classes, enc.t_len, channels)?;
    Ok((input, target))
}

/// Mean gradient over a batch, items fanned out across the worker pool.
/// Reduction order is fixed by item position, so results are identical for
/// any thread count.
fn batch_gradient(
    graph: &NetworkGraph,
    pairs: &[(SpikeTrain, SpikeTrain)],
    kind: TrainerKind,
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    iteration: u64,
    counters: &Counters,
) -> Result<(GradientAccumulator, Real)> {
    let per_item: Vec<Result<(GradientAccumulator, Real)>> = pairs
        .par_iter()
        .enumerate()
        .map(|(slot, (input, target))| match kind {
            TrainerKind::Local => local_item_gradient(
                graph,
                input,
                target,
                tcfg,
                factory,
                &[iteration, slot as u64],
                counters,
            ),
            TrainerKind::Surrogate => surrogate_item_gradient(
                graph,
                input,
                target,
                tcfg,
                factory,
                &[iteration, slot as u64],
            ),
        })
        .collect();
    let mut total = GradientAccumulator::zeros(graph);
    let mut loss = 0.0;
    let n = pairs.len() as Real;
    for item in per_item {
        let (grad, item_loss) = item?;
        total.add_scaled(&grad, 1.0 / n);
        loss += item_loss / n;
    }
    Ok((total, loss))
}

pub struct TrainOutput {
    pub summary: Summary,
}

/// Full training run: builds the network, iterates updates, and writes
/// `metrics.csv`, `checkpoint.json`, and `summary.json` under the run
/// directory.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    let started = Instant::now();
    let seed = cfg.run.seed;
    let factory = RngFactory::new(seed);
    let (train_ds, test_ds) = cfg.datasets(seed)?;
    train_ds.validate()?;
    test_ds.validate()?;
    let enc = cfg.encoder();
    let spec = cfg.layered_spec(train_ds.input_dim, train_ds.num_classes);
    let mut graph = build_feedforward(&spec, &mut factory.stream(Purpose::Init, &[]))?;
    let channels = graph.neuron(graph.output()[0]).channels();
    let tcfg = &cfg.trainer.config;
    let counters = Counters::new();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers.max(1))
        .build()
        .map_err(|e| CoreError::config(format!("worker pool: {e}")))?;

    let mut rows = Vec::new();
    let mut best_test = 0.0;
    let mut last_train = 0.0;
    let mut last_test = 0.0;
    let mut last_spikes = 0.0;
    let mut last_loss = 0.0;
    for iteration in 0..cfg.run.iterations {
        let idxs = batch_indices(train_ds.items.len(), tcfg.batch_size, iteration, &factory);
        let pairs: Vec<(SpikeTrain, SpikeTrain)> = idxs
            .iter()
            .map(|&k| training_pair(k, &train_ds, &enc, channels, &factory, iteration))
            .collect::<Result<_>>()?;
        let (grad, loss) = pool.install(|| {
            batch_gradient(&graph, &pairs, cfg.trainer.kind, tcfg, &factory, iteration, &counters)
        })?;
        grad.apply(&mut graph, tcfg.lr_w, tcfg.lr_theta);
        last_loss = loss;
        let last_iteration = iteration + 1 == cfg.run.iterations;
        if (iteration + 1) % cfg.run.eval_every == 0 || last_iteration {
            let train_report = evaluate(&graph, &train_ds, &enc, &factory, iteration + 1)?;
            let test_report = evaluate(&graph, &test_ds, &enc, &factory, iteration + 1)?;
            last_train = train_report.accuracy;
            last_test = test_report.accuracy;
            last_spikes = test_report.spikes_per_step;
            if test_report.accuracy > best_test {
                best_test = test_report.accuracy;
            }
            rows.push(MetricsRow {
                iteration: iteration + 1,
                loss,
                train_acc: train_report.accuracy,
                test_acc: test_report.accuracy,
                spikes_per_step: test_report.spikes_per_step,
            });
        }
    }

    let summary = Summary {
        schema: 1,
        iterations: cfg.run.iterations,
        final_loss: last_loss,
        best_test_accuracy: best_test,
        final_test_accuracy: last_test,
        final_train_accuracy: last_train,
        spikes_per_step: last_spikes,
        wall_time_s: started.elapsed().as_secs_f64(),
    };

    let out = &cfg.run.out_dir;
    atomic_write(&out.join("metrics.csv"), render_metrics(&rows).as_bytes())?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        seed,
        iteration: cfg.run.iterations,
        trainer: tcfg.clone(),
        graph: graph.to_doc(),
    };
    atomic_write(
        &out.join("checkpoint.json"),
        serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes").as_bytes(),
    )?;
    atomic_write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
    )?;
    Ok(TrainOutput { summary })
}

/// Evaluate a checkpointed network on the configured test dataset; prints
/// and writes accuracy plus mean spikes per step.
pub fn eval(checkpoint_path: &Path, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let text = std::fs::read_to_string(checkpoint_path)
        .map_err(|e| CoreError::config(format!("cannot read checkpoint: {e}")))?;
    let doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CoreError::format(format!("checkpoint json: {e}")))?;
    let graph_doc: GraphDoc = serde_json::from_value(
        doc.get("graph")
            .cloned()
            .ok_or_else(|| CoreError::format("checkpoint lacks a graph"))?,
    )
    .map_err(|e| CoreError::format(format!("checkpoint graph: {e}")))?;
    let graph = NetworkGraph::from_doc(graph_doc)?;
    let (_, test_ds) = cfg.datasets(cfg.run.seed)?;
    if test_ds.input_dim != graph.input_dim() {
        return Err(CoreError::invalid(format!(
            "dataset has {} channels but the checkpointed network expects {}",
            test_ds.input_dim,
            graph.input_dim()
        )));
    }
    let enc = cfg.encoder();
    let factory = RngFactory::new(cfg.run.seed);
    let report = evaluate(&graph, &test_ds, &enc, &factory, u64::MAX)?;
    println!(
        "accuracy {} on {} items; mean spikes per step {}",
        report.accuracy, report.items, report.spikes_per_step
    );
    atomic_write(
        &cfg.run.out_dir.join("eval.json"),
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    Ok(report)
}

/// One training run per grid value, consolidated into `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, param: &str, values: &[Real]) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(CoreError::config("sweep grid is empty"));
    }
    let mut lines = vec![
        format!("# {METRICS_SCHEMA}-sweep"),
        "param,value,test_acc,mean_spikes_per_step".to_string(),
    ];
    for &value in values {
        let mut point = cfg.with_sweep_value(param, value)?;
        point.run.out_dir = cfg.run.out_dir.join(format!("{param}-{value}"));
        let out = train(&point)?;
        lines.push(format!(
            "{param},{value},{},{}",
            out.summary.final_test_accuracy, out.summary.spikes_per_step
        ));
    }
    let path = cfg.run.out_dir.join("sweep.csv");
    atomic_write(&path, (lines.join("\n") + "\n").as_bytes())?;
    Ok(path)
}
