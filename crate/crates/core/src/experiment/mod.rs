//! End-to-end runs: build or load a graph, split it, train, evaluate and
//! write the run directory.

mod config;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{default_sbm, DataSource, ExperimentConfig, KEYS};

use crate::error::{Error, Result};
use crate::eval::{kmeans_feature_baseline, open_world_accuracy, OpenWorldMetrics};
use crate::graph::{
    generate_sbm, load_graph, make_open_world_split, write_edges_csv, AttributedGraph,
    OpenWorldSplit,
};
use crate::pan::{fit, Checkpoint, FitOutput, LossBreakdown, RefinementLog};
use crate::pseudo::EnsemblePrediction;

pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const PSEUDO_LABELS_FILE: &str = "pseudo_labels.csv";
pub const REFINED_EDGES_FILE: &str = "refined_edges.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub n_groups: usize,
    pub metrics: OpenWorldMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Vec<(String, String)>,
    pub true_class_count: usize,
    pub known_class_count: usize,
    pub epochs: usize,
    pub converged: bool,
    pub loss_history: Vec<LossBreakdown>,
    pub refinements: Vec<RefinementLog>,
    pub layers: Vec<LayerReport>,
    pub ensemble: OpenWorldMetrics,
    pub baseline: OpenWorldMetrics,
    /// Ensemble group per test node, aligned with the split's test nodes.
    pub test_nodes: Vec<usize>,
    pub test_predictions: Vec<usize>,
    pub wall_clock_secs: f64,
}

fn metrics_lines(s: &mut String, prefix: &str, m: &OpenWorldMetrics) {
    let _ = writeln!(s, "{prefix}acc_all = {}", m.acc_all);
    let _ = writeln!(s, "{prefix}acc_known = {}", m.acc_known);
    let _ = writeln!(s, "{prefix}acc_novel = {}", m.acc_novel);
    let _ = writeln!(
        s,
        "{prefix}predicted_class_count = {}",
        m.predicted_class_count
    );
    if let Some(e) = m.class_count_mae {
        let _ = writeln!(s, "{prefix}class_count_error = {e}");
    }
}

impl RunReport {
    /// Everything except timing; identical for identical configurations.
    pub fn metrics_text(&self) -> String {
        let mut s = String::new();
        metrics_lines(&mut s, "", &self.ensemble);
        let _ = writeln!(s, "true_class_count = {}", self.true_class_count);
        let _ = writeln!(s, "known_class_count = {}", self.known_class_count);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "converged = {}", self.converged);
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer.{l}.n_groups = {}", layer.n_groups);
            metrics_lines(&mut s, &format!("layer.{l}."), &layer.metrics);
        }
        metrics_lines(&mut s, "baseline.", &self.baseline);
        for (i, r) in self.refinements.iter().enumerate() {
            let _ = writeln!(
                s,
                "refinement.{i} = epoch {} confident {} recovered {} removed {} edges {} groups {}",
                r.epoch, r.confident, r.recovered, r.removed, r.edges_after, r.ensemble_groups
            );
        }
        if let Some(last) = self.loss_history.last() {
            let _ = writeln!(s, "final_loss = {}", last.total);
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.metrics_text();
        let _ = writeln!(s, "wall_clock_secs = {:.3}", self.wall_clock_secs);
        s
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,ce,reg,con,total\n");
        for (e, l) in self.loss_history.iter().enumerate() {
            let _ = writeln!(s, "{e},{},{},{},{}", l.ce, l.reg, l.con, l.total);
        }
        s
    }
}

/// Loads or generates the graph named by the configuration.
pub fn build_graph(cfg: &ExperimentConfig) -> Result<AttributedGraph> {
    match &cfg.data {
        DataSource::Sbm(spec) => Ok(generate_sbm(spec).map_err(|e| e.in_stage("generate"))?.0),
        DataSource::Path(dir) => load_graph(dir).map_err(|e| e.in_stage("load")),
    }
}

fn score(
    predictions: &[usize],
    g: &AttributedGraph,
    split: &OpenWorldSplit,
    n_groups: Option<usize>,
) -> Result<OpenWorldMetrics> {
    let test_pred: Vec<usize> = split.test_nodes.iter().map(|&i| predictions[i]).collect();
    score_test(&test_pred, g, split, n_groups)
}

fn score_test(
    test_pred: &[usize],
    g: &AttributedGraph,
    split: &OpenWorldSplit,
    n_groups: Option<usize>,
) -> Result<OpenWorldMetrics> {
    let truth: Vec<usize> = split
        .test_nodes
        .iter()
        .map(|&i| g.labels[i].ok_or(Error::invalid(format!("test node {i} has no label"))))
        .collect::<Result<_>>()?;
    let mut m = open_world_accuracy(test_pred, &truth, &split.known_classes)?;
    if let Some(n) = n_groups {
        m.predicted_class_count = n;
    }
    m.class_count_mae = Some(crate::eval::class_count_error(
        m.predicted_class_count as f64,
        split.all_classes.len() as f64,
    ));
    Ok(m)
}

/// Ensemble prediction of a trained model on every node.
pub fn ensemble_predictions(out: &FitOutput, eta: f64) -> Result<EnsemblePrediction> {
    EnsemblePrediction::from_layers(&out.layer_predictions(), eta)
        .map_err(|e| e.in_stage("ensemble"))
}

/// Runs one experiment. When `out_dir` is given the configuration echo,
/// report, loss curve, split, pseudo-labels, refined edges, predictions and
/// checkpoint are written there.
pub fn run(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    let g = build_graph(cfg)?;
    let split = make_open_world_split(
        &g,
        cfg.known_fraction,
        cfg.train_fraction,
        cfg.val_fraction,
        cfg.split_seed,
    )
    .map_err(|e| e.in_stage("split"))?;
    let out = fit(&g, &split, &cfg.fit).map_err(|e| e.in_stage("fit"))?;

    let ensemble = ensemble_predictions(&out, cfg.fit.eta)?;
    let hard = ensemble.hard_predictions();
    let test_predictions: Vec<usize> = split.test_nodes.iter().map(|&i| hard[i]).collect();
    let ensemble_metrics = score_test(&test_predictions, &g, &split, None)?;
    let layers = out
        .outputs
        .iter()
        .map(|o| {
            Ok(LayerReport {
                n_groups: o.n_groups(),
                metrics: score(&o.assignment().hard_predictions(), &g, &split, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline_pred = kmeans_feature_baseline(&g, &split, split.all_classes.len(), cfg.fit.seed)
        .map_err(|e| e.in_stage("baseline"))?;
    let baseline = score_test(&baseline_pred, &g, &split, None)?;

    let report = RunReport {
        config: cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        true_class_count: split.all_classes.len(),
        known_class_count: split.known_classes.len(),
        epochs: out.state.epoch,
        converged: out.state.converged,
        loss_history: out.state.loss_history.clone(),
        refinements: out.state.refinements.clone(),
        layers,
        ensemble: ensemble_metrics,
        baseline,
        test_nodes: split.test_nodes.clone(),
        test_predictions,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        write_run_dir(dir, cfg, &report, &split, &out)?;
    }
    Ok(report)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_run_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &RunReport,
    split: &OpenWorldSplit,
    out: &FitOutput,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    write(&dir.join(REPORT_FILE), &report.to_text())?;
    write(&dir.join(LOSS_FILE), &report.loss_csv())?;
    split.save(dir.join(SPLIT_FILE))?;
    let pseudo = out
        .state
        .pseudo_labels
        .as_ref()
        .map(|c| c.to_csv())
        .unwrap_or_default();
    write(&dir.join(PSEUDO_LABELS_FILE), &pseudo)?;
    write_edges_csv(out.edges(), dir.join(REFINED_EDGES_FILE))?;
    let mut preds = String::new();
    for (i, p) in report.test_nodes.iter().zip(&report.test_predictions) {
        let _ = writeln!(preds, "{i},{p}");
    }
    write(&dir.join(PREDICTIONS_FILE), &preds)?;
    Checkpoint::new(
        out.stack.clone(),
        out.state.best_n.clone(),
        out.edges().clone(),
    )
    .save(&dir.join(CHECKPOINT_FILE))
}

/// Hyperparameters that can be swept, with their configuration keys.
pub const SWEEP_PARAMS: &[(&str, &str)] = &[
    ("n_pro", "model.n_pro"),
    ("gamma", "pseudo.gamma"),
    ("mu", "refine.mu"),
    ("layers", "model.layers"),
    ("eta", "pseudo.eta"),
];

/// One run per value of `param`, all other settings shared. Run `k` writes
/// to `out_dir/<param>=<value>` when `out_dir` is given.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[String],
    out_dir: Option<&Path>,
) -> Result<Vec<(String, RunReport)>> {
    let Some(&(_, key)) = SWEEP_PARAMS.iter().find(|(name, _)| *name == param) else {
        let names: Vec<_> = SWEEP_PARAMS.iter().map(|p| p.0).collect();
        return Err(Error::invalid(format!(
            "unknown sweep parameter {param:?}; expected one of {names:?}"
        )));
    };
    let mut reports = Vec::with_capacity(values.len());
    for value in values {
        let mut c = cfg.clone();
        c.set(key, value)?;
        let dir = out_dir.map(|d| d.join(format!("{param}={value}")));
        let report = run(&c, dir.as_deref())?;
        reports.push((value.clone(), report));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("sweep.csv"), &sweep_table(param, &reports))?;
    }
    Ok(reports)
}

/// Comparison table of a sweep, one CSV row per value.
pub fn sweep_table(param: &str, reports: &[(String, RunReport)]) -> String {
    let mut s =
        format!("{param},acc_all,acc_known,acc_novel,predicted_class_count,baseline_acc_all\n");
    for (v, r) in reports {
        let _ = writeln!(
            s,
            "{v},{},{},{},{},{}",
            r.ensemble.acc_all,
            r.ensemble.acc_known,
            r.ensemble.acc_novel,
            r.ensemble.predicted_class_count,
            r.baseline.acc_all
        );
    }
    s
}
