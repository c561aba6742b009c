//! The three recognition pipelines (classifier only, affordance only, fused)
//! and precision/recall/accuracy evaluation over their predictions.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::affordance::{AffordanceDb, AffordanceError, UnknownPolicy};
use crate::par::Execution;
use crate::scores::ScoreFile;
use crate::taxonomy::{argmax_grasp, fuse, GraspDistribution, GraspTaxonomy, TaxonomyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum PipelineMode {
    /// Classifier posterior alone.
    Cnn,
    /// Object affordance alone.
    Affordance,
    /// Classifier posterior fused with the object affordance.
    Fused,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [
        PipelineMode::Cnn,
        PipelineMode::Affordance,
        PipelineMode::Fused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Cnn => "cnn",
            PipelineMode::Affordance => "affordance",
            PipelineMode::Fused => "fused",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source of the grasp prior `p(g)` divided out during fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum PriorMode {
    #[default]
    Uniform,
    /// Count-weighted marginal of the affordance database.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub prior: PriorMode,
    pub unknown: UnknownPolicy,
}

impl PipelineConfig {
    pub fn new(mode: PipelineMode) -> Self {
        Self {
            mode,
            prior: PriorMode::Uniform,
            unknown: UnknownPolicy::Error,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score taxonomy label {0:?} is not in the affordance database taxonomy")]
    FocusNotInDb(String),
    #[error("image {image_id:?}: unknown object {object:?}")]
    UnknownObject { image_id: String, object: String },
    #[error("fusion failed for {}: {}", failures[0].0, failures[0].1)]
    Fusion {
        failures: Vec<(String, TaxonomyError)>,
    },
    #[error("image {image_id:?}: {source}")]
    Affordance {
        image_id: String,
        source: AffordanceError,
    },
    #[error("missing true_grasp for {}", image_ids.join(", "))]
    MissingTruth { image_ids: Vec<String> },
    #[error("no predictions to evaluate")]
    Empty,
}

impl EvalError {
    /// Image ids of every failed fusion, in input order.
    pub fn failed_image_ids(&self) -> Vec<&str> {
        match self {
            EvalError::Fusion { failures } => failures.iter().map(|(id, _)| id.as_str()).collect(),
            EvalError::UnknownObject { image_id, .. } | EvalError::Affordance { image_id, .. } => {
                vec![image_id]
            }
            EvalError::MissingTruth { image_ids } => image_ids.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub mode: PipelineMode,
    /// The distribution the decision was taken from.
    pub dist: GraspDistribution,
    pub predicted: String,
    /// The affordance used was not the object's own stored histogram.
    pub fallback: bool,
}

enum RecordFailure {
    Lookup(AffordanceError),
    Fusion(TaxonomyError),
}

/// Runs one pipeline over every record, preserving input order.
pub fn run_pipeline(
    scores: &ScoreFile,
    db: &AffordanceDb,
    config: PipelineConfig,
    exec: Execution,
) -> Result<Vec<Prediction>, EvalError> {
    let focus = &scores.taxonomy;
    if let Some(l) = focus.labels().iter().find(|l| !db.taxonomy().contains(l)) {
        return Err(EvalError::FocusNotInDb(l.clone()));
    }
    let prior = match config.prior {
        PriorMode::Uniform => focus.uniform(),
        PriorMode::Marginal => {
            db.focus_marginal(focus)
                .map_err(|e| EvalError::FocusNotInDb(e.to_string()))?
                .dist
        }
    };

    let results = exec.map(&scores.records, |rec| {
        let (dist, fallback) = match config.mode {
            PipelineMode::Cnn => (rec.scores.clone(), false),
            PipelineMode::Affordance | PipelineMode::Fused => {
                let aff = db
                    .lookup(&rec.object_name, focus, config.unknown)
                    .map_err(RecordFailure::Lookup)?;
                let fallback = aff.fallback();
                if config.mode == PipelineMode::Affordance {
                    (aff.dist, fallback)
                } else {
                    let fused =
                        fuse(&rec.scores, &aff.dist, &prior).map_err(RecordFailure::Fusion)?;
                    (fused, fallback)
                }
            }
        };
        Ok(Prediction {
            image_id: rec.image_id.clone(),
            mode: config.mode,
            predicted: argmax_grasp(&dist).to_string(),
            dist,
            fallback,
        })
    });

    let mut predictions = Vec::with_capacity(results.len());
    let mut fusion_failures = Vec::new();
    for (rec, result) in scores.records.iter().zip(results) {
        match result {
            Ok(p) => predictions.push(p),
            Err(RecordFailure::Lookup(AffordanceError::UnknownObject(object))) => {
                return Err(EvalError::UnknownObject {
                    image_id: rec.image_id.clone(),
                    object,
                })
            }
            Err(RecordFailure::Lookup(source)) => {
                return Err(EvalError::Affordance {
                    image_id: rec.image_id.clone(),
                    source,
                })
            }
            Err(RecordFailure::Fusion(e)) => fusion_failures.push((rec.image_id.clone(), e)),
        }
    }
    if !fusion_failures.is_empty() {
        return Err(EvalError::Fusion {
            failures: fusion_failures,
        });
    }
    Ok(predictions)
}

/// Confusion matrix with Table-I style per-class metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub mode: PipelineMode,
    pub taxonomy: GraspTaxonomy,
    /// Rows are true labels, columns are predicted labels.
    pub confusion: Vec<Vec<u64>>,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    /// NaN when the class was never predicted.
    pub precision: f64,
    /// NaN when the class never occurs in the ground truth.
    pub recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn true_positives(&self, class: usize) -> u64 {
        self.confusion[class][class]
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.confusion.iter().map(|row| row[class]).sum()
    }

    pub fn truth_count(&self, class: usize) -> u64 {
        self.confusion[class].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.taxonomy.len())
            .map(|c| self.true_positives(c))
            .sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.true_positives(class), self.predicted_count(class))
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.true_positives(class), self.truth_count(class))
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.n)
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..self.taxonomy.len())
            .map(|c| ClassMetrics {
                precision: self.precision(c),
                recall: self.recall(c),
            })
            .collect()
    }

    pub fn to_json_value(&self) -> Value {
        let num = |x: f64| if x.is_nan() { Value::Null } else { json!(x) };
        let mut per_class = Map::new();
        for (c, label) in self.taxonomy.labels().iter().enumerate() {
            per_class.insert(
                label.clone(),
                json!({ "precision": num(self.precision(c)), "recall": num(self.recall(c)) }),
            );
        }
        json!({
            "mode": self.mode.as_str(),
            "n": self.n,
            "accuracy": num(self.accuracy()),
            "taxonomy": self.taxonomy.labels(),
            "per_class": per_class,
            "confusion": self.confusion,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

/// Tallies predictions against the ground truth carried by `scores`.
pub fn evaluate(preds: &[Prediction], scores: &ScoreFile) -> Result<EvalReport, EvalError> {
    let first = preds.first().ok_or(EvalError::Empty)?;
    let taxonomy = scores.taxonomy.clone();
    let truths: HashMap<&str, Option<&str>> = scores
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.true_grasp.as_deref()))
        .collect();

    let mut confusion = vec![vec![0u64; taxonomy.len()]; taxonomy.len()];
    let mut missing = Vec::new();
    for p in preds {
        let truth = truths
            .get(p.image_id.as_str())
            .copied()
            .flatten()
            .and_then(|t| taxonomy.index_of(t));
        let pred = taxonomy.index_of(&p.predicted);
        match (truth, pred) {
            (Some(t), Some(k)) => confusion[t][k] += 1,
            _ => missing.push(p.image_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingTruth { image_ids: missing });
    }
    Ok(EvalReport {
        mode: first.mode,
        taxonomy,
        confusion,
        n: preds.len() as u64,
    })
}

/// Two-decimal rendering, halves rounded away from zero; NaN stays "NaN".
pub fn format_metric(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{:.2}", (x * 100.0).round() / 100.0)
    }
}

/// Renders reports as rows of a precision/recall table, one row per report.
///
/// All reports must share one taxonomy.
pub fn render_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let labels = first.taxonomy.labels();
    let widths: Vec<usize> = labels.iter().map(|l| l.len().max(12) + 2).collect();
    let mut out = String::new();

    let _ = write!(out, "{:<12}", "grasp type");
    for (l, w) in labels.iter().zip(&widths) {
        let _ = write!(out, "{l:<w$}");
    }
    out.push_str("all\n");
    let _ = write!(out, "{:<12}", "");
    for w in &widths {
        let _ = write!(out, "{:<w$}", format!("{:<6}{}", "P", "R"));
    }
    out.push_str("acc\n");

    for r in reports {
        let _ = write!(out, "{:<12}", r.mode.as_str());
        for (c, w) in widths.iter().enumerate() {
            let cell = format!(
                "{:<6}{}",
                format_metric(r.precision(c)),
                format_metric(r.recall(c))
            );
            let _ = write!(out, "{cell:<w$}");
        }
        let _ = writeln!(out, "{}", format_metric(r.accuracy()));
    }
    out
}
