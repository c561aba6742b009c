//! Score files: the line-delimited JSON boundary through which an external
//! classifier hands per-image posteriors `p(g|i)` to the pipeline.
//!
//! ```text
//! {"format":"afford-scores/1","taxonomy":["lateral_tripod",...]}
//! {"image_id":"m1_0001","object":"rod","true_grasp":"thumb_2_finger","scores":[0.1,0.2,0.3,0.4]}
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::normalize_name;
use crate::io::write_atomic;
use crate::taxonomy::{GraspDistribution, GraspTaxonomy, TaxonomyError, BOUNDARY_SUM_TOL};

pub const SCORES_FORMAT: &str = "afford-scores/1";

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("line 1: missing {SCORES_FORMAT} header")]
    HeaderMissing,
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: image {image_id:?} has negative score {value} at index {index}")]
    NegativeScore {
        line: usize,
        image_id: String,
        index: usize,
        value: f64,
    },
    #[error("line {line}: duplicate image_id {image_id:?}")]
    DuplicateImageId { line: usize, image_id: String },
    #[error("logit {index} is not finite")]
    NonFinite { index: usize },
    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ParseMode {
    /// Reject records whose scores do not sum to one.
    #[default]
    Strict,
    /// Renormalize such records and count them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub image_id: String,
    pub object_name: String,
    pub true_grasp: Option<String>,
    pub scores: GraspDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub taxonomy: GraspTaxonomy,
    pub records: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScores {
    pub file: ScoreFile,
    /// Records renormalized in lenient mode.
    pub renormalized: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    taxonomy: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    image_id: String,
    object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_grasp: Option<String>,
    scores: Vec<f64>,
}

fn schema(line: usize, message: impl Into<String>) -> ScoreError {
    ScoreError::Schema {
        line,
        message: message.into(),
    }
}

impl ScoreFile {
    pub fn new(taxonomy: GraspTaxonomy) -> Self {
        Self {
            taxonomy,
            records: Vec::new(),
        }
    }

    pub fn parse_str(text: &str, mode: ParseMode) -> Result<ParsedScores, ScoreError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());

        let (_, first) = lines.next().ok_or(ScoreError::HeaderMissing)?;
        let header: Header = match serde_json::from_str::<serde_json::Value>(first) {
            Ok(v) if v.get("format").is_some() => {
                serde_json::from_value(v).map_err(|e| schema(1, format!("header: {e}")))?
            }
            _ => return Err(ScoreError::HeaderMissing),
        };
        if header.format != SCORES_FORMAT {
            return Err(schema(
                1,
                format!(
                    "format: expected {SCORES_FORMAT:?}, got {:?}",
                    header.format
                ),
            ));
        }
        let taxonomy =
            GraspTaxonomy::new(header.taxonomy).map_err(|e| schema(1, format!("taxonomy: {e}")))?;

        let mut seen = HashSet::new();
        let mut records = Vec::new();
        let mut renormalized = 0;
        for (line, raw) in lines {
            let rec: Line = serde_json::from_str(raw).map_err(|e| schema(line, e.to_string()))?;
            if rec.image_id.is_empty() {
                return Err(schema(line, "image_id is empty"));
            }
            if normalize_name(&rec.object).is_err() {
                return Err(schema(
                    line,
                    format!("image {:?}: object name is empty", rec.image_id),
                ));
            }
            if let Some(g) = &rec.true_grasp {
                if !taxonomy.contains(g) {
                    return Err(schema(
                        line,
                        format!(
                            "image {:?}: true_grasp {g:?} is not in the header taxonomy",
                            rec.image_id
                        ),
                    ));
                }
            }
            if rec.scores.len() != taxonomy.len() {
                return Err(schema(
                    line,
                    format!(
                        "image {:?}: {} scores for {} taxonomy labels",
                        rec.image_id,
                        rec.scores.len(),
                        taxonomy.len()
                    ),
                ));
            }
            if let Some((index, &value)) = rec.scores.iter().enumerate().find(|(_, s)| **s < 0.0) {
                return Err(ScoreError::NegativeScore {
                    line,
                    image_id: rec.image_id,
                    index,
                    value,
                });
            }
            let sum: f64 = rec.scores.iter().sum();
            let scores = if (sum - 1.0).abs() <= BOUNDARY_SUM_TOL {
                GraspDistribution::new(taxonomy.clone(), rec.scores)?
            } else {
                match mode {
                    ParseMode::Strict => {
                        return Err(schema(
                            line,
                            format!("image {:?}: scores sum to {sum}, expected 1", rec.image_id),
                        ))
                    }
                    ParseMode::Lenient => {
                        let d =
                            crate::taxonomy::normalize(&rec.scores, &taxonomy).map_err(|_| {
                                schema(line, format!("image {:?}: scores sum to 0", rec.image_id))
                            })?;
                        renormalized += 1;
                        d
                    }
                }
            };
            if !seen.insert(rec.image_id.clone()) {
                return Err(ScoreError::DuplicateImageId {
                    line,
                    image_id: rec.image_id,
                });
            }
            records.push(ScoreRecord {
                image_id: rec.image_id,
                object_name: rec.object,
                true_grasp: rec.true_grasp,
                scores,
            });
        }
        Ok(ParsedScores {
            file: ScoreFile { taxonomy, records },
            renormalized,
        })
    }

    pub fn load(path: &Path, mode: ParseMode) -> Result<ParsedScores, ScoreError> {
        Self::parse_str(&std::fs::read_to_string(path)?, mode)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: SCORES_FORMAT.into(),
            taxonomy: self.taxonomy.labels().to_vec(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let line = Line {
                image_id: r.image_id.clone(),
                object: r.object_name.clone(),
                true_grasp: r.true_grasp.clone(),
                scores: r.scores.probs().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ScoreError> {
        write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Temperature-scaled softmax of classifier logits.
pub fn from_logits(
    logits: &[f64],
    temperature: f64,
    taxonomy: &GraspTaxonomy,
) -> Result<GraspDistribution, ScoreError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ScoreError::InvalidTemperature(temperature));
    }
    if let Some(index) = logits.iter().position(|l| !l.is_finite()) {
        return Err(ScoreError::NonFinite { index });
    }
    if logits.len() != taxonomy.len() {
        return Err(TaxonomyError::LengthMismatch {
            expected: taxonomy.len(),
            actual: logits.len(),
        }
        .into());
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    Ok(crate::taxonomy::normalize(&weights, taxonomy)?)
}
