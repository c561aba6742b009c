//! Object affordance database: per-object grasp histograms and their
//! normalized distributions `p(g|o)`.
//!
//! Histograms are stored over the full taxonomy the records were labelled
//! with. Lookups project onto a smaller focus taxonomy and renormalize.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::taxonomy::{normalize, restrict, GraspDistribution, GraspTaxonomy, TaxonomyError};

pub const DB_FORMAT: &str = "afford-db/1";

#[derive(Debug, Error)]
pub enum AffordanceError {
    #[error("object name is empty after normalization")]
    EmptyName,
    #[error("no records")]
    EmptyInput,
    #[error("record {record}: object name is empty")]
    EmptyObjectName { record: usize },
    #[error("record {record}: unknown grasp label {label:?} for object {object:?}")]
    UnknownGraspLabel {
        record: usize,
        object: String,
        label: String,
    },
    #[error("smoothing alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("focus label {0:?} is not in the database taxonomy")]
    FocusNotSubset(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("taxonomy mismatch at {field}: expected {expected} entries, got {actual}")]
    TaxonomyMismatch {
        field: String,
        expected: usize,
        actual: usize,
    },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical object key: lower-cased, trimmed, inner whitespace runs joined by `_`.
pub fn normalize_name(raw: &str) -> Result<String, AffordanceError> {
    let name = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_");
    if name.is_empty() {
        Err(AffordanceError::EmptyName)
    } else {
        Ok(name)
    }
}

/// One labelled observation: an object was grasped with a given grasp type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffordanceRecord {
    pub object_name: String,
    pub grasp_label: String,
}

impl AffordanceRecord {
    pub fn new(object_name: impl Into<String>, grasp_label: impl Into<String>) -> Self {
        Self {
            object_name: object_name.into(),
            grasp_label: grasp_label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceEntry {
    pub counts: Vec<u64>,
    pub prob: GraspDistribution,
}

/// What to return for an object the database has never seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum UnknownPolicy {
    #[default]
    Error,
    Uniform,
    Marginal,
}

/// Where a looked-up affordance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffordanceSource {
    /// The object's stored histogram, projected onto the focus labels.
    Stored,
    /// Object unknown; uniform over the focus labels.
    UnknownUniform,
    /// Object unknown; the database marginal projected onto the focus labels.
    UnknownMarginal,
    /// The projection carried no mass, so uniform over the focus labels was used.
    ZeroMassFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affordance {
    pub dist: GraspDistribution,
    pub source: AffordanceSource,
}

impl Affordance {
    /// True whenever the distribution is not the object's own stored histogram.
    pub fn fallback(&self) -> bool {
        self.source != AffordanceSource::Stored
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceDb {
    taxonomy: GraspTaxonomy,
    alpha: f64,
    entries: BTreeMap<String, AffordanceEntry>,
    marginal: GraspDistribution,
}

fn smoothed(
    counts: &[u64],
    alpha: f64,
    taxonomy: &GraspTaxonomy,
) -> Result<GraspDistribution, TaxonomyError> {
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 + alpha).collect();
    normalize(&weights, taxonomy)
}

impl AffordanceDb {
    /// Tallies grasp histograms per normalized object name.
    pub fn build(
        records: &[AffordanceRecord],
        taxonomy: &GraspTaxonomy,
        alpha: f64,
    ) -> Result<Self, AffordanceError> {
        if records.is_empty() {
            return Err(AffordanceError::EmptyInput);
        }
        let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for (record, r) in records.iter().enumerate() {
            let name = normalize_name(&r.object_name)
                .map_err(|_| AffordanceError::EmptyObjectName { record })?;
            let k = taxonomy.index_of(&r.grasp_label).ok_or_else(|| {
                AffordanceError::UnknownGraspLabel {
                    record,
                    object: r.object_name.clone(),
                    label: r.grasp_label.clone(),
                }
            })?;
            counts
                .entry(name)
                .or_insert_with(|| vec![0; taxonomy.len()])[k] += 1;
        }
        Self::from_counts(taxonomy.clone(), alpha, counts)
    }

    /// Assembles a database from raw histograms, recomputing every distribution.
    pub fn from_counts(
        taxonomy: GraspTaxonomy,
        alpha: f64,
        counts: BTreeMap<String, Vec<u64>>,
    ) -> Result<Self, AffordanceError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(AffordanceError::InvalidAlpha(alpha));
        }
        if counts.is_empty() {
            return Err(AffordanceError::EmptyInput);
        }
        let mut total = vec![0u64; taxonomy.len()];
        let mut entries = BTreeMap::new();
        for (name, c) in counts {
            if c.len() != taxonomy.len() {
                return Err(AffordanceError::TaxonomyMismatch {
                    field: format!("objects.{name}.counts"),
                    expected: taxonomy.len(),
                    actual: c.len(),
                });
            }
            for (t, &x) in total.iter_mut().zip(&c) {
                *t += x;
            }
            let prob = smoothed(&c, alpha, &taxonomy).map_err(|_| {
                AffordanceError::Schema(format!("objects.{name}: no counts and alpha is 0"))
            })?;
            entries.insert(name, AffordanceEntry { counts: c, prob });
        }
        let marginal = smoothed(&total, alpha, &taxonomy)
            .map_err(|_| AffordanceError::Schema("all counts are zero and alpha is 0".into()))?;
        Ok(Self {
            taxonomy,
            alpha,
            entries,
            marginal,
        })
    }

    pub fn taxonomy(&self) -> &GraspTaxonomy {
        &self.taxonomy
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn marginal(&self) -> &GraspDistribution {
        &self.marginal
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries keyed by normalized object name, in name order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &AffordanceEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Stored entry for a raw (not yet normalized) object name.
    pub fn get(&self, object_name: &str) -> Option<&AffordanceEntry> {
        normalize_name(object_name)
            .ok()
            .and_then(|n| self.entries.get(&n))
    }

    /// The marginal projected onto `focus`, uniform if the projection is empty.
    pub fn focus_marginal(&self, focus: &GraspTaxonomy) -> Result<Affordance, AffordanceError> {
        self.check_focus(focus)?;
        Ok(project(
            &self.marginal,
            focus,
            AffordanceSource::UnknownMarginal,
        )?)
    }

    fn check_focus(&self, focus: &GraspTaxonomy) -> Result<(), AffordanceError> {
        match focus.labels().iter().find(|l| !self.taxonomy.contains(l)) {
            Some(l) => Err(AffordanceError::FocusNotSubset(l.clone())),
            None => Ok(()),
        }
    }

    /// Affordance `p(g|o)` for `object_name` over the `focus` labels.
    pub fn lookup(
        &self,
        object_name: &str,
        focus: &GraspTaxonomy,
        policy: UnknownPolicy,
    ) -> Result<Affordance, AffordanceError> {
        self.check_focus(focus)?;
        match self.get(object_name) {
            Some(entry) => Ok(project(&entry.prob, focus, AffordanceSource::Stored)?),
            None => match policy {
                UnknownPolicy::Error => {
                    Err(AffordanceError::UnknownObject(object_name.to_string()))
                }
                UnknownPolicy::Uniform => Ok(Affordance {
                    dist: focus.uniform(),
                    source: AffordanceSource::UnknownUniform,
                }),
                UnknownPolicy::Marginal => Ok(project(
                    &self.marginal,
                    focus,
                    AffordanceSource::UnknownMarginal,
                )?),
            },
        }
    }

    pub fn to_json(&self) -> String {
        let file = DbFile {
            format: DB_FORMAT.to_string(),
            taxonomy: self.taxonomy.labels().to_vec(),
            alpha: self.alpha,
            objects: self
                .entries
                .iter()
                .map(|(name, e)| {
                    (
                        name.clone(),
                        ObjectFile {
                            counts: e.counts.iter().map(|&c| c as i64).collect(),
                            prob: Some(e.prob.probs().to_vec()),
                        },
                    )
                })
                .collect(),
            marginal: Some(self.marginal.probs().to_vec()),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("db serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, AffordanceError> {
        let file: DbFile = serde_json::from_str(text).map_err(|e| {
            AffordanceError::Schema(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        if file.format != DB_FORMAT {
            return Err(AffordanceError::Schema(format!(
                "format: expected {DB_FORMAT:?}, got {:?}",
                file.format
            )));
        }
        let taxonomy = GraspTaxonomy::new(file.taxonomy)
            .map_err(|e| AffordanceError::Schema(format!("taxonomy: {e}")))?;
        if !file.alpha.is_finite() || file.alpha < 0.0 {
            return Err(AffordanceError::Schema(format!(
                "alpha: {} is not >= 0",
                file.alpha
            )));
        }
        let n = taxonomy.len();
        let check_len = |field: String, actual: usize| {
            if actual == n {
                Ok(())
            } else {
                Err(AffordanceError::TaxonomyMismatch {
                    field,
                    expected: n,
                    actual,
                })
            }
        };
        if let Some(m) = &file.marginal {
            check_len("marginal".into(), m.len())?;
        }
        let mut counts = BTreeMap::new();
        for (name, obj) in file.objects {
            let key = normalize_name(&name)
                .map_err(|_| AffordanceError::Schema("objects: empty object name".into()))?;
            if key != name {
                return Err(AffordanceError::Schema(format!(
                    "objects.{name}: name is not normalized (expected {key:?})"
                )));
            }
            check_len(format!("objects.{name}.counts"), obj.counts.len())?;
            if let Some(p) = &obj.prob {
                check_len(format!("objects.{name}.prob"), p.len())?;
            }
            let mut c = Vec::with_capacity(n);
            for (k, &x) in obj.counts.iter().enumerate() {
                if x < 0 {
                    return Err(AffordanceError::Schema(format!(
                        "objects.{name}.counts[{k}]: negative count {x}"
                    )));
                }
                c.push(x as u64);
            }
            counts.insert(name, c);
        }
        Self::from_counts(taxonomy, file.alpha, counts)
    }

    pub fn save(&self, path: &Path) -> Result<(), AffordanceError> {
        write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AffordanceError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

fn project(
    dist: &GraspDistribution,
    focus: &GraspTaxonomy,
    source: AffordanceSource,
) -> Result<Affordance, TaxonomyError> {
    match restrict(dist, focus) {
        Ok(dist) => Ok(Affordance { dist, source }),
        Err(TaxonomyError::ZeroSubsetMass) => Ok(Affordance {
            dist: focus.uniform(),
            source: AffordanceSource::ZeroMassFallback,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbFile {
    format: String,
    taxonomy: Vec<String>,
    alpha: f64,
    objects: BTreeMap<String, ObjectFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marginal: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    counts: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<Vec<f64>>,
}

/// Reads `object,grasp` records from CSV, pairing each with its 1-based line number.
pub fn read_records_csv<R: Read>(
    mut reader: R,
) -> Result<Vec<(u64, AffordanceRecord)>, AffordanceError> {
    let mut text = Vec::new();
    reader.read_to_end(&mut text)?;
    // The csv crate does not count skipped blank lines, so derive line numbers from byte offsets.
    let line_at = |byte: u64| {
        let mut at = byte as usize;
        while at < text.len() && matches!(text[at], b'\n' | b'\r') {
            at += 1;
        }
        1 + text[..at].iter().filter(|&&b| b == b'\n').count() as u64
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| AffordanceError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(obj_col), Some(grasp_col)) = (col("object"), col("grasp")) else {
        return Err(AffordanceError::Csv {
            line: 1,
            message: "header must contain `object` and `grasp` columns".into(),
        });
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| AffordanceError::Csv {
            line: e.position().map_or(0, |p| line_at(p.byte())),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| line_at(p.byte()));
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        out.push((
            line,
            AffordanceRecord::new(field(obj_col), field(grasp_col)),
        ));
    }
    Ok(out)
}

/// Writes records as `object,grasp` CSV.
pub fn write_records_csv<W: Write>(
    writer: W,
    records: &[AffordanceRecord],
) -> Result<(), AffordanceError> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| AffordanceError::Csv {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["object", "grasp"]).map_err(csv_err)?;
    for r in records {
        w.write_record([&r.object_name, &r.grasp_label])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
