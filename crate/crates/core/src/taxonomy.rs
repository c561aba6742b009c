//! Grasp taxonomies, distributions over them, and the posterior fusion rule.
//!
//! A [`GraspTaxonomy`] fixes the label order that every probability vector in
//! the crate is laid out against. [`fuse`] combines an image posterior
//! `p(g|i)` with an object affordance `p(g|o)` by dividing out the shared
//! prior `p(g)`, which under conditional independence of image and object
//! given the grasp yields `p(g|i,o)` up to normalization.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Labels of the four-type focus taxonomy, in canonical order.
pub const FOCUS_LABELS: [&str; 4] = [
    "lateral_tripod",
    "medium_wrap",
    "power_sphere",
    "thumb_2_finger",
];

/// Tolerance on the total mass of a distribution handed across module boundaries.
pub const BOUNDARY_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy has no labels")]
    EmptyTaxonomy,
    #[error("duplicate grasp label {0:?} in taxonomy")]
    DuplicateLabel(String),
    #[error("grasp label must not be empty")]
    EmptyLabel,
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("weights sum to zero")]
    AllZero,
    #[error("entry {index} is {value}, expected a finite non-negative number")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("distributions are over different taxonomies")]
    TaxonomyMismatch,
    #[error("prior is zero at {label:?} but both cues give it positive mass")]
    InconsistentPrior { label: String },
    #[error("cues have disjoint support; fused distribution is all zero")]
    DegenerateFusion,
    #[error("selected labels carry zero probability mass")]
    ZeroSubsetMass,
    #[error("unknown grasp label {0:?}")]
    UnknownLabel(String),
}

/// An ordered set of unique grasp-type labels.
///
/// Cloning is cheap; clones share the label storage.
#[derive(Clone)]
pub struct GraspTaxonomy {
    inner: Arc<TaxonomyInner>,
}

struct TaxonomyInner {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl GraspTaxonomy {
    pub fn new<I, S>(labels: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(TaxonomyError::EmptyTaxonomy);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(TaxonomyError::EmptyLabel);
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self {
            inner: Arc::new(TaxonomyInner { labels, index }),
        })
    }

    /// `[lateral_tripod, medium_wrap, power_sphere, thumb_2_finger]`.
    pub fn focus() -> Self {
        Self::new(FOCUS_LABELS).expect("focus labels are valid")
    }

    pub fn labels(&self) -> &[String] {
        &self.inner.labels
    }

    pub fn len(&self) -> usize {
        self.inner.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.inner.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.inner.labels[index]
    }

    pub fn contains(&self, label: &str) -> bool {
        self.inner.index.contains_key(label)
    }

    /// True when every label of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &GraspTaxonomy) -> bool {
        self.labels().iter().all(|l| other.contains(l))
    }

    pub fn uniform(&self) -> GraspDistribution {
        let p = 1.0 / self.len() as f64;
        GraspDistribution {
            taxonomy: self.clone(),
            probs: vec![p; self.len()],
        }
    }

    /// All-mass-on-one-label distribution.
    pub fn one_hot(&self, label: &str) -> Result<GraspDistribution, TaxonomyError> {
        let k = self
            .index_of(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))?;
        let mut probs = vec![0.0; self.len()];
        probs[k] = 1.0;
        Ok(GraspDistribution {
            taxonomy: self.clone(),
            probs,
        })
    }
}

impl PartialEq for GraspTaxonomy {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.labels == other.inner.labels
    }
}

impl Eq for GraspTaxonomy {}

impl fmt::Debug for GraspTaxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("GraspTaxonomy")
            .field(&self.inner.labels)
            .finish()
    }
}

/// A probability vector laid out against a taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspDistribution {
    taxonomy: GraspTaxonomy,
    probs: Vec<f64>,
}

impl GraspDistribution {
    /// Wraps an already-normalized vector, checking the boundary invariants.
    pub fn new(taxonomy: GraspTaxonomy, probs: Vec<f64>) -> Result<Self, TaxonomyError> {
        check_weights(&probs, &taxonomy)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > BOUNDARY_SUM_TOL {
            return Err(TaxonomyError::NotNormalized(sum));
        }
        Ok(Self { taxonomy, probs })
    }

    pub fn taxonomy(&self) -> &GraspTaxonomy {
        &self.taxonomy
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability assigned to `label`, if the label is in the taxonomy.
    pub fn get(&self, label: &str) -> Option<f64> {
        self.taxonomy.index_of(label).map(|k| self.probs[k])
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &GraspDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_weights(weights: &[f64], taxonomy: &GraspTaxonomy) -> Result<(), TaxonomyError> {
    if weights.len() != taxonomy.len() {
        return Err(TaxonomyError::LengthMismatch {
            expected: taxonomy.len(),
            actual: weights.len(),
        });
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(TaxonomyError::InvalidEntry { index, value });
        }
    }
    Ok(())
}

/// Scales non-negative weights to sum to one.
pub fn normalize(
    weights: &[f64],
    taxonomy: &GraspTaxonomy,
) -> Result<GraspDistribution, TaxonomyError> {
    check_weights(weights, taxonomy)?;
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(TaxonomyError::AllZero);
    }
    if !sum.is_finite() {
        // Rescale by the largest entry first so the sum cannot overflow.
        let max = weights.iter().copied().fold(0.0, f64::max);
        let scaled: Vec<f64> = weights.iter().map(|w| w / max).collect();
        return normalize(&scaled, taxonomy);
    }
    Ok(GraspDistribution {
        taxonomy: taxonomy.clone(),
        probs: weights.iter().map(|w| w / sum).collect(),
    })
}

fn check_same_taxonomy(dists: &[&GraspDistribution]) -> Result<(), TaxonomyError> {
    let first = &dists[0].taxonomy;
    if dists.iter().all(|d| &d.taxonomy == first) {
        Ok(())
    } else {
        Err(TaxonomyError::TaxonomyMismatch)
    }
}

/// Validates the zero pattern shared by both fusion routes and returns, per
/// label, whether it contributes to the fused result.
fn fusion_support(
    image: &GraspDistribution,
    object: &GraspDistribution,
    prior: &GraspDistribution,
) -> Result<Vec<bool>, TaxonomyError> {
    check_same_taxonomy(&[image, object, prior])?;
    let mut support = Vec::with_capacity(image.len());
    for k in 0..image.len() {
        let live = image.probs[k] > 0.0 && object.probs[k] > 0.0;
        if live && prior.probs[k] == 0.0 {
            return Err(TaxonomyError::InconsistentPrior {
                label: image.taxonomy.label(k).to_string(),
            });
        }
        support.push(live);
    }
    if !support.iter().any(|&s| s) {
        return Err(TaxonomyError::DegenerateFusion);
    }
    Ok(support)
}

/// Fuses an image posterior with an object affordance:
/// `p(g|i,o) ∝ p(g|i) · p(g|o) / p(g)`.
///
/// Products are accumulated in the log domain. A zero in either cue removes
/// that label from the result.
pub fn fuse(
    image: &GraspDistribution,
    object: &GraspDistribution,
    prior: &GraspDistribution,
) -> Result<GraspDistribution, TaxonomyError> {
    let support = fusion_support(image, object, prior)?;
    let logs: Vec<Option<f64>> = support
        .iter()
        .enumerate()
        .map(|(k, &live)| {
            live.then(|| image.probs[k].ln() + object.probs[k].ln() - prior.probs[k].ln())
        })
        .collect();
    let max = logs
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs
        .iter()
        .map(|l| l.map_or(0.0, |v| (v - max).exp()))
        .collect();
    normalize(&weights, &image.taxonomy)
}

/// Same rule as [`fuse`], evaluated with plain multiplication.
///
/// Underflows for very small entries; kept as a cross-check of the log route.
pub fn fuse_linear(
    image: &GraspDistribution,
    object: &GraspDistribution,
    prior: &GraspDistribution,
) -> Result<GraspDistribution, TaxonomyError> {
    let support = fusion_support(image, object, prior)?;
    let weights: Vec<f64> = support
        .iter()
        .enumerate()
        .map(|(k, &live)| {
            if live {
                image.probs[k] * object.probs[k] / prior.probs[k]
            } else {
                0.0
            }
        })
        .collect();
    normalize(&weights, &image.taxonomy).map_err(|e| match e {
        TaxonomyError::AllZero => TaxonomyError::DegenerateFusion,
        other => other,
    })
}

/// Index of the most probable label; ties go to the smallest index.
pub fn argmax_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

/// Most probable grasp label; ties go to the label listed first in the taxonomy.
pub fn argmax_grasp(dist: &GraspDistribution) -> &str {
    dist.taxonomy.label(argmax_index(&dist.probs))
}

/// Projects `dist` onto the labels of `subset` and renormalizes.
pub fn restrict(
    dist: &GraspDistribution,
    subset: &GraspTaxonomy,
) -> Result<GraspDistribution, TaxonomyError> {
    let mut weights = Vec::with_capacity(subset.len());
    for label in subset.labels() {
        let k = dist
            .taxonomy
            .index_of(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.clone()))?;
        weights.push(dist.probs[k]);
    }
    normalize(&weights, subset).map_err(|e| match e {
        TaxonomyError::AllZero => TaxonomyError::ZeroSubsetMass,
        other => other,
    })
}
