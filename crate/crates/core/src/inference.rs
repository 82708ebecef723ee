//! Applying a trained model to new feature rows: preprocessing with the
//! persisted reference stats, index computation, and column alignment
//! against a reference model or ground truth.

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::metrics::pattern_c_index;
use crate::networks::ModelBundle;
use crate::preprocess::Preprocessor;
use crate::{Error, Result};

/// Per-subject severity indices with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RIndexMatrix {
    /// `n x M`, entries in `(0, 1)`.
    pub values: Mat,
    pub subject_ids: Vec<String>,
    /// Column permutation applied by [`align_to`], if any.
    pub permutation: Option<Vec<usize>>,
    /// Identifier of the producing checkpoint (path or tag).
    pub source: String,
}

impl Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.rows()).map(|i| self.row(i).to_vec()).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        if rows.is_empty() {
            return Ok(Mat::zeros(0, 0));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Mat::from_rows(&rows))
    }
}

impl RIndexMatrix {
    pub fn num_patterns(&self) -> usize {
        self.values.cols()
    }
}

/// Infer indices for already-preprocessed feature rows.
pub fn infer(bundle: &ModelBundle, features: &Mat) -> Result<RIndexMatrix> {
    features.check_cols("infer", bundle.num_features())?;
    let values = bundle.reconstruct_indices(features)?;
    Ok(RIndexMatrix {
        subject_ids: (0..values.rows()).map(|i| i.to_string()).collect(),
        values,
        permutation: None,
        source: String::new(),
    })
}

/// Infer indices for raw rows, applying the persisted preprocessing chain
/// first.
pub fn infer_raw(
    bundle: &ModelBundle,
    features: &Mat,
    preprocessor: &Preprocessor,
    covariates: Option<&Mat>,
) -> Result<RIndexMatrix> {
    let prepared = preprocessor.apply(features, covariates)?;
    infer(bundle, &prepared)
}

/// Columns permuted to best match `reference` (another model's indices or
/// planted truth), using the concordance-maximizing permutation.
pub fn align_to(r: &RIndexMatrix, reference: &Mat) -> Result<RIndexMatrix> {
    let alignment = pattern_c_index(&r.values, reference)?;
    if r.values.cols() != reference.cols() {
        return Err(Error::shape(
            "align_to",
            format!("{} columns", reference.cols()),
            format!("{} columns", r.values.cols()),
        ));
    }
    Ok(RIndexMatrix {
        values: r.values.permute_cols(&alignment.permutation),
        subject_ids: r.subject_ids.clone(),
        permutation: Some(alignment.permutation),
        source: r.source.clone(),
    })
}
