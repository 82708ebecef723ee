//! Covariate residualization and reference-group standardization.
//!
//! Both transforms are fitted on the reference (CN) rows only and applied
//! to every row; the fitted parameters persist alongside checkpoints so
//! inference reuses them instead of refitting on new data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::{Error, Result};

/// Per-feature covariate slopes fitted on the reference rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub covariate_names: Vec<String>,
    /// `num_features x num_covariates`, slopes only (intercepts retained).
    pub slopes: Vec<Vec<f64>>,
}

impl ResidualModel {
    pub fn apply(&self, features: &Mat, covariates: &Mat) -> Result<Mat> {
        let c = self.covariate_names.len();
        covariates.check_cols("residualize covariates", c)?;
        if features.rows() != covariates.rows() {
            return Err(Error::shape(
                "residualize",
                format!("{} rows", features.rows()),
                format!("{} covariate rows", covariates.rows()),
            ));
        }
        if self.slopes.len() != features.cols() {
            return Err(Error::shape(
                "residualize",
                format!("{} features", self.slopes.len()),
                format!("{} features", features.cols()),
            ));
        }
        let mut out = features.clone();
        for i in 0..out.rows() {
            let cov = covariates.row(i);
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                let fitted: f64 = self.slopes[j]
                    .iter()
                    .zip(cov)
                    .map(|(&b, &c)| b * c)
                    .sum();
                *v -= fitted;
            }
        }
        Ok(out)
    }
}

/// Reference-group mean and standard deviation per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RefStats {
    pub fn apply(&self, features: &Mat) -> Result<Mat> {
        features.check_cols("standardize", self.mean.len())?;
        let mut out = features.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Solve the normal equations `(X^T X) b = X^T y` by Gaussian elimination
/// with partial pivoting. `X` is `n x p` (small `p`).
fn ols_solve(xtx: &mut [Vec<f64>], xty: &mut [f64]) -> Option<Vec<f64>> {
    let p = xty.len();
    let mut perm: Vec<usize> = (0..p).collect();
    for col in 0..p {
        let (pivot_row, pivot_val) = (col..p)
            .map(|r| (r, xtx[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot_val < 1e-10 {
            return None; // rank deficient at this column
        }
        xtx.swap(col, pivot_row);
        xty.swap(col, pivot_row);
        perm.swap(col, pivot_row);
        for r in col + 1..p {
            let f = xtx[r][col] / xtx[col][col];
            for c in col..p {
                xtx[r][c] -= f * xtx[col][c];
            }
            xty[r] -= f * xty[col];
        }
    }
    let mut b = vec![0.0; p];
    for r in (0..p).rev() {
        let mut v = xty[r];
        for c in r + 1..p {
            v -= xtx[r][c] * b[c];
        }
        b[r] = v / xtx[r][r];
    }
    Some(b)
}

/// OLS-residualize every feature against the covariates, with coefficients
/// estimated on the CN rows (intercept included in the fit, slopes only
/// subtracted). Returns the adjusted features and the fitted model.
pub fn residualize(
    features: &Mat,
    covariates: &Mat,
    covariate_names: &[String],
    cn_mask: &[bool],
) -> Result<(Mat, ResidualModel)> {
    let n = features.rows();
    if covariates.rows() != n || cn_mask.len() != n {
        return Err(Error::shape(
            "residualize",
            format!("{n} rows"),
            format!("{} covariate rows, {} mask entries", covariates.rows(), cn_mask.len()),
        ));
    }
    let c = covariates.cols();
    if covariate_names.len() != c {
        return Err(Error::InvalidArgument(format!(
            "{} covariate names for {} columns",
            covariate_names.len(),
            c
        )));
    }
    if c == 0 {
        return Ok((
            features.clone(),
            ResidualModel {
                covariate_names: vec![],
                slopes: vec![vec![]; features.cols()],
            },
        ));
    }
    let cn_rows: Vec<usize> = cn_mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i)
        .collect();
    if cn_rows.len() < c + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} CN rows to fit {} covariates",
            c + 1,
            c
        )));
    }

    // Design matrix [1, covariates] on CN rows; X^T X assembled once and
    // reused for every feature.
    let p = c + 1;
    let design: Vec<Vec<f64>> = cn_rows
        .iter()
        .map(|&i| {
            let mut row = Vec::with_capacity(p);
            row.push(1.0);
            row.extend_from_slice(covariates.row(i));
            row
        })
        .collect();
    let mut xtx_base = vec![vec![0.0; p]; p];
    for row in &design {
        for a in 0..p {
            for b in 0..p {
                xtx_base[a][b] += row[a] * row[b];
            }
        }
    }

    let mut slopes = Vec::with_capacity(features.cols());
    for j in 0..features.cols() {
        let mut xtx = xtx_base.clone();
        let mut xty = vec![0.0; p];
        for (row, &i) in design.iter().zip(&cn_rows) {
            let y = features.get(i, j);
            for a in 0..p {
                xty[a] += row[a] * y;
            }
        }
        match ols_solve(&mut xtx, &mut xty) {
            Some(beta) => slopes.push(beta[1..].to_vec()),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "covariates are collinear on the CN rows (columns {:?})",
                    covariate_names
                )))
            }
        }
    }

    let model = ResidualModel {
        covariate_names: covariate_names.to_vec(),
        slopes,
    };
    let adjusted = model.apply(features, covariates)?;
    Ok((adjusted, model))
}

/// Z-score every feature against the CN rows. Errors if any feature has
/// zero variance on the CN rows, naming the feature.
pub fn standardize(features: &Mat, cn_mask: &[bool]) -> Result<(Mat, RefStats)> {
    let n = features.rows();
    if cn_mask.len() != n {
        return Err(Error::shape(
            "standardize",
            format!("{n} rows"),
            format!("{} mask entries", cn_mask.len()),
        ));
    }
    let cn_rows: Vec<usize> = cn_mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i)
        .collect();
    if cn_rows.len() < 2 {
        return Err(Error::InvalidArgument("need at least two CN rows".into()));
    }
    let s = features.cols();
    let cn_n = cn_rows.len() as f64;
    let mut mean = vec![0.0; s];
    for &i in &cn_rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += features.get(i, j);
        }
    }
    for m in &mut mean {
        *m /= cn_n;
    }
    let mut std = vec![0.0; s];
    for &i in &cn_rows {
        for (j, v) in std.iter_mut().enumerate() {
            let d = features.get(i, j) - mean[j];
            *v += d * d;
        }
    }
    for (j, v) in std.iter_mut().enumerate() {
        *v = (*v / cn_n).sqrt();
        if *v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "feature {j} has zero variance on the CN rows"
            )));
        }
    }
    let stats = RefStats { mean, std };
    let out = stats.apply(features)?;
    Ok((out, stats))
}

/// The full fitted preprocessing chain, persisted next to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub residual: Option<ResidualModel>,
    pub stats: RefStats,
}

impl Preprocessor {
    /// Fit on a cohort (residualize if covariates are present, then
    /// standardize) and return the transformed features with the fitted
    /// chain.
    pub fn fit(
        features: &Mat,
        covariates: Option<(&Mat, &[String])>,
        cn_mask: &[bool],
    ) -> Result<(Mat, Preprocessor)> {
        let (adjusted, residual) = match covariates {
            Some((covs, names)) if covs.cols() > 0 => {
                let (adj, model) = residualize(features, covs, names, cn_mask)?;
                (adj, Some(model))
            }
            _ => (features.clone(), None),
        };
        let (scaled, stats) = standardize(&adjusted, cn_mask)?;
        Ok((scaled, Preprocessor { residual, stats }))
    }

    /// Apply the persisted chain to new rows.
    pub fn apply(&self, features: &Mat, covariates: Option<&Mat>) -> Result<Mat> {
        let adjusted = match (&self.residual, covariates) {
            (Some(model), Some(covs)) => model.apply(features, covs)?,
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "preprocessor was fitted with covariates but none were supplied".into(),
                ))
            }
            (None, _) => features.clone(),
        };
        self.stats.apply(&adjusted)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Preprocessor> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointFormat(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        num / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn zero_covariate_columns_change_nothing() {
        let f = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let covs = Mat::zeros(3, 0);
        let (adj, model) = residualize(&f, &covs, &[], &[true, true, false]).unwrap();
        assert_eq!(adj, f);
        assert!(model.covariate_names.is_empty());
    }

    #[test]
    fn exact_linear_dependence_becomes_constant_on_cn() {
        // feature = 3 + 2*cov on CN rows.
        let covs = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![10.0]]);
        let f = Mat::from_rows(&[vec![5.0], vec![7.0], vec![9.0], vec![100.0]]);
        let mask = [true, true, true, false];
        let (adj, model) =
            residualize(&f, &covs, &["age".into()], &mask).unwrap();
        assert!((model.slopes[0][0] - 2.0).abs() < 1e-9);
        for i in 0..3 {
            assert!((adj.get(i, 0) - 3.0).abs() < 1e-9, "row {i}: {}", adj.get(i, 0));
        }
        // PT row: same slope subtracted, intercept untouched.
        assert!((adj.get(3, 0) - (100.0 - 20.0)).abs() < 1e-9);
    }

    #[test]
    fn planted_effect_is_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let mut covs = Mat::zeros(n, 1);
        for v in covs.data_mut() {
            *v = 50.0 + 30.0 * rng.gen::<f64>();
        }
        let mut f = Mat::zeros(n, 2);
        for i in 0..n {
            let noise = crate::synthdata::standard_normal(&mut rng);
            f.set(i, 0, 10.0 + 2.0 * covs.get(i, 0) + noise);
            f.set(i, 1, 5.0 + 0.3 * crate::synthdata::standard_normal(&mut rng));
        }
        let mask = vec![true; n];
        let (adj, _) = residualize(&f, &covs, &["age".into()], &mask).unwrap();
        let r = corr(&adj.col(0), &covs.col(0));
        assert!(r.abs() < 0.01, "residual correlation {r}");
    }

    #[test]
    fn collinear_covariates_are_named() {
        let covs = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![4.0, 8.0]]);
        let f = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let mask = vec![true; 4];
        let err = residualize(&f, &covs, &["a".into(), "b".into()], &mask).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("collinear"), "{msg}");
        assert!(msg.contains('a') && msg.contains('b'), "{msg}");
    }

    #[test]
    fn standardize_centers_cn_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut f = Mat::zeros(50, 3);
        for v in f.data_mut() {
            *v = 5.0 + 3.0 * rng.gen::<f64>();
        }
        let mask: Vec<bool> = (0..50).map(|i| i < 30).collect();
        let (z, stats) = standardize(&f, &mask).unwrap();
        for j in 0..3 {
            let cn: Vec<f64> = (0..30).map(|i| z.get(i, j)).collect();
            let mean = cn.iter().sum::<f64>() / 30.0;
            let var = cn.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 30.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-12);
        }
        // A row equal to the CN mean maps to the zero vector.
        let probe = Mat::from_rows(&[stats.mean.clone()]);
        let out = stats.apply(&probe).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn persisted_stats_match_joint_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut f = Mat::zeros(40, 2);
        for v in f.data_mut() {
            *v = rng.gen::<f64>() * 7.0;
        }
        let mask: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let (z, stats) = standardize(&f, &mask).unwrap();
        let reapplied = stats.apply(&f).unwrap();
        assert_eq!(z, reapplied);
    }

    #[test]
    fn zero_variance_feature_is_named() {
        let f = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0]]);
        let err = standardize(&f, &[true, true, true]).unwrap_err();
        assert!(err.to_string().contains("feature 0"), "{err}");
    }

    #[test]
    fn preprocessor_round_trips_through_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut f = Mat::zeros(30, 2);
        for v in f.data_mut() {
            *v = rng.gen::<f64>() * 4.0 + 1.0;
        }
        let mut covs = Mat::zeros(30, 1);
        for v in covs.data_mut() {
            *v = rng.gen::<f64>() * 10.0;
        }
        let mask = vec![true; 30];
        let names = vec!["icv".to_string()];
        let (z, prep) = Preprocessor::fit(&f, Some((&covs, &names)), &mask).unwrap();
        let dir = std::env::temp_dir().join("rindex-prep-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("prep.json");
        prep.save(&path).unwrap();
        let loaded = Preprocessor::load(&path).unwrap();
        assert_eq!(prep, loaded);
        let reapplied = loaded.apply(&f, Some(&covs)).unwrap();
        assert_eq!(z, reapplied);
        // Missing covariates at apply time is an argument error.
        assert!(loaded.apply(&f, None).is_err());
    }
}
