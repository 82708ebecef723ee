//! Cohort container and the text formats it travels in.
//!
//! A cohort CSV has a header row and the columns
//! `subject_id, group, <covariates...>, vol_000..vol_{S-1}`; feature
//! columns are recognised by the `vol_` prefix, anything between `group`
//! and the first feature column is a covariate. Ground-truth severities
//! live in a sibling CSV keyed by subject id. Numbers are written with 12
//! significant digits, which round-trips losslessly through `f64`.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::mat::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Cn,
    Pt,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Cn => write!(f, "CN"),
            Group::Pt => write!(f, "PT"),
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CN" => Ok(Group::Cn),
            "PT" => Ok(Group::Pt),
            other => Err(Error::Data(format!("unknown group label {other:?}"))),
        }
    }
}

/// Labeled feature matrix with optional covariates and, for synthetic
/// cohorts, planted severity ground truth aligned to the PT rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub groups: Vec<Group>,
    pub features: Mat,
    pub covariate_names: Vec<String>,
    pub covariates: Option<Mat>,
    /// One row per PT row, in PT row order.
    pub truth: Option<Mat>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.ids.len() != n || self.groups.len() != n {
            return Err(Error::Data(format!(
                "row bookkeeping mismatch: {} features, {} ids, {} groups",
                n,
                self.ids.len(),
                self.groups.len()
            )));
        }
        if let Some(c) = &self.covariates {
            if c.rows() != n || c.cols() != self.covariate_names.len() {
                return Err(Error::Data("covariate matrix shape mismatch".into()));
            }
        }
        if let Some(t) = &self.truth {
            if t.rows() != self.pt_indices().len() {
                return Err(Error::Data(format!(
                    "truth has {} rows but dataset has {} PT rows",
                    t.rows(),
                    self.pt_indices().len()
                )));
            }
        }
        Ok(())
    }

    pub fn cn_indices(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == Group::Cn)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn pt_indices(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == Group::Pt)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cn_mask(&self) -> Vec<bool> {
        self.groups.iter().map(|g| *g == Group::Cn).collect()
    }

    pub fn cn_features(&self) -> Mat {
        self.features.gather_rows(&self.cn_indices())
    }

    pub fn pt_features(&self) -> Mat {
        self.features.gather_rows(&self.pt_indices())
    }

    pub fn pt_ids(&self) -> Vec<String> {
        self.pt_indices()
            .iter()
            .map(|&i| self.ids[i].clone())
            .collect()
    }

    /// Same dataset with the feature matrix replaced (after preprocessing).
    pub fn with_features(&self, features: Mat) -> Result<Dataset> {
        if features.rows() != self.features.rows() {
            return Err(Error::Data("replacement features change the row count".into()));
        }
        Ok(Dataset {
            features,
            ..self.clone()
        })
    }

    /// Join a truth table onto the PT rows by subject id.
    pub fn attach_truth(&mut self, ids: &[String], values: &Mat) -> Result<()> {
        if ids.len() != values.rows() {
            return Err(Error::Data("truth id/value count mismatch".into()));
        }
        let mut rows = Vec::with_capacity(self.pt_indices().len());
        for pt_id in self.pt_ids() {
            match ids.iter().position(|i| *i == pt_id) {
                Some(k) => rows.push(k),
                None => {
                    return Err(Error::Data(format!(
                        "truth table is missing subject {pt_id:?}"
                    )))
                }
            }
        }
        self.truth = Some(values.gather_rows(&rows));
        Ok(())
    }
}

/// Render with 12 significant digits; parse back for a lossless round trip.
pub fn format_value(v: f64) -> String {
    format!("{:.11e}", v)
}

fn parse_value(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!(
            "{}:{}: not a number: {s:?}",
            path.display(),
            line
        ))
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_cohort_csv(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let s = ds.features.cols();
    let mut out = String::new();
    out.push_str("subject_id,group");
    for name in &ds.covariate_names {
        out.push(',');
        out.push_str(name);
    }
    for j in 0..s {
        out.push_str(&format!(",vol_{j:03}"));
    }
    out.push('\n');
    for i in 0..ds.features.rows() {
        out.push_str(&ds.ids[i]);
        out.push(',');
        out.push_str(&ds.groups[i].to_string());
        if let Some(c) = &ds.covariates {
            for &v in c.row(i) {
                out.push(',');
                out.push_str(&format_value(v));
            }
        }
        for &v in ds.features.row(i) {
            out.push(',');
            out.push_str(&format_value(v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_cohort_csv(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "subject_id" || cols[1] != "group" {
        return Err(Error::Data(format!(
            "{}: header must start with subject_id,group",
            path.display()
        )));
    }
    let first_feature = cols
        .iter()
        .position(|c| c.starts_with("vol_"))
        .ok_or_else(|| Error::Data(format!("{}: no vol_ feature columns", path.display())))?;
    let covariate_names: Vec<String> = cols[2..first_feature].iter().map(|s| s.to_string()).collect();
    let n_cov = covariate_names.len();
    let n_feat = cols.len() - first_feature;

    let mut ids = Vec::new();
    let mut groups = Vec::new();
    let mut feat_rows: Vec<f64> = Vec::new();
    let mut cov_rows: Vec<f64> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Data(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                cols.len(),
                fields.len()
            )));
        }
        ids.push(fields[0].to_string());
        groups.push(fields[1].parse::<Group>()?);
        for f in &fields[2..first_feature] {
            cov_rows.push(parse_value(f, path, lineno + 1)?);
        }
        for f in &fields[first_feature..] {
            feat_rows.push(parse_value(f, path, lineno + 1)?);
        }
    }
    let n = ids.len();
    let ds = Dataset {
        ids,
        groups,
        features: Mat::from_vec(n, n_feat, feat_rows),
        covariates: (n_cov > 0).then(|| Mat::from_vec(n, n_cov, cov_rows)),
        covariate_names,
        truth: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_truth_csv(path: &Path, ids: &[String], truth: &Mat) -> Result<()> {
    if ids.len() != truth.rows() {
        return Err(Error::Data("truth id/value count mismatch".into()));
    }
    let mut out = String::from("subject_id");
    for k in 0..truth.cols() {
        out.push_str(&format!(",sev_{}", k + 1));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for &v in truth.row(i) {
            out.push(',');
            out.push_str(&format_value(v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_truth_csv(path: &Path) -> Result<(Vec<String>, Mat)> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "subject_id" {
        return Err(Error::Data(format!(
            "{}: header must start with subject_id",
            path.display()
        )));
    }
    let m = cols.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 1 {
            return Err(Error::Data(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                m + 1,
                fields.len()
            )));
        }
        ids.push(fields[0].to_string());
        for f in &fields[1..] {
            values.push(parse_value(f, path, lineno + 1)?);
        }
    }
    let n = ids.len();
    Ok((ids, Mat::from_vec(n, m, values)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        Dataset {
            ids: vec!["cn_1".into(), "pt_1".into(), "pt_2".into()],
            groups: vec![Group::Cn, Group::Pt, Group::Pt],
            features: Mat::from_rows(&[
                vec![1.0, 2.0],
                vec![0.5, std::f64::consts::PI],
                vec![1.0 / 3.0, 17.25],
            ]),
            covariate_names: vec!["age".into()],
            covariates: Some(Mat::from_rows(&[vec![61.0], vec![72.5], vec![68.0]])),
            truth: None,
        }
    }

    #[test]
    fn cohort_round_trip_is_lossless_and_canonical() {
        let dir = std::env::temp_dir().join("rindex-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cohort.csv");
        let ds = tiny_dataset();
        write_cohort_csv(&path, &ds).unwrap();
        let loaded = read_cohort_csv(&path).unwrap();
        assert_eq!(loaded.ids, ds.ids);
        assert_eq!(loaded.covariate_names, ds.covariate_names);
        // Byte-identical second write: 12 significant digits are stable
        // through a parse/format cycle.
        let path2 = dir.join("cohort2.csv");
        write_cohort_csv(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        // Values agree to 12 significant digits.
        for (a, b) in ds.features.data().iter().zip(loaded.features.data()) {
            assert!((a - b).abs() <= a.abs().max(1e-300) * 1e-11);
        }
    }

    #[test]
    fn truth_attaches_by_subject_id_in_any_order() {
        let mut ds = tiny_dataset();
        let ids = vec!["pt_2".to_string(), "pt_1".to_string()];
        let truth = Mat::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
        ds.attach_truth(&ids, &truth).unwrap();
        let t = ds.truth.unwrap();
        assert_eq!(t.row(0), &[0.2, 0.8]); // pt_1
        assert_eq!(t.row(1), &[0.9, 0.1]); // pt_2
    }

    #[test]
    fn missing_truth_subject_is_a_data_error() {
        let mut ds = tiny_dataset();
        let ids = vec!["pt_1".to_string()];
        let truth = Mat::from_rows(&[vec![0.2, 0.8]]);
        assert!(ds.attach_truth(&ids, &truth).is_err());
    }

    #[test]
    fn splits_follow_group_labels() {
        let ds = tiny_dataset();
        assert_eq!(ds.cn_features().rows(), 1);
        assert_eq!(ds.pt_features().rows(), 2);
        assert_eq!(ds.pt_ids(), vec!["pt_1".to_string(), "pt_2".to_string()]);
    }
}
