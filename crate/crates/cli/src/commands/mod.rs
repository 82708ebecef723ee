pub mod diagnose;
pub mod evaluate;
pub mod generate;
pub mod infer;
pub mod preprocess;
pub mod sweep;
pub mod train;

use std::path::Path;

use rindex_core::checkpoint::Checkpoint;
use rindex_core::data::{read_cohort_csv, read_truth_csv, Dataset};
use rindex_core::inference::RIndexMatrix;
use rindex_core::mat::Mat;
use rindex_core::metrics::subgroup_by_r;
use rindex_core::preprocess::Preprocessor;

use crate::CliError;

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub(crate) fn load_cohort(path: &Path, truth: Option<&Path>) -> Result<Dataset, CliError> {
    let mut ds = read_cohort_csv(path)?;
    if let Some(tp) = truth {
        let (ids, values) = read_truth_csv(tp)?;
        ds.attach_truth(&ids, &values)?;
    }
    Ok(ds)
}

/// Load a checkpoint and the PT rows it should score: either raw rows run
/// through the persisted stats, or rows that are already preprocessed.
pub(crate) fn prepared_pt_indices(
    checkpoint: &Path,
    cohort: &Path,
    stats: Option<&Path>,
    preprocessed: bool,
) -> Result<(Checkpoint, Dataset, RIndexMatrix), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let bundle = ckpt.bundle()?;
    let ds = load_cohort(cohort, None)?;
    let pt = ds.pt_features();
    let mut r = if preprocessed {
        rindex_core::inference::infer(&bundle, &pt)?
    } else {
        let stats = stats.ok_or_else(|| {
            CliError::argument(
                "raw cohort input needs --stats (persisted preprocessing); \
                 pass --preprocessed if the file is already adjusted",
            )
        })?;
        let prep = Preprocessor::load(stats)?;
        let pt_covs = ds.covariates.as_ref().map(|c| c.gather_rows(&ds.pt_indices()));
        rindex_core::inference::infer_raw(&bundle, &pt, &prep, pt_covs.as_ref())?
    };
    r.subject_ids = ds.pt_ids();
    r.source = checkpoint.display().to_string();
    Ok((ckpt, ds, r))
}

/// Write an index matrix with subgroup labels: `subject_id, r_1..r_M, group`.
pub(crate) fn write_rindex_csv(path: &Path, r: &RIndexMatrix) -> Result<(), CliError> {
    let labels = subgroup_by_r(&r.values, 0.4, 0.7)?;
    let m = r.values.cols();
    let mut out = String::from("subject_id");
    for k in 0..m {
        out.push_str(&format!(",r_{}", k + 1));
    }
    out.push_str(",group\n");
    for i in 0..r.values.rows() {
        out.push_str(&r.subject_ids[i]);
        for &v in r.values.row(i) {
            out.push(',');
            out.push_str(&rindex_core::data::format_value(v));
        }
        out.push(',');
        out.push_str(&labels[i].to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// CN feature rows of a dataset after optional preprocessing.
pub(crate) fn prepared_cn(
    ds: &Dataset,
    stats: Option<&Path>,
    preprocessed: bool,
) -> Result<Mat, CliError> {
    let cn = ds.cn_features();
    if preprocessed {
        return Ok(cn);
    }
    let stats = stats.ok_or_else(|| CliError::argument("raw cohort input needs --stats"))?;
    let prep = Preprocessor::load(stats)?;
    let cn_covs = ds.covariates.as_ref().map(|c| c.gather_rows(&ds.cn_indices()));
    Ok(prep.apply(&cn, cn_covs.as_ref())?)
}
