use std::path::Path;

use rindex_core::data::write_cohort_csv;
use rindex_core::preprocess::Preprocessor;

use crate::commands::{ensure_dir, load_cohort};
use crate::CliError;

pub fn run(cohort: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_cohort(cohort, None)?;
    let covs = ds
        .covariates
        .as_ref()
        .map(|c| (c, ds.covariate_names.as_slice()));
    let (prepared, prep) = Preprocessor::fit(&ds.features, covs, &ds.cn_mask())?;
    let ds_out = ds.with_features(prepared)?;
    ensure_dir(out)?;
    write_cohort_csv(&out.join("cohort_preprocessed.csv"), &ds_out)?;
    prep.save(&out.join("preprocessor.json"))?;
    println!(
        "preprocessed {} rows ({} covariates) -> {}",
        ds_out.features.rows(),
        ds_out.covariate_names.len(),
        out.display()
    );
    Ok(())
}
