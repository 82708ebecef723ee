use std::path::Path;

use serde::Serialize;

use rindex_core::data::{write_cohort_csv, write_truth_csv};
use rindex_core::synthdata::{make_cohort, PatternSpec, Variant};

use crate::commands::ensure_dir;
use crate::CliError;

#[derive(Serialize)]
struct Manifest<'a> {
    variant: String,
    seed: u64,
    n_cn: usize,
    n_pt: usize,
    num_features: usize,
    /// Volumes that hit the positive floor during pattern imposition.
    clamped: usize,
    pattern_spec: &'a PatternSpec,
}

pub fn run(
    variant: &str,
    seed: u64,
    out: &Path,
    n_cn: usize,
    n_pt: usize,
    num_features: usize,
) -> Result<(), CliError> {
    let variant: Variant = variant.parse()?;
    let cohort = make_cohort(variant, n_cn, n_pt, num_features, seed)?;
    ensure_dir(out)?;
    let ds = cohort.to_dataset();
    write_cohort_csv(&out.join("cohort.csv"), &ds)?;
    write_truth_csv(&out.join("truth.csv"), &ds.pt_ids(), &cohort.truth)?;
    let manifest = Manifest {
        variant: variant.to_string(),
        seed,
        n_cn,
        n_pt,
        num_features,
        clamped: cohort.clamped,
        pattern_spec: &cohort.spec,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), text)
        .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    println!(
        "generated {} cohort: {} CN + {} PT rows, {} features -> {}",
        variant,
        n_cn,
        n_pt,
        num_features,
        out.display()
    );
    Ok(())
}
