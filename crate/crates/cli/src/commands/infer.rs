use std::path::Path;

use crate::commands::{prepared_pt_indices, write_rindex_csv};
use crate::CliError;

pub fn run(
    checkpoint: &Path,
    cohort: &Path,
    stats: Option<&Path>,
    preprocessed: bool,
    out: &Path,
) -> Result<(), CliError> {
    let (_, _, r) = prepared_pt_indices(checkpoint, cohort, stats, preprocessed)?;
    write_rindex_csv(out, &r)?;
    println!(
        "inferred {}x{} indices -> {}",
        r.values.rows(),
        r.values.cols(),
        out.display()
    );
    Ok(())
}
