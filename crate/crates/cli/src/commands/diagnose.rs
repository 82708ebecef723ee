use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rindex_core::checkpoint::Checkpoint;
use rindex_core::losses::mono_loss;
use rindex_core::mat::Mat;
use rindex_core::metrics::{estimate_k2, lemma1_slack};
use rindex_core::training::{sample_latent, sample_severity_conditioned};

use crate::commands::{load_cohort, prepared_cn};
use crate::CliError;

/// Samples `(x, z, z')` triples from the reference rows and reports the
/// monotonicity violation statistics plus the inverse-mapping separation
/// bound.
pub fn run(
    checkpoint: &Path,
    cohort: &Path,
    stats: Option<&Path>,
    preprocessed: bool,
    samples: usize,
    seed: u64,
) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::argument("--samples must be positive"));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let bundle = ckpt.bundle()?;
    let ds = load_cohort(cohort, None)?;
    let cn = prepared_cn(&ds, stats, preprocessed)?;
    let m = bundle.num_patterns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let rows: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..cn.rows())).collect();
    let x = cn.gather_rows(&rows);
    let z = sample_latent(samples, m, &mut rng);
    let zp = sample_severity_conditioned(&z, &mut rng);
    let z2 = sample_latent(samples, m, &mut rng);

    // Monotonicity: loss per sampled triple plus elementwise violations.
    let y_z = bundle.transform(&x, &z)?;
    let y_zp = bundle.transform(&x, &zp)?;
    let mono_mean = mono_loss(&x, &y_z, &y_zp)?;
    let mut violations = 0usize;
    let mut entries = 0usize;
    for i in 0..samples {
        for j in 0..cn.cols() {
            let excess = (y_z.get(i, j) - x.get(i, j)).abs() - (y_zp.get(i, j) - x.get(i, j)).abs();
            if excess > 0.01 {
                violations += 1;
            }
            entries += 1;
        }
    }
    println!(
        "monotonicity: mean loss {:.6} over {samples} triples; {} / {} entries exceed 0.01 ({:.3}%)",
        mono_mean,
        violations,
        entries,
        100.0 * violations as f64 / entries as f64
    );

    // Separation lower bound with the empirical Lipschitz estimate.
    let y_b = bundle.transform(&x, &z2)?;
    let mut ys = Mat::zeros(2 * samples, cn.cols());
    for i in 0..samples {
        ys.row_mut(i).copy_from_slice(y_z.row(i));
        ys.row_mut(samples + i).copy_from_slice(y_b.row(i));
    }
    let k2 = estimate_k2(&bundle, &ys)?;
    let mut min_slack = f64::INFINITY;
    let mut mean_slack = 0.0;
    for i in 0..samples {
        let s = lemma1_slack(&bundle, x.row(i), z.row(i), z2.row(i), k2)?;
        min_slack = min_slack.min(s);
        mean_slack += s / samples as f64;
    }
    println!(
        "separation bound: k2 {:.4}; slack min {:.3e}, mean {:.3e} over {samples} triples",
        k2, min_slack, mean_slack
    );
    if min_slack < -1e-9 {
        return Err(CliError::data(format!(
            "separation lower bound violated: min slack {min_slack:.3e}"
        )));
    }
    Ok(())
}
