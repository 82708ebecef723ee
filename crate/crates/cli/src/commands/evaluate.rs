use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rindex_core::data::read_truth_csv;
use rindex_core::mat::Mat;
use rindex_core::metrics::{estimate_k2, lemma1_slack, pattern_c_index, subgroup_by_r};
use rindex_core::training::sample_latent;

use crate::commands::{prepared_cn, prepared_pt_indices};
use crate::config::RunConfig;
use crate::CliError;

pub fn run(
    checkpoint: &Path,
    config: Option<&Path>,
    cohort: Option<&Path>,
    stats: Option<&Path>,
    preprocessed: bool,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let run_cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cohort_path = cohort
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.data.cohort.clone())
        .ok_or_else(|| CliError::argument("no cohort given (--cohort or [data].cohort)"))?;
    let truth_path = truth
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.data.truth.clone());
    let (ckpt, ds, r) = prepared_pt_indices(checkpoint, &cohort_path, stats, preprocessed)?;

    let truth = match truth_path {
        Some(tp) => {
            let (ids, values) = read_truth_csv(&tp)?;
            let mut with_truth = ds.clone();
            with_truth.attach_truth(&ids, &values)?;
            with_truth.truth
        }
        None => None,
    };

    match truth {
        Some(truth) => {
            let alignment = pattern_c_index(&r.values, &truth)?;
            println!("pattern-c-index: {:.4}", alignment.mean);
            for (k, v) in alignment.per_dimension.iter().enumerate() {
                println!(
                    "  dimension {}: c-index {:.4} (model column {})",
                    k + 1,
                    v,
                    alignment.permutation[k] + 1
                );
            }
            // Separation lower-bound spot check on the trained model.
            let bundle = ckpt.bundle()?;
            let cn = prepared_cn(&ds, stats, preprocessed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let n_triples = 200.min(cn.rows());
            let m = bundle.num_patterns();
            let z1 = sample_latent(n_triples, m, &mut rng);
            let z2 = sample_latent(n_triples, m, &mut rng);
            let rows: Vec<usize> = (0..n_triples).map(|_| rng.gen_range(0..cn.rows())).collect();
            let x = cn.gather_rows(&rows);
            let (y1, y2) = (bundle.transform(&x, &z1)?, bundle.transform(&x, &z2)?);
            let mut ys = Mat::zeros(2 * n_triples, cn.cols());
            for i in 0..n_triples {
                ys.row_mut(i).copy_from_slice(y1.row(i));
                ys.row_mut(n_triples + i).copy_from_slice(y2.row(i));
            }
            let k2 = estimate_k2(&bundle, &ys)?;
            let mut min_slack = f64::INFINITY;
            for i in 0..n_triples {
                let s = lemma1_slack(&bundle, x.row(i), z1.row(i), z2.row(i), k2)?;
                min_slack = min_slack.min(s);
            }
            println!("separation bound: k2 {:.4}, min slack {:.3e} over {n_triples} triples", k2, min_slack);

            if let Some(out) = out {
                let mut text = String::from("dimension,model_column,c_index\n");
                for (k, v) in alignment.per_dimension.iter().enumerate() {
                    text.push_str(&format!("{},{},{}\n", k + 1, alignment.permutation[k] + 1, v));
                }
                text.push_str(&format!("mean,,{}\n", alignment.mean));
                std::fs::write(out, text)
                    .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
            }
        }
        None => {
            // Restricted report: no ground truth available.
            println!("no truth table: restricted report (index summaries only)");
            let m = r.values.cols();
            for k in 0..m {
                let col = r.values.col(k);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!("  r_{}: mean {:.4} range [{:.4}, {:.4}]", k + 1, mean, lo, hi);
            }
            let labels = subgroup_by_r(&r.values, 0.4, 0.7)?;
            let mut counts = std::collections::BTreeMap::new();
            for l in labels {
                *counts.entry(l.to_string()).or_insert(0usize) += 1;
            }
            for (label, count) in counts {
                println!("  {label}: {count}");
            }
        }
    }
    Ok(())
}
