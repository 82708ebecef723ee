use std::io::Write;
use std::path::Path;

use rindex_core::preprocess::Preprocessor;
use rindex_core::training::train_observed;

use crate::commands::{ensure_dir, load_cohort};
use crate::config::RunConfig;
use crate::CliError;

pub fn run(
    config: Option<&Path>,
    cohort: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    lambda: Option<f64>,
    num_patterns: Option<usize>,
) -> Result<(), CliError> {
    let run_cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cohort_path = cohort
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.data.cohort.clone())
        .ok_or_else(|| CliError::argument("no cohort given (--cohort or [data].cohort)"))?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.output.dir.clone())
        .ok_or_else(|| CliError::argument("no output directory (--out or [output].dir)"))?;
    let out = out.as_path();

    let mut cfg = run_cfg.train_config();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = lambda {
        cfg.weights.lambda = l;
    }
    if let Some(m) = num_patterns {
        cfg.num_patterns = m;
    }

    let ds = load_cohort(&cohort_path, None)?;
    let covs = ds
        .covariates
        .as_ref()
        .map(|c| (c, ds.covariate_names.as_slice()));
    let (prepared, prep) = Preprocessor::fit(&ds.features, covs, &ds.cn_mask())?;
    let ds = ds.with_features(prepared)?;

    ensure_dir(out)?;
    prep.save(&out.join("preprocessor.json"))?;

    let log_path = out.join("train_log.txt");
    let mut log_file = std::fs::File::create(&log_path)
        .map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    let ckpt = train_observed(&ds, &cfg, |log| {
        let line = format!(
            "iteration={} {} ema_recons={:.6} ema_mono={:.6}",
            log.iteration, log.report, log.ema_recons, log.ema_mono
        );
        println!("{line}");
        let _ = writeln!(log_file, "{line}");
    })?;

    let ckpt_path = out.join("checkpoint.json");
    ckpt.save(&ckpt_path)?;
    println!(
        "trained {} iterations (converged: {}) -> {}",
        ckpt.iteration,
        ckpt.converged,
        ckpt_path.display()
    );
    if !ckpt.converged {
        eprintln!(
            "warning: stopping thresholds not reached within {} iterations",
            cfg.max_iterations
        );
    }
    Ok(())
}
