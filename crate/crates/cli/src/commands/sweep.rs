use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use rindex_core::checkpoint::Checkpoint;
use rindex_core::data::format_value;
use rindex_core::inference::infer;
use rindex_core::metrics::{select_hyper, AgreementTable, GridCell, Selection};
use rindex_core::preprocess::Preprocessor;
use rindex_core::training::train_replicas;

use crate::commands::{ensure_dir, load_cohort};
use crate::config::RunConfig;
use crate::CliError;

pub struct Args<'a> {
    pub config: Option<&'a Path>,
    pub cohort: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub replicas: Option<usize>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub m_grid: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct SelectedRecord<'a> {
    #[serde(flatten)]
    selection: &'a Selection,
    checkpoint: String,
}

pub fn run(args: Args<'_>) -> Result<(), CliError> {
    let run_cfg = match args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cohort_path = args
        .cohort
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.data.cohort.clone())
        .ok_or_else(|| CliError::argument("no cohort given (--cohort or [data].cohort)"))?;
    let out_buf = args
        .out
        .map(Path::to_path_buf)
        .or_else(|| run_cfg.output.dir.clone())
        .ok_or_else(|| CliError::argument("no output directory (--out or [output].dir)"))?;
    let out = out_buf.as_path();
    let lambda_grid = args.lambda_grid.unwrap_or(run_cfg.sweep.lambda_grid.clone());
    let m_grid = args.m_grid.unwrap_or(run_cfg.sweep.m_grid.clone());
    let replicas = args.replicas.unwrap_or(run_cfg.sweep.replicas);
    let workers = args.workers.unwrap_or(run_cfg.sweep.workers);
    if replicas < 2 {
        return Err(CliError::argument("agreement needs at least 2 replicas per cell"));
    }
    if lambda_grid.is_empty() || m_grid.is_empty() {
        return Err(CliError::argument("empty sweep grid"));
    }

    let mut base_cfg = run_cfg.train_config();
    if let Some(s) = args.seed {
        base_cfg.seed = s;
    }

    let ds = load_cohort(&cohort_path, None)?;
    let covs = ds
        .covariates
        .as_ref()
        .map(|c| (c, ds.covariate_names.as_slice()));
    let (prepared, prep) = Preprocessor::fit(&ds.features, covs, &ds.cn_mask())?;
    let ds = ds.with_features(prepared)?;
    let pt = ds.pt_features();

    ensure_dir(out)?;
    prep.save(&out.join("preprocessor.json"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::argument(format!("worker pool: {e}")))?;

    let mut cells: Vec<GridCell> = Vec::new();
    let mut cell_paths: Vec<Vec<std::path::PathBuf>> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for &m in &m_grid {
        for &lambda in &lambda_grid {
            let mut cfg = base_cfg.clone();
            cfg.num_patterns = m;
            cfg.weights.lambda = lambda;
            // Distinct seed block per cell so replicas never collide.
            let cell_seed = cfg.seed
                + 10_000 * (m as u64)
                + (lambda * 1000.0).round() as u64;
            let trained = pool.install(|| train_replicas(&ds, &cfg, replicas, cell_seed));
            match trained {
                Ok(ckpts) => {
                    let mut indices = Vec::with_capacity(ckpts.len());
                    let mut paths = Vec::with_capacity(ckpts.len());
                    for (i, ckpt) in ckpts.iter().enumerate() {
                        let bundle = ckpt.bundle()?;
                        indices.push(infer(&bundle, &pt)?.values);
                        let path = out.join(format!("ckpt_m{}_l{}_r{}.json", m, lambda, i));
                        ckpt.save(&path)?;
                        paths.push(path);
                    }
                    cells.push(GridCell {
                        num_patterns: m,
                        lambda,
                        replica_indices: indices,
                    });
                    cell_paths.push(paths);
                    println!("cell (M={m}, lambda={lambda}): {replicas} replicas trained");
                }
                Err(e) => {
                    let msg = format!("cell (M={m}, lambda={lambda}) failed: {e}");
                    eprintln!("{msg}");
                    failures.push(msg);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::convergence(format!(
            "all {} sweep cells failed; first failure: {}",
            failures.len(),
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }

    let (selection, tables) = select_hyper(&cells)?;
    write_agreement_csv(&out.join("agreement.csv"), &cells, &tables)?;
    write_summary(&out.join("summary.txt"), &cells, &tables, &selection, &failures)?;

    let selected_path = cell_paths[selection.cell][selection.replica].clone();
    let record = SelectedRecord {
        selection: &selection,
        checkpoint: selected_path.display().to_string(),
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(out.join("selected.json"), text)
        .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    // Stable alias for downstream tooling.
    let selected_ckpt = Checkpoint::load(&selected_path)?;
    selected_ckpt.save(&out.join("selected_checkpoint.json"))?;

    println!(
        "selected M={} lambda={} replica {} (cell agreement {:.4})",
        selection.num_patterns, selection.lambda, selection.replica, selection.cell_agreement
    );
    Ok(())
}

fn write_agreement_csv(
    path: &Path,
    cells: &[GridCell],
    tables: &[AgreementTable],
) -> Result<(), CliError> {
    let mut out = String::from("num_patterns,lambda,replica_a,replica_b,agr_index\n");
    for (cell, table) in cells.iter().zip(tables) {
        let k = table.pairwise.len();
        for a in 0..k {
            for b in a + 1..k {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    cell.num_patterns,
                    cell.lambda,
                    a,
                    b,
                    format_value(table.pairwise[a][b])
                ));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_summary(
    path: &Path,
    cells: &[GridCell],
    tables: &[AgreementTable],
    selection: &Selection,
    failures: &[String],
) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut w = |line: String| writeln!(f, "{line}").map_err(|e| CliError::io(e.to_string()));
    w(format!("{:>4} {:>8} {:>12} {:>10}", "M", "lambda", "mean agr", "selected"))?;
    for (i, (cell, table)) in cells.iter().zip(tables).enumerate() {
        w(format!(
            "{:>4} {:>8} {:>12.4} {:>10}",
            cell.num_patterns,
            cell.lambda,
            table.overall_mean,
            if i == selection.cell { "*" } else { "" }
        ))?;
    }
    w(format!(
        "selected replica {} with mean agreement {:.4}",
        selection.replica, selection.replica_agreement
    ))?;
    for msg in failures {
        w(format!("failed: {msg}"))?;
    }
    Ok(())
}
