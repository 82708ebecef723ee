//! Concordance-based evaluation and agreement-based model selection.
//!
//! The concordance index uses the standard tie convention: pairs with tied
//! truth are excluded, tied predictions earn half credit. Column alignment
//! between an index matrix and a reference enumerates all `M!` column
//! permutations and keeps the one maximizing the mean per-dimension
//! concordance.

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::networks::{ModelBundle, MAX_PATTERNS};
use crate::{Error, Result};

/// Concordant fraction over pairs with distinct truth values; prediction
/// ties count half. Errors when every truth value is tied.
pub fn c_index(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "c_index",
            format!("{} predictions", truth.len()),
            format!("{} predictions", pred.len()),
        ));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedMetric(
            "c_index needs at least two observations".into(),
        ));
    }
    // Sort by truth so comparable pairs are enumerated in truth order; the
    // pair scan itself is quadratic, which is fine at cohort scale.
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
    let mut comparable = 0u64;
    let mut score = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        for &j in &order[rank + 1..] {
            if truth[j] == truth[i] {
                continue; // tied truth: excluded
            }
            comparable += 1;
            // truth[j] > truth[i] by the sort.
            if pred[j] > pred[i] {
                score += 1.0;
            } else if pred[j] == pred[i] {
                score += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric(
            "all truth values are tied; concordance is undefined".into(),
        ));
    }
    Ok(score / comparable as f64)
}

/// Outcome of aligning an index matrix against a reference: the winning
/// column permutation, the per-dimension concordances under it, and their
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `permutation[k]` is the index-matrix column matched to reference
    /// dimension `k`.
    pub permutation: Vec<usize>,
    pub per_dimension: Vec<f64>,
    pub mean: f64,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm, iterative.
    let mut items: Vec<usize> = (0..m).collect();
    let mut out = vec![items.clone()];
    let mut counters = vec![0usize; m];
    let mut i = 0;
    while i < m {
        if counters[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(counters[i], i);
            }
            out.push(items.clone());
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    out
}

/// Mean concordance between `r`'s columns (under the best permutation) and
/// the reference columns.
pub fn pattern_c_index(r: &Mat, reference: &Mat) -> Result<AlignmentResult> {
    if r.shape() != reference.shape() {
        return Err(Error::shape(
            "pattern_c_index",
            format!("{:?}", reference.shape()),
            format!("{:?}", r.shape()),
        ));
    }
    let m = r.cols();
    if m == 0 || m > MAX_PATTERNS {
        return Err(Error::InvalidArgument(format!(
            "pattern count must lie in 1..={MAX_PATTERNS}"
        )));
    }
    // All M^2 pairwise concordances once, then a search over permutations.
    let mut pairwise = vec![vec![0.0f64; m]; m];
    for col_r in 0..m {
        let pred = r.col(col_r);
        for (col_t, row) in pairwise.iter_mut().enumerate() {
            row[col_r] = c_index(&pred, &reference.col(col_t))?;
        }
    }
    let mut best: Option<AlignmentResult> = None;
    for perm in permutations(m) {
        let per: Vec<f64> = (0..m).map(|k| pairwise[k][perm[k]]).collect();
        let mean = per.iter().sum::<f64>() / m as f64;
        let better = match &best {
            None => true,
            Some(b) => mean > b.mean,
        };
        if better {
            best = Some(AlignmentResult {
                permutation: perm,
                per_dimension: per,
                mean,
            });
        }
    }
    Ok(best.unwrap())
}

/// Agreement between two models' index matrices: the pattern concordance
/// with the second matrix in the truth role.
pub fn pattern_agr_index(r_a: &Mat, r_b: &Mat) -> Result<AlignmentResult> {
    pattern_c_index(r_a, r_b)
}

/// Pairwise agreement among replicas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementTable {
    /// Symmetric `k x k`, diagonal fixed at 1.
    pub pairwise: Vec<Vec<f64>>,
    /// Mean agreement of each replica with the others.
    pub per_replica_mean: Vec<f64>,
    /// Mean over unordered pairs.
    pub overall_mean: f64,
}

pub fn agreement_table(replicas: &[Mat]) -> Result<AgreementTable> {
    let k = replicas.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "agreement needs at least two replicas".into(),
        ));
    }
    for r in replicas {
        if r.shape() != replicas[0].shape() {
            return Err(Error::shape(
                "agreement_table",
                format!("{:?}", replicas[0].shape()),
                format!("{:?}", r.shape()),
            ));
        }
    }
    let mut pairwise = vec![vec![1.0f64; k]; k];
    let mut sum = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let v = pattern_agr_index(&replicas[a], &replicas[b])?.mean;
            pairwise[a][b] = v;
            pairwise[b][a] = v;
            sum += v;
        }
    }
    let per_replica_mean: Vec<f64> = (0..k)
        .map(|a| {
            (0..k)
                .filter(|&b| b != a)
                .map(|b| pairwise[a][b])
                .sum::<f64>()
                / (k - 1) as f64
        })
        .collect();
    Ok(AgreementTable {
        pairwise,
        per_replica_mean,
        overall_mean: sum / (k * (k - 1) / 2) as f64,
    })
}

/// One grid cell of a hyperparameter sweep: the `(M, lambda)` pair and the
/// per-replica index matrices inferred on the same patient rows.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub num_patterns: usize,
    pub lambda: f64,
    pub replica_indices: Vec<Mat>,
}

/// Winner of agreement-based selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub cell: usize,
    pub num_patterns: usize,
    pub lambda: f64,
    /// Replica with the highest mean agreement inside the winning cell.
    pub replica: usize,
    pub cell_agreement: f64,
    pub replica_agreement: f64,
}

/// Pick the `(M, lambda)` cell with the highest mean pairwise agreement,
/// then the replica with the highest mean agreement inside it. Ties break
/// toward lower lambda, then lower M, then lower replica index.
pub fn select_hyper(cells: &[GridCell]) -> Result<(Selection, Vec<AgreementTable>)> {
    if cells.is_empty() {
        return Err(Error::InvalidArgument("empty selection grid".into()));
    }
    let mut tables = Vec::with_capacity(cells.len());
    for c in cells {
        tables.push(agreement_table(&c.replica_indices)?);
    }
    let mut best: Option<usize> = None;
    for i in 0..cells.len() {
        let better = match best {
            None => true,
            Some(b) => {
                let (ta, tb) = (&tables[i], &tables[b]);
                match ta.overall_mean.total_cmp(&tb.overall_mean) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => {
                        let key_i = (cells[i].lambda, cells[i].num_patterns, i);
                        let key_b = (cells[b].lambda, cells[b].num_patterns, b);
                        key_i < key_b
                    }
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    let cell = best.unwrap();
    let table = &tables[cell];
    let mut replica = 0usize;
    for (i, &v) in table.per_replica_mean.iter().enumerate() {
        if v > table.per_replica_mean[replica] {
            replica = i;
        }
    }
    let selection = Selection {
        cell,
        num_patterns: cells[cell].num_patterns,
        lambda: cells[cell].lambda,
        replica,
        cell_agreement: table.overall_mean,
        replica_agreement: table.per_replica_mean[replica],
    };
    Ok((selection, tables))
}

// ---------------------------------------------------------------------------
// Lipschitz lower-bound diagnostic
// ---------------------------------------------------------------------------

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Empirical Lipschitz constant of the inverse mapping: max over row pairs
/// of `||g(y_a) - g(y_b)|| / ||y_a - y_b||`.
pub fn estimate_k2(bundle: &ModelBundle, ys: &Mat) -> Result<f64> {
    if ys.rows() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two rows to estimate a Lipschitz ratio".into(),
        ));
    }
    let g = bundle.reconstruct_indices(ys)?;
    let mut k2 = 0.0f64;
    for a in 0..ys.rows() {
        for b in a + 1..ys.rows() {
            let dy = euclidean(ys.row(a), ys.row(b));
            if dy > 1e-12 {
                k2 = k2.max(euclidean(g.row(a), g.row(b)) / dy);
            }
        }
    }
    Ok(k2)
}

/// Slack of the transformation-separation lower bound for one subject and
/// latent pair:
/// `d(f(x,z1), f(x,z2)) - [d(z1,z2) - d(g(f(x,z1)),z1) - d(g(f(x,z2)),z2)] / k2`.
/// Nonnegative slack confirms the bound.
pub fn lemma1_slack(
    bundle: &ModelBundle,
    x_row: &[f64],
    z1: &[f64],
    z2: &[f64],
    k2: f64,
) -> Result<f64> {
    if !(k2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate Lipschitz estimate k2 = {k2}"
        )));
    }
    let x = Mat::from_rows(&[x_row.to_vec()]);
    let z1m = Mat::from_rows(&[z1.to_vec()]);
    let z2m = Mat::from_rows(&[z2.to_vec()]);
    let y1 = bundle.transform(&x, &z1m)?;
    let y2 = bundle.transform(&x, &z2m)?;
    let g1 = bundle.reconstruct_indices(&y1)?;
    let g2 = bundle.reconstruct_indices(&y2)?;
    let lhs = euclidean(y1.row(0), y2.row(0));
    let bound = (euclidean(z1, z2) - euclidean(g1.row(0), z1) - euclidean(g2.row(0), z2)) / k2;
    Ok(lhs - bound)
}

// ---------------------------------------------------------------------------
// Subgrouping
// ---------------------------------------------------------------------------

/// Expression label of one subject: a single dominant pattern at low, mid
/// or high expression (all other dimensions below `lo`), everything below
/// `lo`, or anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubgroupLabel {
    /// Every dimension below the low threshold.
    Low,
    /// Dimension `i` in `[lo, hi)`, all others below `lo`.
    Mid(usize),
    /// Dimension `i` at or above `hi`, all others below `lo`.
    High(usize),
    /// Two or more dimensions at or above `lo`.
    Mixed,
}

impl std::fmt::Display for SubgroupLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubgroupLabel::Low => write!(f, "low"),
            SubgroupLabel::Mid(i) => write!(f, "pattern{}_mid", i + 1),
            SubgroupLabel::High(i) => write!(f, "pattern{}_high", i + 1),
            SubgroupLabel::Mixed => write!(f, "mixed"),
        }
    }
}

/// Label every row of an index matrix with thresholds `lo < hi`.
pub fn subgroup_by_r(r: &Mat, lo: f64, hi: f64) -> Result<Vec<SubgroupLabel>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy lo < hi, got {lo} >= {hi}"
        )));
    }
    let mut out = Vec::with_capacity(r.rows());
    for i in 0..r.rows() {
        let row = r.row(i);
        let above: Vec<usize> = (0..row.len()).filter(|&j| row[j] >= lo).collect();
        let label = match above.as_slice() {
            [] => SubgroupLabel::Low,
            [j] => {
                if row[*j] >= hi {
                    SubgroupLabel::High(*j)
                } else {
                    SubgroupLabel::Mid(*j)
                }
            }
            _ => SubgroupLabel::Mixed,
        };
        out.push(label);
    }
    Ok(out)
}
