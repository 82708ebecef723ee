use rindex_core::mat::Mat;
use rindex_core::metrics::c_index;
use rindex_core::preprocess::Preprocessor;
use rindex_core::synthdata::{make_cohort, Variant};

// Least-squares probe: regress each planted severity on the z-scored
// features; in-sample c-index approximates the linear ceiling.
fn main() {
    let s: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let cohort = make_cohort(Variant::Basic, 492, 900, s, 7).unwrap();
    let ds = cohort.to_dataset();
    let (prepared, _) = Preprocessor::fit(&ds.features, None, &ds.cn_mask()).unwrap();
    let ds = ds.with_features(prepared).unwrap();
    let pt = ds.pt_features();
    let truth = ds.truth.clone().unwrap();
    let n = pt.rows();
    let p = pt.cols() + 1;

    // Normal equations with ridge epsilon.
    let design: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = Vec::with_capacity(p);
            r.push(1.0);
            r.extend_from_slice(pt.row(i));
            r
        })
        .collect();
    let mut xtx = vec![vec![0.0; p]; p];
    for r in &design {
        for a in 0..p {
            for b in 0..p {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        xtx[a][a] += 1e-6;
    }
    for k in 0..truth.cols() {
        let mut m = xtx.clone();
        let mut v = vec![0.0; p];
        for (r, i) in design.iter().zip(0..n) {
            for a in 0..p {
                v[a] += r[a] * truth.get(i, k);
            }
        }
        // Gaussian elimination.
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            v.swap(col, piv);
            for r in col + 1..p {
                let f = m[r][col] / m[col][col];
                for cc in col..p {
                    m[r][cc] -= f * m[col][cc];
                }
                v[r] -= f * v[col];
            }
        }
        let mut beta = vec![0.0; p];
        for r in (0..p).rev() {
            let mut val = v[r];
            for cc in r + 1..p {
                val -= m[r][cc] * beta[cc];
            }
            beta[r] = val / m[r][r];
        }
        let pred: Vec<f64> = (0..n)
            .map(|i| design[i].iter().zip(&beta).map(|(&a, &b)| a * b).sum())
            .collect();
        let ci = c_index(&pred, &truth.col(k)).unwrap();
        println!("pattern {k}: linear-probe c-index {ci:.4}");
    }
    let _ = Mat::zeros(1, 1);
}
