//! Semi-synthetic cohort generation: log-normal baseline volumes with
//! planted, severity-scaled multiplicative reductions on designated region
//! sets, in five variants of pattern size, overlap, noise and strength.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group};
use crate::mat::Mat;
use crate::{Error, Result};

/// The five generation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    LargeOverlap,
    Scarce,
    Noisy,
    Mild,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Basic => "basic",
            Variant::LargeOverlap => "large_overlap",
            Variant::Scarce => "scarce",
            Variant::Noisy => "noisy",
            Variant::Mild => "mild",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "large_overlap" => Ok(Variant::LargeOverlap),
            "scarce" => Ok(Variant::Scarce),
            "noisy" => Ok(Variant::Noisy),
            "mild" => Ok(Variant::Mild),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected basic | large_overlap | scarce | noisy | mild)"
            ))),
        }
    }
}

/// Region sets and strength parameters of the planted patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    /// One sorted region-index set per pattern.
    pub patterns: Vec<Vec<usize>>,
    pub pattern_size: usize,
    /// Regions shared between each pattern pair.
    pub pairwise_overlap: usize,
    /// Multiplicative reduction scale.
    pub atrophy_scale: f64,
    /// Standard deviation of the within-pattern noise factor.
    pub noise_sd: f64,
}

impl PatternSpec {
    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn validate(&self, num_features: usize) -> Result<()> {
        for (k, p) in self.patterns.iter().enumerate() {
            if p.len() != self.pattern_size {
                return Err(Error::Data(format!(
                    "pattern {k} has {} regions, declared {}",
                    p.len(),
                    self.pattern_size
                )));
            }
            if p.iter().any(|&r| r >= num_features) {
                return Err(Error::Data(format!("pattern {k} indexes past {num_features} regions")));
            }
        }
        for a in 0..self.patterns.len() {
            for b in a + 1..self.patterns.len() {
                let shared = self.patterns[a]
                    .iter()
                    .filter(|r| self.patterns[b].contains(r))
                    .count();
                if shared != self.pairwise_overlap {
                    return Err(Error::Data(format!(
                        "patterns {a} and {b} share {shared} regions, declared {}",
                        self.pairwise_overlap
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Marsaglia-free Box-Muller draw (two uniforms per sample).
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Marginal log-volume spread of the baseline generator. Sized so planted
/// atrophy (20-30% of volume) lands below one marginal standard deviation,
/// the regime real regional volumes live in.
pub const BASELINE_LOG_SD: f64 = 0.35;
/// Log-sd carried by global subject-level factors (head size, shared
/// anatomy).
const BASELINE_GLOBAL_SD: f64 = 0.28;
/// Log-sd shared within a left/right-style region pair.
const BASELINE_PAIR_SD: f64 = 0.15;
/// Number of shared subject-level factors.
const BASELINE_FACTORS: usize = 10;

/// Independent per-region residual, completing the marginal spread.
fn baseline_noise_sd() -> f64 {
    (BASELINE_LOG_SD * BASELINE_LOG_SD
        - BASELINE_GLOBAL_SD * BASELINE_GLOBAL_SD
        - BASELINE_PAIR_SD * BASELINE_PAIR_SD)
        .sqrt()
}

/// Baseline volumes: region `j` has median `m_j ~ U[2, 20]` and log-normal
/// multiplicative spread `exp(N(0, 0.35))`. Log-deviations decompose into
/// global subject factors, one factor per homologous region pair `(2k,
/// 2k+1)`, and a small independent residual — the covariance shape of
/// real regional volumes, where hemispheric partners track each other
/// closely and everything scales with head size. Without shared structure
/// the cohort's intrinsic dimension would equal the region count and no
/// bottlenecked transformation could reach the patient distribution.
pub fn generate_baseline<R: Rng + ?Sized>(n: usize, num_features: usize, rng: &mut R) -> Mat {
    let medians: Vec<f64> = (0..num_features)
        .map(|_| 2.0 + 18.0 * rng.gen::<f64>())
        .collect();
    let noise_sd = baseline_noise_sd();
    // Global-factor loadings with a fixed norm, shared by both members of
    // a pair so each unit also moves coherently through the global factors.
    let n_units = num_features / 2 + num_features % 2;
    let unit_loadings: Vec<Vec<f64>> = (0..n_units)
        .map(|_| {
            let raw: Vec<f64> = (0..BASELINE_FACTORS).map(|_| standard_normal(rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.iter().map(|v| v * BASELINE_GLOBAL_SD / norm).collect()
        })
        .collect();
    let mut out = Mat::zeros(n, num_features);
    let mut factors = vec![0.0; BASELINE_FACTORS];
    let mut pair_factors = vec![0.0; n_units];
    for i in 0..n {
        for f in factors.iter_mut() {
            *f = standard_normal(rng);
        }
        for f in pair_factors.iter_mut() {
            *f = standard_normal(rng);
        }
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let unit = j / 2;
            let shared: f64 = unit_loadings[unit]
                .iter()
                .zip(&factors)
                .map(|(&l, &f)| l * f)
                .sum();
            let log_dev = shared
                + BASELINE_PAIR_SD * pair_factors[unit]
                + noise_sd * standard_normal(rng);
            *v = medians[j] * log_dev.exp();
        }
    }
    out
}

/// Region sets for one variant. Three patterns; regions are drawn
/// deterministically from `rng` as whole homologous pairs, the way real
/// pattern definitions include both hemispheres of each anatomical unit.
/// Pairwise overlaps are arranged in a cycle (1-2, 2-3, 3-1), with a
/// triple-shared set only when the overlap demands it.
pub fn build_pattern_spec<R: Rng + ?Sized>(
    variant: Variant,
    num_features: usize,
    rng: &mut R,
) -> Result<PatternSpec> {
    let (size, overlap, alpha, sigma): (usize, usize, f64, f64) = match variant {
        Variant::Basic => (14, 4, 0.3, 0.05),
        Variant::LargeOverlap => (14, 8, 0.3, 0.05),
        Variant::Scarce => (4, 0, 0.3, 0.05),
        Variant::Noisy => (14, 4, 0.3, 0.2),
        Variant::Mild => (14, 4, 0.2, 0.05),
    };
    let m = 3usize;
    // Work in pair units: a pattern of `size` regions is `size / 2` units.
    let units = size / 2;
    let overlap_units = overlap / 2;
    // Per pattern: `unique` exclusive units, `pair` units shared with each
    // neighbour, `triple` units shared by all three.
    let triple = (2 * overlap_units).saturating_sub(units);
    let pair = overlap_units - triple;
    let unique = units - 2 * pair - triple;
    let distinct_units = m * unique + m * pair + triple;
    let available_units = num_features / 2;
    if distinct_units > available_units {
        return Err(Error::InvalidArgument(format!(
            "{variant} needs {} regions in pairs but only {num_features} features exist",
            2 * distinct_units
        )));
    }

    let mut pool: Vec<usize> = (0..available_units).collect();
    for i in (1..pool.len()).rev() {
        let j = rng.gen_range(0..=i);
        pool.swap(i, j);
    }
    let mut take = |k: usize| -> Vec<usize> { pool.split_off(pool.len() - k) };

    let triple_set = take(triple);
    let pair_sets: Vec<Vec<usize>> = (0..m).map(|_| take(pair)).collect();
    let unique_sets: Vec<Vec<usize>> = (0..m).map(|_| take(unique)).collect();

    let mut patterns = Vec::with_capacity(m);
    for k in 0..m {
        let mut p = Vec::with_capacity(size);
        let mut push_unit = |p: &mut Vec<usize>, u: usize| {
            p.push(2 * u);
            p.push(2 * u + 1);
        };
        for &u in &unique_sets[k] {
            push_unit(&mut p, u);
        }
        for &u in &pair_sets[k] {
            push_unit(&mut p, u); // shared with the next pattern
        }
        for &u in &pair_sets[(k + m - 1) % m] {
            push_unit(&mut p, u); // shared with the previous pattern
        }
        for &u in &triple_set {
            push_unit(&mut p, u);
        }
        p.sort_unstable();
        patterns.push(p);
    }

    let spec = PatternSpec {
        patterns,
        pattern_size: size,
        pairwise_overlap: overlap,
        atrophy_scale: alpha,
        noise_sd: sigma,
    };
    spec.validate(num_features)?;
    Ok(spec)
}

/// Apply severity-scaled reductions: for subject `i`, pattern `k`, region
/// `j` in pattern `k`, `v_ij <- v_ij * (1 - s_ik * N(1, sigma) * alpha)`,
/// sequentially in pattern order for regions in several patterns. Returns
/// the modified volumes and the count of values clamped at the positive
/// floor.
pub fn impose_patterns<R: Rng + ?Sized>(
    baseline: &Mat,
    spec: &PatternSpec,
    severities: &Mat,
    rng: &mut R,
) -> Result<(Mat, usize)> {
    spec.validate(baseline.cols())?;
    if severities.rows() != baseline.rows() || severities.cols() != spec.num_patterns() {
        return Err(Error::shape(
            "impose_patterns",
            format!("{}x{} severities", baseline.rows(), spec.num_patterns()),
            format!("{}x{}", severities.rows(), severities.cols()),
        ));
    }
    if severities.data().iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidArgument("severities must lie in [0, 1]".into()));
    }
    let mut out = baseline.clone();
    let mut clamped = 0usize;
    for i in 0..out.rows() {
        for (k, regions) in spec.patterns.iter().enumerate() {
            let s = severities.get(i, k);
            for &j in regions {
                let noise = 1.0 + spec.noise_sd * standard_normal(rng);
                let v = out.get(i, j) * (1.0 - s * noise * spec.atrophy_scale);
                if v <= 0.0 {
                    clamped += 1;
                    out.set(i, j, 1e-6);
                } else {
                    out.set(i, j, v);
                }
            }
        }
    }
    Ok((out, clamped))
}

/// A generated cohort: reference rows, patient rows derived from held-out
/// baseline rows, and the planted severities.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cn: Mat,
    pub pt: Mat,
    pub truth: Mat,
    pub spec: PatternSpec,
    pub seed: u64,
    pub clamped: usize,
}

impl SyntheticCohort {
    /// View as a dataset with `cn_####` / `pt_####` subject ids and the
    /// truth attached to the PT rows.
    pub fn to_dataset(&self) -> Dataset {
        let n_cn = self.cn.rows();
        let n_pt = self.pt.rows();
        let s = self.cn.cols();
        let mut features = Mat::zeros(n_cn + n_pt, s);
        for i in 0..n_cn {
            features.row_mut(i).copy_from_slice(self.cn.row(i));
        }
        for i in 0..n_pt {
            features.row_mut(n_cn + i).copy_from_slice(self.pt.row(i));
        }
        let mut ids = Vec::with_capacity(n_cn + n_pt);
        let mut groups = Vec::with_capacity(n_cn + n_pt);
        for i in 0..n_cn {
            ids.push(format!("cn_{:04}", i + 1));
            groups.push(Group::Cn);
        }
        for i in 0..n_pt {
            ids.push(format!("pt_{:04}", i + 1));
            groups.push(Group::Pt);
        }
        Dataset {
            ids,
            groups,
            features,
            covariate_names: vec![],
            covariates: None,
            truth: Some(self.truth.clone()),
        }
    }
}

/// Generate a full cohort: `n_cn + n_pt` baselines from one generator, the
/// first `n_cn` kept untouched as the reference group, patterns imposed on
/// the rest under iid `U[0,1]^M` severities.
pub fn make_cohort(
    variant: Variant,
    n_cn: usize,
    n_pt: usize,
    num_features: usize,
    seed: u64,
) -> Result<SyntheticCohort> {
    if n_cn == 0 || n_pt == 0 || num_features == 0 {
        return Err(Error::InvalidArgument("cohort sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = build_pattern_spec(variant, num_features, &mut rng)?;
    let all = generate_baseline(n_cn + n_pt, num_features, &mut rng);
    let cn = all.gather_rows(&(0..n_cn).collect::<Vec<_>>());
    let pt_base = all.gather_rows(&(n_cn..n_cn + n_pt).collect::<Vec<_>>());
    let m = spec.num_patterns();
    let mut truth = Mat::zeros(n_pt, m);
    for v in truth.data_mut() {
        *v = rng.gen::<f64>();
    }
    let (pt, clamped) = impose_patterns(&pt_base, &spec, &truth, &mut rng)?;
    Ok(SyntheticCohort {
        cn,
        pt,
        truth,
        spec,
        seed,
        clamped,
    })
}

/// Default sizes mirroring the reference experiment: 492 reference rows,
/// 900 patient rows, 139 regions.
pub const DEFAULT_N_CN: usize = 492;
pub const DEFAULT_N_PT: usize = 900;
pub const DEFAULT_NUM_FEATURES: usize = 139;
