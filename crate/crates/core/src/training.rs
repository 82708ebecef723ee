//! Training loop: latent sampling, the interleaved per-batch updates of the
//! four networks, weight clipping, smoothed stopping criteria, and replica
//! orchestration.
//!
//! One iteration is one batch step. Within it the update order is fixed:
//! discriminator first (on the latents sampled at the top of the step),
//! then the transformation function on the full weighted objective (with
//! freshly sampled severity-conditioned and near-zero latents), then the
//! decomposer on its own term, then the reconstructor on its own term.
//! The transformation, decomposer and reconstructor are clipped right
//! after their updates; the discriminator is never clipped.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{clip_weights, AdamState};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::losses::{
    adversarial_grad_real, adversarial_grad_syn, adversarial_losses, change_train_grad,
    change_train_loss, cn_train_grad, cn_train_loss, decom_train_grads, decom_train_loss,
    generator_gan_grad, generator_gan_loss, masked_branches, mono_train_grads, mono_train_loss,
    ortho_train_grads, ortho_train_loss, recons_train_grad, recons_train_loss, total_generator_loss,
    LossReport, LossWeights,
};
use crate::mat::Mat;
use crate::networks::{ModelBundle, NetArch};
use crate::{Error, Result};

/// Everything a single training run depends on. Field defaults are the
/// published constants; see the per-field comments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_patterns: usize,
    pub weights: LossWeights,
    /// Discriminator learning rate (4e-5).
    pub lr_d: f64,
    /// Learning rate shared by the transformation and inverse networks (2e-4).
    pub lr_fg: f64,
    /// Clip bound for f/g1/g2 parameters (0.5).
    pub clip_bound: f64,
    /// Batch size as a fraction of the PT sample count (1/8).
    pub batch_fraction: f64,
    /// Earliest iteration at which the stopping criteria may fire (100000).
    pub min_iterations: u64,
    /// Hard iteration cap; hitting it flags the run as not converged.
    pub max_iterations: u64,
    /// Smoothed reconstruction-loss stopping threshold (0.003).
    pub recons_stop: f64,
    /// Smoothed monotonicity-loss stopping threshold (6e-4).
    pub mono_stop: f64,
    /// Exponential-moving-average decay for the stopping losses.
    pub ema_decay: f64,
    pub seed: u64,
    /// Iterations between observer callbacks / log lines.
    pub log_interval: u64,
    pub arch: NetArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_patterns: 3,
            weights: LossWeights::default(),
            lr_d: 4e-5,
            lr_fg: 2e-4,
            clip_bound: 0.5,
            batch_fraction: 0.125,
            min_iterations: 100_000,
            max_iterations: 300_000,
            recons_stop: 0.003,
            mono_stop: 6e-4,
            ema_decay: 0.999,
            seed: 0,
            log_interval: 1000,
            arch: NetArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.min_iterations > self.max_iterations {
            return Err(Error::InvalidArgument(format!(
                "min_iterations {} exceeds max_iterations {}",
                self.min_iterations, self.max_iterations
            )));
        }
        if !(self.recons_stop > 0.0 && self.mono_stop > 0.0) {
            return Err(Error::InvalidArgument("stopping thresholds must be positive".into()));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::InvalidArgument("batch_fraction must lie in (0, 1]".into()));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::InvalidArgument("clip_bound must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidArgument("ema_decay must lie in [0, 1)".into()));
        }
        if self.lr_d < 0.0 || self.lr_fg < 0.0 {
            return Err(Error::InvalidArgument("learning rates must be nonnegative".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidArgument("log_interval must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Latent sampling
// ---------------------------------------------------------------------------

/// `n x m` iid uniform draws from `[0, 1)`.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Mat {
    let mut z = Mat::zeros(n, m);
    for v in z.data_mut() {
        *v = rng.gen::<f64>();
    }
    z
}

/// Severity-conditioned companion: each entry uniform on `(z_ij, 1]`.
pub fn sample_severity_conditioned<R: Rng + ?Sized>(z: &Mat, rng: &mut R) -> Mat {
    let mut zp = z.clone();
    for v in zp.data_mut() {
        let u = 1.0 - rng.gen::<f64>(); // (0, 1]
        *v += (1.0 - *v) * u;
    }
    zp
}

/// Near-zero latents, iid uniform on the open interval `(0, 0.05)`.
pub fn sample_cn_latent<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Mat {
    let mut z = Mat::zeros(n, m);
    for v in z.data_mut() {
        let u = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        *v = 0.05 * u;
    }
    z
}

// ---------------------------------------------------------------------------
// One training step
// ---------------------------------------------------------------------------

/// Optimizer state for the four networks.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam_d: AdamState,
    pub adam_f: AdamState,
    pub adam_g1: AdamState,
    pub adam_g2: AdamState,
}

impl TrainState {
    pub fn new(bundle: &ModelBundle, cfg: &TrainConfig) -> Self {
        TrainState {
            adam_d: AdamState::for_params(cfg.lr_d, &bundle.d.param_slices()),
            adam_f: AdamState::for_params(cfg.lr_fg, &bundle.f.param_slices()),
            adam_g1: AdamState::for_params(cfg.lr_fg, &bundle.g1.param_slices()),
            adam_g2: AdamState::for_params(cfg.lr_fg, &bundle.g2.param_slices()),
        }
    }
}

/// Sub-step markers, recorded in execution order when a trace is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    UpdateD,
    UpdateF,
    ClipF,
    UpdateG1,
    ClipG1,
    UpdateG2,
    ClipG2,
}

/// One full batch step. `x` is the reference batch, `y` the patient batch.
pub fn train_step<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    x: &Mat,
    y: &Mat,
    cfg: &TrainConfig,
    state: &mut TrainState,
    rng: &mut R,
) -> Result<LossReport> {
    train_step_traced(bundle, x, y, cfg, state, rng, None)
}

pub fn train_step_traced<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    x: &Mat,
    y: &Mat,
    cfg: &TrainConfig,
    state: &mut TrainState,
    rng: &mut R,
    mut trace: Option<&mut Vec<StepEvent>>,
) -> Result<LossReport> {
    if x.rows() != y.rows() {
        return Err(Error::shape(
            "train step",
            format!("{} patient rows", x.rows()),
            format!("{} patient rows", y.rows()),
        ));
    }
    let n = x.rows();
    let m = bundle.num_patterns();
    let w = cfg.weights;
    let mut record = |e: StepEvent| {
        if let Some(t) = trace.as_mut() {
            t.push(e);
        }
    };
    let mut report = LossReport::zeros();

    // --- discriminator update ------------------------------------------------
    let z = sample_latent(n, m, rng);
    let enc = bundle.f.encode(x)?;
    let br_z = bundle.f.decode(&enc, &z)?;
    {
        let (p_real, cache_real) = bundle.d.forward(y)?;
        let (p_syn, cache_syn) = bundle.d.forward(&br_z.y)?;
        let adv = adversarial_losses(&p_real, &p_syn)?;
        report.gan_d = adv.loss_d;
        if !adv.loss_d.is_finite() {
            return Err(diverged(state, "non-finite discriminator loss", report));
        }
        let up_real = adversarial_grad_real(&p_real);
        let up_syn = adversarial_grad_syn(&p_syn);
        let d_grads = bundle
            .d
            .backward_params(&[(&cache_real, &up_real), (&cache_syn, &up_syn)])?;
        state
            .adam_d
            .step(&mut bundle.d.param_slices_mut(), &d_grads.slices())
            .map_err(|e| diverged(state, &e.to_string(), report))?;
        record(StepEvent::UpdateD);
    }

    // --- transformation update ------------------------------------------------
    // f is untouched so far, so the encoder cache and the z branch stay valid;
    // the discriminator changed, so its forward pass is rerun.
    let zp = sample_severity_conditioned(&z, rng);
    let zcn = sample_cn_latent(n, m, rng);
    {
        let br_zp = bundle.f.decode(&enc, &zp)?;
        let br_cn = bundle.f.decode(&enc, &zcn)?;
        let br_mask = masked_branches(&bundle.f, &enc, &z)?;
        let q: Vec<Mat> = br_mask
            .iter()
            .map(|b| b.y.zip_map(x, |a, c| a - c))
            .collect();
        let (p_syn, d_cache) = bundle.d.forward(&br_z.y)?;
        let (g1_out, g1_cache) = bundle.g1.forward(&br_z.y)?;
        let (r_hat, g2_cache) = bundle.g2.forward(&g1_out)?;

        let (gan_f, _) = generator_gan_loss(&p_syn)?;
        report.gan_f = gan_f;
        report.change = change_train_loss(x, &br_z.y)?;
        report.decom = decom_train_loss(&g1_out, &q)?;
        report.recons = recons_train_loss(&r_hat, &z)?;
        report.ortho = ortho_train_loss(&q)?;
        report.mono = mono_train_loss(x, &br_z.y, &br_zp.y)?;
        report.cn = cn_train_loss(x, &br_cn.y)?;
        report.total_f = total_generator_loss(&report, &w);
        if !report.is_finite() {
            return Err(diverged(state, "non-finite generator loss", report));
        }

        // Gradient w.r.t. the main synthesized batch accumulates the
        // adversarial, change, monotonicity, and (through g1/g2) the
        // decomposition and reconstruction paths.
        let mut dy_z = bundle.d.backward_input(&d_cache, &generator_gan_grad(&p_syn))?;
        dy_z.add_scaled(&change_train_grad(x, &br_z.y), w.gamma);
        let (dg1_decom, dq_decom) = decom_train_grads(&g1_out, &q)?;
        let dg1_recons = bundle
            .g2
            .backward_input(&g2_cache, &recons_train_grad(&r_hat, &z))?;
        let mut dg1 = dg1_decom;
        dg1.scale(w.kappa);
        dg1.add_scaled(&dg1_recons, w.zeta);
        dy_z.add_assign(&bundle.g1.backward_input(&g1_cache, &dg1)?);
        let (dmono_z, dmono_zp) = mono_train_grads(x, &br_z.y, &br_zp.y)?;
        dy_z.add_scaled(&dmono_z, w.mu);
        let mut dy_zp = dmono_zp;
        dy_zp.scale(w.mu);
        let mut dy_cn = cn_train_grad(x, &br_cn.y);
        dy_cn.scale(w.eta);
        let dq_ortho = ortho_train_grads(&q)?;
        let dq_total: Vec<Mat> = dq_decom
            .into_iter()
            .zip(dq_ortho)
            .map(|(mut d, o)| {
                d.scale(w.kappa);
                d.add_scaled(&o, w.lambda);
                d
            })
            .collect();

        let mut branches = vec![&br_z, &br_zp, &br_cn];
        branches.extend(br_mask.iter());
        let mut ups = vec![&dy_z, &dy_zp, &dy_cn];
        ups.extend(dq_total.iter());
        let f_grads = bundle.f.backward_branches(&enc, &branches, &ups)?;
        state
            .adam_f
            .step(&mut bundle.f.param_slices_mut(), &f_grads.slices())
            .map_err(|e| diverged(state, &e.to_string(), report))?;
        record(StepEvent::UpdateF);
        clip_weights(&mut bundle.f.param_slices_mut(), cfg.clip_bound);
        record(StepEvent::ClipF);
    }

    // --- decomposer update -----------------------------------------------------
    // f changed, so its outputs are recomputed at the current parameters.
    let enc2 = bundle.f.encode(x)?;
    let br2 = bundle.f.decode(&enc2, &z)?;
    {
        let mask2 = masked_branches(&bundle.f, &enc2, &z)?;
        let q2: Vec<Mat> = mask2
            .iter()
            .map(|b| b.y.zip_map(x, |a, c| a - c))
            .collect();
        let (g1_out, g1_cache) = bundle.g1.forward(&br2.y)?;
        let (dg1, _) = decom_train_grads(&g1_out, &q2)?;
        let g1_grads = bundle.g1.backward_params(&g1_cache, &dg1)?;
        state
            .adam_g1
            .step(&mut bundle.g1.param_slices_mut(), &g1_grads.slices())
            .map_err(|e| diverged(state, &e.to_string(), report))?;
        record(StepEvent::UpdateG1);
        clip_weights(&mut bundle.g1.param_slices_mut(), cfg.clip_bound);
        record(StepEvent::ClipG1);
    }

    // --- reconstructor update ---------------------------------------------------
    // g1 changed; f did not, so the synthesized batch is reused.
    {
        let (g1_out, _) = bundle.g1.forward(&br2.y)?;
        let (r_hat, g2_cache) = bundle.g2.forward(&g1_out)?;
        let (_, g2_grads) = bundle.g2.backward(&g2_cache, &recons_train_grad(&r_hat, &z), false)?;
        state
            .adam_g2
            .step(&mut bundle.g2.param_slices_mut(), &g2_grads.slices())
            .map_err(|e| diverged(state, &e.to_string(), report))?;
        record(StepEvent::UpdateG2);
        clip_weights(&mut bundle.g2.param_slices_mut(), cfg.clip_bound);
        record(StepEvent::ClipG2);
    }

    Ok(report)
}

fn diverged(state: &TrainState, reason: &str, report: LossReport) -> Error {
    Error::Diverged {
        iteration: state.adam_f.step_count(),
        reason: reason.to_string(),
        last_report: Box::new(report),
    }
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

/// Stopping rule: both smoothed losses under their thresholds, and the
/// minimum iteration count reached.
pub fn should_stop(iteration: u64, ema_recons: f64, ema_mono: f64, cfg: &TrainConfig) -> bool {
    iteration >= cfg.min_iterations && ema_recons < cfg.recons_stop && ema_mono < cfg.mono_stop
}

/// Observer payload, delivered every `log_interval` iterations.
pub struct TrainLog<'a> {
    pub iteration: u64,
    pub report: &'a LossReport,
    pub ema_recons: f64,
    pub ema_mono: f64,
    pub bundle: &'a ModelBundle,
}

/// Epoch-style batch scheduler over one partition's row indices.
struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSchedule {
    fn new(rows: usize) -> Self {
        BatchSchedule {
            order: (0..rows).collect(),
            pos: usize::MAX, // force an initial shuffle
        }
    }

    fn next_batch<R: Rng + ?Sized>(&mut self, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.pos > self.order.len().saturating_sub(batch) {
            shuffle(&mut self.order, rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + batch].to_vec();
        self.pos += batch;
        out
    }
}

fn shuffle<R: Rng + ?Sized>(v: &mut [usize], rng: &mut R) {
    // Fisher-Yates; explicit so the draw sequence is pinned by this crate.
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_observed(ds, cfg, |_| {})
}

/// Train with a per-`log_interval` observer (loss logging, invariant checks).
pub fn train_observed(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&TrainLog),
) -> Result<Checkpoint> {
    cfg.validate()?;
    ds.validate()?;
    let cn = ds.cn_features();
    let pt = ds.pt_features();
    if cn.rows() == 0 || pt.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "both partitions must be nonempty (CN {}, PT {})",
            cn.rows(),
            pt.rows()
        )));
    }
    let batch = ((pt.rows() as f64 * cfg.batch_fraction).floor() as usize).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bundle = ModelBundle::init_with_rng(cfg.num_patterns, pt.cols(), cfg.arch, &mut rng)?;
    let mut state = TrainState::new(&bundle, cfg);

    let mut pt_sched = BatchSchedule::new(pt.rows());
    let cn_with_replacement = cn.rows() < pt.rows();
    let mut cn_sched = BatchSchedule::new(cn.rows());

    let mut ema_recons = f64::INFINITY;
    let mut ema_mono = f64::INFINITY;
    let mut last_report = LossReport::zeros();
    let mut iteration = 0u64;
    let mut converged = false;

    while iteration < cfg.max_iterations {
        iteration += 1;
        let y_idx = pt_sched.next_batch(batch, &mut rng);
        let x_idx = if cn_with_replacement {
            (0..batch).map(|_| rng.gen_range(0..cn.rows())).collect()
        } else {
            cn_sched.next_batch(batch, &mut rng)
        };
        let x = cn.gather_rows(&x_idx);
        let y = pt.gather_rows(&y_idx);

        let report = train_step(&mut bundle, &x, &y, cfg, &mut state, &mut rng).map_err(|e| {
            match e {
                Error::Diverged { reason, last_report, .. } => Error::Diverged {
                    iteration,
                    reason,
                    last_report,
                },
                other => other,
            }
        })?;

        if ema_recons.is_finite() {
            ema_recons = cfg.ema_decay * ema_recons + (1.0 - cfg.ema_decay) * report.recons;
            ema_mono = cfg.ema_decay * ema_mono + (1.0 - cfg.ema_decay) * report.mono;
        } else {
            ema_recons = report.recons;
            ema_mono = report.mono;
        }
        last_report = report;

        if iteration % cfg.log_interval == 0 {
            on_log(&TrainLog {
                iteration,
                report: &last_report,
                ema_recons,
                ema_mono,
                bundle: &bundle,
            });
        }

        if should_stop(iteration, ema_recons, ema_mono, cfg) {
            converged = true;
            break;
        }
    }

    Ok(Checkpoint::from_bundle(
        &bundle,
        cfg.clone(),
        iteration,
        converged,
        last_report,
    ))
}

/// Independent replicas with seeds `base_seed + i`, run in parallel.
/// Replica results come back in replica order regardless of scheduling.
pub fn train_replicas(
    ds: &Dataset,
    cfg: &TrainConfig,
    n_replicas: usize,
    base_seed: u64,
) -> Result<Vec<Checkpoint>> {
    if n_replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = base_seed + i as u64;
            train(ds, &c).map_err(|e| Error::Replica {
                replica: i,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;

    fn small_config() -> TrainConfig {
        TrainConfig {
            num_patterns: 2,
            arch: NetArch { hidden1: 10, hidden2: 6 },
            min_iterations: 0,
            max_iterations: 3,
            log_interval: 1,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn toy_dataset(n_cn: usize, n_pt: usize, s: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut features = Mat::zeros(n_cn + n_pt, s);
        for (i, v) in features.data_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).sin() + rng.gen::<f64>() * 0.1;
        }
        // Shift PT rows so the two distributions differ.
        for i in n_cn..n_cn + n_pt {
            for v in features.row_mut(i) {
                *v -= 0.8;
            }
        }
        Dataset {
            ids: (0..n_cn + n_pt).map(|i| format!("s{i}")).collect(),
            groups: (0..n_cn + n_pt)
                .map(|i| if i < n_cn { Group::Cn } else { Group::Pt })
                .collect(),
            features,
            covariate_names: vec![],
            covariates: None,
            truth: None,
        }
    }

    #[test]
    fn latent_samples_stay_in_range_and_reproduce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_latent(100, 3, &mut rng);
        assert!(z.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(z, sample_latent(100, 3, &mut rng2));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = sample_latent(100_000, 1, &mut rng);
        let mean = big.data().iter().sum::<f64>() / big.data().len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn severity_conditioned_dominates_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = sample_latent(200, 3, &mut rng);
        let zp = sample_severity_conditioned(&z, &mut rng);
        for (a, b) in z.data().iter().zip(zp.data()) {
            assert!(b >= a && *b <= 1.0);
        }
        // Boundary behavior.
        let zeros = Mat::zeros(500, 1);
        let zp0 = sample_severity_conditioned(&zeros, &mut rng);
        assert!(zp0.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        let nines = Mat::from_vec(500, 1, vec![0.9; 500]);
        let zp9 = sample_severity_conditioned(&nines, &mut rng);
        assert!(zp9.data().iter().all(|&v| v > 0.9 && v <= 1.0));
    }

    #[test]
    fn cn_latents_are_small_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = sample_cn_latent(100_000, 1, &mut rng);
        assert!(z.data().iter().all(|&v| v > 0.0 && v < 0.05));
        let mean = z.data().iter().sum::<f64>() / z.data().len() as f64;
        assert!((mean - 0.025).abs() < 0.001, "mean {mean}");
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(z, sample_cn_latent(100_000, 1, &mut rng2));
    }

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let mut cfg = small_config();
        cfg.lr_d = 0.0;
        cfg.lr_fg = 0.0;
        // Wide enough that every fan-based init bound stays inside the clip
        // bound; otherwise the first clip would alter untrained weights.
        cfg.arch = NetArch { hidden1: 24, hidden2: 24 };
        let ds = toy_dataset(16, 24, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bundle = ModelBundle::init_with_rng(2, 7, cfg.arch, &mut rng).unwrap();
        let before: Vec<Vec<f64>> = bundle
            .f
            .param_slices()
            .iter()
            .chain(bundle.d.param_slices().iter())
            .map(|s| s.to_vec())
            .collect();
        let mut state = TrainState::new(&bundle, &cfg);
        let x = ds.cn_features().gather_rows(&(0..8).collect::<Vec<_>>());
        let y = ds.pt_features().gather_rows(&(0..8).collect::<Vec<_>>());
        let report = train_step(&mut bundle, &x, &y, &cfg, &mut state, &mut rng).unwrap();
        assert!(report.is_finite());
        let after: Vec<Vec<f64>> = bundle
            .f
            .param_slices()
            .iter()
            .chain(bundle.d.param_slices().iter())
            .map(|s| s.to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn generator_weights_respect_clip_bound_after_each_step() {
        let cfg = small_config();
        let ds = toy_dataset(16, 24, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut bundle = ModelBundle::init_with_rng(2, 7, cfg.arch, &mut rng).unwrap();
        let mut state = TrainState::new(&bundle, &cfg);
        let x = ds.cn_features().gather_rows(&(0..8).collect::<Vec<_>>());
        let y = ds.pt_features().gather_rows(&(0..8).collect::<Vec<_>>());
        for _ in 0..3 {
            train_step(&mut bundle, &x, &y, &cfg, &mut state, &mut rng).unwrap();
            assert!(bundle.max_abs_weight_f() <= cfg.clip_bound);
            assert!(bundle.max_abs_weight_g1() <= cfg.clip_bound);
            assert!(bundle.max_abs_weight_g2() <= cfg.clip_bound);
        }
    }

    #[test]
    fn step_trace_matches_prescribed_order() {
        let cfg = small_config();
        let ds = toy_dataset(16, 24, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut bundle = ModelBundle::init_with_rng(2, 7, cfg.arch, &mut rng).unwrap();
        let mut state = TrainState::new(&bundle, &cfg);
        let x = ds.cn_features().gather_rows(&(0..8).collect::<Vec<_>>());
        let y = ds.pt_features().gather_rows(&(0..8).collect::<Vec<_>>());
        let mut trace = Vec::new();
        train_step_traced(&mut bundle, &x, &y, &cfg, &mut state, &mut rng, Some(&mut trace))
            .unwrap();
        assert_eq!(
            trace,
            vec![
                StepEvent::UpdateD,
                StepEvent::UpdateF,
                StepEvent::ClipF,
                StepEvent::UpdateG1,
                StepEvent::ClipG1,
                StepEvent::UpdateG2,
                StepEvent::ClipG2,
            ]
        );
    }

    #[test]
    fn zero_iteration_budget_returns_unconverged_initial_checkpoint() {
        let mut cfg = small_config();
        cfg.max_iterations = 0;
        cfg.min_iterations = 0;
        let ds = toy_dataset(16, 24, 7);
        let ckpt = train(&ds, &cfg).unwrap();
        assert_eq!(ckpt.iteration, 0);
        assert!(!ckpt.converged);
        let bundle = ckpt.bundle().unwrap();
        assert_eq!(bundle.num_features(), 7);
    }

    #[test]
    fn identical_config_and_seed_reproduce_bit_identical_checkpoints() {
        let cfg = small_config();
        let ds = toy_dataset(16, 24, 7);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn stopping_rule_truth_table() {
        let cfg = TrainConfig::default();
        assert!(!should_stop(99_999, 0.001, 1e-5, &cfg));
        assert!(should_stop(100_000, 0.001, 1e-5, &cfg));
        assert!(!should_stop(1_000_000, 0.004, 1e-5, &cfg));
        assert!(!should_stop(1_000_000, 0.001, 7e-4, &cfg));
        assert!(!should_stop(100_000, 0.003, 6e-4, &cfg)); // strict inequality
    }

    #[test]
    fn loosening_thresholds_never_delays_stopping() {
        let ds = toy_dataset(16, 24, 7);
        let mut tight = small_config();
        tight.max_iterations = 30;
        tight.min_iterations = 5;
        tight.recons_stop = 0.9; // generous enough to fire quickly here
        tight.mono_stop = 0.9;
        let at_tight = train(&ds, &tight).unwrap().iteration;
        let mut loose = tight.clone();
        loose.recons_stop = 10.0;
        loose.mono_stop = 10.0;
        let at_loose = train(&ds, &loose).unwrap().iteration;
        assert!(at_loose <= at_tight);
    }

    #[test]
    fn replicas_match_serial_runs_and_report_indices_on_failure() {
        let cfg = small_config();
        let ds = toy_dataset(16, 24, 7);
        let replicas = train_replicas(&ds, &cfg, 2, 100).unwrap();
        for (i, r) in replicas.iter().enumerate() {
            let mut c = cfg.clone();
            c.seed = 100 + i as u64;
            let serial = train(&ds, &c).unwrap();
            assert_eq!(
                serde_json::to_string(r).unwrap(),
                serde_json::to_string(&serial).unwrap()
            );
        }
    }

    #[test]
    fn discriminator_step_improves_on_separable_toy_in_expectation() {
        // Two-feature toy with well-separated CN/PT clouds; the generator
        // stays frozen so only the discriminator learns.
        let mut improvements = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut cfg = TrainConfig {
                num_patterns: 1,
                arch: NetArch { hidden1: 8, hidden2: 5 },
                lr_fg: 0.0,
                lr_d: 1e-3,
                ..TrainConfig::default()
            };
            cfg.seed = seed;
            let n = 24;
            let mut x = Mat::zeros(n, 2);
            let mut y = Mat::zeros(n, 2);
            for i in 0..n {
                x.set(i, 0, rng.gen::<f64>() - 2.0);
                x.set(i, 1, rng.gen::<f64>());
                y.set(i, 0, rng.gen::<f64>() + 2.0);
                y.set(i, 1, rng.gen::<f64>());
            }
            let mut bundle = ModelBundle::init_with_rng(1, 2, cfg.arch, &mut rng).unwrap();
            let mut state = TrainState::new(&bundle, &cfg);
            let report1 = train_step(&mut bundle, &x, &y, &cfg, &mut state, &mut rng).unwrap();
            let report2 = train_step(&mut bundle, &x, &y, &cfg, &mut state, &mut rng).unwrap();
            improvements.push(report1.gan_d - report2.gan_d);
        }
        let mean: f64 = improvements.iter().sum::<f64>() / improvements.len() as f64;
        assert!(mean > 0.0, "discriminator loss should fall on average: {mean}");
        // And after a few steps the discriminator separates the clouds.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = TrainConfig {
            num_patterns: 1,
            arch: NetArch { hidden1: 8, hidden2: 5 },
            lr_fg: 0.0,
            lr_d: 2e-3,
            ..TrainConfig::default()
        };
        let n = 32;
        let mut x = Mat::zeros(n, 2);
        let mut y = Mat::zeros(n, 2);
        for i in 0..n {
            x.set(i, 0, rng.gen::<f64>() - 2.0);
            x.set(i, 1, rng.gen::<f64>());
            y.set(i, 0, rng.gen::<f64>() + 2.0);
            y.set(i, 1, rng.gen::<f64>());
        }
        let mut bundle = ModelBundle::init_with_rng(1, 2, cfg.arch, &mut rng).unwrap();
        let mut state = TrainState::new(&bundle, &cfg);
        for _ in 0..60 {
            train_step(&mut bundle, &x, &y, &cfg, &mut state, &mut rng).unwrap();
        }
        let z = sample_latent(n, 1, &mut rng);
        let y_syn = bundle.transform(&x, &z).unwrap();
        let p_real = bundle.discriminate(&y).unwrap();
        let p_syn = bundle.discriminate(&y_syn).unwrap();
        let mean_real: f64 = (0..n).map(|i| p_real.get(i, 1)).sum::<f64>() / n as f64;
        let mean_syn: f64 = (0..n).map(|i| p_syn.get(i, 1)).sum::<f64>() / n as f64;
        assert!(
            mean_real > mean_syn,
            "D(real) {mean_real:.3} should exceed D(synthetic) {mean_syn:.3}"
        );
    }

    #[test]
    fn empty_partition_is_rejected() {
        let cfg = small_config();
        let mut ds = toy_dataset(4, 6, 5);
        ds.groups.iter_mut().for_each(|g| *g = Group::Pt);
        assert!(train(&ds, &cfg).is_err());
    }
}
