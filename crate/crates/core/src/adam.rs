//! ADAM optimizer over flat parameter tensors, plus weight clipping.

use crate::{Error, Result};

/// Per-network ADAM state. `m` and `v` mirror the network's parameter
/// tensors in declaration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// State with `beta1 = 0.5`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&[f64]]) -> Self {
        Self::new(lr, &params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected ADAM update. Fails on non-finite gradient entries,
    /// which signals a diverged training run to the caller.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam step",
                format!("{} tensors", self.m.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), acc) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != acc.len() || g.len() != acc.len() {
                return Err(Error::shape(
                    "adam step tensor",
                    format!("{} entries", acc.len()),
                    format!("{} params / {} grads", p.len(), g.len()),
                ));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "non-finite gradient entries in adam step".into(),
                ));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Clamp every entry of every tensor into `[-bound, bound]`.
pub fn clip_weights(params: &mut [&mut [f64]], bound: f64) {
    assert!(bound > 0.0, "clip bound must be positive");
    for tensor in params.iter_mut() {
        for v in tensor.iter_mut() {
            *v = v.clamp(-bound, bound);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_a_noop_on_parameters() {
        let mut p = vec![0.3, -0.7, 1.5];
        let g = vec![0.0; 3];
        let mut adam = AdamState::new(1e-3, &[3]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7, 1.5]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_equals_closed_form() {
        // With m_hat = g and v_hat = g^2 after bias correction, the first
        // update is -lr * g / (|g| + eps).
        for &g in &[0.25f64, -3.0, 1e-6] {
            let mut p = vec![1.0];
            let grad = vec![g];
            let lr = 2e-4;
            let mut adam = AdamState::new(lr, &[1]);
            adam.step(&mut [&mut p], &[&grad]).unwrap();
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "g={g}: {} vs {expected}", p[0]);
        }
    }

    #[test]
    fn constant_gradient_moves_parameter_monotonically() {
        let mut p = vec![0.0];
        let grad = vec![0.7];
        let mut adam = AdamState::new(1e-3, &[1]);
        let mut prev = p[0];
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[&grad]).unwrap();
            assert!(p[0] < prev, "positive gradient must decrease the parameter");
            prev = p[0];
        }
    }

    #[test]
    fn non_finite_gradient_is_a_training_fault() {
        let mut p = vec![1.0];
        let grad = vec![f64::NAN];
        let mut adam = AdamState::new(1e-3, &[1]);
        assert!(adam.step(&mut [&mut p], &[&grad]).is_err());
    }

    #[test]
    fn clip_hand_cases() {
        let mut t = vec![0.7, -0.7, 0.3];
        clip_weights(&mut [&mut t], 0.5);
        assert_eq!(t, vec![0.5, -0.5, 0.3]);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 1..64),
                              bound in 0.01f64..5.0) {
            let mut once = values.clone();
            clip_weights(&mut [&mut once], bound);
            let mut twice = once.clone();
            clip_weights(&mut [&mut twice], bound);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn adam_zero_grads_noop_for_any_step_count(steps in 1u64..50) {
            // With zero gradients both moments stay zero, so parameters are
            // untouched no matter how many steps run.
            let mut p = vec![0.1, 0.2, -0.3, 0.4];
            let snapshot = p.clone();
            let mut adam = AdamState::new(1e-3, &[4]);
            let zeros = vec![0.0; 4];
            for _ in 0..steps {
                adam.step(&mut [&mut p], &[&zeros]).unwrap();
            }
            prop_assert_eq!(p, snapshot);
            prop_assert_eq!(adam.step_count(), steps);
        }
    }
}
