//! Dense-layer primitives: activations, forward/backward passes, and the
//! fan-based uniform initializer shared by all four networks.
//!
//! A layer's backward pass takes the `(input, preactivation)` pair its own
//! forward pass produced; that pair is the cache. Gradients are exact under
//! the chain rule and are checked against central finite differences in the
//! tests (and again, per network and loss term, in the acceptance suite).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mat::{accumulate_param_grads, affine, grad_input, Mat};
use crate::{Error, Result};

/// Negative-side slope of the leaky rectifier, fixed everywhere it appears.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    /// Apply the activation to a batch of preactivations.
    pub fn apply(self, pre: &Mat) -> Mat {
        match self {
            Activation::Identity => pre.clone(),
            Activation::LeakyRelu => pre.map(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v }),
            Activation::Sigmoid => pre.map(sigmoid),
            Activation::Softmax => {
                let mut out = pre.clone();
                for i in 0..out.rows() {
                    softmax_row(out.row_mut(i));
                }
                out
            }
        }
    }

    /// Map `dL/d output` to `dL/d preactivation`.
    pub fn backprop(self, pre: &Mat, upstream: &Mat) -> Mat {
        assert_eq!(pre.shape(), upstream.shape(), "activation backprop shape");
        match self {
            Activation::Identity => upstream.clone(),
            Activation::LeakyRelu => {
                pre.zip_map(upstream, |p, u| if p >= 0.0 { u } else { LEAKY_SLOPE * u })
            }
            Activation::Sigmoid => pre.zip_map(upstream, |p, u| {
                let s = sigmoid(p);
                u * s * (1.0 - s)
            }),
            Activation::Softmax => {
                // dpre_j = p_j * (u_j - sum_k u_k p_k)
                let mut out = Mat::zeros(pre.rows(), pre.cols());
                for i in 0..pre.rows() {
                    let mut p = pre.row(i).to_vec();
                    softmax_row(&mut p);
                    let u = upstream.row(i);
                    let dot: f64 = u.iter().zip(&p).map(|(&uv, &pv)| uv * pv).sum();
                    for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                        *o = p[j] * (u[j] - dot);
                    }
                }
                out
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// A dense layer `y = activation(x W^T + b)`.
///
/// Weights are stored transposed (`in_dim x out_dim`) so the batch kernels
/// stream contiguously; the logical shape remains `out_dim x in_dim`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    wt: Mat,
    bias: Option<Vec<f64>>,
    activation: Activation,
}

/// Per-layer parameter gradients, shape-congruent with the layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dwt: Mat,
    pub dbias: Option<Vec<f64>>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            dwt: Mat::zeros(layer.wt.rows(), layer.wt.cols()),
            dbias: layer.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads) {
        self.dwt.add_assign(&other.dwt);
        if let (Some(a), Some(b)) = (self.dbias.as_mut(), other.dbias.as_ref()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.dwt.data()];
        if let Some(b) = &self.dbias {
            out.push(b.as_slice());
        }
        out
    }
}

impl DenseLayer {
    /// New layer with weights drawn from `U[-a, a]`, `a = sqrt(6 / (in + out))`,
    /// and zero-initialised bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut wt = Mat::zeros(in_dim, out_dim);
        for v in wt.data_mut() {
            let u: f64 = rng.gen();
            *v = (2.0 * u - 1.0) * a;
        }
        DenseLayer {
            wt,
            bias: with_bias.then(|| vec![0.0; out_dim]),
            activation,
        }
    }

    /// Layer with explicit parameters (checkpoint loading, tests).
    pub fn from_parts(wt: Mat, bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != wt.cols() {
                return Err(Error::shape(
                    "dense layer bias",
                    format!("{}", wt.cols()),
                    format!("{}", b.len()),
                ));
            }
        }
        Ok(DenseLayer { wt, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.wt.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.wt.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Transposed weight matrix (`in_dim x out_dim`).
    pub fn weights_t(&self) -> &Mat {
        &self.wt
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Forward pass over a batch. Returns `(output, preactivation)`; the
    /// preactivation (with the input) is the cache the backward pass needs.
    pub fn forward(&self, x: &Mat) -> Result<(Mat, Mat)> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense forward",
                format!("{} input columns", self.in_dim()),
                format!("{} input columns", x.cols()),
            ));
        }
        let pre = affine(x, &self.wt, self.bias.as_deref());
        let out = self.activation.apply(&pre);
        Ok((out, pre))
    }

    fn check_cache(&self, x: &Mat, pre: &Mat, upstream: &Mat) -> Result<()> {
        if x.cols() != self.in_dim()
            || pre.cols() != self.out_dim()
            || x.rows() != pre.rows()
            || upstream.shape() != pre.shape()
        {
            return Err(Error::shape(
                "dense backward",
                format!(
                    "input {}x{}, cache/upstream {}x{}",
                    pre.rows(),
                    self.in_dim(),
                    pre.rows(),
                    self.out_dim()
                ),
                format!(
                    "input {}x{}, cache {}x{}, upstream {}x{}",
                    x.rows(),
                    x.cols(),
                    pre.rows(),
                    pre.cols(),
                    upstream.rows(),
                    upstream.cols()
                ),
            ));
        }
        Ok(())
    }

    /// Full backward pass: gradients w.r.t. input, weights and bias.
    pub fn backward(&self, x: &Mat, pre: &Mat, upstream: &Mat) -> Result<(Mat, LayerGrads)> {
        self.check_cache(x, pre, upstream)?;
        let dpre = self.activation.backprop(pre, upstream);
        let mut grads = LayerGrads::zeros_like(self);
        accumulate_param_grads(x, &dpre, &mut grads.dwt, grads.dbias.as_mut());
        let dx = grad_input(&dpre, &self.wt);
        Ok((dx, grads))
    }

    /// Input gradient only (used when chaining through a frozen layer).
    pub fn backward_input(&self, pre: &Mat, upstream: &Mat) -> Result<Mat> {
        if pre.cols() != self.out_dim() || upstream.shape() != pre.shape() {
            return Err(Error::shape(
                "dense backward_input",
                format!("{} columns", self.out_dim()),
                format!("{} / {} columns", pre.cols(), upstream.cols()),
            ));
        }
        let dpre = self.activation.backprop(pre, upstream);
        Ok(grad_input(&dpre, &self.wt))
    }

    /// Parameter gradients only, accumulated into `grads`.
    pub fn backward_params_into(
        &self,
        x: &Mat,
        pre: &Mat,
        upstream: &Mat,
        grads: &mut LayerGrads,
    ) -> Result<()> {
        self.check_cache(x, pre, upstream)?;
        let dpre = self.activation.backprop(pre, upstream);
        accumulate_param_grads(x, &dpre, &mut grads.dwt, grads.dbias.as_mut());
        Ok(())
    }

    /// Flat views of the parameter tensors, weights first.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.wt.data()];
        if let Some(b) = &self.bias {
            out.push(b.as_slice());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.wt.data_mut()];
        if let Some(b) = &mut self.bias {
            out.push(b.as_mut_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize) -> DenseLayer {
        let mut wt = Mat::zeros(dim, dim);
        for i in 0..dim {
            wt.set(i, i, 1.0);
        }
        DenseLayer::from_parts(wt, None, Activation::Identity).unwrap()
    }

    #[test]
    fn identity_forward_passes_input_through() {
        let layer = identity_layer(2);
        let x = Mat::from_rows(&[vec![1.0, 2.0]]);
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn leaky_relu_uses_slope_point_two() {
        let pre = Mat::from_rows(&[vec![-1.0, 1.0]]);
        let out = Activation::LeakyRelu.apply(&pre);
        assert_eq!(out.row(0), &[-0.2, 1.0]);
    }

    #[test]
    fn sigmoid_midpoint() {
        let pre = Mat::from_rows(&[vec![0.0]]);
        let out = Activation::Sigmoid.apply(&pre);
        assert_eq!(out.row(0), &[0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_lie_in_open_interval() {
        let pre = Mat::from_rows(&[vec![3.0, -1.0, 0.5], vec![100.0, 100.0, 100.0]]);
        let out = Activation::Softmax.apply(&pre);
        for i in 0..out.rows() {
            let s: f64 = out.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(out.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn identity_backward_passes_upstream_through() {
        let layer = identity_layer(2);
        let x = Mat::from_rows(&[vec![0.3, -0.4]]);
        let (_, pre) = layer.forward(&x).unwrap();
        let up = Mat::from_rows(&[vec![1.0, 0.0]]);
        let (dx, _) = layer.backward(&x, &pre, &up).unwrap();
        assert_eq!(dx.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn leaky_backward_scales_negative_preactivations() {
        let pre = Mat::from_rows(&[vec![-3.0]]);
        let up = Mat::from_rows(&[vec![1.0]]);
        let d = Activation::LeakyRelu.backprop(&pre, &up);
        assert_eq!(d.row(0), &[0.2]);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let layer = identity_layer(2);
        let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let err = layer.forward(&x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 2"), "{msg}");
        assert!(msg.contains("got 3"), "{msg}");
    }

    #[test]
    fn backward_matches_finite_differences_on_random_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &act in &[
            Activation::LeakyRelu,
            Activation::Sigmoid,
            Activation::Softmax,
            Activation::Identity,
        ] {
            let mut layer = DenseLayer::new(4, 5, true, act, &mut rng);
            let x = Mat::from_vec(5, 4, (0..20).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect());
            // Scalar loss: weighted sum of outputs. Unstructured weights so
            // no analytic gradient cancels to exactly zero (a zero gradient
            // makes the relative-error denominator collapse to its floor).
            let w: Vec<f64> = (0..25).map(|i| (i as f64 * 0.97).sin() + 0.1).collect();
            let loss = |l: &DenseLayer| -> f64 {
                let (y, _) = l.forward(&x).unwrap();
                y.data().iter().zip(&w).map(|(&a, &b)| a * b).sum()
            };
            let (y, pre) = layer.forward(&x).unwrap();
            let up = Mat::from_vec(y.rows(), y.cols(), w.clone());
            let (_, grads) = layer.backward(&x, &pre, &up).unwrap();

            let h = 1e-5;
            let mut max_rel = 0.0f64;
            let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
            for (t, tensor) in analytic.iter().enumerate() {
                for (j, &a) in tensor.iter().enumerate() {
                    let orig = layer.param_slices_mut()[t][j];
                    layer.param_slices_mut()[t][j] = orig + h;
                    let lp = loss(&layer);
                    layer.param_slices_mut()[t][j] = orig - h;
                    let lm = loss(&layer);
                    layer.param_slices_mut()[t][j] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
            assert!(max_rel < 1e-4, "{act:?}: max rel err {max_rel}");
        }
    }
}
