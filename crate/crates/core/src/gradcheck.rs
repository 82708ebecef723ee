//! Central finite-difference verification of analytic gradients.
//!
//! The checker is deliberately independent of the backward passes it
//! validates: it only re-evaluates a scalar loss under parameter
//! perturbations.

/// Max over all parameters of the relative error between `analytic` and the
/// central difference `(L(p + h) - L(p - h)) / 2h`.
///
/// `analytic` must mirror the subject's parameter tensors in order and
/// length. Relative error is `|a - fd| / max(|a|, |fd|, 1e-8)`.
pub fn finite_difference_check<T>(
    subject: &mut T,
    params_of: impl Fn(&mut T) -> Vec<&mut [f64]>,
    analytic: &[&[f64]],
    loss: impl Fn(&T) -> f64,
    h: f64,
) -> f64 {
    let shapes: Vec<usize> = params_of(subject).iter().map(|t| t.len()).collect();
    assert_eq!(shapes.len(), analytic.len(), "analytic tensor count mismatch");
    for (s, a) in shapes.iter().zip(analytic) {
        assert_eq!(*s, a.len(), "analytic tensor length mismatch");
    }

    let mut max_rel = 0.0f64;
    for (t, len) in shapes.iter().enumerate() {
        for j in 0..*len {
            let orig = params_of(subject)[t][j];
            params_of(subject)[t][j] = orig + h;
            let lp = loss(subject);
            params_of(subject)[t][j] = orig - h;
            let lm = loss(subject);
            params_of(subject)[t][j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[t][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
