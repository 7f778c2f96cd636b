//! Elementwise activations with explicit backward rules.

use ndarray::{Array, Dimension, Zip};

use super::{c, Scalar};

/// SELU constants from the self-normalizing-networks formulation.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// `selu(x) = lambda * (x if x > 0 else alpha * (exp(x) - 1))`
pub fn selu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    let (lambda, alpha) = (c::<F>(SELU_LAMBDA), c::<F>(SELU_ALPHA));
    x.mapv(|v| {
        if v > F::zero() {
            lambda * v
        } else {
            lambda * alpha * (v.exp() - F::one())
        }
    })
}

/// Backward of [`selu`] given the pre-activation input.
pub fn selu_backward<F: Scalar, D: Dimension>(dy: &Array<F, D>, x: &Array<F, D>) -> Array<F, D> {
    let (lambda, alpha) = (c::<F>(SELU_LAMBDA), c::<F>(SELU_ALPHA));
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let slope = if v > F::zero() {
            lambda
        } else {
            lambda * alpha * v.exp()
        };
        *d = *d * slope;
    });
    dx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| {
        if v >= F::zero() {
            F::one() / (F::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (F::one() + e)
        }
    })
}

/// Backward of [`sigmoid`] given the *output* `y = sigmoid(x)`.
pub fn sigmoid_backward<F: Scalar, D: Dimension>(dy: &Array<F, D>, y: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        *d = *d * yv * (F::one() - yv);
    });
    dx
}

/// ReLU applied in place.
pub fn relu_inplace<F: Scalar, D: Dimension>(x: &mut Array<F, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Backward of ReLU given the pre-activation input; gradient at exactly 0 is 0.
pub fn relu_backward<F: Scalar, D: Dimension>(dy: &Array<F, D>, x: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}
