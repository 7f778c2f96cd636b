//! Fully connected layer with gradient accumulation.

use ndarray::{Array2, Axis, Ix1, Ix2};
use rand_chacha::ChaCha20Rng;

use super::{init, Param, ParamTensors, Scalar};

/// `y = x . w + b` over `(batch, features)` activations. The forward pass in
/// training mode caches its input for the backward pass; layers are therefore
/// single-consumer during training (matching the single-threaded loop).
#[derive(Debug)]
pub struct Dense<F> {
    pub w: Param<F, Ix2>,
    pub b: Param<F, Ix1>,
    cache_x: Option<Array2<F>>,
}

impl<F: Scalar> Dense<F> {
    /// `gain` selects the init family: 1.0 LeCun (SELU), 2.0 He (ReLU).
    pub fn new(rng: &mut ChaCha20Rng, in_dim: usize, out_dim: usize, gain: f64) -> Self {
        Dense {
            w: Param::new(init::normal_matrix(rng, (in_dim, out_dim), in_dim, gain)),
            b: Param::new(init::zeros_vector(out_dim)),
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.w.ncols()
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        debug_assert_eq!(x.ncols(), self.in_dim());
        let mut y = x.dot(&self.w.w);
        y += &self.b.w;
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let x = self
            .cache_x
            .take()
            .expect("Dense::backward called without a cached forward");
        self.w.g += &x.t().dot(dy);
        self.b.g += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.w.t())
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamTensors<'_, F>)) {
        f(&format!("{prefix}.w"), self.w.tensors());
        f(&format!("{prefix}.b"), self.b.tensors());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_hand_matmul() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut layer: Dense<f64> = Dense::new(&mut rng, 2, 2, 1.0);
        layer.w.w = array![[1.0, 2.0], [3.0, 4.0]];
        layer.b.w = array![0.5, -0.5];
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = layer.forward(&x, false);
        assert_eq!(y, array![[4.5, 5.5], [2.5, 3.5]]);
    }

    #[test]
    fn backward_accumulates_expected_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut layer: Dense<f64> = Dense::new(&mut rng, 2, 1, 1.0);
        layer.w.w = array![[2.0], [-1.0]];
        layer.b.w = array![0.0];
        let x = array![[1.0, 3.0], [0.5, -2.0]];
        let _ = layer.forward(&x, true);
        let dy = array![[1.0], [2.0]];
        let dx = layer.backward(&dy);
        // dw = x^T dy, db = sum dy, dx = dy w^T
        assert_eq!(layer.w.g, array![[2.0], [-1.0]]);
        assert_eq!(layer.b.g, array![3.0]);
        assert_eq!(dx, array![[2.0, -1.0], [4.0, -2.0]]);
    }
}
