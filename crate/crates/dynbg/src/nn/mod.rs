//! From-scratch neural-network core: dense and convolutional layers, Adam,
//! seeded initialisation, checkpoint serialisation, and gradient checking.
//!
//! Everything is generic over the float type: production paths run `f32`
//! (checkpoints store raw f32), while gradient-check tests instantiate the
//! same code at `f64`, where central finite differences are meaningful.
//!
//! Layout conventions: dense activations are `(batch, features)`; image
//! activations are `(batch, height, width, channels)` in standard C order.
//! Flattening an image is therefore row-major over (H, W, C).

use ndarray::{ArrayViewMutD, NdFloat};
use num_traits::FromPrimitive;

pub mod activations;
pub mod ae;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod unet;

pub use ae::{build_autoencoder, reconstruction_loss, train_autoencoder, Autoencoder};
pub use checkpoint::{ArchSpec, Checkpoint, ModelKind};
pub use unet::{build_unet, train_unet, UNet, UNetSpec};

/// Float scalar usable throughout the network code.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum {}
impl<T: NdFloat + FromPrimitive + std::iter::Sum> Scalar for T {}

/// Converts an `f64` constant into the active scalar type.
#[inline]
pub fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 constant must convert to scalar type")
}

/// One trainable tensor: weights, gradient accumulator, and Adam moments.
#[derive(Clone, Debug)]
pub struct Param<F, D: ndarray::Dimension> {
    pub w: ndarray::Array<F, D>,
    pub g: ndarray::Array<F, D>,
    m: ndarray::Array<F, D>,
    v: ndarray::Array<F, D>,
}

impl<F: Scalar, D: ndarray::Dimension> Param<F, D> {
    pub fn new(w: ndarray::Array<F, D>) -> Self {
        let g = ndarray::Array::zeros(w.raw_dim());
        let m = ndarray::Array::zeros(w.raw_dim());
        let v = ndarray::Array::zeros(w.raw_dim());
        Param { w, g, m, v }
    }

    fn tensors(&mut self) -> ParamTensors<'_, F> {
        ParamTensors {
            w: self.w.view_mut().into_dyn(),
            g: self.g.view_mut().into_dyn(),
            m: self.m.view_mut().into_dyn(),
            v: self.v.view_mut().into_dyn(),
        }
    }
}

/// Mutable views over one parameter tensor's weight/grad/moment arrays.
pub struct ParamTensors<'a, F> {
    pub w: ArrayViewMutD<'a, F>,
    pub g: ArrayViewMutD<'a, F>,
    pub m: ArrayViewMutD<'a, F>,
    pub v: ArrayViewMutD<'a, F>,
}

/// A model whose parameters can be enumerated in a stable order. Visit order
/// defines checkpoint tensor order and must not change between runs.
pub trait Parameterized<F: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, ParamTensors<'_, F>));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.w.len());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, mut t| t.g.fill(F::zero()));
    }
}

/// Adam optimiser with the standard bias-corrected update.
pub struct Adam<F> {
    pub lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: F) -> Self {
        Adam {
            lr,
            beta1: c(0.9),
            beta2: c(0.999),
            eps: c(1e-8),
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients, then leaves the
    /// gradients untouched (callers zero them before the next backward pass).
    pub fn step<M: Parameterized<F>>(&mut self, model: &mut M) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let one = F::one();
        model.visit_params(&mut |_, mut p| {
            ndarray::Zip::from(&mut p.w)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}

/// Training hyperparameters shared by both networks.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Autoencoder defaults: lr 1e-4, 50 epochs, batch 16.
    pub fn ae_defaults() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 16,
            seed: 0,
        }
    }

    /// U-Net defaults: lr 5e-3, 50 epochs, batch 4.
    pub fn unet_defaults() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            epochs: 50,
            batch_size: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(crate::Error::Config {
                reason: format!("learning_rate must be > 0, got {}", self.learning_rate),
            });
        }
        if self.epochs == 0 {
            return Err(crate::Error::Config {
                reason: "epochs must be >= 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(crate::Error::Config {
                reason: "batch_size must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Deterministic weight initialisation. All draws happen in `f64` and are
/// cast afterwards, so `f32` and `f64` instantiations of a model start from
/// the same numbers.
pub mod init {
    use super::{c, Scalar};
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand_chacha::ChaCha20Rng;

    /// Standard normal draw via Box-Muller (avoids an extra distribution
    /// dependency and keeps the stream reproducible).
    pub fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
        loop {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            if u1 > f64::MIN_POSITIVE {
                return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
        }
    }

    /// Zero-mean normal matrix with variance `gain / fan_in`. `gain` 1.0 is
    /// the LeCun initialisation (SELU stacks), 2.0 the He initialisation
    /// (ReLU stacks).
    pub fn normal_matrix<F: Scalar>(
        rng: &mut ChaCha20Rng,
        shape: (usize, usize),
        fan_in: usize,
        gain: f64,
    ) -> Array2<F> {
        let std = (gain / fan_in as f64).sqrt();
        Array2::from_shape_simple_fn(shape, || c(standard_normal(rng) * std))
    }

    pub fn zeros_vector<F: Scalar>(len: usize) -> Array1<F> {
        Array1::zeros(len)
    }
}
