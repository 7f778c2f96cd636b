//! The static-background autoencoder: a fully connected stack over flattened
//! frames with SELU hidden activations and a sigmoid output.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::activations::{selu, selu_backward, sigmoid, sigmoid_backward};
use super::dense::Dense;
use super::{Parameterized, ParamTensors, Scalar, TrainConfig};
use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Hidden layer widths, encoder to decoder; the bottleneck is 4 units.
pub const AE_HIDDEN_UNITS: [usize; 7] = [64, 32, 16, 4, 16, 32, 64];

/// Fully connected autoencoder over flattened `(batch, input_dim)` rows.
/// Flattening is row-major over (H, W, C).
#[derive(Debug)]
pub struct Autoencoder<F> {
    pub input_dim: usize,
    layers: Vec<Dense<F>>,
    cache_pre: Vec<Array2<F>>,
    cache_out: Option<Array2<F>>,
}

impl<F: Scalar> Autoencoder<F> {
    /// Builds an untrained autoencoder. Fails when `input_dim` does not
    /// exceed the 4-unit bottleneck.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim <= 4 {
            return Err(Error::Config {
                reason: format!(
                    "autoencoder input_dim {input_dim} must exceed the bottleneck width 4"
                ),
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&AE_HIDDEN_UNITS);
        dims.push(input_dim);
        let layers = dims
            .windows(2)
            .map(|d| Dense::new(&mut rng, d[0], d[1], 1.0))
            .collect();
        Ok(Autoencoder {
            input_dim,
            layers,
            cache_pre: Vec::new(),
            cache_out: None,
        })
    }

    /// Forward pass over `(batch, input_dim)`; output lies strictly in (0,1).
    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        assert_eq!(x.ncols(), self.input_dim, "autoencoder input width");
        if train {
            self.cache_pre.clear();
        }
        let mut h = x.clone();
        let n_hidden = self.layers.len() - 1;
        for i in 0..n_hidden {
            let z = self.layers[i].forward(&h, train);
            h = selu(&z);
            if train {
                self.cache_pre.push(z);
            }
        }
        let z = self.layers[n_hidden].forward(&h, train);
        let y = sigmoid(&z);
        if train {
            self.cache_out = Some(y.clone());
        }
        y
    }

    /// Backward pass from `dL/dy`; accumulates parameter gradients and
    /// returns `dL/dx`.
    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let y = self
            .cache_out
            .take()
            .expect("Autoencoder::backward without cached forward");
        let dz = sigmoid_backward(dy, &y);
        let n_hidden = self.layers.len() - 1;
        let mut dh = self.layers[n_hidden].backward(&dz);
        for i in (0..n_hidden).rev() {
            let pre = &self.cache_pre[i];
            let dz = selu_backward(&dh, pre);
            dh = self.layers[i].backward(&dz);
        }
        self.cache_pre.clear();
        dh
    }
}

impl<F: Scalar> Parameterized<F> for Autoencoder<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, ParamTensors<'_, F>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("dense{i}"), f);
        }
    }
}

/// Builds the reference-architecture autoencoder (f32) for a working size.
pub fn build_autoencoder(working_size: (usize, usize, usize), seed: u64) -> Result<Autoencoder<f32>> {
    let (h, w, c) = working_size;
    Autoencoder::new(h * w * c, seed)
}

/// Flattens frames into a `(n, H*W*C)` matrix (row-major over H, W, C).
pub fn frames_to_matrix(frames: &[ImageTensor]) -> Result<Array2<f32>> {
    let first = frames.first().ok_or_else(|| Error::Config {
        reason: "no frames to flatten".into(),
    })?;
    let dim = first.dim();
    let d = dim.0 * dim.1 * dim.2;
    let mut out = Array2::zeros((frames.len(), d));
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::ShapeMismatch {
                context: format!("training frame {i}"),
                expected: vec![dim.0, dim.1, dim.2],
                got: vec![f.dim().0, f.dim().1, f.dim().2],
            });
        }
        let flat = f.as_slice().expect("frames are standard layout");
        out.row_mut(i)
            .assign(&ndarray::ArrayView1::from_shape(d, flat).unwrap());
    }
    Ok(out)
}

/// Sum of absolute differences over the whole batch (L1, summed, not
/// averaged).
pub fn reconstruction_loss<F: Scalar>(inputs: &Array2<F>, outputs: &Array2<F>) -> Result<F> {
    if inputs.dim() != outputs.dim() {
        return Err(Error::ShapeMismatch {
            context: "reconstruction_loss".into(),
            expected: vec![inputs.nrows(), inputs.ncols()],
            got: vec![outputs.nrows(), outputs.ncols()],
        });
    }
    Ok(inputs
        .iter()
        .zip(outputs.iter())
        .map(|(&a, &b)| (a - b).abs())
        .sum())
}

/// [`reconstruction_loss`] over image batches.
pub fn reconstruction_loss_frames(inputs: &[ImageTensor], outputs: &[ImageTensor]) -> Result<f32> {
    reconstruction_loss(&frames_to_matrix(inputs)?, &frames_to_matrix(outputs)?)
}

/// A trained autoencoder plus its per-epoch mean-per-frame loss history.
#[derive(Debug)]
pub struct AeTraining {
    pub model: Autoencoder<f32>,
    pub working_size: (usize, usize, usize),
    /// Mean per-frame L1 loss after each epoch's updates.
    pub loss_history: Vec<f64>,
}

/// Trains the autoencoder on object-free frames with L1 reconstruction loss
/// and Adam. Deterministic under `config.seed`.
pub fn train_autoencoder(frames: &[ImageTensor], config: &TrainConfig) -> Result<AeTraining> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Config {
            reason: "autoencoder training requires at least one frame".into(),
        });
    }
    let working_size = frames[0].dim();
    let x = frames_to_matrix(frames)?;
    let mut model = Autoencoder::<f32>::new(x.ncols(), config.seed)?;
    let history = train_autoencoder_on_matrix(&mut model, &x, config)?;
    Ok(AeTraining {
        model,
        working_size,
        loss_history: history,
    })
}

/// Core training loop over a pre-flattened matrix; exposed for tests that
/// drive custom inputs.
pub fn train_autoencoder_on_matrix<F: Scalar>(
    model: &mut Autoencoder<F>,
    x: &Array2<F>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Config {
            reason: "autoencoder training requires at least one frame".into(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x51ed_c0de);
    let mut adam = super::Adam::new(super::c::<F>(config.learning_rate));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            model.zero_grads();
            let y = model.forward(&xb, true);
            // L1 loss summed over the batch; subgradient sign(y - x), 0 at 0.
            let mut loss = F::zero();
            let mut dy = Array2::zeros(y.raw_dim());
            ndarray::Zip::from(&mut dy).and(&y).and(&xb).for_each(|d, &yv, &xv| {
                let r = yv - xv;
                loss = loss + r.abs();
                *d = if r > F::zero() {
                    F::one()
                } else if r < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
            });
            let loss_f64 = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f64.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            epoch_loss += loss_f64;
            model.backward(&dy);
            adam.step(model);
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(history)
}

/// Runs a frame through the autoencoder, reconstructing the static
/// background at the same shape. Errors when the frame does not match the
/// model's input size.
pub fn generate_background(model: &mut Autoencoder<f32>, frame: &ImageTensor) -> Result<ImageTensor> {
    let (h, w, ch) = frame.dim();
    if h * w * ch != model.input_dim {
        return Err(Error::ShapeMismatch {
            context: "generate_background input".into(),
            expected: vec![model.input_dim],
            got: vec![h * w * ch],
        });
    }
    let x = frames_to_matrix(std::slice::from_ref(frame))?;
    let y = model.forward(&x, false);
    Ok(y.into_shape_with_order((h, w, ch)).expect("row reshapes to frame"))
}

/// Mean absolute error per pixel-channel between two frames.
pub fn mean_abs_error(a: &ImageTensor, b: &ImageTensor) -> f32 {
    let n = a.len().max(1);
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs())
        .sum::<f32>()
        / n as f32
}
