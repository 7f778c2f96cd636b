//! The dynamic-background U-Net: 4 contracting steps, 'same' 3x3 convs with
//! ReLU, 2x2 max pooling, 3x3 stride-2 transposed-conv upsampling, skip
//! concatenations, and a 2-feature 1x1 head producing per-pixel logits.

use ndarray::{concatenate, s, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::activations::{relu_backward, relu_inplace};
use super::conv::{Conv3x3, MaxPool2x2, UpConv3x3};
use super::dense::Dense;
use super::{Parameterized, ParamTensors, Scalar, TrainConfig};
use crate::error::{Error, Result};
use crate::types::{reflect_pad_mask_to_multiple, reflect_pad_to_multiple, BinaryMask, ImageTensor};

/// Architecture description; the default uses the reference widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetSpec {
    pub in_channels: usize,
    /// Features per level, top to bottom; depth = len - 1 contracting steps.
    pub features: Vec<usize>,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            in_channels: 3,
            features: vec![64, 128, 256, 512, 1024],
        }
    }
}

impl UNetSpec {
    /// Width-reduced variant with the same depth (tests, gradient checks).
    pub fn with_features(features: Vec<usize>) -> Self {
        UNetSpec {
            in_channels: 3,
            features,
        }
    }

    pub fn depth(&self) -> usize {
        self.features.len() - 1
    }

    /// Spatial dims must be divisible by this for pooling to be exact.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() < 2 || self.in_channels == 0 || self.features.contains(&0) {
            return Err(Error::Config {
                reason: format!("invalid U-Net spec: {self:?}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug)]
struct EncLevel<F> {
    conv_a: Conv3x3<F>,
    conv_b: Conv3x3<F>,
    pool: MaxPool2x2,
}

#[derive(Debug)]
struct DecLevel<F> {
    up: UpConv3x3<F>,
    conv_a: Conv3x3<F>,
    conv_b: Conv3x3<F>,
}

/// Per-forward cached pre-activations (training mode only).
#[derive(Debug)]
struct FwdCache<F> {
    enc_pre: Vec<(Array4<F>, Array4<F>)>,
    bottom_pre: (Array4<F>, Array4<F>),
    /// Indexed by level; filled for levels depth-1..0 during the decoder.
    dec_pre: Vec<Option<(Array4<F>, Array4<F>)>>,
}

#[derive(Debug)]
pub struct UNet<F> {
    pub spec: UNetSpec,
    enc: Vec<EncLevel<F>>,
    bottom_a: Conv3x3<F>,
    bottom_b: Conv3x3<F>,
    /// `dec[lev]` operates at encoder level `lev`'s scale; executed deepest
    /// level first.
    dec: Vec<DecLevel<F>>,
    head: Dense<F>,
    cache: Option<FwdCache<F>>,
    head_dims: (usize, usize, usize),
}

impl<F: Scalar> UNet<F> {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let depth = spec.depth();
        let f = &spec.features;

        let mut enc = Vec::with_capacity(depth);
        let mut c_prev = spec.in_channels;
        for &fi in f.iter().take(depth) {
            enc.push(EncLevel {
                conv_a: Conv3x3::new(&mut rng, c_prev, fi),
                conv_b: Conv3x3::new(&mut rng, fi, fi),
                pool: MaxPool2x2::new(),
            });
            c_prev = fi;
        }
        let bottom_a = Conv3x3::new(&mut rng, f[depth - 1], f[depth]);
        let bottom_b = Conv3x3::new(&mut rng, f[depth], f[depth]);

        // Built shallow-to-deep for a stable parameter order; executed
        // deep-to-shallow.
        let mut dec = Vec::with_capacity(depth);
        for lev in 0..depth {
            dec.push(DecLevel {
                up: UpConv3x3::new(&mut rng, f[lev + 1], f[lev]),
                conv_a: Conv3x3::new(&mut rng, 2 * f[lev], f[lev]),
                conv_b: Conv3x3::new(&mut rng, f[lev], f[lev]),
            });
        }
        let head = Dense::new(&mut rng, f[0], 2, 1.0);

        Ok(UNet {
            spec,
            enc,
            bottom_a,
            bottom_b,
            dec,
            head,
            cache: None,
            head_dims: (0, 0, 0),
        })
    }

    /// Forward pass `(B, H, W, in_channels)` -> `(B, H, W, 2)` logits.
    /// H and W must be divisible by `spec.size_multiple()`.
    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, h, w, c) = x.dim();
        let m = self.spec.size_multiple();
        assert_eq!(c, self.spec.in_channels, "U-Net input channels");
        assert!(
            h % m == 0 && w % m == 0,
            "U-Net input {h}x{w} not divisible by {m}"
        );
        let depth = self.spec.depth();
        let mut cache = FwdCache {
            enc_pre: Vec::with_capacity(depth),
            bottom_pre: (Array4::zeros((0, 0, 0, 0)), Array4::zeros((0, 0, 0, 0))),
            dec_pre: (0..depth).map(|_| None).collect(),
        };

        let mut skips: Vec<Array4<F>> = Vec::with_capacity(depth);
        let mut hcur = x.clone();
        for lev in 0..depth {
            let z_a = self.enc[lev].conv_a.forward(&hcur, train);
            let mut a = z_a.clone();
            relu_inplace(&mut a);
            let z_b = self.enc[lev].conv_b.forward(&a, train);
            let mut s_out = z_b.clone();
            relu_inplace(&mut s_out);
            if train {
                cache.enc_pre.push((z_a, z_b));
            }
            hcur = self.enc[lev].pool.forward(&s_out, train);
            skips.push(s_out);
        }

        let z_a = self.bottom_a.forward(&hcur, train);
        let mut a = z_a.clone();
        relu_inplace(&mut a);
        let z_b = self.bottom_b.forward(&a, train);
        let mut bottom = z_b.clone();
        relu_inplace(&mut bottom);
        if train {
            cache.bottom_pre = (z_a, z_b);
        }

        let mut hcur = bottom;
        for lev in (0..depth).rev() {
            let u = self.dec[lev].up.forward(&hcur, train);
            // Channel order [skip, upsampled]; fixed convention.
            let cat = concatenate(Axis(3), &[skips[lev].view(), u.view()])
                .expect("skip and upsampled dims match");
            let z_a = self.dec[lev].conv_a.forward(&cat, train);
            let mut a = z_a.clone();
            relu_inplace(&mut a);
            let z_b = self.dec[lev].conv_b.forward(&a, train);
            let mut out = z_b.clone();
            relu_inplace(&mut out);
            if train {
                cache.dec_pre[lev] = Some((z_a, z_b));
            }
            hcur = out;
        }

        let f0 = self.spec.features[0];
        let flat = hcur
            .into_shape_with_order((b * h * w, f0))
            .expect("contiguous reshape");
        let logits = self.head.forward(&flat, train);
        if train {
            self.cache = Some(cache);
            self.head_dims = (b, h, w);
        }
        logits
            .into_shape_with_order((b, h, w, 2))
            .expect("contiguous reshape")
    }

    /// Backward from `dL/dlogits`; accumulates gradients into every layer.
    pub fn backward(&mut self, dlogits: &Array4<F>) {
        let cache = self
            .cache
            .take()
            .expect("UNet::backward without cached forward");
        let (b, h, w) = self.head_dims;
        let depth = self.spec.depth();
        let f0 = self.spec.features[0];

        let dflat = dlogits
            .view()
            .into_shape_with_order((b * h * w, 2))
            .expect("contiguous reshape");
        let dh = self.head.backward(&dflat.to_owned());
        let mut dh = dh
            .into_shape_with_order((b, h, w, f0))
            .expect("contiguous reshape");

        // Decoder backward: shallowest level first (reverse of execution).
        let mut d_skips: Vec<Option<Array4<F>>> = (0..depth).map(|_| None).collect();
        for lev in 0..depth {
            let (z_a, z_b) = cache.dec_pre[lev]
                .as_ref()
                .expect("decoder cache present");
            let d_zb = relu_backward(&dh, z_b);
            let d_a = self.dec[lev].conv_b.backward(&d_zb);
            let d_za = relu_backward(&d_a, z_a);
            let d_cat = self.dec[lev].conv_a.backward(&d_za);
            let fl = self.spec.features[lev];
            let d_skip = d_cat.slice(s![.., .., .., ..fl]).to_owned();
            let d_u = d_cat.slice(s![.., .., .., fl..]).to_owned();
            d_skips[lev] = Some(d_skip);
            dh = self.dec[lev].up.backward(&d_u);
        }

        let (z_a, z_b) = &cache.bottom_pre;
        let d_zb = relu_backward(&dh, z_b);
        let d_a = self.bottom_b.backward(&d_zb);
        let d_za = relu_backward(&d_a, z_a);
        let mut dh = self.bottom_a.backward(&d_za);

        for lev in (0..depth).rev() {
            let mut d_s = self.enc[lev].pool.backward(&dh);
            d_s += d_skips[lev].as_ref().expect("skip gradient present");
            let (z_a, z_b) = &cache.enc_pre[lev];
            let d_zb = relu_backward(&d_s, z_b);
            let d_a = self.enc[lev].conv_b.backward(&d_zb);
            let d_za = relu_backward(&d_a, z_a);
            dh = self.enc[lev].conv_a.backward(&d_za);
        }
    }
}

impl<F: Scalar> Parameterized<F> for UNet<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, ParamTensors<'_, F>)) {
        for (i, lev) in self.enc.iter_mut().enumerate() {
            lev.conv_a.visit(&format!("enc{i}.conv_a"), f);
            lev.conv_b.visit(&format!("enc{i}.conv_b"), f);
        }
        self.bottom_a.visit("bottom.conv_a", f);
        self.bottom_b.visit("bottom.conv_b", f);
        for (i, lev) in self.dec.iter_mut().enumerate() {
            lev.up.visit(&format!("dec{i}.up"), f);
            lev.conv_a.visit(&format!("dec{i}.conv_a"), f);
            lev.conv_b.visit(&format!("dec{i}.conv_b"), f);
        }
        self.head.visit("head", f);
    }
}

/// Builds the default-width U-Net (f32).
pub fn build_unet(seed: u64) -> UNet<f32> {
    UNet::new(UNetSpec::default(), seed).expect("default spec is valid")
}

/// Mean per-pixel two-class cross-entropy and its gradient w.r.t. logits.
/// `labels` is `(B, H, W)` with values 0/1.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &Array4<F>,
    labels: &Array3<u8>,
) -> (f64, Array4<F>) {
    let (b, h, w, c) = logits.dim();
    assert_eq!(c, 2, "two-class head");
    assert_eq!(labels.dim(), (b, h, w), "label dims");
    let count = F::from_usize(b * h * w).unwrap();
    let mut dlogits = Array4::<F>::zeros((b, h, w, 2));
    let mut loss = 0.0f64;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l0 = logits[(bi, y, x, 0)];
                let l1 = logits[(bi, y, x, 1)];
                let m = if l0 > l1 { l0 } else { l1 };
                let e0 = (l0 - m).exp();
                let e1 = (l1 - m).exp();
                let z = e0 + e1;
                let lse = m + z.ln();
                let target = labels[(bi, y, x)];
                let l_t = if target == 0 { l0 } else { l1 };
                loss += (lse - l_t).to_f64().unwrap();
                let p0 = e0 / z;
                let p1 = e1 / z;
                let (t0, t1) = if target == 0 {
                    (F::one(), F::zero())
                } else {
                    (F::zero(), F::one())
                };
                dlogits[(bi, y, x, 0)] = (p0 - t0) / count;
                dlogits[(bi, y, x, 1)] = (p1 - t1) / count;
            }
        }
    }
    (loss / (b * h * w) as f64, dlogits)
}

/// Binary dynamic-background prediction for an arbitrary-size frame: pads to
/// the pooling multiple, takes the per-pixel argmax (ties resolve to class
/// 0), and crops back to the input size.
pub fn predict_dynamic(model: &mut UNet<f32>, frame: &ImageTensor) -> BinaryMask {
    let m = model.spec.size_multiple();
    let (padded, orig) = reflect_pad_to_multiple(frame, m);
    let (h, w, c) = padded.dim();
    let x = padded
        .into_shape_with_order((1, h, w, c))
        .expect("contiguous reshape");
    let logits = model.forward(&x, false);
    let mask = Array2::from_shape_fn((h, w), |(y, xx)| {
        logits[(0, y, xx, 1)] > logits[(0, y, xx, 0)]
    });
    mask.slice(s![..orig.0, ..orig.1]).to_owned()
}

/// A trained U-Net plus its per-epoch mean cross-entropy history.
#[derive(Debug)]
pub struct UnetTraining {
    pub model: UNet<f32>,
    pub loss_history: Vec<f64>,
}

/// Trains the U-Net on (frame, label-mask) pairs with Adam; deliberately no
/// augmentation or regularisation — overfitting the scene is the goal.
/// Frames and labels are reflection-padded to the pooling multiple.
pub fn train_unet(
    frames: &[ImageTensor],
    labels: &[BinaryMask],
    spec: &UNetSpec,
    config: &TrainConfig,
) -> Result<UnetTraining> {
    config.validate()?;
    if frames.len() != labels.len() {
        return Err(Error::Config {
            reason: format!("{} frames but {} label masks", frames.len(), labels.len()),
        });
    }
    if frames.is_empty() {
        return Err(Error::Config {
            reason: "U-Net training requires at least one frame".into(),
        });
    }
    let m = 1 << (spec.features.len() - 1);
    let mut xs: Vec<Array4<f32>> = Vec::with_capacity(frames.len());
    let mut ys: Vec<Array3<u8>> = Vec::with_capacity(frames.len());
    for (i, (f, l)) in frames.iter().zip(labels).enumerate() {
        if (f.dim().0, f.dim().1) != l.dim() {
            return Err(Error::ShapeMismatch {
                context: format!("U-Net training pair {i}"),
                expected: vec![f.dim().0, f.dim().1],
                got: vec![l.dim().0, l.dim().1],
            });
        }
        let (pf, _) = reflect_pad_to_multiple(f, m);
        let (h, w, c) = pf.dim();
        xs.push(pf.into_shape_with_order((1, h, w, c)).expect("reshape"));
        let pl = reflect_pad_mask_to_multiple(l, m);
        ys.push(pl.mapv(u8::from).into_shape_with_order((1, h, w)).expect("reshape"));
    }

    let mut model = UNet::<f32>::new(spec.clone(), config.seed)?;
    let mut adam = super::Adam::new(config.learning_rate as f32);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0xdbac_5eed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let views: Vec<_> = chunk.iter().map(|&i| xs[i].view()).collect();
            let xb = concatenate(Axis(0), &views).expect("uniform frame dims");
            let lviews: Vec<_> = chunk.iter().map(|&i| ys[i].view()).collect();
            let yb = concatenate(Axis(0), &lviews).expect("uniform label dims");

            model.zero_grads();
            let logits = model.forward(&xb, true);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            model.backward(&dlogits);
            adam.step(&mut model);
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok(UnetTraining {
        model,
        loss_history: history,
    })
}

/// Independent parameter-count formula for a spec (used by tests and the
/// build contract): sum over conv (9*cin*cout + cout), upconv (9*cin*cout +
/// cout), and the 1x1 head (cin*2 + 2).
pub fn expected_param_count(spec: &UNetSpec) -> usize {
    let f = &spec.features;
    let depth = spec.depth();
    let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
    let mut total = 0;
    let mut c_prev = spec.in_channels;
    for &fi in f.iter().take(depth) {
        total += conv(c_prev, fi) + conv(fi, fi);
        c_prev = fi;
    }
    total += conv(f[depth - 1], f[depth]) + conv(f[depth], f[depth]);
    for lev in 0..depth {
        total += conv(f[lev + 1], f[lev]); // transposed conv, same count
        total += conv(2 * f[lev], f[lev]) + conv(f[lev], f[lev]);
    }
    total += f[0] * 2 + 2;
    total
}
