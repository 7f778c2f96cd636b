//! Convolutional building blocks on `(batch, height, width, channels)`
//! activations: 3x3 'same' convolution via im2col + GEMM, 2x2 max pooling,
//! and a 3x3 stride-2 transposed convolution that exactly doubles the
//! spatial dims.

use ndarray::{s, Array2, Array4, Array6, Axis, Ix1, Ix2};
use rand_chacha::ChaCha20Rng;

use super::{init, Param, ParamTensors, Scalar};

/// Valid output range for kernel tap `k` (0..3) with zero padding 1: output
/// coordinate `y` reads input `y + k - 1`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

/// Unfolds `x` into `(B*H*W, 9*C)` patch rows for a 3x3 'same' convolution
/// (zero padding). Column block `(ky, kx, c)` of row `(b, y, x)` holds
/// `x[b, y+ky-1, x+kx-1, c]`, or 0 outside the image.
pub fn im2col3x3<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (b, h, w, c) = x.dim();
    let mut cols = Array6::<F>::zeros((b, h, w, 3, 3, c));
    for ky in 0..3 {
        let (y0, y1) = tap_range(ky, h);
        for kx in 0..3 {
            let (x0, x1) = tap_range(kx, w);
            let src = x.slice(s![
                ..,
                y0 + ky - 1..y1 + ky - 1,
                x0 + kx - 1..x1 + kx - 1,
                ..
            ]);
            cols.slice_mut(s![.., y0..y1, x0..x1, ky, kx, ..]).assign(&src);
        }
    }
    cols.into_shape_with_order((b * h * w, 9 * c))
        .expect("contiguous reshape")
}

/// Adjoint of [`im2col3x3`]: folds patch-row gradients back onto the input.
pub fn col2im3x3<F: Scalar>(dcols: Array2<F>, dims: (usize, usize, usize, usize)) -> Array4<F> {
    let (b, h, w, c) = dims;
    let view = dcols
        .into_shape_with_order((b, h, w, 3, 3, c))
        .expect("contiguous reshape");
    let mut dx = Array4::<F>::zeros((b, h, w, c));
    for ky in 0..3 {
        let (y0, y1) = tap_range(ky, h);
        for kx in 0..3 {
            let (x0, x1) = tap_range(kx, w);
            let mut dst = dx.slice_mut(s![
                ..,
                y0 + ky - 1..y1 + ky - 1,
                x0 + kx - 1..x1 + kx - 1,
                ..
            ]);
            dst += &view.slice(s![.., y0..y1, x0..x1, ky, kx, ..]);
        }
    }
    dx
}

/// 3x3 stride-1 'same' convolution. Weights are stored GEMM-ready as
/// `(9*c_in, c_out)` with rows ordered (ky, kx, c_in).
#[derive(Debug)]
pub struct Conv3x3<F> {
    pub w: Param<F, Ix2>,
    pub b: Param<F, Ix1>,
    pub c_in: usize,
    pub c_out: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Scalar> Conv3x3<F> {
    pub fn new(rng: &mut ChaCha20Rng, c_in: usize, c_out: usize) -> Self {
        // He initialisation with fan_in = 9 * c_in (ReLU stack).
        Conv3x3 {
            w: Param::new(init::normal_matrix(rng, (9 * c_in, c_out), 9 * c_in, 2.0)),
            b: Param::new(init::zeros_vector(c_out)),
            c_in,
            c_out,
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, h, w, c) = x.dim();
        assert_eq!(c, self.c_in, "Conv3x3 input channels");
        let cols = im2col3x3(x);
        let mut y = cols.dot(&self.w.w);
        y += &self.b.w;
        if train {
            self.cache_x = Some(x.clone());
        }
        y.into_shape_with_order((b, h, w, self.c_out))
            .expect("contiguous reshape")
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self
            .cache_x
            .take()
            .expect("Conv3x3::backward without cached forward");
        let (b, h, w, _) = x.dim();
        let dy2 = dy
            .view()
            .into_shape_with_order((b * h * w, self.c_out))
            .expect("contiguous reshape");
        let cols = im2col3x3(&x);
        self.w.g += &cols.t().dot(&dy2);
        self.b.g += &dy2.sum_axis(Axis(0));
        let dcols = dy2.dot(&self.w.w.t());
        col2im3x3(dcols, (b, h, w, self.c_in))
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamTensors<'_, F>)) {
        f(&format!("{prefix}.w"), self.w.tensors());
        f(&format!("{prefix}.b"), self.b.tensors());
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first position in
/// (0,0), (0,1), (1,0), (1,1) scan order, deterministically.
#[derive(Debug)]
pub struct MaxPool2x2 {
    cache_arg: Option<Array4<u8>>,
    cache_in_dims: (usize, usize, usize, usize),
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 {
            cache_arg: None,
            cache_in_dims: (0, 0, 0, 0),
        }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, h, w, c) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "MaxPool2x2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::<F>::zeros((b, oh, ow, c));
        let mut arg = Array4::<u8>::zeros((b, oh, ow, c));
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let mut best = x[(bi, 2 * oy, 2 * ox, ci)];
                        let mut best_k = 0u8;
                        for k in 1..4u8 {
                            let v = x[(
                                bi,
                                2 * oy + (k / 2) as usize,
                                2 * ox + (k % 2) as usize,
                                ci,
                            )];
                            if v > best {
                                best = v;
                                best_k = k;
                            }
                        }
                        y[(bi, oy, ox, ci)] = best;
                        arg[(bi, oy, ox, ci)] = best_k;
                    }
                }
            }
        }
        if train {
            self.cache_arg = Some(arg);
            self.cache_in_dims = (b, h, w, c);
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array4<F>) -> Array4<F> {
        let arg = self
            .cache_arg
            .take()
            .expect("MaxPool2x2::backward without cached forward");
        let (b, h, w, c) = self.cache_in_dims;
        let mut dx = Array4::<F>::zeros((b, h, w, c));
        let (oh, ow) = (h / 2, w / 2);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let k = arg[(bi, oy, ox, ci)];
                        dx[(
                            bi,
                            2 * oy + (k / 2) as usize,
                            2 * ox + (k % 2) as usize,
                            ci,
                        )] = dy[(bi, oy, ox, ci)];
                    }
                }
            }
        }
        dx
    }
}

/// 3x3 transposed convolution with stride 2; output is exactly `(2H, 2W)`
/// (padding 1, output padding 1). Weights are `(c_in, 9*c_out)` with columns
/// ordered (ky, kx, c_out); input pixel `(iy, ix)` contributes through tap
/// `(ky, kx)` to output `(2*iy + ky - 1, 2*ix + kx - 1)`.
#[derive(Debug)]
pub struct UpConv3x3<F> {
    pub w: Param<F, Ix2>,
    pub b: Param<F, Ix1>,
    pub c_in: usize,
    pub c_out: usize,
    cache_x: Option<Array4<F>>,
}

/// Input range whose tap-`k` output lands inside `[0, 2n)`.
#[inline]
fn up_tap_start(k: usize) -> usize {
    usize::from(k == 0)
}

impl<F: Scalar> UpConv3x3<F> {
    pub fn new(rng: &mut ChaCha20Rng, c_in: usize, c_out: usize) -> Self {
        // He-style scale with the average stride-2 contribution count
        // (9 taps spread over a 2x2 output phase grid ~ 9/4 per output).
        let fan = (9 * c_in).div_ceil(4);
        UpConv3x3 {
            w: Param::new(init::normal_matrix(rng, (c_in, 9 * c_out), fan, 2.0)),
            b: Param::new(init::zeros_vector(c_out)),
            c_in,
            c_out,
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, h, w, c) = x.dim();
        assert_eq!(c, self.c_in, "UpConv3x3 input channels");
        let x2 = x
            .view()
            .into_shape_with_order((b * h * w, c))
            .expect("contiguous reshape");
        let p = x2.dot(&self.w.w);
        let p6 = p
            .into_shape_with_order((b, h, w, 3, 3, self.c_out))
            .expect("contiguous reshape");
        let mut y = Array4::<F>::zeros((b, 2 * h, 2 * w, self.c_out));
        y += &self.b.w;
        for ky in 0..3 {
            let iy0 = up_tap_start(ky);
            let oy0 = 2 * iy0 + ky - 1;
            let oy1 = 2 * (h - 1) + ky; // exclusive: last oy + 1
            for kx in 0..3 {
                let ix0 = up_tap_start(kx);
                let ox0 = 2 * ix0 + kx - 1;
                let ox1 = 2 * (w - 1) + kx;
                let mut dst = y.slice_mut(s![.., oy0..oy1;2, ox0..ox1;2, ..]);
                dst += &p6.slice(s![.., iy0..h, ix0..w, ky, kx, ..]);
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self
            .cache_x
            .take()
            .expect("UpConv3x3::backward without cached forward");
        let (b, h, w, _) = x.dim();
        let mut dp = Array6::<F>::zeros((b, h, w, 3, 3, self.c_out));
        for ky in 0..3 {
            let iy0 = up_tap_start(ky);
            let oy0 = 2 * iy0 + ky - 1;
            let oy1 = 2 * (h - 1) + ky;
            for kx in 0..3 {
                let ix0 = up_tap_start(kx);
                let ox0 = 2 * ix0 + kx - 1;
                let ox1 = 2 * (w - 1) + kx;
                dp.slice_mut(s![.., iy0..h, ix0..w, ky, kx, ..])
                    .assign(&dy.slice(s![.., oy0..oy1;2, ox0..ox1;2, ..]));
            }
        }
        let dp2 = dp
            .into_shape_with_order((b * h * w, 9 * self.c_out))
            .expect("contiguous reshape");
        let x2 = x
            .view()
            .into_shape_with_order((b * h * w, self.c_in))
            .expect("contiguous reshape");
        self.w.g += &x2.t().dot(&dp2);
        for ci in 0..self.c_out {
            let mut s = F::zero();
            for v in dy.slice(s![.., .., .., ci]).iter() {
                s = s + *v;
            }
            self.b.g[ci] = self.b.g[ci] + s;
        }
        let dx2 = dp2.dot(&self.w.w.t());
        dx2.into_shape_with_order((b, h, w, self.c_in))
            .expect("contiguous reshape")
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamTensors<'_, F>)) {
        f(&format!("{prefix}.w"), self.w.tensors());
        f(&format!("{prefix}.b"), self.b.tensors());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};

    fn rand4(rng: &mut ChaCha20Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(dims, || rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Direct nested-loop 3x3 'same' convolution for oracle comparison.
    fn conv3x3_reference(
        x: &Array4<f64>,
        w: &Array2<f64>,
        b: &Array1<f64>,
        c_out: usize,
    ) -> Array4<f64> {
        let (bs, h, wd, c_in) = x.dim();
        let mut y = Array4::zeros((bs, h, wd, c_out));
        for bi in 0..bs {
            for oy in 0..h {
                for ox in 0..wd {
                    for co in 0..c_out {
                        let mut acc = b[co];
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    acc += x[(bi, iy as usize, ix as usize, ci)]
                                        * w[((ky * 3 + kx) * c_in + ci, co)];
                                }
                            }
                        }
                        y[(bi, oy, ox, co)] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv3x3_matches_reference_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut conv: Conv3x3<f64> = Conv3x3::new(&mut rng, 3, 5);
        let x = rand4(&mut rng, (2, 6, 7, 3));
        let y = conv.forward(&x, false);
        let y_ref = conv3x3_reference(&x, &conv.w.w, &conv.b.w, 5);
        let max_diff = (&y - &y_ref).iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), d> == <x, col2im(d)> for random x, d — exact adjointness
        // makes the GEMM backward correct by construction.
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let dims = (2, 5, 4, 3);
        let x = rand4(&mut rng, dims);
        let cols = im2col3x3(&x);
        let d = Array2::from_shape_simple_fn(cols.dim(), || rng.gen::<f64>() - 0.5);
        let lhs: f64 = cols.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        let folded = col2im3x3(d, dims);
        let rhs: f64 = x.iter().zip(folded.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_forward_and_backward_fixture() {
        let mut x = Array4::<f64>::zeros((1, 4, 4, 1));
        // Top-left window: max 7 at (1,1); top-right: tie of 2s -> first
        // position (0,2) wins.
        x[(0, 1, 1, 0)] = 7.0;
        x[(0, 0, 2, 0)] = 2.0;
        x[(0, 0, 3, 0)] = 2.0;
        x[(0, 3, 0, 0)] = -1.0;
        x[(0, 2, 2, 0)] = 0.5;
        let mut pool = MaxPool2x2::new();
        let y = pool.forward(&x, true);
        assert_eq!(y.dim(), (1, 2, 2, 1));
        assert_eq!(y[(0, 0, 0, 0)], 7.0);
        assert_eq!(y[(0, 0, 1, 0)], 2.0);
        assert_eq!(y[(0, 1, 0, 0)], 0.0, "all-candidates 0 or negative, first 0 wins");
        assert_eq!(y[(0, 1, 1, 0)], 0.5);

        let mut dy = Array4::<f64>::zeros((1, 2, 2, 1));
        dy[(0, 0, 0, 0)] = 10.0;
        dy[(0, 0, 1, 0)] = 20.0;
        dy[(0, 1, 1, 0)] = 40.0;
        let dx = pool.backward(&dy);
        assert_eq!(dx[(0, 1, 1, 0)], 10.0, "routed to the argmax");
        assert_eq!(dx[(0, 0, 2, 0)], 20.0, "tie routed to first position");
        assert_eq!(dx[(0, 3, 3, 0)], 0.0);
        assert_eq!(dx[(0, 2, 2, 0)], 40.0);
        let total: f64 = dx.iter().sum();
        assert_eq!(total, 70.0, "gradient mass preserved");
    }

    /// Direct reference for the transposed conv: scatter each input pixel
    /// through every tap.
    fn upconv_reference(
        x: &Array4<f64>,
        w: &Array2<f64>,
        b: &Array1<f64>,
        c_out: usize,
    ) -> Array4<f64> {
        let (bs, h, wd, c_in) = x.dim();
        let mut y = Array4::zeros((bs, 2 * h, 2 * wd, c_out));
        for (i, v) in y.iter_mut().enumerate() {
            let co = i % c_out;
            *v = b[co];
        }
        for bi in 0..bs {
            for iy in 0..h {
                for ix in 0..wd {
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let oy = 2 * iy as isize + ky as isize - 1;
                            let ox = 2 * ix as isize + kx as isize - 1;
                            if oy < 0 || ox < 0 || oy >= 2 * h as isize || ox >= 2 * wd as isize {
                                continue;
                            }
                            for ci in 0..c_in {
                                for co in 0..c_out {
                                    y[(bi, oy as usize, ox as usize, co)] +=
                                        x[(bi, iy, ix, ci)] * w[(ci, (ky * 3 + kx) * c_out + co)];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn upconv_matches_reference_and_doubles_dims() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut up: UpConv3x3<f64> = UpConv3x3::new(&mut rng, 4, 3);
        let x = rand4(&mut rng, (2, 3, 5, 4));
        let y = up.forward(&x, false);
        assert_eq!(y.dim(), (2, 6, 10, 3));
        let y_ref = upconv_reference(&x, &up.w.w, &up.b.w, 3);
        let max_diff = (&y - &y_ref).iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn upconv_backward_is_adjoint_of_forward() {
        // With zero bias, <dy, up(x)> == <x, up_backward(dy)>.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut up: UpConv3x3<f64> = UpConv3x3::new(&mut rng, 3, 2);
        up.b.w.fill(0.0);
        let x = rand4(&mut rng, (1, 4, 3, 3));
        let y = up.forward(&x, true);
        let dy = rand4(&mut rng, y.dim());
        let dx = up.backward(&dy);
        let lhs: f64 = dy.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
