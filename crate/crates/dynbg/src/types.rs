//! Shared tensor types and small image utilities.
//!
//! All image math happens in `f32` on HWC [`ndarray`] arrays. Frames are
//! normalised to `[0, 1]` on load; binary masks are `bool` arrays and are
//! written to disk as 8-bit PNGs with values {0, 255}.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{s, Array2, Array3};

use crate::error::{Error, Result};

/// A frame in working resolution: shape `(height, width, 3)`, values in `[0, 1]`.
pub type ImageTensor = Array3<f32>;

/// A per-pixel scalar field (residuals, foreground strength, thresholds).
pub type ScalarMap = Array2<f32>;

/// A per-pixel binary decision. `true` means foreground / dynamic / inside-ROI
/// depending on context.
pub type BinaryMask = Array2<bool>;

/// The flicker-entropy accumulator. Kept in `f64` so the online update stays
/// bit-comparable with a batch recomputation.
pub type EntropyMap = Array2<f64>;

/// Converts a decoded 8-bit RGB image to a normalised HWC tensor.
pub fn image_from_rgb8(img: &RgbImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = f32::from(px.0[c]) / 255.0;
        }
    }
    out
}

/// Converts a normalised HWC tensor back to an 8-bit RGB image, clamping to
/// `[0, 1]` first.
pub fn image_to_rgb8(img: &ImageTensor) -> RgbImage {
    let (h, w, _) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = img[(y as usize, x as usize, c)].clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Loads an RGB image, optionally resizing to `(height, width)` with a
/// bilinear filter before normalising.
pub fn load_image(path: &Path, resize_to: Option<(usize, usize)>) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|source| Error::ImageDecode {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let img = match resize_to {
        Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
            image::imageops::resize(&img, w as u32, h as u32, image::imageops::FilterType::Triangle)
        }
        _ => img,
    };
    Ok(image_from_rgb8(&img))
}

/// Writes a normalised HWC tensor as a JPEG file with the given quality
/// (1-100). High quality keeps compression error well below typical residual
/// thresholds.
pub fn save_image_jpeg(path: &Path, img: &ImageTensor, quality: u8) -> Result<()> {
    let rgb = image_to_rgb8(img);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let writer = std::io::BufWriter::new(file);
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(writer, quality);
    rgb.write_with_encoder(encoder).map_err(|source| Error::ImageEncode {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a binary mask as an 8-bit grayscale PNG with values {0, 255}.
pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[(y as usize, x as usize)] { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::ImageEncode {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a binary mask written by [`save_mask_png`]. Any value >= 128 counts
/// as foreground, so masks survive a round trip through lossless formats.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|source| Error::ImageDecode {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn(
        (h as usize, w as usize),
        |(y, x)| img.get_pixel(x as u32, y as u32).0[0] >= 128,
    ))
}

/// Nearest-neighbour upscale of a mask to `(height, width)`. Used to bring
/// working-resolution masks back to the native resolution of a sequence.
pub fn upscale_mask_nearest(mask: &BinaryMask, to: (usize, usize)) -> BinaryMask {
    let (sh, sw) = mask.dim();
    let (th, tw) = to;
    if (sh, sw) == (th, tw) {
        return mask.clone();
    }
    Array2::from_shape_fn((th, tw), |(y, x)| {
        let sy = (y * sh / th).min(sh - 1);
        let sx = (x * sw / tw).min(sw - 1);
        mask[(sy, sx)]
    })
}

/// Mirror-reflect index `i` into `[0, n)` without repeating the edge sample
/// (triangle wave with period `2n - 2`). `n == 1` always maps to 0.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let p = 2 * n - 2;
    let j = i % p;
    if j < n {
        j
    } else {
        p - j
    }
}

/// Pads an image at the bottom/right with mirror-reflected rows and columns
/// until both spatial dims are multiples of `m`. Returns the padded image and
/// the original `(height, width)` so [`crop_to`] can undo it exactly.
pub fn reflect_pad_to_multiple(img: &ImageTensor, m: usize) -> (ImageTensor, (usize, usize)) {
    let (h, w, c) = img.dim();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if (ph, pw) == (h, w) {
        return (img.clone(), (h, w));
    }
    let mut out = Array3::zeros((ph, pw, c));
    for y in 0..ph {
        let sy = reflect_index(y, h);
        for x in 0..pw {
            let sx = reflect_index(x, w);
            for ch in 0..c {
                out[(y, x, ch)] = img[(sy, sx, ch)];
            }
        }
    }
    (out, (h, w))
}

/// Mask counterpart of [`reflect_pad_to_multiple`]; label masks must pad the
/// same way as the frames they annotate.
pub fn reflect_pad_mask_to_multiple(mask: &BinaryMask, m: usize) -> BinaryMask {
    let (h, w) = mask.dim();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if (ph, pw) == (h, w) {
        return mask.clone();
    }
    Array2::from_shape_fn((ph, pw), |(y, x)| {
        mask[(reflect_index(y, h), reflect_index(x, w))]
    })
}

/// Crops the top-left `(height, width)` region, undoing [`reflect_pad_to_multiple`].
pub fn crop_to(map: &ScalarMap, size: (usize, usize)) -> ScalarMap {
    map.slice(s![..size.0, ..size.1]).to_owned()
}

/// Crop for binary masks, same contract as [`crop_to`].
pub fn crop_mask_to(mask: &BinaryMask, size: (usize, usize)) -> BinaryMask {
    mask.slice(s![..size.0, ..size.1]).to_owned()
}
