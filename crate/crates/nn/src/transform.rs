//! Model input transform: bilinear upsampling of the 60x60 RGB chunk image
//! followed by scaling to [0, 1].

use flowpix_core::pixels::{EncodedImage, CHANNELS, IMAGE_SIDE};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INPUT_SIDE: usize = 224;

/// Source taps for each output coordinate: `(lo, hi, weight_of_hi)`.
/// Uses half-pixel centres and clamps at the border.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Resizes a planar `[C, H, W]` image to `[C, side, side]`.
pub fn resize_planar(src: &[f64], channels: usize, h: usize, w: usize, side: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, side);
    let tx = bilinear_taps(w, side);
    let mut out = vec![0.0; channels * side * side];
    // horizontal pass, then vertical
    let mut rows = vec![0.0; h * side];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for (x, &(lo, hi, a)) in tx.iter().enumerate() {
                let r = &plane[y * w..(y + 1) * w];
                rows[y * side + x] = r[lo] * (1.0 - a) + r[hi] * a;
            }
        }
        let dst = &mut out[c * side * side..(c + 1) * side * side];
        for (y, &(lo, hi, a)) in ty.iter().enumerate() {
            for x in 0..side {
                dst[y * side + x] = rows[lo * side + x] * (1.0 - a) + rows[hi * side + x] * a;
            }
        }
    }
    out
}

/// `[3, side, side]` input tensor data for one image.
pub fn transform_pixels<T: Scalar>(image: &EncodedImage, side: usize) -> Vec<T> {
    let px = image.pixels();
    let mut planar = vec![0.0; CHANNELS * IMAGE_SIDE * IMAGE_SIDE];
    for (i, rgb) in px.chunks_exact(CHANNELS).enumerate() {
        for (c, &v) in rgb.iter().enumerate() {
            planar[c * IMAGE_SIDE * IMAGE_SIDE + i] = v as f64 / 255.0;
        }
    }
    resize_planar(&planar, CHANNELS, IMAGE_SIDE, IMAGE_SIDE, side)
        .into_iter()
        .map(T::from_f64_lossy)
        .collect()
}

pub fn transform_image<T: Scalar>(image: &EncodedImage) -> Tensor<T> {
    Tensor::from_vec(&[1, CHANNELS, INPUT_SIDE, INPUT_SIDE], transform_pixels(image, INPUT_SIDE))
}

/// Stacks images into one `[N, 3, side, side]` batch.
pub fn transform_batch<'a, T: Scalar>(
    images: impl IntoIterator<Item = &'a EncodedImage>,
    side: usize,
) -> Tensor<T> {
    let mut data = Vec::new();
    let mut n = 0;
    for image in images {
        data.extend(transform_pixels::<T>(image, side));
        n += 1;
    }
    Tensor::from_vec(&[n, CHANNELS, side, side], data)
}
