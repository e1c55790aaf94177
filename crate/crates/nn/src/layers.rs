//! Layers of the reference CPU backend.
//!
//! Each layer implements [`Layer`]: `forward` in [`Mode::Train`] caches what
//! `backward` needs, `backward` consumes the cache, accumulates parameter
//! gradients into [`Param::grad`] and returns the gradient with respect to
//! the layer input. Convolutions run as im2col followed by a GEMM per image.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            grad: vec![T::zero(); value.len()],
            value,
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T>;

    /// Gradient of the loss with respect to the last `forward` input.
    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T>;

    /// Trainable parameters, in a fixed order.
    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param<T>)) {}

    /// Non-trainable state (batch-norm running statistics), in a fixed order.
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Vec<T>)) {}
}

/// Spatial geometry of a square-kernel convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn output(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output positions `o` whose tap `input = o * stride + offset - pad`
    /// lands inside `[0, len)`.
    fn valid_range(&self, offset: usize, len: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let off = offset as isize;
        // o * s + off - p >= 0
        let lo = ((p - off).max(0) + s - 1) / s;
        // o * s + off - p <= len - 1
        let hi_num = len as isize - 1 + p - off;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        let lo = (lo as usize).min(out);
        let hi = (hi as usize).min(out);
        (lo, hi.max(lo))
    }
}

/// Unfolds one `[C, H, W]` image into `[C * k * k, OH * OW]`.
pub fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, win: Window, col: &mut [T]) {
    let (oh, ow) = (win.output(h), win.output(w));
    let k = win.kernel;
    let plane = oh * ow;
    debug_assert_eq!(col.len(), c * k * k * plane);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = win.valid_range(ki, h, oh);
            for kj in 0..k {
                let (xlo, xhi) = win.valid_range(kj, w, ow);
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                dst[..ylo * ow].fill(T::zero());
                dst[yhi * ow..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * win.stride + ki - win.pad;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    drow[..xlo].fill(T::zero());
                    drow[xhi..].fill(T::zero());
                    let srow = &src[iy * w..(iy + 1) * w];
                    if win.stride == 1 {
                        let ix0 = xlo + kj - win.pad;
                        drow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate().take(xhi).skip(xlo) {
                            *d = srow[ox * win.stride + kj - win.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `[C * k * k, OH * OW]` back into `[C, H, W]`,
/// accumulating overlapping taps into `x`.
pub fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, win: Window, x: &mut [T]) {
    let (oh, ow) = (win.output(h), win.output(w));
    let k = win.kernel;
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = win.valid_range(ki, h, oh);
            for kj in 0..k {
                let (xlo, xhi) = win.valid_range(kj, w, ow);
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * win.stride + ki - win.pad;
                    let drow = &mut dst[iy * w..(iy + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for ox in xlo..xhi {
                        drow[ox * win.stride + kj - win.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

/// Bias-free 2-D convolution.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    in_channels: usize,
    out_channels: usize,
    window: Window,
    /// The network input needs no gradient; skip computing it.
    input_grad: bool,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-normal initialisation scaled by fan-in.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        window: Window,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * window.kernel * window.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let n = out_channels * fan_in;
        let value = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Conv2d {
            weight: Param::new(
                &[out_channels, in_channels, window.kernel, window.kernel],
                value,
            ),
            in_channels,
            out_channels,
            window,
            input_grad: true,
            input: None,
        }
    }

    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn window(&self) -> Window {
        self.window
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.window.kernel * self.window.kernel
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = (self.window.output(h), self.window.output(w));
        let (plane, k) = (oh * ow, self.patch_len());
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        let mut col = vec![T::zero(); k * plane];
        let in_per = c * h * w;
        let out_per = self.out_channels * plane;
        for b in 0..n {
            im2col(&x.data()[b * in_per..(b + 1) * in_per], c, h, w, self.window, &mut col);
            gemm(
                T::one(),
                MatRef::new(&self.weight.value, self.out_channels, k),
                MatRef::new(&col, k, plane),
                T::zero(),
                &mut out.data_mut()[b * out_per..(b + 1) * out_per],
            );
        }
        self.input = (mode == Mode::Train).then_some(x);
        out
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without train forward");
        let (n, c, h, w) = x.dims4();
        let (_, o, oh, ow) = grad.dims4();
        let (plane, k) = (oh * ow, self.patch_len());
        let mut col = vec![T::zero(); k * plane];
        let mut dx = if self.input_grad {
            Tensor::zeros(&[n, c, h, w])
        } else {
            Tensor::zeros(&[0, c, h, w])
        };
        let in_per = c * h * w;
        let out_per = o * plane;
        for b in 0..n {
            let g = &grad.data()[b * out_per..(b + 1) * out_per];
            im2col(&x.data()[b * in_per..(b + 1) * in_per], c, h, w, self.window, &mut col);
            // dW += g * col^T
            gemm(
                T::one(),
                MatRef::new(g, o, plane),
                MatRef::transposed(&col, plane, k),
                T::one(),
                &mut self.weight.grad,
            );
            if self.input_grad {
                // dcol = W^T * g
                gemm(
                    T::one(),
                    MatRef::transposed(&self.weight.value, k, o),
                    MatRef::new(g, o, plane),
                    T::zero(),
                    &mut col,
                );
                col2im(&col, c, h, w, self.window, &mut dx.data_mut()[b * in_per..(b + 1) * in_per]);
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
    }
}

/// Batch normalisation over `(N, H, W)` per channel.
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    x_hat: Option<Tensor<T>>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(&[channels], vec![T::one(); channels]),
            beta: Param::new(&[channels], vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            x_hat: None,
            inv_std: Vec::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut inv_std = vec![0.0; c];
        let mut shift = vec![0.0; c];

        for ch in 0..c {
            let (mean, inv) = if mode == Mode::Train {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for b in 0..n {
                    let s = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for &v in s {
                        let v = v.to_f64_lossy();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let m = self.momentum;
                self.running_mean[ch] = T::from_f64_lossy(
                    (1.0 - m) * self.running_mean[ch].to_f64_lossy() + m * mean,
                );
                self.running_var[ch] = T::from_f64_lossy(
                    (1.0 - m) * self.running_var[ch].to_f64_lossy() + m * unbiased,
                );
                (mean, 1.0 / (var + self.eps).sqrt())
            } else {
                let mean = self.running_mean[ch].to_f64_lossy();
                let var = self.running_var[ch].to_f64_lossy();
                (mean, 1.0 / (var + self.eps).sqrt())
            };
            inv_std[ch] = inv;
            shift[ch] = mean;
        }

        let x_hat = if mode == Mode::Train {
            for ch in 0..c {
                let (mean, inv) = (T::from_f64_lossy(shift[ch]), T::from_f64_lossy(inv_std[ch]));
                for b in 0..n {
                    for v in &mut x.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        *v = (*v - mean) * inv;
                    }
                }
            }
            Some(x.clone())
        } else {
            None
        };

        for ch in 0..c {
            let g = self.gamma.value[ch];
            let be = self.beta.value[ch];
            let (mean, inv) = (T::from_f64_lossy(shift[ch]), T::from_f64_lossy(inv_std[ch]));
            for b in 0..n {
                for v in &mut x.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *v = if mode == Mode::Train {
                        g * *v + be
                    } else {
                        g * ((*v - mean) * inv) + be
                    };
                }
            }
        }
        self.x_hat = x_hat;
        self.inv_std = inv_std;
        x
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let x_hat = self.x_hat.take().expect("batch norm backward without train forward");
        let (n, c, h, w) = grad.dims4();
        let hw = h * w;
        let count = (n * hw) as f64;
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for (&dy, &xh) in grad.data()[range.clone()].iter().zip(&x_hat.data()[range]) {
                    let dy = dy.to_f64_lossy();
                    sum_dy += dy;
                    sum_dy_xhat += dy * xh.to_f64_lossy();
                }
            }
            self.gamma.grad[ch] += T::from_f64_lossy(sum_dy_xhat);
            self.beta.grad[ch] += T::from_f64_lossy(sum_dy);

            let scale = self.gamma.value[ch].to_f64_lossy() * self.inv_std[ch] / count;
            let (mean_dy, mean_dy_xhat) = (sum_dy / count, sum_dy_xhat / count);
            let scale_t = T::from_f64_lossy(scale * count);
            let mean_dy_t = T::from_f64_lossy(mean_dy);
            let mean_dy_xhat_t = T::from_f64_lossy(mean_dy_xhat);
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                let xh = &x_hat.data()[range.clone()];
                for (dy, &xh) in grad.data_mut()[range].iter_mut().zip(xh) {
                    *dy = scale_t * (*dy - mean_dy_t - xh * mean_dy_xhat_t);
                }
            }
        }
        grad
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Train {
            self.mask.clear();
            self.mask.extend(x.data().iter().map(|&v| v > T::zero()));
        }
        for v in x.data_mut() {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        assert_eq!(self.mask.len(), grad.len(), "relu backward without train forward");
        for (g, &on) in grad.data_mut().iter_mut().zip(&self.mask) {
            if !on {
                *g = T::zero();
            }
        }
        self.mask.clear();
        grad
    }
}

/// Max pooling; ties resolve to the first maximum in scan order.
pub struct MaxPool2d {
    window: Window,
    argmax: Vec<u32>,
    input_shape: [usize; 4],
}

impl MaxPool2d {
    pub fn new(window: Window) -> Self {
        MaxPool2d {
            window,
            argmax: Vec::new(),
            input_shape: [0; 4],
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let win = self.window;
        let (oh, ow) = (win.output(h), win.output(w));
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let train = mode == Mode::Train;
        self.argmax.clear();
        if train {
            self.argmax.reserve(n * c * oh * ow);
        }
        let od = out.data_mut();
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                let y0 = (oy * win.stride) as isize - win.pad as isize;
                for ox in 0..ow {
                    let x0 = (ox * win.stride) as isize - win.pad as isize;
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for ky in 0..win.kernel as isize {
                        let iy = y0 + ky;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..win.kernel as isize {
                            let ix = x0 + kx;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            if src[at] > best {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    od[(plane * oh + oy) * ow + ox] = best;
                    if train {
                        self.argmax.push(best_at as u32);
                    }
                }
            }
        }
        self.input_shape = [n, c, h, w];
        out
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = self.input_shape;
        assert_eq!(self.argmax.len(), grad.len(), "max pool backward without train forward");
        let per_out = grad.len() / (n * c).max(1);
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for plane in 0..n * c {
            let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
            for i in 0..per_out {
                let j = plane * per_out + i;
                dst[self.argmax[j] as usize] += grad.data()[j];
            }
        }
        self.argmax.clear();
        dx
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    hw: (usize, usize),
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: Tensor<T>, _mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let area = (h * w) as f64;
        let data = x
            .data()
            .chunks_exact(h * w)
            .map(|plane| {
                let s: f64 = plane.iter().map(|v| v.to_f64_lossy()).sum();
                T::from_f64_lossy(s / area)
            })
            .collect();
        self.hw = (h, w);
        Tensor::from_vec(&[n, c], data)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let (n, c) = grad.dims2();
        let (h, w) = self.hw;
        let scale = T::from_f64_lossy(1.0 / (h * w) as f64);
        let mut data = Vec::with_capacity(n * c * h * w);
        for &g in grad.data() {
            data.extend(std::iter::repeat_n(g * scale, h * w));
        }
        Tensor::from_vec(&[n, c, h, w], data)
    }
}

/// Fully connected layer, `y = x W^T + b`.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut sample = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let weight = sample(outputs * inputs);
        let bias = sample(outputs);
        Linear {
            weight: Param::new(&[outputs, inputs], weight),
            bias: Param::new(&[outputs], bias),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, f) = x.dims2();
        let (o, i) = (self.outputs(), self.inputs());
        assert_eq!(f, i, "linear input features");
        let mut out = Tensor::zeros(&[n, o]);
        for row in out.data_mut().chunks_exact_mut(o) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            T::one(),
            MatRef::new(x.data(), n, i),
            MatRef::transposed(&self.weight.value, i, o),
            T::one(),
            out.data_mut(),
        );
        self.input = (mode == Mode::Train).then_some(x);
        out
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("linear backward without train forward");
        let (n, o) = grad.dims2();
        let i = self.inputs();
        // dW += g^T x
        gemm(
            T::one(),
            MatRef::transposed(grad.data(), o, n),
            MatRef::new(x.data(), n, i),
            T::one(),
            &mut self.weight.grad,
        );
        for row in grad.data().chunks_exact(o) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(
            T::one(),
            MatRef::new(grad.data(), n, o),
            MatRef::new(&self.weight.value, o, i),
            T::zero(),
            dx.data_mut(),
        );
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
