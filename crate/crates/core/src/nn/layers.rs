use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Fully connected layer; `weights` is row-major `(out_features, in_features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Valid (unpadded) 2-D convolution over `[channels, height, width]` inputs.
/// `weights` is row-major `(out_channels, in_channels, kernel_h, kernel_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Relu,
    Flatten,
    MaxPool2d(MaxPool2d),
}

fn uniform_init<T: Scalar, R: Rng>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::narrow(rng.random_range(-bound..bound)))
        .collect()
}

/// Fan-in scaled uniform bound: He for layers feeding a ReLU, LeCun otherwise.
pub(crate) fn init_bound(fan_in: usize, relu_follows: bool) -> f64 {
    let gain = if relu_follows { 6.0 } else { 3.0 };
    (gain / fan_in as f64).sqrt()
}

impl<T: Scalar> Dense<T> {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if weights.len() != in_features * out_features || bias.len() != out_features {
            return Err(Error::InvalidTensor(format!(
                "dense {in_features}->{out_features} needs {} weights and {out_features} biases, got {} and {}",
                in_features * out_features,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Dense {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    pub fn init<R: Rng>(
        in_features: usize,
        out_features: usize,
        relu_follows: bool,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(in_features, relu_follows);
        Dense {
            in_features,
            out_features,
            weights: uniform_init(rng, in_features * out_features, bound),
            bias: vec![T::zero(); out_features],
        }
    }

    pub(crate) fn forward(&self, input: &[T], batch: usize, out: &mut [T]) {
        let (n_in, n_out) = (self.in_features, self.out_features);
        for b in 0..batch {
            let x = &input[b * n_in..(b + 1) * n_in];
            let y = &mut out[b * n_out..(b + 1) * n_out];
            for (j, yj) in y.iter_mut().enumerate() {
                let row = &self.weights[j * n_in..(j + 1) * n_in];
                *yj = T::narrow(self.bias[j].widen() + dot(row, x));
            }
        }
    }

    pub(crate) fn backward(
        &self,
        input: &[T],
        batch: usize,
        upstream: &[f64],
        grads: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        let (n_in, n_out) = (self.in_features, self.out_features);
        if let Some(grads) = grads {
            let (dw, db) = grads.split_at_mut(n_in * n_out);
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                let g = &upstream[b * n_out..(b + 1) * n_out];
                for (j, &gj) in g.iter().enumerate() {
                    if gj != 0.0 {
                        axpy(&mut dw[j * n_in..(j + 1) * n_in], gj, x);
                    }
                    db[j] += gj;
                }
            }
        }
        if let Some(dx) = input_grad {
            dx.fill(0.0);
            for b in 0..batch {
                let g = &upstream[b * n_out..(b + 1) * n_out];
                let dxb = &mut dx[b * n_in..(b + 1) * n_in];
                for (j, &gj) in g.iter().enumerate() {
                    if gj != 0.0 {
                        axpy(dxb, gj, &self.weights[j * n_in..(j + 1) * n_in]);
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn init<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        relu_follows: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let bound = init_bound(fan_in, relu_follows);
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weights: uniform_init(rng, out_channels * fan_in, bound),
            bias: vec![T::zero(); out_channels],
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let [c, h, w] = input else { return None };
        let (kh, kw) = self.kernel;
        if *c != self.in_channels || *h < kh || *w < kw || self.stride == 0 {
            return None;
        }
        Some(vec![
            self.out_channels,
            (h - kh) / self.stride + 1,
            (w - kw) / self.stride + 1,
        ])
    }

    pub(crate) fn forward(&self, input: &[T], batch: usize, in_shape: &[usize], out: &mut [T]) {
        let (h, w) = (in_shape[1], in_shape[2]);
        let (kh, kw) = self.kernel;
        let oh = (h - kh) / self.stride + 1;
        let ow = (w - kw) / self.stride + 1;
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * oh * ow;
        for b in 0..batch {
            let x = &input[b * in_len..(b + 1) * in_len];
            let y = &mut out[b * out_len..(b + 1) * out_len];
            for o in 0..self.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = self.bias[o].widen();
                        for c in 0..self.in_channels {
                            for ky in 0..kh {
                                let row = (c * h + oy * self.stride + ky) * w + ox * self.stride;
                                let wrow = ((o * self.in_channels + c) * kh + ky) * kw;
                                acc += dot(&self.weights[wrow..wrow + kw], &x[row..row + kw]);
                            }
                        }
                        y[(o * oh + oy) * ow + ox] = T::narrow(acc);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        input: &[T],
        batch: usize,
        in_shape: &[usize],
        upstream: &[f64],
        grads: Option<&mut [f64]>,
        mut input_grad: Option<&mut [f64]>,
    ) {
        let (h, w) = (in_shape[1], in_shape[2]);
        let (kh, kw) = self.kernel;
        let oh = (h - kh) / self.stride + 1;
        let ow = (w - kw) / self.stride + 1;
        let in_len = self.in_channels * h * w;
        let out_len = self.out_channels * oh * ow;
        let n_weights = self.weights.len();
        let mut grads = grads;
        if let Some(dx) = input_grad.as_deref_mut() {
            dx.fill(0.0);
        }
        for b in 0..batch {
            let x = &input[b * in_len..(b + 1) * in_len];
            let g = &upstream[b * out_len..(b + 1) * out_len];
            for o in 0..self.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(o * oh + oy) * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        if let Some(gr) = grads.as_deref_mut() {
                            gr[n_weights + o] += go;
                        }
                        for c in 0..self.in_channels {
                            for ky in 0..kh {
                                let row = (c * h + oy * self.stride + ky) * w + ox * self.stride;
                                let wrow = ((o * self.in_channels + c) * kh + ky) * kw;
                                if let Some(gr) = grads.as_deref_mut() {
                                    axpy(&mut gr[wrow..wrow + kw], go, &x[row..row + kw]);
                                }
                                if let Some(dx) = input_grad.as_deref_mut() {
                                    let dxb = &mut dx[b * in_len + row..b * in_len + row + kw];
                                    axpy(dxb, go, &self.weights[wrow..wrow + kw]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl MaxPool2d {
    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let [c, h, w] = input else { return None };
        if *h < self.size || *w < self.size || self.stride == 0 || self.size == 0 {
            return None;
        }
        Some(vec![
            *c,
            (h - self.size) / self.stride + 1,
            (w - self.size) / self.stride + 1,
        ])
    }

    /// Writes pooled values and the flat within-sample index of each maximum.
    pub(crate) fn forward<T: Scalar>(
        &self,
        input: &[T],
        batch: usize,
        in_shape: &[usize],
        out: &mut [T],
        argmax: &mut [u32],
    ) {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let oh = (h - self.size) / self.stride + 1;
        let ow = (w - self.size) / self.stride + 1;
        let in_len = c * h * w;
        let out_len = c * oh * ow;
        for b in 0..batch {
            let x = &input[b * in_len..(b + 1) * in_len];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (ch * h + oy * self.stride) * w + ox * self.stride;
                        for ky in 0..self.size {
                            for kx in 0..self.size {
                                let idx =
                                    (ch * h + oy * self.stride + ky) * w + ox * self.stride + kx;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        let o = b * out_len + (ch * oh + oy) * ow + ox;
                        out[o] = x[best];
                        argmax[o] = best as u32;
                    }
                }
            }
        }
    }

    pub(crate) fn backward(
        &self,
        argmax: &[u32],
        in_len: usize,
        out_len: usize,
        upstream: &[f64],
        dx: &mut [f64],
    ) {
        dx.fill(0.0);
        for (o, (&src, &g)) in argmax.iter().zip(upstream).enumerate() {
            let b = o / out_len;
            dx[b * in_len + src as usize] += g;
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::MaxPool2d(_) => "maxpool2d",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            Layer::Conv2d(c) => c.weights.len() + c.bias.len(),
            _ => 0,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// Parameters as one flat view: weights followed by bias.
    pub(crate) fn parameters(&self) -> Option<(&[T], &[T])> {
        match self {
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    pub(crate) fn parameters_mut(&mut self) -> Option<(&mut [T], &mut [T])> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::narrow(x.widen())).collect::<Vec<U>>();
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                in_features: d.in_features,
                out_features: d.out_features,
                weights: conv(&d.weights),
                bias: conv(&d.bias),
            }),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                weights: conv(&c.weights),
                bias: conv(&c.bias),
            }),
            Layer::Relu => Layer::Relu,
            Layer::Flatten => Layer::Flatten,
            Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense(d) => (input == [d.in_features]).then(|| vec![d.out_features]),
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Relu => Some(input.to_vec()),
            Layer::Flatten => Some(vec![input.iter().product()]),
            Layer::MaxPool2d(p) => p.output_shape(input),
        }
    }
}
