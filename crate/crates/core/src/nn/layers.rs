use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample activation shape, stored row-major as height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape3 {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape3 { height, width, channels }
    }

    pub const fn flat(len: usize) -> Self {
        Shape3::new(1, 1, len)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride 1, "same" padding. Even kernels pad one more cell at the
    /// bottom/right than at the top/left.
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
}

/// Trainable weights of a dense or convolution layer, with gradient buffers
/// of matching shape.
///
/// Dense weights are `(inputs, outputs)`. Convolution weights are
/// `(kernel_h * kernel_w * in_channels, out_channels)` with rows ordered by
/// kernel row, kernel column, then input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub weight_grad: Array2<f64>,
    pub bias_grad: Array1<f64>,
}

impl Params {
    fn he_uniform(fan_in: usize, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit));
        Params {
            weight,
            bias: Array1::zeros(cols),
            weight_grad: Array2::zeros((rows, cols)),
            bias_grad: Array1::zeros(cols),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
    }
}

/// Parameter gradients produced by one backward pass, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Layer {
    kind: LayerKind,
    input: Shape3,
    output: Shape3,
    pub(crate) params: Option<Params>,
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Array2<f64>),
    Mask(Array2<f64>),
    Argmax(Vec<u32>),
    Nothing,
}

impl Layer {
    pub(crate) fn new(kind: LayerKind, input: Shape3, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (output, params) = match kind {
            LayerKind::Dense { inputs, outputs } => {
                if inputs != input.len() || outputs == 0 {
                    return Err(Error::Config(format!(
                        "dense layer {inputs}->{outputs} cannot take input of shape {input}"
                    )));
                }
                (Shape3::flat(outputs), Some(Params::he_uniform(inputs, inputs, outputs, rng)))
            }
            LayerKind::Conv2d { kernel_h, kernel_w, in_channels, out_channels } => {
                if in_channels != input.channels || kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                    return Err(Error::Config(format!(
                        "conv {kernel_h}x{kernel_w} {in_channels}->{out_channels} cannot take input of shape {input}"
                    )));
                }
                let fan_in = kernel_h * kernel_w * in_channels;
                (
                    Shape3::new(input.height, input.width, out_channels),
                    Some(Params::he_uniform(fan_in, fan_in, out_channels, rng)),
                )
            }
            LayerKind::MaxPool { size, stride } => {
                if size == 0 || stride == 0 || size > input.height || size > input.width {
                    return Err(Error::Config(format!(
                        "max-pool {size}x{size}/{stride} cannot take input of shape {input}"
                    )));
                }
                (
                    Shape3::new((input.height - size) / stride + 1, (input.width - size) / stride + 1, input.channels),
                    None,
                )
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                (input, None)
            }
            LayerKind::Relu => (input, None),
            LayerKind::Flatten => (Shape3::flat(input.len()), None),
        };
        Ok(Layer { kind, input, output, params })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn output_shape(&self) -> Shape3 {
        self.output
    }

    pub fn params(&self) -> Option<&Params> {
        self.params.as_ref()
    }

    pub fn params_mut(&mut self) -> Option<&mut Params> {
        self.params.as_mut()
    }

    /// `dropout_rng` is `Some` only in training mode.
    pub(crate) fn forward(
        &self,
        x: Array2<f64>,
        dropout_rng: Option<&mut ChaCha8Rng>,
        keep_cache: bool,
    ) -> (Array2<f64>, Cache) {
        match self.kind {
            LayerKind::Dense { .. } => {
                let p = self.params.as_ref().expect("dense layer has parameters");
                let mut out = x.dot(&p.weight);
                out += &p.bias;
                (out, if keep_cache { Cache::Input(x) } else { Cache::Nothing })
            }
            LayerKind::Conv2d { .. } => {
                let out = self.conv_forward(x.view());
                (out, if keep_cache { Cache::Input(x) } else { Cache::Nothing })
            }
            LayerKind::MaxPool { size, stride } => {
                let (out, argmax) = maxpool_forward(x.view(), self.input, self.output, size, stride);
                (out, if keep_cache { Cache::Argmax(argmax) } else { Cache::Nothing })
            }
            LayerKind::Relu => {
                let mut out = x;
                out.mapv_inplace(|v| v.max(0.0));
                if keep_cache {
                    let mask = out.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    (out, Cache::Mask(mask))
                } else {
                    (out, Cache::Nothing)
                }
            }
            LayerKind::Dropout { rate } => match dropout_rng {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask =
                        Array2::from_shape_simple_fn(x.dim(), || if rng.random::<f64>() < rate { 0.0 } else { keep });
                    let out = &x * &mask;
                    (out, if keep_cache { Cache::Mask(mask) } else { Cache::Nothing })
                }
                _ => (x, Cache::Nothing),
            },
            LayerKind::Flatten => (x, Cache::Nothing),
        }
    }

    /// Returns the gradient with respect to the layer input and, for layers
    /// with parameters, the parameter gradient.
    pub(crate) fn backward(
        &self,
        dout: Array2<f64>,
        cache: &Cache,
        need_input_grad: bool,
    ) -> (Option<Array2<f64>>, Option<ParamGrad>) {
        match (self.kind, cache) {
            (LayerKind::Dense { .. }, Cache::Input(x)) => {
                let p = self.params.as_ref().expect("dense layer has parameters");
                let grad = ParamGrad { weight: x.t().dot(&dout), bias: dout.sum_axis(Axis(0)) };
                let dx = need_input_grad.then(|| dout.dot(&p.weight.t()));
                (dx, Some(grad))
            }
            (LayerKind::Conv2d { .. }, Cache::Input(x)) => {
                let (dx, grad) = self.conv_backward(x.view(), dout.view(), need_input_grad);
                (dx, Some(grad))
            }
            (LayerKind::MaxPool { .. }, Cache::Argmax(argmax)) => {
                let batch = dout.nrows();
                let mut dx = Array2::zeros((batch, self.input.len()));
                for (b, (drow, mut dxrow)) in dout.rows().into_iter().zip(dx.rows_mut()).enumerate() {
                    let idx = &argmax[b * self.output.len()..(b + 1) * self.output.len()];
                    for (&g, &i) in drow.iter().zip(idx) {
                        dxrow[i as usize] += g;
                    }
                }
                (Some(dx), None)
            }
            (LayerKind::Relu | LayerKind::Dropout { .. }, Cache::Mask(mask)) => (Some(dout * mask), None),
            (LayerKind::Dropout { .. } | LayerKind::Flatten, Cache::Nothing) => (Some(dout), None),
            (kind, _) => unreachable!("layer {kind:?} has no usable forward cache"),
        }
    }

    fn conv_geometry(&self) -> (usize, usize, usize, usize) {
        match self.kind {
            LayerKind::Conv2d { kernel_h, kernel_w, .. } => {
                (kernel_h, kernel_w, (kernel_h - 1) / 2, (kernel_w - 1) / 2)
            }
            _ => unreachable!(),
        }
    }

    /// Gathers every receptive field of one sample into a
    /// `(height * width, kernel_h * kernel_w * channels)` matrix.
    fn im2col(&self, sample: &[f64], cols: &mut Array2<f64>) {
        let (kh, kw, pad_top, pad_left) = self.conv_geometry();
        let Shape3 { height, width, channels } = self.input;
        cols.fill(0.0);
        for oy in 0..height {
            for ox in 0..width {
                let mut row = cols.row_mut(oy * width + ox);
                let row = row.as_slice_mut().expect("im2col rows are contiguous");
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        let src = (iy as usize * width + ix as usize) * channels;
                        let dst = (ky * kw + kx) * channels;
                        row[dst..dst + channels].copy_from_slice(&sample[src..src + channels]);
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: ArrayView2<'_, f64>, sample_grad: &mut [f64]) {
        let (kh, kw, pad_top, pad_left) = self.conv_geometry();
        let Shape3 { height, width, channels } = self.input;
        for oy in 0..height {
            for ox in 0..width {
                let row = cols.row(oy * width + ox);
                let row = row.as_slice().expect("col rows are contiguous");
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        let dst = (iy as usize * width + ix as usize) * channels;
                        let src = (ky * kw + kx) * channels;
                        for c in 0..channels {
                            sample_grad[dst + c] += row[src + c];
                        }
                    }
                }
            }
        }
    }

    fn conv_forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let p = self.params.as_ref().expect("conv layer has parameters");
        let batch = x.nrows();
        let pixels = self.input.height * self.input.width;
        let mut cols = Array2::zeros((pixels, p.weight.nrows()));
        let mut out = Array2::zeros((batch, self.output.len()));
        for (sample, mut out_row) in x.rows().into_iter().zip(out.rows_mut()) {
            let sample = sample.as_slice().expect("batch rows are contiguous");
            self.im2col(sample, &mut cols);
            let mut y = cols.dot(&p.weight);
            y += &p.bias;
            out_row.assign(&ndarray::ArrayView1::from(y.as_slice().expect("fresh gemm output is contiguous")));
        }
        out
    }

    fn conv_backward(
        &self,
        x: ArrayView2<'_, f64>,
        dout: ArrayView2<'_, f64>,
        need_input_grad: bool,
    ) -> (Option<Array2<f64>>, ParamGrad) {
        let p = self.params.as_ref().expect("conv layer has parameters");
        let pixels = self.input.height * self.input.width;
        let out_ch = self.output.channels;
        let mut cols = Array2::zeros((pixels, p.weight.nrows()));
        let mut grad = ParamGrad { weight: Array2::zeros(p.weight.dim()), bias: Array1::zeros(out_ch) };
        let mut dx = need_input_grad.then(|| Array2::zeros(x.dim()));
        for b in 0..x.nrows() {
            let sample = x.row(b);
            self.im2col(sample.as_slice().expect("batch rows are contiguous"), &mut cols);
            let dy_row = dout.row(b);
            let dy = dy_row.to_shape((pixels, out_ch)).expect("conv output row reshapes to pixels x channels");
            ndarray::linalg::general_mat_mul(1.0, &cols.t(), &dy, 1.0, &mut grad.weight);
            grad.bias += &dy.sum_axis(Axis(0));
            if let Some(dx) = dx.as_mut() {
                // A single-channel product can come back column-major.
                let dcols = dy.dot(&p.weight.t());
                let dcols = dcols.as_standard_layout();
                let mut dx_row = dx.slice_mut(s![b, ..]);
                self.col2im_add(dcols.view(), dx_row.as_slice_mut().expect("batch rows are contiguous"));
            }
        }
        (dx, grad)
    }
}

fn maxpool_forward(
    x: ArrayView2<'_, f64>,
    input: Shape3,
    output: Shape3,
    size: usize,
    stride: usize,
) -> (Array2<f64>, Vec<u32>) {
    let batch = x.nrows();
    let mut out = Array2::zeros((batch, output.len()));
    let mut argmax = Vec::with_capacity(batch * output.len());
    let ch = input.channels;
    for (sample, mut out_row) in x.rows().into_iter().zip(out.rows_mut()) {
        for oy in 0..output.height {
            for ox in 0..output.width {
                for c in 0..ch {
                    let mut best_i = ((oy * stride) * input.width + ox * stride) * ch + c;
                    let mut best = sample[best_i];
                    for ky in 0..size {
                        for kx in 0..size {
                            let i = ((oy * stride + ky) * input.width + ox * stride + kx) * ch + c;
                            // First maximum wins ties.
                            if sample[i] > best {
                                best = sample[i];
                                best_i = i;
                            }
                        }
                    }
                    out_row[(oy * output.width + ox) * ch + c] = best;
                    argmax.push(best_i as u32);
                }
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn shapes() {
        let l = Layer::new(LayerKind::MaxPool { size: 2, stride: 2 }, Shape3::new(7, 7, 3), &mut rng()).unwrap();
        assert_eq!(l.output_shape(), Shape3::new(3, 3, 3));
        let conv = Layer::new(
            LayerKind::Conv2d { kernel_h: 3, kernel_w: 3, in_channels: 1, out_channels: 4 },
            Shape3::new(28, 28, 1),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(conv.output_shape(), Shape3::new(28, 28, 4));
        assert_eq!(conv.params().unwrap().weight.dim(), (9, 4));
        assert!(Layer::new(LayerKind::Dense { inputs: 5, outputs: 2 }, Shape3::flat(4), &mut rng()).is_err());
        assert!(Layer::new(LayerKind::Dropout { rate: 1.0 }, Shape3::flat(4), &mut rng()).is_err());
    }

    #[test]
    fn conv_with_zero_kernel_is_zero() {
        let mut conv = Layer::new(
            LayerKind::Conv2d { kernel_h: 3, kernel_w: 3, in_channels: 2, out_channels: 3 },
            Shape3::new(5, 5, 2),
            &mut rng(),
        )
        .unwrap();
        conv.params.as_mut().unwrap().weight.fill(0.0);
        let x = Array2::from_shape_fn((2, 50), |(i, j)| (i * 50 + j) as f64 * 0.1);
        let (y, _) = conv.forward(x, None, false);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let shape = Shape3::new(4, 5, 2);
        for (kh, kw) in [(3, 3), (2, 2), (1, 3)] {
            let conv = Layer::new(
                LayerKind::Conv2d { kernel_h: kh, kernel_w: kw, in_channels: 2, out_channels: 3 },
                shape,
                &mut rng(),
            )
            .unwrap();
            let x = Array2::from_shape_fn((1, shape.len()), |(_, j)| ((j * 7) % 11) as f64 - 5.0);
            let (y, _) = conv.forward(x.clone(), None, false);
            let p = conv.params().unwrap();
            let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
            for oy in 0..4 {
                for ox in 0..5 {
                    for co in 0..3 {
                        let mut acc = p.bias[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pt as isize;
                                let ix = ox as isize + kx as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= 4 || ix >= 5 {
                                    continue;
                                }
                                for ci in 0..2 {
                                    let xi = (iy as usize * 5 + ix as usize) * 2 + ci;
                                    acc += x[[0, xi]] * p.weight[[(ky * kw + kx) * 2 + ci, co]];
                                }
                            }
                        }
                        let got = y[[0, (oy * 5 + ox) * 3 + co]];
                        assert!((got - acc).abs() < 1e-12, "{kh}x{kw} at {oy},{ox},{co}");
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max() {
        let pool = Layer::new(LayerKind::MaxPool { size: 2, stride: 2 }, Shape3::new(2, 2, 1), &mut rng()).unwrap();
        let x = array![[1.0, 3.0, 3.0, 0.0]];
        let (y, cache) = pool.forward(x, None, true);
        assert_eq!(y, array![[3.0]]);
        let (dx, _) = pool.backward(array![[2.0]], &cache, true);
        assert_eq!(dx.unwrap(), array![[0.0, 2.0, 0.0, 0.0]]);
    }

    #[test]
    fn dropout_only_in_training() {
        let d = Layer::new(LayerKind::Dropout { rate: 0.5 }, Shape3::flat(1000), &mut rng()).unwrap();
        let x = Array2::ones((1, 1000));
        let (y, _) = d.forward(x.clone(), None, true);
        assert_eq!(y, x);
        let mut r = rng();
        let (y, _) = d.forward(x, Some(&mut r), true);
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        assert!((400..600).contains(&zeros), "{zeros}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
