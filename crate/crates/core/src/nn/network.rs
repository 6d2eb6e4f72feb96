use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Cache, Layer, LayerKind, ParamGrad, Shape3};
use crate::activations::VariantConfig;
use crate::error::{Error, Result};
use crate::losses;

/// Forward-pass record needed by [`Network::backward_traced`].
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    batch: usize,
}

impl Trace {
    /// True when both passes took the same ReLU and max-pool branches, i.e.
    /// the network is one smooth function between the two inputs.
    pub(crate) fn same_branches(&self, other: &Trace) -> bool {
        self.caches.iter().zip(&other.caches).all(|pair| match pair {
            (Cache::Mask(a), Cache::Mask(b)) => a == b,
            (Cache::Argmax(a), Cache::Argmax(b)) => a == b,
            _ => true,
        })
    }
}

/// Gradients of every parameterized layer, `None` for the rest.
pub type Gradients = Vec<Option<ParamGrad>>;

#[derive(Debug, Clone)]
struct Pending {
    trace: Trace,
    logits: Array2<f64>,
}

/// Ordered layer stack topped by a softmax-family head.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    head: VariantConfig,
    input: Shape3,
    classes: usize,
    dropout_rng: ChaCha8Rng,
    pending: Option<Pending>,
}

/// Builds a network layer by layer, inferring each layer's input shape.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input: Shape3,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy)]
enum LayerSpec {
    Dense(usize),
    Conv2d(usize, usize, usize),
    MaxPool(usize, usize),
    Relu,
    Dropout(f64),
    Flatten,
}

impl NetworkBuilder {
    pub fn new(input: Shape3) -> Self {
        NetworkBuilder { input, layers: Vec::new() }
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        self.layers.push(LayerSpec::Dense(outputs));
        self
    }

    pub fn conv2d(mut self, kernel_h: usize, kernel_w: usize, out_channels: usize) -> Self {
        self.layers.push(LayerSpec::Conv2d(kernel_h, kernel_w, out_channels));
        self
    }

    pub fn maxpool(mut self, size: usize, stride: usize) -> Self {
        self.layers.push(LayerSpec::MaxPool(size, stride));
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(LayerSpec::Relu);
        self
    }

    pub fn dropout(mut self, rate: f64) -> Self {
        self.layers.push(LayerSpec::Dropout(rate));
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(LayerSpec::Flatten);
        self
    }

    /// Weights are He-uniform from `seed`; the dropout stream is seeded from
    /// `seed` as well.
    pub fn build(self, head: VariantConfig, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = self.input;
        let mut layers = Vec::with_capacity(self.layers.len());
        for spec in self.layers {
            let kind = match spec {
                LayerSpec::Dense(outputs) => {
                    if shape.height != 1 || shape.width != 1 {
                        return Err(Error::Config(format!(
                            "dense layer needs a flat input, got {shape}; add flatten first"
                        )));
                    }
                    LayerKind::Dense { inputs: shape.len(), outputs }
                }
                LayerSpec::Conv2d(kernel_h, kernel_w, out_channels) => {
                    LayerKind::Conv2d { kernel_h, kernel_w, in_channels: shape.channels, out_channels }
                }
                LayerSpec::MaxPool(size, stride) => LayerKind::MaxPool { size, stride },
                LayerSpec::Relu => LayerKind::Relu,
                LayerSpec::Dropout(rate) => LayerKind::Dropout { rate },
                LayerSpec::Flatten => LayerKind::Flatten,
            };
            let layer = Layer::new(kind, shape, &mut rng)?;
            shape = layer.output_shape();
            layers.push(layer);
        }
        Network::from_layers(self.input, layers, head, rng)
    }
}

impl Network {
    fn from_layers(input: Shape3, layers: Vec<Layer>, head: VariantConfig, dropout_rng: ChaCha8Rng) -> Result<Self> {
        let out = layers.last().map_or(input, Layer::output_shape);
        if out.height != 1 || out.width != 1 || out.channels < 2 {
            return Err(Error::Config(format!("network must end in at least 2 flat logits, ends in {out}")));
        }
        Ok(Network { layers, head, input, classes: out.channels, dropout_rng, pending: None })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> &VariantConfig {
        &self.head
    }

    pub fn set_head(&mut self, head: VariantConfig) {
        self.head = head;
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input.len() {
            return Err(Error::Config(format!(
                "input rows have {} features, network expects {} ({})",
                x.ncols(),
                self.input.len(),
                self.input
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Argument("empty input batch".into()));
        }
        Ok(())
    }

    /// Runs the layer stack. With `training` set, dropout is active and the
    /// activations are kept for [`Network::backward`].
    pub fn forward(&mut self, x: ArrayView2<'_, f64>, training: bool) -> Result<Array2<f64>> {
        if !training {
            self.pending = None;
            return self.infer(x);
        }
        let mut rng = self.dropout_rng.clone();
        let (logits, trace) = self.forward_traced(x, Some(&mut rng))?;
        self.dropout_rng = rng;
        self.pending = Some(Pending { trace, logits: logits.clone() });
        Ok(logits)
    }

    /// Backpropagates the head loss of the last training forward pass and
    /// accumulates parameter gradients. Returns the mean reported loss.
    pub fn backward(&mut self, labels: &[usize]) -> Result<f64> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a training forward pass".into()))?;
        let mut dlogits = Array2::zeros(pending.logits.dim());
        let loss = losses::mean_loss_grad(&self.head, pending.logits.view(), labels, dlogits.view_mut())?;
        let grads = self.backward_traced(&pending.trace, dlogits)?;
        self.accumulate(&grads);
        Ok(loss)
    }

    /// Eval-mode forward: no dropout, nothing cached.
    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut act = x.to_owned();
        for layer in &self.layers {
            act = layer.forward(act, None, false).0;
        }
        Ok(act)
    }

    /// Forward pass that returns its trace instead of storing it, so batch
    /// shards can run against a shared `&Network`. Dropout is active iff
    /// `dropout_rng` is given.
    pub fn forward_traced(
        &self,
        x: ArrayView2<'_, f64>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, Trace)> {
        self.check_input(&x)?;
        let mut act = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(act, dropout_rng.as_deref_mut(), true);
            caches.push(cache);
            act = out;
        }
        Ok((act, Trace { caches, batch: x.nrows() }))
    }

    pub fn backward_traced(&self, trace: &Trace, dlogits: Array2<f64>) -> Result<Gradients> {
        if dlogits.dim() != (trace.batch, self.classes) {
            return Err(Error::Config(format!(
                "logit gradient {:?} does not match trace batch {} x {} classes",
                dlogits.dim(),
                trace.batch,
                self.classes
            )));
        }
        let mut grads: Gradients = vec![None; self.layers.len()];
        let mut delta = dlogits;
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let (dx, g) = layer.backward(delta, cache, i > 0);
            grads[i] = g;
            match dx {
                Some(dx) => delta = dx,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Adds `grads` into the layers' gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if let (Some(p), Some(g)) = (layer.params.as_mut(), g) {
                p.weight_grad += &g.weight;
                p.bias_grad += &g.bias;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.layers.iter_mut().filter_map(|l| l.params.as_mut()) {
            p.zero_grad();
        }
    }

    /// Mean reported loss of the head in eval mode.
    pub fn mean_loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.infer(x)?;
        let mut scratch = Array2::zeros(logits.dim());
        losses::mean_loss_grad(&self.head, logits.view(), labels, scratch.view_mut())
    }

    /// [`Network::mean_loss`] plus the dropout-free trace of the pass.
    pub(crate) fn mean_loss_traced(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Trace)> {
        let (logits, trace) = self.forward_traced(x, None)?;
        let mut scratch = Array2::zeros(logits.dim());
        let loss = losses::mean_loss_grad(&self.head, logits.view(), labels, scratch.view_mut())?;
        Ok((loss, trace))
    }

    /// Inference-time class predictions (margins dropped).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        Ok(predict_rows(&self.head, logits.view()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::params).map(|p| p.len()).sum()
    }

    fn locate(&self, mut index: usize) -> Option<(usize, bool, usize)> {
        for (li, layer) in self.layers.iter().enumerate() {
            if let Some(p) = layer.params() {
                if index < p.weight.len() {
                    return Some((li, false, index));
                }
                index -= p.weight.len();
                if index < p.bias.len() {
                    return Some((li, true, index));
                }
                index -= p.bias.len();
            }
        }
        None
    }

    /// Parameter by flat index: each layer's weights (row-major), then its bias.
    pub fn param(&self, index: usize) -> Option<f64> {
        let (li, is_bias, i) = self.locate(index)?;
        let p = self.layers[li].params()?;
        Some(if is_bias { p.bias[i] } else { p.weight.as_slice().expect("weights are contiguous")[i] })
    }

    pub fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        let (li, is_bias, i) =
            self.locate(index).ok_or_else(|| Error::Argument(format!("parameter index {index} out of range")))?;
        let p = self.layers[li].params.as_mut().expect("located layer has params");
        if is_bias {
            p.bias[i] = value;
        } else {
            p.weight.as_slice_mut().expect("weights are contiguous")[i] = value;
        }
        Ok(())
    }

    pub fn param_grad(&self, index: usize) -> Option<f64> {
        let (li, is_bias, i) = self.locate(index)?;
        let p = self.layers[li].params()?;
        Some(if is_bias { p.bias_grad[i] } else { p.weight_grad.as_slice().expect("gradients are contiguous")[i] })
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.kind(), LayerKind::Dropout { rate } if rate > 0.0))
    }
}

pub(crate) fn predict_rows(head: &VariantConfig, logits: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut z = vec![0.0; logits.ncols()];
    let mut scratch = vec![0.0; logits.ncols()];
    logits
        .rows()
        .into_iter()
        .map(|row| {
            for (d, &s) in z.iter_mut().zip(row.iter()) {
                *d = s;
            }
            head.predict_slice(&z, &mut scratch)
        })
        .collect()
}
