use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Dense, Layer, MaxPool2d};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which output an input gradient is taken of: the raw logit `o_y` or the
/// softmax probability `f_y = softmax(o)_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientHead {
    Logit,
    #[default]
    Probability,
}

/// Ordered layer stack whose last dense layer is the classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    head_index: usize,
    classes: usize,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by a forward pass starting at layer `start`.
pub(crate) struct Trace<T> {
    pub start: usize,
    pub batch: usize,
    /// `activations[i - start]` is the input of layer `i`; the last entry holds the logits.
    pub activations: Vec<Vec<T>>,
    pub argmax: Vec<Vec<u32>>,
}

impl<T> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.activations
            .last()
            .expect("trace has at least one activation")
    }
}

/// Flat `weights ++ bias` gradient per layer; `None` for layers without
/// parameters or outside the requested scope.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub(crate) layers: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn layer(&self, index: usize) -> Option<&[f64]> {
        self.layers.get(index).and_then(|g| g.as_deref())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Scalar> Network<T> {
    /// Validates the layer chain and designates the last dense layer as head.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let head_index = layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense(_)))
            .ok_or_else(|| Error::config("network needs a dense classification head"))?;
        if layers[head_index + 1..]
            .iter()
            .any(|l| l.is_parameterized())
        {
            return Err(Error::config(
                "the head must be the last parameterized layer",
            ));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let current = shapes.last().expect("non-empty");
            let next = layer
                .output_shape(current)
                .ok_or_else(|| Error::ShapeMismatch {
                    layer: i,
                    expected: expected_input(layer),
                    actual: current.clone(),
                })?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out.len() != 1 {
            return Err(Error::config(format!(
                "network output must be a vector, got {out:?}"
            )));
        }
        let classes = out[0];
        Ok(Network {
            input_shape,
            layers,
            head_index,
            classes,
            shapes,
        })
    }

    pub fn builder(input_shape: &[usize]) -> NetworkBuilder {
        NetworkBuilder::new(input_shape)
    }

    /// `input -> [dense(h) -> relu]* -> dense(classes)`, flattening inputs of rank > 1 first.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut b = NetworkBuilder::new(input_shape);
        if input_shape.len() > 1 {
            b = b.flatten();
        }
        for &h in hidden {
            b = b.dense(h).relu();
        }
        b.dense(classes).build(seed)
    }

    /// Two 3x3 convolutions (8 and 16 channels, each followed by ReLU and 2x2
    /// max pooling) and two dense layers.
    pub fn small_cnn(
        input_shape: &[usize],
        hidden: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        NetworkBuilder::new(input_shape)
            .conv2d(8, (3, 3), 1)
            .relu()
            .max_pool(2, 2)
            .conv2d(16, (3, 3), 1)
            .relu()
            .max_pool(2, 2)
            .flatten()
            .dense(hidden)
            .relu()
            .dense(classes)
            .build(seed)
    }

    /// Same architecture, freshly initialized from `seed`.
    pub fn reinitialized(&self, seed: u64) -> Result<Self> {
        NetworkBuilder::from_network(self).build(seed)
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            head_index: self.head_index,
            classes: self.classes,
            shapes: self.shapes.clone(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn head_index(&self) -> usize {
        self.head_index
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-sample input shape of layer `index` (`index == layers().len()` gives the output shape).
    pub fn shape_at(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.layers[self.head_index].parameter_count()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, start: usize, input: &[T], batch: usize) -> Result<()> {
        let len: usize = self.shapes[start].iter().product();
        if input.len() != len * batch {
            return Err(Error::ShapeMismatch {
                layer: start,
                expected: [vec![batch], self.shapes[start].clone()].concat(),
                actual: vec![input.len()],
            });
        }
        Ok(())
    }

    /// Logits `o(x)` for a single input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let logits = self.forward_batch(x.data(), 1)?;
        Ok(Tensor::from_parts(vec![self.classes], logits))
    }

    /// Softmax probabilities `f(x) = softmax(o(x))`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.forward(x)?;
        let probs = softmax(&logits.to_f64());
        Ok(Tensor::from_parts(
            vec![self.classes],
            probs.into_iter().map(T::narrow).collect(),
        ))
    }

    /// Logits for `batch` row-major samples.
    pub fn forward_batch(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        self.forward_range(0, self.layers.len(), input, batch)
    }

    /// Runs layers `start..end` on a batch of layer-`start` inputs.
    pub fn forward_range(
        &self,
        start: usize,
        end: usize,
        input: &[T],
        batch: usize,
    ) -> Result<Vec<T>> {
        self.check_batch(start, input, batch)?;
        let mut current = input.to_vec();
        let mut scratch = Vec::new();
        for i in start..end {
            let mut aux = Vec::new();
            self.layer_forward(i, &current, batch, &mut scratch, &mut aux);
            std::mem::swap(&mut current, &mut scratch);
        }
        Ok(current)
    }

    pub(crate) fn forward_trace(
        &self,
        start: usize,
        input: &[T],
        batch: usize,
    ) -> Result<Trace<T>> {
        self.check_batch(start, input, batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() - start + 1);
        let mut argmax = Vec::with_capacity(self.layers.len() - start);
        activations.push(input.to_vec());
        for i in start..self.layers.len() {
            let mut out = Vec::new();
            let mut aux = Vec::new();
            self.layer_forward(
                i,
                activations.last().expect("non-empty"),
                batch,
                &mut out,
                &mut aux,
            );
            activations.push(out);
            argmax.push(aux);
        }
        Ok(Trace {
            start,
            batch,
            activations,
            argmax,
        })
    }

    fn layer_forward(
        &self,
        i: usize,
        input: &[T],
        batch: usize,
        out: &mut Vec<T>,
        aux: &mut Vec<u32>,
    ) {
        let out_len: usize = self.shapes[i + 1].iter().product::<usize>() * batch;
        out.clear();
        out.resize(out_len, T::zero());
        match &self.layers[i] {
            Layer::Dense(d) => d.forward(input, batch, out),
            Layer::Conv2d(c) => c.forward(input, batch, &self.shapes[i], out),
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(input) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
            }
            Layer::Flatten => out.copy_from_slice(input),
            Layer::MaxPool2d(p) => {
                aux.resize(out_len, 0);
                p.forward(input, batch, &self.shapes[i], out, aux);
            }
        }
    }

    /// Backpropagates `upstream` (d loss / d logits, `batch x classes`).
    ///
    /// Parameter gradients are produced for parameterized layers with index
    /// `>= params_from`; the input gradient of layer `trace.start` is produced
    /// when `want_input` is set. Propagation stops as early as possible.
    pub(crate) fn backward(
        &self,
        trace: &Trace<T>,
        upstream: Vec<f64>,
        params_from: Option<usize>,
        want_input: bool,
    ) -> Result<(Option<ParamGrads>, Option<Vec<f64>>)> {
        let start = trace.start;
        let batch = trace.batch;
        let stop = if want_input {
            start
        } else {
            match params_from {
                Some(from) => (from.max(start)..self.layers.len())
                    .find(|&i| self.layers[i].is_parameterized())
                    .unwrap_or(self.layers.len()),
                None => self.layers.len(),
            }
        };
        let mut grads = params_from.map(|_| ParamGrads {
            layers: vec![None; self.layers.len()],
        });
        let mut g = upstream;
        for i in (stop..self.layers.len()).rev() {
            let input = &trace.activations[i - start];
            let need_dx = i > stop || want_input;
            let in_len: usize = self.shapes[i].iter().product();
            let out_len: usize = self.shapes[i + 1].iter().product();
            let mut layer_grad = match (params_from, self.layers[i].is_parameterized()) {
                (Some(from), true) if i >= from => {
                    Some(vec![0.0; self.layers[i].parameter_count()])
                }
                _ => None,
            };
            let mut dx = if need_dx {
                vec![0.0; in_len * batch]
            } else {
                Vec::new()
            };
            match &self.layers[i] {
                Layer::Dense(d) => d.backward(
                    input,
                    batch,
                    &g,
                    layer_grad.as_deref_mut(),
                    need_dx.then_some(dx.as_mut_slice()),
                ),
                Layer::Conv2d(c) => c.backward(
                    input,
                    batch,
                    &self.shapes[i],
                    &g,
                    layer_grad.as_deref_mut(),
                    need_dx.then_some(dx.as_mut_slice()),
                ),
                Layer::Relu => {
                    if need_dx {
                        for ((d, &gv), &x) in dx.iter_mut().zip(&g).zip(input) {
                            *d = if x > T::zero() { gv } else { 0.0 };
                        }
                    }
                }
                Layer::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&g);
                    }
                }
                Layer::MaxPool2d(p) => {
                    if need_dx {
                        p.backward(&trace.argmax[i - start], in_len, out_len, &g, &mut dx);
                    }
                }
            }
            if let Some(lg) = &layer_grad {
                if lg.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { layer: i });
                }
            }
            if need_dx && dx.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
            if let (Some(gr), Some(lg)) = (grads.as_mut(), layer_grad) {
                gr.layers[i] = Some(lg);
            }
            g = dx;
        }
        Ok((grads, want_input.then_some(g)))
    }

    /// Gradient of `o_target` or `f_target` with respect to every input feature.
    pub fn input_gradient(
        &self,
        x: &Tensor<T>,
        target: usize,
        head: GradientHead,
    ) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let grad = self.input_gradients(x.data(), 1, target, head)?;
        Ok(Tensor::from_parts(
            x.shape().to_vec(),
            grad.into_iter().map(T::narrow).collect(),
        ))
    }

    /// Input gradients for a batch of points sharing one target class, kept in f64.
    pub fn input_gradients(
        &self,
        points: &[T],
        batch: usize,
        target: usize,
        head: GradientHead,
    ) -> Result<Vec<f64>> {
        if target >= self.classes {
            return Err(Error::Precondition(format!(
                "target class {target} out of range for {} classes",
                self.classes
            )));
        }
        let trace = self.forward_trace(0, points, batch)?;
        let upstream = self.head_upstream(trace.logits(), batch, target, head);
        let (_, dx) = self.backward(&trace, upstream, None, true)?;
        Ok(dx.expect("input gradient requested"))
    }

    /// `o_target` or `f_target` for every sample of a batch.
    pub fn class_scores(
        &self,
        points: &[T],
        batch: usize,
        target: usize,
        head: GradientHead,
    ) -> Result<Vec<f64>> {
        let logits = self.forward_batch(points, batch)?;
        Ok(logits
            .chunks(self.classes)
            .map(|row| {
                let row: Vec<f64> = row.iter().map(|v| v.widen()).collect();
                match head {
                    GradientHead::Logit => row[target],
                    GradientHead::Probability => softmax(&row)[target],
                }
            })
            .collect())
    }

    /// Mean softmax cross-entropy over a labeled batch and its gradient with
    /// respect to every parameter.
    pub fn loss_gradients(
        &self,
        points: &[T],
        labels: &[usize],
        batch: usize,
    ) -> Result<(f64, ParamGrads)> {
        if labels.len() != batch {
            return Err(Error::Precondition(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Precondition(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        let trace = self.forward_trace(0, points, batch)?;
        let c = self.classes;
        let mut loss = 0.0;
        let mut upstream = vec![0.0; batch * c];
        for (b, &label) in labels.iter().enumerate() {
            let row: Vec<f64> = trace.logits()[b * c..(b + 1) * c]
                .iter()
                .map(|v| v.widen())
                .collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            loss += max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[label];
            for (k, p) in softmax(&row).into_iter().enumerate() {
                let indicator = if k == label { 1.0 } else { 0.0 };
                upstream[b * c + k] = (p - indicator) / batch as f64;
            }
        }
        let (grads, _) = self.backward(&trace, upstream, Some(0), false)?;
        Ok((
            loss / batch as f64,
            grads.expect("parameter gradients requested"),
        ))
    }

    fn head_upstream(
        &self,
        logits: &[T],
        batch: usize,
        target: usize,
        head: GradientHead,
    ) -> Vec<f64> {
        let c = self.classes;
        let mut up = vec![0.0; batch * c];
        for b in 0..batch {
            let row = &mut up[b * c..(b + 1) * c];
            match head {
                GradientHead::Logit => row[target] = 1.0,
                GradientHead::Probability => {
                    let l: Vec<f64> = logits[b * c..(b + 1) * c]
                        .iter()
                        .map(|v| v.widen())
                        .collect();
                    let p = softmax(&l);
                    // d f_y / d o_k = f_y (1[k = y] - f_k)
                    for k in 0..c {
                        let indicator = if k == target { 1.0 } else { 0.0 };
                        row[k] = p[target] * (indicator - p[k]);
                    }
                }
            }
        }
        up
    }
}

fn expected_input<T>(layer: &Layer<T>) -> Vec<usize> {
    match layer {
        Layer::Dense(d) => vec![d.in_features],
        Layer::Conv2d(c) => vec![c.in_channels, c.kernel.0, c.kernel.1],
        Layer::MaxPool2d(p) => vec![1, p.size, p.size],
        _ => vec![],
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerSpec {
    Dense(usize),
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    Relu,
    Flatten,
    MaxPool2d(MaxPool2d),
}

/// Declarative architecture description; shapes are inferred at `build`.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            specs: Vec::new(),
        }
    }

    fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let specs = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerSpec::Dense(d.out_features),
                Layer::Conv2d(c) => LayerSpec::Conv2d {
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                },
                Layer::Relu => LayerSpec::Relu,
                Layer::Flatten => LayerSpec::Flatten,
                Layer::MaxPool2d(p) => LayerSpec::MaxPool2d(*p),
            })
            .collect();
        NetworkBuilder {
            input_shape: net.input_shape.clone(),
            specs,
        }
    }

    pub fn dense(mut self, out_features: usize) -> Self {
        self.specs.push(LayerSpec::Dense(out_features));
        self
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: (usize, usize), stride: usize) -> Self {
        self.specs.push(LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
        });
        self
    }

    pub fn relu(mut self) -> Self {
        self.specs.push(LayerSpec::Relu);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.specs.push(LayerSpec::Flatten);
        self
    }

    pub fn max_pool(mut self, size: usize, stride: usize) -> Self {
        self.specs
            .push(LayerSpec::MaxPool2d(MaxPool2d { size, stride }));
        self
    }

    pub fn build<T: Scalar>(&self, seed: u64) -> Result<Network<T>> {
        let mut rng = stream(seed, &[tag::INIT]);
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.specs.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let relu_follows = matches!(self.specs.get(i + 1), Some(LayerSpec::Relu));
            let layer = match spec {
                LayerSpec::Dense(out) => {
                    let [n_in] = shape.as_slice() else {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            expected: vec![shape.iter().product()],
                            actual: shape.clone(),
                        });
                    };
                    Layer::Dense(Dense::init(*n_in, *out, relu_follows, &mut rng))
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let in_channels = if shape.len() == 3 { shape[0] } else { 0 };
                    Layer::Conv2d(Conv2d::init(
                        in_channels,
                        *out_channels,
                        *kernel,
                        *stride,
                        relu_follows,
                        &mut rng,
                    ))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::MaxPool2d(p) => Layer::MaxPool2d(*p),
            };
            shape = layer
                .output_shape(&shape)
                .ok_or_else(|| Error::ShapeMismatch {
                    layer: i,
                    expected: expected_input(&layer),
                    actual: shape.clone(),
                })?;
            layers.push(layer);
        }
        Network::new(self.input_shape.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense() -> Network<f64> {
        let d = Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        Network::new(vec![2], vec![Layer::Dense(d)]).unwrap()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let net = identity_dense();
        let x = Tensor::from_f64(&[2], &[3.0, 5.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn dead_relu_unit_feeds_zero_to_head() {
        let first = Dense::new(1, 1, vec![-1.0], vec![0.0]).unwrap();
        let head = Dense::new(1, 2, vec![2.0, -3.0], vec![0.5, 0.25]).unwrap();
        let net = Network::<f64>::new(
            vec![1],
            vec![Layer::Dense(first), Layer::Relu, Layer::Dense(head)],
        )
        .unwrap();
        let x = Tensor::from_f64(&[1], &[2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[0.5, 0.25]);
        assert_eq!(net.head_index(), 2);
    }

    #[test]
    fn uniform_and_closed_form_softmax() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = Network::<f32>::mlp(&[4], &[3], 2, 0).unwrap();
        let x = Tensor::<f32>::zeros(&[5]);
        match net.forward(&x) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
        let bad = NetworkBuilder::new(&[4])
            .dense(3)
            .relu()
            .conv2d(2, (3, 3), 1)
            .dense(2)
            .build::<f32>(0);
        match bad {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_logit_gradient_is_the_weight_row() {
        let d = Dense::new(3, 2, vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3], vec![0.0, 0.0]).unwrap();
        let net = Network::<f64>::new(vec![3], vec![Layer::Dense(d)]).unwrap();
        let x = Tensor::from_f64(&[3], &[0.3, -0.7, 1.1]).unwrap();
        let g = net.input_gradient(&x, 0, GradientHead::Logit).unwrap();
        assert_eq!(g.data(), &[0.5, -1.0, 2.0]);
        assert!(net.input_gradient(&x, 2, GradientHead::Logit).is_err());
    }

    #[test]
    fn small_cnn_shapes() {
        let net = Network::<f32>::small_cnn(&[1, 28, 28], 32, 10, 1).unwrap();
        assert_eq!(net.shape_at(net.layers().len()), &[10]);
        assert_eq!(net.head_index(), net.layers().len() - 1);
        let x = Tensor::<f32>::zeros(&[1, 28, 28]);
        assert_eq!(net.forward(&x).unwrap().len(), 10);
    }

    #[test]
    fn head_must_be_last_parameterized_layer() {
        let d = Dense::<f64>::new(2, 2, vec![1.0; 4], vec![0.0; 2]).unwrap();
        let c = Conv2d::<f64> {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1),
            stride: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        // dense then conv: the conv comes after the last dense layer
        let err = Network::new(vec![2], vec![Layer::Dense(d), Layer::Conv2d(c)]);
        assert!(err.is_err());
    }
}
