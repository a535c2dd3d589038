use std::ops::Range;

use rand::{Rng, RngCore};

use super::layer::{Layer, LayerCache, LayerKind, LayerSpec};
use super::matrix::Matrix;
use super::rng::{self, Stream};
use super::tensor::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where dropout masks come from during a train-mode forward pass.
pub enum Masks<'a> {
    Draw(&'a mut dyn RngCore),
    /// Reuse the masks recorded in an earlier pass over the same layers.
    Replay(&'a Activations),
}

/// Everything a forward pass retains for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    mode: Mode,
    start: usize,
    input: Matrix,
    outputs: Vec<Matrix>,
    caches: Vec<LayerCache>,
}

impl Activations {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Layers covered by this pass.
    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.outputs.len()
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Final output of the pass.
    pub fn output(&self) -> &Matrix {
        self.outputs.last().unwrap_or(&self.input)
    }

    /// Output of stack layer `layer` (absolute index).
    pub fn output_of(&self, layer: usize) -> &Matrix {
        &self.outputs[layer - self.start]
    }

    fn input_of(&self, layer: usize) -> &Matrix {
        if layer == self.start {
            &self.input
        } else {
            &self.outputs[layer - self.start - 1]
        }
    }

    /// Output column as a probability vector. Panics unless the output is one column wide.
    pub fn probs(&self) -> Vec<f64> {
        let out = self.output();
        assert_eq!(out.cols(), 1, "output is not a single probability column");
        out.as_slice().to_vec()
    }
}

/// Options for [`LayerStack::mlp`].
#[derive(Debug, Clone, Copy)]
pub struct MlpOptions {
    pub batchnorm: bool,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for MlpOptions {
    fn default() -> Self {
        Self {
            batchnorm: true,
            dropout: 0.5,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// An ordered stack of layers ending in a dense layer and a sigmoid output.
///
/// The encoder is every layer before the final dense layer; its output is the representation
/// that attackers and discriminators see.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    seed: u64,
    grads_pending: bool,
}

impl LayerStack {
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_specs(&specs)?;
        let mut rng = rng::stream(seed, Stream::Init);
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::init(s, i, &mut rng))
            .collect();
        Ok(Self {
            specs,
            layers,
            seed,
            grads_pending: false,
        })
    }

    /// `input → [dense → (batchnorm) → relu → (dropout)]* → dense(1) → sigmoid`.
    pub fn mlp(input_dim: usize, hidden: &[usize], opts: MlpOptions, seed: u64) -> Result<Self> {
        let mut specs = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            specs.push(LayerSpec::dense(width, h));
            if opts.batchnorm {
                specs.push(LayerSpec {
                    bn_momentum: opts.bn_momentum,
                    bn_eps: opts.bn_eps,
                    ..LayerSpec::batchnorm(h)
                });
            }
            specs.push(LayerSpec::relu(h));
            if opts.dropout > 0.0 {
                specs.push(LayerSpec::dropout(h, opts.dropout));
            }
            width = h;
        }
        specs.push(LayerSpec::dense(width, 1));
        specs.push(LayerSpec::sigmoid_output(1));
        Self::new(specs, seed)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Number of layers in the encoder prefix (index of the final dense layer).
    pub fn encoder_len(&self) -> usize {
        self.specs.iter().rposition(|s| s.kind == LayerKind::Dense).unwrap_or(0)
    }

    /// Width of the representation produced by the encoder prefix.
    pub fn encoder_dim(&self) -> usize {
        self.specs[self.encoder_len()].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.params().map(ParamTensor::len).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.layers.iter().flat_map(Layer::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(ParamTensor::zero_grad);
        self.grads_pending = false;
    }

    pub fn grads_pending(&self) -> bool {
        self.grads_pending
    }

    pub(crate) fn clear_pending(&mut self) {
        self.grads_pending = false;
    }

    /// Full forward pass. In train mode dropout masks are drawn from `rng` and batchnorm
    /// running statistics are updated.
    pub fn forward<R: Rng>(&mut self, x: &Matrix, mode: Mode, rng: &mut R) -> Result<Activations> {
        let acts = self.forward_span(x, 0..self.len(), mode, Masks::Draw(rng))?;
        if mode == Mode::Train {
            self.commit_running_stats(&acts);
        }
        Ok(acts)
    }

    /// Forward pass over `span` that leaves running statistics untouched.
    pub fn forward_span(
        &self,
        x: &Matrix,
        span: Range<usize>,
        mode: Mode,
        mut masks: Masks<'_>,
    ) -> Result<Activations> {
        if span.start >= span.end || span.end > self.len() {
            return Err(Error::rejected(format!(
                "layer span {span:?} outside stack of {} layers",
                self.len()
            )));
        }
        let want = self.specs[span.start].in_dim;
        if x.cols() != want {
            return Err(Error::rejected(format!(
                "input has {} features, layer {} expects {want}",
                x.cols(),
                span.start
            )));
        }
        if x.rows() == 0 {
            return Err(Error::rejected("empty batch"));
        }
        if !x.is_finite() {
            return Err(Error::rejected("input contains non-finite values"));
        }
        let train = mode == Mode::Train;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(span.len());
        let mut caches = Vec::with_capacity(span.len());
        for i in span.clone() {
            let input = outputs.last().unwrap_or(x);
            let mask = match (&self.layers[i], train) {
                (Layer::Dropout { rate }, true) if *rate > 0.0 => Some(match &mut masks {
                    Masks::Draw(rng) => draw_mask(input.as_slice().len(), *rate, *rng),
                    Masks::Replay(prev) => match prev.caches.get(i.wrapping_sub(prev.start)) {
                        Some(LayerCache::Dropout { mask }) if mask.len() == input.as_slice().len() => mask.clone(),
                        _ => return Err(Error::protocol(format!("no recorded dropout mask for layer {i}"))),
                    },
                }),
                _ => None,
            };
            let (y, cache) = self.layers[i].forward(input, train, mask);
            if !y.is_finite() {
                return Err(Error::NumericalFault {
                    location: format!("layer {i} ({:?})", self.specs[i].kind),
                    detail: "non-finite activation".into(),
                });
            }
            outputs.push(y);
            caches.push(cache);
        }
        Ok(Activations {
            mode,
            start: span.start,
            input: x.clone(),
            outputs,
            caches,
        })
    }

    fn commit_running_stats(&mut self, acts: &Activations) {
        for i in acts.span() {
            if let (
                Layer::Batchnorm {
                    running_mean,
                    running_var,
                    momentum,
                    ..
                },
                LayerCache::Batchnorm { mean, var, .. },
            ) = (&mut self.layers[i], &acts.caches[i - acts.start])
            {
                let n = acts.input.rows() as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for j in 0..mean.len() {
                    running_mean[j] = (1.0 - *momentum) * running_mean[j] + *momentum * mean[j];
                    running_var[j] = (1.0 - *momentum) * running_var[j] + *momentum * var[j] * unbias;
                }
            }
        }
    }

    /// Eval-mode probabilities for every row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let acts = self.eval_span(x, 0..self.len())?;
        Ok(acts.probs())
    }

    /// Eval-mode forward over `span`.
    pub fn eval_span(&self, x: &Matrix, span: Range<usize>) -> Result<Activations> {
        let mut unused = rng::stream(0, Stream::Init);
        self.forward_span(x, span, Mode::Eval, Masks::Draw(&mut unused))
    }

    /// Backpropagates `loss_grad` (gradient with respect to the stack output) through every
    /// layer, accumulating parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, acts: &Activations, loss_grad: &Matrix) -> Result<Matrix> {
        let span = 0..self.len();
        self.backward_span(acts, span, loss_grad, true)
    }

    /// Backpropagates through `span`, where `grad` is the gradient with respect to the output of
    /// layer `span.end - 1`. Parameter gradients are accumulated only when `accumulate` is set.
    pub fn backward_span(
        &mut self,
        acts: &Activations,
        span: Range<usize>,
        grad: &Matrix,
        accumulate: bool,
    ) -> Result<Matrix> {
        if acts.mode != Mode::Train {
            return Err(Error::protocol("backward requires a train-mode forward pass"));
        }
        let covered = acts.span();
        if span.start < covered.start || span.end > covered.end || span.start >= span.end {
            return Err(Error::protocol(format!(
                "backward over layers {span:?} but forward covered {covered:?}"
            )));
        }
        let out = acts.output_of(span.end - 1);
        if (grad.rows(), grad.cols()) != (out.rows(), out.cols()) {
            return Err(Error::rejected(format!(
                "upstream gradient is {}x{}, layer output is {}x{}",
                grad.rows(),
                grad.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut g = grad.clone();
        for i in span.rev() {
            let x = acts.input_of(i);
            let y = acts.output_of(i);
            let cache = &acts.caches[i - acts.start];
            g = self.layers[i].backward(x, y, cache, &g, accumulate);
            if !g.is_finite() {
                return Err(Error::NumericalFault {
                    location: format!("layer {i} ({:?}) backward", self.specs[i].kind),
                    detail: "non-finite gradient".into(),
                });
            }
        }
        if accumulate {
            self.grads_pending = true;
        }
        Ok(g)
    }

    /// Copies of the layers in `span`, parameters and running statistics included.
    pub fn snapshot(&self, span: Range<usize>) -> Vec<Layer> {
        self.layers[span].to_vec()
    }

    /// Writes back layers captured by [`snapshot`](Self::snapshot). Gradient buffers are kept.
    pub fn restore(&mut self, start: usize, saved: &[Layer]) -> Result<()> {
        if start + saved.len() > self.layers.len() {
            return Err(Error::Integrity("snapshot does not fit the stack".into()));
        }
        for (offset, saved_layer) in saved.iter().enumerate() {
            let live = &mut self.layers[start + offset];
            if std::mem::discriminant(live) != std::mem::discriminant(saved_layer) {
                return Err(Error::Integrity(format!(
                    "layer {} changed kind since snapshot",
                    start + offset
                )));
            }
            for (dst, src) in live.params_mut().into_iter().zip(saved_layer.params()) {
                if dst.shape() != src.shape() {
                    return Err(Error::Integrity(format!(
                        "{} drifted from shape {:?} to {:?}",
                        dst.name(),
                        src.shape(),
                        dst.shape()
                    )));
                }
                dst.values_mut().copy_from_slice(src.values());
            }
            if let (
                Layer::Batchnorm {
                    running_mean: dm,
                    running_var: dv,
                    ..
                },
                Layer::Batchnorm {
                    running_mean: sm,
                    running_var: sv,
                    ..
                },
            ) = (live, saved_layer)
            {
                dm.copy_from_slice(sm);
                dv.copy_from_slice(sv);
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Start of the hidden block (dense layer onward) that contains layer `index`.
    pub fn block_start(&self, index: usize) -> usize {
        self.specs[..=index]
            .iter()
            .rposition(|s| s.kind == LayerKind::Dense)
            .unwrap_or(0)
    }
}

fn draw_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::rejected("a stack needs at least one layer"));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate().map_err(|e| Error::rejected(format!("layer {i}: {e}")))?;
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::rejected(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}
