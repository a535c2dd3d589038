//! The fixed layer vocabulary: dense, batchnorm, dropout, relu and a sigmoid output.
//!
//! Every layer consumes and produces a `batch × features` matrix. Batchnorm sits after a dense
//! layer and before its activation; dropout is inverted (scaled at train time) so that eval
//! mode is the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use super::tensor::ParamTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Batchnorm,
    Dropout,
    Relu,
    SigmoidOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
}

fn default_bn_momentum() -> f64 {
    0.1
}

fn default_bn_eps() -> f64 {
    1e-5
}

impl LayerSpec {
    fn shaped(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            dropout_rate: 0.0,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self::shaped(LayerKind::Dense, in_dim, out_dim)
    }

    pub fn batchnorm(dim: usize) -> Self {
        Self::shaped(LayerKind::Batchnorm, dim, dim)
    }

    pub fn dropout(dim: usize, rate: f64) -> Self {
        Self {
            dropout_rate: rate,
            ..Self::shaped(LayerKind::Dropout, dim, dim)
        }
    }

    pub fn relu(dim: usize) -> Self {
        Self::shaped(LayerKind::Relu, dim, dim)
    }

    pub fn sigmoid_output(dim: usize) -> Self {
        Self::shaped(LayerKind::SigmoidOutput, dim, dim)
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(format!("{:?} layer has a zero dimension", self.kind));
        }
        if self.kind != LayerKind::Dense && self.in_dim != self.out_dim {
            return Err(format!(
                "{:?} layer must preserve width ({} -> {})",
                self.kind, self.in_dim, self.out_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.kind == LayerKind::Batchnorm && (self.bn_eps.is_nan() || self.bn_eps <= 0.0) {
            return Err(format!("batchnorm eps {} must be positive", self.bn_eps));
        }
        if self.kind == LayerKind::Batchnorm && !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(format!("batchnorm momentum {} outside [0, 1]", self.bn_momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weight: ParamTensor,
        bias: ParamTensor,
    },
    Batchnorm {
        gamma: ParamTensor,
        beta: ParamTensor,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        momentum: f64,
        eps: f64,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    SigmoidOutput,
}

/// Per-layer state retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    None,
    Dropout {
        mask: Vec<f64>,
    },
    Batchnorm {
        x_hat: Matrix,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

impl Layer {
    /// Builds a freshly initialized layer. Dense weights are uniform in `±sqrt(6 / fan_in)`,
    /// biases start at zero.
    pub(crate) fn init<R: Rng + ?Sized>(spec: &LayerSpec, index: usize, rng: &mut R) -> Layer {
        match spec.kind {
            LayerKind::Dense => {
                let bound = (6.0 / spec.in_dim as f64).sqrt();
                let values = (0..spec.in_dim * spec.out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer::Dense {
                    weight: ParamTensor::new(
                        format!("layer{index}.dense.weight"),
                        vec![spec.out_dim, spec.in_dim],
                        values,
                    ),
                    bias: ParamTensor::zeros(format!("layer{index}.dense.bias"), vec![spec.out_dim]),
                }
            }
            LayerKind::Batchnorm => Layer::Batchnorm {
                gamma: ParamTensor::filled(format!("layer{index}.bn.gamma"), vec![spec.out_dim], 1.0),
                beta: ParamTensor::zeros(format!("layer{index}.bn.beta"), vec![spec.out_dim]),
                running_mean: vec![0.0; spec.out_dim],
                running_var: vec![1.0; spec.out_dim],
                momentum: spec.bn_momentum,
                eps: spec.bn_eps,
            },
            LayerKind::Dropout => Layer::Dropout {
                rate: spec.dropout_rate,
            },
            LayerKind::Relu => Layer::Relu,
            LayerKind::SigmoidOutput => Layer::SigmoidOutput,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Batchnorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Batchnorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Batchnorm { .. })
    }

    /// `train` selects batch statistics for batchnorm and applies `mask` for dropout.
    pub(crate) fn forward(&self, x: &Matrix, train: bool, mask: Option<Vec<f64>>) -> (Matrix, LayerCache) {
        let batch = x.rows();
        match self {
            Layer::Dense { weight, bias } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                let mut y = Matrix::zeros(batch, out_dim);
                for r in 0..batch {
                    y.row_mut(r).copy_from_slice(bias.values());
                }
                // y += x · Wᵀ
                gemm(
                    batch,
                    in_dim,
                    out_dim,
                    1.0,
                    x.as_slice(),
                    (in_dim as isize, 1),
                    weight.values(),
                    (1, in_dim as isize),
                    1.0,
                    y.as_mut_slice(),
                    (out_dim as isize, 1),
                );
                (y, LayerCache::None)
            }
            Layer::Batchnorm {
                gamma,
                beta,
                running_mean,
                running_var,
                eps,
                ..
            } => {
                let dim = x.cols();
                let (mean, var) = if train {
                    column_moments(x)
                } else {
                    (running_mean.clone(), running_var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut x_hat = Matrix::zeros(batch, dim);
                let mut y = Matrix::zeros(batch, dim);
                let (g, b) = (gamma.values(), beta.values());
                for r in 0..batch {
                    let xr = x.row(r);
                    let xh = x_hat.row_mut(r);
                    for j in 0..dim {
                        xh[j] = (xr[j] - mean[j]) * inv_std[j];
                    }
                    let yr = y.row_mut(r);
                    let xh = x_hat.row(r);
                    for j in 0..dim {
                        yr[j] = g[j] * xh[j] + b[j];
                    }
                }
                (
                    y,
                    LayerCache::Batchnorm {
                        x_hat,
                        inv_std,
                        mean,
                        var,
                    },
                )
            }
            Layer::Dropout { .. } => match mask {
                Some(mask) => {
                    let mut y = x.clone();
                    y.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    (y, LayerCache::Dropout { mask })
                }
                None => (x.clone(), LayerCache::None),
            },
            Layer::Relu => (x.map(|v| v.max(0.0)), LayerCache::None),
            Layer::SigmoidOutput => (x.map(sigmoid), LayerCache::None),
        }
    }

    /// Propagates `dy` back through the layer. Parameter gradients are added into `grad`
    /// buffers when `accumulate` is set.
    pub(crate) fn backward(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        cache: &LayerCache,
        dy: &Matrix,
        accumulate: bool,
    ) -> Matrix {
        let batch = x.rows();
        match self {
            Layer::Dense { weight, bias } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                if accumulate {
                    // dW += dYᵀ · X
                    gemm(
                        out_dim,
                        batch,
                        in_dim,
                        1.0,
                        dy.as_slice(),
                        (1, out_dim as isize),
                        x.as_slice(),
                        (in_dim as isize, 1),
                        1.0,
                        weight.grad_mut(),
                        (in_dim as isize, 1),
                    );
                    // Sum the batch first so accumulation adds one finished total.
                    let mut db = vec![0.0; out_dim];
                    for r in 0..batch {
                        for (g, d) in db.iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                    for (g, d) in bias.grad_mut().iter_mut().zip(&db) {
                        *g += d;
                    }
                }
                // dX = dY · W
                let mut dx = Matrix::zeros(batch, in_dim);
                gemm(
                    batch,
                    out_dim,
                    in_dim,
                    1.0,
                    dy.as_slice(),
                    (out_dim as isize, 1),
                    weight.values(),
                    (in_dim as isize, 1),
                    0.0,
                    dx.as_mut_slice(),
                    (in_dim as isize, 1),
                );
                dx
            }
            Layer::Batchnorm { gamma, beta, .. } => {
                let LayerCache::Batchnorm { x_hat, inv_std, .. } = cache else {
                    unreachable!("batchnorm cache missing");
                };
                let dim = x.cols();
                let n = batch as f64;
                let mut sum_dxh = vec![0.0; dim];
                let mut sum_dxh_xh = vec![0.0; dim];
                let mut sum_dy = vec![0.0; dim];
                let mut sum_dy_xh = vec![0.0; dim];
                let g = gamma.values().to_vec();
                for r in 0..batch {
                    let (dr, xh) = (dy.row(r), x_hat.row(r));
                    for j in 0..dim {
                        let dxh = dr[j] * g[j];
                        sum_dxh[j] += dxh;
                        sum_dxh_xh[j] += dxh * xh[j];
                        sum_dy[j] += dr[j];
                        sum_dy_xh[j] += dr[j] * xh[j];
                    }
                }
                if accumulate {
                    gamma.grad_mut().iter_mut().zip(&sum_dy_xh).for_each(|(a, b)| *a += b);
                    beta.grad_mut().iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b);
                }
                let mut dx = Matrix::zeros(batch, dim);
                for r in 0..batch {
                    let (dr, xh) = (dy.row(r), x_hat.row(r));
                    let out = dx.row_mut(r);
                    for j in 0..dim {
                        let dxh = dr[j] * g[j];
                        out[j] = inv_std[j] / n * (n * dxh - sum_dxh[j] - xh[j] * sum_dxh_xh[j]);
                    }
                }
                dx
            }
            Layer::Dropout { .. } => match cache {
                LayerCache::Dropout { mask } => {
                    let mut dx = dy.clone();
                    dx.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                    dx
                }
                _ => dy.clone(),
            },
            Layer::Relu => {
                let mut dx = dy.clone();
                dx.as_mut_slice().iter_mut().zip(x.as_slice()).for_each(|(d, &xv)| {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                });
                dx
            }
            Layer::SigmoidOutput => {
                let mut dx = dy.clone();
                dx.as_mut_slice()
                    .iter_mut()
                    .zip(y.as_slice())
                    .for_each(|(d, &p)| *d *= p * (1.0 - p));
                dx
            }
        }
    }
}

/// Column means and biased variances.
fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, dim) = (x.rows(), x.cols());
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
