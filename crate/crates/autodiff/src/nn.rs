//! Parameterised layers on top of [`Graph`].

use crate::error::Result;
use crate::graph::{BatchStats, Graph, Var};
use crate::kernels::{ConvGeom, Padding};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut RngState,
    ) -> Self {
        let kernel = store.add_glorot(
            format!("{name}.kernel"),
            &[k, k, c_in, c_out],
            k * k * c_in,
            k * k * c_out,
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Self {
            kernel,
            bias,
            k,
            c_in,
            c_out,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, k, b, self.stride, self.padding)
    }

    /// Geometry for an `[n,h,w,c_in]` input.
    pub fn geom(&self, n: usize, h: usize, w: usize) -> Result<ConvGeom> {
        ConvGeom::new(
            &[n, h, w, self.c_in],
            &[self.k, self.k, self.c_in, self.c_out],
            self.stride,
            self.padding,
        )
    }
}

/// Upsampling by `stride` through the adjoint of a same-padded convolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        bias: bool,
        rng: &mut RngState,
    ) -> Self {
        let kernel = store.add_glorot(
            format!("{name}.kernel"),
            &[k, k, c_out, c_in],
            k * k * c_in,
            k * k * c_out,
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Self {
            kernel,
            bias,
            k,
            c_in,
            c_out,
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv_transpose2d(x, k, b, self.stride)
    }

    /// Multiply-accumulates for an `[n,h,w,c_in]` input.
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        (n * h * w * self.c_in * self.c_out * self.k * self.k) as u64
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut RngState) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), &[n_in, n_out], n_in, n_out, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[n_out]));
        Self {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

/// Statistics recorded by a train-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BnRecord {
    pub layer: ParamId,
    pub stats: BatchStats,
}

/// How batch-norm layers obtain their normalisation statistics.
pub enum Norm<'a> {
    /// Batch statistics, recorded for running averages and later replay.
    Train(&'a mut Vec<BnRecord>),
    /// Statistics recorded by an earlier train pass, consumed in call order
    /// and treated as constants.
    Replay { stats: &'a [BnRecord], next: usize },
    /// Running averages.
    Eval,
}

impl<'a> Norm<'a> {
    pub fn replay(stats: &'a [BnRecord]) -> Self {
        Norm::Replay { stats, next: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[c])),
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, norm: &mut Norm) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match norm {
            Norm::Train(records) => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                records.push(BnRecord {
                    layer: self.running_mean,
                    stats,
                });
                Ok(y)
            }
            Norm::Replay { stats, next } => {
                let rec = stats.get(*next).ok_or_else(|| {
                    crate::error::TensorError::Usage("batch-norm replay ran out of statistics".into())
                })?;
                *next += 1;
                g.batch_norm_with_stats(x, gamma, beta, &rec.stats, self.eps)
            }
            Norm::Eval => {
                let stats = BatchStats {
                    mean: store.value(self.running_mean).data().to_vec(),
                    var: store.value(self.running_var).data().to_vec(),
                };
                g.batch_norm_with_stats(x, gamma, beta, &stats, self.eps)
            }
        }
    }
}

/// Folds recorded batch statistics into the running averages of their layers.
pub fn update_running_stats(store: &mut ParamStore, records: &[BnRecord], momentum: f64) {
    for rec in records {
        let mean_id = rec.layer;
        let var_id = ParamId(mean_id.0 + 1);
        debug_assert!(store.get(var_id).name.ends_with("running_var"));
        for (r, b) in store.value_mut(mean_id).data_mut().iter_mut().zip(&rec.stats.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in store.value_mut(var_id).data_mut().iter_mut().zip(&rec.stats.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}
