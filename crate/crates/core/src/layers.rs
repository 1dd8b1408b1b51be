//! Building blocks shared by the encoders: conv blocks and CBAM-style gates.

use cf3d_autodiff::{
    BatchNorm, Conv2d, ConvTranspose2d, Graph, Norm, Padding, ParamStore, PoolKind, PoolScope, RngState, Var,
};

use crate::error::Result;

/// `BN(ReLU(Conv(x)))` with a stride-2 same-padded convolution.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, k: usize, c_in: usize, c_out: usize, rng: &mut RngState) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), k, c_in, c_out, 2, Padding::Same, true, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, norm: &mut Norm) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = g.relu(y);
        Ok(self.bn.forward(g, store, y, norm)?)
    }
}

/// Channel attention: a 1×1 convolution shared by the average- and max-pooled
/// descriptors, summed and squashed into one gate per channel.
#[derive(Debug, Clone)]
pub struct Cam {
    pub shared: Conv2d,
}

impl Cam {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut RngState) -> Self {
        Self {
            shared: Conv2d::new(store, &format!("{name}.shared"), 1, c, c, 1, Padding::Same, true, rng),
        }
    }

    /// `V_c [n,1,1,c]`
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let avg = g.pool(x, PoolKind::Avg, PoolScope::GlobalPerChannel)?;
        let max = g.pool(x, PoolKind::Max, PoolScope::GlobalPerChannel)?;
        let a = self.shared.forward(g, store, avg)?;
        let m = self.shared.forward(g, store, max)?;
        let s = g.add(a, m)?;
        Ok(g.sigmoid(s))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let v = self.gate(g, store, x)?;
        Ok(g.mul(x, v)?)
    }
}

/// Spatial attention: a `k×k` convolution over the per-pixel average and
/// maximum across channels.
#[derive(Debug, Clone)]
pub struct Sam {
    pub conv: Conv2d,
}

impl Sam {
    pub fn new(store: &mut ParamStore, name: &str, k: usize, rng: &mut RngState) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), k, 2, 1, 1, Padding::Same, true, rng),
        }
    }

    /// `V_s [n,h,w,1]`
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let avg = g.pool(x, PoolKind::Avg, PoolScope::GlobalPerPixel)?;
        let max = g.pool(x, PoolKind::Max, PoolScope::GlobalPerPixel)?;
        let both = g.concat(&[avg, max], 3)?;
        let s = self.conv.forward(g, store, both)?;
        Ok(g.sigmoid(s))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let v = self.gate(g, store, x)?;
        Ok(g.mul(x, v)?)
    }
}

/// Transposed-conv upsampler: ReLU after every layer but the last.
#[derive(Debug, Clone)]
pub struct Upsampler {
    pub layers: Vec<ConvTranspose2d>,
}

impl Upsampler {
    /// `widths` runs from the latent width to the output width.
    pub fn new(store: &mut ParamStore, name: &str, k: usize, widths: &[usize], rng: &mut RngState) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvTranspose2d::new(store, &format!("{name}.up{i}"), k, w[0], w[1], 2, true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, store, x)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}
