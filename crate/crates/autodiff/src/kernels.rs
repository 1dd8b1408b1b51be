//! Raw NHWC convolution and pooling kernels shared by forward and backward passes.

use crate::error::{Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, zero padding split top/left-first.
    Same,
    Valid,
}

/// Geometry of a 2-D cross-correlation `[n,h,w,ci] * [kh,kw,ci,co] -> [n,oh,ow,co]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub kh: usize,
    pub kw: usize,
    pub co: usize,
    pub stride: usize,
    pub pad_t: usize,
    pub pad_l: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        k: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(TensorError::shape(
                "conv2d",
                format!("expected x [n,h,w,c] and kernel [k,k,ci,co], got {:?} and {:?}", x, k),
            ));
        }
        if stride == 0 {
            return Err(TensorError::Config("conv2d stride must be >= 1".into()));
        }
        let (n, h, w, ci) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, kci, co) = (k[0], k[1], k[2], k[3]);
        if kci != ci {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", ci, kci),
            ));
        }
        let (oh, ow, pad_t, pad_l) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pt = ((oh - 1) * stride + kh).saturating_sub(h);
                let pl = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pt / 2, pl / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(TensorError::shape(
                        "conv2d",
                        format!("kernel {}x{} larger than input {}x{}", kh, kw, h, w),
                    ));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            n,
            h,
            w,
            ci,
            kh,
            kw,
            co,
            stride,
            pad_t,
            pad_l,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.oh, self.ow, self.co]
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> u64 {
        (self.n * self.oh * self.ow * self.co * self.ci * self.kh * self.kw) as u64
    }

    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, lim: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - pad as isize;
        (i >= 0 && (i as usize) < lim).then_some(i as usize)
    }
}

/// y = x ⋆ k, accumulated into `y` (length n·oh·ow·co).
pub fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], y: &mut [f64]) {
    let (ci, co) = (g.ci, g.co);
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let yo = ((n * g.oh + oy) * g.ow + ox) * co;
                let yrow = &mut y[yo..yo + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_t, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_l, g.w) else { continue };
                        let xo = ((n * g.h + iy) * g.w + ix) * ci;
                        let ko = (ky * g.kw + kx) * ci * co;
                        for c in 0..ci {
                            let xv = x[xo + c];
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = &k[ko + c * co..ko + (c + 1) * co];
                            for (yv, kv) in yrow.iter_mut().zip(krow) {
                                *yv += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// gx += ∂(x ⋆ k)/∂x applied to gy.
pub fn conv_backward_input(g: &ConvGeom, gy: &[f64], k: &[f64], gx: &mut [f64]) {
    let (ci, co) = (g.ci, g.co);
    // kernel transposed to [kh,kw,co,ci] so the inner loop is a contiguous axpy over ci
    let mut kt = vec![0.0; k.len()];
    for t in 0..g.kh * g.kw {
        for c in 0..ci {
            for o in 0..co {
                kt[(t * co + o) * ci + c] = k[(t * ci + c) * co + o];
            }
        }
    }
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let yo = ((n * g.oh + oy) * g.ow + ox) * co;
                let grow = &gy[yo..yo + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_t, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_l, g.w) else { continue };
                        let xo = ((n * g.h + iy) * g.w + ix) * ci;
                        let ko = (ky * g.kw + kx) * co * ci;
                        let gxrow = &mut gx[xo..xo + ci];
                        for (o, &gv) in grow.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let krow = &kt[ko + o * ci..ko + (o + 1) * ci];
                            for (a, kv) in gxrow.iter_mut().zip(krow) {
                                *a += gv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// gk += ∂(x ⋆ k)/∂k applied to gy.
pub fn conv_backward_kernel(g: &ConvGeom, x: &[f64], gy: &[f64], gk: &mut [f64]) {
    let (ci, co) = (g.ci, g.co);
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let yo = ((n * g.oh + oy) * g.ow + ox) * co;
                let grow = &gy[yo..yo + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_t, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_l, g.w) else { continue };
                        let xo = ((n * g.h + iy) * g.w + ix) * ci;
                        let ko = (ky * g.kw + kx) * ci * co;
                        for c in 0..ci {
                            let xv = x[xo + c];
                            if xv == 0.0 {
                                continue;
                            }
                            let gkrow = &mut gk[ko + c * co..ko + (c + 1) * co];
                            for (a, gv) in gkrow.iter_mut().zip(grow) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolScope {
    /// Non-overlapping or strided `k×k` windows, valid padding.
    Window { k: usize, stride: usize },
    /// `[n,h,w,c] -> [n,1,1,c]`
    GlobalPerChannel,
    /// `[n,h,w,c] -> [n,h,w,1]`
    GlobalPerPixel,
}

/// Forward pooling. Returns the output and, for max pooling, the flat argmax
/// input index of every output element.
pub fn pool_forward(
    x: &[f64],
    shape: &[usize],
    kind: PoolKind,
    scope: PoolScope,
) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(TensorError::shape(
            "pool",
            format!("expected [n,h,w,c], got {:?}", shape),
        ));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    match scope {
        PoolScope::Window { k, stride } => {
            if k == 0 || stride == 0 {
                return Err(TensorError::Config("pool window and stride must be >= 1".into()));
            }
            if k > h || k > w {
                return Err(TensorError::shape(
                    "pool",
                    format!("window {} larger than input {}x{}", k, h, w),
                ));
            }
            let oh = (h - k) / stride + 1;
            let ow = (w - k) / stride + 1;
            let mut y = vec![0.0; n * oh * ow * c];
            let mut arg = vec![0usize; if kind == PoolKind::Max { y.len() } else { 0 }];
            let inv = 1.0 / (k * k) as f64;
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let o = ((b * oh + oy) * ow + ox) * c + ch;
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = 0;
                            let mut acc = 0.0;
                            for dy in 0..k {
                                for dx in 0..k {
                                    let i = ((b * h + oy * stride + dy) * w + ox * stride + dx) * c + ch;
                                    let v = x[i];
                                    acc += v;
                                    if v > best {
                                        best = v;
                                        best_i = i;
                                    }
                                }
                            }
                            match kind {
                                PoolKind::Max => {
                                    y[o] = best;
                                    arg[o] = best_i;
                                }
                                PoolKind::Avg => y[o] = acc * inv,
                            }
                        }
                    }
                }
            }
            Ok((vec![n, oh, ow, c], y, arg))
        }
        PoolScope::GlobalPerChannel => {
            if h * w == 0 {
                return Err(TensorError::shape("pool", "empty spatial extent"));
            }
            let mut y = vec![0.0; n * c];
            let mut arg = vec![0usize; if kind == PoolKind::Max { n * c } else { 0 }];
            for b in 0..n {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    let mut acc = 0.0;
                    for p in 0..h * w {
                        let i = (b * h * w + p) * c + ch;
                        acc += x[i];
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                    let o = b * c + ch;
                    match kind {
                        PoolKind::Max => {
                            y[o] = best;
                            arg[o] = best_i;
                        }
                        PoolKind::Avg => y[o] = acc / (h * w) as f64,
                    }
                }
            }
            Ok((vec![n, 1, 1, c], y, arg))
        }
        PoolScope::GlobalPerPixel => {
            if c == 0 {
                return Err(TensorError::shape("pool", "zero channels"));
            }
            let m = n * h * w;
            let mut y = vec![0.0; m];
            let mut arg = vec![0usize; if kind == PoolKind::Max { m } else { 0 }];
            for p in 0..m {
                let row = &x[p * c..(p + 1) * c];
                match kind {
                    PoolKind::Max => {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for (ch, &v) in row.iter().enumerate() {
                            if v > best {
                                best = v;
                                best_i = ch;
                            }
                        }
                        y[p] = best;
                        arg[p] = p * c + best_i;
                    }
                    PoolKind::Avg => y[p] = row.iter().sum::<f64>() / c as f64,
                }
            }
            Ok((vec![n, h, w, 1], y, arg))
        }
    }
}

/// Routes the output gradient back to the pooled input positions.
pub fn pool_backward(
    in_shape: &[usize],
    kind: PoolKind,
    scope: PoolScope,
    argmax: &[usize],
    gy: &[f64],
    gx: &mut [f64],
) {
    if kind == PoolKind::Max {
        for (o, &i) in argmax.iter().enumerate() {
            gx[i] += gy[o];
        }
        return;
    }
    let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    match scope {
        PoolScope::Window { k, stride } => {
            let oh = (h - k) / stride + 1;
            let ow = (w - k) / stride + 1;
            let inv = 1.0 / (k * k) as f64;
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let g = gy[((b * oh + oy) * ow + ox) * c + ch] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gx[((b * h + oy * stride + dy) * w + ox * stride + dx) * c + ch] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        PoolScope::GlobalPerChannel => {
            let inv = 1.0 / (h * w) as f64;
            for b in 0..n {
                for p in 0..h * w {
                    for ch in 0..c {
                        gx[(b * h * w + p) * c + ch] += gy[b * c + ch] * inv;
                    }
                }
            }
        }
        PoolScope::GlobalPerPixel => {
            let inv = 1.0 / c as f64;
            for p in 0..n * h * w {
                for ch in 0..c {
                    gx[p * c + ch] += gy[p] * inv;
                }
            }
        }
    }
}
