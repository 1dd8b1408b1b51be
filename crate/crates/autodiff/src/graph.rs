//! Tape of tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node index is already a topological order and
//! `backward` simply walks the tape from the loss towards the leaves.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom, Padding, PoolKind, PoolScope};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_index, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch statistics (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Conv {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        scope: PoolScope,
        argmax: Vec<usize>,
    },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Broadcast(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Matmul(Var, Var),
    Sum(Var),
    Mean(Var),
    FrobeniusNorm(Var),
    RowNorms(Var),
    Mse(Var, Var),
    CenteredCosine {
        a: Var,
        b: Var,
        // per row: (centered a, centered b, |a_c|, |b_c|, cos); empty when degenerate
        saved: Vec<Option<CosineRow>>,
    },
}

#[derive(Debug)]
struct CosineRow {
    ac: Vec<f64>,
    bc: Vec<f64>,
    na: f64,
    nb: f64,
    cos: f64,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf holding a copy of a stored parameter; trainable parameters receive gradients.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.leaf(v, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros if none has reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(av.shape(), data);
        }
        let out = broadcast_shape(name, av.shape(), bv.shape())?;
        let sa = broadcast_strides(av.shape(), &out);
        let sb = broadcast_strides(bv.shape(), &out);
        let n: usize = out.iter().product();
        let mut ia = vec![0usize; n];
        for_each_index(&out, &sa, |o, s| ia[o] = s);
        let mut data = vec![0.0; n];
        let (ad, bd) = (av.data(), bv.data());
        for_each_index(&out, &sb, |o, s| data[o] = f(ad[ia[o]], bd[s]));
        Tensor::new(&out, data)
    }

    /// Elementwise sum with size-1 axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Hadamard product with size-1 axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.nodes[x.0].value.map(|v| scale * v + shift);
        self.push(t, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.nodes[x.0].value.map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.nodes[x.0].value.map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.broadcast_to(shape)?;
        Ok(self.push(t, Op::Broadcast(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// `[n, ...] -> [n, prod(...)]`
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(TensorError::shape("flatten", "scalar input"));
        }
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[s[0], rest])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {} out of range", axis)));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::shape(
                    "concat",
                    format!("incompatible shapes {:?} and {:?} on axis {}", base, s, axis),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &self.nodes[v.0].value;
                let span = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * span..(o + 1) * span]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Sub-range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("range {}..{} on axis {} of {:?}", start, start + len, axis, s),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.nodes[x.0].value.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!(
                "dropout rate must lie in [0,1), got {}",
                rate
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let src = &self.nodes[x.0].value;
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(src.shape(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("{:?} x {:?}", sa, sb),
            ));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                    *o += av * bv;
                }
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(t, Op::Matmul(a, b), &[a, b]))
    }

    /// `x·W + b`. `x` may be `[n_in]` or `[batch, n_in]`; output rank follows `x`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if ws.len() != 2 || bs != [ws[1]] {
            return Err(TensorError::shape(
                "dense",
                format!("weight {:?} and bias {:?}", ws, bs),
            ));
        }
        let x2 = match xs.len() {
            1 => self.reshape(x, &[1, xs[0]])?,
            2 => x,
            _ => return Err(TensorError::shape("dense", format!("input {:?}", xs))),
        };
        let y = self.matmul(x2, w)?;
        let b2 = self.reshape(b, &[1, ws[1]])?;
        let y = self.add(y, b2)?;
        if xs.len() == 1 {
            self.reshape(y, &[ws[1]])
        } else {
            Ok(y)
        }
    }

    // ---- convolution -------------------------------------------------------

    fn check_bias(&self, b: Option<Var>, c: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(TensorError::shape(
                    op,
                    format!("bias {:?}, expected [{}]", self.shape(b), c),
                ));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `x [n,h,w,ci]` with `k [kh,kw,ci,co]`, optional bias `[co]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, padding)?;
        self.check_bias(b, geom.co, "conv2d")?;
        let mut y = vec![0.0; geom.out_shape().iter().product()];
        if let Some(b) = b {
            let bd = self.nodes[b.0].value.data();
            for row in y.chunks_mut(geom.co) {
                row.copy_from_slice(bd);
            }
        }
        kernels::conv_forward(
            &geom,
            self.nodes[x.0].value.data(),
            self.nodes[k.0].value.data(),
            &mut y,
        );
        let t = Tensor::new(&geom.out_shape(), y)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv { x, k, b, geom }, &inputs))
    }

    /// Transposed convolution: the adjoint of a same-padded stride-`stride`
    /// convolution. `x [n,h,w,ci]`, `k [kh,kw,co,ci]`, output `[n,h·s,w·s,co]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[3] != xs[3] {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("input {:?} with kernel {:?}", xs, ks),
            ));
        }
        let big = [xs[0], xs[1] * stride, xs[2] * stride, ks[2]];
        let geom = ConvGeom::new(&big, &ks, stride, Padding::Same)?;
        debug_assert_eq!((geom.oh, geom.ow), (xs[1], xs[2]));
        self.check_bias(b, ks[2], "conv_transpose2d")?;
        let mut y = vec![0.0; big.iter().product()];
        if let Some(b) = b {
            let bd = self.nodes[b.0].value.data();
            for row in y.chunks_mut(ks[2]) {
                row.copy_from_slice(bd);
            }
        }
        kernels::conv_backward_input(
            &geom,
            self.nodes[x.0].value.data(),
            self.nodes[k.0].value.data(),
            &mut y,
        );
        let t = Tensor::new(&big, y)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        Ok(self.push(t, Op::ConvTranspose { x, k, b, geom }, &inputs))
    }

    // ---- normalisation and pooling ----------------------------------------

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(TensorError::shape("batchnorm", format!("input {:?}", s)));
        }
        let c = *s.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::shape(
                "batchnorm",
                format!("scale/shift must be [{}]", c),
            ));
        }
        Ok(c)
    }

    /// Batch normalisation over all axes but the last, using the statistics of
    /// this batch. Returns the statistics for running-average bookkeeping.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let c = self.bn_check(x, gamma, beta)?;
        let n = self.shape(x)[0];
        if n < 2 {
            return Err(TensorError::Config(format!(
                "batch norm in train mode needs batch >= 2, got {}",
                n
            )));
        }
        let xd = self.nodes[x.0].value.data();
        let m = xd.len() / c;
        let mut mean = vec![0.0; c];
        for row in xd.chunks(c) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; c];
        for row in xd.chunks(c) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let stats = BatchStats { mean, var };
        let y = self.bn_apply(x, gamma, beta, &stats, eps, true);
        Ok((y, stats))
    }

    /// Batch normalisation with fixed (non-differentiated) statistics, as used
    /// in eval mode with running averages.
    pub fn batch_norm_with_stats(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchStats,
        eps: f64,
    ) -> Result<Var> {
        let c = self.bn_check(x, gamma, beta)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(TensorError::shape("batchnorm", "statistics length"));
        }
        Ok(self.bn_apply(x, gamma, beta, stats, eps, false))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchStats,
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let xt = &self.nodes[x.0].value;
        let c = stats.mean.len();
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xt.len()];
        let mut y = vec![0.0; xt.len()];
        for ((xr, hr), yr) in xt
            .data()
            .chunks(c)
            .zip(xhat.chunks_mut(c))
            .zip(y.chunks_mut(c))
        {
            for ch in 0..c {
                let h = (xr[ch] - stats.mean[ch]) * inv_std[ch];
                hr[ch] = h;
                yr[ch] = g[ch] * h + b[ch];
            }
        }
        let t = Tensor::new(xt.shape(), y).expect("same shape");
        self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        )
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind, scope: PoolScope) -> Result<Var> {
        let (shape, y, argmax) =
            kernels::pool_forward(self.nodes[x.0].value.data(), self.shape(x), kind, scope)?;
        let t = Tensor::new(&shape, y)?;
        Ok(self.push(
            t,
            Op::Pool {
                x,
                kind,
                scope,
                argmax,
            },
            &[x],
        ))
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `||x||_F`
    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Tensor::scalar(s), Op::FrobeniusNorm(x), &[x])
    }

    /// Frobenius norm of every leading-axis slice: `[n, ...] -> [n]`.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.rank() == 0 {
            return Err(TensorError::shape("row_norms", "scalar input"));
        }
        let n = t.shape()[0];
        let per = t.len() / n.max(1);
        let norms: Vec<f64> = t
            .data()
            .chunks(per.max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::from_vec(norms), Op::RowNorms(x), &[x]))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if p.shape() != t.shape() {
            return Err(TensorError::shape(
                "mse",
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), &[pred, target]))
    }

    /// Mean-centred cosine similarity of corresponding rows of `a, b [n, N]`.
    /// Rows where either side is constant yield 0 and are reported in the flags.
    pub fn centered_cosine(&mut self, a: Var, b: Var) -> Result<(Var, Vec<bool>)> {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if at.shape() != bt.shape() || at.rank() != 2 {
            return Err(TensorError::shape(
                "centered_cosine",
                format!("{:?} vs {:?}", at.shape(), bt.shape()),
            ));
        }
        let n_cols = at.shape()[1];
        let mut out = Vec::with_capacity(at.shape()[0]);
        let mut saved = Vec::with_capacity(at.shape()[0]);
        let mut flags = Vec::with_capacity(at.shape()[0]);
        for (ra, rb) in at.data().chunks(n_cols).zip(bt.data().chunks(n_cols)) {
            match centered_cosine_row(ra, rb) {
                Some(row) => {
                    out.push(row.cos);
                    saved.push(Some(row));
                    flags.push(false);
                }
                None => {
                    out.push(0.0);
                    saved.push(None);
                    flags.push(true);
                }
            }
        }
        let v = self.push(
            Tensor::from_vec(out),
            Op::CenteredCosine { a, b, saved },
            &[a, b],
        );
        Ok((v, flags))
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse sweep from the scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let grads = self.sweep(loss)?;
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep that adds parameter gradients straight into `store`.
    pub fn backward_params(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.sweep(loss)?;
        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(g), Some(id)) = (g, self.nodes[i].param) {
                store.accumulate_grad(id, &g);
            }
        }
        Ok(())
    }

    /// Returns gradients of leaf nodes only.
    fn sweep(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut leaf_grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(leaf_grads);
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(leaf_grads)
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Adds `g` (shaped like `out`) into the gradient of `v`, summing over broadcast axes.
    fn reduce_into(&self, grads: &mut [Option<Vec<f64>>], v: Var, out: &[usize], g: &[f64], sign: f64) {
        let shape = self.nodes[v.0].value.shape().to_vec();
        let Some(buf) = self.buf(grads, v) else { return };
        if shape == out {
            for (a, b) in buf.iter_mut().zip(g) {
                *a += sign * b;
            }
        } else {
            let st = broadcast_strides(&shape, out);
            for_each_index(out, &st, |o, s| buf[s] += sign * g[o]);
        }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out_shape = node.value.shape();
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.reduce_into(grads, *a, out_shape, g, 1.0);
                self.reduce_into(grads, *b, out_shape, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.reduce_into(grads, *a, out_shape, g, 1.0);
                self.reduce_into(grads, *b, out_shape, g, -1.0);
            }
            Op::Mul(a, b) => {
                for (me, other) in [(*a, *b), (*b, *a)] {
                    if !self.nodes[me.0].requires_grad {
                        continue;
                    }
                    let ot = val(other);
                    let prod: Vec<f64> = if ot.shape() == out_shape {
                        g.iter().zip(ot.data()).map(|(x, y)| x * y).collect()
                    } else {
                        let ob = ot.broadcast_to(out_shape).expect("forward shapes");
                        g.iter().zip(ob.data()).map(|(x, y)| x * y).collect()
                    };
                    self.reduce_into(grads, me, out_shape, &prod, 1.0);
                }
            }
            Op::Affine { x, scale } => {
                if let Some(b) = self.buf(grads, *x) {
                    for (a, gv) in b.iter_mut().zip(g) {
                        *a += scale * gv;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                if let Some(b) = self.buf(grads, *x) {
                    for ((a, gv), v) in b.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *a += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(b) = self.buf(grads, *x) {
                    for ((a, gv), s) in b.iter_mut().zip(g).zip(y) {
                        *a += gv * s * (1.0 - s);
                    }
                }
            }
            Op::Conv { x, k, b, geom } => {
                if let Some(bias) = b {
                    if let Some(buf) = self.buf(grads, *bias) {
                        for row in g.chunks(geom.co) {
                            for (a, v) in buf.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                }
                let kd = val(*k).data();
                let xd = val(*x).data();
                if let Some(buf) = self.buf(grads, *x) {
                    kernels::conv_backward_input(geom, g, kd, buf);
                }
                if let Some(buf) = self.buf(grads, *k) {
                    kernels::conv_backward_kernel(geom, xd, g, buf);
                }
            }
            Op::ConvTranspose { x, k, b, geom } => {
                let co = geom.ci;
                if let Some(bias) = b {
                    if let Some(buf) = self.buf(grads, *bias) {
                        for row in g.chunks(co) {
                            for (a, v) in buf.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                }
                let kd = val(*k).data();
                let xd = val(*x).data();
                if let Some(buf) = self.buf(grads, *x) {
                    kernels::conv_forward(geom, g, kd, buf);
                }
                if let Some(buf) = self.buf(grads, *k) {
                    kernels::conv_backward_kernel(geom, g, xd, buf);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let m = (xhat.len() / c) as f64;
                let gam = val(*gamma).data().to_vec();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        sum_g[ch] += gr[ch];
                        sum_gx[ch] += gr[ch] * hr[ch];
                    }
                }
                if let Some(buf) = self.buf(grads, *gamma) {
                    for (a, v) in buf.iter_mut().zip(&sum_gx) {
                        *a += v;
                    }
                }
                if let Some(buf) = self.buf(grads, *beta) {
                    for (a, v) in buf.iter_mut().zip(&sum_g) {
                        *a += v;
                    }
                }
                if let Some(buf) = self.buf(grads, *x) {
                    for ((br, gr), hr) in buf.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let s = gam[ch] * inv_std[ch];
                            br[ch] += if *batch_stats {
                                s * (gr[ch] - sum_g[ch] / m - hr[ch] * sum_gx[ch] / m)
                            } else {
                                s * gr[ch]
                            };
                        }
                    }
                }
            }
            Op::Pool {
                x,
                kind,
                scope,
                argmax,
            } => {
                let in_shape = val(*x).shape().to_vec();
                if let Some(buf) = self.buf(grads, *x) {
                    kernels::pool_backward(&in_shape, *kind, *scope, argmax, g, buf);
                }
            }
            Op::Concat { inputs, axis } => {
                let inner: usize = out_shape[axis + 1..].iter().product();
                let outer: usize = out_shape[..*axis].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let span = val(v).shape()[*axis] * inner;
                    if let Some(buf) = self.buf(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + span];
                            for (a, s) in buf[o * span..(o + 1) * span].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    }
                    offset += span;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = val(*x).shape().to_vec();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let outer: usize = in_shape[..*axis].iter().product();
                let len = out_shape[*axis];
                if let Some(buf) = self.buf(grads, *x) {
                    for o in 0..outer {
                        let base = (o * in_shape[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (a, s) in buf[base..base + len * inner].iter_mut().zip(src) {
                            *a += s;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(buf) = self.buf(grads, *x) {
                    for (a, v) in buf.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            Op::Broadcast(x) => self.reduce_into(grads, *x, out_shape, g, 1.0),
            Op::Dropout { x, mask } => {
                if let Some(buf) = self.buf(grads, *x) {
                    for ((a, v), m) in buf.iter_mut().zip(g).zip(mask) {
                        *a += v * m;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let ad = val(*a).data();
                let bd = val(*b).data();
                if let Some(buf) = self.buf(grads, *a) {
                    // dA = G · Bᵀ
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let br = &bd[p * m..(p + 1) * m];
                            buf[i * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *b) {
                    // dB = Aᵀ · G
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in buf[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(buf) = self.buf(grads, *x) {
                    buf.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = val(*x).len().max(1) as f64;
                if let Some(buf) = self.buf(grads, *x) {
                    buf.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::FrobeniusNorm(x) => {
                let norm = node.value.item();
                let xd = val(*x).data();
                if norm > 0.0 {
                    if let Some(buf) = self.buf(grads, *x) {
                        for (a, v) in buf.iter_mut().zip(xd) {
                            *a += g[0] * v / norm;
                        }
                    }
                }
            }
            Op::RowNorms(x) => {
                let xd = val(*x).data();
                let norms = node.value.data();
                let per = xd.len() / norms.len().max(1);
                if let Some(buf) = self.buf(grads, *x) {
                    for (r, &nr) in norms.iter().enumerate() {
                        if nr > 0.0 {
                            let s = g[r] / nr;
                            for (a, v) in buf[r * per..(r + 1) * per]
                                .iter_mut()
                                .zip(&xd[r * per..(r + 1) * per])
                            {
                                *a += s * v;
                            }
                        }
                    }
                }
            }
            Op::Mse(p, t) => {
                let (pd, td) = (val(*p).data(), val(*t).data());
                let s = 2.0 * g[0] / pd.len().max(1) as f64;
                if let Some(buf) = self.buf(grads, *p) {
                    for ((a, x), y) in buf.iter_mut().zip(pd).zip(td) {
                        *a += s * (x - y);
                    }
                }
                if let Some(buf) = self.buf(grads, *t) {
                    for ((a, x), y) in buf.iter_mut().zip(pd).zip(td) {
                        *a -= s * (x - y);
                    }
                }
            }
            Op::CenteredCosine { a, b, saved } => {
                let n_cols = val(*a).shape()[1];
                for (me, is_a) in [(*a, true), (*b, false)] {
                    let Some(buf) = self.buf(grads, me) else { continue };
                    for (r, row) in saved.iter().enumerate() {
                        let Some(row) = row else { continue };
                        let (mine, other, nm, no) = if is_a {
                            (&row.ac, &row.bc, row.na, row.nb)
                        } else {
                            (&row.bc, &row.ac, row.nb, row.na)
                        };
                        let dst = &mut buf[r * n_cols..(r + 1) * n_cols];
                        for ((d, m), o) in dst.iter_mut().zip(mine).zip(other) {
                            *d += g[r] * (o / (nm * no) - row.cos * m / (nm * nm));
                        }
                    }
                }
            }
        }
    }
}

fn centered_cosine_row(a: &[f64], b: &[f64]) -> Option<CosineRow> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ac: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let bc: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = ac.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = bc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let scale_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    // a constant vector leaves only rounding residue after centring
    let tol = 1e-12 * n.sqrt();
    if na <= tol * scale_a || nb <= tol * scale_b {
        return None;
    }
    let dot: f64 = ac.iter().zip(&bc).map(|(x, y)| x * y).sum();
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Some(CosineRow { ac, bc, na, nb, cos })
}

/// Mean-centred cosine similarity of two equal-length vectors, `None` when
/// either is constant.
pub fn centered_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    centered_cosine_row(a, b).map(|r| r.cos)
}
