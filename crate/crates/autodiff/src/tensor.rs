use crate::error::{Result, TensorError};

/// Dense row-major f64 tensor. Image tensors use `[batch, height, width, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::shape(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &[f64]) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }

    /// Size-1 axes of `self` are stretched to match `shape`. Ranks must agree.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(TensorError::shape(
                "broadcast",
                format!("rank mismatch {:?} -> {:?}", self.shape, shape),
            ));
        }
        for (&a, &b) in self.shape.iter().zip(shape) {
            if a != b && a != 1 {
                return Err(TensorError::shape(
                    "broadcast",
                    format!("cannot expand {:?} to {:?}", self.shape, shape),
                ));
            }
        }
        let src_strides = broadcast_strides(&self.shape, shape);
        let mut out = vec![0.0; shape.iter().product()];
        for_each_index(shape, &src_strides, |o, s| out[o] = self.data[s]);
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
        })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `src` read through an output of shape `out`; broadcast axes get stride 0.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(src);
    src.iter()
        .zip(out)
        .zip(st)
        .map(|((&s, &o), st)| if s == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Visits every flat output index together with the matching flat source index.
pub(crate) fn for_each_index(out: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let last = rank - 1;
    let inner = out[last];
    let inner_stride = src_strides[last];
    let mut o = 0usize;
    loop {
        let mut s = src;
        for _ in 0..inner {
            f(o, s);
            o += 1;
            s += inner_stride;
        }
        // advance the outer multi-index
        let mut axis = last;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            src += src_strides[axis];
            if idx[axis] < out[axis] {
                break;
            }
            src -= src_strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::shape(
            op,
            format!("rank mismatch {:?} vs {:?}", a, b),
        ));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(TensorError::shape(
                op,
                format!("incompatible shapes {:?} and {:?}", a, b),
            )),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
        assert_eq!(Tensor::scalar(3.0).item(), 3.0);
    }

    #[test]
    fn broadcast_expands_unit_axes_only() {
        let t = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = t.broadcast_to(&[3, 2]).unwrap();
        assert_eq!(b.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(t.broadcast_to(&[3, 3]).is_err());
        let c = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        assert_eq!(
            c.broadcast_to(&[2, 3]).unwrap().data(),
            &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
        );
    }
}
