use crate::elem::Elem;
use crate::error::{shape_err, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Elem> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return shape_err(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); numel(shape)] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&x| T::lit(x)).collect())
    }

    /// Standard-normal entries drawn in row-major order.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Contiguous sub-tensor along axis 0.
    pub fn index0(&self, i: usize) -> Self {
        let inner: usize = numel(&self.shape[1..]);
        Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return shape_err("stack", "no tensors");
        };
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return shape_err("stack", format!("{:?} vs {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Copy of `[start, end)` along `dim`.
    pub fn narrow(&self, dim: usize, start: usize, end: usize) -> Result<Self> {
        if dim >= self.ndim() || start > end || end > self.shape[dim] {
            return shape_err("narrow", format!("{:?} dim {} [{}, {})", self.shape, dim, start, end));
        }
        let outer = numel(&self.shape[..dim]);
        let inner = numel(&self.shape[dim + 1..]);
        let len = self.shape[dim];
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[dim] = end - start;
        Ok(Self { shape, data })
    }

    /// Concatenate along `dim`; all other extents must agree.
    pub fn cat(items: &[&Tensor<T>], dim: usize) -> Result<Self> {
        let Some(first) = items.first() else {
            return shape_err("cat", "no tensors");
        };
        for t in items {
            if t.ndim() != first.ndim()
                || dim >= t.ndim()
                || t.shape[..dim] != first.shape[..dim]
                || t.shape[dim + 1..] != first.shape[dim + 1..]
            {
                return shape_err("cat", format!("{:?} vs {:?} on dim {}", t.shape, first.shape, dim));
            }
        }
        let outer = numel(&first.shape[..dim]);
        let inner = numel(&first.shape[dim + 1..]);
        let total: usize = items.iter().map(|t| t.shape[dim]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in items {
                let chunk = t.shape[dim] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[dim] = total;
        Ok(Self { shape, data })
    }

    /// Swap two axes (materialized).
    pub fn swap_axes(&self, d0: usize, d1: usize) -> Result<Self> {
        if d0 >= self.ndim() || d1 >= self.ndim() {
            return shape_err("swap_axes", format!("{:?} axes {} {}", self.shape, d0, d1));
        }
        let mut out_shape = self.shape.clone();
        out_shape.swap(d0, d1);
        let mut data = vec![T::zero(); self.numel()];
        permute_swap(&self.data, &self.shape, d0, d1, &mut data);
        Ok(Self { shape: out_shape, data })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Writes `src` (with `shape`) into `dst` laid out with axes `d0`/`d1` swapped.
pub(crate) fn permute_swap<T: Copy>(src: &[T], shape: &[usize], d0: usize, d1: usize, dst: &mut [T]) {
    if d0 == d1 {
        dst.copy_from_slice(src);
        return;
    }
    let (a, b) = if d0 < d1 { (d0, d1) } else { (d1, d0) };
    // View the tensor as [outer, n_a, mid, n_b, inner] and swap n_a <-> n_b.
    let outer = numel(&shape[..a]);
    let na = shape[a];
    let mid = numel(&shape[a + 1..b]);
    let nb = shape[b];
    let inner = numel(&shape[b + 1..]);
    for o in 0..outer {
        for i in 0..na {
            for m in 0..mid {
                for j in 0..nb {
                    let s = (((o * na + i) * mid + m) * nb + j) * inner;
                    let d = (((o * nb + j) * mid + m) * na + i) * inner;
                    dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
                }
            }
        }
    }
}
