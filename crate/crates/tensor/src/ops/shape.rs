use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{numel, Tensor};

impl<T: Elem> Graph<T> {
    /// Feature-wise modulation: `scale[b, c] * x[b, c, l] + shift[b, c]`.
    pub fn film(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || *self.shape(scale) != xs[..2] || *self.shape(shift) != xs[..2] {
            return shape_err(
                "film",
                format!("x {:?}, scale {:?}, shift {:?}", xs, self.shape(scale), self.shape(shift)),
            );
        }
        let l = xs[2];
        let (sv, hv) = (self.value(scale).data(), self.value(shift).data());
        let data = self
            .value(x)
            .data()
            .chunks(l)
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&v| sv[i] * v + hv[i]))
            .collect();
        self.push(Tensor::new(xs, data)?, Op::Film { x, scale, shift }, &[x, scale, shift])
    }

    pub fn concat(&mut self, xs: &[Var], dim: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let v = Tensor::cat(&parts, dim)?;
        self.push(v, Op::Concat { xs: xs.to_vec(), dim }, xs)
    }

    /// `[start, end)` along `dim`.
    pub fn slice(&mut self, x: Var, dim: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).narrow(dim, start, end)?;
        self.push(v, Op::Slice { x, dim, start }, &[x])
    }

    /// Rows of `table` (`[vocab, dim]`) selected by `ids`, shaped `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return shape_err("embedding", format!("table must be 2-D, got {ts:?}"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= ts[0]) {
            return shape_err("embedding", format!("id {bad} out of range for {} rows", ts[0]));
        }
        let d = ts[1];
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(Tensor::new(vec![ids.len(), d], data)?, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_dim(&mut self, x: Var, dim: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if dim >= s.len() || s[dim] == 0 {
            return shape_err("mean_dim", format!("{s:?} axis {dim}"));
        }
        let outer = numel(&s[..dim]);
        let n = s[dim];
        let inner = numel(&s[dim + 1..]);
        let xv = self.value(x).data();
        let mut acc = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    acc[o * inner + i] += xv[base + i].as_f64();
                }
            }
        }
        let mut out_shape = s.clone();
        out_shape.remove(dim);
        let data = acc.iter().map(|&v| T::lit(v / n as f64)).collect();
        self.push(Tensor::new(out_shape, data)?, Op::MeanDim { x, dim }, &[x])
    }
}

pub(crate) fn backward<T: Elem>(g: &Graph<T>, op: &Op<T>, out_grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut res = Vec::new();
    let go = out_grad.data();
    match op {
        Op::Film { x, scale, shift } => {
            let xs = g.shape(*x);
            let l = xs[2];
            let xv = g.value(*x).data();
            let sv = g.value(*scale).data();
            let rows = xs[0] * xs[1];
            let mut dx = vec![T::zero(); xv.len()];
            let mut ds = vec![0.0f64; rows];
            let mut dh = vec![0.0f64; rows];
            for r in 0..rows {
                for i in r * l..(r + 1) * l {
                    dx[i] = go[i] * sv[r];
                    ds[r] += (go[i] * xv[i]).as_f64();
                    dh[r] += go[i].as_f64();
                }
            }
            res.push((*x, Tensor::new(xs.to_vec(), dx).expect("shape")));
            res.push((*scale, Tensor::from_f64(&xs[..2], &ds).expect("shape")));
            res.push((*shift, Tensor::from_f64(&xs[..2], &dh).expect("shape")));
        }
        Op::Concat { xs, dim } => {
            let mut start = 0;
            for &v in xs {
                let len = g.shape(v)[*dim];
                if g.requires_grad(v) {
                    res.push((v, out_grad.narrow(*dim, start, start + len).expect("shape")));
                }
                start += len;
            }
        }
        Op::Slice { x, dim, start } => {
            let s = g.shape(*x);
            let outer = numel(&s[..*dim]);
            let inner = numel(&s[dim + 1..]);
            let (full, part) = (s[*dim], out_grad.shape()[*dim]);
            let mut dx = vec![T::zero(); numel(s)];
            for o in 0..outer {
                let src = &go[o * part * inner..(o + 1) * part * inner];
                let dst = (o * full + start) * inner;
                dx[dst..dst + part * inner].copy_from_slice(src);
            }
            res.push((*x, Tensor::new(s.to_vec(), dx).expect("shape")));
        }
        Op::Embedding { table, ids } => {
            let ts = g.shape(*table);
            let d = ts[1];
            let mut dt = vec![T::zero(); numel(ts)];
            for (r, &i) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[i * d + j] += go[r * d + j];
                }
            }
            res.push((*table, Tensor::new(ts.to_vec(), dt).expect("shape")));
        }
        Op::MeanDim { x, dim } => {
            let s = g.shape(*x);
            let outer = numel(&s[..*dim]);
            let n = s[*dim];
            let inner = numel(&s[dim + 1..]);
            let k = T::lit(1.0 / n as f64);
            let mut dx = vec![T::zero(); numel(s)];
            for o in 0..outer {
                for j in 0..n {
                    let base = (o * n + j) * inner;
                    for i in 0..inner {
                        dx[base + i] = go[o * inner + i] * k;
                    }
                }
            }
            res.push((*x, Tensor::new(s.to_vec(), dx).expect("shape")));
        }
        _ => unreachable!("not a shape op"),
    }
    res
}
