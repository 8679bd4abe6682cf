use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

impl<T: Elem> Graph<T> {
    /// Softmax over the last axis. With `causal`, the last two axes are read
    /// as `[query, key]` and keys after the query position get weight exactly 0.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if shape.is_empty() {
            return shape_err("softmax", "scalar input");
        }
        let lk = shape[shape.len() - 1];
        let lq = if causal {
            if shape.len() < 2 || shape[shape.len() - 2] != lk {
                return shape_err("softmax", format!("causal mask needs square last axes, got {shape:?}"));
            }
            lk
        } else {
            1
        };
        let mut out = vec![T::zero(); t.numel()];
        for (r, (row, o)) in t.data().chunks(lk).zip(out.chunks_mut(lk)).enumerate() {
            let valid = if causal { r % lq + 1 } else { lk };
            let mx = row[..valid].iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let mut s = 0.0;
            for j in 0..valid {
                let e = (row[j].as_f64() - mx).exp();
                o[j] = T::lit(e);
                s += e;
            }
            let inv = 1.0 / s;
            for v in o[..valid].iter_mut() {
                *v = T::lit(v.as_f64() * inv);
            }
        }
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), &[x])
    }

    /// Normalizes the last axis, then applies per-feature `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", t.shape(), self.shape(gain), self.shape(bias)),
            );
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.numel() / d;
        let mut out = vec![T::zero(); t.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for (row, o) in t.data().chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = moments(row.iter().copied());
            for j in 0..d {
                let xhat = (row[j].as_f64() - mean) * rstd;
                o[j] = T::lit(xhat * gv[j].as_f64() + bv[j].as_f64());
            }
            means.push(T::lit(mean));
            rstds.push(T::lit(rstd));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push(v, Op::LayerNorm { x, gain, bias, mean: means, rstd: rstds }, &[x, gain, bias])
    }

    /// Group norm over `[batch, channels, length]`.
    pub fn group_norm(&mut self, x: Var, gain: Var, bias: Var, groups: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 3 || groups == 0 || s[1] % groups != 0 {
            return shape_err("group_norm", format!("x {s:?} with {groups} groups"));
        }
        let (b, c, l) = (s[0], s[1], s[2]);
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return shape_err("group_norm", format!("affine params must be [{c}]"));
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let cg = c / groups;
        let chunk = cg * l;
        let mut out = vec![T::zero(); t.numel()];
        let mut means = Vec::with_capacity(b * groups);
        let mut rstds = Vec::with_capacity(b * groups);
        for (gi, (blk, o)) in t.data().chunks(chunk).zip(out.chunks_mut(chunk)).enumerate() {
            let (mean, rstd) = moments(blk.iter().copied());
            let c0 = (gi % groups) * cg;
            for (ci, (xs, os)) in blk.chunks(l).zip(o.chunks_mut(l)).enumerate() {
                let (gm, bs) = (gv[c0 + ci].as_f64(), bv[c0 + ci].as_f64());
                for (xv, ov) in xs.iter().zip(os.iter_mut()) {
                    *ov = T::lit((xv.as_f64() - mean) * rstd * gm + bs);
                }
            }
            means.push(T::lit(mean));
            rstds.push(T::lit(rstd));
        }
        let v = Tensor::new(s.to_vec(), out)?;
        self.push(v, Op::GroupNorm { x, gain, bias, groups, mean: means, rstd: rstds }, &[x, gain, bias])
    }
}

fn moments<T: Elem>(xs: impl Iterator<Item = T> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = xs.map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + NORM_EPS).sqrt())
}

/// Backprop through `xhat = (x - mean) * rstd` for one normalization block.
/// `dxhat` already includes the gain.
fn norm_block_backward(x: &[f64], dxhat: &[f64], mean: f64, rstd: f64, dx: &mut [f64]) {
    let n = x.len() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (xi, di) in x.iter().zip(dxhat) {
        let xhat = (xi - mean) * rstd;
        s1 += di;
        s2 += di * xhat;
    }
    let (m1, m2) = (s1 / n, s2 / n);
    for ((xi, di), o) in x.iter().zip(dxhat).zip(dx.iter_mut()) {
        let xhat = (xi - mean) * rstd;
        *o = rstd * (di - m1 - xhat * m2);
    }
}

pub(crate) fn backward<T: Elem>(g: &Graph<T>, op: &Op<T>, out_grad: &Tensor<T>, out: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut res = Vec::new();
    match op {
        Op::Softmax(x) => {
            let lk = *out.shape().last().expect("rank >= 1");
            let mut dx = vec![T::zero(); out.numel()];
            for ((y, gy), d) in out.data().chunks(lk).zip(out_grad.data().chunks(lk)).zip(dx.chunks_mut(lk)) {
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                for j in 0..lk {
                    d[j] = T::lit(y[j].as_f64() * (gy[j].as_f64() - dot));
                }
            }
            res.push((*x, Tensor::new(out.shape().to_vec(), dx).expect("shape")));
        }
        Op::LayerNorm { x, gain, bias, mean, rstd } => {
            let xv = g.value(*x);
            let d = *xv.shape().last().expect("rank >= 1");
            let gv = g.value(*gain).to_f64_vec();
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let mut dx = vec![T::zero(); xv.numel()];
            let mut xrow = vec![0.0; d];
            let mut dxhat = vec![0.0; d];
            let mut drow = vec![0.0; d];
            for (r, (row, gy)) in xv.data().chunks(d).zip(out_grad.data().chunks(d)).enumerate() {
                let (mu, rs) = (mean[r].as_f64(), rstd[r].as_f64());
                for j in 0..d {
                    xrow[j] = row[j].as_f64();
                    let gj = gy[j].as_f64();
                    dgain[j] += gj * (xrow[j] - mu) * rs;
                    dbias[j] += gj;
                    dxhat[j] = gj * gv[j];
                }
                norm_block_backward(&xrow, &dxhat, mu, rs, &mut drow);
                for j in 0..d {
                    dx[r * d + j] = T::lit(drow[j]);
                }
            }
            if g.requires_grad(*x) {
                res.push((*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape")));
            }
            res.push((*gain, Tensor::from_f64(&[d], &dgain).expect("shape")));
            res.push((*bias, Tensor::from_f64(&[d], &dbias).expect("shape")));
        }
        Op::GroupNorm { x, gain, bias, groups, mean, rstd } => {
            let xv = g.value(*x);
            let s = xv.shape();
            let (c, l) = (s[1], s[2]);
            let cg = c / groups;
            let chunk = cg * l;
            let gv = g.value(*gain).to_f64_vec();
            let mut dgain = vec![0.0; c];
            let mut dbias = vec![0.0; c];
            let mut dx = vec![T::zero(); xv.numel()];
            let mut xb = vec![0.0; chunk];
            let mut dxhat = vec![0.0; chunk];
            let mut db = vec![0.0; chunk];
            for (gi, (blk, gy)) in xv.data().chunks(chunk).zip(out_grad.data().chunks(chunk)).enumerate() {
                let (mu, rs) = (mean[gi].as_f64(), rstd[gi].as_f64());
                let c0 = (gi % groups) * cg;
                for i in 0..chunk {
                    let ch = c0 + i / l;
                    xb[i] = blk[i].as_f64();
                    let gj = gy[i].as_f64();
                    dgain[ch] += gj * (xb[i] - mu) * rs;
                    dbias[ch] += gj;
                    dxhat[i] = gj * gv[ch];
                }
                norm_block_backward(&xb, &dxhat, mu, rs, &mut db);
                for i in 0..chunk {
                    dx[gi * chunk + i] = T::lit(db[i]);
                }
            }
            if g.requires_grad(*x) {
                res.push((*x, Tensor::new(s.to_vec(), dx).expect("shape")));
            }
            res.push((*gain, Tensor::from_f64(&[c], &dgain).expect("shape")));
            res.push((*bias, Tensor::from_f64(&[c], &dbias).expect("shape")));
        }
        _ => unreachable!("not a norm op"),
    }
    res
}
