//! 1-D convolutions over `[batch, channels, length]`, lowered to GEMM through
//! im2col. A transposed convolution is the adjoint of the strided convolution
//! with the same `(kernel, stride, pad)`.

use crate::elem::{gemm, Elem};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    /// Length of the "wide" signal (conv input / transposed-conv output).
    long: usize,
    /// Length of the "narrow" signal (conv output / transposed-conv input).
    short: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn source(&self, o: usize, kk: usize) -> Option<usize> {
        let p = (o * self.stride + kk).checked_sub(self.pad)?;
        (p < self.long).then_some(p)
    }
}

/// `cols[(c*K + kk) * short + o] = x[c, o*stride + kk - pad]` (0 outside).
fn im2col<T: Elem>(x: &[T], geo: Geometry, cols: &mut [T]) {
    let Geometry { channels, long, short, kernel, .. } = geo;
    for c in 0..channels {
        for kk in 0..kernel {
            let row = &mut cols[(c * kernel + kk) * short..(c * kernel + kk + 1) * short];
            for (o, v) in row.iter_mut().enumerate() {
                *v = match geo.source(o, kk) {
                    Some(p) => x[c * long + p],
                    None => T::zero(),
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a signal.
fn col2im<T: Elem>(cols: &[T], geo: Geometry, x: &mut [T]) {
    let Geometry { channels, long, short, kernel, .. } = geo;
    x.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..channels {
        for kk in 0..kernel {
            let row = &cols[(c * kernel + kk) * short..(c * kernel + kk + 1) * short];
            for (o, &v) in row.iter().enumerate() {
                if let Some(p) = geo.source(o, kk) {
                    x[c * long + p] += v;
                }
            }
        }
    }
}

fn conv_out_len(l: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (l + 2 * pad).checked_sub(k)?;
    Some(span / stride + 1)
}

fn bias_shape_ok(b: Option<&Tensor<impl Elem>>, c: usize) -> bool {
    b.is_none_or(|b| b.shape() == [c])
}

impl<T: Elem> Graph<T> {
    /// Convolution with weight `[c_out, c_in, k]`. Same-length output when
    /// `stride == 1` and `pad == k / 2` with odd `k`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return shape_err("conv1d", format!("x {xs:?}, w {ws:?}"));
        }
        let (bsz, cin, l) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if !bias_shape_ok(b.map(|b| self.value(b)), cout) {
            return shape_err("conv1d", "bias must be [c_out]");
        }
        let Some(lout) = conv_out_len(l, k, stride, pad) else {
            return shape_err("conv1d", format!("kernel {k} longer than padded input {l}"));
        };
        let geo = Geometry { channels: cin, long: l, short: lout, kernel: k, stride, pad };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut cols = vec![T::zero(); cin * k * lout];
        let mut out = vec![T::zero(); bsz * cout * lout];
        for bi in 0..bsz {
            im2col(&xv[bi * cin * l..(bi + 1) * cin * l], geo, &mut cols);
            gemm(cout, cin * k, lout, wv, false, &cols, false, &mut out[bi * cout * lout..], false);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, lout);
        }
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(Tensor::new(vec![bsz, cout, lout], out)?, Op::Conv1d { x, w, b, stride, pad }, &inputs)
    }

    /// Transposed convolution with weight `[c_in, c_out, k]`; output length
    /// `(l - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || stride == 0 {
            return shape_err("conv_transpose1d", format!("x {xs:?}, w {ws:?}"));
        }
        let (bsz, cin, ls) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[1], ws[2]);
        if !bias_shape_ok(b.map(|b| self.value(b)), cout) {
            return shape_err("conv_transpose1d", "bias must be [c_out]");
        }
        let Some(ll) = ((ls.max(1) - 1) * stride + k).checked_sub(2 * pad) else {
            return shape_err("conv_transpose1d", "padding exceeds output");
        };
        if conv_out_len(ll, k, stride, pad) != Some(ls) {
            return shape_err("conv_transpose1d", format!("length {ls} not invertible for k={k}, s={stride}, p={pad}"));
        }
        let geo = Geometry { channels: cout, long: ll, short: ls, kernel: k, stride, pad };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut cols = vec![T::zero(); cout * k * ls];
        let mut out = vec![T::zero(); bsz * cout * ll];
        for bi in 0..bsz {
            gemm(cout * k, cin, ls, wv, true, &xv[bi * cin * ls..], false, &mut cols, false);
            col2im(&cols, geo, &mut out[bi * cout * ll..(bi + 1) * cout * ll]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, ll);
        }
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(
            Tensor::new(vec![bsz, cout, ll], out)?,
            Op::ConvTranspose1d { x, w, b, stride, pad },
            &inputs,
        )
    }
}

fn add_channel_bias<T: Elem>(out: &mut [T], bias: &[T], c: usize, l: usize) {
    for (i, row) in out.chunks_mut(l).enumerate() {
        let bv = bias[i % c];
        row.iter_mut().for_each(|v| *v += bv);
    }
}

fn bias_grad<T: Elem>(go: &[T], c: usize, l: usize) -> Tensor<T> {
    let mut db = vec![0.0f64; c];
    for (i, row) in go.chunks(l).enumerate() {
        db[i % c] += row.iter().map(|v| v.as_f64()).sum::<f64>();
    }
    Tensor::from_f64(&[c], &db).expect("shape")
}

pub(crate) fn backward<T: Elem>(g: &Graph<T>, op: &Op<T>, out_grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut res = Vec::new();
    let go = out_grad.data();
    match *op {
        Op::Conv1d { x, w, b, stride, pad } => {
            let (xs, ws) = (g.shape(x), g.shape(w));
            let (bsz, cin, l) = (xs[0], xs[1], xs[2]);
            let (cout, k) = (ws[0], ws[2]);
            let lout = out_grad.shape()[2];
            let geo = Geometry { channels: cin, long: l, short: lout, kernel: k, stride, pad };
            let (xv, wv) = (g.value(x).data(), g.value(w).data());
            let mut cols = vec![T::zero(); cin * k * lout];
            let mut dw = vec![T::zero(); wv.len()];
            let mut dx = vec![T::zero(); if g.requires_grad(x) { xv.len() } else { 0 }];
            for bi in 0..bsz {
                let gob = &go[bi * cout * lout..];
                if g.requires_grad(w) {
                    im2col(&xv[bi * cin * l..(bi + 1) * cin * l], geo, &mut cols);
                    gemm(cout, lout, cin * k, gob, false, &cols, true, &mut dw, true);
                }
                if g.requires_grad(x) {
                    gemm(cin * k, cout, lout, wv, true, gob, false, &mut cols, false);
                    col2im(&cols, geo, &mut dx[bi * cin * l..(bi + 1) * cin * l]);
                }
            }
            if g.requires_grad(x) {
                res.push((x, Tensor::new(xs.to_vec(), dx).expect("shape")));
            }
            if g.requires_grad(w) {
                res.push((w, Tensor::new(ws.to_vec(), dw).expect("shape")));
            }
            if let Some(b) = b {
                res.push((b, bias_grad(go, cout, lout)));
            }
        }
        Op::ConvTranspose1d { x, w, b, stride, pad } => {
            let (xs, ws) = (g.shape(x), g.shape(w));
            let (bsz, cin, ls) = (xs[0], xs[1], xs[2]);
            let (cout, k) = (ws[1], ws[2]);
            let ll = out_grad.shape()[2];
            let geo = Geometry { channels: cout, long: ll, short: ls, kernel: k, stride, pad };
            let (xv, wv) = (g.value(x).data(), g.value(w).data());
            let mut cols = vec![T::zero(); cout * k * ls];
            let mut dw = vec![T::zero(); wv.len()];
            let mut dx = vec![T::zero(); if g.requires_grad(x) { xv.len() } else { 0 }];
            for bi in 0..bsz {
                im2col(&go[bi * cout * ll..(bi + 1) * cout * ll], geo, &mut cols);
                if g.requires_grad(x) {
                    gemm(cin, cout * k, ls, wv, false, &cols, false, &mut dx[bi * cin * ls..], false);
                }
                if g.requires_grad(w) {
                    gemm(cin, ls, cout * k, &xv[bi * cin * ls..], false, &cols, true, &mut dw, true);
                }
            }
            if g.requires_grad(x) {
                res.push((x, Tensor::new(xs.to_vec(), dx).expect("shape")));
            }
            if g.requires_grad(w) {
                res.push((w, Tensor::new(ws.to_vec(), dw).expect("shape")));
            }
            if let Some(b) = b {
                res.push((b, bias_grad(go, cout, ll)));
            }
        }
        _ => unreachable!("not a conv op"),
    }
    res
}
