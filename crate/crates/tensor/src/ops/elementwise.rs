use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{numel, Tensor};

/// Numpy-style right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let off = out.len() - shape.len();
    let own = crate::tensor::strides(shape);
    (0..out.len())
        .map(|i| if i < off || shape[i - off] == 1 { 0 } else { own[i - off] })
        .collect()
}

/// True when `small` repeats contiguously to fill `out` (leading-axis broadcast).
fn is_suffix(small: &[usize], out: &[usize]) -> bool {
    let trimmed: &[usize] = {
        let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
        &small[first..]
    };
    trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == *trimmed
}

/// Maps every output position to the flat offsets of both operands.
fn for_each_offset(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..n {
        f(flat, oa, ob);
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn zip_broadcast<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let Some(out) = broadcast_shape(a.shape(), b.shape()) else {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    };
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if a.shape() == out.as_slice() && is_suffix(b.shape(), &out) {
        let m = bd.len();
        ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % m])).collect()
    } else if b.shape() == out.as_slice() && is_suffix(a.shape(), &out) {
        let m = ad.len();
        bd.iter().enumerate().map(|(i, &y)| f(ad[i % m], y)).collect()
    } else {
        let (sa, sb) = (aligned_strides(a.shape(), &out), aligned_strides(b.shape(), &out));
        let mut data = vec![T::zero(); numel(&out)];
        for_each_offset(&out, &sa, &sb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
        data
    };
    Tensor::new(out, data)
}

/// Sums `g` (shaped `out`) down to `target`, undoing a broadcast.
pub(crate) fn reduce_to<T: Elem>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let mut acc = vec![T::zero(); numel(target)];
    if is_suffix(target, g.shape()) {
        let m = acc.len();
        for (i, &x) in g.data().iter().enumerate() {
            acc[i % m] += x;
        }
    } else {
        let st = aligned_strides(target, g.shape());
        let zero = vec![0; g.ndim()];
        let gd = g.data();
        for_each_offset(g.shape(), &st, &zero, |i, it, _| acc[it] += gd[i]);
    }
    Tensor::new(target.to_vec(), acc).expect("reduce shape")
}

fn bcast_mul_reduce<T: Elem>(g: &Tensor<T>, other: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    let prod = zip_broadcast(g, other, "mul", |x, y| x * y).expect("broadcast checked in forward");
    reduce_to(&prod, target)
}

impl<T: Elem> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = T::lit(c);
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = T::lit(c);
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::lit(gelu(x.as_f64())));
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Mish: `x · tanh(softplus(x))`.
    pub fn mish(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::lit(mish(x.as_f64())));
        self.push(v, Op::Mish(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|x| x.as_f64()).sum();
        self.push(Tensor::scalar(T::lit(s)), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return shape_err("mean", "empty tensor");
        }
        let s: f64 = t.data().iter().map(|x| x.as_f64()).sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(T::lit(s)), Op::Mean(a), &[a])
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

fn mish_grad(x: f64) -> f64 {
    let th = softplus(x).tanh();
    let sig = 1.0 / (1.0 + (-x).exp());
    th + x * (1.0 - th * th) * sig
}

pub(crate) fn backward<T: Elem>(g: &Graph<T>, op: &Op<T>, out_grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut res = Vec::new();
    match *op {
        Op::Add(a, b) | Op::Sub(a, b) => {
            let neg = matches!(op, Op::Sub(..));
            if g.requires_grad(a) {
                res.push((a, reduce_to(out_grad, g.shape(a))));
            }
            if g.requires_grad(b) {
                let mut gb = reduce_to(out_grad, g.shape(b));
                if neg {
                    gb = gb.map(|x| -x);
                }
                res.push((b, gb));
            }
        }
        Op::Mul(a, b) => {
            if g.requires_grad(a) {
                res.push((a, bcast_mul_reduce(out_grad, g.value(b), g.shape(a))));
            }
            if g.requires_grad(b) {
                res.push((b, bcast_mul_reduce(out_grad, g.value(a), g.shape(b))));
            }
        }
        Op::Scale(a, c) => {
            let k = T::lit(c);
            res.push((a, out_grad.map(|x| x * k)));
        }
        Op::AddScalar(a) => res.push((a, out_grad.clone())),
        Op::Gelu(a) | Op::Mish(a) => {
            let f = if matches!(op, Op::Gelu(_)) { gelu_grad } else { mish_grad };
            let x = g.value(a);
            let data = x
                .data()
                .iter()
                .zip(out_grad.data())
                .map(|(&xi, &gi)| gi * T::lit(f(xi.as_f64())))
                .collect();
            res.push((a, Tensor::new(x.shape().to_vec(), data).expect("same shape")));
        }
        Op::Sum(a) => res.push((a, Tensor::full(g.shape(a), out_grad.item()))),
        Op::Mean(a) => {
            let n = g.value(a).numel() as f64;
            res.push((a, Tensor::full(g.shape(a), T::lit(out_grad.item().as_f64() / n))));
        }
        _ => unreachable!("not an elementwise op"),
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn general_broadcast_matches_manual() {
        let a = Tensor::<f64>::from_f64(&[2, 1, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1], &[10., 20.]).unwrap();
        let out = zip_broadcast(&a, &b, "add", |x, y| x + y).unwrap();
        assert_eq!(out.shape(), &[2, 2, 3]);
        assert_eq!(
            out.data(),
            &[11., 12., 13., 21., 22., 23., 14., 15., 16., 24., 25., 26.]
        );
        let back = reduce_to(&out, &[2, 1]);
        assert_eq!(back.data(), &[11. + 12. + 13. + 14. + 15. + 16., 21. + 22. + 23. + 24. + 25. + 26.]);
    }
}
