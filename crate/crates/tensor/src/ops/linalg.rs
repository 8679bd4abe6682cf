use crate::elem::{gemm, Elem};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{numel, permute_swap, Tensor};

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatDims, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return shape_err("matmul", format!("need rank >= 2, got {a:?} x {b:?}"));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return shape_err("matmul", format!("inner dims differ: {a:?} x {b:?}"));
    }
    let shared_rhs = b.len() == 2;
    if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
        return shape_err("matmul", format!("batch dims differ: {a:?} x {b:?}"));
    }
    let batch = numel(&a[..a.len() - 2]);
    let mut out = a[..a.len() - 2].to_vec();
    out.extend([m, n]);
    Ok((MatDims { batch, m, k, n, shared_rhs }, out))
}

impl<T: Elem> Graph<T> {
    /// `[..., m, k] × [k, n]` (shared right operand) or `[..., m, k] × [..., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (d, out_shape) = matmul_dims(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); numel(&out_shape)];
        if d.shared_rhs {
            gemm(d.batch * d.m, d.k, d.n, av, false, bv, false, &mut out, false);
        } else {
            for i in 0..d.batch {
                gemm(
                    d.m,
                    d.k,
                    d.n,
                    &av[i * d.m * d.k..],
                    false,
                    &bv[i * d.k * d.n..],
                    false,
                    &mut out[i * d.m * d.n..],
                    false,
                );
            }
        }
        self.push(Tensor::new(out_shape, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn swap_axes(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let v = self.value(x).swap_axes(d0, d1)?;
        self.push(v, Op::SwapAxes(x, d0, d1), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x), &[x])
    }
}

pub(crate) fn backward<T: Elem>(g: &Graph<T>, op: &Op<T>, out_grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let mut res = Vec::new();
    match *op {
        Op::MatMul(a, b) => {
            let (d, _) = matmul_dims(g.shape(a), g.shape(b)).expect("checked in forward");
            let (av, bv, go) = (g.value(a).data(), g.value(b).data(), out_grad.data());
            if g.requires_grad(a) {
                let mut ga = vec![T::zero(); av.len()];
                if d.shared_rhs {
                    gemm(d.batch * d.m, d.n, d.k, go, false, bv, true, &mut ga, false);
                } else {
                    for i in 0..d.batch {
                        gemm(
                            d.m,
                            d.n,
                            d.k,
                            &go[i * d.m * d.n..],
                            false,
                            &bv[i * d.k * d.n..],
                            true,
                            &mut ga[i * d.m * d.k..],
                            false,
                        );
                    }
                }
                res.push((a, Tensor::new(g.shape(a).to_vec(), ga).expect("shape")));
            }
            if g.requires_grad(b) {
                let mut gb = vec![T::zero(); bv.len()];
                if d.shared_rhs {
                    gemm(d.k, d.batch * d.m, d.n, av, true, go, false, &mut gb, false);
                } else {
                    for i in 0..d.batch {
                        gemm(
                            d.k,
                            d.m,
                            d.n,
                            &av[i * d.m * d.k..],
                            true,
                            &go[i * d.m * d.n..],
                            false,
                            &mut gb[i * d.k * d.n..],
                            false,
                        );
                    }
                }
                res.push((b, Tensor::new(g.shape(b).to_vec(), gb).expect("shape")));
            }
        }
        Op::SwapAxes(x, d0, d1) => {
            let mut data = vec![T::zero(); out_grad.numel()];
            permute_swap(out_grad.data(), out_grad.shape(), d0, d1, &mut data);
            res.push((x, Tensor::new(g.shape(x).to_vec(), data).expect("shape")));
        }
        Op::Reshape(x) => {
            res.push((x, out_grad.clone().reshape(g.shape(x)).expect("shape")));
        }
        _ => unreachable!("not a linalg op"),
    }
    res
}
