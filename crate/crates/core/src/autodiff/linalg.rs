use super::graph::{Graph, Op, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

struct MatmulDims {
    batch_a: usize,
    batch_b: usize,
    n: usize,
    k: usize,
    m: usize,
}

/// `a: [..., n, k]`, `b: [..., k, m]` where b's batch dims are a suffix of a's.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    let err = || Error::shape("matmul", format!("{a:?} @ {b:?}"));
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (n, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, m) = (b[b.len() - 2], b[b.len() - 1]);
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    if k != k2 || bb.len() > ab.len() || bb != &ab[ab.len() - bb.len()..] {
        return Err(err());
    }
    let mut out = ab.to_vec();
    out.extend([n, m]);
    Ok((
        MatmulDims {
            batch_a: ab.iter().product(),
            batch_b: bb.iter().product(),
            n,
            k,
            m,
        },
        out,
    ))
}

impl<R: Real> Graph<R> {
    /// Batched matrix product. `b` may omit leading batch dims of `a`, in
    /// which case it is shared across them.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (d, out_shape) = matmul_dims(self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![R::zero(); d.batch_a * d.n * d.m];
        if d.batch_b == 1 {
            // fold the batch into rows
            unsafe {
                R::gemm(
                    d.batch_a * d.n,
                    d.k,
                    d.m,
                    R::one(),
                    va.as_ptr(),
                    d.k as isize,
                    1,
                    vb.as_ptr(),
                    d.m as isize,
                    1,
                    R::zero(),
                    out.as_mut_ptr(),
                    d.m as isize,
                    1,
                );
            }
        } else {
            for i in 0..d.batch_a {
                let j = i % d.batch_b;
                unsafe {
                    R::gemm(
                        d.n,
                        d.k,
                        d.m,
                        R::one(),
                        va[i * d.n * d.k..].as_ptr(),
                        d.k as isize,
                        1,
                        vb[j * d.k * d.m..].as_ptr(),
                        d.m as isize,
                        1,
                        R::zero(),
                        out[i * d.n * d.m..].as_mut_ptr(),
                        d.m as isize,
                        1,
                    );
                }
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Matmul { a, b })
    }
}

pub(crate) fn matmul_backward<R: Real>(
    g: &Graph<R>,
    a: Var,
    b: Var,
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let (d, _) = matmul_dims(g.shape(a), g.shape(b)).expect("validated in forward");
    let (va, vb) = (g.value(a).data(), g.value(b).data());
    let mut out = Vec::with_capacity(2);
    if g.requires_grad(a) {
        // dA = dC @ B^T
        let mut ga = vec![R::zero(); va.len()];
        if d.batch_b == 1 {
            unsafe {
                R::gemm(
                    d.batch_a * d.n,
                    d.m,
                    d.k,
                    R::one(),
                    grad.as_ptr(),
                    d.m as isize,
                    1,
                    vb.as_ptr(),
                    1,
                    d.m as isize,
                    R::zero(),
                    ga.as_mut_ptr(),
                    d.k as isize,
                    1,
                );
            }
        } else {
            for i in 0..d.batch_a {
                let j = i % d.batch_b;
                unsafe {
                    R::gemm(
                        d.n,
                        d.m,
                        d.k,
                        R::one(),
                        grad[i * d.n * d.m..].as_ptr(),
                        d.m as isize,
                        1,
                        vb[j * d.k * d.m..].as_ptr(),
                        1,
                        d.m as isize,
                        R::zero(),
                        ga[i * d.n * d.k..].as_mut_ptr(),
                        d.k as isize,
                        1,
                    );
                }
            }
        }
        out.push((a, ga));
    }
    if g.requires_grad(b) {
        // dB = A^T @ dC, summed over broadcast batches in index order
        let mut gb = vec![R::zero(); vb.len()];
        if d.batch_b == 1 {
            unsafe {
                R::gemm(
                    d.k,
                    d.batch_a * d.n,
                    d.m,
                    R::one(),
                    va.as_ptr(),
                    1,
                    d.k as isize,
                    grad.as_ptr(),
                    d.m as isize,
                    1,
                    R::zero(),
                    gb.as_mut_ptr(),
                    d.m as isize,
                    1,
                );
            }
        } else {
            for i in 0..d.batch_a {
                let j = i % d.batch_b;
                unsafe {
                    R::gemm(
                        d.k,
                        d.n,
                        d.m,
                        R::one(),
                        va[i * d.n * d.k..].as_ptr(),
                        1,
                        d.k as isize,
                        grad[i * d.n * d.m..].as_ptr(),
                        d.m as isize,
                        1,
                        R::one(),
                        gb[j * d.k * d.m..].as_mut_ptr(),
                        d.m as isize,
                        1,
                    );
                }
            }
        }
        out.push((b, gb));
    }
    out
}
