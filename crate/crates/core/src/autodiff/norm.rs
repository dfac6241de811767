use rand::Rng;

use super::graph::{Graph, Op, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

impl<R: Real> Graph<R> {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut out = src.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Tensor::new(&shape, out)?, Op::Softmax { a })
    }

    /// Normalise each vector along the last axis, then apply `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {shape:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (vx, vg, vb) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let eps = R::from_f64(eps);
        let inv_c = R::one() / R::from_f64(c as f64);
        let rows = vx.len() / c;
        let mut xhat = vec![R::zero(); vx.len()];
        let mut rstd = vec![R::zero(); rows];
        let mut out = vec![R::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx[r * c..][..c];
            let mean = row.iter().copied().sum::<R>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() * inv_c;
            let rs = R::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * vg[j] + vb[j];
            }
        }
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Group normalisation of `x: [B, C, ...]` over `C / groups` channels and
    /// all trailing positions, with per-channel affine `gamma`, `beta`.
    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || groups == 0 || !shape[1].is_multiple_of(groups) {
            return Err(Error::shape(
                "group_norm",
                format!("input {shape:?} with {groups} groups"),
            ));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "group_norm",
                format!("affine {:?} for {c} channels", self.shape(gamma)),
            ));
        }
        let batch = shape[0];
        let inner: usize = shape[2..].iter().product();
        let cg = c / groups;
        let glen = cg * inner;
        let (vx, vg, vb) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let eps = R::from_f64(eps);
        let inv = R::one() / R::from_f64(glen as f64);
        let mut xhat = vec![R::zero(); vx.len()];
        let mut rstd = vec![R::zero(); batch * groups];
        let mut out = vec![R::zero(); vx.len()];
        for b in 0..batch {
            for grp in 0..groups {
                let off = (b * c + grp * cg) * inner;
                let seg = &vx[off..off + glen];
                let mean = seg.iter().copied().sum::<R>() * inv;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() * inv;
                let rs = R::one() / (var + eps).sqrt();
                rstd[b * groups + grp] = rs;
                for j in 0..glen {
                    let ch = grp * cg + j / inner;
                    let h = (seg[j] - mean) * rs;
                    xhat[off + j] = h;
                    out[off + j] = h * vg[ch] + vb[ch];
                }
            }
        }
        self.push(
            Tensor::new(&shape, out)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            },
        )
    }

    /// Inverted dropout: in training, zero with probability `p` and scale
    /// survivors by `1 / (1 - p)`; otherwise the identity.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate {p} must be below 1")));
        }
        let n = self.value(a).numel();
        let keep = R::from_f64(1.0 / (1.0 - p));
        let mask: Vec<R> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    R::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(a);
        let out = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(src.shape(), out)?;
        self.push(value, Op::Dropout { a, mask })
    }
}

pub(crate) fn softmax_backward<R: Real>(y: &Tensor<R>, grad: &[R]) -> Vec<R> {
    let n = *y.shape().last().expect("softmax has an axis");
    let mut out = vec![R::zero(); grad.len()];
    for ((o, yr), gr) in out
        .chunks_exact_mut(n)
        .zip(y.data().chunks_exact(n))
        .zip(grad.chunks_exact(n))
    {
        let dot: R = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..n {
            o[j] = yr[j] * (gr[j] - dot);
        }
    }
    out
}

pub(crate) fn layer_norm_backward<R: Real>(
    g: &Graph<R>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[R],
    rstd: &[R],
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let vg = g.value(gamma).data();
    let c = vg.len();
    let rows = grad.len() / c;
    let inv_c = R::one() / R::from_f64(c as f64);
    let mut gx = vec![R::zero(); grad.len()];
    let mut ggamma = vec![R::zero(); c];
    let mut gbeta = vec![R::zero(); c];
    for r in 0..rows {
        let gr = &grad[r * c..][..c];
        let hr = &xhat[r * c..][..c];
        let mut sum_d = R::zero();
        let mut sum_dh = R::zero();
        for j in 0..c {
            let d = gr[j] * vg[j];
            sum_d += d;
            sum_dh += d * hr[j];
            ggamma[j] += gr[j] * hr[j];
            gbeta[j] += gr[j];
        }
        let (mean_d, mean_dh) = (sum_d * inv_c, sum_dh * inv_c);
        for j in 0..c {
            gx[r * c + j] = rstd[r] * (gr[j] * vg[j] - mean_d - hr[j] * mean_dh);
        }
    }
    let mut out = Vec::with_capacity(3);
    if g.requires_grad(x) {
        out.push((x, gx));
    }
    out.push((gamma, ggamma));
    out.push((beta, gbeta));
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<R: Real>(
    g: &Graph<R>,
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    xhat: &[R],
    rstd: &[R],
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let shape = g.shape(x);
    let (batch, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let cg = c / groups;
    let glen = cg * inner;
    let vg = g.value(gamma).data();
    let inv = R::one() / R::from_f64(glen as f64);
    let mut gx = vec![R::zero(); grad.len()];
    let mut ggamma = vec![R::zero(); c];
    let mut gbeta = vec![R::zero(); c];
    for b in 0..batch {
        for grp in 0..groups {
            let off = (b * c + grp * cg) * inner;
            let mut sum_d = R::zero();
            let mut sum_dh = R::zero();
            for j in 0..glen {
                let ch = grp * cg + j / inner;
                let (gv, h) = (grad[off + j], xhat[off + j]);
                let d = gv * vg[ch];
                sum_d += d;
                sum_dh += d * h;
                ggamma[ch] += gv * h;
                gbeta[ch] += gv;
            }
            let (mean_d, mean_dh) = (sum_d * inv, sum_dh * inv);
            let rs = rstd[b * groups + grp];
            for j in 0..glen {
                let ch = grp * cg + j / inner;
                gx[off + j] = rs * (grad[off + j] * vg[ch] - mean_d - xhat[off + j] * mean_dh);
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if g.requires_grad(x) {
        out.push((x, gx));
    }
    out.push((gamma, ggamma));
    out.push((beta, gbeta));
    out
}
