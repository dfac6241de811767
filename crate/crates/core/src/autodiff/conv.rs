//! 1-D convolution and transposed convolution over `[batch, channels, time]`.

use super::graph::{Graph, Op, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Explicit padding (or, for the transposed op, cropping) on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvAttrs {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub groups: usize,
}

impl Default for ConvAttrs {
    fn default() -> Self {
        Self {
            stride: 1,
            pad_left: 0,
            pad_right: 0,
            groups: 1,
        }
    }
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    t_in: usize,
    t_out: usize,
    kernel: usize,
    /// input channels per group
    cin_g: usize,
    /// output channels per group
    cout_g: usize,
}

fn conv_geom(x: &[usize], w: &[usize], bias: Option<&[usize]>, a: &ConvAttrs) -> Result<ConvGeom> {
    let err = |d: String| Error::shape("conv1d", d);
    if x.len() != 3 || w.len() != 3 {
        return Err(err(format!("input {x:?}, weight {w:?}")));
    }
    if a.stride == 0 || a.groups == 0 {
        return Err(err("stride and groups must be positive".into()));
    }
    let (batch, c_in, t_in) = (x[0], x[1], x[2]);
    let (c_out, cin_g, kernel) = (w[0], w[1], w[2]);
    if c_in % a.groups != 0 || c_out % a.groups != 0 {
        return Err(err(format!(
            "groups {} do not divide channels {c_in} -> {c_out}",
            a.groups
        )));
    }
    if cin_g != c_in / a.groups {
        return Err(err(format!("weight {w:?} for {c_in} input channels")));
    }
    if bias.is_some_and(|b| b != [c_out]) {
        return Err(err(format!("bias {:?} for {c_out} channels", bias.unwrap())));
    }
    let padded = t_in + a.pad_left + a.pad_right;
    if padded < kernel {
        return Err(err(format!("padded length {padded} shorter than kernel {kernel}")));
    }
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        t_in,
        t_out: (padded - kernel) / a.stride + 1,
        kernel,
        cin_g,
        cout_g: c_out / a.groups,
    })
}

/// Weight `[c_in, c_out / groups, k]`; `pad_*` crop the full output.
fn conv_t_geom(x: &[usize], w: &[usize], bias: Option<&[usize]>, a: &ConvAttrs) -> Result<ConvGeom> {
    let err = |d: String| Error::shape("conv_transpose1d", d);
    if x.len() != 3 || w.len() != 3 {
        return Err(err(format!("input {x:?}, weight {w:?}")));
    }
    if a.stride == 0 || a.groups == 0 {
        return Err(err("stride and groups must be positive".into()));
    }
    let (batch, c_in, t_in) = (x[0], x[1], x[2]);
    let (wc_in, cout_g, kernel) = (w[0], w[1], w[2]);
    if wc_in != c_in || c_in % a.groups != 0 {
        return Err(err(format!(
            "weight {w:?} for {c_in} input channels, groups {}",
            a.groups
        )));
    }
    let c_out = cout_g * a.groups;
    if bias.is_some_and(|b| b != [c_out]) {
        return Err(err(format!("bias {:?} for {c_out} channels", bias.unwrap())));
    }
    let full = (t_in.max(1) - 1) * a.stride + kernel;
    if t_in == 0 || full <= a.pad_left + a.pad_right {
        return Err(err(format!("crop {}+{} of length {full}", a.pad_left, a.pad_right)));
    }
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        t_in,
        t_out: full - a.pad_left - a.pad_right,
        kernel,
        cin_g: c_in / a.groups,
        cout_g,
    })
}

impl<R: Real> Graph<R> {
    /// `x: [B, C_in, T]`, `w: [C_out, C_in / groups, K]`, `bias: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, attrs: ConvAttrs) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let geo = conv_geom(self.shape(x), self.shape(w), bshape.as_deref(), &attrs)?;
        let (vx, vw) = (self.value(x).data(), self.value(w).data());
        let vb = bias.map(|b| self.value(b).data());
        let mut out = vec![R::zero(); geo.batch * geo.c_out * geo.t_out];
        let pl = attrs.pad_left as isize;
        for b in 0..geo.batch {
            for co in 0..geo.c_out {
                let grp = co / geo.cout_g;
                let row = &mut out[(b * geo.c_out + co) * geo.t_out..][..geo.t_out];
                if let Some(vb) = vb {
                    row.iter_mut().for_each(|v| *v = vb[co]);
                }
                for cig in 0..geo.cin_g {
                    let ci = grp * geo.cin_g + cig;
                    let xrow = &vx[(b * geo.c_in + ci) * geo.t_in..][..geo.t_in];
                    for k in 0..geo.kernel {
                        let wv = vw[(co * geo.cin_g + cig) * geo.kernel + k];
                        let (lo, hi) = valid_range(geo.t_out, geo.t_in, attrs.stride, k as isize - pl);
                        if lo == hi {
                            continue;
                        }
                        if attrs.stride == 1 {
                            let off = (lo as isize + k as isize - pl) as usize;
                            for (o, &xv) in row[lo..hi].iter_mut().zip(&xrow[off..]) {
                                *o += wv * xv;
                            }
                        } else {
                            for t in lo..hi {
                                let src = (t * attrs.stride) as isize + k as isize - pl;
                                row[t] += wv * xrow[src as usize];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[geo.batch, geo.c_out, geo.t_out], out)?;
        self.push(value, Op::Conv1d { x, w, bias, attrs })
    }

    /// `x: [B, C_in, T]`, `w: [C_in, C_out / groups, K]`, `bias: [C_out]`.
    ///
    /// The full output of length `(T - 1) * stride + K` is cropped by
    /// `pad_left` / `pad_right`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        attrs: ConvAttrs,
    ) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let geo = conv_t_geom(self.shape(x), self.shape(w), bshape.as_deref(), &attrs)?;
        let (vx, vw) = (self.value(x).data(), self.value(w).data());
        let vb = bias.map(|b| self.value(b).data());
        let mut out = vec![R::zero(); geo.batch * geo.c_out * geo.t_out];
        for b in 0..geo.batch {
            for co in 0..geo.c_out {
                let grp = co / geo.cout_g;
                let cog = co % geo.cout_g;
                let row = &mut out[(b * geo.c_out + co) * geo.t_out..][..geo.t_out];
                if let Some(vb) = vb {
                    row.iter_mut().for_each(|v| *v = vb[co]);
                }
                for cig in 0..geo.cin_g {
                    let ci = grp * geo.cin_g + cig;
                    let xrow = &vx[(b * geo.c_in + ci) * geo.t_in..][..geo.t_in];
                    for k in 0..geo.kernel {
                        let wv = vw[(ci * geo.cout_g + cog) * geo.kernel + k];
                        // out[t'] gathers x[t] with t * stride + k - crop_left = t'
                        for (t, &xv) in xrow.iter().enumerate() {
                            let dst = (t * attrs.stride + k) as isize - attrs.pad_left as isize;
                            if dst >= 0 && (dst as usize) < geo.t_out {
                                row[dst as usize] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[geo.batch, geo.c_out, geo.t_out], out)?;
        self.push(value, Op::ConvTranspose1d { x, w, bias, attrs })
    }
}

/// Output positions `t` in `[lo, hi)` whose source `t * stride + shift` lies in `[0, t_in)`.
fn valid_range(t_out: usize, t_in: usize, stride: usize, shift: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
    let hi = if (t_in as isize) - shift <= 0 {
        0
    } else {
        (((t_in as isize) - shift + s - 1) / s).min(t_out as isize)
    };
    let lo = (lo as usize).min(t_out);
    (lo, (hi.max(0) as usize).max(lo))
}

pub(crate) fn conv1d_backward<R: Real>(
    g: &Graph<R>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    attrs: &ConvAttrs,
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let bshape = bias.map(|b| g.shape(b).to_vec());
    let geo = conv_geom(g.shape(x), g.shape(w), bshape.as_deref(), attrs).expect("validated");
    let (vx, vw) = (g.value(x).data(), g.value(w).data());
    let pl = attrs.pad_left as isize;
    let need_x = g.requires_grad(x);
    let need_w = g.requires_grad(w);
    let mut gx = vec![R::zero(); if need_x { vx.len() } else { 0 }];
    let mut gw = vec![R::zero(); if need_w { vw.len() } else { 0 }];
    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let grp = co / geo.cout_g;
            let grow = &grad[(b * geo.c_out + co) * geo.t_out..][..geo.t_out];
            for cig in 0..geo.cin_g {
                let ci = grp * geo.cin_g + cig;
                let xoff = (b * geo.c_in + ci) * geo.t_in;
                for k in 0..geo.kernel {
                    let widx = (co * geo.cin_g + cig) * geo.kernel + k;
                    let wv = vw[widx];
                    let (lo, hi) = valid_range(geo.t_out, geo.t_in, attrs.stride, k as isize - pl);
                    if lo == hi {
                        continue;
                    }
                    let mut acc = R::zero();
                    if attrs.stride == 1 {
                        let src = xoff + (lo as isize + k as isize - pl) as usize;
                        let gs = &grow[lo..hi];
                        if need_x {
                            for (d, &gv) in gx[src..src + gs.len()].iter_mut().zip(gs) {
                                *d += wv * gv;
                            }
                        }
                        for (&gv, &xv) in gs.iter().zip(&vx[src..src + gs.len()]) {
                            acc += gv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            let src = xoff + ((t * attrs.stride) as isize + k as isize - pl) as usize;
                            if need_x {
                                gx[src] += wv * grow[t];
                            }
                            acc += grow[t] * vx[src];
                        }
                    }
                    if need_w {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if need_x {
        out.push((x, gx));
    }
    if need_w {
        out.push((w, gw));
    }
    if let Some(bv) = bias.filter(|&b| g.requires_grad(b)) {
        out.push((bv, bias_grad(grad, geo.batch, geo.c_out, geo.t_out)));
    }
    out
}

pub(crate) fn conv_transpose1d_backward<R: Real>(
    g: &Graph<R>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    attrs: &ConvAttrs,
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let bshape = bias.map(|b| g.shape(b).to_vec());
    let geo = conv_t_geom(g.shape(x), g.shape(w), bshape.as_deref(), attrs).expect("validated");
    let (vx, vw) = (g.value(x).data(), g.value(w).data());
    let need_x = g.requires_grad(x);
    let need_w = g.requires_grad(w);
    let mut gx = vec![R::zero(); if need_x { vx.len() } else { 0 }];
    let mut gw = vec![R::zero(); if need_w { vw.len() } else { 0 }];
    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let grp = co / geo.cout_g;
            let cog = co % geo.cout_g;
            let grow = &grad[(b * geo.c_out + co) * geo.t_out..][..geo.t_out];
            for cig in 0..geo.cin_g {
                let ci = grp * geo.cin_g + cig;
                let xoff = (b * geo.c_in + ci) * geo.t_in;
                for k in 0..geo.kernel {
                    let widx = (ci * geo.cout_g + cog) * geo.kernel + k;
                    let wv = vw[widx];
                    let mut acc = R::zero();
                    for t in 0..geo.t_in {
                        let dst = (t * attrs.stride + k) as isize - attrs.pad_left as isize;
                        if dst >= 0 && (dst as usize) < geo.t_out {
                            let gv = grow[dst as usize];
                            if need_x {
                                gx[xoff + t] += wv * gv;
                            }
                            acc += gv * vx[xoff + t];
                        }
                    }
                    if need_w {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if need_x {
        out.push((x, gx));
    }
    if need_w {
        out.push((w, gw));
    }
    if let Some(bv) = bias.filter(|&b| g.requires_grad(b)) {
        out.push((bv, bias_grad(grad, geo.batch, geo.c_out, geo.t_out)));
    }
    out
}

fn bias_grad<R: Real>(grad: &[R], batch: usize, c: usize, t: usize) -> Vec<R> {
    let mut gb = vec![R::zero(); c];
    for b in 0..batch {
        for (ch, slot) in gb.iter_mut().enumerate() {
            *slot += grad[(b * c + ch) * t..][..t].iter().copied().sum::<R>();
        }
    }
    gb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_edges() {
        // stride 1, shift -3 (left pad 3, k = 0): first three outputs read padding
        assert_eq!(valid_range(8, 8, 1, -3), (3, 8));
        assert_eq!(valid_range(8, 8, 1, 0), (0, 8));
        assert_eq!(valid_range(6, 8, 1, 2), (0, 6));
        assert_eq!(valid_range(4, 8, 2, -1), (1, 4));
        // single input frame, tap entirely in the padding
        assert_eq!(valid_range(1, 1, 1, -3), (1, 1));
    }
}
