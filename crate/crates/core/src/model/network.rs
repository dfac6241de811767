use super::{ModelConfig, Params};
use crate::autodiff::{ConvAttrs, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

struct AttnVars {
    q: Var,
    k: Var,
    v: Var,
    out_w: Var,
    out_b: Var,
    pos: Var,
    bias_u: Var,
    bias_v: Var,
}

struct BlockVars {
    attn_norm: (Var, Var),
    attn: AttnVars,
    ffn_norm: (Var, Var),
    linear1: (Var, Var),
    convs: Vec<(Var, Var)>,
    gnorms: Vec<(Var, Var)>,
    linear2: (Var, Var),
}

/// Parameters placed in a graph, in the structure the forward pass needs.
pub struct ModelVars {
    input_conv: (Var, Var),
    blocks: Vec<BlockVars>,
    output_conv: (Var, Var),
    all: Vec<Var>,
}

impl ModelVars {
    /// Add every parameter to `g`, as trainable leaves when `trainable`.
    pub fn attach<R: Real>(
        g: &mut Graph<R>,
        cfg: &ModelConfig,
        params: &Params,
        trainable: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        params.check(cfg)?;
        let all: Vec<Var> = params
            .tensors()
            .iter()
            .map(|t| {
                let t = t.cast::<R>();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Self::from_vars(cfg, all)
    }

    /// Structure already-placed vars, given in canonical parameter order.
    pub fn from_vars(cfg: &ModelConfig, all: Vec<Var>) -> Result<Self> {
        cfg.validate()?;
        let expected = super::params::layout(cfg).len();
        if all.len() != expected {
            return Err(Error::shape(
                "ModelVars",
                format!("{} vars, config needs {expected}", all.len()),
            ));
        }
        // consume in the same order as params::layout
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("checked against layout");
        let input_conv = (next(), next());
        let mut blocks = Vec::with_capacity(cfg.l1);
        for _ in 0..cfg.l1 {
            let attn_norm = (next(), next());
            let attn = AttnVars {
                q: next(),
                k: next(),
                v: next(),
                out_w: next(),
                out_b: next(),
                pos: next(),
                bias_u: next(),
                bias_v: next(),
            };
            let ffn_norm = (next(), next());
            let linear1 = (next(), next());
            let mut convs = Vec::with_capacity(cfg.l2);
            let mut gnorms = Vec::with_capacity(cfg.l2);
            for _ in 0..cfg.l2 {
                convs.push((next(), next()));
                gnorms.push((next(), next()));
            }
            let linear2 = (next(), next());
            blocks.push(BlockVars {
                attn_norm,
                attn,
                ffn_norm,
                linear1,
                convs,
                gnorms,
                linear2,
            });
        }
        let output_conv = (next(), next());
        Ok(Self {
            input_conv,
            blocks,
            output_conv,
            all,
        })
    }

    /// Vars in canonical parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

pub struct ForwardOutput {
    /// `[B, 2N, T]`.
    pub output: Var,
    /// Per block, softmax weights `[B, heads, T, T]`.
    pub attention: Vec<Var>,
}

fn at<T>(layer: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(op) => Error::NonFinite(format!("{layer} ({op})")),
        other => other,
    })
}

/// Sinusoidal encodings of the offsets `-(T-1)..=T-1`, shape `[2T-1, dim]`.
///
/// Row `j` encodes offset `r = j - (T - 1)`; even columns hold
/// `sin(r w_i)`, odd columns `cos(r w_i)` with `w_i = 10000^(-2i/dim)`.
pub fn relative_encoding(n_frames: usize, dim: usize) -> Tensor<f64> {
    let rows = 2 * n_frames - 1;
    let mut data = vec![0.0; rows * dim];
    for j in 0..rows {
        let r = j as f64 - (n_frames as f64 - 1.0);
        for c in 0..dim {
            let i = (c / 2) as f64;
            let w = 10000f64.powf(-2.0 * i / dim as f64);
            data[j * dim + c] = if c % 2 == 0 { (r * w).sin() } else { (r * w).cos() };
        }
    }
    Tensor::new(&[rows, dim], data).expect("encoding shape")
}

fn linear<R: Real>(g: &mut Graph<R>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

/// Relative-position multi-head self-attention on `x: [B, T, H1]`.
fn rpsa<R: Real>(
    g: &mut Graph<R>,
    cfg: &ModelConfig,
    p: &AttnVars,
    x: Var,
    pe: Var,
) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    let (b, t) = (shape[0], shape[1]);
    let (h, d) = (cfg.heads, cfg.head_dim());

    let q = g.matmul(x, p.q)?;
    let q = g.reshape(q, &[b, t, h, d])?;
    let q = g.permute(q, &[0, 2, 1, 3])?;
    let k = g.matmul(x, p.k)?;
    let k = g.reshape(k, &[b, t, h, d])?;
    let k = g.permute(k, &[0, 2, 3, 1])?;
    let v = g.matmul(x, p.v)?;
    let v = g.reshape(v, &[b, t, h, d])?;
    let v = g.permute(v, &[0, 2, 1, 3])?;

    let r = g.matmul(pe, p.pos)?;
    let r = g.reshape(r, &[2 * t - 1, h, d])?;
    let r = g.permute(r, &[1, 2, 0])?;

    let u = g.reshape(p.bias_u, &[h, 1, d])?;
    let qu = g.add(q, u)?;
    let content = g.matmul(qu, k)?;
    let vb = g.reshape(p.bias_v, &[h, 1, d])?;
    let qv = g.add(q, vb)?;
    let position = g.matmul(qv, r)?;
    let position = g.rel_shift(position)?;

    let logits = g.add(content, position)?;
    let logits = g.mul_scalar(logits, 1.0 / (d as f64).sqrt())?;
    let attn = g.softmax(logits)?;
    let ctx = g.matmul(attn, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, t, cfg.h1])?;
    let y = linear(g, ctx, p.out_w, Some(p.out_b))?;
    Ok((y, attn))
}

fn block<R: Real>(
    g: &mut Graph<R>,
    cfg: &ModelConfig,
    p: &BlockVars,
    x: Var,
    pe: Var,
    name: &str,
) -> Result<(Var, Var)> {
    let (x1, attn) = at(&format!("{name}.attn"), (|| {
        let a = g.layer_norm(x, p.attn_norm.0, p.attn_norm.1, NORM_EPS)?;
        let (a, attn) = rpsa(g, cfg, &p.attn, a, pe)?;
        let a = g.dropout(a, cfg.dropout)?;
        Ok((g.add(x, a)?, attn))
    })())?;

    let y = at(&format!("{name}.ffn"), (|| {
        let h = g.layer_norm(x1, p.ffn_norm.0, p.ffn_norm.1, NORM_EPS)?;
        let h = linear(g, h, p.linear1.0, Some(p.linear1.1))?;
        let h = g.silu(h)?;
        let mut h = g.transpose(h, 1, 2)?;
        let attrs = ConvAttrs {
            stride: 1,
            pad_left: cfg.k_conv / 2,
            pad_right: cfg.k_conv / 2,
            groups: cfg.groups,
        };
        for (&(w, bias), &(gw, gb)) in p.convs.iter().zip(&p.gnorms) {
            let c = g.conv1d(h, w, Some(bias), attrs)?;
            let c = g.group_norm(c, cfg.groups, gw, gb, NORM_EPS)?;
            h = g.silu(c)?;
        }
        let h = g.transpose(h, 1, 2)?;
        let h = g.dropout(h, cfg.dropout)?;
        let y = linear(g, h, p.linear2.0, Some(p.linear2.1))?;
        let y = g.dropout(y, cfg.dropout)?;
        if cfg.ffn_residual {
            g.add(y, x1)
        } else {
            Ok(y)
        }
    })())?;
    Ok((y, attn))
}

/// Run the network on `x: [B, 2M, T]`, returning `[B, 2N, T]`.
///
/// Dropout is active only when `g` is in training mode.
pub fn forward<R: Real>(
    g: &mut Graph<R>,
    cfg: &ModelConfig,
    p: &ModelVars,
    x: Var,
) -> Result<ForwardOutput> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != cfg.input_rows() || shape[2] == 0 {
        return Err(Error::shape(
            "forward",
            format!("input {shape:?}, expected [B, {}, T >= 1]", cfg.input_rows()),
        ));
    }
    let t = shape[2];
    let io_in = ConvAttrs {
        pad_left: cfg.k_io - 1,
        ..ConvAttrs::default()
    };
    let h = at("input_conv", g.conv1d(x, p.input_conv.0, Some(p.input_conv.1), io_in))?;
    let mut h = g.transpose(h, 1, 2)?;

    let pe = g.constant(relative_encoding(t, cfg.h1).cast());
    let mut attention = Vec::with_capacity(cfg.l1);
    for (i, bp) in p.blocks.iter().enumerate() {
        let (y, attn) = block(g, cfg, bp, h, pe, &format!("blocks.{i}"))?;
        h = y;
        attention.push(attn);
    }

    let h = g.transpose(h, 1, 2)?;
    let io_out = ConvAttrs {
        pad_left: cfg.k_io - 1,
        ..ConvAttrs::default()
    };
    let output = at(
        "output_conv",
        g.conv_transpose1d(h, p.output_conv.0, Some(p.output_conv.1), io_out),
    )?;
    Ok(ForwardOutput { output, attention })
}

/// The relative-position self-attention of block `block` alone, on
/// `x: [B, T, H1]`. Returns the projected output and the softmax weights.
pub fn self_attention<R: Real>(
    g: &mut Graph<R>,
    cfg: &ModelConfig,
    p: &ModelVars,
    block: usize,
    x: Var,
) -> Result<(Var, Var)> {
    let bp = p.blocks.get(block).ok_or(Error::OutOfRange {
        what: "block",
        index: block,
        limit: p.blocks.len(),
    })?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != cfg.h1 || shape[1] == 0 {
        return Err(Error::shape(
            "self_attention",
            format!("input {shape:?}, expected [B, T, {}]", cfg.h1),
        ));
    }
    let pe = g.constant(relative_encoding(shape[1], cfg.h1).cast());
    rpsa(g, cfg, &bp.attn, x, pe)
}
