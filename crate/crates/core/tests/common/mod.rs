//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use nbc::model::{ModelConfig, Params};
use nbc::roomsim::SceneConfig;

const EPS: f64 = 1e-5;

type Mat = Vec<Vec<f64>>;

fn p<'a>(params: &'a Params, name: &str) -> &'a [f64] {
    params.get(name).unwrap_or_else(|| panic!("missing {name}")).data()
}

/// `x[T][in] * w[in][out] (+ b)`.
fn dense(x: &Mat, w: &[f64], b: Option<&[f64]>, n_out: usize) -> Mat {
    x.iter()
        .map(|row| {
            (0..n_out)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for (i, xi) in row.iter().enumerate() {
                        s += xi * w[i * n_out + o];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let rstd = 1.0 / (var + EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) * rstd * gamma[c] + beta[c])
                .collect()
        })
        .collect()
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Sinusoid of offset `r` in column `c` of a `dim`-wide encoding.
fn encoding(r: f64, c: usize, dim: usize) -> f64 {
    let w = 1.0 / 10000f64.powf((c - c % 2) as f64 / dim as f64);
    if c.is_multiple_of(2) {
        (r * w).sin()
    } else {
        (r * w).cos()
    }
}

/// Relative-position attention of one block on `a[T][H1]`.
/// Returns the projected output and `attn[head][q][k]`.
pub fn attention(cfg: &ModelConfig, params: &Params, block: usize, a: &Mat) -> (Mat, Vec<Mat>) {
    let name = |s: &str| format!("blocks.{block}.attn.{s}");
    let (t, h1, d) = (a.len(), cfg.h1, cfg.head_dim());
    let q = dense(a, p(params, &name("q.weight")), None, h1);
    let k = dense(a, p(params, &name("k.weight")), None, h1);
    let v = dense(a, p(params, &name("v.weight")), None, h1);
    let wpos = p(params, &name("pos.weight"));
    let u = p(params, &name("pos_bias_u"));
    let vb = p(params, &name("pos_bias_v"));

    let mut ctx = vec![vec![0.0; h1]; t];
    let mut maps = Vec::new();
    for head in 0..cfg.heads {
        let cols = head * d..(head + 1) * d;
        let mut map = vec![vec![0.0; t]; t];
        for qi in 0..t {
            let mut logits = vec![0.0; t];
            for (ki, logit) in logits.iter_mut().enumerate() {
                let offset = ki as f64 - qi as f64;
                let mut content = 0.0;
                let mut position = 0.0;
                for (j, c) in cols.clone().enumerate() {
                    let mut r = 0.0;
                    for i in 0..h1 {
                        r += encoding(offset, i, h1) * wpos[i * h1 + c];
                    }
                    content += (q[qi][c] + u[head * d + j]) * k[ki][c];
                    position += (q[qi][c] + vb[head * d + j]) * r;
                }
                *logit = (content + position) / (d as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for ki in 0..t {
                map[qi][ki] = exps[ki] / z;
                for c in cols.clone() {
                    ctx[qi][c] += map[qi][ki] * v[ki][c];
                }
            }
        }
        maps.push(map);
    }
    let out = dense(&ctx, p(params, &name("out.weight")), Some(p(params, &name("out.bias"))), h1);
    (out, maps)
}

/// Straight-line forward pass of one narrow-band sequence.
///
/// `x` is `[2M][T]`; returns the `[2N][T]` output and, per block, the
/// attention weights `[head][q][k]`.
pub fn reference_forward(cfg: &ModelConfig, params: &Params, x: &Mat) -> (Mat, Vec<Vec<Mat>>) {
    let t = x[0].len();
    let (h1, h2, kio) = (cfg.h1, cfg.h2, cfg.k_io);
    let m2 = cfg.input_rows();
    let n2 = cfg.output_rows();

    // causal input convolution, frames as rows
    let w = p(params, "input_conv.weight");
    let b = p(params, "input_conv.bias");
    let mut h: Mat = (0..t)
        .map(|ti| {
            (0..h1)
                .map(|o| {
                    let mut s = b[o];
                    for c in 0..m2 {
                        for k in 0..kio {
                            let src = ti as i64 + k as i64 - (kio as i64 - 1);
                            if src >= 0 {
                                s += w[(o * m2 + c) * kio + k] * x[c][src as usize];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect();

    let mut all_maps = Vec::new();
    for blk in 0..cfg.l1 {
        let name = |s: &str| format!("blocks.{blk}.{s}");
        let a = layer_norm(&h, p(params, &name("attn_norm.weight")), p(params, &name("attn_norm.bias")));
        let (att, maps) = attention(cfg, params, blk, &a);
        all_maps.push(maps);
        let x1: Mat = h
            .iter()
            .zip(&att)
            .map(|(r, a)| r.iter().zip(a).map(|(u, v)| u + v).collect())
            .collect();

        let f = layer_norm(&x1, p(params, &name("ffn_norm.weight")), p(params, &name("ffn_norm.bias")));
        let f = dense(&f, p(params, &name("ffn.linear1.weight")), Some(p(params, &name("ffn.linear1.bias"))), h2);
        let mut f: Mat = f.iter().map(|r| r.iter().map(|&v| silu(v)).collect()).collect();

        let cg = h2 / cfg.groups;
        let kc = cfg.k_conv;
        let pad = (kc / 2) as i64;
        for j in 0..cfg.l2 {
            let w = p(params, &name(&format!("ffn.convs.{j}.weight")));
            let b = p(params, &name(&format!("ffn.convs.{j}.bias")));
            let mut c: Mat = vec![vec![0.0; h2]; t];
            for (ti, row) in c.iter_mut().enumerate() {
                for o in 0..h2 {
                    let g = o / cg;
                    let mut s = b[o];
                    for i in 0..cg {
                        for k in 0..kc {
                            let src = ti as i64 + k as i64 - pad;
                            if src >= 0 && (src as usize) < t {
                                s += w[(o * cg + i) * kc + k] * f[src as usize][g * cg + i];
                            }
                        }
                    }
                    row[o] = s;
                }
            }
            let gamma = p(params, &name(&format!("ffn.gnorms.{j}.weight")));
            let beta = p(params, &name(&format!("ffn.gnorms.{j}.bias")));
            for g in 0..cfg.groups {
                let chans = g * cg..(g + 1) * cg;
                let n = (cg * t) as f64;
                let mean = c.iter().map(|r| r[chans.clone()].iter().sum::<f64>()).sum::<f64>() / n;
                let var = c
                    .iter()
                    .map(|r| r[chans.clone()].iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n;
                let rstd = 1.0 / (var + EPS).sqrt();
                for r in c.iter_mut() {
                    for ch in chans.clone() {
                        r[ch] = silu((r[ch] - mean) * rstd * gamma[ch] + beta[ch]);
                    }
                }
            }
            f = c;
        }
        let y = dense(&f, p(params, &name("ffn.linear2.weight")), Some(p(params, &name("ffn.linear2.bias"))), h1);
        h = if cfg.ffn_residual {
            y.iter()
                .zip(&x1)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect())
                .collect()
        } else {
            y
        };
    }

    // transposed convolution; the first K - 1 outputs are cropped
    let w = p(params, "output_conv.weight");
    let b = p(params, "output_conv.bias");
    let mut out = vec![vec![0.0; t]; n2];
    for (o, row) in out.iter_mut().enumerate() {
        for (ti, v) in row.iter_mut().enumerate() {
            let s_full = ti + kio - 1;
            let mut s = b[o];
            for k in 0..kio {
                if s_full >= k && s_full - k < t {
                    for c in 0..h1 {
                        s += w[(c * n2 + o) * kio + k] * h[s_full - k][c];
                    }
                }
            }
            *v = s;
        }
    }
    (out, all_maps)
}

/// Images of a source along one axis, generated by reflecting across the
/// walls at `0` and `len` alternately. Returns `(coordinate, reflections)`.
fn mirror_chain(source: f64, len: f64, max_order: usize) -> Vec<(f64, usize)> {
    let mut out = vec![(source, 0)];
    for first_wall_at_zero in [true, false] {
        let mut x = source;
        let mut at_zero = first_wall_at_zero;
        for order in 1..=max_order {
            x = if at_zero { -x } else { 2.0 * len - x };
            out.push((x, order));
            at_zero = !at_zero;
        }
    }
    out
}

fn kernel(x: f64, half_width: usize) -> f64 {
    let half = half_width as f64 + 1.0;
    if x.abs() >= half {
        return 0.0;
    }
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    sinc * 0.5 * (1.0 + (PI * x / half).cos())
}

/// Brute-force image-method response of speaker `n` at mic `m`: every
/// combination of per-axis mirror images with at most `max_order`
/// reflections on each axis, each rendered through a Hann-windowed sinc of
/// `half_width` taps either side.
pub fn brute_force_rir(
    scene: &SceneConfig,
    m: usize,
    n: usize,
    beta: f64,
    max_order: usize,
    n_taps: usize,
    half_width: usize,
) -> Vec<f64> {
    let mic = scene.mic_positions[m];
    let src = scene.speaker_positions[n];
    let axes: Vec<Vec<(f64, usize)>> = (0..3)
        .map(|i| mirror_chain(src[i], scene.room_dims[i], max_order))
        .collect();
    let fs = scene.sample_rate as f64;
    let mut out = vec![0.0; n_taps];
    for &(x, rx) in &axes[0] {
        for &(y, ry) in &axes[1] {
            for &(z, rz) in &axes[2] {
                let d = ((x - mic[0]).powi(2) + (y - mic[1]).powi(2) + (z - mic[2]).powi(2)).sqrt();
                let delay = d / scene.sound_speed * fs;
                let amp = beta.powi((rx + ry + rz) as i32) / (4.0 * PI * d);
                for (k, o) in out.iter_mut().enumerate() {
                    *o += amp * kernel(k as f64 - delay, half_width);
                }
            }
        }
    }
    out
}

/// Heap's algorithm: every permutation of `0..n`.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Exhaustive minimum of `sum_i losses[i][perm[i]]`.
pub fn exhaustive_pit(losses: &[Vec<f64>]) -> (Vec<usize>, f64) {
    all_permutations(losses.len())
        .into_iter()
        .map(|perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| losses[i][j]).sum();
            (perm, total)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)))
        .unwrap()
}

/// Plain SI-SDR straight from its definition, unclamped.
pub fn si_sdr_plain(y: &[f64], est: &[f64]) -> f64 {
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let alpha = y.iter().zip(est).map(|(a, b)| a * b).sum::<f64>() / yy;
    let num: f64 = y.iter().map(|v| (alpha * v).powi(2)).sum();
    let den: f64 = y.iter().zip(est).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    10.0 * (num / den).log10()
}
