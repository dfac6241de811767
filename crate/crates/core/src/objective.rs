//! SI-SDR, full-band permutation-invariant training and evaluation metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::dataset::{MixtureExample, NormState, REFERENCE_CHANNEL};
use crate::error::{Error, Result};
use crate::model::SeparatedSpectra;
use crate::stft::{istft, ComplexSpectrogram, StftConfig};

/// SI-SDR values are clamped to `[-SI_SDR_CLAMP, SI_SDR_CLAMP]` dB.
pub const SI_SDR_CLAMP: f64 = 60.0;

/// Largest speaker count handled by exhaustive permutation search.
pub const MAX_PIT_SPEAKERS: usize = 6;

/// Scale-invariant SDR of estimate `est` against reference `reference`, in dB.
///
/// `alpha = est . reference / |reference|^2`; the result is
/// `10 log10(|alpha y|^2 / |alpha y - est|^2)` clamped to +-60 dB.
pub fn si_sdr(reference: &[f64], est: &[f64]) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::LengthMismatch(reference.len(), est.len()));
    }
    if reference.is_empty() {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let yy: f64 = reference.iter().map(|v| v * v).sum();
    if yy == 0.0 {
        return Err(Error::SilentReference);
    }
    let alpha = est.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / yy;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &e) in reference.iter().zip(est) {
        let s = alpha * y;
        num += s * s;
        den += (s - e) * (s - e);
    }
    let db = 10.0 * (num / den).log10();
    Ok(if db.is_nan() {
        -SI_SDR_CLAMP
    } else {
        db.clamp(-SI_SDR_CLAMP, SI_SDR_CLAMP)
    })
}

/// SI-SDR inside a graph; `reference` is a constant `[L]`, `est` a `[L]` var.
///
/// Numerator and denominator both get `1e-12 |reference|^2` added so a
/// perfect estimate stays finite; the clamp then pins it to +60 dB.
pub fn si_sdr_graph<R: Real>(g: &mut Graph<R>, reference: &[f64], est: Var) -> Result<Var> {
    if g.shape(est) != [reference.len()] {
        return Err(Error::shape(
            "si_sdr",
            format!("estimate {:?}, reference [{}]", g.shape(est), reference.len()),
        ));
    }
    let yy: f64 = reference.iter().map(|v| v * v).sum();
    if yy == 0.0 {
        return Err(Error::SilentReference);
    }
    let y = g.constant(Tensor::from_f64(&[reference.len()], reference)?);
    let dot = g.mul(est, y)?;
    let dot = g.sum(dot)?;
    let alpha = g.mul_scalar(dot, 1.0 / yy)?;
    let s = g.mul(y, alpha)?;
    let e = g.sub(s, est)?;
    let s2 = g.mul(s, s)?;
    let num = g.sum(s2)?;
    let e2 = g.mul(e, e)?;
    let den = g.sum(e2)?;
    let guard = 1e-12 * yy;
    let num = g.add_scalar(num, guard)?;
    let den = g.add_scalar(den, guard)?;
    let ratio = g.div(num, den)?;
    let db = g.log10(ratio)?;
    let db = g.mul_scalar(db, 10.0)?;
    g.clamp(db, -SI_SDR_CLAMP, SI_SDR_CLAMP)
}

/// Constant matrices for a differentiable inverse STFT.
pub struct IstftBasis {
    /// `[2F, W]`: rows `0..F` are `c_f cos(2 pi f n / W) / W`, rows `F..2F`
    /// are `-c_f sin(2 pi f n / W) / W`, with `c_f = 1` at DC and Nyquist
    /// and 2 elsewhere.
    pub basis: Tensor<f64>,
    pub window: Tensor<f64>,
    pub inv_envelope: Tensor<f64>,
    pub n_frames: usize,
    pub out_len: usize,
    pub hop: usize,
}

impl IstftBasis {
    pub fn new(cfg: &StftConfig, out_len: usize) -> Result<Self> {
        cfg.validate()?;
        let n_frames = cfg.n_frames(out_len);
        if n_frames == 0 {
            return Err(Error::InputTooShort {
                needed: cfg.window_len,
                got: out_len,
            });
        }
        let (w, f) = (cfg.window_len, cfg.n_freqs());
        let mut basis = vec![0.0; 2 * f * w];
        for k in 0..f {
            let c = if k == 0 || k == w / 2 { 1.0 } else { 2.0 } / w as f64;
            for n in 0..w {
                // reduce the phase index exactly before converting to an angle
                let ph = 2.0 * std::f64::consts::PI * ((k * n) % w) as f64 / w as f64;
                basis[k * w + n] = c * ph.cos();
                basis[(f + k) * w + n] = -c * ph.sin();
            }
        }
        Ok(Self {
            basis: Tensor::new(&[2 * f, w], basis)?,
            window: Tensor::new(&[w], cfg.analysis_window())?,
            inv_envelope: Tensor::new(&[out_len], cfg.inverse_envelope(n_frames, out_len))?,
            n_frames,
            out_len,
            hop: cfg.hop,
        })
    }
}

/// Time-domain estimates from a network output.
///
/// `out: [F, 2N, T]` holds normalised real/imaginary rows per speaker; each
/// frequency is multiplied by its normaliser, then inverse transformed.
/// Returns one `[L]` var per speaker.
pub fn graph_reconstruct<R: Real>(
    g: &mut Graph<R>,
    out: Var,
    norm: &NormState,
    basis: &IstftBasis,
) -> Result<Vec<Var>> {
    let &[f, rows, t] = g.shape(out) else {
        return Err(Error::shape("reconstruct", format!("output {:?}", g.shape(out))));
    };
    if f != norm.scale.len() || t != basis.n_frames || rows % 2 != 0 {
        return Err(Error::shape(
            "reconstruct",
            format!(
                "output [{f}, {rows}, {t}] for {} bins and {} frames",
                norm.scale.len(),
                basis.n_frames
            ),
        ));
    }
    let n = rows / 2;
    let scale = g.constant(Tensor::from_f64(&[f, 1, 1], &norm.scale)?);
    let y = g.mul(out, scale)?;
    // [F, N, 2, T] -> [N, T, 2, F] -> [N, T, 2F]
    let y = g.reshape(y, &[f, n, 2, t])?;
    let y = g.permute(y, &[1, 3, 2, 0])?;
    let y = g.reshape(y, &[n, t, 2 * f])?;
    let b = g.constant(basis.basis.cast());
    let frames = g.matmul(y, b)?;
    let win = g.constant(basis.window.cast());
    let frames = g.mul(frames, win)?;
    let inv = g.constant(basis.inv_envelope.cast());
    let w = basis.window.numel();
    let mut waves = Vec::with_capacity(n);
    for k in 0..n {
        let fr = g.narrow(frames, 0, k, 1)?;
        let fr = g.reshape(fr, &[t, w])?;
        let x = g.overlap_add(fr, basis.hop, basis.out_len)?;
        waves.push(g.mul(x, inv)?);
    }
    Ok(waves)
}

/// The chosen label permutation: target `n` is matched with prediction
/// `perm[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationAssignment {
    pub perm: Vec<usize>,
    pub loss: f64,
}

/// Advance to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Minimum over all permutations of `sum_n losses[n][perm[n]]`.
///
/// Permutations are visited lexicographically and only a strictly smaller
/// total replaces the incumbent, so ties go to the smallest permutation.
pub fn best_permutation(losses: &[Vec<f64>]) -> Result<PermutationAssignment> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::Config("no speakers".into()));
    }
    if n > MAX_PIT_SPEAKERS {
        return Err(Error::PitLimit(n));
    }
    if let Some(row) = losses.iter().find(|r| r.len() != n) {
        return Err(Error::shape("fpit", format!("loss row of {} for {n} speakers", row.len())));
    }
    let mut p: Vec<usize> = (0..n).collect();
    let mut best = PermutationAssignment {
        perm: p.clone(),
        loss: f64::INFINITY,
    };
    loop {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| losses[i][j]).sum();
        if total < best.loss {
            best = PermutationAssignment {
                perm: p.clone(),
                loss: total,
            };
        }
        if !next_permutation(&mut p) {
            break;
        }
    }
    if !best.loss.is_finite() {
        return Err(Error::NonFinite("fpit loss".into()));
    }
    Ok(best)
}

/// Full-band PIT on spectra: inverse transform every estimate and target,
/// score each pair with `-SI-SDR`, and pick the best global permutation.
pub fn fpit(
    estimates: &SeparatedSpectra,
    targets: &[ComplexSpectrogram],
    stft_cfg: &StftConfig,
    out_len: usize,
) -> Result<PermutationAssignment> {
    let n = targets.len();
    if n > MAX_PIT_SPEAKERS {
        return Err(Error::PitLimit(n));
    }
    if estimates.n_speakers() != n {
        return Err(Error::shape(
            "fpit",
            format!("{} estimates for {n} targets", estimates.n_speakers()),
        ));
    }
    let wave = |s: &ComplexSpectrogram| -> Result<Vec<f64>> {
        Ok(istft(s, stft_cfg, out_len)?.channels.remove(0))
    };
    let est: Vec<Vec<f64>> = estimates.spectra.iter().map(wave).collect::<Result<_>>()?;
    let tgt: Vec<Vec<f64>> = targets.iter().map(wave).collect::<Result<_>>()?;
    let losses = pair_losses(&tgt, &est)?;
    best_permutation(&losses)
}

/// `losses[n][k] = -SI-SDR(target n, estimate k)`.
pub fn pair_losses(targets: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    targets
        .iter()
        .map(|y| estimates.iter().map(|e| Ok(-si_sdr(y, e)?)).collect())
        .collect()
}

/// fPIT loss in a graph: builds every pair loss, selects the permutation by
/// value and returns the differentiable sum along it.
pub fn fpit_graph<R: Real>(
    g: &mut Graph<R>,
    estimates: &[Var],
    targets: &[Vec<f64>],
) -> Result<(Var, PermutationAssignment)> {
    let n = targets.len();
    if n > MAX_PIT_SPEAKERS {
        return Err(Error::PitLimit(n));
    }
    if estimates.len() != n {
        return Err(Error::shape(
            "fpit",
            format!("{} estimates for {n} targets", estimates.len()),
        ));
    }
    let mut vars = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for y in targets {
        let mut row_v = Vec::with_capacity(n);
        let mut row_x = Vec::with_capacity(n);
        for &e in estimates {
            let s = si_sdr_graph(g, y, e)?;
            let l = g.neg(s)?;
            row_x.push(g.value(l).item().as_f64());
            row_v.push(l);
        }
        vars.push(row_v);
        values.push(row_x);
    }
    let best = best_permutation(&values)?;
    let mut total = vars[0][best.perm[0]];
    for (i, &j) in best.perm.iter().enumerate().skip(1) {
        total = g.add(total, vars[i][j])?;
    }
    Ok((total, best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: String,
    /// SI-SDR of each target against its assigned estimate.
    pub si_sdr: Vec<f64>,
    pub mean: f64,
    /// Mean gain over using the reference-channel mixture as every estimate.
    pub improvement: f64,
    pub rtf: f64,
}

/// Score time-domain estimates under the best permutation.
pub fn evaluate_waves(
    id: &str,
    targets: &[Vec<f64>],
    mixture_ref: &[f64],
    estimates: &[Vec<f64>],
    rtf: f64,
) -> Result<MetricRecord> {
    let losses = pair_losses(targets, estimates)?;
    let best = best_permutation(&losses)?;
    let n = targets.len() as f64;
    let si: Vec<f64> = best
        .perm
        .iter()
        .enumerate()
        .map(|(i, &j)| -losses[i][j])
        .collect();
    let mean = si.iter().sum::<f64>() / n;
    let baseline = targets
        .iter()
        .map(|y| si_sdr(y, mixture_ref))
        .collect::<Result<Vec<_>>>()?;
    let improvement = si.iter().zip(&baseline).map(|(a, b)| a - b).sum::<f64>() / n;
    Ok(MetricRecord {
        id: id.to_string(),
        si_sdr: si,
        mean,
        improvement,
        rtf,
    })
}

/// Score separated spectra against an example.
///
/// `elapsed_secs` is the processing wall time; RTF divides it by the audio
/// duration.
pub fn evaluate(
    id: &str,
    example: &MixtureExample,
    separated: &SeparatedSpectra,
    elapsed_secs: f64,
) -> Result<MetricRecord> {
    let len = example.len();
    let est: Vec<Vec<f64>> = separated
        .spectra
        .iter()
        .map(|s| Ok(istft(s, &example.stft, len)?.channels.remove(0)))
        .collect::<Result<_>>()?;
    let rtf = elapsed_secs / example.mixture_wave.duration_secs();
    evaluate_waves(
        id,
        &example.target_waves,
        example.mixture_wave.channel(REFERENCE_CHANNEL)?,
        &est,
        rtf,
    )
}

/// Write records as CSV: `id, si_sdr_1..si_sdr_N, mean, improvement, rtf`.
pub fn write_metrics(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let n = records.iter().map(|r| r.si_sdr.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=n).map(|i| format!("si_sdr_{i}")));
    header.extend(["mean", "improvement", "rtf"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend((0..n).map(|i| r.si_sdr.get(i).map_or(String::new(), |v| format!("{v:.6}"))));
        row.push(format!("{:.6}", r.mean));
        row.push(format!("{:.6}", r.improvement));
        row.push(format!("{:.6}", r.rtf));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read records written by [`write_metrics`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with("si_sdr_")).count();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad number {s:?} in metrics")))
    };
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let si = (1..=n)
                .filter_map(|i| rec.get(i).filter(|s| !s.is_empty()).map(num))
                .collect::<Result<_>>()?;
            Ok(MetricRecord {
                id: rec[0].to_string(),
                si_sdr: si,
                mean: num(&rec[n + 1])?,
                improvement: num(&rec[n + 2])?,
                rtf: num(&rec[n + 3])?,
            })
        })
        .collect()
}
