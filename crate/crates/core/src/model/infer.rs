use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bind, forward, output_sequences, ModelConfig, ModelVars, Params, SeparatedSpectra};
use crate::audio::WaveBuffer;
use crate::autodiff::{Graph, Real, Tensor};
use crate::dataset::{normalize_spectrogram, REFERENCE_CHANNEL};
use crate::error::{Error, Result};
use crate::stft::{istft, stft, ComplexSpectrogram, FreqSequence, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Stack equally shaped sequences into `[B, rows, T]`.
pub fn stack_sequences(seqs: &[FreqSequence]) -> Result<Tensor<f64>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::shape("stack_sequences", "no sequences"))?;
    let mut data = Vec::with_capacity(seqs.len() * first.data.len());
    for s in seqs {
        if s.n_rows != first.n_rows || s.n_frames != first.n_frames {
            return Err(Error::shape(
                "stack_sequences",
                format!(
                    "{}x{} vs {}x{}",
                    s.n_rows, s.n_frames, first.n_rows, first.n_frames
                ),
            ));
        }
        data.extend_from_slice(&s.data);
    }
    Tensor::new(&[seqs.len(), first.n_rows, first.n_frames], data)
}

/// Frequencies per graph so the attention tensors stay around 32 MB.
pub(crate) fn chunk_size(cfg: &ModelConfig, n_frames: usize, n_freqs: usize) -> usize {
    let per_freq = cfg.heads * n_frames * (2 * n_frames).max(cfg.h2 / cfg.heads.max(1));
    ((1usize << 22) / per_freq.max(1)).clamp(1, n_freqs.max(1))
}

/// Eval-mode outputs and per-block attention for a batch of sequences.
pub(crate) fn eval_chunk<R: Real>(
    seqs: &[FreqSequence],
    cfg: &ModelConfig,
    params: &Params,
    with_attention: bool,
) -> Result<(Tensor<R>, Vec<Tensor<R>>)> {
    let mut g = Graph::<R>::new().checked(true);
    let vars = ModelVars::attach(&mut g, cfg, params, false)?;
    let x = g.constant(stack_sequences(seqs)?.cast());
    let out = forward(&mut g, cfg, &vars, x)?;
    let attn = if with_attention {
        out.attention.iter().map(|&a| g.value(a).clone()).collect()
    } else {
        Vec::new()
    };
    Ok((g.value(out.output).clone(), attn))
}

fn outputs_in<R: Real>(
    seqs: &[FreqSequence],
    cfg: &ModelConfig,
    params: &Params,
) -> Result<Vec<FreqSequence>> {
    let t = seqs.first().map_or(1, |s| s.n_frames);
    let chunk = chunk_size(cfg, t, seqs.len());
    let parts: Vec<Vec<FreqSequence>> = seqs
        .par_chunks(chunk)
        .map(|c| output_sequences(&eval_chunk::<R>(c, cfg, params, false)?.0))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Network outputs for every normalised frequency sequence.
pub fn network_outputs(
    seqs: &[FreqSequence],
    cfg: &ModelConfig,
    params: &Params,
    precision: Precision,
) -> Result<Vec<FreqSequence>> {
    match precision {
        Precision::F32 => outputs_in::<f32>(seqs, cfg, params),
        Precision::F64 => outputs_in::<f64>(seqs, cfg, params),
    }
}

/// Separate a multichannel mixture spectrogram.
pub fn separate(
    mixture: &ComplexSpectrogram,
    cfg: &ModelConfig,
    params: &Params,
    precision: Precision,
) -> Result<SeparatedSpectra> {
    if mixture.n_channels() != cfg.n_mics {
        return Err(Error::Config(format!(
            "mixture has {} channels, model expects {}",
            mixture.n_channels(),
            cfg.n_mics
        )));
    }
    let (seqs, norm) = normalize_spectrogram(mixture, REFERENCE_CHANNEL)?;
    let outs = network_outputs(&seqs, cfg, params, precision)?;
    bind(&outs, &norm, cfg.n_speakers)
}

/// Separate a multichannel waveform into one waveform per speaker, each the
/// mixture's length.
pub fn separate_wave(
    mixture: &WaveBuffer,
    cfg: &ModelConfig,
    params: &Params,
    stft_cfg: &StftConfig,
    precision: Precision,
) -> Result<Vec<Vec<f64>>> {
    let spec = stft(mixture, stft_cfg)?;
    let sep = separate(&spec, cfg, params, precision)?;
    sep.spectra
        .iter()
        .map(|s| Ok(istft(s, stft_cfg, mixture.len())?.channels.remove(0)))
        .collect()
}
