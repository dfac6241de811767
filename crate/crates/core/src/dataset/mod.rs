//! Two-speaker reverberant mixtures and per-frequency magnitude normalisation.

mod store;
mod synth;

pub use store::{
    generate_dataset, generate_example, generate_examples, load_example, DatasetConfig, Manifest,
    ManifestEntry,
    SourcePool,
};
pub use synth::synth_speech;

use serde::{Deserialize, Serialize};

use crate::audio::WaveBuffer;
use crate::error::{Error, Result};
use crate::roomsim::{default_max_order, default_rir_len, simulate_rir, spatialize, Rir, SceneConfig};
use crate::stft::{frequency_sequence, stft, ComplexSpectrogram, FreqSequence, StftConfig};

/// Microphone whose spatial images are the training targets.
pub const REFERENCE_CHANNEL: usize = 0;

/// Floor on the per-frequency normaliser.
pub const NORM_EPS: f64 = 1e-8;

/// Accepted range of the overlap ratio.
pub const OVERLAP_RANGE: (f64, f64) = (0.1, 1.0);

/// Per-frequency magnitude scales, already floored at [`NORM_EPS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub scale: Vec<f64>,
}

/// Divide a `2M x T` sequence by the mean modulus of channel `r`.
///
/// Returns the normalised sequence and the floored scale.
pub fn normalize(seq: &FreqSequence, r: usize) -> Result<(FreqSequence, f64)> {
    if 2 * r + 1 >= seq.n_rows {
        return Err(Error::OutOfRange {
            what: "reference channel",
            index: r,
            limit: seq.n_rows / 2,
        });
    }
    if seq.n_frames == 0 {
        return Err(Error::shape("normalize", "sequence has no frames"));
    }
    let (re, im) = (seq.row(2 * r), seq.row(2 * r + 1));
    let mean = re.iter().zip(im).map(|(a, b)| a.hypot(*b)).sum::<f64>() / seq.n_frames as f64;
    let scale = mean.max(NORM_EPS);
    let data = seq.data.iter().map(|v| v / scale).collect();
    Ok((
        FreqSequence {
            n_rows: seq.n_rows,
            n_frames: seq.n_frames,
            data,
        },
        scale,
    ))
}

pub fn denormalize(pred: &FreqSequence, scale: f64) -> FreqSequence {
    FreqSequence {
        n_rows: pred.n_rows,
        n_frames: pred.n_frames,
        data: pred.data.iter().map(|v| v * scale).collect(),
    }
}

/// Normalised sequences for every frequency of a multichannel spectrogram.
pub fn normalize_spectrogram(
    spec: &ComplexSpectrogram,
    r: usize,
) -> Result<(Vec<FreqSequence>, NormState)> {
    let mut seqs = Vec::with_capacity(spec.n_freqs());
    let mut scale = Vec::with_capacity(spec.n_freqs());
    for f in 0..spec.n_freqs() {
        let (s, x) = normalize(&frequency_sequence(spec, f)?, r)?;
        seqs.push(s);
        scale.push(x);
    }
    Ok((seqs, NormState { scale }))
}

/// Where the two sources sit inside an utterance of `out_len` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    /// Samples occupied by each source.
    pub span: usize,
    /// First sample of the second source; the first starts at 0.
    pub onset2: usize,
    pub overlap: usize,
}

/// Tail-to-head placement: source 1 starts at 0, source 2 ends at `out_len`,
/// and the two share `overlap_ratio * out_len` samples.
pub fn placement(out_len: usize, overlap_ratio: f64) -> Result<Placement> {
    let (lo, hi) = OVERLAP_RANGE;
    if !(lo..=hi).contains(&overlap_ratio) {
        return Err(Error::Config(format!(
            "overlap ratio {overlap_ratio} outside [{lo}, {hi}]"
        )));
    }
    let span = ((out_len as f64 * (1.0 + overlap_ratio)) / 2.0).round() as usize;
    let span = span.min(out_len);
    Ok(Placement {
        span,
        onset2: out_len - span,
        overlap: 2 * span - out_len,
    })
}

/// Scale to unit peak; silent signals are returned unchanged.
pub fn peak_normalize(x: &[f64]) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter().map(|v| v / peak).collect()
    } else {
        x.to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct MixtureExample {
    /// All `M` channels.
    pub mixture: ComplexSpectrogram,
    /// One single-channel spectrogram per speaker at the reference channel.
    pub targets: Vec<ComplexSpectrogram>,
    pub mixture_wave: WaveBuffer,
    pub target_waves: Vec<Vec<f64>>,
    pub scene: SceneConfig,
    pub overlap_ratio: f64,
    pub stft: StftConfig,
}

impl MixtureExample {
    /// Build from the per-speaker spatial images (each `M` channels).
    pub fn from_images(
        images: &[WaveBuffer],
        scene: SceneConfig,
        overlap_ratio: f64,
        stft_cfg: &StftConfig,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Config("no speaker images".into()))?;
        let (m, len) = (first.n_channels(), first.len());
        let mut mix = vec![vec![0.0; len]; m];
        for img in images {
            if img.n_channels() != m || img.len() != len {
                return Err(Error::shape(
                    "from_images",
                    format!("image {}x{} vs {m}x{len}", img.n_channels(), img.len()),
                ));
            }
            for (acc, ch) in mix.iter_mut().zip(&img.channels) {
                for (a, v) in acc.iter_mut().zip(ch) {
                    *a += v;
                }
            }
        }
        let mixture_wave = WaveBuffer::new(first.sample_rate, mix)?;
        let target_waves: Vec<Vec<f64>> = images
            .iter()
            .map(|img| img.channel(REFERENCE_CHANNEL).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        Self::from_waves(mixture_wave, target_waves, scene, overlap_ratio, stft_cfg)
    }

    /// Build from an `M`-channel mixture and reference-channel targets.
    pub fn from_waves(
        mixture_wave: WaveBuffer,
        target_waves: Vec<Vec<f64>>,
        scene: SceneConfig,
        overlap_ratio: f64,
        stft_cfg: &StftConfig,
    ) -> Result<Self> {
        if mixture_wave.sample_rate != stft_cfg.sample_rate {
            return Err(Error::Config(format!(
                "audio at {} Hz, STFT at {} Hz",
                mixture_wave.sample_rate, stft_cfg.sample_rate
            )));
        }
        if let Some(w) = target_waves.iter().find(|w| w.len() != mixture_wave.len()) {
            return Err(Error::LengthMismatch(w.len(), mixture_wave.len()));
        }
        let mixture = stft(&mixture_wave, stft_cfg)?;
        let targets = target_waves
            .iter()
            .map(|w| stft(&WaveBuffer::mono(mixture_wave.sample_rate, w.clone()), stft_cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            mixture,
            targets,
            mixture_wave,
            target_waves,
            scene,
            overlap_ratio,
            stft: *stft_cfg,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.targets.len()
    }

    pub fn len(&self) -> usize {
        self.mixture_wave.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture_wave.is_empty()
    }

    pub fn normalized_inputs(&self) -> Result<(Vec<FreqSequence>, NormState)> {
        normalize_spectrogram(&self.mixture, REFERENCE_CHANNEL)
    }
}

/// Place the dry sources and convolve each with its own RIRs.
pub fn spatial_images(
    s1: &WaveBuffer,
    s2: &WaveBuffer,
    overlap_ratio: f64,
    rir: &Rir,
    out_len: usize,
) -> Result<Vec<WaveBuffer>> {
    let p = placement(out_len, overlap_ratio)?;
    if rir.n_speakers != 2 {
        return Err(Error::Config(format!(
            "pair mixing needs 2 speakers, RIR has {}",
            rir.n_speakers
        )));
    }
    let mut images = Vec::with_capacity(2);
    for (n, (src, onset)) in [(s1, 0), (s2, p.onset2)].into_iter().enumerate() {
        if src.n_channels() != 1 {
            return Err(Error::InvalidSignal(format!(
                "source {n} has {} channels",
                src.n_channels()
            )));
        }
        if src.sample_rate != rir.sample_rate {
            return Err(Error::Data(format!(
                "source {n} at {} Hz, scene at {} Hz",
                src.sample_rate, rir.sample_rate
            )));
        }
        if src.len() < p.span {
            return Err(Error::InputTooShort {
                needed: p.span,
                got: src.len(),
            });
        }
        let dry = peak_normalize(&src.channels[0][..p.span]);
        let mut placed = vec![0.0; out_len];
        placed[onset..onset + p.span].copy_from_slice(&dry);
        images.push(spatialize(&WaveBuffer::mono(src.sample_rate, placed), rir, n)?);
    }
    Ok(images)
}

/// Simulate the scene's RIRs and mix two dry sources.
pub fn mix_pair(
    s1: &WaveBuffer,
    s2: &WaveBuffer,
    overlap_ratio: f64,
    scene: &SceneConfig,
    out_len: usize,
    stft_cfg: &StftConfig,
) -> Result<MixtureExample> {
    if stft_cfg.sample_rate != scene.sample_rate {
        return Err(Error::Config(format!(
            "STFT at {} Hz, scene at {} Hz",
            stft_cfg.sample_rate, scene.sample_rate
        )));
    }
    let rir = simulate_rir(
        scene,
        default_max_order(scene),
        default_rir_len(scene.rt60, scene.sample_rate),
    )?;
    let images = spatial_images(s1, s2, overlap_ratio, &rir, out_len)?;
    MixtureExample::from_images(&images, scene.clone(), overlap_ratio, stft_cfg)
}

#[cfg(test)]
mod tests;
