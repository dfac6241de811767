//! Short-time Fourier transform, weighted overlap-add synthesis and the
//! per-frequency sequence layout fed to the separation network.
//!
//! Frames are taken without centre padding: frame `t` (0-based) covers
//! samples `[t * hop, t * hop + window_len)`, so a signal of `L` samples
//! yields `floor((L - window_len) / hop) + 1` frames.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::WaveBuffer;
use crate::error::{Error, Result};

/// Envelope values below this are treated as uncovered samples in synthesis.
const ENVELOPE_FLOOR: f64 = 1e-10;

/// Synthesis divides by at least this fraction of the smallest interior
/// envelope value, so the edge ramps are attenuated instead of blown up.
const EDGE_GAIN_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            hop: 256,
            sample_rate: 16000,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            window_len,
            hop,
            sample_rate,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || !self.window_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window_len must be positive and even, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn n_freqs(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_window(self.window_len),
        }
    }

    /// Sum of squared analysis windows at every output sample.
    pub fn wola_envelope(&self, n_frames: usize, out_len: usize) -> Vec<f64> {
        let w = self.analysis_window();
        let mut env = vec![0.0; out_len];
        for t in 0..n_frames {
            let start = t * self.hop;
            for (k, wk) in w.iter().enumerate() {
                if let Some(e) = env.get_mut(start + k) {
                    *e += wk * wk;
                }
            }
        }
        env
    }

    /// Per-sample normalisation applied after overlap-adding windowed frames.
    ///
    /// `1 / envelope` on the interior. In the edge ramps the divisor is
    /// floored at half the smallest interior envelope value: a consistent
    /// spectrogram is then only attenuated there, and an inconsistent one
    /// (a network estimate) is not amplified by the vanishing window tails.
    /// Zero where no frame covers the sample.
    pub fn inverse_envelope(&self, n_frames: usize, out_len: usize) -> Vec<f64> {
        let env = self.wola_envelope(n_frames, out_len);
        let inner = self.interior(n_frames);
        let floor = env
            .get(inner)
            .and_then(|e| e.iter().copied().reduce(f64::min))
            .or_else(|| env.iter().copied().reduce(f64::max))
            .map_or(0.0, |m| EDGE_GAIN_FLOOR * m);
        env.into_iter()
            .map(|e| if e > ENVELOPE_FLOOR { 1.0 / e.max(floor) } else { 0.0 })
            .collect()
    }

    /// Samples covered by at least two frames, where reconstruction is exact.
    pub fn interior(&self, n_frames: usize) -> std::ops::Range<usize> {
        if n_frames < 2 {
            return 0..0;
        }
        let end = (n_frames - 1) * self.hop + self.window_len;
        self.hop.min(end)..end.saturating_sub(self.hop)
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex STFT coefficients indexed `[f][t][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    n_freqs: usize,
    n_frames: usize,
    n_channels: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(n_freqs: usize, n_frames: usize, n_channels: usize) -> Self {
        Self {
            n_freqs,
            n_frames,
            n_channels,
            data: vec![Complex64::new(0.0, 0.0); n_freqs * n_frames * n_channels],
        }
    }

    pub fn from_vec(
        n_freqs: usize,
        n_frames: usize,
        n_channels: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != n_freqs * n_frames * n_channels {
            return Err(Error::shape(
                "spectrogram",
                format!(
                    "{} values for {}x{}x{}",
                    data.len(),
                    n_freqs,
                    n_frames,
                    n_channels
                ),
            ));
        }
        Ok(Self {
            n_freqs,
            n_frames,
            n_channels,
            data,
        })
    }

    pub fn n_freqs(&self) -> usize {
        self.n_freqs
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    fn idx(&self, f: usize, t: usize, m: usize) -> usize {
        (f * self.n_frames + t) * self.n_channels + m
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize, m: usize) -> Complex64 {
        self.data[self.idx(f, t, m)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, t: usize, m: usize, v: Complex64) {
        let i = self.idx(f, t, m);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// A single channel as its own spectrogram.
    pub fn select_channel(&self, m: usize) -> Result<Self> {
        if m >= self.n_channels {
            return Err(Error::OutOfRange {
                what: "channel",
                index: m,
                limit: self.n_channels,
            });
        }
        let data = self.data.iter().skip(m).step_by(self.n_channels).copied().collect();
        Ok(Self {
            n_freqs: self.n_freqs,
            n_frames: self.n_frames,
            n_channels: 1,
            data,
        })
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

pub fn stft(wave: &WaveBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let len = wave.len();
    if len < cfg.window_len {
        return Err(Error::InputTooShort {
            needed: cfg.window_len,
            got: len,
        });
    }
    if !wave.is_finite() {
        return Err(Error::InvalidSignal("non-finite samples".into()));
    }
    let n_freqs = cfg.n_freqs();
    let n_frames = cfg.n_frames(len);
    let n_ch = wave.n_channels();
    let window = cfg.analysis_window();
    let fft = FftPair::new(cfg.window_len);
    let mut spec = ComplexSpectrogram::zeros(n_freqs, n_frames, n_ch);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window_len];
    for (m, ch) in wave.channels.iter().enumerate() {
        for t in 0..n_frames {
            let frame = &ch[t * cfg.hop..t * cfg.hop + cfg.window_len];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
                *b = Complex64::new(x * w, 0.0);
            }
            fft.forward.process(&mut buf);
            for (f, &v) in buf.iter().take(n_freqs).enumerate() {
                spec.set(f, t, m, v);
            }
        }
    }
    Ok(spec)
}

/// Inverse STFT by weighted overlap-add.
///
/// The synthesis window is the analysis window divided by the summed
/// squared-window envelope; samples that no frame covers are zero.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<WaveBuffer> {
    cfg.validate()?;
    if spec.n_freqs() != cfg.n_freqs() {
        return Err(Error::shape(
            "istft",
            format!(
                "spectrogram has {} bins, config implies {}",
                spec.n_freqs(),
                cfg.n_freqs()
            ),
        ));
    }
    let n_frames = spec.n_frames();
    if cfg.n_frames(out_len) != n_frames {
        return Err(Error::shape(
            "istft",
            format!(
                "out_len {} implies {} frames, spectrogram has {}",
                out_len,
                cfg.n_frames(out_len),
                n_frames
            ),
        ));
    }
    let n = cfg.window_len;
    let window = cfg.analysis_window();
    let inv_env = cfg.inverse_envelope(n_frames, out_len);
    let fft = FftPair::new(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut channels = Vec::with_capacity(spec.n_channels());
    for m in 0..spec.n_channels() {
        let mut out = vec![0.0; out_len];
        for t in 0..n_frames {
            // Hermitian extension; imaginary parts of DC and Nyquist are dropped
            // so the frame is exactly real.
            for f in 0..=n / 2 {
                let mut v = spec.get(f, t, m);
                if f == 0 || f == n / 2 {
                    v.im = 0.0;
                }
                buf[f] = v;
                if f != 0 && f != n / 2 {
                    buf[n - f] = v.conj();
                }
            }
            fft.inverse.process(&mut buf);
            let start = t * cfg.hop;
            for k in 0..n {
                out[start + k] += buf[k].re / n as f64 * window[k];
            }
        }
        for (y, g) in out.iter_mut().zip(&inv_env) {
            *y *= g;
        }
        channels.push(out);
    }
    WaveBuffer::new(cfg.sample_rate, channels)
}

/// One frequency's multichannel sequence as a real `2M x T` matrix.
///
/// Row `2m` holds the real part of channel `m`, row `2m + 1` its imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqSequence {
    pub n_rows: usize,
    pub n_frames: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl FreqSequence {
    pub fn zeros(n_rows: usize, n_frames: usize) -> Self {
        Self {
            n_rows,
            n_frames,
            data: vec![0.0; n_rows * n_frames],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, t: usize) -> f64 {
        self.data[row * self.n_frames + t]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_frames..(row + 1) * self.n_frames]
    }
}

pub fn frequency_sequence(spec: &ComplexSpectrogram, f: usize) -> Result<FreqSequence> {
    if f >= spec.n_freqs() {
        return Err(Error::OutOfRange {
            what: "frequency",
            index: f,
            limit: spec.n_freqs(),
        });
    }
    let (n_frames, n_ch) = (spec.n_frames(), spec.n_channels());
    let mut seq = FreqSequence::zeros(2 * n_ch, n_frames);
    for m in 0..n_ch {
        for t in 0..n_frames {
            let v = spec.get(f, t, m);
            seq.data[2 * m * n_frames + t] = v.re;
            seq.data[(2 * m + 1) * n_frames + t] = v.im;
        }
    }
    Ok(seq)
}

/// Inverse of [`frequency_sequence`] over all bins.
pub fn assemble_sequences(seqs: &[FreqSequence]) -> Result<ComplexSpectrogram> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::shape("assemble_sequences", "no sequences"))?;
    if first.n_rows % 2 != 0 {
        return Err(Error::shape(
            "assemble_sequences",
            format!("odd row count {}", first.n_rows),
        ));
    }
    let (n_rows, n_frames) = (first.n_rows, first.n_frames);
    let n_ch = n_rows / 2;
    let mut spec = ComplexSpectrogram::zeros(seqs.len(), n_frames, n_ch);
    for (f, s) in seqs.iter().enumerate() {
        if s.n_rows != n_rows || s.n_frames != n_frames {
            return Err(Error::shape(
                "assemble_sequences",
                format!(
                    "bin {f} is {}x{}, expected {}x{}",
                    s.n_rows, s.n_frames, n_rows, n_frames
                ),
            ));
        }
        for m in 0..n_ch {
            for t in 0..n_frames {
                spec.set(f, t, m, Complex64::new(s.at(2 * m, t), s.at(2 * m + 1, t)));
            }
        }
    }
    Ok(spec)
}
