use num_complex::Complex64;

use crate::autodiff::{Real, Tensor};
use crate::dataset::{denormalize, NormState};
use crate::error::{Error, Result};
use crate::stft::{ComplexSpectrogram, FreqSequence};

/// One full-band single-channel spectrogram per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSpectra {
    pub spectra: Vec<ComplexSpectrogram>,
}

impl SeparatedSpectra {
    pub fn n_speakers(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_finite(&self) -> bool {
        self.spectra.iter().all(ComplexSpectrogram::is_finite)
    }
}

/// Split a network output `[F, 2N, T]` into per-frequency sequences.
pub fn output_sequences<R: Real>(out: &Tensor<R>) -> Result<Vec<FreqSequence>> {
    let &[f, rows, t] = out.shape() else {
        return Err(Error::shape(
            "output_sequences",
            format!("expected [F, 2N, T], got {:?}", out.shape()),
        ));
    };
    Ok(out
        .data()
        .chunks_exact(rows * t)
        .take(f)
        .map(|c| FreqSequence {
            n_rows: rows,
            n_frames: t,
            data: c.iter().map(|v| v.as_f64()).collect(),
        })
        .collect())
}

/// Denormalise every frequency's `2N x T` output and regroup the rows into
/// one spectrogram per speaker: rows `2n` and `2n + 1` are the real and
/// imaginary parts of speaker `n`.
pub fn bind(
    outputs: &[FreqSequence],
    norm: &NormState,
    n_speakers: usize,
) -> Result<SeparatedSpectra> {
    let n_freqs = norm.scale.len();
    if outputs.len() < n_freqs {
        return Err(Error::MissingFrequency(outputs.len()));
    }
    if outputs.len() > n_freqs {
        return Err(Error::shape(
            "bind",
            format!("{} outputs for {n_freqs} frequencies", outputs.len()),
        ));
    }
    let n_frames = outputs.first().map_or(0, |s| s.n_frames);
    let mut spectra = vec![ComplexSpectrogram::zeros(n_freqs, n_frames, 1); n_speakers];
    for (f, (seq, &scale)) in outputs.iter().zip(&norm.scale).enumerate() {
        if seq.n_rows != 2 * n_speakers || seq.n_frames != n_frames {
            return Err(Error::shape(
                "bind",
                format!(
                    "frequency {f} is {}x{}, expected {}x{n_frames}",
                    seq.n_rows,
                    seq.n_frames,
                    2 * n_speakers
                ),
            ));
        }
        let y = denormalize(seq, scale);
        for (n, spec) in spectra.iter_mut().enumerate() {
            for t in 0..n_frames {
                spec.set(f, t, 0, Complex64::new(y.at(2 * n, t), y.at(2 * n + 1, t)));
            }
        }
    }
    Ok(SeparatedSpectra { spectra })
}
