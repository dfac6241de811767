//! Multichannel time-domain audio and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Multichannel audio, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl WaveBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidSignal("no channels".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().find(|c| c.len() != len) {
            return Err(Error::LengthMismatch(len, bad.len()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn zeros(sample_rate: u32, n_channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; n_channels],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, m: usize) -> Result<&[f64]> {
        self.channels
            .get(m)
            .map(Vec::as_slice)
            .ok_or(Error::OutOfRange {
                what: "channel",
                index: m,
                limit: self.channels.len(),
            })
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().flatten().all(|x| x.is_finite())
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Read a 16-bit PCM or 32-bit float WAV file.
    ///
    /// When `expected_rate` is given, a file at any other rate is rejected.
    pub fn read_wav(path: impl AsRef<Path>, expected_rate: Option<u32>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = WavReader::open(path)?;
        let spec = reader.spec();
        if let Some(rate) = expected_rate {
            if spec.sample_rate != rate {
                return Err(Error::Data(format!(
                    "{}: sample rate {} Hz, expected {} Hz",
                    path.display(),
                    spec.sample_rate,
                    rate
                )));
            }
        }
        let n_ch = spec.channels as usize;
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::Data(format!(
                    "{}: unsupported sample format {:?}/{} bits",
                    path.display(),
                    fmt,
                    bits
                )))
            }
        };
        let len = interleaved.len() / n_ch;
        let mut channels = vec![Vec::with_capacity(len); n_ch];
        for frame in interleaved.chunks_exact(n_ch) {
            for (c, &v) in channels.iter_mut().zip(frame) {
                c.push(v);
            }
        }
        Self::new(spec.sample_rate, channels)
    }

    /// Write as 32-bit float WAV. Values above full scale are kept as is.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = WavSpec {
            channels: self.n_channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(path.as_ref(), spec)?;
        for i in 0..self.len() {
            for c in &self.channels {
                writer.write_sample(c[i] as f32)?;
            }
        }
        writer.finalize()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_float() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = WaveBuffer::new(16000, vec![vec![0.5, -0.25, 1.5], vec![0.0, 0.125, -2.0]]).unwrap();
        w.write_wav(&path).unwrap();
        let r = WaveBuffer::read_wav(&path, Some(16000)).unwrap();
        assert_eq!(r, w);
    }

    #[test]
    fn rejects_mismatched_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        WaveBuffer::mono(8000, vec![0.0; 10]).write_wav(&path).unwrap();
        assert!(matches!(
            WaveBuffer::read_wav(&path, Some(16000)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn reads_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for s in [0i16, 16384, -32768] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let r = WaveBuffer::read_wav(&path, None).unwrap();
        assert_eq!(r.channels[0], vec![0.0, 0.5, -1.0]);
    }

    #[test]
    fn ragged_channels_rejected() {
        assert!(WaveBuffer::new(16000, vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
    }
}
