use std::fs;
use std::io::Write;
use std::path::Path;

use super::infer::{chunk_size, eval_chunk};
use super::{ModelConfig, Params};
use crate::dataset::MixtureExample;
use crate::error::{Error, Result};

/// Attention weights averaged over frequency, laid out
/// `[blocks, heads, T (query), T (key)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub n_blocks: usize,
    pub heads: usize,
    pub n_frames: usize,
    pub data: Vec<f64>,
}

impl AttentionMaps {
    pub fn shape(&self) -> [usize; 4] {
        [self.n_blocks, self.heads, self.n_frames, self.n_frames]
    }

    pub fn map(&self, block: usize, head: usize) -> &[f64] {
        let tt = self.n_frames * self.n_frames;
        &self.data[(block * self.heads + head) * tt..][..tt]
    }

    /// One CSV per map, `block{i}_head{h}.csv`, one query row per line.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for i in 0..self.n_blocks {
            for h in 0..self.heads {
                let path = dir.join(format!("block{i}_head{h}.csv"));
                let mut w = csv::Writer::from_path(&path)?;
                for row in self.map(i, h).chunks(self.n_frames) {
                    w.write_record(row.iter().map(|v| format!("{v:.9e}")))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    /// One binary 8-bit PGM per map, scaled so each map's maximum is white.
    pub fn write_pgm(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t = self.n_frames;
        for i in 0..self.n_blocks {
            for h in 0..self.heads {
                let m = self.map(i, h);
                let max = m.iter().fold(0.0f64, |a, &b| a.max(b));
                let mut bytes = format!("P5\n{t} {t}\n255\n").into_bytes();
                bytes.extend(m.iter().map(|&v| {
                    if max > 0.0 {
                        (v / max * 255.0).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                }));
                let path = dir.join(format!("block{i}_head{h}.pgm"));
                let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Run the network over every frequency of `example` and average each
/// block/head softmax matrix over frequency.
pub fn attention_maps(
    example: &MixtureExample,
    cfg: &ModelConfig,
    params: &Params,
) -> Result<AttentionMaps> {
    let (seqs, _) = example.normalized_inputs()?;
    let n_freqs = seqs.len();
    let t = example.mixture.n_frames();
    let tt = t * t;
    let mut sum = vec![0.0; cfg.l1 * cfg.heads * tt];
    for chunk in seqs.chunks(chunk_size(cfg, t, n_freqs)) {
        let (_, attn) = eval_chunk::<f64>(chunk, cfg, params, true)?;
        for (i, a) in attn.iter().enumerate() {
            // a: [B, heads, T, T]
            for per_freq in a.data().chunks_exact(cfg.heads * tt) {
                let dst = &mut sum[i * cfg.heads * tt..][..cfg.heads * tt];
                for (d, v) in dst.iter_mut().zip(per_freq) {
                    *d += v;
                }
            }
        }
    }
    let inv = 1.0 / n_freqs as f64;
    Ok(AttentionMaps {
        n_blocks: cfg.l1,
        heads: cfg.heads,
        n_frames: t,
        data: sum.into_iter().map(|v| v * inv).collect(),
    })
}
