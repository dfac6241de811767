//! Checkpoint directory:
//!
//! ```text
//! manifest.json     config, step, tensor names/shapes/files, optimizer scalars
//! params/<name>.bin little-endian f32, row-major
//! adam_m/<name>.bin
//! adam_v/<name>.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::stft::StftConfig;
use crate::trainer::AdamState;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub optimizer: Option<AdamState>,
    pub step: u64,
    /// Transform the network was trained with, if recorded.
    pub stft: Option<StftConfig>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<TensorEntry>,
    v: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    dtype: String,
    step: u64,
    config: ModelConfig,
    parameter_count: usize,
    #[serde(default)]
    stft: Option<StftConfig>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

fn write_group(root: &Path, sub: &str, params: &Params) -> Result<Vec<TensorEntry>> {
    let dir = root.join(sub);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    params
        .iter()
        .map(|(name, t)| {
            let file = format!("{sub}/{name}.bin");
            let bytes: Vec<u8> = t
                .data()
                .iter()
                .flat_map(|&v| (v as f32).to_le_bytes())
                .collect();
            let path = root.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                file,
            })
        })
        .collect()
}

fn read_group(root: &Path, entries: &[TensorEntry], cfg: &ModelConfig) -> Result<Params> {
    let tensors = entries
        .iter()
        .map(|e| {
            let path = root.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let n: usize = e.shape.iter().product();
            if bytes.len() != 4 * n {
                return Err(Error::Data(format!(
                    "{}: {} bytes for shape {:?}",
                    path.display(),
                    bytes.len(),
                    e.shape
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Ok((e.name.clone(), Tensor::new(&e.shape, data)?))
        })
        .collect::<Result<_>>()?;
    Params::from_entries(tensors)?.canonical(cfg)
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Params) -> Result<Self> {
        params.check(&config)?;
        Ok(Self {
            config,
            params,
            optimizer: None,
            step: 0,
            stft: None,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.params.check(&self.config)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = write_group(dir, "params", &self.params)?;
        let optimizer = match &self.optimizer {
            Some(s) => Some(OptimizerEntry {
                t: s.t,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
                m: write_group(dir, "adam_m", &s.m)?,
                v: write_group(dir, "adam_v", &s.v)?,
            }),
            None => None,
        };
        let manifest = ManifestFile {
            dtype: "f32".into(),
            step: self.step,
            config: self.config.clone(),
            parameter_count: self.params.count(),
            stft: self.stft,
            tensors,
            optimizer,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir: PathBuf = dir.as_ref().to_path_buf();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let man: ManifestFile = serde_json::from_str(&text)?;
        if man.dtype != "f32" {
            return Err(Error::Data(format!("unsupported dtype {}", man.dtype)));
        }
        man.config.validate()?;
        let params = read_group(&dir, &man.tensors, &man.config)?;
        let optimizer = match man.optimizer {
            Some(o) => Some(AdamState {
                m: read_group(&dir, &o.m, &man.config)?,
                v: read_group(&dir, &o.v, &man.config)?,
                t: o.t,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            }),
            None => None,
        };
        Ok(Self {
            config: man.config,
            params,
            optimizer,
            step: man.step,
            stft: man.stft,
        })
    }
}
