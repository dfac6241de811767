//! Dataset generation and the on-disk layout.
//!
//! ```text
//! root/
//!   dataset.json          generation config
//!   manifest.tsv          one line per example
//!   ex_00000/
//!     mixture.wav         M channels
//!     target_0.wav        reference-channel image of speaker 0
//!     target_1.wav
//!     scene.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{spatial_images, synth_speech, MixtureExample, REFERENCE_CHANNEL};
use crate::audio::WaveBuffer;
use crate::error::{Error, Result};
use crate::roomsim::{
    default_max_order, default_rir_len, sample_scene, simulate_rir, SceneConfig, SceneSampler,
};
use crate::stft::StftConfig;

/// Where dry utterances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePool {
    /// [`synth_speech`] voices drawn from the example's RNG stream.
    Synthetic,
    /// Every mono `.wav` file under a directory, at the dataset rate.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_examples: usize,
    pub seed: u64,
    pub duration_secs: f64,
    pub overlap_range: (f64, f64),
    pub sampler: SceneSampler,
    pub sources: SourcePool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_examples: 4,
            seed: 0,
            duration_secs: 4.0,
            overlap_range: super::OVERLAP_RANGE,
            sampler: SceneSampler::default(),
            sources: SourcePool::Synthetic,
        }
    }
}

impl DatasetConfig {
    pub fn sample_rate(&self) -> u32 {
        self.sampler.sample_rate
    }

    pub fn out_len(&self) -> usize {
        (self.duration_secs * self.sample_rate() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.overlap_range;
        let (min, max) = super::OVERLAP_RANGE;
        if !(min <= lo && lo <= hi && hi <= max) {
            return Err(Error::Config(format!(
                "overlap range ({lo}, {hi}) outside [{min}, {max}]"
            )));
        }
        if self.sampler.n_speakers != 2 {
            return Err(Error::Config("mixtures are built from two speakers".into()));
        }
        if self.out_len() == 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source_1: String,
    pub source_2: String,
    pub seed: u64,
    pub overlap_ratio: f64,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let cfg_path = root.join("dataset.json");
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = serde_json::from_str(&text)?;
        let man_path = root.join("manifest.tsv");
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(&man_path)?;
        let entries = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            root,
            config,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_all(&self, stft_cfg: &StftConfig) -> Result<Vec<MixtureExample>> {
        self.entries
            .par_iter()
            .map(|e| load_example(&self.root, e, stft_cfg))
            .collect()
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            {
                out.push(path);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no .wav files under {}", dir.display())));
    }
    Ok(out)
}

fn draw_source(
    rng: &mut ChaCha8Rng,
    files: Option<&[PathBuf]>,
    min_len: usize,
    sample_rate: u32,
) -> Result<(WaveBuffer, String)> {
    let Some(files) = files else {
        let stream: u64 = rng.random();
        let mut voice = ChaCha8Rng::seed_from_u64(stream);
        let x = synth_speech(&mut voice, min_len, sample_rate);
        return Ok((WaveBuffer::mono(sample_rate, x), format!("synthetic:{stream:016x}")));
    };
    // start at a random file and take the first long enough one
    let start = rng.random_range(0..files.len());
    for k in 0..files.len() {
        let path = &files[(start + k) % files.len()];
        let w = WaveBuffer::read_wav(path, Some(sample_rate))?;
        if w.n_channels() != 1 {
            return Err(Error::Data(format!("{} is not mono", path.display())));
        }
        if w.len() >= min_len {
            return Ok((w, path.display().to_string()));
        }
    }
    Err(Error::InputTooShort {
        needed: min_len,
        got: 0,
    })
}

/// Draw example `index` of a dataset; the result depends only on
/// `(cfg.seed, index)` and the source files.
pub fn generate_example(
    cfg: &DatasetConfig,
    index: usize,
    files: Option<&[PathBuf]>,
) -> Result<(Vec<WaveBuffer>, SceneConfig, ManifestEntry)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let scene = sample_scene(&mut rng, &cfg.sampler)?;
    let (lo, hi) = cfg.overlap_range;
    let ratio = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let out_len = cfg.out_len();
    let span = super::placement(out_len, ratio)?.span;
    let (s1, name1) = draw_source(&mut rng, files, span, cfg.sample_rate())?;
    let (s2, name2) = draw_source(&mut rng, files, span, cfg.sample_rate())?;
    let rir = simulate_rir(
        &scene,
        default_max_order(&scene),
        default_rir_len(scene.rt60, scene.sample_rate),
    )?;
    let images = spatial_images(&s1, &s2, ratio, &rir, out_len)?;
    let id = format!("ex_{index:05}");
    let entry = ManifestEntry {
        scene: format!("{id}/scene.json"),
        id,
        source_1: name1,
        source_2: name2,
        seed: cfg.seed,
        overlap_ratio: ratio,
    };
    Ok((images, scene, entry))
}

fn write_example(
    root: &Path,
    entry: &ManifestEntry,
    images: &[WaveBuffer],
    scene: &SceneConfig,
) -> Result<()> {
    let dir = root.join(&entry.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rate = images[0].sample_rate;
    let len = images[0].len();
    let m = images[0].n_channels();
    let mut mix = vec![vec![0.0; len]; m];
    for img in images {
        for (acc, ch) in mix.iter_mut().zip(&img.channels) {
            for (a, v) in acc.iter_mut().zip(ch) {
                *a += v;
            }
        }
    }
    WaveBuffer::new(rate, mix)?.write_wav(dir.join("mixture.wav"))?;
    for (n, img) in images.iter().enumerate() {
        let target = img.channel(REFERENCE_CHANNEL)?.to_vec();
        WaveBuffer::mono(rate, target).write_wav(dir.join(format!("target_{n}.wav")))?;
    }
    let path = root.join(&entry.scene);
    fs::write(&path, scene.to_json()?).map_err(|e| Error::io(&path, e))
}

/// Generate every example of `cfg` in memory, without touching disk.
pub fn generate_examples(cfg: &DatasetConfig, stft_cfg: &StftConfig) -> Result<Vec<MixtureExample>> {
    cfg.validate()?;
    let files = match &cfg.sources {
        SourcePool::Synthetic => None,
        SourcePool::Directory(d) => Some(wav_files(d)?),
    };
    (0..cfg.n_examples)
        .into_par_iter()
        .map(|i| {
            let (images, scene, entry) = generate_example(cfg, i, files.as_deref())?;
            MixtureExample::from_images(&images, scene, entry.overlap_ratio, stft_cfg)
        })
        .collect()
}

/// Generate and write a full dataset under `root`.
pub fn generate_dataset(root: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<Manifest> {
    cfg.validate()?;
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let files = match &cfg.sources {
        SourcePool::Synthetic => None,
        SourcePool::Directory(d) => Some(wav_files(d)?),
    };
    let entries: Vec<ManifestEntry> = (0..cfg.n_examples)
        .into_par_iter()
        .map(|i| {
            let (images, scene, entry) = generate_example(cfg, i, files.as_deref())?;
            write_example(root, &entry, &images, &scene)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;

    let cfg_path = root.join("dataset.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(root.join("manifest.tsv"))?;
    for e in &entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(root.join("manifest.tsv"), e))?;
    Ok(Manifest {
        root: root.to_path_buf(),
        config: cfg.clone(),
        entries,
    })
}

/// Read one stored example back and compute its spectrograms.
pub fn load_example(
    root: impl AsRef<Path>,
    entry: &ManifestEntry,
    stft_cfg: &StftConfig,
) -> Result<MixtureExample> {
    let root = root.as_ref();
    let dir = root.join(&entry.id);
    let mixture = WaveBuffer::read_wav(dir.join("mixture.wav"), Some(stft_cfg.sample_rate))?;
    let mut targets = Vec::new();
    for n in 0.. {
        let path = dir.join(format!("target_{n}.wav"));
        if !path.exists() {
            break;
        }
        let t = WaveBuffer::read_wav(&path, Some(stft_cfg.sample_rate))?;
        targets.push(t.channels.into_iter().next().unwrap_or_default());
    }
    if targets.is_empty() {
        return Err(Error::Data(format!("{}: no target files", dir.display())));
    }
    let scene_path = root.join(&entry.scene);
    let text = fs::read_to_string(&scene_path).map_err(|e| Error::io(&scene_path, e))?;
    let scene = SceneConfig::from_json(&text)?;
    MixtureExample::from_waves(mixture, targets, scene, entry.overlap_ratio, stft_cfg)
}
