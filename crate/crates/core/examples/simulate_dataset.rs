//! Write a small two-speaker dataset to disk and read it back.
//!
//! ```text
//! cargo run --example simulate_dataset -- <out_dir> [n] [mics]
//! ```

use nbc::dataset::{generate_dataset, DatasetConfig, Manifest};
use nbc::roomsim::SceneSampler;
use nbc::stft::StftConfig;

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "dataset".into());
    let n = args.next().map_or(4, |s| s.parse().expect("n"));
    let mics = args.next().map_or(2, |s| s.parse().expect("mics"));
    let cfg = DatasetConfig {
        n_examples: n,
        duration_secs: 2.0,
        sampler: SceneSampler {
            n_mics: mics,
            sample_rate: 8000,
            ..SceneSampler::default()
        },
        ..DatasetConfig::default()
    };
    generate_dataset(&out, &cfg)?;

    let manifest = Manifest::load(&out)?;
    let examples = manifest.load_all(&StftConfig::new(256, 128, 8000)?)?;
    for (entry, ex) in manifest.entries.iter().zip(&examples) {
        println!(
            "{}: RT60 {:.2} s, overlap {:.2}, {} x {} x {} spectrogram",
            entry.id,
            ex.scene.rt60,
            ex.overlap_ratio,
            ex.mixture.n_freqs(),
            ex.mixture.n_frames(),
            ex.mixture.n_channels()
        );
    }
    Ok(())
}
