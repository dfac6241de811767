//! Score separations against a dataset's targets and write a metrics CSV.
//!
//! Without a checkpoint the reference-channel mixture is scored against
//! itself as a baseline, which gives an improvement of exactly 0 dB.
//!
//! ```text
//! cargo run --example evaluate_separation -- <dataset_dir> <metrics.csv> [checkpoint_dir]
//! ```

use std::time::Instant;

use nbc::dataset::{Manifest, REFERENCE_CHANNEL};
use nbc::model::{separate, Checkpoint, Precision};
use nbc::objective::{evaluate, evaluate_waves, write_metrics};
use nbc::stft::StftConfig;

fn main() -> nbc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [data, csv, rest @ ..] = args.as_slice() else {
        eprintln!("usage: evaluate_separation <dataset_dir> <metrics.csv> [checkpoint_dir]");
        std::process::exit(1);
    };
    let manifest = Manifest::load(data)?;
    let ckpt = rest.first().map(Checkpoint::load).transpose()?;
    let rate = manifest.config.sample_rate();
    let stft = ckpt.as_ref().and_then(|c| c.stft).unwrap_or(StftConfig::new(512, 256, rate)?);
    let examples = manifest.load_all(&stft)?;

    let mut records = Vec::new();
    for (entry, ex) in manifest.entries.iter().zip(&examples) {
        let record = match &ckpt {
            Some(c) => {
                let started = Instant::now();
                let sep = separate(&ex.mixture, &c.config, &c.params, Precision::F32)?;
                evaluate(&entry.id, ex, &sep, started.elapsed().as_secs_f64())?
            }
            None => {
                let mix = ex.mixture_wave.channel(REFERENCE_CHANNEL)?.to_vec();
                let est = vec![mix.clone(); ex.n_speakers()];
                evaluate_waves(&entry.id, &ex.target_waves, &mix, &est, 0.0)?
            }
        };
        println!(
            "{}: SI-SDR {:?} dB, improvement {:.2} dB",
            record.id,
            record.si_sdr.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            record.improvement
        );
        records.push(record);
    }
    write_metrics(csv, &records)?;
    println!("wrote {csv}");
    Ok(())
}
