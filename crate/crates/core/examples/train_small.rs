//! Train a small network on freshly simulated data, validating each epoch,
//! and write checkpoints plus a CSV log.
//!
//! ```text
//! cargo run --release --example train_small -- <out_dir> [epochs]
//! ```

use nbc::dataset::{generate_examples, DatasetConfig};
use nbc::model::{parameter_count, ModelConfig};
use nbc::roomsim::SceneSampler;
use nbc::stft::StftConfig;
use nbc::trainer::{train, TrainConfig};

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "run".into());
    let epochs = args.next().map_or(3, |s| s.parse().expect("epochs"));

    let data = |n, seed| DatasetConfig {
        n_examples: n,
        seed,
        duration_secs: 1.0,
        sampler: SceneSampler {
            n_mics: 2,
            sample_rate: 8000,
            ..SceneSampler::default()
        },
        ..DatasetConfig::default()
    };
    let stft = StftConfig::new(256, 128, 8000)?;
    let train_set = generate_examples(&data(8, 1), &stft)?;
    let val_set = generate_examples(&data(2, 2), &stft)?;

    let model = ModelConfig::probe();
    let tcfg = TrainConfig {
        utterances_per_batch: 2,
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    println!("{} parameters, {} training utterances", parameter_count(&model), train_set.len());
    let summary = train(&model, &tcfg, None, &train_set, &val_set, &out)?;
    for r in summary.log.iter().filter(|r| r.val_loss.is_some()) {
        println!(
            "epoch {:3}  step {:5}  train {:8.3}  val {:8.3}  lr {:.2e}",
            r.epoch,
            r.step,
            r.train_loss,
            r.val_loss.unwrap_or(f64::NAN),
            r.lr
        );
    }
    println!("best validation loss {:.3}; checkpoints in {out}", summary.best_val);
    Ok(())
}
