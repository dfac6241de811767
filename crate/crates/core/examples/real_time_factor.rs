//! Time separation of a few seconds of audio at the default network size.
//!
//! ```text
//! cargo run --release --example real_time_factor -- [seconds] [mics]
//! ```

use std::time::Instant;

use nbc::model::{parameter_count, separate_wave, ModelConfig, Params, Precision};
use nbc::stft::StftConfig;
use nbc::WaveBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let secs: f64 = args.next().map_or(1.0, |s| s.parse().expect("seconds"));
    let mics = args.next().map_or(8, |s| s.parse().expect("mics"));
    let cfg = ModelConfig {
        n_mics: mics,
        ..ModelConfig::default()
    };
    let params = Params::init(&cfg, 0)?;
    let stft = StftConfig::default();
    let len = (secs * stft.sample_rate as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let channels = (0..mics).map(|_| (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
    let wave = WaveBuffer::new(stft.sample_rate, channels)?;

    for precision in [Precision::F32, Precision::F64] {
        let started = Instant::now();
        separate_wave(&wave, &cfg, &params, &stft, precision)?;
        let elapsed = started.elapsed().as_secs_f64();
        println!(
            "{precision:?}: {elapsed:.2} s for {secs:.1} s of {mics}-channel audio, RTF {:.2} ({} parameters, {} threads)",
            elapsed / secs,
            parameter_count(&cfg),
            rayon::current_num_threads()
        );
    }
    Ok(())
}
