//! Analyse a noise burst, resynthesise it and report the interior error.
//!
//! ```text
//! cargo run --example stft_round_trip -- [window] [hop]
//! ```

use nbc::stft::{frequency_sequence, istft, stft, StftConfig};
use nbc::WaveBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let window = args.next().map_or(512, |s| s.parse().expect("window"));
    let hop = args.next().map_or(window / 2, |s| s.parse().expect("hop"));
    let cfg = StftConfig::new(window, hop, 16000)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..4 * 16000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = stft(&WaveBuffer::mono(16000, x.clone()), &cfg)?;
    let y = istft(&spec, &cfg, x.len())?;

    let inner = cfg.interior(spec.n_frames());
    let err = inner
        .clone()
        .map(|i| (x[i] - y.channels[0][i]).abs())
        .fold(0.0, f64::max);
    println!("{} bins x {} frames", spec.n_freqs(), spec.n_frames());
    println!("interior {}..{} max error {err:.2e}", inner.start, inner.end);

    let seq = frequency_sequence(&spec, 10)?;
    println!("bin 10 as a {} x {} real sequence", seq.n_rows, seq.n_frames);
    Ok(())
}
