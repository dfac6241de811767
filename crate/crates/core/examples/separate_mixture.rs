//! Separate a multichannel WAV with a checkpoint, or with a freshly
//! initialised network when none is given.
//!
//! ```text
//! cargo run --example separate_mixture -- <mixture.wav> <out_dir> [checkpoint_dir]
//! ```

use nbc::model::{separate_wave, Checkpoint, ModelConfig, Params, Precision};
use nbc::stft::StftConfig;
use nbc::WaveBuffer;

fn main() -> nbc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, out, rest @ ..] = args.as_slice() else {
        eprintln!("usage: separate_mixture <mixture.wav> <out_dir> [checkpoint_dir]");
        std::process::exit(1);
    };
    let mixture = WaveBuffer::read_wav(input, None)?;
    let (cfg, params, stft) = match rest.first() {
        Some(dir) => {
            let c = Checkpoint::load(dir)?;
            let stft = c.stft.unwrap_or(StftConfig::new(512, 256, mixture.sample_rate)?);
            (c.config, c.params, stft)
        }
        None => {
            let cfg = ModelConfig {
                n_mics: mixture.n_channels(),
                ..ModelConfig::probe()
            };
            let params = Params::init(&cfg, 0)?;
            (cfg, params, StftConfig::new(512, 256, mixture.sample_rate)?)
        }
    };
    let started = std::time::Instant::now();
    let speakers = separate_wave(&mixture, &cfg, &params, &stft, Precision::F32)?;
    let secs = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(out).map_err(|e| nbc::Error::Data(e.to_string()))?;
    for (n, s) in speakers.into_iter().enumerate() {
        let path = format!("{out}/speaker_{n}.wav");
        WaveBuffer::mono(mixture.sample_rate, s).write_wav(&path)?;
        println!("wrote {path}");
    }
    println!("RTF {:.3}", secs / mixture.duration_secs());
    Ok(())
}
