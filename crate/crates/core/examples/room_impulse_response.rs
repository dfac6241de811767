//! Sample a shoebox room, simulate its impulse responses and spatialise a
//! synthetic voice.
//!
//! ```text
//! cargo run --example room_impulse_response -- [seed] [out_dir]
//! ```

use nbc::dataset::synth_speech;
use nbc::roomsim::{default_max_order, default_rir_len, sample_scene, simulate_rir, spatialize, SceneSampler};
use nbc::WaveBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = args.next();

    let sampler = SceneSampler {
        n_mics: 4,
        ..SceneSampler::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = sample_scene(&mut rng, &sampler)?;
    let order = default_max_order(&scene);
    let taps = default_rir_len(scene.rt60, scene.sample_rate);
    println!(
        "room {:.2} x {:.2} x {:.2} m, RT60 {:.2} s, {} mics, order {order}, {taps} taps",
        scene.room_dims[0], scene.room_dims[1], scene.room_dims[2], scene.rt60, scene.mic_positions.len()
    );

    let rir = simulate_rir(&scene, order, taps)?;
    for m in 0..rir.n_mics {
        let h = rir.taps(m, 0);
        let first = h.iter().position(|v| v.abs() > 1e-4).unwrap_or(0);
        println!("mic {m}: first arrival near tap {first}, energy {:.3e}", h.iter().map(|v| v * v).sum::<f64>());
    }

    let dry = WaveBuffer::mono(scene.sample_rate, synth_speech(&mut rng, 2 * scene.sample_rate as usize, scene.sample_rate));
    let image = spatialize(&dry, &rir, 0)?;
    println!("spatial image: {} channels x {} samples", image.n_channels(), image.len());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| nbc::Error::Data(e.to_string()))?;
        rir.write_wav(format!("{dir}/rir_speaker0.wav"), 0)?;
        image.write_wav(format!("{dir}/image_speaker0.wav"))?;
        println!("wrote {dir}/rir_speaker0.wav and {dir}/image_speaker0.wav");
    }
    Ok(())
}
