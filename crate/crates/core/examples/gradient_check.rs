//! Central-difference check of the whole training pipeline on the tiny
//! network: forward pass, differentiable inverse STFT and fPIT SI-SDR loss.
//!
//! ```text
//! cargo run --example gradient_check -- [seed] [step]
//! ```

use nbc::model::{ModelConfig, Params};
use nbc::trainer::{grad_check_example, gradient_check};

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let step = args.next().map_or(1e-5, |s| s.parse().expect("step"));
    let cfg = ModelConfig::tiny();
    let params = Params::random(&cfg, seed, 0.5)?;
    let example = grad_check_example(seed)?;
    println!(
        "F = {}, T = {}, {} parameters",
        example.mixture.n_freqs(),
        example.mixture.n_frames(),
        params.count()
    );
    let r = gradient_check(&cfg, &params, &example, step)?;
    println!(
        "max relative error {:.3e} at {}[{}]: analytic {:.6e}, numeric {:.6e}",
        r.max_rel_error,
        params.names()[r.worst.0],
        r.worst.1,
        r.analytic,
        r.numeric
    );
    Ok(())
}
