//! Fit the small probe network to four fixed mixtures and print the SI-SDR
//! improvement curve.
//!
//! ```text
//! cargo run --release --example overfit_probe -- [steps] [batch] [f32|f64] [lr]
//! ```

use nbc::model::{parameter_count, Precision};
use nbc::trainer::{overfit_probe, ProbeConfig, ProbeSetup};

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let batch = args.next().map_or(4, |s| s.parse().expect("batch"));
    let precision = match args.next().as_deref() {
        Some("f64") => Precision::F64,
        _ => Precision::F32,
    };
    let lr = args.next().map(|s| s.parse().expect("lr"));
    let setup = ProbeSetup::new(0);
    let examples = setup.examples()?;
    println!(
        "probe: {} parameters, {} examples, F = {}, T = {}",
        parameter_count(&setup.model),
        examples.len(),
        examples[0].mixture.n_freqs(),
        examples[0].mixture.n_frames()
    );
    let pcfg = ProbeConfig {
        steps,
        batch,
        precision,
        eval_every: (steps / 10).max(1),
        ..ProbeConfig::default()
    };
    let pcfg = ProbeConfig {
        lr: lr.unwrap_or(pcfg.lr),
        ..pcfg
    };
    let (curve, _) = overfit_probe(&setup.model, &pcfg, &examples, |p| {
        println!(
            "step {:5}  loss {:8.3}  improvement {:6.2} dB  {:7.1} s",
            p.step, p.train_loss, p.improvement, p.elapsed_secs
        );
    })?;
    let last = curve.last().expect("at least one point");
    println!("final improvement {:.2} dB", last.improvement);
    Ok(())
}
