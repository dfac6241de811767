//! Export frequency-averaged attention maps of one example as CSV and PGM.
//!
//! ```text
//! cargo run --example attention_maps -- <out_dir> [checkpoint_dir]
//! ```
//!
//! Without a checkpoint the probe network is freshly initialised, so the
//! maps show the untrained positional bias only.

use nbc::model::{attention_maps, Checkpoint, Params};
use nbc::trainer::ProbeSetup;

fn main() -> nbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "attention".into());
    let setup = ProbeSetup::new(0);
    let (cfg, params) = match args.next() {
        Some(dir) => {
            let c = Checkpoint::load(dir)?;
            (c.config, c.params)
        }
        None => (setup.model.clone(), Params::init(&setup.model, 0)?),
    };
    let example = setup.examples()?.remove(0);
    let maps = attention_maps(&example, &cfg, &params)?;
    maps.write_csv(&out)?;
    maps.write_pgm(&out)?;
    let [l, h, t, _] = maps.shape();
    for b in 0..l {
        for head in 0..h {
            let m = maps.map(b, head);
            let diag = (0..t).map(|q| m[q * t + q]).sum::<f64>() / t as f64;
            println!("block {b} head {head}: mean self-weight {diag:.3}");
        }
    }
    println!("wrote {} maps of {t} x {t} to {out}", l * h);
    Ok(())
}
