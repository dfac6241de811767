//! Speech-like dry sources for corpus-free experiments.
//!
//! A harmonic voice with a drifting pitch contour, a three-formant spectral
//! envelope that moves from syllable to syllable, and syllabic amplitude
//! modulation with short pauses.

use std::f64::consts::PI;

use rand::Rng;

struct Syllable {
    start: usize,
    len: usize,
    formants: [f64; 3],
}

fn syllables<R: Rng + ?Sized>(rng: &mut R, len: usize, fs: f64) -> Vec<Syllable> {
    let mut out = Vec::new();
    let mut t = (rng.random_range(0.0..0.05) * fs) as usize;
    while t < len {
        let dur = (rng.random_range(0.12..0.3) * fs) as usize;
        out.push(Syllable {
            start: t,
            len: dur.max(1),
            formants: [
                rng.random_range(300.0..900.0),
                rng.random_range(900.0..2400.0),
                rng.random_range(2400.0..3400.0),
            ],
        });
        let gap = if rng.random::<f64>() < 0.15 {
            rng.random_range(0.15..0.4)
        } else {
            rng.random_range(0.01..0.06)
        };
        t += dur + (gap * fs) as usize;
    }
    out
}

/// `len` samples of a synthetic voice at `sample_rate`, peak 1.
pub fn synth_speech<R: Rng + ?Sized>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let nyq = fs / 2.0;
    let f0_base = rng.random_range(90.0..250.0);
    let vib_rate = rng.random_range(0.3..1.5);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let drift_rate = rng.random_range(2.0..5.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let bandwidth = [
        rng.random_range(80.0..140.0),
        rng.random_range(100.0..180.0),
        rng.random_range(150.0..250.0),
    ];
    let sylls = syllables(rng, len, fs);

    let mut out = vec![0.0; len];
    let mut phase = 0.0;
    let mut idx = 0;
    for (i, y) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f0 = f0_base
            * (1.0
                + 0.12 * (2.0 * PI * vib_rate * t + vib_phase).sin()
                + 0.04 * (2.0 * PI * drift_rate * t + drift_phase).sin());
        phase += 2.0 * PI * f0 / fs;
        if phase > 2.0 * PI * 1e6 {
            phase -= 2.0 * PI * 1e6;
        }
        while idx + 1 < sylls.len() && sylls[idx + 1].start <= i {
            idx += 1;
        }
        let Some(s) = sylls.get(idx) else { break };
        if i < s.start || i >= s.start + s.len {
            continue;
        }
        let u = (i - s.start) as f64 / s.len as f64;
        let env = (PI * u).sin().powi(2);
        // glide towards the next syllable's formants
        let next = sylls.get(idx + 1).map_or(s.formants, |n| n.formants);
        let w = u * u;
        let fm: [f64; 3] = std::array::from_fn(|j| s.formants[j] * (1.0 - w) + next[j] * w);
        let mut v = 0.0;
        let mut k = 1.0;
        while k * f0 < nyq - 100.0 {
            let f = k * f0;
            let gain: f64 = (0..3)
                .map(|j| (-0.5 * ((f - fm[j]) / bandwidth[j]).powi(2)).exp() / (j + 1) as f64)
                .sum::<f64>()
                + 0.02 / k;
            v += gain * (k * phase).sin();
            k += 1.0;
        }
        *y = env * v;
    }
    super::peak_normalize(&out)
}
