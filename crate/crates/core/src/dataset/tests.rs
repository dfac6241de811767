use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::roomsim::SceneSampler;

fn seq_from(rows: usize, frames: usize, mut f: impl FnMut(usize, usize) -> f64) -> FreqSequence {
    let mut s = FreqSequence::zeros(rows, frames);
    for r in 0..rows {
        for t in 0..frames {
            s.data[r * frames + t] = f(r, t);
        }
    }
    s
}

#[test]
fn constant_reference_magnitude() {
    // modulus 2 on the reference channel with a rotating phase
    let seq = seq_from(4, 6, |r, t| {
        let ph = t as f64 * 0.7;
        match r {
            0 => 2.0 * ph.cos(),
            1 => 2.0 * ph.sin(),
            _ => 5.0,
        }
    });
    let (out, scale) = normalize(&seq, 0).unwrap();
    assert!((scale - 2.0).abs() < 1e-15);
    let mean: f64 = (0..6).map(|t| out.at(0, t).hypot(out.at(1, t))).sum::<f64>() / 6.0;
    assert!((mean - 1.0).abs() < 1e-15);
    assert_eq!(out.at(2, 0), 2.5);
}

#[test]
fn silent_frequency_is_floored() {
    let seq = FreqSequence::zeros(4, 5);
    let (out, scale) = normalize(&seq, 0).unwrap();
    assert_eq!(scale, NORM_EPS);
    assert!(out.data.iter().all(|&v| v == 0.0));
}

#[test]
fn scale_matches_direct_mean_of_moduli() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = rng.random_range(1..50);
        let seq = seq_from(6, t, |_, _| rng.random_range(-3.0..3.0));
        let r = 1;
        let mut direct = 0.0;
        for k in 0..t {
            let (a, b) = (seq.data[2 * r * t + k], seq.data[(2 * r + 1) * t + k]);
            direct += (a * a + b * b).sqrt();
        }
        direct /= t as f64;
        let (_, scale) = normalize(&seq, r).unwrap();
        assert!((scale - direct).abs() < 1e-12);
    }
}

#[test]
fn denormalize_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pred = seq_from(4, 9, |_, _| rng.random_range(-1.0..1.0));
    assert_eq!(denormalize(&pred, 1.0), pred);
    let out = denormalize(&pred, 3.5);
    for (o, p) in out.data.iter().zip(&pred.data) {
        assert_eq!(*o, 3.5 * p);
    }
    let (n, scale) = normalize(&pred, 0).unwrap();
    let back = denormalize(&n, scale);
    for (b, p) in back.row(0).iter().chain(back.row(1)).zip(pred.row(0).iter().chain(pred.row(1))) {
        assert!((b - p).abs() <= 1e-15 * p.abs().max(1.0));
    }
}

#[test]
fn reference_channel_out_of_range() {
    let seq = FreqSequence::zeros(4, 3);
    assert!(normalize(&seq, 2).is_err());
}

#[test]
fn half_overlap_placement() {
    let p = placement(64000, 0.5).unwrap();
    assert_eq!(p.span, 48000);
    assert_eq!(p.onset2, 16000);
    assert_eq!(p.overlap, 32000);
    let full = placement(64000, 1.0).unwrap();
    assert_eq!((full.span, full.onset2, full.overlap), (64000, 0, 64000));
    assert!(placement(100, 0.05).is_err());
    assert!(placement(100, 1.01).is_err());
}

fn unit_rir(rate: u32) -> Rir {
    // one mic, two speakers, identity responses
    Rir::from_taps(1, 2, 1, rate, vec![1.0, 1.0]).unwrap()
}

#[test]
fn activity_masks_match_placement() {
    let len = 8000;
    let ones = WaveBuffer::mono(8000, vec![0.5; len]);
    let images = spatial_images(&ones, &ones, 0.5, &unit_rir(8000), len).unwrap();
    let active = |img: &WaveBuffer| -> Vec<bool> { img.channels[0].iter().map(|&v| v.abs() > 1e-9).collect() };
    let (a1, a2) = (active(&images[0]), active(&images[1]));
    // source 1 occupies [0, 6000), source 2 [2000, 8000)
    assert!(a1[..6000].iter().all(|&b| b) && !a1[6000..].iter().any(|&b| b));
    assert!(!a2[..2000].iter().any(|&b| b) && a2[2000..].iter().all(|&b| b));
    let both = a1.iter().zip(&a2).filter(|(x, y)| **x && **y).count();
    assert_eq!(both, 4000);
    // peak normalisation applied before placement
    assert!((images[0].channels[0][0] - 1.0).abs() < 1e-12);
}

#[test]
fn short_source_rejected() {
    let short = WaveBuffer::mono(8000, vec![1.0; 100]);
    let long = WaveBuffer::mono(8000, vec![1.0; 8000]);
    let err = spatial_images(&short, &long, 0.5, &unit_rir(8000), 8000).unwrap_err();
    assert!(matches!(err, Error::InputTooShort { needed: 6000, got: 100 }));
}

fn small_sampler() -> SceneSampler {
    SceneSampler {
        rt60_range: (0.1, 0.3),
        n_mics: 2,
        sample_rate: 8000,
        ..SceneSampler::default()
    }
}

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        n_examples: 2,
        seed,
        duration_secs: 0.5,
        sampler: small_sampler(),
        ..DatasetConfig::default()
    }
}

#[test]
fn mixture_is_sum_of_images() {
    let cfg = small_config(3);
    let (images, scene, entry) = generate_example(&cfg, 0, None).unwrap();
    let stft_cfg = StftConfig::new(256, 128, 8000).unwrap();
    let ex = MixtureExample::from_images(&images, scene, entry.overlap_ratio, &stft_cfg).unwrap();
    for m in 0..2 {
        let mix = &ex.mixture_wave.channels[m];
        let norm = mix.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = (0..mix.len())
            .map(|i| (mix[i] - images[0].channels[m][i] - images[1].channels[m][i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * norm);
    }
    assert_eq!(ex.targets.len(), 2);
    assert_eq!(ex.target_waves[1], images[1].channels[REFERENCE_CHANNEL]);
    assert_eq!(ex.mixture.n_channels(), 2);
}

#[test]
fn mix_pair_matches_generation_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scene = crate::roomsim::sample_scene(&mut rng, &small_sampler()).unwrap();
    let s1 = WaveBuffer::mono(8000, synth_speech(&mut rng, 4000, 8000));
    let s2 = WaveBuffer::mono(8000, synth_speech(&mut rng, 4000, 8000));
    let stft_cfg = StftConfig::new(256, 128, 8000).unwrap();
    let ex = mix_pair(&s1, &s2, 0.7, &scene, 4000, &stft_cfg).unwrap();
    assert_eq!(ex.len(), 4000);
    assert!(ex.mixture_wave.is_finite());
    assert_eq!(ex.mixture.n_frames(), stft_cfg.n_frames(4000));
    let wrong = StftConfig::new(256, 128, 16000).unwrap();
    assert!(mix_pair(&s1, &s2, 0.7, &scene, 4000, &wrong).is_err());
}

#[test]
fn synthetic_voice_is_bounded_and_voiced() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = synth_speech(&mut rng, 16000, 16000);
    assert_eq!(x.len(), 16000);
    assert!(x.iter().all(|v| v.is_finite()));
    assert!((x.iter().fold(0.0f64, |m, v| m.max(v.abs())) - 1.0).abs() < 1e-12);
    let active = x.iter().filter(|v| v.abs() > 1e-3).count();
    assert!(active > 8000, "{active}");
}

#[test]
fn dataset_is_reproducible_on_disk() {
    let cfg = small_config(7);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(a.path(), &cfg).unwrap();
    generate_dataset(b.path(), &cfg).unwrap();
    for rel in [
        "manifest.tsv",
        "dataset.json",
        "ex_00000/mixture.wav",
        "ex_00001/target_1.wav",
        "ex_00001/scene.json",
    ] {
        let x = std::fs::read(a.path().join(rel)).unwrap();
        let y = std::fs::read(b.path().join(rel)).unwrap();
        assert_eq!(x, y, "{rel}");
    }
    let loaded = Manifest::load(a.path()).unwrap();
    assert_eq!(loaded.entries, ma.entries);
    assert_eq!(loaded.config, cfg);
    let stft_cfg = StftConfig::new(256, 128, 8000).unwrap();
    let ex = load_example(a.path(), &loaded.entries[0], &stft_cfg).unwrap();
    assert_eq!(ex.n_speakers(), 2);
    assert_eq!(ex.len(), 4000);
}

#[test]
fn example_depends_only_on_seed_and_index() {
    let cfg = small_config(9);
    let (x, _, e) = generate_example(&cfg, 1, None).unwrap();
    let (y, _, f) = generate_example(&cfg, 1, None).unwrap();
    assert_eq!(x, y);
    assert_eq!(e, f);
    let (z, _, _) = generate_example(&cfg, 0, None).unwrap();
    assert_ne!(x, z);
}

#[test]
fn directory_sources() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..3 {
        let x = synth_speech(&mut rng, 4000 + 500 * k, 8000);
        WaveBuffer::mono(8000, x)
            .write_wav(dir.path().join(format!("s{k}.wav")))
            .unwrap();
    }
    let cfg = DatasetConfig {
        sources: SourcePool::Directory(dir.path().to_path_buf()),
        ..small_config(1)
    };
    let out = tempfile::tempdir().unwrap();
    let man = generate_dataset(out.path(), &cfg).unwrap();
    assert!(man.entries[0].source_1.ends_with(".wav"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn overlap_length_tracks_ratio(len in 100usize..200_000, ratio in 0.1f64..=1.0) {
        let p = placement(len, ratio).unwrap();
        prop_assert!((p.overlap as f64 - ratio * len as f64).abs() <= 1.0);
        prop_assert_eq!(p.onset2 + p.span, len);
    }

    #[test]
    fn normalize_round_trips_reference(vals in prop::collection::vec(-10.0f64..10.0, 12)) {
        let seq = FreqSequence { n_rows: 4, n_frames: 3, data: vals };
        let (n, s) = normalize(&seq, 0).unwrap();
        prop_assume!(s > NORM_EPS);
        let back = denormalize(&n, s);
        for i in 0..6 {
            prop_assert!((back.data[i] - seq.data[i]).abs() <= 1e-12 * seq.data[i].abs().max(1.0));
        }
    }
}
