//! Shoebox image-method room impulse responses and randomised scene sampling.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::WaveBuffer;
use crate::error::{Error, Result};

/// Taps either side of the centre of the fractional-delay kernel.
pub const SINC_HALF_WIDTH: usize = 40;
/// Most taps one arrival can touch: the Hann window vanishes at
/// `+-(SINC_HALF_WIDTH + 1)` samples from the arrival time.
pub const SINC_LEN: usize = 2 * SINC_HALF_WIDTH + 2;

const MAX_REJECTIONS: usize = 10_000;
const MIN_SOURCE_DISTANCE: f64 = 1e-3;
/// Upper bound on the automatically chosen reflection order per axis.
const AUTO_ORDER_CAP: usize = 16;

pub type Point = [f64; 3];

fn default_sound_speed() -> f64 {
    343.0
}

fn default_sample_rate() -> u32 {
    16000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Length, width, height in metres.
    pub room_dims: Point,
    pub rt60: f64,
    pub mic_positions: Vec<Point>,
    pub speaker_positions: Vec<Point>,
    #[serde(default = "default_sound_speed")]
    pub sound_speed: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: &Point| (0..3).all(|i| p[i] > 0.0 && p[i] < self.room_dims[i]);
        if self.room_dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("bad room dims {:?}", self.room_dims)));
        }
        if let Some(p) = self
            .mic_positions
            .iter()
            .chain(&self.speaker_positions)
            .find(|p| !inside(p))
        {
            return Err(Error::Config(format!("position {p:?} outside room")));
        }
        if self.mic_positions.is_empty() || self.speaker_positions.is_empty() {
            return Err(Error::Config("scene needs microphones and speakers".into()));
        }
        if !(self.sound_speed > 0.0) || self.rt60 < 0.0 {
            return Err(Error::Config("bad sound speed or rt60".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Mean microphone position.
    pub fn array_center(&self) -> Point {
        let n = self.mic_positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for i in 0..3 {
                c[i] += p[i] / n;
            }
        }
        c
    }

    /// Smallest distance from `p` to any wall.
    pub fn wall_clearance(&self, p: &Point) -> f64 {
        (0..3)
            .map(|i| p[i].min(self.room_dims[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Ranges from which [`sample_scene`] draws a room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    pub rt60_range: (f64, f64),
    pub n_mics: usize,
    pub array_radius: f64,
    /// Side of the square around the room centre that holds the array centre.
    pub array_square: f64,
    pub height: f64,
    pub n_speakers: usize,
    pub wall_margin: f64,
    /// Minimum speaker distance from the array centre.
    pub min_array_distance: f64,
    pub sound_speed: f64,
    pub sample_rate: u32,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            length_range: (3.0, 8.0),
            width_range: (3.0, 8.0),
            height_range: (3.0, 4.0),
            rt60_range: (0.1, 1.0),
            n_mics: 8,
            array_radius: 0.05,
            array_square: 1.0,
            height: 1.5,
            n_speakers: 2,
            wall_margin: 0.5,
            min_array_distance: 0.5,
            sound_speed: 343.0,
            sample_rate: 16000,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Distance along the horizontal ray from `origin` at angle `theta` until the
/// point comes within `margin` of a wall.
fn ray_limit(origin: Point, theta: f64, dims: Point, margin: f64) -> f64 {
    let dir = [theta.cos(), theta.sin()];
    let mut limit = f64::INFINITY;
    for i in 0..2 {
        if dir[i] > 1e-12 {
            limit = limit.min((dims[i] - margin - origin[i]) / dir[i]);
        } else if dir[i] < -1e-12 {
            limit = limit.min((margin - origin[i]) / dir[i]);
        }
    }
    limit
}

/// Draw a random room, array and speaker layout.
///
/// The first speaker is placed uniformly inside the wall margin; each further
/// speaker sits at a uniformly drawn azimuth difference in [0, 180] degrees
/// from the first, as seen from the array centre.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, sampler: &SceneSampler) -> Result<SceneConfig> {
    let s = sampler;
    if s.n_mics == 0 || s.n_speakers == 0 {
        return Err(Error::Config("sampler needs at least one mic and speaker".into()));
    }
    for _ in 0..MAX_REJECTIONS {
        let dims = [
            uniform(rng, s.length_range),
            uniform(rng, s.width_range),
            uniform(rng, s.height_range),
        ];
        let rt60 = uniform(rng, s.rt60_range);
        let half = s.array_square / 2.0;
        let center = [
            dims[0] / 2.0 + uniform(rng, (-half, half)),
            dims[1] / 2.0 + uniform(rng, (-half, half)),
            s.height,
        ];
        let mics: Vec<Point> = (0..s.n_mics)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / s.n_mics as f64;
                [
                    center[0] + s.array_radius * phi.cos(),
                    center[1] + s.array_radius * phi.sin(),
                    center[2],
                ]
            })
            .collect();

        let m = s.wall_margin;
        if dims[0] <= 2.0 * m || dims[1] <= 2.0 * m || s.height <= m || dims[2] - s.height <= m {
            continue;
        }
        let first = [
            uniform(rng, (m, dims[0] - m)),
            uniform(rng, (m, dims[1] - m)),
            s.height,
        ];
        let dist = ((first[0] - center[0]).powi(2) + (first[1] - center[1]).powi(2)).sqrt();
        if dist < s.min_array_distance {
            continue;
        }
        let theta1 = (first[1] - center[1]).atan2(first[0] - center[0]);
        let mut speakers = vec![first];
        for _ in 1..s.n_speakers {
            let delta = uniform(rng, (0.0, PI));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let theta = theta1 + sign * delta;
            let limit = ray_limit(center, theta, dims, m);
            if limit < s.min_array_distance {
                break;
            }
            let d = uniform(rng, (s.min_array_distance, limit));
            speakers.push([center[0] + d * theta.cos(), center[1] + d * theta.sin(), s.height]);
        }
        if speakers.len() != s.n_speakers {
            continue;
        }
        let scene = SceneConfig {
            room_dims: dims,
            rt60,
            mic_positions: mics,
            speaker_positions: speakers,
            sound_speed: s.sound_speed,
            sample_rate: s.sample_rate,
        };
        if scene.validate().is_ok()
            && scene
                .speaker_positions
                .iter()
                .all(|p| scene.wall_clearance(p) >= m - 1e-9)
        {
            return Ok(scene);
        }
    }
    Err(Error::Config(format!(
        "scene sampling rejected {MAX_REJECTIONS} candidates"
    )))
}

/// Uniform wall reflection coefficient from Sabine's reverberation formula.
///
/// The absorption is clamped to 1, which yields an anechoic room when the
/// requested RT60 is shorter than the room can support.
pub fn sabine_reflection(room_dims: Point, rt60: f64) -> f64 {
    let [l, w, h] = room_dims;
    let volume = l * w * h;
    let surface = 2.0 * (l * w + l * h + w * h);
    let alpha = if rt60 > 0.0 {
        (0.161 * volume / (surface * rt60)).min(1.0)
    } else {
        1.0
    };
    (1.0 - alpha).sqrt()
}

/// RIR length covering the full decay plus the interpolation kernel.
pub fn default_rir_len(rt60: f64, sample_rate: u32) -> usize {
    (rt60 * sample_rate as f64).ceil() as usize + SINC_LEN
}

/// Reflection order per axis whose images reach at least `rt60` seconds.
pub fn default_max_order(scene: &SceneConfig) -> usize {
    let min_dim = scene.room_dims.iter().copied().fold(f64::INFINITY, f64::min);
    let reach = scene.sound_speed * scene.rt60 / min_dim;
    (reach.ceil() as usize + 1).min(AUTO_ORDER_CAP)
}

/// Room impulse responses, indexed `[mic][speaker][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub n_mics: usize,
    pub n_speakers: usize,
    pub n_taps: usize,
    pub sample_rate: u32,
    taps: Vec<f64>,
}

impl Rir {
    pub fn from_taps(
        n_mics: usize,
        n_speakers: usize,
        n_taps: usize,
        sample_rate: u32,
        taps: Vec<f64>,
    ) -> Result<Self> {
        if taps.len() != n_mics * n_speakers * n_taps {
            return Err(Error::shape("rir", format!("{} taps", taps.len())));
        }
        Ok(Self {
            n_mics,
            n_speakers,
            n_taps,
            sample_rate,
            taps,
        })
    }

    pub fn taps(&self, m: usize, n: usize) -> &[f64] {
        let start = (m * self.n_speakers + n) * self.n_taps;
        &self.taps[start..start + self.n_taps]
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|x| x * x).sum()
    }

    /// Export the responses of speaker `n` as a multichannel float WAV.
    pub fn write_wav(&self, path: impl AsRef<Path>, n: usize) -> Result<()> {
        if n >= self.n_speakers {
            return Err(Error::OutOfRange {
                what: "speaker",
                index: n,
                limit: self.n_speakers,
            });
        }
        let channels = (0..self.n_mics).map(|m| self.taps(m, n).to_vec()).collect();
        WaveBuffer::new(self.sample_rate, channels)?.write_wav(path)
    }
}

/// One mirrored source coordinate along an axis with its wall hit counts.
#[derive(Debug, Clone, Copy)]
struct AxisImage {
    coord: f64,
    reflections: i32,
}

/// Images along one axis for lattice index `n` and parity `q`: the
/// coordinate is `(1 - 2q) s + 2 n L` with `|n - q| + |n|` reflections.
fn axis_images(source: f64, len: f64, max_order: usize) -> Vec<AxisImage> {
    let order = max_order as i64;
    let mut out = Vec::new();
    for n in -order..=order {
        for q in 0..=1i64 {
            let reflections = (n - q).abs() + n.abs();
            if reflections > order {
                continue;
            }
            out.push(AxisImage {
                coord: (1 - 2 * q) as f64 * source + 2.0 * n as f64 * len,
                reflections: reflections as i32,
            });
        }
    }
    out
}

/// Hann-windowed sinc tap for a fractional offset `x` from the arrival time.
#[inline]
pub fn windowed_sinc(x: f64) -> f64 {
    let half = SINC_HALF_WIDTH as f64 + 1.0;
    if x.abs() >= half {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (PI * x / half).cos());
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    window * sinc
}

/// Add an arrival of `amplitude` at fractional sample `delay` into `out`.
#[inline]
pub fn add_arrival(out: &mut [f64], delay: f64, amplitude: f64) {
    let center = delay.floor() as i64;
    let lo = center - SINC_HALF_WIDTH as i64;
    // the window reaches zero at +-(SINC_HALF_WIDTH + 1), so a fractional
    // delay touches one tap past the half width on the right
    let hi = center + SINC_HALF_WIDTH as i64 + 1;
    for k in lo.max(0)..=hi.min(out.len() as i64 - 1) {
        out[k as usize] += amplitude * windowed_sinc(k as f64 - delay);
    }
}

fn pair_response(
    scene: &SceneConfig,
    mic: Point,
    source: Point,
    beta: f64,
    max_order: usize,
    n_taps: usize,
) -> Vec<f64> {
    let dims = scene.room_dims;
    let images: Vec<Vec<AxisImage>> = (0..3)
        .map(|i| axis_images(source[i], dims[i], max_order))
        .collect();
    let fs = scene.sample_rate as f64;
    let limit = (n_taps + SINC_HALF_WIDTH) as f64;
    let mut out = vec![0.0; n_taps];
    for ix in &images[0] {
        let dx2 = (ix.coord - mic[0]).powi(2);
        for iy in &images[1] {
            let dxy2 = dx2 + (iy.coord - mic[1]).powi(2);
            for iz in &images[2] {
                let d = (dxy2 + (iz.coord - mic[2]).powi(2)).sqrt();
                let delay = d / scene.sound_speed * fs;
                if delay >= limit {
                    continue;
                }
                let amp = beta.powi(ix.reflections + iy.reflections + iz.reflections)
                    / (4.0 * PI * d);
                if amp != 0.0 {
                    add_arrival(&mut out, delay, amp);
                }
            }
        }
    }
    out
}

/// Simulate with the Sabine reflection coefficient for the scene's RT60.
pub fn simulate_rir(scene: &SceneConfig, max_order: usize, n_taps: usize) -> Result<Rir> {
    let beta = sabine_reflection(scene.room_dims, scene.rt60);
    simulate_rir_with_reflection(scene, beta, max_order, n_taps)
}

/// Simulate with an explicit uniform wall reflection coefficient.
///
/// Every image contributes `beta^reflections / (4 pi d)` at a delay of
/// `d / c` seconds through a Hann-windowed sinc kernel.
pub fn simulate_rir_with_reflection(
    scene: &SceneConfig,
    beta: f64,
    max_order: usize,
    n_taps: usize,
) -> Result<Rir> {
    scene.validate()?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("reflection coefficient {beta} outside [0, 1]")));
    }
    for (m, mic) in scene.mic_positions.iter().enumerate() {
        for (n, spk) in scene.speaker_positions.iter().enumerate() {
            let d = (0..3).map(|i| (mic[i] - spk[i]).powi(2)).sum::<f64>().sqrt();
            if d < MIN_SOURCE_DISTANCE {
                return Err(Error::DegenerateGeometry(format!(
                    "speaker {n} is {d:.2e} m from mic {m}"
                )));
            }
        }
    }
    let n_mics = scene.mic_positions.len();
    let n_spk = scene.speaker_positions.len();
    let pairs: Vec<(usize, usize)> = (0..n_mics)
        .flat_map(|m| (0..n_spk).map(move |n| (m, n)))
        .collect();
    let responses: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(m, n)| {
            pair_response(
                scene,
                scene.mic_positions[m],
                scene.speaker_positions[n],
                beta,
                max_order,
                n_taps,
            )
        })
        .collect();
    Rir::from_taps(n_mics, n_spk, n_taps, scene.sample_rate, responses.concat())
}

/// Full linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len();
    if out_len == 0 || h.is_empty() {
        return vec![0.0; out_len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Reverberant image of speaker `n` at every microphone.
pub fn spatialize(dry: &WaveBuffer, rir: &Rir, n: usize) -> Result<WaveBuffer> {
    if dry.n_channels() != 1 {
        return Err(Error::InvalidSignal(format!(
            "dry source must be mono, got {} channels",
            dry.n_channels()
        )));
    }
    if dry.sample_rate != rir.sample_rate {
        return Err(Error::Data(format!(
            "dry source at {} Hz, RIR at {} Hz",
            dry.sample_rate, rir.sample_rate
        )));
    }
    if n >= rir.n_speakers {
        return Err(Error::OutOfRange {
            what: "speaker",
            index: n,
            limit: rir.n_speakers,
        });
    }
    let x = &dry.channels[0];
    let channels = (0..rir.n_mics)
        .map(|m| convolve_truncated(x, rir.taps(m, n)))
        .collect();
    WaveBuffer::new(dry.sample_rate, channels)
}
