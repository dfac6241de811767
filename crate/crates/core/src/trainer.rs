//! Adam, gradient clipping, plateau learning-rate schedule and the training
//! loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::WaveBuffer;
use crate::autodiff::{grad_check_many, GradCheckReport, Graph, Real, Tensor};
use crate::dataset::{generate_examples, DatasetConfig, MixtureExample, NormState};
use crate::error::{Error, Result};
use crate::model::{self, forward, Checkpoint, ModelConfig, ModelVars, Params, Precision};
use crate::roomsim::{SceneConfig, SceneSampler};
use crate::stft::StftConfig;
use crate::objective::{self, fpit_graph, graph_reconstruct, IstftBasis, PermutationAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub utterances_per_batch: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub plateau_epochs: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            utterances_per_batch: 16,
            lr_init: 1e-3,
            lr_min: 1e-4,
            plateau_epochs: 3,
            clip_norm: 5.0,
            max_epochs: 100,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return Err(Error::Config(format!(
                "need 0 < lr_min <= lr_init, got {} and {}",
                self.lr_min, self.lr_init
            )));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        if self.utterances_per_batch == 0 || self.plateau_epochs == 0 {
            return Err(Error::Config("batch size and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    /// Completed steps.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Rejects the step, leaving everything
/// untouched, if any gradient is non-finite.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((name, p), (_, g)) in params.iter().zip(grads.iter()) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let tensors = params.tensors_mut().iter_mut();
    let moments = state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut());
    for ((p, (m, v)), g) in tensors.zip(moments).zip(grads.tensors()) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &Params) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients by `clip / norm` when the global norm exceeds
/// `clip`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Params, clip: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip {
        let s = clip / norm;
        for t in grads.tensors_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Halve the learning rate after `patience` epochs without a strict
/// improvement of the best validation loss, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, min_lr: f64, patience: usize) -> Self {
        Self {
            lr,
            min_lr,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record one epoch's validation loss and return the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr / 2.0).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Stateless form of [`PlateauScheduler::observe`] for the epoch that just
/// appended the last entry of `history`.
pub fn schedule_lr(history: &[f64], lr: f64, min_lr: f64, patience: usize) -> f64 {
    let Some(best) = history
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, &v)| match acc {
            Some((_, b)) if v >= b => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return lr;
    };
    let stale = history.len() - 1 - best;
    if stale > 0 && stale.is_multiple_of(patience) {
        (lr / 2.0).max(min_lr)
    } else {
        lr
    }
}

/// One utterance's network input, ready for a graph.
#[derive(Debug, Clone)]
pub struct UtteranceInput {
    /// `[F, 2M, T]` normalised sequences.
    pub input: Tensor<f64>,
    pub norm: NormState,
}

impl UtteranceInput {
    pub fn from_example(ex: &MixtureExample) -> Result<Self> {
        let (seqs, norm) = ex.normalized_inputs()?;
        Ok(Self {
            input: model::stack_sequences(&seqs)?,
            norm,
        })
    }

    pub fn n_sequences(&self) -> usize {
        self.input.shape()[0]
    }
}

/// Inputs of every utterance in a batch; each contributes all `F`
/// frequencies, so the batch holds `F * len` narrow-band sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub utterances: Vec<UtteranceInput>,
}

impl Batch {
    pub fn n_sequences(&self) -> usize {
        self.utterances.iter().map(UtteranceInput::n_sequences).sum()
    }
}

pub fn assemble_batch(examples: &[&MixtureExample]) -> Result<Batch> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let (f, t) = (first.mixture.n_freqs(), first.mixture.n_frames());
    for ex in examples {
        if ex.mixture.n_frames() != t || ex.mixture.n_freqs() != f {
            return Err(Error::shape(
                "assemble_batch",
                format!(
                    "utterance is {}x{}, batch is {f}x{t}",
                    ex.mixture.n_freqs(),
                    ex.mixture.n_frames()
                ),
            ));
        }
    }
    let utterances = examples
        .par_iter()
        .map(|ex| UtteranceInput::from_example(ex))
        .collect::<Result<_>>()?;
    Ok(Batch { utterances })
}

/// fPIT loss of one utterance: forward over all frequencies, bind,
/// inverse transform and score against the targets.
pub fn utterance_loss<R: Real>(
    g: &mut Graph<R>,
    cfg: &ModelConfig,
    vars: &ModelVars,
    input: &UtteranceInput,
    targets: &[Vec<f64>],
    basis: &IstftBasis,
) -> Result<(crate::autodiff::Var, PermutationAssignment)> {
    let x = g.constant(input.input.cast());
    let out = forward(g, cfg, vars, x)?;
    let est = graph_reconstruct(g, out.output, &input.norm, basis)?;
    fpit_graph(g, &est, targets)
}

/// Loss value and parameter gradients for one utterance.
fn utterance_grads<R: Real>(
    cfg: &ModelConfig,
    params: &Params,
    input: &UtteranceInput,
    targets: &[Vec<f64>],
    basis: &IstftBasis,
    dropout_seed: Option<u64>,
) -> Result<(f64, Params)> {
    let mut g = Graph::<R>::new();
    if let Some(seed) = dropout_seed {
        g = g.train_mode(seed);
    }
    let vars = ModelVars::attach(&mut g, cfg, params, true)?;
    let (loss, _) = utterance_loss(&mut g, cfg, &vars, input, targets, basis)?;
    let value = g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    g.backward(loss)?;
    let entries = params
        .names()
        .iter()
        .zip(vars.vars())
        .map(|(n, &v)| {
            let gr = g.grad(v);
            Tensor::from_f64(gr.shape(), &gr.to_f64_vec()).map(|t| (n.clone(), t))
        })
        .collect::<Result<_>>()?;
    Ok((value, Params::from_entries(entries)?))
}

/// Sum pairs of adjacent items until one remains.
fn tree_sum(mut items: Vec<(f64, Params)>) -> (f64, Params) {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some((la, mut a)) = it.next() {
            if let Some((lb, b)) = it.next() {
                for (x, y) in a.tensors_mut().iter_mut().zip(b.tensors()) {
                    for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                        *p += q;
                    }
                }
                next.push((la + lb, a));
            } else {
                next.push((la, a));
            }
        }
        items = next;
    }
    items.pop().expect("non-empty batch")
}

/// Mean loss and mean gradients over a batch. Utterances run in parallel;
/// the reduction order is fixed.
pub fn batch_gradients(
    cfg: &ModelConfig,
    params: &Params,
    batch: &[(&UtteranceInput, &[Vec<f64>])],
    basis: &IstftBasis,
    precision: Precision,
    dropout_seed: Option<u64>,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let parts: Vec<(f64, Params)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (input, targets))| {
            let seed = dropout_seed.map(|s| s.wrapping_mul(1_000_003).wrapping_add(i as u64));
            match precision {
                Precision::F32 => utterance_grads::<f32>(cfg, params, input, targets, basis, seed),
                Precision::F64 => utterance_grads::<f64>(cfg, params, input, targets, basis, seed),
            }
        })
        .collect::<Result<_>>()?;
    let n = parts.len() as f64;
    let (loss, mut grads) = tree_sum(parts);
    for t in grads.tensors_mut() {
        for v in t.data_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, grads))
}

/// Mean eval-mode fPIT loss (no gradients).
pub fn validation_loss(
    cfg: &ModelConfig,
    params: &Params,
    examples: &[MixtureExample],
    precision: Precision,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let sep = model::separate(&ex.mixture, cfg, params, precision)?;
            Ok(objective::fpit(&sep, &ex.targets, &ex.stft, ex.len())?.loss)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub best_val: f64,
    pub final_lr: f64,
    pub log: Vec<StepRecord>,
}

fn basis_for(examples: &[MixtureExample]) -> Result<IstftBasis> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Config("empty training set".into()))?;
    if let Some(ex) = examples.iter().find(|e| e.len() != first.len()) {
        return Err(Error::LengthMismatch(ex.len(), first.len()));
    }
    IstftBasis::new(&first.stft, first.len())
}

/// Train from `params` (or a fresh init) on `train`, validating on `val`
/// after every epoch. Writes `train_log.csv`, `last/` and `best/`
/// checkpoints under `out_dir`.
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    start: Option<Checkpoint>,
    train_set: &[MixtureExample],
    val_set: &[MixtureExample],
    out_dir: impl AsRef<Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    tcfg.validate()?;
    let out_dir: PathBuf = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let basis = basis_for(train_set)?;
    let inputs: Vec<UtteranceInput> = train_set
        .par_iter()
        .map(UtteranceInput::from_example)
        .collect::<Result<_>>()?;

    let (mut params, mut adam, mut step) = match start {
        Some(c) => {
            if &c.config != cfg {
                return Err(Error::Config("checkpoint config differs from model config".into()));
            }
            let adam = c.optimizer.unwrap_or_else(|| AdamState::new(&c.params));
            (c.params, adam, c.step)
        }
        None => {
            let p = Params::init(cfg, tcfg.seed)?;
            let a = AdamState::new(&p);
            (p, a, 0)
        }
    };
    let mut sched = PlateauScheduler::new(tcfg.lr_init, tcfg.lr_min, tcfg.plateau_epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let log_path = out_dir.join("train_log.csv");
    let mut writer = csv::Writer::from_path(&log_path)?;

    for epoch in 0..tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_records = Vec::new();
        for idx in order.chunks(tcfg.utterances_per_batch) {
            let batch: Vec<(&UtteranceInput, &[Vec<f64>])> = idx
                .iter()
                .map(|&i| (&inputs[i], train_set[i].target_waves.as_slice()))
                .collect();
            let (loss, mut grads) =
                batch_gradients(cfg, &params, &batch, &basis, tcfg.precision, Some(tcfg.seed ^ step))
                    .map_err(|e| if e.is_numeric() { Error::Divergence(step as usize) } else { e })?;
            let norm = clip_gradients(&mut grads, tcfg.clip_norm);
            adam_step(&mut params, &grads, &mut adam, sched.lr)
                .map_err(|_| Error::Divergence(step as usize))?;
            step += 1;
            epoch_records.push(StepRecord {
                step,
                epoch,
                train_loss: loss,
                val_loss: None,
                lr: sched.lr,
                grad_norm: norm,
            });
        }
        let val = if val_set.is_empty() {
            epoch_records.iter().map(|r| r.train_loss).sum::<f64>() / epoch_records.len() as f64
        } else {
            validation_loss(cfg, &params, val_set, tcfg.precision)?
        };
        if let Some(last) = epoch_records.last_mut() {
            last.val_loss = Some(val);
        }
        let improved = val < sched.best;
        sched.observe(val);
        for r in &epoch_records {
            writer.serialize(r)?;
        }
        writer.flush().map_err(|e| Error::io(&log_path, e))?;
        log.extend(epoch_records);

        let ckpt = Checkpoint {
            config: cfg.clone(),
            params: params.clone(),
            optimizer: Some(adam.clone()),
            step,
            stft: Some(train_set[0].stft),
        };
        ckpt.save(out_dir.join("last"))?;
        if improved {
            ckpt.save(out_dir.join("best"))?;
        }
    }
    Ok(TrainSummary {
        steps: step,
        epochs: tcfg.max_epochs,
        best_val: sched.best,
        final_lr: sched.lr,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Utterances per step, cycling through the examples.
    pub batch: usize,
    /// Evaluate every this many steps (and at the end).
    pub eval_every: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            clip_norm: 5.0,
            batch: 1,
            eval_every: 250,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

/// Model, data and transform of the standard overfitting probe: four
/// two-channel, two-speaker 1 s mixtures at 8 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSetup {
    pub model: ModelConfig,
    pub data: DatasetConfig,
    pub stft: StftConfig,
}

impl ProbeSetup {
    pub fn new(seed: u64) -> Self {
        let data = DatasetConfig {
            n_examples: 4,
            seed,
            duration_secs: 1.0,
            sampler: SceneSampler {
                n_mics: 2,
                sample_rate: 8000,
                ..SceneSampler::default()
            },
            ..DatasetConfig::default()
        };
        Self {
            model: ModelConfig::probe(),
            data,
            stft: StftConfig::new(256, 128, 8000).expect("valid probe STFT"),
        }
    }

    pub fn examples(&self) -> Result<Vec<MixtureExample>> {
        generate_examples(&self.data, &self.stft)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub step: usize,
    pub train_loss: f64,
    /// Mean SI-SDR improvement over the mixture on the training examples.
    pub improvement: f64,
    pub elapsed_secs: f64,
}

/// Mean SI-SDR improvement of eval-mode separation on `examples`.
pub fn mean_improvement(
    cfg: &ModelConfig,
    params: &Params,
    examples: &[MixtureExample],
    precision: Precision,
) -> Result<f64> {
    let vals: Vec<f64> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let sep = model::separate(&ex.mixture, cfg, params, precision)?;
            Ok(objective::evaluate(&format!("{i}"), ex, &sep, 0.0)?.improvement)
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Fit a fresh network to a few fixed examples and track the SI-SDR
/// improvement on those same examples.
///
/// `on_point` is called after each evaluation, e.g. for progress output.
pub fn overfit_probe(
    cfg: &ModelConfig,
    pcfg: &ProbeConfig,
    examples: &[MixtureExample],
    mut on_point: impl FnMut(&ProbePoint),
) -> Result<(Vec<ProbePoint>, Params)> {
    cfg.validate()?;
    let basis = basis_for(examples)?;
    let inputs: Vec<UtteranceInput> = examples
        .iter()
        .map(UtteranceInput::from_example)
        .collect::<Result<_>>()?;
    let mut params = Params::init(cfg, pcfg.seed)?;
    let mut adam = AdamState::new(&params);
    let started = Instant::now();
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;
    let mut cursor = 0;
    let eval_every = pcfg.eval_every.max(1);
    for step in 0..=pcfg.steps {
        if step % eval_every == 0 || step == pcfg.steps {
            let point = ProbePoint {
                step,
                train_loss: last_loss,
                improvement: mean_improvement(cfg, &params, examples, pcfg.precision)?,
                elapsed_secs: started.elapsed().as_secs_f64(),
            };
            on_point(&point);
            curve.push(point);
        }
        if step == pcfg.steps {
            break;
        }
        let batch: Vec<(&UtteranceInput, &[Vec<f64>])> = (0..pcfg.batch.max(1))
            .map(|k| {
                let i = (cursor + k) % examples.len();
                (&inputs[i], examples[i].target_waves.as_slice())
            })
            .collect();
        cursor = (cursor + batch.len()) % examples.len();
        let seed = (cfg.dropout > 0.0).then_some(pcfg.seed ^ step as u64);
        let (loss, mut grads) = batch_gradients(cfg, &params, &batch, &basis, pcfg.precision, seed)
            .map_err(|e| if e.is_numeric() { Error::Divergence(step) } else { e })?;
        clip_gradients(&mut grads, pcfg.clip_norm);
        adam_step(&mut params, &grads, &mut adam, pcfg.lr).map_err(|_| Error::Divergence(step))?;
        last_loss = loss;
    }
    Ok((curve, params))
}

/// A tiny two-microphone, two-speaker utterance with `F = 5` and `T = 8`
/// (window 8, hop 4, 36 samples) for gradient checks.
pub fn grad_check_example(seed: u64) -> Result<MixtureExample> {
    let stft = StftConfig::new(8, 4, 8000)?;
    let len = 36;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wave = || -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let targets = vec![wave(), wave()];
    let other = wave();
    let ch0: Vec<f64> = targets[0].iter().zip(&targets[1]).map(|(a, b)| a + b).collect();
    let ch1: Vec<f64> = ch0.iter().zip(&other).map(|(a, b)| 0.8 * a + 0.2 * b).collect();
    let scene = SceneConfig {
        room_dims: [4.0, 4.0, 3.0],
        rt60: 0.0,
        mic_positions: vec![[2.0, 2.0, 1.5], [2.05, 2.0, 1.5]],
        speaker_positions: vec![[3.0, 2.0, 1.5], [2.0, 3.0, 1.5]],
        sound_speed: 343.0,
        sample_rate: 8000,
    };
    MixtureExample::from_waves(WaveBuffer::new(8000, vec![ch0, ch1])?, targets, scene, 1.0, &stft)
}

/// Central-difference check of every parameter gradient through the
/// network, the differentiable inverse STFT and the fPIT loss, in f64.
pub fn gradient_check(
    cfg: &ModelConfig,
    params: &Params,
    example: &MixtureExample,
    step: f64,
) -> Result<GradCheckReport> {
    let basis = IstftBasis::new(&example.stft, example.len())?;
    let input = UtteranceInput::from_example(example)?;
    grad_check_many(
        |g, vars| {
            let mv = ModelVars::from_vars(cfg, vars.to_vec())?;
            Ok(utterance_loss(g, cfg, &mv, &input, &example.target_waves, &basis)?.0)
        },
        params.tensors(),
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(value: f64) -> Params {
        Params::from_entries(vec![("w".into(), Tensor::new(&[1], vec![value]).unwrap())]).unwrap()
    }

    #[test]
    fn first_adam_step_by_hand() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &single(1.0), &mut s, 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors()[0].data()[0] - expected).abs() < 1e-12);
        assert!((s.m.tensors()[0].data()[0] - 0.1).abs() < 1e-12);
        assert!((s.v.tensors()[0].data()[0] - 0.001).abs() < 1e-12);
    }

    #[test]
    fn second_adam_step_by_hand() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &single(2.0), &mut s, 0.1).unwrap();
        adam_step(&mut p, &single(-1.0), &mut s, 0.1).unwrap();
        let m = 0.9 * 0.2 + -0.1;
        let v = 0.999 * 0.004 + 0.001 * 1.0;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.999f64.powi(2));
        // m_hat = 2, v_hat = 4 after the first step
        let first = -0.1 * 2.0 / (2.0 + 1e-8);
        let expected = first - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((p.tensors()[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut p = single(0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &single(1.0), &mut s, 1e-3).unwrap();
        let before = p.clone();
        let m0 = s.m.tensors()[0].data()[0];
        // with g = 0 the first moment is nonzero, so parameters still move;
        // from a zero state they do not
        let mut q = single(0.3);
        let mut z = AdamState::new(&q);
        adam_step(&mut q, &single(0.0), &mut z, 1e-3).unwrap();
        assert_eq!(q, single(0.3));
        adam_step(&mut p, &single(0.0), &mut s, 1e-3).unwrap();
        assert_eq!(s.m.tensors()[0].data()[0], 0.9 * m0);
        assert_ne!(p, before);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = single(0.3);
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &single(f64::NAN), &mut s, 1e-3).is_err());
        assert_eq!(s.t, 0);
        assert_eq!(p, single(0.3));
    }

    #[test]
    fn clip_norm_ten_to_five_halves() {
        let mut g = Params::from_entries(vec![
            ("a".into(), Tensor::new(&[2], vec![6.0, 0.0]).unwrap()),
            ("b".into(), Tensor::new(&[1], vec![8.0]).unwrap()),
        ])
        .unwrap();
        let norm = clip_gradients(&mut g, 5.0);
        assert_eq!(norm, 10.0);
        assert_eq!(g.tensors()[0].data(), &[3.0, 0.0]);
        assert_eq!(g.tensors()[1].data(), &[4.0]);
    }

    #[test]
    fn plateau_halves_once_after_three_bad_epochs() {
        let mut s = PlateauScheduler::new(1e-3, 1e-4, 3);
        let lrs: Vec<f64> = [5.0, 5.1, 5.2, 5.3].iter().map(|&v| s.observe(v)).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 5e-4]);
        assert_eq!(schedule_lr(&[5.0, 5.1, 5.2, 5.3], 1e-3, 1e-4, 3), 5e-4);
    }

    #[test]
    fn improving_losses_keep_lr() {
        let mut s = PlateauScheduler::new(1e-3, 1e-4, 3);
        for v in [5.0, 4.0, 3.0, 2.0, 1.0] {
            assert_eq!(s.observe(v), 1e-3);
        }
    }

    #[test]
    fn sustained_plateau_sequence() {
        let mut s = PlateauScheduler::new(1e-3, 1e-4, 3);
        s.observe(1.0);
        let mut seen = Vec::new();
        for _ in 0..18 {
            let before = s.lr;
            let lr = s.observe(1.0);
            if lr != before {
                seen.push(lr);
            }
        }
        assert_eq!(seen, vec![5e-4, 2.5e-4, 1.25e-4, 1e-4]);
        assert_eq!(s.lr, 1e-4);
    }

    #[test]
    fn batch_size_checks() {
        assert!(TrainConfig {
            lr_min: 1e-2,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            clip_norm: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn clipping_never_increases_norm(vals in prop::collection::vec(-20.0f64..20.0, 1..12), clip in 0.1f64..10.0) {
            let mut g = Params::from_entries(vec![("x".into(), Tensor::new(&[vals.len()], vals.clone()).unwrap())]).unwrap();
            let before = global_norm(&g);
            clip_gradients(&mut g, clip);
            let after = global_norm(&g);
            prop_assert!(after <= before * (1.0 + 1e-12));
            if before <= clip {
                prop_assert_eq!(g.tensors()[0].data(), vals.as_slice());
            }
        }

        #[test]
        fn stateless_matches_stateful(vals in prop::collection::vec(0.0f64..3.0, 1..30)) {
            let mut s = PlateauScheduler::new(1e-3, 1e-4, 3);
            let mut lr = 1e-3;
            for k in 0..vals.len() {
                let a = s.observe(vals[k]);
                lr = schedule_lr(&vals[..=k], lr, 1e-4, 3);
                prop_assert_eq!(a, lr);
                prop_assert!(lr >= 1e-4);
            }
        }
    }
}
