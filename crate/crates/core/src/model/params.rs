use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// Every parameter of a config in canonical order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, ParamInit)> {
    use ParamInit::*;
    let (h1, h2) = (cfg.h1, cfg.h2);
    let (m2, n2) = (cfg.input_rows(), cfg.output_rows());
    let d = cfg.head_dim();
    let cg = h2 / cfg.groups;
    let mut out = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));

    add("input_conv.weight".into(), vec![h1, m2, cfg.k_io], FanIn(m2 * cfg.k_io));
    add("input_conv.bias".into(), vec![h1], Zeros);
    for i in 0..cfg.l1 {
        let b = format!("blocks.{i}");
        add(format!("{b}.attn_norm.weight"), vec![h1], Ones);
        add(format!("{b}.attn_norm.bias"), vec![h1], Zeros);
        for p in ["q", "k", "v"] {
            add(format!("{b}.attn.{p}.weight"), vec![h1, h1], FanIn(h1));
        }
        add(format!("{b}.attn.out.weight"), vec![h1, h1], FanIn(h1));
        add(format!("{b}.attn.out.bias"), vec![h1], Zeros);
        add(format!("{b}.attn.pos.weight"), vec![h1, h1], FanIn(h1));
        add(format!("{b}.attn.pos_bias_u"), vec![cfg.heads, d], Zeros);
        add(format!("{b}.attn.pos_bias_v"), vec![cfg.heads, d], Zeros);
        add(format!("{b}.ffn_norm.weight"), vec![h1], Ones);
        add(format!("{b}.ffn_norm.bias"), vec![h1], Zeros);
        add(format!("{b}.ffn.linear1.weight"), vec![h1, h2], FanIn(h1));
        add(format!("{b}.ffn.linear1.bias"), vec![h2], Zeros);
        for j in 0..cfg.l2 {
            add(format!("{b}.ffn.convs.{j}.weight"), vec![h2, cg, cfg.k_conv], FanIn(cg * cfg.k_conv));
            add(format!("{b}.ffn.convs.{j}.bias"), vec![h2], Zeros);
            add(format!("{b}.ffn.gnorms.{j}.weight"), vec![h2], Ones);
            add(format!("{b}.ffn.gnorms.{j}.bias"), vec![h2], Zeros);
        }
        add(format!("{b}.ffn.linear2.weight"), vec![h2, h1], FanIn(h2));
        add(format!("{b}.ffn.linear2.bias"), vec![h1], Zeros);
    }
    add("output_conv.weight".into(), vec![h1, n2, cfg.k_io], FanIn(n2 * cfg.k_io));
    add("output_conv.bias".into(), vec![n2], Zeros);
    out
}

/// Named `f64` master copies of every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor<f64>>,
    index: HashMap<String, usize>,
}

impl Params {
    /// Freshly initialised parameters; deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    ParamInit::FanIn(fan) => {
                        let b = 1.0 / (fan as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-b..b)).collect()
                    }
                    ParamInit::Zeros => vec![0.0; n],
                    ParamInit::Ones => vec![1.0; n],
                };
                (name, Tensor::new(&shape, data).expect("layout shape"))
            })
            .collect();
        Self::from_entries(entries)
    }

    /// Parameters with every entry drawn from `U(-scale, scale)` around the
    /// init value, norms and biases included.
    pub fn random(cfg: &ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        let mut p = Self::init(cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for t in &mut p.tensors {
            for v in t.data_mut() {
                *v += rng.random_range(-scale..scale);
            }
        }
        Ok(p)
    }

    pub fn from_entries(entries: Vec<(String, Tensor<f64>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Data(format!("parameter {name} listed twice")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            names,
            tensors,
            index,
        })
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        Self::from_entries(entries).expect("names already unique")
    }

    /// Error unless the names and shapes are exactly those of `cfg`, in order.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        if expected.len() != self.len() {
            return Err(Error::Data(format!(
                "config needs {} parameters, found {}",
                expected.len(),
                self.len()
            )));
        }
        for ((name, shape, _), (n, t)) in expected.iter().zip(self.iter()) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "expected {name} {shape:?}, found {n} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Reorder to canonical layout order; fails on missing or extra names.
    pub fn canonical(mut self, cfg: &ModelConfig) -> Result<Self> {
        let mut entries = Vec::new();
        for (name, shape, _) in layout(cfg) {
            let i = self
                .index
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("missing parameter {name}")))?;
            let t = std::mem::replace(&mut self.tensors[i], Tensor::zeros(&[0]));
            if t.shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            entries.push((name, t));
        }
        if let Some(extra) = self.index.keys().next() {
            return Err(Error::Data(format!("unexpected parameter {extra}")));
        }
        Self::from_entries(entries)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f64>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Scalar parameter count of a config without allocating it.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    layout(cfg)
        .iter()
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum()
}
