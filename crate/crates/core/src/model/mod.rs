//! The narrow-band separation network.
//!
//! One network is shared by every STFT frequency. It maps a normalised
//! `2M x T` sequence (real and imaginary rows of each microphone) to a
//! `2N x T` sequence (real and imaginary rows of each speaker):
//!
//! ```text
//! Conv1d(k=4) -> L1 x [ x' = x + Drop(RPSA(LN(x)))
//!                       x'' = SiLU(Linear(LN(x')))
//!                       x'''_j = SiLU(GN(GroupConv(x'''_{j-1})))   j = 1..L2
//!                       x = Drop(Linear(Drop(x'''_L2))) ]
//!             -> Conv1dT(k=4)
//! ```
//!
//! Activations are laid out `[F, T, H]` so a whole utterance (every
//! frequency) runs as one batch.

mod attention;
mod binding;
mod checkpoint;
mod infer;
mod network;
mod params;

pub use attention::{attention_maps, AttentionMaps};
pub use binding::{bind, output_sequences, SeparatedSpectra};
pub use checkpoint::Checkpoint;
pub use infer::{network_outputs, separate, separate_wave, stack_sequences, Precision};
pub use network::{forward, relative_encoding, self_attention, ForwardOutput, ModelVars};
pub use params::{parameter_count, ParamInit, Params};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Microphones `M`.
    pub n_mics: usize,
    /// Speakers `N`.
    pub n_speakers: usize,
    /// Block width `H1`.
    pub h1: usize,
    /// Feed-forward inner width `H2`.
    pub h2: usize,
    /// Conformer blocks `L1`.
    pub l1: usize,
    /// Group-convolution layers per block `L2`.
    pub l2: usize,
    pub heads: usize,
    /// Groups of the convolutions and group norms inside the feed-forward.
    pub groups: usize,
    /// Kernel of the input and output convolutions.
    pub k_io: usize,
    /// Kernel of the group convolutions.
    pub k_conv: usize,
    pub dropout: f64,
    /// Add `x'` back after the feed-forward module.
    pub ffn_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mics: 8,
            n_speakers: 2,
            h1: 192,
            h2: 384,
            l1: 4,
            l2: 3,
            heads: 8,
            groups: 8,
            k_io: 4,
            k_conv: 3,
            dropout: 0.1,
            ffn_residual: false,
        }
    }
}

impl ModelConfig {
    /// Small network used for gradient checks and reference comparisons.
    pub fn tiny() -> Self {
        Self {
            n_mics: 2,
            n_speakers: 2,
            h1: 8,
            h2: 16,
            l1: 1,
            l2: 1,
            heads: 2,
            groups: 8,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Two-channel network used by the overfitting probe.
    pub fn probe() -> Self {
        Self {
            n_mics: 2,
            n_speakers: 2,
            h1: 32,
            h2: 64,
            l1: 2,
            l2: 2,
            heads: 4,
            groups: 8,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_mics == 0 || self.n_speakers == 0 {
            return fail("need at least one microphone and one speaker".into());
        }
        if self.h1 == 0 || self.heads == 0 || !self.h1.is_multiple_of(self.heads) {
            return fail(format!("h1 = {} not divisible by heads = {}", self.h1, self.heads));
        }
        if self.h2 == 0 || self.groups == 0 || !self.h2.is_multiple_of(self.groups) {
            return fail(format!("h2 = {} not divisible by groups = {}", self.h2, self.groups));
        }
        if self.k_io == 0 {
            return fail("k_io must be positive".into());
        }
        if self.k_conv.is_multiple_of(2) {
            return fail(format!("k_conv = {} must be odd", self.k_conv));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.h1 / self.heads
    }

    pub fn input_rows(&self) -> usize {
        2 * self.n_mics
    }

    pub fn output_rows(&self) -> usize {
        2 * self.n_speakers
    }
}
