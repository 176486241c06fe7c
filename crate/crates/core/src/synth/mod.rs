//! Handwriting-style sequence generator: three stacked LSTM layers fed with pen
//! offsets, a Gaussian attention window over the target characters, and a
//! bivariate mixture-density output head. Includes primed sampling, a BPTT
//! trainer and a synthetic multi-style stroke corpus.

mod attention;
mod corpus;
mod lstm;
mod mdn;
mod net;
mod train;

pub use attention::{attention_step, window_weights, AttentionCache, AttentionParams, AttentionState};
pub use corpus::{gen_corpus, glyph_template, render_text, CorpusItem, CorpusOptions, StyleParams};
pub use lstm::{lstm_step, LstmParams, LstmState, LstmStepCache};
pub use mdn::{mdn_nll, mdn_nll_grad, mdn_params, sample_pen_step, MixtureParams};
pub use net::{synthesize, NetState, Priming, StepCache, SynthNet, Synthesis};
pub use train::{sequence_loss, sequence_loss_grad, train, Optimizer, TrainOptions, TrainResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of recurrent layers; fixed to match the reference architecture.
pub const NUM_LAYERS: usize = 3;

/// Width of the pen input vector (dx, dy, pen_up).
pub const PEN_DIM: usize = 3;

/// One pen movement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenStep {
    pub dx: f64,
    pub dy: f64,
    /// Set on the last point of a stroke.
    pub pen_up: bool,
}

impl PenStep {
    pub fn new(dx: f64, dy: f64, pen_up: bool) -> Self {
        Self { dx, dy, pen_up }
    }

    /// Input fed to the network before the first real point.
    pub fn start() -> Self {
        Self::new(0.0, 0.0, true)
    }

    pub fn as_input(&self) -> [f64; PEN_DIM] {
        [self.dx, self.dy, if self.pen_up { 1.0 } else { 0.0 }]
    }
}

/// Ordered character set; index = one-hot position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::new("abcdefghijklmnopqrstuvwxyz ").expect("default alphabet is valid")
    }
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let chars: Vec<char> = symbols.chars().collect();
        if chars.is_empty() {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate alphabet symbol {c:?}"
                )));
            }
        }
        Ok(Self { chars })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.chars
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c)
    }

    pub fn symbol(&self, index: usize) -> char {
        self.chars[index]
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c).is_some()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(Error::OutsideAlphabet(c)))
            .collect()
    }

    /// Maps free text onto the alphabet: lowercases, then drops symbols the
    /// alphabet lacks (punctuation in the default texts).
    pub fn restrict(&self, text: &str) -> String {
        text.chars()
            .flat_map(char::to_lowercase)
            .filter(|c| self.contains(*c))
            .collect()
    }

    /// U×A one-hot encoding of an index sequence.
    pub fn one_hot(&self, indices: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(indices.len(), self.len());
        for (u, &a) in indices.iter().enumerate() {
            m[(u, a)] = 1.0;
        }
        m
    }
}

impl Serialize for Alphabet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Alphabet::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Network sizes. The reference network used 400 units per layer; the desk
/// default is 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_layers: usize,
    pub units_per_layer: usize,
    pub mixture_components: usize,
    pub attention_components: usize,
    pub alphabet: Alphabet,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_layers: NUM_LAYERS,
            units_per_layer: 32,
            mixture_components: 5,
            attention_components: 3,
            alphabet: Alphabet::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers != NUM_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "num_layers must be {NUM_LAYERS}, got {}",
                self.num_layers
            )));
        }
        if self.units_per_layer == 0 || self.mixture_components == 0 || self.attention_components == 0 {
            return Err(Error::InvalidArgument(
                "unit, mixture and attention counts must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Length of the raw mixture-density output vector.
    pub fn output_dim(&self) -> usize {
        1 + 6 * self.mixture_components
    }

    /// Input width of layer `l` (pen, window, and the layer below when l > 0).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        let base = PEN_DIM + self.alphabet.len();
        if l == 0 {
            base
        } else {
            base + self.units_per_layer
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restrict_maps_default_texts() {
        let a = Alphabet::default();
        assert_eq!(a.restrict("The Whole Earth Catalog,"), "the whole earth catalog");
        assert_eq!(a.restrict("stay hungry, stay foolish."), "stay hungry stay foolish");
        assert_eq!(
            a.restrict("It was their farewell message"),
            "it was their farewell message"
        );
    }

    #[test]
    fn encode_rejects_foreign_symbols() {
        let a = Alphabet::new("ab").unwrap();
        assert_eq!(a.encode("ba").unwrap(), vec![1, 0]);
        assert!(matches!(a.encode("abc"), Err(Error::OutsideAlphabet('c'))));
    }
}
