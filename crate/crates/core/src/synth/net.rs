use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{AttentionCache, AttentionParams};
use super::lstm::{LstmParams, LstmState, LstmStepCache};
use super::mdn::{mdn_params, sample_pen_step};
use super::{Alphabet, PenStep, SynthConfig, NUM_LAYERS, PEN_DIM};
use crate::error::{Error, Result};
use crate::tensorfile::TensorFile;

/// Window advance per step the attention head starts with.
const INITIAL_WINDOW_ADVANCE: f64 = 0.25;

/// Stacked-LSTM generator parameters.
///
/// Layer `l` reads `[pen, window, h_{l-1}]` (layer 0 reads `[pen, window_{t-1}]`),
/// the attention head reads layer 0's output, and the mixture head reads all
/// three layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthNet {
    pub config: SynthConfig,
    pub layers: Vec<LstmParams>,
    pub attention: AttentionParams,
    pub output_weights: Vec<DMatrix<f64>>,
    pub output_bias: DVector<f64>,
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub layers: Vec<LstmState>,
    pub kappa: DVector<f64>,
    pub window: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StepCache {
    pub layers: Vec<LstmStepCache>,
    pub attention: AttentionCache,
    pub raw: DVector<f64>,
}

impl StepCache {
    pub fn hidden(&self, layer: usize) -> &DVector<f64> {
        &self.layers[layer].h
    }
}

impl SynthNet {
    pub fn zeros(config: SynthConfig) -> Self {
        let n = config.units_per_layer;
        let layers = (0..NUM_LAYERS)
            .map(|l| LstmParams::zeros(config.layer_input_dim(l), n))
            .collect();
        let attention = AttentionParams::zeros(n, config.attention_components);
        let output_weights = (0..NUM_LAYERS)
            .map(|_| DMatrix::zeros(config.output_dim(), n))
            .collect();
        let output_bias = DVector::zeros(config.output_dim());
        Self {
            config,
            layers,
            attention,
            output_weights,
            output_bias,
        }
    }

    pub fn new_random(config: SynthConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.units_per_layer;
        let mut net = Self::zeros(config);
        for l in 0..NUM_LAYERS {
            net.layers[l] = LstmParams::random(net.config.layer_input_dim(l), n, &mut rng);
        }
        net.attention = AttentionParams::random(
            n,
            net.config.attention_components,
            INITIAL_WINDOW_ADVANCE,
            &mut rng,
        );
        let bound = 1.0 / ((NUM_LAYERS * n) as f64).sqrt();
        for w in &mut net.output_weights {
            w.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone())
    }

    pub fn initial_state(&self) -> NetState {
        let n = self.config.units_per_layer;
        NetState {
            layers: (0..NUM_LAYERS).map(|_| LstmState::zeros(n)).collect(),
            kappa: DVector::zeros(self.config.attention_components),
            window: DVector::zeros(self.config.alphabet.len()),
        }
    }

    /// All parameter tensors in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w_in.as_slice());
            out.push(l.w_rec.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.attention.weight.as_slice());
        out.push(self.attention.bias.as_slice());
        for w in &self.output_weights {
            out.push(w.as_slice());
        }
        out.push(self.output_bias.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_in.as_mut_slice());
            out.push(l.w_rec.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.attention.weight.as_mut_slice());
        out.push(self.attention.bias.as_mut_slice());
        for w in &mut self.output_weights {
            out.push(w.as_mut_slice());
        }
        out.push(self.output_bias.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// One forward step. Does not mutate `state`; see [`NetState::advance`].
    pub fn step(&self, state: &NetState, x: &PenStep, charseq: &DMatrix<f64>) -> StepCache {
        let pen = x.as_input();
        let a = self.config.alphabet.len();
        let n = self.config.units_per_layer;

        let mut in0 = DVector::zeros(PEN_DIM + a);
        in0.rows_mut(0, PEN_DIM).copy_from_slice(&pen);
        in0.rows_mut(PEN_DIM, a).copy_from(&state.window);
        let c0 = self.layers[0].forward(in0, &state.layers[0]);

        let attention = self.attention.forward(&c0.h, &state.kappa, charseq);

        let mut caches = vec![c0];
        for l in 1..NUM_LAYERS {
            let mut input = DVector::zeros(PEN_DIM + a + n);
            input.rows_mut(0, PEN_DIM).copy_from_slice(&pen);
            input.rows_mut(PEN_DIM, a).copy_from(&attention.window);
            input.rows_mut(PEN_DIM + a, n).copy_from(&caches[l - 1].h);
            let c = self.layers[l].forward(input, &state.layers[l]);
            caches.push(c);
        }

        let mut raw = self.output_bias.clone();
        for (w, c) in self.output_weights.iter().zip(&caches) {
            raw.gemv(1.0, w, &c.h, 1.0);
        }
        StepCache {
            layers: caches,
            attention,
            raw,
        }
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.push_meta("kind", "synth-net");
        f.push_meta("units_per_layer", self.config.units_per_layer);
        f.push_meta("mixture_components", self.config.mixture_components);
        f.push_meta("attention_components", self.config.attention_components);
        f.push_meta(
            "alphabet",
            serde_json::to_string(&self.config.alphabet.as_string()).expect("string encodes"),
        );
        for (l, p) in self.layers.iter().enumerate() {
            f.push(&format!("layer{l}.w_in"), &p.w_in);
            f.push(&format!("layer{l}.w_rec"), &p.w_rec);
            f.push_vec(&format!("layer{l}.bias"), p.bias.as_slice());
        }
        f.push("attention.weight", &self.attention.weight);
        f.push_vec("attention.bias", self.attention.bias.as_slice());
        for (l, w) in self.output_weights.iter().enumerate() {
            f.push(&format!("output.w{l}"), w);
        }
        f.push_vec("output.bias", self.output_bias.as_slice());
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let alphabet: String = serde_json::from_str(f.meta("alphabet")?)?;
        let config = SynthConfig {
            num_layers: NUM_LAYERS,
            units_per_layer: f.meta_parse("units_per_layer")?,
            mixture_components: f.meta_parse("mixture_components")?,
            attention_components: f.meta_parse("attention_components")?,
            alphabet: Alphabet::new(&alphabet)?,
        };
        config.validate()?;
        let n = config.units_per_layer;
        let mut net = Self::zeros(config);
        for l in 0..NUM_LAYERS {
            let input = net.config.layer_input_dim(l);
            net.layers[l].w_in = f.tensor_shaped(&format!("layer{l}.w_in"), 4 * n, input)?;
            net.layers[l].w_rec = f.tensor_shaped(&format!("layer{l}.w_rec"), 4 * n, n)?;
            net.layers[l].bias = f
                .tensor_shaped(&format!("layer{l}.bias"), 4 * n, 1)?
                .column(0)
                .into_owned();
        }
        let k3 = 3 * net.config.attention_components;
        net.attention.weight = f.tensor_shaped("attention.weight", k3, n)?;
        net.attention.bias = f.tensor_shaped("attention.bias", k3, 1)?.column(0).into_owned();
        let out = net.config.output_dim();
        for l in 0..NUM_LAYERS {
            net.output_weights[l] = f.tensor_shaped(&format!("output.w{l}"), out, n)?;
        }
        net.output_bias = f.tensor_shaped("output.bias", out, 1)?.column(0).into_owned();
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

impl NetState {
    pub fn advance(&mut self, cache: &StepCache) {
        for (s, c) in self.layers.iter_mut().zip(&cache.layers) {
            s.h.copy_from(&c.h);
            s.c.copy_from(&c.c);
        }
        self.kappa.copy_from(&cache.attention.kappa);
        self.window.copy_from(&cache.attention.window);
    }
}

/// A real pen sequence and its transcription used to prime the network.
#[derive(Debug, Clone, Copy)]
pub struct Priming<'a> {
    pub strokes: &'a [PenStep],
    pub text: &'a str,
}

/// Output of one sampling run. Rows of every matrix are sampled timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub strokes: Vec<PenStep>,
    /// Hidden vector of each layer, T×n.
    pub activations: Vec<DMatrix<f64>>,
    /// Window weights over the target text positions, T×|text|.
    pub attention_trace: DMatrix<f64>,
    /// Window centers, T×K.
    pub kappa_trace: DMatrix<f64>,
}

fn rows_to_matrix(rows: &[DVector<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |t, j| rows[t][j])
}

/// Samples handwriting for `text`.
///
/// With priming, the network is first teacher-forced over the priming strokes
/// against `priming.text + text`; those steps are not recorded. Sampling stops
/// once the furthest window center passes the last character (kappa > U - 0.5)
/// or after `max_steps` sampled points.
pub fn synthesize(
    net: &SynthNet,
    text: &str,
    priming: Option<Priming<'_>>,
    seed: u64,
    max_steps: usize,
) -> Result<Synthesis> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let alphabet = &net.config.alphabet;
    let target = alphabet.encode(text)?;
    let mut full = match priming {
        Some(p) => alphabet.encode(p.text)?,
        None => Vec::new(),
    };
    let offset = full.len();
    full.extend_from_slice(&target);
    let u_len = full.len();
    let charseq = alphabet.one_hot(&full);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = net.initial_state();
    let mut input = PenStep::start();
    if let Some(p) = priming {
        if let Some((last, rest)) = p.strokes.split_last() {
            for x in std::iter::once(&input).chain(rest) {
                let cache = net.step(&state, x, &charseq);
                state.advance(&cache);
            }
            input = *last;
        }
    }

    let n = net.config.units_per_layer;
    let k = net.config.attention_components;
    let mut strokes = Vec::new();
    let mut hidden: Vec<Vec<DVector<f64>>> = vec![Vec::new(); NUM_LAYERS];
    let mut trace = Vec::new();
    let mut kappas = Vec::new();
    for _ in 0..max_steps {
        let cache = net.step(&state, &input, &charseq);
        state.advance(&cache);
        for (l, rows) in hidden.iter_mut().enumerate() {
            rows.push(cache.hidden(l).clone());
        }
        trace.push(cache.attention.phi.rows(offset, target.len()).into_owned());
        kappas.push(cache.attention.kappa.clone());
        let params = mdn_params(cache.raw.as_slice());
        input = sample_pen_step(&params, &mut rng);
        strokes.push(input);
        let kappa_max = cache.attention.kappa.max();
        if kappa_max > u_len as f64 - 0.5 {
            break;
        }
    }
    if strokes.is_empty() {
        return Err(Error::NoStepsSampled);
    }
    Ok(Synthesis {
        strokes,
        activations: hidden.iter().map(|rows| rows_to_matrix(rows, n)).collect(),
        attention_trace: rows_to_matrix(&trace, target.len()),
        kappa_trace: rows_to_matrix(&kappas, k),
    })
}
