use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::CorpusItem;
use super::mdn::mdn_nll_grad;
use super::net::{StepCache, SynthNet};
use super::{PenStep, NUM_LAYERS, PEN_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Sequences per update; 0 means the whole corpus.
    pub batch_size: usize,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            seed: 0,
            batch_size: 0,
            clip_norm: 10.0,
            optimizer: Optimizer::Sgd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: SynthNet,
    /// Mean per-step NLL of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Teacher-forcing inputs and targets: inputs are the start token followed by
/// every point but the last; targets are all points.
fn inputs_for(item: &CorpusItem) -> Vec<PenStep> {
    std::iter::once(PenStep::start())
        .chain(item.strokes[..item.strokes.len() - 1].iter().copied())
        .collect()
}

fn check_item(net: &SynthNet, item: &CorpusItem) -> Result<DMatrix<f64>> {
    if item.strokes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training sequence {:?} has fewer than 2 points",
            item.text
        )));
    }
    let alphabet = &net.config.alphabet;
    Ok(alphabet.one_hot(&alphabet.encode(&item.text)?))
}

fn forward(net: &SynthNet, item: &CorpusItem, charseq: &DMatrix<f64>) -> Vec<StepCache> {
    let mut state = net.initial_state();
    inputs_for(item)
        .iter()
        .map(|x| {
            let cache = net.step(&state, x, charseq);
            state.advance(&cache);
            cache
        })
        .collect()
}

/// Mean next-step NLL of one sequence.
pub fn sequence_loss(net: &SynthNet, item: &CorpusItem) -> Result<f64> {
    let charseq = check_item(net, item)?;
    let caches = forward(net, item, &charseq);
    let total: f64 = caches
        .iter()
        .zip(&item.strokes)
        .map(|(c, target)| mdn_nll_grad(c.raw.as_slice(), target).0)
        .sum();
    Ok(total / item.strokes.len() as f64)
}

/// Backpropagation through time over one sequence. Adds `scale` times the
/// gradient of the summed NLL into `grads` and returns the summed NLL.
pub fn sequence_loss_grad(
    net: &SynthNet,
    item: &CorpusItem,
    grads: &mut SynthNet,
    scale: f64,
) -> Result<f64> {
    let charseq = check_item(net, item)?;
    let caches = forward(net, item, &charseq);
    let n = net.config.units_per_layer;
    let a = net.config.alphabet.len();

    let mut dh_next: Vec<DVector<f64>> = vec![DVector::zeros(n); NUM_LAYERS];
    let mut dc_next: Vec<DVector<f64>> = vec![DVector::zeros(n); NUM_LAYERS];
    let mut dwindow_next = DVector::zeros(a);
    let mut dkappa = DVector::zeros(net.config.attention_components);
    let mut total = 0.0;

    for (cache, target) in caches.iter().zip(&item.strokes).rev() {
        let (nll, g) = mdn_nll_grad(cache.raw.as_slice(), target);
        total += nll;
        let dy = DVector::from_vec(g) * scale;

        let mut dh: Vec<DVector<f64>> = Vec::with_capacity(NUM_LAYERS);
        for l in 0..NUM_LAYERS {
            grads.output_weights[l].ger(1.0, &dy, &cache.layers[l].h, 1.0);
            dh.push(net.output_weights[l].tr_mul(&dy) + &dh_next[l]);
        }
        grads.output_bias += &dy;

        let mut dwindow = dwindow_next.clone();
        for l in (1..NUM_LAYERS).rev() {
            let (din, dhp, dcp) =
                net.layers[l].backward(&cache.layers[l], &dh[l], &dc_next[l], &mut grads.layers[l]);
            dwindow += din.rows(PEN_DIM, a);
            dh[l - 1] += din.rows(PEN_DIM + a, n);
            dh_next[l] = dhp;
            dc_next[l] = dcp;
        }

        dh[0] += net.attention.backward(
            &cache.attention,
            &dwindow,
            &charseq,
            &mut dkappa,
            &mut grads.attention,
        );

        let (din, dhp, dcp) =
            net.layers[0].backward(&cache.layers[0], &dh[0], &dc_next[0], &mut grads.layers[0]);
        dwindow_next = din.rows(PEN_DIM, a).into_owned();
        dh_next[0] = dhp;
        dc_next[0] = dcp;
    }
    Ok(total)
}

fn global_norm(grads: &SynthNet) -> f64 {
    grads
        .param_slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

struct AdamState {
    m: SynthNet,
    v: SynthNet,
    t: i32,
}

fn apply_update(
    net: &mut SynthNet,
    grads: &SynthNet,
    opts: &TrainOptions,
    adam: &mut Option<AdamState>,
) {
    let lr = opts.learning_rate;
    match opts.optimizer {
        Optimizer::Sgd => {
            for (p, g) in net.param_slices_mut().into_iter().zip(grads.param_slices()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: grads.zeros_like(),
                v: grads.zeros_like(),
                t: 0,
            });
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            let params = net.param_slices_mut();
            let ms = state.m.param_slices_mut();
            let vs = state.v.param_slices_mut();
            for (((p, g), m), v) in params.into_iter().zip(grads.param_slices()).zip(ms).zip(vs) {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Minimizes mean next-step NLL by full-sequence BPTT with global-norm
/// clipping. Sequence order is reshuffled each epoch from `opts.seed`.
pub fn train(net: &SynthNet, corpus: &[CorpusItem], opts: &TrainOptions) -> Result<TrainResult> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    for item in corpus {
        check_item(net, item)?;
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let batch = if opts.batch_size == 0 {
        corpus.len()
    } else {
        opts.batch_size
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut adam = None;
    let mut loss_curve = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(batch) {
            let steps: usize = chunk.iter().map(|&i| corpus[i].strokes.len()).sum();
            let mut grads = net.zeros_like();
            for &i in chunk {
                epoch_loss += sequence_loss_grad(&net, &corpus[i], &mut grads, 1.0 / steps as f64)?;
            }
            epoch_steps += steps;
            let norm = global_norm(&grads);
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            if norm > opts.clip_norm {
                let s = opts.clip_norm / norm;
                for g in grads.param_slices_mut() {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
            apply_update(&mut net, &grads, opts, &mut adam);
        }
        let mean = epoch_loss / epoch_steps as f64;
        if !mean.is_finite() || !net.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_curve.push(mean);
    }
    Ok(TrainResult { net, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Alphabet, SynthConfig};

    fn item(text: &str, n: usize) -> CorpusItem {
        let strokes = (0..n)
            .map(|i| {
                let t = i as f64;
                PenStep::new(0.3 + 0.2 * (0.7 * t).sin(), 0.5 * (1.3 * t).cos(), i % 4 == 3)
            })
            .collect();
        CorpusItem {
            strokes,
            text: text.into(),
            style_id: 1,
        }
    }

    fn tiny_net(seed: u64) -> SynthNet {
        let config = SynthConfig {
            units_per_layer: 4,
            mixture_components: 2,
            attention_components: 2,
            alphabet: Alphabet::new("ab ").unwrap(),
            ..SynthConfig::default()
        };
        SynthNet::new_random(config, seed).unwrap()
    }

    #[test]
    fn bptt_matches_central_differences() {
        let mut net = tiny_net(5);
        // Sharpen the window so the attention path carries real gradient.
        net.attention.bias[2] = 0.5;
        net.attention.bias[3] = 0.2;
        let seq = item("ab ba", 10);
        let mut grads = net.zeros_like();
        let steps = seq.strokes.len() as f64;
        sequence_loss_grad(&net, &seq, &mut grads, 1.0 / steps).unwrap();
        let analytic: Vec<f64> = grads.param_slices().concat();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut index = 0;
        let n_tensors = net.param_slices().len();
        for t in 0..n_tensors {
            let len = net.param_slices()[t].len();
            for i in 0..len {
                let orig = net.param_slices()[t][i];
                net.param_slices_mut()[t][i] = orig + h;
                let plus = sequence_loss(&net, &seq).unwrap();
                net.param_slices_mut()[t][i] = orig - h;
                let minus = sequence_loss(&net, &seq).unwrap();
                net.param_slices_mut()[t][i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let a = analytic[index];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5);
                worst = worst.max(rel);
                index += 1;
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn loss_decreases_with_training() {
        let net = tiny_net(1);
        let corpus: Vec<CorpusItem> = (0..20)
            .map(|k| {
                let mut it = item(if k % 2 == 0 { "ab" } else { "ba" }, 8 + k % 5);
                it.strokes.iter_mut().for_each(|s| s.dx += 0.05 * k as f64);
                it
            })
            .collect();
        let opts = TrainOptions {
            epochs: 200,
            learning_rate: 0.05,
            ..TrainOptions::default()
        };
        let result = train(&net, &corpus, &opts).unwrap();
        assert_eq!(result.loss_curve.len(), 200);
        assert!(result.loss_curve.iter().all(|l| l.is_finite()));
        assert!(result.loss_curve.last().unwrap() < &result.loss_curve[0]);
    }

    #[test]
    fn short_sequences_rejected() {
        let net = SynthNet::new_random(SynthConfig::default(), 0).unwrap();
        assert!(sequence_loss(&net, &item("ab", 1)).is_err());
        assert!(train(&net, &[], &TrainOptions::default()).is_err());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let config = SynthConfig {
            units_per_layer: 3,
            mixture_components: 1,
            attention_components: 1,
            alphabet: Alphabet::new("ab").unwrap(),
            ..SynthConfig::default()
        };
        let net = SynthNet::new_random(config, 0).unwrap();
        let opts = TrainOptions {
            epochs: 3,
            learning_rate: f64::NAN,
            ..TrainOptions::default()
        };
        let err = train(&net, &[item("ab", 6)], &opts).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0 }), "{err}");
        assert!(err.to_string().contains("divergence"));
    }
}
