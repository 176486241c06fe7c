//! Behaviour of a small trained generator.

use neurotraj::pipeline::priming_styles;
use neurotraj::synth::{gen_corpus, synthesize, train, CorpusOptions, Optimizer, SynthConfig, SynthNet, TrainOptions};

fn toy_net() -> SynthNet {
    let config = SynthConfig {
        units_per_layer: 16,
        ..SynthConfig::default()
    };
    let corpus = gen_corpus(
        &priming_styles(4),
        &config.alphabet,
        &CorpusOptions {
            sequences_per_style: 20,
            ..CorpusOptions::default()
        },
        3,
    );
    let init = SynthNet::new_random(config, 4).unwrap();
    let opts = TrainOptions {
        epochs: 20,
        learning_rate: 0.005,
        batch_size: 16,
        seed: 5,
        optimizer: Optimizer::adam(),
        ..TrainOptions::default()
    };
    let result = train(&init, &corpus, &opts).unwrap();
    assert!(result.loss_curve.last() < result.loss_curve.first());
    result.net
}

/// Mean number of steps during which each character holds the largest
/// window weight.
fn mean_dwell(net: &SynthNet, text: &str, seeds: std::ops::Range<u64>) -> f64 {
    let mut per_char = Vec::new();
    for seed in seeds {
        let s = synthesize(net, text, None, seed, 12 * text.len()).unwrap();
        let trace = &s.attention_trace;
        let mut counts = vec![0usize; trace.ncols()];
        for row in trace.row_iter() {
            counts[row.transpose().iamax()] += 1;
        }
        per_char.extend(counts.into_iter().map(|c| c as f64));
    }
    per_char.iter().sum::<f64>() / per_char.len() as f64
}

#[test]
fn dwell_time_is_comparable_across_texts() {
    let net = toy_net();
    let a = mean_dwell(&net, "aa", 0..8);
    let b = mean_dwell(&net, "bb", 100..108);
    assert!(a > 0.0 && b > 0.0);
    let ratio = a / b;
    assert!((0.5..=1.5).contains(&ratio), "dwell aa {a:.2} vs bb {b:.2}");
}
