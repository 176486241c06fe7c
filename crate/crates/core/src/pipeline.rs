//! End-to-end experiment: corpus, training, the priming × text × seed sampling
//! grid, per-layer GPFA, condition statistics and figures.
//!
//! Every random stream is seeded by [`derive_seed`] from the master seed, a
//! stream tag and a counter, so a run is reproducible from its config alone.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    fit_condition_gaussian, kl_matrix, segment_by_character, style_separation_test, CharSegment, KlMode,
    StyleSeparation, DEFAULT_RIDGE,
};
use crate::datamodel::{write_trial_bundle, ConditionLabel, StyleDescriptor, TrialBundle, TrialRecord};
use crate::error::{Error, Result};
use crate::gpfa::{self, FitReport, GpfaModel, GpfaOptions};
use crate::plot;
use crate::preprocess::{drop_degenerate_units, filter_trial, select_units, PreprocessReport, DEFAULT_VAR_FLOOR};
use crate::tensorfile::TensorFile;
use crate::synth::{
    gen_corpus, synthesize, train, CorpusOptions, Optimizer, Priming, StyleParams, SynthConfig, SynthNet,
    TrainOptions, NUM_LAYERS,
};

pub const STREAM_CORPUS: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_SAMPLE: u64 = 4;
pub const STREAM_GPFA: u64 = 5;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

pub const DEFAULT_TEXTS: [&str; 3] = [
    "The Whole Earth Catalog,",
    "stay hungry, stay foolish.",
    "It was their farewell message",
];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream`:
/// `splitmix64(splitmix64(master ^ splitmix64(stream)) + index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// Style table for the priming writers. The first four are fixed; further
/// ones cycle through slants and scales.
pub fn priming_styles(n: usize) -> Vec<StyleParams> {
    const FIXED: [(f64, f64, f64); 4] = [(0.4, 1.0, 2.0), (-0.4, 1.5, 1.0), (0.0, 0.7, 2.0), (0.8, 1.2, 1.0)];
    (0..n)
        .map(|i| {
            let (slant, scale, speed) = FIXED.get(i).copied().unwrap_or_else(|| {
                let j = i - FIXED.len();
                (-0.6 + 0.3 * (j % 5) as f64, 0.8 + 0.2 * (j % 4) as f64, if j.is_multiple_of(2) { 1.0 } else { 2.0 })
            });
            StyleParams {
                slant,
                scale,
                speed,
                jitter: 0.02,
                base_glyph_seed: 7,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of priming styles.
    pub styles: usize,
    /// Adds the unprimed condition (style id 0).
    pub include_unprimed: bool,
    /// Target texts before restriction to the alphabet.
    pub texts: Vec<String>,
    pub seeds_per_condition: usize,
    pub latent_dim: usize,
    pub top_k: usize,
    /// Sampling cap per target character.
    pub max_steps_per_char: usize,
    pub var_floor: f64,
    pub ridge: f64,
    pub kl_mode: KlMode,
    /// Characters whose trajectory segments are plotted.
    pub plot_chars: String,
    pub synth: SynthConfig,
    pub corpus: CorpusOptions,
    pub train: TrainOptions,
    pub gpfa: GpfaOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            styles: 4,
            include_unprimed: true,
            texts: DEFAULT_TEXTS.iter().map(|s| s.to_string()).collect(),
            seeds_per_condition: 8,
            latent_dim: 8,
            top_k: 3,
            max_steps_per_char: 12,
            var_floor: DEFAULT_VAR_FLOOR,
            ridge: DEFAULT_RIDGE,
            kl_mode: KlMode::Directed,
            plot_chars: "ah".into(),
            synth: SynthConfig::default(),
            corpus: CorpusOptions::default(),
            train: TrainOptions {
                epochs: 30,
                learning_rate: 0.005,
                batch_size: 16,
                optimizer: Optimizer::adam(),
                ..TrainOptions::default()
            },
            gpfa: GpfaOptions {
                seg_length: 20,
                ..GpfaOptions::default()
            },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.styles == 0 {
            return Err(Error::InvalidArgument("at least one priming style is required".into()));
        }
        if self.seeds_per_condition == 0 {
            return Err(Error::InvalidArgument("seeds_per_condition must be >= 1".into()));
        }
        if self.texts.is_empty() {
            return Err(Error::InvalidArgument("no target texts".into()));
        }
        for t in &self.texts {
            if self.synth.alphabet.restrict(t).is_empty() {
                return Err(Error::InvalidArgument(format!("text {t:?} has no symbol in the alphabet")));
            }
        }
        if self.latent_dim == 0 || self.top_k == 0 || self.top_k > self.latent_dim {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= top_k ({}) <= latent_dim ({})",
                self.top_k, self.latent_dim
            )));
        }
        if self.max_steps_per_char == 0 {
            return Err(Error::InvalidArgument("max_steps_per_char must be >= 1".into()));
        }
        if self.corpus.sequences_per_style < 2 {
            return Err(Error::InvalidArgument(
                "sequences_per_style must be >= 2 (one is held out for priming)".into(),
            ));
        }
        Ok(())
    }

    /// Style ids in grid order: 0 (unprimed) if enabled, then 1..=styles.
    pub fn style_ids(&self) -> Vec<u32> {
        let first = if self.include_unprimed { 0 } else { 1 };
        (first..=self.styles as u32).collect()
    }

    /// Texts restricted to the alphabet: lowercased, other symbols dropped.
    pub fn mapped_texts(&self) -> Vec<String> {
        self.texts.iter().map(|t| self.synth.alphabet.restrict(t)).collect()
    }

    pub fn trials_per_layer(&self) -> usize {
        self.style_ids().len() * self.texts.len() * self.seeds_per_condition
    }
}

pub fn style_name(style_id: u32) -> String {
    if style_id == 0 {
        "unprimed".into()
    } else {
        format!("style{style_id}")
    }
}

/// Result of a step that may fail without aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub corpus_sequences: usize,
    pub held_out: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub csv: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub preprocess: PreprocessReport,
    pub fit: FitReport,
    pub model: String,
    pub trajectories: String,
    pub kl: KlReport,
    pub style_separation: Outcome<StyleSeparation>,
    pub plots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub texts: Vec<String>,
    pub styles: Vec<StyleDescriptor>,
    pub trials_per_layer: usize,
    pub training: Option<TrainingSummary>,
    pub layers: Vec<LayerReport>,
    /// Paths relative to the output directory, in write order.
    pub artifacts: Vec<String>,
    /// Wall-clock stage durations; written to their own file so the report
    /// itself is reproducible byte for byte.
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

/// A fitted GPFA model together with the layer it describes and the units
/// removed before fitting, so new trials can be reduced the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub model: GpfaModel,
    pub layer: usize,
    pub dropped_units: Vec<usize>,
}

impl LayerModel {
    pub fn to_text(&self) -> String {
        let mut f = self.model.to_tensor_file();
        f.push_meta("layer", self.layer);
        let dropped: Vec<String> = self.dropped_units.iter().map(|u| u.to_string()).collect();
        f.push_meta("dropped_units", dropped.join(","));
        f.to_text()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = TensorFile::load(path)?;
        let dropped = f.meta("dropped_units")?;
        let dropped_units = if dropped.is_empty() {
            Vec::new()
        } else {
            dropped
                .split(',')
                .map(|u| u.parse().map_err(|_| Error::Parse(format!("bad dropped unit {u:?}"))))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            model: GpfaModel::from_tensor_file(&f)?,
            layer: f.meta_parse("layer")?,
            dropped_units,
        })
    }

    /// Median-filtered trials of this model's layer with the dropped units
    /// removed.
    pub fn prepare(&self, bundle: &TrialBundle) -> Vec<TrialRecord> {
        bundle
            .layer(self.layer)
            .map(|t| {
                let f = filter_trial(t);
                TrialRecord {
                    activations: select_units(&f.activations, &self.dropped_units),
                    ..f
                }
            })
            .collect()
    }
}

struct Run<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    report: RunReport,
}

impl Run<'_> {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<String> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.report.artifacts.push(rel.to_string());
        Ok(rel.to_string())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        });
        self.report.timings.push(Timing {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Runs the whole experiment into `out`, writing `report.json` even when a
/// stage fails (then flagged incomplete, with the error returned).
pub fn cmd_pipeline(config: &RunConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut styles: Vec<StyleDescriptor> = Vec::new();
    let params = priming_styles(config.styles);
    for id in config.style_ids() {
        styles.push(StyleDescriptor {
            style_id: id,
            name: style_name(id),
            params: (id > 0).then(|| params[id as usize - 1].clone()),
        });
    }
    let mut run = Run {
        config,
        out,
        report: RunReport {
            complete: false,
            error: None,
            config: config.clone(),
            texts: config.mapped_texts(),
            styles,
            trials_per_layer: config.trials_per_layer(),
            training: None,
            layers: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        },
    };
    let result = execute(&mut run, &params);
    let mut report = run.report;
    match &result {
        Ok(()) => report.complete = true,
        Err(e) => report.error = Some(e.to_string()),
    }
    report.artifacts.push(TIMINGS_FILE.into());
    let timings = serde_json::to_string_pretty(&report.timings)?;
    fs::write(out.join(TIMINGS_FILE), timings).map_err(|e| Error::io(out.join(TIMINGS_FILE), e))?;
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(out.join(REPORT_FILE), text + "\n").map_err(|e| Error::io(out.join(REPORT_FILE), e))?;
    result.map(|()| report)
}

fn execute(run: &mut Run<'_>, params: &[StyleParams]) -> Result<()> {
    let config = run.config;
    let alphabet = config.synth.alphabet.clone();
    let n_styles = params.len();

    let (train_set, held_out) = run.stage("corpus", |_| {
        let corpus = gen_corpus(params, &alphabet, &config.corpus, derive_seed(config.seed, STREAM_CORPUS, 0));
        let split = corpus.len() - n_styles;
        Ok((corpus[..split].to_vec(), corpus[split..].to_vec()))
    })?;

    let net = run.stage("train", |run| {
        let init = SynthNet::new_random(config.synth.clone(), derive_seed(config.seed, STREAM_INIT, 0))?;
        let opts = TrainOptions {
            seed: derive_seed(config.seed, STREAM_TRAIN, 0),
            ..config.train.clone()
        };
        let result = train(&init, &train_set, &opts)?;
        result.net.save(&run.out.join("net.txt"))?;
        run.report.artifacts.push("net.txt".into());
        run.report.training = Some(TrainingSummary {
            corpus_sequences: train_set.len(),
            held_out: held_out.len(),
            loss_curve: result.loss_curve,
        });
        Ok(result.net)
    })?;

    let texts = config.mapped_texts();
    let bundle = run.stage("sample", |run| {
        let mut trials = Vec::new();
        let mut counter = 0u64;
        for &style_id in &config.style_ids() {
            let primer = (style_id > 0).then(|| {
                let item = &held_out[style_id as usize - 1];
                (item.strokes.clone(), format!("{} ", item.text))
            });
            for (text_id, text) in texts.iter().enumerate() {
                for rep in 0..config.seeds_per_condition {
                    let seed = derive_seed(config.seed, STREAM_SAMPLE, counter);
                    counter += 1;
                    let priming = primer.as_ref().map(|(strokes, text)| Priming { strokes, text });
                    let max_steps = config.max_steps_per_char * text.chars().count();
                    let synth = synthesize(&net, text, priming, seed, max_steps)?;
                    let id = format!("{}-t{text_id}-r{rep}", style_name(style_id));
                    for (layer, acts) in synth.activations.into_iter().enumerate() {
                        trials.push(TrialRecord {
                            id: id.clone(),
                            condition: ConditionLabel::new(style_id, text_id as u32, seed),
                            layer_index: layer,
                            activations: acts,
                            attention_trace: Some(synth.attention_trace.clone()),
                        });
                    }
                }
            }
        }
        let bundle = TrialBundle {
            texts: texts.clone(),
            styles: run.report.styles.clone(),
            trials,
        };
        write_trial_bundle(&bundle, &run.out.join("bundle"))?;
        run.report.artifacts.push("bundle/manifest.json".into());
        Ok(bundle)
    })?;

    for layer in 0..NUM_LAYERS {
        let report = run.stage(&format!("layer{layer}"), |run| analyze_layer(run, &bundle, layer))?;
        run.report.layers.push(report);
    }
    Ok(())
}

fn analyze_layer(run: &mut Run<'_>, bundle: &TrialBundle, layer: usize) -> Result<LayerReport> {
    let config = run.config;
    let dir = format!("layer{layer}");
    let filtered: Vec<TrialRecord> = bundle.layer(layer).map(filter_trial).collect();
    let (trials, preprocess) = drop_degenerate_units(&filtered, config.var_floor)?;
    let mats: Vec<DMatrix<f64>> = trials.iter().map(|t| t.activations.clone()).collect();
    let opts = GpfaOptions {
        seed: derive_seed(config.seed, STREAM_GPFA, layer as u64),
        ..config.gpfa.clone()
    };
    let (model, fit) = gpfa::fit(&mats, config.latent_dim, &opts)?;
    let model_rel = format!("{dir}/gpfa_model.txt");
    let saved = LayerModel {
        model,
        layer,
        dropped_units: preprocess.dropped_units.clone(),
    };
    run.write(&model_rel, saved.to_text().as_bytes())?;
    let model = saved.model;

    let k = config.top_k;
    let projected: Vec<DMatrix<f64>> = mats
        .iter()
        .map(|y| gpfa::project(&model, y, k))
        .collect::<Result<_>>()?;
    let mut csv = String::from("trial,t");
    for d in 1..=k {
        csv.push_str(&format!(",dim{d}"));
    }
    csv.push('\n');
    for (trial, traj) in trials.iter().zip(&projected) {
        for (t, row) in traj.row_iter().enumerate() {
            csv.push_str(&format!("{},{t}", trial.id));
            for v in row.iter() {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    let traj_rel = run.write(&format!("{dir}/trajectories.csv"), csv.as_bytes())?;

    // Condition distributions in grid order.
    let mut labels = Vec::new();
    let mut conditions = Vec::new();
    for &style_id in &config.style_ids() {
        for text_id in 0..config.texts.len() as u32 {
            let members: Vec<DMatrix<f64>> = trials
                .iter()
                .zip(&projected)
                .filter(|(t, _)| t.condition.condition_key() == (style_id, text_id))
                .map(|(_, p)| p.clone())
                .collect();
            let name = format!("{}/text{text_id}", style_name(style_id));
            conditions.push((name, fit_condition_gaussian(&members, config.ridge)?));
            labels.push(ConditionLabel::new(style_id, text_id, 0));
        }
    }
    let kl = kl_matrix(&conditions, config.kl_mode)?;
    let csv_rel = run.write(&format!("{dir}/kl.csv"), plot::kl_csv(&kl).as_bytes())?;
    let svg_rel = run.write(
        &format!("{dir}/kl.svg"),
        plot::kl_heatmap_svg(&format!("layer {layer} KL divergence"), &kl).as_bytes(),
    )?;
    let style_separation = match style_separation_test(&kl, &labels) {
        Ok(s) => Outcome::Ok(s),
        Err(e) => Outcome::Error(e.to_string()),
    };

    let mut plots = Vec::new();
    for &style_id in &config.style_ids() {
        let selected: Vec<(String, DMatrix<f64>)> = trials
            .iter()
            .zip(&projected)
            .filter(|(t, _)| t.condition.condition_key() == (style_id, 0))
            .map(|(t, p)| (t.id.clone(), p.clone()))
            .collect();
        let title = format!("layer {layer} {} \"{}\"", style_name(style_id), bundle.texts[0]);
        let svg = plot::trajectories_svg(&title, &selected, k)?;
        plots.push(run.write(&format!("{dir}/trajectories_{}_text0.svg", style_name(style_id)), svg.as_bytes())?);
    }
    let chars: Vec<char> = config.plot_chars.chars().collect();
    if k >= 2 && !chars.is_empty() {
        for &style_id in &config.style_ids() {
            let mut segments: Vec<CharSegment> = Vec::new();
            for (trial, traj) in trials.iter().zip(&projected) {
                if trial.condition.style_id != style_id {
                    continue;
                }
                let Some(trace) = &trial.attention_trace else { continue };
                let text = &bundle.texts[trial.condition.text_id as usize];
                for &c in &chars {
                    segments.extend(segment_by_character(&trial.id, traj, trace, text, c)?);
                }
            }
            if segments.is_empty() {
                continue;
            }
            let title = format!("layer {layer} {}", style_name(style_id));
            let svg = plot::char_segments_svg(&title, &segments, &chars)?;
            plots.push(run.write(&format!("{dir}/chars_{}.svg", style_name(style_id)), svg.as_bytes())?);
        }
    }

    Ok(LayerReport {
        layer,
        preprocess,
        fit,
        model: model_rel,
        trajectories: traj_rel,
        kl: KlReport {
            labels: kl.labels.clone(),
            values: kl.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
            csv: csv_rel,
            svg: svg_rel,
        },
        style_separation,
        plots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(1, STREAM_SAMPLE, 0);
        assert_eq!(a, derive_seed(1, STREAM_SAMPLE, 0));
        assert_ne!(a, derive_seed(1, STREAM_SAMPLE, 1));
        assert_ne!(a, derive_seed(1, STREAM_TRAIN, 0));
        assert_ne!(a, derive_seed(2, STREAM_SAMPLE, 0));
    }

    #[test]
    fn default_grid_has_120_trials() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.style_ids(), vec![0, 1, 2, 3, 4]);
        assert_eq!(c.trials_per_layer(), 120);
        assert_eq!(
            c.mapped_texts(),
            vec!["the whole earth catalog", "stay hungry stay foolish", "it was their farewell message"]
        );
    }

    #[test]
    fn invalid_configs() {
        let bad = RunConfig {
            top_k: 9,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            texts: vec!["123".into()],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
