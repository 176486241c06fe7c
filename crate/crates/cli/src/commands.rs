use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use neurotraj::analysis::{
    fit_condition_gaussian, kl_matrix, segment_by_character, style_separation_test, CharSegment, KlMode,
};
use neurotraj::datamodel::{read_trial_bundle, write_trial_bundle, ConditionLabel, StyleDescriptor, TrialBundle, TrialRecord};
use neurotraj::gpfa::{self, GpfaOptions};
use neurotraj::pipeline::{
    cmd_pipeline, derive_seed, priming_styles, style_name, LayerModel, RunConfig, STREAM_CORPUS, STREAM_GPFA,
    STREAM_INIT, STREAM_SAMPLE, STREAM_TRAIN,
};
use neurotraj::plot;
use neurotraj::preprocess::{drop_degenerate_units, filter_trial};
use neurotraj::synth::{gen_corpus, synthesize, train, CorpusItem, Priming, SynthNet, TrainOptions};
use neurotraj::Error;

use crate::args::{Cli, Command, Common, Overrides, PlotKind};

pub enum CliError {
    /// Bad flags, config file or argument values.
    Usage(String),
    /// A stage ran and failed.
    Failed(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failed(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(common: &Common, over: &Overrides) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let bad = |e: String| CliError::Usage(format!("bad config {}: {e}", path.display()));
            let file: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let mut merged = serde_json::to_value(RunConfig::default()).map_err(|e| bad(e.to_string()))?;
            merge(&mut merged, serde_json::to_value(file).map_err(|e| bad(e.to_string()))?);
            serde_json::from_value(merged).map_err(|e| bad(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(v) = over.styles {
        config.styles = v;
    }
    if over.no_unprimed {
        config.include_unprimed = false;
    }
    if !over.texts.is_empty() {
        config.texts = over.texts.clone();
    }
    if let Some(v) = over.seeds_per_condition {
        config.seeds_per_condition = v;
    }
    if let Some(v) = over.latent_dim {
        config.latent_dim = v;
    }
    if let Some(v) = over.top_k {
        config.top_k = v;
    }
    if let Some(v) = over.units {
        config.synth.units_per_layer = v;
    }
    if let Some(v) = over.sequences_per_style {
        config.corpus.sequences_per_style = v;
    }
    if let Some(v) = over.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = over.learning_rate {
        config.train.learning_rate = v;
    }
    if let Some(v) = over.gpfa_max_iter {
        config.gpfa.max_iter = v;
    }
    if let Some(v) = over.seg_length {
        config.gpfa.seg_length = v;
    }
    if over.jeffreys {
        config.kl_mode = KlMode::Jeffreys;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Overlays `over` onto `base` table by table, so a partial section keeps the
/// run defaults for the keys it leaves out. Tagged tables (with `kind`) are
/// replaced whole.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if !o.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn write_file(out: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Failed(Error::Io { path: out.into(), source: e }))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Failed(Error::Io { path: path.clone(), source: e }))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

/// Corpus of the configured styles; the last item of each style is held out.
fn corpus_split(config: &RunConfig) -> (Vec<CorpusItem>, Vec<CorpusItem>) {
    let styles = priming_styles(config.styles);
    let corpus = gen_corpus(
        &styles,
        &config.synth.alphabet,
        &config.corpus,
        derive_seed(config.seed, STREAM_CORPUS, 0),
    );
    let split = corpus.len() - styles.len();
    (corpus[..split].to_vec(), corpus[split..].to_vec())
}

fn load_bundle(path: &Path) -> CliResult<TrialBundle> {
    Ok(read_trial_bundle(path)?)
}

fn load_model(path: &Path) -> CliResult<LayerModel> {
    Ok(LayerModel::load(path)?)
}

fn project_all(m: &LayerModel, trials: &[TrialRecord], k: usize) -> CliResult<Vec<DMatrix<f64>>> {
    if k == 0 || k > m.model.latent_dim() {
        return Err(CliError::Usage(format!(
            "k must lie in 1..={}",
            m.model.latent_dim()
        )));
    }
    Ok(trials
        .iter()
        .map(|t| gpfa::project(&m.model, &t.activations, k))
        .collect::<neurotraj::Result<_>>()?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Corpus { common, over } => {
            let config = load_config(&common, &over)?;
            let (train_set, held_out) = corpus_split(&config);
            write_file(&common.out, "corpus.json", &to_json(&train_set)?)?;
            write_file(&common.out, "held_out.json", &to_json(&held_out)?)?;
            write_file(&common.out, "styles.json", &to_json(&priming_styles(config.styles))?)?;
        }
        Command::Train { common, over, corpus } => {
            let config = load_config(&common, &over)?;
            let items: Vec<CorpusItem> = match corpus {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| CliError::Usage(format!("cannot read corpus {}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad corpus: {e}")))?
                }
                None => corpus_split(&config).0,
            };
            let init = SynthNet::new_random(config.synth.clone(), derive_seed(config.seed, STREAM_INIT, 0))?;
            let opts = TrainOptions {
                seed: derive_seed(config.seed, STREAM_TRAIN, 0),
                ..config.train.clone()
            };
            let result = train(&init, &items, &opts)?;
            result.net.save(&common.out.join("net.txt"))?;
            println!("wrote {}", common.out.join("net.txt").display());
            write_file(&common.out, "loss.json", &to_json(&result.loss_curve)?)?;
        }
        Command::Sample { common, over, net, style, count } => {
            let config = load_config(&common, &over)?;
            if style as usize > config.styles {
                return Err(CliError::Usage(format!("style must lie in 0..={}", config.styles)));
            }
            let net = SynthNet::load(&net)?;
            let (_, held_out) = corpus_split(&config);
            let primer = (style > 0).then(|| {
                let item = &held_out[style as usize - 1];
                (item.strokes.clone(), format!("{} ", item.text))
            });
            let texts = config.mapped_texts();
            let mut trials = Vec::new();
            let mut strokes = BTreeMap::new();
            for (text_id, text) in texts.iter().enumerate() {
                for rep in 0..count {
                    let seed = derive_seed(config.seed, STREAM_SAMPLE, (text_id * count + rep) as u64);
                    let priming = primer.as_ref().map(|(s, t)| Priming { strokes: s, text: t });
                    let max_steps = config.max_steps_per_char * text.chars().count();
                    let s = synthesize(&net, text, priming, seed, max_steps)?;
                    let id = format!("{}-t{text_id}-r{rep}", style_name(style));
                    strokes.insert(id.clone(), s.strokes.clone());
                    for (layer, acts) in s.activations.into_iter().enumerate() {
                        trials.push(TrialRecord {
                            id: id.clone(),
                            condition: ConditionLabel::new(style, text_id as u32, seed),
                            layer_index: layer,
                            activations: acts,
                            attention_trace: Some(s.attention_trace.clone()),
                        });
                    }
                }
            }
            let bundle = TrialBundle {
                texts,
                styles: vec![StyleDescriptor {
                    style_id: style,
                    name: style_name(style),
                    params: (style > 0).then(|| priming_styles(config.styles)[style as usize - 1].clone()),
                }],
                trials,
            };
            write_trial_bundle(&bundle, &common.out.join("bundle"))?;
            println!("wrote {}", common.out.join("bundle").display());
            write_file(&common.out, "strokes.json", &to_json(&strokes)?)?;
        }
        Command::Preprocess { common, bundle, layer } => {
            let b = load_bundle(&bundle)?;
            let filtered: Vec<TrialRecord> = b.layer(layer).map(filter_trial).collect();
            if filtered.is_empty() {
                return Err(CliError::Failed(Error::NoMatchingTrials));
            }
            let (trials, report) = drop_degenerate_units(&filtered, neurotraj::preprocess::DEFAULT_VAR_FLOOR)?;
            let out = TrialBundle {
                texts: b.texts.clone(),
                styles: b.styles.clone(),
                trials,
            };
            write_trial_bundle(&out, &common.out.join("bundle"))?;
            write_file(&common.out, "preprocess.json", &to_json(&report)?)?;
        }
        Command::GpfaFit { common, over, bundle, layer } => {
            let config = load_config(&common, &over)?;
            let b = load_bundle(&bundle)?;
            let filtered: Vec<TrialRecord> = b.layer(layer).map(filter_trial).collect();
            if filtered.is_empty() {
                return Err(CliError::Failed(Error::NoMatchingTrials));
            }
            let (trials, report) = drop_degenerate_units(&filtered, config.var_floor)?;
            let mats: Vec<DMatrix<f64>> = trials.iter().map(|t| t.activations.clone()).collect();
            let opts = GpfaOptions {
                seed: derive_seed(config.seed, STREAM_GPFA, layer as u64),
                ..config.gpfa.clone()
            };
            let (model, fit) = gpfa::fit(&mats, config.latent_dim, &opts)?;
            let saved = LayerModel {
                model,
                layer,
                dropped_units: report.dropped_units.clone(),
            };
            write_file(&common.out, "gpfa_model.txt", &saved.to_text())?;
            write_file(
                &common.out,
                "fit.json",
                &to_json(&serde_json::json!({ "preprocess": report, "fit": fit }))?,
            )?;
        }
        Command::Project { common, bundle, model, k } => {
            let m = load_model(&model)?;
            let b = load_bundle(&bundle)?;
            let trials = m.prepare(&b);
            let projected = project_all(&m, &trials, k)?;
            let mut csv = String::from("trial,t");
            for d in 1..=k {
                csv.push_str(&format!(",dim{d}"));
            }
            csv.push('\n');
            for (t, p) in trials.iter().zip(&projected) {
                for (i, row) in p.row_iter().enumerate() {
                    csv.push_str(&format!("{},{i}", t.id));
                    for v in row.iter() {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
            }
            write_file(&common.out, "trajectories.csv", &csv)?;
        }
        Command::Analyze { common, over, bundle, model } => {
            let config = load_config(&common, &over)?;
            let m = load_model(&model)?;
            let b = load_bundle(&bundle)?;
            let trials = m.prepare(&b);
            let projected = project_all(&m, &trials, config.top_k)?;
            let mut groups: BTreeMap<(u32, u32), Vec<DMatrix<f64>>> = BTreeMap::new();
            for (t, p) in trials.iter().zip(projected) {
                groups.entry(t.condition.condition_key()).or_default().push(p);
            }
            let mut conditions = Vec::new();
            let mut labels = Vec::new();
            for ((style, text), trajs) in &groups {
                conditions.push((
                    format!("{}/text{text}", style_name(*style)),
                    fit_condition_gaussian(trajs, config.ridge)?,
                ));
                labels.push(ConditionLabel::new(*style, *text, 0));
            }
            let kl = kl_matrix(&conditions, config.kl_mode)?;
            write_file(&common.out, "kl.csv", &plot::kl_csv(&kl))?;
            write_file(&common.out, "kl.svg", &plot::kl_heatmap_svg("KL divergence", &kl))?;
            let separation = match style_separation_test(&kl, &labels) {
                Ok(s) => serde_json::json!({ "ok": s }),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            };
            write_file(&common.out, "analysis.json", &to_json(&serde_json::json!({ "style_separation": separation }))?)?;
        }
        Command::Plot { common, kind, bundle, model, kl_csv, style, text_id, k, chars } => match kind {
            PlotKind::Kl => {
                let path = kl_csv.ok_or_else(|| CliError::Usage("--kl-csv is required for --kind kl".into()))?;
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                let m = plot::parse_kl_csv(&text)?;
                write_file(&common.out, "kl.svg", &plot::kl_heatmap_svg("KL divergence", &m))?;
            }
            PlotKind::Trajectories | PlotKind::Chars => {
                let (Some(bundle), Some(model)) = (bundle, model) else {
                    return Err(CliError::Usage("--bundle and --model are required".into()));
                };
                let m = load_model(&model)?;
                let b = load_bundle(&bundle)?;
                let trials: Vec<TrialRecord> = m
                    .prepare(&b)
                    .into_iter()
                    .filter(|t| style.is_none_or(|s| t.condition.style_id == s))
                    .filter(|t| text_id.is_none_or(|x| t.condition.text_id == x))
                    .collect();
                if trials.is_empty() {
                    return Err(CliError::Failed(Error::NoMatchingTrials));
                }
                let projected = project_all(&m, &trials, k)?;
                if kind == PlotKind::Trajectories {
                    let selected: Vec<(String, DMatrix<f64>)> =
                        trials.iter().map(|t| t.id.clone()).zip(projected).collect();
                    let svg = plot::trajectories_svg(&format!("layer {}", m.layer), &selected, k)?;
                    write_file(&common.out, "trajectories.svg", &svg)?;
                } else {
                    let symbols: Vec<char> = chars.chars().collect();
                    let mut segments: Vec<CharSegment> = Vec::new();
                    for (t, p) in trials.iter().zip(&projected) {
                        let Some(trace) = &t.attention_trace else { continue };
                        let text = b.texts.get(t.condition.text_id as usize).ok_or_else(|| {
                            CliError::Failed(Error::Manifest(format!("trial {} has no text", t.id)))
                        })?;
                        for &c in &symbols {
                            segments.extend(segment_by_character(&t.id, p, trace, text, c)?);
                        }
                    }
                    let svg = plot::char_segments_svg(&format!("layer {}", m.layer), &segments, &symbols)?;
                    write_file(&common.out, "chars.svg", &svg)?;
                }
            }
        },
        Command::Pipeline { common, over } => {
            let config = load_config(&common, &over)?;
            let report = cmd_pipeline(&config, &common.out)?;
            for layer in &report.layers {
                match &layer.style_separation {
                    neurotraj::pipeline::Outcome::Ok(s) => println!(
                        "layer {}: within {:.4} across {:.4} p {:.3e}",
                        layer.layer,
                        s.within_mean,
                        s.across_mean,
                        s.test.p_value
                    ),
                    neurotraj::pipeline::Outcome::Error(e) => println!("layer {}: {e}", layer.layer),
                }
            }
            for t in &report.timings {
                println!("{:>8.1}s {}", t.seconds, t.stage);
            }
            println!("wrote {}", common.out.join("report.json").display());
        }
    }
    Ok(())
}
