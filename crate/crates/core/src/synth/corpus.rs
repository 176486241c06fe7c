//! Synthetic multi-writer stroke corpus.
//!
//! Every letter has a polyline template drawn from `base_glyph_seed`. A style
//! shears (slant), scales and subdivides (speed) the template offsets and adds
//! Gaussian jitter. A space is a single pen-up move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Alphabet, PenStep};

/// Subdivisions of each template segment at speed 1.
const BASE_SUBDIVISIONS: f64 = 2.0;
const SPACE_ADVANCE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Horizontal shear applied per unit of vertical movement.
    pub slant: f64,
    pub scale: f64,
    /// Higher speed draws each segment with fewer, longer steps.
    pub speed: f64,
    /// Standard deviation of additive offset noise.
    pub jitter: f64,
    pub base_glyph_seed: u64,
}

impl StyleParams {
    pub fn subdivisions(&self) -> usize {
        ((BASE_SUBDIVISIONS / self.speed).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub strokes: Vec<PenStep>,
    pub text: String,
    /// 1-based index into the style list.
    pub style_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    pub sequences_per_style: usize,
    pub words_per_sequence: usize,
    /// Inclusive range of letters per word.
    pub chars_per_word: (usize, usize),
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            sequences_per_style: 40,
            words_per_sequence: 3,
            chars_per_word: (2, 5),
        }
    }
}

/// Template segments (dx, dy) for one symbol. Letters get two or three
/// pen-down segments that return to the baseline; the last one ends the
/// stroke.
pub fn glyph_template(c: char, base_glyph_seed: u64) -> Vec<(f64, f64)> {
    if c == ' ' {
        return vec![(SPACE_ADVANCE, 0.0)];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base_glyph_seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let segments = rng.gen_range(2..=3);
    let mut out = Vec::with_capacity(segments);
    let mut height = 0.0;
    for _ in 0..segments - 1 {
        let dx = rng.gen_range(0.1..0.6);
        let dy = rng.gen_range(-1.0..1.0);
        height += dy;
        out.push((dx, dy));
    }
    out.push((rng.gen_range(0.1..0.6), -height));
    out
}

/// Renders `text` in a style. Jitter draws come from `rng`.
pub fn render_text<R: Rng>(text: &str, style: &StyleParams, rng: &mut R) -> Vec<PenStep> {
    let reps = style.subdivisions();
    let noise = Normal::new(0.0, style.jitter.max(0.0)).expect("finite jitter");
    let mut strokes = Vec::new();
    for c in text.chars() {
        let template = glyph_template(c, style.base_glyph_seed);
        let last = template.len() - 1;
        for (k, &(dx, dy)) in template.iter().enumerate() {
            let sx = style.scale * (dx + style.slant * dy) / reps as f64;
            let sy = style.scale * dy / reps as f64;
            for r in 0..reps {
                let (jx, jy) = if style.jitter > 0.0 {
                    (noise.sample(rng), noise.sample(rng))
                } else {
                    (0.0, 0.0)
                };
                let pen_up = c == ' ' || (k == last && r == reps - 1);
                strokes.push(PenStep::new(sx + jx, sy + jy, pen_up));
            }
        }
    }
    strokes
}

fn random_text<R: Rng>(alphabet: &Alphabet, opts: &CorpusOptions, rng: &mut R) -> String {
    let letters: Vec<char> = alphabet.symbols().iter().copied().filter(|c| *c != ' ').collect();
    let (lo, hi) = opts.chars_per_word;
    let mut text = String::new();
    for w in 0..opts.words_per_sequence {
        if w > 0 && alphabet.contains(' ') {
            text.push(' ');
        }
        for _ in 0..rng.gen_range(lo..=hi.max(lo)) {
            text.push(letters[rng.gen_range(0..letters.len())]);
        }
    }
    text
}

/// Generates `sequences_per_style` items per style, interleaved by style.
/// Style ids are 1-based. Deterministic in `seed`.
pub fn gen_corpus(
    styles: &[StyleParams],
    alphabet: &Alphabet,
    opts: &CorpusOptions,
    seed: u64,
) -> Vec<CorpusItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(styles.len() * opts.sequences_per_style);
    for _ in 0..opts.sequences_per_style {
        for (s, style) in styles.iter().enumerate() {
            let text = random_text(alphabet, opts, &mut rng);
            let strokes = render_text(&text, style, &mut rng);
            items.push(CorpusItem {
                strokes,
                text,
                style_id: s as u32 + 1,
            });
        }
    }
    items
}
