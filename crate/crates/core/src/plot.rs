//! SVG figures and CSV twins. Output bytes depend only on the inputs.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::analysis::{CharSegment, KlMatrix};
use crate::error::{Error, Result};

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 170.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

fn color(i: usize, n: usize) -> String {
    let hue = (i * 360) / n.max(1);
    format!("hsl({hue},70%,42%)")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

/// Range with a small pad; a degenerate range is widened to unit width.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn polyline(out: &mut String, points: &[(f64, f64)], stroke: &str) {
    let mut pts = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{x:.2},{y:.2}");
    }
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.2" points="{pts}"/>"#
    );
}

fn axes(out: &mut String, x0: f64, y0: f64, w: f64, h: f64, xlabel: &str, ylabel: &str, range_x: (f64, f64), range_y: (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        y0 + h + 28.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        x0 - 40.0,
        y0 + h / 2.0,
        x0 - 40.0,
        y0 + h / 2.0,
        escape(ylabel)
    );
    let _ = writeln!(out, r#"<text x="{x0:.2}" y="{:.2}" text-anchor="start">{:.3}</text>"#, y0 + h + 14.0, range_x.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, x0 + w, y0 + h + 14.0, range_x.1);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y0 + h, range_y.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y0 + 10.0, range_y.1);
}

/// One panel per leading dimension, one polyline per trial.
pub fn trajectories_svg(title: &str, trials: &[(String, DMatrix<f64>)], k: usize) -> Result<String> {
    if trials.is_empty() {
        return Err(Error::NoMatchingTrials);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("plot needs at least one dimension".into()));
    }
    if let Some((id, m)) = trials.iter().find(|(_, m)| m.ncols() < k) {
        return Err(Error::Shape(format!("trial {id} has {} dimensions, plot needs {k}", m.ncols())));
    }
    let t_max = trials.iter().map(|(_, m)| m.nrows()).max().unwrap_or(1).max(2) - 1;
    let inner_w = PANEL_W - MARGIN_L - MARGIN_R;
    let inner_h = PANEL_H - MARGIN_T - MARGIN_B;
    let height = PANEL_H * k as f64 + MARGIN_T;
    let mut out = String::new();
    header(&mut out, PANEL_W, height);
    let _ = writeln!(out, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, PANEL_W / 2.0, escape(title));
    for d in 0..k {
        let y0 = MARGIN_T + d as f64 * PANEL_H + MARGIN_T;
        let range = padded_range(trials.iter().flat_map(|(_, m)| m.column(d).iter().copied().collect::<Vec<_>>()));
        axes(&mut out, MARGIN_L, y0, inner_w, inner_h, "timestep", &format!("dim {}", d + 1), (0.0, t_max as f64), range);
        for (i, (_, m)) in trials.iter().enumerate() {
            let pts: Vec<(f64, f64)> = (0..m.nrows())
                .map(|t| {
                    let x = MARGIN_L + inner_w * t as f64 / t_max as f64;
                    let y = y0 + inner_h * (1.0 - (m[(t, d)] - range.0) / (range.1 - range.0));
                    (x, y)
                })
                .collect();
            polyline(&mut out, &pts, &color(i, trials.len()));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Heatmap of a KL matrix on a linear white-to-red scale from 0 to the
/// largest entry.
pub fn kl_heatmap_svg(title: &str, m: &KlMatrix) -> String {
    let n = m.labels.len();
    let cell = (480.0 / n.max(1) as f64).clamp(8.0, 40.0);
    let left = 130.0;
    let top = 130.0;
    let size = cell * n as f64;
    let width = left + size + 90.0;
    let height = top + size + 30.0;
    let max = m.values.iter().copied().fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, width / 2.0, escape(title));
    for i in 0..n {
        for j in 0..n {
            let v = m.values[(i, j)];
            let frac = if max > 0.0 { v / max } else { 0.0 };
            let level = (255.0 * (1.0 - frac)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb(255,{level},{level})"><title>{} | {}: {v}</title></rect>"#,
                left + j as f64 * cell,
                top + i as f64 * cell,
                escape(&m.labels[i]),
                escape(&m.labels[j])
            );
        }
    }
    for (i, label) in m.labels.iter().enumerate() {
        let c = i as f64 * cell + cell / 2.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 4.0, top + c + 4.0, escape(label));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="start" transform="rotate(-60 {:.2} {:.2})">{}</text>"#,
            left + c,
            top - 4.0,
            left + c,
            top - 4.0,
            escape(label)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">max {max}</text>"#, left + size + 8.0, top + 12.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">min 0</text>"#, left + size + 8.0, top + size);
    out.push_str("</svg>\n");
    out
}

/// CSV with the labels as header row and first column; values carry 17
/// significant digits.
pub fn kl_csv(m: &KlMatrix) -> String {
    let mut out = String::from("condition");
    for label in &m.labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (i, label) in m.labels.iter().enumerate() {
        out.push_str(label);
        for j in 0..m.labels.len() {
            let _ = write!(out, ",{:.16e}", m.values[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_kl_csv(text: &str) -> Result<KlMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty KL CSV".into()))?;
    let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("KL CSV has fewer than {n} rows")))?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 || fields[0] != labels[i] {
            return Err(Error::Parse(format!("malformed KL CSV row {}", i + 1)));
        }
        for j in 0..n {
            values[(i, j)] = fields[j + 1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad KL value {:?}", fields[j + 1])))?;
        }
    }
    Ok(KlMatrix { labels, values })
}

/// One panel per character plotting dimension 1 against dimension 2, one
/// polyline per segment.
pub fn char_segments_svg(title: &str, segments: &[CharSegment], chars: &[char]) -> Result<String> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no character segments to plot".into()));
    }
    if chars.is_empty() {
        return Err(Error::EmptyInput("no characters to plot".into()));
    }
    if let Some(s) = segments.iter().find(|s| s.values.ncols() < 2) {
        return Err(Error::Shape(format!("segment of {} has fewer than 2 dimensions", s.trial_id)));
    }
    let side = 300.0;
    let inner = side - MARGIN_L - MARGIN_R;
    let width = side * chars.len() as f64;
    let height = side + MARGIN_T;
    let range_x = padded_range(segments.iter().flat_map(|s| s.values.column(0).iter().copied().collect::<Vec<_>>()));
    let range_y = padded_range(segments.iter().flat_map(|s| s.values.column(1).iter().copied().collect::<Vec<_>>()));
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, width / 2.0, escape(title));
    for (ci, &c) in chars.iter().enumerate() {
        let x0 = ci as f64 * side + MARGIN_L;
        let y0 = MARGIN_T + 20.0;
        let h = inner - 20.0;
        axes(&mut out, x0, y0, inner, h, "dim 1", "dim 2", range_x, range_y);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">'{}'</text>"#, x0 + inner / 2.0, y0 - 6.0, escape(&c.to_string()));
        let stroke = color(ci, chars.len());
        for s in segments.iter().filter(|s| s.character == c) {
            let pts: Vec<(f64, f64)> = s
                .values
                .row_iter()
                .map(|r| {
                    (
                        x0 + inner * (r[0] - range_x.0) / (range_x.1 - range_x.0),
                        y0 + h * (1.0 - (r[1] - range_y.0) / (range_y.1 - range_y.0)),
                    )
                })
                .collect();
            polyline(&mut out, &pts, &stroke);
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(n: usize, k: usize) -> Vec<(String, DMatrix<f64>)> {
        (0..n)
            .map(|i| (format!("r{i}"), DMatrix::from_fn(10 + i, k, |t, d| ((t + d + i) as f64).sin())))
            .collect()
    }

    #[test]
    fn eight_trials_three_dims_give_24_polylines() {
        let svg = trajectories_svg("x", &trials(8, 4), 3).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 24);
        assert!(svg.contains("timestep") && svg.contains("dim 3"));
        assert_eq!(svg, trajectories_svg("x", &trials(8, 4), 3).unwrap());
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert!(matches!(trajectories_svg("x", &[], 3), Err(Error::NoMatchingTrials)));
    }

    #[test]
    fn zero_matrix_heatmap() {
        let m = KlMatrix {
            labels: vec!["a".into(), "b".into()],
            values: DMatrix::zeros(2, 2),
        };
        let svg = kl_heatmap_svg("kl", &m);
        assert!(svg.contains(">max 0<"));
        assert_eq!(svg.matches("rgb(255,255,255)").count(), 4);
    }

    #[test]
    fn kl_csv_round_trip_is_exact() {
        let n = 15;
        let m = KlMatrix {
            labels: (0..n).map(|i| format!("c{i}")).collect(),
            values: DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 / 3.0 + (i * n + j) as f64 * std::f64::consts::PI }),
        };
        assert_eq!(parse_kl_csv(&kl_csv(&m)).unwrap(), m);
        assert_eq!(kl_heatmap_svg("kl", &m).matches("<rect x=").count(), n * n);
    }

    #[test]
    fn one_segment_one_polyline() {
        let seg = CharSegment {
            trial_id: "r0".into(),
            character: 'a',
            t_start: 2,
            t_end: 6,
            values: DMatrix::from_fn(4, 3, |t, d| (t * d) as f64),
        };
        let svg = char_segments_svg("s", &[seg], &['a', 'h']).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(char_segments_svg("s", &[], &['a']).is_err());
    }
}
