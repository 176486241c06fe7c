use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A maximal run of timesteps during which attention sits on one character.
#[derive(Debug, Clone, PartialEq)]
pub struct CharSegment {
    pub trial_id: String,
    pub character: char,
    pub t_start: usize,
    /// Exclusive.
    pub t_end: usize,
    /// Trajectory rows `t_start..t_end`.
    pub values: DMatrix<f64>,
}

/// Splits a trajectory into the runs whose attended character is `target`.
/// Each timestep is assigned to the text position of maximal attention weight,
/// the lowest position winning ties.
pub fn segment_by_character(
    trial_id: &str,
    trajectory: &DMatrix<f64>,
    attention_trace: &DMatrix<f64>,
    text: &str,
    target: char,
) -> Result<Vec<CharSegment>> {
    let chars: Vec<char> = text.chars().collect();
    if attention_trace.ncols() != chars.len() {
        return Err(Error::Shape(format!(
            "attention trace has {} columns for a text of {} characters",
            attention_trace.ncols(),
            chars.len()
        )));
    }
    if attention_trace.nrows() != trajectory.nrows() {
        return Err(Error::Shape(format!(
            "attention trace has {} rows, trajectory has {}",
            attention_trace.nrows(),
            trajectory.nrows()
        )));
    }
    let hits: Vec<bool> = attention_trace
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (u, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = u;
                }
            }
            !chars.is_empty() && chars[best] == target
        })
        .collect();

    let mut segments = Vec::new();
    let mut t = 0;
    while t < hits.len() {
        if !hits[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < hits.len() && hits[t] {
            t += 1;
        }
        segments.push(CharSegment {
            trial_id: trial_id.to_string(),
            character: target,
            t_start: start,
            t_end: t,
            values: trajectory.rows(start, t - start).into_owned(),
        });
    }
    Ok(segments)
}
