//! Positional-gap compression for decoding past the training context.
//!
//! Gaps of at most [`LOCAL_GAP`] between neighbouring retained states are
//! kept as is; longer gaps `g` shrink to `ln(ln(g))`. Total positions are
//! cumulative sums over the current retained set, so they are recomputed
//! whenever that set changes.
//!
//! Note the rule is not monotone in `g`: `g = 10` maps to 10 while `g = 11`
//! maps to about 0.875.

use crate::error::{Error, Result};

pub const LOCAL_GAP: usize = 10;

pub fn remap_gap(g: usize) -> Result<f64> {
    match g {
        0 => Err(Error::ZeroGap),
        g if g <= LOCAL_GAP => Ok(g as f64),
        g => Ok((g as f64).ln().ln()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemappedPositions {
    /// `(original, remapped)` per retained state, in list order.
    pub entries: Vec<(usize, f64)>,
}

impl RemappedPositions {
    pub fn remapped(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn span(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.1)
    }
}

/// The first retained state sits at 0; each later one at the previous
/// remapped position plus [`remap_gap`] of the original gap.
pub fn remap_positions(retained: &[usize]) -> Result<RemappedPositions> {
    let mut entries = Vec::with_capacity(retained.len());
    let mut acc = 0.0f64;
    for (i, &p) in retained.iter().enumerate() {
        if i > 0 {
            let prev = retained[i - 1];
            if p <= prev {
                return Err(Error::NonIncreasing { index: i });
            }
            acc += remap_gap(p - prev)?;
        }
        entries.push((p, acc));
    }
    Ok(RemappedPositions { entries })
}
