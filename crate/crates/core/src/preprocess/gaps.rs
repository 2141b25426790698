// SPDX-License-Identifier: MIT OR Apache-2.0

//! Grid alignment, trimming and gap filling.

use serde::{Deserialize, Serialize};

use crate::data::{Label, RawRecording, Sample};
use crate::error::{Error, Result};

/// Samples dropped from the start of every series.
pub const TRIM_HEAD: usize = 500;
/// Samples dropped from the end of every series.
pub const TRIM_TAIL: usize = 50;
/// Series shorter than this after trimming are discarded.
pub const MIN_LENGTH: usize = 500;

/// Both channels placed on one sampling grid; `None` marks a missing sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecording {
    pub id: String,
    pub label: Label,
    pub rate_hz: f64,
    pub start_time_s: f64,
    pub mbp: Vec<Option<f64>>,
    pub hr: Vec<Option<f64>>,
    pub marker_index: Option<usize>,
}

impl GridRecording {
    pub fn len(&self) -> usize {
        self.mbp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mbp.is_empty()
    }
}

/// Gap-free, aligned recording in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilledRecording {
    pub id: String,
    pub label: Label,
    pub rate_hz: f64,
    pub mbp: Vec<f64>,
    pub hr: Vec<f64>,
    pub marker_index: Option<usize>,
}

/// Places both channels on the grid spanning the union of their time
/// extents at `rate_hz`.
pub fn align_to_grid(raw: &RawRecording, rate_hz: f64) -> GridRecording {
    let (start, end) = raw.time_span().unwrap_or((0.0, 0.0));
    let index = |t: f64| ((t - start) * rate_hz).round().max(0.0) as usize;
    let n = if raw.mbp.is_empty() && raw.hr.is_empty() {
        0
    } else {
        index(end) + 1
    };
    let place = |samples: &[Sample]| {
        let mut out = vec![None; n];
        for s in samples {
            out[index(s.time_s)] = Some(s.value);
        }
        out
    };
    GridRecording {
        id: raw.id.clone(),
        label: raw.label,
        rate_hz,
        start_time_s: start,
        mbp: place(&raw.mbp),
        hr: place(&raw.hr),
        marker_index: raw
            .marker_time
            .map(index)
            .filter(|&m| m < n),
    }
}

/// Aligns, then removes the first [`TRIM_HEAD`] and last [`TRIM_TAIL`] grid
/// samples. Returns `None` when fewer than [`MIN_LENGTH`] samples remain.
pub fn trim_series(raw: &RawRecording, rate_hz: f64) -> Option<GridRecording> {
    trim_grid(align_to_grid(raw, rate_hz), TRIM_HEAD, TRIM_TAIL, MIN_LENGTH)
}

pub fn trim_grid(
    grid: GridRecording,
    head: usize,
    tail: usize,
    min_length: usize,
) -> Option<GridRecording> {
    let n = grid.len();
    let kept = n.checked_sub(head + tail)?;
    if kept < min_length {
        return None;
    }
    let range = head..n - tail;
    Some(GridRecording {
        start_time_s: grid.start_time_s + head as f64 / grid.rate_hz,
        marker_index: grid
            .marker_index
            .filter(|m| range.contains(m))
            .map(|m| m - head),
        mbp: grid.mbp[range.clone()].to_vec(),
        hr: grid.hr[range].to_vec(),
        ..grid
    })
}

/// Fills missing samples: leading gaps take the first observed value,
/// trailing gaps the last, interior gaps are interpolated linearly.
pub fn fill_channel(x: &[Option<f64>], name: &'static str) -> Result<Vec<f64>> {
    let present: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
        return Err(Error::EmptyChannel(name));
    };
    let mut out = vec![0.0; x.len()];
    let first_value = x[first].unwrap_or_default();
    let last_value = x[last].unwrap_or_default();
    out[..first].fill(first_value);
    out[last..].fill(last_value);
    for pair in present.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (x[a].unwrap_or_default(), x[b].unwrap_or_default());
        out[a] = va;
        let span = (b - a) as f64;
        for (k, slot) in out[a + 1..b].iter_mut().enumerate() {
            let frac = (k + 1) as f64 / span;
            *slot = va + (vb - va) * frac;
        }
    }
    out[last] = last_value;
    Ok(out)
}

pub fn fill_gaps(grid: &GridRecording) -> Result<FilledRecording> {
    Ok(FilledRecording {
        id: grid.id.clone(),
        label: grid.label,
        rate_hz: grid.rate_hz,
        mbp: fill_channel(&grid.mbp, "mBP")?,
        hr: fill_channel(&grid.hr, "HR")?,
        marker_index: grid.marker_index,
    })
}
