//! Trigger-relative arrival-time histograms (the TCSPC picture).

use serde::{Deserialize, Serialize};

use crate::timetag::{Channel, ClickRecord};
use crate::{Error, Result};

/// Smallest allowed bin width: 1 ps, the time-tag quantum.
pub const MIN_BIN_NS: f64 = 0.001;

/// Provenance carried alongside the counts so a histogram alone is enough
/// to reproduce the data that made it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub scenario_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ns: f64,
    pub window_start_ns: f64,
    pub window_end_ns: f64,
    /// Detector clicks per bin, over all triggers.
    pub counts: Vec<u64>,
    pub total_triggers: u64,
    /// Detector clicks outside the window (sync records are not counted
    /// here or anywhere).
    pub dropped: u64,
    pub metadata: HistogramMeta,
}

impl Histogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.window_start_ns + (i as f64 + 0.5) * self.bin_width_ns)
            .collect()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin detector clicks into `[window.0, window.1)` with half-open bins.
pub fn build_histogram(
    records: &[ClickRecord],
    bin_width_ns: f64,
    window: (f64, f64),
    total_triggers: u64,
    metadata: HistogramMeta,
) -> Result<Histogram> {
    if !bin_width_ns.is_finite() || bin_width_ns < MIN_BIN_NS {
        return Err(Error::config(format!(
            "bin width {bin_width_ns} ns must be ≥ {MIN_BIN_NS} ns"
        )));
    }
    let (start, end) = window;
    if !start.is_finite() || !end.is_finite() || end <= start {
        return Err(Error::config(format!("bad histogram window [{start}, {end}) ns")));
    }
    let n_bins = ((end - start) / bin_width_ns).ceil() as usize;
    if n_bins == 0 {
        return Err(Error::config("histogram window narrower than one bin".to_string()));
    }
    let mut counts = vec![0u64; n_bins];
    let mut dropped = 0u64;
    for rec in records {
        if rec.channel != Channel::Detector393 {
            continue;
        }
        let t = rec.timestamp_ps as f64 * 1e-3;
        if t < start || t >= end {
            dropped += 1;
            continue;
        }
        let mut idx = ((t - start) / bin_width_ns) as usize;
        // guard the upper edge against rounding
        if idx >= n_bins {
            idx = n_bins - 1;
        }
        counts[idx] += 1;
    }
    Ok(Histogram {
        bin_width_ns,
        window_start_ns: start,
        window_end_ns: end,
        counts,
        total_triggers,
        dropped,
        metadata,
    })
}
