//! Efficiency time series, latency statistics and run summaries.

use std::fmt::Write as _;

use hdrhistogram::Histogram;

use crate::kernel::SimTime;

pub const EFFICIENCY_CSV_HEADER: &str = "bin_start_us,delivered_bytes,efficiency";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencySample {
    pub bin_start: SimTime,
    pub delivered_bytes: u64,
    pub efficiency: f64,
}

/// Delivered bytes accumulated into fixed-width bins.
#[derive(Debug, Clone)]
pub struct EfficiencySeries {
    bin_width: SimTime,
    bins: Vec<u64>,
    /// Bytes one bin can carry when every endnode receives at line rate.
    capacity_per_bin: f64,
}

impl EfficiencySeries {
    pub fn new(bin_width: SimTime, horizon: SimTime, endnodes: u32, link_gbps: f64) -> Self {
        let nbins = horizon.as_ps().div_ceil(bin_width.as_ps().max(1)) as usize;
        let bytes_per_ps = link_gbps / 8.0 / 1_000.0;
        EfficiencySeries {
            bin_width,
            bins: vec![0; nbins],
            capacity_per_bin: endnodes as f64 * bytes_per_ps * bin_width.as_ps() as f64,
        }
    }

    pub fn bin_width(&self) -> SimTime {
        self.bin_width
    }

    /// Deliveries past the horizon are not binned.
    pub fn record(&mut self, at: SimTime, bytes: u64) {
        let i = (at.as_ps() / self.bin_width.as_ps()) as usize;
        if let Some(b) = self.bins.get_mut(i) {
            *b += bytes;
        }
    }

    pub fn binned_bytes(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn samples(&self) -> Vec<EfficiencySample> {
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| EfficiencySample {
                bin_start: SimTime(i as u64 * self.bin_width.as_ps()),
                delivered_bytes: *b,
                efficiency: (*b as f64 / self.capacity_per_bin).min(1.0),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(EFFICIENCY_CSV_HEADER);
        s.push('\n');
        for x in self.samples() {
            let _ = writeln!(
                s,
                "{},{},{:.6}",
                fmt_us(x.bin_start),
                x.delivered_bytes,
                x.efficiency
            );
        }
        s
    }
}

fn fmt_us(t: SimTime) -> String {
    let ps = t.as_ps();
    if ps.is_multiple_of(1_000_000) {
        format!("{}", ps / 1_000_000)
    } else {
        format!("{:.6}", t.as_us_f64())
    }
}

/// Mean efficiency of bins whose start lies in `[from, to)`.
pub fn mean_efficiency(samples: &[EfficiencySample], from: SimTime, to: SimTime) -> Option<f64> {
    let v: Vec<f64> = samples
        .iter()
        .filter(|s| s.bin_start >= from && s.bin_start < to)
        .map(|s| s.efficiency)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub pre_mean: f64,
    /// Time from hotspot onset to the first recovered bin; zero if the
    /// efficiency never dropped.
    pub recovery_time: Option<SimTime>,
    pub dropped: bool,
}

/// Recovery after hotspot onset. The reference is the mean efficiency over
/// `[pre_from, onset)`. The first bin at or after onset that falls below
/// `fraction` of the reference marks the drop; recovery is the first later
/// bin back at or above it. Only bins starting before `window_end` count.
pub fn recovery(
    samples: &[EfficiencySample],
    pre_from: SimTime,
    onset: SimTime,
    window_end: SimTime,
    fraction: f64,
) -> Option<Recovery> {
    let pre_mean = mean_efficiency(samples, pre_from, onset)?;
    let bar = fraction * pre_mean;
    let window: Vec<&EfficiencySample> = samples
        .iter()
        .filter(|s| s.bin_start >= onset && s.bin_start < window_end)
        .collect();
    let Some(drop_at) = window.iter().position(|s| s.efficiency < bar) else {
        return Some(Recovery {
            pre_mean,
            recovery_time: Some(SimTime::ZERO),
            dropped: false,
        });
    };
    let recovered = window[drop_at..]
        .iter()
        .find(|s| s.efficiency >= bar)
        .map(|s| s.bin_start - onset);
    Some(Recovery {
        pre_mean,
        recovery_time: recovered,
        dropped: true,
    })
}

/// Packet latency histogram in nanoseconds.
#[derive(Debug, Clone)]
pub struct LatencyStats {
    hist: Histogram<u64>,
}

impl Default for LatencyStats {
    fn default() -> Self {
        LatencyStats {
            hist: Histogram::new_with_bounds(1, 1_000_000_000_000, 3).expect("valid bounds"),
        }
    }
}

impl LatencyStats {
    pub fn record(&mut self, latency: SimTime) {
        let ns = (latency.as_ps() / 1_000).max(1);
        self.hist.saturating_record(ns);
    }

    pub fn count(&self) -> u64 {
        self.hist.len()
    }

    pub fn mean_ns(&self) -> f64 {
        self.hist.mean()
    }

    pub fn p99_ns(&self) -> u64 {
        self.hist.value_at_quantile(0.99)
    }

    pub fn max_ns(&self) -> u64 {
        self.hist.max()
    }
}

/// Ordered `key=value` pairs written to `summary.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pairs: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> Summary {
        let mut s = Summary::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                s.push(k.trim(), v.trim());
            }
        }
        s
    }
}
