//! Training-time measurements: activation histograms per update window, a
//! total-variation drift score between consecutive windows, and per-group
//! gradient norms before and after clipping.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clip::ClipReport;
use crate::error::{Error, Result};
use crate::net::ForwardTrace;

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_HORIZON: usize = 500;
pub const DEFAULT_WINDOW: usize = 20;

/// Normalized histograms of one layer's activations, one per update window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSeries {
    /// 1-based layer number.
    pub layer: usize,
    pub edges: Vec<f64>,
    /// Bin masses per window; each sums to one.
    pub windows: Vec<Vec<f64>>,
    /// Updates per window.
    pub window_size: usize,
}

impl HistogramSeries {
    pub fn bins(&self) -> usize {
        self.edges.len().saturating_sub(1)
    }
}

/// `n + 1` evenly spaced edges over `[lo, hi]`.
pub fn uniform_edges(bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

/// Bin index of `v`; values outside the edge range land in the end bins.
fn bin_of(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    edges
        .partition_point(|&e| e <= v)
        .saturating_sub(1)
        .min(bins - 1)
}

/// Accumulates activation counts and closes a window every `window_size` updates.
#[derive(Debug, Clone)]
pub struct ActivationHistogram {
    series: HistogramSeries,
    counts: Vec<u64>,
    updates_in_window: usize,
    updates: usize,
    horizon: usize,
}

impl ActivationHistogram {
    /// Records at most `horizon` updates.
    pub fn new(layer: usize, edges: Vec<f64>, window_size: usize, horizon: usize) -> Result<Self> {
        if edges.len() < 2
            || edges
                .windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
        {
            return Err(Error::InvalidValue(
                "histogram edges must be strictly increasing with at least one bin".into(),
            ));
        }
        if window_size == 0 {
            return Err(Error::InvalidValue(
                "histogram window must be at least 1 update".into(),
            ));
        }
        let bins = edges.len() - 1;
        Ok(ActivationHistogram {
            series: HistogramSeries {
                layer,
                edges,
                windows: Vec::new(),
                window_size,
            },
            counts: vec![0; bins],
            updates_in_window: 0,
            updates: 0,
            horizon,
        })
    }

    /// 50 bins over `[-1, 1]`, 20-update windows, first 500 updates.
    pub fn for_hidden_states(layer: usize) -> Self {
        Self::new(
            layer,
            uniform_edges(DEFAULT_BINS, -1.0, 1.0),
            DEFAULT_WINDOW,
            DEFAULT_HORIZON,
        )
        .expect("default edges are valid")
    }

    pub fn layer(&self) -> usize {
        self.series.layer
    }

    pub fn is_recording(&self) -> bool {
        self.updates < self.horizon
    }

    pub fn add_values(&mut self, values: impl IntoIterator<Item = f64>) {
        if !self.is_recording() {
            return;
        }
        for v in values {
            self.counts[bin_of(&self.series.edges, v)] += 1;
        }
    }

    /// Marks the end of one update; closes the window when it is full.
    pub fn end_update(&mut self) {
        if !self.is_recording() {
            return;
        }
        self.updates += 1;
        self.updates_in_window += 1;
        if self.updates_in_window == self.series.window_size {
            self.close_window();
        }
    }

    fn close_window(&mut self) {
        let total: u64 = self.counts.iter().sum();
        if total > 0 {
            let mass = self
                .counts
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect();
            self.series.windows.push(mass);
        }
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.updates_in_window = 0;
    }

    /// Flushes a partially filled window and returns the series.
    pub fn finish(mut self) -> HistogramSeries {
        if self.updates_in_window > 0 {
            self.close_window();
        }
        self.series
    }
}

/// Adds every hidden-state value of `layer` (1-based) in `trace` to the
/// current window and counts one update.
pub fn record_activations(
    trace: &ForwardTrace,
    layer: usize,
    acc: &mut ActivationHistogram,
) -> Result<()> {
    let lt = layer
        .checked_sub(1)
        .and_then(|k| trace.layers.get(k))
        .ok_or_else(|| Error::Shape(format!("trace has no layer {layer}")))?;
    acc.add_values(lt.hidden.iter().copied());
    acc.end_update();
    Ok(())
}

/// Total-variation distance `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "histograms with {} and {} bins",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// TV distance between window `k` and `k + 1`.
    pub values: Vec<f64>,
    pub mean: f64,
}

/// Drift between consecutive windows of a series.
pub fn drift_metric(series: &HistogramSeries) -> Result<DriftReport> {
    if series.windows.len() < 2 {
        return Err(Error::InvalidValue(format!(
            "drift needs at least 2 windows, series has {}",
            series.windows.len()
        )));
    }
    let bins = series.bins();
    if let Some(w) = series.windows.iter().find(|w| w.len() != bins) {
        return Err(Error::Shape(format!(
            "window with {} masses does not match {bins} bin edges",
            w.len()
        )));
    }
    let values = series
        .windows
        .windows(2)
        .map(|w| total_variation(&w[0], &w[1]))
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(DriftReport { values, mean })
}

/// One row of `gradnorms.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormRow {
    pub step: usize,
    pub group: String,
    pub pre_norm: f64,
    pub post_norm: f64,
}

/// Destination for gradient-norm rows.
pub trait MetricsSink {
    fn append(&mut self, row: GradNormRow) -> std::io::Result<()>;
}

impl MetricsSink for Vec<GradNormRow> {
    fn append(&mut self, row: GradNormRow) -> std::io::Result<()> {
        self.push(row);
        Ok(())
    }
}

/// Streams rows straight to CSV.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(["step", "group", "pre_norm", "post_norm"])?;
        Ok(CsvSink { writer })
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn append(&mut self, row: GradNormRow) -> std::io::Result<()> {
        self.writer
            .write_record([
                row.step.to_string(),
                row.group,
                row.pre_norm.to_string(),
                row.post_norm.to_string(),
            ])
            .map_err(std::io::Error::other)
    }
}

/// Appends one `(step, group, pre, post)` row per group.
pub fn log_group_norms(step: usize, report: &ClipReport, sink: &mut dyn MetricsSink) -> Result<()> {
    for g in &report.groups {
        sink.append(GradNormRow {
            step,
            group: g.group.clone(),
            pre_norm: g.pre_norm,
            post_norm: g.post_norm,
        })
        .map_err(|e| Error::Training {
            phase: 0,
            epoch: 0,
            step,
            source: Box::new(Error::Io(e)),
        })?;
    }
    Ok(())
}

/// `histograms.csv`: `step_window, layer, bin_index, mass`.
pub fn write_histograms_csv<W: Write>(out: W, series: &[HistogramSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step_window", "layer", "bin_index", "mass"])?;
    for s in series {
        for (k, masses) in s.windows.iter().enumerate() {
            for (b, m) in masses.iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    s.layer.to_string(),
                    b.to_string(),
                    m.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `gradnorms.csv`: `step, group, pre_norm, post_norm`.
pub fn write_gradnorms_csv<W: Write>(out: W, rows: &[GradNormRow]) -> Result<()> {
    let mut sink = CsvSink::new(out)?;
    for r in rows {
        sink.append(r.clone())?;
    }
    sink.writer.flush()?;
    Ok(())
}

/// `drift.csv`: `window, layer, tv_distance`.
pub fn write_drift_csv<W: Write>(out: W, drifts: &[(usize, DriftReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "layer", "tv_distance"])?;
    for (layer, d) in drifts {
        for (k, v) in d.values.iter().enumerate() {
            w.write_record([k.to_string(), layer.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
