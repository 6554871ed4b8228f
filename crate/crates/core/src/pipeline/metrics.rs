use std::fmt::Write as _;
use std::path::Path;

use crate::data::Split;
use crate::{Error, Result};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// 1-based.
    pub epoch: usize,
    pub split: Split,
    /// Mean per-anchor (or per-example) loss over the epoch.
    pub loss: f64,
    /// `None` where no classifier exists (contrastive stage).
    pub accuracy: Option<f64>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,seconds";

/// Renders the metrics CSV. Without `wall_clock` the seconds column is
/// written as `0` so identical runs produce identical files.
pub fn metrics_csv(rows: &[MetricRow], wall_clock: bool) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let secs = if wall_clock {
            format!("{:.3}", r.seconds)
        } else {
            "0".into()
        };
        let _ = writeln!(out, "{},{},{:.9},{acc},{secs}", r.epoch, r.split.as_str(), r.loss);
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], wall_clock: bool, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows, wall_clock)).map_err(|e| Error::io(path, e))
}
