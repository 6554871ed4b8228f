use std::fmt::Write as _;

use serde_json::{json, Value};

use super::{CosineReport, IsotropyReport, HIST_BINS};
use crate::Tensor;

/// Provenance stamped on every report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportContext {
    pub source: String,
    pub representation: String,
    pub config_hash: String,
}

impl ReportContext {
    fn fields(&self) -> Value {
        json!({
            "source": self.source,
            "representation": self.representation,
            "config_hash": self.config_hash,
        })
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

pub fn isotropy_json(r: &IsotropyReport, n: usize, d: usize, ctx: &ReportContext) -> String {
    pretty(&merge(
        ctx.fields(),
        json!({
            "report": "isotropy",
            "n": n,
            "d": d,
            "score": r.score,
            "candidate_count": r.candidate_count,
            "log_f": r.log_f,
            "f_values": r.f_values,
            "eigenvalues": r.eigenvalues,
        }),
    ))
}

pub fn cosine_json(r: &CosineReport, ctx: &ReportContext) -> String {
    pretty(&merge(
        ctx.fields(),
        json!({
            "report": "cosine",
            "classes": r.classes,
            "positive_mean": r.positive_mean,
            "negative_mean": r.negative_mean,
            "separation": r.separation(),
            "positive_count": r.positive_count,
            "negative_count": r.negative_count,
            "positive_total": r.positive_total,
            "negative_total": r.negative_total,
        }),
    ))
}

/// Columns `bin_lo,bin_hi,positive,negative`.
pub fn cosine_csv(r: &CosineReport) -> String {
    let mut out = String::from("bin_lo,bin_hi,positive,negative\n");
    let w = 2.0 / HIST_BINS as f64;
    for b in 0..HIST_BINS {
        let lo = -1.0 + b as f64 * w;
        let _ = writeln!(
            out,
            "{lo:.2},{:.2},{},{}",
            lo + w,
            r.positive_hist[b],
            r.negative_hist[b]
        );
    }
    out
}

/// Columns `index,label,x,y`.
pub fn projection_csv(coords: &Tensor, labels: &[usize]) -> String {
    let mut out = String::from("index,label,x,y\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{l},{:.9},{:.9}", coords.at(i, 0), coords.at(i, 1));
    }
    out
}
