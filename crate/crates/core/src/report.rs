//! Report serialization.
//!
//! Campaign JSON is pretty-printed with sorted keys; `wall_clock_ms` is the
//! only run-dependent field and sits on a line of its own. Per-trial CSV
//! rows are `trial,seed,site,instance,start_bit,width,outcome,detail`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::campaign::{CampaignReport, ResilienceDelta};
use crate::outcome::{OutcomeHistogram, Tag};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report histogram disagrees with its trial log")]
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

/// Percentages of each tag, emitted alongside raw counts.
pub fn percentages(h: &OutcomeHistogram) -> Value {
    let mut m = serde_json::Map::new();
    for t in Tag::ALL {
        m.insert(t.name().to_owned(), Value::from(h.percent(t)));
    }
    m.insert("non_benign".into(), Value::from(100.0 * h.non_benign_rate()));
    Value::Object(m)
}

pub fn campaign_json(r: &CampaignReport) -> String {
    let mut v = serde_json::to_value(r).expect("report serializes");
    let obj = v.as_object_mut().expect("object");
    obj.insert("percentages".into(), percentages(&r.histogram));
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

/// `text` without its `wall_clock_ms` line, for byte comparisons.
pub fn strip_wall_clock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_clock_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_campaign(text: &str) -> Result<CampaignReport, ReportError> {
    let mut v: Value = serde_json::from_str(text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("percentages");
    }
    Ok(serde_json::from_value(v)?)
}

pub fn campaign_csv(r: &CampaignReport) -> String {
    let mut out = String::from("trial,seed,site,instance,start_bit,width,outcome,detail\n");
    for t in &r.trials {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.trial,
            t.seed,
            t.site,
            t.instance,
            t.start_bit,
            t.width,
            t.outcome.tag(),
            t.outcome.detail()
        )
        .unwrap();
    }
    out
}

pub fn delta_json(d: &ResilienceDelta) -> String {
    let mut s = serde_json::to_string_pretty(d).expect("delta serializes");
    s.push('\n');
    s
}

pub fn delta_csv(d: &ResilienceDelta) -> String {
    format!(
        "benchmark,trials,baseline_rate,protected_rate,reduction,masked,masked_fraction,coverage\n{},{},{},{},{},{},{},{}\n",
        d.benchmark,
        d.trials,
        d.baseline_rate,
        d.protected_rate,
        d.reduction,
        d.masked,
        d.masked_fraction,
        d.coverage.map(|q| q.to_string()).unwrap_or_default()
    )
}

/// Recomputes the histogram of a saved report from its trial log and checks
/// it against the stored one.
pub fn summarize(text: &str) -> Result<OutcomeHistogram, ReportError> {
    let r = parse_campaign(text)?;
    let mut h = OutcomeHistogram::default();
    for t in &r.trials {
        h.record(t.class, t.width, t.outcome);
    }
    if h != r.histogram {
        return Err(ReportError::Inconsistent);
    }
    Ok(h)
}

/// Human-readable histogram table.
pub fn histogram_table(h: &OutcomeHistogram) -> String {
    let mut out = format!("{:<8} {:>8} {:>8}\n", "outcome", "count", "percent");
    for t in Tag::ALL {
        writeln!(out, "{:<8} {:>8} {:>7.2}%", t.name(), h.counts().get(t), h.percent(t)).unwrap();
    }
    writeln!(out, "{:<8} {:>8}", "total", h.total).unwrap();
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<String, ReportError> {
    std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })
}
