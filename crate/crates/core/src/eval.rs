//! Ranking metrics and comparison reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{ParseStatus, PredictionRecord};

pub const REFERENCE_NOTE: &str = "published reference — not reproduced";

/// 1-based rank of the truth among the ranked ids, if present.
pub fn truth_rank(record: &PredictionRecord) -> Option<usize> {
    if record.status == ParseStatus::Failed {
        return None;
    }
    record.ranked.iter().position(|l| *l == record.truth).map(|i| i + 1)
}

pub fn acc_at_k(records: &[PredictionRecord], k: usize) -> Result<f64> {
    check(records, k)?;
    let hits = records
        .iter()
        .filter(|r| truth_rank(r).is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean of `1/log2(rank+1)` over samples whose truth ranks within `k`; a single
/// relevant item means the ideal DCG is 1.
pub fn ndcg_at_k(records: &[PredictionRecord], k: usize) -> Result<f64> {
    check(records, k)?;
    let total: f64 = records.iter().map(|r| gain(truth_rank(r), k)).sum();
    Ok(total / records.len() as f64)
}

fn gain(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

fn check(records: &[PredictionRecord], k: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("cannot score an empty prediction batch"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub rank: Option<usize>,
    pub status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc1: f64,
    pub acc5: f64,
    pub ndcg5: f64,
    pub n_samples: usize,
    pub n_parse_failures: usize,
    pub n_fallbacks: usize,
    pub per_sample: Vec<SampleScore>,
}

impl MetricsReport {
    pub fn compute(records: &[PredictionRecord]) -> Result<Self> {
        let count = |s: ParseStatus| records.iter().filter(|r| r.status == s).count();
        Ok(Self {
            acc1: acc_at_k(records, 1)?,
            acc5: acc_at_k(records, 5)?,
            ndcg5: ndcg_at_k(records, 5)?,
            n_samples: records.len(),
            n_parse_failures: count(ParseStatus::Failed),
            n_fallbacks: count(ParseStatus::Fallback),
            per_sample: records
                .iter()
                .map(|r| SampleScore {
                    sample_id: r.sample_id.clone(),
                    rank: truth_rank(r),
                    status: r.status,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub city: String,
    pub acc1: f64,
    pub acc5: f64,
    pub ndcg5: f64,
}

/// Published main-result rows for the full agentic pipeline and the strongest prior
/// agent baseline. Desk-scale runs cannot reproduce these; they are shown for context.
pub fn published_reference_rows() -> Vec<ReferenceRow> {
    let row = |method: &str, city: &str, acc1, acc5, ndcg5| ReferenceRow {
        method: method.into(),
        city: city.into(),
        acc1,
        acc5,
        ndcg5,
    };
    vec![
        row("agentic pipeline", "Shanghai", 0.232, 0.477, 0.360),
        row("agentic pipeline", "Moscow", 0.183, 0.383, 0.293),
        row("agentic pipeline", "Tokyo", 0.170, 0.455, 0.320),
        row("agentic pipeline", "Saopaulo", 0.200, 0.390, 0.300),
        row("AgentMove", "Shanghai", 0.210, 0.445, 0.338),
        row("AgentMove", "Moscow", 0.155, 0.370, 0.263),
        row("AgentMove", "Tokyo", 0.160, 0.475, 0.323),
        row("AgentMove", "Saopaulo", 0.215, 0.370, 0.296),
    ]
}

pub fn reference_rows_for(city: &str) -> Vec<ReferenceRow> {
    published_reference_rows()
        .into_iter()
        .filter(|r| r.city.eq_ignore_ascii_case(city))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub table: String,
    pub tsv: String,
}

/// Aligned table plus tab-separated rows. Reference rows carry [`REFERENCE_NOTE`].
pub fn report(runs: &[(String, MetricsReport)], references: &[ReferenceRow]) -> RenderedReport {
    let mut rows: Vec<[String; 6]> = vec![[
        "source".into(),
        "city".into(),
        "Acc@1".into(),
        "Acc@5".into(),
        "NDCG@5".into(),
        "note".into(),
    ]];
    for (label, m) in runs {
        let (source, city) = label.split_once('/').unwrap_or((label.as_str(), "-"));
        rows.push([
            source.into(),
            city.into(),
            format!("{:.3}", m.acc1),
            format!("{:.3}", m.acc5),
            format!("{:.3}", m.ndcg5),
            format!("this run, n={}, parse failures={}", m.n_samples, m.n_parse_failures),
        ]);
    }
    for r in references {
        rows.push([
            r.method.clone(),
            r.city.clone(),
            format!("{:.3}", r.acc1),
            format!("{:.3}", r.acc5),
            format!("{:.3}", r.ndcg5),
            REFERENCE_NOTE.into(),
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut table = String::new();
    let mut tsv = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 5 { c.clone() } else { format!("{c:<w$}") })
            .collect();
        let _ = writeln!(table, "{}", cells.join("  ").trim_end());
        let _ = writeln!(tsv, "{}", row.join("\t"));
    }
    RenderedReport { table, tsv }
}
