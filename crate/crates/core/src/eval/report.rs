//! Per-prompt records, family aggregation and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dist::Family;

/// Marker for an undefined aggregate in text tables.
pub const UNDEFINED: &str = "---";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub config_id: String,
    pub family: Family,
    pub samples: usize,
    pub valid: usize,
    pub valid_rate: f64,
    pub w1: Option<f64>,
    pub normalized_w1: Option<f64>,
    pub logit_kl: f64,
    pub unique_fraction: Option<f64>,
    pub first_token_support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAggregate {
    pub family: Family,
    pub prompts: usize,
    pub valid_rate: f64,
    /// Mean over finite normalized W1 estimates.
    pub normalized_w1: Option<f64>,
    pub logit_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub split: String,
    pub records: Vec<PromptRecord>,
    pub families: Vec<FamilyAggregate>,
    /// Median across families; present only when every family has at least
    /// one finite estimate.
    pub median_normalized_w1: Option<f64>,
    pub median_logit_kl: Option<f64>,
    pub mean_valid_rate: Option<f64>,
}

fn finite_mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Median of the values if all are present.
pub fn median_if_all(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().collect::<Option<Vec<_>>>()?;
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Family means of finite estimates and cross-family medians.
pub fn aggregate(condition: &str, split: &str, records: Vec<PromptRecord>) -> EvalReport {
    let mut by_family: BTreeMap<Family, Vec<&PromptRecord>> = BTreeMap::new();
    for r in &records {
        by_family.entry(r.family).or_default().push(r);
    }
    let families: Vec<FamilyAggregate> = by_family
        .into_iter()
        .map(|(family, rs)| FamilyAggregate {
            family,
            prompts: rs.len(),
            valid_rate: rs.iter().map(|r| r.valid_rate).sum::<f64>() / rs.len() as f64,
            normalized_w1: finite_mean(rs.iter().map(|r| r.normalized_w1)),
            logit_kl: finite_mean(rs.iter().map(|r| Some(r.logit_kl))),
        })
        .collect();
    let w1s: Vec<Option<f64>> = families.iter().map(|f| f.normalized_w1).collect();
    let kls: Vec<Option<f64>> = families.iter().map(|f| f.logit_kl).collect();
    let mean_valid_rate = finite_mean(records.iter().map(|r| Some(r.valid_rate)));
    EvalReport {
        condition: condition.into(),
        split: split.into(),
        median_normalized_w1: median_if_all(&w1s),
        median_logit_kl: median_if_all(&kls),
        mean_valid_rate,
        families,
        records,
    }
}

/// Fixed-precision rendering with the undefined marker.
pub fn fmt_opt(x: Option<f64>, precision: usize) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.precision$}"),
        _ => UNDEFINED.to_string(),
    }
}

/// Renders rows as left-aligned first column and right-aligned others.
pub fn align_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols.saturating_sub(1));
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-family table followed by the cross-family medians.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = ["family", "prompts", "valid", "nW1", "logit KL"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows: Vec<Vec<String>> = self
            .families
            .iter()
            .map(|f| {
                vec![
                    f.family.to_string(),
                    f.prompts.to_string(),
                    format!("{:.3}", f.valid_rate),
                    fmt_opt(f.normalized_w1, 4),
                    fmt_opt(f.logit_kl, 4),
                ]
            })
            .collect();
        rows.push(vec![
            "median".into(),
            self.records.len().to_string(),
            fmt_opt(self.mean_valid_rate, 3),
            fmt_opt(self.median_normalized_w1, 4),
            fmt_opt(self.median_logit_kl, 4),
        ]);
        format!("{} / {}\n{}", self.condition, self.split, align_table(&header, &rows))
    }
}
