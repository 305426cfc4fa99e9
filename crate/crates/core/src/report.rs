//! Text renderings of analysis results. Numbers are rounded here and only
//! here; stored JSON keeps full precision.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distmetrics::DistMetricsTable;
use crate::elo::Leaderboard;
use crate::evalsuite::{AccuracyCi, CountingReport, FairnessReport};
use crate::model::Axis;
use crate::stats::{self, AgreementReport, ClassFile, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFormat {
    #[default]
    Markdown,
    Json,
    TextGrid,
}

impl FromStr for RenderFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "markdown" | "md" => Ok(RenderFormat::Markdown),
            "json" => Ok(RenderFormat::Json),
            "textgrid" | "grid" | "text" => Ok(RenderFormat::TextGrid),
            _ => Err(format!("unknown format {s:?} (markdown, json, text-grid)")),
        }
    }
}

/// `0.99` renders as `99`, `0.975` as `97.5`.
pub fn format_level(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        let s = format!("{pct:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// `1115 (99% CI 1106–1124)`.
pub fn format_rating_ci(rating: f64, ci_low: f64, ci_high: f64, level: f64) -> String {
    format!("{:.0} ({}% CI {:.0}\u{2013}{:.0})", rating, format_level(level), ci_low, ci_high)
}

fn pct(f: Option<f64>) -> String {
    match f {
        Some(v) => format!("{:.1}%", 100.0 * v),
        None => "n/a".into(),
    }
}

pub fn leaderboard_markdown(lb: &Leaderboard) -> String {
    let mut out = String::new();
    let scope = match (&lb.aspect, &lb.prompt_set) {
        (Some(a), Some(s)) => format!("{} / {}", a.as_str(), s),
        (Some(a), None) => a.as_str().to_string(),
        _ => "leaderboard".to_string(),
    };
    let _ = writeln!(out, "### {scope}\n");
    let level = lb.confidence_level;
    let header = match level {
        Some(l) => format!("Elo ({}% CI)", format_level(l)),
        None => "Elo".to_string(),
    };
    let _ = writeln!(out, "| Rank | Model | {header} | Ratings |");
    let _ = writeln!(out, "|---:|---|---|---:|");
    for (i, e) in lb.entries.iter().enumerate() {
        let mut cell = match level {
            Some(l) => format_rating_ci(e.rating, e.ci_low, e.ci_high, l),
            None => format!("{:.0}", e.rating),
        };
        if e.unbounded_high {
            cell.push_str(" (unbounded above)");
        }
        if e.unbounded_low {
            cell.push_str(" (unbounded below)");
        }
        let _ = writeln!(out, "| {} | {} | {} | {} |", i + 1, e.model, cell, e.n_ratings);
    }
    for w in &lb.metadata.warnings {
        let _ = writeln!(out, "\nwarning: {w}");
    }
    out
}

fn tally_cell(t: &Tally) -> String {
    format!("{}/{}", t.correct, t.total)
}

pub fn agreement_markdown(rep: &AgreementReport) -> String {
    let mut out = String::new();
    let datasets: std::collections::BTreeSet<&String> = rep.metrics.iter().flat_map(|m| m.per_dataset.keys()).collect();
    let _ = write!(out, "| Dataset | Pairs |");
    for m in &rep.metrics {
        let _ = write!(out, " {} |", m.metric);
    }
    let _ = write!(out, "\n|---|---:|");
    for _ in &rep.metrics {
        let _ = write!(out, "---:|");
    }
    out.push('\n');
    for ds in &datasets {
        let total = rep.metrics.first().and_then(|m| m.per_dataset.get(*ds)).map(|t| t.total).unwrap_or(0);
        let _ = write!(out, "| {ds} | {total} |");
        for m in &rep.metrics {
            let cell = m.per_dataset.get(*ds).map(|t| t.correct.to_string()).unwrap_or_default();
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    let total = rep.metrics.first().map(|m| m.overall.total).unwrap_or(0);
    let _ = write!(out, "| Total | {total} |");
    for m in &rep.metrics {
        let _ = write!(out, " {} |", pct(m.overall.fraction()));
    }
    out.push('\n');
    for im in &rep.inter_metric {
        let _ = writeln!(
            out,
            "\n{} and {} agree on {} pairs ({}); where they agree they match human judgment on {} ({}).",
            im.metric_a,
            im.metric_b,
            tally_cell(&im.agreement),
            pct(im.agreement.fraction()),
            tally_cell(&im.conditional_human),
            pct(im.conditional_human.fraction()),
        );
    }
    out
}

/// Category proportions side by side, one row per model.
pub fn fairness_markdown(reports: &[FairnessReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "| Model |");
    for axis in Axis::ALL {
        let _ = write!(out, " {} ({}) |", axis.label(), axis.categories().join(" : "));
    }
    let _ = writeln!(out, "\n|---|---|---|---|");
    for r in reports {
        let _ = write!(out, "| {} |", r.model);
        for axis in Axis::ALL {
            let cell = match r.distributions.iter().find(|d| d.axis == axis) {
                Some(d) => axis
                    .categories()
                    .iter()
                    .map(|c| format!("{:.1}", 100.0 * d.proportions[*c]))
                    .collect::<Vec<_>>()
                    .join(" : "),
                None => "n/a".into(),
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }

    let _ = write!(out, "\n% prompts with homogeneous outputs\n\n| Model |");
    for axis in Axis::ALL {
        let _ = write!(out, " {} |", axis.label());
    }
    let _ = writeln!(out, "\n|---|---:|---:|---:|");
    for r in reports {
        let _ = write!(out, "| {} |", r.model);
        for axis in Axis::ALL {
            let cell = match r.homogeneity.iter().find(|h| h.axis == axis) {
                Some(h) => format!("{:.2}", h.percent_homogeneous),
                None => "n/a".into(),
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    for r in reports {
        for w in &r.warnings {
            let _ = writeln!(out, "\nwarning: {w}");
        }
    }
    out
}

fn acc_cell(a: &AccuracyCi) -> String {
    format!("{:.1}% [{:.1}, {:.1}] (n={})", 100.0 * a.accuracy, 100.0 * a.ci_low, 100.0 * a.ci_high, a.total)
}

pub fn counting_markdown(reports: &[CountingReport]) -> String {
    let mut out = String::new();
    let numbers: std::collections::BTreeSet<u32> = reports.iter().flat_map(|r| r.per_number.keys().copied()).collect();
    let types: std::collections::BTreeSet<&String> = reports.iter().flat_map(|r| r.per_sentence_type.keys()).collect();
    let _ = write!(out, "| Group |");
    for r in reports {
        let _ = write!(out, " {} |", r.model);
    }
    let _ = write!(out, "\n|---|");
    for _ in reports {
        let _ = write!(out, "---|");
    }
    out.push('\n');
    let mut row = |label: String, get: &dyn Fn(&CountingReport) -> Option<AccuracyCi>| {
        let _ = write!(out, "| {label} |");
        for r in reports {
            let cell = get(r).map(|a| acc_cell(&a)).unwrap_or_default();
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    };
    row("overall".into(), &|r| Some(r.overall));
    for n in &numbers {
        row(format!("count {n}"), &|r| r.per_number.get(n).copied());
    }
    for t in &types {
        row(t.to_string(), &|r| r.per_sentence_type.get(*t).copied());
    }
    out
}

fn metric_value(v: f64) -> String {
    if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

pub fn distmetrics_markdown(t: &DistMetricsTable) -> String {
    let mut out = String::from("| Model |");
    for m in &t.metrics {
        match t.feature_spaces.get(m) {
            Some(fs) => {
                let _ = write!(out, " {m} ({fs}) |");
            }
            None => {
                let _ = write!(out, " {m} |");
            }
        }
    }
    out.push_str("\n|---|");
    for _ in &t.metrics {
        out.push_str("---:|");
    }
    out.push('\n');
    for (model, row) in &t.table {
        let _ = write!(out, "| {model} |");
        for m in &t.metrics {
            let cell = row.get(m).map(|v| metric_value(*v)).unwrap_or_default();
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Everything the `report` command can render.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaderboards: Vec<Leaderboard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementReport>,
    /// Class files behind `agreement`, kept for grid rendering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_human: Option<ClassFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreement_metrics: Vec<ClassFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fairness: Vec<FairnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counting: Vec<CountingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distmetrics: Option<DistMetricsTable>,
}

impl ReportBundle {
    pub fn render(&self, format: RenderFormat) -> String {
        match format {
            RenderFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
                s.push('\n');
                s
            }
            RenderFormat::Markdown => self.markdown(false),
            RenderFormat::TextGrid => self.markdown(true),
        }
    }

    fn markdown(&self, grids: bool) -> String {
        let mut out = String::new();
        if !self.leaderboards.is_empty() {
            out.push_str("## Leaderboards\n\n");
            for lb in &self.leaderboards {
                out.push_str(&leaderboard_markdown(lb));
                out.push('\n');
            }
        }
        if let Some(a) = &self.agreement {
            out.push_str("## Metric agreement with human judgment\n\n");
            out.push_str(&agreement_markdown(a));
            out.push('\n');
            if grids {
                let human = self.agreement_human.as_ref().map(ClassFile::to_map).unwrap_or_default();
                out.push_str("```\n");
                for m in &self.agreement_metrics {
                    out.push_str(&stats::render_grid(&m.name, &m.to_map(), &human));
                }
                out.push_str("```\n\n");
            }
        }
        if !self.fairness.is_empty() {
            out.push_str("## Fairness\n\n");
            out.push_str(&fairness_markdown(&self.fairness));
            out.push('\n');
        }
        if !self.counting.is_empty() {
            out.push_str("## Counting accuracy\n\n");
            out.push_str(&counting_markdown(&self.counting));
            out.push('\n');
        }
        if let Some(d) = &self.distmetrics {
            out.push_str("## Distribution metrics\n\n");
            out.push_str(&distmetrics_markdown(d));
            out.push('\n');
        }
        out
    }
}
