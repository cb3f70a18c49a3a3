//! Result tables and run manifests.
//!
//! An [`EvaluationReport`] holds one row per method for each stage that was
//! evaluated. Rows follow a configured method order, with unlisted methods
//! after it in lexicographic order. Renderers produce CSV (six decimals,
//! byte-stable), an aligned text table, or JSON with the manifest embedded.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::{Stage1Report, Stage2Report, Stage3Report};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub method: String,
    pub exact_match: f64,
    pub sbert: f64,
    pub avg_tags: f64,
}

impl Stage1Row {
    pub fn new(method: impl Into<String>, r: &Stage1Report) -> Self {
        Self {
            method: method.into(),
            exact_match: r.exact_match,
            sbert: r.sbert,
            avg_tags: r.avg_tags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Row {
    pub method: String,
    pub exact_match: f64,
    pub sbert: f64,
}

impl Stage2Row {
    pub fn new(method: impl Into<String>, r: &Stage2Report) -> Self {
        Self {
            method: method.into(),
            exact_match: r.exact_match,
            sbert: r.sbert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Row {
    pub method: String,
    pub in_mask: f64,
    pub pearl_score: f64,
}

impl Stage3Row {
    pub fn new(method: impl Into<String>, r: &Stage3Report) -> Self {
        Self {
            method: method.into(),
            in_mask: r.in_mask,
            pearl_score: r.pearl_score,
        }
    }
}

/// Provenance of an output artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Value,
    pub dataset_digest: Option<String>,
    pub backend: String,
    /// Model registry reported by a live backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_info: Option<Value>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(config: Value, dataset_digest: Option<String>, backend: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            config,
            dataset_digest,
            backend: backend.into(),
            backend_info: None,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    /// Equal in everything but the timestamp.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        RunManifest { timestamp: 0, ..self.clone() } == RunManifest { timestamp: 0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage1: Vec<Stage1Row>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage2: Vec<Stage2Row>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage3: Vec<Stage3Row>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("a report needs at least one stage")]
    NoStages,
}

fn order_rows<T>(rows: &mut [T], method: impl Fn(&T) -> &str, order: &[String]) {
    rows.sort_by(|a, b| {
        let key = |r: &T| {
            let m = method(r);
            (order.iter().position(|o| o == m).unwrap_or(order.len()), m.to_string())
        };
        key(a).cmp(&key(b))
    });
}

/// Assemble a report with rows in `method_order`.
pub fn build_report(
    mut stage1: Vec<Stage1Row>,
    mut stage2: Vec<Stage2Row>,
    mut stage3: Vec<Stage3Row>,
    method_order: &[String],
) -> Result<EvaluationReport, ReportError> {
    if stage1.is_empty() && stage2.is_empty() && stage3.is_empty() {
        return Err(ReportError::NoStages);
    }
    order_rows(&mut stage1, |r| &r.method, method_order);
    order_rows(&mut stage2, |r| &r.method, method_order);
    order_rows(&mut stage3, |r| &r.method, method_order);
    Ok(EvaluationReport {
        stage1,
        stage2,
        stage3,
        manifest: None,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvaluationReport {
    pub fn with_manifest(mut self, manifest: RunManifest) -> Self {
        self.manifest = Some(manifest);
        self
    }

    /// One CSV with a column per metric; cells a stage does not report are
    /// empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,method,exact_match,sbert,avg_tags,in_mask,pearl_score\n");
        for r in &self.stage1 {
            let _ = writeln!(
                out,
                "1,{},{:.6},{:.6},{:.6},,",
                csv_field(&r.method),
                r.exact_match,
                r.sbert,
                r.avg_tags
            );
        }
        for r in &self.stage2 {
            let _ = writeln!(out, "2,{},{:.6},{:.6},,,", csv_field(&r.method), r.exact_match, r.sbert);
        }
        for r in &self.stage3 {
            let _ = writeln!(out, "3,{},,,,{:.6},{:.6}", csv_field(&r.method), r.in_mask, r.pearl_score);
        }
        out
    }

    /// Aligned plain-text tables, one per stage.
    pub fn to_table(&self) -> String {
        let mut sections = Vec::new();
        if !self.stage1.is_empty() {
            let rows = self
                .stage1
                .iter()
                .map(|r| vec![r.method.clone(), format!("{:.3}", r.exact_match), format!("{:.3}", r.sbert), format!("{:.2}", r.avg_tags)])
                .collect();
            sections.push(table("Stage 1: tagging", &["Method", "EM", "sBERT", "#Tags"], rows));
        }
        if !self.stage2.is_empty() {
            let rows = self
                .stage2
                .iter()
                .map(|r| vec![r.method.clone(), format!("{:.3}", r.exact_match), format!("{:.3}", r.sbert)])
                .collect();
            sections.push(table("Stage 2: selection", &["Method", "EM", "sBERT"], rows));
        }
        if !self.stage3.is_empty() {
            let rows = self
                .stage3
                .iter()
                .map(|r| vec![r.method.clone(), format!("{:.3}", r.in_mask), format!("{:.3}", r.pearl_score)])
                .collect();
            sections.push(table("Stage 3: placement", &["Method", "In-Mask", "Score"], rows));
        }
        sections.join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

fn table(title: &str, header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = format!("{title}\n");
    out += &line(header.iter().map(|h| h.to_string()).collect());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect());
    for row in rows {
        out += &line(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s3(method: &str, in_mask: f64, score: f64) -> Stage3Row {
        Stage3Row {
            method: method.into(),
            in_mask,
            pearl_score: score,
        }
    }

    #[test]
    fn rows_follow_configured_order() {
        let order = vec!["natural".to_string(), "random".to_string(), "unnatural".to_string()];
        let r = build_report(
            vec![],
            vec![],
            vec![s3("zeta", 0.0, 0.0), s3("unnatural", 0.0, -9.0), s3("natural", 1.0, 9.0), s3("alpha", 0.5, 0.0)],
            &order,
        )
        .unwrap();
        let methods: Vec<&str> = r.stage3.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["natural", "unnatural", "alpha", "zeta"]);
    }

    #[test]
    fn empty_report_is_rejected() {
        assert_eq!(build_report(vec![], vec![], vec![], &[]), Err(ReportError::NoStages));
    }

    #[test]
    fn csv_layout() {
        let r = build_report(
            vec![Stage1Row {
                method: "ram, 0.8".into(),
                exact_match: 0.5,
                sbert: 0.75,
                avg_tags: 12.0,
            }],
            vec![],
            vec![s3("natural", 1.0, 17.987)],
            &[],
        )
        .unwrap();
        assert_eq!(
            r.to_csv(),
            "stage,method,exact_match,sbert,avg_tags,in_mask,pearl_score\n\
             1,\"ram, 0.8\",0.500000,0.750000,12.000000,,\n\
             3,natural,,,,1.000000,17.987000\n"
        );
    }

    #[test]
    fn single_row_table() {
        let r = build_report(vec![], vec![], vec![s3("random", 0.161, -106.113)], &[]).unwrap();
        assert_eq!(
            r.to_table(),
            "Stage 3: placement\nMethod  In-Mask     Score\n------  -------  --------\nrandom    0.161  -106.113\n"
        );
    }

    #[test]
    fn manifest_comparison_ignores_timestamp() {
        let a = RunManifest::new(serde_json::json!({"k": 1}), Some("d".into()), "fixture", Some(7));
        let mut b = a.clone();
        b.timestamp += 100;
        assert!(a.same_run(&b));
        b.seed = Some(8);
        assert!(!a.same_run(&b));
        let json = build_report(vec![], vec![], vec![s3("m", 0.0, 0.0)], &[]).unwrap().with_manifest(a).to_json();
        assert!(json.contains("\"tool_version\""));
    }
}
