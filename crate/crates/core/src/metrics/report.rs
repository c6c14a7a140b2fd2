//! Table and curve files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::CurveReport;
use crate::error::{Error, Result};

/// One configuration of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub backbone: String,
    pub task: String,
    pub data: String,
    pub criterion: String,
    pub modality: String,
    pub val_accuracy: f64,
    pub ipf: f64,
    pub ham_aac: f64,
    pub acc_auc: f64,
    pub acc_at_1: f64,
    pub acc_at_5: f64,
    pub acc_at_100: f64,
    pub baseline_ham_aac: f64,
    pub baseline_acc_auc: f64,
    pub spec_hash: String,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

pub fn write_table(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub role: String,
    pub p: f64,
    pub acc_at: f64,
    pub ham_at: f64,
    pub spec_hash: String,
}

/// Curve samples of the attack and the baseline, one row per grid point.
pub fn write_curves(
    path: &Path,
    attack: &CurveReport,
    baseline: &CurveReport,
    spec_hash: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (role, c) in [("attack", attack), ("baseline", baseline)] {
        for i in 0..c.grid.len() {
            w.serialize(CurveSample {
                role: role.into(),
                p: c.grid[i],
                acc_at: c.acc_at[i],
                ham_at: c.ham_at[i],
                spec_hash: spec_hash.into(),
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Two-panel SVG line plot (AccAt and HamAt against p) with the attack and
/// the baseline overlaid.
pub fn curves_svg(
    title: &str,
    attack: &CurveReport,
    baseline: &CurveReport,
    spec_hash: &str,
) -> String {
    const W: f64 = 360.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * W,
        H + 30.0
    );
    let _ = write!(s, "<!-- spec_hash: {spec_hash} -->");
    let _ = write!(
        s,
        r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#,
        W,
        escape(title)
    );
    for (panel, name) in [(0usize, "AccAt(p)"), (1, "HamAt(p)")] {
        let x0 = panel as f64 * W;
        let (left, right, top, bottom) = (x0 + PAD, x0 + W - 10.0, 30.0, H);
        let _ = write!(
            s,
            r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#,
            (left + right) / 2.0,
            top - 4.0 + 14.0
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">p</text>"#,
            (left + right) / 2.0,
            bottom + 24.0
        );
        for (v, label) in [(0.0, "0"), (1.0, "1")] {
            let y = bottom - v * (bottom - top);
            let _ = write!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
                left - 4.0,
                y + 4.0
            );
            let x = left + v * (right - left);
            let _ = write!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="middle">{label}</text>"#,
                bottom + 12.0
            );
        }
        for (c, colour) in [(attack, "#c0392b"), (baseline, "#2c3e50")] {
            let ys = if panel == 0 { &c.acc_at } else { &c.ham_at };
            let pts: Vec<String> = c
                .grid
                .iter()
                .zip(ys)
                .map(|(&p, &v)| {
                    format!(
                        "{:.2},{:.2}",
                        left + p * (right - left),
                        bottom - v.clamp(0.0, 1.0) * (bottom - top)
                    )
                })
                .collect();
            let _ = write!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"{}\" fill=\"#c0392b\">attack</text><text x=\"{}\" y=\"{}\" fill=\"#2c3e50\">baseline</text>",
        PAD + 10.0,
        H + 24.0,
        PAD + 60.0,
        H + 24.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::curves::curves_from_scores;

    fn row() -> ReportRow {
        ReportRow {
            backbone: "layout".into(),
            task: "MLM".into(),
            data: "forms".into(),
            criterion: "loss".into(),
            modality: "bimodal".into(),
            val_accuracy: 0.5,
            ipf: 1.25,
            ham_aac: 0.3,
            acc_auc: 0.1,
            acc_at_1: 1.0,
            acc_at_5: 0.5,
            acc_at_100: 0.05,
            baseline_ham_aac: 0.2,
            baseline_acc_auc: 0.05,
            spec_hash: "abc".into(),
        }
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table(&p, &[row()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("backbone,task,data,criterion,modality,val_accuracy,ipf,ham_aac,acc_auc,acc_at_1,acc_at_5,acc_at_100"));
        assert_eq!(read_table(&p).unwrap(), vec![row()]);
    }

    #[test]
    fn svg_and_curve_csv() {
        let a = curves_from_scores(&[1.0, 0.0], &[0.0, 1.0], None).unwrap();
        let b = curves_from_scores(&[0.0, 0.0], &[0.5, 1.0], None).unwrap();
        let svg = curves_svg("run <1>", &a, &b, "abc");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("run &lt;1&gt;") && svg.contains("spec_hash: abc"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_curves(&p, &a, &b, "abc").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 5);
    }
}
