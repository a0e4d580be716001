//! Online top-K evaluation on the cohort untreated at the split day.
//!
//! Patients are ranked by descending score; equal scores are broken by
//! ascending patient id so reports are reproducible.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::claims::PatientId;
use crate::error::{Error, Result};
use crate::fmt::sig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub k_values: Vec<usize>,
    pub hits: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub cohort_size: usize,
    pub future_positive_count: usize,
    pub base_rate: f64,
}

impl EvalReport {
    pub fn hits_at(&self, k: usize) -> Option<usize> {
        self.k_values.iter().position(|&x| x == k).map(|i| self.hits[i])
    }

    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }
}

/// Counts label-1 patients among the K best-scored, for every K.
///
/// `scores` and `truth` must cover the same patients. Duplicate K values
/// are collapsed and the report lists K ascending.
pub fn k_accuracy(
    mode: &str,
    scores: &[(PatientId, f64)],
    truth: &[(PatientId, bool)],
    k_values: &[usize],
) -> Result<EvalReport> {
    if scores.len() != truth.len() {
        return Err(Error::Eval(format!(
            "{} scores for a cohort of {}",
            scores.len(),
            truth.len()
        )));
    }
    let labels: HashMap<PatientId, bool> = truth.iter().copied().collect();
    if labels.len() != truth.len() {
        return Err(Error::Eval("duplicate patient in truth".into()));
    }
    let mut ranked = Vec::with_capacity(scores.len());
    for &(id, score) in scores {
        if !score.is_finite() {
            return Err(Error::Eval(format!("non-finite score for patient {id}")));
        }
        let label = *labels
            .get(&id)
            .ok_or_else(|| Error::Eval(format!("patient {id} scored but not in the cohort")))?;
        ranked.push((id, score, label));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Eval("duplicate patient in scores".into()));
    }

    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let cohort = ranked.len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > cohort) {
        return Err(Error::Eval(format!("K = {k} outside [1, {cohort}]")));
    }

    let mut cumulative = Vec::with_capacity(cohort + 1);
    cumulative.push(0usize);
    for &(_, _, label) in &ranked {
        cumulative.push(cumulative.last().unwrap() + usize::from(label));
    }
    let hits: Vec<usize> = ks.iter().map(|&k| cumulative[k]).collect();
    let accuracy = ks.iter().zip(&hits).map(|(&k, &h)| h as f64 / k as f64).collect();
    let positives = cumulative[cohort];
    Ok(EvalReport {
        mode: mode.to_string(),
        k_values: ks,
        hits,
        accuracy,
        cohort_size: cohort,
        future_positive_count: positives,
        base_rate: if cohort == 0 { 0.0 } else { positives as f64 / cohort as f64 },
    })
}

/// Relative lift of `a` over `b` per K, in percent:
/// `100 * (hits_a - hits_b) / hits_b`. `None` where `hits_b` is zero.
pub fn improvement(a: &EvalReport, b: &EvalReport) -> Result<Vec<Option<f64>>> {
    if a.k_values != b.k_values || a.cohort_size != b.cohort_size {
        return Err(Error::Eval(format!(
            "cannot compare {} and {}: K grids or cohorts differ",
            a.mode, b.mode
        )));
    }
    Ok(a.hits
        .iter()
        .zip(&b.hits)
        .map(|(&ha, &hb)| lift_pct(ha, hb))
        .collect())
}

pub fn lift_pct(hits_a: usize, hits_b: usize) -> Option<f64> {
    (hits_b != 0).then(|| 100.0 * (hits_a as f64 - hits_b as f64) / hits_b as f64)
}

/// `mode,K,hits,accuracy,cohort_size,future_positives,base_rate`
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("mode,K,hits,accuracy,cohort_size,future_positives,base_rate\n");
    for r in reports {
        for ((k, h), a) in r.k_values.iter().zip(&r.hits).zip(&r.accuracy) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.mode,
                k,
                h,
                sig(*a, 9),
                r.cohort_size,
                r.future_positive_count,
                sig(r.base_rate, 9)
            );
        }
    }
    out
}

/// `mode_a,mode_b,K,lift_pct` for every ordered pair given; undefined lifts
/// are written as `NA`.
pub fn improvement_csv(pairs: &[(&EvalReport, &EvalReport)]) -> Result<String> {
    let mut out = String::from("mode_a,mode_b,K,lift_pct\n");
    for (a, b) in pairs {
        for (k, lift) in a.k_values.iter().zip(improvement(a, b)?) {
            let lift = lift.map_or_else(|| "NA".to_string(), |v| sig(v, 9));
            let _ = writeln!(out, "{},{},{},{}", a.mode, b.mode, k, lift);
        }
    }
    Ok(out)
}

/// `mode,K,hits,accuracy`, one series per report.
pub fn curve_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("mode,K,hits,accuracy\n");
    for r in reports {
        for ((k, h), a) in r.k_values.iter().zip(&r.hits).zip(&r.accuracy) {
            let _ = writeln!(out, "{},{},{},{}", r.mode, k, h, sig(*a, 9));
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line chart of accuracy against K.
pub fn curve_svg(reports: &[EvalReport]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 20.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max_k = reports
        .iter()
        .flat_map(|r| r.k_values.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let max_acc = reports
        .iter()
        .flat_map(|r| r.accuracy.iter().copied())
        .fold(0.0f64, f64::max);
    let y_top = if max_acc > 0.0 { (max_acc * 1.1).min(1.0) } else { 1.0 };
    let px = |k: f64| left + plot_w * k / max_k;
    let py = |a: f64| top + plot_h * (1.0 - a / y_top);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h
    );
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let (kx, ay) = (px(max_k * frac), py(y_top * frac));
        let _ = writeln!(
            svg,
            r#"<text x="{kx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + plot_h + 16.0,
            (max_k * frac).round()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            ay + 4.0,
            y_top * frac
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">K</text>"#,
        left + plot_w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">accuracy</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = r
            .k_values
            .iter()
            .zip(&r.accuracy)
            .map(|(&k, &a)| format!("{:.2},{:.2}", px(k as f64), py(a)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for p in &points {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, r.mode);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<out_path>` as the curve CSV and, when `svg` is set, a sibling
/// `.svg` chart. Returns the paths written.
pub fn accuracy_curve(reports: &[EvalReport], out_path: &Path, svg: bool) -> Result<Vec<std::path::PathBuf>> {
    if reports.is_empty() || reports.iter().any(|r| r.k_values.is_empty()) {
        return Err(Error::Eval("empty report".into()));
    }
    fs::write(out_path, curve_csv(reports)).map_err(|e| Error::io(out_path, e))?;
    let mut written = vec![out_path.to_path_buf()];
    if svg {
        let svg_path = out_path.with_extension("svg");
        fs::write(&svg_path, curve_svg(reports)).map_err(|e| Error::io(&svg_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}

/// Hits per mode and K, then pairwise lifts, as a fixed-width text table.
pub fn summary_table(reports: &[EvalReport], lifts: &[(String, Vec<Option<f64>>)]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let label_w = lifts
        .iter()
        .map(|(l, _)| l.len())
        .chain(reports.iter().map(|r| r.mode.len()))
        .chain([1])
        .max()
        .unwrap()
        + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "K");
    for k in &first.k_values {
        let _ = write!(out, "{k:>10}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<label_w$}", r.mode);
        for h in &r.hits {
            let _ = write!(out, "{h:>10}");
        }
        out.push('\n');
    }
    for (label, values) in lifts {
        let _ = write!(out, "{label:<label_w$}");
        for v in values {
            match v {
                Some(v) => {
                    let _ = write!(out, "{:>10}", format!("{v:.2}%"));
                }
                None => {
                    let _ = write!(out, "{:>10}", "NA");
                }
            }
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "cohort {} | future positives {} | base rate {:.2}%",
        first.cohort_size,
        first.future_positive_count,
        100.0 * first.base_rate
    );
    out
}
