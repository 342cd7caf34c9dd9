//! Tables (CSV and markdown) and figures (SVG) for experiment results.
//!
//! Files are named `<experiment>_<kind>.<ext>`. Numbers in CSV files use the
//! shortest representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rumsim_core::analysis::{EquivalenceRow, LinearFit, ParamSamples, Summary};
use rumsim_core::estimation::Metrics;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    RecoveryTable,
    FitTable,
    QBoxplot,
    QTiming,
    EquivalenceTable,
}

impl ReportKind {
    pub fn name(self) -> &'static str {
        match self {
            ReportKind::RecoveryTable => "recovery_table",
            ReportKind::FitTable => "fit_table",
            ReportKind::QBoxplot => "q_boxplot",
            ReportKind::QTiming => "q_timing",
            ReportKind::EquivalenceTable => "equivalence_table",
        }
    }
}

/// Mean and standard deviation of each parameter for several estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    pub parameters: Vec<String>,
    /// True values, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    pub estimators: Vec<EstimatorColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorColumn {
    pub label: String,
    /// Successful samples behind each summary.
    pub n: usize,
    pub failures: usize,
    /// One entry per parameter; `None` when the estimator lacks it.
    pub cells: Vec<Option<Estimate>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Absent for a single sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl From<&Summary> for Estimate {
    fn from(s: &Summary) -> Self {
        Estimate {
            mean: s.mean,
            std: Some(s.std),
        }
    }
}

/// Fit metrics of one estimator on one data split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub label: String,
    /// Fold, sweep value or `all`.
    pub group: String,
    pub train: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
}

/// Estimates of one estimator across replications at each Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSweep {
    pub label: String,
    pub truth: Vec<(String, f64)>,
    pub q_values: Vec<usize>,
    pub samples: Vec<ParamSamples>,
}

/// Mean wall time of one fit at each Q with the fitted line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSweep {
    pub label: String,
    pub q_values: Vec<usize>,
    pub wall_secs: Vec<f64>,
    pub fit: LinearFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<EquivalenceRow>,
}

#[derive(Clone, Copy, Debug)]
pub enum Report<'a> {
    Recovery(&'a ParamTable),
    Fit(&'a [FitRow]),
    QBoxplot(&'a QSweep),
    QTiming(&'a TimingSweep),
    Equivalence(&'a EquivalenceReport),
}

impl Report<'_> {
    pub fn kind(&self) -> ReportKind {
        match self {
            Report::Recovery(_) => ReportKind::RecoveryTable,
            Report::Fit(_) => ReportKind::FitTable,
            Report::QBoxplot(_) => ReportKind::QBoxplot,
            Report::QTiming(_) => ReportKind::QTiming,
            Report::Equivalence(_) => ReportKind::EquivalenceTable,
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Report::Recovery(t) => t.parameters.is_empty() || t.estimators.is_empty(),
            Report::Fit(rows) => rows.is_empty(),
            Report::QBoxplot(q) => q.q_values.is_empty() || q.samples.iter().all(ParamSamples::is_empty),
            Report::QTiming(t) => t.q_values.is_empty(),
            Report::Equivalence(e) => e.rows.is_empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Empty,
}

/// A rectangular table rendered to CSV and markdown.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Lines printed under the markdown table.
    pub notes: Vec<String>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Csv {
            path: PathBuf::from("<table>"),
            source: e,
        };
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Text(t) => t.clone(),
                Cell::Num(v) => v.to_string(),
                Cell::Empty => String::new(),
            }))
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<table>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", self.columns.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.columns.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Text(t) => t.clone(),
                    Cell::Num(v) => format_number(*v),
                    Cell::Empty => String::new(),
                })
                .collect();
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                let _ = writeln!(s, "{n}");
            }
        }
        s
    }
}

fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v.abs() >= 1e-3 || v == 0.0 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

fn num_or_empty(v: Option<f64>) -> Cell {
    match v {
        Some(x) if x.is_finite() => Cell::Num(x),
        _ => Cell::Empty,
    }
}

pub fn recovery_table(t: &ParamTable) -> Table {
    let mut columns = vec!["Parameter".to_string()];
    if t.truth.is_some() {
        columns.push("True".into());
    }
    for e in &t.estimators {
        columns.push(format!("{} Estimated", e.label));
        columns.push(format!("{} Std", e.label));
    }
    let rows = t
        .parameters
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut row = vec![Cell::Text(p.clone())];
            if let Some(truth) = &t.truth {
                row.push(Cell::Num(truth[k]));
            }
            for e in &t.estimators {
                let s = e.cells.get(k).and_then(Option::as_ref);
                row.push(num_or_empty(s.map(|s| s.mean)));
                row.push(num_or_empty(s.and_then(|s| s.std)));
            }
            row
        })
        .collect();
    let notes = t
        .estimators
        .iter()
        .map(|e| format!("{}: {} successful runs, {} failed", e.label, e.n, e.failures))
        .collect();
    Table { columns, rows, notes }
}

pub fn fit_table(rows: &[FitRow]) -> Table {
    let columns = [
        "Model",
        "Group",
        "Train N",
        "Train log-likelihood",
        "Train accuracy",
        "Test N",
        "Test log-likelihood",
        "Test accuracy",
    ]
    .map(String::from)
    .to_vec();
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Text(r.label.clone()),
                Cell::Text(r.group.clone()),
                Cell::Num(r.train.n as f64),
                Cell::Num(r.train.log_likelihood),
                Cell::Num(r.train.accuracy),
                num_or_empty(r.test.map(|m| m.n as f64)),
                num_or_empty(r.test.map(|m| m.log_likelihood)),
                num_or_empty(r.test.map(|m| m.accuracy)),
            ]
        })
        .collect();
    Table {
        columns,
        rows,
        notes: Vec::new(),
    }
}

pub fn equivalence_table(e: &EquivalenceReport) -> Table {
    let columns = vec![
        "Parameter".to_string(),
        format!("{} mean", e.label_a),
        format!("{} mean", e.label_b),
        "t".into(),
        "t-test p-value".into(),
        "t-test conclusion".into(),
        "TOST margin".into(),
        "TOST p-value".into(),
        "TOST conclusion".into(),
    ];
    let rows = e
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Text(r.name.clone()),
                Cell::Num(r.mean_a),
                Cell::Num(r.mean_b),
                Cell::Num(r.ttest.t),
                Cell::Num(r.ttest.p_value),
                Cell::Text(if r.ttest.not_different() { "Not different" } else { "Different" }.into()),
                Cell::Num(r.tost.margin),
                Cell::Num(r.tost.p_value),
                Cell::Text(if r.tost.equivalent() { "Equivalent" } else { "Not equivalent" }.into()),
            ]
        })
        .collect();
    Table {
        columns,
        rows,
        notes: vec!["TOST margin: 0.2 x mean of the two absolute means unless overridden.".into()],
    }
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    lo: f64,
    hi: f64,
    mean: f64,
    std: f64,
}

fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let lo = *v.iter().find(|&&x| x >= q1 - 1.5 * iqr).unwrap_or(&v[0]);
    let hi = *v.iter().rev().find(|&&x| x <= q3 + 1.5 * iqr).unwrap_or(&v[v.len() - 1]);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(BoxStats {
        q1,
        median,
        q3,
        lo,
        hi,
        mean,
        std,
    })
}

pub fn q_sweep_table(q: &QSweep) -> Table {
    let columns = ["Q", "Parameter", "True", "N", "Mean", "Std", "Median", "Q1", "Q3"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for (qi, &qv) in q.q_values.iter().enumerate() {
        let s = &q.samples[qi];
        for (k, (name, truth)) in q.truth.iter().enumerate() {
            let col: Vec<f64> = s.get(name).unwrap_or_else(|| s.column(k));
            let b = box_stats(&col);
            rows.push(vec![
                Cell::Num(qv as f64),
                Cell::Text(name.clone()),
                Cell::Num(*truth),
                Cell::Num(col.len() as f64),
                num_or_empty(b.map(|b| b.mean)),
                num_or_empty(b.map(|b| b.std)),
                num_or_empty(b.map(|b| b.median)),
                num_or_empty(b.map(|b| b.q1)),
                num_or_empty(b.map(|b| b.q3)),
            ]);
        }
    }
    Table {
        columns,
        rows,
        notes: vec![format!("Estimator: {}", q.label)],
    }
}

pub fn timing_table(t: &TimingSweep) -> Table {
    let columns = vec!["Q".to_string(), "Wall time (s)".into(), "Fitted (s)".into()];
    let rows = t
        .q_values
        .iter()
        .zip(&t.wall_secs)
        .map(|(&q, &w)| {
            vec![
                Cell::Num(q as f64),
                Cell::Num(w),
                Cell::Num(t.fit.intercept + t.fit.slope * q as f64),
            ]
        })
        .collect();
    Table {
        columns,
        rows,
        notes: vec![format!(
            "{}: time = {:.4e} + {:.4e} x Q, R^2 = {:.4}",
            t.label, t.fit.intercept, t.fit.slope, t.fit.r_squared
        )],
    }
}

/// Round tick spacing covering `[lo, hi]` in about five steps.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn svg_header(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// Per-parameter panels with one box per Q, a dashed line at the true value
/// and a shaded band at mean ± one standard deviation.
pub fn q_boxplot_svg(q: &QSweep) -> String {
    let panel_w = 220.0;
    let panel_h = 260.0;
    let (ml, mt, mb) = (50.0, 30.0, 40.0);
    let width = q.truth.len() as f64 * (panel_w + ml) + 20.0;
    let height = panel_h + mt + mb;
    let mut s = String::new();
    svg_header(&mut s, width, height);
    for (k, (name, truth)) in q.truth.iter().enumerate() {
        let stats: Vec<Option<BoxStats>> = q
            .samples
            .iter()
            .map(|smp| box_stats(&smp.get(name).unwrap_or_else(|| smp.column(k))))
            .collect();
        let mut lo = *truth;
        let mut hi = *truth;
        for b in stats.iter().flatten() {
            lo = lo.min(b.lo).min(b.mean - b.std);
            hi = hi.max(b.hi).max(b.mean + b.std);
        }
        let pad = ((hi - lo) * 0.08).max(1e-3);
        let (lo, hi) = (lo - pad, hi + pad);
        let x0 = ml + k as f64 * (panel_w + ml);
        let y = |v: f64| mt + panel_h * (hi - v) / (hi - lo);
        let _ = writeln!(s, r#"<g class="panel" data-parameter="{name}">"#);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{mt:.2}" width="{panel_w:.2}" height="{panel_h:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{name}</text>"#,
            x0 + panel_w / 2.0,
            mt - 10.0
        );
        for t in ticks(lo, hi) {
            let yt = y(t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{yt:.2}" x2="{x0:.2}" y2="{yt:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                yt + 4.0,
                format_tick(t)
            );
        }
        let slot = panel_w / q.q_values.len() as f64;
        for (i, (&qv, b)) in q.q_values.iter().zip(&stats).enumerate() {
            let cx = x0 + slot * (i as f64 + 0.5);
            let bw = slot * 0.5;
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{qv}</text>"#,
                mt + panel_h + 15.0
            );
            let Some(b) = b else { continue };
            let _ = writeln!(
                s,
                r#"<rect class="sigma" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue" fill-opacity="0.15"/>"#,
                cx - slot * 0.45,
                y(b.mean + b.std),
                slot * 0.9,
                y(b.mean - b.std) - y(b.mean + b.std)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.hi),
                y(b.lo)
            );
            let _ = writeln!(
                s,
                r#"<rect class="box" x="{:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="white" stroke="black"/>"#,
                cx - bw / 2.0,
                y(b.q3),
                (y(b.q1) - y(b.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - bw / 2.0,
                y(b.median),
                cx + bw / 2.0,
                y(b.median)
            );
        }
        let _ = writeln!(
            s,
            r#"<line class="truth" x1="{x0:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6,4"/>"#,
            y(*truth),
            x0 + panel_w,
            y(*truth)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Q</text>"#,
            x0 + panel_w / 2.0,
            mt + panel_h + 32.0
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Wall time against Q with the least-squares line.
pub fn q_timing_svg(t: &TimingSweep) -> String {
    let (w, h) = (520.0, 340.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 45.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let qmax = t.q_values.iter().copied().max().unwrap_or(1) as f64;
    let tmax = t.wall_secs.iter().copied().fold(0.0f64, f64::max).max(t.fit.intercept + t.fit.slope * qmax);
    let (xhi, yhi) = (qmax * 1.05, tmax.max(1e-9) * 1.1);
    let x = |q: f64| ml + pw * q / xhi;
    let y = |v: f64| mt + ph * (1.0 - v / yhi);
    let mut s = String::new();
    svg_header(&mut s, w, h);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for tk in ticks(0.0, yhi) {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{ml}" y2="{:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 4.0,
            y(tk),
            y(tk),
            ml - 6.0,
            y(tk) + 4.0,
            format_tick(tk)
        );
    }
    for tk in ticks(0.0, xhi) {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x(tk),
            mt + ph,
            x(tk),
            mt + ph + 4.0,
            x(tk),
            mt + ph + 16.0,
            format_tick(tk)
        );
    }
    let _ = writeln!(
        s,
        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick"/>"#,
        x(0.0),
        y(t.fit.intercept),
        x(qmax),
        y(t.fit.intercept + t.fit.slope * qmax)
    );
    for (&q, &sec) in t.q_values.iter().zip(&t.wall_secs) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="steelblue"/>"#,
            x(q as f64),
            y(sec)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Q</text>"#,
        ml + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">wall time (s)</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">{}: R² = {:.4}</text>"#,
        ml + 10.0,
        mt + 16.0,
        t.label,
        t.fit.r_squared
    );
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write the files of `report` into `dir`; returns the paths written.
pub fn emit_report(report: &Report<'_>, dir: impl AsRef<Path>, experiment: &str) -> Result<Vec<PathBuf>> {
    let kind = report.kind();
    if report.is_empty() {
        return Err(Error::EmptyReport(format!("{experiment}_{}", kind.name())));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = dir.join(format!("{experiment}_{}", kind.name()));
    let table = match report {
        Report::Recovery(t) => recovery_table(t),
        Report::Fit(rows) => fit_table(rows),
        Report::QBoxplot(q) => q_sweep_table(q),
        Report::QTiming(t) => timing_table(t),
        Report::Equivalence(e) => equivalence_table(e),
    };
    let mut written = Vec::new();
    let mut emit = |ext: &str, contents: &str| -> Result<()> {
        let p = stem.with_extension(ext);
        write_file(&p, contents)?;
        written.push(p);
        Ok(())
    };
    emit("csv", &table.to_csv()?)?;
    emit("md", &table.to_markdown())?;
    match report {
        Report::QBoxplot(q) => emit("svg", &q_boxplot_svg(q))?,
        Report::QTiming(t) => emit("svg", &q_timing_svg(t))?,
        _ => {}
    }
    Ok(written)
}
