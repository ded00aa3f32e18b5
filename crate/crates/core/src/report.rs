//! Campaign summaries: fit tables as CSV and plots as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ensemble::{
    ensemble_a_hom, rstar_tail, stationarity_check, tail_report, variance_decay_fit, EnsembleConfig,
    RstarTail, SampleRecord, StationarityReport, TailReport, VarianceDecay,
};
use crate::error::{LabError, Result};
use crate::sensitivity::{lq_scaling_fit, ScalingStudy};
use crate::stats::MeanEstimate;

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub failed: usize,
    pub a_hom: Option<Vec<MeanEstimate>>,
    pub variance: Option<VarianceDecay>,
    pub tail: Option<TailReport>,
    pub rstar: Option<RstarTail>,
    pub stationarity: Option<StationarityReport>,
    pub sensitivity: Option<ScalingStudy>,
    /// Why a section is missing.
    pub notes: Vec<String>,
}

fn section<T>(name: &str, r: Result<T>, notes: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{name}: {e}"));
            None
        }
    }
}

pub fn summarize(config: &EnsembleConfig, records: &[SampleRecord]) -> Summary {
    let mut notes = Vec::new();
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let norms: Vec<Vec<f64>> = ok.iter().filter_map(|r| r.sensitivity.clone()).collect();
    let sensitivity = if norms.is_empty() {
        None
    } else {
        section("sensitivity", lq_scaling_fit(&config.radii, norms, config.beta), &mut notes)
    };
    Summary {
        samples: records.len(),
        failed: records.len() - ok.len(),
        a_hom: ensemble_a_hom(records),
        variance: section("variance", variance_decay_fit(config, records), &mut notes),
        tail: section("tail", tail_report(config, records), &mut notes),
        rstar: section("rstar", rstar_tail(config, records), &mut notes),
        stationarity: section("stationarity", stationarity_check(config, records), &mut notes),
        sensitivity,
        notes,
    }
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    quantity: &'a str,
    r: Option<f64>,
    m: Option<f64>,
    value: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    count: Option<usize>,
    note: String,
}

impl<'a> Row<'a> {
    fn new(quantity: &'a str, value: f64) -> Self {
        Row {
            quantity,
            r: None,
            m: None,
            value,
            ci_low: None,
            ci_high: None,
            count: None,
            note: String::new(),
        }
    }

    fn ci(mut self, ci: (f64, f64)) -> Self {
        self.ci_low = Some(ci.0);
        self.ci_high = Some(ci.1);
        self
    }
}

/// Long-format table `quantity,r,m,value,ci_low,ci_high,count,note`. The
/// first row carries the resolved configuration as JSON.
pub fn summary_csv(config: &EnsembleConfig, summary: &Summary) -> Result<String> {
    let mut rows = Vec::new();
    let mut cfg_row = Row::new("config", summary.samples as f64);
    cfg_row.note = serde_json::to_string(config)?;
    rows.push(cfg_row);
    rows.push(Row::new("failed_samples", summary.failed as f64));
    if let Some(a) = &summary.a_hom {
        for (e, est) in a.iter().enumerate() {
            let mut row = Row::new("a_hom", est.mean).ci(est.interval(0.95));
            row.count = Some(est.count);
            row.note = format!("entry {},{}", e / config.d, e % config.d);
            rows.push(row);
        }
    }
    if let Some(v) = &summary.variance {
        for (r, var) in v.radii.iter().zip(&v.variances) {
            let mut row = Row::new("variance", *var);
            row.r = Some(*r);
            row.count = Some(v.samples);
            rows.push(row);
        }
        let mut row = Row::new("variance_slope", v.fit.slope).ci(v.fit.slope_ci);
        row.note = format!("predicted {} r2 {}", v.predicted_slope, v.fit.r_squared);
        rows.push(row);
    }
    if let Some(t) = &summary.tail {
        rows.push(Row::new("tail_scale", t.scale));
        for tr in &t.rows {
            let mut row = Row::new("tail_probability", tr.p_hat).ci(tr.interval);
            row.r = Some(tr.r);
            row.m = Some(tr.m);
            row.count = Some(tr.count);
            rows.push(row);
        }
        if let Some(f) = &t.fit {
            let mut row = Row::new("tail_slope", f.linear.slope).ci(f.linear.slope_ci);
            row.note = format!("-log P vs r^beta M^2, r2 {}", f.linear.r_squared);
            row.count = Some(f.points);
            rows.push(row);
            let mut row = Row::new("tail_quantile_slope", f.quantile.slope).ci(f.quantile.slope_ci);
            row.note = "z^2 vs r^beta M^2 through origin".into();
            row.count = Some(f.points);
            rows.push(row);
        }
    }
    if let Some(t) = &summary.rstar {
        for (k, r0) in t.r0.iter().enumerate() {
            let mut row = Row::new("rstar_survival", t.p_hat[k]).ci(t.intervals[k]);
            row.r = Some(*r0);
            row.count = Some(t.count);
            row.note = format!("isotonic {}", t.p_isotonic[k]);
            rows.push(row);
        }
        rows.push(Row::new("rstar_censored", t.censored as f64));
        if let Some(f) = &t.fit {
            let mut row = Row::new("rstar_slope", f.slope).ci(f.slope_ci);
            row.note = format!("-log P vs r0^beta, r2 {}", f.r_squared);
            rows.push(row);
        }
    }
    if let Some(s) = &summary.stationarity {
        for m in &s.means {
            let mut row = Row::new("window_mean", m.estimate.mean).ci(m.interval99);
            row.r = Some(m.r);
            row.count = Some(m.estimate.count);
            row.note = format!("window {} (99%)", m.window);
            rows.push(row);
        }
        rows.push(Row::new("stationarity_flag", if s.flagged { 1.0 } else { 0.0 }));
    }
    if let Some(s) = &summary.sensitivity {
        for (r, v) in s.radii.iter().zip(&s.mean_norms) {
            let mut row = Row::new("sensitivity_norm", *v);
            row.r = Some(*r);
            row.count = Some(s.norms.len());
            rows.push(row);
        }
        let mut row = Row::new("sensitivity_slope", s.fit.slope).ci(s.fit.slope_ci);
        row.note = format!("predicted {}", s.predicted_slope);
        rows.push(row);
    }
    for n in &summary.notes {
        let mut row = Row::new("skipped", f64::NAN);
        row.note = n.clone();
        rows.push(row);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| LabError::invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    Dots,
    Line,
    /// Dots with vertical interval bars; `Series::bars` holds the ends.
    Bars,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub bars: Vec<(f64, f64)>,
    pub mark: Mark,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, mark: Mark) -> Self {
        Series {
            label: label.into(),
            points,
            bars: Vec::new(),
            mark,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Free text placed in the SVG metadata.
    pub metadata: String,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn tx(&self, v: f64) -> Option<f64> {
        let t = if self.log_x { v.log10() } else { v };
        t.is_finite().then_some(t)
    }

    fn ty(&self, v: f64) -> Option<f64> {
        let t = if self.log_y { v.log10() } else { v };
        t.is_finite().then_some(t)
    }

    pub fn to_svg(&self) -> String {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if let (Some(a), Some(b)) = (self.tx(x), self.ty(y)) {
                    xs.push(a);
                    ys.push(b);
                }
            }
            for &(lo, hi) in &s.bars {
                ys.extend(self.ty(lo));
                ys.extend(self.ty(hi));
            }
        }
        let range = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let pw = W - PAD_L - PAD_R;
        let ph = H - PAD_T - PAD_B;
        let px = |t: f64| PAD_L + (t - x0) / (x1 - x0) * pw;
        let py = |t: f64| PAD_T + (1.0 - (t - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, "<metadata>{}</metadata>", escape(&self.metadata));
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            PAD_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{PAD_L}" y="{PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (tx, ty) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let lx = if self.log_x { 10f64.powf(tx) } else { tx };
            let ly = if self.log_y { 10f64.powf(ty) } else { ty };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                px(tx),
                H - PAD_B + 16.0,
                tick(lx)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                PAD_L - 6.0,
                py(ty) + 4.0,
                tick(ly)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            PAD_L + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            PAD_T + ph / 2.0,
            PAD_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some((px(self.tx(x)?), py(self.ty(y)?))))
                .collect();
            match s.mark {
                Mark::Line => {
                    let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                        path.join(" ")
                    );
                }
                Mark::Dots | Mark::Bars => {
                    if s.mark == Mark::Bars {
                        for (&(x, _), &(lo, hi)) in s.points.iter().zip(&s.bars) {
                            let (Some(a), Some(b), Some(c)) = (self.tx(x), self.ty(lo), self.ty(hi)) else {
                                continue;
                            };
                            let _ = writeln!(
                                out,
                                r#"<line x1="{0:.1}" x2="{0:.1}" y1="{1:.1}" y2="{2:.1}" stroke="{color}"/>"#,
                                px(a),
                                py(b),
                                py(c)
                            );
                        }
                    }
                    for (a, b) in &pts {
                        let _ = writeln!(out, r#"<circle cx="{a:.1}" cy="{b:.1}" r="3" fill="{color}"/>"#);
                    }
                }
            }
            let ly = PAD_T + 14.0 + 18.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                W - PAD_R + 10.0,
                ly - 9.0,
                W - PAD_R + 25.0,
                ly,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn variance_plot(v: &VarianceDecay, metadata: &str) -> Plot {
    let pts: Vec<(f64, f64)> = v.radii.iter().cloned().zip(v.variances.iter().cloned()).collect();
    let fitted = v.radii.iter().map(|&r| (r, v.fit.predict(r.ln()).exp())).collect();
    Plot {
        title: "Variance of cube averages".into(),
        x_label: "r".into(),
        y_label: "Var F_r".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::new("sample variance", pts, Mark::Dots),
            Series::new(format!("fit slope {:.3}", v.fit.slope), fitted, Mark::Line),
        ],
        metadata: metadata.into(),
    }
}

pub fn tail_plot(t: &TailReport, beta: f64, metadata: &str) -> Plot {
    let mut radii: Vec<f64> = t.rows.iter().map(|r| r.r).collect();
    radii.dedup();
    let mut series: Vec<Series> = radii
        .iter()
        .map(|&r| {
            let rows: Vec<_> = t.rows.iter().filter(|row| row.r == r && row.p_hat > 0.0).collect();
            let mut s = Series::new(
                format!("r = {r}"),
                rows.iter().map(|row| (r.powf(beta) * row.m * row.m, -row.p_hat.ln())).collect(),
                Mark::Bars,
            );
            s.bars = rows
                .iter()
                .map(|row| (-row.interval.1.ln(), -row.interval.0.max(1e-300).ln()))
                .collect();
            s
        })
        .collect();
    if let Some(f) = &t.fit {
        let xs: Vec<f64> = t.rows.iter().map(|row| row.r.powf(beta) * row.m * row.m).collect();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        series.push(Series::new(
            format!("fit slope {:.3}", f.linear.slope),
            vec![(lo, f.linear.predict(lo)), (hi, f.linear.predict(hi))],
            Mark::Line,
        ));
    }
    Plot {
        title: "Exceedance probabilities".into(),
        x_label: "r^beta M^2".into(),
        y_label: "-log P(|F_r| >= M)".into(),
        log_x: false,
        log_y: false,
        series,
        metadata: metadata.into(),
    }
}

pub fn rstar_plot(t: &RstarTail, metadata: &str) -> Plot {
    let mut raw = Series::new(
        "P(r_* > r0)",
        t.r0.iter().cloned().zip(t.p_hat.iter().cloned()).collect(),
        Mark::Bars,
    );
    raw.bars = t.intervals.clone();
    Plot {
        title: "Survival of the minimal radius".into(),
        x_label: "r0".into(),
        y_label: "probability".into(),
        log_x: true,
        log_y: false,
        series: vec![
            raw,
            Series::new(
                "isotonic",
                t.r0.iter().cloned().zip(t.p_isotonic.iter().cloned()).collect(),
                Mark::Line,
            ),
        ],
        metadata: metadata.into(),
    }
}

/// Writes `summary.csv`, `summary.json` and the SVG plots into `dir`.
pub fn write_report(dir: &Path, config: &EnsembleConfig, records: &[SampleRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let summary = summarize(config, records);
    let meta = serde_json::to_string(config)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("summary.csv", summary_csv(config, &summary)?)?;
    put(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::json!({ "config": config, "summary": summary }))?,
    )?;
    if let Some(v) = &summary.variance {
        put("variance_decay.svg", variance_plot(v, &meta).to_svg())?;
    }
    if let Some(t) = &summary.tail {
        put("tail_curves.svg", tail_plot(t, config.beta, &meta).to_svg())?;
    }
    if let Some(t) = &summary.rstar {
        put("rstar_survival.svg", rstar_plot(t, &meta).to_svg())?;
    }
    Ok(written)
}
