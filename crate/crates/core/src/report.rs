//! Run CSV ingestion and SVG line charts of a metric against cumulative
//! communication.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::CSV_COLUMNS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Train,
    Unseen,
    GradNormSq,
}

impl Metric {
    pub fn column(self) -> &'static str {
        match self {
            Metric::Train => "train_metric",
            Metric::Unseen => "unseen_metric",
            Metric::GradNormSq => "grad_norm_sq",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "train_metric" => Ok(Metric::Train),
            "unseen" | "unseen_metric" => Ok(Metric::Unseen),
            "grad_norm_sq" | "grad" => Ok(Metric::GradNormSq),
            _ => Err(Error::param("metric", format!("unknown metric `{s}` (train, unseen, grad_norm_sq)"))),
        }
    }
}

/// Parsed data rows of a run CSV plus its `# key=value` header.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCsv {
    pub header: Vec<(String, String)>,
    pub iteration: Vec<u64>,
    pub comm_units: Vec<u64>,
    pub active_client: Vec<Option<usize>>,
    pub train_metric: Vec<f64>,
    pub unseen_metric: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
}

impl RunCsv {
    pub fn metric(&self, m: Metric) -> &[f64] {
        match m {
            Metric::Train => &self.train_metric,
            Metric::Unseen => &self.unseen_metric,
            Metric::GradNormSq => &self.grad_norm_sq,
        }
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let header = text
            .lines()
            .filter_map(|l| l.strip_prefix('#'))
            .filter_map(|l| l.trim().split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut out = RunCsv {
            header,
            iteration: vec![],
            comm_units: vec![],
            active_client: vec![],
            train_metric: vec![],
            unseen_metric: vec![],
            grad_norm_sq: vec![],
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let columns = reader
            .headers()
            .map_err(|e| Error::Format(format!("{name}: {e}")))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if columns != CSV_COLUMNS {
            return Err(Error::Format(format!("{name}: expected columns `{CSV_COLUMNS}`, got `{columns}`")));
        }
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::Format(format!("{name} line {line}: {e}"))
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |col: &str, v: &str| Error::Format(format!("{name} line {line}: bad {col} value `{v}`"));
            let int = |i: usize, col: &str| rec[i].parse::<u64>().map_err(|_| bad(col, &rec[i]));
            let float = |i: usize, col: &str| rec[i].parse::<f64>().map_err(|_| bad(col, &rec[i]));
            out.iteration.push(int(0, "iteration")?);
            out.comm_units.push(int(1, "comm_units")?);
            out.active_client.push(if rec[2].is_empty() {
                None
            } else {
                Some(int(2, "active_client")? as usize)
            });
            out.train_metric.push(float(3, "train_metric")?);
            out.unseen_metric.push(float(4, "unseen_metric")?);
            out.grad_norm_sq.push(float(5, "grad_norm_sq")?);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        RunCsv::parse(&text, &path.display().to_string())
    }
}

/// One labelled polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// Metric against cumulative communication; non-finite values are dropped.
    pub fn from_run(label: impl Into<String>, run: &RunCsv, metric: Metric) -> Result<Self> {
        let label = label.into();
        if let Some(w) = run.comm_units.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::Format(format!(
                "{label}: communication units decrease ({} -> {})",
                w[0], w[1]
            )));
        }
        let points = run
            .comm_units
            .iter()
            .zip(run.metric(metric))
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| (x as f64, y))
            .collect();
        Ok(Series { label, points })
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=5).map(|i| lo + (hi - lo) * i as f64 / 5.0).collect()
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Standalone SVG chart. Output is a pure function of the inputs.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str, title: &str) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for tx in ticks(x0, x1) {
        let px = sx(tx);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 18.0,
            tick_label(tx)
        );
    }
    for ty in ticks(y0, y1) {
        let py = sy(ty);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            py + 4.0,
            tick_label(ty)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads every CSV and renders one polyline per file, labelled by file stem.
pub fn report(paths: &[&Path], metric: Metric) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::param("csv", "need at least one CSV file"));
    }
    let series = paths
        .iter()
        .map(|p| {
            let run = RunCsv::read(p)?;
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Series::from_run(label, &run, metric)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(render_svg(&series, "cumulative communication units", metric.column(), metric.column()))
}
