//! Standalone SVG line plots from CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub x: String,
    pub ys: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
    pub x_label: Option<String>,
    pub y_label: Option<String>,
}

const W: f64 = 720.0;
const H: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c", "#8d6e63", "#444444",
];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn read_columns(csv_text: &str, spec: &PlotSpec) -> Result<Vec<Series>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(csv_text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::runtime(format!("bad CSV header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::runtime(format!("missing column `{name}`")))
    };
    let xi = col(&spec.x)?;
    let yis = spec.ys.iter().map(|y| col(y)).collect::<Result<Vec<_>, _>>()?;
    let mut series: Vec<Series> = spec
        .ys
        .iter()
        .map(|y| Series {
            name: y.clone(),
            points: vec![],
        })
        .collect();
    for (row, rec) in rdr.records().enumerate() {
        // data rows are numbered from 1, after the header
        let row = row + 1;
        let rec = rec.map_err(|e| CliError::runtime(format!("row {row}: {e}")))?;
        let num = |i: usize, name: &str| -> Result<f64, CliError> {
            let s = rec.get(i).unwrap_or("");
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::runtime(format!("row {row}: non-numeric `{s}` in column `{name}`")))
        };
        let x = num(xi, &spec.x)?;
        if spec.log_x && x <= 0.0 {
            return Err(CliError::runtime(format!(
                "row {row}: nonpositive value {x} in column `{}` on a log axis",
                spec.x
            )));
        }
        for (s, &yi) in series.iter_mut().zip(&yis) {
            let y = num(yi, &s.name)?;
            if spec.log_y && y <= 0.0 {
                return Err(CliError::runtime(format!(
                    "row {row}: nonpositive value {y} in column `{}` on a log axis",
                    s.name
                )));
            }
            s.points.push((x, y));
        }
    }
    if series.first().is_none_or(|s| s.points.is_empty()) {
        return Err(CliError::runtime("no data"));
    }
    Ok(series)
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else if !log {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            let t: Vec<f64> = (a..=b)
                .map(|e| e as f64)
                .filter(|e| *e >= self.lo - 1e-9 && *e <= self.hi + 1e-9)
                .map(|e| 10f64.powf(e))
                .collect();
            if t.len() >= 2 {
                return t;
            }
            return vec![10f64.powf(self.lo), 10f64.powf(self.hi)];
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the plot as an SVG document.
pub fn render_svg(csv_text: &str, spec: &PlotSpec) -> Result<String, CliError> {
    let series = read_columns(csv_text, spec)?;
    let xa = Axis::new(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), spec.log_x);
    let ya = Axis::new(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), spec.log_y);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{b2}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{}</text>"#,
            fmt_tick(t),
            b = TOP + ph,
            b2 = TOP + ph + 5.0,
            ty = TOP + ph + 19.0
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{l2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{yt:.2}" text-anchor="end">{}</text>"#,
            fmt_tick(t),
            l2 = LEFT - 5.0,
            tx = LEFT - 8.0,
            yt = y + 4.0
        );
    }
    let xl = spec.x_label.clone().unwrap_or_else(|| spec.x.clone());
    let yl = spec.y_label.clone().unwrap_or_else(|| spec.ys.join(", "));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        escape(&xl)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(&yl),
        y = TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 12.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg_plot(csv_path: &Path, spec: &PlotSpec, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", csv_path.display())))?;
    let svg = render_svg(&text, spec)?;
    ltsm::io::write_atomic(out, svg.as_bytes())?;
    Ok(())
}
