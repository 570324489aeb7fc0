//! Static SVG figures. Every function is pure: the same inputs give the same
//! bytes (coordinates are written with fixed precision).

use std::fmt::Write;

use dualnet_core::datagen::FEATURES;
use dualnet_core::dual::TrainingHistory;
use dualnet_core::training::LearningCurve;

use crate::report::PredictionRow;

const SERIES: [(&str, &str); 3] = [
    ("sigma1", "#1f77b4"),
    ("sigma2", "#d62728"),
    ("sigma_tot", "#2ca02c"),
];
const CURVES: [(&str, &str); 3] = [
    ("train", "#333333"),
    ("test_id", "#1f77b4"),
    ("test_ood", "#d62728"),
];

#[derive(Debug, Clone, Copy)]
struct Rect {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

/// A data window mapped onto a pixel rectangle. With `log_y`, `y` holds
/// log10 bounds and `py` takes raw values.
#[derive(Debug, Clone, Copy)]
struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    rect: Rect,
    log_y: bool,
}

impl Axes {
    fn px(&self, v: f64) -> f64 {
        self.rect.left + (v - self.x.0) / (self.x.1 - self.x.0) * self.rect.width
    }

    fn py(&self, v: f64) -> f64 {
        let v = if self.log_y { v.log10() } else { v };
        self.rect.top + self.rect.height - (v - self.y.0) / (self.y.1 - self.y.0) * self.rect.height
    }

    fn frame(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let Rect {
            left,
            top,
            width,
            height,
        } = self.rect;
        let bottom = top + height;
        let _ = writeln!(
            out,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{width:.2}" height="{height:.2}" fill="none" stroke="black"/>"#
        );
        for t in ticks(self.x.0, self.x.1) {
            let x = self.px(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                bottom + 4.0,
                bottom + 15.0,
                fmt_tick(t)
            );
        }
        let y_ticks = if self.log_y {
            let decades: Vec<f64> = (self.y.0.ceil() as i32..=self.y.1.floor() as i32)
                .map(|k| 10f64.powi(k))
                .collect();
            if decades.len() >= 2 {
                decades
            } else {
                ticks(self.y.0, self.y.1).into_iter().map(|t| 10f64.powf(t)).collect()
            }
        } else {
            ticks(self.y.0, self.y.1)
        };
        for t in y_ticks {
            let y = self.py(t);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                left - 4.0,
                left - 6.0,
                y + 3.5,
                fmt_tick(t)
            );
        }
        let cx = left + width / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            top - 8.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            bottom + 32.0,
            escape(xlabel)
        );
        let cy = top + height / 2.0;
        let lx = left - 42.0;
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{cy:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {lx:.2} {cy:.2})">{}</text>"#,
            escape(ylabel)
        );
    }

    fn no_data(&self, out: &mut String) {
        let _ = writeln!(
            out,
            r#"<text class="no-data" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14" fill="gray">no data</text>"#,
            self.rect.left + self.rect.width / 2.0,
            self.rect.top + self.rect.height / 2.0
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Min and max of the finite values, padded by 5%. Empty input gives [0, 1];
/// a single value gives a unit window around it.
fn extent(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// About five round-numbered ticks inside [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| raw <= *s)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn legend(out: &mut String, x: f64, y: f64, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="10">{name}</text>"#,
            yy - 9.0,
            x + 14.0,
            yy
        );
    }
}

fn curve_panel(out: &mut String, curve: &LearningCurve, title: &str, rect: Rect) {
    let cols: [Vec<(f64, f64)>; 3] = [
        curve.points.iter().map(|p| (p.epoch as f64, p.train)).collect(),
        curve
            .points
            .iter()
            .filter_map(|p| Some((p.epoch as f64, p.test_id?)))
            .collect(),
        curve
            .points
            .iter()
            .filter_map(|p| Some((p.epoch as f64, p.test_ood?)))
            .collect(),
    ];
    let all = cols.iter().flatten().filter(|p| p.1.is_finite());
    let log_y = all.clone().all(|p| p.1 > 0.0);
    let y = if log_y {
        extent(all.clone().map(|p| p.1.log10()))
    } else {
        extent(all.clone().map(|p| p.1))
    };
    let axes = Axes {
        x: extent(all.map(|p| p.0)),
        y,
        rect,
        log_y,
    };
    axes.frame(out, title, "epoch", "RMSE");
    if curve.is_empty() {
        axes.no_data(out);
        return;
    }
    for (pts, (name, color)) in cols.iter().zip(CURVES) {
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="{name}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
    }
    legend(out, rect.left + rect.width - 70.0, rect.top + 14.0, &CURVES);
}

/// RMSE against epoch for both networks, one panel each.
pub fn learning_curves(history: &TrainingHistory) -> String {
    let mut body = String::new();
    let panel = |left| Rect {
        left,
        top: 35.0,
        width: 380.0,
        height: 280.0,
    };
    curve_panel(&mut body, &history.bnn, "BNN", panel(70.0));
    curve_panel(&mut body, &history.vnet, "variance net", panel(540.0));
    document(960.0, 370.0, &body)
}

/// σ₁, σ₂ and σ_tot against absolute error for one split: one circle per
/// prediction row in each series.
pub fn uncertainty_scatter(rows: &[PredictionRow], title: &str) -> String {
    let mut body = String::new();
    let err: Vec<f64> = rows.iter().map(PredictionRow::abs_error).collect();
    let sig = |r: &PredictionRow| [r.sigma1, r.sigma2, r.sigma_tot];
    let axes = Axes {
        x: extent(err.iter().copied()),
        y: extent(rows.iter().flat_map(sig)),
        rect: Rect {
            left: 70.0,
            top: 35.0,
            width: 460.0,
            height: 320.0,
        },
        log_y: false,
    };
    axes.frame(&mut body, title, "|error|", "predicted std");
    if rows.is_empty() {
        axes.no_data(&mut body);
    }
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let _ = writeln!(body, r#"<g class="{name}" fill="{color}" fill-opacity="0.5">"#);
        for (r, e) in rows.iter().zip(&err) {
            let _ = writeln!(
                body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.8"/>"#,
                axes.px(*e),
                axes.py(sig(r)[k])
            );
        }
        body.push_str("</g>\n");
    }
    legend(&mut body, 460.0, 50.0, &SERIES);
    document(560.0, 400.0, &body)
}

/// Overlaid histograms of σ₁ and σ₂ for one group of rows.
pub fn uncertainty_histograms(rows: &[PredictionRow], title: &str, bins: usize) -> String {
    let mut body = String::new();
    let values: [Vec<f64>; 2] = [
        rows.iter().map(|r| r.sigma1).collect(),
        rows.iter().map(|r| r.sigma2).collect(),
    ];
    let (lo, hi) = extent(values.iter().flatten().copied());
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = values
        .iter()
        .map(|vs| {
            let mut c = vec![0; bins];
            for v in vs {
                let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        })
        .collect();
    let top = counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let axes = Axes {
        x: (lo, hi),
        y: (0.0, top as f64 * 1.05),
        rect: Rect {
            left: 70.0,
            top: 35.0,
            width: 460.0,
            height: 320.0,
        },
        log_y: false,
    };
    axes.frame(&mut body, title, "predicted std", "count");
    if rows.is_empty() {
        axes.no_data(&mut body);
    }
    for (c, (name, color)) in counts.iter().zip(&SERIES[..2]) {
        let _ = writeln!(body, r#"<g class="{name}" fill="{color}" fill-opacity="0.45">"#);
        for (k, &n) in c.iter().enumerate().filter(|(_, n)| **n > 0) {
            let x0 = axes.px(lo + k as f64 * width);
            let x1 = axes.px(lo + (k + 1) as f64 * width);
            let y = axes.py(n as f64);
            let _ = writeln!(
                body,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}"/>"#,
                x1 - x0,
                axes.py(0.0) - y
            );
        }
        body.push_str("</g>\n");
    }
    legend(&mut body, 460.0, 50.0, &SERIES[..2]);
    document(560.0, 400.0, &body)
}

/// Scatter matrix of the six features (histograms on the diagonal), drawn
/// from every k-th row so that at most `max_points` rows appear.
pub fn pair_plot(features: &[[f64; FEATURES]], max_points: usize) -> String {
    let stride = features.len().div_ceil(max_points.max(1)).max(1);
    let rows: Vec<&[f64; FEATURES]> = features.iter().step_by(stride).collect();
    let cell = 130.0;
    let margin = 50.0;
    let mut body = String::new();
    let ranges: Vec<(f64, f64)> = (0..FEATURES)
        .map(|j| extent(rows.iter().map(|r| r[j])))
        .collect();
    for i in 0..FEATURES {
        for j in 0..FEATURES {
            let rect = Rect {
                left: margin + j as f64 * cell,
                top: margin + i as f64 * cell,
                width: cell - 10.0,
                height: cell - 10.0,
            };
            let _ = writeln!(
                body,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999999"/>"##,
                rect.left, rect.top, rect.width, rect.height
            );
            if rows.is_empty() {
                continue;
            }
            if i == j {
                let bins = 15;
                let (lo, hi) = ranges[j];
                let w = (hi - lo) / bins as f64;
                let mut c = vec![0usize; bins];
                for r in &rows {
                    c[(((r[j] - lo) / w).floor().max(0.0) as usize).min(bins - 1)] += 1;
                }
                let top = *c.iter().max().unwrap_or(&1) as f64;
                let axes = Axes {
                    x: (lo, hi),
                    y: (0.0, top * 1.05),
                    rect,
                    log_y: false,
                };
                let _ = writeln!(body, r##"<g class="hist" fill="#7f7f7f">"##);
                for (k, &n) in c.iter().enumerate().filter(|(_, n)| **n > 0) {
                    let x0 = axes.px(lo + k as f64 * w);
                    let y = axes.py(n as f64);
                    let _ = writeln!(
                        body,
                        r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}"/>"#,
                        axes.px(lo + (k + 1) as f64 * w) - x0,
                        axes.py(0.0) - y
                    );
                }
                body.push_str("</g>\n");
            } else {
                let axes = Axes {
                    x: ranges[j],
                    y: ranges[i],
                    rect,
                    log_y: false,
                };
                let _ = writeln!(body, r##"<g class="points" fill="#1f77b4" fill-opacity="0.4">"##);
                for r in &rows {
                    let _ = writeln!(
                        body,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#,
                        axes.px(r[j]),
                        axes.py(r[i])
                    );
                }
                body.push_str("</g>\n");
            }
        }
    }
    for k in 0..FEATURES {
        let c = margin + k as f64 * cell + (cell - 10.0) / 2.0;
        let _ = writeln!(
            body,
            r#"<text x="{c:.2}" y="{:.2}" text-anchor="middle" font-size="12">x{}</text><text x="{:.2}" y="{c:.2}" text-anchor="end" font-size="12">x{}</text>"#,
            margin - 12.0,
            k + 1,
            margin - 8.0,
            k + 1
        );
    }
    if rows.is_empty() {
        let mid = margin + FEATURES as f64 * cell / 2.0;
        let _ = writeln!(
            body,
            r#"<text class="no-data" x="{mid:.2}" y="{mid:.2}" text-anchor="middle" font-size="14" fill="gray">no data</text>"#
        );
    }
    let size = 2.0 * margin + FEATURES as f64 * cell;
    document(size, size, &body)
}
