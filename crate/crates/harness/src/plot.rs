// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static SVG line plots. Panels are laid out side by side; series are
//! polylines broken at undefined values.

use std::fmt::Write as _;

use crate::output::Table;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 44.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Draw point markers in addition to the line.
    pub markers: bool,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Vertical marker, e.g. the change point.
    pub vline: Option<(f64, String)>,
    /// Horizontal reference line, e.g. the threshold.
    pub hline: Option<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Up to about six round tick values covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span.is_finite() && span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return Some((lo - pad, hi + pad));
    }
    let pad = (hi - lo) * 0.05;
    Some((lo - pad, hi + pad))
}

fn render_panel(out: &mut String, p: &Panel, x0: f64) {
    let xs = p
        .series
        .iter()
        .flat_map(|s| s.points.iter().filter(|q| q.1.is_finite()).map(|q| q.0));
    let ys = p.series.iter().flat_map(|s| s.points.iter().map(|q| q.1));
    let (xlo, xhi) = range(xs.chain(p.vline.iter().map(|v| v.0))).unwrap_or((0.0, 1.0));
    let (ylo, yhi) = range(ys.chain(p.hline.iter().map(|h| h.0))).unwrap_or((0.0, 1.0));
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| x0 + MARGIN_L + (x - xlo) / (xhi - xlo) * pw;
    let sy = |y: f64| MARGIN_T + (yhi - y) / (yhi - ylo) * ph;

    let _ = writeln!(out, "<g class=\"panel\">");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        x0 + MARGIN_L + pw / 2.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{:.1}\" y=\"{MARGIN_T:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#444\"/>",
        x0 + MARGIN_L
    );
    for t in ticks(xlo, xhi) {
        let x = sx(t);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#444\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            MARGIN_T + ph,
            MARGIN_T + ph + 4.0,
            MARGIN_T + ph + 15.0,
            tick_label(t)
        );
    }
    for t in ticks(ylo, yhi) {
        let y = sy(t);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#444\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{}</text>",
            x0 + MARGIN_L - 4.0,
            x0 + MARGIN_L,
            x0 + MARGIN_L - 6.0,
            y + 3.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
        x0 + MARGIN_L + pw / 2.0,
        PANEL_H - 8.0,
        escape(&p.x_label)
    );
    let (lx, ly) = (x0 + 14.0, MARGIN_T + ph / 2.0);
    let _ = writeln!(
        out,
        "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 {lx:.1} {ly:.1})\">{}</text>",
        escape(&p.y_label)
    );

    for (k, s) in p.series.iter().enumerate() {
        let _ = writeln!(
            out,
            "<g class=\"series\" data-label=\"{}\" data-points=\"{}\">",
            escape(&s.label),
            s.points
                .iter()
                .filter(|q| q.0.is_finite() && q.1.is_finite())
                .count()
        );
        let mut seg: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if !seg.is_empty() {
                let _ = writeln!(
                    out,
                    "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>",
                    s.color,
                    seg.join(" ")
                );
                seg.clear();
            }
        };
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                seg.push(format!("{:.2},{:.2}", sx(x), sy(y)));
            } else {
                flush(&mut seg, out);
            }
        }
        flush(&mut seg, out);
        if s.markers {
            for &(x, y) in s
                .points
                .iter()
                .filter(|q| q.0.is_finite() && q.1.is_finite())
            {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>",
                    sx(x),
                    sy(y),
                    s.color
                );
            }
        }
        let _ = writeln!(out, "</g>");
        if p.series.len() > 1 {
            let y = MARGIN_T + 12.0 + 13.0 * k as f64;
            let x = x0 + MARGIN_L + 8.0;
            let _ = writeln!(
                out,
                "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{}</text>",
                x + 14.0,
                s.color,
                x + 18.0,
                y + 3.0,
                escape(&s.label)
            );
        }
    }
    if let Some((v, label)) = &p.vline {
        let x = sx(*v);
        let _ = writeln!(
            out,
            "<line class=\"vmarker\" x1=\"{x:.1}\" y1=\"{MARGIN_T:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"red\" stroke-dasharray=\"5,3\"/><text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"red\">{}</text>",
            MARGIN_T + ph,
            x + 3.0,
            MARGIN_T + ph - 4.0,
            escape(label)
        );
    }
    if let Some((v, label)) = &p.hline {
        let y = sy(*v);
        let _ = writeln!(
            out,
            "<line class=\"hmarker\" x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#888\" stroke-dasharray=\"2,2\"/><text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#666\" text-anchor=\"end\">{}</text>",
            x0 + MARGIN_L,
            x0 + MARGIN_L + pw,
            x0 + MARGIN_L + pw - 2.0,
            y - 3.0,
            escape(label)
        );
    }
    let _ = writeln!(out, "</g>");
}

pub fn render(panels: &[Panel]) -> String {
    let w = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{PANEL_H:.0}\" viewBox=\"0 0 {w:.0} {PANEL_H:.0}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_W);
    }
    let _ = writeln!(out, "</svg>");
    out
}

/// Three panels from `trace.csv`: state norm, update term, CUSUM statistic.
pub fn trace_svg(csv: &str, tau: Option<usize>, threshold: f64) -> anyhow::Result<String> {
    let table = Table::parse(csv)?;
    let t = table.column("t")?;
    let panel =
        |col: &str, title: &str, y_label: &str, color: &'static str| -> anyhow::Result<Panel> {
            let ys = table.column(col)?;
            Ok(Panel {
                title: title.into(),
                x_label: "t".into(),
                y_label: y_label.into(),
                series: vec![Series {
                    label: col.into(),
                    color,
                    points: t.iter().copied().zip(ys).collect(),
                    markers: false,
                }],
                vline: tau.map(|v| (v as f64, format!("tau = {v}"))),
                hline: None,
            })
        };
    let mut panels = vec![
        panel("state_norm", "state norm", "||X_t||", "#1f77b4")?,
        panel("s_t", "update term", "s_t", "#2ca02c")?,
        panel("s_hat", "CUSUM statistic", "S_n", "#9467bd")?,
    ];
    panels[1].hline = Some((0.0, "0".into()));
    panels[2].hline = Some((threshold, format!("b = {threshold}")));
    Ok(render(&panels))
}

/// Empirical mean (±2 standard errors) and theory bound versus `b`, from `campaign.csv`.
pub fn campaign_svg(csv: &str, title: &str, y_label: &str) -> anyhow::Result<String> {
    let table = Table::parse(csv)?;
    let b = table.column("b")?;
    let mean = table.column("empirical_mean")?;
    let se = table.column("std_error")?;
    let bound = table.column("theory_bound")?;
    let zip = |ys: Vec<f64>| b.iter().copied().zip(ys).collect::<Vec<_>>();
    let band = |sign: f64| {
        zip(mean
            .iter()
            .zip(&se)
            .map(|(m, s)| m + sign * 2.0 * s)
            .collect())
    };
    let panel = Panel {
        title: title.into(),
        x_label: "threshold b".into(),
        y_label: y_label.into(),
        series: vec![
            Series {
                label: "empirical mean".into(),
                color: "#1f77b4",
                points: zip(mean.clone()),
                markers: true,
            },
            Series {
                label: "mean - 2 se".into(),
                color: "#aec7e8",
                points: band(-1.0),
                markers: false,
            },
            Series {
                label: "mean + 2 se".into(),
                color: "#aec7e8",
                points: band(1.0),
                markers: false,
            },
            Series {
                label: "theory bound".into(),
                color: "#d62728",
                points: zip(bound),
                markers: true,
            },
        ],
        vline: None,
        hline: None,
    };
    Ok(render(&[panel]))
}
