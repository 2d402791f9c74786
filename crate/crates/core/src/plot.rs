//! Hand-emitted SVG for decision maps and sweep curves.

use std::fmt::Write as _;

use crate::boundary::DecisionMap;
use crate::error::{Error, Result};

const BLUE: &str = "#1f77b4";
const ORANGE: &str = "#ff7f0e";
const POS_FILL: &str = "#c6dbef";
const NEG_FILL: &str = "#fdd0a2";
const SIZE: f64 = 400.0;
const PAD: f64 = 40.0;

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
}

/// Filled sign regions with sample projections: positive labels as blue
/// circles, negative labels as orange crosses.
pub fn decision_map_svg(map: &DecisionMap, title: &str) -> String {
    let res = map.resolution;
    let total = SIZE + 2.0 * PAD;
    let cell = SIZE / res as f64;
    let hw = map.half_width;
    let to_px = |a: f64, b: f64| (PAD + (a + hw) / (2.0 * hw) * SIZE, PAD + (hw - b) / (2.0 * hw) * SIZE);

    let mut out = String::new();
    header(&mut out, total, total);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, total / 2.0, escape(title));
    for i in 0..res {
        for j in 0..res {
            let fill = match map.signs[[i, j]] {
                1 => POS_FILL,
                -1 => NEG_FILL,
                _ => "#ffffff",
            };
            let x = PAD + j as f64 * cell;
            let y = PAD + (res - 1 - i) as f64 * cell;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#,
                cell + 0.01,
                cell + 0.01
            );
        }
    }
    for set in &map.projections {
        for &(a, b, y) in set {
            if a.abs() > hw || b.abs() > hw {
                continue;
            }
            let (px, py) = to_px(a, b);
            if y > 0.0 {
                let _ = writeln!(out, r#"<circle cx="{px:.3}" cy="{py:.3}" r="3" fill="none" stroke="{BLUE}"/>"#);
            } else {
                let _ = writeln!(
                    out,
                    r#"<path d="M{:.3} {:.3}L{:.3} {:.3}M{:.3} {:.3}L{:.3} {:.3}" stroke="{ORANGE}"/>"#,
                    px - 3.0,
                    py - 3.0,
                    px + 3.0,
                    py + 3.0,
                    px - 3.0,
                    py + 3.0,
                    px + 3.0,
                    py - 3.0
                );
            }
        }
    }
    let _ = writeln!(out, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">v</text>"#, total / 2.0, total - 12.0);
    let _ = writeln!(out, r#"<text x="14" y="{}" text-anchor="middle">u</text>"#, total / 2.0);
    out.push_str("</svg>\n");
    out
}

/// One line of a sweep plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// Line chart with a log-2 x axis and a `[0, 1]` y axis. The first series is
/// drawn blue, the second orange, later ones grey.
pub fn sweep_svg(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    if xs.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    if xs.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("sweep values must be positive for a log axis".into()));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min).log2();
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log2();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (SIZE * 1.5 + 2.0 * PAD, SIZE + 2.0 * PAD);
    let px = |x: f64| PAD + (x.log2() - lo) / span * SIZE * 1.5;
    let py = |y: f64| PAD + (1.0 - y.clamp(0.0, 1.0)) * SIZE;

    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{SIZE}" fill="none" stroke="black"/>"#, SIZE * 1.5);
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, PAD - 4.0, py(y) + 4.0);
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#, px(t), h - PAD + 16.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 6.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = match k {
            0 => BLUE,
            1 => ORANGE,
            _ => "#7f7f7f",
        };
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            PAD + 8.0,
            PAD + 16.0 + 14.0 * k as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Parses a decision-map CSV (`alpha,beta,sign`) back into a grid.
pub fn map_from_csv(text: &str) -> Result<DecisionMap> {
    let mut rows: Vec<(f64, f64, i8)> = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("line {}: expected alpha,beta,sign", k + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let a: f64 = f[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = f[1].trim().parse().map_err(|_| bad())?;
        let s: i8 = f[2].trim().parse().map_err(|_| bad())?;
        rows.push((a, b, s));
    }
    let res = (rows.len() as f64).sqrt().round() as usize;
    if res == 0 || res * res != rows.len() {
        return Err(Error::InvalidArgument(format!("{} grid cells do not form a square", rows.len())));
    }
    let coords: Vec<f64> = rows[..res].iter().map(|r| r.0).collect();
    let half_width = coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let signs = ndarray::Array2::from_shape_fn((res, res), |(i, j)| rows[i * res + j].2);
    Ok(DecisionMap {
        half_width: if half_width > 0.0 { half_width } else { 1.0 },
        resolution: res,
        coords,
        signs,
        v_hat: ndarray::Array1::zeros(0),
        u_hat: ndarray::Array1::zeros(0),
        projections: Vec::new(),
    })
}

/// Reads a sweep summary CSV and returns median accuracy and agreement per
/// axis value as two series.
pub fn series_from_sweep_csv(text: &str) -> Result<(String, Vec<Series>)> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        head.iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("sweep CSV lacks column `{name}`")))
    };
    let (ia, iv, iacc, iagr) = (col("axis")?, col("value")?, col("accuracy")?, col("agreement")?);
    let mut axis = String::new();
    let mut by_value: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>)> = Default::default();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() <= iagr {
            continue;
        }
        axis = f[ia].to_string();
        let (Ok(v), Ok(acc), Ok(agr)) = (f[iv].parse::<u64>(), f[iacc].parse::<f64>(), f[iagr].parse::<f64>()) else {
            continue;
        };
        let e = by_value.entry(v).or_default();
        e.0.push(acc);
        e.1.push(agr);
    }
    if by_value.is_empty() {
        return Err(Error::InvalidArgument("sweep CSV has no successful rows".into()));
    }
    let pts = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        by_value.iter().map(|(v, e)| (*v as f64, crate::linalg::median(pick(e)))).collect::<Vec<_>>()
    };
    Ok((
        axis,
        vec![
            Series {
                label: "accuracy".into(),
                points: pts(|e| &e.0),
                dashed: false,
            },
            Series {
                label: "agreement".into(),
                points: pts(|e| &e.1),
                dashed: true,
            },
        ],
    ))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
