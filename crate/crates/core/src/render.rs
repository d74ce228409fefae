//! Minimal SVG charts and PGM rasters.

use std::fmt::Write as _;

use crate::dataset::{UnitCell, CELL_SIZE};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One named series of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Dots,
    Lines,
}

/// Chart title and axis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartLabels<'a> {
    pub title: &'a str,
    pub x: &'a str,
    pub y: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Self-contained SVG chart with axes, ticks and a legend.
pub fn svg_chart(series: &[Series], labels: &ChartLabels, mark: Mark) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 55.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(labels.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#333"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"##,
            sx(xv),
            top + ph,
            top + ph + 5.0,
            top + ph + 19.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="#333"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"##,
            left - 5.0,
            sy(yv),
            left,
            left - 8.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(labels.x)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(labels.y)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match mark {
            Mark::Dots => {
                for (x, y) in &ser.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.6"/>"#,
                        sx(*x),
                        sy(*y)
                    );
                }
            }
            Mark::Lines => {
                let pts: Vec<String> = ser
                    .points
                    .iter()
                    .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
            }
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            ly - 9.0,
            lx + 15.0,
            ly,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5) of a grid of cells (row-major), with a `gap`-pixel
/// mid-gray separator. White is material, black is void.
pub fn pgm_grid(rows: &[Vec<UnitCell>], gap: usize) -> Vec<u8> {
    let nr = rows.len();
    let nc = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let width = nc * CELL_SIZE + nc.saturating_sub(1) * gap;
    let height = nr * CELL_SIZE + nr.saturating_sub(1) * gap;
    let mut px = vec![128u8; width * height];
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let ox = c * (CELL_SIZE + gap);
            let oy = r * (CELL_SIZE + gap);
            for y in 0..CELL_SIZE {
                for x in 0..CELL_SIZE {
                    px[(oy + y) * width + ox + x] = to_byte(cell.get(y, x));
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    out
}

pub fn pgm_strip(cells: &[UnitCell], gap: usize) -> Vec<u8> {
    pgm_grid(&[cells.to_vec()], gap)
}

/// SVG grid of cells drawn as run-length rectangles, with an optional caption.
pub fn svg_grid(rows: &[Vec<UnitCell>], scale: usize, caption: &str) -> String {
    let gap = 4;
    let cell_px = CELL_SIZE * scale;
    let nc = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let width = nc * (cell_px + gap) + gap;
    let caption_h = if caption.is_empty() { 0 } else { 24 };
    let height = rows.len() * (cell_px + gap) + gap + caption_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" shape-rendering="crispEdges" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(
        s,
        r##"<rect width="{width}" height="{height}" fill="#888"/>"##
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let ox = gap + c * (cell_px + gap);
            let oy = gap + r * (cell_px + gap);
            let _ = writeln!(s, r#"<g transform="translate({ox},{oy})">"#);
            for y in 0..CELL_SIZE {
                let mut x = 0;
                while x < CELL_SIZE {
                    let v = to_byte(cell.get(y, x));
                    let start = x;
                    while x < CELL_SIZE && to_byte(cell.get(y, x)) == v {
                        x += 1;
                    }
                    let _ = writeln!(
                        s,
                        r#"<rect x="{}" y="{}" width="{}" height="{scale}" fill="rgb({v},{v},{v})"/>"#,
                        start * scale,
                        y * scale,
                        (x - start) * scale
                    );
                }
            }
            s.push_str("</g>\n");
        }
    }
    if !caption.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{gap}" y="{}" fill="white">{}</text>"#,
            height - 8,
            escape(caption)
        );
    }
    s.push_str("</svg>\n");
    s
}
