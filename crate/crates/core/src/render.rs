//! Static figures: false-color composites (PNG) and training curves (SVG).

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};

/// Band triple used for Washington DC Mall composites (191 bands).
pub const DC_MALL_BANDS: [usize; 3] = [56, 26, 16];
/// Band triple used for Salinas composites (204 bands).
pub const SALINAS_BANDS: [usize; 3] = [29, 19, 9];

/// Composite bands for a cube with `bands` channels: the dataset triples for
/// the two reference band counts, otherwise bands at 75%, 40% and 10% of the
/// spectral range.
pub fn default_rgb_bands(bands: usize) -> [usize; 3] {
    match bands {
        191 => DC_MALL_BANDS,
        204 => SALINAS_BANDS,
        _ => {
            let at = |f: f64| ((bands - 1) as f64 * f).round() as usize;
            [at(0.75), at(0.4), at(0.1)]
        }
    }
}

/// RGB composite from three bands, values clamped to `[0, 1]`.
pub fn false_color(cube: &HsiCube, rgb: [usize; 3]) -> Result<RgbImage> {
    if let Some(&b) = rgb.iter().find(|&&b| b >= cube.bands()) {
        return Err(HsiError::InvalidParameter(format!(
            "band {b} out of range for cube with {} bands",
            cube.bands()
        )));
    }
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(cube.width() as u32, cube.height() as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(rgb.map(|b| to_u8(cube.get(r, c, b))))
    }))
}

pub fn save_false_color(cube: &HsiCube, rgb: [usize; 3], path: &Path) -> Result<()> {
    false_color(cube, rgb)?.save(path)?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot with axes, ticks and a legend. Single-point series are drawn as
/// markers; non-finite points are skipped.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 <= 0.0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r##"<line x1="{px}" y1="{top}" x2="{px}" y2="{}" stroke="#ddd"/>"##, top + ph);
        let _ = writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 16.0, fmt_tick(xv));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py}" x2="{}" y2="{py}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let p: Vec<(f64, f64)> =
            ser.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if p.len() == 1 {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="4" fill="{color}"/>"#, sx(p[0].0), sy(p[0].1));
        } else if p.len() > 1 {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
        }
        let ly = top + 14.0 + 20.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 22.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_band_triples() {
        assert_eq!(default_rgb_bands(191), [56, 26, 16]);
        assert_eq!(default_rgb_bands(204), [29, 19, 9]);
        assert!(default_rgb_bands(16).iter().all(|&b| b < 16));
    }

    #[test]
    fn composite_clamps_and_checks_range() {
        let c = HsiCube::from_fn(2, 3, 4, |r, _, b| if b == 0 { -1.0 } else { r as f32 * 2.0 }).unwrap();
        let img = false_color(&c, [0, 1, 2]).unwrap();
        assert_eq!(img.dimensions(), (3, 2));
        assert_eq!(img.get_pixel(0, 1).0, [0, 255, 255]);
        assert!(false_color(&c, [0, 1, 4]).is_err());
    }

    #[test]
    fn single_point_plot_draws_marker() {
        let svg = line_plot_svg("t", "x", "y", &[Series { name: "a".into(), points: vec![(10.0, 3.0)] }]);
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("NaN"));
    }
}
