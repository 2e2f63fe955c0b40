//! Minimal standalone SVG plots. Output depends only on the input values.

use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::{DeltaHistogram, PixelImage};
use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar plot of a Δt histogram; `log_scale` plots `log10(1 + count)`.
pub fn render_histogram_svg(hist: &DeltaHistogram, log_scale: bool, title: &str) -> Result<String> {
    if hist.total() == 0 {
        return Err(Error::Data("cannot render an empty histogram".into()));
    }
    let scale = |c: u64| if log_scale { (1.0 + c as f64).log10() } else { c as f64 };
    let y_max = hist.counts.iter().map(|&c| scale(c)).fold(0.0, f64::max);
    let x0 = hist.origin_ps;
    let x1 = hist.origin_ps + hist.counts.len() as f64 * hist.bin_width_ps;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_T + plot_h * (1.0 - y / y_max);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    let bar_w = (plot_w / hist.counts.len() as f64).max(0.5);
    for (i, &c) in hist.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x = px(x0 + i as f64 * hist.bin_width_ps);
        let y = py(scale(c));
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="#3b6ea8"/>"##,
            MARGIN_T + plot_h - y
        );
    }
    let base = MARGIN_T + plot_h;
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN_L} {MARGIN_T} V{base} H{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - MARGIN_R
    );
    for k in 0..=4 {
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            px(x),
            base + 18.0,
            x
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Δt (ps)</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let y_label = if log_scale { "log10(1 + counts)" } else { "counts" };
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );
    let top = if log_scale {
        format!("{:.2}", y_max)
    } else {
        format!("{}", y_max as u64)
    };
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{top}</text>"#,
        MARGIN_L - 6.0,
        MARGIN_T + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#,
        MARGIN_L - 6.0,
        base + 4.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Anchors of a perceptually ordered dark-to-bright map.
const COLORMAP: [(u8, u8, u8); 5] = [
    (68, 1, 84),
    (59, 82, 139),
    (33, 145, 140),
    (94, 201, 98),
    (253, 231, 37),
];

/// Colour for `v` in `[0, 1]`.
pub fn colormap(v: f64) -> String {
    let v = v.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let k = (v.floor() as usize).min(COLORMAP.len() - 2);
    let f = v - k as f64;
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (COLORMAP[k], COLORMAP[k + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// Colour-mapped pixel grid with the count printed in each cell.
pub fn render_image_svg(image: &PixelImage, title: &str) -> Result<String> {
    if image.counts.is_empty() {
        return Err(Error::Data("cannot render an image without pixels".into()));
    }
    let cell = 48.0;
    let w = MARGIN_L + image.n_cols as f64 * cell + MARGIN_R;
    let h = MARGIN_T + image.n_rows as f64 * cell + MARGIN_B;
    let max = image.counts.iter().copied().max().unwrap_or(0);
    let mut out = String::new();
    header(&mut out, w, h, title);
    for r in 0..image.n_rows {
        for c in 0..image.n_cols {
            let v = image.get(r, c);
            let level = if max == 0 { 0.0 } else { v as f64 / max as f64 };
            let x = MARGIN_L + c as f64 * cell;
            let y = MARGIN_T + r as f64 * cell;
            let ink = if level > 0.6 { "black" } else { "white" };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}"/>"#,
                colormap(level)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10" fill="{ink}">{v}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for c in 0..image.n_cols {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#,
            MARGIN_L + (c as f64 + 0.5) * cell,
            MARGIN_T + image.n_rows as f64 * cell + 16.0
        );
    }
    for r in 0..image.n_rows {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{r}</text>"#,
            MARGIN_L - 8.0,
            MARGIN_T + (r as f64 + 0.5) * cell + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">column</text>"#,
        MARGIN_L + image.n_cols as f64 * cell / 2.0,
        h - 10.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes rendered SVG text.
pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}
