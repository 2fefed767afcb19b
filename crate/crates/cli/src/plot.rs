//! Static SVG rendering of density histograms with an optional φ overlay.

use std::fmt::Write as _;

use sketchlab::empirical::standard_normal_pdf;

pub const OVERLAY_POINTS: usize = 200;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("histogram CSV is empty")]
    Empty,
    #[error("expected header `bin_center,density`, found `{0}`")]
    Header(String),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("bin centers are not evenly spaced")]
    Uneven,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bar {
    pub center: f64,
    pub density: f64,
}

pub fn parse_histogram_csv(text: &str) -> Result<Vec<Bar>, PlotError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(PlotError::Empty)?;
    if header.trim() != "bin_center,density" {
        return Err(PlotError::Header(header.to_string()));
    }
    let mut bars = Vec::new();
    for (i, line) in lines {
        let row = |reason: &str| PlotError::Row { line: i + 1, reason: reason.to_string() };
        let mut fields = line.split(',');
        let (Some(c), Some(d), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(row("expected two comma-separated fields"));
        };
        let center: f64 = c.trim().parse().map_err(|_| row("bin center is not a number"))?;
        let density: f64 = d.trim().parse().map_err(|_| row("density is not a number"))?;
        if !center.is_finite() || !density.is_finite() || density < 0.0 {
            return Err(row("values must be finite with non-negative density"));
        }
        if bars.last().is_some_and(|b: &Bar| b.center >= center) {
            return Err(row("bin centers must increase"));
        }
        bars.push(Bar { center, density });
    }
    if bars.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(bars)
}

fn bin_width(bars: &[Bar]) -> Result<f64, PlotError> {
    if bars.len() == 1 {
        return Ok(1.0);
    }
    let width = (bars[bars.len() - 1].center - bars[0].center) / (bars.len() - 1) as f64;
    for w in bars.windows(2) {
        if ((w[1].center - w[0].center) - width).abs() > 1e-9 * width.max(1.0) {
            return Err(PlotError::Uneven);
        }
    }
    Ok(width)
}

/// SVG document for a `bin_center,density` CSV. Coordinates are printed at
/// fixed precision so identical input gives identical bytes.
pub fn emit_plot(csv: &str, overlay: bool) -> Result<String, PlotError> {
    let bars = parse_histogram_csv(csv)?;
    let width = bin_width(&bars)?;
    let x_lo = bars[0].center - width / 2.0;
    let x_hi = bars[bars.len() - 1].center + width / 2.0;
    let mut y_hi = bars.iter().map(|b| b.density).fold(0.0, f64::max);
    if overlay {
        y_hi = y_hi.max(standard_normal_pdf(0.0));
    }
    let y_hi = if y_hi > 0.0 { y_hi * 1.1 } else { 1.0 };
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - y / y_hi * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    svg.push_str("<g fill=\"#7a9cc6\" stroke=\"#3b5b85\" stroke-width=\"0.5\">\n");
    for b in &bars {
        let left = sx(b.center - width / 2.0);
        let top = sy(b.density);
        let _ = writeln!(
            svg,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
            left,
            top,
            sx(b.center + width / 2.0) - left,
            sy(0.0) - top
        );
    }
    svg.push_str("</g>\n");

    if overlay {
        let mut points = String::new();
        for i in 0..OVERLAY_POINTS {
            let t = x_lo + (x_hi - x_lo) * i as f64 / (OVERLAY_POINTS - 1) as f64;
            let _ = write!(points, "{}{:.3},{:.3}", if i == 0 { "" } else { " " }, sx(t), sy(standard_normal_pdf(t)));
        }
        let _ = writeln!(svg, r##"<polyline fill="none" stroke="#c0392b" stroke-width="1.5" points="{points}"/>"##);
    }

    // Axes with ticks at integer abscissae and five ordinate steps.
    let _ = writeln!(
        svg,
        r#"<path d="M{:.3} {:.3}H{:.3}M{:.3} {:.3}V{:.3}" stroke="black" fill="none"/>"#,
        MARGIN,
        sy(0.0),
        WIDTH - MARGIN,
        MARGIN,
        sy(0.0),
        MARGIN
    );
    let mut tick = x_lo.ceil();
    let step = ((x_hi - x_lo) / 10.0).ceil().max(1.0);
    while tick <= x_hi {
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#, sx(tick), HEIGHT - MARGIN + 16.0, tick);
        tick += step;
    }
    for k in 0..=5 {
        let y = y_hi * k as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{:.2}</text>"#, MARGIN - 6.0, sy(y) + 4.0, y);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
