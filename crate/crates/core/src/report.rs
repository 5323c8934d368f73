//! Standalone SVG panels for a results bundle.
//!
//! Every heat strip is min-max normalised on its own and coloured with a
//! monotone light-to-dark ramp; the ground-truth mask is drawn as a separate
//! black-and-white strip.

use std::fmt::Write as _;
use std::path::Path;

use crate::bundle::ResultsBundle;
use crate::error::{Error, Result};
use crate::metrics::minmax_normalize;

const WIDTH: f64 = 960.0;
const LABEL_W: f64 = 110.0;
const STRIP_H: f64 = 14.0;
const WAVE_H: f64 = 90.0;
const GAP: f64 = 4.0;

/// Light grey at 0, dark navy at 1; each channel decreases monotonically.
pub fn ramp(v: f64) -> (u8, u8, u8) {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(240.0, 10.0), lerp(240.0, 25.0), lerp(240.0, 70.0))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
    y: f64,
    plot_w: f64,
}

impl Canvas {
    fn label(&mut self, text: &str, h: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="4" y="{:.2}" font-size="10" font-family="monospace">{}</text>"#,
            self.y + h * 0.5 + 3.5,
            escape(text)
        );
    }

    /// Run-length encoded row of rectangles, one colour per sample.
    fn strip(&mut self, text: &str, colours: &[String]) {
        self.label(text, STRIP_H);
        let dx = self.plot_w / colours.len() as f64;
        let mut i = 0;
        while i < colours.len() {
            let mut j = i + 1;
            while j < colours.len() && colours[j] == colours[i] {
                j += 1;
            }
            let _ = writeln!(
                self.body,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{STRIP_H}" fill="{}"/>"#,
                LABEL_W + i as f64 * dx,
                self.y,
                (j - i) as f64 * dx,
                colours[i]
            );
            i = j;
        }
        self.y += STRIP_H + GAP;
    }

    fn heat(&mut self, text: &str, values: &[f64]) {
        let colours: Vec<String> = minmax_normalize(values).into_iter().map(|v| hex(ramp(v))).collect();
        self.strip(text, &colours);
    }

    fn waveform(&mut self, x: &[f64]) {
        self.label("waveform", WAVE_H);
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let dx = self.plot_w / (x.len().max(2) - 1) as f64;
        let mid = self.y + WAVE_H * 0.5;
        let pts: Vec<String> = x
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", LABEL_W + i as f64 * dx, mid - v / peak * WAVE_H * 0.45))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
        self.y += WAVE_H + GAP;
    }
}

/// Renders the waveform, each per-sample relevance row, each stored summary
/// and the ground-truth mask.
pub fn render_svg(b: &ResultsBundle) -> Result<String> {
    if b.x.is_empty() || b.rows.is_empty() {
        return Err(Error::Undefined("bundle has no rows to render"));
    }
    let mut c = Canvas { body: String::new(), y: 24.0, plot_w: WIDTH - LABEL_W - 10.0 };
    c.waveform(&b.x);
    for (i, row) in b.rows.iter().enumerate() {
        c.heat(&format!("sample {i}"), row);
    }
    for (name, map) in b.meta.summaries.iter().zip(&b.maps) {
        match map {
            Some(m) => c.heat(name, m),
            None => {
                c.label(&format!("{name} (undefined)"), STRIP_H);
                c.y += STRIP_H + GAP;
            }
        }
    }
    if let Some(mask) = &b.mask {
        let colours: Vec<String> = mask.iter().map(|&m| if m { "#000000" } else { "#ffffff" }.to_string()).collect();
        c.strip("ground truth", &colours);
    }
    let title = format!(
        "{} #{} ({}) | {} + {} | S = {} | class {}",
        b.meta.split,
        b.meta.instance,
        b.meta.label,
        b.meta.posterior,
        b.meta.operator,
        b.meta.samples,
        b.meta.target_class
    );
    let height = c.y + 6.0;
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH} {height:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"4\" y=\"14\" font-size=\"12\" font-family=\"monospace\">{}</text>\n{}</svg>\n",
        escape(&title),
        c.body
    ))
}

pub fn write_svg(path: &Path, b: &ResultsBundle) -> Result<()> {
    std::fs::write(path, render_svg(b)?).map_err(|e| Error::io(path, e))
}
