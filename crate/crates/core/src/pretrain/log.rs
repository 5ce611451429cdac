use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN_CSV: &str = "train_perplexity.csv";
pub const VALID_CSV: &str = "valid_perplexity.csv";
pub const CURVES_SVG: &str = "perplexity.svg";

/// Training perplexity per update and validation perplexity per evaluation.
/// Validation epochs may be fractional when evaluating more than once per
/// epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerplexityLog {
    pub train_points: Vec<(u64, f64)>,
    pub valid_points: Vec<(f64, f64)>,
}

impl PerplexityLog {
    pub fn push_train(&mut self, step: u64, ppl: f64) -> Result<()> {
        if self.train_points.last().is_some_and(|&(s, _)| s >= step) {
            return Err(Error::Structure(format!("training step {step} is not increasing")));
        }
        check_ppl(ppl)?;
        self.train_points.push((step, ppl));
        Ok(())
    }

    pub fn push_valid(&mut self, epoch: f64, ppl: f64) -> Result<()> {
        if self.valid_points.last().is_some_and(|&(e, _)| e >= epoch) {
            return Err(Error::Structure(format!("validation epoch {epoch} is not increasing")));
        }
        check_ppl(ppl)?;
        self.valid_points.push((epoch, ppl));
        Ok(())
    }

    /// Drops points logged after update `step`.
    pub fn truncate_to_step(&mut self, step: u64, updates_per_epoch: u64) {
        self.train_points.retain(|&(s, _)| s <= step);
        let max_epoch = step as f64 / updates_per_epoch as f64;
        self.valid_points.retain(|&(e, _)| e <= max_epoch + 1e-12);
    }

    pub fn train_csv(&self) -> String {
        let mut s = String::from("step,ppl\n");
        for (step, ppl) in &self.train_points {
            let _ = writeln!(s, "{step},{ppl}");
        }
        s
    }

    pub fn valid_csv(&self) -> String {
        let mut s = String::from("epoch,ppl\n");
        for (epoch, ppl) in &self.valid_points {
            let _ = writeln!(s, "{epoch},{ppl}");
        }
        s
    }

    /// Writes both CSVs and the two-panel SVG into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, body) in [
            (TRAIN_CSV, self.train_csv()),
            (VALID_CSV, self.valid_csv()),
            (CURVES_SVG, render_svg(self)),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut log = PerplexityLog::default();
        for (step, ppl) in read_pairs(&dir.join(TRAIN_CSV), "step,ppl")? {
            let step = step.parse::<u64>().map_err(|e| parse_err(dir, TRAIN_CSV, e))?;
            log.push_train(step, ppl)?;
        }
        for (epoch, ppl) in read_pairs(&dir.join(VALID_CSV), "epoch,ppl")? {
            let epoch = epoch.parse::<f64>().map_err(|e| parse_err(dir, VALID_CSV, e))?;
            log.push_valid(epoch, ppl)?;
        }
        Ok(log)
    }
}

fn check_ppl(ppl: f64) -> Result<()> {
    if ppl.is_finite() && ppl > 0.0 {
        Ok(())
    } else {
        Err(Error::Structure(format!("perplexity must be positive and finite, got {ppl}")))
    }
}

fn parse_err(dir: &Path, name: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: dir.join(name),
        line: 0,
        message: e.to_string(),
    }
}

fn read_pairs(path: &Path, header: &str) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != header {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("expected header {header:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m,
        };
        let (x, y) = line.split_once(',').ok_or_else(|| bad("expected two columns".into()))?;
        let y = y.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        out.push((x.trim().to_string(), y));
    }
    Ok(out)
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;

/// Two side-by-side panels (training per step, validation per epoch), log
/// scale on the perplexity axis.
pub fn render_svg(log: &PerplexityLog) -> String {
    let train: Vec<(f64, f64)> = log.train_points.iter().map(|&(s, p)| (s as f64, p)).collect();
    let width = 2.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, MARGIN, "Training perplexity", "step", &train, "#1f77b4");
    panel(
        &mut svg,
        2.0 * MARGIN + PANEL_W,
        "Validation perplexity",
        "epoch",
        &log.valid_points,
        "#d62728",
    );
    svg.push_str("</svg>\n");
    svg
}

fn panel(svg: &mut String, x0: f64, title: &str, xlabel: &str, pts: &[(f64, f64)], color: &str) {
    let y0 = MARGIN;
    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{title}</text>"#,
        x0 + PANEL_W / 2.0,
        y0 - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#,
        x0 + PANEL_W / 2.0,
        y0 + PANEL_H + 35.0
    );
    if !pts.is_empty() {
        let (xmin, xmax) = bounds(pts.iter().map(|p| p.0));
        let (lmin, lmax) = bounds(pts.iter().map(|p| p.1.log10()));
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * PANEL_W;
        let sy = |l: f64| y0 + PANEL_H - (l - lmin) / (lmax - lmin) * PANEL_H;
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, p)| format!("{:.2},{:.2}", sx(x), sy(p.log10())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        for (l, anchor_y) in [(lmin, y0 + PANEL_H), (lmax, y0 + 4.0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
                x0 - 4.0,
                anchor_y,
                10f64.powf(l)
            );
        }
        for (x, anchor_x) in [(xmin, x0), (xmax, x0 + PANEL_W)] {
            let _ = writeln!(
                svg,
                r#"<text x="{anchor_x:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
                y0 + PANEL_H + 16.0
            );
        }
    }
    let _ = writeln!(svg, "</g>");
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
