//! Learning-curve SVG and the side-by-side NMSE table.

use std::collections::BTreeSet;
use std::fmt::Write;

use csiforge::learn::Metrics;

pub struct Series {
    pub name: String,
    pub metrics: Metrics,
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn log_range(series: &[Series]) -> (f64, f64) {
    let vals = series
        .iter()
        .flat_map(|s| s.metrics.epochs.iter().flat_map(|e| [e.train_nmse, e.val_nmse]))
        .filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Train (dashed) and validation (solid) NMSE per model on a log axis.
pub fn learning_curves_svg(series: &[Series]) -> String {
    let max_epoch = series
        .iter()
        .flat_map(|s| s.metrics.epochs.iter().map(|e| e.epoch))
        .max()
        .unwrap_or(1)
        .max(2);
    let (lo, hi) = log_range(series);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |epoch: usize| LEFT + pw * (epoch as f64 - 1.0) / (max_epoch as f64 - 1.0);
    let y = |v: f64| TOP + ph * (hi - v.max(1e-300).log10().clamp(lo, hi)) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let mut decade = lo as i32;
    while decade as f64 <= hi {
        let yy = y(10f64.powi(decade));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yy + 4.0
        );
        decade += 1;
    }
    let ticks = 5.min(max_epoch - 1);
    for i in 0..=ticks {
        let e = 1 + (max_epoch - 1) * i / ticks;
        let xx = x(e);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">NMSE (log)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (label, dash, get) in [
            ("train", r#" stroke-dasharray="5,4""#, (|e: &csiforge::learn::EpochMetrics| e.train_nmse) as fn(&_) -> f64),
            ("val", "", |e: &csiforge::learn::EpochMetrics| e.val_nmse),
        ] {
            let pts: Vec<String> = ser
                .metrics
                .epochs
                .iter()
                .map(|e| format!("{:.2},{:.2}", x(e.epoch), y(get(e))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                pts.join(" ")
            );
            let row = (2 * i + usize::from(label == "val")) as f64;
            let ly = TOP + 10.0 + 18.0 * row;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}">{} {label}</text>"#,
                lx + 24.0,
                lx + 30.0,
                ly + 4.0,
                xml_escape(&ser.name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Epoch rows shown in the table: every `every`-th epoch plus the first and
/// last epoch of each series.
fn table_epochs(series: &[Series], every: usize) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for s in series {
        for e in &s.metrics.epochs {
            if e.epoch == 1 || e.epoch % every.max(1) == 0 {
                set.insert(e.epoch);
            }
        }
        if let Some(last) = s.metrics.epochs.last() {
            set.insert(last.epoch);
        }
    }
    set.into_iter().collect()
}

fn cell(s: &Series, epoch: usize) -> Option<(f64, f64)> {
    s.metrics
        .epochs
        .iter()
        .find(|e| e.epoch == epoch)
        .map(|e| (e.train_nmse, e.val_nmse))
}

/// Markdown table: one row per epoch, one `train / val` column per model.
pub fn nmse_table_markdown(series: &[Series], every: usize) -> String {
    let mut s = String::from("| Epoch |");
    for ser in series {
        let _ = write!(s, " {} (train / val) |", ser.name);
    }
    s.push_str("\n|---:|");
    for _ in series {
        s.push_str("---:|");
    }
    s.push('\n');
    for epoch in table_epochs(series, every) {
        let _ = write!(s, "| {epoch} |");
        for ser in series {
            match cell(ser, epoch) {
                Some((t, v)) => {
                    let _ = write!(s, " {t:.4} / {v:.4} |");
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn nmse_table_csv(series: &[Series], every: usize) -> String {
    let mut s = String::from("epoch");
    for ser in series {
        let _ = write!(s, ",{0}_train_nmse,{0}_val_nmse", ser.name);
    }
    s.push('\n');
    for epoch in table_epochs(series, every) {
        let _ = write!(s, "{epoch}");
        for ser in series {
            match cell(ser, epoch) {
                Some((t, v)) => {
                    let _ = write!(s, ",{t:e},{v:e}");
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}
