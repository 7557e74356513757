//! CSV and SVG report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{BinStats, MetricReport, RejectionCurve, ViewReport};
use crate::toynet::EpochLoss;

/// Text written for a metric that is undefined on the evaluated data.
pub const UNDEFINED: &str = "undefined";

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), fmt_num)
}

pub fn metrics_csv(report: &MetricReport) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in report.rows() {
        let _ = writeln!(s, "{k},{}", fmt_opt(v));
    }
    s
}

pub fn reliability_csv(bins: &[BinStats]) -> String {
    let m = bins.len();
    let mut s = String::from("bin,lower,upper,count,mean_confidence,accuracy,gap\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            b.bin_index,
            fmt_num(b.bin_index as f64 / m as f64),
            fmt_num((b.bin_index + 1) as f64 / m as f64),
            b.count,
            fmt_num(b.mean_conf),
            fmt_num(b.mean_acc),
            fmt_num(b.gap()),
        );
    }
    s
}

/// Parses the bins back out of [`reliability_csv`] output.
pub fn parse_reliability_csv(text: &str) -> Result<Vec<BinStats>> {
    let bad = |line: usize| Error::Parse(format!("reliability csv line {line}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(k + 1));
            }
            Ok(BinStats {
                bin_index: f[0].parse().map_err(|_| bad(k + 1))?,
                count: f[3].parse().map_err(|_| bad(k + 1))?,
                mean_conf: f[4].parse().map_err(|_| bad(k + 1))?,
                mean_acc: f[5].parse().map_err(|_| bad(k + 1))?,
            })
        })
        .collect()
}

/// Rows `curve,rejected_fraction,normalized_error` for the model, oracle and
/// random curves. Only the header is written when PRR is undefined.
pub fn rejection_csv(view: &ViewReport) -> String {
    let mut s = String::from("curve,rejected_fraction,normalized_error\n");
    if let (Some(model), Some(oracle)) = (&view.rejection, &view.oracle) {
        for (name, c) in [("model", model), ("oracle", oracle)] {
            for &(x, y) in &c.points {
                let _ = writeln!(s, "{name},{},{}", fmt_num(x), fmt_num(y));
            }
        }
        s.push_str("random,0,1\nrandom,1,0\n");
    }
    s
}

pub fn loss_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,L_occ,L_au,L_ru,total\n");
    for e in curve {
        let l = &e.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch,
            fmt_num(l.occ),
            fmt_num(l.au),
            fmt_num(l.ru),
            fmt_num(l.total)
        );
    }
    s
}

const W: f64 = 420.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn px(x: f64) -> f64 {
    PAD + x * (W - 2.0 * PAD)
}

fn py(y: f64) -> f64 {
    H - PAD - y * (H - 2.0 * PAD)
}

fn svg_frame(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, px(t), H - PAD + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, PAD - 6.0, py(t) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    s
}

/// Per-bin accuracy bars against the identity diagonal, with the gap between
/// accuracy and mean confidence shaded. Each gap rectangle carries its value
/// in a `data-gap` attribute.
pub fn reliability_svg(bins: &[BinStats], title: &str) -> String {
    let mut s = svg_frame(title, "confidence", "accuracy");
    let m = bins.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / m;
    for b in bins.iter().filter(|b| b.count > 0) {
        let x = PAD + b.bin_index as f64 * bw;
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.3}" y="{:.3}" width="{bw:.3}" height="{:.3}" fill="#4a78c2" stroke="#1f3f73" data-accuracy="{}" data-count="{}"/>"##,
            py(b.mean_acc),
            py(0.0) - py(b.mean_acc),
            fmt_num(b.mean_acc),
            b.count
        );
        let (lo, hi) = (b.mean_acc.min(b.mean_conf), b.mean_acc.max(b.mean_conf));
        let _ = writeln!(
            s,
            r##"<rect class="gap" x="{x:.3}" y="{:.3}" width="{bw:.3}" height="{:.3}" fill="#e0433b" fill-opacity="0.35" data-gap="{}"/>"##,
            py(hi),
            py(lo) - py(hi),
            fmt_num(b.gap())
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    s.push_str("</svg>\n");
    s
}

fn polyline(points: &[(f64, f64)], color: &str, class: &str) -> String {
    let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
    format!(
        r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        pts.join(" ")
    ) + "\n"
}

/// Model, oracle and random rejection curves.
pub fn rejection_svg(view: &ViewReport, title: &str) -> String {
    let mut s = svg_frame(title, "rejected fraction", "normalized error");
    match (&view.rejection, &view.oracle) {
        (Some(model), Some(oracle)) => {
            s.push_str(&polyline(&[(0.0, 1.0), (1.0, 0.0)], "gray", "random"));
            s.push_str(&polyline(&oracle.points, "#2a9d4b", "oracle"));
            s.push_str(&polyline(&model.points, "#4a78c2", "model"));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">PRR = {}</text>"#,
                W - PAD - 6.0,
                PAD + 16.0,
                view.prr.map_or(UNDEFINED.to_string(), |p| format!("{p:.4}"))
            );
        }
        _ => {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">PRR undefined</text>"#,
                W / 2.0,
                H / 2.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn write(dir: &Path, name: &str, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    out.push(p);
    Ok(())
}

/// Writes `metrics.csv` and the reliability and rejection CSV/SVG pairs of
/// both views into `dir`, creating it if needed. Returns the written paths.
pub fn emit_reports(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    write(dir, "metrics.csv", &metrics_csv(report), &mut out)?;
    for (tag, label, view) in [
        ("sem", "semantic", &report.semantic),
        ("geo", "geometric", &report.geometric),
    ] {
        write(dir, &format!("reliability_{tag}.csv"), &reliability_csv(&view.diagram), &mut out)?;
        write(
            dir,
            &format!("reliability_{tag}.svg"),
            &reliability_svg(&view.diagram, &format!("Reliability ({label})")),
            &mut out,
        )?;
        write(dir, &format!("rejection_{tag}.csv"), &rejection_csv(view), &mut out)?;
        write(
            dir,
            &format!("rejection_{tag}.svg"),
            &rejection_svg(view, &format!("Rejection ({label})")),
            &mut out,
        )?;
    }
    Ok(out)
}

/// Curve points as `(x, y)` rows, used by tests and tools that re-read CSVs.
pub fn parse_rejection_csv(text: &str, curve: &str) -> Result<RejectionCurve> {
    let mut points = Vec::new();
    for (k, l) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("rejection csv line {}", k + 1)));
        }
        if f[0] == curve {
            let x = f[1].parse().map_err(|_| Error::Parse(format!("rejection csv line {}", k + 1)))?;
            let y = f[2].parse().map_err(|_| Error::Parse(format!("rejection csv line {}", k + 1)))?;
            points.push((x, y));
        }
    }
    let auc = crate::metrics::trapezoid(&points);
    Ok(RejectionCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ece, ece_from_bins, reliability_diagram};

    #[test]
    fn reliability_csv_roundtrip_reproduces_ece() {
        let conf: Vec<f64> = (0..500).map(|k| ((k * 37 % 101) as f64 / 100.0).min(1.0)).collect();
        let correct: Vec<bool> = (0..500).map(|k| k % 3 != 0).collect();
        let bins = reliability_diagram(&conf, &correct, 15).unwrap();
        let back = parse_reliability_csv(&reliability_csv(&bins)).unwrap();
        assert_eq!(back.iter().map(|b| b.count).sum::<u64>(), 500);
        let e = ece(&conf, &correct, 15).unwrap();
        assert!((ece_from_bins(&back) - e).abs() <= 1e-12);
    }

    #[test]
    fn calibrated_bins_have_zero_gap_in_svg() {
        let bins = vec![
            BinStats {
                bin_index: 3,
                count: 4,
                mean_conf: 0.25,
                mean_acc: 0.25,
            },
            BinStats {
                bin_index: 7,
                count: 2,
                mean_conf: 0.5,
                mean_acc: 0.5,
            },
        ];
        let svg = reliability_svg(&bins, "t");
        let gaps: Vec<&str> = svg.split("data-gap=\"").skip(1).map(|r| &r[..r.find('"').unwrap()]).collect();
        assert_eq!(gaps, ["0", "0"]);
        assert!(!svg.contains("<script"));
    }

    #[test]
    fn undefined_is_spelled_out() {
        assert_eq!(fmt_opt(None), "undefined");
        assert_eq!(fmt_opt(Some(0.1)), "0.1");
    }
}
