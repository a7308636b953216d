//! Experiment reports: rows, summaries, slope fits, CSV and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use manifold_relu::{Error, Result};

/// One sub-run. Failed sub-runs keep their row with `error = NaN` and a
/// non-`ok` flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub param: usize,
    pub rep: usize,
    pub seed: u64,
    pub error: f64,
    pub flag: String,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.flag == "ok"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub param: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the fit residuals.
    pub residual: f64,
    /// Standard error of the slope; NaN with two points.
    pub slope_se: f64,
}

/// Network shape used at one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub param: usize,
    pub depth: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub kind: String,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
    pub slope: Option<SlopeFit>,
    pub structure: Vec<Structure>,
    /// Last median over first median, for paired studies.
    pub ratio: Option<f64>,
    pub environment: String,
    /// Extra files `(relative path, contents)`: trained networks and
    /// training curves.
    pub artifacts: Vec<(String, String)>,
}

/// Ordinary least squares of `y` on `x`, after taking logs of both when
/// `log_transform` is set.
pub fn fit_slope(rows: &[(f64, f64)], log_transform: bool) -> Result<SlopeFit> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("need 2 points, got {}", rows.len())));
    }
    let mut pts = Vec::with_capacity(rows.len());
    for &(x, y) in rows {
        if log_transform {
            if !(x > 0.0 && y > 0.0) {
                return Err(Error::InvalidArgument(format!("log of non-positive value in ({x}, {y})")));
            }
            pts.push((x.ln(), y.ln()));
        } else {
            pts.push((x, y));
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_se = if pts.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(SlopeFit {
        slope,
        intercept,
        residual: (sse / n).sqrt(),
        slope_se,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median, min and max over successful rows per parameter, in the order
/// parameters first appear.
pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let mut params: Vec<usize> = Vec::new();
    for r in rows {
        if !params.contains(&r.param) {
            params.push(r.param);
        }
    }
    params
        .into_iter()
        .map(|p| {
            let mut errs: Vec<f64> = rows.iter().filter(|r| r.param == p && r.ok()).map(|r| r.error).collect();
            let min = errs.iter().copied().fold(f64::NAN, f64::min);
            let max = errs.iter().copied().fold(f64::NAN, f64::max);
            SummaryRow {
                param: p,
                median: median(&mut errs),
                min,
                max,
            }
        })
        .collect()
}

/// Log-log slope of median error against the parameter; `None` below
/// three usable parameter values.
pub fn summary_slope(summary: &[SummaryRow]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = summary
        .iter()
        .filter(|s| s.median > 0.0 && s.median.is_finite())
        .map(|s| (s.param as f64, s.median))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    fit_slope(&pts, true).ok()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

pub fn rows_csv(rows: &[Row]) -> String {
    let mut s = String::from("param,rep,seed,error,flag\n");
    for r in rows {
        let flag = r.flag.replace([',', '\n'], " ");
        let _ = writeln!(s, "{},{},{},{},{}", r.param, r.rep, r.seed, num(r.error), flag);
    }
    s
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from("param,median,min,max\n");
    for r in summary {
        let _ = writeln!(s, "{},{},{},{}", r.param, num(r.median), num(r.min), num(r.max));
    }
    s
}

pub fn slope_csv(fit: &SlopeFit) -> String {
    format!(
        "slope,intercept,residual\n{},{},{}\n",
        num(fit.slope),
        num(fit.intercept),
        num(fit.residual)
    )
}

pub fn structure_csv(st: &[Structure]) -> String {
    let mut s = String::from("param,depth,width\n");
    for r in st {
        let _ = writeln!(s, "{},{},{}", r.param, r.depth, r.width);
    }
    s
}

/// Log-log line chart of median against parameter, computed from the
/// text of a summary CSV alone.
pub fn svg_from_summary_csv(csv: &str, title: &str) -> String {
    let pts: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.split(',');
            let x: f64 = it.next()?.parse().ok()?;
            let y: f64 = it.next()?.parse().ok()?;
            (x > 0.0 && y > 0.0 && y.is_finite()).then(|| (x.log10(), y.log10()))
        })
        .collect();
    let (w, h, pad) = (480.0, 320.0, 56.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let lo = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::INFINITY, f64::min).floor();
    let hi = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil();
    let (x0, x1) = (lo(|p| p.0), hi(|p| p.0).max(lo(|p| p.0) + 1.0));
    let (y0, y1) = (lo(|p| p.1), hi(|p| p.1).max(lo(|p| p.1) + 1.0));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        s,
        r#"<path d="M{a} {b} L{c} {b} M{a} {b} L{a} {d}" stroke="black" fill="none"/>"#,
        a = sx(x0),
        b = sy(y0),
        c = sx(x1),
        d = sy(y1)
    );
    for e in (x0 as i64)..=(x1 as i64) {
        let x = sx(e as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">1e{e}</text>"#,
            h - pad + 16.0
        );
    }
    for e in (y0 as i64)..=(y1 as i64) {
        let y = sy(e as f64);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">1e{e}</text>"#,
            pad - 6.0,
            y + 4.0
        );
    }
    let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
        path.join(" ")
    );
    for p in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, sx(p.0), sy(p.1));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl ExperimentReport {
    /// Writes `rows.csv`, `summary.csv`, `structure.csv`, `environment.txt`,
    /// `slope.csv` when a slope exists, `report.svg` when asked, and the
    /// artifacts.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rows.csv"), rows_csv(&self.rows))?;
        let summary = summary_csv(&self.summary);
        fs::write(dir.join("summary.csv"), &summary)?;
        fs::write(dir.join("structure.csv"), structure_csv(&self.structure))?;
        fs::write(dir.join("environment.txt"), format!("{}\n", self.environment))?;
        if let Some(fit) = &self.slope {
            fs::write(dir.join("slope.csv"), slope_csv(fit))?;
        }
        if let Some(r) = self.ratio {
            fs::write(dir.join("ratio.txt"), format!("{}\n", num(r)))?;
        }
        if svg {
            fs::write(dir.join("report.svg"), svg_from_summary_csv(&summary, &self.kind))?;
        }
        for (name, body) in &self.artifacts {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, body)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let rows: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, x.powi(-2))).collect();
        let f = fit_slope(&rows, true).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let f = fit_slope(&[(1.0, 3.0), (3.0, 7.0)], false).unwrap();
        assert_eq!((f.slope, f.intercept), (2.0, 1.0));
        assert_eq!(f.residual, 0.0);
        assert!(f.slope_se.is_nan());
    }

    #[test]
    fn rejects_non_positive_under_log() {
        assert!(fit_slope(&[(1.0, 0.0), (2.0, 1.0)], true).is_err());
        assert!(fit_slope(&[(1.0, 1.0)], true).is_err());
    }

    #[test]
    fn noisy_power_law_within_two_standard_errors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..200 {
            let rows: Vec<(f64, f64)> = (1..=12)
                .map(|i| {
                    let x = 2f64.powi(i);
                    let noise: f64 = rng.gen_range(-0.2..0.2);
                    (x, 3.0 * x.powf(-0.8) * noise.exp())
                })
                .collect();
            let f = fit_slope(&rows, true).unwrap();
            if (f.slope + 0.8).abs() <= 2.0 * f.slope_se {
                hits += 1;
            }
        }
        // Nominal coverage of a 2-standard-error interval is about 95%.
        assert!(hits >= 180, "{hits}");
    }

    #[test]
    fn summary_skips_failed_rows() {
        let row = |param, rep, error: f64, flag: &str| Row {
            param,
            rep,
            seed: rep as u64,
            error,
            flag: flag.into(),
        };
        let rows = vec![
            row(2, 0, 3.0, "ok"),
            row(2, 1, 1.0, "ok"),
            row(2, 2, f64::NAN, "diverged"),
            row(4, 0, 2.0, "ok"),
        ];
        let s = summarize(&rows);
        assert_eq!(s[0], SummaryRow { param: 2, median: 2.0, min: 1.0, max: 3.0 });
        assert_eq!(s[1].median, 2.0);
        let csv = rows_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("2,2,2,nan,diverged"));
        assert!(summary_slope(&s).is_none());
    }

    #[test]
    fn svg_depends_only_on_csv() {
        let csv = "param,median,min,max\n2,1e-1,1e-1,1e-1\n4,1e-2,1e-2,1e-2\n8,1e-3,1e-3,1e-3\n";
        let a = svg_from_summary_csv(csv, "t");
        assert_eq!(a, svg_from_summary_csv(csv, "t"));
        assert!(a.starts_with("<svg"));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    proptest! {
        #[test]
        fn recovers_any_exact_power(k in -5.0f64..5.0, c in 0.1f64..10.0) {
            let rows: Vec<(f64, f64)> = [1.0, 3.0, 10.0].iter().map(|&x: &f64| (x, c * x.powf(k))).collect();
            let f = fit_slope(&rows, true).unwrap();
            prop_assert!((f.slope - k).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
        }
    }
}
