//! Per-case evaluation rows, stratified summary statistics, CSV emission,
//! and the before/after scatter plot.

use crate::error::{Error, Result};
use crate::metrics::wilcoxon_signed_rank;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stratum {
    Easy,
    Hard,
}

impl Stratum {
    pub fn name(self) -> &'static str {
        match self {
            Stratum::Easy => "easy",
            Stratum::Hard => "hard",
        }
    }
}

/// Easy iff the initial Chamfer distance is strictly below the threshold;
/// the boundary value itself is hard.
pub fn stratify(init_cd_mm: f64, threshold_mm: f64) -> Stratum {
    if init_cd_mm < threshold_mm {
        Stratum::Easy
    } else {
        Stratum::Hard
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseRow {
    pub case_id: String,
    pub split: String,
    pub init_cd: f64,
    pub refined_cd: f64,
    pub init_hd: f64,
    pub refined_hd: f64,
    pub stratum: Stratum,
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct StratumSummary {
    pub stratum: &'static str,
    pub count: usize,
    pub init_cd: (f64, f64),
    pub refined_cd: (f64, f64),
    pub init_hd: (f64, f64),
    pub refined_hd: (f64, f64),
    /// Two-sided Wilcoxon p on paired CDs / HDs; `None` when degenerate
    /// (all differences zero) or below the minimum sample size.
    pub p_cd: Option<f64>,
    pub p_hd: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub rows: Vec<StratumSummary>,
}

impl EvalSummary {
    pub fn overall(&self) -> &StratumSummary {
        self.rows.last().expect("summary always has the overall row")
    }
}

fn summarize_group(name: &'static str, rows: &[&CaseRow]) -> StratumSummary {
    let init_cd: Vec<f64> = rows.iter().map(|r| r.init_cd).collect();
    let refined_cd: Vec<f64> = rows.iter().map(|r| r.refined_cd).collect();
    let init_hd: Vec<f64> = rows.iter().map(|r| r.init_hd).collect();
    let refined_hd: Vec<f64> = rows.iter().map(|r| r.refined_hd).collect();
    let diffs_cd: Vec<f64> =
        rows.iter().map(|r| r.init_cd - r.refined_cd).collect();
    let diffs_hd: Vec<f64> =
        rows.iter().map(|r| r.init_hd - r.refined_hd).collect();
    StratumSummary {
        stratum: name,
        count: rows.len(),
        init_cd: mean_std(&init_cd),
        refined_cd: mean_std(&refined_cd),
        init_hd: mean_std(&init_hd),
        refined_hd: mean_std(&refined_hd),
        p_cd: wilcoxon_signed_rank(&diffs_cd).ok(),
        p_hd: wilcoxon_signed_rank(&diffs_hd).ok(),
    }
}

/// Per-stratum and overall statistics. The strata partition the cases.
pub fn summarize(rows: &[CaseRow]) -> Result<EvalSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no evaluation rows".into()));
    }
    let easy: Vec<&CaseRow> = rows.iter().filter(|r| r.stratum == Stratum::Easy).collect();
    let hard: Vec<&CaseRow> = rows.iter().filter(|r| r.stratum == Stratum::Hard).collect();
    debug_assert_eq!(easy.len() + hard.len(), rows.len());
    let all: Vec<&CaseRow> = rows.iter().collect();
    Ok(EvalSummary {
        rows: vec![
            summarize_group("easy", &easy),
            summarize_group("hard", &hard),
            summarize_group("all", &all),
        ],
    })
}

pub fn write_per_case_csv(path: &Path, rows: &[CaseRow]) -> Result<()> {
    let mut s = String::from("case_id,split,init_cd,refined_cd,init_hd,refined_hd,stratum\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.case_id,
            r.split,
            r.init_cd,
            r.refined_cd,
            r.init_hd,
            r.refined_hd,
            r.stratum.name()
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_per_case_csv(path: &Path) -> Result<Vec<CaseRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Format(format!("per-case csv line {}: {line:?}", i + 1)));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad float {s:?}")))
        };
        rows.push(CaseRow {
            case_id: parts[0].to_string(),
            split: parts[1].to_string(),
            init_cd: f(parts[2])?,
            refined_cd: f(parts[3])?,
            init_hd: f(parts[4])?,
            refined_hd: f(parts[5])?,
            stratum: match parts[6] {
                "easy" => Stratum::Easy,
                "hard" => Stratum::Hard,
                other => return Err(Error::Format(format!("bad stratum {other:?}"))),
            },
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, summary: &EvalSummary) -> Result<()> {
    let mut s = String::from(
        "stratum,n,init_cd_mean,init_cd_std,refined_cd_mean,refined_cd_std,\
         init_hd_mean,init_hd_std,refined_hd_mean,refined_hd_std,p_cd,p_hd\n",
    );
    for r in &summary.rows {
        let p = |v: Option<f64>| v.map(|p| p.to_string()).unwrap_or_else(|| "degenerate".into());
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.stratum,
            r.count,
            r.init_cd.0,
            r.init_cd.1,
            r.refined_cd.0,
            r.refined_cd.1,
            r.init_hd.0,
            r.init_hd.1,
            r.refined_hd.0,
            r.refined_hd.1,
            p(r.p_cd),
            p(r.p_hd),
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn render_summary(summary: &EvalSummary) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<8} {:>4} {:>18} {:>18} {:>18} {:>18} {:>12} {:>12}\n",
        "stratum", "n", "init CD (mm)", "refined CD (mm)", "init HD (mm)", "refined HD (mm)",
        "p(CD)", "p(HD)"
    ));
    for r in &summary.rows {
        let pm = |(m, sd): (f64, f64)| format!("{m:.1} +- {sd:.1}");
        let p = |v: Option<f64>| match v {
            Some(p) => format!("{p:.4}"),
            None => "degenerate".into(),
        };
        s.push_str(&format!(
            "{:<8} {:>4} {:>18} {:>18} {:>18} {:>18} {:>12} {:>12}\n",
            r.stratum,
            r.count,
            pm(r.init_cd),
            pm(r.refined_cd),
            pm(r.init_hd),
            pm(r.refined_hd),
            p(r.p_cd),
            p(r.p_hd),
        ));
    }
    s
}

/// Static SVG scatter of per-case CD before vs after, with the identity
/// line; easy cases in blue, hard in red.
pub fn write_scatter_svg(path: &Path, rows: &[CaseRow]) -> Result<()> {
    let size = 600.0;
    let pad = 50.0;
    let max_v = rows
        .iter()
        .flat_map(|r| [r.init_cd, r.refined_cd])
        .fold(1.0f64, f64::max)
        * 1.05;
    let scale = (size - 2.0 * pad) / max_v;
    let sx = |v: f64| pad + v * scale;
    let sy = |v: f64| size - pad - v * scale;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">\n\
         <rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n\
         <line x1=\"{pad}\" y1=\"{ybase}\" x2=\"{xmax}\" y2=\"{ybase}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{ybase}\" x2=\"{pad}\" y2=\"{pad}\" stroke=\"black\"/>\n\
         <text x=\"{xmid}\" y=\"{size}\" text-anchor=\"middle\" font-size=\"14\" dy=\"-8\">initial CD (mm)</text>\n\
         <text x=\"14\" y=\"{ymid}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 14 {ymid})\">refined CD (mm)</text>\n",
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(max_v),
        y1 = sy(max_v),
        ybase = sy(0.0),
        xmax = sx(max_v),
        xmid = size / 2.0,
        ymid = size / 2.0,
    );
    for tick in 0..=4 {
        let v = max_v * tick as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{v:.0}</text>\n",
            sx(v),
            sy(0.0) + 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{v:.0}</text>\n",
            pad - 6.0,
            sy(v) + 4.0
        ));
    }
    for r in rows {
        let color = match r.stratum {
            Stratum::Easy => "#2b6cb0",
            Stratum::Hard => "#c53030",
        };
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
            sx(r.init_cd),
            sy(r.refined_cd)
        ));
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn row(id: &str, init_cd: f64, refined_cd: f64) -> CaseRow {
        CaseRow {
            case_id: id.into(),
            split: "test".into(),
            init_cd,
            refined_cd,
            init_hd: init_cd * 4.0,
            refined_hd: refined_cd * 4.0,
            stratum: stratify(init_cd, 10.0),
        }
    }

    #[test]
    fn stratify_boundary_goes_hard() {
        assert_eq!(stratify(9.99, 10.0), Stratum::Easy);
        assert_eq!(stratify(10.0, 10.0), Stratum::Hard);
        assert_eq!(stratify(10.01, 10.0), Stratum::Hard);
    }

    #[test]
    fn strata_partition_all_cases() {
        let rows: Vec<CaseRow> =
            (0..20).map(|i| row(&format!("c{i}"), i as f64, i as f64 * 0.5)).collect();
        let summary = summarize(&rows).unwrap();
        let easy = summary.rows[0].count;
        let hard = summary.rows[1].count;
        assert_eq!(easy + hard, summary.overall().count);
        assert_eq!(summary.overall().count, 20);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows: Vec<CaseRow> = (0..12)
            .map(|i| row(&format!("case_{i:04}"), 3.0 + i as f64 * 1.7, 2.0 + i as f64 * 0.9))
            .collect();
        let dir = tempdir().unwrap();
        let path = dir.path().join("per_case.csv");
        write_per_case_csv(&path, &rows).unwrap();
        let back = read_per_case_csv(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn summary_matches_pooled_recomputation_from_csv() {
        let rows: Vec<CaseRow> = (0..15)
            .map(|i| row(&format!("case_{i:04}"), 2.0 + i as f64, 1.0 + i as f64 * 0.8))
            .collect();
        let dir = tempdir().unwrap();
        let path = dir.path().join("per_case.csv");
        write_per_case_csv(&path, &rows).unwrap();
        let back = read_per_case_csv(&path).unwrap();
        let s1 = summarize(&rows).unwrap();
        let s2 = summarize(&back).unwrap();
        for (a, b) in s1.rows.iter().zip(&s2.rows) {
            assert_eq!(a.count, b.count);
            assert_eq!(a.init_cd, b.init_cd);
            assert_eq!(a.refined_cd, b.refined_cd);
            assert_eq!(a.p_cd, b.p_cd);
        }
    }

    #[test]
    fn degenerate_wilcoxon_is_flagged_not_fatal() {
        let rows: Vec<CaseRow> =
            (0..10).map(|i| row(&format!("c{i}"), 5.0 + i as f64, 5.0 + i as f64)).collect();
        let summary = summarize(&rows).unwrap();
        assert!(summary.overall().p_cd.is_none());
        let dir = tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &summary).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("degenerate"));
    }

    #[test]
    fn svg_contains_points_and_identity_line() {
        let rows: Vec<CaseRow> =
            (0..8).map(|i| row(&format!("c{i}"), 6.0 + i as f64 * 2.0, 5.0 + i as f64)).collect();
        let dir = tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        write_scatter_svg(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert_eq!(text.matches("<circle").count(), 8);
        assert!(text.contains("stroke-dasharray"));
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
