//! Markdown rendering of result CSVs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use ethfraud_core::eval::Metrics;

/// One Markdown section per CSV, titled by file stem. Metric columns are
/// rounded to two decimals; an all-empty `error` column is dropped.
pub fn render(paths: &[impl AsRef<Path>]) -> Result<String> {
    let mut out = String::from("# Results\n");
    for p in paths {
        let p = p.as_ref();
        let mut r =
            csv::Reader::from_path(p).with_context(|| format!("reading {}", p.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows: Vec<csv::StringRecord> = r
            .records()
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("parsing {}", p.display()))?;
        let keep: Vec<usize> = (0..header.len())
            .filter(|&j| header[j] != "error" || rows.iter().any(|row| !row[j].is_empty()))
            .collect();
        let title = p.file_stem().unwrap_or_default().to_string_lossy();
        writeln!(out, "\n## {title}\n")?;
        let cells = |v: Vec<String>| format!("| {} |", v.join(" | "));
        writeln!(
            out,
            "{}",
            cells(keep.iter().map(|&j| header[j].clone()).collect())
        )?;
        writeln!(
            out,
            "{}",
            cells(keep.iter().map(|_| "---".to_string()).collect())
        )?;
        for row in &rows {
            let v = keep
                .iter()
                .map(|&j| {
                    let cell = row.get(j).unwrap_or("");
                    match cell.parse::<f64>() {
                        Ok(x) if Metrics::NAMES.contains(&header[j].as_str()) => format!("{x:.2}"),
                        _ => cell.replace('|', "\\|"),
                    }
                })
                .collect();
            writeln!(out, "{}", cells(v))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_metrics_and_drops_empty_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rf_cv.csv");
        std::fs::write(&p, "conf,mtry,Recall,FPR,error\n1,3,23.6666,NA,\n").unwrap();
        let md = render(&[&p]).unwrap();
        assert!(md.contains("## rf_cv"));
        assert!(md.contains("| conf | mtry | Recall | FPR |"));
        assert!(md.contains("| 1 | 3 | 23.67 | NA |"));
    }
}
