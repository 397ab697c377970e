use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use decoupling_core::verify::{ProbeReport, CSV_HEADER};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// A report file holds one report or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReportFile {
    One(Box<ProbeReport>),
    Many(Vec<ProbeReport>),
}

pub struct Loaded {
    pub source: PathBuf,
    pub report: ProbeReport,
}

/// Expands `pattern` and parses every match, in sorted path order.
pub fn load_glob(pattern: &str) -> Result<Vec<Loaded>> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut paths: Vec<PathBuf> = paths
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| {
            let path = e.path().to_path_buf();
            CliError::io(&path, e.into())
        })?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no files match {pattern:?}")));
    }
    let mut out = Vec::new();
    for path in paths {
        out.extend(load_file(&path)?);
    }
    Ok(out)
}

fn load_file(path: &Path) -> Result<Vec<Loaded>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed: ReportFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not a probe report: {e}", path.display())))?;
    let reports = match parsed {
        ReportFile::One(r) => vec![*r],
        ReportFile::Many(v) => v,
    };
    Ok(reports
        .into_iter()
        .map(|report| Loaded {
            source: path.to_path_buf(),
            report,
        })
        .collect())
}

/// The CSV written beside one probe's JSON: the core header and one row.
pub fn single_csv(report: &ProbeReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    w.write_record(report.csv_record()).map_err(csv_err)?;
    w.into_inner().map_err(|e| CliError::Config(format!("writing CSV: {e}")))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Config(format!("writing CSV: {e}"))
}

/// Rows carry the per-report CSV record followed by the tag and source file.
fn write_csv<W: std::io::Write>(reports: &[ProbeReport], sources: &[&Path], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = CSV_HEADER.iter().copied().chain(["tag", "source"]).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in reports.iter().enumerate() {
        let mut row: Vec<String> = r.csv_record().into();
        row.push(r.tag.clone());
        row.push(sources.get(i).map_or_else(String::new, |p| p.display().to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Config(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn csv_string(loaded: &[Loaded]) -> Result<String> {
    let reports: Vec<ProbeReport> = loaded.iter().map(|l| l.report.clone()).collect();
    let sources: Vec<&Path> = loaded.iter().map(|l| l.source.as_path()).collect();
    let mut buf = Vec::new();
    write_csv(&reports, &sources, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV fields are UTF-8"))
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6e}")
}

/// Markdown summary grouped by probe and tag.
pub fn markdown(loaded: &[Loaded]) -> String {
    let mut groups: BTreeMap<(&str, &str), Vec<&Loaded>> = BTreeMap::new();
    for l in loaded {
        groups.entry((&l.report.probe, &l.report.tag)).or_default().push(l);
    }
    let unexpected = loaded.iter().filter(|l| !l.report.outcome.is_expected()).count();
    let files = loaded.iter().map(|l| &l.source).collect::<std::collections::BTreeSet<_>>().len();
    let mut s = String::from("# Probe summary\n\n");
    let _ = writeln!(
        s,
        "{} reports from {files} files, {unexpected} with an unexpected outcome.\n",
        loaded.len()
    );
    for ((probe, tag), rows) in groups {
        let _ = writeln!(s, "## {probe} ({tag})\n");
        s.push_str("| source | lhs | lhs se | rhs | rhs se | ratio | outcome | seed | M |\n");
        s.push_str("| --- | --- | --- | --- | --- | --- | --- | --- | --- |\n");
        for l in rows {
            let r = &l.report;
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                l.source.display(),
                fmt_num(r.lhs.mean),
                fmt_num(r.lhs.se),
                fmt_num(r.rhs.mean),
                fmt_num(r.rhs.se),
                r.ratio.map_or_else(|| "-".into(), fmt_num),
                r.outcome,
                r.seed,
                r.replicates
            );
        }
        s.push('\n');
    }
    s
}
