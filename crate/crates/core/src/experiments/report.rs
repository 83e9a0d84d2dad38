use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{sort_rows, Bound, ExperimentConfig, ExperimentKind, ResultRow, StdErr};
use crate::error::{Error, Result};

const HEADER: [&str; 9] = ["experiment", "kind", "N", "family", "seed", "stat", "value", "stderr", "wall_ms"];

/// Paths written by [`report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub summary: PathBuf,
    pub checks: PathBuf,
}

/// Outcome of one configured tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToleranceCheck {
    pub experiment: String,
    pub stat: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub checked: usize,
    pub failures: usize,
    pub pass: bool,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes rows as CSV with the fixed column order.
pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let record = [
            r.experiment.clone(),
            r.kind.tag().to_string(),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            r.family.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.stat.clone(),
            r.value.to_string(),
            r.stderr.to_string(),
            r.wall_ms.to_string(),
        ];
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("{}:{line}: bad {name} '{s}'", path.display())))
}

fn optional<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, s).map(Some)
    }
}

/// Reads a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Format(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != HEADER.len() {
            return Err(Error::Format(format!("{}:{line}: expected {} fields", path.display(), HEADER.len())));
        }
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            kind: rec[1].parse::<ExperimentKind>()?,
            n: optional(path, line, "N", &rec[2])?,
            family: rec[3].to_string(),
            seed: optional(path, line, "seed", &rec[4])?,
            stat: rec[5].to_string(),
            value: parse_field(path, line, "value", &rec[6])?,
            stderr: rec[7].parse::<StdErr>()?,
            wall_ms: parse_field(path, line, "wall_ms", &rec[8])?,
        });
    }
    Ok(rows)
}

/// Evaluates every configured tolerance against the rows carrying that stat.
/// A tolerance with no matching rows fails.
pub fn check_tolerances(rows: &[ResultRow], cfg: &ExperimentConfig) -> Vec<ToleranceCheck> {
    let experiment = cfg.label();
    cfg.tolerances
        .iter()
        .map(|(stat, bound): (&String, &Bound)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.experiment == experiment && &r.stat == stat)
                .map(|r| r.value)
                .collect();
            let failures = values.iter().filter(|&&v| !bound.admits(v)).count();
            ToleranceCheck {
                experiment: experiment.clone(),
                stat: stat.clone(),
                min: bound.min,
                max: bound.max,
                checked: values.len(),
                failures,
                pass: !values.is_empty() && failures == 0,
            }
        })
        .collect()
}

fn fmt_bound(b: Option<f64>) -> String {
    b.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn summary_markdown(rows: &[ResultRow], cfg: &ExperimentConfig, checks: &[ToleranceCheck]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} ({})\n", cfg.label(), cfg.kind);
    let _ = writeln!(
        s,
        "Sizes {:?}, {} families, {} seeds, root seed {}.\n",
        cfg.sizes,
        cfg.families.len(),
        cfg.seeds.len(),
        cfg.root_seed
    );
    if checks.is_empty() {
        let _ = writeln!(s, "No tolerances configured.\n");
    } else {
        let _ = writeln!(s, "| stat | min | max | rows | failures | result |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for c in checks {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                c.stat,
                fmt_bound(c.min),
                fmt_bound(c.max),
                c.checked,
                c.failures,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s);
    }
    let aggregates: Vec<&ResultRow> = rows.iter().filter(|r| r.seed.is_none()).collect();
    if !aggregates.is_empty() {
        let _ = writeln!(s, "## Aggregates\n");
        let _ = writeln!(s, "| N | family | stat | value | stderr |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for r in aggregates {
            let n = r.n.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {n} | {} | {} | {:.6} | {} |", r.family, r.stat, r.value, r.stderr);
        }
    }
    s
}

/// Writes `results.csv`, `results.jsonl`, `summary.md` and `checks.json` into `out_dir`.
pub fn report(rows: &[ResultRow], cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::Contract("refusing to report an empty result table".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let files = ReportFiles {
        csv: out_dir.join("results.csv"),
        jsonl: out_dir.join("results.jsonl"),
        summary: out_dir.join("summary.md"),
        checks: out_dir.join("checks.json"),
    };
    write_csv(&rows, &files.csv)?;

    let mut jsonl = Vec::new();
    for r in &rows {
        serde_json::to_writer(&mut jsonl, r).map_err(|e| Error::Format(e.to_string()))?;
        jsonl.push(b'\n');
    }
    write_file(&files.jsonl, &jsonl)?;

    let checks = check_tolerances(&rows, cfg);
    write_file(&files.summary, summary_markdown(&rows, cfg, &checks).as_bytes())?;
    let json = serde_json::to_vec_pretty(&checks).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&files.checks, &json)?;
    Ok(files)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
