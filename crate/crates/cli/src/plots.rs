use std::cmp::Ordering;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::EventKind;
use crate::sweep::TallyRecord;

#[derive(Debug, Serialize)]
struct TidyRow<'a> {
    event: &'a str,
    r: Option<i64>,
    #[serde(rename = "M")]
    m: Option<i64>,
    u: f64,
    v: Option<f64>,
    delta: Option<f64>,
    j: Option<usize>,
    p_hat: f64,
    stderr: f64,
}

#[derive(Debug, Serialize)]
struct DisconnectRow {
    r: i64,
    #[serde(rename = "M")]
    m: i64,
    u: f64,
    weighted_p: f64,
    stderr: f64,
}

#[derive(Debug, Serialize)]
struct UcRow {
    u: f64,
    #[serde(rename = "M")]
    m: i64,
    v: f64,
    p_hat: f64,
    stderr: f64,
}

const SCRIPT: &str = "\
# Plot description for the CSV files in this directory. Each block names a
# file, the column on each axis, the error-bar column and the columns that
# split the data into separate curves.

file: tidy.csv
  x: u
  y: p_hat
  error: stderr
  series: event, r, M, v, delta, j

file: disconnection.csv
  x: u
  y: weighted_p    (log scale)
  error: stderr
  series: r, M

file: uc.csv
  x: u
  y: p_hat
  error: stderr
  series: M, v
";

fn by_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn write_rows<T: Serialize, W: Write>(w: W, header: &[&str], rows: &[T]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(header)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes tidy.csv, disconnection.csv (sorted by r, M, u), uc.csv (sorted
/// by u, M) and plots.txt into `dir`; returns the paths written.
pub fn emit_plots(tallies: &[TallyRecord], dir: &Path) -> csv::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let tidy: Vec<TidyRow> = tallies
        .iter()
        .map(|t| TidyRow { event: &t.event, r: t.r, m: t.m, u: t.u, v: t.v, delta: t.delta, j: t.j, p_hat: t.p_hat, stderr: t.stderr })
        .collect();

    let mut disc: Vec<DisconnectRow> = tallies
        .iter()
        .filter(|t| t.kind() == Some(EventKind::Disconnect))
        .map(|t| {
            let (r, m) = (t.r.unwrap_or(1), t.m.unwrap_or(1));
            let p = t.weighted_p.unwrap_or(f64::NAN);
            let stderr = if t.p_hat > 0.0 { p / t.p_hat * t.stderr } else { 0.0 };
            DisconnectRow { r, m, u: t.u, weighted_p: p, stderr }
        })
        .collect();
    disc.sort_by(|a, b| (a.r, a.m).cmp(&(b.r, b.m)).then(by_f64(a.u, b.u)));

    let mut uc: Vec<UcRow> = tallies
        .iter()
        .filter(|t| t.kind() == Some(EventKind::Uc))
        .map(|t| UcRow { u: t.u, m: t.m.unwrap_or(0), v: t.v.unwrap_or(f64::NAN), p_hat: t.p_hat, stderr: t.stderr })
        .collect();
    uc.sort_by(|a, b| by_f64(a.u, b.u).then(a.m.cmp(&b.m)).then(by_f64(a.v, b.v)));

    let paths = [dir.join("tidy.csv"), dir.join("disconnection.csv"), dir.join("uc.csv"), dir.join("plots.txt")];
    write_rows(std::fs::File::create(&paths[0])?, &["event", "r", "M", "u", "v", "delta", "j", "p_hat", "stderr"], &tidy)?;
    write_rows(std::fs::File::create(&paths[1])?, &["r", "M", "u", "weighted_p", "stderr"], &disc)?;
    write_rows(std::fs::File::create(&paths[2])?, &["u", "M", "v", "p_hat", "stderr"], &uc)?;
    std::fs::write(&paths[3], SCRIPT)?;
    Ok(paths.to_vec())
}
