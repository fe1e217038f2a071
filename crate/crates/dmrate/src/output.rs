//! CSV and plain-text rendering of scan rows.

use std::io::{self, Write};

use dmrate_core::detector::NoiseMode;

use crate::scan::{ResultRow, Status};

pub const CSV_HEADER: [&str; 17] = [
    "L_km",
    "eta_t",
    "xi",
    "eta_d",
    "nu_el",
    "alpha",
    "delta_a",
    "mode",
    "primal",
    "lower_bound",
    "delta_EC",
    "p_pass",
    "rate",
    "iterations",
    "residual",
    "wall_time_s",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Pretty,
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
}

/// Twelve significant digits.
fn num(v: f64) -> String {
    format!("{v:.11e}")
}

fn record(r: &ResultRow) -> [String; 17] {
    [
        num(r.l_km),
        num(r.eta_t),
        num(r.xi),
        num(r.eta_d),
        num(r.nu_el),
        num(r.alpha),
        num(r.delta_a),
        r.mode.as_str().to_string(),
        num(r.primal),
        num(r.lower_bound),
        num(r.delta_ec),
        num(r.p_pass),
        num(r.rate),
        r.iterations.to_string(),
        num(r.residual),
        num(r.wall_time_s),
        r.status.as_string(),
    ]
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, OutputError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    if rd.headers()?.iter().ne(CSV_HEADER) {
        return Err(OutputError::Malformed { line: 1, msg: "header does not match".into() });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| OutputError::Malformed { line, msg };
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[i])));
        rows.push(ResultRow {
            l_km: f(0)?,
            eta_t: f(1)?,
            xi: f(2)?,
            eta_d: f(3)?,
            nu_el: f(4)?,
            alpha: f(5)?,
            delta_a: f(6)?,
            mode: rec[7].parse::<NoiseMode>().map_err(|e| bad(e.to_string()))?,
            primal: f(8)?,
            lower_bound: f(9)?,
            delta_ec: f(10)?,
            p_pass: f(11)?,
            rate: f(12)?,
            iterations: rec[13].parse().map_err(|e| bad(format!("column iterations: {e}")))?,
            residual: f(14)?,
            wall_time_s: f(15)?,
            status: Status::parse(&rec[16]).ok_or_else(|| bad(format!("unknown status '{}'", &rec[16])))?,
        });
    }
    Ok(rows)
}

/// Fixed-width table; the rate is in bits per pulse to four decimals.
pub fn write_pretty<W: Write>(rows: &[ResultRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "{:>9} {:>7} {:>9} {:>6} {:>7} {:>8} {:>13} {:>6}  status",
        "L_km", "xi", "mode", "alpha", "delta_a", "p_pass", "rate[b/pulse]", "iters"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>9.3} {:>7.4} {:>9} {:>6.3} {:>7.3} {:>8.4} {:>13.4} {:>6}  {}",
            r.l_km,
            r.xi,
            r.mode.as_str(),
            r.alpha,
            r.delta_a,
            r.p_pass,
            r.rate,
            r.iterations,
            r.status.as_string()
        )?;
    }
    Ok(())
}

pub fn emit<W: Write>(rows: &[ResultRow], format: Format, out: W) -> Result<(), OutputError> {
    match format {
        Format::Csv => write_csv(rows, out),
        Format::Pretty => Ok(write_pretty(rows, out)?),
    }
}
