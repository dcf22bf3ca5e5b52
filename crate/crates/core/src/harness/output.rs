//! Experiment records and their CSV form.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "problem_seed,tau,rank,algorithm,metric,value,step";

/// One CSV row: a single metric value of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub problem_seed: u64,
    /// Garnet temperature, or the cliffwalk move probability.
    pub tau: f64,
    pub rank: usize,
    pub algorithm: String,
    pub metric: String,
    pub value: f64,
    pub step: u64,
}

impl ResultRow {
    fn same_bits(&self, other: &Self) -> bool {
        self.problem_seed == other.problem_seed
            && self.tau.to_bits() == other.tau.to_bits()
            && self.rank == other.rank
            && self.algorithm == other.algorithm
            && self.metric == other.metric
            && self.value.to_bits() == other.value.to_bits()
            && self.step == other.step
    }
}

/// Compares row lists bit for bit, so that NaN values compare equal to
/// themselves.
pub fn rows_bitwise_equal(a: &[ResultRow], b: &[ResultRow]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_bits(y))
}

/// Outcome of one (problem, τ, rank, algorithm) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub problem_seed: u64,
    pub tau: f64,
    pub rank: usize,
    pub algorithm: String,
    /// `(metric, value, step)` triples in emission order.
    pub metrics: Vec<(String, f64, u64)>,
    pub wall_time_secs: f64,
    /// Set when training diverged; the metrics then hold NaN.
    pub failure: Option<String>,
}

impl ExperimentRecord {
    pub fn rows(&self) -> impl Iterator<Item = ResultRow> + '_ {
        self.metrics.iter().map(move |(metric, value, step)| ResultRow {
            problem_seed: self.problem_seed,
            tau: self.tau,
            rank: self.rank,
            algorithm: self.algorithm.clone(),
            metric: metric.clone(),
            value: *value,
            step: *step,
        })
    }

    /// Value of the last occurrence of `metric`.
    pub fn final_metric(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().rev().find(|(m, _, _)| m == metric).map(|(_, v, _)| *v)
    }
}

fn format_row(row: &ResultRow) -> String {
    // `Display` for f64 prints the shortest string that parses back to the
    // same bits.
    format!(
        "{},{},{},{},{},{},{}",
        row.problem_seed, row.tau, row.rank, row.algorithm, row.metric, row.value, row.step
    )
}

pub fn write_results<W: Write>(records: &[ExperimentRecord], writer: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(writer);
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for record in records {
        for row in record.rows() {
            out.write_all(format_row(&row).as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

/// Writes `records` as CSV to `path`.
pub fn emit_results(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_results(records, file).map_err(io_err)
}

pub fn parse_results<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ResultRow>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if header != CSV_HEADER {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(line_no, format!("expected 7 fields, got {}", fields.len())));
        }
        let bad = |name: &str, e: &dyn std::fmt::Display| parse_err(line_no, format!("{name}: {e}"));
        rows.push(ResultRow {
            problem_seed: fields[0].parse().map_err(|e| bad("problem_seed", &e))?,
            tau: fields[1].parse().map_err(|e| bad("tau", &e))?,
            rank: fields[2].parse().map_err(|e| bad("rank", &e))?,
            algorithm: fields[3].to_string(),
            metric: fields[4].to_string(),
            value: fields[5].parse().map_err(|e| bad("value", &e))?,
            step: fields[6].parse().map_err(|e| bad("step", &e))?,
        });
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_results(BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, value: f64) -> ExperimentRecord {
        ExperimentRecord {
            problem_seed: seed,
            tau: 0.1,
            rank: 10,
            algorithm: "cvaml11".into(),
            metrics: vec![("value_mse".into(), value, 5000)],
            wall_time_secs: 1.5,
            failure: None,
        }
    }

    fn render(records: &[ExperimentRecord]) -> String {
        let mut buf = Vec::new();
        write_results(records, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(render(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_record_is_two_lines() {
        let text = render(&[record(7, 0.1 + 0.2)]);
        assert_eq!(text, format!("{CSV_HEADER}\n7,0.1,10,cvaml11,value_mse,0.30000000000000004,5000\n"));
        let rows = parse_results(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(rows, record(7, 0.1 + 0.2).rows().collect::<Vec<_>>());
    }

    #[test]
    fn non_finite_values_round_trip() {
        let records = [record(1, f64::NAN), record(2, f64::INFINITY), record(3, 5e-324)];
        let rows = parse_results(render(&records).as_bytes(), Path::new("mem")).unwrap();
        let expected: Vec<_> = records.iter().flat_map(|r| r.rows()).collect();
        assert!(rows_bitwise_equal(&rows, &expected));
    }

    #[test]
    fn malformed_input_is_reported_with_line() {
        let err = parse_results(format!("{CSV_HEADER}\n1,2,3\n").as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_results("a,b\n".as_bytes(), Path::new("x.csv")).is_err());
    }
}
