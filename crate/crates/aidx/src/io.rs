//! CSV and JSON plumbing shared by the library and the CLI.
//!
//! Every CSV written here starts with a `#` comment line carrying the run
//! seed and tool version, then a header row. Floats are formatted with the
//! shortest exact scientific representation, so identical runs produce
//! byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Canonical float formatting: shortest representation that parses back to
/// the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Write a CSV with the standard `# seed=.. version=..` comment line, any
/// extra comment lines, a header row, and the given data rows.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    seed: u64,
    extra_comments: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# seed={} version={}", seed, tool_version())?;
    for c in extra_comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a numeric CSV: `#` comment lines are skipped, the first remaining
/// line is the header, every later line must parse as f64 fields.
pub fn read_numeric_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let parse_err = |reason: String| Error::Parse {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path)?;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match &header {
            None => {
                header = Some(trimmed.split(',').map(|s| s.trim().to_string()).collect());
            }
            Some(h) => {
                let fields: Vec<&str> = trimmed.split(',').collect();
                if fields.len() != h.len() {
                    return Err(parse_err(format!(
                        "line {}: {} fields, header has {}",
                        lineno + 1,
                        fields.len(),
                        h.len()
                    )));
                }
                let row = fields
                    .iter()
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|e| parse_err(format!("line {}: {e}", lineno + 1)))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err("no header row".into()))?;
    Ok((header, rows))
}

/// Export a per-cell matrix (for example accumulated conductance drift) as
/// a row-major CSV whose comment lines record the array shape and how many
/// reads produced it.
pub fn write_matrix_csv<P: AsRef<Path>>(
    path: P,
    seed: u64,
    reads: usize,
    matrix: &ndarray::Array2<f64>,
) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let header: Vec<String> = (0..cols).map(|j| format!("col_{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        seed,
        &[format!("rows={rows} cols={cols} reads={reads}")],
        &header_refs,
        matrix
            .outer_iter()
            .map(|row| row.iter().map(|v| fmt_f64(*v)).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_roundtrip_keeps_float_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let values = [1.04e-3, -8.445e-6, 0.575, 1.0 / 3.0, 1e-300];
        write_csv(
            &path,
            42,
            &[],
            &["v"],
            values.iter().map(|v| vec![fmt_f64(*v)]),
        )
        .unwrap();
        let (header, rows) = read_numeric_csv(&path).unwrap();
        assert_eq!(header, vec!["v"]);
        for (row, v) in rows.iter().zip(values) {
            assert_eq!(row[0], v, "exact bits survive");
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("# seed=42 version={}\n", tool_version())));
    }

    #[test]
    fn matrix_export_records_shape_and_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        write_matrix_csv(&path, 7, 1000, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("# rows=2 cols=2 reads=1000"));
        let (header, rows) = read_numeric_csv(&path).unwrap();
        assert_eq!(header, vec!["col_0", "col_1"]);
        assert_eq!(rows[1], vec![3.0, 4.0]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1.0\n").unwrap();
        assert!(read_numeric_csv(&path).is_err());
        std::fs::write(&path, "a,b\n1.0,zzz\n").unwrap();
        assert!(read_numeric_csv(&path).is_err());
    }
}
