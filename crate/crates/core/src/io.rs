//! Timing-log ingestion and the tables the CLI emits.

use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

use crate::fitting::TimingSample;
use crate::model::LocalityClass;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no samples")]
    NoSamples,
}

const SAMPLE_COLUMNS: [&str; 5] = ["bytes", "seconds", "ppn", "n_messages", "locality"];

/// A parsed sample with the line it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub line: u64,
    pub sample: TimingSample,
}

/// Reads `bytes,seconds[,ppn,n_messages,locality]` rows. Columns are matched by header name;
/// optional cells may be left empty. Lines starting with `#` are skipped.
pub fn read_samples<R: Read>(mut reader: R) -> Result<Vec<SampleRecord>, IoError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // csv positions point at any comment or blank lines preceding a record and its line
    // counter ignores comments, so recount from the byte offset
    let line_at = |pos: Option<&csv::Position>| {
        let Some(p) = pos else { return 0 };
        let mut start = p.byte() as usize;
        while let Some(rest) = text.get(start..) {
            let body = rest.split('\n').next().unwrap_or("");
            if !(body.starts_with('#') || body.trim().is_empty()) || body.len() == rest.len() {
                break;
            }
            start += body.len() + 1;
        }
        text.as_bytes()[..start]
            .iter()
            .filter(|&&b| b == b'\n')
            .count() as u64
            + 1
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| IoError::Header(e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(IoError::NoSamples);
    }
    let mut index = [None; 5];
    for (i, name) in header.iter().enumerate() {
        let Some(col) = SAMPLE_COLUMNS.iter().position(|c| *c == name) else {
            return Err(IoError::Header(format!(
                "unknown column '{name}' (expected {})",
                SAMPLE_COLUMNS.join(", ")
            )));
        };
        if index[col].replace(i).is_some() {
            return Err(IoError::Header(format!("column '{name}' appears twice")));
        }
    }
    let (Some(bytes_col), Some(seconds_col)) = (index[0], index[1]) else {
        return Err(IoError::Header(
            "the bytes and seconds columns are required".into(),
        ));
    };

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IoError::Row {
            line: line_at(e.position()),
            message: e.to_string(),
        })?;
        let line = line_at(record.position());
        let row_err = |message: String| IoError::Row { line, message };
        let cell = |col: Option<usize>| col.and_then(|i| record.get(i)).filter(|v| !v.is_empty());

        let bytes_text = cell(Some(bytes_col)).ok_or_else(|| row_err("missing bytes".into()))?;
        let bytes: u64 = bytes_text.parse().map_err(|_| {
            row_err(format!(
                "bytes must be a non-negative integer, got '{bytes_text}'"
            ))
        })?;
        let seconds_text =
            cell(Some(seconds_col)).ok_or_else(|| row_err("missing seconds".into()))?;
        let seconds: f64 = seconds_text
            .parse()
            .map_err(|_| row_err(format!("seconds is not a number: '{seconds_text}'")))?;
        let mut sample = TimingSample::new(bytes, seconds).map_err(|e| row_err(e.to_string()))?;
        if let Some(v) = cell(index[2]) {
            let ppn = v
                .parse()
                .map_err(|_| row_err(format!("ppn must be a positive integer, got '{v}'")))?;
            sample = sample.with_ppn(ppn).map_err(|e| row_err(e.to_string()))?;
        }
        if let Some(v) = cell(index[3]) {
            let n = v.parse().map_err(|_| {
                row_err(format!("n_messages must be a positive integer, got '{v}'"))
            })?;
            sample = sample
                .with_messages(n)
                .map_err(|e| row_err(e.to_string()))?;
        }
        if let Some(v) = cell(index[4]) {
            let loc: LocalityClass = v.parse().map_err(row_err)?;
            sample = sample.with_locality(loc);
        }
        out.push(SampleRecord { line, sample });
    }
    if out.is_empty() {
        return Err(IoError::NoSamples);
    }
    Ok(out)
}

/// One table cell. Floats are kept at the 9 significant digits they are written with.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn float(value: f64) -> Cell {
        Cell::Float(format_float(value).parse().expect("formatted floats parse"))
    }

    pub fn text(value: impl Into<String>) -> Cell {
        Cell::Text(value.into())
    }

    fn parse(field: &str) -> Cell {
        if let Ok(v) = field.parse::<u64>() {
            return Cell::Int(v);
        }
        let looks_numeric = field.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+')
            || matches!(field, "inf" | "NaN");
        match field.parse::<f64>() {
            Ok(v) if looks_numeric => Cell::Float(v),
            _ => Cell::Text(field.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

fn format_float(value: f64) -> String {
    format!("{value:.8e}")
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => f.write_str(&format_float(*v)),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| IoError::Io(e.into());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Table, IoError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| IoError::Header(e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        let mut table = Table {
            header,
            rows: Vec::new(),
        };
        for record in rdr.records() {
            let record = record.map_err(|e| IoError::Row {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            table.rows.push(record.iter().map(Cell::parse).collect());
        }
        Ok(table)
    }

    /// Aligned plain text: text left-aligned, numbers right-aligned.
    pub fn write_aligned<W: Write>(&self, mut out: W) -> Result<(), IoError> {
        let rendered: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|c| c.to_string()).collect())
            .collect();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &rendered {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let numeric: Vec<bool> = (0..self.header.len())
            .map(|i| {
                !self.rows.is_empty() && self.rows.iter().all(|r| !matches!(r[i], Cell::Text(_)))
            })
            .collect();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if numeric[i] {
                        format!("{c:>w$}", w = widths[i])
                    } else {
                        format!("{c:<w$}", w = widths[i])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        writeln!(out, "{}", line(&self.header))?;
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(out, "{}", rule.join("  "))?;
        for row in &rendered {
            writeln!(out, "{}", line(row))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_samples_with_optional_columns() {
        let text = "# ping-pong\nbytes,seconds,ppn,locality\n8,1.5e-6,,off-node\n# mid comment\n1024,2.0e-6,4,\n";
        let recs = read_samples(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].sample.locality, Some(LocalityClass::OffNode));
        assert_eq!(recs[0].sample.ppn, None);
        assert_eq!(recs[1].sample.ppn, Some(4));
        assert_eq!(recs[1].line, 5);
    }

    #[test]
    fn row_errors_name_the_line() {
        let text = "bytes,seconds\n8,1e-6\n16,abc\n";
        match read_samples(text.as_bytes()) {
            Err(IoError::Row { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_samples("bytes,seconds\n-4,1e-6\n".as_bytes()),
            Err(IoError::Row { line: 2, .. })
        ));
        assert!(matches!(
            read_samples("bytes,seconds\n4,0\n".as_bytes()),
            Err(IoError::Row { line: 2, .. })
        ));
        assert!(matches!(
            read_samples("bytes,seconds\n4,1e-6,9\n".as_bytes()),
            Err(IoError::Row { line: 2, .. })
        ));
        assert!(matches!(
            read_samples("bytes,seconds,locality\n4,1e-6,off-rack\n".as_bytes()),
            Err(IoError::Row { line: 2, .. })
        ));
    }

    #[test]
    fn header_problems() {
        assert!(matches!(
            read_samples("bytes,seconds\n".as_bytes()),
            Err(IoError::NoSamples)
        ));
        assert!(matches!(
            read_samples("# only\nbytes,seconds\n# more\n".as_bytes()),
            Err(IoError::NoSamples)
        ));
        assert!(matches!(
            read_samples("".as_bytes()),
            Err(IoError::NoSamples)
        ));
        assert!(matches!(
            read_samples("size,seconds\n1,1\n".as_bytes()),
            Err(IoError::Header(_))
        ));
        assert!(matches!(
            read_samples("bytes,ppn\n1,1\n".as_bytes()),
            Err(IoError::Header(_))
        ));
        assert!(matches!(
            read_samples("bytes,seconds,bytes\n1,1,1\n".as_bytes()),
            Err(IoError::Header(_))
        ));
    }

    #[test]
    fn floats_use_nine_significant_digits() {
        assert_eq!(Cell::float(1.0 / 3.0).to_string(), "3.33333333e-1");
        assert_eq!(Cell::float(4.961352e-6).to_string(), "4.96135200e-6");
        assert_eq!(Cell::float(f64::INFINITY).to_string(), "inf");
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(["size", "strategy", "seconds", "speedup"]);
        t.push(vec![
            8u64.into(),
            "cuda-aware".into(),
            (1.0 / 7.0).into(),
            f64::INFINITY.into(),
        ]);
        t.push(vec![
            1024u64.into(),
            "3-step".into(),
            2.5e-300.into(),
            0.0.into(),
        ]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn aligned_rendering() {
        let mut t = Table::new(["size", "path"]);
        t.push(vec![8u64.into(), "gpudirect".into()]);
        t.push(vec![1024u64.into(), "3step".into()]);
        let mut buf = Vec::new();
        t.write_aligned(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "size  path\n----  ---------\n   8  gpudirect\n1024  3step\n"
        );
    }
}
