//! Plot-ready data emission: RFC-4180 CSV tables with 17-significant-digit
//! floats and small JSON summary records.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// Decimal scientific representation with 17 significant digits, enough for
/// an exact f64 round trip.
pub fn format_float17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// RFC-4180 writer for the numeric tables the commands emit. Fields never
/// contain separators or quotes, rows end with CRLF.
pub struct CsvWriter {
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push_str("\r\n");
        CsvWriter {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[CsvField]) {
        assert_eq!(fields.len(), self.columns, "row width mismatch");
        for (k, f) in fields.iter().enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            match f {
                CsvField::Int(v) => {
                    let _ = write!(self.buf, "{v}");
                }
                CsvField::Uint(v) => {
                    let _ = write!(self.buf, "{v}");
                }
                CsvField::Float(v) => self.buf.push_str(&format_float17(*v)),
            }
        }
        self.buf.push_str("\r\n");
    }

    pub fn finish(self) -> String {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf)?;
        Ok(())
    }
}

pub enum CsvField {
    Int(i64),
    Uint(u64),
    Float(f64),
}

impl From<f64> for CsvField {
    fn from(v: f64) -> Self {
        CsvField::Float(v)
    }
}

impl From<u64> for CsvField {
    fn from(v: u64) -> Self {
        CsvField::Uint(v)
    }
}

impl From<i64> for CsvField {
    fn from(v: i64) -> Self {
        CsvField::Int(v)
    }
}
