//! Sector-indexed matrices and the CSV conventions shared by every output file.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A matrix cell. `None` marks an undefined value (zero-variance CV, missing survey answer, ...).
pub type Cell = Option<f64>;

/// Formats a float so that parsing it back yields the same bits.
///
/// Plain decimal notation in the usual range, exponent notation for very small or
/// very large magnitudes (p-values routinely reach 1e-40).
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn fmt_cell(c: Cell) -> String {
    c.map(fmt_f64).unwrap_or_default()
}

pub fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| format!("not a number: {s:?}"))
}

/// Rows are sectors (sorted by id), columns are named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorMatrix {
    pub sectors: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, `cells[row][col]`.
    pub cells: Vec<Vec<Cell>>,
    /// Units behind each row (users or households).
    pub counts: Vec<usize>,
    /// Header name of the count column, e.g. `n_users`.
    pub count_label: String,
}

impl SectorMatrix {
    pub fn new(columns: Vec<String>, count_label: &str) -> Self {
        SectorMatrix {
            sectors: Vec::new(),
            columns,
            cells: Vec::new(),
            counts: Vec::new(),
            count_label: count_label.to_string(),
        }
    }

    pub fn push_row(&mut self, sector: String, row: Vec<Cell>, count: usize) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.sectors.push(sector);
        self.cells.push(row);
        self.counts.push(count);
    }

    pub fn n_rows(&self) -> usize {
        self.sectors.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<Cell> {
        self.cells.iter().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<Cell>> {
        self.column_index(name).map(|j| self.column(j))
    }

    pub fn row_index(&self, sector: &str) -> Option<usize> {
        self.sectors.binary_search_by(|s| s.as_str().cmp(sector)).ok()
    }

    /// Keeps only the named rows, in their existing order.
    pub fn retain_sectors(&self, keep: impl Fn(&str) -> bool) -> SectorMatrix {
        let mut out = SectorMatrix::new(self.columns.clone(), &self.count_label);
        for (i, s) in self.sectors.iter().enumerate() {
            if keep(s) {
                out.push_row(s.clone(), self.cells[i].clone(), self.counts[i]);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["sector_id".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push(self.count_label.clone());
        wtr.write_record(&header)?;
        for (i, s) in self.sectors.iter().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(s.clone());
            rec.extend(self.cells[i].iter().map(|c| fmt_cell(*c)));
            rec.push(self.counts[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<sector matrix>", e))?;
        Ok(())
    }

    /// Reads a matrix written by [`SectorMatrix::write_csv`]. The last column is the count.
    pub fn read_csv<R: Read>(r: R, file: &str) -> Result<SectorMatrix> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "sector_id" {
            return Err(Error::format(file, "expected header starting with sector_id"));
        }
        let columns: Vec<String> = header.iter().skip(1).take(header.len() - 2).map(String::from).collect();
        let count_label = header[header.len() - 1].to_string();
        let mut m = SectorMatrix::new(columns, &count_label);
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |msg: String| Error::format(file, format!("line {line}: {msg}"));
            let row = rec
                .iter()
                .skip(1)
                .take(m.columns.len())
                .map(parse_cell)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(bad)?;
            let count = rec[rec.len() - 1]
                .parse::<usize>()
                .map_err(|_| bad(format!("bad {count_label}")))?;
            m.push_row(rec[0].to_string(), row, count);
        }
        if m.sectors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(file, "sector ids must be unique and sorted"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0, -0.8, 1e-45, 3.0e20, 0.1 + 0.2, 112.0, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(1e-20), "1e-20");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mut m = SectorMatrix::new(vec!["a.mean".into(), "a.cv".into()], "n_users");
        m.push_row("s1".into(), vec![Some(1.5), None], 31);
        m.push_row("s2".into(), vec![Some(-2.0), Some(0.25)], 40);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "sector_id,a.mean,a.cv,n_users\ns1,1.5,,31\ns2,-2,0.25,40\n"
        );
        let back = SectorMatrix::read_csv(&buf[..], "m.csv").unwrap();
        assert_eq!(back, m);
    }
}
