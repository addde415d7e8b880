//! Streaming readers and writers for the input file families.
//!
//! Record files (`cdr.csv`, `topup.csv`) are read one row at a time through a
//! reused buffer, so memory use is independent of file length. Malformed rows are
//! quarantined into [`IngestStats`] unless strict mode is on, in which case the
//! first one ends the stream with [`Error::Row`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::marker::PhantomData;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use rust_decimal::Decimal;

use crate::error::{Error, Result, RowError};
use crate::table::{fmt_cell, Cell};

/// Keep at most this many row errors verbatim; the rest are only counted.
pub const MAX_SAMPLE_ERRORS: usize = 100;

/// One originating call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub caller_id: String,
    pub callee_id: String,
    pub tower_id: String,
    pub timestamp: DateTime<Utc>,
}

/// One airtime purchase. Amounts are exact decimals and strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopUpRecord {
    pub user_id: String,
    pub amount: Decimal,
    pub timestamp: DateTime<Utc>,
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationPeriod {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl ObservationPeriod {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if start >= end {
            return Err(Error::Config(format!(
                "observation period start {start} is not before end {end}"
            )));
        }
        Ok(ObservationPeriod { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let t = DateTime::parse_from_rfc3339(s.trim())
        .map_err(|e| format!("unparsable timestamp {s:?}: {e}"))?
        .with_timezone(&Utc);
    Ok(t.with_nanosecond(0).unwrap_or(t))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// A row type with a fixed CSV schema.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    /// `fields[i]` is the value of `HEADER[i]`.
    fn from_fields(fields: &[&str]) -> std::result::Result<Self, String>;

    fn to_fields(&self) -> Vec<String>;

    fn timestamp(&self) -> Option<DateTime<Utc>> {
        None
    }
}

fn non_empty<'a>(name: &str, s: &'a str) -> std::result::Result<&'a str, String> {
    if s.is_empty() {
        Err(format!("empty {name}"))
    } else {
        Ok(s)
    }
}

impl CsvRecord for CallRecord {
    const HEADER: &'static [&'static str] = &["caller_id", "callee_id", "tower_id", "timestamp"];

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        Ok(CallRecord {
            caller_id: non_empty("caller_id", f[0])?.to_string(),
            callee_id: non_empty("callee_id", f[1])?.to_string(),
            tower_id: non_empty("tower_id", f[2])?.to_string(),
            timestamp: parse_timestamp(f[3])?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.caller_id.clone(),
            self.callee_id.clone(),
            self.tower_id.clone(),
            format_timestamp(&self.timestamp),
        ]
    }

    fn timestamp(&self) -> Option<DateTime<Utc>> {
        Some(self.timestamp)
    }
}

impl CsvRecord for TopUpRecord {
    const HEADER: &'static [&'static str] = &["user_id", "amount", "timestamp"];

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        let amount = Decimal::from_str(f[1].trim()).map_err(|_| format!("non-numeric amount {:?}", f[1]))?;
        if amount <= Decimal::ZERO {
            return Err("non-positive amount".to_string());
        }
        Ok(TopUpRecord {
            user_id: non_empty("user_id", f[0])?.to_string(),
            amount,
            timestamp: parse_timestamp(f[2])?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.user_id.clone(),
            self.amount.normalize().to_string(),
            format_timestamp(&self.timestamp),
        ]
    }

    fn timestamp(&self) -> Option<DateTime<Utc>> {
        Some(self.timestamp)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub strict: bool,
    pub period: Option<ObservationPeriod>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct IngestStats {
    pub rows_in: u64,
    pub records_out: u64,
    pub row_errors: u64,
    pub sample_errors: Vec<RowError>,
}

impl IngestStats {
    fn reject(&mut self, error: RowError) {
        self.row_errors += 1;
        if self.sample_errors.len() < MAX_SAMPLE_ERRORS {
            self.sample_errors.push(error);
        }
    }
}

/// Lazily parsed records of type `T` from a CSV source.
pub struct RecordStream<R: Read, T: CsvRecord> {
    file: String,
    reader: csv::Reader<R>,
    buf: csv::ByteRecord,
    index: Vec<usize>,
    opts: ParseOptions,
    stats: IngestStats,
    done: bool,
    _marker: PhantomData<T>,
}

impl<R: Read, T: CsvRecord> RecordStream<R, T> {
    /// Reads and checks the header. Columns may appear in any order; extra
    /// columns are ignored; a missing one is fatal.
    pub fn new(source: R, file: &str, opts: ParseOptions) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .buffer_capacity(1 << 16)
            .from_reader(source);
        let header = match reader.byte_headers() {
            Ok(h) => h.clone(),
            Err(e) => return Err(Error::format(file, format!("cannot read header: {e}"))),
        };
        if header.is_empty() {
            return Err(Error::format(file, "missing header"));
        }
        let names: Vec<&[u8]> = header.iter().collect();
        let index = T::HEADER
            .iter()
            .map(|want| {
                names
                    .iter()
                    .position(|h| *h == want.as_bytes())
                    .ok_or_else(|| Error::format(file, format!("header lacks column {want}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RecordStream {
            file: file.to_string(),
            reader,
            buf: csv::ByteRecord::new(),
            index,
            opts,
            stats: IngestStats::default(),
            done: false,
            _marker: PhantomData,
        })
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }

    fn parse_current(&self) -> std::result::Result<T, String> {
        let mut fields: Vec<&str> = Vec::with_capacity(self.index.len());
        for &i in &self.index {
            let raw = self
                .buf
                .get(i)
                .ok_or_else(|| format!("expected at least {} fields, found {}", i + 1, self.buf.len()))?;
            fields.push(std::str::from_utf8(raw).map_err(|_| "field is not valid UTF-8".to_string())?);
        }
        let rec = T::from_fields(&fields)?;
        if let (Some(period), Some(t)) = (self.opts.period, rec.timestamp()) {
            if !period.contains(t) {
                return Err(format!("timestamp {} outside observation period", format_timestamp(&t)));
            }
        }
        Ok(rec)
    }
}

impl<R: Read, T: CsvRecord> Iterator for RecordStream<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            match self.reader.read_byte_record(&mut self.buf) {
                Ok(false) => self.done = true,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Ok(true) => {
                    self.stats.rows_in += 1;
                    match self.parse_current() {
                        Ok(rec) => {
                            self.stats.records_out += 1;
                            return Some(Ok(rec));
                        }
                        Err(message) => {
                            let line = self.buf.position().map(|p| p.line()).unwrap_or(0);
                            let error = RowError { line, message };
                            self.stats.reject(error.clone());
                            if self.opts.strict {
                                self.done = true;
                                return Some(Err(Error::Row {
                                    file: self.file.clone(),
                                    error,
                                }));
                            }
                        }
                    }
                }
            }
        }
        None
    }
}

pub fn parse_cdr_stream<R: Read>(source: R, file: &str, opts: ParseOptions) -> Result<RecordStream<R, CallRecord>> {
    RecordStream::new(source, file, opts)
}

pub fn parse_topup_stream<R: Read>(source: R, file: &str, opts: ParseOptions) -> Result<RecordStream<R, TopUpRecord>> {
    RecordStream::new(source, file, opts)
}

/// Writes a header followed by one row per record.
pub fn write_records<'a, W, T, I>(w: W, records: I) -> Result<()>
where
    W: Write,
    T: CsvRecord + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(T::HEADER)?;
    for r in records {
        wtr.write_record(r.to_fields())?;
    }
    wtr.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

/// Appends rows without a header (for assembling a file from chunks).
pub fn write_record_rows<'a, W, T, I>(w: W, records: I) -> Result<()>
where
    W: Write,
    T: CsvRecord + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in records {
        wtr.write_record(r.to_fields())?;
    }
    wtr.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

/// Total map from tower id to sector id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TowerSectorMap {
    entries: BTreeMap<String, String>,
}

impl TowerSectorMap {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut m = TowerSectorMap::default();
        for (t, s) in pairs {
            m.insert(t.into(), s.into(), "<pairs>")?;
        }
        Ok(m)
    }

    /// Returns `true` when the pair was already present.
    fn insert(&mut self, tower: String, sector: String, file: &str) -> Result<bool> {
        match self.entries.get(&tower) {
            Some(existing) if *existing == sector => Ok(true),
            Some(existing) => Err(Error::format(
                file,
                format!("tower {tower} maps to both {existing} and {sector}"),
            )),
            None => {
                self.entries.insert(tower, sector);
                Ok(false)
            }
        }
    }

    pub fn sector_of(&self, tower: &str) -> Option<&str> {
        self.entries.get(tower).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sectors(&self) -> BTreeSet<&str> {
        self.entries.values().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(t, s)| (t.as_str(), s.as_str()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tower_id", "sector_id"])?;
        for (t, s) in self.iter() {
            wtr.write_record([t, s])?;
        }
        wtr.flush().map_err(|e| Error::io("<towers>", e))?;
        Ok(())
    }
}

/// Loads `towers.csv`. Returns the map and the number of duplicate identical rows.
pub fn load_tower_map<R: Read>(source: R, file: &str) -> Result<(TowerSectorMap, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = rdr.headers().map_err(|e| Error::format(file, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["tower_id", "sector_id"] {
        return Err(Error::format(file, "expected header tower_id,sector_id"));
    }
    let mut map = TowerSectorMap::default();
    let mut duplicates = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(file, e.to_string()))?;
        let (t, s) = (rec[0].trim(), rec[1].trim());
        if t.is_empty() || s.is_empty() {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            return Err(Error::format(file, format!("line {line}: empty tower or sector id")));
        }
        if map.insert(t.to_string(), s.to_string(), file)? {
            duplicates += 1;
            log::warn!("{file}: duplicate mapping for tower {t}");
        }
    }
    Ok((map, duplicates))
}

/// Category tag of a survey variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// V1: household characteristics.
    Household,
    /// V2: food consumption variables.
    Food,
    /// V3: wealth and expenditure variables.
    Wealth,
    /// 7-day consumption frequency of one food group or item, integer in [0,7].
    FoodGroup,
    /// Weekly use frequency of one coping strategy.
    Coping,
    Poverty,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Household => "V1",
            Category::Food => "V2",
            Category::Wealth => "V3",
            Category::FoodGroup => "food_group",
            Category::Coping => "coping",
            Category::Poverty => "poverty",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.trim() {
            "V1" | "household" => Category::Household,
            "V2" | "food" => Category::Food,
            "V3" | "wealth" => Category::Wealth,
            "food_group" => Category::FoodGroup,
            "coping" => Category::Coping,
            "poverty" => Category::Poverty,
            other => return Err(format!("unknown category {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyColumn {
    pub name: String,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub household_id: String,
    pub sector_id: String,
    /// Aligned with [`SurveyTable::columns`]; `None` is an unanswered cell.
    pub values: Vec<Cell>,
}

/// Household-level survey answers with per-column category tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurveyTable {
    pub columns: Vec<SurveyColumn>,
    pub rows: Vec<Household>,
}

impl SurveyTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn category_of(&self, name: &str) -> Option<Category> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.category)
    }

    /// Writes `survey.csv` and `survey_meta.csv`.
    pub fn write_csv<W1: Write, W2: Write>(&self, data: W1, meta: W2) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(data);
        let mut header = vec!["household_id".to_string(), "sector_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.household_id.clone(), row.sector_id.clone()];
            rec.extend(row.values.iter().map(|c| fmt_cell(*c)));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<survey>", e))?;

        let mut mw = csv::Writer::from_writer(meta);
        mw.write_record(["variable", "category"])?;
        for c in &self.columns {
            mw.write_record([c.name.as_str(), c.category.as_str()])?;
        }
        mw.flush().map_err(|e| Error::io("<survey meta>", e))?;
        Ok(())
    }
}

/// Loads `survey_meta.csv` (`variable,category`).
pub fn load_survey_meta<R: Read>(source: R, file: &str) -> Result<BTreeMap<String, Category>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = rdr.headers().map_err(|e| Error::format(file, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["variable", "category"] {
        return Err(Error::format(file, "expected header variable,category"));
    }
    let mut meta = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(file, e.to_string()))?;
        let cat: Category = rec[1].parse().map_err(|e: String| Error::format(file, e))?;
        if let Some(prev) = meta.insert(rec[0].trim().to_string(), cat) {
            if prev != cat {
                return Err(Error::format(file, format!("variable {} tagged twice", &rec[0])));
            }
        }
    }
    Ok(meta)
}

/// Loads a wide survey file (`household_id,sector_id,<variables...>`).
///
/// Every data column must have a category in `meta`. Food-group cells must be
/// integers in [0,7]; violations, non-numeric cells and wrong field counts are
/// row errors.
pub fn load_survey<R: Read>(
    source: R,
    file: &str,
    meta: &BTreeMap<String, Category>,
    opts: ParseOptions,
) -> Result<(SurveyTable, IngestStats)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = rdr.headers().map_err(|e| Error::format(file, e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "household_id" || &header[1] != "sector_id" {
        return Err(Error::format(file, "header must start with household_id,sector_id"));
    }
    let mut columns = Vec::new();
    let mut seen = BTreeSet::new();
    for name in header.iter().skip(2) {
        if !seen.insert(name) {
            return Err(Error::format(file, format!("duplicate column {name}")));
        }
        let category = *meta
            .get(name)
            .ok_or_else(|| Error::format(file, format!("variable {name} has no category in metadata")))?;
        columns.push(SurveyColumn {
            name: name.to_string(),
            category,
        });
    }

    let mut table = SurveyTable {
        columns,
        rows: Vec::new(),
    };
    let mut stats = IngestStats::default();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                // Invalid UTF-8 is a row problem; anything else is fatal.
                if let csv::ErrorKind::Utf8 { pos, .. } = e.kind() {
                    stats.rows_in += 1;
                    let line = pos.as_ref().map(|p| p.line()).unwrap_or(0);
                    let error = RowError {
                        line,
                        message: "invalid UTF-8".into(),
                    };
                    stats.reject(error.clone());
                    if opts.strict {
                        return Err(Error::Row {
                            file: file.to_string(),
                            error,
                        });
                    }
                    continue;
                }
                return Err(e.into());
            }
        }
        stats.rows_in += 1;
        match parse_household(&rec, &table.columns) {
            Ok(h) => {
                stats.records_out += 1;
                table.rows.push(h);
            }
            Err(message) => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                let error = RowError { line, message };
                stats.reject(error.clone());
                if opts.strict {
                    return Err(Error::Row {
                        file: file.to_string(),
                        error,
                    });
                }
            }
        }
    }
    Ok((table, stats))
}

fn parse_household(rec: &csv::StringRecord, columns: &[SurveyColumn]) -> std::result::Result<Household, String> {
    if rec.len() != columns.len() + 2 {
        return Err(format!("expected {} fields, found {}", columns.len() + 2, rec.len()));
    }
    let household_id = non_empty("household_id", rec[0].trim())?.to_string();
    let sector_id = non_empty("sector_id", rec[1].trim())?.to_string();
    let mut values = Vec::with_capacity(columns.len());
    for (col, raw) in columns.iter().zip(rec.iter().skip(2)) {
        let cell = crate::table::parse_cell(raw).map_err(|e| format!("{}: {e}", col.name))?;
        if let (Category::FoodGroup, Some(v)) = (col.category, cell) {
            if !(0.0..=7.0).contains(&v) || v.fract() != 0.0 {
                return Err(format!("{}: food-group frequency {v} outside 0..=7", col.name));
            }
        }
        values.push(cell);
    }
    Ok(Household {
        household_id,
        sector_id,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn lenient() -> ParseOptions {
        ParseOptions::default()
    }

    #[test]
    fn cdr_row_maps_fields() {
        let src = "caller_id,callee_id,tower_id,timestamp\nu1,u2,t7,2012-03-01T19:22:05Z\n";
        let recs: Vec<_> = parse_cdr_stream(src.as_bytes(), "cdr.csv", lenient())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(
            recs,
            vec![CallRecord {
                caller_id: "u1".into(),
                callee_id: "u2".into(),
                tower_id: "t7".into(),
                timestamp: Utc.with_ymd_and_hms(2012, 3, 1, 19, 22, 5).unwrap(),
            }]
        );
    }

    #[test]
    fn header_only_is_empty() {
        let mut s = parse_cdr_stream(
            "caller_id,callee_id,tower_id,timestamp\n".as_bytes(),
            "cdr.csv",
            lenient(),
        )
        .unwrap();
        assert!(s.next().is_none());
        assert_eq!(s.stats().row_errors, 0);
        assert_eq!(s.stats().rows_in, 0);
    }

    #[test]
    fn missing_header_is_fatal() {
        assert!(matches!(
            parse_cdr_stream("".as_bytes(), "cdr.csv", lenient()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_cdr_stream("caller_id,tower_id,timestamp\n".as_bytes(), "cdr.csv", lenient()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn malformed_row_is_quarantined_with_line_number() {
        let src = "caller_id,callee_id,tower_id,timestamp\nu1,u2,t7,2012-03-01T19:22:05Z\nu1,u2,t7,yesterday\n";
        let mut s = parse_cdr_stream(src.as_bytes(), "cdr.csv", lenient()).unwrap();
        let recs: Vec<_> = s.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(recs.len(), 1);
        let st = s.stats();
        assert_eq!((st.rows_in, st.records_out, st.row_errors), (2, 1, 1));
        assert_eq!(st.sample_errors[0].line, 3);
    }

    #[test]
    fn strict_mode_stops_at_first_bad_row() {
        let src = "caller_id,callee_id,tower_id,timestamp\nu1,u2,t7,bad\nu1,u2,t7,2012-03-01T19:22:05Z\n";
        let opts = ParseOptions {
            strict: true,
            period: None,
        };
        let mut s = parse_cdr_stream(src.as_bytes(), "cdr.csv", opts).unwrap();
        assert!(matches!(s.next(), Some(Err(Error::Row { .. }))));
        assert!(s.next().is_none());
    }

    #[test]
    fn columns_may_be_reordered() {
        let src = "timestamp,tower_id,callee_id,caller_id\n2012-03-01T00:00:00Z,t1,b,a\n";
        let r = parse_cdr_stream(src.as_bytes(), "cdr.csv", lenient())
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!((r.caller_id.as_str(), r.tower_id.as_str()), ("a", "t1"));
    }

    #[test]
    fn period_filter_rejects_out_of_range() {
        let period = ObservationPeriod::new(
            Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2012, 2, 1, 0, 0, 0).unwrap(),
        )
        .unwrap();
        let src = "user_id,amount,timestamp\nu1,5,2012-01-15T00:00:00Z\nu1,5,2012-02-01T00:00:00Z\n";
        let opts = ParseOptions {
            strict: false,
            period: Some(period),
        };
        let mut s = parse_topup_stream(src.as_bytes(), "topup.csv", opts).unwrap();
        assert_eq!(s.by_ref().count(), 1);
        assert_eq!(s.stats().row_errors, 1);
    }

    #[test]
    fn topup_amounts() {
        let src = "user_id,amount,timestamp\nu1,500,2012-03-01T08:00:00Z\nu1,-5,2012-03-01T08:00:00Z\nu1,abc,2012-03-01T08:00:00Z\n";
        let mut s = parse_topup_stream(src.as_bytes(), "topup.csv", lenient()).unwrap();
        let recs: Vec<_> = s.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].amount, Decimal::from(500));
        let msgs: Vec<_> = s.stats().sample_errors.iter().map(|e| e.message.clone()).collect();
        assert_eq!(msgs[0], "non-positive amount");
        assert!(msgs[1].starts_with("non-numeric amount"));
    }

    #[test]
    fn decimal_amounts_sum_exactly() {
        let src = "user_id,amount,timestamp\na,0.1,2012-03-01T08:00:00Z\nb,0.2,2012-03-01T08:00:00Z\nc,1499.7,2012-03-01T08:00:00Z\n";
        let total: Decimal = parse_topup_stream(src.as_bytes(), "topup.csv", lenient())
            .unwrap()
            .map(|r| r.unwrap().amount)
            .sum();
        assert_eq!(total, Decimal::from(1500));
    }

    #[test]
    fn tower_map_rules() {
        let (m, dup) = load_tower_map("tower_id,sector_id\nt1,s1\nt2,s1\n".as_bytes(), "towers.csv").unwrap();
        assert_eq!((m.len(), dup), (2, 0));
        assert_eq!(m.sectors().into_iter().collect::<Vec<_>>(), vec!["s1"]);

        assert!(load_tower_map("tower_id,sector_id\nt1,s1\nt1,s2\n".as_bytes(), "towers.csv").is_err());

        let (m, dup) = load_tower_map("tower_id,sector_id\nt1,s1\nt1,s1\n".as_bytes(), "towers.csv").unwrap();
        assert_eq!((m.len(), dup), (1, 1));
    }

    #[test]
    fn tower_map_sector_count() {
        let mut src = String::from("tower_id,sector_id\n");
        for i in 0..100 {
            src.push_str(&format!("t{i:03},s{}\n", i % 10));
        }
        let (m, _) = load_tower_map(src.as_bytes(), "towers.csv").unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.sectors().len(), 10);
    }

    fn meta() -> BTreeMap<String, Category> {
        [
            ("hh_size", Category::Household),
            ("staples", Category::FoodGroup),
            ("food_expenditure", Category::Wealth),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    #[test]
    fn survey_loads_with_tags() {
        let src = "household_id,sector_id,hh_size,staples,food_expenditure\nh1,s1,4,7,100.5\nh2,s2,3,,80\n";
        let (t, st) = load_survey(src.as_bytes(), "survey.csv", &meta(), lenient()).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.columns.len(), 3);
        assert_eq!(t.category_of("staples"), Some(Category::FoodGroup));
        assert_eq!(t.rows[1].values, vec![Some(3.0), None, Some(80.0)]);
        assert_eq!(st.row_errors, 0);
    }

    #[test]
    fn survey_food_group_range() {
        let src = "household_id,sector_id,hh_size,staples,food_expenditure\nh1,s1,4,9,100\nh2,s1,4,2.5,100\n";
        let (t, st) = load_survey(src.as_bytes(), "survey.csv", &meta(), lenient()).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(st.row_errors, 2);
    }

    #[test]
    fn survey_unknown_variable_is_fatal() {
        let src = "household_id,sector_id,mystery\nh1,s1,4\n";
        assert!(matches!(
            load_survey(src.as_bytes(), "survey.csv", &meta(), lenient()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn survey_write_read_round_trip() {
        let src = "household_id,sector_id,hh_size,staples,food_expenditure\nh1,s1,4,7,100.5\nh2,s2,3,,80\n";
        let (t, _) = load_survey(src.as_bytes(), "survey.csv", &meta(), lenient()).unwrap();
        let (mut d, mut m) = (Vec::new(), Vec::new());
        t.write_csv(&mut d, &mut m).unwrap();
        let meta2 = load_survey_meta(&m[..], "meta").unwrap();
        let (t2, _) = load_survey(&d[..], "survey.csv", &meta2, lenient()).unwrap();
        assert_eq!(t, t2);
    }
}
