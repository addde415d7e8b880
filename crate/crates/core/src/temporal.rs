//! Rolling-window top-up expenditure per sector, and the long-format overlay file
//! that places those series next to an external food-stock series.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;

use crate::error::{Error, Result};
use crate::ingest::TopUpRecord;
use crate::table::fmt_f64;

/// Which users divide a sector's window sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Users homed in the sector with at least one top-up anywhere in the period.
    #[default]
    WholePeriod,
    /// Users homed in the sector with at least one top-up inside the window.
    ActiveInWindow,
}

/// Day range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DayRange {
    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RollingConfig {
    pub window_days: u32,
    pub denominator: Denominator,
    pub utc_offset_minutes: i32,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            window_days: 30,
            denominator: Denominator::WholePeriod,
            utc_offset_minutes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub label_date: NaiveDate,
    pub value: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorTimeSeries {
    pub sector_id: String,
    pub window_days: u32,
    pub points: Vec<SeriesPoint>,
}

/// Label of a window starting at `start`: its middle day, rounding down for even
/// lengths (the 15th day of a 30-day window).
pub fn window_label(start: NaiveDate, window_days: u32) -> NaiveDate {
    start + Duration::days(((window_days.max(1) - 1) / 2) as i64)
}

pub fn local_date(t: &chrono::DateTime<chrono::Utc>, utc_offset_minutes: i32) -> NaiveDate {
    (*t + Duration::minutes(utc_offset_minutes as i64)).date_naive()
}

/// One event per top-up: (day index, user index within sector, amount).
type SectorEvents = Vec<(usize, usize, Decimal)>;

/// Rolling sums per sector over day-aligned windows `[d, d + window)`, sliding by one day.
///
/// Only windows that lie entirely inside `period` are emitted. Top-ups by users
/// without a home sector, or outside `period`, are ignored. Sectors with no
/// eligible users are dropped.
pub fn rolling_sector_series<'a, I>(
    topups: I,
    home: &HashMap<String, String>,
    period: DayRange,
    config: &RollingConfig,
) -> Result<Vec<SectorTimeSeries>>
where
    I: IntoIterator<Item = &'a TopUpRecord>,
{
    let w = config.window_days as i64;
    if w < 1 {
        return Err(Error::Config("window_days must be at least 1".into()));
    }
    if period.days() < w {
        return Err(Error::Invalid(format!(
            "observation period of {} days is shorter than the {w}-day window",
            period.days()
        )));
    }
    let n_days = period.days() as usize;

    let mut by_sector: BTreeMap<&str, (HashMap<&str, usize>, SectorEvents)> = BTreeMap::new();
    for t in topups {
        let Some(sector) = home.get(&t.user_id) else { continue };
        let day = (local_date(&t.timestamp, config.utc_offset_minutes) - period.start).num_days();
        if day < 0 || day >= n_days as i64 {
            continue;
        }
        let (users, events) = by_sector.entry(sector.as_str()).or_default();
        let next = users.len();
        let u = *users.entry(t.user_id.as_str()).or_insert(next);
        events.push((day as usize, u, t.amount));
    }

    let sectors: Vec<(&str, usize, SectorEvents)> = by_sector
        .into_iter()
        .map(|(s, (users, ev))| (s, users.len(), ev))
        .collect();
    Ok(sectors
        .par_iter()
        .filter(|(_, n_users, _)| *n_users > 0)
        .map(|(sector, n_users, events)| sector_series(sector, *n_users, events, n_days, period.start, config))
        .collect())
}

fn sector_series(
    sector: &str,
    n_users: usize,
    events: &SectorEvents,
    n_days: usize,
    start: NaiveDate,
    config: &RollingConfig,
) -> SectorTimeSeries {
    let w = config.window_days as usize;
    let mut daily = vec![Decimal::ZERO; n_days];
    let mut per_day_users: Vec<Vec<usize>> = vec![Vec::new(); n_days];
    for &(d, u, a) in events {
        daily[d] += a;
        per_day_users[d].push(u);
    }

    let mut points = Vec::with_capacity(n_days + 1 - w);
    let mut sum = Decimal::ZERO;
    let mut active_counts = vec![0u32; n_users];
    let mut active = 0usize;
    for d in 0..n_days {
        sum += daily[d];
        for &u in &per_day_users[d] {
            if active_counts[u] == 0 {
                active += 1;
            }
            active_counts[u] += 1;
        }
        if d >= w {
            sum -= daily[d - w];
            for &u in &per_day_users[d - w] {
                active_counts[u] -= 1;
                if active_counts[u] == 0 {
                    active -= 1;
                }
            }
        }
        if d + 1 >= w {
            let first = d + 1 - w;
            let denom = match config.denominator {
                Denominator::WholePeriod => n_users,
                Denominator::ActiveInWindow => active,
            };
            points.push(SeriesPoint {
                label_date: window_label(start + Duration::days(first as i64), config.window_days),
                value: window_value(sum, denom),
                n_users: denom,
            });
        }
    }
    SectorTimeSeries {
        sector_id: sector.to_string(),
        window_days: config.window_days,
        points,
    }
}

/// Window sum divided by the user count; 0 for an empty denominator.
pub fn window_value(sum: Decimal, users: usize) -> f64 {
    if users == 0 {
        return 0.0;
    }
    (sum / Decimal::from(users)).to_f64().unwrap_or(f64::NAN)
}

pub fn write_rolling<W: Write>(w: W, series: &[SectorTimeSeries]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sector_id", "label_date", "value", "n_users"])?;
    for s in series {
        for p in &s.points {
            wtr.write_record([
                s.sector_id.clone(),
                p.label_date.to_string(),
                fmt_f64(p.value),
                p.n_users.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("rolling.csv", e))?;
    Ok(())
}

/// A row of an external food-stock series.
#[derive(Debug, Clone, PartialEq)]
pub struct StockRow {
    pub date: NaiveDate,
    pub label: String,
    pub percentage: f64,
}

/// Reads `date,label,percentage`. Any bad row is fatal.
pub fn load_stock_series<R: Read>(r: R, file: &str) -> Result<Vec<StockRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| Error::format(file, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["date", "label", "percentage"] {
        return Err(Error::format(file, "expected header date,label,percentage"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(file, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: &str| Error::format(file, format!("line {line}: {m}"));
        out.push(StockRow {
            date: rec[0].trim().parse().map_err(|_| bad("bad date"))?,
            label: rec[1].to_string(),
            percentage: rec[2].trim().parse().map_err(|_| bad("bad percentage"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayRow {
    pub date: NaiveDate,
    pub source: String,
    pub label: String,
    pub value: f64,
}

pub const SOURCE_TOPUP: &str = "topup";
pub const SOURCE_STOCK: &str = "stock";

/// Sector series rows (source `topup`, label = sector id) followed by stock rows
/// (source `stock`). Nothing is computed across the two.
pub fn emit_overlay(series: &[SectorTimeSeries], stock: Option<&[StockRow]>) -> Vec<OverlayRow> {
    let mut out: Vec<OverlayRow> = series
        .iter()
        .flat_map(|s| {
            s.points.iter().map(|p| OverlayRow {
                date: p.label_date,
                source: SOURCE_TOPUP.to_string(),
                label: s.sector_id.clone(),
                value: p.value,
            })
        })
        .collect();
    if let Some(stock) = stock {
        out.extend(stock.iter().map(|r| OverlayRow {
            date: r.date,
            source: SOURCE_STOCK.to_string(),
            label: r.label.clone(),
            value: r.percentage,
        }));
    }
    out
}

pub fn write_overlay<W: Write>(w: W, rows: &[OverlayRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "source", "label", "value"])?;
    for r in rows {
        wtr.write_record([r.date.to_string(), r.source.clone(), r.label.clone(), fmt_f64(r.value)])?;
    }
    wtr.flush().map_err(|e| Error::io("overlay.csv", e))?;
    Ok(())
}

pub fn read_overlay<R: Read>(r: R, file: &str) -> Result<Vec<OverlayRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::format(file, "bad overlay row");
        out.push(OverlayRow {
            date: rec[0].parse().map_err(|_| bad())?,
            source: rec[1].to_string(),
            label: rec[2].to_string(),
            value: rec[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
