//! Per-user features: home sector, top-up statistics and social diversity.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Timelike, Utc};
use rayon::prelude::*;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;

use crate::error::{Error, Result};
use crate::ingest::{CallRecord, TopUpRecord, TowerSectorMap};
use crate::table::{fmt_cell, fmt_f64, parse_cell};

/// Local time-of-day interval `[start, end)`, wrapping midnight when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightWindow {
    start_secs: u32,
    end_secs: u32,
}

impl NightWindow {
    pub fn new(start_secs: u32, end_secs: u32) -> Self {
        NightWindow {
            start_secs: start_secs % 86_400,
            end_secs: end_secs % 86_400,
        }
    }

    pub fn contains(&self, secs_of_day: u32) -> bool {
        if self.start_secs <= self.end_secs {
            (self.start_secs..self.end_secs).contains(&secs_of_day)
        } else {
            secs_of_day >= self.start_secs || secs_of_day < self.end_secs
        }
    }
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow::new(18 * 3600, 8 * 3600)
    }
}

impl FromStr for NightWindow {
    type Err = String;

    /// Parses `HH:MM-HH:MM`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let hm = |p: &str| -> std::result::Result<u32, String> {
            let (h, m) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("bad time {p:?}, expected HH:MM"))?;
            let h: u32 = h.parse().map_err(|_| format!("bad hour in {p:?}"))?;
            let m: u32 = m.parse().map_err(|_| format!("bad minute in {p:?}"))?;
            if h > 24 || m > 59 || (h == 24 && m != 0) {
                return Err(format!("time {p:?} out of range"));
            }
            Ok(h * 3600 + m * 60)
        };
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("bad night window {s:?}, expected HH:MM-HH:MM"))?;
        Ok(NightWindow::new(hm(a)?, hm(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HomeRule {
    /// Most calls inside the night window, falling back to all hours.
    #[default]
    Night,
    AllHours,
}

/// Which calls count toward contact volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiversityVolume {
    #[default]
    Both,
    Outgoing,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureConfig {
    pub night_window: NightWindow,
    pub home_rule: HomeRule,
    pub diversity_volume: DiversityVolume,
    /// Offset of local wall-clock time from UTC, in minutes.
    pub utc_offset_minutes: i32,
}

impl FeatureConfig {
    fn local_secs(&self, t: &DateTime<Utc>) -> u32 {
        let s = t.num_seconds_from_midnight() as i64 + self.utc_offset_minutes as i64 * 60;
        s.rem_euclid(86_400) as u32
    }
}

/// Per-tower originating call counts for one user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HomeTally {
    counts: HashMap<String, (u32, u32)>,
}

impl HomeTally {
    pub fn record(&mut self, tower: &str, night: bool) {
        let e = match self.counts.get_mut(tower) {
            Some(e) => e,
            None => self.counts.entry(tower.to_string()).or_default(),
        };
        e.1 += 1;
        if night {
            e.0 += 1;
        }
    }

    pub fn merge(&mut self, other: HomeTally) {
        for (t, (n, a)) in other.counts {
            let e = self.counts.entry(t).or_default();
            e.0 += n;
            e.1 += a;
        }
    }

    /// Tower with the most counted calls; ties go to the smallest tower id.
    pub fn home(&self, rule: HomeRule) -> Option<&str> {
        let pick = |key: fn(&(u32, u32)) -> u32| {
            self.counts
                .iter()
                .filter(|(_, c)| key(c) > 0)
                .max_by(|(ta, ca), (tb, cb)| key(ca).cmp(&key(cb)).then_with(|| tb.cmp(ta)))
                .map(|(t, _)| t.as_str())
        };
        match rule {
            HomeRule::Night => pick(|c| c.0).or_else(|| pick(|c| c.1)),
            HomeRule::AllHours => pick(|c| c.1),
        }
    }
}

/// Home tower of one user from their originating calls. `None` when there are no calls.
pub fn assign_home_tower<'a, I>(calls: I, config: &FeatureConfig) -> Option<String>
where
    I: IntoIterator<Item = &'a CallRecord>,
{
    let mut tally = HomeTally::default();
    for c in calls {
        tally.record(
            &c.tower_id,
            config.night_window.contains(config.local_secs(&c.timestamp)),
        );
    }
    tally.home(config.home_rule).map(str::to_string)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopUpStats {
    pub sum: Decimal,
    pub mean: f64,
    pub min: Decimal,
    pub max: Decimal,
    pub count: u64,
}

/// Running exact sum/min/max/count, mergeable in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TopUpTally {
    sum: Decimal,
    min: Option<Decimal>,
    max: Option<Decimal>,
    count: u64,
}

impl TopUpTally {
    pub fn add(&mut self, amount: Decimal) {
        self.sum += amount;
        self.min = Some(self.min.map_or(amount, |m| m.min(amount)));
        self.max = Some(self.max.map_or(amount, |m| m.max(amount)));
        self.count += 1;
    }

    pub fn merge(&mut self, o: TopUpTally) {
        self.sum += o.sum;
        self.count += o.count;
        self.min = match (self.min, o.min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max = match (self.max, o.max) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn finish(&self) -> Option<TopUpStats> {
        if self.count == 0 {
            return None;
        }
        let mean = (self.sum / Decimal::from(self.count)).to_f64()?;
        Some(TopUpStats {
            sum: self.sum,
            mean,
            min: self.min?,
            max: self.max?,
            count: self.count,
        })
    }
}

/// (sum, mean, min, max, count) of one user's top-ups. `None` for zero top-ups.
pub fn topup_features<I: IntoIterator<Item = Decimal>>(amounts: I) -> Option<TopUpStats> {
    let mut t = TopUpTally::default();
    amounts.into_iter().for_each(|a| t.add(a));
    t.finish()
}

/// Normalized Shannon entropy of contact volumes, `-Σ p log p / log k`.
///
/// One contact gives 0. Returns `None` for an empty slice or a zero volume.
pub fn social_diversity(volumes: &[u64]) -> Option<f64> {
    if volumes.is_empty() || volumes.contains(&0) {
        return None;
    }
    let k = volumes.len();
    if k == 1 {
        return Some(0.0);
    }
    // Sorting fixes the summation order, so the result does not depend on map iteration.
    let mut v = volumes.to_vec();
    v.sort_unstable();
    let total: f64 = v.iter().map(|&x| x as f64).sum();
    let h: f64 = v
        .iter()
        .map(|&x| {
            let p = x as f64 / total;
            -p * p.log2()
        })
        .sum();
    Some((h / (k as f64).log2()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserFeatureVector {
    pub user_id: String,
    pub home_sector: String,
    pub topup_sum: Decimal,
    pub topup_mean: f64,
    pub topup_min: Decimal,
    pub topup_max: Decimal,
    pub topup_count: u64,
    pub social_diversity: Option<f64>,
}

/// Users dropped by [`FeatureAccumulator::finish`], by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Exclusions {
    /// Placed calls but never topped up.
    pub no_topups: usize,
    /// Topped up but placed no calls.
    pub no_calls: usize,
    /// Home tower missing from the tower map.
    pub unmapped_home: usize,
}

#[derive(Debug, Clone, Default)]
struct UserState {
    home: HomeTally,
    contacts: HashMap<String, u64>,
    topups: TopUpTally,
}

/// Streaming per-user accumulator over calls and top-ups.
///
/// Accumulators built on any partition of the records merge into the same
/// result, in any order.
#[derive(Debug, Clone, Default)]
pub struct FeatureAccumulator {
    config: FeatureConfig,
    users: HashMap<String, UserState>,
}

impl FeatureAccumulator {
    pub fn new(config: FeatureConfig) -> Self {
        FeatureAccumulator {
            config,
            users: HashMap::new(),
        }
    }

    fn user(&mut self, id: &str) -> &mut UserState {
        if !self.users.contains_key(id) {
            self.users.insert(id.to_string(), UserState::default());
        }
        self.users.get_mut(id).expect("inserted above")
    }

    pub fn add_call(&mut self, c: &CallRecord) {
        let night = self.config.night_window.contains(self.config.local_secs(&c.timestamp));
        let both = self.config.diversity_volume == DiversityVolume::Both;
        let caller = self.user(&c.caller_id);
        caller.home.record(&c.tower_id, night);
        if c.caller_id == c.callee_id {
            return;
        }
        *caller.contacts.entry(c.callee_id.clone()).or_default() += 1;
        if both {
            *self.user(&c.callee_id).contacts.entry(c.caller_id.clone()).or_default() += 1;
        }
    }

    pub fn add_topup(&mut self, t: &TopUpRecord) {
        self.user(&t.user_id).topups.add(t.amount);
    }

    pub fn merge(&mut self, other: FeatureAccumulator) {
        for (id, st) in other.users {
            let mine = self.users.entry(id).or_default();
            mine.home.merge(st.home);
            for (c, v) in st.contacts {
                *mine.contacts.entry(c).or_default() += v;
            }
            mine.topups.merge(st.topups);
        }
    }

    /// One vector per user with at least one call and one top-up, sorted by user id.
    pub fn finish(&self, towers: &TowerSectorMap) -> (Vec<UserFeatureVector>, Exclusions) {
        let mut ids: Vec<&String> = self.users.keys().collect();
        ids.sort_unstable();
        let rule = self.config.home_rule;
        let results: Vec<std::result::Result<UserFeatureVector, Option<u8>>> = ids
            .par_iter()
            .map(|id| {
                let st = &self.users[*id];
                let placed_calls = !st.home.counts.is_empty();
                let topups = st.topups.finish();
                let (tower, topups) = match (st.home.home(rule), topups) {
                    (Some(t), Some(s)) => (t, s),
                    (Some(_), None) => return Err(Some(0)),
                    (None, Some(_)) => return Err(Some(1)),
                    // Only ever seen as a callee.
                    (None, None) => return Err(None),
                };
                debug_assert!(placed_calls);
                let sector = towers.sector_of(tower).ok_or(Some(2))?;
                let volumes: Vec<u64> = st.contacts.values().copied().collect();
                Ok(UserFeatureVector {
                    user_id: (*id).clone(),
                    home_sector: sector.to_string(),
                    topup_sum: topups.sum,
                    topup_mean: topups.mean,
                    topup_min: topups.min,
                    topup_max: topups.max,
                    topup_count: topups.count,
                    social_diversity: social_diversity(&volumes),
                })
            })
            .collect();
        let mut ex = Exclusions::default();
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => out.push(v),
                Err(Some(0)) => ex.no_topups += 1,
                Err(Some(1)) => ex.no_calls += 1,
                Err(Some(_)) => ex.unmapped_home += 1,
                Err(None) => {}
            }
        }
        if ex.unmapped_home > 0 {
            log::warn!("{} users excluded: home tower not in tower map", ex.unmapped_home);
        }
        (out, ex)
    }
}

/// Builds user features from complete call and top-up collections.
pub fn build_user_features<'a, C, T>(
    calls: C,
    topups: T,
    towers: &TowerSectorMap,
    config: FeatureConfig,
) -> (Vec<UserFeatureVector>, Exclusions)
where
    C: IntoIterator<Item = &'a CallRecord>,
    T: IntoIterator<Item = &'a TopUpRecord>,
{
    let mut acc = FeatureAccumulator::new(config);
    calls.into_iter().for_each(|c| acc.add_call(c));
    topups.into_iter().for_each(|t| acc.add_topup(t));
    acc.finish(towers)
}

pub const USER_FEATURES_HEADER: [&str; 8] = [
    "user_id",
    "home_sector",
    "topup_sum",
    "topup_mean",
    "topup_min",
    "topup_max",
    "topup_count",
    "social_diversity",
];

pub fn write_user_features<W: Write>(w: W, users: &[UserFeatureVector]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(USER_FEATURES_HEADER)?;
    for u in users {
        wtr.write_record([
            u.user_id.clone(),
            u.home_sector.clone(),
            u.topup_sum.normalize().to_string(),
            fmt_f64(u.topup_mean),
            u.topup_min.normalize().to_string(),
            u.topup_max.normalize().to_string(),
            u.topup_count.to_string(),
            fmt_cell(u.social_diversity),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("user_features.csv", e))?;
    Ok(())
}

pub fn read_user_features<R: Read>(r: R, file: &str) -> Result<Vec<UserFeatureVector>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != USER_FEATURES_HEADER {
        return Err(Error::format(file, "unexpected user feature header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::format(file, format!("line {line}: bad {what}"));
        let dec = |i: usize, what: &str| Decimal::from_str(&rec[i]).map_err(|_| bad(what));
        out.push(UserFeatureVector {
            user_id: rec[0].to_string(),
            home_sector: rec[1].to_string(),
            topup_sum: dec(2, "topup_sum")?,
            topup_mean: rec[3].parse().map_err(|_| bad("topup_mean"))?,
            topup_min: dec(4, "topup_min")?,
            topup_max: dec(5, "topup_max")?,
            topup_count: rec[6].parse().map_err(|_| bad("topup_count"))?,
            social_diversity: parse_cell(&rec[7]).map_err(|_| bad("social_diversity"))?,
        });
    }
    Ok(out)
}
