//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;

use foodsec::ingest::TopUpRecord;
use foodsec::temporal::{DayRange, Denominator, RollingConfig, SectorTimeSeries, SeriesPoint};

/// r = Σ(x-x̄)(y-ȳ) / sqrt(Σ(x-x̄)² Σ(y-ȳ)²), written out directly.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let dx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let dy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    num / (dx.sqrt() * dy.sqrt())
}

fn t_density(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln()).exp()
}

/// Two-sided p-value by Simpson integration of the Student-t density over [0, |t|].
pub fn t_integration_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = (r * (df / (1.0 - r * r)).sqrt()).abs();
    let steps = 20_000;
    let h = t / steps as f64;
    let mut s = t_density(0.0, df) + t_density(t, df);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(i as f64 * h, df);
    }
    (1.0 - 2.0 * s * h / 3.0).max(0.0)
}

/// One draw of `n` pairs from a bivariate normal with correlation `rho`.
pub fn bivariate_normal(rng: &mut impl Rng, n: usize, rho: f64) -> (Vec<f64>, Vec<f64>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (x, y)
}

/// Recomputes every window from scratch.
pub fn naive_rolling(
    topups: &[TopUpRecord],
    home: &HashMap<String, String>,
    period: DayRange,
    cfg: &RollingConfig,
) -> Vec<SectorTimeSeries> {
    let n_days = (period.end - period.start).num_days();
    let w = cfg.window_days as i64;
    let day_of = |t: &TopUpRecord| {
        let local = t.timestamp + Duration::minutes(cfg.utc_offset_minutes as i64);
        (local.date_naive() - period.start).num_days()
    };
    let mut sectors: BTreeMap<&str, Vec<(i64, &str, Decimal)>> = BTreeMap::new();
    for t in topups {
        let Some(s) = home.get(&t.user_id) else { continue };
        let d = day_of(t);
        if (0..n_days).contains(&d) {
            sectors.entry(s).or_default().push((d, &t.user_id, t.amount));
        }
    }
    sectors
        .into_iter()
        .map(|(s, ev)| {
            let all: BTreeSet<&str> = ev.iter().map(|e| e.1).collect();
            let points = (0..=n_days - w)
                .map(|first| {
                    let inside: Vec<_> = ev.iter().filter(|e| e.0 >= first && e.0 < first + w).collect();
                    let sum: Decimal = inside.iter().map(|e| e.2).sum();
                    let users = match cfg.denominator {
                        Denominator::WholePeriod => all.len(),
                        Denominator::ActiveInWindow => inside.iter().map(|e| e.1).collect::<BTreeSet<_>>().len(),
                    };
                    let value = if users == 0 {
                        0.0
                    } else {
                        (sum / Decimal::from(users)).to_f64().unwrap()
                    };
                    SeriesPoint {
                        label_date: period.start + Duration::days(first + (w - 1) / 2),
                        value,
                        n_users: users,
                    }
                })
                .collect();
            SectorTimeSeries {
                sector_id: s.to_string(),
                window_days: cfg.window_days,
                points,
            }
        })
        .collect()
}

/// Random top-ups over `days` days from `start`, with homes for most users.
pub fn topup_fixture(
    seed: u64,
    n_records: usize,
    n_users: usize,
    n_sectors: usize,
    start: NaiveDate,
    days: i64,
) -> (Vec<TopUpRecord>, HashMap<String, String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).unwrap());
    let topups = (0..n_records)
        .map(|_| TopUpRecord {
            user_id: format!("u{}", rng.random_range(0..n_users)),
            amount: Decimal::new(rng.random_range(1..200_000), 2),
            timestamp: t0 + Duration::seconds(rng.random_range(0..days * 86_400)),
        })
        .collect();
    let home = (0..n_users)
        .filter(|u| u % 17 != 0)
        .map(|u| (format!("u{u}"), format!("s{}", u % n_sectors)))
        .collect();
    (topups, home)
}
