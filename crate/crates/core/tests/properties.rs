use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use proptest::prelude::*;
use rust_decimal::Decimal;

use foodsec::aggregate::{build_sector_matrix, AggregationConfig};
use foodsec::correlation::{fisher_ci, pearson, pearson_p, quantile_sorted};
use foodsec::features::{social_diversity, UserFeatureVector};
use foodsec::ingest::TopUpRecord;
use foodsec::model::fit_model;
use foodsec::survey::{
    classify_fcs, food_consumption_score, multidimensional_poverty_index, FcsClass, FoodGroupWeights,
};
use foodsec::temporal::{rolling_sector_series, DayRange, Denominator, RollingConfig};

fn paired(min: usize, max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (min..max).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3..1e3f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

proptest! {
    #[test]
    fn pearson_symmetric_and_bounded((x, y) in paired(3, 60)) {
        if let Some(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!(close(r, pearson(&y, &x).unwrap(), 1e-12));
        }
    }

    #[test]
    fn pearson_affine_invariant((x, y) in paired(3, 60), a in 0.01..100.0f64, b in -1e4..1e4f64) {
        if let Some(r) = pearson(&x, &y) {
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!(close(pearson(&xs, &y).unwrap(), r, 1e-9));
            prop_assert!(close(pearson(&neg, &y).unwrap(), -r, 1e-9));
        }
    }

    #[test]
    fn p_value_decreases_with_strength(r in 0.0..0.99f64, n in 4usize..500) {
        let p = pearson_p(r, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(pearson_p((r + 0.005).min(0.999), n).unwrap() <= p);
        prop_assert!(pearson_p(r, n + 10).unwrap() <= p + 1e-15);
        prop_assert_eq!(p, pearson_p(-r, n).unwrap());
    }

    #[test]
    fn fisher_interval_contains_r_and_narrows(r in -0.99..0.99f64, n in 4usize..400) {
        let (lo, hi) = fisher_ci(r, n, 0.95).unwrap();
        prop_assert!(-1.0 <= lo && lo <= r && r <= hi && hi <= 1.0);
        let (lo2, hi2) = fisher_ci(r, n + 50, 0.95).unwrap();
        prop_assert!(hi2 - lo2 < hi - lo);
        let (lo9, hi9) = fisher_ci(r, n, 0.99).unwrap();
        prop_assert!(lo9 <= lo && hi <= hi9);
    }

    #[test]
    fn diversity_bounded_and_order_free(mut v in prop::collection::vec(1u64..1000, 1..40)) {
        let d = social_diversity(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        v.reverse();
        prop_assert_eq!(social_diversity(&v).unwrap(), d);
        let even = vec![v[0]; v.len()];
        let e = social_diversity(&even).unwrap();
        let expected = if v.len() == 1 { 0.0 } else { 1.0 };
        prop_assert!(close(e, expected, 1e-12));
    }

    #[test]
    fn fcs_monotone_and_in_range(days in prop::collection::vec(0u8..=7, 9), g in 0usize..9) {
        let w = FoodGroupWeights::default();
        let names: Vec<String> = w.weights.keys().cloned().collect();
        let freq: BTreeMap<String, u8> = names.iter().cloned().zip(days.iter().copied()).collect();
        let s = food_consumption_score(&freq, &w).unwrap();
        prop_assert!((0.0..=112.0).contains(&s));
        let mut more = freq.clone();
        let e = more.get_mut(&names[g]).unwrap();
        *e = (*e + 1).min(7);
        let s2 = food_consumption_score(&more, &w).unwrap();
        prop_assert!(s2 >= s);
        let rank = |c: FcsClass| c as u8;
        prop_assert!(rank(classify_fcs(s2, &w)) >= rank(classify_fcs(s, &w)));
    }

    #[test]
    fn mpi_is_product(h in 0.0..=1.0f64, a in 0.0..=1.0f64) {
        prop_assert_eq!(multidimensional_poverty_index(h, a).unwrap(), h * a);
    }

    #[test]
    fn quantiles_monotone(mut v in prop::collection::vec(-10.0..10.0f64, 1..100), q in 0.0..1.0f64) {
        v.sort_by(f64::total_cmp);
        let a = quantile_sorted(&v, q);
        let b = quantile_sorted(&v, (q + 0.1).min(1.0));
        prop_assert!(v[0] <= a && a <= b && b <= v[v.len() - 1]);
    }
}

fn user(id: usize, sector: usize, cents: i64, count: u64, div: Option<f64>) -> UserFeatureVector {
    let sum = Decimal::new(cents, 2);
    UserFeatureVector {
        user_id: format!("u{id:04}"),
        home_sector: format!("s{sector}"),
        topup_sum: sum,
        topup_mean: (cents as f64 / 100.0) / count as f64,
        topup_min: Decimal::new(cents / count as i64, 2),
        topup_max: sum,
        topup_count: count,
        social_diversity: div,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_ignores_user_order(
        rows in prop::collection::vec((0usize..5, 100i64..1_000_000, 1u64..20, prop::option::of(0.0..1.0f64)), 20..200),
        seed in any::<u64>(),
    ) {
        let users: Vec<UserFeatureVector> =
            rows.iter().enumerate().map(|(i, &(s, c, k, d))| user(i, s, c, k, d)).collect();
        let mut shuffled = users.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let cfg = AggregationConfig { min_users: 3, ..AggregationConfig::default() };
        let (a, ea) = build_sector_matrix(&users, &cfg);
        let (b, eb) = build_sector_matrix(&shuffled, &cfg);
        prop_assert_eq!(a, b);
        prop_assert_eq!(ea, eb);
    }

    #[test]
    fn fit_r_invariant_under_affine_rescaling(
        rows in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -5.0..5.0f64), 12..60),
        a in 0.1..50.0f64,
        b in -100.0..100.0f64,
        degree in 1u8..=2,
    ) {
        let vars = vec!["a".to_string(), "b".to_string()];
        let x: Vec<Vec<Option<f64>>> = rows.iter().map(|r| vec![Some(r.0), Some(r.1)]).collect();
        let y: Vec<Option<f64>> = rows.iter().map(|r| Some(r.0 * r.0 - 2.0 * r.1 + r.2)).collect();
        let Ok(m) = fit_model("y", &vars, &x, &y, degree) else { return Ok(()) };
        let x2: Vec<Vec<Option<f64>>> = rows.iter().map(|r| vec![Some(a * r.0 + b), Some(r.1 / a - b)]).collect();
        let y2: Vec<Option<f64>> = y.iter().map(|v| v.map(|v| a * v + b)).collect();
        let m2 = fit_model("y", &vars, &x2, &y2, degree).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.fit_r));
        prop_assert!(close(m.fit_r, m2.fit_r, 1e-8), "{} vs {}", m.fit_r, m2.fit_r);
        if degree == 2 {
            let m1 = fit_model("y", &vars, &x, &y, 1).unwrap();
            prop_assert!(m.fit_r >= m1.fit_r - 1e-12);
        }
    }

    #[test]
    fn rolling_scales_with_amounts_and_stays_nonnegative(
        events in prop::collection::vec((0usize..30, 1i64..100_000, 0i64..40 * 86_400), 1..300),
        w in 1u32..20,
        active in any::<bool>(),
    ) {
        let start = NaiveDate::from_ymd_opt(2012, 5, 1).unwrap();
        let t0 = Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).unwrap());
        let topups: Vec<TopUpRecord> = events
            .iter()
            .map(|&(u, c, s)| TopUpRecord {
                user_id: format!("u{u}"),
                amount: Decimal::new(c, 2),
                timestamp: t0 + Duration::seconds(s),
            })
            .collect();
        let doubled: Vec<TopUpRecord> = topups
            .iter()
            .map(|t| TopUpRecord { amount: t.amount * Decimal::TWO, ..t.clone() })
            .collect();
        let home: HashMap<String, String> = (0..30).map(|u| (format!("u{u}"), format!("s{}", u % 4))).collect();
        let period = DayRange { start, end: start + Duration::days(40) };
        let cfg = RollingConfig {
            window_days: w,
            denominator: if active { Denominator::ActiveInWindow } else { Denominator::WholePeriod },
            utc_offset_minutes: 0,
        };
        let a = rolling_sector_series(&topups, &home, period, &cfg).unwrap();
        let b = rolling_sector_series(&doubled, &home, period, &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            prop_assert_eq!(sa.points.len(), 40 + 1 - w as usize);
            for (pa, pb) in sa.points.iter().zip(&sb.points) {
                prop_assert!(pa.value >= 0.0);
                prop_assert!(close(pb.value, 2.0 * pa.value, 1e-9 * pa.value.max(1.0)));
                prop_assert_eq!(pa.n_users, pb.n_users);
            }
        }
        // Under the whole-period denominator a window is the sum of its daily values.
        let one = RollingConfig { window_days: 1, ..cfg };
        let daily = rolling_sector_series(&topups, &home, period, &one).unwrap();
        if !active {
            for (s, d) in a.iter().zip(&daily) {
                for (i, p) in s.points.iter().enumerate() {
                    let inner: f64 = d.points[i..i + w as usize].iter().map(|q| q.value).sum();
                    prop_assert!(close(p.value, inner, 1e-6 * inner.max(1.0)));
                }
            }
        }
    }
}
