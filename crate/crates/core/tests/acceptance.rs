//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

use foodsec::config::{ConfigBuilder, RunConfig};
use foodsec::correlation::{
    fisher_ci, join_sectors, pearson, pearson_p, read_correlations, shuffle_null, JoinedSectors,
};
use foodsec::features::{read_user_features, FeatureAccumulator, FeatureConfig, HomeRule};
use foodsec::ingest::{load_tower_map, parse_cdr_stream, CallRecord, ParseOptions, TopUpRecord};
use foodsec::model::fit_model;
use foodsec::pipeline::{run_subcommand, Command};
use foodsec::survey::{
    classify_fcs, food_consumption_score, multidimensional_poverty_index, FcsClass, FoodGroupWeights,
};
use foodsec::synth::verify::{verify, Tolerances, Truth};
use foodsec::synth::{generate, Link, SynthConfig};
use foodsec::table::SectorMatrix;
use foodsec::temporal::{rolling_sector_series, DayRange, Denominator, RollingConfig};

use common::*;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, l: Layout) -> *mut u8 {
        let p = System.alloc(l);
        if !p.is_null() {
            let now = CURRENT.fetch_add(l.size(), Ordering::Relaxed) + l.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }
    unsafe fn dealloc(&self, p: *mut u8, l: Layout) {
        System.dealloc(p, l);
        CURRENT.fetch_sub(l.size(), Ordering::Relaxed);
    }
    unsafe fn realloc(&self, p: *mut u8, l: Layout, new: usize) -> *mut u8 {
        let q = System.realloc(p, l, new);
        if !q.is_null() {
            if new > l.size() {
                let now = CURRENT.fetch_add(new - l.size(), Ordering::Relaxed) + new - l.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(l.size() - new, Ordering::Relaxed);
            }
        }
        q
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Outcome = Result<(bool, String), String>;

fn cfg(data: &Path, out: &Path, extra: &[String]) -> RunConfig {
    let mut b = ConfigBuilder::new()
        .set("data", toml::Value::String(data.display().to_string()))
        .set("out", toml::Value::String(out.display().to_string()))
        .set("seed", toml::Value::Integer(7));
    for e in extra {
        b = b.set_raw(e).unwrap();
    }
    b.build().unwrap()
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn matrix(path: &Path) -> Result<SectorMatrix, String> {
    SectorMatrix::read_csv(fs::File::open(path).map_err(e2s)?, "matrix").map_err(e2s)
}

fn joined(out: &Path) -> Result<JoinedSectors, String> {
    Ok(join_sectors(
        &matrix(&out.join("sector_mobile.csv"))?,
        &matrix(&out.join("sector_survey.csv"))?,
    ))
}

fn truth(data: &Path) -> Result<Truth, String> {
    Truth::read(fs::File::open(data.join("truth.csv")).map_err(e2s)?, "truth.csv").map_err(e2s)
}

/// Default-sized dataset with the planted linear link, run through `all`.
struct Dataset1 {
    data: std::path::PathBuf,
    out: std::path::PathBuf,
    seconds: f64,
}

fn dataset1(root: &Path) -> Result<Dataset1, String> {
    let data = root.join("d1");
    let out = root.join("d1_out");
    let t = Instant::now();
    generate(&SynthConfig::default(), &data).map_err(e2s)?;
    run_subcommand(Command::All, &cfg(&data, &out, &["trials=1000".into()])).map_err(e2s)?;
    Ok(Dataset1 {
        data,
        out,
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn c1_planted_r(d: &Dataset1) -> Outcome {
    let corr = read_correlations(fs::File::open(d.out.join("correlations.csv")).map_err(e2s)?, "c").map_err(e2s)?;
    let e = corr
        .iter()
        .find(|e| e.mobile_var == "topup_sum.mean" && e.survey_var == "food_expenditure")
        .ok_or("pair missing")?;
    let r = e.r.ok_or("r undefined")?;
    let p = e.p.ok_or("p undefined")?;
    let ok = (r - 0.8).abs() <= 0.05 && p < 1e-15 && d.seconds < 120.0;
    Ok((
        ok,
        format!(
            "r={r:.4} (0.8 +- 0.05) p={p:.2e} (< 1e-15) synth+all={:.1}s (< 120s)",
            d.seconds
        ),
    ))
}

fn c2_food_groups(d: &Dataset1) -> Outcome {
    let report = verify(&truth(&d.data)?, &d.out, &Tolerances::default()).map_err(e2s)?;
    let inv = report.get("food_group_inversions").ok_or("no inversion check")?;
    let neg = report.get("negative_item_r").ok_or("no negative check")?;
    Ok((
        inv.value == 0.0 && neg.value < -0.2,
        format!("inversions={} (== 0) negative_r={:.3} (< -0.2)", inv.value, neg.value),
    ))
}

fn c3_shuffle_null(root: &Path, d: &Dataset1) -> Outcome {
    let j = joined(&d.out)?.truncate(100);
    let s = shuffle_null(&j, 1000, 3);
    let p99 = s.pooled.ok_or("no defined null trials")?.p99;

    let data = root.join("d400");
    let out = root.join("d400_out");
    let small = SynthConfig {
        seed: 4,
        n_sectors: 400,
        users_per_sector: 60,
        households_per_sector: 10,
        end: NaiveDate::from_ymd_opt(2012, 3, 1).unwrap(),
        ..Default::default()
    };
    generate(&small, &data).map_err(e2s)?;
    for c in [Command::Features, Command::Aggregate, Command::Indices] {
        run_subcommand(c, &cfg(&data, &out, &[])).map_err(e2s)?;
    }
    let j400 = joined(&out)?;
    let q400 = shuffle_null(&j400, 1000, 5).pooled.ok_or("no null at 400")?.p95;
    let q100 = shuffle_null(&j400.truncate(100), 1000, 5)
        .pooled
        .ok_or("no null at 100")?
        .p95;
    let ratio = q100 / q400;
    Ok((
        p99 < 0.35 && (1.4..=2.6).contains(&ratio),
        format!("p99|r| at 100 sectors={p99:.3} (< 0.35) p95 ratio 100/400={ratio:.3} (2 +- 30%)"),
    ))
}

fn c4_quadratic(root: &Path) -> Outcome {
    let data = root.join("quad");
    let out = root.join("quad_out");
    let sc = SynthConfig {
        seed: 9,
        link: Link::Quadratic,
        ..Default::default()
    };
    generate(&sc, &data).map_err(e2s)?;
    for c in [Command::Features, Command::Aggregate, Command::Indices] {
        run_subcommand(c, &cfg(&data, &out, &[])).map_err(e2s)?;
    }
    let j = joined(&out)?;
    let vars = ["topup_sum.mean".to_string(), "topup_mean.mean".to_string()];
    let col = |name: &str| j.mobile.iter().find(|c| c.0 == name).map(|c| c.1.clone());
    let cols: Vec<_> = vars
        .iter()
        .map(|v| col(v).ok_or(format!("missing {v}")))
        .collect::<Result<_, _>>()?;
    let x: Vec<Vec<Option<f64>>> = (0..j.n_sectors())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let y = j
        .survey
        .iter()
        .find(|c| c.0 == "food_expenditure")
        .ok_or("no target")?
        .1
        .clone();
    let q = fit_model("food_expenditure", &vars, &x, &y, 2).map_err(e2s)?;
    let l = fit_model("food_expenditure", &vars, &x, &y, 1).map_err(e2s)?;
    Ok((
        (0.84..=0.94).contains(&q.fit_r) && l.fit_r < q.fit_r,
        format!(
            "degree-2 fit_r={:.4} (in [0.84, 0.94]) degree-1 fit_r={:.4} (lower)",
            q.fit_r, l.fit_r
        ),
    ))
}

fn c5_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(3..500);
        let rho = rng.random_range(-0.9..0.9);
        let (x, y) = bivariate_normal(&mut rng, n, rho);
        let got = pearson(&x, &y).ok_or("undefined r")?;
        let want = textbook_pearson(&x, &y);
        worst_rel = worst_rel.max((got - want).abs() / want.abs());
    }

    let mut worst_p: f64 = 0.0;
    for n in [4usize, 10, 25, 50, 100, 200, 1000] {
        for k in 0..40 {
            let r = -0.975 + k as f64 * 0.05;
            let got = pearson_p(r, n).ok_or("undefined p")?;
            worst_p = worst_p.max((got - t_integration_p(r, n)).abs());
        }
    }

    let draws = 10_000;
    let mut hits = 0;
    for _ in 0..draws {
        let (x, y) = bivariate_normal(&mut rng, 50, 0.5);
        let r = pearson(&x, &y).ok_or("undefined r")?;
        let (lo, hi) = fisher_ci(r, 50, 0.95).ok_or("undefined ci")?;
        hits += (lo <= 0.5 && 0.5 <= hi) as usize;
    }
    let coverage = hits as f64 / draws as f64;
    Ok((
        worst_rel <= 1e-12 && worst_p <= 2e-4 && (coverage - 0.95).abs() <= 0.02,
        format!(
            "pearson rel err={worst_rel:.1e} (<= 1e-12) p abs err={worst_p:.1e} (<= 2e-4) ci coverage={coverage:.4} (0.95 +- 0.02)"
        ),
    ))
}

fn c6_indices() -> Outcome {
    let w = FoodGroupWeights::default();
    let all = |d: u8| -> BTreeMap<String, u8> { w.weights.keys().map(|k| (k.clone(), d)).collect() };
    let top = food_consumption_score(&all(7), &w).map_err(e2s)?;
    let bottom = food_consumption_score(&all(0), &w).map_err(e2s)?;
    let eps = 1e-9;
    let bounds = classify_fcs(21.0, &w) == FcsClass::Poor
        && classify_fcs(21.0 + eps, &w) == FcsClass::Borderline
        && classify_fcs(35.0, &w) == FcsClass::Borderline
        && classify_fcs(35.0 + eps, &w) == FcsClass::Acceptable;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut exact = 0;
    for _ in 0..1000 {
        let (h, a): (f64, f64) = (rng.random(), rng.random());
        exact += (multidimensional_poverty_index(h, a).map_err(e2s)? == h * a) as usize;
    }
    Ok((
        top == 112.0 && bottom == 0.0 && bounds && exact == 1000,
        format!("fcs range=[{bottom}, {top}] boundaries inclusive={bounds} mpi exact={exact}/1000"),
    ))
}

fn c7_home(d: &Dataset1) -> Outcome {
    let report = verify(&truth(&d.data)?, &d.out, &Tolerances::default()).map_err(e2s)?;
    let acc = report.get("home_accuracy").ok_or("no home check")?.value;

    let (towers, _) = load_tower_map(fs::File::open(d.data.join("towers.csv")).map_err(e2s)?, "towers").map_err(e2s)?;
    let sectors: Vec<&str> = towers.sectors().into_iter().collect();
    let decoy_for = |home: &str| -> String {
        let other = if home == sectors[0] { sectors[1] } else { sectors[0] };
        towers
            .iter()
            .find(|(_, s)| *s == other)
            .map(|(t, _)| t.to_string())
            .unwrap()
    };
    let users = read_user_features(fs::File::open(d.out.join("user_features.csv")).map_err(e2s)?, "uf").map_err(e2s)?;
    let before: HashMap<&str, &str> = users
        .iter()
        .map(|u| (u.user_id.as_str(), u.home_sector.as_str()))
        .collect();

    let replay = |rule: HomeRule| -> Result<usize, String> {
        let mut acc = FeatureAccumulator::new(FeatureConfig {
            home_rule: rule,
            ..FeatureConfig::default()
        });
        let calls = parse_cdr_stream(
            fs::File::open(d.data.join("cdr.csv")).map_err(e2s)?,
            "cdr",
            ParseOptions::default(),
        )
        .map_err(e2s)?;
        for c in calls {
            acc.add_call(&c.map_err(e2s)?);
        }
        let t0 = Utc.with_ymd_and_hms(2012, 1, 2, 12, 0, 0).unwrap();
        for u in &users {
            let tower = decoy_for(&u.home_sector);
            for k in 0..40 {
                acc.add_call(&CallRecord {
                    caller_id: u.user_id.clone(),
                    callee_id: "decoy".into(),
                    tower_id: tower.clone(),
                    timestamp: t0 + Duration::days(k % 150) + Duration::minutes(k * 7),
                });
            }
            acc.add_topup(&TopUpRecord {
                user_id: u.user_id.clone(),
                amount: Decimal::ONE,
                timestamp: t0,
            });
        }
        let (after, _) = acc.finish(&towers);
        Ok(after
            .iter()
            .filter(|a| before.get(a.user_id.as_str()) != Some(&a.home_sector.as_str()))
            .count())
    };
    let moved_night = replay(HomeRule::Night)?;
    let moved_all_hours = replay(HomeRule::AllHours)?;
    Ok((
        acc >= 0.95 && moved_night == 0 && moved_all_hours > 0,
        format!(
            "home accuracy={acc:.4} (>= 0.95) decoy changes={moved_night} (== 0; {moved_all_hours} under the all-hours rule)"
        ),
    ))
}

fn c8_rolling() -> Outcome {
    let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    let (topups, home) = topup_fixture(8, 100_000, 5_000, 40, start, 120);
    let period = DayRange {
        start,
        end: start + Duration::days(120),
    };
    let mut compared = 0usize;
    let mut equal = true;
    for denominator in [Denominator::WholePeriod, Denominator::ActiveInWindow] {
        let cfg = RollingConfig {
            window_days: 30,
            denominator,
            utc_offset_minutes: 0,
        };
        let fast = rolling_sector_series(&topups, &home, period, &cfg).map_err(e2s)?;
        let slow = naive_rolling(&topups, &home, period, &cfg);
        equal &= fast.len() == slow.len();
        for (a, b) in fast.iter().zip(&slow) {
            equal &= a.sector_id == b.sector_id && a.points.len() == b.points.len();
            for (p, q) in a.points.iter().zip(&b.points) {
                equal &=
                    p.value.to_bits() == q.value.to_bits() && p.n_users == q.n_users && p.label_date == q.label_date;
                compared += 1;
            }
        }
    }

    let dec = NaiveDate::from_ymd_opt(2012, 12, 1).unwrap();
    let t0 = Utc.from_utc_datetime(&dec.and_hms_opt(9, 0, 0).unwrap());
    let dec_topups: Vec<TopUpRecord> = (0..30)
        .map(|d| TopUpRecord {
            user_id: "u1".into(),
            amount: Decimal::new(100, 0),
            timestamp: t0 + Duration::days(d),
        })
        .collect();
    let dec_home: HashMap<String, String> = [("u1".to_string(), "s1".to_string())].into();
    let series = rolling_sector_series(
        &dec_topups,
        &dec_home,
        DayRange {
            start: dec,
            end: NaiveDate::from_ymd_opt(2012, 12, 31).unwrap(),
        },
        &RollingConfig::default(),
    )
    .map_err(e2s)?;
    let label = series[0].points[0].label_date;
    let label_ok = series[0].points.len() == 1 && label == NaiveDate::from_ymd_opt(2012, 12, 15).unwrap();
    Ok((
        equal && compared > 0 && label_ok,
        format!("{compared} window values bit-equal={equal} on 1e5 records; 1-30 Dec label={label}"),
    ))
}

fn c9_determinism(root: &Path) -> Outcome {
    let synth_cfg = root.join("det.toml");
    fs::write(
        &synth_cfg,
        "n_sectors = 80\nusers_per_sector = 80\nhouseholds_per_sector = 10\nend = \"2012-03-15\"\n",
    )
    .map_err(e2s)?;
    let stages = [
        Command::Synth,
        Command::Features,
        Command::Aggregate,
        Command::Indices,
        Command::Correlate,
        Command::Null,
        Command::Fit,
        Command::Rolling,
        Command::Verify,
    ];
    let mut runs = Vec::new();
    for (i, threads) in [1, 8, 8].into_iter().enumerate() {
        let dir = root.join(format!("det{i}"));
        let extra = vec![
            format!("threads={threads}"),
            format!("synth={:?}", synth_cfg.display().to_string()),
            "trials=200".into(),
            "heatmap_data=true".into(),
            "scatter_data=true".into(),
        ];
        for s in stages {
            let (data, out) = if s == Command::Synth {
                (root, &dir)
            } else {
                (dir.as_path(), &dir)
            };
            // Verify may fail its own thresholds at this size; its report is still compared.
            if let Err(e) = run_subcommand(s, &cfg(data, out, &extra)) {
                if s != Command::Verify {
                    return Err(format!("{}: {e}", s.as_str()));
                }
            }
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
            .map_err(e2s)?
            .map(|e| e.unwrap().path())
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        runs.push(files);
    }
    let n = runs[0].len();
    let differing: Vec<&str> = runs[0]
        .iter()
        .enumerate()
        .filter(|(i, f)| runs[1..].iter().any(|r| r.get(*i) != Some(f)))
        .map(|(_, f)| f.0.as_str())
        .collect();
    Ok((
        differing.is_empty() && runs.iter().all(|r| r.len() == n),
        format!("{n} files per run, threads 1/8/8; differing: {differing:?}"),
    ))
}

fn c10_streaming(root: &Path) -> Outcome {
    const ROWS: usize = 1_000_000;
    const CEILING: usize = 16 << 20;
    let path = root.join("big_cdr.csv");
    let mut bad = 0u64;
    {
        let mut w = BufWriter::new(fs::File::create(&path).map_err(e2s)?);
        writeln!(w, "caller_id,callee_id,tower_id,timestamp").map_err(e2s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..ROWS {
            let (a, b) = (rng.random_range(0..50_000), rng.random_range(0..50_000));
            let line = match i % 997 {
                0 => format!("u{a},u{b},t{}\n", i % 300),
                1 => format!("u{a},u{b},t{},2012-13-45T00:00:00Z\n", i % 300),
                _ => format!(
                    "u{a},u{b},t{},2012-0{}-1{}T{:02}:{:02}:00Z\n",
                    i % 300,
                    1 + i % 6,
                    i % 10,
                    i % 24,
                    i % 60
                ),
            };
            bad += (i % 997 < 2) as u64;
            w.write_all(line.as_bytes()).map_err(e2s)?;
        }
    }
    let size = fs::metadata(&path).map_err(e2s)?.len();
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let mut stream = parse_cdr_stream(
        fs::File::open(&path).map_err(e2s)?,
        "big_cdr.csv",
        ParseOptions::default(),
    )
    .map_err(e2s)?;
    let mut seen = 0u64;
    for r in stream.by_ref() {
        r.map_err(e2s)?;
        seen += 1;
    }
    let stats = stream.into_stats();
    let peak = PEAK.load(Ordering::Relaxed).saturating_sub(base);
    let balanced = stats.records_out + stats.row_errors == stats.rows_in;
    Ok((
        stats.rows_in == ROWS as u64
            && balanced
            && stats.row_errors == bad
            && seen == stats.records_out
            && peak < CEILING,
        format!(
            "rows_in={} records_out={} row_errors={} (injected {bad}) peak heap={:.2} MiB (< {} MiB, file {:.0} MiB)",
            stats.rows_in,
            stats.records_out,
            stats.row_errors,
            peak as f64 / (1 << 20) as f64,
            CEILING >> 20,
            size as f64 / (1 << 20) as f64
        ),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let (ok, detail) = o.unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += !ok as u32;
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };

    let d1 = dataset1(root);
    let on_d1 = |f: &dyn Fn(&Dataset1) -> Outcome| d1.as_ref().map_err(|e| e.clone()).and_then(f);
    report(1, "planted correlation recovery", on_d1(&c1_planted_r));
    report(2, "food-group ordering", on_d1(&c2_food_groups));
    report(3, "shuffle null", on_d1(&|d| c3_shuffle_null(root, d)));
    report(4, "quadratic model target", c4_quadratic(root));
    report(5, "statistical kernels vs oracles", c5_kernels());
    report(6, "index kernels", c6_indices());
    report(7, "home-location rule", on_d1(&c7_home));
    report(8, "rolling window", c8_rolling());
    report(9, "determinism across threads and reruns", c9_determinism(root));
    report(10, "streaming ingest", c10_streaming(root));

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
