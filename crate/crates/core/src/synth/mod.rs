//! Seeded synthetic dataset with planted sector-level relationships.
//!
//! Every sector gets a latent wealth `w` (standardized in-sample). Top-up
//! spending, survey food expenditure, food-item frequencies, coping behaviour
//! and poverty all hang off `w`. Sector-level residuals are orthogonalized
//! against the planted basis so the in-sample latent correlations equal the
//! planted values exactly; the remaining gap to the pipeline output comes from
//! user and household sampling noise.
//!
//! Files written: `cdr.csv`, `topup.csv`, `towers.csv`, `survey.csv`,
//! `survey_meta.csv`, `poverty.csv`, `csi_weights.csv` and `truth.csv`
//! (`kind,key,value`, see [`verify::Truth`]).

pub mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal, Poisson};
use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    write_record_rows, CallRecord, Category, CsvRecord, Household, SurveyColumn, SurveyTable, TopUpRecord,
};
use crate::table::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WealthDist {
    Normal,
    Uniform,
}

/// Generator settings. Every field has a default; a TOML file overrides any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sectors: usize,
    pub towers_per_sector: usize,
    pub users_per_sector: usize,
    pub households_per_sector: usize,
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
    pub wealth: WealthDist,

    /// Probability that a night call is placed at the user's home tower.
    pub p_home: f64,
    pub night_calls_min: u32,
    pub night_calls_extra_mean: f64,
    pub day_calls_mean: f64,
    /// Probability that a day call is placed at the user's work tower.
    pub p_work: f64,
    pub contacts_mean: f64,
    /// Contact `j` (0-based) is called with weight `(j + 1)^-contact_skew`.
    pub contact_skew: f64,

    /// Expected per-user top-up sum is `topup_base + topup_slope * w`.
    pub topup_base: f64,
    pub topup_slope: f64,
    /// Coefficient of variation of the per-user multiplier.
    pub user_topup_cv: f64,
    /// Per-sector mean top-up count is drawn uniformly from this range.
    pub topups_per_user_min: f64,
    pub topups_per_user_max: f64,

    pub link: Link,
    /// Target correlation between sector `topup_sum.mean` and `food_expenditure` (linear link).
    pub planted_r: f64,
    /// Target multiple correlation of the degree-2 fit (quadratic link).
    pub target_fit_r: f64,
    /// `q(w) = w + curvature * (w^2 - 1)` for the quadratic link.
    pub curvature: f64,
    pub food_base: f64,
    pub food_scale: f64,
    pub household_sd: f64,
    pub item_scale: f64,
    pub item_household_sd: f64,

    /// Multiplies every noise term. 0 gives a deterministic link.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_sectors: 200,
            towers_per_sector: 4,
            users_per_sector: 500,
            households_per_sector: 20,
            start: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2012, 7, 1).unwrap(),
            wealth: WealthDist::Normal,
            p_home: 0.8,
            night_calls_min: 20,
            night_calls_extra_mean: 4.0,
            day_calls_mean: 8.0,
            p_work: 0.7,
            contacts_mean: 5.0,
            contact_skew: 1.0,
            topup_base: 3000.0,
            topup_slope: 600.0,
            user_topup_cv: 0.5,
            topups_per_user_min: 4.0,
            topups_per_user_max: 12.0,
            link: Link::Linear,
            planted_r: 0.8,
            target_fit_r: 0.89,
            curvature: 0.5,
            food_base: 50000.0,
            food_scale: 10000.0,
            household_sd: 8000.0,
            item_scale: 1.0,
            item_household_sd: 1.0,
            noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sectors < 3 {
            return bad("n_sectors must be at least 3".into());
        }
        if self.users_per_sector == 0 || self.households_per_sector == 0 || self.towers_per_sector == 0 {
            return bad("users_per_sector, households_per_sector and towers_per_sector must be positive".into());
        }
        if self.end <= self.start + Duration::days(1) {
            return bad("synth period must span more than one day".into());
        }
        if !(0.0..=1.0).contains(&self.p_home) || !(0.0..=1.0).contains(&self.p_work) {
            return bad("p_home and p_work must lie in [0, 1]".into());
        }
        if !(self.planted_r > -1.0 && self.planted_r < 1.0) {
            return bad(format!("planted_r must lie in (-1, 1), got {}", self.planted_r));
        }
        if !(self.target_fit_r > 0.0 && self.target_fit_r < 1.0) {
            return bad(format!("target_fit_r must lie in (0, 1), got {}", self.target_fit_r));
        }
        if !(self.topups_per_user_min >= 1.0 && self.topups_per_user_max >= self.topups_per_user_min) {
            return bad("need 1 <= topups_per_user_min <= topups_per_user_max".into());
        }
        if self.contacts_mean < 1.0 || self.topup_base <= 0.0 || self.noise < 0.0 || self.user_topup_cv < 0.0 {
            return bad("contacts_mean >= 1, topup_base > 0, noise >= 0 and user_topup_cv >= 0 required".into());
        }
        if self.n_sectors * self.towers_per_sector < 2 {
            return bad("need at least two towers".into());
        }
        self.latent_correlation()?;
        Ok(())
    }

    /// Share of the between-sector variance of `topup_sum.mean` that is signal.
    pub fn topup_reliability(&self) -> f64 {
        let cv = self.user_topup_cv * self.noise;
        let signal = self.topup_slope * self.topup_slope;
        let noise = (self.topup_base.powi(2) + signal) * cv * cv / self.users_per_sector as f64;
        if signal + noise == 0.0 {
            1.0
        } else {
            signal / (signal + noise)
        }
    }

    /// Latent correlation planted against `w` so that the sector-mean level
    /// reaches the target after attenuation by user sampling noise.
    pub fn latent_correlation(&self) -> Result<f64> {
        if self.noise == 0.0 {
            return Ok(1.0);
        }
        let target = match self.link {
            Link::Linear => self.planted_r,
            Link::Quadratic => self.target_fit_r,
        };
        let rho = target / self.topup_reliability().sqrt();
        if rho.abs() >= 1.0 {
            return Err(Error::Config(format!(
                "planted correlation {target} is unreachable with this much top-up noise (needs latent {rho:.3})"
            )));
        }
        Ok(rho)
    }
}

/// Correlation group of a planted food item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ItemGroup {
    Negative,
    Low,
    Middle,
    High,
}

impl ItemGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            ItemGroup::High => "high",
            ItemGroup::Middle => "middle",
            ItemGroup::Low => "low",
            ItemGroup::Negative => "negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(ItemGroup::High),
            "middle" => Some(ItemGroup::Middle),
            "low" => Some(ItemGroup::Low),
            "negative" => Some(ItemGroup::Negative),
            _ => None,
        }
    }
}

/// 7-day frequency items with their planted correlation to sector wealth.
pub const FOOD_ITEMS: [(&str, ItemGroup, f64); 21] = [
    ("orange_vegetables", ItemGroup::High, 0.82),
    ("cereals", ItemGroup::High, 0.76),
    ("bread", ItemGroup::High, 0.76),
    ("sweets", ItemGroup::High, 0.70),
    ("flesh_meat", ItemGroup::High, 0.69),
    ("eggs", ItemGroup::Middle, 0.59),
    ("orange_fruit", ItemGroup::Middle, 0.57),
    ("fats", ItemGroup::Middle, 0.54),
    ("dairy", ItemGroup::Middle, 0.50),
    ("organ_meat", ItemGroup::Middle, 0.48),
    ("fish", ItemGroup::Low, 0.10),
    ("fresh_fruit", ItemGroup::Low, 0.09),
    ("cooking_banana", ItemGroup::Low, 0.07),
    ("leafy_greens", ItemGroup::Low, 0.06),
    ("beans", ItemGroup::Low, 0.03),
    ("spices", ItemGroup::Low, 0.02),
    ("maize", ItemGroup::Low, 0.01),
    ("white_roots", ItemGroup::Low, 0.01),
    ("pumpkin", ItemGroup::Low, 0.0),
    ("cassava", ItemGroup::Low, -0.01),
    ("white_sweet_potato", ItemGroup::Negative, -0.41),
];

/// FCS food groups with baseline days per week.
const FCS_GROUPS: [(&str, f64); 9] = [
    ("staples", 6.0),
    ("pulses", 3.0),
    ("vegetables", 4.0),
    ("fruit", 2.0),
    ("meat_fish", 2.0),
    ("milk", 2.0),
    ("sugar", 4.0),
    ("oil", 4.0),
    ("condiments", 5.0),
];

/// Coping strategies and severity weights.
pub const COPING_STRATEGIES: [(&str, f64); 5] = [
    ("less_preferred_food", 1.0),
    ("borrow_food", 2.0),
    ("limit_portions", 1.0),
    ("restrict_adults", 3.0),
    ("reduce_meals", 1.0),
];

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Identifier scheme, zero-padded so lexical order matches generation order.
#[derive(Debug, Clone, Copy)]
pub struct Ids {
    sw: usize,
    tw: usize,
    uw: usize,
    hw: usize,
}

impl Ids {
    pub fn new(cfg: &SynthConfig) -> Self {
        Ids {
            sw: digits(cfg.n_sectors),
            tw: digits(cfg.towers_per_sector),
            uw: digits(cfg.users_per_sector),
            hw: digits(cfg.households_per_sector),
        }
    }

    pub fn sector(&self, s: usize) -> String {
        format!("s{:0w$}", s, w = self.sw)
    }

    pub fn tower(&self, s: usize, k: usize) -> String {
        format!("t{:0w$}_{:0v$}", s, k, w = self.sw, v = self.tw)
    }

    pub fn user(&self, s: usize, u: usize) -> String {
        format!("u{:0w$}_{:0v$}", s, u, w = self.sw, v = self.uw)
    }

    pub fn household(&self, s: usize, h: usize) -> String {
        format!("h{:0w$}_{:0v$}", s, h, w = self.sw, v = self.hw)
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - m) / sd } else { 0.0 };
    }
}

/// Removes from `e` its projection on span(1, basis...), then standardizes.
fn residualize(mut e: Vec<f64>, basis: &[&[f64]]) -> Vec<f64> {
    let n = e.len();
    let mut ortho: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for b in basis {
        let mut v = b.to_vec();
        for q in &ortho {
            project_out(&mut v, q);
        }
        ortho.push(v);
    }
    for q in &ortho {
        project_out(&mut e, q);
    }
    standardize(&mut e);
    e
}

fn project_out(v: &mut [f64], q: &[f64]) {
    let qq: f64 = q.iter().map(|x| x * x).sum();
    if qq == 0.0 {
        return;
    }
    let c = v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / qq;
    for (a, b) in v.iter_mut().zip(q) {
        *a -= c * b;
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sector-level draws, shared by all per-sector workers.
#[derive(Debug, Clone)]
pub struct SectorLatents {
    pub wealth: Vec<f64>,
    /// Expected per-user top-up sum.
    pub topup_mu: Vec<f64>,
    pub topups_per_user: Vec<f64>,
    pub food: Vec<f64>,
    /// `items[i][s]`: sector mean frequency of item `i`.
    pub items: Vec<Vec<f64>>,
    pub fcs: Vec<Vec<f64>>,
    pub coping: Vec<Vec<f64>>,
    pub headcount: Vec<f64>,
    pub intensity: Vec<f64>,
    pub nonfood: Vec<f64>,
    pub household_size: Vec<f64>,
    /// Correlation of the food latent with its planted basis.
    pub latent_r: f64,
}

const GLOBAL_STREAM: u64 = u64::MAX;

pub fn sector_latents(cfg: &SynthConfig) -> Result<SectorLatents> {
    cfg.validate()?;
    let n = cfg.n_sectors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(GLOBAL_STREAM);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };

    let mut w: Vec<f64> = match cfg.wealth {
        WealthDist::Normal => draw(&mut rng),
        WealthDist::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
    };
    standardize(&mut w);

    let floor = 0.1 * cfg.topup_base;
    let topup_mu: Vec<f64> = w
        .iter()
        .map(|x| (cfg.topup_base + cfg.topup_slope * x).max(floor))
        .collect();
    let topups_per_user = (0..n)
        .map(|_| rng.random_range(cfg.topups_per_user_min..=cfg.topups_per_user_max))
        .collect();

    let rho = cfg.latent_correlation()?;
    let w2: Vec<f64> = w.iter().map(|x| x * x).collect();
    let z_food: Vec<f64> = match cfg.link {
        Link::Linear => {
            let e = residualize(draw(&mut rng), &[&w]);
            mix(&w, &e, rho)
        }
        Link::Quadratic => {
            let mut q: Vec<f64> = w.iter().map(|x| x + cfg.curvature * (x * x - 1.0)).collect();
            standardize(&mut q);
            let e = residualize(draw(&mut rng), &[&w, &w2]);
            mix(&q, &e, rho)
        }
    };
    let food = z_food.iter().map(|z| cfg.food_base + cfg.food_scale * z).collect();

    let items = FOOD_ITEMS
        .iter()
        .map(|&(_, _, r)| {
            let e = residualize(draw(&mut rng), &[&w]);
            mix(&w, &e, r)
                .into_iter()
                .map(|z| (3.5 + cfg.item_scale * z).clamp(0.0, 7.0))
                .collect()
        })
        .collect();
    let fcs = FCS_GROUPS
        .iter()
        .map(|&(_, base)| {
            let e = draw(&mut rng);
            w.iter()
                .zip(e)
                .map(|(x, e)| (base + 0.6 * x + 0.8 * e).clamp(0.0, 7.0))
                .collect()
        })
        .collect();
    let coping = COPING_STRATEGIES
        .iter()
        .map(|_| {
            let e = draw(&mut rng);
            w.iter()
                .zip(e)
                .map(|(x, e)| (1.5 - 0.8 * x + 0.6 * e).clamp(0.0, 7.0))
                .collect()
        })
        .collect();
    let eh = draw(&mut rng);
    let headcount = w
        .iter()
        .zip(&eh)
        .map(|(x, e)| logistic(-0.3 - 1.2 * x + 0.3 * e))
        .collect();
    let intensity = w.iter().map(|x| 0.33 + 0.3 * logistic(-0.8 * x)).collect();
    let en = draw(&mut rng);
    let nonfood = w
        .iter()
        .zip(&en)
        .map(|(x, e)| 0.8 * cfg.food_base * (0.3 * x + 0.2 * e).exp())
        .collect();
    let household_size = w.iter().map(|x| (5.0 - 0.6 * x).max(1.5)).collect();

    Ok(SectorLatents {
        wealth: w,
        topup_mu,
        topups_per_user,
        food,
        items,
        fcs,
        coping,
        headcount,
        intensity,
        nonfood,
        household_size,
        latent_r: rho,
    })
}

fn mix(signal: &[f64], e: &[f64], r: f64) -> Vec<f64> {
    let c = (1.0 - r * r).max(0.0).sqrt();
    signal.iter().zip(e).map(|(s, e)| r * s + c * e).collect()
}

fn poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).unwrap().sample(rng) as u64
}

/// Stochastic rounding to an integer number of days, clamped to [0, 7].
fn days(rng: &mut impl Rng, x: f64, noisy: bool) -> f64 {
    let u = if noisy { rng.random::<f64>() } else { 0.5 };
    (x + u).floor().clamp(0.0, 7.0)
}

struct SectorOutput {
    cdr: Vec<u8>,
    topup: Vec<u8>,
    households: Vec<Household>,
}

fn generate_sector(cfg: &SynthConfig, lat: &SectorLatents, ids: &Ids, s: usize) -> Result<SectorOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(s as u64);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n_towers = cfg.n_sectors * cfg.towers_per_sector;
    let start: DateTime<Utc> = cfg.start.and_hms_opt(0, 0, 0).unwrap().and_utc();
    let n_days = (cfg.end - cfg.start).num_days();
    let period_secs = n_days * 86_400;
    let cv = cfg.user_topup_cv * cfg.noise;
    let multiplier = (cv > 0.0).then(|| Gamma::new(1.0 / (cv * cv), cv * cv).unwrap());
    let tower_of = |t: usize| ids.tower(t / cfg.towers_per_sector, t % cfg.towers_per_sector);

    let mut calls: Vec<CallRecord> = Vec::new();
    let mut topups: Vec<TopUpRecord> = Vec::new();
    let mut cdr = Vec::new();
    let mut topup = Vec::new();
    for u in 0..cfg.users_per_sector {
        let user = ids.user(s, u);
        let home = s * cfg.towers_per_sector + rng.random_range(0..cfg.towers_per_sector);
        let work = loop {
            let t = rng.random_range(0..n_towers);
            if t / cfg.towers_per_sector != s || cfg.n_sectors == 1 {
                break t;
            }
        };

        let n_contacts = 1 + poisson(&mut rng, cfg.contacts_mean - 1.0) as usize;
        let contacts: Vec<String> = (0..n_contacts)
            .map(|_| loop {
                let cs = rng.random_range(0..cfg.n_sectors);
                let cu = rng.random_range(0..cfg.users_per_sector);
                if (cs, cu) != (s, u) || cfg.n_sectors * cfg.users_per_sector == 1 {
                    break ids.user(cs, cu);
                }
            })
            .collect();
        let contact_pick =
            WeightedIndex::new((0..n_contacts).map(|j| ((j + 1) as f64).powf(-cfg.contact_skew))).unwrap();

        calls.clear();
        let n_night = cfg.night_calls_min as u64 + poisson(&mut rng, cfg.night_calls_extra_mean);
        for _ in 0..n_night {
            let tower = if rng.random::<f64>() < cfg.p_home {
                home
            } else {
                let t = rng.random_range(0..n_towers - 1);
                if t >= home {
                    t + 1
                } else {
                    t
                }
            };
            let day = rng.random_range(0..n_days - 1);
            let secs = day * 86_400 + 18 * 3600 + rng.random_range(0..14 * 3600);
            calls.push(CallRecord {
                caller_id: user.clone(),
                callee_id: contacts[contact_pick.sample(&mut rng)].clone(),
                tower_id: tower_of(tower),
                timestamp: start + Duration::seconds(secs),
            });
        }
        for _ in 0..poisson(&mut rng, cfg.day_calls_mean) {
            let tower = if rng.random::<f64>() < cfg.p_work {
                work
            } else {
                rng.random_range(0..n_towers)
            };
            let day = rng.random_range(0..n_days);
            let secs = day * 86_400 + 8 * 3600 + rng.random_range(0..10 * 3600);
            calls.push(CallRecord {
                caller_id: user.clone(),
                callee_id: contacts[contact_pick.sample(&mut rng)].clone(),
                tower_id: tower_of(tower),
                timestamp: start + Duration::seconds(secs),
            });
        }
        calls.sort_by_key(|c| c.timestamp);
        write_record_rows(&mut cdr, calls.iter())?;

        let k = 1 + poisson(&mut rng, lat.topups_per_user[s] - 1.0) as usize;
        let m = multiplier.map_or(1.0, |g| g.sample(&mut rng));
        let total_cents = ((lat.topup_mu[s] * m * 100.0).round() as i64).max(100 * k as i64);
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let wsum: f64 = weights.iter().sum();
        let mut times: Vec<i64> = (0..k).map(|_| rng.random_range(0..period_secs)).collect();
        times.sort_unstable();
        topups.clear();
        let mut left = total_cents;
        for (j, (wj, t)) in weights.iter().zip(&times).enumerate() {
            let cents = if j + 1 == k {
                left
            } else {
                ((total_cents as f64 * wj / wsum).round() as i64).max(1)
            };
            left -= cents;
            if cents <= 0 {
                return Err(Error::Internal(format!("non-positive top-up generated for {user}")));
            }
            topups.push(TopUpRecord {
                user_id: user.clone(),
                amount: Decimal::new(cents, 2),
                timestamp: start + Duration::seconds(*t),
            });
        }
        write_record_rows(&mut topup, topups.iter())?;
    }

    let noisy = cfg.noise > 0.0;
    let hh = cfg.households_per_sector;
    let mut food_dev: Vec<f64> = (0..hh)
        .map(|_| normal.sample(&mut rng) * cfg.household_sd * cfg.noise)
        .collect();
    let dev_mean = food_dev.iter().sum::<f64>() / hh as f64;
    food_dev.iter_mut().for_each(|d| *d -= dev_mean);
    let round2 = |x: f64| (x * 100.0).round() / 100.0;

    let mut households = Vec::with_capacity(hh);
    for (h, dev) in food_dev.iter().enumerate() {
        let mut values = Vec::with_capacity(n_survey_columns());
        let size = 1.0 + poisson(&mut rng, lat.household_size[s] - 1.0) as f64;
        values.push(Some(size));
        values.push(Some(
            1.0 + poisson(&mut rng, 1.0 + 0.4 * lat.wealth[s].max(-2.0)) as f64,
        ));
        let food = round2((lat.food[s] + dev).max(0.0));
        let nonfood = round2(lat.nonfood[s] * (0.25 * cfg.noise * normal.sample(&mut rng)).exp());
        values.push(Some(food));
        values.push(Some(round2(food + nonfood)));
        values.push(Some(round2(
            0.05 * lat.topup_mu[s] * (0.3 * cfg.noise * normal.sample(&mut rng)).exp(),
        )));
        for item in &lat.items {
            let x = item[s] + cfg.item_household_sd * cfg.noise * normal.sample(&mut rng);
            values.push(Some(days(&mut rng, x, noisy)));
        }
        for g in &lat.fcs {
            let x = g[s] + cfg.noise * normal.sample(&mut rng);
            values.push(Some(days(&mut rng, x, noisy)));
        }
        for c in &lat.coping {
            let x = c[s] + cfg.noise * normal.sample(&mut rng);
            values.push(Some(days(&mut rng, x, noisy)));
        }
        households.push(Household {
            household_id: ids.household(s, h),
            sector_id: ids.sector(s),
            values,
        });
    }
    Ok(SectorOutput { cdr, topup, households })
}

/// Survey columns in file order.
pub fn survey_columns() -> Vec<SurveyColumn> {
    let col = |name: &str, category| SurveyColumn {
        name: name.to_string(),
        category,
    };
    let mut cols = vec![
        col("household_size", Category::Household),
        col("rooms", Category::Household),
        col("food_expenditure", Category::Wealth),
        col("total_expenditure", Category::Wealth),
        col("communication_expenditure", Category::Wealth),
    ];
    cols.extend(FOOD_ITEMS.iter().map(|(n, _, _)| col(n, Category::Food)));
    cols.extend(FCS_GROUPS.iter().map(|(n, _)| col(n, Category::FoodGroup)));
    cols.extend(COPING_STRATEGIES.iter().map(|(n, _)| col(n, Category::Coping)));
    cols
}

fn n_survey_columns() -> usize {
    5 + FOOD_ITEMS.len() + FCS_GROUPS.len() + COPING_STRATEGIES.len()
}

/// Paths of the generated files.
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub cdr: PathBuf,
    pub topup: PathBuf,
    pub towers: PathBuf,
    pub survey: PathBuf,
    pub survey_meta: PathBuf,
    pub poverty: PathBuf,
    pub csi_weights: PathBuf,
    pub truth: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            cdr: dir.join("cdr.csv"),
            topup: dir.join("topup.csv"),
            towers: dir.join("towers.csv"),
            survey: dir.join("survey.csv"),
            survey_meta: dir.join("survey_meta.csv"),
            poverty: dir.join("poverty.csv"),
            csi_weights: dir.join("csi_weights.csv"),
            truth: dir.join("truth.csv"),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        vec![
            &self.cdr,
            &self.topup,
            &self.towers,
            &self.survey,
            &self.survey_meta,
            &self.poverty,
            &self.csi_weights,
            &self.truth,
        ]
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sectors generated per parallel batch; bounds memory on large configs.
const BATCH: usize = 32;

/// Writes the dataset into `dir` (created if needed).
pub fn generate(cfg: &SynthConfig, dir: &Path) -> Result<SynthFiles> {
    let lat = sector_latents(cfg)?;
    let ids = Ids::new(cfg);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);

    let mut cdr = create(&files.cdr)?;
    let mut topup = create(&files.topup)?;
    let io_cdr = |e| Error::io(&files.cdr, e);
    writeln!(cdr, "{}", CallRecord::HEADER.join(",")).map_err(io_cdr)?;
    writeln!(topup, "{}", TopUpRecord::HEADER.join(",")).map_err(|e| Error::io(&files.topup, e))?;
    let mut survey = SurveyTable {
        columns: survey_columns(),
        rows: Vec::with_capacity(cfg.n_sectors * cfg.households_per_sector),
    };
    let sectors: Vec<usize> = (0..cfg.n_sectors).collect();
    for batch in sectors.chunks(BATCH) {
        let out: Vec<SectorOutput> = batch
            .par_iter()
            .map(|&s| generate_sector(cfg, &lat, &ids, s))
            .collect::<Result<_>>()?;
        for o in out {
            cdr.write_all(&o.cdr).map_err(io_cdr)?;
            topup.write_all(&o.topup).map_err(|e| Error::io(&files.topup, e))?;
            survey.rows.extend(o.households);
        }
    }
    finish(cdr, &files.cdr)?;
    finish(topup, &files.topup)?;

    let mut towers = csv::Writer::from_writer(create(&files.towers)?);
    towers.write_record(["tower_id", "sector_id"])?;
    for s in 0..cfg.n_sectors {
        for k in 0..cfg.towers_per_sector {
            towers.write_record([ids.tower(s, k), ids.sector(s)])?;
        }
    }
    towers.flush().map_err(|e| Error::io(&files.towers, e))?;

    survey.write_csv(create(&files.survey)?, create(&files.survey_meta)?)?;

    let mut pov = csv::Writer::from_writer(create(&files.poverty)?);
    pov.write_record(["sector_id", "headcount", "intensity"])?;
    for s in 0..cfg.n_sectors {
        pov.write_record([ids.sector(s), fmt_f64(lat.headcount[s]), fmt_f64(lat.intensity[s])])?;
    }
    pov.flush().map_err(|e| Error::io(&files.poverty, e))?;

    let mut csi = csv::Writer::from_writer(create(&files.csi_weights)?);
    csi.write_record(["strategy", "weight"])?;
    for (name, w) in COPING_STRATEGIES {
        csi.write_record([name.to_string(), fmt_f64(w)])?;
    }
    csi.flush().map_err(|e| Error::io(&files.csi_weights, e))?;

    write_truth(cfg, &lat, &ids, &files.truth)?;
    log::info!(
        "synth: {} sectors x {} users written to {}",
        cfg.n_sectors,
        cfg.users_per_sector,
        dir.display()
    );
    Ok(files)
}

fn write_truth(cfg: &SynthConfig, lat: &SectorLatents, ids: &Ids, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["kind", "key", "value"])?;
    let mut param = |k: &str, v: String| w.write_record(["param", k, &v]);
    let link = match cfg.link {
        Link::Linear => "linear",
        Link::Quadratic => "quadratic",
    };
    param("seed", cfg.seed.to_string())?;
    param("n_sectors", cfg.n_sectors.to_string())?;
    param("users_per_sector", cfg.users_per_sector.to_string())?;
    param("households_per_sector", cfg.households_per_sector.to_string())?;
    param("p_home", fmt_f64(cfg.p_home))?;
    param("link", link.to_string())?;
    param("noise", fmt_f64(cfg.noise))?;
    param("topup_base", fmt_f64(cfg.topup_base))?;
    param("topup_slope", fmt_f64(cfg.topup_slope))?;
    param("user_topup_cv", fmt_f64(cfg.user_topup_cv * cfg.noise))?;
    param("latent_r", fmt_f64(lat.latent_r))?;
    let planted = if cfg.noise == 0.0 { 1.0 } else { cfg.planted_r };
    match cfg.link {
        Link::Linear => param("planted_r", fmt_f64(planted))?,
        Link::Quadratic => {
            param("curvature", fmt_f64(cfg.curvature))?;
            param(
                "target_fit_r",
                fmt_f64(if cfg.noise == 0.0 { 1.0 } else { cfg.target_fit_r }),
            )?
        }
    }
    param("food_base", fmt_f64(cfg.food_base))?;
    param("food_scale", fmt_f64(cfg.food_scale))?;
    for s in 0..cfg.n_sectors {
        let id = ids.sector(s);
        w.write_record(["sector_wealth", &id, &fmt_f64(lat.wealth[s])])?;
        w.write_record(["sector_topup_sum_mean", &id, &fmt_f64(lat.topup_mu[s])])?;
        w.write_record(["sector_food_expenditure", &id, &fmt_f64(lat.food[s])])?;
    }
    for (name, group, r) in FOOD_ITEMS {
        w.write_record(["item_group", name, group.as_str()])?;
        w.write_record(["item_planted_r", name, &fmt_f64(r)])?;
    }
    for s in 0..cfg.n_sectors {
        let sector = ids.sector(s);
        for u in 0..cfg.users_per_sector {
            w.write_record(["user_home", &ids.user(s, u), &sector])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Test hook: moves every tower to the next sector (cyclically), which corrupts
/// every home assignment while keeping the map total.
pub fn rotate_tower_sectors(map: &crate::ingest::TowerSectorMap) -> Result<crate::ingest::TowerSectorMap> {
    let sectors: Vec<&str> = map.sectors().into_iter().collect();
    let next = |s: &str| {
        let i = sectors.binary_search(&s).unwrap_or(0);
        sectors[(i + 1) % sectors.len()].to_string()
    };
    crate::ingest::TowerSectorMap::from_pairs(map.iter().map(|(t, s)| (t.to_string(), next(s))))
}
