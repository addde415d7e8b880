//! Checks pipeline outputs against the planted parameters in `truth.csv`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::correlation::{read_correlations, CorrelationEntry};
use crate::error::{Error, Result};
use crate::features::read_user_features;
use crate::table::{fmt_f64, SectorMatrix};

use super::ItemGroup;

/// Contents of `truth.csv`.
///
/// Rows are `kind,key,value` with kinds `param`, `sector_wealth`,
/// `sector_topup_sum_mean`, `sector_food_expenditure`, `item_group`,
/// `item_planted_r` and `user_home`.
#[derive(Debug, Clone, Default)]
pub struct Truth {
    pub params: BTreeMap<String, String>,
    pub sector_wealth: BTreeMap<String, f64>,
    pub sector_topup_mean: BTreeMap<String, f64>,
    pub sector_food: BTreeMap<String, f64>,
    pub item_group: BTreeMap<String, ItemGroup>,
    pub item_planted_r: BTreeMap<String, f64>,
    pub user_home: HashMap<String, String>,
}

impl Truth {
    pub fn read<R: Read>(r: R, file: &str) -> Result<Truth> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut t = Truth::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(file, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::format(file, "expected kind,key,value"));
            }
            let (kind, key, value) = (&rec[0], rec[1].to_string(), &rec[2]);
            let bad = format!("{kind} {key}: bad number {value:?}");
            let num = || -> Result<f64> { value.parse().map_err(|_| Error::format(file, bad.clone())) };
            match kind {
                "param" => {
                    t.params.insert(key, value.to_string());
                }
                "sector_wealth" => {
                    t.sector_wealth.insert(key, num()?);
                }
                "sector_topup_sum_mean" => {
                    t.sector_topup_mean.insert(key, num()?);
                }
                "sector_food_expenditure" => {
                    t.sector_food.insert(key, num()?);
                }
                "item_group" => {
                    let g = ItemGroup::parse(value)
                        .ok_or_else(|| Error::format(file, format!("unknown item group {value:?}")))?;
                    t.item_group.insert(key, g);
                }
                "item_planted_r" => {
                    t.item_planted_r.insert(key, num()?);
                }
                "user_home" => {
                    t.user_home.insert(key, value.to_string());
                }
                other => return Err(Error::format(file, format!("unknown truth kind {other:?}"))),
            }
        }
        Ok(t)
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key)?.parse().ok()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub home_accuracy: f64,
    pub r: f64,
    pub fit_r: f64,
    pub negative_item_r: f64,
    /// Largest allowed |observed - expected| in standard errors.
    pub sector_mean_z: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            home_accuracy: 0.95,
            r: 0.05,
            fit_r: 0.05,
            negative_item_r: -0.2,
            sector_mean_z: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["check", "value", "threshold", "pass"])?;
        for c in &self.checks {
            wtr.write_record([
                c.name.as_str(),
                &fmt_f64(c.value),
                &c.threshold,
                if c.pass { "1" } else { "0" },
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("verify_report.csv", e))?;
        Ok(())
    }

    fn push(&mut self, name: &str, value: f64, threshold: String, pass: bool) {
        self.checks.push(Check {
            name: name.to_string(),
            value,
            threshold,
            pass,
        });
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub const MOBILE_VAR: &str = "topup_sum.mean";
pub const TARGET_VAR: &str = "food_expenditure";

/// Reads `fit_r` from a model file written by [`crate::model::RegressionModel::write_csv`].
pub fn read_model_fit_r<R: Read>(r: R, file: &str) -> Result<f64> {
    let mut rdr = csv::Reader::from_reader(r);
    for rec in rdr.records() {
        let rec = rec?;
        if &rec[0] == "fit_r" {
            return rec[1].parse().map_err(|_| Error::format(file, "bad fit_r"));
        }
    }
    Err(Error::format(file, "no fit_r row"))
}

/// Runs every check that applies to the truth's link type. `out` must hold
/// `user_features.csv`, `sector_mobile.csv` and `correlations.csv`, plus
/// `model_food_expenditure.csv` for a quadratic link.
pub fn verify(truth: &Truth, out: &Path, tol: &Tolerances) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();

    let uf_path = out.join("user_features.csv");
    let users = read_user_features(open(&uf_path)?, "user_features.csv")?;
    let inferred: HashMap<&str, &str> = users
        .iter()
        .map(|u| (u.user_id.as_str(), u.home_sector.as_str()))
        .collect();
    let hits = truth
        .user_home
        .iter()
        .filter(|(u, s)| inferred.get(u.as_str()) == Some(&s.as_str()))
        .count();
    let acc = if truth.user_home.is_empty() {
        0.0
    } else {
        hits as f64 / truth.user_home.len() as f64
    };
    report.push(
        "home_accuracy",
        acc,
        format!(">= {}", tol.home_accuracy),
        acc >= tol.home_accuracy,
    );

    let corr = read_correlations(open(&out.join("correlations.csv"))?, "correlations.csv")?;
    let r_of = |survey: &str| -> Option<f64> {
        corr.iter()
            .find(|e: &&CorrelationEntry| e.mobile_var == MOBILE_VAR && e.survey_var == survey)
            .and_then(|e| e.r)
    };

    match truth.params.get("link").map(String::as_str) {
        Some("linear") => {
            let planted = truth
                .param_f64("planted_r")
                .ok_or_else(|| Error::format("truth.csv", "missing planted_r"))?;
            let r = r_of(TARGET_VAR).unwrap_or(f64::NAN);
            report.push(
                "planted_r",
                r,
                format!("{} +- {}", fmt_f64(planted), tol.r),
                (r - planted).abs() <= tol.r,
            );
        }
        Some("quadratic") => {
            let target = truth
                .param_f64("target_fit_r")
                .ok_or_else(|| Error::format("truth.csv", "missing target_fit_r"))?;
            let path = out.join(format!("model_{TARGET_VAR}.csv"));
            let fit_r = read_model_fit_r(open(&path)?, "model.csv")?;
            report.push(
                "fit_r",
                fit_r,
                format!("{} +- {}", fmt_f64(target), tol.fit_r),
                (fit_r - target).abs() <= tol.fit_r,
            );
        }
        other => return Err(Error::format("truth.csv", format!("unknown link {other:?}"))),
    }

    if !truth.item_group.is_empty() {
        let items: Vec<(ItemGroup, f64)> = truth
            .item_group
            .iter()
            .map(|(name, g)| (*g, r_of(name).unwrap_or(f64::NAN)))
            .collect();
        let mut inversions = 0usize;
        for a in &items {
            for b in &items {
                if a.0 > b.0 && !(a.1 > b.1) {
                    inversions += 1;
                }
            }
        }
        report.push(
            "food_group_inversions",
            inversions as f64,
            "== 0".into(),
            inversions == 0,
        );
        let neg: Vec<f64> = items
            .iter()
            .filter(|(g, _)| *g == ItemGroup::Negative)
            .map(|(_, r)| *r)
            .collect();
        if !neg.is_empty() {
            let worst = if neg.iter().any(|r| r.is_nan()) {
                f64::NAN
            } else {
                neg.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            report.push(
                "negative_item_r",
                worst,
                format!("< {}", tol.negative_item_r),
                worst < tol.negative_item_r,
            );
        }
    }

    let mobile = SectorMatrix::read_csv(open(&out.join("sector_mobile.csv"))?, "sector_mobile.csv")?;
    let col = mobile
        .column_index(MOBILE_VAR)
        .ok_or_else(|| Error::format("sector_mobile.csv", format!("no {MOBILE_VAR} column")))?;
    let cv = truth.param_f64("user_topup_cv").unwrap_or(0.0);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for (i, sector) in mobile.sectors.iter().enumerate() {
        let (Some(expected), Some(observed)) = (truth.sector_topup_mean.get(sector), mobile.cells[i][col]) else {
            continue;
        };
        let se = (expected * cv / (mobile.counts[i] as f64).sqrt()).max(0.002);
        worst = worst.max((observed - expected).abs() / se);
        compared += 1;
    }
    if compared == 0 {
        worst = f64::INFINITY;
    }
    report.push(
        "sector_topup_mean_max_z",
        worst,
        format!("<= {}", tol.sector_mean_z),
        worst <= tol.sector_mean_z,
    );
    Ok(report)
}
