//! Household composite indices (FCS, CSI), poverty indices (H, A, MPI) and
//! sector means of survey variables.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::Error;
use crate::ingest::{Category, SurveyTable};
use crate::table::{Cell, SectorMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("frequency {value} for {name} outside 0..=7")]
    FrequencyOutOfRange { name: String, value: f64 },
    #[error("{name} has no weight")]
    MissingWeight { name: String },
    #[error("negative frequency {value} for {name}")]
    NegativeFrequency { name: String, value: f64 },
    #[error("{name} = {value} outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FcsClass {
    Poor,
    Borderline,
    Acceptable,
}

impl FcsClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FcsClass::Poor => "poor",
            FcsClass::Borderline => "borderline",
            FcsClass::Acceptable => "acceptable",
        }
    }
}

/// Food-group weights and classification thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoodGroupWeights {
    pub weights: BTreeMap<String, f64>,
    pub poor_max: f64,
    pub borderline_max: f64,
}

impl Default for FoodGroupWeights {
    /// WFP standard weights with the 21/35 thresholds.
    fn default() -> Self {
        let weights = [
            ("staples", 2.0),
            ("pulses", 3.0),
            ("vegetables", 1.0),
            ("fruit", 1.0),
            ("meat_fish", 4.0),
            ("milk", 4.0),
            ("sugar", 0.5),
            ("oil", 0.5),
            ("condiments", 0.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        FoodGroupWeights {
            weights,
            poor_max: 21.0,
            borderline_max: 35.0,
        }
    }
}

impl FoodGroupWeights {
    pub fn with_thresholds(mut self, poor_max: f64, borderline_max: f64) -> Result<Self, Error> {
        if !(poor_max < borderline_max) {
            return Err(Error::Config(format!(
                "FCS thresholds must satisfy poor_max < borderline_max, got {poor_max}/{borderline_max}"
            )));
        }
        self.poor_max = poor_max;
        self.borderline_max = borderline_max;
        Ok(self)
    }

    /// Reads `food_group,weight` rows, keeping the default thresholds.
    pub fn from_csv<R: Read>(r: R, file: &str) -> Result<Self, Error> {
        let weights = read_weight_table(r, file, "food_group")?;
        Ok(FoodGroupWeights {
            weights,
            ..FoodGroupWeights::default()
        })
    }
}

/// Severity weights per coping strategy. Always supplied as data.
#[derive(Debug, Clone, PartialEq)]
pub struct CopingStrategyWeights {
    pub weights: BTreeMap<String, f64>,
}

impl CopingStrategyWeights {
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self, Error> {
        if weights.is_empty() {
            return Err(Error::Config("coping strategy weights are empty".into()));
        }
        Ok(CopingStrategyWeights { weights })
    }

    pub fn from_csv<R: Read>(r: R, file: &str) -> Result<Self, Error> {
        Self::new(read_weight_table(r, file, "strategy")?)
    }
}

fn read_weight_table<R: Read>(r: R, file: &str, key: &str) -> Result<BTreeMap<String, f64>, Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != [key, "weight"] {
        return Err(Error::format(file, format!("expected header {key},weight")));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let w: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(file, format!("bad weight for {}", &rec[0])))?;
        if !(w >= 0.0) {
            return Err(Error::format(file, format!("negative weight for {}", &rec[0])));
        }
        if out.insert(rec[0].trim().to_string(), w).is_some() {
            return Err(Error::format(file, format!("{} listed twice", &rec[0])));
        }
    }
    Ok(out)
}

/// `Σ weight × frequency` over the weighted groups. Groups absent from
/// `frequencies` count as 0; a group without a weight is an error.
pub fn food_consumption_score(
    frequencies: &BTreeMap<String, u8>,
    weights: &FoodGroupWeights,
) -> Result<f64, IndexError> {
    let mut score = 0.0;
    for (g, &f) in frequencies {
        let w = weights
            .weights
            .get(g)
            .ok_or_else(|| IndexError::MissingWeight { name: g.clone() })?;
        if f > 7 {
            return Err(IndexError::FrequencyOutOfRange {
                name: g.clone(),
                value: f as f64,
            });
        }
        score += w * f as f64;
    }
    Ok(score)
}

/// Upper bounds are inclusive: a score equal to `poor_max` is poor.
pub fn classify_fcs(score: f64, weights: &FoodGroupWeights) -> FcsClass {
    if score <= weights.poor_max {
        FcsClass::Poor
    } else if score <= weights.borderline_max {
        FcsClass::Borderline
    } else {
        FcsClass::Acceptable
    }
}

pub fn coping_strategy_index(
    frequencies: &BTreeMap<String, f64>,
    weights: &CopingStrategyWeights,
) -> Result<f64, IndexError> {
    let mut total = 0.0;
    for (s, &f) in frequencies {
        let w = weights
            .weights
            .get(s)
            .ok_or_else(|| IndexError::MissingWeight { name: s.clone() })?;
        if f < 0.0 {
            return Err(IndexError::NegativeFrequency {
                name: s.clone(),
                value: f,
            });
        }
        total += w * f;
    }
    Ok(total)
}

/// MPI = headcount × intensity.
pub fn multidimensional_poverty_index(headcount: f64, intensity: f64) -> Result<f64, IndexError> {
    for (name, v) in [("headcount", headcount), ("intensity", intensity)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(IndexError::OutOfUnitRange { name, value: v });
        }
    }
    Ok(headcount * intensity)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PovertyIndices {
    pub headcount: f64,
    pub intensity: f64,
    pub mpi: f64,
}

/// Reads `poverty.csv` (`sector_id,headcount,intensity`).
pub fn load_poverty<R: Read>(r: R, file: &str) -> Result<BTreeMap<String, PovertyIndices>, Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sector_id", "headcount", "intensity"] {
        return Err(Error::format(file, "expected header sector_id,headcount,intensity"));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64, Error> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::format(file, format!("line {line}: not a number")))
        };
        let (h, a) = (num(1)?, num(2)?);
        let mpi = multidimensional_poverty_index(h, a).map_err(|e| Error::format(file, format!("line {line}: {e}")))?;
        if out
            .insert(
                rec[0].trim().to_string(),
                PovertyIndices {
                    headcount: h,
                    intensity: a,
                    mpi,
                },
            )
            .is_some()
        {
            return Err(Error::format(file, format!("sector {} listed twice", &rec[0])));
        }
    }
    Ok(out)
}

/// Arithmetic mean per sector of each named variable, skipping unanswered cells.
/// Counts are households per sector.
pub fn sector_survey_means(table: &SurveyTable, variables: &[String]) -> Result<SectorMatrix, Error> {
    let idx = variables
        .iter()
        .map(|v| {
            table
                .column_index(v)
                .ok_or_else(|| Error::Invalid(format!("survey variable {v} not found")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut groups: BTreeMap<&str, Vec<&[Cell]>> = BTreeMap::new();
    for h in &table.rows {
        groups.entry(h.sector_id.as_str()).or_default().push(&h.values);
    }
    let mut m = SectorMatrix::new(variables.to_vec(), "n_households");
    for (sector, rows) in groups {
        let cells = idx
            .iter()
            .map(|&j| {
                let (s, n) = rows
                    .iter()
                    .filter_map(|r| r[j])
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                (n > 0).then(|| s / n as f64)
            })
            .collect();
        m.push_row(sector.to_string(), cells, rows.len());
    }
    Ok(m)
}

/// Per-household FCS from the food-group columns named in the weight table.
/// Unanswered or absent groups count as 0.
pub fn household_fcs(table: &SurveyTable, weights: &FoodGroupWeights) -> Result<Vec<f64>, Error> {
    let cols: Vec<(String, usize)> = weights
        .weights
        .keys()
        .filter_map(|g| table.column_index(g).map(|j| (g.clone(), j)))
        .collect();
    table
        .rows
        .par_iter()
        .map(|h| {
            let freqs: BTreeMap<String, u8> = cols
                .iter()
                .map(|(g, j)| (g.clone(), h.values[*j].map_or(0, |v| v as u8)))
                .collect();
            food_consumption_score(&freqs, weights)
                .map_err(|e| Error::Invalid(format!("household {}: {e}", h.household_id)))
        })
        .collect()
}

/// Per-household CSI from the columns tagged `coping`. `None` when the survey has no such columns.
pub fn household_csi(table: &SurveyTable, weights: Option<&CopingStrategyWeights>) -> Result<Option<Vec<f64>>, Error> {
    let cols: Vec<(String, usize)> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.category == Category::Coping)
        .map(|(j, c)| (c.name.clone(), j))
        .collect();
    if cols.is_empty() {
        return Ok(None);
    }
    let weights = weights
        .ok_or_else(|| Error::Config("survey has coping-strategy columns but no csi_weights file was given".into()))?;
    let v = table
        .rows
        .par_iter()
        .map(|h| {
            let freqs: BTreeMap<String, f64> = cols
                .iter()
                .map(|(s, j)| (s.clone(), h.values[*j].unwrap_or(0.0)))
                .collect();
            coping_strategy_index(&freqs, weights)
                .map_err(|e| Error::Config(format!("household {}: {e}", h.household_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(v))
}

/// Inputs for [`build_sector_survey`].
pub struct SurveyInputs<'a> {
    pub table: &'a SurveyTable,
    /// Variables to average; `None` means every column.
    pub variables: Option<Vec<String>>,
    pub fcs_weights: &'a FoodGroupWeights,
    pub csi_weights: Option<&'a CopingStrategyWeights>,
    pub poverty: Option<&'a BTreeMap<String, PovertyIndices>>,
}

pub const DERIVED_SURVEY_COLUMNS: [&str; 5] = ["fcs_mean", "csi_mean", "headcount", "intensity", "mpi"];

/// Sector survey matrix: requested variable means, then `fcs_mean`, `csi_mean`,
/// `headcount`, `intensity`, `mpi`.
pub fn build_sector_survey(inputs: &SurveyInputs<'_>) -> Result<SectorMatrix, Error> {
    let table = inputs.table;
    let variables = inputs
        .variables
        .clone()
        .unwrap_or_else(|| table.columns.iter().map(|c| c.name.clone()).collect());
    let base = sector_survey_means(table, &variables)?;

    let fcs = household_fcs(table, inputs.fcs_weights)?;
    let csi = household_csi(table, inputs.csi_weights)?;
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (i, h) in table.rows.iter().enumerate() {
        let e = sums.entry(h.sector_id.as_str()).or_default();
        e.0 += fcs[i];
        e.1 += csi.as_ref().map_or(0.0, |c| c[i]);
        e.2 += 1;
    }

    let mut columns = base.columns.clone();
    columns.extend(DERIVED_SURVEY_COLUMNS.iter().map(|s| s.to_string()));
    let mut m = SectorMatrix::new(columns, "n_households");
    for (i, sector) in base.sectors.iter().enumerate() {
        let (f, c, n) = sums[sector.as_str()];
        let mut row = base.cells[i].clone();
        row.push(Some(f / n as f64));
        row.push(csi.as_ref().map(|_| c / n as f64));
        let p = inputs.poverty.and_then(|p| p.get(sector));
        row.push(p.map(|p| p.headcount));
        row.push(p.map(|p| p.intensity));
        row.push(p.map(|p| p.mpi));
        m.push_row(sector.clone(), row, base.counts[i]);
    }
    Ok(m)
}
