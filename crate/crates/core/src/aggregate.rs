//! Sector-level mobile variables: user features grouped by home sector and
//! summarized by mean, median, sample standard deviation and coefficient of variation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use rust_decimal::prelude::ToPrimitive;

use crate::features::UserFeatureVector;
use crate::table::{Cell, SectorMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregator {
    Mean,
    Median,
    Std,
    Cv,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [Aggregator::Mean, Aggregator::Median, Aggregator::Std, Aggregator::Cv];

    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Median => "median",
            Aggregator::Std => "std",
            Aggregator::Cv => "cv",
        }
    }
}

impl FromStr for Aggregator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown aggregator {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UserFeature {
    TopupSum,
    TopupMean,
    TopupMin,
    TopupMax,
    TopupCount,
    SocialDiversity,
}

impl UserFeature {
    pub const ALL: [UserFeature; 6] = [
        UserFeature::TopupSum,
        UserFeature::TopupMean,
        UserFeature::TopupMin,
        UserFeature::TopupMax,
        UserFeature::TopupCount,
        UserFeature::SocialDiversity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UserFeature::TopupSum => "topup_sum",
            UserFeature::TopupMean => "topup_mean",
            UserFeature::TopupMin => "topup_min",
            UserFeature::TopupMax => "topup_max",
            UserFeature::TopupCount => "topup_count",
            UserFeature::SocialDiversity => "social_diversity",
        }
    }

    pub fn value(&self, u: &UserFeatureVector) -> Option<f64> {
        match self {
            UserFeature::TopupSum => u.topup_sum.to_f64(),
            UserFeature::TopupMean => Some(u.topup_mean),
            UserFeature::TopupMin => u.topup_min.to_f64(),
            UserFeature::TopupMax => u.topup_max.to_f64(),
            UserFeature::TopupCount => Some(u.topup_count as f64),
            UserFeature::SocialDiversity => u.social_diversity,
        }
    }
}

/// A mobile variable such as `topup_sum.mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MobileVariable {
    pub feature: UserFeature,
    pub aggregator: Aggregator,
}

impl fmt::Display for MobileVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.feature.as_str(), self.aggregator.as_str())
    }
}

impl FromStr for MobileVariable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (f, a) = s
            .trim()
            .split_once('.')
            .ok_or_else(|| format!("mobile variable {s:?} must look like feature.aggregator"))?;
        let feature = UserFeature::ALL
            .into_iter()
            .find(|x| x.as_str() == f)
            .ok_or_else(|| format!("unknown user feature {f:?}"))?;
        Ok(MobileVariable {
            feature,
            aggregator: a.parse()?,
        })
    }
}

/// The default 20 columns: four top-up features and social diversity, each
/// under every aggregator.
pub fn default_mobile_variables() -> Vec<MobileVariable> {
    let features = [
        UserFeature::TopupSum,
        UserFeature::TopupMean,
        UserFeature::TopupMin,
        UserFeature::TopupMax,
        UserFeature::SocialDiversity,
    ];
    features
        .into_iter()
        .flat_map(|feature| {
            Aggregator::ALL
                .into_iter()
                .map(move |aggregator| MobileVariable { feature, aggregator })
        })
        .collect()
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Midpoint of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Two-pass sample standard deviation (n - 1 denominator). Needs two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Applies each aggregator to `values`. `None` when `values` is empty; an inner
/// `None` marks a cell the aggregator leaves undefined (CV at zero mean, std of one value).
pub fn aggregate_sector(values: &[f64], aggregators: &[Aggregator]) -> Option<Vec<Cell>> {
    if values.is_empty() {
        return None;
    }
    let m = mean(values);
    let s = sample_std(values);
    Some(
        aggregators
            .iter()
            .map(|a| match a {
                Aggregator::Mean => m,
                Aggregator::Median => median(values),
                Aggregator::Std => s,
                Aggregator::Cv => match (s, m) {
                    (Some(s), Some(m)) if m != 0.0 => Some(s / m),
                    _ => None,
                },
            })
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct AggregationConfig {
    pub variables: Vec<MobileVariable>,
    pub min_users: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            variables: default_mobile_variables(),
            min_users: 30,
        }
    }
}

/// Sectors dropped for having fewer users than the configured minimum.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize)]
pub struct ExcludedSector {
    pub sector_id: String,
    pub n_users: usize,
}

/// Groups users by home sector and aggregates every configured variable.
pub fn build_sector_matrix(
    users: &[UserFeatureVector],
    config: &AggregationConfig,
) -> (SectorMatrix, Vec<ExcludedSector>) {
    let mut by_sector: BTreeMap<&str, Vec<&UserFeatureVector>> = BTreeMap::new();
    for u in users {
        by_sector.entry(u.home_sector.as_str()).or_default().push(u);
    }
    // Fixed user order inside a sector keeps float sums reproducible.
    for v in by_sector.values_mut() {
        v.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    }

    let mut features: Vec<UserFeature> = config.variables.iter().map(|v| v.feature).collect();
    features.sort();
    features.dedup();

    let sectors: Vec<(&str, Vec<&UserFeatureVector>)> = by_sector.into_iter().collect();
    let rows: Vec<(String, usize, Option<Vec<Cell>>)> = sectors
        .par_iter()
        .map(|(sector, members)| {
            if members.len() < config.min_users {
                return (sector.to_string(), members.len(), None);
            }
            let mut per_feature: BTreeMap<UserFeature, Vec<Cell>> = BTreeMap::new();
            for f in &features {
                let values: Vec<f64> = members.iter().filter_map(|u| f.value(u)).collect();
                let cells = aggregate_sector(&values, &Aggregator::ALL).unwrap_or_else(|| vec![None; 4]);
                per_feature.insert(*f, cells);
            }
            let row = config
                .variables
                .iter()
                .map(|v| {
                    let idx = Aggregator::ALL
                        .iter()
                        .position(|a| *a == v.aggregator)
                        .expect("all aggregators listed");
                    per_feature[&v.feature][idx]
                })
                .collect();
            (sector.to_string(), members.len(), Some(row))
        })
        .collect();

    let columns = config.variables.iter().map(|v| v.to_string()).collect();
    let mut matrix = SectorMatrix::new(columns, "n_users");
    let mut excluded = Vec::new();
    for (sector, n, row) in rows {
        match row {
            Some(row) => matrix.push_row(sector, row, n),
            None => excluded.push(ExcludedSector {
                sector_id: sector,
                n_users: n,
            }),
        }
    }
    (matrix, excluded)
}
