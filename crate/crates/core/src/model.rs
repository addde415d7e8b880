//! Polynomial-basis least-squares proxies of survey indicators.
//!
//! Inputs are standardized (zero mean, unit sample variance) before the basis is
//! built, and the system is solved through a Householder QR factorization of the
//! design matrix. Coefficients are reported on the standardized basis and
//! expanded back to original units.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::correlation::{join_sectors, pearson};
use crate::error::Result;
use crate::table::{fmt_f64, Cell, SectorMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degree must be 1 or 2, got {0}")]
    Degree(u8),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("{rows} complete rows for {terms} basis terms; need more rows than terms")]
    TooFewRows { rows: usize, terms: usize },
    #[error("variable {0} is constant over the fitted rows")]
    ConstantColumn(String),
    #[error("rank-deficient basis: {} collinear with earlier terms", .terms.join(", "))]
    RankDeficient { terms: Vec<String> },
    #[error("row lacks variable {0}")]
    MissingVariable(String),
}

/// Relative threshold on the QR diagonal below which a term counts as collinear.
const RANK_TOL: f64 = 1e-9;

/// Basis terms: the intercept (empty), single variables, then (degree 2) all
/// products `x_i * x_j` with `i <= j`.
pub fn basis_terms(n_vars: usize, degree: u8) -> std::result::Result<Vec<Vec<usize>>, ModelError> {
    if !(1..=2).contains(&degree) {
        return Err(ModelError::Degree(degree));
    }
    let mut terms = vec![vec![]];
    terms.extend((0..n_vars).map(|i| vec![i]));
    if degree == 2 {
        for i in 0..n_vars {
            for j in i..n_vars {
                terms.push(vec![i, j]);
            }
        }
    }
    Ok(terms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub target: String,
    pub variables: Vec<String>,
    pub degree: u8,
    pub terms: Vec<Vec<usize>>,
    /// On standardized inputs and standardized target.
    pub coefficients_std: Vec<f64>,
    /// On raw inputs and raw target, same term order.
    pub coefficients_raw: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
    /// Pearson correlation between fitted and observed target; 0 for an intercept-only fit.
    pub fit_r: f64,
    pub n: usize,
    /// Rows dropped for having an undefined cell.
    pub n_dropped: usize,
}

impl RegressionModel {
    pub fn term_name(&self, t: usize) -> String {
        match self.terms[t].as_slice() {
            [] => "intercept".to_string(),
            [i] => self.variables[*i].clone(),
            [i, j] if i == j => format!("{}^2", self.variables[*i]),
            [i, j] => format!("{}*{}", self.variables[*i], self.variables[*j]),
            _ => unreachable!("degree is at most 2"),
        }
    }

    fn term_values(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.terms.iter().map(|t| t.iter().map(|&i| z[i]).product()).collect()
    }

    /// Prediction for values aligned with [`RegressionModel::variables`].
    pub fn predict_slice(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .term_values(x)
            .iter()
            .zip(&self.coefficients_std)
            .map(|(t, c)| t * c)
            .sum();
        self.target_mean + self.target_sd * s
    }

    /// Prediction for a row given by variable name.
    pub fn predict(&self, row: &BTreeMap<String, f64>) -> std::result::Result<f64, ModelError> {
        let x = self
            .variables
            .iter()
            .map(|v| {
                row.get(v)
                    .copied()
                    .ok_or_else(|| ModelError::MissingVariable(v.clone()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(self.predict_slice(&x))
    }

    /// Pearson between predictions and `y` over complete rows of held data.
    pub fn evaluate(&self, x: &[Vec<Cell>], y: &[Cell]) -> Option<f64> {
        let (rows, ys, _) = complete_rows(x, y);
        let pred: Vec<f64> = rows.iter().map(|r| self.predict_slice(r)).collect();
        pearson(&pred, &ys)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["term", "coefficient_std", "coefficient_raw"])?;
        for t in 0..self.terms.len() {
            wtr.write_record([
                self.term_name(t),
                fmt_f64(self.coefficients_std[t]),
                fmt_f64(self.coefficients_raw[t]),
            ])?;
        }
        wtr.write_record(["fit_r", &fmt_f64(self.fit_r), ""])?;
        wtr.write_record(["n", &self.n.to_string(), ""])?;
        wtr.flush().map_err(|e| crate::Error::io("model.csv", e))?;
        Ok(())
    }
}

/// Same as [`RegressionModel::evaluate`] as a free function.
pub fn evaluate_model(model: &RegressionModel, x: &[Vec<Cell>], y: &[Cell]) -> Option<f64> {
    model.evaluate(x, y)
}

fn complete_rows(x: &[Vec<Cell>], y: &[Cell]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let mut kept = Vec::new();
    for (i, (r, t)) in x.iter().zip(y).enumerate() {
        let full: Option<Vec<f64>> = r.iter().copied().collect();
        if let (Some(r), Some(t)) = (full, t) {
            rows.push(r);
            ys.push(*t);
            kept.push(i);
        }
    }
    (rows, ys, kept)
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let ss: f64 = v.map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

/// Least-squares fit of `y` on the degree-`degree` basis of `x`.
///
/// `x[i]` holds the values of `variables` for observation `i`. Rows with any
/// undefined cell (in `x` or `y`) are dropped.
pub fn fit_model(
    target: &str,
    variables: &[String],
    x: &[Vec<Cell>],
    y: &[Cell],
    degree: u8,
) -> std::result::Result<RegressionModel, ModelError> {
    let terms = basis_terms(variables.len(), degree)?;
    let (rows, ys, _) = complete_rows(x, y);
    let n = rows.len();
    let p = terms.len();
    if n <= p {
        return Err(ModelError::TooFewRows { rows: n, terms: p });
    }

    let mut means = Vec::with_capacity(variables.len());
    let mut sds = Vec::with_capacity(variables.len());
    for (k, v) in variables.iter().enumerate() {
        let (m, s) = mean_sd(rows.iter().map(|r| r[k]));
        if !(s > 0.0) {
            return Err(ModelError::ConstantColumn(v.clone()));
        }
        means.push(m);
        sds.push(s);
    }
    let (target_mean, mut target_sd) = mean_sd(ys.iter().copied());
    if !(target_sd > 0.0) {
        target_sd = 1.0;
    }

    let mut model = RegressionModel {
        target: target.to_string(),
        variables: variables.to_vec(),
        degree,
        terms,
        coefficients_std: vec![0.0; p],
        coefficients_raw: vec![0.0; p],
        means,
        sds,
        target_mean,
        target_sd,
        fit_r: 0.0,
        n,
        n_dropped: x.len() - n,
    };

    let term_rows: Vec<Vec<f64>> = rows.iter().map(|r| model.term_values(r)).collect();
    let design = DMatrix::from_fn(n, p, |i, j| term_rows[i][j]);
    let yz = DVector::from_iterator(n, ys.iter().map(|v| (v - target_mean) / target_sd));
    let qr = design.qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let collinear: Vec<String> = (0..p)
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * scale))
        .map(|j| model.term_name(j))
        .collect();
    if !collinear.is_empty() {
        return Err(ModelError::RankDeficient { terms: collinear });
    }
    let qty = qr.q().transpose() * yz;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ModelError::RankDeficient { terms: vec![] })?;
    model.coefficients_std = beta.iter().copied().collect();
    model.coefficients_raw = raw_coefficients(&model);

    let fitted: Vec<f64> = rows.iter().map(|r| model.predict_slice(r)).collect();
    model.fit_r = pearson(&fitted, &ys).unwrap_or(0.0).max(0.0);
    Ok(model)
}

/// Expands standardized-basis coefficients into original units.
fn raw_coefficients(m: &RegressionModel) -> Vec<f64> {
    let index: BTreeMap<&[usize], usize> = m.terms.iter().enumerate().map(|(k, t)| (t.as_slice(), k)).collect();
    let mut raw = vec![0.0; m.terms.len()];
    let sy = m.target_sd;
    raw[index[[].as_slice()]] += m.target_mean;
    for (k, t) in m.terms.iter().enumerate() {
        let b = m.coefficients_std[k] * sy;
        match t.as_slice() {
            [] => raw[k] += b,
            &[i] => {
                raw[k] += b / m.sds[i];
                raw[index[[].as_slice()]] -= b * m.means[i] / m.sds[i];
            }
            &[i, j] => {
                let c = b / (m.sds[i] * m.sds[j]);
                raw[k] += c;
                raw[index[[i].as_slice()]] -= c * m.means[j];
                raw[index[[j].as_slice()]] -= c * m.means[i];
                raw[index[[].as_slice()]] += c * m.means[i] * m.means[j];
            }
            _ => unreachable!("degree is at most 2"),
        }
    }
    raw
}

/// Fitted values paired with observations, for scatter output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub sector_id: String,
    pub predicted: f64,
    pub observed: f64,
}

/// Fit a survey target on mobile variables over the sectors both matrices share.
pub fn fit_sector_model(
    mobile: &SectorMatrix,
    survey: &SectorMatrix,
    target: &str,
    variables: &[String],
    degree: u8,
) -> std::result::Result<(RegressionModel, Vec<ScatterPoint>), ModelError> {
    let j = join_sectors(mobile, survey);
    let cols = variables
        .iter()
        .map(|v| {
            j.mobile
                .iter()
                .find(|(n, _)| n == v)
                .map(|(_, c)| c)
                .ok_or_else(|| ModelError::UnknownVariable(v.clone()))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let y = j
        .survey
        .iter()
        .find(|(n, _)| n == target)
        .map(|(_, c)| c.clone())
        .ok_or_else(|| ModelError::UnknownVariable(target.to_string()))?;
    let x: Vec<Vec<Cell>> = (0..j.n_sectors())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let model = fit_model(target, variables, &x, &y, degree)?;
    let (rows, ys, kept) = complete_rows(&x, &y);
    let scatter = kept
        .iter()
        .zip(rows.iter().zip(ys))
        .map(|(&i, (r, obs))| ScatterPoint {
            sector_id: j.sectors[i].clone(),
            predicted: model.predict_slice(r),
            observed: obs,
        })
        .collect();
    Ok((model, scatter))
}

/// Fits several targets in parallel; results follow `targets` order.
pub fn fit_targets(
    mobile: &SectorMatrix,
    survey: &SectorMatrix,
    targets: &[String],
    variables: &[String],
    degree: u8,
) -> Vec<std::result::Result<RegressionModel, ModelError>> {
    targets
        .par_iter()
        .map(|t| fit_sector_model(mobile, survey, t, variables, degree).map(|(m, _)| m))
        .collect()
}

pub fn write_scatter<W: Write>(w: W, points: &[ScatterPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sector_id", "predicted", "observed"])?;
    for p in points {
        wtr.write_record([p.sector_id.clone(), fmt_f64(p.predicted), fmt_f64(p.observed)])?;
    }
    wtr.flush().map_err(|e| crate::Error::io("scatter.csv", e))?;
    Ok(())
}
