//! Pearson correlation between mobile and survey sector variables, with
//! Student-t p-values, Fisher-z confidence intervals and a shuffled-sector null.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::table::{fmt_cell, fmt_f64, parse_cell, Cell, SectorMatrix};

/// Product-moment correlation, two-pass. `None` for mismatched lengths,
/// fewer than two values, or zero variance on either side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson_indexed(x.len(), |i| Some((x[i], y[i]))).0
}

/// Pearson over the pairs where both cells are defined. Returns `(r, n_pairs)`.
pub fn pearson_cells(x: &[Cell], y: &[Cell]) -> (Option<f64>, usize) {
    debug_assert_eq!(x.len(), y.len());
    pearson_indexed(x.len(), |i| Some((x[i]?, y[i]?)))
}

fn pearson_indexed(len: usize, pair: impl Fn(usize) -> Option<(f64, f64)>) -> (Option<f64>, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for i in 0..len {
        if let Some((a, b)) = pair(i) {
            sx += a;
            sy += b;
            n += 1;
        }
    }
    if n < 2 {
        return (None, n);
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..len {
        if let Some((a, b)) = pair(i) {
            let (dx, dy) = (a - mx, b - my);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if sxx == 0.0 || syy == 0.0 {
        return (None, n);
    }
    (Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)), n)
}

/// Two-sided p-value of `r` against Student-t with `n - 2` degrees of freedom.
///
/// Uses `P(|T| > t) = I_{1-r²}(df/2, 1/2)`, which keeps precision deep in the tail.
pub fn pearson_p(r: f64, n: usize) -> Option<f64> {
    if n < 3 || !r.is_finite() {
        return None;
    }
    let r2 = r * r;
    if r2 >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    Some(beta_reg(df / 2.0, 0.5, 1.0 - r2).clamp(0.0, 1.0))
}

/// Fisher-z interval `tanh(atanh(r) ± q / sqrt(n - 3))`. Needs `n ≥ 4`.
/// A perfect correlation yields the degenerate interval `(r, r)`.
pub fn fisher_ci(r: f64, n: usize, level: f64) -> Option<(f64, f64)> {
    if n <= 3 || !(0.0 < level && level < 1.0) || !r.is_finite() {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some((r, r));
    }
    let q = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let z = r.atanh();
    let half = q / ((n - 3) as f64).sqrt();
    let lo = (z - half).tanh().min(r);
    let hi = (z + half).tanh().max(r);
    Some((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub mobile_var: String,
    pub survey_var: String,
    /// Signed r; `None` when undefined (zero variance or < 3 pairs).
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n: usize,
}

impl CorrelationEntry {
    pub fn defined(&self) -> bool {
        self.r.is_some()
    }
}

/// Mobile and survey columns restricted to their common sectors, in sector order.
#[derive(Debug, Clone)]
pub struct JoinedSectors {
    pub sectors: Vec<String>,
    pub mobile: Vec<(String, Vec<Cell>)>,
    pub survey: Vec<(String, Vec<Cell>)>,
}

pub fn join_sectors(mobile: &SectorMatrix, survey: &SectorMatrix) -> JoinedSectors {
    let mut mi = Vec::new();
    let mut si = Vec::new();
    let mut sectors = Vec::new();
    for (i, s) in mobile.sectors.iter().enumerate() {
        if let Some(j) = survey.row_index(s) {
            mi.push(i);
            si.push(j);
            sectors.push(s.clone());
        }
    }
    let cols = |m: &SectorMatrix, rows: &[usize]| -> Vec<(String, Vec<Cell>)> {
        m.columns
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), rows.iter().map(|&r| m.cells[r][c]).collect()))
            .collect()
    };
    JoinedSectors {
        mobile: cols(mobile, &mi),
        survey: cols(survey, &si),
        sectors,
    }
}

impl JoinedSectors {
    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    /// Keeps the first `n` common sectors.
    pub fn truncate(&self, n: usize) -> JoinedSectors {
        let n = n.min(self.sectors.len());
        let cut = |c: &[(String, Vec<Cell>)]| c.iter().map(|(k, v)| (k.clone(), v[..n].to_vec())).collect();
        JoinedSectors {
            sectors: self.sectors[..n].to_vec(),
            mobile: cut(&self.mobile),
            survey: cut(&self.survey),
        }
    }
}

fn entry(mobile_var: &str, x: &[Cell], survey_var: &str, y: &[Cell], level: f64) -> CorrelationEntry {
    let (r, n) = pearson_cells(x, y);
    let r = r.filter(|_| n >= 3);
    CorrelationEntry {
        mobile_var: mobile_var.to_string(),
        survey_var: survey_var.to_string(),
        r,
        p: r.and_then(|r| pearson_p(r, n)),
        ci: r.and_then(|r| fisher_ci(r, n, level)),
        n,
    }
}

/// One entry per (mobile, survey) column pair, mobile-major. Parallel over mobile columns.
pub fn correlate_joined(j: &JoinedSectors, level: f64) -> Vec<CorrelationEntry> {
    j.mobile
        .par_iter()
        .flat_map_iter(|(mv, x)| j.survey.iter().map(move |(sv, y)| entry(mv, x, sv, y, level)))
        .collect()
}

/// Correlation matrix over the sectors both matrices share.
///
/// Fails when fewer than three sectors are shared; otherwise undefined cells are
/// dropped pairwise and each entry records its own `n`.
pub fn correlation_matrix(mobile: &SectorMatrix, survey: &SectorMatrix, level: f64) -> Result<Vec<CorrelationEntry>> {
    let j = join_sectors(mobile, survey);
    if j.n_sectors() < 3 {
        return Err(Error::Invalid(format!(
            "mobile and survey matrices share {} sectors; at least 3 are needed",
            j.n_sectors()
        )));
    }
    Ok(correlate_joined(&j, level))
}

pub const CORRELATIONS_HEADER: [&str; 8] = [
    "mobile_var",
    "survey_var",
    "r",
    "p",
    "ci_low",
    "ci_high",
    "n",
    "defined",
];

pub fn write_correlations<W: Write>(w: W, entries: &[CorrelationEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CORRELATIONS_HEADER)?;
    for e in entries {
        wtr.write_record([
            e.mobile_var.clone(),
            e.survey_var.clone(),
            fmt_cell(e.r),
            fmt_cell(e.p),
            fmt_cell(e.ci.map(|c| c.0)),
            fmt_cell(e.ci.map(|c| c.1)),
            e.n.to_string(),
            if e.defined() { "1" } else { "0" }.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("correlations.csv", e))?;
    Ok(())
}

pub fn read_correlations<R: Read>(r: R, file: &str) -> Result<Vec<CorrelationEntry>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != CORRELATIONS_HEADER {
        return Err(Error::format(file, "unexpected correlations header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |m: String| Error::format(file, m);
        let cell = |i: usize| parse_cell(&rec[i]).map_err(bad);
        let ci = match (cell(4)?, cell(5)?) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        out.push(CorrelationEntry {
            mobile_var: rec[0].to_string(),
            survey_var: rec[1].to_string(),
            r: cell(2)?,
            p: cell(3)?,
            ci,
            n: rec[6].parse().map_err(|_| Error::format(file, "bad n"))?,
        });
    }
    Ok(out)
}

/// `mobile_var,survey_var,abs_r,category` rows for heatmap rendering.
pub fn write_heatmap<W: Write>(w: W, entries: &[CorrelationEntry], category: impl Fn(&str) -> String) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["mobile_var", "survey_var", "abs_r", "category"])?;
    for e in entries {
        wtr.write_record([
            e.mobile_var.clone(),
            e.survey_var.clone(),
            fmt_cell(e.r.map(f64::abs)),
            category(&e.survey_var),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("heatmap.csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsRQuantiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl AbsRQuantiles {
    fn from_values(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_unstable_by(f64::total_cmp);
        Some(AbsRQuantiles {
            p50: quantile_sorted(&v, 0.5),
            p95: quantile_sorted(&v, 0.95),
            p99: quantile_sorted(&v, 0.99),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairNull {
    pub mobile_var: String,
    pub survey_var: String,
    pub defined_trials: usize,
    pub quantiles: Option<AbsRQuantiles>,
}

/// |r| under random sector alignment, pooled over all pairs and per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistributionSummary {
    pub trials: usize,
    pub pooled: Option<AbsRQuantiles>,
    pub per_pair: Vec<PairNull>,
}

/// Per-trial RNG: stream `trial` of a ChaCha8 generator keyed by `seed`, so
/// results do not depend on how trials are scheduled across threads.
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Shuffled-sector null: each trial permutes the survey rows uniformly at random
/// and recomputes every |r|.
pub fn shuffle_null(j: &JoinedSectors, trials: usize, seed: u64) -> NullDistributionSummary {
    let n = j.n_sectors();
    let samples: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut trial_rng(seed, t));
            trial_abs_r(j, &perm)
        })
        .collect();
    summarize_null(j, samples)
}

/// Null summary over caller-supplied permutations of the joined sector order.
pub fn null_with_permutations(j: &JoinedSectors, perms: &[Vec<usize>]) -> NullDistributionSummary {
    let samples = perms.par_iter().map(|p| trial_abs_r(j, p)).collect();
    summarize_null(j, samples)
}

/// |r| for every pair with survey row `i` moved to position `perm[i]`; NaN when undefined.
fn trial_abs_r(j: &JoinedSectors, perm: &[usize]) -> Vec<f64> {
    let shuffled: Vec<Vec<Cell>> = j
        .survey
        .iter()
        .map(|(_, col)| {
            let mut out = vec![None; col.len()];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = col[i];
            }
            out
        })
        .collect();
    let mut out = Vec::with_capacity(j.mobile.len() * shuffled.len());
    for (_, x) in &j.mobile {
        for y in &shuffled {
            let (r, n) = pearson_cells(x, y);
            out.push(r.filter(|_| n >= 3).map_or(f64::NAN, f64::abs));
        }
    }
    out
}

fn summarize_null(j: &JoinedSectors, samples: Vec<Vec<f64>>) -> NullDistributionSummary {
    let pooled: Vec<f64> = samples.iter().flatten().copied().filter(|v| !v.is_nan()).collect();
    let mut per_pair = Vec::new();
    let mut k = 0;
    for (mv, _) in &j.mobile {
        for (sv, _) in &j.survey {
            let vals: Vec<f64> = samples.iter().map(|s| s[k]).filter(|v| !v.is_nan()).collect();
            per_pair.push(PairNull {
                mobile_var: mv.clone(),
                survey_var: sv.clone(),
                defined_trials: vals.len(),
                quantiles: AbsRQuantiles::from_values(vals),
            });
            k += 1;
        }
    }
    NullDistributionSummary {
        trials: samples.len(),
        pooled: AbsRQuantiles::from_values(pooled),
        per_pair,
    }
}

pub fn write_null_summary<W: Write>(w: W, s: &NullDistributionSummary) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["trials", "abs_r_p50", "abs_r_p95", "abs_r_p99", "abs_r_max"])?;
    let q = s.pooled;
    wtr.write_record([
        s.trials.to_string(),
        fmt_cell(q.map(|q| q.p50)),
        fmt_cell(q.map(|q| q.p95)),
        fmt_cell(q.map(|q| q.p99)),
        fmt_cell(q.map(|q| q.max)),
    ])?;
    wtr.flush().map_err(|e| Error::io("null_summary.csv", e))?;
    Ok(())
}

/// Formats a confidence interval for logs.
pub fn fmt_ci(ci: (f64, f64)) -> String {
    format!("[{}, {}]", fmt_f64(ci.0), fmt_f64(ci.1))
}
