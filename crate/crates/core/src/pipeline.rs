//! Subcommands of the `foodsec` binary. Each stage reads only its declared
//! inputs, writes only its declared outputs into the run directory and leaves a
//! `manifest_<command>.json` behind.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{build_sector_matrix, AggregationConfig};
use crate::config::{hex, RunConfig};
use crate::correlation::{
    correlation_matrix, join_sectors, shuffle_null, write_correlations, write_heatmap, write_null_summary,
};
use crate::error::{Error, Result};
use crate::features::{read_user_features, write_user_features, FeatureAccumulator, UserFeatureVector};
use crate::ingest::{
    load_survey, load_survey_meta, load_tower_map, parse_cdr_stream, parse_topup_stream, IngestStats, ParseOptions,
    TopUpRecord,
};
use crate::model::{fit_sector_model, write_scatter};
use crate::survey::{build_sector_survey, load_poverty, CopingStrategyWeights, FoodGroupWeights, SurveyInputs};
use crate::synth::verify::{verify, Tolerances, Truth};
use crate::synth::{generate, SynthConfig};
use crate::table::SectorMatrix;
use crate::temporal::{
    emit_overlay, load_stock_series, local_date, rolling_sector_series, write_overlay, write_rolling, DayRange,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Features,
    Aggregate,
    Indices,
    Correlate,
    Null,
    Fit,
    Rolling,
    Verify,
    All,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Synth,
        Command::Features,
        Command::Aggregate,
        Command::Indices,
        Command::Correlate,
        Command::Null,
        Command::Fit,
        Command::Rolling,
        Command::Verify,
        Command::All,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Features => "features",
            Command::Aggregate => "aggregate",
            Command::Indices => "indices",
            Command::Correlate => "correlate",
            Command::Null => "null",
            Command::Fit => "fit",
            Command::Rolling => "rolling",
            Command::Verify => "verify",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand {s:?}")))
    }
}

pub const USER_FEATURES: &str = "user_features.csv";
pub const SECTOR_MOBILE: &str = "sector_mobile.csv";
pub const SECTOR_SURVEY: &str = "sector_survey.csv";
pub const CORRELATIONS: &str = "correlations.csv";
pub const NULL_SUMMARY: &str = "null_summary.csv";
pub const HEATMAP: &str = "heatmap.csv";
pub const OVERLAY: &str = "overlay.csv";
pub const VERIFY_REPORT: &str = "verify_report.csv";

pub fn model_file(target: &str) -> String {
    format!("model_{target}.csv")
}

pub fn scatter_file(target: &str) -> String {
    format!("scatter_{target}.csv")
}

pub fn rolling_file(window_days: u32) -> String {
    format!("rolling_{window_days}.csv")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Machine-readable record of one run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    /// File names only; contents are identified by hash.
    pub inputs: Vec<FileEntry>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileEntry>,
    pub details: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::with_capacity(
        1 << 20,
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, command: Command) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        Ok(Run {
            cfg,
            out: cfg.out.clone(),
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: cfg.seed,
                config_hash: cfg.hash(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                details: BTreeMap::new(),
            },
        })
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let entry = FileEntry {
            path: file_name(path),
            sha256: sha256_file(path)?,
        };
        if !self.manifest.inputs.contains(&entry) {
            self.manifest.inputs.push(entry);
        }
        Ok(())
    }

    fn input(&mut self, key: &str) -> Result<PathBuf> {
        let p = self.cfg.require(key)?;
        self.record_input(&p)?;
        Ok(p)
    }

    fn optional(&mut self, key: &str) -> Result<Option<PathBuf>> {
        let p = self.cfg.optional(key)?;
        if let Some(p) = &p {
            self.record_input(p)?;
        }
        Ok(p)
    }

    /// An artifact of an earlier stage in the run directory.
    fn intermediate(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        if !p.is_file() {
            return Err(Error::Config(format!(
                "input `{name}` not found in {}; run the producing stage first",
                self.out.display()
            )));
        }
        self.record_input(&p)?;
        Ok(p)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        drop(w);
        self.manifest.outputs.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_file(&path)?,
        });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.details.insert(key.to_string(), v);
    }

    fn parse_options(&self) -> Result<ParseOptions> {
        Ok(ParseOptions {
            strict: self.cfg.strict,
            period: self.cfg.period()?,
        })
    }

    fn finish(self) -> Result<Manifest> {
        let path = self.out.join(format!("manifest_{}.json", self.manifest.command));
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn log_ingest(file: &str, s: &IngestStats) {
    if s.row_errors > 0 {
        log::warn!("{file}: {} of {} rows rejected", s.row_errors, s.rows_in);
        for e in s.sample_errors.iter().take(5) {
            log::warn!("{file}: {e}");
        }
    }
}

fn stage_features(run: &mut Run) -> Result<Vec<UserFeatureVector>> {
    let towers_path = run.input("towers")?;
    let cdr_path = run.input("cdr")?;
    let topup_path = run.input("topup")?;
    let opts = run.parse_options()?;

    let (towers, dups) = load_tower_map(open(&towers_path)?, &file_name(&towers_path))?;
    if dups > 0 {
        log::warn!("{dups} duplicate tower rows ignored");
    }
    let mut acc = FeatureAccumulator::new(run.cfg.feature_config()?);
    let name = file_name(&cdr_path);
    let mut calls = parse_cdr_stream(open(&cdr_path)?, &name, opts)?;
    for c in calls.by_ref() {
        acc.add_call(&c?);
    }
    let cdr_stats = calls.into_stats();
    log_ingest(&name, &cdr_stats);

    let name = file_name(&topup_path);
    let mut topups = parse_topup_stream(open(&topup_path)?, &name, opts)?;
    for t in topups.by_ref() {
        acc.add_topup(&t?);
    }
    let topup_stats = topups.into_stats();
    log_ingest(&name, &topup_stats);

    let (users, excluded) = acc.finish(&towers);
    run.detail("cdr_ingest", &cdr_stats);
    run.detail("topup_ingest", &topup_stats);
    run.detail("duplicate_tower_rows", dups);
    run.detail("users", users.len());
    run.detail("excluded_users", excluded);
    run.write(USER_FEATURES, |w| write_user_features(w, &users))?;
    Ok(users)
}

fn stage_aggregate(run: &mut Run, users: &[UserFeatureVector]) -> Result<SectorMatrix> {
    let cfg = AggregationConfig {
        variables: run.cfg.mobile_variables()?,
        min_users: run.cfg.min_users,
    };
    let (m, excluded) = build_sector_matrix(users, &cfg);
    if !excluded.is_empty() {
        log::info!("{} sectors below {} users excluded", excluded.len(), cfg.min_users);
    }
    run.detail("sectors", m.n_rows());
    run.detail("excluded_sectors", &excluded);
    run.write(SECTOR_MOBILE, |w| m.write_csv(w))?;
    Ok(m)
}

fn stage_indices(run: &mut Run) -> Result<(SectorMatrix, BTreeMap<String, String>)> {
    let meta_path = run.input("survey_meta")?;
    let survey_path = run.input("survey")?;
    let meta = load_survey_meta(open(&meta_path)?, &file_name(&meta_path))?;
    let name = file_name(&survey_path);
    let (table, stats) = load_survey(open(&survey_path)?, &name, &meta, run.parse_options()?)?;
    log_ingest(&name, &stats);
    run.detail("survey_ingest", &stats);

    let fcs = match run.optional("fcs_weights")? {
        Some(p) => FoodGroupWeights::from_csv(open(&p)?, &file_name(&p))?,
        None => FoodGroupWeights::default(),
    }
    .with_thresholds(run.cfg.fcs_poor_max, run.cfg.fcs_borderline_max)?;
    let csi = match run.optional("csi_weights")? {
        Some(p) => Some(CopingStrategyWeights::from_csv(open(&p)?, &file_name(&p))?),
        None => None,
    };
    let poverty = match run.optional("poverty")? {
        Some(p) => Some(load_poverty(open(&p)?, &file_name(&p))?),
        None => None,
    };
    let m = build_sector_survey(&SurveyInputs {
        table: &table,
        variables: run.cfg.survey_vars.clone(),
        fcs_weights: &fcs,
        csi_weights: csi.as_ref(),
        poverty: poverty.as_ref(),
    })?;
    run.write(SECTOR_SURVEY, |w| m.write_csv(w))?;
    let categories = meta.iter().map(|(k, c)| (k.clone(), c.as_str().to_string())).collect();
    Ok((m, categories))
}

fn stage_correlate(
    run: &mut Run,
    mobile: &SectorMatrix,
    survey: &SectorMatrix,
    categories: &BTreeMap<String, String>,
) -> Result<()> {
    let entries = correlation_matrix(mobile, survey, run.cfg.ci_level)?;
    run.detail("pairs", entries.len());
    run.detail("undefined_pairs", entries.iter().filter(|e| !e.defined()).count());
    run.write(CORRELATIONS, |w| write_correlations(w, &entries))?;
    if run.cfg.heatmap_data {
        let category = |v: &str| categories.get(v).cloned().unwrap_or_else(|| "index".to_string());
        run.write(HEATMAP, |w| write_heatmap(w, &entries, category))?;
    }
    Ok(())
}

fn stage_null(run: &mut Run, mobile: &SectorMatrix, survey: &SectorMatrix) -> Result<()> {
    let seed = run.cfg.require_seed("the shuffle null")?;
    let j = join_sectors(mobile, survey);
    if j.n_sectors() < 3 {
        return Err(Error::Invalid(format!("only {} shared sectors", j.n_sectors())));
    }
    let summary = shuffle_null(&j, run.cfg.trials, seed);
    run.detail("null_sectors", j.n_sectors());
    run.write(NULL_SUMMARY, |w| write_null_summary(w, &summary))?;
    Ok(())
}

fn stage_fit(run: &mut Run, mobile: &SectorMatrix, survey: &SectorMatrix) -> Result<()> {
    let cfg = run.cfg;
    for target in &cfg.model_targets {
        let (model, scatter) = fit_sector_model(mobile, survey, target, &cfg.model_vars, cfg.degree)?;
        run.detail(&format!("fit_r.{target}"), model.fit_r);
        run.write(&model_file(target), |w| model.write_csv(w))?;
        if cfg.scatter_data {
            run.write(&scatter_file(target), |w| write_scatter(w, &scatter))?;
        }
    }
    Ok(())
}

fn stage_rolling(run: &mut Run, users: &[UserFeatureVector]) -> Result<()> {
    let topup_path = run.input("topup")?;
    let stock_path = run.optional("stock")?;
    let rc = run.cfg.rolling_config()?;
    let name = file_name(&topup_path);
    let topups: Vec<TopUpRecord> =
        parse_topup_stream(open(&topup_path)?, &name, run.parse_options()?)?.collect::<Result<_>>()?;
    let home: HashMap<String, String> = users
        .iter()
        .map(|u| (u.user_id.clone(), u.home_sector.clone()))
        .collect();

    let period = match (run.cfg.period_start, run.cfg.period_end) {
        (Some(start), Some(end)) => DayRange { start, end },
        _ => {
            let mut days = topups.iter().map(|t| local_date(&t.timestamp, rc.utc_offset_minutes));
            let first = days
                .next()
                .ok_or_else(|| Error::Invalid("no top-ups to build series from".into()))?;
            let (lo, hi) = days.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d)));
            DayRange {
                start: lo,
                end: hi.succ_opt().unwrap_or(hi),
            }
        }
    };
    let series = rolling_sector_series(&topups, &home, period, &rc)?;
    let stock = match &stock_path {
        Some(p) => Some(load_stock_series(open(p)?, &file_name(p))?),
        None => None,
    };
    run.detail("period_start", period.start.to_string());
    run.detail("period_end", period.end.to_string());
    run.detail("series", series.len());
    run.write(&rolling_file(rc.window_days), |w| write_rolling(w, &series))?;
    let overlay = emit_overlay(&series, stock.as_deref());
    run.write(OVERLAY, |w| write_overlay(w, &overlay))?;
    Ok(())
}

fn read_users(run: &mut Run) -> Result<Vec<UserFeatureVector>> {
    let p = run.intermediate(USER_FEATURES)?;
    read_user_features(open(&p)?, USER_FEATURES)
}

fn read_matrix(run: &mut Run, name: &str) -> Result<SectorMatrix> {
    let p = run.intermediate(name)?;
    SectorMatrix::read_csv(open(&p)?, name)
}

fn survey_categories(run: &mut Run) -> Result<BTreeMap<String, String>> {
    if !run.cfg.heatmap_data {
        return Ok(BTreeMap::new());
    }
    Ok(match run.optional("survey_meta")? {
        Some(p) => load_survey_meta(open(&p)?, &file_name(&p))?
            .into_iter()
            .map(|(k, c)| (k, c.as_str().to_string()))
            .collect(),
        None => BTreeMap::new(),
    })
}

fn stage_synth(run: &mut Run) -> Result<()> {
    let mut sc = match run.optional("synth")? {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = run.cfg.seed {
        sc.seed = seed;
    }
    run.manifest.seed = Some(sc.seed);
    let files = generate(&sc, &run.out)?;
    for p in files.all() {
        run.manifest.outputs.push(FileEntry {
            path: file_name(p),
            sha256: sha256_file(p)?,
        });
    }
    Ok(())
}

fn stage_verify(run: &mut Run) -> Result<()> {
    let truth_path = run.input("truth")?;
    let truth = Truth::read(open(&truth_path)?, &file_name(&truth_path))?;
    for name in [USER_FEATURES, SECTOR_MOBILE, CORRELATIONS] {
        run.intermediate(name)?;
    }
    if truth.params.get("link").map(String::as_str) == Some("quadratic") {
        run.intermediate(&model_file(crate::synth::verify::TARGET_VAR))?;
    }
    let report = verify(&truth, &run.out, &Tolerances::default())?;
    run.write(VERIFY_REPORT, |w| report.write_csv(w))?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    for c in &report.checks {
        log::info!(
            "verify {}: {} ({}) {}",
            c.name,
            c.value,
            c.threshold,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    if !failed.is_empty() {
        return Err(Error::Invalid(format!("verification failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn execute(cmd: Command, run: &mut Run) -> Result<()> {
    match cmd {
        Command::Synth => stage_synth(run),
        Command::Features => stage_features(run).map(drop),
        Command::Aggregate => {
            let users = read_users(run)?;
            stage_aggregate(run, &users).map(drop)
        }
        Command::Indices => stage_indices(run).map(drop),
        Command::Correlate => {
            let mobile = read_matrix(run, SECTOR_MOBILE)?;
            let survey = read_matrix(run, SECTOR_SURVEY)?;
            let cats = survey_categories(run)?;
            stage_correlate(run, &mobile, &survey, &cats)
        }
        Command::Null => {
            let mobile = read_matrix(run, SECTOR_MOBILE)?;
            let survey = read_matrix(run, SECTOR_SURVEY)?;
            stage_null(run, &mobile, &survey)
        }
        Command::Fit => {
            let mobile = read_matrix(run, SECTOR_MOBILE)?;
            let survey = read_matrix(run, SECTOR_SURVEY)?;
            stage_fit(run, &mobile, &survey)
        }
        Command::Rolling => {
            let users = read_users(run)?;
            stage_rolling(run, &users)
        }
        Command::Verify => stage_verify(run),
        Command::All => {
            run.cfg.require_seed("the shuffle null")?;
            let users = stage_features(run)?;
            let mobile = stage_aggregate(run, &users)?;
            let (survey, cats) = stage_indices(run)?;
            stage_correlate(run, &mobile, &survey, &cats)?;
            stage_null(run, &mobile, &survey)?;
            stage_fit(run, &mobile, &survey)?;
            stage_rolling(run, &users)
        }
    }
}

/// Runs one subcommand on a worker pool sized by `threads` and writes its manifest.
pub fn run_subcommand(cmd: Command, cfg: &RunConfig) -> Result<Manifest> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut run = Run::new(cfg, cmd)?;
        let started = std::time::Instant::now();
        execute(cmd, &mut run)?;
        log::info!("{cmd} finished in {:.2?}", started.elapsed());
        run.finish()
    })
}
