//! Run configuration: defaults, then a TOML file, then `FOODSEC_*` environment
//! variables, then command-line overrides. Later layers win.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{default_mobile_variables, Aggregator, MobileVariable, UserFeature};
use crate::error::{Error, Result};
use crate::features::{DiversityVolume, FeatureConfig, HomeRule, NightWindow};
use crate::ingest::ObservationPeriod;
use crate::temporal::{Denominator, RollingConfig};

pub const ENV_PREFIX: &str = "FOODSEC_";

/// Input files a run may reference, with the file name used under `data`.
pub const INPUT_KEYS: [(&str, &str); 10] = [
    ("cdr", "cdr.csv"),
    ("topup", "topup.csv"),
    ("towers", "towers.csv"),
    ("survey", "survey.csv"),
    ("survey_meta", "survey_meta.csv"),
    ("poverty", "poverty.csv"),
    ("fcs_weights", "fcs_weights.csv"),
    ("csi_weights", "csi_weights.csv"),
    ("stock", "stock.csv"),
    ("truth", "truth.csv"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory supplying any input path left unset, by its conventional file name.
    pub data: Option<PathBuf>,
    pub cdr: Option<PathBuf>,
    pub topup: Option<PathBuf>,
    pub towers: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub survey_meta: Option<PathBuf>,
    pub poverty: Option<PathBuf>,
    pub fcs_weights: Option<PathBuf>,
    pub csi_weights: Option<PathBuf>,
    pub stock: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Generator config for `synth`.
    pub synth: Option<PathBuf>,
    pub out: PathBuf,

    pub night_window: String,
    /// `night` or `all_hours`.
    pub home_rule: String,
    /// `both` or `outgoing`.
    pub diversity_volume: String,
    pub utc_offset_minutes: i32,
    pub period_start: Option<NaiveDate>,
    /// Exclusive.
    pub period_end: Option<NaiveDate>,

    /// Explicit `feature.aggregator` list; overrides `aggregators`.
    pub mobile_vars: Option<Vec<String>>,
    /// Aggregators applied to the default feature set.
    pub aggregators: Option<Vec<String>>,
    pub min_users: usize,
    /// Survey variables to average; all columns when unset.
    pub survey_vars: Option<Vec<String>>,
    pub fcs_poor_max: f64,
    pub fcs_borderline_max: f64,

    pub ci_level: f64,
    pub trials: usize,
    pub seed: Option<u64>,

    pub model_targets: Vec<String>,
    pub model_vars: Vec<String>,
    pub degree: u8,

    pub window_days: u32,
    /// `whole_period` or `active`.
    pub denominator: String,

    pub strict: bool,
    pub threads: Option<usize>,
    pub heatmap_data: bool,
    pub scatter_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            cdr: None,
            topup: None,
            towers: None,
            survey: None,
            survey_meta: None,
            poverty: None,
            fcs_weights: None,
            csi_weights: None,
            stock: None,
            truth: None,
            synth: None,
            out: PathBuf::from("out"),
            night_window: "18:00-08:00".into(),
            home_rule: "night".into(),
            diversity_volume: "both".into(),
            utc_offset_minutes: 0,
            period_start: None,
            period_end: None,
            mobile_vars: None,
            aggregators: None,
            min_users: 30,
            survey_vars: None,
            fcs_poor_max: 21.0,
            fcs_borderline_max: 35.0,
            ci_level: 0.95,
            trials: 1000,
            seed: None,
            model_targets: vec!["food_expenditure".into()],
            model_vars: vec!["topup_sum.mean".into(), "topup_mean.mean".into()],
            degree: 2,
            window_days: 30,
            denominator: "whole_period".into(),
            strict: false,
            threads: None,
            heatmap_data: false,
            scatter_data: false,
        }
    }
}

/// Parses an override value the way it would read in the config file, falling
/// back to a bare string (`FOODSEC_OUT=runs/a` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Layered configuration source.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    table: toml::Table,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        let t: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        self.table.extend(t);
        Ok(self)
    }

    /// Applies `FOODSEC_<KEY>` variables from `vars`.
    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Self {
        for (k, v) in vars {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                if key.is_empty() || key == "LOG" {
                    continue;
                }
                self.table.insert(key.to_ascii_lowercase(), parse_value(&v));
            }
        }
        self
    }

    /// One `key=value` override.
    pub fn set(mut self, key: &str, value: toml::Value) -> Self {
        self.table.insert(key.to_string(), value);
        self
    }

    pub fn set_raw(self, assignment: &str) -> Result<Self> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} must look like key=value")))?;
        Ok(self.set(k.trim(), parse_value(v.trim())))
    }

    pub fn build(self) -> Result<RunConfig> {
        let cfg: RunConfig = toml::Value::Table(self.table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.check_values()?;
        Ok(cfg)
    }
}

impl RunConfig {
    fn check_values(&self) -> Result<()> {
        self.feature_config()?;
        self.mobile_variables()?;
        self.rolling_config()?;
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::Config(format!("degree must be 1 or 2, got {}", self.degree)));
        }
        if !(1..=3).contains(&self.model_vars.len()) {
            return Err(Error::Config(format!(
                "model_vars must name 1 to 3 mobile variables, got {}",
                self.model_vars.len()
            )));
        }
        if self.window_days == 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if !(self.fcs_poor_max < self.fcs_borderline_max) {
            return Err(Error::Config("fcs_poor_max must be below fcs_borderline_max".into()));
        }
        if let (Some(a), Some(b)) = (self.period_start, self.period_end) {
            if b <= a {
                return Err(Error::Config("period_end must be after period_start".into()));
            }
        }
        Ok(())
    }

    fn explicit_input(&self, key: &str) -> Option<&PathBuf> {
        match key {
            "cdr" => self.cdr.as_ref(),
            "topup" => self.topup.as_ref(),
            "towers" => self.towers.as_ref(),
            "survey" => self.survey.as_ref(),
            "survey_meta" => self.survey_meta.as_ref(),
            "poverty" => self.poverty.as_ref(),
            "fcs_weights" => self.fcs_weights.as_ref(),
            "csi_weights" => self.csi_weights.as_ref(),
            "stock" => self.stock.as_ref(),
            "truth" => self.truth.as_ref(),
            "synth" => self.synth.as_ref(),
            _ => None,
        }
    }

    /// Resolved path of an input: explicit key, else `data/<file>` when that exists.
    pub fn input(&self, key: &str) -> Option<PathBuf> {
        if let Some(p) = self.explicit_input(key) {
            return Some(p.clone());
        }
        let file = INPUT_KEYS.iter().find(|(k, _)| *k == key)?.1;
        let p = self.data.as_ref()?.join(file);
        p.exists().then_some(p)
    }

    /// A required input that must exist. The error names the key.
    pub fn require(&self, key: &str) -> Result<PathBuf> {
        let p = self.input(key).ok_or_else(|| {
            Error::Config(format!(
                "missing input `{key}`: set `{key}` in the config file, {ENV_PREFIX}{}, or --data",
                key.to_ascii_uppercase()
            ))
        })?;
        if !p.is_file() {
            return Err(Error::Config(format!("input `{key}`: no such file {}", p.display())));
        }
        Ok(p)
    }

    /// An optional input; if given explicitly it must exist.
    pub fn optional(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.input(key) {
            None => Ok(None),
            Some(p) if p.is_file() => Ok(Some(p)),
            Some(p) => Err(Error::Config(format!("input `{key}`: no such file {}", p.display()))),
        }
    }

    pub fn require_seed(&self, what: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("`seed` is required for {what}")))
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        let night_window: NightWindow = self
            .night_window
            .parse()
            .map_err(|e: String| Error::Config(format!("night_window: {e}")))?;
        let home_rule = match self.home_rule.as_str() {
            "night" => HomeRule::Night,
            "all_hours" => HomeRule::AllHours,
            o => {
                return Err(Error::Config(format!(
                    "home_rule: expected night or all_hours, got {o:?}"
                )))
            }
        };
        let diversity_volume = match self.diversity_volume.as_str() {
            "both" => DiversityVolume::Both,
            "outgoing" => DiversityVolume::Outgoing,
            o => {
                return Err(Error::Config(format!(
                    "diversity_volume: expected both or outgoing, got {o:?}"
                )))
            }
        };
        Ok(FeatureConfig {
            night_window,
            home_rule,
            diversity_volume,
            utc_offset_minutes: self.utc_offset_minutes,
        })
    }

    pub fn mobile_variables(&self) -> Result<Vec<MobileVariable>> {
        if let Some(vars) = &self.mobile_vars {
            return vars
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|e: String| Error::Config(format!("mobile_vars: {e}")))
                })
                .collect();
        }
        let Some(aggs) = &self.aggregators else {
            return Ok(default_mobile_variables());
        };
        let aggs: Vec<Aggregator> = aggs
            .iter()
            .map(|a| {
                a.parse()
                    .map_err(|e: String| Error::Config(format!("aggregators: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut features: Vec<UserFeature> = default_mobile_variables().iter().map(|v| v.feature).collect();
        features.dedup();
        Ok(features
            .into_iter()
            .flat_map(|feature| {
                aggs.iter()
                    .map(move |&aggregator| MobileVariable { feature, aggregator })
            })
            .collect())
    }

    pub fn rolling_config(&self) -> Result<RollingConfig> {
        let denominator = match self.denominator.as_str() {
            "whole_period" => Denominator::WholePeriod,
            "active" => Denominator::ActiveInWindow,
            o => {
                return Err(Error::Config(format!(
                    "denominator: expected whole_period or active, got {o:?}"
                )))
            }
        };
        Ok(RollingConfig {
            window_days: self.window_days,
            denominator,
            utc_offset_minutes: self.utc_offset_minutes,
        })
    }

    /// Configured observation period, when both ends are set.
    pub fn period(&self) -> Result<Option<ObservationPeriod>> {
        match (self.period_start, self.period_end) {
            (Some(a), Some(b)) => {
                let at = |d: NaiveDate| d.and_hms_opt(0, 0, 0).unwrap().and_utc();
                Ok(Some(ObservationPeriod::new(at(a), at(b))?))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Config("set both period_start and period_end, or neither".into())),
        }
    }

    /// SHA-256 of the configuration with settings that cannot change outputs
    /// (`threads`, `out`, `data`) cleared and input paths cut to their file
    /// names. Input contents are hashed separately in the manifest.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        c.out = PathBuf::new();
        c.data = None;
        for p in [
            &mut c.cdr,
            &mut c.topup,
            &mut c.towers,
            &mut c.survey,
            &mut c.survey_meta,
            &mut c.poverty,
            &mut c.fcs_weights,
            &mut c.csi_weights,
            &mut c.stock,
            &mut c.truth,
            &mut c.synth,
        ] {
            if let Some(name) = p.as_ref().and_then(|x| x.file_name()) {
                *p = Some(PathBuf::from(name));
            }
        }
        let text = toml::to_string(&c).unwrap_or_default();
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
