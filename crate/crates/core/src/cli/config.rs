//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys not present keep their defaults. A run file uses the
//! [`ExperimentConfig`] field names; a matrix file adds list-valued axes
//! (`datasets`, `inlier_classes`, `regimes`, `students`, `seeds`) and treats
//! every other key as an override applied to each cell.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::DatasetKind;
use crate::models::StudentId;
use crate::pipeline::{ConfigError, ExperimentConfig, Regime};

/// Keys of a run file, in serialization order.
pub const CONFIG_KEYS: [&str; 19] = [
    "dataset",
    "inlier_class",
    "regime",
    "student_id",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "epsilon",
    "rho",
    "lambda",
    "delta",
    "train_count",
    "test_inlier_count",
    "test_anomaly_count",
    "coupled",
    "teacher_loss",
    "student_loss",
    "emd_space",
];

/// Named presets applied on top of the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Full schedule: 300 epochs, 6000 training images.
    Full,
    /// Laptop-scale schedule: 30 epochs, 2000 training images, 3 inlier classes.
    Desk,
}

/// Inlier classes kept by the desk profile.
pub const DESK_CLASSES: usize = 3;

impl Profile {
    /// Forces the profile's schedule onto `config`.
    pub fn apply(self, config: &mut ExperimentConfig) {
        if self == Profile::Desk {
            let desk = ExperimentConfig::desk();
            config.epochs = desk.epochs;
            config.train_count = desk.train_count;
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::new(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_count(key: &str, value: &str) -> Result<usize, ConfigError> {
    let v: i128 = parse(key, value)?;
    if v <= 0 {
        return Err(ConfigError::new(key, format!("must be a positive integer, got {v}")));
    }
    usize::try_from(v).map_err(|_| ConfigError::new(key, "too large"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected true or false, got `{value}`"))),
    }
}

/// Assigns one field of `config` from its textual value.
pub fn set_field(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let v = value.trim();
    match key {
        "dataset" => config.dataset = parse::<DatasetKind>(key, v)?,
        "inlier_class" => {
            let c: u8 = parse(key, v)?;
            if c > 9 {
                return Err(ConfigError::new(key, "must lie in 0..=9"));
            }
            config.inlier_class = c;
        }
        "regime" => config.regime = parse(key, v)?,
        "student_id" => config.student_id = parse(key, v)?,
        "seed" => config.seed = parse(key, v)?,
        "epochs" => config.epochs = parse_count(key, v)?,
        "batch_size" => config.batch_size = parse_count(key, v)?,
        "lr" => config.lr = parse(key, v)?,
        "epsilon" => config.epsilon = parse(key, v)?,
        "rho" => config.rho = parse(key, v)?,
        "lambda" => config.lambda = parse(key, v)?,
        "delta" => config.delta = parse(key, v)?,
        "train_count" => config.train_count = parse_count(key, v)?,
        "test_inlier_count" => config.test_inlier_count = parse_count(key, v)?,
        "test_anomaly_count" => config.test_anomaly_count = parse_count(key, v)?,
        "coupled" => config.coupled = parse_bool(key, v)?,
        "teacher_loss" => config.teacher_loss = parse(key, v)?,
        "student_loss" => config.student_loss = parse(key, v)?,
        "emd_space" => config.emd_space = parse(key, v)?,
        _ => return Err(ConfigError::new(key, "unknown key")),
    }
    Ok(())
}

/// Textual value of one field, as written by [`serialize_config`].
pub fn get_field(config: &ExperimentConfig, key: &str) -> Option<String> {
    Some(match key {
        "dataset" => config.dataset.to_string(),
        "inlier_class" => config.inlier_class.to_string(),
        "regime" => config.regime.to_string(),
        "student_id" => config.student_id.to_string(),
        "seed" => config.seed.to_string(),
        "epochs" => config.epochs.to_string(),
        "batch_size" => config.batch_size.to_string(),
        "lr" => format!("{:?}", config.lr),
        "epsilon" => format!("{:?}", config.epsilon),
        "rho" => format!("{:?}", config.rho),
        "lambda" => format!("{:?}", config.lambda),
        "delta" => format!("{:?}", config.delta),
        "train_count" => config.train_count.to_string(),
        "test_inlier_count" => config.test_inlier_count.to_string(),
        "test_anomaly_count" => config.test_anomaly_count.to_string(),
        "coupled" => config.coupled.to_string(),
        "teacher_loss" => config.teacher_loss.to_string(),
        "student_loss" => config.student_loss.to_string(),
        "emd_space" => config.emd_space.to_string(),
        _ => return None,
    })
}

/// `(line number, key, value)` for every assignment; rejects duplicates.
fn assignments(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::new(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::new(format!("line {}", n + 1), "missing key"));
        }
        if !seen.insert(k.to_string()) {
            return Err(ConfigError::new(k, format!("assigned twice (line {})", n + 1)));
        }
        out.push((n + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a run file on top of `base`. The result is not validated.
pub fn parse_config_onto(text: &str, base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut config = base;
    for (_, k, v) in assignments(text)? {
        set_field(&mut config, &k, &v)?;
    }
    Ok(config)
}

/// Parses and validates a run file over the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config = parse_config_onto(text, ExperimentConfig::default())?;
    config.validate()?;
    Ok(config)
}

pub fn serialize_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    for key in CONFIG_KEYS {
        let value = get_field(config, key).expect("known key");
        writeln!(out, "{key} = {value}").expect("write to string");
    }
    out
}

/// A cartesian product of run configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSpec {
    pub datasets: Vec<DatasetKind>,
    pub inlier_classes: Vec<u8>,
    pub regimes: Vec<Regime>,
    pub students: Vec<StudentId>,
    pub seeds: Vec<u64>,
    /// Field assignments applied to every cell, in file order.
    pub overrides: Vec<(String, String)>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            datasets: DatasetKind::ALL.to_vec(),
            inlier_classes: (0..10).collect(),
            regimes: Regime::ALL.to_vec(),
            students: StudentId::ALL.to_vec(),
            seeds: vec![0],
            overrides: Vec::new(),
        }
    }
}

fn parse_list<T: FromStr + Ord + Clone>(key: &str, value: &str, all: Option<&[T]>) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.trim() == "all" {
        if let Some(all) = all {
            return Ok(all.to_vec());
        }
    }
    let mut out: Vec<T> = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let v: T = parse(key, item)?;
        if out.contains(&v) {
            return Err(ConfigError::new(key, format!("`{item}` listed twice")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(ConfigError::new(key, "list is empty"));
    }
    Ok(out)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl MatrixSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut spec = MatrixSpec::default();
        let classes: Vec<u8> = (0..10).collect();
        for (_, k, v) in assignments(text)? {
            match k.as_str() {
                "datasets" => spec.datasets = parse_list(&k, &v, Some(&DatasetKind::ALL))?,
                "inlier_classes" => {
                    spec.inlier_classes = parse_list(&k, &v, Some(&classes))?;
                    if let Some(c) = spec.inlier_classes.iter().find(|&&c| c > 9) {
                        return Err(ConfigError::new(k, format!("class {c} outside 0..=9")));
                    }
                }
                "regimes" => spec.regimes = parse_list(&k, &v, Some(&Regime::ALL))?,
                "students" => spec.students = parse_list(&k, &v, Some(&StudentId::ALL))?,
                "seeds" => spec.seeds = parse_list(&k, &v, None)?,
                "dataset" | "inlier_class" | "regime" | "student_id" | "seed" => {
                    return Err(ConfigError::new(k.clone(), format!("is a matrix axis here; use `{}s` style lists", k)));
                }
                _ => {
                    // checked against a scratch config so errors surface at parse time
                    set_field(&mut ExperimentConfig::default(), &k, &v)?;
                    spec.overrides.push((k, v));
                }
            }
        }
        Ok(spec)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        writeln!(out, "datasets = {}", join(&self.datasets)).expect("write to string");
        writeln!(out, "inlier_classes = {}", join(&self.inlier_classes)).expect("write to string");
        writeln!(out, "regimes = {}", join(&self.regimes)).expect("write to string");
        writeln!(out, "students = {}", join(&self.students)).expect("write to string");
        writeln!(out, "seeds = {}", join(&self.seeds)).expect("write to string");
        for (k, v) in &self.overrides {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    /// Keeps the first [`DESK_CLASSES`] inlier classes under the desk profile.
    pub fn apply_profile(&mut self, profile: Profile) {
        if profile == Profile::Desk {
            self.inlier_classes.truncate(DESK_CLASSES);
        }
    }

    /// One validated configuration per cell, ordered dataset, class,
    /// regime, student, seed.
    pub fn cells(&self, profile: Option<Profile>) -> Result<Vec<ExperimentConfig>, ConfigError> {
        let mut base = ExperimentConfig::default();
        for (k, v) in &self.overrides {
            set_field(&mut base, k, v)?;
        }
        if let Some(p) = profile {
            p.apply(&mut base);
        }
        let mut out = Vec::new();
        for &dataset in &self.datasets {
            for &inlier_class in &self.inlier_classes {
                for &regime in &self.regimes {
                    for &student_id in &self.students {
                        for &seed in &self.seeds {
                            let cell = ExperimentConfig {
                                dataset,
                                inlier_class,
                                regime,
                                student_id,
                                seed,
                                ..base.clone()
                            };
                            cell.validate()?;
                            out.push(cell);
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(ConfigError::new("matrix", "no cells"));
        }
        Ok(out)
    }
}
