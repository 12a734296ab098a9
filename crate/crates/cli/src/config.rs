//! Flat `key = value` run configuration with command-line overrides.
//!
//! ```text
//! # comment
//! v_max = 2
//! h_c = 4
//! cars = 100          # alias: N
//! oscillations = 1    # alias: n
//! a_hat = 1.99
//! branch = first
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use ovwave::diagnostics::StabilityWindows;
use ovwave::ovsim::IntegratorSettings;
use ovwave::paramspace::Branch;

use crate::CliError;

/// Every key the config grammar accepts, after alias resolution.
pub const KEYS: &[&str] = &[
    "v_max",
    "h_c",
    "cars",
    "oscillations",
    "a_hat",
    "branch",
    "kappa1",
    "rel_tol",
    "abs_tol",
    "max_step",
    "sample_dt",
    "t_end",
    "k_min",
    "k_max",
    "steps",
    "early_start",
    "early_end",
    "late_start",
    "late_end",
];

fn canonical_key(key: &str) -> &str {
    match key {
        "N" => "cars",
        "n" => "oscillations",
        "kappa1_over_gamma" => "kappa1",
        other => other,
    }
}

/// Raw settings in the order they were applied; later entries win.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{origin}:{}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = canonical_key(key.trim());
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!(
                    "{origin}:{}: unknown key {key:?}",
                    lineno + 1
                )));
            }
            if value.is_empty() {
                return Err(CliError::Config(format!(
                    "{origin}:{}: empty value for {key}",
                    lineno + 1
                )));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "{origin}:{}: duplicate key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(canonical_key(key).to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn real(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CliError::Config(format!("{key}: {v:?} is not a finite number")))
            })
            .transpose()
    }

    fn integer(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| CliError::Config(format!("{key}: {v:?} is not a non-negative integer")))
            })
            .transpose()
    }
}

/// How the wave is chosen: directly by `κ₁/γ`, or by inverting the sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveSelector {
    Kappa1(f64),
    Sensitivity { a_hat: f64, branch: Branch },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub v_max: f64,
    pub h_c: f64,
    pub cars: usize,
    pub oscillations: u32,
    pub selector: Option<WaveSelector>,
    pub integrator: IntegratorSettings,
    pub t_end: f64,
    pub k_range: Option<(f64, f64)>,
    pub steps: usize,
    #[serde(skip)]
    pub early: Option<(f64, f64)>,
    #[serde(skip)]
    pub late: Option<(f64, f64)>,
}

fn parse_branch(v: &str) -> Result<Branch, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "first" | "1" | "down" => Ok(Branch::First),
        "second" | "2" | "up" => Ok(Branch::Second),
        _ => Err(CliError::Config(format!(
            "branch: expected first or second, got {v:?}"
        ))),
    }
}

fn pair(lo: Option<f64>, hi: Option<f64>, name: &str) -> Result<Option<(f64, f64)>, CliError> {
    match (lo, hi) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) if a < b => Ok(Some((a, b))),
        (Some(_), Some(_)) => Err(CliError::Config(format!("{name}: start must be below end"))),
        _ => Err(CliError::Config(format!("{name}: give both start and end"))),
    }
}

impl RunConfig {
    pub fn resolve(s: &Settings) -> Result<Self, CliError> {
        let cars = s.integer("cars")?.unwrap_or(100);
        let oscillations = s.integer("oscillations")?.unwrap_or(1);
        let a_hat = s.real("a_hat")?;
        let kappa1 = s.real("kappa1")?;
        let branch = s.raw("branch").map(parse_branch).transpose()?;
        let selector = match (kappa1, a_hat) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either kappa1 or a_hat (with branch), not both".into(),
                ))
            }
            (Some(k), None) => {
                if branch.is_some() {
                    return Err(CliError::Config(
                        "branch is implied by kappa1; do not give both".into(),
                    ));
                }
                Some(WaveSelector::Kappa1(k))
            }
            (None, Some(a)) => Some(WaveSelector::Sensitivity {
                a_hat: a,
                branch: branch.unwrap_or(Branch::First),
            }),
            (None, None) => None,
        };
        let defaults = IntegratorSettings::default();
        let integrator = IntegratorSettings {
            rel_tol: s.real("rel_tol")?.unwrap_or(defaults.rel_tol),
            abs_tol: s.real("abs_tol")?.unwrap_or(defaults.abs_tol),
            max_step: s.real("max_step")?.unwrap_or(defaults.max_step),
            dense_sample_dt: s.real("sample_dt")?.unwrap_or(defaults.dense_sample_dt),
        };
        integrator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let t_end = s.real("t_end")?.unwrap_or(100.0);
        if !(t_end > 0.0) {
            return Err(CliError::Config(format!("t_end must be positive, got {t_end}")));
        }
        let steps = s.integer("steps")?.unwrap_or(2001) as usize;
        if steps < 2 {
            return Err(CliError::Config("steps must be at least 2".into()));
        }
        let cfg = Self {
            v_max: s.real("v_max")?.unwrap_or(2.0),
            h_c: s.real("h_c")?.unwrap_or(4.0),
            cars: cars as usize,
            oscillations: u32::try_from(oscillations)
                .map_err(|_| CliError::Config("oscillations too large".into()))?,
            selector,
            integrator,
            t_end,
            k_range: pair(s.real("k_min")?, s.real("k_max")?, "k_min/k_max")?,
            steps,
            early: pair(s.real("early_start")?, s.real("early_end")?, "early window")?,
            late: pair(s.real("late_start")?, s.real("late_end")?, "late window")?,
        };
        if !(cfg.v_max > 0.0 && cfg.h_c > 0.0) {
            return Err(CliError::Config("v_max and h_c must be positive".into()));
        }
        if cfg.cars < 2 || cfg.oscillations < 1 {
            return Err(CliError::Config(
                "need at least 2 cars and 1 oscillation".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn selector(&self) -> Result<WaveSelector, CliError> {
        self.selector.ok_or_else(|| {
            CliError::Config("this command needs a wave: give kappa1, or a_hat and branch".into())
        })
    }

    /// Windows for the stability report; the late one defaults to the
    /// last 400 time units of a run ending at `t_end`.
    pub fn windows(&self, t_end: f64) -> StabilityWindows {
        let defaults = StabilityWindows::default();
        StabilityWindows {
            early: self.early.unwrap_or(defaults.early),
            late: self
                .late
                .unwrap_or(((t_end - 400.0).max(0.0), t_end)),
            stride: defaults.stride,
        }
    }

    /// The fields that determine a simulated trajectory.
    pub fn physics(&self) -> PhysicsKey {
        PhysicsKey {
            v_max: self.v_max,
            h_c: self.h_c,
            cars: self.cars,
            oscillations: self.oscillations,
            selector: self.selector,
            integrator: self.integrator,
            t_end: self.t_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicsKey {
    pub v_max: f64,
    pub h_c: f64,
    pub cars: usize,
    pub oscillations: u32,
    pub selector: Option<WaveSelector>,
    pub integrator: IntegratorSettings,
    pub t_end: f64,
}
