//! Run configuration: defaults, JSON config file, command-line overrides.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use superpose::arith::{q, q_from_f64, Q};
use superpose::coordinate::{s_max_for_window, SweepConfig};
use superpose::cover::plan_levels_with;
use superpose::inner::LadderConfig;

use crate::CliError;

/// Everything that determines a run's outputs. Serialized canonically, it is
/// the provenance text hashed into model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub kmax: u32,
    /// Outermost annulus; defaults to the smallest `s` with window ⊆ `K_s`.
    pub smax: Option<i64>,
    pub delta: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    #[serde(rename = "fn")]
    pub function: String,
    pub fn_params: BTreeMap<String, f64>,
    /// Half-width of the certified cube `[−window, window]ⁿ`.
    pub window: f64,
    pub seed: u64,
    /// Upper bound on `ε_1`.
    pub eps1: f64,
    /// Level-1 period of the inner-function ladder (default by dimension).
    pub p1: Option<f64>,
    /// Sample points per cover level in `build`.
    pub samples: usize,
    /// Ladder levels built and verified by `build`.
    pub inner_levels: u32,
    /// Certification grid pitch (default: window / 512 for n = 1, / 32 otherwise).
    pub pitch: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 1,
            kmax: 4,
            smax: None,
            delta: 0.1,
            tol: 1e-3,
            max_sweeps: 40,
            function: "zero".into(),
            fn_params: BTreeMap::new(),
            window: 3.0,
            seed: 0,
            eps1: 1.0 / 64.0,
            p1: None,
            samples: 10_000,
            inner_levels: 2,
            pitch: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical JSON used as provenance.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn s_max(&self) -> i64 {
        self.smax.unwrap_or_else(|| s_max_for_window(self.window))
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
            .unwrap_or_else(|| self.window / if self.n == 1 { 512.0 } else { 32.0 })
    }

    fn eps1_q(&self) -> Result<Q, CliError> {
        q_from_f64(self.eps1).ok_or_else(|| CliError::Config(format!("ε_1 = {} is not finite", self.eps1)))
    }

    pub fn ladder(&self) -> Result<LadderConfig, CliError> {
        let mut cfg = LadderConfig::default_for(self.n);
        cfg.eps1_cap = self.eps1_q()?;
        if let Some(p1) = self.p1 {
            cfg.p1 = q_from_f64(p1).ok_or_else(|| CliError::Config(format!("p1 = {p1} is not finite")))?;
        }
        cfg.max_level = self.kmax.max(self.inner_levels);
        cfg.radius = cfg.radius.max(self.s_max() + 2);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep(&self) -> Result<SweepConfig, CliError> {
        let cfg = SweepConfig {
            delta: self.delta,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            ..SweepConfig::default()
        };
        cfg.validate(self.n).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Check every numeric field against the ranges the library requires.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(CliError::Config("n must be at least 1".into()));
        }
        if self.kmax == 0 {
            return Err(CliError::Config("kmax must be at least 1".into()));
        }
        if self.inner_levels == 0 {
            return Err(CliError::Config("inner_levels must be at least 1".into()));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(CliError::Config(format!("window must be positive, got {}", self.window)));
        }
        if self.smax.is_some_and(|s| s < 1) {
            return Err(CliError::Config("smax must be at least 1".into()));
        }
        if let Some(p) = self.pitch {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CliError::Config(format!("pitch must be positive, got {p}")));
            }
        }
        plan_levels_with(self.n, self.kmax, &self.eps1_q()?, &q(1, 4))?;
        self.ladder()?;
        self.sweep()?;
        superpose::functions::lookup(&self.function, self.n, &self.fn_params)?;
        Ok(())
    }
}
