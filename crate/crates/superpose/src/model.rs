//! The bundled superposition `F(x) = Σ_i g_i(Φ_i(x))` with certificates and
//! a bit-exact JSON file format.

use crate::arith::{self, format_hex_f64, parse_hex_f64, q_from_f64, to_f64, Q};
use crate::coordinate::{
    annulus_decompose, assemble, solve_annulus, AnnulusSolution, Func, PiecewiseLinear1D,
    SolveError, SweepConfig,
};
use crate::exhaustion::{build_exhaustion, for_each_product, DomainSpec};
use crate::inner::{check_dump, dump_inner, InnerDump, InnerError, Ladder, LadderConfig};
use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("point {point:?} lies outside every certified region")]
    Uncertified { point: Vec<f64> },
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("model invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Measured sup error of `|f − F|` on the grid of pitch `pitch` over the
/// cube `[−radius, radius]ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertEntry {
    pub radius: f64,
    pub pitch: f64,
    /// Tolerance used for the inner evaluations.
    pub tol: f64,
    pub sup_error: f64,
}

/// Residual summary of one annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusSummary {
    pub s: i64,
    pub sweeps: usize,
    pub residual: f64,
    pub inner_error: f64,
}

/// Superposition model for dimension `n`.
#[derive(Debug, Clone)]
pub struct SuperpositionModel {
    n: usize,
    ladder: Arc<Ladder>,
    levels: u32,
    inner: Vec<InnerDump>,
    coords: Vec<PiecewiseLinear1D>,
    annuli: Vec<AnnulusSummary>,
    cert: Vec<CertEntry>,
    provenance: String,
    config_hash: String,
}

/// Inputs of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub ladder: LadderConfig,
    pub sweep: SweepConfig,
    pub s_max: i64,
    /// Certified region `[−window, window]ⁿ`.
    pub window: f64,
    /// Certification grid pitch.
    pub pitch: f64,
    /// Canonical text of the run configuration (hashed into the model).
    pub provenance: String,
}

/// Result of [`solve`]; failed annuli contribute their partial solutions.
#[derive(Debug)]
pub struct SolveReport {
    pub model: SuperpositionModel,
    pub solutions: Vec<AnnulusSolution>,
    pub failures: Vec<SolveError>,
    /// Certified sup error on the window.
    pub certified_error: f64,
}

/// SHA-256 of the provenance text, lowercase hex.
pub fn config_hash(provenance: &str) -> String {
    let digest = Sha256::digest(provenance.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the inner functions, solve every annulus `s = 1..=s_max`, assemble
/// the coordinate functions and certify on the window.
pub fn solve(f: &Func, opts: &SolveOptions) -> Result<SolveReport, ModelError> {
    let n = opts.ladder.n;
    let mut ladder_cfg = opts.ladder.clone();
    ladder_cfg.radius = ladder_cfg.radius.max(opts.s_max + 2);
    let ladder = Arc::new(Ladder::new(ladder_cfg)?);
    let ex = build_exhaustion(DomainSpec::full_space(n))
        .map_err(|e| ModelError::Invariant(e.to_string()))?;
    let problems = annulus_decompose(f.clone(), &ex, opts.s_max);
    let mut solutions = Vec::new();
    let mut failures = Vec::new();
    for p in &problems {
        match solve_annulus(p, &ladder, &opts.sweep) {
            Ok(sol) => solutions.push(sol),
            Err(e) => {
                match e.partial() {
                    Some(partial) => solutions.push(partial.clone()),
                    None => return Err(e.into()),
                }
                failures.push(e);
            }
        }
    }
    let coords = assemble(&solutions, ladder.families());
    let annuli = solutions
        .iter()
        .map(|s| AnnulusSummary {
            s: s.s,
            sweeps: s.history.len().saturating_sub(1),
            residual: s.residual,
            inner_error: s.inner_error,
        })
        .collect();
    let mut model = SuperpositionModel::new(ladder, coords, annuli, opts.provenance.clone())?;
    let certified_error = model.certify(f, opts.window, opts.pitch, opts.sweep.tol)?;
    Ok(SolveReport { model, solutions, failures, certified_error })
}

impl SuperpositionModel {
    /// Assemble a model; the ladder is built to level 1 and the level-1
    /// inner dumps are recorded for validation on load. `provenance` is the
    /// canonical text of the run configuration.
    pub fn new(
        ladder: Arc<Ladder>,
        coords: Vec<PiecewiseLinear1D>,
        annuli: Vec<AnnulusSummary>,
        provenance: String,
    ) -> Result<Self, ModelError> {
        let fams = ladder.families();
        if coords.len() != fams {
            return Err(ModelError::Invariant(format!(
                "expected {fams} coordinate functions, got {}",
                coords.len()
            )));
        }
        ladder.ensure_levels(1)?;
        let inner = (0..fams).map(|i| dump_inner(&ladder, i, 1)).collect::<Result<_, _>>()?;
        Ok(SuperpositionModel {
            n: ladder.n(),
            levels: ladder.built_levels(),
            ladder,
            inner,
            coords,
            annuli,
            cert: Vec::new(),
            config_hash: config_hash(&provenance),
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of basis functions, `2n + 1`.
    pub fn families(&self) -> usize {
        2 * self.n + 1
    }

    pub fn ladder(&self) -> &Arc<Ladder> {
        &self.ladder
    }

    pub fn inner_count(&self) -> usize {
        self.inner.len()
    }

    pub fn coords(&self) -> &[PiecewiseLinear1D] {
        &self.coords
    }

    pub fn annuli(&self) -> &[AnnulusSummary] {
        &self.annuli
    }

    pub fn cert(&self) -> &[CertEntry] {
        &self.cert
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Largest certified cube radius.
    pub fn certified_radius(&self) -> Option<f64> {
        self.cert.iter().map(|c| c.radius).reduce(f64::max)
    }

    pub fn is_certified(&self, x: &[f64]) -> bool {
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.certified_radius().is_some_and(|r| norm <= r)
    }

    /// Ladder level whose `ε_k` keeps every term within `tol/(2n+1)`:
    /// `ε_k ≤ tol / ((2n+1)·max Lip(g_i))`.
    pub fn inner_level(&self, tol: f64) -> Result<u32, ModelError> {
        let lip = self.coords.iter().map(|g| g.lipschitz()).fold(0.0, f64::max);
        if lip == 0.0 {
            return Ok(1);
        }
        let tol_inner = tol / (self.families() as f64 * lip);
        let tol_q = q_from_f64(tol_inner)
            .filter(|t| *t > Q::from_integer(0.into()))
            .ok_or_else(|| ModelError::Invariant(format!("tolerance {tol} is not usable")))?;
        Ok(self.ladder.level_for_tolerance(&tol_q)?)
    }

    fn eval_at_level(&self, x: &[f64], k: u32) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for (i, g) in self.coords.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            total += g.eval(self.ladder.eval_ladder_f64(i, k, x)?);
        }
        Ok(total)
    }

    /// `F(x) = Σ_i g_i(Φ_i(x))` with the inner functions evaluated to the
    /// tolerance budget of `tol`; `x` must lie in a certified region.
    pub fn reconstruct(&self, x: &[f64], tol: f64) -> Result<f64, ModelError> {
        if x.len() != self.n {
            return Err(ModelError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        if !self.is_certified(x) {
            return Err(ModelError::Uncertified { point: x.to_vec() });
        }
        let k = self.inner_level(tol)?;
        self.eval_at_level(x, k)
    }

    /// `(Φ_i(x))_i` at the level serving `tol` (lower ends of the brackets).
    pub fn inner_values(&self, x: &[f64], tol: f64) -> Result<Vec<f64>, ModelError> {
        let k = self.inner_level(tol)?;
        (0..self.families())
            .map(|i| Ok(self.ladder.eval_ladder_f64(i, k, x)?))
            .collect()
    }

    /// Sup of `|f − F|` on the pitch grid of `[−radius, radius]ⁿ`; recorded
    /// as a certificate entry.
    pub fn certify(&mut self, f: &Func, radius: f64, pitch: f64, tol: f64) -> Result<f64, ModelError> {
        let sup = self.measure(f, radius, pitch, tol)?;
        self.cert.push(CertEntry { radius, pitch, tol, sup_error: sup });
        Ok(sup)
    }

    /// Recompute a sup error without recording it.
    pub fn measure(&self, f: &Func, radius: f64, pitch: f64, tol: f64) -> Result<f64, ModelError> {
        if !(radius > 0.0 && pitch > 0.0) {
            return Err(ModelError::Invariant("radius and pitch must be positive".into()));
        }
        let k = self.inner_level(tol)?;
        let steps = (radius / pitch).ceil() as i64;
        let h = radius / steps as f64;
        let axis: Vec<f64> = (-steps..=steps).map(|j| j as f64 * h).collect();
        let mut points = Vec::new();
        for_each_product(&vec![axis; self.n], |p| points.push(p.to_vec()));
        let errs: Vec<f64> = points
            .par_iter()
            .map(|p| Ok((f(p) - self.eval_at_level(p, k)?).abs()))
            .collect::<Result<_, ModelError>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }

    /// Recompute every certificate against `f`.
    pub fn recheck(&self, f: &Func) -> Result<Vec<f64>, ModelError> {
        self.cert.iter().map(|c| self.measure(f, c.radius, c.pitch, c.tol)).collect()
    }

    fn to_file(&self) -> ModelFile {
        let cfg = self.ladder.config();
        ModelFile {
            n: self.n,
            ladder: LadderFile {
                p1: arith::q_to_string(&cfg.p1),
                eps1_cap: arith::q_to_string(&cfg.eps1_cap),
                radius: cfg.radius,
                max_level: cfg.max_level,
            },
            levels: self
                .ladder
                .schedule()
                .into_iter()
                .take(self.levels as usize)
                .map(|p| LevelFile {
                    k: p.k,
                    gamma: arith::q_to_string(&p.gamma),
                    epsilon: arith::q_to_string(&p.epsilon),
                    period: arith::q_to_string(&p.period),
                    primes: p.primes.iter().map(|r| r.to_string()).collect(),
                })
                .collect(),
            inner: self.inner.clone(),
            coords: self
                .coords
                .iter()
                .enumerate()
                .map(|(i, g)| CoordFile {
                    family: i + 1,
                    breakpoints: g.breakpoints().iter().map(|v| format_hex_f64(*v)).collect(),
                    values: g.values().iter().map(|v| format_hex_f64(*v)).collect(),
                })
                .collect(),
            annuli: self
                .annuli
                .iter()
                .map(|a| AnnulusFile {
                    s: a.s,
                    sweeps: a.sweeps,
                    residual: format_hex_f64(a.residual),
                    inner_error: format_hex_f64(a.inner_error),
                })
                .collect(),
            cert: self
                .cert
                .iter()
                .map(|c| CertFile {
                    radius: format_hex_f64(c.radius),
                    pitch: format_hex_f64(c.pitch),
                    tol: format_hex_f64(c.tol),
                    sup_error: format_hex_f64(c.sup_error),
                })
                .collect(),
            provenance: self.provenance.clone(),
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        s.push('\n');
        s
    }

    /// Parse and re-validate: family counts, the schedule regenerated from
    /// the ladder configuration, every dumped inner value, and the
    /// coordinate-function invariants.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let n = file.n;
        if n == 0 {
            return Err(ModelError::Invariant("dimension must be at least 1".into()));
        }
        let fams = 2 * n + 1;
        if config_hash(&file.provenance) != file.config_hash {
            return Err(ModelError::Invariant("configuration hash does not match provenance".into()));
        }
        if file.inner.len() != fams {
            return Err(ModelError::Invariant(format!(
                "expected {fams} inner functions, got {}",
                file.inner.len()
            )));
        }
        if file.coords.len() != fams {
            return Err(ModelError::Invariant(format!(
                "expected {fams} coordinate functions, got {}",
                file.coords.len()
            )));
        }
        let parse_q = |s: &str| {
            arith::q_parse(s).ok_or_else(|| ModelError::Malformed(format!("bad rational {s:?}")))
        };
        let hex = |s: &str| parse_hex_f64(s).map_err(|e| ModelError::Malformed(e.to_string()));
        let cfg = LadderConfig {
            n,
            p1: parse_q(&file.ladder.p1)?,
            eps1_cap: parse_q(&file.ladder.eps1_cap)?,
            radius: file.ladder.radius,
            max_level: file.ladder.max_level,
        };
        let ladder = Arc::new(Ladder::new(cfg)?);
        let levels = file.levels.len() as u32;
        ladder.ensure_levels(levels)?;
        for (lv, spec) in file.levels.iter().zip(ladder.schedule()) {
            let primes: Vec<String> = spec.primes.iter().map(BigUint::to_string).collect();
            if lv.k != spec.k
                || parse_q(&lv.epsilon)? != spec.epsilon
                || parse_q(&lv.period)? != spec.period
                || parse_q(&lv.gamma)? != spec.gamma
                || lv.primes != primes
            {
                return Err(ModelError::Invariant(format!("level {} schedule differs", lv.k)));
            }
        }
        for (i, d) in file.inner.iter().enumerate() {
            if d.family != i + 1 || d.n != n {
                return Err(ModelError::Invariant(format!("inner function {} is mislabelled", i + 1)));
            }
            if let Some(w) = check_dump(&ladder, d)? {
                return Err(ModelError::Invariant(w));
            }
        }
        let mut coords = Vec::with_capacity(fams);
        for (i, c) in file.coords.iter().enumerate() {
            if c.family != i + 1 {
                return Err(ModelError::Invariant(format!("coordinate function {} is mislabelled", i + 1)));
            }
            let xs = c.breakpoints.iter().map(|s| hex(s)).collect::<Result<Vec<_>, _>>()?;
            let ys = c.values.iter().map(|s| hex(s)).collect::<Result<Vec<_>, _>>()?;
            coords.push(
                PiecewiseLinear1D::new(xs, ys).map_err(|e| ModelError::Invariant(e.to_string()))?,
            );
        }
        let annuli = file
            .annuli
            .iter()
            .map(|a| {
                Ok(AnnulusSummary {
                    s: a.s,
                    sweeps: a.sweeps,
                    residual: hex(&a.residual)?,
                    inner_error: hex(&a.inner_error)?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        let cert = file
            .cert
            .iter()
            .map(|c| {
                Ok(CertEntry {
                    radius: hex(&c.radius)?,
                    pitch: hex(&c.pitch)?,
                    tol: hex(&c.tol)?,
                    sup_error: hex(&c.sup_error)?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(SuperpositionModel {
            n,
            ladder,
            levels,
            inner: file.inner,
            coords,
            annuli,
            cert,
            provenance: file.provenance,
            config_hash: file.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// `ε_k` of a model's ladder at level `k`, as a double.
pub fn epsilon_f64(model: &SuperpositionModel, k: u32) -> Result<f64, ModelError> {
    Ok(to_f64(model.ladder.level(k)?.epsilon()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n: usize,
    ladder: LadderFile,
    levels: Vec<LevelFile>,
    inner: Vec<InnerDump>,
    coords: Vec<CoordFile>,
    annuli: Vec<AnnulusFile>,
    cert: Vec<CertFile>,
    provenance: String,
    config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LadderFile {
    p1: String,
    eps1_cap: String,
    radius: i64,
    max_level: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelFile {
    k: u32,
    gamma: String,
    epsilon: String,
    period: String,
    primes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoordFile {
    family: usize,
    breakpoints: Vec<String>,
    values: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnulusFile {
    s: i64,
    sweeps: usize,
    residual: String,
    inner_error: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertFile {
    radius: String,
    pitch: String,
    tol: String,
    sup_error: String,
}
