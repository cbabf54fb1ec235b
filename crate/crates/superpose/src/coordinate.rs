//! Coordinate functions: annulus decomposition and contraction sweeps.
//!
//! `f = Σ_s f_s` with `f_s = f·(b_s − b_{s−1})`, where the cutoff
//! `b_s(x) = clamp(s + 1 − ‖x‖∞, 0, 1)` equals 1 on `K_s` and vanishes off
//! `int K_{s+1}`; `f_s` is therefore supported in `L_s`.
//!
//! Each annulus is solved by successive approximation. A sweep at ladder
//! level `k` gives every family `i` an increment `Δ_i` that equals
//! `r(centre(S))/(n+1)` on the image interval `[c_S, c_S + ε_k]` of every
//! cell `S` meeting the window `K_{s+2}` and tapers linearly to zero across
//! half of the spacing `1/r_k^i − ε_k` to the neighbouring intervals. A point
//! covered by `c ≥ n+1` cells gets `c` accurate terms and at most `2n+1−c`
//! stray terms bounded by `R/(n+1)`, so the residual contracts by
//! `n/(n+1) + (2n+1)δ/(n+1)` whenever the residual oscillates by at most
//! `δR` inside each cell.

use crate::arith::{self, ceil, floor, qi, to_f64, Q};
use crate::exhaustion::{for_each_product, Exhaustion};
use crate::inner::{InnerError, Ladder};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

/// A pointwise-evaluable real function on `ℝⁿ`.
pub type Func = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Errors of the piecewise-linear carrier.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlError {
    #[error("breakpoints and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("breakpoints must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("values must be finite (index {0})")]
    NonFinite(usize),
    #[error("the first and last values must be zero")]
    NonZeroEnds,
}

/// Continuous piecewise-linear function of one variable with compact
/// support: linear between breakpoints, zero outside them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PiecewiseLinear1D {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear1D {
    /// The zero function.
    pub fn zero() -> Self {
        Self::default()
    }

    /// Validated constructor: strictly increasing finite breakpoints,
    /// finite values, zero at both ends (so the extension by zero is
    /// continuous).
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, PlError> {
        if xs.len() != ys.len() {
            return Err(PlError::LengthMismatch(xs.len(), ys.len()));
        }
        for (j, x) in xs.iter().enumerate() {
            if !x.is_finite() || (j > 0 && xs[j - 1] >= *x) {
                return Err(PlError::NotIncreasing(j));
            }
        }
        if let Some(j) = ys.iter().position(|y| !y.is_finite()) {
            return Err(PlError::NonFinite(j));
        }
        if !xs.is_empty() && (ys[0] != 0.0 || ys[ys.len() - 1] != 0.0) {
            return Err(PlError::NonZeroEnds);
        }
        Ok(PiecewiseLinear1D { xs, ys })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn is_zero(&self) -> bool {
        self.ys.iter().all(|y| *y == 0.0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        let xs = &self.xs;
        if xs.is_empty() || y <= xs[0] || y >= xs[xs.len() - 1] {
            return 0.0;
        }
        let j = xs.partition_point(|x| *x <= y);
        let (x0, x1) = (xs[j - 1], xs[j]);
        let (y0, y1) = (self.ys[j - 1], self.ys[j]);
        if y == x0 {
            return y0;
        }
        y0 + (y1 - y0) * ((y - x0) / (x1 - x0))
    }

    /// Pointwise sum over the merged, deduplicated breakpoints.
    pub fn add(&self, other: &Self) -> Self {
        let mut xs = Vec::with_capacity(self.xs.len() + other.xs.len());
        let (mut a, mut b) = (0, 0);
        while a < self.xs.len() || b < other.xs.len() {
            let next = match (self.xs.get(a), other.xs.get(b)) {
                (Some(&u), Some(&v)) if u < v => {
                    a += 1;
                    u
                }
                (Some(&u), Some(&v)) if v < u => {
                    b += 1;
                    v
                }
                (Some(&u), Some(_)) => {
                    a += 1;
                    b += 1;
                    u
                }
                (Some(&u), None) => {
                    a += 1;
                    u
                }
                (None, Some(&v)) => {
                    b += 1;
                    v
                }
                (None, None) => unreachable!(),
            };
            xs.push(next);
        }
        let ys = xs.iter().map(|&x| self.eval_at_knot(x) + other.eval_at_knot(x)).collect();
        PiecewiseLinear1D { xs, ys }
    }

    /// Value at `x`, exact at stored breakpoints.
    fn eval_at_knot(&self, x: f64) -> f64 {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(j) => self.ys[j],
            Err(_) => self.eval(x),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        PiecewiseLinear1D { xs: self.xs.clone(), ys: self.ys.iter().map(|y| y * c).collect() }
    }

    /// Smallest closed interval outside which the function vanishes.
    pub fn support(&self) -> Option<(f64, f64)> {
        let first = self.ys.iter().position(|y| *y != 0.0)?;
        let last = self.ys.iter().rposition(|y| *y != 0.0)?;
        Some((self.xs[first - 1], self.xs[last + 1]))
    }

    /// Largest absolute slope.
    pub fn lipschitz(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.ys.iter().fold(0.0, |m, y| m.max(y.abs()))
    }

    /// Sum of disjoint trapezoids `(foot_lo, top_lo, top_hi, foot_hi,
    /// height)` given in increasing order.
    pub fn from_trapezoids(traps: &[(f64, f64, f64, f64, f64)]) -> Self {
        let mut xs: Vec<f64> = Vec::with_capacity(4 * traps.len());
        let mut ys: Vec<f64> = Vec::with_capacity(4 * traps.len());
        for &(a, b, c, d, h) in traps {
            if h == 0.0 {
                continue;
            }
            for (x, y) in [(a, 0.0), (b, h), (c, h), (d, 0.0)] {
                // Touching feet share their zero breakpoint and a top of zero
                // width collapses to a single breakpoint.
                if let Some(&last) = xs.last() {
                    debug_assert!(x >= last, "trapezoids overlap");
                    if x <= last {
                        debug_assert!(y == *ys.last().expect("paired"), "trapezoids overlap");
                        continue;
                    }
                }
                xs.push(x);
                ys.push(y);
            }
        }
        PiecewiseLinear1D { xs, ys }
    }
}

/// Cutoff `b_s(x) = clamp(s + 1 − ‖x‖∞, 0, 1)`; `b_s ≡ 0` for `s ≤ 0`.
pub fn cutoff(s: i64, x: &[f64]) -> f64 {
    if s <= 0 {
        return 0.0;
    }
    let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (s as f64 + 1.0 - norm).clamp(0.0, 1.0)
}

/// One annulus `f_s = f·(b_s − b_{s−1})`, supported in `L_s`.
#[derive(Clone)]
pub struct AnnulusProblem {
    pub s: i64,
    f: Func,
}

impl std::fmt::Debug for AnnulusProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnulusProblem").field("s", &self.s).finish()
    }
}

impl AnnulusProblem {
    pub fn new(s: i64, f: Func) -> Self {
        AnnulusProblem { s, f }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let w = cutoff(self.s, x) - cutoff(self.s - 1, x);
        if w == 0.0 {
            0.0
        } else {
            (self.f)(x) * w
        }
    }

    /// The identity is enforced on `K_{s+2}`.
    pub fn window_radius(&self) -> i64 {
        self.s + 2
    }
}

/// `f = Σ_{s=1}^{s_max} f_s` on `K_{s_max}`.
pub fn annulus_decompose(f: Func, ex: &Exhaustion, s_max: i64) -> Vec<AnnulusProblem> {
    let _ = ex.n();
    (1..=s_max.max(1)).map(|s| AnnulusProblem::new(s, f.clone())).collect()
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Oscillation budget: residual variation inside a cell `≤ δ·R`.
    pub delta: f64,
    pub max_sweeps: usize,
    /// Stop once the residual sup-norm is at most `tol`.
    pub tol: f64,
    /// Allowed excess of a measured ratio over the contraction target.
    pub margin: f64,
    /// Upper bound on the cells per family a sweep may touch.
    pub max_cells: u64,
    /// Residual grid pitch is `γ_k / grid_refine`.
    pub grid_refine: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            delta: 0.1,
            max_sweeps: 40,
            tol: 1e-3,
            margin: 0.05,
            max_cells: 400_000,
            grid_refine: 4,
        }
    }
}

impl SweepConfig {
    /// `n/(n+1) + (2n+1)δ/(n+1)`.
    pub fn theta_target(&self, n: usize) -> f64 {
        let n = n as f64;
        n / (n + 1.0) + (2.0 * n + 1.0) * self.delta / (n + 1.0)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, n: usize) -> Result<(), SolveError> {
        if !(self.delta > 0.0) {
            return Err(SolveError::InvalidConfig(format!("δ must be positive, got {}", self.delta)));
        }
        if !(self.theta_target(n) < 1.0) {
            return Err(SolveError::InvalidConfig(format!(
                "δ = {} gives contraction target {} ≥ 1",
                self.delta,
                self.theta_target(n)
            )));
        }
        if !(self.tol > 0.0) {
            return Err(SolveError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.grid_refine == 0 {
            return Err(SolveError::InvalidConfig("grid refinement must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub s: i64,
    /// 0 for the initial residual.
    pub sweep: usize,
    pub level: u32,
    pub residual_sup: f64,
    /// `residual_sup / previous residual_sup` (`None` for sweep 0).
    pub ratio: Option<f64>,
}

/// Solution of one annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusSolution {
    pub s: i64,
    pub g: Vec<PiecewiseLinear1D>,
    pub history: Vec<SweepRecord>,
    /// Residual sup-norm on the verification grid of `K_{s+2}`.
    pub residual: f64,
    /// Bound on the error from evaluating `Φ_i` at a finite level.
    pub inner_error: f64,
}

impl AnnulusSolution {
    /// Residual plus inner-evaluation error.
    pub fn certified_error(&self) -> f64 {
        self.residual + self.inner_error
    }
}

/// Errors of the annulus solver.
#[derive(Debug, Error, Clone)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error("annulus {s}, sweep {sweep}: contraction ratio {ratio:.4} exceeds {bound:.4}")]
    ContractionViolation { s: i64, sweep: usize, ratio: f64, bound: f64 },
    #[error("annulus {s}: residual {residual:.3e} needs ladder level {level}, which cannot be resolved: {reason}")]
    ResolutionLimit { s: i64, level: u32, residual: f64, reason: String, partial: Box<AnnulusSolution> },
    #[error("annulus {s}: residual {residual:.3e} above tolerance after {sweeps} sweeps")]
    MaxSweeps { s: i64, sweeps: usize, residual: f64, partial: Box<AnnulusSolution> },
    #[error("annulus {s}: g_{family} has support [{lo}, {hi}] outside [s−2, s+2+1/4]")]
    SupportViolation { s: i64, family: usize, lo: f64, hi: f64 },
}

impl SolveError {
    /// The partial solution carried by budget and resolution failures.
    pub fn partial(&self) -> Option<&AnnulusSolution> {
        match self {
            SolveError::ResolutionLimit { partial, .. } | SolveError::MaxSweeps { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}

/// Dense table of level-`k` cell values of one family around `K_radius`,
/// for fast double-precision evaluation of `f_k^i`.
#[derive(Debug, Clone)]
pub struct PhiTable {
    n: usize,
    period: f64,
    offset: f64,
    side: f64,
    zlo: i64,
    dim: usize,
    values: Vec<f64>,
}

impl PhiTable {
    /// Cells meeting `[−radius, radius]ⁿ`, plus one more layer each way.
    pub fn build(ladder: &Ladder, i: usize, k: u32, radius: i64) -> Result<Self, InnerError> {
        let spec = ladder.level(k)?;
        let grid = &spec.grid;
        let n = ladder.n();
        let (lo, hi) = grid.axis_range_meeting(i, &qi(-radius), &qi(radius));
        let lo = lo - BigInt::from(1);
        let hi = hi + BigInt::from(1);
        let zlo = lo.to_i64().ok_or_else(|| InnerError::InvalidConfig("lattice too large".into()))?;
        let zhi = hi.to_i64().ok_or_else(|| InnerError::InvalidConfig("lattice too large".into()))?;
        let dim = (zhi - zlo + 1) as usize;
        let total = dim.pow(n as u32);
        let values = (0..total)
            .into_par_iter()
            .map(|idx| {
                let mut rest = idx;
                let lattice: Vec<BigInt> = (0..n)
                    .map(|_| {
                        let d = rest % dim;
                        rest /= dim;
                        BigInt::from(zlo + d as i64)
                    })
                    .collect();
                ladder.cell_value(i, k, &lattice).map(|c| to_f64(&c))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PhiTable {
            n,
            period: to_f64(grid.period()),
            offset: to_f64(&grid.offset(i)),
            side: to_f64(grid.side()),
            zlo,
            dim,
            values,
        })
    }

    /// `f_k^i(x)` in double precision; `None` outside the table.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        let gap = self.period - self.side;
        let mut base = [0usize; 8];
        let mut ts = [0f64; 8];
        let n = self.n;
        assert!(n <= 8, "tables support n ≤ 8");
        for j in 0..n {
            let u = (x[j] - self.offset) / self.period;
            let z = u.floor();
            let within = (u - z) * self.period;
            let t = if within <= self.side { 0.0 } else { ((within - self.side) / gap).min(1.0) };
            let d = z as i64 - self.zlo;
            if d < 0 || d + 1 >= self.dim as i64 {
                return None;
            }
            base[j] = d as usize;
            ts[j] = t;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut skip = false;
            for j in 0..n {
                let bit = (corner >> j) & 1;
                let wj = if bit == 0 { 1.0 - ts[j] } else { ts[j] };
                if wj == 0.0 {
                    skip = true;
                    break;
                }
                w *= wj;
                idx += (base[j] + bit) * stride;
                stride *= self.dim;
            }
            if !skip {
                total += w * self.values[idx];
            }
        }
        Some(total)
    }
}

/// A cell taking part in a sweep.
#[derive(Debug, Clone)]
struct SweepCell {
    lattice: Vec<i64>,
    centre_phi: Vec<f64>,
    centre_f: f64,
    /// Flat top of the increment (image interval, padded outward).
    top: (f64, f64),
    /// Feet of the increment.
    feet: (f64, f64),
}

/// Solver state for one annulus at one ladder level.
struct Annulus {
    n: usize,
    epsilon: f64,
    families: usize,
    /// Per family: period, offset, side (doubles).
    geometry: Vec<(f64, f64, f64)>,
    points: Vec<Vec<f64>>,
    /// `phi[p * families + i]`.
    phi: Vec<f64>,
    target: Vec<f64>,
    cells: Vec<Vec<SweepCell>>,
    /// Per family: lattice → index into `cells[i]`.
    index: Vec<HashMap<Vec<i64>, usize>>,
}

fn ulp_pad(v: f64) -> f64 {
    4.0 * f64::EPSILON * v.abs().max(1.0)
}

impl Annulus {
    fn build(
        problem: &AnnulusProblem,
        ladder: &Ladder,
        level: u32,
        cfg: &SweepConfig,
    ) -> Result<Self, String> {
        let n = ladder.n();
        let families = ladder.families();
        let spec = ladder.level(level).map_err(|e| e.to_string())?;
        let w = problem.window_radius();
        if ladder.config().radius < w {
            return Err(format!(
                "values are registered on K_{} but the window is K_{w}",
                ladder.config().radius
            ));
        }
        // Cell budget.
        let mut per_family = Vec::with_capacity(families);
        for i in 0..families {
            let (lo, hi) = spec.grid.axis_range_meeting(i, &qi(-w), &qi(w));
            let count = (&hi - &lo + BigInt::from(1)).to_u64().and_then(|c| c.checked_pow(n as u32));
            match count {
                Some(c) if c <= cfg.max_cells => per_family.push((lo, hi)),
                _ => {
                    return Err(format!(
                        "level {level} has more than {} cells per family meeting K_{w}",
                        cfg.max_cells
                    ))
                }
            }
        }
        // Resolution of image-interval spacing in doubles.
        let top = (problem.s + 4) as f64;
        for (i, r) in spec.params.primes.iter().enumerate() {
            let spacing = to_f64(&(Q::new(BigInt::from(1), BigInt::from(r.clone())) - spec.epsilon()));
            if spacing / 2.0 <= 64.0 * f64::EPSILON * top {
                return Err(format!(
                    "level {level}: spacing 1/r_{level}^{} ≈ {spacing:.3e} is below double resolution",
                    i + 1
                ));
            }
        }
        let tables: Vec<PhiTable> = (0..families)
            .map(|i| PhiTable::build(ladder, i, level, w + 1))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let pitch = spec.params.gamma.clone() / qi(cfg.grid_refine as i64);
        let steps = ceil(&(qi(w) / &pitch)).to_i64().ok_or("grid too fine")?;
        let pitch_f = 2.0 * w as f64 / (2 * steps) as f64;
        let axis: Vec<f64> = (-steps..=steps).map(|j| j as f64 * pitch_f).collect();
        let mut points = Vec::new();
        for_each_product(&vec![axis; n], |p| points.push(p.to_vec()));
        let phi: Vec<f64> = points
            .par_iter()
            .flat_map_iter(|p| tables.iter().map(move |t| t.eval(p).expect("point inside table")))
            .collect();
        let target: Vec<f64> = points.par_iter().map(|p| problem.eval(p)).collect();
        let mut cells = Vec::with_capacity(families);
        let mut index = Vec::with_capacity(families);
        let mut geometry = Vec::with_capacity(families);
        let epsilon = to_f64(spec.epsilon());
        for (i, (lo, hi)) in per_family.iter().enumerate() {
            geometry.push((
                to_f64(spec.grid.period()),
                to_f64(&spec.grid.offset(i)),
                to_f64(spec.grid.side()),
            ));
            let r = Q::from_integer(BigInt::from(spec.params.primes[i].clone()));
            let taper = to_f64(&((Q::from_integer(BigInt::from(1)) / &r - spec.epsilon()) / qi(2)));
            let range: Vec<BigInt> = {
                let mut v = Vec::new();
                let mut z = lo.clone();
                while z <= *hi {
                    v.push(z.clone());
                    z += 1;
                }
                v
            };
            let mut lattices = Vec::new();
            for_each_product(&vec![range; n], |z| lattices.push(z.to_vec()));
            let list: Vec<SweepCell> = lattices
                .par_iter()
                .map(|z| {
                    let c = ladder.cell_value(i, level, z)?;
                    let centre: Vec<f64> = spec.grid.center(i, z).iter().map(to_f64).collect();
                    let centre_phi =
                        tables.iter().map(|t| t.eval(&centre).expect("centre inside table")).collect();
                    let lo_v = to_f64(&c);
                    let hi_v = to_f64(&(&c + spec.epsilon()));
                    let pad = ulp_pad(hi_v);
                    let top = (lo_v - pad, hi_v + pad);
                    let feet = (lo_v + pad - taper, hi_v - pad + taper);
                    Ok(SweepCell {
                        lattice: z.iter().map(|v| v.to_i64().expect("small lattice")).collect(),
                        centre_f: problem.eval(&centre),
                        centre_phi,
                        top,
                        feet,
                    })
                })
                .collect::<Result<_, InnerError>>()
                .map_err(|e| e.to_string())?;
            let mut map = HashMap::with_capacity(list.len());
            for (j, c) in list.iter().enumerate() {
                map.insert(c.lattice.clone(), j);
            }
            index.push(map);
            cells.push(list);
        }
        Ok(Annulus { n, epsilon, families, geometry, points, phi, target, cells, index })
    }

    fn residuals(&self, g: &[PiecewiseLinear1D]) -> Vec<f64> {
        let fams = self.families;
        (0..self.points.len())
            .into_par_iter()
            .map(|p| {
                let mut v = self.target[p];
                for (i, gi) in g.iter().enumerate() {
                    v -= gi.eval(self.phi[p * fams + i]);
                }
                v
            })
            .collect()
    }

    fn centre_residual(&self, c: &SweepCell, g: &[PiecewiseLinear1D]) -> f64 {
        let mut v = c.centre_f;
        for (i, gi) in g.iter().enumerate() {
            v -= gi.eval(c.centre_phi[i]);
        }
        v
    }

    /// Largest residual oscillation inside one closed cell, over the grid
    /// points of that cell and its centre.
    #[allow(clippy::needless_range_loop)]
    fn oscillation(&self, res: &[f64], centre_res: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.families {
            let (p, off, side) = self.geometry[i];
            let mut span: HashMap<usize, (f64, f64)> = HashMap::new();
            for (pt, x) in self.points.iter().enumerate() {
                let mut lattice = Vec::with_capacity(self.n);
                let mut inside = true;
                for v in x {
                    let u = (v - off) / p;
                    let z = u.floor();
                    if (u - z) * p > side {
                        inside = false;
                        break;
                    }
                    lattice.push(z as i64);
                }
                if !inside {
                    continue;
                }
                if let Some(&j) = self.index[i].get(&lattice) {
                    let e = span.entry(j).or_insert((centre_res[i][j], centre_res[i][j]));
                    e.0 = e.0.min(res[pt]);
                    e.1 = e.1.max(res[pt]);
                }
            }
            for (lo, hi) in span.values() {
                worst = worst.max(hi - lo);
            }
        }
        worst
    }
}

/// Outcome of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// `Δ_i` per family.
    pub increments: Vec<PiecewiseLinear1D>,
    /// Residual sup-norm before the sweep (grid and cell centres).
    pub before: f64,
    /// Residual sup-norm after the sweep.
    pub after: f64,
    /// Largest in-cell oscillation of the residual before the sweep.
    pub oscillation: f64,
}

enum SweepStep {
    Done,
    TooCoarse { oscillation: f64 },
    Swept(SweepOutcome),
}

fn sup_with_centres(ann: &Annulus, res: &[f64], g: &[PiecewiseLinear1D]) -> (f64, Vec<Vec<f64>>) {
    let centre_res: Vec<Vec<f64>> = ann
        .cells
        .iter()
        .map(|list| list.par_iter().map(|c| ann.centre_residual(c, g)).collect())
        .collect();
    let mut sup = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for list in &centre_res {
        sup = list.iter().fold(sup, |m, v| m.max(v.abs()));
    }
    (sup, centre_res)
}

fn sweep_once(ann: &Annulus, g: &[PiecewiseLinear1D], cfg: &SweepConfig) -> SweepStep {
    let res = ann.residuals(g);
    let (before, centre_res) = sup_with_centres(ann, &res, g);
    if before == 0.0 {
        return SweepStep::Done;
    }
    let oscillation = ann.oscillation(&res, &centre_res);
    if oscillation > cfg.delta * before {
        return SweepStep::TooCoarse { oscillation };
    }
    let bound = before / (ann.n as f64 + 1.0);
    let increments: Vec<PiecewiseLinear1D> = (0..ann.families)
        .map(|i| {
            let mut traps: Vec<(f64, f64, f64, f64, f64)> = ann.cells[i]
                .iter()
                .zip(&centre_res[i])
                .map(|(c, r)| {
                    let h = (r / (ann.n as f64 + 1.0)).clamp(-bound, bound);
                    (c.feet.0, c.top.0, c.top.1, c.feet.1, h)
                })
                .collect();
            traps.sort_by(|a, b| a.0.total_cmp(&b.0));
            PiecewiseLinear1D::from_trapezoids(&traps)
        })
        .collect();
    let next: Vec<PiecewiseLinear1D> = g.iter().zip(&increments).map(|(a, d)| a.add(d)).collect();
    let res2 = ann.residuals(&next);
    let (after, _) = sup_with_centres(ann, &res2, &next);
    SweepStep::Swept(SweepOutcome { increments, before, after, oscillation })
}

/// Bound on `|Σ g_i(Φ_i) − Σ g_i(f_k^i)|` when `|Φ_i − f_k^i| ≤ ε`.
fn inner_error(g: &[PiecewiseLinear1D], epsilon: f64) -> f64 {
    g.iter().map(|gi| gi.lipschitz() * epsilon).sum()
}

/// Run one sweep of `problem` from the current coordinate functions `g`
/// at ladder level `level`.
pub fn sweep(
    problem: &AnnulusProblem,
    ladder: &Ladder,
    level: u32,
    g: &[PiecewiseLinear1D],
    cfg: &SweepConfig,
) -> Result<Option<SweepOutcome>, SolveError> {
    cfg.validate(ladder.n())?;
    let ann = Annulus::build(problem, ladder, level, cfg).map_err(|reason| {
        SolveError::ResolutionLimit {
            s: problem.s,
            level,
            residual: f64::NAN,
            reason,
            partial: Box::new(AnnulusSolution {
                s: problem.s,
                g: g.to_vec(),
                history: Vec::new(),
                residual: f64::NAN,
                inner_error: 0.0,
            }),
        }
    })?;
    match sweep_once(&ann, g, cfg) {
        SweepStep::Done => Ok(None),
        SweepStep::TooCoarse { oscillation } => Err(SolveError::InvalidConfig(format!(
            "level {level} is too coarse: in-cell oscillation {oscillation:.3e} exceeds δ·R"
        ))),
        SweepStep::Swept(o) => Ok(Some(o)),
    }
}

/// Solve one annulus to `cfg.tol` on its window `K_{s+2}`.
pub fn solve_annulus(
    problem: &AnnulusProblem,
    ladder: &Ladder,
    cfg: &SweepConfig,
) -> Result<AnnulusSolution, SolveError> {
    let n = ladder.n();
    cfg.validate(n)?;
    let fams = ladder.families();
    let bound = cfg.theta_target(n) + cfg.margin;
    let s = problem.s;
    let mut g = vec![PiecewiseLinear1D::zero(); fams];
    let mut history = Vec::new();
    let mut level = 1u32;
    let mut ann = Annulus::build(problem, ladder, level, cfg).map_err(SolveError::InvalidConfig)?;
    let mut sweeps = 0usize;
    let snapshot = |g: &[PiecewiseLinear1D], history: &[SweepRecord], residual: f64, eps: f64| {
        Box::new(AnnulusSolution {
            s,
            g: g.to_vec(),
            history: history.to_vec(),
            residual,
            inner_error: inner_error(g, eps),
        })
    };
    loop {
        let res = ann.residuals(&g);
        let (current, _) = sup_with_centres(&ann, &res, &g);
        if history.is_empty() {
            history.push(SweepRecord { s, sweep: 0, level, residual_sup: current, ratio: None });
        }
        if current <= cfg.tol {
            let sol = AnnulusSolution {
                s,
                inner_error: inner_error(&g, ann.epsilon),
                g,
                history,
                residual: current,
            };
            check_support(&sol)?;
            return Ok(sol);
        }
        if sweeps >= cfg.max_sweeps {
            return Err(SolveError::MaxSweeps {
                s,
                sweeps,
                residual: current,
                partial: snapshot(&g, &history, current, ann.epsilon),
            });
        }
        match sweep_once(&ann, &g, cfg) {
            SweepStep::Done => continue,
            SweepStep::TooCoarse { .. } => {
                let next = level + 1;
                let built = if next > ladder.config().max_level {
                    Err(format!("the ladder is capped at level {}", ladder.config().max_level))
                } else {
                    Annulus::build(problem, ladder, next, cfg)
                };
                match built {
                    Ok(a) => {
                        ann = a;
                        level = next;
                    }
                    Err(reason) => {
                        return Err(SolveError::ResolutionLimit {
                            s,
                            level: next,
                            residual: current,
                            reason,
                            partial: snapshot(&g, &history, current, ann.epsilon),
                        })
                    }
                }
            }
            SweepStep::Swept(o) => {
                sweeps += 1;
                let ratio = o.after / o.before;
                for (gi, d) in g.iter_mut().zip(&o.increments) {
                    *gi = gi.add(d);
                }
                history.push(SweepRecord {
                    s,
                    sweep: sweeps,
                    level,
                    residual_sup: o.after,
                    ratio: Some(ratio),
                });
                if ratio > bound {
                    return Err(SolveError::ContractionViolation { s, sweep: sweeps, ratio, bound });
                }
            }
        }
    }
}

/// `[s − 2, s + 2 + 1/4]`, the admissible support of `g_i^s`.
pub fn support_bounds(s: i64) -> (f64, f64) {
    (s as f64 - 2.0, s as f64 + 2.25)
}

fn check_support(sol: &AnnulusSolution) -> Result<(), SolveError> {
    let (lo, hi) = support_bounds(sol.s);
    for (i, g) in sol.g.iter().enumerate() {
        if let Some((a, b)) = g.support() {
            if a < lo || b > hi {
                return Err(SolveError::SupportViolation { s: sol.s, family: i + 1, lo: a, hi: b });
            }
        }
    }
    Ok(())
}

/// `g_i = Σ_s g_i^s` with merged breakpoints.
pub fn assemble(solutions: &[AnnulusSolution], families: usize) -> Vec<PiecewiseLinear1D> {
    let mut out = vec![PiecewiseLinear1D::zero(); families];
    for sol in solutions {
        for (acc, g) in out.iter_mut().zip(&sol.g) {
            *acc = acc.add(g);
        }
    }
    out
}

/// Number of annuli whose `g_i^s` is non-zero at `y`, over all families.
pub fn overlap_count(solutions: &[AnnulusSolution], i: usize, y: f64) -> usize {
    solutions.iter().filter(|s| s.g[i].eval(y) != 0.0).count()
}

/// Exact rational from a double coordinate; used by certification paths.
pub fn exact_point(x: &[f64]) -> Option<Vec<Q>> {
    x.iter().map(|v| arith::q_from_f64(*v)).collect()
}

/// Integer part helper for callers choosing `s_max` from a window radius.
pub fn s_max_for_window(radius: f64) -> i64 {
    let r = arith::q_from_f64(radius).unwrap_or_else(|| qi(1));
    floor(&r).to_i64().unwrap_or(1).max(1) + i64::from(r != Q::from_integer(floor(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustion::{build_exhaustion, DomainSpec};
    use crate::inner::LadderConfig;
    use proptest::prelude::*;

    #[test]
    fn pl_eval_and_merge() {
        let a = PiecewiseLinear1D::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]).unwrap();
        let b = PiecewiseLinear1D::new(vec![0.5, 1.5, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.eval(0.5), 1.0);
        assert_eq!(a.eval(-1.0), 0.0);
        let c = a.add(&b);
        assert_eq!(c.breakpoints(), &[0.0, 0.5, 1.0, 1.5, 2.0, 3.0]);
        for y in [0.25, 0.75, 1.25, 1.75, 2.5] {
            assert!((c.eval(y) - a.eval(y) - b.eval(y)).abs() < 1e-15);
        }
        assert_eq!(a.support(), Some((0.0, 2.0)));
        assert_eq!(a.lipschitz(), 2.0);
        assert!(PiecewiseLinear1D::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(PiecewiseLinear1D::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn trapezoids_share_touching_feet() {
        let t = PiecewiseLinear1D::from_trapezoids(&[
            (0.0, 1.0, 2.0, 3.0, 1.0),
            (3.0, 4.0, 4.0, 5.0, -2.0),
        ]);
        assert_eq!(t.breakpoints(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.eval(4.0), -2.0);
        assert_eq!(t.eval(3.0), 0.0);
    }

    #[test]
    fn decomposition_sums_to_f_on_the_last_compact() {
        let ex = build_exhaustion(DomainSpec::full_space(1)).unwrap();
        let f: Func = Arc::new(|x: &[f64]| x[0]);
        let parts = annulus_decompose(f, &ex, 3);
        for j in 0..=1000 {
            let x = [-3.0 + 6.0 * j as f64 / 1000.0];
            let total: f64 = parts.iter().map(|p| p.eval(&x)).sum();
            assert!((total - x[0]).abs() <= 1e-12 * 3.0, "x = {}", x[0]);
        }
        // f_2 vanishes outside L_2 = K_3 ∖ int K_1.
        for x in [0.0, 0.5, 1.0, 3.0, 3.5] {
            assert_eq!(parts[1].eval(&[x]), 0.0);
        }
    }

    #[test]
    fn zero_function_needs_no_sweeps() {
        let mut cfg = LadderConfig::default_for(1);
        cfg.radius = 3;
        let ladder = Ladder::new(cfg).unwrap();
        let p = AnnulusProblem::new(1, Arc::new(|_: &[f64]| 0.0));
        let sol = solve_annulus(&p, &ladder, &SweepConfig::default()).unwrap();
        assert_eq!(sol.history.len(), 1);
        assert!(sol.g.iter().all(|g| g.is_zero()));
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn worst_case_with_all_families_covering() {
        // Constant residual 1 at a point covered by all 2n+1 = 3 cells: each
        // family contributes 1/2, leaving 1 − 3/2 = −1/2 = −n/(n+1)·R.
        let n = 1.0;
        let contributions = 3.0 * (1.0 / (n + 1.0));
        assert_eq!((1.0f64 - contributions).abs(), n / (n + 1.0));
    }

    #[test]
    fn theta_for_defaults() {
        let cfg = SweepConfig::default();
        assert!((cfg.theta_target(1) - 0.65).abs() < 1e-12);
        assert!(cfg.theta_target(2) < 1.0);
    }

    #[test]
    fn first_sweep_contracts_ramp() {
        let mut cfg = LadderConfig::default_for(1);
        cfg.radius = 3;
        let ladder = Ladder::new(cfg).unwrap();
        let p = AnnulusProblem::new(1, Arc::new(|x: &[f64]| x[0]));
        let scfg = SweepConfig::default();
        let g = vec![PiecewiseLinear1D::zero(); 3];
        let o = sweep(&p, &ladder, 1, &g, &scfg).unwrap().unwrap();
        assert!(o.after / o.before <= scfg.theta_target(1) + scfg.margin, "{o:?}");
        let max_inc = o.increments.iter().map(|d| d.sup_norm()).fold(0.0, f64::max);
        assert!(max_inc <= o.before / 2.0 + 1e-15);
        for d in &o.increments {
            let (lo, hi) = d.support().unwrap();
            assert!(lo >= -1.0 && hi <= 3.25, "support [{lo}, {hi}]");
        }
    }

    proptest! {
        #[test]
        fn merge_is_pointwise_sum(
            a in proptest::collection::vec(-5.0f64..5.0, 1..6),
            b in proptest::collection::vec(-5.0f64..5.0, 1..6),
            y in -1.0f64..12.0,
        ) {
            let mk = |v: &[f64], shift: f64| {
                let mut xs = vec![shift];
                let mut ys = vec![0.0];
                for (j, val) in v.iter().enumerate() {
                    xs.push(shift + 1.0 + j as f64);
                    ys.push(*val);
                }
                xs.push(shift + 1.0 + v.len() as f64);
                ys.push(0.0);
                PiecewiseLinear1D::new(xs, ys).unwrap()
            };
            let f = mk(&a, 0.0);
            let g = mk(&b, 0.37);
            let h = f.add(&g);
            prop_assert!((h.eval(y) - f.eval(y) - g.eval(y)).abs() < 1e-12);
            prop_assert!(h.breakpoints().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
