//! Per-level covers of `ℝⁿ` by `2n + 1` discrete families of open boxes.
//!
//! Level `k` uses a grid of period `p`. Along every axis the period is split
//! into `2n + 1` slots of width `g = p/(2n+1)`; family `i` (0-based) owns a
//! closed gap of width `g/2` centred in slot `i` and an open cell of side
//! `p − g/2` between consecutive gaps. The family's cells are the products of
//! these per-axis intervals, so family `i` is the base lattice translated by
//! `i·g·(1, …, 1)`.
//!
//! Gaps of different families never overlap on an axis, so a point lies in
//! the gap set of at most one family per coordinate, i.e. it misses at most
//! `n` families and is covered by at least `n + 1` cells. Distinct cells of
//! one family are `g/2` apart, which makes every family discrete.
//!
//! All geometry is exact: the period is a rational (a power of two in every
//! schedule this crate produces) and lattice indices are big integers.

use crate::arith::{self, ceil, floor, pow2, pow2_below, q, qi, to_f64, Q};
use crate::exhaustion::{for_each_product, norm_inf, BoxQ, Exhaustion};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Errors raised while planning or building level covers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverError {
    #[error("dimension must be at least 1, got {0}")]
    InvalidDimension(usize),
    #[error("at least one level is required")]
    NoLevels,
    #[error("ε_1 must satisfy ε_1 < 1/4, got {0}")]
    Epsilon1TooLarge(String),
    #[error("ε_k must be positive at level {0}")]
    NonPositiveEpsilon(u32),
    #[error("level {k}: ε_k = {epsilon} violates ε_k < 1/Π r_k^i = 1/{product}")]
    PrimeProductBound { k: u32, epsilon: String, product: String },
    #[error("level {k}: {what} is not strictly decreasing")]
    NotDecreasing { k: u32, what: &'static str },
    #[error("level {k}: r = {prime} is not prime")]
    NotPrime { k: u32, prime: String },
    #[error("level {k}: prime {prime} is reused")]
    PrimeReused { k: u32, prime: String },
    #[error("level {k}: expected {expected} primes, got {got}")]
    PrimeCount { k: u32, expected: usize, got: usize },
    #[error("level {k}: cell side {side} does not satisfy diam < γ_k = {gamma}")]
    MeshTooCoarse { k: u32, side: String, gamma: String },
    #[error("level {k}: cell side {side} lets a cell closure meet more than two shells")]
    ShellEconomy { k: u32, side: String },
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Parameters of one level: mesh bound `γ_k`, value gap `ε_k`, one prime
/// `r_k^i` per family and the grid period `p_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelParams {
    pub k: u32,
    pub gamma: Q,
    pub epsilon: Q,
    pub primes: Vec<BigUint>,
    pub period: Q,
}

impl LevelParams {
    /// `Π_i r_k^i`.
    pub fn prime_product(&self) -> BigUint {
        self.primes.iter().product()
    }

    /// `true` when `ε_k` is below the smallest positive double, i.e. the
    /// level's value gaps cannot be represented in floating point at all.
    pub fn resolution_limited(&self) -> bool {
        to_f64(&self.epsilon) == 0.0
    }
}

/// Largest admissible `ε` below a cap: a power of two `< 1/Π r` and `≤ cap`.
pub fn epsilon_for(primes: &[BigUint], cap: &Q) -> Q {
    let product: BigUint = primes.iter().product();
    let bound = pow2_below(&Q::new(BigInt::one(), BigInt::from(product)));
    if bound < *cap {
        bound
    } else {
        cap.clone()
    }
}

/// Nominal schedule for `k_max` levels: `ε_1 = 1/64`, `γ_1 = 1/4`.
pub fn plan_levels(n: usize, k_max: u32) -> Result<Vec<LevelParams>, CoverError> {
    plan_levels_with(n, k_max, &q(1, 64), &q(1, 4))
}

/// Nominal schedule with explicit `ε_1` and `γ_1`.
///
/// Primes are taken from the prime sequence in increasing order across
/// `(k, i)`, so they are globally distinct. `ε_{k+1} = ε_k/2`, capped by
/// `ε_k < 1/Π r_k^i`; `γ_k` halves per level and the period equals `γ_k`.
pub fn plan_levels_with(
    n: usize,
    k_max: u32,
    eps1: &Q,
    gamma1: &Q,
) -> Result<Vec<LevelParams>, CoverError> {
    if n == 0 {
        return Err(CoverError::InvalidDimension(n));
    }
    if k_max == 0 {
        return Err(CoverError::NoLevels);
    }
    if *eps1 >= q(1, 4) {
        return Err(CoverError::Epsilon1TooLarge(format!("{}", to_f64(eps1))));
    }
    if !eps1.is_positive() {
        return Err(CoverError::NonPositiveEpsilon(1));
    }
    let fams = 2 * n + 1;
    let mut next = BigUint::from(2u32);
    let mut out: Vec<LevelParams> = Vec::new();
    for k in 1..=k_max {
        let mut primes = Vec::with_capacity(fams);
        for _ in 0..fams {
            let p = arith::next_prime(&next);
            next = &p + 1u32;
            primes.push(p);
        }
        let cap = match out.last() {
            None => eps1.clone(),
            Some(prev) => &prev.epsilon / qi(2),
        };
        let epsilon = epsilon_for(&primes, &cap);
        let gamma = gamma1 * pow2(-(k as i64 - 1));
        out.push(LevelParams { k, gamma: gamma.clone(), epsilon, primes, period: gamma });
    }
    validate_schedule(n, &out)?;
    Ok(out)
}

/// Check every schedule invariant: `ε_1 < 1/4`, `ε_k < 1/Π r_k^i`, strictly
/// decreasing `γ_k` and `ε_k`, distinct primes across all levels, and the
/// mesh conditions of the grid geometry.
pub fn validate_schedule(n: usize, levels: &[LevelParams]) -> Result<(), CoverError> {
    if n == 0 {
        return Err(CoverError::InvalidDimension(n));
    }
    if levels.is_empty() {
        return Err(CoverError::NoLevels);
    }
    let mut seen = std::collections::BTreeSet::new();
    for (idx, lv) in levels.iter().enumerate() {
        let k = lv.k;
        if lv.primes.len() != 2 * n + 1 {
            return Err(CoverError::PrimeCount { k, expected: 2 * n + 1, got: lv.primes.len() });
        }
        if !lv.epsilon.is_positive() {
            return Err(CoverError::NonPositiveEpsilon(k));
        }
        if idx == 0 && lv.epsilon >= q(1, 4) {
            return Err(CoverError::Epsilon1TooLarge(format!("{}", to_f64(&lv.epsilon))));
        }
        for p in &lv.primes {
            if !arith::is_prime(p) {
                return Err(CoverError::NotPrime { k, prime: p.to_string() });
            }
            if !seen.insert(p.clone()) {
                return Err(CoverError::PrimeReused { k, prime: p.to_string() });
            }
        }
        let product = lv.prime_product();
        if lv.epsilon.clone() * Q::from_integer(BigInt::from(product.clone())) >= Q::one() {
            return Err(CoverError::PrimeProductBound {
                k,
                epsilon: arith::q_to_string(&lv.epsilon),
                product: product.to_string(),
            });
        }
        if idx > 0 {
            let prev = &levels[idx - 1];
            if lv.epsilon >= prev.epsilon {
                return Err(CoverError::NotDecreasing { k, what: "ε" });
            }
            if lv.gamma >= prev.gamma {
                return Err(CoverError::NotDecreasing { k, what: "γ" });
            }
        }
        let grid = Grid::new(n, lv.period.clone());
        grid.check_mesh(k, &lv.gamma)?;
    }
    Ok(())
}

/// Shifted-grid geometry shared by all families of one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    period: Q,
    slot: Q,
    side: Q,
    /// Left end of cell 0 per family.
    offsets: Vec<Q>,
}

/// Position of one coordinate relative to a family's cells on that axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisPos {
    /// Index of the cell at or to the left of the coordinate.
    pub z: BigInt,
    /// `0` inside the closed cell `z`; otherwise the fraction `t ∈ (0, 1)`
    /// travelled across the gap from cell `z` towards cell `z + 1`.
    pub t: Q,
}

impl Grid {
    /// Standard geometry: gap `p/(2(2n+1))` centred in each family's slot.
    pub fn new(n: usize, period: Q) -> Self {
        let slot = &period / qi(2 * n as i64 + 1);
        let side = &period - &slot / qi(2);
        Self::with_side(n, period, side)
    }

    /// Geometry with an arbitrary cell side (used to plant defects in tests).
    pub fn with_side(n: usize, period: Q, side: Q) -> Self {
        let slot = &period / qi(2 * n as i64 + 1);
        let offsets = (0..2 * n + 1).map(|i| &slot * qi(i as i64) + &slot * q(3, 4)).collect();
        Grid { n, period, slot, side, offsets }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn families(&self) -> usize {
        2 * self.n + 1
    }

    pub fn period(&self) -> &Q {
        &self.period
    }

    /// Slot width `p/(2n+1)`, the diagonal shift between consecutive families.
    pub fn slot(&self) -> &Q {
        &self.slot
    }

    /// Cell side length (= max-metric diameter of a cell).
    pub fn side(&self) -> &Q {
        &self.side
    }

    /// Width of the gap between consecutive cells of one family.
    pub fn gap(&self) -> Q {
        &self.period - &self.side
    }

    /// Left end of cell 0 of family `i` on every axis.
    pub fn offset(&self, i: usize) -> Q {
        self.offsets[i].clone()
    }

    fn check_mesh(&self, k: u32, gamma: &Q) -> Result<(), CoverError> {
        if self.side >= *gamma {
            return Err(CoverError::MeshTooCoarse {
                k,
                side: arith::q_to_string(&self.side),
                gamma: arith::q_to_string(gamma),
            });
        }
        if self.side >= Q::one() {
            return Err(CoverError::ShellEconomy { k, side: arith::q_to_string(&self.side) });
        }
        Ok(())
    }

    /// Closed interval of cell `z` of family `i` along an axis.
    pub fn interval(&self, i: usize, z: &BigInt) -> (Q, Q) {
        let lo = self.offset(i) + &self.period * Q::from_integer(z.clone());
        let hi = &lo + &self.side;
        (lo, hi)
    }

    /// Closed box of a cell.
    pub fn cell_box(&self, i: usize, lattice: &[BigInt]) -> BoxQ {
        let (lo, hi): (Vec<Q>, Vec<Q>) = lattice.iter().map(|z| self.interval(i, z)).unzip();
        BoxQ::new(lo, hi)
    }

    /// Centre of a cell.
    pub fn center(&self, i: usize, lattice: &[BigInt]) -> Vec<Q> {
        lattice
            .iter()
            .map(|z| {
                let (lo, hi) = self.interval(i, z);
                (lo + hi) / qi(2)
            })
            .collect()
    }

    /// Lattice indices whose open interval contains `v` (at most one for a
    /// well-formed grid; more if the side exceeds the period).
    pub fn axis_cells_containing(&self, i: usize, v: &Q) -> Vec<BigInt> {
        let off = &self.offsets[i];
        // Open interval (lo, lo + side) contains v  ⇔  v − side < lo < v.
        let u = (v - off) / &self.period;
        let z_hi = ceil(&u) - BigInt::one();
        let z_lo = floor(&(u - &self.side / &self.period)) + BigInt::one();
        let mut out = Vec::new();
        let mut z = z_lo;
        while z <= z_hi {
            out.push(z.clone());
            z += 1;
        }
        out
    }

    /// Blend position of `v` along an axis for family `i`.
    pub fn locate(&self, i: usize, v: &Q) -> AxisPos {
        let u = (v - &self.offsets[i]) / &self.period;
        let z = floor(&u);
        let within = (u - Q::from_integer(z.clone())) * &self.period;
        if within <= self.side {
            AxisPos { z, t: Q::zero() }
        } else {
            let t = (within - &self.side) / self.gap();
            AxisPos { z, t }
        }
    }

    /// Indices of cells of family `i` whose open interval meets `[a, b]`.
    pub fn axis_range_meeting(&self, i: usize, a: &Q, b: &Q) -> (BigInt, BigInt) {
        let off = self.offset(i);
        // (lo, lo + side) ∩ [a, b] ≠ ∅  ⇔  lo < b and lo + side > a.
        let z_hi = ceil(&((b - &off) / &self.period)) - BigInt::one();
        let z_lo = floor(&((a - &off - &self.side) / &self.period)) + BigInt::one();
        (z_lo, z_hi)
    }
}

/// A cell `S` of family `family` (0-based) at level `level`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub family: usize,
    pub level: u32,
    pub lattice: Vec<BigInt>,
}

/// The `2n + 1` families of one level together with the buffer radii.
#[derive(Debug, Clone)]
pub struct LevelCover {
    params: LevelParams,
    grid: Grid,
    reach: i64,
    eta: BTreeMap<i64, Q>,
}

/// Build level `params.k` with buffer radii for shells `1..=k+3`.
pub fn build_level(ex: &Exhaustion, params: LevelParams) -> Result<LevelCover, CoverError> {
    let reach = params.k as i64 + 3;
    build_level_with_reach(ex, params, reach)
}

/// Build a level, computing buffer radii for shells `1..=reach`.
pub fn build_level_with_reach(
    ex: &Exhaustion,
    params: LevelParams,
    reach: i64,
) -> Result<LevelCover, CoverError> {
    let grid = Grid::new(ex.n(), params.period.clone());
    grid.check_mesh(params.k, &params.gamma)?;
    let mut cover = LevelCover { params, grid, reach: reach.max(1), eta: BTreeMap::new() };
    cover.eta = pick_buffers(&cover, ex);
    Ok(cover)
}

impl LevelCover {
    /// Assemble a cover from explicit geometry without validation, so that
    /// defective covers can be fed to [`verify_cover`].
    pub fn from_parts(params: LevelParams, grid: Grid, reach: i64, ex: &Exhaustion) -> Self {
        let mut cover = LevelCover { params, grid, reach, eta: BTreeMap::new() };
        cover.eta = pick_buffers(&cover, ex);
        cover
    }

    pub fn params(&self) -> &LevelParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn level(&self) -> u32 {
        self.params.k
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn families(&self) -> usize {
        self.grid.families()
    }

    /// Largest shell index with a stored buffer radius.
    pub fn reach(&self) -> i64 {
        self.reach
    }

    /// Buffer radius `η_k^m` (`None` for `m ≤ 0` or beyond the reach).
    pub fn eta(&self, m: i64) -> Option<&Q> {
        self.eta.get(&m)
    }

    pub fn etas(&self) -> &BTreeMap<i64, Q> {
        &self.eta
    }

    pub fn cell_box(&self, cell: &Cell) -> BoxQ {
        self.grid.cell_box(cell.family, &cell.lattice)
    }

    /// Shells `m ≥ 1` whose intersection with the cell closure is non-empty.
    pub fn shell_index(&self, cell: &Cell) -> Vec<i64> {
        let b = self.cell_box(cell);
        shells_met(&b)
    }

    /// All cells (across families) whose open box contains `x`.
    pub fn covering_cells(&self, x: &[Q]) -> Result<Vec<Cell>, CoverError> {
        if x.len() != self.n() {
            return Err(CoverError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        let mut out = Vec::new();
        for i in 0..self.families() {
            let axes: Vec<Vec<BigInt>> =
                x.iter().map(|v| self.grid.axis_cells_containing(i, v)).collect();
            for_each_product(&axes, |lattice| {
                out.push(Cell { family: i, level: self.level(), lattice: lattice.to_vec() });
            });
        }
        Ok(out)
    }

    /// Number of cells of family `i` whose open box meets `K_m`.
    pub fn count_meeting(&self, i: usize, m: i64) -> BigUint {
        let (lo, hi) = self.grid.axis_range_meeting(i, &qi(-m), &qi(m));
        let per_axis = if hi >= lo { (hi - lo + 1u32).magnitude().clone() } else { BigUint::zero() };
        num_traits::pow(per_axis, self.n())
    }
}

/// Shells `m ≥ 1` met by a closed box (canonical exhaustion of `ℝⁿ`).
pub fn shells_met(b: &BoxQ) -> Vec<i64> {
    let (min_norm, max_norm) = box_norm_range(b);
    shells_between(&min_norm, &max_norm)
}

/// Shells met by a closed set whose norms range over `[min_norm, max_norm]`.
pub fn shells_between(min_norm: &Q, max_norm: &Q) -> Vec<i64> {
    // H_m = {m−1 ≤ ‖x‖ ≤ m}: met iff max_norm ≥ m−1 and min_norm ≤ m.
    let first = ceil(min_norm).max(BigInt::one());
    let last = floor(max_norm) + BigInt::one();
    let mut out = Vec::new();
    let mut m = first;
    while m <= last {
        out.push(i64::try_from(&m).unwrap_or(i64::MAX));
        m += 1;
    }
    out
}

/// `(min, max)` of `‖·‖∞` over a closed box.
pub fn box_norm_range(b: &BoxQ) -> (Q, Q) {
    let mut min_norm = Q::zero();
    let mut max_norm = Q::zero();
    for j in 0..b.dim() {
        let (lo, hi) = (&b.lo[j], &b.hi[j]);
        let d = if lo.is_positive() {
            lo.clone()
        } else if hi.is_negative() {
            -hi
        } else {
            Q::zero()
        };
        let e = lo.abs().max(hi.abs());
        if d > min_norm {
            min_norm = d;
        }
        if e > max_norm {
            max_norm = e;
        }
    }
    (min_norm, max_norm)
}

/// Per-axis `(min |v|, max |v|)` over a closed interval.
fn interval_abs_range(lo: &Q, hi: &Q) -> (Q, Q) {
    let b = BoxQ::new(vec![lo.clone()], vec![hi.clone()]);
    box_norm_range(&b)
}

/// Lattice indices of a family within two cells of the coordinate `t`.
fn near(grid: &Grid, i: usize, t: &Q) -> Vec<BigInt> {
    let z0 = floor(&((t - grid.offset(i)) / grid.period()));
    (-2..=2).map(|d| &z0 + d).collect()
}

/// Buffer radii `η_k^m` for `m = 1..=reach`.
///
/// `η^m = min(⅓, ½ · d(H_m, ⋃{S̄ : S̄ ∩ H_m = ∅}))` over all families. The
/// distance is computed exactly: a box avoiding `H_m = {m−1 ≤ ‖x‖∞ ≤ m}` lies
/// either strictly inside (`max‖·‖ < m−1`) or strictly outside
/// (`min‖·‖ > m`), and both extremes are attained by a box whose critical
/// axis interval is one of the few lattice intervals next to `±(m−1)` or
/// `±m`, with the remaining axes at that same interval.
pub fn pick_buffers(cover: &LevelCover, _ex: &Exhaustion) -> BTreeMap<i64, Q> {
    let grid = &cover.grid;
    let third = q(1, 3);
    let mut out = BTreeMap::new();
    for m in 1..=cover.reach {
        let mut best = third.clone();
        for i in 0..grid.families() {
            let mut candidates = Vec::new();
            for t in [m - 1, -(m - 1), m, -m] {
                candidates.extend(near(grid, i, &qi(t)));
            }
            for z in candidates {
                let (lo, hi) = grid.interval(i, &z);
                let (min_abs, max_abs) = interval_abs_range(&lo, &hi);
                let inner = qi(m - 1);
                let outer = qi(m);
                let d = if m >= 2 && max_abs < inner {
                    Some(inner - max_abs)
                } else if min_abs > outer {
                    Some(min_abs - outer)
                } else {
                    None
                };
                if let Some(d) = d {
                    let half = d / qi(2);
                    if half < best {
                        best = half;
                    }
                }
            }
        }
        out.insert(m, best);
    }
    out
}

/// Outcome of checking one of the seven level-cover properties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyCheck {
    /// Property number, 1–7.
    pub property: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Number of elementary checks performed.
    pub checked: u64,
    /// Human-readable counterexample when the property fails.
    pub witness: Option<String>,
}

/// Results of [`verify_cover`] for one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverReport {
    pub level: u32,
    pub checks: Vec<PropertyCheck>,
}

impl CoverReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl fmt::Display for CoverReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "level {} property {} ({}): {} [{} checks]",
                self.level,
                c.property,
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.checked
            )?;
            if let Some(w) = &c.witness {
                write!(f, " witness: {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Cell-count threshold below which every cell near the reach is enumerated.
const ENUMERATION_LIMIT: u64 = 20_000;

fn fmt_point(x: &[Q]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{}", to_f64(v))).collect();
    format!("({})", parts.join(", "))
}

fn fmt_cell(c: &Cell) -> String {
    let parts: Vec<String> = c.lattice.iter().map(|z| z.to_string()).collect();
    format!("family {} lattice [{}]", c.family + 1, parts.join(", "))
}

/// Cells whose boxes are checked for properties 4 and 6.
///
/// When the cells meeting `K_{reach+1}` are few they are all enumerated.
/// Otherwise the check uses every cell containing a sample plus the cells
/// adjacent to each critical radius `‖x‖∞ = t` (integer `t`) on every axis
/// combined with cells next to `0` and to the other critical radii. Both
/// properties depend on a box only through the per-axis extremes of `|x_j|`,
/// and those are attained on exactly these intervals.
fn candidate_cells(cover: &LevelCover, located: &[Vec<Vec<Vec<BigInt>>>]) -> (Vec<Cell>, bool) {
    let grid = &cover.grid;
    let n = cover.n();
    let reach = cover.reach + 1;
    let mut cells = std::collections::BTreeSet::new();
    let total: BigUint = (0..grid.families()).map(|i| cover.count_meeting(i, reach)).sum();
    let exhaustive = total <= BigUint::from(ENUMERATION_LIMIT);
    for i in 0..grid.families() {
        let axis: Vec<BigInt> = if exhaustive {
            let (lo, hi) = grid.axis_range_meeting(i, &qi(-reach), &qi(reach));
            let mut v = Vec::new();
            let mut z = lo;
            while z <= hi {
                v.push(z.clone());
                z += 1;
            }
            v
        } else {
            let mut v = std::collections::BTreeSet::new();
            for t in -reach..=reach {
                v.extend(near(grid, i, &qi(t)));
            }
            v.into_iter().collect()
        };
        let axes = vec![axis; n];
        for_each_product(&axes, |lattice| {
            cells.insert(Cell { family: i, level: cover.level(), lattice: lattice.to_vec() });
        });
    }
    if !exhaustive {
        for per_family in located {
            for (i, axes) in per_family.iter().enumerate() {
                for_each_product(axes, |lattice| {
                    cells.insert(Cell { family: i, level: cover.level(), lattice: lattice.to_vec() });
                });
            }
        }
    }
    (cells.into_iter().collect(), exhaustive)
}

/// Check properties (1)–(7) of the level cover.
///
/// (1) discreteness — exact: the gap `p − side` between consecutive cells
///     of a family is positive, and no sample lies in two cells of a family;
/// (2) every sample lies in `≥ n + 1` cells;
/// (3) cell diameter `< γ_k`, exact;
/// (4) every checked cell lies in some `U_m` and its closure meets at most
///     two (consecutive) shells;
/// (5) the number of cells meeting `K_m` is finite, computed exactly and
///     cross-checked by enumeration when small;
/// (6) every checked cell whose closure misses `H_m` is disjoint from
///     `S(H_m, η^m)`;
/// (7) `cl S(H_{m−1}, η^{m−1}) ∩ cl S(H_{m+1}, η^{m+1}) = ∅`, exact.
pub fn verify_cover(cover: &LevelCover, ex: &Exhaustion, samples: &[Vec<Q>]) -> CoverReport {
    let grid = &cover.grid;
    let n = cover.n();
    let level = cover.level();
    let mut checks = Vec::new();

    // Per sample and family, the lattice indices on each axis whose open
    // interval contains the coordinate; shared by (1) and (2).
    let located: Vec<Vec<Vec<Vec<BigInt>>>> = samples
        .iter()
        .map(|x| {
            (0..grid.families())
                .map(|i| x.iter().map(|v| grid.axis_cells_containing(i, v)).collect())
                .collect()
        })
        .collect();

    // (1) Discreteness.
    {
        let mut witness = None;
        let mut checked = 1u64;
        if grid.gap() <= Q::zero() {
            witness = Some(format!(
                "cells 0 and 1 of family 1 along axis 1 are not separated: side {} ≥ period {}",
                to_f64(grid.side()),
                to_f64(grid.period())
            ));
        }
        for (x, per_family) in samples.iter().zip(&located) {
            if witness.is_some() {
                break;
            }
            checked += 1;
            if let Some(i) = per_family.iter().position(|axes| axes.iter().any(|a| a.len() > 1)) {
                witness = Some(format!("point {} lies in two cells of family {}", fmt_point(x), i + 1));
            }
        }
        checks.push(PropertyCheck {
            property: 1,
            name: "discreteness",
            passed: witness.is_none(),
            checked,
            witness,
        });

        // (2) Coverage by at least n + 1 cells.
        let mut witness = None;
        for (x, per_family) in samples.iter().zip(&located) {
            if x.len() != n {
                witness = Some(format!("point {} has the wrong dimension", fmt_point(x)));
                break;
            }
            let count: usize =
                per_family.iter().map(|axes| axes.iter().map(Vec::len).product::<usize>()).sum();
            if count < n + 1 {
                witness = Some(format!("point {} lies in only {count} cells", fmt_point(x)));
                break;
            }
        }
        checks.push(PropertyCheck {
            property: 2,
            name: "coverage >= n+1",
            passed: witness.is_none(),
            checked: samples.len() as u64,
            witness,
        });
    }

    // (3) Mesh.
    {
        let ok = *grid.side() < cover.params.gamma;
        checks.push(PropertyCheck {
            property: 3,
            name: "diam < gamma",
            passed: ok,
            checked: 1,
            witness: (!ok).then(|| {
                format!(
                    "cell diameter {} ≥ γ = {}",
                    to_f64(grid.side()),
                    to_f64(&cover.params.gamma)
                )
            }),
        });
    }

    let (cells, _exhaustive) = candidate_cells(cover, &located);
    // Per-axis intervals and their |·| ranges, shared by all candidate cells.
    let mut axis_info: BTreeMap<(usize, BigInt), (Q, Q, Q, Q)> = BTreeMap::new();
    for c in &cells {
        for z in &c.lattice {
            axis_info.entry((c.family, z.clone())).or_insert_with(|| {
                let (lo, hi) = grid.interval(c.family, z);
                let (min_abs, max_abs) = interval_abs_range(&lo, &hi);
                (lo, hi, min_abs, max_abs)
            });
        }
    }
    // (min‖·‖, max‖·‖, shells met) per cell.
    let norms: Vec<(Q, Q, Vec<i64>)> = cells
        .iter()
        .map(|c| {
            let mut min_norm = Q::zero();
            let mut max_norm = Q::zero();
            for z in &c.lattice {
                let (_, _, a, b) = &axis_info[&(c.family, z.clone())];
                if *a > min_norm {
                    min_norm = a.clone();
                }
                if *b > max_norm {
                    max_norm = b.clone();
                }
            }
            let shells = shells_between(&min_norm, &max_norm);
            (min_norm, max_norm, shells)
        })
        .collect();
    // (4) Refinement of {U_m} and shell economy.
    {
        let witness = cells.iter().zip(&norms).find_map(|(c, (min_norm, max_norm, shells))| {
            // Open box ⊂ U_m ⇔ max‖·‖ ≤ m+1 and (m = 1 or min‖·‖ ≥ m−1); the
            // largest admissible m is the best candidate.
            let m = (floor(min_norm) + BigInt::one()).max(BigInt::one());
            let m_q = Q::from_integer(m.clone());
            let inside = *max_norm <= &m_q + Q::one() && (m.is_one() || *min_norm >= &m_q - Q::one());
            let economical = shells.len() <= 2;
            (!inside || !economical).then(|| {
                format!(
                    "{} (box norms {}..{}) {}",
                    fmt_cell(c),
                    to_f64(min_norm),
                    to_f64(max_norm),
                    if inside { "meets more than two shells" } else { "lies in no U_m" }
                )
            })
        });
        checks.push(PropertyCheck {
            property: 4,
            name: "refines {U_m}",
            passed: witness.is_none(),
            checked: cells.len() as u64,
            witness,
        });
    }

    // (5) Finiteness against K_m.
    {
        let mut witness = None;
        let mut checked = 0u64;
        for m in 1..=cover.reach {
            for i in 0..grid.families() {
                checked += 1;
                let count = cover.count_meeting(i, m);
                if count <= BigUint::from(ENUMERATION_LIMIT) {
                    // Independent enumeration over a generous index window.
                    let window = ceil(&(qi(m + 1) / grid.period())) + BigInt::from(2);
                    let mut per_axis = 0u64;
                    let mut z = -window.clone();
                    while z <= window {
                        let (lo, hi) = grid.interval(i, &z);
                        if lo < qi(m) && hi > qi(-m) {
                            per_axis += 1;
                        }
                        z += 1;
                    }
                    let enumerated = num_traits::pow(BigUint::from(per_axis), n);
                    if enumerated != count {
                        witness = Some(format!(
                            "family {} K_{m}: formula {count} ≠ enumeration {enumerated}",
                            i + 1
                        ));
                    }
                }
            }
        }
        checks.push(PropertyCheck {
            property: 5,
            name: "finitely many cells meet K_m",
            passed: witness.is_none(),
            checked,
            witness,
        });
    }

    // (6) Buffers avoid cells whose closure misses the shell. In the max
    // metric a closed box with norms in [a, b] lies at distance m−1−b from
    // H_m when b < m−1 and a−m when a > m.
    {
        let mut witness = None;
        let mut checked = 0u64;
        'outer: for m in 1..=cover.reach {
            let eta = match cover.eta(m) {
                Some(e) => e.clone(),
                None => continue,
            };
            let (inner, outer) = (qi(m - 1), qi(m));
            for (c, (min_norm, max_norm, shells)) in cells.iter().zip(&norms) {
                if shells.contains(&m) {
                    continue;
                }
                checked += 1;
                let d = if *max_norm < inner { &inner - max_norm } else { min_norm - &outer };
                if d <= eta {
                    witness = Some(format!(
                        "{} is within {} of H_{m} but η = {}",
                        fmt_cell(c),
                        to_f64(&d),
                        to_f64(&eta)
                    ));
                    break 'outer;
                }
            }
        }
        checks.push(PropertyCheck {
            property: 6,
            name: "buffer avoids non-meeting cells",
            passed: witness.is_none(),
            checked,
            witness,
        });
    }

    // (7) Buffers of shells two apart are disjoint.
    {
        let mut witness = None;
        let mut checked = 0u64;
        for m in 2..cover.reach {
            let (Some(a), Some(b)) = (cover.eta(m - 1), cover.eta(m + 1)) else { continue };
            checked += 1;
            let sa = ex.buffered_shell(m - 1, a);
            let sb = ex.buffered_shell(m + 1, b);
            match sa.distance(&sb) {
                Some(d) if d.is_positive() => {}
                Some(_) => {
                    witness = Some(format!("buffers of H_{} and H_{} meet", m - 1, m + 1));
                    break;
                }
                None => {}
            }
        }
        checks.push(PropertyCheck {
            property: 7,
            name: "buffers of H_{m-1}, H_{m+1} disjoint",
            passed: witness.is_none(),
            checked,
            witness,
        });
    }

    CoverReport { level, checks }
}

/// `true` if the point lies in the closed cell box.
pub fn cell_contains_closed(grid: &Grid, cell: &Cell, x: &[Q]) -> bool {
    grid.cell_box(cell.family, &cell.lattice).contains(x)
}

/// Convenience: max-norm of a cell centre.
pub fn center_norm(grid: &Grid, cell: &Cell) -> Q {
    norm_inf(&grid.center(cell.family, &cell.lattice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustion::{build_exhaustion, DomainSpec};

    fn ex(n: usize) -> Exhaustion {
        build_exhaustion(DomainSpec::full_space(n)).unwrap()
    }

    #[test]
    fn nominal_level_one_primes_and_epsilon() {
        let plan = plan_levels(1, 3).unwrap();
        let primes: Vec<u32> = plan[0].primes.iter().map(|p| p.try_into().unwrap()).collect();
        assert_eq!(primes, vec![2, 3, 5]);
        assert_eq!(plan[0].epsilon, q(1, 64));
        assert_eq!(plan[1].epsilon, q(1, 128).min(epsilon_for(&plan[1].primes, &q(1, 128))));
        let plan2 = plan_levels(2, 1).unwrap();
        let primes: Vec<u32> = plan2[0].primes.iter().map(|p| p.try_into().unwrap()).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11]);
    }

    #[test]
    fn epsilon_one_must_be_below_a_quarter() {
        let err = plan_levels_with(1, 2, &q(3, 10), &q(1, 4)).unwrap_err();
        assert!(err.to_string().contains("ε_1 < 1/4"), "{err}");
    }

    #[test]
    fn locate_reports_gap_fraction() {
        // n = 1, p = 3/10: slot 1/10, gap 1/20, family 0 cell 0 = [3/40, 3/40 + 1/4].
        let g = Grid::new(1, q(3, 10));
        assert_eq!(g.interval(0, &BigInt::zero()), (q(3, 40), q(13, 40)));
        let mid_gap = q(13, 40) + q(1, 40);
        assert_eq!(g.locate(0, &mid_gap), AxisPos { z: BigInt::zero(), t: q(1, 2) });
        assert_eq!(g.locate(0, &q(1, 5)), AxisPos { z: BigInt::zero(), t: Q::zero() });
    }

    #[test]
    fn spec_example_point_is_covered_twice_or_more() {
        let params = LevelParams {
            k: 1,
            gamma: q(3, 10),
            epsilon: q(1, 64),
            primes: vec![2u32.into(), 3u32.into(), 5u32.into()],
            period: q(3, 10),
        };
        let cover = build_level(&ex(1), params).unwrap();
        let count = cover.covering_cells(&[q(1, 20)]).unwrap().len();
        assert!((2..=3).contains(&count));
        // The slot boundary x = 0.2 that defeats touching closed gaps.
        let count = cover.covering_cells(&[q(1, 5)]).unwrap().len();
        assert!(count >= 2, "x = 0.2 covered {count} times");
    }

    #[test]
    fn gap_centre_excludes_family() {
        let cover = build_level(&ex(1), plan_levels(1, 1).unwrap().remove(0)).unwrap();
        let g = cover.grid();
        let (_, hi) = g.interval(0, &BigInt::zero());
        let centre = hi + g.gap() / qi(2);
        let cells = cover.covering_cells(&[centre]).unwrap();
        assert!(cells.iter().all(|c| c.family != 0));
    }

    #[test]
    fn buffer_of_middle_shell_is_at_most_a_third() {
        let cover = build_level(&ex(1), plan_levels(1, 1).unwrap().remove(0)).unwrap();
        let d = ex(1).shell(1).distance(&ex(1).shell(3)).unwrap();
        assert_eq!(d, qi(1));
        assert!(*cover.eta(2).unwrap() <= q(1, 3));
    }

    #[test]
    fn planted_overlap_fails_discreteness() {
        let params = plan_levels(1, 1).unwrap().remove(0);
        let grid = Grid::with_side(1, params.period.clone(), &params.period * q(11, 10));
        let mut params = params;
        params.gamma = qi(1);
        let cover = LevelCover::from_parts(params, grid, 3, &ex(1));
        let report = verify_cover(&cover, &ex(1), &[vec![q(1, 10)]]);
        let c1 = &report.checks[0];
        assert!(!c1.passed);
        assert!(c1.witness.is_some());
    }

    #[test]
    fn count_meeting_matches_enumeration() {
        let cover = build_level(&ex(2), plan_levels(2, 1).unwrap().remove(0)).unwrap();
        let report = verify_cover(&cover, &ex(2), &[]);
        assert!(report.checks[4].passed, "{report}");
    }
}
