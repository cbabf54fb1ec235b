//! The approximation ladder `f_k^i` and the inner functions `Φ_i = lim f_k^i`.
//!
//! Level `k` of family `i` assigns to every cell `S` of the level-`k` grid a
//! value `c_S`, an integer multiple of `1/r_k^i`, and extends it to all of
//! `ℝⁿ` by a per-axis linear bridge across the gaps (a multilinear blend of
//! the `2ⁿ` surrounding cells). Values are exact rationals.
//!
//! # Value choice
//!
//! Cells meeting `K_R` get pairwise distinct residues `ρ(S) mod N` from a
//! mixed-radix rank of their lattice index inside a colouring box of side
//! `L` (`N = Lⁿ`). The value is the smallest `(qN + ρ)/r` above the lower
//! end `t` of the cell's feasibility window, so it lies in `(t, t + N/r]`
//! and distinct cells get distinct multiples of `1/r`.
//!
//! * Level 1: `t = ‖centre‖∞ + ½`, intersected with the shell window
//!   `(m−1, m+1)` (or `(m, m+1)` when the cell's blend support meets two
//!   shells `H_m, H_{m+1}`); `r ≥ 8N` keeps `N/r ≤ ⅛`.
//! * Level `k ≥ 2`: `t = max f_{k−1}` over the blend support `E(S)` (the
//!   closure grown by one gap width) and the value must stay below
//!   `min_{E(S)} f_{k−1} + ε_{k−1} − ε_k`. Every point's blend is then a
//!   convex combination of values strictly inside that sandwich, so
//!   `f_{k−1} < f_k < f_{k−1} + ε_{k−1} − ε_k` holds on all of `ℝⁿ` and
//!   `|Φ_i − f_k^i| ≤ ε_k` everywhere.
//!
//! # Schedule
//!
//! Each level's period is a power of two small enough that `f_{k−1}`
//! oscillates by at most `ε_{k−1}/4` on any blend support, using an exact
//! Lipschitz bound; the primes are the next unused primes above
//! `8N/ε_{k−1}` so every window holds a full residue period; `ε_k` is the
//! largest power of two below `1/Π r_k^i` and at most `ε_{k−1}/2`.

use crate::arith::{self, ceil, floor, pow2_at_most, q, qi, to_f64, Q};
use crate::cover::{epsilon_for, shells_met, CoverError, Grid, LevelParams};
use crate::exhaustion::{for_each_product, norm_inf, BoxQ};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// Errors raised by the ladder.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("invalid ladder configuration: {0}")]
    InvalidConfig(String),
    #[error("family {family} out of range (2n+1 = {families})")]
    UnknownFamily { family: usize, families: usize },
    #[error("level {level} exceeds the configured maximum {max}")]
    LevelCap { level: u32, max: u32 },
    #[error("level {level}, family {family}, cell {lattice}: feasibility window ({lo}, {hi}) holds no admissible value")]
    InfeasibleWindow { level: u32, family: usize, lattice: String, lo: f64, hi: f64 },
    #[error("no level up to {max} reaches tolerance {tol} (finest ε = {best})")]
    InsufficientLevels { tol: f64, best: f64, max: u32 },
    #[error("cell {lattice} of family {family} at level {level} does not meet the registered region K_{radius}")]
    UnknownCell { level: u32, family: usize, lattice: String, radius: i64 },
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Cover(#[from] CoverError),
}

/// Inputs that determine the whole ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LadderConfig {
    pub n: usize,
    /// Level-1 grid period (`0 < p_1 ≤ 1/4`).
    pub p1: Q,
    /// Upper bound on `ε_1` (`< 1/4`); the prime-product bound may lower it.
    pub eps1_cap: Q,
    /// Cells meeting `K_max(k, radius)` get distinct level-`k` values.
    pub radius: i64,
    /// Levels beyond this are never built.
    pub max_level: u32,
}

impl LadderConfig {
    /// Defaults: `p_1 = 1/32` for `n = 1`, `1/16` otherwise; `ε_1 ≤ 1/64`;
    /// registered region `K_3`; at most four levels.
    pub fn default_for(n: usize) -> Self {
        LadderConfig {
            n,
            p1: if n == 1 { q(1, 32) } else { q(1, 16) },
            eps1_cap: q(1, 64),
            radius: 3,
            max_level: 4,
        }
    }

    pub fn validate(&self) -> Result<(), InnerError> {
        if self.n == 0 {
            return Err(InnerError::InvalidConfig("dimension must be at least 1".into()));
        }
        if !self.p1.is_positive() || self.p1 > q(1, 4) {
            return Err(InnerError::InvalidConfig(format!(
                "level-1 period must lie in (0, 1/4], got {}",
                arith::q_to_string(&self.p1)
            )));
        }
        if self.eps1_cap >= q(1, 4) {
            return Err(CoverError::Epsilon1TooLarge(format!("{}", to_f64(&self.eps1_cap))).into());
        }
        if !self.eps1_cap.is_positive() {
            return Err(InnerError::InvalidConfig("ε_1 must be positive".into()));
        }
        if self.radius < 1 {
            return Err(InnerError::InvalidConfig("radius must be at least 1".into()));
        }
        if self.max_level == 0 {
            return Err(InnerError::InvalidConfig("at least one level is required".into()));
        }
        Ok(())
    }
}

/// Derived data of one ladder level, shared by all families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    pub params: LevelParams,
    pub grid: Grid,
    /// Values are distinct on cells meeting `K_radius`.
    pub radius: i64,
    /// Side `L` of the colouring box, in cells.
    pub colour_side: BigInt,
    /// `N = Lⁿ`, the residue modulus.
    pub modulus: BigInt,
    /// Per family: smallest lattice index meeting `[−radius, radius]`.
    pub zmin: Vec<BigInt>,
    /// Bound on the difference of values of axis-adjacent cells.
    pub jump: Q,
    /// Max-metric Lipschitz bound of `f_k^i` (every family).
    pub lipschitz: Q,
}

impl LevelSpec {
    pub fn k(&self) -> u32 {
        self.params.k
    }

    pub fn epsilon(&self) -> &Q {
        &self.params.epsilon
    }

    /// Residue `ρ(S)` of a cell of family `i`.
    pub fn residue(&self, i: usize, lattice: &[BigInt]) -> BigInt {
        let mut rho = BigInt::zero();
        let mut scale = BigInt::one();
        for z in lattice {
            let digit = (z - &self.zmin[i]).mod_floor(&self.colour_side);
            rho += &digit * &scale;
            scale *= &self.colour_side;
        }
        rho
    }

    /// `true` if the open cell meets `K_radius`.
    pub fn registered(&self, i: usize, lattice: &[BigInt]) -> bool {
        let (lo, hi) = self.grid.axis_range_meeting(i, &qi(-self.radius), &qi(self.radius));
        lattice.iter().all(|z| *z >= lo && *z <= hi)
    }
}

/// Cell value with its nearest double.
#[derive(Debug, Clone)]
struct Value {
    exact: Q,
    approx: f64,
}

type Memo = RwLock<HashMap<(u32, Vec<BigInt>), Value>>;

/// The lazily built ladder for all `2n + 1` families.
#[derive(Debug)]
pub struct Ladder {
    config: LadderConfig,
    levels: RwLock<Vec<Arc<LevelSpec>>>,
    memo: Vec<Memo>,
}

/// Smallest `(qN + ρ)/r` strictly greater than `t`.
fn class_value(t: &Q, rho: &BigInt, modulus: &BigInt, r: &BigInt) -> Q {
    let tr = t * Q::from_integer(r.clone());
    let qq = floor(&((tr - Q::from_integer(rho.clone())) / Q::from_integer(modulus.clone())))
        + BigInt::one();
    Q::new(qq * modulus + rho, r.clone())
}

/// Shell window `(lo, hi)` for a set meeting the given consecutive shells.
fn shell_window(shells: &[i64]) -> Option<(Q, Q)> {
    match shells {
        [m] => Some((qi(m - 1), qi(m + 1))),
        [m, _] => Some((qi(*m), qi(m + 1))),
        _ => None,
    }
}

fn fmt_lattice(lattice: &[BigInt]) -> String {
    let parts: Vec<String> = lattice.iter().map(|z| z.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

impl Ladder {
    pub fn new(config: LadderConfig) -> Result<Self, InnerError> {
        config.validate()?;
        let families = 2 * config.n + 1;
        Ok(Ladder {
            memo: (0..families).map(|_| RwLock::new(HashMap::new())).collect(),
            levels: RwLock::new(Vec::new()),
            config,
        })
    }

    pub fn config(&self) -> &LadderConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn families(&self) -> usize {
        2 * self.config.n + 1
    }

    /// Number of levels built so far.
    pub fn built_levels(&self) -> u32 {
        self.levels.read().expect("ladder lock").len() as u32
    }

    /// Build levels up to `k` (no-op if already built).
    pub fn ensure_levels(&self, k: u32) -> Result<(), InnerError> {
        if k > self.config.max_level {
            return Err(InnerError::LevelCap { level: k, max: self.config.max_level });
        }
        if self.built_levels() >= k {
            return Ok(());
        }
        let mut levels = self.levels.write().expect("ladder lock");
        while (levels.len() as u32) < k {
            let next = self.derive_level(levels.last().map(|l| l.as_ref()))?;
            levels.push(Arc::new(next));
        }
        Ok(())
    }

    /// Level `k`, building it if needed.
    pub fn level(&self, k: u32) -> Result<Arc<LevelSpec>, InnerError> {
        if k == 0 {
            return Err(InnerError::InvalidConfig("levels are numbered from 1".into()));
        }
        self.ensure_levels(k)?;
        Ok(self.levels.read().expect("ladder lock")[k as usize - 1].clone())
    }

    /// Schedule of the levels built so far.
    pub fn schedule(&self) -> Vec<LevelParams> {
        self.levels.read().expect("ladder lock").iter().map(|l| l.params.clone()).collect()
    }

    fn derive_level(&self, prev: Option<&LevelSpec>) -> Result<LevelSpec, InnerError> {
        let n = self.config.n;
        let k = prev.map_or(1, |p| p.k() + 1);
        let h = q(1, 2 * (2 * n as i64 + 1));
        let period = match prev {
            None => self.config.p1.clone(),
            Some(p) => pow2_at_most(
                &(p.epsilon() / (qi(4) * &p.lipschitz * (Q::one() + &h))),
            ),
        };
        let grid = Grid::new(n, period.clone());
        let radius = self.config.radius.max(k as i64);
        let colour_side = ceil(&(qi(2 * (radius + 1)) / &period)) + BigInt::from(3);
        let modulus = num_traits::pow(colour_side.clone(), n);
        let zmin = (0..grid.families())
            .map(|i| grid.axis_range_meeting(i, &qi(-radius), &qi(radius)).0)
            .collect();
        let bound = match prev {
            None => Q::from_integer(&modulus * 8),
            Some(p) => Q::from_integer(&modulus * 8) / p.epsilon(),
        };
        let mut from = arith::to_biguint(&ceil(&bound));
        if let Some(p) = prev {
            let last = p.params.primes.iter().max().expect("primes").clone();
            if from <= last {
                from = last + 1u32;
            }
        }
        let mut primes: Vec<BigUint> = Vec::with_capacity(grid.families());
        for _ in 0..grid.families() {
            let r = arith::next_prime(&from);
            from = &r + 1u32;
            primes.push(r);
        }
        let cap = match prev {
            None => self.config.eps1_cap.clone(),
            Some(p) => p.epsilon() / qi(2),
        };
        let epsilon = epsilon_for(&primes, &cap);
        if let Some(p) = prev {
            if epsilon.clone() * qi(4) > *p.epsilon() {
                return Err(InnerError::InvalidConfig(format!(
                    "level {k}: ε_k must not exceed ε_(k-1)/4"
                )));
            }
        }
        let min_r = primes.iter().min().expect("primes");
        let slack = Q::new(modulus.clone(), BigInt::from(min_r.clone()));
        let gap = grid.gap();
        let jump = match prev {
            None => &period + &slack,
            Some(p) => &p.lipschitz * &period * (qi(2) + &h) + &slack,
        };
        let lipschitz = qi(n as i64) * &jump / &gap;
        let params = LevelParams { k, gamma: period.clone(), epsilon, primes, period };
        Ok(LevelSpec { params, grid, radius, colour_side, modulus, zmin, jump, lipschitz })
    }

    fn check_family(&self, i: usize) -> Result<(), InnerError> {
        if i >= self.families() {
            return Err(InnerError::UnknownFamily { family: i, families: self.families() });
        }
        Ok(())
    }

    fn check_point(&self, x: &[Q]) -> Result<(), InnerError> {
        if x.len() != self.n() {
            return Err(InnerError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        Ok(())
    }

    fn lookup(&self, i: usize, k: u32, lattice: &[BigInt]) -> Option<Value> {
        self.memo[i].read().expect("memo lock").get(&(k, lattice.to_vec())).cloned()
    }

    /// Exact value `c_S` of the cell of family `i` at level `k`.
    pub fn cell_value(&self, i: usize, k: u32, lattice: &[BigInt]) -> Result<Q, InnerError> {
        Ok(self.value(i, k, lattice)?.exact)
    }

    fn value(&self, i: usize, k: u32, lattice: &[BigInt]) -> Result<Value, InnerError> {
        self.check_family(i)?;
        if let Some(v) = self.lookup(i, k, lattice) {
            return Ok(v);
        }
        let spec = self.level(k)?;
        let (lo, hi) = self.window(i, &spec, lattice)?;
        let r = BigInt::from(spec.params.primes[i].clone());
        let c = class_value(&lo, &spec.residue(i, lattice), &spec.modulus, &r);
        if c >= hi {
            return Err(InnerError::InfeasibleWindow {
                level: k,
                family: i,
                lattice: fmt_lattice(lattice),
                lo: to_f64(&lo),
                hi: to_f64(&hi),
            });
        }
        let v = Value { approx: to_f64(&c), exact: c };
        self.memo[i].write().expect("memo lock").insert((k, lattice.to_vec()), v.clone());
        Ok(v)
    }

    /// Feasibility window `(lo, hi)` of a cell; the value is the smallest
    /// admissible multiple above `lo` and must lie below `hi`.
    pub fn feasibility_window(
        &self,
        i: usize,
        k: u32,
        lattice: &[BigInt],
    ) -> Result<(Q, Q), InnerError> {
        self.check_family(i)?;
        let spec = self.level(k)?;
        self.window(i, &spec, lattice)
    }

    fn window(&self, i: usize, spec: &LevelSpec, lattice: &[BigInt]) -> Result<(Q, Q), InnerError> {
        let k = spec.k();
        let support = spec.grid.cell_box(i, lattice).dilate(&spec.grid.gap());
        let shells = shells_met(&support);
        let (d_lo, d_hi) = shell_window(&shells).ok_or_else(|| InnerError::InvalidConfig(format!(
            "level {k}: a blend support meets {} shells",
            shells.len()
        )))?;
        if k == 1 {
            let centre = spec.grid.center(i, lattice);
            let t = norm_inf(&centre) + q(1, 2);
            return Ok((t.max(d_lo), d_hi));
        }
        let prev = self.level(k - 1)?;
        let (mx, mn) = self.extremes(i, &prev, &support)?;
        if d_lo > mx {
            return Err(InnerError::InvalidConfig(format!(
                "level {k}: shell window dominates the ladder window at cell {}",
                fmt_lattice(lattice)
            )));
        }
        let hi = (mn + prev.epsilon() - spec.epsilon()).min(d_hi);
        Ok((mx, hi))
    }

    /// `(max, min)` of `f_{k}^i` over a closed box, `k = spec.k()`.
    ///
    /// The blend is multilinear on every product of per-axis pieces (cell
    /// interiors and gaps), so the extremes are attained at the vertices of
    /// the box refined by the level's breakpoints.
    fn extremes(&self, i: usize, spec: &LevelSpec, b: &BoxQ) -> Result<(Q, Q), InnerError> {
        let grid = &spec.grid;
        let mut axes: Vec<Vec<Q>> = Vec::with_capacity(b.dim());
        for j in 0..b.dim() {
            let (lo, hi) = (&b.lo[j], &b.hi[j]);
            let mut pts = vec![lo.clone(), hi.clone()];
            let z0 = floor(&((lo - grid.offset(i)) / grid.period())) - BigInt::one();
            let z1 = floor(&((hi - grid.offset(i)) / grid.period())) + BigInt::one();
            let mut z = z0;
            while z <= z1 {
                let (a, e) = grid.interval(i, &z);
                for v in [a, e] {
                    if v > *lo && v < *hi {
                        pts.push(v);
                    }
                }
                z += 1;
            }
            axes.push(pts);
        }
        let mut vertices = Vec::new();
        for_each_product(&axes, |v| vertices.push(v.to_vec()));
        let mut mx: Option<Q> = None;
        let mut mn: Option<Q> = None;
        for v in &vertices {
            let f = self.eval_ladder(i, spec.k(), v)?;
            if mx.as_ref().is_none_or(|m| f > *m) {
                mx = Some(f.clone());
            }
            if mn.as_ref().is_none_or(|m| f < *m) {
                mn = Some(f);
            }
        }
        Ok((mx.expect("non-empty box"), mn.expect("non-empty box")))
    }

    /// Exact `f_k^i(x)`.
    pub fn eval_ladder(&self, i: usize, k: u32, x: &[Q]) -> Result<Q, InnerError> {
        self.check_family(i)?;
        self.check_point(x)?;
        let spec = self.level(k)?;
        let pos: Vec<_> = x.iter().map(|v| spec.grid.locate(i, v)).collect();
        let mut total = Q::zero();
        let mut err = None;
        let corners: Vec<Vec<u8>> = pos
            .iter()
            .map(|p| if p.t.is_zero() { vec![0] } else { vec![0, 1] })
            .collect();
        for_each_product(&corners, |bits| {
            if err.is_some() {
                return;
            }
            let mut w = Q::one();
            let mut lattice = Vec::with_capacity(bits.len());
            for (p, &b) in pos.iter().zip(bits) {
                if b == 0 {
                    w *= Q::one() - &p.t;
                    lattice.push(p.z.clone());
                } else {
                    w *= &p.t;
                    lattice.push(&p.z + 1);
                }
            }
            match self.value(i, k, &lattice) {
                Ok(v) => total += w * v.exact,
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// `f_k^i(x)` in double precision (cell values rounded to the nearest
    /// double, blend weights computed in floating point).
    pub fn eval_ladder_f64(&self, i: usize, k: u32, x: &[f64]) -> Result<f64, InnerError> {
        self.check_family(i)?;
        if x.len() != self.n() {
            return Err(InnerError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        let spec = self.level(k)?;
        let g = &spec.grid;
        let p = to_f64(g.period());
        let off = to_f64(&g.offset(i));
        let side = to_f64(g.side());
        let gap = p - side;
        let mut pos = Vec::with_capacity(x.len());
        for &v in x {
            let u = (v - off) / p;
            let z = u.floor();
            let within = (u - z) * p;
            let t = if within <= side { 0.0 } else { ((within - side) / gap).min(1.0) };
            let z = BigInt::from(z.to_i64().ok_or_else(|| {
                InnerError::InvalidConfig(format!("coordinate {v} is out of lattice range"))
            })?);
            pos.push((z, t));
        }
        let corners: Vec<Vec<u8>> =
            pos.iter().map(|(_, t)| if *t == 0.0 { vec![0] } else { vec![0, 1] }).collect();
        let mut total = 0.0;
        let mut err = None;
        for_each_product(&corners, |bits| {
            if err.is_some() {
                return;
            }
            let mut w = 1.0;
            let mut lattice = Vec::with_capacity(bits.len());
            for ((z, t), &b) in pos.iter().zip(bits) {
                if b == 0 {
                    w *= 1.0 - t;
                    lattice.push(z.clone());
                } else {
                    w *= t;
                    lattice.push(z + 1);
                }
            }
            match self.value(i, k, &lattice) {
                Ok(v) => total += w * v.approx,
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// Coarsest level `k ≤ max_level` with `ε_k ≤ tol`.
    pub fn level_for_tolerance(&self, tol: &Q) -> Result<u32, InnerError> {
        let mut best = f64::INFINITY;
        for k in 1..=self.config.max_level {
            let spec = self.level(k)?;
            if spec.epsilon() <= tol {
                return Ok(k);
            }
            best = to_f64(spec.epsilon());
        }
        Err(InnerError::InsufficientLevels {
            tol: to_f64(tol),
            best,
            max: self.config.max_level,
        })
    }

    /// `Φ_i(x)` to within `tol`: returns `(f_k^i(x), ε_k, k)` with
    /// `f_k^i(x) < Φ_i(x) < f_k^i(x) + ε_k` and `ε_k ≤ tol`.
    pub fn eval_inner(&self, i: usize, x: &[Q], tol: &Q) -> Result<(Q, Q, u32), InnerError> {
        let k = self.level_for_tolerance(tol)?;
        let v = self.eval_ladder(i, k, x)?;
        Ok((v, self.level(k)?.epsilon().clone(), k))
    }

    /// Image interval `[c_S, c_S + ε_k]`, which contains `Φ_i(S)`.
    pub fn image_interval(&self, i: usize, k: u32, lattice: &[BigInt]) -> Result<(Q, Q), InnerError> {
        self.check_family(i)?;
        let spec = self.level(k)?;
        if !spec.registered(i, lattice) {
            return Err(InnerError::UnknownCell {
                level: k,
                family: i,
                lattice: fmt_lattice(lattice),
                radius: spec.radius,
            });
        }
        let c = self.cell_value(i, k, lattice)?;
        let e = &c + spec.epsilon();
        Ok((c, e))
    }

    /// Inner function handle for family `i`.
    pub fn inner(self: &Arc<Self>, i: usize) -> Result<InnerFunction, InnerError> {
        self.check_family(i)?;
        Ok(InnerFunction { ladder: self.clone(), family: i })
    }
}

/// `Φ_i` for one family, backed by a shared [`Ladder`].
#[derive(Debug, Clone)]
pub struct InnerFunction {
    ladder: Arc<Ladder>,
    family: usize,
}

impl InnerFunction {
    pub fn family(&self) -> usize {
        self.family
    }

    pub fn ladder(&self) -> &Arc<Ladder> {
        &self.ladder
    }

    pub fn eval_ladder(&self, k: u32, x: &[Q]) -> Result<Q, InnerError> {
        self.ladder.eval_ladder(self.family, k, x)
    }

    pub fn eval_inner(&self, x: &[Q], tol: &Q) -> Result<(Q, Q, u32), InnerError> {
        self.ladder.eval_inner(self.family, x, tol)
    }

    pub fn image_interval(&self, k: u32, lattice: &[BigInt]) -> Result<(Q, Q), InnerError> {
        self.ladder.image_interval(self.family, k, lattice)
    }
}

/// Outcome of one ladder law check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LawCheck {
    pub name: &'static str,
    pub passed: bool,
    pub checked: u64,
    pub witness: Option<String>,
}

/// Results of [`verify_ladder`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LadderReport {
    pub levels: u32,
    pub checks: Vec<LawCheck>,
}

impl LadderReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&LawCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl std::fmt::Display for LadderReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "ladder {}: {} [{} checks]",
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

/// Largest number of cells per family for which image intervals are
/// checked by full enumeration.
pub const ENUMERATION_LIMIT: u64 = 20_000;

/// Registered cells of family `i` at a level when there are at most
/// [`ENUMERATION_LIMIT`] of them meeting `K_m`.
pub fn enumerate_cells(spec: &LevelSpec, i: usize, m: i64) -> Option<Vec<Vec<BigInt>>> {
    let (lo, hi) = spec.grid.axis_range_meeting(i, &qi(-m), &qi(m));
    let per_axis = (&hi - &lo + BigInt::one()).to_u64()?;
    let total = per_axis.checked_pow(spec.grid.n() as u32)?;
    if total > ENUMERATION_LIMIT {
        return None;
    }
    let axis: Vec<BigInt> = (0..per_axis).map(|d| &lo + d).collect();
    let mut out = Vec::new();
    for_each_product(&vec![axis; spec.grid.n()], |z| out.push(z.to_vec()));
    Some(out)
}

/// Check that the intervals `[c, c + ε]` of the given cells are pairwise
/// disjoint; returns the offending pair on failure.
pub fn disjoint_intervals(
    ladder: &Ladder,
    i: usize,
    k: u32,
    cells: &[Vec<BigInt>],
) -> Result<Option<String>, InnerError> {
    let spec = ladder.level(k)?;
    let mut values = Vec::with_capacity(cells.len());
    for z in cells {
        values.push((ladder.cell_value(i, k, z)?, z.clone()));
    }
    values.sort();
    values.dedup_by(|a, b| a.1 == b.1);
    for w in values.windows(2) {
        if &w[0].0 + spec.epsilon() >= w[1].0 {
            return Ok(Some(format!(
                "family {} level {k}: cells {} and {} have overlapping image intervals",
                i + 1,
                fmt_lattice(&w[0].1),
                fmt_lattice(&w[1].1)
            )));
        }
    }
    Ok(None)
}

/// Check the ladder laws on levels `1..=levels`:
///
/// * distinct values / disjoint image intervals for cells meeting `K_k`
///   (full enumeration when small, otherwise the cells around the samples
///   together with the structural certificate: injective residues on the
///   colouring box and `1/r_k^i > ε_k`);
/// * shell ranges: for `x ∈ H_m` the cell containing `x` has value in
///   `(m−1, m+1)`, and in `(m, m+1)` / `(m−1, m)` when its closure meets two
///   shells;
/// * the strict sandwich `f_j < f_k < f_j + ε_j − ε_k` for all `j < k`;
/// * `m−1 < Φ_i(x)` and `Φ_i(x) < m + 1 + 1/4` for `x ∈ H_m`, certified by
///   `f_K(x) < Φ_i(x) < f_K(x) + ε_K` at the deepest level.
pub fn verify_ladder(
    ladder: &Ladder,
    levels: u32,
    samples: &[Vec<Q>],
) -> Result<LadderReport, InnerError> {
    ladder.ensure_levels(levels)?;
    let fams = ladder.families();
    let mut checks = Vec::new();

    // Distinct values and disjoint image intervals.
    {
        let mut witness = None;
        let mut checked = 0u64;
        'outer: for k in 1..=levels {
            let spec = ladder.level(k)?;
            for i in 0..fams {
                let r = Q::from_integer(BigInt::from(spec.params.primes[i].clone()));
                if spec.epsilon() * &r >= Q::one() {
                    witness = Some(format!("level {k}: ε_k ≥ 1/r_k^{}", i + 1));
                    break 'outer;
                }
                let (lo, hi) = spec.grid.axis_range_meeting(i, &qi(-spec.radius), &qi(spec.radius));
                if &hi - &lo + BigInt::one() > spec.colour_side {
                    witness = Some(format!("level {k}: colouring box too small"));
                    break 'outer;
                }
                let cells = match enumerate_cells(&spec, i, k as i64) {
                    Some(c) => c,
                    None => {
                        let mut c = std::collections::BTreeSet::new();
                        for x in samples {
                            for cell in sample_neighbourhood(&spec, i, x) {
                                if spec.registered(i, &cell) {
                                    c.insert(cell);
                                }
                            }
                        }
                        c.into_iter().collect()
                    }
                };
                checked += cells.len() as u64;
                if let Some(w) = disjoint_intervals(ladder, i, k, &cells)? {
                    witness = Some(w);
                    break 'outer;
                }
            }
        }
        checks.push(LawCheck { name: "disjoint image intervals", passed: witness.is_none(), checked, witness });
    }

    // Shell ranges of cell values.
    {
        let mut witness = None;
        let mut checked = 0u64;
        'outer: for x in samples {
            for k in 1..=levels {
                let spec = ladder.level(k)?;
                for i in 0..fams {
                    let axes: Vec<Vec<BigInt>> =
                        x.iter().map(|v| spec.grid.axis_cells_containing(i, v)).collect();
                    let mut cells = Vec::new();
                    for_each_product(&axes, |z| cells.push(z.to_vec()));
                    for z in cells {
                        checked += 1;
                        let b = spec.grid.cell_box(i, &z);
                        let shells = shells_met(&b);
                        let c = ladder.cell_value(i, k, &z)?;
                        let ok = match shell_window(&shells) {
                            Some((lo, hi)) => c > lo && c < hi,
                            None => false,
                        };
                        if !ok {
                            witness = Some(format!(
                                "level {k} family {} cell {} meets shells {shells:?} but has value {}",
                                i + 1,
                                fmt_lattice(&z),
                                to_f64(&c)
                            ));
                            break 'outer;
                        }
                    }
                }
            }
        }
        checks.push(LawCheck { name: "shell ranges", passed: witness.is_none(), checked, witness });
    }

    // Sandwich between levels.
    {
        let mut witness = None;
        let mut checked = 0u64;
        'outer: for x in samples {
            for i in 0..fams {
                let vals: Vec<Q> =
                    (1..=levels).map(|k| ladder.eval_ladder(i, k, x)).collect::<Result<_, _>>()?;
                for j in 1..=levels {
                    for k in j + 1..=levels {
                        checked += 1;
                        let (fj, fk) = (&vals[j as usize - 1], &vals[k as usize - 1]);
                        let ej = ladder.level(j)?.epsilon().clone();
                        let ek = ladder.level(k)?.epsilon().clone();
                        if !(fj < fk && *fk < fj + ej - ek) {
                            witness = Some(format!(
                                "family {} levels {j}<{k} at x = {:?}",
                                i + 1,
                                x.iter().map(to_f64).collect::<Vec<_>>()
                            ));
                            break 'outer;
                        }
                    }
                }
            }
        }
        checks.push(LawCheck { name: "level sandwich", passed: witness.is_none(), checked, witness });
    }

    // Range of Φ on shells.
    {
        let mut witness = None;
        let mut checked = 0u64;
        let eps = ladder.level(levels)?.epsilon().clone();
        'outer: for x in samples {
            let norm = norm_inf(x);
            let m = ceil(&norm).max(BigInt::one());
            let m_q = Q::from_integer(m);
            for i in 0..fams {
                checked += 1;
                let f = ladder.eval_ladder(i, levels, x)?;
                if !(f > &m_q - Q::one() && &f + &eps < &m_q + q(5, 4)) {
                    witness = Some(format!(
                        "family {} at x = {:?}: Φ bracket ({}, {}) leaves the shell range",
                        i + 1,
                        x.iter().map(to_f64).collect::<Vec<_>>(),
                        to_f64(&f),
                        to_f64(&(&f + &eps))
                    ));
                    break 'outer;
                }
            }
        }
        checks.push(LawCheck { name: "inner range on shells", passed: witness.is_none(), checked, witness });
    }

    Ok(LadderReport { levels, checks })
}

/// The cell of family `i` around `x` and its axis neighbours.
fn sample_neighbourhood(spec: &LevelSpec, i: usize, x: &[Q]) -> Vec<Vec<BigInt>> {
    let base: Vec<BigInt> = x.iter().map(|v| spec.grid.locate(i, v).z).collect();
    let axes: Vec<Vec<BigInt>> = base.iter().map(|z| vec![z - 1, z.clone(), z + 1]).collect();
    let mut out = Vec::new();
    for_each_product(&axes, |z| out.push(z.to_vec()));
    out
}

/// Serialized cell of an inner-function dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDump {
    pub lattice: Vec<String>,
    pub box_min: Vec<String>,
    pub box_max: Vec<String>,
    /// Exact value as `"num/den"`.
    pub value: String,
    /// Nearest double, hex-float encoded.
    pub value_f64: String,
}

/// Serialized level of an inner-function dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDump {
    pub k: u32,
    pub prime: String,
    pub epsilon: String,
    pub period: String,
    pub modulus: String,
    /// Number of cells meeting `K_k`.
    pub cells_meeting: String,
    /// Cells meeting `K_k` when there are at most [`ENUMERATION_LIMIT`].
    pub cells: Vec<CellDump>,
}

/// Serialized inner function: one family's ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerDump {
    pub family: usize,
    pub n: usize,
    pub levels: Vec<LevelDump>,
}

/// Dump family `i` (0-based) for levels `1..=levels`.
pub fn dump_inner(ladder: &Ladder, i: usize, levels: u32) -> Result<InnerDump, InnerError> {
    ladder.check_family(i)?;
    let mut out = Vec::new();
    for k in 1..=levels {
        let spec = ladder.level(k)?;
        let (lo, hi) = spec.grid.axis_range_meeting(i, &qi(-(k as i64)), &qi(k as i64));
        let per_axis = (&hi - &lo + BigInt::one()).max(BigInt::zero());
        let count = num_traits::pow(per_axis, ladder.n());
        let mut cells = Vec::new();
        if let Some(list) = enumerate_cells(&spec, i, k as i64) {
            for z in list {
                let b = spec.grid.cell_box(i, &z);
                let c = ladder.cell_value(i, k, &z)?;
                cells.push(CellDump {
                    lattice: z.iter().map(|v| v.to_string()).collect(),
                    box_min: b.lo.iter().map(|v| arith::format_hex_f64(to_f64(v))).collect(),
                    box_max: b.hi.iter().map(|v| arith::format_hex_f64(to_f64(v))).collect(),
                    value: arith::q_to_string(&c),
                    value_f64: arith::format_hex_f64(to_f64(&c)),
                });
            }
        }
        out.push(LevelDump {
            k,
            prime: spec.params.primes[i].to_string(),
            epsilon: arith::q_to_string(spec.epsilon()),
            period: arith::q_to_string(&spec.params.period),
            modulus: spec.modulus.to_string(),
            cells_meeting: count.to_string(),
            cells,
        });
    }
    Ok(InnerDump { family: i + 1, n: ladder.n(), levels: out })
}

/// Recompute every dumped value and compare exactly.
pub fn check_dump(ladder: &Ladder, dump: &InnerDump) -> Result<Option<String>, InnerError> {
    let i = dump.family.checked_sub(1).ok_or(InnerError::UnknownFamily {
        family: 0,
        families: ladder.families(),
    })?;
    for lv in &dump.levels {
        let spec = ladder.level(lv.k)?;
        if spec.params.primes[i].to_string() != lv.prime
            || arith::q_to_string(spec.epsilon()) != lv.epsilon
        {
            return Ok(Some(format!("family {} level {}: schedule differs", dump.family, lv.k)));
        }
        for c in &lv.cells {
            let z: Option<Vec<BigInt>> = c.lattice.iter().map(|s| s.parse().ok()).collect();
            let Some(z) = z else {
                return Ok(Some(format!("family {}: malformed lattice index", dump.family)));
            };
            let v = ladder.cell_value(i, lv.k, &z)?;
            if arith::q_to_string(&v) != c.value {
                return Ok(Some(format!(
                    "family {} level {} cell {}: stored value differs",
                    dump.family,
                    lv.k,
                    fmt_lattice(&z)
                )));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ladder(n: usize) -> Ladder {
        let mut cfg = LadderConfig::default_for(n);
        cfg.radius = 2;
        Ladder::new(cfg).unwrap()
    }

    #[test]
    fn class_value_is_smallest_above_threshold() {
        let c = class_value(&q(1, 2), &BigInt::from(3), &BigInt::from(5), &BigInt::from(7));
        // Multiples (5q + 3)/7 : 3/7 < 1/2 < 8/7.
        assert_eq!(c, q(8, 7));
        let c = class_value(&q(3, 7), &BigInt::from(3), &BigInt::from(5), &BigInt::from(7));
        assert_eq!(c, q(8, 7));
    }

    #[test]
    fn level_one_values_are_multiples_of_the_prime_and_distinct() {
        let l = ladder(1);
        let spec = l.level(1).unwrap();
        for i in 0..3 {
            let r = BigInt::from(spec.params.primes[i].clone());
            let cells = enumerate_cells(&spec, i, 1).unwrap();
            for z in &cells {
                let c = l.cell_value(i, 1, z).unwrap();
                assert!((c.clone() * Q::from_integer(r.clone())).is_integer());
            }
            assert_eq!(disjoint_intervals(&l, i, 1, &cells).unwrap(), None);
        }
    }

    #[test]
    fn cell_centre_gives_the_cell_value() {
        let l = ladder(1);
        let spec = l.level(1).unwrap();
        let z = vec![BigInt::from(3)];
        let centre = spec.grid.center(0, &z);
        assert_eq!(l.eval_ladder(0, 1, &centre).unwrap(), l.cell_value(0, 1, &z).unwrap());
    }

    #[test]
    fn gap_midpoint_is_the_average() {
        let l = ladder(1);
        let spec = l.level(1).unwrap();
        let z = BigInt::from(2);
        let (_, hi) = spec.grid.interval(1, &z);
        let mid = hi + spec.grid.gap() / qi(2);
        let a = l.cell_value(1, 1, std::slice::from_ref(&z)).unwrap();
        let b = l.cell_value(1, 1, &[&z + 1]).unwrap();
        assert_eq!(l.eval_ladder(1, 1, &[mid]).unwrap(), (a + b) / qi(2));
    }

    #[test]
    fn two_shell_cells_get_the_upper_window() {
        let l = ladder(1);
        let spec = l.level(1).unwrap();
        // The family-0 cell containing x = 1 meets H_1 and H_2.
        let z = spec.grid.axis_cells_containing(0, &qi(1));
        let c = l.cell_value(0, 1, &z).unwrap();
        assert!(c > qi(1) && c < qi(2), "{}", to_f64(&c));
    }

    #[test]
    fn image_interval_width_is_epsilon() {
        let l = ladder(1);
        let z = vec![BigInt::zero()];
        let (a, b) = l.image_interval(0, 1, &z).unwrap();
        assert_eq!(b - a, l.level(1).unwrap().epsilon().clone());
        assert!(matches!(
            l.image_interval(0, 1, &[BigInt::from(10_000)]),
            Err(InnerError::UnknownCell { .. })
        ));
    }

    #[test]
    fn second_level_respects_sandwich() {
        let l = ladder(1);
        let samples: Vec<Vec<Q>> =
            [q(-17, 10), q(-1, 3), q(0, 1), q(1, 1), q(7, 5), q(199, 100)].into_iter().map(|v| vec![v]).collect();
        let report = verify_ladder(&l, 2, &samples).unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn f64_path_tracks_exact_values() {
        let l = ladder(2);
        for x in [[0.3, -1.2], [1.0, 1.0], [-0.71, 0.05]] {
            let xq: Vec<Q> = x.iter().map(|v| arith::q_from_f64(*v).unwrap()).collect();
            for i in 0..5 {
                let exact = to_f64(&l.eval_ladder(i, 1, &xq).unwrap());
                let approx = l.eval_ladder_f64(i, 1, &x).unwrap();
                assert!((exact - approx).abs() < 1e-12, "{exact} vs {approx}");
            }
        }
    }

    #[test]
    fn epsilon_cap_at_a_quarter_is_rejected() {
        let mut cfg = LadderConfig::default_for(1);
        cfg.eps1_cap = q(3, 10);
        let err = Ladder::new(cfg).unwrap_err();
        assert!(err.to_string().contains("ε_1 < 1/4"), "{err}");
    }

    #[test]
    fn dump_round_trip_validates() {
        let l = ladder(1);
        let d = dump_inner(&l, 0, 1).unwrap();
        assert_eq!(check_dump(&l, &d).unwrap(), None);
        let mut bad = d.clone();
        bad.levels[0].cells[0].value = "1/3".into();
        assert!(check_dump(&l, &bad).unwrap().is_some());
    }
}
