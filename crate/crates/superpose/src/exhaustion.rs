//! Compact exhaustion of the domain and the sets derived from it.
//!
//! The domain `X ⊆ ℝⁿ` is either all of `ℝⁿ` or a closed finite union of
//! boxes. It is exhausted by the canonical compacts `K_m = [−m, m]ⁿ ∩ X`
//! (`K_{−1} = K_0 = ∅`), from which we derive
//!
//! * shells `H_m = K_m ∖ int K_{m−1}`,
//! * open neighbourhoods `U_m = int K_{m+1} ∖ K_{m−1}`,
//! * annuli `L_s = K_{s+1} ∖ int K_{s−1}`,
//! * buffered shells `S(H_m, η) = {x : d(H_m, x) ≤ η}`.
//!
//! Distances use the max-metric `d(x, y) = maxᵢ |xᵢ − yᵢ|`, whose balls are
//! boxes, so every set above is a finite union of boxes and every membership,
//! distance and diameter query is exact.

use crate::arith::{q_from_f64, qi, Q};
use num_traits::{Signed, Zero};
use thiserror::Error;

/// Errors raised while describing or building an exhaustion.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExhaustionError {
    /// The ambient dimension must be at least one.
    #[error("ambient dimension must be at least 1, got {0}")]
    InvalidDimension(usize),
    /// A domain box has the wrong number of coordinates or inverted bounds.
    #[error("domain box {index} is malformed: {reason}")]
    MalformedBox { index: usize, reason: String },
}

/// A closed axis-aligned box `[lo₁, hi₁] × … × [loₙ, hiₙ]` with exact bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxQ {
    pub lo: Vec<Q>,
    pub hi: Vec<Q>,
}

impl BoxQ {
    /// Box from exact bounds. Bounds may be degenerate (`lo == hi`).
    pub fn new(lo: Vec<Q>, hi: Vec<Q>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        BoxQ { lo, hi }
    }

    /// The cube `[−r, r]ⁿ`.
    pub fn cube(n: usize, r: &Q) -> Self {
        BoxQ::new(vec![-r.clone(); n], vec![r.clone(); n])
    }

    /// Box from double bounds (exactly converted).
    pub fn from_f64(lo: &[f64], hi: &[f64]) -> Option<Self> {
        let lo = lo.iter().map(|&v| q_from_f64(v)).collect::<Option<Vec<_>>>()?;
        let hi = hi.iter().map(|&v| q_from_f64(v)).collect::<Option<Vec<_>>>()?;
        Some(BoxQ::new(lo, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// `true` when some axis has `lo > hi`.
    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Max-metric distance from a point (zero inside).
    pub fn distance_to_point(&self, x: &[Q]) -> Q {
        let mut d = Q::zero();
        for (v, (l, h)) in x.iter().zip(self.lo.iter().zip(&self.hi)) {
            let gap = if v < l {
                l - v
            } else if v > h {
                v - h
            } else {
                continue;
            };
            if gap > d {
                d = gap;
            }
        }
        d
    }

    /// Max-metric distance between two boxes (zero when they meet).
    pub fn distance(&self, other: &BoxQ) -> Q {
        let mut d = Q::zero();
        for j in 0..self.dim() {
            let a = &other.lo[j] - &self.hi[j];
            let b = &self.lo[j] - &other.hi[j];
            let g = if a > b { a } else { b };
            if g > d {
                d = g;
            }
        }
        d
    }

    pub fn intersect(&self, other: &BoxQ) -> BoxQ {
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(b).clone()).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(b).clone()).collect();
        BoxQ::new(lo, hi)
    }

    /// Closed `r`-neighbourhood in the max-metric.
    pub fn dilate(&self, r: &Q) -> BoxQ {
        BoxQ::new(
            self.lo.iter().map(|v| v - r).collect(),
            self.hi.iter().map(|v| v + r).collect(),
        )
    }

    /// Closure of `self ∖ int(other)` as closed boxes.
    pub fn subtract_interior(&self, other: &BoxQ) -> Vec<BoxQ> {
        let mut out = Vec::new();
        let mut cur = self.clone();
        for j in 0..self.dim() {
            if cur.lo[j] < other.lo[j] {
                let mut piece = cur.clone();
                piece.hi[j] = cur.hi[j].clone().min(other.lo[j].clone());
                out.push(piece);
            }
            if cur.hi[j] > other.hi[j] {
                let mut piece = cur.clone();
                piece.lo[j] = cur.lo[j].clone().max(other.hi[j].clone());
                out.push(piece);
            }
            cur.lo[j] = cur.lo[j].clone().max(other.lo[j].clone());
            cur.hi[j] = cur.hi[j].clone().min(other.hi[j].clone());
            if cur.lo[j] > cur.hi[j] {
                break;
            }
        }
        out
    }
}

/// Whether a [`Region`] denotes the union of its boxes or its interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// The union of the (closed) boxes.
    Closed,
    /// The interior of the union of the boxes.
    Open,
}

/// A finite union of axis-aligned boxes, closed or open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    n: usize,
    boxes: Vec<BoxQ>,
    closure: Closure,
}

impl Region {
    pub fn empty(n: usize) -> Self {
        Region { n, boxes: Vec::new(), closure: Closure::Closed }
    }

    /// Closed region from boxes; empty boxes are dropped.
    pub fn closed(n: usize, boxes: Vec<BoxQ>) -> Self {
        let boxes = boxes.into_iter().filter(|b| !b.is_empty()).collect();
        Region { n, boxes, closure: Closure::Closed }
    }

    /// Interior of the union of the given closed boxes.
    pub fn open(n: usize, boxes: Vec<BoxQ>) -> Self {
        let mut r = Region::closed(n, boxes);
        r.closure = Closure::Open;
        r
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn boxes(&self) -> &[BoxQ] {
        &self.boxes
    }

    pub fn closure_kind(&self) -> Closure {
        self.closure
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Exact membership.
    ///
    /// For open regions a point is interior to a finite union of closed boxes
    /// iff for every orthant direction some box containing the point extends
    /// strictly beyond it along every axis of that orthant.
    pub fn contains(&self, x: &[Q]) -> bool {
        match self.closure {
            Closure::Closed => self.boxes.iter().any(|b| b.contains(x)),
            Closure::Open => {
                let holders: Vec<&BoxQ> = self.boxes.iter().filter(|b| b.contains(x)).collect();
                if holders.is_empty() {
                    return false;
                }
                (0..1usize << self.n).all(|orthant| {
                    holders.iter().any(|b| {
                        (0..self.n).all(|j| {
                            if orthant >> j & 1 == 1 {
                                b.hi[j] > x[j]
                            } else {
                                b.lo[j] < x[j]
                            }
                        })
                    })
                })
            }
        }
    }

    /// Max-metric distance from a point to the closure; `None` if empty.
    pub fn distance_to_point(&self, x: &[Q]) -> Option<Q> {
        self.boxes.iter().map(|b| b.distance_to_point(x)).min()
    }

    /// Max-metric distance between closures; `None` if either is empty.
    pub fn distance(&self, other: &Region) -> Option<Q> {
        self.boxes
            .iter()
            .flat_map(|a| other.boxes.iter().map(move |b| a.distance(b)))
            .min()
    }

    /// Max-metric diameter of the closure; `None` if empty.
    pub fn diameter(&self) -> Option<Q> {
        let mut best: Option<Q> = None;
        for a in &self.boxes {
            for b in &self.boxes {
                for j in 0..self.n {
                    let s1 = &b.hi[j] - &a.lo[j];
                    let s2 = &a.hi[j] - &b.lo[j];
                    let s = if s1 > s2 { s1 } else { s2 };
                    if best.as_ref().is_none_or(|v| s > *v) {
                        best = Some(s);
                    }
                }
            }
        }
        best
    }

    /// Intersection with a closed box (keeps the closure kind).
    pub fn intersect_box(&self, b: &BoxQ) -> Region {
        let boxes = self.boxes.iter().map(|a| a.intersect(b)).collect();
        let mut r = Region::closed(self.n, boxes);
        r.closure = self.closure;
        r
    }

    /// Intersection with a finite union of closed boxes.
    pub fn intersect_boxes(&self, others: &[BoxQ]) -> Region {
        let boxes = self
            .boxes
            .iter()
            .flat_map(|a| others.iter().map(move |b| a.intersect(b)))
            .collect();
        let mut r = Region::closed(self.n, boxes);
        r.closure = self.closure;
        r
    }

    /// Closure of `self ∖ int(b)`.
    pub fn subtract_interior(&self, b: &BoxQ) -> Region {
        let boxes = self.boxes.iter().flat_map(|a| a.subtract_interior(b)).collect();
        Region::closed(self.n, boxes)
    }

    /// Closed `r`-neighbourhood in the max-metric.
    pub fn dilate(&self, r: &Q) -> Region {
        Region::closed(self.n, self.boxes.iter().map(|b| b.dilate(r)).collect())
    }

    /// Bounded sample grid: points of pitch `pitch` inside the region.
    pub fn grid_points(&self, pitch: &Q) -> Vec<Vec<Q>> {
        let mut out: std::collections::BTreeSet<Vec<Q>> = std::collections::BTreeSet::new();
        for b in &self.boxes {
            let mut axes: Vec<Vec<Q>> = Vec::with_capacity(self.n);
            for j in 0..self.n {
                let mut vals = Vec::new();
                let mut v = b.lo[j].clone();
                while v <= b.hi[j] {
                    vals.push(v.clone());
                    v += pitch;
                }
                axes.push(vals);
            }
            for_each_product(&axes, |p| {
                if self.contains(p) {
                    out.insert(p.to_vec());
                }
            });
        }
        out.into_iter().collect()
    }
}

/// Visit every element of the Cartesian product of `axes`.
pub(crate) fn for_each_product<T: Clone>(axes: &[Vec<T>], mut f: impl FnMut(&[T])) {
    if axes.iter().any(|a| a.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; axes.len()];
    let mut cur: Vec<T> = axes.iter().map(|a| a[0].clone()).collect();
    loop {
        f(&cur);
        let mut j = 0;
        loop {
            if j == axes.len() {
                return;
            }
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                cur[j] = axes[j][idx[j]].clone();
                break;
            }
            idx[j] = 0;
            cur[j] = axes[j][0].clone();
            j += 1;
        }
    }
}

/// Shape of the domain `X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    /// `X = ℝⁿ`.
    FullSpace,
    /// `X` is the given finite union of closed boxes.
    Boxes(Vec<BoxQ>),
}

/// The domain `X ⊆ ℝⁿ` to exhaust.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSpec {
    pub n: usize,
    pub shape: Shape,
}

impl DomainSpec {
    pub fn full_space(n: usize) -> Self {
        DomainSpec { n, shape: Shape::FullSpace }
    }
}

/// Canonical compact exhaustion `K_m = [−m, m]ⁿ ∩ X`.
///
/// Immutable once built; every derived region is computed on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exhaustion {
    domain: DomainSpec,
}

/// Validate a domain and build its canonical exhaustion.
pub fn build_exhaustion(spec: DomainSpec) -> Result<Exhaustion, ExhaustionError> {
    if spec.n == 0 {
        return Err(ExhaustionError::InvalidDimension(0));
    }
    if let Shape::Boxes(boxes) = &spec.shape {
        for (index, b) in boxes.iter().enumerate() {
            if b.lo.len() != spec.n || b.hi.len() != spec.n {
                return Err(ExhaustionError::MalformedBox {
                    index,
                    reason: format!("expected {} coordinates", spec.n),
                });
            }
            if b.is_empty() {
                return Err(ExhaustionError::MalformedBox {
                    index,
                    reason: "lower bound exceeds upper bound".into(),
                });
            }
        }
    }
    Ok(Exhaustion { domain: spec })
}

impl Exhaustion {
    pub fn n(&self) -> usize {
        self.domain.n
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn restrict(&self, r: Region) -> Region {
        match &self.domain.shape {
            Shape::FullSpace => r,
            Shape::Boxes(bs) => r.intersect_boxes(bs),
        }
    }

    /// `true` if `x` lies in the domain.
    pub fn in_domain(&self, x: &[Q]) -> bool {
        match &self.domain.shape {
            Shape::FullSpace => true,
            Shape::Boxes(bs) => bs.iter().any(|b| b.contains(x)),
        }
    }

    /// `K_m`; empty for `m ≤ 0`.
    pub fn compact(&self, m: i64) -> Region {
        if m <= 0 {
            return Region::empty(self.n());
        }
        self.restrict(Region::closed(self.n(), vec![BoxQ::cube(self.n(), &qi(m))]))
    }

    /// Shell `H_m = K_m ∖ int K_{m−1}`; empty for `m ≤ 0`.
    pub fn shell(&self, m: i64) -> Region {
        if m <= 0 {
            return Region::empty(self.n());
        }
        self.ring(m - 1, m)
    }

    /// Closure of `[−outer, outer]ⁿ ∖ [−inner, inner]ⁿ`, restricted to `X`.
    fn ring(&self, inner: i64, outer: i64) -> Region {
        let big = Region::closed(self.n(), vec![BoxQ::cube(self.n(), &qi(outer))]);
        let r = if inner <= 0 {
            big
        } else {
            big.subtract_interior(&BoxQ::cube(self.n(), &qi(inner)))
        };
        self.restrict(r)
    }

    /// Open neighbourhood `U_m = int K_{m+1} ∖ K_{m−1}` (`m ≥ 0`).
    ///
    /// For box-shaped domains the openness is that of the ambient space.
    pub fn neighborhood(&self, m: i64) -> Region {
        if m < 0 {
            return Region::empty(self.n());
        }
        let closure = self.ring(m - 1, m + 1);
        Region::open(self.n(), closure.boxes().to_vec())
    }

    /// Annulus `L_s = K_{s+1} ∖ int K_{s−1}` (`s ≥ 0`).
    pub fn annulus(&self, s: i64) -> Region {
        if s < 0 {
            return Region::empty(self.n());
        }
        self.ring(s - 1, s + 1)
    }

    /// Buffered shell `S(H_m, η)`, the closed `η`-neighbourhood of `H_m`.
    pub fn buffered_shell(&self, m: i64, eta: &Q) -> Region {
        assert!(eta.is_positive(), "buffer radius must be positive");
        self.restrict(self.shell(m).dilate(eta))
    }

    /// Index of the smallest compact containing `x` (`‖x‖∞ ≤ m`), at least 1.
    pub fn level_of(x: &[Q]) -> i64 {
        let norm = norm_inf(x);
        let c = crate::arith::ceil(&norm);
        i64::try_from(c).unwrap_or(i64::MAX).max(1)
    }
}

/// Max-norm of an exact point.
pub fn norm_inf(x: &[Q]) -> Q {
    x.iter().map(|v| v.abs()).max().unwrap_or_else(Q::zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::q;

    fn interval(a: Q, b: Q) -> BoxQ {
        BoxQ::new(vec![a], vec![b])
    }

    fn ex(n: usize) -> Exhaustion {
        build_exhaustion(DomainSpec::full_space(n)).unwrap()
    }

    #[test]
    fn rejects_zero_dimension() {
        assert_eq!(
            build_exhaustion(DomainSpec::full_space(0)),
            Err(ExhaustionError::InvalidDimension(0))
        );
    }

    #[test]
    fn subtract_interior_splits_into_pieces() {
        let a = interval(qi(-2), qi(2));
        let b = interval(qi(-1), qi(1));
        let pieces = a.subtract_interior(&b);
        assert_eq!(pieces, vec![interval(qi(-2), qi(-1)), interval(qi(1), qi(2))]);
    }

    #[test]
    fn open_region_excludes_shared_boundary_only_at_outer_faces() {
        // Two touching boxes: the shared face is interior to the union.
        let r = Region::open(1, vec![interval(qi(0), qi(1)), interval(qi(1), qi(2))]);
        assert!(r.contains(&[qi(1)]));
        assert!(!r.contains(&[qi(0)]));
        assert!(r.contains(&[q(1, 2)]));
    }

    #[test]
    fn compact_zero_is_empty() {
        assert!(ex(3).compact(0).is_empty());
        assert!(ex(3).compact(-1).is_empty());
    }

    #[test]
    fn distance_and_diameter() {
        let r = ex(1).shell(2);
        assert_eq!(r.diameter(), Some(qi(4)));
        assert_eq!(r.distance_to_point(&[qi(0)]), Some(qi(1)));
        assert_eq!(ex(1).shell(1).distance(&ex(1).shell(3)), Some(qi(1)));
    }

    #[test]
    fn box_domain_restricts_compacts() {
        let x = BoxQ::new(vec![qi(0)], vec![qi(10)]);
        let e = build_exhaustion(DomainSpec { n: 1, shape: Shape::Boxes(vec![x]) }).unwrap();
        assert_eq!(e.compact(2).boxes(), &[interval(qi(0), qi(2))]);
        assert!(!e.in_domain(&[qi(-1)]));
    }

    #[test]
    fn grid_points_cover_box() {
        let pts = ex(2).compact(1).grid_points(&qi(1));
        assert_eq!(pts.len(), 9);
    }
}
