//! Lattice rectangles, the total step ordering, minimal rectangles, and growth sets.
//!
//! Every object the algorithm touches is indexed by an axis-aligned rectangle
//! of sites J_{k,q}: `k` is the vector of side lengths (so a side of length
//! k_j spans k_j + 1 sites) and `q` is the lower corner, with 1-based
//! coordinates. Single sites (k = 0) and degenerate segments are first-class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite d-dimensional square lattice with N sites per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Spatial dimension (≥ 1).
    pub d: usize,
    /// Sites per side (≥ 2).
    pub n: usize,
}

impl LatticeSpec {
    /// Validated constructor.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidLattice("dimension must be ≥ 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidLattice("side length must be ≥ 2".into()));
        }
        Ok(LatticeSpec { d, n })
    }

    /// Total number of sites N^d.
    pub fn site_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// The largest possible circumference d·(N−1).
    pub fn max_circumference(&self) -> usize {
        self.d * (self.n - 1)
    }

    /// All sites of the lattice in lexicographic order.
    pub fn sites(&self) -> Vec<Vec<usize>> {
        self.full_rectangle().sites()
    }

    /// The rectangle covering the whole lattice.
    pub fn full_rectangle(&self) -> Rectangle {
        Rectangle {
            k: vec![self.n - 1; self.d],
            q: vec![1; self.d],
        }
    }
}

/// An axis-aligned rectangle of sites: corner `q`, side lengths `k`.
///
/// Site coordinates are 1-based; axis j covers q_j ..= q_j + k_j.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rectangle {
    /// Side lengths (k_j ≥ 0; a single site has k = 0).
    pub k: Vec<usize>,
    /// Lower corner, 1-based.
    pub q: Vec<usize>,
}

impl Rectangle {
    /// Validated constructor: the rectangle must fit inside the lattice.
    pub fn new(k: Vec<usize>, q: Vec<usize>, lattice: &LatticeSpec) -> Result<Self> {
        if k.len() != lattice.d || q.len() != lattice.d {
            return Err(Error::DimensionMismatch(k.len().max(q.len()), lattice.d));
        }
        for j in 0..lattice.d {
            if q[j] < 1 || q[j] + k[j] > lattice.n {
                return Err(Error::InvalidRectangle(format!(
                    "axis {j}: q={} k={} exceeds side N={}",
                    q[j], k[j], lattice.n
                )));
            }
        }
        Ok(Rectangle { k, q })
    }

    /// A single-site rectangle.
    pub fn site(coords: Vec<usize>, lattice: &LatticeSpec) -> Result<Self> {
        Rectangle::new(vec![0; coords.len()], coords, lattice)
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// Circumference |k| = Σ_j k_j.
    pub fn circumference(&self) -> usize {
        self.k.iter().sum()
    }

    /// Number of sites Π_j (k_j + 1).
    pub fn site_count(&self) -> usize {
        self.k.iter().map(|&kj| kj + 1).product()
    }

    /// Size of the rectangle: the number of sites (used as ρ(R) in weights).
    pub fn size(&self) -> usize {
        self.site_count()
    }

    /// All sites in lexicographic order of coordinates.
    pub fn sites(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.site_count());
        let mut cur: Vec<usize> = self.q.clone();
        loop {
            out.push(cur.clone());
            // Lexicographic increment: bump the last axis, carry leftwards.
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if cur[axis] < self.q[axis] + self.k[axis] {
                    cur[axis] += 1;
                    for a in axis + 1..d {
                        cur[a] = self.q[a];
                    }
                    break;
                }
            }
        }
    }

    /// Does this rectangle contain the given site?
    pub fn contains_site(&self, site: &[usize]) -> bool {
        site.len() == self.dim()
            && (0..self.dim()).all(|j| self.q[j] <= site[j] && site[j] <= self.q[j] + self.k[j])
    }

    /// Set containment (⊆) test.
    pub fn contains(&self, other: &Rectangle) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|j| {
                self.q[j] <= other.q[j] && other.q[j] + other.k[j] <= self.q[j] + self.k[j]
            })
    }

    /// Strict containment (⊂, not equal).
    pub fn contains_strictly(&self, other: &Rectangle) -> bool {
        self.contains(other) && self != other
    }

    /// Nonempty intersection test (per-axis interval overlap).
    pub fn overlaps(&self, other: &Rectangle) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|j| {
                self.q[j].max(other.q[j]) <= (self.q[j] + self.k[j]).min(other.q[j] + other.k[j])
            })
    }

    /// Compact display form "[k;q]" used in error messages and reports.
    pub fn label(&self) -> String {
        format!("[{:?};{:?}]", self.k, self.q)
    }
}

/// Rectangles in a single lattice are totally ordered by the step order.
///
/// `Ord` assumes equal dimension (all keys in one table share a lattice);
/// mismatched dimensions compare by dimension first so the order stays total.
impl PartialOrd for Rectangle {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rectangle {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.dim() != other.dim() {
            return self.dim().cmp(&other.dim());
        }
        order_cmp(self, other).expect("equal dimensions checked above")
    }
}

/// The total order on (k,q) pairs driving the step sequence.
///
/// Three tie-breaking rules, applied in order:
///  1. smaller circumference Σk sorts lower;
///  2. on a circumference tie, at the first axis j where the shapes differ,
///     the rectangle with the LARGER k_j sorts LOWER;
///  3. on a full shape tie, at the LAST axis j where the corners differ,
///     the rectangle with the larger q_j sorts higher.
///
/// Rule 2's direction is deliberate (see the repository notes on ordering
/// conventions): with it, shape (1,0,…,0) is the first circumference-1 shape.
pub fn order_cmp(a: &Rectangle, b: &Rectangle) -> Result<Ordering> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let by_circ = a.circumference().cmp(&b.circumference());
    if by_circ != Ordering::Equal {
        return Ok(by_circ);
    }
    for j in 0..a.dim() {
        if a.k[j] != b.k[j] {
            // Larger leading side sorts lower: reversed comparison.
            return Ok(b.k[j].cmp(&a.k[j]));
        }
    }
    for j in (0..a.dim()).rev() {
        if a.q[j] != b.q[j] {
            return Ok(a.q[j].cmp(&b.q[j]));
        }
    }
    Ok(Ordering::Equal)
}

/// One round of the algorithm, indexed by a rectangle with |k| ≥ 1, plus a
/// distinct initial sentinel that precedes every genuine step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepIndex {
    /// The sentinel before the first step (the untouched initial table).
    Initial,
    /// A genuine step, processing the given rectangle (|k| ≥ 1).
    Step(Rectangle),
}

impl StepIndex {
    /// The rectangle of a genuine step; `None` for the sentinel.
    pub fn rect(&self) -> Option<&Rectangle> {
        match self {
            StepIndex::Initial => None,
            StepIndex::Step(r) => Some(r),
        }
    }

    /// Display label for records and errors.
    pub fn label(&self) -> String {
        match self {
            StepIndex::Initial => "initial".into(),
            StepIndex::Step(r) => r.label(),
        }
    }
}

/// The immediate successor of a step under the total order, or `None` when
/// the maximal rectangle (the whole lattice) has been processed.
///
/// The sentinel maps to the first circumference-1 rectangle,
/// (k,q) = ((1,0,…,0), (1,…,1)).
pub fn step_successor(s: &StepIndex, lattice: &LatticeSpec) -> Option<StepIndex> {
    let steps = step_sequence(lattice);
    match s {
        StepIndex::Initial => steps.into_iter().next().map(StepIndex::Step),
        StepIndex::Step(r) => {
            let pos = steps.iter().position(|x| x == r)?;
            steps.into_iter().nth(pos + 1).map(StepIndex::Step)
        }
    }
}

/// The immediate predecessor, or the sentinel for the first step.
pub fn step_predecessor(s: &StepIndex, lattice: &LatticeSpec) -> Option<StepIndex> {
    match s {
        StepIndex::Initial => None,
        StepIndex::Step(r) => {
            let steps = step_sequence(lattice);
            let pos = steps.iter().position(|x| x == r)?;
            Some(if pos == 0 {
                StepIndex::Initial
            } else {
                StepIndex::Step(steps[pos - 1].clone())
            })
        }
    }
}

/// All genuine step rectangles (|k| ≥ 1), sorted ascending.
pub fn step_sequence(lattice: &LatticeSpec) -> Vec<Rectangle> {
    enumerate_rectangles(lattice, Some(&|r: &Rectangle| r.circumference() >= 1))
}

/// The smallest rectangle [a ∪ b] containing two overlapping rectangles:
/// per axis, corner min{q_j, q'_j} and far corner max{q_j+k_j, q'_j+k'_j}.
///
/// Only defined for overlapping inputs.
pub fn minimal_rectangle(a: &Rectangle, b: &Rectangle) -> Result<Rectangle> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if !a.overlaps(b) {
        return Err(Error::DisjointRectangles);
    }
    let d = a.dim();
    let mut q = Vec::with_capacity(d);
    let mut k = Vec::with_capacity(d);
    for j in 0..d {
        let lo = a.q[j].min(b.q[j]);
        let hi = (a.q[j] + a.k[j]).max(b.q[j] + b.k[j]);
        q.push(lo);
        k.push(hi - lo);
    }
    Ok(Rectangle { k, q })
}

/// All sub-rectangles of `outer` (including `outer` itself), unsorted.
pub fn sub_rectangles(outer: &Rectangle) -> Vec<Rectangle> {
    let d = outer.dim();
    // Per axis, every subinterval [q'_j, q'_j + k'_j] ⊆ [q_j, q_j + k_j].
    let mut axis_choices: Vec<Vec<(usize, usize)>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut choices = Vec::new();
        for lo in outer.q[j]..=outer.q[j] + outer.k[j] {
            for hi in lo..=outer.q[j] + outer.k[j] {
                choices.push((lo, hi - lo));
            }
        }
        axis_choices.push(choices);
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let mut k = Vec::with_capacity(d);
        let mut q = Vec::with_capacity(d);
        for j in 0..d {
            let (lo, len) = axis_choices[j][idx[j]];
            q.push(lo);
            k.push(len);
        }
        out.push(Rectangle { k, q });
        // Mixed-radix increment over the axis choice indices.
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axis_choices[axis].len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// The smallest rectangle containing both inputs, defined for ANY pair
/// (no overlap requirement) by the same min/max corner formula.
pub fn enclosing_rectangle(a: &Rectangle, b: &Rectangle) -> Result<Rectangle> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let d = a.dim();
    let mut q = Vec::with_capacity(d);
    let mut k = Vec::with_capacity(d);
    for j in 0..d {
        let lo = a.q[j].min(b.q[j]);
        let hi = (a.q[j] + a.k[j]).max(b.q[j] + b.k[j]);
        q.push(lo);
        k.push(hi - lo);
    }
    Ok(Rectangle { k, q })
}

/// The growth set of `inner` relative to `target`: all J' ⊆ target whose
/// enclosing rectangle with `inner` is exactly `target` (including
/// J' = target itself; no overlap constraint on the members).
///
/// Requires strict containment inner ⊂ target. Members disjoint from
/// `inner` are legitimate — they later contribute zero because operators on
/// disjoint supports commute.
pub fn g_set(inner: &Rectangle, target: &Rectangle) -> Result<Vec<Rectangle>> {
    if !target.contains_strictly(inner) {
        return Err(Error::Precondition(format!(
            "growth set requires strict containment {} ⊂ {}",
            inner.label(),
            target.label()
        )));
    }
    let mut out = Vec::new();
    for cand in sub_rectangles(target) {
        if enclosing_rectangle(inner, &cand)? == *target {
            out.push(cand);
        }
    }
    out.sort();
    Ok(out)
}

/// All rectangles of the lattice passing the optional filter, sorted ascending.
#[allow(clippy::type_complexity)]
pub fn enumerate_rectangles(
    lattice: &LatticeSpec,
    filter: Option<&dyn Fn(&Rectangle) -> bool>,
) -> Vec<Rectangle> {
    let mut out: Vec<Rectangle> = sub_rectangles(&lattice.full_rectangle())
        .into_iter()
        .filter(|r| filter.map_or(true, |f| f(r)))
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, n: usize) -> LatticeSpec {
        LatticeSpec::new(d, n).unwrap()
    }

    #[test]
    fn rectangle_validation() {
        let l = lat(2, 3);
        assert!(Rectangle::new(vec![1, 1], vec![1, 1], &l).is_ok());
        assert!(Rectangle::new(vec![2, 0], vec![2, 1], &l).is_err()); // sticks out
        assert!(Rectangle::new(vec![0, 0], vec![0, 1], &l).is_err()); // 1-based corner
        assert!(Rectangle::new(vec![1], vec![1], &l).is_err()); // wrong dim
    }

    #[test]
    fn circumference_first_comparison() {
        let l = lat(2, 3);
        let big = Rectangle::new(vec![2, 0], vec![1, 1], &l).unwrap();
        let small = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        assert_eq!(order_cmp(&big, &small).unwrap(), Ordering::Greater);
    }

    #[test]
    fn shape_tiebreak_larger_leading_side_sorts_lower() {
        // On equal circumference, (0,1) sorts ABOVE (1,0).
        let l = lat(2, 2);
        let row = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        let col = Rectangle::new(vec![0, 1], vec![1, 1], &l).unwrap();
        assert_eq!(order_cmp(&col, &row).unwrap(), Ordering::Greater);
        assert_eq!(order_cmp(&row, &col).unwrap(), Ordering::Less);
    }

    #[test]
    fn corner_tiebreak_last_axis_first() {
        let l = lat(2, 3);
        let a = Rectangle::new(vec![1, 0], vec![2, 1], &l).unwrap();
        let b = Rectangle::new(vec![1, 0], vec![1, 2], &l).unwrap();
        // Corners differ at the last axis (1 vs 2): b sorts higher.
        assert_eq!(order_cmp(&b, &a).unwrap(), Ordering::Greater);
    }

    #[test]
    fn order_reflexive_and_dim_checked() {
        let l = lat(2, 2);
        let a = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        assert_eq!(order_cmp(&a, &a).unwrap(), Ordering::Equal);
        let b1 = Rectangle::new(vec![1], vec![1], &lat(1, 2)).unwrap();
        assert!(order_cmp(&a, &b1).is_err());
    }

    #[test]
    fn minimal_rectangle_matches_corner_formula() {
        let l = lat(2, 2);
        let a = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        let b = Rectangle::new(vec![0, 1], vec![2, 1], &l).unwrap();
        let m = minimal_rectangle(&a, &b).unwrap();
        assert_eq!(m, Rectangle::new(vec![1, 1], vec![1, 1], &l).unwrap());
    }

    #[test]
    fn minimal_rectangle_idempotent_and_containment() {
        let l = lat(2, 3);
        let a = Rectangle::new(vec![1, 1], vec![1, 1], &l).unwrap();
        assert_eq!(minimal_rectangle(&a, &a).unwrap(), a);
        let inner = Rectangle::new(vec![0, 0], vec![2, 2], &l).unwrap();
        assert_eq!(minimal_rectangle(&inner, &a).unwrap(), a);
    }

    #[test]
    fn minimal_rectangle_rejects_disjoint() {
        let l = lat(1, 3);
        let a = Rectangle::new(vec![0], vec![1], &l).unwrap();
        let b = Rectangle::new(vec![0], vec![3], &l).unwrap();
        assert!(matches!(
            minimal_rectangle(&a, &b),
            Err(Error::DisjointRectangles)
        ));
    }

    #[test]
    fn g_set_single_site_in_domino() {
        // inner = site (1,1), target = the row {(1,1),(2,1)}:
        // members are the far site (2,1) and the full row.
        let l = lat(2, 2);
        let inner = Rectangle::site(vec![1, 1], &l).unwrap();
        let target = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        let g = g_set(&inner, &target).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.contains(&Rectangle::site(vec![2, 1], &l).unwrap()));
        assert!(g.contains(&target));
    }

    #[test]
    fn g_set_requires_strict_containment() {
        let l = lat(2, 2);
        let a = Rectangle::new(vec![1, 0], vec![1, 1], &l).unwrap();
        assert!(g_set(&a, &a).is_err());
    }

    #[test]
    fn enumerate_2x2_counts() {
        let l = lat(2, 2);
        let all = enumerate_rectangles(&l, None);
        assert_eq!(all.len(), 9); // 4 sites + 4 dominoes + 1 square
        let sites = all.iter().filter(|r| r.circumference() == 0).count();
        let dominoes = all.iter().filter(|r| r.circumference() == 1).count();
        let squares = all.iter().filter(|r| r.circumference() == 2).count();
        assert_eq!((sites, dominoes, squares), (4, 4, 1));
    }

    #[test]
    fn step_sequence_2x2() {
        let l = lat(2, 2);
        let steps = step_sequence(&l);
        assert_eq!(steps.len(), 5);
        // Two rows, then two columns, then the square.
        assert_eq!(steps[0].k, vec![1, 0]);
        assert_eq!(steps[1].k, vec![1, 0]);
        assert_eq!(steps[2].k, vec![0, 1]);
        assert_eq!(steps[3].k, vec![0, 1]);
        assert_eq!(steps[4].k, vec![1, 1]);
    }

    #[test]
    fn successor_chain_from_sentinel() {
        let l = lat(2, 2);
        let first = step_successor(&StepIndex::Initial, &l).unwrap();
        let rect = first.rect().unwrap();
        assert_eq!(rect.k, vec![1, 0]);
        assert_eq!(rect.q, vec![1, 1]);
        // Walk to the end: 5 genuine steps, then the end-marker.
        let mut s = StepIndex::Initial;
        let mut count = 0;
        while let Some(next) = step_successor(&s, &l) {
            count += 1;
            s = next;
        }
        assert_eq!(count, 5);
        assert_eq!(s.rect().unwrap().k, vec![1, 1]);
    }

    #[test]
    fn predecessor_inverts_successor() {
        let l = lat(2, 3);
        let mut s = StepIndex::Initial;
        while let Some(next) = step_successor(&s, &l) {
            assert_eq!(step_predecessor(&next, &l).unwrap(), s);
            s = next;
        }
    }

    #[test]
    fn sites_are_lexicographic() {
        let l = lat(2, 3);
        let r = Rectangle::new(vec![1, 1], vec![2, 1], &l).unwrap();
        assert_eq!(
            r.sites(),
            vec![vec![2, 1], vec![2, 2], vec![3, 1], vec![3, 2]]
        );
    }
}
