//! Cycles of intervals, renormalization, and density of critical preimages.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{PiecewiseMap, Side};
use crate::piece::{bisect_monotone, Piece};

pub const DEFAULT_MAX_PERIOD: usize = 64;
const HULL_CAP: usize = 10_000;
const GROWTH_TOL: f64 = 1e-13;
const INCLUSION_TOL: f64 = 1e-9;

pub type Interval = (f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalCycle {
    pub period: usize,
    /// `J, f(J), …, f^{m−1}(J)`; `J` contains the critical point the search
    /// was seeded at.
    pub intervals: Vec<Interval>,
    pub minimal: bool,
}

/// `f([lo, hi])` for a continuous map.
pub fn image_interval(map: &PiecewiseMap, lo: f64, hi: f64) -> Interval {
    let fl = map.apply(lo);
    // branch whose domain reaches `hi` from the left
    let left = map.branches().partition_point(|b| b.lo < hi).saturating_sub(1);
    let fh = map.branch(left).value(hi);
    let (mut a, mut b) = (fl.min(fh), fl.max(fh));
    for (k, cp) in map.critical_points().iter().enumerate() {
        if cp.c > lo && cp.c < hi {
            for side in [Side::Minus, Side::Plus] {
                let v = map.critical_value(k, side);
                a = a.min(v);
                b = b.max(v);
            }
        }
    }
    (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

pub fn image_interval_n(map: &PiecewiseMap, j: Interval, n: usize) -> Interval {
    (0..n).fold(j, |iv, _| image_interval(map, iv.0, iv.1))
}

fn contains(outer: Interval, inner: Interval, tol: f64) -> bool {
    inner.0 >= outer.0 - tol && inner.1 <= outer.1 + tol
}

fn interiors_disjoint(a: Interval, b: Interval) -> bool {
    a.1 <= b.0 + INCLUSION_TOL || b.1 <= a.0 + INCLUSION_TOL
}

fn same_interval(a: Interval, b: Interval) -> bool {
    (a.0 - b.0).abs() <= INCLUSION_TOL && (a.1 - b.1).abs() <= INCLUSION_TOL
}

/// Smallest interval around `c` with `f^m(J) ⊆ J`, by hull iteration.
fn grow_hull(map: &PiecewiseMap, c: f64, m: usize) -> Option<Interval> {
    let eta = 1e-12;
    let mut j = ((c - eta).max(0.0), (c + eta).min(1.0));
    for _ in 0..HULL_CAP {
        let img = image_interval_n(map, j, m);
        let next = (j.0.min(img.0), j.1.max(img.1));
        if (next.0 - j.0).abs() < GROWTH_TOL && (next.1 - j.1).abs() < GROWTH_TOL {
            return Some(next);
        }
        j = next;
    }
    None
}

fn cycle_from_seed(map: &PiecewiseMap, c: f64, m: usize) -> Option<IntervalCycle> {
    let j = grow_hull(map, c, m)?;
    if !contains(j, image_interval_n(map, j, m), INCLUSION_TOL) {
        return None;
    }
    let mut intervals = vec![j];
    for k in 1..m {
        let next = image_interval(map, intervals[k - 1].0, intervals[k - 1].1);
        // m must be the least return time of J into itself
        if contains(j, next, INCLUSION_TOL) {
            return None;
        }
        intervals.push(next);
    }
    for a in 0..m {
        for b in a + 1..m {
            if !interiors_disjoint(intervals[a], intervals[b]) {
                return None;
            }
        }
    }
    Some(IntervalCycle {
        period: m,
        intervals,
        minimal: false,
    })
}

fn cycle_contains(outer: &IntervalCycle, inner: &IntervalCycle) -> bool {
    inner
        .intervals
        .iter()
        .all(|&iv| outer.intervals.iter().any(|&ov| contains(ov, iv, INCLUSION_TOL)))
}

fn same_cycle(a: &IntervalCycle, b: &IntervalCycle) -> bool {
    a.period == b.period
        && a.intervals
            .iter()
            .all(|&x| b.intervals.iter().any(|&y| same_interval(x, y)))
}

/// Search for proper cycles of intervals seeded at each critical point and
/// flag the minimal ones. The returned list holds every distinct proper
/// cycle found, minimal ones first.
pub fn find_cycles(map: &PiecewiseMap, max_period: usize) -> Result<Vec<IntervalCycle>> {
    use rayon::prelude::*;
    if !map.is_continuous() {
        return Err(Error::Precondition(
            "cycle search needs a continuous map; supply J* for maps with jumps".into(),
        ));
    }
    if max_period == 0 {
        return Err(Error::Precondition("max_period must be at least 1".into()));
    }
    let seeds: Vec<(f64, usize)> = map
        .critical_points()
        .iter()
        .flat_map(|cp| (1..=max_period).map(move |m| (cp.c, m)))
        .collect();
    let found: Vec<Option<IntervalCycle>> = seeds
        .par_iter()
        .map(|&(c, m)| cycle_from_seed(map, c, m))
        .collect();
    let mut cycles: Vec<IntervalCycle> = Vec::new();
    for cy in found.into_iter().flatten() {
        if !cycles.iter().any(|o| same_cycle(o, &cy)) {
            cycles.push(cy);
        }
    }
    if cycles.is_empty() {
        return Err(Error::NoCycleFound(max_period));
    }
    let flags: Vec<bool> = (0..cycles.len())
        .map(|i| {
            !(0..cycles.len())
                .any(|j| j != i && !same_cycle(&cycles[i], &cycles[j]) && cycle_contains(&cycles[i], &cycles[j]))
        })
        .collect();
    for (cy, f) in cycles.iter_mut().zip(flags) {
        cy.minimal = f;
    }
    cycles.sort_by(|a, b| {
        b.minimal
            .cmp(&a.minimal)
            .then(a.period.cmp(&b.period))
            .then(a.intervals[0].0.total_cmp(&b.intervals[0].0))
    });
    Ok(cycles)
}

/// Minimal cycles only.
pub fn find_minimal_cycles(map: &PiecewiseMap, max_period: usize) -> Result<Vec<IntervalCycle>> {
    let minimal: Vec<IntervalCycle> = find_cycles(map, max_period)?
        .into_iter()
        .filter(|c| c.minimal)
        .collect();
    Ok(minimal)
}

#[derive(Clone, Debug)]
pub struct Renormalization {
    pub base_cycle: IntervalCycle,
    /// `Λ(y) = offset + scale·y`
    pub offset: f64,
    pub scale: f64,
    pub map: PiecewiseMap,
}

impl Renormalization {
    pub fn lambda(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }

    pub fn lambda_inv(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }
}

/// `g = Λ⁻¹ ∘ f^m ∘ Λ` on the first interval of the cycle.
pub fn renormalize(map: &PiecewiseMap, cycle: &IntervalCycle) -> Result<Renormalization> {
    let (a, b) = cycle.intervals[0];
    let g = if cycle.period == 1 && a <= 1e-12 && b >= 1.0 - 1e-12 {
        map.clone()
    } else {
        PiecewiseMap::renormalized(Arc::new(map.clone()), cycle.period, a, b)?
    };
    let (offset, scale) = if g.spec() == map.spec() { (0.0, 1.0) } else { (a, b - a) };
    Ok(Renormalization {
        base_cycle: cycle.clone(),
        offset,
        scale,
        map: g,
    })
}

/// Image of a (possibly discontinuous) map on `[lo, hi]` as a sorted union
/// of disjoint intervals.
pub fn image_union(map: &PiecewiseMap, lo: f64, hi: f64) -> Vec<Interval> {
    let mut ivs: Vec<Interval> = Piece::new(lo, hi)
        .step(map)
        .iter()
        .map(|p| p.image(map))
        .collect();
    merge_intervals(&mut ivs)
}

pub fn merge_intervals(ivs: &mut [Interval]) -> Vec<Interval> {
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Interval> = Vec::new();
    for &iv in ivs.iter() {
        match out.last_mut() {
            Some(last) if iv.0 <= last.1 + 1e-15 => last.1 = last.1.max(iv.1),
            _ => out.push(iv),
        }
    }
    out
}

fn measure(ivs: &[Interval]) -> f64 {
    ivs.iter().map(|iv| iv.1 - iv.0).sum()
}

/// Lebesgue measure of the symmetric difference of two interval unions.
pub fn symmetric_difference(a: &[Interval], b: &[Interval]) -> f64 {
    let mut both: Vec<Interval> = a.iter().chain(b).copied().collect();
    let union = measure(&merge_intervals(&mut both));
    let mut inter = 0.0;
    for x in a {
        for y in b {
            let lo = x.0.max(y.0);
            let hi = x.1.min(y.1);
            if hi > lo {
                inter += hi - lo;
            }
        }
    }
    union - inter
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub dense: bool,
    pub max_gap: f64,
    pub t0: Option<usize>,
    /// Largest gap after each depth `t = 0..`.
    pub gaps: Vec<f64>,
}

const MAX_PREIMAGES: usize = 1 << 22;

/// Preimages of `y` under each branch, as `x` in the branch domain.
pub fn branch_preimages(map: &PiecewiseMap, y: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, br) in map.branches().iter().enumerate() {
        let (u, v) = (br.value(br.lo), br.value(br.hi));
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        if y < lo || y > hi {
            continue;
        }
        let x = bisect_monotone(|t| br.value(t), br.lo, br.hi, y, br.sign);
        out.push((i, x));
    }
    out
}

/// Breadth-first backward orbit of `c` inside `J*`; `t0` is the first
/// depth at which the largest gap (endpoints of `J*` included) is below
/// `gap_tolerance`.
pub fn preimage_density_check(
    map: &PiecewiseMap,
    c: f64,
    j_star: Interval,
    depth: usize,
    gap_tolerance: f64,
) -> Result<DensityReport> {
    let img = image_union(map, j_star.0, j_star.1);
    let sd = symmetric_difference(&img, &[j_star]);
    if sd > INCLUSION_TOL {
        return Err(Error::NotInvariant(sd));
    }
    let inside = |x: f64| x >= j_star.0 && x <= j_star.1;
    let mut all: Vec<f64> = if inside(c) { vec![c] } else { vec![] };
    let mut frontier = all.clone();
    let mut gaps = Vec::new();
    let mut t0 = None;
    for t in 0..=depth {
        if t > 0 {
            let mut next = Vec::new();
            for &y in &frontier {
                for (_, x) in branch_preimages(map, y) {
                    if inside(x) {
                        next.push(x);
                    }
                }
            }
            next.sort_by(f64::total_cmp);
            next.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
            all.extend(next.iter().copied());
            all.sort_by(f64::total_cmp);
            all.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
            frontier = next;
        }
        let g = max_gap(&all, j_star);
        gaps.push(g);
        if g < gap_tolerance {
            t0 = Some(t);
            break;
        }
        if all.len() > MAX_PREIMAGES || frontier.is_empty() {
            break;
        }
    }
    let max_gap = *gaps.last().unwrap_or(&(j_star.1 - j_star.0));
    Ok(DensityReport {
        dense: t0.is_some(),
        max_gap,
        t0,
        gaps,
    })
}

fn max_gap(sorted: &[f64], j: Interval) -> f64 {
    let mut prev = j.0;
    let mut g = 0.0f64;
    for &x in sorted {
        g = g.max(x - prev);
        prev = x;
    }
    g.max(j.1 - prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_tent_and_chebyshev_are_not_renormalizable() {
        for f in [PiecewiseMap::tent(2.0).unwrap(), PiecewiseMap::quadratic(4.0).unwrap()] {
            let cy = find_minimal_cycles(&f, 16).unwrap();
            assert_eq!(cy.len(), 1);
            assert_eq!(cy[0].period, 1);
            assert!(same_interval(cy[0].intervals[0], (0.0, 1.0)));
        }
    }

    #[test]
    fn tent_13_has_period_two_cycle() {
        let f = PiecewiseMap::tent(1.3).unwrap();
        let all = find_cycles(&f, 16).unwrap();
        let minimal: Vec<_> = all.iter().filter(|c| c.minimal).collect();
        assert_eq!(minimal.len(), 1);
        let cy = minimal[0];
        assert_eq!(cy.period, 2);
        assert!((cy.intervals[0].0 - 0.455).abs() < 1e-9);
        assert!((cy.intervals[0].1 - 0.531_05).abs() < 1e-9);
        assert!((cy.intervals[1].0 - 0.5915).abs() < 1e-9);
        assert!((cy.intervals[1].1 - 0.65).abs() < 1e-9);
        // the period-one cycle [T²c, Tc] contains it
        assert!(all.iter().any(|c| c.period == 1 && !c.minimal));
    }

    #[test]
    fn renormalized_tent_slope() {
        let f = PiecewiseMap::tent(1.3).unwrap();
        let cy = find_minimal_cycles(&f, 8).unwrap().remove(0);
        let r = renormalize(&f, &cy).unwrap();
        for k in 0..1000 {
            let y = (k as f64 + 0.5) / 1000.0;
            assert!((r.map.deriv_at(y).abs() - 1.69).abs() < 1e-9);
            let lhs = r.lambda(r.map.apply(y));
            let rhs = (0..2).fold(r.lambda(y), |x, _| f.apply(x));
            assert!((lhs - rhs).abs() <= 1e-8 * r.scale);
        }
    }

    #[test]
    fn period_one_renormalization_is_identity() {
        let f = PiecewiseMap::tent(2.0).unwrap();
        let cy = find_minimal_cycles(&f, 4).unwrap().remove(0);
        let r = renormalize(&f, &cy).unwrap();
        assert_eq!(r.map.spec(), f.spec());
        assert_eq!((r.offset, r.scale), (0.0, 1.0));
    }

    #[test]
    fn doubling_preimages_are_dyadic() {
        let d = PiecewiseMap::doubling().unwrap();
        let rep = preimage_density_check(&d, 0.5, (0.0, 1.0), 12, 0.01).unwrap();
        assert!(rep.dense);
        assert_eq!(rep.t0, Some(6));
        assert!((rep.max_gap - 2f64.powi(-7)).abs() < 1e-12);
        let t = PiecewiseMap::tent(2.0).unwrap();
        let rep = preimage_density_check(&t, 0.5, (0.0, 1.0), 12, 0.01).unwrap();
        assert!(rep.t0.unwrap() <= 7);
    }

    #[test]
    fn rotation_preimages_stay_sparse() {
        use crate::config::{BranchSpec, CriticalSpec, MapSpec};
        use crate::map::PowerTerm;
        let t = |center| PowerTerm { coef: 1.0, exp: 1.0, center };
        let spec = MapSpec::piecewise(
            vec![
                BranchSpec { lo: 0.0, hi: 0.7, constant: 0.3, terms: vec![t(0.0)] },
                BranchSpec { lo: 0.7, hi: 1.0, constant: 0.0, terms: vec![t(0.7)] },
            ],
            vec![CriticalSpec { c: 0.7, l_minus: 1.0, l_plus: 1.0 }],
        );
        let m = PiecewiseMap::from_spec(&spec).unwrap();
        let rep = preimage_density_check(&m, 0.7, (0.0, 1.0), 20, 1e-4).unwrap();
        assert!(!rep.dense);
        assert!(rep.max_gap > 1e-4);
    }

    #[test]
    fn non_invariant_j_star_rejected() {
        let d = PiecewiseMap::doubling().unwrap();
        assert!(matches!(
            preimage_density_check(&d, 0.5, (0.2, 0.6), 5, 0.01),
            Err(Error::NotInvariant(_))
        ));
    }
}
