//! Binding periods and the induced Markov construction.
//!
//! A piece of the starting interval is iterated until its image returns to
//! the half-radius critical neighbourhood `Δ₁` at a large scale. Returns at
//! a small scale subdivide the piece by the level sets `I_p` of the binding
//! period and the search resumes after the binding period has elapsed.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{PiecewiseMap, Side};
use crate::orbit::CriticalOrbitRecord;
use crate::piece::Piece;

#[derive(Clone, Debug, Serialize)]
pub struct InducerParams {
    /// Radius of the critical neighbourhood `Δ`.
    pub delta: f64,
    /// Radius of `Δ₁`, `δ/2`.
    pub delta1: f64,
    /// Large-scale threshold.
    pub delta_prime: f64,
    /// Floor on the length of a starting interval.
    pub delta_dprime: f64,
    /// Length cut from each side of a large-scale image.
    pub eps: f64,
    pub zeta: f64,
    pub n_max: usize,
    pub w_min: f64,
    pub leak_budget: f64,
}

pub const DEFAULT_ZETA: f64 = 1.0;
pub const DEFAULT_N_MAX: usize = 5000;
pub const DEFAULT_W_MIN: f64 = 1e-13;
pub const DEFAULT_LEAK_BUDGET: f64 = 1e-3;

impl InducerParams {
    /// Fill the derived quantities from `δ` and `δ′` with the default ratios
    /// `ε = δ′/10`, `δ″ = δ′/3`.
    pub fn new(delta: f64, delta_prime: f64) -> Self {
        InducerParams {
            delta,
            delta1: delta / 2.0,
            delta_prime,
            delta_dprime: delta_prime / 3.0,
            eps: delta_prime / 10.0,
            zeta: DEFAULT_ZETA,
            n_max: DEFAULT_N_MAX,
            w_min: DEFAULT_W_MIN,
            leak_budget: DEFAULT_LEAK_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.delta_prime > 0.0
            && self.delta_prime <= self.delta / 2.0 + 1e-15
            && self.eps > 0.0
            && self.eps < self.delta_prime / 2.0
            && self.delta_dprime > 0.0
            && self.delta_dprime <= self.delta_prime / 3.0 + 1e-15;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "inducer parameters need 0 < δ′ ≤ δ/2, ε < δ′/2, δ″ ≤ δ′/3 (δ={}, δ′={}, ε={}, δ″={})",
                self.delta, self.delta_prime, self.eps, self.delta_dprime
            )))
        }
    }
}

fn record_for<'a>(
    records: &'a [CriticalOrbitRecord],
    index: usize,
    side: Side,
) -> &'a CriticalOrbitRecord {
    &records[2 * index + usize::from(side == Side::Plus)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BindingPeriod {
    pub p: usize,
    /// The shadowing condition held up to the table horizon.
    pub cap_hit: bool,
}

/// Binding period of `x` with respect to its closest critical point; zero
/// outside `Δ = ∪(c − δ, c + δ)`.
pub fn binding_period(
    map: &PiecewiseMap,
    x: f64,
    records: &[CriticalOrbitRecord],
    delta: f64,
) -> BindingPeriod {
    let Some((k, d)) = map.nearest_critical(x) else {
        return BindingPeriod { p: 0, cap_hit: false };
    };
    if d.abs() >= delta {
        return BindingPeriod { p: 0, cap_hit: false };
    }
    let side = if d > 0.0 { Side::Plus } else { Side::Minus };
    let rec = record_for(records, k, side);
    let horizon = rec.horizon;
    if d == 0.0 {
        return BindingPeriod { p: horizon, cap_hit: true };
    }
    let br = map.branch(if side == Side::Plus { k + 1 } else { k });
    let mut y = br.value(x);
    for kk in 1..horizon {
        let z = rec.orbit_at(kk);
        if (y - z).abs() > rec.gamma_at(kk) * rec.dist[kk - 1] {
            return BindingPeriod { p: kk, cap_hit: false };
        }
        y = map.apply(y);
    }
    BindingPeriod { p: horizon, cap_hit: true }
}

/// Radii of the binding-period level sets on one side of a critical
/// point: `radii[p − 1]` is the supremum of distances with period `≥ p`.
#[derive(Clone, Debug, Serialize)]
pub struct SideTable {
    pub c: f64,
    pub side: Side,
    pub radii: Vec<f64>,
    /// Periods at distances below the last radius reach the horizon.
    pub cap_hit: bool,
}

impl SideTable {
    /// Binding period of a point at distance `r` on this side.
    pub fn period_at(&self, r: f64) -> usize {
        self.radii.partition_point(|&rp| r < rp)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BindingTable {
    pub delta: f64,
    pub sides: Vec<SideTable>,
}

impl BindingTable {
    pub fn build(map: &PiecewiseMap, records: &[CriticalOrbitRecord], delta: f64) -> Self {
        let sides = crate::orbit::critical_sides(map)
            .into_par_iter()
            .map(|cs| {
                let c = map.critical_points()[cs.index].c;
                let sgn = cs.side.sign();
                let p_at = |r: f64| binding_period(map, c + sgn * r, records, delta);
                let horizon = record_for(records, cs.index, cs.side).horizon;
                let floor = 1e-18f64;
                let mut radii = vec![delta];
                let mut cap_hit = false;
                loop {
                    let p = radii.len() + 1;
                    if p > horizon {
                        cap_hit = true;
                        break;
                    }
                    let hi = *radii.last().unwrap();
                    if hi <= floor || p_at(floor).p < p {
                        break;
                    }
                    // largest r with period ≥ p, by bisection in ln r
                    let (mut a, mut b) = (floor.ln(), hi.ln());
                    for _ in 0..100 {
                        let m = 0.5 * (a + b);
                        if m <= a || m >= b {
                            break;
                        }
                        if p_at(m.exp()).p >= p {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    radii.push(b.exp().min(hi));
                }
                SideTable { c, side: cs.side, radii, cap_hit }
            })
            .collect();
        BindingTable { delta, sides }
    }

    fn side(&self, index: usize, side: Side) -> &SideTable {
        &self.sides[2 * index + usize::from(side == Side::Plus)]
    }

    /// Binding period of an image point, from the table.
    pub fn period(&self, map: &PiecewiseMap, y: f64) -> usize {
        match map.nearest_critical(y) {
            Some((k, d)) if d.abs() < self.delta => {
                let side = if d > 0.0 { Side::Plus } else { Side::Minus };
                self.side(k, side).period_at(d.abs()).max(1)
            }
            _ => 0,
        }
    }

    /// Level-set boundaries of the binding period inside `(u, v)`.
    pub fn cuts(&self, map: &PiecewiseMap, u: f64, v: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, cp) in map.critical_points().iter().enumerate() {
            let c = cp.c;
            if c - self.delta >= v || c + self.delta <= u {
                continue;
            }
            if c > u && c < v {
                out.push(c);
            }
            for side in [Side::Minus, Side::Plus] {
                for &r in &self.side(k, side).radii {
                    let y = c + side.sign() * r;
                    if y > u && y < v {
                        out.push(y);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// `Σ_{p ≥ p₀} ζ γ_p` over the record's horizon.
fn gamma_tail(rec: &CriticalOrbitRecord, p0: usize, zeta: f64) -> f64 {
    (p0.max(1)..=rec.horizon).map(|p| zeta * rec.gamma_at(p)).sum()
}

/// Default candidate radii `0.1·2^{-j}`, `j = 0..10`.
pub fn default_delta_candidates() -> Vec<f64> {
    (0..=10).map(|j| 0.1 * 2f64.powi(-j)).collect()
}

/// Largest candidate `δ` whose binding period at `c ± δ` makes the
/// `ζγ_p` tail at most 1/2 on every critical side, with disjoint critical
/// neighbourhoods.
pub fn select_delta(
    map: &PiecewiseMap,
    records: &[CriticalOrbitRecord],
    candidates: &[f64],
    zeta: f64,
) -> Result<f64> {
    let cs: Vec<f64> = map.boundaries();
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    'cand: for &delta in &sorted {
        let disjoint = cs.windows(2).all(|w| w[1] - w[0] > 2.0 * delta)
            && cs.iter().all(|&c| c - delta > 0.0 && c + delta < 1.0);
        if !disjoint {
            continue;
        }
        for side in crate::orbit::critical_sides(map) {
            let c = cs[side.index];
            let x = c + side.side.sign() * delta * (1.0 - 1e-9);
            let p = binding_period(map, x, records, delta).p;
            let rec = record_for(records, side.index, side.side);
            if gamma_tail(rec, p, zeta) > 0.5 {
                continue 'cand;
            }
        }
        return Ok(delta);
    }
    Err(Error::NoFeasibleDelta)
}

/// Minimum length of the forward images of the one-sided components of
/// `Δ₁ \ C` up to the first time an image contains a critical point in its
/// interior, capped at `δ/2`.
pub fn estimate_delta_prime(map: &PiecewiseMap, delta: f64, n_max: usize, w_min: f64) -> Result<f64> {
    let d1 = delta / 2.0;
    let mut best = d1;
    for cp in map.critical_points() {
        for side in [Side::Minus, Side::Plus] {
            let (lo, hi) = match side {
                Side::Minus => (cp.c - d1, cp.c),
                _ => (cp.c, cp.c + d1),
            };
            let mut piece = Piece::new(lo, hi);
            let mut hit = false;
            for _ in 0..n_max {
                let next = piece.step(map);
                if next.len() != 1 {
                    // the image met the critical set before this step
                    hit = true;
                    break;
                }
                piece = next.into_iter().next().unwrap();
                let (u, v) = piece.image(map);
                best = best.min(v - u);
                if map.critical_points().iter().any(|c| c.c > u && c.c < v) {
                    hit = true;
                    break;
                }
            }
            if !hit {
                return Err(Error::NoExpansion { c: cp.c, n_max });
            }
        }
    }
    Ok(best.max(w_min))
}

/// `δ`, `δ′` and defaults for everything else.
pub fn default_params(map: &PiecewiseMap, records: &[CriticalOrbitRecord]) -> Result<InducerParams> {
    let delta = select_delta(map, records, &default_delta_candidates(), DEFAULT_ZETA)?;
    let dp = estimate_delta_prime(map, delta, DEFAULT_N_MAX, DEFAULT_W_MIN)?;
    Ok(InducerParams::new(delta, dp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnLabel {
    Deep,
    Shallow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReturnEvent {
    pub nu: usize,
    pub p: usize,
    pub label: ReturnLabel,
}

#[derive(Clone, Debug, Serialize)]
pub struct InducedElement {
    pub lo: f64,
    pub hi: f64,
    pub p_hat: usize,
    pub history: Vec<ReturnEvent>,
    pub image: (f64, f64),
    /// `sup |Df^p̂| / inf |Df^p̂|` over 17 interior points.
    pub distortion: f64,
    #[serde(skip)]
    pub path: Vec<u32>,
}

impl InducedElement {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn piece(&self) -> Piece {
        Piece {
            lo: self.lo,
            hi: self.hi,
            path: self.path.clone(),
        }
    }

    pub fn n_deep(&self) -> usize {
        self.history.iter().filter(|e| e.label == ReturnLabel::Deep).count()
    }

    pub fn n_shallow(&self) -> usize {
        self.history.len() - self.n_deep()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InducedMap {
    pub j: (f64, f64),
    pub params: InducerParams,
    pub elements: Vec<InducedElement>,
    pub unresolved_mass: f64,
    pub unresolved_pieces: usize,
    /// Largest element distortion (the run's `K_ε`).
    pub max_distortion: f64,
    /// Smallest gap between consecutive shallow returns, if any occurred.
    pub min_shallow_gap: Option<usize>,
}

impl InducedMap {
    pub fn total_len(&self) -> f64 {
        self.j.1 - self.j.0
    }

    pub fn leak_fraction(&self) -> f64 {
        self.unresolved_mass / self.total_len()
    }

    pub fn check_leak(&self) -> Result<()> {
        let fraction = self.leak_fraction();
        if fraction > self.params.leak_budget {
            Err(Error::LeakBudgetExceeded {
                fraction,
                budget: self.params.leak_budget,
            })
        } else {
            Ok(())
        }
    }
}

/// A piece of the starting interval still being iterated.
#[derive(Clone, Debug)]
pub(crate) struct Item {
    pub piece: Piece,
    pub history: Vec<ReturnEvent>,
    /// Earliest time at which the next return may be registered.
    pub min_next: usize,
}

#[derive(Default)]
pub(crate) struct Outcome {
    pub elements: Vec<InducedElement>,
    pub unresolved_mass: f64,
    pub unresolved_pieces: usize,
}

impl Outcome {
    fn absorb(&mut self, other: Outcome) {
        self.elements.extend(other.elements);
        self.unresolved_mass += other.unresolved_mass;
        self.unresolved_pieces += other.unresolved_pieces;
    }
}

#[derive(Default)]
struct Step {
    done: Option<InducedElement>,
    lost: Option<f64>,
    more: Vec<Item>,
}

pub(crate) struct Engine<'a> {
    pub map: &'a PiecewiseMap,
    pub table: &'a BindingTable,
    pub params: &'a InducerParams,
}

/// Every intermediate image of the piece is wider than `w_min`; below that
/// the composed branches no longer resolve points of the piece.
pub(crate) fn resolved(map: &PiecewiseMap, piece: &Piece, w_min: f64) -> bool {
    let (mut a, mut b) = (piece.lo, piece.hi);
    for &k in &piece.path {
        let br = map.branch(k as usize);
        a = br.value(a);
        b = br.value(b);
        if (a - b).abs() < w_min {
            return false;
        }
    }
    true
}

const DISTORTION_SAMPLES: usize = 17;
const PARALLEL_FRONTIER: usize = 256;

impl<'a> Engine<'a> {
    fn meets_delta1(&self, u: f64, v: f64) -> bool {
        let d1 = self.params.delta1;
        self.map
            .critical_points()
            .iter()
            .any(|cp| v > cp.c - d1 && u < cp.c + d1)
    }

    pub(crate) fn resolved(&self, piece: &Piece) -> bool {
        resolved(self.map, piece, self.params.w_min)
    }

    /// Cut `piece` where its image crosses a level-set boundary of the
    /// binding period; each sub-piece comes with its period.
    fn subdivide(&self, piece: &Piece) -> Vec<(Piece, usize)> {
        let (u, v) = piece.image(self.map);
        let cuts = self.table.cuts(self.map, u, v);
        let mut xs: Vec<f64> = cuts.iter().map(|&y| piece.preimage(self.map, y)).collect();
        xs.sort_by(f64::total_cmp);
        let mut bounds = Vec::with_capacity(xs.len() + 2);
        bounds.push(piece.lo);
        bounds.extend(xs);
        bounds.push(piece.hi);
        let mut out = Vec::with_capacity(bounds.len() - 1);
        for w in bounds.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let sub = piece.with_bounds(w[0], w[1]);
            let (a, b) = sub.image(self.map);
            let p = self.table.period(self.map, 0.5 * (a + b));
            out.push((sub, p));
        }
        out
    }

    /// Register a return of `piece` at its current time and split it by
    /// binding period. With `record_free` false, pieces outside `Δ` get no
    /// event.
    pub(crate) fn seed(&self, piece: &Piece, history: &[ReturnEvent], record_free: bool) -> Vec<Item> {
        let n = piece.time();
        self.subdivide(piece)
            .into_iter()
            .map(|(sub, p)| {
                let mut h = history.to_vec();
                if p > 0 || record_free {
                    h.push(ReturnEvent {
                        nu: n,
                        p,
                        label: if p > 0 { ReturnLabel::Deep } else { ReturnLabel::Shallow },
                    });
                }
                Item {
                    piece: sub,
                    history: h,
                    min_next: n + p.max(1),
                }
            })
            .collect()
    }

    fn element(&self, piece: Piece, history: Vec<ReturnEvent>) -> InducedElement {
        let len = piece.len();
        let mut lo_d = f64::INFINITY;
        let mut hi_d = f64::NEG_INFINITY;
        for i in 0..DISTORTION_SAMPLES {
            let x = piece.lo + len * (i + 1) as f64 / (DISTORTION_SAMPLES + 1) as f64;
            let (_, ld) = piece.log_deriv(self.map, x);
            lo_d = lo_d.min(ld);
            hi_d = hi_d.max(ld);
        }
        InducedElement {
            lo: piece.lo,
            hi: piece.hi,
            p_hat: piece.time(),
            image: piece.image(self.map),
            distortion: (hi_d - lo_d).exp(),
            history,
            path: piece.path,
        }
    }

    fn step(&self, it: Item) -> Step {
        let n = it.piece.time();
        let len = it.piece.len();
        let lost = Step { lost: Some(len), ..Step::default() };
        if len < self.params.w_min || n >= self.params.n_max {
            return lost;
        }
        if !self.resolved(&it.piece) {
            return lost;
        }
        let (u, v) = it.piece.image(self.map);
        if n >= it.min_next && self.meets_delta1(u, v) {
            let eps = self.params.eps;
            if v - u >= self.params.delta_prime + 2.0 * eps {
                let a = it.piece.preimage(self.map, u + eps);
                let b = it.piece.preimage(self.map, v - eps);
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                let mut more = Vec::new();
                for side in [it.piece.with_bounds(it.piece.lo, a), it.piece.with_bounds(b, it.piece.hi)] {
                    if side.hi > side.lo {
                        more.extend(self.seed(&side, &it.history, true));
                    }
                }
                let done = (b > a).then(|| self.element(it.piece.with_bounds(a, b), it.history));
                return Step { done, lost: None, more };
            }
            return Step { more: self.seed(&it.piece, &it.history, true), ..Step::default() };
        }
        let more = it
            .piece
            .step(self.map)
            .into_iter()
            .map(|piece| Item {
                piece,
                history: it.history.clone(),
                min_next: it.min_next,
            })
            .collect();
        Step { more, ..Step::default() }
    }

    fn record(out: &mut Outcome, st: Step, queue: &mut Vec<Item>) {
        if let Some(e) = st.done {
            out.elements.push(e);
        }
        if let Some(l) = st.lost {
            out.unresolved_mass += l;
            out.unresolved_pieces += 1;
        }
        queue.extend(st.more);
    }

    fn run_one(&self, it: Item) -> Outcome {
        let mut out = Outcome::default();
        let mut stack = vec![it];
        while let Some(it) = stack.pop() {
            let st = self.step(it);
            // keep depth-first order: push children reversed
            let mut kids = Vec::new();
            Self::record(&mut out, st, &mut kids);
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    /// Run the worklist to completion. A breadth-first prefix builds a wide
    /// enough frontier for the parallel phase; results do not depend on
    /// the thread count once elements are sorted.
    pub(crate) fn run(&self, items: Vec<Item>) -> Outcome {
        let mut out = Outcome::default();
        let mut frontier = items;
        let mut rounds = 0;
        while !frontier.is_empty() && frontier.len() < PARALLEL_FRONTIER && rounds < 64 {
            let mut next = Vec::new();
            for it in frontier {
                let st = self.step(it);
                Self::record(&mut out, st, &mut next);
            }
            frontier = next;
            rounds += 1;
        }
        let parts: Vec<Outcome> = frontier.into_par_iter().map(|it| self.run_one(it)).collect();
        for p in parts {
            out.absorb(p);
        }
        out.elements.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        out
    }
}

fn min_shallow_gap(elements: &[InducedElement]) -> Option<usize> {
    elements
        .iter()
        .flat_map(|e| {
            e.history.windows(2).filter_map(|w| {
                (w[0].label == ReturnLabel::Shallow && w[1].label == ReturnLabel::Shallow)
                    .then(|| w[1].nu - w[0].nu)
            })
        })
        .min()
}

/// Run the construction on `J` without enforcing the leak budget.
pub fn build_induced_report(
    map: &PiecewiseMap,
    j: (f64, f64),
    params: &InducerParams,
    records: &[CriticalOrbitRecord],
) -> Result<InducedMap> {
    params.validate()?;
    if !(j.1 - j.0 >= params.delta_dprime) {
        return Err(Error::Precondition(format!(
            "|J| = {:.6e} is below the starting-interval floor δ″ = {:.6e}",
            j.1 - j.0,
            params.delta_dprime
        )));
    }
    if !(j.0 >= 0.0 && j.1 <= 1.0) {
        return Err(Error::Precondition("J must lie in [0,1]".into()));
    }
    let table = BindingTable::build(map, records, params.delta);
    let engine = Engine { map, table: &table, params };
    let seeds = engine.seed(&Piece::new(j.0, j.1), &[], false);
    let out = engine.run(seeds);
    let max_distortion = out.elements.iter().map(|e| e.distortion).fold(1.0, f64::max);
    let min_gap = min_shallow_gap(&out.elements);
    Ok(InducedMap {
        j,
        params: params.clone(),
        elements: out.elements,
        unresolved_mass: out.unresolved_mass,
        unresolved_pieces: out.unresolved_pieces,
        max_distortion,
        min_shallow_gap: min_gap,
    })
}

/// Run the construction and enforce the leak budget.
pub fn build_induced(
    map: &PiecewiseMap,
    j: (f64, f64),
    params: &InducerParams,
    records: &[CriticalOrbitRecord],
) -> Result<InducedMap> {
    let ind = build_induced_report(map, j, params, records)?;
    ind.check_leak()?;
    Ok(ind)
}

/// `t_n = (unresolved + Σ_{p̂ > n} |w|) / |J|` for `n = 0..=max p̂`.
pub fn tail_distribution(ind: &InducedMap) -> Vec<f64> {
    tail_from_masses(
        ind.elements.iter().map(|e| (e.p_hat, e.len())),
        ind.unresolved_mass,
        ind.total_len(),
    )
}

/// Tail of a return-time distribution given `(time, mass)` pairs.
pub fn tail_from_masses(
    masses: impl Iterator<Item = (usize, f64)>,
    unresolved: f64,
    total: f64,
) -> Vec<f64> {
    let mut by_time: Vec<f64> = Vec::new();
    for (t, m) in masses {
        if by_time.len() <= t {
            by_time.resize(t + 1, 0.0);
        }
        by_time[t] += m;
    }
    let mut out = vec![0.0; by_time.len().max(1)];
    let mut acc = unresolved;
    for n in (0..out.len()).rev() {
        out[n] = acc / total;
        acc += by_time[n];
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct DfBoundReport {
    pub k1: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Empirical `K₁` with `|Df^p(x)|·γ_p(c) ≥ K₁` over deep returns.
pub fn check_df_bound(
    map: &PiecewiseMap,
    ind: &InducedMap,
    records: &[CriticalOrbitRecord],
) -> DfBoundReport {
    let mut k1 = f64::INFINITY;
    let mut samples = 0;
    for e in &ind.elements {
        let piece = e.piece();
        for ev in e.history.iter().filter(|ev| ev.label == ReturnLabel::Deep) {
            if ev.nu + ev.p > piece.time() {
                continue;
            }
            for frac in [0.25, 0.5, 0.75] {
                let x = e.lo + frac * e.len();
                let y = piece.eval_prefix(map, x, ev.nu);
                let Some((k, d)) = map.nearest_critical(y) else { continue };
                let side = if d > 0.0 { Side::Plus } else { Side::Minus };
                let rec = record_for(records, k, side);
                let mut z = y;
                let mut ld = 0.0;
                for &b in &piece.path[ev.nu..ev.nu + ev.p] {
                    let br = map.branch(b as usize);
                    ld += br.deriv(z).abs().ln();
                    z = br.value(z);
                }
                let prod = (ld + rec.gamma_at(ev.p).ln()).exp();
                k1 = k1.min(prod);
                samples += 1;
            }
        }
    }
    DfBoundReport {
        k1,
        samples,
        pass: samples > 0 && k1 > 0.0 && k1.is_finite(),
    }
}
