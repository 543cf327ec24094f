//! Full Markov extension of the induced map onto a nice neighbourhood `Ω`
//! of a critical point, the tail of the return time `R`, separation-time
//! distortion and the tower over `f^R`.
//!
//! `Ω` is the component containing `c` of the complement of the backward
//! orbit of a periodic orbit that avoids the critical orbits; its boundary
//! never maps into its interior. Induced elements are iterated further
//! until sub-pieces land on `Ω` exactly. What is left over is fed back into
//! the induced construction with its time carried along.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cycles::{branch_preimages, preimage_density_check, Interval};
use crate::error::{Error, Result};
use crate::inducer::{resolved, InducerParams};
use crate::map::{PiecewiseMap, Side};
use crate::orbit::{predicted_regime, CriticalOrbitRecord};
use crate::piece::{bisect_monotone, Piece};
use crate::regime::{classify_tail, linear_fit, Regime, RegimeFit};

pub const DEFAULT_MAX_GENERATIONS: usize = 50;
pub const ENDPOINT_TOL: f64 = 1e-9;
/// Pieces whose endpoint images carry a rounding-error bound above this
/// are dropped. The bound is pessimistic, hence the margin over
/// `ENDPOINT_TOL`.
const ERROR_BUDGET: f64 = 100.0 * ENDPOINT_TOL;
/// Pieces shorter than this fraction of `|Ω|` are not refined further.
pub const MASS_FLOOR: f64 = 1e-10;
const MAX_ANCHOR_PERIOD: usize = 4;
const MAX_ANCHOR_DEPTH: usize = 24;
const MAX_DENSITY_DEPTH: usize = 40;
const MAX_WITNESS_PIECES: usize = 1 << 16;
const SCAN_POINTS: usize = 1 << 12;
const SAME_POINT: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    /// A preimage `f^{-t}(c)`.
    pub x: f64,
    pub t: usize,
    /// Maximal interval around `x` mapped monotonically onto `Ω` by `f^t`.
    pub lo: f64,
    pub hi: f64,
    /// `x` sits in `[0.2, 0.8]` of the interval in relative position.
    pub middle_fifth: bool,
    /// `|w_x| ≤ δ′/10`.
    pub small: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OmegaChoice {
    pub c: f64,
    pub omega: Interval,
    /// Periodic orbit whose preimages bound `Ω`.
    pub anchor: Vec<f64>,
    /// Backward depth of the anchor preimages that bound `Ω`.
    pub anchor_depth: usize,
    pub t0: usize,
    pub witnesses: Vec<Witness>,
    /// Preimages of `c` up to depth `t0` whose monotone domain does not
    /// cover `Ω`.
    pub missing_witnesses: usize,
}

fn critical_orbit_points(map: &PiecewiseMap, steps: usize) -> Vec<f64> {
    let mut pts = Vec::new();
    for (i, cp) in map.critical_points().iter().enumerate() {
        pts.push(cp.c);
        for side in [Side::Minus, Side::Plus] {
            let mut y = map.critical_value(i, side);
            for _ in 0..steps {
                pts.push(y);
                y = map.apply(y);
            }
        }
    }
    pts
}

fn iterate_plain(map: &PiecewiseMap, x: f64, n: usize) -> f64 {
    (0..n).fold(x, |y, _| map.apply(y))
}

/// A periodic orbit in the interior of `x_set` that keeps away from the
/// critical orbits, searched by period `1..=4`.
pub fn periodic_anchor(map: &PiecewiseMap, x_set: Interval) -> Option<Vec<f64>> {
    let crit = critical_orbit_points(map, 64);
    let near_crit = |y: f64| crit.iter().any(|&z| (z - y).abs() < SAME_POINT);
    let interior = |y: f64| y > x_set.0 + SAME_POINT && y < x_set.1 - SAME_POINT;
    for q in 1..=MAX_ANCHOR_PERIOD {
        let h = |y: f64| iterate_plain(map, y, q) - y;
        let grid: Vec<f64> = (0..=SCAN_POINTS)
            .map(|i| x_set.0 + (x_set.1 - x_set.0) * i as f64 / SCAN_POINTS as f64)
            .collect();
        let mut roots = Vec::new();
        for w in grid.windows(2) {
            let (ha, hb) = (h(w[0]), h(w[1]));
            let root = if ha == 0.0 {
                w[0]
            } else if ha * hb < 0.0 {
                bisect_monotone(h, w[0], w[1], 0.0, if ha < 0.0 { 1.0 } else { -1.0 })
            } else {
                continue;
            };
            if h(root).abs() < 1e-10 {
                roots.push(root);
            }
        }
        for y in roots {
            let orbit: Vec<f64> = (0..q).map(|i| iterate_plain(map, y, i)).collect();
            let least = (1..q).all(|i| (orbit[i] - y).abs() > SAME_POINT);
            if least && orbit.iter().all(|&z| interior(z) && !near_crit(z)) {
                let mut o = orbit;
                o.sort_by(f64::total_cmp);
                return Some(o);
            }
        }
    }
    None
}

fn dedup_sorted(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
}

/// Pick `Ω` around the critical point `c_index`, the witness depth `t0` and
/// the witness intervals. `max_len` bounds `|Ω|`.
pub fn choose_omega(
    map: &PiecewiseMap,
    x_set: Interval,
    c_index: usize,
    delta_prime: f64,
    max_len: f64,
) -> Result<OmegaChoice> {
    let c = map
        .critical_points()
        .get(c_index)
        .ok_or_else(|| Error::Precondition(format!("no critical point with index {c_index}")))?
        .c;
    if !(c > x_set.0 && c < x_set.1) {
        return Err(Error::Precondition(format!("c = {c} is not inside the invariant set")));
    }
    let anchor = periodic_anchor(map, x_set)
        .ok_or_else(|| Error::Precondition("no periodic orbit away from the critical orbits".into()))?;

    let mut set = anchor.clone();
    let mut frontier = anchor.clone();
    let mut found = None;
    for k in 0..=MAX_ANCHOR_DEPTH {
        if k > 0 {
            let mut next: Vec<f64> = frontier
                .iter()
                .flat_map(|&y| branch_preimages(map, y).into_iter().map(|(_, x)| x))
                .collect();
            dedup_sorted(&mut next);
            set.extend(next.iter().copied());
            dedup_sorted(&mut set);
            frontier = next;
        }
        let left = set.iter().copied().filter(|&s| s < c - 1e-12).fold(f64::NAN, f64::max);
        let right = set.iter().copied().filter(|&s| s > c + 1e-12).fold(f64::NAN, f64::min);
        if left >= x_set.0 && right <= x_set.1 && right - left <= max_len {
            found = Some(((left, right), k));
            break;
        }
        if set.len() > 1 << 20 || frontier.is_empty() {
            break;
        }
    }
    let (omega, anchor_depth) =
        found.ok_or_else(|| Error::Precondition("no nice interval of the requested size".into()))?;

    let density = preimage_density_check(map, c, x_set, MAX_DENSITY_DEPTH, delta_prime)?;
    let t0 = density.t0.ok_or(Error::DensityFailure(density.max_gap))?;

    let (a, b) = omega;
    let mut witnesses = Vec::new();
    let mut missing = 0;
    let mut pieces = vec![Piece::new(x_set.0, x_set.1)];
    for t in 0..=t0 {
        for p in &pieces {
            let (u, v) = p.image(map);
            if !(u < c && c < v) {
                continue;
            }
            if u <= a + ENDPOINT_TOL && v >= b - ENDPOINT_TOL {
                let x = p.preimage(map, c);
                let w = p.pull_back(map, a, b);
                let rel = (x - w.lo) / w.len();
                witnesses.push(Witness {
                    x,
                    t,
                    lo: w.lo,
                    hi: w.hi,
                    middle_fifth: (0.2..=0.8).contains(&rel),
                    small: w.len() <= delta_prime / 10.0,
                });
            } else {
                missing += 1;
            }
        }
        if t == t0 || pieces.len() > MAX_WITNESS_PIECES {
            break;
        }
        pieces = pieces.iter().flat_map(|p| p.step(map)).collect();
    }
    witnesses.sort_by(|p, q| p.x.total_cmp(&q.x));
    Ok(OmegaChoice {
        c,
        omega,
        anchor,
        anchor_depth,
        t0,
        witnesses,
        missing_witnesses: missing,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MarkovElement {
    pub lo: f64,
    pub hi: f64,
    /// Return time: `f^R` maps the element onto `Ω`.
    pub r: usize,
    /// Time of the induced element it was cut from.
    pub p_hat: usize,
    /// Extra iterates after `p̂`.
    pub t: usize,
    pub generation: usize,
    #[serde(skip)]
    pub path: Vec<u32>,
}

impl MarkovElement {
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

    /// `f^R(x)` along the element itinerary.
    pub fn eval(&self, map: &PiecewiseMap, x: f64) -> f64 {
        self.eval_prefix(map, x, self.r)
    }

    pub fn eval_prefix(&self, map: &PiecewiseMap, x: f64, steps: usize) -> f64 {
        self.path[..steps]
            .iter()
            .fold(x, |y, &b| map.branch(b as usize).value(y))
    }

    /// `ln|Df^R(x)|`.
    pub fn log_deriv(&self, map: &PiecewiseMap, x: f64) -> f64 {
        let mut y = x;
        let mut ld = 0.0;
        for &b in &self.path {
            let br = map.branch(b as usize);
            ld += br.deriv(y).abs().ln();
            y = br.value(y);
        }
        ld
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FullMarkovMap {
    pub c: f64,
    pub omega: Interval,
    pub t0: usize,
    /// Smallest `|w̃|/|w|` over emitted elements.
    pub xi: f64,
    pub elements: Vec<MarkovElement>,
    pub gcd_r: usize,
    pub coverage: f64,
    /// Mass lost to the resolution and time limits.
    pub unresolved_mass: f64,
    /// Mass still pending when the generation cap was reached.
    pub leftover_mass: f64,
    pub generations: usize,
    pub params: InducerParams,
}

impl FullMarkovMap {
    pub fn omega_len(&self) -> f64 {
        self.omega.1 - self.omega.0
    }

    /// Index of the element containing `x`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let i = self.elements.partition_point(|e| e.lo <= x);
        if i == 0 {
            return None;
        }
        let e = &self.elements[i - 1];
        (x < e.hi || (x == e.hi && e.hi == e.lo)).then_some(i - 1)
    }

    pub fn max_endpoint_error(&self, map: &PiecewiseMap) -> f64 {
        self.elements
            .iter()
            .map(|e| {
                let (u, v) = e.piece().image(map);
                (u - self.omega.0).abs().max((v - self.omega.1).abs())
            })
            .fold(0.0, f64::max)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Default)]
struct Outcome {
    found: Vec<MarkovElement>,
    leftover: f64,
    lost: f64,
    generations: usize,
}

/// Split `piece` where its image crosses any of `points`.
fn split_at(map: &PiecewiseMap, piece: &Piece, points: &[f64]) -> Vec<Piece> {
    let (u, v) = piece.image(map);
    let mut xs: Vec<f64> = points
        .iter()
        .filter(|&&y| y > u && y < v)
        .map(|&y| piece.preimage(map, y))
        .collect();
    if xs.is_empty() {
        return vec![piece.clone()];
    }
    xs.sort_by(f64::total_cmp);
    let mut bounds = vec![piece.lo];
    bounds.extend(xs);
    bounds.push(piece.hi);
    bounds
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| piece.with_bounds(w[0], w[1]))
        .collect()
}

/// Forward bound on the rounding error of `f^n(x)` along the itinerary,
/// `e_{k+1} = |Df(y_k)|·e_k + ε(1 + |y_{k+1}|)`.
fn rounding_bound(map: &PiecewiseMap, piece: &Piece, x: f64) -> f64 {
    let mut y = x;
    let mut e = 0.0;
    for &k in &piece.path {
        let br = map.branch(k as usize);
        let d = br.deriv(y).abs();
        y = br.value(y);
        e = d * e + f64::EPSILON * (1.0 + y.abs());
    }
    e
}

/// A piece in flight: its generation (number of partial landings in `Ω`)
/// and the first time its image reached the large scale.
struct Pending {
    piece: Piece,
    generation: usize,
    p_hat: Option<usize>,
}

struct Refiner<'a> {
    map: &'a PiecewiseMap,
    omega: Interval,
    floor: f64,
    params: &'a InducerParams,
    max_generations: usize,
}

impl Refiner<'_> {
    fn step(&self, it: Pending, out: &mut Outcome, next: &mut Vec<Pending>) {
        let (a, b) = self.omega;
        let params = self.params;
        for sub in it.piece.step(self.map) {
            if sub.len() < self.floor
                || sub.time() >= params.n_max
                || !resolved(self.map, &sub, params.w_min)
                || rounding_bound(self.map, &sub, sub.lo).max(rounding_bound(self.map, &sub, sub.hi)) > ERROR_BUDGET
            {
                out.lost += sub.len();
                continue;
            }
            for part in split_at(self.map, &sub, &[a, b]) {
                let (u, v) = part.image(self.map);
                let p_hat = it.p_hat.or((v - u >= params.delta_prime).then(|| part.time()));
                let mid = 0.5 * (u + v);
                let generation = it.generation;
                if !(mid > a && mid < b) {
                    next.push(Pending { piece: part, generation, p_hat });
                } else if (u - a).abs() <= ENDPOINT_TOL && (v - b).abs() <= ENDPOINT_TOL {
                    let r = part.time();
                    let p_hat = p_hat.unwrap_or(r);
                    out.generations = out.generations.max(generation + 1);
                    out.found.push(MarkovElement {
                        lo: part.lo,
                        hi: part.hi,
                        r,
                        p_hat,
                        t: r - p_hat,
                        generation,
                        path: part.path,
                    });
                } else if generation + 1 >= self.max_generations {
                    out.leftover += part.len();
                } else {
                    next.push(Pending {
                        piece: part,
                        generation: generation + 1,
                        p_hat,
                    });
                }
            }
        }
    }

    fn run_one(&self, it: Pending) -> Outcome {
        let mut out = Outcome::default();
        let mut stack = vec![it];
        while let Some(it) = stack.pop() {
            let mut kids = Vec::new();
            self.step(it, &mut out, &mut kids);
            stack.extend(kids.into_iter().rev());
        }
        out
    }
}

const PARALLEL_FRONTIER: usize = 256;

/// Build `f^R: Ω → Ω` by iterating `Ω` and cutting its pieces at the
/// branch boundaries and at `∂Ω`. A piece whose image is exactly `Ω`
/// becomes an element; one landing inside `Ω` without covering it starts a
/// new generation and keeps going.
pub fn build_full_markov(
    map: &PiecewiseMap,
    choice: &OmegaChoice,
    params: &InducerParams,
    max_generations: usize,
) -> Result<FullMarkovMap> {
    let omega = choice.omega;
    let len = omega.1 - omega.0;
    let mut params = params.clone();
    params.delta_dprime = params.delta_dprime.min(len);
    params.validate()?;
    let refiner = Refiner {
        map,
        omega,
        floor: params.w_min.max(MASS_FLOOR * len),
        params: &params,
        max_generations,
    };
    let mut out = Outcome::default();
    let mut frontier = vec![Pending {
        piece: Piece::new(omega.0, omega.1),
        generation: 0,
        p_hat: None,
    }];
    let mut rounds = 0;
    while !frontier.is_empty() && frontier.len() < PARALLEL_FRONTIER && rounds < 64 {
        let mut next = Vec::new();
        for it in frontier {
            refiner.step(it, &mut out, &mut next);
        }
        frontier = next;
        rounds += 1;
    }
    let parts: Vec<Outcome> = frontier.into_par_iter().map(|it| refiner.run_one(it)).collect();
    for p in parts {
        out.found.extend(p.found);
        out.lost += p.lost;
        out.leftover += p.leftover;
        out.generations = out.generations.max(p.generations);
    }
    let mut elements = out.found;
    elements.sort_by(|p, q| p.lo.total_cmp(&q.lo));
    let covered: f64 = elements.iter().map(|e| e.len()).sum();
    let gcd_r = elements.iter().fold(0, |g, e| gcd(g, e.r));
    let xi = elements.iter().map(|e| e.len() / len).fold(f64::INFINITY, f64::min);
    let fm = FullMarkovMap {
        c: choice.c,
        omega,
        t0: choice.t0,
        xi: if xi.is_finite() { xi } else { 0.0 },
        elements,
        gcd_r,
        coverage: covered / len,
        unresolved_mass: out.lost,
        leftover_mass: out.leftover,
        generations: out.generations,
        params: params.clone(),
    };
    let missing = (fm.unresolved_mass + fm.leftover_mass) / len;
    if missing > params.leak_budget {
        return Err(Error::LeakBudgetExceeded {
            fraction: missing,
            budget: params.leak_budget,
        });
    }
    Ok(fm)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReturnTail {
    /// `|{R > n}| / |Ω|` for `n = 0..=max R`, unassigned mass included.
    pub tail: Vec<f64>,
    pub measured: RegimeFit,
    pub predicted: RegimeFit,
    pub matches: bool,
}

pub fn return_tail(fm: &FullMarkovMap, records: &[CriticalOrbitRecord]) -> ReturnTail {
    let floor_mass = fm.unresolved_mass + fm.leftover_mass;
    let tail = crate::inducer::tail_from_masses(
        fm.elements.iter().map(|e| (e.r, e.len())),
        floor_mass,
        fm.omega_len(),
    );
    let measured = classify_tail(&tail, floor_mass / fm.omega_len());
    let predicted = predicted_regime(records);
    let matches = measured.regime != Regime::Inconclusive && measured.regime.same_kind(&predicted.regime);
    ReturnTail {
        tail,
        measured,
        predicted,
        matches,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DistortionPair {
    pub s: usize,
    pub ratio_minus_1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistortionReport {
    pub beta: f64,
    pub c_hat: f64,
    pub pass: bool,
    /// Every sampled ratio was at the rounding floor.
    pub trivial: bool,
    /// Fraction of fitted points under the envelope `2·Ĉβ̂^s`.
    pub envelope_fraction: f64,
    pub pairs: Vec<DistortionPair>,
}

/// Ratios below this are rounding noise in the log-derivative difference.
const RATIO_FLOOR: f64 = 1e-11;
const QUANTILE: f64 = 0.99;
const MIN_GROUP: usize = 10;

/// Separation time of `x` and `y` under `f̂ = f^R`, both starting in
/// element `i`.
fn separation(map: &PiecewiseMap, fm: &FullMarkovMap, mut i: usize, x: f64, y: f64, depth: usize) -> usize {
    let (mut x, mut y) = (x, y);
    for s in 1..=depth {
        let e = &fm.elements[i];
        x = e.eval(map, x);
        y = e.eval(map, y);
        match (fm.locate(x), fm.locate(y)) {
            (Some(a), Some(b)) if a == b => i = a,
            _ => return s,
        }
    }
    depth
}

/// Sample pairs inside common elements, measure `|Df̂(x)/Df̂(y) − 1|` against
/// the separation time and fit the upper envelope `Ĉβ̂^s`.
pub fn separation_distortion_check(
    map: &PiecewiseMap,
    fm: &FullMarkovMap,
    depth: usize,
    samples: usize,
    seed: u64,
) -> Result<DistortionReport> {
    if fm.coverage < 0.99 {
        return Err(Error::Precondition(format!(
            "coverage {:.6} is below 0.99",
            fm.coverage
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(samples);
    let mut tries = 0;
    while starts.len() < samples && tries < 100 * samples {
        tries += 1;
        let u = rng.gen_range(fm.omega.0..fm.omega.1);
        if let Some(i) = fm.locate(u) {
            starts.push((i, u));
        }
    }
    let pairs: Vec<DistortionPair> = starts
        .par_iter()
        .flat_map_iter(|&(i, x)| {
            let e = &fm.elements[i];
            let ldx = e.log_deriv(map, x);
            (1..=12).filter_map(move |k| {
                let y = x + 10f64.powi(-k) * (e.hi - x);
                if !(y > x && y < e.hi) {
                    return None;
                }
                let s = separation(map, fm, i, x, y, depth);
                let ratio = ((ldx - e.log_deriv(map, y)).exp() - 1.0).abs();
                Some(DistortionPair { s, ratio_minus_1: ratio })
            })
        })
        .collect();
    let deep = pairs.iter().filter(|p| p.s >= 3).count();
    if deep < 100 {
        return Err(Error::InsufficientPairs(deep));
    }
    let fitted: Vec<&DistortionPair> = pairs.iter().filter(|p| p.ratio_minus_1 > RATIO_FLOOR).collect();
    if fitted.len() * 100 < pairs.len() {
        return Ok(DistortionReport {
            beta: 0.0,
            c_hat: 0.0,
            pass: true,
            trivial: true,
            envelope_fraction: 1.0,
            pairs,
        });
    }
    let max_s = fitted.iter().map(|p| p.s).max().unwrap_or(0);
    let mut xs = Vec::new();
    let mut qs = Vec::new();
    for s in 0..=max_s {
        let mut v: Vec<f64> = fitted
            .iter()
            .filter(|p| p.s == s)
            .map(|p| p.ratio_minus_1.ln())
            .collect();
        if v.len() < MIN_GROUP {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let idx = ((QUANTILE * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        xs.push(s as f64);
        qs.push(v[idx]);
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientPairs(deep));
    }
    let fit = linear_fit(&xs, &qs);
    let slack = 2f64.ln();
    let under = fitted
        .iter()
        .filter(|p| p.ratio_minus_1.ln() <= fit.intercept + fit.slope * p.s as f64 + slack)
        .count();
    let envelope_fraction = under as f64 / fitted.len() as f64;
    Ok(DistortionReport {
        beta: fit.slope.exp(),
        c_hat: fit.intercept.exp(),
        pass: fit.slope < 0.0 && envelope_fraction >= QUANTILE,
        trivial: false,
        envelope_fraction,
        pairs,
    })
}

/// The tower over `f^R`: element `w` carries levels `0..T(w)` with
/// `T = R/m`.
#[derive(Clone, Debug, Serialize)]
pub struct Tower {
    pub m: usize,
    pub heights: Vec<usize>,
    /// Lebesgue mass of each level.
    pub level_masses: Vec<f64>,
}

impl Tower {
    pub fn total_mass(&self) -> f64 {
        self.level_masses.iter().sum()
    }
}

pub fn build_tower(fm: &FullMarkovMap, m: usize) -> Result<Tower> {
    if m == 0 {
        return Err(Error::Precondition("tower period must be positive".into()));
    }
    let mut heights = Vec::with_capacity(fm.elements.len());
    for e in &fm.elements {
        if e.r % m != 0 {
            return Err(Error::Precondition(format!(
                "return time {} is not a multiple of m = {m}",
                e.r
            )));
        }
        heights.push(e.r / m);
    }
    let top = heights.iter().copied().max().unwrap_or(0);
    let mut level_masses = vec![0.0; top];
    for (e, &h) in fm.elements.iter().zip(&heights) {
        for lm in &mut level_masses[..h] {
            *lm += e.len();
        }
    }
    Ok(Tower {
        m,
        heights,
        level_masses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TowerState {
    pub x: f64,
    pub k: usize,
}

/// Climb one level, or return to the base through `f^R` from the top.
pub fn tower_step(map: &PiecewiseMap, fm: &FullMarkovMap, tower: &Tower, st: TowerState) -> Result<TowerState> {
    let i = fm
        .locate(st.x)
        .ok_or_else(|| Error::Precondition(format!("{} is not in a tower element", st.x)))?;
    if st.k >= tower.heights[i] {
        return Err(Error::Precondition(format!("level {} is above the column", st.k)));
    }
    if st.k + 1 < tower.heights[i] {
        Ok(TowerState { x: st.x, k: st.k + 1 })
    } else {
        Ok(TowerState {
            x: fm.elements[i].eval(map, st.x),
            k: 0,
        })
    }
}

/// `σ(x, k) = f^{mk}(x)`.
pub fn tower_projection(map: &PiecewiseMap, fm: &FullMarkovMap, tower: &Tower, st: TowerState) -> Result<f64> {
    let i = fm
        .locate(st.x)
        .ok_or_else(|| Error::Precondition(format!("{} is not in a tower element", st.x)))?;
    Ok(fm.elements[i].eval_prefix(map, st.x, tower.m * st.k))
}

/// Largest `|σ(step(s)) − f^m(σ(s))|` over random tower states.
pub fn projection_identity_error(
    map: &PiecewiseMap,
    fm: &FullMarkovMap,
    tower: &Tower,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if fm.elements.is_empty() {
        return Err(Error::Precondition("empty full Markov map".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.gen_range(0..fm.elements.len());
        let e = &fm.elements[i];
        let x = e.lo + rng.gen_range(0.05..0.95) * e.len();
        let k = rng.gen_range(0..tower.heights[i]);
        let st = TowerState { x, k };
        let lhs = tower_projection(map, fm, tower, tower_step(map, fm, tower, st)?)?;
        let rhs = iterate_plain(map, tower_projection(map, fm, tower, st)?, tower.m);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
