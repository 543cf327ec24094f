//! Critical-orbit sequences: `γₙ`, `dₙ`, the two summability series, and
//! expansion away from the critical set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{PiecewiseMap, Side, SidedPoint};
use crate::regime::{classify_decay, classify_log, linear_fit, Regime, RegimeFit};

/// Default horizon for critical orbits.
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CriticalSide {
    /// Index into the map's critical set.
    pub index: usize,
    pub side: Side,
}

/// All critical sides of a map, in order `c₀−, c₀+, c₁−, …`.
pub fn critical_sides(map: &PiecewiseMap) -> Vec<CriticalSide> {
    (0..map.critical_points().len())
        .flat_map(|index| {
            [Side::Minus, Side::Plus]
                .into_iter()
                .map(move |side| CriticalSide { index, side })
        })
        .collect()
}

/// Per-iterate data along the orbit of one critical value. Vectors are
/// indexed by `n − 1` for `n = 1..=horizon`.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalOrbitRecord {
    pub c: f64,
    pub side: Side,
    /// Order of `c` on the starting side.
    pub l: f64,
    pub horizon: usize,
    /// `fⁿ(c)`
    pub orbit: Vec<f64>,
    /// `ln |Dfⁿ(f(c))|`
    pub log_deriv: Vec<f64>,
    /// Index of the critical point closest to `fⁿ(c)`.
    pub nearest: Vec<usize>,
    /// Order of that critical point on the side where `fⁿ(c)` lies.
    pub nearest_order: Vec<f64>,
    /// `|fⁿ(c) − c̃|`
    pub dist: Vec<f64>,
    pub gamma: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub dmin: Vec<f64>,
    /// `ln` of the terms of the first and second summability series.
    pub log_s1_term: Vec<f64>,
    pub log_s2_term: Vec<f64>,
    pub s1_partial: Vec<f64>,
    pub s2_partial: Vec<f64>,
}

impl CriticalOrbitRecord {
    /// `γ_k` for `k ≥ 1`; `γ_0` is taken as 1/2.
    pub fn gamma_at(&self, k: usize) -> f64 {
        if k == 0 {
            0.5
        } else {
            self.gamma[(k - 1).min(self.horizon - 1)]
        }
    }

    /// `f^k(c)` for `k ≥ 1`.
    pub fn orbit_at(&self, k: usize) -> f64 {
        self.orbit[k - 1]
    }
}

/// Follow the orbit of `f(c±)` for `horizon` iterates.
pub fn critical_orbit(
    map: &PiecewiseMap,
    cs: CriticalSide,
    horizon: usize,
) -> Result<CriticalOrbitRecord> {
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    let cp = map.critical_points()[cs.index].clone();
    let l = cp.order(cs.side);
    let exp_g = 1.0 / (2.0 * l - 1.0);

    let mut rec = CriticalOrbitRecord {
        c: cp.c,
        side: cs.side,
        l,
        horizon,
        orbit: Vec::with_capacity(horizon),
        log_deriv: Vec::with_capacity(horizon),
        nearest: Vec::with_capacity(horizon),
        nearest_order: Vec::with_capacity(horizon),
        dist: Vec::with_capacity(horizon),
        gamma: Vec::with_capacity(horizon),
        log_gamma: Vec::with_capacity(horizon),
        dmin: Vec::with_capacity(horizon),
        log_s1_term: Vec::with_capacity(horizon),
        log_s2_term: Vec::with_capacity(horizon),
        s1_partial: Vec::with_capacity(horizon),
        s2_partial: Vec::with_capacity(horizon),
    };

    let mut q = map.eval(SidedPoint::new(cp.c, cs.side))?;
    let mut log_d = 0.0;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut d_running = f64::INFINITY;
    let half_ln = 0.5f64.ln();

    for n in 1..=horizon {
        if map.critical_at(q.x).is_some() {
            return Err(Error::OrbitHitsCriticalPoint(n));
        }
        let x = q.x;
        log_d += map.deriv_at(x).abs().ln();

        // closest critical point; on a tie keep the smaller γ argument
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (k, cp2) in map.critical_points().iter().enumerate() {
            let dist = (x - cp2.c).abs();
            let lt = cp2.order(if x > cp2.c { Side::Plus } else { Side::Minus });
            let arg = ((lt - l) * dist.ln() - log_d) * exp_g;
            let better = match best {
                None => true,
                Some((_, bd, _, barg)) => {
                    dist < bd - crate::map::TIE_TOL
                        || ((dist - bd).abs() <= crate::map::TIE_TOL && arg < barg)
                }
            };
            if better {
                best = Some((k, dist, lt, arg));
            }
        }
        let (k, dist, lt, arg) = best.unwrap_or((usize::MAX, 1.0, 1.0, -log_d * exp_g));

        let lg = arg.min(half_ln);
        let gamma = lg.exp();

        // d_n = min over 1 ≤ i < n of the per-iterate terms; d_1 is the
        // empty minimum, taken as 1/2
        let d_n = if n == 1 { 0.5 } else { d_running };
        let term = ((lg - log_d) / l + lt / l * dist.ln()).exp();
        d_running = d_running.min(term);

        let l2 = -log_d / l;
        s1 += arg.exp();
        s2 += l2.exp();

        rec.orbit.push(x);
        rec.log_deriv.push(log_d);
        rec.nearest.push(k);
        rec.nearest_order.push(lt);
        rec.dist.push(dist);
        rec.gamma.push(gamma);
        rec.log_gamma.push(lg);
        rec.dmin.push(d_n);
        rec.log_s1_term.push(arg);
        rec.log_s2_term.push(l2);
        rec.s1_partial.push(s1);
        rec.s2_partial.push(s2);

        if n < horizon {
            q = map.eval(q)?;
        }
    }
    Ok(rec)
}

/// Records for every critical side; these are independent and computed in
/// parallel.
pub fn all_critical_orbits(map: &PiecewiseMap, horizon: usize) -> Result<Vec<CriticalOrbitRecord>> {
    use rayon::prelude::*;
    critical_sides(map)
        .into_par_iter()
        .map(|cs| critical_orbit(map, cs, horizon))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converging,
    Diverging,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct SummabilityVerdict {
    pub s1: Verdict,
    pub s2: Verdict,
    /// Always true: a finite prefix cannot decide convergence.
    pub heuristic: bool,
}

/// Tail test on the logarithms of a series' terms.
pub fn series_verdict(log_terms: &[f64]) -> Verdict {
    let n = log_terms.len();
    if n < 10 {
        return Verdict::Inconclusive;
    }
    let start = n / 2;
    let ns: Vec<f64> = (start..n).map(|i| (i + 1) as f64).collect();
    let la = &log_terms[start..];
    let fit = classify_log(&ns, la);
    match fit.regime {
        Regime::Exponential { .. } | Regime::Stretched { .. } => return Verdict::Converging,
        Regime::Polynomial { alpha } if alpha > 1.0 + 1e-9 => return Verdict::Converging,
        Regime::Polynomial { .. } => return Verdict::Diverging,
        Regime::Inconclusive => {}
    }
    // bounded below by c/n: n·a_n does not decay along the tail
    let logn: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let nan: Vec<f64> = la.iter().zip(&logn).map(|(a, b)| a + b).collect();
    let trend = linear_fit(&logn, &nan);
    if trend.slope >= -1e-9 {
        Verdict::Diverging
    } else {
        Verdict::Inconclusive
    }
}

pub fn summability_verdict(rec: &CriticalOrbitRecord) -> Result<SummabilityVerdict> {
    if rec.horizon < 50 {
        return Err(Error::Precondition(format!(
            "summability verdict needs horizon >= 50, got {}",
            rec.horizon
        )));
    }
    Ok(SummabilityVerdict {
        s1: series_verdict(&rec.log_s1_term),
        s2: series_verdict(&rec.log_s2_term),
        heuristic: true,
    })
}

/// Rank used to combine regimes: slower decay dominates.
fn regime_rank(r: &Regime) -> u8 {
    match r {
        Regime::Inconclusive => 0,
        Regime::Polynomial { .. } => 1,
        Regime::Stretched { .. } => 2,
        Regime::Exponential { .. } => 3,
    }
}

/// Decay regime of one record: `γₙ` decides the exponential and stretched
/// cases; otherwise a polynomial bound on `dₙ` decides the polynomial case.
pub fn predicted_regime_one(rec: &CriticalOrbitRecord) -> RegimeFit {
    // the clamp at 1/2 and underflowed terms say nothing about the rate
    let ns: Vec<f64> = (1..=rec.horizon).map(|n| n as f64).collect();
    let start = rec.horizon / 2;
    let lg: Vec<f64> = rec.log_gamma[start..].to_vec();
    let g = if lg.iter().all(|&v| v >= 0.5f64.ln() - 1e-15) {
        None
    } else {
        Some(classify_log(&ns[start..], &lg))
    };
    if let Some(fit) = g {
        if matches!(fit.regime, Regime::Exponential { .. } | Regime::Stretched { .. }) {
            return fit;
        }
    }
    let d = classify_decay(&rec.dmin[1..]).ok();
    if let Some(fit) = d {
        if matches!(fit.regime, Regime::Polynomial { .. }) {
            return fit;
        }
    }
    g.unwrap_or(RegimeFit {
        regime: Regime::Inconclusive,
        r_squared: 0.0,
        fitted_constant: f64::NAN,
    })
}

/// Predicted mixing regime of the map: the slowest over all critical sides.
pub fn predicted_regime(records: &[CriticalOrbitRecord]) -> RegimeFit {
    records
        .iter()
        .map(predicted_regime_one)
        .min_by_key(|f| regime_rank(&f.regime))
        .unwrap_or(RegimeFit {
            regime: Regime::Inconclusive,
            r_squared: 0.0,
            fitted_constant: f64::NAN,
        })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub delta: f64,
    pub c_delta: f64,
    pub lambda_delta: f64,
    pub segments: usize,
    /// `λ_δ ≤ 0`: evidence that the map is not uniformly expanding away from
    /// its critical set.
    pub red_flag: bool,
}

const MIN_SEGMENT: usize = 5;

/// Empirical constants of `|Dfⁿ(x)| ≥ C_δ e^{λ_δ n}` along orbit segments
/// that avoid `Δ_δ`. Starting points form a golden-ratio sequence.
pub fn expansion_outside_delta(
    map: &PiecewiseMap,
    delta: f64,
    sample_orbits: usize,
    horizon: usize,
) -> Result<ExpansionReport> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let inside = |x: f64| map.dist_to_critical(x) < delta;
    let mut segs: Vec<Vec<f64>> = Vec::new();
    for j in 0..sample_orbits {
        let mut x = (0.5 + phi * (j as f64 + 1.0)).fract();
        let mut cur: Vec<f64> = Vec::new();
        let mut log_d = 0.0;
        for _ in 0..horizon {
            if inside(x) {
                if cur.len() >= MIN_SEGMENT {
                    segs.push(std::mem::take(&mut cur));
                }
                cur.clear();
                log_d = 0.0;
            } else {
                log_d += map.deriv_at(x).abs().ln();
                cur.push(log_d);
            }
            x = map.apply(x);
        }
        if cur.len() >= MIN_SEGMENT {
            segs.push(cur);
        }
    }
    if segs.is_empty() {
        return Err(Error::NoSegments);
    }
    let mut lambda = f64::INFINITY;
    for s in &segs {
        let xs: Vec<f64> = (0..=s.len()).map(|k| k as f64).collect();
        let ys: Vec<f64> = std::iter::once(0.0).chain(s.iter().copied()).collect();
        lambda = lambda.min(linear_fit(&xs, &ys).slope);
    }
    let mut log_c = 0.0f64;
    for s in &segs {
        for (k, v) in s.iter().enumerate() {
            log_c = log_c.min(v - lambda * (k + 1) as f64);
        }
    }
    Ok(ExpansionReport {
        delta,
        c_delta: log_c.exp(),
        lambda_delta: lambda,
        segments: segs.len(),
        red_flag: lambda <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plus() -> CriticalSide {
        CriticalSide { index: 0, side: Side::Plus }
    }

    #[test]
    fn chebyshev_record() {
        let f = PiecewiseMap::quadratic(4.0).unwrap();
        let r = critical_orbit(&f, plus(), 5).unwrap();
        for n in 1..=5 {
            assert!((r.log_deriv[n - 1] - n as f64 * 4f64.ln()).abs() < 1e-12);
            assert!((r.dist[n - 1] - 0.5).abs() < 1e-15);
        }
        assert_eq!(r.gamma[0], 0.5);
        assert!((r.gamma[1] - 4f64.powf(-2.0 / 3.0)).abs() < 1e-12);
        assert!((r.gamma[2] - 0.25).abs() < 1e-12);
        assert!((r.dmin[1] - 0.176_776_695).abs() < 1e-8);
    }

    #[test]
    fn tent_record() {
        let f = PiecewiseMap::tent(2.0).unwrap();
        let r = critical_orbit(&f, plus(), 5).unwrap();
        for n in 1..=5 {
            assert!((r.gamma[n - 1] - 2f64.powi(-(n as i32))).abs() < 1e-12);
        }
        assert!((r.dmin[1] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn hitting_the_critical_set_is_an_error() {
        // rotation by 1/2: c+ → 0 → 1/2 = c
        use crate::config::{BranchSpec, CriticalSpec, MapSpec};
        use crate::map::PowerTerm;
        let t = |coef, center| PowerTerm { coef, exp: 1.0, center };
        let spec = MapSpec::piecewise(
            vec![
                BranchSpec { lo: 0.0, hi: 0.5, constant: 0.5, terms: vec![t(1.0, 0.0)] },
                BranchSpec { lo: 0.5, hi: 1.0, constant: 0.0, terms: vec![t(1.0, 0.5)] },
            ],
            vec![CriticalSpec { c: 0.5, l_minus: 1.0, l_plus: 1.0 }],
        );
        let m = PiecewiseMap::from_spec(&spec).unwrap();
        let err = critical_orbit(&m, plus(), 10).unwrap_err();
        assert_eq!(err, Error::OrbitHitsCriticalPoint(2));
    }

    #[test]
    fn verdicts() {
        let f = PiecewiseMap::quadratic(4.0).unwrap();
        let r = critical_orbit(&f, plus(), 200).unwrap();
        let v = summability_verdict(&r).unwrap();
        assert_eq!((v.s1, v.s2), (Verdict::Converging, Verdict::Converging));
        let harmonic: Vec<f64> = (1..=200).map(|n| (0.5 / n as f64).ln()).collect();
        assert_eq!(series_verdict(&harmonic), Verdict::Diverging);
        let constant = vec![0.0; 200];
        assert_eq!(series_verdict(&constant), Verdict::Diverging);
        let short = critical_orbit(&f, plus(), 20).unwrap();
        assert!(summability_verdict(&short).is_err());
    }

    #[test]
    fn expansion_constants() {
        let t = PiecewiseMap::tent(2.0).unwrap();
        let e = expansion_outside_delta(&t, 0.05, 50, 200).unwrap();
        assert!((e.lambda_delta - 2f64.ln()).abs() < 1e-9);
        assert!((e.c_delta - 1.0).abs() < 1e-9);
        let q = PiecewiseMap::quadratic(4.0).unwrap();
        assert!(expansion_outside_delta(&q, 0.05, 50, 200).unwrap().lambda_delta > 0.0);
        let l = PiecewiseMap::quadratic(3.2).unwrap();
        let e = expansion_outside_delta(&l, 0.01, 50, 400).unwrap();
        assert!(e.red_flag, "{e:?}");
    }

    #[test]
    fn predictions() {
        for f in [PiecewiseMap::quadratic(4.0).unwrap(), PiecewiseMap::tent(2.0).unwrap()] {
            let recs = all_critical_orbits(&f, 200).unwrap();
            assert_eq!(predicted_regime(&recs).regime.name(), "exponential");
        }
    }
}
