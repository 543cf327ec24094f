//! Numerical checks of the standing assumptions on a map: one-sided critical
//! orders and the sign of the Schwarzian derivative.

use serde::Serialize;

use crate::map::{PiecewiseMap, Side};

#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub c: f64,
    pub side: Side,
    pub declared: f64,
    pub measured: f64,
    /// min / max of `|f(x) − f(c±)| / |x − c|^l` over the sample grid.
    pub value_ratio: (f64, f64),
    /// min / max of `|Df(x)| / |x − c|^(l−1)`.
    pub deriv_ratio: (f64, f64),
    pub pass: bool,
}

/// Fit the one-sided order of each critical point from samples at
/// `c ± r·2^{-k}`, `k = 4..40`.
pub fn verify_orders(map: &PiecewiseMap) -> Vec<OrderReport> {
    let mut out = Vec::new();
    let bounds: Vec<f64> = std::iter::once(0.0)
        .chain(map.boundaries())
        .chain(std::iter::once(1.0))
        .collect();
    for (k, cp) in map.critical_points().iter().enumerate() {
        for side in [Side::Minus, Side::Plus] {
            let (bidx, room) = match side {
                Side::Minus => (k, cp.c - bounds[k]),
                _ => (k + 1, bounds[k + 2] - cp.c),
            };
            let br = map.branch(bidx);
            let fc = map.critical_value(k, side);
            let declared = cp.order(side);
            let r = room.min(0.5);
            let mut lx = Vec::new();
            let mut ly = Vec::new();
            let mut vr = (f64::INFINITY, 0.0f64);
            let mut dr = (f64::INFINITY, 0.0f64);
            for j in 4..=40 {
                let h = r * 2f64.powi(-j);
                let x = cp.c + side.sign() * h;
                let dv = (br.value(x) - fc).abs();
                // below this the difference is rounding noise
                if dv <= 64.0 * f64::EPSILON * fc.abs().max(1e-300) || dv == 0.0 {
                    continue;
                }
                lx.push(h.ln());
                ly.push(dv.ln());
                let q = dv / h.powf(declared);
                vr = (vr.0.min(q), vr.1.max(q));
                let d = br.deriv(x).abs() / h.powf(declared - 1.0);
                dr = (dr.0.min(d), dr.1.max(d));
            }
            let measured = if lx.len() >= 3 {
                crate::regime::linear_fit(&lx, &ly).slope
            } else {
                f64::NAN
            };
            out.push(OrderReport {
                c: cp.c,
                side,
                declared,
                measured,
                value_ratio: vr,
                deriv_ratio: dr,
                pass: (measured - declared).abs() <= 0.05,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchwarzianVerdict {
    Pass,
    /// All branches affine: `Sf = 0`.
    PassWeak,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct SchwarzianReport {
    pub max_sample: f64,
    pub argmax: f64,
    pub samples: usize,
    pub verdict: SchwarzianVerdict,
}

const GUARD: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

/// Sample `Sf = D³f/Df − 1.5 (D²f/Df)²` on a uniform grid per branch.
pub fn schwarzian_check(map: &PiecewiseMap, grid_size: usize) -> SchwarzianReport {
    let mut max_sample = f64::NEG_INFINITY;
    let mut argmax = f64::NAN;
    let mut samples = 0;
    let mut all_affine = true;
    for br in map.branches() {
        let lo = br.lo + GUARD.max(FD_STEP);
        let hi = br.hi - GUARD.max(FD_STEP);
        if hi <= lo {
            continue;
        }
        for i in 0..grid_size {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / grid_size as f64;
            let d1 = br.deriv(x);
            let d2 = br.second_deriv(x);
            let d3 = (br.second_deriv(x + FD_STEP) - br.second_deriv(x - FD_STEP)) / (2.0 * FD_STEP);
            if d2 != 0.0 || d3 != 0.0 {
                all_affine = false;
            }
            let s = d3 / d1 - 1.5 * (d2 / d1).powi(2);
            if !s.is_finite() {
                continue;
            }
            samples += 1;
            if s > max_sample {
                max_sample = s;
                argmax = x;
            }
        }
    }
    let verdict = if max_sample > 1e-8 {
        SchwarzianVerdict::Fail
    } else if all_affine {
        SchwarzianVerdict::PassWeak
    } else {
        SchwarzianVerdict::Pass
    };
    SchwarzianReport {
        max_sample,
        argmax,
        samples,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BranchSpec, CriticalSpec, MapSpec};
    use crate::map::PowerTerm;

    fn t(coef: f64, exp: f64, center: f64) -> PowerTerm {
        PowerTerm { coef, exp, center }
    }

    #[test]
    fn orders_of_builtins() {
        for r in verify_orders(&PiecewiseMap::quadratic(4.0).unwrap()) {
            assert!((r.measured - 2.0).abs() < 0.01, "{r:?}");
            assert!(r.pass);
        }
        for r in verify_orders(&PiecewiseMap::tent(2.0).unwrap()) {
            assert!((r.measured - 1.0).abs() < 0.01, "{r:?}");
        }
    }

    #[test]
    fn cubic_plus_side() {
        // x ↦ 0.5 − 2(0.5 − x) on the left, x ↦ 4(x − 0.5)^3 on the right
        let spec = MapSpec::piecewise(
            vec![
                BranchSpec { lo: 0.0, hi: 0.5, constant: 1.0, terms: vec![t(-2.0, 1.0, 0.5)] },
                BranchSpec { lo: 0.5, hi: 1.0, constant: 0.0, terms: vec![t(4.0, 3.0, 0.5)] },
            ],
            vec![CriticalSpec { c: 0.5, l_minus: 1.0, l_plus: 3.0 }],
        );
        let m = PiecewiseMap::from_spec(&spec).unwrap();
        let rep = verify_orders(&m);
        let plus = rep.iter().find(|r| r.side == Side::Plus).unwrap();
        assert!((plus.measured - 3.0).abs() < 0.02, "{plus:?}");
        assert!(plus.pass);
        // a wrong declaration is flagged
        let mut bad = spec.clone();
        bad.critical_points = Some(vec![CriticalSpec { c: 0.5, l_minus: 1.0, l_plus: 2.0 }]);
        let m = PiecewiseMap::from_spec(&bad).unwrap();
        assert!(verify_orders(&m).iter().any(|r| !r.pass));
    }

    #[test]
    fn schwarzian_verdicts() {
        let r = schwarzian_check(&PiecewiseMap::quadratic(4.0).unwrap(), 200);
        assert_eq!(r.verdict, SchwarzianVerdict::Pass);
        assert!(r.max_sample < 0.0);
        let r = schwarzian_check(&PiecewiseMap::tent(2.0).unwrap(), 200);
        assert_eq!(r.verdict, SchwarzianVerdict::PassWeak);
        assert_eq!(r.max_sample, 0.0);
    }

    #[test]
    fn positive_schwarzian_detected() {
        // (x + x³)/2 on [0, 1) has S(0) = 6
        let spec = MapSpec::piecewise(
            vec![BranchSpec {
                lo: 0.0,
                hi: 1.0,
                constant: 0.0,
                terms: vec![t(0.5, 1.0, 0.0), t(0.5, 3.0, 0.0)],
            }],
            vec![],
        );
        let m = PiecewiseMap::from_spec(&spec).unwrap();
        let r = schwarzian_check(&m, 200);
        assert_eq!(r.verdict, SchwarzianVerdict::Fail);
        assert!(r.max_sample > 5.0);
    }
}
