//! Least-squares decay-regime classification.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sse: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
        sse,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regime {
    Polynomial { alpha: f64 },
    Stretched { alpha: f64, beta: f64 },
    Exponential { beta: f64 },
    Inconclusive,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Polynomial { .. } => "polynomial",
            Regime::Stretched { .. } => "stretched",
            Regime::Exponential { .. } => "exponential",
            Regime::Inconclusive => "inconclusive",
        }
    }

    pub fn same_kind(&self, other: &Regime) -> bool {
        self.name() == other.name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeFit {
    pub regime: Regime,
    pub r_squared: f64,
    pub fitted_constant: f64,
}

impl RegimeFit {
    fn inconclusive(r_squared: f64) -> Self {
        RegimeFit {
            regime: Regime::Inconclusive,
            r_squared,
            fitted_constant: f64::NAN,
        }
    }
}

pub const MIN_R_SQUARED: f64 = 0.98;

/// Classify `a_1, a_2, …` (index `n = i + 1`) from its tail half.
pub fn classify_decay(a: &[f64]) -> Result<RegimeFit> {
    if a.len() < 30 {
        return Err(Error::DegenerateSequence(format!(
            "need at least 30 terms, got {}",
            a.len()
        )));
    }
    if let Some(bad) = a.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateSequence(format!("non-positive term {bad}")));
    }
    if a.iter().all(|&v| v == a[0]) {
        return Err(Error::DegenerateSequence("all terms equal".into()));
    }
    let start = a.len() / 2;
    let ns: Vec<f64> = (start..a.len()).map(|i| (i + 1) as f64).collect();
    let la: Vec<f64> = a[start..].iter().map(|v| v.ln()).collect();
    Ok(classify_log(&ns, &la))
}

/// Classify a tail `t_0, t_1, …` that levels off at `floor` (mass that was
/// never assigned a time). Only terms `n ≥ 1` with `t_n > 2·floor` are used.
pub fn classify_tail(tail: &[f64], floor: f64) -> RegimeFit {
    let (ns, la): (Vec<f64>, Vec<f64>) = tail
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, &t)| t > 2.0 * floor && t > 0.0)
        .map(|(n, &t)| (n as f64, t.ln()))
        .unzip();
    classify_log(&ns, &la)
}

/// Core classifier over arbitrary abscissae `n` and values `ln a_n`.
/// Needs at least 5 points; otherwise the result is inconclusive.
pub fn classify_log(ns: &[f64], log_a: &[f64]) -> RegimeFit {
    if ns.len() < 5 || log_a.iter().all(|&v| v == log_a[0]) {
        return RegimeFit::inconclusive(0.0);
    }
    let logn: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let poly = linear_fit(&logn, log_a);
    let expo = linear_fit(ns, log_a);

    let mut best_str: Option<(f64, LinearFit)> = None;
    let mut k = 0;
    loop {
        let alpha = 0.05 + 0.005 * k as f64;
        if alpha > 1.5 + 1e-12 {
            break;
        }
        let xs: Vec<f64> = ns.iter().map(|n| n.powf(alpha)).collect();
        let f = linear_fit(&xs, log_a);
        if best_str.map_or(true, |(_, b)| f.sse < b.sse) {
            best_str = Some((alpha, f));
        }
        k += 1;
    }
    let (alpha_s, stretched) = best_str.expect("grid is non-empty");

    let simple_best = poly.sse.min(expo.sse);
    if alpha_s > 0.1 && alpha_s < 0.95 && stretched.sse < 0.25 * simple_best && stretched.slope < 0.0 {
        if stretched.r_squared < MIN_R_SQUARED {
            return RegimeFit::inconclusive(stretched.r_squared);
        }
        return RegimeFit {
            regime: Regime::Stretched {
                alpha: alpha_s,
                beta: -stretched.slope,
            },
            r_squared: stretched.r_squared,
            fitted_constant: stretched.intercept.exp(),
        };
    }
    let (regime, fit) = if expo.r_squared >= poly.r_squared {
        (Regime::Exponential { beta: -expo.slope }, expo)
    } else {
        (Regime::Polynomial { alpha: -poly.slope }, poly)
    };
    if fit.r_squared < MIN_R_SQUARED || fit.slope >= 0.0 {
        return RegimeFit::inconclusive(fit.r_squared);
    }
    RegimeFit {
        regime,
        r_squared: fit.r_squared,
        fitted_constant: fit.intercept.exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(f: impl Fn(f64) -> f64, len: usize) -> Vec<f64> {
        (1..=len).map(|n| f(n as f64)).collect()
    }

    #[test]
    fn exact_planted_regimes() {
        let e = classify_decay(&seq(|n| 0.5 * 4f64.powf(-n / 3.0), 200)).unwrap();
        match e.regime {
            Regime::Exponential { beta } => assert!((beta - 4f64.ln() / 3.0).abs() < 0.01),
            r => panic!("{r:?}"),
        }
        let p = classify_decay(&seq(|n| n.powf(-2.5), 200)).unwrap();
        match p.regime {
            Regime::Polynomial { alpha } => assert!((alpha - 2.5).abs() < 0.05),
            r => panic!("{r:?}"),
        }
        let s = classify_decay(&seq(|n| (-2.0 * n.sqrt()).exp(), 200)).unwrap();
        match s.regime {
            Regime::Stretched { alpha, beta } => {
                assert!((alpha - 0.5).abs() < 0.05, "{alpha}");
                assert!((beta - 2.0).abs() < 0.1, "{beta}");
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(classify_decay(&[1.0; 40]).is_err());
        let mut v = seq(|n| 1.0 / n, 40);
        v[3] = 0.0;
        assert!(classify_decay(&v).is_err());
        assert!(classify_decay(&seq(|n| 1.0 / n, 10)).is_err());
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
}
