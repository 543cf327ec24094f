//! Test functions for correlation and CLT estimates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::map::PiecewiseMap;

/// A named observable with a declared Hölder exponent. The exponent is not
/// certified, only carried along for reporting.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// `x`
    Identity,
    /// `|x − 1/2|^{1/2}`
    SqrtDistance,
    /// `cos(2πkx)`
    Cos(u32),
    /// `sin(2πkx)`
    Sin(u32),
    /// Lipschitz tent bump of half-width `width` centred at `center`.
    Bump { center: f64, width: f64 },
    /// `ψ∘f − ψ`
    Coboundary(Box<Observable>),
}

impl Observable {
    pub fn holder_exponent(&self) -> f64 {
        match self {
            Observable::SqrtDistance => 0.5,
            Observable::Coboundary(inner) => inner.holder_exponent(),
            _ => 1.0,
        }
    }

    pub fn eval(&self, map: &PiecewiseMap, x: f64) -> f64 {
        match self {
            Observable::Identity => x,
            Observable::SqrtDistance => (x - 0.5).abs().sqrt(),
            Observable::Cos(k) => (2.0 * PI * *k as f64 * x).cos(),
            Observable::Sin(k) => (2.0 * PI * *k as f64 * x).sin(),
            Observable::Bump { center, width } => (1.0 - (x - center).abs() / width).max(0.0),
            Observable::Coboundary(psi) => psi.eval(map, map.apply(x)) - psi.eval(map, x),
        }
    }

    /// The default library: `x`, `|x−1/2|^{1/2}`, trigonometric functions of
    /// frequency 1 to 4 and two bumps.
    pub fn library() -> Vec<Observable> {
        let mut v = vec![Observable::Identity, Observable::SqrtDistance];
        for k in 1..=4 {
            v.push(Observable::Cos(k));
            v.push(Observable::Sin(k));
        }
        v.push(Observable::Bump { center: 0.25, width: 0.1 });
        v.push(Observable::Bump { center: 0.75, width: 0.1 });
        v
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Identity => write!(f, "x"),
            Observable::SqrtDistance => write!(f, "sqrt_dist"),
            Observable::Cos(k) => write!(f, "cos{k}"),
            Observable::Sin(k) => write!(f, "sin{k}"),
            Observable::Bump { center, width } => write!(f, "bump:{center}:{width}"),
            Observable::Coboundary(psi) => write!(f, "cob:{psi}"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// Accepts `x`, `sqrt_dist`, `cosK`, `sinK` (K in 1..=4 or larger),
    /// `bump:center:width` and `cob:<observable>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown observable '{s}'"));
        if let Some(rest) = s.strip_prefix("cob:") {
            return Ok(Observable::Coboundary(Box::new(rest.parse()?)));
        }
        if let Some(rest) = s.strip_prefix("bump:") {
            let (c, w) = rest.split_once(':').ok_or_else(bad)?;
            let center: f64 = c.parse().map_err(|_| bad())?;
            let width: f64 = w.parse().map_err(|_| bad())?;
            if !(width > 0.0) {
                return Err(Error::Config(format!("bump width must be positive in '{s}'")));
            }
            return Ok(Observable::Bump { center, width });
        }
        match s {
            "x" => return Ok(Observable::Identity),
            "sqrt_dist" => return Ok(Observable::SqrtDistance),
            _ => {}
        }
        let freq = |t: &str| t.parse::<u32>().ok().filter(|&k| k >= 1);
        if let Some(k) = s.strip_prefix("cos").and_then(freq) {
            return Ok(Observable::Cos(k));
        }
        if let Some(k) = s.strip_prefix("sin").and_then(freq) {
            return Ok(Observable::Sin(k));
        }
        Err(bad())
    }
}

impl Serialize for Observable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let mut all = Observable::library();
        all.push(Observable::Coboundary(Box::new(Observable::Sin(1))));
        for o in all {
            let back: Observable = o.to_string().parse().unwrap();
            assert_eq!(back, o);
        }
        assert!("cos0".parse::<Observable>().is_err());
        assert!("bump:0.5:0".parse::<Observable>().is_err());
    }

    #[test]
    fn coboundary_telescopes() {
        let f = PiecewiseMap::tent(2.0).unwrap();
        let phi = Observable::Coboundary(Box::new(Observable::Sin(1)));
        let psi = Observable::Sin(1);
        let mut x = 0.1234;
        let x0 = x;
        let mut sum = 0.0;
        for _ in 0..20 {
            sum += phi.eval(&f, x);
            x = f.apply(x);
        }
        assert!((sum - (psi.eval(&f, x) - psi.eval(&f, x0))).abs() < 1e-9);
    }
}
