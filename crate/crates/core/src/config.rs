//! JSON map specifications.
//!
//! ```json
//! {"family": "quadratic", "params": {"a": 4.0},
//!  "critical_points": [{"c": 0.5, "l_minus": 2.0, "l_plus": 2.0}],
//!  "continuous": true}
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::map::{Branch, BranchFn, CriticalPoint, PiecewiseMap, PowerTerm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpec {
    pub c: f64,
    pub l_minus: f64,
    pub l_plus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub family: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_points: Option<Vec<CriticalSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub constant: f64,
    pub terms: Vec<PowerTerm>,
}

impl MapSpec {
    fn family(name: &str, params: Value) -> Self {
        MapSpec {
            family: name.into(),
            params,
            critical_points: None,
            continuous: None,
        }
    }

    pub fn tent(s: f64) -> Self {
        Self::family("tent", json!({ "s": s }))
    }

    pub fn quadratic(a: f64) -> Self {
        Self::family("quadratic", json!({ "a": a }))
    }

    pub fn doubling() -> Self {
        Self::family("doubling", json!({}))
    }

    pub fn lorenz(c: f64, b_minus: f64, b_plus: f64, rho_minus: f64, rho_plus: f64) -> Self {
        Self::family(
            "lorenz",
            json!({ "c": c, "b_minus": b_minus, "b_plus": b_plus,
                    "rho_minus": rho_minus, "rho_plus": rho_plus }),
        )
    }

    pub fn piecewise(branches: Vec<BranchSpec>, critical: Vec<CriticalSpec>) -> Self {
        MapSpec {
            family: "piecewise".into(),
            params: json!({ "branches": branches }),
            critical_points: Some(critical),
            continuous: None,
        }
    }

    pub fn renormalized(base: MapSpec, period: usize, a: f64, b: f64) -> Self {
        Self::family(
            "renormalized",
            json!({ "base": base, "period": period, "interval": [a, b] }),
        )
    }

    /// Short names accepted wherever a spec path is expected.
    pub fn builtin(name: &str) -> Option<Self> {
        Some(match name {
            "chebyshev" => Self::quadratic(4.0),
            "tent" | "tent2" => Self::tent(2.0),
            "tent1.3" => Self::tent(1.3),
            "doubling" => Self::doubling(),
            "lorenz" => Self::lorenz(0.5, 2.0, 2.0, 1.0, 1.0),
            _ => return None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a spec file, or resolve `builtin:<name>`.
    pub fn load(path: &Path) -> Result<Self> {
        let s = path.to_string_lossy();
        if let Some(name) = s.strip_prefix("builtin:") {
            return Self::builtin(name)
                .ok_or_else(|| Error::Config(format!("unknown builtin map '{name}'")));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

fn param(spec: &MapSpec, key: &str) -> Result<f64> {
    spec.params
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Config(format!("{} map needs numeric param '{key}'", spec.family)))
}

fn power(coef: f64, exp: f64, center: f64) -> PowerTerm {
    PowerTerm { coef, exp, center }
}

fn branch(lo: f64, hi: f64, constant: f64, terms: Vec<PowerTerm>) -> Branch {
    Branch {
        lo,
        hi,
        sign: 1.0,
        func: BranchFn::PowerSum { constant, terms },
    }
}

fn crit(c: f64, l_minus: f64, l_plus: f64) -> CriticalPoint {
    CriticalPoint { c, l_minus, l_plus }
}

/// Construct and validate the map described by `spec`.
pub fn build_map(spec: &MapSpec) -> Result<PiecewiseMap> {
    let (branches, mut critical, default_cont) = match spec.family.as_str() {
        "tent" => {
            let s = param(spec, "s")?;
            if !(s > 0.0 && s <= 2.0) {
                return Err(Error::InvalidMap(format!("tent slope {s} outside (0,2]")));
            }
            (
                vec![
                    branch(0.0, 0.5, 0.0, vec![power(s, 1.0, 0.0)]),
                    branch(0.5, 1.0, 0.0, vec![power(s, 1.0, 1.0)]),
                ],
                vec![crit(0.5, 1.0, 1.0)],
                true,
            )
        }
        "quadratic" => {
            let a = param(spec, "a")?;
            if !(a > 0.0 && a <= 4.0) {
                return Err(Error::InvalidMap(format!("quadratic parameter {a} outside (0,4]")));
            }
            let b = |lo, hi| branch(lo, hi, a / 4.0, vec![power(-a, 2.0, 0.5)]);
            (vec![b(0.0, 0.5), b(0.5, 1.0)], vec![crit(0.5, 2.0, 2.0)], true)
        }
        "doubling" => (
            vec![
                branch(0.0, 0.5, 0.0, vec![power(2.0, 1.0, 0.0)]),
                branch(0.5, 1.0, 0.0, vec![power(2.0, 1.0, 0.5)]),
            ],
            vec![crit(0.5, 1.0, 1.0)],
            false,
        ),
        "lorenz" => {
            let c = param(spec, "c")?;
            let (bm, bp) = (param(spec, "b_minus")?, param(spec, "b_plus")?);
            let (rm, rp) = (param(spec, "rho_minus")?, param(spec, "rho_plus")?);
            (
                vec![
                    branch(0.0, c, 1.0, vec![power(-bm, rm, c)]),
                    branch(c, 1.0, 0.0, vec![power(bp, rp, c)]),
                ],
                vec![crit(c, rm, rp)],
                false,
            )
        }
        "piecewise" => {
            let raw = spec
                .params
                .get("branches")
                .cloned()
                .ok_or_else(|| Error::Config("piecewise map needs params.branches".into()))?;
            let bs: Vec<BranchSpec> =
                serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
            let branches: Vec<Branch> = bs
                .into_iter()
                .map(|b| branch(b.lo, b.hi, b.constant, b.terms))
                .collect();
            let mut inner: Vec<f64> = branches.iter().map(|b| b.lo).filter(|&x| x > 0.0).collect();
            inner.sort_by(f64::total_cmp);
            let critical = inner.into_iter().map(|c| crit(c, 1.0, 1.0)).collect();
            let jumps = branches.windows(2).any(|w| {
                let c = w[1].lo;
                (w[0].value(c) - w[1].value(c)).abs() >= 1e-12
            });
            (branches, critical, !jumps)
        }
        "renormalized" => {
            let base: MapSpec = spec
                .params
                .get("base")
                .cloned()
                .ok_or_else(|| Error::Config("renormalized map needs params.base".into()))
                .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Config(e.to_string())))?;
            let period = spec
                .params
                .get("period")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Config("renormalized map needs params.period".into()))?;
            let iv: Vec<f64> = spec
                .params
                .get("interval")
                .cloned()
                .ok_or_else(|| Error::Config("renormalized map needs params.interval".into()))
                .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Config(e.to_string())))?;
            if iv.len() != 2 {
                return Err(Error::Config("params.interval must be [a, b]".into()));
            }
            let base = Arc::new(build_map(&base)?);
            return PiecewiseMap::renormalized(base, period as usize, iv[0], iv[1]);
        }
        other => return Err(Error::Config(format!("unknown map family '{other}'"))),
    };
    if let Some(cs) = &spec.critical_points {
        if cs.len() != critical.len() {
            return Err(Error::InvalidMap(format!(
                "{} critical points declared but the branches have {} interior boundaries",
                cs.len(),
                critical.len()
            )));
        }
        let mut cs = cs.clone();
        cs.sort_by(|a, b| a.c.total_cmp(&b.c));
        critical = cs.into_iter().map(|c| crit(c.c, c.l_minus, c.l_plus)).collect();
    }
    let continuous = spec.continuous.unwrap_or(default_cont);
    PiecewiseMap::new(branches, critical, continuous, spec.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let s = MapSpec::lorenz(0.5, 2.0, 2.0, 1.5, 1.5);
        let back = MapSpec::from_json(&s.to_json_pretty()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn parses_documented_format() {
        let text = r#"{"family": "quadratic", "params": {"a": 4.0},
            "critical_points": [{"c": 0.5, "l_minus": 2.0, "l_plus": 2.0}],
            "continuous": true}"#;
        let m = build_map(&MapSpec::from_json(text).unwrap()).unwrap();
        assert!(m.is_continuous());
        assert_eq!(m.critical_points()[0].l_plus, 2.0);
    }

    #[test]
    fn piecewise_rotation() {
        let spec = MapSpec::piecewise(
            vec![
                BranchSpec { lo: 0.0, hi: 0.7, constant: 0.3, terms: vec![power(1.0, 1.0, 0.0)] },
                BranchSpec { lo: 0.7, hi: 1.0, constant: 0.0, terms: vec![power(1.0, 1.0, 0.7)] },
            ],
            vec![CriticalSpec { c: 0.7, l_minus: 1.0, l_plus: 1.0 }],
        );
        let m = build_map(&spec).unwrap();
        assert!(!m.is_continuous());
        assert!((m.apply(0.2) - 0.5).abs() < 1e-15);
        assert!((m.apply(0.8) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn renormalized_spec_rebuilds() {
        let spec = MapSpec::renormalized(MapSpec::tent(1.3), 2, 0.455, 0.531_05);
        let text = spec.to_json_pretty();
        let m = build_map(&MapSpec::from_json(&text).unwrap()).unwrap();
        assert_eq!(m.spec(), &spec);
    }

    #[test]
    fn unknown_family() {
        assert!(matches!(
            build_map(&MapSpec::family("cubic", json!({}))),
            Err(Error::Config(_))
        ));
    }
}
