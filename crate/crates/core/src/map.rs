//! Piecewise C² interval maps with a finite critical set.
//!
//! Every `c` in the critical set is treated as two points `c-` and `c+`;
//! evaluation at `c` therefore needs a [`Side`], and returns the one-sided
//! limit taken along the chosen branch.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::MapSpec;
use crate::error::{Error, Result};
use crate::piece::Piece;

/// Points closer than this to a critical point are treated as lying on it.
pub const TIE_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
    Interior,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus | Side::Interior => -1.0,
        }
    }

    fn from_approach(s: f64) -> Side {
        if s > 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SidedPoint {
    pub x: f64,
    pub side: Side,
}

impl SidedPoint {
    pub fn new(x: f64, side: Side) -> Self {
        SidedPoint { x, side }
    }

    pub fn interior(x: f64) -> Self {
        SidedPoint {
            x,
            side: Side::Interior,
        }
    }
}

/// `coef * |x - center|^exp`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coef: f64,
    pub exp: f64,
    pub center: f64,
}

impl PowerTerm {
    fn value(&self, x: f64) -> f64 {
        let d = (x - self.center).abs();
        let p = if self.exp == 1.0 {
            d
        } else if self.exp == 2.0 {
            d * d
        } else {
            d.powf(self.exp)
        };
        self.coef * p
    }

    /// `toward` is a point of the branch domain used to pick the one-sided
    /// slope when `x` sits on the center of a linear term.
    fn deriv(&self, x: f64, toward: f64) -> f64 {
        let mut d = x - self.center;
        if d == 0.0 {
            d = toward - self.center;
        }
        if self.exp == 1.0 {
            return self.coef * d.signum_or_zero();
        }
        if x == self.center {
            return 0.0;
        }
        self.coef * self.exp * d.abs().powf(self.exp - 1.0) * d.signum_or_zero()
    }

    fn second_deriv(&self, x: f64) -> f64 {
        if self.exp == 1.0 {
            return 0.0;
        }
        if self.exp == 2.0 {
            return 2.0 * self.coef;
        }
        let d = (x - self.center).abs();
        self.coef * self.exp * (self.exp - 1.0) * d.powf(self.exp - 2.0)
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub enum BranchFn {
    /// `constant + Σ coef·|x − center|^exp`
    PowerSum {
        constant: f64,
        terms: Vec<PowerTerm>,
    },
    /// `Λ⁻¹ ∘ f^m ∘ Λ` with `Λ(y) = offset + scale·y`, following a fixed
    /// branch itinerary of the base map.
    Composite {
        base: Arc<PiecewiseMap>,
        itinerary: Vec<u32>,
        offset: f64,
        scale: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    /// +1 increasing, -1 decreasing.
    pub sign: f64,
    pub func: BranchFn,
}

impl Branch {
    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Value of the branch formula on the closed domain (one-sided limits at
    /// the ends).
    pub fn value(&self, x: f64) -> f64 {
        let x = self.clamp(x);
        match &self.func {
            BranchFn::PowerSum { constant, terms } => {
                constant + terms.iter().map(|t| t.value(x)).sum::<f64>()
            }
            BranchFn::Composite {
                base,
                itinerary,
                offset,
                scale,
            } => {
                let mut z = offset + scale * x;
                for &b in itinerary {
                    z = base.branch(b as usize).value(z);
                }
                ((z - offset) / scale).clamp(0.0, 1.0)
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let x = self.clamp(x);
        match &self.func {
            BranchFn::PowerSum { terms, .. } => {
                let mid = 0.5 * (self.lo + self.hi);
                terms.iter().map(|t| t.deriv(x, mid)).sum()
            }
            BranchFn::Composite {
                base,
                itinerary,
                offset,
                scale,
            } => {
                let mut z = offset + scale * x;
                let mut d = 1.0;
                for &b in itinerary {
                    let br = base.branch(b as usize);
                    d *= br.deriv(z);
                    z = br.value(z);
                }
                d
            }
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let x = self.clamp(x);
        match &self.func {
            BranchFn::PowerSum { terms, .. } => terms.iter().map(|t| t.second_deriv(x)).sum(),
            BranchFn::Composite {
                base,
                itinerary,
                offset,
                scale,
            } => {
                let mut z = offset + scale * x;
                let (mut d1, mut d2) = (1.0, 0.0);
                for &b in itinerary {
                    let br = base.branch(b as usize);
                    let (f1, f2) = (br.deriv(z), br.second_deriv(z));
                    d2 = f2 * d1 * d1 + f1 * d2;
                    d1 *= f1;
                    z = br.value(z);
                }
                scale * d2
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub c: f64,
    pub l_minus: f64,
    pub l_plus: f64,
}

impl CriticalPoint {
    pub fn order(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.l_plus,
            _ => self.l_minus,
        }
    }
}

/// Sign and log-magnitude of a derivative product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivLog {
    pub sign: f64,
    pub log_abs: f64,
}

impl DerivLog {
    pub fn one() -> Self {
        DerivLog {
            sign: 1.0,
            log_abs: 0.0,
        }
    }

    /// The signed value, if it is representable as a finite double.
    pub fn value(&self) -> Option<f64> {
        let v = self.log_abs.exp();
        v.is_finite().then_some(self.sign * v)
    }

    pub fn abs(&self) -> f64 {
        self.log_abs.exp()
    }
}

#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    branches: Vec<Branch>,
    critical: Vec<CriticalPoint>,
    continuous: bool,
    spec: MapSpec,
}

impl PiecewiseMap {
    /// Assemble and validate a map. Branches must tile `[0, 1]` with interior
    /// boundaries exactly at the critical points.
    pub fn new(
        mut branches: Vec<Branch>,
        mut critical: Vec<CriticalPoint>,
        continuous: bool,
        spec: MapSpec,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        branches.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        critical.sort_by(|a, b| a.c.total_cmp(&b.c));
        for cp in &critical {
            if !(cp.l_minus >= 1.0 && cp.l_plus >= 1.0) {
                return Err(Error::InvalidMap(format!(
                    "critical order at c={} is below 1 (l-={}, l+={}); orders must be >= 1, singular points are not supported",
                    cp.c, cp.l_minus, cp.l_plus
                )));
            }
            if !(cp.c > 0.0 && cp.c < 1.0) {
                return Err(Error::InvalidMap(format!(
                    "critical point {} is not interior to [0,1]",
                    cp.c
                )));
            }
        }
        if branches[0].lo.abs() > TIE_TOL || (branches.last().unwrap().hi - 1.0).abs() > TIE_TOL {
            return Err(Error::InvalidMap("branch domains must cover [0,1]".into()));
        }
        for w in branches.windows(2) {
            if (w[0].hi - w[1].lo).abs() > TIE_TOL {
                return Err(Error::InvalidMap(format!(
                    "gap or overlap between branches at {} / {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        let inner: Vec<f64> = branches[1..].iter().map(|b| b.lo).collect();
        if inner.len() != critical.len()
            || inner
                .iter()
                .zip(&critical)
                .any(|(b, cp)| (b - cp.c).abs() > TIE_TOL)
        {
            return Err(Error::InvalidMap(
                "interior branch boundaries must coincide with the critical set".into(),
            ));
        }
        for b in &mut branches {
            if !(b.hi > b.lo) {
                return Err(Error::InvalidMap("empty branch domain".into()));
            }
            let m = 0.5 * (b.lo + b.hi);
            let d = b.deriv(m);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::InvalidMap(format!(
                    "branch on ({}, {}) has degenerate derivative at its midpoint",
                    b.lo, b.hi
                )));
            }
            b.sign = d.signum();
        }
        let map = PiecewiseMap {
            branches,
            critical,
            continuous,
            spec,
        };
        map.check_branches()?;
        Ok(map)
    }

    fn check_branches(&self) -> Result<()> {
        const SAMPLES: usize = 256;
        for (i, b) in self.branches.iter().enumerate() {
            let xs: Vec<f64> = (0..=SAMPLES)
                .map(|k| b.lo + (b.hi - b.lo) * k as f64 / SAMPLES as f64)
                .collect();
            let vals: Vec<f64> = xs.iter().map(|&x| b.value(x)).collect();
            for v in &vals {
                if !v.is_finite() || *v < -1e-9 || *v > 1.0 + 1e-9 {
                    return Err(Error::InvalidMap(format!(
                        "branch {i} leaves [0,1] (value {v})"
                    )));
                }
            }
            for w in vals.windows(2) {
                if (w[1] - w[0]) * b.sign < -1e-12 {
                    return Err(Error::InvalidMap(format!("branch {i} is not monotone")));
                }
            }
            for &x in &xs[1..SAMPLES] {
                if b.deriv(x) * b.sign <= 0.0 {
                    return Err(Error::InvalidMap(format!(
                        "derivative of branch {i} changes sign at {x}"
                    )));
                }
            }
        }
        for (k, cp) in self.critical.iter().enumerate() {
            let left = self.branches[k].value(cp.c);
            let right = self.branches[k + 1].value(cp.c);
            if self.continuous && (left - right).abs() >= 1e-12 {
                return Err(Error::InvalidMap(format!(
                    "map declared continuous but f(c-)={left} and f(c+)={right} at c={}",
                    cp.c
                )));
            }
        }
        Ok(())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, i: usize) -> &Branch {
        &self.branches[i]
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    /// Interior branch boundaries (the critical set), ascending.
    pub fn boundaries(&self) -> Vec<f64> {
        self.critical.iter().map(|c| c.c).collect()
    }

    /// Largest critical order over all sides.
    pub fn l_max(&self) -> f64 {
        self.critical
            .iter()
            .flat_map(|c| [c.l_minus, c.l_plus])
            .fold(1.0, f64::max)
    }

    /// Index of the branch whose closed domain contains `x`; points on a
    /// boundary go to the right-hand branch.
    pub fn branch_index_of(&self, x: f64) -> usize {
        self.branches
            .partition_point(|b| b.lo <= x)
            .saturating_sub(1)
            .min(self.branches.len() - 1)
    }

    /// Index into the critical set of a point within [`TIE_TOL`], if any.
    pub fn critical_at(&self, x: f64) -> Option<usize> {
        self.critical
            .iter()
            .position(|cp| (cp.c - x).abs() <= TIE_TOL)
    }

    /// Signed distance to the nearest critical point and its index.
    pub fn nearest_critical(&self, x: f64) -> Option<(usize, f64)> {
        self.critical
            .iter()
            .enumerate()
            .map(|(i, cp)| (i, x - cp.c))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }

    /// Distance from `x` to the critical set (1 if the set is empty).
    pub fn dist_to_critical(&self, x: f64) -> f64 {
        self.nearest_critical(x).map_or(1.0, |(_, d)| d.abs())
    }

    fn select_branch(&self, p: SidedPoint) -> Result<(usize, f64)> {
        if let Some(k) = self.critical_at(p.x) {
            let c = self.critical[k].c;
            return match p.side {
                Side::Minus => Ok((k, c)),
                Side::Plus => Ok((k + 1, c)),
                Side::Interior => Err(Error::NoBranch { x: p.x }),
            };
        }
        Ok((self.branch_index_of(p.x), p.x))
    }

    /// `f(p)` with the one-sided convention at critical points.
    pub fn eval(&self, p: SidedPoint) -> Result<SidedPoint> {
        if !(p.x >= -TIE_TOL && p.x <= 1.0 + TIE_TOL) {
            return Err(Error::Precondition(format!("point {} outside [0,1]", p.x)));
        }
        let (i, x) = self.select_branch(p)?;
        let b = &self.branches[i];
        let y = b.value(x).clamp(0.0, 1.0);
        let side = if self.critical_at(y).is_some() {
            Side::from_approach(p.side.sign() * b.sign)
        } else {
            Side::Interior
        };
        Ok(SidedPoint { x: y, side })
    }

    /// `f(x)` for a point known to be off the critical set (or with a
    /// one-sided convention already resolved by the caller's side).
    pub fn apply(&self, x: f64) -> f64 {
        self.branches[self.branch_index_of(x)].value(x).clamp(0.0, 1.0)
    }

    pub fn deriv_at(&self, x: f64) -> f64 {
        self.branches[self.branch_index_of(x)].deriv(x)
    }

    /// `Df^n(p)` by the chain rule, accumulated as sign and log-magnitude.
    pub fn deriv_n(&self, p: SidedPoint, n: usize) -> Result<DerivLog> {
        let mut acc = DerivLog::one();
        let mut q = p;
        for k in 0..n {
            if k > 0 && self.critical_at(q.x).is_some() {
                return Err(Error::OrbitHitsCriticalPoint(k));
            }
            let (i, x) = self
                .select_branch(q)
                .map_err(|_| Error::OrbitHitsCriticalPoint(k))?;
            let d = self.branches[i].deriv(x);
            if d < 0.0 {
                acc.sign = -acc.sign;
            }
            acc.log_abs += d.abs().ln();
            q = self.eval(q).map_err(|_| Error::OrbitHitsCriticalPoint(k))?;
        }
        Ok(acc)
    }

    /// The iterate `f^n(p)`.
    pub fn iterate(&self, p: SidedPoint, n: usize) -> Result<SidedPoint> {
        let mut q = p;
        for k in 0..n {
            q = self.eval(q).map_err(|e| match e {
                Error::NoBranch { .. } => Error::OrbitHitsCriticalPoint(k),
                other => other,
            })?;
        }
        Ok(q)
    }

    /// One-sided critical value `f(c±)`.
    pub fn critical_value(&self, k: usize, side: Side) -> f64 {
        match side {
            Side::Plus => self.branches[k + 1].value(self.critical[k].c),
            _ => self.branches[k].value(self.critical[k].c),
        }
    }

    // ---- built-in families -------------------------------------------------

    pub fn from_spec(spec: &MapSpec) -> Result<Self> {
        crate::config::build_map(spec)
    }

    /// Tent map `s·min(x, 1 − x)`.
    pub fn tent(s: f64) -> Result<Self> {
        Self::from_spec(&MapSpec::tent(s))
    }

    /// Quadratic family `a·x(1 − x)`.
    pub fn quadratic(a: f64) -> Result<Self> {
        Self::from_spec(&MapSpec::quadratic(a))
    }

    /// `2x mod 1`.
    pub fn doubling() -> Result<Self> {
        Self::from_spec(&MapSpec::doubling())
    }

    pub fn lorenz(c: f64, b_minus: f64, b_plus: f64, rho_minus: f64, rho_plus: f64) -> Result<Self> {
        Self::from_spec(&MapSpec::lorenz(c, b_minus, b_plus, rho_minus, rho_plus))
    }

    /// The renormalization `Λ⁻¹ ∘ f^m ∘ Λ` where `Λ` maps `[0,1]` affinely
    /// onto `[a, b]`. Branches of the result are the maximal intervals on
    /// which the itinerary of `f^m` is constant.
    pub fn renormalized(base: Arc<PiecewiseMap>, period: usize, a: f64, b: f64) -> Result<Self> {
        if period == 0 || !(b > a) {
            return Err(Error::InvalidMap("renormalization needs period >= 1 and a < b".into()));
        }
        let scale = b - a;
        let mut pieces = vec![Piece::new(a, b)];
        for _ in 0..period {
            pieces = pieces.iter().flat_map(|p| p.step(&base)).collect();
        }
        pieces.retain(|p| p.len() > 0.0);
        let mut branches = Vec::with_capacity(pieces.len());
        for p in &pieces {
            branches.push(Branch {
                lo: ((p.lo - a) / scale).clamp(0.0, 1.0),
                hi: ((p.hi - a) / scale).clamp(0.0, 1.0),
                sign: p.orientation(&base),
                func: BranchFn::Composite {
                    base: base.clone(),
                    itinerary: p.path.clone(),
                    offset: a,
                    scale,
                },
            });
        }
        branches.retain(|br| br.hi > br.lo);
        if let Some(first) = branches.first_mut() {
            first.lo = 0.0;
        }
        if let Some(last) = branches.last_mut() {
            last.hi = 1.0;
        }
        for i in 1..branches.len() {
            branches[i].lo = branches[i - 1].hi;
        }
        // Orders at the new boundaries are inherited from the base critical
        // point that the boundary's orbit lands on, on the side it is
        // approached from.
        let mut critical = Vec::with_capacity(branches.len().saturating_sub(1));
        for w in pieces.windows(2) {
            let left = &w[0];
            let yb = left.hi;
            let mut order_minus = 1.0f64;
            let mut order_plus = 1.0f64;
            let mut orient = 1.0;
            let mut z = yb;
            for &bi in &left.path {
                if let Some(k) = base.critical_at(z) {
                    let cp = &base.critical_points()[k];
                    let (lm, lp) = if orient > 0.0 {
                        (cp.l_minus, cp.l_plus)
                    } else {
                        (cp.l_plus, cp.l_minus)
                    };
                    order_minus = order_minus.max(lm);
                    order_plus = order_plus.max(lp);
                    break;
                }
                let br = base.branch(bi as usize);
                orient *= br.sign;
                z = br.value(z);
            }
            critical.push(CriticalPoint {
                c: ((yb - a) / scale).clamp(0.0, 1.0),
                l_minus: order_minus,
                l_plus: order_plus,
            });
        }
        for (cp, br) in critical.iter_mut().zip(branches[1..].iter()) {
            cp.c = br.lo;
        }
        let spec = MapSpec::renormalized(base.spec().clone(), period, a, b);
        PiecewiseMap::new(branches, critical, base.is_continuous(), spec)
    }
}
