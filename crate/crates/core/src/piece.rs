//! Monotone pieces of iterates.
//!
//! A [`Piece`] is an interval together with the branch itinerary followed by
//! its first `n` iterates. On such an interval `f^n` is a composition of
//! branch formulas, so it can be evaluated, differentiated and inverted
//! without any branch lookup, including at the endpoints where the one-sided
//! limits apply.

use crate::map::PiecewiseMap;

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub path: Vec<u32>,
}

impl Piece {
    pub fn new(lo: f64, hi: f64) -> Self {
        Piece {
            lo,
            hi,
            path: Vec::new(),
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn time(&self) -> usize {
        self.path.len()
    }

    pub fn with_bounds(&self, lo: f64, hi: f64) -> Piece {
        Piece {
            lo,
            hi,
            path: self.path.clone(),
        }
    }

    /// `f^n(x)` along the itinerary.
    pub fn eval(&self, map: &PiecewiseMap, x: f64) -> f64 {
        self.eval_prefix(map, x, self.path.len())
    }

    pub fn eval_prefix(&self, map: &PiecewiseMap, x: f64, steps: usize) -> f64 {
        let mut y = x;
        for &b in &self.path[..steps] {
            y = map.branch(b as usize).value(y);
        }
        y
    }

    /// Sign and `ln|Df^n(x)|` along the itinerary.
    pub fn log_deriv(&self, map: &PiecewiseMap, x: f64) -> (f64, f64) {
        let mut y = x;
        let mut sign = 1.0;
        let mut log_abs = 0.0;
        for &b in &self.path {
            let br = map.branch(b as usize);
            let d = br.deriv(y);
            if d < 0.0 {
                sign = -sign;
            }
            log_abs += d.abs().ln();
            y = br.value(y);
        }
        (sign, log_abs)
    }

    /// Orientation of `f^n` on the piece (+1 increasing, -1 decreasing).
    pub fn orientation(&self, map: &PiecewiseMap) -> f64 {
        self.path
            .iter()
            .map(|&b| map.branch(b as usize).sign)
            .product()
    }

    /// `(f^n(lo), f^n(hi))` in that order (not sorted).
    pub fn endpoint_images(&self, map: &PiecewiseMap) -> (f64, f64) {
        (self.eval(map, self.lo), self.eval(map, self.hi))
    }

    /// The image interval `f^n(piece)` as `(min, max)`.
    pub fn image(&self, map: &PiecewiseMap) -> (f64, f64) {
        let (a, b) = self.endpoint_images(map);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Solve `f^n(x) = y` on the piece by bisection. `y` outside the image
    /// is clamped to the nearer endpoint.
    pub fn preimage(&self, map: &PiecewiseMap, y: f64) -> f64 {
        let s = self.orientation(map);
        bisect_monotone(|x| self.eval(map, x), self.lo, self.hi, y, s)
    }

    /// Pull an image sub-interval `[u, v]` back to the piece, keeping the
    /// itinerary.
    pub fn pull_back(&self, map: &PiecewiseMap, u: f64, v: f64) -> Piece {
        let a = self.preimage(map, u);
        let b = self.preimage(map, v);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.with_bounds(lo, hi)
    }

    /// Split the piece where its image meets a branch boundary of `f`, then
    /// extend every sub-piece by one iterate.
    pub fn step(&self, map: &PiecewiseMap) -> Vec<Piece> {
        let (u, v) = self.image(map);
        let cuts: Vec<f64> = map
            .boundaries()
            .into_iter()
            .filter(|&c| c > u && c < v)
            .collect();
        let s = self.orientation(map);
        let mut xs = Vec::with_capacity(cuts.len() + 2);
        xs.push(self.lo);
        let mut interior: Vec<f64> = cuts.iter().map(|&c| self.preimage(map, c)).collect();
        if s < 0.0 {
            interior.reverse();
        }
        xs.extend(interior);
        xs.push(self.hi);
        let mut out = Vec::with_capacity(xs.len() - 1);
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let sub = self.with_bounds(w[0], w[1]);
            let (a, b) = sub.image(map);
            let b_idx = map.branch_index_of(0.5 * (a + b));
            let mut next = sub;
            next.path.push(b_idx as u32);
            out.push(next);
        }
        out
    }
}

/// Root bracketing for a monotone function with known orientation `s`.
/// Returns the argument in `[lo, hi]` whose value is closest to `target`
/// from the bracketing side; iterates until the bracket cannot shrink
/// further. Steps are Illinois false-position, with a bisection whenever
/// the bracket fails to halve over two steps.
pub fn bisect_monotone<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, target: f64, s: f64) -> f64 {
    let g = |x: f64| (f(x) - target) * s;
    let (mut a, mut b) = (lo, hi);
    let mut ga = g(a);
    if ga >= 0.0 {
        return a;
    }
    let mut gb = g(b);
    if gb <= 0.0 {
        return b;
    }
    let mut last = 0i8;
    let mut width = b - a;
    let mut stalled = 0;
    for _ in 0..400 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let mut m = if stalled >= 2 { mid } else { a - ga * (b - a) / (gb - ga) };
        if !(m > a && m < b) {
            m = mid;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if gm < 0.0 {
            a = m;
            ga = gm;
            if last < 0 {
                gb *= 0.5;
            }
            last = -1;
        } else {
            b = m;
            gb = gm;
            if last > 0 {
                ga *= 0.5;
            }
            last = 1;
        }
        if b - a > 0.5 * width {
            stalled += 1;
        } else {
            stalled = 0;
            width = b - a;
        }
        if stalled > 2 {
            stalled = 0;
            width = b - a;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_finds_sqrt() {
        let r = bisect_monotone(|x| x * x, 0.0, 2.0, 2.0, 1.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        let r = bisect_monotone(|x| 1.0 - x, 0.0, 1.0, 0.25, -1.0);
        assert!((r - 0.75).abs() < 1e-15);
    }

    #[test]
    fn step_splits_at_turning_point() {
        let map = PiecewiseMap::quadratic(4.0).unwrap();
        let pieces = Piece::new(0.0, 1.0).step(&map);
        assert_eq!(pieces.len(), 2);
        assert!((pieces[0].hi - 0.5).abs() < 1e-15);
        let pieces2: Vec<Piece> = pieces.iter().flat_map(|p| p.step(&map)).collect();
        assert_eq!(pieces2.len(), 4);
        for p in &pieces2 {
            let (a, b) = p.image(&map);
            assert!(a.abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        }
    }
}
