//! Invariant density estimates, L^p mass under refinement, correlation decay
//! and central-limit statistics.
//!
//! Floating-point orbits of maps with dyadic slopes collapse onto the fixed
//! point after about fifty steps, so every orbit here is perturbed by a
//! uniform jitter of size `jitter` per elementary step. Each random stream is
//! tied to a sample index rather than a thread, and every reduction runs in a
//! fixed order, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cycles::Interval;
use crate::error::{Error, Result};
use crate::map::PiecewiseMap;
use crate::observable::Observable;
use crate::orbit::{all_critical_orbits, predicted_regime, DEFAULT_HORIZON};
use crate::regime::{classify_log, RegimeFit};

pub const ULAM_SAMPLES: usize = 64;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_POWER_ITERS: usize = 20_000;
pub const DEFAULT_JITTER: f64 = 1e-12;
const QUADRATURE_POINTS: usize = 16;

// ---- small utilities -------------------------------------------------------

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut k = Kahan::default();
    for v in it {
        k.add(v);
    }
    k.value()
}

/// Generator for the random stream `stream` under the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Orbit of `f^power` with a small random perturbation after every step,
/// reflected back into `[0, 1]`.
pub struct JitteredOrbit<'a> {
    map: &'a PiecewiseMap,
    power: usize,
    jitter: f64,
    rng: ChaCha8Rng,
    pub x: f64,
}

impl<'a> JitteredOrbit<'a> {
    pub fn new(map: &'a PiecewiseMap, power: usize, jitter: f64, rng: ChaCha8Rng, x: f64) -> Self {
        JitteredOrbit { map, power: power.max(1), jitter, rng, x }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn advance(&mut self) -> f64 {
        for _ in 0..self.power {
            let mut y = self.map.apply(self.x);
            if self.jitter > 0.0 {
                y += self.jitter * (2.0 * self.rng.gen::<f64>() - 1.0);
                if y < 0.0 {
                    y = -y;
                } else if y > 1.0 {
                    y = 2.0 - y;
                }
            }
            self.x = y;
        }
        self.x
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if !bins.is_power_of_two() || !(256..=65536).contains(&bins) {
        return Err(Error::Precondition(format!(
            "bins must be a power of two in [256, 65536], got {bins}"
        )));
    }
    Ok(())
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

// ---- density estimates -----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    Ulam,
    Birkhoff,
}

/// Piecewise-constant density on `bins` equal bins of `[0, 1]`, normalised
/// so that `Σ ρ_i / bins = 1`.
#[derive(Clone, Debug, Serialize)]
pub struct DensityEstimate {
    pub bins: usize,
    pub rho: Vec<f64>,
    pub method: DensityMethod,
    /// `‖Pρ − ρ‖₁` for Ulam estimates.
    pub residual: Option<f64>,
    pub iterations: usize,
}

impl DensityEstimate {
    fn width(&self) -> f64 {
        1.0 / self.bins as f64
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.rho.iter().copied()) * self.width()
    }

    /// Distribution function at the bin edges `0, 1/bins, …, 1`.
    pub fn cdf(&self) -> Vec<f64> {
        let w = self.width();
        let mut acc = Kahan::default();
        let mut out = Vec::with_capacity(self.bins + 1);
        out.push(0.0);
        for r in &self.rho {
            acc.add(r * w);
            out.push(acc.value());
        }
        out
    }

    pub fn l1_distance(&self, other: &DensityEstimate) -> Result<f64> {
        if self.bins != other.bins {
            return Err(Error::Precondition("densities have different bin counts".into()));
        }
        Ok(kahan_sum(self.rho.iter().zip(&other.rho).map(|(a, b)| (a - b).abs())) * self.width())
    }

    pub fn l1_from_uniform(&self) -> f64 {
        kahan_sum(self.rho.iter().map(|r| (r - 1.0).abs())) * self.width()
    }

    /// `sup |F̂ − F|` over the bin edges.
    pub fn cdf_sup_distance(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.cdf()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - f(i as f64 * self.width())).abs())
            .fold(0.0, f64::max)
    }

    /// `∫ g ρ dx` by midpoint sums inside each bin.
    pub fn integrate(&self, g: impl Fn(f64) -> f64 + Sync) -> f64 {
        let w = self.width();
        let parts: Vec<f64> = (0..self.bins)
            .into_par_iter()
            .map(|i| {
                let lo = i as f64 * w;
                let s = kahan_sum(
                    (0..QUADRATURE_POINTS).map(|k| g(lo + (k as f64 + 0.5) * w / QUADRATURE_POINTS as f64)),
                );
                self.rho[i] * s / QUADRATURE_POINTS as f64
            })
            .collect();
        kahan_sum(parts) * w
    }

    /// Discrete L^p mass `Σ ρ_i^p / bins`.
    pub fn lp_mass(&self, p: f64) -> f64 {
        kahan_sum(self.rho.iter().map(|r| r.powf(p))) * self.width()
    }

    /// Mass of `[0,1]` minus the union of `intervals`, at bin resolution
    /// (bins straddling an interval edge count by overlap).
    pub fn mass_outside(&self, intervals: &[Interval]) -> f64 {
        let w = self.width();
        let inside = kahan_sum(self.rho.iter().enumerate().map(|(i, r)| {
            let (a, b) = (i as f64 * w, (i + 1) as f64 * w);
            let cover: f64 = intervals.iter().map(|&(lo, hi)| (hi.min(b) - lo.max(a)).max(0.0)).sum();
            r * cover.min(w)
        }));
        (1.0 - inside).max(0.0)
    }

    /// Inverse-CDF draw: pick a bin by mass, then a uniform point inside it.
    pub fn sample(&self, cdf: &[f64], rng: &mut impl Rng) -> f64 {
        let total = cdf[self.bins];
        let u = rng.gen::<f64>() * total;
        let i = cdf.partition_point(|&v| v <= u).clamp(1, self.bins) - 1;
        let span = cdf[i + 1] - cdf[i];
        let frac = if span > 0.0 { (u - cdf[i]) / span } else { 0.5 };
        ((i as f64 + frac.clamp(0.0, 1.0)) * self.width()).clamp(0.0, 1.0)
    }
}

/// Sparse row-stochastic matrix of the Ulam discretisation.
#[derive(Clone, Debug)]
pub struct UlamMatrix {
    pub bins: usize,
    /// `rows[i]` lists `(j, P_ij)` with `j` increasing.
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl UlamMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| kahan_sum(r.iter().map(|e| e.1))).collect()
    }

    fn incoming(&self) -> Vec<Vec<(u32, f64)>> {
        let mut inc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.bins];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                inc[j as usize].push((i as u32, w));
            }
        }
        inc
    }
}

/// Map `ULAM_SAMPLES` equally spaced points of each bin and count where they
/// land.
pub fn ulam_matrix(map: &PiecewiseMap, bins: usize) -> Result<UlamMatrix> {
    check_bins(bins)?;
    let w = 1.0 / bins as f64;
    let unit = 1.0 / ULAM_SAMPLES as f64;
    let rows = (0..bins)
        .into_par_iter()
        .map(|i| {
            let mut hits: Vec<u32> = (0..ULAM_SAMPLES)
                .map(|k| {
                    let x = (i as f64 + (k as f64 + 0.5) * unit) * w;
                    bin_of(map.apply(x), bins) as u32
                })
                .collect();
            hits.sort_unstable();
            let mut row: Vec<(u32, f64)> = Vec::new();
            for j in hits {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += unit,
                    _ => row.push((j, unit)),
                }
            }
            row
        })
        .collect();
    Ok(UlamMatrix { bins, rows })
}

/// Fixed density of the Ulam matrix by damped power iteration from the
/// uniform density. The damping `ρ ← (ρ + Pρ)/2` has the same fixed points
/// and removes the oscillation caused by periodic cycles of intervals.
pub fn ulam_density(map: &PiecewiseMap, bins: usize, max_power_iters: usize) -> Result<DensityEstimate> {
    let m = ulam_matrix(map, bins)?;
    let inc = m.incoming();
    let n = bins as f64;
    let mut rho = vec![1.0; bins];
    let mut residual = f64::INFINITY;
    for it in 1..=max_power_iters {
        let q: Vec<f64> = inc
            .par_iter()
            .map(|col| kahan_sum(col.iter().map(|&(i, w)| rho[i as usize] * w)))
            .collect();
        residual = kahan_sum(q.iter().zip(&rho).map(|(a, b)| (a - b).abs())) / n;
        if residual <= RESIDUAL_TOL {
            return Ok(DensityEstimate {
                bins,
                rho,
                method: DensityMethod::Ulam,
                residual: Some(residual),
                iterations: it,
            });
        }
        for (r, v) in rho.iter_mut().zip(&q) {
            *r = 0.5 * (*r + v);
        }
        let scale = n / kahan_sum(rho.iter().copied());
        rho.iter_mut().for_each(|r| *r *= scale);
    }
    Err(Error::NonConvergence { residual })
}

#[derive(Clone, Debug)]
pub struct BirkhoffParams {
    /// Orbit length per seed, after burn-in.
    pub orbit_length: usize,
    pub bins: usize,
    pub burn_in: usize,
    pub seeds: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for BirkhoffParams {
    fn default() -> Self {
        BirkhoffParams {
            orbit_length: 2_500_000,
            bins: 4096,
            burn_in: 1000,
            seeds: 4,
            seed: 0,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// Histogram of jittered orbits from uniform random starts, pooled over
/// seeds.
pub fn birkhoff_density(map: &PiecewiseMap, params: &BirkhoffParams) -> Result<DensityEstimate> {
    check_bins(params.bins)?;
    if params.orbit_length == 0 || params.seeds == 0 {
        return Err(Error::Precondition("orbit_length and seeds must be positive".into()));
    }
    let counts: Vec<Vec<u64>> = (0..params.seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(params.seed, s as u64);
            let x0 = rng.gen::<f64>();
            let mut orb = JitteredOrbit::new(map, 1, params.jitter, rng, x0);
            for _ in 0..params.burn_in {
                orb.advance();
            }
            let mut h = vec![0u64; params.bins];
            for _ in 0..params.orbit_length {
                h[bin_of(orb.advance(), params.bins)] += 1;
            }
            h
        })
        .collect();
    let mut total = vec![0u64; params.bins];
    for h in &counts {
        for (t, c) in total.iter_mut().zip(h) {
            *t += c;
        }
    }
    let n = (params.orbit_length * params.seeds) as f64;
    let rho = total.iter().map(|&c| c as f64 * params.bins as f64 / n).collect();
    Ok(DensityEstimate {
        bins: params.bins,
        rho,
        method: DensityMethod::Birkhoff,
        residual: None,
        iterations: 0,
    })
}

/// Fraction of random starts whose orbit, after `burn_in` steps, spends the
/// next 100 steps inside the union of `intervals`.
pub fn capture_fraction(
    map: &PiecewiseMap,
    intervals: &[Interval],
    starts: usize,
    burn_in: usize,
    seed: u64,
) -> f64 {
    let inside = |x: f64| intervals.iter().any(|&(a, b)| x >= a - 1e-9 && x <= b + 1e-9);
    let hits: usize = (0..starts)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = stream_rng(seed, s as u64);
            let x0 = rng.gen::<f64>();
            let mut orb = JitteredOrbit::new(map, 1, DEFAULT_JITTER, rng, x0);
            for _ in 0..burn_in {
                orb.advance();
            }
            (0..100).all(|_| inside(orb.advance()))
        })
        .count();
    hits as f64 / starts.max(1) as f64
}

// ---- L^p mass under refinement ----------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpVerdict {
    Bounded,
    Diverging,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpTrend {
    pub p: f64,
    pub bins: Vec<usize>,
    pub masses: Vec<f64>,
    pub verdict: LpVerdict,
}

/// Discrete L^p mass of the Ulam density along a ladder of bin counts.
/// "Bounded" when the last two masses differ by less than 10%; "diverging"
/// when the mass grows by more than 50% from the coarsest to the finest
/// level.
pub fn lp_mass_trend(map: &PiecewiseMap, p: f64, bin_ladder: &[usize]) -> Result<LpTrend> {
    if !(p > 1.0) {
        return Err(Error::Precondition(format!("p must exceed 1, got {p}")));
    }
    if bin_ladder.len() < 2 || bin_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("bin ladder must be increasing with at least 2 levels".into()));
    }
    let masses = bin_ladder
        .iter()
        .map(|&b| Ok(ulam_density(map, b, DEFAULT_MAX_POWER_ITERS)?.lp_mass(p)))
        .collect::<Result<Vec<f64>>>()?;
    let k = masses.len();
    let last_change = (masses[k - 1] / masses[k - 2] - 1.0).abs();
    let growth = masses[k - 1] / masses[0] - 1.0;
    let verdict = if growth > 0.5 {
        LpVerdict::Diverging
    } else if last_change < 0.1 {
        LpVerdict::Bounded
    } else {
        LpVerdict::Inconclusive
    };
    Ok(LpTrend {
        p,
        bins: bin_ladder.to_vec(),
        masses,
        verdict,
    })
}

// ---- correlations ----------------------------------------------------------

#[derive(Clone, Debug)]
pub struct CorrelationParams {
    pub n_max: usize,
    /// Orbit length per seed.
    pub orbit_length: usize,
    pub burn_in: usize,
    pub seeds: usize,
    /// Each orbit is cut into this many batches for the error bars.
    pub batches: usize,
    pub seed: u64,
    pub jitter: f64,
    /// Iterate `f^power` (period of the cycle times the return-time gcd).
    pub power: usize,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        CorrelationParams {
            n_max: 30,
            orbit_length: 2_000_000,
            burn_in: 1000,
            seeds: 8,
            batches: 16,
            seed: 0,
            jitter: DEFAULT_JITTER,
            power: 1,
        }
    }
}

/// Estimated `cov(φ∘fⁿ, ψ)` for `n = 0..=n_max` with standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct CorrelationSeries {
    pub signed: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_phi: f64,
    pub mean_psi: f64,
}

impl CorrelationSeries {
    /// `Cₙ = |cov|`.
    pub fn c(&self) -> Vec<f64> {
        self.signed.iter().map(|v| v.abs()).collect()
    }

    /// `c₀ + 2 Σ cₙ`, stopping at the first lag whose value is within three
    /// standard errors of zero. Returns the sum and the number of lags used.
    pub fn green_kubo(&self) -> (f64, usize) {
        let mut s = Kahan::default();
        s.add(self.signed[0]);
        let mut used = 0;
        for n in 1..self.signed.len() {
            if self.signed[n].abs() <= 3.0 * self.se[n] {
                break;
            }
            s.add(2.0 * self.signed[n]);
            used = n;
        }
        (s.value(), used)
    }

    /// Lags `1..` where `Cₙ > 3·SE`, up to the first failure.
    pub fn resolved_lags(&self) -> Vec<usize> {
        (1..self.signed.len())
            .take_while(|&n| self.signed[n].abs() > 3.0 * self.se[n])
            .collect()
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = kahan_sum(v.iter().copied()) / n;
    if v.len() < 2 {
        return (m, f64::INFINITY);
    }
    let var = kahan_sum(v.iter().map(|x| (x - m) * (x - m))) / (n - 1.0);
    (m, (var / n).sqrt())
}

fn orbit_values(
    map: &PiecewiseMap,
    phi: &Observable,
    psi: &Observable,
    params: &CorrelationParams,
    s: usize,
) -> (Vec<f64>, Vec<f64>) {
    let len = params.orbit_length + params.n_max;
    let mut rng = stream_rng(params.seed, s as u64);
    let x0 = rng.gen::<f64>();
    let mut orb = JitteredOrbit::new(map, params.power, params.jitter, rng, x0);
    for _ in 0..params.burn_in {
        orb.advance();
    }
    let mut a = Vec::with_capacity(len);
    let mut b = Vec::with_capacity(len);
    for _ in 0..len {
        let x = orb.advance();
        a.push(phi.eval(map, x));
        b.push(psi.eval(map, x));
    }
    (a, b)
}

/// Time-average estimate of `cov(φ∘f^{power·n}, ψ)` from one long orbit per
/// seed. Means are pooled over all orbits; standard errors come from the
/// spread of batch estimates.
pub fn correlation_series(
    map: &PiecewiseMap,
    phi: &Observable,
    psi: &Observable,
    params: &CorrelationParams,
) -> Result<CorrelationSeries> {
    let batches = params.batches.max(1);
    if params.seeds == 0 || params.orbit_length < batches * (params.n_max + 1) {
        return Err(Error::Precondition(
            "orbit too short for the requested batches and lags".into(),
        ));
    }
    let orbits: Vec<(Vec<f64>, Vec<f64>)> = (0..params.seeds)
        .into_par_iter()
        .map(|s| orbit_values(map, phi, psi, params, s))
        .collect();
    let l = params.orbit_length;
    let total = (l * params.seeds) as f64;
    let mean_phi = kahan_sum(orbits.iter().flat_map(|(a, _)| a[..l].iter().copied())) / total;
    let mean_psi = kahan_sum(orbits.iter().flat_map(|(_, b)| b[..l].iter().copied())) / total;
    let blen = l / batches;
    // per (seed, batch): estimates for every lag
    let est: Vec<Vec<f64>> = orbits
        .par_iter()
        .flat_map_iter(|(a, b)| {
            (0..batches).map(move |k| {
                let range = k * blen..(k + 1) * blen;
                (0..=params.n_max)
                    .map(|n| {
                        kahan_sum(range.clone().map(|j| (a[j + n] - mean_phi) * (b[j] - mean_psi)))
                            / blen as f64
                    })
                    .collect()
            })
        })
        .collect();
    let mut signed = Vec::with_capacity(params.n_max + 1);
    let mut se = Vec::with_capacity(params.n_max + 1);
    for n in 0..=params.n_max {
        let col: Vec<f64> = est.iter().map(|e| e[n]).collect();
        let (m, e) = mean_and_se(&col);
        signed.push(m);
        se.push(e);
    }
    Ok(CorrelationSeries {
        signed,
        se,
        mean_phi,
        mean_psi,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    pub phi: Observable,
    pub psi: Observable,
    pub holder_exponent: f64,
    pub power: usize,
    pub series: CorrelationSeries,
    pub fit_lags: Vec<usize>,
    pub fit: RegimeFit,
    pub predicted: RegimeFit,
    pub matches: bool,
    pub sigma2_green_kubo: f64,
}

/// Fit the decay regime of the correlation series on the lags resolved above
/// noise and compare it with the regime predicted from the critical orbits.
pub fn fit_correlations(
    map: &PiecewiseMap,
    phi: &Observable,
    psi: &Observable,
    power: usize,
    series: CorrelationSeries,
) -> Result<CorrelationReport> {
    let lags = series.resolved_lags();
    if lags.len() < 5 {
        return Err(Error::NoiseFloor);
    }
    let ns: Vec<f64> = lags.iter().map(|&n| n as f64).collect();
    let lc: Vec<f64> = lags.iter().map(|&n| series.signed[n].abs().ln()).collect();
    let fit = classify_log(&ns, &lc);
    let predicted = predicted_regime(&all_critical_orbits(map, DEFAULT_HORIZON)?);
    let matches = fit.regime.same_kind(&predicted.regime);
    let (gk, _) = series.green_kubo();
    Ok(CorrelationReport {
        phi: phi.clone(),
        psi: psi.clone(),
        holder_exponent: phi.holder_exponent().min(psi.holder_exponent()),
        power,
        series,
        fit_lags: lags,
        fit,
        predicted,
        matches,
        sigma2_green_kubo: gk,
    })
}

/// Correlation decay of `(φ, ψ)` under `f^power`. Fails with `NoiseFloor`
/// when fewer than 5 lags rise above three standard errors.
pub fn correlation(
    map: &PiecewiseMap,
    phi: &Observable,
    psi: &Observable,
    params: &CorrelationParams,
) -> Result<CorrelationReport> {
    let series = correlation_series(map, phi, psi, params)?;
    fit_correlations(map, phi, psi, params.power, series)
}

// ---- central limit theorem -------------------------------------------------

#[derive(Clone, Debug)]
pub struct CltParams {
    pub block_n: usize,
    pub samples: usize,
    pub density_bins: usize,
    pub seed: u64,
    pub jitter: f64,
    /// Largest lag for the Green–Kubo sum.
    pub max_lag: usize,
    pub power: usize,
}

impl Default for CltParams {
    fn default() -> Self {
        CltParams {
            block_n: 1000,
            samples: 10_000,
            density_bins: 4096,
            seed: 0,
            jitter: DEFAULT_JITTER,
            max_lag: 32,
            power: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub phi: Observable,
    pub block_n: usize,
    pub samples: usize,
    /// `∫ φ dμ̂` against the Ulam density.
    pub mean_phi: f64,
    pub var_phi: f64,
    pub sigma_hat: f64,
    pub sigma2_hat: f64,
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub ks_pass: bool,
    pub sigma2_green_kubo: f64,
    pub green_kubo_lags: usize,
    pub coboundary_flag: bool,
    /// `(level, empirical quantile of S, normal quantile)` for levels
    /// 0.01, 0.02, …, 0.99.
    pub quantiles: Vec<(f64, f64, f64)>,
}

struct BlockStats {
    s: f64,
    dev_sq: f64,
    lag: Vec<f64>,
}

/// Asymptotic 1% critical value of the Kolmogorov distribution.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Kolmogorov–Smirnov distance between the sample and `Normal(0, σ)`.
pub fn ks_normal(sorted: &[f64], sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return 1.0;
    }
    let nd = Normal::new(0.0, sigma).expect("positive sigma");
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = nd.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Normalised block sums `S = (Σ_{j<n} φ(fʲx) − n∫φdμ̂)/√n` from starts
/// drawn out of the Ulam density.
pub fn clt_test(map: &PiecewiseMap, phi: &Observable, params: &CltParams) -> Result<CltReport> {
    if params.block_n < 1000 || params.samples < 10_000 {
        return Err(Error::Precondition(format!(
            "CLT needs block_n >= 1000 and samples >= 10000, got {} and {}",
            params.block_n, params.samples
        )));
    }
    let dens = ulam_density(map, params.density_bins, DEFAULT_MAX_POWER_ITERS)?;
    let mean = dens.integrate(|x| phi.eval(map, x));
    let cdf = dens.cdf();
    let n = params.block_n;
    let kmax = params.max_lag.min(n - 1);
    let lag_window = n.min(1000);
    let blocks: Vec<BlockStats> = (0..params.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(params.seed, s as u64);
            let x0 = dens.sample(&cdf, &mut rng);
            let mut orb = JitteredOrbit::new(map, params.power, params.jitter, rng, x0);
            let mut x = x0;
            let mut sum = Kahan::default();
            let mut dev_sq = Kahan::default();
            let mut window = Vec::with_capacity(lag_window);
            for j in 0..n {
                let v = phi.eval(map, x) - mean;
                sum.add(v);
                dev_sq.add(v * v);
                if j < lag_window {
                    window.push(v);
                }
                x = orb.advance();
            }
            let lag = (0..=kmax)
                .map(|k| {
                    kahan_sum((0..lag_window - k).map(|j| window[j] * window[j + k]))
                        / (lag_window - k) as f64
                })
                .collect();
            BlockStats {
                s: sum.value() / (n as f64).sqrt(),
                dev_sq: dev_sq.value() / n as f64,
                lag,
            }
        })
        .collect();

    let m = blocks.len() as f64;
    let var_phi = kahan_sum(blocks.iter().map(|b| b.dev_sq)) / m;
    let mut s: Vec<f64> = blocks.iter().map(|b| b.s).collect();
    let s_mean = kahan_sum(s.iter().copied()) / m;
    let sigma2_hat = kahan_sum(s.iter().map(|v| (v - s_mean) * (v - s_mean))) / (m - 1.0);
    let sigma_hat = sigma2_hat.sqrt();
    s.sort_by(f64::total_cmp);
    let ks = ks_normal(&s, sigma_hat);
    let crit = ks_critical_1pct(s.len());

    let mut gk = Kahan::default();
    let col = |k: usize| -> Vec<f64> { blocks.iter().map(|b| b.lag[k]).collect() };
    gk.add(mean_and_se(&col(0)).0);
    let mut used = 0;
    for k in 1..=kmax {
        let (c, e) = mean_and_se(&col(k));
        if c.abs() <= 3.0 * e {
            break;
        }
        gk.add(2.0 * c);
        used = k;
    }

    let quantiles = if sigma_hat > 0.0 {
        let nd = Normal::new(0.0, sigma_hat).expect("positive sigma");
        (1..100)
            .map(|q| {
                let level = q as f64 / 100.0;
                let idx = ((level * m) as usize).min(s.len() - 1);
                (level, s[idx], nd.inverse_cdf(level))
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(CltReport {
        phi: phi.clone(),
        block_n: n,
        samples: params.samples,
        mean_phi: mean,
        var_phi,
        sigma_hat,
        sigma2_hat,
        ks_statistic: ks,
        ks_critical_1pct: crit,
        ks_pass: ks < crit,
        sigma2_green_kubo: gk.value(),
        green_kubo_lags: used,
        coboundary_flag: sigma2_hat < 1e-3 * var_phi,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn arcsine_cdf(x: f64) -> f64 {
        2.0 / PI * x.sqrt().asin()
    }

    #[test]
    fn ulam_rows_are_stochastic() {
        for f in [
            PiecewiseMap::tent(2.0).unwrap(),
            PiecewiseMap::quadratic(4.0).unwrap(),
            PiecewiseMap::tent(1.3).unwrap(),
        ] {
            let m = ulam_matrix(&f, 1024).unwrap();
            for s in m.row_sums() {
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
        assert!(ulam_matrix(&PiecewiseMap::doubling().unwrap(), 1000).is_err());
        assert!(ulam_matrix(&PiecewiseMap::doubling().unwrap(), 128).is_err());
    }

    #[test]
    fn ulam_uniform_for_tent_and_doubling() {
        for f in [PiecewiseMap::tent(2.0).unwrap(), PiecewiseMap::doubling().unwrap()] {
            let d = ulam_density(&f, 4096, 1000).unwrap();
            assert!(d.l1_from_uniform() <= 0.02);
            assert!((d.total_mass() - 1.0).abs() <= 1e-9);
            assert!(d.residual.unwrap() <= 1e-8);
        }
    }

    #[test]
    fn ulam_chebyshev_matches_arcsine() {
        let f = PiecewiseMap::quadratic(4.0).unwrap();
        let d = ulam_density(&f, 4096, DEFAULT_MAX_POWER_ITERS).unwrap();
        assert!(d.rho.iter().all(|&r| r >= 0.0));
        assert!((d.total_mass() - 1.0).abs() <= 1e-9);
        let err = d.cdf_sup_distance(arcsine_cdf);
        assert!(err <= 0.01, "sup error {err}");
    }

    #[test]
    fn birkhoff_agrees_with_oracles() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let b = birkhoff_density(&tent, &BirkhoffParams { seed: 3, ..Default::default() }).unwrap();
        assert!(b.l1_from_uniform() <= 0.03, "{}", b.l1_from_uniform());

        let cheb = PiecewiseMap::quadratic(4.0).unwrap();
        let b = birkhoff_density(&cheb, &BirkhoffParams { seed: 3, ..Default::default() }).unwrap();
        assert!(b.cdf_sup_distance(arcsine_cdf) <= 0.02);
        let u = ulam_density(&cheb, 4096, DEFAULT_MAX_POWER_ITERS).unwrap();
        assert!(b.l1_distance(&u).unwrap() <= 0.05);
    }

    #[test]
    fn tent_13_concentrates_on_cycle() {
        let f = PiecewiseMap::tent(1.3).unwrap();
        let cyc = crate::cycles::find_minimal_cycles(&f, 64).unwrap();
        assert_eq!(cyc.len(), 1);
        let b = birkhoff_density(
            &f,
            &BirkhoffParams { orbit_length: 500_000, seed: 1, ..Default::default() },
        )
        .unwrap();
        assert!(b.mass_outside(&cyc[0].intervals) < 0.01);
        assert!(capture_fraction(&f, &cyc[0].intervals, 10_000, 2000, 5) >= 0.99);
        // the damped iteration converges despite the period-2 cycle
        let u = ulam_density(&f, 4096, DEFAULT_MAX_POWER_ITERS).unwrap();
        assert!(u.mass_outside(&cyc[0].intervals) < 0.01);
    }

    #[test]
    fn lp_trend_verdicts() {
        let cheb = PiecewiseMap::quadratic(4.0).unwrap();
        let ladder = [1024, 2048, 4096];
        let t = lp_mass_trend(&cheb, 1.5, &ladder).unwrap();
        assert_eq!(t.verdict, LpVerdict::Bounded, "{:?}", t.masses);
        assert!((t.masses[2] / t.masses[0] - 1.0).abs() < 0.1);
        let t = lp_mass_trend(&cheb, 3.0, &ladder).unwrap();
        assert_eq!(t.verdict, LpVerdict::Diverging, "{:?}", t.masses);
        let t = lp_mass_trend(&PiecewiseMap::tent(2.0).unwrap(), 10.0, &ladder).unwrap();
        assert_eq!(t.verdict, LpVerdict::Bounded);
        assert!(lp_mass_trend(&cheb, 1.0, &ladder).is_err());
    }

    #[test]
    fn tent_identity_correlations_vanish() {
        let f = PiecewiseMap::tent(2.0).unwrap();
        let p = CorrelationParams { n_max: 20, seed: 11, ..Default::default() };
        let s = correlation_series(&f, &Observable::Identity, &Observable::Identity, &p).unwrap();
        assert!((s.signed[0] - 1.0 / 12.0).abs() <= 3.0 * s.se[0] + 1e-3);
        for n in 1..=20 {
            assert!(s.signed[n].abs() <= 3.0 * s.se[n], "n={n}: {} vs {}", s.signed[n], s.se[n]);
        }
        assert!(matches!(
            fit_correlations(&f, &Observable::Identity, &Observable::Identity, 1, s),
            Err(Error::NoiseFloor)
        ));
    }

    #[test]
    fn exponential_correlations() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let p = CorrelationParams { seed: 2, ..Default::default() };
        let o = Observable::SqrtDistance;
        let r = correlation(&tent, &o, &o, &p).unwrap();
        assert!(matches!(r.fit.regime, crate::regime::Regime::Exponential { .. }), "{:?}", r.fit);
        // cos(2πT(x)) = cos(4πx): trigonometric correlations vanish exactly
        let c = Observable::Cos(1);
        assert!(matches!(correlation(&tent, &c, &c, &p), Err(Error::NoiseFloor)));

        let cheb = PiecewiseMap::quadratic(4.0).unwrap();
        let r = correlation(&cheb, &o, &o, &p).unwrap();
        assert!(matches!(r.fit.regime, crate::regime::Regime::Exponential { .. }), "{:?}", r.fit);
        assert!(r.matches);
    }

    #[test]
    fn clt_variances() {
        let tent = PiecewiseMap::tent(2.0).unwrap();
        let r = clt_test(&tent, &Observable::Identity, &CltParams { seed: 4, ..Default::default() }).unwrap();
        assert!((0.075..=0.092).contains(&r.sigma2_hat), "{}", r.sigma2_hat);
        assert!(r.ks_pass, "{} vs {}", r.ks_statistic, r.ks_critical_1pct);
        assert!((r.sigma2_hat / r.sigma2_green_kubo - 1.0).abs() < 0.15);

        let dbl = PiecewiseMap::doubling().unwrap();
        let r = clt_test(&dbl, &Observable::Identity, &CltParams { seed: 1, ..Default::default() }).unwrap();
        assert!((0.225..=0.275).contains(&r.sigma2_hat), "{}", r.sigma2_hat);
        assert!((r.sigma2_hat / r.sigma2_green_kubo - 1.0).abs() < 0.15, "{}", r.sigma2_green_kubo);

        let cob = Observable::Coboundary(Box::new(Observable::Sin(1)));
        let r = clt_test(&tent, &cob, &CltParams { block_n: 10_000, seed: 1, ..Default::default() }).unwrap();
        assert!(r.coboundary_flag, "{} vs {}", r.sigma2_hat, r.var_phi);
        assert!(!clt_test(&tent, &Observable::Identity, &CltParams::default()).unwrap().coboundary_flag);
    }
}
