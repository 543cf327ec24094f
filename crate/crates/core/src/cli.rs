//! Command-line driver. Every subcommand writes CSV tables and a
//! `verdict.json` into the output directory; files are written to a
//! temporary name and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checks::{schwarzian_check, verify_orders, SchwarzianVerdict};
use crate::config::MapSpec;
use crate::cycles::{find_cycles, find_minimal_cycles, renormalize, Interval, DEFAULT_MAX_PERIOD};
use crate::error::Error;
use crate::inducer::{build_induced, default_params, tail_distribution, InducerParams};
use crate::map::{PiecewiseMap, Side};
use crate::markov::{
    build_full_markov, choose_omega, return_tail, separation_distortion_check, FullMarkovMap,
    DEFAULT_MAX_GENERATIONS,
};
use crate::observable::Observable;
use crate::orbit::{all_critical_orbits, predicted_regime, summability_verdict, CriticalOrbitRecord};
use crate::regime::{classify_tail, RegimeFit};
use crate::stats::{
    birkhoff_density, clt_test, correlation_series, fit_correlations, ulam_density, BirkhoffParams,
    CltParams, CorrelationParams, DensityEstimate, DEFAULT_MAX_POWER_ITERS,
};

pub const SCHEMA: u32 = 1;
pub const THREADS_ENV: &str = "ERGODIC_INTERVAL_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ergodic-interval", version, about = "Statistical analysis of interval maps with critical points")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Overridden by
    /// ERGODIC_INTERVAL_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct MapArg {
    /// Map spec: a JSON file, `builtin:<name>` or a bare builtin name
    /// (chebyshev, tent, tent1.3, doubling, lorenz).
    #[arg(long)]
    pub map: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a map spec and check critical orders and the Schwarzian sign.
    Validate {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 2000)]
        grid: usize,
    },
    /// Critical-orbit diagnostics and the predicted mixing regime.
    Diagnose {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
    /// Periodic cycles of intervals.
    Cycles {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = DEFAULT_MAX_PERIOD)]
        max_period: usize,
    },
    /// Renormalization on cycle `k` of the `cycles` listing, written as a map spec.
    Renorm {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 0)]
        cycle: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_PERIOD)]
        max_period: usize,
    },
    /// Induced Markov map on an interval J.
    Induce(InduceArgs),
    /// Full Markov map onto a base interval, its return tail and tower data.
    Markov(MarkovArgs),
    /// Invariant density by the Ulam method and by Birkhoff averages.
    Density(DensityArgs),
    /// Decay of correlations along long orbits.
    Correlations(CorrelationArgs),
    /// Central limit statistics of block sums.
    Clt(CltArgs),
    /// diagnose → cycles → induce → markov → density → correlations → clt,
    /// with a concordance verdict.
    FullReport(FullReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InduceArgs {
    #[command(flatten)]
    pub map: MapArg,
    /// Starting interval `a,b`.
    #[arg(long = "J", value_name = "A,B", default_value = "0.1,0.6")]
    pub j: String,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub delta_prime: Option<f64>,
    #[arg(long)]
    pub delta_dprime: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub nmax: Option<usize>,
    #[arg(long)]
    pub leak_budget: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub horizon: usize,
}

#[derive(Args, Debug, Clone)]
pub struct MarkovArgs {
    #[command(flatten)]
    pub map: MapArg,
    /// Invariant set `a,b` in which the base is chosen.
    #[arg(long, value_name = "A,B", default_value = "0,1")]
    pub x_set: String,
    /// Index of the critical point the base is centred on.
    #[arg(long, default_value_t = 0)]
    pub c_index: usize,
    /// Upper bound on the base length.
    #[arg(long, default_value_t = 0.5)]
    pub max_len: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_GENERATIONS)]
    pub max_generations: usize,
    /// Separation times sampled by the distortion check.
    #[arg(long, default_value_t = 30)]
    pub depth: usize,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    #[arg(long, default_value_t = 200)]
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DensityMethodArg {
    Ulam,
    Birkhoff,
    Both,
}

#[derive(Args, Debug, Clone)]
pub struct DensityArgs {
    #[command(flatten)]
    pub map: MapArg,
    #[arg(long, default_value_t = 4096)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = DensityMethodArg::Both)]
    pub method: DensityMethodArg,
    /// Orbit length per seed for the Birkhoff estimate.
    #[arg(long, default_value_t = 2_500_000)]
    pub orbit_length: usize,
    #[arg(long, default_value_t = 4)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_POWER_ITERS)]
    pub max_iters: usize,
}

#[derive(Args, Debug, Clone)]
pub struct CorrelationArgs {
    #[command(flatten)]
    pub map: MapArg,
    #[arg(long, default_value = "sqrt_dist")]
    pub phi: String,
    /// Defaults to phi.
    #[arg(long)]
    pub psi: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub n_max: usize,
    #[arg(long, default_value_t = 2_000_000)]
    pub orbit_length: usize,
    #[arg(long, default_value_t = 8)]
    pub seeds: usize,
    #[arg(long, default_value_t = 16)]
    pub batches: usize,
    /// Iterate f^power (e.g. the gcd of the return times).
    #[arg(long, default_value_t = 1)]
    pub power: usize,
    /// Use the map as given instead of its renormalization on the minimal cycle.
    #[arg(long)]
    pub no_renorm: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CltArgs {
    #[command(flatten)]
    pub map: MapArg,
    #[arg(long, default_value = "x")]
    pub phi: String,
    #[arg(long, default_value_t = 1000)]
    pub block_n: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4096)]
    pub bins: usize,
    #[arg(long, default_value_t = 32)]
    pub max_lag: usize,
    #[arg(long, default_value_t = 1)]
    pub power: usize,
    #[arg(long)]
    pub no_renorm: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FullReportArgs {
    #[command(flatten)]
    pub map: MapArg,
    #[arg(long = "J", value_name = "A,B", default_value = "0.1,0.6")]
    pub j: String,
    /// Observable for the correlation stage.
    #[arg(long, default_value = "sqrt_dist")]
    pub phi: String,
    /// Observable for the CLT stage.
    #[arg(long, default_value = "x")]
    pub clt_phi: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub orbit_length: usize,
}

// ---- errors and output -----------------------------------------------------

/// A failure with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            kind: "Io".into(),
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "schema": SCHEMA, "error": self.kind, "message": self.message, "exit_code": self.code })
            .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_budget_failure() { EXIT_BUDGET } else { EXIT_VALIDATION },
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(&target, e))?;
    tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    write_atomic(dir, name, s.as_bytes())
}

/// Plain CSV: 17 significant digits for floats.
struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv {
            text: format!("{}\n", header.join(",")),
        }
    }

    fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    fn write(&self, dir: &Path, name: &str) -> CliResult<()> {
        write_atomic(dir, name, self.text.as_bytes())
    }
}

enum Cell {
    F(f64),
    U(usize),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format!("{v:.16e}"),
            Cell::U(v) => v.to_string(),
        }
    }
}

use Cell::{F, U};

fn fit_json(fit: &RegimeFit) -> Value {
    json!({
        "regime": fit.regime.name(),
        "params": fit.regime,
        "r_squared": fit.r_squared,
        "fitted_constant": fit.fitted_constant,
    })
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Minus => "minus",
        Side::Plus => "plus",
        Side::Interior => "interior",
    }
}

fn parse_pair(s: &str, what: &str) -> CliResult<Interval> {
    let bad = || CliError {
        code: EXIT_VALIDATION,
        kind: "Config".into(),
        message: format!("{what} must be 'a,b' with a < b, got '{s}'"),
    };
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a < b) {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_observable(s: &str) -> CliResult<Observable> {
    Ok(s.parse::<Observable>()?)
}

/// Resolve `--map`: an existing file, `builtin:<name>`, or a bare builtin name.
pub fn load_spec(arg: &str) -> crate::error::Result<MapSpec> {
    let p = Path::new(arg);
    if !p.exists() {
        if let Some(spec) = MapSpec::builtin(arg) {
            return Ok(spec);
        }
    }
    MapSpec::load(p)
}

fn load_map(arg: &MapArg) -> CliResult<PiecewiseMap> {
    let spec = load_spec(&arg.map)?;
    Ok(PiecewiseMap::from_spec(&spec)?)
}

/// The renormalization on the first minimal cycle for continuous maps, or
/// the map itself. Returns the map and the cycle period.
fn working_map(map: &PiecewiseMap) -> CliResult<(PiecewiseMap, usize)> {
    if !map.is_continuous() {
        return Ok((map.clone(), 1));
    }
    let cycles = find_minimal_cycles(map, DEFAULT_MAX_PERIOD)?;
    match cycles.first() {
        Some(cyc) => Ok((renormalize(map, cyc)?.map, cyc.period)),
        None => Ok((map.clone(), 1)),
    }
}

// ---- stages ----------------------------------------------------------------

fn run_validate(map_arg: &MapArg, grid: usize, out: &Path) -> CliResult<Value> {
    let map = load_map(map_arg)?;
    let orders = verify_orders(&map);
    let schwarz = schwarzian_check(&map, grid);
    let ok = orders.iter().all(|o| o.pass) && schwarz.verdict != SchwarzianVerdict::Fail;
    let v = json!({
        "schema": SCHEMA,
        "valid": ok,
        "continuous": map.is_continuous(),
        "critical_points": map.critical_points().len(),
        "l_max": map.l_max(),
        "orders": orders,
        "schwarzian": schwarz,
    });
    write_json(out, "verdict.json", &v)?;
    if !ok {
        return Err(CliError {
            code: EXIT_VALIDATION,
            kind: "ValidationFailed".into(),
            message: "critical-order or Schwarzian check failed".into(),
        });
    }
    Ok(v)
}

fn run_diagnose(map: &PiecewiseMap, horizon: usize, out: &Path) -> CliResult<(Vec<CriticalOrbitRecord>, Value)> {
    let records = all_critical_orbits(map, horizon)?;
    let mut sides = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let mut csv = Csv::new(&[
            "n",
            "orbit",
            "log10_abs_deriv",
            "dist",
            "gamma",
            "d",
            "s1_partial",
            "s2_partial",
        ]);
        for k in 0..rec.horizon {
            csv.row(&[
                U(k + 1),
                F(rec.orbit[k]),
                F(rec.log_deriv[k] / std::f64::consts::LN_10),
                F(rec.dist[k]),
                F(rec.gamma[k]),
                F(rec.dmin[k]),
                F(rec.s1_partial[k]),
                F(rec.s2_partial[k]),
            ]);
        }
        csv.write(out, &format!("diagnose_c{}_{}.csv", i / 2, side_name(rec.side)))?;
        let verdict = summability_verdict(rec)?;
        sides.push(json!({
            "c": rec.c,
            "side": side_name(rec.side),
            "l": rec.l,
            "S1": verdict.s1,
            "S2": verdict.s2,
            "heuristic": verdict.heuristic,
            "regime": fit_json(&crate::orbit::predicted_regime_one(rec)),
        }));
    }
    let predicted = predicted_regime(&records);
    let v = json!({
        "schema": SCHEMA,
        "horizon": horizon,
        "regime": predicted.regime.name(),
        "predicted": fit_json(&predicted),
        "sides": sides,
    });
    write_json(out, "verdict.json", &v)?;
    Ok((records, v))
}

fn run_cycles(map: &PiecewiseMap, max_period: usize, out: &Path) -> CliResult<Value> {
    let cycles = find_cycles(map, max_period)?;
    write_json(out, "cycles.json", &cycles)?;
    let v = json!({
        "schema": SCHEMA,
        "cycles": cycles.len(),
        "minimal": cycles.iter().filter(|c| c.minimal).count(),
        "periods": cycles.iter().map(|c| c.period).collect::<Vec<_>>(),
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn run_renorm(map: &PiecewiseMap, k: usize, max_period: usize, out: &Path) -> CliResult<Value> {
    let cycles = find_cycles(map, max_period)?;
    let cyc = cycles.get(k).ok_or_else(|| CliError {
        code: EXIT_VALIDATION,
        kind: "Precondition".into(),
        message: format!("cycle index {k} out of range ({} cycles)", cycles.len()),
    })?;
    let r = renormalize(map, cyc)?;
    write_atomic(out, "renorm.json", format!("{}\n", r.map.spec().to_json_pretty()).as_bytes())?;
    let v = json!({
        "schema": SCHEMA,
        "period": cyc.period,
        "interval": cyc.intervals[0],
        "offset": r.offset,
        "scale": r.scale,
        "branches": r.map.branches().len(),
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn induce_params(
    map: &PiecewiseMap,
    records: &[CriticalOrbitRecord],
    a: &InduceArgs,
) -> CliResult<InducerParams> {
    let mut p = match (a.delta, a.delta_prime) {
        (Some(d), Some(dp)) => InducerParams::new(d, dp),
        (Some(d), None) => {
            let dp = crate::inducer::estimate_delta_prime(
                map,
                d,
                crate::inducer::DEFAULT_N_MAX,
                crate::inducer::DEFAULT_W_MIN,
            )?;
            InducerParams::new(d, dp)
        }
        (None, dp) => {
            let mut p = default_params(map, records)?;
            if let Some(dp) = dp {
                p = InducerParams::new(p.delta, dp);
            }
            p
        }
    };
    if let Some(v) = a.delta_dprime {
        p.delta_dprime = v;
    }
    if let Some(v) = a.eps {
        p.eps = v;
    }
    if let Some(v) = a.nmax {
        p.n_max = v;
    }
    if let Some(v) = a.leak_budget {
        p.leak_budget = v;
    }
    Ok(p)
}

fn run_induce(map: &PiecewiseMap, a: &InduceArgs, out: &Path) -> CliResult<Value> {
    let j = parse_pair(&a.j, "--J")?;
    let records = all_critical_orbits(map, a.horizon)?;
    let params = induce_params(map, &records, a)?;
    let ind = build_induced(map, j, &params, &records)?;
    let mut csv = Csv::new(&[
        "left",
        "right",
        "p_hat",
        "image_left",
        "image_right",
        "distortion",
        "n_deep",
        "n_shallow",
    ]);
    for e in &ind.elements {
        csv.row(&[
            F(e.lo),
            F(e.hi),
            U(e.p_hat),
            F(e.image.0),
            F(e.image.1),
            F(e.distortion),
            U(e.n_deep()),
            U(e.n_shallow()),
        ]);
    }
    csv.write(out, "elements.csv")?;
    let tail = tail_distribution(&ind);
    let mut tcsv = Csv::new(&["n", "t_n"]);
    for (n, t) in tail.iter().enumerate() {
        tcsv.row(&[U(n), F(*t)]);
    }
    tcsv.write(out, "tails.csv")?;
    let fit = classify_tail(&tail, ind.leak_fraction());
    let v = json!({
        "schema": SCHEMA,
        "J": [j.0, j.1],
        "params": params,
        "elements": ind.elements.len(),
        "unresolved_fraction": ind.leak_fraction(),
        "unresolved_pieces": ind.unresolved_pieces,
        "max_distortion": ind.max_distortion,
        "min_shallow_gap": ind.min_shallow_gap,
        "tail": fit_json(&fit),
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn run_markov(map: &PiecewiseMap, a: &MarkovArgs, seed: u64, out: &Path) -> CliResult<(FullMarkovMap, Value)> {
    let x_set = parse_pair(&a.x_set, "--x-set")?;
    let records = all_critical_orbits(map, a.horizon)?;
    let params = default_params(map, &records)?;
    let choice = choose_omega(map, x_set, a.c_index, params.delta_prime, a.max_len)?;
    let fm = build_full_markov(map, &choice, &params, a.max_generations)?;

    let mut csv = Csv::new(&["left", "right", "R", "p_hat", "t", "generation"]);
    for e in &fm.elements {
        csv.row(&[F(e.lo), F(e.hi), U(e.r), U(e.p_hat), U(e.t), U(e.generation)]);
    }
    csv.write(out, "q_elements.csv")?;

    let rt = return_tail(&fm, &records);
    let mut tcsv = Csv::new(&["n", "tail"]);
    for (n, t) in rt.tail.iter().enumerate() {
        tcsv.row(&[U(n), F(*t)]);
    }
    tcsv.write(out, "r_tails.csv")?;

    let mut dcsv = Csv::new(&["s", "ratio_minus_1"]);
    let distortion = match separation_distortion_check(map, &fm, a.depth, a.samples, seed) {
        Ok(rep) => {
            for p in &rep.pairs {
                dcsv.row(&[U(p.s), F(p.ratio_minus_1)]);
            }
            json!({
                "beta": rep.beta,
                "c_hat": rep.c_hat,
                "pass": rep.pass,
                "trivial": rep.trivial,
                "envelope_fraction": rep.envelope_fraction,
                "pairs": rep.pairs.len(),
            })
        }
        Err(e) => json!({ "pass": false, "error": e.kind(), "message": e.to_string() }),
    };
    dcsv.write(out, "distortion_pairs.csv")?;

    let v = json!({
        "schema": SCHEMA,
        "regime_measured": rt.measured.regime.name(),
        "regime_predicted": rt.predicted.regime.name(),
        "match": rt.matches,
        "gcd_R": fm.gcd_r,
        "t0": fm.t0,
        "omega": [fm.omega.0, fm.omega.1],
        "measured": fit_json(&rt.measured),
        "predicted": fit_json(&rt.predicted),
        "coverage": fm.coverage,
        "xi": fm.xi,
        "elements": fm.elements.len(),
        "unresolved_mass": fm.unresolved_mass,
        "leftover_mass": fm.leftover_mass,
        "max_endpoint_error": fm.max_endpoint_error(map),
        "anchor": choice.anchor,
        "anchor_depth": choice.anchor_depth,
        "witnesses": choice.witnesses.len(),
        "missing_witnesses": choice.missing_witnesses,
        "distortion": distortion,
    });
    write_json(out, "verdict.json", &v)?;
    Ok((fm, v))
}

fn density_csv(est: &[&DensityEstimate]) -> Csv {
    let mut header = vec!["left", "right"];
    for e in est {
        header.push(match e.method {
            crate::stats::DensityMethod::Ulam => "rho_ulam",
            crate::stats::DensityMethod::Birkhoff => "rho_birkhoff",
        });
    }
    let mut csv = Csv::new(&header);
    let bins = est[0].bins;
    let w = 1.0 / bins as f64;
    for i in 0..bins {
        let mut row = vec![F(i as f64 * w), F((i + 1) as f64 * w)];
        row.extend(est.iter().map(|e| F(e.rho[i])));
        csv.row(&row);
    }
    csv
}

fn run_density(map: &PiecewiseMap, a: &DensityArgs, seed: u64, out: &Path) -> CliResult<Value> {
    let ulam = match a.method {
        DensityMethodArg::Birkhoff => None,
        _ => Some(ulam_density(map, a.bins, a.max_iters)?),
    };
    let birk = match a.method {
        DensityMethodArg::Ulam => None,
        _ => Some(birkhoff_density(
            map,
            &BirkhoffParams {
                orbit_length: a.orbit_length,
                bins: a.bins,
                burn_in: a.burn_in,
                seeds: a.seeds,
                seed,
                ..Default::default()
            },
        )?),
    };
    let all: Vec<&DensityEstimate> = ulam.iter().chain(birk.iter()).collect();
    density_csv(&all).write(out, "density.csv")?;
    let summary = |d: &DensityEstimate| {
        json!({
            "method": d.method,
            "total_mass": d.total_mass(),
            "residual": d.residual,
            "iterations": d.iterations,
            "l1_from_uniform": d.l1_from_uniform(),
            "l2_mass": d.lp_mass(2.0),
        })
    };
    let l1 = match (&ulam, &birk) {
        (Some(u), Some(b)) => Some(u.l1_distance(b)?),
        _ => None,
    };
    let v = json!({
        "schema": SCHEMA,
        "bins": a.bins,
        "estimates": all.iter().map(|d| summary(d)).collect::<Vec<_>>(),
        "l1_ulam_birkhoff": l1,
        "agree_within_5pct": l1.map(|d| d <= 0.05),
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn run_correlations(
    base: &PiecewiseMap,
    a: &CorrelationArgs,
    seed: u64,
    out: &Path,
) -> CliResult<Value> {
    let (map, period) = if a.no_renorm { (base.clone(), 1) } else { working_map(base)? };
    let phi = parse_observable(&a.phi)?;
    let psi = match &a.psi {
        Some(s) => parse_observable(s)?,
        None => phi.clone(),
    };
    let params = CorrelationParams {
        n_max: a.n_max,
        orbit_length: a.orbit_length,
        seeds: a.seeds,
        batches: a.batches,
        seed,
        power: a.power,
        ..Default::default()
    };
    let series = correlation_series(&map, &phi, &psi, &params)?;
    let mut csv = Csv::new(&["n", "C_n", "cov", "SE"]);
    for n in 0..series.signed.len() {
        csv.row(&[U(n), F(series.signed[n].abs()), F(series.signed[n]), F(series.se[n])]);
    }
    csv.write(out, "correlations.csv")?;
    let predicted = predicted_regime(&all_critical_orbits(&map, crate::orbit::DEFAULT_HORIZON)?);
    let (gk, gk_lags) = series.green_kubo();
    let v = match fit_correlations(&map, &phi, &psi, a.power, series) {
        Ok(r) => json!({
            "schema": SCHEMA,
            "phi": phi,
            "psi": psi,
            "holder_exponent": r.holder_exponent,
            "cycle_period": period,
            "power": a.power,
            "measured": r.fit.regime.name(),
            "predicted": r.predicted.regime.name(),
            "match": r.matches,
            "fit": fit_json(&r.fit),
            "prediction": fit_json(&r.predicted),
            "fit_lags": r.fit_lags,
            "sigma2_green_kubo": gk,
            "green_kubo_lags": gk_lags,
        }),
        Err(Error::NoiseFloor) => json!({
            "schema": SCHEMA,
            "phi": phi,
            "psi": psi,
            "holder_exponent": phi.holder_exponent().min(psi.holder_exponent()),
            "cycle_period": period,
            "power": a.power,
            "measured": "noise_floor",
            "predicted": predicted.regime.name(),
            "match": false,
            "prediction": fit_json(&predicted),
            "sigma2_green_kubo": gk,
            "green_kubo_lags": gk_lags,
        }),
        Err(e) => return Err(e.into()),
    };
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn run_clt(base: &PiecewiseMap, a: &CltArgs, seed: u64, out: &Path) -> CliResult<Value> {
    let (map, period) = if a.no_renorm { (base.clone(), 1) } else { working_map(base)? };
    let phi = parse_observable(&a.phi)?;
    let r = clt_test(
        &map,
        &phi,
        &CltParams {
            block_n: a.block_n,
            samples: a.samples,
            density_bins: a.bins,
            seed,
            max_lag: a.max_lag,
            power: a.power,
            ..Default::default()
        },
    )?;
    let mut csv = Csv::new(&["level", "quantile", "normal_quantile"]);
    for &(l, q, nq) in &r.quantiles {
        csv.row(&[F(l), F(q), F(nq)]);
    }
    csv.write(out, "clt_quantiles.csv")?;
    let v = json!({
        "schema": SCHEMA,
        "phi": phi,
        "cycle_period": period,
        "power": a.power,
        "block_n": r.block_n,
        "samples": r.samples,
        "mean_phi": r.mean_phi,
        "var_phi": r.var_phi,
        "sigma_hat": r.sigma_hat,
        "sigma2_hat": r.sigma2_hat,
        "ks_statistic": r.ks_statistic,
        "ks_critical_1pct": r.ks_critical_1pct,
        "ks_pass": r.ks_pass,
        "sigma2_green_kubo": r.sigma2_green_kubo,
        "green_kubo_lags": r.green_kubo_lags,
        "coboundary_flag": r.coboundary_flag,
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

fn run_full_report(a: &FullReportArgs, seed: u64, out: &Path) -> CliResult<Value> {
    let spec = load_spec(&a.map.map)?;
    let base = PiecewiseMap::from_spec(&spec)?;
    write_atomic(out, "map.json", format!("{}\n", spec.to_json_pretty()).as_bytes())?;
    let (diag_records, diag) = run_diagnose(&base, 200, &out.join("diagnose"))?;
    drop(diag_records);
    let cycles = if base.is_continuous() {
        Some(run_cycles(&base, DEFAULT_MAX_PERIOD, &out.join("cycles"))?)
    } else {
        None
    };
    let (g, period) = working_map(&base)?;
    let induce = run_induce(
        &g,
        &InduceArgs {
            map: a.map.clone(),
            j: a.j.clone(),
            delta: None,
            delta_prime: None,
            delta_dprime: None,
            eps: None,
            nmax: None,
            leak_budget: None,
            horizon: 200,
        },
        &out.join("induce"),
    )?;
    let (fm, markov) = run_markov(
        &g,
        &MarkovArgs {
            map: a.map.clone(),
            x_set: "0,1".into(),
            c_index: 0,
            max_len: 0.5,
            max_generations: DEFAULT_MAX_GENERATIONS,
            depth: 30,
            samples: 400,
            horizon: 200,
        },
        seed,
        &out.join("markov"),
    )?;
    let density = run_density(
        &g,
        &DensityArgs {
            map: a.map.clone(),
            bins: 4096,
            method: DensityMethodArg::Both,
            orbit_length: a.orbit_length,
            seeds: 4,
            burn_in: 1000,
            max_iters: DEFAULT_MAX_POWER_ITERS,
        },
        seed,
        &out.join("density"),
    )?;
    let corr = run_correlations(
        &g,
        &CorrelationArgs {
            map: a.map.clone(),
            phi: a.phi.clone(),
            psi: None,
            n_max: 30,
            orbit_length: a.orbit_length,
            seeds: 8,
            batches: 16,
            power: fm.gcd_r.max(1),
            no_renorm: true,
        },
        seed,
        &out.join("correlations"),
    )?;
    let clt = run_clt(
        &g,
        &CltArgs {
            map: a.map.clone(),
            phi: a.clt_phi.clone(),
            block_n: 1000,
            samples: 10_000,
            bins: 4096,
            max_lag: 32,
            power: fm.gcd_r.max(1),
            no_renorm: true,
        },
        seed,
        &out.join("clt"),
    )?;
    let v = json!({
        "schema": SCHEMA,
        "map": spec.family,
        "cycle_period": period,
        "predicted": diag["regime"],
        "measured": corr["measured"],
        "match": corr["match"],
        "stages": {
            "diagnose": diag,
            "cycles": cycles,
            "induce": { "tail": induce["tail"]["regime"], "unresolved_fraction": induce["unresolved_fraction"] },
            "markov": {
                "regime_measured": markov["regime_measured"],
                "regime_predicted": markov["regime_predicted"],
                "match": markov["match"],
                "gcd_R": markov["gcd_R"],
                "coverage": markov["coverage"],
            },
            "density": { "l1_ulam_birkhoff": density["l1_ulam_birkhoff"] },
            "correlations": { "measured": corr["measured"], "predicted": corr["predicted"], "match": corr["match"] },
            "clt": {
                "sigma2_hat": clt["sigma2_hat"],
                "sigma2_green_kubo": clt["sigma2_green_kubo"],
                "ks_pass": clt["ks_pass"],
                "coboundary_flag": clt["coboundary_flag"],
            },
        },
    });
    write_json(out, "verdict.json", &v)?;
    Ok(v)
}

// ---- entry point -----------------------------------------------------------

fn thread_count(cli_value: Option<usize>) -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .or(cli_value)
        .filter(|&n| n > 0)
}

fn dispatch(cli: &Cli) -> CliResult<Value> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Validate { map, grid } => run_validate(map, *grid, out),
        Command::Diagnose { map, horizon } => Ok(run_diagnose(&load_map(map)?, *horizon, out)?.1),
        Command::Cycles { map, max_period } => run_cycles(&load_map(map)?, *max_period, out),
        Command::Renorm { map, cycle, max_period } => run_renorm(&load_map(map)?, *cycle, *max_period, out),
        Command::Induce(a) => run_induce(&load_map(&a.map)?, a, out),
        Command::Markov(a) => Ok(run_markov(&load_map(&a.map)?, a, cli.seed, out)?.1),
        Command::Density(a) => run_density(&load_map(&a.map)?, a, cli.seed, out),
        Command::Correlations(a) => run_correlations(&load_map(&a.map)?, a, cli.seed, out),
        Command::Clt(a) => run_clt(&load_map(&a.map)?, a, cli.seed, out),
        Command::FullReport(a) => run_full_report(a, cli.seed, out),
    }
}

/// Run a parsed command line; returns the process exit status. Errors are
/// printed to stderr as JSON.
pub fn run(cli: Cli) -> i32 {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads) {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!(
                "{}",
                CliError { code: EXIT_VALIDATION, kind: "Threads".into(), message: e.to_string() }.to_json()
            );
            return EXIT_VALIDATION;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(v) => {
            println!("{}", serde_json::to_string(&v).expect("serializable verdict"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}
