//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ergodic_interval::config::MapSpec;
use ergodic_interval::cycles::{find_minimal_cycles, renormalize};
use ergodic_interval::inducer::{build_induced, default_params, tail_distribution};
use ergodic_interval::map::PiecewiseMap;
use ergodic_interval::markov::{
    build_full_markov, choose_omega, return_tail, separation_distortion_check, ENDPOINT_TOL,
    DEFAULT_MAX_GENERATIONS,
};
use ergodic_interval::observable::Observable;
use ergodic_interval::orbit::{all_critical_orbits, summability_verdict, Verdict};
use ergodic_interval::regime::{classify_decay, classify_tail, Regime};
use ergodic_interval::stats::{
    birkhoff_density, clt_test, correlation_series, lp_mass_trend, ulam_density, BirkhoffParams,
    CltParams, CorrelationParams, LpVerdict, DEFAULT_MAX_POWER_ITERS,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn chebyshev() -> PiecewiseMap {
    PiecewiseMap::quadratic(4.0).unwrap()
}

fn tent() -> PiecewiseMap {
    PiecewiseMap::tent(2.0).unwrap()
}

fn arcsine_cdf(x: f64) -> f64 {
    2.0 / std::f64::consts::PI * x.sqrt().asin()
}

fn criterion_1() -> Outcome {
    let recs = all_critical_orbits(&chebyshev(), 200).map_err(|e| e.to_string())?;
    for rec in &recs {
        for n in 1..=15 {
            let d = rec.log_deriv[n - 1].exp();
            let want = 4f64.powi(n as i32);
            check((d / want - 1.0).abs() <= 1e-6, format!("|Df^{n}(f(c))| = {d}, want {want}"))?;
        }
        for n in 1..=200 {
            let want = 4f64.powf(-(n as f64) / 3.0).min(0.5);
            check((rec.gamma[n - 1] - want).abs() <= 1e-9, format!("gamma_{n} = {}", rec.gamma[n - 1]))?;
        }
        check((rec.dmin[1] - 0.17678).abs() <= 1e-5, format!("d_2 = {}", rec.dmin[1]))?;
        for n in 2..=200 {
            check(rec.dmin[n - 1] <= rec.gamma[n - 2], format!("d_{n} > gamma_{}", n - 1))?;
            check(rec.dmin[n - 1] <= rec.dmin[n - 2], format!("d_{n} > d_{}", n - 1))?;
        }
    }
    Ok(format!("{} critical sides, d_2 = {:.6}", recs.len(), recs[0].dmin[1]))
}

fn criterion_2() -> Outcome {
    let recs = all_critical_orbits(&tent(), 200).map_err(|e| e.to_string())?;
    for rec in &recs {
        for n in 1..=200 {
            let want = 2f64.powi(-(n as i32));
            check((rec.gamma[n - 1] - want).abs() <= 1e-12, format!("gamma_{n} = {}", rec.gamma[n - 1]))?;
        }
        check((rec.dmin[1] - 0.125).abs() <= 1e-12, format!("d_2 = {}", rec.dmin[1]))?;
        let v = summability_verdict(rec).map_err(|e| e.to_string())?;
        check(
            v.s1 == Verdict::Converging && v.s2 == Verdict::Converging,
            format!("summability verdicts {:?} / {:?}", v.s1, v.s2),
        )?;
    }
    Ok("gamma_n = 2^-n, d_2 = 0.125, both series converging".into())
}

fn criterion_3() -> Outcome {
    const LEN: usize = 1000;
    const RUNS: u64 = 100;
    let beta_exp = 4f64.ln() / 3.0;
    let mut wins = [0usize; 3];
    for seed in 0..RUNS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted: [&dyn Fn(f64) -> f64; 3] = [
            &|n| n.powf(-2.5),
            &|n| (-2.0 * n.sqrt()).exp(),
            &|n| 0.5 * 4f64.powf(-n / 3.0),
        ];
        for (k, a) in planted.iter().enumerate() {
            let seq: Vec<f64> = (1..=LEN)
                .map(|n| a(n as f64) * (1.0 + 0.1 * (2.0 * rng.gen::<f64>() - 1.0)))
                .collect();
            let fit = classify_decay(&seq).map_err(|e| e.to_string())?;
            let ok = match (k, fit.regime) {
                (0, Regime::Polynomial { alpha }) => (alpha / 2.5 - 1.0).abs() <= 0.1,
                (1, Regime::Stretched { alpha, beta }) => {
                    (alpha / 0.5 - 1.0).abs() <= 0.1 && (beta / 2.0 - 1.0).abs() <= 0.1
                }
                (2, Regime::Exponential { beta }) => (beta / beta_exp - 1.0).abs() <= 0.1,
                _ => false,
            };
            wins[k] += usize::from(ok);
        }
    }
    let detail = format!(
        "successes out of {RUNS}: polynomial {}, stretched {}, exponential {}",
        wins[0], wins[1], wins[2]
    );
    check(wins.iter().all(|&w| w >= 95), detail.clone())?;
    Ok(detail)
}

fn criterion_4() -> Outcome {
    let t13 = PiecewiseMap::tent(1.3).unwrap();
    let cyc = find_minimal_cycles(&t13, 64).map_err(|e| e.to_string())?;
    check(cyc.len() == 1 && cyc[0].period == 2, format!("tent 1.3 minimal cycles: {cyc:?}"))?;
    let r = renormalize(&t13, &cyc[0]).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let y = (k as f64 + 0.5) / 1000.0;
        worst = worst.max((r.map.deriv_at(y).abs() - 1.69).abs());
    }
    check(worst <= 1e-6, format!("|Dg| deviates from 1.69 by {worst:e}"))?;
    for f in [tent(), chebyshev()] {
        let c = find_minimal_cycles(&f, 64).map_err(|e| e.to_string())?;
        check(
            c.len() == 1 && c[0].period == 1 && c[0].intervals[0].0 <= 1e-9 && c[0].intervals[0].1 >= 1.0 - 1e-9,
            format!("expected the whole-interval cycle, got {c:?}"),
        )?;
    }
    for name in ["chebyshev", "tent", "tent1.3", "doubling", "lorenz"] {
        let f = PiecewiseMap::from_spec(&MapSpec::builtin(name).unwrap()).unwrap();
        // the cycle search is only defined for continuous maps
        let count = if f.is_continuous() {
            find_minimal_cycles(&f, 64).map_err(|e| e.to_string())?.len()
        } else {
            0
        };
        check(
            count <= f.critical_points().len(),
            format!("{name}: {count} minimal cycles for {} critical points", f.critical_points().len()),
        )?;
    }
    Ok(format!("tent 1.3: one period-2 cycle, max ||Dg| - 1.69| = {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    for (name, f) in [("tent", tent()), ("chebyshev", chebyshev())] {
        let recs = all_critical_orbits(&f, 200).map_err(|e| e.to_string())?;
        let params = default_params(&f, &recs).map_err(|e| e.to_string())?;
        let j = (0.1, 0.6);
        let ind = build_induced(&f, j, &params, &recs).map_err(|e| e.to_string())?;
        let jl = j.1 - j.0;
        check(ind.unresolved_mass <= 1e-3 * jl, format!("{name}: unresolved {}", ind.unresolved_mass))?;
        for e in &ind.elements {
            check(
                e.image.1 - e.image.0 >= params.delta_prime - 1e-9,
                format!("{name}: element image {:?} below δ′", e.image),
            )?;
        }
        for w in ind.elements.windows(2) {
            check(w[0].hi <= w[1].lo, format!("{name}: elements overlap at {}", w[1].lo))?;
        }
        let mass: f64 = ind.elements.iter().map(|e| e.len()).sum::<f64>() + ind.unresolved_mass;
        check((mass / jl - 1.0).abs() <= 1e-12, format!("{name}: mass {mass} vs |J| {jl}"))?;
        let tail = tail_distribution(&ind);
        let fit = classify_tail(&tail, ind.leak_fraction());
        check(
            matches!(fit.regime, Regime::Exponential { .. }) && fit.r_squared >= 0.98,
            format!("{name}: tail fit {fit:?}"),
        )?;
        notes.push(format!(
            "{name}: {} elements, leak {:.1e}, tail r² {:.4}",
            ind.elements.len(),
            ind.leak_fraction(),
            fit.r_squared
        ));
    }
    Ok(notes.join("; "))
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    for (name, f) in [("tent", tent()), ("chebyshev", chebyshev())] {
        let recs = all_critical_orbits(&f, 200).map_err(|e| e.to_string())?;
        let params = default_params(&f, &recs).map_err(|e| e.to_string())?;
        let ch = choose_omega(&f, (0.0, 1.0), 0, params.delta_prime, 0.5).map_err(|e| e.to_string())?;
        let fm = build_full_markov(&f, &ch, &params, DEFAULT_MAX_GENERATIONS).map_err(|e| e.to_string())?;
        check(fm.coverage >= 0.999, format!("{name}: coverage {}", fm.coverage))?;
        let err = fm.max_endpoint_error(&f);
        check(err <= ENDPOINT_TOL, format!("{name}: endpoint error {err:e}"))?;
        let rt = return_tail(&fm, &recs);
        check(
            rt.matches,
            format!("{name}: R tail {:?} vs predicted {:?}", rt.measured.regime, rt.predicted.regime),
        )?;
        let rep = separation_distortion_check(&f, &fm, 30, 400, 1).map_err(|e| e.to_string())?;
        match name {
            "tent" => check(rep.pass && rep.trivial, format!("tent distortion {rep:?}"))?,
            _ => check(rep.pass && rep.beta < 1.0, format!("chebyshev distortion β̂ = {}", rep.beta))?,
        }
        notes.push(format!(
            "{name}: coverage {:.5}, endpoint error {:.1e}, R tail {}, β̂ {:.3}{}",
            fm.coverage,
            err,
            rt.measured.regime.name(),
            rep.beta,
            if rep.trivial { " (trivial)" } else { "" }
        ));
    }
    Ok(notes.join("; "))
}

fn criterion_7() -> Outcome {
    let t = ulam_density(&tent(), 4096, DEFAULT_MAX_POWER_ITERS).map_err(|e| e.to_string())?;
    let l1_tent = t.l1_from_uniform();
    check(l1_tent <= 0.02, format!("tent Ulam L1 from uniform {l1_tent}"))?;
    let c = ulam_density(&chebyshev(), 4096, DEFAULT_MAX_POWER_ITERS).map_err(|e| e.to_string())?;
    let sup = c.cdf_sup_distance(arcsine_cdf);
    check(sup <= 0.01, format!("Chebyshev Ulam CDF sup error {sup}"))?;
    let params = BirkhoffParams { seed: 1, ..Default::default() };
    let mut gaps = Vec::new();
    for (name, f, u) in [("tent", tent(), &t), ("chebyshev", chebyshev(), &c)] {
        let b = birkhoff_density(&f, &params).map_err(|e| e.to_string())?;
        let d = b.l1_distance(u).map_err(|e| e.to_string())?;
        check(d <= 0.05, format!("{name}: Birkhoff vs Ulam L1 {d}"))?;
        gaps.push(format!("{name} {d:.4}"));
    }
    Ok(format!(
        "tent L1 {l1_tent:.2e}, Chebyshev CDF sup {sup:.4}, Birkhoff/Ulam L1: {}",
        gaps.join(", ")
    ))
}

fn criterion_8() -> Outcome {
    let f = chebyshev();
    let ladder = [1 << 10, 1 << 11, 1 << 12];
    let low = lp_mass_trend(&f, 1.5, &ladder).map_err(|e| e.to_string())?;
    let change = (low.masses[2] / low.masses[0] - 1.0).abs();
    check(change < 0.1, format!("L^1.5 mass changes by {change}"))?;
    check(low.verdict == LpVerdict::Bounded, format!("L^1.5 verdict {:?}", low.verdict))?;
    let high = lp_mass_trend(&f, 3.0, &ladder).map_err(|e| e.to_string())?;
    let growth = high.masses[2] / high.masses[0] - 1.0;
    check(growth > 0.5, format!("L^3 mass grows by {growth}"))?;
    check(high.verdict == LpVerdict::Diverging, format!("L^3 verdict {:?}", high.verdict))?;
    Ok(format!("L^1.5 change {:.1}%, L^3 growth {:.1}%", 100.0 * change, 100.0 * growth))
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_ergodic-interval")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn criterion_9() -> Outcome {
    let x = Observable::Identity;
    let p = CorrelationParams { n_max: 20, seed: 1, ..Default::default() };
    let s = correlation_series(&tent(), &x, &x, &p).map_err(|e| e.to_string())?;
    let worst = (1..=20).map(|n| s.signed[n].abs() / s.se[n]).fold(0.0, f64::max);
    check(worst <= 3.0, format!("tent C_n/SE reaches {worst}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = Command::new(binary())
        .args(["--seed", "1", "--out"])
        .arg(dir.path())
        .args(["correlations", "--map", "chebyshev", "--phi", "sqrt_dist"])
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), String::from_utf8_lossy(&status.stderr).to_string())?;
    let v = read_json(&dir.path().join("verdict.json"));
    check(
        v["measured"] == "exponential" && v["predicted"] == "exponential" && v["match"] == true,
        format!("verdict {}", v),
    )?;
    Ok(format!(
        "tent max |C_n|/SE = {worst:.2}; Chebyshev |x-1/2|^(1/2): measured {}, predicted {}, match true",
        v["measured"], v["predicted"]
    ))
}

fn criterion_10() -> Outcome {
    let x = Observable::Identity;
    let mut notes = Vec::new();
    for seed in [4, 5, 6] {
        let r = clt_test(&tent(), &x, &CltParams { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        check(
            (0.075..=0.092).contains(&r.sigma2_hat),
            format!("tent seed {seed}: σ̂² = {}", r.sigma2_hat),
        )?;
        check(
            r.ks_statistic < r.ks_critical_1pct,
            format!("tent seed {seed}: KS {} ≥ {}", r.ks_statistic, r.ks_critical_1pct),
        )?;
        notes.push(format!("σ̂²={:.4} KS={:.4}", r.sigma2_hat, r.ks_statistic));
    }
    let dbl = PiecewiseMap::doubling().unwrap();
    let r = clt_test(&dbl, &x, &CltParams { seed: 4, ..Default::default() }).map_err(|e| e.to_string())?;
    check((0.225..=0.275).contains(&r.sigma2_hat), format!("doubling σ̂² = {}", r.sigma2_hat))?;
    notes.push(format!("doubling σ̂²={:.4}", r.sigma2_hat));
    let cob = Observable::Coboundary(Box::new(Observable::Sin(1)));
    let r = clt_test(&tent(), &cob, &CltParams { block_n: 10_000, seed: 4, ..Default::default() })
        .map_err(|e| e.to_string())?;
    check(
        r.sigma2_hat < 1e-3 * r.var_phi && r.coboundary_flag,
        format!("coboundary σ̂² = {} vs Var = {}", r.sigma2_hat, r.var_phi),
    )?;
    notes.push(format!("coboundary σ̂²/Var={:.1e}", r.sigma2_hat / r.var_phi));
    Ok(format!("tent seeds 4-6: {}", notes.join(", ")))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_11() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for threads in ["1", "8"] {
        let out = root.path().join(format!("t{threads}"));
        let o = Command::new(binary())
            .args(["--seed", "7", "--threads", threads, "--out"])
            .arg(&out)
            .args(["full-report", "--map", "chebyshev"])
            .env_remove("ERGODIC_INTERVAL_THREADS")
            .output()
            .map_err(|e| e.to_string())?;
        check(o.status.success(), String::from_utf8_lossy(&o.stderr).to_string())?;
        snaps.push(snapshot(&out));
    }
    check(!snaps[0].is_empty(), "no output files")?;
    let names: Vec<&String> = snaps[0].iter().map(|f| &f.0).collect();
    check(snaps[0] == snaps[1], "outputs differ between 1 and 8 threads")?;
    let v = read_json(&root.path().join("t1").join("verdict.json"));
    check(v["match"] == true, format!("full-report verdict {}", v["match"]))?;
    Ok(format!("{} files byte-identical at 1 and 8 threads", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("diagnostics oracle, Chebyshev", criterion_1),
        ("diagnostics oracle, tent", criterion_2),
        ("regime classifier under noise", criterion_3),
        ("cycle detection and renormalization", criterion_4),
        ("induced-map contract", criterion_5),
        ("full Markov contract", criterion_6),
        ("density oracles", criterion_7),
        ("L^p mass under refinement", criterion_8),
        ("correlation decay", criterion_9),
        ("central limit statistics", criterion_10),
        ("determinism across thread counts", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let res = match res {
            Ok(msg) if took > Duration::from_secs(120) => Err(format!("{msg} (took {took:.1?}, limit 120 s)")),
            r => r,
        };
        match res {
            Ok(msg) => println!("criterion {:>2} PASS [{:>6.1?}] {name}: {msg}", i + 1, took),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{:>6.1?}] {name}: {msg}", i + 1, took);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
