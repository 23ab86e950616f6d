//! Acceptance suite: ten criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always
//! printed. The process exits with status 1 if any criterion fails.
//! Every stochastic criterion uses the fixed master seed [`SEED`].

use std::f64::consts::SQRT_2;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use transq::airy::{self, AiryEvaluator};
use transq::diffusion::{sample_hitting_time, DriftSpec};
use transq::dist::{critically_scaled, ArrivalModel, ServiceModel};
use transq::experiment::{
    bin_average, limit_fpt_params, ode_residual_max, paths, table, wronskian_error, Experiment, ExperimentConfig,
    QValues,
};
use transq::passage::{fpt_general, fpt_mean, StdFptParams};
use transq::queue_sim::{simulate_embedded_exponential, simulate_embedded_general, EmbeddedPath, HeavyTrafficConfig};
use transq::rng::{replication_stream, stream_from_seed};
use transq::scaling::{rescale_embedded_on_grid, EmbeddedSeries};
use transq::stats::{histogram_density, mc_summary, split_censored, total_variation};
use transq::Error;

const SEED: u64 = 1;
const REPS: u64 = 10_000;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Result<Outcome, Error>;

/// `|estimate - target| / se`, printed next to each comparison.
fn z(estimate: f64, target: f64, se: f64) -> f64 {
    (estimate - target) / se
}

fn table_config(which: Experiment, n_values: Vec<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(which);
    c.seed = SEED;
    c.replications = REPS;
    c.n_values = n_values;
    c.q = QValues::Many(vec![1.0, 2.0]);
    c
}

/// Compares simulated table cells with reference means at 3 standard errors.
fn check_cells(which: Experiment, n_values: &[u64], reference: &[(f64, u64, f64)]) -> Result<Outcome, Error> {
    let report = table(&table_config(which, n_values.to_vec()), which)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for &(q, n, target) in reference {
        let row = report.row(q, Some(n)).expect("cell present");
        let se = row.std_error.unwrap_or(f64::NAN);
        let zz = z(row.mean, target, se);
        ok &= zz.abs() <= 3.0 && row.censored == 0;
        parts.push(format!("q={q} n={n}: {:.4}±{se:.4} vs {target} (z={zz:+.2})", row.mean));
    }
    Ok(Outcome::new(ok, parts.join("; ")))
}

fn criterion_1() -> Result<Outcome, Error> {
    check_cells(
        Experiment::Table2,
        &[100, 1_000, 10_000],
        &[
            (1.0, 100, 2.2170),
            (1.0, 1_000, 2.0341),
            (1.0, 10_000, 2.0306),
            (2.0, 100, 3.2611),
            (2.0, 1_000, 2.9813),
            (2.0, 10_000, 2.9351),
        ],
    )
}

fn criterion_2() -> Result<Outcome, Error> {
    // The limit row fixes sigma: compute both candidate variances and keep
    // the one that reproduces the q=1 entry.
    let reference = [(1.0, 2.0038, 2.0306, 0.0133), (2.0, 2.8701, 2.9351, 0.0226)];
    let candidates = [1.0_f64, SQRT_2];
    let mut best = (f64::INFINITY, 0.0);
    for s in candidates {
        let m = fpt_mean(&StdFptParams::new(1.0, 1.0, s)?)?;
        if (m - reference[0].1).abs() < best.0 {
            best = ((m - reference[0].1).abs(), s);
        }
    }
    let sigma = best.1;
    let mut ok = true;
    let mut parts = vec![format!("sigma={sigma:.6}")];
    for (q, exact_ref, sim_ref, rel_ref) in reference {
        let exact = fpt_mean(&StdFptParams::new(q, 1.0, sigma)?)?;
        let rel = (sim_ref - exact) / exact;
        ok &= (exact - exact_ref).abs() <= 1e-3 && (rel - rel_ref).abs() <= 5e-4;
        parts.push(format!("q={q}: mean {exact:.5} vs {exact_ref}, rel.err {rel:.4} vs {rel_ref}"));
    }
    Ok(Outcome::new(ok, parts.join("; ")))
}

fn criterion_3() -> Result<Outcome, Error> {
    let cfg = table_config(Experiment::Table3, vec![100_000]);
    let mut ok = true;
    let mut parts = Vec::new();
    for (q, target) in [(1.0, 1.7267), (2.0, 2.4740)] {
        let mean = fpt_general(&limit_fpt_params(&cfg, q)?)?.mean;
        ok &= (mean - target).abs() <= 2e-3;
        parts.push(format!("limit q={q}: {mean:.5} vs {target}"));
    }
    let sim = check_cells(Experiment::Table3, &[100_000], &[(1.0, 100_000, 1.7440), (2.0, 100_000, 2.5050)])?;
    Ok(Outcome::new(ok && sim.passed, format!("{}; {}", parts.join("; "), sim.detail)))
}

fn criterion_4() -> Result<Outcome, Error> {
    check_cells(
        Experiment::Table4,
        &[1_000, 10_000],
        &[
            (1.0, 1_000, 2.8378),
            (1.0, 10_000, 2.7801),
            (2.0, 1_000, 3.8772),
            (2.0, 10_000, 3.7721),
        ],
    )
}

fn criterion_5() -> Result<Outcome, Error> {
    let params = StdFptParams::new(1.0, 1.0, 1.0)?;
    let spec = DriftSpec::new(1.0, 1.0, -0.5, 2, 1.0)?;
    let horizon = spec.default_horizon()?;
    let dt = 1e-4;
    let paths = 100_000u64;
    let obs = (0..paths)
        .into_par_iter()
        .map(|i| sample_hitting_time(&spec, horizon, dt, &mut replication_stream(SEED, i)))
        .collect::<Result<Vec<_>, Error>>()?;
    let (tau, censored) = split_censored(&obs);
    let (lo, hi) = params.support()?;
    let (lo, hi) = (lo.min(0.0), hi);
    let bins = 50;
    let hist = histogram_density(&tau, lo, hi, bins)?;
    let width = (hi - lo) / bins as f64;
    let mut sup = 0.0_f64;
    for (j, h) in hist.iter().enumerate() {
        let a = lo + j as f64 * width;
        let avg = bin_average(|t| params.density(t), a, a + width)?;
        sup = sup.max((h - avg).abs());
    }
    let mass = params.mass()?;
    Ok(Outcome::new(
        sup < 0.02 && (mass - 1.0).abs() <= 1e-3,
        format!("sup distance {sup:.4} over {bins} bins on [{lo:.2}, {hi:.2}], censored {censored}, mass {mass:.8}"),
    ))
}

fn criterion_6() -> Result<Outcome, Error> {
    let eval = AiryEvaluator::default();
    let w = wronskian_error(&eval, -8.0, 8.0, 200)?;
    let r = ode_residual_max(&eval, -5.0, 5.0)?;
    let overlap = [eval.series_limit_positive, -eval.series_limit_negative]
        .iter()
        .map(|&x| airy::branch_discrepancy(x))
        .fold(0.0_f64, f64::max);
    Ok(Outcome::new(
        w <= 1e-10 && r < 1e-4 && overlap <= 1e-9,
        format!("wronskian error {w:.2e}, ODE residual {r:.2e}, branch overlap {overlap:.2e}"),
    ))
}

/// Recomputes `N`, `Q = phi(N)` and `beta_n` from the arrivals in integers.
fn identities_hold(p: &EmbeddedPath) -> bool {
    let mut n = 0i64;
    let mut run_min = 0i64;
    for k in 0..p.len() {
        n += p.arrivals[k] as i64 - 1;
        run_min = run_min.min(n);
        if p.n_free[k] != n || p.queue[k] as i64 != n - run_min || p.busy_starts[k] as i64 != -run_min {
            return false;
        }
    }
    p.verify_identities().is_ok()
}

fn criterion_7() -> Result<Outcome, Error> {
    let mut rng = stream_from_seed(SEED);
    let (mut checked, mut failures, mut exhausted) = (0u32, 0u32, 0u32);
    while checked < 1_000 {
        let n: u64 = rng.random_range(5..5_000);
        let beta: f64 = rng.random_range(-2.0..2.0);
        let (arrival, ell) = match rng.random_range(0..3) {
            0 => (ArrivalModel::exponential(rng.random_range(0.5..2.0))?, 1),
            1 => (
                ArrivalModel::hyperexponential(vec![0.2, 0.8], vec![rng.random_range(1.5..3.0), 0.75])?,
                1,
            ),
            _ => (ArrivalModel::half_normal(rng.random_range(0.5..2.0))?, 2),
        };
        let base = if rng.random_bool(0.5) {
            ServiceModel::Deterministic { value: 1.0 }
        } else {
            ServiceModel::Exponential { mean: 1.0 }
        };
        let service = critically_scaled(&arrival, &base)?;
        let cfg = HeavyTrafficConfig::new(n, beta, ell, 0.0)?;
        let steps = rng.random_range(1..=(3.0 * cfg.step_scale()).ceil().min(n as f64 / 2.0).max(1.0) as usize);
        let mut stream = replication_stream(SEED, u64::from(checked) + 1_000_000);
        let path = match &arrival {
            ArrivalModel::Exponential { rate } if rng.random_bool(0.5) => {
                simulate_embedded_exponential(&cfg, *rate, &service, steps, &mut stream)
            }
            _ => simulate_embedded_general(&cfg, &arrival, &service, steps, &mut stream),
        };
        match path {
            Ok(p) => {
                checked += 1;
                failures += u32::from(!identities_hold(&p));
            }
            Err(Error::PopulationExhausted { .. }) => exhausted += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(Outcome::new(
        failures == 0,
        format!("{checked} random configs, {failures} violations, {exhausted} redrawn after population exhaustion"),
    ))
}

fn criterion_8() -> Result<Outcome, Error> {
    // A(1) ~ Binomial(4, 1 - e^(-1/5)) by enumerating the 2^4 ring patterns.
    let p = 1.0 - (-0.2f64).exp();
    let mut a_pmf = [0.0; 5];
    for mask in 0u32..16 {
        let k = mask.count_ones() as usize;
        a_pmf[k] += p.powi(k as i32) * (1.0 - p).powi(4 - k as i32);
    }
    let mut q_pmf = [0.0; 4];
    for (a, w) in a_pmf.iter().enumerate() {
        q_pmf[a.saturating_sub(1)] += w;
    }
    let cfg = HeavyTrafficConfig::new(5, 0.0, 1, 0.0)?;
    let service = ServiceModel::Deterministic { value: 1.0 };
    let arrival = ArrivalModel::exponential(1.0)?;
    let reps = 100_000u64;
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (label, general) in [("redrawn", false), ("fixed clocks", true)] {
        let draws = (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut s = replication_stream(SEED ^ u64::from(general), i);
                let path = if general {
                    simulate_embedded_general(&cfg, &arrival, &service, 1, &mut s)?
                } else {
                    simulate_embedded_exponential(&cfg, 1.0, &service, 1, &mut s)?
                };
                Ok((path.arrivals[0] as usize, path.queue[0] as usize))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let mut a_emp = [0.0; 5];
        let mut q_emp = [0.0; 4];
        for (a, q) in draws {
            a_emp[a] += 1.0 / reps as f64;
            q_emp[q] += 1.0 / reps as f64;
        }
        let (ta, tq) = (total_variation(&a_emp, &a_pmf), total_variation(&q_emp, &q_pmf));
        worst = worst.max(ta).max(tq);
        parts.push(format!("{label}: TV(A)={ta:.4}, TV(Q)={tq:.4}"));
    }
    Ok(Outcome::new(worst < 0.01, parts.join("; ")))
}

fn criterion_9() -> Result<Outcome, Error> {
    let n = 10_000u64;
    let grid = [0.5, 1.0, 2.0];
    let cfg = HeavyTrafficConfig::new(n, 0.0, 1, 0.0)?;
    let steps = (2.0 * cfg.step_scale()).ceil() as usize + 1;
    let unit = ServiceModel::Exponential { mean: 1.0 };
    let hyper = ArrivalModel::hyperexponential(vec![0.2, 0.8], vec![2.0, 0.75])?;
    let hyper_service = critically_scaled(&hyper, &unit)?;
    let c = hyper.f0_prime() / (2.0 * hyper.f0() * hyper.f0());
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, general, coef) in [("exponential", false, -0.5), ("hyperexponential", true, c)] {
        let samples = (0..REPS)
            .into_par_iter()
            .map(|i| {
                let mut s = replication_stream(SEED, i + if general { 1 << 40 } else { 0 });
                let path = if general {
                    simulate_embedded_general(&cfg, &hyper, &hyper_service, steps, &mut s)?
                } else {
                    simulate_embedded_exponential(&cfg, 1.0, &unit, steps, &mut s)?
                };
                Ok(rescale_embedded_on_grid(&path, n, 1, EmbeddedSeries::Free, &grid)?.values)
            })
            .collect::<Result<Vec<_>, Error>>()?;
        for (j, &t) in grid.iter().enumerate() {
            let col: Vec<f64> = samples.iter().map(|v| v[j]).collect();
            let s = mc_summary(&col, 0)?;
            let target = cfg.beta * t + coef * t * t;
            let zz = z(s.mean, target, s.std_error);
            ok &= zz.abs() <= 3.0;
            parts.push(format!("{label} t={t}: {:.4}±{:.4} vs {target:.4} (z={zz:+.2})", s.mean, s.std_error));
        }
    }
    Ok(Outcome::new(ok, parts.join("; ")))
}

fn criterion_10() -> Result<Outcome, Error> {
    let mut cfg = ExperimentConfig::preset(Experiment::Paths);
    cfg.seed = SEED;
    cfg.replications = REPS;
    cfg.n_values = vec![1_000, 10_000, 100_000];
    cfg.grid_end = 2.0;
    cfg.grid_step = 0.5;
    let report = paths(&cfg)?;
    let q = cfg.q.values()[0];
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let r = report.row(q, 10_000, t).expect("row present");
        let zz = r.gap() / r.joint_se;
        ok &= zz.abs() <= 3.0;
        parts.push(format!(
            "n=1e4 t={t}: queue {:.4} vs diffusion {:.4} (z={zz:+.2})",
            r.queue_mean, r.diffusion_mean
        ));
    }
    let gaps: Vec<f64> = cfg
        .n_values
        .iter()
        .map(|&n| report.row(q, n, 1.0).expect("row present").gap().abs())
        .collect();
    let trend = gaps.windows(2).all(|w| w[1] <= w[0]);
    parts.push(format!("|gap| at t=1 for n=1e3,1e4,1e5: {gaps:.4?}"));
    Ok(Outcome::new(ok && trend, parts.join("; ")))
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("C1 table2 simulated cells within 3 SE", criterion_1),
        ("C2 exact limit means and relative errors", criterion_2),
        ("C3 table3 limit via scaling reduction and n=1e5 cells", criterion_3),
        ("C4 table4 half-normal cells within 3 SE", criterion_4),
        ("C5 limit density vs Euler hitting-time histogram", criterion_5),
        ("C6 Airy Wronskian, ODE residual, branch overlap", criterion_6),
        ("C7 embedded reflection identities on random configs", criterion_7),
        ("C8 n=5 first-step law vs binomial enumeration", criterion_8),
        ("C9 drift of the free embedded process", criterion_9),
        ("C10 physical queue vs reflected diffusion", criterion_10),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| a.starts_with('C'));
    let mut failed = 0;
    for (name, run) in criteria {
        if only.as_deref().is_some_and(|o| !name.starts_with(&format!("{o} "))) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "[{}] {name} ({:.1}s): {detail}",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
