//! End-to-end acceptance checks. Runs every criterion, prints one line each
//! and exits non-zero if any failed.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use windcast::evaluation::{nrmse_degradation, ScoreReport};
use windcast::hsic_select::{bahsic_rank, hsic_exact, nystrom_hsic, HsicConfig, VariableGroup};
use windcast::kernel_models::{krr_fit_exact, krr_predict, nystrom_krr_fit, KernelSpec};
use windcast::linear_models::{lasso_fit, ols_fit, LassoOptions, LassoProblem};
use windcast::pipeline::{
    run_experiment, ExperimentConfig, FitStage, KrrSettings, PowerMode, SelectionMethod, StepwiseSettings,
    SyntheticFarmSpec, TargetKind, DataSource, Grid,
};
use windcast::power_curve::fit_power_curve;
use windcast::data::SplitSizes;

type Outcome = Result<String, String>;

fn normal(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn standardize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let mu = c.sum() / n;
        let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        c.apply(|v| *v = (*v - mu) / sd);
    }
    out
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn nystrom_matches_exact_krr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = standardize(&normal(50, 6, &mut rng));
    let y = DVector::from_fn(50, |i, _| x[(i, 0)].sin() + 0.5 * x[(i, 1)] * x[(i, 2)]);
    let spec = KernelSpec::new(0.2).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let exact = krr_fit_exact(&x, &y, spec, 1e-3).map_err(|e| e.to_string())?;
    let approx = nystrom_krr_fit(&x, &y, spec, 1e-3, 50, 3).map_err(|e| e.to_string())?;
    let a = krr_predict(&exact, &x).map_err(|e| e.to_string())?;
    let b = krr_predict(&approx, &x).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rel = (&a - &b).norm() / a.norm();
    check(
        rel < 1e-6 && elapsed < Duration::from_secs(1),
        format!("relative RMS {rel:.2e}, {elapsed:?}"),
    )
}

/// Trace(H K H G) / n^2 as an explicit quadruple sum.
fn quadruple_sum(k: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let h = |a: usize, b: usize| (a == b) as u8 as f64 - 1.0 / n as f64;
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let hab = h(a, b);
            for c in 0..n {
                let left = hab * k[(b, c)];
                for d in 0..n {
                    total += left * h(c, d) * g[(d, a)];
                }
            }
        }
    }
    total / (n * n) as f64
}

fn gram(m: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.nrows(), |a, b| {
        let d: f64 = (0..m.ncols()).map(|j| (m[(a, j)] - m[(b, j)]).powi(2)).sum();
        (-gamma * d).exp()
    })
}

fn nystrom_matches_exact_hsic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = normal(40, 3, &mut rng);
    let y = DMatrix::from_fn(40, 2, |i, j| x[(i, j)].powi(2) + 0.1 * x[(i, 2)]);
    let config = HsicConfig { p: 40, p_prime: 40, seed: 5, ..HsicConfig::default() };
    let exact = hsic_exact(&x, &y, &config).map_err(|e| e.to_string())?;
    let approx = nystrom_hsic(&x, &y, &config).map_err(|e| e.to_string())?;
    let oracle = quadruple_sum(&gram(&x, 1.0 / 6.0), &gram(&y, 1.0 / 4.0));
    let rel = ((approx - exact) / exact).abs();
    let abs = (exact - oracle).abs();
    check(rel < 1e-8 && abs < 1e-10, format!("nystrom rel {rel:.2e}, oracle abs {abs:.2e}"))
}

fn lasso_optimality() -> Outcome {
    let opts = LassoOptions::default();
    let bound = 10.0 * opts.tol;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (n, q) = (rng.random_range(20..80), rng.random_range(2..15));
        let x = normal(n, q, &mut rng);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, q - 1)] + rng.sample::<f64, _>(StandardNormal));
        let problem = LassoProblem::new(&x, &y).map_err(|e| e.to_string())?;
        let lambda = problem.lambda_max() * rng.random_range(0.01..0.9);
        let m = lasso_fit(&x, &y, lambda, opts).map_err(|e| e.to_string())?;
        // subgradient of (1/n)|y - Xw - b|^2 + lambda |w|_1 from the raw data
        let resid = &y - &x * &m.weights - DVector::from_element(n, m.intercept);
        let grad = x.tr_mul(&resid) * (-2.0 / n as f64);
        for j in 0..q {
            let w = m.weights[j];
            let v = if w == 0.0 {
                (grad[j].abs() - lambda).max(0.0)
            } else {
                (grad[j] + lambda * w.signum()).abs()
            };
            worst = worst.max(v);
        }
        let zero = lasso_fit(&x, &y, problem.lambda_max() * 1.0001, opts).map_err(|e| e.to_string())?;
        if zero.weights.iter().any(|w| *w != 0.0) {
            return Err(format!("seed {seed}: nonzero weight at lambda_max"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = normal(100, 5, &mut rng);
    let y = DVector::from_fn(100, |i, _| 2.0 * x[(i, 0)] - x[(i, 3)] + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let tight = LassoOptions { tol: 1e-12, max_iter: 100_000 };
    let small = lasso_fit(&x, &y, 1e-10, tight).map_err(|e| e.to_string())?;
    let ols = ols_fit(&x, &y).map_err(|e| e.to_string())?;
    let gap = (&small.weights - &ols.weights).amax().max((small.intercept - ols.intercept).abs());
    check(
        worst <= bound && gap < 1e-6,
        format!("worst KKT residual {worst:.2e} (bound {bound:.0e}), OLS gap {gap:.2e}"),
    )
}

fn bahsic_recovers_drivers() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = 1000;
        let base = normal(n, 10, &mut rng);
        // each variable is a group of two columns: the value and a noisy copy
        let x = DMatrix::from_fn(n, 20, |i, j| base[(i, j / 2)] + if j % 2 == 1 { 0.3 } else { 0.0 } * rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| base[(i, 0)] + base[(i, 1)].powi(2) + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let groups: Vec<VariableGroup> = (0..10)
            .map(|v| VariableGroup::new(format!("x{}", v + 1), vec![2 * v, 2 * v + 1]))
            .collect();
        let config = HsicConfig { seed, ..HsicConfig::default() };
        let trace = bahsic_rank(&x, &groups, &y, &config, 0.1, 4).map_err(|e| e.to_string())?;
        if trace.survivors.contains(&"x1".to_string()) && trace.survivors.contains(&"x2".to_string()) {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    check(hits >= 9 && elapsed < Duration::from_secs(60), format!("{hits}/10 seeds, {elapsed:?}"))
}

fn power_curve_is_robust_to_clamping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 20_000;
    let curve = |s: f64| 2000.0 / (1.0 + (-(s - 8.0) / 1.2).exp());
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..25.0)).collect();
    let clean: Vec<f64> = ws.iter().map(|&s| curve(s)).collect();
    // curtailment: a fifth of the samples report zero output
    let dirty: Vec<f64> = clean
        .iter()
        .map(|&p| if rng.random::<f64>() < 0.2 { 0.0 } else { p })
        .collect();
    let a = fit_power_curve(&ws, &clean, 250).map_err(|e| e.to_string())?;
    let b = fit_power_curve(&ws, &dirty, 250).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..=50 {
        let q = 7.0 + 0.1 * i as f64;
        let (pa, pb) = (a.predict_one(q).unwrap(), b.predict_one(q).unwrap());
        worst = worst.max((pb - pa).abs() / pa);
    }
    check(worst < 0.05, format!("worst relative deviation over 7-12 m/s: {:.2}%", 100.0 * worst))
}

fn synthetic_skill() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::synthetic(TargetKind::WindSpeed);
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let s = &report.scores;
    let hs = s.horizons();
    let curve = |p: &str| hs.iter().map(|&h| s.mean_nrmse(p, h).unwrap()).collect::<Vec<f64>>();
    let pers = curve("persistence");
    let nwp = curve("nwp");
    let increasing = pers.windows(2).all(|w| w[1] > w[0]);
    let nwp_max = nwp.iter().copied().fold(f64::MIN, f64::max);
    let nwp_min = nwp.iter().copied().fold(f64::MAX, f64::min);
    let flat = nwp_max <= 1.1 * nwp_min;
    let cross = pers[0] < nwp[0] && pers[pers.len() - 1] > nwp[nwp.len() - 1];
    let skill = |p: &str| -> Result<f64, String> {
        let d = s.delta_curve(p).map_err(|e| e.to_string())?;
        Ok(d.iter().map(|d| d.delta_nrmse).fold(f64::MAX, f64::min))
    };
    let (lasso, krr) = (skill("lasso")?, skill("krr")?);
    check(
        hs.len() == 24 && increasing && flat && cross && lasso > 0.0 && krr > 0.0 && elapsed < Duration::from_secs(600),
        format!(
            "persistence {:.3}->{:.3} (monotone {increasing}), nwp spread {:.1}%, crossing {cross}, \
             min skill lasso {lasso:.3} krr {krr:.3}, {elapsed:.0?}",
            pers[0],
            pers[pers.len() - 1],
            100.0 * (nwp_max / nwp_min - 1.0)
        ),
    )
}

fn degradation_example() -> Outcome {
    let mut r = ScoreReport::new("ws", 1.0, 10, vec![]);
    r.push("A", 0, 1, 0.1);
    r.push("A", 0, 2, 0.2);
    r.push("B", 0, 1, 0.2);
    r.push("B", 0, 2, 0.1);
    let a = nrmse_degradation(&r, "A").map_err(|e| e.to_string())?;
    let b = nrmse_degradation(&r, "B").map_err(|e| e.to_string())?;
    let mut best = r.clone();
    best.push("C", 0, 1, 0.05);
    best.push("C", 0, 2, 0.05);
    let c = nrmse_degradation(&best, "C").map_err(|e| e.to_string())?;
    check(
        (a - 0.05).abs() <= 1e-15 && (b - 0.05).abs() <= 1e-15 && c == 0.0,
        format!("A {a}, B {b}, best-everywhere {c}"),
    )
}

fn small_power_farm(seed: u64, width: f64) -> ExperimentConfig {
    let mut config = ExperimentConfig::synthetic(TargetKind::WindPower);
    let DataSource::Synthetic(spec) = &mut config.data else { unreachable!() };
    *spec = SyntheticFarmSpec { n: 12_001, ..SyntheticFarmSpec::default() };
    spec.power.width = width;
    config.splits = SplitSizes { n_train: 4000, n_val: 4000, n_test: 4000 };
    config.seed = seed;
    config
}

fn direct_kernel_beats_direct_lasso() -> Outcome {
    let mut diffs = Vec::new();
    for seed in 0..5u64 {
        let mut config = small_power_farm(seed, 0.6);
        config.power_modes = vec![PowerMode::Direct];
        let report = run_experiment(&config).map_err(|e| e.to_string())?;
        let krr = nrmse_degradation(&report.scores, "krr_direct").map_err(|e| e.to_string())?;
        let lasso = nrmse_degradation(&report.scores, "lasso_direct").map_err(|e| e.to_string())?;
        diffs.push(lasso - krr);
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    check(diffs[2] > 0.0, format!("median degradation gap (lasso - krr) {:.4}", diffs[2]))
}

fn provenance_hygiene() -> Outcome {
    let mut config = small_power_farm(3, 1.2);
    let DataSource::Synthetic(spec) = &mut config.data else { unreachable!() };
    spec.n = 21_000;
    config.predictors.stepwise = Some(StepwiseSettings::default());
    config.predictors.krr = Some(KrrSettings {
        gammas: Grid::Values(vec![1e-3]),
        lambdas: Grid::Values(vec![1e-4]),
        anchors: 100,
    });
    config.selection.method = SelectionMethod::Bahsic;
    config.horizons = Some(vec![1, 12, 24]);
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let violations = report.hygiene_violations().len();
    let stages = [FitStage::Standardize, FitStage::Select, FitStage::PowerCurve, FitStage::Tune, FitStage::Refit];
    let covered = stages.iter().all(|st| report.fits.iter().any(|f| f.stage == *st));
    check(
        violations == 0 && covered && report.splits.len() == 2,
        format!("{} fitted objects over {} splits, {violations} touching test rows", report.fits.len(), report.splits.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("nystrom krr equals exact krr at p = n", nystrom_matches_exact_krr),
        ("nystrom hsic equals exact hsic at p = n", nystrom_matches_exact_hsic),
        ("lasso optimality conditions", lasso_optimality),
        ("bahsic recovers both drivers", bahsic_recovers_drivers),
        ("power curve robust to clamping", power_curve_is_robust_to_clamping),
        ("synthetic farm skill", synthetic_skill),
        ("degradation metric", degradation_example),
        ("direct kernel beats direct lasso on power", direct_kernel_beats_direct_lasso),
        ("no fitted statistic reads test rows", provenance_hygiene),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
