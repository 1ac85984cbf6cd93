//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.
//! Run with `cargo test -p netar --test acceptance -- --nocapture`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use netar::covariance::{fit_factor, fit_sar_qmle, ic_penalty, select_k, ErrorCovariance, FactorCovariance, SAR_BOUNDS};
use netar::data::Panel;
use netar::estimation::{
    fit, fit_gls, fit_ols, fit_ridge_ols, Estimator, FitOptions, RidgePenalty,
};
use netar::harness::{
    run_misspec_experiment, run_scenario, ErrorSpec, HarnessEstimator, MetricsTable, MisspecRate, Scenario,
};
use netar::model::{banded_weights, build_companion, build_design, spectral_radius, NarSpec};
use netar::rng::rng_for;
use netar::simulation::{simulate, simulate_with, ErrorModel, SimConfig};

fn report(id: u32, pass: bool, started: Instant, detail: &str) {
    println!(
        "criterion {id}: {} ({:.1}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn swap2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

fn print_table(tab: &MetricsTable) {
    for r in &tab.rows {
        println!(
            "  {:<14} {:<12} T={:<5} true={:<6} mean={:.4} rmse={:.4} ci_len={:.4} cp={:.3} n_ok={}",
            r.estimator.as_str(),
            r.group,
            r.t,
            r.true_value,
            r.mean_est,
            r.rmse,
            r.ci_len,
            r.cp,
            r.n_ok
        );
    }
}

#[test]
fn criterion_1_spectral_radius_examples() {
    let start = Instant::now();
    let nar22 = NarSpec::<f64>::homogeneous(&[1.5, -0.8], &[0.1, 0.1], &[], swap2()).unwrap();
    let r1 = spectral_radius(&build_companion(&nar22).unwrap()).unwrap();
    let hetero = NarSpec::<f64>::new(
        vec![DVector::from_vec(vec![0.8, 0.5])],
        vec![DVector::from_vec(vec![0.1, 0.6])],
        DMatrix::zeros(2, 0),
        swap2(),
    )
    .unwrap();
    let r2 = spectral_radius(&build_companion(&hetero).unwrap()).unwrap();
    let pass = (r1 - 0.949).abs() < 1e-3 && (r2 - 0.937).abs() < 1e-3 && start.elapsed().as_secs_f64() < 1.0;
    report(1, pass, start, &format!("radii {r1:.6} and {r2:.6} (expected 0.949, 0.937)"));
}

#[test]
fn criterion_2_exact_recovery() {
    let start = Instant::now();
    let n = 10;
    let w = banded_weights::<f64>(n, 2).unwrap();
    let a = DVector::from_fn(n, |i, _| 0.1 + 0.03 * i as f64);
    let b = DVector::from_fn(n, |i, _| 0.4 - 0.02 * i as f64);
    let gamma = DMatrix::from_fn(n, 3, |i, k| 0.5 - 0.1 * k as f64 + 0.01 * i as f64);
    let spec = NarSpec::new(vec![a], vec![b], gamma, w.clone()).unwrap();
    let sim = simulate(&spec, &ErrorModel::GaussianIid { sigma2: 0.0 }, &SimConfig::new(200, 5)).unwrap();
    let panel = sim.panel();
    let truth = spec.flatten().into_values();
    let ols = fit_ols(&panel, &w, 1, 1).unwrap();
    let err_ols = (ols.beta_hat.values() - &truth).amax();
    let gls = fit_gls(&panel, &w, 1, 1, &DMatrix::identity(n, n)).unwrap();
    let d_gls = (gls.beta_hat.values() - ols.beta_hat.values()).amax();
    let ridge = fit_ridge_ols(&panel, &w, 1, 1, RidgePenalty::uniform(0.0).unwrap()).unwrap();
    let d_ridge = (ridge.beta_hat.values() - ols.beta_hat.values()).amax();
    let pass = err_ols < 1e-8 && d_gls < 1e-10 && d_ridge < 1e-10 && start.elapsed().as_secs_f64() < 5.0;
    report(
        2,
        pass,
        start,
        &format!("|ols - beta|_inf = {err_ols:.2e}, |gls - ols| = {d_gls:.2e}, |ridge0 - ols| = {d_ridge:.2e}"),
    );
}

fn table2_scenario(n: usize, reps: usize, t_grid: Vec<usize>) -> Scenario {
    Scenario {
        schema_version: 1,
        id: "consistency".into(),
        n,
        a: vec![vec![0.1, 0.2, 0.3, 0.4]],
        b: vec![vec![0.4, 0.3, 0.2, 0.1]],
        gamma: vec![-0.8, -0.8, -0.8, -0.4, -0.4, 0.4, 0.4, 0.8, 0.8, 0.8],
        w_band: 5,
        phi_band: None,
        error: ErrorSpec::Sar { rho: 0.5, sigma_u2: 1.0 },
        y_mode: Default::default(),
        t_grid,
        reps,
        seed: 20240601,
        burn_in: 200,
        estimators: vec![HarnessEstimator::EglsSar],
        level: 0.95,
        kmax: None,
        bootstrap_reps: 500,
        misspec: None,
    }
}

#[test]
fn criterion_3_consistency_trend() {
    let start = Instant::now();
    let s = table2_scenario(50, 100, vec![150, 300, 450]);
    let tab = run_scenario(&s, None).unwrap();
    print_table(&tab);
    let groups = s.groups().unwrap();
    let mut problems = Vec::new();
    for g in &groups {
        let rm: Vec<f64> = s
            .t_grid
            .iter()
            .map(|&t| tab.row(HarnessEstimator::EglsSar, &g.label, t).unwrap().rmse)
            .collect();
        if !(rm[0] > rm[1] && rm[1] > rm[2]) {
            problems.push(format!("{} rmse not decreasing {rm:?}", g.label));
        }
        let last = tab.row(HarnessEstimator::EglsSar, &g.label, 450).unwrap();
        if (last.mean_est - last.true_value).abs() >= 0.02 {
            problems.push(format!("{} mean {:.4} vs {}", g.label, last.mean_est, last.true_value));
        }
    }
    let pass = problems.is_empty() && tab.failures.is_empty();
    report(
        3,
        pass,
        start,
        &format!("{} groups, {} failed fits; {}", groups.len(), tab.failures.len(), problems.join("; ")),
    );
}

#[test]
fn criterion_4_coverage_and_interval_length() {
    let start = Instant::now();
    let s = Scenario {
        id: "coverage".into(),
        n: 20,
        a: vec![vec![0.4]],
        b: vec![vec![0.4]],
        gamma: vec![0.4; 10],
        t_grid: vec![300],
        reps: 200,
        seed: 4,
        estimators: vec![HarnessEstimator::Ols, HarnessEstimator::Gls, HarnessEstimator::EglsSar],
        ..table2_scenario(20, 200, vec![300])
    };
    let tab = run_scenario(&s, None).unwrap();
    print_table(&tab);
    let mut problems = Vec::new();
    for g in s.groups().unwrap() {
        for est in &s.estimators {
            let r = tab.row(*est, &g.label, 300).unwrap();
            if !(0.92..=0.975).contains(&r.cp) {
                problems.push(format!("{} {} cp {:.3}", est.as_str(), g.label, r.cp));
            }
        }
        let ols = tab.row(HarnessEstimator::Ols, &g.label, 300).unwrap().ci_len;
        let egls = tab.row(HarnessEstimator::EglsSar, &g.label, 300).unwrap().ci_len;
        if egls > ols {
            problems.push(format!("{} egls ci {egls:.4} > ols ci {ols:.4}", g.label));
        }
    }
    report(4, problems.is_empty(), start, &problems.join("; "));
}

/// Profile log-likelihood through the eigenvalues of `Phi`, which is similar
/// to a symmetric matrix when it is a row-normalized symmetric adjacency.
fn oracle_loglik(rho: f64, e: &DMatrix<f64>, phi: &DMatrix<f64>, eig: &[f64]) -> f64 {
    let (t, n) = e.shape();
    let nt = (n * t) as f64;
    let s = DMatrix::identity(n, n) - phi * rho;
    let u = e * s.transpose();
    let sigma2 = u.norm_squared() / nt;
    let logdet: f64 = eig.iter().map(|l| (1.0 - rho * l).ln()).sum();
    -nt / 2.0 * (2.0 * std::f64::consts::PI).ln() - nt / 2.0 + t as f64 * logdet - nt / 2.0 * sigma2.ln()
}

fn grid_argmax(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|k| lo + step * k as f64)
        .map(|r| (r, f(r)))
        .fold((lo, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
        .0
}

#[test]
fn criterion_5_sar_qmle() {
    let start = Instant::now();
    let n = 100;
    let phi = banded_weights::<f64>(n, 5).unwrap();
    let adj: DMatrix<f64> = DMatrix::from_fn(n, n, |i, j| if i != j && i.abs_diff(j) <= 5 { 1.0 } else { 0.0 });
    let deg = DVector::from_fn(n, |i, _| adj.row(i).sum().sqrt().recip());
    let sym = DMatrix::from_fn(n, n, |i, j| deg[i] * adj[(i, j)] * deg[j]);
    let eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    let model = ErrorModel::SarGaussian { rho: 0.5, phi: phi.clone(), sigma_u2: 1.0 };
    let spec = NarSpec::<f64>::homogeneous(&[0.4], &[0.4], &[0.4; 5], phi.clone()).unwrap();
    let (mut abs_err, mut worst_gap) = (0.0, 0.0f64);
    let reps = 50;
    for rep in 0..reps {
        let mut rng = rng_for(55, rep);
        let sim = simulate_with(&spec, &model, &SimConfig::new(400, 0), &mut rng).unwrap();
        let ols = fit(&sim.panel(), &phi, 1, 1, &Estimator::Ols, &FitOptions { inference: false, ols_meat_sigma: None }).unwrap();
        let res = &ols.residuals;
        let sf = fit_sar_qmle(res, &phi, SAR_BOUNDS).unwrap();
        let f = |r: f64| oracle_loglik(r, res, &phi, &eig);
        let (lo, hi) = SAR_BOUNDS;
        let coarse = grid_argmax(lo, hi, 2001, f);
        let cell = (hi - lo) / 2000.0;
        let fine = grid_argmax((coarse - cell).max(lo), (coarse + cell).min(hi), 2001, f);
        abs_err += (sf.rho_hat - 0.5).abs();
        worst_gap = worst_gap.max((sf.rho_hat - fine).abs());
    }
    let mean_err = abs_err / reps as f64;
    let pass = mean_err <= 0.05 && worst_gap < 1e-4;
    report(
        5,
        pass,
        start,
        &format!("mean |rho_hat - 0.5| = {mean_err:.4}, max |rho_hat - grid oracle| = {worst_gap:.2e}"),
    );
}

#[test]
fn criterion_6_factor_selection() {
    let start = Instant::now();
    let (n, t, k_true, reps) = (50, 200, 3, 50u64);
    let w = banded_weights::<f64>(n, 5).unwrap();
    let spec = NarSpec::<f64>::homogeneous(&[0.4], &[0.4], &[0.4; 3], w.clone()).unwrap();
    let mut lrng = rng_for(66, u64::MAX);
    let lambda = DMatrix::from_fn(n, k_true, |_, _| rand::Rng::random::<f64>(&mut lrng));
    let models = [
        ("three factors", ErrorModel::FactorGaussian { lambda, sigma2: 0.25 }, k_true),
        ("null", ErrorModel::GaussianIid { sigma2: 1.0 }, 0),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    let mut worst_norm = 0.0f64;
    for (name, model, target) in &models {
        let mut hits = 0;
        for rep in 0..reps {
            let mut rng = rng_for(66, rep);
            let sim = simulate_with(&spec, model, &SimConfig::new(t, 0), &mut rng).unwrap();
            let ols = fit(&sim.panel(), &w, 1, 1, &Estimator::Ols, &FitOptions { inference: false, ols_meat_sigma: None }).unwrap();
            let sel = select_k(&ols.residuals, 8, ic_penalty).unwrap();
            hits += usize::from(sel.k_hat == *target);
            let ff = fit_factor(&ols.residuals, k_true).unwrap();
            let gram = ff.f_hat.tr_mul(&ff.f_hat) / ff.f_hat.nrows() as f64;
            worst_norm = worst_norm.max((gram - DMatrix::identity(k_true, k_true)).amax());
        }
        let share = hits as f64 / reps as f64;
        pass &= share >= 0.9;
        details.push(format!("{name}: k_hat = {target} in {share:.2}"));
    }
    pass &= worst_norm < 1e-8;
    details.push(format!("max |F'F/T - I| = {worst_norm:.1e}"));
    report(6, pass, start, &details.join(", "));
}

#[test]
fn criterion_7_misspecification_rates() {
    let start = Instant::now();
    let s = Scenario {
        id: "misspec".into(),
        n: 10,
        a: vec![vec![0.5]],
        b: vec![vec![0.8, -0.8, 0.8, -0.8, 0.8, -0.8, 0.8, -0.8, 0.8, -0.8]],
        gamma: vec![],
        w_band: 1,
        error: ErrorSpec::Iid { sigma2: 1.0 },
        estimators: vec![HarnessEstimator::Ols],
        seed: 7,
        ..table2_scenario(10, 100, vec![100, 1000, 10000])
    };
    let rates = [MisspecRate::Power(0.5), MisspecRate::Power(2.0 / 3.0)];
    let rows = run_misspec_experiment(&s, &rates, &s.t_grid, None).unwrap();
    for r in &rows {
        println!(
            "  {:<10} T={:<6} norm={:.4} {:<9} err={:.4} cp={:.3} n_ok={}",
            r.rate, r.t, r.target_norm, r.fit, r.err_norm, r.cp, r.n_ok
        );
    }
    let gap = |rate: &MisspecRate| {
        let get = |fit: &str| {
            rows.iter()
                .find(|r| r.rate == rate.label() && r.t == 10000 && r.fit == fit)
                .unwrap()
                .cp
        };
        get("true_w") - get("misspec_w")
    };
    let (g_half, g_two_thirds) = (gap(&rates[0]), gap(&rates[1]));
    let pass = g_two_thirds.abs() < 0.02 && g_half > 0.01;
    report(
        7,
        pass,
        start,
        &format!("CP gap at T=10000: rate T^-1/2 {g_half:.4}, rate T^-2/3 {g_two_thirds:.4}"),
    );
}

#[test]
fn criterion_8_bootstrap_heavy_tails() {
    let start = Instant::now();
    let s = Scenario {
        id: "heavy_tails".into(),
        n: 20,
        a: vec![vec![0.4]],
        b: vec![vec![0.4]],
        gamma: vec![0.4; 10],
        error: ErrorSpec::StudentT { nu: 4.0, rho: 0.5, sigma_u2: 1.0 },
        y_mode: netar::simulation::CovariateMode::StudentT { nu: 4.0 },
        estimators: vec![HarnessEstimator::OlsNominal, HarnessEstimator::Ols, HarnessEstimator::OlsBootstrap],
        bootstrap_reps: 500,
        seed: 8,
        ..table2_scenario(20, 200, vec![400])
    };
    let tab = run_scenario(&s, None).unwrap();
    print_table(&tab);
    let boot = tab.row(HarnessEstimator::OlsBootstrap, "a1[0-19]", 400).unwrap().cp;
    let asym = tab.row(HarnessEstimator::OlsNominal, "a1[0-19]", 400).unwrap().cp;
    let pass = (0.92..=0.975).contains(&boot) && asym <= 0.91;
    report(8, pass, start, &format!("a-group bootstrap CP {boot:.3}, asymptotic CP {asym:.3}"));
}

#[test]
fn criterion_9_property_suites() {
    let start = Instant::now();
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let n = 12;
    let w = banded_weights::<f64>(n, 2).unwrap();
    let spec = NarSpec::<f64>::homogeneous(&[0.3, 0.1], &[0.2, 0.1], &[0.5, -0.3], w.clone()).unwrap();
    let model = ErrorModel::SarGaussian { rho: 0.4, phi: w.clone(), sigma_u2: 1.0 };
    let sim = simulate(&spec, &model, &SimConfig::new(300, 9)).unwrap();
    let beta = spec.flatten().into_values();

    // design replay: X_t - Z_{t-1} beta reproduces the errors
    let mut replay = 0.0f64;
    for t in 2..sim.x.nrows() {
        let hist: Vec<DVector<f64>> = (1..=2).map(|l| sim.x.row(t - l).transpose()).collect();
        let y_prev = DMatrix::from_fn(n, 2, |i, k| sim.y[k][(t - 1, i)]);
        let z = build_design(&hist, &y_prev, &w).unwrap().z;
        let e = sim.x.row(t).transpose() - &z * &beta;
        replay = replay.max((e - sim.errors.row(t).transpose()).amax());
    }
    checks.push(("design replay", replay < 1e-12 * sim.x.amax().max(1.0)));

    // residual orthogonality
    let panel: Panel<f64> = sim.panel();
    let ols = fit_ols(&panel, &w, 2, 2).unwrap();
    let mut score = DVector::zeros(beta.len());
    let mut scale = 0.0f64;
    for (r, t) in (2..sim.x.nrows()).enumerate() {
        let hist: Vec<DVector<f64>> = (1..=2).map(|l| sim.x.row(t - l).transpose()).collect();
        let y_prev = DMatrix::from_fn(n, 2, |i, k| sim.y[k][(t - 1, i)]);
        let z = build_design(&hist, &y_prev, &w).unwrap().z;
        score += z.tr_mul(&ols.residuals.row(r).transpose());
        scale = scale.max(z.amax() * sim.x.row(t).amax());
    }
    checks.push(("residual orthogonality", score.amax() < 1e-8 * scale * sim.x.nrows() as f64));

    // S(k) monotone
    let ff = fit_factor(&ols.residuals, 3).unwrap();
    checks.push(("S(k) monotone", ff.s_of_k.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12))));

    // Woodbury inverse
    let lam = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
    let fc = FactorCovariance::new(lam, 0.7).unwrap();
    let v = DVector::from_fn(n, |i, _| (i as f64 - 4.0) / 3.0);
    let back = fc.apply_inverse(&(fc.matrix() * &v));
    checks.push(("Woodbury identity", (back - &v).amax() < 1e-9));

    // determinism across thread counts
    let mut s = table2_scenario(8, 6, vec![60]);
    s.gamma = vec![0.5];
    s.w_band = 1;
    s.estimators = vec![HarnessEstimator::Ols, HarnessEstimator::EglsSar, HarnessEstimator::OlsBootstrap];
    s.bootstrap_reps = 100;
    let t1 = run_scenario(&s, Some(1)).unwrap();
    let t3 = run_scenario(&s, Some(3)).unwrap();
    checks.push(("seed determinism", t1 == t3));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    let pass = failed.is_empty() && start.elapsed().as_secs_f64() < 120.0;
    report(9, pass, start, &format!("checked {}; failed: {:?}", names.join(", "), failed));
}
