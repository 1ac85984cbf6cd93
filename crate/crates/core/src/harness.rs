//! Monte-Carlo scenario runner: grouped RMSE, interval length and coverage
//! tables, and weight-misspecification rate experiments.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Uniform;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::estimation::{
    confidence_intervals, fit, CovKind, Estimator, FitOptions, RidgePenalty,
};
use crate::inference::{residual_bootstrap, BootstrapConfig, BootstrapEstimator};
use crate::model::{banded_weights, CoefLayout, NarSpec};
use crate::rng::{replicate_stream, rng_for, NarRng};
use crate::simulation::{perturb_weights_with, simulate_with, CovariateMode, ErrorModel, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Error law of a scenario. `phi` comes from the scenario's `phi_band`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorSpec {
    Iid {
        sigma2: f64,
    },
    Sar {
        rho: f64,
        #[serde(default = "one")]
        sigma_u2: f64,
    },
    /// Loadings `U(0, 1)`, drawn once per scenario from a dedicated stream.
    Factor {
        k: usize,
        sigma2: f64,
    },
    /// Multivariate t whose scale matrix is the SAR covariance.
    StudentT {
        nu: f64,
        #[serde(default)]
        rho: f64,
        #[serde(default = "one")]
        sigma_u2: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessEstimator {
    /// OLS with the residual-covariance sandwich.
    Ols,
    /// OLS with the sandwich evaluated at the data-generating `Sigma`
    /// (the scale matrix for Student-t errors).
    OlsNominal,
    /// Ridge OLS with `lambda = T^-0.6`.
    RidgeOls,
    /// GLS with the data-generating `Sigma`.
    Gls,
    EglsSar,
    EglsFactor,
    OlsBootstrap,
    EglsBootstrap,
}

impl HarnessEstimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            HarnessEstimator::Ols => "ols",
            HarnessEstimator::OlsNominal => "ols_nominal",
            HarnessEstimator::RidgeOls => "ridge_ols",
            HarnessEstimator::Gls => "gls",
            HarnessEstimator::EglsSar => "egls_sar",
            HarnessEstimator::EglsFactor => "egls_factor",
            HarnessEstimator::OlsBootstrap => "ols_bootstrap",
            HarnessEstimator::EglsBootstrap => "egls_bootstrap",
        }
    }
}

/// `||pi_T||_inf` as a function of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisspecRate {
    /// `T^-exponent`.
    Power(f64),
    Zero,
}

impl MisspecRate {
    pub fn norm_at(&self, t: usize) -> f64 {
        match self {
            MisspecRate::Power(e) => (t as f64).powf(-e),
            MisspecRate::Zero => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MisspecRate::Power(e) => format!("T^-{e}"),
            MisspecRate::Zero => "zero".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisspecSpec {
    pub rates: Vec<MisspecRate>,
    #[serde(default)]
    pub preserve_row_sums: bool,
    /// `ols` or `gls`.
    #[serde(default = "default_misspec_estimator")]
    pub estimator: HarnessEstimator,
}

fn default_misspec_estimator() -> HarnessEstimator {
    HarnessEstimator::Ols
}

/// Serializable Monte-Carlo experiment.
///
/// Coefficient patterns: `a[l]` and `b[l]` list values spread over equal
/// consecutive node blocks (`[0.1, 0.2]` on 10 nodes gives five of each);
/// `gamma[k]` is the coefficient of covariate `k`, shared by all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    pub n: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    pub w_band: usize,
    #[serde(default)]
    pub phi_band: Option<usize>,
    pub error: ErrorSpec,
    #[serde(default)]
    pub y_mode: CovariateMode,
    pub t_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub estimators: Vec<HarnessEstimator>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub kmax: Option<usize>,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
    #[serde(default)]
    pub misspec: Option<MisspecSpec>,
}

fn default_burn_in() -> usize {
    200
}
fn default_level() -> f64 {
    0.95
}
fn default_bootstrap_reps() -> usize {
    500
}

/// Coefficients summarized together.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub indices: Vec<usize>,
    pub true_value: f64,
}

fn spread(pattern: &[f64], n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| pattern[i * pattern.len() / n])
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NarError::InvalidParameter(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported scenario schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if self.a.is_empty() && self.b.is_empty() {
            return bad("at least one lag is required".into());
        }
        for (name, lags) in [("a", &self.a), ("b", &self.b)] {
            for pat in lags {
                if pat.is_empty() || pat.len() > self.n {
                    return bad(format!("{name} patterns need between 1 and n values"));
                }
            }
        }
        if self.t_grid.is_empty() || self.reps == 0 {
            return bad("t_grid and reps must be non-empty".into());
        }
        if self.estimators.is_empty() && self.misspec.is_none() {
            return bad("no estimators requested".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)".into());
        }
        self.true_spec()?;
        self.error_model()?.validate()
    }

    pub fn layout(&self) -> Result<CoefLayout> {
        CoefLayout::new(self.n, self.a.len(), self.b.len(), self.gamma.len())
    }

    pub fn weights(&self) -> Result<DMatrix<f64>> {
        banded_weights(self.n, self.w_band)
    }

    pub fn phi(&self) -> Result<DMatrix<f64>> {
        banded_weights(self.n, self.phi_band.unwrap_or(self.w_band))
    }

    pub fn true_spec(&self) -> Result<NarSpec<f64>> {
        NarSpec::new(
            self.a.iter().map(|p| spread(p, self.n)).collect(),
            self.b.iter().map(|p| spread(p, self.n)).collect(),
            DMatrix::from_fn(self.n, self.gamma.len(), |_, k| self.gamma[k]),
            self.weights()?,
        )
    }

    pub fn error_model(&self) -> Result<ErrorModel<f64>> {
        Ok(match self.error {
            ErrorSpec::Iid { sigma2 } => ErrorModel::GaussianIid { sigma2 },
            ErrorSpec::Sar { rho, sigma_u2 } => ErrorModel::SarGaussian {
                rho,
                phi: self.phi()?,
                sigma_u2,
            },
            ErrorSpec::Factor { k, sigma2 } => {
                let mut rng = rng_for(self.seed, u64::MAX);
                let unif = Uniform::new(0.0, 1.0).expect("valid bounds");
                ErrorModel::FactorGaussian {
                    lambda: DMatrix::from_fn(self.n, k, |_, _| rng.sample(unif)),
                    sigma2,
                }
            }
            ErrorSpec::StudentT { nu, rho, sigma_u2 } => {
                let scale = ErrorModel::SarGaussian {
                    rho,
                    phi: self.phi()?,
                    sigma_u2,
                }
                .covariance(self.n)?;
                ErrorModel::StudentT { nu, scale }
            }
        })
    }

    /// Runs of equal true values: per lag over nodes for `a` and `b`, over
    /// covariates (all nodes) for `gamma`.
    pub fn groups(&self) -> Result<Vec<Group>> {
        let layout = self.layout()?;
        let n = self.n;
        let mut out = Vec::new();
        let mut runs = |name: String, values: &[f64], index: &dyn Fn(usize) -> Vec<usize>| {
            let mut start = 0;
            while start < values.len() {
                let mut end = start + 1;
                while end < values.len() && values[end] == values[start] {
                    end += 1;
                }
                out.push(Group {
                    label: format!("{name}[{}-{}]", start, end - 1),
                    indices: (start..end).flat_map(index).collect(),
                    true_value: values[start],
                });
                start = end;
            }
        };
        for (l, pat) in self.a.iter().enumerate() {
            let v = spread(pat, n);
            runs(format!("a{}", l + 1), v.as_slice(), &|i| vec![layout.index_a(l + 1, i)]);
        }
        for (l, pat) in self.b.iter().enumerate() {
            let v = spread(pat, n);
            runs(format!("b{}", l + 1), v.as_slice(), &|i| vec![layout.index_b(l + 1, i)]);
        }
        runs("gamma".into(), &self.gamma, &|k| {
            (0..n).map(|i| layout.index_gamma(k, i)).collect()
        });
        Ok(out)
    }
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub estimator: HarnessEstimator,
    pub group: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "true")]
    pub true_value: f64,
    /// Mean over replicates and group members.
    pub mean_est: f64,
    /// Mean over replicates of `||est - true||_F / ||true||_F` on the group
    /// (absolute norm when the truth is zero).
    pub rmse: f64,
    pub ci_len: f64,
    pub cp: f64,
    pub n_ok: usize,
    /// Replicate standard deviation of the group-mean estimate.
    pub sd_group_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub scenario_id: String,
    pub reps: usize,
    pub rows: Vec<MetricsRow>,
    /// `(T, replicate, estimator, message)` of every failed fit.
    pub failures: Vec<(usize, usize, String, String)>,
}

impl MetricsTable {
    pub fn row(&self, estimator: HarnessEstimator, group: &str, t: usize) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.group == group && r.t == t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "scenario_id", "estimator", "group", "T", "true", "mean_est", "rmse", "ci_len", "cp", "n_ok",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                r.scenario_id.clone(),
                r.estimator.as_str().to_string(),
                r.group.clone(),
                r.t.to_string(),
                r.true_value.to_string(),
                r.mean_est.to_string(),
                r.rmse.to_string(),
                r.ci_len.to_string(),
                r.cp.to_string(),
                r.n_ok.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Point estimates and intervals over the full coefficient layout.
struct Estimates {
    beta: DVector<f64>,
    ci: Vec<(f64, f64)>,
}

struct Context<'a> {
    w: &'a DMatrix<f64>,
    phi: &'a DMatrix<f64>,
    nominal: &'a DMatrix<f64>,
    q1: usize,
    q2: usize,
    level: f64,
    kmax: Option<usize>,
    bootstrap_reps: usize,
}

fn with_intervals(fit_res: &crate::estimation::FitResult<f64>, level: f64) -> Result<Estimates> {
    let layout = fit_res.layout();
    let mut ci = vec![(0.0, 0.0); layout.len()];
    for c in confidence_intervals(fit_res, level)? {
        ci[c.index] = (c.lo, c.hi);
    }
    Ok(Estimates {
        beta: fit_res.beta_hat.values().clone(),
        ci,
    })
}

fn estimate(
    est: HarnessEstimator,
    panel: &Panel<f64>,
    w: &DMatrix<f64>,
    ctx: &Context<'_>,
    boot_seed: u64,
) -> Result<Estimates> {
    let (q1, q2) = (ctx.q1, ctx.q2);
    let run = |e: Estimator<f64>, opts: FitOptions<f64>| -> Result<Estimates> {
        with_intervals(&fit(panel, w, q1, q2, &e, &opts)?, ctx.level)
    };
    let bootstrap = |b: BootstrapEstimator<f64>| -> Result<Estimates> {
        let cfg = BootstrapConfig {
            b_reps: ctx.bootstrap_reps,
            level: ctx.level,
            seed: boot_seed,
        };
        let res = residual_bootstrap(panel, w, q1, q2, &b, &cfg)?;
        let mut ci = vec![(0.0, 0.0); res.layout.len()];
        for c in &res.percentile_cis {
            ci[c.index] = (c.lo, c.hi);
        }
        Ok(Estimates {
            beta: res.beta_hat,
            ci,
        })
    };
    match est {
        HarnessEstimator::Ols => run(Estimator::Ols, FitOptions::default()),
        HarnessEstimator::OlsNominal => run(
            Estimator::Ols,
            FitOptions {
                inference: true,
                ols_meat_sigma: Some(ctx.nominal.clone()),
            },
        ),
        HarnessEstimator::RidgeOls => run(
            Estimator::RidgeOls(RidgePenalty::default_for(panel.len())),
            FitOptions::default(),
        ),
        HarnessEstimator::Gls => run(Estimator::Gls(ctx.nominal.clone()), FitOptions::default()),
        HarnessEstimator::EglsSar => run(
            Estimator::Egls {
                cov: CovKind::Sar { phi: ctx.phi.clone() },
                penalty: None,
                iterate: false,
            },
            FitOptions::default(),
        ),
        HarnessEstimator::EglsFactor => run(
            Estimator::Egls {
                cov: CovKind::Factor { kmax: ctx.kmax },
                penalty: None,
                iterate: false,
            },
            FitOptions::default(),
        ),
        HarnessEstimator::OlsBootstrap => bootstrap(BootstrapEstimator::Ols),
        HarnessEstimator::EglsBootstrap => bootstrap(BootstrapEstimator::EglsSar { phi: ctx.phi.clone() }),
    }
}

/// Interval membership with slack for round-off in degenerate intervals.
fn covers(lo: f64, hi: f64, v: f64) -> bool {
    let tol = 1e-10 * v.abs().max(1.0);
    lo - tol <= v && v <= hi + tol
}

/// Per-group summaries of one replicate.
#[derive(Clone, Copy)]
struct GroupStat {
    mean_est: f64,
    rel_err: f64,
    ci_len: f64,
    covered: usize,
}

fn group_stats(groups: &[Group], truth: &DVector<f64>, e: &Estimates) -> Vec<GroupStat> {
    groups
        .iter()
        .map(|g| {
            let m = g.indices.len() as f64;
            let (mut err2, mut true2, mut sum, mut len) = (0.0, 0.0, 0.0, 0.0);
            let mut covered = 0;
            for &i in &g.indices {
                let (lo, hi) = e.ci[i];
                err2 += (e.beta[i] - truth[i]).powi(2);
                true2 += truth[i].powi(2);
                sum += e.beta[i];
                len += hi - lo;
                covered += usize::from(covers(lo, hi, truth[i]));
            }
            GroupStat {
                mean_est: sum / m,
                rel_err: if true2 > 0.0 { (err2 / true2).sqrt() } else { err2.sqrt() },
                ci_len: len / m,
                covered,
            }
        })
        .collect()
}

fn with_pool<R: Send>(threads: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| NarError::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn sim_config(s: &Scenario, t: usize) -> SimConfig {
    SimConfig {
        t_len: t,
        burn_in: s.burn_in,
        seed: s.seed,
        y_mode: s.y_mode,
        allow_unstable: false,
    }
}

type RepOutcome = (Option<Vec<Result<Vec<GroupStat>>>>, Option<String>);

/// Runs every `(T, replicate, estimator)` combination. Output is identical
/// for any `threads` value: each replicate owns its random stream and the
/// reduction runs in replicate order.
pub fn run_scenario(s: &Scenario, threads: Option<usize>) -> Result<MetricsTable> {
    s.validate()?;
    let spec = s.true_spec()?;
    let model = s.error_model()?;
    let w = s.weights()?;
    let phi = s.phi()?;
    let nominal = model.nominal_sigma(s.n)?;
    let groups = s.groups()?;
    let truth = spec.flatten().into_values();
    let ctx = Context {
        w: &w,
        phi: &phi,
        nominal: &nominal,
        q1: s.a.len(),
        q2: s.b.len(),
        level: s.level,
        kmax: s.kmax,
        bootstrap_reps: s.bootstrap_reps,
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (t_idx, &t) in s.t_grid.iter().enumerate() {
        let outcomes: Vec<RepOutcome> = with_pool(threads, || {
            (0..s.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = rng_for(s.seed, replicate_stream(t_idx, rep));
                    let sim = match simulate_with(&spec, &model, &sim_config(s, t), &mut rng) {
                        Ok(sim) => sim,
                        Err(e) => return (None, Some(e.to_string())),
                    };
                    let panel = sim.panel();
                    let boot_seed: u64 = rng.random();
                    let per_est = s
                        .estimators
                        .iter()
                        .map(|&e| {
                            estimate(e, &panel, ctx.w, &ctx, boot_seed)
                                .map(|est| group_stats(&groups, &truth, &est))
                        })
                        .collect();
                    (Some(per_est), None)
                })
                .collect()
        })?;

        for (k, &est) in s.estimators.iter().enumerate() {
            let mut ok: Vec<&Vec<GroupStat>> = Vec::new();
            for (rep, (per_est, sim_err)) in outcomes.iter().enumerate() {
                match (per_est, sim_err) {
                    (Some(v), _) => match &v[k] {
                        Ok(stats) => ok.push(stats),
                        Err(e) => failures.push((t, rep, est.as_str().to_string(), e.to_string())),
                    },
                    (None, Some(e)) => failures.push((t, rep, "simulate".into(), e.clone())),
                    (None, None) => unreachable!(),
                }
            }
            let n_ok = ok.len();
            for (g_idx, g) in groups.iter().enumerate() {
                let col: Vec<GroupStat> = ok.iter().map(|v| v[g_idx]).collect();
                let reps = n_ok as f64;
                let mean = |f: &dyn Fn(&GroupStat) -> f64| col.iter().map(f).sum::<f64>() / reps;
                let mean_est = mean(&|x| x.mean_est);
                let var = if n_ok > 1 {
                    col.iter().map(|x| (x.mean_est - mean_est).powi(2)).sum::<f64>() / (reps - 1.0)
                } else {
                    0.0
                };
                rows.push(MetricsRow {
                    scenario_id: s.id.clone(),
                    estimator: est,
                    group: g.label.clone(),
                    t,
                    true_value: g.true_value,
                    mean_est,
                    rmse: mean(&|x| x.rel_err),
                    ci_len: mean(&|x| x.ci_len),
                    cp: col.iter().map(|x| x.covered).sum::<usize>() as f64
                        / (reps * g.indices.len() as f64),
                    n_ok,
                    sd_group_mean: var.sqrt(),
                });
            }
        }
    }
    failures.dedup();
    for f in &failures {
        log::warn!("T={} rep={} {}: {}", f.0, f.1, f.2, f.3);
    }
    Ok(MetricsTable {
        scenario_id: s.id.clone(),
        reps: s.reps,
        rows,
        failures,
    })
}

/// One point of a misspecification curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisspecRow {
    pub rate: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub target_norm: f64,
    /// `true_w` or `misspec_w`.
    pub fit: String,
    /// Mean over replicates of `||beta_hat - beta||_F`.
    pub err_norm: f64,
    /// Coverage over all free coefficients and replicates.
    pub cp: f64,
    pub n_ok: usize,
}

pub fn write_misspec_csv<W: Write>(writer: W, rows: &[MisspecRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Fits every replicate with the true `W` and with `W + pi_T`, where
/// `||pi_T||_inf` follows each rate. `pi_T` is redrawn per replicate.
pub fn run_misspec_experiment(
    s: &Scenario,
    rates: &[MisspecRate],
    t_grid: &[usize],
    threads: Option<usize>,
) -> Result<Vec<MisspecRow>> {
    s.validate()?;
    let cfg = s.misspec.clone().unwrap_or(MisspecSpec {
        rates: rates.to_vec(),
        preserve_row_sums: false,
        estimator: HarnessEstimator::Ols,
    });
    if !matches!(cfg.estimator, HarnessEstimator::Ols | HarnessEstimator::Gls) {
        return Err(NarError::InvalidParameter(
            "misspecification experiments support ols and gls".into(),
        ));
    }
    let spec = s.true_spec()?;
    let model = s.error_model()?;
    let w = s.weights()?;
    let phi = s.phi()?;
    let nominal = model.nominal_sigma(s.n)?;
    let truth = spec.flatten().into_values();
    let free = spec.layout().free_indices();
    let ctx = Context {
        w: &w,
        phi: &phi,
        nominal: &nominal,
        q1: s.a.len(),
        q2: s.b.len(),
        level: s.level,
        kmax: s.kmax,
        bootstrap_reps: s.bootstrap_reps,
    };
    let score = |e: &Estimates| -> (f64, usize) {
        let err = free.iter().map(|&i| (e.beta[i] - truth[i]).powi(2)).sum::<f64>().sqrt();
        let cov = free
            .iter()
            .filter(|&&i| covers(e.ci[i].0, e.ci[i].1, truth[i]))
            .count();
        (err, cov)
    };

    let mut rows = Vec::new();
    for (r_idx, rate) in rates.iter().enumerate() {
        for (t_idx, &t) in t_grid.iter().enumerate() {
            let target = rate.norm_at(t);
            let point = r_idx * t_grid.len() + t_idx;
            type Pair = (Option<(f64, usize)>, Option<(f64, usize)>);
            let outcomes: Vec<Pair> = with_pool(threads, || {
                (0..s.reps)
                    .into_par_iter()
                    .map(|rep| {
                        let mut rng: NarRng = rng_for(s.seed, replicate_stream(point, rep));
                        let Ok(sim) = simulate_with(&spec, &model, &sim_config(s, t), &mut rng) else {
                            return (None, None);
                        };
                        let panel = sim.panel();
                        let Ok((w_m, _)) =
                            perturb_weights_with(&w, target, cfg.preserve_row_sums, &mut rng)
                        else {
                            return (None, None);
                        };
                        let fit_with = |wm: &DMatrix<f64>| {
                            estimate(cfg.estimator, &panel, wm, &ctx, 0).ok().map(|e| score(&e))
                        };
                        (fit_with(&w), fit_with(&w_m))
                    })
                    .collect()
            })?;
            for (label, pick) in [("true_w", 0usize), ("misspec_w", 1)] {
                let ok: Vec<(f64, usize)> = outcomes
                    .iter()
                    .filter_map(|o| if pick == 0 { o.0 } else { o.1 })
                    .collect();
                let n_ok = ok.len();
                rows.push(MisspecRow {
                    rate: rate.label(),
                    t,
                    target_norm: target,
                    fit: label.into(),
                    err_norm: ok.iter().map(|x| x.0).sum::<f64>() / n_ok as f64,
                    cp: ok.iter().map(|x| x.1).sum::<usize>() as f64 / (n_ok * free.len()) as f64,
                    n_ok,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario::from_json(
            r#"{
            "schema_version": 1, "id": "small", "n": 8,
            "a": [[0.1, 0.3]], "b": [[0.2]], "gamma": [0.5, 0.5, -0.5],
            "w_band": 1, "error": {"kind": "sar", "rho": 0.3},
            "t_grid": [60], "reps": 4, "seed": 11,
            "estimators": ["ols", "egls_sar"]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn groups_follow_runs_of_equal_values() {
        let s = small();
        let g = s.groups().unwrap();
        let labels: Vec<_> = g.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, vec!["a1[0-3]", "a1[4-7]", "b1[0-7]", "gamma[0-1]", "gamma[2-2]"]);
        assert_eq!(g[1].true_value, 0.3);
        assert_eq!(g[3].indices.len(), 16);
    }

    #[test]
    fn unknown_fields_and_versions_rejected() {
        let mut s = small();
        s.schema_version = 2;
        assert!(s.validate().is_err());
        assert!(Scenario::from_json(r#"{"schema_version": 1, "bogus": 1}"#).is_err());
    }

    #[test]
    fn noiseless_single_replicate_is_exact() {
        let mut s = small();
        s.error = ErrorSpec::Iid { sigma2: 0.0 };
        s.reps = 1;
        s.estimators = vec![HarnessEstimator::Ols];
        let tab = run_scenario(&s, Some(1)).unwrap();
        for r in &tab.rows {
            assert!(r.rmse < 1e-9, "{r:?}");
            assert_eq!(r.cp, 1.0);
            assert_eq!(r.n_ok, 1);
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let tab = run_scenario(&small(), None).unwrap();
        let mut buf = Vec::new();
        tab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario_id,estimator,group,T,true,mean_est,rmse,ci_len,cp,n_ok\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 5);
    }
}
