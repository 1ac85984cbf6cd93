use std::io::Write;

use nalgebra::DMatrix;
use netar::covariance::SAR_BOUNDS;
use netar::estimation::{confidence_intervals, fit, CovKind, Estimator, FitOptions, FitResult, RidgePenalty, SigmaUsed};
use netar::geo::build_geo_weights;
use netar::harness::{run_misspec_experiment, run_scenario, write_misspec_csv, Scenario};
use netar::inference::{forecast_path, residual_bootstrap, select_q_bic, BootstrapConfig, BootstrapEstimator};
use netar::model::{is_stable, sufficient_condition, write_matrix_csv, CoefKind};
use netar::panel_io::PanelDataset;
use netar::simulation::{simulate, ErrorModel, SimConfig};
use netar::NarError;
use serde_json::{json, Value};

use crate::args::*;
use crate::io::{load_panel, load_spec, output, read_matrix, write_json};
use crate::CliError;

/// Validated configuration echoed to stderr before the command runs.
fn echo(cli: &Cli) -> Result<(), CliError> {
    eprintln!("{}", serde_json::to_string(&json!({ "effective_config": cli }))?);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    validate(cli)?;
    echo(cli)?;
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(g, a),
        Command::Stability(a) => stability_cmd(g, a),
        Command::Fit(a) => fit_cmd(g, a),
        Command::Forecast(a) => forecast_cmd(g, a),
        Command::Select(a) => select_cmd(g, a),
        Command::Bootstrap(a) => bootstrap_cmd(g, a),
        Command::Replicate(a) => replicate_cmd(g, a),
        Command::GeoWeights(a) => geo_cmd(g, a),
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn validate(cli: &Cli) -> Result<(), CliError> {
    if cli.global.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let level_ok = |l: f64| l > 0.0 && l < 1.0;
    match &cli.command {
        Command::Fit(a) => {
            if !level_ok(a.level) {
                return Err(usage("--level must lie in (0, 1)"));
            }
            validate_model(&a.model)
        }
        Command::Forecast(a) => validate_model(&a.model),
        Command::Bootstrap(a) if !level_ok(a.level) => Err(usage("--level must lie in (0, 1)")),
        Command::Simulate(a) if a.t_len == 0 => Err(usage("--t-len must be positive")),
        _ => Ok(()),
    }
}

fn validate_model(m: &ModelArgs) -> Result<(), CliError> {
    let gls = matches!(m.estimator, EstimatorArg::Gls | EstimatorArg::RidgeGls);
    if gls && m.sigma.is_none() {
        return Err(usage("gls estimators need --sigma"));
    }
    if !gls && m.sigma.is_some() {
        return Err(usage("--sigma only applies to gls estimators"));
    }
    if m.q1 == 0 && m.q2 == 0 {
        return Err(usage("at least one of --q1, --q2 must be positive"));
    }
    Ok(())
}

fn with_threads<R: Send>(g: &GlobalOpts, job: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match g.threads {
        None => Ok(job()),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|p| p.install(job))
            .map_err(|e| usage(format!("thread pool: {e}"))),
    }
}

fn simulate_cmd(g: &GlobalOpts, a: &SimulateArgs) -> Result<(), CliError> {
    let spec = load_spec(&a.spec)?;
    let n = spec.n_nodes();
    let phi = match &a.phi {
        Some(p) => read_matrix(p)?,
        None => spec.weights().clone(),
    };
    let model = match a.error {
        ErrorKind::Iid => ErrorModel::GaussianIid { sigma2: a.sigma2 },
        ErrorKind::Sar => ErrorModel::SarGaussian { rho: a.rho, phi, sigma_u2: a.sigma2 },
        ErrorKind::StudentT => ErrorModel::StudentT {
            nu: a.nu,
            scale: ErrorModel::SarGaussian { rho: a.rho, phi, sigma_u2: a.sigma2 }.covariance(n)?,
        },
    };
    let cfg = SimConfig { burn_in: a.burn_in, ..SimConfig::new(a.t_len, g.seed) };
    let sim = simulate(&spec, &model, &cfg)?;
    let mut wtr = csv::Writer::from_writer(output(&g.out)?);
    let mut header = vec!["t".to_string(), "node".into(), "value".into()];
    header.extend((1..=sim.y.len()).map(|k| format!("y{k}")));
    wtr.write_record(&header)?;
    for t in 0..a.t_len {
        for i in 0..n {
            let mut rec = vec![t.to_string(), i.to_string(), format!("{}", sim.x[(t, i)])];
            rec.extend(sim.y.iter().map(|m| format!("{}", m[(t, i)])));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn stability_cmd(g: &GlobalOpts, a: &StabilityArgs) -> Result<(), CliError> {
    let spec = load_spec(&a.spec)?;
    let st = is_stable(&spec, 0.0)?;
    let suff = sufficient_condition(&spec);
    match g.format {
        Format::Json => write_json(
            &g.out,
            &json!({ "radius": st.radius, "stable": st.stable, "sufficient_condition": suff }),
        ),
        Format::Csv => {
            let mut w = output(&g.out)?;
            writeln!(w, "radius,stable,sufficient_condition\n{},{},{}", st.radius, st.stable, suff)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn estimator(m: &ModelArgs, w: &DMatrix<f64>, t_len: usize) -> Result<Estimator<f64>, CliError> {
    let pen = match m.lambda {
        Some(l) => RidgePenalty::uniform(l)?,
        None => RidgePenalty::default_for(t_len),
    };
    let sigma = || -> Result<DMatrix<f64>, CliError> {
        read_matrix(m.sigma.as_ref().expect("validated"))
    };
    Ok(match m.estimator {
        EstimatorArg::Ols => Estimator::Ols,
        EstimatorArg::RidgeOls => Estimator::RidgeOls(pen),
        EstimatorArg::Gls => Estimator::Gls(sigma()?),
        EstimatorArg::RidgeGls => Estimator::RidgeGls(sigma()?, pen),
        EstimatorArg::Egls => Estimator::Egls {
            cov: match m.cov {
                CovArg::Sar => CovKind::Sar {
                    phi: match &m.phi {
                        Some(p) => read_matrix(p)?,
                        None => w.clone(),
                    },
                },
                CovArg::Factor => CovKind::Factor { kmax: m.kmax },
            },
            penalty: m.lambda.map(RidgePenalty::uniform).transpose()?,
            iterate: m.iterate,
        },
    })
}

fn sigma_json(s: &SigmaUsed<f64>) -> Value {
    match s {
        SigmaUsed::Identity => json!("identity"),
        SigmaUsed::PlugIn(_) => json!("plug_in"),
        SigmaUsed::Sar(f) => json!({ "sar": {
            "rho_hat": f.rho_hat,
            "sigma_u2": f.sigma_u2_hat,
            "loglik": f.loglik,
            "at_boundary": f.at_boundary,
            "bounds": [SAR_BOUNDS.0, SAR_BOUNDS.1],
        }}),
        SigmaUsed::Factor(f) => json!({ "factor": { "k": f.k, "sigma2": f.sigma2_hat } }),
    }
}

fn coef_fields(kind: CoefKind) -> (&'static str, usize) {
    match kind {
        CoefKind::A { lag } => ("a", lag),
        CoefKind::B { lag } => ("b", lag),
        CoefKind::Gamma { covariate } => ("gamma", covariate + 1),
    }
}

fn fit_json(data: &PanelDataset, res: &FitResult<f64>, level: f64) -> Result<Value, CliError> {
    let layout = res.layout();
    let cis = confidence_intervals(res, level)?;
    let coefficients: Vec<Value> = cis
        .iter()
        .map(|c| {
            let (kind, lag) = coef_fields(c.kind);
            let mut v = json!({
                "node": data.node_ids[c.node],
                "kind": kind,
                "estimate": c.estimate,
                "se": c.se,
                "ci_lo": c.lo,
                "ci_hi": c.hi,
            });
            v[if kind == "gamma" { "covariate" } else { "lag" }] = json!(lag);
            v
        })
        .collect();
    let radius = res.stability().ok().map(|s| s.radius);
    let suff = res
        .beta_hat
        .to_spec(&res.weights)
        .map(|s| sufficient_condition(&s))
        .unwrap_or(false);
    Ok(json!({
        "estimator": res.estimator.as_str(),
        "q1": layout.q1,
        "q2": layout.q2,
        "level": level,
        "t_eff": res.t_eff,
        "coefficients": coefficients,
        "sigma_kind": sigma_json(&res.sigma_used),
        "diagnostics": { "radius": radius, "sufficient_condition": suff, "egls_rounds": res.egls_rounds },
    }))
}

fn fit_cmd(g: &GlobalOpts, a: &FitArgs) -> Result<(), CliError> {
    let (data, w) = load_panel(&a.data)?;
    let est = estimator(&a.model, &w, data.panel.len())?;
    let res = fit(&data.panel, &w, a.model.q1, a.model.q2, &est, &FitOptions::default())?;
    let out = fit_json(&data, &res, a.level)?;
    match g.format {
        Format::Json => write_json(&g.out, &out),
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(output(&g.out)?);
            wtr.write_record(["node", "kind", "lag", "estimate", "se", "ci_lo", "ci_hi"])?;
            for c in out["coefficients"].as_array().expect("array") {
                let lag = c.get("lag").or_else(|| c.get("covariate")).expect("index");
                let f = |k: &str| c[k].to_string().trim_matches('"').to_string();
                wtr.write_record([f("node"), f("kind"), lag.to_string(), f("estimate"), f("se"), f("ci_lo"), f("ci_hi")])?;
            }
            wtr.flush()?;
            Ok(())
        }
    }
}

fn forecast_cmd(g: &GlobalOpts, a: &ForecastArgs) -> Result<(), CliError> {
    let (data, w) = load_panel(&a.data)?;
    let t_len = data.panel.len();
    let train = a.train.unwrap_or(t_len);
    if train == 0 || train > t_len {
        return Err(usage(format!("--train must lie in 1..={t_len}")));
    }
    let est = estimator(&a.model, &w, train)?;
    let fitted = fit(
        &data.panel.window(0, train)?,
        &w,
        a.model.q1,
        a.model.q2,
        &est,
        &FitOptions { inference: false, ols_meat_sigma: None },
    )?;
    let mut wtr = csv::Writer::from_writer(output(&g.out)?);
    if train == t_len {
        // forecast the period after the panel; covariates at the last period are observed
        let q = fitted.layout().q();
        let history: Vec<_> = (1..=q).map(|l| data.panel.x_at(t_len - l)).collect();
        let f = netar::inference::forecast_one_step(&fitted, &history, &data.panel.y_at(t_len - 1))?;
        wtr.write_record(["node", "forecast"])?;
        for (i, id) in data.node_ids.iter().enumerate() {
            wtr.write_record([id.clone(), format!("{}", f[i])])?;
        }
    } else {
        let f = forecast_path(&fitted, &data.panel, train..t_len)?;
        let pmse = netar::inference::pmse(&fitted, &data.panel, train..t_len)?;
        eprintln!("{}", json!({ "pmse": pmse, "test_periods": t_len - train }));
        wtr.write_record(["t", "node", "forecast", "actual", "error"])?;
        for (r, t) in (train..t_len).enumerate() {
            for (i, id) in data.node_ids.iter().enumerate() {
                let actual = data.panel.x[(t, i)];
                wtr.write_record([
                    data.times[t].clone(),
                    id.clone(),
                    format!("{}", f[(r, i)]),
                    format!("{actual}"),
                    format!("{}", actual - f[(r, i)]),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn select_cmd(g: &GlobalOpts, a: &SelectArgs) -> Result<(), CliError> {
    let (data, w) = load_panel(&a.data)?;
    let sel = select_q_bic(&data.panel, &w, a.qmax)?;
    match g.format {
        Format::Json => write_json(&g.out, &sel),
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(output(&g.out)?);
            wtr.write_record(["q", "bic", "regularized", "selected"])?;
            for (k, (b, r)) in sel.bic_values.iter().zip(&sel.regularized).enumerate() {
                let q = k + 1;
                wtr.write_record([q.to_string(), b.to_string(), r.to_string(), (q == sel.q_hat).to_string()])?;
            }
            wtr.flush()?;
            Ok(())
        }
    }
}

fn bootstrap_cmd(g: &GlobalOpts, a: &BootstrapArgs) -> Result<(), CliError> {
    let (data, w) = load_panel(&a.data)?;
    let est = match a.estimator {
        BootEstimatorArg::Ols => BootstrapEstimator::Ols,
        BootEstimatorArg::EglsSar => BootstrapEstimator::EglsSar {
            phi: match &a.phi {
                Some(p) => read_matrix(p)?,
                None => w.clone(),
            },
        },
    };
    let cfg = BootstrapConfig { b_reps: a.reps, level: a.level, seed: g.seed };
    let res = with_threads(g, || residual_bootstrap(&data.panel, &w, a.q1, a.q2, &est, &cfg))??;
    let rows: Vec<Value> = res
        .percentile_cis
        .iter()
        .map(|c| {
            let (kind, lag) = coef_fields(c.kind);
            json!({ "node": data.node_ids[c.node], "kind": kind, "index": lag,
                    "estimate": c.estimate, "ci_lo": c.lo, "ci_hi": c.hi })
        })
        .collect();
    match g.format {
        Format::Json => write_json(
            &g.out,
            &json!({ "b_reps": res.b_reps, "dropped": res.dropped, "level": a.level, "intervals": rows }),
        ),
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(output(&g.out)?);
            wtr.write_record(["node", "kind", "index", "estimate", "ci_lo", "ci_hi"])?;
            for c in &res.percentile_cis {
                let (kind, lag) = coef_fields(c.kind);
                wtr.write_record([
                    data.node_ids[c.node].clone(),
                    kind.to_string(),
                    lag.to_string(),
                    c.estimate.to_string(),
                    c.lo.to_string(),
                    c.hi.to_string(),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        }
    }
}

fn replicate_cmd(g: &GlobalOpts, a: &ReplicateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.scenario)
        .map_err(|e| NarError::Data(format!("{}: {e}", a.scenario.display())))?;
    let s = Scenario::from_json(&text)?;
    if let Some(m) = &s.misspec {
        let rows = run_misspec_experiment(&s, &m.rates, &s.t_grid, g.threads)?;
        return match g.format {
            Format::Csv => Ok(write_misspec_csv(output(&g.out)?, &rows)?),
            Format::Json => write_json(&g.out, &rows),
        };
    }
    let tab = run_scenario(&s, g.threads)?;
    match g.format {
        Format::Csv => Ok(tab.write_csv(output(&g.out)?)?),
        Format::Json => write_json(&g.out, &tab),
    }
}

fn geo_cmd(g: &GlobalOpts, a: &GeoArgs) -> Result<(), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&a.coords)
        .map_err(|e| NarError::Data(format!("{}: {e}", a.coords.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NarError::Data(format!("coordinates file lacks column '{name}'")))
    };
    let (ci, la, lo) = (col("node")?, col("lat")?, col("lon")?);
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, NarError> {
            rec[k].parse().map_err(|_| NarError::Data(format!("cannot parse coordinate '{}'", &rec[k])))
        };
        ids.push(rec[ci].to_string());
        coords.push((num(la)?, num(lo)?));
    }
    let gw = build_geo_weights(&coords, a.cutoff_km)?;
    match g.format {
        Format::Json => {
            let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
                m.row_iter().map(|r| r.iter().copied().collect()).collect()
            };
            write_json(
                &g.out,
                &json!({ "node_ids": ids, "cutoff_km": gw.cutoff_km, "w": rows(&gw.w), "phi": rows(&gw.phi) }),
            )
        }
        Format::Csv => {
            let mut w = output(&g.out)?;
            write_matrix_csv(&mut w, &gw.w)?;
            w.flush()?;
            if let Some(p) = &a.phi_out {
                let mut f = output(&Some(p.clone()))?;
                write_matrix_csv(&mut f, &gw.phi)?;
                f.flush()?;
            }
            Ok(())
        }
    }
}
