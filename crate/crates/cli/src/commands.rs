//! One function per subcommand. Each writes its data files and returns the
//! JSON results plus the dim-convergence check of its headline number.


use kpo_core::qfi::write_scan_csv;
use kpo_core::transducer::deterministic_delta_star;
use kpo_core::*;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::{ConvergenceReport, OutputDir};

pub struct Outcome {
    pub results: Value,
    pub convergence: ConvergenceReport,
}

fn converge<F>(cfg: &RunConfig, observable: String, f: F) -> Result<ConvergenceReport>
where
    F: Fn(FockSpace) -> Result<f64>,
{
    let check = DimConvergence::check(cfg.fock_dim, cfg.convergence_tolerance, f)?;
    Ok(ConvergenceReport { observable, check })
}

fn steady_rho(cfg: &RunConfig, params: &SystemParams, space: FockSpace) -> Result<DensityMatrix> {
    steady_state(&build_liouvillian(params, space, &cfg.env(), cfg.monitored))
}

fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w - 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

fn error_text<T>(r: &Result<T>) -> Option<String> {
    r.as_ref().err().map(|e| e.to_string())
}

pub fn steady(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let deltas = cfg.deltas()?;
    let space = cfg.space();
    let rows = deltas
        .par_iter()
        .map(|&d| Ok(steady_rho(cfg, &cfg.params.with_delta(d), space)?.observables()))
        .collect::<Result<Vec<Observables>>>()?;
    out.write("steady.csv", |w| {
        writeln!(w, "delta,n_mean,x,p,phi")?;
        for (d, o) in deltas.iter().zip(&rows) {
            writeln!(w, "{d},{},{},{},{}", o.n_mean, o.x, o.p, o.phi)?;
        }
        Ok(())
    })?;

    let (i_max, n_max) =
        rows.iter().map(|o| o.n_mean).enumerate().fold((0, f64::MIN), |a, (i, n)| if n > a.1 { (i, n) } else { a });
    let jump = rows
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, wrap(w[1].phi - w[0].phi).abs()))
        .fold(None, |a: Option<(usize, f64)>, b| if a.is_none_or(|a| b.1 > a.1) { Some(b) } else { a });
    let d_max = deltas[i_max];
    let convergence = converge(cfg, format!("n_mean at delta = {d_max}"), |s| {
        Ok(steady_rho(cfg, &cfg.params.with_delta(d_max), s)?.mean_photon_number())
    })?;
    Ok(Outcome {
        results: json!({
            "points": deltas.len(),
            "n_max": n_max,
            "n_max_delta": d_max,
            "largest_phase_step": jump.map(|j| j.1),
            "largest_phase_step_delta": jump.map(|j| 0.5 * (deltas[j.0] + deltas[j.0 + 1])),
        }),
        convergence,
    })
}

pub fn gap(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let deltas = cfg.deltas()?;
    let thetas = cfg.thetas()?;
    let space = cfg.space();
    let env = cfg.env();
    let loss = cfg.params.gamma + if cfg.monitored { cfg.params.kappa } else { 0.0 };
    let points: Vec<(f64, f64)> = thetas.iter().flat_map(|&t| deltas.iter().map(move |&d| (t, d))).collect();
    let gap_at = |theta: f64, delta: f64, s: FockSpace| -> Result<f64> {
        let p = SystemParams { theta, delta, ..cfg.params };
        Ok(spectrum(&build_liouvillian(&p, s, &env, cfg.monitored), 2)?.gap)
    };
    let gaps = points.par_iter().map(|&(t, d)| gap_at(t, d, space)).collect::<Result<Vec<f64>>>()?;
    out.write("gap.csv", |w| {
        writeln!(w, "theta,delta,gap,gap_over_gamma")?;
        for ((t, d), g) in points.iter().zip(&gaps) {
            writeln!(w, "{t},{d},{g},{}", g / loss)?;
        }
        Ok(())
    })?;

    let per_theta: Vec<Value> = thetas
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let row = &gaps[k * deltas.len()..(k + 1) * deltas.len()];
            let (i, g) = row.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &g)| if g < a.1 { (i, g) } else { a });
            json!({ "theta": t, "min_gap": g, "min_gap_over_gamma": g / loss, "delta_at_min": deltas[i] })
        })
        .collect();
    let (i_min, g_min) = gaps.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &g)| if g < a.1 { (i, g) } else { a });
    let (t_min, d_min) = points[i_min];
    let convergence = converge(cfg, format!("gap at theta = {t_min}, delta = {d_min}"), |s| gap_at(t_min, d_min, s))?;
    Ok(Outcome {
        results: json!({
            "loss_rate": loss,
            "min_gap": g_min,
            "min_gap_theta": t_min,
            "min_gap_delta": d_min,
            "per_theta": per_theta,
        }),
        convergence,
    })
}

pub fn sweep(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let schedule = cfg.schedule()?;
    let options = cfg.sweep_options()?;
    let space = cfg.space();
    let env = cfg.env();
    let (lo, hi) = (cfg.protocol.fit_min, cfg.protocol.fit_max);
    let forward = integrate_sweep(&cfg.params, &schedule, None, space, &env, &options)?;
    out.write("sweep.csv", |w| forward.record.write_csv(w))?;
    let switch = extract_switch(&forward.record);
    let fit = fit_arctan(&forward.record, lo, hi);

    let mut results = json!({
        "direction": schedule.direction,
        "switch": switch.as_ref().ok(),
        "switch_error": error_text(&switch),
        "arctan_fit": fit.as_ref().ok(),
        "arctan_fit_error": error_text(&fit),
        "steps_accepted": forward.steps_accepted,
        "steps_rejected": forward.steps_rejected,
    });

    if cfg.sweep.both_directions {
        let reverse_schedule = SweepSchedule::new(schedule.delta_end, schedule.delta_start, schedule.sweep_time)?;
        let reverse = integrate_sweep(&cfg.params, &reverse_schedule, None, space, &env, &options)?;
        out.write("sweep_reverse.csv", |w| reverse.record.write_csv(w))?;
        let n = forward.record.len();
        let (i, diff) = (0..n)
            .map(|i| (i, (forward.record.n_mean[i] - reverse.record.n_mean[n - 1 - i]).abs()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let reverse_switch = extract_switch(&reverse.record);
        results["reverse_switch"] = json!(reverse_switch.as_ref().ok());
        results["reverse_switch_error"] = json!(error_text(&reverse_switch));
        results["max_n_mean_difference"] = json!(diff);
        results["max_n_mean_difference_delta"] = json!(forward.record.deltas[i]);
    }

    if !cfg.sweep.sweep_times.is_empty() {
        let times = cfg.sweep.sweep_times.clone();
        let stars = times
            .par_iter()
            .map(|&ts| {
                let s = schedule.with_sweep_time(ts)?;
                Ok(extract_switch(&integrate_sweep(&cfg.params, &s, None, space, &env, &options)?.record)?.delta_star)
            })
            .collect::<Result<Vec<f64>>>()?;
        out.write("sweep_times.csv", |w| {
            writeln!(w, "sweep_time,delta_star")?;
            for (t, d) in times.iter().zip(&stars) {
                writeln!(w, "{t},{d}")?;
            }
            Ok(())
        })?;
        let fit = fit_sweep_time(&times, &stars);
        results["sweep_time_fit"] = json!(fit.as_ref().ok());
        results["sweep_time_fit_error"] = json!(error_text(&fit));
    }

    let convergence = match &switch {
        Ok(_) => converge(cfg, "delta_star (largest phase jump)".into(), |s| {
            Ok(extract_switch(&integrate_sweep(&cfg.params, &schedule, None, s, &env, &options)?.record)?.delta_star)
        })?,
        Err(_) => converge(cfg, "final n_mean".into(), |s| {
            let r = integrate_sweep(&cfg.params, &schedule, None, s, &env, &options)?.record;
            Ok(r.n_mean[r.len() - 1])
        })?,
    };
    Ok(Outcome { results, convergence })
}

fn deterministic_convergence(cfg: &RunConfig, params: &SystemParams) -> Result<ConvergenceReport> {
    let protocol = cfg.protocol()?;
    let env = cfg.env();
    converge(cfg, format!("deterministic monitored delta_star at F = {}", params.f), |s| {
        deterministic_delta_star(params, &protocol, s, &env)
    })
}

pub fn trajectory(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let schedule = cfg.schedule()?;
    let options = cfg.heterodyne.options();
    let count = cfg.heterodyne.trajectories;
    if count == 0 {
        return Err(KpoError::InvalidConfig("heterodyne.trajectories must be at least 1".into()));
    }
    let (lo, hi) = (cfg.protocol.fit_min, cfg.protocol.fit_max);
    let runs = run_ensemble(&cfg.params, &schedule, cfg.seed, 0, count, cfg.space(), &cfg.env(), &options)?;
    let mut summaries = Vec::with_capacity(count);
    let mut first_error = None;
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(rec) => {
                out.write(&format!("trajectory_{i:03}.csv"), |w| rec.write_csv(w))?;
                out.write(&format!("trajectory_{i:03}_smoothed.csv"), |w| rec.write_smoothed_csv(w))?;
                let fit = fit_arctan(&rec, lo, hi);
                summaries.push(json!({
                    "index": i,
                    "delta_star": fit.as_ref().ok().map(|f| f.delta_star),
                    "fit_error": error_text(&fit),
                    "max_trace_drift": rec.max_trace_drift,
                    "min_eigenvalue": rec.min_eigenvalue,
                }));
            }
            Err(e) => {
                summaries.push(json!({ "index": i, "error": e.to_string() }));
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error.filter(|_| summaries.iter().all(|s| s.get("error").is_some())) {
        return Err(e);
    }
    Ok(Outcome {
        results: json!({ "seed": cfg.seed, "trajectories": summaries }),
        convergence: deterministic_convergence(cfg, &cfg.params)?,
    })
}

fn calibration_json(c: &CalibrationCurve) -> Value {
    json!({
        "slope": c.slope,
        "intercept": c.intercept,
        "r_squared": c.r_squared,
        "validity_window": c.validity_window,
        "excluded": c.excluded,
    })
}

pub fn transduce(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let protocol = cfg.protocol()?;
    let space = cfg.space();
    let env = cfg.env();
    let p = &cfg.protocol;
    let params = cfg.params.with_f(p.true_f);
    let loss = cfg.params.kappa + cfg.params.gamma;
    let calibration = calibrate(&cfg.params, &p.f_grid, &protocol, space, &env)?;
    out.write("calibration.csv", |w| calibration.write_csv(w))?;
    let mode = if p.deterministic { ShotMode::Deterministic } else { ShotMode::Heterodyne };
    let dist = run_protocol(p.true_f, &cfg.params, &calibration, &protocol, p.shots, cfg.seed, mode, space, &env)?;
    out.write("shots.csv", |w| dist.write_csv(w))?;

    let mut results = json!({
        "true_f": p.true_f,
        "true_f_over_loss": p.true_f / loss,
        "mode": dist.mode,
        "requested_shots": dist.requested_shots,
        "accepted_shots": dist.shots.len(),
        "failures": dist.failures,
        "out_of_range_delta_stars": dist.out_of_range,
        "mean": dist.mean,
        "std": dist.std,
        "median": dist.median,
        "mean_over_loss": dist.mean / loss,
        "std_over_loss": dist.std / loss,
        "delta_star_mean": dist.delta_star_mean,
        "delta_star_std": dist.delta_star_std,
        "gaussian_chi2_per_dof": dist.gaussian_chi2,
        "histogram": dist.histogram,
        "calibration": calibration_json(&calibration),
    });

    if p.pdf {
        let pdf = transition_pdf(&params, &protocol.schedule, space, &env, cfg.sweep.samples)?;
        out.write("switch_pdf.csv", |w| pdf.write_csv(w))?;
        results["switch_pdf"] = json!({
            "mode": pdf.mode(),
            "mean": pdf.mean(),
            "std": pdf.std(),
            "total": pdf.total(),
            "clipped_mass": pdf.clipped_mass,
        });
    }

    if !p.kappa_gamma_ratios.is_empty() {
        let rows = kappa_gamma_scan(&params, loss, &p.kappa_gamma_ratios, &protocol, p.scan_shots, cfg.seed, space, &env)?;
        out.write("kappa_gamma.csv", |w| {
            writeln!(w, "ratio,kappa,gamma,delta_star_mean,delta_star_std,accepted,failed")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.ratio, r.kappa, r.gamma, r.delta_star_mean, r.delta_star_std, r.accepted, r.failed
                )?;
            }
            Ok(())
        })?;
        results["kappa_gamma_scan"] = json!(rows);
    }

    Ok(Outcome { results, convergence: deterministic_convergence(cfg, &params)? })
}

pub fn calibrate_cmd(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let protocol = cfg.protocol()?;
    let grid = &cfg.protocol.f_grid;
    let calibration = calibrate(&cfg.params, grid, &protocol, cfg.space(), &cfg.env())?;
    out.write("calibration.csv", |w| calibration.write_csv(w))?;
    let mut results = calibration_json(&calibration);
    results["f_grid"] = json!(calibration.f_grid);
    results["delta_star_grid"] = json!(calibration.delta_star_grid);
    let nodes = calibration.nodes();
    let f_mid = nodes[nodes.len() / 2].0;
    Ok(Outcome { results, convergence: deterministic_convergence(cfg, &cfg.params.with_f(f_mid))? })
}

pub fn qfi(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let deltas = cfg.deltas()?;
    let temps = &cfg.qfi.temperatures_mk;
    if temps.is_empty() || temps.iter().any(|t| !(*t >= 0.0)) {
        return Err(KpoError::InvalidConfig("qfi.temperatures_mk must be a non-empty list of T ≥ 0".into()));
    }
    let kelvin: Vec<f64> = temps.iter().map(|t| t * 1e-3).collect();
    let omega_c = cfg.thermal.omega_c;
    let points = temperature_scan(&cfg.params, cfg.space(), omega_c, &kelvin, &deltas);
    out.write("qfi.csv", |w| write_scan_csv(&points, cfg.params.gamma, w))?;

    let mut per_t = Vec::new();
    let mut best_first = None;
    for (k, &t) in kelvin.iter().enumerate() {
        let row = &points[k * deltas.len()..(k + 1) * deltas.len()];
        let ok: Vec<&QfiResult> = row.iter().filter_map(|p| p.result.as_ref().ok()).collect();
        let peak = ok.iter().copied().fold(None, |a: Option<&QfiResult>, r| if a.is_none_or(|a| r.qfi > a.qfi) { Some(r) } else { a });
        if k == 0 {
            best_first = peak.map(|r| r.delta);
        }
        per_t.push(json!({
            "temperature_mk": temps[k],
            "temperature": t,
            "n_th": kpo_core::liouvillian::bose_occupation(omega_c, t),
            "peak_qfi": peak.map(|r| r.qfi),
            "peak_delta": peak.map(|r| r.delta),
            "failed_points": row.len() - ok.len(),
            "flagged_points": ok.iter().filter(|r| r.flagged).count(),
        }));
    }
    let Some(d_peak) = best_first else {
        return Err(points.into_iter().find_map(|p| p.result.err()).expect("every point failed"));
    };
    let env0 = ThermalEnvironment::from_temperature(omega_c, kelvin[0]);
    let convergence = converge(cfg, format!("qfi at delta = {d_peak}, T = {} mK", temps[0]), |s| {
        Ok(qfi_mixed(&cfg.params.with_delta(d_peak), &env0, s, None)?.qfi)
    })?;
    Ok(Outcome {
        results: json!({
            "linear_peak_qfi": linear_qfi(cfg.params.gamma, 0.0),
            "per_temperature": per_t,
        }),
        convergence,
    })
}

pub fn husimi(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome> {
    let delta = cfg.husimi.delta.unwrap_or(cfg.params.delta);
    let params = cfg.params.with_delta(delta);
    let rho = steady_rho(cfg, &params, cfg.space())?;
    let auto = HusimiSpec::for_state(&rho);
    let spec = HusimiSpec { half_width: cfg.husimi.half_width.unwrap_or(auto.half_width), points: cfg.husimi.points };
    let grid = husimi_q(&rho, &spec)?;
    out.write("husimi.csv", |w| grid.write_csv(w))?;
    let q_max = grid.values.iter().copied().fold(0.0, f64::max);
    let maxima: Vec<Value> =
        grid.local_maxima(0.1 * q_max).into_iter().map(|(x, p, q)| json!({ "x": x, "p": p, "q": q })).collect();
    let p_minus = half_plane_probability(&grid);
    let convergence = converge(cfg, format!("n_mean at delta = {delta}"), |s| {
        Ok(steady_rho(cfg, &params, s)?.mean_photon_number())
    })?;
    Ok(Outcome {
        results: json!({
            "delta": delta,
            "n_mean": rho.mean_photon_number(),
            "half_width": spec.half_width,
            "mass": grid.mass(),
            "left_half_plane_probability": p_minus.as_ref().ok(),
            "left_half_plane_error": error_text(&p_minus),
            "local_maxima": maxima,
        }),
        convergence,
    })
}
