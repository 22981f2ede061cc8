//! The sensing protocol: calibrate Δ*(F), measure Δ* from single heterodyne
//! records, and invert to an estimate of the single-photon drive F.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

use crate::dynamics::{integrate_sweep, SweepOptions, SweepSchedule};
use crate::error::{KpoError, Result};
use crate::fock::{FockSpace, SystemParams};
use crate::liouvillian::ThermalEnvironment;
use crate::phase_analysis::fit_arctan;
use crate::trajectories::{monitored_initial_state, integrate_heterodyne, HeterodyneOptions, NoiseStream};

/// Everything that defines how one shot turns into a Δ* value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub schedule: SweepSchedule,
    /// Detuning interval handed to the arctan fit.
    pub fit_window: (f64, f64),
    pub heterodyne: HeterodyneOptions,
}

impl ProtocolConfig {
    /// Down-sweep 15 → −10 in 50/U, fit over Δ ∈ [−6, 6], records smoothed over 200 steps.
    pub fn standard() -> Self {
        Self {
            schedule: SweepSchedule::standard_down(50.0),
            fit_window: (-6.0, 6.0),
            heterodyne: HeterodyneOptions { window: 200, ..HeterodyneOptions::default() },
        }
    }
}

/// Tabulated Δ*(F) with its linear summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCurve {
    pub f_grid: Vec<f64>,
    /// NaN where no switch could be fitted.
    pub delta_star_grid: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Inclusive F range used for the linear fit and for inversion.
    pub validity_window: [f64; 2],
    /// Indices of grid points outside the validity window.
    pub excluded: Vec<usize>,
}

impl CalibrationCurve {
    /// (F, Δ*) nodes inside the validity window, in grid order.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        self.f_grid
            .iter()
            .zip(&self.delta_star_grid)
            .enumerate()
            .filter(|(i, _)| !self.excluded.contains(i))
            .map(|(_, (f, d))| (*f, *d))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "f,delta_star,in_window")?;
        for (i, (f, d)) in self.f_grid.iter().zip(&self.delta_star_grid).enumerate() {
            writeln!(w, "{f},{d},{}", u8::from(!self.excluded.contains(&i)))?;
        }
        Ok(())
    }
}

/// Least-squares line y = slope·x + intercept and its r².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

/// Δ* of the noiseless monitored (γ → γ + κ) down-sweep, extracted with the protocol's arctan fit.
pub fn deterministic_delta_star(
    params: &SystemParams,
    protocol: &ProtocolConfig,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<f64> {
    let out = integrate_sweep(params, &protocol.schedule, None, space, env, &SweepOptions::monitored())?;
    Ok(fit_arctan(&out.record, protocol.fit_window.0, protocol.fit_window.1)?.delta_star)
}

/// Tabulates Δ*(F) from deterministic monitored down-sweeps.
///
/// Grid points with F at or below the loss scale max(γ + κ, η) fall outside the
/// validity window; the remaining points must be strictly monotone.
pub fn calibrate(
    params: &SystemParams,
    f_grid: &[f64],
    protocol: &ProtocolConfig,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<CalibrationCurve> {
    if f_grid.len() < 2 || f_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KpoError::InvalidConfig("calibration F grid must be strictly increasing with ≥ 2 points".into()));
    }
    let loss_scale = (params.gamma + params.kappa).max(params.eta);
    let results: Vec<Result<f64>> = f_grid
        .par_iter()
        .map(|&f| deterministic_delta_star(&params.with_f(f), protocol, space, env))
        .collect();

    let mut delta_star_grid = Vec::with_capacity(f_grid.len());
    let mut excluded = Vec::new();
    for (i, (r, &f)) in results.into_iter().zip(f_grid).enumerate() {
        let outside = f <= loss_scale;
        match r {
            Ok(d) => delta_star_grid.push(d),
            Err(e) if outside => {
                log::info!("calibration point F = {f} (outside validity window) has no switch: {e}");
                delta_star_grid.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
        if outside {
            excluded.push(i);
        }
    }
    let inside: Vec<usize> = (0..f_grid.len()).filter(|i| !excluded.contains(i)).collect();
    if inside.len() < 2 {
        return Err(KpoError::InvalidConfig(format!(
            "fewer than two calibration points above the loss scale {loss_scale}"
        )));
    }
    let d: Vec<f64> = inside.iter().map(|&i| delta_star_grid[i]).collect();
    let rising = d[d.len() - 1] > d[0];
    let offending: Vec<usize> = inside
        .windows(2)
        .zip(d.windows(2))
        .filter(|(_, w)| if rising { w[1] <= w[0] } else { w[1] >= w[0] })
        .map(|(idx, _)| idx[1])
        .collect();
    if !offending.is_empty() {
        return Err(KpoError::CalibrationFailed { offending });
    }
    let f: Vec<f64> = inside.iter().map(|&i| f_grid[i]).collect();
    let (slope, intercept, r_squared) = linear_fit(&f, &d);
    Ok(CalibrationCurve {
        f_grid: f_grid.to_vec(),
        delta_star_grid,
        slope,
        intercept,
        r_squared,
        validity_window: [f[0], f[f.len() - 1]],
        excluded,
    })
}

/// Inverts the calibration table by piecewise-linear interpolation.
pub fn estimate_f(delta_star: f64, calibration: &CalibrationCurve) -> Result<f64> {
    let nodes = calibration.nodes();
    let (lo, hi) = nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, d)| (lo.min(*d), hi.max(*d)));
    if !(delta_star >= lo && delta_star <= hi) {
        return Err(KpoError::Extrapolation { delta_star, lo, hi });
    }
    for w in nodes.windows(2) {
        let ((f0, d0), (f1, d1)) = (w[0], w[1]);
        if (delta_star - d0) * (delta_star - d1) <= 0.0 {
            if d1 == d0 {
                return Ok(f0);
            }
            return Ok(f0 + (f1 - f0) * (delta_star - d0) / (d1 - d0));
        }
    }
    unreachable!("Δ* inside the monotone table range always lies in some segment")
}

/// How each shot's record is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShotMode {
    Heterodyne,
    /// Noiseless monitored master-equation record in place of every trajectory.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shot {
    pub index: u64,
    pub delta_star: f64,
    pub f_meas: f64,
}

/// Counts of failed shots by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FailureTaxonomy {
    pub trajectory: usize,
    pub fit: usize,
    pub no_switch: usize,
    pub extrapolation: usize,
}

impl FailureTaxonomy {
    pub fn total(&self) -> usize {
        self.trajectory + self.fit + self.no_switch + self.extrapolation
    }

    fn record(&mut self, err: &KpoError) {
        match err {
            KpoError::NoSwitch { .. } => self.no_switch += 1,
            KpoError::FitFailed { .. } | KpoError::InvalidConfig(_) => self.fit += 1,
            KpoError::Extrapolation { .. } => self.extrapolation += 1,
            _ => self.trajectory += 1,
        }
    }
}

impl fmt::Display for FailureTaxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trajectory {}, fit {}, no switch {}, extrapolation {}",
            self.trajectory, self.fit, self.no_switch, self.extrapolation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins spanning [min, max] of the data.
    pub fn new(data: &[f64], bins: usize) -> Self {
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        Self::with_edges(data, (0..=bins).map(|k| lo + k as f64 * width).collect())
    }

    pub fn with_edges(data: &[f64], edges: Vec<f64>) -> Self {
        let bins = edges.len() - 1;
        let mut counts = vec![0; bins];
        for &x in data {
            let k = edges.partition_point(|e| *e <= x);
            if k >= 1 && k <= bins {
                counts[k - 1] += 1;
            } else if x == edges[bins] {
                counts[bins - 1] += 1;
            }
        }
        Self { edges, counts }
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Centre of the most populated bin.
    pub fn mode(&self) -> f64 {
        let k = (0..self.counts.len()).max_by_key(|&k| (self.counts[k], usize::MAX - k)).unwrap_or(0);
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    /// χ² per degree of freedom against a normal(mean, std) density, over bins expecting ≥ 5 counts.
    pub fn gaussian_chi2(&self, mean: f64, std: f64) -> f64 {
        let total: usize = self.counts.iter().sum();
        let cdf = |x: f64| 0.5 * (1.0 + erf((x - mean) / (std * std::f64::consts::SQRT_2)));
        let mut chi2 = 0.0;
        let mut used = 0usize;
        for (k, &c) in self.counts.iter().enumerate() {
            let expected = total as f64 * (cdf(self.edges[k + 1]) - cdf(self.edges[k]));
            if expected >= 5.0 {
                chi2 += (c as f64 - expected).powi(2) / expected;
                used += 1;
            }
        }
        if used > 3 {
            chi2 / (used - 3) as f64
        } else {
            f64::NAN
        }
    }
}

/// Abramowitz–Stegun 7.1.26 (|error| < 1.5·10⁻⁷), ample for histogram diagnostics.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

/// Per-shot estimates and their Gaussian summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateDistribution {
    pub true_f: f64,
    pub mode: ShotMode,
    pub shots: Vec<Shot>,
    pub requested_shots: usize,
    pub failures: FailureTaxonomy,
    /// Δ* of shots that fitted but fell outside the calibrated range.
    pub out_of_range: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub delta_star_mean: f64,
    pub delta_star_std: f64,
    pub histogram: Histogram,
    pub gaussian_chi2: f64,
}

impl EstimateDistribution {
    pub fn f_samples(&self) -> Vec<f64> {
        self.shots.iter().map(|s| s.f_meas).collect()
    }

    pub fn delta_star_samples(&self) -> Vec<f64> {
        self.shots.iter().map(|s| s.delta_star).collect()
    }

    /// Every fitted Δ*, including those that could not be inverted.
    pub fn fitted_delta_stars(&self) -> Vec<f64> {
        let mut all = self.delta_star_samples();
        all.extend(&self.out_of_range);
        all
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "shot,delta_star,f_meas")?;
        for s in &self.shots {
            writeln!(w, "{},{},{}", s.index, s.delta_star, s.f_meas)?;
        }
        Ok(())
    }
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Δ* of every shot (stream (seed, index)), in index order; failed shots carry their error.
#[allow(clippy::too_many_arguments)]
pub fn measure_delta_stars(
    params: &SystemParams,
    protocol: &ProtocolConfig,
    shots: usize,
    seed: u64,
    mode: ShotMode,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<Vec<Result<f64>>> {
    let (lo, hi) = protocol.fit_window;
    match mode {
        ShotMode::Deterministic => {
            let d = deterministic_delta_star(params, protocol, space, env);
            Ok(vec![d; shots])
        }
        ShotMode::Heterodyne => {
            let initial = monitored_initial_state(params, &protocol.schedule, space, env)?;
            Ok((0..shots as u64)
                .into_par_iter()
                .map(|i| {
                    let mut noise = NoiseStream::new(seed, i);
                    let rec = integrate_heterodyne(
                        params,
                        &protocol.schedule,
                        Some(&initial),
                        &mut noise,
                        space,
                        env,
                        &protocol.heterodyne,
                    )?;
                    Ok(fit_arctan(&rec, lo, hi)?.delta_star)
                })
                .collect())
        }
    }
}

/// Runs the full protocol at drive `true_f`.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    true_f: f64,
    params: &SystemParams,
    calibration: &CalibrationCurve,
    protocol: &ProtocolConfig,
    shots: usize,
    seed: u64,
    mode: ShotMode,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<EstimateDistribution> {
    if shots < 2 {
        return Err(KpoError::InvalidConfig("the protocol needs at least two shots".into()));
    }
    if shots < 50 {
        log::warn!("{shots} shots give only rough distribution statistics");
    }
    let raw = measure_delta_stars(&params.with_f(true_f), protocol, shots, seed, mode, space, env)?;
    let mut failures = FailureTaxonomy::default();
    let mut accepted = Vec::with_capacity(shots);
    let mut out_of_range = Vec::new();
    for (index, r) in raw.into_iter().enumerate() {
        let delta_star = match r {
            Ok(d) => d,
            Err(e) => {
                failures.record(&e);
                continue;
            }
        };
        match estimate_f(delta_star, calibration) {
            Ok(f_meas) => accepted.push(Shot { index: index as u64, delta_star, f_meas }),
            Err(e) => {
                if matches!(e, KpoError::Extrapolation { .. }) {
                    out_of_range.push(delta_star);
                }
                failures.record(&e);
            }
        }
    }
    if failures.total() * 5 > shots || accepted.len() < 2 {
        return Err(KpoError::ProtocolDegraded {
            failed: failures.total(),
            total: shots,
            taxonomy: failures.to_string(),
        });
    }
    let f: Vec<f64> = accepted.iter().map(|s| s.f_meas).collect();
    let d: Vec<f64> = accepted.iter().map(|s| s.delta_star).collect();
    let (mean, std) = mean_std(&f);
    let (delta_star_mean, delta_star_std) = mean_std(&d);
    let bins = ((f.len() as f64).sqrt().ceil() as usize).max(1);
    let histogram = Histogram::new(&f, bins);
    let gaussian_chi2 = if std > 0.0 { histogram.gaussian_chi2(mean, std) } else { f64::NAN };
    Ok(EstimateDistribution {
        true_f,
        mode,
        median: median(&f),
        shots: accepted,
        requested_shots: shots,
        failures,
        out_of_range,
        mean,
        std,
        delta_star_mean,
        delta_star_std,
        histogram,
        gaussian_chi2,
    })
}

/// One row of the κ/γ scan at fixed κ + γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub ratio: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta_star_mean: f64,
    pub delta_star_std: f64,
    pub accepted: usize,
    pub failed: usize,
}

/// Spread of Δ* over heterodyne ensembles for each κ/γ at fixed κ + γ.
/// A ratio of +∞ means γ = 0.
#[allow(clippy::too_many_arguments)]
pub fn kappa_gamma_scan(
    params: &SystemParams,
    kappa_plus_gamma: f64,
    ratios: &[f64],
    protocol: &ProtocolConfig,
    shots: usize,
    seed: u64,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<Vec<ScanRow>> {
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0)) {
        return Err(KpoError::InvalidConfig(format!("κ/γ ratio {r} must be positive")));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let (kappa, gamma) = if ratio.is_infinite() {
            (kappa_plus_gamma, 0.0)
        } else {
            (kappa_plus_gamma * ratio / (1.0 + ratio), kappa_plus_gamma / (1.0 + ratio))
        };
        let p = SystemParams { kappa, gamma, ..*params };
        let raw = measure_delta_stars(&p, protocol, shots, seed, ShotMode::Heterodyne, space, env)?;
        let d: Vec<f64> = raw.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let (delta_star_mean, delta_star_std) = if d.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&d) };
        rows.push(ScanRow {
            ratio,
            kappa,
            gamma,
            delta_star_mean,
            delta_star_std,
            accepted: d.len(),
            failed: raw.len() - d.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(f: &[f64], d: &[f64]) -> CalibrationCurve {
        let (slope, intercept, r_squared) = linear_fit(f, d);
        CalibrationCurve {
            f_grid: f.to_vec(),
            delta_star_grid: d.to_vec(),
            slope,
            intercept,
            r_squared,
            validity_window: [f[0], f[f.len() - 1]],
            excluded: vec![],
        }
    }

    #[test]
    fn inversion_at_nodes_and_midpoints() {
        let cal = table(&[2.0, 3.0, 4.0, 5.0], &[-2.8, -2.3, -1.8, -1.3]);
        assert_eq!(estimate_f(-2.3, &cal).unwrap(), 3.0);
        assert_eq!(estimate_f(-2.8, &cal).unwrap(), 2.0);
        assert!((estimate_f(-2.05, &cal).unwrap() - 3.5).abs() < 1e-12);
        assert!(matches!(estimate_f(-3.0, &cal), Err(KpoError::Extrapolation { .. })));
        assert!(matches!(estimate_f(f64::NAN, &cal), Err(KpoError::Extrapolation { .. })));
        assert!((cal.slope - 0.5).abs() < 1e-12 && (cal.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inversion_of_decreasing_table() {
        let cal = table(&[1.0, 2.0, 3.0], &[4.0, 2.0, 1.0]);
        assert!((estimate_f(3.0, &cal).unwrap() - 1.5).abs() < 1e-12);
        assert!((estimate_f(1.5, &cal).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn excluded_points_do_not_invert() {
        let mut cal = table(&[0.5, 2.0, 3.0], &[-5.0, -2.8, -2.3]);
        cal.excluded = vec![0];
        assert!(estimate_f(-4.0, &cal).is_err());
        assert!((estimate_f(-2.55, &cal).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_and_chi2() {
        let h = Histogram::with_edges(&[0.0, 0.5, 1.0, 1.5, 2.0], vec![0.0, 1.0, 2.0]);
        assert_eq!(h.counts, vec![2, 3]);
        assert_eq!(h.mode(), 1.5);
        let normal: Vec<f64> = (1..2000).map(|k| probit(k as f64 / 2000.0)).collect();
        let h = Histogram::new(&normal, 20);
        assert!(h.gaussian_chi2(0.0, 1.0) < 0.5);
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 2e-7);
    }

    /// Inverse normal CDF by bisection on erf, for building exact quantile samples.
    fn probit(q: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * (1.0 + erf(mid / std::f64::consts::SQRT_2)) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn statistics_helpers() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn failure_taxonomy() {
        let mut t = FailureTaxonomy::default();
        t.record(&KpoError::NoSwitch { max_jump: 0.1 });
        t.record(&KpoError::Extrapolation { delta_star: 1.0, lo: 0.0, hi: 0.5 });
        t.record(&KpoError::StepSize { t: 1.0, min_eigenvalue: -1.0 });
        assert_eq!(t.total(), 3);
        assert_eq!(t.to_string(), "trajectory 1, fit 0, no switch 1, extrapolation 1");
    }

    #[test]
    fn bad_ratios_rejected() {
        let space = FockSpace::new(4).unwrap();
        let err = kappa_gamma_scan(
            &SystemParams::transducer(),
            1.5,
            &[1.0, 0.0],
            &ProtocolConfig::standard(),
            2,
            0,
            space,
            &ThermalEnvironment::zero_temperature(),
        )
        .unwrap_err();
        assert!(matches!(err, KpoError::InvalidConfig(_)));
    }
}
