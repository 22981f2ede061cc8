//! Heterodyne-monitored quantum trajectories.
//!
//! The conditional state obeys the Itô stochastic master equation
//!
//! ```text
//! dρ = 𝓛_{γ+κ} ρ dt + √(κ/2) (dW_x ℋ[a] + dW_p ℋ[−ia]) ρ,
//! ℋ[c]ρ = cρ + ρc† − tr(cρ + ρc†) ρ,
//! ```
//!
//! and the detector reports `x + √(2/κ) dW_x/dt`, `p + √(2/κ) dW_p/dt`.
//! The deterministic part is advanced with one classical RK4 step per time
//! step (the Kerr and detuning terms make the generator too stiff for a plain
//! Euler drift at dim ≈ 20–30), the noise with an Euler–Maruyama increment;
//! ρ is re-Hermitized and renormalized after every step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::SweepSchedule;
use crate::error::{KpoError, Result};
use crate::fock::{FockSpace, SystemParams, C64, ZERO};
use crate::liouvillian::{
    build_liouvillian, observables_from_vec, phase_of, steady_state, trace_of_vec, DensityMatrix, MasterEquation,
    ThermalEnvironment,
};

/// Pair of independent Wiener increments per step, reproducible from (seed, trajectory index).
///
/// Each trajectory reads its own ChaCha stream, so streams are independent
/// without coordination and the draw order of other trajectories is irrelevant.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    trajectory_index: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory_index);
        Self { seed, trajectory_index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    /// (dW_x, dW_p), each ~ N(0, dt).
    #[inline]
    pub fn increments(&mut self, dt: f64) -> (f64, f64) {
        let s = dt.sqrt();
        let x: f64 = StandardNormal.sample(&mut self.rng);
        let p: f64 = StandardNormal.sample(&mut self.rng);
        (s * x, s * p)
    }
}

/// Statistics of one Wiener path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WienerStats {
    pub steps: usize,
    pub dt: f64,
    /// W(t) at t = steps·dt, for each quadrature.
    pub final_value: [f64; 2],
    pub increment_mean: [f64; 2],
    /// Σ dW², an estimator of var W(t) = t.
    pub quadratic_variation: [f64; 2],
    /// |mean dW| < 4√(dt/steps) and |Σ dW²/t − 1| < 0.1 for both quadratures.
    pub passed: bool,
}

pub fn wiener_selfcheck(noise: &mut NoiseStream, steps: usize, dt: f64) -> Result<WienerStats> {
    if steps < 1000 {
        return Err(KpoError::InvalidConfig(format!("wiener self-check needs ≥ 1000 steps, got {steps}")));
    }
    let mut w = [0.0; 2];
    let mut qv = [0.0; 2];
    for _ in 0..steps {
        let (x, p) = noise.increments(dt);
        w[0] += x;
        w[1] += p;
        qv[0] += x * x;
        qv[1] += p * p;
    }
    let t = steps as f64 * dt;
    let mean = [w[0] / steps as f64, w[1] / steps as f64];
    let bound = 4.0 * (dt / steps as f64).sqrt();
    let passed = (0..2).all(|i| mean[i].abs() < bound && (qv[i] / t - 1.0).abs() < 0.1);
    Ok(WienerStats { steps, dt, final_value: w, increment_mean: mean, quadratic_variation: qv, passed })
}

/// Sample correlation of the x increments of two streams.
pub fn increment_correlation(a: &mut NoiseStream, b: &mut NoiseStream, steps: usize, dt: f64) -> f64 {
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for _ in 0..steps {
        let (x, _) = a.increments(dt);
        let (y, _) = b.increments(dt);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeterodyneOptions {
    /// Integration step (units of 1/U).
    pub dt: f64,
    /// Output samples across the sweep.
    pub samples: usize,
    /// Length (in steps) of the centred boxcar for the smoothed measurement record.
    pub window: usize,
    /// Reject the run when ρ acquires an eigenvalue below −this at an output sample.
    pub positivity_tolerance: f64,
}

impl Default for HeterodyneOptions {
    fn default() -> Self {
        Self { dt: 1e-3, samples: 500, window: 50, positivity_tolerance: 1e-4 }
    }
}

/// One noisy measurement record and the conditional observables behind it.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Measured quadratures averaged over a boxcar centred on each sample, and their phase.
    pub x_meas: Vec<f64>,
    pub p_meas: Vec<f64>,
    pub phi_meas: Vec<f64>,
    /// Single-step (unsmoothed) measured quadratures.
    pub x_meas_raw: Vec<f64>,
    pub p_meas_raw: Vec<f64>,
    /// Conditional expectations.
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub n_mean: Vec<f64>,
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Raw phase record atan2(p_meas_raw, x_meas_raw).
    pub fn phi_meas_raw(&self) -> Vec<f64> {
        self.x_meas_raw.iter().zip(&self.p_meas_raw).map(|(&x, &p)| phase_of(x, p)).collect()
    }

    /// CSV with columns t, delta, x_meas, p_meas, phi_meas (raw single-step values).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta,x_meas,p_meas,phi_meas")?;
        for (k, phi) in self.phi_meas_raw().into_iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", self.times[k], self.deltas[k], self.x_meas_raw[k], self.p_meas_raw[k], phi)?;
        }
        Ok(())
    }

    /// CSV of the smoothed record plus conditional observables.
    pub fn write_smoothed_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta,x_meas,p_meas,phi_meas,x,p,n_mean")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                self.times[k],
                self.deltas[k],
                self.x_meas[k],
                self.p_meas[k],
                self.phi_meas[k],
                self.x[k],
                self.p[k],
                self.n_mean[k]
            )?;
        }
        Ok(())
    }
}

/// Steady state of the monitored oscillator (γ → γ + κ) at the schedule's start.
pub fn monitored_initial_state(
    params: &SystemParams,
    schedule: &SweepSchedule,
    space: FockSpace,
    env: &ThermalEnvironment,
) -> Result<DensityMatrix> {
    steady_state(&build_liouvillian(&params.with_delta(schedule.delta_start), space, env, true))
}

/// Integrates one heterodyne trajectory across the sweep.
///
/// `initial` defaults to [`monitored_initial_state`]; ensembles should compute it once.
pub fn integrate_heterodyne(
    params: &SystemParams,
    schedule: &SweepSchedule,
    initial: Option<&DensityMatrix>,
    noise: &mut NoiseStream,
    space: FockSpace,
    env: &ThermalEnvironment,
    options: &HeterodyneOptions,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    if params.kappa <= 0.0 {
        return Err(KpoError::InvalidConfig(
            "heterodyne detection needs κ > 0 (the measured quadrature noise scales as 1/√κ)".into(),
        ));
    }
    if !(options.dt > 0.0) || options.samples < 2 || options.window == 0 {
        return Err(KpoError::InvalidConfig(format!("bad heterodyne options {options:?}")));
    }
    let steps = (schedule.sweep_time / options.dt).round() as usize;
    if steps < options.samples {
        return Err(KpoError::InvalidConfig(format!(
            "{steps} steps cannot provide {} output samples",
            options.samples
        )));
    }
    let dt = schedule.sweep_time / steps as f64;
    let rho0 = match initial {
        Some(r) => r.clone(),
        None => monitored_initial_state(params, schedule, space, env)?,
    };
    let generator = MasterEquation::new(&params.with_delta(0.0), space, env, true);
    let dim = space.dim();
    let len = dim * dim;
    let mut rho = rho0.to_vec();
    let mut work = Rk4Work::new(len);

    let last = options.samples - 1;
    let sample_step = |s: usize| -> usize { (s * (steps - 1) + last / 2) / last };
    let mut next_sample = 0usize;
    let noise_scale = (2.0 / params.kappa).sqrt() / dt;
    let kick = (params.kappa / 2.0).sqrt();
    // Running sums of the measurement currents for the centred boxcar.
    let mut cum_x = Vec::with_capacity(steps + 1);
    let mut cum_p = Vec::with_capacity(steps + 1);
    cum_x.push(0.0);
    cum_p.push(0.0);
    let mut sampled_steps = Vec::with_capacity(options.samples);
    let mut rec = TrajectoryRecord { min_eigenvalue: f64::INFINITY, ..Default::default() };

    for step in 0..steps {
        let t = step as f64 * dt;
        let obs = observables_from_vec(dim, &rho);
        let (dwx, dwp) = noise.increments(dt);
        let xm = obs.x + noise_scale * dwx;
        let pm = obs.p + noise_scale * dwp;
        cum_x.push(cum_x[step] + xm);
        cum_p.push(cum_p[step] + pm);

        if next_sample <= last && step == sample_step(next_sample) {
            sampled_steps.push(step);
            rec.times.push(t);
            rec.deltas.push(schedule.delta_at(t));
            rec.x_meas_raw.push(xm);
            rec.p_meas_raw.push(pm);
            rec.x.push(obs.x);
            rec.p.push(obs.p);
            rec.n_mean.push(obs.n_mean);
            let min = DensityMatrix::from_vec(space, &rho).min_eigenvalue()?;
            rec.min_eigenvalue = rec.min_eigenvalue.min(min);
            if min < -options.positivity_tolerance {
                return Err(KpoError::StepSize { t, min_eigenvalue: min });
            }
            next_sample += 1;
        }

        // Deterministic part.
        work.step(&generator, schedule, t, dt, &rho);
        // Measurement back-action, evaluated on the pre-step state.
        let z = C64::new(dwx, -dwp) * kick;
        let shift = kick * (dwx * obs.x + dwp * obs.p);
        let next = &mut work.out;
        for c in 0..dim {
            for m in 0..dim {
                let mut acc = -shift * rho[m + c * dim];
                if m + 1 < dim {
                    // (aρ)[m, c] = √(m+1) ρ[m+1, c]
                    acc += z * ((m + 1) as f64).sqrt() * rho[(m + 1) + c * dim];
                }
                if c + 1 < dim {
                    // (ρa†)[m, c] = √(c+1) ρ[m, c+1]
                    acc += z.conj() * ((c + 1) as f64).sqrt() * rho[m + (c + 1) * dim];
                }
                next[m + c * dim] += acc;
            }
        }
        std::mem::swap(&mut rho, &mut work.out);
        let drift = hermitize_and_normalize(dim, &mut rho);
        rec.max_trace_drift = rec.max_trace_drift.max(drift);
        if !(drift < 1e-6) {
            return Err(KpoError::TraceDrift { t: t + dt, drift });
        }
    }
    let half = options.window / 2;
    for &i in &sampled_steps {
        let start = i.saturating_sub(half);
        let end = (start + options.window).min(steps);
        let start = end.saturating_sub(options.window);
        let width = (end - start) as f64;
        let sx = (cum_x[end] - cum_x[start]) / width;
        let sp = (cum_p[end] - cum_p[start]) / width;
        rec.x_meas.push(sx);
        rec.p_meas.push(sp);
        rec.phi_meas.push(phase_of(sx, sp));
    }
    Ok(rec)
}

/// ρ ← (ρ + ρ†)/2 / tr; returns |tr ρ − 1| before normalization.
fn hermitize_and_normalize(dim: usize, rho: &mut [C64]) -> f64 {
    for c in 0..dim {
        for m in 0..c {
            let avg = 0.5 * (rho[m + c * dim] + rho[c + m * dim].conj());
            rho[m + c * dim] = avg;
            rho[c + m * dim] = avg.conj();
        }
        rho[c + c * dim] = C64::new(rho[c + c * dim].re, 0.0);
    }
    let tr = trace_of_vec(dim, rho).re;
    let inv = 1.0 / tr;
    for v in rho.iter_mut() {
        *v *= inv;
    }
    (tr - 1.0).abs()
}

struct Rk4Work {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
    out: Vec<C64>,
}

impl Rk4Work {
    fn new(len: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![ZERO; len]), tmp: vec![ZERO; len], out: vec![ZERO; len] }
    }

    /// out = RK4 step of ρ̇ = 𝓛(Δ(t))ρ.
    fn step(&mut self, generator: &MasterEquation, schedule: &SweepSchedule, t: f64, dt: f64, y: &[C64]) {
        let d0 = schedule.delta_at(t);
        let dh = schedule.delta_at(t + 0.5 * dt);
        let d1 = schedule.delta_at(t + dt);
        let [k1, k2, k3, k4] = &mut self.k;
        generator.apply_hermitian(d0, y, k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        generator.apply_hermitian(dh, &self.tmp, k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        generator.apply_hermitian(dh, &self.tmp, k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + dt * k3[i];
        }
        generator.apply_hermitian(d1, &self.tmp, k4);
        let w = dt / 6.0;
        for i in 0..y.len() {
            self.out[i] = y[i] + w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

/// Runs `count` trajectories with streams (seed, first_index + i); results are in index order
/// regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    params: &SystemParams,
    schedule: &SweepSchedule,
    seed: u64,
    first_index: u64,
    count: usize,
    space: FockSpace,
    env: &ThermalEnvironment,
    options: &HeterodyneOptions,
) -> Result<Vec<Result<TrajectoryRecord>>> {
    let initial = monitored_initial_state(params, schedule, space, env)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = NoiseStream::new(seed, first_index + i);
            integrate_heterodyne(params, schedule, Some(&initial), &mut noise, space, env, options)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wiener_variance_and_determinism() {
        let stats = wiener_selfcheck(&mut NoiseStream::new(7, 0), 10_000, 1e-3).unwrap();
        assert!(stats.passed, "{stats:?}");
        for qv in stats.quadratic_variation {
            assert!((9.0..=11.0).contains(&qv), "{qv}");
        }
        let again = wiener_selfcheck(&mut NoiseStream::new(7, 0), 10_000, 1e-3).unwrap();
        assert_eq!(stats, again);
        assert!(wiener_selfcheck(&mut NoiseStream::new(7, 0), 999, 1e-3).is_err());
    }

    #[test]
    fn streams_are_independent() {
        let c = increment_correlation(&mut NoiseStream::new(3, 0), &mut NoiseStream::new(3, 1), 10_000, 1e-3);
        assert!(c.abs() < 0.05, "{c}");
    }

    #[test]
    fn vacuum_record_is_centered_noise() {
        let space = FockSpace::new(4).unwrap();
        let p = SystemParams { f: 0.0, g_abs: 0.0, u: 0.0, kappa: 50.0, ..SystemParams::switching() };
        let schedule = SweepSchedule::new(1.0, 0.0, 10.0).unwrap();
        let opts = HeterodyneOptions { samples: 10_000, window: 1, ..Default::default() };
        let rec = integrate_heterodyne(
            &p,
            &schedule,
            Some(&DensityMatrix::vacuum(space)),
            &mut NoiseStream::new(11, 0),
            space,
            &ThermalEnvironment::zero_temperature(),
            &opts,
        )
        .unwrap();
        assert_eq!(rec.len(), 10_000);
        let n = rec.len() as f64;
        let mean = rec.x_meas_raw.iter().sum::<f64>() / n;
        let sigma = (2.0 / p.kappa).sqrt() / opts.dt.sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "{mean} vs σ {sigma}");
        assert!(rec.n_mean.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn kappa_zero_rejected() {
        let space = FockSpace::new(4).unwrap();
        let p = SystemParams { kappa: 0.0, ..SystemParams::switching() };
        let err = integrate_heterodyne(
            &p,
            &SweepSchedule::standard_down(1.0),
            Some(&DensityMatrix::vacuum(space)),
            &mut NoiseStream::new(0, 0),
            space,
            &ThermalEnvironment::zero_temperature(),
            &HeterodyneOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, KpoError::InvalidConfig(_)));
    }

    #[test]
    fn fixed_seed_reproduces_record() {
        let space = FockSpace::new(8).unwrap();
        let p = SystemParams { kappa: 1.0, ..SystemParams::switching() };
        let schedule = SweepSchedule::new(3.0, 0.0, 1.0).unwrap();
        let opts = HeterodyneOptions { samples: 50, ..Default::default() };
        let env = ThermalEnvironment::zero_temperature();
        let run = |idx| {
            integrate_heterodyne(&p, &schedule, None, &mut NoiseStream::new(5, idx), space, &env, &opts).unwrap()
        };
        let (a, b, c) = (run(0), run(0), run(1));
        assert_eq!(a.x_meas, b.x_meas);
        assert_eq!(a.p_meas_raw, b.p_meas_raw);
        assert_ne!(a.x_meas, c.x_meas);
        assert!(a.max_trace_drift < 1e-10);
    }
}
