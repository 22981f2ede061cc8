//! Deterministic Lindblad evolution under linear detuning sweeps.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use crate::error::{KpoError, Result};
use crate::fock::{FockSpace, SystemParams, C64, ZERO};
use crate::liouvillian::{
    build_liouvillian, observables_from_vec, steady_state, trace_of_vec, DensityMatrix, MasterEquation,
    ThermalEnvironment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    Up,
    Down,
}

/// Δ(t) = Δ_start + (Δ_end − Δ_start) t / t_s for 0 ≤ t ≤ t_s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub delta_start: f64,
    pub delta_end: f64,
    pub sweep_time: f64,
    pub direction: SweepDirection,
}

impl SweepSchedule {
    pub fn new(delta_start: f64, delta_end: f64, sweep_time: f64) -> Result<Self> {
        if !(sweep_time > 0.0 && sweep_time.is_finite()) {
            return Err(KpoError::InvalidConfig(format!("sweep time {sweep_time} must be positive")));
        }
        if !(delta_start.is_finite() && delta_end.is_finite()) || delta_start == delta_end {
            return Err(KpoError::InvalidConfig(format!(
                "sweep endpoints {delta_start} → {delta_end} must be finite and distinct"
            )));
        }
        let direction = if delta_end > delta_start { SweepDirection::Up } else { SweepDirection::Down };
        Ok(Self { delta_start, delta_end, sweep_time, direction })
    }

    /// Δ/U: 15 → −10 over `sweep_time`.
    pub fn standard_down(sweep_time: f64) -> Self {
        Self::new(15.0, -10.0, sweep_time).expect("valid schedule")
    }

    /// Δ/U: −10 → 15 over `sweep_time`.
    pub fn standard_up(sweep_time: f64) -> Self {
        Self::new(-10.0, 15.0, sweep_time).expect("valid schedule")
    }

    #[inline]
    pub fn delta_at(&self, t: f64) -> f64 {
        self.delta_start + (self.delta_end - self.delta_start) * t / self.sweep_time
    }

    /// dΔ/dt.
    pub fn rate(&self) -> f64 {
        (self.delta_end - self.delta_start) / self.sweep_time
    }

    pub fn with_sweep_time(&self, sweep_time: f64) -> Result<Self> {
        Self::new(self.delta_start, self.delta_end, sweep_time)
    }
}

/// Observables sampled along a sweep.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepRecord {
    pub times: Vec<f64>,
    pub deltas: Vec<f64>,
    pub n_mean: Vec<f64>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Φ = atan2(p, x); NaN where |x| + |p| < 10⁻⁶.
    pub phi: Vec<f64>,
}

impl SweepRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, delta: f64, rho: &[C64], dim: usize) {
        let obs = observables_from_vec(dim, rho);
        self.times.push(t);
        self.deltas.push(delta);
        self.n_mean.push(obs.n_mean);
        self.x.push(obs.x);
        self.p.push(obs.p);
        self.phi.push(obs.phi);
    }

    pub fn undefined_phase_count(&self) -> usize {
        self.phi.iter().filter(|v| v.is_nan()).count()
    }

    /// Linear interpolation of ⟨n⟩ at a detuning inside the record.
    pub fn n_mean_at(&self, delta: f64) -> Option<f64> {
        interpolate(&self.deltas, &self.n_mean, delta)
    }

    /// Builds a record from a phase profile alone (x, p and ⟨n⟩ derived from a unit amplitude).
    pub fn from_phase(deltas: Vec<f64>, phi: Vec<f64>) -> Self {
        let n = deltas.len();
        Self {
            times: (0..n).map(|k| k as f64).collect(),
            x: phi.iter().map(|f| f.cos()).collect(),
            p: phi.iter().map(|f| f.sin()).collect(),
            n_mean: vec![1.0; n],
            deltas,
            phi,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta,n_mean,x,p,phi")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.times[k], self.deltas[k], self.n_mean[k], self.x[k], self.p[k], self.phi[k]
            )?;
        }
        Ok(())
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    for k in 0..xs.len().saturating_sub(1) {
        let (a, b) = (xs[k], xs[k + 1]);
        if (a <= x && x <= b) || (b <= x && x <= a) {
            if a == b {
                return Some(ys[k]);
            }
            let w = (x - a) / (b - a);
            return Some(ys[k] * (1.0 - w) + ys[k + 1] * w);
        }
    }
    None
}

/// Integration controls for [`integrate_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Uniform output samples, endpoints included.
    pub samples: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Fold the detector channel into the loss rate (γ → γ + κ).
    pub include_measurement: bool,
    /// Check positivity of ρ at every output sample.
    pub check_positivity: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { samples: 500, rtol: 1e-8, atol: 1e-10, include_measurement: false, check_positivity: true }
    }
}

impl SweepOptions {
    pub fn monitored() -> Self {
        Self { include_measurement: true, ..Self::default() }
    }
}

/// Result of a sweep: the sampled record plus the final state.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub record: SweepRecord,
    pub final_state: DensityMatrix,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

/// Steady state at the schedule's starting detuning.
pub fn initial_steady_state(
    params: &SystemParams,
    schedule: &SweepSchedule,
    space: FockSpace,
    env: &ThermalEnvironment,
    include_measurement: bool,
) -> Result<DensityMatrix> {
    let p = params.with_delta(schedule.delta_start);
    steady_state(&build_liouvillian(&p, space, env, include_measurement))
}

/// Integrates ρ̇ = 𝓛(Δ(t))ρ over the schedule with an adaptive Dormand–Prince 5(4) scheme.
///
/// `initial` defaults to the steady state at the starting detuning.
pub fn integrate_sweep(
    params: &SystemParams,
    schedule: &SweepSchedule,
    initial: Option<&DensityMatrix>,
    space: FockSpace,
    env: &ThermalEnvironment,
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    integrate_sweep_observed(params, schedule, initial, space, env, options, |_, _, _| Ok(()))
}

/// [`integrate_sweep`] that also hands the column-stacked ρ at every output sample
/// (t, Δ(t), ρ) to `observe`.
pub fn integrate_sweep_observed<O>(
    params: &SystemParams,
    schedule: &SweepSchedule,
    initial: Option<&DensityMatrix>,
    space: FockSpace,
    env: &ThermalEnvironment,
    options: &SweepOptions,
    mut observe: O,
) -> Result<SweepOutcome>
where
    O: FnMut(f64, f64, &[C64]) -> Result<()>,
{
    params.validate()?;
    if options.samples < 2 {
        return Err(KpoError::InvalidConfig("a sweep needs at least two output samples".into()));
    }
    let rho0 = match initial {
        Some(r) => {
            if r.space() != space {
                return Err(KpoError::InvalidConfig("initial state lives in a different Fock space".into()));
            }
            r.clone()
        }
        None => initial_steady_state(params, schedule, space, env, options.include_measurement)?,
    };
    let generator = MasterEquation::new(&params.with_delta(0.0), space, env, options.include_measurement);
    let dim = space.dim();
    let mut y = rho0.to_vec();
    let mut record = SweepRecord::default();
    record.push(0.0, schedule.delta_start, &y, dim);
    observe(0.0, schedule.delta_start, &y)?;

    let mut stepper = DormandPrince::new(dim * dim, options.rtol, options.atol);
    let mut t = 0.0;
    let mut h = 1e-3 * schedule.sweep_time.min(1.0);
    let rhs = |t: f64, y: &[C64], out: &mut [C64]| generator.apply_hermitian(schedule.delta_at(t), y, out);
    let last = options.samples - 1;
    for k in 1..=last {
        let t_out = schedule.sweep_time * k as f64 / last as f64;
        h = stepper.advance_to(&rhs, &mut t, t_out, &mut y, h)?;
        let drift = (trace_of_vec(dim, &y) - C64::new(1.0, 0.0)).norm();
        if drift > 1e-6 {
            return Err(KpoError::TraceDrift { t, drift });
        }
        if options.check_positivity {
            check_state(space, &y, t)?;
        }
        record.push(t_out, schedule.delta_at(t_out), &y, dim);
        observe(t_out, schedule.delta_at(t_out), &y)?;
    }
    let mut final_state = DensityMatrix::from_vec(space, &y);
    let removed = final_state.hermitize();
    if removed > 1e-9 {
        log::warn!("sweep final state: Hermiticity error {removed:.2e}");
    }
    final_state.validate()?;
    Ok(SweepOutcome {
        record,
        final_state,
        steps_accepted: stepper.accepted,
        steps_rejected: stepper.rejected,
    })
}

fn check_state(space: FockSpace, y: &[C64], t: f64) -> Result<()> {
    let rho = DensityMatrix::from_vec(space, y);
    let herm = rho.hermiticity_error();
    if herm > 1e-9 {
        return Err(KpoError::IntegratorFailure { t, reason: format!("Hermiticity error {herm:.2e}") });
    }
    let min = rho.min_eigenvalue()?;
    if min < -1e-8 {
        return Err(KpoError::StepSize { t, min_eigenvalue: min });
    }
    Ok(())
}

/// Dormand–Prince 5(4) with FSAL and standard step-size control.
struct DormandPrince {
    rtol: f64,
    atol: f64,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    fsal_valid: bool,
    accepted: usize,
    rejected: usize,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// 5th-order minus 4th-order weights.
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

impl DormandPrince {
    fn new(len: usize, rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            k: std::array::from_fn(|_| vec![ZERO; len]),
            tmp: vec![ZERO; len],
            fsal_valid: false,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Steps from `*t` to exactly `t_end`; returns the suggested next step.
    fn advance_to<F>(&mut self, rhs: &F, t: &mut f64, t_end: f64, y: &mut Vec<C64>, mut h: f64) -> Result<f64>
    where
        F: Fn(f64, &[C64], &mut [C64]),
    {
        let h_min = 1e-14 * t_end.abs().max(1.0);
        let mut suggested = h;
        while *t < t_end - h_min {
            let clipped = h >= t_end - *t;
            let step = if clipped { t_end - *t } else { h };
            if !self.fsal_valid {
                rhs(*t, y, &mut self.k[0]);
                self.fsal_valid = true;
            }
            for s in 1..7 {
                let (done, rest) = self.k.split_at_mut(s);
                for i in 0..y.len() {
                    let mut acc = ZERO;
                    for (j, kj) in done.iter().enumerate() {
                        let a = DP_A[s][j];
                        if a != 0.0 {
                            acc += a * kj[i];
                        }
                    }
                    self.tmp[i] = y[i] + step * acc;
                }
                rhs(*t + DP_C[s] * step, &self.tmp, &mut rest[0]);
            }
            // tmp holds the 5th-order solution (stage 7 input); estimate the error.
            let mut err = 0.0_f64;
            for i in 0..y.len() {
                let mut e = ZERO;
                for (j, kj) in self.k.iter().enumerate() {
                    if DP_E[j] != 0.0 {
                        e += DP_E[j] * kj[i];
                    }
                }
                let scale = self.atol + self.rtol * y[i].norm().max(self.tmp[i].norm());
                err = err.max((step * e).norm() / scale);
            }
            if !err.is_finite() {
                return Err(KpoError::IntegratorFailure { t: *t, reason: "non-finite error estimate".into() });
            }
            if err <= 1.0 {
                *t += step;
                std::mem::swap(y, &mut self.tmp);
                self.k.swap(0, 6);
                self.accepted += 1;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                let next = step * factor;
                if clipped {
                    // Keep the unclipped step for the next interval.
                    suggested = h.max(next);
                    break;
                }
                h = next;
                suggested = h;
            } else {
                self.rejected += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < h_min {
                    return Err(KpoError::IntegratorFailure { t: *t, reason: format!("step size underflow ({h:e})") });
                }
            }
        }
        *t = t_end;
        Ok(suggested)
    }
}

/// Location and size of the π phase switch on a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchPoint {
    pub delta_star: f64,
    /// Phase change across the steep region (rad).
    pub jump_magnitude: f64,
}

/// Unwraps a phase sequence modulo 2π, skipping NaN samples (they stay NaN).
pub fn unwrap_phase(phi: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phi.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &v in phi {
        if v.is_nan() {
            out.push(f64::NAN);
            continue;
        }
        if let Some(p) = prev {
            let d = v - p;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        prev = Some(v);
        out.push(v + offset);
    }
    out
}

/// Δ* at the steepest change of the unwrapped phase over the whole record.
pub fn extract_switch(record: &SweepRecord) -> Result<SwitchPoint> {
    extract_switch_in(record, f64::NEG_INFINITY, f64::INFINITY)
}

/// Like [`extract_switch`], restricted to samples with Δ in `[lo, hi]`.
pub fn extract_switch_in(record: &SweepRecord, lo: f64, hi: f64) -> Result<SwitchPoint> {
    let idx: Vec<usize> = (0..record.len())
        .filter(|&k| record.deltas[k] >= lo && record.deltas[k] <= hi && !record.phi[k].is_nan())
        .collect();
    if idx.len() < 2 {
        return Err(KpoError::NoSwitch { max_jump: 0.0 });
    }
    let phi: Vec<f64> = idx.iter().map(|&k| record.phi[k]).collect();
    let deltas: Vec<f64> = idx.iter().map(|&k| record.deltas[k]).collect();
    let un = unwrap_phase(&phi);

    let steps: Vec<f64> = un.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let slope = |k: usize| {
        let dd = (deltas[k + 1] - deltas[k]).abs();
        if dd > 0.0 {
            steps[k] / dd
        } else {
            0.0
        }
    };
    let k = (0..steps.len()).max_by(|&a, &b| slope(a).total_cmp(&slope(b))).unwrap();
    // Grow the steep region while consecutive phase steps stay above 10 % of the peak
    // and move in the same direction.
    let sign = (un[k + 1] - un[k]).signum();
    let threshold = 0.1 * steps[k];
    let same = |j: usize| (un[j + 1] - un[j]).signum() == sign && steps[j] >= threshold;
    let mut a = k;
    while a > 0 && same(a - 1) {
        a -= 1;
    }
    let mut b = k;
    while b + 1 < steps.len() && same(b + 1) {
        b += 1;
    }
    let jump = (un[b + 1] - un[a]).abs();
    if jump <= FRAC_PI_2 {
        return Err(KpoError::NoSwitch { max_jump: jump });
    }
    Ok(SwitchPoint { delta_star: 0.5 * (deltas[k] + deltas[k + 1]), jump_magnitude: jump })
}

/// Δ*(t_s) ≈ b / t_s^a + c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepTimeFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rms: f64,
}

impl SweepTimeFit {
    pub fn eval(&self, sweep_time: f64) -> f64 {
        self.b / sweep_time.powf(self.a) + self.c
    }
}

/// Least-squares fit of b/x^a + c: linear in (b, c) for fixed a, golden-section over a.
pub fn fit_sweep_time(sweep_times: &[f64], delta_stars: &[f64]) -> Result<SweepTimeFit> {
    if sweep_times.len() != delta_stars.len() || sweep_times.len() < 3 {
        return Err(KpoError::InvalidConfig("need at least three (t_s, Δ*) pairs".into()));
    }
    let solve = |a: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = sweep_times.iter().map(|t| t.powf(-a)).collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), delta_stars.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(delta_stars).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        let b = (n * sxy - sx * sy) / det;
        let c = (sy - b * sx) / n;
        let sse: f64 = xs.iter().zip(delta_stars).map(|(x, y)| (b * x + c - y).powi(2)).sum();
        (b, c, (sse / n).sqrt())
    };
    // Coarse scan then golden-section refinement.
    let grid: Vec<f64> = (1..=400).map(|k| k as f64 * 0.005).collect();
    let best = grid.iter().copied().min_by(|&x, &y| solve(x).2.total_cmp(&solve(y).2)).unwrap();
    let (mut lo, mut hi) = ((best - 0.005).max(1e-6), best + 0.005);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if solve(m1).2 < solve(m2).2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let a = 0.5 * (lo + hi);
    let (b, c, rms) = solve(a);
    Ok(SweepTimeFit { a, b, c, rms })
}
