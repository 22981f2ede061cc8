//! Phase-space diagnostics and switching-point estimation.
//!
//! Husimi functions are evaluated as Q(x, p) = ⟨α|ρ|α⟩/π with α = x + ip, so the
//! Husimi axes are Re α and Im α (half the quadrature expectations x = ⟨a + a†⟩).
//! The sign of x is the same in both conventions, which is all the half-plane
//! probabilities need.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DVector, Dyn, OMatrix, Vector3, U3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use crate::dynamics::{integrate_sweep_observed, SweepOptions, SweepRecord, SweepSchedule};
use crate::error::{KpoError, Result};
use crate::fock::{coherent_amplitudes, FockSpace, SystemParams, C64};
use crate::liouvillian::{DensityMatrix, ThermalEnvironment};
use crate::trajectories::TrajectoryRecord;

/// Square sampling window for [`husimi_q`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HusimiSpec {
    pub half_width: f64,
    pub points: usize,
}

impl HusimiSpec {
    pub const DEFAULT_POINTS: usize = 201;

    /// Half-width max(4, 2√⟨n⟩ + 3), 201 points per axis.
    pub fn for_state(rho: &DensityMatrix) -> Self {
        let n = rho.mean_photon_number().max(0.0);
        Self { half_width: (2.0 * n.sqrt() + 3.0).max(4.0), points: Self::DEFAULT_POINTS }
    }
}

/// Q sampled at cell midpoints of a rectangular grid; `values[ix * np + ip]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HusimiGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
    pub values: Vec<f64>,
}

impl HusimiGrid {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_min + (ix as f64 + 0.5) * self.dx()
    }

    pub fn p_at(&self, ip: usize) -> f64 {
        self.p_min + (ip as f64 + 0.5) * self.dp()
    }

    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.np + ip]
    }

    /// Midpoint-rule integral of Q over the grid.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dp()
    }

    /// Grid points that are strict local maxima above `threshold`, as (x, p, Q).
    pub fn local_maxima(&self, threshold: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for ix in 1..self.nx - 1 {
            for ip in 1..self.np - 1 {
                let v = self.value(ix, ip);
                if v < threshold {
                    continue;
                }
                let is_max = (-1i64..=1).all(|a| {
                    (-1i64..=1).all(|b| {
                        (a == 0 && b == 0) || self.value((ix as i64 + a) as usize, (ip as i64 + b) as usize) < v
                    })
                });
                if is_max {
                    out.push((self.x_at(ix), self.p_at(ip), v));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,p,q")?;
        for ix in 0..self.nx {
            for ip in 0..self.np {
                writeln!(w, "{},{},{}", self.x_at(ix), self.p_at(ip), self.value(ix, ip))?;
            }
        }
        Ok(())
    }
}

/// Husimi function of ρ on a centred square grid.
pub fn husimi_q(rho: &DensityMatrix, spec: &HusimiSpec) -> Result<HusimiGrid> {
    if !(spec.half_width > 0.0) || spec.points < 3 {
        return Err(KpoError::InvalidConfig(format!("bad Husimi grid {spec:?}")));
    }
    let dim = rho.space().dim();
    let n = spec.points;
    let w = spec.half_width;
    let step = 2.0 * w / n as f64;
    let mat = rho.matrix();
    let mut values = vec![0.0; n * n];
    let mut rho_c = vec![C64::new(0.0, 0.0); dim];
    for ix in 0..n {
        let x = -w + (ix as f64 + 0.5) * step;
        for ip in 0..n {
            let p = -w + (ip as f64 + 0.5) * step;
            let c = coherent_amplitudes(C64::new(x, p), dim);
            for (i, slot) in rho_c.iter_mut().enumerate() {
                *slot = (0..dim).map(|j| mat[(i, j)] * c[j]).sum();
            }
            let q: C64 = c.iter().zip(&rho_c).map(|(a, b)| a.conj() * b).sum();
            values[ix * n + ip] = (q.re / PI).max(0.0);
        }
    }
    let grid = HusimiGrid { x_min: -w, x_max: w, p_min: -w, p_max: w, nx: n, np: n, values };
    let mass = grid.mass();
    if (mass - 1.0).abs() > 1e-3 {
        log::warn!("Husimi grid of half-width {w} holds mass {mass:.6}; the state is not fully enclosed");
    }
    Ok(grid)
}

/// 𝒫_{Φ−}: weight of Q in the half plane x < 0, relative to the grid's total mass.
///
/// The column straddling x = 0 contributes half its weight.
pub fn half_plane_probability(q: &HusimiGrid) -> Result<f64> {
    let mass = q.mass();
    if !((mass - 1.0).abs() <= 1e-2) {
        return Err(KpoError::UnnormalizedGrid { mass });
    }
    let cell = q.dx() * q.dp();
    let mut left = 0.0;
    for ix in 0..q.nx {
        let x = q.x_at(ix);
        let weight = if x.abs() < 1e-12 * q.dx().max(1.0) {
            0.5
        } else if x < 0.0 {
            1.0
        } else {
            continue;
        };
        left += weight * (0..q.np).map(|ip| q.value(ix, ip)).sum::<f64>();
    }
    Ok((left * cell / mass).clamp(0.0, 1.0))
}

/// Matrix of the projector-like operator Π with 𝒫_{Φ−} = tr(ρΠ), integrating the
/// coherent-state resolution of identity over Re α < 0 in closed form:
///
/// Π_mn = Γ((m+n)/2 + 1) A_{m−n} / (2π √(m! n!)), with A₀ = π, A_k = 0 for even k ≠ 0
/// and A_k = −2 i^{k−1}/k for odd k.
pub fn half_plane_operator(space: FockSpace) -> Vec<C64> {
    let dim = space.dim();
    // Γ(s/2 + 1) for s = 0..2dim and √(k!) for k < dim.
    let mut gamma_half = vec![0.0; 2 * dim];
    gamma_half[0] = 1.0;
    gamma_half[1] = PI.sqrt() / 2.0;
    for s in 2..2 * dim {
        gamma_half[s] = gamma_half[s - 2] * (s as f64 / 2.0);
    }
    let mut sqrt_fact = vec![1.0; dim];
    for k in 1..dim {
        sqrt_fact[k] = sqrt_fact[k - 1] * (k as f64).sqrt();
    }
    let mut out = vec![C64::new(0.0, 0.0); dim * dim];
    for n in 0..dim {
        for m in 0..dim {
            let k = m as i64 - n as i64;
            let angular = if k == 0 {
                C64::new(PI, 0.0)
            } else if k % 2 == 0 {
                continue;
            } else {
                -2.0 * C64::i().powi((k - 1) as i32) / k as f64
            };
            out[m + n * dim] = angular * gamma_half[m + n] / (2.0 * PI * sqrt_fact[m] * sqrt_fact[n]);
        }
    }
    out
}

/// tr(ρΠ) for column-stacked ρ and Π.
fn half_plane_from_vec(dim: usize, rho: &[C64], pi: &[C64]) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for n in 0..dim {
        for m in 0..dim {
            acc += rho[m + n * dim] * pi[n + m * dim];
        }
    }
    acc.re
}

/// Switching-probability distribution over a down-sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchPdf {
    /// Midpoint detuning of each output step, in sweep order.
    pub delta_grid: Vec<f64>,
    /// Per-step switching probability, negatives clipped to zero.
    pub p_tr: Vec<f64>,
    /// Unclipped increments.
    pub raw: Vec<f64>,
    /// Total magnitude of the clipped negative increments.
    pub clipped_mass: f64,
    /// Probability of the initially occupied half plane at each output sample.
    pub initial_lobe_probability: Vec<f64>,
}

impl SwitchPdf {
    pub fn total(&self) -> f64 {
        self.p_tr.iter().sum()
    }

    /// Normalized mean detuning of the switch.
    pub fn mean(&self) -> f64 {
        let total = self.total();
        self.delta_grid.iter().zip(&self.p_tr).map(|(d, p)| d * p).sum::<f64>() / total
    }

    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let total = self.total();
        (self.delta_grid.iter().zip(&self.p_tr).map(|(d, p)| (d - mean).powi(2) * p).sum::<f64>() / total).sqrt()
    }

    /// Detuning of the largest per-step probability.
    pub fn mode(&self) -> f64 {
        let k = self
            .p_tr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.delta_grid[k]
    }

    /// Total switching probability falling into each bin `[edges[i], edges[i+1])`.
    pub fn binned(&self, edges: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; edges.len().saturating_sub(1)];
        for (d, p) in self.delta_grid.iter().zip(&self.p_tr) {
            if let Some(i) = edges.windows(2).position(|e| *d >= e[0] && *d < e[1]) {
                out[i] += p;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta,p_tr")?;
        for (d, p) in self.delta_grid.iter().zip(&self.p_tr) {
            writeln!(w, "{d},{p}")?;
        }
        Ok(())
    }
}

/// Transition probability per output step of a monitored (γ → γ + κ) deterministic sweep:
/// 𝒫_tr^i = 𝒫^i − 𝒫^{i+1}, where 𝒫 is the half-plane probability of the lobe occupied
/// at the start of the sweep.
pub fn transition_pdf(
    params: &SystemParams,
    schedule: &SweepSchedule,
    space: FockSpace,
    env: &ThermalEnvironment,
    samples: usize,
) -> Result<SwitchPdf> {
    let dim = space.dim();
    let pi_minus = half_plane_operator(space);
    let mut deltas = Vec::with_capacity(samples);
    let mut minus = Vec::with_capacity(samples);
    let options = SweepOptions { samples, ..SweepOptions::monitored() };
    integrate_sweep_observed(params, schedule, None, space, env, &options, |_, delta, rho| {
        deltas.push(delta);
        minus.push(half_plane_from_vec(dim, rho, &pi_minus));
        Ok(())
    })?;
    let lobe: Vec<f64> = if minus[0] >= 0.5 { minus } else { minus.iter().map(|m| 1.0 - m).collect() };
    let raw: Vec<f64> = lobe.windows(2).map(|w| w[0] - w[1]).collect();
    let clipped_mass: f64 = raw.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    if clipped_mass > 0.1 {
        log::warn!("transition PDF clipped {clipped_mass:.3} of negative mass; one-way switching assumption fails");
    }
    Ok(SwitchPdf {
        delta_grid: deltas.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        p_tr: raw.iter().map(|v| v.max(0.0)).collect(),
        raw,
        clipped_mass,
        initial_lobe_probability: lobe,
    })
}

/// Least-squares fit of Φ(Δ) = arctan(A(Δ − Δ*)) + C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArctanFit {
    pub delta_star: f64,
    pub slope_a: f64,
    /// Offset, wrapped into (−π, π].
    pub offset_c: f64,
    pub fit_rms: f64,
    pub points: usize,
    pub evaluations: usize,
}

impl ArctanFit {
    pub fn eval(&self, delta: f64) -> f64 {
        (self.slope_a * (delta - self.delta_star)).atan() + self.offset_c
    }
}

/// Anything carrying a phase-versus-detuning record.
pub trait PhaseRecord {
    fn deltas(&self) -> &[f64];
    fn phases(&self) -> &[f64];
}

impl PhaseRecord for SweepRecord {
    fn deltas(&self) -> &[f64] {
        &self.deltas
    }
    fn phases(&self) -> &[f64] {
        &self.phi
    }
}

/// Uses the boxcar-smoothed measured phase.
impl PhaseRecord for TrajectoryRecord {
    fn deltas(&self) -> &[f64] {
        &self.deltas
    }
    fn phases(&self) -> &[f64] {
        &self.phi_meas
    }
}

struct ArctanProblem<'a> {
    deltas: &'a [f64],
    phases: &'a [f64],
    params: Vector3<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U3> for ArctanProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U3>;
    type ParameterStorage = Owned<f64, U3>;

    fn set_params(&mut self, p: &Vector3<f64>) {
        self.params.copy_from(p);
    }

    fn params(&self) -> Vector3<f64> {
        self.params
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [a, d, c] = [self.params[0], self.params[1], self.params[2]];
        Some(DVector::from_iterator(
            self.deltas.len(),
            self.deltas.iter().zip(self.phases).map(|(x, y)| (a * (x - d)).atan() + c - y),
        ))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U3>> {
        let [a, d] = [self.params[0], self.params[1]];
        let mut j = OMatrix::<f64, Dyn, U3>::zeros(self.deltas.len());
        for (row, x) in self.deltas.iter().enumerate() {
            let u = x - d;
            let s = 1.0 / (1.0 + (a * u).powi(2));
            j[(row, 0)] = u * s;
            j[(row, 1)] = -a * s;
            j[(row, 2)] = 1.0;
        }
        Some(j)
    }
}

/// Wraps into (−π, π].
fn wrap(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Fits the arctan model over Δ ∈ [lo, hi].
///
/// Phases are first moved to a branch where the plateau seen first in the record sits at
/// ∓π/2 and the opposite plateau at ±π/2. Δ* starts from the best single-step split of the
/// shifted data, A from the window width and C from the mean tail phase.
pub fn fit_arctan<R: PhaseRecord + ?Sized>(record: &R, lo: f64, hi: f64) -> Result<ArctanFit> {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let (deltas, phases): (Vec<f64>, Vec<f64>) = record
        .deltas()
        .iter()
        .zip(record.phases())
        .filter(|(d, f)| **d >= lo && **d <= hi && f.is_finite())
        .map(|(d, f)| (*d, *f))
        .unzip();
    let n = deltas.len();
    if n < 8 {
        return Err(KpoError::InvalidConfig(format!("only {n} usable phase samples in [{lo}, {hi}]")));
    }

    // Circular mean of the first tenth of the record.
    let head = (n / 10).max(3);
    let (sx, sy) = phases[..head].iter().fold((0.0, 0.0), |(sx, sy), f| (sx + f.cos(), sy + f.sin()));
    let first_plateau = sy.atan2(sx);
    let increasing = deltas[n - 1] > deltas[0];

    // The switch may run either way round the circle, so both branches that put the
    // first plateau at ∓π/2 are tried and the better fit kept.
    let mut best: Option<ArctanFit> = None;
    let mut last_err = None;
    for branch in [1.0, -1.0] {
        let shift = first_plateau + branch * FRAC_PI_2;
        let shifted: Vec<f64> = phases.iter().map(|f| wrap(f - shift)).collect();
        let ascending = (branch > 0.0) == increasing;
        match fit_branch(&deltas, &shifted, lo, hi, ascending) {
            Ok(mut fit) => {
                fit.offset_c = wrap(fit.offset_c + shift);
                if best.as_ref().is_none_or(|b| fit.fit_rms < b.fit_rms) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("both branches were tried"))
}

fn fit_branch(deltas: &[f64], shifted: &[f64], lo: f64, hi: f64, ascending: bool) -> Result<ArctanFit> {
    let n = deltas.len();
    let split = best_step_split(shifted);
    let d0 = 0.5 * (deltas[split - 1] + deltas[split]);
    let width = hi - lo;
    let a0 = if ascending { 10.0 / width } else { -10.0 / width };
    let tail = (n / 10).max(3);
    let c0 = 0.5
        * (shifted[..tail].iter().sum::<f64>() / tail as f64 + shifted[n - tail..].iter().sum::<f64>() / tail as f64);
    let initial = [a0, d0, c0];

    let problem = ArctanProblem { deltas, phases: shifted, params: Vector3::new(a0, d0, c0) };
    let (solved, report) = LevenbergMarquardt::new().with_scale_diag(true).with_patience(400).minimize(problem);
    let residuals = solved.residuals().map(|r| r.iter().copied().collect::<Vec<_>>()).unwrap_or_default();
    let [a, d, c] = [solved.params[0], solved.params[1], solved.params[2]];
    if !report.termination.was_successful() || !a.is_finite() || !d.is_finite() {
        return Err(KpoError::FitFailed { initial, residuals });
    }
    let fit_rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let jump = ((a * (hi - d)).atan() - (a * (lo - d)).atan()).abs();
    if jump <= FRAC_PI_2 {
        return Err(KpoError::NoSwitch { max_jump: jump });
    }
    if d < lo || d > hi {
        return Err(KpoError::FitFailed { initial, residuals });
    }
    Ok(ArctanFit {
        delta_star: d,
        slope_a: a,
        offset_c: c,
        fit_rms,
        points: n,
        evaluations: report.number_of_evaluations,
    })
}

/// Index k that best splits the series into a −π/2 run and a +π/2 run, in either order.
fn best_step_split(shifted: &[f64]) -> usize {
    // Against plateaus ∓π/2 the squared error of a split at k is, up to a constant,
    // ±π(2 Σ_{i<k} s_i − Σ s_i).
    let total: f64 = shifted.iter().sum();
    let mut prefix = 0.0;
    let (mut best_k, mut best_cost) = (1, f64::INFINITY);
    for k in 1..shifted.len() {
        prefix += shifted[k - 1];
        let cost = -(2.0 * prefix - total).abs();
        if cost < best_cost {
            best_cost = cost;
            best_k = k;
        }
    }
    best_k
}
