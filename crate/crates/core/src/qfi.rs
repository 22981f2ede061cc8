//! Quantum Fisher information of steady states with respect to the drive F.
//!
//! The symmetric-logarithmic-derivative form
//! `ℐ = 2 Σ_{λᵢ+λⱼ > floor} |⟨ψᵢ|∂ρ|ψⱼ⟩|² / (λᵢ + λⱼ)` is the reported value; it is
//! cross-checked against the spectral form built from the derivatives of the
//! eigenvalues and eigenprojectors themselves.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::error::{KpoError, Result};
use crate::fock::{FockSpace, SystemParams, C64, ZERO};
use crate::liouvillian::{build_liouvillian, steady_state, DensityMatrix, ThermalEnvironment};

/// Cut-off on λᵢ + λⱼ below which a pair is left out.
pub const SPECTRAL_FLOOR: f64 = 1e-10;
/// Largest relative gap between the two formulas before the point is rejected.
pub const FORMULA_TOLERANCE: f64 = 1e-6;
/// Largest relative change under dF → dF/2 before the point is flagged.
pub const RICHARDSON_TOLERANCE: f64 = 1e-3;
/// Eigenvalues within this relative distance are treated as one degenerate cluster.
const CLUSTER_GAP: f64 = 1e-6;

/// Steady-state QFI at one (Δ, T) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QfiResult {
    pub delta: f64,
    pub temperature: f64,
    pub n_th: f64,
    pub qfi: f64,
    /// Spectral form, extrapolated the same way.
    pub qfi_alternate: f64,
    /// Unextrapolated values at steps dF and dF/2.
    pub qfi_full_step: f64,
    pub qfi_half_step: f64,
    pub richardson_change: f64,
    /// Set when the half-step change exceeds [`RICHARDSON_TOLERANCE`].
    pub flagged: bool,
    pub spectral_floor: f64,
    pub finite_difference_step: f64,
}

/// 4 / (γ²/4 + Δ²), the QFI of a driven damped harmonic oscillator.
pub fn linear_qfi(gamma: f64, delta: f64) -> f64 {
    4.0 / (0.25 * gamma * gamma + delta * delta)
}

/// Ascending eigen-decomposition of a Hermitian matrix.
pub fn hermitian_eigen(m: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| KpoError::NumericalFailure(format!("Hermitian eigendecomposition: {e:?}")))?;
    let n = m.nrows();
    Ok(((0..n).map(|i| evd.S()[i].re).collect(), evd.U().to_owned()))
}

/// ℐ = 2 Σ |⟨ψᵢ|∂ρ|ψⱼ⟩|² / (λᵢ + λⱼ) over pairs with λᵢ + λⱼ > `floor`.
pub fn qfi_spectral(rho: &Mat<C64>, drho: &Mat<C64>, floor: f64) -> Result<f64> {
    let (p, u) = hermitian_eigen(rho)?;
    let d = u.adjoint() * drho * &u;
    let n = p.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = p[i] + p[j];
            if s > floor {
                acc += d[(i, j)].norm_sqr() / s;
            }
        }
    }
    Ok(2.0 * acc)
}

/// ℐ = Σ (∂pᵢ)²/pᵢ + 2 Σ_{i≠j} (pᵢ − pⱼ)²/(pᵢ + pⱼ) |⟨ψᵢ|∂ψⱼ⟩|², from explicit
/// eigenvalue derivatives `dp` and overlaps `overlaps[(i, j)] = ⟨ψᵢ|∂ψⱼ⟩`.
pub fn qfi_from_eigen_derivatives(p: &[f64], dp: &[f64], overlaps: &Mat<C64>, floor: f64) -> f64 {
    let n = p.len();
    let mut acc = 0.0;
    for i in 0..n {
        if 2.0 * p[i] > floor {
            acc += dp[i] * dp[i] / p[i];
        }
        for j in 0..n {
            let s = p[i] + p[j];
            if i != j && s > floor {
                acc += 2.0 * (p[i] - p[j]).powi(2) / s * overlaps[(i, j)].norm_sqr();
            }
        }
    }
    acc
}

/// Spectral form from ρ(F − dF), ρ(F), ρ(F + dF) by central differences.
///
/// Eigenvalues and eigenprojectors of ρ(F ± dF) are taken at the index ranges of the
/// clusters of ρ(F), so only projectors (not eigenvector phases) are differentiated.
/// With P_A the projector on cluster A and p_A its mean eigenvalue,
/// Σ_{i∈A, j∈B} |⟨ψᵢ|∂ψⱼ⟩|² = ‖P_A ∂P_B‖²_F.
pub fn qfi_alternate_fd(
    rho_minus: &Mat<C64>,
    rho: &Mat<C64>,
    rho_plus: &Mat<C64>,
    df: f64,
    floor: f64,
) -> Result<f64> {
    let (p, u) = hermitian_eigen(rho)?;
    let (pm, um) = hermitian_eigen(rho_minus)?;
    let (pp, up) = hermitian_eigen(rho_plus)?;
    let n = p.len();

    // Clusters of ρ(F), in ascending order; everything at or below floor/2 is one cluster.
    let mut clusters: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        let split = i == n || {
            let both_small = p[i] <= 0.5 * floor && p[i - 1] <= 0.5 * floor;
            !both_small && (p[i] - p[i - 1]) > CLUSTER_GAP * p[i].abs()
        };
        if split {
            clusters.push(start..i);
            start = i;
        }
    }
    let mean = |r: &std::ops::Range<usize>| r.clone().map(|i| p[i]).sum::<f64>() / r.len() as f64;

    let projector = |v: &Mat<C64>, r: &std::ops::Range<usize>| -> Mat<C64> {
        let cols = v.subcols(r.start, r.len());
        cols * cols.adjoint()
    };

    let mut acc = 0.0;
    // Eigenvalue term.
    for r in &clusters {
        let pa = mean(r);
        if 2.0 * pa <= floor {
            continue;
        }
        if r.len() == 1 {
            let dp = (pp[r.start] - pm[r.start]) / (2.0 * df);
            acc += dp * dp / pa;
        } else {
            // Degenerate cluster: first-order splitting from the compressed derivative.
            let drho = Mat::from_fn(n, n, |i, j| (rho_plus[(i, j)] - rho_minus[(i, j)]) / (2.0 * df));
            let block_vecs = u.subcols(r.start, r.len());
            let block = block_vecs.adjoint() * &drho * block_vecs;
            let (dps, _) = hermitian_eigen(&block)?;
            acc += dps.iter().map(|d| d * d).sum::<f64>() / pa;
        }
    }
    // Eigenprojector term.
    let dprojectors: Vec<Mat<C64>> = clusters
        .iter()
        .map(|r| {
            let plus = projector(&up, r);
            let minus = projector(&um, r);
            Mat::from_fn(n, n, |i, j| (plus[(i, j)] - minus[(i, j)]) / (2.0 * df))
        })
        .collect();
    for (a, ra) in clusters.iter().enumerate() {
        let ua = u.subcols(ra.start, ra.len());
        for (b, rb) in clusters.iter().enumerate() {
            if a == b {
                continue;
            }
            let (pa, pb) = (mean(ra), mean(rb));
            let s = pa + pb;
            if s <= floor {
                continue;
            }
            let m = ua.adjoint() * &dprojectors[b];
            let norm2: f64 = (0..m.nrows()).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].norm_sqr()).sum();
            acc += 2.0 * (pa - pb).powi(2) / s * norm2;
        }
    }
    Ok(acc)
}

fn steady_matrix(params: &SystemParams, space: FockSpace, env: &ThermalEnvironment) -> Result<Mat<C64>> {
    Ok(steady_state(&build_liouvillian(params, space, env, false))?.matrix().to_owned())
}

fn central_difference(minus: &Mat<C64>, plus: &Mat<C64>, df: f64) -> Mat<C64> {
    Mat::from_fn(minus.nrows(), minus.ncols(), |i, j| (plus[(i, j)] - minus[(i, j)]) / (2.0 * df))
}

/// Default finite-difference step 10⁻³·max(F, 1).
pub fn default_step(f: f64) -> f64 {
    1e-3 * f.abs().max(1.0)
}

/// QFI of the steady state at `params`, with ∂ρ/∂F from central differences of steady states.
pub fn qfi_mixed(
    params: &SystemParams,
    env: &ThermalEnvironment,
    space: FockSpace,
    df: Option<f64>,
) -> Result<QfiResult> {
    params.validate()?;
    let df = df.unwrap_or_else(|| default_step(params.f));
    if !(df > 0.0) {
        return Err(KpoError::InvalidConfig(format!("finite-difference step {df} must be positive")));
    }
    let at = |f: f64| steady_matrix(&params.with_f(f), space, env);
    let rho = at(params.f)?;
    let (minus, plus) = (at(params.f - df)?, at(params.f + df)?);
    let (minus_h, plus_h) = (at(params.f - 0.5 * df)?, at(params.f + 0.5 * df)?);

    let d_full = central_difference(&minus, &plus, df);
    let d_half = central_difference(&minus_h, &plus_h, 0.5 * df);
    let qfi_full_step = qfi_spectral(&rho, &d_full, SPECTRAL_FLOOR)?;
    let qfi_half_step = qfi_spectral(&rho, &d_half, SPECTRAL_FLOOR)?;
    // Richardson-extrapolated derivative, accurate to O(dF⁴).
    let d_extrapolated = Mat::from_fn(d_full.nrows(), d_full.ncols(), |i, j| (4.0 * d_half[(i, j)] - d_full[(i, j)]) / 3.0);
    let qfi = qfi_spectral(&rho, &d_extrapolated, SPECTRAL_FLOOR)?;
    let alt_full = qfi_alternate_fd(&minus, &rho, &plus, df, SPECTRAL_FLOOR)?;
    let alt_half = qfi_alternate_fd(&minus_h, &rho, &plus_h, 0.5 * df, SPECTRAL_FLOOR)?;
    let qfi_alternate = (4.0 * alt_half - alt_full) / 3.0;
    let scale = qfi.abs().max(f64::MIN_POSITIVE);
    if (qfi - qfi_alternate).abs() / scale > FORMULA_TOLERANCE {
        return Err(KpoError::FormulaMismatch { eigenbasis: qfi, spectral: qfi_alternate });
    }
    let richardson_change = (qfi_full_step - qfi_half_step).abs() / qfi_half_step.abs().max(f64::MIN_POSITIVE);
    let flagged = richardson_change > RICHARDSON_TOLERANCE;
    if flagged {
        log::warn!("QFI at Δ = {} changes by {richardson_change:.2e} under step halving", params.delta);
    }
    let qfi = if qfi < 0.0 {
        log::warn!("negative QFI {qfi:e} clamped to 0");
        0.0
    } else {
        qfi
    };
    Ok(QfiResult {
        delta: params.delta,
        temperature: env.temperature,
        n_th: env.n_th,
        qfi,
        qfi_alternate,
        qfi_full_step,
        qfi_half_step,
        richardson_change,
        flagged,
        spectral_floor: SPECTRAL_FLOOR,
        finite_difference_step: df,
    })
}

/// 4(⟨∂ψ|∂ψ⟩ − |⟨ψ|∂ψ⟩|²) with ∂ψ from central differences of `psi`.
///
/// ψ(F ± dF) are rotated onto the phase of ψ(F) before differencing.
pub fn qfi_pure<P>(psi: P, f: f64, df: f64) -> f64
where
    P: Fn(f64) -> Vec<C64>,
{
    let center = psi(f);
    let align = |v: Vec<C64>| -> Vec<C64> {
        let overlap: C64 = center.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        let phase = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { C64::new(1.0, 0.0) };
        v.into_iter().map(|c| c * phase).collect()
    };
    let plus = align(psi(f + df));
    let minus = align(psi(f - df));
    let d: Vec<C64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * df)).collect();
    let dd: f64 = d.iter().map(|c| c.norm_sqr()).sum();
    let proj: C64 = center.iter().zip(&d).map(|(a, b)| a.conj() * b).sum();
    4.0 * (dd - proj.norm_sqr())
}

/// Dominant eigenvector of a steady state that is pure to within 10⁻⁶.
pub fn pure_steady_vector(params: &SystemParams, space: FockSpace, env: &ThermalEnvironment) -> Result<Vec<C64>> {
    let rho = steady_state(&build_liouvillian(params, space, env, false))?;
    let purity = rho.purity();
    if purity < 1.0 - 1e-6 {
        return Err(KpoError::NotPure { purity });
    }
    let (_, u) = rho.eigen()?;
    let n = space.dim();
    Ok((0..n).map(|i| u[(i, n - 1)]).collect())
}

/// [`qfi_pure`] on the steady states of `params`, refusing mixed states.
pub fn qfi_pure_steady(
    params: &SystemParams,
    space: FockSpace,
    env: &ThermalEnvironment,
    df: Option<f64>,
) -> Result<f64> {
    let df = df.unwrap_or_else(|| default_step(params.f));
    // Surface purity errors before differencing.
    pure_steady_vector(params, space, env)?;
    let failure = std::cell::RefCell::new(None);
    let q = qfi_pure(
        |f| {
            pure_steady_vector(&params.with_f(f), space, env).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                vec![ZERO; space.dim()]
            })
        },
        params.f,
        df,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(q),
    }
}

/// One (Δ, T) point of a temperature scan; failures do not stop the scan.
#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub delta: f64,
    pub temperature: f64,
    pub result: Result<QfiResult>,
}

/// QFI over the grid `temperatures × delta_grid` (temperatures in kelvin, Bose occupation at
/// angular frequency `omega_c`). Rows are ordered by temperature, then detuning.
pub fn temperature_scan(
    params: &SystemParams,
    space: FockSpace,
    omega_c: f64,
    temperatures: &[f64],
    delta_grid: &[f64],
) -> Vec<ScanPoint> {
    let points: Vec<(f64, f64)> =
        temperatures.iter().flat_map(|&t| delta_grid.iter().map(move |&d| (t, d))).collect();
    points
        .into_par_iter()
        .map(|(temperature, delta)| {
            let env = ThermalEnvironment::from_temperature(omega_c, temperature);
            let result = qfi_mixed(&params.with_delta(delta), &env, space, None);
            if let Err(e) = &result {
                log::warn!("QFI at Δ = {delta}, T = {temperature} K failed: {e}");
            }
            ScanPoint { delta, temperature, result }
        })
        .collect()
}

/// CSV with columns delta, temperature, qfi, linear_qfi, flagged; failed points leave qfi empty.
/// `linear_qfi` is the closed form at the loss rate `gamma`.
pub fn write_scan_csv<W: Write>(points: &[ScanPoint], gamma: f64, mut w: W) -> std::io::Result<()> {
    writeln!(w, "delta,temperature,qfi,linear_qfi,flagged")?;
    for p in points {
        let linear = linear_qfi(gamma, p.delta);
        match &p.result {
            Ok(r) => writeln!(w, "{},{},{},{linear},{}", p.delta, p.temperature, r.qfi, u8::from(r.flagged))?,
            Err(_) => writeln!(w, "{},{},,{linear},", p.delta, p.temperature)?,
        }
    }
    Ok(())
}

/// ρ(F) = U(F) diag(p(F)) U(F)† with U(F) = exp(iFK) and p(F) = softmax(a + bF),
/// whose eigen-derivatives are known in closed form.
#[derive(Debug, Clone)]
pub struct SyntheticFamily {
    /// Eigenbasis V and eigenvalues k of the Hermitian generator K.
    v: Mat<C64>,
    k: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SyntheticFamily {
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = Mat::<C64>::zeros(dim, dim);
        for i in 0..dim {
            gen[(i, i)] = C64::new(rng.random_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                gen[(i, j)] = z;
                gen[(j, i)] = z.conj();
            }
        }
        let (k, v) = hermitian_eigen(&gen)?;
        let a = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { v, k, a, b })
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// Eigenvalues and their F-derivatives.
    pub fn populations(&self, f: f64) -> (Vec<f64>, Vec<f64>) {
        let w: Vec<f64> = self.a.iter().zip(&self.b).map(|(a, b)| (a + b * f).exp()).collect();
        let z: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / z).collect();
        let mean_b: f64 = p.iter().zip(&self.b).map(|(p, b)| p * b).sum();
        let dp = p.iter().zip(&self.b).map(|(p, b)| p * (b - mean_b)).collect();
        (p, dp)
    }

    /// U(F) = V e^{iFk} V†.
    pub fn unitary(&self, f: f64) -> Mat<C64> {
        let n = self.dim();
        let phases = Mat::from_fn(n, n, |i, j| if i == j { C64::from_polar(1.0, f * self.k[i]) } else { ZERO });
        &self.v * phases * self.v.adjoint()
    }

    fn generator(&self) -> Mat<C64> {
        let n = self.dim();
        let diag = Mat::from_fn(n, n, |i, j| if i == j { C64::new(self.k[i], 0.0) } else { ZERO });
        &self.v * diag * self.v.adjoint()
    }

    pub fn rho(&self, f: f64) -> Mat<C64> {
        let n = self.dim();
        let (p, _) = self.populations(f);
        let u = self.unitary(f);
        let d = Mat::from_fn(n, n, |i, j| if i == j { C64::new(p[i], 0.0) } else { ZERO });
        &u * d * u.adjoint()
    }

    /// ∂ρ/∂F = i[K, ρ] + U diag(∂p) U†.
    pub fn drho(&self, f: f64) -> Mat<C64> {
        let n = self.dim();
        let rho = self.rho(f);
        let k = self.generator();
        let comm = &k * &rho - &rho * &k;
        let (_, dp) = self.populations(f);
        let u = self.unitary(f);
        let d = Mat::from_fn(n, n, |i, j| if i == j { C64::new(dp[i], 0.0) } else { ZERO });
        let pop = &u * d * u.adjoint();
        Mat::from_fn(n, n, |i, j| C64::new(0.0, 1.0) * comm[(i, j)] + pop[(i, j)])
    }

    /// (p, ∂p, ⟨ψᵢ|∂ψⱼ⟩) in the eigenbasis ψᵢ = U eᵢ, where ∂ψⱼ = iKψⱼ.
    pub fn eigen_derivatives(&self, f: f64) -> (Vec<f64>, Vec<f64>, Mat<C64>) {
        let (p, dp) = self.populations(f);
        let u = self.unitary(f);
        let overlaps = u.adjoint() * self.generator() * &u;
        let overlaps = Mat::from_fn(self.dim(), self.dim(), |i, j| C64::new(0.0, 1.0) * overlaps[(i, j)]);
        (p, dp, overlaps)
    }
}

/// Relative gap between the two QFI formulas on a synthetic family at `f`.
pub fn synthetic_formula_gap(family: &SyntheticFamily, f: f64) -> Result<f64> {
    let eq = qfi_spectral(&family.rho(f), &family.drho(f), SPECTRAL_FLOOR)?;
    let (p, dp, overlaps) = family.eigen_derivatives(f);
    let alt = qfi_from_eigen_derivatives(&p, &dp, &overlaps, SPECTRAL_FLOOR);
    Ok((eq - alt).abs() / eq.abs().max(f64::MIN_POSITIVE))
}

impl DensityMatrix {
    /// Convenience for callers holding a [`DensityMatrix`].
    pub fn qfi_spectral(&self, drho: &Mat<C64>) -> Result<f64> {
        qfi_spectral(self.matrix(), drho, SPECTRAL_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::coherent_state;

    #[test]
    fn linear_closed_form_values() {
        assert_eq!(linear_qfi(2.0, 0.0), 4.0);
        assert!((linear_qfi(2.0, 3f64.sqrt()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_oscillator_matches_closed_form() {
        let space = FockSpace::new(16).unwrap();
        let env = ThermalEnvironment::zero_temperature();
        for (gamma, delta) in [(2.0, 0.0), (2.0, 3f64.sqrt()), (1.0, -0.7)] {
            let p = SystemParams::linear(1.0, gamma, delta);
            let r = qfi_mixed(&p, &env, space, None).unwrap();
            let exact = linear_qfi(gamma, delta);
            assert!((r.qfi - exact).abs() / exact < 1e-6, "{r:?} vs {exact}");
            assert!(!r.flagged);
            let pure = qfi_pure_steady(&p, space, &env, None).unwrap();
            assert!((pure - r.qfi).abs() / r.qfi < 1e-4, "{pure} vs {}", r.qfi);
        }
    }

    #[test]
    fn pure_form_gauge_and_constant_families() {
        let space = FockSpace::new(10).unwrap();
        let psi0 = coherent_state(C64::new(0.8, -0.3), space).amplitudes;
        let constant = qfi_pure(|_| psi0.clone(), 1.0, 1e-3);
        assert_eq!(constant, 0.0);
        let gauge = qfi_pure(|f| psi0.iter().map(|c| c * C64::from_polar(1.0, 0.9 * f)).collect(), 1.0, 1e-3);
        assert!(gauge.abs() < 1e-10, "{gauge}");
        // Displacement family |α + F⟩ has QFI 4.
        let displaced = qfi_pure(|f| coherent_state(C64::new(f, 0.0), FockSpace::new(40).unwrap()).amplitudes, 1.0, 1e-3);
        assert!((displaced - 4.0).abs() < 1e-5, "{displaced}");
    }

    #[test]
    fn mixed_state_is_refused_by_pure_form() {
        let space = FockSpace::new(12).unwrap();
        let env = ThermalEnvironment::with_occupation(0.2);
        let p = SystemParams::linear(1.0, 2.0, 0.0);
        assert!(matches!(qfi_pure_steady(&p, space, &env, None), Err(KpoError::NotPure { .. })));
    }

    #[test]
    fn formulas_agree_on_synthetic_families() {
        for seed in 0..5 {
            let fam = SyntheticFamily::random(6, seed).unwrap();
            let gap = synthetic_formula_gap(&fam, 0.37).unwrap();
            assert!(gap < 1e-10, "seed {seed}: {gap}");
            // Finite-difference derivative of the family reproduces the analytic one.
            let h = 1e-5;
            let fd = central_difference(&fam.rho(0.37 - h), &fam.rho(0.37 + h), h);
            let exact = fam.drho(0.37);
            let err = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| (fd[(i, j)] - exact[(i, j)]).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn projector_form_matches_on_synthetic_family() {
        let fam = SyntheticFamily::random(5, 11).unwrap();
        let f = 0.2;
        let h = 1e-4;
        let alt = qfi_alternate_fd(&fam.rho(f - h), &fam.rho(f), &fam.rho(f + h), h, SPECTRAL_FLOOR).unwrap();
        let eq = qfi_spectral(&fam.rho(f), &fam.drho(f), SPECTRAL_FLOOR).unwrap();
        assert!((alt - eq).abs() / eq < 1e-6, "{alt} vs {eq}");
    }

    #[test]
    fn thermal_occupation_lowers_qfi() {
        let space = FockSpace::new(14).unwrap();
        let p = SystemParams::linear(0.5, 1.0, 0.0);
        let cold = qfi_mixed(&p, &ThermalEnvironment::zero_temperature(), space, None).unwrap();
        let warm = qfi_mixed(&p, &ThermalEnvironment::with_occupation(0.3), space, None).unwrap();
        assert!(warm.qfi < cold.qfi);
    }
}
