//! Lindblad generator, steady states and Liouvillian spectra.
//!
//! Density matrices are vectorized by column stacking: entry `ρ[i, j]` sits at
//! index `i + j·dim`. With this convention `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`, so the
//! commutator reads `−i(𝟙 ⊗ H − Hᵀ ⊗ 𝟙)`.
//!
//! Two independent representations of the same generator live here: the dense
//! [`SuperOperator`] (Kronecker products of dense Fock matrices, used for
//! steady states and spectra) and the banded, matrix-free [`MasterEquation`]
//! used by the time integrators.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{KpoError, Result};
use crate::fock::{build_hamiltonian, make_ladder_operators, FockOperator, FockSpace, SystemParams, C64, I, ONE, ZERO};

const HBAR: f64 = 1.054_571_817e-34;
const K_B: f64 = 1.380_649e-23;

/// Below this, `|x| + |p|` carries no phase information.
pub const PHASE_UNDEFINED_BELOW: f64 = 1e-6;

/// Thermal bath seen by the single-photon loss channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnvironment {
    /// Bose occupation at the cavity frequency.
    pub n_th: f64,
    /// Bare cavity angular frequency ω_c (rad/s).
    pub omega_c: f64,
    /// Bath temperature (K).
    pub temperature: f64,
}

impl Default for ThermalEnvironment {
    fn default() -> Self {
        Self::zero_temperature()
    }
}

impl ThermalEnvironment {
    /// ω_c = 2π · 7.5 GHz.
    pub const CIRCUIT_QED_OMEGA_C: f64 = 2.0 * PI * 7.5e9;

    pub fn zero_temperature() -> Self {
        Self { n_th: 0.0, omega_c: Self::CIRCUIT_QED_OMEGA_C, temperature: 0.0 }
    }

    pub fn from_temperature(omega_c: f64, temperature: f64) -> Self {
        Self { n_th: bose_occupation(omega_c, temperature), omega_c, temperature }
    }

    /// Bath with a given occupation, frequency and temperature left unset.
    pub fn with_occupation(n_th: f64) -> Self {
        Self { n_th, omega_c: f64::NAN, temperature: f64::NAN }
    }
}

/// 1/(exp(ħω/k_BT) − 1), zero at T = 0.
pub fn bose_occupation(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// Mean photon number, quadratures and phase of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub n_mean: f64,
    /// ⟨a + a†⟩
    pub x: f64,
    /// ⟨−i(a − a†)⟩
    pub p: f64,
    /// atan2(p, x) in (−π, π]; NaN when the field amplitude vanishes.
    pub phi: f64,
}

/// atan2 folded onto (−π, π].
pub fn phase_of(x: f64, p: f64) -> f64 {
    let phi = p.atan2(x);
    if phi <= -PI {
        PI
    } else {
        phi
    }
}

/// Density matrix on a truncated Fock space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    space: FockSpace,
    matrix: Mat<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(space: FockSpace, matrix: Mat<C64>) -> Self {
        assert_eq!(matrix.nrows(), space.dim());
        assert_eq!(matrix.ncols(), space.dim());
        Self { space, matrix }
    }

    /// Rebuilds ρ from its column-stacked vector.
    pub fn from_vec(space: FockSpace, v: &[C64]) -> Self {
        let n = space.dim();
        assert_eq!(v.len(), n * n);
        Self::from_matrix(space, Mat::from_fn(n, n, |i, j| v[i + j * n]))
    }

    pub fn to_vec(&self) -> Vec<C64> {
        let n = self.space.dim();
        let mut v = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                v.push(self.matrix[(i, j)]);
            }
        }
        v
    }

    pub fn fock(space: FockSpace, k: usize) -> Self {
        let n = space.dim();
        Self::from_matrix(space, Mat::from_fn(n, n, |i, j| if i == k && j == k { ONE } else { ZERO }))
    }

    pub fn vacuum(space: FockSpace) -> Self {
        Self::fock(space, 0)
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) vector; the result has unit trace.
    pub fn pure(space: FockSpace, psi: &[C64]) -> Self {
        let n = space.dim();
        assert_eq!(psi.len(), n);
        let norm2: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        Self::from_matrix(space, Mat::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / norm2))
    }

    /// Σ wₖ ρₖ.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Self {
        let space = parts[0].1.space;
        let n = space.dim();
        Self::from_matrix(
            space,
            Mat::from_fn(n, n, |i, j| parts.iter().map(|(w, r)| *w * r.matrix[(i, j)]).sum()),
        )
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> C64 {
        (0..self.space.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// tr(Oρ).
    pub fn expect(&self, op: &FockOperator) -> C64 {
        let n = self.space.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += op.get(i, k) * self.matrix[(k, i)];
            }
        }
        acc
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.space.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.populations().iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// tr(aρ).
    pub fn mean_a(&self) -> C64 {
        (0..self.space.dim() - 1)
            .map(|m| ((m + 1) as f64).sqrt() * self.matrix[(m + 1, m)])
            .sum()
    }

    pub fn observables(&self) -> Observables {
        observables_from_vec(self.space.dim(), &self.to_vec())
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.space.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Replaces ρ by (ρ + ρ†)/2 / tr; returns the Hermiticity error removed.
    pub fn hermitize(&mut self) -> f64 {
        let err = self.hermiticity_error();
        let n = self.space.dim();
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (self.matrix[(i, j)] + self.matrix[(j, i)].conj()));
        let tr: f64 = (0..n).map(|i| sym[(i, i)].re).sum();
        self.matrix = Mat::from_fn(n, n, |i, j| sym[(i, j)] / tr);
        err
    }

    /// Ascending eigen-decomposition of the Hermitian part.
    pub fn eigen(&self) -> Result<(Vec<f64>, Mat<C64>)> {
        let evd = self
            .matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| KpoError::NumericalFailure(format!("density-matrix eigendecomposition: {e:?}")))?;
        let n = self.space.dim();
        let values = (0..n).map(|i| evd.S()[i].re).collect();
        Ok((values, evd.U().to_owned()))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let values = self
            .matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| KpoError::NumericalFailure(format!("density-matrix eigenvalues: {e:?}")))?;
        Ok(values.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn purity(&self) -> f64 {
        let n = self.space.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.matrix[(i, j)].norm_sqr();
            }
        }
        acc
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-9 {
            return Err(KpoError::NumericalFailure(format!("ρ not Hermitian (error {herm:e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-9 {
            return Err(KpoError::NumericalFailure(format!("tr ρ = {tr}")));
        }
        let min = self.min_eigenvalue()?;
        if min < -1e-8 {
            return Err(KpoError::NumericalFailure(format!("ρ not positive (min eigenvalue {min:e})")));
        }
        Ok(())
    }
}

/// Observables straight from a column-stacked ρ.
pub fn observables_from_vec(dim: usize, rho: &[C64]) -> Observables {
    let mut n_mean = 0.0;
    let mut a = ZERO;
    for m in 0..dim {
        n_mean += m as f64 * rho[m + m * dim].re;
        if m + 1 < dim {
            a += ((m + 1) as f64).sqrt() * rho[(m + 1) + m * dim];
        }
    }
    let x = 2.0 * a.re;
    let p = 2.0 * a.im;
    let phi = if x.abs() + p.abs() < PHASE_UNDEFINED_BELOW { f64::NAN } else { phase_of(x, p) };
    Observables { n_mean, x, p, phi }
}

pub fn trace_of_vec(dim: usize, rho: &[C64]) -> C64 {
    (0..dim).map(|m| rho[m + m * dim]).sum()
}

/// Dense matrix acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    space: FockSpace,
    matrix: Mat<C64>,
}

impl SuperOperator {
    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let d = self.space.super_dim();
        assert_eq!(v.len(), d);
        let mut out = vec![ZERO; d];
        for (col, &x) in v.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            for (row, o) in out.iter_mut().enumerate() {
                *o += self.matrix[(row, col)] * x;
            }
        }
        out
    }

    /// ‖tr ∘ 𝓛‖_∞: the largest column sum over diagonal rows.
    pub fn trace_preservation_error(&self) -> f64 {
        let n = self.space.dim();
        let d = self.space.super_dim();
        (0..d)
            .map(|col| (0..n).map(|k| self.matrix[(k + k * n, col)]).sum::<C64>().norm())
            .fold(0.0, f64::max)
    }
}

/// Rates of the three dissipators.
#[derive(Debug, Clone, Copy)]
struct DissipationRates {
    /// on a
    emission: f64,
    /// on a†
    absorption: f64,
    /// on a²
    two_photon: f64,
}

fn dissipation_rates(params: &SystemParams, env: &ThermalEnvironment, include_measurement: bool) -> DissipationRates {
    let gamma = if include_measurement { params.gamma + params.kappa } else { params.gamma };
    DissipationRates {
        emission: gamma * (1.0 + env.n_th),
        absorption: gamma * env.n_th,
        two_photon: params.eta,
    }
}

/// ρ̇ = −i[H,ρ] + γ'(1+n_th)𝒟[a]ρ + γ' n_th 𝒟[a†]ρ + η𝒟[a²]ρ as a dense superoperator,
/// with γ' = γ + κ when `include_measurement` is set.
pub fn build_liouvillian(
    params: &SystemParams,
    space: FockSpace,
    env: &ThermalEnvironment,
    include_measurement: bool,
) -> SuperOperator {
    let n = space.dim();
    let d = space.super_dim();
    let h = build_hamiltonian(params, space);
    let ops = make_ladder_operators(space);
    let rates = dissipation_rates(params, env, include_measurement);
    let a2 = ops.a.mul(&ops.a);
    let jumps = [(rates.emission, &ops.a), (rates.absorption, &ops.a_dag), (rates.two_photon, &a2)];

    // Left factor K = −iH − ½ Σ c J†J acts as Kρ + ρK†.
    let mut k = h.scale(-I);
    for (rate, j) in jumps {
        if rate != 0.0 {
            k = k.sub(&j.adjoint().mul(j).scale(C64::new(0.5 * rate, 0.0)));
        }
    }
    let k_dag = k.adjoint();

    let mut m = Mat::<C64>::zeros(d, d);
    // 𝟙 ⊗ K: (i + jN, l + jN) ← K[i, l]
    // (K†)ᵀ ⊗ 𝟙: (i + jN, i + lN) ← K†[l, j]
    for j in 0..n {
        for i in 0..n {
            for l in 0..n {
                let kv = k.get(i, l);
                if kv != ZERO {
                    m[(i + j * n, l + j * n)] += kv;
                }
                let kd = k_dag.get(l, j);
                if kd != ZERO {
                    m[(i + j * n, i + l * n)] += kd;
                }
            }
        }
    }
    // J̄ ⊗ J: (i + jN, k + lN) ← conj(J[j, l]) J[i, k]
    for (rate, jop) in jumps {
        if rate == 0.0 {
            continue;
        }
        let nz: Vec<(usize, usize, C64)> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = jop.get(r, c);
                (v != ZERO).then_some((r, c, v))
            })
            .collect();
        for &(i, kk, v1) in &nz {
            for &(j, l, v2) in &nz {
                m[(i + j * n, kk + l * n)] += rate * v1 * v2.conj();
            }
        }
    }
    SuperOperator { space, matrix: m }
}

/// Banded, matrix-free form of the same generator with the detuning split off:
/// 𝓛(Δ) = 𝓛₀ + Δ 𝓛_Δ.
///
/// Every operator in the model couples Fock states at most two apart, so the
/// non-Hermitian part `K = −iH − ½Σ cⱼ Jⱼ†Jⱼ` has five diagonals and each jump
/// operator is a single shifted diagonal. One application costs O(dim²).
#[derive(Debug, Clone)]
pub struct MasterEquation {
    dim: usize,
    /// `k_band[o][m] = K₀[m, m + o − 2]`, zero outside the matrix.
    k_band: [Vec<C64>; 5],
    /// (shift s, weights w, rate c) for J[m, m+s] = w[m].
    jumps: Vec<(isize, Vec<f64>, f64)>,
}

impl MasterEquation {
    #[allow(clippy::needless_range_loop)]
    pub fn new(params: &SystemParams, space: FockSpace, env: &ThermalEnvironment, include_measurement: bool) -> Self {
        let dim = space.dim();
        let rates = dissipation_rates(params, env, include_measurement);
        let g = params.g();
        let f = params.f;
        let mut k_band: [Vec<C64>; 5] = std::array::from_fn(|_| vec![ZERO; dim]);
        for m in 0..dim {
            let mf = m as f64;
            // −iH with the detuning removed.
            let h_diag = 0.5 * params.u * mf * (mf - 1.0);
            // J†J diagonals in the truncated space.
            let n_aa = mf;
            let n_adad = if m + 1 < dim { mf + 1.0 } else { 0.0 };
            let n_a2 = mf * (mf - 1.0);
            let decay = 0.5 * (rates.emission * n_aa + rates.absorption * n_adad + rates.two_photon * n_a2);
            k_band[2][m] = C64::new(-decay, -h_diag);
            if m + 1 < dim {
                // H[m, m+1] = −F√(m+1)
                k_band[3][m] = -I * C64::new(-f * (mf + 1.0).sqrt(), 0.0);
            }
            if m >= 1 {
                // H[m, m−1] = −F√m
                k_band[1][m] = -I * C64::new(-f * mf.sqrt(), 0.0);
            }
            if m + 2 < dim {
                // H[m, m+2] = −(G*/2)√((m+1)(m+2))
                k_band[4][m] = -I * (-0.5 * g.conj() * ((mf + 1.0) * (mf + 2.0)).sqrt());
            }
            if m >= 2 {
                // H[m, m−2] = −(G/2)√(m(m−1))
                k_band[0][m] = -I * (-0.5 * g * (mf * (mf - 1.0)).sqrt());
            }
        }
        let mut jumps = Vec::new();
        if rates.emission != 0.0 {
            jumps.push((1, (0..dim).map(|m| if m + 1 < dim { ((m + 1) as f64).sqrt() } else { 0.0 }).collect(), rates.emission));
        }
        if rates.absorption != 0.0 {
            jumps.push((-1, (0..dim).map(|m| (m as f64).sqrt()).collect(), rates.absorption));
        }
        if rates.two_photon != 0.0 {
            jumps.push((
                2,
                (0..dim)
                    .map(|m| if m + 2 < dim { (((m + 1) * (m + 2)) as f64).sqrt() } else { 0.0 })
                    .collect(),
                rates.two_photon,
            ));
        }
        Self { dim, k_band, jumps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = 𝓛(Δ) ρ` for a column-stacked ρ.
    pub fn apply(&self, delta: f64, rho: &[C64], out: &mut [C64]) {
        self.apply_rows(delta, rho, out, false);
    }

    /// Same as [`apply`](Self::apply) for Hermitian ρ: only the upper triangle is
    /// computed and the rest is filled in by conjugation, about half the work.
    pub fn apply_hermitian(&self, delta: f64, rho: &[C64], out: &mut [C64]) {
        self.apply_rows(delta, rho, out, true);
        let n = self.dim;
        for c in 0..n {
            for m in c + 1..n {
                out[m + c * n] = out[c + m * n].conj();
            }
        }
    }

    fn apply_rows(&self, delta: f64, rho: &[C64], out: &mut [C64], upper_only: bool) {
        let n = self.dim;
        debug_assert_eq!(rho.len(), n * n);
        debug_assert_eq!(out.len(), n * n);
        for c in 0..n {
            let rows = if upper_only { c + 1 } else { n };
            let out_col = &mut out[c * n..c * n + rows];
            out_col.fill(ZERO);
            let rho_col = &rho[c * n..(c + 1) * n];
            // Kρ, detuning contributes +iΔ m on the diagonal.
            for (o, band) in self.k_band.iter().enumerate() {
                let off = o as isize - 2;
                let (lo, hi) = row_range(n, off);
                let hi = hi.min(rows);
                if off == 0 {
                    for m in lo..hi {
                        out_col[m] += (band[m] + C64::new(0.0, delta * m as f64)) * rho_col[m];
                    }
                } else {
                    for m in lo..hi {
                        out_col[m] += band[m] * rho_col[(m as isize + off) as usize];
                    }
                }
            }
            // ρK†: column c gains Σ_o conj(K[c, c+o]) ρ[:, c+o].
            for (o, band) in self.k_band.iter().enumerate() {
                let off = o as isize - 2;
                let src = c as isize + off;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let mut coef = band[c].conj();
                if off == 0 {
                    coef -= C64::new(0.0, delta * c as f64);
                }
                if coef == ZERO {
                    continue;
                }
                let src_col = &rho[src as usize * n..src as usize * n + rows];
                for (o, s) in out_col.iter_mut().zip(src_col) {
                    *o += coef * s;
                }
            }
            // Σ c J ρ J†: (m, c) ← c w[m] w[c] ρ[m+s, c+s]
            for (shift, w, rate) in &self.jumps {
                let src = c as isize + shift;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let coef = rate * w[c];
                if coef == 0.0 {
                    continue;
                }
                let src_col = &rho[src as usize * n..(src as usize + 1) * n];
                let (lo, hi) = row_range(n, *shift);
                for m in lo..hi.min(rows) {
                    out_col[m] += (coef * w[m]) * src_col[(m as isize + shift) as usize];
                }
            }
        }
    }
}

/// Rows m with 0 ≤ m + off < n.
#[inline]
fn row_range(n: usize, off: isize) -> (usize, usize) {
    if off >= 0 {
        (0, n.saturating_sub(off as usize))
    } else {
        ((-off) as usize, n)
    }
}

/// Unique zero-eigenvalue state of `liouvillian`.
///
/// Solves 𝓛ρ = 0 with the ρ₀₀ equation replaced by tr ρ = 1. The result is
/// Hermitized and renormalized; a failed residual, Hermiticity or positivity
/// check triggers a spectral diagnosis.
pub fn steady_state(liouvillian: &SuperOperator) -> Result<DensityMatrix> {
    let space = liouvillian.space;
    let n = space.dim();
    let d = space.super_dim();
    let mut m = liouvillian.matrix.clone();
    for col in 0..d {
        m[(0, col)] = ZERO;
    }
    for k in 0..n {
        m[(0, k + k * n)] = ONE;
    }
    let mut rhs = Mat::<C64>::zeros(d, 1);
    rhs[(0, 0)] = ONE;
    let sol = m.partial_piv_lu().solve(&rhs);
    let v: Vec<C64> = (0..d).map(|i| sol[(i, 0)]).collect();

    let finite = v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    let residual = if finite {
        liouvillian.apply(&v).iter().map(|z| z.norm()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut rho = DensityMatrix::from_vec(space, &v);
    let raw_herm = if finite { rho.hermiticity_error() } else { f64::INFINITY };
    let ok = finite && residual < 1e-8 && raw_herm < 1e-9;
    let min_eig = if ok {
        rho.hermitize();
        rho.min_eigenvalue()?
    } else {
        f64::NEG_INFINITY
    };
    if ok && min_eig > -1e-8 {
        if raw_herm > 1e-12 {
            log::debug!("steady state: removed Hermiticity error {raw_herm:.2e}");
        }
        return Ok(rho);
    }
    diagnose_steady_state_failure(liouvillian, residual, raw_herm, min_eig)
}

fn diagnose_steady_state_failure(
    liouvillian: &SuperOperator,
    residual: f64,
    herm: f64,
    min_eig: f64,
) -> Result<DensityMatrix> {
    let spec = spectrum(liouvillian, 2)?;
    let (l0, l1) = (spec.eigenvalues[0], spec.eigenvalues[1]);
    if l1.norm() < 1e-8 {
        return Err(KpoError::AmbiguousSteadyState { lambda0: format!("{l0}"), lambda1: format!("{l1}") });
    }
    Err(KpoError::NumericalFailure(format!(
        "steady-state solve rejected (residual {residual:.2e}, hermiticity {herm:.2e}, min eigenvalue {min_eig:.2e}); λ₀ = {l0}, λ₁ = {l1}"
    )))
}

/// Convenience: dense Liouvillian without the measurement channel, then its steady state.
pub fn steady_state_for(params: &SystemParams, space: FockSpace, env: &ThermalEnvironment) -> Result<DensityMatrix> {
    steady_state(&build_liouvillian(params, space, env, false))
}

/// Liouvillian eigenvalues sorted by ascending |Re λ|.
#[derive(Debug, Clone, Serialize)]
pub struct LiouvillianSpectrum {
    pub eigenvalues: Vec<C64>,
    /// λ_ADR = |Re λ₁|.
    pub gap: f64,
}

pub fn spectrum(liouvillian: &SuperOperator, count: usize) -> Result<LiouvillianSpectrum> {
    let d = liouvillian.space.super_dim();
    if count > d {
        return Err(KpoError::InvalidConfig(format!("requested {count} eigenvalues of a {d}-dimensional Liouvillian")));
    }
    let mut eigenvalues = liouvillian.matrix.eigenvalues().map_err(|e| {
        KpoError::NumericalFailure(format!("Liouvillian eigensolver did not converge (dim² = {d}): {e:?}"))
    })?;
    if eigenvalues.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(KpoError::NumericalFailure("Liouvillian eigensolver returned non-finite values".into()));
    }
    eigenvalues.sort_by(|a, b| a.re.abs().total_cmp(&b.re.abs()).then(a.im.abs().total_cmp(&b.im.abs())));
    let gap = eigenvalues.get(1).map_or(f64::NAN, |l| l.re.abs());
    eigenvalues.truncate(count);
    Ok(LiouvillianSpectrum { eigenvalues, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::coherent_state;

    fn zero_params() -> SystemParams {
        SystemParams { delta: 0.0, u: 0.0, f: 0.0, g_abs: 0.0, theta: 0.0, gamma: 0.0, eta: 0.0, kappa: 0.0 }
    }

    #[test]
    fn single_photon_decay() {
        let s = FockSpace::new(4).unwrap();
        let p = SystemParams { gamma: 1.0, ..zero_params() };
        let l = build_liouvillian(&p, s, &ThermalEnvironment::zero_temperature(), false);
        let out = DensityMatrix::from_vec(s, &l.apply(&DensityMatrix::fock(s, 1).to_vec()));
        assert!((out.get(0, 0) - ONE).norm() < 1e-14);
        assert!((out.get(1, 1) + ONE).norm() < 1e-14);
    }

    #[test]
    fn dense_and_banded_generators_agree() {
        let s = FockSpace::new(9).unwrap();
        let p = SystemParams { delta: 1.3, kappa: 0.7, ..SystemParams::switching() };
        let env = ThermalEnvironment::with_occupation(0.3);
        let dense = build_liouvillian(&p, s, &env, true);
        let banded = MasterEquation::new(&p.with_delta(0.0), s, &env, true);
        // Non-Hermitian input exercises both K terms independently.
        let v: Vec<C64> = (0..81).map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect();
        let mut out = vec![ZERO; 81];
        banded.apply(1.3, &v, &mut out);
        let expect = dense.apply(&v);
        let err = out.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(dense.trace_preservation_error() < 1e-12);

        // Hermitian input through the half-work path.
        let mut h = v.clone();
        for c in 0..9 {
            for m in 0..9 {
                h[m + c * 9] = 0.5 * (v[m + c * 9] + v[c + m * 9].conj());
            }
        }
        let mut half = vec![ZERO; 81];
        banded.apply_hermitian(1.3, &h, &mut half);
        let expect = dense.apply(&h);
        let err = half.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn linear_coherent_steady_state() {
        let s = FockSpace::new(20).unwrap();
        let p = SystemParams::linear(1.0, 2.0, 0.0);
        let rho = steady_state_for(&p, s, &ThermalEnvironment::zero_temperature()).unwrap();
        assert!((rho.mean_photon_number() - 1.0).abs() < 1e-8);
        let alpha = C64::new(0.0, p.f) / C64::new(p.gamma / 2.0, -p.delta);
        let expect = DensityMatrix::pure(s, &coherent_state(alpha, s).amplitudes);
        let diff = (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .map(|(i, j)| (rho.get(i, j) - expect.get(i, j)).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn undriven_cavity_relaxes_to_vacuum() {
        let s = FockSpace::new(8).unwrap();
        let p = SystemParams { gamma: 0.3, delta: 2.0, u: 1.0, ..zero_params() };
        let rho = steady_state_for(&p, s, &ThermalEnvironment::zero_temperature()).unwrap();
        assert!((rho.get(0, 0) - ONE).norm() < 1e-10);
        rho.validate().unwrap();
    }

    #[test]
    fn thermal_state_occupation() {
        let s = FockSpace::new(40).unwrap();
        let p = SystemParams { gamma: 1.0, ..zero_params() };
        for n_th in [0.05, 0.3, 1.0] {
            let rho = steady_state_for(&p, s, &ThermalEnvironment::with_occupation(n_th)).unwrap();
            assert!((rho.mean_photon_number() - n_th).abs() < 1e-6, "{n_th}");
        }
    }

    #[test]
    fn degenerate_kernel_is_reported() {
        let s = FockSpace::new(4).unwrap();
        let p = SystemParams { delta: 1.0, ..zero_params() };
        let err = steady_state_for(&p, s, &ThermalEnvironment::zero_temperature()).unwrap_err();
        assert!(matches!(err, KpoError::AmbiguousSteadyState { .. }), "{err:?}");
    }

    #[test]
    fn damped_oscillator_spectrum() {
        // λ_{nm} = −γ(n+m)/2 + iΔ(n−m) for the untruncated model; at Δ = 0 the
        // truncation keeps the same real parts.
        let s = FockSpace::new(10).unwrap();
        let p = SystemParams { gamma: 1.0, ..zero_params() };
        let spec = spectrum(&build_liouvillian(&p, s, &ThermalEnvironment::zero_temperature(), false), 100).unwrap();
        assert!((spec.gap - 0.5).abs() < 1e-9);
        let mut expect: Vec<f64> = (0..10).flat_map(|a| (0..10).map(move |b| 0.5 * (a + b) as f64)).collect();
        expect.sort_by(f64::total_cmp);
        for (l, e) in spec.eigenvalues.iter().zip(&expect) {
            assert!((l.re + e).abs() < 1e-8 && l.im.abs() < 1e-8, "{l} vs {e}");
        }
    }

    #[test]
    fn bose_occupation_limits() {
        assert_eq!(bose_occupation(1e10, 0.0), 0.0);
        let omega = ThermalEnvironment::CIRCUIT_QED_OMEGA_C;
        let hot = bose_occupation(omega, 100.0);
        assert!((hot - K_B * 100.0 / (HBAR * omega) + 0.5).abs() < 1e-2);
        assert!(bose_occupation(omega, 0.02) < 1e-7);
    }

    #[test]
    fn phase_range() {
        assert_eq!(phase_of(-1.0, -0.0), PI);
        assert_eq!(phase_of(-1.0, 0.0), PI);
        let obs = DensityMatrix::vacuum(FockSpace::new(3).unwrap()).observables();
        assert!(obs.phi.is_nan());
    }
}
