//! Operators and states on a truncated Fock space, and the KPO Hamiltonian.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{KpoError, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Truncated Fock space spanned by |0⟩ … |dim−1⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(KpoError::InvalidSpace { dim });
        }
        Ok(Self { dim })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the vectorized operator space, `dim²`.
    #[inline]
    pub fn super_dim(&self) -> usize {
        self.dim * self.dim
    }
}

/// Dense operator on a [`FockSpace`].
#[derive(Debug, Clone)]
pub struct FockOperator {
    space: FockSpace,
    matrix: Mat<C64>,
}

impl FockOperator {
    pub fn from_matrix(space: FockSpace, matrix: Mat<C64>) -> Self {
        assert_eq!(matrix.nrows(), space.dim());
        assert_eq!(matrix.ncols(), space.dim());
        Self { space, matrix }
    }

    pub fn zeros(space: FockSpace) -> Self {
        Self::from_matrix(space, Mat::zeros(space.dim(), space.dim()))
    }

    pub fn identity(space: FockSpace) -> Self {
        Self::from_matrix(space, Mat::identity(space.dim(), space.dim()))
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_matrix(self.space, self.matrix.adjoint().to_owned())
    }

    pub fn mul(&self, other: &FockOperator) -> Self {
        Self::from_matrix(self.space, &self.matrix * &other.matrix)
    }

    pub fn add(&self, other: &FockOperator) -> Self {
        Self::from_matrix(self.space, &self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &FockOperator) -> Self {
        Self::from_matrix(self.space, &self.matrix - &other.matrix)
    }

    pub fn scale(&self, factor: C64) -> Self {
        let n = self.space.dim();
        Self::from_matrix(self.space, Mat::from_fn(n, n, |i, j| factor * self.matrix[(i, j)]))
    }

    /// Applies the operator to a state vector.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.space.dim();
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| (0..n).map(|j| self.matrix[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `max |A − A†|` entrywise.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.space.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &FockOperator) -> f64 {
        let n = self.space.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - other.matrix[(i, j)]).norm());
            }
        }
        worst
    }
}

/// Annihilation, creation and number operators.
#[derive(Debug, Clone)]
pub struct LadderOperators {
    pub a: FockOperator,
    pub a_dag: FockOperator,
    pub n: FockOperator,
}

pub fn make_ladder_operators(space: FockSpace) -> LadderOperators {
    let dim = space.dim();
    let a = Mat::from_fn(dim, dim, |m, k| {
        if k == m + 1 {
            C64::new((k as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let a = FockOperator::from_matrix(space, a);
    let a_dag = a.adjoint();
    let n = a_dag.mul(&a);
    LadderOperators { a, a_dag, n }
}

/// Physical parameters, in units of the Kerr nonlinearity `u` except `u` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Detuning Δ = ω_d − ω_c.
    pub delta: f64,
    /// Kerr nonlinearity U.
    pub u: f64,
    /// Single-photon drive amplitude F (real).
    pub f: f64,
    /// Two-photon drive magnitude |G|.
    pub g_abs: f64,
    /// Phase θ of G = |G| e^{iθ}.
    pub theta: f64,
    /// Single-photon loss rate.
    pub gamma: f64,
    /// Two-photon loss rate.
    pub eta: f64,
    /// Emission rate into the heterodyne detector.
    pub kappa: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::switching()
    }
}

impl SystemParams {
    /// F = 4, |G| = 6, γ = η = 0.5, θ = −π/2 (units of U).
    pub fn switching() -> Self {
        Self {
            delta: 0.0,
            u: 1.0,
            f: 4.0,
            g_abs: 6.0,
            theta: -FRAC_PI_2,
            gamma: 0.5,
            eta: 0.5,
            kappa: 0.0,
        }
    }

    /// The monitored transducer: the [`switching`](Self::switching) oscillator with κ = U.
    pub fn transducer() -> Self {
        Self { kappa: 1.0, ..Self::switching() }
    }

    /// F = 4.5, |G| = 3, γ = 3, η = 0, θ = −π/2: a strongly damped oscillator for Fisher-information scans.
    pub fn thermal_qfi() -> Self {
        Self {
            delta: 0.0,
            u: 1.0,
            f: 4.5,
            g_abs: 3.0,
            theta: -FRAC_PI_2,
            gamma: 3.0,
            eta: 0.0,
            kappa: 0.0,
        }
    }

    /// Driven damped harmonic oscillator (U = G = η = 0).
    pub fn linear(f: f64, gamma: f64, delta: f64) -> Self {
        Self {
            delta,
            u: 0.0,
            f,
            g_abs: 0.0,
            theta: 0.0,
            gamma,
            eta: 0.0,
            kappa: 0.0,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_f(mut self, f: f64) -> Self {
        self.f = f;
        self
    }

    /// Complex two-photon drive G = |G| e^{iθ}.
    pub fn g(&self) -> C64 {
        C64::from_polar(self.g_abs, self.theta)
    }

    /// The same oscillator with the measurement channel folded into single-photon loss.
    pub fn monitored(&self) -> Self {
        Self {
            gamma: self.gamma + self.kappa,
            kappa: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("delta", self.delta),
            ("u", self.u),
            ("f", self.f),
            ("g_abs", self.g_abs),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("kappa", self.kappa),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(KpoError::InvalidParams(format!("{name} is not finite")));
        }
        for (name, v) in &fields[1..] {
            if *name != "theta" && *v < 0.0 {
                return Err(KpoError::InvalidParams(format!("{name} = {v} must be non-negative")));
            }
        }
        if self.theta.abs() > std::f64::consts::PI + 1e-12 {
            return Err(KpoError::InvalidParams(format!("theta = {} outside [-π, π]", self.theta)));
        }
        Ok(())
    }
}

/// H = −Δn + (U/2) n(n−1) − (F a + (G*/2) a² + h.c.), assembled element by element.
pub fn build_hamiltonian(params: &SystemParams, space: FockSpace) -> FockOperator {
    let dim = space.dim();
    let g = params.g();
    let f = params.f;
    let h = Mat::from_fn(dim, dim, |m, k| {
        let mf = m as f64;
        if m == k {
            C64::new(-params.delta * mf + 0.5 * params.u * mf * (mf - 1.0), 0.0)
        } else if k == m + 1 {
            // −F a
            C64::new(-f * (k as f64).sqrt(), 0.0)
        } else if m == k + 1 {
            // −F a†
            C64::new(-f * (m as f64).sqrt(), 0.0)
        } else if k == m + 2 {
            // −(G*/2) a²
            -0.5 * g.conj() * ((k * (k - 1)) as f64).sqrt()
        } else if m == k + 2 {
            // −(G/2) a†²
            -0.5 * g * ((m * (m - 1)) as f64).sqrt()
        } else {
            ZERO
        }
    });
    FockOperator::from_matrix(space, h)
}

/// Truncated, renormalized coherent state.
#[derive(Debug, Clone)]
pub struct CoherentState {
    pub alpha: C64,
    pub space: FockSpace,
    pub amplitudes: Vec<C64>,
    /// `1 − Σ|c_k|²` before renormalization.
    pub truncation_error: f64,
}

impl CoherentState {
    pub const CONVERGENCE_THRESHOLD: f64 = 1e-8;

    pub fn is_converged(&self) -> bool {
        self.truncation_error < Self::CONVERGENCE_THRESHOLD
    }

    /// ⟨self|other⟩.
    pub fn overlap(&self, other: &CoherentState) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(x, y)| x.conj() * y)
            .sum()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, c)| k as f64 * c.norm_sqr())
            .sum()
    }
}

pub fn coherent_state(alpha: C64, space: FockSpace) -> CoherentState {
    let amplitudes = coherent_amplitudes(alpha, space.dim());
    let norm2: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    let truncation_error = (1.0 - norm2).max(0.0);
    if truncation_error >= CoherentState::CONVERGENCE_THRESHOLD {
        log::warn!(
            "coherent state |α|² = {:.3} not converged at dim {} (error {:.2e})",
            alpha.norm_sqr(),
            space.dim(),
            truncation_error
        );
    }
    let inv = 1.0 / norm2.sqrt();
    CoherentState {
        alpha,
        space,
        amplitudes: amplitudes.into_iter().map(|c| c * inv).collect(),
        truncation_error,
    }
}

/// e^{−|α|²/2} α^k/√k! for k < dim, without renormalization.
pub(crate) fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(dim);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    out.push(c);
    for k in 1..dim {
        c = c * alpha / (k as f64).sqrt();
        out.push(c);
    }
    out
}

/// Result of re-evaluating a headline number at `dim + 5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimConvergence {
    pub dim: usize,
    pub refined_dim: usize,
    pub value: f64,
    pub refined_value: f64,
    pub relative_change: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl DimConvergence {
    /// Extra levels used for the refinement.
    pub const EXTRA_LEVELS: usize = 5;

    /// Evaluates `observable` at `dim` and `dim + 5` and compares them relative to
    /// `max(|value|, 1)`, so values near zero are compared absolutely.
    pub fn check<F>(dim: usize, tolerance: f64, observable: F) -> Result<Self>
    where
        F: Fn(FockSpace) -> Result<f64>,
    {
        let refined_dim = dim + Self::EXTRA_LEVELS;
        let value = observable(FockSpace::new(dim)?)?;
        let refined_value = observable(FockSpace::new(refined_dim)?)?;
        let relative_change = (refined_value - value).abs() / value.abs().max(1.0);
        let passed = relative_change <= tolerance;
        if !passed {
            log::warn!("dim {dim} → {refined_dim} changes the result by {relative_change:.3e}");
        }
        Ok(Self { dim, refined_dim, value, refined_value, relative_change, tolerance, passed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn space(dim: usize) -> FockSpace {
        FockSpace::new(dim).unwrap()
    }

    #[test]
    fn rejects_tiny_space() {
        assert_eq!(FockSpace::new(1), Err(KpoError::InvalidSpace { dim: 1 }));
        assert!(FockSpace::new(2).is_ok());
    }

    #[test]
    fn ladder_dim3() {
        let ops = make_ladder_operators(space(3));
        for m in 0..3 {
            for k in 0..3 {
                let expect = match (m, k) {
                    (0, 1) => 1.0,
                    (1, 2) => 2f64.sqrt(),
                    _ => 0.0,
                };
                assert_eq!(ops.a.get(m, k), C64::new(expect, 0.0));
                assert_eq!(ops.a_dag.get(k, m), ops.a.get(m, k).conj());
                let nexp = if m == k { m as f64 } else { 0.0 };
                assert!((ops.n.get(m, k) - C64::new(nexp, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn truncated_commutator() {
        let dim = 12;
        let ops = make_ladder_operators(space(dim));
        let comm = ops.a.mul(&ops.a_dag).sub(&ops.a_dag.mul(&ops.a));
        for i in 0..dim {
            for j in 0..dim {
                let expect = if i != j {
                    0.0
                } else if i == dim - 1 {
                    -((dim - 1) as f64)
                } else {
                    1.0
                };
                assert!((comm.get(i, j) - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coherent_eigenvector_of_a() {
        let s = space(20);
        let ops = make_ladder_operators(s);
        let alpha = C64::new(1.0, 0.0);
        let state = coherent_state(alpha, s);
        let applied = ops.a.apply(&state.amplitudes);
        let err: f64 = applied
            .iter()
            .zip(&state.amplitudes)
            .map(|(x, y)| (x - alpha * y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn hamiltonian_trivial_cases() {
        let s = space(6);
        let zero = SystemParams {
            delta: 0.0,
            u: 0.0,
            f: 0.0,
            g_abs: 0.0,
            theta: 0.0,
            gamma: 0.0,
            eta: 0.0,
            kappa: 0.0,
        };
        let h = build_hamiltonian(&zero, s);
        assert_eq!(h.max_abs_diff(&FockOperator::zeros(s)), 0.0);

        let kerr = SystemParams { u: 1.0, ..zero };
        let h = build_hamiltonian(&kerr, s);
        assert!((h.get(2, 2) - ONE).norm() < 1e-15);
    }

    #[test]
    fn hamiltonian_matches_operator_algebra() {
        // Assemble the same operator from products of ladder matrices.
        let s = space(30);
        let p = SystemParams { delta: 0.7, ..SystemParams::switching() };
        let ops = make_ladder_operators(s);
        let id = FockOperator::identity(s);
        let g = p.g();
        let a2 = ops.a.mul(&ops.a);
        let ad2 = ops.a_dag.mul(&ops.a_dag);
        let expected = ops
            .n
            .scale(C64::new(-p.delta, 0.0))
            .add(&ops.n.mul(&ops.n.sub(&id)).scale(C64::new(0.5 * p.u, 0.0)))
            .sub(&ops.a.scale(C64::new(p.f, 0.0)))
            .sub(&ops.a_dag.scale(C64::new(p.f, 0.0)))
            .sub(&a2.scale(0.5 * g.conj()))
            .sub(&ad2.scale(0.5 * g));
        let h = build_hamiltonian(&p, s);
        assert!(h.max_abs_diff(&expected) < 1e-12);
        assert!(h.hermiticity_error() < 1e-12);
    }

    #[test]
    fn coherent_state_examples() {
        let s = space(30);
        let vac = coherent_state(ZERO, s);
        assert_eq!(vac.truncation_error, 0.0);
        assert_eq!(vac.amplitudes[0], ONE);

        let two = coherent_state(C64::new(2.0, 0.0), s);
        assert!((two.mean_photon_number() - 4.0).abs() < 1e-6);
        assert!(two.is_converged());

        let s20 = space(20);
        let plus = coherent_state(I, s20);
        let minus = coherent_state(-I, s20);
        assert!((plus.overlap(&minus).norm() - (-2.0f64).exp()).abs() < 1e-6);

        let big = coherent_state(C64::new(5.0, 0.0), space(10));
        assert!(!big.is_converged());
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::switching().validate().is_ok());
        assert!(SystemParams { gamma: -1.0, ..SystemParams::switching() }.validate().is_err());
        assert!(SystemParams { theta: -PI, ..SystemParams::switching() }.validate().is_ok());
        assert!(SystemParams { theta: 3.5, ..SystemParams::switching() }.validate().is_err());
        assert!(SystemParams { theta: PI, ..SystemParams::switching() }.validate().is_ok());
        assert!(SystemParams { f: f64::NAN, ..SystemParams::switching() }.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn hamiltonian_is_hermitian(
            delta in -15.0..15.0f64,
            f in 0.0..8.0f64,
            g in 0.0..8.0f64,
            theta in -3.14..3.14f64,
            dim in 2usize..25,
        ) {
            let p = SystemParams { delta, f, g_abs: g, theta, ..SystemParams::switching() };
            let h = build_hamiltonian(&p, space(dim));
            proptest::prop_assert!(h.hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn dim_convergence_gate() {
        let mean_n = |space: FockSpace| Ok(coherent_state(C64::new(1.0, 0.0), space).mean_photon_number());
        let ok = DimConvergence::check(20, 1e-8, mean_n).unwrap();
        assert!(ok.passed && ok.refined_dim == 25);
        let truncated = |space: FockSpace| Ok(coherent_state(C64::new(3.0, 0.0), space).mean_photon_number());
        assert!(!DimConvergence::check(6, 1e-3, truncated).unwrap().passed);
    }
}
