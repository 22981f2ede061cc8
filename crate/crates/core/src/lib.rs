//! Simulation library for a Kerr parametric oscillator used as a quantum
//! transducer: the detuning at which a down-swept oscillator flips its phase
//! by π depends almost linearly on a weak single-photon drive, which can be
//! read out by heterodyne detection.
//!
//! Modules, bottom-up:
//! - [`fock`]: truncated Fock space, ladder operators, Hamiltonian.
//! - [`liouvillian`]: Lindblad generator, steady states, spectrum and gap.
//! - [`dynamics`]: deterministic detuning sweeps and the switching point Δ*.
//! - [`trajectories`]: heterodyne stochastic master equation.
//! - [`phase_analysis`]: Husimi Q, half-plane probabilities, switching PDF, arctan fits.
//! - [`transducer`]: calibration Δ*(F), inversion and the full sensing protocol.
//! - [`qfi`]: quantum Fisher information of steady states.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod liouvillian;
pub mod dynamics;
pub mod trajectories;
pub mod phase_analysis;
pub mod transducer;
pub mod qfi;

pub use error::{KpoError, Result};
pub use fock::{
    build_hamiltonian, coherent_state, make_ladder_operators, CoherentState, DimConvergence, FockOperator, FockSpace,
    LadderOperators, SystemParams, C64,
};
pub use liouvillian::{
    build_liouvillian, spectrum, steady_state, steady_state_for, DensityMatrix, LiouvillianSpectrum,
    MasterEquation, Observables, SuperOperator, ThermalEnvironment,
};
pub use dynamics::{
    extract_switch, extract_switch_in, fit_sweep_time, integrate_sweep, SweepDirection, SweepOptions, SweepOutcome,
    SweepRecord, SweepSchedule, SweepTimeFit, SwitchPoint,
};
pub use trajectories::{
    integrate_heterodyne, run_ensemble, wiener_selfcheck, HeterodyneOptions, NoiseStream, TrajectoryRecord,
    WienerStats,
};
pub use phase_analysis::{
    fit_arctan, half_plane_probability, husimi_q, transition_pdf, ArctanFit, HusimiGrid, HusimiSpec, PhaseRecord,
    SwitchPdf,
};
pub use transducer::{
    calibrate, estimate_f, kappa_gamma_scan, run_protocol, CalibrationCurve, EstimateDistribution, FailureTaxonomy,
    Histogram, ProtocolConfig, ScanRow, Shot, ShotMode,
};
pub use qfi::{
    linear_qfi, qfi_mixed, qfi_pure, qfi_pure_steady, temperature_scan, write_scan_csv, QfiResult, ScanPoint,
    SyntheticFamily,
};
