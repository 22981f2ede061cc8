//! Run configuration: a TOML file whose tables all have defaults, overridden by flags.

use std::f64::consts::PI;
use std::path::Path;

use kpo_core::{
    FockSpace, HeterodyneOptions, KpoError, ProtocolConfig, Result, SweepOptions, SweepSchedule, SystemParams,
    ThermalEnvironment,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fock_dim: usize,
    pub seed: u64,
    /// Worker threads; absent means one per core.
    pub threads: Option<usize>,
    /// Relative tolerance of the dim vs dim + 5 check.
    pub convergence_tolerance: f64,
    /// Fold the detector into the loss rate (γ → γ + κ) for steady, gap, husimi and sweep.
    pub monitored: bool,
    pub params: SystemParams,
    pub thermal: ThermalConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
    pub heterodyne: HeterodyneConfig,
    pub protocol: ProtocolSection,
    pub qfi: QfiConfig,
    pub husimi: HusimiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fock_dim: 25,
            seed: 0,
            threads: None,
            convergence_tolerance: 1e-2,
            monitored: false,
            params: SystemParams::switching(),
            thermal: ThermalConfig::default(),
            grid: GridConfig::default(),
            sweep: SweepConfig::default(),
            heterodyne: HeterodyneConfig::default(),
            protocol: ProtocolSection::default(),
            qfi: QfiConfig::default(),
            husimi: HusimiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    /// Bath temperature in kelvin.
    pub temperature: f64,
    /// Cavity angular frequency in rad/s.
    pub omega_c: f64,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self { temperature: 0.0, omega_c: ThermalEnvironment::CIRCUIT_QED_OMEGA_C }
    }
}

/// Detuning and drive-phase grids. An explicit `deltas` list replaces the linspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_points: usize,
    pub deltas: Option<Vec<f64>>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            delta_min: -10.0,
            delta_max: 15.0,
            delta_points: 101,
            deltas: None,
            theta_min: -PI,
            theta_max: PI,
            theta_points: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub delta_start: f64,
    pub delta_end: f64,
    pub sweep_time: f64,
    pub samples: usize,
    /// Also run the reversed schedule and report the hysteresis.
    pub both_directions: bool,
    /// Sweep times for the Δ*(t_s) study; empty skips it.
    pub sweep_times: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            delta_start: 15.0,
            delta_end: -10.0,
            sweep_time: 50.0,
            samples: 500,
            both_directions: false,
            sweep_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeterodyneConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub samples: usize,
    /// Boxcar length (steps) of the smoothed record.
    pub window: usize,
    pub positivity_tolerance: f64,
}

impl Default for HeterodyneConfig {
    fn default() -> Self {
        let o = HeterodyneOptions::default();
        Self {
            trajectories: 1,
            dt: o.dt,
            samples: o.samples,
            window: o.window,
            positivity_tolerance: o.positivity_tolerance,
        }
    }
}

impl HeterodyneConfig {
    pub fn options(&self) -> HeterodyneOptions {
        HeterodyneOptions {
            dt: self.dt,
            samples: self.samples,
            window: self.window,
            positivity_tolerance: self.positivity_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub true_f: f64,
    pub shots: usize,
    pub fit_min: f64,
    pub fit_max: f64,
    /// Boxcar length (steps) used for the protocol's measured phase.
    pub window: usize,
    pub f_grid: Vec<f64>,
    /// Replace heterodyne shots by the noiseless monitored sweep.
    pub deterministic: bool,
    /// Also compute the master-equation switching PDF.
    pub pdf: bool,
    /// κ/γ ratios for the spread scan at fixed κ + γ; empty skips it.
    pub kappa_gamma_ratios: Vec<f64>,
    pub scan_shots: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::standard();
        Self {
            true_f: 4.0,
            shots: 200,
            fit_min: p.fit_window.0,
            fit_max: p.fit_window.1,
            window: p.heterodyne.window,
            f_grid: (2..=8).map(f64::from).collect(),
            deterministic: false,
            pdf: true,
            kappa_gamma_ratios: Vec::new(),
            scan_shots: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfiConfig {
    /// Bath temperatures in millikelvin.
    pub temperatures_mk: Vec<f64>,
}

impl Default for QfiConfig {
    fn default() -> Self {
        Self { temperatures_mk: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HusimiConfig {
    /// Detuning of the steady state; absent means `params.delta`.
    pub delta: Option<f64>,
    /// Half-width of the phase-space window; absent picks one from ⟨n⟩.
    pub half_width: Option<f64>,
    pub points: usize,
}

impl Default for HusimiConfig {
    fn default() -> Self {
        Self { delta: None, half_width: None, points: 201 }
    }
}

/// Values given on the command line, which win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fock_dim: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| KpoError::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| KpoError::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(d) = overrides.fock_dim {
            cfg.fock_dim = d;
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        FockSpace::new(self.fock_dim)?;
        self.params.validate()?;
        if self.threads == Some(0) {
            return Err(KpoError::InvalidConfig("threads must be at least 1".into()));
        }
        if !(self.convergence_tolerance > 0.0) {
            return Err(KpoError::InvalidConfig("convergence_tolerance must be positive".into()));
        }
        if !(self.thermal.temperature >= 0.0 && self.thermal.omega_c > 0.0) {
            return Err(KpoError::InvalidConfig("thermal temperature must be ≥ 0 and omega_c > 0".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> FockSpace {
        FockSpace::new(self.fock_dim).expect("validated")
    }

    pub fn env(&self) -> ThermalEnvironment {
        ThermalEnvironment::from_temperature(self.thermal.omega_c, self.thermal.temperature)
    }

    pub fn deltas(&self) -> Result<Vec<f64>> {
        let g = &self.grid;
        let v = match &g.deltas {
            Some(list) => list.clone(),
            None => linspace(g.delta_min, g.delta_max, g.delta_points),
        };
        if v.is_empty() {
            return Err(KpoError::InvalidConfig("the detuning grid is empty".into()));
        }
        if v.iter().any(|d| !d.is_finite()) {
            return Err(KpoError::InvalidConfig("the detuning grid has non-finite values".into()));
        }
        Ok(v)
    }

    pub fn thetas(&self) -> Result<Vec<f64>> {
        let g = &self.grid;
        if g.theta_points == 0 {
            return Err(KpoError::InvalidConfig("the θ grid is empty".into()));
        }
        Ok(linspace(g.theta_min, g.theta_max, g.theta_points))
    }

    pub fn schedule(&self) -> Result<SweepSchedule> {
        SweepSchedule::new(self.sweep.delta_start, self.sweep.delta_end, self.sweep.sweep_time)
    }

    pub fn sweep_options(&self) -> Result<SweepOptions> {
        if self.sweep.samples < 2 {
            return Err(KpoError::InvalidConfig("sweep.samples must be at least 2".into()));
        }
        Ok(SweepOptions { samples: self.sweep.samples, include_measurement: self.monitored, ..SweepOptions::default() })
    }

    /// The shot pipeline: the configured sweep, fit window and protocol boxcar.
    pub fn protocol(&self) -> Result<ProtocolConfig> {
        let p = &self.protocol;
        if !(p.fit_min < p.fit_max) {
            return Err(KpoError::InvalidConfig("protocol.fit_min must be below fit_max".into()));
        }
        Ok(ProtocolConfig {
            schedule: self.schedule()?,
            fit_window: (p.fit_min, p.fit_max),
            heterodyne: HeterodyneOptions { window: p.window, ..self.heterodyne.options() },
        })
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg: RunConfig = toml::from_str("fock_dim = 12\n[params]\nf = 2.5\n[heterodyne]\ndt = 0.002\n").unwrap();
        assert_eq!(cfg.fock_dim, 12);
        assert_eq!(cfg.params.f, 2.5);
        assert_eq!(cfg.params.g_abs, 6.0);
        assert_eq!(cfg.heterodyne.dt, 0.002);
        assert_eq!(cfg.heterodyne.samples, 500);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("fock_dimm = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[params]\ngama = 1.0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\nfock_dim = 10\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!((cfg.seed, cfg.fock_dim), (9, 10));
    }

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let mut cfg = RunConfig::default();
        cfg.grid.deltas = Some(vec![]);
        assert!(cfg.deltas().unwrap_err().is_config_error());
        cfg.grid.deltas = None;
        cfg.grid.delta_points = 0;
        assert!(cfg.deltas().is_err());
    }

    #[test]
    fn serialized_config_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
