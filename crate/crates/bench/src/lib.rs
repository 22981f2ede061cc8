//! Shared fixtures for the solver benchmarks.

use kpo_core::{
    build_liouvillian, steady_state, DensityMatrix, FockSpace, MasterEquation, SystemParams, ThermalEnvironment,
};

/// A monitored transducer at Δ = 1.5 with its steady state.
pub struct Fixture {
    pub params: SystemParams,
    pub space: FockSpace,
    pub env: ThermalEnvironment,
    pub rho: DensityMatrix,
}

impl Fixture {
    pub fn new(dim: usize) -> Self {
        let params = SystemParams::transducer().with_delta(1.5);
        let space = FockSpace::new(dim).expect("positive dimension");
        let env = ThermalEnvironment::zero_temperature();
        let rho = steady_state(&build_liouvillian(&params, space, &env, true)).expect("unique steady state");
        Self { params, space, env, rho }
    }

    pub fn master_equation(&self) -> MasterEquation {
        MasterEquation::new(&self.params.with_delta(0.0), self.space, &self.env, true)
    }
}
