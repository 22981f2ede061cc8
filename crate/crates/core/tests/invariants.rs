use kpo_core::*;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SystemParams> {
    (-6.0..6.0f64, 0.5..2.0f64, 0.0..3.0f64, 0.0..3.0f64, -3.1..3.1f64, 0.2..2.0f64, 0.0..1.0f64, 0.0..1.0f64)
        .prop_map(|(delta, u, f, g_abs, theta, gamma, eta, kappa)| SystemParams {
            delta,
            u,
            f,
            g_abs,
            theta,
            gamma,
            eta,
            kappa,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn liouvillian_preserves_trace(p in params(), n_th in 0.0..0.5f64, monitored in any::<bool>()) {
        let l = build_liouvillian(&p, FockSpace::new(7).unwrap(), &ThermalEnvironment::with_occupation(n_th), monitored);
        prop_assert!(l.trace_preservation_error() < 1e-10);
    }

    #[test]
    fn steady_state_is_a_stationary_density_matrix(p in params(), n_th in 0.0..0.3f64) {
        let s = FockSpace::new(10).unwrap();
        let env = ThermalEnvironment::with_occupation(n_th);
        let l = build_liouvillian(&p, s, &env, false);
        let rho = steady_state(&l).unwrap();
        prop_assert!(rho.validate().is_ok());
        let residual = l.apply(&rho.to_vec()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(residual < 1e-9, "residual {}", residual);
    }

    #[test]
    fn undriven_oscillator_has_no_preferred_half_plane(
        delta in -4.0..4.0f64,
        g_abs in 0.0..2.0f64,
        theta in -3.1..3.1f64,
    ) {
        let p = SystemParams { delta, f: 0.0, g_abs, theta, ..SystemParams::switching() };
        let rho = steady_state_for(&p, FockSpace::new(12).unwrap(), &ThermalEnvironment::zero_temperature()).unwrap();
        let q = husimi_q(&rho, &HusimiSpec::for_state(&rho)).unwrap();
        let minus = half_plane_probability(&q).unwrap();
        prop_assert!((minus - 0.5).abs() < 1e-3, "P− = {}", minus);
    }

    #[test]
    fn arctan_fit_is_scale_equivariant(
        a in 0.5..3.0f64,
        star in -2.0..2.0f64,
        c in -0.5..0.5f64,
        s in 0.3..3.0f64,
    ) {
        let deltas: Vec<f64> = (0..201).map(|k| -6.0 + 0.06 * k as f64).collect();
        let phi: Vec<f64> = deltas.iter().map(|d| (a * (d - star)).atan() + c).collect();
        let base = fit_arctan(&SweepRecord::from_phase(deltas.clone(), phi.clone()), -6.0, 6.0).unwrap();
        let scaled_deltas = deltas.iter().map(|d| d * s).collect();
        let scaled = fit_arctan(&SweepRecord::from_phase(scaled_deltas, phi), -6.0 * s, 6.0 * s).unwrap();
        prop_assert!((scaled.delta_star - s * base.delta_star).abs() < 1e-6 * s.max(1.0));
        prop_assert!((scaled.slope_a - base.slope_a / s).abs() < 1e-6 * base.slope_a.abs());
        prop_assert!((base.delta_star - star).abs() < 1e-6);
    }

    #[test]
    fn noise_streams_are_keyed_by_seed_and_index(seed in any::<u64>(), index in 0u64..1000) {
        let draw = |seed, index| {
            let mut n = NoiseStream::new(seed, index);
            (0..16).map(|_| n.increments(1e-3)).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(seed, index), draw(seed, index));
        prop_assert_ne!(draw(seed, index), draw(seed, index + 1));
    }

    #[test]
    fn inversion_recovers_calibration_nodes(
        slope in 0.1..1.0f64,
        intercept in -4.0..0.0f64,
        wiggle in proptest::collection::vec(-0.02..0.02f64, 6),
        pick in 0usize..6,
    ) {
        let f_grid: Vec<f64> = (0..6).map(|k| 2.0 + k as f64).collect();
        let table: Vec<f64> = f_grid.iter().zip(&wiggle).map(|(f, w)| slope * f + intercept + w).collect();
        let (slope, intercept, r_squared) = kpo_core::transducer::linear_fit(&f_grid, &table);
        let cal = CalibrationCurve {
            f_grid: f_grid.clone(),
            delta_star_grid: table.clone(),
            slope,
            intercept,
            r_squared,
            validity_window: [2.0, 7.0],
            excluded: vec![],
        };
        prop_assert!((estimate_f(table[pick], &cal).unwrap() - f_grid[pick]).abs() < 1e-12);
    }
}

#[test]
fn sweep_starting_in_steady_state_stays_physical() {
    let s = FockSpace::new(12).unwrap();
    let env = ThermalEnvironment::with_occupation(0.1);
    let p = SystemParams::transducer();
    let schedule = SweepSchedule::new(4.0, -2.0, 6.0).unwrap();
    let out = integrate_sweep(&p, &schedule, None, s, &env, &SweepOptions { samples: 50, ..SweepOptions::monitored() })
        .unwrap();
    assert_eq!(out.record.len(), 50);
    assert!(out.final_state.validate().is_ok());
    assert!(out.record.n_mean.iter().all(|n| n.is_finite() && *n >= 0.0));
}
