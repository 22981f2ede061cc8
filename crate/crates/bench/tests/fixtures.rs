use kpo_bench::Fixture;
use kpo_core::C64;

#[test]
fn fixture_state_is_stationary() {
    let fx = Fixture::new(14);
    fx.rho.validate().unwrap();
    let me = fx.master_equation();
    let rho = fx.rho.to_vec();
    let mut out = vec![C64::new(0.0, 0.0); rho.len()];
    me.apply(fx.params.delta, &rho, &mut out);
    let residual = out.iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(residual < 1e-9, "{residual}");
}
