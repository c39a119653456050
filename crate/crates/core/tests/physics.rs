use num_complex::Complex64;

use atomlaser::grid::Grid;
use atomlaser::integrator::{run_simulation, RunConfig};
use atomlaser::model::{gaussian, FieldState, PhysicalParams, HBAR};

fn record_nothing(_: &atomlaser::integrator::Sample, _: &FieldState) -> atomlaser::Result<()> {
    Ok(())
}

#[test]
fn absorber_swallows_a_moving_packet() {
    let grid = Grid::new(512, 2.7e-4).unwrap();
    let params = PhysicalParams {
        gravity: 0.0,
        absorber_strength: 5.0e4,
        ..PhysicalParams::default().isolated()
    };
    let k = 0.25 * grid.k_max();
    let mut initial = FieldState::zeros(grid.n_points());
    initial.psi_u = gaussian(&grid, 5e-6, 0.0, 100.0)
        .iter()
        .zip(grid.x())
        .map(|(p, x)| p * Complex64::from_polar(1.0, k * x))
        .collect();
    let v = HBAR * k / params.mass;
    let run = RunConfig {
        dt: 1e-5,
        t_final: 1.5 * 0.5 * grid.length() / v,
        record_interval: 1e-3,
        ..RunConfig::default()
    };
    let r = run_simulation(&params, &run, &grid, initial, record_nothing).unwrap();
    let left = r.final_state.untrapped_atoms(grid.dx());
    assert!(left < 1.0, "{left} of 100 atoms left");
}

#[test]
fn empty_trap_reservoir_follows_closed_form() {
    let grid = Grid::new(128, 2.7e-4).unwrap();
    let params = PhysicalParams::default();
    let run = RunConfig {
        dt: 1e-4,
        t_final: 1.0,
        record_interval: 1e-2,
        ..RunConfig::default()
    };
    let mut checked = 0;
    let r = run_simulation(&params, &run, &grid, FieldState::zeros(128), |s, state| {
        let exact = params.fill_rate / params.gamma_p * (1.0 - (-params.gamma_p * s.t).exp());
        for n in &state.n {
            assert!((n - exact).abs() <= 1e-9 * exact.max(1.0), "t = {} n = {n} exact = {exact}", s.t);
        }
        assert_eq!(s.n_t, 0.0);
        checked += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(checked, 101);
    assert_eq!(r.clipped_reservoir, 0.0);
}

#[test]
fn controls_stay_off_until_feedback_start() {
    let grid = Grid::new(256, 1e-4).unwrap();
    let params = PhysicalParams::default().isolated();
    let start = 0.005;
    let run = RunConfig {
        dt: 2e-6,
        t_final: 0.01,
        record_interval: 1e-4,
        feedback_enabled: true,
        feedback_start_time: start,
        ..RunConfig::default()
    };
    let initial = FieldState::seeded(&grid, &params, 1e3, 2e-6);
    let r = run_simulation(&params, &run, &grid, initial, record_nothing).unwrap();
    for s in &r.samples {
        if s.t < start - 1e-9 {
            assert!(s.a1 == 0.0 && s.a2 == 0.0 && s.b == 0.0, "control at t = {}", s.t);
        } else if s.t > start + 2.5 * run.record_interval {
            assert!(s.a1 != 0.0, "no control at t = {}", s.t);
        }
    }
}
