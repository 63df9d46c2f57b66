mod common;

use common::*;
use freepc::freqdomain::{freq_data_equations, hankel_data_equations, siso_frf_data};
use freepc::lti::case_study_plant;
use freepc::ocp::{build_ocp, solve_ocp, SolverStatus};
use freepc::signals::{bin_frequency, CASE_STUDY_BINS, CASE_STUDY_PERIOD};
use freepc::simloop::case_study_ocp;

#[test]
fn relaxing_boxes_never_raises_the_objective() {
    let tf = case_study_plant();
    let plant = tf.to_state_space().unwrap();
    let freqs: Vec<f64> = CASE_STUDY_BINS
        .iter()
        .map(|&b| bin_frequency(b, CASE_STUDY_PERIOD))
        .collect();
    let g: Vec<_> = freqs.iter().map(|&w| tf.freq_response(w)).collect();
    let base = case_study_ocp();
    let eqs = freq_data_equations(&siso_frf_data(&freqs, &g).unwrap(), base.depth()).unwrap();
    let mut rng = rng(8);
    for _ in 0..5 {
        let (up, yp, _) = scaled_past_window(&mut rng, &plant, base.past, 0.2);
        let mut last = f64::NEG_INFINITY;
        for widen in [f64::INFINITY, 4.0, 2.0, 1.0] {
            let mut cfg = base.clone();
            let scale = |(lo, hi): (f64, f64)| (lo * widen, hi * widen);
            cfg.u_box = base.u_box.iter().copied().map(scale).collect();
            cfg.y_box = base.y_box.iter().copied().map(scale).collect();
            let sol = solve_ocp(&build_ocp(&eqs, &up, &yp, &cfg).unwrap(), 1e-10).unwrap();
            assert_eq!(sol.solver_status, SolverStatus::Optimal);
            // tighter boxes come later, so the objective may only grow
            assert!(
                sol.objective >= last - 1e-7 * (1.0 + last.abs()),
                "{} < {last}",
                sol.objective
            );
            last = sol.objective;
        }
    }
}

#[test]
fn nominal_g_is_minimum_norm() {
    let mut rng = rng(4);
    let sys = random_system(&mut rng, 2, 1, 1);
    let cfg = freepc::ocp::OcpConfig::nominal(
        3,
        2,
        freepc::numcore::RealMatrix::identity(1, 1),
        freepc::numcore::RealMatrix::identity(1, 1) * 0.1,
    );
    let (u, y) = time_data(&mut rng, &sys, cfg.depth() + 2);
    let eqs = hankel_data_equations(&u, &y, cfg.depth()).unwrap();
    let (up, yp, _) = past_window(&mut rng, &sys, cfg.past);
    let sol = solve_ocp(&build_ocp(&eqs, &up, &yp, &cfg).unwrap(), 1e-10).unwrap();
    let d = eqs.matrix();
    let gv = freepc::numcore::RealVector::from_vec(sol.g.clone());
    let w = d * &gv;
    // the least-squares solution of D g = w is the minimum-norm one
    let g_min = freepc::numcore::least_squares(d, &w).unwrap();
    assert!((&gv - &g_min).norm() <= 1e-8 * (1.0 + g_min.norm()));
}
