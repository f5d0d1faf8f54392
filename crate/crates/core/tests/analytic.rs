use epikit::analytic::*;
use epikit::model::*;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn square(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = m[i][0] * m[0][j] + m[i][1] * m[1][j];
        }
    }
    out
}

prop_compose! {
    fn linear_params()(beta in 0.05f64..2.0, sigma in 0.02f64..1.0, gamma in 0.02f64..1.0, f in 0.0f64..1.0)
        -> SeirParams {
        SeirParams { beta0: beta, sigma, gamma, f, n: 1e3 }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dual_vectors_are_biorthogonal(p in linear_params()) {
        let e = eigensystem(&p).unwrap();
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let r_over_s = e.r_term / p.sigma;
        prop_assert!(dot(e.psi_plus, e.chi_plus).abs() <= 1e-12 * r_over_s.max(1.0));
        prop_assert!(dot(e.psi_minus, e.chi_minus).abs() <= 1e-12 * r_over_s.max(1.0));
        prop_assert!(close(dot(e.psi_plus, e.chi_minus), r_over_s, 1e-12));
        prop_assert!(close(dot(e.psi_minus, e.chi_plus), -r_over_s, 1e-12));
    }

    #[test]
    fn chi_are_eigenvectors_of_m_squared(p in linear_params()) {
        let e = eigensystem(&p).unwrap();
        let lam = square([[-p.sigma, p.beta0], [p.sigma, -p.gamma]]);
        for (chi, ev) in [(e.chi_plus, e.big_lambda_plus), (e.chi_minus, e.big_lambda_minus)] {
            let scale = lam.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) * chi[0].abs().max(1.0);
            for row in 0..2 {
                let lhs = lam[row][0] * chi[0] + lam[row][1] * chi[1];
                prop_assert!((lhs - ev * chi[row]).abs() <= 1e-12 * scale);
            }
        }
        prop_assert!(close(e.big_lambda_plus, e.a_term + e.b_term, 1e-12));
        prop_assert!(close(e.big_lambda_minus, e.a_term - e.b_term, 1e-9 * (e.a_term / e.big_lambda_minus.max(1e-300)).min(1e6)));
    }

    #[test]
    fn closed_form_satisfies_the_ode(p in linear_params(), t in 0.0f64..60.0, e0 in 0.0f64..20.0, i0 in 0.1f64..20.0) {
        let init = CompartmentState { s: 1e3, e: e0, i: i0, ..Default::default() };
        let sol = solve_linear_seir(&p, &init).unwrap();
        let (e, i) = sol.evaluate(t);
        let (de, di) = sol.derivative(t);
        let scale = e.abs().max(i.abs()) * (p.beta0 + p.sigma + p.gamma) + 1e-12;
        prop_assert!((de - (-p.sigma * e + p.beta0 * i)).abs() <= 1e-9 * scale);
        prop_assert!((di - (p.sigma * e - p.gamma * i)).abs() <= 1e-9 * scale);
        let (e_0, i_0) = sol.evaluate(0.0);
        prop_assert!(close(e_0, e0, 1e-12) && close(i_0, i0, 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn closed_form_matches_rk4(p in linear_params()) {
        let init = CompartmentState { s: 1e3, e: 0.0, i: 10.0, ..Default::default() };
        let sol = solve_linear_seir(&p, &init).unwrap();
        let t_end = 30.0;
        let ts = Simulation::new(ModelKind::SeirLinear, p, ControlSchedule::constant(p.beta0))
            .run(&init, t_end, 1e-3)
            .unwrap();
        for t in [5.0, 15.0, 30.0] {
            let num = ts.at(t).unwrap();
            let exact = sol.state_at(t);
            for (a, b) in num.to_array().iter().zip(exact.to_array()) {
                prop_assert!(close(*a, b, 1e-6), "t={} {} vs {}", t, a, b);
            }
        }
    }
}

#[test]
fn cumulative_cases_grow_at_sigma_e() {
    let p = SeirParams {
        beta0: 0.3,
        sigma: 0.2,
        gamma: 0.1,
        f: 0.2,
        n: 1e3,
    };
    let sol = solve_linear_seir(&p, &CompartmentState { s: 1e3, i: 10.0, ..Default::default() }).unwrap();
    let h = 1e-4;
    for t in [0.5, 7.0, 40.0] {
        let c = |t: f64| sol.integrated_populations(t).1;
        let fd = (c(t + h) - c(t - h)) / (2.0 * h);
        let (e, _) = sol.evaluate(t);
        assert!(close(fd, p.sigma * e, 1e-7), "{fd} vs {}", p.sigma * e);
    }
}

#[test]
fn late_log_slope_is_the_growth_rate() {
    let p = SeirParams {
        beta0: 0.5,
        sigma: 0.2,
        gamma: 0.1,
        f: 0.0,
        n: 1e3,
    };
    let sol = solve_linear_seir(&p, &CompartmentState { s: 1e3, i: 1.0, ..Default::default() }).unwrap();
    let r = ((p.gamma - p.sigma).powi(2) + 4.0 * p.beta0 * p.sigma).sqrt();
    let growth = (r - p.sigma - p.gamma) / 2.0;
    let slope = (sol.evaluate(101.0).1.ln() - sol.evaluate(99.0).1.ln()) / 2.0;
    assert!(close(slope, growth, 1e-10), "{slope} vs {growth}");
}

#[test]
fn coefficients_reproduce_boundary_data() {
    // Re-derive C1, D1 and the rates from the duals and compare.
    let p = SeirParams {
        beta0: 0.7,
        sigma: 0.3,
        gamma: 0.15,
        f: 0.1,
        n: 1e3,
    };
    let (e0, i0) = (4.0, 9.0);
    let sol = solve_linear_seir(&p, &CompartmentState { s: 1e3, e: e0, i: i0, ..Default::default() }).unwrap();
    let ev = &sol.eigen;
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    let slope = [-p.sigma * e0 + p.beta0 * i0, p.sigma * e0 - p.gamma * i0];
    let c1 = dot(ev.psi_minus, [e0, i0]) / dot(ev.psi_minus, ev.chi_plus);
    let d1 = dot(ev.psi_plus, [e0, i0]) / dot(ev.psi_plus, ev.chi_minus);
    let c2r = dot(ev.psi_minus, slope) / dot(ev.psi_minus, ev.chi_plus);
    let d2r = dot(ev.psi_plus, slope) / dot(ev.psi_plus, ev.chi_minus);
    assert!(close(sol.c1, c1, 1e-12) && close(sol.d1, d1, 1e-12));
    assert!(close(sol.c2_rate, c2r, 1e-12) && close(sol.d2_rate, d2r, 1e-12));
}
