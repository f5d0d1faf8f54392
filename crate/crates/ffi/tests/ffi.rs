use std::ffi::{c_char, CStr};
use std::ptr;

use epikit::calibrate::{fermi_dirac_eval, FermiDiracParams};
use epikit::model::{CompartmentState, ControlSchedule, ModelKind, SeirParams, Simulation};
use epikit::spatial::{gaussian, make_grid, run_spatial, DensityFields, SpatialParams};
use epikit::stability::{dispersion, steady_state, Branch};
use epikit::stochastic::{build_sir_reactions, ensemble_stats, run_ensemble, OccupancyState};
use epikit_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    unsafe {
        epikit_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn fig4() -> EpikitSeirParams {
    EpikitSeirParams {
        beta0: 0.5,
        sigma: 1.0 / 24.0,
        gamma: 1.0 / 14.0,
        f: 0.25,
        n: 1e4,
    }
}

fn vital() -> EpikitSpatialParams {
    EpikitSpatialParams {
        lambda: 0.5,
        mu: 0.25,
        nu: 0.01,
        f_source: 0.01,
        g: 0.1,
        d_s: 10.0,
        d_i: 2.0,
    }
}

fn core_spatial(p: &EpikitSpatialParams) -> SpatialParams {
    SpatialParams {
        lambda: p.lambda,
        mu: p.mu,
        nu: p.nu,
        f_source: p.f_source,
        g: p.g,
        d_s: p.d_s,
        d_i: p.d_i,
    }
}

#[test]
fn simulation_matches_the_library() {
    let p = fig4();
    let init = EpikitState {
        s: 9990.0,
        i: 10.0,
        ..Default::default()
    };
    let mut sim = ptr::null_mut();
    let mut series = ptr::null_mut();
    unsafe {
        assert_eq!(epikit_simulation_new(EpikitModel::Seir, &p, ptr::null(), &mut sim), EpikitStatus::Ok);
        assert_eq!(epikit_simulation_run(sim, &init, 100.0, 0.05, &mut series), EpikitStatus::Ok);
    }
    let lib = Simulation::new(
        ModelKind::Seir,
        SeirParams {
            beta0: p.beta0,
            sigma: p.sigma,
            gamma: p.gamma,
            f: p.f,
            n: p.n,
        },
        ControlSchedule::constant(p.beta0),
    )
    .run(&CompartmentState::seeded(1e4, 10.0), 100.0, 0.05)
    .unwrap();
    unsafe {
        assert_eq!(epikit_series_len(series), lib.samples.len());
        for (k, want) in lib.samples.iter().enumerate() {
            let mut got = EpikitState::default();
            assert_eq!(epikit_series_get(series, k, &mut got), EpikitStatus::Ok);
            assert_eq!([got.t, got.s, got.e, got.i, got.r, got.d, got.c], [want.t, want.s, want.e, want.i, want.r, want.d, want.c]);
        }
        let mut got = EpikitState::default();
        assert_eq!(epikit_series_get(series, lib.samples.len(), &mut got), EpikitStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        epikit_series_free(series);
        epikit_simulation_free(sim);
    }
}

#[test]
fn presets_and_controls() {
    let name = c"ebola";
    let mut sim = ptr::null_mut();
    let mut init = EpikitState::default();
    let (mut t_end, mut dt) = (0.0, 0.0);
    unsafe {
        assert_eq!(epikit_simulation_preset(name.as_ptr(), &mut sim, &mut init, &mut t_end, &mut dt), EpikitStatus::Ok);
        assert_eq!(init.i, 1.0);
        assert_eq!(t_end, 700.0);
        let mut series = ptr::null_mut();
        assert_eq!(epikit_simulation_run(sim, &init, 10.0, dt, &mut series), EpikitStatus::Ok);
        assert!(epikit_series_len(series) > 1);
        epikit_series_free(series);
        epikit_simulation_free(sim);

        let bad = c"nope";
        assert_eq!(
            epikit_simulation_preset(bad.as_ptr(), &mut sim, &mut init, &mut t_end, &mut dt),
            EpikitStatus::InvalidInput
        );
        assert!(last_error().contains("unknown preset"));
    }

    let control = EpikitControl {
        beta0: 0.266,
        t0: 1.0,
        alpha: 0.00648,
        removal_time: f64::NAN,
    };
    let p = EpikitSeirParams {
        beta0: 0.266,
        sigma: 0.072,
        gamma: 0.0533,
        f: 0.396,
        n: 1e6,
    };
    let mut stats = EpikitDerivedStats::default();
    unsafe {
        assert_eq!(epikit_derived_stats(&p, &control, &mut stats), EpikitStatus::Ok);
    }
    assert!((stats.r0 - 0.266 / 0.0533).abs() < 1e-15);
    assert!((stats.control_response_time - std::f64::consts::LN_2 / 0.00648).abs() < 1e-12);

    let bad = EpikitControl { removal_time: 0.5, ..control };
    unsafe {
        assert_eq!(epikit_simulation_new(EpikitModel::Seir, &p, &bad, &mut sim), EpikitStatus::InvalidInput);
    }
    assert!(last_error().contains("removal_time"));
}

#[test]
fn null_pointers_are_reported() {
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(epikit_simulation_new(EpikitModel::Sir, ptr::null(), ptr::null(), &mut sim), EpikitStatus::NullPointer);
        assert_eq!(last_error(), "null pointer: params");
        assert_eq!(epikit_simulation_new(EpikitModel::Sir, &fig4(), ptr::null(), ptr::null_mut()), EpikitStatus::NullPointer);
        assert_eq!(epikit_series_len(ptr::null()), 0);
        epikit_series_free(ptr::null_mut());
        epikit_simulation_free(ptr::null_mut());
        epikit_ensemble_free(ptr::null_mut());
        let mut out = EpikitFermiDirac::default();
        assert_eq!(epikit_fit_fermi_dirac(ptr::null(), ptr::null(), 5, false, &mut out, ptr::null_mut()), EpikitStatus::NullPointer);
    }
}

#[test]
fn error_message_is_truncated_and_cleared() {
    let mut sim = ptr::null_mut();
    unsafe {
        epikit_simulation_new(EpikitModel::Seir, ptr::null(), ptr::null(), &mut sim);
        let full = epikit_last_error_message(ptr::null_mut(), 0);
        assert_eq!(full, "null pointer: params".len());
        let mut buf = [1 as c_char; 5];
        assert_eq!(epikit_last_error_message(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes(), b"null");

        let mut stats = EpikitDerivedStats::default();
        assert_eq!(epikit_derived_stats(&fig4(), ptr::null(), &mut stats), EpikitStatus::Ok);
        assert_eq!(epikit_last_error_message(ptr::null_mut(), 0), 0);
    }
}

#[test]
fn stability_matches_the_library() {
    let p = vital();
    let cp = core_spatial(&p);
    for (branch, core_branch) in [(EpikitBranch::Red, Branch::Red), (EpikitBranch::Blue, Branch::Blue)] {
        let mut st = EpikitSteadyState {
            branch,
            phi_i: 0.0,
            phi_s: 0.0,
            feasible: false,
        };
        unsafe {
            assert_eq!(epikit_steady_state(&p, branch, &mut st), EpikitStatus::Ok);
        }
        let want = steady_state(&cp, core_branch).unwrap();
        assert_eq!((st.phi_i, st.phi_s, st.feasible), (want.phi_i, want.phi_s, want.feasible));
        for k in [0.0, 0.05, 0.3, 2.0] {
            let mut d = EpikitDispersion::default();
            unsafe {
                assert_eq!(epikit_dispersion(&p, &st, k, &mut d), EpikitStatus::Ok);
            }
            let w = dispersion(&cp, &want, k);
            assert_eq!((d.b_k, d.c_k), (w.b_k, w.c_k));
            assert_eq!((d.omega_plus_re, d.omega_plus_im), (w.omega_plus.re, w.omega_plus.im));
            assert_eq!((d.omega_minus_re, d.omega_minus_im), (w.omega_minus.re, w.omega_minus.im));
            assert_eq!(d.growing, w.growing());
        }
    }
}

#[test]
fn spatial_run_updates_fields_in_place() {
    let p = vital();
    let grid = make_grid(100.0, 64).unwrap();
    let mut s = vec![0.95; 64];
    let mut i = gaussian(&grid, 3.0, 0.0, 5.0);
    let want = run_spatial(&DensityFields::new(s.clone(), i.clone()), &core_spatial(&p), &grid, 5.0, 0.1, None).unwrap();
    let want = want.final_fields().unwrap();
    unsafe {
        assert_eq!(epikit_spatial_run(&p, 100.0, 64, s.as_mut_ptr(), i.as_mut_ptr(), 5.0, 0.1), EpikitStatus::Ok);
    }
    assert_eq!(s, want.phi_s);
    assert_eq!(i, want.phi_i);

    let mut small = vec![0.5; 10];
    let mut small_i = vec![0.0; 10];
    unsafe {
        assert_eq!(
            epikit_spatial_run(&p, 100.0, 10, small.as_mut_ptr(), small_i.as_mut_ptr(), 1.0, 0.1),
            EpikitStatus::InvalidInput
        );
    }
    assert!(last_error().contains("power of two"));
}

#[test]
fn ensemble_matches_the_library() {
    let p = EpikitSpatialParams {
        lambda: 0.5,
        mu: 0.25,
        nu: 0.0,
        f_source: 0.0,
        g: 0.1,
        d_s: 1.0,
        d_i: 0.5,
    };
    let (s0, i0) = ([200u64, 200, 200], [0u64, 5, 0]);
    let times = [1.0, 5.0, 10.0];
    let mut ens = ptr::null_mut();
    unsafe {
        assert_eq!(
            epikit_gillespie_ensemble(&p, 3, 100.0, s0.as_ptr(), i0.as_ptr(), times.as_ptr(), 3, 50, 99, &mut ens),
            EpikitStatus::Ok
        );
    }
    let sys = build_sir_reactions(&core_spatial(&p), 3, 100.0).unwrap();
    let runs = run_ensemble(&sys, &OccupancyState::new(&s0, &i0), &times, 50, 99).unwrap();
    let want = ensemble_stats(&runs).unwrap();
    unsafe {
        assert_eq!(epikit_ensemble_len(ens), 3);
        for k in 0..3 {
            for q in 0..5 {
                let (mut m, mut se) = (0.0, 0.0);
                assert_eq!(epikit_ensemble_get(ens, k, q, &mut m, &mut se), EpikitStatus::Ok);
                assert_eq!((m, se), (want.mean[k][q], want.std_error[k][q]));
            }
        }
        let (mut m, mut se) = (0.0, 0.0);
        assert_eq!(epikit_ensemble_get(ens, 0, 5, &mut m, &mut se), EpikitStatus::OutOfRange);
        epikit_ensemble_free(ens);

        let unsorted = [5.0, 1.0];
        assert_eq!(
            epikit_gillespie_ensemble(&p, 3, 100.0, s0.as_ptr(), i0.as_ptr(), unsorted.as_ptr(), 2, 50, 99, &mut ens),
            EpikitStatus::InvalidInput
        );
    }
}

#[test]
fn fermi_dirac_fit_recovers_parameters() {
    let truth = FermiDiracParams {
        a: 10.0,
        t0: 50.0,
        gamma_fd: 0.08,
    };
    let times: Vec<f64> = (0..120).map(f64::from).collect();
    let cases: Vec<f64> = times.iter().map(|t| fermi_dirac_eval(&truth, *t)).collect();
    let mut out = EpikitFermiDirac::default();
    let mut loss = f64::NAN;
    unsafe {
        assert_eq!(
            epikit_fit_fermi_dirac(times.as_ptr(), cases.as_ptr(), times.len(), true, &mut out, &mut loss),
            EpikitStatus::Ok
        );
    }
    for (g, t) in [out.a, out.t0, out.gamma_fd].iter().zip([10.0, 50.0, 0.08]) {
        assert!((g / t - 1.0).abs() < 1e-3, "{out:?}");
    }
    assert!(loss >= 0.0 && loss < 1e-6);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(epikit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
