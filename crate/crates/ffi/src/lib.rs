//! C ABI over `epikit`.
//!
//! Every fallible function returns an [`EpikitStatus`]; on failure the
//! message is kept per thread and can be read with
//! [`epikit_last_error_message`]. Objects that outlive a call are opaque
//! handles created by `*_new`/`*_run` functions and released with the
//! matching `*_free`. Passing null to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use epikit::calibrate::{fit_fermi_dirac, FermiDiracParams, GdOptions};
use epikit::model::{derived_stats, CompartmentState, ControlSchedule, ModelKind, SeirParams, Simulation, TimeSeries};
use epikit::scenario::preset;
use epikit::spatial::{make_grid, run_spatial, DensityFields, SpatialParams};
use epikit::stability::{dispersion, steady_state, Branch, SteadyState};
use epikit::stochastic::{build_sir_reactions, ensemble_stats, run_ensemble, EnsembleStats, OccupancyState};
use epikit::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpikitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Extinction = 4,
    OutOfRange = 5,
    Io = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> EpikitStatus {
    match err {
        Error::Extinction => EpikitStatus::Extinction,
        Error::Io(_) | Error::Parse { .. } | Error::EmptyFile(_) | Error::Csv(_) | Error::Json(_) => EpikitStatus::Io,
        e if e.is_numerical() => EpikitStatus::Numerical,
        _ => EpikitStatus::InvalidInput,
    }
}

enum Fail {
    Null(&'static str),
    Range(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EpikitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EpikitStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            EpikitStatus::NullPointer
        }
        Ok(Err(Fail::Range(msg))) => {
            set_error(msg);
            EpikitStatus::OutOfRange
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EpikitStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// excluding the terminator; an empty message means the last call succeeded.
#[no_mangle]
pub unsafe extern "C" fn epikit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epikit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpikitModel {
    Seir = 0,
    SeirLinear = 1,
    Sir = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitSeirParams {
    pub beta0: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Fraction of removals that die.
    pub f: f64,
    pub n: f64,
}

/// Transmission schedule. `removal_time` is NaN when controls are never lifted.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitControl {
    pub beta0: f64,
    pub t0: f64,
    pub alpha: f64,
    pub removal_time: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitState {
    pub t: f64,
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
    pub d: f64,
    pub c: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitDerivedStats {
    pub r0: f64,
    pub i0_incub: f64,
    pub half_life_transmission: f64,
    pub half_life_incubation: f64,
    pub half_life_infectious: f64,
    pub control_response_time: f64,
}

impl From<EpikitSeirParams> for SeirParams {
    fn from(p: EpikitSeirParams) -> Self {
        SeirParams {
            beta0: p.beta0,
            sigma: p.sigma,
            gamma: p.gamma,
            f: p.f,
            n: p.n,
        }
    }
}

impl From<SeirParams> for EpikitSeirParams {
    fn from(p: SeirParams) -> Self {
        EpikitSeirParams {
            beta0: p.beta0,
            sigma: p.sigma,
            gamma: p.gamma,
            f: p.f,
            n: p.n,
        }
    }
}

impl From<EpikitControl> for ControlSchedule {
    fn from(c: EpikitControl) -> Self {
        ControlSchedule {
            beta0: c.beta0,
            t0: c.t0,
            alpha: c.alpha,
            removal_time: (!c.removal_time.is_nan()).then_some(c.removal_time),
        }
    }
}

impl From<EpikitState> for CompartmentState {
    fn from(s: EpikitState) -> Self {
        CompartmentState {
            t: s.t,
            s: s.s,
            e: s.e,
            i: s.i,
            r: s.r,
            d: s.d,
            c: s.c,
        }
    }
}

impl From<CompartmentState> for EpikitState {
    fn from(s: CompartmentState) -> Self {
        EpikitState {
            t: s.t,
            s: s.s,
            e: s.e,
            i: s.i,
            r: s.r,
            d: s.d,
            c: s.c,
        }
    }
}

/// A compartment model with its parameters and schedule.
pub struct EpikitSimulation {
    inner: Simulation,
}

/// Samples of a compartment run.
pub struct EpikitSeries {
    inner: TimeSeries,
}

fn model_kind(m: EpikitModel) -> ModelKind {
    match m {
        EpikitModel::Seir => ModelKind::Seir,
        EpikitModel::SeirLinear => ModelKind::SeirLinear,
        EpikitModel::Sir => ModelKind::Sir,
    }
}

/// Create a simulation. A null `control` means constant `beta0`.
#[no_mangle]
pub unsafe extern "C" fn epikit_simulation_new(
    model: EpikitModel,
    params: *const EpikitSeirParams,
    control: *const EpikitControl,
    out: *mut *mut EpikitSimulation,
) -> EpikitStatus {
    guard(|| {
        let p = SeirParams::from(*get(params, "params")?);
        let out = get_mut(out, "out")?;
        let schedule = match control.as_ref() {
            Some(c) => ControlSchedule::from(*c),
            None => ControlSchedule::constant(p.beta0),
        };
        let sim = Simulation::new(model_kind(model), p, schedule);
        sim.validate()?;
        *out = Box::into_raw(Box::new(EpikitSimulation { inner: sim }));
        Ok(())
    })
}

/// Create the simulation of a named preset; its initial state, horizon and
/// step are written to `init`, `t_end` and `dt`.
#[no_mangle]
pub unsafe extern "C" fn epikit_simulation_preset(
    name: *const c_char,
    out: *mut *mut EpikitSimulation,
    init: *mut EpikitState,
    t_end: *mut f64,
    dt: *mut f64,
) -> EpikitStatus {
    guard(|| {
        if name.is_null() {
            return Err(Fail::Null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Error::InvalidInput("preset name is not UTF-8".into()))?;
        let (out, init, t_end, dt) = (get_mut(out, "out")?, get_mut(init, "init")?, get_mut(t_end, "t_end")?, get_mut(dt, "dt")?);
        let sc = preset(name).ok_or_else(|| Error::InvalidInput(format!("unknown preset {name:?}")))?;
        *init = sc.init.to_state().into();
        *t_end = sc.t_end;
        *dt = sc.dt;
        *out = Box::into_raw(Box::new(EpikitSimulation { inner: sc.simulation() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_simulation_free(sim: *mut EpikitSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Integrate from `init` to `t_end` with fixed step `dt`.
#[no_mangle]
pub unsafe extern "C" fn epikit_simulation_run(
    sim: *const EpikitSimulation,
    init: *const EpikitState,
    t_end: f64,
    dt: f64,
    out: *mut *mut EpikitSeries,
) -> EpikitStatus {
    guard(|| {
        let sim = get(sim, "sim")?;
        let init = CompartmentState::from(*get(init, "init")?);
        let out = get_mut(out, "out")?;
        let ts = sim.inner.run(&init, t_end, dt)?;
        *out = Box::into_raw(Box::new(EpikitSeries { inner: ts }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_series_len(series: *const EpikitSeries) -> usize {
    series.as_ref().map_or(0, |s| s.inner.samples.len())
}

#[no_mangle]
pub unsafe extern "C" fn epikit_series_get(series: *const EpikitSeries, index: usize, out: *mut EpikitState) -> EpikitStatus {
    guard(|| {
        let s = get(series, "series")?;
        let out = get_mut(out, "out")?;
        let len = s.inner.samples.len();
        let st = s
            .inner
            .samples
            .get(index)
            .ok_or_else(|| Fail::Range(format!("sample {index} out of range (len {len})")))?;
        *out = (*st).into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_series_free(series: *mut EpikitSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// R₀, incubation number, half-lives and control response time.
#[no_mangle]
pub unsafe extern "C" fn epikit_derived_stats(
    params: *const EpikitSeirParams,
    control: *const EpikitControl,
    out: *mut EpikitDerivedStats,
) -> EpikitStatus {
    guard(|| {
        let p = SeirParams::from(*get(params, "params")?);
        let out = get_mut(out, "out")?;
        let schedule = match control.as_ref() {
            Some(c) => ControlSchedule::from(*c),
            None => ControlSchedule::constant(p.beta0),
        };
        let s = derived_stats(&p, &schedule);
        *out = EpikitDerivedStats {
            r0: s.r0,
            i0_incub: s.i0_incub,
            half_life_transmission: s.half_life_transmission,
            half_life_incubation: s.half_life_incubation,
            half_life_infectious: s.half_life_infectious,
            control_response_time: s.control_response_time,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitSpatialParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub f_source: f64,
    pub g: f64,
    pub d_s: f64,
    pub d_i: f64,
}

impl From<EpikitSpatialParams> for SpatialParams {
    fn from(p: EpikitSpatialParams) -> Self {
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
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpikitBranch {
    /// Infection-free state.
    Red = 0,
    /// Endemic state.
    Blue = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpikitSteadyState {
    pub branch: EpikitBranch,
    pub phi_i: f64,
    pub phi_s: f64,
    pub feasible: bool,
}

/// Roots `ω±` of the dispersion relation at wavenumber `k`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitDispersion {
    pub k: f64,
    pub b_k: f64,
    pub c_k: f64,
    pub omega_plus_re: f64,
    pub omega_plus_im: f64,
    pub omega_minus_re: f64,
    pub omega_minus_im: f64,
    /// Nonzero if some mode grows (`Im ω > 0`).
    pub growing: bool,
}

#[no_mangle]
pub unsafe extern "C" fn epikit_steady_state(
    params: *const EpikitSpatialParams,
    branch: EpikitBranch,
    out: *mut EpikitSteadyState,
) -> EpikitStatus {
    guard(|| {
        let p = SpatialParams::from(*get(params, "params")?);
        let out = get_mut(out, "out")?;
        let b = match branch {
            EpikitBranch::Red => Branch::Red,
            EpikitBranch::Blue => Branch::Blue,
        };
        let st = steady_state(&p, b)?;
        *out = EpikitSteadyState {
            branch,
            phi_i: st.phi_i,
            phi_s: st.phi_s,
            feasible: st.feasible,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_dispersion(
    params: *const EpikitSpatialParams,
    state: *const EpikitSteadyState,
    k: f64,
    out: *mut EpikitDispersion,
) -> EpikitStatus {
    guard(|| {
        let p = SpatialParams::from(*get(params, "params")?);
        let st = get(state, "state")?;
        let out = get_mut(out, "out")?;
        p.validate()?;
        let st = SteadyState {
            branch: match st.branch {
                EpikitBranch::Red => Branch::Red,
                EpikitBranch::Blue => Branch::Blue,
            },
            phi_i: st.phi_i,
            phi_s: st.phi_s,
            feasible: st.feasible,
        };
        let d = dispersion(&p, &st, k);
        *out = EpikitDispersion {
            k: d.k,
            b_k: d.b_k,
            c_k: d.c_k,
            omega_plus_re: d.omega_plus.re,
            omega_plus_im: d.omega_plus.im,
            omega_minus_re: d.omega_minus.re,
            omega_minus_im: d.omega_minus.im,
            growing: d.growing(),
        };
        Ok(())
    })
}

/// Advance the density fields `phi_s`, `phi_i` (length `n`, a power of two
/// >= 64, on a periodic domain of `length`) to `t_end` in place.
#[no_mangle]
pub unsafe extern "C" fn epikit_spatial_run(
    params: *const EpikitSpatialParams,
    length: f64,
    n: usize,
    phi_s: *mut f64,
    phi_i: *mut f64,
    t_end: f64,
    dt: f64,
) -> EpikitStatus {
    guard(|| {
        let p = SpatialParams::from(*get(params, "params")?);
        let s = slice_mut(phi_s, n, "phi_s")?;
        let i = slice_mut(phi_i, n, "phi_i")?;
        let grid = make_grid(length, n)?;
        let init = DensityFields::new(s.to_vec(), i.to_vec());
        let out = run_spatial(&init, &p, &grid, t_end, dt, None)?;
        let last = out.final_fields().unwrap_or(&init);
        s.copy_from_slice(&last.phi_s);
        i.copy_from_slice(&last.phi_i);
        Ok(())
    })
}

/// Per-time means and standard errors of `(S, I, R, D, C)` totals.
pub struct EpikitEnsemble {
    inner: EnsembleStats,
}

/// Gillespie ensemble of the SIR network on `cells` cells of volume
/// `cell_volume`. `s0`, `i0` hold the initial counts per cell; `times`
/// must be sorted. Replicate `k` uses stream `k` of `seed`, so results do
/// not depend on the thread count.
#[no_mangle]
pub unsafe extern "C" fn epikit_gillespie_ensemble(
    params: *const EpikitSpatialParams,
    cells: usize,
    cell_volume: f64,
    s0: *const u64,
    i0: *const u64,
    times: *const f64,
    n_times: usize,
    runs: usize,
    seed: u64,
    out: *mut *mut EpikitEnsemble,
) -> EpikitStatus {
    guard(|| {
        let p = SpatialParams::from(*get(params, "params")?);
        let s0 = slice(s0, cells, "s0")?;
        let i0 = slice(i0, cells, "i0")?;
        let times = slice(times, n_times, "times")?;
        let out = get_mut(out, "out")?;
        if times.is_empty() {
            return Err(Error::InvalidInput("need at least one sample time".into()).into());
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidInput("sample times must be sorted".into()).into());
        }
        let sys = build_sir_reactions(&p, cells, cell_volume)?;
        let runs = run_ensemble(&sys, &OccupancyState::new(s0, i0), times, runs, seed)?;
        let stats = ensemble_stats(&runs)?;
        *out = Box::into_raw(Box::new(EpikitEnsemble { inner: stats }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_ensemble_len(ens: *const EpikitEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.inner.t.len())
}

/// Mean and standard error of species `species` (0..5 for S, I, R, D, C)
/// at sample `index`.
#[no_mangle]
pub unsafe extern "C" fn epikit_ensemble_get(
    ens: *const EpikitEnsemble,
    index: usize,
    species: usize,
    mean: *mut f64,
    std_error: *mut f64,
) -> EpikitStatus {
    guard(|| {
        let e = &get(ens, "ensemble")?.inner;
        let (mean, std_error) = (get_mut(mean, "mean")?, get_mut(std_error, "std_error")?);
        if index >= e.t.len() || species >= 5 {
            return Err(Fail::Range(format!(
                "sample {index}, species {species} out of range ({} samples, 5 species)",
                e.t.len()
            )));
        }
        *mean = e.mean[index][species];
        *std_error = e.std_error[index][species];
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epikit_ensemble_free(ens: *mut EpikitEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// `cases(t) = exp(a) / (1 + exp(-gamma_fd (t - t0)))`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpikitFermiDirac {
    pub a: f64,
    pub t0: f64,
    pub gamma_fd: f64,
}

/// Fit a Fermi-Dirac curve to cumulative `cases` at `times`, residuals in
/// log space if `log_space`. The final loss goes to `loss` unless it is null.
#[no_mangle]
pub unsafe extern "C" fn epikit_fit_fermi_dirac(
    times: *const f64,
    cases: *const f64,
    n: usize,
    log_space: bool,
    out: *mut EpikitFermiDirac,
    loss: *mut f64,
) -> EpikitStatus {
    guard(|| {
        let times = slice(times, n, "times")?;
        let cases = slice(cases, n, "cases")?;
        let out = get_mut(out, "out")?;
        let fit = fit_fermi_dirac(times, cases, log_space, &GdOptions::default())?;
        let FermiDiracParams { a, t0, gamma_fd } = fit.params;
        *out = EpikitFermiDirac { a, t0, gamma_fd };
        if let Some(l) = loss.as_mut() {
            *l = fit.result.loss;
        }
        Ok(())
    })
}
