//! Continuum SIR densities on a periodic 1-D domain:
//!
//! ```text
//! ∂t φI = (DI ∂x² - μ) φI + λ φS φI
//! ∂t φS = (DS ∂x² - ν) φS - λ φS φI + f
//! ∂t φR = (1 - g) μ φI,  ∂t φD = g μ φI,  ∂t φC = μ φI
//! ```
//!
//! The stiff linear part is integrated exactly in Fourier space with the
//! fourth-order exponential time-differencing Runge-Kutta scheme (ETDRK4).
//! Its φ-function coefficients are evaluated as contour averages so they
//! stay accurate when `L·dt` is near zero. Quadratic terms are dealiased
//! with the 2/3 rule and densities are kept real. The recovered, dead and
//! cumulative densities do not feed back and are accumulated by the
//! trapezoidal rule between steps.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CompartmentState;

type C64 = Complex64;

/// Uniform periodic grid on `[-L/2, L/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D {
    pub length: f64,
    pub n: usize,
    pub h: f64,
    /// Node positions; the origin sits at index `n / 2`.
    pub x: Vec<f64>,
    /// Angular wavenumbers in FFT order (zero mode first).
    pub k: Vec<f64>,
}

pub fn make_grid(length: f64, n: usize) -> Result<Grid1D> {
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::BadResolution(n));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::InvalidInput(format!("domain length must be > 0, got {length}")));
    }
    let h = length / n as f64;
    let x = (0..n).map(|j| -0.5 * length + j as f64 * h).collect();
    let k = (0..n)
        .map(|j| {
            let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * PI * m / length
        })
        .collect();
    Ok(Grid1D { length, n, h, x, k })
}

impl Grid1D {
    /// Signed mode index of FFT slot `j`.
    pub fn mode_index(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// True for modes kept by the 2/3 rule (`|j| <= n/3`).
    pub fn keeps_mode(&self, j: usize) -> bool {
        3 * self.mode_index(j).unsigned_abs() as usize <= self.n
    }
}

/// Rate constants of the density model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    /// Infection coupling λ.
    pub lambda: f64,
    /// Removal rate μ of the infected.
    pub mu: f64,
    /// Death rate ν of the susceptible.
    pub nu: f64,
    /// Birth (source) density rate f of the susceptible.
    pub f_source: f64,
    /// Fraction of removals that die.
    pub g: f64,
    pub d_s: f64,
    pub d_i: f64,
}

impl SpatialParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.lambda, self.mu, self.nu, self.f_source, self.d_s, self.d_i];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("spatial rate constants must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.g) {
            return Err(Error::InvalidInput(format!("g must lie in [0, 1], got {}", self.g)));
        }
        Ok(())
    }
}

/// Density fields on the grid plus the non-dynamical accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityFields {
    pub t: f64,
    pub phi_s: Vec<f64>,
    pub phi_i: Vec<f64>,
    pub phi_r: Vec<f64>,
    pub phi_d: Vec<f64>,
    pub phi_c: Vec<f64>,
}

impl DensityFields {
    /// Fields with zero accumulators.
    pub fn new(phi_s: Vec<f64>, phi_i: Vec<f64>) -> Self {
        let n = phi_s.len();
        Self {
            t: 0.0,
            phi_s,
            phi_i,
            phi_r: vec![0.0; n],
            phi_d: vec![0.0; n],
            phi_c: vec![0.0; n],
        }
    }

    pub fn uniform(n: usize, phi_s: f64, phi_i: f64) -> Self {
        Self::new(vec![phi_s; n], vec![phi_i; n])
    }

    pub fn len(&self) -> usize {
        self.phi_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_s.is_empty()
    }

    /// Shift every field by `m` grid points (periodically).
    pub fn rotated(&self, m: usize) -> Self {
        let rot = |v: &Vec<f64>| {
            let mut out = v.clone();
            out.rotate_right(m % v.len().max(1));
            out
        };
        Self {
            t: self.t,
            phi_s: rot(&self.phi_s),
            phi_i: rot(&self.phi_i),
            phi_r: rot(&self.phi_r),
            phi_d: rot(&self.phi_d),
            phi_c: rot(&self.phi_c),
        }
    }
}

/// Forward/inverse FFT pair with scratch space.
pub(crate) struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
    n: usize,
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![C64::new(0.0, 0.0); len],
            n,
        }
    }

    /// Unnormalized forward transform of a real field.
    pub(crate) fn forward_real(&mut self, v: &[f64], out: &mut [C64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = C64::new(*x, 0.0);
        }
        self.forward.process_with_scratch(out, &mut self.scratch);
    }

    pub(crate) fn forward_complex(&mut self, buf: &mut [C64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Normalized inverse transform, in place.
    pub(crate) fn inverse_complex(&mut self, buf: &mut [C64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    /// Normalized inverse transform returning the real part and the largest
    /// discarded imaginary component.
    pub(crate) fn inverse_real(&mut self, spec: &[C64], buf: &mut [C64], out: &mut [f64]) -> f64 {
        buf.copy_from_slice(spec);
        self.inverse_complex(buf);
        let mut residue = 0.0f64;
        for (o, z) in out.iter_mut().zip(buf.iter()) {
            *o = z.re;
            residue = residue.max(z.im.abs());
        }
        residue
    }
}

/// Number of contour points used for the φ-function averages.
pub const CONTOUR_POINTS: usize = 32;

/// ETDRK4 coefficients for a diagonal linear operator `c` and step `dt`:
/// `(e^{c dt}, e^{c dt/2}, Q, f1, f2, f3)`.
pub fn etdrk4_coefficients(c: f64, dt: f64) -> [f64; 6] {
    let mut q = C64::new(0.0, 0.0);
    let mut f1 = q;
    let mut f2 = q;
    let mut f3 = q;
    for j in 0..CONTOUR_POINTS {
        let theta = 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
        let z = C64::new(c * dt, 0.0) + C64::from_polar(1.0, theta);
        let ez = z.exp();
        let z3 = z * z * z;
        q += ((z / 2.0).exp() - 1.0) / z;
        f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
        f2 += (2.0 + z + ez * (z - 2.0)) / z3;
        f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
    }
    let m = CONTOUR_POINTS as f64;
    [
        (c * dt).exp(),
        (c * dt / 2.0).exp(),
        dt * q.re / m,
        dt * f1.re / m,
        dt * f2.re / m,
        dt * f3.re / m,
    ]
}

#[derive(Clone, Debug)]
struct Coeffs {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Coeffs {
    fn new(linear: impl Iterator<Item = f64>, dt: f64) -> Self {
        let mut c = Coeffs {
            e: vec![],
            e2: vec![],
            q: vec![],
            f1: vec![],
            f2: vec![],
            f3: vec![],
        };
        for l in linear {
            let [e, e2, q, f1, f2, f3] = etdrk4_coefficients(l, dt);
            c.e.push(e);
            c.e2.push(e2);
            c.q.push(q);
            c.f1.push(f1);
            c.f2.push(f2);
            c.f3.push(f3);
        }
        c
    }
}

/// Prepared ETDRK4 stepper for a fixed parameter set, grid and step.
pub struct Etdrk4 {
    pub params: SpatialParams,
    pub grid: Grid1D,
    pub dt: f64,
    /// Reference density; states below `-1e-6 · rho0` are rejected.
    pub rho0: f64,
    coeff_i: Coeffs,
    coeff_s: Coeffs,
    keep: Vec<bool>,
    spectral: Spectral,
    buf: Vec<C64>,
    phys_s: Vec<f64>,
    phys_i: Vec<f64>,
    /// Largest imaginary residue seen in the last inverse transforms,
    /// relative to the largest density magnitude.
    pub last_imag_residue: f64,
}

/// Fields in Fourier space.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub i: Vec<C64>,
    pub s: Vec<C64>,
}

impl Etdrk4 {
    pub fn new(params: SpatialParams, grid: Grid1D, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        let lin_i = grid.k.iter().map(|k| -params.d_i * k * k - params.mu);
        let lin_s = grid.k.iter().map(|k| -params.d_s * k * k - params.nu);
        let coeff_i = Coeffs::new(lin_i, dt);
        let coeff_s = Coeffs::new(lin_s, dt);
        let keep = (0..grid.n).map(|j| grid.keeps_mode(j)).collect();
        let n = grid.n;
        Ok(Self {
            params,
            dt,
            rho0: 1.0,
            coeff_i,
            coeff_s,
            keep,
            spectral: Spectral::new(n),
            buf: vec![C64::new(0.0, 0.0); n],
            phys_s: vec![0.0; n],
            phys_i: vec![0.0; n],
            grid,
            last_imag_residue: 0.0,
        })
    }

    pub fn with_reference_density(mut self, rho0: f64) -> Self {
        self.rho0 = rho0;
        self
    }

    fn dealias(&self, v: &mut [C64]) {
        for (z, keep) in v.iter_mut().zip(&self.keep) {
            if !keep {
                *z = C64::new(0.0, 0.0);
            }
        }
    }

    /// Transform physical densities to a dealiased spectrum.
    pub fn to_spectrum(&mut self, phi_s: &[f64], phi_i: &[f64]) -> Spectrum {
        let n = self.grid.n;
        let mut s = vec![C64::new(0.0, 0.0); n];
        let mut i = vec![C64::new(0.0, 0.0); n];
        self.spectral.forward_real(phi_s, &mut s);
        self.spectral.forward_real(phi_i, &mut i);
        self.dealias(&mut s);
        self.dealias(&mut i);
        Spectrum { i, s }
    }

    /// Real densities `(φS, φI)` of a spectrum.
    pub fn to_physical(&mut self, spec: &Spectrum, phi_s: &mut [f64], phi_i: &mut [f64]) {
        let rs = self.spectral.inverse_real(&spec.s, &mut self.buf, phi_s);
        let ri = self.spectral.inverse_real(&spec.i, &mut self.buf, phi_i);
        let scale = phi_s
            .iter()
            .chain(phi_i.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        self.last_imag_residue = rs.max(ri) / scale;
    }

    /// Dealiased transforms of `(λ φS φI, -λ φS φI + f)`.
    fn nonlinear(&mut self, spec: &Spectrum) -> Spectrum {
        let mut ps = std::mem::take(&mut self.phys_s);
        let mut pi = std::mem::take(&mut self.phys_i);
        self.spectral.inverse_real(&spec.s, &mut self.buf, &mut ps);
        self.spectral.inverse_real(&spec.i, &mut self.buf, &mut pi);
        let (lambda, f) = (self.params.lambda, self.params.f_source);
        let n = self.grid.n;
        let mut ni = vec![C64::new(0.0, 0.0); n];
        let mut ns = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            let coupling = lambda * ps[j] * pi[j];
            ni[j] = C64::new(coupling, 0.0);
            ns[j] = C64::new(f - coupling, 0.0);
        }
        self.spectral.forward_complex(&mut ni);
        self.spectral.forward_complex(&mut ns);
        self.dealias(&mut ni);
        self.dealias(&mut ns);
        self.phys_s = ps;
        self.phys_i = pi;
        Spectrum { i: ni, s: ns }
    }

    /// One ETDRK4 step of the spectrum.
    pub fn step_spectrum(&mut self, v: &Spectrum) -> Spectrum {
        let nv = self.nonlinear(v);
        let a = stage(&self.coeff_i, &self.coeff_s, v, &nv, |c, j| (c.e2[j], c.q[j]));
        let na = self.nonlinear(&a);
        let b = stage(&self.coeff_i, &self.coeff_s, v, &na, |c, j| (c.e2[j], c.q[j]));
        let nb = self.nonlinear(&b);
        let n = self.grid.n;
        let mut cst = Spectrum {
            i: vec![C64::new(0.0, 0.0); n],
            s: vec![C64::new(0.0, 0.0); n],
        };
        for j in 0..n {
            cst.i[j] = self.coeff_i.e2[j] * a.i[j] + self.coeff_i.q[j] * (2.0 * nb.i[j] - nv.i[j]);
            cst.s[j] = self.coeff_s.e2[j] * a.s[j] + self.coeff_s.q[j] * (2.0 * nb.s[j] - nv.s[j]);
        }
        let nc = self.nonlinear(&cst);
        let mut out = Spectrum {
            i: vec![C64::new(0.0, 0.0); n],
            s: vec![C64::new(0.0, 0.0); n],
        };
        for j in 0..n {
            let ci = &self.coeff_i;
            out.i[j] = ci.e[j] * v.i[j]
                + ci.f1[j] * nv.i[j]
                + 2.0 * ci.f2[j] * (na.i[j] + nb.i[j])
                + ci.f3[j] * nc.i[j];
            let cs = &self.coeff_s;
            out.s[j] = cs.e[j] * v.s[j]
                + cs.f1[j] * nv.s[j]
                + 2.0 * cs.f2[j] * (na.s[j] + nb.s[j])
                + cs.f3[j] * nc.s[j];
        }
        self.dealias(&mut out.i);
        self.dealias(&mut out.s);
        out
    }

    /// Advance physical fields by one step, including the accumulators.
    pub fn step(&mut self, fields: &DensityFields) -> Result<DensityFields> {
        let spec = self.to_spectrum(&fields.phi_s, &fields.phi_i);
        let next = self.step_spectrum(&spec);
        let mut out = fields.clone();
        self.to_physical(&next, &mut out.phi_s, &mut out.phi_i);
        out.t = fields.t + self.dt;
        self.accumulate(&fields.phi_i, &mut out);
        self.check(&out)?;
        Ok(out)
    }

    fn accumulate(&self, phi_i_old: &[f64], out: &mut DensityFields) {
        let (mu, g, dt) = (self.params.mu, self.params.g, self.dt);
        for j in 0..out.len() {
            let removal = 0.5 * dt * mu * (phi_i_old[j] + out.phi_i[j]);
            out.phi_r[j] += (1.0 - g) * removal;
            out.phi_d[j] += g * removal;
            out.phi_c[j] += removal;
        }
    }

    fn check(&self, fields: &DensityFields) -> Result<()> {
        let tol = 1e-6 * self.rho0;
        let mut min = f64::INFINITY;
        for v in fields.phi_s.iter().chain(fields.phi_i.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite { t: fields.t });
            }
            min = min.min(*v);
        }
        if min < -tol {
            return Err(Error::NegativeDensity {
                t: fields.t,
                value: min,
                tolerance: tol,
            });
        }
        Ok(())
    }
}

fn stage(
    ci: &Coeffs,
    cs: &Coeffs,
    v: &Spectrum,
    nl: &Spectrum,
    pick: impl Fn(&Coeffs, usize) -> (f64, f64),
) -> Spectrum {
    let n = v.i.len();
    let mut out = Spectrum {
        i: vec![C64::new(0.0, 0.0); n],
        s: vec![C64::new(0.0, 0.0); n],
    };
    for j in 0..n {
        let (e2, q) = pick(ci, j);
        out.i[j] = e2 * v.i[j] + q * nl.i[j];
        let (e2, q) = pick(cs, j);
        out.s[j] = e2 * v.s[j] + q * nl.s[j];
    }
    out
}

/// One ETDRK4 step from physical fields.
pub fn etdrk4_step(fields: &DensityFields, p: &SpatialParams, grid: &Grid1D, dt: f64) -> Result<DensityFields> {
    let rho0 = reference_density(fields);
    Etdrk4::new(*p, grid.clone(), dt)?
        .with_reference_density(rho0)
        .step(fields)
}

/// Mean total density of the initial fields, used to scale tolerances.
pub fn reference_density(fields: &DensityFields) -> f64 {
    let n = fields.len().max(1) as f64;
    let mean = fields
        .phi_s
        .iter()
        .zip(&fields.phi_i)
        .map(|(s, i)| s.abs() + i.abs())
        .sum::<f64>()
        / n;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Spatially integrated populations (rectangle rule on the periodic grid).
/// `e` is always zero.
pub fn integrate_totals(fields: &DensityFields, grid: &Grid1D) -> CompartmentState {
    let sum = |v: &[f64]| v.iter().sum::<f64>() * grid.h;
    CompartmentState {
        t: fields.t,
        s: sum(&fields.phi_s),
        e: 0.0,
        i: sum(&fields.phi_i),
        r: sum(&fields.phi_r),
        d: sum(&fields.phi_d),
        c: sum(&fields.phi_c),
    }
}

/// Output of [`run_spatial`].
#[derive(Clone, Debug, Default)]
pub struct SpatialSeries {
    /// Field snapshots at the requested cadence (always includes start and end).
    pub snapshots: Vec<DensityFields>,
    /// Integrated totals after every step.
    pub totals: Vec<CompartmentState>,
    /// Largest relative imaginary residue seen over the run.
    pub max_imag_residue: f64,
}

impl SpatialSeries {
    pub fn final_fields(&self) -> Option<&DensityFields> {
        self.snapshots.last()
    }
}

/// Integrate from `init` to `t_end` with step `dt`, keeping a field snapshot
/// every `snapshot_every` days (only the endpoints when `None`).
pub fn run_spatial(
    init: &DensityFields,
    p: &SpatialParams,
    grid: &Grid1D,
    t_end: f64,
    dt: f64,
    snapshot_every: Option<f64>,
) -> Result<SpatialSeries> {
    if init.len() != grid.n {
        return Err(Error::InvalidInput(format!(
            "fields have {} points but the grid has {}",
            init.len(),
            grid.n
        )));
    }
    let mut stepper = Etdrk4::new(*p, grid.clone(), dt)?.with_reference_density(reference_density(init));
    let steps = crate::ode::step_count(t_end - init.t, dt);
    let cadence = snapshot_every.map(|s| crate::ode::step_count(s, dt).max(1));

    let mut fields = init.clone();
    let mut spec = stepper.to_spectrum(&fields.phi_s, &fields.phi_i);
    // The dealiased initial condition is what actually evolves.
    stepper.to_physical(&spec, &mut fields.phi_s, &mut fields.phi_i);

    let mut out = SpatialSeries {
        snapshots: vec![fields.clone()],
        totals: vec![integrate_totals(&fields, grid)],
        max_imag_residue: 0.0,
    };
    let t0 = init.t;
    for n in 0..steps {
        let next = stepper.step_spectrum(&spec);
        let old_i = std::mem::take(&mut fields.phi_i);
        fields.phi_i = vec![0.0; grid.n];
        stepper.to_physical(&next, &mut fields.phi_s, &mut fields.phi_i);
        out.max_imag_residue = out.max_imag_residue.max(stepper.last_imag_residue);
        fields.t = t0 + (n + 1) as f64 * dt;
        stepper.accumulate(&old_i, &mut fields);
        stepper.check(&fields)?;
        out.totals.push(integrate_totals(&fields, grid));
        let last = n + 1 == steps;
        if last || cadence.is_some_and(|c| (n + 1) % c == 0) {
            out.snapshots.push(fields.clone());
        }
        spec = next;
    }
    Ok(out)
}

/// Gaussian bump of total mass `mass` and width `width` centred at `x0`.
pub fn gaussian(grid: &Grid1D, mass: f64, x0: f64, width: f64) -> Vec<f64> {
    let norm = mass / ((2.0 * PI).sqrt() * width);
    grid.x
        .iter()
        .map(|x| norm * (-(x - x0).powi(2) / (2.0 * width * width)).exp())
        .collect()
}

/// Rightmost position right of the origin where `phi` exceeds `threshold`.
pub fn front_position(grid: &Grid1D, phi: &[f64], threshold: f64) -> Option<f64> {
    let origin = grid.n / 2;
    (origin..grid.n)
        .rev()
        .find(|&j| phi[j] >= threshold)
        .map(|j| grid.x[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SpatialParams {
        SpatialParams {
            lambda: 0.0,
            mu: 0.25,
            nu: 0.0,
            f_source: 0.0,
            g: 0.1,
            d_s: 1.0,
            d_i: 2.0,
        }
    }

    #[test]
    fn grid_basics() {
        let g = make_grid(100.0, 256).unwrap();
        assert_eq!(g.h, 0.390625);
        assert_eq!(g.k[0], 0.0);
        assert_eq!(g.x[128], 0.0);
        assert!((g.k[1] - 2.0 * PI / 100.0).abs() < 1e-15);
        assert!(g.k[255] < 0.0);
        assert!(matches!(make_grid(100.0, 100), Err(Error::BadResolution(100))));
        assert!(matches!(make_grid(100.0, 32), Err(Error::BadResolution(32))));
    }

    #[test]
    fn parseval_against_direct_sum() {
        let g = make_grid(10.0, 64).unwrap();
        let v: Vec<f64> = (0..64).map(|j| ((j * 37 % 11) as f64).sin() + 0.3 * j as f64).collect();
        let mut sp = Spectral::new(64);
        let mut out = vec![C64::new(0.0, 0.0); 64];
        sp.forward_real(&v, &mut out);
        let direct: f64 = v.iter().map(|x| x * x).sum();
        let spectral: f64 = out.iter().map(|z| z.norm_sqr()).sum::<f64>() / 64.0;
        assert!((direct - spectral).abs() < 1e-10 * direct);
        // DFT by direct summation for a single mode.
        let m = 3;
        let dft: C64 = v
            .iter()
            .enumerate()
            .map(|(j, x)| x * C64::from_polar(1.0, -2.0 * PI * (m * j) as f64 / 64.0))
            .sum();
        assert!((dft - out[m]).norm() < 1e-10);
        assert_eq!(g.n, 64);
    }

    #[test]
    fn contour_coefficients_match_closed_form_away_from_zero() {
        let (c, dt) = (-3.0, 0.5);
        let z: f64 = c * dt;
        let [e, e2, q, f1, f2, f3] = etdrk4_coefficients(c, dt);
        assert!((e - z.exp()).abs() < 1e-15);
        assert!((e2 - (z / 2.0).exp()).abs() < 1e-15);
        assert!((q - dt * ((z / 2.0).exp() - 1.0) / z).abs() < 1e-13);
        let ez = z.exp();
        let z3 = z * z * z;
        assert!((f1 - dt * (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).abs() < 1e-13);
        assert!((f2 - dt * (2.0 + z + ez * (z - 2.0)) / z3).abs() < 1e-13);
        assert!((f3 - dt * (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).abs() < 1e-13);
    }

    #[test]
    fn contour_coefficients_at_zero_limit() {
        // Limits as c → 0: Q = dt/2, f1 = dt/6, f2 = dt/6, f3 = dt/6.
        let [e, _, q, f1, f2, f3] = etdrk4_coefficients(0.0, 0.1);
        assert_eq!(e, 1.0);
        assert!((q - 0.05).abs() < 1e-14);
        for f in [f1, f2, f3] {
            assert!((f - 0.1 / 6.0).abs() < 1e-14, "{f}");
        }
    }

    #[test]
    fn linear_mode_decays_exactly() {
        let grid = make_grid(100.0, 64).unwrap();
        let p = quiet();
        let kx = 2.0 * PI / grid.length;
        let phi_i: Vec<f64> = grid.x.iter().map(|x| 1.0 + 0.5 * (kx * x).sin()).collect();
        let init = DensityFields::new(vec![0.0; 64], phi_i);
        let t_end = 3.0;
        let run = run_spatial(&init, &p, &grid, t_end, 0.1, None).unwrap();
        let last = run.final_fields().unwrap();
        let mean_decay = (-p.mu * t_end).exp();
        let amp_decay = (-(p.d_i * kx * kx + p.mu) * t_end).exp();
        for (x, v) in grid.x.iter().zip(&last.phi_i) {
            let exact = mean_decay + 0.5 * amp_decay * (kx * x).sin();
            assert!((v - exact).abs() < 1e-6 * exact.abs().max(1e-3), "{v} vs {exact}");
        }
    }

    #[test]
    fn dealiased_modes_stay_zero() {
        let grid = make_grid(20.0, 64).unwrap();
        let p = SpatialParams {
            lambda: 0.5,
            mu: 0.25,
            nu: 0.01,
            f_source: 0.01,
            g: 0.1,
            d_s: 1.0,
            d_i: 0.5,
        };
        let phi_i = gaussian(&grid, 1.0, 0.0, 1.0);
        let init = DensityFields::new(vec![0.9; 64], phi_i);
        let mut st = Etdrk4::new(p, grid.clone(), 0.05).unwrap();
        let mut spec = st.to_spectrum(&init.phi_s, &init.phi_i);
        for _ in 0..20 {
            spec = st.step_spectrum(&spec);
            for j in 0..64 {
                if !grid.keeps_mode(j) {
                    assert_eq!(spec.i[j], C64::new(0.0, 0.0));
                    assert_eq!(spec.s[j], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn no_infection_keeps_susceptible_constant() {
        let grid = make_grid(50.0, 64).unwrap();
        let p = SpatialParams {
            lambda: 0.5,
            mu: 0.25,
            nu: 0.0,
            f_source: 0.0,
            g: 0.1,
            d_s: 10.0,
            d_i: 2.0,
        };
        let init = DensityFields::uniform(64, 0.95, 0.0);
        let run = run_spatial(&init, &p, &grid, 20.0, 0.1, None).unwrap();
        let last = run.final_fields().unwrap();
        assert!(last.phi_s.iter().all(|v| (v - 0.95).abs() < 1e-13));
        assert!(last.phi_c.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn uniform_totals_by_rectangle_rule() {
        let grid = make_grid(100.0, 64).unwrap();
        let f = DensityFields::uniform(64, 0.95, 0.0);
        let tot = integrate_totals(&f, &grid);
        assert!((tot.s - 95.0).abs() < 1e-12);
    }

    #[test]
    fn negative_density_is_rejected() {
        let grid = make_grid(100.0, 64).unwrap();
        let mut f = DensityFields::uniform(64, 1.0, 0.0);
        f.phi_i[3] = -0.1;
        let res = etdrk4_step(&f, &quiet(), &grid, 0.1);
        assert!(matches!(res, Err(Error::NegativeDensity { .. })));
    }
}
