//! Closed-form solution of the SEIR equations linearized about a fully
//! susceptible population.
//!
//! The `(E, I)` block obeys `d/dt (E, I) = M (E, I)` with
//! `M = [[-sigma, beta], [sigma, -gamma]]`. Differentiating once more gives
//! `d²/dt² (E, I) = Λ (E, I)` with `Λ = M²`, whose eigenpairs `(Λ±, χ±)`
//! yield the cosh/sinh expansion
//!
//! ```text
//! (E, I)(t) = χ+ [C1 cosh(λ+ t) + C2 sinh(λ+ t)] + χ- [D1 cosh(λ- t) + D2 sinh(λ- t)]
//! ```
//!
//! with `λ± = sqrt(Λ±)`. The dual vectors `ψ±` invert the boundary
//! conditions at `t = 0`. `F`, `C`, `R` and `D` follow by quadrature.
//!
//! The sign of `λ±` is immaterial: `C2`, `D2` carry a factor `1/λ±` and
//! `sinh(λ t)/λ` is even in `λ`, so the principal branch is used and the
//! initial slope equals `M (E0, I0)` for either choice.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{CompartmentState, SeirParams};

type C64 = Complex64;

/// Spectral data of `Λ = M²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSeirEigen {
    pub lambda_plus: C64,
    pub lambda_minus: C64,
    /// `Λ+ = A + B`
    pub big_lambda_plus: f64,
    /// `Λ- = A - B`
    pub big_lambda_minus: f64,
    pub a_term: f64,
    pub b_term: f64,
    pub r_term: f64,
    pub chi_plus: [f64; 2],
    pub chi_minus: [f64; 2],
    pub psi_plus: [f64; 2],
    pub psi_minus: [f64; 2],
}

pub fn eigensystem(p: &SeirParams) -> Result<LinearSeirEigen> {
    let (beta, sigma, gamma) = (p.beta0, p.sigma, p.gamma);
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
    }
    let r = ((gamma - sigma).powi(2) + 4.0 * beta * sigma).sqrt();
    if !(r >= 1e-12 * (gamma + sigma)) {
        return Err(Error::DegenerateSpectrum { r });
    }
    let a = 0.5 * (gamma * gamma + 2.0 * beta * sigma + sigma * sigma);
    let b = 0.5 * (gamma + sigma) * r;
    // Λ± are the squares of M's eigenvalues -(σ+γ ∓ r)/2; the squared form
    // avoids the cancellation in A - B.
    let big_plus = 0.25 * (gamma + sigma + r).powi(2);
    let big_minus = 0.25 * (gamma + sigma - r).powi(2);
    let x_plus = (gamma - sigma - r) / (2.0 * sigma);
    let x_minus = (gamma - sigma + r) / (2.0 * sigma);
    Ok(LinearSeirEigen {
        lambda_plus: C64::new(big_plus, 0.0).sqrt(),
        lambda_minus: C64::new(big_minus, 0.0).sqrt(),
        big_lambda_plus: big_plus,
        big_lambda_minus: big_minus,
        a_term: a,
        b_term: b,
        r_term: r,
        chi_plus: [x_plus, 1.0],
        chi_minus: [x_minus, 1.0],
        psi_plus: [1.0, -x_plus],
        psi_minus: [1.0, -x_minus],
    })
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// One `cosh/sinh` mode, `c1 cosh(λt) + c2 sinh(λt)`, held in the form
/// that stays accurate for both large and vanishing `λ t`.
///
/// The pair comes from a first-order system, so only the exponential
/// `exp(rate t)` with `rate = ±λ` the eigenvalue of `M` is present. Its
/// partner has amplitude zero up to rounding, which `exp(λ t)` would
/// otherwise amplify; it is dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Mode {
    lambda: C64,
    rate: f64,
    c1: f64,
    /// `λ · c2`, finite even as `λ → 0`.
    c2_rate: f64,
}

const SERIES_CUTOFF: f64 = 1e-4;

impl Mode {
    fn small(&self, t: f64) -> bool {
        self.lambda.norm() * t.abs().max(1.0) < SERIES_CUTOFF
    }

    /// Amplitude of `exp(rate t)`: `(c1 ± c2) / 2` with the sign of `rate`.
    fn amplitude(&self) -> f64 {
        0.5 * (self.c1 + self.c2_rate / self.rate)
    }

    fn value(&self, t: f64) -> C64 {
        if self.small(t) {
            // cosh z ≈ 1 + z²/2, sinh(λt)/λ ≈ t (1 + (λt)²/6)
            let z2 = (self.lambda * t).powi(2);
            self.c1 * (1.0 + z2 / 2.0) + self.c2_rate * t * (1.0 + z2 / 6.0)
        } else {
            C64::new(self.amplitude() * (self.rate * t).exp(), 0.0)
        }
    }

    fn derivative(&self, t: f64) -> C64 {
        if self.small(t) {
            let z2 = (self.lambda * t).powi(2);
            self.c1 * self.lambda * self.lambda * t + self.c2_rate * (1.0 + z2 / 2.0)
        } else {
            C64::new(self.amplitude() * self.rate * (self.rate * t).exp(), 0.0)
        }
    }

    /// `∫_0^t value(s) ds`
    fn integral(&self, t: f64) -> C64 {
        if self.small(t) {
            let z2 = (self.lambda * t).powi(2);
            // c1 sinh(λt)/λ + c2_rate (cosh(λt) - 1)/λ²
            self.c1 * t * (1.0 + z2 / 6.0) + self.c2_rate * t * t * (0.5 + z2 / 24.0)
        } else {
            C64::new(self.amplitude() * (self.rate * t).exp_m1() / self.rate, 0.0)
        }
    }
}

/// Closed-form linearized SEIR trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSeirSolution {
    pub eigen: LinearSeirEigen,
    pub c1: f64,
    pub d1: f64,
    /// `λ+ C2`
    pub c2_rate: f64,
    /// `λ- D2`
    pub d2_rate: f64,
    pub params: SeirParams,
    /// Initial state; `s` holds `F0`.
    pub init: CompartmentState,
}

/// Solve the linearized SEIR equations with constant `beta = p.beta0`
/// from `init` (where `init.s` is the deviation `F0`).
pub fn solve_linear_seir(p: &SeirParams, init: &CompartmentState) -> Result<LinearSeirSolution> {
    let eigen = eigensystem(p)?;
    let (sigma, r) = (p.sigma, eigen.r_term);
    let x0 = [init.e, init.i];
    let xdot0 = [-sigma * init.e + p.beta0 * init.i, sigma * init.e - p.gamma * init.i];
    Ok(LinearSeirSolution {
        eigen,
        c1: -sigma / r * dot(eigen.psi_minus, x0),
        d1: sigma / r * dot(eigen.psi_plus, x0),
        c2_rate: -sigma / r * dot(eigen.psi_minus, xdot0),
        d2_rate: sigma / r * dot(eigen.psi_plus, xdot0),
        params: *p,
        init: *init,
    })
}

impl LinearSeirSolution {
    fn modes(&self) -> (Mode, Mode) {
        // Eigenvalues of `M` are -(σ+γ ± r)/2.
        let sum = self.params.sigma + self.params.gamma;
        let r = self.eigen.r_term;
        (
            Mode {
                lambda: self.eigen.lambda_plus,
                rate: -0.5 * (sum + r),
                c1: self.c1,
                c2_rate: self.c2_rate,
            },
            Mode {
                lambda: self.eigen.lambda_minus,
                rate: 0.5 * (r - sum),
                c1: self.d1,
                c2_rate: self.d2_rate,
            },
        )
    }

    /// `C2`; infinite when `λ+ = 0`.
    pub fn c2(&self) -> C64 {
        self.c2_rate / self.eigen.lambda_plus
    }

    /// `D2`; infinite when `λ- = 0` (which happens for `beta = gamma`).
    pub fn d2(&self) -> C64 {
        self.d2_rate / self.eigen.lambda_minus
    }

    fn combine(&self, plus: C64, minus: C64) -> ([f64; 2], f64) {
        let chi_p = self.eigen.chi_plus;
        let chi_m = self.eigen.chi_minus;
        let e = chi_p[0] * plus + chi_m[0] * minus;
        let i = chi_p[1] * plus + chi_m[1] * minus;
        let residue = e.im.abs().max(i.im.abs());
        ([e.re, i.re], residue)
    }

    /// `(E(t), I(t))` together with the discarded imaginary residue.
    pub fn evaluate_with_residue(&self, t: f64) -> ([f64; 2], f64) {
        let (mp, mm) = self.modes();
        self.combine(mp.value(t), mm.value(t))
    }

    /// `(E(t), I(t))`.
    pub fn evaluate(&self, t: f64) -> (f64, f64) {
        let ([e, i], residue) = self.evaluate_with_residue(t);
        debug_assert!(
            residue <= 1e-9 * e.abs().max(i.abs()).max(1.0),
            "imaginary residue {residue} at t = {t}"
        );
        (e, i)
    }

    /// `(dE/dt, dI/dt)` from the closed form.
    pub fn derivative(&self, t: f64) -> (f64, f64) {
        let (mp, mm) = self.modes();
        let ([e, i], _) = self.combine(mp.derivative(t), mm.derivative(t));
        (e, i)
    }

    /// `(∫_0^t E, ∫_0^t I)`.
    pub fn integrals(&self, t: f64) -> (f64, f64) {
        let (mp, mm) = self.modes();
        let ([e, i], _) = self.combine(mp.integral(t), mm.integral(t));
        (e, i)
    }

    /// `(F, C, R, D)` at `t` from the closed-form quadratures.
    pub fn integrated_populations(&self, t: f64) -> (f64, f64, f64, f64) {
        let p = &self.params;
        let (int_e, int_i) = self.integrals(t);
        let init = &self.init;
        (
            init.s - p.beta0 * int_i,
            init.c + p.sigma * int_e,
            init.r + (1.0 - p.f) * p.gamma * int_i,
            init.d + p.f * p.gamma * int_i,
        )
    }

    /// Full state at `t`, with `s` holding `F`.
    pub fn state_at(&self, t: f64) -> CompartmentState {
        let (e, i) = self.evaluate(t);
        let (f, c, r, d) = self.integrated_populations(t);
        CompartmentState { t, s: f, e, i, r, d, c }
    }
}
