//! Homogeneous steady states of the density model and their linear
//! stability against perturbations `δΦ e^{ikx - iωt}`.
//!
//! Linearizing about `(φI, φS)` gives `det(J_k + iω) = 0`, i.e.
//! `ω² + i B_k ω - C_k = 0` with
//!
//! ```text
//! B_k = (DI + DS) k² + λ(φI - φS) + μ + ν
//! C_k = DI DS k⁴ + [DI(ν + λφI) + DS(μ - λφS)] k² + λ(μφI - νφS) + μν
//! ```
//!
//! A mode grows when `Im ω > 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::SpatialParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Infection-free state `φI = 0, φS = f/ν`.
    Red,
    /// Endemic state `φI = f/μ - ν/λ, φS = μ/λ`.
    Blue,
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(Branch::Red),
            "blue" => Ok(Branch::Blue),
            _ => Err(Error::InvalidInput(format!("unknown branch {s:?}, expected red or blue"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub branch: Branch,
    pub phi_i: f64,
    pub phi_s: f64,
    pub feasible: bool,
}

fn check_rates(p: &SpatialParams) -> Result<()> {
    p.validate()?;
    if !(p.lambda > 0.0 && p.mu > 0.0 && p.nu > 0.0) {
        return Err(Error::InvalidInput("steady states need λ, μ, ν > 0".into()));
    }
    Ok(())
}

/// Both homogeneous steady states, red first.
pub fn steady_states(p: &SpatialParams) -> Result<[SteadyState; 2]> {
    check_rates(p)?;
    let red = SteadyState {
        branch: Branch::Red,
        phi_i: 0.0,
        phi_s: p.f_source / p.nu,
        feasible: true,
    };
    let blue_i = p.f_source / p.mu - p.nu / p.lambda;
    let blue = SteadyState {
        branch: Branch::Blue,
        phi_i: blue_i,
        phi_s: p.mu / p.lambda,
        feasible: blue_i >= 0.0,
    };
    Ok([red, blue])
}

pub fn steady_state(p: &SpatialParams, branch: Branch) -> Result<SteadyState> {
    let [red, blue] = steady_states(p)?;
    Ok(match branch {
        Branch::Red => red,
        Branch::Blue => blue,
    })
}

/// Homogeneous time derivatives `(dφI, dφS)` at a state.
pub fn homogeneous_residual(p: &SpatialParams, st: &SteadyState) -> (f64, f64) {
    let coupling = p.lambda * st.phi_s * st.phi_i;
    (
        -p.mu * st.phi_i + coupling,
        -p.nu * st.phi_s - coupling + p.f_source,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DispersionPoint {
    pub k: f64,
    pub b_k: f64,
    pub c_k: f64,
    pub omega_plus: Complex64,
    pub omega_minus: Complex64,
}

impl DispersionPoint {
    /// True if either root has `Im ω > 0`.
    pub fn growing(&self) -> bool {
        self.omega_plus.im > 0.0 || self.omega_minus.im > 0.0
    }
}

/// Coefficients `(a, b, c)` of `C_k = a q² + b q + c` with `q = k²`.
pub fn c_quadratic(p: &SpatialParams, st: &SteadyState) -> (f64, f64, f64) {
    let a = p.d_i * p.d_s;
    let b = p.d_i * (p.nu + p.lambda * st.phi_i) + p.d_s * (p.mu - p.lambda * st.phi_s);
    let c = p.lambda * (p.mu * st.phi_i - p.nu * st.phi_s) + p.mu * p.nu;
    (a, b, c)
}

pub fn b_k(p: &SpatialParams, st: &SteadyState, k: f64) -> f64 {
    (p.d_i + p.d_s) * k * k + p.lambda * (st.phi_i - st.phi_s) + p.mu + p.nu
}

pub fn c_k(p: &SpatialParams, st: &SteadyState, k: f64) -> f64 {
    let (a, b, c) = c_quadratic(p, st);
    let q = k * k;
    (a * q + b) * q + c
}

pub fn dispersion(p: &SpatialParams, st: &SteadyState, k: f64) -> DispersionPoint {
    let b = b_k(p, st, k);
    let c = c_k(p, st, k);
    let i = Complex64::i();
    let root = Complex64::new(0.25 * b * b - c, 0.0).sqrt();
    DispersionPoint {
        k,
        b_k: b,
        c_k: c,
        omega_plus: -i * b / 2.0 + i * root,
        omega_minus: -i * b / 2.0 - i * root,
    }
}

/// `n` evenly spaced points on `[0, k_max]`.
pub fn dispersion_scan(p: &SpatialParams, st: &SteadyState, k_max: f64, n: usize) -> Vec<DispersionPoint> {
    if n == 0 {
        return vec![];
    }
    let step = if n > 1 { k_max / (n - 1) as f64 } else { 0.0 };
    (0..n).map(|j| dispersion(p, st, j as f64 * step)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HopfCheck {
    /// `B₀ = 0` (to 1e-9) and `C₀ < 0`.
    pub oscillatory: bool,
    pub b0: f64,
    pub c0: f64,
    pub omega0: [Complex64; 2],
    /// Some homogeneous mode grows.
    pub growing: bool,
}

/// The `k = 0` conditions. When `B₀ = 0` and `C₀ < 0` the roots are
/// `ω₀ = ±i sqrt(-C₀)`: a real-exponent pair, one of which grows.
pub fn hopf_check(p: &SpatialParams, st: &SteadyState) -> HopfCheck {
    let d = dispersion(p, st, 0.0);
    let scale = (p.lambda * st.phi_i.abs().max(st.phi_s.abs()) + p.mu + p.nu).max(f64::MIN_POSITIVE);
    HopfCheck {
        oscillatory: d.b_k.abs() <= 1e-9 * scale && d.c_k < 0.0,
        b0: d.b_k,
        c0: d.c_k,
        omega0: [d.omega_plus, d.omega_minus],
        growing: d.growing(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TuringResult {
    pub branch: Branch,
    pub on_line: bool,
    /// Critical wavenumber `sqrt(C₀ / (4 DI DS))`; zero when `C₀ < 0`.
    pub k_c: f64,
    /// Signed relative distance from the Turing line (positive above it).
    pub line_residual: f64,
    /// Vertex `q* = -b/(2a)` of `C_k` as a parabola in `q = k²`.
    pub vertex_k2: f64,
    /// `C_k` at the vertex, or at `k = 0` when the vertex is at `q < 0`.
    pub min_c_k: f64,
    /// Whether the vertex lies at real `k`.
    pub vertex_physical: bool,
}

/// Turing-line test for a steady state.
///
/// Red: `(μ - λφS)/ν = DI/DS`. Blue: `4(μ/λ)²(λ - μ)/ν = DI/DS`.
pub fn turing_analysis(p: &SpatialParams, st: &SteadyState) -> Result<TuringResult> {
    if st.branch == Branch::Blue && !st.feasible {
        return Err(Error::InfeasibleState { phi_i: st.phi_i });
    }
    if !(p.d_i > 0.0 && p.d_s > 0.0) {
        return Err(Error::InvalidInput("Turing analysis needs DI, DS > 0".into()));
    }
    let ratio = p.d_i / p.d_s;
    let lhs = match st.branch {
        Branch::Red => (p.mu - p.lambda * st.phi_s) / p.nu,
        Branch::Blue => 4.0 * (p.mu / p.lambda).powi(2) * (p.lambda - p.mu) / p.nu,
    };
    let line_residual = lhs / ratio - 1.0;
    let (a, b, c) = c_quadratic(p, st);
    let vertex_k2 = -b / (2.0 * a);
    let vertex_physical = vertex_k2 >= 0.0;
    let min_c_k = if vertex_physical { c - b * b / (4.0 * a) } else { c };
    Ok(TuringResult {
        branch: st.branch,
        on_line: line_residual.abs() <= 1e-9,
        k_c: (c.max(0.0) / (4.0 * a)).sqrt(),
        line_residual,
        vertex_k2,
        min_c_k,
        vertex_physical,
    })
}

/// One point of a Turing curve in the (μ, ν) plane at fixed λ and DI/DS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TuringCurvePoint {
    pub curve: Branch,
    pub mu: f64,
    pub nu: f64,
}

/// Red (`μ > λ`) and blue (`μ < λ`) Turing curves for `φS = 1` on the red branch,
/// sampled at `n` values of μ each in `(0, mu_max]`.
pub fn turing_sweep(lambda: f64, ratio: f64, mu_max: f64, n: usize) -> Vec<TuringCurvePoint> {
    let mut out = Vec::new();
    for j in 1..=n {
        let mu = mu_max * j as f64 / n as f64;
        if mu < lambda {
            out.push(TuringCurvePoint {
                curve: Branch::Blue,
                mu,
                nu: 4.0 * mu * mu * (lambda - mu) / (lambda * lambda * ratio),
            });
        }
    }
    for j in 1..=n {
        let mu = mu_max * j as f64 / n as f64;
        if mu > lambda {
            out.push(TuringCurvePoint {
                curve: Branch::Red,
                mu,
                nu: (mu - lambda) / ratio,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, mu: f64, nu: f64, f: f64) -> SpatialParams {
        SpatialParams {
            lambda,
            mu,
            nu,
            f_source: f,
            g: 0.0,
            d_s: 10.0,
            d_i: 1.0,
        }
    }

    #[test]
    fn red_is_unity_when_source_balances_death() {
        let [red, _] = steady_states(&params(0.5, 0.25, 0.01, 0.01)).unwrap();
        assert_eq!(red.phi_s, 1.0);
        assert_eq!(red.phi_i, 0.0);
    }

    #[test]
    fn blue_state_values() {
        let p = params(0.5, 0.25, 0.01, 0.01);
        let [_, blue] = steady_states(&p).unwrap();
        assert!((blue.phi_i - 0.02).abs() < 1e-15);
        assert!((blue.phi_s - 0.5).abs() < 1e-15);
        assert!(blue.feasible);
        let (ri, rs) = homogeneous_residual(&p, &blue);
        assert!(ri.abs() < 1e-12 && rs.abs() < 1e-12);
    }

    #[test]
    fn blue_infeasible_below_threshold() {
        let [_, blue] = steady_states(&params(0.2, 0.25, 0.01, 0.01)).unwrap();
        assert!(blue.phi_i < 0.0 && !blue.feasible);
        let p = params(0.2, 0.25, 0.01, 0.01);
        assert!(matches!(turing_analysis(&p, &blue), Err(Error::InfeasibleState { .. })));
    }

    #[test]
    fn red_hopf_point() {
        let (nu, mu) = (0.01, 0.25);
        let lambda = (nu + mu) * nu / nu;
        let p = params(lambda, mu, nu, nu);
        let red = steady_state(&p, Branch::Red).unwrap();
        let h = hopf_check(&p, &red);
        assert!(h.oscillatory);
        assert!((h.c0 + nu * nu).abs() < 1e-15);
        assert!((h.omega0[0] - Complex64::new(0.0, nu)).norm() < 1e-15);
        assert!((h.omega0[1] - Complex64::new(0.0, -nu)).norm() < 1e-15);
    }

    #[test]
    fn no_oscillation_without_vital_dynamics() {
        let p = SpatialParams { nu: 1e-300, f_source: 0.0, ..params(0.5, 0.25, 0.0, 0.0) };
        let red = steady_state(&p, Branch::Red).unwrap();
        assert!(!hopf_check(&p, &red).oscillatory);
    }

    #[test]
    fn diffusion_free_is_k_independent() {
        let p = SpatialParams { d_i: 0.0, d_s: 0.0, ..params(0.5, 0.25, 0.01, 0.01) };
        let st = steady_state(&p, Branch::Blue).unwrap();
        let d0 = dispersion(&p, &st, 0.0);
        let d1 = dispersion(&p, &st, 3.7);
        assert_eq!(d0.b_k, d1.b_k);
        assert_eq!(d0.c_k, d1.c_k);
    }

    #[test]
    fn red_line_example() {
        let p = SpatialParams {
            lambda: 1.0,
            mu: 1.1,
            nu: 1.0,
            f_source: 1.0,
            g: 0.0,
            d_s: 10.0,
            d_i: 1.0,
        };
        let red = steady_state(&p, Branch::Red).unwrap();
        let t = turing_analysis(&p, &red).unwrap();
        assert!(t.on_line);
        assert!((t.k_c - 0.05).abs() < 1e-12);
        // The double root of C_k sits at k² = -ν/DS.
        assert!((t.vertex_k2 + 0.1).abs() < 1e-12);
        assert!(!t.vertex_physical);
    }

    #[test]
    fn off_line_residual_is_signed() {
        let mut p = SpatialParams {
            lambda: 1.0,
            mu: 1.2,
            nu: 1.0,
            f_source: 1.0,
            g: 0.0,
            d_s: 10.0,
            d_i: 1.0,
        };
        let red = steady_state(&p, Branch::Red).unwrap();
        let above = turing_analysis(&p, &red).unwrap();
        assert!(!above.on_line && above.line_residual > 0.0);
        p.mu = 1.05;
        let below = turing_analysis(&p, &red).unwrap();
        assert!(!below.on_line && below.line_residual < 0.0);
    }

    #[test]
    fn sweep_curves() {
        let pts = turing_sweep(1.0, 0.1, 2.0, 200);
        for pt in &pts {
            match pt.curve {
                Branch::Red => assert!((pt.nu - (pt.mu - 1.0) / 0.1).abs() < 1e-12),
                Branch::Blue => assert!(pt.mu < 1.0 && pt.nu > 0.0),
            }
        }
        assert!(pts.iter().any(|p| p.curve == Branch::Red));
        assert!(pts.iter().any(|p| p.curve == Branch::Blue));
    }
}
