//! Least-squares calibration of ODE models.
//!
//! The loss `L(p) = Σ_i Σ_j (y_j(t_i, p) - d_j(i))²` is minimized by
//! gradient descent `Δp = -h ∇L`, where the gradient comes from the
//! sensitivities `s_jk = ∂y_j/∂p_k`. These obey `ṡ = (∂f/∂y) s + ∂f/∂p` and
//! are integrated with RK4 in one extended system alongside `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{FnSystem, Rk4};

/// A parametrized ODE model with closed-form Jacobians. Matrices are
/// row-major: `jac_y` is `m × m`, `jac_p` and sensitivities are `m × np`.
pub trait FitModel: Send + Sync {
    fn n_state(&self) -> usize;
    fn n_params(&self) -> usize;
    fn param_names(&self) -> Vec<&'static str>;
    fn state_names(&self) -> Vec<&'static str>;
    fn initial(&self, p: &[f64]) -> Vec<f64>;
    /// `∂y₀/∂p`; zero unless the initial state depends on the parameters.
    fn initial_sensitivity(&self, _p: &[f64]) -> Vec<f64> {
        vec![0.0; self.n_state() * self.n_params()]
    }
    fn rhs(&self, t: f64, y: &[f64], p: &[f64], dy: &mut [f64]);
    fn jac_y(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]);
    fn jac_p(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]);
}

/// Strict SIR with `y = (I, S)`, `p = (β, γ)` and fixed `N`, `I₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirFit {
    pub n: f64,
    pub i0: f64,
}

impl FitModel for SirFit {
    fn n_state(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<&'static str> {
        vec!["beta", "gamma"]
    }
    fn state_names(&self) -> Vec<&'static str> {
        vec!["I", "S"]
    }
    fn initial(&self, _p: &[f64]) -> Vec<f64> {
        vec![self.i0, self.n - self.i0]
    }
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) {
        let inf = p[0] * y[0] * y[1] / self.n;
        dy[0] = inf - p[1] * y[0];
        dy[1] = -inf;
    }
    fn jac_y(&self, _t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.copy_from_slice(&[
            p[0] * y[1] / n - p[1],
            p[0] * y[0] / n,
            -p[0] * y[1] / n,
            -p[0] * y[0] / n,
        ]);
    }
    fn jac_p(&self, _t: f64, y: &[f64], _p: &[f64], out: &mut [f64]) {
        let yy = y[0] * y[1] / self.n;
        out.copy_from_slice(&[yy, -y[0], -yy, 0.0]);
    }
}

/// SEIR with `y = (S, E, I, C)`, `p = (β, σ, γ)`; `C` counts everyone who
/// became infectious (`Ċ = σE`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeirFit {
    pub n: f64,
    pub i0: f64,
}

impl FitModel for SeirFit {
    fn n_state(&self) -> usize {
        4
    }
    fn n_params(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<&'static str> {
        vec!["beta", "sigma", "gamma"]
    }
    fn state_names(&self) -> Vec<&'static str> {
        vec!["S", "E", "I", "C"]
    }
    fn initial(&self, _p: &[f64]) -> Vec<f64> {
        vec![self.n - self.i0, 0.0, self.i0, self.i0]
    }
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) {
        let inf = p[0] * y[0] * y[2] / self.n;
        dy[0] = -inf;
        dy[1] = inf - p[1] * y[1];
        dy[2] = p[1] * y[1] - p[2] * y[2];
        dy[3] = p[1] * y[1];
    }
    fn jac_y(&self, _t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (ds, di) = (p[0] * y[2] / n, p[0] * y[0] / n);
        out.copy_from_slice(&[
            -ds, 0.0, -di, 0.0, //
            ds, -p[1], di, 0.0, //
            0.0, p[1], -p[2], 0.0, //
            0.0, p[1], 0.0, 0.0,
        ]);
    }
    fn jac_p(&self, _t: f64, y: &[f64], _p: &[f64], out: &mut [f64]) {
        let si = y[0] * y[2] / self.n;
        out.copy_from_slice(&[
            -si, 0.0, 0.0, //
            si, -y[1], 0.0, //
            0.0, y[1], -y[2], //
            0.0, y[1], 0.0,
        ]);
    }
}

/// Right-hand side of the extended system: `(ẏ, ṡ)` from `(y, s)`.
pub fn sensitivity_rhs<M: FitModel + ?Sized>(
    model: &M,
    t: f64,
    y: &[f64],
    s: &[f64],
    p: &[f64],
    dy: &mut [f64],
    ds: &mut [f64],
) {
    let (m, np) = (model.n_state(), model.n_params());
    let mut jy = vec![0.0; m * m];
    let mut jp = vec![0.0; m * np];
    model.rhs(t, y, p, dy);
    model.jac_y(t, y, p, &mut jy);
    model.jac_p(t, y, p, &mut jp);
    for i in 0..m {
        for k in 0..np {
            let mut acc = jp[i * np + k];
            for l in 0..m {
                acc += jy[i * m + l] * s[l * np + k];
            }
            ds[i * np + k] = acc;
        }
    }
}

/// State and sensitivities at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityState {
    pub t: f64,
    pub y: Vec<f64>,
    /// Row-major `m × np`.
    pub s: Vec<f64>,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidInput("observation times must be >= 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("observation times must be strictly increasing".into()));
    }
    Ok(())
}

/// Integrate `y` and `s` jointly from `t = 0`, landing exactly on each of
/// `times` with substeps no longer than `dt`.
pub fn integrate_sensitivities<M: FitModel + ?Sized>(
    model: &M,
    p: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Vec<SensitivityState>> {
    check_times(times)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let (m, np) = (model.n_state(), model.n_params());
    let dim = m + m * np;
    let sys = FnSystem::new(dim, |t, z: &[f64], dz: &mut [f64]| {
        let (y, s) = z.split_at(m);
        let (dy, ds) = dz.split_at_mut(m);
        sensitivity_rhs(model, t, y, s, p, dy, ds);
    });
    let mut z = model.initial(p);
    z.extend(model.initial_sensitivity(p));
    let mut rk = Rk4::new(dim);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let n = (span / dt).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for j in 0..n {
                rk.step(&sys, t + j as f64 * h, &mut z, h);
            }
            t = target;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        out.push(SensitivityState {
            t,
            y: z[..m].to_vec(),
            s: z[m..].to_vec(),
        });
    }
    Ok(out)
}

/// Something to minimize.
pub trait Objective {
    fn n_params(&self) -> usize;
    fn value(&self, p: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Diagonal of the Gauss-Newton matrix `Σ (∂r/∂p_k)²`, used for scaling.
    fn gauss_newton_diag(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0; p.len().max(self.n_params())])
    }
    /// `Σ d²` over the (transformed) data; sets the rounding floor of the loss.
    fn data_scale(&self) -> f64 {
        0.0
    }
}

/// Residual transform: identity, or `ln max(v, 1)`.
fn transform(v: f64, log_space: bool) -> (f64, f64) {
    if !log_space {
        (v, 1.0)
    } else if v > 1.0 {
        (v.ln(), 1.0 / v)
    } else {
        (0.0, 0.0)
    }
}

/// Data, a model and which model components the data columns observe.
pub struct FitProblem {
    pub model: Box<dyn FitModel>,
    pub times: Vec<f64>,
    /// `data[i][j]` observes component `observed[j]` at `times[i]`.
    pub data: Vec<Vec<f64>>,
    pub observed: Vec<usize>,
    pub log_space: bool,
    pub dt: f64,
}

impl FitProblem {
    pub fn new(
        model: Box<dyn FitModel>,
        times: Vec<f64>,
        data: Vec<Vec<f64>>,
        observed: Vec<usize>,
        log_space: bool,
    ) -> Result<Self> {
        check_times(&times)?;
        if data.len() != times.len() {
            return Err(Error::InvalidInput("one data row per time is required".into()));
        }
        if observed.is_empty() || observed.iter().any(|&j| j >= model.n_state()) {
            return Err(Error::InvalidInput("observed components out of range".into()));
        }
        if data.iter().any(|row| row.len() != observed.len()) {
            return Err(Error::InvalidInput("data rows must match observed components".into()));
        }
        if times.len() < model.n_params() {
            return Err(Error::InvalidInput(format!(
                "{} data points cannot determine {} parameters",
                times.len(),
                model.n_params()
            )));
        }
        Ok(Self {
            model,
            times,
            data,
            observed,
            log_space,
            dt: 0.01,
        })
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Synthetic noiseless data for the observed components at `p`.
    pub fn synthesize(model: &dyn FitModel, p: &[f64], times: &[f64], observed: &[usize], dt: f64) -> Result<Vec<Vec<f64>>> {
        let traj = integrate_sensitivities(model, p, times, dt)?;
        Ok(traj
            .iter()
            .map(|st| observed.iter().map(|&j| st.y[j]).collect())
            .collect())
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.model.n_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.model.n_params(),
                p.len()
            )));
        }
        Ok(())
    }
}

impl Objective for FitProblem {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(p)?.0)
    }

    fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_params(p)?;
        let np = self.model.n_params();
        let traj = integrate_sensitivities(self.model.as_ref(), p, &self.times, self.dt)?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; np];
        for (st, row) in traj.iter().zip(&self.data) {
            for (&j, &d) in self.observed.iter().zip(row) {
                let (yt, dydy) = transform(st.y[j], self.log_space);
                let (dt, _) = transform(d, self.log_space);
                let r = yt - dt;
                loss += r * r;
                for k in 0..np {
                    grad[k] += 2.0 * r * dydy * st.s[j * np + k];
                }
            }
        }
        Ok((loss, grad))
    }

    fn data_scale(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .map(|d| transform(*d, self.log_space).0.powi(2))
            .sum()
    }

    fn gauss_newton_diag(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let np = self.model.n_params();
        let traj = integrate_sensitivities(self.model.as_ref(), p, &self.times, self.dt)?;
        let mut diag = vec![0.0; np];
        for st in &traj {
            for &j in &self.observed {
                let (_, dydy) = transform(st.y[j], self.log_space);
                for (k, d) in diag.iter_mut().enumerate() {
                    *d += (dydy * st.s[j * np + k]).powi(2);
                }
            }
        }
        Ok(diag)
    }
}

pub fn loss(problem: &FitProblem, p: &[f64]) -> Result<f64> {
    problem.value(p)
}

pub fn gradient(problem: &FitProblem, p: &[f64]) -> Result<Vec<f64>> {
    Ok(problem.value_and_gradient(p)?.1)
}

/// How the step size `h` evolves between accepted steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Double `h` after every accepted step.
    Doubling,
    /// Barzilai-Borwein estimate `h = |Δp|² / (Δp · Δg)` from the last step.
    #[default]
    BarzilaiBorwein,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdOptions {
    /// Initial step size `h`.
    pub h: f64,
    pub max_iters: usize,
    /// Stop when an accepted step changes the loss by less than `tol · L`.
    pub tol: f64,
    pub rule: StepRule,
    /// Divide each gradient component by the Gauss-Newton diagonal.
    pub diagonal_scaling: bool,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            max_iters: 20_000,
            tol: 1e-14,
            rule: StepRule::BarzilaiBorwein,
            diagonal_scaling: true,
        }
    }
}

/// Consecutive failed halvings before giving up.
pub const MAX_HALVINGS: usize = 40;

/// Relative size below which a predicted loss decrease is treated as noise.
pub const RESOLUTION: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p: Vec<f64>,
    pub loss: f64,
    /// Loss after each accepted step, starting with the initial loss.
    pub loss_curve: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient: Vec<f64>,
}

/// Gradient descent `p ← p - h D⁻¹ ∇L` with backtracking halving of `h`.
pub fn fit_gradient_descent<O: Objective + ?Sized>(obj: &O, p0: &[f64], opts: &GdOptions) -> Result<FitResult> {
    if !(opts.h > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be > 0, got {}", opts.h)));
    }
    let mut p = p0.to_vec();
    let (mut l, mut g) = obj.value_and_gradient(&p)?;
    let mut curve = vec![l];
    let scale = |p: &[f64]| -> Result<Vec<f64>> {
        if opts.diagonal_scaling {
            let d = obj.gauss_newton_diag(p)?;
            Ok(d.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 1.0 }).collect())
        } else {
            Ok(vec![1.0; p.len()])
        }
    };
    let mut w = scale(&p)?;
    let mut h = opts.h;
    let mut iterations = 0;
    let mut converged = l == 0.0 || g.iter().all(|v| *v == 0.0);
    while !converged && iterations < opts.max_iters {
        let dir: Vec<f64> = g.iter().zip(&w).map(|(g, w)| g * w).collect();
        let slope: f64 = g.iter().zip(&dir).map(|(g, d)| g * d).sum();
        // Rounding in the residuals perturbs L by about 2ε sqrt(L Σd²).
        let noise = RESOLUTION * (l + 2.0 * (l * obj.data_scale()).sqrt());
        let mut halvings = 0;
        let accepted = loop {
            // A step whose predicted decrease is below the resolution of L
            // cannot be verified; the current point is a numerical minimum.
            if h * slope <= noise {
                break None;
            }
            let trial: Vec<f64> = p.iter().zip(&dir).map(|(p, d)| p - h * d).collect();
            match obj.value_and_gradient(&trial) {
                Ok((lt, gt)) if lt < l => break Some((trial, lt, gt)),
                Ok(_) | Err(Error::NonFinite { .. }) => {}
                Err(e) => return Err(e),
            }
            halvings += 1;
            if halvings >= MAX_HALVINGS {
                return Err(Error::Stalled { halvings });
            }
            h *= 0.5;
        };
        let Some((p_new, l_new, g_new)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let decrease = l - l_new;
        h = match opts.rule {
            StepRule::Doubling => 2.0 * h,
            StepRule::BarzilaiBorwein => {
                // Δp = -h D g, Δg = g_new - g in the scaled metric.
                let mut num = 0.0;
                let mut den = 0.0;
                for k in 0..p.len() {
                    let dp = p_new[k] - p[k];
                    let dg = g_new[k] - g[k];
                    num += dp * dp / w[k];
                    den += dp * dg;
                }
                if den > 0.0 && num > 0.0 { num / den } else { 2.0 * h }
            }
        };
        p = p_new;
        l = l_new;
        g = g_new;
        curve.push(l);
        if decrease < opts.tol * l || l == 0.0 || g.iter().all(|v| *v == 0.0) {
            converged = true;
        } else if opts.diagonal_scaling {
            w = scale(&p)?;
        }
    }
    Ok(FitResult {
        p,
        loss: l,
        loss_curve: curve,
        iterations,
        converged,
        gradient: g,
    })
}

/// Logistic-in-the-exponent growth curve `exp(a / (1 + e^{-γ(t - t₀)}))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FermiDiracParams {
    pub a: f64,
    pub t0: f64,
    pub gamma_fd: f64,
}

impl FermiDiracParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.a, self.t0, self.gamma_fd]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            a: p[0],
            t0: p[1],
            gamma_fd: p[2],
        }
    }

    /// Large-time limit `exp(a)`.
    pub fn asymptote(&self) -> f64 {
        self.a.exp()
    }
}

fn logistic(fd: &FermiDiracParams, t: f64) -> f64 {
    let x = -fd.gamma_fd * (t - fd.t0);
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

pub fn fermi_dirac_eval(fd: &FermiDiracParams, t: f64) -> f64 {
    (fd.a * logistic(fd, t)).exp()
}

/// `(α, ∂α/∂a, ∂α/∂t₀, ∂α/∂γ)` for the exponent `α = a u`.
fn fd_exponent(fd: &FermiDiracParams, t: f64) -> [f64; 4] {
    let u = logistic(fd, t);
    let du = u * (1.0 - u);
    [
        fd.a * u,
        u,
        -fd.a * du * fd.gamma_fd,
        fd.a * du * (t - fd.t0),
    ]
}

/// Least-squares fit of a Fermi-Dirac curve to a case series.
pub struct FermiDiracProblem {
    pub times: Vec<f64>,
    pub cases: Vec<f64>,
    pub log_space: bool,
}

impl FermiDiracProblem {
    pub fn new(times: Vec<f64>, cases: Vec<f64>, log_space: bool) -> Result<Self> {
        if times.len() != cases.len() {
            return Err(Error::InvalidInput("times and cases differ in length".into()));
        }
        if times.len() < 10 {
            return Err(Error::TooShort {
                needed: 10,
                got: times.len(),
            });
        }
        if cases.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidInput("cases must be positive".into()));
        }
        Ok(Self {
            times,
            cases,
            log_space,
        })
    }

    fn residuals(&self, p: &[f64]) -> impl Iterator<Item = (f64, [f64; 3])> + '_ {
        let fd = FermiDiracParams::from_slice(p);
        self.times.iter().zip(&self.cases).map(move |(&t, &c)| {
            let [alpha, da, dt0, dg] = fd_exponent(&fd, t);
            if self.log_space {
                // ln max(I, 1) = max(α, 0).
                let (v, on) = if alpha > 0.0 { (alpha, 1.0) } else { (0.0, 0.0) };
                (v - c.max(1.0).ln(), [on * da, on * dt0, on * dg])
            } else {
                let i = alpha.exp();
                (i - c, [i * da, i * dt0, i * dg])
            }
        })
    }
}

impl Objective for FermiDiracProblem {
    fn n_params(&self) -> usize {
        3
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(p)?.0)
    }

    fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut l = 0.0;
        let mut g = vec![0.0; 3];
        for (r, d) in self.residuals(p) {
            l += r * r;
            for k in 0..3 {
                g[k] += 2.0 * r * d[k];
            }
        }
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: f64::NAN });
        }
        Ok((l, g))
    }

    fn data_scale(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| if self.log_space { c.max(1.0).ln().powi(2) } else { c * c })
            .sum()
    }

    fn gauss_newton_diag(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut d = vec![0.0; 3];
        for (_, j) in self.residuals(p) {
            for k in 0..3 {
                d[k] += j[k] * j[k];
            }
        }
        Ok(d)
    }
}

/// Starting guess from the data: plateau from the largest value, midpoint
/// where half of it (in log) is reached, and a steepness from the span.
pub fn fermi_dirac_guess(times: &[f64], cases: &[f64]) -> FermiDiracParams {
    let a = cases.iter().fold(1.0f64, |m, c| m.max(*c)).ln().max(1e-3);
    let half = 0.5 * a;
    let t0 = times
        .iter()
        .zip(cases)
        .find(|(_, c)| c.max(1.0).ln() >= half)
        .map(|(t, _)| *t)
        .unwrap_or(times[times.len() / 2]);
    let span = (times[times.len() - 1] - times[0]).max(1.0);
    FermiDiracParams {
        a,
        t0,
        gamma_fd: 8.0 / span,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FermiDiracFit {
    pub params: FermiDiracParams,
    pub result: FitResult,
}

/// Fit from an automatic starting guess.
pub fn fit_fermi_dirac(times: &[f64], cases: &[f64], log_space: bool, opts: &GdOptions) -> Result<FermiDiracFit> {
    let problem = FermiDiracProblem::new(times.to_vec(), cases.to_vec(), log_space)?;
    let guess = fermi_dirac_guess(times, cases);
    fit_fermi_dirac_from(&problem, &guess, opts)
}

pub fn fit_fermi_dirac_from(problem: &FermiDiracProblem, start: &FermiDiracParams, opts: &GdOptions) -> Result<FermiDiracFit> {
    let result = fit_gradient_descent(problem, &start.to_vec(), opts)?;
    Ok(FermiDiracFit {
        params: FermiDiracParams::from_slice(&result.p),
        result,
    })
}
