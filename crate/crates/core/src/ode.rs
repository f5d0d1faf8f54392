//! Fixed-step classical Runge-Kutta integration for systems of the form
//! `dy/dt = f(t, y)` stored as flat `f64` slices.

use crate::error::{Error, Result};

/// A first-order ODE system.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// Reusable RK4 stage buffers.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advance `y` in place from `t` to `t + dt`.
    pub fn step<S: OdeSystem + ?Sized>(&mut self, sys: &S, t: f64, y: &mut [f64], dt: f64) {
        let n = y.len();
        sys.rhs(t, y, &mut self.k1);
        for j in 0..n {
            self.tmp[j] = y[j] + 0.5 * dt * self.k1[j];
        }
        sys.rhs(t + 0.5 * dt, &self.tmp, &mut self.k2);
        for j in 0..n {
            self.tmp[j] = y[j] + 0.5 * dt * self.k2[j];
        }
        sys.rhs(t + 0.5 * dt, &self.tmp, &mut self.k3);
        for j in 0..n {
            self.tmp[j] = y[j] + dt * self.k3[j];
        }
        sys.rhs(t + dt, &self.tmp, &mut self.k4);
        for j in 0..n {
            y[j] += dt / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
        }
    }
}

/// Number of whole steps of size `dt` that fit in `span`, tolerating
/// round-off when `span` is an exact multiple of `dt`.
pub fn step_count(span: f64, dt: f64) -> usize {
    let raw = span / dt;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        raw.floor() as usize
    }
}

/// Integrate from `t0` with `steps` fixed steps of size `dt`, calling
/// `observe(t, y)` at the initial point and after every step. The
/// observer may modify the state (clamping) or abort with an error.
pub fn integrate<S, O>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    dt: f64,
    steps: usize,
    mut observe: O,
) -> Result<Vec<f64>>
where
    S: OdeSystem + ?Sized,
    O: FnMut(f64, &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
    }
    let mut y = y0.to_vec();
    let mut rk = Rk4::new(y.len());
    check_finite(t0, &y)?;
    observe(t0, &mut y)?;
    for n in 0..steps {
        let t = t0 + n as f64 * dt;
        rk.step(sys, t, &mut y, dt);
        let t_next = t0 + (n + 1) as f64 * dt;
        check_finite(t_next, &y)?;
        observe(t_next, &mut y)?;
    }
    Ok(y)
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}
