//! Compartment models: SEIR with a split removed class, its linearization
//! about a fully susceptible population, strict SIR, and SIR with a
//! quarantine fraction. Also the time-varying transmission schedule and
//! the summary statistics reported for a parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, FnSystem};

/// Index of each compartment in the flat state vector `[S, E, I, R, D, C]`.
pub const S: usize = 0;
pub const E: usize = 1;
pub const I: usize = 2;
pub const R: usize = 3;
pub const D: usize = 4;
pub const C: usize = 5;

/// Rates of change of `[S, E, I, R, D, C]`.
pub type Rates = [f64; 6];

/// One time slice of the compartment populations.
///
/// For the linearized model `s` holds the deviation `F = S - N`; for the
/// quarantine model `d` holds the quarantined population `T`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    #[serde(default)]
    pub t: f64,
    pub s: f64,
    #[serde(default)]
    pub e: f64,
    pub i: f64,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub c: f64,
}

impl CompartmentState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.s, self.e, self.i, self.r, self.d, self.c]
    }

    pub fn from_slice(t: f64, y: &[f64]) -> Self {
        Self {
            t,
            s: y[S],
            e: y[E],
            i: y[I],
            r: y[R],
            d: y[D],
            c: y[C],
        }
    }

    /// `S + E + I + R + D`, the conserved head count of the full SEIR model.
    pub fn head_count(&self) -> f64 {
        self.s + self.e + self.i + self.r + self.d
    }

    /// Fully susceptible population of `n` with `i0` infected seeds.
    pub fn seeded(n: f64, i0: f64) -> Self {
        Self {
            s: n - i0,
            i: i0,
            ..Self::default()
        }
    }
}

/// Rate constants of the SEIR family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeirParams {
    /// Transmission rate (1/day).
    pub beta0: f64,
    /// Incubation rate (1/day). Unused by the SIR variants.
    #[serde(default)]
    pub sigma: f64,
    /// Removal rate (1/day).
    pub gamma: f64,
    /// Fraction of removals that die.
    #[serde(default)]
    pub f: f64,
    /// Total population.
    pub n: f64,
}

impl SeirParams {
    pub fn validate(&self, needs_sigma: bool) -> Result<()> {
        let ok_rate = |v: f64| v.is_finite() && v > 0.0;
        if !ok_rate(self.beta0) && !(self.beta0 == 0.0) {
            return Err(Error::InvalidInput(format!("beta0 must be >= 0, got {}", self.beta0)));
        }
        if needs_sigma && !ok_rate(self.sigma) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !ok_rate(self.gamma) {
            return Err(Error::InvalidInput(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.f) {
            return Err(Error::InvalidInput(format!("f must lie in [0, 1], got {}", self.f)));
        }
        if !ok_rate(self.n) {
            return Err(Error::InvalidInput(format!("n must be > 0, got {}", self.n)));
        }
        Ok(())
    }
}

/// Piecewise transmission rate: constant until `t0`, exponential decay at
/// rate `alpha` afterwards, and optionally restored to `beta0` once the
/// controls are lifted at `removal_time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub beta0: f64,
    pub t0: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removal_time: Option<f64>,
}

impl ControlSchedule {
    /// No controls: `beta(t) = beta0` for all `t`.
    pub fn constant(beta0: f64) -> Self {
        Self {
            beta0,
            t0: 0.0,
            alpha: 0.0,
            removal_time: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.t0 >= 0.0) {
            return Err(Error::InvalidInput(format!("t0 must be >= 0, got {}", self.t0)));
        }
        if let Some(tr) = self.removal_time {
            if !(tr > self.t0) {
                return Err(Error::InvalidInput(format!(
                    "removal_time ({tr}) must come after t0 ({})",
                    self.t0
                )));
            }
        }
        Ok(())
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        if t < self.t0 {
            return self.beta0;
        }
        match self.removal_time {
            Some(tr) if t >= tr => self.beta0,
            _ => self.beta0 * (-self.alpha * (t - self.t0)).exp(),
        }
    }
}

/// Quarantine fraction `q(t)` supplied as data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuarantineFn {
    Constant { q: f64 },
    /// `q_max / (1 + exp(-rate (t - midpoint)))`
    Logistic { q_max: f64, midpoint: f64, rate: f64 },
    /// Piecewise-linear through `(t, q)` knots, held constant outside.
    Table { knots: Vec<[f64; 2]> },
}

impl QuarantineFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            QuarantineFn::Constant { q } => *q,
            QuarantineFn::Logistic {
                q_max,
                midpoint,
                rate,
            } => q_max / (1.0 + (-rate * (t - midpoint)).exp()),
            QuarantineFn::Table { knots } => {
                let Some(first) = knots.first() else {
                    return 0.0;
                };
                if t <= first[0] {
                    return first[1];
                }
                for w in knots.windows(2) {
                    let ([t0, q0], [t1, q1]) = (w[0], w[1]);
                    if t <= t1 {
                        let u = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return q0 + u * (q1 - q0);
                    }
                }
                knots[knots.len() - 1][1]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match self {
            QuarantineFn::Constant { q } => *q < 0.0 || !q.is_finite(),
            QuarantineFn::Logistic { q_max, rate, .. } => *q_max < 0.0 || !rate.is_finite(),
            QuarantineFn::Table { knots } => {
                knots.iter().any(|k| k[1] < 0.0 || !k[1].is_finite())
                    || knots.windows(2).any(|w| w[1][0] < w[0][0])
            }
        };
        if bad {
            Err(Error::InvalidInput("quarantine function must be non-negative with ordered knots".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuarantineParams {
    pub beta: f64,
    pub gamma: f64,
    pub n: f64,
    pub q: QuarantineFn,
}

/// Full SEIR with the removed class split into recovered and dead.
pub fn seir_rhs(y: &[f64], p: &SeirParams, beta: f64) -> Rates {
    let infection = beta * y[S] * y[I] / p.n;
    let onset = p.sigma * y[E];
    let removal = p.gamma * y[I];
    [
        -infection,
        infection - onset,
        onset - removal,
        (1.0 - p.f) * removal,
        p.f * removal,
        onset,
    ]
}

/// SEIR linearized about `S = N`; slot `S` carries `F = S - N`.
pub fn linearized_seir_rhs(y: &[f64], p: &SeirParams, beta: f64) -> Rates {
    let infection = beta * y[I];
    let onset = p.sigma * y[E];
    let removal = p.gamma * y[I];
    [
        -infection,
        infection - onset,
        onset - removal,
        (1.0 - p.f) * removal,
        p.f * removal,
        onset,
    ]
}

/// Strict SIR. `C` accumulates infections so that `C(t) - C(0) = S(0) - S(t)`.
pub fn sir_rhs(y: &[f64], p: &SeirParams, beta: f64) -> Rates {
    let infection = beta * y[S] * y[I] / p.n;
    let removal = p.gamma * y[I];
    [
        -infection,
        0.0,
        infection - removal,
        (1.0 - p.f) * removal,
        p.f * removal,
        infection,
    ]
}

/// SIR with quarantine fraction `q(t)`; slot `D` carries `T`.
pub fn quarantine_sir_rhs(t: f64, y: &[f64], qp: &QuarantineParams) -> Rates {
    let q = qp.q.eval(t);
    let infection = qp.beta * y[S] * y[I] / qp.n;
    [
        -infection,
        0.0,
        infection - qp.gamma * (1.0 + q) * y[I],
        qp.gamma * y[I],
        qp.gamma * q * y[I],
        infection,
    ]
}

/// Which right-hand side a [`Simulation`] integrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Seir,
    SeirLinear,
    Sir,
    SirQuarantine,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Seir => "seir",
            ModelKind::SeirLinear => "seir_linear",
            ModelKind::Sir => "sir",
            ModelKind::SirQuarantine => "sir_quarantine",
        }
    }
}

/// Sampled trajectory with the instantaneous new-case and new-death rates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<CompartmentState>,
    pub new_cases: Vec<f64>,
    pub new_deaths: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&CompartmentState> {
        self.samples.last()
    }

    /// Linear interpolation of the sampled state at time `t`.
    pub fn at(&self, t: f64) -> Option<CompartmentState> {
        let first = self.samples.first()?;
        if t <= first.t {
            return Some(*first);
        }
        let idx = self.samples.partition_point(|s| s.t < t);
        if idx >= self.samples.len() {
            return self.samples.last().copied();
        }
        let (a, b) = (self.samples[idx - 1], self.samples[idx]);
        let u = (t - a.t) / (b.t - a.t);
        let ya = a.to_array();
        let yb = b.to_array();
        let mut y = [0.0; 6];
        for k in 0..6 {
            y[k] = ya[k] + u * (yb[k] - ya[k]);
        }
        Some(CompartmentState::from_slice(t, &y))
    }
}

/// Integrate `rhs(t, y)` with classic RK4 from `state0.t` to the largest
/// multiple of `dt` not beyond `t_end`.
pub fn integrate_rk4<F>(rhs: F, state0: &CompartmentState, t_end: f64, dt: f64) -> Result<TimeSeries>
where
    F: Fn(f64, &[f64]) -> Rates,
{
    integrate_with_slack(rhs, state0, t_end, dt, None)
}

/// As [`integrate_rk4`]; when `slack` is set, the population compartments
/// (all but those in `exempt`) are clamped to zero when they undershoot
/// by less than `slack`, and rejected below that.
fn integrate_with_slack<F>(
    rhs: F,
    state0: &CompartmentState,
    t_end: f64,
    dt: f64,
    slack: Option<(f64, &[usize])>,
) -> Result<TimeSeries>
where
    F: Fn(f64, &[f64]) -> Rates,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if !(t_end > state0.t) {
        return Err(Error::InvalidInput(format!("t_end must exceed the start time, got {t_end}")));
    }
    let sys = FnSystem::new(6, |t, y: &[f64], dy: &mut [f64]| dy.copy_from_slice(&rhs(t, y)));
    let steps = ode::step_count(t_end - state0.t, dt);
    let mut out = TimeSeries {
        samples: Vec::with_capacity(steps + 1),
        new_cases: Vec::with_capacity(steps + 1),
        new_deaths: Vec::with_capacity(steps + 1),
    };
    ode::integrate(&sys, &state0.to_array(), state0.t, dt, steps, |t, y| {
        if let Some((tol, exempt)) = slack {
            clamp_negative(t, y, tol, exempt)?;
        }
        let rates = rhs(t, y);
        out.samples.push(CompartmentState::from_slice(t, y));
        out.new_cases.push(rates[C]);
        out.new_deaths.push(rates[D]);
        Ok(())
    })?;
    Ok(out)
}

const NAMES: [&str; 6] = ["S", "E", "I", "R", "D", "C"];

fn clamp_negative(t: f64, y: &mut [f64], tol: f64, exempt: &[usize]) -> Result<()> {
    for (k, v) in y.iter_mut().enumerate() {
        if exempt.contains(&k) || *v >= 0.0 {
            continue;
        }
        if *v >= -tol {
            *v = 0.0;
        } else {
            return Err(Error::NegativePopulation {
                t,
                component: NAMES[k],
                value: *v,
            });
        }
    }
    Ok(())
}

/// Relative undershoot tolerated before a population is declared negative.
pub const NEGATIVE_SLACK: f64 = 1e-9;

/// Default integration step (days).
pub const DEFAULT_DT: f64 = 0.05;

/// A fully specified deterministic compartment simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub kind: ModelKind,
    pub params: SeirParams,
    pub schedule: ControlSchedule,
    pub quarantine: Option<QuarantineFn>,
}

impl Simulation {
    pub fn new(kind: ModelKind, params: SeirParams, schedule: ControlSchedule) -> Self {
        Self {
            kind,
            params,
            schedule,
            quarantine: None,
        }
    }

    pub fn with_quarantine(mut self, q: QuarantineFn) -> Self {
        self.quarantine = Some(q);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let needs_sigma = matches!(self.kind, ModelKind::Seir | ModelKind::SeirLinear);
        self.params.validate(needs_sigma)?;
        self.schedule.validate()?;
        if let Some(q) = &self.quarantine {
            q.validate()?;
        }
        if self.kind == ModelKind::SirQuarantine && self.quarantine.is_none() {
            return Err(Error::InvalidInput("sir_quarantine requires a quarantine function".into()));
        }
        Ok(())
    }

    pub fn rates(&self, t: f64, y: &[f64]) -> Rates {
        let beta = self.schedule.beta_at(t);
        match self.kind {
            ModelKind::Seir => seir_rhs(y, &self.params, beta),
            ModelKind::SeirLinear => linearized_seir_rhs(y, &self.params, beta),
            ModelKind::Sir => sir_rhs(y, &self.params, beta),
            ModelKind::SirQuarantine => {
                let qp = QuarantineParams {
                    beta,
                    gamma: self.params.gamma,
                    n: self.params.n,
                    q: self.quarantine.clone().unwrap_or(QuarantineFn::Constant { q: 0.0 }),
                };
                quarantine_sir_rhs(t, y, &qp)
            }
        }
    }

    pub fn run(&self, init: &CompartmentState, t_end: f64, dt: f64) -> Result<TimeSeries> {
        self.validate()?;
        let tol = NEGATIVE_SLACK * self.params.n;
        // F = S - N is a signed deviation in the linearized model.
        let exempt: &[usize] = match self.kind {
            ModelKind::SeirLinear => &[S],
            _ => &[],
        };
        match self.kind {
            ModelKind::SirQuarantine => {
                let qp = QuarantineParams {
                    beta: 0.0,
                    gamma: self.params.gamma,
                    n: self.params.n,
                    q: self.quarantine.clone().expect("validated"),
                };
                let schedule = self.schedule;
                integrate_with_slack(
                    |t, y| {
                        let qp = QuarantineParams {
                            beta: schedule.beta_at(t),
                            ..qp.clone()
                        };
                        quarantine_sir_rhs(t, y, &qp)
                    },
                    init,
                    t_end,
                    dt,
                    Some((tol, exempt)),
                )
            }
            _ => integrate_with_slack(|t, y| self.rates(t, y), init, t_end, dt, Some((tol, exempt))),
        }
    }
}

/// Basic reproduction number, incubation number, and half-lives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedStats {
    pub r0: f64,
    pub i0_incub: f64,
    pub half_life_transmission: f64,
    pub half_life_incubation: f64,
    pub half_life_infectious: f64,
    /// `ln 2 / alpha`; infinite when there is no control decay.
    pub control_response_time: f64,
}

pub fn derived_stats(p: &SeirParams, schedule: &ControlSchedule) -> DerivedStats {
    let ln2 = std::f64::consts::LN_2;
    let half = |rate: f64| if rate > 0.0 { ln2 / rate } else { f64::INFINITY };
    DerivedStats {
        r0: p.beta0 / p.gamma,
        i0_incub: p.sigma / p.gamma,
        half_life_transmission: half(p.beta0),
        half_life_incubation: half(p.sigma),
        half_life_infectious: half(p.gamma),
        control_response_time: half(schedule.alpha),
    }
}

/// Effective reproduction number along a trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReffSeries {
    pub t: Vec<f64>,
    pub r_eff: Vec<f64>,
    /// First time `R_eff` drops from at-or-above one to below one,
    /// linearly interpolated between samples.
    pub crossing: Option<f64>,
}

pub fn r_eff_series(traj: &TimeSeries, p: &SeirParams, schedule: &ControlSchedule) -> ReffSeries {
    let t: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let r_eff: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| schedule.beta_at(s.t) * s.s / (p.gamma * p.n))
        .collect();
    let crossing = r_eff.windows(2).zip(t.windows(2)).find_map(|(r, tt)| {
        if r[0] >= 1.0 && r[1] < 1.0 {
            let u = (r[0] - 1.0) / (r[0] - r[1]);
            Some(tt[0] + u * (tt[1] - tt[0]))
        } else {
            None
        }
    });
    ReffSeries { t, r_eff, crossing }
}
