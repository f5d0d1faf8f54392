//! Stochastic SIR: exact Gillespie simulation of the reaction network on a
//! 1-D lattice with reflective hopping, and an Euler-Maruyama integrator for
//! the Langevin density equations.
//!
//! Per cell of volume `V` the channels are
//!
//! | reaction      | propensity  | change        |
//! |---------------|-------------|---------------|
//! | S + I → 2I    | k1 S I      | S-1, I+1      |
//! | I → removed   | k2 I        | I-1           |
//! | S → ∅         | k3 S        | S-1           |
//! | ∅ → S         | k4          | S+1           |
//!
//! with `k1 = λ/V`, `k2 = μ`, `k3 = ν`, `k4 = f V`. Hops to a neighbour
//! happen at `d = D/h²` per particle and direction. Outward hops at the two
//! ends are omitted, which makes the boundaries reflective.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{Grid1D, SpatialParams, Spectral};

type C64 = Complex64;

/// Generator for replicate `index` of an ensemble seeded with `master`.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    S,
    I,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReactionKind {
    Infection,
    Removal,
    Death,
    Birth,
    Hop { species: Species, to: usize },
}

/// A mass-action channel: propensity `rate · Π counts[reactants]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reaction {
    pub label: String,
    pub kind: ReactionKind,
    pub cell: usize,
    pub rate: f64,
    pub reactants: Vec<usize>,
    pub delta: Vec<(usize, i64)>,
}

impl Reaction {
    pub fn propensity(&self, counts: &[u64]) -> f64 {
        self.reactants
            .iter()
            .fold(self.rate, |a, &s| a * counts[s] as f64)
    }
}

/// Reactions over `2 · cells` species slots (`S` at `2c`, `I` at `2c + 1`)
/// plus the reactions whose propensity each one can change.
#[derive(Clone, Debug)]
pub struct ReactionSystem {
    pub cells: usize,
    pub reactions: Vec<Reaction>,
    /// Fraction of removals that are deaths.
    pub death_fraction: f64,
    dependents: Vec<Vec<usize>>,
}

pub fn slot(cell: usize, species: Species) -> usize {
    match species {
        Species::S => 2 * cell,
        Species::I => 2 * cell + 1,
    }
}

impl ReactionSystem {
    pub fn new(cells: usize, reactions: Vec<Reaction>, death_fraction: f64) -> Result<Self> {
        let slots = 2 * cells;
        for r in &reactions {
            if !(r.rate >= 0.0) || !r.rate.is_finite() {
                return Err(Error::InvalidInput(format!("reaction {} has rate {}", r.label, r.rate)));
            }
            if r.reactants.iter().chain(r.delta.iter().map(|(s, _)| s)).any(|&s| s >= slots) {
                return Err(Error::InvalidInput(format!("reaction {} refers to a missing slot", r.label)));
            }
        }
        let mut readers: Vec<Vec<usize>> = vec![vec![]; slots];
        for (j, r) in reactions.iter().enumerate() {
            for &s in &r.reactants {
                if !readers[s].contains(&j) {
                    readers[s].push(j);
                }
            }
        }
        let dependents = reactions
            .iter()
            .map(|r| {
                let mut dep: Vec<usize> = r.delta.iter().flat_map(|(s, _)| readers[*s].iter().copied()).collect();
                dep.sort_unstable();
                dep.dedup();
                dep
            })
            .collect();
        Ok(Self {
            cells,
            reactions,
            death_fraction,
            dependents,
        })
    }

    pub fn len(&self) -> usize {
        self.reactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reactions.is_empty()
    }

    /// Reactions whose propensity may change when reaction `j` fires.
    pub fn dependents(&self, j: usize) -> &[usize] {
        &self.dependents[j]
    }
}

/// SIR network on `cells` cells of volume `cell_volume` (length `h` in 1-D).
pub fn build_sir_reactions(p: &SpatialParams, cells: usize, cell_volume: f64) -> Result<ReactionSystem> {
    p.validate()?;
    if cells == 0 {
        return Err(Error::InvalidInput("need at least one cell".into()));
    }
    if !(cell_volume > 0.0) {
        return Err(Error::InvalidInput(format!("cell volume must be > 0, got {cell_volume}")));
    }
    let v = cell_volume;
    let mut rx = Vec::new();
    for c in 0..cells {
        let (s, i) = (slot(c, Species::S), slot(c, Species::I));
        rx.push(Reaction {
            label: "infection".into(),
            kind: ReactionKind::Infection,
            cell: c,
            rate: p.lambda / v,
            reactants: vec![s, i],
            delta: vec![(s, -1), (i, 1)],
        });
        rx.push(Reaction {
            label: "removal".into(),
            kind: ReactionKind::Removal,
            cell: c,
            rate: p.mu,
            reactants: vec![i],
            delta: vec![(i, -1)],
        });
        rx.push(Reaction {
            label: "death".into(),
            kind: ReactionKind::Death,
            cell: c,
            rate: p.nu,
            reactants: vec![s],
            delta: vec![(s, -1)],
        });
        rx.push(Reaction {
            label: "birth".into(),
            kind: ReactionKind::Birth,
            cell: c,
            rate: p.f_source * v,
            reactants: vec![],
            delta: vec![(s, 1)],
        });
    }
    if cells > 1 {
        let h2 = v * v;
        for (species, diff) in [(Species::S, p.d_s), (Species::I, p.d_i)] {
            let name = match species {
                Species::S => "hop_s",
                Species::I => "hop_i",
            };
            for c in 0..cells {
                let targets = [c.checked_sub(1), (c + 1 < cells).then_some(c + 1)];
                for to in targets.into_iter().flatten() {
                    let (from_slot, to_slot) = (slot(c, species), slot(to, species));
                    rx.push(Reaction {
                        label: name.into(),
                        kind: ReactionKind::Hop { species, to },
                        cell: c,
                        rate: diff / h2,
                        reactants: vec![from_slot],
                        delta: vec![(from_slot, -1), (to_slot, 1)],
                    });
                }
            }
        }
    }
    ReactionSystem::new(cells, rx, p.g)
}

/// Occupation numbers and cumulative counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyState {
    pub t: f64,
    pub counts: Vec<u64>,
    pub r_total: u64,
    pub d_total: u64,
    /// Ever infected, including the initial infected.
    pub c_total: u64,
}

impl OccupancyState {
    pub fn new(s: &[u64], i: &[u64]) -> Self {
        let counts = s.iter().zip(i).flat_map(|(a, b)| [*a, *b]).collect();
        Self {
            t: 0.0,
            counts,
            r_total: 0,
            d_total: 0,
            c_total: i.iter().sum(),
        }
    }

    pub fn single_cell(s: u64, i: u64) -> Self {
        Self::new(&[s], &[i])
    }

    pub fn totals(&self) -> SpeciesTotals {
        let (mut s, mut i) = (0, 0);
        for pair in self.counts.chunks_exact(2) {
            s += pair[0];
            i += pair[1];
        }
        SpeciesTotals {
            t: self.t,
            s,
            i,
            r: self.r_total,
            d: self.d_total,
            c: self.c_total,
        }
    }
}

/// Whole-lattice counts at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTotals {
    pub t: f64,
    pub s: u64,
    pub i: u64,
    pub r: u64,
    pub d: u64,
    pub c: u64,
}

impl SpeciesTotals {
    pub fn values(&self) -> [f64; 5] {
        [self.s as f64, self.i as f64, self.r as f64, self.d as f64, self.c as f64]
    }
}

/// Waiting time `ln(1/r1)/a`.
pub fn gillespie_delta_t(total_propensity: f64, r1: f64) -> Result<f64> {
    if total_propensity <= 0.0 {
        return Err(Error::Extinction);
    }
    Ok((1.0 / r1).ln() / total_propensity)
}

/// Smallest (0-based) `j` with `Σ_{l≤j} a_l > r2 · Σ a`.
pub fn gillespie_select(propensities: &[f64], r2: f64) -> usize {
    let total: f64 = propensities.iter().sum();
    let target = r2 * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, a) in propensities.iter().enumerate() {
        acc += a;
        if *a > 0.0 {
            last_positive = j;
        }
        if acc > target {
            return j;
        }
    }
    last_positive
}

/// One fired reaction and the totals just after it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub reaction: usize,
    pub label: String,
    pub cell: usize,
    pub totals: SpeciesTotals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Extinction,
}

/// Event loop state for one replicate.
pub struct Gillespie<'a> {
    system: &'a ReactionSystem,
    pub state: OccupancyState,
    props: Vec<f64>,
    total: f64,
    rng: ChaCha8Rng,
    since_refresh: usize,
}

impl<'a> Gillespie<'a> {
    pub fn new(system: &'a ReactionSystem, init: OccupancyState, rng: ChaCha8Rng) -> Result<Self> {
        if init.counts.len() != 2 * system.cells {
            return Err(Error::InvalidInput(format!(
                "state has {} slots, system expects {}",
                init.counts.len(),
                2 * system.cells
            )));
        }
        let props: Vec<f64> = system.reactions.iter().map(|r| r.propensity(&init.counts)).collect();
        let total = props.iter().sum();
        Ok(Self {
            system,
            state: init,
            props,
            total,
            rng,
            since_refresh: 0,
        })
    }

    pub fn total_propensity(&self) -> f64 {
        self.total
    }

    fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Fire the next reaction if it happens before `t_end`; otherwise move
    /// the clock to `t_end`.
    pub fn next_event(&mut self, t_end: f64) -> Result<Option<usize>> {
        if self.total <= 0.0 {
            self.state.t = t_end;
            return Err(Error::Extinction);
        }
        let r1 = self.uniform_open();
        let dt = gillespie_delta_t(self.total, r1)?;
        let t_next = self.state.t + dt;
        if t_next > t_end {
            self.state.t = t_end;
            return Ok(None);
        }
        let r2: f64 = self.rng.random();
        let j = gillespie_select(&self.props, r2);
        self.apply(j)?;
        self.state.t = t_next;
        Ok(Some(j))
    }

    fn apply(&mut self, j: usize) -> Result<()> {
        let r = &self.system.reactions[j];
        for &(s, d) in &r.delta {
            let v = self.state.counts[s] as i64 + d;
            if v < 0 {
                return Err(Error::InvalidInput(format!("reaction {} drove slot {s} negative", r.label)));
            }
            self.state.counts[s] = v as u64;
        }
        match r.kind {
            ReactionKind::Infection => self.state.c_total += 1,
            ReactionKind::Removal => {
                let u: f64 = self.rng.random();
                if u < self.system.death_fraction {
                    self.state.d_total += 1;
                } else {
                    self.state.r_total += 1;
                }
            }
            _ => {}
        }
        for &k in self.system.dependents(j) {
            let a = self.system.reactions[k].propensity(&self.state.counts);
            self.total += a - self.props[k];
            self.props[k] = a;
        }
        // Keep the running sum from drifting.
        self.since_refresh += 1;
        if self.since_refresh >= 4096 {
            self.total = self.props.iter().sum();
            self.since_refresh = 0;
        }
        if self.total < 1e-12 * self.props.iter().fold(0.0f64, |m, a| m.max(*a)) || self.total < 0.0 {
            self.total = self.props.iter().sum();
        }
        Ok(())
    }
}

/// Result of [`gillespie_run`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GillespieRun {
    pub initial: SpeciesTotals,
    pub events: Vec<Event>,
    pub final_state: OccupancyState,
    pub termination: Termination,
}

/// Simulate until `t_end` or extinction, recording every event.
pub fn gillespie_run(system: &ReactionSystem, init: OccupancyState, t_end: f64, seed: u64) -> Result<GillespieRun> {
    let initial = init.totals();
    let mut g = Gillespie::new(system, init, replicate_rng(seed, 0))?;
    let mut events = Vec::new();
    let termination = loop {
        match g.next_event(t_end) {
            Ok(Some(j)) => {
                let r = &system.reactions[j];
                events.push(Event {
                    t: g.state.t,
                    reaction: j,
                    label: r.label.clone(),
                    cell: r.cell,
                    totals: g.state.totals(),
                });
            }
            Ok(None) => break Termination::Horizon,
            Err(Error::Extinction) => break Termination::Extinction,
            Err(e) => return Err(e),
        }
    };
    Ok(GillespieRun {
        initial,
        events,
        final_state: g.state,
        termination,
    })
}

/// Totals at each of the (sorted) `times`, last value carried forward.
pub fn gillespie_sampled(
    system: &ReactionSystem,
    init: OccupancyState,
    times: &[f64],
    rng: ChaCha8Rng,
) -> Result<Vec<SpeciesTotals>> {
    let mut g = Gillespie::new(system, init, rng)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        loop {
            match g.next_event(t) {
                Ok(Some(_)) => {}
                Ok(None) | Err(Error::Extinction) => break,
                Err(e) => return Err(e),
            }
        }
        let mut tot = g.state.totals();
        tot.t = t;
        out.push(tot);
    }
    Ok(out)
}

/// `runs` independent replicates sampled at `times`, in replicate order.
pub fn run_ensemble(
    system: &ReactionSystem,
    init: &OccupancyState,
    times: &[f64],
    runs: usize,
    master_seed: u64,
) -> Result<Vec<Vec<SpeciesTotals>>> {
    (0..runs)
        .into_par_iter()
        .map(|k| gillespie_sampled(system, init.clone(), times, replicate_rng(master_seed, k as u64)))
        .collect()
}

/// Resample an event trajectory onto `times` (last value carried forward).
pub fn resample_events(run: &GillespieRun, times: &[f64]) -> Vec<SpeciesTotals> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = run.initial;
    let mut idx = 0;
    for &t in times {
        while idx < run.events.len() && run.events[idx].t <= t {
            cur = run.events[idx].totals;
            idx += 1;
        }
        let mut s = cur;
        s.t = t;
        out.push(s);
    }
    out
}

/// Per-time ensemble moments of the five totals `(S, I, R, D, C)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub t: Vec<f64>,
    pub mean: Vec<[f64; 5]>,
    pub variance: Vec<[f64; 5]>,
    pub std_error: Vec<[f64; 5]>,
    pub runs: usize,
}

/// Sample mean, unbiased variance and standard error over runs.
pub fn ensemble_stats(runs: &[Vec<SpeciesTotals>]) -> Result<EnsembleStats> {
    if runs.len() < 2 {
        return Err(Error::InvalidInput("ensemble statistics need at least two runs".into()));
    }
    let len = runs[0].len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::InvalidInput("runs are sampled on different grids".into()));
    }
    let n = runs.len() as f64;
    let mut stats = EnsembleStats {
        t: runs[0].iter().map(|s| s.t).collect(),
        mean: vec![[0.0; 5]; len],
        variance: vec![[0.0; 5]; len],
        std_error: vec![[0.0; 5]; len],
        runs: runs.len(),
    };
    for p in 0..len {
        for q in 0..5 {
            let mean = runs.iter().map(|r| r[p].values()[q]).sum::<f64>() / n;
            let var = runs
                .iter()
                .map(|r| (r[p].values()[q] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            stats.mean[p][q] = mean;
            stats.variance[p][q] = var;
            stats.std_error[p][q] = (var / n).sqrt();
        }
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `σ = -λ φS φI` with principal complex square roots.
    #[default]
    Complex,
    /// `|σ|` in place of `σ` and `θ₁ + θ₂` in place of `θ₁ + iθ₂`, giving a
    /// real SDE with `⟨ηI²⟩ = 2|σ|`, `⟨ηS²⟩ = |σ|`, `⟨ηI ηS⟩ = -|σ|`.
    Real,
    /// Deterministic Euler.
    Off,
}

/// Complex density fields for the Langevin integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct LangevinFields {
    pub t: f64,
    pub phi_s: Vec<C64>,
    pub phi_i: Vec<C64>,
}

impl LangevinFields {
    pub fn from_real(phi_s: &[f64], phi_i: &[f64]) -> Self {
        Self {
            t: 0.0,
            phi_s: phi_s.iter().map(|v| C64::new(*v, 0.0)).collect(),
            phi_i: phi_i.iter().map(|v| C64::new(*v, 0.0)).collect(),
        }
    }

    pub fn real_s(&self) -> Vec<f64> {
        self.phi_s.iter().map(|z| z.re).collect()
    }

    pub fn real_i(&self) -> Vec<f64> {
        self.phi_i.iter().map(|z| z.re).collect()
    }
}

/// Noise increments `(ΔηI, ΔηS)` for one step, given per-cell normals.
pub fn noise_increments(
    fields: &LangevinFields,
    p: &SpatialParams,
    dt: f64,
    h: f64,
    mode: NoiseMode,
    theta1: &[f64],
    theta2: &[f64],
) -> (Vec<C64>, Vec<C64>) {
    let scale = (dt / h).sqrt();
    let n = fields.phi_i.len();
    let mut di = vec![C64::new(0.0, 0.0); n];
    let mut ds = vec![C64::new(0.0, 0.0); n];
    if mode == NoiseMode::Off {
        return (di, ds);
    }
    for j in 0..n {
        let mut sigma = -p.lambda * fields.phi_i[j] * fields.phi_s[j];
        if mode == NoiseMode::Real {
            sigma = C64::new(sigma.norm(), 0.0);
        }
        // Keep real negative σ on the principal branch (+i, not -i).
        // A -0 imaginary part would put sqrt on the lower branch.
        if sigma.im == 0.0 {
            sigma.im = 0.0;
        }
        di[j] = (2.0 * sigma).sqrt() * theta1[j] * scale;
        ds[j] = match mode {
            NoiseMode::Real => -(sigma / 2.0).sqrt() * (theta1[j] + theta2[j]) * scale,
            _ => -(sigma / 2.0).sqrt() * C64::new(theta1[j], theta2[j]) * scale,
        };
    }
    (di, ds)
}

/// Euler-Maruyama stepper with a spectral Laplacian.
pub struct Langevin {
    pub params: SpatialParams,
    pub grid: Grid1D,
    pub dt: f64,
    pub mode: NoiseMode,
    spectral: Spectral,
    lap_s: Vec<C64>,
    lap_i: Vec<C64>,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
}

impl Langevin {
    pub fn new(params: SpatialParams, grid: Grid1D, dt: f64, mode: NoiseMode) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        let kmax = grid.k.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        let stiff = params.d_s.max(params.d_i) * kmax * kmax + params.mu.max(params.nu);
        if dt * stiff > 2.0 {
            return Err(Error::InvalidInput(format!(
                "explicit step dt = {dt} is unstable for this grid; need dt < {}",
                2.0 / stiff
            )));
        }
        let n = grid.n;
        Ok(Self {
            params,
            dt,
            mode,
            spectral: Spectral::new(n),
            lap_s: vec![C64::new(0.0, 0.0); n],
            lap_i: vec![C64::new(0.0, 0.0); n],
            theta1: vec![0.0; n],
            theta2: vec![0.0; n],
            grid,
        })
    }

    fn laplacian(&mut self, v: &[C64], out_is_s: bool) {
        let buf = if out_is_s { &mut self.lap_s } else { &mut self.lap_i };
        buf.copy_from_slice(v);
        self.spectral.forward_complex(buf);
        for (z, k) in buf.iter_mut().zip(&self.grid.k) {
            *z *= -k * k;
        }
        self.spectral.inverse_complex(buf);
    }

    /// Advance one step, drawing normals from `rng`.
    pub fn step<R: Rng>(&mut self, fields: &mut LangevinFields, rng: &mut R) -> Result<()> {
        let n = self.grid.n;
        if self.mode != NoiseMode::Off {
            for j in 0..n {
                self.theta1[j] = rng.sample(StandardNormal);
                self.theta2[j] = rng.sample(StandardNormal);
            }
        }
        let (ni, ns) = noise_increments(fields, &self.params, self.dt, self.grid.h, self.mode, &self.theta1, &self.theta2);
        self.laplacian(&fields.phi_s.clone(), true);
        self.laplacian(&fields.phi_i.clone(), false);
        let p = self.params;
        let dt = self.dt;
        for j in 0..n {
            let (s, i) = (fields.phi_s[j], fields.phi_i[j]);
            let coupling = p.lambda * s * i;
            let di = p.d_i * self.lap_i[j] - p.mu * i + coupling;
            let ds = p.d_s * self.lap_s[j] - p.nu * s - coupling + p.f_source;
            fields.phi_i[j] = i + dt * di + ni[j];
            fields.phi_s[j] = s + dt * ds + ns[j];
        }
        fields.t += dt;
        check_langevin(fields)
    }
}

/// Absolute floor below which imaginary parts are not compared.
pub const IMAG_FLOOR: f64 = 1e-12;

fn check_langevin(fields: &LangevinFields) -> Result<()> {
    for z in fields.phi_s.iter().chain(fields.phi_i.iter()) {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite { t: fields.t });
        }
        if z.im.abs() > 0.1 * z.re.abs() + IMAG_FLOOR {
            return Err(Error::ImaginaryBlowup { t: fields.t });
        }
    }
    Ok(())
}

/// Real parts of the integrated densities at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LangevinTotals {
    pub t: f64,
    pub s: f64,
    pub i: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LangevinRun {
    pub totals: Vec<LangevinTotals>,
    pub final_fields: LangevinFields,
}

/// Integrate to `t_end`, recording integrated totals every `sample_every` steps.
pub fn langevin_run(
    init: &LangevinFields,
    p: &SpatialParams,
    grid: &Grid1D,
    t_end: f64,
    dt: f64,
    mode: NoiseMode,
    seed: u64,
    sample_every: usize,
) -> Result<LangevinRun> {
    if init.phi_s.len() != grid.n || init.phi_i.len() != grid.n {
        return Err(Error::InvalidInput("fields do not match the grid".into()));
    }
    let mut stepper = Langevin::new(*p, grid.clone(), dt, mode)?;
    let mut rng = replicate_rng(seed, 0);
    let steps = crate::ode::step_count(t_end - init.t, dt);
    let every = sample_every.max(1);
    let mut fields = init.clone();
    let total = |f: &LangevinFields| LangevinTotals {
        t: f.t,
        s: f.phi_s.iter().map(|z| z.re).sum::<f64>() * grid.h,
        i: f.phi_i.iter().map(|z| z.re).sum::<f64>() * grid.h,
    };
    let mut totals = vec![total(&fields)];
    for n in 0..steps {
        stepper.step(&mut fields, &mut rng)?;
        fields.t = init.t + (n + 1) as f64 * dt;
        if (n + 1) % every == 0 || n + 1 == steps {
            totals.push(total(&fields));
        }
    }
    Ok(LangevinRun {
        totals,
        final_fields: fields,
    })
}

/// Shared, thread-safe handle to a reaction system.
pub type SharedSystem = Arc<ReactionSystem>;

#[cfg(test)]
mod tests {
    use super::*;

    fn sir(beta: f64, gamma: f64) -> SpatialParams {
        SpatialParams {
            lambda: beta,
            mu: gamma,
            nu: 0.0,
            f_source: 0.0,
            g: 0.0,
            d_s: 0.0,
            d_i: 0.0,
        }
    }

    #[test]
    fn channel_counts() {
        let p = SpatialParams { d_s: 1.0, d_i: 1.0, ..sir(0.5, 0.25) };
        assert_eq!(build_sir_reactions(&p, 1, 1.0).unwrap().len(), 4);
        assert_eq!(build_sir_reactions(&p, 10, 1.0).unwrap().len(), 76);
    }

    #[test]
    fn infection_propensity() {
        let p = sir(0.005, 0.25);
        let sys = build_sir_reactions(&p, 1, 1.0).unwrap();
        let st = OccupancyState::single_cell(100, 10);
        assert!((sys.reactions[0].propensity(&st.counts) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn delta_t_and_selection() {
        assert!((gillespie_delta_t(2.0, (-1.0f64).exp()).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(gillespie_delta_t(0.0, 0.5), Err(Error::Extinction)));
        assert_eq!(gillespie_select(&[1.0, 3.0], 0.2), 0);
        assert_eq!(gillespie_select(&[1.0, 3.0], 0.9), 1);
        assert_eq!(gillespie_select(&[0.0, 3.0, 0.0], 0.0), 1);
    }

    #[test]
    fn same_seed_same_events() {
        let sys = build_sir_reactions(&sir(0.5e-2, 0.25), 1, 1.0).unwrap();
        let a = gillespie_run(&sys, OccupancyState::single_cell(100, 5), 30.0, 7).unwrap();
        let b = gillespie_run(&sys, OccupancyState::single_cell(100, 5), 30.0, 7).unwrap();
        assert_eq!(a, b);
        let last = a.final_state.totals();
        assert_eq!(last.c, last.i + last.r + last.d);
    }

    #[test]
    fn ensemble_moments() {
        let mk = |i| SpeciesTotals { t: 1.0, s: 0, i, r: 0, d: 0, c: 0 };
        let st = ensemble_stats(&[vec![mk(0)], vec![mk(2)]]).unwrap();
        assert_eq!(st.mean[0][1], 1.0);
        assert_eq!(st.variance[0][1], 2.0);
        let st = ensemble_stats(&[vec![mk(3)], vec![mk(3)], vec![mk(3)]]).unwrap();
        assert_eq!(st.variance[0][1], 0.0);
        assert!(ensemble_stats(&[vec![mk(3)]]).is_err());
    }

    #[test]
    fn lvcf_resampling() {
        let sys = build_sir_reactions(&sir(0.5e-2, 0.25), 1, 1.0).unwrap();
        let run = gillespie_run(&sys, OccupancyState::single_cell(100, 5), 20.0, 3).unwrap();
        let s = resample_events(&run, &[0.0, 20.0]);
        assert_eq!(s[0].i, 5);
        assert_eq!(s[1].i, run.final_state.totals().i);
    }

    #[test]
    fn noise_scale_factor() {
        let p = sir(1.0, 0.0);
        let f = LangevinFields::from_real(&[1.0], &[0.5]);
        let (di, _) = noise_increments(&f, &p, 0.01, 1.0, NoiseMode::Real, &[1.0], &[0.0]);
        assert!((di[0].re - 0.1).abs() < 1e-15);
        let (di, _) = noise_increments(&f, &p, 0.01, 1.0, NoiseMode::Complex, &[1.0], &[0.0]);
        assert!(di[0].re.abs() < 1e-15 && (di[0].im - 0.1).abs() < 1e-15);
    }

    #[test]
    fn real_noise_covariance() {
        // |σ| = 0.5: sample moments over many unit-scale normal pairs.
        let p = sir(1.0, 0.0);
        let f = LangevinFields::from_real(&[1.0], &[0.5]);
        let mut rng = replicate_rng(11, 0);
        let n = 200_000;
        let (mut ii, mut ss, mut is) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let t1: f64 = rng.sample(StandardNormal);
            let t2: f64 = rng.sample(StandardNormal);
            let (di, ds) = noise_increments(&f, &p, 1.0, 1.0, NoiseMode::Real, &[t1], &[t2]);
            assert!(di[0].im == 0.0 && ds[0].im == 0.0);
            ii += di[0].re * di[0].re;
            ss += ds[0].re * ds[0].re;
            is += di[0].re * ds[0].re;
        }
        let m = n as f64;
        assert!((ii / m - 1.0).abs() < 0.02);
        assert!((ss / m - 0.5).abs() < 0.01);
        assert!((is / m + 0.5).abs() < 0.01);
    }
}
