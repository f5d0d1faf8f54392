//! JSON scenario documents and the built-in presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CompartmentState, ControlSchedule, ModelKind, QuarantineFn, SeirParams, Simulation, TimeSeries, DEFAULT_DT,
};
use crate::schema::{self, SchemaKind};
use crate::spatial::{self, DensityFields, Grid1D, SpatialParams};
use crate::stochastic::OccupancyState;

/// Control measures; `beta0` comes from the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub t0: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removal_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitState {
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

impl InitState {
    pub fn to_state(&self) -> CompartmentState {
        CompartmentState {
            t: 0.0,
            s: self.s,
            e: self.e,
            i: self.i,
            r: self.r,
            d: self.d,
            c: self.c,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

/// A deterministic compartment-model run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelKind,
    pub params: SeirParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Control>,
    pub init: InitState,
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quarantine: Option<QuarantineFn>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = schema::parse(SchemaKind::Scenario, text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn schedule(&self) -> ControlSchedule {
        match self.control {
            Some(c) => ControlSchedule {
                beta0: self.params.beta0,
                t0: c.t0,
                alpha: c.alpha,
                removal_time: c.removal_time,
            },
            None => ControlSchedule::constant(self.params.beta0),
        }
    }

    pub fn simulation(&self) -> Simulation {
        let sim = Simulation::new(self.model, self.params, self.schedule());
        match &self.quarantine {
            Some(q) => sim.with_quarantine(q.clone()),
            None => sim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation().validate()?;
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidInput(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<TimeSeries> {
        self.validate()?;
        self.simulation().run(&self.init.to_state(), self.t_end, self.dt)
    }
}

pub const SCENARIO_PRESETS: &[&str] = &["fig3", "fig4", "fig5a", "fig5b", "fig5c", "fig5d", "fig5e", "fig5f", "ebola"];

/// Built-in compartment scenarios.
pub fn preset(name: &str) -> Option<Scenario> {
    let fig34 = SeirParams {
        beta0: 0.5,
        sigma: 1.0 / 24.0,
        gamma: 1.0 / 14.0,
        f: 0.25,
        n: 1e4,
    };
    let fig5 = SeirParams {
        beta0: 0.5,
        sigma: 0.5,
        gamma: 0.25,
        f: 0.10,
        n: 1e4,
    };
    let seeded = |n: f64, i0: f64| InitState {
        s: n - i0,
        e: 0.0,
        i: i0,
        r: 0.0,
        d: 0.0,
        c: 0.0,
    };
    let base = |model, params: SeirParams, control, init, t_end| Scenario {
        model,
        params,
        control,
        init,
        t_end,
        dt: DEFAULT_DT,
        quarantine: None,
    };
    let controls = Control {
        t0: 28.0,
        alpha: 0.125,
        removal_time: None,
    };
    Some(match name {
        // Linearized model: the S slot carries F = S - N, seeded at 1000.
        "fig3" => base(
            ModelKind::SeirLinear,
            SeirParams { n: 1000.0, ..fig34 },
            None,
            InitState { s: 1000.0, ..seeded(0.0, 10.0) },
            100.0,
        ),
        "fig4" => base(ModelKind::Seir, fig34, None, seeded(1e4, 10.0), 600.0),
        "fig5a" | "fig5b" => base(ModelKind::Seir, fig5, None, seeded(1e4, 10.0), 200.0),
        "fig5c" | "fig5d" => base(ModelKind::Seir, fig5, Some(controls), seeded(1e4, 10.0), 200.0),
        "fig5e" | "fig5f" => base(
            ModelKind::Seir,
            fig5,
            Some(Control {
                removal_time: Some(60.0),
                ..controls
            }),
            seeded(1e4, 10.0),
            200.0,
        ),
        "ebola" => base(
            ModelKind::Seir,
            SeirParams {
                beta0: 0.266,
                sigma: 0.0720,
                gamma: 0.0533,
                f: 0.396,
                n: 1e6 + 1.0,
            },
            Some(Control {
                t0: 1.0,
                alpha: 0.00648,
                removal_time: None,
            }),
            seeded(1e6 + 1.0, 1.0),
            700.0,
        ),
        _ => return None,
    })
}

/// Initial density profile of a spatial run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SpatialInit {
    Uniform { phi_s: f64, phi_i: f64 },
    /// Uniform susceptibles plus a Gaussian of `mass` infected at the origin.
    GaussianSeed { phi_s: f64, mass: f64, width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialScenario {
    pub params: SpatialParams,
    pub length: f64,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub init: SpatialInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
}

impl SpatialScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: SpatialScenario = schema::parse(SchemaKind::SpatialScenario, text)?;
        sc.params.validate()?;
        spatial::make_grid(sc.length, sc.n)?;
        Ok(sc)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        spatial::make_grid(self.length, self.n)
    }

    pub fn initial_fields(&self, grid: &Grid1D) -> DensityFields {
        match self.init {
            SpatialInit::Uniform { phi_s, phi_i } => DensityFields::uniform(grid.n, phi_s, phi_i),
            SpatialInit::GaussianSeed { phi_s, mass, width } => {
                DensityFields::new(vec![phi_s; grid.n], spatial::gaussian(grid, mass, 0.0, width))
            }
        }
    }

    pub fn run(&self) -> Result<spatial::SpatialSeries> {
        let grid = self.grid()?;
        let init = self.initial_fields(&grid);
        spatial::run_spatial(&init, &self.params, &grid, self.t_end, self.dt, self.snapshot_every)
    }
}

pub const SPATIAL_PRESETS: &[&str] = &["fig8a", "fig8b", "fig9"];

pub fn spatial_preset(name: &str) -> Option<SpatialScenario> {
    let params = SpatialParams {
        lambda: 0.5,
        mu: 0.25,
        nu: 0.0,
        f_source: 0.0,
        g: 0.10,
        d_s: 10.0,
        d_i: 2.0,
    };
    let vital = SpatialParams {
        nu: 0.01,
        f_source: 0.01,
        ..params
    };
    let homogeneous = |params, t_end| SpatialScenario {
        params,
        length: 100.0,
        n: 64,
        dt: 0.05,
        t_end,
        init: SpatialInit::Uniform {
            phi_s: 0.999,
            phi_i: 0.001,
        },
        snapshot_every: Some(1.0),
    };
    Some(match name {
        "fig8a" => homogeneous(params, 100.0),
        "fig8b" => homogeneous(vital, 2000.0),
        "fig9" => SpatialScenario {
            params: vital,
            length: 100.0,
            n: 512,
            dt: 0.01,
            t_end: 100.0,
            init: SpatialInit::GaussianSeed {
                phi_s: 0.95,
                mass: 5.0,
                width: 2.0,
            },
            snapshot_every: Some(1.0),
        },
        _ => return None,
    })
}

/// A Gillespie ensemble on a 1-D lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GillespieScenario {
    pub params: SpatialParams,
    pub cells: usize,
    pub cell_volume: f64,
    /// Susceptible count per cell.
    pub s: Vec<u64>,
    /// Infected count per cell.
    pub i: Vec<u64>,
    pub t_end: f64,
    /// Spacing of the ensemble sample grid.
    pub sample_dt: f64,
}

impl GillespieScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: GillespieScenario = schema::parse(SchemaKind::GillespieScenario, text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.s.len() != self.cells || self.i.len() != self.cells {
            return Err(Error::InvalidInput("s and i need one entry per cell".into()));
        }
        if !(self.sample_dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::InvalidInput("sample_dt must be > 0 and t_end >= 0".into()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> OccupancyState {
        OccupancyState::new(&self.s, &self.i)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = crate::ode::step_count(self.t_end, self.sample_dt);
        (0..=n).map(|k| k as f64 * self.sample_dt).collect()
    }
}

pub const GILLESPIE_PRESETS: &[&str] = &["sir-single", "sir-lattice"];

/// `sir-single`: one well-mixed cell, N = 10⁴, β = 0.5, γ = 0.25, I₀ = 10.
/// With cell volume N the infection constant is `β/N`.
///
/// `sir-lattice`: ten 10-mile cells of 1000 people, so ρ₀ = 100 per mile
/// and λ = β/ρ₀ = 0.005; the seed sits in cell 5.
pub fn gillespie_preset(name: &str) -> Option<GillespieScenario> {
    let p = SpatialParams {
        lambda: 0.5,
        mu: 0.25,
        nu: 0.0,
        f_source: 0.0,
        g: 0.0,
        d_s: 0.0,
        d_i: 0.0,
    };
    Some(match name {
        "sir-single" => GillespieScenario {
            params: p,
            cells: 1,
            cell_volume: 1e4,
            s: vec![9990],
            i: vec![10],
            t_end: 40.0,
            sample_dt: 1.0,
        },
        "sir-lattice" => {
            let mut i = vec![0; 10];
            i[5] = 10;
            GillespieScenario {
                params: SpatialParams {
                    lambda: 0.005,
                    d_s: 100.0,
                    d_i: 20.0,
                    g: 0.1,
                    ..p
                },
                cells: 10,
                cell_volume: 10.0,
                s: vec![1000; 10],
                i,
                t_end: 60.0,
                sample_dt: 1.0,
            }
        }
        _ => return None,
    })
}
