//! Scenario presets and the pipeline configuration read from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Material;

/// Closed interval of one load parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Structured quadrilateral geometry. Lengths in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Tabletop on two legs flush with its ends; leg bottoms are clamped.
    Table {
        top_width: f64,
        top_height: f64,
        top_nx: usize,
        top_ny: usize,
        leg_width: f64,
        leg_height: f64,
        leg_nx: usize,
        leg_ny: usize,
    },
    /// Rectangle clamped along `x = 0`.
    Rectangle { length: f64, height: f64, nx: usize, ny: usize },
}

/// How the load parameters `μ` enter the boundary conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loading {
    /// `μ = [F^s]`: uniform shear traction (N/mm) along the top edge, +x.
    TopShear,
    /// `μ = [F^n, P_x]`: point force (N) on the top edge at `x = P_x`,
    /// positive values push in −y.
    TopPointForce,
}

impl Loading {
    pub fn n_params(&self) -> usize {
        match self {
            Loading::TopShear => 1,
            Loading::TopPointForce => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: Geometry,
    pub loading: Loading,
    /// Out-of-plane thickness, mm.
    pub thickness: f64,
    #[serde(default)]
    pub material: Material,
    #[serde(default = "default_load_steps")]
    pub load_steps: usize,
    /// Parameter domain `𝒫`, one range per load parameter.
    pub bounds: Vec<ParamRange>,
    /// Peak magnitudes used by the canonical test paths; defaults to the
    /// upper bound of each force parameter.
    #[serde(default)]
    pub catalog_peak: Option<f64>,
    /// Node whose response the probe reports (closest to this point).
    #[serde(default)]
    pub probe_point: Option<[f64; 2]>,
}

fn default_load_steps() -> usize {
    10
}

pub const TABLE_THICKNESS: f64 = 1.25;
pub const BEAM_THICKNESS: f64 = 0.6;

impl ScenarioConfig {
    /// 800-element table: 50×5 tabletop on two 5×55 legs, 1 mm elements.
    pub fn table() -> Self {
        Self {
            name: "table".into(),
            geometry: Geometry::Table {
                top_width: 50.0,
                top_height: 5.0,
                top_nx: 50,
                top_ny: 5,
                leg_width: 5.0,
                leg_height: 55.0,
                leg_nx: 5,
                leg_ny: 55,
            },
            loading: Loading::TopShear,
            thickness: TABLE_THICKNESS,
            material: Material::default(),
            load_steps: 10,
            bounds: vec![ParamRange::new(-3.5, 3.5)],
            catalog_peak: None,
            probe_point: Some([0.0, 60.0]),
        }
    }

    /// 980-element cantilever, 10 mm × 1 mm on a 140×7 grid.
    pub fn beam() -> Self {
        Self {
            name: "beam".into(),
            geometry: Geometry::Rectangle { length: 10.0, height: 1.0, nx: 140, ny: 7 },
            loading: Loading::TopPointForce,
            thickness: BEAM_THICKNESS,
            material: Material::default(),
            load_steps: 10,
            bounds: vec![ParamRange::new(-6.0, 6.0), ParamRange::new(5.0, 10.0)],
            catalog_peak: None,
            probe_point: Some([0.0, 1.0]),
        }
    }

    /// Cantilevered rectangle with a top point force anywhere along its span.
    pub fn rectangle(length: f64, height: f64, nx: usize, ny: usize) -> Self {
        Self {
            name: "custom".into(),
            geometry: Geometry::Rectangle { length, height, nx, ny },
            loading: Loading::TopPointForce,
            thickness: 1.0,
            material: Material::default(),
            load_steps: 10,
            bounds: vec![ParamRange::new(-1.0, 1.0), ParamRange::new(0.0, length)],
            catalog_peak: None,
            probe_point: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table" => Ok(Self::table()),
            "beam" => Ok(Self::beam()),
            other => Err(Error::Config(format!("unknown scenario preset {other:?}"))),
        }
    }

    pub fn n_params(&self) -> usize {
        self.loading.n_params()
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        if !(self.thickness > 0.0) {
            return Err(Error::Config("thickness must be positive".into()));
        }
        if self.load_steps == 0 {
            return Err(Error::Config("load_steps must be positive".into()));
        }
        if self.bounds.len() != self.n_params() {
            return Err(Error::Config(format!(
                "{} bounds given, loading expects {}",
                self.bounds.len(),
                self.n_params()
            )));
        }
        for r in &self.bounds {
            if !(r.lo < r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::Config(format!("empty parameter range {r:?}")));
            }
        }
        Ok(())
    }

    /// Checks that every component of `mu` lies inside `𝒫`.
    pub fn check_domain(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} load parameters, got {}", self.n_params(), mu.len())));
        }
        for (index, (v, r)) in mu.iter().zip(&self.bounds).enumerate() {
            if !v.is_finite() || !r.contains(*v) {
                return Err(Error::OutOfDomain { index, value: *v, lo: r.lo, hi: r.hi });
            }
        }
        Ok(())
    }
}
