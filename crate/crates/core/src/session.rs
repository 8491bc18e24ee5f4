//! Stepwise inference sessions.
//!
//! A session accumulates a load path one step at a time. Every submission
//! re-runs the ensemble over the whole prefix, so the answer for step `k` is
//! the same bits that batch inference on the full path gives for step `k`.
//! Sessions live in memory only.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::config::ParamRange;
use crate::error::{Error, Result};
use crate::fem::{build_mesh, FieldId, Mesh};
use crate::pipeline::Surrogate;
use crate::scenario::LoadPath;

/// Answer to one submitted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub step_index: usize,
    pub mu: Vec<f64>,
    /// Nodal arrays keyed by field name.
    pub fields: HashMap<String, Vec<f64>>,
    /// Composite coefficients keyed by field name.
    pub coefficients: HashMap<String, Vec<f64>>,
    pub extrapolation_warning: bool,
}

/// What a client needs to draw and steer a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub scenario: String,
    pub mesh: MeshGeometry,
    pub fields: Vec<FieldEntry>,
    pub bounds: Vec<ParamRange>,
    pub n_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshGeometry {
    pub nodes: Vec<[f64; 2]>,
    pub quads: Vec<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub components: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHistory {
    pub id: String,
    pub scenario: String,
    pub n_steps: usize,
    pub steps: Vec<StepResponse>,
}

struct Loaded {
    surrogate: Surrogate,
    mesh: Mesh,
}

#[derive(Default)]
struct Session {
    scenario: String,
    path: Vec<Vec<f64>>,
    steps: Vec<StepResponse>,
}

/// Shared read-only surrogates plus the live sessions.
pub struct SessionManager {
    scenarios: HashMap<String, Arc<Loaded>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    /// One surrogate per scenario name.
    pub fn new(surrogates: Vec<Surrogate>) -> Result<Self> {
        let mut scenarios = HashMap::new();
        for s in surrogates {
            s.validate()?;
            let mesh = build_mesh(&s.scenario)?;
            let dofs: Vec<usize> = s.fields.iter().map(|f| f.basis.n_dofs()).collect();
            let expect: Vec<usize> = s.fields.iter().map(|f| f.field().components() * mesh.n_nodes()).collect();
            if dofs != expect {
                return Err(Error::Shape(format!("bases have {dofs:?} rows, mesh implies {expect:?}")));
            }
            let name = s.scenario.name.clone();
            if scenarios.insert(name.clone(), Arc::new(Loaded { surrogate: s, mesh })).is_some() {
                return Err(Error::Config(format!("scenario {name} loaded twice")));
            }
        }
        Ok(Self { scenarios, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    pub fn scenario_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.scenarios.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn surrogate(&self, scenario: &str) -> Option<&Surrogate> {
        self.scenarios.get(scenario).map(|l| &l.surrogate)
    }

    fn loaded(&self, scenario: &str) -> Result<&Arc<Loaded>> {
        self.scenarios.get(scenario).ok_or_else(|| Error::Config(format!("no surrogate loaded for scenario {scenario:?}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn create(&self, scenario: &str) -> Result<SessionInfo> {
        let l = self.loaded(scenario)?;
        let id = format!("s{:08x}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session { scenario: scenario.to_string(), ..Default::default() };
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
        let s = &l.surrogate;
        Ok(SessionInfo {
            id,
            scenario: scenario.to_string(),
            mesh: MeshGeometry { nodes: l.mesh.nodes.clone(), quads: l.mesh.quads.clone() },
            fields: s
                .fields
                .iter()
                .map(|f| FieldEntry { name: f.field().to_string(), components: f.field().components(), rank: f.rank() })
                .collect(),
            bounds: s.scenario.bounds.clone(),
            n_steps: s.n_steps(),
        })
    }

    /// Appends `mu` and predicts the new step from the whole prefix.
    ///
    /// Values outside the parameter domain are accepted and flagged;
    /// non-finite values are refused.
    pub fn step(&self, id: &str, mu: Vec<f64>) -> Result<StepResponse> {
        let handle = self.session(id)?;
        let mut session = handle.lock().unwrap();
        let l = self.loaded(&session.scenario)?;
        let s = &l.surrogate;
        if session.path.len() >= s.n_steps() {
            return Err(Error::StepOverflow(s.n_steps()));
        }
        let extrapolation_warning = match s.scenario.check_domain(&mu) {
            Ok(()) => false,
            Err(Error::OutOfDomain { value, .. }) if value.is_finite() => true,
            Err(e) => return Err(e),
        };
        session.path.push(mu.clone());
        let result = predict_last(s, &session.path);
        let (coeffs, fields) = match result {
            Ok(v) => v,
            Err(e) => {
                session.path.pop();
                return Err(e);
            }
        };
        let response = StepResponse {
            step_index: session.path.len() - 1,
            mu,
            fields: named(s, fields),
            coefficients: split_coefficients(s, &coeffs),
            extrapolation_warning,
        };
        session.steps.push(response.clone());
        Ok(response)
    }

    pub fn history(&self, id: &str) -> Result<SessionHistory> {
        let handle = self.session(id)?;
        let session = handle.lock().unwrap();
        let n_steps = self.loaded(&session.scenario)?.surrogate.n_steps();
        Ok(SessionHistory { id: id.to_string(), scenario: session.scenario.clone(), n_steps, steps: session.steps.clone() })
    }

    pub fn delete(&self, id: &str) -> Result<()> {
        self.sessions.write().unwrap().remove(id).map(|_| ()).ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn predict_last(s: &Surrogate, path: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let y = s.predict_coefficients(&[LoadPath::new(path.to_vec())])?;
    let nf = y.n_features;
    let k = y.n_steps - 1;
    let coeffs = y.data[k * nf..(k + 1) * nf].to_vec();
    let fields = s.reconstruct(&coeffs);
    Ok((coeffs, fields))
}

fn named(s: &Surrogate, fields: Vec<Vec<f64>>) -> HashMap<String, Vec<f64>> {
    s.registry().iter().map(FieldId::to_string).zip(fields).collect()
}

/// Composite coefficients split per field.
pub fn split_coefficients(s: &Surrogate, coeffs: &[f64]) -> HashMap<String, Vec<f64>> {
    let mut off = 0;
    s.fields
        .iter()
        .map(|f| {
            let v = coeffs[off..off + f.rank()].to_vec();
            off += f.rank();
            (f.field().to_string(), v)
        })
        .collect()
}
