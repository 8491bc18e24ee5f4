//! Load paths, the canonical test catalog and dataset preparation.

mod data;

pub use data::{
    assemble_snapshots, split_dataset, Dataset, InputStats, OutputStats, Sequences, SnapshotMatrix, Split,
    STD_FLOOR,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Loading, ScenarioConfig};
use crate::error::Result;

/// Per-step load parameters `μ` over a load history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadPath {
    pub steps: Vec<Vec<f64>>,
}

impl LoadPath {
    pub fn new(steps: Vec<Vec<f64>>) -> Self {
        Self { steps }
    }

    pub fn zeros(n_steps: usize, n_params: usize) -> Self {
        Self { steps: vec![vec![0.0; n_params]; n_steps] }
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// True when every step lies inside the scenario's parameter domain.
    pub fn within(&self, scenario: &ScenarioConfig) -> bool {
        self.steps.iter().all(|mu| scenario.check_domain(mu).is_ok())
    }
}

/// Draws every parameter of every step i.i.d. uniform over `𝒫`.
pub fn sample_load_paths(scenario: &ScenarioConfig, count: usize, seed: u64) -> Vec<LoadPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let steps = (0..scenario.load_steps)
                .map(|_| scenario.bounds.iter().map(|r| rng.gen_range(r.lo..=r.hi)).collect())
                .collect();
            LoadPath { steps }
        })
        .collect()
}

/// The five canonical loading cases, in catalog order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCase {
    RampUp,
    BidirectionalCyclic,
    UnidirectionalCyclic,
    ConstantLoad,
    ImpulseLoad,
}

impl TestCase {
    pub const ALL: [TestCase; 5] = [
        TestCase::RampUp,
        TestCase::BidirectionalCyclic,
        TestCase::UnidirectionalCyclic,
        TestCase::ConstantLoad,
        TestCase::ImpulseLoad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestCase::RampUp => "Ramp Up",
            TestCase::BidirectionalCyclic => "Bidirectional Cyclic Loading",
            TestCase::UnidirectionalCyclic => "Unidirectional Cyclic Loading",
            TestCase::ConstantLoad => "Constant Load",
            TestCase::ImpulseLoad => "Impulse Load",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            TestCase::RampUp => "ramp_up",
            TestCase::BidirectionalCyclic => "bidirectional_cyclic",
            TestCase::UnidirectionalCyclic => "unidirectional_cyclic",
            TestCase::ConstantLoad => "constant_load",
            TestCase::ImpulseLoad => "impulse_load",
        }
    }

    pub fn from_key(key: &str) -> Option<TestCase> {
        TestCase::ALL.into_iter().find(|c| c.key() == key)
    }

    /// Normalised force at step `k` (1-based) of `n_steps`.
    fn shape(self, k: usize, n_steps: usize) -> f64 {
        // triangle wave with a period of eight steps: ½, 1, ½, 0, −½, −1, −½, 0, …
        const TRIANGLE: [f64; 8] = [0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -0.5, 0.0];
        match self {
            TestCase::RampUp => k as f64 / n_steps as f64,
            TestCase::BidirectionalCyclic => TRIANGLE[(k - 1) % 8],
            TestCase::UnidirectionalCyclic => TRIANGLE[(k - 1) % 8].abs(),
            TestCase::ConstantLoad => 1.0,
            TestCase::ImpulseLoad => {
                if k == IMPULSE_STEP.min(n_steps) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// 1-based step carrying the impulse.
const IMPULSE_STEP: usize = 3;

/// One named load path of the test catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub case: TestCase,
    pub name: String,
    pub path: LoadPath,
}

pub type TestCatalog = Vec<CatalogEntry>;

/// Builds the five canonical paths scaled to the scenario.
///
/// The force parameter peaks at `catalog_peak` (default: the upper bound of
/// `𝒫`). With a point-force loading the position stays at the middle of its
/// range, except for the constant-load case where it moves linearly from the
/// middle to the upper bound.
pub fn canonical_test_paths(scenario: &ScenarioConfig) -> Result<TestCatalog> {
    scenario.validate()?;
    let n = scenario.load_steps;
    let peak = scenario.catalog_peak.unwrap_or(scenario.bounds[0].hi);
    Ok(TestCase::ALL
        .into_iter()
        .map(|case| {
            let steps = (1..=n)
                .map(|k| {
                    let force = peak * case.shape(k, n);
                    match scenario.loading {
                        Loading::TopShear => vec![force],
                        Loading::TopPointForce => {
                            let r = scenario.bounds[1];
                            let x = if case == TestCase::ConstantLoad && n > 1 {
                                r.mid() + (r.hi - r.mid()) * (k - 1) as f64 / (n - 1) as f64
                            } else {
                                r.mid()
                            };
                            vec![force, x]
                        }
                    }
                })
                .collect();
            CatalogEntry { case, name: case.name().to_string(), path: LoadPath { steps } }
        })
        .collect())
}
