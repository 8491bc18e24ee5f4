//! Fixtures shared by the benchmarks: untrained surrogates with the shapes of
//! the published scenarios, so timings do not depend on a training run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psro_core::fem::{build_mesh, FieldId};
use psro_core::lstm::{Architecture, HeadSpec, Model};
use psro_core::pipeline::{FieldModel, Surrogate};
use psro_core::pod::PodBasis;
use psro_core::scenario::{InputStats, OutputStats};
use psro_core::training::{Ensemble, HyperParams};
use psro_core::{Matrix, ScenarioConfig};

/// Random (non-orthonormal) bases of the given ranks on the scenario mesh and
/// a randomly initialised ensemble.
pub fn synthetic_surrogate(scenario: &ScenarioConfig, ranks: &[usize], hyper: &HyperParams, members: usize) -> Surrogate {
    let mesh = build_mesh(scenario).expect("preset mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let fields: Vec<FieldModel> = FieldId::PRIMARY
        .iter()
        .zip(ranks)
        .map(|(&field, &rank)| {
            let rows = field.components() * mesh.n_nodes();
            FieldModel {
                basis: PodBasis {
                    field,
                    modes: Matrix::from_fn(rows, rank, |_, _| rng.gen_range(-0.1..0.1)),
                    mean: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    singular_values: vec![1.0; rank],
                    threshold_pct: 1.0,
                    rmse_pct: 0.0,
                },
                train_max: 1.0,
                r2_weights: vec![1.0 / rank as f64; rank],
            }
        })
        .collect();
    let heads: Vec<HeadSpec> = fields.iter().map(|f| HeadSpec { field: f.field(), size: f.rank() }).collect();
    let arch: Architecture = hyper.architecture(scenario.n_params(), heads);
    let n_out = arch.output_size();
    let seeds: Vec<u64> = (1..=members as u64).collect();
    let models = seeds.iter().map(|&s| Model::new(arch.clone(), s).expect("valid architecture")).collect();
    let nt = scenario.load_steps;
    Surrogate {
        scenario: scenario.clone(),
        fields,
        input_stats: InputStats {
            min: scenario.bounds.iter().map(|r| r.lo).collect(),
            max: scenario.bounds.iter().map(|r| r.hi).collect(),
        },
        output_stats: OutputStats { n_steps: nt, n_features: n_out, mean: vec![0.0; nt * n_out], std: vec![1.0; nt * n_out] },
        hyper: hyper.clone(),
        ensemble: Ensemble::new(models, seeds).expect("non-empty ensemble"),
    }
}

/// Table 5 ranks.
pub const TABLE_RANKS: [usize; 4] = [1, 8, 4, 3];
/// Table 9 ranks.
pub const BEAM_RANKS: [usize; 4] = [2, 19, 7, 4];
