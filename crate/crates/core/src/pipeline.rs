//! End-to-end stages: full-order data, reduction, surrogate training,
//! evaluation and inference.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::fem::{FieldHistory, FieldId, Simulation};
use crate::linalg::Matrix;
use crate::lstm::HeadSpec;
use crate::metrics::{self, EvalReport, FieldReport};
use crate::pod::{select_rank, PodBasis, DEFAULT_THRESHOLD_PCT};
use crate::scenario::{
    assemble_snapshots, canonical_test_paths, sample_load_paths, split_dataset, InputStats, LoadPath, OutputStats,
    Sequences, Split, TestCatalog,
};
use crate::training::{
    add_task, random_search, train_ensemble, Ensemble, HyperParams, SearchConfig, SearchOutcome, SearchSpace, TrainData,
    TransferMode,
};

/// Offset between the sampling seed and the split seed.
const SPLIT_SEED_OFFSET: u64 = 0x5151;

/// Load paths with their full-order responses.
#[derive(Clone, Debug, Default)]
pub struct FomRun {
    pub paths: Vec<LoadPath>,
    pub histories: Vec<FieldHistory>,
}

impl FomRun {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn inputs(&self) -> Result<Sequences> {
        Sequences::from_paths(&self.paths)
    }

    pub fn select(&self, indices: &[usize]) -> FomRun {
        FomRun {
            paths: indices.iter().map(|&i| self.paths[i].clone()).collect(),
            histories: indices.iter().map(|&i| self.histories[i].clone()).collect(),
        }
    }

    pub fn snapshots(&self, field: FieldId) -> Result<Matrix> {
        Ok(assemble_snapshots(&self.histories, field)?.matrix)
    }
}

/// Solves every path from the virgin state.
pub fn run_fom(sim: &Simulation, paths: Vec<LoadPath>) -> Result<FomRun> {
    let histories = paths
        .iter()
        .enumerate()
        .map(|(i, p)| sim.run_load_path(p).map_err(|e| Error::Config(format!("sample {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(FomRun { paths, histories })
}

/// Sampled training/validation data and the canonical test catalog.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub split: Split,
    pub samples: FomRun,
    pub catalog: TestCatalog,
    pub test: FomRun,
}

impl GeneratedData {
    pub fn train(&self) -> FomRun {
        self.samples.select(&self.split.train)
    }
}

pub fn generate(scenario: &ScenarioConfig, n_samples: usize, seed: u64) -> Result<GeneratedData> {
    let sim = Simulation::new(scenario)?;
    let split = split_dataset(n_samples, seed.wrapping_add(SPLIT_SEED_OFFSET))?;
    let samples = run_fom(&sim, sample_load_paths(scenario, n_samples, seed))?;
    let catalog = canonical_test_paths(scenario)?;
    let test = run_fom(&sim, catalog.iter().map(|c| c.path.clone()).collect())?;
    Ok(GeneratedData { scenario: scenario.clone(), seed, split, samples, catalog, test })
}

/// One field's basis and the training statistics evaluation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub basis: PodBasis,
    /// Largest absolute full-order training value.
    pub train_max: f64,
    /// Weighted-R² coefficient weights from the training coefficients.
    pub r2_weights: Vec<f64>,
}

impl FieldModel {
    pub fn field(&self) -> FieldId {
        self.basis.field
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

/// Reduced coefficients of one run, `samples × steps × n`.
pub fn project_run(basis: &PodBasis, run: &FomRun) -> Result<Sequences> {
    let s = assemble_snapshots(&run.histories, basis.field)?;
    let a = basis.project(&s.matrix)?;
    Sequences::from_coefficients(&a.coefficients, s.n_samples, s.n_steps)
}

/// Builds one field's basis from training snapshots.
pub fn reduce_field(train: &FomRun, field: FieldId, threshold_pct: f64) -> Result<FieldModel> {
    let s = assemble_snapshots(&train.histories, field)?;
    let basis = select_rank(&s.matrix, field, threshold_pct)?;
    let train_max = metrics::train_max(&s.matrix);
    let a = basis.project(&s.matrix)?;
    let coeffs = Sequences::from_coefficients(&a.coefficients, s.n_samples, s.n_steps)?;
    Ok(FieldModel { basis, train_max, r2_weights: metrics::r2_weights(&coeffs) })
}

pub fn reduce_fields(train: &FomRun, fields: &[FieldId], threshold_pct: f64) -> Result<Vec<FieldModel>> {
    fields.iter().map(|&f| reduce_field(train, f, threshold_pct)).collect()
}

/// Raw inputs and per-field coefficients of every sampled path.
#[derive(Clone, Debug)]
pub struct ReducedData {
    pub inputs: Sequences,
    pub coefficients: Vec<Sequences>,
    pub split: Split,
}

impl ReducedData {
    pub fn new(data: &GeneratedData, fields: &[FieldModel]) -> Result<Self> {
        let coefficients = fields.iter().map(|f| project_run(&f.basis, &data.samples)).collect::<Result<_>>()?;
        Ok(Self { inputs: data.samples.inputs()?, coefficients, split: data.split.clone() })
    }

    /// Restricts to a subset of samples, re-split 80/20 with `seed`.
    pub fn subset(&self, indices: &[usize], seed: u64) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select(indices),
            coefficients: self.coefficients.iter().map(|c| c.select(indices)).collect(),
            split: split_dataset(indices.len(), seed)?,
        })
    }

    pub fn composite(&self, which: &[usize]) -> Result<Sequences> {
        let parts: Vec<&Sequences> = which.iter().map(|&i| &self.coefficients[i]).collect();
        Sequences::concat_features(&parts)
    }
}

/// Normalized inputs, standardized targets and their statistics.
struct Prepared {
    x_train: Sequences,
    y_train: Sequences,
    x_val: Sequences,
    y_val: Sequences,
    input_stats: InputStats,
    output_stats: OutputStats,
}

impl Prepared {
    fn new(inputs: &Sequences, outputs: &Sequences, split: &Split, input_stats: Option<InputStats>) -> Result<Self> {
        let input_stats = match input_stats {
            Some(s) => s,
            None => InputStats::fit(&inputs.select(&split.train))?,
        };
        let output_stats = OutputStats::fit(&outputs.select(&split.train))?;
        Ok(Self {
            x_train: input_stats.normalize(&inputs.select(&split.train)),
            y_train: output_stats.standardize(&outputs.select(&split.train)),
            x_val: input_stats.normalize(&inputs.select(&split.val)),
            y_val: output_stats.standardize(&outputs.select(&split.val)),
            input_stats,
            output_stats,
        })
    }

    fn data(&self) -> TrainData<'_> {
        TrainData { x_train: &self.x_train, y_train: &self.y_train, x_val: &self.x_val, y_val: &self.y_val }
    }
}

/// Trained ensemble with everything needed to go from `μ` to full fields.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub scenario: ScenarioConfig,
    /// Registry order; matches the ensemble heads.
    pub fields: Vec<FieldModel>,
    pub input_stats: InputStats,
    pub output_stats: OutputStats,
    pub hyper: HyperParams,
    pub ensemble: Ensemble,
}

/// Full-order prediction of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub step: usize,
    /// Composite coefficients in registry order.
    pub coefficients: Vec<f64>,
    /// Nodal arrays in registry order.
    pub fields: Vec<Vec<f64>>,
}

impl Surrogate {
    /// Trains a multi-task ensemble on the fields at `which` (indices into
    /// `reduced.coefficients` and `fields`).
    pub fn train(
        scenario: &ScenarioConfig,
        fields: &[FieldModel],
        reduced: &ReducedData,
        which: &[usize],
        hyper: &HyperParams,
        seeds: &[u64],
    ) -> Result<Self> {
        let outputs = reduced.composite(which)?;
        let prep = Prepared::new(&reduced.inputs, &outputs, &reduced.split, None)?;
        let heads: Vec<HeadSpec> =
            which.iter().map(|&i| HeadSpec { field: fields[i].field(), size: fields[i].rank() }).collect();
        let arch = hyper.architecture(reduced.inputs.n_features, heads);
        let ensemble = train_ensemble(&arch, prep.data(), hyper, seeds)?;
        Ok(Self {
            scenario: scenario.clone(),
            fields: which.iter().map(|&i| fields[i].clone()).collect(),
            input_stats: prep.input_stats,
            output_stats: prep.output_stats,
            hyper: hyper.clone(),
            ensemble,
        })
    }

    pub fn registry(&self) -> Vec<FieldId> {
        self.fields.iter().map(FieldModel::field).collect()
    }

    pub fn n_steps(&self) -> usize {
        self.output_stats.n_steps
    }

    pub fn n_outputs(&self) -> usize {
        self.output_stats.n_features
    }

    fn field_offset(&self, index: usize) -> usize {
        self.fields[..index].iter().map(FieldModel::rank).sum()
    }

    /// Checks the registry, ranks, statistics and ensemble agree.
    pub fn validate(&self) -> Result<()> {
        let arch = self.ensemble.architecture();
        let heads: Vec<(FieldId, usize)> = arch.heads.iter().map(|h| (h.field, h.size)).collect();
        let fields: Vec<(FieldId, usize)> = self.fields.iter().map(|f| (f.field(), f.rank())).collect();
        if heads != fields {
            return Err(Error::RegistryMismatch(format!("heads {heads:?} vs bases {fields:?}")));
        }
        if self.output_stats.n_features != arch.output_size() || self.input_stats.min.len() != arch.input_size {
            return Err(Error::RegistryMismatch("normalization statistics do not match the network".into()));
        }
        Ok(())
    }

    fn normalized_inputs(&self, paths: &[LoadPath]) -> Result<Sequences> {
        let x = Sequences::from_paths(paths)?;
        if x.n_features != self.input_stats.min.len() {
            return Err(Error::Shape(format!("{} load parameters, expected {}", x.n_features, self.input_stats.min.len())));
        }
        if x.n_steps == 0 || x.n_steps > self.n_steps() {
            return Err(Error::Shape(format!("{} steps, model trained on {}", x.n_steps, self.n_steps())));
        }
        Ok(self.input_stats.normalize(&x))
    }

    /// De-standardized ensemble coefficients for equally long paths, which
    /// may be shorter than the training horizon.
    pub fn predict_coefficients(&self, paths: &[LoadPath]) -> Result<Sequences> {
        let x = self.normalized_inputs(paths)?;
        let mut y = self.ensemble.predict_standardized(&x.data, x.n_samples, x.n_steps)?;
        let (nt, nf) = (x.n_steps, self.n_outputs());
        for s in 0..x.n_samples {
            self.output_stats.destandardize_sample(&mut y[s * nt * nf..(s + 1) * nt * nf]);
        }
        Sequences::from_vec(x.n_samples, nt, nf, y)
    }

    /// Full-order fields of every step of one path.
    pub fn infer(&self, path: &LoadPath) -> Result<Vec<StepPrediction>> {
        let y = self.predict_coefficients(std::slice::from_ref(path))?;
        let nf = y.n_features;
        Ok((0..y.n_steps)
            .map(|k| {
                let coefficients = y.data[k * nf..(k + 1) * nf].to_vec();
                let fields = self.reconstruct(&coefficients);
                StepPrediction { step: k, coefficients, fields }
            })
            .collect())
    }

    /// Nodal arrays, in registry order, from one step's composite coefficients.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<Vec<f64>> {
        self.fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let off = self.field_offset(i);
                let mut out = vec![0.0; f.basis.n_dofs()];
                f.basis.reconstruct_into(&coefficients[off..off + f.rank()], &mut out);
                out
            })
            .collect()
    }

    /// MAE%, weighted R² and compound error on full-order reference runs.
    pub fn evaluate(&self, test: &FomRun) -> Result<EvalReport> {
        let pred = self.predict_coefficients(&test.paths)?;
        let mut fields = Vec::with_capacity(self.fields.len());
        for (i, f) in self.fields.iter().enumerate() {
            let off = self.field_offset(i);
            let pa = pred.slice_features(off..off + f.rank());
            let truth = test.snapshots(f.field())?;
            let recon = f.basis.reconstruct(&pa.to_coefficients())?;
            let true_coeffs = project_run(&f.basis, test)?;
            fields.push(FieldReport {
                field: f.field(),
                mae: metrics::mae_percent(&recon, &truth, f.train_max)?,
                r2: metrics::weighted_r2(&pa, &true_coeffs, &f.r2_weights)?,
                compound: metrics::compound_error_curve(&recon, &truth, f.train_max, pred.n_steps)?,
            });
        }
        Ok(EvalReport { fields, timing: None })
    }

    /// Median seconds for a full-horizon inference plus reconstruction.
    pub fn time_inference(&self, path: &LoadPath, repetitions: usize) -> Result<metrics::Timing> {
        self.infer(path)?;
        Ok(metrics::timing_benchmark(repetitions, || {
            std::hint::black_box(self.infer(path).expect("validated above"));
        }))
    }

    /// Adds a field through [`add_task`] on every ensemble member.
    ///
    /// Existing statistics are kept; the new field's are fitted on
    /// `split.train`. Joint mode also needs the existing fields' composite
    /// coefficients for the same samples.
    #[allow(clippy::too_many_arguments)]
    pub fn add_field(
        &self,
        field: FieldModel,
        inputs: &Sequences,
        coefficients: &Sequences,
        existing: Option<&Sequences>,
        split: &Split,
        mode: TransferMode,
        hyper: &HyperParams,
    ) -> Result<Surrogate> {
        if self.registry().contains(&field.field()) {
            return Err(Error::FieldCollision(field.field().to_string()));
        }
        let new_stats = OutputStats::fit(&coefficients.select(&split.train))?;
        let output_stats = concat_stats(&self.output_stats, &new_stats)?;
        let targets = match mode {
            TransferMode::Frozen => new_stats.standardize(coefficients),
            TransferMode::Joint => {
                let old = existing.ok_or_else(|| Error::Config("joint transfer needs the existing targets".into()))?;
                output_stats.standardize(&Sequences::concat_features(&[old, coefficients])?)
            }
        };
        let x_train = self.input_stats.normalize(&inputs.select(&split.train));
        let x_val = self.input_stats.normalize(&inputs.select(&split.val));
        let (y_train, y_val) = (targets.select(&split.train), targets.select(&split.val));
        let data = TrainData { x_train: &x_train, y_train: &y_train, x_val: &x_val, y_val: &y_val };
        let head = HeadSpec { field: field.field(), size: field.rank() };
        let mut members = Vec::with_capacity(self.ensemble.len());
        let mut histories = Vec::with_capacity(self.ensemble.len());
        for (m, &seed) in self.ensemble.members.iter().zip(&self.ensemble.seeds) {
            let (ext, h) = add_task(m, head, mode, data, hyper, seed)?;
            members.push(ext);
            histories.push(h);
        }
        let mut ensemble = Ensemble::new(members, self.ensemble.seeds.clone())?;
        ensemble.histories = histories;
        let mut fields = self.fields.clone();
        fields.push(field);
        Ok(Surrogate {
            scenario: self.scenario.clone(),
            fields,
            input_stats: self.input_stats.clone(),
            output_stats,
            hyper: self.hyper.clone(),
            ensemble,
        })
    }

    /// Single-field surrogate sharing this one's trunk and the field's head.
    pub fn restrict(&self, field: FieldId) -> Result<Surrogate> {
        let i = self.registry().iter().position(|&f| f == field).ok_or_else(|| Error::UnknownField(field.to_string()))?;
        let off = self.field_offset(i);
        let rank = self.fields[i].rank();
        let members = self
            .ensemble
            .members
            .iter()
            .map(|m| {
                let mut arch = m.architecture().clone();
                arch.heads = vec![HeadSpec { field, size: rank }];
                let mut theta = m.params()[..m.trunk_len()].to_vec();
                theta.extend_from_slice(m.head_parameters(field).expect("registry checked"));
                crate::lstm::Model::from_params(arch, theta)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Surrogate {
            scenario: self.scenario.clone(),
            fields: vec![self.fields[i].clone()],
            input_stats: self.input_stats.clone(),
            output_stats: self.output_stats.slice_features(off..off + rank),
            hyper: self.hyper.clone(),
            ensemble: Ensemble::new(members, self.ensemble.seeds.clone())?,
        })
    }
}

/// Feature-wise concatenation of per-step statistics.
pub fn concat_stats(a: &OutputStats, b: &OutputStats) -> Result<OutputStats> {
    if a.n_steps != b.n_steps {
        return Err(Error::Shape("statistics over different horizons".into()));
    }
    let nf = a.n_features + b.n_features;
    let mut mean = Vec::with_capacity(a.n_steps * nf);
    let mut std = Vec::with_capacity(a.n_steps * nf);
    for k in 0..a.n_steps {
        let (ra, rb) = (k * a.n_features..(k + 1) * a.n_features, k * b.n_features..(k + 1) * b.n_features);
        mean.extend_from_slice(&a.mean[ra.clone()]);
        mean.extend_from_slice(&b.mean[rb.clone()]);
        std.extend_from_slice(&a.std[ra]);
        std.extend_from_slice(&b.std[rb]);
    }
    Ok(OutputStats { n_steps: a.n_steps, n_features: nf, mean, std })
}

/// Random search over `space` on the same normalized data `Surrogate::train`
/// would see.
pub fn search_hyperparameters(
    fields: &[FieldModel],
    reduced: &ReducedData,
    which: &[usize],
    space: &SearchSpace,
    config: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    let outputs = reduced.composite(which)?;
    let prep = Prepared::new(&reduced.inputs, &outputs, &reduced.split, None)?;
    let heads: Vec<HeadSpec> =
        which.iter().map(|&i| HeadSpec { field: fields[i].field(), size: fields[i].rank() }).collect();
    random_search(space, config, &heads, prep.data(), seed)
}

/// Single-task ensembles, one per field, with the same hyperparameters and
/// seeds as the multi-task run.
pub fn train_single_task(
    scenario: &ScenarioConfig,
    fields: &[FieldModel],
    reduced: &ReducedData,
    hyper: &HyperParams,
    seeds: &[u64],
) -> Result<Vec<Surrogate>> {
    (0..fields.len()).map(|i| Surrogate::train(scenario, fields, reduced, &[i], hyper, seeds)).collect()
}

/// Stage configuration shared by the CLI and the acceptance suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub pod_threshold_pct: f64,
    pub hyper: HyperParams,
    #[serde(default = "default_seeds")]
    pub ensemble_seeds: Vec<u64>,
    #[serde(default = "default_fields")]
    pub fields: Vec<FieldId>,
}

fn default_samples() -> usize {
    300
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_PCT
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_fields() -> Vec<FieldId> {
    FieldId::PRIMARY.to_vec()
}

impl PipelineConfig {
    /// Published settings for a named scenario.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self {
            scenario: ScenarioConfig::preset(name)?,
            n_samples: default_samples(),
            seed: 0,
            pod_threshold_pct: DEFAULT_THRESHOLD_PCT,
            hyper: HyperParams::preset(name)?,
            ensemble_seeds: default_seeds(),
            fields: default_fields(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.hyper.validate()?;
        if self.n_samples < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {}", self.n_samples)));
        }
        if !(self.pod_threshold_pct > 0.0) {
            return Err(Error::Config("POD threshold must be positive".into()));
        }
        if self.ensemble_seeds.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut seen = self.ensemble_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.ensemble_seeds.len() {
            return Err(Error::Config("ensemble seeds must be distinct".into()));
        }
        if self.fields.is_empty() {
            return Err(Error::Config("no fields selected".into()));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].contains(f) {
                return Err(Error::FieldCollision(f.to_string()));
            }
        }
        Ok(())
    }
}

/// Every artifact of one in-memory pipeline run.
pub struct PipelineRun {
    pub data: GeneratedData,
    pub fields: Vec<FieldModel>,
    pub reduced: ReducedData,
    pub surrogate: Surrogate,
    pub report: EvalReport,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    let data = generate(&config.scenario, config.n_samples, config.seed)?;
    let fields = reduce_fields(&data.train(), &config.fields, config.pod_threshold_pct)?;
    let reduced = ReducedData::new(&data, &fields)?;
    let all: Vec<usize> = (0..fields.len()).collect();
    let surrogate = Surrogate::train(&config.scenario, &fields, &reduced, &all, &config.hyper, &config.ensemble_seeds)?;
    let report = surrogate.evaluate(&data.test)?;
    Ok(PipelineRun { data, fields, reduced, surrogate, report })
}
