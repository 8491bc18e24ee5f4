//! One function per pipeline stage. Each reads its inputs from the run
//! directory, writes its artifacts next to them and returns a summary line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use psro_core::io::{self, DatasetManifest};
use psro_core::metrics::{self, EvalReport};
use psro_core::pipeline::{generate, reduce_fields, search_hyperparameters, ReducedData, Surrogate};
use psro_core::scenario::{LoadPath, TestCase};
use psro_core::session::split_coefficients;
use psro_core::training::SearchSpace;
use psro_core::{Error, Result};

use crate::config::RunConfig;

pub fn generate_stage(cfg: &RunConfig) -> Result<String> {
    let p = &cfg.pipeline;
    let data = generate(&p.scenario, p.n_samples, p.seed)?;
    let dir = cfg.dataset_dir();
    io::save_dataset(&dir, &data)?;
    Ok(json!({
        "stage": "generate",
        "scenario": p.scenario.name,
        "samples": data.samples.len(),
        "train": data.split.train.len(),
        "val": data.split.val.len(),
        "test_cases": data.catalog.len(),
        "dir": dir,
    })
    .to_string())
}

fn check_scenario(cfg: &RunConfig, found: &psro_core::ScenarioConfig, what: &Path) -> Result<()> {
    if *found != cfg.pipeline.scenario {
        return Err(Error::Config(format!(
            "{} was produced for scenario {:?}, configuration asks for {:?}",
            what.display(),
            found.name,
            cfg.pipeline.scenario.name
        )));
    }
    Ok(())
}

pub fn reduce_stage(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.dataset_dir();
    let data = io::load_dataset(&dir)?;
    check_scenario(cfg, &data.scenario, &dir)?;
    let fields = reduce_fields(&data.train(), &cfg.pipeline.fields, cfg.pipeline.pod_threshold_pct)?;
    let reduced = ReducedData::new(&data, &fields)?;
    let out = cfg.reduced_dir();
    io::save_reduced(&out, &fields, &reduced)?;
    let ranks: BTreeMap<String, usize> = fields.iter().map(|f| (f.field().to_string(), f.rank())).collect();
    let rmse: BTreeMap<String, f64> = fields.iter().map(|f| (f.field().to_string(), f.basis.rmse_pct)).collect();
    Ok(json!({
        "stage": "reduce",
        "ranks": ranks,
        "total": fields.iter().map(|f| f.rank()).sum::<usize>(),
        "rmse_pct": rmse,
        "dir": out,
    })
    .to_string())
}

pub fn train_stage(cfg: &RunConfig) -> Result<String> {
    let manifest: DatasetManifest = io::read_json(&cfg.dataset_dir().join(io::DATASET_MANIFEST))?;
    check_scenario(cfg, &manifest.scenario, &cfg.dataset_dir())?;
    let (fields, reduced) = io::load_reduced(&cfg.reduced_dir())?;
    let all: Vec<usize> = (0..fields.len()).collect();
    let out = cfg.checkpoint_dir();
    fs::create_dir_all(&out)?;
    let mut hyper = cfg.pipeline.hyper.clone();
    let mut searched = None;
    if let Some(search) = &cfg.search {
        let n_outputs = fields.iter().map(|f| f.rank()).sum();
        let outcome =
            search_hyperparameters(&fields, &reduced, &all, &SearchSpace::paper(n_outputs), search, cfg.pipeline.seed)?;
        fs::write(out.join("search.csv"), outcome.to_csv())?;
        hyper = psro_core::training::HyperParams { epochs: hyper.epochs, patience: hyper.patience, ..outcome.best };
        searched = Some(outcome.best_objective);
    }
    let surrogate = Surrogate::train(&manifest.scenario, &fields, &reduced, &all, &hyper, &cfg.pipeline.ensemble_seeds)?;
    io::save_surrogate(&out, &surrogate)?;
    for (k, h) in surrogate.ensemble.histories.iter().enumerate() {
        fs::write(out.join(format!("history_{k}.csv")), h.to_csv())?;
    }
    let best: Vec<f64> = surrogate.ensemble.histories.iter().map(|h| h.best_val_rmse).collect();
    Ok(json!({
        "stage": "train",
        "members": surrogate.ensemble.len(),
        "parameters_per_member": surrogate.ensemble.members[0].n_params(),
        "best_val_rmse": best,
        "search_objective": searched,
        "hyper": hyper,
        "dir": out,
    })
    .to_string())
}

/// Where `eval` gets its numbers from.
pub enum EvalSource {
    /// Checkpoint against the dataset's test catalog.
    Checkpoint,
    /// Two snapshot blobs compared directly.
    Blobs { pred: PathBuf, truth: PathBuf, train_max: Option<f64> },
}

pub fn eval_stage(cfg: &RunConfig, source: EvalSource, repetitions: usize) -> Result<String> {
    match source {
        EvalSource::Blobs { pred, truth, train_max } => {
            let (p, t) = (io::read_matrix(&pred)?, io::read_matrix(&truth)?);
            let tm = train_max.unwrap_or_else(|| metrics::train_max(&t));
            let mae = metrics::mae_percent(&p, &t, tm)?;
            Ok(json!({"stage": "eval", "mae": mae, "train_max": tm}).to_string())
        }
        EvalSource::Checkpoint => {
            let surrogate = io::load_surrogate(&cfg.checkpoint_dir())?;
            let data = io::load_dataset(&cfg.dataset_dir())?;
            check_scenario(cfg, &data.scenario, &cfg.dataset_dir())?;
            let mut report: EvalReport = surrogate.evaluate(&data.test)?;
            let ramp = &data.catalog[0].path;
            report.timing = Some(surrogate.time_inference(ramp, repetitions)?);
            let path = cfg.out.join("eval.json");
            io::write_json(&path, &report)?;
            fs::write(cfg.out.join("eval.txt"), report.render())?;
            let mae: BTreeMap<String, f64> = report.fields.iter().map(|f| (f.field.to_string(), f.mae.mean)).collect();
            let r2: BTreeMap<String, f64> = report.fields.iter().map(|f| (f.field.to_string(), f.r2.value)).collect();
            Ok(json!({
                "stage": "eval",
                "mae_mean_pct": mae,
                "r2w": r2,
                "inference_s": report.timing.as_ref().map(|t| t.median_s),
                "report": path,
            })
            .to_string())
        }
    }
}

/// How `infer` receives its load path.
pub enum PathSource {
    Case(String),
    File(PathBuf),
    Inline(String),
}

/// Parses `"f1,x1;f2,x2;..."`.
pub fn parse_inline(s: &str) -> Result<LoadPath> {
    let steps = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad load value {v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadPath::new(steps))
}

fn resolve_path(surrogate: &Surrogate, source: PathSource) -> Result<LoadPath> {
    match source {
        PathSource::Case(key) => {
            let case = TestCase::from_key(&key).ok_or_else(|| Error::Config(format!("unknown catalog case {key:?}")))?;
            let catalog = psro_core::scenario::canonical_test_paths(&surrogate.scenario)?;
            Ok(catalog.into_iter().find(|c| c.case == case).expect("catalog holds every case").path)
        }
        PathSource::File(p) => {
            let v: serde_json::Value = io::read_json(&p)?;
            let steps = v.get("steps").cloned().unwrap_or(v);
            Ok(LoadPath::new(serde_json::from_value(steps).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?))
        }
        PathSource::Inline(s) => parse_inline(&s),
    }
}

#[derive(Serialize)]
struct InferStep {
    step: usize,
    mu: Vec<f64>,
    fields: BTreeMap<String, Vec<f64>>,
    coefficients: BTreeMap<String, Vec<f64>>,
}

pub fn infer_stage(cfg: &RunConfig, source: PathSource, allow_extrapolation: bool) -> Result<String> {
    let surrogate = io::load_surrogate(&cfg.checkpoint_dir())?;
    let path = resolve_path(&surrogate, source)?;
    for mu in &path.steps {
        match surrogate.scenario.check_domain(mu) {
            Err(Error::OutOfDomain { value, .. }) if allow_extrapolation && value.is_finite() => {}
            r => r?,
        }
    }
    let steps = surrogate.infer(&path)?;
    let registry = surrogate.registry();
    let out: Vec<InferStep> = steps
        .into_iter()
        .zip(&path.steps)
        .map(|(s, mu)| InferStep {
            step: s.step,
            mu: mu.clone(),
            fields: registry.iter().map(|f| f.to_string()).zip(s.fields).collect(),
            coefficients: split_coefficients(&surrogate, &s.coefficients).into_iter().collect(),
        })
        .collect();
    fs::create_dir_all(&cfg.out)?;
    let file = cfg.out.join("infer.json");
    io::write_json(&file, &out)?;
    let peak: BTreeMap<String, f64> = registry
        .iter()
        .map(|f| {
            let m = out.iter().flat_map(|s| s.fields[&f.to_string()].iter()).fold(0.0f64, |a, v| a.max(v.abs()));
            (f.to_string(), m)
        })
        .collect();
    Ok(json!({"stage": "infer", "steps": out.len(), "peak_abs": peak, "file": file}).to_string())
}
