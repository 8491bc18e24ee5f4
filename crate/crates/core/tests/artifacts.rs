use psro_core::fem::FieldId;
use psro_core::io;
use psro_core::pipeline::{run_pipeline, PipelineConfig, PipelineRun, ReducedData};
use psro_core::scenario::LoadPath;
use psro_core::session::SessionManager;
use psro_core::training::HyperParams;
use psro_core::{Error, ScenarioConfig};

fn tiny() -> PipelineConfig {
    PipelineConfig {
        scenario: ScenarioConfig::rectangle(20.0, 4.0, 10, 2),
        n_samples: 10,
        seed: 7,
        pod_threshold_pct: 1.0,
        hyper: HyperParams {
            batch_size: 4,
            hidden_size: 8,
            learning_rate: 1e-2,
            lstm_layers: 2,
            weight_decay: 1e-4,
            epochs: 4,
            patience: None,
        },
        ensemble_seeds: vec![11, 12],
        fields: vec![FieldId::Displacement, FieldId::VonMises],
    }
}

fn run() -> PipelineRun {
    run_pipeline(&tiny()).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn dataset_round_trips_bitwise() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    io::save_dataset(dir.path(), &r.data).unwrap();
    let back = io::load_dataset(dir.path()).unwrap();
    assert_eq!(back.samples.paths, r.data.samples.paths);
    assert_eq!(back.samples.histories, r.data.samples.histories);
    assert_eq!(back.test.histories, r.data.test.histories);
    assert_eq!(back.split, r.data.split);
    assert_eq!(back.catalog, r.data.catalog);
}

#[test]
fn reduction_round_trips_and_reprojects_identically() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    io::save_reduced(dir.path(), &r.fields, &r.reduced).unwrap();
    let (fields, reduced) = io::load_reduced(dir.path()).unwrap();
    assert_eq!(fields, r.fields);
    assert_eq!(reduced.inputs, r.reduced.inputs);
    let again = ReducedData::new(&r.data, &fields).unwrap();
    for (a, b) in again.coefficients.iter().zip(&r.reduced.coefficients) {
        assert_eq!(bits(&a.data), bits(&b.data));
    }
    for f in &fields {
        assert!(f.basis.rmse_pct < f.basis.threshold_pct || f.rank() == f.basis.singular_values.len());
    }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    io::save_surrogate(dir.path(), &r.surrogate).unwrap();
    let back = io::load_surrogate(dir.path()).unwrap();
    assert_eq!(back.registry(), r.surrogate.registry());
    for (a, b) in back.ensemble.members.iter().zip(&r.surrogate.ensemble.members) {
        assert_eq!(bits(a.params()), bits(b.params()));
    }
    assert_eq!(back.ensemble.histories, r.surrogate.ensemble.histories);
    let path = &r.data.catalog[1].path;
    assert_eq!(back.infer(path).unwrap(), r.surrogate.infer(path).unwrap());
}

#[test]
fn missing_checkpoint_is_a_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(io::load_surrogate(dir.path()), Err(Error::MissingInput(_))));
}

#[test]
fn pipeline_is_bit_reproducible() {
    let (a, b) = (run(), run());
    assert_eq!(a.data.samples.histories, b.data.samples.histories);
    assert_eq!(a.fields, b.fields);
    for (x, y) in a.surrogate.ensemble.members.iter().zip(&b.surrogate.ensemble.members) {
        assert_eq!(bits(x.params()), bits(y.params()));
    }
    assert_eq!(a.report, b.report);
}

#[test]
fn stepwise_session_matches_batch_inference() {
    let r = run();
    let mgr = SessionManager::new(vec![r.surrogate.clone()]).unwrap();
    let info = mgr.create("custom").unwrap();
    assert_eq!(info.n_steps, 10);
    assert_eq!(info.fields.len(), 2);
    let path = &r.data.catalog[0].path;
    let batch = r.surrogate.infer(path).unwrap();
    for (k, mu) in path.steps.iter().enumerate() {
        let resp = mgr.step(&info.id, mu.clone()).unwrap();
        assert_eq!(resp.step_index, k);
        assert!(!resp.extrapolation_warning);
        for (i, f) in r.surrogate.registry().iter().enumerate() {
            assert_eq!(bits(&resp.fields[f.as_str()]), bits(&batch[k].fields[i]));
        }
    }
    assert!(matches!(mgr.step(&info.id, vec![0.0, 1.0]), Err(Error::StepOverflow(10))));
    assert_eq!(mgr.history(&info.id).unwrap().steps.len(), 10);
}

#[test]
fn out_of_range_steps_are_flagged_not_refused() {
    let r = run();
    let mgr = SessionManager::new(vec![r.surrogate]).unwrap();
    let id = mgr.create("custom").unwrap().id;
    let resp = mgr.step(&id, vec![5.0, 10.0]).unwrap();
    assert!(resp.extrapolation_warning);
    assert!(mgr.step(&id, vec![f64::NAN, 1.0]).is_err());
    assert!(matches!(mgr.step(&id, vec![0.0]), Err(Error::Shape(_))));
    assert_eq!(mgr.history(&id).unwrap().steps.len(), 1);
}

#[test]
fn sessions_are_independent_and_deletable() {
    let r = run();
    let mgr = SessionManager::new(vec![r.surrogate.clone()]).unwrap();
    let a = mgr.create("custom").unwrap().id;
    let b = mgr.create("custom").unwrap().id;
    assert_ne!(a, b);
    mgr.step(&a, vec![0.5, 3.0]).unwrap();
    let rb = mgr.step(&b, vec![-0.5, 3.0]).unwrap();
    assert_eq!(rb.step_index, 0);
    mgr.delete(&a).unwrap();
    assert!(matches!(mgr.step(&a, vec![0.0, 1.0]), Err(Error::UnknownSession(_))));
    assert!(matches!(mgr.delete(&a), Err(Error::UnknownSession(_))));
    assert!(mgr.create("table").is_err());
    let zero = r.surrogate.infer(&LoadPath::zeros(1, 2)).unwrap();
    let id = mgr.create("custom").unwrap().id;
    let first = mgr.step(&id, vec![0.0, 0.0]).unwrap();
    assert_eq!(bits(&first.fields["u"]), bits(&zero[0].fields[0]));
}
