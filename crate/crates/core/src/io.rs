//! On-disk artifacts: the PSRO array blob, JSON sidecars and the stage
//! directories written by `generate`, `reduce` and `train`.
//!
//! Blob layout: `b"PSRO"`, format version (u32 LE), rank (u32 LE), four zero
//! bytes keeping the dims 8-byte aligned, one u64 LE per dimension, then the
//! values as f64 LE in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::fem::{FieldHistory, FieldId, NodalFields};
use crate::linalg::Matrix;
use crate::lstm::{Architecture, Model};
use crate::pipeline::{FieldModel, FomRun, GeneratedData, ReducedData, Surrogate};
use crate::pod::PodBasis;
use crate::scenario::{InputStats, LoadPath, OutputStats, Sequences, Split, TestCatalog};
use crate::training::{Ensemble, HyperParams, TrainHistory};

pub const MAGIC: [u8; 4] = *b"PSRO";
pub const FORMAT_VERSION: u32 = 1;

/// An n-dimensional array as stored in a blob.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Blob {
    pub fn header_len(rank: usize) -> usize {
        16 + 8 * rank
    }

    pub fn encoded_len(dims: &[usize]) -> usize {
        Self::header_len(dims.len()) + 8 * dims.iter().product::<usize>()
    }
}

pub fn encode_blob(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(Error::Shape(format!("{} values for dims {dims:?}", data.len())));
    }
    let mut out = Vec::with_capacity(Blob::encoded_len(dims));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize, expected: usize) -> Result<&'a [u8]> {
    let end = *at + len;
    if end > bytes.len() {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn decode_blob(bytes: &[u8]) -> Result<Blob> {
    let mut at = 0;
    let magic = take(bytes, &mut at, 4, 16)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, 16)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let rank = u32::from_le_bytes(take(bytes, &mut at, 4, 16)?.try_into().unwrap()) as usize;
    let header = Blob::header_len(rank);
    if take(bytes, &mut at, 4, header)? != [0; 4] {
        return Err(Error::Format("nonzero reserved header bytes".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(bytes, &mut at, 8, header)?.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    let expected = header + n;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let data = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Blob { dims, data })
}

pub fn write_blob(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_blob(dims, data)?;
    // write-then-rename so a crash never leaves a half-written blob behind
    let tmp = path.with_extension("psro.partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_blob(path: &Path) -> Result<Blob> {
    decode_blob(&read_input(path)?)
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| missing(path, e))
}

fn missing(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingInput(path.display().to_string())
    } else {
        Error::Io(e)
    }
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_blob(path, &[m.rows(), m.cols()], m.as_slice())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let b = read_blob(path)?;
    match b.dims[..] {
        [r, c] => Matrix::from_vec(r, c, b.data),
        _ => Err(Error::Format(format!("{}: rank {} blob, expected a matrix", path.display(), b.dims.len()))),
    }
}

pub fn write_sequences(path: &Path, s: &Sequences) -> Result<()> {
    write_blob(path, &[s.n_samples, s.n_steps, s.n_features], &s.data)
}

pub fn read_sequences(path: &Path) -> Result<Sequences> {
    let b = read_blob(path)?;
    match b.dims[..] {
        [s, t, f] => Sequences::from_vec(s, t, f, b.data),
        _ => Err(Error::Format(format!("{}: rank {} blob, expected sequences", path.display(), b.dims.len()))),
    }
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_blob(path, &[v.len()], v)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let b = read_blob(path)?;
    if b.dims.len() != 1 {
        return Err(Error::Format(format!("{}: rank {} blob, expected a vector", path.display(), b.dims.len())));
    }
    Ok(b.data)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_input(path)?)?)
}

/// `name.psro` → `name.psro.json`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// What a snapshot blob holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub field: FieldId,
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_nodes: usize,
    /// Column `s·n_steps + k` holds step `k` of sample `s`.
    pub layout: String,
}

/// Dataset directory: `dataset.json` plus one snapshot blob per field for the
/// sampled paths and for the catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub n_nodes: usize,
    pub n_steps: usize,
    pub split: Split,
    pub paths: Vec<LoadPath>,
    pub catalog: TestCatalog,
    pub fields: Vec<FieldId>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

fn snapshot_file(prefix: &str, field: FieldId) -> String {
    format!("{prefix}_{field}.psro")
}

fn write_run(dir: &Path, prefix: &str, run: &FomRun, n_nodes: usize, n_steps: usize) -> Result<()> {
    for field in FieldId::ALL {
        let path = dir.join(snapshot_file(prefix, field));
        write_matrix(&path, &run.snapshots(field)?)?;
        let meta = SnapshotSidecar {
            field,
            n_samples: run.len(),
            n_steps,
            n_nodes,
            layout: "sample-major columns".into(),
        };
        write_json(&sidecar_path(&path), &meta)?;
    }
    Ok(())
}

fn read_run(dir: &Path, prefix: &str, paths: Vec<LoadPath>, n_nodes: usize, n_steps: usize) -> Result<FomRun> {
    let n = paths.len();
    let mut histories: Vec<FieldHistory> = (0..n)
        .map(|_| FieldHistory { n_nodes, steps: vec![NodalFields::zeros(n_nodes); n_steps] })
        .collect();
    for field in FieldId::ALL {
        let m = read_matrix(&dir.join(snapshot_file(prefix, field)))?;
        if m.rows() != field.components() * n_nodes || m.cols() != n * n_steps {
            return Err(Error::Shape(format!(
                "{prefix} {field} snapshots are {}×{}, manifest implies {}×{}",
                m.rows(),
                m.cols(),
                field.components() * n_nodes,
                n * n_steps
            )));
        }
        for (s, h) in histories.iter_mut().enumerate() {
            for (k, step) in h.steps.iter_mut().enumerate() {
                let j = s * n_steps + k;
                for (i, v) in step.values[field.index()].iter_mut().enumerate() {
                    *v = m.get(i, j);
                }
            }
        }
    }
    Ok(FomRun { paths, histories })
}

pub fn save_dataset(dir: &Path, data: &GeneratedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let first = data.samples.histories.first().ok_or_else(|| Error::Shape("empty dataset".into()))?;
    let (n_nodes, n_steps) = (first.n_nodes, first.n_steps());
    write_run(dir, "samples", &data.samples, n_nodes, n_steps)?;
    write_run(dir, "test", &data.test, n_nodes, n_steps)?;
    let manifest = DatasetManifest {
        scenario: data.scenario.clone(),
        seed: data.seed,
        n_nodes,
        n_steps,
        split: data.split.clone(),
        paths: data.samples.paths.clone(),
        catalog: data.catalog.clone(),
        fields: FieldId::ALL.to_vec(),
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<GeneratedData> {
    let m: DatasetManifest = read_json(&dir.join(DATASET_MANIFEST))?;
    let samples = read_run(dir, "samples", m.paths, m.n_nodes, m.n_steps)?;
    let test_paths = m.catalog.iter().map(|c| c.path.clone()).collect();
    let test = read_run(dir, "test", test_paths, m.n_nodes, m.n_steps)?;
    Ok(GeneratedData { scenario: m.scenario, seed: m.seed, split: m.split, samples, catalog: m.catalog, test })
}

/// Everything about a basis except its arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSidecar {
    pub field: FieldId,
    pub rank: usize,
    pub n_dofs: usize,
    pub singular_values: Vec<f64>,
    pub threshold_pct: f64,
    pub rmse_pct: f64,
    pub train_max: f64,
    pub r2_weights: Vec<f64>,
    pub mean_file: String,
}

/// Writes `pod_<field>.psro` (modes), `pod_<field>_mean.psro` and the sidecar.
pub fn save_field_model(dir: &Path, f: &FieldModel) -> Result<()> {
    let field = f.field();
    let modes = dir.join(format!("pod_{field}.psro"));
    let mean_file = format!("pod_{field}_mean.psro");
    write_matrix(&modes, &f.basis.modes)?;
    write_vector(&dir.join(&mean_file), &f.basis.mean)?;
    let meta = BasisSidecar {
        field,
        rank: f.rank(),
        n_dofs: f.basis.n_dofs(),
        singular_values: f.basis.singular_values.clone(),
        threshold_pct: f.basis.threshold_pct,
        rmse_pct: f.basis.rmse_pct,
        train_max: f.train_max,
        r2_weights: f.r2_weights.clone(),
        mean_file,
    };
    write_json(&sidecar_path(&modes), &meta)
}

pub fn load_field_model(dir: &Path, field: FieldId) -> Result<FieldModel> {
    let modes_path = dir.join(format!("pod_{field}.psro"));
    let meta: BasisSidecar = read_json(&sidecar_path(&modes_path))?;
    let modes = read_matrix(&modes_path)?;
    let mean = read_vector(&dir.join(&meta.mean_file))?;
    if meta.field != field || modes.cols() != meta.rank || modes.rows() != mean.len() {
        return Err(Error::Format(format!("basis {field} does not match its sidecar")));
    }
    Ok(FieldModel {
        basis: PodBasis {
            field,
            modes,
            mean,
            singular_values: meta.singular_values,
            threshold_pct: meta.threshold_pct,
            rmse_pct: meta.rmse_pct,
        },
        train_max: meta.train_max,
        r2_weights: meta.r2_weights,
    })
}

/// Reduction directory: bases, sampled-path coefficients and inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedManifest {
    pub fields: Vec<FieldId>,
    pub ranks: Vec<usize>,
    pub threshold_pct: f64,
    pub split: Split,
}

pub const REDUCED_MANIFEST: &str = "reduced.json";

pub fn save_reduced(dir: &Path, fields: &[FieldModel], reduced: &ReducedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (f, c) in fields.iter().zip(&reduced.coefficients) {
        save_field_model(dir, f)?;
        write_sequences(&dir.join(format!("coeffs_{}.psro", f.field())), c)?;
    }
    write_sequences(&dir.join("inputs.psro"), &reduced.inputs)?;
    let manifest = ReducedManifest {
        fields: fields.iter().map(FieldModel::field).collect(),
        ranks: fields.iter().map(FieldModel::rank).collect(),
        threshold_pct: fields.first().map_or(0.0, |f| f.basis.threshold_pct),
        split: reduced.split.clone(),
    };
    write_json(&dir.join(REDUCED_MANIFEST), &manifest)
}

pub fn load_reduced(dir: &Path) -> Result<(Vec<FieldModel>, ReducedData)> {
    let m: ReducedManifest = read_json(&dir.join(REDUCED_MANIFEST))?;
    let fields = m.fields.iter().map(|&f| load_field_model(dir, f)).collect::<Result<Vec<_>>>()?;
    let coefficients = m
        .fields
        .iter()
        .map(|f| read_sequences(&dir.join(format!("coeffs_{f}.psro"))))
        .collect::<Result<Vec<_>>>()?;
    let inputs = read_sequences(&dir.join("inputs.psro"))?;
    Ok((fields, ReducedData { inputs, coefficients, split: m.split }))
}

/// Checkpoint header; parameters live in `member_<k>.psro`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    pub registry: Vec<FieldId>,
    pub architecture: Architecture,
    pub hyper: HyperParams,
    pub input_stats: InputStats,
    pub output_stats: OutputStats,
    pub seeds: Vec<u64>,
    pub member_files: Vec<String>,
    pub histories: Vec<TrainHistory>,
}

pub const CHECKPOINT: &str = "checkpoint.json";

/// Writes a self-contained surrogate: header, member parameters and the
/// bases it reconstructs with.
pub fn save_surrogate(dir: &Path, s: &Surrogate) -> Result<()> {
    s.validate()?;
    fs::create_dir_all(dir)?;
    let mut member_files = Vec::with_capacity(s.ensemble.len());
    for (k, m) in s.ensemble.members.iter().enumerate() {
        let name = format!("member_{k}.psro");
        write_vector(&dir.join(&name), m.params())?;
        member_files.push(name);
    }
    for f in &s.fields {
        save_field_model(dir, f)?;
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        scenario: s.scenario.clone(),
        registry: s.registry(),
        architecture: s.ensemble.architecture().clone(),
        hyper: s.hyper.clone(),
        input_stats: s.input_stats.clone(),
        output_stats: s.output_stats.clone(),
        seeds: s.ensemble.seeds.clone(),
        member_files,
        histories: s.ensemble.histories.clone(),
    };
    write_json(&dir.join(CHECKPOINT), &header)
}

pub fn load_surrogate(dir: &Path) -> Result<Surrogate> {
    let h: CheckpointHeader = read_json(&dir.join(CHECKPOINT))?;
    if h.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("checkpoint version {}, expected {FORMAT_VERSION}", h.format_version)));
    }
    if h.member_files.len() != h.seeds.len() {
        return Err(Error::Format("member files and seeds differ in length".into()));
    }
    let members = h
        .member_files
        .iter()
        .map(|f| Model::from_params(h.architecture.clone(), read_vector(&dir.join(f))?))
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = Ensemble::new(members, h.seeds)?;
    if h.histories.len() == ensemble.len() {
        ensemble.histories = h.histories;
    }
    let fields = h.registry.iter().map(|&f| load_field_model(dir, f)).collect::<Result<Vec<_>>>()?;
    let s = Surrogate {
        scenario: h.scenario,
        fields,
        input_stats: h.input_stats,
        output_stats: h.output_stats,
        hyper: h.hyper,
        ensemble,
    };
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_matrix_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1e3..1e3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.psro");
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(back.shape(), (3, 4));
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn special_values_survive() {
        let data = [f64::NAN, -0.0, f64::INFINITY, f64::MIN_POSITIVE / 2.0, f64::MAX];
        let b = decode_blob(&encode_blob(&[5], &data).unwrap()).unwrap();
        for (a, b) in b.data.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_size_follows_the_header_arithmetic() {
        assert_eq!(Blob::encoded_len(&[1932, 2400]), 16 + 2 * 8 + 1932 * 2400 * 8);
        let bytes = encode_blob(&[2, 3], &[0.0; 6]).unwrap();
        assert_eq!(bytes.len(), 16 + 16 + 48);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_blob(&[3, 4], &[1.0; 12]).unwrap();
        for cut in [0, 3, 11, 20, 31, bytes.len() - 1] {
            match decode_blob(&bytes[..cut]) {
                Err(Error::Truncated { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = encode_blob(&[1], &[1.0]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_blob(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_blob(&[1], &[1.0]).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_blob(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_blob(&[1], &[1.0]).unwrap();
        bytes[13] = 1;
        assert!(matches!(decode_blob(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_refused_on_write() {
        assert!(encode_blob(&[2, 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn missing_file_is_a_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_blob(&dir.path().join("nope.psro")), Err(Error::MissingInput(_))));
    }

    #[test]
    fn json_floats_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>() * 10f64.powi(rng.gen_range(-30..30))).collect();
        let back: Vec<f64> = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
