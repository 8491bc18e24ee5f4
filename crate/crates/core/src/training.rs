//! Loss, optimizer, training loops, ensembles, transfer of extra fields and
//! hyperparameter search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatView};
use crate::lstm::{Architecture, HeadSpec, Model};
use crate::scenario::{OutputStats, Sequences};

/// Per-epoch losses, both as RMSE in standardized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub batch_size: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub lstm_layers: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl HyperParams {
    /// Optimum reported for the table scenario.
    pub fn table() -> Self {
        Self {
            batch_size: 32,
            hidden_size: 41,
            learning_rate: 4.5e-2,
            lstm_layers: 1,
            weight_decay: 5.4e-4,
            epochs: 5000,
            patience: None,
        }
    }

    /// Optimum reported for the cantilever beam.
    pub fn beam() -> Self {
        Self {
            batch_size: 71,
            hidden_size: 80,
            learning_rate: 3.3e-2,
            lstm_layers: 1,
            weight_decay: 1.5e-6,
            epochs: 1000,
            patience: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table" => Ok(Self::table()),
            "beam" => Ok(Self::beam()),
            other => Err(Error::Config(format!("no hyperparameter preset named {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden_size == 0 || self.lstm_layers == 0 {
            return Err(Error::Config(format!("degenerate hyperparameters {self:?}")));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_size: usize, heads: Vec<HeadSpec>) -> Architecture {
        Architecture::new(input_size, self.hidden_size, self.lstm_layers, heads)
    }
}

/// Mean over samples and steps of the squared error summed over features.
pub fn mse_loss(pred: &Sequences, target: &Sequences) -> Result<f64> {
    check_same_shape(pred, target)?;
    Ok(sum_sq(&pred.data, &target.data) / (pred.n_samples * pred.n_steps) as f64)
}

fn sum_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, t)| (p - t) * (p - t)).sum()
}

fn check_same_shape(a: &Sequences, b: &Sequences) -> Result<()> {
    if (a.n_samples, a.n_steps, a.n_features) != (b.n_samples, b.n_steps, b.n_features) {
        return Err(Error::Shape(format!(
            "{}×{}×{} against {}×{}×{}",
            a.n_samples, a.n_steps, a.n_features, b.n_samples, b.n_steps, b.n_features
        )));
    }
    Ok(())
}

/// Adaptive moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// `name` labels a parameter index for error messages.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        name: impl Fn(usize) -> String,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!("optimizer over {} parameters got {}/{}", self.m.len(), params.len(), grads.len())));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name(i)));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] -= lr * (step + weight_decay * params[i]);
        }
        Ok(())
    }
}

/// Borrowed train/validation partitions, inputs normalized and targets
/// standardized.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub x_train: &'a Sequences,
    pub y_train: &'a Sequences,
    pub x_val: &'a Sequences,
    pub y_val: &'a Sequences,
}

impl<'a> TrainData<'a> {
    fn validate(&self) -> Result<()> {
        if self.x_train.n_samples == 0 {
            return Err(Error::Shape("empty training partition".into()));
        }
        for (x, y) in [(self.x_train, self.y_train), (self.x_val, self.y_val)] {
            if x.n_samples != y.n_samples || x.n_steps != y.n_steps {
                return Err(Error::Shape("inputs and targets disagree on samples or steps".into()));
            }
        }
        if self.x_val.n_samples > 0 && (self.x_val.n_features != self.x_train.n_features || self.y_val.n_features != self.y_train.n_features) {
            return Err(Error::Shape("train and validation feature counts differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 = initial parameters).
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_rmse,val_rmse\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.train_rmse, r.val_rmse));
        }
        s
    }
}

fn gather(s: &Sequences, idx: &[usize], buf: &mut Vec<f64>) {
    buf.clear();
    for &i in idx {
        buf.extend_from_slice(s.sample(i));
    }
}

/// RMSE per entry, in the units of the targets.
fn rmse(sq: f64, count: usize) -> f64 {
    (sq / count.max(1) as f64).sqrt()
}

fn evaluate(model: &Model, x: &Sequences, y: &Sequences) -> Result<f64> {
    if x.n_samples == 0 {
        return Ok(f64::NAN);
    }
    let pred = model.predict(&x.data, x.n_samples, x.n_steps)?;
    Ok(rmse(sum_sq(&pred, &y.data), y.data.len()))
}

/// Seeded per-epoch shuffle with the last partial batch kept.
struct Batcher {
    order: Vec<usize>,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), batch: batch.min(n).max(1), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn epoch(&mut self) -> std::slice::Chunks<'_, usize> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch)
    }
}

/// Tracks the best validation epoch and patience.
struct Selector {
    best: f64,
    best_epoch: usize,
    patience: Option<usize>,
}

impl Selector {
    /// Returns (improved, stop).
    fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = score < self.best;
        if improved {
            self.best = score;
            self.best_epoch = epoch;
        }
        let stop = self.patience.is_some_and(|p| epoch - self.best_epoch >= p);
        (improved, stop)
    }
}

/// Trains all parameters of `model` in place and keeps the best-validation
/// parameters.
pub fn train(model: &mut Model, data: TrainData<'_>, hyper: &HyperParams, seed: u64) -> Result<TrainHistory> {
    hyper.validate()?;
    data.validate()?;
    let arch = model.architecture();
    if data.x_train.n_features != arch.input_size || data.y_train.n_features != arch.output_size() {
        return Err(Error::Shape(format!(
            "data has {} inputs / {} outputs, model {} / {}",
            data.x_train.n_features,
            data.y_train.n_features,
            arch.input_size,
            arch.output_size()
        )));
    }
    let steps = data.x_train.n_steps;
    let mut opt = AdamW::new(model.n_params());
    let mut batcher = Batcher::new(data.x_train.n_samples, hyper.batch_size, seed);
    let score = |m: &Model, train_rmse: f64| -> Result<f64> {
        if data.x_val.n_samples == 0 {
            Ok(train_rmse)
        } else {
            evaluate(m, data.x_val, data.y_val)
        }
    };
    let initial_train = evaluate(model, data.x_train, data.y_train)?;
    let mut sel = Selector { best: score(model, initial_train)?, best_epoch: 0, patience: hyper.patience };
    let mut best = model.params().to_vec();
    let mut history = TrainHistory::default();
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    for epoch in 1..=hyper.epochs {
        let mut sq = 0.0;
        let mut count = 0;
        for idx in batcher.epoch() {
            gather(data.x_train, idx, &mut xb);
            gather(data.y_train, idx, &mut yb);
            let (pred, cache) = model.forward(&xb, idx.len(), steps)?;
            let scale = 2.0 / (idx.len() * steps) as f64;
            let mut dy = Vec::with_capacity(pred.len());
            for (p, t) in pred.iter().zip(&yb) {
                let e = p - t;
                sq += e * e;
                dy.push(scale * e);
            }
            count += pred.len();
            let grad = model.backward(&cache, &dy)?;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(model.param_name(i)));
            }
            opt.step(model.params_mut(), &grad, hyper.learning_rate, hyper.weight_decay, |i| format!("theta[{i}]"))?;
        }
        let train_rmse = rmse(sq, count);
        let val_rmse = if data.x_val.n_samples == 0 { f64::NAN } else { evaluate(model, data.x_val, data.y_val)? };
        history.records.push(EpochRecord { epoch, train_rmse, val_rmse });
        if !train_rmse.is_finite() || (data.x_val.n_samples > 0 && !val_rmse.is_finite()) {
            return Err(Error::Diverged { epoch, history: history.records });
        }
        let (improved, stop) = sel.observe(epoch, if data.x_val.n_samples == 0 { train_rmse } else { val_rmse });
        if improved {
            best.copy_from_slice(model.params());
        }
        if stop {
            break;
        }
    }
    model.params_mut().copy_from_slice(&best);
    history.best_epoch = sel.best_epoch;
    history.best_val_rmse = sel.best;
    Ok(history)
}

/// Independently trained members sharing one architecture.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<Model>,
    pub seeds: Vec<u64>,
    pub histories: Vec<TrainHistory>,
}

impl Ensemble {
    pub fn new(members: Vec<Model>, seeds: Vec<u64>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyEnsemble)?;
        if let Some(m) = members.iter().find(|m| m.architecture() != first.architecture()) {
            return Err(Error::RegistryMismatch(format!("{:?} vs {:?}", m.architecture(), first.architecture())));
        }
        let histories = vec![TrainHistory::default(); members.len()];
        Ok(Self { members, seeds, histories })
    }

    pub fn architecture(&self) -> &Architecture {
        self.members[0].architecture()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Mean member output in standardized space, `B × T × N`.
    pub fn predict_standardized(&self, x: &[f64], batch: usize, steps: usize) -> Result<Vec<f64>> {
        let first = self.members.first().ok_or(Error::EmptyEnsemble)?;
        let mut acc = first.predict(x, batch, steps)?;
        for m in &self.members[1..] {
            for (a, v) in acc.iter_mut().zip(m.predict(x, batch, steps)?) {
                *a += v;
            }
        }
        let inv = 1.0 / self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }
}

/// Trains one member per seed; member `k` is initialised and shuffled from
/// `seeds[k]`.
pub fn train_ensemble(
    arch: &Architecture,
    data: TrainData<'_>,
    hyper: &HyperParams,
    seeds: &[u64],
) -> Result<Ensemble> {
    if seeds.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let results: Vec<Result<(Model, TrainHistory)>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let mut m = Model::new(arch.clone(), seed)?;
                    let h = train(&mut m, data, hyper, seed)?;
                    Ok((m, h))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ensemble worker panicked")).collect()
    });
    let mut members = Vec::with_capacity(seeds.len());
    let mut histories = Vec::with_capacity(seeds.len());
    for r in results {
        let (m, h) = r?;
        members.push(m);
        histories.push(h);
    }
    let mut e = Ensemble::new(members, seeds.to_vec())?;
    e.histories = histories;
    Ok(e)
}

/// Ensemble mean, de-standardized once.
pub fn ensemble_predict(ensemble: &Ensemble, x: &Sequences, stats: &OutputStats) -> Result<Sequences> {
    let mean = ensemble.predict_standardized(&x.data, x.n_samples, x.n_steps)?;
    let out = Sequences::from_vec(x.n_samples, x.n_steps, ensemble.architecture().output_size(), mean)?;
    if stats.n_features != out.n_features || stats.n_steps != out.n_steps {
        return Err(Error::Shape("output statistics do not match the ensemble outputs".into()));
    }
    Ok(stats.destandardize(&out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Only the new head is trained on the frozen trunk.
    Frozen,
    /// Every parameter is fine-tuned on the extended composite output.
    Joint,
}

/// Extends `pretrained` with a head for a new field.
///
/// In frozen mode the targets are the new field's coefficients only; in
/// joint mode they are the full extended composite output.
pub fn add_task(
    pretrained: &Model,
    head: HeadSpec,
    mode: TransferMode,
    data: TrainData<'_>,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(Model, TrainHistory)> {
    let mut model = pretrained.with_heads(&[head], seed)?;
    match mode {
        TransferMode::Joint => {
            let h = train(&mut model, data, hyper, seed)?;
            Ok((model, h))
        }
        TransferMode::Frozen => {
            data.validate()?;
            if data.y_train.n_features != head.size {
                return Err(Error::Shape(format!("{} target features for a head of size {}", data.y_train.n_features, head.size)));
            }
            let init = model.head_parameters(head.field).expect("head just added").to_vec();
            let (ht, hv) = (trunk_features(pretrained, data.x_train)?, trunk_features(pretrained, data.x_val)?);
            let fdata = TrainData { x_train: &ht, y_train: data.y_train, x_val: &hv, y_val: data.y_val };
            let (params, history) = train_linear_head(init, head.size, fdata, hyper, seed)?;
            model.set_head_parameters(head.field, &params)?;
            Ok((model, history))
        }
    }
}

/// Top-layer hidden states, sample-major `B × T × H`.
pub fn trunk_features(model: &Model, x: &Sequences) -> Result<Sequences> {
    let h = model.architecture().hidden_size;
    if x.n_samples == 0 {
        return Ok(Sequences::zeros(0, x.n_steps, h));
    }
    let cache = model.trunk(&x.data, x.n_samples, x.n_steps)?;
    let tm = cache.top_hidden();
    let mut out = Sequences::zeros(x.n_samples, x.n_steps, h);
    for t in 0..x.n_steps {
        for b in 0..x.n_samples {
            let src = &tm[(t * x.n_samples + b) * h..(t * x.n_samples + b + 1) * h];
            out.data[(b * x.n_steps + t) * h..(b * x.n_steps + t + 1) * h].copy_from_slice(src);
        }
    }
    Ok(out)
}

fn linear_forward(theta: &[f64], n: usize, h: usize, feats: &[f64], rows: usize) -> Vec<f64> {
    let (w, b) = theta.split_at(n * h);
    let mut y = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, h, n, 1.0, MatView::row_major(feats, h), MatView::transposed(w, h), 1.0, &mut y, n);
    y
}

/// Same loop as [`train`] for a linear map from fixed hidden features.
fn train_linear_head(
    mut theta: Vec<f64>,
    n: usize,
    data: TrainData<'_>,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(Vec<f64>, TrainHistory)> {
    hyper.validate()?;
    let h = data.x_train.n_features;
    let steps = data.x_train.n_steps;
    let eval = |theta: &[f64], x: &Sequences, y: &Sequences| {
        let rows = x.n_samples * x.n_steps;
        rmse(sum_sq(&linear_forward(theta, n, h, &x.data, rows), &y.data), y.data.len())
    };
    let score = |theta: &[f64]| {
        if data.x_val.n_samples == 0 {
            eval(theta, data.x_train, data.y_train)
        } else {
            eval(theta, data.x_val, data.y_val)
        }
    };
    let name = |i: usize| if i < n * h { format!("head.W[{i}]") } else { format!("head.b[{}]", i - n * h) };
    let mut opt = AdamW::new(theta.len());
    let mut batcher = Batcher::new(data.x_train.n_samples, hyper.batch_size, seed);
    let mut sel = Selector { best: score(&theta), best_epoch: 0, patience: hyper.patience };
    let mut best = theta.clone();
    let mut history = TrainHistory::default();
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    let mut grad = vec![0.0; theta.len()];
    for epoch in 1..=hyper.epochs {
        let (mut sq, mut count) = (0.0, 0);
        for idx in batcher.epoch() {
            gather(data.x_train, idx, &mut xb);
            gather(data.y_train, idx, &mut yb);
            let rows = idx.len() * steps;
            let pred = linear_forward(&theta, n, h, &xb, rows);
            let scale = 2.0 / rows as f64;
            let dy: Vec<f64> = pred
                .iter()
                .zip(&yb)
                .map(|(p, t)| {
                    sq += (p - t) * (p - t);
                    scale * (p - t)
                })
                .collect();
            count += pred.len();
            let (gw, gb) = grad.split_at_mut(n * h);
            gemm(n, rows, h, 1.0, MatView::transposed(&dy, n), MatView::row_major(&xb, h), 0.0, gw, h);
            gb.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..rows {
                for k in 0..n {
                    gb[k] += dy[r * n + k];
                }
            }
            opt.step(&mut theta, &grad, hyper.learning_rate, hyper.weight_decay, name)?;
        }
        let train_rmse = rmse(sq, count);
        let val_rmse = if data.x_val.n_samples == 0 { f64::NAN } else { eval(&theta, data.x_val, data.y_val) };
        history.records.push(EpochRecord { epoch, train_rmse, val_rmse });
        if !train_rmse.is_finite() || (data.x_val.n_samples > 0 && !val_rmse.is_finite()) {
            return Err(Error::Diverged { epoch, history: history.records });
        }
        let (improved, stop) = sel.observe(epoch, if data.x_val.n_samples == 0 { train_rmse } else { val_rmse });
        if improved {
            best.copy_from_slice(&theta);
        }
        if stop {
            break;
        }
    }
    history.best_epoch = sel.best_epoch;
    history.best_val_rmse = sel.best;
    Ok((best, history))
}

/// Search ranges; learning rate and weight decay are drawn log-uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub batch_size: (usize, usize),
    pub hidden_size: (usize, usize),
    pub learning_rate: (f64, f64),
    pub lstm_layers: (usize, usize),
    pub weight_decay: (f64, f64),
}

impl SearchSpace {
    /// Published ranges; the hidden size starts at the output width.
    pub fn paper(n_outputs: usize) -> Self {
        Self {
            batch_size: (1, 128),
            hidden_size: (n_outputs, 100.max(n_outputs)),
            learning_rate: (1e-3, 1e-1),
            lstm_layers: (1, 5),
            weight_decay: (1e-7, 1e-4),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, epochs: usize) -> HyperParams {
        let log_uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| (rng.gen_range(lo.ln()..=hi.ln())).exp();
        HyperParams {
            batch_size: rng.gen_range(self.batch_size.0..=self.batch_size.1),
            hidden_size: rng.gen_range(self.hidden_size.0..=self.hidden_size.1),
            learning_rate: log_uniform(rng, self.learning_rate).clamp(self.learning_rate.0, self.learning_rate.1),
            lstm_layers: rng.gen_range(self.lstm_layers.0..=self.lstm_layers.1),
            weight_decay: log_uniform(rng, self.weight_decay).clamp(self.weight_decay.0, self.weight_decay.1),
            epochs,
            patience: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyper: HyperParams,
    /// Mean best validation RMSE over the repeats.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: HyperParams,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,batch_size,hidden_size,learning_rate,lstm_layers,weight_decay,epochs,objective\n");
        for t in &self.trials {
            let h = &t.hyper;
            s.push_str(&format!(
                "{},{},{},{:e},{},{:e},{},{:e}\n",
                t.index, h.batch_size, h.hidden_size, h.learning_rate, h.lstm_layers, h.weight_decay, h.epochs, t.objective
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: usize,
    pub epochs: usize,
    pub repeats: usize,
}

/// Seeded random search. Diverged trials score `+∞`; ties keep the first
/// trial.
pub fn random_search(
    space: &SearchSpace,
    config: &SearchConfig,
    heads: &[HeadSpec],
    data: TrainData<'_>,
    seed: u64,
) -> Result<SearchOutcome> {
    if config.budget == 0 || config.repeats == 0 {
        return Err(Error::Config("search needs a budget and at least one repeat".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hypers: Vec<HyperParams> = (0..config.budget).map(|_| space.sample(&mut rng, config.epochs)).collect();
    let mut trials = Vec::with_capacity(config.budget);
    for (index, hyper) in hypers.into_iter().enumerate() {
        let arch = hyper.architecture(data.x_train.n_features, heads.to_vec());
        let mut total = 0.0;
        for r in 0..config.repeats {
            let s = seed.wrapping_add(1 + (index * config.repeats + r) as u64);
            let mut m = Model::new(arch.clone(), s)?;
            total += match train(&mut m, data, &hyper, s) {
                Ok(h) => h.best_val_rmse,
                Err(Error::Diverged { .. }) | Err(Error::NonFiniteGradient(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
        }
        trials.push(Trial { index, hyper, objective: total / config.repeats as f64 });
    }
    let best = best_trial(&trials);
    Ok(SearchOutcome { best: trials[best].hyper.clone(), best_objective: trials[best].objective, trials })
}

/// Lowest objective; the earliest trial wins ties.
pub fn best_trial(trials: &[Trial]) -> usize {
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.objective < trials[best].objective {
            best = i;
        }
    }
    best
}
