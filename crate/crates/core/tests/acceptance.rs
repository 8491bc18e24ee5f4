//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! `PSRO_ACCEPTANCE_ONLY=a,b` runs a subset by key. Failing criteria make
//! the process exit nonzero only with `PSRO_ACCEPTANCE_STRICT=1`; a criterion
//! that cannot run at all (an error or panic) always does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psro_core::fem::{return_map, FieldId, Material, MaterialState, Simulation, StressMode};
use psro_core::io;
use psro_core::lstm::{Architecture, HeadSpec, Model};
use psro_core::metrics::{compare_mtl_stl, render_deltas, EvalReport};
use psro_core::pipeline::{
    generate, project_run, reduce_field, reduce_fields, run_pipeline, search_hyperparameters, train_single_task,
    FieldModel, GeneratedData, PipelineConfig, PipelineRun, ReducedData, Surrogate,
};
use psro_core::scenario::{split_dataset, LoadPath};
use psro_core::training::{Ensemble, HyperParams, SearchConfig, SearchSpace, TransferMode};
use psro_core::{Result, ScenarioConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

/// Generated, reduced and trained artifacts of one scenario preset, built on
/// first use.
struct Prepared {
    config: PipelineConfig,
    data: Option<GeneratedData>,
    fields: Option<Vec<FieldModel>>,
    reduce_secs: f64,
    surrogate: Option<Surrogate>,
    train_secs: f64,
}

impl Prepared {
    fn new(name: &str) -> Self {
        Self {
            config: PipelineConfig::preset(name).unwrap(),
            data: None,
            fields: None,
            reduce_secs: 0.0,
            surrogate: None,
            train_secs: 0.0,
        }
    }

    fn data(&mut self) -> Result<&GeneratedData> {
        if self.data.is_none() {
            let t = Instant::now();
            self.data = Some(generate(&self.config.scenario, self.config.n_samples, self.config.seed)?);
            println!("    ({} data: {:.1} s)", self.config.scenario.name, t.elapsed().as_secs_f64());
        }
        Ok(self.data.as_ref().unwrap())
    }

    fn fields(&mut self) -> Result<&[FieldModel]> {
        if self.fields.is_none() {
            let train = self.data()?.train();
            let t = Instant::now();
            self.fields = Some(reduce_fields(&train, &self.config.fields, self.config.pod_threshold_pct)?);
            self.reduce_secs = t.elapsed().as_secs_f64();
        }
        Ok(self.fields.as_deref().unwrap())
    }

    fn reduced(&mut self) -> Result<ReducedData> {
        self.fields()?;
        ReducedData::new(self.data.as_ref().unwrap(), self.fields.as_ref().unwrap())
    }

    fn surrogate(&mut self) -> Result<&Surrogate> {
        if self.surrogate.is_none() {
            let reduced = self.reduced()?;
            let fields = self.fields.as_ref().unwrap();
            let all: Vec<usize> = (0..fields.len()).collect();
            let c = &self.config;
            let t = Instant::now();
            self.surrogate = Some(Surrogate::train(&c.scenario, fields, &reduced, &all, &c.hyper, &c.ensemble_seeds)?);
            self.train_secs = t.elapsed().as_secs_f64();
        }
        Ok(self.surrogate.as_ref().unwrap())
    }
}

struct Context {
    table: Prepared,
    beam: Prepared,
}

// Uniaxial stress under linear kinematic hardening reduces to a scalar
// return map with back-stress modulus 3H/2.
struct Oracle1d {
    e: f64,
    sy: f64,
    k: f64,
    ep: f64,
}

impl Oracle1d {
    fn stress(&mut self, strain: f64) -> f64 {
        let a = self.k * self.ep;
        let trial = self.e * (strain - self.ep);
        let f = (trial - a).abs() - self.sy;
        if f <= 0.0 {
            return trial;
        }
        let dl = f / (self.e + self.k);
        self.ep += dl * (trial - a).signum();
        self.e * (strain - self.ep)
    }
}

fn fem_constitutive(_: &mut Context) -> Result<Outcome> {
    let mat = Material::default();
    let eps_y = mat.yield_stress / mat.youngs_modulus;
    let mut oracle = Oracle1d { e: mat.youngs_modulus, sy: mat.yield_stress, k: 1.5 * mat.hardening_modulus, ep: 0.0 };
    let mut targets = Vec::new();
    for (from, to) in [(0.0, 3.0), (3.0, -3.0), (-3.0, 2.0), (2.0, -1.5)] {
        for i in 1..=12 {
            targets.push(eps_y * (from + (to - from) * i as f64 / 12.0));
        }
    }
    let mut state = MaterialState::default();
    let mut eyy = 0.0;
    let (mut worst, mut worst_zz, mut plastic_steps) = (0.0f64, 0.0f64, 0);
    for &exx in &targets {
        let mut rm = None;
        for _ in 0..50 {
            let r = return_map(&[exx, eyy, 0.0, 0.0, 0.0, 0.0], &state, &mat, StressMode::PlaneStress)?;
            let syy = r.stress[1];
            let d = r.plane_stress_tangent()[1][1];
            let done = syy.abs() <= 1e-12 * mat.yield_stress;
            rm = Some(r);
            if done {
                break;
            }
            eyy -= syy / d;
        }
        let r = rm.unwrap();
        let expected = oracle.stress(exx);
        let rel = (r.stress[0] - expected).abs() / expected.abs().max(1e-3 * mat.yield_stress);
        worst = worst.max(rel);
        worst_zz = worst_zz.max(r.stress[2].abs().max(r.stress[1].abs()));
        plastic_steps += r.yielded as usize;
        state = r.state;
    }
    let pass = worst <= 1e-8 && worst_zz <= 1e-8 * mat.yield_stress && plastic_steps > 0;
    outcome(
        pass,
        format!(
            "{} steps ({plastic_steps} plastic), max rel stress err {worst:.2e} (tol 1e-8), max |sigma_zz|,|sigma_yy| {worst_zz:.2e} (tol {:.1e})",
            targets.len(),
            1e-8 * mat.yield_stress
        ),
    )
}

fn fem_structural(_: &mut Context) -> Result<Outcome> {
    let scenario = ScenarioConfig::beam();
    let sim = Simulation::new(&scenario)?;
    let mesh = sim.mesh();
    let (p, length, height) = (0.5, 10.0f64, 1.0);
    let inertia = scenario.thickness * height * height * height / 12.0;
    let analytic = p * length.powi(3) / (3.0 * scenario.material.youngs_modulus * inertia);
    let history = sim.run_load_path(&LoadPath::new(vec![vec![p, length], vec![0.0, length]]))?;
    let u = history.field(FieldId::Displacement, 0);
    let tip: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| (mesh.nodes[i][0] - length).abs() < 1e-9).collect();
    let deflection = -tip.iter().map(|&i| u[2 * i + 1]).sum::<f64>() / tip.len() as f64;
    let rel = (deflection - analytic).abs() / analytic;
    let plastic = history.field(FieldId::EqPlasticStrain, 0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak = |f: FieldId, k: usize| history.field(f, k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let state = [FieldId::Displacement, FieldId::EqPlasticStrain, FieldId::PlasticStrain, FieldId::EqStrain]
        .map(|f| peak(f, 1))
        .into_iter()
        .fold(0.0f64, f64::max);
    let stress_rel = peak(FieldId::VonMises, 1) / peak(FieldId::VonMises, 0);
    let pass = rel <= 0.10 && state <= 1e-10 && stress_rel <= 1e-10 && plastic == 0.0;
    outcome(
        pass,
        format!(
            "tip deflection {deflection:.5e} vs PL^3/3EI {analytic:.5e} (rel {:.2}%, tol 10%); after unload max |u|,|eps| {state:.1e} (tol 1e-10), sigma_vm {:.1e} of peak (tol 1e-10)",
            100.0 * rel,
            stress_rel
        ),
    )
}

fn pod(ctx: &mut Context) -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    for (prep, expected, tol) in [(&mut ctx.table, [1usize, 8, 4, 3], 1usize), (&mut ctx.beam, [2, 19, 7, 4], 2)] {
        let fields = prep.fields()?;
        let ranks: Vec<usize> = fields.iter().map(|f| f.rank()).collect();
        let errs: Vec<f64> = fields.iter().map(|f| f.basis.rmse_pct).collect();
        let total: usize = ranks.iter().sum();
        let within = ranks.iter().zip(expected).all(|(&r, e)| r.abs_diff(e) <= tol);
        let totals_ok = prep.config.scenario.name != "table" || total.abs_diff(16) <= 2;
        let err_ok = errs.iter().all(|&e| e < 1.0);
        pass &= within && totals_ok && err_ok;
        lines.push(format!(
            "{} ranks {ranks:?} (expected {expected:?} +-{tol}, total {total}), e_RMSE% {}",
            prep.config.scenario.name,
            errs.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join("/")
        ));
    }
    let secs = ctx.table.reduce_secs;
    pass &= secs < 60.0;
    lines.push(format!("table reduction {secs:.1} s (limit 60 s)"));
    outcome(pass, lines.join("; "))
}

fn gradient(_: &mut Context) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let fields = [FieldId::Displacement, FieldId::VonMises, FieldId::EqPlasticStrain];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let heads: Vec<HeadSpec> =
            fields[..rng.gen_range(1..=3)].iter().map(|&field| HeadSpec { field, size: rng.gen_range(1..=3) }).collect();
        let arch = Architecture::new(rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(1..=3), heads);
        let (batch, steps) = (rng.gen_range(1..=3), rng.gen_range(2..=5));
        let m = Model::new(arch.clone(), seed)?;
        let x: Vec<f64> = (0..batch * steps * arch.input_size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..batch * steps * arch.output_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &Model| -> f64 { p.predict(&x, batch, steps).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum() };
        let (_, cache) = m.forward(&x, batch, steps)?;
        let g = m.backward(&cache, &w)?;
        let h = 1e-6;
        for i in 0..m.n_params() {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let up = objective(&p);
            p.params_mut()[i] -= 2.0 * h;
            let down = objective(&p);
            let fd = (up - down) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(GRAD_FLOOR);
            worst = worst.max((g[i] - fd).abs() / scale);
            checked += 1;
        }
    }
    outcome(worst < 1e-4, format!("20 models, {checked} parameters, max rel err {worst:.2e} (tol 1e-4)"))
}

/// Gradients below this magnitude are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;

fn headline(prep: &mut Prepared, r2_bar: f64) -> Result<Outcome> {
    prep.surrogate()?;
    let report = prep.surrogate.as_ref().unwrap().evaluate(&prep.data.as_ref().unwrap().test)?;
    print!("{}", indent(&report.render()));
    let pass = report.fields.iter().all(|f| f.mae.mean < 1.0 && f.r2.value >= r2_bar);
    let fields: Vec<String> = report
        .fields
        .iter()
        .map(|f| format!("{} MAE {:.3}% R2 {:.3}", f.field.as_str(), f.mae.mean, f.r2.value))
        .collect();
    let secs = prep.train_secs;
    outcome(
        pass && secs < 900.0,
        format!("{} (bars: MAE < 1%, R2 >= {r2_bar}); training {secs:.0} s (limit 900 s)", fields.join(", ")),
    )
}

fn headline_table(ctx: &mut Context) -> Result<Outcome> {
    headline(&mut ctx.table, 0.90)
}

fn headline_beam(ctx: &mut Context) -> Result<Outcome> {
    headline(&mut ctx.beam, 0.85)
}

/// Matched-epoch budget for the multi-task versus single-task comparison.
const COMPARISON_EPOCHS: usize = 1000;

fn mtl_vs_stl(ctx: &mut Context) -> Result<Outcome> {
    let prep = &mut ctx.table;
    let reduced = prep.reduced()?;
    let fields = prep.fields.clone().unwrap();
    let c = &prep.config;
    let hyper = HyperParams { epochs: COMPARISON_EPOCHS, ..c.hyper.clone() };
    let all: Vec<usize> = (0..fields.len()).collect();
    let test = &prep.data.as_ref().unwrap().test;
    let mtl = Surrogate::train(&c.scenario, &fields, &reduced, &all, &hyper, &c.ensemble_seeds)?.evaluate(test)?;
    let singles = train_single_task(&c.scenario, &fields, &reduced, &hyper, &c.ensemble_seeds)?;
    let mut stl = EvalReport { fields: Vec::new(), timing: None };
    for s in &singles {
        stl.fields.extend(s.evaluate(test)?.fields);
    }
    let deltas = compare_mtl_stl(&mtl, &stl)?;
    print!("{}", indent(&render_deltas(&deltas)));
    let wins = deltas.iter().filter(|d| d.mean <= 0.0).count();
    outcome(wins >= 3, format!("table, {COMPARISON_EPOCHS} epochs, MTL mean MAE <= STL on {wins}/4 fields (need 3)"))
}

fn transfer(ctx: &mut Context) -> Result<Outcome> {
    let prep = &mut ctx.table;
    let reduced = prep.reduced()?;
    prep.surrogate()?;
    let (data, base) = (prep.data.as_ref().unwrap(), prep.surrogate.as_ref().unwrap());
    let hyper = prep.config.hyper.clone();
    let extra = reduce_field(&data.train(), FieldId::EqStrain, prep.config.pod_threshold_pct)?;
    let coeffs = project_run(&extra.basis, &data.samples)?;
    let budgets = [10usize, 20, 30];
    let mut curve = vec![Vec::new(); budgets.len()];
    let mut baseline = Vec::new();
    for (m, seed) in [1u64, 2, 3].into_iter().enumerate() {
        let mut pool = data.split.train.clone();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let member = Surrogate {
            ensemble: Ensemble::new(vec![base.ensemble.members[m].clone()], vec![base.ensemble.seeds[m]])?,
            ..base.clone()
        };
        for (b, &n) in budgets.iter().enumerate() {
            let idx = &pool[..n];
            let split = split_dataset(n, seed)?;
            let ext = member.add_field(
                extra.clone(),
                &reduced.inputs.select(idx),
                &coeffs.select(idx),
                None,
                &split,
                TransferMode::Frozen,
                &hyper,
            )?;
            curve[b].push(ext.evaluate(&data.test)?.field(FieldId::EqStrain).unwrap().r2.value);
        }
        let idx = &pool[..100];
        let rd = ReducedData { inputs: reduced.inputs.select(idx), coefficients: vec![coeffs.select(idx)], split: split_dataset(100, seed)? };
        let stl = Surrogate::train(&prep.config.scenario, std::slice::from_ref(&extra), &rd, &[0], &hyper, &[seed])?;
        baseline.push(stl.evaluate(&data.test)?.fields[0].r2.value);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (b, &n) in budgets.iter().enumerate() {
        println!("    frozen head N={n:<3} R2 {:?} mean {:.4}", round(&curve[b]), mean(&curve[b]));
    }
    println!("    single-task N=100 R2 {:?} mean {:.4}", round(&baseline), mean(&baseline));
    let (at30, target) = (mean(&curve[2]), mean(&baseline) - 0.05);
    outcome(at30 >= target, format!("eps_eq frozen-trunk R2 at N=30 {at30:.4} vs single-task N=100 {:.4} - 0.05", mean(&baseline)))
}

fn real_time(ctx: &mut Context) -> Result<Outcome> {
    let mut pass = true;
    let mut lines = Vec::new();
    for prep in [&mut ctx.table, &mut ctx.beam] {
        prep.surrogate()?;
        let s = prep.surrogate.as_ref().unwrap();
        let path = &prep.data.as_ref().unwrap().catalog[0].path;
        let timing = s.time_inference(path, 200)?;
        let sim = Simulation::new(&prep.config.scenario)?;
        let t = Instant::now();
        sim.run_load_path(path)?;
        let fem = t.elapsed().as_secs_f64();
        pass &= timing.median_s <= 1e-2;
        lines.push(format!(
            "{} {:.2e} s per 10-step path ({:.2e} s/frame, {:.0}x under the frame bar), FEM {fem:.2e} s, FEM/surrogate {:.0}",
            prep.config.scenario.name,
            timing.median_s,
            timing.median_s / path.n_steps() as f64,
            timing.margin() * path.n_steps() as f64,
            fem / timing.median_s
        ));
    }
    outcome(pass, lines.join("; "))
}

fn determinism(_: &mut Context) -> Result<Outcome> {
    let mut config = PipelineConfig::preset("table")?;
    config.n_samples = 12;
    config.seed = 21;
    config.hyper.epochs = 25;
    config.ensemble_seeds = vec![4, 5];
    let a = run_pipeline(&config)?;
    let b = run_pipeline(&config)?;
    let mut checks = vec![
        ("fem", same_data(&a, &b)),
        ("pod", a.fields.iter().zip(&b.fields).all(|(x, y)| bits(x.basis.modes.as_slice()) == bits(y.basis.modes.as_slice()))),
        ("projection", a.reduced.coefficients.iter().zip(&b.reduced.coefficients).all(|(x, y)| bits(&x.data) == bits(&y.data))),
        (
            "training",
            a.surrogate.ensemble.members.iter().zip(&b.surrogate.ensemble.members).all(|(x, y)| bits(x.params()) == bits(y.params())),
        ),
        ("evaluation", serde_json::to_string(&a.report).unwrap() == serde_json::to_string(&b.report).unwrap()),
    ];
    let space = SearchSpace { hidden_size: (4, 12), lstm_layers: (1, 2), ..SearchSpace::paper(4) };
    let search = SearchConfig { budget: 3, epochs: 3, repeats: 1 };
    let all: Vec<usize> = (0..a.fields.len()).collect();
    let sa = search_hyperparameters(&a.fields, &a.reduced, &all, &space, &search, 9)?;
    let sb = search_hyperparameters(&b.fields, &b.reduced, &all, &space, &search, 9)?;
    checks.push(("search", sa == sb));
    let dir = tempfile::tempdir()?;
    io::save_surrogate(dir.path(), &a.surrogate)?;
    let loaded = io::load_surrogate(dir.path())?;
    let path = &a.data.catalog[1].path;
    let (p, q) = (a.surrogate.infer(path)?, loaded.infer(path)?);
    checks.push(("checkpoint", p.iter().zip(&q).all(|(x, y)| x.fields.iter().zip(&y.fields).all(|(u, v)| bits(u) == bits(v)))));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        format!("bitwise equal across two runs: {}", names.join(", "))
    } else {
        format!("differs in {}", failed.join(", "))
    };
    outcome(failed.is_empty(), detail)
}

fn same_data(a: &PipelineRun, b: &PipelineRun) -> bool {
    let hist = |r: &PipelineRun| -> Vec<u64> {
        r.data
            .samples
            .histories
            .iter()
            .chain(&r.data.test.histories)
            .flat_map(|h| h.steps.iter().flat_map(|s| FieldId::ALL.iter().flat_map(move |&f| bits(s.get(f)))))
            .collect()
    };
    a.data.split == b.data.split && hist(a) == hist(b)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}\n")).collect()
}

type Criterion = fn(&mut Context) -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("fem_constitutive", fem_constitutive),
        ("fem_structural", fem_structural),
        ("gradient", gradient),
        ("determinism", determinism),
        ("pod", pod),
        ("headline_table", headline_table),
        ("headline_beam", headline_beam),
        ("real_time", real_time),
        ("mtl_vs_stl", mtl_vs_stl),
        ("transfer", transfer),
    ];
    let only: Option<Vec<String>> =
        std::env::var("PSRO_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let strict = std::env::var("PSRO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut ctx = Context { table: Prepared::new("table"), beam: Prepared::new("beam") };
    let (mut passed, mut failed, mut broken) = (0, 0, 0);
    for (key, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|k| k == key)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut ctx)));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(Ok(o)) => {
                if o.pass {
                    passed += 1;
                } else {
                    failed += 1;
                }
                println!("{} {key}: {} [{secs:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            Ok(Err(e)) => {
                broken += 1;
                println!("FAIL {key}: error: {e} [{secs:.1} s]");
            }
            Err(_) => {
                broken += 1;
                println!("FAIL {key}: panicked [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {broken} could not run");
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
