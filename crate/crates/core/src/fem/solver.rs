//! Newton–Raphson equilibrium iterations with the consistent tangent.

use crate::config::{Loading, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fem::element::{self, GaussPoint};
use crate::fem::fields::{extract_nodal_fields, FieldHistory, GaussData};
use crate::fem::material::{return_map, Material, MaterialState, StressMode, Voigt};
use crate::fem::mesh::{build_mesh, Mesh};
use crate::linalg::BandMatrix;
use crate::scenario::LoadPath;

pub const MAX_NEWTON_ITERATIONS: usize = 25;
pub const NEWTON_TOLERANCE: f64 = 1e-8;

/// Converged equilibrium state of one load step.
#[derive(Clone, Debug)]
pub struct StepSolution {
    pub u: Vec<f64>,
    pub gauss: GaussData,
    /// Number of corrections applied (0 when the initial guess already balances).
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Assembles and solves the nonlinear system on a fixed mesh.
#[derive(Clone, Debug)]
pub struct Solver {
    mesh: Mesh,
    material: Material,
    gauss: Vec<GaussPoint>,
    fixed: Vec<bool>,
    bandwidth: usize,
}

impl Solver {
    pub fn new(mesh: Mesh, material: Material, thickness: f64) -> Result<Self> {
        material.validate()?;
        mesh.validate()?;
        let mut gauss = Vec::with_capacity(4 * mesh.n_elements());
        for q in &mesh.quads {
            let coords = q.map(|i| mesh.nodes[i]);
            for gp in element::GAUSS_POINTS {
                gauss.push(element::gauss_point(&coords, gp[0], gp[1], thickness));
            }
        }
        let mut fixed = vec![false; mesh.n_dofs()];
        for &n in &mesh.dirichlet_nodes {
            fixed[2 * n] = true;
            fixed[2 * n + 1] = true;
        }
        let bandwidth = mesh.dof_bandwidth();
        Ok(Self { mesh, material, gauss, fixed, bandwidth })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn n_gauss_points(&self) -> usize {
        self.gauss.len()
    }

    pub fn virgin_states(&self) -> Vec<MaterialState> {
        vec![MaterialState::default(); self.gauss.len()]
    }

    fn element_dofs(q: &[usize; 4]) -> [usize; 8] {
        [2 * q[0], 2 * q[0] + 1, 2 * q[1], 2 * q[1] + 1, 2 * q[2], 2 * q[2] + 1, 2 * q[3], 2 * q[3] + 1]
    }

    /// Internal force, integration-point results and (optionally) the tangent.
    fn assemble(
        &self,
        u: &[f64],
        states: &[MaterialState],
        mut tangent: Option<&mut BandMatrix>,
        elastic_tangent: bool,
    ) -> Result<(Vec<f64>, GaussData)> {
        let elastic = self.material.plane_stress_stiffness();
        let mut f_int = vec![0.0; self.mesh.n_dofs()];
        let n_gp = self.gauss.len();
        let mut data = GaussData {
            states: Vec::with_capacity(n_gp),
            stresses: Vec::with_capacity(n_gp),
            strains: Vec::with_capacity(n_gp),
        };
        if let Some(k) = tangent.as_deref_mut() {
            k.clear();
        }
        for (e, q) in self.mesh.quads.iter().enumerate() {
            let dofs = Self::element_dofs(q);
            let ue = dofs.map(|d| u[d]);
            let mut fe = [0.0; 8];
            let mut ke = [[0.0; 8]; 8];
            for g in 0..4 {
                let gp = &self.gauss[4 * e + g];
                let mut eps: Voigt = [0.0; 6];
                for (r, slot) in [0usize, 1, 3].into_iter().enumerate() {
                    eps[slot] = (0..8).map(|c| gp.b[r][c] * ue[c]).sum();
                }
                let rm = return_map(&eps, &states[4 * e + g], &self.material, StressMode::PlaneStress)?;
                let s = rm.in_plane_stress();
                for c in 0..8 {
                    fe[c] += gp.weight * (gp.b[0][c] * s[0] + gp.b[1][c] * s[1] + gp.b[2][c] * s[2]);
                }
                if tangent.is_some() {
                    let d = if elastic_tangent { elastic } else { rm.plane_stress_tangent() };
                    let mut db = [[0.0; 8]; 3];
                    for r in 0..3 {
                        for c in 0..8 {
                            db[r][c] = d[r][0] * gp.b[0][c] + d[r][1] * gp.b[1][c] + d[r][2] * gp.b[2][c];
                        }
                    }
                    for a in 0..8 {
                        for c in 0..=a {
                            ke[a][c] +=
                                gp.weight * (gp.b[0][a] * db[0][c] + gp.b[1][a] * db[1][c] + gp.b[2][a] * db[2][c]);
                        }
                    }
                }
                data.states.push(rm.state);
                data.stresses.push(rm.stress);
                data.strains.push(rm.strain);
            }
            for a in 0..8 {
                f_int[dofs[a]] += fe[a];
            }
            if let Some(k) = tangent.as_deref_mut() {
                for a in 0..8 {
                    for c in 0..=a {
                        k.add(dofs[a], dofs[c], ke[a][c]);
                    }
                }
            }
        }
        if let Some(k) = tangent {
            for (d, &fx) in self.fixed.iter().enumerate() {
                if fx {
                    k.constrain(d);
                }
            }
        }
        Ok((f_int, data))
    }

    fn residual(&self, f_int: &[f64], f_ext: &[f64]) -> (Vec<f64>, f64) {
        let r: Vec<f64> = f_int
            .iter()
            .zip(f_ext)
            .zip(&self.fixed)
            .map(|((fi, fe), &fx)| if fx { 0.0 } else { fi - fe })
            .collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, norm)
    }

    /// Solves one load step starting from `u_prev` and the converged
    /// `states` of the previous step.
    pub fn solve_step(&self, states: &[MaterialState], f_ext: &[f64], u_prev: &[f64]) -> Result<StepSolution> {
        if states.len() != self.gauss.len() || f_ext.len() != self.mesh.n_dofs() || u_prev.len() != f_ext.len() {
            return Err(Error::Shape("solve_step inputs do not match the mesh".into()));
        }
        let ext_norm = f_ext
            .iter()
            .zip(&self.fixed)
            .filter(|(_, &fx)| !fx)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt();
        let tol = NEWTON_TOLERANCE * ext_norm.max(1.0);
        let mut u: Vec<f64> = u_prev.iter().zip(&self.fixed).map(|(v, &fx)| if fx { 0.0 } else { *v }).collect();
        let n = self.mesh.n_dofs();
        let mut k = BandMatrix::zeros(n, self.bandwidth);
        // elastic stiffness for the first correction of each step
        let (f_int, mut gauss) = self.assemble(&u, states, Some(&mut k), true)?;
        let (mut r, mut norm) = self.residual(&f_int, f_ext);
        let mut history = vec![norm];
        for iteration in 0..=MAX_NEWTON_ITERATIONS {
            if norm <= tol {
                return Ok(StepSolution { u, gauss, iterations: iteration, residual_history: history });
            }
            if !norm.is_finite() || iteration == MAX_NEWTON_ITERATIONS {
                break;
            }
            let chol = std::mem::replace(&mut k, BandMatrix::zeros(n, self.bandwidth)).cholesky()?;
            let mut du: Vec<f64> = r.iter().map(|v| -v).collect();
            chol.solve_in_place(&mut du);
            for (ui, di) in u.iter_mut().zip(&du) {
                *ui += di;
            }
            let (fi, g) = self.assemble(&u, states, Some(&mut k), false)?;
            gauss = g;
            (r, norm) = self.residual(&fi, f_ext);
            history.push(norm);
        }
        Err(Error::Newton { iterations: MAX_NEWTON_ITERATIONS, history })
    }

    /// Internal force vector for a displacement field.
    pub fn internal_force(&self, u: &[f64], states: &[MaterialState]) -> Result<Vec<f64>> {
        Ok(self.assemble(u, states, None, false)?.0)
    }

    /// Residual norm over free dofs.
    pub fn residual_norm(&self, u: &[f64], states: &[MaterialState], f_ext: &[f64]) -> Result<f64> {
        let f_int = self.internal_force(u, states)?;
        Ok(self.residual(&f_int, f_ext).1)
    }
}

/// External nodal force vector for one set of load parameters.
pub fn assemble_load(mesh: &Mesh, loading: Loading, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != loading.n_params() {
        return Err(Error::Shape(format!("{:?} expects {} parameters, got {}", loading, loading.n_params(), mu.len())));
    }
    let mut f = vec![0.0; mesh.n_dofs()];
    match loading {
        Loading::TopShear => {
            for &[a, b] in &mesh.neumann_edges {
                let len = (mesh.nodes[b][0] - mesh.nodes[a][0]).hypot(mesh.nodes[b][1] - mesh.nodes[a][1]);
                f[2 * a] += 0.5 * mu[0] * len;
                f[2 * b] += 0.5 * mu[0] * len;
            }
        }
        Loading::TopPointForce => {
            let (force, x) = (mu[0], mu[1]);
            let edge = mesh
                .neumann_edges
                .iter()
                .find(|&&[a, b]| x >= mesh.nodes[a][0] && x <= mesh.nodes[b][0])
                .ok_or_else(|| {
                    let lo = mesh.neumann_edges.first().map_or(0.0, |e| mesh.nodes[e[0]][0]);
                    let hi = mesh.neumann_edges.last().map_or(0.0, |e| mesh.nodes[e[1]][0]);
                    Error::OutOfDomain { index: 1, value: x, lo, hi }
                })?;
            let [a, b] = *edge;
            let s = (x - mesh.nodes[a][0]) / (mesh.nodes[b][0] - mesh.nodes[a][0]);
            f[2 * a + 1] -= force * (1.0 - s);
            f[2 * b + 1] -= force * s;
        }
    }
    Ok(f)
}

/// Mesh, material and loading of one scenario, ready to run load paths.
#[derive(Clone, Debug)]
pub struct Simulation {
    scenario: ScenarioConfig,
    solver: Solver,
}

impl Simulation {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let mesh = build_mesh(scenario)?;
        let solver = Solver::new(mesh, scenario.material, scenario.thickness)?;
        Ok(Self { scenario: scenario.clone(), solver })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    pub fn mesh(&self) -> &Mesh {
        self.solver.mesh()
    }

    pub fn load_vector(&self, mu: &[f64]) -> Result<Vec<f64>> {
        assemble_load(self.mesh(), self.scenario.loading, mu)
    }

    /// Runs every step of `path` from the virgin state and extracts nodal
    /// fields after each converged step.
    pub fn run_load_path(&self, path: &LoadPath) -> Result<FieldHistory> {
        let mut states = self.solver.virgin_states();
        let mut u = vec![0.0; self.mesh().n_dofs()];
        let mut history = FieldHistory::new(self.mesh().n_nodes());
        for (step, mu) in path.steps.iter().enumerate() {
            let wrap = |e: Error| Error::LoadStep { step, source: Box::new(e) };
            let f_ext = self.load_vector(mu).map_err(wrap)?;
            let sol = self.solver.solve_step(&states, &f_ext, &u).map_err(wrap)?;
            history.push(extract_nodal_fields(self.mesh(), &sol.u, &sol.gauss));
            u = sol.u;
            states = sol.gauss.states;
        }
        Ok(history)
    }
}
