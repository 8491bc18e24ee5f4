//! Small-strain von Mises plasticity with linear kinematic hardening.
//!
//! Voigt ordering is `[xx, yy, zz, xy, yz, xz]`. Stresses and the back stress
//! store tensor components; strains store engineering shears (`γ = 2ε`).
//! Internally the return map works in Mandel notation, where the shear
//! entries carry a `√2` factor and double contraction is a plain dot product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Voigt = [f64; 6];
pub type Tangent = [[f64; 6]; 6];

const SQRT2: f64 = std::f64::consts::SQRT_2;
const MAX_PLANE_STRESS_ITERATIONS: usize = 50;

/// Isotropic elastoplastic material. Moduli in MPa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub yield_stress: f64,
    pub hardening_modulus: f64,
}

impl Default for Material {
    /// Structural steel: E = 210 GPa, ν = 0.3, σ_y = 250 MPa, H = 21 GPa.
    fn default() -> Self {
        Self {
            youngs_modulus: 210_000.0,
            poisson_ratio: 0.3,
            yield_stress: 250.0,
            hardening_modulus: 21_000.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let ok = self.youngs_modulus > 0.0
            && (0.0..0.5).contains(&self.poisson_ratio)
            && self.yield_stress > 0.0
            && self.hardening_modulus >= 0.0
            && [self.youngs_modulus, self.poisson_ratio, self.yield_stress, self.hardening_modulus]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("material parameters out of range: {self:?}")))
        }
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn lame_lambda(&self) -> f64 {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }

    /// 3D isotropic stiffness in Voigt form (engineering shear strains).
    pub fn elastic_stiffness(&self) -> Tangent {
        let (lam, g) = (self.lame_lambda(), self.shear_modulus());
        let mut d = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = lam;
            }
            d[i][i] += 2.0 * g;
            d[i + 3][i + 3] = g;
        }
        d
    }

    /// Plane-stress elastic stiffness for `[xx, yy, xy]`.
    pub fn plane_stress_stiffness(&self) -> [[f64; 3]; 3] {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let c = e / (1.0 - nu * nu);
        [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]]
    }
}

/// History variables at one integration point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialState {
    /// Plastic strain, engineering Voigt.
    pub plastic_strain: Voigt,
    /// Back stress (deviatoric), tensor Voigt, MPa.
    pub back_stress: Voigt,
    pub eq_plastic_strain: f64,
}

/// How out-of-plane components are treated by [`return_map`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StressMode {
    /// All six strain components are prescribed.
    Full3d,
    /// `σ_zz = σ_yz = σ_xz = 0`; `ε_zz` is solved for, transverse shears are zero.
    PlaneStress,
}

/// Result of one constitutive update.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnMap {
    pub stress: Voigt,
    /// Consistent 3D tangent `dσ/dε` at the converged strain.
    pub tangent: Tangent,
    /// Strain the update converged at (`ε_zz` filled in for plane stress).
    pub strain: Voigt,
    pub state: MaterialState,
    pub delta_lambda: f64,
    pub yielded: bool,
    /// Local iterations spent on the plane-stress constraint.
    pub iterations: usize,
}

impl ReturnMap {
    /// Tangent for `[xx, yy, xy]` with `σ_zz = 0` condensed out.
    pub fn plane_stress_tangent(&self) -> [[f64; 3]; 3] {
        condense(&self.tangent)
    }

    pub fn in_plane_stress(&self) -> [f64; 3] {
        [self.stress[0], self.stress[1], self.stress[3]]
    }
}

fn condense(d: &Tangent) -> [[f64; 3]; 3] {
    const IDX: [usize; 3] = [0, 1, 3];
    let mut out = [[0.0; 3]; 3];
    for (a, &i) in IDX.iter().enumerate() {
        for (b, &j) in IDX.iter().enumerate() {
            out[a][b] = d[i][j] - d[i][2] * d[2][j] / d[2][2];
        }
    }
    out
}

#[inline]
fn strain_to_mandel(e: &Voigt) -> Voigt {
    [e[0], e[1], e[2], e[3] / SQRT2, e[4] / SQRT2, e[5] / SQRT2]
}

#[inline]
fn mandel_to_strain(m: &Voigt) -> Voigt {
    [m[0], m[1], m[2], m[3] * SQRT2, m[4] * SQRT2, m[5] * SQRT2]
}

#[inline]
fn stress_to_mandel(s: &Voigt) -> Voigt {
    [s[0], s[1], s[2], s[3] * SQRT2, s[4] * SQRT2, s[5] * SQRT2]
}

#[inline]
fn mandel_to_stress(m: &Voigt) -> Voigt {
    [m[0], m[1], m[2], m[3] / SQRT2, m[4] / SQRT2, m[5] / SQRT2]
}

#[inline]
fn deviator(m: &Voigt) -> Voigt {
    let p = (m[0] + m[1] + m[2]) / 3.0;
    [m[0] - p, m[1] - p, m[2] - p, m[3], m[4], m[5]]
}

#[inline]
fn dot(a: &Voigt, b: &Voigt) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `φ = 3/2 (s − α):(s − α) − σ_y²`, in MPa².
pub fn yield_function(stress: &Voigt, back_stress: &Voigt, mat: &Material) -> f64 {
    let s = deviator(&stress_to_mandel(stress));
    let a = stress_to_mandel(back_stress);
    let eta: Voigt = std::array::from_fn(|i| s[i] - a[i]);
    1.5 * dot(&eta, &eta) - mat.yield_stress * mat.yield_stress
}

pub fn von_mises(stress: &Voigt) -> f64 {
    let s = deviator(&stress_to_mandel(stress));
    (1.5 * dot(&s, &s)).sqrt()
}

/// Equivalent strain `√(2/3 e:e)` of the deviatoric part of a total strain.
pub fn equivalent_strain(strain: &Voigt) -> f64 {
    let e = deviator(&strain_to_mandel(strain));
    (2.0 / 3.0 * dot(&e, &e)).sqrt()
}

/// Radial return for a fully prescribed strain.
fn return_map_3d(strain: &Voigt, state: &MaterialState, mat: &Material) -> ReturnMap {
    let g = mat.shear_modulus();
    let lam = mat.lame_lambda();
    let h = mat.hardening_modulus;

    let elastic: Voigt = std::array::from_fn(|i| strain[i] - state.plastic_strain[i]);
    let ee = strain_to_mandel(&elastic);
    let tr = ee[0] + ee[1] + ee[2];
    let mut sigma: Voigt = std::array::from_fn(|i| 2.0 * g * ee[i] + if i < 3 { lam * tr } else { 0.0 });
    let alpha = stress_to_mandel(&state.back_stress);
    let s = deviator(&sigma);
    let eta: Voigt = std::array::from_fn(|i| s[i] - alpha[i]);
    let eta_norm = dot(&eta, &eta).sqrt();
    let q_trial = (1.5f64).sqrt() * eta_norm;
    let f_trial = q_trial - mat.yield_stress;

    // Mandel elastic stiffness
    let mut d = [[0.0; 6]; 6];
    for i in 0..6 {
        if i < 3 {
            for j in 0..3 {
                d[i][j] = lam;
            }
        }
        d[i][i] += 2.0 * g;
    }

    if f_trial <= 1e-12 * mat.yield_stress {
        return ReturnMap {
            stress: mandel_to_stress(&sigma),
            tangent: mandel_tangent_to_voigt(&d),
            strain: *strain,
            state: *state,
            delta_lambda: 0.0,
            yielded: false,
            iterations: 0,
        };
    }

    let dlambda = f_trial / (3.0 * g + 1.5 * h);
    let n: Voigt = std::array::from_fn(|i| eta[i] / eta_norm);
    let scale = (1.5f64).sqrt() * dlambda;
    let dep: Voigt = std::array::from_fn(|i| scale * n[i]);
    for i in 0..6 {
        sigma[i] -= 2.0 * g * dep[i];
    }
    let mut new_state = *state;
    let dep_voigt = mandel_to_strain(&dep);
    for i in 0..6 {
        new_state.plastic_strain[i] += dep_voigt[i];
        new_state.back_stress[i] += h * mandel_to_stress(&dep)[i];
    }
    new_state.eq_plastic_strain += dlambda;

    let c1 = 6.0 * g * g / (3.0 * g + 1.5 * h);
    let c2 = 6.0 * g * g * dlambda / q_trial;
    for i in 0..6 {
        for j in 0..6 {
            let idev = if i == j { 1.0 } else { 0.0 } - if i < 3 && j < 3 { 1.0 / 3.0 } else { 0.0 };
            d[i][j] -= c1 * n[i] * n[j] + c2 * (idev - n[i] * n[j]);
        }
    }
    ReturnMap {
        stress: mandel_to_stress(&sigma),
        tangent: mandel_tangent_to_voigt(&d),
        strain: *strain,
        state: new_state,
        delta_lambda: dlambda,
        yielded: true,
        iterations: 0,
    }
}

fn mandel_tangent_to_voigt(d: &Tangent) -> Tangent {
    let t = |i: usize| if i < 3 { 1.0 } else { 1.0 / SQRT2 };
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            out[i][j] = t(i) * d[i][j] * t(j);
        }
    }
    // symmetrise against round-off
    for i in 0..6 {
        for j in i + 1..6 {
            let m = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = m;
            out[j][i] = m;
        }
    }
    out
}

/// Constitutive update from the converged state of the previous load step.
///
/// In [`StressMode::PlaneStress`] the incoming `ε_zz` is ignored and solved
/// for by a scalar Newton iteration on `σ_zz = 0`; transverse shears are
/// forced to zero. Elastic updates return `state` unchanged.
pub fn return_map(
    strain: &Voigt,
    state: &MaterialState,
    mat: &Material,
    mode: StressMode,
) -> Result<ReturnMap> {
    match mode {
        StressMode::Full3d => Ok(return_map_3d(strain, state, mat)),
        StressMode::PlaneStress => plane_stress(strain, state, mat),
    }
}

fn plane_stress(strain: &Voigt, state: &MaterialState, mat: &Material) -> Result<ReturnMap> {
    let lam = mat.lame_lambda();
    let g = mat.shear_modulus();
    let ep = &state.plastic_strain;
    let mut eps = [strain[0], strain[1], 0.0, strain[3], 0.0, 0.0];
    // elastic predictor: σ_zz(trial) = 0
    eps[2] = ep[2] - lam * ((eps[0] - ep[0]) + (eps[1] - ep[1])) / (lam + 2.0 * g);

    let tol = 1e-10 * mat.yield_stress;
    let mut out = return_map_3d(&eps, state, mat);
    let mut iterations = 0;
    while out.stress[2].abs() > tol {
        if iterations == MAX_PLANE_STRESS_ITERATIONS {
            return Err(Error::ReturnMap { iterations, residual: out.stress[2].abs() });
        }
        eps[2] -= out.stress[2] / out.tangent[2][2];
        out = return_map_3d(&eps, state, mat);
        iterations += 1;
    }
    out.iterations = iterations;
    Ok(out)
}
