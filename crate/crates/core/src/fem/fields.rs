//! Nodal field variables recovered from integration-point results.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::element::EXTRAPOLATION;
use crate::fem::material::{equivalent_strain, von_mises, MaterialState, Voigt};
use crate::fem::mesh::Mesh;

/// Field variables produced per load step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldId {
    /// Displacement `u`, 2 per node (mm).
    #[serde(rename = "u")]
    Displacement,
    /// Von Mises stress, 1 per node (MPa).
    #[serde(rename = "sigma_vm")]
    VonMises,
    /// Equivalent plastic strain, 1 per node.
    #[serde(rename = "eps_pl_eq")]
    EqPlasticStrain,
    /// Plastic strain tensor, 6 per node (engineering Voigt).
    #[serde(rename = "eps_pl")]
    PlasticStrain,
    /// Equivalent total strain, 1 per node.
    #[serde(rename = "eps_eq")]
    EqStrain,
}

impl FieldId {
    pub const ALL: [FieldId; 5] = [
        FieldId::Displacement,
        FieldId::VonMises,
        FieldId::EqPlasticStrain,
        FieldId::PlasticStrain,
        FieldId::EqStrain,
    ];

    /// The four fields the multi-task surrogate is trained on, in output order.
    pub const PRIMARY: [FieldId; 4] =
        [FieldId::Displacement, FieldId::VonMises, FieldId::EqPlasticStrain, FieldId::PlasticStrain];

    pub fn components(self) -> usize {
        match self {
            FieldId::Displacement => 2,
            FieldId::PlasticStrain => 6,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldId::Displacement => "u",
            FieldId::VonMises => "sigma_vm",
            FieldId::EqPlasticStrain => "eps_pl_eq",
            FieldId::PlasticStrain => "eps_pl",
            FieldId::EqStrain => "eps_eq",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnknownField(s.to_string()))
    }
}

/// Integration-point results of one converged step, four per element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussData {
    pub states: Vec<MaterialState>,
    pub stresses: Vec<Voigt>,
    pub strains: Vec<Voigt>,
}

/// Nodal vectors of every field at one load step; multi-component fields
/// are interleaved per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodalFields {
    pub values: [Vec<f64>; 5],
}

impl NodalFields {
    pub fn zeros(n_nodes: usize) -> Self {
        Self { values: FieldId::ALL.map(|f| vec![0.0; f.components() * n_nodes]) }
    }

    pub fn get(&self, field: FieldId) -> &[f64] {
        &self.values[field.index()]
    }
}

/// Nodal fields over a load path. Step 0 (zero load, all fields zero) is
/// implied and not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHistory {
    pub n_nodes: usize,
    pub steps: Vec<NodalFields>,
}

impl FieldHistory {
    pub fn new(n_nodes: usize) -> Self {
        Self { n_nodes, steps: Vec::new() }
    }

    pub fn push(&mut self, fields: NodalFields) {
        self.steps.push(fields);
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn field(&self, field: FieldId, step: usize) -> &[f64] {
        self.steps[step].get(field)
    }
}

/// Recovers nodal fields: displacements are read directly, integration-point
/// quantities are extrapolated bilinearly to element corners and averaged
/// over the elements sharing each node.
pub fn extract_nodal_fields(mesh: &Mesh, u: &[f64], gauss: &GaussData) -> NodalFields {
    let n = mesh.n_nodes();
    let mut out = NodalFields::zeros(n);
    out.values[FieldId::Displacement.index()].copy_from_slice(&u[..2 * n]);

    let mut count = vec![0u32; n];
    for (e, q) in mesh.quads.iter().enumerate() {
        let gp = |g: usize| 4 * e + g;
        let vm: [f64; 4] = std::array::from_fn(|g| von_mises(&gauss.stresses[gp(g)]));
        let peeq: [f64; 4] = std::array::from_fn(|g| gauss.states[gp(g)].eq_plastic_strain);
        let eeq: [f64; 4] = std::array::from_fn(|g| equivalent_strain(&gauss.strains[gp(g)]));
        for (a, &node) in q.iter().enumerate() {
            let w = &EXTRAPOLATION[a];
            let ex = |v: &[f64; 4]| w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3];
            out.values[FieldId::VonMises.index()][node] += ex(&vm);
            out.values[FieldId::EqPlasticStrain.index()][node] += ex(&peeq);
            out.values[FieldId::EqStrain.index()][node] += ex(&eeq);
            for c in 0..6 {
                let comp: [f64; 4] = std::array::from_fn(|g| gauss.states[gp(g)].plastic_strain[c]);
                out.values[FieldId::PlasticStrain.index()][6 * node + c] += ex(&comp);
            }
            count[node] += 1;
        }
    }
    for field in [FieldId::VonMises, FieldId::EqPlasticStrain, FieldId::EqStrain, FieldId::PlasticStrain] {
        let k = field.components();
        for (i, v) in out.values[field.index()].iter_mut().enumerate() {
            let c = count[i / k];
            if c > 0 {
                *v /= c as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::fem::mesh::build_mesh;

    fn uniform_gauss(mesh: &Mesh, stress: Voigt) -> GaussData {
        let n = 4 * mesh.n_elements();
        GaussData {
            states: vec![MaterialState::default(); n],
            stresses: vec![stress; n],
            strains: vec![[0.0; 6]; n],
        }
    }

    #[test]
    fn uniform_stress_gives_uniform_nodal_von_mises() {
        let mesh = build_mesh(&ScenarioConfig::rectangle(3.0, 2.0, 3, 2)).unwrap();
        let stress = [120.0, -40.0, 0.0, 35.0, 0.0, 0.0];
        let f = extract_nodal_fields(&mesh, &vec![0.0; mesh.n_dofs()], &uniform_gauss(&mesh, stress));
        let expected = von_mises(&stress);
        for v in f.get(FieldId::VonMises) {
            assert!((v - expected).abs() < 1e-10 * expected);
        }
    }

    #[test]
    fn table_field_lengths() {
        let mesh = build_mesh(&ScenarioConfig::table()).unwrap();
        let f = extract_nodal_fields(&mesh, &vec![0.0; mesh.n_dofs()], &uniform_gauss(&mesh, [0.0; 6]));
        assert_eq!(f.get(FieldId::Displacement).len(), 1932);
        assert_eq!(f.get(FieldId::VonMises).len(), 966);
        assert_eq!(f.get(FieldId::EqPlasticStrain).len(), 966);
        assert_eq!(f.get(FieldId::PlasticStrain).len(), 5796);
    }

    #[test]
    fn single_element_extrapolation_matches_hand_oracle() {
        let mesh = build_mesh(&ScenarioConfig::rectangle(1.0, 1.0, 1, 1)).unwrap();
        let mut g = uniform_gauss(&mesh, [0.0; 6]);
        let gauss_values = [1.0, 2.0, 4.0, 3.0];
        for (i, v) in gauss_values.iter().enumerate() {
            g.states[i].eq_plastic_strain = *v;
        }
        let f = extract_nodal_fields(&mesh, &vec![0.0; mesh.n_dofs()], &g);
        // bilinear field through the Gauss values, v(ξ,η) = 2.5 + a ξ + b η + c ξη,
        // evaluated at ξ,η = ±√3 (corners in Gauss-point scaled coordinates)
        let s3 = 3f64.sqrt();
        let at = |xi: f64, eta: f64| {
            let n = [
                0.25 * (1.0 - xi) * (1.0 - eta),
                0.25 * (1.0 + xi) * (1.0 - eta),
                0.25 * (1.0 + xi) * (1.0 + eta),
                0.25 * (1.0 - xi) * (1.0 + eta),
            ];
            n.iter().zip(gauss_values).map(|(a, b)| a * b).sum::<f64>()
        };
        let q = mesh.quads[0];
        let corners = [[-s3, -s3], [s3, -s3], [s3, s3], [-s3, s3]];
        for (a, c) in corners.iter().enumerate() {
            let got = f.get(FieldId::EqPlasticStrain)[q[a]];
            assert!((got - at(c[0], c[1])).abs() < 1e-12, "corner {a}: {got}");
        }
    }

    #[test]
    fn field_ids_round_trip_through_names() {
        for f in FieldId::ALL {
            assert_eq!(f.as_str().parse::<FieldId>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
        assert!("nope".parse::<FieldId>().is_err());
    }
}
