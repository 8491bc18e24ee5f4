use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::{Geometry, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fem::element;
use crate::linalg::reverse_cuthill_mckee;

/// Structured bilinear quadrilateral mesh.
///
/// Nodes are renumbered with reverse Cuthill–McKee after merging so the
/// stiffness band stays narrow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node indices.
    pub quads: Vec<[usize; 4]>,
    /// Nodes with both displacement components fixed to zero.
    pub dirichlet_nodes: Vec<usize>,
    /// Top boundary edges, ordered by increasing x.
    pub neumann_edges: Vec<[usize; 2]>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.quads.len()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Index of the node closest to `p`; ties go to the lower index.
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let d2 = |q: &[f64; 2]| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        (0..self.nodes.len())
            .min_by(|&a, &b| d2(&self.nodes[a]).total_cmp(&d2(&self.nodes[b])).then(a.cmp(&b)))
            .unwrap_or(0)
    }

    /// Half-bandwidth (in dofs) of the assembled stiffness matrix.
    pub fn dof_bandwidth(&self) -> usize {
        self.quads
            .iter()
            .map(|q| {
                let lo = q.iter().min().unwrap();
                let hi = q.iter().max().unwrap();
                2 * (hi - lo) + 1
            })
            .max()
            .unwrap_or(1)
    }

    /// Checks index ranges and that every element has a positive Jacobian
    /// at all Gauss points.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, q) in self.quads.iter().enumerate() {
            if q.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("element {e} references a missing node")));
            }
            let coords = q.map(|i| self.nodes[i]);
            for gp in element::GAUSS_POINTS {
                let det = element::jacobian(&coords, gp[0], gp[1]).1;
                if !(det > 0.0) {
                    return Err(Error::Mesh(format!("element {e} has non-positive Jacobian {det:.3e}")));
                }
            }
        }
        if self.dirichlet_nodes.iter().any(|&i| i >= n) {
            return Err(Error::Mesh("dirichlet set references a missing node".into()));
        }
        if self.neumann_edges.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Mesh("neumann edge references a missing node".into()));
        }
        Ok(())
    }
}

/// Builds the mesh for a scenario.
pub fn build_mesh(scenario: &ScenarioConfig) -> Result<Mesh> {
    let raw = match &scenario.geometry {
        Geometry::Rectangle { length, height, nx, ny } => rectangle(*length, *height, *nx, *ny)?,
        Geometry::Table {
            top_width,
            top_height,
            top_nx,
            top_ny,
            leg_width,
            leg_height,
            leg_nx,
            leg_ny,
        } => table(
            *top_width,
            *top_height,
            *top_nx,
            *top_ny,
            *leg_width,
            *leg_height,
            *leg_nx,
            *leg_ny,
        )?,
    };
    let mesh = renumber(raw);
    mesh.validate()?;
    Ok(mesh)
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {v}")))
    }
}

fn check_count(what: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive")))
    }
}

/// Merges grid blocks by quantised coordinates.
struct Builder {
    nodes: Vec<[f64; 2]>,
    index: HashMap<(i64, i64), usize>,
    quads: Vec<[usize; 4]>,
    quantum: f64,
}

impl Builder {
    fn new(quantum: f64) -> Self {
        Self { nodes: Vec::new(), index: HashMap::new(), quads: Vec::new(), quantum }
    }

    fn node(&mut self, p: [f64; 2]) -> usize {
        let key = ((p[0] / self.quantum).round() as i64, (p[1] / self.quantum).round() as i64);
        *self.index.entry(key).or_insert_with(|| {
            self.nodes.push(p);
            self.nodes.len() - 1
        })
    }

    fn block(&mut self, x0: f64, y0: f64, w: f64, h: f64, nx: usize, ny: usize) {
        let mut ids = vec![vec![0usize; nx + 1]; ny + 1];
        for (j, row) in ids.iter_mut().enumerate() {
            for (i, id) in row.iter_mut().enumerate() {
                *id = self.node([x0 + w * i as f64 / nx as f64, y0 + h * j as f64 / ny as f64]);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                self.quads.push([ids[j][i], ids[j][i + 1], ids[j + 1][i + 1], ids[j + 1][i]]);
            }
        }
    }
}

fn rectangle(length: f64, height: f64, nx: usize, ny: usize) -> Result<Mesh> {
    check_positive("length", length)?;
    check_positive("height", height)?;
    check_count("nx", nx)?;
    check_count("ny", ny)?;
    let mut b = Builder::new(1e-6 * (length / nx as f64).min(height / ny as f64));
    b.block(0.0, 0.0, length, height, nx, ny);
    let tol = 1e-9 * length.max(height);
    let dirichlet_nodes: Vec<usize> = (0..b.nodes.len()).filter(|&i| b.nodes[i][0].abs() <= tol).collect();
    let neumann_edges = top_edges(&b.nodes, &b.quads, height, tol);
    Ok(Mesh { nodes: b.nodes, quads: b.quads, dirichlet_nodes, neumann_edges })
}

#[allow(clippy::too_many_arguments)]
fn table(
    top_width: f64,
    top_height: f64,
    top_nx: usize,
    top_ny: usize,
    leg_width: f64,
    leg_height: f64,
    leg_nx: usize,
    leg_ny: usize,
) -> Result<Mesh> {
    for (what, v) in [
        ("top_width", top_width),
        ("top_height", top_height),
        ("leg_width", leg_width),
        ("leg_height", leg_height),
    ] {
        check_positive(what, v)?;
    }
    for (what, v) in [("top_nx", top_nx), ("top_ny", top_ny), ("leg_nx", leg_nx), ("leg_ny", leg_ny)] {
        check_count(what, v)?;
    }
    let dx_top = top_width / top_nx as f64;
    let dx_leg = leg_width / leg_nx as f64;
    if (dx_top - dx_leg).abs() > 1e-9 * dx_top {
        return Err(Error::Config(format!(
            "leg element width {dx_leg} does not match tabletop element width {dx_top}"
        )));
    }
    let mut b = Builder::new(1e-6 * dx_top.min(leg_height / leg_ny as f64).min(top_height / top_ny as f64));
    b.block(0.0, 0.0, leg_width, leg_height, leg_nx, leg_ny);
    b.block(top_width - leg_width, 0.0, leg_width, leg_height, leg_nx, leg_ny);
    b.block(0.0, leg_height, top_width, top_height, top_nx, top_ny);

    let expected_nodes = (top_nx + 1) * (top_ny + 1) + 2 * (leg_nx + 1) * leg_ny;
    let expected_elements = top_nx * top_ny + 2 * leg_nx * leg_ny;
    if b.nodes.len() != expected_nodes || b.quads.len() != expected_elements {
        return Err(Error::Config(format!(
            "table blocks do not merge conformingly: {} nodes / {} elements, expected {expected_nodes} / {expected_elements}",
            b.nodes.len(),
            b.quads.len()
        )));
    }
    let tol = 1e-9 * top_width.max(leg_height);
    let dirichlet_nodes: Vec<usize> = (0..b.nodes.len()).filter(|&i| b.nodes[i][1].abs() <= tol).collect();
    let neumann_edges = top_edges(&b.nodes, &b.quads, leg_height + top_height, tol);
    Ok(Mesh { nodes: b.nodes, quads: b.quads, dirichlet_nodes, neumann_edges })
}

fn top_edges(nodes: &[[f64; 2]], quads: &[[usize; 4]], y_top: f64, tol: f64) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = quads
        .iter()
        .filter_map(|q| {
            // edge 2→3 is the upper edge of a counter-clockwise quad
            let (a, b) = (q[3], q[2]);
            let on_top = (nodes[a][1] - y_top).abs() <= tol && (nodes[b][1] - y_top).abs() <= tol;
            on_top.then_some([a, b])
        })
        .collect();
    edges.sort_by(|e, f| nodes[e[0]][0].total_cmp(&nodes[f[0]][0]));
    edges
}

fn renumber(mesh: Mesh) -> Mesh {
    let n = mesh.nodes.len();
    let mut adjacency = vec![Vec::new(); n];
    for q in &mesh.quads {
        for &a in q {
            for &b in q {
                if a != b && !adjacency[a].contains(&b) {
                    adjacency[a].push(b);
                }
            }
        }
    }
    let order = reverse_cuthill_mckee(&adjacency);
    let mut new_of = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }
    let mut dirichlet_nodes: Vec<usize> = mesh.dirichlet_nodes.iter().map(|&i| new_of[i]).collect();
    dirichlet_nodes.sort_unstable();
    Mesh {
        nodes: order.iter().map(|&old| mesh.nodes[old]).collect(),
        quads: mesh.quads.iter().map(|q| q.map(|i| new_of[i])).collect(),
        dirichlet_nodes,
        neumann_edges: mesh.neumann_edges.iter().map(|e| e.map(|i| new_of[i])).collect(),
    }
}
