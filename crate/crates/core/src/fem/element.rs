//! Bilinear quadrilateral with 2×2 Gauss quadrature.

const G: f64 = 0.577_350_269_189_625_8; // 1/√3

/// Gauss points in natural coordinates, ordered like the element corners.
pub const GAUSS_POINTS: [[f64; 2]; 4] = [[-G, -G], [G, -G], [G, G], [-G, G]];

const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

pub fn shape_functions(xi: f64, eta: f64) -> [f64; 4] {
    CORNERS.map(|c| 0.25 * (1.0 + c[0] * xi) * (1.0 + c[1] * eta))
}

/// Derivatives `[dN/dξ, dN/dη]` per node.
pub fn shape_derivatives(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    CORNERS.map(|c| [0.25 * c[0] * (1.0 + c[1] * eta), 0.25 * c[1] * (1.0 + c[0] * xi)])
}

/// Jacobian `∂x/∂ξ` and its determinant.
pub fn jacobian(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([[f64; 2]; 2], f64) {
    let dn = shape_derivatives(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += dn[a][r] * coords[a][c];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    (j, det)
}

/// Strain-displacement operator at one Gauss point and its integration weight.
#[derive(Clone, Copy, Debug)]
pub struct GaussPoint {
    /// Rows `[εxx, εyy, γxy]`, columns `[u0x, u0y, u1x, …]`.
    pub b: [[f64; 8]; 3],
    /// `det J · w · thickness` (all 2×2 Gauss weights are 1).
    pub weight: f64,
}

pub fn gauss_point(coords: &[[f64; 2]; 4], xi: f64, eta: f64, thickness: f64) -> GaussPoint {
    let (j, det) = jacobian(coords, xi, eta);
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let dn = shape_derivatives(xi, eta);
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        let dx = inv[0][0] * dn[a][0] + inv[0][1] * dn[a][1];
        let dy = inv[1][0] * dn[a][0] + inv[1][1] * dn[a][1];
        b[0][2 * a] = dx;
        b[1][2 * a + 1] = dy;
        b[2][2 * a] = dy;
        b[2][2 * a + 1] = dx;
    }
    GaussPoint { b, weight: det * thickness }
}

/// `EXTRAPOLATION[node][gp]`: nodal value of the bilinear field through the
/// four Gauss values.
pub const EXTRAPOLATION: [[f64; 4]; 4] = {
    let a = 1.0 + 0.866_025_403_784_438_6; // 1 + √3/2
    let b = -0.5;
    let c = 1.0 - 0.866_025_403_784_438_6;
    [[a, b, c, b], [b, a, b, c], [c, b, a, b], [b, c, b, a]]
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        for (xi, eta) in [(0.1, -0.7), (-1.0, 1.0), (0.0, 0.0)] {
            let s: f64 = shape_functions(xi, eta).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn extrapolation_rows_match_scaled_shape_functions() {
        let s3 = 3f64.sqrt();
        for (node, c) in CORNERS.iter().enumerate() {
            // the Gauss points are the corners of a square scaled by 1/√3
            let n = shape_functions(c[0] * s3, c[1] * s3);
            for gp in 0..4 {
                assert!((n[gp] - EXTRAPOLATION[node][gp]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_square_b_operator_reproduces_linear_field() {
        let coords = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]];
        // u = (0.01 x, -0.02 y): εxx = 0.01, εyy = -0.02, γ = 0
        let u: Vec<f64> = coords.iter().flat_map(|p| [0.01 * p[0], -0.02 * p[1]]).collect();
        for gp in GAUSS_POINTS {
            let g = gauss_point(&coords, gp[0], gp[1], 1.0);
            let e: Vec<f64> = (0..3).map(|r| (0..8).map(|c| g.b[r][c] * u[c]).sum()).collect();
            assert!((e[0] - 0.01).abs() < 1e-15);
            assert!((e[1] + 0.02).abs() < 1e-15);
            assert!(e[2].abs() < 1e-15);
            assert!((g.weight - 0.5).abs() < 1e-15);
        }
    }
}
