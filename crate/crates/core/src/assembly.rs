//! Shared element-loop helpers: per-cell Gauss rules and map evaluation.

use crate::hierarchy::{Cell, CellBasis, FunctionValues, HierarchicalMesh};
use crate::quadrature::gauss_legendre;

/// Tensor Gauss rule with `(p_u + 1) × (p_v + 1)` points, mapped onto cells.
#[derive(Clone, Debug)]
pub struct CellRule {
    nodes: [(Vec<f64>, Vec<f64>); 2],
}

impl CellRule {
    pub fn for_degrees(pu: usize, pv: usize) -> Self {
        Self { nodes: [gauss_legendre(pu + 1), gauss_legendre(pv + 1)] }
    }

    pub fn len(&self) -> usize {
        self.nodes[0].0.len() * self.nodes[1].0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points and weights on the box `[[u0, u1], [v0, v1]]`.
    pub fn on_box(&self, b: [[f64; 2]; 2], out: &mut Vec<([f64; 2], f64)>) {
        out.clear();
        let (hu, hv) = (b[0][1] - b[0][0], b[1][1] - b[1][0]);
        let (xu, wu) = &self.nodes[0];
        let (xv, wv) = &self.nodes[1];
        for (a, &x) in xu.iter().enumerate() {
            for (c, &y) in xv.iter().enumerate() {
                out.push(([b[0][0] + hu * x, b[1][0] + hv * y], wu[a] * wv[c] * hu * hv));
            }
        }
    }

    pub fn on_cell(&self, mesh: &HierarchicalMesh, c: Cell, out: &mut Vec<([f64; 2], f64)>) {
        self.on_box(mesh.cell_bounds(c), out)
    }
}

/// Map value, Jacobian `jac[i][j] = ∂x_i/∂ξ_j` and Hessians `[∂11, ∂12, ∂22]` of each component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapPoint {
    pub x: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub hess: [[f64; 3]; 2],
}

impl MapPoint {
    pub fn det(&self) -> f64 {
        self.jac[0][0] * self.jac[1][1] - self.jac[0][1] * self.jac[1][0]
    }

    /// Physical gradient `Dx^{-T} ∇_ξ φ`.
    pub fn physical_grad(&self, g: [f64; 2]) -> [f64; 2] {
        let d = self.det();
        let j = &self.jac;
        [(j[1][1] * g[0] - j[1][0] * g[1]) / d, (-j[0][1] * g[0] + j[0][0] * g[1]) / d]
    }
}

/// Evaluates `Σ c_k β_k` from the combined values of a cell's functions.
pub fn map_point(control: &[[f64; 2]], cb: &CellBasis, fv: &FunctionValues) -> MapPoint {
    let mut m = MapPoint::default();
    for (r, &g) in cb.functions.iter().enumerate() {
        let c = control[g];
        for i in 0..2 {
            m.x[i] += c[i] * fv.value[r];
            m.jac[i][0] += c[i] * fv.grad[r][0];
            m.jac[i][1] += c[i] * fv.grad[r][1];
            for h in 0..3 {
                m.hess[i][h] += c[i] * fv.hess[r][h];
            }
        }
    }
    m
}
