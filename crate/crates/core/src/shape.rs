//! Companion fit, shape directions, per-function shape gradients and marking.

use std::sync::Arc;

use crate::boundary::{fit_boundary, BoundaryCurve, ExactBoundary, FitConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{BoundaryDofSet, Cell, FunctionId, FunctionValues, HierarchicalMesh, Side, ThbBasis};
use crate::linalg::{CholeskySolver, LuSolver, Triplets};
use crate::param::{egg_linearization, express_curve};
use crate::quadrature::gauss_legendre;
use crate::pde::{BoundaryKind, QoiPlace, QoiSpec, Solution};
use crate::spline::LocalValues;

/// Boundary-refined fit `F⁺` and its control discrepancies against `F_n`.
pub struct Companion {
    pub mesh: HierarchicalMesh,
    pub curve: BoundaryCurve,
    /// Control points of `F_n` re-expressed on the companion boundary functions.
    pub coarse: Vec<[f64; 2]>,
    /// `Δc = c⁺ − c̄` per companion boundary function.
    pub delta: Vec<[f64; 2]>,
}

impl Companion {
    pub fn dofs(&self) -> &Arc<BoundaryDofSet> {
        self.curve.dofs()
    }

    pub fn basis(&self) -> &Arc<ThbBasis> {
        self.curve.basis()
    }
}

/// Refines every active cell touching the boundary once.
pub fn boundary_refinement(mesh: &HierarchicalMesh) -> Result<HierarchicalMesh> {
    let cells: Vec<Cell> = mesh.active_cells().into_iter().filter(|&c| mesh.touches_boundary(c)).collect();
    mesh.refine_cells(&cells)
}

pub fn companion_fit(curve: &BoundaryCurve, exact: &ExactBoundary, cfg: &FitConfig) -> Result<Companion> {
    let mesh = boundary_refinement(curve.basis().mesh())?;
    let basis = Arc::new(ThbBasis::new(mesh.clone()));
    let dofs = Arc::new(BoundaryDofSet::new(basis.clone()));
    let fine = fit_boundary(exact, dofs, cfg)?;
    let coarse = express_curve(curve, &basis)?.control_points().to_vec();
    let delta = fine
        .control_points()
        .iter()
        .zip(&coarse)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
        .collect();
    Ok(Companion { mesh, curve: fine, coarse, delta })
}

/// Vector field `θ = Σ_k a_k β⁺_k` over the companion boundary functions.
#[derive(Clone, Debug)]
pub struct ShapeDirection {
    pub dofs: Arc<BoundaryDofSet>,
    /// Amplitude per boundary position, one entry per axis.
    pub amplitude: Vec<[f64; 2]>,
}

impl ShapeDirection {
    /// `a β⁺_k e_axis`.
    pub fn single(dofs: Arc<BoundaryDofSet>, position: usize, axis: usize, a: f64) -> Self {
        let mut amplitude = vec![[0.0; 2]; dofs.len()];
        amplitude[position][axis] = a;
        Self { dofs, amplitude }
    }
}

/// Per-point data shared by all directions.
struct Sample {
    w: f64,
    jac: [[f64; 2]; 2],
    grad_u: [f64; 2],
    grad_p: [f64; 2],
    p: f64,
    f: f64,
    grad_f: [f64; 2],
}

fn physical(jac: &[[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    let d = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    [(jac[1][1] * g[0] - jac[1][0] * g[1]) / d, (-jac[0][1] * g[0] + jac[0][0] * g[1]) / d]
}

/// Volume integrand of `dJ(Ω | β e_k)` at one point, for both `k`.
fn volume_kernel(s: &Sample, beta: f64, gb: [f64; 2]) -> [f64; 2] {
    let uu = s.grad_u[0] * s.grad_p[0] + s.grad_u[1] * s.grad_p[1] - s.f * s.p;
    let bu = gb[0] * s.grad_u[0] + gb[1] * s.grad_u[1];
    let bp = gb[0] * s.grad_p[0] + gb[1] * s.grad_p[1];
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = s.w * (gb[k] * uu - bu * s.grad_p[k] - bp * s.grad_u[k] - s.grad_f[k] * beta * s.p);
    }
    out
}

/// Walks the state mesh and calls `visit(slot, [∂/∂x, ∂/∂y])` for every local contribution of
/// the carrier functions of `dofs.basis()` at unit amplitude, with the interior map held fixed.
///
/// `slot` selects the functions of interest by global index; boundary terms see only the
/// functions with a trace.
fn accumulate(
    sol: &Solution,
    qoi: &QoiSpec,
    dofs: &BoundaryDofSet,
    slot: impl Fn(usize) -> Option<usize>,
    mut visit: impl FnMut(usize, [f64; 2]),
) -> Result<()> {
    let sys = &sol.system;
    let sbasis = sys.basis();
    let cbasis = dofs.basis();
    if !cbasis.mesh().is_refined_by(sbasis.mesh()) {
        return Err(Error::Structure("shape directions are not resolved by the analysis mesh".into()));
    }
    let problem = sys.problem();
    let (mut lv, mut fv) = (LocalValues::default(), FunctionValues::default());
    let (mut clv, mut cfv) = (LocalValues::default(), FunctionValues::default());
    let mut local: Vec<(usize, usize)> = Vec::new();
    let mut acc: Vec<[f64; 2]> = Vec::new();

    for (cb, (c, pts)) in sbasis.cells().iter().zip(&sys.registry().cells) {
        let ccb = cbasis.cell_basis_on(*c)?;
        local.clear();
        for (r, &g) in ccb.functions.iter().enumerate() {
            if let Some(k) = slot(g) {
                local.push((r, k));
            }
        }
        if local.is_empty() {
            continue;
        }
        acc.clear();
        acc.resize(local.len(), [0.0; 2]);
        for q in pts {
            sbasis.local_values(*c, q.xi, 1, &mut lv);
            cb.combine(&lv, 1, &mut fv);
            let (mut gu, mut gp, mut p) = ([0.0; 2], [0.0; 2], 0.0);
            for (r, &g) in cb.functions.iter().enumerate() {
                let (a, b) = (sol.state.coeffs[g], sol.adjoint.coeffs[g]);
                p += b * fv.value[r];
                for d in 0..2 {
                    gu[d] += a * fv.grad[r][d];
                    gp[d] += b * fv.grad[r][d];
                }
            }
            let (f, grad_f) = problem.source.eval(q.x);
            let s = Sample {
                w: q.w,
                jac: q.jac,
                grad_u: physical(&q.jac, gu),
                grad_p: physical(&q.jac, gp),
                p,
                f,
                grad_f,
            };
            cbasis.local_values(*c, q.xi, 1, &mut clv);
            ccb.combine(&clv, 1, &mut cfv);
            for (k, &(r, _)) in local.iter().enumerate() {
                let v = volume_kernel(&s, cfv.value[r], physical(&s.jac, cfv.grad[r]));
                acc[k][0] += v[0];
                acc[k][1] += v[1];
            }
        }
        for (k, &(_, out)) in local.iter().enumerate() {
            visit(out, acc[k]);
        }
    }

    // moving Neumann boundary: −∫ [∇g·θ |x'| + g (x'·θ')/|x'|] p dt
    if !problem.neumann.is_zero() {
        let sdofs = sys.boundary_dofs();
        let (mut v, mut d) = (Vec::new(), Vec::new());
        let (mut cv, mut cd) = (Vec::new(), Vec::new());
        for (ei, pts) in &sys.registry().edges {
            let e = &sdofs.edges()[*ei];
            if problem.conditions.get(e.side) != BoundaryKind::Neumann {
                continue;
            }
            for pt in pts {
                sdofs.edge_values(e, pt.t, &mut v, &mut d);
                let p: f64 = e.dofs.iter().zip(&v).map(|(&pos, &b)| sol.adjoint.coeffs[sdofs.indices()[pos]] * b).sum();
                let (g, gg) = problem.neumann.eval(pt.x);
                let speed = pt.speed();
                let ce = dofs.edge_at(e.side, pt.t);
                dofs.edge_values(ce, pt.t, &mut cv, &mut cd);
                for (r, &pos) in ce.dofs.iter().enumerate() {
                    let Some(k) = slot(dofs.indices()[pos]) else { continue };
                    let mut out = [0.0; 2];
                    for a in 0..2 {
                        out[a] = -pt.w * (gg[a] * cv[r] * speed + g * pt.tangent[a] * cd[r] / speed) * p;
                    }
                    visit(k, out);
                }
            }
        }
    }

    // quantity-of-interest regions move with the domain as well
    let mut err = None;
    sys.qoi_points(&sol.state, qoi, |q| {
        if q.j == 0.0 || err.is_some() {
            return;
        }
        match q.place {
            QoiPlace::Volume { jac } => {
                let ccb = match cbasis.cell_basis_on(q.cell) {
                    Ok(c) => c,
                    Err(e) => {
                        err = Some(e);
                        return;
                    }
                };
                cbasis.local_values(q.cell, q.xi, 1, &mut clv);
                ccb.combine(&clv, 1, &mut cfv);
                for (r, &g) in ccb.functions.iter().enumerate() {
                    if let Some(k) = slot(g) {
                        let gb = physical(&jac, cfv.grad[r]);
                        visit(k, [q.w * q.j * gb[0], q.w * q.j * gb[1]]);
                    }
                }
            }
            QoiPlace::Boundary { side, t, tangent } => {
                let ce = dofs.edge_at(side, t);
                let (mut cv, mut cd) = (Vec::new(), Vec::new());
                dofs.edge_values(ce, t, &mut cv, &mut cd);
                let s2 = tangent[0] * tangent[0] + tangent[1] * tangent[1];
                for (r, &pos) in ce.dofs.iter().enumerate() {
                    if let Some(k) = slot(dofs.indices()[pos]) {
                        visit(k, [q.w * q.j * tangent[0] * cd[r] / s2, q.w * q.j * tangent[1] * cd[r] / s2]);
                    }
                }
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// `∂J/∂θ` for `θ = β_k e_x, β_k e_y` over the boundary functions of `dofs`, with `θ` extended
/// into the domain by the carrier function itself.
pub fn partial_gradients(sol: &Solution, qoi: &QoiSpec, dofs: &BoundaryDofSet) -> Result<Vec<[f64; 2]>> {
    let mut out = vec![[0.0; 2]; dofs.len()];
    accumulate(sol, qoi, dofs, |g| dofs.position(g), |k, v| {
        out[k][0] += v[0];
        out[k][1] += v[1];
    })?;
    Ok(out)
}

/// Derivative of `J` with respect to each boundary control point of the map, with the interior
/// control points following the harmonic-map system.
///
/// Entries follow the positions of [`BoundaryDofSet::new`] on the map basis.
pub fn control_sensitivity(sol: &Solution, qoi: &QoiSpec) -> Result<(Arc<BoundaryDofSet>, Vec<[f64; 2]>)> {
    let map = sol.system.map();
    let basis = map.basis();
    let dofs = Arc::new(BoundaryDofSet::new(basis.clone()));
    let mut all = vec![[0.0; 2]; basis.dim()];
    accumulate(sol, qoi, &dofs, Some, |g, v| {
        all[g][0] += v[0];
        all[g][1] += v[1];
    })?;
    let lin = egg_linearization(map)?;
    let mut out: Vec<[f64; 2]> = dofs.indices().iter().map(|&g| all[g]).collect();
    if lin.interior.is_empty() {
        return Ok((dofs, out));
    }
    // (∂R/∂x_int)ᵀ λ = ∂L/∂x_int, then dJ/dx_b = ∂L/∂x_b − (∂R/∂x_b)ᵀ λ
    let rhs: Vec<f64> = lin.interior.iter().flat_map(|&g| all[g]).collect();
    let transposed = lin
        .interior_block
        .as_ref()
        .transpose()
        .to_col_major()
        .map_err(|e| Error::Solver(format!("transpose failed: {e:?}")))?;
    let lambda = LuSolver::new(transposed)?.solve(&rhs)?;
    let c = &lin.coupling;
    let (cp, ri, val) = (c.col_ptr(), c.row_idx(), c.val());
    for (pos, &g) in dofs.indices().iter().enumerate() {
        for a in 0..2 {
            let col = 2 * g + a;
            let s: f64 = (cp[col]..cp[col + 1]).map(|k| val[k] * lambda[ri[k]]).sum();
            out[pos][a] -= s;
        }
    }
    Ok((dofs, out))
}

/// `dJ(Ω | β⁺_k e_x)` and `dJ(Ω | β⁺_k e_y)` for every boundary function of `dofs`.
///
/// The boundary moves by the trace of `β⁺_k`; the interior follows the parameterization. The
/// map basis must refine the basis of `dofs`.
pub fn unit_gradients(sol: &Solution, qoi: &QoiSpec, dofs: &BoundaryDofSet) -> Result<Vec<[f64; 2]>> {
    let map = sol.system.map();
    if !dofs.basis().mesh().is_refined_by(map.basis().mesh()) {
        return Err(Error::Structure("shape directions are not resolved by the map basis".into()));
    }
    let (mdofs, sens) = control_sensitivity(sol, qoi)?;
    // y = M⁻¹ s on the trace space of the map, then ∫ β⁺_k Σ y_b φ_b dt
    let p = mdofs.basis().degrees().0.max(mdofs.basis().degrees().1);
    let (gx, gw) = gauss_legendre(p + 2);
    let mut mass = Triplets::new(mdofs.len(), mdofs.len());
    let (mut v, mut d) = (Vec::new(), Vec::new());
    for e in mdofs.edges() {
        let h = e.t1 - e.t0;
        for (x, w) in gx.iter().zip(&gw) {
            mdofs.edge_values(e, e.t0 + x * h, &mut v, &mut d);
            for (r, &a) in e.dofs.iter().enumerate() {
                for (s, &b) in e.dofs.iter().enumerate() {
                    mass.push(a, b, w * h * v[r] * v[s]);
                }
            }
        }
    }
    let solver = CholeskySolver::new(mass.build()?)?;
    let y: Vec<Vec<f64>> = (0..2).map(|a| solver.solve(&sens.iter().map(|s| s[a]).collect::<Vec<_>>())).collect();
    let mut out = vec![[0.0; 2]; dofs.len()];
    let (mut cv, mut cd) = (Vec::new(), Vec::new());
    for e in mdofs.edges() {
        let h = e.t1 - e.t0;
        for (x, w) in gx.iter().zip(&gw) {
            let t = e.t0 + x * h;
            mdofs.edge_values(e, t, &mut v, &mut d);
            let mut yt = [0.0; 2];
            for (r, &b) in e.dofs.iter().enumerate() {
                yt[0] += y[0][b] * v[r];
                yt[1] += y[1][b] * v[r];
            }
            let ce = dofs.edge_at(e.side, t);
            dofs.edge_values(ce, t, &mut cv, &mut cd);
            for (r, &k) in ce.dofs.iter().enumerate() {
                out[k][0] += w * h * cv[r] * yt[0];
                out[k][1] += w * h * cv[r] * yt[1];
            }
        }
    }
    Ok(out)
}

/// `dJ(Ω | θ)` for a general direction.
pub fn directional_derivative(sol: &Solution, qoi: &QoiSpec, dir: &ShapeDirection) -> Result<f64> {
    if dir.amplitude.len() != dir.dofs.len() {
        return Err(Error::Structure("direction amplitudes do not match its boundary functions".into()));
    }
    let unit = unit_gradients(sol, qoi, &dir.dofs)?;
    Ok(unit.iter().zip(&dir.amplitude).map(|(g, a)| g[0] * a[0] + g[1] * a[1]).sum())
}

/// Shape gradients of one iteration and the resulting marking.
#[derive(Clone, Debug, Default)]
pub struct GradientReport {
    pub functions: Vec<FunctionId>,
    /// Side each function belongs to (first side found along the boundary).
    pub sides: Vec<Side>,
    pub delta: Vec<[f64; 2]>,
    /// Unit-amplitude gradients `∇Ĵ`.
    pub unit: Vec<[f64; 2]>,
    /// `∇J = (Δc_x ĝ_x, Δc_y ĝ_y)`.
    pub gradient: Vec<[f64; 2]>,
    pub estimator: f64,
    pub marked: Vec<usize>,
    /// Linearized change `Σ ∇Ĵ · Δc`.
    pub prediction: f64,
}

impl GradientReport {
    pub fn norm(&self, k: usize) -> f64 {
        self.gradient[k][0].hypot(self.gradient[k][1])
    }

    pub fn marked_functions(&self) -> Vec<FunctionId> {
        self.marked.iter().map(|&k| self.functions[k]).collect()
    }
}

/// Combines unit gradients with the discrepancies and marks by the maximum strategy.
pub fn assemble_report(dofs: &BoundaryDofSet, delta: &[[f64; 2]], unit: &[[f64; 2]], alpha: f64) -> GradientReport {
    let basis = dofs.basis();
    let functions: Vec<FunctionId> = dofs.indices().iter().map(|&g| basis.function(g)).collect();
    let mut sides = vec![Side::South; dofs.len()];
    let mut seen = vec![false; dofs.len()];
    for e in dofs.edges() {
        for &pos in &e.dofs {
            if !seen[pos] {
                seen[pos] = true;
                sides[pos] = e.side;
            }
        }
    }
    let gradient: Vec<[f64; 2]> = delta.iter().zip(unit).map(|(d, u)| [d[0] * u[0], d[1] * u[1]]).collect();
    let prediction = gradient.iter().map(|g| g[0] + g[1]).sum();
    let mut report = GradientReport {
        functions,
        sides,
        delta: delta.to_vec(),
        unit: unit.to_vec(),
        gradient,
        estimator: 0.0,
        marked: Vec::new(),
        prediction,
    };
    report.estimator = (0..report.gradient.len()).map(|k| report.norm(k)).fold(0.0, f64::max);
    if report.estimator > 0.0 {
        let threshold = alpha * report.estimator;
        report.marked = (0..report.gradient.len()).filter(|&k| report.norm(k) >= threshold).collect();
    }
    report
}
