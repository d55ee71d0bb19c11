//! Interior parameterization by the inverse of a harmonic map (elliptic grid generation).

use std::collections::BTreeSet;
use std::sync::Arc;

use faer::sparse::SparseColMat;
use serde::{Deserialize, Serialize};

use crate::assembly::{map_point, CellRule, MapPoint};
use crate::boundary::{project_onto_trace, BoundaryCurve};
use crate::error::{Error, Result};
use crate::hierarchy::{cells_meeting_support, BoundaryDofSet, Cell, FunctionValues, HierarchicalMesh, ThbBasis};
use crate::linalg::{CholeskySolver, LuSolver, Triplets};
use crate::spline::LocalValues;

/// Spline map `x(ξ) = Σ c_k β_k(ξ)` from the unit square onto the physical domain.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    basis: Arc<ThbBasis>,
    control: Vec<[f64; 2]>,
}

impl GeometryMap {
    pub fn new(basis: Arc<ThbBasis>, control: Vec<[f64; 2]>) -> Self {
        assert_eq!(basis.dim(), control.len());
        Self { basis, control }
    }

    pub fn basis(&self) -> &Arc<ThbBasis> {
        &self.basis
    }

    pub fn control(&self) -> &[[f64; 2]] {
        &self.control
    }

    pub fn scaled(&self, s: f64) -> Self {
        let control = self.control.iter().map(|c| [s * c[0], s * c[1]]).collect();
        Self { basis: self.basis.clone(), control }
    }

    /// Value, Jacobian and Hessians at `xi`.
    pub fn eval(&self, xi: [f64; 2]) -> Result<MapPoint> {
        let c = self.basis.mesh().locate(xi)?;
        let cb = self.basis.cell(c).expect("active cell");
        let mut lv = LocalValues::default();
        let mut fv = FunctionValues::default();
        self.basis.local_values(c, xi, 2, &mut lv);
        cb.combine(&lv, 2, &mut fv);
        Ok(map_point(&self.control, cb, &fv))
    }

    /// Largest distance between the map's trace and `curve` over `samples` points per side.
    pub fn trace_error(&self, curve: &BoundaryCurve, samples: usize) -> f64 {
        let mut err: f64 = 0.0;
        for side in crate::hierarchy::Side::ALL {
            for k in 0..=samples {
                let t = k as f64 / samples as f64;
                let a = self.eval(side.point(t)).expect("boundary point").x;
                let b = curve.eval(side, t).0;
                err = err.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()));
            }
        }
        err
    }
}

/// Newton and refinement settings for the parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EggConfig {
    /// Stopping tolerance on the largest test-function residual, relative to the boundary extent.
    pub mu: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub max_apos: usize,
}

impl Default for EggConfig {
    fn default() -> Self {
        Self { mu: 1e-6, max_newton: 50, max_halvings: 8, max_apos: 10 }
    }
}

impl EggConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config("egg tolerance mu must be positive".into()));
        }
        Ok(())
    }
}

/// One Newton step: scaled residual before the step and the accepted step length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonStep {
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EggLog {
    pub steps: Vec<NewtonStep>,
    pub final_residual: f64,
}

impl EggLog {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

/// Boundary control points of `basis` reproducing `curve`, which must lie in its trace space.
pub fn express_curve(curve: &BoundaryCurve, basis: &Arc<ThbBasis>) -> Result<BoundaryCurve> {
    if Arc::ptr_eq(curve.basis(), basis) {
        return Ok(curve.clone());
    }
    let dofs = Arc::new(BoundaryDofSet::new(basis.clone()));
    let target = |s, t| curve.eval(s, t);
    let (control, _, _) = project_onto_trace(&dofs, &target, 1.0, 0.0, &[], 1)?;
    Ok(BoundaryCurve::new(dofs, control))
}

/// Splits basis indices into boundary positions and interior unknowns.
struct Layout {
    dofs: Arc<BoundaryDofSet>,
    /// Interior unknown number of every basis function, `None` on the boundary.
    interior: Vec<Option<usize>>,
    n_int: usize,
}

impl Layout {
    fn new(basis: &Arc<ThbBasis>) -> Self {
        let dofs = Arc::new(BoundaryDofSet::new(basis.clone()));
        let mut interior = vec![None; basis.dim()];
        let mut n_int = 0;
        for (g, slot) in interior.iter_mut().enumerate() {
            if dofs.position(g).is_none() {
                *slot = Some(n_int);
                n_int += 1;
            }
        }
        Self { dofs, interior, n_int }
    }
}

/// Galerkin Laplace extension of the boundary curve into the interior.
pub fn initial_map(curve: &BoundaryCurve, basis: Arc<ThbBasis>) -> Result<GeometryMap> {
    let curve = express_curve(curve, &basis)?;
    let lay = Layout::new(&basis);
    let mut control = vec![[0.0; 2]; basis.dim()];
    for (pos, &g) in curve.dofs().indices().iter().enumerate() {
        control[g] = curve.control_points()[pos];
    }
    if lay.n_int == 0 {
        return Ok(GeometryMap::new(basis, control));
    }
    let (pu, pv) = basis.degrees();
    let rule = CellRule::for_degrees(pu, pv);
    let mut k = Triplets::new(lay.n_int, lay.n_int);
    let mut rhs = vec![[0.0; 2]; lay.n_int];
    let mut qp = Vec::new();
    let mut lv = LocalValues::default();
    let mut fv = FunctionValues::default();
    for cb in basis.cells() {
        rule.on_cell(basis.mesh(), cb.cell, &mut qp);
        let n = cb.len();
        let mut local = vec![0.0; n * n];
        for &(xi, w) in &qp {
            basis.local_values(cb.cell, xi, 1, &mut lv);
            cb.combine(&lv, 1, &mut fv);
            for a in 0..n {
                for b in 0..n {
                    let ga = fv.grad[a];
                    let gb = fv.grad[b];
                    local[a * n + b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                }
            }
        }
        for a in 0..n {
            let Some(ia) = lay.interior[cb.functions[a]] else {
                continue;
            };
            for b in 0..n {
                let gb = cb.functions[b];
                match lay.interior[gb] {
                    Some(ib) => k.push(ia, ib, local[a * n + b]),
                    None => {
                        for q in 0..2 {
                            rhs[ia][q] -= local[a * n + b] * control[gb][q];
                        }
                    }
                }
            }
        }
    }
    let solver = CholeskySolver::new(k.build()?)?;
    for q in 0..2 {
        let b: Vec<f64> = rhs.iter().map(|r| r[q]).collect();
        let x = solver.solve(&b);
        for (g, slot) in lay.interior.iter().enumerate() {
            if let Some(i) = slot {
                control[g][q] = x[*i];
            }
        }
    }
    Ok(GeometryMap::new(basis, control))
}

/// Residual (and optionally Jacobian) of the Petrov–Galerkin harmonic-map system.
///
/// Unknown `2 i + c` is component `c` of interior function `i`. With `coupling`, the derivative
/// with respect to boundary control points is returned as well, column `2 g + c` for global `g`.
fn egg_system(
    map: &GeometryMap,
    lay: &Layout,
    jacobian: bool,
    coupling: bool,
) -> (Vec<f64>, Option<Triplets>, Option<Triplets>) {
    let basis = map.basis();
    let (pu, pv) = basis.degrees();
    let rule = CellRule::for_degrees(pu, pv);
    let n_unk = 2 * lay.n_int;
    let mut res = vec![0.0; n_unk];
    let jacobian = jacobian || coupling;
    let mut jac = jacobian.then(|| Triplets::new(n_unk, n_unk));
    let mut cpl = coupling.then(|| Triplets::new(n_unk, 2 * basis.dim()));
    let mut qp = Vec::new();
    let mut lv = LocalValues::default();
    let mut fv = FunctionValues::default();
    let mut local = Vec::new();
    let mut lap = Vec::new();
    let mut ah = Vec::new();
    for cb in basis.cells() {
        let n = cb.len();
        let loc_int: Vec<Option<usize>> = cb.functions.iter().map(|&g| lay.interior[g]).collect();
        if loc_int.iter().all(|s| s.is_none()) {
            continue;
        }
        if jacobian {
            local.clear();
            local.resize(4 * n * n, 0.0);
        }
        rule.on_cell(basis.mesh(), cb.cell, &mut qp);
        for &(xi, w) in &qp {
            basis.local_values(cb.cell, xi, 2, &mut lv);
            cb.combine(&lv, 2, &mut fv);
            let m = map_point(map.control(), cb, &fv);
            let (x1, x2) = ([m.jac[0][0], m.jac[1][0]], [m.jac[0][1], m.jac[1][1]]);
            let g11 = x1[0] * x1[0] + x1[1] * x1[1];
            let g12 = x1[0] * x2[0] + x1[1] * x2[1];
            let g22 = x2[0] * x2[0] + x2[1] * x2[1];
            let tr = g11 + g22;
            let f2 = g11 * g11 + 2.0 * g12 * g12 + g22 * g22;
            let gamma = tr / f2;
            let a_h = |h: &[f64; 3]| g22 * h[0] - 2.0 * g12 * h[1] + g11 * h[2];
            let aha = [a_h(&m.hess[0]), a_h(&m.hess[1])];
            lap.clear();
            lap.extend(fv.hess.iter().map(|h| h[0] + h[2]));
            for a in 0..n {
                if let Some(ia) = loc_int[a] {
                    for c in 0..2 {
                        res[2 * ia + c] += w * lap[a] * gamma * aha[c];
                    }
                }
            }
            if !jacobian {
                continue;
            }
            ah.clear();
            ah.extend(fv.hess.iter().map(a_h));
            for mm in 0..n {
                if loc_int[mm].is_none() && !coupling {
                    continue;
                }
                let gb = fv.grad[mm];
                for j in 0..2 {
                    let dg11 = 2.0 * x1[j] * gb[0];
                    let dg22 = 2.0 * x2[j] * gb[1];
                    let dg12 = x1[j] * gb[1] + x2[j] * gb[0];
                    let dtr = dg11 + dg22;
                    let df2 = 2.0 * g11 * dg11 + 2.0 * g22 * dg22 + 4.0 * g12 * dg12;
                    let dgamma = (dtr * f2 - tr * df2) / (f2 * f2);
                    for i in 0..2 {
                        let h = &m.hess[i];
                        let mut dah = dg22 * h[0] - 2.0 * dg12 * h[1] + dg11 * h[2];
                        if i == j {
                            dah += ah[mm];
                        }
                        let d = dgamma * aha[i] + gamma * dah;
                        let col = 2 * mm + j;
                        for a in 0..n {
                            if loc_int[a].is_some() {
                                local[(2 * a + i) * 2 * n + col] += w * lap[a] * d;
                            }
                        }
                    }
                }
            }
        }
        if let Some(t) = jac.as_mut() {
            for a in 0..n {
                let Some(ia) = loc_int[a] else { continue };
                for b in 0..n {
                    for i in 0..2 {
                        for j in 0..2 {
                            let v = local[(2 * a + i) * 2 * n + 2 * b + j];
                            if v == 0.0 {
                                continue;
                            }
                            match (loc_int[b], cpl.as_mut()) {
                                (Some(ib), _) => t.push(2 * ia + i, 2 * ib + j, v),
                                (None, Some(c)) => c.push(2 * ia + i, 2 * cb.functions[b] + j, v),
                                (None, None) => {}
                            }
                        }
                    }
                }
            }
        }
    }
    (res, jac, cpl)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn boundary_extent(map: &GeometryMap, lay: &Layout) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &g in lay.dofs.indices() {
        let c = map.control()[g];
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt().max(1e-300)
}

fn with_update(map: &GeometryMap, lay: &Layout, delta: &[f64], step: f64) -> GeometryMap {
    let mut control = map.control().to_vec();
    for (g, slot) in lay.interior.iter().enumerate() {
        if let Some(i) = slot {
            control[g][0] += step * delta[2 * i];
            control[g][1] += step * delta[2 * i + 1];
        }
    }
    GeometryMap::new(map.basis().clone(), control)
}

/// Global indices of the interior basis functions, in unknown order.
pub fn interior_functions(basis: &Arc<ThbBasis>) -> Vec<usize> {
    let lay = Layout::new(basis);
    (0..basis.dim()).filter(|&g| lay.interior[g].is_some()).collect()
}

/// Unscaled residual vector; entry `2 i + c` is component `c` tested against interior function `i`.
pub fn egg_residual_vector(map: &GeometryMap) -> Vec<f64> {
    egg_system(map, &Layout::new(map.basis()), false, false).0
}

/// Analytic Jacobian of [`egg_residual_vector`] with respect to the interior control points.
pub fn egg_jacobian(map: &GeometryMap) -> Result<SparseColMat<usize, f64>> {
    egg_system(map, &Layout::new(map.basis()), true, false).1.expect("requested").build()
}

/// Linearization of the harmonic-map system at a map: interior block and boundary coupling.
pub struct EggLinearization {
    /// Global index of each interior function, in unknown order.
    pub interior: Vec<usize>,
    /// `∂R/∂x_int`, square of size `2 n_int`.
    pub interior_block: SparseColMat<usize, f64>,
    /// `∂R/∂x`, columns `2 g + c` over every function `g`; interior columns are zero.
    pub coupling: SparseColMat<usize, f64>,
}

pub fn egg_linearization(map: &GeometryMap) -> Result<EggLinearization> {
    let lay = Layout::new(map.basis());
    let (_, jac, cpl) = egg_system(map, &lay, true, true);
    Ok(EggLinearization {
        interior: (0..map.basis().dim()).filter(|&g| lay.interior[g].is_some()).collect(),
        interior_block: jac.expect("requested").build()?,
        coupling: cpl.expect("requested").build()?,
    })
}

/// Scaled residual `max_k |G(x, σ_k)| / L` of a map, with `L` the boundary extent.
pub fn egg_residual(map: &GeometryMap) -> f64 {
    let lay = Layout::new(map.basis());
    let (r, _, _) = egg_system(map, &lay, false, false);
    max_abs(&r) / boundary_extent(map, &lay)
}

/// Newton iteration with backtracking on the harmonic-map system.
pub fn solve_egg(init: &GeometryMap, cfg: &EggConfig) -> Result<(GeometryMap, EggLog)> {
    cfg.validate()?;
    let lay = Layout::new(init.basis());
    let scale = boundary_extent(init, &lay);
    let mut map = init.clone();
    let mut log = EggLog::default();
    if lay.n_int == 0 {
        return Ok((map, log));
    }
    let (mut res, _, _) = egg_system(&map, &lay, false, false);
    let mut r = max_abs(&res) / scale;
    loop {
        if r < cfg.mu {
            log.final_residual = r;
            return Ok((map, log));
        }
        if log.steps.len() >= cfg.max_newton {
            let mut history: Vec<f64> = log.steps.iter().map(|s| s.residual).collect();
            history.push(r);
            return Err(Error::Convergence { iterations: log.steps.len(), last: r, history });
        }
        let (_, jac, _) = egg_system(&map, &lay, true, false);
        let lu = LuSolver::new(jac.expect("requested").build()?)?;
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let delta = lu.solve(&rhs)?;
        let mut step = 1.0;
        let mut accepted = None;
        for h in 0..=cfg.max_halvings {
            let trial = with_update(&map, &lay, &delta, step);
            let (tres, _, _) = egg_system(&trial, &lay, false, false);
            let tr = max_abs(&tres) / scale;
            if tr < r || h == cfg.max_halvings {
                accepted = Some((trial, tres, tr));
                break;
            }
            step *= 0.5;
        }
        let (trial, tres, tr) = accepted.expect("loop accepts a step");
        log.steps.push(NewtonStep { residual: r, step });
        log::debug!("egg newton {}: residual {r:.3e} -> {tr:.3e} (step {step})", log.steps.len());
        map = trial;
        res = tres;
        r = tr;
    }
}

/// How the analysis mesh is derived from the geometry mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSpace {
    /// Uniform dyadic refinements applied on top of the geometry mesh.
    pub depth: usize,
    /// Every cell is refined at least to this level.
    pub min_level: usize,
}

impl Default for StateSpace {
    fn default() -> Self {
        Self { depth: 2, min_level: 0 }
    }
}

impl StateSpace {
    pub fn mesh(&self, geometry: &HierarchicalMesh, extra: Option<&HierarchicalMesh>) -> Result<HierarchicalMesh> {
        let mut m = geometry.refine_uniform(self.depth)?.with_min_level(self.min_level)?;
        if let Some(e) = extra {
            m = m.union(e)?;
        }
        Ok(m)
    }
}

/// Certified map with the analysis mesh its quadrature points were checked on.
pub struct Certified {
    pub map: GeometryMap,
    pub state_mesh: HierarchicalMesh,
    pub rounds: usize,
    pub newton: Vec<EggLog>,
}

/// Analysis cells on which `det Dx ≤ 0` at some Gauss point.
pub fn folded_cells(map: &GeometryMap, state_mesh: &HierarchicalMesh) -> Result<Vec<(Cell, [f64; 2])>> {
    let basis = map.basis();
    let (pu, pv) = basis.degrees();
    let rule = CellRule::for_degrees(pu, pv);
    let mut qp = Vec::new();
    let mut lv = LocalValues::default();
    let mut fv = FunctionValues::default();
    let mut bad = Vec::new();
    for c in state_mesh.active_cells() {
        let cb = basis.cell_basis_on(c)?;
        rule.on_cell(state_mesh, c, &mut qp);
        for &(xi, _) in &qp {
            basis.local_values(c, xi, 1, &mut lv);
            cb.combine(&lv, 1, &mut fv);
            let m = map_point(map.control(), &cb, &fv);
            if !(m.det() > 0.0) {
                bad.push((c, xi));
                break;
            }
        }
    }
    Ok(bad)
}

/// L² prolongation of `map` onto a refined basis; the boundary is reproduced first by a
/// trace projection, the interior by a mass-matrix solve with the boundary held fixed.
pub fn prolong(map: &GeometryMap, basis: Arc<ThbBasis>) -> Result<GeometryMap> {
    let old = map.basis();
    if !old.mesh().is_refined_by(basis.mesh()) {
        return Err(Error::Structure("prolongation target does not refine the map's mesh".into()));
    }
    let old_dofs = BoundaryDofSet::new(old.clone());
    let trace: Vec<[f64; 2]> = old_dofs.indices().iter().map(|&g| map.control()[g]).collect();
    let curve = BoundaryCurve::new(Arc::new(old_dofs), trace);
    let curve = express_curve(&curve, &basis)?;
    let lay = Layout::new(&basis);
    let mut control = vec![[0.0; 2]; basis.dim()];
    for (pos, &g) in curve.dofs().indices().iter().enumerate() {
        control[g] = curve.control_points()[pos];
    }
    if lay.n_int == 0 {
        return Ok(GeometryMap::new(basis, control));
    }
    let (pu, pv) = basis.degrees();
    let rule = CellRule::for_degrees(pu + 1, pv + 1);
    let mut mass = Triplets::new(lay.n_int, lay.n_int);
    let mut rhs = vec![[0.0; 2]; lay.n_int];
    let mut diag = vec![0.0; lay.n_int];
    let mut qp = Vec::new();
    let (mut lv, mut lv_old) = (LocalValues::default(), LocalValues::default());
    let (mut fv, mut fv_old) = (FunctionValues::default(), FunctionValues::default());
    let mut local = Vec::new();
    for cb in basis.cells() {
        let n = cb.len();
        let old_cb = old.cell_basis_on(cb.cell)?;
        local.clear();
        local.resize(n * n, 0.0);
        let mut lrhs = vec![[0.0; 2]; n];
        rule.on_cell(basis.mesh(), cb.cell, &mut qp);
        for &(xi, w) in &qp {
            basis.local_values(cb.cell, xi, 0, &mut lv);
            cb.combine(&lv, 0, &mut fv);
            old.local_values(cb.cell, xi, 0, &mut lv_old);
            old_cb.combine(&lv_old, 0, &mut fv_old);
            let x = map_point(map.control(), &old_cb, &fv_old).x;
            for a in 0..n {
                for q in 0..2 {
                    lrhs[a][q] += w * fv.value[a] * x[q];
                }
                for b in 0..n {
                    local[a * n + b] += w * fv.value[a] * fv.value[b];
                }
            }
        }
        for a in 0..n {
            let Some(ia) = lay.interior[cb.functions[a]] else { continue };
            for q in 0..2 {
                rhs[ia][q] += lrhs[a][q];
            }
            for b in 0..n {
                let gb = cb.functions[b];
                match lay.interior[gb] {
                    Some(ib) => {
                        mass.push(ia, ib, local[a * n + b]);
                        if ia == ib {
                            diag[ia] += local[a * n + b];
                        }
                    }
                    None => {
                        for q in 0..2 {
                            rhs[ia][q] -= local[a * n + b] * control[gb][q];
                        }
                    }
                }
            }
        }
    }
    // symmetric Jacobi scaling before factorizing
    let s: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let a = mass.build()?;
    let mut scaled = Triplets::new(lay.n_int, lay.n_int);
    for (j, col) in (0..lay.n_int).map(|j| (j, a.col_ptr()[j]..a.col_ptr()[j + 1])) {
        for k in col {
            let i = a.row_idx()[k];
            scaled.push(i, j, a.val()[k] * s[i] * s[j]);
        }
    }
    let solver = CholeskySolver::new(scaled.build()?)?;
    for q in 0..2 {
        let b: Vec<f64> = rhs.iter().zip(&s).map(|(r, s)| r[q] * s).collect();
        let y = solver.solve(&b);
        for (g, slot) in lay.interior.iter().enumerate() {
            if let Some(i) = slot {
                control[g][q] = y[*i] * s[*i];
            }
        }
    }
    Ok(GeometryMap::new(basis, control))
}

/// Geometry cells to refine around folded analysis cells: for every function nonvanishing on a
/// geometry cell that contains a fold, the active cells of its own level inside its support.
pub fn fold_refinement(map: &GeometryMap, folds: &[(Cell, [f64; 2])]) -> BTreeSet<Cell> {
    let basis = map.basis();
    let mesh = basis.mesh();
    let mut geo_cells = BTreeSet::new();
    for &(c, _) in folds {
        if let Some(a) = mesh.active_ancestor(c) {
            geo_cells.insert(a);
        }
    }
    let mut funcs = BTreeSet::new();
    for c in geo_cells {
        if let Some(cb) = basis.cell(c) {
            funcs.extend(cb.functions.iter().copied());
        }
    }
    let mut out = BTreeSet::new();
    for g in funcs {
        let f = basis.function(g);
        out.extend(cells_meeting_support(mesh, f).into_iter().filter(|c| c.level() == f.level()));
    }
    out.retain(|c| c.level() < mesh.levels().max_depth());
    out
}

/// Checks `det Dx > 0` on the analysis quadrature and refines, prolongs and re-solves until it holds.
pub fn certify_or_refine(
    map: GeometryMap,
    space: &StateSpace,
    extra: Option<&HierarchicalMesh>,
    cfg: &EggConfig,
) -> Result<Certified> {
    let mut map = map;
    let mut newton = Vec::new();
    for round in 0..=cfg.max_apos {
        let state_mesh = space.mesh(map.basis().mesh(), extra)?;
        let folds = folded_cells(&map, &state_mesh)?;
        if folds.is_empty() {
            return Ok(Certified { map, state_mesh, rounds: round, newton });
        }
        if round == cfg.max_apos {
            return Err(Error::Validity { rounds: round, locations: folds.iter().map(|f| f.1).collect() });
        }
        log::info!("parameterization folds on {} cells; refining", folds.len());
        let cells = fold_refinement(&map, &folds);
        if cells.is_empty() {
            return Err(Error::Validity { rounds: round, locations: folds.iter().map(|f| f.1).collect() });
        }
        let mesh = map.basis().mesh().refine_cells(&cells)?;
        let basis = Arc::new(ThbBasis::new(mesh));
        let prolonged = prolong(&map, basis)?;
        let (solved, log) = solve_egg(&prolonged, cfg)?;
        newton.push(log);
        map = solved;
    }
    unreachable!()
}

/// Fit-independent convenience: initial map, Newton solve and certification in one call.
pub fn parameterize(
    curve: &BoundaryCurve,
    basis: Arc<ThbBasis>,
    space: &StateSpace,
    extra: Option<&HierarchicalMesh>,
    cfg: &EggConfig,
) -> Result<Certified> {
    let init = initial_map(curve, basis)?;
    let (map, log) = solve_egg(&init, cfg)?;
    let mut cert = certify_or_refine(map, space, extra, cfg)?;
    cert.newton.insert(0, log);
    Ok(cert)
}
