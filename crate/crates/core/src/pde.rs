//! Poisson state and adjoint problems on the mapped domain and the quantity of interest.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{map_point, CellRule, MapPoint};
use crate::error::{Error, Result};
use crate::hierarchy::{BoundaryDofSet, Cell, FunctionValues, HierarchicalMesh, Side, ThbBasis};
use crate::linalg::{relative_residual, CholeskySolver, Triplets};
use crate::param::GeometryMap;
use crate::quadrature::gauss_on;
use crate::spline::LocalValues;

/// One term `coef · x^px · y^py`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    #[serde(default)]
    pub px: u32,
    #[serde(default)]
    pub py: u32,
}

/// Closed-form scalar field on the physical plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant { value: f64 },
    Polynomial { terms: Vec<Monomial> },
    /// `amplitude · sin(π f_x x + φ_x) · sin(π f_y y + φ_y)`.
    SinProduct {
        amplitude: f64,
        frequency: [f64; 2],
        #[serde(default)]
        phase: [f64; 2],
    },
}

impl Default for ScalarField {
    fn default() -> Self {
        ScalarField::Constant { value: 0.0 }
    }
}

fn pow_d(x: f64, p: u32) -> (f64, f64) {
    if p == 0 {
        (1.0, 0.0)
    } else {
        (x.powi(p as i32), p as f64 * x.powi(p as i32 - 1))
    }
}

impl ScalarField {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    /// Value and gradient at `x`.
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        match self {
            ScalarField::Constant { value } => (*value, [0.0; 2]),
            ScalarField::Polynomial { terms } => {
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for t in terms {
                    let (a, da) = pow_d(x[0], t.px);
                    let (b, db) = pow_d(x[1], t.py);
                    v += t.coef * a * b;
                    g[0] += t.coef * da * b;
                    g[1] += t.coef * a * db;
                }
                (v, g)
            }
            ScalarField::SinProduct { amplitude, frequency, phase } => {
                let pi = std::f64::consts::PI;
                let (wx, wy) = (pi * frequency[0], pi * frequency[1]);
                let (sx, cx) = (wx * x[0] + phase[0]).sin_cos();
                let (sy, cy) = (wy * x[1] + phase[1]).sin_cos();
                (amplitude * sx * sy, [amplitude * wx * cx * sy, amplitude * wy * sx * cy])
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Constant { value } => *value == 0.0,
            ScalarField::Polynomial { terms } => terms.iter().all(|t| t.coef == 0.0),
            ScalarField::SinProduct { amplitude, .. } => *amplitude == 0.0,
        }
    }
}

/// Integrand `w ↦ j(w)` of the quantity of interest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    #[default]
    Zero,
    One,
    W,
    W2,
}

impl Integrand {
    /// `(j(w), j'(w))`.
    pub fn eval(self, w: f64) -> (f64, f64) {
        match self {
            Integrand::Zero => (0.0, 0.0),
            Integrand::One => (1.0, 0.0),
            Integrand::W => (w, 1.0),
            Integrand::W2 => (w * w, 2.0 * w),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    #[default]
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SideConditions {
    pub south: BoundaryKind,
    pub east: BoundaryKind,
    pub north: BoundaryKind,
    pub west: BoundaryKind,
}

impl SideConditions {
    pub fn get(&self, s: Side) -> BoundaryKind {
        match s {
            Side::South => self.south,
            Side::East => self.east,
            Side::North => self.north,
            Side::West => self.west,
        }
    }
}

/// `−Δu = f` in Ω, `u = 0` on the Dirichlet sides, `∂u/∂n = g` on the Neumann sides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeProblem {
    pub source: ScalarField,
    pub neumann: ScalarField,
    pub conditions: SideConditions,
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        if Side::ALL.iter().all(|&s| self.conditions.get(s) == BoundaryKind::Neumann) {
            return Err(Error::WellPosedness("no Dirichlet side; the pure Neumann problem is singular".into()));
        }
        Ok(())
    }
}

/// Sub-interval `[from, to]` of one side of the parametric square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideRegion {
    pub side: Side,
    #[serde(default)]
    pub from: f64,
    #[serde(default = "one")]
    pub to: f64,
}

fn one() -> f64 {
    1.0
}

fn unit_box() -> [[f64; 2]; 2] {
    [[0.0, 1.0], [0.0, 1.0]]
}

/// `J(w) = ∫_{B'} j(w) dx + ∫_{∂B'} q(w) ds` with regions given in parametric coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoiSpec {
    pub volume: Integrand,
    /// Parametric box `[[u0, u1], [v0, v1]]`.
    pub volume_region: [[f64; 2]; 2],
    pub boundary: Integrand,
    pub boundary_regions: Vec<SideRegion>,
}

impl Default for QoiSpec {
    fn default() -> Self {
        Self { volume: Integrand::Zero, volume_region: unit_box(), boundary: Integrand::Zero, boundary_regions: Vec::new() }
    }
}

impl QoiSpec {
    pub fn validate(&self) -> Result<()> {
        for r in self.volume_region {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(Error::Config(format!("volume region [{}, {}] outside [0, 1]", r[0], r[1])));
            }
        }
        for r in &self.boundary_regions {
            if !(0.0 <= r.from && r.from <= r.to && r.to <= 1.0) {
                return Err(Error::Config(format!("boundary region [{}, {}] outside [0, 1]", r.from, r.to)));
            }
        }
        Ok(())
    }
}

/// Coefficients over the state basis.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub basis: Arc<ThbBasis>,
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    /// Value and parametric gradient at `xi`.
    pub fn eval(&self, xi: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let ([v], [[gu], [gv]]) = self.basis.eval_combination(&self.coeffs.iter().map(|&c| [c]).collect::<Vec<_>>(), xi)?;
        Ok((v, [gu, gv]))
    }
}

/// Map data at one quadrature point.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub xi: [f64; 2],
    /// Parametric weight times `|det Dx|`.
    pub w: f64,
    pub x: [f64; 2],
    pub jac: [[f64; 2]; 2],
}

impl QuadPoint {
    fn new(xi: [f64; 2], w: f64, m: &MapPoint) -> Self {
        Self { xi, w: w * m.det().abs(), x: m.x, jac: m.jac }
    }

    pub fn det(&self) -> f64 {
        self.jac[0][0] * self.jac[1][1] - self.jac[0][1] * self.jac[1][0]
    }

    /// Physical gradient from a parametric one.
    pub fn physical(&self, g: [f64; 2]) -> [f64; 2] {
        let j = &self.jac;
        let d = self.det();
        [(j[1][1] * g[0] - j[1][0] * g[1]) / d, (-j[0][1] * g[0] + j[0][0] * g[1]) / d]
    }
}

/// Boundary point: parametric location, weight `dt`, physical point and tangent `dx/dt`.
#[derive(Clone, Copy, Debug)]
pub struct EdgePoint {
    pub t: f64,
    pub w: f64,
    pub x: [f64; 2],
    pub tangent: [f64; 2],
}

impl EdgePoint {
    pub fn speed(&self) -> f64 {
        self.tangent[0].hypot(self.tangent[1])
    }
}

/// Where a QoI quadrature point lies, with the map derivative needed there.
#[derive(Clone, Copy, Debug)]
pub enum QoiPlace {
    Volume { jac: [[f64; 2]; 2] },
    Boundary { side: Side, t: f64, tangent: [f64; 2] },
}

/// One point of the QoI quadrature: nonzero state functions and their values,
/// physical weight, `j(u)`, `j'(u)` and location.
pub struct QoiPoint<'a> {
    pub funcs: &'a [usize],
    pub vals: &'a [f64],
    pub w: f64,
    pub j: f64,
    pub dj: f64,
    pub xi: [f64; 2],
    /// Analysis cell containing the point.
    pub cell: Cell,
    pub place: QoiPlace,
}

/// Quadrature registered on the analysis mesh of one iteration.
pub struct Registry {
    pub cells: Vec<(Cell, Vec<QuadPoint>)>,
    /// Edge index into the state boundary set, points on it.
    pub edges: Vec<(usize, Vec<EdgePoint>)>,
}

fn clip(a: [f64; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let lo = a[0].max(b[0]);
    let hi = a[1].min(b[1]);
    (hi > lo).then_some([lo, hi])
}

/// Assembled Poisson problem; the factorization is shared by state and adjoint solves.
pub struct PoissonSystem {
    map: GeometryMap,
    basis: Arc<ThbBasis>,
    dofs: Arc<BoundaryDofSet>,
    problem: PdeProblem,
    /// Unknown number of each basis function, `None` on Dirichlet sides.
    free: Vec<Option<usize>>,
    solver: CholeskySolver,
    load: Vec<f64>,
    registry: Registry,
}

impl PoissonSystem {
    /// Assembles on the analysis mesh `state_mesh`, which must refine the map's mesh.
    pub fn new(map: &GeometryMap, state_mesh: &HierarchicalMesh, problem: &PdeProblem) -> Result<Self> {
        problem.validate()?;
        if !map.basis().mesh().is_refined_by(state_mesh) {
            return Err(Error::Structure("analysis mesh does not refine the geometry mesh".into()));
        }
        let basis = Arc::new(ThbBasis::new(state_mesh.clone()));
        let dofs = Arc::new(BoundaryDofSet::new(basis.clone()));
        let mut fixed = vec![false; basis.dim()];
        for e in dofs.edges() {
            if problem.conditions.get(e.side) == BoundaryKind::Dirichlet {
                for &pos in &e.dofs {
                    fixed[dofs.indices()[pos]] = true;
                }
            }
        }
        let mut free = vec![None; basis.dim()];
        let mut n = 0;
        for (g, slot) in free.iter_mut().enumerate() {
            if !fixed[g] {
                *slot = Some(n);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::WellPosedness("no free degrees of freedom".into()));
        }

        let (pu, pv) = basis.degrees();
        let rule = CellRule::for_degrees(pu, pv);
        let geo = map.basis();
        let mut k = Triplets::new(n, n);
        let mut load = vec![0.0; n];
        let mut cells = Vec::with_capacity(basis.cells().len());
        let (mut lv, mut fv) = (LocalValues::default(), FunctionValues::default());
        let (mut glv, mut gfv) = (LocalValues::default(), FunctionValues::default());
        let mut qp = Vec::new();
        let mut local = Vec::new();
        let mut phys = Vec::new();
        for cb in basis.cells() {
            let c = cb.cell;
            let gcb = geo.cell_basis_on(c)?;
            let m = cb.len();
            local.clear();
            local.resize(m * m, 0.0);
            let mut lload = vec![0.0; m];
            let mut pts = Vec::with_capacity(rule.len());
            rule.on_cell(state_mesh, c, &mut qp);
            for &(xi, w) in &qp {
                geo.local_values(c, xi, 1, &mut glv);
                gcb.combine(&glv, 1, &mut gfv);
                let q = QuadPoint::new(xi, w, &map_point(map.control(), &gcb, &gfv));
                basis.local_values(c, xi, 1, &mut lv);
                cb.combine(&lv, 1, &mut fv);
                phys.clear();
                phys.extend(fv.grad.iter().map(|&g| q.physical(g)));
                let (f, _) = problem.source.eval(q.x);
                for a in 0..m {
                    lload[a] += q.w * f * fv.value[a];
                    for b in 0..m {
                        local[a * m + b] += q.w * (phys[a][0] * phys[b][0] + phys[a][1] * phys[b][1]);
                    }
                }
                pts.push(q);
            }
            for a in 0..m {
                let Some(ia) = free[cb.functions[a]] else { continue };
                load[ia] += lload[a];
                for b in 0..m {
                    if let Some(ib) = free[cb.functions[b]] {
                        k.push(ia, ib, local[a * m + b]);
                    }
                }
            }
            cells.push((c, pts));
        }

        let mut edges = Vec::new();
        let (mut v, mut d) = (Vec::new(), Vec::new());
        for (ei, e) in dofs.edges().iter().enumerate() {
            let p = if e.side.along() == 0 { pu } else { pv };
            let (ts, ws) = gauss_on(p + 1, e.t0, e.t1);
            let gcb = geo.cell_basis_on(e.cell)?;
            let mut pts = Vec::with_capacity(ts.len());
            for (&t, &w) in ts.iter().zip(&ws) {
                let xi = e.side.point(t);
                geo.local_values(e.cell, xi, 1, &mut glv);
                gcb.combine(&glv, 1, &mut gfv);
                let m = map_point(map.control(), &gcb, &gfv);
                let a = e.side.along();
                let pt = EdgePoint { t, w, x: m.x, tangent: [m.jac[0][a], m.jac[1][a]] };
                if problem.conditions.get(e.side) == BoundaryKind::Neumann && !problem.neumann.is_zero() {
                    let (g, _) = problem.neumann.eval(pt.x);
                    dofs.edge_values(e, t, &mut v, &mut d);
                    for (r, &pos) in e.dofs.iter().enumerate() {
                        if let Some(i) = free[dofs.indices()[pos]] {
                            load[i] += w * pt.speed() * g * v[r];
                        }
                    }
                }
                pts.push(pt);
            }
            edges.push((ei, pts));
        }

        let solver = CholeskySolver::new(k.build()?)?;
        Ok(Self {
            map: map.clone(),
            basis,
            dofs,
            problem: problem.clone(),
            free,
            solver,
            load,
            registry: Registry { cells, edges },
        })
    }

    pub fn basis(&self) -> &Arc<ThbBasis> {
        &self.basis
    }

    pub fn boundary_dofs(&self) -> &Arc<BoundaryDofSet> {
        &self.dofs
    }

    pub fn map(&self) -> &GeometryMap {
        &self.map
    }

    pub fn problem(&self) -> &PdeProblem {
        &self.problem
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn num_free(&self) -> usize {
        self.load.len()
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|s| s.map_or(0.0, |i| x[i])).collect()
    }

    fn checked_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self.solver.solve(b);
        let r = relative_residual(self.solver.matrix(), &x, b);
        if !(r < 1e-10) {
            return Err(Error::Solver(format!("linear solve residual {r:.3e}")));
        }
        Ok(self.expand(&x))
    }

    pub fn solve_state(&self) -> Result<DiscreteField> {
        Ok(DiscreteField { basis: self.basis.clone(), coeffs: self.checked_solve(&self.load)? })
    }

    /// Load vector restricted to the free functions.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// `a(u, v) − b(v)` for every free test function `v`.
    pub fn galerkin_residual(&self, u: &DiscreteField) -> Vec<f64> {
        let x: Vec<f64> = (0..u.coeffs.len()).filter(|&g| self.free[g].is_some()).map(|g| u.coeffs[g]).collect();
        let ax = crate::linalg::mul(self.solver.matrix(), &x);
        ax.iter().zip(&self.load).map(|(a, b)| a - b).collect()
    }

    /// `∂J/∂w(u | ψ)` for every free test function `ψ`.
    pub fn functional_derivative(&self, u: &DiscreteField, qoi: &QoiSpec) -> Vec<f64> {
        let mut out = vec![0.0; self.num_free()];
        self.for_each_qoi_point(u, qoi, |funcs, vals, w, dj| {
            for (&g, &b) in funcs.iter().zip(vals) {
                if let Some(i) = self.free[g] {
                    out[i] += w * dj * b;
                }
            }
        });
        out
    }

    /// Solves `a(ψ, p) = −∂J/∂w(u | ψ)`.
    pub fn solve_adjoint(&self, u: &DiscreteField, qoi: &QoiSpec) -> Result<DiscreteField> {
        let rhs: Vec<f64> = self.functional_derivative(u, qoi).iter().map(|v| -v).collect();
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(DiscreteField { basis: self.basis.clone(), coeffs: vec![0.0; self.basis.dim()] });
        }
        Ok(DiscreteField { basis: self.basis.clone(), coeffs: self.checked_solve(&rhs)? })
    }

    pub fn evaluate_functional(&self, u: &DiscreteField, qoi: &QoiSpec) -> f64 {
        let mut total = 0.0;
        self.qoi_points(u, qoi, |q| total += q.w * q.j);
        total
    }

    fn for_each_qoi_point(&self, u: &DiscreteField, qoi: &QoiSpec, mut f: impl FnMut(&[usize], &[f64], f64, f64)) {
        self.qoi_points(u, qoi, |q| f(q.funcs, q.vals, q.w, q.dj));
    }

    /// Walks the QoI quadrature: volume cells clipped to the region, then boundary regions.
    pub fn qoi_points(&self, u: &DiscreteField, qoi: &QoiSpec, mut f: impl FnMut(&QoiPoint<'_>)) {
        let basis = &self.basis;
        let geo = self.map.basis();
        let (pu, pv) = basis.degrees();
        let rule = CellRule::for_degrees(pu, pv);
        let (mut lv, mut fv) = (LocalValues::default(), FunctionValues::default());
        let (mut glv, mut gfv) = (LocalValues::default(), FunctionValues::default());
        let mut qp = Vec::new();
        if qoi.volume != Integrand::Zero {
            let full = qoi.volume_region == unit_box();
            for (cb, (_, pts)) in basis.cells().iter().zip(&self.registry.cells) {
                let b = basis.mesh().cell_bounds(cb.cell);
                let vals: Vec<(f64, [f64; 2], [[f64; 2]; 2])> = if full {
                    pts.iter().map(|q| (q.w, q.xi, q.jac)).collect()
                } else {
                    let (Some(cu), Some(cv)) = (clip(b[0], qoi.volume_region[0]), clip(b[1], qoi.volume_region[1])) else {
                        continue;
                    };
                    let gcb = geo.cell_basis_on(cb.cell).expect("geometry refines");
                    rule.on_box([cu, cv], &mut qp);
                    qp.iter()
                        .map(|&(xi, w)| {
                            geo.local_values(cb.cell, xi, 1, &mut glv);
                            gcb.combine(&glv, 1, &mut gfv);
                            let m = map_point(self.map.control(), &gcb, &gfv);
                            (w * m.det().abs(), xi, m.jac)
                        })
                        .collect()
                };
                for (w, xi, jac) in vals {
                    basis.local_values(cb.cell, xi, 0, &mut lv);
                    cb.combine(&lv, 0, &mut fv);
                    let uval: f64 = cb.functions.iter().zip(&fv.value).map(|(&g, &b)| u.coeffs[g] * b).sum();
                    let (j, dj) = qoi.volume.eval(uval);
                    f(&QoiPoint {
                        funcs: &cb.functions,
                        vals: &fv.value,
                        w,
                        j,
                        dj,
                        xi,
                        cell: cb.cell,
                        place: QoiPlace::Volume { jac },
                    });
                }
            }
        }
        if qoi.boundary != Integrand::Zero {
            let (mut v, mut d) = (Vec::new(), Vec::new());
            let mut funcs = Vec::new();
            for region in &qoi.boundary_regions {
                for e in self.dofs.side_edges(region.side) {
                    let Some([a, b]) = clip([e.t0, e.t1], [region.from, region.to]) else { continue };
                    let p = if e.side.along() == 0 { pu } else { pv };
                    let (ts, ws) = gauss_on(p + 1, a, b);
                    let gcb = geo.cell_basis_on(e.cell).expect("geometry refines");
                    funcs.clear();
                    funcs.extend(e.dofs.iter().map(|&pos| self.dofs.indices()[pos]));
                    for (&t, &w) in ts.iter().zip(&ws) {
                        let xi = e.side.point(t);
                        geo.local_values(e.cell, xi, 1, &mut glv);
                        gcb.combine(&glv, 1, &mut gfv);
                        let m = map_point(self.map.control(), &gcb, &gfv);
                        let al = e.side.along();
                        let tangent = [m.jac[0][al], m.jac[1][al]];
                        self.dofs.edge_values(e, t, &mut v, &mut d);
                        let uval: f64 = funcs.iter().zip(&v).map(|(&g, &b)| u.coeffs[g] * b).sum();
                        let (j, dj) = qoi.boundary.eval(uval);
                        f(&QoiPoint {
                            funcs: &funcs,
                            vals: &v,
                            w: w * tangent[0].hypot(tangent[1]),
                            j,
                            dj,
                            xi,
                            cell: e.cell,
                            place: QoiPlace::Boundary { side: e.side, t, tangent },
                        });
                    }
                }
            }
        }
    }

    /// Whether basis function `g` is fixed by a Dirichlet condition.
    pub fn is_fixed(&self, g: usize) -> bool {
        self.free[g].is_none()
    }

    /// Stiffness matrix restricted to the free functions.
    pub fn stiffness(&self) -> &faer::sparse::SparseColMat<usize, f64> {
        self.solver.matrix()
    }
}

/// State, adjoint and functional value on one analysis space.
pub struct Solution {
    pub system: PoissonSystem,
    pub state: DiscreteField,
    pub adjoint: DiscreteField,
    pub value: f64,
}

pub fn solve_all(map: &GeometryMap, state_mesh: &HierarchicalMesh, problem: &PdeProblem, qoi: &QoiSpec) -> Result<Solution> {
    qoi.validate()?;
    let system = PoissonSystem::new(map, state_mesh, problem)?;
    let state = system.solve_state()?;
    let adjoint = system.solve_adjoint(&state, qoi)?;
    let value = system.evaluate_functional(&state, qoi);
    Ok(Solution { system, state, adjoint, value })
}
