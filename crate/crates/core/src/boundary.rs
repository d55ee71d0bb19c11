//! Boundary correspondence: exact side curves, their spline fit and self-intersection checks.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{cells_meeting_support, BoundaryDofSet, Cell, HierarchicalMesh, Side, ThbBasis};
use crate::linalg::{relative_residual, LuSolver, Triplets};
use crate::quadrature::gauss_on;
use crate::spline::KnotVector;

/// Closed-form curve for one side, parameterized over `t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideCurve {
    Line {
        from: [f64; 2],
        to: [f64; 2],
    },
    /// `from + t (to − from) + sin(frequency π t) offset`.
    SineLine {
        from: [f64; 2],
        to: [f64; 2],
        offset: [f64; 2],
        frequency: f64,
    },
    Spline {
        degree: usize,
        knots: Vec<f64>,
        points: Vec<[f64; 2]>,
    },
}

impl SideCurve {
    pub fn validate(&self) -> Result<()> {
        if let SideCurve::Spline { degree, knots, points } = self {
            let kv = KnotVector::new(*degree, knots.clone())?;
            if kv.num_basis() != points.len() {
                return Err(Error::Config(format!(
                    "spline side has {} control points but its knot vector needs {}",
                    points.len(),
                    kv.num_basis()
                )));
            }
        }
        Ok(())
    }

    /// Point and `d/dt` derivative.
    pub fn eval(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        match self {
            SideCurve::Line { from, to } => {
                let d = [to[0] - from[0], to[1] - from[1]];
                ([from[0] + t * d[0], from[1] + t * d[1]], d)
            }
            SideCurve::SineLine { from, to, offset, frequency } => {
                let d = [to[0] - from[0], to[1] - from[1]];
                let w = frequency * std::f64::consts::PI;
                let (s, c) = (w * t).sin_cos();
                (
                    [from[0] + t * d[0] + s * offset[0], from[1] + t * d[1] + s * offset[1]],
                    [d[0] + w * c * offset[0], d[1] + w * c * offset[1]],
                )
            }
            SideCurve::Spline { degree, knots, points } => {
                let kv = KnotVector::new(*degree, knots.clone()).expect("validated spline side");
                let p = *degree;
                let e = kv.find_element(t);
                let k = kv.span(e);
                let mut b = vec![0.0; 2 * (p + 1)];
                kv.eval_element(e, t, 1, &mut b);
                let mut x = [0.0; 2];
                let mut d = [0.0; 2];
                for a in 0..=p {
                    let c = points[k - p + a];
                    for q in 0..2 {
                        x[q] += b[a] * c[q];
                        d[q] += b[p + 1 + a] * c[q];
                    }
                }
                (x, d)
            }
        }
    }
}

/// Exact boundary correspondence: one curve per side of the parametric square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactBoundary {
    pub south: SideCurve,
    pub east: SideCurve,
    pub north: SideCurve,
    pub west: SideCurve,
}

impl ExactBoundary {
    pub fn side(&self, s: Side) -> &SideCurve {
        match s {
            Side::South => &self.south,
            Side::East => &self.east,
            Side::North => &self.north,
            Side::West => &self.west,
        }
    }

    pub fn eval(&self, s: Side, t: f64) -> ([f64; 2], [f64; 2]) {
        self.side(s).eval(t)
    }

    /// Checks the side curves and that they meet at the four corners.
    pub fn validate(&self) -> Result<()> {
        for s in Side::ALL {
            self.side(s).validate()?;
        }
        let pairs = [
            (Side::South, 0.0, Side::West, 0.0),
            (Side::South, 1.0, Side::East, 0.0),
            (Side::North, 0.0, Side::West, 1.0),
            (Side::North, 1.0, Side::East, 1.0),
        ];
        let scale = self.extent().max(1e-300);
        for (a, ta, b, tb) in pairs {
            let (p, _) = self.eval(a, ta);
            let (q, _) = self.eval(b, tb);
            if dist(p, q) > 1e-12 * scale {
                return Err(Error::Config(format!(
                    "sides {} and {} do not meet: ({}, {}) vs ({}, {})",
                    a.name(),
                    b.name(),
                    p[0],
                    p[1],
                    q[0],
                    q[1]
                )));
            }
        }
        Ok(())
    }

    /// Diameter of the bounding box of 64 samples per side.
    pub fn extent(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in Side::ALL {
            for k in 0..=64 {
                let (p, _) = self.eval(s, k as f64 / 64.0);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        dist(lo, hi)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Equality constraint on the fit at a boundary parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConstraint {
    pub side: Side,
    pub t: f64,
    #[serde(default = "yes")]
    pub value: bool,
    #[serde(default)]
    pub tangent: bool,
}

fn yes() -> bool {
    true
}

/// Parameters of the κ-weighted H¹ boundary fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kappa0: f64,
    pub kappa1: f64,
    /// Interpolate the exact corners.
    pub corners: bool,
    pub constraints: Vec<PointConstraint>,
    /// Boundary elements are split into pieces no longer than `1 / subdivisions`
    /// before Gauss quadrature with `p + 1` points per piece.
    pub subdivisions: usize,
    /// Polyline samples per boundary element in the self-intersection check.
    pub samples_per_span: usize,
    /// Refine-and-refit rounds allowed when the fit self-intersects.
    pub max_repairs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kappa0: 1.0,
            kappa1: 1.0,
            corners: true,
            constraints: Vec::new(),
            subdivisions: 256,
            samples_per_span: 8,
            max_repairs: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0 > 0.0) || !(self.kappa1 >= 0.0) || !self.kappa1.is_finite() || !self.kappa0.is_finite() {
            return Err(Error::Config("fit weights need kappa0 > 0 and kappa1 >= 0".into()));
        }
        if self.samples_per_span == 0 || self.subdivisions == 0 {
            return Err(Error::Config("sampling densities must be positive".into()));
        }
        for c in &self.constraints {
            if !(0.0..=1.0).contains(&c.t) {
                return Err(Error::Config(format!("constraint parameter {} outside [0, 1]", c.t)));
            }
        }
        Ok(())
    }
}

/// Spline boundary map `F_n = Σ c_i β_i` over the boundary functions of a THB basis.
#[derive(Clone, Debug)]
pub struct BoundaryCurve {
    dofs: Arc<BoundaryDofSet>,
    control: Vec<[f64; 2]>,
    objective: f64,
    residual: f64,
}

impl BoundaryCurve {
    pub fn new(dofs: Arc<BoundaryDofSet>, control: Vec<[f64; 2]>) -> Self {
        assert_eq!(dofs.len(), control.len());
        Self { dofs, control, objective: f64::NAN, residual: 0.0 }
    }

    pub fn dofs(&self) -> &Arc<BoundaryDofSet> {
        &self.dofs
    }

    pub fn basis(&self) -> &Arc<ThbBasis> {
        self.dofs.basis()
    }

    /// Control points, one per boundary function in [`BoundaryDofSet::indices`] order.
    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control
    }

    /// Fit objective at the minimizer; NaN for curves not produced by a fit.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Relative residual of the constrained normal equations.
    pub fn solve_residual(&self) -> f64 {
        self.residual
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        for p in &mut c.control {
            p[0] *= s;
            p[1] *= s;
        }
        c
    }

    /// Point and `d/dt` derivative on a side.
    pub fn eval(&self, side: Side, t: f64) -> ([f64; 2], [f64; 2]) {
        let (mut v, mut d) = (Vec::new(), Vec::new());
        let e = self.dofs.edge_at(side, t);
        self.dofs.edge_values(e, t, &mut v, &mut d);
        let mut x = [0.0; 2];
        let mut dx = [0.0; 2];
        for (r, &pos) in e.dofs.iter().enumerate() {
            let c = self.control[pos];
            for q in 0..2 {
                x[q] += v[r] * c[q];
                dx[q] += d[r] * c[q];
            }
        }
        (x, dx)
    }

    /// Bounding-box diameter of the control polygon.
    pub fn extent(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.control {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        dist(lo, hi)
    }
}

/// Minimizes `κ0 ∫‖G − F‖² + κ1 ∫‖∂t(G − F)‖²` over `G` in the boundary trace space,
/// subject to value/tangent equality constraints. Returns control points, objective and
/// the relative residual of the saddle-point system.
pub fn project_onto_trace(
    dofs: &BoundaryDofSet,
    target: &dyn Fn(Side, f64) -> ([f64; 2], [f64; 2]),
    kappa0: f64,
    kappa1: f64,
    constraints: &[(Side, f64, bool, bool)],
    subdivisions: usize,
) -> Result<(Vec<[f64; 2]>, f64, f64)> {
    let n = dofs.len();
    if n == 0 {
        return Err(Error::Structure("empty boundary basis".into()));
    }
    let (pu, pv) = dofs.basis().degrees();
    let mut rows: Vec<(Vec<(usize, f64)>, [f64; 2])> = Vec::new();
    for &(side, t, value, tangent) in constraints {
        let e = dofs.edge_at(side, t);
        let (mut v, mut d) = (Vec::new(), Vec::new());
        dofs.edge_values(e, t, &mut v, &mut d);
        let (f, df) = target(side, t);
        if value {
            rows.push((e.dofs.iter().copied().zip(v.iter().copied()).collect(), f));
        }
        if tangent {
            rows.push((e.dofs.iter().copied().zip(d.iter().copied()).collect(), df));
        }
    }
    let m = rows.len();
    let mut a = Triplets::new(n + m, n + m);
    let mut rhs = vec![[0.0; 2]; n + m];
    let (mut v, mut d) = (Vec::new(), Vec::new());
    let mut qp = Vec::new();
    for e in dofs.edges() {
        let p = if e.side.along() == 0 { pu } else { pv };
        quad_points(e.t0, e.t1, p + 1, subdivisions, &mut qp);
        for &(t, w) in &qp {
            dofs.edge_values(e, t, &mut v, &mut d);
            let (f, df) = target(e.side, t);
            for (r, &i) in e.dofs.iter().enumerate() {
                for (s, &j) in e.dofs.iter().enumerate() {
                    a.push(i, j, w * (kappa0 * v[r] * v[s] + kappa1 * d[r] * d[s]));
                }
                for q in 0..2 {
                    rhs[i][q] += w * (kappa0 * v[r] * f[q] + kappa1 * d[r] * df[q]);
                }
            }
        }
    }
    for (k, (row, val)) in rows.iter().enumerate() {
        for &(i, c) in row {
            a.push(n + k, i, c);
            a.push(i, n + k, c);
        }
        rhs[n + k] = *val;
    }
    let mat = a.build()?;
    let lu = LuSolver::new(mat.clone())?;
    let mut control = vec![[0.0; 2]; n];
    let mut residual: f64 = 0.0;
    for q in 0..2 {
        let b: Vec<f64> = rhs.iter().map(|r| r[q]).collect();
        let x = lu.solve(&b)?;
        residual = residual.max(relative_residual(&mat, &x, &b));
        for i in 0..n {
            control[i][q] = x[i];
        }
    }
    let objective = trace_distance(dofs, &control, target, kappa0, kappa1, subdivisions);
    Ok((control, objective, residual))
}

/// `κ0 ∫‖G − F‖² + κ1 ∫‖∂t(G − F)‖²` for the trace `G` with the given control points.
pub fn trace_distance(
    dofs: &BoundaryDofSet,
    control: &[[f64; 2]],
    target: &dyn Fn(Side, f64) -> ([f64; 2], [f64; 2]),
    kappa0: f64,
    kappa1: f64,
    subdivisions: usize,
) -> f64 {
    let (pu, pv) = dofs.basis().degrees();
    let (mut v, mut d) = (Vec::new(), Vec::new());
    let mut qp = Vec::new();
    let mut total = 0.0;
    for e in dofs.edges() {
        let p = if e.side.along() == 0 { pu } else { pv };
        quad_points(e.t0, e.t1, p + 1, subdivisions, &mut qp);
        for &(t, w) in &qp {
            dofs.edge_values(e, t, &mut v, &mut d);
            let (f, df) = target(e.side, t);
            let mut g = [0.0; 2];
            let mut dg = [0.0; 2];
            for (r, &i) in e.dofs.iter().enumerate() {
                for q in 0..2 {
                    g[q] += v[r] * control[i][q];
                    dg[q] += d[r] * control[i][q];
                }
            }
            let e0 = (g[0] - f[0]).powi(2) + (g[1] - f[1]).powi(2);
            let e1 = (dg[0] - df[0]).powi(2) + (dg[1] - df[1]).powi(2);
            total += w * (kappa0 * e0 + kappa1 * e1);
        }
    }
    total
}

/// Gauss points on `[t0, t1]`, split into pieces of length at most `1 / subdivisions`.
pub(crate) fn quad_points(t0: f64, t1: f64, n: usize, subdivisions: usize, out: &mut Vec<(f64, f64)>) {
    out.clear();
    let pieces = (((t1 - t0) * subdivisions as f64) - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / pieces as f64;
    for k in 0..pieces {
        let a = t0 + k as f64 * h;
        let (x, w) = gauss_on(n, a, a + h);
        out.extend(x.into_iter().zip(w));
    }
}

fn constraint_list(cfg: &FitConfig) -> Vec<(Side, f64, bool, bool)> {
    let mut c = Vec::new();
    if cfg.corners {
        c.extend([
            (Side::South, 0.0, true, false),
            (Side::South, 1.0, true, false),
            (Side::North, 0.0, true, false),
            (Side::North, 1.0, true, false),
        ]);
    }
    c.extend(cfg.constraints.iter().map(|p| (p.side, p.t, p.value, p.tangent)));
    c
}

/// Fits the exact boundary on the trace of `dofs`.
pub fn fit_boundary(exact: &ExactBoundary, dofs: Arc<BoundaryDofSet>, cfg: &FitConfig) -> Result<BoundaryCurve> {
    cfg.validate()?;
    let target = |s: Side, t: f64| exact.eval(s, t);
    let (control, objective, residual) = project_onto_trace(
        &dofs,
        &target,
        cfg.kappa0,
        cfg.kappa1,
        &constraint_list(cfg),
        cfg.subdivisions,
    )?;
    if residual > 1e-10 {
        return Err(Error::Solver(format!("boundary fit residual {residual:.3e} too large")));
    }
    Ok(BoundaryCurve { dofs, control, objective, residual })
}

/// Location on the boundary of the parametric square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryParam {
    pub side: Side,
    pub t: f64,
}

/// Crossing of two non-adjacent pieces of the fitted boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub params: [BoundaryParam; 2],
    pub location: [f64; 2],
}

/// Samples the closed curve counter-clockwise in parameter space.
fn sample_loop(curve: &BoundaryCurve, samples_per_span: usize) -> Vec<(BoundaryParam, [f64; 2])> {
    let mut pts = Vec::new();
    for side in Side::ALL {
        let mut ts = Vec::new();
        for e in curve.dofs().side_edges(side) {
            for k in 0..samples_per_span {
                ts.push(e.t0 + (e.t1 - e.t0) * k as f64 / samples_per_span as f64);
            }
        }
        ts.push(1.0);
        if matches!(side, Side::North | Side::West) {
            ts.reverse();
        }
        // the last sample of each side is the first corner of the next one
        ts.pop();
        for t in ts {
            pts.push((BoundaryParam { side, t }, curve.eval(side, t).0));
        }
    }
    pts
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Segment intersection parameters `(s, r)` if `[a, b]` and `[c, d]` cross.
fn segment_crossing(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if o1 * o2 > 0.0 || o3 * o4 > 0.0 {
        return None;
    }
    let den = (b[0] - a[0]) * (d[1] - c[1]) - (b[1] - a[1]) * (d[0] - c[0]);
    if den == 0.0 {
        // collinear overlap counts as a crossing at the first shared point
        let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
        if o1 != 0.0 || len2 == 0.0 {
            return None;
        }
        for (p, r) in [(c, 0.0), (d, 1.0)] {
            let s = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / len2;
            if (0.0..=1.0).contains(&s) {
                return Some((s, r));
            }
        }
        return None;
    }
    let s = ((c[0] - a[0]) * (d[1] - c[1]) - (c[1] - a[1]) * (d[0] - c[0])) / den;
    let r = ((c[0] - a[0]) * (b[1] - a[1]) - (c[1] - a[1]) * (b[0] - a[0])) / den;
    Some((s.clamp(0.0, 1.0), r.clamp(0.0, 1.0)))
}

/// Crossings of the fitted boundary found on a dense polyline sampling.
pub fn detect_self_intersections(curve: &BoundaryCurve, samples_per_span: usize) -> Vec<Crossing> {
    let pts = sample_loop(curve, samples_per_span.max(1));
    let n = pts.len();
    let seg = |k: usize| (pts[k].1, pts[(k + 1) % n].1);
    let mut order: Vec<usize> = (0..n).collect();
    let xmin = |k: usize| {
        let (a, b) = seg(k);
        a[0].min(b[0])
    };
    order.sort_by(|&a, &b| xmin(a).total_cmp(&xmin(b)).then(a.cmp(&b)));
    let mut found = Vec::new();
    for (oi, &i) in order.iter().enumerate() {
        let (a, b) = seg(i);
        let xmax = a[0].max(b[0]);
        let (ylo, yhi) = (a[1].min(b[1]), a[1].max(b[1]));
        for &j in &order[oi + 1..] {
            let (c, d) = seg(j);
            if c[0].min(d[0]) > xmax {
                break;
            }
            let adjacent = (i + 1) % n == j || (j + 1) % n == i;
            if adjacent || c[1].max(d[1]) < ylo || c[1].min(d[1]) > yhi {
                continue;
            }
            if let Some((s, r)) = segment_crossing(a, b, c, d) {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                let (s_lo, s_hi) = if i < j { (s, r) } else { (r, s) };
                let interp = |k: usize, s: f64| {
                    let (p, q) = (pts[k].0, pts[(k + 1) % n].0);
                    let t = if p.side == q.side {
                        p.t + s * (q.t - p.t)
                    } else if s < 0.5 {
                        p.t
                    } else {
                        q.t
                    };
                    BoundaryParam { side: if s < 0.5 { p.side } else { q.side }, t }
                };
                let location = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                found.push((lo, hi, Crossing { params: [interp(lo, s_lo), interp(hi, s_hi)], location }));
            }
        }
    }
    found.sort_by_key(|f| (f.0, f.1));
    // a crossing through a shared sample point is reported by two segment pairs
    let mut out: Vec<Crossing> = Vec::new();
    for (_, _, c) in found {
        if !out.iter().any(|o| dist(o.location, c.location) < 1e-12 * curve.extent().max(1e-300)) {
            out.push(c);
        }
    }
    out
}

/// Boundary cells to refine so the functions nonvanishing at the crossings gain finer neighbors:
/// the lowest-level boundary cells among those meeting each function's support.
pub fn repair_cells(curve: &BoundaryCurve, crossings: &[Crossing]) -> BTreeSet<Cell> {
    let dofs = curve.dofs();
    let basis = dofs.basis();
    let mesh = basis.mesh();
    let mut out = BTreeSet::new();
    let (mut v, mut d) = (Vec::new(), Vec::new());
    for c in crossings {
        for p in c.params {
            let e = dofs.edge_at(p.side, p.t);
            dofs.edge_values(e, p.t, &mut v, &mut d);
            for (r, &pos) in e.dofs.iter().enumerate() {
                if v[r].abs() <= 1e-14 {
                    continue;
                }
                let f = basis.function(dofs.indices()[pos]);
                let cells: Vec<Cell> = cells_meeting_support(mesh, f)
                    .into_iter()
                    .filter(|&c| mesh.touches_boundary(c))
                    .collect();
                if let Some(low) = cells.iter().map(|c| c.level).min() {
                    out.extend(cells.into_iter().filter(|c| c.level == low));
                }
            }
        }
    }
    out
}

/// Result of a fit with the self-intersection repair loop.
pub struct RepairedFit {
    pub mesh: HierarchicalMesh,
    pub curve: BoundaryCurve,
    pub rounds: usize,
}

/// Fits on `mesh`, refining and refitting while the fit self-intersects.
pub fn fit_with_repair(exact: &ExactBoundary, mesh: HierarchicalMesh, cfg: &FitConfig) -> Result<RepairedFit> {
    let mut mesh = mesh;
    for round in 0..=cfg.max_repairs {
        let basis = Arc::new(ThbBasis::new(mesh.clone()));
        let dofs = Arc::new(BoundaryDofSet::new(basis));
        let curve = fit_boundary(exact, dofs, cfg)?;
        let crossings = detect_self_intersections(&curve, cfg.samples_per_span);
        if crossings.is_empty() {
            return Ok(RepairedFit { mesh, curve, rounds: round });
        }
        if round == cfg.max_repairs {
            return Err(Error::SelfIntersection {
                rounds: round,
                locations: crossings.iter().map(|c| c.location).collect(),
            });
        }
        log::warn!("boundary fit self-intersects at {} points; refining", crossings.len());
        let cells = repair_cells(&curve, &crossings);
        mesh = mesh.refine_cells(&cells)?;
    }
    unreachable!()
}
