//! Hierarchical meshes, truncated hierarchical B-spline bases and boundary subsets.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{check_point, KnotVector, LocalValues, Refinement, TensorSplineSpace};

/// Deepest level a hierarchy may reach.
pub const MAX_DEPTH: usize = 12;

/// Cell of the level-`level` tensor grid; `i` counts elements along u, `j` along v.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl Cell {
    pub fn new(level: usize, i: usize, j: usize) -> Self {
        Self { level: level as u8, i: i as u32, j: j as u32 }
    }

    pub fn level(&self) -> usize {
        self.level as usize
    }

    pub fn children(&self) -> [Cell; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            Cell { level: l, i, j },
            Cell { level: l, i, j: j + 1 },
            Cell { level: l, i: i + 1, j },
            Cell { level: l, i: i + 1, j: j + 1 },
        ]
    }

    /// Ancestor at level `l <= self.level`.
    pub fn ancestor(&self, l: usize) -> Cell {
        let s = self.level() - l;
        Cell { level: l as u8, i: self.i >> s, j: self.j >> s }
    }
}

/// Basis function of one level of the hierarchy, ordered by level then tensor index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionId {
    pub level: u8,
    pub iu: u32,
    pub iv: u32,
}

impl FunctionId {
    pub fn new(level: usize, iu: usize, iv: usize) -> Self {
        Self { level: level as u8, iu: iu as u32, iv: iv as u32 }
    }

    pub fn level(&self) -> usize {
        self.level as usize
    }
}

/// Side of the parametric square. Each side is parameterized by `t ∈ [0, 1]`
/// running along increasing `ξ1` (south, north) or `ξ2` (west, east).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    South,
    East,
    North,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

    pub fn point(self, t: f64) -> [f64; 2] {
        match self {
            Side::South => [t, 0.0],
            Side::East => [1.0, t],
            Side::North => [t, 1.0],
            Side::West => [0.0, t],
        }
    }

    /// Parametric direction running along the side: 0 for u, 1 for v.
    pub fn along(self) -> usize {
        match self {
            Side::South | Side::North => 0,
            Side::East | Side::West => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::South => "south",
            Side::East => "east",
            Side::North => "north",
            Side::West => "west",
        }
    }

    pub fn from_name(s: &str) -> Option<Side> {
        Side::ALL.into_iter().find(|side| side.name() == s)
    }
}

/// The nested tensor spaces of a dyadic hierarchy with their refinement relations.
#[derive(Debug)]
pub struct SplineLevels {
    spaces: Vec<TensorSplineSpace>,
    ref_u: Vec<Refinement>,
    ref_v: Vec<Refinement>,
}

impl SplineLevels {
    pub fn new(base: TensorSplineSpace, max_depth: usize) -> Result<Self> {
        if max_depth > MAX_DEPTH {
            return Err(Error::Depth(max_depth, MAX_DEPTH));
        }
        let mut spaces = vec![TensorSplineSpace { level: 0, ..base }];
        let (mut ref_u, mut ref_v) = (Vec::new(), Vec::new());
        for _ in 0..max_depth {
            let coarse = spaces.last().unwrap();
            let fine = coarse.refine_dyadic();
            ref_u.push(Refinement::between(&coarse.u, &fine.u)?);
            ref_v.push(Refinement::between(&coarse.v, &fine.v)?);
            spaces.push(fine);
        }
        Ok(Self { spaces, ref_u, ref_v })
    }

    pub fn space(&self, level: usize) -> &TensorSplineSpace {
        &self.spaces[level]
    }

    pub fn max_depth(&self) -> usize {
        self.spaces.len() - 1
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.spaces[0].u.degree(), self.spaces[0].v.degree())
    }

    /// Relation between level `l` and `l + 1` along u (`dir == 0`) or v.
    pub fn refinement(&self, dir: usize, l: usize) -> &Refinement {
        if dir == 0 {
            &self.ref_u[l]
        } else {
            &self.ref_v[l]
        }
    }

    fn knots(&self, dir: usize, l: usize) -> &KnotVector {
        if dir == 0 {
            &self.spaces[l].u
        } else {
            &self.spaces[l].v
        }
    }

    pub fn cell_bounds(&self, c: Cell) -> [[f64; 2]; 2] {
        let s = &self.spaces[c.level()];
        let (u0, u1) = s.u.element_bounds(c.i as usize);
        let (v0, v1) = s.v.element_bounds(c.j as usize);
        [[u0, u1], [v0, v1]]
    }

    /// Inclusive element ranges (u, v) covered by the support of `f`.
    pub fn support(&self, f: FunctionId) -> ([usize; 2], [usize; 2]) {
        let s = &self.spaces[f.level()];
        let (a, b) = s.u.support_elements(f.iu as usize);
        let (c, d) = s.v.support_elements(f.iv as usize);
        ([a, b], [c, d])
    }

    /// Local `(p+1)` refinement block from parent element `ep` (level `l`) to child `ec`.
    fn local_block(&self, dir: usize, l: usize, ep: usize, ec: usize, out: &mut [f64]) {
        let p = self.knots(dir, l).degree();
        let m = p + 1;
        let kp = self.knots(dir, l).span(ep);
        let kc = self.knots(dir, l + 1).span(ec);
        let r = self.refinement(dir, l);
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = r.coeff(kp - p + a, kc - p + b);
            }
        }
    }
}

/// Mesh of active cells defined by nested subdomains `ω_0 ⊇ ω_1 ⊇ …`.
///
/// `ω_l` (l ≥ 1) is stored as the set of level-`l` cells it contains; `ω_0` is the whole square.
#[derive(Clone, Debug)]
pub struct HierarchicalMesh {
    levels: Arc<SplineLevels>,
    omega: Vec<BTreeSet<(u32, u32)>>,
}

impl PartialEq for HierarchicalMesh {
    fn eq(&self, other: &Self) -> bool {
        let n = self.omega.len().max(other.omega.len());
        let empty = BTreeSet::new();
        (1..n).all(|l| {
            self.omega.get(l).unwrap_or(&empty) == other.omega.get(l).unwrap_or(&empty)
        }) && self.levels.spaces[0] == other.levels.spaces[0]
    }
}

impl HierarchicalMesh {
    pub fn new(base: TensorSplineSpace) -> Result<Self> {
        Ok(Self::from_levels(Arc::new(SplineLevels::new(base, MAX_DEPTH)?)))
    }

    /// Single-level mesh of `nu × nv` uniform elements with degrees `(pu, pv)`.
    pub fn uniform(pu: usize, pv: usize, nu: usize, nv: usize) -> Result<Self> {
        let base = TensorSplineSpace::new(KnotVector::uniform(pu, nu)?, KnotVector::uniform(pv, nv)?, 0);
        Self::new(base)
    }

    pub fn from_levels(levels: Arc<SplineLevels>) -> Self {
        Self { levels, omega: vec![BTreeSet::new()] }
    }

    pub fn levels(&self) -> &Arc<SplineLevels> {
        &self.levels
    }

    pub fn space(&self, l: usize) -> &TensorSplineSpace {
        self.levels.space(l)
    }

    /// Number of levels holding active cells.
    pub fn depth(&self) -> usize {
        let mut n = 1;
        for (l, o) in self.omega.iter().enumerate().skip(1) {
            if !o.is_empty() {
                n = l + 1;
            }
        }
        n
    }

    fn elements(&self, l: usize) -> (usize, usize) {
        let s = self.levels.space(l);
        (s.u.num_elements(), s.v.num_elements())
    }

    /// Whether cell `c` lies in `ω_level`.
    pub fn contains(&self, c: Cell) -> bool {
        if c.level == 0 {
            let (nu, nv) = self.elements(0);
            return (c.i as usize) < nu && (c.j as usize) < nv;
        }
        self.omega
            .get(c.level())
            .is_some_and(|o| o.contains(&(c.i, c.j)))
    }

    pub fn is_refined(&self, c: Cell) -> bool {
        self.omega
            .get(c.level() + 1)
            .is_some_and(|o| o.contains(&(2 * c.i, 2 * c.j)))
    }

    pub fn is_active(&self, c: Cell) -> bool {
        self.contains(c) && !self.is_refined(c)
    }

    /// Active cells sorted by level, then `(i, j)`.
    pub fn active_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        let (nu, nv) = self.elements(0);
        for i in 0..nu {
            for j in 0..nv {
                let c = Cell::new(0, i, j);
                if !self.is_refined(c) {
                    out.push(c);
                }
            }
        }
        for (l, o) in self.omega.iter().enumerate().skip(1) {
            for &(i, j) in o {
                let c = Cell { level: l as u8, i, j };
                if !self.is_refined(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn num_active(&self) -> usize {
        self.active_cells().len()
    }

    /// Active cell count per level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.depth()];
        for c in self.active_cells() {
            counts[c.level()] += 1;
        }
        counts
    }

    fn insert_children(&mut self, c: Cell) -> Result<()> {
        let l = c.level() + 1;
        if l > self.levels.max_depth() {
            return Err(Error::Depth(l, self.levels.max_depth()));
        }
        while self.omega.len() <= l {
            self.omega.push(BTreeSet::new());
        }
        for ch in c.children() {
            self.omega[l].insert((ch.i, ch.j));
        }
        Ok(())
    }

    /// Replaces each given active cell by its four children.
    pub fn refine_cells<'a>(&self, cells: impl IntoIterator<Item = &'a Cell>) -> Result<Self> {
        let mut m = self.clone();
        for &c in cells {
            if !self.is_active(c) {
                return Err(Error::Structure(format!(
                    "cell ({}, {}, {}) is not active",
                    c.level, c.i, c.j
                )));
            }
            m.insert_children(c)?;
        }
        Ok(m)
    }

    /// Refines every active cell `times` times.
    pub fn refine_uniform(&self, times: usize) -> Result<Self> {
        let mut m = self.clone();
        for _ in 0..times {
            let cells = m.active_cells();
            m = m.refine_cells(&cells)?;
        }
        Ok(m)
    }

    /// Mesh whose active cells are all of `level` or finer.
    pub fn with_min_level(&self, level: usize) -> Result<Self> {
        let mut m = self.clone();
        loop {
            let coarse: Vec<Cell> = m.active_cells().into_iter().filter(|c| c.level() < level).collect();
            if coarse.is_empty() {
                return Ok(m);
            }
            m = m.refine_cells(&coarse)?;
        }
    }

    /// Coarsest common refinement.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if !Arc::ptr_eq(&self.levels, &other.levels) && self.levels.spaces[0] != other.levels.spaces[0] {
            return Err(Error::Structure("meshes have different base spaces".into()));
        }
        let mut m = self.clone();
        while m.omega.len() < other.omega.len() {
            m.omega.push(BTreeSet::new());
        }
        for (l, o) in other.omega.iter().enumerate().skip(1) {
            m.omega[l].extend(o.iter().copied());
        }
        Ok(m)
    }

    /// Whether `other` is obtained from `self` by refinement only.
    pub fn is_refined_by(&self, other: &Self) -> bool {
        self.omega.iter().enumerate().skip(1).all(|(l, o)| {
            o.iter().all(|&(i, j)| other.contains(Cell { level: l as u8, i, j }))
        })
    }

    pub fn cell_bounds(&self, c: Cell) -> [[f64; 2]; 2] {
        self.levels.cell_bounds(c)
    }

    pub fn touches_boundary(&self, c: Cell) -> bool {
        let (nu, nv) = self.elements(c.level());
        c.i == 0 || c.j == 0 || c.i as usize == nu - 1 || c.j as usize == nv - 1
    }

    /// Active cell containing `c` or equal to it; `None` if `c` is refined.
    pub fn active_ancestor(&self, c: Cell) -> Option<Cell> {
        for l in 0..=c.level() {
            let a = c.ancestor(l);
            if !self.is_refined(a) {
                return Some(a);
            }
        }
        None
    }

    /// Active cell containing the parametric point `xi`.
    pub fn locate(&self, xi: [f64; 2]) -> Result<Cell> {
        check_point(xi)?;
        let mut l = 0;
        loop {
            let s = self.levels.space(l);
            let c = Cell::new(l, s.u.find_element(xi[0]), s.v.find_element(xi[1]));
            if !self.is_refined(c) {
                return Ok(c);
            }
            l += 1;
        }
    }

    /// Active cells whose interiors meet the open box given by inclusive level-`l` element ranges.
    pub fn active_cells_in(&self, l: usize, ru: [usize; 2], rv: [usize; 2]) -> BTreeSet<Cell> {
        let mut out = BTreeSet::new();
        for i in ru[0]..=ru[1] {
            for j in rv[0]..=rv[1] {
                let c = Cell::new(l, i, j);
                match self.active_ancestor(c) {
                    Some(a) => {
                        out.insert(a);
                    }
                    None => self.collect_active_below(c, &mut out),
                }
            }
        }
        out
    }

    fn collect_active_below(&self, c: Cell, out: &mut BTreeSet<Cell>) {
        for ch in c.children() {
            if self.is_refined(ch) {
                self.collect_active_below(ch, out);
            } else {
                out.insert(ch);
            }
        }
    }

    /// Whether the support of `f` lies inside `ω_{level(f)}`.
    pub fn support_in_omega(&self, f: FunctionId) -> bool {
        if f.level == 0 {
            return true;
        }
        let (ru, rv) = self.levels.support(f);
        let Some(o) = self.omega.get(f.level()) else {
            return false;
        };
        (ru[0]..=ru[1]).all(|i| (rv[0]..=rv[1]).all(|j| o.contains(&(i as u32, j as u32))))
    }

    /// Whether the support of `f` lies inside `ω_{level(f)+1}`.
    pub fn support_refined(&self, f: FunctionId) -> bool {
        let (ru, rv) = self.levels.support(f);
        (ru[0]..=ru[1]).all(|i| (rv[0]..=rv[1]).all(|j| self.is_refined(Cell::new(f.level(), i, j))))
    }

    /// Text dump: a header line then one `level i j` line per active cell.
    pub fn dump(&self) -> String {
        let cells = self.active_cells();
        let mut s = String::new();
        let _ = writeln!(s, "# active cells: {} (level i j)", cells.len());
        for c in cells {
            let _ = writeln!(s, "{} {} {}", c.level, c.i, c.j);
        }
        s
    }
}

/// Truncated basis restricted to one cell, as combinations of the cell-level local B-splines.
#[derive(Clone, Debug)]
pub struct CellBasis {
    pub cell: Cell,
    /// Global indices of the functions nonzero on the cell, ascending.
    pub functions: Vec<usize>,
    /// Row-major `functions.len() × local_len` coefficients.
    pub coeffs: Vec<f64>,
}

/// Values of a cell's functions at one point.
#[derive(Clone, Debug, Default)]
pub struct FunctionValues {
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub hess: Vec<[f64; 3]>,
}

impl CellBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Combines local B-spline values; `hess` is `[∂uu, ∂uv, ∂vv]`.
    pub fn combine(&self, lv: &LocalValues, order: usize, out: &mut FunctionValues) {
        let m = lv.value.len();
        let n = self.functions.len();
        out.value.clear();
        out.grad.clear();
        out.hess.clear();
        for r in 0..n {
            let row = &self.coeffs[r * m..(r + 1) * m];
            let mut v = 0.0;
            let (mut gu, mut gv) = (0.0, 0.0);
            let (mut huu, mut huv, mut hvv) = (0.0, 0.0, 0.0);
            for (l, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                v += c * lv.value[l];
                if order >= 1 {
                    gu += c * lv.du[l];
                    gv += c * lv.dv[l];
                }
                if order >= 2 {
                    huu += c * lv.duu[l];
                    huv += c * lv.duv[l];
                    hvv += c * lv.dvv[l];
                }
            }
            out.value.push(v);
            out.grad.push([gu, gv]);
            out.hess.push([huu, huv, hvv]);
        }
    }
}

/// Truncated hierarchical B-spline basis on a hierarchical mesh.
#[derive(Clone, Debug)]
pub struct ThbBasis {
    mesh: HierarchicalMesh,
    functions: Vec<FunctionId>,
    index: HashMap<FunctionId, usize>,
    cells: Vec<CellBasis>,
    cell_index: HashMap<Cell, usize>,
}

struct Membership<'a> {
    mesh: &'a HierarchicalMesh,
    in_omega: HashMap<FunctionId, bool>,
    refined: HashMap<FunctionId, bool>,
}

impl Membership<'_> {
    fn in_omega(&mut self, f: FunctionId) -> bool {
        let mesh = self.mesh;
        *self.in_omega.entry(f).or_insert_with(|| mesh.support_in_omega(f))
    }

    fn refined(&mut self, f: FunctionId) -> bool {
        let mesh = self.mesh;
        *self.refined.entry(f).or_insert_with(|| mesh.support_refined(f))
    }

    fn active(&mut self, f: FunctionId) -> bool {
        self.in_omega(f) && !self.refined(f)
    }
}

impl ThbBasis {
    pub fn new(mesh: HierarchicalMesh) -> Self {
        let levels = mesh.levels().clone();
        let (pu, pv) = levels.degrees();
        let (mu, mv) = (pu + 1, pv + 1);
        let m = mu * mv;
        let cells = mesh.active_cells();
        let mut mem = Membership {
            mesh: &mesh,
            in_omega: HashMap::new(),
            refined: HashMap::new(),
        };

        let mut active = BTreeSet::new();
        for &c in &cells {
            let s = levels.space(c.level());
            let (ku, kv) = (s.u.span(c.i as usize), s.v.span(c.j as usize));
            for a in 0..mu {
                for b in 0..mv {
                    let f = FunctionId::new(c.level(), ku - pu + a, kv - pv + b);
                    if mem.active(f) {
                        active.insert(f);
                    }
                }
            }
        }
        let functions: Vec<FunctionId> = active.into_iter().collect();
        let index: HashMap<FunctionId, usize> =
            functions.iter().enumerate().map(|(k, &f)| (f, k)).collect();

        let mut bu = vec![0.0; mu * mu];
        let mut bv = vec![0.0; mv * mv];
        let mut tmp = vec![0.0; m];
        let mut cell_bases = Vec::with_capacity(cells.len());
        for &cell in &cells {
            let top = cell.level();
            let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
            for l in 0..=top {
                let anc = cell.ancestor(l);
                let s = levels.space(l);
                let (ku, kv) = (s.u.span(anc.i as usize), s.v.span(anc.j as usize));
                if l > 0 && !rows.is_empty() {
                    let par = cell.ancestor(l - 1);
                    levels.local_block(0, l - 1, par.i as usize, anc.i as usize, &mut bu);
                    levels.local_block(1, l - 1, par.j as usize, anc.j as usize, &mut bv);
                    let mut dead = vec![false; m];
                    for a in 0..mu {
                        for b in 0..mv {
                            let f = FunctionId::new(l, ku - pu + a, kv - pv + b);
                            dead[a * mv + b] = mem.in_omega(f);
                        }
                    }
                    for (_, row) in rows.iter_mut() {
                        apply_block(row, &bu, &bv, mu, mv, &mut tmp);
                        for (x, &d) in row.iter_mut().zip(&dead) {
                            if d {
                                *x = 0.0;
                            }
                        }
                    }
                    rows.retain(|(_, r)| r.iter().any(|&x| x != 0.0));
                }
                for a in 0..mu {
                    for b in 0..mv {
                        let f = FunctionId::new(l, ku - pu + a, kv - pv + b);
                        if let Some(&g) = index.get(&f) {
                            let mut row = vec![0.0; m];
                            row[a * mv + b] = 1.0;
                            rows.push((g, row));
                        }
                    }
                }
            }
            rows.sort_by_key(|r| r.0);
            let mut cb = CellBasis {
                cell,
                functions: Vec::with_capacity(rows.len()),
                coeffs: Vec::with_capacity(rows.len() * m),
            };
            for (g, r) in rows {
                cb.functions.push(g);
                cb.coeffs.extend_from_slice(&r);
            }
            cell_bases.push(cb);
        }
        let cell_index = cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        Self {
            mesh,
            functions,
            index,
            cells: cell_bases,
            cell_index,
        }
    }

    pub fn mesh(&self) -> &HierarchicalMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.functions.len()
    }

    pub fn degrees(&self) -> (usize, usize) {
        self.mesh.levels().degrees()
    }

    pub fn functions(&self) -> &[FunctionId] {
        &self.functions
    }

    pub fn function(&self, k: usize) -> FunctionId {
        self.functions[k]
    }

    pub fn index_of(&self, f: FunctionId) -> Option<usize> {
        self.index.get(&f).copied()
    }

    /// Per-cell extraction data for every active cell, in mesh order.
    pub fn cells(&self) -> &[CellBasis] {
        &self.cells
    }

    pub fn cell(&self, c: Cell) -> Option<&CellBasis> {
        self.cell_index.get(&c).map(|&k| &self.cells[k])
    }

    /// Extraction on `c`, which must be an active cell or a descendant of one.
    pub fn cell_basis_on(&self, c: Cell) -> Result<Cow<'_, CellBasis>> {
        if let Some(cb) = self.cell(c) {
            return Ok(Cow::Borrowed(cb));
        }
        let a = self.mesh.active_ancestor(c).ok_or_else(|| {
            Error::Structure(format!("cell ({}, {}, {}) is coarser than the basis mesh", c.level, c.i, c.j))
        })?;
        let levels = self.mesh.levels();
        let (pu, pv) = levels.degrees();
        let (mu, mv) = (pu + 1, pv + 1);
        let m = mu * mv;
        let src = &self.cells[self.cell_index[&a]];
        let mut coeffs = src.coeffs.clone();
        let mut bu = vec![0.0; mu * mu];
        let mut bv = vec![0.0; mv * mv];
        let mut tmp = vec![0.0; m];
        for l in a.level()..c.level() {
            let (par, ch) = (c.ancestor(l), c.ancestor(l + 1));
            levels.local_block(0, l, par.i as usize, ch.i as usize, &mut bu);
            levels.local_block(1, l, par.j as usize, ch.j as usize, &mut bv);
            for row in coeffs.chunks_mut(m) {
                apply_block(row, &bu, &bv, mu, mv, &mut tmp);
            }
        }
        Ok(Cow::Owned(CellBasis {
            cell: c,
            functions: src.functions.clone(),
            coeffs,
        }))
    }

    /// Local B-spline values of the cell's level at `xi`.
    pub fn local_values(&self, c: Cell, xi: [f64; 2], order: usize, lv: &mut LocalValues) {
        self.mesh
            .space(c.level())
            .local_eval(c.i as usize, c.j as usize, xi, order, lv);
    }

    /// Nonzero functions at `xi` with values, gradients and Hessians `[∂uu, ∂uv, ∂vv]`.
    pub fn eval(&self, xi: [f64; 2], order: usize) -> Result<(Vec<usize>, FunctionValues)> {
        let c = self.mesh.locate(xi)?;
        let cb = self.cell(c).expect("located cell is active");
        let mut lv = LocalValues::default();
        self.local_values(c, xi, order, &mut lv);
        let mut fv = FunctionValues::default();
        cb.combine(&lv, order, &mut fv);
        Ok((cb.functions.clone(), fv))
    }

    /// Evaluates `Σ c_k β_k` and its first derivatives at `xi`.
    pub fn eval_combination<const D: usize>(&self, coeffs: &[[f64; D]], xi: [f64; 2]) -> Result<([f64; D], [[f64; D]; 2])> {
        let (funcs, fv) = self.eval(xi, 1)?;
        let mut val = [0.0; D];
        let mut der = [[0.0; D]; 2];
        for (r, &g) in funcs.iter().enumerate() {
            for d in 0..D {
                val[d] += coeffs[g][d] * fv.value[r];
                der[0][d] += coeffs[g][d] * fv.grad[r][0];
                der[1][d] += coeffs[g][d] * fv.grad[r][1];
            }
        }
        Ok((val, der))
    }
}

/// `row ← row · (Bu ⊗ Bv)` for a local coefficient row.
fn apply_block(row: &mut [f64], bu: &[f64], bv: &[f64], mu: usize, mv: usize, tmp: &mut [f64]) {
    // along v: tmp[a][b'] = Σ_b row[a][b] bv[b][b']
    for a in 0..mu {
        for b2 in 0..mv {
            let mut s = 0.0;
            for b in 0..mv {
                s += row[a * mv + b] * bv[b * mv + b2];
            }
            tmp[a * mv + b2] = s;
        }
    }
    for a2 in 0..mu {
        for b2 in 0..mv {
            let mut s = 0.0;
            for a in 0..mu {
                s += tmp[a * mv + b2] * bu[a * mu + a2];
            }
            row[a2 * mv + b2] = s;
        }
    }
}

/// Boundary element: an active cell's edge on one side of the square.
#[derive(Clone, Debug)]
pub struct BoundaryEdge {
    pub side: Side,
    pub cell: Cell,
    pub t0: f64,
    pub t1: f64,
    /// Positions in the owning [`BoundaryDofSet`].
    pub dofs: Vec<usize>,
    /// Row-major `dofs.len() × (p + 1)` trace coefficients over the cell-level 1D B-splines.
    pub coeffs: Vec<f64>,
}

/// Functions with nonzero trace on the boundary of the square.
#[derive(Clone, Debug)]
pub struct BoundaryDofSet {
    basis: Arc<ThbBasis>,
    indices: Vec<usize>,
    position: HashMap<usize, usize>,
    edges: Vec<BoundaryEdge>,
}

const TRACE_TOL: f64 = 1e-14;

impl BoundaryDofSet {
    pub fn new(basis: Arc<ThbBasis>) -> Self {
        let levels = basis.mesh().levels().clone();
        let (pu, pv) = levels.degrees();
        let mv = pv + 1;
        let mut raw: Vec<(Side, Cell, f64, f64, Vec<(usize, Vec<f64>)>)> = Vec::new();
        for cb in basis.cells() {
            let c = cb.cell;
            let s = levels.space(c.level());
            let (nu, nv) = (s.u.num_elements(), s.v.num_elements());
            let [[u0, u1], [v0, v1]] = levels.cell_bounds(c);
            let mut sides = Vec::new();
            if c.j == 0 {
                sides.push((Side::South, u0, u1));
            }
            if c.i as usize == nu - 1 {
                sides.push((Side::East, v0, v1));
            }
            if c.j as usize == nv - 1 {
                sides.push((Side::North, u0, u1));
            }
            if c.i == 0 {
                sides.push((Side::West, v0, v1));
            }
            for (side, t0, t1) in sides {
                let mut rows = Vec::new();
                for (r, &g) in cb.functions.iter().enumerate() {
                    let row = &cb.coeffs[r * (pu + 1) * mv..(r + 1) * (pu + 1) * mv];
                    let trace: Vec<f64> = match side {
                        Side::South => (0..=pu).map(|a| row[a * mv]).collect(),
                        Side::North => (0..=pu).map(|a| row[a * mv + pv]).collect(),
                        Side::West => (0..=pv).map(|b| row[b]).collect(),
                        Side::East => (0..=pv).map(|b| row[pu * mv + b]).collect(),
                    };
                    if trace.iter().any(|x| x.abs() > TRACE_TOL) {
                        rows.push((g, trace));
                    }
                }
                raw.push((side, c, t0, t1, rows));
            }
        }
        let indices: Vec<usize> = raw
            .iter()
            .flat_map(|e| e.4.iter().map(|r| r.0))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let position: HashMap<usize, usize> = indices.iter().enumerate().map(|(k, &g)| (g, k)).collect();
        let mut edges: Vec<BoundaryEdge> = raw
            .into_iter()
            .map(|(side, cell, t0, t1, rows)| BoundaryEdge {
                side,
                cell,
                t0,
                t1,
                dofs: rows.iter().map(|r| position[&r.0]).collect(),
                coeffs: rows.into_iter().flat_map(|r| r.1).collect(),
            })
            .collect();
        edges.sort_by(|a, b| (a.side, a.t0).partial_cmp(&(b.side, b.t0)).unwrap());
        Self { basis, indices, position, edges }
    }

    pub fn basis(&self) -> &Arc<ThbBasis> {
        &self.basis
    }

    /// Global basis indices of boundary functions, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, global: usize) -> Option<usize> {
        self.position.get(&global).copied()
    }

    pub fn edges(&self) -> &[BoundaryEdge] {
        &self.edges
    }

    pub fn side_edges(&self, side: Side) -> impl Iterator<Item = &BoundaryEdge> {
        self.edges.iter().filter(move |e| e.side == side)
    }

    /// Edge of `side` containing parameter `t`.
    pub fn edge_at(&self, side: Side, t: f64) -> &BoundaryEdge {
        let start = self.edges.partition_point(|e| e.side < side);
        let end = self.edges.partition_point(|e| e.side <= side);
        let k = self.edges[start..end].partition_point(|e| e.t0 <= t);
        &self.edges[start + k.clamp(1, end - start) - 1]
    }

    /// Trace values and `d/dt` derivatives of the edge's functions at `t`.
    pub fn edge_values(&self, e: &BoundaryEdge, t: f64, val: &mut Vec<f64>, der: &mut Vec<f64>) {
        let levels = self.basis.mesh().levels();
        let s = levels.space(e.cell.level());
        let (kv, el) = if e.side.along() == 0 {
            (&s.u, e.cell.i as usize)
        } else {
            (&s.v, e.cell.j as usize)
        };
        let m = kv.degree() + 1;
        let mut b = [0.0; 16];
        kv.eval_element(el, t, 1, &mut b);
        val.clear();
        der.clear();
        for r in 0..e.dofs.len() {
            let row = &e.coeffs[r * m..(r + 1) * m];
            val.push(row.iter().zip(&b[..m]).map(|(c, x)| c * x).sum());
            der.push(row.iter().zip(&b[m..2 * m]).map(|(c, x)| c * x).sum());
        }
    }
}

/// Cells to refine so that every marked function becomes representable.
///
/// For each marked function, the active cells meeting its support that are coarser than
/// the function itself; for functions of the boundary-refined companion basis these are
/// exactly the lowest-level cells among those meeting the support.
pub fn minimal_refinement_set(mesh: &HierarchicalMesh, marked: &[FunctionId]) -> BTreeSet<Cell> {
    let levels = mesh.levels();
    let mut out = BTreeSet::new();
    for &f in marked {
        let (ru, rv) = levels.support(f);
        for c in mesh.active_cells_in(f.level(), ru, rv) {
            if c.level() < f.level() {
                out.insert(c);
            }
        }
    }
    out
}

/// Active cells meeting the support of `f` (interior overlap).
pub fn cells_meeting_support(mesh: &HierarchicalMesh, f: FunctionId) -> BTreeSet<Cell> {
    let (ru, rv) = mesh.levels().support(f);
    mesh.active_cells_in(f.level(), ru, rv)
}
