//! Univariate and tensor-product B-spline spaces.

use crate::error::{Error, Result};

/// Open knot vector with an associated polynomial degree.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
    /// Knot index `k` of every nonempty span `[t_k, t_{k+1})`, in order.
    spans: Vec<usize>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::KnotVector(format!(
                "{} knots is too few for degree {p}",
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::KnotVector("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::KnotVector("knots must be non-decreasing".into()));
        }
        let n = knots.len();
        if knots[0] != 0.0 || knots[n - 1] != 1.0 {
            return Err(Error::KnotVector("knots must span [0, 1]".into()));
        }
        let front = knots.iter().take_while(|&&t| t == 0.0).count();
        let back = knots.iter().rev().take_while(|&&t| t == 1.0).count();
        if front != p + 1 || back != p + 1 {
            return Err(Error::KnotVector(format!(
                "end knots must have multiplicity exactly {}",
                p + 1
            )));
        }
        let mut run = 1;
        for w in knots.windows(2) {
            run = if w[1] == w[0] { run + 1 } else { 1 };
            if run > p + 1 {
                return Err(Error::KnotVector(format!(
                    "knot {} repeated more than {} times",
                    w[1],
                    p + 1
                )));
            }
        }
        let spans = (p..n - p - 1).filter(|&k| knots[k] < knots[k + 1]).collect();
        Ok(Self { degree, knots, spans })
    }

    /// Open uniform knot vector with `elements` equal spans.
    pub fn uniform(degree: usize, elements: usize) -> Result<Self> {
        if elements == 0 {
            return Err(Error::KnotVector("at least one element required".into()));
        }
        let breaks: Vec<f64> = (0..=elements).map(|i| i as f64 / elements as f64).collect();
        Self::from_breaks(degree, &breaks)
    }

    /// Maximum-regularity open knot vector over strictly increasing breakpoints.
    pub fn from_breaks(degree: usize, breaks: &[f64]) -> Result<Self> {
        if breaks.len() < 2 || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::KnotVector("breakpoints must be strictly increasing".into()));
        }
        let mut knots = vec![breaks[0]; degree];
        knots.extend_from_slice(breaks);
        knots.extend(std::iter::repeat_n(breaks[breaks.len() - 1], degree));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn num_elements(&self) -> usize {
        self.spans.len()
    }

    /// Knot span index of element `e`.
    pub fn span(&self, e: usize) -> usize {
        self.spans[e]
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let k = self.spans[e];
        (self.knots[k], self.knots[k + 1])
    }

    /// Distinct knot values.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.spans.iter().map(|&k| self.knots[k]).collect();
        b.push(1.0);
        b
    }

    /// Element containing `x`; right endpoints belong to the element on their left only at 1.
    pub fn find_element(&self, x: f64) -> usize {
        let n = self.spans.len();
        let pos = self.spans.partition_point(|&k| self.knots[k] <= x);
        pos.clamp(1, n) - 1
    }

    /// Inclusive range of elements on which basis function `i` is supported.
    pub fn support_elements(&self, i: usize) -> (usize, usize) {
        let p = self.degree;
        let first = self.spans.partition_point(|&k| k < i);
        let last = self.spans.partition_point(|&k| k <= i + p) - 1;
        (first, last)
    }

    /// Values and derivatives up to `nd` of the `p + 1` functions nonzero on element `e`.
    ///
    /// `out` is laid out as `out[d * (p + 1) + a]` for derivative `d` of local function `a`,
    /// where local function `a` is global function `span(e) - p + a`.
    pub fn eval_element(&self, e: usize, x: f64, nd: usize, out: &mut [f64]) {
        let p = self.degree;
        let k = self.spans[e];
        let t = &self.knots;
        let m = p + 1;
        debug_assert!(out.len() >= (nd + 1) * m);
        let mut ndu = [[0.0f64; 8]; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        assert!(p < 8, "degree above 7 is not supported");
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            out[j] = ndu[j][p];
        }
        let nd_eff = nd.min(p);
        let mut a = [[0.0f64; 8]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for kk in 1..=nd_eff {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = p as isize - kk as isize;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk { kk - 1 } else { p - r };
                for j in j1..=j2 {
                    let rj = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][rj];
                    d += a[s2][j] * ndu[rj][pk as usize];
                }
                if r as isize <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[(pk + 1) as usize][r];
                    d += a[s2][kk] * ndu[r][pk as usize];
                }
                out[kk * m + r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for kk in 1..=nd_eff {
            for j in 0..=p {
                out[kk * m + j] *= fac;
            }
            fac *= (p - kk) as f64;
        }
        for kk in nd_eff + 1..=nd {
            for j in 0..=p {
                out[kk * m + j] = 0.0;
            }
        }
    }

    /// Value of basis function `i` and its derivatives up to `nd` at `x`.
    pub fn eval_function(&self, i: usize, x: f64, nd: usize) -> Vec<f64> {
        let p = self.degree;
        let e = self.find_element(x);
        let k = self.spans[e];
        let mut res = vec![0.0; nd + 1];
        if i + p < k || i > k {
            return res;
        }
        let mut buf = vec![0.0; (nd + 1) * (p + 1)];
        self.eval_element(e, x, nd, &mut buf);
        let a = i + p - k;
        for (d, r) in res.iter_mut().enumerate() {
            *r = buf[d * (p + 1) + a];
        }
        res
    }

    /// Knot averages, one per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.num_basis())
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Knot vector with every nonempty span split at its midpoint.
    pub fn refine_dyadic(&self) -> KnotVector {
        let p = self.degree;
        let mut knots = Vec::with_capacity(self.knots.len() + self.spans.len());
        for (k, &t) in self.knots.iter().enumerate() {
            knots.push(t);
            if k >= p && k + 1 < self.knots.len() && t < self.knots[k + 1] {
                knots.push(0.5 * (t + self.knots[k + 1]));
            }
        }
        KnotVector { degree: p, spans: Self::spans_of(p, &knots), knots }
    }

    fn spans_of(p: usize, knots: &[f64]) -> Vec<usize> {
        (p..knots.len() - p - 1).filter(|&k| knots[k] < knots[k + 1]).collect()
    }

    /// Positions of this vector's knots inside `fine`, occurrence by occurrence.
    fn embedding(&self, fine: &KnotVector) -> Option<Vec<usize>> {
        let mut map = Vec::with_capacity(self.knots.len());
        let mut f = 0;
        for &t in &self.knots {
            while f < fine.knots.len() && fine.knots[f] < t {
                f += 1;
            }
            if f == fine.knots.len() || fine.knots[f] != t {
                return None;
            }
            map.push(f);
            f += 1;
        }
        Some(map)
    }
}

/// Inserts `u` once into a local spline given by `knots` and `coefs`.
fn insert_knot(knots: &mut Vec<f64>, coefs: &mut Vec<f64>, p: usize, u: f64) {
    let n = coefs.len();
    let k = (knots.partition_point(|&t| t <= u) - 1).min(n - 1);
    let mut q = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let v = if j + p <= k {
            coefs[j]
        } else if j <= k {
            let denom = knots[j + p] - knots[j];
            let alpha = if denom > 0.0 { (u - knots[j]) / denom } else { 0.0 };
            alpha * coefs[j] + (1.0 - alpha) * coefs[j - 1]
        } else {
            coefs[j - 1]
        };
        q.push(v);
    }
    knots.insert(k + 1, u);
    *coefs = q;
}

/// Univariate refinement relation between nested knot vectors.
///
/// Row `i` lists the coefficients of coarse function `i` in the fine basis,
/// starting at fine index `rows[i].0`.
#[derive(Clone, Debug)]
pub struct Refinement {
    rows: Vec<(usize, Vec<f64>)>,
}

impl Refinement {
    pub fn between(coarse: &KnotVector, fine: &KnotVector) -> Result<Self> {
        if coarse.degree != fine.degree {
            return Err(Error::Structure("refinement requires equal degrees".into()));
        }
        let map = coarse
            .embedding(fine)
            .ok_or_else(|| Error::Structure("knot vectors are not nested".into()))?;
        let p = coarse.degree;
        let t = &coarse.knots;
        let rows = (0..coarse.num_basis())
            .map(|i| {
                let (a, b) = (map[i], map[i + p + 1]);
                let window = &fine.knots[a..=b];
                let mut knots = vec![t[i]; p];
                knots.extend_from_slice(&t[i..=i + p + 1]);
                knots.extend(std::iter::repeat_n(t[i + p + 1], p));
                let mut coefs = vec![0.0; 2 * p + 1];
                coefs[p] = 1.0;
                // walk the fine window and insert whatever the coarse window lacks
                let mut c = i;
                for (w, &s) in window.iter().enumerate() {
                    if c <= i + p + 1 && map[c] == a + w {
                        c += 1;
                    } else {
                        insert_knot(&mut knots, &mut coefs, p, s);
                    }
                }
                let count = window.len() - p - 1;
                (a, coefs[p..p + count].to_vec())
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn num_coarse(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.rows[i].0, &self.rows[i].1)
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        let (start, c) = &self.rows[i];
        if j < *start {
            return 0.0;
        }
        c.get(j - start).copied().unwrap_or(0.0)
    }
}

/// Sparse matrix in coordinate form with sorted, unique coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Assembles from triplets, summing duplicates.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            assert!(i < rows && j < cols, "triplet ({i}, {j}) out of bounds");
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        Self { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(i, j), |&(a, b, _)| (a, b))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    /// `y = A^T x`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for &(i, j, v) in &self.entries {
            y[j] += v * x[i];
        }
        y
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

/// Values of the local tensor functions on one element, up to second derivatives.
///
/// Local function `a * (p_v + 1) + b` is the product of local u-function `a`
/// and local v-function `b`.
#[derive(Clone, Debug, Default)]
pub struct LocalValues {
    pub value: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub duu: Vec<f64>,
    pub duv: Vec<f64>,
    pub dvv: Vec<f64>,
}

impl LocalValues {
    fn resize(&mut self, n: usize) {
        for v in [
            &mut self.value,
            &mut self.du,
            &mut self.dv,
            &mut self.duu,
            &mut self.duv,
            &mut self.dvv,
        ] {
            v.clear();
            v.resize(n, 0.0);
        }
    }
}

/// Evaluated basis function at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisValue {
    pub function: usize,
    pub point: usize,
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// Tensor-product space `S_u ⊗ S_v` at a given level of a dyadic hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSplineSpace {
    pub u: KnotVector,
    pub v: KnotVector,
    pub level: usize,
}

impl TensorSplineSpace {
    pub fn new(u: KnotVector, v: KnotVector, level: usize) -> Self {
        Self { u, v, level }
    }

    pub fn dim(&self) -> usize {
        self.u.num_basis() * self.v.num_basis()
    }

    /// Flat index of tensor function `(iu, iv)`.
    pub fn index(&self, iu: usize, iv: usize) -> usize {
        iu * self.v.num_basis() + iv
    }

    pub fn tensor_index(&self, i: usize) -> (usize, usize) {
        let nv = self.v.num_basis();
        (i / nv, i % nv)
    }

    pub fn local_len(&self) -> usize {
        (self.u.degree() + 1) * (self.v.degree() + 1)
    }

    pub fn refine_dyadic(&self) -> Self {
        Self {
            u: self.u.refine_dyadic(),
            v: self.v.refine_dyadic(),
            level: self.level + 1,
        }
    }

    /// Local tensor values on element `(eu, ev)` at `(x, y)`.
    pub fn local_eval(&self, eu: usize, ev: usize, xi: [f64; 2], order: usize, out: &mut LocalValues) {
        let (pu, pv) = (self.u.degree(), self.v.degree());
        let (mu, mv) = (pu + 1, pv + 1);
        let nd = order.min(2);
        let mut bu = [0.0; 24];
        let mut bv = [0.0; 24];
        self.u.eval_element(eu, xi[0], nd, &mut bu);
        self.v.eval_element(ev, xi[1], nd, &mut bv);
        out.resize(mu * mv);
        for a in 0..mu {
            for b in 0..mv {
                let l = a * mv + b;
                out.value[l] = bu[a] * bv[b];
                if nd >= 1 {
                    out.du[l] = bu[mu + a] * bv[b];
                    out.dv[l] = bu[a] * bv[mv + b];
                }
                if nd >= 2 {
                    out.duu[l] = bu[2 * mu + a] * bv[b];
                    out.duv[l] = bu[mu + a] * bv[mv + b];
                    out.dvv[l] = bu[a] * bv[2 * mv + b];
                }
            }
        }
    }

    /// Values (and derivatives up to `order`) of every function nonzero at each point.
    pub fn eval_basis(&self, points: &[[f64; 2]], order: usize) -> Result<Vec<BasisValue>> {
        let (pu, pv) = (self.u.degree(), self.v.degree());
        let mv = pv + 1;
        let mut out = Vec::new();
        let mut lv = LocalValues::default();
        for (pi, &xi) in points.iter().enumerate() {
            check_point(xi)?;
            let eu = self.u.find_element(xi[0]);
            let ev = self.v.find_element(xi[1]);
            self.local_eval(eu, ev, xi, order, &mut lv);
            let (ku, kv) = (self.u.span(eu), self.v.span(ev));
            for a in 0..=pu {
                for b in 0..=pv {
                    let l = a * mv + b;
                    out.push(BasisValue {
                        function: self.index(ku - pu + a, kv - pv + b),
                        point: pi,
                        value: lv.value[l],
                        grad: if order >= 1 { [lv.du[l], lv.dv[l]] } else { [0.0; 2] },
                        hess: if order >= 2 {
                            [[lv.duu[l], lv.duv[l]], [lv.duv[l], lv.dvv[l]]]
                        } else {
                            [[0.0; 2]; 2]
                        },
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn greville_points(&self) -> Vec<[f64; 2]> {
        let gu = self.u.greville();
        let gv = self.v.greville();
        gu.iter()
            .flat_map(|&x| gv.iter().map(move |&y| [x, y]))
            .collect()
    }

    /// Two-scale matrix `C[i][j]` expressing coarse function `i` in the fine basis.
    pub fn two_scale_matrix(coarse: &Self, fine: &Self) -> Result<SparseMatrix> {
        let ru = Refinement::between(&coarse.u, &fine.u)?;
        let rv = Refinement::between(&coarse.v, &fine.v)?;
        let mut t = Vec::new();
        for iu in 0..coarse.u.num_basis() {
            let (su, cu) = ru.row(iu);
            for iv in 0..coarse.v.num_basis() {
                let (sv, cv) = rv.row(iv);
                let i = coarse.index(iu, iv);
                for (a, &x) in cu.iter().enumerate() {
                    for (b, &y) in cv.iter().enumerate() {
                        if x * y != 0.0 {
                            t.push((i, fine.index(su + a, sv + b), x * y));
                        }
                    }
                }
            }
        }
        Ok(SparseMatrix::from_triplets(coarse.dim(), fine.dim(), t))
    }
}

pub(crate) fn check_point(xi: [f64; 2]) -> Result<()> {
    if !(0.0..=1.0).contains(&xi[0]) || !(0.0..=1.0).contains(&xi[1]) {
        return Err(Error::Domain(xi[0], xi[1]));
    }
    Ok(())
}
