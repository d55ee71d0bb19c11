//! Hierarchical B-spline oracle built from the literal HB definition and Cox–de Boor.

use faer::prelude::*;
use faer::Mat;
use isodefeat::hierarchy::{Cell, HierarchicalMesh, ThbBasis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A test hierarchy on an `n × n` uniform base grid, described by refined cells per level.
pub struct Case {
    pub p: usize,
    pub n: usize,
    pub refined: Vec<Vec<(usize, usize)>>,
}

impl Case {
    pub fn mesh(&self) -> HierarchicalMesh {
        let mut m = HierarchicalMesh::uniform(self.p, self.p, self.n, self.n).unwrap();
        for (l, cells) in self.refined.iter().enumerate() {
            let cs: Vec<Cell> = cells.iter().map(|&(i, j)| Cell::new(l, i, j)).collect();
            m = m.refine_cells(&cs).unwrap();
        }
        m
    }

    pub fn cells_per_side(&self, l: usize) -> usize {
        self.n << l
    }

    /// Level-`l` knots of the uniform open vector.
    pub fn knots(&self, l: usize) -> Vec<f64> {
        let n = self.cells_per_side(l);
        let mut k = vec![0.0; self.p];
        k.extend((0..=n).map(|i| i as f64 / n as f64));
        k.extend(std::iter::repeat_n(1.0, self.p));
        k
    }

    /// Whether the level-`l` cell `(i, j)` lies in `ω_l`, decided geometrically.
    pub fn in_omega(&self, l: usize, i: usize, j: usize) -> bool {
        if l == 0 {
            return true;
        }
        let h = 1.0 / self.cells_per_side(l) as f64;
        let center = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
        self.refined.get(l - 1).is_some_and(|cells| {
            cells.iter().any(|&(a, b)| {
                let hc = 1.0 / self.cells_per_side(l - 1) as f64;
                let lo = [a as f64 * hc, b as f64 * hc];
                center[0] > lo[0] && center[0] < lo[0] + hc && center[1] > lo[1] && center[1] < lo[1] + hc
            })
        })
    }

    /// HB functions from the literal definition: supp ⊂ ω_l and supp ⊄ ω_{l+1}.
    pub fn hb_functions(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for l in 0..=self.refined.len() {
            let t = self.knots(l);
            let nb = t.len() - self.p - 1;
            let h = 1.0 / self.cells_per_side(l) as f64;
            let cells_of = |i: usize| {
                let (a, b) = (t[i], t[i + self.p + 1]);
                ((a / h).round() as usize..(b / h).round() as usize).collect::<Vec<_>>()
            };
            for iu in 0..nb {
                for iv in 0..nb {
                    let cs: Vec<(usize, usize)> = cells_of(iu)
                        .into_iter()
                        .flat_map(|i| cells_of(iv).into_iter().map(move |j| (i, j)))
                        .collect();
                    let inside = cs.iter().all(|&(i, j)| self.in_omega(l, i, j));
                    let refined = cs.iter().all(|&(i, j)| self.in_omega(l + 1, 2 * i, 2 * j));
                    if inside && !refined {
                        out.push((l, iu, iv));
                    }
                }
            }
        }
        out
    }

    pub fn hb_value(&self, f: (usize, usize, usize), xi: [f64; 2]) -> f64 {
        let t = self.knots(f.0);
        cox_de_boor(&t, f.1, self.p, xi[0]) * cox_de_boor(&t, f.2, self.p, xi[1])
    }
}

pub fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = t[t.len() - 1];
        let inside = t[i] <= x && x < t[i + 1];
        let at_end = x == last && t[i] < t[i + 1] && t[i + 1] == last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    if t[i + p] > t[i] {
        v += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
    }
    if t[i + p + 1] > t[i + 1] {
        v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
    }
    v
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { p: 3, n: 4, refined: vec![vec![(0, 0)]] },
        Case { p: 3, n: 4, refined: vec![vec![(0, 0), (1, 0), (0, 1), (1, 1)], vec![(0, 0), (1, 1)]] },
        Case { p: 2, n: 5, refined: vec![vec![(1, 1), (2, 1), (2, 2), (3, 3)], vec![(4, 3), (5, 3), (4, 4)]] },
        Case {
            p: 3,
            n: 6,
            refined: vec![
                vec![(0, 5), (1, 5), (2, 5), (3, 5), (4, 5), (5, 5), (5, 4)],
                vec![(4, 11), (5, 11), (6, 11), (7, 11), (10, 9)],
            ],
        },
        Case { p: 2, n: 3, refined: vec![] },
    ]
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.gen(), rng.gen()]).collect()
}

/// Random points, `k` inside every active cell.
pub fn cell_points(rng: &mut ChaCha8Rng, m: &HierarchicalMesh, k: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for c in m.active_cells() {
        let [[a, b], [c0, d]] = m.cell_bounds(c);
        for _ in 0..k {
            pts.push([a + (b - a) * rng.gen::<f64>(), c0 + (d - c0) * rng.gen::<f64>()]);
        }
    }
    pts
}

/// Dense collocation matrix of the THB basis at `pts`.
pub fn thb_matrix(basis: &ThbBasis, pts: &[[f64; 2]]) -> Mat<f64> {
    let mut a = Mat::<f64>::zeros(pts.len(), basis.dim());
    for (r, &xi) in pts.iter().enumerate() {
        let (funcs, fv) = basis.eval(xi, 0).unwrap();
        for (k, &g) in funcs.iter().enumerate() {
            a[(r, g)] = fv.value[k];
        }
    }
    a
}

/// Relative least-squares residual of `y` against the columns of `a`.
pub fn lstsq_residual(a: &Mat<f64>, y: &[f64]) -> f64 {
    let b = Mat::<f64>::from_fn(y.len(), 1, |i, _| y[i]);
    let x = a.col_piv_qr().solve_lstsq(&b);
    let r = a * &x - &b;
    let rn = (0..y.len()).map(|i| r[(i, 0)].powi(2)).sum::<f64>().sqrt();
    let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    rn / yn.max(1e-300)
}

/// Companion of `m`: every active cell touching the boundary refined once.
pub fn companion(m: &HierarchicalMesh) -> HierarchicalMesh {
    let cells: Vec<Cell> = m.active_cells().into_iter().filter(|&c| m.touches_boundary(c)).collect();
    m.refine_cells(&cells).unwrap()
}

