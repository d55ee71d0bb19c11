use std::sync::Arc;

use isodefeat::boundary::{fit_boundary, BoundaryCurve, ExactBoundary, FitConfig, SideCurve};
use isodefeat::hierarchy::{BoundaryDofSet, Cell, HierarchicalMesh, ThbBasis};
use isodefeat::linalg::mul;
use isodefeat::param::{
    certify_or_refine, egg_jacobian, egg_residual, egg_residual_vector, folded_cells, initial_map, interior_functions,
    prolong, solve_egg, EggConfig, GeometryMap, StateSpace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(p: [[f64; 2]; 4]) -> ExactBoundary {
    ExactBoundary {
        south: SideCurve::Line { from: p[0], to: p[1] },
        east: SideCurve::Line { from: p[1], to: p[2] },
        north: SideCurve::Line { from: p[3], to: p[2] },
        west: SideCurve::Line { from: p[0], to: p[3] },
    }
}

fn flag() -> ExactBoundary {
    ExactBoundary {
        south: SideCurve::Line { from: [0.0, 0.0], to: [3.0, 0.0] },
        east: SideCurve::Line { from: [3.0, 0.0], to: [3.0, 1.0] },
        north: SideCurve::SineLine { from: [0.0, 1.0], to: [3.0, 1.0], offset: [0.0, -0.1], frequency: 31.0 },
        west: SideCurve::Line { from: [0.0, 0.0], to: [0.0, 1.0] },
    }
}

fn basis(p: usize, n: usize) -> Arc<ThbBasis> {
    Arc::new(ThbBasis::new(HierarchicalMesh::uniform(p, p, n, n).unwrap()))
}

fn fit(exact: &ExactBoundary, b: &Arc<ThbBasis>) -> BoundaryCurve {
    fit_boundary(exact, Arc::new(BoundaryDofSet::new(b.clone())), &FitConfig::default()).unwrap()
}

/// Convex quadrilateral with corners on a circle, counter-clockwise from the lower left.
fn random_convex(rng: &mut ChaCha8Rng) -> [[f64; 2]; 4] {
    let ranges = [(200.0, 250.0), (290.0, 340.0), (20.0, 70.0), (110.0, 160.0)];
    let r = rng.gen_range(0.5..3.0);
    let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    ranges.map(|(a, b): (f64, f64)| {
        let t = rng.gen_range(a..b).to_radians();
        [c[0] + r * t.cos(), c[1] + r * t.sin()]
    })
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect()
}

#[test]
fn identity_boundary_gives_identity_map() {
    let b = basis(3, 5);
    let square = quad([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    let map = initial_map(&fit(&square, &b), b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for xi in random_points(&mut rng, 50) {
        let m = map.eval(xi).unwrap();
        assert!((m.x[0] - xi[0]).abs() < 1e-10 && (m.x[1] - xi[1]).abs() < 1e-10);
    }
    let (solved, log) = solve_egg(&map, &EggConfig::default()).unwrap();
    assert_eq!(log.iterations(), 0);
    assert!(log.final_residual < 1e-12);
    assert_eq!(solved.control(), map.control());
}

#[test]
fn affine_boundary_gives_affine_map() {
    let a = [[1.5, 0.4], [-0.3, 0.8]];
    let t = [2.0, -1.0];
    let f = |x: [f64; 2]| [t[0] + a[0][0] * x[0] + a[0][1] * x[1], t[1] + a[1][0] * x[0] + a[1][1] * x[1]];
    let b = basis(2, 4);
    let exact = quad([f([0.0, 0.0]), f([1.0, 0.0]), f([1.0, 1.0]), f([0.0, 1.0])]);
    let map = initial_map(&fit(&exact, &b), b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for xi in random_points(&mut rng, 50) {
        let m = map.eval(xi).unwrap();
        let y = f(xi);
        assert!((m.x[0] - y[0]).abs() < 1e-10 && (m.x[1] - y[1]).abs() < 1e-10);
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.jac[i][j] - a[i][j]).abs() < 1e-9);
            }
        }
    }
    assert!(egg_residual(&map) < 1e-12);
}

#[test]
fn flag_initial_map_matches_the_boundary() {
    let b = basis(3, 10);
    let curve = fit(&flag(), &b);
    let map = initial_map(&curve, b).unwrap();
    assert!(map.trace_error(&curve, 50) < 1e-12);
    assert!(map.control().iter().all(|c| c[0].is_finite() && c[1].is_finite()));
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let b = basis(3, 4);
    let exact = ExactBoundary {
        south: SideCurve::Line { from: [0.0, 0.0], to: [2.0, 0.2] },
        east: SideCurve::SineLine { from: [2.0, 0.2], to: [1.8, 1.5], offset: [0.2, 0.0], frequency: 1.0 },
        north: SideCurve::Line { from: [-0.2, 1.0], to: [1.8, 1.5] },
        west: SideCurve::Line { from: [0.0, 0.0], to: [-0.2, 1.0] },
    };
    let init = initial_map(&fit(&exact, &b), b.clone()).unwrap();
    let interior = interior_functions(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // move away from the harmonic initial guess so every term of the linearization is active
    let mut control = init.control().to_vec();
    for &g in &interior {
        control[g][0] += 0.02 * rng.gen_range(-1.0..1.0);
        control[g][1] += 0.02 * rng.gen_range(-1.0..1.0);
    }
    let map = GeometryMap::new(b.clone(), control.clone());
    let jac = egg_jacobian(&map).unwrap();
    assert_eq!(jac.nrows(), 2 * interior.len());
    for _ in 0..3 {
        let dir: Vec<f64> = (0..2 * interior.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |h: f64| {
            let mut c = control.clone();
            for (i, &g) in interior.iter().enumerate() {
                c[g][0] += h * dir[2 * i];
                c[g][1] += h * dir[2 * i + 1];
            }
            egg_residual_vector(&GeometryMap::new(b.clone(), c))
        };
        let h = 1e-6;
        let (rp, rm) = (shifted(h), shifted(-h));
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let an = mul(&jac, &dir);
        let scale = an.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (a, f) in an.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6 * scale, "{a} vs {f}");
        }
    }
}

#[test]
fn convex_quadrilaterals_converge_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = EggConfig::default();
    let space = StateSpace { depth: 1, min_level: 0 };
    for _ in 0..10 {
        let b = basis(3, 6);
        let curve = fit(&quad(random_convex(&mut rng)), &b);
        let init = initial_map(&curve, b).unwrap();
        let (map, log) = solve_egg(&init, &cfg).unwrap();
        assert!(log.iterations() <= 5, "{:?}", log.steps);
        assert!(log.final_residual < cfg.mu);
        for w in log.steps.windows(2) {
            assert!(w[1].residual < w[0].residual);
        }
        assert!(map.trace_error(&curve, 40) < 1e-12);
        // convex targets never fold
        let state = space.mesh(map.basis().mesh(), None).unwrap();
        assert!(folded_cells(&map, &state).unwrap().is_empty());
        let cert = certify_or_refine(map.clone(), &space, None, &cfg).unwrap();
        assert_eq!(cert.rounds, 0);
        assert_eq!(cert.map.control(), map.control());
    }
}

#[test]
fn residual_trajectory_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = basis(3, 5);
    let curve = fit(&quad(random_convex(&mut rng)), &b);
    let init = initial_map(&curve, b).unwrap();
    let cfg = EggConfig::default();
    let run = |m: &GeometryMap| {
        let (_, log) = solve_egg(m, &cfg).unwrap();
        let mut r: Vec<f64> = log.steps.iter().map(|s| s.residual).collect();
        r.push(log.final_residual);
        (r, log.steps.iter().map(|s| s.step).collect::<Vec<_>>())
    };
    let (base, steps) = run(&init);
    assert!(base.len() >= 3);
    // powers of two scale every floating-point operation exactly
    for s in [0.125, 1024.0] {
        assert_eq!(run(&init.scaled(s)), (base.clone(), steps.clone()));
    }
    // otherwise rounding differs; compare against the trajectory's initial magnitude
    for s in [1e-3, 7.0, 1e4] {
        let (other, other_steps) = run(&init.scaled(s));
        assert_eq!(other.len(), base.len());
        assert_eq!(other_steps, steps);
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() <= 1e-9 * base[0], "{a} vs {b} at scale {s}");
        }
    }
}

#[test]
fn prolongation_reproduces_the_map() {
    let b = basis(3, 4);
    let exact = ExactBoundary {
        south: SideCurve::Line { from: [0.0, 0.0], to: [2.0, 0.0] },
        east: SideCurve::Line { from: [2.0, 0.0], to: [2.0, 1.0] },
        north: SideCurve::SineLine { from: [0.0, 1.0], to: [2.0, 1.0], offset: [0.0, 0.15], frequency: 2.0 },
        west: SideCurve::Line { from: [0.0, 0.0], to: [0.0, 1.0] },
    };
    let (map, _) = solve_egg(&initial_map(&fit(&exact, &b), b.clone()).unwrap(), &EggConfig::default()).unwrap();
    let fine = b
        .mesh()
        .refine_cells(&[Cell::new(0, 0, 0), Cell::new(0, 1, 0), Cell::new(0, 3, 3)])
        .unwrap()
        .refine_cells(&[Cell::new(1, 1, 1)])
        .unwrap();
    let target = Arc::new(ThbBasis::new(fine));
    let p = prolong(&map, target.clone()).unwrap();
    assert_eq!(p.basis().dim(), target.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for xi in random_points(&mut rng, 100) {
        let (a, c) = (map.eval(xi).unwrap(), p.eval(xi).unwrap());
        assert!((a.x[0] - c.x[0]).abs() < 1e-11 && (a.x[1] - c.x[1]).abs() < 1e-11, "{xi:?}");
    }
    // a coarser target is rejected
    assert!(prolong(&p, b).is_err());
}

#[test]
fn nonpositive_tolerance_is_rejected() {
    let b = basis(2, 3);
    let square = quad([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    let map = initial_map(&fit(&square, &b), b).unwrap();
    assert!(solve_egg(&map, &EggConfig { mu: 0.0, ..EggConfig::default() }).is_err());
}

#[test]
fn newton_budget_exhaustion_reports_history() {
    let b = basis(3, 4);
    let curve = fit(&quad([[0.0, 0.0], [2.0, 0.3], [1.5, 1.6], [0.2, 1.0]]), &b);
    let init = initial_map(&curve, b).unwrap();
    let cfg = EggConfig { mu: 1e-30, max_newton: 2, ..EggConfig::default() };
    match solve_egg(&init, &cfg) {
        Err(isodefeat::Error::Convergence { iterations, history, .. }) => {
            assert_eq!(iterations, 2);
            assert_eq!(history.len(), 3);
        }
        other => panic!("expected a convergence error, got {:?}", other.map(|r| r.1)),
    }
}
