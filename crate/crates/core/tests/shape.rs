mod common;

use std::sync::Arc;

use proptest::prelude::*;

use isodefeat::boundary::{BoundaryCurve, ExactBoundary, SideCurve};
use isodefeat::defeature::Defeaturer;
use isodefeat::hierarchy::{BoundaryDofSet, HierarchicalMesh, Side, ThbBasis};
use isodefeat::param::{express_curve, solve_egg, GeometryMap};
use isodefeat::pde::solve_all;
use isodefeat::shape::{assemble_report, companion_fit, directional_derivative, partial_gradients, unit_gradients, ShapeDirection};

use common::*;

fn square() -> ExactBoundary {
    ExactBoundary {
        south: SideCurve::Line { from: [0.0, 0.0], to: [2.0, 0.0] },
        east: SideCurve::Line { from: [2.0, 0.0], to: [2.0, 1.0] },
        north: SideCurve::Line { from: [0.0, 1.0], to: [2.0, 1.0] },
        west: SideCurve::Line { from: [0.0, 0.0], to: [0.0, 1.0] },
    }
}

/// Positions whose trace lives only on sides other than `side`.
fn off_side(dofs: &BoundaryDofSet, side: Side) -> Vec<usize> {
    let mut on = vec![false; dofs.len()];
    for e in dofs.edges() {
        if e.side == side {
            for &p in &e.dofs {
                on[p] = true;
            }
        }
    }
    (0..dofs.len()).filter(|&p| !on[p]).collect()
}

#[test]
fn representable_boundary_has_no_discrepancy() {
    let file = tight_flag();
    let mut cfg = file.run.clone();
    cfg.mesh.cells = [4, 4];
    let mut d = Defeaturer::new(square(), file.problem.clone(), file.qoi.clone(), cfg).unwrap();
    let it = d.iterate().unwrap();
    let worst = it.companion.delta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-13, "max |dc| = {worst:e}");
    assert!(it.report.estimator < 1e-12);
}

#[test]
fn zero_report_marks_nothing() {
    let basis = Arc::new(ThbBasis::new(HierarchicalMesh::uniform(2, 2, 3, 3).unwrap()));
    let dofs = BoundaryDofSet::new(basis);
    let zeros = vec![[0.0; 2]; dofs.len()];
    let r = assemble_report(&dofs, &zeros, &zeros, 0.5);
    assert_eq!(r.estimator, 0.0);
    assert!(r.marked.is_empty());
}

#[test]
fn flag_discrepancy_vanishes_off_the_north_side() {
    let file = tight_flag();
    let it = &iterations(&file, 1)[0];
    let off = off_side(it.companion.dofs(), Side::North);
    assert!(!off.is_empty());
    // the straight sides are reproduced, so only rounding remains there
    let tol = 1e-14 * file.geometry.extent();
    for &p in &off {
        let d = it.companion.delta[p];
        assert!(d[0].abs() <= tol && d[1].abs() <= tol, "position {p}: {d:?}");
    }
    for &k in &it.report.marked {
        assert_eq!(it.report.sides[k], Side::North);
    }
}

#[test]
fn companion_difference_is_the_discrepancy_expansion() {
    let file = tight_flag();
    let fit = isodefeat::boundary::fit_boundary(
        &file.geometry,
        Arc::new(BoundaryDofSet::new(Arc::new(ThbBasis::new(file.run.mesh.build().unwrap())))),
        &file.run.fit,
    )
    .unwrap();
    let c = companion_fit(&fit, &file.geometry, &file.run.fit).unwrap();
    let diff = BoundaryCurve::new(c.dofs().clone(), c.delta.clone());
    let mut worst = 0.0f64;
    for side in Side::ALL {
        for k in 0..100 {
            let t = (k as f64 + 0.5) / 100.0;
            let (a, _) = c.curve.eval(side, t);
            let (b, _) = fit.eval(side, t);
            let (d, _) = diff.eval(side, t);
            worst = worst.max((a[0] - b[0] - d[0]).abs()).max((a[1] - b[1] - d[1]).abs());
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn directional_derivative_is_linear() {
    let file = tight_flag();
    let it = &iterations(&file, 1)[0];
    let dofs = it.companion.dofs().clone();
    let zero = ShapeDirection { dofs: dofs.clone(), amplitude: vec![[0.0; 2]; dofs.len()] };
    assert_eq!(directional_derivative(&it.solution, &file.qoi, &zero).unwrap(), 0.0);

    let n = dofs.len();
    let a1: Vec<[f64; 2]> = (0..n).map(|k| [((k * 7) % 5) as f64 - 2.0, ((k * 3) % 4) as f64 * 0.5]).collect();
    let a2: Vec<[f64; 2]> = (0..n).map(|k| [(k % 3) as f64, -(((k * 5) % 7) as f64)]).collect();
    let (s, t) = (0.7, -1.3);
    let mix: Vec<[f64; 2]> = a1.iter().zip(&a2).map(|(x, y)| [s * x[0] + t * y[0], s * x[1] + t * y[1]]).collect();
    let d = |a: Vec<[f64; 2]>| directional_derivative(&it.solution, &file.qoi, &ShapeDirection { dofs: dofs.clone(), amplitude: a }).unwrap();
    let (g1, g2, g) = (d(a1), d(a2), d(mix));
    let want = s * g1 + t * g2;
    assert!((g - want).abs() <= 1e-10 * want.abs().max(g1.abs()).max(g2.abs()), "{g} vs {want}");

    let short = ShapeDirection { dofs, amplitude: vec![[1.0, 0.0]] };
    assert!(directional_derivative(&it.solution, &file.qoi, &short).is_err());
}

#[test]
fn unit_gradients_match_finite_differences() {
    let file = tight_flag();
    let it = &iterations(&file, 1)[0];
    let unit = unit_gradients(&it.solution, &file.qoi, it.companion.dofs()).unwrap();
    let value = it.solution.value;
    let north = it.report.marked[it.report.marked.len() / 2];
    let west = off_side(it.companion.dofs(), Side::North)[0];
    for (pos, axis) in [(north, 1), (north, 0), (west, 0)] {
        let d = bump(it, pos, axis);
        let vals = STEPS.map(|t| resolved_value(&file, it, &d, t, &file.run.egg));
        let (order, errs) = observed_order(unit[pos][axis], value, &vals);
        assert!(order >= 0.9, "position {pos} axis {axis}: order {order}, errors {errs:?}");
    }
}

#[test]
fn frozen_interior_gradients_match_finite_differences() {
    let file = tight_flag();
    let it = &iterations(&file, 1)[0];
    let g = partial_gradients(&it.solution, &file.qoi, it.companion.dofs()).unwrap();
    let pos = it.report.marked[0];
    for axis in 0..2 {
        let d = bump(it, pos, axis);
        let vals = STEPS.map(|t| frozen_value(&file, it, &d, t));
        let (order, errs) = observed_order(g[pos][axis], it.solution.value, &vals);
        assert!(order >= 0.9, "axis {axis}: order {order}, errors {errs:?}");
    }
}

#[test]
fn linearized_prediction_of_the_companion_geometry() {
    let file = tight_flag();
    let it = &iterations(&file, 3)[2];
    let map = &it.certified.map;
    let fine = express_curve(&it.companion.curve, map.basis()).unwrap();
    let mut ctl = map.control().to_vec();
    for (pos, &g) in fine.dofs().indices().iter().enumerate() {
        ctl[g] = fine.control_points()[pos];
    }
    let (moved, _) = solve_egg(&GeometryMap::new(map.basis().clone(), ctl), &file.run.egg).unwrap();
    let plus = solve_all(&moved, &it.certified.state_mesh, &file.problem, &file.qoi).unwrap().value;
    let change = plus - it.solution.value;
    let rel = (change - it.report.prediction).abs() / change.abs();
    assert!(rel < 0.5, "change {change:e}, prediction {:e}", it.report.prediction);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marking_is_monotone_in_alpha(
        values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 32),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let basis = Arc::new(ThbBasis::new(HierarchicalMesh::uniform(2, 2, 6, 6).unwrap()));
        let dofs = BoundaryDofSet::new(basis);
        let n = dofs.len();
        let delta: Vec<[f64; 2]> = (0..n).map(|k| { let v = values[k % values.len()]; [v.0, v.1] }).collect();
        let unit: Vec<[f64; 2]> = (0..n).map(|k| { let v = values[(k * 5 + 1) % values.len()]; [v.2, v.3] }).collect();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r_lo = assemble_report(&dofs, &delta, &unit, lo);
        let r_hi = assemble_report(&dofs, &delta, &unit, hi);
        for k in &r_hi.marked {
            prop_assert!(r_lo.marked.contains(k));
        }
        let top = (0..n).map(|k| r_hi.norm(k)).fold(0.0, f64::max);
        prop_assert_eq!(r_hi.estimator, top);
        for k in 0..n {
            prop_assert_eq!(r_hi.marked.contains(&k), r_hi.norm(k) >= hi * top);
        }
    }
}

#[test]
fn ties_at_the_threshold_are_marked() {
    let basis = Arc::new(ThbBasis::new(HierarchicalMesh::uniform(2, 2, 3, 3).unwrap()));
    let dofs = BoundaryDofSet::new(basis);
    let mut delta = vec![[0.0; 2]; dofs.len()];
    let unit = vec![[1.0, 1.0]; dofs.len()];
    delta[0] = [4.0, 0.0];
    delta[1] = [2.0, 0.0];
    let r = assemble_report(&dofs, &delta, &unit, 0.5);
    assert_eq!(r.marked, vec![0, 1]);
    assert_eq!(r.prediction, 6.0);
}

