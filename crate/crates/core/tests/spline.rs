use isodefeat::spline::{KnotVector, Refinement, TensorSplineSpace};
use isodefeat::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cox–de Boor recursion straight from the definition.
fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
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

fn space(p: usize, n: usize) -> TensorSplineSpace {
    TensorSplineSpace::new(KnotVector::uniform(p, n).unwrap(), KnotVector::uniform(p, n).unwrap(), 0)
}

fn spline_at(s: &TensorSplineSpace, c: &[f64], xi: [f64; 2]) -> f64 {
    s.eval_basis(&[xi], 0)
        .unwrap()
        .iter()
        .map(|b| c[b.function] * b.value)
        .sum()
}

#[test]
fn constant_basis_on_single_element() {
    let s = space(0, 1);
    let v = s.eval_basis(&[[0.3, 0.7]], 0).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].value, 1.0);
}

#[test]
fn partition_of_unity_bicubic() {
    let s = space(3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let xi = [rng.gen::<f64>(), rng.gen::<f64>()];
        let v = s.eval_basis(&[xi], 2).unwrap();
        let sum: f64 = v.iter().map(|b| b.value).sum();
        let gsum = v.iter().fold([0.0; 2], |g, b| [g[0] + b.grad[0], g[1] + b.grad[1]]);
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(gsum[0].abs() < 1e-10 && gsum[1].abs() < 1e-10);
    }
}

#[test]
fn matches_recursive_definition() {
    let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.2, 0.35, 0.35, 0.6, 0.9, 1., 1., 1., 1.]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let x: f64 = rng.gen();
        for i in 0..kv.num_basis() {
            let a = kv.eval_function(i, x, 0)[0];
            let b = cox_de_boor(kv.knots(), i, 3, x);
            assert!((a - b).abs() < 1e-13, "i={i} x={x}: {a} vs {b}");
        }
    }
    let u = KnotVector::uniform(3, 5).unwrap();
    let s = TensorSplineSpace::new(u.clone(), u.clone(), 0);
    for b in s.eval_basis(&[[0.41, 0.77]], 0).unwrap() {
        let (iu, iv) = s.tensor_index(b.function);
        let o = cox_de_boor(u.knots(), iu, 3, 0.41) * cox_de_boor(u.knots(), iv, 3, 0.77);
        assert!((b.value - o).abs() < 1e-13);
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let s = space(3, 4);
    let h = 1e-6;
    let xi = [0.33, 0.61];
    let at = |p: [f64; 2]| s.eval_basis(&[p], 2).unwrap();
    let base = at(xi);
    let shift = |d: usize, sgn: f64| {
        let mut p = xi;
        p[d] += sgn * h;
        at(p)
    };
    let (up, um, vp, vm) = (shift(0, 1.0), shift(0, -1.0), shift(1, 1.0), shift(1, -1.0));
    for (k, b) in base.iter().enumerate() {
        let du = (up[k].value - um[k].value) / (2.0 * h);
        let dv = (vp[k].value - vm[k].value) / (2.0 * h);
        let duu = (up[k].grad[0] - um[k].grad[0]) / (2.0 * h);
        let duv = (vp[k].grad[0] - vm[k].grad[0]) / (2.0 * h);
        let dvv = (vp[k].grad[1] - vm[k].grad[1]) / (2.0 * h);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(du, b.grad[0]) < 1e-5);
        assert!(rel(dv, b.grad[1]) < 1e-5);
        assert!(rel(duu, b.hess[0][0]) < 1e-5);
        assert!(rel(duv, b.hess[0][1]) < 1e-5);
        assert!(rel(dvv, b.hess[1][1]) < 1e-5);
    }
}

#[test]
fn outside_points_are_rejected() {
    let s = space(2, 2);
    assert!(matches!(s.eval_basis(&[[1.2, 0.5]], 0), Err(Error::Domain(..))));
}

#[test]
fn knot_vector_validation() {
    assert!(KnotVector::new(2, vec![0., 0., 1., 1.]).is_err());
    assert!(KnotVector::new(1, vec![0., 0., 0.5, 0.4, 1., 1.]).is_err());
    assert!(KnotVector::new(1, vec![0., 0., 0.5, 0.5, 0.5, 1., 1.]).is_err());
    assert!(KnotVector::new(1, vec![0., 0., 0., 1., 1.]).is_err());
    assert!(KnotVector::new(2, vec![0., 0., 0., 0.5, 0.5, 0.5, 1., 1., 1.]).is_ok());
}

#[test]
fn greville_examples() {
    let g = KnotVector::new(1, vec![0., 0., 0.5, 1., 1.]).unwrap().greville();
    assert_eq!(g, vec![0.0, 0.5, 1.0]);
    let g = KnotVector::new(2, vec![0., 0., 0., 1., 1., 1.]).unwrap().greville();
    assert_eq!(g, vec![0.0, 0.5, 1.0]);
    let g = KnotVector::uniform(3, 6).unwrap().greville();
    assert_eq!(g[0], 0.0);
    assert_eq!(*g.last().unwrap(), 1.0);
}

#[test]
fn two_scale_identity_for_equal_spaces() {
    let s = space(2, 3);
    let c = TensorSplineSpace::two_scale_matrix(&s, &s).unwrap();
    assert_eq!(c.entries().len(), s.dim());
    for &(i, j, v) in c.entries() {
        assert_eq!(i, j);
        assert_eq!(v, 1.0);
    }
}

#[test]
fn linear_hat_splits_into_half_one_half() {
    let coarse = KnotVector::uniform(1, 4).unwrap();
    let fine = coarse.refine_dyadic();
    let r = Refinement::between(&coarse, &fine).unwrap();
    let (start, row) = r.row(2);
    assert_eq!(start, 3);
    assert_eq!(row, &[0.5, 1.0, 0.5]);
    for k in 0..20 {
        let x = k as f64 / 19.0;
        let lhs = coarse.eval_function(2, x, 0)[0];
        let rhs: f64 = (0..fine.num_basis()).map(|j| r.coeff(2, j) * fine.eval_function(j, x, 0)[0]).sum();
        assert!((lhs - rhs).abs() < 1e-15);
    }
}

#[test]
fn two_scale_columns_form_partition_and_entries_nonnegative() {
    let coarse = space(3, 5);
    let fine = coarse.refine_dyadic();
    let c = TensorSplineSpace::two_scale_matrix(&coarse, &fine).unwrap();
    let cols = c.transpose_mul(&vec![1.0; coarse.dim()]);
    for s in cols {
        assert!((s - 1.0).abs() < 1e-14);
    }
    assert!(c.entries().iter().all(|e| e.2 >= 0.0));
    // interior rows of the uniform cubic relation: (1, 4, 6, 4, 1) / 8 per direction
    let u = Refinement::between(&coarse.u, &fine.u).unwrap();
    for (a, b) in u.row(4).1.iter().zip([0.125, 0.5, 0.75, 0.5, 0.125]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn two_scale_reproduces_random_splines() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = KnotVector::new(2, vec![0., 0., 0., 0.25, 0.25, 0.5, 1., 1., 1.]).unwrap();
    let v = KnotVector::uniform(3, 3).unwrap();
    let coarse = TensorSplineSpace::new(u, v, 0);
    let fine = coarse.refine_dyadic();
    let c = TensorSplineSpace::two_scale_matrix(&coarse, &fine).unwrap();
    let a: Vec<f64> = (0..coarse.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = c.transpose_mul(&a);
    for _ in 0..100 {
        let xi = [rng.gen(), rng.gen()];
        assert!((spline_at(&coarse, &a, xi) - spline_at(&fine, &b, xi)).abs() < 1e-12);
    }
}

#[test]
fn general_nested_refinement() {
    let coarse = KnotVector::uniform(2, 2).unwrap();
    let fine = KnotVector::new(2, vec![0., 0., 0., 0.1, 0.5, 0.5, 0.7, 1., 1., 1.]).unwrap();
    let r = Refinement::between(&coarse, &fine).unwrap();
    for i in 0..coarse.num_basis() {
        for k in 0..=40 {
            let x = k as f64 / 40.0;
            let lhs = coarse.eval_function(i, x, 0)[0];
            let rhs: f64 = (0..fine.num_basis()).map(|j| r.coeff(i, j) * fine.eval_function(j, x, 0)[0]).sum();
            assert!((lhs - rhs).abs() < 1e-14, "i={i} x={x}");
        }
    }
}

#[test]
fn non_nested_spaces_are_rejected() {
    let a = KnotVector::uniform(2, 3).unwrap();
    let b = KnotVector::uniform(2, 4).unwrap();
    assert!(matches!(Refinement::between(&a, &b), Err(Error::Structure(_))));
    let c = KnotVector::uniform(3, 6).unwrap();
    assert!(Refinement::between(&a, &c).is_err());
}
