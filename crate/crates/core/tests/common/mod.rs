#![allow(dead_code)]

pub mod hb;

use isodefeat::defeature::{Defeaturer, Iteration};
use isodefeat::param::{prolong, solve_egg, EggConfig, GeometryMap};
use isodefeat::pde::solve_all;
use isodefeat::problem::ProblemFile;

/// Flag problem with a tight harmonic-map tolerance, so that finite differences are not
/// polluted by the Newton stopping rule.
pub fn tight_flag() -> ProblemFile {
    let mut file = ProblemFile::flag();
    file.run.egg.mu = 1e-10;
    file
}

/// First `count` iterations of the loop on `file`.
pub fn iterations(file: &ProblemFile, count: usize) -> Vec<Iteration> {
    let mut d = Defeaturer::new(file.geometry.clone(), file.problem.clone(), file.qoi.clone(), file.run.clone()).unwrap();
    let mut out = Vec::new();
    for k in 0..count {
        let it = d.iterate().unwrap();
        if k + 1 < count {
            d.advance(&it).unwrap();
        }
        out.push(it);
    }
    out
}

/// Map coefficients of `β⁺_pos e_axis` on the basis of `map`.
pub fn bump(it: &Iteration, pos: usize, axis: usize) -> Vec<[f64; 2]> {
    let cb = it.companion.basis();
    let mut ctl = vec![[0.0; 2]; cb.dim()];
    ctl[it.companion.dofs().indices()[pos]][axis] = 1.0;
    prolong(&GeometryMap::new(cb.clone(), ctl), it.certified.map.basis().clone()).unwrap().control().to_vec()
}

fn shifted(map: &GeometryMap, d: &[[f64; 2]], t: f64) -> GeometryMap {
    let ctl = map.control().iter().zip(d).map(|(a, b)| [a[0] + t * b[0], a[1] + t * b[1]]).collect();
    GeometryMap::new(map.basis().clone(), ctl)
}

/// `J` after moving the boundary by `t β⁺_pos e_axis` and re-solving the parameterization.
pub fn resolved_value(file: &ProblemFile, it: &Iteration, d: &[[f64; 2]], t: f64, egg: &EggConfig) -> f64 {
    let (map, _) = solve_egg(&shifted(&it.certified.map, d, t), egg).unwrap();
    solve_all(&map, &it.certified.state_mesh, &file.problem, &file.qoi).unwrap().value
}

/// `J` after moving every control point by `t d`, without re-solving the parameterization.
pub fn frozen_value(file: &ProblemFile, it: &Iteration, d: &[[f64; 2]], t: f64) -> f64 {
    let map = shifted(&it.certified.map, d, t);
    solve_all(&map, &it.certified.state_mesh, &file.problem, &file.qoi).unwrap().value
}

pub const STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Observed order of `|g − (J(t) − J)/t|` over [`STEPS`]. Errors below the rounding floor
/// `1e-12 max(|J|, 1) / t` end the sequence early; if even the second step is below it the
/// derivative is taken as exact and `∞` is returned.
pub fn observed_order(g: f64, value: f64, perturbed: &[f64; 3]) -> (f64, [f64; 3]) {
    let mut errs = [0.0; 3];
    for k in 0..3 {
        errs[k] = (g - (perturbed[k] - value) / STEPS[k]).abs();
    }
    let floor = |k: usize| 1e-12 * value.abs().max(1.0) / STEPS[k];
    let last = (1..3).rev().find(|&k| errs[k] > floor(k));
    match last {
        Some(k) => ((errs[0] / errs[k]).log10() / (STEPS[0] / STEPS[k]).log10(), errs),
        None => (f64::INFINITY, errs),
    }
}
