use isodefeat::boundary::SideCurve;
use isodefeat::defeature::{run_defeaturing, Defeaturer, Status};
use isodefeat::hierarchy::{cells_meeting_support, HierarchicalMesh, Side};
use isodefeat::problem::{ProblemFile, FLAG_PRESET};

fn line_of(err: &str) -> usize {
    let rest = err.split("line ").nth(1).unwrap_or_else(|| panic!("no line in {err}"));
    rest.split(|c: char| !c.is_ascii_digit()).next().unwrap().parse().unwrap()
}

fn line_containing(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.contains(needle)).unwrap() + 1
}

#[test]
fn flag_preset_matches_the_benchmark() {
    let f = ProblemFile::flag();
    match &f.geometry.north {
        SideCurve::SineLine { offset, frequency, .. } => {
            assert_eq!(*offset, [0.0, -0.1]);
            assert_eq!(*frequency, 31.0);
        }
        other => panic!("north side is {other:?}"),
    }
    let (p, _) = f.geometry.eval(Side::North, 0.25);
    let want = 1.0 - 0.1 * (31.0 * std::f64::consts::PI * 0.25).sin();
    assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - want).abs() < 1e-15, "{p:?}");
    assert_eq!(f.run.mesh.cells, [10, 10]);
    assert_eq!(f.run.mesh.degrees, [3, 3]);
    assert_eq!((f.run.fit.kappa0, f.run.fit.kappa1), (1.0, 1.0));
    assert_eq!(f.reference.refinements, 7);
}

#[test]
fn round_trip_preserves_the_problem() {
    let f = ProblemFile::flag();
    let text = f.to_toml().unwrap();
    assert_eq!(ProblemFile::parse(&text).unwrap(), f);
}

#[test]
fn syntax_and_type_errors_carry_their_line() {
    // tagged curves are reported at their table
    let bad = FLAG_PRESET.replace("frequency = 31.0", "frequency = \"fast\"");
    let err = ProblemFile::parse(&bad).unwrap_err().to_string();
    assert_eq!(line_of(&err), line_containing(&bad, "[geometry.north]"), "{err}");

    let bad = FLAG_PRESET.replace("alpha = 0.1", "alpha = \"small\"");
    let err = ProblemFile::parse(&bad).unwrap_err().to_string();
    assert_eq!(line_of(&err), line_containing(&bad, "alpha ="), "{err}");

    let bad = FLAG_PRESET.replace("max_iters = 30", "max_iters = 30\nmax_iter = 3");
    let err = ProblemFile::parse(&bad).unwrap_err().to_string();
    assert_eq!(line_of(&err), line_containing(&bad, "max_iter ="), "{err}");
}

#[test]
fn validation_errors_carry_their_line() {
    for (from, to, key) in [
        ("epsilon = 1e-5", "epsilon = -1.0", "epsilon ="),
        ("alpha = 0.1", "alpha = 1.0", "alpha ="),
        ("max_iters = 30", "max_iters = 0", "max_iters ="),
        ("mu = 1e-6", "mu = 0.0", "[run.egg]"),
    ] {
        let bad = FLAG_PRESET.replace(from, to);
        let err = ProblemFile::parse(&bad).unwrap_err().to_string();
        let line = line_of(&err);
        assert!(line <= line_containing(&bad, to) && line >= line_containing(&bad, key).min(line_containing(&bad, to)), "{err}");
    }
}

#[test]
fn reference_mesh_refines_only_the_listed_side() {
    let mut f = ProblemFile::flag();
    f.reference.refinements = 2;
    let m = f.reference_mesh().unwrap();
    for c in m.active_cells() {
        if c.level() > 0 {
            assert!(m.cell_bounds(c)[1][1] > 0.8, "{c:?}");
        }
    }
    assert_eq!(m.level_counts()[2], 2 * 40);
}

#[test]
fn representable_boundary_terminates_immediately() {
    let mut f = ProblemFile::flag();
    f.geometry.north = SideCurve::Line { from: [0.0, 1.0], to: [3.0, 1.0] };
    f.run.mesh.cells = [4, 4];
    let out = run_defeaturing(&f.geometry, &f.problem, &f.qoi, &f.run).ok().unwrap();
    assert_eq!(out.status, Status::Converged);
    assert_eq!(out.records.len(), 1);
    assert!(out.records[0].estimator < 1e-12);
}

fn nested(coarse: &HierarchicalMesh, fine: &HierarchicalMesh) -> bool {
    fine.active_cells().iter().all(|&c| (0..=c.level()).any(|l| coarse.is_active(c.ancestor(l))))
}

#[test]
fn loop_meshes_are_nested_and_refine_at_the_boundary() {
    let f = ProblemFile::flag();
    let mut d = Defeaturer::new(f.geometry.clone(), f.problem.clone(), f.qoi.clone(), f.run.clone()).unwrap();
    let mut prev = d.iterate().unwrap();
    for _ in 0..3 {
        let before = d.mesh().clone();
        d.advance(&prev).unwrap();
        let after = d.mesh().clone();
        assert!(nested(&before, &after));
        let marked = prev.report.marked_functions();
        let cmesh = prev.companion.basis().mesh();
        for c in after.active_cells().into_iter().filter(|c| !before.is_active(*c)) {
            let parent = c.ancestor(c.level() - 1);
            assert!(before.is_active(parent));
            let l = parent.level();
            assert!(marked.iter().any(|&g| cells_meeting_support(cmesh, g).iter().any(|s| s.level() >= l && s.ancestor(l) == parent)));
            assert!(after.cell_bounds(c)[1][1] > 0.5, "refined away from the north side: {c:?}");
        }
        let next = d.iterate().unwrap();
        assert!(next.record.boundary_dofs >= prev.record.boundary_dofs);
        assert!(next.record.apos_rounds <= 3);
        prev = next;
    }
}

#[test]
fn invalid_settings_are_rejected_by_the_driver() {
    let f = ProblemFile::flag();
    let mut cfg = f.run.clone();
    cfg.alpha = 0.0;
    assert!(Defeaturer::new(f.geometry.clone(), f.problem.clone(), f.qoi.clone(), cfg).is_err());
    let mut cfg = f.run.clone();
    cfg.max_iters = 1;
    cfg.epsilon = 1e-30;
    let out = run_defeaturing(&f.geometry, &f.problem, &f.qoi, &cfg).ok().unwrap();
    assert_eq!(out.status, Status::MaxIterations);
    assert_eq!(out.records.len(), 1);
}
