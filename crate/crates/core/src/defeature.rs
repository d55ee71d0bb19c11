//! Fit, solve, estimate, mark and refine until the shape-gradient estimator drops below tolerance.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boundary::{fit_with_repair, BoundaryCurve, ExactBoundary, FitConfig, RepairedFit};
use crate::error::{Error, Result};
use crate::hierarchy::{cells_meeting_support, minimal_refinement_set, HierarchicalMesh, ThbBasis};
use crate::param::{express_curve, parameterize, Certified, EggConfig, GeometryMap, StateSpace};
use crate::pde::{solve_all, PdeProblem, QoiSpec, Solution};
use crate::shape::{assemble_report, companion_fit, unit_gradients, Companion, GradientReport};

/// Uniform tensor mesh the loop starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub degrees: [usize; 2],
    pub cells: [usize; 2],
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { degrees: [3, 3], cells: [10, 10] }
    }
}

impl MeshSpec {
    pub fn build(&self) -> Result<HierarchicalMesh> {
        HierarchicalMesh::uniform(self.degrees[0], self.degrees[1], self.cells[0], self.cells[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stop once the estimator is below this value; `+∞` stops after the first iteration.
    pub epsilon: f64,
    pub alpha: f64,
    pub mesh: MeshSpec,
    pub fit: FitConfig,
    pub egg: EggConfig,
    pub state: StateSpace,
    pub max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            alpha: 0.1,
            mesh: MeshSpec::default(),
            fit: FitConfig::default(),
            egg: EggConfig::default(),
            state: StateSpace::default(),
            max_iters: 30,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        self.mesh.build()?;
        self.fit.validate()?;
        self.egg.validate()
    }
}

/// Wall-clock seconds per phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timings {
    pub fit: f64,
    pub parameterize: f64,
    pub solve: f64,
    pub gradient: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    /// Dimension of `T(Q_n)`.
    pub dofs: usize,
    /// Boundary functions of `T(Q_n)`.
    pub boundary_dofs: usize,
    /// Boundary functions of the companion basis.
    pub companion_dofs: usize,
    /// Active cells of `Q_n` per level.
    pub level_counts: Vec<usize>,
    pub value: f64,
    pub estimator: f64,
    pub marked: usize,
    pub apos_rounds: usize,
    pub newton_steps: usize,
    pub repair_rounds: usize,
    pub timings: Timings,
}

/// Everything computed in one iteration.
pub struct Iteration {
    pub n: usize,
    pub fit: RepairedFit,
    pub companion: Companion,
    pub certified: Certified,
    pub solution: Solution,
    pub report: GradientReport,
    pub record: IterationRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
}

/// Stepwise driver; [`run_defeaturing`] is the usual entry point.
pub struct Defeaturer {
    exact: ExactBoundary,
    problem: PdeProblem,
    qoi: QoiSpec,
    cfg: RunConfig,
    mesh: HierarchicalMesh,
    carried: Option<HierarchicalMesh>,
    n: usize,
}

impl Defeaturer {
    pub fn new(exact: ExactBoundary, problem: PdeProblem, qoi: QoiSpec, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        problem.validate()?;
        qoi.validate()?;
        let mesh = cfg.mesh.build()?;
        Ok(Self { exact, problem, qoi, cfg, mesh, carried: None, n: 0 })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn mesh(&self) -> &HierarchicalMesh {
        &self.mesh
    }

    /// Fits, parameterizes, solves and estimates on the current mesh.
    pub fn iterate(&mut self) -> Result<Iteration> {
        let start = Instant::now();
        let fit = fit_with_repair(&self.exact, self.mesh.clone(), &self.cfg.fit)?;
        let companion = companion_fit(&fit.curve, &self.exact, &self.cfg.fit)?;
        let t_fit = start.elapsed().as_secs_f64();

        let t = Instant::now();
        let geo_mesh = match &self.carried {
            Some(c) => companion.mesh.union(c)?,
            None => companion.mesh.clone(),
        };
        let basis = Arc::new(ThbBasis::new(geo_mesh));
        let curve = express_curve(&fit.curve, &basis)?;
        let certified = parameterize(&curve, basis, &self.cfg.state, None, &self.cfg.egg)?;
        let t_param = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let solution = solve_all(&certified.map, &certified.state_mesh, &self.problem, &self.qoi)?;
        let t_solve = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let unit = unit_gradients(&solution, &self.qoi, companion.dofs())?;
        let report = assemble_report(companion.dofs(), &companion.delta, &unit, self.cfg.alpha);
        let t_grad = t.elapsed().as_secs_f64();

        let record = IterationRecord {
            n: self.n,
            dofs: fit.curve.basis().dim(),
            boundary_dofs: fit.curve.dofs().len(),
            companion_dofs: companion.dofs().len(),
            level_counts: fit.mesh.level_counts(),
            value: solution.value,
            estimator: report.estimator,
            marked: report.marked.len(),
            apos_rounds: certified.rounds,
            newton_steps: certified.newton.iter().map(|l| l.iterations()).sum(),
            repair_rounds: fit.rounds,
            timings: Timings {
                fit: t_fit,
                parameterize: t_param,
                solve: t_solve,
                gradient: t_grad,
                total: start.elapsed().as_secs_f64(),
            },
        };
        log::info!(
            "iteration {}: J = {:.6e}, E = {:.3e}, dN = {}, marked {}",
            record.n,
            record.value,
            record.estimator,
            record.boundary_dofs,
            record.marked
        );
        self.mesh = fit.mesh.clone();
        self.carried = Some(certified.map.basis().mesh().clone());
        Ok(Iteration { n: self.n, fit, companion, certified, solution, report, record })
    }

    /// Refines `Q_min` of the marked functions of `it` and moves to the next iteration.
    pub fn advance(&mut self, it: &Iteration) -> Result<()> {
        let marked = it.report.marked_functions();
        if marked.is_empty() {
            return Err(Error::Structure("estimator above tolerance but no function marked".into()));
        }
        let cells = minimal_refinement_set(&self.mesh, &marked);
        let cmesh = it.companion.basis().mesh();
        for c in &cells {
            let near = marked.iter().any(|&f| cells_meeting_support(cmesh, f).iter().any(|s| s.level() >= c.level() && s.ancestor(c.level()) == *c));
            if !near {
                return Err(Error::Structure(format!("refinement cell {c:?} is not under a marked boundary function")));
            }
        }
        self.mesh = self.mesh.refine_cells(&cells)?;
        self.n += 1;
        Ok(())
    }
}

pub struct RunOutcome {
    pub status: Status,
    pub records: Vec<IterationRecord>,
    /// `Q_n` of every iteration.
    pub meshes: Vec<HierarchicalMesh>,
    pub reports: Vec<GradientReport>,
    pub map: GeometryMap,
    pub curve: BoundaryCurve,
}

/// Runs the loop to completion; on a sub-module error the records so far are returned with it.
pub fn run_defeaturing(
    exact: &ExactBoundary,
    problem: &PdeProblem,
    qoi: &QoiSpec,
    cfg: &RunConfig,
) -> std::result::Result<RunOutcome, (Error, Vec<IterationRecord>)> {
    let mut records = Vec::new();
    let mut meshes = Vec::new();
    let mut reports = Vec::new();
    let mut driver = Defeaturer::new(exact.clone(), problem.clone(), qoi.clone(), cfg.clone()).map_err(|e| (e, Vec::new()))?;
    loop {
        let it = match driver.iterate() {
            Ok(it) => it,
            Err(e) => return Err((e, records)),
        };
        records.push(it.record.clone());
        meshes.push(it.fit.mesh.clone());
        reports.push(it.report.clone());
        let status = if it.report.estimator < cfg.epsilon {
            Some(Status::Converged)
        } else if records.len() >= cfg.max_iters {
            Some(Status::MaxIterations)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(RunOutcome {
                status,
                records,
                meshes,
                reports,
                map: it.certified.map,
                curve: it.fit.curve,
            });
        }
        if let Err(e) = driver.advance(&it) {
            return Err((e, records));
        }
    }
}
