//! Problem files: geometry, boundary conditions, data, quantity of interest and run settings.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::{fit_with_repair, ExactBoundary, RepairedFit};
use crate::defeature::RunConfig;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchicalMesh, Side, ThbBasis};
use crate::param::{parameterize, Certified};
use crate::pde::{solve_all, PdeProblem, QoiSpec, Solution};

/// Built-in flag benchmark.
pub const FLAG_PRESET: &str = include_str!("../presets/flag.toml");

/// How the accurate boundary representation for the reference value is built.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Rounds of refining every active cell that touches one of `sides`.
    pub refinements: usize,
    pub sides: Vec<Side>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: String,
    pub geometry: ExactBoundary,
    #[serde(default)]
    pub problem: PdeProblem,
    #[serde(default)]
    pub qoi: QoiSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub reference: ReferenceSpec,
}

impl ProblemFile {
    pub fn flag() -> Self {
        Self::parse(FLAG_PRESET).expect("flag preset parses")
    }

    /// Parses and validates; errors carry the line of the offending entry.
    pub fn parse(text: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            Error::Config(match line {
                Some(l) => format!("line {l}: {}", e.message()),
                None => e.message().to_string(),
            })
        })?;
        if let Err((key, e)) = file.check() {
            return Err(Error::Config(match locate(text, key) {
                Some(l) => format!("line {l}: {key}: {e}"),
                None => format!("{key}: {e}"),
            }));
        }
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize problem: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, e)| Error::Config(format!("{key}: {e}")))
    }

    fn check(&self) -> std::result::Result<(), (&'static str, Error)> {
        self.geometry.validate().map_err(|e| ("geometry", e))?;
        self.problem.validate().map_err(|e| ("problem", e))?;
        self.qoi.validate().map_err(|e| ("qoi", e))?;
        let run = &self.run;
        if !(run.epsilon > 0.0) {
            return Err(("epsilon", Error::Config("must be positive".into())));
        }
        if !(run.alpha > 0.0 && run.alpha < 1.0) {
            return Err(("alpha", Error::Config("must lie in (0, 1)".into())));
        }
        if run.max_iters == 0 {
            return Err(("max_iters", Error::Config("must be at least 1".into())));
        }
        run.mesh.build().map_err(|e| ("mesh", e))?;
        run.fit.validate().map_err(|e| ("fit", e))?;
        run.egg.validate().map_err(|e| ("egg", e))?;
        Ok(())
    }

    /// Mesh of the reference boundary representation.
    pub fn reference_mesh(&self) -> Result<HierarchicalMesh> {
        let mut mesh = self.run.mesh.build()?;
        for _ in 0..self.reference.refinements {
            let cells: Vec<_> = mesh
                .active_cells()
                .into_iter()
                .filter(|&c| {
                    let b = mesh.cell_bounds(c);
                    self.reference.sides.iter().any(|s| match s {
                        Side::South => b[1][0] <= 0.0,
                        Side::North => b[1][1] >= 1.0,
                        Side::West => b[0][0] <= 0.0,
                        Side::East => b[0][1] >= 1.0,
                    })
                })
                .collect();
            mesh = mesh.refine_cells(&cells)?;
        }
        Ok(mesh)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key`, or opening a table named `key`.
fn locate(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        let table = t.trim_start_matches('[').trim_end_matches(']');
        (t.starts_with(key) && t[key.len()..].trim_start().starts_with('='))
            || (t.starts_with('[') && (table == key || table.ends_with(&format!(".{key}"))))
    })
    .map(|i| i + 1)
}

/// Reference value `J_E` on the accurate boundary representation.
pub struct Reference {
    pub fit: RepairedFit,
    pub certified: Certified,
    pub solution: Solution,
}

impl Reference {
    pub fn value(&self) -> f64 {
        self.solution.value
    }

    pub fn boundary_dofs(&self) -> usize {
        self.fit.curve.dofs().len()
    }
}

pub fn run_reference(file: &ProblemFile) -> Result<Reference> {
    file.validate()?;
    let mesh = file.reference_mesh()?;
    let fit = fit_with_repair(&file.geometry, mesh, &file.run.fit)?;
    let basis = Arc::new(ThbBasis::new(fit.mesh.clone()));
    let certified = parameterize(&fit.curve, basis, &file.run.state, None, &file.run.egg)?;
    let solution = solve_all(&certified.map, &certified.state_mesh, &file.problem, &file.qoi)?;
    log::info!("reference value {:.10e} with {} boundary functions", solution.value, fit.curve.dofs().len());
    Ok(Reference { fit, certified, solution })
}
