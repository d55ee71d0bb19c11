//! CSV run records and geometry dumps.
//!
//! Numbers are written as `{:.16e}` (17 significant digits); unavailable values as `nan`.
//! Every file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::boundary::BoundaryCurve;
use crate::defeature::IterationRecord;
use crate::error::{Error, Result};
use crate::hierarchy::Side;
use crate::param::GeometryMap;
use crate::pde::DiscreteField;
use crate::shape::GradientReport;

/// Column set of `run.csv`.
pub const RUN_COLUMNS: [&str; 12] = [
    "n",
    "dofs",
    "boundary_dofs",
    "reference_boundary_dofs",
    "value",
    "relative_error",
    "estimator",
    "estimator_over_reference",
    "estimator_over_value",
    "marked",
    "apos_rounds",
    "newton_steps",
];

/// Column set of `timings.csv`, kept apart so that `run.csv` is reproducible byte for byte.
pub const TIMING_COLUMNS: [&str; 6] = ["n", "fit", "parameterize", "solve", "gradient", "total"];

pub const GRADIENT_COLUMNS: [&str; 13] = [
    "level", "iu", "iv", "side", "delta_x", "delta_y", "unit_x", "unit_y", "gradient_x", "gradient_y", "norm", "marked", "position",
];

pub const POLYLINE_SAMPLES: usize = 256;

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Reference data used for the relative columns.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceData {
    pub value: Option<f64>,
    pub boundary_dofs: Option<usize>,
}

pub fn run_csv(records: &[IterationRecord], reference: ReferenceData) -> String {
    let mut s = RUN_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let je = reference.value.unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.dofs,
            r.boundary_dofs,
            reference.boundary_dofs.map_or("nan".into(), |n| n.to_string()),
            num(r.value),
            num((r.value - je).abs() / je.abs()),
            num(r.estimator),
            num(r.estimator / je.abs()),
            num(r.estimator / r.value.abs()),
            r.marked,
            r.apos_rounds,
            r.newton_steps
        );
    }
    s
}

pub fn timings_csv(records: &[IterationRecord]) -> String {
    let mut s = TIMING_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let t = &r.timings;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.n, num(t.fit), num(t.parameterize), num(t.solve), num(t.gradient), num(t.total));
    }
    s
}

pub fn gradients_csv(report: &GradientReport) -> String {
    let mut s = GRADIENT_COLUMNS.join(",");
    s.push('\n');
    let mut marked = vec![false; report.functions.len()];
    for &k in &report.marked {
        marked[k] = true;
    }
    for (k, f) in report.functions.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.level(),
            f.iu,
            f.iv,
            report.sides[k].name(),
            num(report.delta[k][0]),
            num(report.delta[k][1]),
            num(report.unit[k][0]),
            num(report.unit[k][1]),
            num(report.gradient[k][0]),
            num(report.gradient[k][1]),
            num(report.norm(k)),
            u8::from(marked[k]),
            k
        );
    }
    s
}

/// Control points of a map with their function identifiers.
pub fn control_net_csv(map: &GeometryMap) -> String {
    let mut s = String::from("index,level,iu,iv,x,y\n");
    for (g, c) in map.control().iter().enumerate() {
        let f = map.basis().function(g);
        let _ = writeln!(s, "{g},{},{},{},{},{}", f.level(), f.iu, f.iv, num(c[0]), num(c[1]));
    }
    s
}

/// Per-side control polygons: boundary functions ordered along each side.
pub fn control_polygon_csv(curve: &BoundaryCurve) -> String {
    let mut s = String::from("side,order,position,x,y\n");
    let dofs = curve.dofs();
    for side in Side::ALL {
        let mut seen = Vec::new();
        for e in dofs.side_edges(side) {
            for &pos in &e.dofs {
                if !seen.contains(&pos) {
                    seen.push(pos);
                }
            }
        }
        for (k, pos) in seen.into_iter().enumerate() {
            let c = curve.control_points()[pos];
            let _ = writeln!(s, "{},{k},{pos},{},{}", side.name(), num(c[0]), num(c[1]));
        }
    }
    s
}

/// Dense sampling of the boundary curve, [`POLYLINE_SAMPLES`] points per side.
pub fn polyline_csv(curve: &BoundaryCurve) -> String {
    let mut s = String::from("side,t,x,y\n");
    for side in Side::ALL {
        for k in 0..POLYLINE_SAMPLES {
            let t = k as f64 / (POLYLINE_SAMPLES - 1) as f64;
            let (p, _) = curve.eval(side, t);
            let _ = writeln!(s, "{},{},{},{}", side.name(), num(t), num(p[0]), num(p[1]));
        }
    }
    s
}

/// Coefficients of a discrete field with their function identifiers.
pub fn field_csv(field: &DiscreteField) -> String {
    let mut s = String::from("index,level,iu,iv,coefficient\n");
    for (g, c) in field.coeffs.iter().enumerate() {
        let f = field.basis.function(g);
        let _ = writeln!(s, "{g},{},{},{},{}", f.level(), f.iu, f.iv, num(*c));
    }
    s
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
