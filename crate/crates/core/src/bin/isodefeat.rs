use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isodefeat::defeature::{run_defeaturing, Status};
use isodefeat::problem::{run_reference, ProblemFile};
use isodefeat::record::{self, write_atomic, ReferenceData};
use isodefeat::{Error, Result};

#[derive(Parser)]
#[command(name = "isodefeat", version, about = "Adaptive isogeometric defeaturing of planar domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve on the accurate boundary representation and print J_E.
    Reference(Common),
    /// Run the defeaturing loop and write the run record.
    Defeature {
        #[command(flatten)]
        common: Common,
        /// J_E used for the relative columns of run.csv.
        #[arg(long)]
        reference_value: Option<f64>,
        /// Boundary functions of the reference representation, reported alongside.
        #[arg(long)]
        reference_dofs: Option<usize>,
    },
    /// Parse and validate a problem file.
    Validate {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Problem file (TOML).
    problem: Option<PathBuf>,
    /// Built-in problem instead of a file.
    #[arg(long, value_parser = ["flag"])]
    preset: Option<String>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    alpha: Option<f64>,
    /// Estimator tolerance, or `none` to stop after the first iteration.
    #[arg(long, value_parser = parse_epsilon)]
    epsilon: Option<f64>,
    #[arg(long)]
    kappa0: Option<f64>,
    #[arg(long)]
    kappa1: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Uniform refinements of the analysis mesh over the geometry mesh.
    #[arg(long)]
    state_depth: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_epsilon(s: &str) -> std::result::Result<f64, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|e| e.to_string())
}

impl Source {
    fn load(&self) -> Result<ProblemFile> {
        match (&self.problem, &self.preset) {
            (Some(p), _) => ProblemFile::load(p),
            (None, Some(_)) => Ok(ProblemFile::flag()),
            (None, None) => Err(Error::Config("no problem given".into())),
        }
    }
}

impl Common {
    fn problem(&self) -> Result<ProblemFile> {
        let mut file = self.source.load()?;
        let run = &mut file.run;
        if let Some(a) = self.alpha {
            run.alpha = a;
        }
        if let Some(e) = self.epsilon {
            run.epsilon = e;
        }
        if let Some(k) = self.kappa0 {
            run.fit.kappa0 = k;
        }
        if let Some(k) = self.kappa1 {
            run.fit.kappa1 = k;
        }
        if let Some(m) = self.max_iters {
            run.max_iters = m;
        }
        if let Some(d) = self.state_depth {
            run.state.depth = d;
        }
        file.validate()?;
        Ok(file)
    }
}

fn reference(common: &Common) -> Result<ExitCode> {
    let file = common.problem()?;
    let r = run_reference(&file)?;
    println!("J_E = {:.16e}", r.value());
    println!("boundary dofs = {}", r.boundary_dofs());
    println!("dofs = {}", r.fit.curve.basis().dim());
    println!("analysis dofs = {}", r.solution.system.basis().dim());
    if let Some(dir) = &common.out {
        let summary = format!(
            "value,boundary_dofs,dofs,analysis_dofs,apos_rounds\n{:.16e},{},{},{},{}\n",
            r.value(),
            r.boundary_dofs(),
            r.fit.curve.basis().dim(),
            r.solution.system.basis().dim(),
            r.certified.rounds
        );
        write_atomic(&dir.join("reference.csv"), &summary)?;
        write_atomic(&dir.join("state.csv"), &record::field_csv(&r.solution.state))?;
        write_atomic(&dir.join("adjoint.csv"), &record::field_csv(&r.solution.adjoint))?;
        write_geometry(dir, &r.fit.curve, &r.certified.map)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_geometry(dir: &Path, curve: &isodefeat::boundary::BoundaryCurve, map: &isodefeat::param::GeometryMap) -> Result<()> {
    write_atomic(&dir.join("control_net.csv"), &record::control_net_csv(map))?;
    write_atomic(&dir.join("control_polygon.csv"), &record::control_polygon_csv(curve))?;
    write_atomic(&dir.join("boundary.csv"), &record::polyline_csv(curve))
}

fn defeature(common: &Common, reference_value: Option<f64>, reference_dofs: Option<usize>) -> Result<ExitCode> {
    let file = common.problem()?;
    let reference = ReferenceData { value: reference_value, boundary_dofs: reference_dofs };
    let out = common.out.clone();
    let result = run_defeaturing(&file.geometry, &file.problem, &file.qoi, &file.run);
    let records = match &result {
        Ok(o) => &o.records,
        Err((_, r)) => r,
    };
    if let Some(dir) = &out {
        write_atomic(&dir.join("run.csv"), &record::run_csv(records, reference))?;
        write_atomic(&dir.join("timings.csv"), &record::timings_csv(records))?;
    }
    for r in records {
        println!(
            "n = {:>2}  dN = {:>4}  J = {:.10e}  E = {:.3e}  marked = {}",
            r.n, r.boundary_dofs, r.value, r.estimator, r.marked
        );
    }
    let count = records.len();
    let outcome = result.map_err(|(e, _)| e)?;
    if let Some(dir) = &out {
        for (n, (m, g)) in outcome.meshes.iter().zip(&outcome.reports).enumerate() {
            write_atomic(&dir.join(format!("mesh_{n:02}.txt")), &m.dump())?;
            write_atomic(&dir.join(format!("gradients_{n:02}.csv")), &record::gradients_csv(g))?;
        }
        write_geometry(dir, &outcome.curve, &outcome.map)?;
    }
    Ok(match outcome.status {
        Status::Converged => ExitCode::SUCCESS,
        Status::MaxIterations => {
            eprintln!("stopped after {} iterations without reaching the tolerance", count);
            ExitCode::from(2)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISODEFEAT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Reference(c) => reference(c),
        Command::Defeature { common, reference_value, reference_dofs } => defeature(common, *reference_value, *reference_dofs),
        Command::Validate { source } => source.load().map(|f| {
            println!("{}: ok", if f.name.is_empty() { "problem" } else { &f.name });
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
