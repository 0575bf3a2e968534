//! Batch front end: configuration, subcommands and run manifests.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};
use wavecip::adaptive::{run_adaptive, AdaptiveProblem};
use wavecip::data::{prepare_boundary_data, synthesize_twin_data, MeasurementPlaneData};
use wavecip::geometry::{
    build_base_mesh, interpolate_coefficient, rescale_contrast, smooth_coefficient, CoefficientField, Mesh,
};
use wavecip::io;
use wavecip::optimize::write_iteration_log;
use wavecip::report::{make_report, threshold_image, TargetReport};
use wavecip::wave::{solve_forward_g, Discretization};
use wavecip::{Error, Result};

pub use config::RunConfig;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format(_) => 1,
        Error::Config(_) | Error::Geometry(_) | Error::Shape(_) => 3,
        _ => 2,
    }
}

/// Short category name printed with the message.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "IO",
        Error::Format(_) => "FormatError",
        Error::Config(_) => "ConfigError",
        Error::Geometry(_) => "GeometryError",
        Error::Shape(_) => "ShapeError",
        Error::Stability { .. } => "StabilityError",
        Error::Divergence { .. } => "DivergenceError",
        Error::Domain(_) => "DomainError",
        Error::Refinement(_) => "RefinementError",
        Error::LineSearchStall { .. } => "LineSearchStall",
        Error::ConvergedFlat => "ConvergedFlat",
        Error::Calibration(_) => "CalibrationError",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Synthesize,
    Preprocess,
    Invert,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Synthesize => "synthesize",
            Command::Preprocess => "preprocess",
            Command::Invert => "invert",
            Command::Report => "report",
        }
    }
}

/// What a run needs besides the configuration.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
}

/// Written as `<command>.manifest.json`; the embedded configuration and
/// seed reproduce the run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stop_reason: Option<String>,
    pub outputs: Vec<String>,
    pub values: BTreeMap<String, serde_json::Value>,
    pub config: String,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&ctx.out)?;
    let mut out = Outputs { dir: &ctx.out, written: Vec::new() };
    let mut values = BTreeMap::new();
    let stop = match cmd {
        Command::Forward => forward(cfg, &mut out)?,
        Command::Synthesize => synthesize(cfg, &mut out, &mut values)?,
        Command::Preprocess => preprocess(cfg, &mut out, &mut values)?,
        Command::Invert => invert(cfg, &mut out, &mut values)?,
        Command::Report => report(cfg, &mut out, &mut values)?,
    };
    let manifest = Manifest {
        command: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: wavecip::VERSION.into(),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        stop_reason: stop,
        outputs: out.written,
        values,
        config: cfg.to_toml(),
    };
    let path = ctx.out.join(format!("{}.manifest.json", cmd.name()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text + "\n")?;
    Ok(manifest)
}

fn base_mesh(cfg: &RunConfig) -> Result<Mesh<f64>> {
    build_base_mesh(&cfg.domain_spec()?, cfg.domain.h)
}

/// `eps` field of a `WSMESH1` file, moved onto `mesh` if it lives on a coarser one.
fn load_coefficient(path: &Path, mesh: &Mesh<f64>) -> Result<CoefficientField<f64>> {
    let file = io::load_mesh::<f64>(path)?;
    let eps = file.coefficient("eps")?;
    if file.mesh.id() == mesh.id() {
        return Ok(eps);
    }
    if !file.mesh.same_base_grid(mesh) {
        return Err(Error::Shape(format!("{} does not belong to the configured mesh", path.display())));
    }
    interpolate_coefficient(&eps, &file.mesh, mesh)
}

fn eps_glob(cfg: &RunConfig, mesh: &Mesh<f64>) -> Result<CoefficientField<f64>> {
    match &cfg.tikhonov.eps_glob {
        Some(p) => load_coefficient(p, mesh),
        None => Ok(CoefficientField::constant(mesh, 1.0)),
    }
}

fn input(configured: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    configured.clone().unwrap_or_else(|| out.join(default))
}

fn forward(cfg: &RunConfig, out: &mut Outputs) -> Result<Option<String>> {
    let spec = cfg.domain_spec()?;
    let mesh = base_mesh(cfg)?;
    let eps = match &cfg.paths.eps {
        Some(p) => load_coefficient(p, &mesh)?,
        None => CoefficientField::constant(&mesh, 1.0),
    };
    eps.validate(&mesh)?;
    let fc = cfg.forward_config()?;
    let keep = cfg.output.snapshots > 0;
    let run = solve_forward_g(&spec, &mesh, &eps, &fc, &cfg.waveform(), keep)?;
    io::save_record(&out.path("record.wsbnd"), &run.record)?;
    if let Some(h) = &run.history {
        let disc = Discretization::new(&mesh);
        let n = cfg.output.snapshots;
        for k in 1..=n {
            let level = k * fc.time.n_steps / n;
            let name = format!("snapshot_{level:05}.vtk");
            io::save_vtk(&out.path(&name), &mesh, &[("eps", &eps.values)], &[("E", h.level(level))], Some(&disc))?;
        }
    }
    info!("forward: {} cells, {} steps", mesh.n_cells(), fc.time.n_steps);
    Ok(None)
}

fn synthesize(
    cfg: &RunConfig,
    out: &mut Outputs,
    values: &mut BTreeMap<String, serde_json::Value>,
) -> Result<Option<String>> {
    let spec = cfg.domain_spec()?;
    let mesh = base_mesh(cfg)?;
    let truth = match &cfg.paths.eps {
        Some(p) => load_coefficient(p, &mesh)?,
        None => CoefficientField::from_fn(&mesh, |p| {
            cfg.twin
                .inclusions
                .iter()
                .filter(|inc| (0..3).all(|d| p[d] > inc.lo[d] && p[d] < inc.hi[d]))
                .fold(1.0, |m, inc| f64::max(m, inc.eps))
        }),
    };
    truth.validate(&mesh)?;
    let fc = cfg.forward_config()?;
    let data = synthesize_twin_data(&spec, &mesh, &truth, &fc, &cfg.waveform(), cfg.pipeline.noise_level, cfg.seed)?;
    io::save_plane(&out.path("data.wsbnd"), &data)?;
    data.write_text(BufWriter::new(fs::File::create(out.path("data.txt"))?))?;
    io::save_mesh(&out.path("truth.wsmesh"), &mesh, &[("eps", &truth.values)], "")?;
    let t_max = truth.max_in_omega(&mesh);
    if t_max > 1.0 {
        let smooth = smooth_coefficient(&truth, &mesh, cfg.twin.glob_sigma)?;
        let peak = (cfg.twin.glob_peak_fraction * t_max).clamp(1.0, 25.0);
        let glob = rescale_contrast(&smooth, &mesh, peak)?;
        io::save_mesh(&out.path("eps_glob.wsmesh"), &mesh, &[("eps", &glob.values)], "")?;
        values.insert("eps_glob_max".into(), peak.into());
    }
    values.insert("eps_true_max".into(), t_max.into());
    values.insert("data_max".into(), data.max().into());
    Ok(None)
}

fn load_measured(path: &Path) -> Result<MeasurementPlaneData<f64>> {
    if path.extension().is_some_and(|e| e == "txt") {
        MeasurementPlaneData::read_text(BufReader::new(fs::File::open(path)?))
    } else {
        io::load_plane(path)
    }
}

fn preprocess(
    cfg: &RunConfig,
    out: &mut Outputs,
    values: &mut BTreeMap<String, serde_json::Value>,
) -> Result<Option<String>> {
    let spec = cfg.domain_spec()?;
    let mesh = base_mesh(cfg)?;
    let glob = eps_glob(cfg, &mesh)?;
    let measured = load_measured(&input(&cfg.paths.measured, out.dir, "data.wsbnd"))?;
    // data recorded away from Γ are first moved onto it
    let target = (measured.plane_z - spec.gamma_z).abs() > 1e-9 * spec.g_bounds.extent(2);
    let prep = prepare_boundary_data(
        &spec,
        &mesh,
        &glob,
        &cfg.forward_config()?,
        &cfg.waveform(),
        &measured,
        target.then_some(spec.gamma_z),
        &cfg.immersing()?,
    )?;
    io::save_record(&out.path("boundary.wsbnd"), &prep.record)?;
    values.insert("calibration_factor".into(), prep.calibration_factor.into());
    values.insert("propagated".into(), target.into());
    Ok(None)
}

fn invert(
    cfg: &RunConfig,
    out: &mut Outputs,
    values: &mut BTreeMap<String, serde_json::Value>,
) -> Result<Option<String>> {
    let mesh = base_mesh(cfg)?;
    let glob = eps_glob(cfg, &mesh)?;
    let data = io::load_record::<f64>(&input(&cfg.paths.boundary, out.dir, "boundary.wsbnd"))?;
    if data.mesh_id != mesh.id() {
        return Err(Error::Shape("boundary record was produced on a different mesh".into()));
    }
    let problem = AdaptiveProblem {
        base_mesh: &mesh,
        eps_glob: glob,
        data,
        config: cfg.forward_config()?,
        cutoff: cfg.cutoff()?,
        gamma: cfg.tikhonov.gamma,
    };
    let outcome = run_adaptive(&problem, &cfg.adaptive_config()?)?;
    fs::write(out.path("run_record.jsonl"), outcome.record.json_lines())?;
    fs::write(out.path("summary.txt"), outcome.record.summary_table())?;
    for (k, (m, sol)) in outcome.meshes.iter().zip(&outcome.solutions).enumerate() {
        let mut w = BufWriter::new(fs::File::create(out.path(&format!("iterations_mesh{k}.tsv")))?);
        write_iteration_log(&sol.history, &mut w)?;
        w.flush()?;
        let meta = serde_json::json!({ "refinement": k, "iterations": sol.iterations, "misfit": sol.misfit }).to_string();
        let fields: [(&str, &[f64]); 2] = [("eps", &sol.eps.values), ("grad", &sol.grad.values)];
        io::save_mesh(&out.path(&format!("eps_mesh{k}.wsmesh")), m, &fields, &meta)?;
    }
    let (m, sol) = (outcome.final_mesh(), outcome.final_solution());
    let k = outcome.meshes.len() - 1;
    let meta = serde_json::json!({ "refinement": k, "iterations": sol.iterations, "misfit": sol.misfit }).to_string();
    io::save_mesh(&out.path("eps_final.wsmesh"), m, &[("eps", &sol.eps.values), ("grad", &sol.grad.values)], &meta)?;
    io::save_vtk(&out.path("eps_final.vtk"), m, &[("eps", &sol.eps.values), ("grad", &sol.grad.values)], &[], None)?;
    values.insert("meshes".into(), outcome.meshes.len().into());
    values.insert("final_misfit".into(), sol.misfit.into());
    Ok(Some(format!("{:?}", outcome.stop())))
}

fn mesh_label(meta: &str, mesh: &Mesh<f64>) -> String {
    let k = serde_json::from_str::<serde_json::Value>(meta)
        .ok()
        .and_then(|v| v.get("refinement").and_then(|r| r.as_u64()))
        .unwrap_or_else(|| mesh.levels().max().unwrap_or(0) as u64);
    if k == 0 {
        "coarse".into()
    } else {
        format!("{k}x refined")
    }
}

fn report(
    cfg: &RunConfig,
    out: &mut Outputs,
    values: &mut BTreeMap<String, serde_json::Value>,
) -> Result<Option<String>> {
    let file = io::load_mesh::<f64>(&input(&cfg.paths.result, out.dir, "eps_final.wsmesh"))?;
    let mesh = &file.mesh;
    let eps = file.coefficient("eps")?;
    let truth = match &cfg.paths.truth {
        Some(p) => Some(load_coefficient(p, mesh)?),
        None => None,
    };
    let rep: TargetReport = make_report(&eps, mesh, truth.as_ref());
    let row = rep.tsv_row(&mesh_label(&file.meta, mesh));
    fs::write(out.path("report.tsv"), format!("{}\n{row}\n", TargetReport::TSV_HEADER))?;
    fs::write(out.path("report.json"), serde_json::to_string_pretty(&rep).expect("report serializes") + "\n")?;
    let img = threshold_image(&eps, mesh, rep.classification);
    io::save_vtk(&out.path("image.vtk"), mesh, &[("image", &img.values), ("eps", &eps.values)], &[], None)?;
    println!("{}\n{row}", TargetReport::TSV_HEADER);
    values.insert("n_target".into(), rep.n_target.into());
    Ok(None)
}
