//! Command-line front end: section geometry, effective stiffness, rod
//! minimization and thin-body probe reports as deterministic JSON.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{UnitQuaternion, Vector3};
use serde::Serialize;

use rodhom::cross_section::{
    build_primitive, load_mesh, normalize_axes, Primitive, SectionGeometry, TriMesh2D,
};
use rodhom::effective_stiffness::{
    corrector_solve, effective_matrix, EffectiveStiffness, StiffnessReport, StrainLoad,
};
use rodhom::fem2d::torsion_constant;
use rodhom::grid3d::RodGrid;
use rodhom::material::{load_material, MaterialConfig};
use rodhom::probe3d::{
    build_recovery, griso_decompose, griso_reconstruct, probe_energy, rigidity_gap,
    slice_rotations, Displacement3D, ProbeLadderEntry, ProbeReport,
};
use rodhom::rod_model::{minimize_rod, DescentOptions, EndCondition, FrameCurve, StrainCurve};

#[derive(Parser)]
#[command(
    name = "rodhom",
    version,
    about = "Bending-torsion rod stiffness from 2D cross-sections, rod solves, and 3D thin-body probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Section geometry: area, principal moments, torsion constant
    Section(SectionArgs),
    /// Effective stiffness matrix, Schur reduction and optimal stretch
    Stiffness(StiffnessArgs),
    /// Minimize the rod energy under clamped ends
    Rod(RodArgs),
    /// Recovery-sequence energy ladder against the limit stiffness
    Probe(ProbeArgs),
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// ASCII mesh file ("nv nt" header, vertex lines, 0-based index triples)
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Primitive section: disc | rectangle | ellipse | annulus | lshape
    #[arg(long)]
    primitive: Option<String>,
    /// Target element count for primitive meshes
    #[arg(long, default_value_t = 2000)]
    resolution: usize,
    /// Disc radius
    #[arg(long)]
    radius: Option<f64>,
    /// Rectangle or L-shape width
    #[arg(long)]
    width: Option<f64>,
    /// Rectangle or L-shape height
    #[arg(long)]
    height: Option<f64>,
    /// Ellipse semi-axis along x2
    #[arg(long)]
    semi_x: Option<f64>,
    /// Ellipse semi-axis along x3
    #[arg(long)]
    semi_y: Option<f64>,
    /// Annulus inner radius
    #[arg(long)]
    inner: Option<f64>,
    /// Annulus outer radius
    #[arg(long)]
    outer: Option<f64>,
    /// L-shape leg thickness
    #[arg(long)]
    thickness: Option<f64>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Relative solver tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Seed for randomized diagnostics (part of the report identity)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output path for the JSON report (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SectionArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct StiffnessArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Material config file
    #[arg(long)]
    material: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct RodArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Material config file
    #[arg(long)]
    material: PathBuf,
    /// Rod length
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    /// Number of rod intervals
    #[arg(long, default_value_t = 32)]
    segments: usize,
    /// Rotation vector clamping the far end, e.g. "0,0,1.5708"
    #[arg(long)]
    end_rotvec: Option<String>,
    /// Dead end moment as a 3-vector (alternative to --end-rotvec)
    #[arg(long)]
    moment: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Material config file (isotropic)
    #[arg(long)]
    material: PathBuf,
    /// Thickness ladder, e.g. "0.2,0.1,0.05"
    #[arg(long, default_value = "0.2,0.1,0.05")]
    h_ladder: String,
    /// Constant strain as the axial vector of A, e.g. "0,0,0.4"
    #[arg(long, default_value = "0,0,0.4")]
    curvature: String,
    /// Rod length
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    version: &'static str,
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct SectionReport {
    geometry: SectionGeometry,
    mesh_stats: MeshStatsOut,
}

#[derive(Serialize)]
struct MeshStatsOut {
    vertices: usize,
    triangles: usize,
    min_angle_deg: f64,
}

#[derive(Serialize)]
struct RodReport {
    energy: f64,
    iterations: usize,
    gradient_norm: f64,
    monotone: bool,
    frame: serde_json::Value,
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

fn classify(err: rodhom::Error) -> Failure {
    use rodhom::Error as E;
    let (exit, code) = match &err {
        E::InvalidParameter(_) => (2, "invalid-parameter"),
        E::MeshFormat { .. } => (2, "mesh-format"),
        E::MeshInvalid(_) => (2, "mesh-invalid"),
        E::MaterialFormat { .. } => (2, "material-format"),
        E::UnsupportedMaterial(_) => (2, "unsupported-material"),
        E::SizeLimit { .. } => (2, "size-limit"),
        E::Io(_) => (2, "io"),
        E::NotSkew(_) => (2, "invalid-parameter"),
        E::Inconsistent(_) => (1, "inconsistent-system"),
        E::NoConvergence { .. } => (1, "no-convergence"),
        E::AmbiguousRotation { .. } => (1, "ambiguous-rotation"),
        E::DescentCap { .. } => (1, "descent-cap"),
    };
    Failure {
        exit,
        code,
        message: err.to_string(),
    }
}

fn input_failure(code: &'static str, message: String) -> Failure {
    Failure {
        exit: 2,
        code,
        message,
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn build_mesh(args: &MeshArgs) -> Result<(TriMesh2D, SectionGeometry), Failure> {
    let raw = if let Some(path) = &args.mesh {
        if !path.exists() {
            return Err(input_failure(
                "mesh-not-found",
                format!("mesh file {} does not exist", path.display()),
            ));
        }
        load_mesh(path).map_err(classify)?
    } else if let Some(kind) = &args.primitive {
        let need = |name: &str, v: Option<f64>| -> Result<f64, Failure> {
            v.ok_or_else(|| {
                input_failure(
                    "invalid-parameter",
                    format!("primitive '{kind}' needs --{name}"),
                )
            })
        };
        let primitive = match kind.as_str() {
            "disc" => Primitive::Disc {
                radius: need("radius", args.radius)?,
            },
            "rectangle" => Primitive::Rectangle {
                width: need("width", args.width)?,
                height: need("height", args.height)?,
            },
            "ellipse" => Primitive::Ellipse {
                semi_x: need("semi-x", args.semi_x)?,
                semi_y: need("semi-y", args.semi_y)?,
            },
            "annulus" => Primitive::Annulus {
                inner: need("inner", args.inner)?,
                outer: need("outer", args.outer)?,
            },
            "lshape" => Primitive::LShape {
                width: need("width", args.width)?,
                height: need("height", args.height)?,
                thickness: need("thickness", args.thickness)?,
            },
            other => {
                return Err(input_failure(
                    "invalid-parameter",
                    format!("unknown primitive '{other}'"),
                ))
            }
        };
        build_primitive(&primitive, args.resolution).map_err(classify)?
    } else {
        return Err(input_failure(
            "invalid-parameter",
            "either --mesh or --primitive is required".into(),
        ));
    };
    let (mesh, geometry) = normalize_axes(&raw).map_err(classify)?;
    if mesh.min_angle_deg() < 20.0 {
        eprintln!(
            "warning: mesh minimum angle {:.1} deg is below 20 deg",
            mesh.min_angle_deg()
        );
    }
    Ok((mesh, geometry))
}

fn load_material_checked(path: &PathBuf) -> Result<MaterialConfig, Failure> {
    if !path.exists() {
        return Err(input_failure(
            "material-not-found",
            format!("material file {} does not exist", path.display()),
        ));
    }
    load_material(path).map_err(classify)
}

fn parse_vector3(text: &str, what: &str) -> Result<Vector3<f64>, Failure> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(input_failure(
            "invalid-parameter",
            format!("{what} must be three comma-separated numbers, got '{text}'"),
        ));
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|_| {
            input_failure("invalid-parameter", format!("{what}: invalid number '{p}'"))
        })?;
    }
    Ok(v)
}

fn parse_ladder(text: &str) -> Result<Vec<f64>, Failure> {
    let mut out = Vec::new();
    for p in text.split(',') {
        let h: f64 = p.trim().parse().map_err(|_| {
            input_failure(
                "invalid-parameter",
                format!("h ladder: invalid number '{p}'"),
            )
        })?;
        if !(h > 0.0 && h <= 1.0) {
            return Err(input_failure(
                "invalid-parameter",
                format!("thickness {h} outside (0, 1]"),
            ));
        }
        out.push(h);
    }
    if out.is_empty() {
        return Err(input_failure(
            "invalid-parameter",
            "h ladder must not be empty".into(),
        ));
    }
    Ok(out)
}

fn emit<T: Serialize>(common: &CommonArgs, body: T) -> Result<(), Failure> {
    let config: Vec<String> = std::env::args().skip(1).collect();
    let report = Envelope {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("{:016x}", fnv1a64(config.join("\u{1f}").as_bytes())),
        body,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serialization");
    match &common.out {
        Some(path) => std::fs::write(path, text.as_bytes())
            .map_err(|e| input_failure("io", format!("cannot write {}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn stiffness_for(
    mesh: &TriMesh2D,
    material: &MaterialConfig,
    tol: f64,
) -> Result<EffectiveStiffness, Failure> {
    effective_matrix(mesh, &material.quadratic(), tol).map_err(classify)
}

fn run_section(args: &SectionArgs) -> Result<(), Failure> {
    let (mesh, mut geometry) = build_mesh(&args.mesh)?;
    geometry.torsion_constant = Some(torsion_constant(&mesh).map_err(classify)?);
    emit(
        &args.common,
        SectionReport {
            geometry,
            mesh_stats: MeshStatsOut {
                vertices: mesh.n_vertices(),
                triangles: mesh.n_triangles(),
                min_angle_deg: mesh.min_angle_deg(),
            },
        },
    )
}

fn run_stiffness(args: &StiffnessArgs) -> Result<(), Failure> {
    let (mesh, geometry) = build_mesh(&args.mesh)?;
    let material = load_material_checked(&args.material)?;
    let stiffness = stiffness_for(&mesh, &material, args.common.tol)?;
    let cbar = torsion_constant(&mesh).map_err(classify)?;
    let report = StiffnessReport::new(&stiffness, &mesh, geometry.mu2, geometry.mu3, cbar);
    emit(&args.common, report)
}

fn run_rod(args: &RodArgs) -> Result<(), Failure> {
    if args.segments < 16 {
        return Err(input_failure(
            "invalid-parameter",
            format!("need at least 16 segments, got {}", args.segments),
        ));
    }
    let (mesh, _) = build_mesh(&args.mesh)?;
    let material = load_material_checked(&args.material)?;
    let stiffness = stiffness_for(&mesh, &material, args.common.tol)?;
    let q0 = stiffness.q0;
    let (end, initial) = match (&args.end_rotvec, &args.moment) {
        (Some(_), Some(_)) => {
            return Err(input_failure(
                "invalid-parameter",
                "--end-rotvec and --moment are mutually exclusive".into(),
            ))
        }
        (Some(text), None) => {
            let rot = parse_vector3(text, "--end-rotvec")?;
            let end_q = UnitQuaternion::from_scaled_axis(rot);
            let guess = FrameCurve::geodesic(
                args.length,
                args.segments,
                UnitQuaternion::identity(),
                end_q,
            )
            .map_err(classify)?;
            (EndCondition::Clamped(end_q), guess)
        }
        (None, Some(text)) => {
            let m = parse_vector3(text, "--moment")?;
            let guess =
                FrameCurve::constant(args.length, args.segments, UnitQuaternion::identity())
                    .map_err(classify)?;
            (EndCondition::Moment(m), guess)
        }
        (None, None) => (
            EndCondition::Free,
            FrameCurve::constant(args.length, args.segments, UnitQuaternion::identity())
                .map_err(classify)?,
        ),
    };
    let outcome =
        minimize_rod(&initial, |_| q0, &end, &DescentOptions::default()).map_err(classify)?;
    let monotone = outcome
        .energy_trace
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-15) + 1e-300);
    let frame_json: serde_json::Value =
        serde_json::from_str(&outcome.frame.to_json()).expect("frame json");
    emit(
        &args.common,
        RodReport {
            energy: outcome.energy,
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm,
            monotone,
            frame: frame_json,
        },
    )
}

fn run_probe(args: &ProbeArgs) -> Result<(), Failure> {
    let (mesh, _) = build_mesh(&args.mesh)?;
    let material = load_material_checked(&args.material)?;
    let Some(law) = material.nonlinear().cloned() else {
        return Err(input_failure(
            "unsupported-material",
            "the probe needs an isotropic material".into(),
        ));
    };
    let ladder = parse_ladder(&args.h_ladder)?;
    let axial = parse_vector3(&args.curvature, "--curvature")?;
    let mesh = Arc::new(mesh);
    let quad = law.quadratic.clone();
    let stiffness = effective_matrix(&mesh, &quad, args.common.tol).map_err(classify)?;
    let coords = rodhom::rod_model::strain_coords(&axial);
    let target = args.length * stiffness.q0_eval_coords(&coords);
    let a_min = stiffness.a_min_coords(&coords);
    let load = StrainLoad::new(a_min, coords[0], coords[1], coords[2]);
    let corrector = corrector_solve(&mesh, &quad, &load, args.common.tol).map_err(classify)?;

    let mut entries = Vec::new();
    let mut griso_residual = 0.0f64;
    for &h in &ladder {
        let n1 = ((3.2 * args.length / h).ceil() as usize).max(16);
        let grid = RodGrid::new(mesh.clone(), n1, args.length).map_err(classify)?;
        let strain = StrainCurve::constant(args.length, n1, axial).map_err(classify)?;
        let frame = rodhom::rod_model::frame_reconstruct(&strain, UnitQuaternion::identity());
        let stretch = vec![a_min; grid.n_slices()];
        let y = build_recovery(&grid, &frame, &stretch, Some(&corrector.field), h)
            .map_err(classify)?;
        let energy = probe_energy(&y, &law);
        let rotations = slice_rotations(&y);
        let rigidity = rigidity_gap(&y, &rotations) / h;
        // decomposition residual of the displacement relative to the
        // rest configuration
        let rest = Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            Vector3::new(x1, h * x2, h * x3)
        })
        .map_err(classify)?;
        let u_values: Vec<Vector3<f64>> = y
            .values()
            .iter()
            .zip(rest.values())
            .map(|(a, b)| a - b)
            .collect();
        let u = Displacement3D::new(grid.clone(), h, u_values).map_err(classify)?;
        let parts = griso_decompose(&u).map_err(classify)?;
        let back = griso_reconstruct(&grid, h, &parts).map_err(classify)?;
        let scale = u
            .values()
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        griso_residual = griso_residual.max(u.max_difference(&back) / scale);
        // sup distance of the cell gradients from the driving frame
        let grads = rodhom::probe3d::cell_gradients(&y);
        let nt = grid.mesh().n_triangles();
        let mut sup = 0.0f64;
        for slab in 0..grid.n_intervals() {
            let rmid = 0.5 * (frame.rotation(slab) + frame.rotation(slab + 1));
            for t in 0..nt {
                sup = sup.max((grads[slab * nt + t] - rmid).norm());
            }
        }
        entries.push(ProbeLadderEntry {
            h,
            energy: energy.value,
            relative_gap: (energy.value - target).abs() / target.abs().max(1e-300),
            inverted_cells: energy.inverted_cells,
            rigidity_ratio: rigidity,
            frame_distance_sup: sup,
        });
    }
    emit(
        &args.common,
        ProbeReport {
            target,
            ladder: entries,
            griso_residual,
        },
    )
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let threads = match &cli.command {
        Command::Section(a) => a.common.threads,
        Command::Stiffness(a) => a.common.threads,
        Command::Rod(a) => a.common.threads,
        Command::Probe(a) => a.common.threads,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match &cli.command {
        Command::Section(a) => run_section(a),
        Command::Stiffness(a) => run_stiffness(a),
        Command::Rod(a) => run_rod(a),
        Command::Probe(a) => run_probe(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let payload = serde_json::json!({
                "code": failure.code,
                "message": failure.message,
            });
            eprintln!("{payload}");
            ExitCode::from(failure.exit)
        }
    }
}
