use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use symcloud::cloud::PointCloud;
use symcloud::error::Error;
use symcloud::evaluation::{write_metrics_csv, write_sweep_csv};
use symcloud::io::{read_cloud, write_cloud};
use symcloud::pipeline::detect;
use symcloud::synth::{
    add_outliers, generate_symmetric_cloud, remove_connected_part, write_ground_truth,
    SynthShape, SynthSpec,
};

use symcloud_cli::config::{build_config, Overrides};
use symcloud_cli::evalcmd::{parse_manifest, run_eval};
use symcloud_cli::plot::{plot_detection, plot_pr_curve};
use symcloud_cli::report::write_detection;

const EXIT_INVALID_INPUT: u8 = 2;
const EXIT_PIPELINE: u8 = 3;
const EXIT_NON_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "symcloud",
    version,
    about = "Reflection-symmetry plane detection for 3D point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect the symmetry plane of a cloud and write a result file.
    Detect {
        /// Input cloud (.xyz, .ply, .obj).
        #[arg(long)]
        input: PathBuf,
        /// Result file to write.
        #[arg(long)]
        output: PathBuf,
        /// Also write an SVG rendering of the detection.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Include per-stage wall times in the result file (breaks
        /// byte-for-byte reproducibility of the output).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic symmetric cloud plus a ground-truth sidecar.
    Synth {
        /// Cloud file to write (.xyz or .ply).
        #[arg(long)]
        output: PathBuf,
        /// Sidecar path; defaults to `<output>.gt`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// mirrored-blob | ellipsoid | box | cylinder-union
        #[arg(long, default_value = "mirrored-blob")]
        shape: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Outlier percentage to append.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Fraction of connected points to remove.
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long = "jitter-sigma", default_value_t = 0.002)]
        jitter_sigma: f64,
        /// Apply a random rigid pose.
        #[arg(long)]
        pose: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score detections against ground truth over a manifest.
    Eval {
        /// Tab-separated manifest: cloud, sidecar[, result] per line.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for metrics.csv, sweep.csv, pr.svg.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Detect the plane and write the symmetry-completed cloud.
    Complete {
        #[arg(long)]
        input: PathBuf,
        /// Completed cloud file to write.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Errors tagged with the phase they came from, for the exit-code contract.
enum Failure {
    Input(Error),
    Pipeline(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => EXIT_INVALID_INPUT,
            Failure::Pipeline(_) => EXIT_PIPELINE,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Input(e) => format!("invalid input: {e}"),
            Failure::Pipeline(e) => format!("pipeline error: {e}"),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn cmd_detect(
    input: &PathBuf,
    output: &PathBuf,
    plot: Option<&PathBuf>,
    timing: bool,
    overrides: &Overrides,
) -> CmdResult {
    let cfg = build_config(overrides).map_err(Failure::Input)?;
    let cloud = read_cloud(input).map_err(Failure::Input)?;
    let det = detect(&cloud, &cfg.detect).map_err(Failure::Pipeline)?;
    let center = det.plane.project_point(&cloud.centroid());

    let mut buf = Vec::new();
    write_detection(&mut buf, &det, &center, timing).map_err(Failure::Pipeline)?;
    fs::write(output, &buf).map_err(|e| Failure::Pipeline(e.into()))?;
    if let Some(path) = plot {
        fs::write(path, plot_detection(&cloud, &det)).map_err(|e| Failure::Pipeline(e.into()))?;
    }

    let v = det.plane.normal();
    println!("normal = {} {} {}", v.x, v.y, v.z);
    println!("offset = {}", det.plane.offset());
    println!("pairs = {}", det.correspondences.len());
    println!("converged = {}", det.diagnostics.converged);
    Ok(if det.diagnostics.converged {
        0
    } else {
        EXIT_NON_CONVERGENCE
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    output: &PathBuf,
    sidecar: Option<&PathBuf>,
    shape: &str,
    n: usize,
    alpha: f64,
    gamma: f64,
    jitter_sigma: f64,
    pose: bool,
    seed: u64,
) -> CmdResult {
    let shape: SynthShape = shape.parse().map_err(Failure::Input)?;
    let spec = SynthSpec {
        shape,
        n,
        alpha,
        gamma,
        jitter_sigma,
        pose,
        seed,
    };
    spec.validate().map_err(Failure::Input)?;
    let (cloud, gt) = generate_symmetric_cloud(&spec).map_err(Failure::Input)?;
    // Distinct derived seeds keep the three corruption streams independent.
    let cloud = remove_connected_part(&cloud, gamma, seed.wrapping_add(1))
        .map_err(Failure::Pipeline)?;
    let cloud = add_outliers(&cloud, alpha, seed.wrapping_add(2)).map_err(Failure::Pipeline)?;

    write_cloud(output, &cloud).map_err(Failure::Pipeline)?;
    let sidecar_path = sidecar
        .cloned()
        .unwrap_or_else(|| PathBuf::from(format!("{}.gt", output.display())));
    let mut buf = Vec::new();
    write_ground_truth(&mut buf, &spec, &gt).map_err(Failure::Pipeline)?;
    fs::write(&sidecar_path, &buf).map_err(|e| Failure::Pipeline(e.into()))?;

    println!("cloud = {}", output.display());
    println!("sidecar = {}", sidecar_path.display());
    println!("points = {}", cloud.len());
    Ok(0)
}

fn cmd_eval(manifest: &PathBuf, output: &PathBuf, overrides: &Overrides) -> CmdResult {
    let cfg = build_config(overrides).map_err(Failure::Input)?;
    let rows = parse_manifest(manifest).map_err(Failure::Input)?;
    let outcome = run_eval(&rows, &cfg).map_err(Failure::Input)?;

    fs::create_dir_all(output).map_err(|e| Failure::Pipeline(e.into()))?;
    let mut metrics = Vec::new();
    write_metrics_csv(&mut metrics, &outcome.cases, &outcome.rows)
        .map_err(Failure::Pipeline)?;
    fs::write(output.join("metrics.csv"), &metrics).map_err(|e| Failure::Pipeline(e.into()))?;
    let mut sweep = Vec::new();
    write_sweep_csv(&mut sweep, &outcome.sweep).map_err(Failure::Pipeline)?;
    fs::write(output.join("sweep.csv"), &sweep).map_err(|e| Failure::Pipeline(e.into()))?;
    fs::write(output.join("pr.svg"), plot_pr_curve(&outcome.sweep))
        .map_err(|e| Failure::Pipeline(e.into()))?;

    for (id, err) in &outcome.failures {
        eprintln!("row failed: {id}: {err}");
    }
    let r = &outcome.report;
    println!("models = {}", rows.len());
    println!("failures = {}", outcome.failures.len());
    println!(
        "tp = {} fp = {} fn = {}",
        r.true_positives, r.false_positives, r.false_negatives
    );
    println!("precision = {}", r.precision);
    println!("recall = {}", r.recall);
    println!("fscore = {}", r.fscore);
    Ok(0)
}

fn cmd_complete(input: &PathBuf, output: &PathBuf, overrides: &Overrides) -> CmdResult {
    let cfg = build_config(overrides).map_err(Failure::Input)?;
    let cloud = read_cloud(input).map_err(Failure::Input)?;
    let det = detect(&cloud, &cfg.detect).map_err(Failure::Pipeline)?;

    let mirrored = det.plane.reflect_cloud(&cloud);
    let mut points = cloud.points().to_vec();
    points.extend_from_slice(mirrored.points());
    let completed = PointCloud::new(points)
        .map_err(Failure::Pipeline)?
        .with_id(cloud.id.clone());
    write_cloud(output, &completed).map_err(Failure::Pipeline)?;

    let v = det.plane.normal();
    println!("normal = {} {} {}", v.x, v.y, v.z);
    println!("offset = {}", det.plane.offset());
    println!("points-in = {}", cloud.len());
    println!("points-out = {}", completed.len());
    println!("converged = {}", det.diagnostics.converged);
    Ok(if det.diagnostics.converged {
        0
    } else {
        EXIT_NON_CONVERGENCE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Detect {
            input,
            output,
            plot,
            timing,
            overrides,
        } => cmd_detect(input, output, plot.as_ref(), *timing, overrides),
        Command::Synth {
            output,
            sidecar,
            shape,
            n,
            alpha,
            gamma,
            jitter_sigma,
            pose,
            seed,
        } => cmd_synth(
            output,
            sidecar.as_ref(),
            shape,
            *n,
            *alpha,
            *gamma,
            *jitter_sigma,
            *pose,
            *seed,
        ),
        Command::Eval {
            manifest,
            output,
            overrides,
        } => cmd_eval(manifest, output, overrides),
        Command::Complete {
            input,
            output,
            overrides,
        } => cmd_complete(input, output, overrides),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
