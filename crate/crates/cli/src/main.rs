use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lungwarp::experiment::{
    run_evaluate, run_sensitivity, run_sweep_cases, run_sweep_landmarks, RunConfig,
};
use lungwarp::krr::ScalingMode;
use lungwarp::landmarks::LandmarkOrdering;
use lungwarp::manifest::write_cohort;
use lungwarp::mesh::LobeLabel;
use lungwarp::metrics::Method;
use lungwarp::sensitivity::PerturbedColumns;
use lungwarp::synth::GeneratorParams;
use lungwarp::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CONDITIONING: u8 = 4;

#[derive(Parser)]
#[command(
    name = "lungwarp",
    version,
    about = "Estimate collapsed-lobe surfaces from a few measured landmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort and its manifest.
    Synth(SynthArgs),
    /// Leave-one-out comparison of kernel, affine and TPS estimates.
    Evaluate(RunArgs),
    /// Accuracy against landmark count 1..12 under both orderings.
    SweepLandmarks(RunArgs),
    /// Accuracy against the number of training cases.
    SweepCases(RunArgs),
    /// Sensitivity of the kernel estimate to landmark measurement error.
    Sensitivity(RunArgs),
}

/// Settings file for `synth`; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    cases: usize,
    output_dir: PathBuf,
    lobes: Vec<LobeLabel>,
    generator: GeneratorParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cases: 9,
            output_dir: PathBuf::from("cohort"),
            lobes: vec![LobeLabel::Upper, LobeLabel::Lower],
            generator: GeneratorParams::default(),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// JSON settings file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cases per lobe.
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Generate a single lobe instead of both.
    #[arg(long)]
    lobe: Option<LobeLabel>,
    /// Vertices per lobe mesh.
    #[arg(long)]
    vertices: Option<usize>,
    /// Deflated to inflated volume ratio.
    #[arg(long)]
    volume_ratio: Option<f64>,
    #[arg(long)]
    shape_perturbation: Option<f64>,
    #[arg(long)]
    bend_strength: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON settings file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort manifest written by `synth` or by hand.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Restrict to one lobe.
    #[arg(long)]
    lobe: Option<LobeLabel>,
    /// experiment1 (contiguous along the contour) or experiment2 (spread out).
    #[arg(long)]
    ordering: Option<LandmarkOrdering>,
    #[arg(long)]
    landmarks: Option<usize>,
    /// Comma-separated subset of kernel, affine, tps.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    k_a: Option<Vec<f64>>,
    /// Absolute bandwidth candidates; replaces the relative grid.
    #[arg(long, value_delimiter = ',')]
    k_b: Option<Vec<f64>>,
    /// Bandwidth candidates as multiples of 1 / median squared input distance.
    #[arg(long, value_delimiter = ',')]
    k_b_relative: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    /// Feature scaling: length, standardize or raw.
    #[arg(long)]
    scaling: Option<ScalingMode>,
    /// Add mirrored copies of the training cases.
    #[arg(long, overrides_with = "no_augment")]
    augment: bool,
    #[arg(long, overrides_with = "augment")]
    no_augment: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Voxel spacing for DSC in millimetres.
    #[arg(long)]
    dsc_spacing: Option<f64>,
    /// Volume ratio assumed for the case being predicted.
    #[arg(long)]
    volume_ratio: Option<f64>,
    #[arg(long)]
    tps_regularization: Option<f64>,
    /// Cap on training-case combinations per test case.
    #[arg(long)]
    max_combinations: Option<usize>,
    /// Comma-separated training-set sizes for the case sweep.
    #[arg(long, value_delimiter = ',')]
    case_counts: Option<Vec<usize>>,
    /// Perturbed inputs for sensitivity: all or deflated_landmarks.
    #[arg(long)]
    columns: Option<PerturbedColumns>,
    /// Stored kernel model for sensitivity instead of refitting.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip writing colored PLY files.
    #[arg(long)]
    no_meshes: bool,
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl SynthArgs {
    fn resolve(self) -> Result<SynthConfig, Error> {
        let mut c: SynthConfig = read_config(self.config.as_deref())?;
        set(&mut c.cases, self.cases);
        set(&mut c.output_dir, self.output);
        set(&mut c.generator.seed, self.seed);
        set(&mut c.generator.vertex_count, self.vertices);
        set(&mut c.generator.target_volume_ratio, self.volume_ratio);
        set(&mut c.generator.shape_perturbation, self.shape_perturbation);
        set(&mut c.generator.bend_strength, self.bend_strength);
        if let Some(l) = self.lobe {
            c.lobes = vec![l];
        }
        if c.cases == 0 {
            return Err(Error::Argument("--cases must be at least 1".into()));
        }
        c.generator.validate()?;
        Ok(c)
    }
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, Error> {
        let mut c: RunConfig = read_config(self.config.as_deref())?;
        if self.manifest.is_some() {
            c.manifest_path = self.manifest;
        }
        if self.lobe.is_some() {
            c.lobe = self.lobe;
        }
        set(&mut c.ordering, self.ordering);
        set(&mut c.landmark_count, self.landmarks);
        set(&mut c.methods, self.methods);
        set(&mut c.hyper.k_a, self.k_a);
        if self.k_b.is_some() {
            c.hyper.k_b = self.k_b;
        }
        if let Some(r) = self.k_b_relative {
            c.hyper.k_b_relative = r;
            c.hyper.k_b = None;
        }
        set(&mut c.hyper.lambda, self.lambda);
        set(&mut c.hyper.folds, self.folds);
        set(&mut c.hyper.scaling, self.scaling);
        if self.augment {
            c.augment = true;
        }
        if self.no_augment {
            c.augment = false;
        }
        set(&mut c.output_dir, self.output);
        set(&mut c.seed, self.seed);
        if self.dsc_spacing.is_some() {
            c.dsc_spacing = self.dsc_spacing;
        }
        set(&mut c.volume_ratio, self.volume_ratio);
        set(&mut c.tps_regularization, self.tps_regularization);
        set(&mut c.max_combinations, self.max_combinations);
        if self.case_counts.is_some() {
            c.case_counts = self.case_counts;
        }
        set(&mut c.sensitivity_columns, self.columns);
        if self.model.is_some() {
            c.model_path = self.model;
        }
        if self.no_meshes {
            c.write_meshes = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(args) => {
            let c = args.resolve()?;
            let path = write_cohort(&c.output_dir, &c.generator, c.cases, &c.lobes)?;
            println!("{}", path.display());
        }
        Command::Evaluate(args) => {
            let r = run_evaluate(&args.resolve()?)?;
            print!("{}", r.csv);
            eprintln!("wrote {}", r.csv_path.display());
        }
        Command::SweepLandmarks(args) => {
            let r = run_sweep_landmarks(&args.resolve()?)?;
            print!("{}", r.csv);
            eprintln!("wrote {}", r.csv_path.display());
        }
        Command::SweepCases(args) => {
            let r = run_sweep_cases(&args.resolve()?)?;
            print!("{}", r.csv);
            eprintln!("wrote {}", r.csv_path.display());
        }
        Command::Sensitivity(args) => {
            let r = run_sensitivity(&args.resolve()?)?;
            for l in &r.report.lobes {
                println!("{}", serde_json::to_string(l).map_err(Error::from)?);
            }
            eprintln!("wrote {}", r.json_path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Conditioning { .. } => EXIT_CONDITIONING,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> RunArgs {
        let cli = Cli::try_parse_from(["lungwarp", "evaluate"].iter().chain(args)).unwrap();
        match cli.command {
            Command::Evaluate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_survive_without_flags() {
        assert_eq!(run_args(&[]).resolve().unwrap(), RunConfig::default());
    }

    #[test]
    fn list_flags_and_switches() {
        let c = run_args(&[
            "--methods",
            "kernel,tps",
            "--lambda",
            "0.1,1",
            "--k-b",
            "2",
            "--no-augment",
            "--no-meshes",
        ])
        .resolve()
        .unwrap();
        assert_eq!(c.methods, vec![Method::Kernel, Method::Tps]);
        assert_eq!(c.hyper.lambda, vec![0.1, 1.0]);
        assert_eq!(c.hyper.k_b, Some(vec![2.0]));
        assert!(!c.augment && !c.write_meshes);
        let c = run_args(&["--no-augment", "--augment"]).resolve().unwrap();
        assert!(c.augment);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let e = run_args(&["--landmarks", "13"]).resolve().unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        assert!(
            Cli::try_parse_from(["lungwarp", "evaluate", "--ordering", "experiment3"]).is_err()
        );
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(
            exit_code(&Error::Conditioning {
                pivot: 0.0,
                index: 0
            }),
            EXIT_CONDITIONING
        );
        assert_eq!(exit_code(&Error::Geometry("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::DegenerateLandmark("x".into())), EXIT_DATA);
    }
}
