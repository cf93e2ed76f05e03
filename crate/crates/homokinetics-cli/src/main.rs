//! Scenario-driven command line tying the homokinetics modules together:
//! classify deformation matrices, run the particle solver, assemble the
//! collision operator, predict long-time temperature laws, and check the
//! two against each other.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use homokinetics::analysis::{compare, fit_power_law, AnalysisError, TimeSeries};
use homokinetics::asymptotics::{predict, Prediction};
use homokinetics::dsmc::{self, DsmcError};
use homokinetics::flow::{classify, FlowClass, FlowCase, FlowError, FlowPath};
use homokinetics::kernel::{AngularDensity, DomainError, KernelSpec};
use homokinetics::linop::{assemble, green_kubo_b, BasisSpec, LinopError, QuadBudget};
use homokinetics::scenario::{Scenario, ScenarioError};
use homokinetics::Mat3;

/// Exit contract: 0 success, 2 configuration or input error, 3 numerical
/// failure. Clap's own usage errors already exit with 2.
const CONFIG: u8 = 2;
const NUMERICAL: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: CONFIG, message: message.into() }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Failure { code: NUMERICAL, message: message.into() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(err: ScenarioError) -> Self {
        Failure::config(err.to_string())
    }
}

impl From<FlowError> for Failure {
    fn from(err: FlowError) -> Self {
        Failure::config(err.to_string())
    }
}

impl From<DomainError> for Failure {
    fn from(err: DomainError) -> Self {
        Failure::config(err.to_string())
    }
}

impl From<DsmcError> for Failure {
    fn from(err: DsmcError) -> Self {
        match err {
            DsmcError::Config(_) => Failure::config(err.to_string()),
            DsmcError::MajorantViolation { .. } => Failure::numerical(err.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(err: AnalysisError) -> Self {
        match err {
            // A fit on values a power law cannot produce is a property of the
            // data, not of the request.
            AnalysisError::NonPositiveValues => Failure::numerical(err.to_string()),
            _ => Failure::config(err.to_string()),
        }
    }
}

impl From<LinopError> for Failure {
    fn from(err: LinopError) -> Self {
        match err {
            LinopError::QuadratureBudgetExceeded { .. } => Failure::numerical(err.to_string()),
            _ => Failure::config(err.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::config(err.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        Failure::config(err.to_string())
    }
}

#[derive(Parser)]
#[command(name = "homokinetics", version, about = "Kinetic-theory laboratory for homoenergetic flows")]
struct Cli {
    /// Suppress informational output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a deformation generator A from its nine row-major entries.
    Classify {
        /// Entries A11 A12 A13 A21 A22 A23 A31 A32 A33.
        #[arg(num_args = 9, required = true)]
        entries: Vec<f64>,
    },
    /// Run a scenario file through the particle solver and write its CSV.
    Simulate {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario replica count.
        #[arg(long)]
        replicas: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble the linearized collision operator and print the Green-Kubo
    /// transport constant for a flow class's driving matrix.
    LinopB {
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        basis: BasisArgs,
        /// Flow class JSON; its canonical driving matrix sets the forcing.
        #[arg(long, default_value = r#"{"tag": "simple_shear", "k": 1.0}"#)]
        class: String,
    },
    /// Print the predicted long-time law for a flow class and kernel exponent.
    Predict {
        /// Flow class JSON.
        #[arg(long)]
        class: String,
        /// Kernel homogeneity exponent.
        #[arg(long)]
        gamma: f64,
        /// Also compute the Green-Kubo constant so the law carries a prefactor.
        #[arg(long)]
        with_b: bool,
        #[command(flatten)]
        kernel: KernelOptions,
        #[command(flatten)]
        basis: BasisArgs,
    },
    /// Fit a power law to one column of a simulation CSV.
    Fit {
        csv: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Compare a fitted exponent against a prediction JSON.
    Report {
        csv: PathBuf,
        prediction: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Acceptance half-width for the exponent; defaults to
        /// max(0.1 |exponent|, 0.1).
        #[arg(long)]
        tolerance: Option<f64>,
        /// Also write the report JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel homogeneity exponent in [-3, 3].
    #[arg(long)]
    gamma: f64,
    #[command(flatten)]
    options: KernelOptions,
}

#[derive(Args)]
struct KernelOptions {
    /// Angular density of the collision kernel.
    #[arg(long, value_enum, default_value_t = Angular::Constant)]
    angular: Angular,
    /// Kernel strength prefactor.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
}

#[derive(Args)]
struct BasisArgs {
    /// Radial order of the Galerkin basis.
    #[arg(long, default_value_t = 3)]
    radial: usize,
    /// Angular order of the Galerkin basis.
    #[arg(long, default_value_t = 2)]
    angular_order: usize,
    /// Multiplier on the quadrature node counts.
    #[arg(long, default_value_t = 1.0)]
    quad_factor: f64,
}

#[derive(Args)]
struct FitArgs {
    /// CSV column to fit.
    #[arg(long, default_value = "beta")]
    column: String,
    /// Fit window in t; defaults to the last decade.
    #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
    window: Option<Vec<f64>>,
}

impl FitArgs {
    fn window(&self) -> Option<(f64, f64)> {
        self.window.as_ref().map(|w| (w[0], w[1]))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Angular {
    Constant,
    Cosine,
}

impl From<Angular> for AngularDensity {
    fn from(a: Angular) -> Self {
        match a {
            Angular::Constant => AngularDensity::Constant,
            Angular::Cosine => AngularDensity::Cosine,
        }
    }
}

fn parse_class(text: &str) -> Result<FlowClass, Failure> {
    let class: FlowClass = serde_json::from_str(text)
        .map_err(|err| Failure::config(format!("invalid flow class {text:?}: {err}")))?;
    class.validate().map_err(Failure::config)?;
    Ok(class)
}

/// Print a line to stdout, treating a closed pipe as a normal end of output.
fn emit(text: impl std::fmt::Display) -> Result<(), Failure> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(err) if err.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        result => Ok(result?),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    emit(serde_json::to_string_pretty(value)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Classify { entries } => cmd_classify(entries),
        Command::Simulate { scenario, seed, replicas, out } => {
            cmd_simulate(cli, scenario, *seed, *replicas, out.as_deref())
        }
        Command::LinopB { kernel, basis, class } => cmd_linop_b(kernel, basis, class),
        Command::Predict { class, gamma, with_b, kernel, basis } => {
            cmd_predict(class, *gamma, *with_b, kernel, basis)
        }
        Command::Fit { csv, fit } => cmd_fit(csv, fit),
        Command::Report { csv, prediction, fit, tolerance, out } => {
            cmd_report(csv, prediction, fit, *tolerance, out.as_deref())
        }
    }
}

fn cmd_classify(entries: &[f64]) -> Result<(), Failure> {
    let a = Mat3::from_row_slice(entries);
    let case = classify(&FlowPath::new(a)?)?;
    print_json(&case)
}

fn cmd_simulate(
    cli: &Cli,
    path: &std::path::Path,
    seed: Option<u64>,
    replicas: Option<usize>,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let scenario = Scenario::load(path)?;
    let mut config = scenario.to_sim_config()?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(replicas) = replicas {
        config.replicas = replicas;
    }
    let start = Instant::now();
    let series = dsmc::run(&config)?;
    let dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from(scenario.output_dir()));
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join(format!("{}.csv", scenario.name));
    series.write_csv_path(&csv)?;
    if !cli.quiet {
        let last = series.rows.last().expect("run always emits rows");
        eprintln!(
            "{}: {} rows, {} collisions, beta {:.4e} -> {:.4e}, {:.1}s",
            scenario.name,
            series.rows.len(),
            last.collisions,
            series.rows[0].beta,
            last.beta,
            start.elapsed().as_secs_f64()
        );
    }
    emit(csv.display())
}

fn cmd_linop_b(kernel: &KernelArgs, basis: &BasisArgs, class: &str) -> Result<(), Failure> {
    let class = parse_class(class)?;
    let spec = KernelSpec::new(
        kernel.gamma,
        kernel.options.angular.into(),
        kernel.options.strength,
    )?;
    let budget = QuadBudget { factor: basis.quad_factor, ..QuadBudget::default() };
    let op = assemble(&spec, &BasisSpec::new(basis.radial, basis.angular_order), &budget)?;
    let gk = green_kubo_b(&op, &class.l0())?;
    print_json(&serde_json::json!({
        "b": gk.value,
        "error": gk.error,
        "quad_error": op.quad_error,
        "orders": { "radial": basis.radial, "angular": basis.angular_order },
    }))
}

fn cmd_predict(
    class: &str,
    gamma: f64,
    with_b: bool,
    kernel: &KernelOptions,
    basis: &BasisArgs,
) -> Result<(), Failure> {
    let class = parse_class(class)?;
    let case = FlowCase::canonical(class.clone());
    let b = if with_b {
        let spec = KernelSpec::new(gamma, kernel.angular.into(), kernel.strength)?;
        let budget = QuadBudget { factor: basis.quad_factor, ..QuadBudget::default() };
        let op = assemble(&spec, &BasisSpec::new(basis.radial, basis.angular_order), &budget)?;
        Some(green_kubo_b(&op, &class.l0())?.value)
    } else {
        None
    };
    print_json(&predict(&case, gamma, b))
}

fn cmd_fit(csv: &std::path::Path, fit: &FitArgs) -> Result<(), Failure> {
    let series = TimeSeries::read_csv_path(csv)?;
    print_json(&fit_power_law(&series, &fit.column, fit.window())?)
}

fn cmd_report(
    csv: &std::path::Path,
    prediction: &std::path::Path,
    fit: &FitArgs,
    tolerance: Option<f64>,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let series = TimeSeries::read_csv_path(csv)?;
    let prediction: Prediction = serde_json::from_str(&std::fs::read_to_string(prediction)?)?;
    let fitted = fit_power_law(&series, &fit.column, fit.window())?;
    let report = compare(&prediction, &fitted, tolerance)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n"))?;
    }
    emit(&text)
}
