use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use worldline::dynamics::{run_ensemble, Mode};
use worldline::kernels::{fmt15, kernel_grid_on};
use worldline::noise::{build_covariance, NoiseSampler};
use worldline::scenario::{self, Artifacts, Scenario};

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "worldline", version, about = "Moving detectors coupled to a 1+1D scalar field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample ν̃/μ̃ between two detectors on the config grid.
    Kernel(KernelArgs),
    /// Draw noise realizations.
    Sample(SampleArgs),
    /// Integrate an ensemble.
    Simulate(SimulateArgs),
    /// Run the configured analyses on a simulation directory.
    Analyze(AnalyzeArgs),
    /// Bundled or file-based scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Long-format CSVs for plotting from a run directory.
    Plotdata {
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Run a preset (scenario_a..scenario_d) or a config file.
    Run {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets.
    List,
    /// Print a preset's config.
    Show { name: String },
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    config: PathBuf,
    /// 1-based detector indices.
    #[arg(long, default_value_t = 1)]
    i: usize,
    #[arg(long, default_value_t = 1)]
    j: usize,
    /// Use every `stride`-th grid node.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory written by `simulate` or `scenario run`.
    dir: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config(path: &Path) -> Result<Scenario, Failure> {
    scenario::load_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn kernel(args: KernelArgs) -> Result<bool, Failure> {
    let scn = config(&args.config)?;
    let n = scn.detectors.len();
    if args.i == 0 || args.j == 0 || args.i > n || args.j > n {
        return Err(Failure::Config(format!("detector indices must lie in 1..={n}")));
    }
    if args.stride == 0 {
        return Err(Failure::Config("stride must be positive".into()));
    }
    let taus: Vec<f64> = scn.grid.nodes().into_iter().step_by(args.stride).collect();
    let grid = kernel_grid_on(&scn.detectors[args.i - 1], &scn.detectors[args.j - 1], &taus, &taus, &scn.field)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(&args.out, &String::from_utf8_lossy(&buf))?;
    Ok(true)
}

fn sample(args: SampleArgs) -> Result<bool, Failure> {
    let scn = config(&args.config)?;
    let seed = args.seed.unwrap_or(scn.config.seed);
    let n = args.realizations.unwrap_or(scn.config.realizations);
    if n == 0 {
        return Err(Failure::Config("realizations must be at least 1".into()));
    }
    let runtime = |e: worldline::noise::NoiseError| Failure::Runtime(e.to_string());
    let cov = build_covariance(&scn.detectors, &scn.grid, &scn.field).map_err(runtime)?;
    let sampler = NoiseSampler::new(&cov).map_err(runtime)?;
    let mut out = Artifacts::new(&args.out);
    for real in sampler.sample_range(seed, 0, n) {
        let mut text = String::from("tau");
        for k in 1..=scn.detectors.len() {
            let _ = write!(text, ",eta_{k}");
        }
        text.push('\n');
        for m in 0..scn.grid.len() {
            text.push_str(&fmt15(scn.grid.node(m)));
            for series in &real.eta {
                text.push(',');
                text.push_str(&format!("{:.16e}", series[m]));
            }
            text.push('\n');
        }
        out.write(&format!("noise_{:05}.csv", real.stream), text.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let manifest = json!({
        "schema_version": scenario::SCHEMA_VERSION,
        "tool": "worldline",
        "version": scenario::tool_version(),
        "seed": seed,
        "realizations": n,
        "covariance_fingerprint": sampler.fingerprint(),
        "pivoted_factorization": sampler.is_pivoted(),
        "config": scn.config,
        "files": out.files(),
    });
    write(
        &args.out.join(scenario::MANIFEST),
        &(serde_json::to_string_pretty(&manifest).unwrap_or_default() + "\n"),
    )?;
    Ok(true)
}

fn simulate(args: SimulateArgs) -> Result<bool, Failure> {
    let mut scn = config(&args.config)?;
    if let Some(seed) = args.seed {
        scn.config.seed = seed;
    }
    if let Some(n) = args.realizations {
        if n == 0 {
            return Err(Failure::Config("realizations must be at least 1".into()));
        }
        scn.config.realizations = n;
    }
    if let Some(mode) = args.mode {
        scn.config.mode = mode;
    }
    let res = run_ensemble(
        &scn.detectors,
        &scn.grid,
        &scn.field,
        scn.config.seed,
        scn.config.realizations,
        scn.config.mode,
    )
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    let mut out = Artifacts::new(&args.out);
    for k in 0..res.realizations.len() {
        out.write(
            &format!("realizations/realization_{k:05}.csv"),
            scenario::realization_csv(&res, k).as_bytes(),
        )
        .map_err(io)?;
    }
    out.write("aggregate.csv", scenario::aggregate_csv(&res).as_bytes())
        .map_err(io)?;
    let manifest = json!({
        "schema_version": scenario::SCHEMA_VERSION,
        "tool": "worldline",
        "version": scenario::tool_version(),
        "config": scn.config,
        "config_hash": res.config_hash,
        "covariance_fingerprint": res.covariance_fingerprint,
        "integrator": res.integrator,
        "warnings": res.warnings,
        "streams": res.realizations.iter().map(|r| r.stream).collect::<Vec<_>>(),
        "files": out.files(),
    });
    write(
        &args.out.join(scenario::MANIFEST),
        &(serde_json::to_string_pretty(&manifest).unwrap_or_default() + "\n"),
    )?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    Ok(true)
}

fn report(checks: &[scenario::Check]) -> bool {
    for c in checks {
        let verdict = match c.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        let detail = match (c.value, c.tolerance) {
            (Some(v), Some(t)) => format!("{v:.3e} (tolerance {t:.3e})"),
            _ => c.note.clone().unwrap_or_default(),
        };
        println!("{verdict} {} {:?}: {detail}", c.name, c.detectors);
    }
    checks.iter().all(|c| c.passed != Some(false))
}

fn analyze(args: AnalyzeArgs) -> Result<bool, Failure> {
    let out = args.out.unwrap_or_else(|| args.dir.clone());
    let rep = scenario::analyze_run(&args.dir, &out).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(report(&rep.checks))
}

fn scenario_cmd(action: ScenarioAction) -> Result<bool, Failure> {
    match action {
        ScenarioAction::List => {
            for name in scenario::preset_names() {
                println!("{name}");
            }
            Ok(true)
        }
        ScenarioAction::Show { name } => {
            let src = scenario::preset_source(&name).ok_or_else(|| Failure::Config(format!("unknown preset `{name}`")))?;
            print!("{src}");
            Ok(true)
        }
        ScenarioAction::Run { target, out } => {
            let scn = scenario::resolve(&target).map_err(|e| Failure::Config(e.to_string()))?;
            let dir = out
                .or_else(|| scn.config.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(if scn.config.name.is_empty() { "scenario" } else { &scn.config.name }));
            let rep = scenario::run_scenario(&scn, &dir).map_err(|e| Failure::Runtime(e.to_string()))?;
            let ok = report(&rep.checks);
            println!("outputs in {}", rep.out_dir.display());
            Ok(ok)
        }
    }
}

fn plotdata(dir: PathBuf) -> Result<bool, Failure> {
    let written = scenario::emit_plotdata(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let outcome = match cli.command {
        Command::Kernel(a) => kernel(a),
        Command::Sample(a) => sample(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Scenario { action } => scenario_cmd(action),
        Command::Plotdata { dir } => plotdata(dir),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECKS_FAILED),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
