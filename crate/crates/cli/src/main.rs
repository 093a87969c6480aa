use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use stlcbf::scenario::{construct, simulate, verify_log, BarrierDocument, ScenarioConfig, ScenarioError, DEMO_CONFIG};
use stlcbf::sim::{read_signal_csv, SimOutcome, TrajectoryLog, VerifyReport};
use stlcbf::stl::{parse, robustness, StateLayout};

#[derive(Parser)]
#[command(name = "stlcbf", version, about = "Barrier-based control synthesis for multi-agent temporal logic tasks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline parameter search and write the barrier document.
    Construct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "barrier.json")]
        out: PathBuf,
    },
    /// Simulate the team and write trajectory.csv and trajectory.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        barrier: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Check a logged run; exit 0 iff every clique passes.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        barrier: PathBuf,
        /// Also write the report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Robustness of a formula on a CSV signal with `t` and `x{agent}_{component}` columns.
    Monitor {
        /// Formula text, or `@path` to read it from a file.
        #[arg(long)]
        formula: String,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Construct, simulate and verify the bundled four-agent scenario.
    Demo {
        #[arg(long, default_value = "demo-out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
    fn internal(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Config(_) | ScenarioError::Formula { .. } | ScenarioError::Toml(_) | ScenarioError::HashMismatch { .. } => 2,
            ScenarioError::Infeasible(_) => 1,
            _ => 3,
        };
        Self { code, msg: e.to_string() }
    }
}

type Outcome = Result<bool, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    serde_json::to_vec_pretty(v).map_err(|e| Failure::internal(e.to_string()))
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    Ok(ScenarioConfig::from_toml(&read(path)?)?)
}

fn load_doc(path: &Path) -> Result<BarrierDocument, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn run_construct(cfg: &ScenarioConfig, out: &Path) -> Result<BarrierDocument, Failure> {
    let doc = construct(cfg)?;
    write(out, &to_json(&doc)?)?;
    for c in &doc.cliques {
        if c.feasible {
            println!("clique {}: r* = {:.6}  kappa = {:.4}  eta = {}", c.clique, c.r_star, c.kappa, c.eta);
        } else {
            println!("clique {}: infeasible", c.clique);
        }
    }
    Ok(doc)
}

fn run_simulate(cfg: &ScenarioConfig, doc: &BarrierDocument, seed: Option<u64>, dt: Option<f64>, out_dir: &Path) -> Result<(SimOutcome, Option<VerifyReport>), Failure> {
    fs::create_dir_all(out_dir).map_err(|e| Failure::usage(format!("{}: {e}", out_dir.display())))?;
    let start = Instant::now();
    let out = simulate(cfg, doc, seed, dt)?;
    let elapsed = start.elapsed();
    let mut csv = Vec::new();
    out.log.write_csv(&mut csv).map_err(|e| Failure::internal(e.to_string()))?;
    write(&out_dir.join("trajectory.csv"), &csv)?;
    write(&out_dir.join("trajectory.json"), &to_json(&out.log)?)?;

    let report = match &out.error {
        None => Some(verify_log(cfg, doc, &out.log)?),
        Some(e) => {
            eprintln!("simulation stopped early: {e}");
            None
        }
    };
    let mut line = String::new();
    for (k, id) in out.log.cliques.iter().enumerate() {
        line.push_str(&format!("clique {id}: min b = {:.6}", out.log.min_barrier(k)));
        if let Some(v) = report.as_ref().and_then(|r| r.cliques.get(k)) {
            line.push_str(&format!(", rho = {:.6}", v.robustness));
        }
        line.push_str("; ");
    }
    println!("{line}runtime = {:.3} s", elapsed.as_secs_f64());
    Ok((out, report))
}

fn print_report(report: &VerifyReport) {
    for c in &report.cliques {
        println!(
            "clique {}: {}  min b = {:.6}  rho = {:.6}  r* = {:.6}  tol_rho = {:.6}",
            c.clique,
            if c.pass { "pass" } else { "FAIL" },
            c.min_barrier,
            c.robustness,
            c.r_star,
            c.tol_rho
        );
    }
    if !report.complete {
        println!("log is incomplete");
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Construct { config, out } => {
            let cfg = load_config(&config)?;
            Ok(run_construct(&cfg, &out)?.feasible())
        }
        Command::Simulate { config, barrier, seed, dt, out_dir } => {
            let cfg = load_config(&config)?;
            let doc = load_doc(&barrier)?;
            let (out, _) = run_simulate(&cfg, &doc, seed, dt, &out_dir)?;
            Ok(out.error.is_none())
        }
        Command::Verify { log, config, barrier, report } => {
            let cfg = load_config(&config)?;
            let doc = load_doc(&barrier)?;
            let log: TrajectoryLog = serde_json::from_str(&read(&log)?).map_err(|e| Failure::usage(format!("{}: {e}", log.display())))?;
            let rep = verify_log(&cfg, &doc, &log)?;
            print_report(&rep);
            if let Some(p) = report {
                write(&p, &to_json(&rep)?)?;
            }
            Ok(rep.pass)
        }
        Command::Monitor { formula, signal, t } => {
            let text = match formula.strip_prefix('@') {
                Some(p) => read(Path::new(p))?,
                None => formula,
            };
            let file = fs::File::open(&signal).map_err(|e| Failure::usage(format!("{}: {e}", signal.display())))?;
            let (agents, sig) = read_signal_csv(file).map_err(|e| Failure::usage(e.to_string()))?;
            let layout = StateLayout::new(&agents).map_err(|e| Failure::usage(e.to_string()))?;
            let f = parse(&text, &layout).map_err(|e| Failure::usage(e.to_string()))?;
            let rho = robustness(&f, &sig, t).map_err(|e| Failure::usage(e.to_string()))?;
            println!("{rho}");
            Ok(true)
        }
        Command::Demo { out_dir, seed, dt } => {
            fs::create_dir_all(&out_dir).map_err(|e| Failure::usage(format!("{}: {e}", out_dir.display())))?;
            let cfg = ScenarioConfig::from_toml(DEMO_CONFIG)?;
            write(&out_dir.join("config.toml"), DEMO_CONFIG.as_bytes())?;
            let doc = run_construct(&cfg, &out_dir.join("barrier.json"))?;
            if !doc.feasible() {
                return Ok(false);
            }
            let (_, report) = run_simulate(&cfg, &doc, seed, dt, &out_dir)?;
            match report {
                Some(r) => {
                    print_report(&r);
                    write(&out_dir.join("report.json"), &to_json(&r)?)?;
                    Ok(r.pass)
                }
                None => Ok(false),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
