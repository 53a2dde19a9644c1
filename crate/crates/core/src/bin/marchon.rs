use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, warn};

use marchon::bregman::MirrorKind;
use marchon::engine::EngineError;
use marchon::experiment::{compare, run_single, Experiment, ExperimentConfig, ExperimentError, MethodConfig};
use marchon::graph::{build_topology, transition, validate_chain, Topology, Weighting};
use marchon::losses::LossKind;
use marchon::schedules::ScheduleKind;
use marchon::spectral::spectral_report;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "marchon", version, about = "Markov-chain mirror descent over a data federation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the spectral constants of a walk on a generated topology.
    Spectrum(SpectrumArgs),
    /// Run a single (method, seed) cell and write its trace.
    Run(ExperimentArgs),
    /// Run every (method, seed) cell and write traces plus a summary.
    Compare(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Complete,
    Star,
    Er,
    Ws,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Metropolis,
    Simple,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    LogisticLiteral,
    Ridge,
    Lsq,
    Nonconvex,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Euclidean,
    Entropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Marchon,
    MarchonConvex,
    MarchonStronglyConvex,
    MarchonNonconvex,
    Mcgd,
    MarkovSgd,
    McsgdEmd,
}

#[derive(Args, Clone)]
struct GraphArgs {
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability for `er`.
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    /// Ring-lattice degree for `ws`.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Rewiring probability for `ws`.
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
}

impl GraphArgs {
    fn topology(&self) -> Option<Topology> {
        self.topology.map(|t| match t {
            TopologyArg::Complete => Topology::Complete,
            TopologyArg::Star => Topology::Star,
            TopologyArg::Er => Topology::ErdosRenyi { p: self.p },
            TopologyArg::Ws => Topology::WattsStrogatz { k: self.k, beta: self.beta },
        })
    }

    fn weighting(&self) -> Option<Weighting> {
        self.weighting.map(|w| match w {
            WeightingArg::Metropolis => Weighting::Metropolis,
            WeightingArg::Simple => Weighting::SimpleRandomWalk,
        })
    }
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Seed for random topologies.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Regularisation weight for `ridge` and `nonconvex`.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, value_enum)]
    map: Option<MapArg>,
    /// Method(s) to run; repeat for several.
    #[arg(long, value_enum)]
    method: Vec<MethodArg>,
    /// Exponent for `mcgd`.
    #[arg(long, default_value_t = 0.75)]
    q: f64,
    /// Common first step size.
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long = "T")]
    horizon_t: Option<u64>,
    /// Number of seeds, starting at `--seed`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self, single: bool) -> Result<ExperimentConfig, ExperimentError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.graph.topology() {
            c.topology = t;
        }
        if let Some(n) = self.graph.n {
            c.n = n;
        }
        if let Some(w) = self.graph.weighting() {
            c.weighting = w;
        }
        if let Some(l) = self.loss {
            c.loss = match l {
                LossArg::Logistic => LossKind::LogisticLog,
                LossArg::LogisticLiteral => LossKind::LogisticLiteral,
                LossArg::Ridge => LossKind::RidgeLogistic { lambda: self.lambda },
                LossArg::Lsq => LossKind::LeastSquares,
                LossArg::Nonconvex => LossKind::NonconvexLogistic { lambda: self.lambda },
            };
        }
        if let Some(m) = self.map {
            c.map = match m {
                MapArg::Euclidean => MirrorKind::SquaredEuclidean,
                MapArg::Entropy => MirrorKind::NegativeEntropy,
            };
        }
        if !self.method.is_empty() {
            c.methods = self
                .method
                .iter()
                .map(|m| {
                    MethodConfig::new(match m {
                        MethodArg::Marchon => ScheduleKind::Marchon,
                        MethodArg::MarchonConvex => ScheduleKind::MarchonConvex,
                        MethodArg::MarchonStronglyConvex => ScheduleKind::MarchonStronglyConvex,
                        MethodArg::MarchonNonconvex => ScheduleKind::MarchonNonconvex,
                        MethodArg::Mcgd => ScheduleKind::Mcgd { q: self.q },
                        MethodArg::MarkovSgd => ScheduleKind::MarkovSgd,
                        MethodArg::McsgdEmd => ScheduleKind::McsgdEmd,
                    })
                })
                .collect();
        }
        if let Some(e) = self.eta1 {
            c.eta1 = e;
        }
        if let Some(t) = self.horizon_t {
            c.horizon_t = t;
        }
        match (self.seeds, self.seed) {
            (Some(k), s) => {
                let base = s.unwrap_or(0);
                c.seeds = (base..base + k).collect();
            }
            (None, Some(s)) => c.seeds = vec![s],
            (None, None) => {}
        }
        if single {
            c.seeds.truncate(1);
            c.methods.truncate(1);
        }
        if let Some(s) = self.stride {
            c.stride = Some(s);
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) {
    if let Err(e) = writeln!(io::stdout().lock(), "{text}") {
        if e.kind() != io::ErrorKind::BrokenPipe {
            warn!("stdout: {e}");
        }
    }
}

fn spectrum(args: &SpectrumArgs) -> ExitCode {
    let (Some(topology), Some(n)) = (args.graph.topology(), args.graph.n) else {
        eprintln!("error: spectrum needs --topology and --n");
        return ExitCode::from(EXIT_USAGE);
    };
    let weighting = args.graph.weighting().unwrap_or(Weighting::Metropolis);
    let graph = match build_topology(topology, n, args.seed) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let p = match transition(&graph, weighting) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let report = match spectral_report(&p) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let check = validate_chain(&p);
    let mut doc = report.to_json();
    let obj = doc.as_object_mut().expect("report is an object");
    obj.insert("topology".into(), serde_json::to_value(topology).unwrap());
    obj.insert("n".into(), n.into());
    obj.insert("weighting".into(), serde_json::to_value(weighting).unwrap());
    obj.insert("graph_seed".into(), graph.seed().into());
    obj.insert("edges".into(), graph.edge_count().into());
    obj.insert("slem".into(), report.slem().into());
    obj.insert("one_over_n".into(), (1.0 / n as f64).into());
    obj.insert("irreducible".into(), check.irreducible.into());
    obj.insert("aperiodic".into(), check.aperiodic.into());
    obj.insert("uniform_stationary".into(), check.uniform_stationary.into());
    let text = serde_json::to_string_pretty(&doc).unwrap();
    emit(&text);
    if let Some(path) = &args.out {
        if let Err(e) = std::fs::write(path, format!("{text}\n")) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    ExitCode::SUCCESS
}

fn failure(e: &ExperimentError) -> ExitCode {
    error!("{e}");
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_error() { EXIT_USAGE } else { EXIT_FAILURE })
}

fn run_cmd(args: &ExperimentArgs) -> ExitCode {
    let exp = match args.resolve(true).and_then(Experiment::resolve) {
        Ok(e) => e,
        Err(e) => return failure(&e),
    };
    match run_single(&exp) {
        Ok((path, trace)) => {
            emit(&format!(
                "{}: f(x_bar) - f* = {:.6e}, f(x_T) = {:.6e} ({} steps)",
                path.display(),
                trace.f_x_bar - exp.f_star,
                trace.f_final,
                trace.horizon_t
            ));
            ExitCode::SUCCESS
        }
        Err(ExperimentError::Engine(e @ EngineError::Divergence { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => failure(&e),
    }
}

fn compare_cmd(args: &ExperimentArgs) -> ExitCode {
    let exp = match args.resolve(false).and_then(Experiment::resolve) {
        Ok(e) => e,
        Err(e) => return failure(&e),
    };
    match compare(&exp, args.jobs) {
        Ok(summary) => {
            let mut table = String::from("method,T,mean_suboptimality,std,mean_grad_sq,diverged");
            for s in &summary {
                if s.diverged > 0 {
                    warn!("{}: {} of {} runs diverged", s.method, s.diverged, s.diverged + s.completed);
                }
                table.push_str(&format!(
                    "\n{},{},{:.6e},{:.6e},{:.6e},{}",
                    s.method, s.horizon_t, s.mean_suboptimality, s.std, s.mean_grad_sq, s.diverged
                ));
            }
            emit(&table);
            ExitCode::SUCCESS
        }
        Err(e) => failure(&e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Spectrum(a) => spectrum(a),
        Command::Run(a) => run_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}
