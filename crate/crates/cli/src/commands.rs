use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgtrade_core::blindsig::BlindKeyPair;
use kgtrade_core::kg::{compute_statistics, read_ntriples_file, KnowledgeGraph, STATISTIC_NAMES};
use kgtrade_core::leak::AdversaryModel;
use kgtrade_core::net::{accept_tcp, accept_tls, connect_tcp, connect_tls, tls_client_config, tls_server_config, NetError};
use kgtrade_core::protocol::{
    run_buyer, run_seller, BuyerOptions, BuyerOutcome, ConfigError, Decider, SellerOptions, SellerSecrets,
    VerifyMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::bench::{run_bench, BenchOptions};
use crate::config_file::{RunFile, RunFileError, ScriptedDecider};
use crate::prompt::PromptDecider;
use crate::report::{exit, timing, RunReport, Verification};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    RunFile(#[from] RunFileError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::RunFile(_) => exit::USAGE,
            CliError::Net(_) | CliError::Io { .. } => exit::IO,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "kgtrade", version, about = "Evaluate a knowledge-graph purchase without revealing either graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve one session as the Seller.
    Seller(SellerArgs),
    /// Run one session as the Buyer.
    Buyer(BuyerArgs),
    /// Scaling benchmark over synthetic graph pairs.
    Bench(BenchArgs),
    /// Print the statistics catalog of a graph.
    Stats(StatsArgs),
}

/// Session parameters: a run file, then flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Run file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Entropy metrics, comma separated ("none" disables the entropy step).
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long)]
    pub buy: Option<usize>,
    /// Intersection filter false-positive rate.
    #[arg(long)]
    pub fpr: Option<f64>,
    /// Counting filter false-positive rate.
    #[arg(long)]
    pub counting_fpr: Option<f64>,
    /// Most blind signatures the Seller will issue.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Predicate IRIs removed from both graphs, comma separated.
    #[arg(long)]
    pub exclude: Option<String>,
    #[arg(long)]
    pub decoys: Option<usize>,
    #[arg(long)]
    pub modulus_bits: Option<usize>,
    /// 32 hex digits.
    #[arg(long)]
    pub psi_seed: Option<String>,
    /// 32 hex digits.
    #[arg(long)]
    pub counting_seed: Option<String>,
    #[arg(long)]
    pub psi_noise: Option<f64>,
    /// Partition strategy.
    #[arg(long)]
    pub partition: Option<String>,
    /// Any run-file key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunFile, CliError> {
        let mut file = match &self.config {
            Some(path) => RunFile::load(path)?,
            None => RunFile::default(),
        };
        let overrides: [(&str, Option<String>); 13] = [
            ("metrics", self.metrics.clone()),
            ("parts", self.parts.map(|v| v.to_string())),
            ("buy", self.buy.map(|v| v.to_string())),
            ("psi_fpr", self.fpr.map(|v| v.to_string())),
            ("counting_fpr", self.counting_fpr.map(|v| v.to_string())),
            ("signature_budget", self.budget.map(|v| v.to_string())),
            ("excluded_predicates", self.exclude.clone()),
            ("decoy_count", self.decoys.map(|v| v.to_string())),
            ("modulus_bits", self.modulus_bits.map(|v| v.to_string())),
            ("psi_seed", self.psi_seed.clone()),
            ("counting_seed", self.counting_seed.clone()),
            ("psi_noise", self.psi_noise.map(|v| v.to_string())),
            ("partition", self.partition.clone()),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                file.set(key, &value)?;
            }
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            file.set(key.trim(), value)?;
        }
        file.session.validate()?;
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Fair,
    Curious,
    Malicious,
}

impl From<ModelArg> for AdversaryModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Fair => AdversaryModel::Fair,
            ModelArg::Curious => AdversaryModel::Curious,
            ModelArg::Malicious => AdversaryModel::Malicious,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// N-Triples file holding this party's graph.
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Ask before every step instead of reading decisions from the run file.
    #[arg(long)]
    pub interactive: bool,
    /// Threads for signing and hashing.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Adversary model the leak ledger accounts under.
    #[arg(long, value_enum, default_value_t = ModelArg::Curious)]
    pub model: ModelArg,
    /// Fixes every random choice. For testing only: keys become predictable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Leave wall times and memory out of the report.
    #[arg(long)]
    pub omit_timing: bool,
    /// PEM certificate chain presented to the peer (enables TLS).
    #[arg(long, requires = "key")]
    pub cert: Option<PathBuf>,
    /// PEM private key for `--cert`.
    #[arg(long, requires = "cert")]
    pub key: Option<PathBuf>,
    /// PEM CA bundle used to authenticate the peer (enables TLS).
    #[arg(long)]
    pub ca: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SellerArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Address to accept the Buyer on.
    #[arg(long)]
    pub listen: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyArg {
    Exact,
    Fast,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct BuyerArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Seller address.
    #[arg(long)]
    pub connect: String,
    /// Name expected in the Seller certificate.
    #[arg(long, default_value = "localhost")]
    pub server_name: String,
    /// Check the Seller's disclosure after the session.
    #[arg(long, value_enum, default_value_t = VerifyArg::Exact)]
    pub verify: VerifyArg,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Statements per party, comma separated.
    #[arg(long, default_value = "1000,2000,4000,8000", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Fraction of statements both parties hold.
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also account the same exchange without any protection.
    #[arg(long)]
    pub plain_baseline: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub omit_timing: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub graph: PathBuf,
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, CliError> {
    let parsed = read_ntriples_file(path).map_err(|e| CliError::Usage(format!("graph {}: {e}", path.display())))?;
    if parsed.blank_node_lines > 0 {
        eprintln!("skipped {} statements with blank nodes", parsed.blank_node_lines);
    }
    Ok(parsed.graph)
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn rng_for(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn decider(args: &SessionArgs, file: &RunFile) -> Box<dyn Decider> {
    if args.interactive {
        Box::new(PromptDecider::new(BufReader::new(io::stdin()), io::stderr()))
    } else {
        Box::new(ScriptedDecider::new(file.decisions.clone()))
    }
}

fn emit(json: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, json).map_err(io_err(format!("writing {}", p.display()))),
        None => io::stdout().write_all(json.as_bytes()).map_err(io_err("writing report")),
    }
}

pub fn cmd_seller(args: &SellerArgs) -> Result<i32, CliError> {
    let s = &args.session;
    let file = s.config.resolve()?;
    let config = file.session.clone();
    let graph = load_graph(&s.graph)?;
    let tls = match (&s.cert, &s.key) {
        (Some(cert), Some(key)) => {
            let ca = s.ca.as_deref().map(read_file).transpose()?;
            Some(tls_server_config(&read_file(cert)?, &read_file(key)?, ca.as_deref())?)
        }
        _ if s.ca.is_some() => return Err(CliError::Usage("the Seller needs --cert and --key for TLS".into())),
        _ => None,
    };
    let secrets = SellerSecrets::generate(config.modulus_bits, &mut rng_for(s.seed))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let listener = TcpListener::bind(&args.listen).map_err(io_err(format!("binding {}", args.listen)))?;
    let addr = listener.local_addr().map_err(io_err("reading the bound address"))?;
    eprintln!("listening on {addr}");

    let mut decider = decider(s, &file);
    let options = SellerOptions {
        workers: s.workers,
        model: s.model.into(),
        tamper: None,
    };
    let started = Instant::now();
    let outcome = match tls {
        Some(tls) => run_seller(&config, &graph, &secrets, accept_tls(&listener, tls)?, &mut *decider, &options),
        None => run_seller(&config, &graph, &secrets, accept_tcp(&listener)?, &mut *decider, &options),
    };
    let elapsed = started.elapsed();
    eprintln!("session {}", outcome.state);
    let statements = graph.without_predicates(&config.excluded_predicates).len();
    let mut report = RunReport::seller(&config, statements, &outcome);
    if !s.omit_timing {
        report.timing = Some(timing(&outcome.step_times, elapsed));
    }
    emit(&report.to_json(), s.report.as_deref())?;
    Ok(report.exit_code())
}

fn verification(outcome: &BuyerOutcome, mode: VerifyArg, workers: usize) -> Option<Verification> {
    let mode = match mode {
        VerifyArg::Exact => VerifyMode::Exact,
        VerifyArg::Fast => VerifyMode::Fast,
        VerifyArg::None => return None,
    };
    if !outcome.state.is_closed() {
        return None;
    }
    Some(match outcome.verify(mode, workers) {
        Ok(report) => {
            for failure in report.failures() {
                eprintln!("verification failed: {} ({})", failure.name, failure.evidence);
            }
            Verification {
                passed: report.passed(),
                error: None,
                report: Some(report),
            }
        }
        Err(e) => {
            eprintln!("verification failed: {e}");
            Verification {
                passed: false,
                error: Some(e.to_string()),
                report: None,
            }
        }
    })
}

pub fn cmd_buyer(args: &BuyerArgs) -> Result<i32, CliError> {
    let s = &args.session;
    let file = s.config.resolve()?;
    let config = file.session.clone();
    let graph = load_graph(&s.graph)?;
    let tls = match &s.ca {
        Some(ca) => {
            let identity = match (&s.cert, &s.key) {
                (Some(c), Some(k)) => Some((read_file(c)?, read_file(k)?)),
                _ => None,
            };
            let identity = identity.as_ref().map(|(c, k)| (c.as_slice(), k.as_slice()));
            Some(tls_client_config(&read_file(ca)?, identity)?)
        }
        None if s.cert.is_some() => return Err(CliError::Usage("the Buyer needs --ca to use TLS".into())),
        None => None,
    };

    let mut decider = decider(s, &file);
    let options = BuyerOptions {
        workers: s.workers,
        model: s.model.into(),
        seed: s.seed,
    };
    let started = Instant::now();
    let outcome = match tls {
        Some(tls) => run_buyer(
            &config,
            &graph,
            connect_tls(args.connect.as_str(), &args.server_name, tls)?,
            &mut *decider,
            &options,
        ),
        None => run_buyer(&config, &graph, connect_tcp(args.connect.as_str())?, &mut *decider, &options),
    };
    let elapsed = started.elapsed();
    eprintln!("session {}", outcome.state);
    if let Some(detail) = &outcome.abort_detail {
        eprintln!("  {detail}");
    }
    let verification = verification(&outcome, args.verify, s.workers);
    let mut report = RunReport::buyer(&outcome, verification);
    if !s.omit_timing {
        report.timing = Some(timing(&outcome.step_times, elapsed));
    }
    emit(&report.to_json(), s.report.as_deref())?;
    Ok(report.exit_code())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32, CliError> {
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(CliError::Usage("--sizes needs positive statement counts".into()));
    }
    if !(0.0..=1.0).contains(&args.overlap) {
        return Err(CliError::Usage("--overlap must lie in [0, 1]".into()));
    }
    let config = args.config.resolve()?.session;
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let keygen = |rng: &mut ChaCha20Rng| {
        BlindKeyPair::generate(config.modulus_bits, rng).map_err(|e| CliError::Usage(e.to_string()))
    };
    let keys = (keygen(&mut rng)?, keygen(&mut rng)?);
    let options = BenchOptions {
        sizes: args.sizes.clone(),
        trials: args.trials,
        overlap: args.overlap,
        seed: args.seed,
        workers: args.workers,
        plain_baseline: args.plain_baseline,
        omit_timing: args.omit_timing,
        config,
    };
    let report = run_bench(&options, &keys);
    eprint!("{}", report.table());
    emit(&report.to_json(), args.report.as_deref())?;
    Ok(exit::OK)
}

pub fn cmd_stats(args: &StatsArgs) -> Result<i32, CliError> {
    let graph = load_graph(&args.graph)?;
    let stats = compute_statistics(&graph);
    let mut out = String::new();
    for (name, value) in STATISTIC_NAMES.iter().zip(stats.values()) {
        out += &format!("{name:<34} {value}\n");
    }
    io::stdout().write_all(out.as_bytes()).map_err(io_err("writing statistics"))?;
    Ok(exit::OK)
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Seller(a) => cmd_seller(a),
        Command::Buyer(a) => cmd_buyer(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Stats(a) => cmd_stats(a),
    }
}
