mod config;
mod serve;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::GlobalConfig;

/// Automated transfer, analysis and publication of microscopy data.
#[derive(Debug, Parser)]
#[command(name = "picoflow", version)]
struct Cli {
    /// TOML config file; defaults to $PICOFLOW_CONFIG when set.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Watch a directory and run a flow for every new data file.
    Watch(WatchArgs),
    /// Run the checksummed transfer server.
    Transferd(TransferdArgs),
    /// Run the compute endpoint with its simulated node.
    Computed(ComputedArgs),
    /// Run the search catalog.
    Catalogd(CatalogdArgs),
    /// One-shot flows.
    #[command(subcommand)]
    Flow(FlowCommand),
    /// Analyze a file locally, without any service, and print the manifest.
    Analyze(AnalyzeArgs),
    /// Benchmark harness.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Synthesize a test .emdl file.
    Mkemdl(MkemdlArgs),
}

/// Stand up transfer, compute and catalog in-process on loopback ports
/// instead of using the configured service URLs.
#[derive(Debug, Clone, Args)]
pub struct LocalArgs {
    #[arg(long)]
    pub local: bool,
    /// Shared data root for the in-process services.
    #[arg(long, value_name = "DIR", requires = "local")]
    pub data_root: Option<PathBuf>,
    /// Simulated node provisioning delay in seconds for the in-process
    /// compute service.
    #[arg(long, value_name = "SECONDS", requires = "local")]
    pub provision_delay: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FlowClientArgs {
    /// Bearer token presented to the services.
    #[arg(long, value_name = "TOKEN")]
    pub token: Option<String>,
    /// Destination prefix on the transfer server.
    #[arg(long, value_name = "PREFIX")]
    pub dest_root: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct WatchArgs {
    #[arg(long, value_name = "DIR")]
    pub watch_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATTERN")]
    pub glob: Option<String>,
    /// Seconds a file size must stay unchanged before it triggers.
    #[arg(long, value_name = "SECONDS")]
    pub stability_window: Option<f64>,
    #[arg(long, value_name = "SECONDS")]
    pub poll_period: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub journal: Option<PathBuf>,
    /// JSON-lines log of terminal flow runs, input to `bench report`.
    #[arg(long, value_name = "PATH")]
    pub run_log: Option<PathBuf>,
    #[command(flatten)]
    pub client: FlowClientArgs,
    #[command(flatten)]
    pub local: LocalArgs,
}

/// Accepted bearer token, as TOKEN=PRINCIPAL. Replaces the config's token
/// table when given.
#[derive(Debug, Clone, Args)]
pub struct TokenArgs {
    #[arg(long = "token", value_name = "TOKEN=PRINCIPAL")]
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TransferdArgs {
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// Destination root; uploads land below it.
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub max_bytes_per_second: Option<u64>,
    #[command(flatten)]
    pub tokens: TokenArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ComputedArgs {
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// Root that task arguments are resolved against.
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    #[arg(long, value_name = "SECONDS")]
    pub provision_delay: Option<f64>,
    #[arg(long, value_name = "SECONDS")]
    pub idle_timeout: Option<f64>,
    #[command(flatten)]
    pub tokens: TokenArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CatalogdArgs {
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// JSON-lines record log.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Directory artifact paths in records are resolved against.
    #[arg(long, value_name = "DIR")]
    pub artifact_root: Option<PathBuf>,
    /// Static bundle served for paths outside the API.
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    /// Principal allowed to publish; repeatable. Defaults to every principal
    /// in the token table.
    #[arg(long = "publisher", value_name = "PRINCIPAL")]
    pub publishers: Vec<String>,
    /// Send permissive CORS headers.
    #[arg(long)]
    pub cors: bool,
    #[command(flatten)]
    pub tokens: TokenArgs,
}

#[derive(Debug, Subcommand)]
enum FlowCommand {
    /// Run one flow for FILE and print the terminal run as JSON.
    Run(FlowRunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FlowRunArgs {
    pub file: PathBuf,
    /// Also append the run to this log.
    #[arg(long, value_name = "PATH")]
    pub run_log: Option<PathBuf>,
    #[command(flatten)]
    pub client: FlowClientArgs,
    #[command(flatten)]
    pub local: LocalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub file: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Drop copies of a template file into a directory at a fixed period.
    Generate(GenerateArgs),
    /// Aggregate a run log into a metrics report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub dest: Option<PathBuf>,
    #[arg(long, value_name = "SECONDS")]
    pub period: Option<f64>,
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Copy the template byte-for-byte under its own name every time.
    #[arg(long)]
    pub same_name: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "PATH")]
    pub run_log: Option<PathBuf>,
    /// Start period in seconds; inferred from flow start times when absent.
    #[arg(long, value_name = "SECONDS")]
    pub start_period: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "PATH")]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Hyperspectral,
    Spatiotemporal,
}

#[derive(Debug, Clone, Args)]
pub struct MkemdlArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// W,H,E for hyperspectral or T,H,W for spatiotemporal.
    #[arg(long, value_name = "A,B,C")]
    pub shape: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Planted blobs per frame (spatiotemporal).
    #[arg(long, value_name = "K")]
    pub blobs: Option<usize>,
    #[arg(long, value_name = "ISO8601")]
    pub datetime: Option<String>,
    /// Write the planted boxes per frame as JSON (spatiotemporal).
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
}

/// Bad flags or configuration; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = GlobalConfig::resolve(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    match cli.command {
        Command::Analyze(args) => tools::analyze(&args),
        Command::Mkemdl(args) => tools::mkemdl(&args),
        Command::Bench(BenchCommand::Report(args)) => tools::bench_report(&config, &args),
        Command::Bench(BenchCommand::Generate(args)) => tools::bench_generate(&config, &args),
        Command::Watch(args) => runtime()?.block_on(serve::watch(&config, &args)),
        Command::Transferd(args) => runtime()?.block_on(serve::transferd(&config, &args)),
        Command::Computed(args) => runtime()?.block_on(serve::computed(&config, &args)),
        Command::Catalogd(args) => runtime()?.block_on(serve::catalogd(&config, &args)),
        Command::Flow(FlowCommand::Run(args)) => runtime()?.block_on(serve::flow_run(&config, &args)),
    }
}

/// Prints machine output. A closed stdout (`picoflow ... | head`) is not an
/// error worth reporting.
pub fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
