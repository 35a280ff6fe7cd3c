use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rbm_core::generation::Range;
use rbm_core::{BasisMode, Parameter, Preset, Strategy};

#[derive(Debug, Parser)]
#[command(name = "rbm", version, about = "Reduced-basis simulation middleware")]
pub struct Cli {
    /// Directory holding basis files.
    #[arg(long, global = true, env = "RBM_STORE_DIR", default_value = "rbm-store")]
    pub store: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a basis locally or on a remote server.
    Generate(GenerateArgs),
    /// Run the basis server, optionally with a query middleware in front.
    Serve(ServeArgs),
    /// Answer one query from a stored basis.
    Query(QueryArgs),
    /// Desk-scale experiments written as CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Print the header and section table of a basis file.
    Inspect { file: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Greedy,
    Reorder,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Preset training box; ignored when all three ranges are given.
    #[arg(long, default_value = "A", value_parser = parse_preset)]
    pub preset: Preset,

    #[arg(long, default_value_t = 4.0)]
    pub step: f64,

    /// `min:max:step` for the diffusion coefficient.
    #[arg(long, value_parser = parse_range, requires_all = ["advx", "advy"])]
    pub diff: Option<Range>,

    #[arg(long, value_parser = parse_range, requires_all = ["diff", "advy"])]
    pub advx: Option<Range>,

    #[arg(long, value_parser = parse_range, requires_all = ["diff", "advx"])]
    pub advy: Option<Range>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub training: TrainingArgs,

    #[arg(long, short = 'd', default_value_t = 32)]
    pub discretization: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub max_res: f64,

    #[arg(long, value_enum, default_value_t = Method::Greedy)]
    pub method: Method,

    /// Spare snapshots for reorder generation.
    #[arg(long, short = 'a', default_value_t = 3)]
    pub a: usize,

    #[arg(long, default_value = "orthonormal", value_parser = parse_mode)]
    pub mode: BasisMode,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Submit to this server instead of generating in-process.
    #[arg(long)]
    pub server: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,

    /// Concurrent generation jobs.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,

    /// Also serve `POST /query` and `GET /events` for this basis.
    #[arg(long)]
    pub client_basis: Option<String>,

    #[arg(long, default_value = "adaptive", value_parser = parse_strategy)]
    pub strategy: Strategy,

    /// Default residual threshold for queries.
    #[arg(long)]
    pub max_res: Option<f64>,

    /// Allow per-query strategy overrides.
    #[arg(long)]
    pub allow_override: bool,

    /// Run only the query middleware, backed by this remote server.
    #[arg(long, requires = "client_basis")]
    pub upstream: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Basis identifier in the store.
    #[arg(long)]
    pub basis: String,

    /// `diff,advx,advy`.
    #[arg(long, value_parser = parse_parameter)]
    pub mu: Parameter,

    #[arg(long, default_value = "basic", value_parser = parse_strategy)]
    pub strategy: Strategy,

    #[arg(long)]
    pub max_res: Option<f64>,

    /// Server for adaptive updates.
    #[arg(long)]
    pub server: Option<String>,

    /// Write the field as CSV grid rows.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Presets to run; all when omitted.
    #[arg(long = "preset", value_parser = parse_preset)]
    pub presets: Vec<Preset>,

    #[arg(long, short = 'd', default_value_t = rbm_core::bench::DESK_DISCRETIZATION)]
    pub discretization: usize,

    #[arg(long, default_value_t = rbm_core::bench::DESK_STEP)]
    pub step: f64,

    #[arg(long, default_value_t = rbm_core::bench::DESK_MAX_RES)]
    pub max_res: f64,

    #[arg(long, default_value_t = rbm_core::bench::DESK_TEST_SIZE)]
    pub test_size: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, short = 'a', default_value_t = 3)]
    pub a: usize,

    /// CSV destination; stdout when omitted.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Maximum test residual for every prefix of the greedy basis.
    Quality(BenchArgs),
    /// Snapshots needed per query by basic, subspace and reorder.
    Snapshots {
        #[command(flatten)]
        common: BenchArgs,
        /// Also write every per-query `m` here.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Storage and transfer bytes per strategy.
    Bytes {
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
        discretizations: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 5, 10, 20, 40])]
        sizes: Vec<usize>,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: rbm_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<BasisMode, String> {
    s.parse().map_err(|e: rbm_core::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: rbm_core::Error| e.to_string())
}

fn numbers(s: &str, sep: char, count: usize) -> Result<Vec<f64>, String> {
    let values = s
        .split(sep)
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != count {
        return Err(format!("expected {count} values separated by {sep:?}"));
    }
    Ok(values)
}

pub fn parse_range(s: &str) -> Result<Range, String> {
    let v = numbers(s, ':', 3)?;
    Range::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

pub fn parse_parameter(s: &str) -> Result<Parameter, String> {
    let v = numbers(s, ',', 3)?;
    Parameter::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_range("10:20:1").unwrap().points().len(), 11);
        assert!(parse_range("20:10:1").is_err());
        assert!(parse_range("1:2").is_err());
        assert_eq!(parse_parameter("15, 10,-3").unwrap().advy, -3.0);
        assert!(parse_parameter("-1,0,0").is_err());
    }
}
