mod args;

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use rbm_core::bench::{bench_bytes, bench_quality, bench_snapshot_counts, BenchSpec};
use rbm_core::server::{JobStatus, ServerConfig};
use rbm_core::store::{BasisReader, BasisStore};
use rbm_core::{
    BasisRequest, BasisServer, ClientConfig, GenerationMethod, LocalChannel, Middleware, Preset, QualitySpec, Query,
    ServerChannel, TrainingSpec,
};
use rbm_net::basis_api::JobCreated;
use rbm_net::HttpChannel;
use serde::Serialize;

use args::{BenchArgs, BenchCommand, Cli, Command, GenerateArgs, Method, QueryArgs, ServeArgs};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => generate(&cli.store, args),
        Command::Serve(args) => serve(&cli.store, args),
        Command::Query(args) => query(&cli.store, args),
        Command::Bench(cmd) => bench(cmd),
        Command::Inspect { file } => inspect(&file),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn generate(store: &Path, args: GenerateArgs) -> Result<()> {
    let t = &args.training;
    let training = match (&t.diff, &t.advx, &t.advy) {
        (Some(diff), Some(advx), Some(advy)) => TrainingSpec::Grid {
            diff: *diff,
            advx: *advx,
            advy: *advy,
        },
        _ => TrainingSpec::preset(t.preset, t.step),
    };
    let request = BasisRequest {
        training,
        quality: QualitySpec::new(args.discretization, args.max_res)?,
        method: match args.method {
            Method::Greedy => GenerationMethod::Greedy,
            Method::Reorder => GenerationMethod::Reorder { a: args.a },
        },
        mode: args.mode,
        seed: args.seed,
    };
    let status = match &args.server {
        Some(url) => generate_remote(url, &request)?,
        None => {
            let server = BasisServer::new(BasisStore::open(store)?, ServerConfig::default())?;
            let job = server.submit(request)?;
            server.wait(job, Duration::MAX)?
        }
    };
    print_json(&status)?;
    if let JobStatus::Failed { error } = status {
        bail!("generation failed: {error}");
    }
    Ok(())
}

fn generate_remote(url: &str, request: &BasisRequest) -> Result<JobStatus> {
    let base = url.trim_end_matches('/');
    let JobCreated { job } = ureq::post(&format!("{base}/bases"))
        .send_json(request)
        .context("submitting generation job")?
        .into_json()?;
    log::info!("submitted job {job}");
    loop {
        let status: JobStatus = ureq::get(&format!("{base}/jobs/{job}")).call()?.into_json()?;
        if status.is_finished() {
            return Ok(status);
        }
        std::thread::sleep(Duration::from_millis(250));
    }
}

fn serve(store_dir: &Path, args: ServeArgs) -> Result<()> {
    let store = BasisStore::open(store_dir)?;
    let server = match args.upstream {
        Some(_) => None,
        None => Some(BasisServer::new(
            store.clone(),
            ServerConfig {
                workers: args.workers,
                ..ServerConfig::default()
            },
        )?),
    };
    let middleware = match &args.client_basis {
        Some(id) => {
            let channel: Arc<dyn ServerChannel> = match (&args.upstream, &server) {
                (Some(url), _) => Arc::new(HttpChannel::new(url)),
                (None, Some(server)) => Arc::new(LocalChannel(Arc::clone(server))),
                (None, None) => unreachable!("a server runs whenever there is no upstream"),
            };
            let config = ClientConfig {
                strategy: args.strategy,
                allow_override: args.allow_override,
                max_res: args.max_res,
            };
            let mw = Middleware::new(config, store, Some(channel));
            let report = mw.warm_setup(id)?;
            log::info!("client ready: {} snapshots, {} bytes read", report.n, report.bytes_read);
            Some(Arc::new(mw))
        }
        None => None,
    };
    let router = rbm_net::app(server, middleware);
    tokio::runtime::Runtime::new()?.block_on(rbm_net::serve(args.addr, router))?;
    Ok(())
}

#[derive(Serialize)]
struct QuerySummary {
    residual_norm: f64,
    threshold: f64,
    quality_met: bool,
    snapshots_used: usize,
    basis_size: usize,
    served_remotely: bool,
    metrics: rbm_core::strategies::QueryMetrics,
}

fn query(store_dir: &Path, args: QueryArgs) -> Result<()> {
    let channel = args
        .server
        .as_deref()
        .map(|url| Arc::new(HttpChannel::new(url)) as Arc<dyn ServerChannel>);
    let mut config = ClientConfig::new(args.strategy);
    config.max_res = args.max_res;
    let mw = Middleware::new(config, BasisStore::open(store_dir)?, channel);
    mw.warm_setup(&args.basis)?;
    let answer = mw.handle_query(&Query::new(args.mu))?;
    if let Some(path) = &args.output {
        let dd = mw.discretization().unwrap_or(0);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for row in answer.solution.as_slice().chunks(dd.max(1)) {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    print_json(&QuerySummary {
        residual_norm: answer.residual_norm,
        threshold: answer.threshold,
        quality_met: answer.quality_met,
        snapshots_used: answer.snapshots_used,
        basis_size: answer.basis_size,
        served_remotely: answer.served_remotely,
        metrics: answer.metrics,
    })
}

fn spec(args: &BenchArgs) -> BenchSpec {
    BenchSpec {
        presets: if args.presets.is_empty() {
            Preset::ALL.to_vec()
        } else {
            args.presets.clone()
        },
        discretization: args.discretization,
        step: args.step,
        max_res: args.max_res,
        test_size: args.test_size,
        seed: args.seed,
        a: args.a,
    }
}

/// Leading `#` lines record the configuration, then CSV rows.
fn write_csv<T: Serialize>(output: Option<&Path>, comments: &[String], rows: &[T]) -> Result<()> {
    let mut sink: Box<dyn Write> = match output {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    for line in comments {
        writeln!(sink, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row)?;
    }
    match w.flush() {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn spec_comments(spec: &BenchSpec) -> Vec<String> {
    let mut lines = vec![format!(
        "discretization={} step={} max_res={} test_size={} seed={} a={}",
        spec.discretization, spec.step, spec.max_res, spec.test_size, spec.seed, spec.a
    )];
    lines.extend(
        spec.presets
            .iter()
            .map(|&p| format!("preset={p:?} test_seed={}", spec.test_seed(p))),
    );
    lines
}

#[derive(Serialize)]
struct SampleRow<'a> {
    preset: Preset,
    strategy: &'a str,
    query: usize,
    m: usize,
}

fn bench(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Quality(args) => {
            let spec = spec(&args);
            let rows = bench_quality(&spec)?;
            write_csv(args.output.as_deref(), &spec_comments(&spec), &rows)
        }
        BenchCommand::Snapshots { common, samples } => {
            let spec = spec(&common);
            let counts = bench_snapshot_counts(&spec)?;
            if let Some(path) = samples {
                let rows: Vec<SampleRow> = counts
                    .samples
                    .iter()
                    .flat_map(|(preset, strategy, ms)| {
                        ms.iter().enumerate().map(move |(query, &m)| SampleRow {
                            preset: *preset,
                            strategy,
                            query,
                            m,
                        })
                    })
                    .collect();
                write_csv(Some(&path), &spec_comments(&spec), &rows)?;
            }
            write_csv(common.output.as_deref(), &spec_comments(&spec), &counts.rows)
        }
        BenchCommand::Bytes {
            discretizations,
            sizes,
            output,
        } => {
            let rows = bench_bytes(&discretizations, &sizes);
            write_csv(
                output.as_deref(),
                &["analytic byte accounting, S_A=4 S_f=1".to_owned()],
                &rows,
            )
        }
    }
}

#[derive(Serialize)]
struct Inspection<'a> {
    #[serde(flatten)]
    header: &'a rbm_core::store::Header,
    payload_floats: usize,
    metadata_bytes: u64,
    total_bytes: u64,
    file_bytes: u64,
}

fn inspect(path: &Path) -> Result<()> {
    let mut reader = BasisReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    // section checks run on the metadata load
    reader.load_metadata()?;
    let header = reader.header().clone();
    print_json(&Inspection {
        payload_floats: header.payload_floats(),
        metadata_bytes: header.metadata_bytes(),
        total_bytes: header.total_bytes(),
        file_bytes: std::fs::metadata(path)?.len(),
        header: &header,
    })
}
