//! Basis server: generation jobs, persisted bases and incremental updates.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::basis::{parse_empty_identifier, BasisMode, ReducedBasis};
use crate::error::{Error, Result};
use crate::generation::{greedy_generate, reorder_generate, GreedyOptions, ReorderOptions};
use crate::problem::{FullProblem, FullSolution, Parameter, QualitySpec};
use crate::protocol::{
    apply_update, make_update, BasisRequest, BasisUpdate, GenerationMethod, ServerChannel, UpdateRequest,
};
use crate::solver::SolverConfig;
use crate::store::BasisStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum JobStatus {
    Queued,
    Running,
    Done {
        identifier: String,
        n: usize,
        final_max_residual: f64,
        iterations: usize,
        /// Max residual of every sweep.
        max_residuals: Vec<f64>,
        degenerate_margin: bool,
    },
    Failed {
        error: String,
    },
}

impl JobStatus {
    pub fn is_finished(&self) -> bool {
        matches!(self, JobStatus::Done { .. } | JobStatus::Failed { .. })
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Concurrent generation jobs.
    pub workers: usize,
    pub solver: SolverConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            solver: SolverConfig::default(),
        }
    }
}

/// Server state shared by every request handler.
pub struct BasisServer {
    store: BasisStore,
    config: ServerConfig,
    pool: rayon::ThreadPool,
    problems: Mutex<HashMap<usize, Arc<FullProblem>>>,
    jobs: Mutex<HashMap<u64, JobStatus>>,
    next_job: AtomicU64,
    lineages: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl BasisServer {
    pub fn new(store: BasisStore, config: ServerConfig) -> Result<Arc<Self>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers.max(1))
            .thread_name(|i| format!("rbm-gen-{i}"))
            .build()
            .map_err(|e| Error::Channel(format!("cannot start worker pool: {e}")))?;
        Ok(Arc::new(Self {
            store,
            config,
            pool,
            problems: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
            lineages: Mutex::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> &BasisStore {
        &self.store
    }

    /// Assembled problem for a discretization; the residual threshold is a
    /// placeholder that callers override where it matters.
    pub fn problem(&self, discretization: usize) -> Result<Arc<FullProblem>> {
        let mut cache = self.problems.lock().expect("problem cache poisoned");
        if let Some(p) = cache.get(&discretization) {
            return Ok(Arc::clone(p));
        }
        let problem =
            Arc::new(FullProblem::new(QualitySpec::new(discretization, 1.0)?)?.with_solver(self.config.solver));
        cache.insert(discretization, Arc::clone(&problem));
        Ok(problem)
    }

    /// Validates the request and queues a generation job.
    pub fn submit(self: &Arc<Self>, request: BasisRequest) -> Result<u64> {
        let train = request.validate()?;
        let id = self.next_job.fetch_add(1, Ordering::Relaxed);
        self.set_status(id, JobStatus::Queued);
        let server = Arc::clone(self);
        self.pool.spawn(move || {
            server.set_status(id, JobStatus::Running);
            let status = match server.generate(&request, &train) {
                Ok(status) => status,
                Err(e) => {
                    log::warn!("job {id} failed: {e}");
                    JobStatus::Failed { error: e.to_string() }
                }
            };
            server.set_status(id, status);
        });
        Ok(id)
    }

    fn generate(&self, request: &BasisRequest, train: &crate::generation::TrainingSet) -> Result<JobStatus> {
        let problem = self
            .problem(request.quality.discretization)?
            .with_max_res(request.quality.max_res)?;
        let generated = match request.method {
            GenerationMethod::Greedy => greedy_generate(
                &problem,
                train,
                None,
                &GreedyOptions {
                    mode: request.mode,
                    seed: request.seed,
                    ..GreedyOptions::default()
                },
            )?,
            GenerationMethod::Reorder { a } => reorder_generate(
                &problem,
                train,
                &ReorderOptions {
                    a,
                    seed: request.seed,
                    ..ReorderOptions::default()
                },
            )?,
        };
        self.store.save(&generated.basis)?;
        Ok(JobStatus::Done {
            identifier: generated.basis.identifier(),
            n: generated.basis.n(),
            final_max_residual: generated.log.final_max_residual,
            iterations: generated.log.iterations.len(),
            max_residuals: generated.log.max_residuals(),
            degenerate_margin: generated.log.degenerate_margin,
        })
    }

    fn set_status(&self, id: u64, status: JobStatus) {
        self.jobs.lock().expect("job table poisoned").insert(id, status);
    }

    pub fn job(&self, id: u64) -> Result<JobStatus> {
        self.jobs
            .lock()
            .expect("job table poisoned")
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownJob(id))
    }

    /// Polls until the job finishes or `timeout` elapses.
    pub fn wait(&self, id: u64, timeout: Duration) -> Result<JobStatus> {
        let start = std::time::Instant::now();
        loop {
            let status = self.job(id)?;
            if status.is_finished() || start.elapsed() >= timeout {
                return Ok(status);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Loads a stored basis. Empty-basis sentinels are created on demand.
    pub fn basis(&self, identifier: &str) -> Result<ReducedBasis> {
        if self.store.contains(identifier) {
            return self.store.load(identifier);
        }
        if let Some((d, mode)) = parse_empty_identifier(identifier) {
            let basis = self.empty_basis(d, mode)?;
            self.store.save(&basis)?;
            return Ok(basis);
        }
        Err(Error::ResyncRequired(identifier.to_owned()))
    }

    fn empty_basis(&self, discretization: usize, mode: BasisMode) -> Result<ReducedBasis> {
        let problem = self.problem(discretization)?;
        ReducedBasis::empty(&problem, mode)
    }

    /// Raw basis file bytes.
    pub fn basis_bytes(&self, identifier: &str) -> Result<Vec<u8>> {
        if !self.store.contains(identifier) {
            // materializes empty sentinels, errors for unknown ids
            self.basis(identifier)?;
        }
        self.store.read_bytes(identifier)
    }

    fn lineage_lock(&self, identifier: &str) -> Arc<Mutex<()>> {
        let mut locks = self.lineages.lock().expect("lineage table poisoned");
        Arc::clone(locks.entry(identifier.to_owned()).or_default())
    }

    /// Full solve at `mu`, border blocks for the requested basis, and the
    /// extended basis persisted under its new identifier.
    pub fn serve_update(&self, request: &UpdateRequest) -> Result<BasisUpdate> {
        request.validate()?;
        let lock = self.lineage_lock(&request.basis_id);
        let _guard = lock.lock().expect("lineage lock poisoned");
        let basis = self.basis(&request.basis_id)?;
        let problem = self.problem(basis.quality().discretization)?;
        let update = make_update(&basis, &problem, &request.mu)?;
        if !self.store.contains(&update.new_identifier) {
            let next = apply_update(&basis, &update)?;
            self.store.save(&next)?;
        }
        Ok(update)
    }

    /// The server-only baseline: a full solve.
    pub fn solve(&self, mu: &Parameter, discretization: usize) -> Result<FullSolution> {
        self.problem(discretization)?.snapshot(mu)
    }
}

/// In-process channel straight to a [`BasisServer`].
#[derive(Clone)]
pub struct LocalChannel(pub Arc<BasisServer>);

impl ServerChannel for LocalChannel {
    fn request_update(&self, request: &UpdateRequest) -> Result<BasisUpdate> {
        self.0.serve_update(request)
    }

    fn fetch_basis(&self, identifier: &str) -> Result<Vec<u8>> {
        self.0.basis_bytes(identifier)
    }
}
