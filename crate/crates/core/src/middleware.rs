//! Client middleware: current basis version, storage tiers, strategy
//! dispatch, metrics ledger and event notifications.

use std::fs::File;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisMetadata, ReducedBasis};
use crate::error::{Error, Result};
use crate::problem::Parameter;
use crate::protocol::ServerChannel;
use crate::store::{decode_basis, write_basis, BasisReader, BasisStore, IoStats, SectionKind};
use crate::strategies::{
    answer_basic, answer_reorder, answer_subspace, handle_query_adaptive, InMemorySnapshots, Phase, PhaseTiming, Query,
    QueryAnswer, QueryMetrics, Strategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub strategy: Strategy,
    /// Allows a per-query strategy override (what-if exploration).
    pub allow_override: bool,
    /// Default residual threshold for queries that carry none; falls back to
    /// the threshold stored with the basis.
    pub max_res: Option<f64>,
}

impl ClientConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            allow_override: false,
            max_res: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "event")]
pub enum Event {
    QueryAnswered {
        seq: u64,
        parameter: Parameter,
        strategy: Strategy,
        residual_norm: f64,
        threshold: f64,
        snapshots_used: usize,
        served_remotely: bool,
        quality_met: bool,
    },
    UpdateStarted {
        parameter: Parameter,
        basis_id: String,
    },
    UpdateApplied {
        old_id: String,
        new_id: String,
        n: usize,
        version: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub parameter: Parameter,
    pub strategy: Strategy,
    pub basis_version: u64,
    pub basis_size: usize,
    pub snapshots_used: usize,
    pub residual_norm: f64,
    pub quality_met: bool,
    pub served_remotely: bool,
    pub wall_seconds: f64,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub queries: u64,
    pub bytes_read: u64,
    pub storage_reads: u64,
    pub bytes_transferred: u64,
    pub network_calls: u64,
    pub remote_answers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupReport {
    pub identifier: String,
    pub strategy: Strategy,
    pub n: usize,
    pub version: u64,
    pub header_bytes: u64,
    /// Bytes read per section during setup.
    pub section_bytes: Vec<(SectionKind, u64)>,
    pub bytes_read: u64,
    pub fetched_from_server: bool,
    pub seconds: f64,
}

impl SetupReport {
    pub fn snapshot_bytes(&self) -> u64 {
        self.section_bytes
            .iter()
            .filter(|(k, _)| *k == SectionKind::Snapshots)
            .map(|(_, b)| b)
            .sum()
    }
}

struct Version {
    number: u64,
    meta: BasisMetadata,
    full: Option<Arc<ReducedBasis>>,
    reader: Option<Mutex<BasisReader<File>>>,
}

pub struct Middleware {
    config: ClientConfig,
    store: BasisStore,
    channel: Option<Arc<dyn ServerChannel>>,
    current: RwLock<Option<Arc<Version>>>,
    update_lock: Mutex<()>,
    ledger: Mutex<Vec<LedgerEntry>>,
    subscribers: Mutex<Vec<mpsc::Sender<Event>>>,
    seq: AtomicU64,
}

impl Middleware {
    pub fn new(config: ClientConfig, store: BasisStore, channel: Option<Arc<dyn ServerChannel>>) -> Self {
        Self {
            config,
            store,
            channel,
            current: RwLock::new(None),
            update_lock: Mutex::new(()),
            ledger: Mutex::new(Vec::new()),
            subscribers: Mutex::new(Vec::new()),
            seq: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn store(&self) -> &BasisStore {
        &self.store
    }

    fn current(&self) -> Option<Arc<Version>> {
        self.current.read().expect("version lock poisoned").clone()
    }

    /// Identifier and size of the current basis.
    pub fn basis_info(&self) -> Option<(String, usize, u64)> {
        self.current().map(|v| (v.meta.identifier(), v.meta.n(), v.number))
    }

    /// Discretization of the current basis.
    pub fn discretization(&self) -> Option<usize> {
        self.current().map(|v| v.meta.quality.discretization)
    }

    pub fn subscribe(&self) -> mpsc::Receiver<Event> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("subscriber list poisoned").push(tx);
        rx
    }

    fn emit(&self, event: Event) {
        self.subscribers
            .lock()
            .expect("subscriber list poisoned")
            .retain(|tx| tx.send(event.clone()).is_ok());
    }

    fn install(&self, meta: BasisMetadata, full: Option<Arc<ReducedBasis>>, reader: Option<BasisReader<File>>) -> u64 {
        let mut slot = self.current.write().expect("version lock poisoned");
        let number = slot.as_ref().map_or(1, |v| v.number + 1);
        *slot = Some(Arc::new(Version {
            number,
            meta,
            full,
            reader: reader.map(Mutex::new),
        }));
        number
    }

    /// Loads the basis `identifier` from local storage: metadata always, and
    /// every snapshot for strategies that keep snapshots in memory.
    ///
    /// A missing or corrupt file is fetched from the server in adaptive mode.
    pub fn warm_setup(&self, identifier: &str) -> Result<SetupReport> {
        let start = Instant::now();
        let mut fetched = false;
        let mut reader = match self.store.reader(identifier) {
            Ok(r) => r,
            Err(e) => match (&self.channel, self.config.strategy) {
                (Some(channel), Strategy::Adaptive) => {
                    log::info!("basis {identifier} unavailable locally ({e}); fetching from server");
                    let bytes = channel.fetch_basis(identifier)?;
                    let basis = decode_basis(&bytes)?;
                    if basis.identifier() != identifier {
                        return Err(Error::IdentifierMismatch {
                            basis: basis.identifier(),
                            expected: identifier.to_owned(),
                        });
                    }
                    // overwrite: the local copy may exist but be corrupt
                    write_basis(&basis, &self.store.path_for(identifier))?;
                    fetched = true;
                    self.store.reader(identifier)?
                }
                _ => return Err(e),
            },
        };
        let header = reader.header().clone();
        let keep_snapshots = self.config.strategy.keeps_snapshots_in_memory();
        let (meta, full) = if keep_snapshots {
            let basis = reader.load_full()?;
            (basis.metadata(), Some(Arc::new(basis)))
        } else {
            (reader.load_metadata()?, None)
        };
        let stats = reader.stats();
        let section_bytes = header
            .sections
            .iter()
            .filter(|s| keep_snapshots || s.kind != SectionKind::Snapshots)
            .map(|s| (s.kind, s.length))
            .collect();
        let n = meta.n();
        let version = self.install(meta, full, (!keep_snapshots).then_some(reader));
        Ok(SetupReport {
            identifier: identifier.to_owned(),
            strategy: self.config.strategy,
            n,
            version,
            header_bytes: header.header_bytes,
            section_bytes,
            bytes_read: stats.bytes_read,
            fetched_from_server: fetched,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Answers with the configured strategy.
    pub fn handle_query(&self, query: &Query) -> Result<QueryAnswer> {
        self.handle_query_with(query, None)
    }

    /// Answers with `strategy` when overrides are enabled.
    pub fn handle_query_with(&self, query: &Query, strategy: Option<Strategy>) -> Result<QueryAnswer> {
        let strategy = match strategy {
            Some(s) if s != self.config.strategy && !self.config.allow_override => {
                return Err(Error::InvalidParameter(format!(
                    "strategy override to {} is disabled",
                    s.name()
                )))
            }
            Some(s) => s,
            None => self.config.strategy,
        };
        let query = &Query {
            max_res: query.max_res.or(self.config.max_res),
            ..*query
        };
        if let Some(max_res) = query.max_res {
            if max_res.is_nan() || max_res <= 0.0 {
                return Err(Error::InvalidQuality(format!(
                    "max_res must be positive, got {max_res}"
                )));
            }
        }
        let start = Instant::now();
        let version = self.current().ok_or(Error::NoBasis)?;
        let mut answer = match strategy {
            Strategy::Basic => {
                let (full, io) = self.full_basis(&version)?;
                let mut a = answer_basic(&full, query)?;
                a.metrics.bytes_read += io.bytes_read;
                a.metrics.storage_reads += io.reads;
                a.metrics.seeks += io.seeks;
                a
            }
            Strategy::Subspace | Strategy::Reorder => {
                let run = |source: &mut dyn crate::strategies::SnapshotSource| {
                    if strategy == Strategy::Subspace {
                        answer_subspace(&version.meta, source, query)
                    } else {
                        answer_reorder(&version.meta, source, query)
                    }
                };
                match (&version.reader, &version.full) {
                    (Some(reader), _) => run(&mut *reader.lock().expect("reader poisoned"))?,
                    (None, Some(full)) => run(&mut InMemorySnapshots(full.snapshots()))?,
                    (None, None) => return Err(Error::NoBasis),
                }
            }
            Strategy::Adaptive => self.answer_adaptive(version, query)?,
        };
        answer.strategy = strategy;
        let version_number = self.current().map_or(0, |v| v.number);
        self.record(query, &answer, version_number, start.elapsed().as_secs_f64());
        Ok(answer)
    }

    fn full_basis(&self, version: &Version) -> Result<(Arc<ReducedBasis>, IoStats)> {
        if let Some(full) = &version.full {
            return Ok((Arc::clone(full), IoStats::default()));
        }
        let reader = version.reader.as_ref().ok_or(Error::NoBasis)?;
        let mut reader = reader.lock().expect("reader poisoned");
        let before = reader.stats();
        let snapshots = crate::strategies::SnapshotSource::load_prefix(&mut *reader, version.meta.n())?;
        let io = reader.stats().since(&before);
        Ok((Arc::new(ReducedBasis::from_parts(version.meta.clone(), snapshots)?), io))
    }

    fn answer_adaptive(&self, version: Arc<Version>, query: &Query) -> Result<QueryAnswer> {
        let (full, _) = self.full_basis(&version)?;
        let threshold = query.threshold(full.quality().max_res);
        let local = answer_basic(&full, query)?;
        if local.residual_norm <= threshold {
            return Ok(local);
        }
        let Some(channel) = &self.channel else {
            log::warn!("no server configured; returning degraded answer");
            let mut degraded = local;
            degraded.quality_met = false;
            return Ok(degraded);
        };

        // one update in flight; concurrent queries keep reading the old version
        let _guard = self.update_lock.lock().expect("update lock poisoned");
        let latest = self.current().ok_or(Error::NoBasis)?;
        let (latest_full, _) = self.full_basis(&latest)?;
        let basis_id = latest_full.identifier();
        let setup_start = Instant::now();
        let outcome = {
            let check = answer_basic(&latest_full, query)?;
            if check.residual_norm <= threshold {
                // another query already pulled a suitable update
                return Ok(check);
            }
            self.emit(Event::UpdateStarted {
                parameter: query.parameter,
                basis_id: basis_id.clone(),
            });
            handle_query_adaptive(&latest_full, channel.as_ref(), query)?
        };
        let mut answer = outcome.answer;
        if let Some(next) = outcome.updated {
            let new_id = next.identifier();
            self.store.save(&next)?;
            let n = next.n();
            let number = self.install(next.metadata(), Some(Arc::new(next)), None);
            answer.metrics.phases.push(PhaseTiming {
                phase: Phase::Setup,
                seconds: setup_start.elapsed().as_secs_f64(),
            });
            self.emit(Event::UpdateApplied {
                old_id: basis_id,
                new_id,
                n,
                version: number,
            });
        }
        Ok(answer)
    }

    fn record(&self, query: &Query, answer: &QueryAnswer, version: u64, wall_seconds: f64) {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed) + 1;
        self.ledger.lock().expect("ledger poisoned").push(LedgerEntry {
            seq,
            parameter: query.parameter,
            strategy: answer.strategy,
            basis_version: version,
            basis_size: answer.basis_size,
            snapshots_used: answer.snapshots_used,
            residual_norm: answer.residual_norm,
            quality_met: answer.quality_met,
            served_remotely: answer.served_remotely,
            wall_seconds,
            metrics: answer.metrics.clone(),
        });
        self.emit(Event::QueryAnswered {
            seq,
            parameter: query.parameter,
            strategy: answer.strategy,
            residual_norm: answer.residual_norm,
            threshold: answer.threshold,
            snapshots_used: answer.snapshots_used,
            served_remotely: answer.served_remotely,
            quality_met: answer.quality_met,
        });
    }

    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().expect("ledger poisoned").clone()
    }

    pub fn ledger_totals(&self) -> LedgerTotals {
        let ledger = self.ledger.lock().expect("ledger poisoned");
        let mut t = LedgerTotals::default();
        for e in ledger.iter() {
            t.queries += 1;
            t.bytes_read += e.metrics.bytes_read;
            t.storage_reads += e.metrics.storage_reads;
            t.bytes_transferred += e.metrics.bytes_transferred;
            t.network_calls += e.metrics.network_calls;
            t.remote_answers += u64::from(e.served_remotely);
        }
        t
    }
}
