//! Client-side query strategies.
//!
//! * basic: solve on the full basis held in memory
//! * subspace: descend from `m = n` and keep the smallest prefix that still
//!   meets the residual threshold, then load only `m` snapshots
//! * reorder: sort snapshots by the magnitude of their reduced coefficients,
//!   permute the precomputed blocks, then run the subspace search
//! * adaptive: basic, but ask the server for a basis update when the residual
//!   check fails

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisMetadata, BasisMode, ReducedBasis};
use crate::error::{Error, Result};
use crate::problem::Parameter;
use crate::protocol::{apply_update, ServerChannel, UpdateRequest};
use crate::reduced::{ReducedSolveMethod, ReducedSystem};
use crate::store::{self, IoStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Basic,
    Adaptive,
    Subspace,
    Reorder,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::Adaptive => "adaptive",
            Strategy::Subspace => "subspace",
            Strategy::Reorder => "reorder",
        }
    }

    /// Whether the strategy keeps every snapshot in memory after setup.
    pub fn keeps_snapshots_in_memory(self) -> bool {
        matches!(self, Strategy::Basic | Strategy::Adaptive)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Strategy::Basic),
            "adaptive" => Ok(Strategy::Adaptive),
            "subspace" => Ok(Strategy::Subspace),
            "reorder" => Ok(Strategy::Reorder),
            other => Err(Error::InvalidTrainingSpec(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub parameter: Parameter,
    /// Per-query residual threshold; defaults to the basis threshold.
    #[serde(default)]
    pub max_res: Option<f64>,
}

impl Query {
    pub fn new(parameter: Parameter) -> Self {
        Self {
            parameter,
            max_res: None,
        }
    }

    pub fn with_max_res(parameter: Parameter, max_res: f64) -> Self {
        Self {
            parameter,
            max_res: Some(max_res),
        }
    }

    pub fn threshold(&self, basis_max_res: f64) -> f64 {
        self.max_res.unwrap_or(basis_max_res)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Setup,
    ReducedSolve,
    Search,
    Load,
    Reconstruct,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub residual_evaluations: usize,
    pub bytes_read: u64,
    pub storage_reads: u64,
    pub seeks: u64,
    pub bytes_transferred: u64,
    pub network_calls: u64,
    pub phases: Vec<PhaseTiming>,
}

impl QueryMetrics {
    fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming {
            phase,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn add_io(&mut self, io: &IoStats) {
        self.bytes_read += io.bytes_read;
        self.storage_reads += io.reads;
        self.seeks += io.seeks;
    }

    pub fn phase_seconds(&self, phase: Phase) -> f64 {
        self.phases.iter().filter(|p| p.phase == phase).map(|p| p.seconds).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub coefficients: DVector<f64>,
    pub parameter: Parameter,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct QueryAnswer {
    pub solution: DVector<f64>,
    pub residual_norm: f64,
    pub snapshots_used: usize,
    pub basis_size: usize,
    pub strategy: Strategy,
    pub served_remotely: bool,
    /// `residual_norm <= threshold`.
    pub quality_met: bool,
    pub threshold: f64,
    /// The query asked for a looser threshold than the basis was trained for.
    pub looser_than_basis: bool,
    pub metrics: QueryMetrics,
}

/// Snapshot columns addressed by basis position.
pub trait SnapshotSource {
    /// The first `m` columns.
    fn load_prefix(&mut self, m: usize) -> Result<DMatrix<f64>>;
    /// Columns `indices`, in the given order.
    fn load_columns(&mut self, indices: &[usize]) -> Result<DMatrix<f64>>;
    /// Cumulative I/O performed by this source.
    fn io_stats(&self) -> IoStats;
}

/// Snapshots already resident in memory; loading costs no I/O.
pub struct InMemorySnapshots<'a>(pub &'a DMatrix<f64>);

impl SnapshotSource for InMemorySnapshots<'_> {
    fn load_prefix(&mut self, m: usize) -> Result<DMatrix<f64>> {
        if m > self.0.ncols() {
            return Err(Error::SubspaceOutOfRange { m, n: self.0.ncols() });
        }
        Ok(self.0.columns(0, m).into_owned())
    }

    fn load_columns(&mut self, indices: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.0.ncols()) {
            return Err(Error::SubspaceOutOfRange {
                m: bad + 1,
                n: self.0.ncols(),
            });
        }
        Ok(self.0.select_columns(indices))
    }

    fn io_stats(&self) -> IoStats {
        IoStats::default()
    }
}

/// Reduced solve plus fast residual, using only the `n × n` blocks.
pub fn solve_reduced(system: &ReducedSystem, mode: BasisMode, mu: &Parameter) -> Result<ReducedSolution> {
    let coefficients = system.solve(mu, mode.solve_method())?;
    let residual_norm = system.residual_norm(mu, &coefficients);
    Ok(ReducedSolution {
        coefficients,
        parameter: *mu,
        residual_norm,
    })
}

/// Residual norm of the reduced solution; errors only on a degenerate system.
pub fn residual_at(system: &ReducedSystem, mode: BasisMode, mu: &Parameter) -> Result<f64> {
    Ok(solve_reduced(system, mode, mu)?.residual_norm)
}

#[allow(clippy::too_many_arguments)]
fn finish_answer(
    solution: DVector<f64>,
    residual_norm: f64,
    snapshots_used: usize,
    basis_size: usize,
    strategy: Strategy,
    threshold: f64,
    basis_max_res: f64,
    metrics: QueryMetrics,
) -> QueryAnswer {
    QueryAnswer {
        solution,
        residual_norm,
        snapshots_used,
        basis_size,
        strategy,
        served_remotely: false,
        quality_met: residual_norm <= threshold,
        threshold,
        looser_than_basis: threshold > basis_max_res,
        metrics,
    }
}

/// Basic strategy: full reduced solve and reconstruction on an in-memory basis.
///
/// Never contacts the server. Parameters outside the training range still get
/// an answer; the residual reports how good it is.
pub fn answer_basic(basis: &ReducedBasis, query: &Query) -> Result<QueryAnswer> {
    query.parameter.validate()?;
    let mut metrics = QueryMetrics::default();
    let sol = metrics.time(Phase::ReducedSolve, || {
        solve_reduced(basis.system(), basis.mode(), &query.parameter)
    })?;
    metrics.residual_evaluations = 1;
    let field = metrics.time(Phase::Reconstruct, || basis.reconstruct(&sol.coefficients))?;
    let max_res = basis.quality().max_res;
    Ok(finish_answer(
        field,
        sol.residual_norm,
        basis.n(),
        basis.n(),
        Strategy::Basic,
        query.threshold(max_res),
        max_res,
        metrics,
    ))
}

/// Leading `m × m` view of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceView {
    pub m: usize,
    pub system: ReducedSystem,
}

/// Trims all blocks to the first `m` snapshots (`1 ≤ m ≤ n`).
pub fn trim(system: &ReducedSystem, m: usize) -> Result<SubspaceView> {
    if m == 0 || m > system.n() {
        return Err(Error::SubspaceOutOfRange { m, n: system.n() });
    }
    Ok(SubspaceView {
        m,
        system: system.leading(m)?,
    })
}

#[derive(Debug, Clone)]
pub struct SubspaceSelection {
    pub view: SubspaceView,
    pub solution: ReducedSolution,
    /// Number of reduced solves + residual evaluations the search performed.
    pub evaluations: usize,
}

/// Descending linear search for the smallest prefix meeting `max_res`.
///
/// Starts at `m = n` and stops at the first prefix that fails, returning the
/// last one that passed. Evaluations performed: `n − m + 2` when the search
/// stops on a failing `m − 1`, `n` when it reaches `m = 1`.
pub fn subspace_select(
    system: &ReducedSystem,
    mode: BasisMode,
    mu: &Parameter,
    max_res: f64,
) -> Result<SubspaceSelection> {
    let n = system.n();
    if n == 0 {
        return Err(Error::QualityUnreachable {
            residual: system.residual_norm(mu, &DVector::zeros(0)),
            max_res,
            n,
        });
    }
    let full = solve_reduced(system, mode, mu)?;
    let mut evaluations = 1;
    if full.residual_norm > max_res {
        return Err(Error::QualityUnreachable {
            residual: full.residual_norm,
            max_res,
            n,
        });
    }
    let mut best = SubspaceView {
        m: n,
        system: system.clone(),
    };
    let mut best_solution = full;
    for m in (1..n).rev() {
        let view = trim(system, m)?;
        evaluations += 1;
        let sol = match solve_reduced(&view.system, mode, mu) {
            Ok(sol) => sol,
            Err(Error::DegenerateBasis { .. }) => break,
            Err(e) => return Err(e),
        };
        if sol.residual_norm > max_res {
            break;
        }
        best = view;
        best_solution = sol;
    }
    Ok(SubspaceSelection {
        view: best,
        solution: best_solution,
        evaluations,
    })
}

/// Subspace strategy over metadata plus a lazily loaded snapshot source.
pub fn answer_subspace(meta: &BasisMetadata, source: &mut dyn SnapshotSource, query: &Query) -> Result<QueryAnswer> {
    query.parameter.validate()?;
    let threshold = query.threshold(meta.quality.max_res);
    let mut metrics = QueryMetrics::default();
    let selection = metrics.time(Phase::Search, || {
        subspace_select(&meta.system, meta.mode, &query.parameter, threshold)
    })?;
    metrics.residual_evaluations = selection.evaluations;
    let m = selection.view.m;
    let before = source.io_stats();
    let columns = metrics.time(Phase::Load, || source.load_prefix(m))?;
    metrics.add_io(&source.io_stats().since(&before));
    let field = metrics.time(Phase::Reconstruct, || &columns * &selection.solution.coefficients);
    Ok(finish_answer(
        field,
        selection.solution.residual_norm,
        m,
        meta.n(),
        Strategy::Subspace,
        threshold,
        meta.quality.max_res,
        metrics,
    ))
}

/// A permutation of snapshots: position `j` holds original snapshot `order[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reordering {
    pub order: Vec<usize>,
}

impl Reordering {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn new(order: Vec<usize>) -> Result<Self> {
        crate::reduced::validate_order(&order, order.len())?;
        Ok(Self { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(j, &i)| i == j)
    }

    /// `target[i]`: the position original snapshot `i` moves to.
    pub fn inverse(&self) -> Self {
        let mut target = vec![0; self.order.len()];
        for (j, &i) in self.order.iter().enumerate() {
            target[i] = j;
        }
        Self { order: target }
    }
}

/// Stable ordering of `coefficients` by descending magnitude.
pub fn order_by_magnitude(coefficients: &DVector<f64>) -> Reordering {
    let mut order: Vec<usize> = (0..coefficients.len()).collect();
    order.sort_by(|&a, &b| coefficients[b].abs().total_cmp(&coefficients[a].abs()));
    Reordering { order }
}

/// Orders snapshots by the magnitude of their reduced coefficients at `mu`.
///
/// Uses only the reduced blocks. A singular reduced system falls back to the
/// pseudoinverse coefficients.
pub fn find_reorder(system: &ReducedSystem, mode: BasisMode, mu: &Parameter) -> Result<Reordering> {
    if mode == BasisMode::Orthonormal {
        log::trace!("reordering an orthonormal basis; the greedy order is usually kept");
    }
    let coefficients = match system.solve(mu, mode.solve_method()) {
        Ok(u) => u,
        Err(Error::DegenerateBasis { .. }) => system.solve(mu, ReducedSolveMethod::Pseudoinverse)?,
        Err(e) => return Err(e),
    };
    Ok(order_by_magnitude(&coefficients))
}

/// Permutes every block by index remapping.
pub fn apply_reorder(system: &ReducedSystem, perm: &Reordering) -> Result<ReducedSystem> {
    system.permuted(&perm.order)
}

/// Reorder strategy: reorder, subspace search, then load the `m` selected
/// snapshots with positioned reads.
pub fn answer_reorder(meta: &BasisMetadata, source: &mut dyn SnapshotSource, query: &Query) -> Result<QueryAnswer> {
    query.parameter.validate()?;
    let threshold = query.threshold(meta.quality.max_res);
    let mut metrics = QueryMetrics::default();
    let (perm, selection) = metrics.time(Phase::Search, || -> Result<_> {
        let perm = find_reorder(&meta.system, meta.mode, &query.parameter)?;
        let reordered = apply_reorder(&meta.system, &perm)?;
        let selection = subspace_select(&reordered, meta.mode, &query.parameter, threshold)?;
        Ok((perm, selection))
    })?;
    // the reorder solve counts as one more evaluation
    metrics.residual_evaluations = selection.evaluations + 1;
    let m = selection.view.m;
    let before = source.io_stats();
    let columns = metrics.time(Phase::Load, || source.load_columns(&perm.order[..m]))?;
    metrics.add_io(&source.io_stats().since(&before));
    let field = metrics.time(Phase::Reconstruct, || &columns * &selection.solution.coefficients);
    Ok(finish_answer(
        field,
        selection.solution.residual_norm,
        m,
        meta.n(),
        Strategy::Reorder,
        threshold,
        meta.quality.max_res,
        metrics,
    ))
}

/// Result of an adaptive query: the answer plus the successor basis when an
/// update was applied.
#[derive(Debug)]
pub struct AdaptiveOutcome {
    pub answer: QueryAnswer,
    pub updated: Option<ReducedBasis>,
}

/// Adaptive strategy: answer locally when the residual passes, otherwise pull
/// a basis update for `μ` from the server and answer on the extended basis.
///
/// When the server does not know the basis identifier, the client restarts
/// from the server's empty basis for the same discretization and mode. When
/// the server is unreachable, the local answer is returned with
/// `quality_met = false`.
pub fn handle_query_adaptive(
    basis: &ReducedBasis,
    channel: &dyn ServerChannel,
    query: &Query,
) -> Result<AdaptiveOutcome> {
    query.parameter.validate()?;
    let max_res = basis.quality().max_res;
    let threshold = query.threshold(max_res);
    let mut local = answer_basic(basis, query)?;
    local.strategy = Strategy::Adaptive;
    if local.residual_norm <= threshold {
        return Ok(AdaptiveOutcome {
            answer: local,
            updated: None,
        });
    }

    let mut metrics = local.metrics.clone();
    let start = Instant::now();
    let updated = match fetch_update(basis, channel, &query.parameter, &mut metrics) {
        Ok(b) => b,
        Err(Error::Channel(msg)) => {
            log::warn!("server unreachable, returning degraded answer: {msg}");
            local.metrics = metrics;
            local.quality_met = false;
            return Ok(AdaptiveOutcome {
                answer: local,
                updated: None,
            });
        }
        Err(e) => return Err(e),
    };
    metrics.phases.push(PhaseTiming {
        phase: Phase::Update,
        seconds: start.elapsed().as_secs_f64(),
    });

    let mut answer = answer_basic(&updated, query)?;
    metrics.residual_evaluations += answer.metrics.residual_evaluations;
    metrics.phases.append(&mut answer.metrics.phases);
    answer.metrics = metrics;
    answer.strategy = Strategy::Adaptive;
    answer.served_remotely = true;
    Ok(AdaptiveOutcome {
        answer,
        updated: Some(updated),
    })
}

fn fetch_update(
    basis: &ReducedBasis,
    channel: &dyn ServerChannel,
    mu: &Parameter,
    metrics: &mut QueryMetrics,
) -> Result<ReducedBasis> {
    let request = UpdateRequest {
        mu: *mu,
        basis_id: basis.identifier(),
    };
    metrics.network_calls += 1;
    match channel.request_update(&request) {
        Ok(update) => {
            metrics.bytes_transferred += update.wire_size() as u64;
            apply_update(basis, &update)
        }
        Err(Error::ResyncRequired(id)) => {
            log::warn!("server does not know basis {id}; restarting lineage from empty basis");
            let empty_id = crate::basis::basis_identifier(basis.quality().discretization, basis.mode(), &[]);
            metrics.network_calls += 1;
            let bytes = channel.fetch_basis(&empty_id)?;
            metrics.bytes_transferred += bytes.len() as u64;
            let fresh = store::decode_basis(&bytes)?.with_max_res(basis.quality().max_res);
            let request = UpdateRequest {
                mu: *mu,
                basis_id: fresh.identifier(),
            };
            metrics.network_calls += 1;
            let update = channel.request_update(&request)?;
            metrics.bytes_transferred += update.wire_size() as u64;
            apply_update(&fresh, &update)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_order_is_descending_and_stable() {
        let u = DVector::from_vec(vec![0.1, 5.0, -2.0]);
        assert_eq!(order_by_magnitude(&u).order, vec![1, 2, 0]);
        let tie = DVector::from_vec(vec![-3.0, 3.0, 1.0]);
        assert_eq!(order_by_magnitude(&tie).order, vec![0, 1, 2]);
        assert_eq!(order_by_magnitude(&DVector::from_vec(vec![4.0])).order, vec![0]);
    }

    #[test]
    fn reordering_inverse() {
        let r = Reordering::new(vec![2, 0, 1]).unwrap();
        assert_eq!(r.inverse().order, vec![1, 2, 0]);
        assert!(Reordering::identity(3).is_identity());
        assert!(Reordering::new(vec![1, 1]).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Basic,
            Strategy::Adaptive,
            Strategy::Subspace,
            Strategy::Reorder,
        ] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bisection".parse::<Strategy>().is_err());
    }
}
