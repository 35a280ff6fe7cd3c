//! Desk-scale experiment drivers. Each returns plain rows; the CLI writes CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_identifier, BasisMode};
use crate::error::Result;
use crate::generation::{greedy_generate, reorder_generate, GreedyOptions, Preset, ReorderOptions, TrainingSpec};
use crate::problem::{FullProblem, Parameter, QualitySpec};
use crate::protocol::{update_float_count, update_header_bytes};
use crate::store::{file_size, payload_float_count};
use crate::strategies::{answer_reorder, answer_subspace, residual_at, InMemorySnapshots, Query};

/// Defaults used for desk-scale runs.
pub const DESK_DISCRETIZATION: usize = 32;
pub const DESK_STEP: f64 = 4.0;
pub const DESK_MAX_RES: f64 = 1e-3;
pub const DESK_TEST_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub presets: Vec<Preset>,
    pub discretization: usize,
    pub step: f64,
    pub max_res: f64,
    pub test_size: usize,
    pub seed: u64,
    /// Spare snapshots for reorder generation.
    pub a: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            presets: Preset::ALL.to_vec(),
            discretization: DESK_DISCRETIZATION,
            step: DESK_STEP,
            max_res: DESK_MAX_RES,
            test_size: DESK_TEST_SIZE,
            seed: 0,
            a: 3,
        }
    }
}

impl BenchSpec {
    /// Seed of the test set drawn for `preset`.
    pub fn test_seed(&self, preset: Preset) -> u64 {
        self.seed.wrapping_mul(31).wrapping_add(preset as u64 + 1)
    }

    /// Seeded test set inside the preset box.
    pub fn test_set(&self, preset: Preset) -> Vec<Parameter> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.test_seed(preset));
        (0..self.test_size).map(|_| preset.sample(&mut rng)).collect()
    }

    fn problem(&self) -> Result<FullProblem> {
        FullProblem::new(QualitySpec::new(self.discretization, self.max_res)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub preset: Preset,
    pub n: usize,
    pub max_test_residual: f64,
}

/// Greedy basis per preset, then the maximum test residual of every prefix.
pub fn bench_quality(spec: &BenchSpec) -> Result<Vec<QualityRow>> {
    let problem = spec.problem()?;
    let mut rows = Vec::new();
    for &preset in &spec.presets {
        let train = TrainingSpec::preset(preset, spec.step).build()?;
        let opts = GreedyOptions {
            seed: spec.seed,
            ..GreedyOptions::default()
        };
        let basis = greedy_generate(&problem, &train, None, &opts)?.basis;
        let tests = spec.test_set(preset);
        for n in 1..=basis.n() {
            let system = basis.system().leading(n)?;
            let worst = tests
                .par_iter()
                .map(|mu| residual_at(&system, basis.mode(), mu))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            rows.push(QualityRow {
                preset,
                n,
                max_test_residual: worst,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotCountRow {
    pub preset: Preset,
    pub strategy: String,
    pub basis: String,
    pub n: usize,
    pub queries: usize,
    /// Queries the full basis could not answer within `max_res`.
    pub unreachable: usize,
    pub mean_m: f64,
    pub p10: usize,
    pub p50: usize,
    pub p90: usize,
    pub max: usize,
}

/// Per-query `m` for every strategy, kept alongside the summary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotCounts {
    pub rows: Vec<SnapshotCountRow>,
    /// `(preset, strategy, m per answered query)`.
    pub samples: Vec<(Preset, String, Vec<usize>)>,
}

fn quantile(sorted: &[usize], q: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn summarize(
    preset: Preset,
    strategy: &str,
    basis: &str,
    n: usize,
    ms: &[usize],
    unreachable: usize,
) -> SnapshotCountRow {
    let mut sorted = ms.to_vec();
    sorted.sort_unstable();
    let mean_m = if ms.is_empty() {
        f64::NAN
    } else {
        ms.iter().sum::<usize>() as f64 / ms.len() as f64
    };
    SnapshotCountRow {
        preset,
        strategy: strategy.to_owned(),
        basis: basis.to_owned(),
        n,
        queries: ms.len() + unreachable,
        unreachable,
        mean_m,
        p10: quantile(&sorted, 0.1),
        p50: quantile(&sorted, 0.5),
        p90: quantile(&sorted, 0.9),
        max: sorted.last().copied().unwrap_or(0),
    }
}

/// Basic and subspace on an orthonormal greedy basis, reorder on a
/// reorder-generated basis with `a` spare snapshots.
pub fn bench_snapshot_counts(spec: &BenchSpec) -> Result<SnapshotCounts> {
    let problem = spec.problem()?;
    let mut out = SnapshotCounts {
        rows: Vec::new(),
        samples: Vec::new(),
    };
    for &preset in &spec.presets {
        let train = TrainingSpec::preset(preset, spec.step).build()?;
        let greedy = greedy_generate(
            &problem,
            &train,
            None,
            &GreedyOptions {
                seed: spec.seed,
                ..GreedyOptions::default()
            },
        )?
        .basis;
        let reorder = reorder_generate(
            &problem,
            &train,
            &ReorderOptions {
                a: spec.a,
                seed: spec.seed,
                ..ReorderOptions::default()
            },
        )?
        .basis;
        let tests = spec.test_set(preset);
        let (greedy_meta, reorder_meta) = (greedy.metadata(), reorder.metadata());
        let run = |f: &(dyn Fn(&Query) -> Result<usize> + Sync)| -> Result<(Vec<usize>, usize)> {
            let results: Vec<Result<usize>> = tests.par_iter().map(|mu| f(&Query::new(*mu))).collect();
            let mut ms = Vec::new();
            let mut unreachable = 0;
            for r in results {
                match r {
                    Ok(m) => ms.push(m),
                    Err(crate::error::Error::QualityUnreachable { .. }) => unreachable += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((ms, unreachable))
        };
        let basic = vec![greedy.n(); tests.len()];
        let (subspace, sub_unreach) =
            run(&|q| Ok(answer_subspace(&greedy_meta, &mut InMemorySnapshots(greedy.snapshots()), q)?.snapshots_used))?;
        let (reordered, re_unreach) = run(&|q| {
            Ok(answer_reorder(&reorder_meta, &mut InMemorySnapshots(reorder.snapshots()), q)?.snapshots_used)
        })?;
        let reorder_name = format!("reorder-generated a={}", spec.a);
        out.rows
            .push(summarize(preset, "basic", "orthonormal greedy", greedy.n(), &basic, 0));
        out.rows.push(summarize(
            preset,
            "subspace",
            "orthonormal greedy",
            greedy.n(),
            &subspace,
            sub_unreach,
        ));
        out.rows.push(summarize(
            preset,
            "reorder",
            &reorder_name,
            reorder.n(),
            &reordered,
            re_unreach,
        ));
        out.samples.push((preset, "basic".into(), basic));
        out.samples.push((preset, "subspace".into(), subspace));
        out.samples.push((preset, "reorder".into(), reordered));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BytesRow {
    pub strategy: String,
    pub discretization: usize,
    pub n: usize,
    /// Bytes read from storage when the client starts.
    pub setup_bytes: u64,
    /// Snapshot bytes a query reads when it needs `m = n` snapshots.
    pub per_query_bytes_max: u64,
    /// Bytes of one snapshot, the per-query cost per used snapshot.
    pub per_snapshot_bytes: u64,
    /// Bytes of one basis update from size `n` to `n + 1`.
    pub update_bytes: u64,
    pub update_overhead_fraction: f64,
    pub payload_floats: usize,
    pub residual_block_floats: usize,
}

/// Analytic byte accounting for the standard problem (`S_A = 4`, `S_f = 1`).
pub fn bench_bytes(discretizations: &[usize], sizes: &[usize]) -> Vec<BytesRow> {
    let reference = FullProblem::new(QualitySpec::new(2, 1.0).expect("valid quality")).expect("tiny problem");
    let (s_a, s_f) = (reference.operator().len(), reference.rhs().len());
    const DIGEST_ID_LEN: usize = 67;
    let mut rows = Vec::new();
    for &dd in discretizations {
        let d = dd * dd;
        for &n in sizes {
            let empty_len = basis_identifier(dd, BasisMode::Orthonormal, &[]).len();
            let id_len = if n == 0 { empty_len } else { DIGEST_ID_LEN };
            let total = file_size(n, d, s_a, s_f, id_len);
            let snapshot_bytes = 8 * (n * d) as u64;
            let update_floats = update_float_count(n, d, s_a, s_f);
            let update_header = update_header_bytes(id_len, DIGEST_ID_LEN);
            let residual = s_a * s_a * n * n + 2 * s_a * s_f * n + s_f * s_f;
            for strategy in ["basic", "adaptive", "subspace", "reorder"] {
                let in_memory = matches!(strategy, "basic" | "adaptive");
                rows.push(BytesRow {
                    strategy: strategy.to_owned(),
                    discretization: dd,
                    n,
                    setup_bytes: if in_memory { total } else { total - snapshot_bytes },
                    per_query_bytes_max: if in_memory { 0 } else { snapshot_bytes },
                    per_snapshot_bytes: 8 * d as u64,
                    update_bytes: if strategy == "adaptive" {
                        (update_header + 8 * update_floats) as u64
                    } else {
                        0
                    },
                    update_overhead_fraction: (update_floats - d) as f64 / d as f64,
                    payload_floats: payload_float_count(n, d, s_a, s_f),
                    residual_block_floats: residual,
                });
            }
        }
    }
    rows
}
