//! Training sets and offline basis generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisMode, ReducedBasis};
use crate::error::{Error, Result};
use crate::problem::{FullProblem, Parameter};
use crate::strategies::{apply_reorder, find_reorder, residual_at};

/// Iteration cap for both generation loops.
pub const MAX_ITERATIONS: usize = 200;

/// Closed interval sampled at `min, min + step, …` up to and including `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Range {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let r = Self { min, max, step };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidTrainingSpec(format!("non-finite range {self:?}")));
        }
        if self.max < self.min || self.step <= 0.0 {
            return Err(Error::InvalidTrainingSpec(format!("empty range {self:?}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        // tolerance so that e.g. 0..=40 step 4 reaches 40 despite rounding
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.min + k as f64 * self.step).collect()
    }
}

/// The three training boxes used for desk-scale evaluation.
///
/// Diffusion always spans `[10, 20]`; advection spans
/// A: `[0, 40]²`, B: `[-40, 40] × [0, 40]`, C: `[-40, 40]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    A,
    B,
    C,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::A, Preset::B, Preset::C];

    /// `(diff, advx, advy)` bounds.
    pub fn bounds(self) -> [(f64, f64); 3] {
        let (ax, ay) = match self {
            Preset::A => ((0.0, 40.0), (0.0, 40.0)),
            Preset::B => ((-40.0, 40.0), (0.0, 40.0)),
            Preset::C => ((-40.0, 40.0), (-40.0, 40.0)),
        };
        [(10.0, 20.0), ax, ay]
    }

    pub fn ranges(self, step: f64) -> Result<[Range; 3]> {
        let b = self.bounds();
        Ok([
            Range::new(b[0].0, b[0].1, step)?,
            Range::new(b[1].0, b[1].1, step)?,
            Range::new(b[2].0, b[2].1, step)?,
        ])
    }

    /// Uniform sample inside the preset box.
    pub fn sample(self, rng: &mut impl Rng) -> Parameter {
        let b = self.bounds();
        let mut draw = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
        Parameter {
            diff: draw(b[0]),
            advx: draw(b[1]),
            advy: draw(b[2]),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Preset::A),
            "B" | "b" => Ok(Preset::B),
            "C" | "c" => Ok(Preset::C),
            other => Err(Error::InvalidTrainingSpec(format!("unknown preset {other:?}"))),
        }
    }
}

/// Description of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainingSpec {
    Preset { preset: Preset, step: f64 },
    Grid { diff: Range, advx: Range, advy: Range },
    Explicit { parameters: Vec<Parameter> },
}

impl TrainingSpec {
    pub fn preset(preset: Preset, step: f64) -> Self {
        TrainingSpec::Preset { preset, step }
    }

    pub fn build(&self) -> Result<TrainingSet> {
        match self {
            TrainingSpec::Preset { preset, step } => {
                let [d, x, y] = preset.ranges(*step)?;
                TrainingSet::grid(&d, &x, &y)
            }
            TrainingSpec::Grid { diff, advx, advy } => TrainingSet::grid(diff, advx, advy),
            TrainingSpec::Explicit { parameters } => TrainingSet::new(parameters.clone()),
        }
    }
}

/// Ordered list of training parameters. Ties in the greedy search resolve to
/// the lowest index in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    parameters: Vec<Parameter>,
}

impl TrainingSet {
    pub fn new(parameters: Vec<Parameter>) -> Result<Self> {
        if parameters.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        for p in &parameters {
            p.validate()?;
        }
        Ok(Self { parameters })
    }

    /// Cartesian product, `diff` outermost and `advy` innermost.
    pub fn grid(diff: &Range, advx: &Range, advy: &Range) -> Result<Self> {
        for r in [diff, advx, advy] {
            r.validate()?;
        }
        let (xs, ys) = (advx.points(), advy.points());
        let mut parameters = Vec::new();
        for d in diff.points() {
            for &x in &xs {
                for &y in &ys {
                    parameters.push(Parameter::new(d, x, y)?);
                }
            }
        }
        Self::new(parameters)
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyOptions {
    pub mode: BasisMode,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            mode: BasisMode::Orthonormal,
            seed: 0,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// One pass over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Basis size during the sweep.
    pub n: usize,
    pub max_residual: f64,
    /// Training index whose snapshot was added, if any.
    pub chosen: Option<usize>,
    pub parameter: Option<Parameter>,
    /// Training indices skipped because their snapshot was dependent.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub seed: u64,
    pub initial_index: usize,
    pub iterations: Vec<IterationRecord>,
    pub final_max_residual: f64,
    /// Set when a reorder-generated basis ends with `a ≥ n`.
    pub degenerate_margin: bool,
}

impl GenerationLog {
    /// Max residual of each sweep, in order.
    pub fn max_residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.max_residual).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub basis: ReducedBasis,
    pub log: GenerationLog,
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Training indices sorted by descending value, ties by index.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Adds the snapshot at the first rank whose snapshot is independent.
fn extend_with_worst(
    basis: &ReducedBasis,
    problem: &FullProblem,
    train: &TrainingSet,
    residuals: &[f64],
    threshold: f64,
) -> Result<(ReducedBasis, Option<usize>, Vec<usize>)> {
    let mut skipped = Vec::new();
    for idx in ranked(residuals) {
        if residuals[idx] <= threshold {
            break;
        }
        let mu = train.parameters()[idx];
        let solution = problem.snapshot(&mu)?;
        match basis.extend(&solution, problem) {
            Ok(next) => return Ok((next, Some(idx), skipped)),
            Err(Error::DependentSnapshot { remaining }) => {
                log::debug!("training index {idx} dependent (remaining norm {remaining:.3e}), skipping");
                skipped.push(idx);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((basis.clone(), None, skipped))
}

fn seeded_start(
    problem: &FullProblem,
    train: &TrainingSet,
    mode: BasisMode,
    seed: u64,
) -> Result<(ReducedBasis, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = rng.gen_range(0..train.len());
    let empty = ReducedBasis::empty(problem, mode)?;
    let solution = problem.snapshot(&train.parameters()[index])?;
    Ok((empty.extend(&solution, problem)?, index))
}

/// Greedy generation: repeatedly add the snapshot of the training parameter
/// with the largest residual until every residual is below `max_res`.
///
/// `initial` continues an existing basis; otherwise the first snapshot comes
/// from a training parameter picked by the seeded RNG.
pub fn greedy_generate(
    problem: &FullProblem,
    train: &TrainingSet,
    initial: Option<ReducedBasis>,
    opts: &GreedyOptions,
) -> Result<Generated> {
    let max_res = problem.quality().max_res;
    let (mut basis, initial_index) = match initial {
        Some(b) if b.n() > 0 => (b.with_max_res(max_res), usize::MAX),
        _ => seeded_start(problem, train, opts.mode, opts.seed)?,
    };
    let mut log = GenerationLog {
        seed: opts.seed,
        initial_index,
        iterations: Vec::new(),
        final_max_residual: f64::INFINITY,
        degenerate_margin: false,
    };
    loop {
        let residuals = train
            .parameters()
            .par_iter()
            .map(|mu| residual_at(basis.system(), basis.mode(), mu))
            .collect::<Result<Vec<f64>>>()?;
        let (_, worst) = argmax(&residuals);
        log.final_max_residual = worst;
        if worst <= max_res {
            log.iterations.push(IterationRecord {
                n: basis.n(),
                max_residual: worst,
                chosen: None,
                parameter: None,
                skipped: Vec::new(),
            });
            log::info!("greedy converged: n = {}, max residual {worst:.3e}", basis.n());
            return Ok(Generated { basis, log });
        }
        if log.iterations.len() >= opts.max_iterations {
            return Err(Error::GenerationNonConvergence {
                iterations: log.iterations.len(),
                max_residual: worst,
            });
        }
        let n = basis.n();
        let (next, chosen, skipped) = extend_with_worst(&basis, problem, train, &residuals, max_res)?;
        log::debug!("greedy sweep n = {n}: max residual {worst:.3e}, chose {chosen:?}");
        log.iterations.push(IterationRecord {
            n,
            max_residual: worst,
            chosen,
            parameter: chosen.map(|i| train.parameters()[i]),
            skipped,
        });
        if chosen.is_none() {
            // every offending snapshot is already in the span
            return Err(Error::GenerationNonConvergence {
                iterations: log.iterations.len(),
                max_residual: worst,
            });
        }
        basis = next;
    }
}

/// Residual at `μ` after reordering the basis for `μ` and keeping the first
/// `l` snapshots. `l ≤ 0` means the empty basis, whose residual is `‖f(μ)‖`.
pub fn reorder_residual(basis: &ReducedBasis, l: isize, mu: &Parameter) -> Result<f64> {
    let system = basis.system();
    if l <= 0 || system.n() == 0 {
        let empty = system.leading(0)?;
        return Ok(empty.residual_norm(mu, &nalgebra::DVector::zeros(0)));
    }
    let perm = find_reorder(system, basis.mode(), mu)?;
    let reordered = apply_reorder(system, &perm)?;
    let kept = reordered.leading((l as usize).min(system.n()))?;
    residual_at(&kept, basis.mode(), mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReorderOptions {
    /// Extra snapshots beyond the ones a query is expected to need.
    pub a: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for ReorderOptions {
    fn default() -> Self {
        Self {
            a: 0,
            seed: 0,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// Reorder-aware generation: grow a normalized-only basis until, for every
/// training parameter, reordering for that parameter and keeping `n − a`
/// snapshots meets `max_res`.
pub fn reorder_generate(problem: &FullProblem, train: &TrainingSet, opts: &ReorderOptions) -> Result<Generated> {
    let max_res = problem.quality().max_res;
    let (mut basis, initial_index) = seeded_start(problem, train, BasisMode::NormalizedOnly, opts.seed)?;
    let mut log = GenerationLog {
        seed: opts.seed,
        initial_index,
        iterations: Vec::new(),
        final_max_residual: f64::INFINITY,
        degenerate_margin: false,
    };
    loop {
        let l = basis.n() as isize - opts.a as isize;
        let residuals = train
            .parameters()
            .par_iter()
            .map(|mu| reorder_residual(&basis, l, mu))
            .collect::<Result<Vec<f64>>>()?;
        let (_, worst) = argmax(&residuals);
        log.final_max_residual = worst;
        if worst <= max_res {
            log.iterations.push(IterationRecord {
                n: basis.n(),
                max_residual: worst,
                chosen: None,
                parameter: None,
                skipped: Vec::new(),
            });
            if opts.a >= basis.n() {
                log::warn!("reorder generation ended with a = {} ≥ n = {}", opts.a, basis.n());
                log.degenerate_margin = true;
            }
            return Ok(Generated { basis, log });
        }
        if log.iterations.len() >= opts.max_iterations {
            return Err(Error::GenerationNonConvergence {
                iterations: log.iterations.len(),
                max_residual: worst,
            });
        }
        let n = basis.n();
        let (next, chosen, skipped) = extend_with_worst(&basis, problem, train, &residuals, max_res)?;
        log.iterations.push(IterationRecord {
            n,
            max_residual: worst,
            chosen,
            parameter: chosen.map(|i| train.parameters()[i]),
            skipped,
        });
        if chosen.is_none() {
            return Err(Error::GenerationNonConvergence {
                iterations: log.iterations.len(),
                max_residual: worst,
            });
        }
        basis = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_includes_upper_endpoint() {
        assert_eq!(Range::new(0.0, 40.0, 4.0).unwrap().points().len(), 11);
        assert_eq!(Range::new(10.0, 20.0, 1.0).unwrap().points().len(), 11);
        assert_eq!(
            Range::new(0.0, 1.0, 0.3).unwrap().points(),
            vec![0.0, 0.3, 0.6, 0.8999999999999999]
        );
        assert!(Range::new(1.0, 0.0, 1.0).is_err());
        assert!(Range::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn preset_sizes() {
        let a = TrainingSpec::preset(Preset::A, 1.0).build().unwrap();
        assert_eq!(a.len(), 11 * 41 * 41);
        let c = TrainingSpec::preset(Preset::C, 4.0).build().unwrap();
        assert_eq!(c.len(), 3 * 21 * 21);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), (1, 3.0));
        assert_eq!(ranked(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn training_spec_json() {
        let spec = TrainingSpec::preset(Preset::B, 4.0);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"preset","preset":"B","step":4.0}"#);
        assert_eq!(serde_json::from_str::<TrainingSpec>(&json).unwrap(), spec);
    }
}
