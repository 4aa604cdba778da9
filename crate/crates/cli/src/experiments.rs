//! Experiment drivers: each kind runs one synthetic pipeline end to end,
//! records metrics, and gates itself on embedded checks. Reports from the
//! data-driven kinds are byte-deterministic given the config seed; the
//! benchmark kind additionally records machine-dependent wall-clock timings.

use std::path::Path;

use tenfact_core::block::{
    block_mmode_svd, factorize_independent_parts, BlockFactorModel, BlockRankSpec,
    BlockSolverConfig,
};
use tenfact_core::factor::{hooi_refine, mmode_svd, FactorModel, RankSpec};
use tenfact_core::hierarchy::{
    Compositionality, FilterKind, HierarchyConfig, HierarchySpec, NodeConfig, SupportConfig,
};
use tenfact_core::incremental::{incremental_block_svd, IncrementalConfig};
use tenfact_core::linalg::max_principal_angle;
use tenfact_core::projection::{infer_labels, multilinear_project, project_block};
use tenfact_core::synth::{observation, synth_generate, PartConfig, SynthConfig};
use tenfact_core::{DenseTensor, Error, Result};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_cost, rows_to_csv, BenchConfig};
use crate::report::{config_hash, ExperimentReport};

/// Tolerances used by the embedded experiment checks.
pub mod tol {
    /// Full-rank reconstruction, relative Frobenius error.
    pub const EXACT_RECONSTRUCTION: f64 = 1e-10;
    /// Monotonicity slack on loss traces, relative to the squared data norm.
    pub const MONOTONE_SLACK: f64 = 1e-10;
    /// Agreement between equivalent factorization routes.
    pub const ROUTE_AGREEMENT: f64 = 1e-8;
    /// Subspace agreement, maximum principal angle in radians.
    pub const SUBSPACE_ANGLE: f64 = 1e-10;
}

/// Number of seeded occlusion trials in the occlusion experiment.
pub const OCCLUSION_TRIALS: usize = 20;

/// The experiment families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Whole-tensor factorization, refinement, and projection.
    Flat,
    /// Hierarchical block factorization.
    Block,
    /// Bottom-up incremental factorization vs the batch route.
    Incremental,
    /// Part-based vs whole-model labeling under occlusion.
    Occlusion,
    /// Cost-formula and timing benchmark.
    Bench,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(ExperimentKind::Flat),
            "block" => Ok(ExperimentKind::Block),
            "incremental" => Ok(ExperimentKind::Incremental),
            "occlusion" => Ok(ExperimentKind::Occlusion),
            "bench" => Ok(ExperimentKind::Bench),
            other => Err(Error::Value(format!(
                "unknown experiment kind {other:?}; expected flat, block, incremental, \
                 occlusion, or bench"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Flat => "flat",
            ExperimentKind::Block => "block",
            ExperimentKind::Incremental => "incremental",
            ExperimentKind::Occlusion => "occlusion",
            ExperimentKind::Bench => "bench",
        }
    }
}

/// Run-wide switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentFlags {
    /// Enable sibling-segment parallelism in the block and incremental
    /// solvers (experiments are single-threaded by default).
    pub parallel: bool,
}

/// Runs one experiment from its configuration text (JSON: a data synthesis
/// config for the data-driven kinds, a benchmark config for `bench`),
/// writes `<kind>_report.json` and `<kind>_report.csv` under `out_dir`
/// (plus `bench_rows.csv` for benchmarks), and returns the report.
pub fn run_experiment(
    kind: ExperimentKind,
    config_text: &str,
    out_dir: &Path,
    flags: &ExperimentFlags,
) -> Result<ExperimentReport> {
    let report = match kind {
        ExperimentKind::Flat => flat_experiment(&parse_synth(config_text)?, flags)?,
        ExperimentKind::Block => block_experiment(&parse_synth(config_text)?, flags)?,
        ExperimentKind::Incremental => incremental_experiment(&parse_synth(config_text)?, flags)?,
        ExperimentKind::Occlusion => occlusion_experiment(&parse_synth(config_text)?, flags)?,
        ExperimentKind::Bench => {
            let cfg: BenchConfig = serde_json::from_str(config_text)?;
            let (rows, report) = bench_cost(&cfg)?;
            std::fs::create_dir_all(out_dir)?;
            std::fs::write(out_dir.join("bench_rows.csv"), rows_to_csv(&rows))?;
            report
        }
    };
    report.write(out_dir, &format!("{}_report", kind.name()))?;
    Ok(report)
}

/// Runs an experiment whose configuration lives in a file.
pub fn run_experiment_file(
    kind: ExperimentKind,
    config_path: &Path,
    out_dir: &Path,
    flags: &ExperimentFlags,
) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(config_path)?;
    run_experiment(kind, &text, out_dir, flags)
}

fn parse_synth(text: &str) -> Result<SynthConfig> {
    Ok(serde_json::from_str(text)?)
}

fn synth_report(kind: ExperimentKind, cfg: &SynthConfig) -> Result<ExperimentReport> {
    let canonical = serde_json::to_string(cfg)?;
    Ok(ExperimentReport::new(kind.name(), config_hash(&canonical), cfg.seed))
}

// ---------------------------------------------------------------------------
// flat
// ---------------------------------------------------------------------------

/// Full-rank factorization (exact by construction), truncated refinement
/// (monotone by construction), and label recovery over every causal
/// combination (perfect on noiseless data).
fn flat_experiment(cfg: &SynthConfig, _flags: &ExperimentFlags) -> Result<ExperimentReport> {
    let mut rep = synth_report(ExperimentKind::Flat, cfg)?;
    let synth = synth_generate(cfg)?;
    let d = &synth.data;
    let norm2 = d.frobenius_norm().powi(2);

    let full = mmode_svd(d, &RankSpec::Full)?;
    let rel = full.reconstruct()?.relative_error(d)?;
    rep.check_at_most("full_rank_rel_err", rel, tol::EXACT_RECONSTRUCTION);

    // Truncate every mode to half rank and refine; the trace must not rise.
    let half: Vec<usize> = full.ranks().iter().map(|&j| (j / 2).max(1)).collect();
    let start = mmode_svd(d, &RankSpec::PerMode(half))?;
    let (_, losses) = hooi_refine(d, &start, 1e-12, 50)?;
    rep.metric("refine_sweeps", losses.len() as f64 - 1.0);
    rep.metric("refine_final_loss", *losses.last().unwrap_or(&f64::NAN));
    rep.check_at_most(
        "refine_max_loss_increase",
        max_increase(&losses),
        tol::MONOTONE_SLACK * norm2.max(1.0),
    );

    let accuracy = flat_label_accuracy(&full, d)?;
    rep.metric("label_accuracy", accuracy);
    if cfg.noise_sigma == 0.0 {
        rep.check_at_least("noiseless_label_accuracy", accuracy, 1.0);
    }
    Ok(rep)
}

/// Largest consecutive increase in a loss trace (0 for monotone traces).
fn max_increase(losses: &[f64]) -> f64 {
    losses.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Fraction of observations (one per causal combination) whose every causal
/// factor is labeled correctly by projection through `model`.
pub fn flat_label_accuracy(model: &FactorModel, d: &DenseTensor) -> Result<f64> {
    let cards: Vec<usize> = d.shape()[1..].to_vec();
    let mut correct = 0usize;
    let mut total = 0usize;
    for idx in CausalIndexIter::new(&cards) {
        let obs = observation(d, &idx)?;
        let labels = infer_labels(&multilinear_project(model, &obs)?, model)?;
        total += 1;
        if labels.iter().zip(&idx).all(|(l, &i)| l.index == i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Label accuracy over `draws` Monte-Carlo observations: each draw picks a
/// random causal combination from the noiseless tensor and perturbs the
/// fiber with fresh IID Gaussian noise of level `sigma` before projection.
pub fn noisy_projection_accuracy(
    model: &FactorModel,
    clean: &DenseTensor,
    sigma: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let cards: Vec<usize> = clean.shape()[1..].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for _ in 0..draws {
        let idx: Vec<usize> = cards.iter().map(|&c| rng.gen_range(0..c)).collect();
        let mut obs = observation(clean, &idx)?;
        for x in &mut obs {
            *x += sigma * tenfact_core::synth::normal(&mut rng);
        }
        let labels = infer_labels(&multilinear_project(model, &obs)?, model)?;
        if labels.iter().zip(&idx).all(|(l, &i)| l.index == i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / draws.max(1) as f64)
}

/// Odometer over causal index tuples, mode 1 fastest (matching the layout).
pub struct CausalIndexIter {
    cards: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl CausalIndexIter {
    pub fn new(cards: &[usize]) -> Self {
        let next = if cards.iter().all(|&c| c > 0) {
            Some(vec![0; cards.len()])
        } else {
            None
        };
        CausalIndexIter { cards: cards.to_vec(), next }
    }
}

impl Iterator for CausalIndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.clone()?;
        let mut idx = current.clone();
        let mut done = true;
        for (i, card) in idx.iter_mut().zip(&self.cards) {
            *i += 1;
            if *i < *card {
                done = false;
                break;
            }
            *i = 0;
        }
        self.next = if done { None } else { Some(idx) };
        Some(current)
    }
}

// ---------------------------------------------------------------------------
// block
// ---------------------------------------------------------------------------

/// Hierarchical block factorization: the loss trace must never rise, and on
/// noiseless disjoint-part data the solution is exact and agrees with
/// independently factored parts.
fn block_experiment(cfg: &SynthConfig, flags: &ExperimentFlags) -> Result<ExperimentReport> {
    let mut rep = synth_report(ExperimentKind::Block, cfg)?;
    let parts = require_parts(cfg)?;
    let synth = synth_generate(cfg)?;
    let d = &synth.data;
    let norm2 = d.frobenius_norm().powi(2);
    let spec = parts.hierarchy.to_spec()?;

    let solver = BlockSolverConfig {
        max_iters: 50,
        parallel: flags.parallel,
        ..BlockSolverConfig::default()
    };
    let (model, solve) = block_mmode_svd(d, &spec, &solver)?;
    rep.metric("sweeps", (solve.losses.len() - 1) as f64);
    rep.metric("converged", f64::from(solve.converged));
    rep.metric("final_loss", *solve.losses.last().unwrap_or(&f64::NAN));
    rep.metric("orthonormality_penalty", model.penalty());
    rep.check_at_most(
        "als_max_loss_increase",
        max_increase(&solve.losses),
        tol::MONOTONE_SLACK * norm2.max(1.0),
    );

    let rel = model.reconstruct()?.relative_error(d)?;
    rep.metric("block_rel_err", rel);

    // On noiseless disjoint selection parts the per-segment initialization is
    // already exact, and the block solution coincides with independently
    // factored parts.
    if cfg.noise_sigma == 0.0 && disjoint_selection_parts(&spec)? {
        rep.check_at_most("noiseless_block_rel_err", rel, tol::ROUTE_AGREEMENT);
        let independent = factorize_independent_parts(d, &spec, &BlockRankSpec::Full)?;
        let diff = model
            .reconstruct()?
            .relative_error(&independent.reconstruct()?)
            .unwrap_or(f64::INFINITY);
        rep.check_at_most("block_vs_independent_rel", diff, tol::ROUTE_AGREEMENT);
    }
    Ok(rep)
}

fn require_parts(cfg: &SynthConfig) -> Result<&PartConfig> {
    cfg.parts
        .as_ref()
        .ok_or_else(|| Error::Value("this experiment needs a part structure in the config".into()))
}

/// True when every leaf is a pure selection filter, leaf supports are
/// pairwise disjoint, and every causal factor is per-segment.
fn disjoint_selection_parts(spec: &HierarchySpec) -> Result<bool> {
    if spec.compositional.iter().any(|c| *c != Compositionality::Full) {
        return Ok(false);
    }
    let filters = spec.leaf_filters()?;
    let mut seen = vec![false; spec.measurement_dim];
    for f in &filters {
        if f.kind() == FilterKind::General {
            return Ok(false);
        }
        for &r in &f.support {
            if seen[r] {
                return Ok(false);
            }
            seen[r] = true;
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// incremental
// ---------------------------------------------------------------------------

/// Bottom-up incremental factorization against the batch route: at full
/// ranks both reconstruct the data, and every mode subspace agrees.
fn incremental_experiment(cfg: &SynthConfig, flags: &ExperimentFlags) -> Result<ExperimentReport> {
    let mut rep = synth_report(ExperimentKind::Incremental, cfg)?;
    let parts = require_parts(cfg)?;
    let synth = synth_generate(cfg)?;
    let d = &synth.data;
    let spec = parts.hierarchy.to_spec()?;

    let inc_cfg = IncrementalConfig { parallel: flags.parallel, ..IncrementalConfig::default() };
    let inc = incremental_block_svd(d, &spec, &inc_cfg)?;
    let batch = mmode_svd(d, &RankSpec::Full)?;

    rep.metric("node_count", inc.root.node_count() as f64);
    let rel = inc.root.reconstruct()?.relative_error(&batch.reconstruct()?)?;
    rep.check_at_most("incremental_vs_batch_rel", rel, tol::ROUTE_AGREEMENT);

    // The merged frame must cover the data subspace of every mode. (It may
    // be strictly larger along mode 0: per-part column spaces can overlap
    // once reassembled, collapsing the parent's rank below the sum of part
    // ranks, and the merge — which never revisits raw data — cannot see
    // that collapse. Coverage, not equality, is the invariant.)
    let root = inc.root_model();
    let mut worst = 0.0f64;
    for m in 0..root.order() {
        let data_basis = positive_rank_basis(&batch.modes[m], &batch.sigmas[m]);
        worst = worst.max(max_principal_angle(&root.modes[m], &data_basis)?);
    }
    rep.check_at_most("incremental_covers_batch_max_angle", worst, tol::SUBSPACE_ANGLE);

    // The nested model must flatten into a valid two-level block model.
    let block = inc.to_block_model()?;
    let block_rel = block.reconstruct()?.relative_error(d)?;
    rep.check_at_most("flattened_block_rel_err", block_rel, tol::ROUTE_AGREEMENT);
    Ok(rep)
}

/// Columns of `u` whose singular values are numerically positive — the
/// basis of the flattening's actual range, with null-padding columns
/// (arbitrary directions) dropped.
fn positive_rank_basis(u: &tenfact_core::Matrix, sigma: &[f64]) -> tenfact_core::Matrix {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tol = tenfact_core::linalg::default_rcond(u.rows(), u.cols()) * smax;
    let j = sigma.iter().take_while(|&&s| s > tol).count();
    u.truncate_cols(j)
}

// ---------------------------------------------------------------------------
// occlusion
// ---------------------------------------------------------------------------

/// Part-structured labeling under occlusion: both a whole-tensor model and a
/// block model are fit to the same data; across seeded trials one leaf
/// segment of one observation is masked, the whole model reads the masked
/// fiber with zeros in place, the block model skips the occluded part, and
/// per-trial label accuracies are compared.
fn occlusion_experiment(cfg: &SynthConfig, flags: &ExperimentFlags) -> Result<ExperimentReport> {
    let mut rep = synth_report(ExperimentKind::Occlusion, cfg)?;
    let parts = require_parts(cfg)?;
    let synth = synth_generate(cfg)?;
    let d = &synth.data;
    let spec = parts.hierarchy.to_spec()?;

    let whole = mmode_svd(d, &RankSpec::Full)?;
    let solver = BlockSolverConfig {
        max_iters: 50,
        parallel: flags.parallel,
        ..BlockSolverConfig::default()
    };
    let (block, _) = block_mmode_svd(d, &spec, &solver)?;

    rep.metric("whole_clean_accuracy", flat_label_accuracy(&whole, d)?);

    let trials = occlusion_trials(&whole, &block, d, &spec, OCCLUSION_TRIALS, cfg.seed)?;
    let whole_acc = mean(trials.iter().map(|t| t.whole));
    let block_acc = mean(trials.iter().map(|t| t.block));
    let strict_wins = trials.iter().filter(|t| t.block > t.whole).count();

    rep.metric("trials", trials.len() as f64);
    rep.metric("whole_occluded_accuracy", whole_acc);
    rep.metric("block_occluded_accuracy", block_acc);
    rep.check_at_least("block_at_least_whole", block_acc, whole_acc);
    rep.check_at_least("block_strictly_better_trials", strict_wins as f64, 1.0);
    Ok(rep)
}

/// Per-trial label accuracies (fraction of causal factors labeled right).
#[derive(Debug, Clone, Copy)]
pub struct OcclusionTrial {
    pub whole: f64,
    pub block: f64,
}

/// Runs seeded occlusion trials: each picks a random causal combination and
/// a random leaf segment, masks that segment's support rows, and labels the
/// fiber with both models.
pub fn occlusion_trials(
    whole: &FactorModel,
    block: &BlockFactorModel,
    d: &DenseTensor,
    spec: &HierarchySpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<OcclusionTrial>> {
    let cards: Vec<usize> = d.shape()[1..].to_vec();
    let filters = spec.leaf_filters()?;
    if filters.len() < 2 {
        return Err(Error::Hierarchy(
            "occlusion trials need at least two leaf segments".into(),
        ));
    }
    let i0 = d.extent(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851f42d4c957f2d);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let idx: Vec<usize> = cards.iter().map(|&c| rng.gen_range(0..c)).collect();
        let hidden = rng.gen_range(0..filters.len());
        let obs = observation(d, &idx)?;

        // The whole model has no masking notion: occluded rows read as zero.
        let mut masked_obs = obs.clone();
        let mut visible = vec![true; i0];
        for &r in &filters[hidden].support {
            masked_obs[r] = 0.0;
            visible[r] = false;
        }

        let whole_labels = infer_labels(&multilinear_project(whole, &masked_obs)?, whole)?;
        let block_labels = project_block(block, &masked_obs, &visible)?.labels;

        out.push(OcclusionTrial {
            whole: label_fraction(&whole_labels, &idx),
            block: label_fraction(&block_labels, &idx),
        });
    }
    Ok(out)
}

fn label_fraction(labels: &[tenfact_core::projection::LabelScore], truth: &[usize]) -> f64 {
    let correct = labels.iter().zip(truth).filter(|(l, &i)| l.index == i).count();
    correct as f64 / truth.len().max(1) as f64
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

// ---------------------------------------------------------------------------
// default configurations
// ---------------------------------------------------------------------------

/// Desk-scale whole-tensor default: 64 measurement rows, causal
/// cardinalities 5 x 4 x 3, noiseless, full ranks.
pub fn default_flat_config(seed: u64) -> SynthConfig {
    SynthConfig { seed, ..SynthConfig::default() }
}

/// Desk-scale part-structured default: 24 measurement rows split into two
/// parts of 12, causal cardinalities 4 x 3, per-part ranks [6, 3, 2] so each
/// part's extended core stays invertible along mode 0 (6 = 3 * 2), which
/// per-part labeling requires.
pub fn default_occlusion_config(seed: u64) -> SynthConfig {
    SynthConfig {
        measurement_size: 24,
        cardinalities: vec![4, 3],
        ranks: None,
        noise_sigma: 0.0,
        parts: Some(PartConfig {
            hierarchy: two_part_hierarchy(24),
            ranks: Some(vec![6, 3, 2]),
        }),
        seed,
    }
}

/// Two contiguous halves under one root, every causal factor per-segment.
fn two_part_hierarchy(i0: usize) -> HierarchyConfig {
    let half = i0 / 2;
    let compositional = [("1", "full"), ("2", "full")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    HierarchyConfig {
        measurement_dim: i0,
        nodes: vec![
            NodeConfig {
                id: "whole".into(),
                parent: None,
                support: SupportConfig::Range([0, i0]),
                filter: "identity".into(),
            },
            NodeConfig {
                id: "top".into(),
                parent: Some("whole".into()),
                support: SupportConfig::Range([0, half]),
                filter: "identity".into(),
            },
            NodeConfig {
                id: "bottom".into(),
                parent: Some("whole".into()),
                support: SupportConfig::Range([half, i0 - half]),
                filter: "identity".into(),
            },
        ],
        compositional,
    }
}
