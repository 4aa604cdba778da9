//! `tenfact` binary: synthetic data generation, flat/block/incremental
//! factorization, projection of observations, cost benchmarks, and named
//! experiments. Every subcommand runs embedded checks and exits 0 only if
//! all of them pass (2 on usage or input errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use tenfact_cli::bench::{bench_cost, rows_to_csv, BenchConfig};
use tenfact_cli::experiments::{run_experiment, ExperimentFlags, ExperimentKind};
use tenfact_cli::report::{config_hash, ExperimentReport};
use tenfact_core::archive::{load_model, save_block, save_flat, ArchivedModel};
use tenfact_core::block::{block_mmode_svd, BlockRankSpec, BlockSolverConfig};
use tenfact_core::factor::{mmode_svd, RankSpec};
use tenfact_core::hierarchy::HierarchyConfig;
use tenfact_core::incremental::{incremental_block_svd, IncrementalConfig};
use tenfact_core::io::{read_tensor, write_tensor};
use tenfact_core::projection::{infer_labels, multilinear_project, project_block, LabelScore};
use tenfact_core::synth::{synth_generate, SynthConfig};
use tenfact_core::DenseTensor;

#[derive(Parser)]
#[command(
    name = "tenfact",
    version,
    about = "Multilinear factor analysis: synthesis, factorization, projection, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from a JSON config and write it as a
    /// binary tensor.
    Synth {
        /// Synthesis config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output tensor path (.dten).
        #[arg(long)]
        out: PathBuf,
        /// Optional path for the noiseless tensor.
        #[arg(long)]
        clean: Option<PathBuf>,
    },
    /// Factor a tensor with the flat mode-m SVD or the hierarchical block
    /// solver and save the model directory.
    Factorize {
        /// "flat" or "block".
        #[arg(long)]
        mode: String,
        /// Input tensor (.dten).
        #[arg(long)]
        tensor: PathBuf,
        /// Hierarchy description (JSON); required in block mode.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        /// Rank selection (JSON); defaults to full ranks.
        #[arg(long)]
        ranks: Option<PathBuf>,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional report stem: writes <stem>.json and <stem>.csv.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Solve sibling segments on a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Factor bottom-up over a hierarchy, merging child factorizations into
    /// parents, and save the flattened block model.
    Incremental {
        /// Input tensor (.dten).
        #[arg(long)]
        tensor: PathBuf,
        /// Hierarchy description (JSON).
        #[arg(long)]
        hierarchy: PathBuf,
        /// Rank selection (JSON); defaults to full ranks.
        #[arg(long)]
        ranks: Option<PathBuf>,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional report stem: writes <stem>.json and <stem>.csv.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Factor sibling subtrees on a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Project one observation through a saved model and print the inferred
    /// label per causal factor.
    Project {
        /// Model directory (from factorize or incremental).
        #[arg(long)]
        model: PathBuf,
        /// Observation vector (.dten, one-dimensional).
        #[arg(long)]
        obs: PathBuf,
        /// Occlusion mask (JSON: {"occluded": [rows..]} or
        /// {"visible": [rows..]}); block models only.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Check the cost formula against enumerated subdivision trees and time
    /// serial vs parallel factorization.
    Bench {
        /// Cost-model order M (subdivision splits into 2^M children).
        #[arg(long)]
        order: usize,
        /// Cell counts N (comma-separated powers of two).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        sizes: Vec<usize>,
        /// Output directory for the row CSV and report; stdout-only if
        /// omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Threads for the parallel timing runs.
        #[arg(long, default_value_t = 4)]
        threads: usize,
        /// Skip wall-clock runs (formula checks only, fully deterministic).
        #[arg(long)]
        no_time: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a named experiment (flat, block, incremental, occlusion, bench)
    /// from a config file and write its report.
    Experiment {
        #[arg(long)]
        kind: String,
        /// Experiment config (JSON): a synthesis config, or a benchmark
        /// config for kind=bench.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the report files.
        #[arg(long)]
        out: PathBuf,
        /// Enable sibling-segment parallelism in the solvers.
        #[arg(long)]
        parallel: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(report) => {
            print!("{}", report.render_checks());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> anyhow::Result<ExperimentReport> {
    match cmd {
        Cmd::Synth { config, out, clean } => cmd_synth(&config, &out, clean.as_deref()),
        Cmd::Factorize { mode, tensor, hierarchy, ranks, out, report, parallel } => cmd_factorize(
            &mode,
            &tensor,
            hierarchy.as_deref(),
            ranks.as_deref(),
            &out,
            report.as_deref(),
            parallel,
        ),
        Cmd::Incremental { tensor, hierarchy, ranks, out, report, parallel } => {
            cmd_incremental(&tensor, &hierarchy, ranks.as_deref(), &out, report.as_deref(), parallel)
        }
        Cmd::Project { model, obs, mask } => cmd_project(&model, &obs, mask.as_deref()),
        Cmd::Bench { order, sizes, out, threads, no_time, seed } => {
            cmd_bench(order, sizes, out.as_deref(), threads, no_time, seed)
        }
        Cmd::Experiment { kind, config, out, parallel } => {
            let kind = ExperimentKind::parse(&kind)?;
            let flags = ExperimentFlags { parallel };
            let text = read_text(&config)?;
            Ok(run_experiment(kind, &text, &out, &flags)?)
        }
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(config: &Path, out: &Path, clean: Option<&Path>) -> anyhow::Result<ExperimentReport> {
    let text = read_text(config)?;
    let cfg: SynthConfig = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("parsing {}: {e}", config.display()))?;
    let mut rep = ExperimentReport::new("synth", config_hash(&text), cfg.seed);

    let synth = synth_generate(&cfg)?;
    write_tensor(out, &synth.data)?;
    if let Some(p) = clean {
        write_tensor(p, &synth.clean)?;
    }
    rep.metric("entries", synth.data.len() as f64);

    // the written file must read back bit-identically
    let back = read_tensor(out)?;
    let identical = back.shape() == synth.data.shape()
        && back
            .as_slice()
            .iter()
            .zip(synth.data.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    rep.check_equal("written_tensor_roundtrip", f64::from(identical), 1.0);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// factorize
// ---------------------------------------------------------------------------

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
}

fn cmd_factorize(
    mode: &str,
    tensor: &Path,
    hierarchy: Option<&Path>,
    ranks: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
    parallel: bool,
) -> anyhow::Result<ExperimentReport> {
    let d = read_tensor(tensor)?;
    let mut rep = match mode {
        "flat" => {
            anyhow::ensure!(hierarchy.is_none(), "flat mode takes no hierarchy");
            let spec: RankSpec = match ranks {
                Some(p) => read_json(p)?,
                None => RankSpec::Full,
            };
            let mut rep =
                ExperimentReport::new("factorize_flat", config_hash(&rank_text(&spec)?), 0);
            let model = mmode_svd(&d, &spec)?;
            let rel = model.reconstruct()?.relative_error(&d)?;
            rep.metric("rel_err", rel);
            if spec == RankSpec::Full {
                rep.check_at_most("full_rank_rel_err", rel, 1e-10);
            }
            save_flat(out, &model)?;
            check_reload(out, &model.reconstruct()?, &mut rep)?;
            rep
        }
        "block" => {
            let hpath =
                hierarchy.ok_or_else(|| anyhow::anyhow!("block mode needs --hierarchy"))?;
            let hcfg: HierarchyConfig = read_json(hpath)?;
            let spec = hcfg.to_spec()?;
            let ranks: BlockRankSpec = match ranks {
                Some(p) => read_json(p)?,
                None => BlockRankSpec::Full,
            };
            let solver = BlockSolverConfig { ranks, parallel, ..BlockSolverConfig::default() };
            let mut rep =
                ExperimentReport::new("factorize_block", config_hash(&hcfg.to_json()?), 0);
            let (model, solve) = block_mmode_svd(&d, &spec, &solver)?;
            let norm2 = d.frobenius_norm().powi(2);
            rep.metric("sweeps", (solve.losses.len() - 1) as f64);
            rep.metric("converged", f64::from(solve.converged));
            rep.metric("rel_err", model.reconstruct()?.relative_error(&d)?);
            let worst_rise = solve
                .losses
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max);
            rep.check_at_most("als_max_loss_increase", worst_rise, 1e-10 * norm2.max(1.0));
            save_block(out, &model)?;
            check_reload(out, &model.reconstruct()?, &mut rep)?;
            rep
        }
        other => anyhow::bail!("unknown factorize mode {other:?}; expected flat or block"),
    };
    write_report(&mut rep, report)?;
    Ok(rep)
}

fn rank_text(spec: &RankSpec) -> anyhow::Result<String> {
    Ok(serde_json::to_string(spec)?)
}

/// Reloads a just-saved model directory and checks that it reproduces the
/// reconstruction bit for bit.
fn check_reload(
    dir: &Path,
    expected: &DenseTensor,
    rep: &mut ExperimentReport,
) -> anyhow::Result<()> {
    let reloaded = match load_model(dir)? {
        ArchivedModel::Flat(m) => m.reconstruct()?,
        ArchivedModel::Block(m) => m.reconstruct()?,
    };
    let identical = reloaded.shape() == expected.shape()
        && reloaded
            .as_slice()
            .iter()
            .zip(expected.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    rep.check_equal("saved_model_roundtrip", f64::from(identical), 1.0);
    Ok(())
}

// ---------------------------------------------------------------------------
// incremental
// ---------------------------------------------------------------------------

fn cmd_incremental(
    tensor: &Path,
    hierarchy: &Path,
    ranks: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
    parallel: bool,
) -> anyhow::Result<ExperimentReport> {
    let d = read_tensor(tensor)?;
    let hcfg: HierarchyConfig = read_json(hierarchy)?;
    let spec = hcfg.to_spec()?;
    let ranks: RankSpec = match ranks {
        Some(p) => read_json(p)?,
        None => RankSpec::Full,
    };
    let cfg = IncrementalConfig { ranks, parallel, ..IncrementalConfig::default() };

    let mut rep = ExperimentReport::new("incremental", config_hash(&hcfg.to_json()?), 0);
    let inc = incremental_block_svd(&d, &spec, &cfg)?;
    rep.metric("node_count", inc.root.node_count() as f64);
    rep.metric("leaf_count", inc.root.leaves().len() as f64);
    rep.metric("rel_err", inc.root.reconstruct()?.relative_error(&d)?);

    // the flattened leaf-level model must agree with the merged root
    let block = inc.to_block_model()?;
    let flat_rel = block
        .reconstruct()?
        .relative_error(&inc.root.reconstruct()?)?;
    rep.check_at_most("flattened_vs_root_rel", flat_rel, 1e-10);

    save_block(out, &block)?;
    check_reload(out, &block.reconstruct()?, &mut rep)?;
    write_report(&mut rep, report)?;
    Ok(rep)
}

fn write_report(rep: &mut ExperimentReport, stem: Option<&Path>) -> anyhow::Result<()> {
    if let Some(stem) = stem {
        let dir = stem.parent().unwrap_or_else(|| Path::new("."));
        let name = stem
            .file_name()
            .ok_or_else(|| anyhow::anyhow!("report path has no file name"))?
            .to_string_lossy()
            .into_owned();
        rep.write(dir, &name)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// project
// ---------------------------------------------------------------------------

/// Occlusion mask: either the occluded rows or the visible rows.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
enum MaskConfig {
    #[serde(rename = "occluded")]
    Occluded(Vec<usize>),
    #[serde(rename = "visible")]
    Visible(Vec<usize>),
}

impl MaskConfig {
    fn visibility(&self, i0: usize) -> anyhow::Result<Vec<bool>> {
        let (rows, default, mark) = match self {
            MaskConfig::Occluded(rows) => (rows, true, false),
            MaskConfig::Visible(rows) => (rows, false, true),
        };
        let mut v = vec![default; i0];
        for &r in rows {
            anyhow::ensure!(r < i0, "mask row {r} out of range for {i0} measurement rows");
            v[r] = mark;
        }
        Ok(v)
    }
}

fn cmd_project(model: &Path, obs: &Path, mask: Option<&Path>) -> anyhow::Result<ExperimentReport> {
    let archived = load_model(model)?;
    let obs_tensor = read_tensor(obs)?;
    anyhow::ensure!(
        obs_tensor.order() == 1,
        "observation must be a one-dimensional tensor, got order {}",
        obs_tensor.order()
    );
    let obs_vec = obs_tensor.as_slice();
    let mut rep = ExperimentReport::new("project", config_hash(""), 0);

    let labels: Vec<LabelScore> = match &archived {
        ArchivedModel::Flat(m) => {
            anyhow::ensure!(
                mask.is_none(),
                "flat models cannot skip occluded rows; factor with parts and \
                 project through the block model instead"
            );
            let proj = multilinear_project(m, obs_vec)?;
            rep.metric("magnitude", proj.magnitude);
            rep.metric("rank1_residual", proj.residual);
            rep.check_equal("projection_nondegenerate", f64::from(!proj.degenerate), 1.0);
            infer_labels(&proj, m)?
        }
        ArchivedModel::Block(m) => {
            let visible = match mask {
                None => vec![true; m.measurement_dim()],
                Some(p) => read_json::<MaskConfig>(p)?.visibility(m.measurement_dim())?,
            };
            let proj = project_block(m, obs_vec, &visible)?;
            rep.metric("voting_segments", proj.segments.len() as f64);
            rep.check_at_least("voting_segments_present", proj.segments.len() as f64, 1.0);
            proj.labels
        }
    };

    let confident = labels.iter().all(|l| !l.low_confidence);
    rep.check_equal("labels_confident", f64::from(confident), 1.0);
    for (c, l) in labels.iter().enumerate() {
        println!("factor {}: label {} (score {:.6})", c + 1, l.index, l.score);
        rep.metric(&format!("label_{}", c + 1), l.index as f64);
        rep.metric(&format!("score_{}", c + 1), l.score);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(
    order: usize,
    sizes: Vec<usize>,
    out: Option<&Path>,
    threads: usize,
    no_time: bool,
    seed: u64,
) -> anyhow::Result<ExperimentReport> {
    let cfg = BenchConfig {
        order,
        sizes,
        threads,
        seed,
        time_runs: !no_time,
        ..BenchConfig::default()
    };
    let (rows, rep) = bench_cost(&cfg)?;
    let csv = rows_to_csv(&rows);
    print!("{csv}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench_rows.csv"), &csv)?;
        rep.write(dir, "bench_report")?;
    }
    Ok(rep)
}
