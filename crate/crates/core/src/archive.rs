//! Model persistence: a directory holding a JSON manifest plus one binary
//! tensor file per core/factor block, so models survive process boundaries
//! byte-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::block::{BlockFactorModel, FactorLayout};
use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::hierarchy::{Compositionality, HierarchyNode, HierarchySpec, SegmentFilter};
use crate::io::{read_matrix, read_tensor, write_matrix, write_tensor};

const MANIFEST: &str = "manifest.json";
const VERSION: u32 = 1;

/// One hierarchy node as stored on disk; a general filter matrix lives in
/// its own tensor file next to the manifest.
#[derive(Debug, Serialize, Deserialize)]
struct NodeMeta {
    id: String,
    parent: Option<usize>,
    support: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    general: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Manifest {
    Flat {
        version: u32,
        order: usize,
        mean: Vec<f64>,
        sigmas: Vec<Vec<f64>>,
    },
    Block {
        version: u32,
        order: usize,
        segments: usize,
        measurement_dim: usize,
        compositional: Vec<Compositionality>,
        nodes: Vec<NodeMeta>,
        /// Indices into `nodes` of the segment leaves, in segment order.
        leaves: Vec<usize>,
        mean: Vec<f64>,
        sigmas: Vec<Vec<Vec<f64>>>,
        lambdas: Vec<Vec<f64>>,
    },
}

/// A model loaded back from disk.
#[derive(Debug, Clone)]
pub enum ArchivedModel {
    Flat(FactorModel),
    Block(BlockFactorModel),
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(m)?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let version = match &m {
        Manifest::Flat { version, .. } | Manifest::Block { version, .. } => *version,
    };
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    Ok(m)
}

/// Saves a flat model: `core.dten` plus one `mode{m}.dten` per factor.
pub fn save_flat(dir: &Path, model: &FactorModel) -> Result<()> {
    let manifest = Manifest::Flat {
        version: VERSION,
        order: model.order(),
        mean: model.mean.clone(),
        sigmas: model.sigmas.clone(),
    };
    write_manifest(dir, &manifest)?;
    write_tensor(&dir.join("core.dten"), &model.core)?;
    for (m, u) in model.modes.iter().enumerate() {
        write_matrix(&dir.join(format!("mode{m}.dten")), u)?;
    }
    Ok(())
}

/// Saves a block model: per-segment cores and measurement blocks, causal
/// factors (one file per block, or one shared file), and the hierarchy with
/// any general filter matrices.
pub fn save_block(dir: &Path, model: &BlockFactorModel) -> Result<()> {
    let s_count = model.segments();
    let leaf_nodes = model.hierarchy.leaves()?;
    if leaf_nodes.len() != s_count {
        return Err(Error::Shape(format!(
            "{} hierarchy leaves for {s_count} segments",
            leaf_nodes.len()
        )));
    }
    let mut nodes = Vec::with_capacity(model.hierarchy.nodes.len());
    for (n, node) in model.hierarchy.nodes.iter().enumerate() {
        let general = match &node.filter.general {
            None => None,
            Some(f) => {
                let name = format!("filter{n}.dten");
                write_matrix(&dir.join(&name), f).or_else(|_| {
                    fs::create_dir_all(dir)?;
                    write_matrix(&dir.join(&name), f)
                })?;
                Some(name)
            }
        };
        nodes.push(NodeMeta {
            id: node.id.clone(),
            parent: node.parent,
            support: node.filter.support.clone(),
            general,
        });
    }
    let manifest = Manifest::Block {
        version: VERSION,
        order: model.order(),
        segments: s_count,
        measurement_dim: model.hierarchy.measurement_dim,
        compositional: model.hierarchy.compositional.clone(),
        nodes,
        leaves: leaf_nodes,
        mean: model.mean.clone(),
        sigmas: model.sigmas.clone(),
        lambdas: model.lambdas.clone(),
    };
    write_manifest(dir, &manifest)?;
    for s in 0..s_count {
        write_tensor(&dir.join(format!("core{s}.dten")), &model.cores[s])?;
        write_matrix(&dir.join(format!("u0_{s}.dten")), &model.measurement[s])?;
    }
    for (c, layout) in model.causal.iter().enumerate() {
        match layout {
            FactorLayout::Compositional(blocks) => {
                for (s, b) in blocks.iter().enumerate() {
                    write_matrix(&dir.join(format!("u{}_{s}.dten", c + 1)), b)?;
                }
            }
            FactorLayout::Shared(u) => {
                write_matrix(&dir.join(format!("u{}.dten", c + 1)), u)?;
            }
        }
    }
    Ok(())
}

/// Loads whatever model the directory holds.
pub fn load_model(dir: &Path) -> Result<ArchivedModel> {
    match read_manifest(dir)? {
        Manifest::Flat { order, mean, sigmas, .. } => {
            let core = read_tensor(&dir.join("core.dten"))?;
            if core.order() != order || sigmas.len() != order {
                return Err(Error::Format("flat manifest disagrees with core order".into()));
            }
            let mut modes = Vec::with_capacity(order);
            for m in 0..order {
                modes.push(read_matrix(&dir.join(format!("mode{m}.dten")))?);
            }
            let model = FactorModel { core, modes, sigmas, mean };
            for (m, u) in model.modes.iter().enumerate() {
                if u.cols() != model.core.extent(m) {
                    return Err(Error::Format(format!("mode {m} factor/core mismatch")));
                }
            }
            Ok(ArchivedModel::Flat(model))
        }
        Manifest::Block {
            order,
            segments,
            measurement_dim,
            compositional,
            nodes,
            leaves,
            mean,
            sigmas,
            lambdas,
            ..
        } => {
            let mut spec_nodes = Vec::with_capacity(nodes.len());
            for meta in &nodes {
                let general = match &meta.general {
                    None => None,
                    Some(name) => Some(read_matrix(&dir.join(name))?),
                };
                spec_nodes.push(HierarchyNode {
                    id: meta.id.clone(),
                    parent: meta.parent,
                    filter: SegmentFilter { support: meta.support.clone(), general },
                });
            }
            let hierarchy = HierarchySpec {
                measurement_dim,
                nodes: spec_nodes,
                compositional: compositional.clone(),
            };
            hierarchy.validate_structure()?;
            if leaves.len() != segments {
                return Err(Error::Format("leaf list disagrees with segment count".into()));
            }
            let filters: Result<Vec<SegmentFilter>> = leaves
                .iter()
                .map(|&n| {
                    hierarchy
                        .nodes
                        .get(n)
                        .map(|node| node.filter.clone())
                        .ok_or_else(|| Error::Format(format!("leaf index {n} out of range")))
                })
                .collect();
            let mut cores = Vec::with_capacity(segments);
            let mut measurement = Vec::with_capacity(segments);
            for s in 0..segments {
                cores.push(read_tensor(&dir.join(format!("core{s}.dten")))?);
                measurement.push(read_matrix(&dir.join(format!("u0_{s}.dten")))?);
            }
            let mut causal = Vec::with_capacity(order - 1);
            for (c, flag) in compositional.iter().enumerate() {
                match flag {
                    Compositionality::Full => {
                        let mut blocks = Vec::with_capacity(segments);
                        for s in 0..segments {
                            blocks.push(read_matrix(&dir.join(format!("u{}_{s}.dten", c + 1)))?);
                        }
                        causal.push(FactorLayout::Compositional(blocks));
                    }
                    Compositionality::Shared => {
                        causal.push(FactorLayout::Shared(read_matrix(
                            &dir.join(format!("u{}.dten", c + 1)),
                        )?));
                    }
                }
            }
            let model = BlockFactorModel {
                hierarchy,
                filters: filters?,
                cores,
                measurement,
                causal,
                sigmas,
                lambdas,
                mean,
            };
            model.validate()?;
            Ok(ArchivedModel::Block(model))
        }
    }
}
