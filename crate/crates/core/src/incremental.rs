//! Incremental whole/part factorization.
//!
//! Each part of a hierarchy is factorized once from its own rows; parents are
//! then assembled purely from the child factorizations (per-mode merge of the
//! scaled factors plus a core rebuild), so raw data is never touched twice.
//! Also hosts the cost model for the recursive-subdivision strategy and the
//! post-hoc application of general (non-selection) filters.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{BlockFactorModel, FactorLayout};
use crate::error::{Error, Result};
use crate::factor::{FactorModel, RankSpec};
use crate::hierarchy::{segment, Compositionality, HierarchyNode, HierarchySpec, SegmentFilter};
use crate::linalg::{default_rcond, thin_qr, thin_svd};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

/// Count of singular values above the numerical-rank threshold; everything
/// below is dropped before any `Σ⁻¹` normalization.
fn positive_count(sigma: &[f64], rows: usize, cols: usize) -> usize {
    match sigma.first() {
        None => 0,
        Some(&s0) => {
            let tol = default_rcond(rows, cols) * s0;
            sigma.iter().filter(|&&x| x > tol).count()
        }
    }
}

/// `U · diag(σ)`.
fn scale_cols(u: &Matrix, sigma: &[f64]) -> Matrix {
    let mut out = u.clone();
    for (c, &s) in sigma.iter().enumerate() {
        for x in out.col_mut(c) {
            *x *= s;
        }
    }
    out
}

/// `diag(σ) · Vᵀ`.
fn sigma_vt(sigma: &[f64], v: &Matrix) -> Matrix {
    Matrix::from_fn(sigma.len(), v.rows(), |i, j| sigma[i] * v.get(j, i))
}

/// Copies the support rows of `t` into a tensor of extent `support.len()`.
fn restrict_rows(t: &DenseTensor, support: &[usize]) -> Result<DenseTensor> {
    let i0 = t.extent(0);
    let mut shape = t.shape().to_vec();
    shape[0] = support.len();
    let mut out = DenseTensor::zeros(&shape)?;
    let src = t.as_slice();
    let dst = out.as_mut_slice();
    let fibers = src.len() / i0;
    for f in 0..fibers {
        let sb = f * i0;
        let db = f * support.len();
        for (r, &row) in support.iter().enumerate() {
            dst[db + r] = src[sb + row];
        }
    }
    Ok(out)
}

/// Embeds a `support.len() x J` block into `i0` rows (zero elsewhere).
fn embed_rows(u: &Matrix, support: &[usize], i0: usize) -> Matrix {
    let mut out = Matrix::zeros(i0, u.cols());
    for c in 0..u.cols() {
        for (r, &row) in support.iter().enumerate() {
            out.set(row, c, u.get(r, c));
        }
    }
    out
}

/// Thin SVD of one mode flattening of a node's segment.
#[derive(Debug, Clone)]
pub struct ModeSvd {
    /// Left singular vectors; mode 0 is embedded at the full measurement
    /// extent (zero outside the node's support rows).
    pub u: Matrix,
    /// Strictly positive singular values, non-increasing.
    pub sigma: Vec<f64>,
    /// Right factor. Leaves store the flattening's right singular vectors;
    /// merged nodes store the stacked-child mixing matrix whose row blocks
    /// are indexed by child (`J_{m,1} + … + J_{m,K}` rows).
    pub v: Matrix,
}

/// One node of an incremental factorization: per-mode factors, cores, and
/// the children it was merged from (empty at leaves).
#[derive(Debug, Clone)]
pub struct NodeFactorization {
    pub id: String,
    /// Mode-0 rows this node covers (sorted, deduplicated).
    pub support: Vec<usize>,
    /// Per-mode factors, mode 0 first.
    pub modes: Vec<ModeSvd>,
    /// Core `Z = segment ×_m U_mᵀ`.
    pub core: DenseTensor,
    /// Extended core `T = Z ×_0 U_0` (measurement factor multiplied back in,
    /// so mode 0 has the full measurement extent).
    pub extended_core: DenseTensor,
    /// Per-mode Σ of squared singular values discarded by this node's own
    /// truncation (children's truncations are recorded on the children).
    pub discarded: Vec<f64>,
    pub children: Vec<NodeFactorization>,
}

impl NodeFactorization {
    pub fn order(&self) -> usize {
        self.modes.len()
    }

    /// Retained rank per mode.
    pub fn ranks(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.sigma.len()).collect()
    }

    /// Normalized extended core `T̂ = T ×_c Σ_c⁻¹` over the causal modes.
    /// Mode 0 keeps the physical scale: the extended core has no mode-0
    /// singular values to divide out, and the measurement factor never
    /// enters a cross-child stacking. Every stored σ is strictly positive,
    /// so the inverses are finite.
    pub fn normalized_core(&self) -> Result<DenseTensor> {
        let mut t = self.extended_core.clone();
        for c in 1..self.order() {
            let inv: Vec<f64> = self.modes[c].sigma.iter().map(|&s| 1.0 / s).collect();
            t = t.mode_product(c, &Matrix::diag(&inv))?;
        }
        Ok(t)
    }

    /// `T ×_1 U_1 … ×_C U_C`: the node's reconstruction of its segment,
    /// embedded at the full measurement extent.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let mut t = self.extended_core.clone();
        for c in 1..self.order() {
            t = t.mode_product(c, &self.modes[c].u)?;
        }
        Ok(t)
    }

    /// Frobenius distance between a segment and this node's reconstruction.
    pub fn residual(&self, seg: &DenseTensor) -> Result<f64> {
        Ok(seg.sub(&self.reconstruct()?)?.frobenius_norm())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(NodeFactorization::node_count).sum::<usize>()
    }

    /// Leaf nodes in depth-first order.
    pub fn leaves(&self) -> Vec<&NodeFactorization> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a NodeFactorization, out: &mut Vec<&'a NodeFactorization>) {
            if n.children.is_empty() {
                out.push(n);
            } else {
                for c in &n.children {
                    walk(c, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

/// Options for the incremental solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementalConfig {
    /// Rank retained per mode; applied at leaves and again after every merge.
    pub ranks: RankSpec,
    /// Merge children by one direct SVD of the stacked scaled factors instead
    /// of the default QR-then-SVD-of-R path (same subspace, higher cost).
    pub direct_svd_merge: bool,
    /// Factorize sibling subtrees in parallel.
    pub parallel: bool,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        IncrementalConfig { ranks: RankSpec::Full, direct_svd_merge: false, parallel: false }
    }
}

/// Factorizes one leaf segment: a thin SVD per mode flattening (restricted to
/// the support rows), rank selection, and the core contractions.
///
/// `seg` must have zeros outside `support`; numerically-zero singular values
/// are always dropped, so a rank-1 segment keeps exactly one σ per mode even
/// under `RankSpec::Full`. An all-zero segment is rejected: it has no
/// directions to retain.
pub fn leaf_factorize(
    seg: &DenseTensor,
    support: &[usize],
    ranks: &RankSpec,
    id: &str,
) -> Result<NodeFactorization> {
    if !seg.is_finite() {
        return Err(Error::NonFinite("leaf segment"));
    }
    ranks.validate(seg.shape())?;
    let i0 = seg.extent(0);
    if support.is_empty() {
        return Err(Error::Hierarchy("empty leaf support".into()));
    }
    if support.windows(2).any(|w| w[1] <= w[0]) || *support.last().unwrap() >= i0 {
        return Err(Error::Hierarchy(format!(
            "leaf support must be sorted, unique, and below {i0}"
        )));
    }
    let sub = restrict_rows(seg, support)?;
    // a support that misses nonzero rows would silently drop data
    {
        let mut keep = vec![false; i0];
        for &r in support {
            keep[r] = true;
        }
        if seg.as_slice().iter().enumerate().any(|(lin, &x)| x != 0.0 && !keep[lin % i0]) {
            return Err(Error::Hierarchy("segment has mass outside the stated support".into()));
        }
    }
    if sub.frobenius_norm() == 0.0 {
        return Err(Error::ZeroInput("all-zero leaf segment"));
    }

    let order = seg.order();
    let mut modes = Vec::with_capacity(order);
    let mut discarded = vec![0.0; order];
    for m in 0..order {
        let flat = sub.matrixize(m)?;
        let svd = thin_svd(&flat)?;
        let pos = positive_count(&svd.s, flat.rows(), flat.cols());
        if pos == 0 {
            return Err(Error::ZeroInput("mode flattening has no positive singular value"));
        }
        let j = ranks.select(m, &svd.s).min(pos);
        discarded[m] = svd.s[j..].iter().map(|x| x * x).sum();
        modes.push(ModeSvd {
            u: svd.u.col_range(0, j),
            sigma: svd.s[..j].to_vec(),
            v: svd.v.col_range(0, j),
        });
    }

    let mut z = sub;
    for (m, ms) in modes.iter().enumerate() {
        z = z.mode_product(m, &ms.u.transpose())?;
    }
    modes[0].u = embed_rows(&modes[0].u, support, i0);
    let extended = z.mode_product(0, &modes[0].u)?;
    Ok(NodeFactorization {
        id: id.into(),
        support: support.to_vec(),
        modes,
        core: z,
        extended_core: extended,
        discarded,
        children: Vec::new(),
    })
}

/// Merged factor of one mode: the SVD `[U_1Σ_1 | … | U_KΣ_K] = U Σ Vᵀ` of the
/// children's scaled factors.
#[derive(Debug, Clone)]
pub struct MergedMode {
    pub u: Matrix,
    /// Strictly positive, non-increasing. For causal modes of mode-0-disjoint
    /// children these are exactly the parent segment's singular values (the
    /// children's flattenings occupy disjoint columns); for mode 0 they are
    /// the singular values of the stacked scaled factors, which preserve the
    /// total energy but not the parent's exact spectrum.
    pub sigma: Vec<f64>,
    /// Right factor, `(ΣJ_k) x J`; row block `k` (`J_k` rows) mixes child `k`.
    pub v: Matrix,
    /// Per-child column counts: the row-block sizes of `v`.
    pub blocks: Vec<usize>,
}

impl MergedMode {
    /// Keeps the leading `j` directions; returns the discarded σ² total.
    pub fn truncate(&mut self, j: usize) -> Result<f64> {
        if j == 0 || j > self.sigma.len() {
            return Err(Error::Value(format!(
                "cannot keep {j} of {} merged directions",
                self.sigma.len()
            )));
        }
        let lost = self.sigma[j..].iter().map(|x| x * x).sum();
        self.u = self.u.col_range(0, j);
        self.v = self.v.col_range(0, j);
        self.sigma.truncate(j);
        Ok(lost)
    }
}

/// Merges one mode across sibling factorizations. The default path takes a
/// thin QR of the stacked scaled factors and the SVD of its small triangular
/// factor; `direct_svd` runs one SVD of the whole stack instead. Both return
/// the same subspace and singular values.
pub fn merge_children_mode(
    m: usize,
    children: &[NodeFactorization],
    direct_svd: bool,
) -> Result<MergedMode> {
    if children.is_empty() {
        return Err(Error::Value("merge needs at least one child".into()));
    }
    let order = children[0].order();
    let rows = children[0].modes.get(m).map(|ms| ms.u.rows()).unwrap_or(0);
    for c in children {
        if c.order() != order || m >= order {
            return Err(Error::Shape("children disagree on tensor order".into()));
        }
        if c.modes[m].u.rows() != rows {
            return Err(Error::Shape(format!("mode-{m} factors disagree on row count")));
        }
    }
    let blocks: Vec<usize> = children.iter().map(|c| c.modes[m].sigma.len()).collect();
    let scaled: Vec<Matrix> =
        children.iter().map(|c| scale_cols(&c.modes[m].u, &c.modes[m].sigma)).collect();
    let refs: Vec<&Matrix> = scaled.iter().collect();
    let stacked = Matrix::hcat(&refs)?;
    let (u, sigma, v) = if direct_svd {
        let svd = thin_svd(&stacked)?;
        (svd.u, svd.s, svd.v)
    } else {
        let (q, r) = thin_qr(&stacked)?;
        let svd = thin_svd(&r)?;
        (q.matmul(&svd.u)?, svd.s, svd.v)
    };
    let pos = positive_count(&sigma, stacked.rows(), stacked.cols());
    if pos == 0 {
        return Err(Error::ZeroInput("merged mode has no positive singular value"));
    }
    Ok(MergedMode {
        u: u.col_range(0, pos),
        sigma: sigma[..pos].to_vec(),
        v: v.col_range(0, pos),
        blocks,
    })
}

/// Parent extended core from child factorizations and merged causal modes.
///
/// The children's normalized cores are stacked block-diagonally over the
/// causal modes (child `k` owns causal index block `k`) and summed into the
/// shared measurement rows; multiplying each causal mode by `Σ_c V_cᵀ` then
/// rescales the stack into the merged bases:
/// `T_w = stack(T̂_1 … T̂_K) ×_1 Σ_1V_1ᵀ … ×_C Σ_CV_Cᵀ`.
pub fn parent_core(children: &[NodeFactorization], merged: &[MergedMode]) -> Result<DenseTensor> {
    if children.is_empty() {
        return Err(Error::Value("parent core needs children".into()));
    }
    let order = children[0].order();
    if merged.len() + 1 != order {
        return Err(Error::Shape(format!(
            "{} merged causal modes for order-{order} children",
            merged.len()
        )));
    }
    let i0 = children[0].modes[0].u.rows();
    for (c, mm) in merged.iter().enumerate() {
        if mm.blocks.len() != children.len() {
            return Err(Error::Shape(format!("merged mode {} has wrong block count", c + 1)));
        }
        for (k, child) in children.iter().enumerate() {
            if mm.blocks[k] != child.modes[c + 1].sigma.len() {
                return Err(Error::Shape(format!(
                    "child {k} rank changed since the mode-{} merge",
                    c + 1
                )));
            }
        }
    }

    let mut shape = vec![i0];
    for mm in merged {
        shape.push(mm.blocks.iter().sum());
    }
    let mut stack = DenseTensor::zeros(&shape)?;
    let mut offs = vec![0usize; order];
    for (k, child) in children.iter().enumerate() {
        let that = child.normalized_core()?;
        let mut idx = vec![0usize; order];
        for (lin, &x) in that.as_slice().iter().enumerate() {
            that.decompose(lin, &mut idx);
            for c in 1..order {
                idx[c] += offs[c];
            }
            let cur = stack.get(&idx);
            stack.set(&idx, cur + x);
        }
        for c in 1..order {
            offs[c] += merged[c - 1].blocks[k];
        }
    }

    let mut t = stack;
    for c in 1..order {
        t = t.mode_product(c, &sigma_vt(&merged[c - 1].sigma, &merged[c - 1].v))?;
    }
    Ok(t)
}

/// Assembles a parent node from sibling factorizations: per-mode merges, the
/// parent extended core, rank truncation, and the parent's ordinary core.
/// The children move into the parent's `children` field.
pub fn merge_nodes(
    id: &str,
    children: Vec<NodeFactorization>,
    ranks: &RankSpec,
    direct_svd: bool,
) -> Result<NodeFactorization> {
    if children.is_empty() {
        return Err(Error::Value("merge needs at least one child".into()));
    }
    let order = children[0].order();
    let mut support: Vec<usize> =
        children.iter().flat_map(|c| c.support.iter().copied()).collect();
    support.sort_unstable();
    support.dedup();

    let mut discarded = vec![0.0; order];
    let mut merged = Vec::with_capacity(order - 1);
    for c in 1..order {
        let mut mm = merge_children_mode(c, &children, direct_svd)?;
        let j = ranks.select(c, &mm.sigma).min(mm.sigma.len());
        discarded[c] = mm.truncate(j)?;
        merged.push(mm);
    }
    let t = parent_core(&children, &merged)?;

    let mut m0 = merge_children_mode(0, &children, direct_svd)?;
    let j0 = ranks.select(0, &m0.sigma).min(m0.sigma.len());
    m0.truncate(j0)?;
    // Z = T ×_0 U_0ᵀ; the projection loss counts everything outside the
    // retained measurement subspace (at full rank T's mode-0 columns lie in
    // the merged span and the loss is zero)
    let z = t.mode_product(0, &m0.u.transpose())?;
    discarded[0] =
        (t.frobenius_norm().powi(2) - z.frobenius_norm().powi(2)).max(0.0);
    let extended = z.mode_product(0, &m0.u)?;

    let mut modes = vec![ModeSvd { u: m0.u, sigma: m0.sigma, v: m0.v }];
    for mm in merged {
        modes.push(ModeSvd { u: mm.u, sigma: mm.sigma, v: mm.v });
    }
    Ok(NodeFactorization {
        id: id.into(),
        support,
        modes,
        core: z,
        extended_core: extended,
        discarded,
        children,
    })
}

/// Sequential update: the current root becomes one child and `fresh` the
/// extra "new data" child of a new root. Both enter the merge at their
/// stored scale; nothing is down-weighted.
pub fn append_child(
    root: NodeFactorization,
    fresh: NodeFactorization,
    cfg: &IncrementalConfig,
) -> Result<NodeFactorization> {
    let id = format!("{}+{}", root.id, fresh.id);
    merge_nodes(&id, vec![root, fresh], &cfg.ranks, cfg.direct_svd_merge)
}

/// An incrementally assembled factorization: the tree of node factorizations
/// under the merged root, plus the hierarchy it came from.
#[derive(Debug, Clone)]
pub struct IncrementalModel {
    pub spec: HierarchySpec,
    pub root: NodeFactorization,
}

impl IncrementalModel {
    /// Flat factor model of the whole tensor from the merged root.
    pub fn root_model(&self) -> FactorModel {
        FactorModel {
            core: self.root.core.clone(),
            modes: self.root.modes.iter().map(|m| m.u.clone()).collect(),
            sigmas: self.root.modes.iter().map(|m| m.sigma.clone()).collect(),
            mean: vec![0.0; self.spec.measurement_dim],
        }
    }

    /// Leaf-level block model: one segment per factorization leaf (including
    /// any implicit new-data leaves), every causal factor compositional.
    pub fn to_block_model(&self) -> Result<BlockFactorModel> {
        let leaves = self.root.leaves();
        let i0 = self.spec.measurement_dim;
        let order = self.root.order();

        let mut nodes = vec![HierarchyNode {
            id: self.root.id.clone(),
            parent: None,
            filter: SegmentFilter::block(self.root.support.clone())?,
        }];
        if !self.root.children.is_empty() {
            for l in &leaves {
                nodes.push(HierarchyNode {
                    id: l.id.clone(),
                    parent: Some(0),
                    filter: SegmentFilter::block(l.support.clone())?,
                });
            }
        }
        let hierarchy = HierarchySpec {
            measurement_dim: i0,
            nodes,
            compositional: vec![Compositionality::Full; order - 1],
        };
        hierarchy.validate_structure()?;

        let filters: Result<Vec<SegmentFilter>> =
            leaves.iter().map(|l| SegmentFilter::block(l.support.clone())).collect();
        let causal: Vec<FactorLayout> = (1..order)
            .map(|c| {
                FactorLayout::Compositional(leaves.iter().map(|l| l.modes[c].u.clone()).collect())
            })
            .collect();
        Ok(BlockFactorModel {
            hierarchy,
            filters: filters?,
            cores: leaves.iter().map(|l| l.core.clone()).collect(),
            measurement: leaves.iter().map(|l| l.modes[0].u.clone()).collect(),
            causal,
            sigmas: leaves
                .iter()
                .map(|l| l.modes.iter().map(|m| m.sigma.clone()).collect())
                .collect(),
            lambdas: vec![vec![0.0; leaves.len()]; order - 1],
            mean: vec![0.0; i0],
        })
    }
}

/// Factorizes `d` bottom-up over the hierarchy: leaves from their own rows,
/// parents by merging child factorizations. Rows of a parent not covered by
/// any child are factorized as an implicit extra "new data" leaf. Sibling
/// supports must be disjoint (expand overlaps first) and leaves must be pure
/// selections; general filters are applied post-hoc with
/// [`apply_general_filters`].
pub fn incremental_block_svd(
    d: &DenseTensor,
    spec: &HierarchySpec,
    cfg: &IncrementalConfig,
) -> Result<IncrementalModel> {
    if !d.is_finite() {
        return Err(Error::NonFinite("incremental input"));
    }
    spec.validate_structure()?;
    if spec.measurement_dim != d.extent(0) {
        return Err(Error::Shape(format!(
            "hierarchy on {} rows, tensor has {}",
            spec.measurement_dim,
            d.extent(0)
        )));
    }
    if spec.compositional.len() + 1 != d.order() {
        return Err(Error::Shape(format!(
            "{} compositionality flags for order-{} tensor",
            spec.compositional.len(),
            d.order()
        )));
    }
    if spec.compositional.contains(&Compositionality::Shared) {
        return Err(Error::Value(
            "incremental merging builds one causal block per segment; shared factors are unsupported"
                .into(),
        ));
    }
    cfg.ranks.validate(d.shape())?;
    for leaf in spec.leaves()? {
        if spec.nodes[leaf].filter.general.is_some() {
            return Err(Error::Hierarchy(format!(
                "leaf {:?} carries a general filter; factorize the selections and apply filters afterwards",
                spec.nodes[leaf].id
            )));
        }
    }
    let root = factorize_node(d, spec, spec.root()?, cfg)?;
    Ok(IncrementalModel { spec: spec.clone(), root })
}

fn factorize_node(
    d: &DenseTensor,
    spec: &HierarchySpec,
    idx: usize,
    cfg: &IncrementalConfig,
) -> Result<NodeFactorization> {
    let node = &spec.nodes[idx];
    let kids = spec.children(idx);
    if kids.is_empty() {
        let seg = segment(d, &node.filter)?;
        return leaf_factorize(&seg, &node.filter.support, &cfg.ranks, &node.id);
    }

    let mut covered = BTreeSet::new();
    for &k in &kids {
        for &r in &spec.nodes[k].filter.support {
            if !covered.insert(r) {
                return Err(Error::Hierarchy(format!(
                    "children of {:?} overlap on row {r}; expand the hierarchy first",
                    node.id
                )));
            }
        }
    }

    let mut children: Vec<NodeFactorization> = if cfg.parallel {
        kids.par_iter().map(|&k| factorize_node(d, spec, k, cfg)).collect::<Result<_>>()?
    } else {
        kids.iter().map(|&k| factorize_node(d, spec, k, cfg)).collect::<Result<_>>()?
    };

    // rows of this node no child covers arrive as an extra new-data leaf
    let residual: Vec<usize> =
        node.filter.support.iter().copied().filter(|r| !covered.contains(r)).collect();
    if !residual.is_empty() {
        let filt = SegmentFilter::block(residual.clone())?;
        let seg = segment(d, &filt)?;
        if seg.frobenius_norm() > 0.0 {
            children.push(leaf_factorize(
                &seg,
                &residual,
                &cfg.ranks,
                &format!("{}.new", node.id),
            )?);
        }
    }
    children.sort_by_key(|c| c.support[0]);
    merge_nodes(&node.id, children, &cfg.ranks, cfg.direct_svd_merge)
}

/// Left-multiplies each segment's measurement block by its general filter:
/// the factorize-then-filter path. At full retained rank this equals
/// factorizing the pre-filtered data, because each filter acts linearly on
/// the segment: `F_s · (Z_s ×_m U_{m,s}) = (F_s D_s)`. The filters compose
/// into the stored segment filters; the model keeps passing validation
/// whenever every `F_s` maps its segment's support rows into themselves
/// (true for banded filters embedded at the support).
pub fn apply_general_filters(
    model: &BlockFactorModel,
    filters: &[Matrix],
) -> Result<BlockFactorModel> {
    if filters.len() != model.segments() {
        return Err(Error::Shape(format!(
            "{} filters for {} segments",
            filters.len(),
            model.segments()
        )));
    }
    let i0 = model.measurement_dim();
    let mut out = model.clone();
    for (s, f) in filters.iter().enumerate() {
        if f.rows() != i0 || f.cols() != i0 {
            return Err(Error::Shape(format!(
                "filter {s} is {}x{}, expected {i0}x{i0}",
                f.rows(),
                f.cols()
            )));
        }
        out.measurement[s] = f.matmul(&model.measurement[s])?;
        out.filters[s].general = Some(match &model.filters[s].general {
            None => f.clone(),
            Some(g) => f.matmul(g)?,
        });
    }
    // keep the cached leaf bank and the tree itself consistent
    let leaf_idx = out.hierarchy.leaves()?;
    if leaf_idx.len() == out.filters.len() {
        for (pos, idx) in leaf_idx.into_iter().enumerate() {
            out.hierarchy.nodes[idx].filter = out.filters[pos].clone();
        }
    }
    Ok(out)
}

/// Predicted work of factorizing `n` causal cells by recursive subdivision
/// into `k = 2^m` children per level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModel {
    /// Causal cells per measurement fiber.
    pub n: usize,
    /// Causal modes.
    pub m: usize,
    /// Children per subdivision step, `2^m`.
    pub k: usize,
    /// Subdivision steps until unit cells, `ceil(log_k n)`; the tree has
    /// `levels + 1` levels including the root.
    pub levels: usize,
    /// Segment-work units `n · levels + 1`: the root counts one, and each
    /// subdivision level touches every cell once. Equals `n·log_k(n) + 1`
    /// exactly when `n` is a power of `k`, otherwise the ceiling bound.
    pub s: usize,
    /// Whether `s` is exact (`n` a power of `k`).
    pub exact: bool,
    /// Amortized factorization time per work unit.
    pub t: f64,
    /// `t · s`: one worker processes every segment.
    pub serial_cost: f64,
    /// `t · (levels + 1)`: unbounded workers, one wave per tree level.
    pub distributed_cost: f64,
}

/// Builds the cost model; `t` is the amortized per-unit time (use 1.0 for
/// pure work-unit counts).
pub fn predict_cost(n: usize, m: usize, t: f64) -> Result<CostModel> {
    if n == 0 {
        return Err(Error::Value("cost model needs at least one cell".into()));
    }
    if m == 0 || m >= usize::BITS as usize {
        return Err(Error::Value(format!("causal mode count {m} out of range")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Value(format!("invalid per-unit time {t}")));
    }
    let k = 1usize << m;
    let mut levels = 0usize;
    let mut cap = 1usize;
    while cap < n {
        cap = cap.saturating_mul(k);
        levels += 1;
    }
    let s = n * levels + 1;
    Ok(CostModel {
        n,
        m,
        k,
        levels,
        s,
        exact: cap == n,
        t,
        serial_cost: t * s as f64,
        distributed_cost: t * (levels as f64 + 1.0),
    })
}

/// Work units of an explicitly enumerated recursive subdivision of `n = 2^q`
/// cells over `m` causal modes: extents are spread as evenly as possible,
/// every step halves each extent still above one, the root counts one unit
/// and every level of children counts each cell it covers once.
pub fn measure_subdivision(n: usize, m: usize) -> Result<usize> {
    if n == 0 || m == 0 {
        return Err(Error::Value("subdivision needs cells and modes".into()));
    }
    if !n.is_power_of_two() {
        return Err(Error::Value(format!(
            "subdivision enumeration needs a power-of-two cell count, got {n}"
        )));
    }
    let q = n.trailing_zeros() as usize;
    let mut exps = vec![q / m; m];
    for e in exps.iter_mut().take(q % m) {
        *e += 1;
    }
    let extents: Vec<usize> = exps.iter().map(|&e| 1usize << e).collect();

    fn units_below(extents: &[usize]) -> usize {
        if extents.iter().all(|&e| e == 1) {
            return 0;
        }
        let child: Vec<usize> = extents.iter().map(|&e| if e > 1 { e / 2 } else { 1 }).collect();
        let kids = 1usize << extents.iter().filter(|&&e| e > 1).count();
        let cells: usize = child.iter().product();
        kids * (cells + units_below(&child))
    }
    Ok(1 + units_below(&extents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::mmode_svd;
    use crate::linalg::max_principal_angle;
    use crate::synth::{gaussian_matrix, gaussian_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random tensor supported on the given mode-0 rows.
    fn supported_tensor(
        rng: &mut ChaCha8Rng,
        shape: &[usize],
        support: &[usize],
    ) -> DenseTensor {
        let mut t = gaussian_tensor(rng, shape).unwrap();
        let i0 = shape[0];
        let mut keep = vec![false; i0];
        for &r in support {
            keep[r] = true;
        }
        for (lin, x) in t.as_mut_slice().iter_mut().enumerate() {
            if !keep[lin % i0] {
                *x = 0.0;
            }
        }
        t
    }

    fn leaf(rng: &mut ChaCha8Rng, shape: &[usize], support: &[usize]) -> NodeFactorization {
        let seg = supported_tensor(rng, shape, support);
        leaf_factorize(&seg, support, &RankSpec::Full, "leaf").unwrap()
    }

    #[test]
    fn rank_one_leaf_keeps_one_sigma_per_mode() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [2.0, 1.0, -1.0];
        let c = [0.5, 4.0];
        let support = [2usize, 3, 4, 5];
        let t = DenseTensor::from_fn(&[8, 3, 2], |idx| {
            support
                .iter()
                .position(|&r| r == idx[0])
                .map_or(0.0, |p| a[p] * b[idx[1]] * c[idx[2]])
        })
        .unwrap();
        let node = leaf_factorize(&t, &support, &RankSpec::Full, "r1").unwrap();
        assert_eq!(node.ranks(), vec![1, 1, 1]);
        assert!(node.residual(&t).unwrap() < 1e-12);
        // embedded factor stays inside the support rows
        for r in [0usize, 1, 6, 7] {
            assert_eq!(node.modes[0].u.get(r, 0), 0.0);
        }
        // normalization round-trip: T̂ ×_c diag(σ_c) = T
        let mut back = node.normalized_core().unwrap();
        for cmode in 1..3 {
            back = back.mode_product(cmode, &Matrix::diag(&node.modes[cmode].sigma)).unwrap();
        }
        assert!(back.sub(&node.extended_core).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn zero_leaf_is_rejected() {
        let t = DenseTensor::zeros(&[6, 3, 2]).unwrap();
        let err = leaf_factorize(&t, &[0, 1, 2], &RankSpec::Full, "z").unwrap_err();
        assert!(matches!(err, Error::ZeroInput(_)));
    }

    #[test]
    fn leaf_rejects_mass_outside_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = gaussian_tensor(&mut rng, &[6, 3, 2]).unwrap();
        let err = leaf_factorize(&t, &[0, 1, 2], &RankSpec::Full, "bad").unwrap_err();
        assert!(matches!(err, Error::Hierarchy(_)));
    }

    #[test]
    fn full_rank_leaf_reconstructs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let support: Vec<usize> = vec![1, 2, 5, 7, 8, 9];
        let seg = supported_tensor(&mut rng, &[10, 4, 3], &support);
        let node = leaf_factorize(&seg, &support, &RankSpec::Full, "full").unwrap();
        assert!(node.residual(&seg).unwrap() < 1e-10);
    }

    #[test]
    fn single_child_merge_reproduces_the_child() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let child = leaf(&mut rng, &[8, 4, 3], &[1, 2, 3, 6]);
        let child_rec = child.reconstruct().unwrap();
        let child_sigmas: Vec<Vec<f64>> = child.modes.iter().map(|m| m.sigma.clone()).collect();
        let parent = merge_nodes("p", vec![child], &RankSpec::Full, false).unwrap();
        let diff = parent.reconstruct().unwrap().sub(&child_rec).unwrap().max_abs();
        assert!(diff < 1e-10, "single-child merge drifted by {diff}");
        for (m, sig) in child_sigmas.iter().enumerate() {
            assert_eq!(parent.modes[m].sigma.len(), sig.len());
            for (a, b) in parent.modes[m].sigma.iter().zip(sig) {
                assert!((a - b).abs() < 1e-10 * b.max(1.0));
            }
            let angle =
                max_principal_angle(&parent.modes[m].u, &parent.children[0].modes[m].u).unwrap();
            assert!(angle < 1e-10, "mode {m} subspace angle {angle}");
        }
        assert_eq!(parent.extended_core.shape(), child_rec.shape()[..1].iter().chain(parent.core.shape()[1..].iter()).copied().collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn orthogonal_children_union_their_sigmas() {
        // causal subspaces in disjoint coordinate groups => orthogonal blocks
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let shape = [8usize, 4, 3];
        let mut left = supported_tensor(&mut rng, &shape, &[0, 1, 2, 3]);
        let mut right = supported_tensor(&mut rng, &shape, &[4, 5, 6, 7]);
        // zero mode-1 rows {2,3} of the left part and {0,1} of the right part
        for (lin, x) in left.as_mut_slice().iter_mut().enumerate() {
            if (lin / 8) % 4 >= 2 {
                *x = 0.0;
            }
        }
        for (lin, x) in right.as_mut_slice().iter_mut().enumerate() {
            if (lin / 8) % 4 < 2 {
                *x = 0.0;
            }
        }
        let a = leaf_factorize(&left, &[0, 1, 2, 3], &RankSpec::Full, "a").unwrap();
        let b = leaf_factorize(&right, &[4, 5, 6, 7], &RankSpec::Full, "b").unwrap();
        let mut want: Vec<f64> = a.modes[1]
            .sigma
            .iter()
            .chain(b.modes[1].sigma.iter())
            .copied()
            .collect();
        want.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let merged = merge_children_mode(1, &[a, b], false).unwrap();
        assert_eq!(merged.sigma.len(), want.len());
        for (got, want) in merged.sigma.iter().zip(&want) {
            assert!((got - want).abs() < 1e-10, "sigma union mismatch: {got} vs {want}");
        }
    }

    #[test]
    fn qr_and_direct_merge_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let shape = [12usize, 4, 3];
        let kids = vec![
            leaf(&mut rng, &shape, &[0, 1, 2, 3]),
            leaf(&mut rng, &shape, &[4, 5, 6, 7]),
            leaf(&mut rng, &shape, &[8, 9, 10, 11]),
        ];
        for m in 0..3 {
            let qr = merge_children_mode(m, &kids, false).unwrap();
            let direct = merge_children_mode(m, &kids, true).unwrap();
            assert_eq!(qr.sigma.len(), direct.sigma.len());
            for (a, b) in qr.sigma.iter().zip(&direct.sigma) {
                assert!((a - b).abs() < 1e-10 * b.max(1.0));
            }
            let angle = max_principal_angle(&qr.u, &direct.u).unwrap();
            assert!(angle < 1e-10, "mode {m}: paths diverge by {angle}");
        }
    }

    #[test]
    fn merged_sigmas_match_the_parent_segments_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let shape = [10usize, 4, 3];
        let left = supported_tensor(&mut rng, &shape, &[0, 1, 2, 3, 4]);
        let right = supported_tensor(&mut rng, &shape, &[5, 6, 7, 8, 9]);
        let whole = left.add(&right).unwrap();
        let kids = vec![
            leaf_factorize(&left, &[0, 1, 2, 3, 4], &RankSpec::Full, "l").unwrap(),
            leaf_factorize(&right, &[5, 6, 7, 8, 9], &RankSpec::Full, "r").unwrap(),
        ];
        // causal modes only: the children's causal flattenings occupy
        // disjoint columns, so the stacked spectrum is the parent's spectrum
        // (mode 0 shares columns across children and has no such identity)
        for m in 1..3 {
            let merged = merge_children_mode(m, &kids, false).unwrap();
            let svd = thin_svd(&whole.matrixize(m).unwrap()).unwrap();
            for (j, got) in merged.sigma.iter().enumerate() {
                assert!(
                    (got - svd.s[j]).abs() < 1e-8 * svd.s[0],
                    "mode {m} sigma {j}: {got} vs {}",
                    svd.s[j]
                );
            }
        }
    }

    #[test]
    fn merge_commutes_over_child_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shape = [9usize, 4, 3];
        let kids = vec![
            leaf(&mut rng, &shape, &[0, 1, 2]),
            leaf(&mut rng, &shape, &[3, 4, 5]),
            leaf(&mut rng, &shape, &[6, 7, 8]),
        ];
        let swapped = vec![kids[2].clone(), kids[0].clone(), kids[1].clone()];
        let p = merge_nodes("p", kids, &RankSpec::Full, false).unwrap();
        let q = merge_nodes("q", swapped, &RankSpec::Full, false).unwrap();
        for m in 0..3 {
            let angle = max_principal_angle(&p.modes[m].u, &q.modes[m].u).unwrap();
            assert!(angle < 1e-10, "mode {m}: order changed the subspace by {angle}");
        }
        let diff = p.reconstruct().unwrap().sub(&q.reconstruct().unwrap()).unwrap().max_abs();
        assert!(diff < 1e-8, "order changed the reconstruction by {diff}");
    }

    #[test]
    fn three_level_incremental_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let d = gaussian_tensor(&mut rng, &[16, 4, 3]).unwrap();
        let spec = HierarchySpec::subdivision(
            16,
            2,
            3,
            vec![Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let model =
            incremental_block_svd(&d, &spec, &IncrementalConfig::default()).unwrap();
        assert_eq!(model.root.node_count(), 7);

        // merged root against the data and against a one-shot factorization
        let inc = model.root.reconstruct().unwrap();
        assert!(inc.sub(&d).unwrap().max_abs() < 1e-8);
        let batch = mmode_svd(&d, &RankSpec::Full).unwrap();
        assert!(batch.reconstruct().unwrap().sub(&inc).unwrap().max_abs() < 1e-8);
        for m in 0..3 {
            let angle =
                max_principal_angle(&model.root.modes[m].u, &batch.modes[m]).unwrap();
            assert!(angle < 1e-10, "mode {m}: incremental vs batch angle {angle}");
        }

        // the leaf view is a valid block model with the same reconstruction
        let bm = model.to_block_model().unwrap();
        bm.validate().unwrap();
        assert_eq!(bm.segments(), 4);
        assert!(bm.reconstruct().unwrap().sub(&d).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let d = gaussian_tensor(&mut rng, &[16, 4, 3]).unwrap();
        let spec = HierarchySpec::subdivision(
            16,
            4,
            2,
            vec![Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let serial = incremental_block_svd(&d, &spec, &IncrementalConfig::default()).unwrap();
        let par = incremental_block_svd(
            &d,
            &spec,
            &IncrementalConfig { parallel: true, ..IncrementalConfig::default() },
        )
        .unwrap();
        // same merge order => identical arithmetic
        let a = serial.root.reconstruct().unwrap();
        let b = par.root.reconstruct().unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn uncovered_rows_become_a_new_data_child() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let d = gaussian_tensor(&mut rng, &[8, 3, 2]).unwrap();
        let spec = HierarchySpec {
            measurement_dim: 8,
            nodes: vec![
                HierarchyNode {
                    id: "n0".into(),
                    parent: None,
                    filter: SegmentFilter::identity(8).unwrap(),
                },
                HierarchyNode {
                    id: "n1".into(),
                    parent: Some(0),
                    filter: SegmentFilter::range(0, 3).unwrap(),
                },
                HierarchyNode {
                    id: "n2".into(),
                    parent: Some(0),
                    filter: SegmentFilter::range(3, 3).unwrap(),
                },
            ],
            compositional: vec![Compositionality::Full, Compositionality::Full],
        };
        let model =
            incremental_block_svd(&d, &spec, &IncrementalConfig::default()).unwrap();
        assert_eq!(model.root.children.len(), 3);
        let extra = &model.root.children[2];
        assert_eq!(extra.id, "n0.new");
        assert_eq!(extra.support, vec![6, 7]);
        assert!(model.root.reconstruct().unwrap().sub(&d).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn appending_new_data_matches_refactorizing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = gaussian_tensor(&mut rng, &[12, 4, 3]).unwrap();
        let supports: [&[usize]; 3] = [&[0, 1, 2, 3], &[4, 5, 6, 7], &[8, 9, 10, 11]];
        let kids: Vec<NodeFactorization> = supports
            .iter()
            .map(|sup| {
                let seg = segment(&d, &SegmentFilter::block(sup.to_vec()).unwrap()).unwrap();
                leaf_factorize(&seg, sup, &RankSpec::Full, &format!("s{}", sup[0])).unwrap()
            })
            .collect();

        let scratch = merge_nodes("all", kids.clone(), &RankSpec::Full, false).unwrap();
        let mut kids = kids;
        let fresh = kids.pop().unwrap();
        let old = merge_nodes("old", kids, &RankSpec::Full, false).unwrap();
        let grown = append_child(old, fresh, &IncrementalConfig::default()).unwrap();

        for m in 0..3 {
            let angle = max_principal_angle(&grown.modes[m].u, &scratch.modes[m].u).unwrap();
            assert!(angle < 1e-6, "mode {m}: sequential vs scratch angle {angle}");
        }
        assert!(grown.reconstruct().unwrap().sub(&d).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn truncated_merge_accounts_for_its_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let shape = [10usize, 4, 3];
        let left = supported_tensor(&mut rng, &shape, &[0, 1, 2, 3, 4]);
        let right = supported_tensor(&mut rng, &shape, &[5, 6, 7, 8, 9]);
        let whole = left.add(&right).unwrap();
        let ranks = RankSpec::PerMode(vec![3, 2, 2]);
        let a = leaf_factorize(&left, &[0, 1, 2, 3, 4], &ranks, "a").unwrap();
        let b = leaf_factorize(&right, &[5, 6, 7, 8, 9], &ranks, "b").unwrap();
        let child_res = a.residual(&left).unwrap() + b.residual(&right).unwrap();
        let parent = merge_nodes("p", vec![a, b], &ranks, false).unwrap();
        let merge_loss: f64 = parent.discarded.iter().sum();
        let bound = child_res + merge_loss.sqrt();
        let got = parent.residual(&whole).unwrap();
        assert!(
            got <= bound * (1.0 + 1e-6) + 1e-12,
            "parent residual {got} above its budget {bound}"
        );
        assert!(merge_loss > 0.0, "rank 2 < 4 children must lose merge energy");
    }

    #[test]
    fn general_filters_apply_after_the_fact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = gaussian_tensor(&mut rng, &[8, 4, 3]).unwrap();
        let spec = HierarchySpec::subdivision(
            8,
            2,
            2,
            vec![Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let model = incremental_block_svd(&d, &spec, &IncrementalConfig::default())
            .unwrap()
            .to_block_model()
            .unwrap();

        // identity filters change nothing
        let id = apply_general_filters(&model, &[Matrix::identity(8), Matrix::identity(8)])
            .unwrap();
        let base = model.reconstruct().unwrap();
        assert!(id.reconstruct().unwrap().sub(&base).unwrap().max_abs() < 1e-12);

        // doubling one segment doubles exactly its rows
        let twice = apply_general_filters(
            &model,
            &[Matrix::identity(8).scale(2.0), Matrix::identity(8)],
        )
        .unwrap();
        let got = twice.reconstruct().unwrap();
        for (lin, (&g, &b)) in got.as_slice().iter().zip(base.as_slice()).enumerate() {
            let want = if lin % 8 < 4 { 2.0 * b } else { b };
            assert!((g - want).abs() < 1e-12);
        }

        // factorize-then-filter equals filter-then-sum for arbitrary filters
        let f1 = gaussian_matrix(&mut rng, 8, 8);
        let f2 = gaussian_matrix(&mut rng, 8, 8);
        let filtered = apply_general_filters(&model, &[f1.clone(), f2.clone()]).unwrap();
        let mut want = DenseTensor::zeros(d.shape()).unwrap();
        for (f, filt) in [f1, f2].iter().zip(&model.filters) {
            let seg = segment(&d, filt).unwrap();
            want = want.add(&seg.mode_product(0, f).unwrap()).unwrap();
        }
        let diff = filtered.reconstruct().unwrap().sub(&want).unwrap().max_abs();
        assert!(diff < 1e-8, "two filter paths disagree by {diff}");
        // composed filter is recorded on the model
        assert!(filtered.filters[0].general.is_some());
    }

    #[test]
    fn predicted_cost_matches_enumerated_subdivisions() {
        for m in 1..=3usize {
            for n in [16usize, 64, 256, 1024, 4096] {
                let cost = predict_cost(n, m, 1.0).unwrap();
                let measured = measure_subdivision(n, m).unwrap();
                assert_eq!(
                    cost.s, measured,
                    "m={m} n={n}: predicted {} vs enumerated {measured}",
                    cost.s
                );
            }
        }
        let c = predict_cost(16, 2, 1.0).unwrap();
        assert_eq!((c.k, c.s, c.levels), (4, 33, 2));
        assert!(c.exact);
        // one subdivision of n = k cells gives a two-level tree
        for m in 1..=3usize {
            let k = 1 << m;
            let c = predict_cost(k, m, 1.0).unwrap();
            assert_eq!(c.levels + 1, 2);
            assert_eq!(c.s, k + 1);
        }
        // non-conforming sizes fall back to the ceiling bound
        let c = predict_cost(16, 3, 1.0).unwrap();
        assert!(!c.exact);
        assert_eq!(c.s, 33);
        assert_eq!(c.s, measure_subdivision(16, 3).unwrap());
        // degenerate single cell: just the root
        assert_eq!(predict_cost(1, 2, 1.0).unwrap().s, 1);
        assert_eq!(measure_subdivision(1, 2).unwrap(), 1);
        // serial grows like n log n, distributed like log n
        let c = predict_cost(4096, 2, 0.5).unwrap();
        assert!((c.serial_cost - 0.5 * c.s as f64).abs() < 1e-12);
        assert!((c.distributed_cost - 0.5 * 7.0).abs() < 1e-12);
    }

    #[test]
    fn energy_rank_selection_prunes_merged_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        // strongly low-rank data: rank-2 causal structure plus tiny noise
        let shape = [12usize, 4, 3];
        let u = gaussian_matrix(&mut rng, 12, 2);
        let v = gaussian_matrix(&mut rng, 12, 2);
        let mut d = DenseTensor::zeros(&shape).unwrap();
        for (lin, x) in d.as_mut_slice().iter_mut().enumerate() {
            let i = lin % 12;
            let j = (lin / 12) % 4;
            let k = lin / 48;
            let col = (j + k) % 2;
            *x = u.get(i, col) + 1e-6 * v.get(i, (j + k + 1) % 2);
        }
        let spec = HierarchySpec::subdivision(
            12,
            2,
            2,
            vec![Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let cfg = IncrementalConfig {
            ranks: RankSpec::Energy(0.999),
            ..IncrementalConfig::default()
        };
        let model = incremental_block_svd(&d, &spec, &cfg).unwrap();
        // causal structure is rank 2 up to the 1e-6 perturbation; mode 0
        // stays rank 4 (each half-support carries its own pair of directions)
        assert_eq!(model.root.modes[1].sigma.len(), 2);
        assert_eq!(model.root.modes[2].sigma.len(), 2);
        let rel = model.root.reconstruct().unwrap().sub(&d).unwrap().frobenius_norm()
            / d.frobenius_norm();
        assert!(rel < 1e-3, "energy-truncated model lost {rel} of the data");
    }
}
