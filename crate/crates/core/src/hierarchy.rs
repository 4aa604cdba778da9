//! Segment filter banks and whole/part hierarchies over the measurement mode.
//!
//! A segment is a filtered copy of the data tensor, `D_s = D ×_0 H_s`, where
//! `H_s = F_s · S_s` combines a 0/1 diagonal selection `S_s` (the segment's
//! row support) with an optional general transform `F_s`. A family of filters
//! whose `H_s` sum to the identity is a bank: the segments then sum back to
//! the data exactly. Hierarchies arrange filters in a tree whose leaves form
//! a bank and whose internal nodes are reproduced by their children.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

/// Tolerance for all bank-identity checks.
pub const BANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    /// Pure selection: identity restricted to the support rows.
    BlockIdentity,
    /// Selection followed by a general matrix.
    General,
}

/// One segment filter `H = F · S` on mode 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFilter {
    /// Sorted, deduplicated mode-0 row indices (non-empty).
    pub support: Vec<usize>,
    /// Optional transform applied after selection; `None` = block identity.
    pub general: Option<Matrix>,
}

impl SegmentFilter {
    /// Block identity over an explicit index set.
    pub fn block(mut support: Vec<usize>) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            return Err(Error::Hierarchy("empty filter support".into()));
        }
        Ok(SegmentFilter { support, general: None })
    }

    /// Block identity over the contiguous range `start .. start + len`.
    pub fn range(start: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Hierarchy("empty filter support".into()));
        }
        Ok(SegmentFilter { support: (start..start + len).collect(), general: None })
    }

    /// Identity over a full axis of the given extent.
    pub fn identity(i0: usize) -> Result<Self> {
        Self::range(0, i0)
    }

    pub fn kind(&self) -> FilterKind {
        if self.general.is_some() {
            FilterKind::General
        } else {
            FilterKind::BlockIdentity
        }
    }

    /// True when the support is a contiguous index range.
    pub fn is_contiguous(&self) -> bool {
        self.support.windows(2).all(|w| w[1] == w[0] + 1)
    }

    fn check_dims(&self, i0: usize) -> Result<()> {
        if let Some(&max) = self.support.last() {
            if max >= i0 {
                return Err(Error::Shape(format!(
                    "filter support index {max} out of range for extent {i0}"
                )));
            }
        } else {
            return Err(Error::Hierarchy("empty filter support".into()));
        }
        if let Some(f) = &self.general {
            if f.rows() != i0 || f.cols() != i0 {
                return Err(Error::Shape(format!(
                    "general filter is {}x{}, expected {i0}x{i0}",
                    f.rows(),
                    f.cols()
                )));
            }
        }
        Ok(())
    }

    /// Materialize `H = F · S` at the given mode-0 extent.
    pub fn matrix(&self, i0: usize) -> Result<Matrix> {
        self.check_dims(i0)?;
        let mut s = Matrix::zeros(i0, i0);
        for &i in &self.support {
            s.set(i, i, 1.0);
        }
        match &self.general {
            None => Ok(s),
            Some(f) => f.matmul(&s),
        }
    }
}

/// `D_s = D ×_0 H_s`. Block-identity filters take a masked-copy fast path.
pub fn segment(d: &DenseTensor, f: &SegmentFilter) -> Result<DenseTensor> {
    let i0 = d.extent(0);
    f.check_dims(i0)?;
    if f.general.is_none() {
        let mut keep = vec![false; i0];
        for &i in &f.support {
            keep[i] = true;
        }
        let mut out = DenseTensor::zeros(d.shape())?;
        let src = d.as_slice();
        let dst = out.as_mut_slice();
        for (lin, x) in dst.iter_mut().enumerate() {
            if keep[lin % i0] {
                *x = src[lin];
            }
        }
        return Ok(out);
    }
    d.mode_product(0, &f.matrix(i0)?)
}

/// Result of checking `Σ_s H_s = I`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankReport {
    pub max_deviation: f64,
    pub pass: bool,
}

/// Max abs deviation of `Σ H_s` from the identity; an empty list fails with
/// deviation 1 (nothing sums to the identity).
pub fn validate_bank(filters: &[SegmentFilter], i0: usize) -> Result<BankReport> {
    if filters.is_empty() {
        return Ok(BankReport { max_deviation: 1.0, pass: false });
    }
    let mut sum = Matrix::zeros(i0, i0);
    for f in filters {
        sum = sum.add(&f.matrix(i0)?)?;
    }
    let dev = sum.sub(&Matrix::identity(i0))?.max_abs();
    Ok(BankReport { max_deviation: dev, pass: dev <= BANK_TOL })
}

/// Compositionality of one causal factor across segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compositionality {
    /// Every segment carries its own factor block.
    Full,
    /// One factor block serves all segments.
    Shared,
}

#[derive(Debug, Clone)]
pub struct HierarchyNode {
    pub id: String,
    /// Index of the parent in `HierarchySpec::nodes`; `None` for the root.
    pub parent: Option<usize>,
    pub filter: SegmentFilter,
}

/// A whole/part tree of segment filters plus per-factor compositionality.
#[derive(Debug, Clone)]
pub struct HierarchySpec {
    /// Mode-0 extent the filters act on.
    pub measurement_dim: usize,
    pub nodes: Vec<HierarchyNode>,
    /// One flag per causal factor `1..=C` (index 0 ↔ factor 1).
    pub compositional: Vec<Compositionality>,
}

impl HierarchySpec {
    /// Single-node hierarchy: the whole axis as one segment.
    pub fn single(i0: usize, compositional: Vec<Compositionality>) -> Result<Self> {
        let spec = HierarchySpec {
            measurement_dim: i0,
            nodes: vec![HierarchyNode {
                id: "root".into(),
                parent: None,
                filter: SegmentFilter::identity(i0)?,
            }],
            compositional,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Tree of contiguous splits: `levels` total levels, each internal node
    /// split into `arity` near-equal contiguous chunks.
    pub fn subdivision(
        i0: usize,
        arity: usize,
        levels: usize,
        compositional: Vec<Compositionality>,
    ) -> Result<Self> {
        if arity < 2 {
            return Err(Error::Value("subdivision arity must be at least 2".into()));
        }
        if levels == 0 {
            return Err(Error::Value("subdivision needs at least one level".into()));
        }
        let mut nodes = vec![HierarchyNode {
            id: "n0".into(),
            parent: None,
            filter: SegmentFilter::identity(i0)?,
        }];
        // (node index, start, len, level)
        let mut frontier = vec![(0usize, 0usize, i0, 1usize)];
        while let Some((idx, start, len, level)) = frontier.pop() {
            if level == levels {
                continue;
            }
            if len < arity {
                return Err(Error::Hierarchy(format!(
                    "cannot split a segment of {len} rows into {arity} parts"
                )));
            }
            let base = len / arity;
            let extra = len % arity;
            let mut s = start;
            for k in 0..arity {
                let chunk = base + usize::from(k < extra);
                let child = nodes.len();
                nodes.push(HierarchyNode {
                    id: format!("n{child}"),
                    parent: Some(idx),
                    filter: SegmentFilter::range(s, chunk)?,
                });
                frontier.push((child, s, chunk, level + 1));
                s += chunk;
            }
        }
        let spec = HierarchySpec { measurement_dim: i0, nodes, compositional };
        spec.validate()?;
        Ok(spec)
    }

    pub fn root(&self) -> Result<usize> {
        let mut roots = self.nodes.iter().enumerate().filter(|(_, n)| n.parent.is_none());
        match (roots.next(), roots.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(Error::Hierarchy("no root node".into())),
            (Some(_), Some(_)) => Err(Error::Hierarchy("more than one root node".into())),
        }
    }

    /// Children of a node, ordered by ascending support start (ties keep
    /// insertion order).
    pub fn children(&self, idx: usize) -> Vec<usize> {
        let mut kids: Vec<usize> = (0..self.nodes.len())
            .filter(|&k| self.nodes[k].parent == Some(idx))
            .collect();
        kids.sort_by_key(|&k| (self.nodes[k].filter.support[0], k));
        kids
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.nodes.iter().all(|n| n.parent != Some(idx))
    }

    /// Leaf indices in depth-first order (children by ascending support start).
    pub fn leaves(&self) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()?];
        while let Some(idx) = stack.pop() {
            let kids = self.children(idx);
            if kids.is_empty() {
                out.push(idx);
            } else {
                // push reversed so the lowest-start child is visited first
                stack.extend(kids.into_iter().rev());
            }
        }
        Ok(out)
    }

    /// Leaf filters in depth-first order: the segment bank.
    pub fn leaf_filters(&self) -> Result<Vec<SegmentFilter>> {
        Ok(self.leaves()?.into_iter().map(|i| self.nodes[i].filter.clone()).collect())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> Result<usize> {
        Ok(self.leaves()?.len())
    }

    /// Structural checks only: one root, acyclic, in-range parents, filters
    /// dimensioned for the axis, child supports within parent supports.
    pub fn validate_structure(&self) -> Result<()> {
        if self.measurement_dim == 0 {
            return Err(Error::Hierarchy("measurement dimension is zero".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Hierarchy("hierarchy has no nodes".into()));
        }
        self.root()?;
        let mut ids = std::collections::BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::Hierarchy(format!("duplicate node id {:?}", n.id)));
            }
            if let Some(p) = n.parent {
                if p >= self.nodes.len() {
                    return Err(Error::Hierarchy(format!("node {i} has out-of-range parent {p}")));
                }
            }
            n.filter.check_dims(self.measurement_dim)?;
        }
        // cycle check: every node must reach the root in <= n steps
        for start in 0..self.nodes.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.nodes[cur].parent {
                cur = p;
                steps += 1;
                if steps > self.nodes.len() {
                    return Err(Error::Hierarchy(format!("cycle through node {start}")));
                }
            }
        }
        // support containment
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                let parent = &self.nodes[p].filter.support;
                for &row in &n.filter.support {
                    if parent.binary_search(&row).is_err() {
                        return Err(Error::Hierarchy(format!(
                            "node {i} support row {row} outside parent support"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full validation: structure, root filter = identity, and every internal
    /// node's children summing to the node's own filter within `BANK_TOL`.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let i0 = self.measurement_dim;
        let root = self.root()?;
        let dev = self.nodes[root]
            .filter
            .matrix(i0)?
            .sub(&Matrix::identity(i0))?
            .max_abs();
        if dev > BANK_TOL {
            return Err(Error::Hierarchy(format!(
                "root filter deviates from identity by {dev:.3e}"
            )));
        }
        for idx in 0..self.nodes.len() {
            let kids = self.children(idx);
            if kids.is_empty() {
                continue;
            }
            let mut sum = Matrix::zeros(i0, i0);
            for k in kids {
                sum = sum.add(&self.nodes[k].filter.matrix(i0)?)?;
            }
            let dev = sum.sub(&self.nodes[idx].filter.matrix(i0)?).map(|m| m.max_abs())?;
            if dev > BANK_TOL {
                return Err(Error::Hierarchy(format!(
                    "children of node {:?} deviate from it by {dev:.3e}",
                    self.nodes[idx].id
                )));
            }
        }
        Ok(())
    }

    /// Rewrites overlapping block-identity sibling groups into the disjoint
    /// atoms of their intersection lattice. Each atom (a maximal index set
    /// with identical sibling membership) is assigned to its smallest
    /// containing sibling (ties: lowest support start, then node order). A
    /// sibling keeps its identity and gains its atoms as children when it
    /// receives more than one; with a single atom its support is rewritten in
    /// place. Disjoint groups pass through untouched, so the operation is
    /// idempotent. Overlapping siblings must be block-identity leaves.
    pub fn expand_overlaps(&self) -> Result<HierarchySpec> {
        self.validate_structure()?;
        let root = self.root()?;
        let mut out = HierarchySpec {
            measurement_dim: self.measurement_dim,
            nodes: Vec::new(),
            compositional: self.compositional.clone(),
        };
        self.expand_rec(root, None, &mut out)?;
        out.validate_structure()?;
        Ok(out)
    }

    fn expand_rec(
        &self,
        idx: usize,
        new_parent: Option<usize>,
        out: &mut HierarchySpec,
    ) -> Result<()> {
        let me = out.nodes.len();
        out.nodes.push(HierarchyNode {
            id: self.nodes[idx].id.clone(),
            parent: new_parent,
            filter: self.nodes[idx].filter.clone(),
        });
        let kids = self.children(idx);
        if kids.is_empty() {
            return Ok(());
        }
        // detect any pairwise support overlap among the children
        let mut owners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, &k) in kids.iter().enumerate() {
            for &row in &self.nodes[k].filter.support {
                owners.entry(row).or_default().push(pos);
            }
        }
        let overlapping = owners.values().any(|v| v.len() > 1);
        if !overlapping {
            for k in kids {
                self.expand_rec(k, Some(me), out)?;
            }
            return Ok(());
        }
        for &k in &kids {
            if !self.is_leaf(k) || self.nodes[k].filter.kind() != FilterKind::BlockIdentity {
                return Err(Error::Hierarchy(format!(
                    "overlapping sibling {:?} must be a block-identity leaf",
                    self.nodes[k].id
                )));
            }
        }
        // group rows by exact membership set -> atoms of the intersection lattice
        let mut atoms: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (row, members) in &owners {
            atoms.entry(members.clone()).or_default().push(*row);
        }
        // assign each atom to its smallest containing sibling
        let mut assigned: Vec<Vec<Vec<usize>>> = vec![Vec::new(); kids.len()];
        for (members, rows) in atoms {
            let best = members
                .iter()
                .copied()
                .min_by_key(|&pos| {
                    let s = &self.nodes[kids[pos]].filter.support;
                    (s.len(), s[0], pos)
                })
                .expect("atom has at least one member");
            assigned[best].push(rows);
        }
        for (pos, &k) in kids.iter().enumerate() {
            let mut mine = std::mem::take(&mut assigned[pos]);
            if mine.is_empty() {
                // support fully claimed by an equal sibling; drop the node
                continue;
            }
            mine.sort_by_key(|rows| rows[0]);
            let union: Vec<usize> = {
                let mut u: Vec<usize> = mine.iter().flatten().copied().collect();
                u.sort_unstable();
                u
            };
            let child = out.nodes.len();
            out.nodes.push(HierarchyNode {
                id: self.nodes[k].id.clone(),
                parent: Some(me),
                filter: SegmentFilter { support: union, general: None },
            });
            if mine.len() > 1 {
                for (a, rows) in mine.into_iter().enumerate() {
                    out.nodes.push(HierarchyNode {
                        id: format!("{}.{a}", self.nodes[k].id),
                        parent: Some(child),
                        filter: SegmentFilter { support: rows, general: None },
                    });
                }
            }
        }
        Ok(())
    }

    /// Adds `levels` pyramid-band children under a leaf node with a
    /// contiguous block-identity support.
    pub fn attach_pyramid(&mut self, idx: usize, levels: usize) -> Result<()> {
        if idx >= self.nodes.len() {
            return Err(Error::Hierarchy(format!("no node {idx}")));
        }
        if !self.is_leaf(idx) {
            return Err(Error::Hierarchy("pyramid target already has children".into()));
        }
        let filter = self.nodes[idx].filter.clone();
        if filter.kind() != FilterKind::BlockIdentity || !filter.is_contiguous() {
            return Err(Error::Hierarchy(
                "pyramid target must be a contiguous block-identity segment".into(),
            ));
        }
        let start = filter.support[0];
        let len = filter.support.len();
        let bands = pyramid_filters(levels, len)?;
        let i0 = self.measurement_dim;
        let id = self.nodes[idx].id.clone();
        for (k, band) in bands.into_iter().enumerate() {
            let general = match band.general {
                None => None, // levels == 1: identity band
                Some(f) => {
                    let mut emb = Matrix::zeros(i0, i0);
                    for a in 0..len {
                        for b in 0..len {
                            emb.set(start + a, start + b, f.get(a, b));
                        }
                    }
                    Some(emb)
                }
            };
            self.nodes.push(HierarchyNode {
                id: format!("{id}.p{k}"),
                parent: Some(idx),
                filter: SegmentFilter { support: filter.support.clone(), general },
            });
        }
        Ok(())
    }
}

/// The data tensor split through every node's filter.
#[derive(Debug, Clone)]
pub struct HierarchicalView {
    pub spec: HierarchySpec,
    /// One segment tensor per spec node, same indexing.
    pub tensors: Vec<DenseTensor>,
}

impl HierarchicalView {
    pub fn node_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn leaf_count(&self) -> Result<usize> {
        self.spec.leaf_count()
    }

    /// Sum of the leaf segments; equals the original data for a valid bank.
    pub fn sum_leaves(&self) -> Result<DenseTensor> {
        let leaves = self.spec.leaves()?;
        let mut acc = self.tensors[leaves[0]].clone();
        for &l in &leaves[1..] {
            acc = acc.add(&self.tensors[l])?;
        }
        Ok(acc)
    }
}

/// Filters every node of the hierarchy through the data tensor. The spec is
/// fully validated first; distinct segments are computed in parallel.
pub fn assemble_hierarchical(d: &DenseTensor, spec: &HierarchySpec) -> Result<HierarchicalView> {
    spec.validate()?;
    if d.extent(0) != spec.measurement_dim {
        return Err(Error::Shape(format!(
            "data extent {} differs from hierarchy dimension {}",
            d.extent(0),
            spec.measurement_dim
        )));
    }
    let tensors: Vec<DenseTensor> = spec
        .nodes
        .par_iter()
        .map(|n| segment(d, &n.filter))
        .collect::<Result<_>>()?;
    Ok(HierarchicalView { spec: spec.clone(), tensors })
}

/// Circulant blur with kernel (1/4, 1/2, 1/4) on a length-`n` axis.
fn blur_matrix(n: usize) -> Matrix {
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for (off, w) in [(n - 1, 0.25), (0, 0.5), (1, 0.25)] {
            let j = (i + off) % n;
            b.set(i, j, b.get(i, j) + w);
        }
    }
    b
}

/// Band-pass pyramid over a length-`base_support` axis: repeated blurs
/// `G_k = B^k` yield bands `G_{k-1} - G_k` (fine to coarse) plus the final
/// low-pass `G_{levels-1}`. The bands telescope, so the bank sums to the
/// identity exactly. One level degenerates to a single identity filter.
pub fn pyramid_filters(levels: usize, base_support: usize) -> Result<Vec<SegmentFilter>> {
    if levels == 0 {
        return Err(Error::Value("pyramid needs at least one level".into()));
    }
    if base_support == 0 {
        return Err(Error::Hierarchy("empty pyramid support".into()));
    }
    if levels > 1 && (1usize << (levels - 1)) > base_support {
        return Err(Error::Hierarchy(format!(
            "{levels} pyramid levels exceed a support of {base_support} rows"
        )));
    }
    if levels == 1 {
        return Ok(vec![SegmentFilter::identity(base_support)?]);
    }
    let b = blur_matrix(base_support);
    let support: Vec<usize> = (0..base_support).collect();
    let mut filters = Vec::with_capacity(levels);
    let mut g_prev = Matrix::identity(base_support);
    for _ in 1..levels {
        let g_next = b.matmul(&g_prev)?;
        filters.push(SegmentFilter {
            support: support.clone(),
            general: Some(g_prev.sub(&g_next)?),
        });
        g_prev = g_next;
    }
    filters.push(SegmentFilter { support, general: Some(g_prev) });
    Ok(filters)
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

/// Support field: `[start, len]` contiguous range or explicit indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupportConfig {
    Range([usize; 2]),
    Explicit { indices: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub support: SupportConfig,
    /// `"identity"` or `"pyramid:L"` (the node stays a block-identity
    /// segment and gains L auto-generated band children).
    #[serde(default = "identity_filter_name")]
    pub filter: String,
}

fn identity_filter_name() -> String {
    "identity".into()
}

/// Textual hierarchy description; see `HierarchyConfig::to_spec`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub measurement_dim: usize,
    pub nodes: Vec<NodeConfig>,
    /// Causal factor index (as text, `"1"`..) to `"full"` or `"shared"`.
    #[serde(default)]
    pub compositional: BTreeMap<String, String>,
}

impl HierarchyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the in-memory spec: resolves parent ids, materializes supports,
    /// and expands `pyramid:L` shorthand into band children.
    pub fn to_spec(&self) -> Result<HierarchySpec> {
        let mut index_of = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index_of.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Hierarchy(format!("duplicate node id {:?}", n.id)));
            }
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut pyramids = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = match &n.parent {
                None => None,
                Some(pid) => Some(*index_of.get(pid.as_str()).ok_or_else(|| {
                    Error::Hierarchy(format!("node {:?} names unknown parent {pid:?}", n.id))
                })?),
            };
            let filter = match &n.support {
                SupportConfig::Range([start, len]) => SegmentFilter::range(*start, *len)?,
                SupportConfig::Explicit { indices } => SegmentFilter::block(indices.clone())?,
            };
            match n.filter.as_str() {
                "identity" => {}
                other => match other.strip_prefix("pyramid:") {
                    Some(l) => {
                        let levels: usize = l.parse().map_err(|_| {
                            Error::Hierarchy(format!("bad pyramid level count {l:?}"))
                        })?;
                        pyramids.push((i, levels));
                    }
                    None => {
                        return Err(Error::Hierarchy(format!(
                            "unknown filter kind {:?} on node {:?}",
                            n.filter, n.id
                        )))
                    }
                },
            }
            nodes.push(HierarchyNode { id: n.id.clone(), parent, filter });
        }
        let compositional = parse_compositional(&self.compositional)?;
        let mut spec =
            HierarchySpec { measurement_dim: self.measurement_dim, nodes, compositional };
        for (idx, levels) in pyramids {
            spec.attach_pyramid(idx, levels)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_compositional(map: &BTreeMap<String, String>) -> Result<Vec<Compositionality>> {
    let mut flags = vec![None; map.len()];
    for (key, value) in map {
        let c: usize = key
            .parse()
            .map_err(|_| Error::Hierarchy(format!("bad factor index {key:?}")))?;
        if c == 0 || c > map.len() {
            return Err(Error::Hierarchy(format!(
                "factor indices must cover 1..={}, got {key:?}",
                map.len()
            )));
        }
        flags[c - 1] = Some(match value.as_str() {
            "full" => Compositionality::Full,
            "shared" => Compositionality::Shared,
            other => {
                return Err(Error::Hierarchy(format!(
                    "factor {key} has unknown compositionality {other:?}"
                )))
            }
        });
    }
    Ok(flags.into_iter().map(|f| f.expect("indices cover 1..=C")).collect())
}
