//! Block factorization: alternating least squares over per-segment factor
//! blocks with a block super-diagonal core.
//!
//! The model approximates `D ≈ Σ_s Z_s ×_0 U_{0,s} ×_1 U^eff_{1,s} ... ×_C
//! U^eff_{C,s}` where segment `s` owns its measurement block `U_{0,s}`
//! (supported on the segment's mode-0 rows) and each causal factor is either
//! compositional (one block per segment) or shared (a single matrix serving
//! every segment). The conceptual sparse tensor with `Z_s` on the block
//! super-diagonal is never materialized; solves work on the blocks directly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::hierarchy::{Compositionality, FilterKind, HierarchySpec, SegmentFilter};
use crate::linalg::{pinv_default, thin_qr, thin_svd, ThinSvd};
use crate::matrix::{kronecker, Matrix};
use crate::tensor::DenseTensor;

/// Per-(segment, mode) rank selection for block solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockRankSpec {
    /// Per-block full rank (bounded by block extents).
    Full,
    /// One rank per mode `0..=C`, applied to every segment.
    Uniform(Vec<usize>),
    /// Explicit rank per segment per mode, indexed `[segment][mode]`.
    PerSegment(Vec<Vec<usize>>),
}

impl BlockRankSpec {
    /// Resolves to explicit `[segment][mode]` ranks and validates them
    /// against the data shape, segment supports, and shared-factor equality.
    pub fn resolve(
        &self,
        shape: &[usize],
        filters: &[SegmentFilter],
        compositional: &[Compositionality],
    ) -> Result<Vec<Vec<usize>>> {
        let order = shape.len();
        let s_count = filters.len();
        let causal_product: usize = shape[1..].iter().product();
        let ranks: Vec<Vec<usize>> = match self {
            BlockRankSpec::Full => filters
                .iter()
                .map(|f| {
                    let mut r = Vec::with_capacity(order);
                    r.push(f.support.len().min(causal_product));
                    for (m, &i) in shape.iter().enumerate().skip(1) {
                        let other: usize =
                            f.support.len() * shape[1..].iter().enumerate()
                                .filter(|(n, _)| n + 1 != m)
                                .map(|(_, &e)| e)
                                .product::<usize>();
                        r.push(i.min(other));
                    }
                    r
                })
                .collect(),
            BlockRankSpec::Uniform(per_mode) => {
                if per_mode.len() != order {
                    return Err(Error::Value(format!(
                        "{} ranks for an order-{order} tensor",
                        per_mode.len()
                    )));
                }
                vec![per_mode.clone(); s_count]
            }
            BlockRankSpec::PerSegment(table) => {
                if table.len() != s_count {
                    return Err(Error::Value(format!(
                        "rank table has {} segments, hierarchy has {s_count}",
                        table.len()
                    )));
                }
                for row in table {
                    if row.len() != order {
                        return Err(Error::Value(format!(
                            "{} ranks for an order-{order} tensor",
                            row.len()
                        )));
                    }
                }
                table.clone()
            }
        };
        for (s, (row, f)) in ranks.iter().zip(filters).enumerate() {
            if row[0] == 0 || row[0] > f.support.len() {
                return Err(Error::Value(format!(
                    "segment {s}: measurement rank {} outside 1..={}",
                    row[0],
                    f.support.len()
                )));
            }
            for (m, (&j, &e)) in row.iter().zip(shape).enumerate().skip(1) {
                if j == 0 || j > e {
                    return Err(Error::Value(format!(
                        "segment {s} mode {m}: rank {j} outside 1..={e}"
                    )));
                }
            }
        }
        for (c, flag) in compositional.iter().enumerate() {
            if *flag == Compositionality::Shared {
                let j = ranks[0][c + 1];
                if ranks.iter().any(|row| row[c + 1] != j) {
                    return Err(Error::Value(format!(
                        "shared factor {} needs one rank across segments",
                        c + 1
                    )));
                }
            }
        }
        Ok(ranks)
    }
}

/// Storage layout of one causal factor across segments.
#[derive(Debug, Clone)]
pub enum FactorLayout {
    /// One `I_c x J_{c,s}` block per segment.
    Compositional(Vec<Matrix>),
    /// A single `I_c x J_c` matrix serving every segment.
    Shared(Matrix),
}

impl FactorLayout {
    pub fn block(&self, s: usize) -> &Matrix {
        match self {
            FactorLayout::Compositional(blocks) => &blocks[s],
            FactorLayout::Shared(u) => u,
        }
    }

    /// Concatenated view `[U_{c,1} | ... | U_{c,S}]` (the shared case is its
    /// own single block).
    pub fn concatenated(&self) -> Result<Matrix> {
        match self {
            FactorLayout::Compositional(blocks) => {
                let refs: Vec<&Matrix> = blocks.iter().collect();
                Matrix::hcat(&refs)
            }
            FactorLayout::Shared(u) => Ok(u.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockFactorModel {
    /// The whole/part tree the segments came from.
    pub hierarchy: HierarchySpec,
    /// Leaf filters in segment order (cached from the hierarchy).
    pub filters: Vec<SegmentFilter>,
    /// Per-segment cores `Z_s` (the block super-diagonal).
    pub cores: Vec<DenseTensor>,
    /// Per-segment measurement matrices `U_{0,s}`, `I_0 x J_{0,s}`, zero
    /// outside the segment's support rows.
    pub measurement: Vec<Matrix>,
    /// One layout per causal factor `1..=C`.
    pub causal: Vec<FactorLayout>,
    /// Singular values per `[segment][mode]` from the most recent per-block
    /// factorization step (not refreshed by ALS sweeps).
    pub sigmas: Vec<Vec<Vec<f64>>>,
    /// Penalty weights per `[causal factor][segment]` (penalty mode only).
    pub lambdas: Vec<Vec<f64>>,
    /// Mean measurement vector added on reconstruction (length `I_0`).
    pub mean: Vec<f64>,
}

impl BlockFactorModel {
    pub fn segments(&self) -> usize {
        self.cores.len()
    }

    /// Tensor order `1 + C`.
    pub fn order(&self) -> usize {
        1 + self.causal.len()
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement[0].rows()
    }

    /// The factor multiplying mode `m` for segment `s`.
    pub fn factor(&self, m: usize, s: usize) -> &Matrix {
        if m == 0 {
            &self.measurement[s]
        } else {
            self.causal[m - 1].block(s)
        }
    }

    /// Effective causal factor for `(c, s)`, `c` in `1..=C`.
    pub fn effective_factor(&self, c: usize, s: usize) -> &Matrix {
        self.causal[c - 1].block(s)
    }

    pub fn ranks(&self) -> Vec<Vec<usize>> {
        (0..self.segments())
            .map(|s| (0..self.order()).map(|m| self.factor(m, s).cols()).collect())
            .collect()
    }

    fn term(&self, s: usize) -> Result<DenseTensor> {
        let mut t = self.cores[s].clone();
        for m in 0..self.order() {
            t = t.mode_product(m, self.factor(m, s))?;
        }
        Ok(t)
    }

    /// `Σ_s Z_s ×_m U_{m,s}` plus the broadcast mean.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let mut acc = self.term(0)?;
        for s in 1..self.segments() {
            acc = acc.add(&self.term(s)?)?;
        }
        if self.mean.iter().any(|&x| x != 0.0) {
            let i0 = self.measurement_dim();
            for (lin, x) in acc.as_mut_slice().iter_mut().enumerate() {
                *x += self.mean[lin % i0];
            }
        }
        Ok(acc)
    }

    /// Squared Frobenius distance between `d` and the reconstruction.
    pub fn loss(&self, d: &DenseTensor) -> Result<f64> {
        Ok(d.sub(&self.reconstruct()?)?.frobenius_norm().powi(2))
    }

    /// Flat single-segment view of segment `s` (measurement block embedded
    /// at full `I_0`).
    pub fn segment_model(&self, s: usize) -> FactorModel {
        let mut modes = vec![self.measurement[s].clone()];
        for c in 1..self.order() {
            modes.push(self.effective_factor(c, s).clone());
        }
        FactorModel {
            core: self.cores[s].clone(),
            modes,
            sigmas: self.sigmas[s].clone(),
            mean: self.mean.clone(),
        }
    }

    /// Σ of the orthonormality penalties `λ_{c,s} ‖U_{c,s}ᵀU_{c,s} − I‖²`.
    pub fn penalty(&self) -> f64 {
        let mut total = 0.0;
        for (c, layout) in self.causal.iter().enumerate() {
            match layout {
                FactorLayout::Compositional(blocks) => {
                    for (s, b) in blocks.iter().enumerate() {
                        total += self.lambdas[c][s] * gram_residual_sq(b);
                    }
                }
                FactorLayout::Shared(u) => total += self.lambdas[c][0] * gram_residual_sq(u),
            }
        }
        total
    }

    /// Shape/consistency checks: block dimensions, support masking, layouts.
    pub fn validate(&self) -> Result<()> {
        let s_count = self.segments();
        if s_count == 0 {
            return Err(Error::Value("block model has no segments".into()));
        }
        if self.filters.len() != s_count || self.measurement.len() != s_count {
            return Err(Error::Shape("segment-indexed fields disagree on S".into()));
        }
        let i0 = self.measurement_dim();
        if self.mean.len() != i0 {
            return Err(Error::Shape("mean length differs from measurement dim".into()));
        }
        for layout in &self.causal {
            if let FactorLayout::Compositional(blocks) = layout {
                if blocks.len() != s_count {
                    return Err(Error::Shape("compositional factor missing blocks".into()));
                }
            }
        }
        for s in 0..s_count {
            let core = &self.cores[s];
            if core.order() != self.order() {
                return Err(Error::Shape(format!("segment {s}: core order mismatch")));
            }
            for m in 0..self.order() {
                let u = self.factor(m, s);
                if u.cols() != core.extent(m) {
                    return Err(Error::Shape(format!(
                        "segment {s} mode {m}: factor has {} columns, core extent {}",
                        u.cols(),
                        core.extent(m)
                    )));
                }
                if m >= 1 && u.rows() != self.factor(m, 0).rows() {
                    return Err(Error::Shape(format!("segment {s} mode {m}: row mismatch")));
                }
            }
            let u0 = &self.measurement[s];
            if u0.rows() != i0 {
                return Err(Error::Shape(format!("segment {s}: measurement rows != I_0")));
            }
            let mut inside = vec![false; i0];
            for &r in &self.filters[s].support {
                inside[r] = true;
            }
            for c in 0..u0.cols() {
                for (r, &keep) in inside.iter().enumerate() {
                    if !keep && u0.get(r, c) != 0.0 {
                        return Err(Error::Shape(format!(
                            "segment {s}: measurement block leaks outside its support at row {r}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn gram_residual_sq(u: &Matrix) -> f64 {
    let g = u.transpose().matmul(u).expect("square gram");
    let mut total = 0.0;
    for c in 0..g.cols() {
        for r in 0..g.rows() {
            let want = if r == c { 1.0 } else { 0.0 };
            total += (g.get(r, c) - want).powi(2);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Orthonormalization {
    /// Re-orthonormalize each block after its least-squares update (the
    /// change of basis is absorbed into the cores, leaving loss untouched).
    Hard,
    /// Keep raw least-squares blocks; the orthonormality penalty with this
    /// weight is monitored in the report. Experimental.
    Penalty(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSolverConfig {
    /// Stop when the loss decrease falls to `eps * ‖D‖²`. Must be > 0.
    pub eps: f64,
    /// Sweep cap; 0 returns the initialization.
    pub max_iters: usize,
    pub orthonormalization: Orthonormalization,
    pub ranks: BlockRankSpec,
    /// Run per-segment sub-problems on the global thread pool.
    pub parallel: bool,
}

impl Default for BlockSolverConfig {
    fn default() -> Self {
        BlockSolverConfig {
            eps: 1e-9,
            max_iters: 100,
            orthonormalization: Orthonormalization::Hard,
            ranks: BlockRankSpec::Full,
            parallel: false,
        }
    }
}

/// An all-zero design matrix encountered during a sweep; the affected update
/// was skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularEvent {
    pub sweep: usize,
    pub mode: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    /// Data-term loss per sweep; entry 0 is the initialization.
    pub losses: Vec<f64>,
    /// Orthonormality penalty per sweep (identically 0 in hard mode).
    pub penalties: Vec<f64>,
    /// Final ranks `[segment][mode]`.
    pub ranks: Vec<Vec<usize>>,
    /// Final per-block orthonormality residuals `[segment][mode]`.
    pub orthonormality: Vec<Vec<f64>>,
    pub singular_events: Vec<SingularEvent>,
    /// True when the eps-decrease criterion fired before the sweep cap.
    pub converged: bool,
}

fn map_segments<T: Send>(
    parallel: bool,
    count: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallel {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

/// Design-matrix column block for `(mode m, segment s)`: the segment's core
/// multiplied by every factor except mode `m`, flattened so that
/// `reconstruction_[m] = Σ_s U_{m,s} · W_sᵀ`.
fn design_block(model: &BlockFactorModel, m: usize, s: usize) -> Result<Matrix> {
    let mut y = model.cores[s].clone();
    for n in 0..model.order() {
        if n != m {
            y = y.mode_product(n, model.factor(n, s))?;
        }
    }
    Ok(y.matrixize(m)?.transpose())
}

fn centered(d: &DenseTensor, mean: &[f64]) -> DenseTensor {
    if mean.iter().all(|&x| x == 0.0) {
        return d.clone();
    }
    let i0 = d.extent(0);
    let mut out = d.clone();
    for (lin, x) in out.as_mut_slice().iter_mut().enumerate() {
        *x -= mean[lin % i0];
    }
    out
}

/// Groups mode-0 rows by the exact set of segments whose support contains
/// them. Rows outside every support are dropped (no block models them).
fn membership_atoms(filters: &[SegmentFilter], i0: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); i0];
    for (s, f) in filters.iter().enumerate() {
        for &r in &f.support {
            members[r].push(s);
        }
    }
    let mut atoms: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (r, mem) in members.into_iter().enumerate() {
        if !mem.is_empty() {
            atoms.entry(mem).or_default().push(r);
        }
    }
    atoms.into_iter().collect()
}

/// Outcome of one mode update.
#[derive(Debug, Clone)]
pub struct ModeUpdate {
    /// Concatenated updated factor `[U_{m,1} | ... | U_{m,S}]` (a shared
    /// factor is its own single block).
    pub u_cx: Matrix,
    /// An all-zero design matrix was encountered; the affected blocks kept
    /// their previous values.
    pub singular: bool,
}

/// Least-squares update of one mode's factor blocks given everything else,
/// applied to the model in place. With hard orthonormalization the new
/// blocks are orthonormalized and the change of basis is absorbed into the
/// cores, so the reconstruction equals the unconstrained optimum. Mode 0
/// solves per membership atom, which keeps each `U_{0,s}` inside its
/// support.
pub fn update_mode_matrix(
    m: usize,
    d: &DenseTensor,
    model: &mut BlockFactorModel,
    cfg: &BlockSolverConfig,
) -> Result<ModeUpdate> {
    if m >= model.order() {
        return Err(Error::Value(format!("mode {m} out of range")));
    }
    let dc = centered(d, &model.mean);
    let singular = if m == 0 {
        update_measurement(&dc, model, cfg)?
    } else {
        update_causal(m, &dc, model, cfg)?
    };
    let u_cx = if m == 0 {
        let refs: Vec<&Matrix> = model.measurement.iter().collect();
        Matrix::hcat(&refs)?
    } else {
        model.causal[m - 1].concatenated()?
    };
    Ok(ModeUpdate { u_cx, singular })
}

fn update_measurement(
    dc: &DenseTensor,
    model: &mut BlockFactorModel,
    cfg: &BlockSolverConfig,
) -> Result<bool> {
    let s_count = model.segments();
    let i0 = model.measurement_dim();
    let blocks = map_segments(cfg.parallel, s_count, |s| design_block(model, 0, s))?;
    let d0 = dc.matrixize(0)?;
    let mut new_u: Vec<Matrix> = model.measurement.clone();
    let mut singular = false;
    for (members, rows) in membership_atoms(&model.filters, i0) {
        let refs: Vec<&Matrix> = members.iter().map(|&s| &blocks[s]).collect();
        let w = Matrix::hcat(&refs)?;
        if w.max_abs() == 0.0 {
            singular = true;
            continue;
        }
        let gram_inv = pinv_default(&w.transpose().matmul(&w)?)?;
        let d_rows = Matrix::from_fn(rows.len(), d0.cols(), |r, c| d0.get(rows[r], c));
        let sol = d_rows.matmul(&w)?.matmul(&gram_inv)?;
        let mut offset = 0;
        for &s in &members {
            let j = blocks[s].cols();
            for (r_local, &r) in rows.iter().enumerate() {
                for c in 0..j {
                    new_u[s].set(r, c, sol.get(r_local, offset + c));
                }
            }
            offset += j;
        }
    }
    if let Orthonormalization::Hard = cfg.orthonormalization {
        for s in 0..s_count {
            let support = &model.filters[s].support;
            let restricted =
                Matrix::from_fn(support.len(), new_u[s].cols(), |r, c| new_u[s].get(support[r], c));
            let (q, r) = thin_qr(&restricted)?;
            let mut embedded = Matrix::zeros(i0, q.cols());
            for (r_local, &row) in support.iter().enumerate() {
                for c in 0..q.cols() {
                    embedded.set(row, c, q.get(r_local, c));
                }
            }
            new_u[s] = embedded;
            model.cores[s] = model.cores[s].mode_product(0, &r)?;
        }
    }
    model.measurement = new_u;
    Ok(singular)
}

fn update_causal(
    m: usize,
    dc: &DenseTensor,
    model: &mut BlockFactorModel,
    cfg: &BlockSolverConfig,
) -> Result<bool> {
    let s_count = model.segments();
    let blocks = map_segments(cfg.parallel, s_count, |s| design_block(model, m, s))?;
    let dm = dc.matrixize(m)?;
    match &model.causal[m - 1] {
        FactorLayout::Compositional(_) => {
            let refs: Vec<&Matrix> = blocks.iter().collect();
            let w = Matrix::hcat(&refs)?;
            if w.max_abs() == 0.0 {
                return Ok(true);
            }
            let gram_inv = pinv_default(&w.transpose().matmul(&w)?)?;
            let u_cx = dm.matmul(&w)?.matmul(&gram_inv)?;
            let mut new_blocks = Vec::with_capacity(s_count);
            let mut offset = 0;
            for s in 0..s_count {
                let j = blocks[s].cols();
                new_blocks.push(u_cx.col_range(offset, offset + j));
                offset += j;
            }
            if let Orthonormalization::Hard = cfg.orthonormalization {
                for (s, b) in new_blocks.iter_mut().enumerate() {
                    let (q, r) = thin_qr(b)?;
                    *b = q;
                    model.cores[s] = model.cores[s].mode_product(m, &r)?;
                }
            }
            model.causal[m - 1] = FactorLayout::Compositional(new_blocks);
        }
        FactorLayout::Shared(_) => {
            let mut w = blocks[0].clone();
            for b in &blocks[1..] {
                w = w.add(b)?;
            }
            if w.max_abs() == 0.0 {
                return Ok(true);
            }
            let gram_inv = pinv_default(&w.transpose().matmul(&w)?)?;
            let mut u = dm.matmul(&w)?.matmul(&gram_inv)?;
            if let Orthonormalization::Hard = cfg.orthonormalization {
                let (q, r) = thin_qr(&u)?;
                u = q;
                for s in 0..s_count {
                    model.cores[s] = model.cores[s].mode_product(m, &r)?;
                }
            }
            model.causal[m - 1] = FactorLayout::Shared(u);
        }
    }
    Ok(false)
}

/// Least-squares cores given all factor blocks: the normal equations over
/// the block super-diagonal unknowns only. With one segment the system is a
/// Kronecker product, solved by per-mode pseudoinverses without
/// materializing anything large.
pub fn solve_core(d: &DenseTensor, model: &BlockFactorModel) -> Result<Vec<DenseTensor>> {
    let s_count = model.segments();
    if s_count == 0 {
        return Err(Error::Value("no cores to solve (empty block pattern)".into()));
    }
    let order = model.order();
    let dc = centered(d, &model.mean);
    if s_count == 1 {
        // x = (⊗ pinv(Gram_m)) rhs, applied as mode products
        let mut z = dc;
        for m in 0..order {
            let u = model.factor(m, 0);
            let gram_inv = pinv_default(&u.transpose().matmul(u)?)?;
            z = z.mode_product(m, &gram_inv.matmul(&u.transpose())?)?;
        }
        return Ok(vec![z]);
    }
    // block Gram: block (s, t) = ⊗_{m = C..0} U_{m,s}ᵀ U_{m,t}
    let sizes: Vec<usize> = (0..s_count).map(|s| model.cores[s].len()).collect();
    let total: usize = sizes.iter().sum();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let mut gram = Matrix::zeros(total, total);
    for s in 0..s_count {
        for t in 0..s_count {
            let mut block = model
                .factor(order - 1, s)
                .transpose()
                .matmul(model.factor(order - 1, t))?;
            for m in (0..order - 1).rev() {
                let g = model.factor(m, s).transpose().matmul(model.factor(m, t))?;
                block = kronecker(&block, &g);
            }
            for c in 0..block.cols() {
                for r in 0..block.rows() {
                    gram.set(offsets[s] + r, offsets[t] + c, block.get(r, c));
                }
            }
        }
    }
    let mut rhs = vec![0.0; total];
    for s in 0..s_count {
        let mut y = dc.clone();
        for m in 0..order {
            y = y.mode_product(m, &model.factor(m, s).transpose())?;
        }
        rhs[offsets[s]..offsets[s] + sizes[s]].copy_from_slice(y.as_slice());
    }
    let x = pinv_default(&gram)?.matvec(&rhs)?;
    let mut cores = Vec::with_capacity(s_count);
    for s in 0..s_count {
        cores.push(DenseTensor::from_vec(
            model.cores[s].shape().to_vec(),
            x[offsets[s]..offsets[s] + sizes[s]].to_vec(),
        )?);
    }
    Ok(cores)
}

/// Builds the initial model: per-segment mode-`m` SVDs of the filtered
/// segments (measurement mode restricted to the support rows, then
/// embedded), shared factors from the whole tensor's flattening, cores from
/// the restricted least-squares solve.
fn initialize(
    d: &DenseTensor,
    hierarchy: &HierarchySpec,
    filters: Vec<SegmentFilter>,
    cfg: &BlockSolverConfig,
) -> Result<BlockFactorModel> {
    let shape = d.shape();
    let order = shape.len();
    let causal_count = order - 1;
    let compositional = effective_flags(hierarchy, causal_count)?;
    let ranks = cfg.ranks.resolve(shape, &filters, &compositional)?;
    let s_count = filters.len();
    let i0 = shape[0];

    struct SegInit {
        u0: Matrix,
        sig0: Vec<f64>,
        causal: Vec<(Matrix, Vec<f64>)>,
    }
    let inits: Vec<SegInit> = map_segments(cfg.parallel, s_count, |s| {
        let seg = crate::hierarchy::segment(d, &filters[s])?;
        let support = &filters[s].support;
        // restrict mode 0 to the support rows so the basis stays inside them
        let mut sub_shape = shape.to_vec();
        sub_shape[0] = support.len();
        let row_of: BTreeMap<usize, usize> =
            support.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        let mut sub = DenseTensor::zeros(&sub_shape)?;
        let rest = d.len() / i0;
        for fiber in 0..rest {
            for (&r, &k) in &row_of {
                sub.as_mut_slice()[k + fiber * support.len()] =
                    seg.as_slice()[r + fiber * i0];
            }
        }
        let ThinSvd { u, s: sig, .. } = thin_svd(&sub.matrixize(0)?)?;
        let j0 = ranks[s][0].min(u.cols());
        let mut u0 = Matrix::zeros(i0, j0);
        for (k, &r) in support.iter().enumerate() {
            for c in 0..j0 {
                u0.set(r, c, u.get(k, c));
            }
        }
        let mut causal = Vec::with_capacity(causal_count);
        for m in 1..order {
            let ThinSvd { u, s: sig, .. } = thin_svd(&sub.matrixize(m)?)?;
            let j = ranks[s][m].min(u.cols());
            causal.push((u.truncate_cols(j), sig[..j.min(sig.len())].to_vec()));
        }
        Ok(SegInit { u0, sig0: sig[..j0.min(sig.len())].to_vec(), causal })
    })?;

    let mut measurement = Vec::with_capacity(s_count);
    let mut sigmas: Vec<Vec<Vec<f64>>> = Vec::with_capacity(s_count);
    for init in &inits {
        measurement.push(init.u0.clone());
        let mut per_mode = vec![init.sig0.clone()];
        for (_, sig) in &init.causal {
            per_mode.push(sig.clone());
        }
        sigmas.push(per_mode);
    }
    let mut causal = Vec::with_capacity(causal_count);
    for c in 1..order {
        match compositional[c - 1] {
            Compositionality::Full => {
                let blocks: Vec<Matrix> =
                    inits.iter().map(|i| i.causal[c - 1].0.clone()).collect();
                causal.push(FactorLayout::Compositional(blocks));
            }
            Compositionality::Shared => {
                // one basis for every segment, from the whole tensor
                let ThinSvd { u, s: sig, .. } = thin_svd(&d.matrixize(c)?)?;
                let j = ranks[0][c].min(u.cols());
                let shared = u.truncate_cols(j);
                for per_mode in sigmas.iter_mut() {
                    per_mode[c] = sig[..j.min(sig.len())].to_vec();
                }
                causal.push(FactorLayout::Shared(shared));
            }
        }
    }
    let cores: Vec<DenseTensor> = (0..s_count)
        .map(|s| {
            let mut z_shape = vec![measurement[s].cols()];
            for c in 1..order {
                z_shape.push(causal[c - 1].block(s).cols());
            }
            DenseTensor::zeros(&z_shape)
        })
        .collect::<Result<_>>()?;
    let lambdas = match cfg.orthonormalization {
        Orthonormalization::Hard => vec![vec![0.0; s_count]; causal_count],
        Orthonormalization::Penalty(l) => vec![vec![l; s_count]; causal_count],
    };
    let mut model = BlockFactorModel {
        hierarchy: hierarchy.clone(),
        filters,
        cores,
        measurement,
        causal,
        sigmas,
        lambdas,
        mean: vec![0.0; i0],
    };
    model.cores = solve_core(d, &model)?;
    model.validate()?;
    Ok(model)
}

fn effective_flags(
    hierarchy: &HierarchySpec,
    causal_count: usize,
) -> Result<Vec<Compositionality>> {
    if hierarchy.compositional.is_empty() {
        return Ok(vec![Compositionality::Full; causal_count]);
    }
    if hierarchy.compositional.len() != causal_count {
        return Err(Error::Value(format!(
            "{} compositionality flags for {causal_count} causal factors",
            hierarchy.compositional.len()
        )));
    }
    Ok(hierarchy.compositional.clone())
}

/// The alternating block solver: initializes from per-segment SVDs, then
/// cycles mode updates and a core solve until the loss decrease falls below
/// `eps * ‖D‖²` or the sweep cap. The data-term loss never increases.
pub fn block_mmode_svd(
    d: &DenseTensor,
    spec: &HierarchySpec,
    cfg: &BlockSolverConfig,
) -> Result<(BlockFactorModel, SolverReport)> {
    if !d.is_finite() {
        return Err(Error::NonFinite("block solver input"));
    }
    if cfg.eps <= 0.0 {
        return Err(Error::Value("solver eps must be positive".into()));
    }
    spec.validate()?;
    if d.extent(0) != spec.measurement_dim {
        return Err(Error::Shape(format!(
            "data extent {} differs from hierarchy dimension {}",
            d.extent(0),
            spec.measurement_dim
        )));
    }
    let model = initialize(d, spec, spec.leaf_filters()?, cfg)?;
    als_loop(d, model, cfg)
}

fn als_loop(
    d: &DenseTensor,
    mut model: BlockFactorModel,
    cfg: &BlockSolverConfig,
) -> Result<(BlockFactorModel, SolverReport)> {
    let norm2 = centered(d, &model.mean).frobenius_norm().powi(2);
    let mut losses = vec![model.loss(d)?];
    let mut penalties = vec![model.penalty()];
    let mut singular_events = Vec::new();
    let mut converged = false;
    for sweep in 1..=cfg.max_iters {
        for m in 0..model.order() {
            let upd = update_mode_matrix(m, d, &mut model, cfg)?;
            if upd.singular {
                singular_events.push(SingularEvent { sweep, mode: m });
            }
        }
        model.cores = solve_core(d, &model)?;
        let loss = model.loss(d)?;
        let drop = losses.last().unwrap() - loss;
        losses.push(loss);
        penalties.push(model.penalty());
        if drop <= cfg.eps * norm2.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let orthonormality = (0..model.segments())
        .map(|s| {
            (0..model.order())
                .map(|m| model.factor(m, s).orthonormality_residual())
                .collect()
        })
        .collect();
    let report = SolverReport {
        losses,
        penalties,
        ranks: model.ranks(),
        orthonormality,
        singular_events,
        converged,
    };
    Ok((model, report))
}

/// Disjoint-support fast path: each segment is factored independently by a
/// plain mode-m SVD of its restricted sub-tensor, then embedded. Requires
/// pairwise-disjoint leaf supports and fully compositional causal factors.
pub fn factorize_independent_parts(
    d: &DenseTensor,
    spec: &HierarchySpec,
    ranks: &BlockRankSpec,
) -> Result<BlockFactorModel> {
    spec.validate()?;
    let filters = spec.leaf_filters()?;
    let mut seen = vec![false; d.extent(0)];
    for f in &filters {
        if f.kind() != FilterKind::BlockIdentity {
            return Err(Error::Hierarchy(
                "independent-part factorization needs block-identity leaves".into(),
            ));
        }
        for &r in &f.support {
            if seen[r] {
                return Err(Error::Hierarchy(format!(
                    "leaf supports overlap at row {r}; expand overlaps first"
                )));
            }
            seen[r] = true;
        }
    }
    let causal_count = d.order() - 1;
    let flags = effective_flags(spec, causal_count)?;
    if flags.iter().any(|&f| f == Compositionality::Shared) {
        return Err(Error::Hierarchy(
            "independent-part factorization needs fully compositional factors".into(),
        ));
    }
    let cfg = BlockSolverConfig { ranks: ranks.clone(), ..BlockSolverConfig::default() };
    // per-segment SVD initialization IS the solution for disjoint parts
    initialize(d, spec, filters, &cfg)
}

/// Fully-overlapping decomposition: S full-support additive blocks of equal
/// ranks (a block-term-style decomposition). Initialized by splitting the
/// whole tensor's leading singular vectors into S column groups, then
/// refined by the same alternating solver (no bank condition applies — the
/// segments deliberately coincide).
pub fn factorize_overlapping_shared_rank(
    d: &DenseTensor,
    s_count: usize,
    ranks: &[usize],
    cfg: &BlockSolverConfig,
) -> Result<(BlockFactorModel, SolverReport)> {
    if !d.is_finite() {
        return Err(Error::NonFinite("block solver input"));
    }
    if s_count == 0 {
        return Err(Error::Value("need at least one block".into()));
    }
    if cfg.eps <= 0.0 {
        return Err(Error::Value("solver eps must be positive".into()));
    }
    let order = d.order();
    if ranks.len() != order {
        return Err(Error::Value(format!(
            "{} ranks for an order-{order} tensor",
            ranks.len()
        )));
    }
    let shape = d.shape();
    for (m, (&j, &e)) in ranks.iter().zip(shape).enumerate() {
        if j == 0 || j * s_count > e {
            return Err(Error::Value(format!(
                "mode {m}: {s_count} blocks of rank {j} exceed extent {e}"
            )));
        }
    }
    let i0 = shape[0];
    // structural tree: root plus S coinciding full-support children
    let mut nodes = vec![crate::hierarchy::HierarchyNode {
        id: "root".into(),
        parent: None,
        filter: SegmentFilter::identity(i0)?,
    }];
    for s in 0..s_count {
        nodes.push(crate::hierarchy::HierarchyNode {
            id: format!("block{s}"),
            parent: Some(0),
            filter: SegmentFilter::identity(i0)?,
        });
    }
    let hierarchy = HierarchySpec {
        measurement_dim: i0,
        nodes,
        compositional: vec![Compositionality::Full; order - 1],
    };
    hierarchy.validate_structure()?;
    let filters = vec![SegmentFilter::identity(i0)?; s_count];
    // split the global singular vectors into S disjoint column groups
    let mut measurement = Vec::with_capacity(s_count);
    let mut causal_blocks: Vec<Vec<Matrix>> = vec![Vec::with_capacity(s_count); order - 1];
    let mut sigmas = vec![Vec::with_capacity(order); s_count];
    for m in 0..order {
        let ThinSvd { u, s: sig, .. } = thin_svd(&d.matrixize(m)?)?;
        let j = ranks[m];
        if u.cols() < j * s_count {
            return Err(Error::Value(format!(
                "mode {m}: flattening provides {} directions, need {}",
                u.cols(),
                j * s_count
            )));
        }
        for s in 0..s_count {
            let block = u.col_range(s * j, (s + 1) * j);
            let lo = (s * j).min(sig.len());
            let hi = ((s + 1) * j).min(sig.len());
            sigmas[s].push(sig[lo..hi].to_vec());
            if m == 0 {
                measurement.push(block);
            } else {
                causal_blocks[m - 1].push(block);
            }
        }
    }
    let causal: Vec<FactorLayout> =
        causal_blocks.into_iter().map(FactorLayout::Compositional).collect();
    let cores: Vec<DenseTensor> = (0..s_count)
        .map(|_| DenseTensor::zeros(ranks))
        .collect::<Result<_>>()?;
    let lambdas = match cfg.orthonormalization {
        Orthonormalization::Hard => vec![vec![0.0; s_count]; order - 1],
        Orthonormalization::Penalty(l) => vec![vec![l; s_count]; order - 1],
    };
    let mut model = BlockFactorModel {
        hierarchy,
        filters,
        cores,
        measurement,
        causal,
        sigmas,
        lambdas,
        mean: vec![0.0; i0],
    };
    model.cores = solve_core(d, &model)?;
    model.validate()?;
    als_loop(d, model, cfg)
}
