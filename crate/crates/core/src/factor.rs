//! Flat multilinear factor model.
//!
//! A data tensor `D` (mode 0 = vectorized measurements, modes 1..=C =
//! explanatory factors) is factored as `D ≈ Z ×_0 U_0 ×_1 U_1 ... ×_C U_C`
//! with orthonormal mode matrices and a dense core. The extended core
//! `T = Z ×_0 U_0` keeps the measurement mode multiplied through, so a single
//! observation obeys `d = T ×_1 r_1ᵀ ... ×_C r_Cᵀ` for per-factor row
//! vectors `r_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, ThinSvd};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

/// Per-mode rank selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RankSpec {
    /// Keep every singular value (up to the flattening's own rank bound).
    Full,
    /// Explicit rank per mode, each `1 ..= extent(m)`.
    PerMode(Vec<usize>),
    /// Smallest per-mode rank whose retained squared singular values reach
    /// this fraction of the total; in `(0, 1]`.
    Energy(f64),
}

impl RankSpec {
    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        match self {
            RankSpec::Full => Ok(()),
            RankSpec::PerMode(ranks) => {
                if ranks.len() != shape.len() {
                    return Err(Error::Value(format!(
                        "{} ranks for order-{} tensor",
                        ranks.len(),
                        shape.len()
                    )));
                }
                for (m, (&j, &e)) in ranks.iter().zip(shape).enumerate() {
                    if j == 0 || j > e {
                        return Err(Error::Value(format!(
                            "rank {j} invalid for mode {m} with extent {e}"
                        )));
                    }
                }
                Ok(())
            }
            RankSpec::Energy(tau) => {
                if !(*tau > 0.0 && *tau <= 1.0) {
                    return Err(Error::Value(format!("energy threshold {tau} outside (0, 1]")));
                }
                Ok(())
            }
        }
    }

    /// Rank retained for one mode given its singular values.
    pub(crate) fn select(&self, m: usize, s: &[f64]) -> usize {
        match self {
            RankSpec::Full => s.len(),
            RankSpec::PerMode(ranks) => ranks[m].min(s.len()),
            RankSpec::Energy(tau) => {
                let total: f64 = s.iter().map(|x| x * x).sum();
                if total == 0.0 {
                    return 1;
                }
                let mut acc = 0.0;
                for (j, &x) in s.iter().enumerate() {
                    acc += x * x;
                    if acc >= tau * total {
                        return j + 1;
                    }
                }
                s.len()
            }
        }
    }
}

/// Default energy threshold for rank selection.
pub const DEFAULT_ENERGY: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct FactorModel {
    /// Core tensor, `J_0 x J_1 x ... x J_C`.
    pub core: DenseTensor,
    /// Orthonormal mode matrices `U_m`, `I_m x J_m`, one per mode.
    pub modes: Vec<Matrix>,
    /// Per-mode singular values of the flattenings (length `J_m`).
    pub sigmas: Vec<Vec<f64>>,
    /// Mean measurement vector subtracted before factorization (length `I_0`;
    /// all zeros when the input was factored as-is).
    pub mean: Vec<f64>,
}

impl FactorModel {
    pub fn order(&self) -> usize {
        self.modes.len()
    }

    /// Data-space shape `I_0 x ... x I_C`.
    pub fn data_shape(&self) -> Vec<usize> {
        self.modes.iter().map(|u| u.rows()).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.modes.iter().map(|u| u.cols()).collect()
    }

    /// Extended core `T = Z ×_0 U_0`: the measurement mode multiplied
    /// through, shape `I_0 x J_1 x ... x J_C`.
    pub fn extended_core(&self) -> Result<DenseTensor> {
        self.core.mode_product(0, &self.modes[0])
    }

    /// `Z ×_0 U_0 ... ×_C U_C` plus the broadcast mean.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let mut t = self.core.clone();
        for (m, u) in self.modes.iter().enumerate() {
            t = t.mode_product(m, u)?;
        }
        add_mode0_mean(&mut t, &self.mean);
        Ok(t)
    }

    /// Squared Frobenius distance between `d` and the reconstruction.
    pub fn loss(&self, d: &DenseTensor) -> Result<f64> {
        let r = self.reconstruct()?;
        Ok(d.sub(&r)?.frobenius_norm().powi(2))
    }
}

fn add_mode0_mean(t: &mut DenseTensor, mean: &[f64]) {
    if mean.iter().all(|&x| x == 0.0) {
        return;
    }
    let i0 = t.extent(0);
    debug_assert_eq!(mean.len(), i0);
    for (lin, x) in t.as_mut_slice().iter_mut().enumerate() {
        *x += mean[lin % i0];
    }
}

/// Subtracts the mean over all mode-0 fibers (one vector of length `I_0`
/// averaged across every factor combination) and returns it alongside the
/// centered tensor.
pub fn center_observations(d: &DenseTensor) -> (DenseTensor, Vec<f64>) {
    let i0 = d.extent(0);
    let fibers = d.len() / i0;
    let mut mean = vec![0.0; i0];
    for (lin, &x) in d.as_slice().iter().enumerate() {
        mean[lin % i0] += x;
    }
    for m in mean.iter_mut() {
        *m /= fibers as f64;
    }
    let mut centered = d.clone();
    for (lin, x) in centered.as_mut_slice().iter_mut().enumerate() {
        *x -= mean[lin % i0];
    }
    (centered, mean)
}

/// Mode-m SVD: each `U_m` holds leading left singular vectors of the mode-m
/// flattening of `D`, truncated per `ranks`; the core is
/// `Z = D ×_0 U_0ᵀ ... ×_C U_Cᵀ`. The input is factored as given (model mean
/// is zero); compose with [`center_observations`] to center first.
pub fn mmode_svd(d: &DenseTensor, ranks: &RankSpec) -> Result<FactorModel> {
    if !d.is_finite() {
        return Err(Error::NonFinite("mmode_svd input"));
    }
    ranks.validate(d.shape())?;
    let mut modes = Vec::with_capacity(d.order());
    let mut sigmas = Vec::with_capacity(d.order());
    for m in 0..d.order() {
        let ThinSvd { u, s, .. } = thin_svd(&d.matrixize(m)?)?;
        let j = ranks.select(m, &s);
        modes.push(u.truncate_cols(j));
        sigmas.push(s[..j].to_vec());
    }
    let core = core_from_modes(d, &modes)?;
    Ok(FactorModel { core, modes, sigmas, mean: vec![0.0; d.extent(0)] })
}

fn core_from_modes(d: &DenseTensor, modes: &[Matrix]) -> Result<DenseTensor> {
    let mut z = d.clone();
    for (m, u) in modes.iter().enumerate() {
        z = z.mode_product(m, &u.transpose())?;
    }
    Ok(z)
}

/// One full HOOI pass over the modes plus a core refresh.
fn hooi_sweep(d: &DenseTensor, modes: &mut [Matrix]) -> Result<()> {
    for m in 0..modes.len() {
        let mut y = d.clone();
        for (n, u) in modes.iter().enumerate() {
            if n != m {
                y = y.mode_product(n, &u.transpose())?;
            }
        }
        let ThinSvd { u, .. } = thin_svd(&y.matrixize(m)?)?;
        let j = modes[m].cols().min(u.cols());
        modes[m] = u.truncate_cols(j);
    }
    Ok(())
}

/// Alternating refinement of a truncated model (higher-order orthogonal
/// iteration). Sweeps until the squared-error decrease falls to
/// `eps * ‖D‖²` or `max_iters` sweeps have run; the per-sweep loss trace is
/// returned (first entry = loss of the input model). Loss never increases.
pub fn hooi_refine(
    d: &DenseTensor,
    model: &FactorModel,
    eps: f64,
    max_iters: usize,
) -> Result<(FactorModel, Vec<f64>)> {
    if model.modes.len() != d.order() {
        return Err(Error::Shape("model order differs from data order".into()));
    }
    for (m, u) in model.modes.iter().enumerate() {
        if u.rows() != d.extent(m) {
            return Err(Error::Shape(format!(
                "mode {m}: factor has {} rows, data extent is {}",
                u.rows(),
                d.extent(m)
            )));
        }
    }
    // refine against the same centered data the model was fit to
    let i0 = d.extent(0);
    let mut dc = d.clone();
    if model.mean.iter().any(|&x| x != 0.0) {
        for (lin, x) in dc.as_mut_slice().iter_mut().enumerate() {
            *x -= model.mean[lin % i0];
        }
    }
    let norm2 = dc.frobenius_norm().powi(2);
    let mut modes = model.modes.clone();
    let mut core = core_from_modes(&dc, &modes)?;
    let mut loss = residual_loss(&dc, &core, &modes)?;
    let mut trace = vec![loss];
    for _ in 0..max_iters {
        hooi_sweep(&dc, &mut modes)?;
        core = core_from_modes(&dc, &modes)?;
        let next = residual_loss(&dc, &core, &modes)?;
        trace.push(next);
        let drop = loss - next;
        loss = next;
        if drop <= eps * norm2.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let model = FactorModel {
        core,
        modes,
        sigmas: model.sigmas.clone(),
        mean: model.mean.clone(),
    };
    Ok((model, trace))
}

fn residual_loss(d: &DenseTensor, core: &DenseTensor, modes: &[Matrix]) -> Result<f64> {
    let mut r = core.clone();
    for (m, u) in modes.iter().enumerate() {
        r = r.mode_product(m, u)?;
    }
    Ok(d.sub(&r)?.frobenius_norm().powi(2))
}

/// Default HOOI stopping tolerance (relative squared-error decrease).
pub const HOOI_EPS: f64 = 1e-9;
/// Default HOOI sweep cap.
pub const HOOI_MAX_ITERS: usize = 100;

/// Best rank-1 fit of a tensor.
#[derive(Debug, Clone)]
pub struct Rank1Fit {
    /// One unit vector per mode.
    pub factors: Vec<Vec<f64>>,
    /// Scale of the rank-1 term.
    pub magnitude: f64,
    /// `‖T - magnitude · (u_0 ∘ ... ∘ u_{M-1})‖`.
    pub residual: f64,
    /// Set when some mode's two leading singular values are (near) equal at
    /// initialization: the fit converges to one of several competing terms.
    pub degenerate: bool,
}

const RANK1_TIE_REL: f64 = 1e-6;

/// Best rank-1 approximation by alternating power iteration, initialized
/// from the leading singular vector of each flattening (deterministic).
pub fn rank1_cp(t: &DenseTensor, max_iters: usize, eps: f64) -> Result<Rank1Fit> {
    if !t.is_finite() {
        return Err(Error::NonFinite("rank1_cp input"));
    }
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroInput("rank-1 fit of an all-zero tensor"));
    }
    let order = t.order();
    if order == 1 {
        let v = t.as_slice().to_vec();
        let mag = norm;
        return Ok(Rank1Fit {
            factors: vec![v.iter().map(|x| x / mag).collect()],
            magnitude: mag,
            residual: 0.0,
            degenerate: false,
        });
    }
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(order);
    let mut degenerate = false;
    for m in 0..order {
        let ThinSvd { u, s, .. } = thin_svd(&t.matrixize(m)?)?;
        if s.len() > 1 && s[0] > 0.0 && (s[0] - s[1]).abs() <= RANK1_TIE_REL * s[0] {
            degenerate = true;
        }
        factors.push(u.col(0).to_vec());
    }
    let mut magnitude = 0.0;
    for _ in 0..max_iters.max(1) {
        let prev = magnitude;
        for m in 0..order {
            // contract all modes but m
            let mut y = t.clone();
            for n in 0..order {
                if n == m {
                    continue;
                }
                let row = Matrix::new(1, factors[n].len(), factors[n].clone())?;
                y = y.mode_product(n, &row)?;
            }
            let v = y.matrixize(m)?; // extent(m) x 1
            let col = v.col(0);
            let len: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len == 0.0 {
                return Err(Error::ZeroInput("rank-1 iteration collapsed to zero"));
            }
            factors[m] = col.iter().map(|x| x / len).collect();
            magnitude = len;
        }
        if (magnitude - prev).abs() <= eps * magnitude.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // deterministic orientation: dominant entry of each factor non-negative,
    // compensating flips absorbed into the first factor
    let mut flips = 1.0;
    for f in factors.iter_mut().skip(1) {
        let dom = dominant_row(f);
        if f[dom] < 0.0 {
            for x in f.iter_mut() {
                *x = -*x;
            }
            flips = -flips;
        }
    }
    if flips < 0.0 {
        for x in factors[0].iter_mut() {
            *x = -*x;
        }
    }
    let residual = (norm * norm - magnitude * magnitude).max(0.0).sqrt();
    Ok(Rank1Fit { factors, magnitude, residual, degenerate })
}

fn dominant_row(col: &[f64]) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}
