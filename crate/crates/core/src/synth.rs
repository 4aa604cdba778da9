//! Seeded synthetic data from the multilinear structural equation: random
//! orthonormal factors, a random core, optional additive Gaussian noise, and
//! an optional part structure for block ground truth. The same seed always
//! reproduces the dataset byte-exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockFactorModel, FactorLayout};
use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::hierarchy::{Compositionality, HierarchyConfig, HierarchySpec};
use crate::linalg::thin_qr;
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

/// Standard normal draw (Box-Muller over the generator's uniforms).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    // column-major fill keeps the draw order part of the format
    for c in 0..cols {
        for r in 0..rows {
            m.set(r, c, normal(rng));
        }
    }
    m
}

pub fn gaussian_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(shape)?;
    for x in t.as_mut_slice() {
        *x = normal(rng);
    }
    Ok(t)
}

/// Random matrix with orthonormal columns (QR of a Gaussian draw).
pub fn orthonormal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Matrix> {
    if cols > rows {
        return Err(Error::Value(format!(
            "cannot draw {cols} orthonormal columns in {rows} dimensions"
        )));
    }
    let (q, _) = thin_qr(&gaussian_matrix(rng, rows, cols))?;
    Ok(q)
}

/// Adds IID Gaussian noise of the given standard deviation in place.
pub fn add_noise(t: &mut DenseTensor, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    for x in t.as_mut_slice() {
        *x += sigma * normal(rng);
    }
}

/// Optional part structure: block ground truth over the hierarchy's leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartConfig {
    pub hierarchy: HierarchyConfig,
    /// Per-mode block ranks `[J_0, J_1, .., J_C]`, identical across parts
    /// (`J_0` capped by each part's support). Defaults to half-cardinality
    /// causal ranks.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// `I_0`.
    #[serde(default = "default_measurement")]
    pub measurement_size: usize,
    /// `I_1..I_C`.
    #[serde(default = "default_cardinalities")]
    pub cardinalities: Vec<usize>,
    /// `[J_0, J_1, .., J_C]` for the flat model; `None` = full ranks.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    /// Additive IID Gaussian noise level; must be ≥ 0.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub parts: Option<PartConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn default_measurement() -> usize {
    64
}

fn default_cardinalities() -> Vec<usize> {
    vec![5, 4, 3]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            measurement_size: default_measurement(),
            cardinalities: default_cardinalities(),
            ranks: None,
            noise_sigma: 0.0,
            parts: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.measurement_size];
        s.extend_from_slice(&self.cardinalities);
        s
    }

    fn validate(&self) -> Result<()> {
        if self.measurement_size == 0 {
            return Err(Error::Value("measurement size is zero".into()));
        }
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::Value(format!(
                "bad factor cardinalities {:?}",
                self.cardinalities
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Value(format!("noise sigma {} negative", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum SynthTruth {
    Flat(FactorModel),
    Block(BlockFactorModel),
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Observed tensor (noise included).
    pub data: DenseTensor,
    /// Noiseless reconstruction of the ground truth.
    pub clean: DenseTensor,
    pub truth: SynthTruth,
}

/// Generates a dataset enumerating every causal factor combination, plus the
/// ground-truth model that produced it.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match &cfg.parts {
        None => flat_truth(cfg, &mut rng),
        Some(parts) => block_truth(cfg, parts, &mut rng),
    }
}

fn flat_truth(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthData> {
    let shape = cfg.shape();
    let order = shape.len();
    let causal_product: usize = shape[1..].iter().product();
    let ranks = match &cfg.ranks {
        Some(r) => {
            if r.len() != order {
                return Err(Error::Value(format!(
                    "{} ranks for an order-{order} tensor",
                    r.len()
                )));
            }
            r.clone()
        }
        None => {
            let mut r = vec![shape[0].min(causal_product)];
            r.extend_from_slice(&shape[1..]);
            r
        }
    };
    for (m, (&j, &e)) in ranks.iter().zip(&shape).enumerate() {
        if j == 0 || j > e {
            return Err(Error::Value(format!("mode {m}: rank {j} outside 1..={e}")));
        }
    }
    let mut modes = Vec::with_capacity(order);
    for m in 0..order {
        modes.push(orthonormal_matrix(rng, shape[m], ranks[m])?);
    }
    let core = gaussian_tensor(rng, &ranks)?;
    let truth = FactorModel {
        core,
        modes,
        sigmas: vec![Vec::new(); order],
        mean: vec![0.0; shape[0]],
    };
    let clean = truth.reconstruct()?;
    let mut data = clean.clone();
    add_noise(&mut data, cfg.noise_sigma, rng);
    Ok(SynthData { data, clean, truth: SynthTruth::Flat(truth) })
}

fn block_truth(cfg: &SynthConfig, parts: &PartConfig, rng: &mut ChaCha8Rng) -> Result<SynthData> {
    let shape = cfg.shape();
    let order = shape.len();
    let causal_count = order - 1;
    let spec: HierarchySpec = parts.hierarchy.to_spec()?;
    if spec.measurement_dim != shape[0] {
        return Err(Error::Shape(format!(
            "hierarchy dimension {} differs from measurement size {}",
            spec.measurement_dim, shape[0]
        )));
    }
    let flags = if spec.compositional.is_empty() {
        vec![Compositionality::Full; causal_count]
    } else if spec.compositional.len() == causal_count {
        spec.compositional.clone()
    } else {
        return Err(Error::Value(format!(
            "{} compositionality flags for {causal_count} causal factors",
            spec.compositional.len()
        )));
    };
    let filters = spec.leaf_filters()?;
    let s_count = filters.len();
    let ranks = match &parts.ranks {
        Some(r) => {
            if r.len() != order {
                return Err(Error::Value(format!(
                    "{} block ranks for an order-{order} tensor",
                    r.len()
                )));
            }
            r.clone()
        }
        None => {
            let mut r = vec![usize::MAX]; // J_0 capped per part below
            r.extend(shape[1..].iter().map(|&i| (i / 2).max(1)));
            r
        }
    };
    for (m, (&j, &e)) in ranks.iter().zip(&shape).enumerate().skip(1) {
        if j == 0 || j > e {
            return Err(Error::Value(format!("mode {m}: block rank {j} outside 1..={e}")));
        }
    }
    // shared factors drawn once, before any per-part draws
    let mut shared: Vec<Option<Matrix>> = Vec::with_capacity(causal_count);
    for (c, flag) in flags.iter().enumerate() {
        shared.push(match flag {
            Compositionality::Shared => {
                Some(orthonormal_matrix(rng, shape[c + 1], ranks[c + 1])?)
            }
            Compositionality::Full => None,
        });
    }
    let causal_ranks = &ranks[1..];
    let mut measurement = Vec::with_capacity(s_count);
    let mut causal_blocks: Vec<Vec<Matrix>> = vec![Vec::new(); causal_count];
    let mut cores = Vec::with_capacity(s_count);
    for f in &filters {
        let causal_product: usize = causal_ranks.iter().product();
        let j0 = f.support.len().min(if ranks[0] == usize::MAX {
            causal_product
        } else {
            ranks[0]
        });
        let sub = orthonormal_matrix(rng, f.support.len(), j0)?;
        let mut u0 = Matrix::zeros(shape[0], j0);
        for (k, &r) in f.support.iter().enumerate() {
            for c in 0..j0 {
                u0.set(r, c, sub.get(k, c));
            }
        }
        measurement.push(u0);
        for c in 0..causal_count {
            if shared[c].is_none() {
                causal_blocks[c]
                    .push(orthonormal_matrix(rng, shape[c + 1], causal_ranks[c])?);
            }
        }
        let mut z_shape = vec![j0];
        z_shape.extend_from_slice(causal_ranks);
        cores.push(gaussian_tensor(rng, &z_shape)?);
    }
    let causal: Vec<FactorLayout> = (0..causal_count)
        .map(|c| match shared[c].take() {
            Some(u) => FactorLayout::Shared(u),
            None => FactorLayout::Compositional(std::mem::take(&mut causal_blocks[c])),
        })
        .collect();
    let truth = BlockFactorModel {
        hierarchy: spec,
        filters,
        cores,
        measurement,
        causal,
        sigmas: vec![vec![Vec::new(); order]; s_count],
        lambdas: vec![vec![0.0; s_count]; causal_count],
        mean: vec![0.0; shape[0]],
    };
    truth.validate()?;
    let clean = truth.reconstruct()?;
    let mut data = clean.clone();
    add_noise(&mut data, cfg.noise_sigma, rng);
    Ok(SynthData { data, clean, truth: SynthTruth::Block(truth) })
}

/// One vectorized observation: the mode-0 fiber at the given causal indices.
pub fn observation(d: &DenseTensor, causal_idx: &[usize]) -> Result<Vec<f64>> {
    if causal_idx.len() + 1 != d.order() {
        return Err(Error::Shape(format!(
            "{} causal indices for an order-{} tensor",
            causal_idx.len(),
            d.order()
        )));
    }
    let mut idx = vec![0usize];
    idx.extend_from_slice(causal_idx);
    for (m, (&i, e)) in idx.iter().zip(d.shape()).enumerate() {
        if i >= *e {
            return Err(Error::Shape(format!("index {i} out of range for mode {m}")));
        }
    }
    let i0 = d.extent(0);
    let mut out = Vec::with_capacity(i0);
    for k in 0..i0 {
        idx[0] = k;
        out.push(d.get(&idx));
    }
    Ok(out)
}
