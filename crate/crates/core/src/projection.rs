//! Inverse inference: recover per-causal-factor coefficient vectors from one
//! observation by multilinear projection, infer category labels by
//! nearest-row matching, and project block models part-by-part so occluded
//! segments can be skipped.

use std::collections::BTreeMap;

use crate::block::BlockFactorModel;
use crate::error::{Error, Result};
use crate::factor::{rank1_cp, FactorModel};
use crate::linalg::pinv_default;
use crate::tensor::DenseTensor;

/// Scores at or below this are flagged low-confidence: the representation is
/// (numerically) orthogonal to every candidate row.
pub const LOW_CONFIDENCE: f64 = 1e-6;

/// Power-iteration budget for the rank-1 fit of the projected coefficients.
const PROJECT_MAX_ITERS: usize = 100;
const PROJECT_EPS: f64 = 1e-12;

/// Per-causal-factor representation recovered from one observation.
#[derive(Debug, Clone)]
pub struct FactorRepresentation {
    /// One unit vector per causal factor (length `J_c`), sign-indeterminate.
    pub factors: Vec<Vec<f64>>,
    /// Scale of the rank-1 term (the mode-0 magnitude of the observation).
    pub magnitude: f64,
    /// Frobenius error of the rank-1 fit to the projected coefficients.
    pub residual: f64,
    /// True when the rank-1 fit hit a near-tie and picked one of several
    /// competing terms.
    pub degenerate: bool,
}

/// Label decision for one causal factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScore {
    /// Row index of the winning category, lowest index on ties.
    pub index: usize,
    /// Absolute cosine similarity of the winning row (or the vote total
    /// normalized per segment for aggregated block decisions).
    pub score: f64,
    /// Set when the score is numerically zero: no direction matched.
    pub low_confidence: bool,
}

/// Recovers per-factor representations from a single observation:
/// the mode-0 pseudo-inverse of the extended core is contracted with the
/// centered observation, the resulting coefficients are reshaped to
/// `J_1 x ... x J_C`, and their best rank-1 fit `r_1 ∘ … ∘ r_C` supplies one
/// unit vector per causal factor.
pub fn multilinear_project(model: &FactorModel, d_new: &[f64]) -> Result<FactorRepresentation> {
    let i0 = model.modes[0].rows();
    if d_new.len() != i0 {
        return Err(Error::Shape(format!(
            "observation has {} entries, model measures {i0}",
            d_new.len()
        )));
    }
    if d_new.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("observation"));
    }
    let centered: Vec<f64> = d_new.iter().zip(&model.mean).map(|(x, m)| x - m).collect();

    let t = model.extended_core()?;
    let flat = t.matrixize(0)?;
    let coeffs = pinv_default(&flat)?.matvec(&centered)?;
    let norm2: f64 = coeffs.iter().map(|x| x * x).sum();
    if !(norm2 > 0.0) {
        return Err(Error::ZeroInput("observation projects to no direction"));
    }

    let causal_shape: Vec<usize> = model.core.shape()[1..].to_vec();
    if causal_shape.is_empty() {
        // measurement-only model: nothing to factor
        return Ok(FactorRepresentation {
            factors: Vec::new(),
            magnitude: coeffs[0].abs(),
            residual: 0.0,
            degenerate: false,
        });
    }
    // the mode-0 flattening's column order is the canonical layout of the
    // remaining modes, so the coefficients tensorize directly
    let r = DenseTensor::from_vec(causal_shape, coeffs)?;
    let fit = rank1_cp(&r, PROJECT_MAX_ITERS, PROJECT_EPS)?;
    Ok(FactorRepresentation {
        factors: fit.factors,
        magnitude: fit.magnitude,
        residual: fit.residual,
        degenerate: fit.degenerate,
    })
}

fn cosine(row: &[f64], r: &[f64]) -> f64 {
    let dot: f64 = row.iter().zip(r).map(|(a, b)| a * b).sum();
    let nr: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nr == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nr * nv)
    }
}

/// Matches each recovered factor against the rows of its mode matrix by
/// absolute cosine similarity (rank-1 factors are sign-indeterminate).
/// Deterministic lowest-index tie-break; a zero best score is flagged.
pub fn infer_labels(rep: &FactorRepresentation, model: &FactorModel) -> Result<Vec<LabelScore>> {
    let causal = model.modes.len() - 1;
    if rep.factors.len() != causal {
        return Err(Error::Shape(format!(
            "{} factor vectors for a model with {causal} causal factors",
            rep.factors.len()
        )));
    }
    let mut out = Vec::with_capacity(causal);
    for (c, r) in rep.factors.iter().enumerate() {
        let u = &model.modes[c + 1];
        if u.cols() != r.len() {
            return Err(Error::Shape(format!(
                "factor {} has {} coefficients, mode matrix has {} columns",
                c + 1,
                r.len(),
                u.cols()
            )));
        }
        let mut best = 0usize;
        let mut best_score = -1.0;
        for i in 0..u.rows() {
            let score = cosine(&u.row(i), r).abs();
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        let best_score = best_score.max(0.0);
        out.push(LabelScore {
            index: best,
            score: best_score,
            low_confidence: best_score <= LOW_CONFIDENCE,
        });
    }
    Ok(out)
}

/// Projection of one fully visible segment.
#[derive(Debug, Clone)]
pub struct SegmentProjection {
    /// Segment index in the block model.
    pub segment: usize,
    pub rep: FactorRepresentation,
    /// Labels inferred from this segment alone.
    pub labels: Vec<LabelScore>,
}

/// Per-segment projections plus the score-weighted aggregate decision.
#[derive(Debug, Clone)]
pub struct BlockProjection {
    /// One entry per fully visible segment, in segment order.
    pub segments: Vec<SegmentProjection>,
    /// Aggregated label per causal factor: indices vote with their scores,
    /// the heaviest total wins (lowest index on ties), and the reported
    /// score is that total normalized by the number of voting segments.
    pub labels: Vec<LabelScore>,
}

/// Projects an observation through every segment whose support rows are all
/// visible, then aggregates the per-segment labels. Occluded (masked) rows
/// never enter any projection: the observation is centered once and each
/// segment reads only its own support.
pub fn project_block(
    model: &BlockFactorModel,
    d_new: &[f64],
    visible: &[bool],
) -> Result<BlockProjection> {
    let i0 = model.measurement_dim();
    if d_new.len() != i0 || visible.len() != i0 {
        return Err(Error::Shape(format!(
            "observation/mask of {}/{} entries for {i0} measurement rows",
            d_new.len(),
            visible.len()
        )));
    }
    if d_new.iter().zip(visible).any(|(x, &v)| v && !x.is_finite()) {
        return Err(Error::NonFinite("observation"));
    }
    // center first: each segment sees H_s (d - mean)
    let centered: Vec<f64> = d_new.iter().zip(&model.mean).map(|(x, m)| x - m).collect();

    let causal = model.order() - 1;
    let mut segments = Vec::new();
    for s in 0..model.segments() {
        let filt = &model.filters[s];
        if !filt.support.iter().all(|&r| visible[r]) {
            continue;
        }
        let masked: Vec<f64> = match &filt.general {
            None => {
                let mut v = vec![0.0; i0];
                for &r in &filt.support {
                    v[r] = centered[r];
                }
                v
            }
            Some(_) => filt.matrix(i0)?.matvec(&centered)?,
        };
        let mut seg_model = model.segment_model(s);
        seg_model.mean = vec![0.0; i0];
        let rep = match multilinear_project(&seg_model, &masked) {
            Ok(rep) => rep,
            // a segment the observation has no energy in casts no vote
            Err(Error::ZeroInput(_)) => continue,
            Err(e) => return Err(e),
        };
        let labels = infer_labels(&rep, &seg_model)?;
        segments.push(SegmentProjection { segment: s, rep, labels });
    }
    if segments.is_empty() {
        return Err(Error::Value(
            "no fully visible segment: every part is occluded or empty".into(),
        ));
    }

    let mut labels = Vec::with_capacity(causal);
    for c in 0..causal {
        let mut votes: BTreeMap<usize, f64> = BTreeMap::new();
        for sp in &segments {
            *votes.entry(sp.labels[c].index).or_insert(0.0) += sp.labels[c].score;
        }
        let (mut best, mut best_total) = (0usize, -1.0);
        for (&idx, &total) in &votes {
            if total > best_total {
                best = idx;
                best_total = total;
            }
        }
        let score = best_total.max(0.0) / segments.len() as f64;
        labels.push(LabelScore { index: best, score, low_confidence: score <= LOW_CONFIDENCE });
    }
    Ok(BlockProjection { segments, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::FactorLayout;
    use crate::factor::mmode_svd;
    use crate::factor::RankSpec;
    use crate::hierarchy::{Compositionality, HierarchySpec};
    use crate::matrix::Matrix;
    use crate::synth::{gaussian_tensor, observation, orthonormal_matrix, synth_generate, SynthConfig, SynthTruth};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_flat() -> (DenseTensor, FactorModel) {
        let cfg = SynthConfig {
            measurement_size: 24,
            cardinalities: vec![4, 3, 2],
            ranks: None,
            noise_sigma: 0.0,
            parts: None,
            seed: 31,
        };
        let out = synth_generate(&cfg).unwrap();
        match out.truth {
            SynthTruth::Flat(m) => (out.data, m),
            SynthTruth::Block(_) => unreachable!(),
        }
    }

    #[test]
    fn training_fiber_recovers_its_generating_rows() {
        let (d, truth) = small_flat();
        let idx = [1usize, 2, 0];
        let obs = observation(&d, &idx).unwrap();
        let rep = multilinear_project(&truth, &obs).unwrap();
        assert_eq!(rep.factors.len(), 3);
        assert!(rep.residual < 1e-8, "rank-1 fit residual {}", rep.residual);
        for (c, &i) in idx.iter().enumerate() {
            let row = truth.modes[c + 1].row(i);
            let cos = cosine(&row, &rep.factors[c]).abs();
            assert!(cos >= 1.0 - 1e-8, "factor {} cosine {cos}", c + 1);
        }
        let labels = infer_labels(&rep, &truth).unwrap();
        let got: Vec<usize> = labels.iter().map(|l| l.index).collect();
        assert_eq!(got, idx.to_vec());
        assert!(labels.iter().all(|l| l.score >= 1.0 - 1e-8 && !l.low_confidence));
    }

    #[test]
    fn mean_observation_is_rejected() {
        let (_, mut truth) = small_flat();
        truth.mean = (0..24).map(|i| 0.3 * i as f64 - 1.0).collect();
        let err = multilinear_project(&truth, &truth.mean.clone()).unwrap_err();
        assert!(matches!(err, Error::ZeroInput(_)));
    }

    #[test]
    fn labels_are_invariant_under_positive_rescaling() {
        let (d, truth) = small_flat();
        let obs = observation(&d, &[3, 0, 1]).unwrap();
        let rep = multilinear_project(&truth, &obs).unwrap();
        let scaled: Vec<f64> = obs.iter().map(|x| 7.25 * x).collect();
        let rep2 = multilinear_project(&truth, &scaled).unwrap();
        let (a, b) = (infer_labels(&rep, &truth).unwrap(), infer_labels(&rep2, &truth).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.index, y.index);
            assert!((x.score - y.score).abs() < 1e-9);
        }
        assert!((rep2.magnitude - 7.25 * rep.magnitude).abs() < 1e-6 * rep.magnitude);
    }

    #[test]
    fn noiseless_sweep_labels_every_combination() {
        let (d, truth) = small_flat();
        for i1 in 0..4 {
            for i2 in 0..3 {
                for i3 in 0..2 {
                    let obs = observation(&d, &[i1, i2, i3]).unwrap();
                    let rep = multilinear_project(&truth, &obs).unwrap();
                    let labels = infer_labels(&rep, &truth).unwrap();
                    let got: Vec<usize> = labels.iter().map(|l| l.index).collect();
                    assert_eq!(got, vec![i1, i2, i3], "fiber ({i1},{i2},{i3}) mislabeled");
                }
            }
        }
    }

    #[test]
    fn fitted_model_projects_like_the_truth() {
        // projection through a learned (not ground-truth) model still labels
        // every training fiber: the spans agree even if bases differ
        let (d, _) = small_flat();
        let model = mmode_svd(&d, &RankSpec::Full).unwrap();
        let obs = observation(&d, &[2, 1, 1]).unwrap();
        let rep = multilinear_project(&model, &obs).unwrap();
        let labels = infer_labels(&rep, &model).unwrap();
        assert_eq!(labels.iter().map(|l| l.index).collect::<Vec<_>>(), vec![2, 1, 1]);
    }

    #[test]
    fn zero_mode_matrix_flags_low_confidence() {
        let core = DenseTensor::zeros(&[2, 2]).unwrap();
        let model = FactorModel {
            core,
            modes: vec![Matrix::identity(2), Matrix::zeros(3, 2)],
            sigmas: vec![vec![], vec![]],
            mean: vec![0.0; 2],
        };
        let rep = FactorRepresentation {
            factors: vec![vec![1.0, 0.0]],
            magnitude: 1.0,
            residual: 0.0,
            degenerate: false,
        };
        let labels = infer_labels(&rep, &model).unwrap();
        assert_eq!(labels[0].index, 0);
        assert_eq!(labels[0].score, 0.0);
        assert!(labels[0].low_confidence);
    }

    /// Two disjoint parts sharing the causal label spaces, plus the data
    /// tensor they generate.
    fn two_part_truth(seed: u64) -> (DenseTensor, BlockFactorModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i0 = 12usize;
        let spec = HierarchySpec::subdivision(
            i0,
            2,
            2,
            vec![Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let supports = [(0usize, 6usize), (6, 6)];
        let mut measurement = Vec::new();
        let mut u1 = Vec::new();
        let mut u2 = Vec::new();
        let mut cores = Vec::new();
        for &(start, len) in &supports {
            // J_0 = J_1 · J_2 keeps each part's extended core invertible
            // along mode 0, which per-part inference needs
            let block = orthonormal_matrix(&mut rng, len, 4).unwrap();
            let mut emb = Matrix::zeros(i0, 4);
            for c in 0..4 {
                for r in 0..len {
                    emb.set(start + r, c, block.get(r, c));
                }
            }
            measurement.push(emb);
            u1.push(orthonormal_matrix(&mut rng, 3, 2).unwrap());
            u2.push(orthonormal_matrix(&mut rng, 2, 2).unwrap());
            cores.push(gaussian_tensor(&mut rng, &[4, 2, 2]).unwrap());
        }
        let model = BlockFactorModel {
            hierarchy: spec.clone(),
            filters: spec.leaf_filters().unwrap(),
            cores,
            measurement,
            causal: vec![FactorLayout::Compositional(u1), FactorLayout::Compositional(u2)],
            sigmas: vec![vec![vec![]; 3]; 2],
            lambdas: vec![vec![0.0; 2]; 2],
            mean: vec![0.0; i0],
        };
        let d = model.reconstruct().unwrap();
        (d, model)
    }

    #[test]
    fn occluding_one_part_labels_from_the_other() {
        let (d, model) = two_part_truth(37);
        for (i1, i2) in [(0usize, 0usize), (1, 1), (2, 0)] {
            let obs = observation(&d, &[i1, i2]).unwrap();
            // occlude the second part entirely (and corrupt its rows to
            // prove they are never read)
            let mut masked_obs = obs.clone();
            let mut visible = vec![true; 12];
            for r in 6..12 {
                visible[r] = false;
                masked_obs[r] = 1e9;
            }
            let proj = project_block(&model, &masked_obs, &visible).unwrap();
            assert_eq!(proj.segments.len(), 1);
            assert_eq!(proj.segments[0].segment, 0);
            let got: Vec<usize> = proj.labels.iter().map(|l| l.index).collect();
            assert_eq!(got, vec![i1, i2], "occluded fiber ({i1},{i2}) mislabeled");
            assert!(proj.labels.iter().all(|l| !l.low_confidence));
        }
    }

    #[test]
    fn fully_occluded_observation_errors() {
        let (d, model) = two_part_truth(38);
        let obs = observation(&d, &[0, 0]).unwrap();
        let err = project_block(&model, &obs, &vec![false; 12]).unwrap_err();
        assert!(matches!(err, Error::Value(_)));
        // one visible row is not a whole visible segment either
        let mut visible = vec![false; 12];
        visible[3] = true;
        assert!(project_block(&model, &obs, &visible).is_err());
    }

    #[test]
    fn single_segment_block_projection_matches_flat() {
        let (d, truth) = small_flat();
        let spec = HierarchySpec::single(
            24,
            vec![Compositionality::Full, Compositionality::Full, Compositionality::Full],
        )
        .unwrap();
        let block = BlockFactorModel {
            hierarchy: spec.clone(),
            filters: spec.leaf_filters().unwrap(),
            cores: vec![truth.core.clone()],
            measurement: vec![truth.modes[0].clone()],
            causal: (1..4)
                .map(|c| FactorLayout::Compositional(vec![truth.modes[c].clone()]))
                .collect(),
            sigmas: vec![truth.sigmas.clone()],
            lambdas: vec![vec![0.0]; 3],
            mean: truth.mean.clone(),
        };
        let obs = observation(&d, &[3, 2, 1]).unwrap();
        let flat_rep = multilinear_project(&truth, &obs).unwrap();
        let flat_labels = infer_labels(&flat_rep, &truth).unwrap();
        let proj = project_block(&block, &obs, &vec![true; 24]).unwrap();
        assert_eq!(proj.segments.len(), 1);
        for (a, b) in proj.labels.iter().zip(&flat_labels) {
            assert_eq!(a.index, b.index);
            assert!((a.score - b.score).abs() < 1e-12);
        }
        assert!((proj.segments[0].rep.magnitude - flat_rep.magnitude).abs() < 1e-9);
    }

    #[test]
    fn visible_but_empty_segment_casts_no_vote() {
        // an observation living entirely in part 1 leaves part 2's projection
        // with zero coefficients; the vote must come from part 1 alone
        let (d, model) = two_part_truth(39);
        let obs = observation(&d, &[1, 0]).unwrap();
        let mut lopsided = obs;
        for r in 6..12 {
            lopsided[r] = 0.0;
        }
        let proj = project_block(&model, &lopsided, &vec![true; 12]).unwrap();
        assert_eq!(proj.segments.len(), 1);
        assert_eq!(proj.segments[0].segment, 0);
        let got: Vec<usize> = proj.labels.iter().map(|l| l.index).collect();
        assert_eq!(got, vec![1, 0]);
    }
}
