//! Randomized invariant checks over the tensor, factorization, and
//! hierarchy layers: layout round-trips, mode-product algebra, model
//! equivalence transforms, rank-selection energy, refinement monotonicity,
//! and filter-bank partitions of the identity.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tenfact_core::factor::{hooi_refine, mmode_svd, RankSpec};
use tenfact_core::hierarchy::{pyramid_filters, validate_bank, Compositionality, HierarchySpec};
use tenfact_core::matrix::kronecker;
use tenfact_core::synth::{gaussian_matrix, gaussian_tensor, orthonormal_matrix};
use tenfact_core::{DenseTensor, Matrix};

/// Tensor contractions are cheap but repeated per mode; keep the case count
/// modest so the whole file stays in the sub-second range.
fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

/// Random shape of the given order range with small extents.
fn shape_strategy(order: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1usize..=5, order)
}

fn tensor_from_seed(shape: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_tensor(&mut rng, shape).expect("shape is valid")
}

/// Well-conditioned square transform and its exact inverse,
/// `G = Q1 diag(d) Q2ᵀ` with `d ∈ [0.5, 2]` (condition number at most 4).
fn invertible_pair(n: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let q1 = orthonormal_matrix(rng, n, n).expect("square orthonormal");
    let q2 = orthonormal_matrix(rng, n, n).expect("square orthonormal");
    let d: Vec<f64> = (0..n).map(|i| 0.5 + 1.5 * (i as f64 + 0.5) / n as f64).collect();
    let d_inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
    let g = q1.matmul(&Matrix::diag(&d)).unwrap().matmul(&q2.transpose()).unwrap();
    let g_inv = q2.matmul(&Matrix::diag(&d_inv)).unwrap().matmul(&q1.transpose()).unwrap();
    (g, g_inv)
}

proptest! {
    #![proptest_config(config())]

    /// Flattening to a matrix and folding back is lossless, bit for bit,
    /// for every mode.
    #[test]
    fn flatten_roundtrip_is_exact(shape in shape_strategy(1..=4), seed in any::<u64>()) {
        let t = tensor_from_seed(&shape, seed);
        for m in 0..t.order() {
            let mat = t.matrixize(m).unwrap();
            let back = DenseTensor::tensorize(&mat, m, &shape).unwrap();
            prop_assert_eq!(back.as_slice(), t.as_slice(), "mode {} round trip", m);
        }
    }

    /// The mode-m product is left multiplication of the mode-m flattening:
    /// `(T ×_m B)_(m) = B · T_(m)`.
    #[test]
    fn mode_product_matches_flattened_multiplication(
        shape in shape_strategy(1..=4),
        rows in 1usize..=5,
        seed in any::<u64>(),
    ) {
        let t = tensor_from_seed(&shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        for m in 0..t.order() {
            let b = gaussian_matrix(&mut rng, rows, shape[m]);
            let left = t.mode_product(m, &b).unwrap().matrixize(m).unwrap();
            let right = b.matmul(&t.matrixize(m).unwrap()).unwrap();
            let dev = left.sub(&right).unwrap().max_abs();
            prop_assert!(dev <= 1e-12, "mode {}: deviation {}", m, dev);
        }
    }

    /// Products along distinct modes commute.
    #[test]
    fn distinct_mode_products_commute(
        shape in shape_strategy(2..=4),
        seed in any::<u64>(),
    ) {
        let t = tensor_from_seed(&shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2545f4914f6cdd1d);
        for m in 0..t.order() {
            for n in (m + 1)..t.order() {
                let u = gaussian_matrix(&mut rng, 3, shape[m]);
                let v = gaussian_matrix(&mut rng, 2, shape[n]);
                let mn = t.mode_product(m, &u).unwrap().mode_product(n, &v).unwrap();
                let nm = t.mode_product(n, &v).unwrap().mode_product(m, &u).unwrap();
                let dev = mn.sub(&nm).unwrap().max_abs();
                prop_assert!(dev <= 1e-12, "modes {} and {}: deviation {}", m, n, dev);
            }
        }
    }

    /// Transposition distributes over the Kronecker product exactly:
    /// both sides place the identical scalar product `u_ij · v_kl`.
    #[test]
    fn kronecker_transpose_distributes(
        a in 1usize..=4, b in 1usize..=4, c in 1usize..=4, d in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = gaussian_matrix(&mut rng, a, b);
        let v = gaussian_matrix(&mut rng, c, d);
        let lhs = kronecker(&u, &v).transpose();
        let rhs = kronecker(&u.transpose(), &v.transpose());
        prop_assert_eq!(lhs.rows(), rhs.rows());
        prop_assert_eq!(lhs.cols(), rhs.cols());
        prop_assert_eq!(lhs.as_slice(), rhs.as_slice());
    }

    /// Replacing `U_m → U_m G_m` and `Z → Z ×_m G_m⁻¹` for every mode with
    /// independent well-conditioned `G_m` leaves the reconstruction
    /// unchanged: the factorization is identified only up to such
    /// transforms.
    #[test]
    fn invertible_core_transform_preserves_reconstruction(
        shape in shape_strategy(2..=4),
        seed in any::<u64>(),
    ) {
        let t = tensor_from_seed(&shape, seed);
        let model = mmode_svd(&t, &RankSpec::Full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda3e39cb94b95bdb);
        let mut twisted = model.clone();
        for m in 0..twisted.order() {
            let j = twisted.modes[m].cols();
            let (g, g_inv) = invertible_pair(j, &mut rng);
            twisted.modes[m] = twisted.modes[m].matmul(&g).unwrap();
            twisted.core = twisted.core.mode_product(m, &g_inv).unwrap();
        }
        let base = model.reconstruct().unwrap();
        let moved = twisted.reconstruct().unwrap();
        let rel = moved.relative_error(&base).unwrap();
        prop_assert!(rel <= 1e-10, "relative deviation {}", rel);
    }

    /// Energy-based rank selection keeps at least the requested fraction of
    /// squared singular mass in every mode, and no smaller rank would.
    #[test]
    fn energy_rank_selection_retains_requested_energy(
        shape in shape_strategy(2..=4),
        tau in 0.55f64..0.95,
        seed in any::<u64>(),
    ) {
        let t = tensor_from_seed(&shape, seed);
        let full = mmode_svd(&t, &RankSpec::Full).unwrap();
        let cut = mmode_svd(&t, &RankSpec::Energy(tau)).unwrap();
        for m in 0..t.order() {
            let total: f64 = full.sigmas[m].iter().map(|s| s * s).sum();
            let kept: f64 = cut.sigmas[m].iter().map(|s| s * s).sum();
            prop_assert!(
                kept >= tau * total - 1e-12 * total,
                "mode {}: kept {} of {} at tau {}", m, kept, total, tau
            );
            let j = cut.sigmas[m].len();
            if j > 1 {
                let last = cut.sigmas[m][j - 1];
                prop_assert!(
                    kept - last * last < tau * total,
                    "mode {}: rank {} is not minimal for tau {}", m, j, tau
                );
            }
        }
    }

    /// Alternating refinement of a truncated model never increases the loss,
    /// sweep over sweep.
    #[test]
    fn refinement_loss_never_increases(
        shape in shape_strategy(2..=4),
        seed in any::<u64>(),
    ) {
        let t = tensor_from_seed(&shape, seed);
        let ranks: Vec<usize> = shape.iter().map(|&e| 1.max(e / 2)).collect();
        let start = mmode_svd(&t, &RankSpec::PerMode(ranks)).unwrap();
        let (_, losses) = hooi_refine(&t, &start, 1e-14, 8).unwrap();
        let norm2 = t.frobenius_norm().powi(2);
        for w in losses.windows(2) {
            prop_assert!(
                w[1] <= w[0] + 1e-10 * norm2.max(1.0),
                "loss rose from {} to {}", w[0], w[1]
            );
        }
    }

    /// Leaf filters of a contiguous subdivision tree partition the
    /// measurement axis: the bank sums to the identity.
    #[test]
    fn subdivision_leaves_sum_to_identity(
        arity in 2usize..=3,
        levels in 1usize..=3,
        extra in 0usize..=5,
        seed in any::<u64>(),
    ) {
        let i0 = arity.pow(levels as u32) + extra;
        let spec = HierarchySpec::subdivision(i0, arity, levels, vec![Compositionality::Full])
            .unwrap();
        let filters = spec.leaf_filters().unwrap();
        let report = validate_bank(&filters, i0).unwrap();
        prop_assert!(report.pass, "deviation {}", report.max_deviation);
        // seed is unused here on purpose: the property is structural.
        let _ = seed;
    }

    /// Band-pass pyramid filters telescope to the identity at any depth the
    /// support admits.
    #[test]
    fn pyramid_bank_sums_to_identity(
        levels in 1usize..=4,
        base in 8usize..=24,
    ) {
        let filters = pyramid_filters(levels, base).unwrap();
        prop_assert_eq!(filters.len(), levels);
        let report = validate_bank(&filters, base).unwrap();
        prop_assert!(report.pass, "deviation {}", report.max_deviation);
    }
}
