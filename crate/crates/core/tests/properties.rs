use ndarray::Array2;
use proptest::prelude::*;

use popcluster_core::dataset::{load_matrix_binary, save_matrix_binary};
use popcluster_core::gmm::{em_fit, GmmOptions};
use popcluster_core::interpret::{
    discrete_nmi, gaussian_nmi, kl_gaussian_univariate, overlap_matrix, Clustering, NmiNormalization,
};
use popcluster_core::pca::{Components, PcaModel};
use popcluster_core::selection::{adjusted_rand_index, rand_index};
use popcluster_core::TrialMatrix;

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

fn label_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..80).prop_flat_map(|n| (labels(n, 5), labels(n, 4)))
}

/// Every label in 0..k appears at least once.
fn dense_labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    labels(n - k, k).prop_map(move |rest| (0..k).chain(rest).collect())
}

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rand_index_is_symmetric_and_bounded((a, b) in label_pair()) {
        let ab = rand_index(&a, &b).unwrap();
        prop_assert_eq!(ab, rand_index(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
        let ari = adjusted_rand_index(&a, &b).unwrap();
        prop_assert!((ari - adjusted_rand_index(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ari <= 1.0 + 1e-12);
    }

    #[test]
    fn rand_index_ignores_label_names((a, b) in label_pair(), shift in 1usize..7) {
        let renamed: Vec<usize> = a.iter().map(|&l| (l + shift) % 5 + 100).collect();
        prop_assert_eq!(rand_index(&a, &b).unwrap(), rand_index(&renamed, &b).unwrap());
        let d0 = adjusted_rand_index(&a, &b).unwrap();
        let d1 = adjusted_rand_index(&renamed, &b).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn overlap_matrix_is_symmetric_and_bounded(
        (a, b) in (6usize..60).prop_flat_map(|n| (dense_labels(n, 3), dense_labels(n, 4)))
    ) {
        let ids: Vec<String> = (0..a.len()).map(|i| format!("t{i}")).collect();
        let ca = Clustering::from_labels("A", ids.clone(), a, 3).unwrap();
        let cb = Clustering::from_labels("B", ids, b, 4).unwrap();
        let m = overlap_matrix(&[ca, cb]).unwrap();
        let n = m.keys.len();
        prop_assert_eq!(n, 7);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m.values[(i, j)], m.values[(j, i)]);
                prop_assert!((0.0..=100.0).contains(&m.values[(i, j)]));
            }
        }
        // Clusters of one subject are disjoint.
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    prop_assert_eq!(m.values[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn discrete_nmi_is_bounded((a, b) in label_pair()) {
        for mode in [NmiNormalization::ArithmeticMean, NmiNormalization::ClusteringEntropy] {
            let v = discrete_nmi(&a, &b, mode).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let sym = discrete_nmi(&b, &a, NmiNormalization::ArithmeticMean).unwrap();
        let v = discrete_nmi(&a, &b, NmiNormalization::ArithmeticMean).unwrap();
        prop_assert!((v - sym).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nmi_is_bounded_and_affine_invariant(
        (rating, labels) in (4usize..80).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), labels(n, 4))),
        scale in 0.1f64..10.0,
        offset in -50.0f64..50.0,
    ) {
        let g = gaussian_nmi(&rating, &labels, 1e-12).unwrap();
        prop_assert!((0.0..=1.0).contains(&g.nmi));
        prop_assert!(g.mi >= 0.0);
        let moved: Vec<f64> = rating.iter().map(|r| scale * r + offset).collect();
        // Scale the floor with the variances so flooring acts identically.
        let h = gaussian_nmi(&moved, &labels, 1e-12 * scale * scale).unwrap();
        prop_assert!((g.mi - h.mi).abs() <= 1e-6 * (1.0 + g.mi.abs()), "{} vs {}", g.mi, h.mi);
    }

    #[test]
    fn kl_is_nonnegative(
        mu1 in -20.0f64..20.0, mu0 in -20.0f64..20.0,
        v1 in 1e-3f64..100.0, v0 in 1e-3f64..100.0,
    ) {
        prop_assert!(kl_gaussian_univariate(mu1, v1, mu0, v0) >= -1e-12);
        prop_assert!(kl_gaussian_univariate(mu1, v1, mu1, v1).abs() < 1e-12);
    }

    #[test]
    fn pca_components_are_orthonormal_and_reconstruct(x in matrix(3..25, 2..12)) {
        let model = PcaModel::fit(x.view(), Components::All).unwrap();
        let w = model.components();
        let gram = w.dot(&w.t());
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() < 1e-9);
            }
        }
        let ev = model.eigenvalues();
        prop_assert!(ev.windows(2).into_iter().all(|p| p[0] >= p[1]));
        let r: f64 = model.variance_ratio().sum();
        prop_assert!(r <= 1.0 + 1e-9);
        // Keeping every computable component loses nothing.
        if (r - 1.0).abs() < 1e-9 {
            let back = model.inverse_transform(model.transform(x.view()).unwrap().view()).unwrap();
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err < 1e-8, "max reconstruction error {err}");
        }
    }

    #[test]
    fn em_is_monotone_with_valid_posteriors(x in matrix(20..60, 1..4), k in 1usize..4, seed in any::<u64>()) {
        let fit = match em_fit(x.view(), k, seed, &GmmOptions::default()) {
            Ok(f) => f,
            // Uniform noise rarely collapses; a reported collapse is not a violation.
            Err(_) => return Ok(()),
        };
        for w in fit.mean_ll_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "trace decreased: {:?}", w);
        }
        let weights = fit.params.weights();
        prop_assert!(weights.iter().all(|&w| w >= 0.0));
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let post = popcluster_core::gmm::responsibilities(&fit.params, x.view()).unwrap();
        for row in post.resp().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
    }

    #[test]
    fn pcm1_roundtrips_exactly(x in matrix(2..20, 1..10), suffix in "[a-z0-9_]{0,6}") {
        let ids: Vec<String> = (0..x.nrows()).map(|i| format!("trial{i}{suffix}")).collect();
        let m = TrialMatrix::new(ids, x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcm1");
        save_matrix_binary(&m, &path).unwrap();
        let back = load_matrix_binary(&path).unwrap();
        prop_assert_eq!(back.trial_ids(), m.trial_ids());
        prop_assert!(back.values().iter().zip(m.values().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
