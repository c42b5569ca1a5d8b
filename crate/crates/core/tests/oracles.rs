//! Library results checked against independent computations written out
//! here from first principles.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{array, Array1, Array2};
use popcluster_core::gmm::{bic_value, em_fit, log_likelihood, responsibilities, GmmOptions, GmmParams};
use popcluster_core::interpret::{discrete_nmi, gaussian_nmi, kl_gaussian_univariate, NmiNormalization};
use popcluster_core::pca::{Components, PcaModel};
use popcluster_core::seed::rng_from;
use popcluster_core::selection::{adjusted_rand_index, rand_index};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (l, r) = (simpson(f, a, m), simpson(f, m, b));
    if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
        return l + r + (l + r - whole) / 15.0;
    }
    adaptive(f, a, m, l, tol / 2.0, depth - 1) + adaptive(f, m, b, r, tol / 2.0, depth - 1)
}

/// ∫ p₁ ln(p₁/p₀) over ±12 standard deviations of p₁.
fn kl_numeric(mu1: f64, var1: f64, mu0: f64, var0: f64) -> f64 {
    let f = move |x: f64| {
        let p1 = normal_pdf(x, mu1, var1);
        if p1 == 0.0 {
            return 0.0;
        }
        // Log-densities directly, so tails do not underflow into 0/0.
        let lp1 = -(x - mu1).powi(2) / (2.0 * var1) - 0.5 * (2.0 * PI * var1).ln();
        let lp0 = -(x - mu0).powi(2) / (2.0 * var0) - 0.5 * (2.0 * PI * var0).ln();
        p1 * (lp1 - lp0)
    };
    let s = var1.sqrt();
    let (a, b) = (mu1 - 12.0 * s, mu1 + 12.0 * s);
    adaptive(&f, a, b, simpson(&f, a, b), 1e-10, 40)
}

#[test]
fn kl_matches_numerical_integration() {
    let mut rng = rng_from(5);
    for _ in 0..40 {
        let (mu1, mu0) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (v1, v0) = (rng.random_range(0.2..4.0), rng.random_range(0.2..4.0));
        let closed = kl_gaussian_univariate(mu1, v1, mu0, v0);
        let numeric = kl_numeric(mu1, v1, mu0, v0);
        assert!((closed - numeric).abs() < 1e-6, "{closed} vs {numeric}");
    }
}

#[test]
fn bic_matches_hand_formula() {
    // 100 points of ±1: mean 0, MLE variance exactly 1.
    let y = Array2::from_shape_fn((100, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
    let fit = em_fit(y.view(), 1, 0, &GmmOptions::default()).unwrap();
    let ll_hand = -50.0 * (2.0 * PI).ln() - 50.0;
    let bic_hand = 2.0 * 100f64.ln() - 2.0 * ll_hand;
    assert!((bic_hand - 292.998).abs() < 1e-3);
    assert!((fit.bic(100) - bic_hand).abs() < 0.01);
    assert!((bic_value(ll_hand, 1, 1, 100) - bic_hand).abs() < 1e-9);
}

#[test]
fn mixture_density_matches_direct_sum() {
    let params = GmmParams::new(
        vec![0.3, 0.7],
        array![[-1.0], [2.0]],
        vec![array![[0.5]], array![[2.0]]],
    )
    .unwrap();
    let xs = [-2.0, -0.3, 0.0, 1.1, 4.0];
    let y = Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i]);
    let mut ll = 0.0;
    let post = responsibilities(&params, y.view()).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let a = 0.3 * normal_pdf(x, -1.0, 0.5);
        let b = 0.7 * normal_pdf(x, 2.0, 2.0);
        ll += (a + b).ln();
        assert!((post.resp()[(i, 0)] - a / (a + b)).abs() < 1e-12);
    }
    assert!((log_likelihood(&params, y.view()).unwrap() - ll).abs() < 1e-10);
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.map(|c| c as f64 / n).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

#[test]
fn discrete_nmi_matches_contingency_formula() {
    let mut rng = rng_from(9);
    for _ in 0..30 {
        let n = rng.random_range(5..200);
        let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let nf = n as f64;
        let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
        let mut ca: HashMap<u32, usize> = HashMap::new();
        let mut cb: HashMap<u32, usize> = HashMap::new();
        for (&x, &y) in a.iter().zip(&b) {
            *joint.entry((x, y)).or_default() += 1;
            *ca.entry(x).or_default() += 1;
            *cb.entry(y).or_default() += 1;
        }
        let ha = entropy(ca.values().copied(), nf);
        let hb = entropy(cb.values().copied(), nf);
        let hab = entropy(joint.values().copied(), nf);
        let mi = ha + hb - hab;
        let arith = discrete_nmi(&a, &b, NmiNormalization::ArithmeticMean).unwrap();
        let by_a = discrete_nmi(&a, &b, NmiNormalization::ClusteringEntropy).unwrap();
        let want_arith = if ha + hb > 0.0 { (mi / (0.5 * (ha + hb))).clamp(0.0, 1.0) } else { 0.0 };
        let want_a = if ha > 0.0 { (mi / ha).clamp(0.0, 1.0) } else { 0.0 };
        assert!((arith - want_arith).abs() < 1e-10);
        assert!((by_a - want_a).abs() < 1e-10);
    }
}

#[test]
fn gaussian_nmi_matches_direct_computation() {
    let mut rng = rng_from(4);
    let n = 300;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let rating: Vec<f64> = labels
        .iter()
        .map(|&l| l as f64 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let got = gaussian_nmi(&rating, &labels, 1e-8).unwrap();

    let stats = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (m, v)
    };
    let (mu, var) = stats(&rating);
    let (mut mi, mut h) = (0.0, 0.0);
    for c in 0..3 {
        let xs: Vec<f64> = rating.iter().zip(&labels).filter(|&(_, &l)| l == c).map(|(&x, _)| x).collect();
        let w = xs.len() as f64 / n as f64;
        let (mc, vc) = stats(&xs);
        let kl = 0.5 * ((var / vc).ln() + (vc + (mc - mu).powi(2)) / var - 1.0);
        mi += w * kl;
        h -= w * w.ln();
    }
    assert!((got.mi - mi).abs() < 1e-10);
    assert!((got.cluster_entropy - h).abs() < 1e-12);
    assert!((got.nmi - mi / h).abs() < 1e-10);
}

#[test]
fn rand_and_ari_match_pair_enumeration() {
    let mut rng = rng_from(2);
    for _ in 0..30 {
        let n = rng.random_range(2..60);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let (mut agree, mut total) = (0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        assert_eq!(rand_index(&a, &b).unwrap(), agree as f64 / total as f64);
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&ari));
    }
    let a = [0, 0, 1, 1, 2, 2];
    assert!((adjusted_rand_index(&a, &[5, 5, 3, 3, 4, 4]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn pca_eigenvalues_match_closed_form_2x2() {
    let mut rng = rng_from(8);
    let n = 50;
    let x = Array2::from_shape_fn((n, 2), |(_, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * if j == 0 { 3.0 } else { 1.0 }
    });
    let model = PcaModel::fit(x.view(), Components::All).unwrap();
    let mean: Array1<f64> = x.mean_axis(ndarray::Axis(0)).unwrap();
    let c = x - &mean;
    let s = c.t().dot(&c) / (n as f64 - 1.0);
    let (a, b, d) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
    let tr = a + d;
    let disc = ((a - d).powi(2) + 4.0 * b * b).sqrt();
    let ev = model.eigenvalues();
    assert!((ev[0] - 0.5 * (tr + disc)).abs() < 1e-10 * tr);
    assert!((ev[1] - 0.5 * (tr - disc)).abs() < 1e-10 * tr);
}
