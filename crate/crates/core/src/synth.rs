//! Synthetic trial matrices with planted cluster structure.
//!
//! Latent cluster means are drawn from `N(0, s²·I)` with
//! `s = separation·within_sd/√2`, so two independent means sit about
//! `separation·within_sd·√d_low` apart on average, and are redrawn until
//! every pair is at least `separation·within_sd` apart. Points are
//! `y ~ N(μ_label, within_sd²·I)` in `R^d_low`, embedded as `x = Q·y + ε`
//! with `Q` an `M × d_low` matrix with orthonormal columns (Gram–Schmidt on
//! a Gaussian matrix) and `ε ~ N(0, noise_sd²·I)`.

use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::TrialMatrix;
use crate::seed::{derive_seed, rng_from, tag_of};
use crate::selection::{adjusted_rand_index, rand_index, SelectionError};

/// Rejection-sampling attempts before giving up on the separation.
pub const MAX_MEAN_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(
        "could not place {k} means at separation {separation} in {max_draws} draws; \
         lower the separation or raise d_low"
    )]
    SeparationUnreachable {
        k: usize,
        separation: f64,
        max_draws: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k_true: usize,
    pub n: usize,
    pub d_low: usize,
    pub m: usize,
    /// Minimum distance between latent means, in units of `within_sd`.
    pub separation: f64,
    pub within_sd: f64,
    pub noise_sd: f64,
    /// Cluster proportions; uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl SynthSpec {
    /// Three clusters, 600 trials, 5 latent and 200 ambient dimensions.
    pub fn three_clusters(seed: u64) -> Self {
        Self {
            k_true: 3,
            n: 600,
            d_low: 5,
            m: 200,
            separation: 10.0,
            within_sd: 1.0,
            noise_sd: 0.1,
            weights: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.k_true == 0 {
            return bad("k_true must be at least 1".into());
        }
        if self.n < 10 * self.k_true {
            return bad(format!("n = {} is below 10·k_true = {}", self.n, 10 * self.k_true));
        }
        if self.d_low == 0 || self.d_low > self.m {
            return bad(format!("need 1 ≤ d_low ≤ m, got d_low = {}, m = {}", self.d_low, self.m));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return bad(format!("separation must be finite and ≥ 0, got {}", self.separation));
        }
        if !(self.within_sd > 0.0) || !self.within_sd.is_finite() {
            return bad(format!("within_sd must be positive, got {}", self.within_sd));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return bad(format!("noise_sd must be finite and ≥ 0, got {}", self.noise_sd));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.k_true {
                return bad(format!("{} weights for k_true = {}", w.len(), self.k_true));
            }
            if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
                return bad("weights must be a probability vector".into());
            }
        }
        Ok(())
    }

    pub fn resolved_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.k_true as f64; self.k_true])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub x: TrialMatrix,
    pub true_labels: Vec<usize>,
    pub spec: SynthSpec,
    /// K × d_low.
    pub latent_means: Array2<f64>,
    /// N × d_low latent points before embedding.
    pub latent: Array2<f64>,
    /// M × d_low, orthonormal columns.
    pub embedding: Array2<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Modified Gram–Schmidt, applied twice for numerical orthogonality.
fn orthonormal_columns(mut a: Array2<f64>) -> Array2<f64> {
    let cols = a.ncols();
    for j in 0..cols {
        for _ in 0..2 {
            for i in 0..j {
                let qi = a.column(i).to_owned();
                let proj = qi.dot(&a.column(j));
                a.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    a
}

fn draw_means(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Array2<f64>, SynthError> {
    let min_dist = spec.separation * spec.within_sd;
    let scale = min_dist / std::f64::consts::SQRT_2;
    for _ in 0..MAX_MEAN_DRAWS {
        let means = gaussian_matrix(spec.k_true, spec.d_low, scale, rng);
        let ok = (0..spec.k_true).all(|a| {
            (a + 1..spec.k_true).all(|b| {
                let diff = &means.row(a) - &means.row(b);
                diff.dot(&diff).sqrt() >= min_dist
            })
        });
        if ok {
            return Ok(means);
        }
    }
    Err(SynthError::SeparationUnreachable {
        k: spec.k_true,
        separation: spec.separation,
        max_draws: MAX_MEAN_DRAWS,
    })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    // Independent streams so that, e.g., changing noise_sd leaves labels alone.
    let stream = |name: &str| rng_from(derive_seed(spec.seed, &[tag_of(name)]));
    let latent_means = draw_means(spec, &mut stream("means"))?;

    let weights = WeightedIndex::new(spec.resolved_weights())
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = stream("labels");
    let true_labels: Vec<usize> = (0..spec.n).map(|_| weights.sample(&mut rng)).collect();

    let mut latent = gaussian_matrix(spec.n, spec.d_low, spec.within_sd, &mut stream("latent"));
    for (mut row, &l) in latent.axis_iter_mut(Axis(0)).zip(&true_labels) {
        row += &latent_means.row(l);
    }

    let embedding = orthonormal_columns(gaussian_matrix(spec.m, spec.d_low, 1.0, &mut stream("embedding")));
    let mut x = latent.dot(&embedding.t());
    if spec.noise_sd > 0.0 {
        x += &gaussian_matrix(spec.n, spec.m, spec.noise_sd, &mut stream("noise"));
    }
    let ids = (0..spec.n).map(|i| format!("trial{i:05}")).collect();
    let x = TrialMatrix::new(ids, x).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok(SynthData {
        x,
        true_labels,
        spec: spec.clone(),
        latent_means,
        latent,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub k_true: usize,
    pub chosen_k: usize,
    pub k_match: bool,
    pub rand_vs_truth: f64,
    pub adjusted_rand_vs_truth: f64,
}

/// Compare a pipeline's chosen K and labels with the generator truth.
pub fn oracle_check(data: &SynthData, chosen_k: usize, labels: &[usize]) -> Result<OracleReport, SelectionError> {
    Ok(OracleReport {
        k_true: data.spec.k_true,
        chosen_k,
        k_match: chosen_k == data.spec.k_true,
        rand_vs_truth: rand_index(labels, &data.true_labels)?,
        adjusted_rand_vs_truth: adjusted_rand_index(labels, &data.true_labels)?,
    })
}

/// Label class counts.
pub fn class_counts(labels: &[usize], k: usize) -> Array1<usize> {
    let mut c = Array1::zeros(k);
    for &l in labels {
        c[l] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::{Components, PcaModel};

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::three_clusters(3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&SynthSpec::three_clusters(4)).unwrap();
        assert_ne!(other.true_labels, generate(&spec).unwrap().true_labels);
    }

    #[test]
    fn means_respect_separation_and_counts_match_weights() {
        let spec = SynthSpec {
            weights: Some(vec![0.5, 0.3, 0.2]),
            ..SynthSpec::three_clusters(11)
        };
        let data = generate(&spec).unwrap();
        for a in 0..3 {
            for b in a + 1..3 {
                let diff = &data.latent_means.row(a) - &data.latent_means.row(b);
                assert!(diff.dot(&diff).sqrt() >= 10.0);
            }
        }
        let counts = class_counts(&data.true_labels, 3);
        for (c, w) in counts.iter().zip([0.5, 0.3, 0.2]) {
            let expected = 600.0 * w;
            let sd = (600.0 * w * (1.0 - w) as f64).sqrt();
            assert!((*c as f64 - expected).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn noiseless_embedding_preserves_distances() {
        let spec = SynthSpec {
            noise_sd: 0.0,
            n: 60,
            ..SynthSpec::three_clusters(5)
        };
        let data = generate(&spec).unwrap();
        let x = data.x.values();
        for i in 0..20 {
            for j in i + 1..20 {
                let dx = &x.row(i) - &x.row(j);
                let dy = &data.latent.row(i) - &data.latent.row(j);
                assert!((dx.dot(&dx).sqrt() - dy.dot(&dy).sqrt()).abs() < 1e-8);
            }
        }
        let qtq = data.embedding.t().dot(&data.embedding);
        for ((i, j), v) in qtq.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_data_is_exactly_low_rank() {
        let spec = SynthSpec {
            noise_sd: 0.0,
            ..SynthSpec::three_clusters(6)
        };
        let data = generate(&spec).unwrap();
        let pca = PcaModel::fit(data.x.values(), Components::All).unwrap();
        let explained: f64 = pca.variance_ratio().iter().take(5).sum();
        assert!((explained - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unreachable_separation_errors() {
        let spec = SynthSpec {
            k_true: 8,
            n: 100,
            d_low: 1,
            m: 2,
            separation: 50.0,
            ..SynthSpec::three_clusters(0)
        };
        assert!(matches!(generate(&spec), Err(SynthError::SeparationUnreachable { k: 8, .. })));
    }

    #[test]
    fn spec_validation() {
        let base = SynthSpec::three_clusters(0);
        for spec in [
            SynthSpec { k_true: 0, ..base.clone() },
            SynthSpec { n: 29, ..base.clone() },
            SynthSpec { d_low: 201, ..base.clone() },
            SynthSpec { separation: -1.0, ..base.clone() },
            SynthSpec { within_sd: 0.0, ..base.clone() },
            SynthSpec {
                weights: Some(vec![0.5, 0.5]),
                ..base.clone()
            },
        ] {
            assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn oracle_examples() {
        let data = generate(&SynthSpec::three_clusters(7)).unwrap();
        let truth = data.true_labels.clone();
        let r = oracle_check(&data, 3, &truth).unwrap();
        assert!(r.k_match);
        assert_eq!(r.rand_vs_truth, 1.0);

        // Moving one item between clusters of sizes a and b breaks
        // (a − 1) + b pairs out of C(600, 2).
        let mut flipped = truth.clone();
        let from = flipped[0];
        let to = (from + 1) % 3;
        flipped[0] = to;
        let counts = class_counts(&truth, 3);
        let broken = (counts[from] - 1 + counts[to]) as f64;
        let expected = 1.0 - broken / (600.0 * 599.0 / 2.0);
        let r = oracle_check(&data, 2, &flipped).unwrap();
        assert!(!r.k_match);
        assert!((r.rand_vs_truth - expected).abs() < 1e-12);

        // With two clusters of 300 the flip breaks 599 pairs: 1 − 599/179700.
        let halves: Vec<usize> = (0..600).map(|i| i / 300).collect();
        let mut one_off = halves.clone();
        one_off[0] = 1;
        let r2 = rand_index(&halves, &one_off).unwrap();
        assert!((r2 - 0.9967).abs() < 1e-4);

        // Independent uniform 3-way labels: agreement 1 − 2·(1/3)(2/3) = 5/9.
        let mut rng = rng_from(99);
        let random: Vec<usize> = (0..600).map(|_| rng.random_range(0..3)).collect();
        let r = oracle_check(&data, 3, &random).unwrap();
        assert!((r.rand_vs_truth - 5.0 / 9.0).abs() < 0.05);
    }
}
