//! PCA sanity checks for few-samples/many-features data: how the scree
//! changes with sample size, whether leading eigenvectors are stable across
//! resamples, and how held-out reconstruction error falls as the training
//! set grows.
//!
//! Every subsample is drawn without replacement from a seed derived from
//! `cfg.seed` and the job's coordinates, so results do not depend on
//! execution order.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::pca::{select_components, Components, PcaError, PcaModel};
use crate::seed::{derive_seed, rng_from, tag_of};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("sample size {size} exceeds the {n} available rows")]
    SizeTooLarge { size: usize, n: usize },
    #[error("sample size {0} is too small for PCA (need at least 2)")]
    SizeTooSmall(usize),
    #[error("train size {train} plus test size {test} exceeds the {n} available rows")]
    InsufficientRows { train: usize, test: usize, n: usize },
    #[error("{0} must not be empty or zero")]
    Empty(&'static str),
    #[error("PCA failed at sample size {size}: {source}")]
    Pca {
        size: usize,
        #[source]
        source: PcaError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    pub sample_sizes: Vec<usize>,
    pub n_iter: usize,
    pub top_vectors: usize,
    pub test_n: usize,
    pub train_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![200, 500, 1000, 1500, 2000],
            n_iter: 10,
            top_vectors: 5,
            test_n: 220,
            train_sizes: (1..=20).map(|i| i * 100).collect(),
            seed: 0,
        }
    }
}

impl DiagnosticsConfig {
    fn check_sizes(&self, n: usize) -> Result<(), DiagnosticsError> {
        if self.sample_sizes.is_empty() {
            return Err(DiagnosticsError::Empty("sample_sizes"));
        }
        for &size in &self.sample_sizes {
            if size > n {
                return Err(DiagnosticsError::SizeTooLarge { size, n });
            }
            if size < 2 {
                return Err(DiagnosticsError::SizeTooSmall(size));
            }
        }
        Ok(())
    }

    fn check_train(&self, n: usize) -> Result<(), DiagnosticsError> {
        if self.train_sizes.is_empty() {
            return Err(DiagnosticsError::Empty("train_sizes"));
        }
        if self.test_n == 0 {
            return Err(DiagnosticsError::Empty("test_n"));
        }
        for &train in &self.train_sizes {
            if train + self.test_n > n {
                return Err(DiagnosticsError::InsufficientRows {
                    train,
                    test: self.test_n,
                    n,
                });
            }
            if train < 2 {
                return Err(DiagnosticsError::SizeTooSmall(train));
            }
        }
        Ok(())
    }

    /// Check every size against `n` rows.
    pub fn validate(&self, n: usize) -> Result<(), DiagnosticsError> {
        self.check_sizes(n)?;
        self.check_train(n)?;
        if self.n_iter == 0 {
            return Err(DiagnosticsError::Empty("n_iter"));
        }
        if self.top_vectors == 0 {
            return Err(DiagnosticsError::Empty("top_vectors"));
        }
        Ok(())
    }
}

/// Sorted row indices of a seeded draw of `size` rows out of `n`.
fn subsample(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut idx = sample(&mut rng_from(seed), n, size).into_vec();
    idx.sort_unstable();
    idx
}

fn fit_rows(x: ArrayView2<f64>, rows: &[usize], keep: Components) -> Result<PcaModel, DiagnosticsError> {
    PcaModel::fit(x.select(Axis(0), rows).view(), keep).map_err(|source| DiagnosticsError::Pca {
        size: rows.len(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeCurve {
    pub size: usize,
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub variance_ratio: Vec<f64>,
}

/// Full eigenvalue spectrum of one seeded subsample per size. A size equal
/// to N uses every row.
pub fn eigenvalue_spread(x: ArrayView2<f64>, cfg: &DiagnosticsConfig) -> Result<Vec<ScreeCurve>, DiagnosticsError> {
    let n = x.nrows();
    cfg.check_sizes(n)?;
    cfg.sample_sizes
        .par_iter()
        .map(|&size| {
            let rows = subsample(n, size, derive_seed(cfg.seed, &[tag_of("spread"), size as u64]));
            let pca = fit_rows(x, &rows, Components::All)?;
            Ok(ScreeCurve {
                size,
                eigenvalues: pca.eigenvalues().to_vec(),
                variance_ratio: pca.variance_ratio().to_vec(),
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    /// Same rank, two resampling iterations at one size.
    WithinSize,
    /// First component of iteration 0 at two different sizes.
    AcrossSize,
}

impl ComparisonKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WithinSize => "within_size",
            Self::AcrossSize => "across_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigvecComparison {
    pub kind: ComparisonKind,
    pub size_a: usize,
    pub size_b: usize,
    pub rank: usize,
    pub iter_a: usize,
    pub iter_b: usize,
    pub abs_cos: f64,
}

/// `|u·v| / (|u||v|)`; eigenvector signs are arbitrary.
pub fn abs_cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let denom = u.dot(&u).sqrt() * v.dot(&v).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (u.dot(&v) / denom).abs().min(1.0)
}

/// Leading eigenvectors from `n_iter` subsamples per size, compared rank by
/// rank across every pair of iterations, plus the first eigenvector of
/// iteration 0 compared across every pair of sizes.
pub fn eigenvector_consistency(
    x: ArrayView2<f64>,
    cfg: &DiagnosticsConfig,
) -> Result<Vec<EigvecComparison>, DiagnosticsError> {
    let n = x.nrows();
    cfg.check_sizes(n)?;
    if cfg.n_iter == 0 || cfg.top_vectors == 0 {
        return Err(DiagnosticsError::Empty("n_iter/top_vectors"));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&s| (0..cfg.n_iter).map(move |i| (s, i)))
        .collect();
    let models: Vec<PcaModel> = jobs
        .par_iter()
        .map(|&(size, iter)| {
            let seed = derive_seed(cfg.seed, &[tag_of("consistency"), size as u64, iter as u64]);
            let rows = subsample(n, size, seed);
            let keep = cfg.top_vectors.min((size - 1).min(x.ncols()));
            fit_rows(x, &rows, Components::Max(keep))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut out = Vec::new();
    for (si, &size) in cfg.sample_sizes.iter().enumerate() {
        let at = |iter: usize| &models[si * cfg.n_iter + iter];
        for a in 0..cfg.n_iter {
            for b in a + 1..cfg.n_iter {
                let (ma, mb) = (at(a), at(b));
                for rank in 0..ma.n_components().min(mb.n_components()) {
                    out.push(EigvecComparison {
                        kind: ComparisonKind::WithinSize,
                        size_a: size,
                        size_b: size,
                        rank,
                        iter_a: a,
                        iter_b: b,
                        abs_cos: abs_cosine(ma.components().row(rank), mb.components().row(rank)),
                    });
                }
            }
        }
    }
    for a in 0..cfg.sample_sizes.len() {
        for b in a + 1..cfg.sample_sizes.len() {
            let (ma, mb) = (&models[a * cfg.n_iter], &models[b * cfg.n_iter]);
            out.push(EigvecComparison {
                kind: ComparisonKind::AcrossSize,
                size_a: cfg.sample_sizes[a],
                size_b: cfg.sample_sizes[b],
                rank: 0,
                iter_a: 0,
                iter_b: 0,
                abs_cos: abs_cosine(ma.components().row(0), mb.components().row(0)),
            });
        }
    }
    Ok(out)
}

/// How many components to keep when scoring reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DRule {
    /// Fixed count, capped at what the training set supports.
    Fixed(usize),
    /// Smallest D reaching this cumulative variance ratio.
    VarianceThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossPoint {
    pub train_size: usize,
    pub d: usize,
    /// Squared error summed over the test rows, divided by `test_n · M`.
    pub loss: f64,
}

/// Held-out reconstruction error against training-set size. The test rows
/// are drawn once. The remaining rows are shuffled once and each training
/// set is a prefix of that order, so larger sets contain the smaller ones
/// and the curve is not dominated by draw-to-draw noise.
pub fn reconstruction_loss_curve(
    x: ArrayView2<f64>,
    cfg: &DiagnosticsConfig,
    rule: DRule,
) -> Result<Vec<LossPoint>, DiagnosticsError> {
    let (n, m) = x.dim();
    cfg.check_train(n)?;
    let test = subsample(n, cfg.test_n, derive_seed(cfg.seed, &[tag_of("test")]));
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let mut pool: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    pool.shuffle(&mut rng_from(derive_seed(cfg.seed, &[tag_of("train")])));
    let test_x = x.select(Axis(0), &test);

    cfg.train_sizes
        .par_iter()
        .map(|&train_size| {
            let mut rows = pool[..train_size].to_vec();
            rows.sort_unstable();
            let full = fit_rows(x, &rows, Components::All)?;
            let d = match rule {
                DRule::Fixed(d) => d.clamp(1, full.n_components()),
                DRule::VarianceThreshold(t) => {
                    select_components(full.variance_ratio().as_slice().expect("contiguous"), t)
                        .map_err(|source| DiagnosticsError::Pca {
                            size: train_size,
                            source,
                        })?
                        .d
                }
            };
            let pca = full.truncated(d).expect("d within range");
            let err = |source| DiagnosticsError::Pca {
                size: train_size,
                source,
            };
            let recon = pca
                .inverse_transform(pca.transform(test_x.view()).map_err(err)?.view())
                .map_err(err)?;
            let sse: f64 = recon
                .iter()
                .zip(test_x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(LossPoint {
                train_size,
                d,
                loss: sse / (cfg.test_n * m) as f64,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn small_cfg() -> DiagnosticsConfig {
        DiagnosticsConfig {
            sample_sizes: vec![30, 60],
            n_iter: 3,
            top_vectors: 2,
            test_n: 20,
            train_sizes: vec![30, 60],
            seed: 1,
        }
    }

    #[test]
    fn full_size_subsample_matches_plain_pca() {
        let x = gaussian(60, 8, 2);
        let cfg = DiagnosticsConfig {
            sample_sizes: vec![60],
            ..small_cfg()
        };
        let curves = eigenvalue_spread(x.view(), &cfg).unwrap();
        let pca = PcaModel::fit(x.view(), Components::All).unwrap();
        assert_eq!(curves[0].eigenvalues, pca.eigenvalues().to_vec());
        assert!(curves[0].eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identical_subsamples_agree_exactly() {
        let x = gaussian(50, 6, 3);
        let rows = subsample(50, 40, 7);
        let a = fit_rows(x.view(), &rows, Components::Max(3)).unwrap();
        let b = fit_rows(x.view(), &rows, Components::Max(3)).unwrap();
        for r in 0..3 {
            assert!((abs_cosine(a.components().row(r), b.components().row(r)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_row_counts() {
        let x = gaussian(80, 6, 4);
        let out = eigenvector_consistency(x.view(), &small_cfg()).unwrap();
        let within = out.iter().filter(|c| c.kind == ComparisonKind::WithinSize).count();
        let across = out.iter().filter(|c| c.kind == ComparisonKind::AcrossSize).count();
        // 2 sizes × C(3, 2) pairs × 2 ranks, and one size pair.
        assert_eq!((within, across), (12, 1));
        assert!(out.iter().all(|c| (0.0..=1.0).contains(&c.abs_cos)));
    }

    #[test]
    fn untruncated_reconstruction_is_exact() {
        let x = gaussian(80, 5, 5);
        let cfg = DiagnosticsConfig {
            train_sizes: vec![30, 60],
            test_n: 20,
            ..small_cfg()
        };
        for p in reconstruction_loss_curve(x.view(), &cfg, DRule::Fixed(5)).unwrap() {
            assert_eq!(p.d, 5);
            assert!(p.loss < 1e-10, "{p:?}");
        }
    }

    #[test]
    fn size_validation() {
        let x = gaussian(50, 4, 6);
        let cfg = DiagnosticsConfig {
            sample_sizes: vec![51],
            ..small_cfg()
        };
        assert!(matches!(
            eigenvalue_spread(x.view(), &cfg),
            Err(DiagnosticsError::SizeTooLarge { size: 51, n: 50 })
        ));
        let cfg = DiagnosticsConfig {
            train_sizes: vec![40],
            test_n: 20,
            ..small_cfg()
        };
        assert!(matches!(
            reconstruction_loss_curve(x.view(), &cfg, DRule::Fixed(2)),
            Err(DiagnosticsError::InsufficientRows { .. })
        ));
    }

    #[test]
    fn default_config_matches_documented_grid() {
        let cfg = DiagnosticsConfig::default();
        assert_eq!(cfg.train_sizes.first(), Some(&100));
        assert_eq!(cfg.train_sizes.last(), Some(&2000));
        assert_eq!(cfg.train_sizes.len(), 20);
    }
}
