//! Model-order selection by mean BIC over seeded restarts, and stability of
//! the chosen model measured by the Rand index between refits.

use std::collections::HashMap;
use std::hash::Hash;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::gmm::{bic_value, em_fit, hard_assign, responsibilities, GmmError, GmmOptions};
use crate::seed::{derive_seed, tag_of};

/// Mean BIC values closer than this are treated as tied.
pub const BIC_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("k_min must be at least 1")]
    KMinZero,
    #[error("empty K grid: k_min = {k_min} > k_max = {k_max}")]
    EmptyGrid { k_min: usize, k_max: usize },
    #[error("k_max = {k_max} must be smaller than the number of trials ({n})")]
    KMaxTooLarge { k_max: usize, n: usize },
    #[error("n_init must be at least 1")]
    NoInits,
    #[error("stability needs at least 2 refits, got {0}")]
    TooFewRefits(usize),
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items to compare partitions")]
    TooFewItems,
    #[error("fit failed at K = {k}, seed = {seed}: {source}")]
    Fit {
        k: usize,
        seed: u64,
        #[source]
        source: GmmError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_init: usize,
    pub options: GmmOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 30,
            n_init: 100,
            options: GmmOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, n: usize) -> Result<(), SelectionError> {
        if self.k_min == 0 {
            return Err(SelectionError::KMinZero);
        }
        if self.k_min > self.k_max {
            return Err(SelectionError::EmptyGrid {
                k_min: self.k_min,
                k_max: self.k_max,
            });
        }
        if self.k_max >= n {
            return Err(SelectionError::KMaxTooLarge { k_max: self.k_max, n });
        }
        if self.n_init == 0 {
            return Err(SelectionError::NoInits);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitResult {
    pub init: usize,
    pub seed: u64,
    pub bic: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub n_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KResult {
    pub k: usize,
    pub inits: Vec<InitResult>,
    pub mean_bic: f64,
}

impl KResult {
    /// The initialization with the highest log-likelihood; ties go to the
    /// lowest init index.
    pub fn best_init(&self) -> &InitResult {
        let mut best = &self.inits[0];
        for r in &self.inits[1..] {
            if r.log_likelihood > best.log_likelihood {
                best = r;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub d: usize,
    pub per_k: Vec<KResult>,
    pub chosen_k: usize,
}

impl SweepResult {
    pub fn k_grid(&self) -> Vec<usize> {
        self.per_k.iter().map(|r| r.k).collect()
    }

    pub fn get(&self, k: usize) -> Option<&KResult> {
        self.per_k.iter().find(|r| r.k == k)
    }

    /// Group `(k, result)` pairs by K in the order given, average BIC per K
    /// in init order, and choose K. `None` for an empty list.
    pub fn from_init_results(n: usize, d: usize, results: Vec<(usize, InitResult)>) -> Option<Self> {
        let mut per_k: Vec<KResult> = Vec::new();
        for (k, r) in results {
            match per_k.iter_mut().find(|kr| kr.k == k) {
                Some(kr) => kr.inits.push(r),
                None => per_k.push(KResult {
                    k,
                    inits: vec![r],
                    mean_bic: 0.0,
                }),
            }
        }
        for kr in &mut per_k {
            kr.mean_bic = kr.inits.iter().map(|r| r.bic).sum::<f64>() / kr.inits.len() as f64;
        }
        let curve: Vec<(usize, f64)> = per_k.iter().map(|r| (r.k, r.mean_bic)).collect();
        let chosen_k = choose_k(&curve)?;
        Some(SweepResult { n, d, per_k, chosen_k })
    }

    pub fn chosen(&self) -> &KResult {
        self.get(self.chosen_k).expect("chosen_k is on the grid")
    }
}

/// Seed for initialization `init` at `k`.
pub fn sweep_seed(base_seed: u64, k: usize, init: usize) -> u64 {
    derive_seed(base_seed, &[k as u64, init as u64])
}

/// Smallest K whose mean BIC is minimal, treating differences below
/// [`BIC_TIE_TOLERANCE`] as ties.
pub fn choose_k(curve: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, bic) in curve {
        match best {
            Some((_, b)) if bic >= b - BIC_TIE_TOLERANCE => {}
            _ => best = Some((k, bic)),
        }
    }
    best.map(|(k, _)| k)
}

/// Fit every `(K, init)` pair on the grid and pick K by mean BIC.
///
/// Jobs fan out over the current rayon pool; results are gathered in grid
/// order, so the outcome does not depend on the pool size.
pub fn bic_sweep(
    y: ArrayView2<f64>,
    base_seed: u64,
    cfg: &SweepConfig,
) -> Result<SweepResult, SelectionError> {
    let (n, d) = y.dim();
    cfg.validate(n)?;
    let jobs: Vec<(usize, usize)> = (cfg.k_min..=cfg.k_max)
        .flat_map(|k| (0..cfg.n_init).map(move |i| (k, i)))
        .collect();
    let outcomes: Vec<Result<InitResult, SelectionError>> = jobs
        .par_iter()
        .map(|&(k, init)| {
            let seed = sweep_seed(base_seed, k, init);
            let fit = em_fit(y, k, seed, &cfg.options)
                .map_err(|source| SelectionError::Fit { k, seed, source })?;
            Ok(InitResult {
                init,
                seed,
                bic: bic_value(fit.log_likelihood, k, d, n),
                log_likelihood: fit.log_likelihood,
                converged: fit.converged,
                n_iter: fit.n_iter,
            })
        })
        .collect();

    let results = jobs
        .iter()
        .zip(outcomes)
        .map(|(&(k, _), r)| r.map(|r| (k, r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult::from_init_results(n, d, results).expect("grid is nonempty"))
}

/// Pair counts from the contingency table of two labelings.
struct PairCounts {
    total: u128,
    both: u128,
    in_a: u128,
    in_b: u128,
}

fn pairs(c: u64) -> u128 {
    let c = u128::from(c);
    c * c.saturating_sub(1) / 2
}

fn pair_counts<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<PairCounts, SelectionError> {
    if a.len() != b.len() {
        return Err(SelectionError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(SelectionError::TooFewItems);
    }
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut ma: HashMap<&A, u64> = HashMap::new();
    let mut mb: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    Ok(PairCounts {
        total: pairs(a.len() as u64),
        both: joint.values().map(|&c| pairs(c)).sum(),
        in_a: ma.values().map(|&c| pairs(c)).sum(),
        in_b: mb.values().map(|&c| pairs(c)).sum(),
    })
}

/// Fraction of unordered item pairs on which two partitions agree: grouped
/// together in both, or apart in both. Labels are nominal.
pub fn rand_index<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64, SelectionError> {
    let p = pair_counts(a, b)?;
    // Pairs apart in both = total − in_a − in_b + both.
    let agree = p.total + 2 * p.both - p.in_a - p.in_b;
    Ok(agree as f64 / p.total as f64)
}

/// Rand index corrected for chance (Hubert–Arabie). Two partitions that
/// are both trivial in the same way score 1.
pub fn adjusted_rand_index<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64, SelectionError> {
    let p = pair_counts(a, b)?;
    let (both, in_a, in_b, total) = (p.both as f64, p.in_a as f64, p.in_b as f64, p.total as f64);
    let expected = in_a * in_b / total;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((both - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub labelings: Vec<Vec<usize>>,
    pub rand_matrix: Array2<f64>,
    /// Mean over the `R(R − 1)/2` distinct refit pairs.
    pub mean_rand: f64,
    pub mean_adjusted_rand: f64,
}

/// Seeds for `n_refit` stability refits, disjoint from the sweep's seed
/// paths.
pub fn stability_seeds(base_seed: u64, n_refit: usize) -> Vec<u64> {
    let tag = tag_of("stability");
    (0..n_refit).map(|r| derive_seed(base_seed, &[tag, r as u64])).collect()
}

/// Refit `k` components once per seed, hard-assign each fit, and compare
/// every pair of labelings.
pub fn stability(
    y: ArrayView2<f64>,
    k: usize,
    seeds: &[u64],
    opts: &GmmOptions,
) -> Result<StabilityResult, SelectionError> {
    let r = seeds.len();
    if r < 2 {
        return Err(SelectionError::TooFewRefits(r));
    }
    let labelings = seeds
        .par_iter()
        .map(|&seed| {
            let fail = |source| SelectionError::Fit { k, seed, source };
            let fit = em_fit(y, k, seed, opts).map_err(fail)?;
            let post = responsibilities(&fit.params, y).map_err(fail)?;
            Ok(hard_assign(&post))
        })
        .collect::<Vec<Result<Vec<usize>, SelectionError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut rand_matrix = Array2::<f64>::eye(r);
    let (mut sum, mut sum_adj) = (0.0, 0.0);
    for i in 0..r {
        for j in i + 1..r {
            let v = rand_index(&labelings[i], &labelings[j])?;
            rand_matrix[(i, j)] = v;
            rand_matrix[(j, i)] = v;
            sum += v;
            sum_adj += adjusted_rand_index(&labelings[i], &labelings[j])?;
        }
    }
    let n_pairs = (r * (r - 1) / 2) as f64;
    Ok(StabilityResult {
        k,
        seeds: seeds.to_vec(),
        labelings,
        rand_matrix,
        mean_rand: sum / n_pairs,
        mean_adjusted_rand: sum_adj / n_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Oracle: count agreeing pairs by direct enumeration.
    fn rand_by_enumeration(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn rand_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap(), 2.0 / 3.0);
        assert_eq!(rand_index(&[3, 1, 2], &[3, 1, 2]).unwrap(), 1.0);
        assert_eq!(rand_index(&[0, 0, 0], &[7, 7, 7]).unwrap(), 1.0);
        assert!(matches!(rand_index(&[0, 1], &[0]), Err(SelectionError::LengthMismatch(2, 1))));
        assert!(matches!(rand_index(&[0], &[0]), Err(SelectionError::TooFewItems)));
    }

    #[test]
    fn adjusted_rand_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        // Reference value for this pair: ARI = -0.5.
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn choose_k_prefers_smaller_on_ties() {
        assert_eq!(choose_k(&[(1, 10.0), (2, 5.0), (3, 5.0 + 1e-10)]), Some(2));
        assert_eq!(choose_k(&[(1, 10.0), (2, 5.0), (3, 4.0)]), Some(3));
        assert_eq!(choose_k(&[]), None);
    }

    fn blobs(seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        let centers = [[-8.0, 0.0], [8.0, 0.0], [0.0, 10.0]];
        Array2::from_shape_fn((150, 2), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[i % 3][j] + z
        })
    }

    #[test]
    fn sweep_is_independent_of_pool_size() {
        let y = blobs(1);
        let cfg = SweepConfig {
            k_min: 1,
            k_max: 4,
            n_init: 3,
            options: GmmOptions::default(),
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bic_sweep(y.view(), 42, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_eq!(a.chosen_k, 3);
        assert!(a.per_k.iter().all(|r| r.inits.len() == 3));
        assert_eq!(a.per_k[1].inits[2].seed, sweep_seed(42, 2, 2));
    }

    #[test]
    fn sweep_validation() {
        let y = blobs(2);
        let bad = |k_min, k_max, n_init| SweepConfig {
            k_min,
            k_max,
            n_init,
            options: GmmOptions::default(),
        };
        assert!(matches!(bic_sweep(y.view(), 0, &bad(0, 3, 1)), Err(SelectionError::KMinZero)));
        assert!(matches!(bic_sweep(y.view(), 0, &bad(4, 3, 1)), Err(SelectionError::EmptyGrid { .. })));
        assert!(matches!(
            bic_sweep(y.view(), 0, &bad(1, 150, 1)),
            Err(SelectionError::KMaxTooLarge { k_max: 150, n: 150 })
        ));
        assert!(matches!(bic_sweep(y.view(), 0, &bad(1, 3, 0)), Err(SelectionError::NoInits)));
    }

    #[test]
    fn stability_with_repeated_seed_is_one() {
        let y = blobs(3);
        let s = stability(y.view(), 4, &[9, 9], &GmmOptions::default()).unwrap();
        assert_eq!(s.mean_rand, 1.0);
        assert!(matches!(
            stability(y.view(), 3, &[1], &GmmOptions::default()),
            Err(SelectionError::TooFewRefits(1))
        ));
    }

    #[test]
    fn stability_matrix_shape() {
        let y = blobs(4);
        let seeds = stability_seeds(5, 4);
        let s = stability(y.view(), 3, &seeds, &GmmOptions::default()).unwrap();
        assert_eq!(s.rand_matrix.dim(), (4, 4));
        for i in 0..4 {
            assert_eq!(s.rand_matrix[(i, i)], 1.0);
            for j in 0..4 {
                assert_eq!(s.rand_matrix[(i, j)], s.rand_matrix[(j, i)]);
                assert!((0.0..=1.0).contains(&s.rand_matrix[(i, j)]));
            }
        }
        assert!(s.mean_rand > 0.99);
    }

    proptest! {
        #[test]
        fn rand_matches_enumeration_and_is_relabel_invariant(
            a in proptest::collection::vec(0usize..4, 2..40),
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from(seed);
            use rand::Rng;
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let r = rand_index(&a, &b).unwrap();
            prop_assert!((r - rand_by_enumeration(&a, &b)).abs() < 1e-15);
            prop_assert_eq!(r, rand_index(&b, &a).unwrap());
            let relabeled: Vec<usize> = a.iter().map(|x| (x + 1) % 4 + 10).collect();
            prop_assert_eq!(r, rand_index(&relabeled, &b).unwrap());
            prop_assert_eq!(
                adjusted_rand_index(&a, &b).unwrap(),
                adjusted_rand_index(&relabeled, &b).unwrap()
            );
        }
    }
}
