//! Rating-budget simulation.
//!
//! Segment-level MQM score vectors (one coordinate per system) are modelled
//! as a document effect drawn from N(mu, sigma_doc) plus a within-document
//! residual drawn from N(0, sigma_seg). Simulated projects draw documents,
//! rate a few consecutive segments of each, and compare the resulting system
//! ranking with the full-data ranking using Kendall's tau.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::corpus::{Corpus, SegmentKey};
use crate::scoring::{self, Filter};
use crate::taxonomy::WeightScheme;

/// Budgets are searched in steps of this many ratings.
pub const SEARCH_RESOLUTION: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("score grid is incomplete: {count} missing cells, e.g. {examples}")]
    IncompleteGrid { count: usize, examples: String },
    #[error("covariance matrix {0} is not positive definite even after jitter")]
    SingularModel(&'static str),
    #[error("at least two systems and two documents are required")]
    TooSmall,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target tau {target} not reached even with the full budget of {max} ratings (mean tau {reached:.3})")]
    NotReachable { target: f64, max: usize, reached: f64 },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Per-document blocks of segment score vectors for a fixed system list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub systems: Vec<String>,
    pub doc_ids: Vec<String>,
    /// `docs[d][s]` is the score vector (one entry per system) of segment `s`.
    pub docs: Vec<Vec<Vec<f64>>>,
    /// Mean number of ratings behind each cell.
    pub ratings_per_segment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPolicy {
    /// Missing cells are an error.
    Complete,
    /// Segment positions lacking any system are dropped.
    DropIncomplete,
}

impl ScoreGrid {
    pub fn from_corpus(
        corpus: &Corpus,
        scheme: &WeightScheme,
        systems: &[String],
        policy: GridPolicy,
    ) -> Result<Self, BudgetError> {
        let seg_scores = scoring::segment_scores(corpus, scheme, &Filter::ALL);
        let by_segment = corpus.ratings_by_segment();
        let positions: std::collections::BTreeSet<(String, usize)> = seg_scores
            .keys()
            .filter(|k| systems.contains(&k.system))
            .map(SegmentKey::position)
            .collect();
        let mut missing = Vec::new();
        let mut docs: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let (mut ratings, mut cells) = (0usize, 0usize);
        for (doc, seg) in positions {
            let mut row = Vec::with_capacity(systems.len());
            for s in systems {
                let key = SegmentKey::new(s.clone(), doc.clone(), seg);
                match seg_scores.get(&key) {
                    Some(v) => row.push(*v),
                    None => missing.push(key),
                }
            }
            if row.len() == systems.len() {
                for s in systems {
                    ratings += by_segment[&SegmentKey::new(s.clone(), doc.clone(), seg)].len();
                    cells += 1;
                }
                docs.entry(doc).or_default().push(row);
            }
        }
        if policy == GridPolicy::Complete && !missing.is_empty() {
            let examples = missing
                .iter()
                .take(3)
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ");
            return Err(BudgetError::IncompleteGrid {
                count: missing.len(),
                examples,
            });
        }
        let (doc_ids, docs) = docs.into_iter().unzip();
        Ok(ScoreGrid {
            systems: systems.to_vec(),
            doc_ids,
            docs,
            ratings_per_segment: if cells == 0 { 0.0 } else { ratings as f64 / cells as f64 },
        })
    }

    pub fn n_segments(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Mean score per system over every segment.
    pub fn system_means(&self) -> Vec<f64> {
        let d = self.systems.len();
        let mut sum = vec![0.0; d];
        for v in self.docs.iter().flatten() {
            sum.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        let n = self.n_segments() as f64;
        sum.into_iter().map(|s| s / n).collect()
    }
}

/// Row-major lower-triangular factor; all zeros for a zero covariance.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    d: usize,
    l: Vec<f64>,
}

impl Factor {
    fn new(sigma: &[Vec<f64>], name: &'static str) -> Result<Self, BudgetError> {
        let d = sigma.len();
        let mean_diag = (0..d).map(|i| sigma[i][i]).sum::<f64>() / d as f64;
        if sigma.iter().flatten().all(|&v| v == 0.0) {
            return Ok(Factor { d, l: vec![0.0; d * d] });
        }
        let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
        let chol = Cholesky::new(m.clone()).or_else(|| {
            let jitter = 1e-9 * mean_diag.abs().max(f64::MIN_POSITIVE);
            Cholesky::new(m + DMatrix::identity(d, d) * jitter)
        });
        let l = chol.ok_or(BudgetError::SingularModel(name))?.l();
        Ok(Factor {
            d,
            l: (0..d * d).map(|k| l[(k / d, k % d)]).collect(),
        })
    }

    /// out += L z
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            let row = &self.l[i * self.d..i * self.d + i + 1];
            *o += row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.l[i * self.d + j]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub systems: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma_doc: Vec<Vec<f64>>,
    pub sigma_seg: Vec<Vec<f64>>,
    pub n_docs: usize,
    pub n_segments: usize,
    pub ratings_per_segment: f64,
    l_doc: Factor,
    l_seg: Factor,
}

fn outer_add(acc: &mut [Vec<f64>], v: &[f64]) {
    for (i, row) in acc.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell += v[i] * v[j];
        }
    }
}

impl GaussianModel {
    /// Builds a model from explicit parameters.
    pub fn new(
        systems: Vec<String>,
        mu: Vec<f64>,
        sigma_doc: Vec<Vec<f64>>,
        sigma_seg: Vec<Vec<f64>>,
        n_docs: usize,
        n_segments: usize,
    ) -> Result<Self, BudgetError> {
        let d = mu.len();
        let square = |m: &[Vec<f64>]| m.len() == d && m.iter().all(|r| r.len() == d);
        if systems.len() != d || !square(&sigma_doc) || !square(&sigma_seg) {
            return Err(BudgetError::InvalidConfig("dimension mismatch".into()));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(BudgetError::InvalidConfig("non-finite mean".into()));
        }
        Ok(GaussianModel {
            l_doc: Factor::new(&sigma_doc, "sigma_doc")?,
            l_seg: Factor::new(&sigma_seg, "sigma_seg")?,
            systems,
            mu,
            sigma_doc,
            sigma_seg,
            n_docs,
            n_segments,
            ratings_per_segment: 1.0,
        })
    }

    /// Fits the two-level model: mu is the mean segment vector, sigma_doc the
    /// unbiased covariance of document-mean vectors, sigma_seg the pooled
    /// covariance of residuals around each document mean (divided by
    /// N - n_docs).
    pub fn fit(grid: &ScoreGrid) -> Result<Self, BudgetError> {
        let d = grid.systems.len();
        let n_docs = grid.docs.len();
        let n = grid.n_segments();
        if d < 2 || n_docs < 2 || n <= n_docs {
            return Err(BudgetError::TooSmall);
        }
        let mu = grid.system_means();
        let doc_means: Vec<Vec<f64>> = grid
            .docs
            .iter()
            .map(|segs| {
                (0..d)
                    .map(|s| segs.iter().map(|v| v[s]).sum::<f64>() / segs.len() as f64)
                    .collect()
            })
            .collect();
        let grand: Vec<f64> = (0..d)
            .map(|s| doc_means.iter().map(|m| m[s]).sum::<f64>() / n_docs as f64)
            .collect();
        let mut sigma_doc = vec![vec![0.0; d]; d];
        for m in &doc_means {
            let dev: Vec<f64> = m.iter().zip(&grand).map(|(a, b)| a - b).collect();
            outer_add(&mut sigma_doc, &dev);
        }
        let mut sigma_seg = vec![vec![0.0; d]; d];
        for (segs, m) in grid.docs.iter().zip(&doc_means) {
            for v in segs {
                let dev: Vec<f64> = v.iter().zip(m).map(|(a, b)| a - b).collect();
                outer_add(&mut sigma_seg, &dev);
            }
        }
        sigma_doc.iter_mut().flatten().for_each(|v| *v /= (n_docs - 1) as f64);
        sigma_seg.iter_mut().flatten().for_each(|v| *v /= (n - n_docs) as f64);
        let mut model = Self::new(grid.systems.clone(), mu, sigma_doc, sigma_seg, n_docs, n)?;
        model.ratings_per_segment = grid.ratings_per_segment;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Lower Cholesky factors of (sigma_doc, sigma_seg), jittered if needed.
    pub fn factors(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.l_doc.matrix(), self.l_seg.matrix())
    }

    /// Total ratings per system the full corpus represents.
    pub fn full_budget(&self) -> usize {
        (self.n_segments as f64 * self.ratings_per_segment.max(1.0)).round() as usize
    }

    fn normals<R: Rng>(&self, rng: &mut R, z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }

    /// Draws `n_docs` documents of `per_doc` segment vectors each.
    pub fn sample_segments<R: Rng>(&self, n_docs: usize, per_doc: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut out = Vec::with_capacity(n_docs * per_doc);
        for _ in 0..n_docs {
            let mut doc = self.mu.clone();
            self.normals(rng, &mut z);
            self.l_doc.apply(&z, &mut doc);
            for _ in 0..per_doc {
                let mut seg = doc.clone();
                self.normals(rng, &mut z);
                self.l_seg.apply(&z, &mut seg);
                out.push(seg);
            }
        }
        out
    }
}

/// Parameters of a simulated rating project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingBudgetConfig {
    /// Segment x rater rating events per system.
    pub ratings_per_system: usize,
    pub raters_per_item: usize,
    pub consecutive_per_doc: usize,
    /// Every system is rated on the same segments.
    pub align_items_across_systems: bool,
    /// The same raters rate an item for every system, so their noise is
    /// shared across systems.
    pub align_raters: bool,
    pub iterations: usize,
    pub seed: u64,
    pub target_tau: f64,
    /// Scale of rater noise relative to the residual standard deviation.
    pub rater_noise: f64,
}

impl Default for RatingBudgetConfig {
    fn default() -> Self {
        RatingBudgetConfig {
            ratings_per_system: 900,
            raters_per_item: 1,
            consecutive_per_doc: 3,
            align_items_across_systems: true,
            align_raters: false,
            iterations: 1000,
            seed: crate::DEFAULT_SEED,
            target_tau: 0.9,
            rater_noise: 1.0,
        }
    }
}

impl RatingBudgetConfig {
    fn validate(&self) -> Result<(), BudgetError> {
        let bad = |m: &str| Err(BudgetError::InvalidConfig(m.to_string()));
        if self.ratings_per_system == 0 {
            return bad("ratings_per_system must be positive");
        }
        if self.raters_per_item == 0 || self.consecutive_per_doc == 0 {
            return bad("raters_per_item and consecutive_per_doc must be at least 1");
        }
        if !self.rater_noise.is_finite() || self.rater_noise < 0.0 {
            return bad("rater_noise must be non-negative");
        }
        Ok(())
    }

    /// Segment counts of the simulated documents; the last takes the
    /// remainder.
    pub fn document_sizes(&self) -> Vec<usize> {
        let items = (self.ratings_per_system / self.raters_per_item).max(1);
        let c = self.consecutive_per_doc;
        let mut sizes = vec![c; items / c];
        if items % c != 0 {
            sizes.push(items % c);
        }
        sizes
    }
}

/// Simulated system scores for one project.
pub fn simulate_project<R: Rng>(
    model: &GaussianModel,
    config: &RatingBudgetConfig,
    rng: &mut R,
) -> Result<Vec<f64>, BudgetError> {
    config.validate()?;
    let d = model.dim();
    let sizes = config.document_sizes();
    let noise_sd: Vec<f64> = (0..d)
        .map(|i| model.sigma_seg[i][i].max(0.0).sqrt() * config.rater_noise)
        .collect();
    let k = config.raters_per_item;
    let mut z = vec![0.0; d];
    let mut sums = vec![0.0; d];
    let mut count = 0usize;

    // One pass draws full vectors; with unaligned items each system takes its
    // coordinate from its own independent pass.
    let passes = if config.align_items_across_systems { 1 } else { d };
    for pass in 0..passes {
        for &size in &sizes {
            // Deviations from mu; adding mu at the end keeps zero-variance
            // models exact.
            let mut doc = vec![0.0; d];
            model.normals(rng, &mut z);
            model.l_doc.apply(&z, &mut doc);
            for _ in 0..size {
                let mut seg = doc.clone();
                model.normals(rng, &mut z);
                model.l_seg.apply(&z, &mut seg);
                let mut rated = vec![0.0; d];
                for _ in 0..k {
                    if config.align_raters {
                        let shared: f64 = rng.sample(StandardNormal);
                        for s in 0..d {
                            rated[s] += seg[s] + noise_sd[s] * shared;
                        }
                    } else {
                        for s in 0..d {
                            let e: f64 = rng.sample(StandardNormal);
                            rated[s] += seg[s] + noise_sd[s] * e;
                        }
                    }
                }
                if passes == 1 {
                    for s in 0..d {
                        sums[s] += rated[s] / k as f64;
                    }
                } else {
                    sums[pass] += rated[pass] / k as f64;
                }
                if pass == 0 {
                    count += 1;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(&model.mu)
        .map(|(s, m)| m + s / count as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDistribution {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// (probability, value) pairs.
    pub quantiles: Vec<(f64, f64)>,
    pub config: RatingBudgetConfig,
}

impl TauDistribution {
    fn new(samples: Vec<f64>, config: RatingBudgetConfig) -> Self {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
            .into_iter()
            .map(|p| (p, quantile(&sorted, p)))
            .collect();
        TauDistribution {
            samples,
            mean,
            quantiles,
            config,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\ttau\n");
        for (i, t) in self.samples.iter().enumerate() {
            out.push_str(&format!("{i}\t{t:.6}\n"));
        }
        out
    }
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Kendall tau between each simulated project and the full-data scores.
/// Iteration `i` uses its own random stream derived from the seed, so
/// results do not depend on scheduling.
pub fn tau_distribution(
    model: &GaussianModel,
    full_data_scores: &[f64],
    config: &RatingBudgetConfig,
) -> Result<TauDistribution, BudgetError> {
    config.validate()?;
    if config.iterations == 0 {
        return Err(BudgetError::InvalidConfig("iterations must be positive".into()));
    }
    if full_data_scores.len() != model.dim() {
        return Err(BudgetError::InvalidConfig("full-data scores do not match the model".into()));
    }
    let samples = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            let sim = simulate_project(model, config, &mut iteration_rng(config.seed, i))?;
            Ok(analysis::kendall_tau_b(&sim, full_data_scores)?)
        })
        .collect::<Result<Vec<f64>, BudgetError>>()?;
    Ok(TauDistribution::new(samples, config.clone()))
}

/// Smallest budget (a multiple of [`SEARCH_RESOLUTION`]) whose mean tau
/// reaches `template.target_tau`: doubling from the resolution, then
/// bisection.
pub fn min_ratings_for_tau(
    model: &GaussianModel,
    full_data_scores: &[f64],
    template: &RatingBudgetConfig,
) -> Result<usize, BudgetError> {
    if template.target_tau <= 0.0 {
        return Ok(SEARCH_RESOLUTION);
    }
    let max = model.full_budget().max(SEARCH_RESOLUTION);
    let mean_at = |b: usize| -> Result<f64, BudgetError> {
        let config = RatingBudgetConfig {
            ratings_per_system: b,
            ..template.clone()
        };
        Ok(tau_distribution(model, full_data_scores, &config)?.mean)
    };
    let mut lo = 0;
    let mut hi = SEARCH_RESOLUTION;
    loop {
        if mean_at(hi)? >= template.target_tau {
            break;
        }
        if hi >= max {
            return Err(BudgetError::NotReachable {
                target: template.target_tau,
                max,
                reached: mean_at(max)?,
            });
        }
        lo = hi;
        hi = (hi * 2).min(max);
    }
    while hi - lo > SEARCH_RESOLUTION {
        let mid = (lo + hi) / 2 / SEARCH_RESOLUTION * SEARCH_RESOLUTION;
        let mid = if mid <= lo { lo + SEARCH_RESOLUTION } else { mid };
        if mean_at(mid)? >= template.target_tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Nonparametric counterpart of [`simulate_project`]: documents are drawn
/// with replacement from the real grid and a run of consecutive real segment
/// vectors is taken from each (items are always aligned). Used to check the
/// Gaussian approximation.
pub fn simulate_block_bootstrap<R: Rng>(
    grid: &ScoreGrid,
    config: &RatingBudgetConfig,
    rng: &mut R,
) -> Result<Vec<f64>, BudgetError> {
    config.validate()?;
    if grid.docs.is_empty() {
        return Err(BudgetError::TooSmall);
    }
    let d = grid.systems.len();
    let mut sums = vec![0.0; d];
    let mut count = 0usize;
    for size in config.document_sizes() {
        let doc = &grid.docs[rng.random_range(0..grid.docs.len())];
        let take = size.min(doc.len());
        let start = rng.random_range(0..=doc.len() - take);
        for v in &doc[start..start + take] {
            sums.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            count += 1;
        }
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

pub fn tau_distribution_bootstrap(
    grid: &ScoreGrid,
    full_data_scores: &[f64],
    config: &RatingBudgetConfig,
) -> Result<TauDistribution, BudgetError> {
    let samples = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            let sim = simulate_block_bootstrap(grid, config, &mut iteration_rng(config.seed, i))?;
            Ok(analysis::kendall_tau_b(&sim, full_data_scores)?)
        })
        .collect::<Result<Vec<f64>, BudgetError>>()?;
    Ok(TauDistribution::new(samples, config.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("s{i}")).collect()
    }

    fn identity(d: usize) -> Vec<Vec<f64>> {
        (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect()
    }

    fn grid(docs: Vec<Vec<Vec<f64>>>) -> ScoreGrid {
        ScoreGrid {
            systems: names(docs[0][0].len()),
            doc_ids: (0..docs.len()).map(|i| format!("d{i}")).collect(),
            docs,
            ratings_per_segment: 1.0,
        }
    }

    #[test]
    fn constant_scores_give_zero_covariances() {
        let g = grid(vec![vec![vec![2.0, 3.0]; 3]; 4]);
        let m = GaussianModel::fit(&g).unwrap();
        assert_eq!(m.mu, vec![2.0, 3.0]);
        assert!(m.sigma_doc.iter().chain(&m.sigma_seg).flatten().all(|&v| v == 0.0));
        let config = RatingBudgetConfig::default();
        let sim = simulate_project(&m, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sim, vec![2.0, 3.0]);
    }

    #[test]
    fn hand_computed_covariances() {
        // Two documents with two segments each, two systems.
        let g = grid(vec![
            vec![vec![1.0, 2.0], vec![3.0, 2.0]],
            vec![vec![5.0, 0.0], vec![7.0, 4.0]],
        ]);
        let m = GaussianModel::fit(&g).unwrap();
        assert_eq!(m.mu, vec![4.0, 2.0]);
        // Doc means (2, 2) and (6, 2): variance 8 for s0, 0 otherwise.
        assert_eq!(m.sigma_doc, vec![vec![8.0, 0.0], vec![0.0, 0.0]]);
        // Residuals (-1,0),(1,0),(-1,-2),(1,2); divisor 4 - 2.
        assert_eq!(m.sigma_seg, vec![vec![2.0, 2.0], vec![2.0, 4.0]]);
        let (_, l) = m.factors();
        for i in 0..2 {
            for j in 0..2 {
                let llt: f64 = (0..2).map(|k| l[i][k] * l[j][k]).sum();
                assert!((llt - m.sigma_seg[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_covariance_is_jittered() {
        let sigma = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let m = GaussianModel::new(names(2), vec![0.0; 2], sigma.clone(), sigma, 10, 30).unwrap();
        let (l, _) = m.factors();
        let llt00 = l[0][0] * l[0][0];
        assert!((llt00 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn identity_draws_recover_identity() {
        let d = 4;
        let m = GaussianModel::new(names(d), vec![0.0; d], vec![vec![0.0; d]; d], identity(d), 1, 1).unwrap();
        let draws = m.sample_segments(100_000, 1, &mut ChaCha8Rng::seed_from_u64(crate::DEFAULT_SEED));
        let n = draws.len() as f64;
        let mean: Vec<f64> = (0..d).map(|s| draws.iter().map(|v| v[s]).sum::<f64>() / n).collect();
        let mut err = 0.0;
        for i in 0..d {
            for j in 0..d {
                let c = draws.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (n - 1.0);
                err += (c - f64::from(u8::from(i == j))).powi(2);
            }
        }
        assert!(err.sqrt() / (d as f64).sqrt() < 0.05);
    }

    #[test]
    fn two_level_covariance_adds_up() {
        // Across documents, segment vectors have covariance sigma_doc + sigma_seg.
        let doc = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        let seg = vec![vec![2.0, -0.5], vec![-0.5, 1.0]];
        let m = GaussianModel::new(names(2), vec![1.0, -1.0], doc, seg, 1, 1).unwrap();
        let draws = m.sample_segments(100_000, 1, &mut ChaCha8Rng::seed_from_u64(3));
        let n = draws.len() as f64;
        let mean: Vec<f64> = (0..2).map(|s| draws.iter().map(|v| v[s]).sum::<f64>() / n).collect();
        let expected = [[3.0, 0.0], [0.0, 2.0]];
        for i in 0..2 {
            assert!((mean[i] - m.mu[i]).abs() < 0.02);
            for j in 0..2 {
                let c = draws.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (n - 1.0);
                assert!((c - expected[i][j]).abs() < 0.05, "{i}{j}: {c}");
            }
        }
    }

    fn spread_model(d: usize) -> GaussianModel {
        let mu: Vec<f64> = (0..d).map(|i| i as f64 * 0.3).collect();
        let doc: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.8 }).collect()).collect();
        let seg: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 4.0 } else { 1.0 }).collect()).collect();
        GaussianModel::new(names(d), mu, doc, seg, 100, 1000).unwrap()
    }

    #[test]
    fn simulation_is_reproducible_and_two_systems_give_unit_taus() {
        let m = spread_model(2);
        let config = RatingBudgetConfig {
            ratings_per_system: 30,
            iterations: 200,
            ..Default::default()
        };
        let a = tau_distribution(&m, &m.mu, &config).unwrap();
        let b = tau_distribution(&m, &m.mu, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 200);
        assert!(a.samples.iter().all(|&t| t == 1.0 || t == -1.0));
    }

    #[test]
    fn more_ratings_help_and_aligned_items_help() {
        let m = spread_model(5);
        let tau = |b: usize, aligned: bool| {
            let config = RatingBudgetConfig {
                ratings_per_system: b,
                iterations: 300,
                align_items_across_systems: aligned,
                ..Default::default()
            };
            tau_distribution(&m, &m.mu, &config).unwrap().mean
        };
        let ladder: Vec<f64> = [30, 120, 480, 1920].iter().map(|&b| tau(b, true)).collect();
        assert!(ladder.windows(2).all(|w| w[1] >= w[0] - 0.01), "{ladder:?}");
        assert!(tau(300, true) >= tau(300, false) - 0.01);
    }

    #[test]
    fn budget_search() {
        let m = spread_model(4);
        let template = RatingBudgetConfig {
            iterations: 200,
            target_tau: 0.0,
            ..Default::default()
        };
        assert_eq!(min_ratings_for_tau(&m, &m.mu, &template).unwrap(), SEARCH_RESOLUTION);
        let template = RatingBudgetConfig {
            target_tau: 0.7,
            ..template
        };
        let b = min_ratings_for_tau(&m, &m.mu, &template).unwrap();
        assert_eq!(b % SEARCH_RESOLUTION, 0);
        let at = |b: usize| {
            tau_distribution(&m, &m.mu, &RatingBudgetConfig { ratings_per_system: b, ..template.clone() })
                .unwrap()
                .mean
        };
        assert!(at(b) >= 0.7);
        let small = GaussianModel { n_segments: 5, ..m.clone() };
        let template = RatingBudgetConfig { target_tau: 0.999, ..template };
        assert!(matches!(
            min_ratings_for_tau(&small, &m.mu, &template),
            Err(BudgetError::NotReachable { .. })
        ));
    }

    #[test]
    fn document_sizes_put_remainder_last() {
        let c = RatingBudgetConfig {
            ratings_per_system: 20,
            raters_per_item: 2,
            consecutive_per_doc: 3,
            ..Default::default()
        };
        assert_eq!(c.document_sizes(), vec![3, 3, 3, 1]);
    }

    #[test]
    fn bootstrap_oracle_runs() {
        let g = grid(vec![
            vec![vec![1.0, 2.0, 3.0], vec![0.0, 2.5, 3.5]],
            vec![vec![0.5, 1.0, 4.0], vec![1.0, 2.0, 2.0], vec![0.0, 1.0, 5.0]],
        ]);
        let full = g.system_means();
        let config = RatingBudgetConfig {
            ratings_per_system: 60,
            iterations: 100,
            ..Default::default()
        };
        let dist = tau_distribution_bootstrap(&g, &full, &config).unwrap();
        assert!(dist.mean > 0.5);
    }
}
