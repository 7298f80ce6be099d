//! Correlation statistics, rating-method and metric correlation reports, and
//! per-document score profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::corpus::{Corpus, SegmentKey};
use crate::scoring::{self, Filter, Level, Orientation, ScoreKey};
use crate::taxonomy::WeightScheme;

/// Above this length p-values come from the t / normal approximations
/// instead of enumerating every permutation.
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

/// Metrics averaged separately as the baseline subset.
pub const BASELINE_METRICS: [&str; 5] = ["BLEU", "sentBLEU", "TER", "chrF", "chrF++"];

pub const WMT_RAW: &str = "WMT_RAW";
pub const WMT_Z: &str = "WMT_Z";
pub const PSQM: &str = "pSQM";
pub const CSQM: &str = "cSQM";

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} items, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no usable pairs")]
    NoUsablePairs,
    #[error("missing scores: {0}")]
    MissingScores(String),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    Pearson,
    KendallTauB,
    KendallLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub statistic: Statistic,
    pub value: f64,
    /// Items for Pearson and tau-b; counted pairs for the Kendall-like statistic.
    pub n: usize,
    pub p_value: Option<f64>,
}

fn check_lengths(xs: &[f64], ys: &[f64], needed: usize) -> Result<(), AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < needed {
        return Err(AnalysisError::TooShort {
            needed,
            found: xs.len(),
        });
    }
    Ok(())
}

/// Calls `on_swap(i, j)` for each transposition of Heap's algorithm, visiting
/// every permutation of `n` items after the initial one exactly once.
fn heap_permutations(n: usize, mut on_swap: impl FnMut(usize, usize)) {
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            on_swap(j, i);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Sample Pearson correlation with a two-tailed p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, AnalysisError> {
    check_lengths(xs, ys, 3)?;
    let xc = centered(xs);
    let yc = centered(ys);
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    let syy: f64 = yc.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::DegenerateInput("constant vector".into()));
    }
    let dot = |ys: &[f64]| xc.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>();
    let sxy = dot(&yc);
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let n = xs.len();

    let p = if n <= EXACT_PERMUTATION_MAX_N {
        let threshold = sxy.abs() * (1.0 - 1e-12);
        let mut perm = yc.clone();
        let mut extreme = usize::from(dot(&perm).abs() >= threshold);
        let mut total = 1usize;
        heap_permutations(n, |i, j| {
            perm.swap(i, j);
            total += 1;
            if dot(&perm).abs() >= threshold {
                extreme += 1;
            }
        });
        extreme as f64 / total as f64
    } else if r.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(CorrelationResult {
        statistic: Statistic::Pearson,
        value: r,
        n,
        p_value: Some(p),
    })
}

fn sign(a: f64, b: f64) -> i64 {
    match a.partial_cmp(&b) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    }
}

/// Sizes of runs of equal values in a sorted slice.
fn tie_groups(sorted: &[f64]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push((j - i) as u64);
        }
        i = j;
    }
    out
}

fn pairs(t: u64) -> u64 {
    t * (t - 1) / 2
}

/// Sorts `v` and counts the swaps an insertion sort would make (merge sort).
fn count_swaps(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid]) + count_swaps(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

struct TauParts {
    s: i64,
    n0: u64,
    x_ties: Vec<u64>,
    y_ties: Vec<u64>,
}

/// Knight's O(n log n) computation of the tau numerator and tie structure.
fn tau_parts(xs: &[f64], ys: &[f64]) -> TauParts {
    let n = xs.len() as u64;
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(ys[a].total_cmp(&ys[b])));
    let xs_sorted: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let mut ys_by_x: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();

    let x_ties = tie_groups(&xs_sorted);
    let mut joint = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs_sorted[j] == xs_sorted[i] && ys_by_x[j] == ys_by_x[i] {
            j += 1;
        }
        joint += pairs((j - i) as u64);
        i = j;
    }
    let swaps = count_swaps(&mut ys_by_x);
    let y_ties = tie_groups(&ys_by_x);
    let n0 = pairs(n);
    let n1: u64 = x_ties.iter().map(|&t| pairs(t)).sum();
    let n2: u64 = y_ties.iter().map(|&t| pairs(t)).sum();
    let s = n0 as i64 - n1 as i64 - n2 as i64 + joint as i64 - 2 * swaps as i64;
    TauParts {
        s,
        n0,
        x_ties,
        y_ties,
    }
}

/// Kendall tau-b with a two-tailed p-value (exact permutation distribution
/// up to [`EXACT_PERMUTATION_MAX_N`] items, tie-corrected normal
/// approximation beyond).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, AnalysisError> {
    let tau = kendall_tau_b(xs, ys)?;
    let parts = tau_parts(xs, ys);
    let n = xs.len();

    let p = if n <= EXACT_PERMUTATION_MAX_N {
        exact_tau_p(xs, ys, parts.s)
    } else {
        let nf = n as f64;
        let term = |ties: &[u64], f: &dyn Fn(f64) -> f64| ties.iter().map(|&t| f(t as f64)).sum::<f64>();
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let vt = term(&parts.x_ties, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let vu = term(&parts.y_ties, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let v1 = term(&parts.x_ties, &|t| t * (t - 1.0)) * term(&parts.y_ties, &|t| t * (t - 1.0))
            / (2.0 * nf * (nf - 1.0));
        let v2 = term(&parts.x_ties, &|t| t * (t - 1.0) * (t - 2.0))
            * term(&parts.y_ties, &|t| t * (t - 1.0) * (t - 2.0))
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
        let var = (v0 - vt - vu) / 18.0 + v1 + v2;
        if var <= 0.0 {
            1.0
        } else {
            let z = parts.s as f64 / var.sqrt();
            let normal = Normal::standard();
            (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
        }
    };
    Ok(CorrelationResult {
        statistic: Statistic::KendallTauB,
        value: tau,
        n,
        p_value: Some(p),
    })
}

/// Tau-b value alone, without the p-value; used in simulation loops.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(xs, ys, 2)?;
    let parts = tau_parts(xs, ys);
    let n1: u64 = parts.x_ties.iter().map(|&t| pairs(t)).sum();
    let n2: u64 = parts.y_ties.iter().map(|&t| pairs(t)).sum();
    if n1 == parts.n0 || n2 == parts.n0 {
        return Err(AnalysisError::DegenerateInput("all values tied".into()));
    }
    let denom = (((parts.n0 - n1) as f64) * ((parts.n0 - n2) as f64)).sqrt();
    Ok((parts.s as f64 / denom).clamp(-1.0, 1.0))
}

/// Share of permutations of `ys` whose |S| reaches the observed |S|. The
/// tau-b denominator does not depend on the permutation, so comparing
/// numerators is exact.
fn exact_tau_p(xs: &[f64], ys: &[f64], observed: i64) -> f64 {
    let n = xs.len();
    let sx: Vec<i64> = (0..n * n).map(|k| sign(xs[k / n], xs[k % n])).collect();
    let sy: Vec<i64> = (0..n * n).map(|k| sign(ys[k / n], ys[k % n])).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let stat = |perm: &[usize]| {
        let mut s = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += sx[i * n + j] * sy[perm[i] * n + perm[j]];
            }
        }
        s
    };
    let target = observed.abs();
    let mut extreme = usize::from(stat(&perm).abs() >= target);
    let mut total = 1usize;
    heap_permutations(n, |i, j| {
        perm.swap(i, j);
        total += 1;
        if stat(&perm).abs() >= target {
            extreme += 1;
        }
    });
    extreme as f64 / total as f64
}

/// WMT-style pooled pairwise agreement. Each row holds one segment's scores
/// for the same systems in the same column order; NaN marks a missing score.
///
/// A system pair counts only if its gold scores differ by at least
/// `threshold` (and are not equal). It is concordant when the candidate
/// orders it the same way; a candidate tie counts as discordant.
pub fn kendall_like(
    gold: &[Vec<f64>],
    cand: &[Vec<f64>],
    threshold: f64,
    gold_orientation: Orientation,
    cand_orientation: Orientation,
) -> Result<CorrelationResult, AnalysisError> {
    if gold.len() != cand.len() {
        return Err(AnalysisError::LengthMismatch(gold.len(), cand.len()));
    }
    let (mut concordant, mut discordant) = (0usize, 0usize);
    for (g, c) in gold.iter().zip(cand) {
        if g.len() != c.len() {
            return Err(AnalysisError::LengthMismatch(g.len(), c.len()));
        }
        for a in 0..g.len() {
            for b in (a + 1)..g.len() {
                if [g[a], g[b], c[a], c[b]].iter().any(|v| v.is_nan()) {
                    continue;
                }
                let diff = gold_orientation.oriented(g[a]) - gold_orientation.oriented(g[b]);
                if diff == 0.0 || diff.abs() < threshold {
                    continue;
                }
                let cdiff = cand_orientation.oriented(c[a]) - cand_orientation.oriented(c[b]);
                if cdiff != 0.0 && (cdiff > 0.0) == (diff > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n = concordant + discordant;
    if n == 0 {
        return Err(AnalysisError::NoUsablePairs);
    }
    Ok(CorrelationResult {
        statistic: Statistic::KendallLike,
        value: (concordant as f64 - discordant as f64) / n as f64,
        n,
        p_value: None,
    })
}

/// Where a set of scores comes from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreSource {
    /// MQM under the report's weight scheme; lower is better.
    Mqm,
    /// A scalar rating method attached to the corpus (`pSQM`, `WMT_RAW`, ...).
    Scalar(String),
    /// An automatic metric.
    Metric { name: String, orientation: Orientation },
}

impl ScoreSource {
    pub fn name(&self) -> &str {
        match self {
            ScoreSource::Mqm => "MQM",
            ScoreSource::Scalar(m) => m,
            ScoreSource::Metric { name, .. } => name,
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            ScoreSource::Mqm => Orientation::LowerBetter,
            ScoreSource::Scalar(_) => Orientation::HigherBetter,
            ScoreSource::Metric { orientation, .. } => *orientation,
        }
    }

    fn is_baseline(&self) -> bool {
        matches!(self, ScoreSource::Metric { name, .. }
            if BASELINE_METRICS.iter().any(|b| b.eq_ignore_ascii_case(name)))
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a gold-standard name: `MQM`, `WMT_Z`, `WMT_RAW`, `pSQM` or `cSQM`.
impl FromStr for ScoreSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "mqm" => ScoreSource::Mqm,
            "wmtz" | "wmt" => ScoreSource::Scalar(WMT_Z.into()),
            "wmtraw" => ScoreSource::Scalar(WMT_RAW.into()),
            "psqm" => ScoreSource::Scalar(PSQM.into()),
            "csqm" => ScoreSource::Scalar(CSQM.into()),
            _ => return Err(format!("unknown gold source {s:?} (MQM, WMT_Z, WMT_RAW, pSQM, cSQM)")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentFilter {
    /// Only segments that also carry WMT ratings.
    WmtRatedOnly,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldConfig {
    pub source: ScoreSource,
    pub orientation: Orientation,
    pub segment_filter: SegmentFilter,
    /// `None` selects the default: 25 for raw WMT scores at segment level,
    /// 0 otherwise.
    pub seg_threshold: Option<f64>,
}

impl GoldConfig {
    pub fn new(source: ScoreSource) -> Self {
        GoldConfig {
            orientation: source.orientation(),
            source,
            segment_filter: SegmentFilter::All,
            seg_threshold: None,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.seg_threshold.unwrap_or(match &self.source {
            ScoreSource::Scalar(m) if m == WMT_RAW => 25.0,
            _ => 0.0,
        })
    }
}

/// Which systems are scored, and whether human translations join them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemSet {
    pub mt: Vec<String>,
    pub human: Vec<String>,
    pub include_human: bool,
}

impl SystemSet {
    pub fn selected(&self) -> Vec<String> {
        let mut out = self.mt.clone();
        if self.include_human {
            out.extend(self.human.iter().cloned());
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationLevel {
    System,
    Segment,
}

impl FromStr for CorrelationLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "system" | "sys" => Ok(CorrelationLevel::System),
            "segment" | "seg" => Ok(CorrelationLevel::Segment),
            other => Err(format!("unknown correlation level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub candidate: String,
    pub pearson: CorrelationResult,
    pub kendall: CorrelationResult,
    /// Segment level only.
    pub kendall_like: Option<CorrelationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAverage {
    pub subset: String,
    pub n_candidates: usize,
    pub pearson: f64,
    pub pearson_p: f64,
    pub kendall: f64,
    pub kendall_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub gold: String,
    pub level: CorrelationLevel,
    pub include_human: bool,
    pub systems: Vec<String>,
    pub rows: Vec<CorrelationRow>,
    pub averages: Vec<SubsetAverage>,
}

impl CorrelationReport {
    pub fn row(&self, candidate: &str) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.candidate == candidate)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("candidate\tn\tpearson\tpearson_p\tkendall\tkendall_p\tkendall_like\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
                r.candidate,
                r.pearson.n,
                r.pearson.value,
                r.pearson.p_value.unwrap_or(f64::NAN),
                r.kendall.value,
                r.kendall.p_value.unwrap_or(f64::NAN),
                r.kendall_like.map_or("NA".to_string(), |k| format!("{:.4}", k.value)),
            ));
        }
        for a in &self.averages {
            out.push_str(&format!(
                "avg:{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\tNA\n",
                a.subset, a.n_candidates, a.pearson, a.pearson_p, a.kendall, a.kendall_p
            ));
        }
        out
    }
}

/// System-level scores of a source, restricted to nothing (all systems found).
pub fn source_system_scores(
    corpus: &Corpus,
    scheme: &WeightScheme,
    source: &ScoreSource,
) -> Result<BTreeMap<String, f64>, AnalysisError> {
    match source {
        ScoreSource::Mqm => Ok(scoring::aggregate(corpus, scheme, Level::System, &Filter::ALL)?.system_scores()),
        ScoreSource::Scalar(method) => {
            let segs = scalar_segment_scores(corpus, method)?;
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for (k, v) in segs {
                let e = sums.entry(k.system).or_default();
                e.0 += v;
                e.1 += 1;
            }
            Ok(sums.into_iter().map(|(s, (t, n))| (s, t / n as f64)).collect())
        }
        ScoreSource::Metric { name, .. } => corpus
            .metrics()
            .system
            .get(name)
            .cloned()
            .ok_or_else(|| AnalysisError::MissingScores(format!("system-level scores for metric {name}"))),
    }
}

fn scalar_segment_scores(corpus: &Corpus, method: &str) -> Result<BTreeMap<SegmentKey, f64>, AnalysisError> {
    let ratings = corpus
        .scalar(method)
        .ok_or_else(|| AnalysisError::MissingScores(format!("scalar ratings {method}")))?;
    let mut sums: BTreeMap<SegmentKey, (f64, usize)> = BTreeMap::new();
    for r in ratings {
        let e = sums.entry(r.key.clone()).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(k, (t, n))| (k, t / n as f64)).collect())
}

/// Segment-level scores of a source.
pub fn source_segment_scores(
    corpus: &Corpus,
    scheme: &WeightScheme,
    source: &ScoreSource,
) -> Result<BTreeMap<SegmentKey, f64>, AnalysisError> {
    match source {
        ScoreSource::Mqm => Ok(scoring::segment_scores(corpus, scheme, &Filter::ALL)),
        ScoreSource::Scalar(method) => scalar_segment_scores(corpus, method),
        ScoreSource::Metric { name, .. } => corpus
            .metrics()
            .segment
            .get(name)
            .cloned()
            .ok_or_else(|| AnalysisError::MissingScores(format!("segment-level scores for metric {name}"))),
    }
}

fn pick_systems(
    scores: &BTreeMap<String, f64>,
    systems: &[String],
    source: &ScoreSource,
) -> Result<Vec<f64>, AnalysisError> {
    systems
        .iter()
        .map(|s| {
            scores
                .get(s)
                .map(|v| source.orientation().oriented(*v))
                .ok_or_else(|| AnalysisError::MissingScores(format!("{source} has no score for system {s}")))
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Correlates each candidate with the gold standard over the selected
/// systems. Every source is oriented so that higher is better before
/// correlating. Segment-level rows pool all (segment, system) items for
/// Pearson/tau-b and add the Kendall-like statistic over per-segment system
/// pairs; segments missing any side are dropped.
pub fn correlation_report(
    corpus: &Corpus,
    scheme: &WeightScheme,
    gold: &GoldConfig,
    candidates: &[ScoreSource],
    level: CorrelationLevel,
    systems: &SystemSet,
) -> Result<CorrelationReport, AnalysisError> {
    let selected = systems.selected();
    if selected.len() < 2 {
        return Err(AnalysisError::TooShort {
            needed: 2,
            found: selected.len(),
        });
    }
    let gold_sign = |v: f64| match gold.orientation {
        Orientation::LowerBetter => -v,
        Orientation::HigherBetter => v,
    };
    let mut rows = Vec::with_capacity(candidates.len());
    match level {
        CorrelationLevel::System => {
            let g = source_system_scores(corpus, scheme, &gold.source)?;
            let gv: Vec<f64> = selected
                .iter()
                .map(|s| {
                    g.get(s)
                        .map(|v| gold_sign(*v))
                        .ok_or_else(|| AnalysisError::MissingScores(format!("gold has no score for system {s}")))
                })
                .collect::<Result<_, _>>()?;
            for cand in candidates {
                let cv = pick_systems(&source_system_scores(corpus, scheme, cand)?, &selected, cand)?;
                rows.push(CorrelationRow {
                    candidate: cand.name().to_string(),
                    pearson: pearson(&gv, &cv)?,
                    kendall: kendall_tau(&gv, &cv)?,
                    kendall_like: None,
                });
            }
        }
        CorrelationLevel::Segment => {
            let mut g = source_segment_scores(corpus, scheme, &gold.source)?;
            let wanted: BTreeSet<&str> = selected.iter().map(String::as_str).collect();
            g.retain(|k, _| wanted.contains(k.system.as_str()));
            if gold.segment_filter == SegmentFilter::WmtRatedOnly {
                let rated: BTreeSet<&SegmentKey> = [WMT_RAW, WMT_Z]
                    .iter()
                    .filter_map(|m| corpus.scalar(m))
                    .flatten()
                    .map(|r| &r.key)
                    .collect();
                g.retain(|k, _| rated.contains(k));
            }
            let positions: Vec<(String, usize)> = g
                .keys()
                .map(|k| k.position())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            for cand in candidates {
                let c = source_segment_scores(corpus, scheme, cand)?;
                let co = cand.orientation();
                let (mut gv, mut cv) = (Vec::new(), Vec::new());
                for (k, v) in &g {
                    if let Some(x) = c.get(k) {
                        gv.push(gold_sign(*v));
                        cv.push(co.oriented(*x));
                    }
                }
                if gv.is_empty() {
                    return Err(AnalysisError::MissingScores(format!(
                        "{cand} shares no segments with the gold standard"
                    )));
                }
                let grid = |lookup: &dyn Fn(&SegmentKey) -> Option<f64>| -> Vec<Vec<f64>> {
                    positions
                        .iter()
                        .map(|(doc, seg)| {
                            selected
                                .iter()
                                .map(|s| lookup(&SegmentKey::new(s.clone(), doc.clone(), *seg)).unwrap_or(f64::NAN))
                                .collect()
                        })
                        .collect()
                };
                let gold_grid = grid(&|k| g.get(k).map(|v| gold_sign(*v)));
                let cand_grid = grid(&|k| c.get(k).map(|v| co.oriented(*v)));
                rows.push(CorrelationRow {
                    candidate: cand.name().to_string(),
                    pearson: pearson(&gv, &cv)?,
                    kendall: kendall_tau(&gv, &cv)?,
                    kendall_like: Some(kendall_like(
                        &gold_grid,
                        &cand_grid,
                        gold.threshold(),
                        Orientation::HigherBetter,
                        Orientation::HigherBetter,
                    )?),
                });
            }
        }
    }

    let mut averages = Vec::new();
    let baseline: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_baseline())
        .map(|(i, _)| i)
        .collect();
    for (name, idx) in [("all", (0..rows.len()).collect::<Vec<_>>()), ("baseline", baseline)] {
        if idx.is_empty() {
            continue;
        }
        let pick = |f: &dyn Fn(&CorrelationRow) -> f64| mean(idx.iter().map(|&i| f(&rows[i])));
        averages.push(SubsetAverage {
            subset: name.to_string(),
            n_candidates: idx.len(),
            pearson: pick(&|r| r.pearson.value),
            pearson_p: pick(&|r| r.pearson.p_value.unwrap_or(f64::NAN)),
            kendall: pick(&|r| r.kendall.value),
            kendall_p: pick(&|r| r.kendall.p_value.unwrap_or(f64::NAN)),
        });
    }
    Ok(CorrelationReport {
        gold: gold.source.name().to_string(),
        level,
        include_human: systems.include_human,
        systems: selected,
        rows,
        averages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub doc_id: String,
    pub human_mean: f64,
    pub mt_mean: f64,
    pub systems: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample variance across documents (0 for a single document).
    pub variance: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        };
        Summary { mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentProfile {
    pub docs: Vec<DocumentRow>,
    pub human: Summary,
    pub mt: Summary,
}

impl DocumentProfile {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("doc_id\thuman_mean\tmt_mean\n");
        for d in &self.docs {
            out.push_str(&format!("{}\t{:.4}\t{:.4}\n", d.doc_id, d.human_mean, d.mt_mean));
        }
        out
    }

    /// Long format: one row per (document, system).
    pub fn to_plot_tsv(&self, human: &[String]) -> String {
        let mut out = String::from("doc_id\tsystem\tgroup\tscore\n");
        for d in &self.docs {
            for (s, v) in &d.systems {
                let group = if human.contains(s) { "human" } else { "mt" };
                out.push_str(&format!("{}\t{s}\t{group}\t{v:.4}\n", d.doc_id));
            }
        }
        out
    }
}

/// Per-document mean scores of the human and MT groups. Documents lacking
/// scores for either group are left out.
pub fn document_profile(
    corpus: &Corpus,
    scheme: &WeightScheme,
    human: &[String],
    mt: &[String],
) -> Result<DocumentProfile, AnalysisError> {
    let report = scoring::aggregate(corpus, scheme, Level::Document, &Filter::ALL)?;
    let mut by_doc: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (ScoreKey { system, doc_id, .. }, entry) in &report.scores {
        if human.contains(system) || mt.contains(system) {
            by_doc
                .entry(doc_id.clone().expect("document level"))
                .or_default()
                .insert(system.clone(), entry.score);
        }
    }
    let group_mean = |systems: &BTreeMap<String, f64>, group: &[String]| {
        let v: Vec<f64> = systems.iter().filter(|(s, _)| group.contains(s)).map(|(_, v)| *v).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let docs: Vec<DocumentRow> = by_doc
        .into_iter()
        .filter_map(|(doc_id, systems)| {
            let h = group_mean(&systems, human)?;
            let m = group_mean(&systems, mt)?;
            Some(DocumentRow {
                doc_id,
                human_mean: h,
                mt_mean: m,
                systems,
            })
        })
        .collect();
    if docs.is_empty() {
        return Err(AnalysisError::Scoring(scoring::ScoringError::NoRatings(
            "documents rated for both groups".into(),
        )));
    }
    let h: Vec<f64> = docs.iter().map(|d| d.human_mean).collect();
    let m: Vec<f64> = docs.iter().map(|d| d.mt_mean).collect();
    Ok(DocumentProfile {
        human: Summary::of(&h),
        mt: Summary::of(&m),
        docs,
    })
}
