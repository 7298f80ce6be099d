//! MQM scores at every level, category breakdowns, rankings, per-rater
//! tables and the Major-weight stability sweep.
//!
//! A segment's score is the mean over its raters; document and system scores
//! are plain means over rated segments. Unrated segments are skipped, never
//! counted as zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ErrorAnnotation, SegmentKey, SegmentRating};
use crate::taxonomy::{
    parse_category, CategoryPattern, ErrorCategory, ParseMode, Severity, TopLevel, WeightScheme,
};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("no ratings for {0}")]
    NoRatings(String),
    #[error("group {0:?} is empty or has no rated segments")]
    EmptyGroup(String),
    #[error("system {0:?} is in both the human and the compared group")]
    OverlappingGroups(String),
    #[error("at least {needed} raters required, found {found}")]
    TooFewRaters { needed: usize, found: usize },
    #[error("invalid sweep parameters: {0}")]
    InvalidSweep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// Maps a score so that larger is better.
    pub fn oriented(self, score: f64) -> f64 {
        match self {
            Orientation::LowerBetter => -score,
            Orientation::HigherBetter => score,
        }
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lowerbetter" | "lower" | "asc" => Ok(Orientation::LowerBetter),
            "higherbetter" | "higher" | "desc" => Ok(Orientation::HigherBetter),
            other => Err(format!("unknown orientation {other:?}")),
        }
    }
}

/// Restricts which annotations contribute weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Filter {
    pub severity: Option<Severity>,
    pub category: Option<CategoryPattern>,
}

impl Filter {
    pub const ALL: Filter = Filter {
        severity: None,
        category: None,
    };

    pub fn severity(severity: Severity) -> Self {
        Filter {
            severity: Some(severity),
            category: None,
        }
    }

    pub fn top_level(top: TopLevel) -> Self {
        Self::category(ErrorCategory::top(top))
    }

    pub fn category(category: ErrorCategory) -> Self {
        Filter {
            severity: None,
            category: Some(CategoryPattern::Category(category)),
        }
    }

    pub fn accepts(&self, a: &ErrorAnnotation) -> bool {
        self.severity.is_none_or(|s| s == a.severity)
            && self.category.is_none_or(|p| p.matches(&a.category))
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.severity, self.category) {
            (None, None) => f.write_str("all"),
            (Some(s), None) => write!(f, "{s}"),
            (None, Some(c)) => write!(f, "{c}"),
            (Some(s), Some(c)) => write!(f, "{s},{c}"),
        }
    }
}

/// Parses `all`, a severity (`major`), a category (`Accuracy`,
/// `Fluency/Punctuation`), or a severity and category joined by a comma.
impl FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut filter = Filter::ALL;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                continue;
            }
            if let Ok(sev) = part.parse::<Severity>() {
                filter.severity = Some(sev);
            } else {
                let cat = parse_category(part, ParseMode::Strict).map_err(|e| e.to_string())?;
                filter.category = Some(CategoryPattern::Category(cat));
            }
        }
        Ok(filter)
    }
}

pub fn score_rating(rating: &SegmentRating, scheme: &WeightScheme) -> f64 {
    score_rating_filtered(rating, scheme, &Filter::ALL)
}

pub fn score_rating_filtered(rating: &SegmentRating, scheme: &WeightScheme, filter: &Filter) -> f64 {
    rating
        .annotations
        .iter()
        .filter(|a| filter.accepts(a))
        .map(|a| scheme.weight_of(a.severity, &a.category))
        .sum()
}

/// Mean of the raters' scores for one segment.
pub fn score_segment(ratings: &[&SegmentRating], scheme: &WeightScheme) -> Result<f64, ScoringError> {
    score_segment_filtered(ratings, scheme, &Filter::ALL)
}

pub fn score_segment_filtered(
    ratings: &[&SegmentRating],
    scheme: &WeightScheme,
    filter: &Filter,
) -> Result<f64, ScoringError> {
    if ratings.is_empty() {
        return Err(ScoringError::NoRatings("segment".into()));
    }
    let total: f64 = ratings
        .iter()
        .map(|r| score_rating_filtered(r, scheme, filter))
        .sum();
    Ok(total / ratings.len() as f64)
}

/// Score of every rated segment.
pub fn segment_scores(
    corpus: &Corpus,
    scheme: &WeightScheme,
    filter: &Filter,
) -> BTreeMap<SegmentKey, f64> {
    corpus
        .ratings_by_segment()
        .into_iter()
        .map(|(key, ratings)| {
            let score = score_segment_filtered(&ratings, scheme, filter).expect("grouped ratings are non-empty");
            (key.clone(), score)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Rating,
    Segment,
    Document,
    System,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rating" => Ok(Level::Rating),
            "segment" | "seg" => Ok(Level::Segment),
            "document" | "doc" => Ok(Level::Document),
            "system" | "sys" => Ok(Level::System),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreKey {
    pub system: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rater: Option<String>,
}

impl ScoreKey {
    pub fn system(system: impl Into<String>) -> Self {
        ScoreKey {
            system: system.into(),
            doc_id: None,
            seg_index: None,
            rater: None,
        }
    }

    pub fn document(system: impl Into<String>, doc: impl Into<String>) -> Self {
        ScoreKey {
            doc_id: Some(doc.into()),
            ..Self::system(system)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub score: f64,
    /// Segments (or ratings, at rating level) averaged into the score.
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub level: Level,
    pub scheme_name: String,
    pub filter: String,
    pub scores: BTreeMap<ScoreKey, ScoreEntry>,
}

impl ScoreReport {
    /// System → score, for system-level reports.
    pub fn system_scores(&self) -> BTreeMap<String, f64> {
        self.scores
            .iter()
            .filter(|(k, _)| k.doc_id.is_none())
            .map(|(k, e)| (k.system.clone(), e.score))
            .collect()
    }

    pub fn get(&self, key: &ScoreKey) -> Option<f64> {
        self.scores.get(key).map(|e| e.score)
    }

    fn columns(&self) -> &'static [&'static str] {
        match self.level {
            Level::System => &["system"],
            Level::Document => &["system", "doc_id"],
            Level::Segment => &["system", "doc_id", "seg_id"],
            Level::Rating => &["system", "doc_id", "seg_id", "rater"],
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.columns().join("\t");
        out.push_str("\tscore\tn_items\n");
        for (key, entry) in &self.scores {
            let mut fields = vec![key.system.clone()];
            fields.extend(key.doc_id.clone());
            fields.extend(key.seg_index.map(|i| i.to_string()));
            fields.extend(key.rater.clone());
            out.push_str(&format!(
                "{}\t{:.4}\t{}\n",
                fields.join("\t"),
                entry.score,
                entry.n_items
            ));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, entry) in &self.scores {
            let mut row = serde_json::to_value(key).expect("plain struct");
            row["score"] = entry.score.into();
            row["n_items"] = entry.n_items.into();
            row["scheme"] = self.scheme_name.clone().into();
            row["filter"] = self.filter.clone().into();
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }
}

fn mean_into(map: &mut BTreeMap<ScoreKey, (f64, usize)>, key: ScoreKey, value: f64) {
    let e = map.entry(key).or_insert((0.0, 0));
    e.0 += value;
    e.1 += 1;
}

/// Scores every system, document, segment or rating of the corpus.
pub fn aggregate(
    corpus: &Corpus,
    scheme: &WeightScheme,
    level: Level,
    filter: &Filter,
) -> Result<ScoreReport, ScoringError> {
    if corpus.mqm_ratings().is_empty() {
        return Err(ScoringError::NoRatings("corpus".into()));
    }
    let mut sums: BTreeMap<ScoreKey, (f64, usize)> = BTreeMap::new();
    if level == Level::Rating {
        for r in corpus.mqm_ratings() {
            let key = ScoreKey {
                system: r.key.system.clone(),
                doc_id: Some(r.key.doc_id.clone()),
                seg_index: Some(r.key.seg_index),
                rater: Some(r.rater_id.clone()),
            };
            mean_into(&mut sums, key, score_rating_filtered(r, scheme, filter));
        }
    } else {
        for (seg, score) in segment_scores(corpus, scheme, filter) {
            let key = match level {
                Level::System => ScoreKey::system(seg.system),
                Level::Document => ScoreKey::document(seg.system, seg.doc_id),
                _ => ScoreKey {
                    seg_index: Some(seg.seg_index),
                    ..ScoreKey::document(seg.system, seg.doc_id)
                },
            };
            mean_into(&mut sums, key, score);
        }
    }
    let scores = sums
        .into_iter()
        .map(|(k, (sum, n))| {
            (
                k,
                ScoreEntry {
                    score: sum / n as f64,
                    n_items: n,
                },
            )
        })
        .collect();
    Ok(ScoreReport {
        level,
        scheme_name: scheme.name().to_string(),
        filter: filter.to_string(),
        scores,
    })
}

/// System scores restricted to `systems`; errors if any has no ratings.
pub fn system_scores(
    corpus: &Corpus,
    scheme: &WeightScheme,
    systems: &[String],
) -> Result<BTreeMap<String, f64>, ScoringError> {
    let all = aggregate(corpus, scheme, Level::System, &Filter::ALL)?.system_scores();
    systems
        .iter()
        .map(|s| {
            all.get(s)
                .map(|&v| (s.clone(), v))
                .ok_or_else(|| ScoringError::NoRatings(format!("system {s}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub system: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub orientation: Orientation,
    pub rows: Vec<RankRow>,
}

impl RankTable {
    pub fn rank_of(&self, system: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.system == system).map(|r| r.rank)
    }

    pub fn order(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.system.as_str()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tsystem\tscore\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.4}\n", r.rank, r.system, r.score));
        }
        out
    }
}

/// Sorts systems best-first and assigns competition ranks: equal scores
/// share the best rank of their block and the next rank skips past it.
pub fn rank_systems(scores: &BTreeMap<String, f64>, orientation: Orientation) -> RankTable {
    let mut rows: Vec<(String, f64)> = scores.iter().map(|(s, &v)| (s.clone(), v)).collect();
    rows.sort_by(|a, b| {
        orientation
            .oriented(b.1)
            .total_cmp(&orientation.oriented(a.1))
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut out = Vec::with_capacity(rows.len());
    for (i, (system, score)) in rows.into_iter().enumerate() {
        let rank = match out.last() {
            Some(RankRow { score: prev, rank, .. }) if *prev == score => *rank,
            _ => i + 1,
        };
        out.push(RankRow { system, score, rank });
    }
    RankTable {
        orientation,
        rows: out,
    }
}

/// Rounds scores to `decimals` places, so published-precision ties rank
/// as ties.
pub fn round_scores(scores: &BTreeMap<String, f64>, decimals: u32) -> BTreeMap<String, f64> {
    let f = 10f64.powi(decimals as i32);
    scores
        .iter()
        .map(|(s, v)| (s.clone(), (v * f).round() / f))
        .collect()
}

/// The row groups that close a category breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CategoryGroup {
    Accuracy,
    Fluency,
    /// Everything outside Accuracy and Fluency, Non-translation included.
    Others,
    All,
}

impl CategoryGroup {
    pub const PARTS: [CategoryGroup; 3] = [
        CategoryGroup::Accuracy,
        CategoryGroup::Fluency,
        CategoryGroup::Others,
    ];

    pub fn contains(self, category: &ErrorCategory) -> bool {
        let top = category.top_level();
        match self {
            CategoryGroup::Accuracy => top == TopLevel::Accuracy,
            CategoryGroup::Fluency => top == TopLevel::Fluency,
            CategoryGroup::Others => !matches!(top, TopLevel::Accuracy | TopLevel::Fluency),
            CategoryGroup::All => true,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CategoryGroup::Accuracy => "All accuracy",
            CategoryGroup::Fluency => "All fluency",
            CategoryGroup::Others => "All except accuracy & fluency",
            CategoryGroup::All => "All categories",
        }
    }

    pub fn short_label(self) -> &'static str {
        match self {
            CategoryGroup::Accuracy => "Accuracy",
            CategoryGroup::Fluency => "Fluency",
            CategoryGroup::Others => "Others",
            CategoryGroup::All => "All",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub label: String,
    /// Share of all error annotations, in percent.
    pub error_pct: f64,
    /// Share of Major errors within the row, in percent.
    pub major_pct: f64,
    pub human: f64,
    pub mt: f64,
    pub mt_ratio: f64,
    /// Per focus system: (contribution, ratio over human).
    pub focus: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub scheme_name: String,
    /// Category rows, largest human contribution first.
    pub categories: Vec<BreakdownRow>,
    /// Accuracy, Fluency, Others, All.
    pub groups: Vec<BreakdownRow>,
}

impl CategoryBreakdown {
    pub fn category(&self, label: &str) -> Option<&BreakdownRow> {
        self.categories.iter().find(|r| r.label == label)
    }

    pub fn group(&self, group: CategoryGroup) -> &BreakdownRow {
        self.groups
            .iter()
            .find(|r| r.label == group.label())
            .expect("every group row is present")
    }

    pub fn to_tsv(&self) -> String {
        let focus: Vec<&String> = self
            .groups
            .first()
            .map(|r| r.focus.keys().collect())
            .unwrap_or_default();
        let mut out = String::from("category\terrors_pct\tmajor_pct\thuman\tmt\tmt_vs_human");
        for f in &focus {
            out.push_str(&format!("\t{f}\t{f}_vs_human"));
        }
        out.push('\n');
        for r in self.categories.iter().chain(&self.groups) {
            out.push_str(&format!(
                "{}\t{:.1}\t{:.1}\t{:.3}\t{:.3}\t{:.1}",
                r.label, r.error_pct, r.major_pct, r.human, r.mt, r.mt_ratio
            ));
            for f in &focus {
                let (v, ratio) = r.focus[*f];
                out.push_str(&format!("\t{v:.3}\t{ratio:.1}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_group(name: &str, systems: &[String], corpus_systems: &BTreeSet<String>) -> Result<(), ScoringError> {
    if systems.is_empty() || !systems.iter().any(|s| corpus_systems.contains(s)) {
        Err(ScoringError::EmptyGroup(name.to_string()))
    } else {
        Ok(())
    }
}

/// Per-category error shares and mean contributions for a human group, an
/// MT group and individual focus systems.
///
/// A group's contribution for a category is the mean, over the group's rated
/// segments, of that category's rater-averaged weighted errors; summed over
/// categories it gives the group's MQM score.
pub fn category_breakdown(
    corpus: &Corpus,
    scheme: &WeightScheme,
    human: &[String],
    mt: &[String],
    focus: &[String],
) -> Result<CategoryBreakdown, ScoringError> {
    let corpus_systems: BTreeSet<String> = corpus.systems().into_iter().collect();
    check_group("human", human, &corpus_systems)?;
    check_group("mt", mt, &corpus_systems)?;
    for s in mt.iter().chain(focus) {
        if human.contains(s) {
            return Err(ScoringError::OverlappingGroups(s.clone()));
        }
    }
    for s in focus {
        check_group(s, std::slice::from_ref(s), &corpus_systems)?;
    }

    // Per segment and category: rater-averaged weight. Per category: counts.
    let mut contrib: BTreeMap<&str, BTreeMap<ErrorCategory, f64>> = BTreeMap::new();
    let mut n_segments: BTreeMap<&str, usize> = BTreeMap::new();
    let mut counts: BTreeMap<ErrorCategory, (usize, usize)> = BTreeMap::new();
    for (key, ratings) in corpus.ratings_by_segment() {
        *n_segments.entry(key.system.as_str()).or_default() += 1;
        let per_system = contrib.entry(key.system.as_str()).or_default();
        let k = ratings.len() as f64;
        for r in &ratings {
            for a in &r.annotations {
                if a.category.is_source_error() {
                    continue;
                }
                *per_system.entry(a.category).or_default() +=
                    scheme.weight_of(a.severity, &a.category) / k;
                let c = counts.entry(a.category).or_default();
                c.0 += 1;
                if a.severity == Severity::Major {
                    c.1 += 1;
                }
            }
        }
    }
    let total_errors: usize = counts.values().map(|c| c.0).sum();

    let group_mean = |systems: &[String], pred: &dyn Fn(&ErrorCategory) -> bool| -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for s in systems {
            n += n_segments.get(s.as_str()).copied().unwrap_or(0);
            if let Some(per) = contrib.get(s.as_str()) {
                sum += per.iter().filter(|(c, _)| pred(c)).map(|(_, v)| v).sum::<f64>();
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let ratio = |v: f64, h: f64| if h == 0.0 { f64::NAN } else { v / h };
    let pct = |part: usize, whole: usize| {
        if whole == 0 {
            0.0
        } else {
            100.0 * part as f64 / whole as f64
        }
    };
    let row = |label: String, pred: &dyn Fn(&ErrorCategory) -> bool| -> BreakdownRow {
        let (n, major) = counts
            .iter()
            .filter(|(c, _)| pred(c))
            .fold((0, 0), |acc, (_, c)| (acc.0 + c.0, acc.1 + c.1));
        let h = group_mean(human, pred);
        let m = group_mean(mt, pred);
        BreakdownRow {
            label,
            error_pct: pct(n, total_errors),
            major_pct: pct(major, n),
            human: h,
            mt: m,
            mt_ratio: ratio(m, h),
            focus: focus
                .iter()
                .map(|s| {
                    let v = group_mean(std::slice::from_ref(s), pred);
                    (s.clone(), (v, ratio(v, h)))
                })
                .collect(),
        }
    };

    let mut categories: Vec<BreakdownRow> = counts
        .keys()
        .map(|c| row(c.canonical(), &|x: &ErrorCategory| x == c))
        .collect();
    categories.sort_by(|a, b| b.human.total_cmp(&a.human).then_with(|| a.label.cmp(&b.label)));
    let groups = [
        CategoryGroup::Accuracy,
        CategoryGroup::Fluency,
        CategoryGroup::Others,
        CategoryGroup::All,
    ]
    .into_iter()
    .map(|g| row(g.label().to_string(), &|c: &ErrorCategory| g.contains(c)))
    .collect();
    Ok(CategoryBreakdown {
        scheme_name: scheme.name().to_string(),
        categories,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterRow {
    pub rater: String,
    pub n_ratings: usize,
    /// Per group: (mean contribution, ratio over the mean across raters).
    pub groups: BTreeMap<CategoryGroup, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterReport {
    pub scheme_name: String,
    pub rows: Vec<RaterRow>,
}

impl RaterReport {
    pub fn rater(&self, id: &str) -> Option<&RaterRow> {
        self.rows.iter().find(|r| r.rater == id)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rater\tn_ratings");
        for g in [CategoryGroup::Accuracy, CategoryGroup::Fluency, CategoryGroup::Others, CategoryGroup::All] {
            let l = g.short_label().to_ascii_lowercase();
            out.push_str(&format!("\t{l}\t{l}_vs_avg"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{}\t{}", r.rater, r.n_ratings));
            for (v, ratio) in r.groups.values() {
                out.push_str(&format!("\t{v:.2}\t{ratio:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Each rater's mean score over the segments they rated, split into the
/// Accuracy / Fluency / Others groups, with its ratio over the unweighted
/// mean of all raters.
pub fn rater_report(corpus: &Corpus, scheme: &WeightScheme) -> Result<RaterReport, ScoringError> {
    let mut sums: BTreeMap<&str, (BTreeMap<CategoryGroup, f64>, usize)> = BTreeMap::new();
    for r in corpus.mqm_ratings() {
        let entry = sums.entry(r.rater_id.as_str()).or_default();
        entry.1 += 1;
        for g in [CategoryGroup::Accuracy, CategoryGroup::Fluency, CategoryGroup::Others, CategoryGroup::All] {
            let w: f64 = r
                .annotations
                .iter()
                .filter(|a| g.contains(&a.category))
                .map(|a| scheme.weight_of(a.severity, &a.category))
                .sum();
            *entry.0.entry(g).or_default() += w;
        }
    }
    if sums.is_empty() {
        return Err(ScoringError::NoRatings("corpus".into()));
    }
    if sums.len() < 2 {
        return Err(ScoringError::TooFewRaters {
            needed: 2,
            found: sums.len(),
        });
    }
    let means: BTreeMap<&str, BTreeMap<CategoryGroup, f64>> = sums
        .iter()
        .map(|(r, (g, n))| (*r, g.iter().map(|(k, v)| (*k, v / *n as f64)).collect()))
        .collect();
    let n_raters = means.len() as f64;
    let avg = |g: CategoryGroup| means.values().map(|m| m[&g]).sum::<f64>() / n_raters;
    let rows = means
        .iter()
        .map(|(rater, groups)| RaterRow {
            rater: rater.to_string(),
            n_ratings: sums[rater].1,
            groups: groups
                .iter()
                .map(|(g, v)| {
                    let a = avg(*g);
                    (*g, (*v, if a == 0.0 { f64::NAN } else { v / a }))
                })
                .collect(),
        })
        .collect();
    Ok(RaterReport {
        scheme_name: scheme.name().to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub major_weight: f64,
    /// Full-data ranking, best first.
    pub ranking: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    /// Fraction of resamples reproducing `ranking` exactly.
    pub stability: f64,
    /// System pairs ordered as in the full data in at least 95% of resamples.
    pub discrimination: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub resamples: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Weight picked by the selection rule.
    pub selected: f64,
}

impl SweepReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("major_weight\tstability\tdiscrimination\tselected\tranking\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.4}\t{}\t{}\t{}\n",
                r.major_weight,
                r.stability,
                r.discrimination,
                u8::from(r.major_weight == self.selected),
                r.ranking.join(",")
            ));
        }
        out
    }
}

/// Share of resamples a pair must keep its full-data order in to count as
/// separated.
pub const SEPARATION_LEVEL: f64 = 0.95;
/// Weights whose stability is this close to the best are candidates.
pub const STABILITY_SLACK: f64 = 0.05;

fn ranking_of(systems: &[String], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..systems.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| systems[a].cmp(&systems[b])));
    idx
}

/// For each candidate Major weight, scores the systems on the full data and
/// on `resamples` bootstrap resamples of segment positions, and reports how
/// often the full-data ranking is reproduced and how many system pairs stay
/// separated. Resample `i` draws from its own seeded stream and the same
/// positions are used for every weight.
pub fn weight_sweep(
    corpus: &Corpus,
    major_weights: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<SweepReport, ScoringError> {
    if major_weights.is_empty() {
        return Err(ScoringError::InvalidSweep("no weights given".into()));
    }
    if resamples < 100 {
        return Err(ScoringError::InvalidSweep(format!("{resamples} resamples (need at least 100)")));
    }
    let by_segment = corpus.ratings_by_segment();
    if by_segment.is_empty() {
        return Err(ScoringError::NoRatings("corpus".into()));
    }
    let systems: Vec<String> = by_segment
        .keys()
        .map(|k| k.system.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let positions: Vec<(String, usize)> = by_segment
        .keys()
        .map(|k| k.position())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos_index: BTreeMap<&(String, usize), usize> =
        positions.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let sys_index: BTreeMap<&str, usize> = systems.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n_pos = positions.len();
    let d = systems.len();

    let draws: Vec<Vec<usize>> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..n_pos).map(|_| rng.random_range(0..n_pos)).collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(major_weights.len());
    for &w in major_weights {
        let scheme = WeightScheme::with_major_weight(w);
        // grid[pos * d + sys]
        let mut grid = vec![f64::NAN; n_pos * d];
        for (key, ratings) in &by_segment {
            let p = pos_index[&key.position()];
            let s = sys_index[key.system.as_str()];
            grid[p * d + s] = score_segment(ratings, &scheme).expect("non-empty");
        }
        let score_with = |sample: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
            let mut sum = vec![0.0; d];
            let mut n = vec![0usize; d];
            for p in sample {
                for s in 0..d {
                    let v = grid[p * d + s];
                    if !v.is_nan() {
                        sum[s] += v;
                        n[s] += 1;
                    }
                }
            }
            (0..d)
                .map(|s| if n[s] == 0 { f64::INFINITY } else { sum[s] / n[s] as f64 })
                .collect()
        };
        let full = score_with(&mut (0..n_pos));
        let full_rank = ranking_of(&systems, &full);
        let (reproduced, agree) = draws
            .par_iter()
            .map(|draw| {
                let scores = score_with(&mut draw.iter().copied());
                let same = ranking_of(&systems, &scores) == full_rank;
                let mut agree = vec![0usize; d * d];
                for a in 0..d {
                    for b in (a + 1)..d {
                        let full_sign = full[a].total_cmp(&full[b]);
                        if full[a] != full[b] && scores[a].total_cmp(&scores[b]) == full_sign && scores[a] != scores[b] {
                            agree[a * d + b] = 1;
                        }
                    }
                }
                (usize::from(same), agree)
            })
            .reduce(
                || (0, vec![0usize; d * d]),
                |(x, mut a), (y, b)| {
                    a.iter_mut().zip(b).for_each(|(p, q)| *p += q);
                    (x + y, a)
                },
            );
        let discrimination = agree
            .iter()
            .filter(|&&c| c as f64 >= SEPARATION_LEVEL * resamples as f64)
            .count();
        rows.push(SweepRow {
            major_weight: w,
            ranking: full_rank.iter().map(|&i| systems[i].clone()).collect(),
            scores: systems.iter().cloned().zip(full.iter().copied()).collect(),
            stability: reproduced as f64 / resamples as f64,
            discrimination,
        });
    }

    let best_stability = rows.iter().map(|r| r.stability).fold(f64::MIN, f64::max);
    let selected = rows
        .iter()
        .filter(|r| r.stability >= best_stability - STABILITY_SLACK)
        .max_by(|a, b| {
            a.discrimination
                .cmp(&b.discrimination)
                .then_with(|| a.major_weight.total_cmp(&b.major_weight))
        })
        .map(|r| r.major_weight)
        .expect("at least one row");
    Ok(SweepReport {
        resamples,
        seed,
        rows,
        selected,
    })
}
