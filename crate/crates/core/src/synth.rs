//! Random corpora for tests, benchmarks and demos.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, ErrorAnnotation, ScalarRating, Scale, SegmentKey, SegmentRating, Side, Span};
use crate::taxonomy::{ErrorCategory, Severity};

const WORDS: &[&str] = &[
    "the", "house", "river", "Übersetzung", "quickly", "green", "council", "said", "on", "Monday", "über",
    "markets", "were", "closed", "after", "rain", "年", "city", "police", "report",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// System name and mean number of errors per segment.
    pub systems: Vec<(String, f64)>,
    pub n_docs: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub raters: Vec<String>,
    pub raters_per_segment: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            systems: (0..5).map(|i| (format!("sys{i}"), 0.3 + 0.3 * i as f64)).collect(),
            n_docs: 8,
            min_segments: 3,
            max_segments: 12,
            raters: (1..=6).map(|i| format!("rater{i}")).collect(),
            raters_per_segment: 3,
            seed: crate::DEFAULT_SEED,
        }
    }
}

fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(4..14);
    (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

/// Draws one rating of `target` with roughly `rate` errors, respecting the
/// cap and NonTranslation exclusivity.
pub fn random_rating(
    rng: &mut impl Rng,
    key: SegmentKey,
    rater: &str,
    source: &str,
    target: &str,
    rate: f64,
) -> SegmentRating {
    let categories = ErrorCategory::all();
    let tlen = target.chars().count();
    let slen = source.chars().count();
    let mut annotations = Vec::new();
    if rng.random_bool((rate * 0.01).clamp(0.0, 1.0)) && tlen > 0 {
        annotations.push(ErrorAnnotation::new(
            ErrorCategory::NON_TRANSLATION,
            Severity::Major,
            Some(Span { side: Side::Target, start: 0, end: tlen }),
        ));
    } else {
        let mut counted = 0;
        while counted < crate::corpus::MAX_ERRORS_PER_SEGMENT && rng.random_bool(rate / (1.0 + rate)) {
            let category = loop {
                let c = *categories.choose(rng).expect("non-empty");
                if !c.is_non_translation() {
                    break c;
                }
            };
            let severity = match rng.random_range(0..10) {
                0..=2 => Severity::Major,
                3..=8 => Severity::Minor,
                _ => Severity::Neutral,
            };
            let (side, len) = if category.is_source_error() { (Side::Source, slen) } else { (Side::Target, tlen) };
            let span = (len > 0).then(|| {
                let start = rng.random_range(0..len);
                let end = rng.random_range(start + 1..=len);
                Span { side, start, end }
            });
            if category.counts_toward_cap() {
                counted += 1;
            }
            annotations.push(ErrorAnnotation::new(category, severity, span));
        }
    }
    SegmentRating {
        key,
        rater_id: rater.to_string(),
        annotations,
    }
}

/// A corpus where every document is translated by every system and each
/// document gets one random subset of raters.
pub fn corpus(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Corpus::new();
    for d in 0..config.n_docs {
        let doc = format!("doc{d:03}");
        let n = rng.random_range(config.min_segments..=config.max_segments);
        let k = config.raters_per_segment.min(config.raters.len());
        let raters: Vec<&String> = config.raters.choose_multiple(&mut rng, k).collect();
        for i in 0..n {
            let source = sentence(&mut rng);
            for (system, rate) in &config.systems {
                let target = sentence(&mut rng);
                let key = SegmentKey::new(system.clone(), doc.clone(), i);
                for rater in &raters {
                    corpus.add_rating(random_rating(&mut rng, key.clone(), rater, &source, &target, *rate));
                }
                corpus.insert_segment(key, source.clone(), target);
            }
        }
    }
    corpus
}

/// Scalar ratings that track a per-system quality plus noise.
pub fn scalar_ratings(
    corpus: &Corpus,
    quality: impl Fn(&str) -> f64,
    noise: f64,
    scale: Scale,
    seed: u64,
) -> Vec<ScalarRating> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .segments()
        .keys()
        .map(|key| {
            let raw = quality(&key.system) + noise * (rng.random::<f64>() - 0.5);
            let value = match scale {
                Scale::Sqm => raw.round().clamp(0.0, 6.0),
                Scale::WmtRaw => raw.clamp(0.0, 100.0),
                Scale::WmtZ => raw,
            };
            ScalarRating {
                key: key.clone(),
                rater_id: "scalar".into(),
                value,
                scale,
            }
        })
        .collect()
}

/// `n_docs` document lengths within `min..=max` that sum to `total`, or
/// `None` when no such split exists.
pub fn document_sizes(n_docs: usize, total: usize, min: usize, max: usize, seed: u64) -> Option<Vec<usize>> {
    if n_docs == 0 || min > max || n_docs * min > total || n_docs * max < total {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes: Vec<usize> = (0..n_docs).map(|_| rng.random_range(min..=max)).collect();
    let mut sum: usize = sizes.iter().sum();
    while sum != total {
        let i = rng.random_range(0..n_docs);
        if sum > total && sizes[i] > min {
            sizes[i] -= 1;
            sum -= 1;
        } else if sum < total && sizes[i] < max {
            sizes[i] += 1;
            sum += 1;
        }
    }
    Some(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn generated_corpus_is_valid() {
        let c = corpus(&SynthConfig::default());
        assert!(validate_corpus(&c).is_valid());
        assert_eq!(c.systems().len(), 5);
        assert_eq!(c, corpus(&SynthConfig::default()));
    }

    #[test]
    fn sizes_hit_the_total() {
        let s = document_sizes(130, 1418, 2, 25, 7).unwrap();
        assert_eq!(s.iter().sum::<usize>(), 1418);
        assert!(s.iter().all(|&n| (2..=25).contains(&n)));
        assert!(document_sizes(3, 100, 1, 10, 7).is_none());
    }
}
