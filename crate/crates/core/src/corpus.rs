//! Segments, ratings and metric scores, with the TSV importers/exporters and
//! invariant validation.
//!
//! MQM annotations arrive one error per row, with the error span marked
//! inline by `<v>` and `</v>` in the target (or source) field. The markers are
//! stripped on import and replaced by offsets counted in Unicode scalar
//! values, so spans stay stable for CJK text regardless of encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{parse_category, ErrorCategory, ParseMode, Severity, SubCategory, TopLevel};
use crate::tsv::{self, Header};

/// Maximum number of errors (source errors excluded) a rater may log per segment.
pub const MAX_ERRORS_PER_SEGMENT: usize = 5;

const OPEN_MARK: &str = "<v>";
const CLOSE_MARK: &str = "</v>";
const NO_ERROR: &str = "No-error";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is empty (a header row is required)")]
    EmptyInput,
    #[error("header is missing required column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: span markup error: {message}")]
    SpanMarkup { line: usize, message: String },
    #[error("line {line}: text of {key} differs from an earlier row for the same segment")]
    TextMismatch { line: usize, key: String },
    #[error("{key} rated by {rater}: {count} errors exceed the limit of {MAX_ERRORS_PER_SEGMENT}")]
    LimitExceeded {
        key: String,
        rater: String,
        count: usize,
    },
    #[error("line {line}: unknown error category {text:?}")]
    UnknownCategory { line: usize, text: String },
    #[error("line {line}: unknown severity {text:?}")]
    UnknownSeverity { line: usize, text: String },
    #[error("line {line}: {field} value {value:?} is not a valid number")]
    BadNumber {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: value {value} outside the {scale} range")]
    RangeError { line: usize, value: f64, scale: Scale },
    #[error("line {line}: duplicate entry for {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: segment id {value:?} is neither known nor an integer")]
    InvalidSegmentId { line: usize, value: String },
}

/// Identifies one translated segment: the output of `system` for the
/// `seg_index`-th segment of document `doc_id`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub system: String,
    pub doc_id: String,
    pub seg_index: usize,
}

impl SegmentKey {
    pub fn new(system: impl Into<String>, doc_id: impl Into<String>, seg_index: usize) -> Self {
        SegmentKey {
            system: system.into(),
            doc_id: doc_id.into(),
            seg_index,
        }
    }

    /// The (document, segment) position, shared by every system.
    pub fn position(&self) -> (String, usize) {
        (self.doc_id.clone(), self.seg_index)
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}#{}", self.system, self.doc_id, self.seg_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

/// Half-open character range `[start, end)` on one side of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub side: Side,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub category: ErrorCategory,
    pub severity: Severity,
    /// Rows without `<v>` markup carry no span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ErrorAnnotation {
    pub fn new(category: ErrorCategory, severity: Severity, span: Option<Span>) -> Self {
        ErrorAnnotation {
            category,
            severity,
            span,
            note: None,
        }
    }
}

/// One rater's complete annotation of one segment. An empty annotation list
/// means the rater found no errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRating {
    pub key: SegmentKey,
    pub rater_id: String,
    pub annotations: Vec<ErrorAnnotation>,
}

impl SegmentRating {
    pub fn scoring_error_count(&self) -> usize {
        self.annotations
            .iter()
            .filter(|a| a.category.counts_toward_cap())
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scale {
    /// WMT direct assessment, 0–100.
    WmtRaw,
    /// Per-rater standardised WMT scores; unbounded.
    WmtZ,
    /// Scalar quality metric: integers 0–6.
    Sqm,
}

impl Scale {
    pub fn contains(self, value: f64) -> bool {
        match self {
            Scale::WmtRaw => (0.0..=100.0).contains(&value),
            Scale::WmtZ => value.is_finite(),
            Scale::Sqm => (0.0..=6.0).contains(&value) && value.fract() == 0.0,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::WmtRaw => "WMT raw [0,100]",
            Scale::WmtZ => "WMT z",
            Scale::Sqm => "SQM 0-6",
        })
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "wmtraw" | "raw" => Ok(Scale::WmtRaw),
            "wmtz" | "z" => Ok(Scale::WmtZ),
            "sqm" => Ok(Scale::Sqm),
            other => Err(format!("unknown scale {other:?} (expected wmt-raw, wmt-z or sqm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRating {
    pub key: SegmentKey,
    pub rater_id: String,
    pub value: f64,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentText {
    pub source: String,
    pub target: String,
}

impl SegmentText {
    pub fn side(&self, side: Side) -> &str {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }
}

/// Maps the segment labels used in input files to contiguous per-document
/// positions. Released data numbers segments globally; internally segments
/// are addressed by their position within the document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentIds {
    docs: BTreeMap<String, Vec<String>>,
}

impl SegmentIds {
    fn from_labels(labels: BTreeMap<String, BTreeSet<String>>) -> Self {
        let docs = labels
            .into_iter()
            .map(|(doc, set)| {
                let mut labels: Vec<String> = set.into_iter().collect();
                if labels.iter().all(|l| l.parse::<u64>().is_ok()) {
                    labels.sort_by_key(|l| l.parse::<u64>().unwrap_or(0));
                }
                (doc, labels)
            })
            .collect();
        SegmentIds { docs }
    }

    /// Position of `label` within `doc`. Unknown labels that are integers are
    /// taken as positions directly.
    pub fn resolve(&self, doc: &str, label: &str) -> Option<usize> {
        self.docs
            .get(doc)
            .and_then(|labels| labels.iter().position(|l| l == label))
            .or_else(|| label.parse().ok())
    }

    pub fn label(&self, doc: &str, seg_index: usize) -> Option<&str> {
        self.docs
            .get(doc)
            .and_then(|l| l.get(seg_index))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricLevel {
    System,
    Segment,
}

/// Automatic metric scores keyed by metric name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub system: BTreeMap<String, BTreeMap<String, f64>>,
    pub segment: BTreeMap<String, BTreeMap<SegmentKey, f64>>,
}

impl MetricScores {
    pub fn metrics(&self) -> BTreeSet<&str> {
        self.system
            .keys()
            .chain(self.segment.keys())
            .map(String::as_str)
            .collect()
    }

    pub fn merge(&mut self, other: MetricScores) {
        for (metric, scores) in other.system {
            self.system.entry(metric).or_default().extend(scores);
        }
        for (metric, scores) in other.segment {
            self.segment.entry(metric).or_default().extend(scores);
        }
    }
}

/// Segments with their MQM ratings, scalar ratings (per rating method) and
/// metric scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    segments: BTreeMap<SegmentKey, SegmentText>,
    mqm_ratings: Vec<SegmentRating>,
    scalar: BTreeMap<String, Vec<ScalarRating>>,
    metrics: MetricScores,
    ids: SegmentIds,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_segment(
        &mut self,
        key: SegmentKey,
        source: impl Into<String>,
        target: impl Into<String>,
    ) {
        self.segments.insert(
            key,
            SegmentText {
                source: source.into(),
                target: target.into(),
            },
        );
    }

    pub fn add_rating(&mut self, rating: SegmentRating) {
        self.mqm_ratings.push(rating);
    }

    /// Attaches scalar ratings under a rating-method name such as `pSQM`.
    pub fn add_scalar(&mut self, method: impl Into<String>, ratings: Vec<ScalarRating>) {
        self.scalar.entry(method.into()).or_default().extend(ratings);
    }

    pub fn add_metrics(&mut self, scores: MetricScores) {
        self.metrics.merge(scores);
    }

    pub fn segments(&self) -> &BTreeMap<SegmentKey, SegmentText> {
        &self.segments
    }

    pub fn segment(&self, key: &SegmentKey) -> Option<&SegmentText> {
        self.segments.get(key)
    }

    pub fn mqm_ratings(&self) -> &[SegmentRating] {
        &self.mqm_ratings
    }

    pub fn scalar_methods(&self) -> impl Iterator<Item = &str> {
        self.scalar.keys().map(String::as_str)
    }

    pub fn scalar(&self, method: &str) -> Option<&[ScalarRating]> {
        self.scalar.get(method).map(Vec::as_slice)
    }

    pub fn metrics(&self) -> &MetricScores {
        &self.metrics
    }

    pub fn segment_ids(&self) -> &SegmentIds {
        &self.ids
    }

    /// MQM ratings grouped by segment.
    pub fn ratings_by_segment(&self) -> BTreeMap<&SegmentKey, Vec<&SegmentRating>> {
        let mut out: BTreeMap<&SegmentKey, Vec<&SegmentRating>> = BTreeMap::new();
        for r in &self.mqm_ratings {
            out.entry(&r.key).or_default().push(r);
        }
        out
    }

    /// Systems that have segments or MQM ratings, sorted.
    pub fn systems(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .segments
            .keys()
            .map(|k| k.system.as_str())
            .chain(self.mqm_ratings.iter().map(|r| r.key.system.as_str()))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn raters(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.mqm_ratings.iter().map(|r| r.rater_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// doc_id → system → ordered segment positions.
    pub fn documents(&self) -> BTreeMap<String, BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for key in self.segments.keys() {
            out.entry(key.doc_id.clone())
                .or_default()
                .entry(key.system.clone())
                .or_default()
                .push(key.seg_index);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImportMode {
    /// Every irregularity is an error. Campaign exports are imported strictly.
    #[default]
    Strict,
    /// Over-limit ratings and unknown categories become warnings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqmImport {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
    pub rows: usize,
}

struct Columns {
    system: usize,
    doc: usize,
    seg: usize,
    rater: usize,
    source: usize,
    target: usize,
    category: usize,
    severity: usize,
}

impl Columns {
    fn resolve(header: &Header) -> Result<Self, CorpusError> {
        let need = |names: &[&str]| {
            header
                .first_of(names)
                .ok_or_else(|| CorpusError::MissingColumn(names[0].to_string()))
        };
        Ok(Columns {
            system: need(&["system"])?,
            // Released files carry both a document name (`doc`) and a
            // numeric `doc_id`; the name is the stable identifier.
            doc: need(&["doc", "doc_id"])?,
            seg: need(&["seg_id", "seg_index"])?,
            rater: need(&["rater"])?,
            source: need(&["source"])?,
            target: need(&["target"])?,
            category: need(&["category"])?,
            severity: need(&["severity"])?,
        })
    }
}

/// Removes one `<v>…</v>` pair and returns the plain text with the marked
/// character range.
fn strip_markers(text: &str) -> Result<(String, Option<(usize, usize)>), String> {
    let opens = text.matches(OPEN_MARK).count();
    let closes = text.matches(CLOSE_MARK).count();
    match (opens, closes) {
        (0, 0) => Ok((text.to_string(), None)),
        (1, 1) => {
            let open = text.find(OPEN_MARK).expect("counted");
            let close = text.find(CLOSE_MARK).expect("counted");
            if close < open {
                return Err("closing </v> precedes opening <v>".into());
            }
            let before = &text[..open];
            let inside = &text[open + OPEN_MARK.len()..close];
            let after = &text[close + CLOSE_MARK.len()..];
            let start = before.chars().count();
            let end = start + inside.chars().count();
            Ok((format!("{before}{inside}{after}"), Some((start, end))))
        }
        (o, c) if o != c => Err(format!("unbalanced markup: {o} <v> vs {c} </v>")),
        (o, _) => Err(format!("{o} marked spans in one field; one error per row")),
    }
}

/// Inserts `<v>`/`</v>` at the given character offsets.
fn insert_markers(text: &str, start: usize, end: usize) -> String {
    let mut out = String::with_capacity(text.len() + 7);
    for (i, c) in text.chars().enumerate() {
        if i == start {
            out.push_str(OPEN_MARK);
        }
        if i == end {
            out.push_str(CLOSE_MARK);
        }
        out.push(c);
    }
    let len = text.chars().count();
    if start == len {
        out.push_str(OPEN_MARK);
    }
    if end == len {
        out.push_str(CLOSE_MARK);
    }
    out
}

fn is_no_error(category: &str) -> bool {
    category
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .eq("noerror".chars())
}

type RawSegment = (String, String, String);

/// Reads the one-error-per-row MQM format into a corpus.
///
/// Rows are grouped by (system, document, segment, rater); a rating whose only
/// row has category `No-error` becomes an empty annotation list.
pub fn import_mqm_tsv<R: BufRead>(reader: R, mode: ImportMode) -> Result<MqmImport, CorpusError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => Header::parse(&line?),
        None => return Err(CorpusError::EmptyInput),
    };
    let cols = Columns::resolve(&header)?;
    let category_mode = match mode {
        ImportMode::Strict => ParseMode::Strict,
        ImportMode::Lenient => ParseMode::Lenient,
    };

    let mut warnings = Vec::new();
    let mut texts: BTreeMap<RawSegment, (SegmentText, usize)> = BTreeMap::new();
    let mut ratings: BTreeMap<(RawSegment, String), Vec<ErrorAnnotation>> = BTreeMap::new();
    let mut labels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut rows = 0;

    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = tsv::split(&line);
        if fields.len() != header.width {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                expected: header.width,
                found: fields.len(),
            });
        }
        rows += 1;
        let raw: RawSegment = (
            fields[cols.system].to_string(),
            fields[cols.doc].to_string(),
            fields[cols.seg].to_string(),
        );
        let markup = |message: String| CorpusError::SpanMarkup {
            line: line_no,
            message,
        };
        let (source, source_mark) =
            strip_markers(&tsv::unescape(fields[cols.source])).map_err(markup)?;
        let (target, target_mark) =
            strip_markers(&tsv::unescape(fields[cols.target])).map_err(markup)?;
        if source_mark.is_some() && target_mark.is_some() {
            return Err(CorpusError::SpanMarkup {
                line: line_no,
                message: "both source and target carry a marked span".into(),
            });
        }

        let text = SegmentText { source, target };
        match texts.get(&raw) {
            Some((existing, _)) if *existing != text => {
                return Err(CorpusError::TextMismatch {
                    line: line_no,
                    key: format!("{}:{}#{}", raw.0, raw.1, raw.2),
                });
            }
            Some(_) => {}
            None => {
                texts.insert(raw.clone(), (text.clone(), line_no));
            }
        }
        labels.entry(raw.1.clone()).or_default().insert(raw.2.clone());

        let annotations = ratings
            .entry((raw, fields[cols.rater].to_string()))
            .or_default();
        let category_text = fields[cols.category].trim();
        if is_no_error(category_text) {
            continue;
        }
        let category = match parse_category(category_text, ParseMode::Strict) {
            Ok(c) => c,
            Err(_) if category_mode == ParseMode::Lenient => {
                warnings.push(format!(
                    "line {line_no}: unknown category {category_text:?} mapped to Other"
                ));
                ErrorCategory::OTHER
            }
            Err(_) => {
                return Err(CorpusError::UnknownCategory {
                    line: line_no,
                    text: category_text.to_string(),
                })
            }
        };
        let severity: Severity =
            fields[cols.severity]
                .parse()
                .map_err(|_| CorpusError::UnknownSeverity {
                    line: line_no,
                    text: fields[cols.severity].to_string(),
                })?;
        let span = match (source_mark, target_mark) {
            (Some((start, end)), None) => Some(Span {
                side: Side::Source,
                start,
                end,
            }),
            (None, Some((start, end))) => Some(Span {
                side: Side::Target,
                start,
                end,
            }),
            _ if category.is_non_translation() => Some(Span {
                side: Side::Target,
                start: 0,
                end: text.target.chars().count(),
            }),
            _ => None,
        };
        annotations.push(ErrorAnnotation::new(category, severity, span));
    }

    let ids = SegmentIds::from_labels(labels);
    let key_of = |raw: &RawSegment| SegmentKey {
        system: raw.0.clone(),
        doc_id: raw.1.clone(),
        seg_index: ids.resolve(&raw.1, &raw.2).expect("label registered"),
    };

    let mut corpus = Corpus::new();
    for (raw, (text, _)) in texts {
        corpus.segments.insert(key_of(&raw), text);
    }
    for ((raw, rater), annotations) in ratings {
        let rating = SegmentRating {
            key: key_of(&raw),
            rater_id: rater,
            annotations,
        };
        let count = rating.scoring_error_count();
        if count > MAX_ERRORS_PER_SEGMENT {
            let err = CorpusError::LimitExceeded {
                key: rating.key.to_string(),
                rater: rating.rater_id.clone(),
                count,
            };
            match mode {
                ImportMode::Strict => return Err(err),
                ImportMode::Lenient => warnings.push(err.to_string()),
            }
        }
        corpus.mqm_ratings.push(rating);
    }
    corpus
        .mqm_ratings
        .sort_by(|a, b| (&a.key, &a.rater_id).cmp(&(&b.key, &b.rater_id)));
    corpus.ids = ids;
    Ok(MqmImport {
        corpus,
        warnings,
        rows,
    })
}

type NumberedLines = Vec<(usize, String)>;

/// Splits the input into (line number, fields) rows, skipping an optional
/// header whose first field is `first_column`.
fn data_rows<R: BufRead>(
    reader: R,
    first_column: &str,
) -> Result<(Option<Header>, NumberedLines), CorpusError> {
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.split('\t').next().map(|f| f.trim().to_ascii_lowercase())
            == Some(first_column.to_string())
        {
            header = Some(Header::parse(&line));
            continue;
        }
        rows.push((i + 1, line));
    }
    Ok((header, rows))
}

fn parse_number(line: usize, field: &'static str, value: &str) -> Result<f64, CorpusError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CorpusError::BadNumber {
            line,
            field,
            value: value.to_string(),
        })
}

fn resolve_segment(
    ids: &SegmentIds,
    line: usize,
    doc: &str,
    label: &str,
) -> Result<usize, CorpusError> {
    ids.resolve(doc, label)
        .ok_or_else(|| CorpusError::InvalidSegmentId {
            line,
            value: label.to_string(),
        })
}

/// Reads `system doc_id seg_id rater score` rows. Segment labels are mapped
/// through `ids` (typically the MQM corpus's), so files that number segments
/// globally line up with the MQM data.
pub fn import_scalar_tsv<R: BufRead>(
    reader: R,
    scale: Scale,
    ids: &SegmentIds,
) -> Result<Vec<ScalarRating>, CorpusError> {
    let (header, rows) = data_rows(reader, "system")?;
    let (system, doc, seg, rater, score, width) = match &header {
        Some(h) => {
            let need = |names: &[&str]| {
                h.first_of(names)
                    .ok_or_else(|| CorpusError::MissingColumn(names[0].to_string()))
            };
            (
                need(&["system"])?,
                need(&["doc", "doc_id"])?,
                need(&["seg_id", "seg_index"])?,
                need(&["rater"])?,
                need(&["score", "value"])?,
                h.width,
            )
        }
        None => (0, 1, 2, 3, 4, 5),
    };
    let mut out = Vec::with_capacity(rows.len());
    for (line, text) in rows {
        let fields = tsv::split(&text);
        if fields.len() != width {
            return Err(CorpusError::MalformedRow {
                line,
                expected: width,
                found: fields.len(),
            });
        }
        let value = parse_number(line, "score", fields[score])?;
        if !scale.contains(value) {
            return Err(CorpusError::RangeError { line, value, scale });
        }
        let seg_index = resolve_segment(ids, line, fields[doc], fields[seg])?;
        out.push(ScalarRating {
            key: SegmentKey::new(fields[system], fields[doc], seg_index),
            rater_id: fields[rater].to_string(),
            value,
            scale,
        });
    }
    Ok(out)
}

/// Reads metric scores: `metric system score` at system level or
/// `metric system doc_id seg_id score` at segment level. Segment rows that
/// reference segments missing from the corpus are kept; they drop out when
/// correlations are computed.
pub fn import_metric_scores<R: BufRead>(
    reader: R,
    level: MetricLevel,
    ids: &SegmentIds,
) -> Result<MetricScores, CorpusError> {
    let (_, rows) = data_rows(reader, "metric")?;
    let width = match level {
        MetricLevel::System => 3,
        MetricLevel::Segment => 5,
    };
    let mut out = MetricScores::default();
    for (line, text) in rows {
        let fields = tsv::split(&text);
        if fields.len() != width {
            return Err(CorpusError::MalformedRow {
                line,
                expected: width,
                found: fields.len(),
            });
        }
        let metric = fields[0].to_string();
        match level {
            MetricLevel::System => {
                let value = parse_number(line, "score", fields[2])?;
                let scores = out.system.entry(metric.clone()).or_default();
                if scores.insert(fields[1].to_string(), value).is_some() {
                    return Err(CorpusError::DuplicateKey {
                        line,
                        key: format!("({metric}, {})", fields[1]),
                    });
                }
            }
            MetricLevel::Segment => {
                let value = parse_number(line, "score", fields[4])?;
                let seg_index = resolve_segment(ids, line, fields[2], fields[3])?;
                let key = SegmentKey::new(fields[1], fields[2], seg_index);
                let scores = out.segment.entry(metric.clone()).or_default();
                if scores.contains_key(&key) {
                    return Err(CorpusError::DuplicateKey {
                        line,
                        key: format!("({metric}, {key})"),
                    });
                }
                scores.insert(key, value);
            }
        }
    }
    Ok(out)
}

pub const MQM_HEADER: &str = "system\tdoc_id\tseg_id\trater\tsource\ttarget\tcategory\tseverity";
pub const SCALAR_HEADER: &str = "system\tdoc_id\tseg_id\trater\tscore";

/// Writes the ratings of `corpus` in the one-error-per-row MQM format.
/// Segment ids are written as per-document positions.
pub fn write_mqm_tsv(corpus: &Corpus) -> String {
    write_mqm_rows(corpus.mqm_ratings.iter(), |key| corpus.segment(key))
}

pub(crate) fn write_mqm_rows<'a>(
    ratings: impl Iterator<Item = &'a SegmentRating>,
    text_of: impl Fn(&SegmentKey) -> Option<&'a SegmentText>,
) -> String {
    let mut out = String::from(MQM_HEADER);
    out.push('\n');
    let empty = SegmentText {
        source: String::new(),
        target: String::new(),
    };
    for rating in ratings {
        let text = text_of(&rating.key).unwrap_or(&empty);
        let prefix = format!(
            "{}\t{}\t{}\t{}",
            rating.key.system, rating.key.doc_id, rating.key.seg_index, rating.rater_id
        );
        if rating.annotations.is_empty() {
            out.push_str(&format!(
                "{prefix}\t{}\t{}\t{NO_ERROR}\t{NO_ERROR}\n",
                tsv::escape(&text.source),
                tsv::escape(&text.target)
            ));
            continue;
        }
        for a in &rating.annotations {
            let (mut source, mut target) = (text.source.clone(), text.target.clone());
            match a.span {
                Some(Span {
                    side: Side::Source,
                    start,
                    end,
                }) => source = insert_markers(&source, start, end),
                Some(Span {
                    side: Side::Target,
                    start,
                    end,
                }) => target = insert_markers(&target, start, end),
                None => {}
            }
            out.push_str(&format!(
                "{prefix}\t{}\t{}\t{}\t{}\n",
                tsv::escape(&source),
                tsv::escape(&target),
                a.category,
                a.severity
            ));
        }
    }
    out
}

pub fn write_scalar_tsv<'a>(ratings: impl IntoIterator<Item = &'a ScalarRating>) -> String {
    let mut out = String::from(SCALAR_HEADER);
    out.push('\n');
    for r in ratings {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.key.system, r.key.doc_id, r.key.seg_index, r.rater_id, r.value
        ));
    }
    out
}

/// Rules a rating or corpus can violate. The display strings are what the
/// campaign API reports back to raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    SpanOutOfBounds,
    EmptySpan,
    ErrorCapExceeded,
    NonTranslationExclusive,
    NonTranslationSpan,
    SourceSideCategory,
    DanglingReference,
    NonContiguousSegments,
    ScalarOutOfRange,
    UnknownCategory,
    UnknownSeverity,
    WrongPayloadKind,
    MalformedPayload,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::SpanOutOfBounds => "error span must lie within the segment text",
            Rule::EmptySpan => "error span must not be empty",
            Rule::ErrorCapExceeded => "at most five errors per segment; identify only the five most severe",
            Rule::NonTranslationExclusive => {
                "no other errors may be identified when Non-translation is selected"
            }
            Rule::NonTranslationSpan => "a Non-translation error must span the entire target segment",
            Rule::SourceSideCategory => {
                "source-side spans are allowed only for Source error and Accuracy/Omission"
            }
            Rule::DanglingReference => "rating references a segment that does not exist",
            Rule::NonContiguousSegments => "segment positions within a document must be contiguous from 0",
            Rule::ScalarOutOfRange => "scalar rating outside the declared scale",
            Rule::UnknownCategory => "unknown error category",
            Rule::UnknownSeverity => "unknown severity",
            Rule::WrongPayloadKind => "payload kind does not match the project mode",
            Rule::MalformedPayload => "request body is not a valid submission",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.location, self.rule, self.detail)
    }
}

/// Checks one rater's annotations of a segment against the annotation rules.
/// Returns `(rule, detail)` pairs; empty means valid.
pub fn check_annotations(
    annotations: &[ErrorAnnotation],
    text: &SegmentText,
) -> Vec<(Rule, String)> {
    let mut out = Vec::new();
    let scoring: Vec<&ErrorAnnotation> = annotations
        .iter()
        .filter(|a| a.category.counts_toward_cap())
        .collect();
    if scoring.len() > MAX_ERRORS_PER_SEGMENT {
        out.push((
            Rule::ErrorCapExceeded,
            format!("{} errors", scoring.len()),
        ));
    }
    let non_translations = scoring.iter().filter(|a| a.category.is_non_translation()).count();
    if non_translations > 0 && scoring.len() > 1 {
        out.push((
            Rule::NonTranslationExclusive,
            format!(
                "{non_translations} Non-translation and {} other errors",
                scoring.len() - non_translations
            ),
        ));
    }
    let omission = ErrorCategory::new(TopLevel::Accuracy, SubCategory::Omission).expect("valid");
    let target_len = text.target.chars().count();
    for (i, a) in annotations.iter().enumerate() {
        let Some(span) = a.span else { continue };
        let len = text.side(span.side).chars().count();
        if span.start > span.end || span.end > len {
            out.push((
                Rule::SpanOutOfBounds,
                format!(
                    "error {i}: [{}, {}) on {:?} text of length {len}",
                    span.start, span.end, span.side
                ),
            ));
        }
        if span.start == span.end && !a.category.is_non_translation() {
            out.push((Rule::EmptySpan, format!("error {i}: empty span at {}", span.start)));
        }
        if span.side == Side::Source && !(a.category.is_source_error() || a.category == omission) {
            out.push((
                Rule::SourceSideCategory,
                format!("error {i}: {} marked on the source", a.category),
            ));
        }
        if a.category.is_non_translation()
            && (span.side != Side::Target || span.start != 0 || span.end != target_len)
        {
            out.push((
                Rule::NonTranslationSpan,
                format!("error {i}: [{}, {}) of {target_len}", span.start, span.end),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, rule: Rule) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }
}

/// Lists every invariant violation in the corpus; an empty report means the
/// corpus is valid.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    for rating in &corpus.mqm_ratings {
        let location = format!("{} rater {}", rating.key, rating.rater_id);
        match corpus.segment(&rating.key) {
            None => violations.push(Violation {
                rule: Rule::DanglingReference,
                location,
                detail: "no segment text".into(),
            }),
            Some(text) => {
                for (rule, detail) in check_annotations(&rating.annotations, text) {
                    violations.push(Violation {
                        rule,
                        location: location.clone(),
                        detail,
                    });
                }
            }
        }
    }
    for (method, ratings) in &corpus.scalar {
        for r in ratings {
            let location = format!("{method} {} rater {}", r.key, r.rater_id);
            if !corpus.segments.contains_key(&r.key) {
                violations.push(Violation {
                    rule: Rule::DanglingReference,
                    location: location.clone(),
                    detail: "no segment text".into(),
                });
            }
            if !r.scale.contains(r.value) {
                violations.push(Violation {
                    rule: Rule::ScalarOutOfRange,
                    location,
                    detail: format!("{} on {}", r.value, r.scale),
                });
            }
        }
    }
    for (doc, systems) in corpus.documents() {
        for (system, positions) in systems {
            if positions.iter().enumerate().any(|(i, &p)| i != p) {
                violations.push(Violation {
                    rule: Rule::NonContiguousSegments,
                    location: format!("{system}:{doc}"),
                    detail: format!("positions {positions:?}"),
                });
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "system\tdoc_id\tseg_id\trater\tsource\ttarget\tcategory\tseverity\n";

    fn import(body: &str, mode: ImportMode) -> Result<MqmImport, CorpusError> {
        import_mqm_tsv(format!("{HEADER}{body}").as_bytes(), mode)
    }

    fn cat(s: &str) -> ErrorCategory {
        s.parse().unwrap()
    }

    #[test]
    fn imports_single_error_with_target_span() {
        let imported = import(
            "sysA\td1\t0\tr1\tsrc\tGuten <v>Tag</v>\tAccuracy/Mistranslation\tMajor\n",
            ImportMode::Strict,
        )
        .unwrap();
        let corpus = imported.corpus;
        assert_eq!(corpus.mqm_ratings().len(), 1);
        let rating = &corpus.mqm_ratings()[0];
        assert_eq!(rating.key, SegmentKey::new("sysA", "d1", 0));
        assert_eq!(
            rating.annotations[0].span,
            Some(Span {
                side: Side::Target,
                start: 6,
                end: 9
            })
        );
        assert_eq!(corpus.segment(&rating.key).unwrap().target, "Guten Tag");
    }

    #[test]
    fn offsets_count_unicode_scalars() {
        let imported = import(
            "s\td\t0\tr\t今天<v>天气</v>很好\tok\tSource error\tMinor\n",
            ImportMode::Strict,
        )
        .unwrap();
        let a = &imported.corpus.mqm_ratings()[0].annotations[0];
        assert_eq!(
            a.span,
            Some(Span {
                side: Side::Source,
                start: 2,
                end: 4
            })
        );
    }

    #[test]
    fn no_error_row_gives_empty_rating() {
        let imported = import("s\td\t0\tr\ta\tb\tNo-error\tno-error\n", ImportMode::Strict).unwrap();
        assert!(imported.corpus.mqm_ratings()[0].annotations.is_empty());
    }

    #[test]
    fn six_errors_exceed_the_limit() {
        let row = "s\td\t0\tr\ta\t<v>b</v>\tFluency/Grammar\tMinor\n";
        let body = row.repeat(6);
        assert!(matches!(
            import(&body, ImportMode::Strict),
            Err(CorpusError::LimitExceeded { count: 6, .. })
        ));
        let lenient = import(&body, ImportMode::Lenient).unwrap();
        assert_eq!(lenient.warnings.len(), 1);
        // Source errors do not count toward the cap.
        let body = format!("{}{}", row.repeat(5), "s\td\t0\tr\t<v>a</v>\tb\tSource error\tMajor\n");
        assert!(import(&body, ImportMode::Strict).is_ok());
    }

    #[test]
    fn markup_and_shape_errors() {
        assert!(matches!(
            import("s\td\t0\tr\ta\t<v>b\tOther\tMinor\n", ImportMode::Strict),
            Err(CorpusError::SpanMarkup { line: 2, .. })
        ));
        assert!(matches!(
            import("s\td\t0\tr\ta\t<v>b</v> <v>c</v>\tOther\tMinor\n", ImportMode::Strict),
            Err(CorpusError::SpanMarkup { .. })
        ));
        assert!(matches!(
            import("s\td\t0\tr\t<v>a</v>\t<v>b</v>\tOther\tMinor\n", ImportMode::Strict),
            Err(CorpusError::SpanMarkup { .. })
        ));
        assert!(matches!(
            import("s\td\t0\tr\ta\tb\tOther\n", ImportMode::Strict),
            Err(CorpusError::MalformedRow {
                expected: 8,
                found: 7,
                ..
            })
        ));
        let body = "s\td\t0\tr1\ta\t<v>b</v>\tOther\tMinor\ns\td\t0\tr2\ta\tc\tNo-error\tno-error\n";
        assert!(matches!(
            import(body, ImportMode::Strict),
            Err(CorpusError::TextMismatch { line: 3, .. })
        ));
        assert!(matches!(
            import("s\td\t0\tr\ta\tb\tAccuracy/Banana\tMinor\n", ImportMode::Strict),
            Err(CorpusError::UnknownCategory { .. })
        ));
        let lenient = import("s\td\t0\tr\ta\tb\tAccuracy/Banana\tMinor\n", ImportMode::Lenient).unwrap();
        assert_eq!(lenient.corpus.mqm_ratings()[0].annotations[0].category, ErrorCategory::OTHER);
        assert!(matches!(
            import("s\td\t0\tr\ta\tb\tOther\tCritical\n", ImportMode::Strict),
            Err(CorpusError::UnknownSeverity { .. })
        ));
    }

    #[test]
    fn escaped_tabs_and_newlines() {
        let imported = import(
            "s\td\t0\tr\tline\\none\tx\\ty <v>z</v>\tOther\tMinor\n",
            ImportMode::Strict,
        )
        .unwrap();
        let corpus = imported.corpus;
        let text = corpus.segment(&SegmentKey::new("s", "d", 0)).unwrap();
        assert_eq!(text.source, "line\none");
        assert_eq!(text.target, "x\ty z");
        assert!(write_mqm_tsv(&corpus).contains("line\\none\tx\\ty <v>z</v>\tOther\tMinor"));
    }

    #[test]
    fn non_translation_without_markup_spans_target() {
        let imported = import("s\td\t0\tr\ta\tgarbled\tNon-translation!\tMajor\n", ImportMode::Strict).unwrap();
        let a = &imported.corpus.mqm_ratings()[0].annotations[0];
        assert_eq!(
            a.span,
            Some(Span {
                side: Side::Target,
                start: 0,
                end: 7
            })
        );
    }

    #[test]
    fn released_layout_with_global_segment_ids() {
        let text = "system\tdoc\tdoc_id\tseg_id\trater\tsource\ttarget\tcategory\tseverity\n\
            A\tnews-1\t1\t7\tr1\ts7\tt7\tNo-error\tno-error\n\
            A\tnews-1\t1\t8\tr1\ts8\t<v>t8</v>\tStyle/Awkward\tMinor\n\
            A\tnews-2\t2\t9\tr1\ts9\tt9\tNo-error\tno-error\n";
        let corpus = import_mqm_tsv(text.as_bytes(), ImportMode::Strict).unwrap().corpus;
        let keys: Vec<_> = corpus.segments().keys().cloned().collect();
        assert_eq!(
            keys,
            vec![
                SegmentKey::new("A", "news-1", 0),
                SegmentKey::new("A", "news-1", 1),
                SegmentKey::new("A", "news-2", 0)
            ]
        );
        assert_eq!(corpus.segment_ids().label("news-1", 1), Some("8"));
        let scalar = "system\tdoc\tdoc_id\tseg_id\trater\tsource\ttarget\tscore\n\
            A\tnews-1\t1\t8\tp1\ts8\tt8\t4\n";
        let ratings = import_scalar_tsv(scalar.as_bytes(), Scale::Sqm, corpus.segment_ids()).unwrap();
        assert_eq!(ratings[0].key, SegmentKey::new("A", "news-1", 1));
    }

    #[test]
    fn scalar_import_ranges() {
        let ids = SegmentIds::default();
        let ok = import_scalar_tsv("s\td\t0\tr\t6\n".as_bytes(), Scale::Sqm, &ids).unwrap();
        assert_eq!(ok[0].value, 6.0);
        assert!(matches!(
            import_scalar_tsv("s\td\t0\tr\t7\n".as_bytes(), Scale::Sqm, &ids),
            Err(CorpusError::RangeError { line: 1, .. })
        ));
        assert!(matches!(
            import_scalar_tsv("s\td\t0\tr\t4.5\n".as_bytes(), Scale::Sqm, &ids),
            Err(CorpusError::RangeError { .. })
        ));
        let raw = import_scalar_tsv(
            "system\tdoc_id\tseg_id\trater\tscore\nHuman-P\td\t0\tr\t84.2\n".as_bytes(),
            Scale::WmtRaw,
            &ids,
        )
        .unwrap();
        assert_eq!(raw[0].value, 84.2);
        assert!(import_scalar_tsv("s\td\t0\tr\t-1.5\n".as_bytes(), Scale::WmtZ, &ids).is_ok());
        assert!(matches!(
            import_scalar_tsv("s\td\t0\tr\n".as_bytes(), Scale::WmtZ, &ids),
            Err(CorpusError::MalformedRow { .. })
        ));
        assert!(matches!(
            import_scalar_tsv("s\td\tx\tr\t1\n".as_bytes(), Scale::WmtZ, &ids),
            Err(CorpusError::InvalidSegmentId { .. })
        ));
    }

    #[test]
    fn metric_import() {
        let ids = SegmentIds::default();
        let scores = import_metric_scores("chrF\tsysA\t0.61\n".as_bytes(), MetricLevel::System, &ids).unwrap();
        assert_eq!(scores.system["chrF"]["sysA"], 0.61);
        assert!(matches!(
            import_metric_scores("chrF\tsysA\t0.61\nchrF\tsysA\t0.6\n".as_bytes(), MetricLevel::System, &ids),
            Err(CorpusError::DuplicateKey { line: 2, .. })
        ));
        let seg = import_metric_scores(
            "metric\tsystem\tdoc_id\tseg_id\tscore\nBLEU\tA\td\t0\t0.3\nBLEU\tA\td\t1\t0.4\n".as_bytes(),
            MetricLevel::Segment,
            &ids,
        )
        .unwrap();
        assert_eq!(seg.segment["BLEU"].len(), 2);
        assert!(matches!(
            import_metric_scores("BLEU\tA\td\t0\n".as_bytes(), MetricLevel::Segment, &ids),
            Err(CorpusError::MalformedRow { .. })
        ));
    }

    #[test]
    fn validation_reports_each_violation() {
        let mut corpus = Corpus::new();
        let key = SegmentKey::new("s", "d", 0);
        corpus.insert_segment(key.clone(), "src", "target");
        corpus.add_rating(SegmentRating {
            key: key.clone(),
            rater_id: "r1".into(),
            annotations: vec![],
        });
        assert!(validate_corpus(&corpus).is_valid());

        corpus.add_rating(SegmentRating {
            key: key.clone(),
            rater_id: "r2".into(),
            annotations: vec![
                ErrorAnnotation::new(
                    ErrorCategory::NON_TRANSLATION,
                    Severity::Major,
                    Some(Span { side: Side::Target, start: 0, end: 6 }),
                ),
                ErrorAnnotation::new(cat("Accuracy/Addition"), Severity::Major, None),
            ],
        });
        corpus.add_rating(SegmentRating {
            key: key.clone(),
            rater_id: "r3".into(),
            annotations: vec![ErrorAnnotation::new(
                cat("Fluency/Grammar"),
                Severity::Minor,
                Some(Span { side: Side::Target, start: 2, end: 9 }),
            )],
        });
        let report = validate_corpus(&corpus);
        assert_eq!(report.count(Rule::NonTranslationExclusive), 1);
        assert_eq!(report.count(Rule::SpanOutOfBounds), 1);
        assert_eq!(report.violations.len(), 2);

        corpus.add_rating(SegmentRating {
            key: SegmentKey::new("s", "d", 3),
            rater_id: "r1".into(),
            annotations: vec![],
        });
        assert_eq!(validate_corpus(&corpus).count(Rule::DanglingReference), 1);
    }

    #[test]
    fn source_side_rules_and_contiguity() {
        let text = SegmentText {
            source: "abc".into(),
            target: "xyz".into(),
        };
        let src = Some(Span { side: Side::Source, start: 0, end: 1 });
        assert!(check_annotations(
            &[ErrorAnnotation::new(cat("Accuracy/Omission"), Severity::Major, src)],
            &text
        )
        .is_empty());
        assert_eq!(
            check_annotations(
                &[ErrorAnnotation::new(cat("Fluency/Grammar"), Severity::Major, src)],
                &text
            )[0]
            .0,
            Rule::SourceSideCategory
        );

        let mut corpus = Corpus::new();
        corpus.insert_segment(SegmentKey::new("s", "d", 0), "a", "b");
        corpus.insert_segment(SegmentKey::new("s", "d", 2), "a", "b");
        assert_eq!(validate_corpus(&corpus).count(Rule::NonContiguousSegments), 1);
    }

    #[test]
    fn marker_insertion_inverts_stripping() {
        for text in ["Guten <v>Tag</v>", "<v></v>abc", "abc<v>def</v>", "x<v>é漢</v>y"] {
            let (plain, mark) = strip_markers(text).unwrap();
            let (s, e) = mark.unwrap();
            assert_eq!(insert_markers(&plain, s, e), text);
        }
    }
}
