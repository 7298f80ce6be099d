//! MQM error hierarchy, severity levels and weighting schemes.
//!
//! Categories are two-level: a top-level dimension and, for the dimensions
//! that have them, a sub-category. Every category has a canonical string
//! form (`"Accuracy/Mistranslation"`, `"Non-translation"`, ...) that
//! [`parse_category`] accepts back, along with the spelling variants found
//! in released corpora and hand-written files.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("unknown error category {0:?}")]
    UnknownCategory(String),
    #[error("unknown severity {0:?}")]
    UnknownSeverity(String),
    #[error("sub-category {sub:?} does not belong to {top:?}")]
    MismatchedSubCategory { top: TopLevel, sub: SubCategory },
    #[error("weight scheme {scheme:?} has no catch-all rule for {severity} errors")]
    MissingCatchAll { scheme: String, severity: Severity },
    #[error("weight scheme line {line}: {message}")]
    SchemeFormat { line: usize, message: String },
    #[error("weight must be a finite non-negative number, got {0}")]
    InvalidWeight(f64),
    #[error("reading weight scheme: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TopLevel {
    Accuracy,
    Fluency,
    Terminology,
    Style,
    LocaleConvention,
    Other,
    SourceError,
    NonTranslation,
}

impl TopLevel {
    pub const ALL: [TopLevel; 8] = [
        TopLevel::Accuracy,
        TopLevel::Fluency,
        TopLevel::Terminology,
        TopLevel::Style,
        TopLevel::LocaleConvention,
        TopLevel::Other,
        TopLevel::SourceError,
        TopLevel::NonTranslation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TopLevel::Accuracy => "Accuracy",
            TopLevel::Fluency => "Fluency",
            TopLevel::Terminology => "Terminology",
            TopLevel::Style => "Style",
            TopLevel::LocaleConvention => "Locale convention",
            TopLevel::Other => "Other",
            TopLevel::SourceError => "Source error",
            TopLevel::NonTranslation => "Non-translation",
        }
    }

    /// Sub-categories defined under this dimension, in hierarchy order.
    pub fn sub_categories(self) -> &'static [SubCategory] {
        use SubCategory::*;
        match self {
            TopLevel::Accuracy => &[Addition, Omission, Mistranslation, UntranslatedText],
            TopLevel::Fluency => &[
                Punctuation,
                Spelling,
                Grammar,
                Register,
                Inconsistency,
                CharacterEncoding,
            ],
            TopLevel::Terminology => &[InappropriateForContext, InconsistentUse],
            TopLevel::Style => &[Awkward],
            TopLevel::LocaleConvention => &[
                AddressFormat,
                CurrencyFormat,
                DateFormat,
                NameFormat,
                TelephoneFormat,
                TimeFormat,
            ],
            TopLevel::Other | TopLevel::SourceError | TopLevel::NonTranslation => &[],
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            TopLevel::Accuracy => &["accuracy"],
            TopLevel::Fluency => &["fluency"],
            TopLevel::Terminology => &["terminology"],
            TopLevel::Style => &["style"],
            TopLevel::LocaleConvention => &["localeconvention", "locale"],
            TopLevel::Other => &["other"],
            TopLevel::SourceError => &["sourceerror", "source"],
            TopLevel::NonTranslation => &["nontranslation"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubCategory {
    Addition,
    Omission,
    Mistranslation,
    UntranslatedText,
    Punctuation,
    Spelling,
    Grammar,
    Register,
    Inconsistency,
    CharacterEncoding,
    InappropriateForContext,
    InconsistentUse,
    Awkward,
    AddressFormat,
    CurrencyFormat,
    DateFormat,
    NameFormat,
    TelephoneFormat,
    TimeFormat,
}

impl SubCategory {
    pub fn label(self) -> &'static str {
        use SubCategory::*;
        match self {
            Addition => "Addition",
            Omission => "Omission",
            Mistranslation => "Mistranslation",
            UntranslatedText => "Untranslated text",
            Punctuation => "Punctuation",
            Spelling => "Spelling",
            Grammar => "Grammar",
            Register => "Register",
            Inconsistency => "Inconsistency",
            CharacterEncoding => "Character encoding",
            InappropriateForContext => "Inappropriate for context",
            InconsistentUse => "Inconsistent use",
            Awkward => "Awkward",
            AddressFormat => "Address format",
            CurrencyFormat => "Currency format",
            DateFormat => "Date format",
            NameFormat => "Name format",
            TelephoneFormat => "Telephone format",
            TimeFormat => "Time format",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        use SubCategory::*;
        match self {
            Addition => &["addition"],
            Omission => &["omission"],
            Mistranslation => &["mistranslation"],
            UntranslatedText => &["untranslatedtext", "untranslated"],
            Punctuation => &["punctuation"],
            Spelling => &["spelling"],
            Grammar => &["grammar"],
            Register => &["register"],
            Inconsistency => &["inconsistency"],
            CharacterEncoding => &["characterencoding", "encoding"],
            InappropriateForContext => &["inappropriateforcontext", "inappropriate"],
            InconsistentUse => &["inconsistentuse", "inconsistent"],
            Awkward => &["awkward"],
            AddressFormat => &["addressformat", "address"],
            CurrencyFormat => &["currencyformat", "currency"],
            DateFormat => &["dateformat", "date"],
            NameFormat => &["nameformat", "name"],
            TelephoneFormat => &["telephoneformat", "telephone"],
            TimeFormat => &["timeformat", "time"],
        }
    }
}

/// A node of the error hierarchy. The sub-category, when present, always
/// belongs to the top-level dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ErrorCategory {
    top: TopLevel,
    sub: Option<SubCategory>,
}

impl ErrorCategory {
    pub const NON_TRANSLATION: ErrorCategory = ErrorCategory::top(TopLevel::NonTranslation);
    pub const SOURCE_ERROR: ErrorCategory = ErrorCategory::top(TopLevel::SourceError);
    pub const OTHER: ErrorCategory = ErrorCategory::top(TopLevel::Other);

    pub const fn top(top: TopLevel) -> Self {
        ErrorCategory { top, sub: None }
    }

    pub fn new(top: TopLevel, sub: SubCategory) -> Result<Self, TaxonomyError> {
        if top.sub_categories().contains(&sub) {
            Ok(ErrorCategory {
                top,
                sub: Some(sub),
            })
        } else {
            Err(TaxonomyError::MismatchedSubCategory { top, sub })
        }
    }

    pub fn top_level(&self) -> TopLevel {
        self.top
    }

    pub fn sub(&self) -> Option<SubCategory> {
        self.sub
    }

    pub fn is_source_error(&self) -> bool {
        self.top == TopLevel::SourceError
    }

    pub fn is_non_translation(&self) -> bool {
        self.top == TopLevel::NonTranslation
    }

    /// Source errors are recorded but never count against the 5-error cap.
    pub fn counts_toward_cap(&self) -> bool {
        !self.is_source_error()
    }

    /// `"Top/Sub"` or `"Top"`.
    pub fn canonical(&self) -> String {
        match self.sub {
            Some(sub) => format!("{}/{}", self.top.label(), sub.label()),
            None => self.top.label().to_string(),
        }
    }

    /// Every category of the hierarchy: each top-level on its own, then each
    /// (top, sub) pair.
    pub fn all() -> Vec<ErrorCategory> {
        let mut out = Vec::new();
        for top in TopLevel::ALL {
            out.push(ErrorCategory::top(top));
            for &sub in top.sub_categories() {
                out.push(ErrorCategory {
                    top,
                    sub: Some(sub),
                });
            }
        }
        out
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for ErrorCategory {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_category(s, ParseMode::Strict)
    }
}

impl Serialize for ErrorCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for ErrorCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_category(&text, ParseMode::Strict).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Unknown strings become [`TopLevel::Other`].
    Lenient,
}

/// Collapses case, whitespace, separators (`/`, `-`, `_`) and stray
/// punctuation so that `"Non-translation!"`, `"non_translation"` and
/// `"NonTranslation"` share one key.
fn normalize_key(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn category_index() -> &'static HashMap<String, ErrorCategory> {
    static INDEX: OnceLock<HashMap<String, ErrorCategory>> = OnceLock::new();
    INDEX.get_or_init(|| {
        let mut index = HashMap::new();
        for top in TopLevel::ALL {
            for alias in top.aliases() {
                index.insert(alias.to_string(), ErrorCategory::top(top));
                for &sub in top.sub_categories() {
                    for sub_alias in sub.aliases() {
                        index.insert(
                            format!("{alias}{sub_alias}"),
                            ErrorCategory {
                                top,
                                sub: Some(sub),
                            },
                        );
                    }
                }
            }
        }
        index
    })
}

/// Parses a category string after normalising case, whitespace, separators
/// and trailing punctuation.
pub fn parse_category(text: &str, mode: ParseMode) -> Result<ErrorCategory, TaxonomyError> {
    let key = normalize_key(text);
    match category_index().get(&key) {
        Some(category) if !key.is_empty() => Ok(*category),
        _ => match mode {
            ParseMode::Strict => Err(TaxonomyError::UnknownCategory(text.to_string())),
            ParseMode::Lenient => Ok(ErrorCategory::OTHER),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Major,
    Minor,
    Neutral,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Major, Severity::Minor, Severity::Neutral];

    pub fn label(self) -> &'static str {
        match self {
            Severity::Major => "Major",
            Severity::Minor => "Minor",
            Severity::Neutral => "Neutral",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Severity {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_key(s).as_str() {
            "major" => Ok(Severity::Major),
            "minor" => Ok(Severity::Minor),
            "neutral" => Ok(Severity::Neutral),
            _ => Err(TaxonomyError::UnknownSeverity(s.to_string())),
        }
    }
}

/// The category side of a weight rule. A top-level-only category matches
/// every sub-category beneath it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryPattern {
    Any,
    Category(ErrorCategory),
}

impl CategoryPattern {
    pub fn matches(&self, category: &ErrorCategory) -> bool {
        match self {
            CategoryPattern::Any => true,
            CategoryPattern::Category(p) => {
                p.top == category.top && (p.sub.is_none() || p.sub == category.sub)
            }
        }
    }
}

impl fmt::Display for CategoryPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CategoryPattern::Any => f.write_str("*"),
            CategoryPattern::Category(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRule {
    /// `None` matches every severity.
    pub severity: Option<Severity>,
    pub category: CategoryPattern,
    pub weight: f64,
}

impl WeightRule {
    pub fn new(severity: Option<Severity>, category: CategoryPattern, weight: f64) -> Self {
        WeightRule {
            severity,
            category,
            weight,
        }
    }

    fn matches(&self, severity: Severity, category: &ErrorCategory) -> bool {
        self.severity.is_none_or(|s| s == severity) && self.category.matches(category)
    }
}

/// Ordered `(severity, category) -> weight` rules; the first match wins.
///
/// Construction checks that every severity has a catch-all rule, so
/// [`WeightScheme::weight_of`] is total.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    name: String,
    rules: Vec<WeightRule>,
}

impl WeightScheme {
    pub fn new(name: impl Into<String>, rules: Vec<WeightRule>) -> Result<Self, TaxonomyError> {
        let name = name.into();
        for rule in &rules {
            if !rule.weight.is_finite() || rule.weight < 0.0 {
                return Err(TaxonomyError::InvalidWeight(rule.weight));
            }
        }
        for severity in Severity::ALL {
            let covered = rules.iter().any(|r| {
                r.category == CategoryPattern::Any && r.severity.is_none_or(|s| s == severity)
            });
            if !covered {
                return Err(TaxonomyError::MissingCatchAll {
                    scheme: name,
                    severity,
                });
            }
        }
        Ok(WeightScheme { name, rules })
    }

    /// The standard weighting: Major 5, Minor 1, Minor Fluency/Punctuation
    /// 0.1, Major Non-translation 25, Neutral 0, source errors 0.
    pub fn standard() -> Self {
        Self::with_major_weight(5.0)
    }

    /// The standard scheme with a different Major weight. Non-translation
    /// stays equivalent to five Major errors.
    pub fn with_major_weight(major: f64) -> Self {
        let name = if major == 5.0 {
            "standard".to_string()
        } else {
            format!("major-{major}")
        };
        let punctuation = ErrorCategory {
            top: TopLevel::Fluency,
            sub: Some(SubCategory::Punctuation),
        };
        let rules = vec![
            WeightRule::new(
                None,
                CategoryPattern::Category(ErrorCategory::SOURCE_ERROR),
                0.0,
            ),
            WeightRule::new(
                Some(Severity::Major),
                CategoryPattern::Category(ErrorCategory::NON_TRANSLATION),
                5.0 * major,
            ),
            WeightRule::new(Some(Severity::Major), CategoryPattern::Any, major),
            WeightRule::new(
                Some(Severity::Minor),
                CategoryPattern::Category(punctuation),
                0.1,
            ),
            WeightRule::new(Some(Severity::Minor), CategoryPattern::Any, 1.0),
            WeightRule::new(Some(Severity::Neutral), CategoryPattern::Any, 0.0),
        ];
        WeightScheme::new(name, rules).expect("standard scheme is complete")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rules(&self) -> &[WeightRule] {
        &self.rules
    }

    pub fn weight_of(&self, severity: Severity, category: &ErrorCategory) -> f64 {
        self.rules
            .iter()
            .find(|r| r.matches(severity, category))
            .map(|r| r.weight)
            .expect("validated scheme has a catch-all for every severity")
    }

    /// Reads `severity<TAB>category_pattern<TAB>weight` lines. `*` is the
    /// wildcard in either of the first two columns; a leading header row and
    /// `#` comments are skipped.
    pub fn from_tsv<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Self, TaxonomyError> {
        let mut rules = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| TaxonomyError::Io(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(TaxonomyError::SchemeFormat {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if rules.is_empty() && fields[0].eq_ignore_ascii_case("severity") {
                continue;
            }
            let severity = match fields[0] {
                "*" => None,
                s => Some(s.parse::<Severity>().map_err(|e| TaxonomyError::SchemeFormat {
                    line: line_no,
                    message: e.to_string(),
                })?),
            };
            let category = match fields[1] {
                "*" => CategoryPattern::Any,
                c => CategoryPattern::Category(parse_category(c, ParseMode::Strict).map_err(
                    |e| TaxonomyError::SchemeFormat {
                        line: line_no,
                        message: e.to_string(),
                    },
                )?),
            };
            let weight: f64 = fields[2].parse().map_err(|_| TaxonomyError::SchemeFormat {
                line: line_no,
                message: format!("weight {:?} is not a number", fields[2]),
            })?;
            rules.push(WeightRule::new(severity, category, weight));
        }
        WeightScheme::new(name, rules)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("severity\tcategory_pattern\tweight\n");
        for rule in &self.rules {
            let severity = rule.severity.map_or("*", Severity::label);
            out.push_str(&format!("{severity}\t{}\t{}\n", rule.category, rule.weight));
        }
        out
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cat(text: &str) -> ErrorCategory {
        parse_category(text, ParseMode::Strict).unwrap()
    }

    #[test]
    fn parses_canonical_and_variant_spellings() {
        let mistranslation =
            ErrorCategory::new(TopLevel::Accuracy, SubCategory::Mistranslation).unwrap();
        assert_eq!(cat("Accuracy/Mistranslation"), mistranslation);
        assert_eq!(cat("  accuracy - mistranslation "), mistranslation);
        assert_eq!(cat("ACCURACY_MISTRANSLATION"), mistranslation);
        assert_eq!(cat("Non-translation!"), ErrorCategory::NON_TRANSLATION);
        assert_eq!(cat("non_translation"), ErrorCategory::NON_TRANSLATION);
        assert_eq!(cat("Source error"), ErrorCategory::SOURCE_ERROR);
        assert_eq!(
            cat("Locale convention/Currency format"),
            ErrorCategory::new(TopLevel::LocaleConvention, SubCategory::CurrencyFormat).unwrap()
        );
        assert_eq!(
            cat("Locale/Name format"),
            ErrorCategory::new(TopLevel::LocaleConvention, SubCategory::NameFormat).unwrap()
        );
        assert_eq!(
            cat("Terminology/Inappropriate for context"),
            ErrorCategory::new(TopLevel::Terminology, SubCategory::InappropriateForContext)
                .unwrap()
        );
    }

    #[test]
    fn unknown_category_strict_vs_lenient() {
        assert_eq!(
            parse_category("Accuracy/Banana", ParseMode::Strict),
            Err(TaxonomyError::UnknownCategory("Accuracy/Banana".into()))
        );
        assert_eq!(
            parse_category("Accuracy/Banana", ParseMode::Lenient),
            Ok(ErrorCategory::OTHER)
        );
        assert!(parse_category("!!", ParseMode::Strict).is_err());
    }

    #[test]
    fn sub_must_belong_to_top() {
        assert!(ErrorCategory::new(TopLevel::Style, SubCategory::Grammar).is_err());
        for top in [TopLevel::Other, TopLevel::SourceError, TopLevel::NonTranslation] {
            assert!(top.sub_categories().is_empty());
        }
    }

    #[test]
    fn standard_weights() {
        let scheme = WeightScheme::standard();
        assert_eq!(
            scheme.weight_of(Severity::Major, &ErrorCategory::NON_TRANSLATION),
            25.0
        );
        assert_eq!(
            scheme.weight_of(Severity::Minor, &cat("Fluency/Punctuation")),
            0.1
        );
        assert_eq!(scheme.weight_of(Severity::Major, &cat("Fluency/Punctuation")), 5.0);
        assert_eq!(scheme.weight_of(Severity::Neutral, &cat("Style/Awkward")), 0.0);
        for severity in Severity::ALL {
            assert_eq!(scheme.weight_of(severity, &ErrorCategory::SOURCE_ERROR), 0.0);
        }
    }

    #[test]
    fn standard_weights_for_every_category() {
        let scheme = WeightScheme::standard();
        let punctuation = cat("Fluency/Punctuation");
        for c in ErrorCategory::all() {
            if c.is_non_translation() || c.is_source_error() {
                continue;
            }
            assert_eq!(scheme.weight_of(Severity::Major, &c), 5.0, "{c}");
            let minor = if c == punctuation { 0.1 } else { 1.0 };
            assert_eq!(scheme.weight_of(Severity::Minor, &c), minor, "{c}");
            assert_eq!(scheme.weight_of(Severity::Neutral, &c), 0.0, "{c}");
        }
    }

    #[test]
    fn scheme_requires_catch_alls() {
        let rules = vec![
            WeightRule::new(Some(Severity::Major), CategoryPattern::Any, 5.0),
            WeightRule::new(Some(Severity::Minor), CategoryPattern::Any, 1.0),
        ];
        assert!(matches!(
            WeightScheme::new("x", rules),
            Err(TaxonomyError::MissingCatchAll {
                severity: Severity::Neutral,
                ..
            })
        ));
        let negative = vec![WeightRule::new(None, CategoryPattern::Any, -1.0)];
        assert!(matches!(
            WeightScheme::new("x", negative),
            Err(TaxonomyError::InvalidWeight(_))
        ));
    }

    #[test]
    fn scheme_tsv_round_trip() {
        let scheme = WeightScheme::standard();
        let text = scheme.to_tsv();
        let back = WeightScheme::from_tsv("standard", text.as_bytes()).unwrap();
        assert_eq!(back, scheme);
    }

    #[test]
    fn scheme_tsv_top_level_pattern_and_errors() {
        let text = "# accuracy-heavy\n*\tSource error\t0\nMajor\tAccuracy\t10\nMajor\t*\t5\n*\t*\t1\n";
        let scheme = WeightScheme::from_tsv("acc", text.as_bytes()).unwrap();
        assert_eq!(scheme.weight_of(Severity::Major, &cat("Accuracy/Omission")), 10.0);
        assert_eq!(scheme.weight_of(Severity::Major, &cat("Fluency/Grammar")), 5.0);
        assert_eq!(scheme.weight_of(Severity::Neutral, &cat("Fluency/Grammar")), 1.0);

        let bad = "Major\tAccuracy\n";
        assert!(matches!(
            WeightScheme::from_tsv("bad", bad.as_bytes()),
            Err(TaxonomyError::SchemeFormat { line: 1, .. })
        ));
        let bad = "Critical\t*\t100\n";
        assert!(matches!(
            WeightScheme::from_tsv("bad", bad.as_bytes()),
            Err(TaxonomyError::SchemeFormat { line: 1, .. })
        ));
    }

    fn any_category() -> impl Strategy<Value = ErrorCategory> {
        let all = ErrorCategory::all();
        (0..all.len()).prop_map(move |i| all[i])
    }

    proptest! {
        #[test]
        fn canonical_form_round_trips(c in any_category()) {
            prop_assert_eq!(cat(&c.canonical()), c);
            prop_assert_eq!(cat(&c.canonical().to_uppercase().replace('/', "-")), c);
        }

        #[test]
        fn weight_of_is_pure(c in any_category(), s in 0usize..3, major in 0.5f64..10.0) {
            let scheme = WeightScheme::with_major_weight(major);
            let severity = Severity::ALL[s];
            prop_assert_eq!(scheme.weight_of(severity, &c), scheme.weight_of(severity, &c));
        }
    }
}
