//! Unquoted TSV plumbing shared by the importers and exporters.
//!
//! Fields never contain raw tabs or newlines: they are written as the
//! two-character escapes `\t` and `\n`, and a literal backslash as `\\`.

use std::collections::HashMap;

pub(crate) fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.peek() {
                Some('t') => {
                    out.push('\t');
                    chars.next();
                }
                Some('n') => {
                    out.push('\n');
                    chars.next();
                }
                Some('r') => {
                    out.push('\r');
                    chars.next();
                }
                Some('\\') => {
                    out.push('\\');
                    chars.next();
                }
                _ => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub(crate) fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

/// Column positions resolved from a header row.
pub(crate) struct Header {
    index: HashMap<String, usize>,
    pub(crate) width: usize,
}

impl Header {
    pub(crate) fn parse(line: &str) -> Self {
        let names: Vec<String> = line
            .trim_end_matches(['\r', '\n'])
            .split('\t')
            .map(|s| s.trim().to_ascii_lowercase())
            .collect();
        let width = names.len();
        let index = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        Header { index, width }
    }

    pub(crate) fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// First of `names` present in the header.
    pub(crate) fn first_of(&self, names: &[&str]) -> Option<usize> {
        names.iter().find_map(|n| self.get(n))
    }
}

pub(crate) fn split(line: &str) -> Vec<&str> {
    line.trim_end_matches(['\r', '\n']).split('\t').collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn escapes() {
        assert_eq!(unescape(r"a\tb\nc\\d\q"), "a\tb\nc\\d\\q");
        assert_eq!(escape("a\tb\nc\\d"), r"a\tb\nc\\d");
    }

    proptest! {
        #[test]
        fn escape_round_trips(s in "\\PC*|[\\t\\n\\\\a-z]*") {
            let escaped = escape(&s);
            prop_assert!(!escaped.contains('\t') && !escaped.contains('\n'));
            prop_assert_eq!(unescape(&escaped), s);
        }
    }
}
