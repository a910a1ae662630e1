//! Extraction of ranked labels from model text.

use std::collections::HashMap;

use natpred_core::taxonomy::LabelSpace;

pub const MAX_LABELS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLabels {
    /// Canonical labels, deduplicated, at most [`MAX_LABELS`].
    pub labels: Vec<String>,
    /// No well-formed JSON array of strings was found.
    pub parse_error: bool,
}

/// Case-insensitive lookup from model output to canonical labels.
#[derive(Debug, Clone)]
pub struct LabelMatcher {
    by_folded: HashMap<String, String>,
}

impl LabelMatcher {
    pub fn new(space: &LabelSpace) -> Self {
        Self::from_labels(space.labels().iter().map(String::as_str))
    }

    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            by_folded: labels
                .into_iter()
                .map(|l| (l.trim().to_lowercase(), l.to_string()))
                .collect(),
        }
    }

    pub fn canonical(&self, raw: &str) -> Option<&str> {
        self.by_folded
            .get(&raw.trim().to_lowercase())
            .map(String::as_str)
    }
}

/// The last well-formed JSON array of strings in `text`, by start position.
pub fn last_string_array(text: &str) -> Option<Vec<String>> {
    text.char_indices()
        .rev()
        .filter(|(_, c)| *c == '[')
        .find_map(|(i, _)| {
            let mut stream =
                serde_json::Deserializer::from_str(&text[i..]).into_iter::<Vec<String>>();
            stream.next().and_then(Result::ok)
        })
}

/// Matches the last JSON array in `text` against `matcher`, dropping
/// unknown labels and repeats, keeping at most `limit`.
pub fn parse_with(text: &str, matcher: &LabelMatcher, limit: usize) -> ParsedLabels {
    let Some(raw) = last_string_array(text) else {
        return ParsedLabels {
            labels: Vec::new(),
            parse_error: true,
        };
    };
    let mut labels: Vec<String> = Vec::new();
    for item in &raw {
        if let Some(label) = matcher.canonical(item) {
            if !labels.iter().any(|l| l == label) {
                labels.push(label.to_string());
            }
        }
        if labels.len() == limit {
            break;
        }
    }
    ParsedLabels {
        labels,
        parse_error: false,
    }
}

pub fn parse_response(text: &str, space: &LabelSpace) -> ParsedLabels {
    parse_with(text, &LabelMatcher::new(space), MAX_LABELS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use natpred_core::taxonomy::{Granularity, Taxonomy};

    fn space() -> LabelSpace {
        Taxonomy::shipped()
            .label_space(Granularity::Nationality)
            .clone()
    }

    #[test]
    fn case_variants_collapse() {
        let p = parse_response(r#"["Japanese","japanese","JAPANESE"]"#, &space());
        assert_eq!(p.labels, ["Japanese"]);
        assert!(!p.parse_error);
    }

    #[test]
    fn array_inside_prose() {
        let p = parse_response(
            "I think it is [\"Romanian\", \"Moldovan\"] given the suffix.",
            &space(),
        );
        assert_eq!(p.labels, ["Romanian", "Moldovan"]);
    }

    #[test]
    fn object_is_a_parse_error() {
        let p = parse_response("{}", &space());
        assert!(p.labels.is_empty());
        assert!(p.parse_error);
    }

    #[test]
    fn last_array_wins() {
        let text = r#"first guess ["Chinese"], reconsidered: ["Korean", "Japanese"]"#;
        assert_eq!(
            parse_response(text, &space()).labels,
            ["Korean", "Japanese"]
        );
        let trailing_junk = r#"["Korean"] and then [unclosed"#;
        assert_eq!(parse_response(trailing_junk, &space()).labels, ["Korean"]);
    }

    #[test]
    fn unknown_labels_dropped_and_truncated() {
        let text =
            r#"["Atlantis", " thai ", "Irish", "Welsh", "English", "British", "German", "French"]"#;
        let p = parse_response(text, &space());
        assert_eq!(p.labels, ["Thai", "Irish", "Welsh", "English", "British"]);
        let none = parse_response(r#"["Atlantis"]"#, &space());
        assert!(none.labels.is_empty() && !none.parse_error);
    }
}
