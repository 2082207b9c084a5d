//! Positional keywords in referring expressions and the mosaic cells they
//! allow.

use std::collections::BTreeSet;

/// Keywords that constrain placement, with the 2x2 cells (row-major:
/// 0 upper-left, 1 upper-right, 2 lower-left, 3 lower-right) they allow.
pub const CONSTRAINT_TABLE: &[(&str, &[usize])] = &[
    ("top", &[0, 1]),
    ("high", &[0, 1]),
    ("above", &[0, 1]),
    ("left", &[0, 2]),
    ("right", &[1, 3]),
    ("bottom", &[2, 3]),
    ("low", &[2, 3]),
    ("below", &[2, 3]),
];

/// Positional words with no placement rule. Detected and reported only.
pub const UNCONSTRAINED_KEYWORDS: &[&str] = &["o'clock", "corner"];

pub fn allowed_cells(keyword: &str) -> Option<&'static [usize]> {
    CONSTRAINT_TABLE
        .iter()
        .find(|(k, _)| *k == keyword)
        .map(|(_, cells)| *cells)
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

/// Positional keywords present in `expression`, matched case-insensitively
/// against whitespace tokens with surrounding ASCII punctuation trimmed.
pub fn detect_positional_keywords(expression: &str) -> BTreeSet<&'static str> {
    let mut found = BTreeSet::new();
    for token in expression.split_whitespace() {
        let token = normalize_token(token);
        if let Some((k, _)) = CONSTRAINT_TABLE.iter().find(|(k, _)| *k == token) {
            found.insert(*k);
        } else if let Some(k) = UNCONSTRAINED_KEYWORDS.iter().find(|k| **k == token) {
            found.insert(*k);
        }
    }
    found
}

/// Outcome of intersecting the allowed-cell sets of every matched keyword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellConstraint {
    pub matched: Vec<&'static str>,
    /// `None` when no constraining keyword matched.
    pub allowed: Option<Vec<usize>>,
}

impl CellConstraint {
    pub fn from_expression(expression: &str) -> Self {
        let found = detect_positional_keywords(expression);
        let mut allowed: Option<BTreeSet<usize>> = None;
        for k in &found {
            if let Some(cells) = allowed_cells(k) {
                let cells: BTreeSet<usize> = cells.iter().copied().collect();
                allowed = Some(match allowed {
                    None => cells,
                    Some(prev) => prev.intersection(&cells).copied().collect(),
                });
            }
        }
        Self {
            matched: found.into_iter().collect(),
            allowed: allowed.map(|s| s.into_iter().collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_single_keyword() {
        let k = detect_positional_keywords("second horse from the left");
        assert_eq!(k.into_iter().collect::<Vec<_>>(), vec!["left"]);
        assert!(detect_positional_keywords("a dog").is_empty());
    }

    #[test]
    fn case_and_punctuation() {
        let k = detect_positional_keywords("Man on the RIGHT, wearing a hat at two o'clock.");
        assert_eq!(k.into_iter().collect::<Vec<_>>(), vec!["o'clock", "right"]);
        // substrings do not count
        assert!(detect_positional_keywords("bright lefty topping").is_empty());
    }

    #[test]
    fn top_left_intersects_to_upper_left() {
        let c = CellConstraint::from_expression("top left cup");
        assert_eq!(c.allowed, Some(vec![0]));
    }

    #[test]
    fn contradictory_keywords_give_empty_set() {
        let c = CellConstraint::from_expression("left of the right one");
        assert_eq!(c.allowed, Some(vec![]));
    }

    #[test]
    fn corner_alone_does_not_constrain() {
        let c = CellConstraint::from_expression("the corner table");
        assert_eq!(c.matched, vec!["corner"]);
        assert_eq!(c.allowed, None);
    }
}
