//! String normalization shared by the metrics and the pipeline.

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// [`normalize_label`] after replacing punctuation with spaces. Hyphens and
/// apostrophes inside words are kept ("night-stand", "o'clock").
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .enumerate()
        .map(|(i, c)| {
            let inner = matches!(c, '-' | '\'')
                && i > 0
                && s[..s.char_indices().nth(i).map_or(s.len(), |(b, _)| b)]
                    .chars()
                    .last()
                    .is_some_and(char::is_alphanumeric);
            if c.is_alphanumeric() || c.is_whitespace() || inner {
                c
            } else {
                ' '
            }
        })
        .collect();
    normalize_label(&cleaned)
}

/// Lowercase alphanumeric tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether `needle`'s tokens occur contiguously in `haystack`'s tokens.
pub fn contains_tokens(haystack: &str, needle: &str) -> bool {
    let hay = tokens(haystack);
    let pin = tokens(needle);
    !pin.is_empty() && hay.windows(pin.len()).any(|w| w == pin.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(normalize_label("  Coffee   Table "), "coffee table");
        assert_eq!(normalize_label(""), "");
    }

    #[test]
    fn answers() {
        assert_eq!(normalize_answer("Table."), "table");
        assert_eq!(normalize_answer(" \"Kitchen counter\"! "), "kitchen counter");
        assert_eq!(normalize_answer("night-stand"), "night-stand");
        assert_eq!(normalize_answer("- floor -"), "floor");
    }

    #[test]
    fn token_containment() {
        assert!(contains_tokens("wooden table", "table"));
        assert!(contains_tokens("a coffee table top", "coffee table"));
        assert!(!contains_tokens("tablecloth", "table"));
        assert!(!contains_tokens("table coffee", "coffee table"));
        assert!(!contains_tokens("table", ""));
    }
}
