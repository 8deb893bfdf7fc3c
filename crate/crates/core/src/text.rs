//! Small text helpers shared by the dictionary, the glossary builder and the
//! evaluation harness.

/// Canonical matching key for a jargon term: case-folded, trimmed, with runs
/// of internal whitespace collapsed to a single space.
pub fn normalize_term(term: &str) -> String {
    let mut out = String::with_capacity(term.len());
    for word in term.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Deduplicates terms by their normalized key, keeping the first spelling and
/// dropping terms that normalize to nothing.
pub fn dedup_terms<S: AsRef<str>>(terms: &[S]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for term in terms {
        let key = normalize_term(term.as_ref());
        if key.is_empty() {
            continue;
        }
        if seen.insert(key) {
            out.push(term.as_ref().trim().to_string());
        }
    }
    out
}

/// Lowercased alphanumeric word tokens.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}
