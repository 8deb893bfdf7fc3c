//! Extraction of structured answers from free-form model output.
//!
//! Models asked for a bracketed list routinely wrap it in prose, append
//! end-of-sequence markers or switch to typographic quotes. The parser takes
//! the first bracketed list it finds and normalizes quoting; whether the reply
//! followed the requested format exactly is reported separately by
//! [`inspect_term_list`].

use thiserror::Error;

/// End-of-sequence markers some backends leak into the completion text.
pub const EOS_MARKERS: &[&str] = &[
    "</s>",
    "<|eot_id|>",
    "<|im_end|>",
    "<|end_of_text|>",
    "<|endoftext|>",
    "<eos>",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no bracketed list found in response")]
    NoList,
    #[error("bracketed list opened at byte {0} is never closed")]
    Unclosed(usize),
    #[error("no context name found in response")]
    NoContext,
}

/// Terms parsed from a reply plus whether the reply was exactly a JSON array
/// of strings (ignoring surrounding whitespace and trailing EOS markers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermListParse {
    pub terms: Vec<String>,
    pub well_formed: bool,
}

fn closing_quote(open: char) -> Option<char> {
    Some(match open {
        '"' => '"',
        '\'' => '\'',
        '\u{201c}' => '\u{201d}',
        '\u{201d}' => '\u{201d}',
        '\u{2018}' => '\u{2019}',
        '\u{300c}' => '\u{300d}',
        '\u{300e}' => '\u{300f}',
        '\u{ff02}' => '\u{ff02}',
        _ => return None,
    })
}

fn strip_eos(raw: &str) -> String {
    let mut s = raw.to_string();
    for marker in EOS_MARKERS {
        s = s.replace(marker, "");
    }
    s
}

fn strip_trailing_eos(raw: &str) -> &str {
    let mut s = raw.trim();
    loop {
        let before = s.len();
        for marker in EOS_MARKERS {
            if let Some(rest) = s.strip_suffix(marker) {
                s = rest.trim_end();
            }
        }
        if s.len() == before {
            return s;
        }
    }
}

fn push_item(items: &mut Vec<String>, current: &mut String) {
    let item = current.trim();
    if !item.is_empty() {
        items.push(item.to_string());
    }
    current.clear();
}

/// Extracts the first bracketed list from `raw`.
///
/// Accepts straight, curly and CJK corner quotes, unquoted items, trailing
/// prose and EOS markers. Items are trimmed and keep their order; an empty
/// list yields an empty vector.
pub fn parse_term_list(raw: &str) -> Result<Vec<String>, ParseError> {
    let cleaned = strip_eos(raw);
    let open = cleaned.find('[').ok_or(ParseError::NoList)?;
    let mut items = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut chars = cleaned[open + 1..].chars().peekable();
    while let Some(ch) = chars.next() {
        if let Some(close) = quote {
            if ch == '\\' && chars.peek().is_some_and(|&n| n == close || n == '\\') {
                current.push(chars.next().unwrap_or(close));
            } else if ch == close {
                quote = None;
            } else {
                current.push(ch);
            }
            continue;
        }
        match ch {
            ']' => {
                push_item(&mut items, &mut current);
                return Ok(items);
            }
            ',' | '\u{3001}' | '\u{ff0c}' => push_item(&mut items, &mut current),
            c if current.trim().is_empty() && closing_quote(c).is_some() => {
                current.clear();
                quote = closing_quote(c);
            }
            c => current.push(c),
        }
    }
    Err(ParseError::Unclosed(open))
}

/// Parses like [`parse_term_list`] and additionally checks format fidelity.
pub fn inspect_term_list(raw: &str) -> Result<TermListParse, ParseError> {
    let terms = parse_term_list(raw)?;
    let well_formed = serde_json::from_str::<Vec<String>>(strip_trailing_eos(raw)).is_ok();
    Ok(TermListParse { terms, well_formed })
}

/// Extracts a single context name from a classification reply.
///
/// Looks for the last `Context: <name>` line; failing that, accepts a reply
/// that is a single token or a one-item bracketed list.
pub fn parse_context_name(raw: &str) -> Result<String, ParseError> {
    let cleaned = strip_eos(raw);
    let clean_name = |s: &str| {
        s.trim()
            .trim_matches(|c: char| {
                c.is_whitespace() || closing_quote(c).is_some() || "[]`*.,;:".contains(c) || c == '\u{201d}' || c == '\u{2019}' || c == '\u{300d}'
            })
            .to_string()
    };
    let marker = cleaned.lines().rev().find_map(|line| {
        let trimmed = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        let (head, tail) = trimmed.split_once(':')?;
        head.trim().eq_ignore_ascii_case("context").then(|| clean_name(tail))
    });
    if let Some(name) = marker.filter(|n| !n.is_empty()) {
        return Ok(name);
    }
    if let Ok(items) = parse_term_list(&cleaned) {
        if items.len() == 1 {
            return Ok(items[0].clone());
        }
    }
    let single = clean_name(&cleaned);
    if !single.is_empty() && !single.contains(char::is_whitespace) {
        return Ok(single);
    }
    Err(ParseError::NoContext)
}

/// Canonical bracketed form of a term list (a JSON array of strings).
pub fn serialize_term_list<S: AsRef<str>>(terms: &[S]) -> String {
    let v: Vec<&str> = terms.iter().map(AsRef::as_ref).collect();
    serde_json::to_string(&v).unwrap_or_else(|_| "[]".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_json_list() {
        assert_eq!(parse_term_list(r#"["KPU"]"#).unwrap(), vec!["KPU"]);
        assert_eq!(parse_term_list("[]").unwrap(), Vec::<String>::new());
        assert_eq!(parse_term_list(" [ ] ").unwrap(), Vec::<String>::new());
    }

    #[test]
    fn trailing_prose_and_eos_marker() {
        let raw = "[\"SPA\"]\n\nPlease let me know if I can assist you further.</s>";
        assert_eq!(parse_term_list(raw).unwrap(), vec!["SPA"]);
        let parsed = inspect_term_list(raw).unwrap();
        assert!(!parsed.well_formed);
        let ok = inspect_term_list("[\"PIOF\"]</s>").unwrap();
        assert!(ok.well_formed);
        assert_eq!(ok.terms, vec!["PIOF"]);
    }

    #[test]
    fn curly_quotes() {
        let raw = "[\u{201c}SU\u{201d}, \u{201c}SF\u{201d}]</s>";
        assert_eq!(parse_term_list(raw).unwrap(), vec!["SU", "SF"]);
        assert!(!inspect_term_list(raw).unwrap().well_formed);
    }

    #[test]
    fn over_grouped_items_are_kept_verbatim() {
        let raw = r#"["10ns MBST", "40ROSN", "SPA", "UW"]"#;
        assert_eq!(
            parse_term_list(raw).unwrap(),
            vec!["10ns MBST", "40ROSN", "SPA", "UW"]
        );
    }

    #[test]
    fn unquoted_and_corner_quoted_items() {
        assert_eq!(parse_term_list("Terms: [PUC,  NAND ]").unwrap(), vec!["PUC", "NAND"]);
        assert_eq!(parse_term_list("[\u{300c}SPA\u{300d}]").unwrap(), vec!["SPA"]);
    }

    #[test]
    fn missing_or_unclosed_list() {
        assert_eq!(parse_term_list("no list here"), Err(ParseError::NoList));
        assert!(matches!(parse_term_list("oops [\"A\""), Err(ParseError::Unclosed(_))));
    }

    #[test]
    fn escaped_quotes_inside_items() {
        assert_eq!(parse_term_list(r#"["a \"b\" c"]"#).unwrap(), vec![r#"a "b" c"#]);
    }

    #[test]
    fn context_name_forms() {
        assert_eq!(
            parse_context_name("Reasoning: NAND chips are storage.\nContext: nand-design").unwrap(),
            "nand-design"
        );
        assert_eq!(parse_context_name("genetics").unwrap(), "genetics");
        assert_eq!(parse_context_name("\"genetics\".</s>").unwrap(), "genetics");
        assert_eq!(parse_context_name("[\"llm-systems\"]").unwrap(), "llm-systems");
        assert_eq!(
            parse_context_name("**Context:** `nand-design`").unwrap(),
            "nand-design"
        );
        assert_eq!(parse_context_name("I am not sure at all"), Err(ParseError::NoContext));
    }

    fn plain_item() -> impl Strategy<Value = String> {
        "[A-Za-z0-9][A-Za-z0-9 ./_-]{0,10}[A-Za-z0-9]|[A-Za-z0-9]"
    }

    proptest! {
        #[test]
        fn round_trip(items in proptest::collection::vec(plain_item(), 0..8)) {
            let raw = serialize_term_list(&items);
            prop_assert_eq!(parse_term_list(&raw).unwrap(), items);
        }

        #[test]
        fn surrounding_prose_is_ignored(
            items in proptest::collection::vec(plain_item(), 0..6),
            prose in "[A-Za-z0-9 .,!?:\n]{0,40}",
        ) {
            let raw = serialize_term_list(&items);
            let wrapped = format!("{prose}{raw}{prose}");
            prop_assert_eq!(parse_term_list(&wrapped).unwrap(), parse_term_list(&raw).unwrap());
        }
    }
}
