use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.+?)\s*$").expect("static regex"))
}

fn clean(item: &str) -> String {
    let trimmed = item.trim().trim_matches(|c| c == '*' || c == '"' || c == '`').trim();
    trimmed.trim_end_matches(['.', ',', ';']).trim().to_string()
}

/// Keeps the first spelling of each case-insensitive name.
pub fn dedup_preserving_case(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .collect()
}

fn json_array(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Vec<String>>(&text[start..=end]).ok()
}

/// Extracts a list of names from a model response.
///
/// A JSON array of strings wins; otherwise numbered (`1.`/`1)`) or bulleted
/// (`-`, `*`, `•`) lines are collected.
pub fn parse_list_response(text: &str) -> Result<Vec<String>> {
    let items: Vec<String> = match json_array(text) {
        Some(arr) => arr.iter().map(|s| clean(s)).collect(),
        None => text
            .lines()
            .filter_map(|line| list_item().captures(line).map(|c| clean(&c[1])))
            .collect(),
    };
    let items = dedup_preserving_case(items);
    if items.is_empty() {
        return Err(Error::Parse {
            message: "response holds neither a JSON array of strings nor a numbered/bulleted list".into(),
            raw: text.to_string(),
        });
    }
    Ok(items)
}

pub fn parse_domain_response(text: &str) -> Result<Vec<String>> {
    parse_list_response(text)
}
