use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A natural-language concept whose answer is observed about an input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: usize,
    pub text: String,
    pub attribute: String,
    pub value: String,
    pub origin_class: String,
}

/// Ordered set of queries. Ids always equal list positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub name: String,
    pub queries: Vec<Query>,
}

/// Prompt sent to the language model for one class. An empty `object_type`
/// yields the generic form without a dangling space.
pub fn build_prompt(object_type: &str, class_name: &str) -> String {
    let object_type = object_type.trim();
    let category = if object_type.is_empty() {
        "image category".to_string()
    } else {
        format!("{object_type} image category")
    };
    format!(
        "List the useful visual attributes (and their values) of the {category} '{class_name}'."
    )
}

/// Lowercase, collapse internal whitespace and strip trailing punctuation.
pub fn normalize_text(raw: &str) -> String {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end()
        .to_string()
}

// "- Size: medium", "3. Size: medium", "* Size: medium"
fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

/// Parse `attribute: v1, v2, ...` lines into queries with text
/// `"<value> <attribute>"`. Lines without a colon are skipped and repeated
/// normalized texts keep their first occurrence.
pub fn parse_attribute_list(raw: &str, origin_class: &str) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let line = strip_list_marker(line);
        let Some((attr, values)) = line.split_once(':') else {
            continue;
        };
        let attribute = normalize_text(attr);
        if attribute.is_empty() {
            continue;
        }
        for value in values.split([',', ';']) {
            let value = normalize_text(value);
            if value.is_empty() {
                continue;
            }
            let text = normalize_text(&format!("{value} {attribute}"));
            if !seen.insert(text.clone()) {
                continue;
            }
            out.push(Query {
                id: out.len(),
                text,
                attribute: attribute.clone(),
                value,
                origin_class: origin_class.to_string(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyOutput);
    }
    Ok(out)
}

/// Render queries back into the `attribute: value` line format.
pub fn render_attribute_list(queries: &[Query]) -> String {
    let mut s = String::new();
    for q in queries {
        s.push_str(&q.attribute);
        s.push_str(": ");
        s.push_str(&q.value);
        s.push('\n');
    }
    s
}

impl QuerySet {
    pub fn new(name: impl Into<String>, queries: Vec<Query>) -> Result<Self> {
        let set = QuerySet {
            name: name.into(),
            queries,
        };
        set.validate()?;
        Ok(set)
    }

    /// Union of per-class query lists in order, dropping repeated texts and
    /// renumbering ids.
    pub fn union(name: impl Into<String>, lists: impl IntoIterator<Item = Vec<Query>>) -> Self {
        let mut seen = HashSet::new();
        let mut queries = Vec::new();
        for q in lists.into_iter().flatten() {
            if seen.insert(normalize_text(&q.text)) {
                queries.push(Query {
                    id: queries.len(),
                    ..q
                });
            }
        }
        QuerySet {
            name: name.into(),
            queries,
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.text.as_str()).collect()
    }

    /// Texts to feed the text encoder. `prefix` may contain `{concept}`;
    /// otherwise it is prepended verbatim. Empty prefix returns raw texts.
    pub fn embedding_texts(&self, prefix: &str) -> Vec<String> {
        self.queries
            .iter()
            .map(|q| {
                if prefix.contains("{concept}") {
                    prefix.replace("{concept}", &q.text)
                } else {
                    format!("{prefix}{}", q.text)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (pos, q) in self.queries.iter().enumerate() {
            if q.id != pos {
                return Err(Error::Format(format!(
                    "query id {} at position {pos}",
                    q.id
                )));
            }
            if q.text.trim().is_empty() {
                return Err(Error::Format(format!("query {pos} has empty text")));
            }
            if !seen.insert(normalize_text(&q.text)) {
                return Err(Error::Format(format!("duplicate query text {:?}", q.text)));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::Format("refusing to write an empty query set".into()));
        }
        self.validate()?;
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let set: QuerySet =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))?;
        if set.queries.is_empty() {
            return Err(Error::Format("query set has no queries".into()));
        }
        set.validate()?;
        Ok(set)
    }
}
