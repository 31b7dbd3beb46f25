//! Keyword store: reference image id -> pre-tokenized lowercase words.
//!
//! File format: UTF-8 lines `<image_id>\t<word>(,<word>)*`. Blank lines and
//! `#` lines are skipped.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRecord {
    pub id: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct KeywordStore {
    records: HashMap<String, Vec<String>>,
}

/// Keywords gathered for an ordered list of neighbor ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborWords<'a> {
    pub entries: Vec<(&'a str, &'a [String])>,
    /// Number of requested ids the store does not know.
    pub missing: usize,
}

/// Lowercases and dedups `words`, keeping first occurrences in order.
pub fn normalize_words<I, S>(words: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for w in words {
        let w = w.as_ref().to_lowercase();
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

impl KeywordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = KeywordRecord>) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    fn insert(&mut self, record: KeywordRecord) -> Result<()> {
        if self.records.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        let words = normalize_words(&record.words);
        self.records.insert(record.id, words);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fsutil::read_text(path)?;
        Self::parse(&text, &fsutil::display(path))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut store = Self::new();
        for (line_no, line) in fsutil::content_lines(text) {
            let (id, words) =
                parse_record_line(line).map_err(|msg| Error::parse(origin, line_no, msg))?;
            if store.records.contains_key(id) {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("duplicate id `{id}`"),
                ));
            }
            store.records.insert(id.to_string(), normalize_words(words));
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.records.get(id).map(Vec::as_slice)
    }

    /// Keywords for `ids` in the given order; unknown ids yield empty lists.
    pub fn words_for<'a, I>(&'a self, ids: I) -> NeighborWords<'a>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut missing = 0;
        let entries = ids
            .into_iter()
            .map(|id| match self.records.get(id) {
                Some(w) => (id, w.as_slice()),
                None => {
                    missing += 1;
                    (id, &[][..])
                }
            })
            .collect();
        NeighborWords { entries, missing }
    }

    /// Records sorted by id.
    pub fn records(&self) -> Vec<KeywordRecord> {
        let mut out: Vec<_> = self
            .records
            .iter()
            .map(|(id, words)| KeywordRecord {
                id: id.clone(),
                words: words.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

/// Splits `<id>\t<item>(,<item>)*` into its parts. Items must be nonempty.
pub(crate) fn parse_record_line(line: &str) -> Result<(&str, Vec<&str>), String> {
    let mut parts = line.split('\t');
    let id = parts.next().unwrap_or_default();
    let list = parts
        .next()
        .ok_or_else(|| "expected `<id>\\t<item>(,<item>)*`".to_string())?;
    if parts.next().is_some() {
        return Err("unexpected extra tab".into());
    }
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(format!("invalid id `{id}`"));
    }
    let items: Vec<&str> = list.split(',').collect();
    if items.iter().any(|w| w.is_empty()) {
        return Err("empty item in list".into());
    }
    Ok((id, items))
}

/// Formats a record line as accepted by [`KeywordStore::parse`].
pub fn format_record(id: &str, words: &[String]) -> String {
    format!("{id}\t{}", words.join(","))
}
