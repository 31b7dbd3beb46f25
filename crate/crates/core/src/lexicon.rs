//! WordNet-style lexicon: words with sense-ranked synsets and typed,
//! directed relations between synsets.
//!
//! File format (UTF-8, tab-separated, `#` comments and blank lines skipped):
//!
//! ```text
//! S   <synset_id>   <lemma>(,<lemma>)*
//! W   <word>        <synset_id>   <rank>
//! R   <hyper|hypo|mero|holo>   <from>   <to>
//! ```
//!
//! Lines may come in any order. Every relation is stored together with its
//! inverse (hypernym/hyponym, meronym/holonym).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationType {
    Hypernym,
    Hyponym,
    Meronym,
    Holonym,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::Hypernym,
        RelationType::Hyponym,
        RelationType::Meronym,
        RelationType::Holonym,
    ];

    pub fn inverse(self) -> Self {
        match self {
            RelationType::Hypernym => RelationType::Hyponym,
            RelationType::Hyponym => RelationType::Hypernym,
            RelationType::Meronym => RelationType::Holonym,
            RelationType::Holonym => RelationType::Meronym,
        }
    }

    /// Short tag used in lexicon files.
    pub fn tag(self) -> &'static str {
        match self {
            RelationType::Hypernym => "hyper",
            RelationType::Hyponym => "hypo",
            RelationType::Meronym => "mero",
            RelationType::Holonym => "holo",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Hypernym => "hypernym",
            RelationType::Hyponym => "hyponym",
            RelationType::Meronym => "meronym",
            RelationType::Holonym => "holonym",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "hyper" => Some(RelationType::Hypernym),
            "hypo" => Some(RelationType::Hyponym),
            "mero" => Some(RelationType::Meronym),
            "holo" => Some(RelationType::Holonym),
            _ => None,
        }
    }

    /// Accepts both the long name and the file tag.
    pub fn parse(s: &str) -> Option<Self> {
        Self::from_tag(s).or_else(|| Self::ALL.into_iter().find(|r| r.name() == s))
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of the four relation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RelationSet(u8);

impl RelationSet {
    pub const EMPTY: RelationSet = RelationSet(0);
    pub const ALL: RelationSet = RelationSet(0b1111);
    pub const HYPER_HYPO: RelationSet = RelationSet(0b0011);

    pub fn contains(self, r: RelationType) -> bool {
        self.0 & r.bit() != 0
    }

    pub fn with(self, r: RelationType) -> Self {
        RelationSet(self.0 | r.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = RelationType> {
        RelationType::ALL
            .into_iter()
            .filter(move |r| self.contains(*r))
    }

    /// Parses a comma-separated list of relation names or tags; `none` or an
    /// empty string gives the empty set, `all` gives every type.
    pub fn parse_list(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::EMPTY);
        }
        if s == "all" {
            return Ok(Self::ALL);
        }
        s.split(',').try_fold(Self::EMPTY, |set, item| {
            let item = item.trim();
            RelationType::parse(item)
                .map(|r| set.with(r))
                .ok_or_else(|| Error::InvalidParameter(format!("unknown relation `{item}`")))
        })
    }
}

impl FromIterator<RelationType> for RelationSet {
    fn from_iter<T: IntoIterator<Item = RelationType>>(iter: T) -> Self {
        iter.into_iter().fold(Self::EMPTY, |s, r| s.with(r))
    }
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<_> = self.iter().map(RelationType::name).collect();
        f.write_str(&names.join(","))
    }
}

/// Dense synset handle. Handles are assigned in ascending id order, so
/// comparing handles compares ids.
pub type SynsetIdx = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    ids: Vec<String>,
    by_id: HashMap<String, SynsetIdx>,
    lemmas: Vec<Vec<String>>,
    senses: HashMap<String, Vec<SynsetIdx>>,
    /// Outgoing edges per synset, sorted by (type, target).
    out: Vec<Vec<(RelationType, SynsetIdx)>>,
}

/// Accumulates declarations, then validates them all at once in [`LexiconBuilder::build`].
#[derive(Debug, Default, Clone)]
pub struct LexiconBuilder {
    origin: String,
    synsets: Vec<(usize, String, Vec<String>)>,
    senses: Vec<(usize, String, String, u32)>,
    relations: Vec<(usize, RelationType, String, String)>,
}

impl LexiconBuilder {
    pub fn new() -> Self {
        Self {
            origin: "<memory>".into(),
            ..Default::default()
        }
    }

    pub fn synset(&mut self, id: &str, lemmas: &[&str]) -> &mut Self {
        self.synsets.push((
            0,
            id.to_string(),
            lemmas.iter().map(|l| l.to_string()).collect(),
        ));
        self
    }

    pub fn sense(&mut self, word: &str, synset: &str, rank: u32) -> &mut Self {
        self.senses
            .push((0, word.to_lowercase(), synset.to_string(), rank));
        self
    }

    pub fn relation(&mut self, rel: RelationType, from: &str, to: &str) -> &mut Self {
        self.relations
            .push((0, rel, from.to_string(), to.to_string()));
        self
    }

    pub fn build(self) -> Result<Lexicon> {
        let origin = self.origin.as_str();
        let err = |line: usize, msg: String| -> Error {
            if line == 0 {
                Error::InvalidParameter(msg)
            } else {
                Error::parse(origin, line, msg)
            }
        };

        let mut sorted: Vec<_> = self.synsets.iter().collect();
        sorted.sort_by(|a, b| a.1.cmp(&b.1));
        let mut ids = Vec::with_capacity(sorted.len());
        let mut lemmas = Vec::with_capacity(sorted.len());
        let mut by_id = HashMap::with_capacity(sorted.len());
        for (line, id, lem) in sorted {
            if by_id.contains_key(id) {
                return Err(err(*line, format!("synset `{id}` declared twice")));
            }
            by_id.insert(id.clone(), ids.len() as SynsetIdx);
            ids.push(id.clone());
            lemmas.push(lem.clone());
        }
        let lookup = |line: usize, id: &str| -> Result<SynsetIdx> {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| err(line, format!("undeclared synset `{id}`")))
        };

        let mut ranked: HashMap<&str, Vec<(u32, SynsetIdx, usize)>> = HashMap::new();
        for (line, word, synset, rank) in &self.senses {
            let idx = lookup(*line, synset)?;
            let entry = ranked.entry(word.as_str()).or_default();
            if entry.iter().any(|(r, _, _)| r == rank) {
                return Err(err(
                    *line,
                    format!("duplicate rank {rank} for word `{word}`"),
                ));
            }
            if entry.iter().any(|(_, s, _)| *s == idx) {
                return Err(err(
                    *line,
                    format!("synset `{synset}` listed twice for word `{word}`"),
                ));
            }
            entry.push((*rank, idx, *line));
        }
        let mut senses = HashMap::with_capacity(ranked.len());
        for (word, mut list) in ranked {
            list.sort_unstable();
            for (expected, (rank, _, line)) in (1u32..).zip(&list) {
                if *rank != expected {
                    return Err(err(
                        *line,
                        format!(
                            "ranks for word `{word}` must be 1..{} without gaps",
                            list.len()
                        ),
                    ));
                }
            }
            senses.insert(
                word.to_string(),
                list.into_iter().map(|(_, s, _)| s).collect(),
            );
        }

        let mut edges: Vec<BTreeSet<(RelationType, SynsetIdx)>> = vec![BTreeSet::new(); ids.len()];
        for (line, rel, from, to) in &self.relations {
            let f = lookup(*line, from)?;
            let t = lookup(*line, to)?;
            edges[f as usize].insert((*rel, t));
            edges[t as usize].insert((rel.inverse(), f));
        }
        let out = edges.into_iter().map(|s| s.into_iter().collect()).collect();

        Ok(Lexicon {
            ids,
            by_id,
            lemmas,
            senses,
            out,
        })
    }
}

impl Lexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fsutil::read_text(path)?;
        Self::parse(&text, &fsutil::display(path))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut b = LexiconBuilder {
            origin: origin.to_string(),
            ..Default::default()
        };
        for (line_no, line) in fsutil::content_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::parse(origin, line_no, msg.to_string());
            match fields.as_slice() {
                ["S", id, lemmas] => {
                    check_token(id).map_err(|m| bad(&m))?;
                    let lemmas: Vec<String> = lemmas.split(',').map(str::to_string).collect();
                    if lemmas.iter().any(String::is_empty) {
                        return Err(bad("empty lemma"));
                    }
                    b.synsets.push((line_no, id.to_string(), lemmas));
                }
                ["W", word, synset, rank] => {
                    if word.is_empty() {
                        return Err(bad("empty word"));
                    }
                    let rank: u32 = rank
                        .parse()
                        .ok()
                        .filter(|&r| r >= 1)
                        .ok_or_else(|| bad(&format!("invalid rank `{rank}`")))?;
                    b.senses
                        .push((line_no, word.to_lowercase(), synset.to_string(), rank));
                }
                ["R", tag, from, to] => {
                    let rel = RelationType::from_tag(tag)
                        .ok_or_else(|| bad(&format!("unknown relation tag `{tag}`")))?;
                    b.relations
                        .push((line_no, rel, from.to_string(), to.to_string()));
                }
                [kind, ..] if matches!(*kind, "S" | "W" | "R") => {
                    return Err(bad(&format!("wrong field count for `{kind}` line")))
                }
                [kind, ..] => return Err(bad(&format!("unknown line kind `{kind}`"))),
                [] => unreachable!("content lines are nonempty"),
            }
        }
        b.build()
    }

    /// Serializes in the file format; parsing the output yields an equal lexicon.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, lemmas) in self.ids.iter().zip(&self.lemmas) {
            out.push_str(&format!("S\t{id}\t{}\n", lemmas.join(",")));
        }
        let mut words: Vec<_> = self.senses.keys().collect();
        words.sort();
        for w in words {
            for (rank, &s) in self.senses[w].iter().enumerate() {
                out.push_str(&format!("W\t{w}\t{}\t{}\n", self.ids[s as usize], rank + 1));
            }
        }
        for (from, edges) in self.out.iter().enumerate() {
            for &(rel, to) in edges {
                // Inverses are regenerated on load.
                if matches!(rel, RelationType::Hypernym | RelationType::Meronym) {
                    out.push_str(&format!(
                        "R\t{}\t{}\t{}\n",
                        rel.tag(),
                        self.ids[from],
                        self.ids[to as usize]
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn synset_count(&self) -> usize {
        self.ids.len()
    }

    pub fn word_count(&self) -> usize {
        self.senses.len()
    }

    pub fn index_of(&self, id: &str) -> Option<SynsetIdx> {
        self.by_id.get(id).copied()
    }

    pub fn id_of(&self, idx: SynsetIdx) -> &str {
        &self.ids[idx as usize]
    }

    pub fn lemmas(&self, idx: SynsetIdx) -> &[String] {
        &self.lemmas[idx as usize]
    }

    /// All senses of `word` in rank order (lookup is case-insensitive).
    pub fn sense_indices(&self, word: &str) -> &[SynsetIdx] {
        let found = match self.senses.get(word) {
            Some(s) => Some(s),
            None if word.chars().any(char::is_uppercase) => self.senses.get(&word.to_lowercase()),
            None => None,
        };
        found.map(Vec::as_slice).unwrap_or(&[])
    }

    /// The first `min(s, q)` senses of `word` by rank.
    pub fn senses(&self, word: &str, s: usize) -> Vec<&str> {
        let all = self.sense_indices(word);
        all[..s.min(all.len())]
            .iter()
            .map(|&i| self.id_of(i))
            .collect()
    }

    pub fn out_edges(&self, idx: SynsetIdx) -> &[(RelationType, SynsetIdx)] {
        &self.out[idx as usize]
    }

    /// Outgoing edges of `synset` whose type is in `types`, sorted by type then target id.
    pub fn related(&self, synset: &str, types: RelationSet) -> Result<Vec<(&str, RelationType)>> {
        let idx = self
            .index_of(synset)
            .ok_or_else(|| Error::UnknownSynset(synset.to_string()))?;
        Ok(self
            .out_edges(idx)
            .iter()
            .filter(|(r, _)| types.contains(*r))
            .map(|&(r, t)| (self.id_of(t), r))
            .collect())
    }

    /// Every stored edge as `(from, type, to)`.
    pub fn edges(&self) -> impl Iterator<Item = (SynsetIdx, RelationType, SynsetIdx)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(from, es)| es.iter().map(move |&(r, to)| (from as SynsetIdx, r, to)))
    }
}

fn check_token(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() || id.contains(char::is_whitespace) || id.contains(',') {
        Err(format!("invalid synset id `{id}`"))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undeclared_synset_reports_line() {
        let text = "S\tdog.n.1\tdog\nR\thyper\tdog.n.1\tcanine.n.1\n";
        match Lexicon::parse(text, "lex").unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("canine.n.1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_closure() {
        let lex = Lexicon::parse("S\ta\tx\nS\tb\ty\nR\thyper\ta\tb\n", "t").unwrap();
        assert_eq!(
            lex.related("b", RelationSet::ALL).unwrap(),
            [("a", RelationType::Hyponym)]
        );
        assert_eq!(
            lex.related("a", RelationSet::ALL).unwrap(),
            [("b", RelationType::Hypernym)]
        );
    }

    #[test]
    fn senses_in_rank_order() {
        let text =
            "W\tbank\tbank.n.2\t2\nS\tbank.n.1\tbank\nW\tBank\tbank.n.1\t1\nS\tbank.n.2\tbank\n";
        let lex = Lexicon::parse(text, "t").unwrap();
        assert_eq!(lex.senses("bank", 7), ["bank.n.1", "bank.n.2"]);
        assert_eq!(lex.senses("BANK", 1), ["bank.n.1"]);
        assert!(lex.senses("river", 7).is_empty());
    }

    #[test]
    fn senses_truncate_at_s() {
        let mut b = LexiconBuilder::new();
        for r in 1..=10 {
            let id = format!("w.n.{r:02}");
            b.synset(&id, &["w"]).sense("w", &id, r);
        }
        let lex = b.build().unwrap();
        let seven = lex.senses("w", 7);
        assert_eq!(seven.len(), 7);
        assert_eq!(seven[0], "w.n.01");
        assert_eq!(seven[6], "w.n.07");
    }

    #[test]
    fn rank_errors() {
        let dup = "S\ta\tx\nS\tb\tx\nW\tx\ta\t1\nW\tx\tb\t1\n";
        assert!(matches!(
            Lexicon::parse(dup, "t"),
            Err(Error::Parse { line: 4, .. })
        ));
        let gap = "S\ta\tx\nW\tx\ta\t2\n";
        assert!(Lexicon::parse(gap, "t").is_err());
    }

    #[test]
    fn unknown_tag_and_kind() {
        let e = Lexicon::parse("S\ta\tx\nR\tsyn\ta\ta\n", "t").unwrap_err();
        assert!(e.to_string().contains("syn"), "{e}");
        assert!(Lexicon::parse("X\ta\n", "t").is_err());
        assert!(Lexicon::parse("S\ta\n", "t").is_err());
    }

    #[test]
    fn related_filters_and_sorts() {
        let text = "S\tdog\tdog\nS\tcanine\tcanine\nS\tpuppy\tpuppy\nS\ttail\ttail\nS\tpack\tpack\n\
                    R\thyper\tdog\tcanine\nR\thyper\tpuppy\tdog\nR\tmero\tdog\ttail\nR\tholo\tdog\tpack\n";
        let lex = Lexicon::parse(text, "t").unwrap();
        assert!(lex.related("dog", RelationSet::EMPTY).unwrap().is_empty());
        assert_eq!(
            lex.related("dog", RelationSet::EMPTY.with(RelationType::Hypernym))
                .unwrap(),
            [("canine", RelationType::Hypernym)]
        );
        assert_eq!(
            lex.related("dog", RelationSet::ALL).unwrap(),
            [
                ("canine", RelationType::Hypernym),
                ("puppy", RelationType::Hyponym),
                ("tail", RelationType::Meronym),
                ("pack", RelationType::Holonym),
            ]
        );
        assert!(matches!(
            lex.related("cat", RelationSet::ALL),
            Err(Error::UnknownSynset(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let text = "S\ta\tx,y\nS\tb\tz\nW\tx\ta\t1\nW\tx\tb\t2\nR\thyper\ta\tb\nR\tholo\ta\tb\n";
        let lex = Lexicon::parse(text, "t").unwrap();
        let again = Lexicon::parse(&lex.to_text(), "t").unwrap();
        assert_eq!(lex, again);
    }

    #[test]
    fn relation_set_parsing() {
        assert_eq!(RelationSet::parse_list("none").unwrap(), RelationSet::EMPTY);
        assert_eq!(RelationSet::parse_list("all").unwrap(), RelationSet::ALL);
        assert_eq!(
            RelationSet::parse_list("hypernym, hypo").unwrap(),
            RelationSet::HYPER_HYPO
        );
        assert!(RelationSet::parse_list("antonym").is_err());
        assert_eq!(
            RelationSet::ALL.to_string(),
            "hypernym,hyponym,meronym,holonym"
        );
    }
}
