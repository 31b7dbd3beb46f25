//! Per-query annotation pipeline and its file formats.
//!
//! * concepts: `C\t<name>\t<synset_id>(,<synset_id>)*`
//! * candidate lists and ground truth: `<image_id>\t<name>(,<name>)*`
//! * output: `<image_id>\t<name>:<score>(,<name>:<score>)*`, six decimals,
//!   descending score, one line per query in ascending id order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::analysis::{self, AnalysisConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::index::{Index, NeighborList};
use crate::keywords::{parse_record_line, KeywordStore};
use crate::lexicon::{Lexicon, SynsetIdx};

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDef {
    pub name: String,
    pub synsets: Vec<SynsetIdx>,
}

/// The concept vocabulary, validated against a lexicon.
#[derive(Debug, Clone, Default)]
pub struct ConceptSet {
    defs: Vec<ConceptDef>,
    by_name: HashMap<String, usize>,
}

fn check_name(name: &str) -> std::result::Result<(), String> {
    if name.is_empty()
        || name.contains(|c: char| c.is_whitespace() || c == ',' || c == ':')
        || name.chars().any(char::is_uppercase)
    {
        Err(format!("invalid concept name `{name}`"))
    } else {
        Ok(())
    }
}

impl ConceptSet {
    pub fn new(defs: Vec<(String, Vec<String>)>, lexicon: &Lexicon) -> Result<Self> {
        let mut set = ConceptSet::default();
        for (name, synsets) in defs {
            set.push(name, &synsets, lexicon)
                .map_err(Error::InvalidParameter)?;
        }
        Ok(set)
    }

    fn push(
        &mut self,
        name: String,
        synsets: &[String],
        lexicon: &Lexicon,
    ) -> std::result::Result<(), String> {
        check_name(&name)?;
        if self.by_name.contains_key(&name) {
            return Err(format!("concept `{name}` defined twice"));
        }
        if synsets.is_empty() {
            return Err(format!("concept `{name}` links no synsets"));
        }
        let mut idx = Vec::with_capacity(synsets.len());
        for s in synsets {
            let i = lexicon
                .index_of(s)
                .ok_or_else(|| format!("concept `{name}` links unknown synset `{s}`"))?;
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        self.by_name.insert(name.clone(), self.defs.len());
        self.defs.push(ConceptDef { name, synsets: idx });
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<Self> {
        let path = path.as_ref();
        let text = fsutil::read_text(path)?;
        Self::parse(&text, &fsutil::display(path), lexicon)
    }

    pub fn parse(text: &str, origin: &str, lexicon: &Lexicon) -> Result<Self> {
        let mut set = ConceptSet::default();
        for (line_no, line) in fsutil::content_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            let ["C", name, synsets] = fields.as_slice() else {
                return Err(Error::parse(
                    origin,
                    line_no,
                    "expected `C\\t<name>\\t<synset_id>(,<synset_id>)*`",
                ));
            };
            let synsets: Vec<String> = synsets.split(',').map(str::to_string).collect();
            set.push(name.to_string(), &synsets, lexicon)
                .map_err(|m| Error::parse(origin, line_no, m))?;
        }
        Ok(set)
    }

    pub fn to_text(&self, lexicon: &Lexicon) -> String {
        let mut out = String::new();
        for d in &self.defs {
            let ids: Vec<&str> = d.synsets.iter().map(|&s| lexicon.id_of(s)).collect();
            let _ = writeln!(out, "C\t{}\t{}", d.name, ids.join(","));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&ConceptDef> {
        self.by_name.get(name).map(|&i| &self.defs[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptDef> {
        self.defs.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }
}

/// Image id -> concept names. Used for candidate lists and ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptLists {
    pub lists: BTreeMap<String, Vec<String>>,
}

impl ConceptLists {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fsutil::read_text(path)?;
        Self::parse(&text, &fsutil::display(path))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lists = BTreeMap::new();
        for (line_no, line) in fsutil::content_lines(text) {
            let (id, names) =
                parse_record_line(line).map_err(|m| Error::parse(origin, line_no, m))?;
            let mut uniq: Vec<String> = Vec::with_capacity(names.len());
            for n in names {
                check_name(n).map_err(|m| Error::parse(origin, line_no, m))?;
                if !uniq.iter().any(|u| u == n) {
                    uniq.push(n.to_string());
                }
            }
            if lists.insert(id.to_string(), uniq).is_some() {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("duplicate id `{id}`"),
                ));
            }
        }
        Ok(Self { lists })
    }

    /// Fails on the first name that `concepts` does not define.
    pub fn check_against(&self, concepts: &ConceptSet) -> Result<()> {
        for names in self.lists.values() {
            if let Some(bad) = names.iter().find(|n| !concepts.contains(n)) {
                return Err(Error::UnknownConcept(bad.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.lists.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, names) in &self.lists {
            let _ = writeln!(out, "{id}\t{}", names.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub feature: Vec<f64>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: String,
    /// Concept names by descending score, ties by ascending name.
    pub ranked: Vec<(String, f64)>,
    /// Set when no neighbor keyword matched the lexicon.
    pub no_evidence: bool,
    /// Neighbors without a keyword record.
    pub missing_keywords: usize,
}

/// Concept score = max score of its linked synsets (0 when none is in the graph).
/// Returns the whole candidate list, descending score, ties by name.
pub fn score_concepts(
    ranked_synsets: &[(SynsetIdx, f64)],
    concepts: &ConceptSet,
    candidates: &[String],
) -> Result<Vec<(String, f64)>> {
    let score_of: HashMap<SynsetIdx, f64> = ranked_synsets.iter().copied().collect();
    let mut seen = HashSet::with_capacity(candidates.len());
    let mut out = Vec::with_capacity(candidates.len());
    for name in candidates {
        let def = concepts
            .get(name)
            .ok_or_else(|| Error::UnknownConcept(name.clone()))?;
        if !seen.insert(name.as_str()) {
            continue;
        }
        let score = def
            .synsets
            .iter()
            .filter_map(|s| score_of.get(s).copied())
            .fold(0.0f64, f64::max);
        out.push((name.clone(), score));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// First `m` entries of an already ranked list; zero scores stay eligible.
pub fn select_top(mut scored: Vec<(String, f64)>, m: usize) -> Vec<(String, f64)> {
    scored.truncate(m);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorConfig {
    pub k: usize,
    pub m: usize,
    pub analysis: AnalysisConfig,
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        self.analysis.validate()
    }
}

/// A reference collection: its vectors and their keywords.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub index: Index,
    pub keywords: KeywordStore,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub feature_load: Duration,
    pub search: Duration,
    pub keyword_fetch: Duration,
    pub analysis: Duration,
}

impl PhaseTimings {
    pub const PHASES: [&'static str; 4] = ["feature load", "search", "keyword fetch", "analysis"];

    pub fn as_array(&self) -> [Duration; 4] {
        [
            self.feature_load,
            self.search,
            self.keyword_fetch,
            self.analysis,
        ]
    }

    fn add(&mut self, other: &PhaseTimings) {
        self.feature_load += other.feature_load;
        self.search += other.search;
        self.keyword_fetch += other.keyword_fetch;
        self.analysis += other.analysis;
    }
}

/// Neighbor from one of several datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedNeighbor {
    pub dataset: usize,
    pub id: String,
    pub distance: f64,
}

/// Merges per-dataset neighbor lists by distance (then id, then dataset) and keeps `k`.
pub fn merge_neighbors(lists: Vec<NeighborList>, k: usize) -> Vec<MergedNeighbor> {
    let mut all: Vec<MergedNeighbor> = lists
        .into_iter()
        .enumerate()
        .flat_map(|(dataset, nl)| {
            nl.entries.into_iter().map(move |n| MergedNeighbor {
                dataset,
                id: n.id,
                distance: n.distance,
            })
        })
        .collect();
    all.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.id.cmp(&b.id))
            .then(a.dataset.cmp(&b.dataset))
    });
    all.truncate(k);
    all
}

/// Everything needed to annotate queries. Read-only; share freely across threads.
#[derive(Debug, Clone)]
pub struct Engine {
    pub datasets: Vec<Dataset>,
    pub lexicon: Lexicon,
    pub concepts: ConceptSet,
    pub config: AnnotatorConfig,
}

impl Engine {
    pub fn new(
        datasets: Vec<Dataset>,
        lexicon: Lexicon,
        concepts: ConceptSet,
        config: AnnotatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        if datasets.is_empty() {
            return Err(Error::Empty("engine needs at least one dataset"));
        }
        let dim = datasets[0].index.dim();
        if let Some(d) = datasets.iter().find(|d| d.index.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: d.index.dim(),
            });
        }
        Ok(Self {
            datasets,
            lexicon,
            concepts,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.datasets[0].index.dim()
    }

    pub fn search(&self, feature: &[f64]) -> Result<Vec<MergedNeighbor>> {
        let k = self.config.k;
        let lists = self
            .datasets
            .iter()
            .map(|d| d.index.knn(feature, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(merge_neighbors(lists, k))
    }

    pub fn annotate(&self, query: &Query) -> Result<Annotation> {
        self.annotate_timed(query).map(|(a, _)| a)
    }

    pub fn annotate_timed(&self, query: &Query) -> Result<(Annotation, PhaseTimings)> {
        if query.candidates.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "query `{}` has an empty candidate list",
                query.id
            )));
        }
        if let Some(bad) = query.candidates.iter().find(|c| !self.concepts.contains(c)) {
            return Err(Error::UnknownConcept(bad.clone()));
        }
        let mut t = PhaseTimings::default();

        let start = Instant::now();
        let neighbors = self.search(&query.feature)?;
        t.search = start.elapsed();

        let start = Instant::now();
        let mut missing = 0;
        let words: Vec<(&str, &[String])> = neighbors
            .iter()
            .map(|n| {
                let store = &self.datasets[n.dataset].keywords;
                let found = store.words_for([n.id.as_str()]);
                missing += found.missing;
                (n.id.as_str(), found.entries[0].1)
            })
            .collect();
        t.keyword_fetch = start.elapsed();

        let start = Instant::now();
        let analysis = analysis::analyze(&words, &self.lexicon, &self.config.analysis)?;
        let scored = score_concepts(&analysis.ranked, &self.concepts, &query.candidates)?;
        let ranked = select_top(scored, self.config.m);
        t.analysis = start.elapsed();

        Ok((
            Annotation {
                id: query.id.clone(),
                ranked,
                no_evidence: analysis.graph.is_none(),
                missing_keywords: missing,
            },
            t,
        ))
    }

    /// Annotates queries in parallel; results come back sorted by query id.
    pub fn annotate_batch(&self, queries: &[Query]) -> Result<BatchResult> {
        let mut results = queries
            .par_iter()
            .map(|q| self.annotate_timed(q))
            .collect::<Result<Vec<_>>>()?;
        results.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let mut total = PhaseTimings::default();
        let mut per_query = Vec::with_capacity(results.len());
        let mut annotations = Vec::with_capacity(results.len());
        for (a, t) in results {
            total.add(&t);
            per_query.push(t);
            annotations.push(a);
        }
        Ok(BatchResult {
            annotations,
            per_query,
            total,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub annotations: Vec<Annotation>,
    pub per_query: Vec<PhaseTimings>,
    pub total: PhaseTimings,
}

/// Pairs query vectors with their candidate lists. Every vector needs a list.
pub fn assemble_queries(
    features: Vec<crate::fvec::FeatureVector>,
    candidates: &ConceptLists,
) -> Result<Vec<Query>> {
    let mut seen = HashSet::with_capacity(features.len());
    features
        .into_iter()
        .map(|f| {
            if !seen.insert(f.id.clone()) {
                return Err(Error::DuplicateId(f.id));
            }
            let list = candidates.get(&f.id).ok_or_else(|| {
                Error::InvalidParameter(format!("query `{}` has no candidate list", f.id))
            })?;
            Ok(Query {
                feature: f.values.iter().map(|&x| x as f64).collect(),
                candidates: list.to_vec(),
                id: f.id,
            })
        })
        .collect()
}

pub fn format_annotation_line(a: &Annotation) -> String {
    let mut line = a.id.clone();
    line.push('\t');
    for (i, (name, score)) in a.ranked.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{name}:{score:.6}");
    }
    line
}

/// Output file contents: one line per annotation, sorted by id.
pub fn format_annotations(annotations: &[Annotation]) -> String {
    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    for a in sorted {
        out.push_str(&format_annotation_line(a));
        out.push('\n');
    }
    out
}

pub fn write_annotations(path: impl AsRef<Path>, annotations: &[Annotation]) -> Result<()> {
    fsutil::write_atomic(path.as_ref(), format_annotations(annotations).as_bytes())
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fsutil::read_text(path)?;
    parse_annotations(&text, &fsutil::display(path))
}

pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (line_no, line) in fsutil::content_lines(text) {
        let bad = |m: String| Error::parse(origin, line_no, m);
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `<image_id>\\t<name>:<score>,...`".into()))?;
        if id.is_empty() || rest.contains('\t') {
            return Err(bad("malformed annotation line".into()));
        }
        if !ids.insert(id.to_string()) {
            return Err(bad(format!("duplicate id `{id}`")));
        }
        let mut ranked = Vec::new();
        if !rest.is_empty() {
            for item in rest.split(',') {
                let (name, score) = item
                    .rsplit_once(':')
                    .ok_or_else(|| bad(format!("expected `<name>:<score>`, got `{item}`")))?;
                check_name(name).map_err(bad)?;
                let score: f64 = score
                    .parse()
                    .ok()
                    .filter(|s: &f64| s.is_finite() && *s >= 0.0)
                    .ok_or_else(|| bad(format!("bad score `{score}`")))?;
                ranked.push((name.to_string(), score));
            }
        }
        out.push(Annotation {
            id: id.to_string(),
            ranked,
            no_evidence: false,
            missing_keywords: 0,
        });
    }
    Ok(out)
}
