//! Seeded synthetic annotation worlds.
//!
//! Every concept gets a Gaussian prototype in feature space and a small
//! lexicon neighborhood:
//!
//! * the concept synset, reachable from the concept word (sense 1) and
//!   from a synonym whose first sense is an unrelated synset (sense 2),
//! * a few hyponym synsets with their own words,
//! * a few part (meronym) synsets with their own words,
//! * secondary senses of the concept word that lead nowhere,
//! * `lexicon_depth` levels of grouping hypernyms above the concepts.
//!
//! Reference images sit around their concept prototype and carry a random
//! mix of these words. With probability `label_noise` an image's words are
//! drawn for a different, uniformly chosen concept instead. Queries are
//! drawn like reference images; their ground truth is the generating concept.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::annotator::{
    assemble_queries, AnnotatorConfig, ConceptLists, ConceptSet, Dataset, Engine, Query,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricsReport, PredictionRule};
use crate::fsutil;
use crate::fvec::{self, FeatureVector};
use crate::index::{Index, IndexConfig};
use crate::keywords::{format_record, KeywordRecord, KeywordStore};
use crate::lexicon::{Lexicon, LexiconBuilder, RelationType};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub dim: usize,
    pub num_concepts: usize,
    pub refs_per_concept: usize,
    pub num_queries: usize,
    pub cluster_noise_sigma: f64,
    /// Chance that a reference image is labelled as some other concept.
    pub label_noise: f64,
    /// Levels of grouping hypernyms above the concept synsets.
    pub lexicon_depth: usize,
    /// Candidate list length per query (truth included), capped at `num_concepts`.
    pub candidates_per_query: usize,
    pub hyponyms_per_concept: usize,
    pub parts_per_concept: usize,
    /// Senses of each concept word beyond the concept synset itself.
    pub extra_senses: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rng_seed: 7,
            dim: 32,
            num_concepts: 20,
            refs_per_concept: 100,
            num_queries: 200,
            cluster_noise_sigma: 0.35,
            label_noise: 0.3,
            lexicon_depth: 2,
            candidates_per_query: 10,
            hyponyms_per_concept: 3,
            parts_per_concept: 2,
            extra_senses: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.dim == 0 || self.num_concepts == 0 || self.refs_per_concept == 0 {
            return bad("dim, num_concepts and refs_per_concept must be positive");
        }
        if self.num_queries == 0 || self.candidates_per_query == 0 {
            return bad("num_queries and candidates_per_query must be positive");
        }
        if !(self.cluster_noise_sigma >= 0.0 && self.cluster_noise_sigma.is_finite()) {
            return bad("cluster_noise_sigma must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 1)");
        }
        if self.label_noise > 0.0 && self.num_concepts < 2 {
            return bad("label noise needs at least two concepts");
        }
        if self.lexicon_depth > 8 {
            return bad("lexicon_depth must be at most 8");
        }
        Ok(())
    }
}

/// Words attached to one concept.
#[derive(Debug, Clone)]
struct ConceptWords {
    name: String,
    synonym: String,
    hyponyms: Vec<String>,
    parts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub references: Vec<FeatureVector>,
    pub keywords: Vec<KeywordRecord>,
    pub lexicon: Lexicon,
    pub concepts: ConceptSet,
    pub queries: Vec<FeatureVector>,
    pub candidates: ConceptLists,
    pub truth: ConceptLists,
}

/// File locations of a written corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub features: PathBuf,
    pub keywords: PathBuf,
    pub lexicon: PathBuf,
    pub concepts: PathBuf,
    pub queries: PathBuf,
    pub candidates: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            features: dir.join("refs.fvec"),
            keywords: dir.join("refs.tsv"),
            lexicon: dir.join("lexicon.tsv"),
            concepts: dir.join("concepts.tsv"),
            queries: dir.join("queries.fvec"),
            candidates: dir.join("candidates.tsv"),
            truth: dir.join("truth.tsv"),
            config: dir.join("engine.conf"),
        }
    }
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

struct WordMint {
    used: HashSet<String>,
}

impl WordMint {
    fn mint(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
                w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f32> {
    center
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            (c + sigma * z) as f32
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let c = config.num_concepts;
    let mut mint = WordMint {
        used: HashSet::new(),
    };

    let words: Vec<ConceptWords> = (0..c)
        .map(|_| ConceptWords {
            name: mint.mint(&mut rng),
            synonym: mint.mint(&mut rng),
            hyponyms: (0..config.hyponyms_per_concept)
                .map(|_| mint.mint(&mut rng))
                .collect(),
            parts: (0..config.parts_per_concept)
                .map(|_| mint.mint(&mut rng))
                .collect(),
        })
        .collect();

    let synset = |w: &str, sense: usize| format!("{w}.n.{sense:02}");
    let mut lb = LexiconBuilder::new();
    let mut concept_defs = Vec::with_capacity(c);
    for cw in &words {
        let main = synset(&cw.name, 1);
        lb.synset(&main, &[&cw.name, &cw.synonym]);
        lb.sense(&cw.name, &main, 1);
        for extra in 0..config.extra_senses {
            let id = synset(&cw.name, extra + 2);
            lb.synset(&id, &[&cw.name]);
            lb.sense(&cw.name, &id, extra as u32 + 2);
        }
        let syn_first = synset(&cw.synonym, 1);
        lb.synset(&syn_first, &[&cw.synonym]);
        lb.sense(&cw.synonym, &syn_first, 1);
        lb.sense(&cw.synonym, &main, 2);
        for h in &cw.hyponyms {
            let id = synset(h, 1);
            lb.synset(&id, &[h]).sense(h, &id, 1);
            lb.relation(RelationType::Hypernym, &id, &main);
        }
        for p in &cw.parts {
            let id = synset(p, 1);
            lb.synset(&id, &[p]).sense(p, &id, 1);
            lb.relation(RelationType::Meronym, &main, &id);
        }
        concept_defs.push((cw.name.clone(), vec![main]));
    }

    // Grouping hypernyms: level l groups blocks of four synsets from level l-1.
    let mut level: Vec<String> = words.iter().map(|cw| synset(&cw.name, 1)).collect();
    for _ in 0..config.lexicon_depth {
        let mut parents = Vec::new();
        for block in level.chunks(4) {
            let word = mint.mint(&mut rng);
            let id = synset(&word, 1);
            lb.synset(&id, &[&word]).sense(&word, &id, 1);
            for child in block {
                lb.relation(RelationType::Hypernym, child, &id);
            }
            parents.push(id);
        }
        level = parents;
    }
    let lexicon = lb.build()?;
    let concepts = ConceptSet::new(concept_defs, &lexicon)?;

    // Prototypes spread with unit variance per component.
    let origin = vec![0.0; config.dim];
    let prototypes: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            gaussian_vector(&mut rng, &origin, 1.0)
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect();

    let mut references = Vec::with_capacity(c * config.refs_per_concept);
    let mut keywords = Vec::with_capacity(c * config.refs_per_concept);
    let mut serial = 0usize;
    for (ci, proto) in prototypes.iter().enumerate() {
        for _ in 0..config.refs_per_concept {
            let id = format!("r{serial:07}");
            serial += 1;
            references.push(FeatureVector::new(
                &id,
                gaussian_vector(&mut rng, proto, config.cluster_noise_sigma),
            ));
            let label = if config.label_noise > 0.0 && rng.random_bool(config.label_noise) {
                let other = rng.random_range(0..c - 1);
                if other >= ci {
                    other + 1
                } else {
                    other
                }
            } else {
                ci
            };
            keywords.push(KeywordRecord {
                id,
                words: label_words(&mut rng, &words[label]),
            });
        }
    }

    let mut queries = Vec::with_capacity(config.num_queries);
    let mut candidates = ConceptLists::default();
    let mut truth = ConceptLists::default();
    let per_query = config.candidates_per_query.min(c);
    let mut others: Vec<usize> = Vec::with_capacity(c);
    for qi in 0..config.num_queries {
        let ci = qi % c;
        let id = format!("q{qi:06}");
        queries.push(FeatureVector::new(
            &id,
            gaussian_vector(&mut rng, &prototypes[ci], config.cluster_noise_sigma),
        ));
        others.clear();
        others.extend((0..c).filter(|&j| j != ci));
        others.shuffle(&mut rng);
        let mut list: Vec<String> = std::iter::once(ci)
            .chain(others.iter().copied().take(per_query - 1))
            .map(|j| words[j].name.clone())
            .collect();
        list.sort();
        candidates.lists.insert(id.clone(), list);
        truth.lists.insert(id, vec![words[ci].name.clone()]);
    }

    Ok(SynthCorpus {
        config: config.clone(),
        references,
        keywords,
        lexicon,
        concepts,
        queries,
        candidates,
        truth,
    })
}

/// Picks a nonempty subset of a concept's words: the concept word, its
/// synonym, one hyponym word and one part word, each with a fixed chance.
fn label_words(rng: &mut ChaCha8Rng, cw: &ConceptWords) -> Vec<String> {
    let mut out = Vec::with_capacity(4);
    if rng.random_bool(0.4) {
        out.push(cw.name.clone());
    }
    if rng.random_bool(0.3) {
        out.push(cw.synonym.clone());
    }
    if !cw.hyponyms.is_empty() && rng.random_bool(0.6) {
        out.push(cw.hyponyms[rng.random_range(0..cw.hyponyms.len())].clone());
    }
    if !cw.parts.is_empty() && rng.random_bool(0.3) {
        out.push(cw.parts[rng.random_range(0..cw.parts.len())].clone());
    }
    if out.is_empty() {
        out.push(cw.name.clone());
    }
    out
}

impl SynthCorpus {
    /// Builds an in-memory engine over this corpus.
    pub fn engine(&self, index: IndexConfig, annotator: AnnotatorConfig) -> Result<Engine> {
        let dataset = Dataset {
            index: Index::build(self.references.clone(), index)?,
            keywords: KeywordStore::from_records(self.keywords.iter().cloned())?,
        };
        Engine::new(
            vec![dataset],
            self.lexicon.clone(),
            self.concepts.clone(),
            annotator,
        )
    }

    pub fn queries(&self) -> Result<Vec<Query>> {
        assemble_queries(self.queries.clone(), &self.candidates)
    }

    /// Annotates every query with `engine` and scores the result.
    pub fn evaluate_with(&self, engine: &Engine, rule: PredictionRule) -> Result<MetricsReport> {
        let batch = engine.annotate_batch(&self.queries()?)?;
        evaluate(
            &batch.annotations,
            &self.truth,
            &self.concepts,
            Some(&self.candidates),
            rule,
        )
    }

    pub fn keywords_text(&self) -> String {
        let mut out = String::new();
        for r in &self.keywords {
            let _ = writeln!(out, "{}", format_record(&r.id, &r.words));
        }
        out
    }

    /// Writes every file into `dir` (created if needed). `engine_conf` is
    /// the body of the engine configuration written next to the data.
    pub fn write(&self, dir: &Path, engine_conf: &str) -> Result<SynthPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths::in_dir(dir);
        let dim = self.config.dim;
        fvec::write_fvec(&paths.features, dim, &self.references)?;
        fsutil::write_atomic(&paths.keywords, self.keywords_text().as_bytes())?;
        self.lexicon.save(&paths.lexicon)?;
        fsutil::write_atomic(
            &paths.concepts,
            self.concepts.to_text(&self.lexicon).as_bytes(),
        )?;
        fvec::write_fvec(&paths.queries, dim, &self.queries)?;
        fsutil::write_atomic(&paths.candidates, self.candidates.to_text().as_bytes())?;
        fsutil::write_atomic(&paths.truth, self.truth.to_text().as_bytes())?;
        fsutil::write_atomic(&paths.config, engine_conf.as_bytes())?;
        Ok(paths)
    }
}
