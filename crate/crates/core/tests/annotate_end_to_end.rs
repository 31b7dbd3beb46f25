use sbia_core::annotator::{AnnotatorConfig, Dataset};
use sbia_core::keywords::KeywordRecord;
use sbia_core::lexicon::LexiconBuilder;
use sbia_core::{
    AnalysisConfig, ConceptSet, Engine, FeatureVector, Index, IndexConfig, KeywordStore, Lexicon,
    Query, RelationSet, RelationType,
};

fn engine(
    lexicon: Lexicon,
    concepts: &[(&str, &[&str])],
    keywords: &[(&str, &[&str])],
    n_refs: usize,
    config: AnnotatorConfig,
) -> Engine {
    let refs: Vec<FeatureVector> = (0..n_refs)
        .map(|i| FeatureVector::new(format!("r{i}"), vec![i as f32, 0.0]))
        .collect();
    let records = keywords.iter().map(|(id, words)| KeywordRecord {
        id: id.to_string(),
        words: words.iter().map(|w| w.to_string()).collect(),
    });
    let concepts = ConceptSet::new(
        concepts
            .iter()
            .map(|(n, s)| (n.to_string(), s.iter().map(|x| x.to_string()).collect()))
            .collect(),
        &lexicon,
    )
    .unwrap();
    let dataset = Dataset {
        index: Index::build(refs, IndexConfig::exact(2)).unwrap(),
        keywords: KeywordStore::from_records(records).unwrap(),
    };
    Engine::new(vec![dataset], lexicon, concepts, config).unwrap()
}

fn query(candidates: &[&str]) -> Query {
    Query {
        id: "q".into(),
        feature: vec![0.0, 0.0],
        candidates: candidates.iter().map(|c| c.to_string()).collect(),
    }
}

fn config(k: usize, m: usize) -> AnnotatorConfig {
    AnnotatorConfig {
        k,
        m,
        analysis: AnalysisConfig {
            tol: 1e-13,
            max_iters: 10_000,
            ..Default::default()
        },
    }
}

#[test]
fn single_word_world_ranks_its_concept_first() {
    let mut b = LexiconBuilder::new();
    b.synset("cat.n.01", &["cat"])
        .synset("dog.n.01", &["dog"])
        .sense("cat", "cat.n.01", 1)
        .sense("dog", "dog.n.01", 1);
    let cat: &[&str] = &["cat"];
    let e = engine(
        b.build().unwrap(),
        &[("cat", &["cat.n.01"]), ("dog", &["dog.n.01"])],
        &[("r0", cat), ("r1", cat), ("r2", cat)],
        3,
        config(3, 5),
    );
    let a = e.annotate(&query(&["dog", "cat"])).unwrap();
    assert_eq!(a.ranked, vec![("cat".into(), 1.0), ("dog".into(), 0.0)]);
    assert!(!a.no_evidence);
}

#[test]
fn two_concept_world_matches_the_fixed_point() {
    let mut b = LexiconBuilder::new();
    b.synset("a.n.01", &["alpha"])
        .synset("b.n.01", &["beta"])
        .sense("alpha", "a.n.01", 1)
        .sense("beta", "b.n.01", 1)
        .relation(RelationType::Hypernym, "a.n.01", "b.n.01");
    let mut cfg = config(2, 5);
    cfg.analysis.relations = RelationSet::EMPTY.with(RelationType::Hypernym);
    let alpha: &[&str] = &["alpha"];
    let e = engine(
        b.build().unwrap(),
        &[("a", &["a.n.01"]), ("b", &["b.n.01"])],
        &[("r0", alpha), ("r1", alpha)],
        2,
        cfg,
    );
    let a = e.annotate(&query(&["b", "a"])).unwrap();
    assert_eq!(a.ranked[0].0, "a");
    assert_eq!(a.ranked[1].0, "b");
    assert!((a.ranked[0].1 - 2.0 / 3.0).abs() < 1e-9);
    assert!((a.ranked[1].1 - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn missing_keywords_give_a_flagged_zero_annotation() {
    let mut b = LexiconBuilder::new();
    b.synset("cat.n.01", &["cat"]).sense("cat", "cat.n.01", 1);
    let e = engine(
        b.build().unwrap(),
        &[("cat", &["cat.n.01"])],
        &[],
        4,
        config(3, 5),
    );
    let a = e.annotate(&query(&["cat"])).unwrap();
    assert!(a.no_evidence);
    assert_eq!(a.missing_keywords, 3);
    assert_eq!(a.ranked, vec![("cat".into(), 0.0)]);
}

#[test]
fn output_stays_inside_the_candidate_list() {
    let mut b = LexiconBuilder::new();
    for w in ["cat", "dog", "cow"] {
        b.synset(&format!("{w}.n.01"), &[w])
            .sense(w, &format!("{w}.n.01"), 1);
    }
    let words: &[&str] = &["cat", "dog", "cow"];
    let e = engine(
        b.build().unwrap(),
        &[
            ("cat", &["cat.n.01"]),
            ("dog", &["dog.n.01"]),
            ("cow", &["cow.n.01"]),
        ],
        &[("r0", words), ("r1", words)],
        2,
        config(2, 5),
    );
    let a = e.annotate(&query(&["dog"])).unwrap();
    assert_eq!(a.ranked.len(), 1);
    assert_eq!(a.ranked[0].0, "dog");
}
