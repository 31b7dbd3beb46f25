//! Semantic analysis of neighbor keywords.
//!
//! Keywords of the retrieved neighbors become weighted words, words become
//! candidate synsets with an initial probability, the most probable
//! candidates are linked through enabled lexicon relations, and a restart
//! walk over that graph yields a relevance score per synset:
//!
//! ```text
//! p[t+1](v) = a * r(v) + (1 - a) * ( sum_{u -> v} T(u, v) * p[t](u) + dangling[t] * r(v) )
//! ```
//!
//! where `r` is the normalized initial probability, `T(u, v)` is the edge's
//! relation weight divided by the total weight leaving `u`, and `dangling`
//! is the mass sitting on nodes without weighted out-edges.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, RelationSet, RelationType, SynsetIdx};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborWeighting {
    Uniform,
    ReciprocalRank,
}

impl NeighborWeighting {
    pub fn as_str(self) -> &'static str {
        match self {
            NeighborWeighting::Uniform => "uniform",
            NeighborWeighting::ReciprocalRank => "reciprocal-rank",
        }
    }

    /// Weight of the neighbor at 1-based `rank`.
    fn weight(self, rank: usize) -> f64 {
        match self {
            NeighborWeighting::Uniform => 1.0,
            NeighborWeighting::ReciprocalRank => 1.0 / rank as f64,
        }
    }
}

impl std::str::FromStr for NeighborWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NeighborWeighting::Uniform),
            "reciprocal-rank" => Ok(NeighborWeighting::ReciprocalRank),
            other => Err(Error::InvalidParameter(format!(
                "unknown neighbor weighting `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Maximum senses considered per word.
    pub s: usize,
    /// Number of initial synsets entering the graph.
    pub n: usize,
    pub weighting: NeighborWeighting,
    pub relations: RelationSet,
    /// Edge weight per relation type, indexed by `RelationType as usize`.
    pub lambda: [f64; 4],
    /// Restart weight.
    pub alpha: f64,
    /// 0 or 1: whether one-hop neighbors of the candidates join the graph.
    pub expansion_depth: u8,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            s: 7,
            n: 100,
            weighting: NeighborWeighting::Uniform,
            relations: RelationSet::ALL,
            lambda: [1.0; 4],
            alpha: 0.5,
            expansion_depth: 1,
            max_iters: 100,
            tol: 1e-9,
        }
    }
}

impl AnalysisConfig {
    pub fn lambda(&self, r: RelationType) -> f64 {
        self.lambda[r as usize]
    }

    pub fn set_lambda(&mut self, r: RelationType, value: f64) {
        self.lambda[r as usize] = value;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.s == 0 {
            return bad("s must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        for r in RelationType::ALL {
            let l = self.lambda(r);
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("lambda.{r} must be finite and >= 0, got {l}"));
            }
        }
        if self.expansion_depth > 1 {
            return bad(format!(
                "expansion_depth must be 0 or 1, got {}",
                self.expansion_depth
            ));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedWord {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSynset {
    pub synset: SynsetIdx,
    pub p0: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynsetGraph {
    pub nodes: Vec<CandidateSynset>,
    /// `(from, type, to)` as node positions.
    pub edges: Vec<(usize, RelationType, usize)>,
    pub restart: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationStats {
    pub iterations: usize,
    pub converged: bool,
    /// L1 change of the last iteration.
    pub last_delta: f64,
}

/// Weighted word frequencies over neighbors given in ascending-distance order.
pub fn word_frequencies<W: AsRef<str>>(
    neighbors: &[(&str, &[W])],
    weighting: NeighborWeighting,
) -> Vec<WeightedWord> {
    let mut raw: BTreeMap<&str, f64> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (pos, (_, words)) in neighbors.iter().enumerate() {
        let w = weighting.weight(pos + 1);
        seen.clear();
        for word in words.iter() {
            let word = word.as_ref();
            if seen.insert(word) {
                *raw.entry(word).or_insert(0.0) += w;
            }
        }
    }
    let total: f64 = raw.values().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut out: Vec<WeightedWord> = raw
        .into_iter()
        .map(|(word, w)| WeightedWord {
            word: word.to_string(),
            weight: w / total,
        })
        .collect();
    out.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.word.cmp(&b.word))
    });
    out
}

/// Maps words to their first `s` senses with harmonic-by-rank shares.
/// Output is normalized and sorted by descending `p0`, ties by synset id.
pub fn initial_synsets(
    words: &[WeightedWord],
    lexicon: &Lexicon,
    s: usize,
) -> Vec<CandidateSynset> {
    let mut mass: BTreeMap<SynsetIdx, f64> = BTreeMap::new();
    for w in words {
        let senses = lexicon.sense_indices(&w.word);
        let q = s.min(senses.len());
        if q == 0 {
            continue;
        }
        let harmonic: f64 = (1..=q).map(|j| 1.0 / j as f64).sum();
        for (rank0, &syn) in senses[..q].iter().enumerate() {
            let share = (1.0 / (rank0 + 1) as f64) / harmonic;
            *mass.entry(syn).or_insert(0.0) += w.weight * share;
        }
    }
    let total: f64 = mass.values().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut out: Vec<CandidateSynset> = mass
        .into_iter()
        .map(|(synset, m)| CandidateSynset {
            synset,
            p0: m / total,
            score: 0.0,
        })
        .collect();
    sort_by_p0(&mut out);
    out
}

fn sort_by_p0(c: &mut [CandidateSynset]) {
    c.sort_by(|a, b| b.p0.total_cmp(&a.p0).then(a.synset.cmp(&b.synset)));
}

/// Keeps the `n` highest-`p0` candidates (ties by ascending id) without renormalizing.
pub fn top_n(mut candidates: Vec<CandidateSynset>, n: usize) -> Vec<CandidateSynset> {
    sort_by_p0(&mut candidates);
    candidates.truncate(n);
    candidates
}

pub fn build_graph(
    candidates: &[CandidateSynset],
    lexicon: &Lexicon,
    config: &AnalysisConfig,
) -> Result<SynsetGraph> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate synsets"));
    }
    let enabled = config.relations;
    let mut nodes: Vec<CandidateSynset> = candidates
        .iter()
        .map(|c| CandidateSynset { score: 0.0, ..*c })
        .collect();
    let mut position: HashMap<SynsetIdx, usize> = HashMap::with_capacity(nodes.len() * 4);
    for (i, c) in nodes.iter().enumerate() {
        if position.insert(c.synset, i).is_some() {
            return Err(Error::InvalidParameter(format!(
                "synset `{}` appears twice among candidates",
                lexicon.id_of(c.synset)
            )));
        }
    }

    if config.expansion_depth >= 1 {
        let added: BTreeSet<SynsetIdx> = candidates
            .iter()
            .flat_map(|c| lexicon.out_edges(c.synset))
            .filter(|(r, t)| enabled.contains(*r) && !position.contains_key(t))
            .map(|&(_, t)| t)
            .collect();
        for t in added {
            position.insert(t, nodes.len());
            nodes.push(CandidateSynset {
                synset: t,
                p0: 0.0,
                score: 0.0,
            });
        }
    }

    let mut edges = Vec::new();
    for (u, node) in nodes.iter().enumerate() {
        for &(r, t) in lexicon.out_edges(node.synset) {
            if enabled.contains(r) {
                if let Some(&v) = position.get(&t) {
                    edges.push((u, r, v));
                }
            }
        }
    }

    let total: f64 = nodes.iter().map(|c| c.p0).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidParameter(
            "candidate probabilities sum to zero".into(),
        ));
    }
    let restart = nodes.iter().map(|c| c.p0 / total).collect();
    Ok(SynsetGraph {
        nodes,
        edges,
        restart,
    })
}

/// Runs the restart walk and stores the result in each node's `score`.
pub fn propagate(graph: &mut SynsetGraph, config: &AnalysisConfig) -> PropagationStats {
    propagate_observed(graph, config, |_, _| {})
}

/// [`propagate`] with a callback receiving `(iteration, scores)` after every step.
pub fn propagate_observed(
    graph: &mut SynsetGraph,
    config: &AnalysisConfig,
    mut observe: impl FnMut(usize, &[f64]),
) -> PropagationStats {
    let n = graph.nodes.len();
    let mut out_weight = vec![0.0f64; n];
    for &(u, r, _) in &graph.edges {
        out_weight[u] += config.lambda(r);
    }
    let transitions: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter(|&&(u, r, _)| out_weight[u] > 0.0 && config.lambda(r) > 0.0)
        .map(|&(u, r, v)| (u, v, config.lambda(r) / out_weight[u]))
        .collect();
    let dangling_nodes: Vec<usize> = (0..n).filter(|&u| out_weight[u] <= 0.0).collect();

    let alpha = config.alpha;
    let restart = &graph.restart;
    let mut p = restart.clone();
    let mut next = vec![0.0f64; n];
    let mut stats = PropagationStats {
        iterations: 0,
        converged: false,
        last_delta: f64::INFINITY,
    };
    while stats.iterations < config.max_iters {
        next.iter_mut().for_each(|x| *x = 0.0);
        for &(u, v, w) in &transitions {
            next[v] += w * p[u];
        }
        let dangling: f64 = dangling_nodes.iter().map(|&u| p[u]).sum();
        let mut delta = 0.0;
        for v in 0..n {
            let value = alpha * restart[v] + (1.0 - alpha) * (next[v] + dangling * restart[v]);
            delta += (value - p[v]).abs();
            next[v] = value;
        }
        std::mem::swap(&mut p, &mut next);
        stats.iterations += 1;
        stats.last_delta = delta;
        observe(stats.iterations, &p);
        if delta < config.tol {
            stats.converged = true;
            break;
        }
    }
    for (node, score) in graph.nodes.iter_mut().zip(p) {
        node.score = score;
    }
    stats
}

/// Synsets by descending score, ties by ascending id.
pub fn rank_synsets(graph: &SynsetGraph) -> Vec<(SynsetIdx, f64)> {
    let mut out: Vec<_> = graph.nodes.iter().map(|c| (c.synset, c.score)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Everything the analysis phase produced for one query.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub words: Vec<WeightedWord>,
    /// `None` when no keyword matched the lexicon.
    pub graph: Option<SynsetGraph>,
    pub ranked: Vec<(SynsetIdx, f64)>,
    pub stats: Option<PropagationStats>,
}

pub fn analyze<W: AsRef<str>>(
    neighbors: &[(&str, &[W])],
    lexicon: &Lexicon,
    config: &AnalysisConfig,
) -> Result<Analysis> {
    config.validate()?;
    let words = word_frequencies(neighbors, config.weighting);
    let candidates = top_n(initial_synsets(&words, lexicon, config.s), config.n);
    if candidates.is_empty() {
        return Ok(Analysis {
            words,
            graph: None,
            ranked: Vec::new(),
            stats: None,
        });
    }
    let mut graph = build_graph(&candidates, lexicon, config)?;
    let stats = propagate(&mut graph, config);
    let ranked = rank_synsets(&graph);
    Ok(Analysis {
        words,
        graph: Some(graph),
        ranked,
        stats: Some(stats),
    })
}
