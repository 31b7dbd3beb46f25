//! Sample-based and concept-based annotation quality metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::annotator::{Annotation, ConceptLists, ConceptSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision, recall and F of a predicted set against a nonempty truth set.
pub fn sample_prf<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], truth: &[T]) -> Prf {
    let truth: HashSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    let predicted: HashSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    let hits = predicted.intersection(&truth).count() as f64;
    let precision = if predicted.is_empty() {
        if truth.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        hits / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        hits / truth.len() as f64
    };
    Prf {
        precision,
        recall,
        f: f_score(precision, recall),
    }
}

/// Average precision of a ranked list; truth items never ranked contribute 0.
pub fn average_precision<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], truth: &[T]) -> f64 {
    let truth: HashSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    if truth.is_empty() {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in ranked.iter().enumerate() {
        let item = item.as_ref();
        if truth.contains(item) && seen.insert(item) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / truth.len() as f64
}

/// Per-concept contingency counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConceptCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConceptCounts {
    /// `None` when the concept has no positives and is skipped.
    pub fn prf(&self) -> Option<Prf> {
        if self.tp + self.fn_ == 0 {
            return None;
        }
        let precision = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        Some(Prf {
            precision,
            recall,
            f: f_score(precision, recall),
        })
    }
}

/// Which entries of an annotation count as predicted concepts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionRule {
    /// Every emitted entry, zero scores included.
    AllRanked,
    /// Entries with a positive score.
    PositiveScore,
    /// Entries scoring at least this fraction of the annotation's top score
    /// (and above zero).
    RelativeScore(f64),
}

impl Default for PredictionRule {
    fn default() -> Self {
        PredictionRule::RelativeScore(DEFAULT_RELATIVE_CUTOFF)
    }
}

pub const DEFAULT_RELATIVE_CUTOFF: f64 = 0.1;

impl PredictionRule {
    pub fn predicted<'a>(&self, a: &'a Annotation) -> Vec<&'a str> {
        let top = a.ranked.iter().map(|e| e.1).fold(0.0f64, f64::max);
        a.ranked
            .iter()
            .filter(|(_, s)| match *self {
                PredictionRule::AllRanked => true,
                PredictionRule::PositiveScore => *s > 0.0,
                PredictionRule::RelativeScore(frac) => *s > 0.0 && *s >= frac * top,
            })
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PredictionRule::AllRanked),
            "positive" => Ok(PredictionRule::PositiveScore),
            other => other
                .strip_prefix("relative:")
                .and_then(|f| f.parse::<f64>().ok())
                .filter(|f| (0.0..=1.0).contains(f))
                .map(PredictionRule::RelativeScore)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "unknown prediction rule `{other}` (all, positive, relative:<fraction>)"
                    ))
                }),
        }
    }
}

impl std::fmt::Display for PredictionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictionRule::AllRanked => f.write_str("all"),
            PredictionRule::PositiveScore => f.write_str("positive"),
            PredictionRule::RelativeScore(x) => write!(f, "relative:{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRow {
    pub name: String,
    pub counts: ConceptCounts,
    pub prf: Option<Prf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mp_s: f64,
    pub mr_s: f64,
    pub mf_s: f64,
    pub map_s: f64,
    pub mp_c: f64,
    pub mr_c: f64,
    pub mf_c: f64,
    pub samples_scored: usize,
    /// Annotated images without a ground-truth entry.
    pub samples_without_truth: usize,
    /// Images whose ground truth is empty.
    pub samples_empty_truth: usize,
    pub concepts_scored: usize,
    /// Concepts with no relevant sample.
    pub concepts_skipped: usize,
    pub per_concept: Vec<ConceptRow>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Percentage rounded to one decimal.
pub fn percent(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

impl MetricsReport {
    /// `(key, value)` pairs in the order used by the text outputs.
    pub fn headline(&self) -> [(&'static str, f64); 7] {
        [
            ("MP-c", self.mp_c),
            ("MR-c", self.mr_c),
            ("MF-c", self.mf_c),
            ("MP-s", self.mp_s),
            ("MR-s", self.mr_s),
            ("MF-s", self.mf_s),
            ("MAP-s", self.map_s),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let head = self.headline();
        let header: Vec<String> = head.iter().map(|(k, _)| format!("{k:>6}")).collect();
        let values: Vec<String> = head
            .iter()
            .map(|(_, v)| format!("{:>6.1}", percent(*v)))
            .collect();
        let _ = writeln!(out, "{}", header.join(" "));
        let _ = writeln!(out, "{}", values.join(" "));
        let _ = writeln!(
            out,
            "samples: {} scored, {} without truth, {} with empty truth; concepts: {} scored, {} skipped",
            self.samples_scored,
            self.samples_without_truth,
            self.samples_empty_truth,
            self.concepts_scored,
            self.concepts_skipped
        );
        out
    }

    pub fn to_concept_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>5} {:>5} {:>5} {:>6} {:>6} {:>6}\n",
            "concept", "tp", "fp", "fn", "P", "R", "F"
        );
        for row in &self.per_concept {
            let c = row.counts;
            match row.prf {
                Some(p) => {
                    let _ = writeln!(
                        out,
                        "{:<24} {:>5} {:>5} {:>5} {:>6.1} {:>6.1} {:>6.1}",
                        row.name,
                        c.tp,
                        c.fp,
                        c.fn_,
                        percent(p.precision),
                        percent(p.recall),
                        percent(p.f)
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:<24} {:>5} {:>5} {:>5} {:>6} {:>6} {:>6}",
                        row.name, c.tp, c.fp, c.fn_, "-", "-", "-"
                    );
                }
            }
        }
        out
    }

    /// Machine-readable `key=value` lines. Fractions at full precision plus
    /// one-decimal percentages.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.headline() {
            let key = k.to_lowercase().replace('-', "_");
            let _ = writeln!(out, "{key}={v:.9}");
            let _ = writeln!(out, "{key}_pct={:.1}", percent(v));
        }
        let _ = writeln!(out, "samples_scored={}", self.samples_scored);
        let _ = writeln!(out, "samples_without_truth={}", self.samples_without_truth);
        let _ = writeln!(out, "samples_empty_truth={}", self.samples_empty_truth);
        let _ = writeln!(out, "concepts_scored={}", self.concepts_scored);
        let _ = writeln!(out, "concepts_skipped={}", self.concepts_skipped);
        out
    }
}

/// Scores annotations against ground truth.
///
/// `candidates`, when given, restricts each concept's contingency counts to
/// the samples whose candidate list contains it; otherwise every scored
/// sample counts for every concept.
pub fn evaluate(
    annotations: &[Annotation],
    truth: &ConceptLists,
    concepts: &ConceptSet,
    candidates: Option<&ConceptLists>,
    rule: PredictionRule,
) -> Result<MetricsReport> {
    for a in annotations {
        if let Some((bad, _)) = a.ranked.iter().find(|(n, _)| !concepts.contains(n)) {
            return Err(Error::UnknownConcept(bad.clone()));
        }
    }
    truth.check_against(concepts)?;

    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut without_truth = 0;
    let mut empty_truth = 0;
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    let mut fs = Vec::new();
    let mut aps = Vec::new();
    let mut counts: BTreeMap<&str, ConceptCounts> = concepts
        .names()
        .map(|n| (n, ConceptCounts::default()))
        .collect();

    for a in sorted {
        let Some(t) = truth.get(&a.id) else {
            without_truth += 1;
            continue;
        };
        let predicted = rule.predicted(a);
        let ranked: Vec<&str> = a.ranked.iter().map(|(n, _)| n.as_str()).collect();
        let relevant: HashSet<&str> = t.iter().map(String::as_str).collect();
        let predicted_set: HashSet<&str> = predicted.iter().copied().collect();

        let eligible: Option<HashSet<&str>> = candidates
            .and_then(|c| c.get(&a.id))
            .map(|l| l.iter().map(String::as_str).collect());
        for (name, c) in counts.iter_mut() {
            if let Some(e) = &eligible {
                if !e.contains(name) {
                    continue;
                }
            }
            match (predicted_set.contains(name), relevant.contains(name)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }

        if t.is_empty() {
            empty_truth += 1;
            continue;
        }
        let prf = sample_prf(&predicted, t);
        ps.push(prf.precision);
        rs.push(prf.recall);
        fs.push(prf.f);
        aps.push(average_precision(&ranked, t));
    }

    let mut per_concept = Vec::with_capacity(counts.len());
    let (mut cp, mut cr, mut cf) = (Vec::new(), Vec::new(), Vec::new());
    for (name, c) in counts {
        let prf = c.prf();
        if let Some(p) = prf {
            cp.push(p.precision);
            cr.push(p.recall);
            cf.push(p.f);
        }
        per_concept.push(ConceptRow {
            name: name.to_string(),
            counts: c,
            prf,
        });
    }

    Ok(MetricsReport {
        mp_s: mean(&ps),
        mr_s: mean(&rs),
        mf_s: mean(&fs),
        map_s: mean(&aps),
        mp_c: mean(&cp),
        mr_c: mean(&cr),
        mf_c: mean(&cf),
        samples_scored: fs.len(),
        samples_without_truth: without_truth,
        samples_empty_truth: empty_truth,
        concepts_scored: cf.len(),
        concepts_skipped: per_concept.len() - cf.len(),
        per_concept,
    })
}
