//! Search-based image annotation.
//!
//! A query image is described by a feature vector and a list of candidate
//! concepts. The engine retrieves the `k` visually closest reference images,
//! turns their keywords into weighted synsets, scores those synsets with a
//! restart walk over lexicon relations and keeps the `m` best candidate
//! concepts. Evaluation metrics and a synthetic world generator live
//! alongside.

pub mod analysis;
pub mod annotator;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod fvec;
pub mod index;
pub mod keywords;
pub mod lexicon;
pub mod synth;

pub use analysis::{AnalysisConfig, NeighborWeighting};
pub use annotator::{Annotation, ConceptLists, ConceptSet, Engine, Query};
pub use config::EngineConfig;
pub use error::{Error, Result};
pub use evaluation::{evaluate, MetricsReport, PredictionRule};
pub use fvec::FeatureVector;
pub use index::{Index, IndexConfig, IndexMode, NeighborList};
pub use keywords::KeywordStore;
pub use lexicon::{Lexicon, RelationSet, RelationType};
pub use synth::{SynthConfig, SynthCorpus};
