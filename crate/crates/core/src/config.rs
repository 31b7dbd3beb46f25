//! Engine configuration: `key = value` lines, `#` comments, comma-separated
//! lists. Relative paths resolve against the config file's directory.
//!
//! Layering: a preset (if any) first, then the file's keys, then overrides.

use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::analysis::{AnalysisConfig, NeighborWeighting};
use crate::annotator::{AnnotatorConfig, ConceptSet, Dataset, Engine};
use crate::error::{Error, Result};
use crate::evaluation::PredictionRule;
use crate::fsutil;
use crate::fvec;
use crate::index::{Index, IndexConfig, IndexMode};
use crate::keywords::KeywordStore;
use crate::lexicon::{Lexicon, RelationSet, RelationType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// k=25, n=200, m=7.
    Mpeg7Style,
    /// k=70, n=100, m=5.
    DecafStyle,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mpeg7-style" => Ok(Preset::Mpeg7Style),
            "decaf-style" => Ok(Preset::DecafStyle),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset `{other}` (mpeg7-style, decaf-style)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mpeg7Style => "mpeg7-style",
            Preset::DecafStyle => "decaf-style",
        }
    }

    fn apply(self, cfg: &mut EngineConfig) {
        let (k, n, m) = match self {
            Preset::Mpeg7Style => (25, 200, 7),
            Preset::DecafStyle => (70, 100, 5),
        };
        cfg.k = k;
        cfg.m = m;
        cfg.analysis.n = n;
        cfg.analysis.s = 7;
        cfg.analysis.relations = RelationSet::ALL;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub preset: Option<Preset>,
    /// Taken from the feature files when unset.
    pub dim: Option<usize>,
    pub index_mode: IndexMode,
    pub num_pivots: usize,
    pub prefix_len: usize,
    pub candidate_budget: usize,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub analysis: AnalysisConfig,
    pub features: Vec<PathBuf>,
    pub keywords: Vec<PathBuf>,
    /// Index files, one per feature file. Defaults to `<features>.idx`.
    pub indexes: Vec<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub prediction: PredictionRule,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            preset: None,
            dim: None,
            index_mode: IndexMode::Exact,
            num_pivots: 128,
            prefix_len: 8,
            candidate_budget: 5000,
            seed: 0,
            k: 0,
            m: 0,
            analysis: AnalysisConfig::default(),
            features: Vec::new(),
            keywords: Vec::new(),
            indexes: Vec::new(),
            lexicon: None,
            concepts: None,
            output: None,
            prediction: PredictionRule::default(),
        };
        Preset::DecafStyle.apply(&mut cfg);
        cfg
    }
}

/// Parses `key = value` lines into pairs, keeping order.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (line_no, line) in fsutil::content_lines(text) {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `key = value`"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(origin, line_no, "empty key"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidParameter(format!("`{key}`: cannot parse `{v}`")))
}

fn path_list(base: &Path, v: &str) -> Vec<PathBuf> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| base.join(s))
        .collect()
}

impl EngineConfig {
    /// Applies one key. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => {
                let p = Preset::parse(v)?;
                self.preset = Some(p);
                p.apply(self);
            }
            "dim" => self.dim = Some(num(key, v)?),
            "index.mode" | "index-mode" => self.index_mode = v.parse()?,
            "index.num_pivots" => self.num_pivots = num(key, v)?,
            "index.prefix_len" => self.prefix_len = num(key, v)?,
            "index.candidate_budget" => self.candidate_budget = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "m" => self.m = num(key, v)?,
            "s" => self.analysis.s = num(key, v)?,
            "n" => self.analysis.n = num(key, v)?,
            "weighting" => self.analysis.weighting = v.parse::<NeighborWeighting>()?,
            "relations" => self.analysis.relations = RelationSet::parse_list(v)?,
            "alpha" => self.analysis.alpha = num(key, v)?,
            "expansion_depth" => self.analysis.expansion_depth = num(key, v)?,
            "max_iters" => self.analysis.max_iters = num(key, v)?,
            "tol" => self.analysis.tol = num(key, v)?,
            "features" => self.features = path_list(base, v),
            "keywords" => self.keywords = path_list(base, v),
            "indexes" => self.indexes = path_list(base, v),
            "lexicon" => self.lexicon = Some(base.join(v)),
            "concepts" => self.concepts = Some(base.join(v)),
            "output" => self.output = Some(base.join(v)),
            "eval.prediction" => self.prediction = PredictionRule::parse(v)?,
            other => {
                if let Some(rel) = other.strip_prefix("lambda.") {
                    let r = RelationType::parse(rel).ok_or_else(|| {
                        Error::InvalidParameter(format!("unknown relation in `{other}`"))
                    })?;
                    self.analysis.set_lambda(r, num(key, v)?);
                } else {
                    return Err(Error::InvalidParameter(format!(
                        "unknown config key `{other}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a config from file pairs and override pairs. A `preset` in
    /// either layer is applied before any other key.
    pub fn from_layers(
        file: &[(String, String)],
        file_base: &Path,
        overrides: &[(String, String)],
        override_base: &Path,
    ) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        let preset = overrides
            .iter()
            .chain(file)
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone());
        if let Some(p) = &preset {
            cfg.set("preset", p, file_base)?;
        }
        for (k, v) in file.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v, file_base)?;
        }
        for (k, v) in overrides.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v, override_base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fsutil::read_text(path)?;
        let pairs = parse_pairs(&text, &fsutil::display(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_layers(&pairs, base, overrides, Path::new(""))
    }

    pub fn validate(&self) -> Result<()> {
        self.annotator_config().validate()?;
        if self.features.len() != self.keywords.len() {
            return Err(Error::InvalidParameter(format!(
                "{} feature files but {} keyword files",
                self.features.len(),
                self.keywords.len()
            )));
        }
        if !self.indexes.is_empty() && self.indexes.len() != self.features.len() {
            return Err(Error::InvalidParameter(
                "`indexes` must list one file per feature file".into(),
            ));
        }
        Ok(())
    }

    pub fn annotator_config(&self) -> AnnotatorConfig {
        AnnotatorConfig {
            k: self.k,
            m: self.m,
            analysis: self.analysis.clone(),
        }
    }

    pub fn index_config(&self, dim: usize) -> IndexConfig {
        IndexConfig {
            dim,
            mode: self.index_mode,
            num_pivots: self.num_pivots,
            prefix_len: self.prefix_len,
            candidate_budget: self.candidate_budget,
            rng_seed: self.seed,
        }
    }

    pub fn index_paths(&self) -> Vec<PathBuf> {
        if !self.indexes.is_empty() {
            return self.indexes.clone();
        }
        self.features
            .iter()
            .map(|f| {
                let mut p = f.clone().into_os_string();
                p.push(".idx");
                PathBuf::from(p)
            })
            .collect()
    }

    /// Serializes the settings that affect annotation, plus the given data paths.
    pub fn to_text(&self) -> String {
        let a = &self.analysis;
        let mut lines = Vec::new();
        if let Some(p) = self.preset {
            lines.push(format!("preset = {}", p.name()));
        }
        if let Some(d) = self.dim {
            lines.push(format!("dim = {d}"));
        }
        lines.push(format!("index.mode = {}", self.index_mode.as_str()));
        lines.push(format!("index.num_pivots = {}", self.num_pivots));
        lines.push(format!("index.prefix_len = {}", self.prefix_len));
        lines.push(format!(
            "index.candidate_budget = {}",
            self.candidate_budget
        ));
        lines.push(format!("seed = {}", self.seed));
        lines.push(format!("k = {}", self.k));
        lines.push(format!("m = {}", self.m));
        lines.push(format!("s = {}", a.s));
        lines.push(format!("n = {}", a.n));
        lines.push(format!("weighting = {}", a.weighting.as_str()));
        lines.push(format!("relations = {}", a.relations));
        for r in RelationType::ALL {
            lines.push(format!("lambda.{} = {}", r.name(), a.lambda(r)));
        }
        lines.push(format!("alpha = {}", a.alpha));
        lines.push(format!("expansion_depth = {}", a.expansion_depth));
        lines.push(format!("max_iters = {}", a.max_iters));
        lines.push(format!("tol = {:e}", a.tol));
        lines.push(format!("eval.prediction = {}", self.prediction));
        let join = |ps: &[PathBuf]| {
            ps.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        if !self.features.is_empty() {
            lines.push(format!("features = {}", join(&self.features)));
            lines.push(format!("keywords = {}", join(&self.keywords)));
        }
        if !self.indexes.is_empty() {
            lines.push(format!("indexes = {}", join(&self.indexes)));
        }
        for (key, p) in [
            ("lexicon", &self.lexicon),
            ("concepts", &self.concepts),
            ("output", &self.output),
        ] {
            if let Some(p) = p {
                lines.push(format!("{key} = {}", p.display()));
            }
        }
        lines.join("\n") + "\n"
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
        p.as_ref()
            .ok_or_else(|| Error::InvalidParameter(format!("config key `{key}` is not set")))
    }

    pub fn lexicon_path(&self) -> Result<&PathBuf> {
        self.require(&self.lexicon, "lexicon")
    }

    pub fn concepts_path(&self) -> Result<&PathBuf> {
        self.require(&self.concepts, "concepts")
    }
}

/// Checks that every referenced input file exists.
pub fn check_inputs_exist(cfg: &EngineConfig) -> Result<()> {
    let mut paths: Vec<&PathBuf> = cfg.features.iter().chain(&cfg.keywords).collect();
    paths.extend(cfg.lexicon.iter());
    paths.extend(cfg.concepts.iter());
    for p in paths {
        if !p.exists() {
            return Err(Error::io(
                p.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            ));
        }
    }
    Ok(())
}

/// Builds the index for one feature file.
pub fn build_dataset_index(cfg: &EngineConfig, features: &Path) -> Result<Index> {
    let (dim, vectors) = fvec::read_fvec(features)?;
    if let Some(d) = cfg.dim {
        if d != dim {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: dim,
            });
        }
    }
    Index::build(vectors, cfg.index_config(dim))
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// Per dataset: whether a saved index was used.
    pub index_loaded: Vec<bool>,
    pub elapsed: Duration,
}

/// Loads (or builds, when no index file exists) every dataset plus lexicon and concepts.
pub fn load_engine(cfg: &EngineConfig) -> Result<(Engine, LoadReport)> {
    let start = Instant::now();
    check_inputs_exist(cfg)?;
    if cfg.features.is_empty() {
        return Err(Error::InvalidParameter(
            "config lists no feature files".into(),
        ));
    }
    let lexicon = Lexicon::load(cfg.lexicon_path()?)?;
    let concepts = ConceptSet::load(cfg.concepts_path()?, &lexicon)?;
    let mut datasets = Vec::with_capacity(cfg.features.len());
    let mut report = LoadReport::default();
    for ((features, keywords), index_path) in cfg
        .features
        .iter()
        .zip(&cfg.keywords)
        .zip(cfg.index_paths())
    {
        let index = if index_path.exists() {
            let dim = match cfg.dim {
                Some(d) => d,
                None => fvec_dim(features)?,
            };
            report.index_loaded.push(true);
            Index::load(&index_path, &cfg.index_config(dim))?
        } else {
            report.index_loaded.push(false);
            build_dataset_index(cfg, features)?
        };
        datasets.push(Dataset {
            index,
            keywords: KeywordStore::load(keywords)?,
        });
    }
    let engine = Engine::new(datasets, lexicon, concepts, cfg.annotator_config())?;
    report.elapsed = start.elapsed();
    Ok((engine, report))
}

/// Reads just the dimension from an FVEC header.
pub fn fvec_dim(path: &Path) -> Result<usize> {
    use std::io::{BufRead, BufReader};
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f)
        .take(128)
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    let origin = fsutil::display(path);
    let fields: Vec<&str> = line.trim_end().split(' ').collect();
    match fields.as_slice() {
        ["FVEC", _, dim, _] => dim
            .parse()
            .map_err(|_| Error::format(&origin, format!("bad dim `{dim}`"))),
        _ => Err(Error::format(&origin, "missing FVEC header line")),
    }
}

/// The four semantic-analysis levels of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationLevel {
    /// One sense per word, no relations.
    FrequencyOnly,
    /// Up to `s` senses per word, no relations.
    MultiSense,
    /// Multi-sense plus hypernym/hyponym links.
    HyperHypo,
    /// Multi-sense plus all four relation types.
    AllRelations,
}

impl AblationLevel {
    pub const ALL: [AblationLevel; 4] = [
        AblationLevel::FrequencyOnly,
        AblationLevel::MultiSense,
        AblationLevel::HyperHypo,
        AblationLevel::AllRelations,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationLevel::FrequencyOnly => "basic frequency analysis",
            AblationLevel::MultiSense => "multiple senses per word, no relations",
            AblationLevel::HyperHypo => "multiple senses, hypernymy, hyponymy",
            AblationLevel::AllRelations => "multiple senses, hyper/hyponymy, mero/holonymy",
        }
    }

    /// `base` with this level's sense and relation settings. `base.s` is the
    /// multi-sense width.
    pub fn apply(self, base: &AnalysisConfig) -> AnalysisConfig {
        let mut a = base.clone();
        match self {
            AblationLevel::FrequencyOnly => {
                a.s = 1;
                a.relations = RelationSet::EMPTY;
            }
            AblationLevel::MultiSense => a.relations = RelationSet::EMPTY,
            AblationLevel::HyperHypo => a.relations = RelationSet::HYPER_HYPO,
            AblationLevel::AllRelations => a.relations = RelationSet::ALL,
        }
        a
    }
}
