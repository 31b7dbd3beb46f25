//! `sbia`: build indexes, annotate query images, evaluate and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use sbia_core::annotator::{self, ConceptLists, PhaseTimings, Query};
use sbia_core::config::{self, AblationLevel, EngineConfig};
use sbia_core::evaluation::percent;
use sbia_core::synth::{self, SynthConfig};
use sbia_core::{evaluate, fvec, ConceptSet, Lexicon, PredictionRule, Result};

#[derive(Parser)]
#[command(name = "sbia", version, about = "Search-based image annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the kNN index of every configured dataset.
    Build {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Annotate query images and write the ranked concepts.
    Annotate {
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        queries: QueryArgs,
        /// Output file (overrides the `output` config key).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score an annotation file against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic corpus plus a matching engine config.
    Generate(GenerateArgs),
    /// Annotate queries one at a time and report throughput and latencies.
    Bench {
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        queries: QueryArgs,
        /// Passes over the query set.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
}

/// Engine config file plus flags overriding its keys.
#[derive(Args, Clone, Default)]
struct EngineArgs {
    /// Engine config file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated relation types, `all` or `none`.
    #[arg(long)]
    relations: Option<String>,
    /// `exact` or `perm-prefix`.
    #[arg(long)]
    index_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl EngineArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("preset", self.preset.clone());
        push("k", self.k.map(|v| v.to_string()));
        push("s", self.s.map(|v| v.to_string()));
        push("n", self.n.map(|v| v.to_string()));
        push("m", self.m.map(|v| v.to_string()));
        push("relations", self.relations.clone());
        push("index.mode", self.index_mode.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                sbia_core::Error::InvalidParameter(format!("`--set {pair}`: expected KEY=VALUE"))
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn load(&self) -> Result<EngineConfig> {
        let overrides = self.overrides()?;
        match &self.config {
            Some(path) => EngineConfig::load(path, &overrides),
            None => EngineConfig::from_layers(&[], Path::new(""), &overrides, Path::new("")),
        }
    }
}

#[derive(Args, Clone)]
struct QueryArgs {
    /// Query feature vectors (FVEC).
    #[arg(long)]
    queries: PathBuf,
    /// Candidate concept list per query.
    #[arg(long)]
    candidates: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Annotation file to score (defaults to the `output` config key).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ground-truth concept list per image.
    #[arg(long)]
    truth: PathBuf,
    /// Concepts file (defaults to the `concepts` config key).
    #[arg(long)]
    concepts: Option<PathBuf>,
    /// Lexicon file (defaults to the `lexicon` config key).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Candidate lists; restricts concept-based counts to eligible images.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Query features; required with `--ablation`.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Which ranked entries count as predictions: all, positive, relative:<f>.
    #[arg(long)]
    prediction: Option<String>,
    /// Re-annotate at each semantic-analysis level and print one row per level.
    #[arg(long)]
    ablation: bool,
    /// Also print the per-concept table.
    #[arg(long)]
    per_concept: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory to write the corpus into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().rng_seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SynthConfig::default().num_concepts)]
    concepts: usize,
    #[arg(long, default_value_t = SynthConfig::default().refs_per_concept)]
    refs_per_concept: usize,
    #[arg(long, default_value_t = SynthConfig::default().num_queries)]
    queries: usize,
    #[arg(long, default_value_t = SynthConfig::default().cluster_noise_sigma)]
    sigma: f64,
    #[arg(long, default_value_t = SynthConfig::default().label_noise)]
    label_noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().lexicon_depth)]
    lexicon_depth: usize,
    #[arg(long, default_value_t = SynthConfig::default().candidates_per_query)]
    candidates_per_query: usize,
    /// Preset written into the generated engine config.
    #[arg(long, default_value = "decaf-style")]
    preset: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build { engine } => cmd_build(&engine),
        Command::Annotate {
            engine,
            queries,
            output,
        } => cmd_annotate(&engine, &queries, output),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Bench {
            engine,
            queries,
            repeat,
        } => cmd_bench(&engine, &queries, repeat),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_build(args: &EngineArgs) -> Result<()> {
    let cfg = args.load()?;
    config::check_inputs_exist(&cfg)?;
    if cfg.features.is_empty() {
        return Err(sbia_core::Error::InvalidParameter(
            "config lists no feature files".into(),
        ));
    }
    for (features, index_path) in cfg.features.iter().zip(cfg.index_paths()) {
        let start = Instant::now();
        let index = config::build_dataset_index(&cfg, features)?;
        let built = start.elapsed();
        index.save(&index_path)?;
        println!(
            "{}: {} vectors, dim {}, mode {}, built in {:.3}s",
            index_path.display(),
            index.len(),
            index.dim(),
            cfg.index_mode.as_str(),
            built.as_secs_f64()
        );
    }
    Ok(())
}

/// Loads query features and candidate lists; returns the load time too.
fn load_queries(args: &QueryArgs, dim: usize) -> Result<(Vec<Query>, Duration)> {
    let start = Instant::now();
    let (qdim, features) = fvec::read_fvec(&args.queries)?;
    if qdim != dim {
        return Err(sbia_core::Error::DimensionMismatch {
            expected: dim,
            actual: qdim,
        });
    }
    let candidates = ConceptLists::load(&args.candidates)?;
    let queries = annotator::assemble_queries(features, &candidates)?;
    Ok((queries, start.elapsed()))
}

fn cmd_annotate(args: &EngineArgs, qargs: &QueryArgs, output: Option<PathBuf>) -> Result<()> {
    let cfg = args.load()?;
    let output = output.or_else(|| cfg.output.clone()).ok_or_else(|| {
        sbia_core::Error::InvalidParameter("no output path (`--output` or `output` key)".into())
    })?;
    let (engine, report) = config::load_engine(&cfg)?;
    let (queries, feature_load) = load_queries(qargs, engine.dim())?;
    let batch = engine.annotate_batch(&queries)?;
    annotator::write_annotations(&output, &batch.annotations)?;

    let mut total = batch.total;
    total.feature_load = feature_load;
    let without_evidence = batch.annotations.iter().filter(|a| a.no_evidence).count();
    println!(
        "annotated {} queries -> {} (engine loaded in {:.3}s)",
        batch.annotations.len(),
        output.display(),
        report.elapsed.as_secs_f64()
    );
    if without_evidence > 0 {
        println!("{without_evidence} queries had no keyword evidence");
    }
    print_phase_totals(&total, batch.annotations.len());
    Ok(())
}

fn print_phase_totals(total: &PhaseTimings, queries: usize) {
    println!("phase            total_ms   per_query_ms");
    for (name, d) in PhaseTimings::PHASES.iter().zip(total.as_array()) {
        let ms = d.as_secs_f64() * 1e3;
        println!("{name:<15} {ms:>9.3} {:>14.4}", ms / queries.max(1) as f64);
    }
}

fn concept_set(args: &EvaluateArgs, cfg: &EngineConfig) -> Result<(Lexicon, ConceptSet)> {
    let lexicon_path = match &args.lexicon {
        Some(p) => p.clone(),
        None => cfg.lexicon_path()?.clone(),
    };
    let concepts_path = match &args.concepts {
        Some(p) => p.clone(),
        None => cfg.concepts_path()?.clone(),
    };
    let lexicon = Lexicon::load(&lexicon_path)?;
    let concepts = ConceptSet::load(&concepts_path, &lexicon)?;
    Ok((lexicon, concepts))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.engine.load()?;
    let rule = match &args.prediction {
        Some(p) => PredictionRule::parse(p)?,
        None => cfg.prediction,
    };
    let truth = ConceptLists::load(&args.truth)?;
    let candidates = args
        .candidates
        .as_ref()
        .map(ConceptLists::load)
        .transpose()?;

    if args.ablation {
        return run_ablation(args, &cfg, &truth, candidates.as_ref(), rule);
    }

    let (_, concepts) = concept_set(args, &cfg)?;
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| {
            sbia_core::Error::InvalidParameter(
                "no annotation file (`--output` or `output` key)".into(),
            )
        })?;
    let annotations = annotator::load_annotations(&output)?;
    let report = evaluate(&annotations, &truth, &concepts, candidates.as_ref(), rule)?;
    println!("prediction rule: {rule}");
    print!("{}", report.to_table());
    if args.per_concept {
        print!("{}", report.to_concept_table());
    }
    println!();
    print!("{}", report.to_key_values());
    Ok(())
}

fn run_ablation(
    args: &EvaluateArgs,
    cfg: &EngineConfig,
    truth: &ConceptLists,
    candidates: Option<&ConceptLists>,
    rule: PredictionRule,
) -> Result<()> {
    let missing =
        |what: &str| sbia_core::Error::InvalidParameter(format!("`--ablation` needs `--{what}`"));
    let qargs = QueryArgs {
        queries: args.queries.clone().ok_or_else(|| missing("queries"))?,
        candidates: args
            .candidates
            .clone()
            .ok_or_else(|| missing("candidates"))?,
    };
    let (mut engine, _) = config::load_engine(cfg)?;
    let (queries, _) = load_queries(&qargs, engine.dim())?;
    let base = engine.config.analysis.clone();

    println!("prediction rule: {rule}");
    let header: Vec<String> = ["MP-c", "MR-c", "MF-c", "MP-s", "MR-s", "MF-s", "MAP-s"]
        .iter()
        .map(|h| format!("{h:>6}"))
        .collect();
    println!("{:<48} {}", "level", header.join(" "));
    let mut kv = String::new();
    for (i, level) in AblationLevel::ALL.iter().enumerate() {
        engine.config.analysis = level.apply(&base);
        let batch = engine.annotate_batch(&queries)?;
        let report = evaluate(
            &batch.annotations,
            truth,
            &engine.concepts,
            candidates,
            rule,
        )?;
        let values: Vec<String> = report
            .headline()
            .iter()
            .map(|(_, v)| format!("{:>6.1}", percent(*v)))
            .collect();
        println!("{:<48} {}", level.label(), values.join(" "));
        for (k, v) in report.headline() {
            let key = k.to_lowercase().replace('-', "_");
            kv.push_str(&format!("level{}.{key}={v:.9}\n", i + 1));
        }
    }
    println!();
    print!("{kv}");
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let synth_cfg = SynthConfig {
        rng_seed: args.seed,
        dim: args.dim,
        num_concepts: args.concepts,
        refs_per_concept: args.refs_per_concept,
        num_queries: args.queries,
        cluster_noise_sigma: args.sigma,
        label_noise: args.label_noise,
        lexicon_depth: args.lexicon_depth,
        candidates_per_query: args.candidates_per_query,
        ..SynthConfig::default()
    };
    let corpus = synth::generate(&synth_cfg)?;

    let names = synth::SynthPaths::in_dir(Path::new(""));
    let file = |p: &Path| p.display().to_string();
    let pairs = vec![
        ("preset".to_string(), args.preset.clone()),
        ("dim".to_string(), args.dim.to_string()),
        ("seed".to_string(), args.seed.to_string()),
        ("features".to_string(), file(&names.features)),
        ("keywords".to_string(), file(&names.keywords)),
        ("lexicon".to_string(), file(&names.lexicon)),
        ("concepts".to_string(), file(&names.concepts)),
        ("output".to_string(), "annotations.tsv".to_string()),
    ];
    let cfg = EngineConfig::from_layers(&pairs, Path::new(""), &[], Path::new(""))?;
    let paths = corpus.write(&args.out, &cfg.to_text())?;
    println!(
        "wrote {} reference vectors, {} queries, {} concepts to {}",
        corpus.references.len(),
        corpus.queries.len(),
        corpus.concepts.len(),
        args.out.display()
    );
    println!("engine config: {}", paths.config.display());
    Ok(())
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[Duration], p: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn cmd_bench(args: &EngineArgs, qargs: &QueryArgs, repeat: usize) -> Result<()> {
    let cfg = args.load()?;
    let (engine, report) = config::load_engine(&cfg)?;
    let (queries, feature_load) = load_queries(qargs, engine.dim())?;
    if queries.is_empty() {
        return Err(sbia_core::Error::Empty("no queries to benchmark"));
    }
    let per_query_load = feature_load / queries.len() as u32;

    let mut samples: Vec<PhaseTimings> = Vec::with_capacity(queries.len() * repeat.max(1));
    let start = Instant::now();
    for _ in 0..repeat.max(1) {
        for q in &queries {
            let (_, mut t) = engine.annotate_timed(q)?;
            t.feature_load = per_query_load;
            samples.push(t);
        }
    }
    let wall = start.elapsed();

    println!(
        "engine: {} dataset(s), dim {}, index mode {}, k {}, loaded in {:.3}s",
        engine.datasets.len(),
        engine.dim(),
        cfg.index_mode.as_str(),
        cfg.k,
        report.elapsed.as_secs_f64()
    );
    println!(
        "queries: {} in {:.3}s single worker, {:.1} queries/second",
        samples.len(),
        wall.as_secs_f64(),
        samples.len() as f64 / wall.as_secs_f64()
    );
    println!("phase              p50_ms     p90_ms     p99_ms    mean_ms");
    for (i, name) in PhaseTimings::PHASES.iter().enumerate() {
        let mut ds: Vec<Duration> = samples.iter().map(|t| t.as_array()[i]).collect();
        ds.sort();
        let mean = ds.iter().sum::<Duration>() / ds.len() as u32;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        println!(
            "{name:<15} {:>9.4} {:>10.4} {:>10.4} {:>10.4}",
            ms(percentile(&ds, 50.0)),
            ms(percentile(&ds, 90.0)),
            ms(percentile(&ds, 99.0)),
            ms(mean)
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let ds: Vec<Duration> = (1..=10).map(Duration::from_millis).collect();
        assert_eq!(percentile(&ds, 50.0), Duration::from_millis(5));
        assert_eq!(percentile(&ds, 90.0), Duration::from_millis(9));
        assert_eq!(percentile(&ds, 99.0), Duration::from_millis(10));
        assert_eq!(percentile(&[], 50.0), Duration::ZERO);
    }

    #[test]
    fn flags_become_overrides() {
        let args = EngineArgs {
            k: Some(5),
            relations: Some("hypernym".into()),
            set: vec!["alpha = 0.3".into()],
            ..Default::default()
        };
        let cfg = args.load().unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.analysis.alpha, 0.3);
        assert!(EngineArgs {
            set: vec!["novalue".into()],
            ..Default::default()
        }
        .load()
        .is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
