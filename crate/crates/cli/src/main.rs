use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nec_core::corrector::{
    correct_batch, BeamWeighting, ContextEncoder, CorrectorConfig, DetectorKind, SemanticModel,
};
use nec_core::detection::BaselineDetectorConfig;
use nec_core::entity_store::{ingest_entities, load_descriptions, EntityCatalog};
use nec_core::evaluation::{
    build_homophone_set, evaluate, scaling_curve, scored_utterances, sweep, write_report_csv,
    write_scaling_csv, write_sweep_csv, Method, MetricReport,
};
use nec_core::phonetics::{load_lexicon, ToneMode};
use nec_core::records::{read_corrections, read_nbest, write_jsonl, NBestRecord};
use nec_core::semantic::{
    build_memory, build_reference_memory, load_context_vectors, load_memory, save_memory,
    EmbeddingMemory, MemoryRow,
};
use nec_core::NecError;

const DEFAULT_DIM: usize = 512;
const DEFAULT_SEED: u64 = 2024;

#[derive(Parser)]
#[command(
    name = "nec",
    version,
    about = "Named-entity correction for ASR n-best lists"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Correct the top-1 hypothesis of every utterance.
    Correct(CommonArgs),
    /// Score hypotheses against references.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output of `correct`; the top-1 hypotheses are scored when absent.
        #[arg(long)]
        hyp: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Write an embedding memory file.
    BuildMemory {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON lines `{"entity": str, "vector": [float]}` to import instead
        /// of embedding descriptions.
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// List utterances whose gold entity has a homophone in the catalog.
    HomophoneSet(CommonArgs),
    /// Corpus CER over a grid of alpha and top-k values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
        ks: Vec<usize>,
    },
    /// NE-Recall against catalog size, growing the catalog from `--nelist`.
    Scaling {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "50,200,1000")]
        sizes: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    External,
    Baseline,
    Gold,
}

#[derive(Clone, Copy, ValueEnum)]
enum BeamWeightArg {
    Softmax,
    Raw,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// N-best JSON lines.
    #[arg(long)]
    nbest: Option<PathBuf>,
    /// Entity list, one surface per line.
    #[arg(long)]
    nelist: Option<PathBuf>,
    /// Entity descriptions as JSON lines.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// Pronunciation lexicon (`char<TAB>syllable[,syllable...]`).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Embedding memory file.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Context vectors as JSON lines.
    #[arg(long)]
    context_vectors: Option<PathBuf>,
    /// key=value settings; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    nbest_size: Option<usize>,
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    #[arg(long)]
    no_rejection: bool,
    #[arg(long, value_enum)]
    beam_weights: Option<BeamWeightArg>,
    #[arg(long)]
    toneless: bool,
    #[arg(long)]
    normalize_embeddings: bool,
    /// Drop catalog entities without a description.
    #[arg(long)]
    require_descriptions: bool,
    /// Dimension of the reference embedder.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Input problems that map to exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Settings after merging flags, config file and defaults.
struct Settings {
    corrector: CorrectorConfig,
    toneless: bool,
    normalize_embeddings: bool,
    require_descriptions: bool,
    dim: usize,
    seed: u64,
    jobs: Option<usize>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("config: bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(format!("config: bad value {value:?} for {key}"))),
    }
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!(
                "{}:{}: expected key=value",
                path.display(),
                idx + 1
            )));
        };
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

impl CommonArgs {
    fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        let mut s = Settings {
            corrector: CorrectorConfig::default(),
            toneless: false,
            normalize_embeddings: false,
            require_descriptions: false,
            dim: DEFAULT_DIM,
            seed: DEFAULT_SEED,
            jobs: None,
        };
        let mut min_sim = BaselineDetectorConfig::default().min_sim;
        let mut detector = DetectorArg::External;
        for (k, v) in &file {
            match k.as_str() {
                "alpha" => s.corrector.alpha = parse_value(k, v)?,
                "topk" | "top_k" => s.corrector.top_k = parse_value(k, v)?,
                "nbest_size" => s.corrector.nbest_size = parse_value(k, v)?,
                "rejection" => s.corrector.rejection = parse_bool(k, v)?,
                "detector" => {
                    detector = DetectorArg::from_str(v, true)
                        .map_err(|_| invalid(format!("config: unknown detector {v:?}")))?
                }
                "beam_weights" => {
                    s.corrector.beam_weighting = match v.as_str() {
                        "softmax" => BeamWeighting::Softmax,
                        "raw" => BeamWeighting::Raw,
                        _ => return Err(invalid(format!("config: unknown beam weighting {v:?}"))),
                    }
                }
                "min_sim" => min_sim = parse_value(k, v)?,
                "toneless" => s.toneless = parse_bool(k, v)?,
                "normalize_embeddings" => s.normalize_embeddings = parse_bool(k, v)?,
                "require_descriptions" => s.require_descriptions = parse_bool(k, v)?,
                "dim" => s.dim = parse_value(k, v)?,
                "seed" => s.seed = parse_value(k, v)?,
                "jobs" => s.jobs = Some(parse_value(k, v)?),
                _ => return Err(invalid(format!("config: unknown key {k:?}"))),
            }
        }

        if let Some(a) = self.alpha {
            s.corrector.alpha = a;
        }
        if let Some(k) = self.topk {
            s.corrector.top_k = k;
        }
        if let Some(n) = self.nbest_size {
            s.corrector.nbest_size = n;
        }
        if self.no_rejection {
            s.corrector.rejection = false;
        }
        if let Some(w) = self.beam_weights {
            s.corrector.beam_weighting = match w {
                BeamWeightArg::Softmax => BeamWeighting::Softmax,
                BeamWeightArg::Raw => BeamWeighting::Raw,
            };
        }
        if let Some(d) = self.detector {
            detector = d;
        }
        s.corrector.detector = match detector {
            DetectorArg::External => DetectorKind::External,
            DetectorArg::Baseline => DetectorKind::Baseline(BaselineDetectorConfig {
                min_sim,
                ..Default::default()
            }),
            DetectorArg::Gold => DetectorKind::Gold,
        };
        s.toneless |= self.toneless;
        s.normalize_embeddings |= self.normalize_embeddings;
        s.require_descriptions |= self.require_descriptions;
        if let Some(d) = self.dim {
            s.dim = d;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if self.jobs.is_some() {
            s.jobs = self.jobs;
        }

        s.corrector.validate()?;
        if s.dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        if s.jobs == Some(0) {
            return Err(invalid("jobs must be positive"));
        }
        Ok(s)
    }

    fn required<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| invalid(format!("--{flag} is required for this command")))
    }

    fn records(&self) -> Result<Vec<NBestRecord>> {
        let path = self.required(&self.nbest, "nbest")?;
        read_nbest(open(path)?).with_context(|| format!("reading {}", path.display()))
    }

    fn catalog(&self, s: &Settings) -> Result<EntityCatalog> {
        let lex_path = self.required(&self.lexicon, "lexicon")?;
        let tone = if s.toneless {
            ToneMode::Toneless
        } else {
            ToneMode::WithTone
        };
        let lexicon = load_lexicon(open(lex_path)?, tone)
            .with_context(|| format!("reading {}", lex_path.display()))?;
        let ne_path = self.required(&self.nelist, "nelist")?;
        let mut catalog = ingest_entities(open(ne_path)?, Arc::new(lexicon))
            .with_context(|| format!("reading {}", ne_path.display()))?;
        if catalog.duplicates_dropped() > 0 {
            eprintln!(
                "warning: {} duplicate entities dropped",
                catalog.duplicates_dropped()
            );
        }
        if let Some(p) = &self.descriptions {
            load_descriptions(&mut catalog, open(p)?)
                .with_context(|| format!("reading {}", p.display()))?;
        }
        if s.require_descriptions {
            catalog = catalog.retain_described();
        }
        Ok(catalog)
    }

    /// Entity memory: a memory file bound to the catalog, or the reference
    /// embedder over descriptions. None without either.
    fn memory(&self, catalog: &EntityCatalog, s: &Settings) -> Result<Option<EmbeddingMemory>> {
        let memory = if let Some(p) = &self.memory {
            let raw = load_memory(BufReader::new(
                File::open(p).with_context(|| format!("opening {}", p.display()))?,
            ))
            .with_context(|| format!("reading {}", p.display()))?;
            let (bound, unknown) = raw.bind(catalog);
            if !unknown.is_empty() {
                eprintln!(
                    "warning: {} memory rows are not in the catalog",
                    unknown.len()
                );
            }
            Some(bound)
        } else if catalog.described_count() > 0 {
            Some(build_reference_memory(catalog, s.dim, s.seed)?)
        } else {
            None
        };
        Ok(match memory {
            Some(m) if s.normalize_embeddings => Some(m.normalized()),
            m => m,
        })
    }

    fn encoder(&self, memory: Option<&EmbeddingMemory>, s: &Settings) -> Result<ContextEncoder> {
        let dim = memory.map_or(s.dim, EmbeddingMemory::dim);
        match &self.context_vectors {
            Some(p) => Ok(ContextEncoder::Precomputed(
                load_context_vectors(open(p)?, dim)
                    .with_context(|| format!("reading {}", p.display()))?,
            )),
            None => Ok(ContextEncoder::Reference { dim, seed: s.seed }),
        }
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn install_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn cmd_correct(args: &CommonArgs) -> Result<()> {
    let s = args.settings()?;
    install_jobs(s.jobs)?;
    let records = args.records()?;
    let catalog = args.catalog(&s)?;
    let memory = args.memory(&catalog, &s)?;
    let encoder = args.encoder(memory.as_ref(), &s)?;
    let semantic = memory.as_ref().map(|m| SemanticModel {
        memory: m,
        encoder: &encoder,
    });
    let corrected = correct_batch(&records, &catalog, semantic, &s.corrector)?;
    let outputs: Vec<_> = corrected.iter().map(|u| u.to_output(&catalog)).collect();
    let mut out = args.writer()?;
    write_jsonl(&mut out, &outputs)?;
    out.flush()?;
    Ok(())
}

fn cmd_evaluate(args: &CommonArgs, hyp: Option<&Path>, format: ReportFormat) -> Result<()> {
    let s = args.settings()?;
    let records = args.records()?;
    let hyps: Option<BTreeMap<String, String>> = match hyp {
        Some(p) => Some(
            read_corrections(open(p)?)
                .with_context(|| format!("reading {}", p.display()))?
                .into_iter()
                .map(|c| (c.utt_id, c.corrected))
                .collect(),
        ),
        None => None,
    };
    let scored = scored_utterances(&records, hyps.as_ref())?;
    let mut rows: Vec<(String, MetricReport)> = vec![("all".into(), evaluate(&scored)?)];
    if args.nelist.is_some() {
        let catalog = args.catalog(&s)?;
        let subset: Vec<_> = build_homophone_set(&scored, &catalog)
            .into_iter()
            .cloned()
            .collect();
        rows.push(("homophone".into(), evaluate(&subset)?));
    }
    let mut out = args.writer()?;
    match format {
        ReportFormat::Csv => write_report_csv(&mut out, &rows)?,
        ReportFormat::Jsonl => {
            for (name, report) in &rows {
                let mut v = serde_json::to_value(report)?;
                v["system"] = serde_json::Value::String(name.clone());
                writeln!(out, "{v}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_build_memory(args: &CommonArgs, vectors: Option<&Path>) -> Result<()> {
    let s = args.settings()?;
    let out_path = args.required(&args.output, "output")?;
    let memory = match vectors {
        Some(p) => import_vectors(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let catalog = args.catalog(&s)?;
            if catalog.described_count() == 0 {
                return Err(invalid("no entity has a description; pass --descriptions"));
            }
            build_reference_memory(&catalog, s.dim, s.seed)?
        }
    };
    let memory = if s.normalize_embeddings {
        memory.normalized()
    } else {
        memory
    };
    let mut out = BufWriter::new(
        File::create(out_path).with_context(|| format!("creating {}", out_path.display()))?,
    );
    save_memory(&memory, &mut out)?;
    out.flush()?;
    eprintln!("wrote {} rows of dimension {}", memory.len(), memory.dim());
    Ok(())
}

#[derive(serde::Deserialize)]
struct VectorRecord {
    entity: String,
    vector: Vec<f32>,
}

fn import_vectors<R: BufRead>(source: R) -> Result<EmbeddingMemory> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| NecError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err(NecError::Parse {
                line: idx + 1,
                message: format!(
                    "entity {:?}: expected {d} components, got {}",
                    rec.entity,
                    rec.vector.len()
                ),
            }
            .into());
        }
        rows.push(MemoryRow {
            id: rows.len() as u32,
            surface: rec.entity,
            vector: rec.vector,
        });
    }
    Ok(build_memory(dim.unwrap_or(0), rows)?)
}

fn cmd_homophone_set(args: &CommonArgs) -> Result<()> {
    let s = args.settings()?;
    let records = args.records()?;
    let catalog = args.catalog(&s)?;
    let scored = scored_utterances(&records, None)?;
    let mut out = args.writer()?;
    for u in build_homophone_set(&scored, &catalog) {
        writeln!(out, "{}", u.utt_id)?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_sweep(args: &CommonArgs, alphas: &[f64], ks: &[usize]) -> Result<()> {
    let s = args.settings()?;
    install_jobs(s.jobs)?;
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(invalid(format!("alpha {a} outside [0, 1]")));
        }
    }
    if ks.contains(&0) {
        return Err(invalid("top-k values must be positive"));
    }
    let records = args.records()?;
    let catalog = args.catalog(&s)?;
    let memory = args.memory(&catalog, &s)?;
    let encoder = args.encoder(memory.as_ref(), &s)?;
    let semantic = memory.as_ref().map(|m| SemanticModel {
        memory: m,
        encoder: &encoder,
    });
    let rows = sweep(&records, &catalog, semantic, &s.corrector, alphas, ks)?;
    let mut out = args.writer()?;
    write_sweep_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn cmd_scaling(args: &CommonArgs, sizes: &[usize]) -> Result<()> {
    let s = args.settings()?;
    install_jobs(s.jobs)?;
    let records = args.records()?;
    let pool = args.catalog(&s)?;
    let memory = args.memory(&pool, &s)?;
    let encoder = args.encoder(memory.as_ref(), &s)?;
    let methods = [
        Method {
            label: "phonetic".into(),
            config: CorrectorConfig {
                alpha: 1.0,
                ..s.corrector.clone()
            },
            semantic: false,
        },
        Method {
            label: "fused".into(),
            config: s.corrector.clone(),
            semantic: true,
        },
    ];
    let points = scaling_curve(
        &records,
        &pool,
        memory.as_ref(),
        &encoder,
        sizes,
        &methods,
        s.seed,
    )?;
    let mut out = args.writer()?;
    write_scaling_csv(&mut out, &points)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Correct(args) => cmd_correct(&args),
        Command::Evaluate {
            common,
            hyp,
            format,
        } => cmd_evaluate(&common, hyp.as_deref(), format),
        Command::BuildMemory { common, vectors } => cmd_build_memory(&common, vectors.as_deref()),
        Command::HomophoneSet(args) => cmd_homophone_set(&args),
        Command::Sweep { common, alphas, ks } => cmd_sweep(&common, &alphas, &ks),
        Command::Scaling { common, sizes } => cmd_scaling(&common, &sizes),
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Invalid>()
            || matches!(
                e.downcast_ref::<NecError>(),
                Some(
                    NecError::Parse { .. }
                        | NecError::NotFound(_)
                        | NecError::InvalidSpan { .. }
                        | NecError::Config(_)
                        | NecError::Dimension { .. }
                        | NecError::Invalid(_)
                        | NecError::Format(_)
                        | NecError::Json(_)
                )
            )
            || e.downcast_ref::<io::Error>()
                .is_some_and(|io| io.kind() == io::ErrorKind::InvalidData)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(
            &cfg,
            "# comment\nalpha = 0.3\ntopk=4\nrejection=false\ndetector=gold\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(cfg),
            alpha: Some(0.9),
            ..Default::default()
        };
        let s = args.settings().unwrap();
        assert_eq!(s.corrector.alpha, 0.9);
        assert_eq!(s.corrector.top_k, 4);
        assert!(!s.corrector.rejection);
        assert_eq!(s.corrector.detector, DetectorKind::Gold);
        assert_eq!(s.corrector.nbest_size, 10);
    }

    #[test]
    fn bad_settings_are_validation_errors() {
        let args = CommonArgs {
            alpha: Some(1.5),
            ..Default::default()
        };
        assert!(is_validation(&args.settings().err().unwrap()));

        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "colour=blue\n").unwrap();
        let args = CommonArgs {
            config: Some(cfg),
            ..Default::default()
        };
        assert!(is_validation(&args.settings().err().unwrap()));
    }

    #[test]
    fn imports_vectors() {
        let src = "{\"entity\":\"a\",\"vector\":[1,0]}\n{\"entity\":\"b\",\"vector\":[0,1]}\n";
        let m = import_vectors(src.as_bytes()).unwrap();
        assert_eq!((m.len(), m.dim()), (2, 2));
        let bad = "{\"entity\":\"a\",\"vector\":[1,0]}\n{\"entity\":\"b\",\"vector\":[0]}\n";
        let err = import_vectors(bad.as_bytes()).unwrap_err();
        assert!(is_validation(&err));
        assert!(err.to_string().contains("line 2"));
    }
}
