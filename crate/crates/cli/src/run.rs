use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use msrnn::analysis::{
    lifetime_by_tag, memory_report, recent_proportion, retention_matrix, token_lifetime,
    write_lifetimes_csv, write_memory_csv, write_tag_table_csv, HeadSelect, MemoryDims, TagFile,
};
use msrnn::eval::{
    generate, masked_parallel_run, sequential_run, trace_driven_simulate, EvalOutcome,
    ScriptedTrace, TokenStream,
};
use msrnn::weights_io::{encode, load_weights};
use msrnn::{fmt_g6, init_random_model, Model, PositionMode, RetentionTrace};

use crate::{AnalyzeKind, CliError, Command, Context, ModelSource, RunConfig};

/// Executes a validated config. Each command computes everything first and
/// then writes its files, so a failing run leaves no partial outputs behind
/// from that run.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config("threads", e.to_string()))?;
    let files = pool.install(|| produce(cfg))?;
    fs::create_dir_all(&cfg.out_dir).context(format!("creating {}", cfg.out_dir.display()))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = cfg.out_dir.join(name);
        fs::write(&path, bytes).context(format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

type Outputs = Vec<(String, Vec<u8>)>;

fn produce(cfg: &RunConfig) -> Result<Outputs, CliError> {
    match &cfg.command {
        Command::InitModel => {
            let Some(ModelSource::Random { config, seed }) = &cfg.model else {
                unreachable!("validated")
            };
            let weights = init_random_model(config, *seed).context("initializing model")?;
            let bytes = encode(config, &weights).context("encoding weights")?;
            Ok(vec![("model.weights".into(), bytes)])
        }
        Command::Perplexity | Command::PerplexityParallel => {
            let model = load_model(cfg)?;
            let stream = load_stream(cfg, cfg.chunk_len.expect("validated"))?;
            let outcome = if cfg.command == Command::Perplexity {
                sequential_run(&model, &stream, cfg.policy, cfg.remap, cfg.trace_out)
            } else {
                masked_parallel_run(&model, &stream, cfg.policy, cfg.trace_out)
            }
            .context("evaluating")?;
            perplexity_outputs(outcome)
        }
        Command::Generate { max_steps } => {
            let model = load_model(cfg)?;
            let prompt = load_stream(cfg, usize::MAX)?;
            let positions = if cfg.remap {
                PositionMode::Remapped
            } else {
                PositionMode::Original
            };
            let out = generate(&model, &prompt.tokens, *max_steps, cfg.policy, positions)
                .context("generating")?;
            let mut bytes = Vec::new();
            TokenStream::write(&out, &mut bytes).context("formatting tokens")?;
            Ok(vec![("generated.txt".into(), bytes)])
        }
        Command::SimulateTrace { script } => {
            let script = ScriptedTrace::read_csv(open(script)?).context(format!("reading {}", script.display()))?;
            let trace = trace_driven_simulate(&script, cfg.policy).context("simulating")?;
            Ok(vec![("trace.csv".into(), trace_bytes(&trace)?)])
        }
        Command::Analyze {
            kind,
            trace,
            layer,
            head,
            tags,
        } => {
            let path = trace;
            let trace = RetentionTrace::read_csv(open(path)?).context(format!("reading {}", path.display()))?;
            analyze(cfg, *kind, &trace, *layer, head, tags.as_deref())
        }
        Command::MemoryReport {
            layers,
            heads,
            head_dim,
            state_sizes,
            bytes_per_element,
            budget,
        } => {
            let dims = MemoryDims {
                n_layers: *layers,
                n_heads: *heads,
                head_dim: *head_dim,
            };
            let rows = state_sizes
                .iter()
                .map(|&s| memory_report(dims, s, *bytes_per_element, *budget))
                .collect::<msrnn::Result<Vec<_>>>()
                .context("memory report")?;
            let mut bytes = Vec::new();
            write_memory_csv(&rows, &mut bytes).context("formatting")?;
            Ok(vec![("memory.csv".into(), bytes)])
        }
    }
}

fn analyze(
    cfg: &RunConfig,
    kind: AnalyzeKind,
    trace: &RetentionTrace,
    layer: usize,
    head: &str,
    tags: Option<&Path>,
) -> Result<Outputs, CliError> {
    let mut out = Vec::new();
    match kind {
        AnalyzeKind::Retention => {
            let select = match head {
                "mean" => HeadSelect::Mean,
                h => HeadSelect::Head(h.parse().expect("validated")),
            };
            let m = retention_matrix(trace, layer, select).context("retention matrix")?;
            let (mut csv, mut pgm) = (Vec::new(), Vec::new());
            m.write_csv(&mut csv).context("formatting")?;
            m.write_pgm(&mut pgm).context("formatting")?;
            out.push(("retention.csv".into(), csv));
            out.push(("retention.pgm".into(), pgm));
        }
        AnalyzeKind::Lifetime => {
            let rows = token_lifetime(trace).context("lifetimes")?;
            let mut csv = Vec::new();
            write_lifetimes_csv(&rows, &mut csv).context("formatting")?;
            out.push(("lifetimes.csv".into(), csv));
        }
        AnalyzeKind::Tags => {
            let path = tags.expect("validated");
            let tags = TagFile::read_tsv(open(path)?).context(format!("reading {}", path.display()))?;
            let rows = lifetime_by_tag(trace, &tags).context("tag lifetimes")?;
            let mut csv = Vec::new();
            write_tag_table_csv(&rows, &mut csv).context("formatting")?;
            out.push(("tags.csv".into(), csv));
        }
        AnalyzeKind::Recent => {
            let k = cfg.k.expect("validated");
            let r = recent_proportion(trace, k).context("recent proportion")?;
            let csv = format!("k,recent_proportion\n{k},{}\n", fmt_g6(r));
            out.push(("recent.csv".into(), csv.into_bytes()));
        }
    }
    Ok(out)
}

fn perplexity_outputs(outcome: EvalOutcome) -> Result<Outputs, CliError> {
    let (mut summary, mut chunks) = (Vec::new(), Vec::new());
    outcome.report.write_summary(&mut summary).context("formatting")?;
    outcome.report.write_chunks_csv(&mut chunks).context("formatting")?;
    let mut out = vec![("summary.json".to_string(), summary), ("chunks.csv".to_string(), chunks)];
    for (i, trace) in outcome.traces.iter().enumerate() {
        out.push((format!("trace_chunk{i}.csv"), trace_bytes(trace)?));
    }
    Ok(out)
}

fn trace_bytes(trace: &RetentionTrace) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    trace.write_csv(&mut bytes).context("formatting trace")?;
    Ok(bytes)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).context(format!("opening {}", path.display()))?))
}

fn load_model(cfg: &RunConfig) -> Result<Model, CliError> {
    match cfg.model.as_ref().expect("validated") {
        ModelSource::Weights(path) => {
            let (config, weights) = load_weights(path).context(format!("loading {}", path.display()))?;
            Model::new(config, weights).context("building model")
        }
        ModelSource::Random { config, seed } => Model::random(config.clone(), *seed).context("building model"),
    }
}

fn load_stream(cfg: &RunConfig, chunk_len: usize) -> Result<TokenStream, CliError> {
    let path = cfg.stream.as_ref().expect("validated");
    let stream = TokenStream::read(open(path)?, chunk_len).context(format!("reading {}", path.display()))?;
    Ok(match (cfg.truncate, cfg.k) {
        (true, Some(k)) => stream.truncated(k),
        _ => stream,
    })
}
