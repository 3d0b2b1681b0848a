//! Argument handling and command dispatch for the `msrnn` binary.
//!
//! Run options come from flags and, optionally, a flat `key = value` file
//! given with `--config`. Flags win over the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use msrnn::{ModelConfig, PolicyKind, PolicySpec};

mod run;

pub use run::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: msrnn::Error,
    },
}

impl CliError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// The message squeezed onto one line, for stderr.
    pub fn one_line(&self) -> String {
        let s = self.to_string();
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for msrnn::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|e| CliError::Core {
            context: what.into(),
            source: e.into(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "msrnn", about = "Bounded multi-state decoding experiments on a toy transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Weight file written by `init-model`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Flat `key = value` run file; keys mirror the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Build a random toy model from this seed instead of loading weights.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Token ids, one per line.
    #[arg(long, global = true)]
    pub stream: Option<PathBuf>,
    /// Policy name, or `full` for the unbounded topline.
    #[arg(long, global = true)]
    pub policy: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub pin: Option<usize>,
    #[arg(long, global = true)]
    pub chunk_len: Option<usize>,
    #[arg(long, global = true)]
    pub remap: bool,
    /// Cut the stream to its first k tokens before decoding.
    #[arg(long, global = true)]
    pub truncate: bool,
    /// Also write retention traces.
    #[arg(long, global = true)]
    pub trace_out: bool,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Write a seeded random model to `<out-dir>/model.weights`.
    InitModel,
    /// Token-by-token perplexity.
    Perplexity,
    /// Perplexity from one masked pass per layer.
    PerplexityParallel,
    /// Greedy continuation of the stream.
    Generate {
        #[arg(long, default_value_t = 32)]
        max_steps: usize,
    },
    /// Replay a scripted attention trace through a policy.
    SimulateTrace {
        #[arg(long)]
        script: PathBuf,
    },
    /// Analyses over a retention trace CSV.
    Analyze {
        #[arg(value_enum)]
        kind: AnalyzeKind,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Head index, or `mean` for the per-layer head average.
        #[arg(long, default_value = "mean")]
        head: String,
        /// `position<TAB>tag` file.
        #[arg(long)]
        tags: Option<PathBuf>,
    },
    /// KV memory per sequence for a list of state sizes.
    MemoryReport {
        #[arg(long, default_value_t = 32)]
        layers: u64,
        #[arg(long, default_value_t = 32)]
        heads: u64,
        #[arg(long, default_value_t = 128)]
        head_dim: u64,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        state_sizes: Vec<u64>,
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
        /// Memory budget in bytes; adds the largest batch that fits.
        #[arg(long)]
        budget: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeKind {
    Retention,
    Lifetime,
    Tags,
    Recent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Weights(PathBuf),
    Random { config: ModelConfig, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: Option<ModelSource>,
    pub stream: Option<PathBuf>,
    /// `None` runs the unbounded topline.
    pub policy: Option<PolicySpec>,
    pub k: Option<usize>,
    pub chunk_len: Option<usize>,
    pub remap: bool,
    pub truncate: bool,
    pub out_dir: PathBuf,
    pub trace_out: bool,
    pub threads: Option<usize>,
}

const MODEL_KEYS: [&str; 8] = [
    "n_layers",
    "n_heads",
    "head_dim",
    "hidden_dim",
    "ff_dim",
    "vocab_size",
    "train_context_len",
    "rope_base",
];

const RUN_KEYS: [&str; 12] = [
    "model",
    "seed",
    "stream",
    "policy",
    "k",
    "pin",
    "chunk_len",
    "remap",
    "truncate",
    "trace_out",
    "out_dir",
    "threads",
];

/// Reads a run file: `key = value` per line, `#` comments, dashes in keys
/// treated as underscores.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).context(format!("reading {}", path.display()))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config("config", format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !RUN_KEYS.contains(&key.as_str()) && !MODEL_KEYS.contains(&key.as_str()) {
            return Err(CliError::config(&key, format!("unknown key on line {}", i + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(&key, "given twice"));
        }
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(field: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::config(field, format!("`{value}`: {e}")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::config(field, format!("`{value}` is not a boolean"))),
    }
}

/// Folds file values under the flags, then validates.
pub fn parse_config(cli: Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.common.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    build_config(cli.command, cli.common, &file)
}

pub fn build_config(
    command: Command,
    flags: CommonArgs,
    file: &BTreeMap<String, String>,
) -> Result<RunConfig, CliError> {
    let get = |key: &str| file.get(key).map(String::as_str);
    let opt_parse = |key: &str| -> Result<Option<usize>, CliError> {
        get(key).map(|v| parse_value(key, v)).transpose()
    };

    // A model source on the command line replaces the file's entirely.
    let (model_path, seed) = if flags.model.is_some() || flags.seed.is_some() {
        (flags.model, flags.seed)
    } else {
        (
            get("model").map(PathBuf::from),
            get("seed").map(|v| parse_value("seed", v)).transpose()?,
        )
    };
    let has_dims = MODEL_KEYS.iter().any(|k| file.contains_key(*k));
    let model = match (model_path, seed) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("model", "give either --model or --seed, not both"))
        }
        (Some(path), None) => {
            if has_dims {
                return Err(CliError::config(
                    "model",
                    "model dimensions in the run file only apply to --seed",
                ));
            }
            Some(ModelSource::Weights(path))
        }
        (None, Some(seed)) => Some(ModelSource::Random {
            config: model_config(file)?,
            seed,
        }),
        (None, None) => None,
    };

    let k = flags.k.map(Some).unwrap_or(opt_parse("k")?);
    let pin = flags.pin.map(Some).unwrap_or(opt_parse("pin")?);
    let policy_name = flags.policy.or_else(|| get("policy").map(str::to_string));
    let policy = match policy_name.as_deref() {
        None | Some("full") => {
            if pin.is_some() {
                return Err(CliError::config("pin", "only meaningful with a pinned policy"));
            }
            None
        }
        Some(name) => {
            let kind = PolicyKind::parse(name, pin).map_err(|e| CliError::config("policy", e.to_string()))?;
            let k = k.ok_or_else(|| CliError::config("k", format!("required for policy `{name}`")))?;
            Some(PolicySpec::new(kind, k).map_err(|e| CliError::config("policy", e.to_string()))?)
        }
    };

    let flag_or_file = |flag: bool, key: &str| -> Result<bool, CliError> {
        if flag {
            Ok(true)
        } else {
            get(key).map(|v| parse_bool(key, v)).transpose().map(|v| v.unwrap_or(false))
        }
    };
    let threads = flags.threads.map(Some).unwrap_or(opt_parse("threads")?);
    if threads == Some(0) {
        return Err(CliError::config("threads", "must be at least 1"));
    }

    let cfg = RunConfig {
        policy,
        k,
        stream: flags.stream.or_else(|| get("stream").map(PathBuf::from)),
        chunk_len: flags.chunk_len.map(Some).unwrap_or(opt_parse("chunk_len")?),
        remap: flag_or_file(flags.remap, "remap")?,
        truncate: flag_or_file(flags.truncate, "truncate")?,
        trace_out: flag_or_file(flags.trace_out, "trace_out")?,
        out_dir: flags
            .out_dir
            .or_else(|| get("out_dir").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".")),
        threads,
        model,
        command,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn model_config(file: &BTreeMap<String, String>) -> Result<ModelConfig, CliError> {
    let mut c = ModelConfig::toy();
    for key in MODEL_KEYS {
        let Some(v) = file.get(key) else { continue };
        match key {
            "n_layers" => c.n_layers = parse_value(key, v)?,
            "n_heads" => c.n_heads = parse_value(key, v)?,
            "head_dim" => c.head_dim = parse_value(key, v)?,
            "hidden_dim" => c.hidden_dim = parse_value(key, v)?,
            "ff_dim" => c.ff_dim = parse_value(key, v)?,
            "vocab_size" => c.vocab_size = parse_value(key, v)?,
            "train_context_len" => c.train_context_len = parse_value(key, v)?,
            _ => c.rope_base = parse_value(key, v)?,
        }
    }
    c.validate().map_err(|e| match e {
        msrnn::Error::InvalidConfig { field, reason } => CliError::config(field, reason),
        e => CliError::config("model", e.to_string()),
    })?;
    Ok(c)
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let needs_model = matches!(
            self.command,
            Command::InitModel | Command::Perplexity | Command::PerplexityParallel | Command::Generate { .. }
        );
        if needs_model && self.model.is_none() {
            return Err(CliError::config("model", "give --model or --seed"));
        }
        if self.command == Command::InitModel && !matches!(self.model, Some(ModelSource::Random { .. })) {
            return Err(CliError::config("seed", "init-model needs --seed"));
        }
        let needs_stream = matches!(
            self.command,
            Command::Perplexity | Command::PerplexityParallel | Command::Generate { .. }
        );
        if needs_stream && self.stream.is_none() {
            return Err(CliError::config("stream", "required for this command"));
        }
        if matches!(self.command, Command::Perplexity | Command::PerplexityParallel) {
            match self.chunk_len {
                None => return Err(CliError::config("chunk_len", "required for perplexity")),
                Some(0) => return Err(CliError::config("chunk_len", "must be at least 1")),
                Some(_) => {}
            }
        }
        if self.truncate && self.k.is_none() {
            return Err(CliError::config("truncate", "needs --k"));
        }
        if self.remap && self.command == Command::PerplexityParallel {
            return Err(CliError::config("remap", "not supported by the masked-parallel pass"));
        }
        if let Command::SimulateTrace { .. } = self.command {
            if self.policy.is_none() && self.k.is_some() {
                return Err(CliError::config("policy", "--k given without a policy"));
            }
        }
        if let Command::Analyze { kind, head, tags, .. } = &self.command {
            if head != "mean" && head.parse::<usize>().is_err() {
                return Err(CliError::config("head", format!("`{head}` is neither an index nor `mean`")));
            }
            if *kind == AnalyzeKind::Tags && tags.is_none() {
                return Err(CliError::config("tags", "required for `analyze tags`"));
            }
            if *kind == AnalyzeKind::Recent && self.k.is_none() {
                return Err(CliError::config("k", "required for `analyze recent`"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig, CliError> {
        let mut full = vec!["msrnn"];
        full.extend_from_slice(args);
        parse_config(Cli::try_parse_from(full).unwrap())
    }

    fn field(e: CliError) -> String {
        match e {
            CliError::Config { field, .. } => field,
            e => panic!("{e}"),
        }
    }

    #[test]
    fn accepts_tova_layer() {
        let c = cfg(&["perplexity", "--seed", "1", "--stream", "s", "--chunk-len", "8", "--policy", "tova-layer", "--k", "512"]).unwrap();
        assert_eq!(c.policy, Some(PolicySpec::new(PolicyKind::TovaLayer, 512).unwrap()));
    }

    #[test]
    fn rejects_pin_not_below_k() {
        let e = cfg(&["simulate-trace", "--script", "x", "--policy", "window+4", "--k", "4"]).unwrap_err();
        assert_eq!(field(e), "policy");
    }

    #[test]
    fn unknown_policy_lists_names() {
        let e = cfg(&["simulate-trace", "--script", "x", "--policy", "lru", "--k", "4"]).unwrap_err();
        assert!(e.to_string().contains("tova-layer"), "{e}");
    }

    #[test]
    fn model_source_exclusive() {
        let e = cfg(&["perplexity", "--seed", "1", "--model", "m", "--stream", "s", "--chunk-len", "4"]).unwrap_err();
        assert_eq!(field(e), "model");
        let e = cfg(&["perplexity", "--stream", "s", "--chunk-len", "4"]).unwrap_err();
        assert_eq!(field(e), "model");
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config_text("policy = window\nk = 8\nchunk-len = 16\nremap = true\n").unwrap();
        let flags = CommonArgs {
            seed: Some(3),
            k: Some(4),
            stream: Some("s".into()),
            ..CommonArgs::default()
        };
        let c = build_config(Command::Perplexity, flags, &file).unwrap();
        assert_eq!(c.policy, Some(PolicySpec::new(PolicyKind::Window, 4).unwrap()));
        assert_eq!(c.chunk_len, Some(16));
        assert!(c.remap);
    }

    #[test]
    fn file_model_dims_apply_to_seed() {
        let file = parse_config_text("seed = 2\nn_layers = 1\nvocab_size = 10\n").unwrap();
        let c = build_config(Command::InitModel, CommonArgs::default(), &file).unwrap();
        match c.model.unwrap() {
            ModelSource::Random { config, seed } => {
                assert_eq!((config.n_layers, config.vocab_size, seed), (1, 10, 2));
            }
            m => panic!("{m:?}"),
        }
    }

    #[test]
    fn file_errors_name_the_key() {
        assert_eq!(field(parse_config_text("colour = red").unwrap_err()), "colour");
        assert_eq!(field(parse_config_text("k = 1\nk = 2").unwrap_err()), "k");
        let file = parse_config_text("k = many").unwrap();
        assert_eq!(field(build_config(Command::InitModel, CommonArgs::default(), &file).unwrap_err()), "k");
    }

    #[test]
    fn odd_head_dim_rejected() {
        let file = parse_config_text("head_dim = 7\nhidden_dim = 28").unwrap();
        let flags = CommonArgs {
            seed: Some(1),
            ..CommonArgs::default()
        };
        assert_eq!(field(build_config(Command::InitModel, flags, &file).unwrap_err()), "head_dim");
    }

    #[test]
    fn one_line_messages() {
        let e = CliError::config("x", "a\nb");
        assert_eq!(e.one_line(), "config: x: a b");
    }
}
