//! Execution modes: sequential decoding, masked-parallel evaluation and
//! scripted policy simulation, plus perplexity and greedy generation.

mod parallel;
mod script;
mod sequential;

use std::io::{BufRead, Write};

pub use parallel::{masked_parallel_perplexity, masked_parallel_run, static_mask_row};
pub use script::{trace_driven_simulate, ScriptedTrace, SCRIPT_HEADER};
pub use sequential::{generate, sequential_perplexity, sequential_run, Session};

use crate::error::{Error, Result};
use crate::fmt::fmt_g6;
use crate::trace::RetentionTrace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<u32>,
    pub chunk_len: usize,
}

impl TokenStream {
    pub fn new(tokens: Vec<u32>, chunk_len: usize) -> Result<Self> {
        if chunk_len == 0 {
            return Err(Error::InvalidConfig {
                field: "chunk_len",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self { tokens, chunk_len })
    }

    /// Parses one decimal token id per line; blank lines are skipped.
    pub fn read<R: BufRead>(r: R, chunk_len: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            tokens.push(line.parse().map_err(|e| Error::Parse {
                line: i + 1,
                reason: format!("token id `{line}`: {e}"),
            })?);
        }
        Self::new(tokens, chunk_len)
    }

    pub fn write<W: Write>(tokens: &[u32], mut w: W) -> Result<()> {
        for t in tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab_size }),
            None => Ok(()),
        }
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks(self.chunk_len)
    }

    /// Keeps only the first `k` tokens.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            tokens: self.tokens[..k.min(self.tokens.len())].to_vec(),
            chunk_len: self.chunk_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkReport {
    /// NLL of tokens `1..len`, each predicted from the logits of the
    /// previous step.
    pub token_nll: Vec<f64>,
}

impl ChunkReport {
    pub fn nll_sum(&self) -> f64 {
        self.token_nll.iter().sum()
    }

    pub fn token_count(&self) -> usize {
        self.token_nll.len()
    }

    pub fn perplexity(&self) -> f64 {
        (self.nll_sum() / self.token_count() as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityReport {
    pub chunks: Vec<ChunkReport>,
}

pub const CHUNK_CSV_HEADER: &str = "chunk,nll_sum,token_count,perplexity";

impl PerplexityReport {
    pub fn total_nll(&self) -> f64 {
        self.chunks.iter().map(ChunkReport::nll_sum).sum()
    }

    pub fn token_count(&self) -> usize {
        self.chunks.iter().map(ChunkReport::token_count).sum()
    }

    pub fn perplexity(&self) -> Result<f64> {
        let n = self.token_count();
        if n == 0 {
            return Err(Error::Empty("no predicted tokens"));
        }
        Ok((self.total_nll() / n as f64).exp())
    }

    /// Every chunk's per-token NLLs, concatenated.
    pub fn token_nll(&self) -> Vec<f64> {
        self.chunks.iter().flat_map(|c| c.token_nll.iter().copied()).collect()
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{{\"total_nll\": {}, \"token_count\": {}, \"perplexity\": {}}}",
            fmt_g6(self.total_nll()),
            self.token_count(),
            fmt_g6(self.perplexity()?)
        )?;
        Ok(())
    }

    pub fn write_chunks_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHUNK_CSV_HEADER}")?;
        for (i, c) in self.chunks.iter().enumerate() {
            let ppl = if c.token_count() == 0 {
                String::new()
            } else {
                fmt_g6(c.perplexity())
            };
            writeln!(w, "{i},{},{},{ppl}", fmt_g6(c.nll_sum()), c.token_count())?;
        }
        Ok(())
    }
}

/// A perplexity report and, when requested, one retention trace per chunk.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: PerplexityReport,
    pub traces: Vec<RetentionTrace>,
}
